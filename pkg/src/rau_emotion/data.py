"""Image decoding, resizing, patch augmentation, manifests and synthetic data.

Manifest files are UTF-8 text, tab-separated, one record per line::

    #classes<TAB>anger<TAB>sadness<TAB>surprise<TAB>happiness<TAB>disgust<TAB>fear<TAB>neutral
    images/anger_000.pgm<TAB>anger<TAB>train
    ...

The split column is ``train``, ``test`` or ``unassigned``. Relative paths are
resolved against the directory holding the manifest.
"""

import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import DTYPE, DimensionError

CLASS_NAMES = ("anger", "sadness", "surprise", "happiness", "disgust", "fear", "neutral")
CLASS_ABBREVS = ("AN", "SA", "SU", "HA", "DI", "FE", "NE")
SPLITS = ("train", "test", "unassigned")

IMAGE_SIZE = 64
PATCH_SIZE = 48
# round(linspace(0, 16, 4)): four evenly spaced crop origins along each axis.
PATCH_OFFSETS = (0, 5, 11, 16)

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class DecodeError(ValueError):
    """Image bytes could not be decoded."""


class ManifestError(ValueError):
    """A manifest file or record is malformed."""


def worker_count():
    """Worker threads allowed by ``RAU_EMOTION_THREADS`` (0 or unset = auto)."""
    raw = os.environ.get("RAU_EMOTION_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"RAU_EMOTION_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("RAU_EMOTION_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


# ---------------------------------------------------------------- decoding

def _pgm_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, i = [], 2
    while len(tokens) < count:
        if i >= len(data):
            raise DecodeError("truncated PGM header")
        ch = data[i:i + 1]
        if ch == b"#":
            nl = data.find(b"\n", i)
            if nl < 0:
                raise DecodeError("truncated PGM header")
            i = nl + 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def decode_pgm(data):
    tokens, start = _pgm_tokens(data, 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DecodeError(f"bad PGM header values {tokens}") from None
    if width < 1 or height < 1:
        raise DecodeError(f"bad PGM dimensions {width}x{height}")
    if maxval != 255:
        raise DecodeError(f"only 8-bit PGM (maxval 255) is supported, got maxval {maxval}")
    raster = data[start:start + width * height]
    if len(raster) < width * height:
        raise DecodeError(
            f"truncated PGM raster: expected {width * height} bytes, got {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw, width, height):
    stride = width
    out = np.zeros((height, width), dtype=np.uint8)
    prev = np.zeros(width, dtype=np.int32)
    pos = 0
    for y in range(height):
        ftype = raw[pos]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=pos + 1).astype(np.int32)
        pos += stride + 1
        if ftype == 0:
            cur = line
        elif ftype == 1:
            cur = np.cumsum(line) % 256
        elif ftype == 2:
            cur = (line + prev) % 256
        elif ftype in (3, 4):
            cur = np.zeros(width, dtype=np.int32)
            for x in range(width):
                left = cur[x - 1] if x else 0
                if ftype == 3:
                    cur[x] = (line[x] + (left + prev[x]) // 2) % 256
                else:
                    upleft = prev[x - 1] if x else 0
                    cur[x] = (line[x] + _paeth(left, prev[x], upleft)) % 256
        else:
            raise DecodeError(f"bad PNG filter type {ftype} on row {y}")
        out[y] = cur
        prev = cur
    return out


def decode_png(data):
    if not data.startswith(_PNG_SIGNATURE):
        raise DecodeError("missing PNG signature")
    pos, header, idat = 8, None, []
    while True:
        if pos + 8 > len(data):
            raise DecodeError("truncated PNG stream (no IEND chunk)")
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + length]
        if len(body) < length or pos + 12 + length > len(data):
            raise DecodeError(f"truncated PNG chunk {ctype!r}")
        pos += 12 + length
        if ctype == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"IDAT":
            idat.append(body)
        elif ctype == b"IEND":
            break
    if header is None:
        raise DecodeError("PNG has no IHDR chunk")
    width, height, depth, color, _, _, interlace = header
    if depth != 8:
        raise DecodeError(f"only 8-bit PNG is supported, got bit depth {depth}")
    if color != 0:
        raise DecodeError(f"only grayscale PNG (color type 0) is supported, got {color}")
    if interlace:
        raise DecodeError("interlaced PNG is not supported")
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise DecodeError(f"corrupt PNG image data: {exc}") from None
    if len(raw) < height * (width + 1):
        raise DecodeError("truncated PNG image data")
    return _unfilter(raw, width, height)


def decode_image(data):
    """Decode a binary PGM (P5) or 8-bit grayscale PNG to floats in [0, 1]."""
    if not data:
        raise DecodeError("empty image stream")
    if data.startswith(b"P5"):
        pixels = decode_pgm(data)
    elif data.startswith(_PNG_SIGNATURE[:4]):
        pixels = decode_png(data)
    else:
        raise DecodeError("unsupported image format (expected binary PGM or PNG)")
    return pixels.astype(DTYPE) / DTYPE(255.0)


def to_bytes8(img):
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255), 0, 255).astype(np.uint8)


def encode_pgm(img):
    pixels = to_bytes8(img)
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def encode_png(img):
    pixels = to_bytes8(img)
    h, w = pixels.shape

    def chunk(ctype, body):
        return (struct.pack(">I", len(body)) + ctype + body
                + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF))

    raw = b"".join(b"\x00" + row.tobytes() for row in pixels)
    return (_PNG_SIGNATURE + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))


def read_image(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DecodeError(f"{path}: {exc.strerror or exc}") from None
    try:
        return decode_image(data)
    except DecodeError as exc:
        raise DecodeError(f"{path}: {exc}") from None


# ------------------------------------------------------------ geometry

def resize_bilinear(img, out_h, out_w):
    """Bilinear resize with corner-aligned sampling (corners map to corners)."""
    img = np.asarray(img, dtype=DTYPE)
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"target size must be positive, got {out_h}x{out_w}")
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()

    def coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = coords(h, out_h)
    x0, x1, fx = coords(w, out_w)
    src = img.astype(np.float64)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    # keep within the source range despite rounding
    return np.clip(out, src.min(), src.max()).astype(DTYPE)


def extract_patches(img):
    """All 16 48x48 crops of a 64x64 image, row-major over ``PATCH_OFFSETS``."""
    img = np.asarray(img, dtype=DTYPE)
    if img.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise DimensionError(f"patch extraction needs a 64x64 image, got {img.shape}")
    return np.stack([img[y:y + PATCH_SIZE, x:x + PATCH_SIZE]
                     for y in PATCH_OFFSETS for x in PATCH_OFFSETS])


# ------------------------------------------------------------ manifests

@dataclass(frozen=True)
class Record:
    path: str
    label: str
    split: str = "unassigned"


@dataclass
class DatasetManifest:
    records: list
    class_names: tuple = CLASS_NAMES
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        if self.class_names != CLASS_NAMES:
            raise ManifestError(
                f"class names must be {list(CLASS_NAMES)} in that order, got {list(self.class_names)}")
        for rec in self.records:
            if rec.label not in self.class_names:
                raise ManifestError(f"{rec.path}: unknown label {rec.label!r}")
            if rec.split not in SPLITS:
                raise ManifestError(f"{rec.path}: unknown split {rec.split!r}")

    def select(self, split):
        return [r for r in self.records if r.split == split]

    def label_index(self, label):
        return self.class_names.index(label)

    def resolve(self, rec):
        p = Path(rec.path)
        return p if p.is_absolute() else self.root / p


def read_manifest(path):
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror or exc}") from None
    if not lines or not lines[0].startswith("#classes\t"):
        raise ManifestError(f"{path}: missing '#classes' header line")
    names = lines[0].split("\t")[1:]
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 tab-separated fields")
        records.append(Record(*parts))
    return DatasetManifest(records, tuple(names), path.parent)


def format_manifest(manifest):
    lines = ["\t".join(("#classes",) + manifest.class_names)]
    lines.extend(f"{r.path}\t{r.label}\t{r.split}" for r in manifest.records)
    return "\n".join(lines) + "\n"


def write_manifest(manifest, path):
    Path(path).write_text(format_manifest(manifest), encoding="utf-8")


def split_dataset(manifest, train_fraction, seed):
    """Stratified train/test split.

    Each class sends ``floor(n * fraction + 1/2)`` records to train (at least
    one record on each side). Record order is preserved.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train fraction must be in (0, 1), got {train_fraction}")
    by_class = {name: [] for name in manifest.class_names}
    for i, rec in enumerate(manifest.records):
        by_class[rec.label].append(i)
    rng = np.random.default_rng(seed)
    train = set()
    for name in manifest.class_names:
        idx = by_class[name]
        if not idx:
            continue
        if len(idx) < 2:
            raise ValueError(f"class {name!r} has {len(idx)} record(s); at least 2 are needed")
        n_train = int(np.floor(len(idx) * train_fraction + 0.5))
        n_train = min(max(n_train, 1), len(idx) - 1)
        chosen = rng.permutation(len(idx))[:n_train]
        train.update(idx[j] for j in chosen)
    records = [replace(r, split="train" if i in train else "test")
               for i, r in enumerate(manifest.records)]
    return DatasetManifest(records, manifest.class_names, manifest.root)


# ------------------------------------------------------------ batches

def load_image64(path):
    img = read_image(path)
    if img.shape != (IMAGE_SIZE, IMAGE_SIZE):
        img = resize_bilinear(img, IMAGE_SIZE, IMAGE_SIZE)
    return img


def load_batch(manifest, split, flatten=False, augment=False):
    """Load one split as arrays ``(inputs, labels)``.

    * ``flatten``: ``[n, 4096]`` row-major vectors
    * ``augment``: ``[16n, 1, 48, 48]`` patches, label repeated per patch
    * neither: ``[n, 1, 64, 64]``
    * both: ``[16n, 2304]``

    Order follows the manifest, then patch order.
    """
    records = manifest.select(split)
    paths = [manifest.resolve(r) for r in records]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        images = list(pool.map(load_image64, paths))
    labels = np.array([manifest.label_index(r.label) for r in records], dtype=np.int64)
    if not images:
        shape = {(False, False): (0, 1, 64, 64), (True, False): (0, 4096),
                 (False, True): (0, 1, 48, 48), (True, True): (0, 2304)}[(flatten, augment)]
        return np.zeros(shape, dtype=DTYPE), labels
    stack = np.stack(images)
    if augment:
        stack = np.concatenate([extract_patches(img) for img in stack])
        labels = np.repeat(labels, len(PATCH_OFFSETS) ** 2)
    if flatten:
        return stack.reshape(len(stack), -1), labels
    return stack[:, None], labels


# ------------------------------------------------------------ synthetic corpus

def _glyph(cls, size, cy, cx, extent, rng):
    """Intensity mask of the procedural glyph for class ``cls``."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    thick = 3.5 + rng.uniform(0, 1)

    def bar(angle):
        a = np.deg2rad(angle)
        along = dx * np.cos(a) + dy * np.sin(a)
        across = -dx * np.sin(a) + dy * np.cos(a)
        return ((np.abs(across) <= thick) & (np.abs(along) <= extent)).astype(float)

    r = np.hypot(dy, dx)
    if cls == 0:
        return bar(0)
    if cls == 1:
        return bar(90)
    if cls == 2:
        return bar(45)
    if cls == 3:
        return bar(135)
    if cls == 4:
        return np.exp(-(r / (0.6 * extent)) ** 2)
    if cls == 5:
        return (np.abs(r - 0.8 * extent) <= thick).astype(float)
    half = 0.55 * extent
    return ((np.abs(dy) <= half) & (np.abs(dx) <= half)).astype(float)


def synth_image(cls, rng):
    """One 64x64 sample of glyph class ``cls`` with jitter and noise."""
    size = IMAGE_SIZE
    cy, cx = size / 2 + rng.uniform(-1.5, 1.5, size=2)
    extent = rng.uniform(11, 14)
    background = rng.uniform(0.05, 0.15)
    intensity = rng.uniform(0.7, 0.95)
    img = background + (intensity - background) * _glyph(cls, size, cy, cx, extent, rng)
    img += rng.normal(0, 0.04, size=(size, size))
    return np.clip(img, 0, 1)


def synth_generate(n_per_class, seed, out_dir):
    """Write ``7 * n_per_class`` synthetic 64x64 PGM images plus ``manifest.tsv``."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_per_class):
        for cls, name in enumerate(CLASS_NAMES):
            rel = f"images/{name}_{i:03d}.pgm"
            (out_dir / rel).write_bytes(encode_pgm(synth_image(cls, rng)))
            records.append(Record(rel, name))
    manifest = DatasetManifest(records, CLASS_NAMES, out_dir)
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest
