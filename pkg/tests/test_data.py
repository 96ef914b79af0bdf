import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import nearest_centroid_accuracy
from rau_emotion import data
from rau_emotion.data import DecodeError, DatasetManifest, Record
from rau_emotion.tensor import DimensionError


def test_decode_hand_built_pgm():
    raw = b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64])
    img = data.decode_image(raw)
    np.testing.assert_allclose(img, [[0, 1], [0.50196, 0.25098]], atol=1e-5)


def test_decode_pgm_with_comment():
    raw = b"P5\n# made by hand\n3 1\n255\n" + bytes([10, 20, 30])
    np.testing.assert_allclose(data.decode_image(raw), [[10 / 255, 20 / 255, 30 / 255]])


@pytest.mark.parametrize("raw, message", [
    (b"", "empty"),
    (b"GIF89a", "unsupported"),
    (b"P5\n2 2\n255\n" + bytes(3), "truncated"),
    (b"P5\n2 2\n65535\n" + bytes(8), "8-bit"),
    (b"P5\n2", "truncated"),
])
def test_decode_errors(raw, message):
    with pytest.raises(DecodeError, match=message):
        data.decode_image(raw)


def test_png_errors():
    img = np.zeros((2, 2))
    png = data.encode_png(img)
    with pytest.raises(DecodeError, match="truncated"):
        data.decode_image(png[:30])
    # flip the colour type to RGB (byte 25 of the stream)
    rgb = bytearray(png)
    rgb[25] = 2
    with pytest.raises(DecodeError, match="grayscale"):
        data.decode_image(bytes(rgb))
    sixteen = bytearray(png)
    sixteen[24] = 16
    with pytest.raises(DecodeError, match="8-bit"):
        data.decode_image(bytes(sixteen))


@settings(max_examples=30)
@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_encode_decode_round_trip(pixels):
    img = pixels.astype(np.float32) / 255
    for encoded in (data.encode_pgm(img), data.encode_png(img)):
        np.testing.assert_array_equal(data.to_bytes8(data.decode_image(encoded)), pixels)


def test_png_filters_decode():
    # rows using filters 1..4 on a known image, built by hand
    import struct
    import zlib

    pixels = np.array([[10, 20, 30], [40, 50, 60], [70, 80, 90], [15, 25, 35]], np.uint8)
    rows = [bytes([1, 10, 10, 10]),                # sub
            bytes([2, 30, 30, 30]),                # up
            bytes([3, 70 - 20, 80 - 60, 90 - 70]),  # average: (left + up) // 2
            bytes([4, (15 - 70) % 256, (25 - 15) % 256, (35 - 25) % 256])]  # paeth

    def chunk(t, b):
        return struct.pack(">I", len(b)) + t + b + struct.pack(">I", zlib.crc32(t + b))

    png = (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", struct.pack(">IIBBBBB", 3, 4, 8, 0, 0, 0, 0))
           + chunk(b"IDAT", zlib.compress(b"".join(rows))) + chunk(b"IEND", b""))
    np.testing.assert_array_equal(data.to_bytes8(data.decode_image(png)), pixels)


def test_resize_identity_and_constant():
    img = np.random.default_rng(0).random((5, 7)).astype(np.float32)
    np.testing.assert_array_equal(data.resize_bilinear(img, 5, 7), img)
    const = np.full((3, 4), 0.3, np.float32)
    np.testing.assert_allclose(data.resize_bilinear(const, 9, 2), 0.3, atol=1e-7)
    with pytest.raises(DimensionError):
        data.resize_bilinear(img, 0, 3)


def test_resize_upscale_hand_values():
    img = np.array([[0.0, 0.3], [0.6, 0.9]], np.float32)
    # corner-aligned 2 -> 4 samples at 0, 1/3, 2/3, 1: value = 0.6*y/3 + 0.3*x/3
    expected = np.array([[0.6 * y / 3 + 0.3 * x / 3 for x in range(4)] for y in range(4)])
    np.testing.assert_allclose(data.resize_bilinear(img, 4, 4), expected, atol=1e-6)


@settings(max_examples=30)
@given(arrays(np.float32, st.tuples(st.integers(1, 8), st.integers(1, 8)),
              elements=st.floats(0, 1, width=32)),
       st.integers(1, 20), st.integers(1, 20))
def test_resize_stays_in_range(img, h, w):
    out = data.resize_bilinear(img, h, w)
    assert out.shape == (h, w)
    assert out.min() >= img.min() and out.max() <= img.max()


def test_extract_patches_contract():
    img = np.random.default_rng(1).random((64, 64)).astype(np.float32)
    patches = data.extract_patches(img)
    assert patches.shape == (16, 48, 48)
    np.testing.assert_array_equal(patches[0], img[:48, :48])
    covered = np.zeros((64, 64), bool)
    for n, (y, x) in enumerate((y, x) for y in (0, 5, 11, 16) for x in (0, 5, 11, 16)):
        np.testing.assert_array_equal(patches[n], img[y:y + 48, x:x + 48])
        covered[y:y + 48, x:x + 48] = True
    assert covered.all()
    with pytest.raises(DimensionError):
        data.extract_patches(np.zeros((48, 48)))


def make_manifest(counts):
    records = [Record(f"{name}_{i}.pgm", name)
               for name, n in zip(data.CLASS_NAMES, counts) for i in range(n)]
    return DatasetManifest(records)


def test_split_215_records():
    m = data.split_dataset(make_manifest([31, 31, 31, 31, 31, 30, 30]), 0.75, seed=0)
    assert len(m.select("train")) == 161 and len(m.select("test")) == 54


def test_split_real_jaffe_counts():
    # the 213-image JAFFE class sizes in canonical order
    m = data.split_dataset(make_manifest([30, 31, 30, 31, 29, 32, 30]), 0.75, seed=0)
    assert len(m.select("train")) == 161


def test_split_balanced_and_deterministic():
    m = data.split_dataset(make_manifest([2] * 7), 0.5, seed=3)
    for name in data.CLASS_NAMES:
        assert sorted(r.split for r in m.records if r.label == name) == ["test", "train"]
    a = data.split_dataset(make_manifest([23] * 7), 0.75, seed=9)
    b = data.split_dataset(make_manifest([23] * 7), 0.75, seed=9)
    assert a.records == b.records
    assert len(a.select("train")) == 119 and len(a.select("test")) == 42


def test_split_errors():
    with pytest.raises(ValueError):
        data.split_dataset(make_manifest([1, 2, 2, 2, 2, 2, 2]), 0.75, 0)
    with pytest.raises(ValueError):
        data.split_dataset(make_manifest([4] * 7), 1.0, 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(2, 40), min_size=7, max_size=7), st.floats(0.05, 0.95),
       st.integers(0, 2**32 - 1))
def test_split_is_stratified_partition(counts, fraction, seed):
    m = data.split_dataset(make_manifest(counts), fraction, seed)
    assert all(r.split in ("train", "test") for r in m.records)
    assert len(m.records) == sum(counts)
    for name, n in zip(data.CLASS_NAMES, counts):
        n_train = sum(1 for r in m.records if r.label == name and r.split == "train")
        assert abs(n_train - n * fraction) <= 1


def test_manifest_round_trip(tmp_path):
    m = data.split_dataset(make_manifest([3] * 7), 0.5, 0)
    data.write_manifest(m, tmp_path / "m.tsv")
    text = (tmp_path / "m.tsv").read_text()
    assert text.splitlines()[0] == "#classes\t" + "\t".join(data.CLASS_NAMES)
    back = data.read_manifest(tmp_path / "m.tsv")
    assert back.records == m.records and back.root == tmp_path


def test_manifest_rejects_bad_labels(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("#classes\t" + "\t".join(data.CLASS_NAMES) + "\nx.pgm\tcontempt\ttrain\n")
    with pytest.raises(data.ManifestError, match="contempt"):
        data.read_manifest(path)


def test_synth_generate(tmp_path, synth_corpus):
    m = data.synth_generate(2, 5, tmp_path / "a")
    assert len(m.records) == 14
    assert sorted({r.label for r in m.records}) == sorted(data.CLASS_NAMES)
    data.synth_generate(2, 5, tmp_path / "b")
    for rec in m.records:
        assert (tmp_path / "a" / rec.path).read_bytes() == (tmp_path / "b" / rec.path).read_bytes()
    assert (tmp_path / "a/manifest.tsv").read_bytes() == (tmp_path / "b/manifest.tsv").read_bytes()
    assert len(synth_corpus.records) == 161


def test_synth_is_centroid_separable(synth_corpus):
    xtr, ytr = data.load_batch(synth_corpus, "train", flatten=True)
    xte, yte = data.load_batch(synth_corpus, "test", flatten=True)
    assert nearest_centroid_accuracy(xtr, ytr, xte, yte) > 0.8


def test_load_batch_shapes(synth_corpus):
    x, y = data.load_batch(synth_corpus, "train", flatten=True)
    assert x.shape == (119, 4096) and y.shape == (119,)
    assert x.min() >= 0 and x.max() <= 1
    p, py = data.load_batch(synth_corpus, "train", augment=True)
    assert p.shape == (119 * 16, 1, 48, 48)
    np.testing.assert_array_equal(py, np.repeat(y, 16))
    np.testing.assert_array_equal(p[16 * 3 + 5, 0], x[3].reshape(64, 64)[5:53, 5:53])
    raw, _ = data.load_batch(synth_corpus, "test")
    assert raw.shape == (42, 1, 64, 64)


def test_load_batch_resizes_and_reports_missing(tmp_path):
    img = np.random.default_rng(0).random((30, 40))
    (tmp_path / "small.png").write_bytes(data.encode_png(img))
    m = DatasetManifest([Record("small.png", "fear", "train")], root=tmp_path)
    x, _ = data.load_batch(m, "train", flatten=True)
    assert x.shape == (1, 4096)
    m = DatasetManifest([Record("gone.pgm", "fear", "train")], root=tmp_path)
    with pytest.raises(DecodeError, match="gone.pgm"):
        data.load_batch(m, "train")


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("RAU_EMOTION_THREADS", "3")
    assert data.worker_count() == 3
    monkeypatch.setenv("RAU_EMOTION_THREADS", "0")
    assert data.worker_count() >= 1
    monkeypatch.setenv("RAU_EMOTION_THREADS", "-2")
    with pytest.raises(ValueError):
        data.worker_count()
