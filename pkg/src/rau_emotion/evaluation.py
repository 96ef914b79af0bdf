"""Accuracy metrics, confusion matrices, text reports and filter-map images."""

from dataclasses import dataclass, field

import numpy as np

from .data import CLASS_ABBREVS, CLASS_NAMES
from .tensor import DTYPE

N_CLASSES = len(CLASS_NAMES)
BASELINE = 1.0 / N_CLASSES


def _class_index(c):
    if isinstance(c, str):
        if c in CLASS_NAMES:
            return CLASS_NAMES.index(c)
        if c in CLASS_ABBREVS:
            return CLASS_ABBREVS.index(c)
        raise ValueError(f"unknown class {c!r}")
    i = int(c)
    if not 0 <= i < N_CLASSES:
        raise ValueError(f"class index {i} out of range")
    return i


def confusion_matrix(truths, predictions):
    """7x7 counts; rows are true classes, columns predicted (canonical order)."""
    if len(truths) != len(predictions):
        raise ValueError(f"length mismatch: {len(truths)} truths vs {len(predictions)} predictions")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for t, p in zip(truths, predictions):
        cm[_class_index(t), _class_index(p)] += 1
    return cm


def topk_hits(truths, ranked_predictions, k):
    hits = 0
    for t, ranking in zip(truths, ranked_predictions):
        if len(ranking) < k:
            raise ValueError(f"ranking of length {len(ranking)} is shorter than k={k}")
        hits += _class_index(t) in [_class_index(c) for c in ranking[:k]]
    return hits


def topk_accuracy(truths, ranked_predictions, k):
    """Fraction of examples whose truth is among the first ``k`` ranked classes."""
    if len(truths) != len(ranked_predictions):
        raise ValueError("truths and rankings differ in length")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not truths:
        return 0.0
    return topk_hits(truths, ranked_predictions, k) / len(truths)


@dataclass
class EvaluationReport:
    dataset: str
    n_examples: int
    top1_accuracy: float
    k: int
    topk_accuracy: float
    confusion: np.ndarray
    baseline: float = BASELINE
    notes: list = field(default_factory=list)


def report_from_rankings(dataset, truths, rankings, k=2):
    truths = [_class_index(t) for t in truths]
    top1 = [r[0] for r in rankings]
    cm = confusion_matrix(truths, top1)
    n = len(truths)
    return EvaluationReport(
        dataset=dataset, n_examples=n,
        top1_accuracy=(int(np.trace(cm)) / n) if n else 0.0,
        k=k, topk_accuracy=topk_accuracy(truths, rankings, k),
        confusion=cm)


def _pct(x):
    return f"{100 * x:.2f}%"


def _pct_floor(x):
    # the chance line is quoted truncated (1/7 -> 14.28%), not rounded
    return f"{np.floor(10000 * x + 1e-9) / 100:.2f}%"


def render_report(report):
    """Fixed-width text report: summary lines, then the 7x7 confusion matrix."""
    cm = np.asarray(report.confusion)
    lines = [
        f"Dataset: {report.dataset}",
        f"Images: {report.n_examples}",
        f"Baseline (Random Guessing: {_pct_floor(report.baseline)})",
        f"Top-1 accuracy: {_pct(report.top1_accuracy)}",
        f"Top-{report.k} accuracy: {_pct(report.topk_accuracy)}",
        "",
        f"Confusion Matrix for {report.dataset} ({report.n_examples} Images)",
        f"{'':<10}" + "".join(f"{a:>6}" for a in CLASS_ABBREVS),
    ]
    for abbrev, row in zip(CLASS_ABBREVS, cm):
        label = f"{abbrev} ({int(row.sum())})"
        lines.append(f"{label:<10}" + "".join(f"{int(v):>6}" for v in row))
    lines.extend(report.notes)
    return "\n".join(lines) + "\n"


def normalize_map(fmap, brightness_scale=1.0):
    """Min-max to [0, 1], scale, clamp. A constant map becomes all zeros."""
    if brightness_scale <= 0:
        raise ValueError("brightness_scale must be positive")
    fmap = np.asarray(fmap, dtype=np.float64)
    lo, hi = fmap.min(), fmap.max()
    if hi == lo:
        return np.zeros(fmap.shape, dtype=DTYPE)
    return np.clip((fmap - lo) / (hi - lo) * brightness_scale, 0, 1).astype(DTYPE)


def visualize_filter_maps(model, image, layer_index, brightness_scale=1.0):
    """Per-filter output maps of one conv layer for a single image.

    ``layer_index`` counts conv layers from 1. ``image`` is a 48x48 patch or a
    64x64 image (its central 48x48 patch is used). Maps are the raw conv
    outputs before the ReLU.
    """
    from .cnn import conv_layer_positions, patch_input

    positions = conv_layer_positions(model)
    if not 1 <= layer_index <= len(positions):
        valid = ", ".join(str(i) for i in range(1, len(positions) + 1))
        raise ValueError(f"layer {layer_index} is not a conv layer; valid conv layers: {valid}")
    from .layers import forward

    pos = positions[layer_index - 1]
    maps, _ = forward(model.state, patch_input(image), upto=pos + 1)
    return [normalize_map(m, brightness_scale) for m in maps]
