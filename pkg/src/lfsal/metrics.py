"""Saliency evaluation: F-beta, weighted F-beta and MAE.

Maps are 2-D float arrays in [0, 1]; ground truths are binary 2-D arrays of
the same extent.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from .errors import DimensionError, PairingError

BETA2 = 0.3
SWEEP_THRESHOLDS = np.arange(255) / 255.0
# weighted F-measure constants
WF_SIGMA2 = 5.0
WF_ALPHA = np.log(0.5) / 5.0


def _pair(P, G):
    P = np.asarray(P, dtype=float)
    G = np.asarray(G)
    if P.shape != G.shape or P.ndim != 2:
        raise DimensionError(f"prediction {P.shape} and ground truth {G.shape} must be equal 2-D extents")
    return P, G.astype(bool)


def mae(P, G) -> float:
    P, G = _pair(P, G)
    return float(np.abs(P - G).mean())


def adaptive_threshold(P) -> float:
    return min(1.0, 2.0 * float(np.mean(P)))


def binarize(P, mode="adaptive", tau: float | None = None) -> np.ndarray:
    """Salient iff ``P > tau``; ``mode`` is ``"adaptive"`` or ``"fixed"``."""
    P = np.asarray(P, dtype=float)
    if mode == "adaptive":
        tau = adaptive_threshold(P)
    elif mode != "fixed" or tau is None:
        raise ValueError("binarize needs mode='adaptive' or mode='fixed' with tau")
    return P > tau


def f_beta_from_counts(tp, fp, fn, beta2=BETA2) -> float:
    if tp + fp + fn == 0:
        return 1.0  # empty prediction on empty ground truth
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    denom = beta2 * precision + recall
    return (1 + beta2) * precision * recall / denom if denom else 0.0


def f_beta_mask(mask, G, beta2=BETA2) -> float:
    mask, G = np.asarray(mask, bool), np.asarray(G, bool)
    tp = int(np.sum(mask & G))
    fp = int(np.sum(mask & ~G))
    fn = int(np.sum(~mask & G))
    return f_beta_from_counts(tp, fp, fn, beta2)


def f_beta(P, G, beta2=BETA2, mode="adaptive") -> float:
    """F-beta of a binarised map.

    ``mode``: ``"adaptive"`` (tau = min(1, 2 mean P)), ``"sweep-max"`` (best over
    ``k/255, k = 0..254`` plus the adaptive threshold) or a float fixed threshold.
    """
    P, G = _pair(P, G)
    if mode == "adaptive":
        return f_beta_mask(P > adaptive_threshold(P), G, beta2)
    if mode == "sweep-max":
        taus = np.append(SWEEP_THRESHOLDS, adaptive_threshold(P))
        return max(f_beta_mask(P > t, G, beta2) for t in taus)
    if isinstance(mode, (int, float)):
        return f_beta_mask(P > float(mode), G, beta2)
    raise ValueError(f"unknown threshold mode {mode!r}")


def weighted_f_beta(P, G, beta2=BETA2) -> float:
    """Distance-weighted F-beta.

    Foreground errors are replaced by ``min(E, EA)`` where ``EA`` sums the
    foreground errors with Gaussian weights ``exp(-d^2 / 2 sigma^2) /
    sqrt(2 pi sigma^2)`` over pixel distance ``d`` (sigma^2 = 5). Background
    errors are multiplied by ``2 - exp(alpha * dist_to_foreground)`` with
    ``alpha = ln(0.5) / 5``. An all-background ground truth scores 1 for an
    all-zero map and 0 otherwise.
    """
    P, G = _pair(P, G)
    if not G.any():
        return 1.0 if not P.any() else 0.0
    E = np.abs(P - G)
    H, W = G.shape
    yy, xx = np.mgrid[-(H - 1):H, -(W - 1):W]
    kernel = np.exp(-(yy ** 2 + xx ** 2) / (2 * WF_SIGMA2)) / np.sqrt(2 * np.pi * WF_SIGMA2)
    # kernel spans every offset, so this is the sum over all foreground pairs
    EA = signal.fftconvolve(E * G, kernel, mode="full")[H - 1:2 * H - 1, W - 1:2 * W - 1]
    Emin = np.where(G, np.minimum(E, EA), E)
    dist = ndimage.distance_transform_edt(~G)
    B = np.where(G, 1.0, 2.0 - np.exp(WF_ALPHA * dist))
    Ew = Emin * B
    tp = float(np.sum(1.0 - Ew[G]))
    fn = float(np.sum(Ew[G]))
    fp = float(np.sum(Ew[~G]))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    denom = beta2 * precision + recall
    return (1 + beta2) * precision * recall / denom if denom > 0 else 0.0


@dataclass
class MetricsReport:
    f_beta: float
    f_beta_w: float
    mae: float
    threshold_mode: str
    per_image: list[tuple[str, float, float, float]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"f_beta": self.f_beta, "f_beta_w": self.f_beta_w, "mae": self.mae,
                "threshold_mode": self.threshold_mode, "n_images": len(self.per_image)}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "f_beta", "f_beta_w", "mae"])
            for row in self.per_image:
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
            w.writerow(["__mean__", repr(self.f_beta), repr(self.f_beta_w), repr(self.mae)])

    def write_kv(self, path) -> None:
        Path(path).write_text("".join(f"{k} = {v}\n" for k, v in self.as_dict().items()))


def evaluate_dataset(preds, gts, mode="adaptive", names=None, gt_names=None, beta2=BETA2) -> MetricsReport:
    """Per-image metrics plus unweighted means over the set."""
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise PairingError(f"{len(preds)} predictions but {len(gts)} ground truths")
    names = list(names) if names is not None else [str(i) for i in range(len(preds))]
    if gt_names is not None and list(gt_names) != names:
        unmatched = sorted(set(names) ^ set(gt_names))
        raise PairingError(f"prediction/ground-truth names differ: {unmatched or 'order mismatch'}")
    rows = []
    for name, P, G in zip(names, preds, gts):
        rows.append((name, f_beta(P, G, beta2, mode), weighted_f_beta(P, G, beta2), mae(P, G)))
    if not rows:
        raise PairingError("no image pairs to evaluate")
    arr = np.array([r[1:] for r in rows])
    means = arr.mean(axis=0)
    label = mode if isinstance(mode, str) else f"fixed({mode})"
    return MetricsReport(float(means[0]), float(means[1]), float(means[2]), label, rows)
