"""Calibration and discrimination metrics over (confidence, target) records.

Records are passed as any iterable of ``(confidence, target)`` pairs or as
two parallel arrays via :func:`as_arrays`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata


class CalibrationRecord(NamedTuple):
    confidence: float
    target: float


@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    count: int
    mean_confidence: float  # nan when count == 0
    mean_target: float


def as_arrays(records) -> tuple:
    arr = np.asarray(list(records) if not isinstance(records, np.ndarray) else records, dtype=float)
    if arr.size == 0:
        return np.zeros(0), np.zeros(0)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("records must be (confidence, target) pairs")
    conf, target = arr[:, 0], arr[:, 1]
    if np.any((conf < 0) | (conf > 1)) or np.any((target < 0) | (target > 1)):
        raise ValueError("confidences and targets must lie in [0, 1]")
    return conf, target


def _bin_index(conf: np.ndarray, num_bins: int) -> np.ndarray:
    edges = np.arange(num_bins + 1) / num_bins
    return np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, num_bins - 1)


def reliability_curve(records, num_bins: int = 10) -> list:
    conf, target = as_arrays(records)
    if conf.size == 0:
        raise ValueError("reliability curve of no records")
    idx = _bin_index(conf, num_bins)
    counts = np.bincount(idx, minlength=num_bins)
    sum_conf = np.bincount(idx, weights=conf, minlength=num_bins)
    sum_target = np.bincount(idx, weights=target, minlength=num_bins)
    bins = []
    for b in range(num_bins):
        n = int(counts[b])
        mc = sum_conf[b] / n if n else float("nan")
        mt = sum_target[b] / n if n else float("nan")
        bins.append(ReliabilityBin(b / num_bins, (b + 1) / num_bins, n, mc, mt))
    return bins


def ece_from_bins(bins) -> float:
    total = sum(b.count for b in bins)
    return float(sum(b.count / total * abs(b.mean_target - b.mean_confidence)
                     for b in bins if b.count))


def ece(records, num_bins: int = 10) -> float:
    return ece_from_bins(reliability_curve(records, num_bins))


def pearson(records) -> float:
    conf, target = as_arrays(records)
    if conf.size < 2:
        raise ValueError("correlation needs at least two records")
    dc, dt = conf - conf.mean(), target - target.mean()
    sc, st = np.sqrt(dc @ dc), np.sqrt(dt @ dt)
    if sc == 0 or st == 0:
        raise ValueError("correlation undefined: zero variance in confidence or target")
    return float(np.clip((dc @ dt) / (sc * st), -1.0, 1.0))


def spearman(records) -> float:
    conf, target = as_arrays(records)
    if conf.size < 2:
        raise ValueError("correlation needs at least two records")
    rc, rt = rankdata(conf), rankdata(target)
    dc, dt = rc - rc.mean(), rt - rt.mean()
    sc, st = np.sqrt(dc @ dc), np.sqrt(dt @ dt)
    if sc == 0 or st == 0:
        raise ValueError("correlation undefined: zero variance in confidence or target")
    return float(np.clip((dc @ dt) / (sc * st), -1.0, 1.0))


def auroc(records) -> float:
    """Mann-Whitney AUROC; tied scores count one half."""
    conf, target = as_arrays(records)
    if np.any((target != 0) & (target != 1)):
        raise ValueError("AUROC needs binary targets")
    n_pos = int(target.sum())
    n_neg = target.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    ranks = rankdata(conf)
    u = ranks[target == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def brier(records) -> float:
    conf, target = as_arrays(records)
    if conf.size == 0:
        raise ValueError("Brier score of no records")
    return float(np.mean((conf - target) ** 2))


def confidence_histogram(records) -> np.ndarray:
    """Counts per verbalized level 0..10; confidences must sit on the 0.1 grid."""
    conf, _ = as_arrays(records)
    levels = np.rint(conf * 10)
    if np.any(np.abs(levels - conf * 10) > 1e-9):
        raise ValueError("confidence off the 11-level grid")
    return np.bincount(levels.astype(int), minlength=11)
