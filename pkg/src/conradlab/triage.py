"""Confidence-threshold filtering and clinician-style rating aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from conradlab import calib
from conradlab.policy import Scenario
from conradlab.simgen import green_surrogate, simulate_raters

DEFAULT_THRESHOLDS = (0.0, 0.6, 0.8, 1.0)
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class SentenceEntry:
    confidence: float
    correct: int
    study_id: int
    sentence_index: int
    finding: int = -1

    def __post_init__(self):
        if abs(self.confidence * 10 - round(self.confidence * 10)) > _GRID_TOL or not 0 <= self.confidence <= 1:
            raise ValueError(f"confidence {self.confidence} is not on the 0.1 grid")
        if self.correct not in (0, 1):
            raise ValueError("correct must be 0 or 1")


@dataclass(frozen=True)
class FilterRow:
    threshold: float
    retained_count: int
    precision: Optional[float]  # None when nothing is retained
    coverage: float
    mean_report_score: Optional[float] = None


def sentence_entries(result) -> list:
    """Flatten a sentence-level evaluation into entries."""
    out = []
    for study, r in zip(result.studies, result.rollouts):
        for j, (f, c) in enumerate(zip(r.emitted_findings, r.confidences())):
            out.append(SentenceEntry(c, int(f in study.truth), study.id, j, f))
    return out


def _retained(entries, tau: float, equality: bool) -> list:
    if equality:
        return [e for e in entries if abs(e.confidence - tau) <= _GRID_TOL]
    return [e for e in entries if e.confidence >= tau - _GRID_TOL]


def filter_by_threshold(entries, tau: float, truths: Optional[dict] = None,
                        equality: bool = False) -> FilterRow:
    """Keep sentences with confidence >= tau (== tau with ``equality``).

    With ``truths`` (study id -> finding set) the row also carries the mean
    report score of the retained findings per study, over every study in
    ``truths``.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("no sentences to filter")
    kept = _retained(entries, tau, equality)
    precision = float(np.mean([e.correct for e in kept])) if kept else None
    score = None
    if truths is not None:
        by_study = {sid: set() for sid in truths}
        for e in kept:
            by_study.setdefault(e.study_id, set()).add(e.finding)
        score = float(np.mean([green_surrogate(by_study[sid], truths[sid]) for sid in truths]))
    return FilterRow(tau, len(kept), precision, len(kept) / len(entries), score)


def risk_coverage_table(entries, thresholds=DEFAULT_THRESHOLDS, truths: Optional[dict] = None) -> list:
    """One row per threshold; a threshold of 1.0 keeps only top-level sentences."""
    entries = list(entries)
    return [filter_by_threshold(entries, t, truths, equality=math.isclose(t, 1.0))
            for t in thresholds]


def _panel(panel) -> np.ndarray:
    p = np.asarray(panel)
    if p.size == 0:
        raise ValueError("empty rater panel")
    if p.ndim != 2:
        raise ValueError("rater panel must be rectangular (sentences x raters)")
    if np.any((p < 1) | (p > 5)):
        raise ValueError("Likert scores must lie in 1..5")
    return p


def aggregate_mean(panel) -> float:
    """Mean over all cells, mapped affinely from 1..5 onto [0, 1]."""
    return (float(_panel(panel).mean()) - 1.0) / 4.0


def aggregate_all_accepted(panel) -> int:
    """1 iff every sentence gets >= 4 from a strict majority of raters."""
    p = _panel(panel)
    votes = (p >= 4).sum(axis=1)
    return int(np.all(votes * 2 > p.shape[1]))


@dataclass(frozen=True)
class ClinicalRow:
    aggregation: str
    correlation: float
    auroc: float
    ece: float


def _safe(fn, records) -> float:
    try:
        return fn(records)
    except ValueError:
        return float("nan")


def clinical_table(result, num_raters: int = 3, noise: float = 0.2, seed: int = 0,
                   num_bins: int = 10) -> list:
    """Report-level confidence against simulated rater panels.

    Reports without sentences cannot be rated and are skipped. Metrics that
    are undefined on the sample (e.g. AUROC with one class) come back nan.
    """
    conf, mean_t, acc_t = [], [], []
    for study, r in zip(result.studies, result.rollouts):
        if r.scenario != Scenario.REPORT:
            raise ValueError("clinical evaluation uses report-level confidence")
        if not r.emitted_findings:
            continue
        panel = simulate_raters(r.emitted_findings, study.truth, num_raters, noise, [seed, study.id])
        conf.append(r.confidences()[0])
        mean_t.append(aggregate_mean(panel))
        acc_t.append(float(aggregate_all_accepted(panel)))
    rows = []
    for name, target in (("mean_aggregation", mean_t), ("all_accepted", acc_t)):
        rec = list(zip(conf, target))
        if not rec:
            rows.append(ClinicalRow(name, float("nan"), float("nan"), float("nan")))
            continue
        if name == "mean_aggregation":
            # AUROC needs a binary target; threshold the mean rating at "accept" (4 of 5)
            bin_rec = [(c, float(t >= 0.75)) for c, t in rec]
        else:
            bin_rec = rec
        rows.append(ClinicalRow(name, _safe(calib.spearman, rec), _safe(calib.auroc, bin_rec),
                                calib.ece(rec, num_bins)))
    return rows
