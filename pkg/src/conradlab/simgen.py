"""Synthetic study environment and the oracle correctness scorers.

A study is a Gaussian feature vector plus a latent finding set. Finding ``j``
is present iff a fixed linear rule ``truth_weights[j] @ x + truth_bias[j]``
is positive, so correctness is learnable from the features. The scorers
replace an LLM-based report grader with plain set arithmetic.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

# stream ids for the truth rule, kept apart from per-study feature streams
_TRUTH_STREAM = 0x7A11
_RATER_STREAM = 0x3A7E

SEVERITY_LOADING = 0.6
TRUTH_SCALE = 1.5


@dataclass(frozen=True, eq=False)
class EnvConfig:
    feature_dim: int = 16
    num_findings: int = 12
    max_sentences: int = 6
    truth_weights: Optional[np.ndarray] = None
    truth_bias: Optional[np.ndarray] = None
    shift_offset: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.feature_dim < 1:
            raise InvalidConfig("feature_dim", "must be >= 1")
        if self.num_findings < 2:
            raise InvalidConfig("num_findings", "must be >= 2")
        if self.max_sentences < 1:
            raise InvalidConfig("max_sentences", "must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig("seed", "must be a 64-bit unsigned integer")
        w, b = _draw_truth_rule(self.seed, self.num_findings, self.feature_dim)
        if self.truth_weights is None:
            object.__setattr__(self, "truth_weights", w)
        if self.truth_bias is None:
            object.__setattr__(self, "truth_bias", b)
        if self.shift_offset is None:
            object.__setattr__(self, "shift_offset", np.zeros(self.feature_dim))
        for name in ("truth_weights", "truth_bias", "shift_offset"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.truth_weights.shape != (self.num_findings, self.feature_dim):
            raise InvalidConfig("truth_weights", f"expected shape {(self.num_findings, self.feature_dim)}, "
                                                 f"got {self.truth_weights.shape}")
        if self.truth_bias.shape != (self.num_findings,):
            raise InvalidConfig("truth_bias", f"expected length {self.num_findings}")
        if self.shift_offset.shape != (self.feature_dim,):
            raise InvalidConfig("shift_offset", f"expected length {self.feature_dim}")
        for name in ("truth_weights", "truth_bias", "shift_offset"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidConfig(name, "must be finite")

    def __eq__(self, other):
        if not isinstance(other, EnvConfig):
            return NotImplemented
        return (
            self.feature_dim == other.feature_dim
            and self.num_findings == other.num_findings
            and self.max_sentences == other.max_sentences
            and self.seed == other.seed
            and np.array_equal(self.truth_weights, other.truth_weights)
            and np.array_equal(self.truth_bias, other.truth_bias)
            and np.array_equal(self.shift_offset, other.shift_offset)
        )

    __hash__ = None


def _draw_truth_rule(seed: int, num_findings: int, feature_dim: int):
    """Random linear labeling rule.

    Every finding loads on one shared "severity" direction plus its own
    direction, so the number of present findings varies across studies.
    """
    rng = np.random.default_rng([seed, _TRUTH_STREAM])
    shared = rng.normal(size=feature_dim)
    shared /= np.linalg.norm(shared)
    own = rng.normal(size=(num_findings, feature_dim)) / np.sqrt(feature_dim)
    w = TRUTH_SCALE * (SEVERITY_LOADING * shared + np.sqrt(1 - SEVERITY_LOADING ** 2) * own)
    b = rng.normal(0.0, 0.5, size=num_findings)
    return w, b


class InvalidConfig(ValueError):
    """A config field violates its invariant. ``field`` names the culprit."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True, eq=False)
class Study:
    id: int
    features: np.ndarray
    truth: frozenset

    def __eq__(self, other):
        if not isinstance(other, Study):
            return NotImplemented
        return (self.id == other.id and self.truth == other.truth
                and np.array_equal(self.features, other.features))

    __hash__ = None


@dataclass(frozen=True)
class CorrectnessTargets:
    report_score: float
    sentence_flags: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not 0.0 <= self.report_score <= 1.0:
            raise ValueError(f"report_score {self.report_score} outside [0, 1]")
        if any(f not in (0, 1) for f in self.sentence_flags):
            raise ValueError("sentence flags must be 0 or 1")


def sample_study(cfg: EnvConfig, index: int) -> Study:
    if index < 0:
        raise ValueError("study index must be non-negative")
    rng = np.random.default_rng([cfg.seed, index])
    x = rng.standard_normal(cfg.feature_dim) + cfg.shift_offset
    x.setflags(write=False)
    scores = cfg.truth_weights @ x + cfg.truth_bias
    truth = frozenset(int(j) for j in np.flatnonzero(scores > 0))
    return Study(id=index, features=x, truth=truth)


def shift_distribution(cfg: EnvConfig, offset) -> EnvConfig:
    """Same labeling rule, inputs translated by ``offset`` (replaces any prior shift)."""
    offset = np.asarray(offset, dtype=float)
    if offset.shape != (cfg.feature_dim,):
        raise ValueError(f"offset has shape {offset.shape}, expected ({cfg.feature_dim},)")
    if not np.all(np.isfinite(offset)):
        raise ValueError("offset must be finite")
    return replace(cfg, shift_offset=offset)


def green_surrogate(emitted: Iterable[int], truth: Iterable[int]) -> float:
    """Matched findings over matched + false + missed findings; 1.0 for two empty sets."""
    emitted, truth = set(emitted), set(truth)
    matched = len(emitted & truth)
    errors = len(emitted - truth) + len(truth - emitted)
    if matched + errors == 0:
        return 1.0
    return matched / (matched + errors)


def precision_green(finding: int, truth: Iterable[int]) -> int:
    return int(finding in truth)


def correctness_targets(emitted, truth) -> CorrectnessTargets:
    """Score a report: set overlap for the whole report, membership per sentence."""
    return CorrectnessTargets(
        report_score=green_surrogate(emitted, truth),
        sentence_flags=tuple(precision_green(f, truth) for f in emitted),
    )


def simulate_raters(emitted, truth, num_raters: int, noise: float, seed) -> np.ndarray:
    """Likert panel, shape (sentences, raters), values in 1..5.

    Each cell starts at 5 for a supported finding and 1 otherwise; with
    probability ``noise`` a rater moves one step up or down (clamped).
    """
    if num_raters < 1:
        raise ValueError("num_raters must be >= 1")
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must lie in [0, 1]")
    emitted = list(emitted)
    if not emitted:
        return np.zeros((0, num_raters), dtype=int)
    rng = np.random.default_rng([_RATER_STREAM, *np.atleast_1d(seed).tolist()])
    base = np.array([5 if f in truth else 1 for f in emitted])[:, None]
    perturb = rng.random((len(emitted), num_raters)) < noise
    step = rng.choice([-1, 1], size=(len(emitted), num_raters))
    return np.clip(base + perturb * step, 1, 5).astype(int)


def seed_stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent generator per (seed, purpose, keys); purposes never collide
    with each other, so adding a new consumer leaves existing streams intact."""
    tag = zlib.crc32(purpose.encode())
    return np.random.default_rng([seed, tag, *keys])
