"""Two-head generation policy with a shared tanh hidden layer.

Each step reads a state vector

    [features | one-hot sentence index | kind flag | findings emitted so far | current finding]

and either picks the next finding token (``num_findings`` findings plus STOP)
or a confidence token (levels 0..10 plus INVALID). Gradients are analytic.
"""
from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

NUM_LEVELS = 11
INVALID = NUM_LEVELS  # confidence token id of the malformed output
NUM_CONF_TOKENS = NUM_LEVELS + 1


class Scenario(str, enum.Enum):
    REPORT = "ReportLevel"
    SENTENCE = "SentenceLevel"


class Kind(enum.IntEnum):
    FINDING = 0
    CONFIDENCE = 1


@dataclass(frozen=True)
class PolicyConfig:
    hidden_dim: int = 32
    scenario: Scenario = Scenario.REPORT
    temperature: float = 1.0
    init_scale: float = 0.1
    input_gain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        from conradlab.simgen import InvalidConfig

        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.hidden_dim < 1:
            raise InvalidConfig("hidden_dim", "must be >= 1")
        if not self.temperature > 0:
            raise InvalidConfig("temperature", "must be > 0")
        if not self.init_scale >= 0:
            raise InvalidConfig("init_scale", "must be >= 0")
        if not self.input_gain >= 0:
            raise InvalidConfig("input_gain", "must be >= 0")


PARAM_NAMES = ("w_in", "b_in", "w_find", "b_find", "w_conf", "b_conf")


@dataclass(eq=False)
class PolicyParams:
    w_in: np.ndarray
    b_in: np.ndarray
    w_find: np.ndarray
    b_find: np.ndarray
    w_conf: np.ndarray
    b_conf: np.ndarray
    feature_dim: int
    num_findings: int
    max_sentences: int
    temperature: float = 1.0

    @property
    def stop_token(self) -> int:
        return self.num_findings

    @property
    def state_dim(self) -> int:
        return state_dim(self.feature_dim, self.num_findings, self.max_sentences)

    def arrays(self):
        return [getattr(self, n) for n in PARAM_NAMES]

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, flat: np.ndarray) -> "PolicyParams":
        out = copy.deepcopy(self)
        i = 0
        for n in PARAM_NAMES:
            a = getattr(out, n)
            a[...] = flat[i:i + a.size].reshape(a.shape)
            i += a.size
        return out

    def equals(self, other: "PolicyParams") -> bool:
        return (
            (self.feature_dim, self.num_findings, self.max_sentences, self.temperature)
            == (other.feature_dim, other.num_findings, other.max_sentences, other.temperature)
            and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))
        )


def state_dim(feature_dim: int, num_findings: int, max_sentences: int) -> int:
    return feature_dim + (max_sentences + 1) + 1 + 2 * num_findings


def init_policy(cfg: PolicyConfig, feature_dim: int, num_findings: int,
                max_sentences: int = 6) -> PolicyParams:
    if cfg.hidden_dim < 1 or feature_dim < 1 or num_findings < 1 or max_sentences < 1:
        raise ValueError("policy dimensions must be positive")
    rng = np.random.default_rng(cfg.seed)
    d = state_dim(feature_dim, num_findings, max_sentences)
    h = cfg.hidden_dim
    s = cfg.init_scale
    # fan-in scaled input layer so hidden units carry the state from the start;
    # heads stay small so the first distributions are near uniform
    return PolicyParams(
        w_in=rng.normal(0.0, cfg.input_gain / np.sqrt(d), (h, d)),
        b_in=np.zeros(h),
        w_find=rng.normal(0.0, s, (num_findings + 1, h)),
        b_find=np.zeros(num_findings + 1),
        w_conf=rng.normal(0.0, s, (NUM_CONF_TOKENS, h)),
        b_conf=np.zeros(NUM_CONF_TOKENS),
        feature_dim=feature_dim,
        num_findings=num_findings,
        max_sentences=max_sentences,
        temperature=cfg.temperature,
    )


def snapshot_reference(params: PolicyParams) -> PolicyParams:
    return copy.deepcopy(params)


def build_state(params: PolicyParams, features, sentence_index: int, kind: Kind,
                emitted=(), current: Optional[int] = None) -> np.ndarray:
    """State vector for one step. ``emitted`` are findings of earlier sentences."""
    features = np.asarray(features, dtype=float)
    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite study features")
    d, F, S = params.feature_dim, params.num_findings, params.max_sentences
    x = np.zeros(params.state_dim)
    x[:d] = features
    x[d + min(sentence_index, S)] = 1.0
    x[d + S + 1] = float(kind)
    off = d + S + 2
    for f in emitted:
        x[off + f] = 1.0
    if current is not None:
        x[off + F + current] = 1.0
    return x


def _hidden(params: PolicyParams, states: np.ndarray) -> np.ndarray:
    return np.tanh(states @ params.w_in.T + params.b_in)


def hidden_state(params: PolicyParams, state: np.ndarray) -> np.ndarray:
    return _hidden(params, np.atleast_2d(state))[0]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def head_log_probs(params: PolicyParams, states: np.ndarray, kind: Kind) -> np.ndarray:
    """Log-probabilities for a batch of states, all of the same kind."""
    hid = _hidden(params, np.atleast_2d(states))
    if kind == Kind.FINDING:
        z = hid @ params.w_find.T + params.b_find
    else:
        z = hid @ params.w_conf.T + params.b_conf
    return _log_softmax(z / params.temperature)


def step_distribution(params: PolicyParams, study_features, sentence_index: int, kind: Kind,
                      emitted=(), current: Optional[int] = None) -> np.ndarray:
    state = build_state(params, study_features, sentence_index, kind, emitted, current)
    return np.exp(head_log_probs(params, state, kind)[0])


@dataclass(frozen=True, eq=False)
class Step:
    position: int
    kind: Kind
    token: int
    logprob: float
    state: np.ndarray


@dataclass(eq=False)
class Rollout:
    study_id: int
    scenario: Scenario
    steps: list = field(default_factory=list)
    emitted_findings: list = field(default_factory=list)
    confidence_tokens: list = field(default_factory=list)

    def confidence_mask(self) -> np.ndarray:
        return np.array([s.kind == Kind.CONFIDENCE for s in self.steps], dtype=bool)

    def finding_mask(self) -> np.ndarray:
        return ~self.confidence_mask()

    @property
    def is_valid(self) -> bool:
        return all(t != INVALID for t in self.confidence_tokens)

    def confidences(self) -> list:
        """Normalized confidence values; only meaningful for valid rollouts."""
        return [t / 10 for t in self.confidence_tokens]

    def equals(self, other: "Rollout") -> bool:
        if (self.study_id, self.scenario, self.emitted_findings, self.confidence_tokens) != (
                other.study_id, other.scenario, other.emitted_findings, other.confidence_tokens):
            return False
        return len(self.steps) == len(other.steps) and all(
            a.position == b.position and a.kind == b.kind and a.token == b.token
            and a.logprob == b.logprob and np.array_equal(a.state, b.state)
            for a, b in zip(self.steps, other.steps))


def check_structure(rollout: Rollout) -> None:
    """Raise AssertionError if the step layout breaks the scenario's format."""
    kinds = [s.kind for s in rollout.steps]
    n_conf = kinds.count(Kind.CONFIDENCE)
    if rollout.scenario == Scenario.REPORT:
        assert n_conf == 1 and kinds[-1] == Kind.CONFIDENCE
    else:
        # finding, confidence, finding, confidence, ..., optional trailing STOP
        assert all(k == Kind(i % 2) for i, k in enumerate(kinds))
        assert n_conf == len(rollout.emitted_findings)
    assert len(rollout.confidence_tokens) == n_conf
    assert all(s.logprob <= 0.0 for s in rollout.steps)
    assert [s.position for s in rollout.steps] == list(range(len(rollout.steps)))


def _sample(rng: np.random.Generator, logp: np.ndarray) -> int:
    p = np.exp(logp)
    return int(min(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"), len(p) - 1))


def rollout(params: PolicyParams, study, scenario: Scenario, rng: np.random.Generator,
            allow_invalid: bool = True) -> Rollout:
    """Sample one report with its confidence token(s).

    With ``allow_invalid=False`` the INVALID token is masked out and the
    confidence head renormalized (constrained decoding, used for evaluation).
    """
    scenario = Scenario(scenario)
    out = Rollout(study_id=study.id, scenario=scenario)
    x = study.features
    emitted: list = []

    def conf_step(sentence_index, current):
        state = build_state(params, x, sentence_index, Kind.CONFIDENCE, emitted, current)
        logp = head_log_probs(params, state, Kind.CONFIDENCE)[0]
        if not allow_invalid:
            logp = _log_softmax(np.where(np.arange(NUM_CONF_TOKENS) == INVALID, -np.inf, logp))
        tok = _sample(rng, logp)
        out.steps.append(Step(len(out.steps), Kind.CONFIDENCE, tok, float(logp[tok]), state))
        out.confidence_tokens.append(tok)

    for i in range(params.max_sentences):
        state = build_state(params, x, i, Kind.FINDING, emitted)
        logp = head_log_probs(params, state, Kind.FINDING)[0]
        tok = _sample(rng, logp)
        out.steps.append(Step(len(out.steps), Kind.FINDING, tok, float(logp[tok]), state))
        if tok == params.stop_token:
            break
        if scenario == Scenario.SENTENCE:
            conf_step(i, tok)
        emitted.append(tok)
    out.emitted_findings = list(emitted)
    if scenario == Scenario.REPORT:
        conf_step(len(emitted), None)
    return out


def sample_report(params: PolicyParams, study, rng: np.random.Generator) -> list:
    """Finding sequence only (no confidence tokens), as a fresh sample."""
    return rollout(params, study, Scenario.REPORT, rng).emitted_findings


def post_report_state(params: PolicyParams, study, emitted) -> np.ndarray:
    return build_state(params, study.features, len(emitted), Kind.CONFIDENCE, emitted)


def zero_grad(params: PolicyParams) -> PolicyParams:
    g = copy.deepcopy(params)
    for n in PARAM_NAMES:
        getattr(g, n)[...] = 0.0
    return g


def backprop(params: PolicyParams, states: np.ndarray, kinds: np.ndarray,
             dlogits: np.ndarray) -> PolicyParams:
    """Parameter gradient given d(objective)/d(tempered logits) per row.

    ``dlogits`` has ``max(F+1, 12)`` columns; each row uses only the columns of
    its own head. Rows are accumulated in order.
    """
    grad = zero_grad(params)
    if len(states) == 0:
        return grad
    T = params.temperature
    hid = _hidden(params, states)
    dhid = np.zeros_like(hid)
    for kind, w, wn, bn in ((Kind.FINDING, params.w_find, "w_find", "b_find"),
                            (Kind.CONFIDENCE, params.w_conf, "w_conf", "b_conf")):
        rows = kinds == kind
        if not rows.any():
            continue
        dz = dlogits[rows, :w.shape[0]] / T
        getattr(grad, wn)[...] = dz.T @ hid[rows]
        getattr(grad, bn)[...] = dz.sum(axis=0)
        dhid[rows] = dz @ w
    dpre = dhid * (1.0 - hid ** 2)
    grad.w_in[...] = dpre.T @ states
    grad.b_in[...] = dpre.sum(axis=0)
    return grad


def _stack(steps):
    states = np.array([s.state for s in steps]).reshape(len(steps), -1)
    kinds = np.array([int(s.kind) for s in steps], dtype=int)
    tokens = np.array([s.token for s in steps], dtype=int)
    return states, kinds, tokens


def step_log_probs(params: PolicyParams, steps) -> tuple:
    """(log-prob of each step's token, full log-prob rows padded to a common width)."""
    states, kinds, tokens = _stack(steps)
    width = max(params.num_findings + 1, NUM_CONF_TOKENS)
    full = np.full((len(steps), width), -np.inf)
    for kind in Kind:
        rows = kinds == kind
        if rows.any():
            lp = head_log_probs(params, states[rows], kind)
            full[rows, :lp.shape[1]] = lp
    return full[np.arange(len(steps)), tokens], full


def logprob_grad(params: PolicyParams, rollout: Rollout, mask) -> tuple:
    """Log-probs of the rollout's tokens under ``params`` and the gradient of
    their sum over masked positions."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (len(rollout.steps),):
        raise ValueError(f"mask length {mask.size} != step count {len(rollout.steps)}")
    logps, full = step_log_probs(params, rollout.steps)
    steps = [s for s, m in zip(rollout.steps, mask) if m]
    if not steps:
        return logps, zero_grad(params)
    states, kinds, tokens = _stack(steps)
    dz = -np.exp(full[mask])
    dz[np.arange(len(steps)), tokens] += 1.0
    return logps, backprop(params, states, kinds, dz)
