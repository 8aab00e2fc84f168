"""Comparison confidence estimators, scored on the same reports and targets.

Every estimator reads the base (untrained) policy's reports; only the
confidence column differs between methods.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from conradlab import calib
from conradlab.grpo import EvalResult, evaluate_policy
from conradlab.policy import Kind, PolicyParams, Rollout, Scenario, hidden_state, \
    post_report_state, sample_report
from conradlab.simgen import EnvConfig, Study, seed_stream


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def verbalize_base(params: PolicyParams, env_cfg: EnvConfig, indices, seed: int,
                   scenario: Scenario = Scenario.REPORT) -> EvalResult:
    """Zero-shot verbalized confidence of the untrained policy."""
    return evaluate_policy(params, env_cfg, scenario, indices, seed, "eval")


def sequence_probability(rollout: Rollout) -> float:
    """Mean probability of the report tokens (findings and STOP), never the
    confidence tokens."""
    lp = [s.logprob for s in rollout.steps if s.kind == Kind.FINDING]
    if not lp:
        raise ValueError("rollout has no finding steps")
    return float(np.mean(np.exp(lp)))


@dataclass(frozen=True, eq=False)
class TrueFalseReadout:
    """Untrained two-way head on the hidden state: (True, False) logits."""
    weights: np.ndarray  # (2, hidden_dim)
    bias: np.ndarray

    @classmethod
    def from_seed(cls, seed: int, hidden_dim: int, scale: float = 1.0) -> "TrueFalseReadout":
        rng = seed_stream(seed, "p_true")
        return cls(rng.normal(0.0, scale, (2, hidden_dim)), np.zeros(2))


def p_true(params: PolicyParams, study: Study, rollout: Rollout, readout: TrueFalseReadout) -> float:
    h = hidden_state(params, post_report_state(params, study, rollout.emitted_findings))
    z = readout.weights @ h + readout.bias
    # two-class softmax == logistic of the logit gap
    return float(1.0 / (1.0 + np.exp(z[1] - z[0])))


def self_consistency(params: PolicyParams, study: Study, rollout: Rollout, k: int = 10,
                     rng: np.random.Generator = None) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if rng is None:
        rng = np.random.default_rng()
    target = rollout.emitted_findings
    return float(np.mean([jaccard(target, sample_report(params, study, rng)) for _ in range(k)]))


@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 1e-4
    max_epochs: int = 10
    patience: int = 2
    batch_size: int = 1
    val_fraction: float = 0.2
    seed: int = 0


@dataclass
class ProbeModel:
    weights: np.ndarray
    bias: float
    cfg: ProbeConfig = field(default_factory=ProbeConfig)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)


def probe_predict(model: ProbeModel, hidden) -> np.ndarray | float:
    z = np.asarray(hidden) @ model.weights + model.bias
    out = 1.0 / (1.0 + np.exp(-z))
    return float(out) if np.ndim(out) == 0 else out


def _mse(model, x, y) -> float:
    return float(np.mean((probe_predict(model, x) - y) ** 2))


def split_indices(n: int, val_fraction: float, seed: int) -> tuple:
    perm = seed_stream(seed, "probe_split").permutation(n)
    n_val = max(1, int(round(n * val_fraction)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_probe(hidden_states, targets, split=None, cfg: ProbeConfig = ProbeConfig()) -> ProbeModel:
    """Logistic readout fitted to continuous targets by MSE with Adam.

    The bias starts at the logit of the mean training target. Keeps the
    weights of the best validation epoch; stops after ``patience`` epochs
    without validation improvement.
    """
    x = np.asarray(hidden_states, dtype=float)
    y = np.asarray(targets, dtype=float)
    if split is None:
        split = split_indices(len(y), cfg.val_fraction, cfg.seed)
    tr, va = (np.asarray(s, dtype=int) for s in split)
    if tr.size == 0 or va.size == 0:
        raise ValueError("probe training needs non-empty train and validation splits")
    if np.intersect1d(tr, va).size:
        raise ValueError("train and validation splits overlap")
    m = float(np.clip(y[tr].mean(), 1e-3, 1 - 1e-3))
    model = ProbeModel(np.zeros(x.shape[1]), float(np.log(m / (1 - m))), cfg)
    model.train_loss.append(_mse(model, x[tr], y[tr]))
    model.val_loss.append(_mse(model, x[va], y[va]))
    best = (model.val_loss[0], model.weights.copy(), model.bias)
    theta = np.append(model.weights, model.bias)
    m1, m2 = np.zeros_like(theta), np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    rng = seed_stream(cfg.seed, "probe_batches")
    t, stale = 0, 0
    for _ in range(cfg.max_epochs):
        order = rng.permutation(tr)
        for i in range(0, order.size, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            xb = np.hstack([x[idx], np.ones((idx.size, 1))])
            pred = 1.0 / (1.0 + np.exp(-(xb @ theta)))
            dz = 2.0 * (pred - y[idx]) * pred * (1.0 - pred) / idx.size
            g = xb.T @ dz
            t += 1
            m1 = b1 * m1 + (1 - b1) * g
            m2 = b2 * m2 + (1 - b2) * g * g
            theta -= cfg.learning_rate * (m1 / (1 - b1 ** t)) / (np.sqrt(m2 / (1 - b2 ** t)) + eps)
        model.weights, model.bias = theta[:-1].copy(), float(theta[-1])
        model.train_loss.append(_mse(model, x[tr], y[tr]))
        model.val_loss.append(_mse(model, x[va], y[va]))
        if model.val_loss[-1] < best[0]:
            best, stale = (model.val_loss[-1], model.weights.copy(), model.bias), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.weights, model.bias = best[1], best[2]
    return model


@dataclass(frozen=True)
class BaselineRow:
    method: str
    ece: float
    correlation: float
    mean_oracle_score: float


def _hidden_features(params: PolicyParams, res: EvalResult) -> np.ndarray:
    return np.array([hidden_state(params, post_report_state(params, s, r.emitted_findings))
                     for s, r in zip(res.studies, res.rollouts)])


def _row(method, records, mean_score, num_bins) -> BaselineRow:
    try:
        corr = calib.pearson(records)
    except ValueError:
        corr = float("nan")
    return BaselineRow(method, calib.ece(records, num_bins), corr, mean_score)


def compare_baselines(base: PolicyParams, trained: PolicyParams, env_cfg: EnvConfig, eval_indices,
                      probe_indices, seed: int, k: int = 10, num_bins: int = 10,
                      probe_cfg: ProbeConfig = ProbeConfig()) -> tuple:
    """Report-level comparison table plus the per-method records.

    Returns ``(rows, records_by_method)``.
    """
    res = verbalize_base(base, env_cfg, eval_indices, seed)
    targets = res.report_scores
    records = {"verbalize_base": res.records}
    records["sequence_probability"] = [
        (sequence_probability(r), s) for r, s in zip(res.rollouts, targets)]
    readout = TrueFalseReadout.from_seed(seed, base.b_in.size)
    records["p_true"] = [
        (p_true(base, st, r, readout), s) for st, r, s in zip(res.studies, res.rollouts, targets)]
    records["self_consistency"] = [
        (self_consistency(base, st, r, k, seed_stream(seed, "self_consistency", st.id)), s)
        for st, r, s in zip(res.studies, res.rollouts, targets)]
    probe_res = evaluate_policy(base, env_cfg, Scenario.REPORT, probe_indices, seed, "probe_train")
    model = train_probe(_hidden_features(base, probe_res), probe_res.report_scores,
                        cfg=probe_cfg)
    records["trained_probe"] = list(zip(probe_predict(model, _hidden_features(base, res)), targets))
    rows = [_row(m, rec, res.mean_oracle_score, num_bins) for m, rec in records.items()]
    own = evaluate_policy(trained, env_cfg, Scenario.REPORT, eval_indices, seed, "eval")
    records["trained_policy"] = own.records
    rows.append(_row("trained_policy", own.records, own.mean_oracle_score, num_bins))
    return rows, records
