"""Group Relative Policy Optimization restricted to confidence tokens.

For each study a group of rollouts is sampled and scored; advantages are the
rewards standardized within the group. The update maximizes the clipped
importance-ratio surrogate minus a KL penalty toward a frozen reference, and
only confidence positions enter the objective.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from conradlab import calib
from conradlab.policy import (
    Kind, PolicyConfig, PolicyParams, Rollout, Scenario, backprop,
    head_log_probs, init_policy, rollout, snapshot_reference,
    zero_grad,
)
from conradlab.parallel import parallel_map
from conradlab.reward import RewardConfig, is_scorable, reward_rollout
from conradlab.simgen import (
    EnvConfig, InvalidConfig, Study, correctness_targets, sample_study, seed_stream,
)

log = logging.getLogger(__name__)

# disjoint study-index ranges; training uses [0, num_studies)
PROBE_BASE = 10_000_000
EVAL_BASE = 20_000_000


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    clip_range: float = 0.2
    kl_coeff: float = 0.2
    learning_rate: float = 3e-2
    epochs_per_batch: int = 1
    std_floor: float = 1e-8
    num_studies: Optional[int] = None  # None: 3000 report-level, 1500 sentence-level
    batch_size: int = 1
    probe_every: int = 200
    num_probe_studies: int = 500
    early_stop_patience: int = 5  # probes without improvement; 0 disables
    early_stop_delta: float = 1e-3
    ref_refresh_every: int = 0  # 0 = reference stays the initial policy

    def __post_init__(self):
        if self.group_size < 2:
            raise InvalidConfig("group_size", "must be >= 2")
        if not 0 < self.clip_range < 1:
            raise InvalidConfig("clip_range", "must lie in (0, 1)")
        if not self.kl_coeff >= 0:
            raise InvalidConfig("kl_coeff", "must be >= 0")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate", "must be > 0")
        if self.epochs_per_batch < 1:
            raise InvalidConfig("epochs_per_batch", "must be >= 1")
        if not self.std_floor > 0:
            raise InvalidConfig("std_floor", "must be > 0")
        if self.num_studies is not None and self.num_studies < 0:
            raise InvalidConfig("num_studies", "must be >= 0")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size", "must be >= 1")
        if self.probe_every < 1:
            raise InvalidConfig("probe_every", "must be >= 1")
        if self.num_probe_studies < 1:
            raise InvalidConfig("num_probe_studies", "must be >= 1")
        if self.early_stop_patience < 0:
            raise InvalidConfig("early_stop_patience", "must be >= 0")
        if self.ref_refresh_every < 0:
            raise InvalidConfig("ref_refresh_every", "must be >= 0")

    def studies_for(self, scenario: Scenario) -> int:
        if self.num_studies is not None:
            return self.num_studies
        return 3000 if Scenario(scenario) == Scenario.REPORT else 1500


@dataclass
class Group:
    study: Study
    rollouts: list
    rewards: np.ndarray  # nan for unscorable rollouts
    advantages: np.ndarray


@dataclass(frozen=True)
class StepStats:
    mean_reward: float
    mean_kl: float
    clip_fraction: float


@dataclass(frozen=True)
class BatchStats:
    batch: int
    mean_reward: float
    mean_kl: float
    clip_fraction: float
    probe_ece: float = float("nan")


@dataclass
class TrainingHistory:
    batches: list = field(default_factory=list)
    stopped_early: bool = False
    state: Optional["TrainState"] = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(b, name) for b in self.batches], dtype=float)


def compute_advantages(rewards, std_floor: float = 1e-8) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("a group needs at least two rewards")
    std = r.std()
    if std < std_floor:
        return np.zeros_like(r)
    return (r - r.mean()) / max(std, std_floor)


def score_group(study: Study, rollouts: list, scenario: Scenario, reward_cfg: RewardConfig,
                std_floor: float) -> Group:
    """Rewards and advantages for one group.

    Sentence-level reports with no sentences carry no confidence token; they
    get a nan reward, zero advantage, and stay out of the group statistics.
    """
    rewards = np.full(len(rollouts), np.nan)
    for i, r in enumerate(rollouts):
        if is_scorable(r):
            targets = correctness_targets(r.emitted_findings, study.truth)
            rewards[i] = reward_rollout(r, targets, scenario, reward_cfg)
    adv = np.zeros(len(rollouts))
    ok = ~np.isnan(rewards)
    if ok.sum() >= 2:
        adv[ok] = compute_advantages(rewards[ok], std_floor)
    return Group(study, rollouts, rewards, adv)


def _gather(groups) -> tuple:
    states, tokens, behav, adv = [], [], [], []
    n_rollouts = 0
    for g in groups:
        for r, a in zip(g.rollouts, g.advantages):
            n_rollouts += 1
            for s in r.steps:
                if s.kind == Kind.CONFIDENCE:
                    states.append(s.state)
                    tokens.append(s.token)
                    behav.append(s.logprob)
                    adv.append(a)
    return (np.array(states), np.array(tokens, dtype=int), np.array(behav),
            np.array(adv), n_rollouts)


def objective_grad(params: PolicyParams, reference: PolicyParams, groups, cfg: GrpoConfig):
    """Gradient of the surrogate objective, plus (mean KL, clipped count, row count)."""
    states, tokens, behav, adv, n_rollouts = _gather(groups)
    if len(states) == 0:
        return zero_grad(params), 0.0, 0, 0
    n = len(states)
    logp = head_log_probs(params, states, Kind.CONFIDENCE)
    logq = head_log_probs(reference, states, Kind.CONFIDENCE)
    p = np.exp(logp)
    rows = np.arange(n)
    ratio = np.exp(logp[rows, tokens] - behav)
    c = cfg.clip_range
    clipped = ((adv > 0) & (ratio > 1 + c)) | ((adv < 0) & (ratio < 1 - c))
    onehot = np.zeros_like(p)
    onehot[rows, tokens] = 1.0
    # d/dz of ratio * A where ratio = exp(logp - behav); zero where the clip is active
    coef = np.where(clipped, 0.0, adv * ratio)
    dz = coef[:, None] * (onehot - p)
    kl = np.sum(p * (logp - logq), axis=1)
    if cfg.kl_coeff:
        dz -= cfg.kl_coeff * p * ((logp - logq) - kl[:, None])
    dz /= n_rollouts
    grad = backprop(params, states, np.full(n, int(Kind.CONFIDENCE)), dz)
    return grad, float(kl.mean()), int(clipped.sum()), n


def _apply(params: PolicyParams, grad: PolicyParams, lr: float) -> PolicyParams:
    out = snapshot_reference(params)
    for a, g in zip(out.arrays(), grad.arrays()):
        a += lr * g
    return out


def grpo_step(params: PolicyParams, reference: PolicyParams, groups, cfg: GrpoConfig):
    """One batch update: ``epochs_per_batch`` plain gradient-ascent steps."""
    if not groups:
        raise ValueError("grpo_step needs at least one group")
    rewards = np.concatenate([g.rewards for g in groups])
    mean_reward = float(np.nanmean(rewards)) if np.any(~np.isnan(rewards)) else float("nan")
    mean_kl, n_clipped, n_rows = 0.0, 0, 0
    for epoch in range(cfg.epochs_per_batch):
        grad, kl, clipped, rows = objective_grad(params, reference, groups, cfg)
        if epoch == 0:
            mean_kl = kl
        n_clipped += clipped
        n_rows += rows
        params = _apply(params, grad, cfg.learning_rate)
    clip_fraction = n_clipped / n_rows if n_rows else 0.0
    return params, StepStats(mean_reward, mean_kl, clip_fraction)


def mean_kl_to(params: PolicyParams, reference: PolicyParams, states) -> float:
    states = np.atleast_2d(states)
    logp = head_log_probs(params, states, Kind.CONFIDENCE)
    logq = head_log_probs(reference, states, Kind.CONFIDENCE)
    return float(np.mean(np.sum(np.exp(logp) * (logp - logq), axis=1)))


@dataclass
class EvalResult:
    studies: list
    rollouts: list
    records: list            # (confidence, target) per report or per sentence
    report_scores: np.ndarray

    @property
    def mean_oracle_score(self) -> float:
        return float(np.mean(self.report_scores))


def evaluate_policy(params: PolicyParams, env_cfg: EnvConfig, scenario: Scenario, indices,
                    seed: int, purpose: str = "eval") -> EvalResult:
    """One constrained-decoding rollout per study, scored by the oracles.

    Each study draws from its own stream keyed by (seed, purpose, index), so
    two policies evaluated with the same arguments see common random numbers.
    """
    scenario = Scenario(scenario)

    def one(i):
        study = sample_study(env_cfg, int(i))
        r = rollout(params, study, scenario, seed_stream(seed, purpose, int(i)), allow_invalid=False)
        return study, r, correctness_targets(r.emitted_findings, study.truth)

    studies, rollouts, records, scores = [], [], [], []
    for study, r, t in parallel_map(one, indices):
        if scenario == Scenario.REPORT:
            records.append((r.confidences()[0], t.report_score))
        else:
            records.extend(zip(r.confidences(), map(float, t.sentence_flags)))
        studies.append(study)
        rollouts.append(r)
        scores.append(t.report_score)
    return EvalResult(studies, rollouts, records, np.array(scores))


def probe_ece(params, env_cfg, scenario, cfg: GrpoConfig, seed: int) -> float:
    idx = range(PROBE_BASE, PROBE_BASE + cfg.num_probe_studies)
    # same streams at every probe so successive values differ only through params
    res = evaluate_policy(params, env_cfg, scenario, idx, seed, "probe")
    return calib.ece(res.records) if res.records else float("nan")


@dataclass
class TrainState:
    """Everything needed to resume: the per-study rollout streams are keyed by
    study index, so no generator state has to be carried over."""
    params: PolicyParams
    reference: PolicyParams
    next_batch: int = 0
    best_probe: float = math.inf
    stale_probes: int = 0


def train(env_cfg: EnvConfig, policy_cfg: PolicyConfig, reward_cfg: RewardConfig,
          grpo_cfg: GrpoConfig, seed: int, params: Optional[PolicyParams] = None,
          on_batch: Optional[Callable[[BatchStats], None]] = None,
          resume: Optional[TrainState] = None, max_batches: Optional[int] = None):
    """Single pass over the training studies in seeded order.

    The reference policy is the starting policy (refreshed every
    ``ref_refresh_every`` batches if set). With ``early_stop_patience`` > 0,
    training stops once the probe ECE has failed to improve by
    ``early_stop_delta`` for that many consecutive probes.

    Returns ``(params, history)``; ``history.state`` resumes an interrupted run.
    """
    scenario = policy_cfg.scenario
    if resume is None:
        if params is None:
            params = init_policy(policy_cfg, env_cfg.feature_dim, env_cfg.num_findings,
                                 env_cfg.max_sentences)
        resume = TrainState(snapshot_reference(params), snapshot_reference(params))
    state = TrainState(snapshot_reference(resume.params), snapshot_reference(resume.reference),
                       resume.next_batch, resume.best_probe, resume.stale_probes)
    history = TrainingHistory(state=state)
    n = grpo_cfg.studies_for(scenario)
    order = seed_stream(seed, "order").permutation(n)
    batches = [order[i:i + grpo_cfg.batch_size] for i in range(0, n, grpo_cfg.batch_size)]
    end = len(batches) if max_batches is None else min(len(batches), state.next_batch + max_batches)
    for b in range(state.next_batch, end):
        groups = []
        for i in batches[b]:
            study = sample_study(env_cfg, int(i))
            rng = seed_stream(seed, "rollout", int(i))
            rolls = [rollout(state.params, study, scenario, rng) for _ in range(grpo_cfg.group_size)]
            groups.append(score_group(study, rolls, scenario, reward_cfg, grpo_cfg.std_floor))
        state.params, st = grpo_step(state.params, state.reference, groups, grpo_cfg)
        if not all(np.all(np.isfinite(a)) for a in state.params.arrays()):
            raise FloatingPointError(f"non-finite parameters after batch {b}")
        state.next_batch = b + 1
        pe = float("nan")
        last = b == len(batches) - 1
        if (b + 1) % grpo_cfg.probe_every == 0 or last:
            pe = probe_ece(state.params, env_cfg, scenario, grpo_cfg, seed)
        row = BatchStats(b, st.mean_reward, st.mean_kl, st.clip_fraction, pe)
        history.batches.append(row)
        if on_batch is not None:
            on_batch(row)
        if grpo_cfg.ref_refresh_every and (b + 1) % grpo_cfg.ref_refresh_every == 0:
            state.reference = snapshot_reference(state.params)
        if grpo_cfg.early_stop_patience and not math.isnan(pe) and not last:
            if pe < state.best_probe - grpo_cfg.early_stop_delta:
                state.best_probe, state.stale_probes = pe, 0
            else:
                state.stale_probes += 1
                if state.stale_probes >= grpo_cfg.early_stop_patience:
                    log.info("early stop at batch %d (probe ECE %.4f)", b, pe)
                    history.stopped_early = True
                    state.next_batch = len(batches)
                    break
    return snapshot_reference(state.params), history
