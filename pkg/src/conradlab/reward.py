"""Logarithmic scoring-rule rewards for verbalized confidence."""
from __future__ import annotations

import math
from dataclasses import dataclass

from conradlab.policy import INVALID, Rollout, Scenario
from conradlab.simgen import CorrectnessTargets, InvalidConfig


@dataclass(frozen=True)
class RewardConfig:
    lam: float = 100.0
    epsilon: float = 1e-3
    format_penalty: float = -1000.0

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidConfig("lambda", "must be > 0")
        if not 0 < self.epsilon < 0.5:
            raise InvalidConfig("epsilon", "must lie in (0, 0.5)")
        if not self.format_penalty < self.lam * math.log(self.epsilon):
            raise InvalidConfig("format_penalty",
                                f"must be below lambda*log(epsilon) = {self.lam * math.log(self.epsilon):.6g}")


def _check_unit(name: str, v: float) -> None:
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name}={v} outside [0, 1]")


def clip_confidence(p: float, epsilon: float) -> float:
    _check_unit("p", p)
    return min(max(p, epsilon), 1.0 - epsilon)


def _log_score(target: float, p: float, epsilon: float) -> float:
    q = clip_confidence(p, epsilon)
    return target * math.log(q) + (1.0 - target) * math.log(1.0 - q)


def reward_report(s: float, p_hat: float, cfg: RewardConfig = RewardConfig()) -> float:
    _check_unit("s", s)
    return cfg.lam * _log_score(s, p_hat, cfg.epsilon)


def reward_sentence(flags, p_hats, cfg: RewardConfig = RewardConfig()) -> float:
    flags, p_hats = list(flags), list(p_hats)
    if len(flags) != len(p_hats):
        raise ValueError(f"{len(flags)} flags but {len(p_hats)} confidences")
    if not flags:
        raise ValueError("sentence reward needs at least one sentence")
    if any(f not in (0, 1) for f in flags):
        raise ValueError("sentence flags must be 0 or 1")
    total = math.fsum(_log_score(f, p, cfg.epsilon) for f, p in zip(flags, p_hats))
    return cfg.lam * total / len(flags)


def is_scorable(rollout: Rollout) -> bool:
    """False only for sentence-level reports with no sentences (nothing to score)."""
    return rollout.scenario == Scenario.REPORT or bool(rollout.confidence_tokens)


def reward_rollout(rollout: Rollout, targets: CorrectnessTargets, scenario: Scenario,
                   cfg: RewardConfig = RewardConfig()) -> float:
    scenario = Scenario(scenario)
    if rollout.scenario != scenario:
        raise ValueError(f"{rollout.scenario.value} rollout scored as {scenario.value}")
    tokens = rollout.confidence_tokens
    if any(t == INVALID for t in tokens):
        return cfg.format_penalty
    if scenario == Scenario.REPORT:
        if len(tokens) != 1:
            return cfg.format_penalty
        return reward_report(targets.report_score, tokens[0] / 10, cfg)
    if len(targets.sentence_flags) != len(tokens):
        raise ValueError("sentence flags do not match the rollout's sentences")
    return reward_sentence(targets.sentence_flags, [t / 10 for t in tokens], cfg)
