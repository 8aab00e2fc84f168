import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from conradlab.policy import PolicyConfig, Scenario, init_policy  # noqa: E402
from conradlab.simgen import EnvConfig  # noqa: E402


@pytest.fixture
def env():
    return EnvConfig(feature_dim=5, num_findings=4, max_sentences=3, seed=11)


@pytest.fixture
def params(env):
    # larger head scale than the default so distributions are far from uniform
    cfg = PolicyConfig(hidden_dim=7, init_scale=0.8, seed=3)
    return init_policy(cfg, env.feature_dim, env.num_findings, env.max_sentences)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=[Scenario.REPORT, Scenario.SENTENCE])
def scenario(request):
    return request.param


class TrainedRun:
    """Default-config training run plus held-out evaluations of the
    untrained and trained policy, shared across test modules."""

    def __init__(self, scenario, seed=0, num_eval=1000):
        import time

        from conradlab.grpo import EVAL_BASE, evaluate_policy, train
        from conradlab.reward import RewardConfig
        from conradlab.grpo import GrpoConfig

        self.env = EnvConfig()
        self.policy_cfg = PolicyConfig(scenario=scenario)
        self.grpo_cfg = GrpoConfig()
        self.seed = seed
        self.base = init_policy(self.policy_cfg, self.env.feature_dim, self.env.num_findings,
                                self.env.max_sentences)
        t0 = time.perf_counter()
        self.trained, self.history = train(self.env, self.policy_cfg, RewardConfig(), self.grpo_cfg, seed)
        self.train_seconds = time.perf_counter() - t0
        self.eval_indices = range(EVAL_BASE, EVAL_BASE + num_eval)
        self.untrained_eval = evaluate_policy(self.base, self.env, scenario, self.eval_indices, seed)
        self.trained_eval = evaluate_policy(self.trained, self.env, scenario, self.eval_indices, seed)
        self.total_seconds = time.perf_counter() - t0


@pytest.fixture(scope="session")
def report_run():
    return TrainedRun(Scenario.REPORT)


@pytest.fixture(scope="session")
def sentence_run():
    # 1200 studies give comfortably more than 5000 sentences for the triage table
    return TrainedRun(Scenario.SENTENCE, num_eval=1200)
