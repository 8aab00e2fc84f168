import numpy as np
import pytest

from conradlab import calib
from conradlab.baselines import (
    ProbeConfig, TrueFalseReadout, compare_baselines, jaccard, p_true, probe_predict,
    self_consistency, sequence_probability, split_indices, train_probe, verbalize_base,
)
from conradlab.grpo import EVAL_BASE
from conradlab.policy import Kind, PolicyConfig, Rollout, Scenario, Step, init_policy, rollout
from conradlab.simgen import EnvConfig, sample_study


def _finding_rollout(probs, conf_prob=0.3):
    steps = [Step(i, Kind.FINDING, i, float(np.log(p)), None) for i, p in enumerate(probs)]
    steps.append(Step(len(steps), Kind.CONFIDENCE, 5, float(np.log(conf_prob)), None))
    return Rollout(0, Scenario.REPORT, steps, list(range(len(probs) - 1)), [5])


@pytest.mark.parametrize("probs, expected", [((0.5, 0.5), 0.5), ((1.0, 1.0), 1.0), ((0.9, 0.7, 0.8), 0.8)])
def test_sequence_probability_examples(probs, expected):
    assert sequence_probability(_finding_rollout(probs)) == pytest.approx(expected, abs=1e-12)


def test_sequence_probability_ignores_confidence_tokens():
    a = sequence_probability(_finding_rollout((0.9, 0.7), conf_prob=0.01))
    b = sequence_probability(_finding_rollout((0.9, 0.7), conf_prob=0.99))
    assert a == b


def test_sequence_probability_needs_findings():
    r = Rollout(0, Scenario.REPORT, [Step(0, Kind.CONFIDENCE, 3, -1.0, None)], [], [3])
    with pytest.raises(ValueError):
        sequence_probability(r)


def test_jaccard():
    assert jaccard(set(), set()) == 1.0
    assert jaccard({1, 2}, {2, 3}) == pytest.approx(1 / 3)


def test_verbalize_base_uniform_head():
    env = EnvConfig(feature_dim=5, num_findings=4, max_sentences=3)
    params = init_policy(PolicyConfig(init_scale=0.0), 5, 4, 3)
    res = verbalize_base(params, env, range(10_000), seed=0)
    assert len(res.records) == 10_000
    hist = calib.confidence_histogram(res.records)
    assert hist.max() / hist.min() < 2
    again = verbalize_base(params, env, range(10_000), seed=0)
    assert again.records == res.records


def test_p_true(params, env):
    study = sample_study(env, 0)
    r = rollout(params, study, Scenario.REPORT, np.random.default_rng(0))
    zero = TrueFalseReadout(np.zeros((2, 7)), np.zeros(2))
    assert p_true(params, study, r, zero) == 0.5
    ro = TrueFalseReadout.from_seed(4, 7)
    v = p_true(params, study, r, ro)
    assert 0 < v < 1
    assert v == p_true(params, study, r, TrueFalseReadout.from_seed(4, 7))


def test_self_consistency_extremes(env):
    params = init_policy(PolicyConfig(init_scale=0.0), 5, 4, 3)
    study = sample_study(env, 0)
    # STOP forced: every sample is the empty report
    params.b_find[params.stop_token] = 50.0
    empty = rollout(params, study, Scenario.REPORT, np.random.default_rng(0))
    assert empty.emitted_findings == []
    assert self_consistency(params, study, empty, 5, np.random.default_rng(1)) == 1.0
    target = Rollout(0, Scenario.REPORT, [], [0, 1], [5])
    assert self_consistency(params, study, target, 5, np.random.default_rng(1)) == 0.0


def test_self_consistency_is_mean_of_jaccards(params, env):
    study = sample_study(env, 3)
    target = rollout(params, study, Scenario.REPORT, np.random.default_rng(0))
    k = 6
    got = self_consistency(params, study, target, k, np.random.default_rng(9))
    from conradlab.policy import sample_report
    rng = np.random.default_rng(9)
    expected = np.mean([jaccard(target.emitted_findings, sample_report(params, study, rng)) for _ in range(k)])
    assert got == pytest.approx(expected, abs=1e-15)
    assert 0.0 <= got <= 1.0


def test_self_consistency_running_mean(params, env):
    study = sample_study(env, 3)
    target = rollout(params, study, Scenario.REPORT, np.random.default_rng(0))
    a = self_consistency(params, study, target, 10, np.random.default_rng(2))
    b = self_consistency(params, study, target, 11, np.random.default_rng(2))
    # one extra sample moves the mean by at most 1/(K+1)
    assert abs(a - b) <= 1 / 11 + 1e-12


def test_probe_constant_targets():
    h = np.tanh(np.random.default_rng(0).normal(size=(500, 32)))
    model = train_probe(h, np.full(500, 0.7))
    assert 0.6 <= float(np.mean(probe_predict(model, h))) <= 0.8


def test_probe_learns_linear_targets():
    rng = np.random.default_rng(0)
    h = np.tanh(rng.normal(size=(500, 32)))
    w = rng.normal(size=32)
    w *= 0.5 / np.std(h @ w)
    y = 1 / (1 + np.exp(-(h @ w)))
    model = train_probe(h, y)
    assert model.val_loss[0] > 0.01
    tr, va = split_indices(500, 0.2, 0)
    assert np.mean((probe_predict(model, h[va]) - y[va]) ** 2) < 0.01
    assert model.train_loss[-1] <= model.train_loss[0]


def test_probe_split_checks():
    h = np.zeros((10, 3))
    with pytest.raises(ValueError):
        train_probe(h, np.zeros(10), split=([0, 1, 2], [2, 3]))
    with pytest.raises(ValueError):
        train_probe(h, np.zeros(10), split=([0, 1], []))


def test_probe_predict_deterministic_and_open_interval():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(50, 4))
    m = train_probe(h, rng.random(50), cfg=ProbeConfig(max_epochs=2))
    p = probe_predict(m, h)
    np.testing.assert_array_equal(p, probe_predict(m, h))
    assert np.all((p > 0) & (p < 1))


def test_compare_baselines_shares_studies_and_targets(report_run):
    eval_idx = range(EVAL_BASE, EVAL_BASE + 60)
    rows, records = compare_baselines(report_run.base, report_run.trained, report_run.env, eval_idx,
                                      range(30_000_000, 30_000_200), seed=0, k=3)
    assert [r.method for r in rows] == ["verbalize_base", "sequence_probability", "p_true",
                                        "self_consistency", "trained_probe", "trained_policy"]
    base_methods = [m for m in records if m != "trained_policy"]
    targets = [[t for _, t in records[m]] for m in base_methods]
    assert all(len(t) == 60 for t in targets)
    assert all(t == targets[0] for t in targets)
    assert len({r.mean_oracle_score for r in rows[:-1]}) == 1
    for rec in records.values():
        assert all(0 <= c <= 1 for c, _ in rec)
