import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conradlab.simgen import (
    EnvConfig, InvalidConfig, correctness_targets, green_surrogate, precision_green, sample_study,
    seed_stream, shift_distribution, simulate_raters,
)

finding_sets = st.frozensets(st.integers(0, 11), max_size=12)


def test_sample_study_deterministic():
    cfg = EnvConfig(seed=7)
    a, b = sample_study(cfg, 3), sample_study(cfg, 3)
    assert a == b
    assert a.features.tobytes() == b.features.tobytes()


def test_sample_study_differs_by_index_and_seed():
    cfg = EnvConfig(seed=7)
    assert sample_study(cfg, 3) != sample_study(cfg, 4)
    assert sample_study(cfg, 3) != sample_study(EnvConfig(seed=8), 3)


@pytest.mark.parametrize("bias, expected", [(10.0, set(range(12))), (-10.0, set())])
def test_bias_dominates(bias, expected):
    cfg = EnvConfig(truth_bias=np.full(12, bias), truth_weights=np.full((12, 16), 0.01))
    for i in range(20):
        assert sample_study(cfg, i).truth == expected


def test_truth_follows_linear_rule():
    cfg = EnvConfig(seed=2)
    for i in range(50):
        s = sample_study(cfg, i)
        score = cfg.truth_weights @ s.features + cfg.truth_bias
        assert s.truth == {j for j in range(12) if score[j] > 0}
        assert np.all(np.isfinite(s.features))


def test_truth_sets_vary_in_size():
    cfg = EnvConfig()
    sizes = [len(sample_study(cfg, i).truth) for i in range(500)]
    # the shared severity direction spreads sizes over most of the range
    assert min(sizes) <= 2 and max(sizes) >= 10


def test_negative_index_rejected():
    with pytest.raises(ValueError):
        sample_study(EnvConfig(), -1)


@pytest.mark.parametrize("kwargs, field", [
    ({"feature_dim": 0}, "feature_dim"),
    ({"num_findings": 1}, "num_findings"),
    ({"max_sentences": 0}, "max_sentences"),
    ({"seed": -1}, "seed"),
    ({"truth_weights": np.zeros((3, 16))}, "truth_weights"),
    ({"truth_bias": np.zeros(5)}, "truth_bias"),
    ({"shift_offset": np.zeros(3)}, "shift_offset"),
    ({"truth_bias": np.full(12, np.nan)}, "truth_bias"),
])
def test_env_config_invariants(kwargs, field):
    with pytest.raises(InvalidConfig) as err:
        EnvConfig(**kwargs)
    assert err.value.field == field


def test_env_arrays_read_only():
    cfg = EnvConfig()
    with pytest.raises(ValueError):
        cfg.truth_weights[0, 0] = 1.0


def test_shift_zero_is_identity():
    cfg = EnvConfig(seed=4)
    assert shift_distribution(cfg, np.zeros(16)) == cfg


def test_shift_replaces_rather_than_accumulates():
    cfg = EnvConfig()
    e1 = np.eye(16)[0]
    twice = shift_distribution(shift_distribution(cfg, e1), e1)
    np.testing.assert_array_equal(twice.shift_offset, e1)


def test_shift_is_additive_and_keeps_rule():
    cfg = EnvConfig(seed=5)
    off = np.linspace(-1, 1, 16)
    shifted = shift_distribution(cfg, off)
    np.testing.assert_array_equal(shifted.truth_weights, cfg.truth_weights)
    np.testing.assert_array_equal(shifted.truth_bias, cfg.truth_bias)
    for i in range(10):
        np.testing.assert_array_equal(sample_study(shifted, i).features,
                                      sample_study(cfg, i).features + off)


@pytest.mark.parametrize("offset", [np.zeros(3), np.full(16, np.inf)])
def test_shift_rejects_bad_offsets(offset):
    with pytest.raises(ValueError):
        shift_distribution(EnvConfig(), offset)


def test_green_examples():
    assert green_surrogate({0, 1}, {0, 2}) == pytest.approx(1 / 3, abs=1e-12)
    assert green_surrogate({3, 4}, {3, 4}) == 1.0
    assert green_surrogate(set(), {0}) == 0.0
    assert green_surrogate(set(), set()) == 1.0


@given(finding_sets, finding_sets)
def test_green_properties(a, b):
    g = green_surrogate(a, b)
    assert 0.0 <= g <= 1.0
    assert g == green_surrogate(b, a)
    assert (g == 1.0) == (a == b)


@given(finding_sets, finding_sets, st.integers(0, 11))
def test_adding_false_finding_lowers_green(emitted, truth, extra):
    if extra in truth or extra in emitted:
        return
    before, after = green_surrogate(emitted, truth), green_surrogate(emitted | {extra}, truth)
    if emitted & truth or not (emitted or truth):
        assert after < before
    else:
        # nothing matched: the score is already 0
        assert after == before == 0.0


@given(finding_sets, finding_sets)
def test_count_identity(emitted, truth):
    assert len(emitted & truth) + len(emitted - truth) == len(emitted)


def test_precision_green_examples():
    assert precision_green(0, {0, 2}) == 1
    assert precision_green(1, {0, 2}) == 0
    assert precision_green(5, set()) == 0


def test_correctness_targets():
    t = correctness_targets([0, 1], {0, 2})
    assert t.report_score == pytest.approx(1 / 3)
    assert t.sentence_flags == (1, 0)


@pytest.mark.parametrize("finding, truth, expected", [(0, {0}, 5), (1, {0}, 1)])
def test_raters_noiseless(finding, truth, expected):
    panel = simulate_raters([finding], truth, 3, 0.0, 0)
    assert panel.tolist() == [[expected] * 3]


def test_raters_deterministic_and_bounded():
    a = simulate_raters([0, 1, 2, 3], {0, 2}, 5, 1.0, [9, 1])
    b = simulate_raters([0, 1, 2, 3], {0, 2}, 5, 1.0, [9, 1])
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 1 and a.max() <= 5
    # with noise 1 every cell moves one step, clamped at the ends
    assert set(a[[0, 2]].ravel()) <= {4, 5}
    assert set(a[[1, 3]].ravel()) <= {1, 2}


def test_raters_empty_report():
    assert simulate_raters([], {0}, 3, 0.5, 0).shape == (0, 3)


def test_seed_stream_separates_purposes():
    a = seed_stream(1, "rollout", 5).random(4)
    b = seed_stream(1, "eval", 5).random(4)
    c = seed_stream(1, "rollout", 5).random(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, c)


@settings(max_examples=30)
@given(st.integers(0, 2**32), st.integers(0, 10_000))
def test_features_finite_for_any_seed(seed, index):
    s = sample_study(EnvConfig(seed=seed), index)
    assert np.all(np.isfinite(s.features))
    assert s.truth <= set(range(12))
