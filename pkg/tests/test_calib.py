import numpy as np
import pytest
from hypothesis import given, strategies as st

from conradlab import calib
from oracles import auroc_pairwise, ece_bruteforce, pearson_direct, spearman_direct

grid = st.integers(0, 10).map(lambda k: k / 10)
unit = st.floats(0.0, 1.0)
records = st.lists(st.tuples(st.one_of(grid, unit), unit), min_size=1, max_size=40)


def test_ece_examples():
    assert calib.ece([(0.7, 1), (0.7, 1), (0.7, 0), (0.7, 1)]) == pytest.approx(0.05, abs=1e-12)
    assert calib.ece([(c, c) for c in np.linspace(0, 1, 23)]) == pytest.approx(0.0, abs=1e-15)
    assert calib.ece([(1.0, 0.0)]) == 1.0


def test_ece_empty_rejected():
    with pytest.raises(ValueError):
        calib.ece([])


def test_confidence_one_in_last_bin():
    bins = calib.reliability_curve([(1.0, 1.0), (0.9, 1.0)], 10)
    assert bins[-1].count == 2


def test_bin_edges_partition_unit_interval():
    bins = calib.reliability_curve([(0.5, 0.5)], 10)
    assert bins[0].lower == 0.0 and bins[-1].upper == 1.0
    assert all(a.upper == b.lower for a, b in zip(bins, bins[1:]))


def test_single_bin_occupied():
    bins = calib.reliability_curve([(0.31, 0), (0.35, 1), (0.39, 1)], 10)
    assert [b.count for b in bins].count(0) == 9


@given(records)
def test_ece_recomputable_from_bins(recs):
    e = calib.ece(recs)
    assert e == pytest.approx(calib.ece_from_bins(calib.reliability_curve(recs)), abs=1e-12)
    assert 0.0 <= e <= 1.0


@given(records, st.randoms(use_true_random=False))
def test_ece_permutation_invariant(recs, rnd):
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert calib.ece(recs) == pytest.approx(calib.ece(shuffled), abs=1e-12)


@given(records)
def test_ece_matches_bruteforce(recs):
    conf, target = zip(*recs)
    assert abs(calib.ece(recs) - ece_bruteforce(conf, target)) < 1e-12


def test_pearson_examples():
    assert calib.pearson([(0, 0), (0.5, 0.5), (1, 1)]) == pytest.approx(1.0)
    assert calib.pearson([(0, 1), (1, 0)]) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        calib.pearson([(0.7, 0.1), (0.7, 0.9)])
    with pytest.raises(ValueError):
        calib.pearson([(0.7, 0.1)])


def test_spearman_examples():
    assert calib.spearman([(0, 0), (0.5, 0.5), (1, 1)]) == pytest.approx(1.0)
    assert calib.spearman([(0.1, 0.9), (0.2, 0.8), (0.3, 0.7)]) == pytest.approx(-1.0)


# a lattice keeps squaring strictly increasing in floating point
lattice = st.integers(0, 10**6).map(lambda k: k / 10**6)


@given(st.lists(st.tuples(lattice, unit), min_size=3, max_size=30, unique_by=lambda r: r[0]))
def test_spearman_rank_invariant(recs):
    if len({t for _, t in recs}) < 2:
        return
    squared = [(c * c, t) for c, t in recs]
    assert calib.spearman(recs) == pytest.approx(calib.spearman(squared), abs=1e-12)


def test_auroc_examples():
    assert calib.auroc([(0.9, 1), (0.8, 1), (0.1, 0)]) == 1.0
    assert calib.auroc([(0.5, 1), (0.5, 0), (0.5, 1), (0.5, 0)]) == 0.5
    assert calib.auroc([(0.2, 1), (0.9, 0)]) == 0.0


@pytest.mark.parametrize("recs", [[(0.2, 1), (0.3, 1)], [(0.2, 0.5), (0.3, 1)]])
def test_auroc_errors(recs):
    with pytest.raises(ValueError):
        calib.auroc(recs)


@given(st.lists(st.tuples(grid, st.sampled_from([0.0, 1.0])), min_size=2, max_size=40))
def test_auroc_monotone_transform_invariant(recs):
    if len({t for _, t in recs}) < 2:
        return
    warped = [(c ** 3, t) for c, t in recs]
    assert calib.auroc(recs) == pytest.approx(calib.auroc(warped), abs=1e-12)


def test_brier_examples():
    assert calib.brier([(0.3, 0.3), (0.8, 0.8)]) == 0.0
    assert calib.brier([(1.0, 0.0)]) == 1.0
    assert calib.brier([(0.7, 1.0)]) == pytest.approx(0.09, abs=1e-12)
    with pytest.raises(ValueError):
        calib.brier([])


def test_histogram_examples():
    np.testing.assert_array_equal(calib.confidence_histogram([(1.0, 0)] * 7), [0] * 10 + [7])
    np.testing.assert_array_equal(calib.confidence_histogram([]), np.zeros(11))
    with pytest.raises(ValueError):
        calib.confidence_histogram([(0.55, 1)])


@given(st.lists(st.tuples(grid, unit), max_size=50))
def test_histogram_sums_to_n(recs):
    assert calib.confidence_histogram(recs).sum() == len(recs)


def test_out_of_range_records_rejected():
    with pytest.raises(ValueError):
        calib.ece([(1.2, 0.5)])


def _random_records(rng, n, binary=False):
    conf = np.where(rng.random(n) < 0.5, rng.integers(0, 11, n) / 10, rng.random(n))
    target = rng.integers(0, 2, n).astype(float) if binary else rng.random(n)
    return conf.tolist(), target.tolist()


def metric_oracle_deltas(trials=1000, seed=0):
    """Largest |package - brute force| per metric over random small inputs."""
    rng = np.random.default_rng(seed)
    worst = dict(ece=0.0, auroc=0.0, pearson=0.0, spearman=0.0)
    for _ in range(trials):
        n = int(rng.integers(2, 30))
        conf, target = _random_records(rng, n)
        recs = list(zip(conf, target))
        worst["ece"] = max(worst["ece"], abs(calib.ece(recs) - ece_bruteforce(conf, target)))
        if len(set(conf)) > 1 and len(set(target)) > 1:
            worst["pearson"] = max(worst["pearson"], abs(calib.pearson(recs) - pearson_direct(conf, target)))
            worst["spearman"] = max(worst["spearman"],
                                    abs(calib.spearman(recs) - spearman_direct(conf, target)))
        conf, labels = _random_records(rng, n, binary=True)
        if 0 < sum(labels) < n:
            worst["auroc"] = max(worst["auroc"],
                                 abs(calib.auroc(list(zip(conf, labels))) - auroc_pairwise(conf, labels)))
    return worst


def test_metrics_match_oracles():
    worst = metric_oracle_deltas(200, seed=1)
    assert all(v < 1e-12 for v in worst.values()), worst
