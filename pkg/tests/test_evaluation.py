import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

import oracles
from rl2r.evaluation import (GmadPair, UndefinedMetricError, adjudicate, gmad_pairs,
                             metric_report, plcc, quantile_bins, score_std_curve, srcc,
                             write_std_curve_csv)
from rl2r.grpo import StepRecord, TrainRunLog


def test_srcc_examples():
    x = [0.3, 1.2, 5.0, 2.2]
    assert srcc(x, x) == 1.0
    assert srcc(x, [-v for v in x]) == -1.0
    assert srcc([1, 2, 2, 4], [1, 3, 2, 4]) == pytest.approx(
        oracles.spearman([1, 2, 2, 4], [1, 3, 2, 4]), abs=1e-12)


def test_plcc_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(size=10)
    assert plcc(x, 2 * x + 3) == pytest.approx(1.0, abs=1e-15)
    assert plcc(x, -x) == pytest.approx(-1.0, abs=1e-15)
    y = rng.normal(size=10)
    assert plcc(x, y) == pytest.approx(oracles.pearson(list(x), list(y)), abs=1e-12)


def test_undefined_metrics():
    with pytest.raises(UndefinedMetricError):
        srcc([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedMetricError):
        plcc([1, 2, 3], [4, 4, 4])
    with pytest.raises(UndefinedMetricError):
        srcc([1], [1])
    with pytest.raises(ValueError):
        plcc([1, 2], [1, 2, 3])


@settings(max_examples=100)
@given(st.data())
def test_metric_invariances(data):
    n = data.draw(st.integers(3, 15))
    x = np.array(data.draw(st.lists(st.integers(-5, 5), min_size=n, max_size=n)), float)
    # integer grid keeps y ** 3 and the affine maps free of underflow
    y = np.array(data.draw(st.lists(st.integers(-1000, 1000), min_size=n, max_size=n)), float) / 100
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return
    s = srcc(x, y)
    assert srcc(y, x) == pytest.approx(s, abs=1e-12)
    assert srcc(np.exp(x / 3) + 2, y) == pytest.approx(s, abs=1e-12)
    assert srcc(x, y ** 3) == pytest.approx(s, abs=1e-12)
    p = plcc(x, y)
    assert plcc(y, x) == pytest.approx(p, abs=1e-12)
    assert plcc(3 * x + 1, 0.5 * y - 2) == pytest.approx(p, abs=1e-9)


def test_metric_report():
    r = metric_report([1, 2, 3, 4], [1, 2, 4, 3])
    assert r.n == 4 and r.srcc == pytest.approx(0.8)


def test_std_curve(tmp_path):
    log = TrainRunLog()
    for s in range(3):
        log.append(StepRecord(step=s, epoch=0, objective=0.0, mean_reward=0.5,
                              mean_score_std=0.4, kl_mean=0.0, clip_fraction=0.0))
    curve = score_std_curve(log)
    assert curve == [(0, 0.4), (1, 0.4), (2, 0.4)]
    assert score_std_curve(TrainRunLog(log.records[:1])) == [(0, 0.4)]
    with pytest.raises(ValueError):
        score_std_curve(TrainRunLog())
    write_std_curve_csv(curve, tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "step,mean_std"


def test_quantile_bins_by_hand():
    scores = {"a": 1.0, "b": 4.0, "c": 2.0, "d": 3.0}
    assert quantile_bins(scores, 2) == [["a", "c"], ["d", "b"]]
    assert quantile_bins(scores, 4) == [["a"], ["c"], ["d"], ["b"]]


def test_gmad_hand_example():
    defender = {"a": 1.0, "b": 4.0, "c": 1.05, "d": 3.9}
    attacker = {"a": 0.0, "b": 2.0, "c": 3.0, "d": 2.5}
    res = gmad_pairs(defender, attacker, 2, tolerance=0.2)
    assert res.pairs == [
        GmadPair(0, "a", "c", pytest.approx(0.05), 3.0),
        GmadPair(1, "b", "d", pytest.approx(0.1), 0.5),
    ]


def test_gmad_attacker_equals_defender():
    rng = np.random.default_rng(1)
    ids = [f"i{n:02d}" for n in range(40)]
    d = dict(zip(ids, rng.normal(size=40)))
    res = gmad_pairs(d, d, 4, tolerance=0.05)
    assert res.pairs
    assert all(p.attacker_gap <= 0.05 for p in res.pairs)


def test_gmad_negated_attacker_exhaustive():
    rng = np.random.default_rng(2)
    ids = [f"i{n:02d}" for n in range(50)]
    d = dict(zip(ids, rng.uniform(0, 1, 50)))
    a = {k: -v for k, v in d.items()}
    res = gmad_pairs(d, a, 1, tolerance=0.01)
    brute = oracles.gmad_brute(d, a, 1, 0.01)
    (p,) = res.pairs
    assert (p.image_a, p.image_b) == brute[0]
    assert p.defender_gap <= 0.01


def test_bins_mirror_under_reversal():
    scores = {f"i{n}": float(n) for n in range(10)}
    neg = {k: -v for k, v in scores.items()}
    for levels in (1, 2, 3, 5, 10):
        fwd = [set(b) for b in quantile_bins(scores, levels)]
        rev = [set(b) for b in quantile_bins(neg, levels)][::-1]
        assert fwd == rev, levels


def test_gmad_matches_brute_force():
    rng = np.random.default_rng(8)
    ids = [f"i{n:02d}" for n in range(50)]
    for levels in (1, 3, 5, 7):
        d = dict(zip(ids, rng.uniform(1, 5, 50).round(1)))
        a = dict(zip(ids, rng.uniform(1, 5, 50)))
        res = gmad_pairs(d, a, levels, 0.1)
        assert {p.defender_level: (p.image_a, p.image_b) for p in res.pairs} == \
            oracles.gmad_brute(d, a, levels, 0.1)


def test_gmad_skips_small_bins():
    d = {"a": 1.0, "b": 2.0, "c": 3.0}
    res = gmad_pairs(d, d, 10, tolerance=1.0)
    assert res.pairs == []
    assert len(res.warnings) == 10


def test_gmad_key_mismatch():
    with pytest.raises(KeyError):
        gmad_pairs({"a": 1, "b": 2}, {"a": 1, "c": 2}, 1, 1.0)


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_gmad_negation_symmetry(seed, levels):
    # a rank midpoint sitting on a boundary cannot be mirrored by any equal-count rule
    assume(all((2 * r + 1) * levels % 60 for r in range(30)))
    rng = np.random.default_rng(seed)
    ids = [f"i{n:02d}" for n in range(30)]
    d = dict(zip(ids, rng.normal(size=30)))
    a = dict(zip(ids, rng.normal(size=30)))
    res = gmad_pairs(d, a, levels, tolerance=0.3)
    neg = gmad_pairs({k: -v for k, v in d.items()}, {k: -v for k, v in a.items()}, levels, 0.3)
    fwd = {p.defender_level: {p.image_a, p.image_b} for p in res.pairs}
    rev = {levels - 1 - p.defender_level: {p.image_a, p.image_b} for p in neg.pairs}
    assert fwd == rev


def test_adjudicate():
    pairs = [GmadPair(0, "a", "b", 0.0, 1.0), GmadPair(1, "c", "d", 0.0, 1.0)]
    attacker = {"a": 2.0, "b": 1.0, "c": 0.0, "d": 1.0}
    truth = {"a": 5.0, "b": 1.0, "c": 1.0, "d": 0.0}
    assert adjudicate(pairs, attacker, truth) == 0.5
