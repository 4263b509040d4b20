import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from abfrkan import evaluation as E
from abfrkan.model import ModelConfig, TrainSpec
from abfrkan.sampling import SubjectRepresentation


def pair_count_auc(y, s):
    pos = [b for a, b in zip(y, s) if a == 1]
    neg = [b for a, b in zip(y, s) if a == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


# --- metrics ------------------------------------------------------------------------

def test_perfect_predictions():
    m = E.metrics_from([1, 0, 1, 0], [1, 0, 1, 0], [0.9, 0.2, 0.8, 0.1])
    assert all(v == 1.0 for v in m.as_dict().values())
    assert m.flags == ()


def test_all_positive_predictor():
    m = E.metrics_from([1, 1, 0, 0], [1, 1, 1, 1], [0.7, 0.6, 0.6, 0.5])
    assert (m.recall, m.specificity, m.acc) == (1.0, 0.0, 0.5)


def test_all_negative_predictor_flags_precision():
    m = E.metrics_from([1, 0], [0, 0], [0.1, 0.2])
    assert m.precision == 0.0 and "precision" in m.flags and "f1" in m.flags


def test_auc_examples():
    assert E.auc([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.1]) == 1.0
    assert E.auc([0, 0, 1, 1], [0.9, 0.8, 0.3, 0.1]) == 0.0
    assert E.auc([1, 0, 1, 0], [0.4] * 4) == 0.5
    with pytest.raises(E.MetricError):
        E.auc([1, 1], [0.1, 0.2])


def test_single_class_metric_set_flags_auc():
    m = E.metrics_from([1, 1], [1, 0], [0.9, 0.1])
    assert m.auc == 0.0 and "auc" in m.flags


def test_length_mismatch():
    with pytest.raises(E.MetricError):
        E.metrics_from([1, 0], [1], [0.5, 0.5])
    with pytest.raises(E.MetricError):
        E.metrics_from([1, 0], [1, 0], [0.5])


@given(st.integers(0, 2**32), st.integers(2, 40))
def test_auc_matches_pair_count(seed, n):
    r = np.random.default_rng(seed)
    y = r.integers(0, 2, n)
    y[0], y[1] = 0, 1
    s = r.integers(0, 5, n) / 4.0  # coarse scores force ties
    assert E.auc(y, s) == pair_count_auc(y.tolist(), s.tolist())


def test_auc_random_twenty_point_case():
    r = np.random.default_rng(20)
    y = np.array([0, 1] * 10)
    s = r.normal(size=20)
    assert E.auc(y, s) == pair_count_auc(y.tolist(), s.tolist())


@given(st.integers(0, 2**32))
def test_auc_monotone_invariance(seed):
    r = np.random.default_rng(seed)
    y = np.array([0, 1] * 8)
    s = r.normal(size=16)
    for f in (np.exp, lambda v: 3 * v - 2, lambda v: np.tanh(v / 4)):
        assert E.auc(y, f(s)) == E.auc(y, s)


def test_metrics_match_brute_force():
    r = np.random.default_rng(0)
    for _ in range(1000):
        n = int(r.integers(1, 30))
        y = r.integers(0, 2, n)
        p = r.integers(0, 2, n)
        s = r.random(n)
        m = E.metrics_from(y, p, s)
        tp = fp = tn = fn = 0
        for a, b in zip(y, p):
            if b == 1 and a == 1:
                tp += 1
            elif b == 1:
                fp += 1
            elif a == 0:
                tn += 1
            else:
                fn += 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        spe = tn / (tn + fp) if tn + fp else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        assert m.acc == (tp + tn) / n
        assert (m.precision, m.recall, m.specificity) == (prec, rec, spe)
        assert m.f1 == pytest.approx(f1, abs=1e-15)
        if 0 < y.sum() < n:
            assert m.auc == pytest.approx(pair_count_auc(y.tolist(), s.tolist()), abs=1e-15)


@given(st.integers(0, 2**32), st.integers(1, 20))
def test_balanced_accuracy_identity(seed, half):
    r = np.random.default_rng(seed)
    y = np.array([0] * half + [1] * half)
    p = r.integers(0, 2, 2 * half)
    m = E.metrics_from(y, p, r.random(2 * half))
    assert abs(m.acc - (m.recall + m.specificity) / 2) <= 1e-15


def test_aggregate_population_std():
    sets = [E.MetricSet(a, 0.5, 0.5, 0.5, 0.5, 0.5) for a in (0.6, 0.8)]
    mean, std = E.aggregate(sets)
    assert mean["acc"] == pytest.approx(0.7) and std["acc"] == pytest.approx(0.1)
    assert E.aggregate(sets, ddof=1)[1]["acc"] == pytest.approx(0.1 * math.sqrt(2))


# --- t-test ------------------------------------------------------------------------------

def test_ttest_textbook_example():
    res = E.paired_t_one_tailed([1, 2, 3, 4, 5], [0] * 5)
    assert res.t == pytest.approx(4.2426, abs=1e-4)
    assert res.p == pytest.approx(0.0066, abs=1e-4)
    assert res.dof == 4 and not res.degenerate


def test_ttest_degenerate_cases():
    same = E.paired_t_one_tailed([0.7, 0.8], [0.7, 0.8])
    assert same.degenerate and same.t == 0.0 and same.p == 1.0
    shifted = E.paired_t_one_tailed([2, 3], [1, 2])
    assert shifted.degenerate and shifted.p == 0.0
    with pytest.raises(E.MetricError):
        E.paired_t_one_tailed([1], [0])


# one-tailed 0.05 / 0.025 / 0.005 critical values from a standard t-table
T_TABLE = [(1, 6.314, 0.05), (1, 12.706, 0.025), (4, 2.132, 0.05), (4, 2.776, 0.025),
           (4, 4.604, 0.005), (9, 1.833, 0.05), (9, 3.250, 0.005), (30, 2.042, 0.025)]


@pytest.mark.parametrize("dof,t,p", T_TABLE)
def test_t_tail_table_values(dof, t, p):
    assert abs(E.student_t_sf(t, dof) - p) <= 1e-4


@given(st.floats(-8, 8), st.integers(1, 60))
def test_t_tail_matches_reference(t, dof):
    assert abs(E.student_t_sf(t, dof) - stats.t.sf(t, dof)) <= 1e-6


@given(st.floats(0.1, 20), st.floats(0.1, 20), st.floats(0, 1))
def test_betainc_matches_reference(a, b, x):
    from scipy.special import betainc
    assert abs(E.betainc(a, b, x) - betainc(a, b, x)) <= 1e-9


# --- CSV files ------------------------------------------------------------------------------

def test_metrics_csv_roundtrip(tmp_path):
    sets = [E.MetricSet(0.5 + i / 10, 0.6, 0.7, 0.8, 0.9, 0.1 * i) for i in range(5)]
    E.write_metrics_csv(tmp_path / "m.csv", sets)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "fold,acc,auc,f1,precision,recall,specificity"
    back = E.read_metrics_csv(tmp_path / "m.csv")
    assert back["acc"].tolist() == [s.acc for s in sets]
    E.write_summary_csv(tmp_path / "s.csv", sets)
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows] == ["stat", "mean", "std"]


def test_read_metrics_rejects_missing_columns(tmp_path):
    (tmp_path / "m.csv").write_text("fold,acc\n0,0.5\n")
    with pytest.raises(E.MetricError):
        E.read_metrics_csv(tmp_path / "m.csv")


def test_compare_runs():
    a = {k: np.array([0.8, 0.9, 0.85]) for k in E.METRIC_NAMES}
    b = {k: np.array([0.7, 0.7, 0.8]) for k in E.METRIC_NAMES}
    res = E.compare_runs(a, b)
    assert set(res) == set(E.METRIC_NAMES) and all(r.t > 0 for r in res.values())


# --- benchmark -------------------------------------------------------------------------------

def bench_data():
    r = np.random.default_rng(0)
    return [SubjectRepresentation(r.uniform(-1, 1, (5, 4)), r.uniform(0, 1, (5, 3)), i % 2) for i in range(6)]


def test_benchmark_records_and_csv(tmp_path):
    base = dict(H=4, pos_dim=3, embed_dim=4, n_layers=1, n_heads=2, grid_size=3, degree=2)
    configs = [(f"{e}-{h}", ModelConfig(encoder_block=e, head_block=h, **base))
               for e, h in [("mlp", "mlp"), ("fastkan", "fastkan"), ("chebykan", "mlp")]]
    spec = TrainSpec(epochs=1, folds=2)
    recs = E.benchmark(configs, bench_data(), spec)
    again = E.benchmark(configs, bench_data(), spec)
    assert [r.param_count for r in recs] == [r.param_count for r in again]
    assert all(r.error is None and r.wall_time_s > 0 and r.param_count > 0 for r in recs)
    assert min(recs, key=lambda r: r.param_count).config == "mlp-mlp"
    E.write_bench_csv(tmp_path / "b.csv", recs)
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "config,params,seconds"


def test_benchmark_continues_after_failure():
    base = dict(H=4, pos_dim=3, embed_dim=4, n_layers=1, n_heads=2)
    bad = ModelConfig(H=7, pos_dim=3, embed_dim=4, n_layers=1, n_heads=2)
    recs = E.benchmark([("bad", bad), ("ok", ModelConfig(**base))], bench_data(), TrainSpec(epochs=1, folds=2))
    assert recs[0].error is not None and recs[1].error is None
