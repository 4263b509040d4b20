"""Classification metrics, fold aggregation, paired t-tests and benchmarking."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

METRIC_NAMES = ("acc", "auc", "f1", "precision", "recall", "specificity")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(labels, predictions) -> Confusion:
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    p = np.asarray(predictions).astype(np.int64).reshape(-1)
    if y.shape != p.shape:
        raise MetricError(f"length mismatch: {y.size} labels vs {p.size} predictions")
    return Confusion(
        int(np.sum((p == 1) & (y == 1))),
        int(np.sum((p == 1) & (y == 0))),
        int(np.sum((p == 0) & (y == 0))),
        int(np.sum((p == 0) & (y == 1))),
    )


@dataclass
class MetricSet:
    acc: float
    auc: float
    f1: float
    precision: float
    recall: float
    specificity: float
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def auc(labels, scores) -> float:
    """P(score+ > score-) + 0.5 P(tie), via midranks."""
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if y.shape != s.shape:
        raise MetricError("labels and scores differ in length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC is undefined with a single class present")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _ratio(num: float, den: float, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics_from(labels, predictions, scores) -> MetricSet:
    """Six standard metrics; positive class is 1. Undefined ratios are 0.0
    and named in ``flags``."""
    y = np.asarray(labels).reshape(-1)
    if len(y) < 1:
        raise MetricError("need at least one sample")
    if len(np.asarray(scores).reshape(-1)) != len(y):
        raise MetricError("scores and labels differ in length")
    c = confusion(labels, predictions)
    flags: list[str] = []
    acc = (c.tp + c.tn) / c.n
    p = _ratio(c.tp, c.tp + c.fp, "precision", flags)
    r = _ratio(c.tp, c.tp + c.fn, "recall", flags)
    spe = _ratio(c.tn, c.tn + c.fp, "specificity", flags)
    f1 = _ratio(2 * p * r, p + r, "f1", flags)
    try:
        a = auc(labels, scores)
    except MetricError:
        flags.append("auc")
        a = 0.0
    return MetricSet(acc, a, f1, p, r, spe, tuple(flags))


def aggregate(metric_sets: Sequence[MetricSet], ddof: int = 0) -> tuple[dict, dict]:
    """Mean and std (population by default) of each metric across folds."""
    arr = np.array([[getattr(m, k) for k in METRIC_NAMES] for m in metric_sets])
    mean = dict(zip(METRIC_NAMES, arr.mean(axis=0)))
    std = dict(zip(METRIC_NAMES, arr.std(axis=0, ddof=ddof)))
    return mean, std


# --- Student t tail -------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(lbeta + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, dof: float) -> float:
    """Upper tail P(T > t) of Student's t with ``dof`` degrees of freedom."""
    tail = 0.5 * betainc(dof / 2.0, 0.5, dof / (dof + t * t))
    return tail if t > 0 else 1.0 - tail


@dataclass
class TTestResult:
    t: float
    p: float
    dof: int
    degenerate: bool = False


def paired_t_one_tailed(a, b) -> TTestResult:
    """One-tailed paired t-test of H1: mean(a - b) > 0."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise MetricError("paired samples differ in length")
    k = a.size
    if k < 2:
        raise MetricError("need at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return TTestResult(0.0 if mean == 0 else math.copysign(math.inf, mean),
                           0.0 if mean > 0 else 1.0, k - 1, degenerate=True)
    t = mean / (sd / math.sqrt(k))
    return TTestResult(t, student_t_sf(t, k - 1), k - 1)


# --- CSV output -----------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics_csv(path: str | Path, fold_metrics: Sequence[MetricSet]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", *METRIC_NAMES])
        for i, m in enumerate(fold_metrics):
            w.writerow([i, *(_fmt(getattr(m, k)) for k in METRIC_NAMES)])


def read_metrics_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise MetricError(f"{path}: no rows")
    missing = [k for k in METRIC_NAMES if k not in rows[0]]
    if missing:
        raise MetricError(f"{path}: missing columns {missing}")
    return {k: np.array([float(r[k]) for r in rows]) for k in METRIC_NAMES}


def write_summary_csv(path: str | Path, fold_metrics: Sequence[MetricSet], ddof: int = 0) -> None:
    mean, std = aggregate(fold_metrics, ddof)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stat", *METRIC_NAMES])
        w.writerow(["mean", *(_fmt(mean[k]) for k in METRIC_NAMES)])
        w.writerow(["std", *(_fmt(std[k]) for k in METRIC_NAMES)])


def compare_runs(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> dict[str, TTestResult]:
    """Per-metric one-tailed paired t-tests of run ``a`` over run ``b``."""
    return {k: paired_t_one_tailed(a[k], b[k]) for k in METRIC_NAMES}


# --- benchmarking -----------------------------------------------------------

@dataclass
class BenchRecord:
    config: str
    param_count: int
    wall_time_s: float
    error: str | None = None


def benchmark(configs, dataset, trainspec, jobs: int = 1) -> list[BenchRecord]:
    """Time full k-fold training of each ``(name, ModelConfig)`` pair.

    Runs sequentially; a failing config is recorded with its error and the
    rest continue.
    """
    from .model import model_param_count, run_cv

    out = []
    for name, cfg in configs:
        params = model_param_count(cfg)
        start = time.perf_counter()
        try:
            run_cv(dataset, cfg, trainspec, jobs=jobs)
            err = None
        except Exception as exc:  # noqa: BLE001 - recorded, not swallowed
            err = f"{type(exc).__name__}: {exc}"
        out.append(BenchRecord(name, params, time.perf_counter() - start, err))
    return out


def write_bench_csv(path: str | Path, records: Sequence[BenchRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "params", "seconds"])
        for r in records:
            if r.error is None:
                w.writerow([r.config, r.param_count, f"{r.wall_time_s:.3f}"])
