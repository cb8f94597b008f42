"""Retraining studies that check influence predictions against ground truth:
leave-one-out, leave-group-out, epsilon-reweighing and label flips.

Removal is done by zeroing a training weight, so the retrain goes through
the same code path as the reweighed model. Retrains start from the base
optimum and are polished below the default gradient tolerance, since the
effects being measured are small differences of validation losses.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model
from .influence import FairnessNotion, fair_loss, factorize, influence_all, util_loss
from .pipeline import worker_budget

log = logging.getLogger(__name__)

ORACLE_TOL = 1e-12


@dataclass(frozen=True)
class OracleRecord:
    kind: str
    index: tuple
    metric: str
    predicted: float | None
    actual: float
    epsilon: float | None = None

    def label(self) -> str:
        idx = ";".join(str(i) for i in self.index)
        return f"{self.kind}({idx})" if self.epsilon is None else f"{self.kind}({idx},{self.epsilon:g})"


@dataclass
class Study:
    records: list
    rho: dict
    mae: dict
    n_failed: int = 0
    name: str = ""

    def values(self, metric):
        rs = [r for r in self.records if r.metric == metric]
        return (np.array([r.predicted for r in rs], dtype=float), np.array([r.actual for r in rs], dtype=float))

    def summary(self) -> dict:
        return {
            "study": self.name,
            "n_records": len(self.records),
            "n_failed": self.n_failed,
            "rho": self.rho,
            "mae": self.mae,
        }

    def write(self, csv_path, json_path=None, extra=None):
        from .io import atomic_write_text

        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["perturbation", "predicted", "actual", "metric"])
            for r in self.records:
                w.writerow([r.label(), "" if r.predicted is None else repr(r.predicted), repr(r.actual), r.metric])
        if json_path:
            atomic_write_text(json_path, json.dumps({**self.summary(), **(extra or {})}, indent=2) + "\n")


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 2 or np.std(x) == 0 or np.std(y) == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


class Oracle:
    """Base model, influence table and validation reference values, computed once."""

    def __init__(self, train, val, notion, l2_total, tol=ORACLE_TOL):
        self.train, self.val = train, val
        self.notion = FairnessNotion.parse(notion)
        self.l2_total = l2_total
        self.tol = tol
        self.base = model.train(train, None, l2_total, tol=tol)
        h = model.hessian(train, None, self.base, l2_total)
        self.table = influence_all(train, val, self.base, factorize(h), self.notion)
        self.f0 = fair_loss(val, self.base, self.notion)
        self.u0 = util_loss(val, self.base)

    def deltas(self, weights=None, labels=None):
        """(fairness change, utility change) on validation after a fresh retrain."""
        params = model.train(self.train, weights, self.l2_total, tol=self.tol, init=self.base, labels=labels)
        return fair_loss(self.val, params, self.notion) - self.f0, util_loss(self.val, params) - self.u0

    def removal_weights(self, idx, amount=1.0):
        c = np.ones(self.train.n)
        c[np.asarray(idx)] -= amount
        return c


def _map(fn, items, workers):
    workers = workers or worker_budget()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _guarded(fn):
    def call(item):
        try:
            return item, fn(item)
        except model.ConvergenceError as exc:
            log.warning("retrain failed for %s: %s", item, exc)
            return item, None
    return call


def _finish(name, records, n_failed):
    records.sort(key=lambda r: (r.metric, r.index, r.epsilon or 0.0))
    study = Study(records, {}, {}, n_failed, name)
    for metric in sorted({r.metric for r in records}):
        pred, act = study.values(metric)
        study.rho[metric] = pearson(pred, act)
        study.mae[metric] = float(np.mean(np.abs(pred - act))) if len(pred) else float("nan")
    return study


def _oracle(train, val, notion, l2_total, oracle):
    return oracle if oracle is not None else Oracle(train, val, notion, l2_total)


def group_study(train, val, group_size, n_groups, notion="eop", seed=42, l2_total=1.0,
                oracle=None, workers=None) -> Study:
    """Remove random groups; predicted change is the sum of member influences."""
    if group_size > train.n:
        raise ValueError("group_size exceeds the training set size")
    orc = _oracle(train, val, notion, l2_total, oracle)
    rng = np.random.default_rng(seed)
    groups = [tuple(sorted(rng.choice(train.n, group_size, replace=False).tolist())) for _ in range(n_groups)]
    results = _map(_guarded(lambda g: orc.deltas(orc.removal_weights(list(g)))), groups, workers)
    records, failed = [], 0
    for g, res in results:
        if res is None:
            failed += 1
            continue
        idx = list(g)
        records.append(OracleRecord("group", g, "fair", float(orc.table.i_fair[idx].sum()), res[0]))
        records.append(OracleRecord("group", g, "util", float(orc.table.i_util[idx].sum()), res[1]))
    return _finish("group", records, failed)


def loo_study(train, val, n_samples, notion="eop", seed=42, l2_total=1.0, oracle=None, workers=None) -> Study:
    """Leave-one-out retraining for ``n_samples`` random training points."""
    if n_samples > train.n:
        raise ValueError("n_samples exceeds the training set size")
    if n_samples == 0:
        return Study([], {}, {}, 0, "loo")
    orc = _oracle(train, val, notion, l2_total, oracle)
    idx = np.random.default_rng(seed).choice(train.n, n_samples, replace=False)
    results = _map(_guarded(lambda i: orc.deltas(orc.removal_weights([i]))), idx.tolist(), workers)
    records, failed = [], 0
    for i, res in results:
        if res is None:
            failed += 1
            continue
        records.append(OracleRecord("loo", (i,), "fair", float(orc.table.i_fair[i]), res[0]))
        records.append(OracleRecord("loo", (i,), "util", float(orc.table.i_util[i]), res[1]))
    return _finish("loo", records, failed)


def epsilon_study(train, val, n_samples, epsilons=(1e-3,), notion="eop", seed=42, l2_total=1.0,
                  oracle=None, workers=None) -> Study:
    """Downweight one sample by ``eps`` and compare (actual change) / eps with its influence."""
    orc = _oracle(train, val, notion, l2_total, oracle)
    idx = np.random.default_rng(seed).choice(train.n, n_samples, replace=False)
    items = [(int(i), float(e)) for i in idx for e in epsilons]
    results = _map(_guarded(lambda it: orc.deltas(orc.removal_weights([it[0]], it[1]))), items, workers)
    records, failed = [], 0
    for (i, e), res in results:
        if res is None:
            failed += 1
            continue
        records.append(OracleRecord("epsilon", (i,), "fair", float(orc.table.i_fair[i]), res[0] / e, e))
        records.append(OracleRecord("epsilon", (i,), "util", float(orc.table.i_util[i]), res[1] / e, e))
    return _finish("epsilon", records, failed)


def flip_study(train, val, n_samples, seed=42, l2_total=1.0, oracle=None, workers=None) -> Study:
    """Actual EOP surrogate change from flipping a label versus removing the sample.

    Records carry ``metric="flip"`` and ``metric="remove"``; ``predicted`` holds
    the influence estimate for removal and is empty for flips.
    """
    if n_samples > train.n:
        raise ValueError("n_samples exceeds the training set size")
    orc = _oracle(train, val, FairnessNotion.EOP, l2_total, oracle)
    if orc.notion is not FairnessNotion.EOP:
        raise ValueError("flip_study measures the EOP surrogate")
    idx = np.random.default_rng(seed).choice(train.n, n_samples, replace=False)
    y = train.y

    def both(i):
        flipped = y.copy()
        flipped[i] = 1 - flipped[i]
        return orc.deltas(labels=flipped)[0], orc.deltas(orc.removal_weights([i]))[0]

    results = _map(_guarded(both), idx.tolist(), workers)
    records, failed = [], 0
    for i, res in results:
        if res is None:
            failed += 1
            continue
        records.append(OracleRecord("flip", (i,), "flip", None, res[0]))
        records.append(OracleRecord("loo", (i,), "remove", float(orc.table.i_fair[i]), res[1]))
    study = Study(sorted(records, key=lambda r: (r.metric, r.index)), {}, {}, failed, "flip")
    flip = np.array([abs(r.actual) for r in records if r.metric == "flip"])
    remove = np.array([abs(r.actual) for r in records if r.metric == "remove"])
    study.mae = {"mean_abs_flip": float(flip.mean()) if len(flip) else float("nan"),
                 "mean_abs_remove": float(remove.mean()) if len(remove) else float("nan")}
    pred, act = study.values("remove")
    study.rho = {"remove": pearson(pred, act)}
    return study
