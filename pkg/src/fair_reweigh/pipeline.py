"""End-to-end reweighing and validation grid search.

``run`` follows this order: train the unweighted model, measure the
validation surrogate gap, build the influence table from one Hessian
factorization, solve the relaxed LP (falling back to the budgeted LP when it
is infeasible), retrain with weights ``1 - w*`` and only then evaluate the
test split.
"""

from __future__ import annotations

import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import evaluation, lp, model
from .influence import (
    AlreadyFair,
    FairnessNotion,
    InfluenceTable,
    factorize,
    fair_loss,
    fair_loss_grad,
    influence_all,
)

log = logging.getLogger(__name__)

BETA_RANGE = (0.0, 0.9)
GAMMA_RANGE = (0.0, 0.4)
ALPHA_RANGE = (0.0, 0.15)

DEFAULT_BETAS = tuple(round(0.1 * k, 1) for k in range(10))
DEFAULT_GAMMAS = tuple(round(0.1 * k, 1) for k in range(5))
DEFAULT_ALPHAS = tuple(round(0.01 * k, 2) for k in range(1, 16))


def worker_budget(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("REWEIGH_THREADS", default)))
    except ValueError:
        return default


@dataclass(frozen=True)
class ReweighConfig:
    notion: FairnessNotion = FairnessNotion.EOP
    beta: float = 0.0
    gamma: float = 0.0
    alpha: float = 0.1
    l2_total: float = 1.0
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, "notion", FairnessNotion.parse(self.notion))
        eps = 1e-12
        if not BETA_RANGE[0] - eps <= self.beta <= BETA_RANGE[1] + eps:
            raise ValueError(f"beta must lie in {list(BETA_RANGE)}, got {self.beta}")
        if not GAMMA_RANGE[0] - eps <= self.gamma <= GAMMA_RANGE[1] + eps:
            raise ValueError(f"gamma must lie in {list(GAMMA_RANGE)}, got {self.gamma}")
        if not ALPHA_RANGE[0] < self.alpha <= ALPHA_RANGE[1] + eps:
            raise ValueError(f"alpha must lie in (0, {ALPHA_RANGE[1]}], got {self.alpha}")
        if self.l2_total <= 0:
            raise ValueError("l2_total must be positive")

    def to_dict(self) -> dict:
        return {"notion": self.notion.value, "beta": self.beta, "gamma": self.gamma,
                "alpha": self.alpha, "l2_total": self.l2_total, "seed": self.seed}


@dataclass
class BaseState:
    """Everything that depends only on the unweighted model: shared by all grid candidates."""

    params: model.ModelParams
    table: InfluenceTable | None
    val_metrics: evaluation.MetricReport
    notion: FairnessNotion


@dataclass
class PipelineResult:
    config: ReweighConfig
    base_metrics: evaluation.MetricReport | None
    reweighed_metrics: evaluation.MetricReport | None
    base_val_metrics: evaluation.MetricReport
    reweighed_val_metrics: evaluation.MetricReport
    w_star: np.ndarray
    lp_branch: str
    region: str | None
    base_params: model.ModelParams
    reweighed_params: model.ModelParams
    table: InfluenceTable | None = None
    lp_outcome: lp.LPOutcome | None = None
    test_label_reads_before_eval: int = 0
    timings: dict = field(default_factory=dict)

    @property
    def already_fair(self) -> bool:
        return self.lp_branch == "already_fair"

    def summary(self) -> dict:
        def m(r):
            return None if r is None else r.to_dict()

        return {
            "config": self.config.to_dict(),
            "lp_branch": self.lp_branch,
            "region": self.region,
            "w_star_sum": float(self.w_star.sum()),
            "w_star_nonzero": int(np.count_nonzero(self.w_star)),
            "lp_residuals": None if self.lp_outcome is None else self.lp_outcome.residuals.tolist(),
            "fair_gap_surrogate": None if self.table is None else self.table.fair_gap_surrogate,
            "test": {"base": m(self.base_metrics), "reweighed": m(self.reweighed_metrics)},
            "val": {"base": m(self.base_val_metrics), "reweighed": m(self.reweighed_val_metrics)},
            "base_grad_norm": self.base_params.converged_grad_norm,
            "reweighed_grad_norm": self.reweighed_params.converged_grad_norm,
            "timings": self.timings,
        }


def prepare_base(train, val, notion, l2_total) -> BaseState:
    """Unweighted model, its validation metrics and the influence table (None if already fair)."""
    notion = FairnessNotion.parse(notion)
    params = model.train(train, None, l2_total)
    val_metrics = evaluation.evaluate(params, val)
    try:
        g_fair = fair_loss_grad(val, params, notion)
    except AlreadyFair:
        return BaseState(params, None, val_metrics, notion)
    h = model.hessian(train, None, params, l2_total)
    table = influence_all(train, val, params, factorize(h), notion, fair_grad=g_fair)
    return BaseState(params, table, val_metrics, notion)


def solve_weights(table: InfluenceTable, beta, gamma, alpha) -> lp.LPOutcome:
    """Relaxed LP first; the budgeted LP only when the relaxed one is infeasible."""
    out = lp.solve_relaxed(table, beta, gamma)
    if out.optimal:
        return out
    log.info("relaxed LP infeasible (phase-1 objective %.3e); solving budgeted LP", out.phase1_objective)
    out = lp.solve_budgeted(table, alpha)
    if not out.optimal:
        raise RuntimeError("budgeted LP reported infeasible; w = 0 is always feasible")
    return out


def retrain(train, w_star, l2_total, init=None) -> model.ModelParams:
    return model.train(train, 1.0 - np.asarray(w_star), l2_total, init=init)


def run(train, val, test, cfg: ReweighConfig, base: BaseState | None = None) -> PipelineResult:
    t0 = time.perf_counter()
    timings = {}
    if base is None:
        base = prepare_base(train, val, cfg.notion, cfg.l2_total)
    timings["base_and_influence"] = time.perf_counter() - t0

    if base.table is None:
        w_star = np.zeros(train.n)
        outcome, branch = None, "already_fair"
        new_params = base.params
    else:
        t1 = time.perf_counter()
        outcome = solve_weights(base.table, cfg.beta, cfg.gamma, cfg.alpha)
        timings["lp"] = time.perf_counter() - t1
        w_star, branch = outcome.w_star, outcome.which
        t1 = time.perf_counter()
        new_params = retrain(train, w_star, cfg.l2_total)
        timings["retrain"] = time.perf_counter() - t1

    new_val = evaluation.evaluate(new_params, val)
    reads_before = test.label_reads if test is not None else 0
    if test is not None:
        base_test = evaluation.evaluate(base.params, test)
        new_test = evaluation.evaluate(new_params, test)
        verdict = evaluation.region(base_test, new_test, cfg.notion)
    else:
        base_test = new_test = verdict = None
    timings["total"] = time.perf_counter() - t0
    return PipelineResult(
        config=cfg,
        base_metrics=base_test,
        reweighed_metrics=new_test,
        base_val_metrics=base.val_metrics,
        reweighed_val_metrics=new_val,
        w_star=w_star,
        lp_branch=branch,
        region=verdict,
        base_params=base.params,
        reweighed_params=new_params,
        table=base.table,
        lp_outcome=outcome,
        test_label_reads_before_eval=reads_before,
        timings=timings,
    )


# -- grid search ---------------------------------------------------------------

@dataclass
class GridResult:
    config: ReweighConfig
    rows: list
    fallback: bool
    base_val_metrics: evaluation.MetricReport
    already_fair: bool = False


def _candidates(table, betas, gammas, alphas):
    """(beta, gamma, alpha, outcome) per grid cell; alpha only varies when the relaxed LP is infeasible."""
    out = []
    for beta in betas:
        for gamma in gammas:
            relaxed = lp.solve_relaxed(table, beta, gamma)
            if relaxed.optimal:
                out.append((beta, gamma, alphas[0], relaxed))
                continue
            for alpha in alphas:
                out.append((beta, gamma, alpha, lp.solve_budgeted(table, alpha)))
    return out


def grid_search(train, val, notion, grids=None, l2_total=1.0, tol_acc=0.0, seed=42,
                base: BaseState | None = None, workers: int | None = None) -> GridResult:
    """Pick (beta, gamma, alpha) on the validation split.

    Maximizes the reduction of the validation hard gap subject to validation
    accuracy >= base accuracy - ``tol_acc``; ties go to the smaller total
    perturbation, then to grid order. If no cell keeps accuracy, the cell with
    the largest beta is returned with ``fallback=True``.
    """
    notion = FairnessNotion.parse(notion)
    grids = grids or {}
    betas = tuple(grids.get("beta", DEFAULT_BETAS))
    gammas = tuple(grids.get("gamma", DEFAULT_GAMMAS))
    alphas = tuple(grids.get("alpha", DEFAULT_ALPHAS))
    for b in betas:
        ReweighConfig(notion, b, gammas[0], alphas[0], l2_total)
    for g in gammas:
        ReweighConfig(notion, betas[0], g, alphas[0], l2_total)
    for a in alphas:
        ReweighConfig(notion, betas[0], gammas[0], a, l2_total)

    if base is None:
        base = prepare_base(train, val, notion, l2_total)
    if base.table is None:
        cfg = ReweighConfig(notion, betas[0], gammas[0], alphas[0], l2_total, seed)
        return GridResult(cfg, [], False, base.val_metrics, already_fair=True)

    base_gap = base.val_metrics.gap(notion)
    base_acc = base.val_metrics.accuracy
    cands = _candidates(base.table, betas, gammas, alphas)

    def evaluate_cell(cand):
        beta, gamma, alpha, outcome = cand
        params = retrain(train, outcome.w_star, l2_total)
        rep = evaluation.evaluate(params, val)
        return {
            "beta": beta, "gamma": gamma, "alpha": alpha,
            "lp_branch": outcome.which,
            "w_sum": float(outcome.w_star.sum()),
            "val_accuracy": rep.accuracy,
            "val_gap": rep.gap(notion),
            "improvement": base_gap - rep.gap(notion),
            "accuracy_ok": rep.accuracy >= base_acc - tol_acc,
        }

    workers = workers or worker_budget()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(evaluate_cell, cands))
    else:
        rows = [evaluate_cell(c) for c in cands]

    ok = [k for k, r in enumerate(rows) if r["accuracy_ok"]]
    fallback = not ok
    if fallback:
        warnings.warn("no grid cell keeps validation accuracy; returning the largest-beta cell")
        best = max(range(len(rows)), key=lambda k: (rows[k]["beta"], -k))
    else:
        best = min(ok, key=lambda k: (-rows[k]["improvement"], rows[k]["w_sum"], k))
    r = rows[best]
    cfg = ReweighConfig(notion, r["beta"], r["gamma"], r["alpha"], l2_total, seed)
    return GridResult(cfg, rows, fallback, base.val_metrics)
