"""Surrogate fairness losses and per-sample influence on validation
fairness and utility.

For training sample i, removing it (weight perturbation ``e_i``) changes a
differentiable validation quantity f by approximately
``grad_f^T H^{-1} grad_loss_i``, with H the training-objective Hessian at
the unweighted optimum.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit

from . import model

ALREADY_FAIR_EPS = 1e-12


class FairnessNotion(str, enum.Enum):
    EOP = "eop"
    DP = "dp"

    @classmethod
    def parse(cls, value) -> "FairnessNotion":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


class AlreadyFair(Exception):
    """The validation surrogate gap is zero; there is nothing to reweigh for."""


class EmptySubgroup(ValueError):
    pass


def _groups(data, notion):
    a, y = data.a, data.y
    if notion is FairnessNotion.EOP:
        g1, g0 = (a == 1) & (y == 1), (a == 0) & (y == 1)
    else:
        g1, g0 = a == 1, a == 0
    if not g1.any() or not g0.any():
        raise EmptySubgroup(f"{notion.value}: a conditioning subgroup of the {data.role} set is empty")
    return g1, g0


def _signed_gap(data, theta, notion):
    notion = FairnessNotion.parse(notion)
    g1, g0 = _groups(data, notion)
    if notion is FairnessNotion.EOP:
        v = model.losses(data, theta)
    else:
        v = model.predict_proba(theta, data.x)
    return float(v[g1].mean() - v[g0].mean())


def fair_loss(data, theta, notion) -> float:
    """Surrogate fairness gap on ``data``.

    EOP: |mean loss over (a=1, y=1) - mean loss over (a=0, y=1)|.
    DP:  |mean sigma(theta^T x) over a=1 - mean over a=0|.
    """
    return abs(_signed_gap(data, theta, notion))


def fair_loss_grad(data, theta, notion) -> np.ndarray:
    """Gradient of :func:`fair_loss`; raises :class:`AlreadyFair` at a zero gap."""
    notion = FairnessNotion.parse(notion)
    gap = _signed_gap(data, theta, notion)
    if abs(gap) <= ALREADY_FAIR_EPS:
        raise AlreadyFair(f"{notion.value} surrogate gap is {gap:.3e}")
    g1, g0 = _groups(data, notion)
    if notion is FairnessNotion.EOP:
        per = model.grads(data, theta)
    else:
        xt = model.design(data.x)
        s = expit(xt @ model._theta(theta))
        per = (s * (1.0 - s))[:, None] * xt
    return np.sign(gap) * (per[g1].mean(axis=0) - per[g0].mean(axis=0))


def util_loss(data, theta) -> float:
    """Summed validation loss (the utility quantity whose influence is tracked)."""
    return float(model.losses(data, theta).sum())


def util_loss_grad(data, theta) -> np.ndarray:
    return model.grads(data, theta).sum(axis=0)


@dataclass
class InfluenceTable:
    i_fair: np.ndarray
    i_util: np.ndarray
    fair_gap_surrogate: float
    notion: FairnessNotion

    def __post_init__(self):
        self.i_fair = np.asarray(self.i_fair, dtype=float)
        self.i_util = np.asarray(self.i_util, dtype=float)
        if self.i_fair.shape != self.i_util.shape:
            raise ValueError("i_fair and i_util must have equal length")
        if self.fair_gap_surrogate < 0:
            raise ValueError("fair_gap_surrogate must be nonnegative")
        self.notion = FairnessNotion.parse(self.notion)

    def __len__(self):
        return len(self.i_fair)

    def scaled(self, c: float) -> "InfluenceTable":
        return InfluenceTable(c * self.i_fair, c * self.i_util, c * self.fair_gap_surrogate, self.notion)

    def to_csv(self, path):
        from .io import atomic_write_text

        header = json.dumps({"fair_gap_surrogate": self.fair_gap_surrogate, "notion": self.notion.value})
        rows = [f"# {header}", "index,i_fair,i_util"]
        rows += [f"{i},{f!r},{u!r}" for i, (f, u) in enumerate(zip(self.i_fair.tolist(), self.i_util.tolist()))]
        atomic_write_text(path, "\n".join(rows) + "\n")

    @classmethod
    def from_csv(cls, path) -> "InfluenceTable":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline()[2:])
            fh.readline()
            body = np.loadtxt(fh, delimiter=",", ndmin=2)
        return cls(body[:, 1], body[:, 2], header["fair_gap_surrogate"], header["notion"])


def factorize(h):
    """Cholesky factor of a Hessian; fails loudly if it is not positive definite."""
    try:
        return linalg.cho_factor(h)
    except linalg.LinAlgError as exc:
        raise linalg.LinAlgError("Hessian is not positive definite; check l2_total") from exc


def influence_all(train, val, theta, h, notion, fair_grad=None) -> InfluenceTable:
    """Influence of removing each training sample on validation fairness and utility.

    Two solves against the factored Hessian (one per validation gradient),
    then one matrix-vector product with the per-sample training gradients.
    """
    notion = FairnessNotion.parse(notion)
    gap = fair_loss(val, theta, notion)
    g_fair = fair_loss_grad(val, theta, notion) if fair_grad is None else fair_grad
    g_util = util_loss_grad(val, theta)
    factor = factorize(h) if not isinstance(h, tuple) else h
    u = linalg.cho_solve(factor, g_fair)
    v = linalg.cho_solve(factor, g_util)
    g_train = model.grads(train, theta)
    return InfluenceTable(g_train @ u, g_train @ v, gap, notion)


def influence_of(wvec, table: InfluenceTable) -> tuple[float, float]:
    """Predicted (fairness, utility) change for a weight perturbation ``w``."""
    w = np.asarray(wvec, dtype=float)
    if w.shape != table.i_fair.shape:
        raise ValueError(f"perturbation length {w.shape} does not match table length {len(table)}")
    return float(w @ table.i_fair), float(w @ table.i_util)
