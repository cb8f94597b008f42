"""Weighted L2-regularized logistic regression.

Training objective, summed (not averaged) over samples::

    F(theta) = sum_i c_i * loss(z_i; theta) + (l2_total / 2) * ||theta[:-1]||^2

where ``c_i = 1 - w_i`` is the training weight. The bias is the last entry of
``theta`` and is paired with an appended constant-1 feature; it is not
penalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit

TRAIN_TOL = 1e-8
MAX_ITER = 500


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelParams:
    theta: np.ndarray
    l2_total: float
    converged_grad_norm: float = float("nan")
    n_iter: int = 0

    @property
    def coef(self) -> np.ndarray:
        return self.theta[:-1]

    @property
    def bias(self) -> float:
        return float(self.theta[-1])

    def to_dict(self, feature_names=None) -> dict:
        return {
            "theta": self.theta.tolist(),
            "l2_total": self.l2_total,
            "feature_names": list(feature_names) if feature_names is not None else None,
            "grad_norm": self.converged_grad_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(np.asarray(d["theta"], dtype=float), float(d["l2_total"]), float(d["grad_norm"]))


def save_model(path, params: ModelParams, feature_names=None):
    from .io import atomic_write_text

    atomic_write_text(path, json.dumps(params.to_dict(feature_names), indent=2) + "\n")


def load_model(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        return ModelParams.from_dict(json.load(fh))


def design(x) -> np.ndarray:
    """Append the constant-1 bias column."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.append(x, 1.0)
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _theta(theta):
    return theta.theta if isinstance(theta, ModelParams) else np.asarray(theta, dtype=float)


def _penalty_mask(p):
    mask = np.ones(p)
    mask[-1] = 0.0
    return mask


def logistic_loss(scores, y):
    """Binary cross-entropy from logits, computed as log(1 + exp(-s)) or its mirror."""
    scores = np.asarray(scores, dtype=float)
    return np.where(np.asarray(y) == 1, np.logaddexp(0.0, -scores), np.logaddexp(0.0, scores))


def predict_proba(theta, x) -> np.ndarray:
    return expit(design(x) @ _theta(theta))


def per_sample_loss(z, theta) -> float:
    """Cross-entropy of a single sample ``z = (x, y, ...)``; no regularizer."""
    x, y = z[0], z[1]
    return float(logistic_loss(design(x) @ _theta(theta), y))


def per_sample_grad(z, theta) -> np.ndarray:
    x, y = z[0], z[1]
    xt = design(x)
    return (expit(xt @ _theta(theta)) - y) * xt


def losses(data, theta) -> np.ndarray:
    """Per-sample losses for every row of ``data``."""
    return logistic_loss(design(data.x) @ _theta(theta), data.y)


def grads(data, theta) -> np.ndarray:
    """Per-sample gradients as an N x (D+1) matrix (rows are (sigma_i - y_i) * x_i)."""
    xt = design(data.x)
    return (expit(xt @ _theta(theta)) - data.y)[:, None] * xt


def _weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights must have length {n}, got {w.shape}")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("training weights must lie in [0, 1]")
    return w


def objective(xt, y, c, theta, l2_total) -> float:
    reg = 0.5 * l2_total * float(theta[:-1] @ theta[:-1])
    return float(c @ logistic_loss(xt @ theta, y)) + reg


def objective_grad(xt, y, c, theta, l2_total) -> np.ndarray:
    g = xt.T @ (c * (expit(xt @ theta) - y))
    g[:-1] += l2_total * theta[:-1]
    return g


def _hessian(xt, c, theta, l2_total):
    s = expit(xt @ theta)
    h = (xt * (c * s * (1.0 - s))[:, None]).T @ xt
    h[np.diag_indices_from(h)] += l2_total * _penalty_mask(h.shape[0])
    return 0.5 * (h + h.T)


def hessian(data, weights, theta, l2_total) -> np.ndarray:
    """Hessian of the weighted training objective, including the L2 term."""
    xt = design(data.x)
    return _hessian(xt, _weights(weights, data.n), _theta(theta), l2_total)


def train(data, weights=None, l2_total=1.0, tol=TRAIN_TOL, max_iter=MAX_ITER, init=None,
          labels=None) -> ModelParams:
    """Newton's method with backtracking line search.

    ``weights`` are the per-sample multipliers ``1 - w`` (default all ones).
    ``labels`` overrides ``data.y`` (used by label-flip studies).
    ``TRAIN_TOL`` on the gradient norm is guaranteed; a smaller ``tol`` is
    pursued until rounding stops Newton from halving the gradient.
    Raises :class:`ConvergenceError` after ``max_iter`` steps.
    """
    if l2_total <= 0:
        raise ValueError("l2_total must be positive")
    xt = design(data.x)
    y = np.asarray(data.y if labels is None else labels, dtype=float)
    c = _weights(weights, xt.shape[0])
    theta = np.zeros(xt.shape[1]) if init is None else np.array(_theta(init), dtype=float)

    f = objective(xt, y, c, theta, l2_total)
    g = objective_grad(xt, y, c, theta, l2_total)
    gnorm = np.linalg.norm(g)
    it = 0
    while gnorm > tol:
        if it >= max_iter:
            raise ConvergenceError(f"no convergence after {max_iter} Newton steps (|grad|={gnorm:.3e})")
        it += 1
        step = linalg.cho_solve(linalg.cho_factor(_hessian(xt, c, theta, l2_total)), g)
        slope = float(g @ step)
        cand = theta - step
        f_new = objective(xt, y, c, cand, l2_total)
        # predicted decrease below the resolution of f: Armijo is meaningless, keep the full step
        if slope >= 1e-10 * max(1.0, abs(f)):
            t = 1.0
            while f_new > f - 1e-4 * t * slope:
                t *= 0.5
                if t < 1e-12:
                    raise ConvergenceError(f"line search failed at |grad|={gnorm:.3e}")
                cand = theta - t * step
                f_new = objective(xt, y, c, cand, l2_total)
        g_new = objective_grad(xt, y, c, cand, l2_total)
        gnorm_new = np.linalg.norm(g_new)
        if gnorm <= TRAIN_TOL and gnorm_new > 0.5 * gnorm:
            # rounding floor: tighter targets than TRAIN_TOL are best effort
            if gnorm_new < gnorm:
                theta, gnorm = cand, gnorm_new
            break
        theta, f, g, gnorm = cand, f_new, g_new, gnorm_new
    return ModelParams(theta, float(l2_total), float(gnorm), it)


def grad_norm(data, weights, params: ModelParams, labels=None) -> float:
    """Norm of the weighted objective gradient at ``params``."""
    xt = design(data.x)
    y = np.asarray(data.y if labels is None else labels, dtype=float)
    return float(np.linalg.norm(objective_grad(xt, y, _weights(weights, xt.shape[0]), params.theta, params.l2_total)))
