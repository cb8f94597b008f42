"""Linear programs that pick the sample-weight perturbation.

All programs are over ``w`` in ``[0, 1]^N`` with one or two general
constraints, solved by a bounded-variable primal simplex (two phases,
artificial variables, lowest-index tie breaking in the ratio test).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11


class UnboundedLP(RuntimeError):
    pass


@dataclass(frozen=True)
class Constraint:
    coeffs: np.ndarray
    relation: str
    rhs: float

    def __post_init__(self):
        if self.relation not in ("<=", "="):
            raise ValueError(f"relation must be '<=' or '=', got {self.relation!r}")


@dataclass
class LPSpec:
    objective: np.ndarray
    constraints: list
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = len(self.objective)
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.ones(n) if self.upper is None else np.asarray(self.upper, dtype=float)
        self.constraints = [
            c if isinstance(c, Constraint) else Constraint(np.asarray(c[0], dtype=float), c[1], float(c[2]))
            for c in self.constraints
        ]
        for c in self.constraints:
            if len(c.coeffs) != n:
                raise ValueError("constraint length does not match objective length")

    @property
    def n(self):
        return len(self.objective)

    def residuals(self, w) -> np.ndarray:
        """Constraint violations (positive = violated) at ``w``."""
        out = []
        for c in self.constraints:
            lhs = float(c.coeffs @ w)
            out.append(max(lhs - c.rhs, 0.0) if c.relation == "<=" else abs(lhs - c.rhs))
        return np.asarray(out)

    def to_lp_format(self, name="reweigh") -> str:
        """CPLEX LP text, for cross-checking with external solvers."""
        def terms(coeffs):
            parts = [f"{v:+.17g} w{j}" for j, v in enumerate(coeffs) if v != 0.0]
            return " ".join(parts) if parts else "0 w0"

        lines = [f"\\ {name}", "Minimize", f" obj: {terms(self.objective)}", "Subject To"]
        for k, c in enumerate(self.constraints):
            lines.append(f" c{k}: {terms(c.coeffs)} {c.relation} {c.rhs:.17g}")
        lines.append("Bounds")
        lines += [f" {lo:.17g} <= w{j} <= {hi:.17g}" for j, (lo, hi) in enumerate(zip(self.lower, self.upper))]
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class LPOutcome:
    status: str
    w_star: np.ndarray | None
    objective_value: float
    which: str = ""
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    phase1_objective: float = 0.0
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _simplex(c, a, b, lower, upper, basis, x, max_iter):
    """Bounded primal simplex on ``min c x, a x = b, lower <= x <= upper``.

    ``basis`` holds one column index per row and ``x`` a consistent starting
    point (nonbasic variables at a bound). Both are updated in place.
    """
    m, n = a.shape
    is_basic = np.zeros(n, dtype=bool)
    is_basic[basis] = True
    degenerate = 0
    for it in range(max_iter):
        bmat = a[:, basis]
        xn = np.where(is_basic, 0.0, x)
        x[basis] = np.linalg.solve(bmat, b - a @ xn)
        y = np.linalg.solve(bmat.T, c[basis])
        d = c - a.T @ y
        at_lower = ~is_basic & (x <= lower) & (upper > lower)
        at_upper = ~is_basic & (x >= upper) & (upper > lower)
        score = np.where(at_lower & (d < -OPT_TOL), -d, 0.0) + np.where(at_upper & (d > OPT_TOL), d, 0.0)
        if not score.any():
            return it
        # Dantzig pricing; switch to lowest-index entering after a run of degenerate pivots
        j = int(np.flatnonzero(score)[0]) if degenerate > 50 else int(np.argmax(score))
        direction = 1.0 if at_lower[j] else -1.0
        alpha = np.linalg.solve(bmat, a[:, j])
        rate = -direction * alpha
        step, leave, leave_bound = upper[j] - lower[j], -1, None
        xb, lo_b, hi_b = x[basis], lower[basis], upper[basis]
        order = np.argsort(basis, kind="stable")
        for k in order:
            if rate[k] < -PIVOT_TOL:
                t, bound = (xb[k] - lo_b[k]) / -rate[k], lo_b[k]
            elif rate[k] > PIVOT_TOL and np.isfinite(hi_b[k]):
                t, bound = (hi_b[k] - xb[k]) / rate[k], hi_b[k]
            else:
                continue
            t = max(t, 0.0)
            if t < step:
                step, leave, leave_bound = t, k, bound
        if not np.isfinite(step):
            raise UnboundedLP("objective is unbounded below")
        degenerate = degenerate + 1 if step <= PIVOT_TOL else 0
        x[j] += direction * step
        x[basis] += rate * step
        if leave >= 0:
            out = basis[leave]
            x[out] = leave_bound
            is_basic[out] = False
            is_basic[j] = True
            basis[leave] = j
        else:
            x[j] = upper[j] if direction > 0 else lower[j]
    raise RuntimeError(f"simplex did not terminate in {max_iter} iterations")


def solve(spec: LPSpec, max_iter: int | None = None) -> LPOutcome:
    """Minimize ``spec.objective @ w`` under the spec's constraints and bounds."""
    n, m = spec.n, len(spec.constraints)
    if max_iter is None:
        max_iter = 50 * (n + m) + 1000
    if m == 0:
        w = np.where(spec.objective < 0, spec.upper, spec.lower)
        return LPOutcome("optimal", w, float(spec.objective @ w), residuals=np.zeros(0))

    n_slack = sum(c.relation == "<=" for c in spec.constraints)
    total = n + n_slack + m
    a = np.zeros((m, total))
    b = np.array([c.rhs for c in spec.constraints])
    lower = np.concatenate([spec.lower, np.zeros(n_slack + m)])
    upper = np.concatenate([spec.upper, np.full(n_slack, np.inf), np.full(m, np.inf)])
    x = np.zeros(total)
    x[:n] = spec.lower
    basis = []
    s = n
    for i, con in enumerate(spec.constraints):
        a[i, :n] = con.coeffs
        slack = None
        if con.relation == "<=":
            a[i, s] = 1.0
            slack, s = s, s + 1
        resid = b[i] - a[i, :n] @ x[:n]
        art = n + n_slack + i
        if slack is not None and resid >= 0:
            x[slack] = resid
            basis.append(slack)
            upper[art] = 0.0
        else:
            a[i, art] = 1.0 if resid >= 0 else -1.0
            x[art] = abs(resid)
            basis.append(art)
    basis = np.array(basis)
    arts = np.arange(n + n_slack, total)

    c1 = np.zeros(total)
    c1[arts] = 1.0
    it1 = _simplex(c1, a, b, lower, upper, basis, x, max_iter)
    phase1 = float(x[arts].sum())
    if phase1 > FEAS_TOL:
        return LPOutcome("infeasible", None, float("nan"), phase1_objective=phase1, iterations=it1)

    upper[arts] = 0.0
    x[arts] = np.clip(x[arts], 0.0, 0.0)
    c2 = np.zeros(total)
    c2[:n] = spec.objective
    it2 = _simplex(c2, a, b, lower, upper, basis, x, max_iter)
    w = np.clip(x[:n], spec.lower, spec.upper)
    res = spec.residuals(w)
    return LPOutcome("optimal", w, float(spec.objective @ w), residuals=res,
                     phase1_objective=phase1, iterations=it1 + it2)


# -- the reweighing programs ---------------------------------------------------

def min_util_bound(table) -> float:
    """min over v in [0,1]^N of sum v_i * i_util[i], i.e. the sum of the negative entries."""
    return float(np.minimum(np.asarray(table.i_util), 0.0).sum())


def relaxed_spec(table, beta: float, gamma: float) -> LPSpec:
    n = len(table.i_fair)
    return LPSpec(
        np.ones(n),
        [
            Constraint(np.asarray(table.i_fair, dtype=float), "<=", -(1.0 - beta) * table.fair_gap_surrogate),
            Constraint(np.asarray(table.i_util, dtype=float), "<=", gamma * min_util_bound(table)),
        ],
    )


def budgeted_spec(table, alpha: float) -> LPSpec:
    n = len(table.i_fair)
    return LPSpec(
        np.asarray(table.i_fair, dtype=float),
        [
            Constraint(np.asarray(table.i_util, dtype=float), "<=", 0.0),
            Constraint(np.ones(n), "<=", alpha * n),
        ],
    )


def solve_relaxed(table, beta: float = 0.0, gamma: float = 0.0) -> LPOutcome:
    """Least total perturbation that closes a ``(1 - beta)`` share of the surrogate gap
    while the predicted utility change stays below ``gamma * min_util_bound``."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if table.fair_gap_surrogate <= 0:
        raise ValueError("relaxed LP needs a positive fairness gap")
    out = solve(relaxed_spec(table, beta, gamma))
    out.which = "relaxed"
    return out


def solve_budgeted(table, alpha: float = 0.1) -> LPOutcome:
    """Largest predicted fairness reduction with no predicted utility loss and at
    most ``alpha * N`` total perturbation. Always feasible (w = 0)."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    out = solve(budgeted_spec(table, alpha))
    out.which = "budgeted"
    return out
