"""Exact solver for the per-iteration convex surrogate subproblem.

Minimizes a strongly convex quadratic f0 + g0'(x-c) + tau0*||x-c||^2 subject
to ball-shaped quadratic constraints of the same form, row-sum linear
constraints and box bounds.  Every quadratic has Hessian 2*tau*I, so the
primal-dual Newton systems are diagonal-plus-rank-structure and a dense
factorization at n of a few hundred is cheap; no external solver is needed.

Rows are normalized internally (objective by its gradient scale, each
constraint by max(1, |value|, |grad|)); reported residuals refer to the
normalized system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# interior-point defaults: conservative for the tiny systems solved here
MU_FACTOR = 10.0
FRACTION_TO_BOUNDARY = 0.99
LS_ALPHA = 0.01
LS_BETA = 0.5
STRICT_MARGIN = 1e-9


@dataclass
class QuadConstraint:
    """f + g'(x - center) + curvature*||x - center||^2 <= 0 around the spec center."""

    value: float
    grad: np.ndarray
    curvature: float

    def __post_init__(self):
        self.grad = np.asarray(self.grad, dtype=float).reshape(-1)
        if self.curvature <= 0:
            raise ValueError("constraint curvature must be positive")


@dataclass
class SubproblemSpec:
    """One convex subproblem around `center` (dimension n = len(center)).

    `lin_rows` x <= `lin_rhs` and the box [lower, upper] form the
    deterministic feasible set; entries of the bounds may be +-inf.
    `interior` optionally names a strictly feasible point of that set, used
    to seed the barrier when the center sits on its boundary.
    """

    center: np.ndarray
    objective_value: float
    objective_grad: np.ndarray
    objective_curvature: float
    constraints: list[QuadConstraint] = field(default_factory=list)
    lin_rows: np.ndarray | None = None
    lin_rhs: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    interior: np.ndarray | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(-1)
        n = self.center.size
        self.objective_grad = np.asarray(self.objective_grad, dtype=float).reshape(-1)
        if self.objective_grad.shape != (n,):
            raise ValueError("objective gradient dimension mismatch")
        if self.objective_curvature <= 0:
            raise ValueError("objective curvature must be positive")
        for c in self.constraints:
            if c.grad.shape != (n,):
                raise ValueError("constraint gradient dimension mismatch")
        if self.lin_rows is not None:
            self.lin_rows = np.atleast_2d(np.asarray(self.lin_rows, dtype=float))
            self.lin_rhs = np.asarray(self.lin_rhs, dtype=float).reshape(-1)
            if self.lin_rows.shape != (self.lin_rhs.size, n):
                raise ValueError("linear constraint dimension mismatch")
        self.lower = (np.full(n, -np.inf) if self.lower is None
                      else np.asarray(self.lower, dtype=float).reshape(-1))
        self.upper = (np.full(n, np.inf) if self.upper is None
                      else np.asarray(self.upper, dtype=float).reshape(-1))
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bound dimension mismatch")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return self.center.size


@dataclass
class SubproblemSolution:
    x: np.ndarray
    status: str                       # optimal | infeasible-detected | max-iter
    kkt_residual: float
    iterations: int
    multipliers: dict = field(default_factory=dict)
    eta: float | None = None          # feasibility-problem level, when applicable


class _Rows:
    """All inequality rows of one barrier problem in a uniform layout.

    Variables are y = x (phase 2) or y = (x, eta) (phase 1, where every
    quadratic row gets -eta).  Rows are scale-normalized at construction.
    """

    def __init__(self, spec: SubproblemSpec, with_eta: bool):
        n = spec.dim
        self.n_x = n
        self.dim = n + 1 if with_eta else n
        self.with_eta = with_eta
        self.center = spec.center
        self.q_vals = np.array([c.value for c in spec.constraints])
        self.q_grads = (np.array([c.grad for c in spec.constraints])
                        if spec.constraints else np.zeros((0, n)))
        self.q_taus = np.array([c.curvature for c in spec.constraints])
        self.q_scale = np.maximum(1.0, np.maximum(
            np.abs(self.q_vals),
            np.abs(self.q_grads).max(axis=1) if len(self.q_vals) else np.zeros(0)))
        rows = []
        rhs = []
        if spec.lin_rows is not None:
            for row, b in zip(spec.lin_rows, spec.lin_rhs):
                s = max(1.0, np.abs(row).max())
                rows.append(row / s)
                rhs.append(b / s)
        for j in range(n):
            if np.isfinite(spec.upper[j]):
                e = np.zeros(n)
                e[j] = 1.0
                rows.append(e)
                rhs.append(spec.upper[j])
            if np.isfinite(spec.lower[j]):
                e = np.zeros(n)
                e[j] = -1.0
                rows.append(e)
                rhs.append(-spec.lower[j])
        self.lin_G = np.array(rows) if rows else np.zeros((0, n))
        self.lin_h = np.array(rhs)
        self.m = len(self.q_vals) + len(self.lin_h)

    def evaluate(self, y: np.ndarray):
        """Return (h, J, hess_scale) for all rows at y."""
        x = y[:self.n_x]
        d = x - self.center
        nq = len(self.q_vals)
        h = np.empty(self.m)
        J = np.zeros((self.m, self.dim))
        hess = np.zeros(self.m)
        if nq:
            h[:nq] = self.q_vals + self.q_grads @ d + self.q_taus * (d @ d)
            J[:nq, :self.n_x] = self.q_grads + 2.0 * self.q_taus[:, None] * d[None, :]
            hess[:nq] = 2.0 * self.q_taus
            if self.with_eta:
                h[:nq] -= y[-1]
                J[:nq, -1] = -1.0
            h[:nq] /= self.q_scale
            J[:nq] /= self.q_scale[:, None]
            hess[:nq] /= self.q_scale
        if len(self.lin_h):
            h[nq:] = self.lin_G @ x - self.lin_h
            J[nq:, :self.n_x] = self.lin_G
        return h, J, hess

    def values(self, y: np.ndarray) -> np.ndarray:
        h, _, _ = self.evaluate(y)
        return h


def _pdip(rows: _Rows, f_value_grad, hess_f_scalar: float, y0: np.ndarray,
          tol: float, max_iter: int):
    """Log-barrier path following with damped-Newton centering.

    Requires rows.values(y0) < 0 strictly.  `f_value_grad(y)` returns the
    objective value and gradient; the objective Hessian is `hess_f_scalar`
    times the identity on the x block.  Multipliers come out as -1/(t*h), so
    per-row complementarity equals 1/t exactly at a centered point.
    """
    y = y0.copy()
    h, J, hscale = rows.evaluate(y)
    if np.any(h >= 0):
        raise ValueError("interior-point start is not strictly feasible")
    m = rows.m
    t = 1.0
    total = 0
    while total < max_iter:
        # center at the current barrier weight; intermediate stages only need
        # enough accuracy to stay near the central path, the final one sets
        # the dual residual of the returned point
        final_stage = 1.0 / t <= 0.9 * tol
        stage_tol = (0.3 * tol if final_stage else 1e-6) * t
        for _ in range(60):
            total += 1
            f_val, g0 = f_value_grad(y)
            inv_h = -1.0 / h
            grad = t * g0 + J.T @ inv_h
            if np.abs(grad).max() <= stage_tol or total >= max_iter:
                break
            M = (J.T * inv_h ** 2) @ J
            M[np.diag_indices(rows.n_x)] += t * hess_f_scalar + (hscale @ inv_h)
            # Jacobi scaling keeps the solve stable once active rows push
            # 1/h^2 toward 1/tol^2
            d = np.sqrt(np.maximum(M.diagonal(), 1e-300))
            Ms = M / d[:, None] / d[None, :]
            try:
                dy = np.linalg.solve(Ms, -grad / d) / d
            except np.linalg.LinAlgError:
                Ms[np.diag_indices_from(Ms)] += 1e-12
                dy = np.linalg.solve(Ms, -grad / d) / d
            slope = float(grad @ dy)
            if slope >= 0:
                break  # numerically flat; the center is as good as it gets
            barrier = t * f_val - np.log(-h).sum()
            s = 1.0
            while s > 1e-16 and np.any(rows.values(y + s * dy) >= 0):
                s *= LS_BETA
            while s > 1e-16:
                y_n = y + s * dy
                h_n, J_n, _ = rows.evaluate(y_n)
                f_n, _ = f_value_grad(y_n)
                if t * f_n - np.log(-h_n).sum() <= barrier + LS_ALPHA * s * slope:
                    break
                s *= LS_BETA
            if s <= 1e-16:
                break
            y, h, J = y_n, h_n, J_n
        if final_stage or total >= max_iter:
            break
        t = min(t * MU_FACTOR, 1.000001 / (0.9 * tol))
    lam = (-1.0 / h) / t
    _, g0 = f_value_grad(y)
    kkt = max(float(np.abs(g0 + J.T @ lam).max()), float((lam * (-h)).max()))
    status = "optimal" if kkt <= tol else "max-iter"
    return y, lam, kkt, total, status


def _newton_active(rows: _Rows, f_value_grad, hess_f_scalar: float, y: np.ndarray,
                   active: list[int]):
    """Newton solve of stationarity plus h_i(y)=0 on a fixed active set."""
    lamA = None
    for _ in range(12):
        h, J, hscale = rows.evaluate(y)
        _, g0 = f_value_grad(y)
        JA = J[active]
        if lamA is None:
            lamA, *_ = np.linalg.lstsq(JA.T, -g0, rcond=None)
        r1 = g0 + JA.T @ lamA
        r2 = h[active]
        scale = max(1.0, float(np.abs(lamA).max()))
        if max(np.abs(r1).max(), np.abs(r2).max()) <= 1e-12 * scale:
            return y, lamA
        k = len(active)
        d = rows.dim
        kkt = np.zeros((d + k, d + k))
        # curvature uses clamped multipliers; only the fixed point matters
        kkt[np.diag_indices(rows.n_x)] = hess_f_scalar + float(
            hscale[active] @ np.maximum(lamA, 0.0))
        kkt[:d, d:] = JA.T
        kkt[d:, :d] = JA
        rhs = -np.concatenate([r1, r2])
        try:
            step = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        if not np.all(np.isfinite(step)) or np.abs(step).max() > 1e6 * (1.0 + np.abs(y).max()):
            return None
        y = y + step[:d]
        lamA = lamA + step[d:]
    return None


def _polish(rows: _Rows, f_value_grad, hess_f_scalar: float, y0: np.ndarray,
            lam0: np.ndarray, tol: float):
    """Active-set refinement of a barrier solution toward exact KKT.

    Returns (y, lam, kkt) on success, None when no active-set guess can be
    certified (caller keeps the barrier point).  Several identification
    thresholds are tried; thin constraint geometry can fool any single one.
    """
    h, _, _ = rows.evaluate(y0)
    # on the central path lam*|h| is constant, so the ratio lam/|h| separates
    # active rows (huge) from inactive ones (tiny); rows near sqrt(1/t) are
    # ambiguous and left for the add/drop loop to settle
    ratio = lam0 / np.maximum(np.abs(h), 1e-300)
    tried = set()
    for cut in (1e4, 1e2, 1.0):
        guess = tuple(int(i) for i in np.where(ratio > cut)[0])
        if guess in tried:
            continue
        tried.add(guess)
        result = _polish_from(rows, f_value_grad, hess_f_scalar, y0, list(guess), tol)
        if result is not None:
            return result
    return None


def _blocking_step(rows: _Rows, y: np.ndarray, delta: np.ndarray, active: list[int]):
    """Largest step along delta keeping inactive rows nonpositive.

    Each row is exactly quadratic in the step length, so the first crossing
    solves in closed form.  Returns (theta, blocking_row_or_None).
    """
    h, J, _ = rows.evaluate(y)
    lin = J @ delta
    dx2 = float(delta[:rows.n_x] @ delta[:rows.n_x])
    nq = len(rows.q_vals)
    quad = np.zeros(rows.m)
    if nq:
        quad[:nq] = rows.q_taus * dx2 / rows.q_scale
    crossing = np.full(rows.m, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        # h<0 and quad>0 give exactly one positive root
        disc = np.sqrt(np.maximum(lin * lin - 4.0 * quad * h, 0.0))
        q_root = (-lin + disc) / (2.0 * quad)
        l_root = -h / lin
    crossing[quad > 0] = q_root[quad > 0]
    lin_only = (quad == 0) & (lin > 0)
    crossing[lin_only] = l_root[lin_only]
    crossing[list(active)] = np.inf
    crossing[crossing <= 1e-12] = np.inf
    i = int(np.argmin(crossing))
    if crossing[i] < 1.0:
        return float(crossing[i]), i
    return 1.0, None


def _polish_from(rows: _Rows, f_value_grad, hess_f_scalar: float, y0: np.ndarray,
                 active: list[int], tol: float):
    """Primal active-set refinement: equality solves plus ratio tests."""
    y = y0.copy()
    seen: set[frozenset] = set()
    for _ in range(40):
        key = frozenset(active)
        if key in seen:
            return None
        if active:
            res = _newton_active(rows, f_value_grad, hess_f_scalar, y.copy(), active)
            if res is None:
                return None
            target, lamA = res
        else:
            if hess_f_scalar <= 0:
                return None
            _, g0 = f_value_grad(y)
            target, lamA = y - g0 / hess_f_scalar, np.zeros(0)
        delta = target - y
        if float(np.abs(delta).max(initial=0.0)) > 1e-13 * (1.0 + np.abs(y).max()):
            theta, blocker = _blocking_step(rows, y, delta, active)
            if blocker is not None:
                y = y + theta * delta
                active.append(blocker)
                continue
        seen.add(key)
        y = target
        if lamA.size and lamA.min() < -1e-9:
            active.pop(int(np.argmin(lamA)))
            continue
        lam = np.zeros(rows.m)
        if active:
            lam[active] = np.maximum(lamA, 0.0)
        h, J, _ = rows.evaluate(y)
        if np.any(h > 1e-10):
            return None
        _, g0 = f_value_grad(y)
        kkt = max(float(np.abs(g0 + J.T @ lam).max()),
                  float(np.abs(lam * h).max()), float(max(h.max(initial=0.0), 0.0)))
        if kkt <= tol:
            return y, lam, kkt
        return None
    return None


def _solve_rows(rows: _Rows, f_value_grad, hess_f_scalar: float, y0: np.ndarray,
                tol: float, max_iter: int):
    """Barrier stage to moderate accuracy, then active-set polish to `tol`."""
    eff = max(tol, 1e-6)
    y, lam, kkt, its, status = _pdip(rows, f_value_grad, hess_f_scalar, y0, eff, max_iter)
    polished = _polish(rows, f_value_grad, hess_f_scalar, y, lam, tol)
    if polished is None and kkt > tol:
        # rare recovery path (degenerate active sets): rerun the barrier at
        # full accuracy with a fresh budget
        y, lam, kkt, extra, status = _pdip(rows, f_value_grad, hess_f_scalar, y,
                                           tol, max_iter)
        its += extra
        polished = _polish(rows, f_value_grad, hess_f_scalar, y, lam, tol)
    if polished is not None:
        y, lam, kkt = polished
    status = "optimal" if kkt <= tol else "max-iter"
    return y, lam, kkt, its, status


def _split_multipliers(rows: _Rows, lam: np.ndarray) -> dict:
    nq = len(rows.q_vals)
    return {"quadratic": lam[:nq] / rows.q_scale if nq else lam[:nq],
            "linear_and_bounds": lam[nq:].copy()}


def _strict_set_point(spec: SubproblemSpec) -> np.ndarray:
    """A point strictly inside the box/linear set, biased toward spec.interior."""
    x = spec.center.copy()
    lo, up = spec.lower, spec.upper
    both = np.isfinite(lo) & np.isfinite(up)
    width = np.where(both, up - lo, 1.0)
    x = np.clip(x, np.where(np.isfinite(lo), lo + 1e-3 * width, -np.inf),
                np.where(np.isfinite(up), up - 1e-3 * width, np.inf))
    if spec.interior is not None:
        x = 0.99 * x + 0.01 * np.asarray(spec.interior, dtype=float)
    return x


def _blend_strict(rows: _Rows, x_star: np.ndarray, set_point: np.ndarray):
    """Nudge a (possibly boundary) feasible point strictly inside all rows."""
    for theta in (0.0, 1e-9, 1e-7, 1e-5, 1e-3, 1e-2):
        x = (1.0 - theta) * x_star + theta * set_point
        if np.all(rows.values(x) < -1e-12):
            return x
    return None


def _set_rows_strict(rows_lin_only: _Rows, x: np.ndarray, spec: SubproblemSpec) -> np.ndarray:
    """Pull x toward the declared interior until the set rows hold strictly."""
    if rows_lin_only.lin_G.size == 0:
        return x
    target = spec.interior if spec.interior is not None else spec.center
    target = np.asarray(target, dtype=float)
    for _ in range(60):
        slack = rows_lin_only.lin_G @ x - rows_lin_only.lin_h
        if np.all(slack < -STRICT_MARGIN):
            return x
        x = 0.5 * x + 0.5 * target
    raise ValueError("could not find a strictly feasible point of the constraint set; "
                     "provide SubproblemSpec.interior")


def solve_feasibility(spec: SubproblemSpec, tol: float = 1e-8,
                      max_iter: int = 200) -> SubproblemSolution:
    """Minimize eta subject to every surrogate <= eta and x in the box/linear set.

    Always feasible; eta* <= max_i of the surrogate values at any set point.
    """
    if not spec.constraints:
        raise ValueError("feasibility problem requires at least one surrogate constraint")
    rows = _Rows(spec, with_eta=True)
    x0 = _strict_set_point(spec)
    x0 = _set_rows_strict(rows, x0, spec)
    d = x0 - spec.center
    q0 = np.array([c.value + c.grad @ d + c.curvature * (d @ d) for c in spec.constraints])
    y0 = np.append(x0, q0.max() + 1.0)
    e = np.zeros(rows.dim)
    e[-1] = 1.0

    y, lam, kkt, its, status = _solve_rows(rows, lambda y: (float(y[-1]), e), 0.0,
                                            y0, tol, max_iter)
    return SubproblemSolution(x=y[:-1], status=status, kkt_residual=kkt,
                              iterations=its, multipliers=_split_multipliers(rows, lam),
                              eta=float(y[-1]))


def solve_subproblem(spec: SubproblemSpec, tol: float = 1e-8,
                     max_iter: int = 200) -> SubproblemSolution:
    """Global optimum of the convex subproblem (unique by strong convexity).

    Runs a feasibility phase first whenever the center violates a surrogate;
    reports `infeasible-detected` when even the feasibility proble cannot
    produce a strictly feasible start (the caller then keeps that problem's
    solution, mirroring the optimizer's fallback step).
    """
    n = spec.dim
    g0 = spec.objective_grad
    tau0 = spec.objective_curvature
    obj_scale = max(1.0, np.abs(g0).max(), tau0)

    rows = _Rows(spec, with_eta=False)
    if rows.m == 0:
        x = spec.center - g0 / (2.0 * tau0)
        return SubproblemSolution(x=x, status="optimal", kkt_residual=0.0, iterations=0)

    x0 = _strict_set_point(spec)
    x0 = _set_rows_strict(rows, x0, spec)
    if spec.constraints:
        d = x0 - spec.center
        q0 = np.array([(c.value + c.grad @ d + c.curvature * (d @ d))
                       for c in spec.constraints])
        if np.any(q0 >= -STRICT_MARGIN):
            phase1 = solve_feasibility(spec, tol=tol, max_iter=max_iter)
            if phase1.eta is None or phase1.eta >= -1e-7:
                phase1.status = "infeasible-detected"
                return phase1
            start = _blend_strict(rows, phase1.x, x0)
            if start is None:
                phase1.status = "infeasible-detected"
                return phase1
            x0 = start

    def value_grad(y):
        d = y - spec.center
        val = (g0 @ d + tau0 * (d @ d)) / obj_scale
        return float(val), (g0 + 2.0 * tau0 * d) / obj_scale

    y, lam, kkt, its, status = _solve_rows(rows, value_grad, 2.0 * tau0 / obj_scale,
                                           x0, tol, max_iter)
    return SubproblemSolution(x=y, status=status, kkt_residual=kkt, iterations=its,
                              multipliers=_split_multipliers(rows, lam))


# ---------------------------------------------------------------------------
# Plain-text dump of a spec for offline inspection
# ---------------------------------------------------------------------------

def dump_subproblem(spec: SubproblemSpec, path) -> None:
    """Write a spec as plain text: one `key: values...` line per item.

    Layout: n, center, objective (value curvature grad...), one `quad` line
    per constraint (value curvature grad...), one `lin` line per row
    (rhs coeffs...), then lower/upper/interior vectors.
    """
    def vec(v):
        return " ".join(repr(float(x)) for x in v)

    lines = [f"n: {spec.dim}",
             f"center: {vec(spec.center)}",
             f"objective: {float(spec.objective_value)!r} {float(spec.objective_curvature)!r} "
             f"{vec(spec.objective_grad)}"]
    for c in spec.constraints:
        lines.append(f"quad: {float(c.value)!r} {float(c.curvature)!r} {vec(c.grad)}")
    if spec.lin_rows is not None:
        for row, b in zip(spec.lin_rows, spec.lin_rhs):
            lines.append(f"lin: {float(b)!r} {vec(row)}")
    lines.append(f"lower: {vec(spec.lower)}")
    lines.append(f"upper: {vec(spec.upper)}")
    if spec.interior is not None:
        lines.append(f"interior: {vec(spec.interior)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_subproblem(path) -> SubproblemSpec:
    """Read back a dump produced by `dump_subproblem`."""
    fields: dict[str, list[list[float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, rest = line.partition(":")
            fields.setdefault(key.strip(), []).append(
                [float(tok) for tok in rest.split()])
    obj = fields["objective"][0]
    quads = [QuadConstraint(value=q[0], curvature=q[1], grad=np.array(q[2:]))
             for q in fields.get("quad", [])]
    lins = fields.get("lin", [])
    return SubproblemSpec(
        center=np.array(fields["center"][0]),
        objective_value=obj[0],
        objective_curvature=obj[1],
        objective_grad=np.array(obj[2:]),
        constraints=quads,
        lin_rows=np.array([l[1:] for l in lins]) if lins else None,
        lin_rhs=np.array([l[0] for l in lins]) if lins else None,
        lower=np.array(fields["lower"][0]),
        upper=np.array(fields["upper"][0]),
        interior=np.array(fields["interior"][0]) if "interior" in fields else None,
    )
