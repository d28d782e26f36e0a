"""Stochastic successive convex approximation loop for power and sharing control.

Each iteration draws one network realization, refreshes recursive estimates of
the (nonconvex, stochastic) objective and constraint values and gradients,
solves the resulting strongly convex quadratic subproblem over the
deterministic cap/box set, and moves by a diminishing convex combination.
Per-iteration cost: one sample, O((S+B)*L*B) surrogate updates, and an
interior-point solve on L*B + L variables.

The surrogate stack tracks 2B + S + 1 stochastic constraints in buyer mode:
the seller-profit floor, one rate floor per MNO, and one ROI constraint per
buyer (seller mode drops the floor).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import subsolver
from .channel import all_rates_and_gradients, instantaneous_rate, sample_network
from .economics import EconParams, expected_users, penalty_term
from .geometry import NetworkConfig, seed_entropy


@dataclass
class StepSchedule:
    """Two-timescale power-law step sizes.

    rho(t) = rho_scale*(1+t)^-rho_exponent averages the surrogates,
    beta(t) = beta_scale*(1+t)^-beta_exponent moves the iterate.  The
    exponent windows make rho summable in square but not in value, and
    beta/rho -> 0.
    """

    rho_exponent: float = 0.6
    beta_exponent: float = 0.8
    rho_scale: float = 1.0
    beta_scale: float = 1.0

    def __post_init__(self):
        if not 0.5 < self.rho_exponent <= 1.0:
            raise ValueError("rho_exponent must lie in (0.5, 1]")
        if self.beta_exponent <= self.rho_exponent:
            raise ValueError("beta_exponent must exceed rho_exponent")
        if not 0.0 < self.rho_scale <= 1.0 or not 0.0 < self.beta_scale <= 1.0:
            raise ValueError("step scales must lie in (0, 1]")

    def rho(self, t: int) -> float:
        return self.rho_scale * (1.0 + t) ** (-self.rho_exponent)

    def beta(self, t: int) -> float:
        return self.beta_scale * (1.0 + t) ** (-self.beta_exponent)


@dataclass
class SolverSettings:
    """Loop controls bundled for the optimizer entry points."""

    schedule: StepSchedule = field(default_factory=StepSchedule)
    iterations: int = 500
    curvature: float = 1.0          # tau for every surrogate
    subproblem_tol: float = 1e-8
    batch_size: int = 1             # samples averaged per iteration
    validation_samples: int = 300


@dataclass
class SurrogateState:
    """Recursive value and gradient estimates for the objective and constraints."""

    config: NetworkConfig
    econ: EconParams
    objective: str                  # "buyer" | "seller"
    labels: list[str]
    values: np.ndarray              # (m,)
    grad_a: np.ndarray              # (m, L, B)
    grad_p: np.ndarray              # (m, L)
    curvature: np.ndarray           # (m,)
    iteration: int = -1

    @property
    def num_functions(self) -> int:
        return len(self.labels)


@dataclass
class CsscaTrace:
    """Per-iteration convergence record; one row per iteration."""

    t: list[int] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    max_constraint_residual: list[float] = field(default_factory=list)
    step_norm: list[float] = field(default_factory=list)
    fallback_flag: list[int] = field(default_factory=list)   # 0 main, 1 feasibility, 2 null step
    wall_ms: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t)

    def append(self, t, objective, residual, step_norm, fallback, wall_ms):
        self.t.append(int(t))
        self.objective.append(float(objective))
        self.max_constraint_residual.append(float(residual))
        self.step_norm.append(float(step_norm))
        self.fallback_flag.append(int(fallback))
        self.wall_ms.append(float(wall_ms))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,objective,max_constraint_residual,step_norm,fallback_flag,wall_ms\n")
            for row in zip(self.t, self.objective, self.max_constraint_residual,
                           self.step_norm, self.fallback_flag, self.wall_ms):
                fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r},{row[4]},{row[5]!r}\n")


@dataclass
class CsscaResult:
    a: np.ndarray
    p: np.ndarray
    trace: CsscaTrace
    state: SurrogateState


@dataclass
class FeasibilityReport:
    """Post-rounding constraint audit: exact caps, MC residual estimates."""

    rate_estimates: np.ndarray       # (n_mnos, 2): mean, stderr
    residuals: dict                  # label -> (mean, stderr); feasible when mean <= 0
    changed_entries: int
    feasible: bool


def _labels(config: NetworkConfig, objective: str) -> list[str]:
    labels = ["objective"]
    if objective == "buyer":
        labels.append("seller_floor")
    labels += [f"rate_floor:{k}" for k in range(config.num_mnos)]
    labels += [f"roi:{b}" for b in range(config.num_buyers)]
    return labels


def initial_point(config: NetworkConfig) -> tuple[np.ndarray, np.ndarray]:
    """Cap-respecting uniform start: half the per-entry room, powers at half cap."""
    a0 = np.empty((config.num_subbands, config.num_buyers))
    for s in range(config.num_sellers):
        v = min(0.5,
                config.lease_cap[s] / max(config.num_buyers, 1),
                config.borrow_cap[s] / config.subbands_per_seller[s])
        a0[list(config.bands_of(s)), :] = v
    p0 = np.full(config.num_subbands, config.max_seller_power / 2.0)
    return a0, p0


def init(config: NetworkConfig, econ: EconParams, schedule: StepSchedule, seed,
         objective: str = "buyer", curvature: float = 1.0):
    """Initial iterate plus a zeroed surrogate state (estimates start at zero)."""
    if objective not in ("buyer", "seller"):
        raise ValueError("objective must be 'buyer' or 'seller'")
    a0, p0 = initial_point(config)
    labels = _labels(config, objective)
    m = len(labels)
    state = SurrogateState(
        config=config, econ=econ, objective=objective, labels=labels,
        values=np.zeros(m),
        grad_a=np.zeros((m, config.num_subbands, config.num_buyers)),
        grad_p=np.zeros((m, config.num_subbands)),
        curvature=np.full(m, float(curvature)),
        iteration=-1)
    return a0, p0, state


def _sample_terms(sample, a, p, econ: EconParams, config: NetworkConfig, objective: str):
    """Per-sample values and gradients of every tracked function (min form)."""
    S, B, L = config.num_sellers, config.num_buyers, config.num_subbands
    rates, d_a, d_p = all_rates_and_gradients(sample, a, p)
    n_users = np.array([expected_users(config.user_intensity[k], config.radius_m)
                        for k in range(config.num_mnos)])
    rev = econ.price_per_rate * econ.horizon_months * n_users    # revenue per unit rate
    lease = econ.lease_by_band(config)                           # (L, B)
    m = 1 + (1 if objective == "buyer" else 0) + config.num_mnos + B
    vals = np.zeros(m)
    g_a = np.zeros((m, L, B))
    g_p = np.zeros((m, L))

    buyer_cost = (lease * a).sum(axis=0)                         # (B,)
    u_b = np.array([rev[S + b] * rates[S + b] - buyer_cost[b] for b in range(B)])
    lease_income = np.array([(lease[list(config.bands_of(s)), :] * a[list(config.bands_of(s)), :]).sum()
                             for s in range(S)])
    fixed_cost = np.array([econ.license_price[s] * config.subbands_per_seller[s]
                           for s in range(S)])
    u_s = np.array([rev[s] * rates[s] + lease_income[s] - fixed_cost[s] for s in range(S)])

    pen = penalty_term(a)
    pen_grad = 1.0 - 2.0 * a

    w, v = econ.buyer_weights, econ.seller_weights
    if objective == "buyer":
        vals[0] = -float(w @ u_b) + econ.penalty_weight * pen
        for b in range(B):
            g_a[0] -= w[b] * rev[S + b] * d_a[S + b]
            g_a[0][:, b] += w[b] * lease[:, b]
            g_p[0] -= w[b] * rev[S + b] * d_p[S + b]
        g_a[0] += econ.penalty_weight * pen_grad
        # seller-profit floor: epsilon - weighted seller profit <= 0
        vals[1] = econ.epsilon - float(v @ u_s)
        for s in range(S):
            g_a[1] -= v[s] * rev[s] * d_a[s]
            g_a[1][list(config.bands_of(s)), :] -= v[s] * lease[list(config.bands_of(s)), :]
            g_p[1] -= v[s] * rev[s] * d_p[s]
        base = 2
    else:
        vals[0] = -float(v @ u_s) + econ.penalty_weight * pen
        for s in range(S):
            g_a[0] -= v[s] * rev[s] * d_a[s]
            g_a[0][list(config.bands_of(s)), :] -= v[s] * lease[list(config.bands_of(s)), :]
            g_p[0] -= v[s] * rev[s] * d_p[s]
        g_a[0] += econ.penalty_weight * pen_grad
        base = 1

    for k in range(config.num_mnos):
        vals[base + k] = econ.rate_floor - rates[k]
        g_a[base + k] = -d_a[k]
        g_p[base + k] = -d_p[k]
    base += config.num_mnos
    for b in range(B):
        vals[base + b] = -u_b[b]
        g_a[base + b] = -rev[S + b] * d_a[S + b]
        g_a[base + b][:, b] += lease[:, b]
        g_p[base + b] = -rev[S + b] * d_p[S + b]
    return vals, g_a, g_p


def update_surrogates(state: SurrogateState, sample, a, p, rho: float,
                      econ: EconParams | None = None) -> SurrogateState:
    """Fold one sample into the recursive estimates with weight rho."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    econ = econ if econ is not None else state.econ
    vals, g_a, g_p = _sample_terms(sample, np.asarray(a, dtype=float),
                                   np.asarray(p, dtype=float), econ,
                                   state.config, state.objective)
    keep = 1.0 - rho
    state.values = keep * state.values + rho * vals
    state.grad_a = keep * state.grad_a + rho * g_a
    state.grad_p = keep * state.grad_p + rho * g_p
    state.iteration += 1
    return state


def _cap_rows(config: NetworkConfig):
    """Borrow- and lease-cap rows over the flattened (a, p) vector."""
    L, B = config.num_subbands, config.num_buyers
    n = L * B + L
    rows, rhs = [], []
    for s in range(config.num_sellers):
        bands = list(config.bands_of(s))
        for b in range(B):
            row = np.zeros(n)
            for l in bands:
                row[l * B + b] = 1.0
            rows.append(row)
            rhs.append(float(config.borrow_cap[s]))
        for l in bands:
            row = np.zeros(n)
            row[l * B: l * B + B] = 1.0
            rows.append(row)
            rhs.append(float(config.lease_cap[s]))
    if not rows:
        return None, None
    return np.array(rows), np.array(rhs)


def build_subproblem(state: SurrogateState, a, p) -> subsolver.SubproblemSpec:
    """Assemble the convex subproblem around the current iterate."""
    config = state.config
    L, B = config.num_subbands, config.num_buyers
    a = np.asarray(a, dtype=float)
    p = np.asarray(p, dtype=float)
    center = np.concatenate([a.ravel(), p])

    def flat(i):
        return np.concatenate([state.grad_a[i].ravel(), state.grad_p[i]])

    constraints = [subsolver.QuadConstraint(float(state.values[i]), flat(i),
                                            float(state.curvature[i]))
                   for i in range(1, state.num_functions)]
    lin_rows, lin_rhs = _cap_rows(config)
    lower = np.zeros(L * B + L)
    upper = np.concatenate([np.ones(L * B), np.full(L, config.max_seller_power)])
    a_int = np.empty((L, B))
    for s in range(config.num_sellers):
        v = 0.9 * min(0.5,
                      config.lease_cap[s] / max(B, 1),
                      config.borrow_cap[s] / config.subbands_per_seller[s])
        a_int[list(config.bands_of(s)), :] = v
    interior = np.concatenate([a_int.ravel(), np.full(L, config.max_seller_power / 2.0)])
    return subsolver.SubproblemSpec(
        center=center,
        objective_value=float(state.values[0]),
        objective_grad=flat(0),
        objective_curvature=float(state.curvature[0]),
        constraints=constraints,
        lin_rows=lin_rows,
        lin_rhs=lin_rhs,
        lower=lower,
        upper=upper,
        interior=interior)


def iterate(state: SurrogateState, a, p, beta: float, tol: float = 1e-8):
    """One optimization move: solve the subproblem, fall back to the
    feasibility problem when it is infeasible, then average with weight beta.

    Returns (a_next, p_next, record) where record feeds the trace.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    config = state.config
    L, B = config.num_subbands, config.num_buyers
    a = np.asarray(a, dtype=float)
    p = np.asarray(p, dtype=float)
    start = time.perf_counter()
    spec = build_subproblem(state, a, p)
    sol = subsolver.solve_subproblem(spec, tol=tol)
    fallback = 0
    if sol.status == "infeasible-detected":
        sol = subsolver.solve_feasibility(spec, tol=tol)
        fallback = 1
    if sol.status == "max-iter":
        # treat an unconverged solve as a null step; the averaged update
        # tolerates occasional stalls
        target = spec.center
        fallback = 2
    else:
        target = sol.x
    new = (1.0 - beta) * spec.center + beta * target
    new = np.clip(new, spec.lower, spec.upper)
    a_next = new[:L * B].reshape(L, B)
    p_next = new[L * B:]
    wall = (time.perf_counter() - start) * 1e3
    residual = float(state.values[1:].max()) if state.num_functions > 1 else 0.0
    record = dict(objective=-float(state.values[0]),
                  max_constraint_residual=residual,
                  step_norm=float(np.linalg.norm(new - spec.center)),
                  fallback_flag=fallback,
                  wall_ms=wall)
    return a_next, p_next, record


def run(config: NetworkConfig, econ: EconParams, schedule: StepSchedule | None = None,
        iterations: int | None = None, seed=0, objective: str = "buyer",
        settings: SolverSettings | None = None) -> CsscaResult:
    """Full optimization run; deterministic for a fixed seed.

    Draws `batch_size` realizations per iteration (sub-seeds derived from
    `seed`), so two runs sharing a seed see identical sample streams.
    """
    settings = settings or SolverSettings()
    schedule = schedule or settings.schedule
    T = iterations if iterations is not None else settings.iterations
    if T < 1:
        raise ValueError("iterations must be at least 1")
    entropy = seed_entropy(seed)
    a, p, state = init(config, econ, schedule, seed, objective=objective,
                       curvature=settings.curvature)
    trace = CsscaTrace()
    for t in range(T):
        if settings.batch_size == 1:
            sample = sample_network(config, entropy + (t, 0))
            state = update_surrogates(state, sample, a, p, schedule.rho(t), econ)
        else:
            vals, g_a, g_p = None, None, None
            for j in range(settings.batch_size):
                sample = sample_network(config, entropy + (t, j))
                v1, a1, p1 = _sample_terms(sample, a, p, econ, config, objective)
                vals = v1 if vals is None else vals + v1
                g_a = a1 if g_a is None else g_a + a1
                g_p = p1 if g_p is None else g_p + p1
            rho = schedule.rho(t)
            k = settings.batch_size
            state.values = (1 - rho) * state.values + rho * vals / k
            state.grad_a = (1 - rho) * state.grad_a + rho * g_a / k
            state.grad_p = (1 - rho) * state.grad_p + rho * g_p / k
            state.iteration += 1
        a, p, record = iterate(state, a, p, schedule.beta(t), tol=settings.subproblem_tol)
        trace.append(t, record["objective"], record["max_constraint_residual"],
                     record["step_norm"], record["fallback_flag"], record["wall_ms"])
    return CsscaResult(a=a, p=p, trace=trace, state=state)


def _round_with_caps(a: np.ndarray, config: NetworkConfig) -> tuple[np.ndarray, int]:
    """Round to {0,1}; zero the smallest-valued offenders of violated caps."""
    a_bin = (a >= 0.5).astype(float)
    changed = 0
    for s in range(config.num_sellers):
        bands = list(config.bands_of(s))
        for l in bands:
            while a_bin[l].sum() > config.lease_cap[s]:
                on = np.where(a_bin[l] == 1.0)[0]
                drop = on[np.argmin(a[l, on])]
                a_bin[l, drop] = 0.0
                changed += 1
        for b in range(config.num_buyers):
            while a_bin[bands, b].sum() > config.borrow_cap[s]:
                on = [l for l in bands if a_bin[l, b] == 1.0]
                drop = min(on, key=lambda l: a[l, b])
                a_bin[drop, b] = 0.0
                changed += 1
    return a_bin, changed


def binarize(a, p, config: NetworkConfig, econ: EconParams, validation_samples: int,
             master_seed=0, include_seller_floor: bool = True):
    """Round the relaxed sharing matrix and audit every constraint.

    Cap constraints are re-checked exactly; the stochastic ones (profit
    floor, rate floors, ROI) are estimated by Monte Carlo at the rounded
    point with standard errors.  A residual counts as satisfied when its
    mean is below three standard errors.
    """
    a = np.asarray(a, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(a < 0) or np.any(a > 1):
        raise ValueError("sharing values must lie in [0, 1]")
    a_bin, changed = _round_with_caps(a, config)

    S, B = config.num_sellers, config.num_buyers
    n_mnos = config.num_mnos
    entropy = seed_entropy(master_seed)
    rates = np.empty((n_mnos, validation_samples))
    for i in range(validation_samples):
        sample = sample_network(config, entropy + (i,))
        for k in range(n_mnos):
            rates[k, i] = instantaneous_rate(sample, a_bin, p, k)
    mean = rates.mean(axis=1)
    se = rates.std(axis=1, ddof=1) / np.sqrt(validation_samples) \
        if validation_samples > 1 else np.zeros(n_mnos)
    rate_estimates = np.column_stack([mean, se])

    n_users = np.array([expected_users(config.user_intensity[k], config.radius_m)
                        for k in range(n_mnos)])
    rev = econ.price_per_rate * econ.horizon_months * n_users
    lease = econ.lease_by_band(config)

    def stat(values: np.ndarray) -> tuple[float, float]:
        s_err = (values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
        return float(values.mean()), float(s_err)

    residuals = {}
    for k in range(n_mnos):
        residuals[f"rate_floor:{k}"] = stat(econ.rate_floor - rates[k])
    for b in range(B):
        cost = float(lease[:, b] @ a_bin[:, b])
        residuals[f"roi:{b}"] = stat(-(rev[S + b] * rates[S + b] - cost))
    if include_seller_floor:
        profit_s = np.zeros(validation_samples)
        for s in range(S):
            rows = list(config.bands_of(s))
            income = float((econ.lease_price[s] * a_bin[rows, :].sum(axis=0)).sum())
            fixed = econ.license_price[s] * config.subbands_per_seller[s]
            profit_s += econ.seller_weights[s] * (rev[s] * rates[s] + income - fixed)
        residuals["seller_floor"] = stat(econ.epsilon - profit_s)

    feasible = all(m_ <= 3.0 * s_ + 1e-9 for m_, s_ in residuals.values())
    report = FeasibilityReport(rate_estimates=rate_estimates, residuals=residuals,
                               changed_entries=changed, feasible=feasible)
    return a_bin, p, report
