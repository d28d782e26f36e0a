"""Profit model, scalarization of the multi-operator objective, penalty term.

Buyer revenue is linear in the per-user expected rate and the subscriber
count; costs are linear in the leased sub-bands.  The multiobjective profit
problem is reduced to a single objective by keeping the weighted buyer profit
and bounding the weighted seller profit below by epsilon; epsilon is chosen
as a fraction of the sellers' standalone maximum profit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import M_PER_KM, NetworkConfig, seed_entropy


class InfeasibleError(RuntimeError):
    """Raised when a profit optimization admits no feasible operating point."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


def _weights(value, n: int, name: str) -> np.ndarray:
    if value is None:
        return np.full(n, 1.0 / n) if n else np.zeros(0)
    w = np.asarray(value, dtype=float).reshape(-1)
    if w.shape != (n,):
        raise ValueError(f"{name} must have length {n}")
    if np.any(w < 0) or (n and abs(w.sum() - 1.0) > 1e-9):
        raise ValueError(f"{name} must be nonnegative and sum to 1")
    return w


@dataclass
class EconParams:
    """Prices, weights and scalarization knobs for the profit model.

    `lease_price[s, b]` is what buyer b pays seller s per leased sub-band;
    `license_price[s]` is the per-sub-band regulator fee each seller sinks.
    `epsilon` is the floor on the weighted seller profit and `penalty_weight`
    scales the binarization penalty sum(a - a^2).
    """

    price_per_rate: float = 2.0      # $ per bps/Hz per month
    horizon_months: float = 120.0
    lease_price: np.ndarray | float | Sequence = 1800.0   # (S, B)
    license_price: np.ndarray | float | Sequence = 2000.0  # (S,)
    seller_weights: np.ndarray | None = None
    buyer_weights: np.ndarray | None = None
    epsilon: float = 0.0
    penalty_weight: float = 1e5
    rate_floor: float = 1.0          # bps/Hz

    num_sellers: int = 2
    num_buyers: int = 1

    def __post_init__(self):
        s, b = self.num_sellers, self.num_buyers
        if self.price_per_rate < 0 or self.horizon_months < 0:
            raise ValueError("prices and horizon must be nonnegative")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be nonnegative")
        if self.rate_floor < 0:
            raise ValueError("rate_floor must be nonnegative")
        lease = np.asarray(self.lease_price, dtype=float)
        if lease.ndim == 0:
            lease = np.full((s, b), float(lease))
        elif lease.ndim == 1:
            if lease.shape[0] != s:
                raise ValueError(f"per-seller lease_price must have length {s}")
            lease = np.repeat(lease[:, None], b, axis=1) if b else lease.reshape(s, 0)
        if lease.shape != (s, b):
            raise ValueError(f"lease_price must have shape ({s}, {b})")
        if np.any(lease < 0):
            raise ValueError("lease_price must be nonnegative")
        self.lease_price = lease
        lic = np.asarray(self.license_price, dtype=float)
        if lic.ndim == 0:
            lic = np.full(s, float(lic))
        if lic.shape != (s,) or np.any(lic < 0):
            raise ValueError(f"license_price must be nonnegative with length {s}")
        self.license_price = lic
        self.seller_weights = _weights(self.seller_weights, s, "seller_weights")
        self.buyer_weights = _weights(self.buyer_weights, b, "buyer_weights")

    @classmethod
    def for_config(cls, config: NetworkConfig, **overrides) -> "EconParams":
        """Defaults sized to a network: first seller charges 1800, second 1200."""
        s, b = config.num_sellers, config.num_buyers
        if "lease_price" not in overrides:
            per_seller = np.full(s, 1800.0)
            if s >= 2:
                per_seller[1] = 1200.0
            overrides["lease_price"] = per_seller
        return cls(num_sellers=s, num_buyers=b, **overrides)

    def lease_by_band(self, config: NetworkConfig) -> np.ndarray:
        """Lease prices expanded to sub-band rows, shape (L, B)."""
        return self.lease_price[config.band_owner, :]


def expected_users(user_intensity: float, radius_m: float) -> float:
    """Expected subscriber count in the coverage disc (intensity per km^2)."""
    if user_intensity < 0:
        raise ValueError("user_intensity must be nonnegative")
    return np.pi * (radius_m / M_PER_KM) ** 2 * user_intensity


def buyer_profit(rate_mean: float, a: np.ndarray, buyer: int, econ: EconParams,
                 config: NetworkConfig) -> float:
    """Expected profit of one buyer: rate revenue minus leasing cost."""
    if rate_mean < 0:
        raise ValueError("rate_mean must be nonnegative")
    a = np.asarray(a, dtype=float)
    n_users = expected_users(config.user_intensity[config.num_sellers + buyer],
                             config.radius_m)
    revenue = econ.price_per_rate * econ.horizon_months * n_users * rate_mean
    cost = float(econ.lease_by_band(config)[:, buyer] @ a[:, buyer])
    return revenue - cost


def seller_profit(rate_mean: float, a: np.ndarray, seller: int, econ: EconParams,
                  config: NetworkConfig) -> float:
    """Expected profit of one seller: rate revenue plus lease income minus license fees."""
    if rate_mean < 0:
        raise ValueError("rate_mean must be nonnegative")
    a = np.asarray(a, dtype=float)
    n_users = expected_users(config.user_intensity[seller], config.radius_m)
    revenue = econ.price_per_rate * econ.horizon_months * n_users * rate_mean
    rows = list(config.bands_of(seller))
    lease_income = float((econ.lease_price[seller] * a[rows, :].sum(axis=0)).sum())
    license_cost = econ.license_price[seller] * config.subbands_per_seller[seller]
    return revenue + lease_income - license_cost


def penalty_term(a: np.ndarray) -> float:
    """Binarization penalty sum(a - a^2); zero exactly when a is binary."""
    a = np.asarray(a, dtype=float)
    if a.size and (a.min() < 0 or a.max() > 1):
        raise ValueError("sharing values must lie in [0, 1]")
    return float((a - a * a).sum())


def scalarized_objective(a: np.ndarray, p: np.ndarray, rates: np.ndarray,
                         econ: EconParams, config: NetworkConfig) -> float:
    """Penalized single-objective value: weighted buyer profit minus the penalty.

    `rates` holds per-MNO expected rates (sellers first).  The seller-profit
    floor and the rate/ROI constraints are evaluated separately as residuals,
    not folded in here.
    """
    rates = np.asarray(rates, dtype=float)
    total = 0.0
    for b in range(config.num_buyers):
        total += econ.buyer_weights[b] * buyer_profit(
            rates[config.num_sellers + b], a, b, econ, config)
    return total - econ.penalty_weight * penalty_term(a)


def weighted_seller_profit(a: np.ndarray, rates: np.ndarray, econ: EconParams,
                           config: NetworkConfig) -> float:
    """Weighted total seller profit at the given per-MNO expected rates."""
    rates = np.asarray(rates, dtype=float)
    return sum(econ.seller_weights[s] * seller_profit(rates[s], a, s, econ, config)
               for s in range(config.num_sellers))


def epsilon_from_fraction(fraction: float, max_seller_profit: float) -> float:
    """Seller-profit floor as a fraction of the sellers' standalone maximum.

    fraction 0 keeps pure buyer maximization; fraction 1 pins the sellers at
    their maximum (pure seller priority); values outside [0, 1] are invalid.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    return fraction * max_seller_profit


def compute_umax(config: NetworkConfig, econ: EconParams, solver_settings=None,
                 seed: int = 0) -> float:
    """Maximum weighted seller profit, by running the stochastic optimizer
    on the seller-objective variant (no seller-floor constraint).

    Returns the validation estimate at the converged point; raises
    InfeasibleError when the rate/ROI constraints cannot be met.
    """
    from . import cssca  # runtime import: cssca builds on this module

    settings = solver_settings or cssca.SolverSettings()
    result = cssca.run(config, econ, settings.schedule, settings.iterations, seed,
                       objective="seller", settings=settings)
    a_bin, p_opt, report = cssca.binarize(
        result.a, result.p, config, econ, settings.validation_samples,
        master_seed=seed_entropy(seed) + (617,), include_seller_floor=False)
    if not report.feasible:
        raise InfeasibleError("seller-profit maximization is infeasible", report)
    rates = report.rate_estimates[:, 0]
    return weighted_seller_profit(a_bin, rates, econ, config)
