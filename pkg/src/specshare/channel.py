"""Per-realization channel model: fading, power control, SINR, rates, gradients.

The typical user of every MNO sits at the origin of a shared realization and
associates with the nearest base station of its own network.  Buyer base
stations obey an interference cap: on a seller's sub-band they transmit at
threshold/peak_gain, where the peak gain is the largest fading-times-pathloss
to any user of that seller.  Relaxed sharing values a in [0,1] scale
interference powers linearly and multiply the buyer rate terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gamma as gamma_fn

from .geometry import (
    M_PER_KM,
    NetworkConfig,
    NoCoverageError,
    PointSet,
    as_rng,
    nearest_distance,
    sample_ppp,
    seed_entropy,
)

LN2 = np.log(2.0)

MAX_RESAMPLE_ATTEMPTS = 100


# ---------------------------------------------------------------------------
# Peak interference gain and the transmit power it induces
# ---------------------------------------------------------------------------

def _gain_scale(user_intensity: float, alpha: float) -> float:
    """pi * mu * Gamma(1 + 2/alpha), the scale constant of the peak-gain law."""
    if user_intensity <= 0:
        raise ValueError("user_intensity must be strictly positive")
    if alpha <= 2:
        raise ValueError("pathloss_alpha must exceed 2")
    return np.pi * user_intensity * gamma_fn(1.0 + 2.0 / alpha)


def peak_gain_cdf(z, user_intensity: float, alpha: float):
    """CDF of the largest fading*pathloss gain from a transmitter to a user field.

    The user field is a PPP with `user_intensity` per km^2; gains use km
    distances.  Defined for z > 0.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("gain z must be strictly positive")
    c = _gain_scale(user_intensity, alpha)
    out = np.exp(-c * z ** (-2.0 / alpha))
    return out if out.ndim else float(out)


def peak_gain_pdf(z, user_intensity: float, alpha: float):
    """Density of the peak gain; derivative of `peak_gain_cdf`."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("gain z must be strictly positive")
    c = _gain_scale(user_intensity, alpha)
    out = (2.0 * c / (alpha * z ** (1.0 + 2.0 / alpha))) * np.exp(-c * z ** (-2.0 / alpha))
    return out if out.ndim else float(out)


def peak_gain_from_uniform(u, user_intensity: float, alpha: float):
    """Inverse-CDF map from u in (0,1) to a peak gain value."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie strictly inside (0,1)")
    c = _gain_scale(user_intensity, alpha)
    out = (c / np.log(1.0 / u)) ** (alpha / 2.0)
    return out if out.ndim else float(out)


def sample_buyer_power(zeta: float, user_intensity: float, alpha: float, rng, size=None):
    """Draw capped buyer transmit power(s): zeta divided by a peak-gain draw.

    Inverse-CDF sampling; O(1) per draw and exactly distributed as the
    power law implied by the cap rule.
    """
    if zeta <= 0:
        raise ValueError("zeta must be strictly positive")
    rng = as_rng(rng)
    u = 1.0 - rng.random(size)  # in (0, 1]
    u = np.minimum(u, 1.0 - 1e-16)
    h = peak_gain_from_uniform(u, user_intensity, alpha)
    out = zeta / h
    return out if np.ndim(out) else float(out)


def sample_peak_gain_direct(user_intensity: float, alpha: float, radius_m: float, rng,
                            max_attempts: int = 1000) -> float:
    """Brute-force peak gain: explicit user PPP, max of fading*pathloss.

    Reference construction kept as an oracle for the inverse-CDF sampler;
    resamples the (almost never) empty user field.
    """
    rng = as_rng(rng)
    for _ in range(max_attempts):
        users = sample_ppp(user_intensity, radius_m, rng)
        if len(users):
            d_km = users.distances_m / M_PER_KM
            h = rng.standard_exponential(len(users))
            return float(np.max(h * d_km ** (-alpha)))
    raise NoCoverageError("user field stayed empty; cannot form a peak gain")


# ---------------------------------------------------------------------------
# Decision-variable validation (sharing matrix and seller powers)
# ---------------------------------------------------------------------------

def validate_sharing_matrix(a: np.ndarray, config: NetworkConfig, binary: bool = False,
                            atol: float = 1e-9) -> np.ndarray:
    """Check an (L, B) sharing matrix against box, borrow and lease caps."""
    a = np.asarray(a, dtype=float)
    if a.shape != (config.num_subbands, config.num_buyers):
        raise ValueError(f"sharing matrix must have shape "
                         f"({config.num_subbands}, {config.num_buyers}), got {a.shape}")
    if np.any(a < -atol) or np.any(a > 1 + atol):
        raise ValueError("sharing values must lie in [0, 1]")
    if binary and np.any(np.minimum(np.abs(a), np.abs(1 - a)) > atol):
        raise ValueError("sharing matrix is not binary")
    for s in range(config.num_sellers):
        rows = list(config.bands_of(s))
        if np.any(a[rows, :].sum(axis=0) > config.borrow_cap[s] + atol):
            raise ValueError(f"borrow cap exceeded for seller {s}")
        if np.any(a[rows, :].sum(axis=1) > config.lease_cap[s] + atol):
            raise ValueError(f"lease cap exceeded on a sub-band of seller {s}")
    return a


def validate_power_vector(p: np.ndarray, config: NetworkConfig, atol: float = 1e-9) -> np.ndarray:
    """Check a length-L seller power vector against the box constraint."""
    p = np.asarray(p, dtype=float)
    if p.shape != (config.num_subbands,):
        raise ValueError(f"power vector must have shape ({config.num_subbands},), got {p.shape}")
    if np.any(p < -atol) or np.any(p > config.max_seller_power + atol):
        raise ValueError("seller powers must lie in [0, max_seller_power]")
    return p


# ---------------------------------------------------------------------------
# One network realization
# ---------------------------------------------------------------------------

@dataclass
class NetworkSample:
    """One random realization seen by the typical users at the origin.

    `fading[k]` holds unit-mean exponential gains between the origin and every
    BS of MNO k, one column per global sub-band.  `buyer_power[b, l]` is the
    (shared) transmit power of buyer b's BSs on sub-band l for this draw.
    """

    config: NetworkConfig
    bs_points: list[PointSet]
    fading: list[np.ndarray]          # per MNO, shape (n_k, L)
    buyer_power: np.ndarray           # (B, L) watts
    seed: tuple = (0,)
    resamples: int = 0

    def __post_init__(self):
        self.buyer_power = np.asarray(self.buyer_power, dtype=float).reshape(
            self.config.num_buyers, self.config.num_subbands)
        if any(np.any(f <= 0) for f in self.fading if np.size(f)):
            raise ValueError("fading gains must be strictly positive")
        if self.buyer_power.size and np.any(self.buyer_power <= 0):
            raise ValueError("buyer powers must be strictly positive")

    @cached_property
    def serving(self) -> np.ndarray:
        """Index of the nearest (serving) BS per MNO."""
        idx = np.empty(self.config.num_mnos, dtype=int)
        for k, pts in enumerate(self.bs_points):
            if len(pts) == 0:
                raise NoCoverageError(f"MNO {k} has no base station in this realization")
            idx[k] = int(np.argmin(pts.distances_m))
        return idx

    @cached_property
    def _gain_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """(total_gain, serve_gain), each (num_mnos, L), in km-pathloss units."""
        cfg = self.config
        total = np.zeros((cfg.num_mnos, cfg.num_subbands))
        serve = np.zeros_like(total)
        for k, pts in enumerate(self.bs_points):
            d_km = pts.distances_m / M_PER_KM
            gains = self.fading[k] * (d_km ** (-cfg.pathloss_alpha))[:, None]
            total[k] = gains.sum(axis=0)
            serve[k] = gains[self.serving[k]]
        return total, serve


def sample_network(config: NetworkConfig, seed) -> NetworkSample:
    """Draw one full realization: BS point sets, fadings, buyer powers.

    Realizations where some MNO has no BS are resampled with an incremented
    sub-seed (the typical-user analysis presumes a serving BS); gives up
    after MAX_RESAMPLE_ATTEMPTS.
    """
    entropy = seed_entropy(seed)
    L = config.num_subbands
    owners = config.band_owner
    for attempt in range(MAX_RESAMPLE_ATTEMPTS):
        rng = np.random.default_rng(entropy + (attempt,))
        points = [sample_ppp(config.bs_intensity[k], config.radius_m, rng)
                  for k in range(config.num_mnos)]
        if all(len(p) for p in points):
            break
    else:
        raise NoCoverageError(
            f"an MNO base-station set stayed empty after {MAX_RESAMPLE_ATTEMPTS} resamples")

    fading = [rng.standard_exponential((len(p), L)) for p in points]

    power = np.empty((config.num_buyers, L))
    if config.num_buyers:
        if config.buyer_power_scheme == "controlled":
            for l in range(L):
                s = owners[l]
                power[:, l] = sample_buyer_power(
                    config.interference_threshold[s], config.user_intensity[s],
                    config.pathloss_alpha, rng, size=config.num_buyers)
        elif config.buyer_power_scheme == "uniform":
            power = rng.uniform(0.0, config.max_seller_power, size=(config.num_buyers, L))
            power = np.maximum(power, 1e-300)
        else:  # maxpower
            power = np.full((config.num_buyers, L), config.max_seller_power)

    return NetworkSample(config, points, fading, power, seed=entropy, resamples=attempt)


# ---------------------------------------------------------------------------
# SINR, instantaneous rates, analytic gradients
# ---------------------------------------------------------------------------

def _band_interference(sample: NetworkSample, a: np.ndarray, p: np.ndarray):
    """Per-band building blocks shared by SINR/rate/gradient evaluation.

    Returns (total, serve, own, buyer_terms) where buyer_terms[b, l] =
    a[l, b] * buyer_power[b, l] * total[S+b, l] and own[k, l] is the
    non-serving same-MNO gain sum.
    """
    cfg = sample.config
    total, serve = sample._gain_tables
    own = total - serve
    if cfg.num_buyers:
        buyer_total = total[cfg.num_sellers:, :]                  # (B, L)
        buyer_terms = a.T * sample.buyer_power * buyer_total      # (B, L)
    else:
        buyer_terms = np.zeros((0, cfg.num_subbands))
    return total, serve, own, buyer_terms


def _safe_ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    return np.where(num == 0.0, 0.0, out)


def sinr_seller(sample: NetworkSample, a: np.ndarray, p: np.ndarray, seller: int, band: int) -> float:
    """SINR of seller `seller`'s typical user on one of its own sub-bands."""
    cfg = sample.config
    if cfg.band_owner[band] != seller:
        raise ValueError(f"sub-band {band} is not owned by seller {seller}")
    a = np.asarray(a, dtype=float)
    p = np.asarray(p, dtype=float)
    total, serve, own, buyer_terms = _band_interference(sample, a, p)
    interference = p[band] * own[seller, band] + buyer_terms[:, band].sum()
    signal = p[band] * serve[seller, band]
    return float(_safe_ratio(signal, interference + cfg.noise_power))


def sinr_buyer(sample: NetworkSample, a: np.ndarray, p: np.ndarray, buyer: int, band: int) -> float:
    """SINR of buyer `buyer`'s typical user on sub-band `band`.

    Relaxed sharing values scale interference powers linearly; the buyer's
    own-network interference carries its own a[l, b] factor.
    """
    cfg = sample.config
    a = np.asarray(a, dtype=float)
    p = np.asarray(p, dtype=float)
    k = cfg.num_sellers + buyer
    owner = cfg.band_owner[band]
    total, serve, own, buyer_terms = _band_interference(sample, a, p)
    q = sample.buyer_power[buyer, band]
    cross = buyer_terms[:, band].sum() - buyer_terms[buyer, band]
    intra = a[band, buyer] * q * own[k, band]
    interference = intra + p[band] * total[owner, band] + cross
    signal = q * serve[k, band]
    return float(_safe_ratio(signal, interference + cfg.noise_power))


def _seller_band_arrays(sample, a, p, seller, total, serve, own, buyer_terms):
    """(gamma, denom, signal) over the seller's own bands."""
    cfg = sample.config
    bands = np.asarray(list(cfg.bands_of(seller)))
    denom = p[bands] * own[seller, bands] + buyer_terms[:, bands].sum(axis=0) + cfg.noise_power
    signal = p[bands] * serve[seller, bands]
    return bands, _safe_ratio(signal, denom), denom


def _buyer_band_arrays(sample, a, p, buyer, total, serve, own, buyer_terms):
    """(gamma, denom) over all bands for one buyer."""
    cfg = sample.config
    k = cfg.num_sellers + buyer
    q = sample.buyer_power[buyer]                         # (L,)
    owners = cfg.band_owner
    cross = buyer_terms.sum(axis=0) - buyer_terms[buyer]  # (L,)
    denom = a[:, buyer] * q * own[k] + p * total[owners, np.arange(cfg.num_subbands)] \
        + cross + cfg.noise_power
    signal = q * serve[k]
    return _safe_ratio(signal, denom), denom


def instantaneous_rate(sample: NetworkSample, a: np.ndarray, p: np.ndarray, mno: int) -> float:
    """Per-sample spectral rate (bps/Hz) of one MNO's typical user."""
    cfg = sample.config
    a = np.asarray(a, dtype=float)
    p = np.asarray(p, dtype=float)
    parts = _band_interference(sample, a, p)
    if mno < cfg.num_sellers:
        _, gamma, _ = _seller_band_arrays(sample, a, p, mno, *parts)
        return float(np.log2(1.0 + gamma).sum())
    buyer = mno - cfg.num_sellers
    gamma, _ = _buyer_band_arrays(sample, a, p, buyer, *parts)
    return float((a[:, buyer] * np.log2(1.0 + gamma)).sum())


def rate_gradients(sample: NetworkSample, a: np.ndarray, p: np.ndarray, mno: int):
    """Closed-form gradients of the per-sample rate w.r.t. the sharing matrix and powers.

    Accounts for the sharing prefactor on buyer terms, sharing values inside
    every interference sum, and seller power in both signal and interference
    roles.  Returns (d_rate/dA with shape (L, B), d_rate/dP with shape (L,)).
    """
    cfg = sample.config
    a = np.asarray(a, dtype=float)
    p = np.asarray(p, dtype=float)
    L, B, S = cfg.num_subbands, cfg.num_buyers, cfg.num_sellers
    total, serve, own, buyer_terms = _band_interference(sample, a, p)
    grad_a = np.zeros((L, B))
    grad_p = np.zeros(L)

    if mno < S:
        s = mno
        bands, gamma, denom = _seller_band_arrays(sample, a, p, s, total, serve, own, buyer_terms)
        slope = gamma / ((1.0 + gamma) * denom * LN2)          # (n_bands,)
        for j, l in enumerate(bands):
            grad_a[l, :] = -slope[j] * sample.buyer_power[:, l] * total[S:, l]
        other = buyer_terms[:, bands].sum(axis=0) + cfg.noise_power
        grad_p[bands] = serve[s, bands] * other / (denom ** 2) / ((1.0 + gamma) * LN2)
        return grad_a, grad_p

    buyer = mno - S
    k = S + buyer
    gamma, denom = _buyer_band_arrays(sample, a, p, buyer, total, serve, own, buyer_terms)
    owners = cfg.band_owner
    slope = gamma / ((1.0 + gamma) * denom * LN2)              # (L,)
    prefac = a[:, buyer]
    for bp in range(B):
        if bp == buyer:
            grad_a[:, bp] = np.log2(1.0 + gamma) \
                - prefac * slope * sample.buyer_power[buyer] * own[k]
        else:
            grad_a[:, bp] = -prefac * slope * sample.buyer_power[bp] * total[S + bp]
    grad_p = -prefac * slope * total[owners, np.arange(L)]
    return grad_a, grad_p


def all_rates_and_gradients(sample: NetworkSample, a: np.ndarray, p: np.ndarray):
    """Rates plus gradients for every MNO in one pass.

    Returns (rates (n_mnos,), grad_a (n_mnos, L, B), grad_p (n_mnos, L)).
    """
    cfg = sample.config
    n = cfg.num_mnos
    rates = np.empty(n)
    grads_a = np.empty((n, cfg.num_subbands, cfg.num_buyers))
    grads_p = np.empty((n, cfg.num_subbands))
    for k in range(n):
        rates[k] = instantaneous_rate(sample, a, p, k)
        grads_a[k], grads_p[k] = rate_gradients(sample, a, p, k)
    return rates, grads_a, grads_p
