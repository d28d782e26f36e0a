"""Spatial layer: network configuration and Poisson point process sampling.

All point coordinates are stored in meters.  Intensities are per km^2, so
every closed-form expression downstream evaluates path loss on distances
expressed in km; helpers here expose both scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

M_PER_KM = 1000.0


class NoCoverageError(RuntimeError):
    """Raised when an MNO has no base station to serve the typical user."""


def dbm_to_watts(dbm: float) -> float:
    """Convert a dBm level to watts."""
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    """Convert watts to dBm."""
    if watts <= 0:
        raise ValueError("watts must be positive for a dBm representation")
    return 10.0 * np.log10(watts) + 30.0


def _per_mno(value, n: int, name: str) -> tuple[float, ...]:
    """Broadcast a scalar or length-n sequence to a length-n tuple."""
    if np.isscalar(value):
        return (float(value),) * n
    out = tuple(float(v) for v in value)
    if len(out) != n:
        raise ValueError(f"{name} must be a scalar or have length {n}, got {len(out)}")
    return out


@dataclass
class NetworkConfig:
    """Static description of the shared-spectrum network.

    Sellers own the licensed sub-bands; buyers may lease them.  MNOs are
    indexed globally: sellers first (0..S-1), then buyers (S..S+B-1).
    Defaults mirror the desk-scale simulation table: per-m^2 intensities in
    the source material are physically implausible at a 500 m radius, so
    intensities are interpreted per km^2 throughout.
    """

    num_sellers: int = 2
    num_buyers: int = 1
    subbands_per_seller: int | Sequence[int] = 1
    radius_m: float = 500.0
    bs_intensity: float | Sequence[float] = 8.0      # per km^2, per MNO
    user_intensity: float | Sequence[float] = 16.0   # per km^2, per MNO
    pathloss_alpha: float = 4.0
    noise_power: float = dbm_to_watts(-150.0)        # watts
    interference_threshold: float | Sequence[float] = dbm_to_watts(-110.0)  # watts, per seller
    max_seller_power: float = dbm_to_watts(10.0)     # watts
    borrow_cap: int | Sequence[int] | None = None    # N^B per seller, default L_s (non-binding)
    lease_cap: int | Sequence[int] | None = None     # N^L per seller, default B (non-binding)
    buyer_power_scheme: str = "controlled"           # controlled | uniform | maxpower

    def __post_init__(self):
        if self.num_sellers < 1:
            raise ValueError("num_sellers must be at least 1")
        if self.num_buyers < 0:
            raise ValueError("num_buyers must be nonnegative")
        s, b = self.num_sellers, self.num_buyers
        n = s + b

        if np.isscalar(self.subbands_per_seller):
            self.subbands_per_seller = (int(self.subbands_per_seller),) * s
        else:
            self.subbands_per_seller = tuple(int(v) for v in self.subbands_per_seller)
        if len(self.subbands_per_seller) != s or any(v < 1 for v in self.subbands_per_seller):
            raise ValueError("subbands_per_seller must give a positive count per seller")

        if self.radius_m <= 0:
            raise ValueError("radius_m must be positive")
        if self.pathloss_alpha <= 2:
            raise ValueError("pathloss_alpha must exceed 2")
        if self.noise_power < 0:
            raise ValueError("noise_power must be nonnegative")
        if self.max_seller_power <= 0:
            raise ValueError("max_seller_power must be positive")

        self.bs_intensity = _per_mno(self.bs_intensity, n, "bs_intensity")
        self.user_intensity = _per_mno(self.user_intensity, n, "user_intensity")
        if any(v <= 0 for v in self.bs_intensity) or any(v <= 0 for v in self.user_intensity):
            raise ValueError("intensities must be strictly positive")

        self.interference_threshold = _per_mno(self.interference_threshold, s, "interference_threshold")
        if any(v <= 0 for v in self.interference_threshold):
            raise ValueError("interference_threshold must be strictly positive")

        if self.borrow_cap is None:
            self.borrow_cap = self.subbands_per_seller
        elif np.isscalar(self.borrow_cap):
            self.borrow_cap = (int(self.borrow_cap),) * s
        else:
            self.borrow_cap = tuple(int(v) for v in self.borrow_cap)
        if self.lease_cap is None:
            self.lease_cap = (max(b, 1),) * s
        elif np.isscalar(self.lease_cap):
            self.lease_cap = (int(self.lease_cap),) * s
        else:
            self.lease_cap = tuple(int(v) for v in self.lease_cap)
        if len(self.borrow_cap) != s or any(v < 1 for v in self.borrow_cap):
            raise ValueError("borrow_cap must give a positive bound per seller")
        if len(self.lease_cap) != s or any(v < 1 for v in self.lease_cap):
            raise ValueError("lease_cap must give a positive bound per seller")

        if self.buyer_power_scheme not in ("controlled", "uniform", "maxpower"):
            raise ValueError(f"unknown buyer_power_scheme {self.buyer_power_scheme!r}")

    # ---- derived indexing helpers ----

    @property
    def num_mnos(self) -> int:
        return self.num_sellers + self.num_buyers

    @property
    def num_subbands(self) -> int:
        return sum(self.subbands_per_seller)

    @property
    def band_owner(self) -> np.ndarray:
        """Seller index owning each global sub-band, shape (L,)."""
        return np.repeat(np.arange(self.num_sellers), self.subbands_per_seller)

    def bands_of(self, seller: int) -> range:
        """Global sub-band indices owned by one seller."""
        start = sum(self.subbands_per_seller[:seller])
        return range(start, start + self.subbands_per_seller[seller])

    @property
    def area_km2(self) -> float:
        return np.pi * (self.radius_m / M_PER_KM) ** 2

    def mean_bs_count(self, mno: int) -> float:
        return self.area_km2 * self.bs_intensity[mno]


@dataclass
class PointSet:
    """Planar points (meters) inside the disc of radius `radius_m` around the origin."""

    positions: np.ndarray  # (n, 2)
    radius_m: float

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        r = np.hypot(self.positions[:, 0], self.positions[:, 1])
        if r.size and r.max() > self.radius_m * (1 + 1e-12):
            raise ValueError("point lies outside the sampling disc")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def distances_m(self) -> np.ndarray:
        """Euclidean distances from the origin, shape (n,)."""
        return np.hypot(self.positions[:, 0], self.positions[:, 1])


def as_rng(seed) -> np.random.Generator:
    """Build a Generator from an int, a tuple of ints, or pass one through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def seed_entropy(seed) -> tuple[int, ...]:
    """Normalize a seed to a tuple of ints usable as SeedSequence entropy."""
    if isinstance(seed, (tuple, list)):
        return tuple(int(v) for v in seed)
    return (int(seed),)


def sample_ppp(intensity: float, radius_m: float, seed) -> PointSet:
    """Draw one homogeneous PPP realization on a disc.

    `intensity` is in points per km^2; the count is Poisson with mean
    pi*(radius/1000)^2*intensity and points are uniform on the disc.
    Identical seeds produce identical point sets.
    """
    if intensity < 0:
        raise ValueError("intensity must be nonnegative")
    if radius_m <= 0:
        raise ValueError("radius_m must be positive")
    rng = as_rng(seed)
    mean = intensity * np.pi * (radius_m / M_PER_KM) ** 2
    n = rng.poisson(mean)
    radii = radius_m * np.sqrt(rng.random(n))
    angles = 2.0 * np.pi * rng.random(n)
    xy = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    return PointSet(xy, radius_m)


def nearest_distance(points: PointSet) -> float:
    """Distance (meters) from the origin to the nearest point; errors when empty."""
    if len(points) == 0:
        raise NoCoverageError("point set is empty; no serving base station")
    return float(points.distances_m.min())
