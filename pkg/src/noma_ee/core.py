"""Physical-layer and traffic primitives for the uplink NOMA model.

Users are indexed from 0 in increasing distance order. The successive
interference cancellation (SIC) order is that fixed index order: user 0 is
decoded first and sees every active user with a larger index as
interference; the last user sees only noise.

All quantities are linear (watts, Hz, seconds, bits); dB conversions happen
only at the edges (``dbm_to_watts`` and friends).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidCallError, InvalidParameterError

# Purpose codes for independent random streams.
STREAM_GAINS = 0
STREAM_ARRIVALS = 1
STREAM_MODES = 2


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts <= 0:
        return -math.inf
    return 10.0 * math.log10(watts) + 30.0


def noise_power_from_density(n0_dbm_per_hz: float, bandwidth_hz: float) -> float:
    """Noise power in watts for a spectral density in dBm/Hz over ``bandwidth_hz``."""
    if not bandwidth_hz > 0:
        raise InvalidParameterError(f"bandwidth must be positive, got {bandwidth_hz}")
    return dbm_to_watts(n0_dbm_per_hz) * bandwidth_hz


@dataclass(frozen=True)
class SystemParams:
    slot_duration_s: float
    bandwidth_hz: float
    noise_power_w: float
    peak_power_w: float

    def __post_init__(self):
        for name in ("slot_duration_s", "bandwidth_hz", "noise_power_w", "peak_power_w"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InvalidParameterError(f"{name} must be positive and finite, got {value}")

    @classmethod
    def from_table(cls, slot_ms=1.0, bandwidth_hz=18e3, n0_dbm_per_hz=-174.0, peak_power_dbm=46.0):
        """Build from the units a parameter table is usually written in."""
        return cls(
            slot_duration_s=slot_ms * 1e-3,
            bandwidth_hz=bandwidth_hz,
            noise_power_w=noise_power_from_density(n0_dbm_per_hz, bandwidth_hz),
            peak_power_w=dbm_to_watts(peak_power_dbm),
        )


@dataclass(frozen=True)
class UserProfile:
    distance_m: float
    path_loss_exp: float
    arrival_prob: float
    mean_burst_bits: float
    circuit_power_w: float
    delay_bound_s: float
    delay_tolerance: float

    def __post_init__(self):
        if not self.distance_m > 0:
            raise InvalidParameterError(f"distance_m must be positive, got {self.distance_m}")
        if not self.path_loss_exp > 0:
            raise InvalidParameterError(f"path_loss_exp must be positive, got {self.path_loss_exp}")
        if not 0.0 < self.arrival_prob <= 1.0:
            raise InvalidParameterError(f"arrival_prob must lie in (0, 1], got {self.arrival_prob}")
        if not self.mean_burst_bits > 0:
            raise InvalidParameterError(f"mean_burst_bits must be positive, got {self.mean_burst_bits}")
        if not self.circuit_power_w >= 0:
            raise InvalidParameterError(f"circuit_power_w must be >= 0, got {self.circuit_power_w}")
        if not 0.0 < self.delay_tolerance < 1.0:
            raise InvalidParameterError(f"delay_tolerance must lie in (0, 1), got {self.delay_tolerance}")
        if not self.delay_bound_s > 0:
            raise InvalidParameterError(f"delay_bound_s must be positive, got {self.delay_bound_s}")

    def replace(self, **changes) -> "UserProfile":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ChannelRealization:
    gains: np.ndarray

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float)
        if gains.ndim != 1 or np.any(gains < 0):
            raise InvalidParameterError("gains must be a 1-D array of non-negative values")
        object.__setattr__(self, "gains", gains)


@dataclass(frozen=True)
class PowerAllocation:
    tx_power_w: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        p = np.array(self.tx_power_w, dtype=float).reshape(-1)
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InvalidParameterError(f"transmit powers must be finite and >= 0, got {p}")
        p.setflags(write=False)
        object.__setattr__(self, "tx_power_w", p)

    def __len__(self):
        return len(self.tx_power_w)

    def feasible(self, params: SystemParams) -> np.ndarray:
        """Per-user flag: power within [0, P_max]."""
        return self.tx_power_w <= params.peak_power_w

    def at_peak(self, params: SystemParams, rtol=1e-12) -> np.ndarray:
        return self.tx_power_w >= params.peak_power_w * (1.0 - rtol)


@dataclass(frozen=True)
class Scenario:
    """System parameters plus the user population, ordered by SIC decoding index."""

    params: SystemParams
    profiles: tuple

    def __post_init__(self):
        profiles = tuple(self.profiles)
        if not profiles:
            raise InvalidParameterError("a scenario needs at least one user")
        object.__setattr__(self, "profiles", profiles)

    @property
    def n_users(self) -> int:
        return len(self.profiles)

    @property
    def mean_gains(self) -> np.ndarray:
        return np.array([1.0 / channel_rate_param(p) for p in self.profiles])

    def with_profiles(self, profiles: Iterable[UserProfile]) -> "Scenario":
        return Scenario(self.params, tuple(profiles))


def channel_rate_param(profile: UserProfile) -> float:
    """Rate chi = d**beta of the exponential channel gain (mean gain is 1/chi)."""
    if not profile.distance_m > 0:
        raise InvalidParameterError(f"distance must be positive, got {profile.distance_m}")
    return float(profile.distance_m) ** profile.path_loss_exp


def sample_gains(profiles: Sequence[UserProfile], rng: np.random.Generator, size=None) -> ChannelRealization | np.ndarray:
    """Draw independent exponential gains with rate chi_k for every user.

    With ``size=None`` one realization is returned; otherwise an array of
    shape ``(K, size)``.
    """
    if len(profiles) == 0:
        raise InvalidParameterError("profiles must be non-empty")
    means = np.array([1.0 / channel_rate_param(p) for p in profiles])
    if size is None:
        return ChannelRealization(rng.exponential(means))
    return rng.exponential(means[:, None], size=(len(profiles), size))


def sinr(k: int, alloc: PowerAllocation, gains: ChannelRealization, active, params: SystemParams) -> float:
    """SINR of user ``k`` under SIC: interference from active users with index > k."""
    active = set(active)
    if k not in active:
        raise InvalidCallError(f"user {k} is not in the active set {sorted(active)}")
    p = alloc.tx_power_w
    g = gains.gains
    interference = sum(p[i] * g[i] for i in active if i > k)
    return p[k] * g[k] / (interference + params.noise_power_w)


def sinr_matrix(tx_power_w: np.ndarray, gains: np.ndarray, active: np.ndarray, noise_power_w: float) -> np.ndarray:
    """Vectorised SIC SINR for gains/active of shape (K, n). Inactive users get 0."""
    rx = tx_power_w[:, None] * gains * active
    interference = np.zeros_like(rx)
    interference[:-1] = np.cumsum(rx[::-1], axis=0)[::-1][1:]
    return rx / (interference + noise_power_w)


def achievable_rate(sinr_value, params: SystemParams):
    """Shannon rate B*log2(1+sinr) in bits/s."""
    s = np.asarray(sinr_value, dtype=float)
    if np.any(s < 0):
        raise InvalidParameterError(f"sinr must be >= 0, got {sinr_value}")
    rate = params.bandwidth_hz * np.log1p(s) / math.log(2.0)
    return float(rate) if rate.ndim == 0 else rate


def sample_arrival(profile: UserProfile, rng: np.random.Generator, size=None):
    """Bits arriving in a slot: 0 w.p. 1-p, else exponential with mean L."""
    occurs = rng.random(size) < profile.arrival_prob
    bits = rng.exponential(profile.mean_burst_bits, size)
    return np.where(occurs, bits, 0.0) if size is not None else (float(bits) if occurs else 0.0)


def mean_arrival_rate(profile: UserProfile, params: SystemParams) -> float:
    return profile.arrival_prob * profile.mean_burst_bits / params.slot_duration_s


def user_streams(seed: int, n_users: int, purpose: int) -> list:
    """One counter-based (Philox) generator per user for a given purpose."""
    return [
        np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(purpose, k))))
        for k in range(n_users)
    ]
