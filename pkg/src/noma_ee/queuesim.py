"""Slot-level simulator of K buffered two-mode uplink NOMA users.

Per slot: Bernoulli/exponential arrivals join each user's FIFO; a user
transmits iff its buffer is non-empty after arrivals; the base station
decodes in index order so user k is interfered by active users i > k; each
active user drains S_k = T_s B log2(1 + gamma_k) bits from the head of its
FIFO (partial bursts stay queued). A burst's delay is
``departure_slot - arrival_slot + 1`` slots.

Bits are tracked in integer quanta of 1/1024 bit so that bit conservation
holds exactly. Randomness comes from one Philox stream per user and purpose
(gains, arrivals), generated in fixed-size chunks, so results depend only on
the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy import stats as sps

from .core import STREAM_ARRIVALS, STREAM_GAINS, PowerAllocation, Scenario, user_streams
from .errors import InvalidParameterError, UndefinedStatisticError

QUANTA_PER_BIT = 1024
CHUNK_SLOTS = 1 << 18
HIST_BINS = 4096


@dataclass(frozen=True)
class SimConfig:
    n_slots: int
    seed: int = 0
    warmup_slots: int = 10_000
    record_delay_quantiles: bool = False
    record_service: bool = False
    fading: bool = True  # False: every gain equals its mean (test hook)

    def __post_init__(self):
        if not self.n_slots > self.warmup_slots >= 0:
            raise InvalidParameterError(
                f"need n_slots > warmup_slots >= 0, got {self.n_slots} and {self.warmup_slots}")


@dataclass
class SimStats:
    """Per-user counters over the counted window (slots >= warmup).

    ``delay_hist[k, d]`` counts departed bursts (arrived in the window) whose
    delay was exactly ``d`` slots; the last bin collects everything longer.
    """

    slot_duration_s: float
    counted_slots: int
    tx_power_w: np.ndarray
    circuit_power_w: np.ndarray
    arrived_bits: np.ndarray
    delivered_bits: np.ndarray
    burst_count: np.ndarray
    delay_hist: np.ndarray
    delay_sum_slots: np.ndarray
    tx_slots: np.ndarray
    # whole-run quanta, for the conservation check
    total_arrived_quanta: np.ndarray
    total_delivered_quanta: np.ndarray
    backlog_quanta: np.ndarray
    n_replications: int = 1
    per_replication: list = field(default_factory=list)
    service_bits: np.ndarray | None = None
    delay_quantiles: dict | None = None

    @property
    def n_users(self):
        return len(self.arrived_bits)

    @property
    def mean_delay_s(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.delay_sum_slots / self.burst_count * self.slot_duration_s

    @property
    def consumed_energy_two_mode_j(self) -> np.ndarray:
        return self.slot_duration_s * (self.circuit_power_w * self.counted_slots + self.tx_power_w * self.tx_slots)

    @property
    def consumed_energy_single_mode_j(self) -> np.ndarray:
        return self.slot_duration_s * self.counted_slots * (self.circuit_power_w + self.tx_power_w)

    @property
    def throughput_bps(self) -> np.ndarray:
        return self.delivered_bits / (self.counted_slots * self.slot_duration_s)

    def conserved(self) -> bool:
        return bool(np.all(self.total_arrived_quanta == self.total_delivered_quanta + self.backlog_quanta))


def _empty_stats(scenario, alloc, cfg):
    k = scenario.n_users
    return SimStats(
        slot_duration_s=scenario.params.slot_duration_s,
        counted_slots=cfg.n_slots - cfg.warmup_slots,
        tx_power_w=np.array(alloc.tx_power_w, dtype=float),
        circuit_power_w=np.array([p.circuit_power_w for p in scenario.profiles]),
        arrived_bits=np.zeros(k),
        delivered_bits=np.zeros(k),
        burst_count=np.zeros(k, dtype=np.int64),
        delay_hist=np.zeros((k, HIST_BINS), dtype=np.int64),
        delay_sum_slots=np.zeros(k, dtype=np.int64),
        tx_slots=np.zeros(k, dtype=np.int64),
        total_arrived_quanta=np.zeros(k, dtype=np.int64),
        total_delivered_quanta=np.zeros(k, dtype=np.int64),
        backlog_quanta=np.zeros(k, dtype=np.int64),
    )


@numba.njit(cache=True)
def _run_slots(start, n, slot0, warmup, arrivals, gains, power, noise, quanta_per_log2,
               q_arr, q_rem, head, count, counters, hist, service_out):
    """Advance the queues over slots [start, n) of the current chunk.

    Returns the index of the first unprocessed slot; it stops early when a
    FIFO is full so the caller can grow the ring buffers.
    counters columns: 0 arrived_q(all) 1 delivered_q(all) 2 arrived_q(win)
    3 delivered_q(win) 4 bursts(win) 5 delay_sum(win) 6 tx_slots(win)
    """
    K = power.shape[0]
    cap = q_arr.shape[1]
    n_bins = hist.shape[1]
    rx = np.empty(K)
    active = np.zeros(K, dtype=np.bool_)
    for j in range(start, n):
        s = slot0 + j
        for k in range(K):
            if arrivals[k, j] > 0 and count[k] == cap:
                return j
        counted = s >= warmup
        for k in range(K):
            a = arrivals[k, j]
            if a > 0:
                pos = (head[k] + count[k]) % cap
                q_arr[k, pos] = s
                q_rem[k, pos] = a
                count[k] += 1
                counters[k, 0] += a
                if counted:
                    counters[k, 2] += a
            active[k] = count[k] > 0
            rx[k] = power[k] * gains[k, j] if active[k] else 0.0
        interference = 0.0
        for k in range(K - 1, -1, -1):
            if not active[k]:
                continue
            gamma = rx[k] / (interference + noise)
            interference += rx[k]
            service = np.int64(math.floor(quanta_per_log2 * math.log2(1.0 + gamma)))
            if service_out.shape[1] > 0:
                service_out[k, s] = service / 1024.0
            if counted:
                counters[k, 6] += 1
            while service > 0 and count[k] > 0:
                h = head[k]
                rem = q_rem[k, h]
                if rem <= service:
                    service -= rem
                    counters[k, 1] += rem
                    if counted:
                        counters[k, 3] += rem
                    arr = q_arr[k, h]
                    if arr >= warmup:
                        d = s - arr + 1
                        counters[k, 4] += 1
                        counters[k, 5] += d
                        hist[k, min(d, n_bins - 1)] += 1
                    head[k] = (h + 1) % cap
                    count[k] -= 1
                else:
                    q_rem[k, h] = rem - service
                    counters[k, 1] += service
                    if counted:
                        counters[k, 3] += service
                    service = 0
    return n


def _grow(q_arr, q_rem, head, count):
    k, cap = q_arr.shape
    new_arr = np.zeros((k, 2 * cap), dtype=np.int64)
    new_rem = np.zeros((k, 2 * cap), dtype=np.int64)
    for i in range(k):
        idx = (head[i] + np.arange(count[i])) % cap
        new_arr[i, :count[i]] = q_arr[i, idx]
        new_rem[i, :count[i]] = q_rem[i, idx]
    head[:] = 0
    return new_arr, new_rem


def _draw_chunk(scenario, gain_rngs, arrival_rngs, n, fading=True):
    k = scenario.n_users
    gains = np.empty((k, n))
    arrivals = np.zeros((k, n), dtype=np.int64)
    mg = scenario.mean_gains
    for i, prof in enumerate(scenario.profiles):
        gains[i] = gain_rngs[i].exponential(mg[i], n) if fading else mg[i]
        occurs = arrival_rngs[i].random(n) < prof.arrival_prob
        bits = arrival_rngs[i].exponential(prof.mean_burst_bits, n)
        q = np.maximum(np.ceil(bits * QUANTA_PER_BIT), 1).astype(np.int64)
        arrivals[i] = np.where(occurs, q, 0)
    return gains, arrivals


def simulate(scenario: Scenario, alloc: PowerAllocation, cfg: SimConfig) -> SimStats:
    """Run one replication and return its statistics."""
    k = scenario.n_users
    if len(alloc) != k:
        raise InvalidParameterError("allocation length does not match the number of users")
    if np.any(alloc.tx_power_w > scenario.params.peak_power_w * (1 + 1e-12)):
        raise InvalidParameterError("allocation exceeds the peak power")
    params = scenario.params
    gain_rngs = user_streams(cfg.seed, k, STREAM_GAINS)
    arrival_rngs = user_streams(cfg.seed, k, STREAM_ARRIVALS)
    stats = _empty_stats(scenario, alloc, cfg)
    counters = np.zeros((k, 7), dtype=np.int64)
    q_arr = np.zeros((k, 1024), dtype=np.int64)
    q_rem = np.zeros((k, 1024), dtype=np.int64)
    head = np.zeros(k, dtype=np.int64)
    count = np.zeros(k, dtype=np.int64)
    service_out = np.zeros((k, cfg.n_slots) if cfg.record_service else (k, 0))
    power = np.array(alloc.tx_power_w, dtype=float)
    quanta_per_log2 = params.slot_duration_s * params.bandwidth_hz * QUANTA_PER_BIT
    slot0 = 0
    while slot0 < cfg.n_slots:
        n = min(CHUNK_SLOTS, cfg.n_slots - slot0)
        gains, arrivals = _draw_chunk(scenario, gain_rngs, arrival_rngs, n, cfg.fading)
        j = 0
        while j < n:
            j = _run_slots(j, n, slot0, cfg.warmup_slots, arrivals, gains, power, params.noise_power_w,
                           quanta_per_log2, q_arr, q_rem, head, count, counters, stats.delay_hist, service_out)
            if j < n:
                q_arr, q_rem = _grow(q_arr, q_rem, head, count)
        slot0 += n
    stats.total_arrived_quanta = counters[:, 0].copy()
    stats.total_delivered_quanta = counters[:, 1].copy()
    stats.arrived_bits = counters[:, 2] / QUANTA_PER_BIT
    stats.delivered_bits = counters[:, 3] / QUANTA_PER_BIT
    stats.burst_count = counters[:, 4].copy()
    stats.delay_sum_slots = counters[:, 5].copy()
    stats.tx_slots = counters[:, 6].copy()
    backlog = np.zeros(k, dtype=np.int64)
    for i in range(k):
        idx = (head[i] + np.arange(count[i])) % q_arr.shape[1]
        backlog[i] = q_rem[i, idx].sum()
    stats.backlog_quanta = backlog
    if cfg.record_service:
        stats.service_bits = service_out
    if cfg.record_delay_quantiles:
        stats.delay_quantiles = delay_quantiles(stats)
    return stats


def merge_stats(runs: list) -> SimStats:
    """Pool replications by summing their counters."""
    if not runs:
        raise InvalidParameterError("nothing to merge")
    first = runs[0]
    merged = SimStats(
        slot_duration_s=first.slot_duration_s,
        counted_slots=sum(r.counted_slots for r in runs),
        tx_power_w=first.tx_power_w,
        circuit_power_w=first.circuit_power_w,
        arrived_bits=sum(r.arrived_bits for r in runs),
        delivered_bits=sum(r.delivered_bits for r in runs),
        burst_count=sum(r.burst_count for r in runs),
        delay_hist=sum(r.delay_hist for r in runs),
        delay_sum_slots=sum(r.delay_sum_slots for r in runs),
        tx_slots=sum(r.tx_slots for r in runs),
        total_arrived_quanta=sum(r.total_arrived_quanta for r in runs),
        total_delivered_quanta=sum(r.total_delivered_quanta for r in runs),
        backlog_quanta=sum(r.backlog_quanta for r in runs),
        n_replications=sum(r.n_replications for r in runs),
        per_replication=[r for run in runs for r in (run.per_replication or [run])],
    )
    return merged


def simulate_replications(scenario: Scenario, alloc: PowerAllocation, cfg: SimConfig, seeds) -> SimStats:
    runs = [simulate(scenario, alloc, replace(cfg, seed=int(s), record_delay_quantiles=False)) for s in seeds]
    merged = merge_stats(runs)
    if cfg.record_delay_quantiles:
        merged.delay_quantiles = delay_quantiles(merged)
    return merged


def _wilson(successes, n, z=1.959963984540054):
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return centre, half


def _violations(stats: SimStats, d_max: float) -> np.ndarray:
    # delay D > d_max  <=>  delay_slots > d_max / T_s
    limit = d_max / stats.slot_duration_s
    first = int(math.floor(limit + 1e-9)) + 1
    first = max(first, 0)
    if first >= stats.delay_hist.shape[1]:
        return np.zeros(stats.n_users, dtype=np.int64)
    return stats.delay_hist[:, first:].sum(axis=1)


def empirical_delay_violation(stats: SimStats, d_max: float):
    """Fraction of bursts with delay > d_max and the Wilson 95% half-width, per user."""
    if np.any(stats.burst_count == 0):
        raise UndefinedStatisticError("a user has no completed bursts")
    viol = _violations(stats, d_max)
    prob = viol / stats.burst_count
    half = np.array([_wilson(v, n)[1] for v, n in zip(viol, stats.burst_count)])
    return prob, half


def replication_half_width(stats: SimStats, d_max: float, z_or_t: float | None = None):
    """Half-width of a t-interval over per-replication violation fractions."""
    reps = stats.per_replication
    if len(reps) < 2:
        return np.full(stats.n_users, np.nan)
    vals = np.array([_violations(r, d_max) / r.burst_count for r in reps])
    t = z_or_t if z_or_t is not None else sps.t.ppf(0.975, len(reps) - 1)
    return t * vals.std(axis=0, ddof=1) / math.sqrt(len(reps))


def empirical_tx_prob(stats: SimStats) -> np.ndarray:
    if stats.counted_slots <= 0:
        raise UndefinedStatisticError("no counted slots")
    return stats.tx_slots / stats.counted_slots


def empirical_energy_efficiency(stats: SimStats, mode: str = "two-mode") -> float:
    """Delivered bits per joule under the chosen energy accounting."""
    if mode == "two-mode":
        energy = stats.consumed_energy_two_mode_j.sum()
    elif mode == "single-mode":
        energy = stats.consumed_energy_single_mode_j.sum()
    else:
        raise InvalidParameterError(f"unknown energy mode {mode!r}")
    if not energy > 0:
        raise UndefinedStatisticError("consumed energy is zero")
    return float(stats.delivered_bits.sum() / energy)


def delay_quantiles(stats: SimStats, qs=(0.5, 0.9, 0.99)) -> dict:
    """Per-user delay quantiles in seconds from the histogram."""
    out = {}
    for q in qs:
        vals = []
        for k in range(stats.n_users):
            cdf = np.cumsum(stats.delay_hist[k])
            if cdf[-1] == 0:
                vals.append(math.nan)
                continue
            vals.append(int(np.searchsorted(cdf, q * cdf[-1])) * stats.slot_duration_s)
        out[q] = np.array(vals)
    return out
