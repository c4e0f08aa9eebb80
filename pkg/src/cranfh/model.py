"""Rates, capacities, association and constraint arithmetic for a precoding state.

Everything here is a pure read-only evaluation; all indices are 0-based.
"""

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .scenario import ChannelSet

FEASIBILITY_RTOL = 1e-6


@dataclass
class PrecodingState:
    """Current precoders, combiners, resource shares and reweighting weights.

    fronthaul_precoder: (N_B, N_R) complex, column i transmits stream i.
    receive_combiners:  list of N_R row vectors of length N_r; combiner i
                        belongs to the RAU that owns stream i.
    access_precoder:    (N_R, K) complex, column k serves user k; rows
                        n*N_r..(n+1)*N_r are RAU n's antennas.
    reweight_weights:   (N, K) nonnegative sparsity weights.
    """

    fronthaul_precoder: np.ndarray
    receive_combiners: list
    access_precoder: np.ndarray
    tau_u: float
    tau_r: float
    power_u: float
    power_r: float
    reweight_weights: np.ndarray

    def copy(self) -> "PrecodingState":
        return PrecodingState(
            fronthaul_precoder=self.fronthaul_precoder.copy(),
            receive_combiners=[q.copy() for q in self.receive_combiners],
            access_precoder=self.access_precoder.copy(),
            tau_u=self.tau_u,
            tau_r=self.tau_r,
            power_u=self.power_u,
            power_r=self.power_r,
            reweight_weights=self.reweight_weights.copy(),
        )


@dataclass
class RateReport:
    """Per-stream/user rates plus the derived bookkeeping for one state."""

    stream_rates: np.ndarray     # (N_R,) bps/Hz
    rau_capacities: np.ndarray   # (N,) bps/Hz
    user_rates: np.ndarray       # (K,) bps/Hz
    association: np.ndarray      # (N, K) bool
    served_traffic: np.ndarray   # (N,) bps/Hz, resource-scaled
    mismatch: float              # (bps/Hz)^2
    sum_rate: float              # tau_u * sum of user rates, bps/Hz


def rau_of_stream(i: int, n_rau_antennas: int) -> int:
    return i // n_rau_antennas


def rau_block(vec: np.ndarray, n: int, n_rau_antennas: int) -> np.ndarray:
    """Sub-vector of an access column belonging to RAU n."""
    return vec[n * n_rau_antennas:(n + 1) * n_rau_antennas]


def fronthaul_stream_rate(state: PrecodingState, channels: ChannelSet,
                          cfg: SystemConfig, i: int) -> float:
    """Rate of fronthaul stream i under its own combiner, bps/Hz."""
    n_streams = cfg.n_streams
    if not 0 <= i < n_streams:
        raise IndexError(f"stream index {i} out of range [0, {n_streams})")
    p_i = state.fronthaul_precoder[:, i]
    if not np.any(p_i):
        return 0.0
    q = state.receive_combiners[i]
    if not np.any(q):
        return 0.0
    g = channels.fronthaul_blocks[rau_of_stream(i, cfg.n_rau_antennas)]
    # effective row q G maps every transmitted column into this receive stream
    eff = q @ g
    gains = np.abs(eff @ state.fronthaul_precoder) ** 2
    signal = gains[i]
    interference = gains.sum() - signal
    noise = np.vdot(q, q).real * cfg.noise_power
    return float(np.log2(1.0 + signal / (interference + noise)))


def fronthaul_capacity(state: PrecodingState, channels: ChannelSet,
                       cfg: SystemConfig, n: int) -> float:
    """Capacity of RAU n: sum of its stream rates (unscaled by tau_r)."""
    if not 0 <= n < cfg.n_raus:
        raise IndexError(f"RAU index {n} out of range [0, {cfg.n_raus})")
    lo = n * cfg.n_rau_antennas
    return sum(fronthaul_stream_rate(state, channels, cfg, i)
               for i in range(lo, lo + cfg.n_rau_antennas))


def access_rate(state: PrecodingState, channels: ChannelSet,
                cfg: SystemConfig, k: int) -> float:
    """Downlink rate of user k, bps/Hz."""
    if not 0 <= k < cfg.n_users:
        raise IndexError(f"user index {k} out of range [0, {cfg.n_users})")
    h = channels.access_rows[k]
    gains = np.abs(h @ state.access_precoder) ** 2
    signal = gains[k]
    if signal == 0.0:
        return 0.0
    interference = gains.sum() - signal
    return float(np.log2(1.0 + signal / (interference + cfg.noise_power)))


def association_indicator(state: PrecodingState, cfg: SystemConfig,
                          n: int, k: int) -> bool:
    """True iff RAU n puts more than epsilon_assoc power on user k (strict)."""
    w_nk = rau_block(state.access_precoder[:, k], n, cfg.n_rau_antennas)
    return bool(np.vdot(w_nk, w_nk).real > cfg.epsilon_assoc)


def association_matrix(state: PrecodingState, cfg: SystemConfig) -> np.ndarray:
    """(N, K) boolean serving map under the power threshold."""
    out = np.zeros((cfg.n_raus, cfg.n_users), dtype=bool)
    for n in range(cfg.n_raus):
        for k in range(cfg.n_users):
            out[n, k] = association_indicator(state, cfg, n, k)
    return out


def served_traffic(state: PrecodingState, channels: ChannelSet,
                   cfg: SystemConfig, n: int,
                   user_rates=None) -> float:
    """Resource-scaled traffic RAU n carries: tau_u * sum of served user rates."""
    if user_rates is None:
        user_rates = np.array([access_rate(state, channels, cfg, k)
                               for k in range(cfg.n_users)])
    total = 0.0
    for k in range(cfg.n_users):
        if association_indicator(state, cfg, n, k):
            total += user_rates[k]
    return state.tau_u * total


def mismatch_D(state: PrecodingState, channels: ChannelSet,
               cfg: SystemConfig, report: RateReport = None) -> float:
    """Mean squared gap between scaled fronthaul capacity and served traffic."""
    if report is not None:
        caps = report.rau_capacities
        served = report.served_traffic
    else:
        caps = np.array([fronthaul_capacity(state, channels, cfg, n)
                         for n in range(cfg.n_raus)])
        served = np.array([served_traffic(state, channels, cfg, n)
                           for n in range(cfg.n_raus)])
    gaps = state.tau_r * caps - served
    return float(np.mean(gaps ** 2))


def compute_report(state: PrecodingState, channels: ChannelSet,
                   cfg: SystemConfig) -> RateReport:
    """Evaluate every rate quantity once and bundle them."""
    stream_rates = np.array([fronthaul_stream_rate(state, channels, cfg, i)
                             for i in range(cfg.n_streams)])
    caps = stream_rates.reshape(cfg.n_raus, cfg.n_rau_antennas).sum(axis=1)
    user_rates = np.array([access_rate(state, channels, cfg, k)
                           for k in range(cfg.n_users)])
    assoc = association_matrix(state, cfg)
    served = state.tau_u * (assoc @ user_rates if cfg.n_users else np.zeros(cfg.n_raus))
    gaps = state.tau_r * caps - served
    return RateReport(
        stream_rates=stream_rates,
        rau_capacities=caps,
        user_rates=user_rates,
        association=assoc,
        served_traffic=served,
        mismatch=float(np.mean(gaps ** 2)),
        sum_rate=float(state.tau_u * user_rates.sum()),
    )


@dataclass
class ConstraintReport:
    """Slack audit of the power budget and the per-RAU fronthaul constraints."""

    power_used: float
    power_limit: float
    power_slack: float
    power_ok: bool
    fronthaul_traffic: np.ndarray     # (N,) served traffic, scaled
    fronthaul_capacity: np.ndarray    # (N,) tau_r * capacity
    fronthaul_slack: np.ndarray       # (N,)
    fronthaul_ok: np.ndarray          # (N,) bool

    @property
    def all_ok(self) -> bool:
        return bool(self.power_ok and self.fronthaul_ok.all())


def constraint_report(state: PrecodingState, channels: ChannelSet,
                      cfg: SystemConfig) -> ConstraintReport:
    """Evaluate the shared power budget and each RAU's traffic constraint."""
    used = (state.tau_r * np.linalg.norm(state.fronthaul_precoder) ** 2
            + state.tau_u * np.linalg.norm(state.access_precoder) ** 2)
    limit = cfg.total_power
    power_slack = limit - used
    power_ok = used <= limit + FEASIBILITY_RTOL * max(1.0, abs(limit))

    report = compute_report(state, channels, cfg)
    cap_scaled = state.tau_r * report.rau_capacities
    slack = cap_scaled - report.served_traffic
    tol = FEASIBILITY_RTOL * np.maximum(1.0, np.abs(cap_scaled))
    ok = report.served_traffic <= cap_scaled + tol
    return ConstraintReport(
        power_used=float(used),
        power_limit=float(limit),
        power_slack=float(power_slack),
        power_ok=bool(power_ok),
        fronthaul_traffic=report.served_traffic,
        fronthaul_capacity=cap_scaled,
        fronthaul_slack=slack,
        fronthaul_ok=ok,
    )
