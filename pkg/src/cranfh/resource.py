"""Water-filling power reallocation and the orthogonal-resource equation
system solved by per-branch bisection with an outer binary search on the
mismatch budget."""

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .model import PrecodingState, rau_of_stream
from .scenario import ChannelSet

RESIDUAL_TOL = 1e-6
_BISECT_ITERS = 60


@dataclass
class NormalizedStats:
    """Per-link powers and per-unit-power SINRs of the current precoders."""

    gamma_u: np.ndarray    # (K,) access SINR per watt
    gamma_r: np.ndarray    # (N_R,) fronthaul SINR per watt
    lambda_u: np.ndarray   # (K,) current access powers
    lambda_r: np.ndarray   # (N_R,) current fronthaul powers


@dataclass
class AllocationSolution:
    tau_u: float
    tau_r: float
    power_u: float
    power_r: float
    tau: float             # mismatch budget this solution was found at
    residuals: np.ndarray  # the four equation residuals


def normalized_stats(state: PrecodingState, channels: ChannelSet,
                     cfg: SystemConfig) -> NormalizedStats:
    """Powers from the precoder columns and SINR-per-watt values computed at
    the current interference levels."""
    n_streams = cfg.n_streams
    k_users = cfg.n_users
    w = state.access_precoder
    p = state.fronthaul_precoder

    lambda_u = np.array([float(np.vdot(w[:, k], w[:, k]).real)
                         for k in range(k_users)])
    lambda_r = np.array([float(np.vdot(p[:, i], p[:, i]).real)
                         for i in range(n_streams)])

    gamma_u = np.zeros(k_users)
    for k in range(k_users):
        h = channels.access_rows[k]
        gains = np.abs(h @ w) ** 2
        interference = gains.sum() - gains[k] + cfg.noise_power
        if lambda_u[k] > 0:
            gamma_u[k] = (gains[k] / lambda_u[k]) / interference

    gamma_r = np.zeros(n_streams)
    for i in range(n_streams):
        q = np.asarray(state.receive_combiners[i])
        if not np.any(q):
            continue
        g = channels.fronthaul_blocks[rau_of_stream(i, cfg.n_rau_antennas)]
        eff = q @ g
        gains = np.abs(eff @ p) ** 2
        noise = float(np.vdot(q, q).real) * cfg.noise_power
        interference = gains.sum() - gains[i] + noise
        if lambda_r[i] > 0:
            gamma_r[i] = (gains[i] / lambda_r[i]) / interference

    return NormalizedStats(gamma_u=gamma_u, gamma_r=gamma_r,
                           lambda_u=lambda_u, lambda_r=lambda_r)


def waterfill_closed_form(gammas: np.ndarray, budget: float) -> np.ndarray:
    """The all-active closed form: (budget + sum 1/g)/n - 1/g per link.

    Valid only when every allocation comes out nonnegative."""
    gammas = np.asarray(gammas, dtype=float)
    inv = 1.0 / gammas
    return (budget + inv.sum()) / len(gammas) - inv


def waterfill(gammas, budget: float) -> np.ndarray:
    """Water-filling allocation over parallel links with SINR-per-watt
    gammas; weak links are clipped to zero and the budget redistributed."""
    gammas = np.asarray(gammas, dtype=float)
    if gammas.size == 0:
        raise ValueError("waterfill needs at least one link")
    if budget <= 0:
        raise ValueError("budget must be positive")
    active = gammas > 0
    if not active.any():
        raise ValueError("waterfill needs at least one positive gamma")
    powers = np.zeros_like(gammas)
    idx = np.nonzero(active)[0]
    # drop the weakest active link until the closed form is nonnegative
    order = idx[np.argsort(gammas[idx])]       # ascending
    while True:
        trial = waterfill_closed_form(gammas[order], budget)
        if trial.min() >= 0 or len(order) == 1:
            break
        order = order[1:]
    powers[order] = np.maximum(trial, 0.0)
    total = powers.sum()
    if total > 0:
        powers[order] += (budget - total) / len(order)
    return powers


def rates_under_allocation(stats: NormalizedStats, power_u: float,
                           power_r: float):
    """Closed-form rates under water-filled powers assuming every link
    reaches the water line. Entries can go negative when that assumption
    fails; callers relying on them must check."""
    gu = stats.gamma_u
    gr = stats.gamma_r
    r_users = np.full(len(gu), -np.inf)
    c_streams = np.full(len(gr), -np.inf)
    if len(gu) and np.all(gu > 0):
        r_users = np.log2(gu / len(gu) * (power_u + (1.0 / gu).sum()))
    if len(gr) and np.all(gr > 0):
        c_streams = np.log2(gr / len(gr) * (power_r + (1.0 / gr).sum()))
    return r_users, c_streams


def _match_residual(stats, assoc_counts, tau_u, power_u, power_r):
    """tau_u * sum_k count_k R_k - tau_r * sum_t C_t under Eq-form rates."""
    r_users, c_streams = rates_under_allocation(stats, power_u, power_r)
    if not np.all(np.isfinite(r_users)) or not np.all(np.isfinite(c_streams)):
        return np.nan
    lhs = tau_u * float(np.dot(assoc_counts, r_users))
    rhs = (1.0 - tau_u) * float(c_streams.sum())
    return lhs - rhs


def solve_allocation_system(stats: NormalizedStats, assoc_counts,
                            total_power: float, tau: float):
    """Solve the four coupled equations for (tau_u, tau_r, P_U, P_R) at a
    given mismatch budget tau, or return None.

    Per sign branch of the two absolute values the system reduces to a 1-D
    root-find in tau_u, handled by bisection after a coarse bracket scan.
    """
    if not 0 < tau < 1:
        return None
    assoc_counts = np.asarray(assoc_counts, dtype=float)
    p_total = float(total_power)

    best = None
    for s1 in (1.0, -1.0):
        for s2 in (1.0, -1.0):
            # |tau_u - tau_r| = s1*(2 tau_u - 1), |P_U - P_R| = s2*delta
            # branch equation: s1*(2 tau_u - 1)/2 + s2*delta/(2P) = tau
            def split(tau_u):
                delta = s2 * (2.0 * p_total * tau
                              - s1 * p_total * (2.0 * tau_u - 1.0))
                power_r = p_total - tau_u * delta
                power_u = power_r + delta
                return delta, power_u, power_r

            def admissible(tau_u):
                delta, power_u, power_r = split(tau_u)
                return (s1 * (2.0 * tau_u - 1.0) >= -1e-12
                        and s2 * delta >= -1e-12 * p_total
                        and power_u > 0 and power_r > 0)

            def f(tau_u):
                _, power_u, power_r = split(tau_u)
                return _match_residual(stats, assoc_counts, tau_u,
                                       power_u, power_r)

            lo_lim = 0.5 if s1 > 0 else 1e-9
            hi_lim = 1.0 - 1e-9 if s1 > 0 else 0.5
            grid = np.linspace(lo_lim, hi_lim, 17)
            vals = []
            for t in grid:
                vals.append(f(t) if admissible(t) else np.nan)
            bracket = None
            for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
                if np.isfinite(fa) and np.isfinite(fb) and fa * fb <= 0:
                    bracket = (a, b, fa, fb)
                    break
            if bracket is None:
                continue
            lo, hi, flo, fhi = bracket
            for _ in range(_BISECT_ITERS):
                mid = 0.5 * (lo + hi)
                fm = f(mid)
                if not np.isfinite(fm):
                    break
                if flo * fm <= 0:
                    hi, fhi = mid, fm
                else:
                    lo, flo = mid, fm
            tau_u = 0.5 * (lo + hi)
            if not admissible(tau_u):
                continue
            _, power_u, power_r = split(tau_u)
            sol = AllocationSolution(
                tau_u=float(tau_u), tau_r=float(1.0 - tau_u),
                power_u=float(power_u), power_r=float(power_r),
                tau=float(tau),
                residuals=allocation_residuals(
                    stats, assoc_counts, p_total, tau,
                    tau_u, 1.0 - tau_u, power_u, power_r))
            if np.max(np.abs(sol.residuals)) < RESIDUAL_TOL:
                if best is None:
                    best = sol
    return best


def allocation_residuals(stats, assoc_counts, total_power, tau,
                         tau_u, tau_r, power_u, power_r) -> np.ndarray:
    """The four equation residuals, normalized where scale matters."""
    r1 = tau_u + tau_r - 1.0
    r2 = (tau_u * power_u + tau_r * power_r - total_power) / total_power
    r3 = abs(tau_u - tau_r) / 2.0 + abs(power_u - power_r) / (2.0 * total_power) - tau
    match = _match_residual(stats, np.asarray(assoc_counts, float),
                            tau_u, power_u, power_r)
    denom = max(1.0, abs((1.0 - tau_u)
                         * rates_under_allocation(stats, power_u, power_r)[1].sum()))
    r4 = match / denom if np.isfinite(match) else np.inf
    return np.array([r1, r2, r3, r4])


def binary_search_min_tau(feasible, depth: int):
    """Smallest tau in (0,1) accepted by the predicate, to 2^-depth.

    Runs exactly `depth` predicate evaluations; returns (tau, payload) of the
    smallest accepted point or None if nothing was accepted."""
    lo, hi = 0.0, 1.0
    best = None
    for _ in range(depth):
        mid = 0.5 * (lo + hi)
        result = feasible(mid)
        if result is not None:
            best = (mid, result)
            hi = mid
        else:
            lo = mid
    return best


def min_tau_search(stats: NormalizedStats, assoc_counts, total_power: float,
                   depth: int):
    """Binary search for the smallest feasible mismatch budget."""
    def probe(tau):
        return solve_allocation_system(stats, assoc_counts, total_power, tau)

    found = binary_search_min_tau(probe, depth)
    if found is None:
        return None
    return found[1]


def apply_reallocation(state: PrecodingState, solution: AllocationSolution,
                       stats: NormalizedStats, cfg: SystemConfig) -> PrecodingState:
    """Rescale every precoder column to its water-filled power under the new
    budgets, preserving directions, and install the new resource shares."""
    out = state.copy()
    out.tau_u = solution.tau_u
    out.tau_r = solution.tau_r
    out.power_u = solution.power_u
    out.power_r = solution.power_r

    if cfg.n_users:
        active = stats.gamma_u > 0
        powers = np.zeros(cfg.n_users)
        if active.any():
            powers[active] = waterfill(stats.gamma_u[active], solution.power_u)
        for k in range(cfg.n_users):
            cur = stats.lambda_u[k]
            if cur > 0:
                out.access_precoder[:, k] *= np.sqrt(powers[k] / cur)

    active = stats.gamma_r > 0
    powers = np.zeros(cfg.n_streams)
    if active.any():
        powers[active] = waterfill(stats.gamma_r[active], solution.power_r)
    for i in range(cfg.n_streams):
        cur = stats.lambda_r[i]
        if cur > 0:
            out.fronthaul_precoder[:, i] *= np.sqrt(powers[i] / cur)
    return out
