"""One SCA iteration's machinery: SDR lifting, reweighted-l1 weights, MRC
combiner updates, Taylor surrogates of the interference terms, and assembly
of the convex subproblem handed to the conic solver.

Internally the channels are rescaled so that the subproblem coefficients are
well conditioned: fronthaul and access channels are divided by their RMS
entry magnitudes and the noise variances adjusted to keep every SINR, rate
and surrogate-rate difference exactly invariant. Only the individual concave
log terms shift by a constant, which cancels in all exposed quantities.
"""

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .conic import AffineForm, BlockCoeff, ConicProblem, LinearRow, LogEpigraph
from .model import PrecodingState, rau_of_stream
from .scenario import ChannelSet

LN2 = float(np.log(2.0))

_DEAD_STREAM_TOL = 1e-300


def reweight_update(access_precoder: np.ndarray, mu: float,
                    n_rau_antennas: int) -> np.ndarray:
    """Sparsity weights beta[n, k] = 1 / (||w_{n,k}||^2 + mu)."""
    n_r = n_rau_antennas
    n_streams, n_users = access_precoder.shape
    n_raus = n_streams // n_r
    power = np.abs(access_precoder) ** 2
    block_power = power.reshape(n_raus, n_r, n_users).sum(axis=1)
    return 1.0 / (block_power + mu)


def mrc_update(fronthaul_precoder: np.ndarray, channels: ChannelSet,
               n_rau_antennas: int):
    """Matched receive combiners q_i = (G_n p_i)^H, one per stream.

    Returns the combiner rows and the lifted outer products Q_i; a zero
    precoder column yields a zero combiner (inactive stream).
    """
    n_streams = fronthaul_precoder.shape[1]
    combiners = []
    lifted = []
    for i in range(n_streams):
        g = channels.fronthaul_blocks[rau_of_stream(i, n_rau_antennas)]
        eff = g @ fronthaul_precoder[:, i]
        q = eff.conj()
        combiners.append(q)
        lifted.append(np.outer(eff, eff.conj()))
    return combiners, lifted


@dataclass
class LiftedState:
    """Expansion-point snapshot for one SCA iteration (internally scaled)."""

    cfg: SystemConfig
    # scaled channel data
    g_blocks: list               # scaled fronthaul blocks
    h_rows: list                 # scaled access rows
    sigma2_fh: float             # scaled fronthaul noise
    sigma2_acc: float            # scaled access noise
    # per-stream quantities
    m_atoms: list                # (1, N_B) atom arrays, m_i = (q_i' G_n')^H
    q_norm2: np.ndarray          # ||q_i'||^2 (scaled)
    stream_alive: np.ndarray     # bool per stream
    fh_total: np.ndarray         # S_i = signal+interference+noise (scaled)
    fh_intf: np.ndarray          # I_i = interference+noise (scaled)
    fh_rate: np.ndarray          # true C_i at expansion (invariant)
    # per-user quantities
    h_atoms: list                # (1, N_R) atom arrays, h_k^H as columns
    acc_total: np.ndarray        # T_k (scaled)
    acc_intf: np.ndarray         # J_k (scaled)
    acc_rate: np.ndarray         # true R_k at expansion
    # expansion-point lifted matrices (scaled power units = raw power)
    p_lifted: list               # N_R matrices N_B x N_B
    w_lifted: list               # K matrices N_R x N_R
    weights: np.ndarray          # beta grid (N, K)
    tau_u: float
    tau_r: float


def build_lifted(state: PrecodingState, channels: ChannelSet,
                 cfg: SystemConfig) -> LiftedState:
    """Snapshot the expansion point: rescale channels, fix combiners, and
    evaluate every constant the surrogates and the subproblem need."""
    n_streams = cfg.n_streams
    n_users = cfg.n_users

    g_rms = np.sqrt(np.mean([np.mean(np.abs(g) ** 2)
                             for g in channels.fronthaul_blocks]))
    g_rms = g_rms if g_rms > 0 else 1.0
    if n_users:
        h_rms = np.sqrt(np.mean([np.mean(np.abs(h) ** 2)
                                 for h in channels.access_rows]))
        h_rms = h_rms if h_rms > 0 else 1.0
    else:
        h_rms = 1.0

    g_blocks = [g / g_rms for g in channels.fronthaul_blocks]
    h_rows = [h / h_rms for h in channels.access_rows]
    sigma2_fh = cfg.noise_power / g_rms ** 2
    sigma2_acc = cfg.noise_power / h_rms ** 2

    p_cols = state.fronthaul_precoder
    w_cols = state.access_precoder

    m_atoms = []
    q_norm2 = np.zeros(n_streams)
    alive = np.zeros(n_streams, dtype=bool)
    gains = np.zeros((n_streams, n_streams))   # |q_i' G_n' p_l|^2
    for i in range(n_streams):
        n = rau_of_stream(i, cfg.n_rau_antennas)
        q_scaled = np.asarray(state.receive_combiners[i]) / g_rms
        m_i = (q_scaled @ g_blocks[n]).conj()
        m_atoms.append(m_i[None, :].copy())
        q_norm2[i] = float(np.vdot(q_scaled, q_scaled).real)
        alive[i] = q_norm2[i] > _DEAD_STREAM_TOL
        if alive[i]:
            eff = m_i.conj() @ p_cols
            gains[i] = np.abs(eff) ** 2

    fh_total = gains.sum(axis=1) + sigma2_fh * q_norm2
    fh_intf = fh_total - np.diag(gains)
    with np.errstate(divide="ignore", invalid="ignore"):
        fh_rate = np.where(alive & (np.diag(gains) > 0),
                           np.log2(np.maximum(fh_total, 1e-300))
                           - np.log2(np.maximum(fh_intf, 1e-300)), 0.0)

    h_atoms = []
    acc_total = np.zeros(n_users)
    acc_intf = np.zeros(n_users)
    acc_rate = np.zeros(n_users)
    for k in range(n_users):
        h = h_rows[k]
        h_atoms.append(h.conj()[None, :].copy())
        g = np.abs(h @ w_cols) ** 2
        acc_total[k] = g.sum() + sigma2_acc
        acc_intf[k] = acc_total[k] - g[k]
        acc_rate[k] = np.log2(acc_total[k]) - np.log2(acc_intf[k])

    p_lifted = [np.outer(p_cols[:, i], p_cols[:, i].conj())
                for i in range(n_streams)]
    w_lifted = [np.outer(w_cols[:, k], w_cols[:, k].conj())
                for k in range(n_users)]

    return LiftedState(
        cfg=cfg, g_blocks=g_blocks, h_rows=h_rows,
        sigma2_fh=sigma2_fh, sigma2_acc=sigma2_acc,
        m_atoms=m_atoms, q_norm2=q_norm2, stream_alive=alive,
        fh_total=fh_total, fh_intf=fh_intf, fh_rate=fh_rate,
        h_atoms=h_atoms, acc_total=acc_total, acc_intf=acc_intf,
        acc_rate=acc_rate,
        p_lifted=p_lifted, w_lifted=w_lifted,
        weights=state.reweight_weights.copy(),
        tau_u=state.tau_u, tau_r=state.tau_r,
    )


# --- candidate evaluation (trace forms) ------------------------------------

def _fh_forms(lifted: LiftedState, p_tilde, i: int) -> np.ndarray:
    """m_i^H P_l m_i for every block l."""
    m = lifted.m_atoms[i][0]
    return np.array([float(np.real(m.conj() @ x @ m)) for x in p_tilde])


def _acc_forms(lifted: LiftedState, w_tilde, k: int) -> np.ndarray:
    v = lifted.h_atoms[k][0]
    return np.array([float(np.real(v.conj() @ x @ v)) for x in w_tilde])


def lifted_fronthaul_rate(lifted: LiftedState, p_tilde, i: int) -> float:
    """True rate of stream i at an arbitrary lifted candidate (trace form)."""
    if not lifted.stream_alive[i]:
        return 0.0
    forms = _fh_forms(lifted, p_tilde, i)
    noise = lifted.sigma2_fh * lifted.q_norm2[i]
    total = forms.sum() + noise
    intf = total - forms[i]
    return float(np.log2(total) - np.log2(intf))


def lifted_access_rate(lifted: LiftedState, w_tilde, k: int) -> float:
    forms = _acc_forms(lifted, w_tilde, k)
    total = forms.sum() + lifted.sigma2_acc
    intf = total - forms[k]
    return float(np.log2(total) - np.log2(intf))


# --- surrogates -------------------------------------------------------------

def fronthaul_gradient(lifted: LiftedState, i: int) -> np.ndarray:
    """Gradient of the interference log term w.r.t. any other block's lifted
    matrix: M_i / (ln2 * I_i). Hermitian by construction."""
    m = lifted.m_atoms[i][0]
    return np.outer(m, m.conj()) / (LN2 * lifted.fh_intf[i])


def access_gradient(lifted: LiftedState, k: int) -> np.ndarray:
    v = lifted.h_atoms[k][0]
    return np.outer(v, v.conj()) / (LN2 * lifted.acc_intf[k])


def surrogate_fronthaul(lifted: LiftedState, p_tilde, i: int) -> float:
    """Exact concave term at the candidate minus the linearized interference.

    Equals the true rate at the expansion point and never exceeds the true
    rate elsewhere (the tangent overestimates the concave interference log).
    """
    if not lifted.stream_alive[i]:
        return 0.0
    forms = _fh_forms(lifted, p_tilde, i)
    noise = lifted.sigma2_fh * lifted.q_norm2[i]
    rci = np.log2(forms.sum() + noise)
    exp_forms = _fh_forms(lifted, lifted.p_lifted, i)
    delta_intf = (forms.sum() - forms[i]) - (exp_forms.sum() - exp_forms[i])
    itf_hat = np.log2(lifted.fh_intf[i]) + delta_intf / (LN2 * lifted.fh_intf[i])
    return float(rci - itf_hat)


def surrogate_access(lifted: LiftedState, w_tilde, k: int) -> float:
    forms = _acc_forms(lifted, w_tilde, k)
    rci = np.log2(forms.sum() + lifted.sigma2_acc)
    exp_forms = _acc_forms(lifted, lifted.w_lifted, k)
    delta_intf = (forms.sum() - forms[k]) - (exp_forms.sum() - exp_forms[k])
    itf_hat = np.log2(lifted.acc_intf[k]) + delta_intf / (LN2 * lifted.acc_intf[k])
    return float(rci - itf_hat)


# --- subproblem assembly ----------------------------------------------------

@dataclass
class LiftedSubproblem:
    """Conic description of one SCA iteration plus the bookkeeping required
    to read rates back out of a solution."""

    problem: ConicProblem
    hint: np.ndarray             # expected log arguments, one per epigraph
    n_streams: int
    n_users: int
    # affine correction turning epigraph scalars into surrogate rates:
    # rate_i = v_i - <correction_i, blocks> + offset_i
    fh_offsets: np.ndarray
    acc_offsets: np.ndarray
    lifted: LiftedState

    def fronthaul_rate_values(self, solution) -> np.ndarray:
        out = np.zeros(self.n_streams)
        for i in range(self.n_streams):
            if self.lifted.stream_alive[i]:
                out[i] = surrogate_fronthaul(
                    self.lifted, solution.psd_values[:self.n_streams], i)
        return out

    def access_rate_values(self, solution) -> np.ndarray:
        w = solution.psd_values[self.n_streams:]
        return np.array([surrogate_access(self.lifted, w, k)
                         for k in range(self.n_users)])


def build_subproblem(lifted: LiftedState, cfg: SystemConfig) -> LiftedSubproblem:
    """Emit the convex subproblem: maximize the resource-scaled sum of access
    surrogate rates subject to the shared power budget, the per-RAU coupling
    rows and the concave-log epigraphs."""
    n_streams = cfg.n_streams
    n_users = cfg.n_users
    n_b = cfg.n_bbu_antennas
    tau_u, tau_r = lifted.tau_u, lifted.tau_r

    blocks = [(n_b, True)] * n_streams + [(n_streams, True)] * n_users
    n_scalars = n_streams + n_users

    def fh_grad_weight(i):
        return 1.0 / (LN2 * lifted.fh_intf[i])

    def acc_grad_weight(k):
        return 1.0 / (LN2 * lifted.acc_intf[k])

    # interference surrogate constants (offsets absorb the expansion point)
    fh_offsets = np.zeros(n_streams)
    for i in range(n_streams):
        if not lifted.stream_alive[i]:
            continue
        exp_forms = _fh_forms(lifted, lifted.p_lifted, i)
        exp_intf = exp_forms.sum() - exp_forms[i]
        fh_offsets[i] = (exp_intf * fh_grad_weight(i)
                         - np.log2(lifted.fh_intf[i]))
    acc_offsets = np.zeros(n_users)
    for k in range(n_users):
        exp_forms = _acc_forms(lifted, lifted.w_lifted, k)
        exp_intf = exp_forms.sum() - exp_forms[k]
        acc_offsets[k] = (exp_intf * acc_grad_weight(k)
                          - np.log2(lifted.acc_intf[k]))

    # objective: tau_u * sum_k [v_k - sum_{l != k} grad_k . W_l + offset_k]
    objective = AffineForm(constant=float(tau_u * acc_offsets.sum()))
    for k in range(n_users):
        objective.scalars[n_streams + k] = tau_u
    for l in range(n_users):
        for k in range(n_users):
            if k == l:
                continue
            objective.add_block(
                n_streams + l,
                BlockCoeff(atoms=lifted.h_atoms[k],
                           weights=np.array([-tau_u * acc_grad_weight(k)])))

    rows = []
    # shared power budget
    power = AffineForm()
    for i in range(n_streams):
        power.blocks[i] = BlockCoeff.from_identity(n_b, tau_r)
    for k in range(n_users):
        power.blocks[n_streams + k] = BlockCoeff.from_identity(n_streams, tau_u)
    rows.append(LinearRow(power, "<=", cfg.total_power))

    # per-RAU fronthaul coupling
    n_r = cfg.n_rau_antennas
    eye_rows = np.eye(n_streams, dtype=complex)
    for n in range(cfg.n_raus):
        form = AffineForm()
        rhs = 0.0
        block_atoms = eye_rows[n * n_r:(n + 1) * n_r].copy()
        for k in range(n_users):
            scale = tau_u * lifted.weights[n, k] * lifted.acc_rate[k]
            if scale:
                form.add_block(n_streams + k,
                               BlockCoeff(atoms=block_atoms,
                                          weights=np.full(n_r, scale)))
        streams = range(n * n_r, (n + 1) * n_r)
        if cfg.coupling_rhs == "epigraph":
            for i in streams:
                if not lifted.stream_alive[i]:
                    continue
                form.scalars[i] = form.scalars.get(i, 0.0) - tau_r
                w_i = tau_r * fh_grad_weight(i)
                for l in range(n_streams):
                    if l != i:
                        form.add_block(l, BlockCoeff(atoms=lifted.m_atoms[i],
                                                     weights=np.array([w_i])))
                rhs += tau_r * fh_offsets[i]
        else:
            # printed variant: previous-iterate capacity as a constant
            rhs += tau_r * float(lifted.fh_rate[n * n_r:(n + 1) * n_r].sum())
        rows.append(LinearRow(form, "<=", rhs))

    # concave-log epigraphs
    epis = []
    hint = []
    for i in range(n_streams):
        if not lifted.stream_alive[i]:
            continue
        arg = AffineForm(constant=float(lifted.sigma2_fh * lifted.q_norm2[i]))
        for l in range(n_streams):
            arg.add_block(l, BlockCoeff(atoms=lifted.m_atoms[i],
                                        weights=np.array([1.0])))
        epis.append(LogEpigraph(scalar=i, arg=arg))
        hint.append(lifted.fh_total[i])
    for k in range(n_users):
        arg = AffineForm(constant=float(lifted.sigma2_acc))
        for l in range(n_users):
            arg.add_block(n_streams + l,
                          BlockCoeff(atoms=lifted.h_atoms[k],
                                     weights=np.array([1.0])))
        epis.append(LogEpigraph(scalar=n_streams + k, arg=arg))
        hint.append(lifted.acc_total[k])

    problem = ConicProblem(psd_blocks=blocks, n_scalars=n_scalars,
                           objective=objective, linear_rows=rows,
                           log_epigraphs=epis)
    return LiftedSubproblem(problem=problem, hint=np.asarray(hint),
                            n_streams=n_streams, n_users=n_users,
                            fh_offsets=fh_offsets, acc_offsets=acc_offsets,
                            lifted=lifted)


# --- rank-1 recovery --------------------------------------------------------

def recover_rank1(matrix: np.ndarray, tol: float = 1e-8):
    """Leading-eigenpair recovery of a lifted PSD matrix.

    Returns (vector, tightness) with vector = sqrt(l1) u1 and tightness the
    share of trace captured by the leading eigenvalue. Degenerate ties break
    toward the lowest basis index; the global phase makes the largest entry
    real positive.
    """
    mat = (matrix + matrix.conj().T) / 2.0
    vals, vecs = np.linalg.eigh(mat)
    if vals[-1] < -tol * max(1.0, abs(vals).max()):
        raise ValueError("matrix is not PSD within tolerance")
    vals = np.maximum(vals, 0.0)
    top = vals[-1]
    tied = np.nonzero(vals >= top * (1.0 - 1e-12))[0]
    if len(tied) > 1:
        # pick the tied eigenvector with the strongest lowest-index component
        sub = vecs[:, tied]
        order = np.lexsort(np.abs(sub)[::-1])
        choice = tied[order[-1]]
    else:
        choice = tied[0]
    u = vecs[:, choice]
    lead = np.argmax(np.abs(u))
    phase = u[lead] / abs(u[lead]) if abs(u[lead]) > 0 else 1.0
    u = u * np.conj(phase)
    trace = float(vals.sum())
    tightness = float(top / trace) if trace > 0 else 1.0
    return np.sqrt(top) * u, tightness


def gaussian_candidates(matrix: np.ndarray, count: int,
                        rng: np.random.Generator):
    """Randomized rank-1 candidates drawn from the lifted covariance and
    rescaled to its trace."""
    mat = (matrix + matrix.conj().T) / 2.0
    vals, vecs = np.linalg.eigh(mat)
    vals = np.maximum(vals, 0.0)
    root = vecs * np.sqrt(vals)
    trace = vals.sum()
    out = []
    for _ in range(count):
        z = (rng.standard_normal(mat.shape[0])
             + 1j * rng.standard_normal(mat.shape[0])) / np.sqrt(2.0)
        w = root @ z
        norm2 = float(np.vdot(w, w).real)
        if norm2 > 0 and trace > 0:
            out.append(w * np.sqrt(trace / norm2))
    return out
