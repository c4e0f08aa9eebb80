"""Conic solver for linear objectives over Hermitian PSD blocks and scalars,
with linear rows and logarithmic epigraph constraints t <= log2(affine).

Log epigraphs are handled by an inner piecewise-secant minorant of log2 over
a trust interval around the incumbent, refined until the linearization gap is
below tolerance. Secants under-estimate the concave log, so every pass is a
safe inner restriction of the true feasible set. Each pass solves a linear
problem over free scalars, nonnegative slacks and small dense Hermitian PSD
blocks with a primal-dual predictor-corrector interior-point method under
Nesterov-Todd scaling.

Coefficient matrices on PSD blocks are kept in structured form,
sum_r w_r v_r v_r^H + eye * I, which covers everything the precoding
subproblems emit and keeps the Schur-complement assembly cheap. Dense
Hermitian coefficients are converted to this form exactly by
eigendecomposition.

The linear algebra is tuned for many small blocks: scalings and step-length
eigenproblems are batched per block dimension, and the KKT system is solved
by eliminating the rows whose only cone entry is their own slack (everything
except the few rows that touch PSD blocks), leaving one small dense core.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

try:
    from threadpoolctl import threadpool_limits
except ImportError:      # pragma: no cover - always present in this environment
    import contextlib

    def threadpool_limits(limits=None):
        return contextlib.nullcontext()

LN2 = float(np.log(2.0))

DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERATIONS = 200


class ConicError(ValueError):
    """Malformed problem description."""


# ---------------------------------------------------------------------------
# Problem description
# ---------------------------------------------------------------------------

@dataclass
class BlockCoeff:
    """Hermitian coefficient sum_r weights[r] * v_r v_r^H + eye * I on one block.

    atoms has shape (r, d) with row r holding the entries of v_r.
    """

    atoms: np.ndarray
    weights: np.ndarray
    eye: float = 0.0

    @classmethod
    def from_rank1(cls, v: np.ndarray, weight: float = 1.0) -> "BlockCoeff":
        v = np.asarray(v, dtype=complex).ravel()
        return cls(atoms=v[None, :], weights=np.array([float(weight)]))

    @classmethod
    def from_identity(cls, dim: int, weight: float) -> "BlockCoeff":
        return cls(atoms=np.zeros((0, dim), dtype=complex),
                   weights=np.zeros(0), eye=float(weight))

    @classmethod
    def from_matrix(cls, a: np.ndarray, tol: float = 1e-12) -> "BlockCoeff":
        """Exact atom form of a dense Hermitian matrix via eigendecomposition."""
        a = np.asarray(a, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConicError(f"coefficient must be square, got {a.shape}")
        if np.linalg.norm(a - a.conj().T) > tol * max(1.0, np.linalg.norm(a)):
            raise ConicError("coefficient matrix is not Hermitian")
        vals, vecs = np.linalg.eigh((a + a.conj().T) / 2.0)
        keep = np.abs(vals) > tol * max(1.0, np.abs(vals).max(initial=0.0))
        return cls(atoms=vecs.T[keep], weights=vals[keep])

    def scaled(self, factor: float) -> "BlockCoeff":
        return BlockCoeff(atoms=self.atoms, weights=self.weights * factor,
                          eye=self.eye * factor)

    def merged(self, other: "BlockCoeff") -> "BlockCoeff":
        return BlockCoeff(atoms=np.vstack([self.atoms, other.atoms]),
                          weights=np.concatenate([self.weights, other.weights]),
                          eye=self.eye + other.eye)

    def dim(self) -> int:
        return self.atoms.shape[1]

    def matrix(self, dim: int) -> np.ndarray:
        out = (self.atoms.T * self.weights) @ self.atoms.conj()
        out = (out + out.conj().T) / 2.0
        if self.eye:
            out = out + self.eye * np.eye(dim)
        return out

    def value(self, x: np.ndarray) -> float:
        """Real inner product <coeff, X> for Hermitian X."""
        total = 0.0
        if self.atoms.shape[0]:
            forms = np.einsum("ri,ij,rj->r", self.atoms.conj(), x, self.atoms)
            total += float(np.dot(self.weights, forms.real))
        if self.eye:
            total += self.eye * float(np.trace(x).real)
        return total


@dataclass
class AffineForm:
    """Real-valued affine functional over PSD blocks and scalar variables."""

    blocks: dict = field(default_factory=dict)    # block index -> BlockCoeff
    scalars: dict = field(default_factory=dict)   # scalar index -> float
    constant: float = 0.0

    def add_block(self, b: int, coeff: BlockCoeff):
        prev = self.blocks.get(b)
        self.blocks[b] = coeff if prev is None else prev.merged(coeff)

    def value(self, psd_values, scalar_values) -> float:
        total = self.constant
        for b, coeff in self.blocks.items():
            total += coeff.value(psd_values[b])
        for j, c in self.scalars.items():
            total += c * scalar_values[j]
        return float(total)


@dataclass
class LinearRow:
    form: AffineForm
    sense: str          # "<=" or "=="
    rhs: float


@dataclass
class LogEpigraph:
    """Constraint scalar_values[scalar] <= log2(arg(x))."""

    scalar: int
    arg: AffineForm


@dataclass
class ConicProblem:
    psd_blocks: list            # (dimension, hermitian flag) per block
    n_scalars: int
    objective: AffineForm       # maximized
    linear_rows: list
    log_epigraphs: list

    def validate(self):
        dims = [d for d, _ in self.psd_blocks]

        def check_form(form, where):
            if not np.isfinite(form.constant):
                raise ConicError(f"{where}: non-finite constant")
            for b, coeff in form.blocks.items():
                if not 0 <= b < len(dims):
                    raise ConicError(f"{where}: unknown block {b}")
                if coeff.dim() != dims[b]:
                    raise ConicError(
                        f"{where}: block {b} coefficient dim {coeff.dim()} != {dims[b]}")
                if not (np.all(np.isfinite(coeff.atoms))
                        and np.all(np.isfinite(coeff.weights))
                        and np.isfinite(coeff.eye)):
                    raise ConicError(f"{where}: non-finite block coefficient")
            for j, c in form.scalars.items():
                if not 0 <= j < self.n_scalars:
                    raise ConicError(f"{where}: unknown scalar {j}")
                if not np.isfinite(c):
                    raise ConicError(f"{where}: non-finite scalar coefficient")

        check_form(self.objective, "objective")
        for r, row in enumerate(self.linear_rows):
            if row.sense not in ("<=", "=="):
                raise ConicError(f"row {r}: sense must be <= or ==")
            if not np.isfinite(row.rhs):
                raise ConicError(f"row {r}: non-finite rhs")
            check_form(row.form, f"row {r}")
        for e, epi in enumerate(self.log_epigraphs):
            if not 0 <= epi.scalar < self.n_scalars:
                raise ConicError(f"epigraph {e}: unknown scalar {epi.scalar}")
            check_form(epi.arg, f"epigraph {e}")


@dataclass
class ConicSolution:
    psd_values: list
    scalar_values: np.ndarray
    status: str                 # optimal | infeasible | max_iterations
    objective: float
    primal_residual: float
    dual_gap: float
    iterations: int = 0


# ---------------------------------------------------------------------------
# Internal standard form:  min c'x,  A x = b,
# x in free^nf x nonneg^nl x (Hermitian PSD blocks).
# Every nonneg variable is a slack appearing in exactly one row, so rows
# split into "simple" ones (their only cone entry is their own slack) and
# "core" ones touching PSD blocks; the KKT solve exploits this.
# ---------------------------------------------------------------------------

class _Standard:
    def __init__(self, dims, nf):
        self.dims = list(dims)
        self.nf = nf
        self.nl = 0
        self.rows = []           # (free: {j: c}, slack: int or None, blk: {b: BlockCoeff})
        self.b = []
        self.cf = {}
        self.cb = {}             # block -> BlockCoeff (objective, minimized)
        self.obj_const = 0.0

    def add_row(self, free=None, blk=None, rhs=0.0, slack=False):
        s = None
        if slack:
            s = self.nl
            self.nl += 1
        self.rows.append((dict(free or {}), s, dict(blk or {})))
        self.b.append(float(rhs))

    def finalize(self):
        m = len(self.rows)
        self.m = m
        self.b = np.asarray(self.b)
        nb = len(self.dims)

        # "simple" rows have a slack and no PSD entries: their column of the
        # Schur complement is purely diagonal, so they can be eliminated
        self.simple = np.array(
            [r for r, row in enumerate(self.rows)
             if row[1] is not None and not row[2]], dtype=int)
        simple_set = set(self.simple.tolist())
        self.core = np.array([r for r in range(m) if r not in simple_set],
                             dtype=int)
        mc = len(self.core)
        self.mc = mc
        core_pos = {r: i for i, r in enumerate(self.core)}

        # free-variable matrix, dense (nf is small by construction)
        self.Af = np.zeros((m, self.nf))
        for r, (free, _, _) in enumerate(self.rows):
            for j, c in free.items():
                self.Af[r, j] += c
        # slack bookkeeping: row -> slack index (or -1)
        self.slack_of_row = np.full(m, -1, dtype=int)
        for r, (_, s, _) in enumerate(self.rows):
            if s is not None:
                self.slack_of_row[r] = s
        self.rows_with_slack = np.nonzero(self.slack_of_row >= 0)[0]
        self.slack_idx = self.slack_of_row[self.rows_with_slack]

        # per-block atom dictionary and dense (mc, r_b) weight matrices
        self.block_atoms = []
        self.block_C = []
        self.block_eye = []
        for bidx, d in enumerate(self.dims):
            atom_key = {}
            atoms = []
            entries = []
            eye = np.zeros(mc)
            for r, (_, _, blk) in enumerate(self.rows):
                coeff = blk.get(bidx)
                if coeff is None:
                    continue
                i = core_pos[r]
                eye[i] += coeff.eye
                if coeff.atoms.shape[0]:
                    key = id(coeff.atoms)
                    if key not in atom_key:
                        atom_key[key] = len(atoms)
                        atoms.extend(coeff.atoms)
                    base = atom_key[key]
                    for t, w in enumerate(coeff.weights):
                        entries.append((i, base + t, w))
            V = np.asarray(atoms, dtype=complex) if atoms else np.zeros((0, d), complex)
            C = np.zeros((mc, V.shape[0]))
            for i, j, w in entries:
                C[i, j] += w
            self.block_atoms.append(V)
            self.block_C.append(C)
            self.block_eye.append(eye)

        self.cf_vec = np.zeros(self.nf)
        for j, c in self.cf.items():
            self.cf_vec[j] += c
        self.cb_mats = []
        for bidx, d in enumerate(self.dims):
            coeff = self.cb.get(bidx)
            self.cb_mats.append(coeff.matrix(d) if coeff is not None
                                else np.zeros((d, d), complex))
        # group blocks by dimension for batched linear algebra
        self.dim_groups = {}
        for i, d in enumerate(self.dims):
            self.dim_groups.setdefault(d, []).append(i)

    # --- operators --------------------------------------------------------

    def block_forms(self, Xb) -> np.ndarray:
        """Core-row values of all PSD terms: (mc,) vector."""
        out = np.zeros(self.mc)
        for V, C, eye, X in zip(self.block_atoms, self.block_C, self.block_eye, Xb):
            if V.shape[0]:
                forms = ((V.conj() @ X) * V).sum(axis=1).real
                out += C @ forms
            if eye.any():
                out += eye * np.trace(X).real
        return out

    def apply_A(self, xf, xl, Xb) -> np.ndarray:
        out = self.Af @ xf
        if self.nl:
            out[self.rows_with_slack] += xl[self.slack_idx]
        if self.mc:
            out[self.core] += self.block_forms(Xb)
        return out

    def apply_AT_blocks(self, y):
        """Adjoint into each PSD block."""
        yc = y[self.core]
        mats = []
        for V, C, eye, d in zip(self.block_atoms, self.block_C, self.block_eye,
                                self.dims):
            w = C.T @ yc
            if V.shape[0]:
                mat = (V.T * w) @ V.conj()
                mat = (mat + mat.conj().T) / 2.0
            else:
                mat = np.zeros((d, d), dtype=complex)
            t = float(eye @ yc)
            if t:
                mat = mat + t * np.eye(d)
            mats.append(mat)
        return mats

    def apply_AT_slack(self, y) -> np.ndarray:
        out = np.zeros(self.nl)
        out[self.slack_idx] = y[self.rows_with_slack]
        return out


# ---------------------------------------------------------------------------
# Interior-point core
# ---------------------------------------------------------------------------

_STEP_FRAC = 0.98
_MIN_MU = 1e-18


def _batched_nt(Xs, Zs):
    """NT scalings for a stack of blocks of one dimension.

    Returns R, Rinv, lam with Rinv X Rinv^H = R^H Z R = diag(lam) per block;
    the scaling is W = R R^H.
    """
    L = np.linalg.cholesky(Xs)
    M = np.swapaxes(L.conj(), -1, -2) @ Zs @ L
    M = (M + np.swapaxes(M.conj(), -1, -2)) / 2.0
    lam2, Q = np.linalg.eigh(M)
    lam2 = np.maximum(lam2, 1e-300)
    quarter = lam2 ** 0.25
    R = (L @ Q) / quarter[..., None, :]
    Linv = np.linalg.inv(L)
    Rinv = quarter[..., :, None] * (np.swapaxes(Q.conj(), -1, -2) @ Linv)
    return R, Rinv, np.sqrt(lam2)


def _ipm(std: _Standard, tol: float, max_iter: int, trace: bool = False,
         warm=None):
    """Primal-dual NT predictor-corrector on the internal standard form.

    warm, when given, is (xf, Xb) from a primal-feasible point of a problem
    with the same variables; slacks are rebuilt from the row values and the
    dual side starts fresh.
    """
    nf, nl, dims, m = std.nf, std.nl, std.dims, std.m
    nb = len(dims)
    scale = max(1.0, float(np.abs(std.b).max(initial=0.0)),
                float(np.abs(std.cf_vec).max(initial=0.0)))

    if warm is not None:
        xf = warm[0].copy()
        pad = 1e-3 * scale
        Xb = [x + pad * np.eye(d) for x, d in zip(warm[1], dims)]
        resid = std.b - std.apply_A(xf, np.zeros(nl), Xb)
        xl = np.full(nl, pad)
        good = std.slack_idx
        xl[good] = np.maximum(resid[std.rows_with_slack], pad)
    else:
        xf = np.zeros(nf)
        xl = np.ones(nl) * scale
        Xb = [np.eye(d, dtype=complex) * scale for d in dims]
    y = np.zeros(m)
    zl = np.ones(nl) * scale
    Zb = [np.eye(d, dtype=complex) * scale for d in dims]

    cone_dim = nl + sum(dims)
    bnorm = 1.0 + np.linalg.norm(std.b)
    cnorm = 1.0 + np.sqrt(np.linalg.norm(std.cf_vec) ** 2
                          + sum(np.linalg.norm(cm) ** 2 for cm in std.cb_mats))

    core = std.core
    status = "max_iterations"
    it = 0
    for it in range(1, max_iter + 1):
        rp = std.b - std.apply_A(xf, xl, Xb)
        At_blocks = std.apply_AT_blocks(y)
        rd_f = std.cf_vec - std.Af.T @ y
        rd_l = -std.apply_AT_slack(y) - zl
        rd_b = [std.cb_mats[i] - At_blocks[i] - Zb[i] for i in range(nb)]

        gap = float(np.dot(xl, zl)) + sum(np.trace(Xb[i] @ Zb[i]).real
                                          for i in range(nb))
        mu = gap / max(cone_dim, 1)

        pobj = float(std.cf_vec @ xf
                     + sum(np.trace(std.cb_mats[i] @ Xb[i]).real for i in range(nb)))
        dobj = float(std.b @ y)
        pres = np.linalg.norm(rp) / bnorm
        dres = np.sqrt(np.linalg.norm(rd_f) ** 2 + np.linalg.norm(rd_l) ** 2
                       + sum(np.linalg.norm(r) ** 2 for r in rd_b)) / cnorm
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))

        if trace:
            print(f"  it={it} pres={pres:.2e} dres={dres:.2e} gap={relgap:.2e} "
                  f"mu={mu:.2e} pobj={pobj:.6g} dobj={dobj:.6g}")
        if pres < tol and dres < tol and relgap < tol:
            status = "optimal"
            break

        # Farkas-type infeasibility certificate: y with A'y conic-dual feasible
        # and b'y > 0 scaled arbitrarily large
        ynorm = np.linalg.norm(y)
        if ynorm > 1e8 * scale and dobj > 0:
            aty_f = np.linalg.norm(std.Af.T @ y)
            aty_l = np.linalg.norm(np.minimum(-std.apply_AT_slack(y), 0.0))
            if (aty_f + aty_l) / max(dobj, 1e-300) < 1e-6:
                status = "infeasible"
                break
        if mu < _MIN_MU and pres < np.sqrt(tol) and dres < np.sqrt(tol):
            status = "optimal"
            break

        # NT scalings, batched per dimension group
        R_ = [None] * nb
        Rinv_ = [None] * nb
        lam_ = [None] * nb
        try:
            for d, idxs in std.dim_groups.items():
                Xs = np.stack([Xb[i] for i in idxs])
                Zs = np.stack([Zb[i] for i in idxs])
                R, Rinv, lam = _batched_nt(Xs, Zs)
                for t, i in enumerate(idxs):
                    R_[i], Rinv_[i], lam_[i] = R[t], Rinv[t], lam[t]
        except np.linalg.LinAlgError:
            break
        wl2 = xl / zl if nl else np.zeros(0)
        lam_l = np.sqrt(xl * zl) if nl else np.zeros(0)

        # KKT pieces: D (diagonal over simple+slack rows), dense core block
        diag = np.zeros(m)
        if nl:
            diag[std.rows_with_slack] += wl2[std.slack_idx]
        Hc = np.zeros((std.mc, std.mc))
        for i in range(nb):
            V = std.block_atoms[i]
            C = std.block_C[i]
            eye_w = std.block_eye[i]
            R = R_[i]
            RH = R.conj().T
            if V.shape[0]:
                Y = RH @ V.T                     # column r = R^H v_r
                G = Y.conj().T @ Y               # v_r^H W v_s
                WV = R @ Y                       # column r = W v_r
                q = np.einsum("ij,ij->j", WV.conj(), WV).real
                Hc += (C @ (np.abs(G) ** 2)) @ C.T
                if eye_w.any():
                    cq = C @ q
                    Hc += np.outer(eye_w, cq) + np.outer(cq, eye_w)
            if eye_w.any():
                trW2 = np.linalg.norm(RH @ R, "fro") ** 2
                Hc += np.outer(eye_w, eye_w) * trW2
        dcore = diag[core]
        Hc[np.diag_indices_from(Hc)] += dcore

        # reduced dense system over (core rows, free vars) after eliminating
        # the simple rows:  [[Hc+Dc, Afc], [Afc', -Afs' D^-1 Afs]]
        simple = std.simple
        dsimple = diag[simple]
        Afs = std.Af[simple]
        Afc = std.Af[core]
        S22 = -(Afs.T * (1.0 / dsimple)) @ Afs if len(simple) else np.zeros((nf, nf))
        red = np.block([[Hc, Afc], [Afc.T, S22]])
        KK = red.copy()
        reg = 1e-13 * max(1.0, scale)
        KK[np.diag_indices_from(KK)] += np.concatenate([
            np.full(std.mc, reg), np.full(nf, -reg)])
        try:
            lu = sla.lu_factor(KK)
        except ValueError:
            break

        def kkt_solve(r1, r2):
            """Solve [[H, Af],[Af', 0]] over (y, xf) via simple-row elimination."""
            rs = r1[simple]
            rc = r1[core]
            rhs = np.concatenate([rc, r2 - (Afs.T @ (rs / dsimple))]) \
                if len(simple) else np.concatenate([rc, r2])
            sol = sla.lu_solve(lu, rhs)
            # one refinement pass against the unregularized reduced system
            resid = rhs - red @ sol
            sol = sol + sla.lu_solve(lu, resid)
            y_core = sol[:std.mc]
            dxf = sol[std.mc:]
            y_full = np.zeros(m)
            y_full[core] = y_core
            if len(simple):
                y_full[simple] = (rs - Afs @ dxf) / dsimple
            return y_full, dxf

        def direction(t_l, t_b):
            """Newton direction from scaled complementarity targets."""
            if nl:
                g_l = t_l / lam_l
                rc_l = np.sqrt(wl2) * g_l
            else:
                rc_l = np.zeros(0)
            rc_b = []
            for i in range(nb):
                lam = lam_[i]
                denom = (lam[:, None] + lam[None, :]) / 2.0
                g = t_b[i] / denom
                rc_b.append(R_[i] @ g @ R_[i].conj().T)
            comb_l = rc_l - wl2 * rd_l if nl else np.zeros(0)
            comb_b = []
            for i in range(nb):
                R = R_[i]
                RH = R.conj().T
                comb_b.append(rc_b[i] - R @ (RH @ rd_b[i] @ R) @ RH)
            r1 = rp - std.apply_A(np.zeros(nf), comb_l, comb_b)
            dy, dxf = kkt_solve(r1, rd_f)
            dz_l = rd_l - std.apply_AT_slack(dy)
            dx_l = rc_l - wl2 * dz_l
            At_dy_b = std.apply_AT_blocks(dy)
            dz_b = []
            dx_b = []
            for i in range(nb):
                R = R_[i]
                RH = R.conj().T
                dzi = rd_b[i] - At_dy_b[i]
                dzi = (dzi + dzi.conj().T) / 2.0
                dxi = rc_b[i] - R @ (RH @ dzi @ R) @ RH
                dz_b.append(dzi)
                dx_b.append((dxi + dxi.conj().T) / 2.0)
            return dy, dxf, dx_l, dz_l, dx_b, dz_b

        def scaled_dirs(dx_b, dz_b):
            out = []
            for i in range(nb):
                dxs = Rinv_[i] @ dx_b[i] @ Rinv_[i].conj().T
                dzs = R_[i].conj().T @ dz_b[i] @ R_[i]
                out.append(((dxs + dxs.conj().T) / 2.0,
                            (dzs + dzs.conj().T) / 2.0))
            return out

        def step_lengths(dx_l, dz_l, sdirs):
            ap = ad = np.inf
            if nl:
                neg = dx_l < 0
                if neg.any():
                    ap = min(ap, float(np.min(-xl[neg] / dx_l[neg])))
                neg = dz_l < 0
                if neg.any():
                    ad = min(ad, float(np.min(-zl[neg] / dz_l[neg])))
            for d, idxs in std.dim_groups.items():
                mats_p = np.empty((len(idxs), d, d), dtype=complex)
                mats_d = np.empty((len(idxs), d, d), dtype=complex)
                for t, i in enumerate(idxs):
                    s = 1.0 / np.sqrt(lam_[i])
                    dxs, dzs = sdirs[i]
                    mats_p[t] = (dxs * s[None, :]) * s[:, None]
                    mats_d[t] = (dzs * s[None, :]) * s[:, None]
                for mats, which in ((mats_p, "p"), (mats_d, "d")):
                    sym = (mats + np.swapaxes(mats.conj(), -1, -2)) / 2.0
                    evs = np.linalg.eigvalsh(sym)[:, 0]
                    worst = evs.min()
                    if worst < 0:
                        if which == "p":
                            ap = min(ap, -1.0 / worst)
                        else:
                            ad = min(ad, -1.0 / worst)
            return ap, ad

        # predictor
        t_l = -lam_l ** 2 if nl else np.zeros(0)
        t_b = [-np.diag(lam_[i] ** 2).astype(complex) for i in range(nb)]
        aff = direction(t_l, t_b)
        sdirs_aff = scaled_dirs(aff[4], aff[5])
        ap, ad = step_lengths(aff[2], aff[3], sdirs_aff)
        ap = min(1.0, _STEP_FRAC * ap)
        ad = min(1.0, _STEP_FRAC * ad)

        gap_aff = float(np.dot(xl + ap * aff[2], zl + ad * aff[3])) if nl else 0.0
        for i in range(nb):
            gap_aff += np.trace((Xb[i] + ap * aff[4][i])
                                @ (Zb[i] + ad * aff[5][i])).real
        sigma = min(1.0, max(0.0, gap_aff / gap) ** 3) if gap > 0 else 0.1

        # corrector
        if nl:
            dxs_l = aff[2] / np.sqrt(wl2)
            dzs_l = aff[3] * np.sqrt(wl2)
            t_l = sigma * mu - lam_l ** 2 - dxs_l * dzs_l
        t_b = []
        for i in range(nb):
            dxs, dzs = sdirs_aff[i]
            cross = (dxs @ dzs + dzs @ dxs) / 2.0
            t_b.append(sigma * mu * np.eye(dims[i])
                       - np.diag(lam_[i] ** 2).astype(complex)
                       - (cross + cross.conj().T) / 2.0)
        dy, dxf, dx_l, dz_l, dx_b, dz_b = direction(t_l, t_b)
        sdirs = scaled_dirs(dx_b, dz_b)
        ap, ad = step_lengths(dx_l, dz_l, sdirs)
        ap = min(1.0, _STEP_FRAC * ap)
        ad = min(1.0, _STEP_FRAC * ad)

        xf = xf + ap * dxf
        xl = xl + ap * dx_l
        y = y + ad * dy
        zl = zl + ad * dz_l
        for i in range(nb):
            Xb[i] = Xb[i] + ap * dx_b[i]
            Xb[i] = (Xb[i] + Xb[i].conj().T) / 2.0
            Zb[i] = Zb[i] + ad * dz_b[i]
            Zb[i] = (Zb[i] + Zb[i].conj().T) / 2.0

    return {
        "xf": xf, "xl": xl, "Xb": Xb, "y": y,
        "status": status, "iterations": it,
        "pobj": float(std.cf_vec @ xf
                      + sum(np.trace(std.cb_mats[i] @ Xb[i]).real
                            for i in range(len(dims)))),
        "dobj": float(std.b @ y),
    }


# ---------------------------------------------------------------------------
# Secant outer loop
# ---------------------------------------------------------------------------

_ENVELOPE_KNOTS = 12
_INITIAL_SPAN = 2.0 ** 10      # trust interval half-width as a ratio
_MAX_REFINEMENTS = 40


class _KnotSet:
    """Knots for one log epigraph: a coarse geometric envelope, accumulated
    incumbent points, and a dyadically graded cluster around the latest
    incumbent (spacing ~ tol-accurate at the center, coarser outward)."""

    def __init__(self, center: float, tol: float):
        center = max(float(center), 1e-30)
        self.lo = center / _INITIAL_SPAN
        self.hi = center * _INITIAL_SPAN
        self.center = center
        self.points = []
        # chord over log-ratio rho has max error ~ (ln rho)^2 / (8 ln2)
        self.step = np.sqrt(8.0 * LN2 * max(tol, 1e-14))

    def values(self) -> np.ndarray:
        envelope = np.geomspace(self.lo, self.hi, _ENVELOPE_KNOTS)
        offsets = [0.0]
        w = self.step
        while w < np.log(_INITIAL_SPAN):
            offsets.extend((w, -w))
            w *= 2.0
        cluster = self.center * np.exp(np.array(offsets))
        pts = np.asarray(self.points) if self.points else np.zeros(0)
        xs = np.unique(np.concatenate([envelope, cluster, pts]))
        return xs[(xs >= self.lo * (1 - 1e-12)) & (xs <= self.hi * (1 + 1e-12))]

    def refine(self, at: float) -> None:
        at = max(float(at), 1e-30)
        if at <= self.lo * (1.0 + 1e-9):
            self.lo /= _INITIAL_SPAN
        if at >= self.hi * (1.0 - 1e-9):
            self.hi *= _INITIAL_SPAN
        at = min(max(at, self.lo), self.hi)
        self.points.append(at)
        if len(self.points) > 60:
            self.points = self.points[-60:]
        self.center = at


def _build_standard(problem: ConicProblem, knots: list) -> _Standard:
    """Assemble the internal LP+PSD form with the current secant knot sets.

    Free variables: [problem scalars | one argument value per log epigraph].
    """
    n_epi = len(problem.log_epigraphs)
    std = _Standard([d for d, _ in problem.psd_blocks], problem.n_scalars + n_epi)

    for j, c in problem.objective.scalars.items():
        std.cf[j] = std.cf.get(j, 0.0) - c
    for bidx, coeff in problem.objective.blocks.items():
        neg = coeff.scaled(-1.0)
        std.cb[bidx] = neg if bidx not in std.cb else std.cb[bidx].merged(neg)
    std.obj_const = problem.objective.constant

    for row in problem.linear_rows:
        std.add_row(free=dict(row.form.scalars), blk=dict(row.form.blocks),
                    rhs=row.rhs - row.form.constant, slack=(row.sense == "<="))

    for e, epi in enumerate(problem.log_epigraphs):
        alpha = problem.n_scalars + e
        free = dict(epi.arg.scalars)
        free[alpha] = free.get(alpha, 0.0) - 1.0
        std.add_row(free=free, blk=dict(epi.arg.blocks),
                    rhs=-epi.arg.constant, slack=False)
        xs = knots[e]
        std.add_row(free={alpha: -1.0}, rhs=-xs[0], slack=True)
        std.add_row(free={alpha: 1.0}, rhs=xs[-1], slack=True)
        logs = np.log2(xs)
        for s in range(len(xs) - 1):
            slope = (logs[s + 1] - logs[s]) / (xs[s + 1] - xs[s])
            std.add_row(free={epi.scalar: 1.0, alpha: -slope},
                        rhs=logs[s] - slope * xs[s], slack=True)
    std.finalize()
    return std


def solve(problem: ConicProblem, tolerance: float = DEFAULT_TOLERANCE,
          max_iterations: int = DEFAULT_MAX_ITERATIONS,
          hint: np.ndarray = None) -> ConicSolution:
    """Solve the problem to the requested tolerance.

    hint, when given, carries one positive value per log epigraph: the
    expected argument value, used to center the first trust interval. The
    solver is deterministic for identical inputs.
    """
    with threadpool_limits(limits=1):
        return _solve_inner(problem, tolerance, max_iterations, hint)


def _solve_inner(problem, tolerance, max_iterations, hint):
    problem.validate()
    n_epi = len(problem.log_epigraphs)
    knotsets = []
    for e in range(n_epi):
        center = 1.0
        if hint is not None and e < len(hint) and np.isfinite(hint[e]) and hint[e] > 0:
            center = float(hint[e])
        knotsets.append(_KnotSet(center, tolerance))

    best = None
    warm = None
    for _ in range(_MAX_REFINEMENTS if n_epi else 1):
        knots = [ks.values() for ks in knotsets]
        std = _build_standard(problem, knots)
        res = _ipm(std, min(tolerance, 1e-8), max_iterations, warm=warm)
        if res["status"] == "infeasible":
            return ConicSolution(
                psd_values=[np.zeros((d, d), complex) for d, _ in problem.psd_blocks],
                scalar_values=np.zeros(problem.n_scalars),
                status="infeasible", objective=-np.inf,
                primal_residual=np.inf, dual_gap=np.inf,
                iterations=res["iterations"])
        best = (std, res)
        if not n_epi:
            break
        # refinement is needed where the epigraph binds (t sits on the chord
        # envelope) and the chord still underestimates log2 by more than the
        # tolerance, or where the argument hit the trust interval edge
        scal = res["xf"][:problem.n_scalars]
        args = res["xf"][problem.n_scalars:]
        need = []
        for e in range(n_epi):
            xs = knots[e]
            a = float(args[e])
            edge = a <= xs[0] * (1 + 1e-7) or a >= xs[-1] * (1 - 1e-7)
            a_in = min(max(a, xs[0]), xs[-1])
            logs = np.log2(xs)
            s = min(max(np.searchsorted(xs, a_in) - 1, 0), len(xs) - 2)
            slope = (logs[s + 1] - logs[s]) / (xs[s + 1] - xs[s])
            chord = logs[s] + slope * (a_in - xs[s])
            gap = float(np.log2(a_in) - chord)
            t = float(scal[problem.log_epigraphs[e].scalar])
            binding = (chord - t) <= max(100.0 * tolerance, 1e-4) * (1.0 + abs(t))
            if edge or (binding and gap > tolerance):
                need.append(e)
        if not need:
            break
        for e in need:
            knotsets[e].refine(float(args[e]))
        # previous primal point stays feasible: new chords only move upward
        warm = (res["xf"], res["Xb"])

    std, res = best
    psd_values = [(x + x.conj().T) / 2.0 for x in res["Xb"]]
    scal = res["xf"][:problem.n_scalars].copy()

    resid = 0.0
    for row in problem.linear_rows:
        v = row.form.value(psd_values, scal)
        if row.sense == "==":
            resid = max(resid, abs(v - row.rhs) / max(1.0, abs(row.rhs)))
        else:
            resid = max(resid, (v - row.rhs) / max(1.0, abs(row.rhs)))
    for epi in problem.log_epigraphs:
        a = epi.arg.value(psd_values, scal)
        if a <= 0:
            resid = max(resid, -a)
        else:
            resid = max(resid, scal[epi.scalar] - np.log2(a))
    for mat in psd_values:
        if mat.size:
            ev = np.linalg.eigvalsh(mat)[0]
            resid = max(resid, -float(ev))
    resid = max(resid, 0.0)

    objective = problem.objective.value(psd_values, scal)
    status = res["status"]
    if status == "optimal" and resid >= DEFAULT_TOLERANCE:
        status = "max_iterations"
    return ConicSolution(
        psd_values=psd_values,
        scalar_values=scal,
        status=status,
        objective=float(objective),
        primal_residual=float(resid),
        dual_gap=float(res["pobj"] - res["dobj"]),
        iterations=res["iterations"],
    )


# ---------------------------------------------------------------------------
# Debug text format (shared with the subproblem builder)
# ---------------------------------------------------------------------------

def _write_form(lines, tag, form: AffineForm):
    if form.constant:
        lines.append(f"{tag} const {float(form.constant)!r}")
    for j in sorted(form.scalars):
        lines.append(f"{tag} S {j} {float(form.scalars[j])!r}")
    for b in sorted(form.blocks):
        coeff = form.blocks[b]
        if coeff.eye:
            lines.append(f"{tag} P {b} eye {float(coeff.eye)!r}")
        for w, v in zip(coeff.weights, coeff.atoms):
            parts = " ".join(f"{float(x)!r}"
                             for pair in zip(v.real, v.imag) for x in pair)
            lines.append(f"{tag} P {b} atom {float(w)!r} {parts}")


def dump_problem(problem: ConicProblem, path):
    """Write the sparse text form: block sizes, then objective, row and
    epigraph coefficient triples."""
    lines = ["conicproblem v1", f"blocks {len(problem.psd_blocks)}"]
    for i, (d, herm) in enumerate(problem.psd_blocks):
        lines.append(f"block {i} {d} {'H' if herm else 'S'}")
    lines.append(f"scalars {problem.n_scalars}")
    _write_form(lines, "obj", problem.objective)
    for r, row in enumerate(problem.linear_rows):
        sense = "le" if row.sense == "<=" else "eq"
        lines.append(f"row {r} {sense} {row.rhs!r}")
        _write_form(lines, f"row {r}", row.form)
    for e, epi in enumerate(problem.log_epigraphs):
        lines.append(f"epi {e} scalar {epi.scalar}")
        _write_form(lines, f"epi {e}", epi.arg)
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_problem(path) -> ConicProblem:
    """Parse the text form written by dump_problem."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "conicproblem v1":
        raise ConicError("not a conic problem dump")
    blocks = []
    n_scalars = 0
    objective = AffineForm()
    rows = {}
    row_meta = {}
    epis = {}
    epi_meta = {}

    def parse_form_entry(form, parts):
        if parts[0] == "const":
            form.constant = float(parts[1])
        elif parts[0] == "S":
            form.scalars[int(parts[1])] = float(parts[2])
        elif parts[0] == "P":
            b = int(parts[1])
            coeff = form.blocks.get(b)
            if coeff is None:
                d = blocks[b][0]
                coeff = BlockCoeff(atoms=np.zeros((0, d), complex),
                                   weights=np.zeros(0), eye=0.0)
                form.blocks[b] = coeff
            if parts[2] == "eye":
                coeff.eye += float(parts[3])
            else:
                w = float(parts[3])
                vals = np.array([float(x) for x in parts[4:]])
                v = vals[0::2] + 1j * vals[1::2]
                form.blocks[b] = BlockCoeff(
                    atoms=np.vstack([coeff.atoms, v[None, :]]),
                    weights=np.append(coeff.weights, w),
                    eye=coeff.eye)
        else:
            raise ConicError(f"bad form entry: {parts}")

    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "end":
            break
        if parts[0] == "blocks":
            continue
        if parts[0] == "block":
            blocks.append((int(parts[2]), parts[3] == "H"))
        elif parts[0] == "scalars":
            n_scalars = int(parts[1])
        elif parts[0] == "obj":
            parse_form_entry(objective, parts[1:])
        elif parts[0] == "row":
            r = int(parts[1])
            if parts[2] in ("le", "eq"):
                row_meta[r] = ("<=" if parts[2] == "le" else "==", float(parts[3]))
                rows.setdefault(r, AffineForm())
            else:
                parse_form_entry(rows.setdefault(r, AffineForm()), parts[2:])
        elif parts[0] == "epi":
            e = int(parts[1])
            if parts[2] == "scalar":
                epi_meta[e] = int(parts[3])
                epis.setdefault(e, AffineForm())
            else:
                parse_form_entry(epis.setdefault(e, AffineForm()), parts[2:])
        else:
            raise ConicError(f"bad line: {ln}")

    linear_rows = [LinearRow(form=rows[r], sense=row_meta[r][0], rhs=row_meta[r][1])
                   for r in sorted(rows)]
    log_epigraphs = [LogEpigraph(scalar=epi_meta[e], arg=epis[e]) for e in sorted(epis)]
    return ConicProblem(psd_blocks=blocks, n_scalars=n_scalars, objective=objective,
                        linear_rows=linear_rows, log_epigraphs=log_epigraphs)
