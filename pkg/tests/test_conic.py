"""Solver checks against closed-form oracles."""

import numpy as np
import pytest

from cranfh import conic
from cranfh.conic import (AffineForm, BlockCoeff, ConicProblem, LinearRow,
                          LogEpigraph)


def eig_sdp(c_matrix):
    """max Tr(CX) s.t. Tr(X)=1, X >= 0."""
    d = c_matrix.shape[0]
    return ConicProblem(
        psd_blocks=[(d, True)], n_scalars=0,
        objective=AffineForm(blocks={0: BlockCoeff.from_matrix(c_matrix)}),
        linear_rows=[LinearRow(
            AffineForm(blocks={0: BlockCoeff.from_identity(d, 1.0)}), "==", 1.0)],
        log_epigraphs=[])


def random_hermitian(rng, d):
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return (a + a.conj().T) / 2.0


def test_eigenvalue_sdp_matches_eigh():
    rng = np.random.default_rng(7)
    c = random_hermitian(rng, 3)
    sol = conic.solve(eig_sdp(c))
    assert sol.status == "optimal"
    assert abs(sol.objective - np.linalg.eigvalsh(c)[-1]) < 1e-6


def test_eigenvalue_sdp_randomized():
    rng = np.random.default_rng(11)
    for _ in range(20):
        d = int(rng.integers(2, 12))
        c = random_hermitian(rng, d)
        sol = conic.solve(eig_sdp(c))
        assert sol.status == "optimal"
        assert abs(sol.objective - np.linalg.eigvalsh(c)[-1]) < 1e-6


def test_log_epigraph_monotone():
    # max t s.t. t <= log2(x), 0 <= x <= 8  ->  t = 3 at x = 8
    p = ConicProblem(
        psd_blocks=[], n_scalars=2,
        objective=AffineForm(scalars={0: 1.0}),
        linear_rows=[
            LinearRow(AffineForm(scalars={1: 1.0}), "<=", 8.0),
            LinearRow(AffineForm(scalars={1: -1.0}), "<=", 0.0),
        ],
        log_epigraphs=[LogEpigraph(scalar=0, arg=AffineForm(scalars={1: 1.0}))])
    sol = conic.solve(p)
    assert sol.status == "optimal"
    assert abs(sol.objective - 3.0) < 1e-6
    assert abs(sol.scalar_values[1] - 8.0) < 1e-5


def test_lp_sanity():
    p = ConicProblem(
        psd_blocks=[], n_scalars=1,
        objective=AffineForm(scalars={0: 1.0}),
        linear_rows=[
            LinearRow(AffineForm(scalars={0: 1.0}), "<=", 1.0),
            LinearRow(AffineForm(scalars={0: 1.0}), "<=", 2.0),
        ],
        log_epigraphs=[])
    sol = conic.solve(p)
    assert sol.status == "optimal"
    assert abs(sol.objective - 1.0) < 1e-7


def test_row_scaling_invariance():
    rng = np.random.default_rng(3)
    c = random_hermitian(rng, 4)
    base = conic.solve(eig_sdp(c))
    scaled = eig_sdp(c)
    row = scaled.linear_rows[0]
    form = AffineForm(blocks={0: BlockCoeff.from_identity(4, 50.0)})
    scaled.linear_rows = [LinearRow(form, "==", 50.0)]
    sol = conic.solve(scaled)
    assert abs(sol.objective - base.objective) < 1e-6


def test_weak_duality_gap():
    rng = np.random.default_rng(5)
    for _ in range(5):
        c = random_hermitian(rng, 5)
        sol = conic.solve(eig_sdp(c))
        assert sol.dual_gap >= -1e-6


def test_infeasible_detected():
    # x >= 0 and x <= -1
    p = ConicProblem(
        psd_blocks=[], n_scalars=0,
        objective=AffineForm(),
        linear_rows=[
            LinearRow(AffineForm(scalars={}), "<=", 1.0),
        ],
        log_epigraphs=[])
    # use an explicit nonneg-style conflict through a scalar
    p = ConicProblem(
        psd_blocks=[], n_scalars=1,
        objective=AffineForm(scalars={0: 1.0}),
        linear_rows=[
            LinearRow(AffineForm(scalars={0: 1.0}), "<=", -1.0),
            LinearRow(AffineForm(scalars={0: -1.0}), "<=", 0.0),
        ],
        log_epigraphs=[])
    sol = conic.solve(p)
    assert sol.status == "infeasible"


def test_solution_flags_psd_and_residual():
    rng = np.random.default_rng(9)
    c = random_hermitian(rng, 6)
    sol = conic.solve(eig_sdp(c))
    assert sol.primal_residual < 1e-6
    assert np.linalg.eigvalsh(sol.psd_values[0])[0] > -1e-8
    assert abs(np.trace(sol.psd_values[0]).real - 1.0) < 1e-6


def test_validation_rejects_bad_problems():
    with pytest.raises(conic.ConicError):
        p = ConicProblem(psd_blocks=[(3, True)], n_scalars=0,
                         objective=AffineForm(scalars={4: 1.0}),
                         linear_rows=[], log_epigraphs=[])
        p.validate()
    with pytest.raises(conic.ConicError):
        p = ConicProblem(psd_blocks=[], n_scalars=1,
                         objective=AffineForm(scalars={0: np.nan}),
                         linear_rows=[], log_epigraphs=[])
        p.validate()


def test_dump_load_roundtrip(tmp_path):
    rng = np.random.default_rng(13)
    c = random_hermitian(rng, 3)
    p = eig_sdp(c)
    p.log_epigraphs = [LogEpigraph(
        scalar=0, arg=AffineForm(blocks={0: BlockCoeff.from_identity(3, 2.0)},
                                 constant=0.5))]
    p.n_scalars = 1
    p.objective.scalars[0] = 0.25
    path = tmp_path / "problem.txt"
    conic.dump_problem(p, path)
    q = conic.load_problem(path)
    assert q.n_scalars == p.n_scalars
    assert q.psd_blocks == [(3, True)]
    assert abs(q.objective.scalars[0] - 0.25) < 1e-15
    pm = p.objective.blocks[0].matrix(3)
    qm = q.objective.blocks[0].matrix(3)
    assert np.allclose(pm, qm, atol=1e-12)
    s1 = conic.solve(p)
    s2 = conic.solve(q)
    assert abs(s1.objective - s2.objective) < 1e-7
