import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import dense_solve, operator_matrix
from stochhom.ensembles import (CoefficientField, antisymmetric_perturbation, sample_field,
                                shift_field, two_state_nonsymmetric)
from stochhom.fourier import green_constant
from stochhom.lattice import TorusGrid, gradient
from stochhom.moments import energy_defect
from stochhom.solver import (CorrectorProblem, OperatorHandle, SolverError, apply_operator, assemble, default_size,
                             solve, solve_corrector, solve_green)


def random_field(d=2, L=4, seed=0, spec=None):
    return sample_field(spec or antisymmetric_perturbation(d), TorusGrid(d, L), seed)


def test_operator_on_constants():
    a = random_field()
    h = OperatorHandle(a, 4.0)
    np.testing.assert_allclose(apply_operator(h, np.full((4, 4), 3.0)), 0.75, atol=1e-14)


def test_operator_stencil_1d():
    a = CoefficientField.constant(TorusGrid(1, 4), np.eye(1), 1.0)
    out = apply_operator(OperatorHandle(a, 1.0), np.array([1.0, 0, 0, 0]))
    assert out.tolist() == [3, -1, 0, -1]


def test_operator_matches_loop_assembly(rng):
    a = random_field(seed=2)
    u = rng.standard_normal((4, 4))
    A = operator_matrix(a.values, 5.0)
    np.testing.assert_allclose(apply_operator(OperatorHandle(a, 5.0), u).ravel(), A @ u.ravel(), atol=1e-12)
    np.testing.assert_allclose(assemble(OperatorHandle(a, 5.0)).toarray(), A, atol=1e-14)


@given(st.integers(0, 10_000), st.floats(1.0, 500.0))
def test_coercivity(seed, T):
    a = random_field(seed=seed)
    u = np.random.default_rng(seed).standard_normal((4, 4))
    form = float((u * apply_operator(OperatorHandle(a, T), u)).sum())
    assert form >= (u ** 2).sum() / T + a.lam * (gradient(u) ** 2).sum() - 1e-10


def test_zero_rhs():
    rep = solve(OperatorHandle(random_field(), 3.0), np.zeros((4, 4)))
    assert np.all(rep.solution == 0) and rep.residual == 0


def test_green_constant_matches_fft_closed_form():
    g = TorusGrid(2, 16)
    a = CoefficientField.constant(g, np.eye(2), 1.0)
    np.testing.assert_allclose(solve_green(a, 20.0).solution, green_constant(g, 20.0), atol=1e-9)


def test_iterative_matches_dense_3d(rng):
    a = random_field(d=3, L=4, seed=4)
    f = rng.standard_normal((4, 4, 4))
    u = solve(OperatorHandle(a, 7.0), f, tol=1e-12).solution
    np.testing.assert_allclose(u, dense_solve(a.values, 7.0, f), atol=1e-8)
    np.testing.assert_allclose(solve(OperatorHandle(a, 7.0), f, method="dense").solution, u, atol=1e-8)


def test_uniqueness_from_random_starts(rng):
    a = random_field(seed=1)
    f = rng.standard_normal((4, 4))
    h = OperatorHandle(a, 10.0)
    np.testing.assert_allclose(solve(h, f, seed=1).solution, solve(h, f, seed=2).solution, atol=1e-8)


def test_residual_contract(rng):
    a = random_field(L=12, seed=3)
    f = rng.standard_normal((12, 12))
    for tol in (1e-6, 1e-10):
        rep = solve(OperatorHandle(a, 50.0), f, tol=tol)
        assert rep.residual <= tol
        true = np.linalg.norm(apply_operator(OperatorHandle(a, 50.0), rep.solution) - f) / np.linalg.norm(f)
        assert true <= tol


def test_non_convergence_is_reported(rng):
    with pytest.raises(SolverError) as exc:
        solve(OperatorHandle(random_field(L=12), 1e4), rng.standard_normal((12, 12)), tol=1e-14, maxiter=1)
    assert exc.value.residual > 1e-14


def test_invalid_inputs():
    with pytest.raises(ValueError):
        OperatorHandle(random_field(), 0.0)
    with pytest.raises(ValueError):
        solve(OperatorHandle(random_field(), 1.0), np.ones((3, 3)))
    with pytest.raises(ValueError):
        CorrectorProblem((1.0,), 4.0, 0.5, TorusGrid(2, 4))
    with pytest.raises(ValueError):
        CorrectorProblem((1.0, 0.0), 0.5, 0.5, TorusGrid(2, 4))


def test_constant_coefficients_give_zero_corrector():
    g = TorusGrid(2, 8)
    a = CoefficientField.constant(g, [[0.6, -0.3], [0.3, 0.6]], 0.5)
    rep = solve_corrector(CorrectorProblem((1.0, 2.0), 16.0, 0.5, g), a)
    assert np.all(rep.solution == 0)


def test_energy_identity():
    g = TorusGrid(2, 8)
    a = sample_field(two_state_nonsymmetric(2), g, 0)
    pb = CorrectorProblem((1.0, -0.5), 16.0, 0.25, g)
    phi = solve_corrector(pb, a).solution
    assert energy_defect(a, phi, pb.xi, pb.T) <= 1e-8


def test_row_sum_symmetry_stationarity(rng):
    g = TorusGrid(2, 8)
    a = sample_field(two_state_nonsymmetric(2), g, 7)
    T = 16.0
    G = {y: solve_green(a, T, y).solution for y in [(0, 0), (3, 5)]}
    Gt = {y: solve_green(a.transpose(), T, y).solution for y in [(0, 0), (3, 5)]}
    for y in G:
        assert G[y].sum() == pytest.approx(T, abs=1e-8 * T)
    # G(a; x, y) = G(a^t; y, x)
    assert G[(3, 5)][0, 0] == pytest.approx(Gt[(0, 0)][3, 5], abs=1e-8)
    z = tuple(int(c) for c in rng.integers(0, 8, 2))
    Gs = solve_green(shift_field(a, z), T, (0, 0)).solution
    np.testing.assert_allclose(np.roll(G[(3, 5)], (-3, -5), axis=(0, 1)),
                               solve_green(shift_field(a, (3, 5)), T).solution, atol=1e-8)
    assert Gs.sum() == pytest.approx(T, abs=1e-8 * T)


def test_default_size():
    assert default_size(16) == 16 and default_size(64) == 32 and default_size(1024) == 128
    assert default_size(17) == 20
