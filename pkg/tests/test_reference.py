"""Fine-grid reference: truncation, Richardson, matching, rate fits."""

import numpy as np
import pytest

from homspec.errors import DegenerateFit, GridTooCoarse
from homspec.expansion import simple_recursion
from homspec.hermite import MacroBasis, default_sigma, solve_spectrum
from homspec.reference import (
    FineGrid,
    fit_rate,
    match_and_compare,
    solve_Leps,
    truncation_radius,
    validate_radius,
)
from homspec.slowpoly import SlowPolynomial
from homspec.torus import CoefficientField, TorusGrid

TWO_PI = 2.0 * np.pi


def w1():
    return SlowPolynomial(1, {(2,): 1.0})


def coeff_identity_1d():
    return CoefficientField.from_isotropic(
        TorusGrid(1, 16), lambda y: np.ones_like(y)
    )


class TestTruncationRadius:
    def test_values(self):
        assert truncation_radius(1.0) == pytest.approx(3.0)
        assert truncation_radius(4.0) == pytest.approx(6.0)
        assert truncation_radius(4.0, lambda_minus=4.0) == pytest.approx(3.0)

    def test_radius_validation_converged(self):
        # R = 6 for the unit oscillator: doubling the box moves lambda_1
        # by far less than 1e-9 relative
        c = coeff_identity_1d()
        grid = FineGrid(1, 6.0, 1.0 / 128)
        shift = validate_radius(c, w1(), 0.25, grid, 2)
        assert shift < 1e-9

    def test_small_radius_detected(self):
        # R = 3 is NOT converged for the oscillator: the Dirichlet shift is
        # around 1e-4, which the doubling check must expose
        c = coeff_identity_1d()
        grid = FineGrid(1, 3.0, 1.0 / 128)
        shift = validate_radius(c, w1(), 0.25, grid, 1)
        assert shift > 1e-7


class TestSolve1D:
    def test_oscillator_richardson(self):
        c = coeff_identity_1d()
        grid = FineGrid(1, 7.0, 1.0 / 64)
        ref = solve_Leps(c, w1(), 0.5, grid, 3)
        assert abs(ref.eigenvalues[0] - 1.0) < 1e-7
        assert np.allclose(ref.eigenvalues, [1.0, 3.0, 5.0], atol=1e-6)
        # Richardson beats both raw grids
        assert abs(ref.eigenvalues[0] - 1.0) < abs(ref.eigenvalues_h[0] - 1.0)
        assert ref.error_estimates[0] > 0

    def test_discretization_control(self):
        # halving h shrinks the raw eigenvalue error by about 4 (second order)
        c = coeff_identity_1d()
        e1 = abs(solve_Leps(c, w1(), 0.5, FineGrid(1, 7.0, 1 / 32), 1,
                            keep_vectors=False).eigenvalues_h[0] - 1.0)
        e2 = abs(solve_Leps(c, w1(), 0.5, FineGrid(1, 7.0, 1 / 64), 1,
                            keep_vectors=False).eigenvalues_h[0] - 1.0)
        assert e1 / e2 == pytest.approx(4.0, rel=0.05)

    def test_grid_too_coarse(self):
        c = coeff_identity_1d()
        with pytest.raises(GridTooCoarse):
            solve_Leps(c, w1(), 0.01, FineGrid(1, 6.0, 1.0 / 128), 1)

    def test_oscillating_coefficient_floor(self):
        # with exact harmonic cell averages the Richardson floor for the
        # oscillating 1D problem sits far below the eps^2 signal
        grid1 = TorusGrid(1, 128)
        c = CoefficientField.from_isotropic(
            grid1, lambda y: 2.0 + np.cos(TWO_PI * y)
        )
        eps = 1.0 / 16
        fg = FineGrid(1, 7.0, eps / 16)
        ref = solve_Leps(c, w1(), eps, fg, 1)
        lam0 = 3.0 ** 0.25
        # zeroth-order envelope: |lam_eps - lam0| <= C eps lam0^{3/2}
        assert abs(ref.eigenvalues[0] - lam0) < 0.5 * eps * lam0 ** 1.5
        # the h^2 term removed by Richardson is small and the eps^2 signal
        # (about 3.6e-6 here) sits well above what remains
        assert ref.error_estimates[0] < 1e-5
        assert abs(ref.eigenvalues[0] - lam0) > 10 * ref.error_estimates[0]


class TestSolve2D:
    def test_separable_matches_sparse(self):
        # the Kronecker-sum fast path and the generic shift-invert path
        # solve the same discrete operator
        grid2 = TorusGrid(2, 32)
        c = CoefficientField.from_diagonal(grid2, [
            lambda y1, y2: (2.0 + np.cos(TWO_PI * y1)) / np.sqrt(3.0),
            lambda y1, y2: np.ones_like(y1),
        ])
        W = SlowPolynomial(2, {(2, 0): 1.0, (0, 2): 1.0})
        eps = 1.0 / 4
        fg = FineGrid(2, 4.0, eps / 8)
        sep = solve_Leps(c, W, eps, fg, 4, keep_vectors=False, refine=False)
        from homspec.reference import _solve_2d_sparse
        vals, _ = _solve_2d_sparse(c, W, eps, fg, 4, 2.0)
        assert sep.diagnostics["path"] == "separable"
        assert np.max(np.abs(sep.eigenvalues_h - vals)) < 1e-9

    def test_oscillator_2d(self):
        grid2 = TorusGrid(2, 16)
        c = CoefficientField.from_diagonal(grid2, [
            lambda y1, y2: np.ones_like(y1),
            lambda y1, y2: np.ones_like(y1),
        ])
        W = SlowPolynomial(2, {(2, 0): 1.0, (0, 2): 1.0})
        fg = FineGrid(2, 6.0, 1.0 / 24)
        ref = solve_Leps(c, W, 0.5, fg, 3, keep_vectors=False)
        assert np.allclose(ref.eigenvalues, [2.0, 4.0, 4.0], atol=1e-6)


@pytest.fixture(scope="module")
def branch_1d():
    grid = TorusGrid(1, 128)
    coeff = CoefficientField.from_isotropic(
        grid, lambda y: 2.0 + np.cos(TWO_PI * y)
    )
    W = w1()
    abar = np.array([[np.sqrt(3.0)]])
    basis = MacroBasis(1, 48, default_sigma(abar, W))
    spec = solve_spectrum(abar, W, basis, 5)
    return coeff, W, simple_recursion(coeff, W, spec, 1, 3, torus_tol=1e-13)


class TestMatching:

    def test_identity_coefficient_floor(self):
        c = coeff_identity_1d()
        W = w1()
        basis = MacroBasis(1, 40, 1.0)
        spec = solve_spectrum(np.array([[1.0]]), W, basis, 4)
        br = simple_recursion(c, W, spec, 1, 2)
        fg = FineGrid(1, 7.0, 1.0 / 128)
        ref = solve_Leps(c, W, 0.5, fg, 2)
        rows = match_and_compare(ref, br, 0.5)
        assert rows[0].eig_err < 1e-9            # discretization floor only
        assert rows[0].l2_err < 1e-5
        assert rows[0].h1_err < 1e-3             # central-difference floor

    def test_eigenvalue_error_second_order(self, branch_1d):
        coeff, W, br = branch_1d
        errs = []
        for eps in (1 / 8, 1 / 16, 1 / 32):
            fg = FineGrid(1, 7.0, eps / 16)
            ref = solve_Leps(coeff, W, eps, fg, 1)
            rows = match_and_compare(ref, br, eps, P=0, with_h1=False)
            errs.append((eps, rows[0].eig_err))
        slope, _, r2 = fit_rate(errs)
        assert 1.9 < slope < 2.2
        assert r2 > 0.99

    def test_l2_error_second_order(self, branch_1d):
        coeff, W, br = branch_1d
        errs = []
        for eps in (1 / 8, 1 / 16, 1 / 32):
            fg = FineGrid(1, 7.0, eps / 16)
            ref = solve_Leps(coeff, W, eps, fg, 1)
            rows = match_and_compare(ref, br, eps, P=1, with_h1=False)
            errs.append((eps, rows[0].l2_err))
        slope, _, _ = fit_rate(errs)
        assert slope > 1.7


class TestFitRate:
    def test_exact_square(self):
        pts = [(e, e ** 2) for e in (0.1, 0.05, 0.025, 0.0125)]
        slope, _, r2 = fit_rate(pts)
        assert slope == pytest.approx(2.0, abs=1e-12)
        assert r2 == pytest.approx(1.0, abs=1e-12)

    def test_linear(self):
        pts = [(e, 3 * e) for e in (0.1, 0.05, 0.025)]
        slope, intercept, _ = fit_rate(pts)
        assert slope == pytest.approx(1.0, abs=1e-12)
        assert intercept == pytest.approx(np.log(3.0), abs=1e-12)

    def test_too_few(self):
        with pytest.raises(DegenerateFit):
            fit_rate([(0.1, 1e-3), (0.05, 2.5e-4)])

    def test_floor_detected(self):
        pts = [(0.1, 1e-3, 1e-9), (0.05, 2.5e-4, 1e-9), (0.025, 1e-9, 1e-9)]
        with pytest.raises(DegenerateFit):
            fit_rate(pts)
