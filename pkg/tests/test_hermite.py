"""Macroscopic Hermite space: oscillator oracles, resolvent, clustering."""

import numpy as np
import pytest

from homspec.errors import (
    GapUnresolved,
    NonConfining,
    NotOrthogonal,
    TruncationUnsafe,
)
from homspec.hermite import (
    MacroBasis,
    MacroFunction,
    assemble_L0,
    default_sigma,
    derivative_op,
    eigensolve,
    poly_multiply_op,
    quadrature_for,
    resolvent_solve,
    solve_spectrum,
    spectral_gap,
)
from homspec.slowpoly import SlowPolynomial


def w_iso(dim):
    if dim == 1:
        return SlowPolynomial(1, {(2,): 1.0})
    return SlowPolynomial(2, {(2, 0): 1.0, (0, 2): 1.0})


class TestAssembly:
    def test_oscillator_diagonal(self):
        # a = I, W = x^2, sigma = 1: matrix is exactly diag(2n+1)
        basis = MacroBasis(1, 16, 1.0)
        L = assemble_L0(np.array([[1.0]]), w_iso(1), basis)
        expect = np.diag(2.0 * np.arange(16) + 1.0)
        assert np.max(np.abs(L - expect)) < 1e-13

    def test_scaled_oscillator_diagonal(self):
        # abar = sqrt(3), sigma = 3^{1/8}: eigenvalues (2n+1) 3^{1/4}, exactly
        basis = MacroBasis(1, 16, 3.0 ** 0.125)
        L = assemble_L0(np.array([[np.sqrt(3.0)]]), w_iso(1), basis)
        expect = np.diag((2.0 * np.arange(16) + 1.0) * 3.0 ** 0.25)
        assert np.max(np.abs(L - expect)) < 1e-12

    def test_bandedness(self):
        # quadratic W: bandwidth 2 per axis
        basis = MacroBasis(1, 24, 0.9)
        W = SlowPolynomial(1, {(2,): 1.3, (1,): 0.2, (0,): 0.1})
        L = assemble_L0(np.array([[2.0]]), W, basis)
        for k in range(3, 24):
            assert np.max(np.abs(np.diag(L, k))) < 1e-14

    def test_symmetric(self):
        basis = MacroBasis(2, 10, 1.1)
        W = SlowPolynomial(2, {(2, 0): 1.0, (0, 2): 2.0, (1, 1): 0.3})
        L = assemble_L0(np.array([[1.5, 0.2], [0.2, 1.0]]), W, basis)
        assert np.max(np.abs(L - L.T)) == 0.0

    def test_nonconfining_rejected(self):
        basis = MacroBasis(1, 8, 1.0)
        with pytest.raises(NonConfining):
            assemble_L0(np.array([[1.0]]), SlowPolynomial(1, {(4,): 1.0}), basis)
        with pytest.raises(NonConfining):
            assemble_L0(np.array([[1.0]]),
                        SlowPolynomial(1, {(2,): -1.0}), basis)

    def test_default_sigma(self):
        assert default_sigma(np.array([[np.sqrt(3.0)]]), w_iso(1)) \
            == pytest.approx(3.0 ** 0.125, rel=1e-14)
        assert default_sigma(np.eye(2), w_iso(2)) == pytest.approx(1.0)


class TestEigensolve:
    def test_oscillator_1d(self):
        basis = MacroBasis(1, 64, 1.0)
        spec = solve_spectrum(np.array([[1.0]]), w_iso(1), basis, 6)
        assert np.allclose(spec.eigenvalues, [1, 3, 5, 7, 9, 11], rtol=1e-12)

    def test_oscillator_2d_degeneracies(self):
        basis = MacroBasis(2, 16, 1.0)
        spec = solve_spectrum(np.eye(2), w_iso(2), basis, 6)
        assert np.allclose(spec.eigenvalues, [2, 4, 4, 6, 6, 6], rtol=1e-11)
        assert spec.clusters == [(0, 1), (1, 3), (3, 6)]

    def test_scaling_covariance(self):
        # eigensolve with (c I, |x|^2) returns sqrt(c) times the oscillator
        for c in (1.0, np.sqrt(3.0), 2.0):
            abar = np.array([[c]])
            basis = MacroBasis(1, 48, default_sigma(abar, w_iso(1)))
            spec = solve_spectrum(abar, w_iso(1), basis, 5)
            expect = np.sqrt(c) * (2.0 * np.arange(5) + 1.0)
            assert np.allclose(spec.eigenvalues, expect, rtol=1e-9)

    def test_orthonormality(self):
        basis = MacroBasis(2, 12, 1.0)
        spec = solve_spectrum(np.eye(2), w_iso(2), basis, 8)
        G = np.array([[spec.eigenfunctions[i].inner(spec.eigenfunctions[j])
                       for j in range(8)] for i in range(8)])
        assert np.max(np.abs(G - np.eye(8))) < 1e-10

    def test_residual(self):
        basis = MacroBasis(1, 40, 1.0)
        L = assemble_L0(np.array([[1.0]]), w_iso(1), basis)
        spec = eigensolve(L, 5, basis)
        for j in range(1, 6):
            phi = spec.eigenfunction(j)
            r = L @ phi.coeffs - spec.eigenvalue(j) * phi.coeffs
            assert np.linalg.norm(r) < 1e-8 * spec.eigenvalue(j)

    def test_count_guard(self):
        basis = MacroBasis(1, 16, 1.0)
        L = assemble_L0(np.array([[1.0]]), w_iso(1), basis)
        with pytest.raises(TruncationUnsafe):
            eigensolve(L, 8, basis)

    def test_self_convergence_guard(self):
        # tiny basis with many requested modes trips the doubled-basis check
        basis = MacroBasis(1, 16, 1.0)
        W = SlowPolynomial(1, {(2,): 1.0, (1,): 0.9})
        spec = solve_spectrum(np.array([[1.0]]), W, basis, 4, validate=True)
        assert spec.count == 4
        with pytest.raises(TruncationUnsafe):
            # sigma badly mismatched: low modes are not converged at N=16
            solve_spectrum(np.array([[1.0]]), W, MacroBasis(1, 16, 6.0), 4,
                           validate=True)


class TestGapAndResolvent:
    def setup_method(self):
        self.basis = MacroBasis(1, 48, 1.0)
        L = assemble_L0(np.array([[1.0]]), w_iso(1), self.basis)
        self.spec = eigensolve(L, 8, self.basis)

    def test_gap_simple(self):
        assert spectral_gap(self.spec, 1) == pytest.approx(2.0, rel=1e-12)
        assert spectral_gap(self.spec, 3) == pytest.approx(2.0, rel=1e-12)

    def test_gap_degenerate_cluster(self):
        basis = MacroBasis(2, 14, 1.0)
        spec = solve_spectrum(np.eye(2), w_iso(2), basis, 6)
        # the double eigenvalue 4: its own copies do not count as gap 0
        assert spectral_gap(spec, 2) == pytest.approx(2.0, rel=1e-9)

    def test_gap_unresolved(self):
        with pytest.raises(GapUnresolved):
            spectral_gap(self.spec, 8)

    def test_gap_scaled_oscillator(self):
        # abar = sqrt(3): gaps scale by 3^{1/4}
        abar = np.array([[np.sqrt(3.0)]])
        basis = MacroBasis(1, 48, default_sigma(abar, w_iso(1)))
        spec = solve_spectrum(abar, w_iso(1), basis, 5)
        assert spectral_gap(spec, 1) == pytest.approx(2 * 3 ** 0.25, rel=1e-9)

    def test_resolvent_zero(self):
        u = resolvent_solve(self.spec, 1, MacroFunction.zero(self.basis))
        assert u.norm() == 0.0

    def test_resolvent_single_mode(self):
        # f = phi_2, lambda = lambda_1: u = phi_2 / (lambda_2 - lambda_1)
        f = self.spec.eigenfunction(2)
        u = resolvent_solve(self.spec, 1, f)
        diff = u - 0.5 * f
        assert diff.norm() < 1e-12

    def test_resolvent_contract(self):
        # random f orthogonal to the eigenspace: residual and norm bound
        rng = np.random.default_rng(5)
        f = MacroFunction(self.basis, rng.standard_normal(self.basis.total))
        phi = self.spec.eigenfunction(1)
        f = f - phi.inner(f) * phi
        u = resolvent_solve(self.spec, 1, f)
        lam = self.spec.eigenvalue(1)
        r = self.spec.matrix @ u.coeffs - lam * u.coeffs - f.coeffs
        r -= phi.coeffs * np.dot(phi.coeffs, r)
        assert np.linalg.norm(r) < 1e-8 * f.norm()
        gamma = spectral_gap(self.spec, 1)
        assert u.norm() <= (1 + 1e-6) * f.norm() / gamma
        assert abs(u.inner(phi)) < 1e-12 * f.norm()

    def test_resolvent_rejects_nonorthogonal(self):
        with pytest.raises(NotOrthogonal):
            resolvent_solve(self.spec, 1, self.spec.eigenfunction(1))


class TestOperatorsAndQuadrature:
    def test_multiply_by_one(self):
        basis = MacroBasis(1, 12, 1.3)
        M = poly_multiply_op(SlowPolynomial.constant(1, 1.0), basis)
        assert np.array_equal(M, np.eye(12))

    def test_degree_cap(self):
        from homspec.errors import DegreeCapExceeded
        basis = MacroBasis(1, 12, 1.0)
        big = SlowPolynomial(1, {(9,): 1.0})
        with pytest.raises(DegreeCapExceeded):
            poly_multiply_op(big, basis)

    def test_derivative_twice_matches_second_derivative(self):
        # d/dx applied twice vs the exact kinetic block, away from the top rows
        basis = MacroBasis(1, 30, 1.0)
        D = derivative_op(0, basis)
        L = assemble_L0(np.array([[1.0]]), w_iso(1), basis)
        X2 = poly_multiply_op(SlowPolynomial(1, {(2,): 1.0}), basis)
        K = L - X2                      # exact <psi', psi'> block
        DtD = D.T @ D
        assert np.max(np.abs((K - DtD)[:28, :28])) < 1e-13

    def test_ground_state_second_moment(self):
        # <phi_0, x^2 phi_0> = 1/2 for the unit oscillator ground state
        basis = MacroBasis(1, 32, 1.0)
        spec = solve_spectrum(np.array([[1.0]]), w_iso(1), basis, 1)
        phi = spec.eigenfunction(1)
        quad = quadrature_for(basis)
        v = quad.values(phi)
        x2 = quad.points()[:, 0] ** 2
        assert quad.integrate(v, v, x2) == pytest.approx(0.5, rel=1e-12)

    def test_quadrature_orthonormality(self):
        basis = MacroBasis(2, 10, 0.8)
        quad = quadrature_for(basis)
        f = MacroFunction(basis, np.eye(basis.total)[7])
        g = MacroFunction(basis, np.eye(basis.total)[7])
        assert quad.integrate(quad.values(f), quad.values(g)) \
            == pytest.approx(1.0, rel=1e-12)

    def test_derivative_values_exact(self):
        # evaluate() with alpha uses extended coefficients: exact for psi_n'
        basis = MacroBasis(1, 10, 1.0)
        c = np.zeros(10)
        c[9] = 1.0                      # top retained mode
        f = MacroFunction(basis, c)
        pts = np.linspace(-3, 3, 7).reshape(-1, 1)
        from homspec.hermite import hermite_function_values
        B = hermite_function_values(pts[:, 0], 11, 1.0)
        exact = np.sqrt(9 / 2) * B[:, 8] - np.sqrt(10 / 2) * B[:, 10]
        assert np.max(np.abs(f.evaluate(pts, alpha=(1,)) - exact)) < 1e-12

    def test_gaussian_integral_of_w(self):
        # int (x^2) phi_0^2 = 1/2 again but through a SlowPolynomial eval
        basis = MacroBasis(1, 16, 1.0)
        quad = quadrature_for(basis)
        phi = MacroFunction(basis, np.eye(16)[0])
        w = SlowPolynomial(1, {(2,): 1.0})
        val = quad.integrate(quad.values(phi), quad.values(phi),
                             w(quad.points()))
        assert val == pytest.approx(0.5, rel=1e-13)
