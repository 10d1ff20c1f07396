"""Classical corrector suite: laminate oracles, cyclic identity, bracketing."""

import numpy as np

from homspec.classical import (
    build_first_order,
    build_suite,
    cyclic_check,
    suite_diagnostics,
)
from homspec.torus import CoefficientField, TorusGrid, grad_y

TWO_PI = 2.0 * np.pi


def coeff_1d(n=256):
    return CoefficientField.from_isotropic(
        TorusGrid(1, n), lambda y: 2.0 + np.cos(TWO_PI * y)
    )


def random_trig_coeff(rng, grid, amp=0.3):
    """Smooth SPD coefficient: base + a few low trigonometric modes."""
    d = grid.dim

    def entry(seed_shift, base):
        c = rng.uniform(-amp, amp, size=(2, 2))
        s = rng.uniform(-amp, amp, size=(2, 2))

        def fn(*ys):
            out = np.full_like(ys[0], base)
            for p in range(1, 3):
                for q in range(1, 3):
                    phase = TWO_PI * (p * ys[0] + (q * ys[1] if d == 2 else 0))
                    out = out + c[p - 1, q - 1] * np.cos(phase) \
                        + s[p - 1, q - 1] * np.sin(phase)
            return out
        return fn

    if d == 1:
        return CoefficientField.from_isotropic(grid, entry(0, 2.0))
    off = entry(1, 0.0)
    return CoefficientField.from_matrix(grid, [
        [entry(0, 2.5), off],
        [off, entry(2, 2.5)],
    ])


class TestFirstOrder:
    def test_identity_coefficient(self):
        c = CoefficientField.identity(TorusGrid(2, 16))
        suite = build_first_order(c)
        assert np.allclose(suite.abar, np.eye(2), atol=1e-13)
        assert max(f.l2_norm() for f in suite.chi1) < 1e-13
        assert max(f.l2_norm() for f in suite.g) < 1e-12
        assert max(f.l2_norm() for f in suite.s1) < 1e-12

    def test_1d_harmonic_mean(self):
        suite = build_first_order(coeff_1d(), tol=1e-13)
        assert abs(suite.abar[0, 0] - np.sqrt(3.0)) < 1e-12

    def test_1d_corrector_closed_form(self):
        suite = build_first_order(coeff_1d(), tol=1e-13)
        du = grad_y(suite.chi1[0]).component(0)
        a = suite.coeff.a.values[0, 0]
        err = du - type(du)(du.grid, np.sqrt(3.0) / a - 1.0)
        assert err.l2_norm() < 1e-10

    def test_2d_laminate_closed_form(self):
        # a = (1.5 + 0.4 cos 2 pi y1) I: abar diagonal, harmonic/arithmetic means
        grid = TorusGrid(2, 64)
        c = CoefficientField.from_isotropic(
            grid, lambda y1, y2: 1.5 + 0.4 * np.cos(TWO_PI * y1)
        )
        suite = build_first_order(c, tol=1e-13)
        assert abs(suite.abar[0, 0] - np.sqrt(1.5 ** 2 - 0.4 ** 2)) < 1e-11
        assert abs(suite.abar[1, 1] - 1.5) < 1e-12
        assert abs(suite.abar[0, 1]) < 1e-12

    def test_ellipticity_bracketing(self):
        rng = np.random.default_rng(21)
        c = random_trig_coeff(rng, TorusGrid(2, 48))
        suite = build_first_order(c)
        ev = np.linalg.eigvalsh(suite.abar)
        assert ev.min() >= c.lam_min - 1e-10
        assert ev.max() <= c.lam_max + 1e-10


class TestSecondOrder:
    def test_identity_coefficient(self):
        c = CoefficientField.identity(TorusGrid(2, 16))
        suite = build_suite(c)
        assert max(f.l2_norm() for f in suite.chi2.values()) < 1e-12
        assert np.max(np.abs(suite.abar3)) < 1e-12

    def test_1d_third_order_vanishes(self):
        # cyclic identity with one index forces 3 abar3s = 0; in fact the
        # whole second-order flux vanishes identically in d = 1
        suite = build_suite(coeff_1d(), tol=1e-13)
        assert cyclic_check(suite.abar3_sym) < 1e-10
        assert np.max(np.abs(suite.abar3)) < 1e-11

    def test_2d_cyclic_identity(self):
        rng = np.random.default_rng(3)
        c = random_trig_coeff(rng, TorusGrid(2, 48))
        suite = build_suite(c, tol=1e-13)
        assert cyclic_check(suite.abar3_sym) < 1e-10

    def test_flux2_consistency(self):
        rng = np.random.default_rng(5)
        c = random_trig_coeff(rng, TorusGrid(2, 48))
        suite = build_suite(c, tol=1e-13)
        diag = suite_diagnostics(suite)
        assert diag["flux2_consistency"] < 1e-10
        assert diag["cyclic"] < 1e-10
        assert diag["chi2_mean"] < 1e-13

    def test_stream2_divergence(self):
        rng = np.random.default_rng(9)
        c = random_trig_coeff(rng, TorusGrid(2, 48))
        suite = build_suite(c, tol=1e-13)
        s2 = suite.stream2(0, 1)
        assert np.max(np.abs(s2.values + np.swapaxes(s2.values, 0, 1))) == 0.0


class TestDiagnostics:
    def test_full_suite_diagnostics(self):
        rng = np.random.default_rng(13)
        c = random_trig_coeff(rng, TorusGrid(2, 48))
        suite = build_suite(c, tol=1e-13)
        diag = suite_diagnostics(suite)
        assert diag["abar_asymmetry"] < 1e-12
        assert diag["chi1_mean"] < 1e-13
        assert diag["chi1_residual"] < 1e-10
        assert diag["g_mean"] < 1e-12
        assert diag["s1_skew_gap"] == 0.0
        assert diag["s1_div_error"] < 1e-10

    def test_cyclic_check_detects_tampering(self):
        rng = np.random.default_rng(13)
        c = random_trig_coeff(rng, TorusGrid(2, 32))
        suite = build_suite(c)
        tampered = suite.abar3_sym.copy()
        tampered[0, 0, 0] += 1e-3
        assert cyclic_check(tampered) > 1e-4
