"""Slow-fast separable fields chi(x, y) = sum_beta x^beta * S_beta(y).

The higher-order correctors depend on the slow variable only through the
potential and its derivatives, so with a polynomial potential every entry of
the corrector table is a finite sum of (monomial in x) times (periodic field
in y).  Terms are stored keyed by the x-monomial, which canonicalizes sums
for free: adding fields merges coefficients, and independence of distinct
monomials lets the cell solver treat each periodic shape separately.
"""

from __future__ import annotations

import numpy as np

from .errors import DegreeCapExceeded, GridMismatch
from .slowpoly import SlowPolynomial
from .torus import PeriodicField, TorusGrid, deriv_y, pointwise_multiply


class SeparableField:
    """Finite sum of x-monomial times periodic-in-y scalar shapes."""

    __slots__ = ("grid", "terms")

    def __init__(self, grid: TorusGrid, terms: dict | None = None):
        self.grid = grid
        self.terms = {}
        if terms:
            for beta, field in terms.items():
                beta = tuple(int(b) for b in beta)
                if len(beta) != grid.dim or any(b < 0 for b in beta):
                    raise ValueError(f"bad monomial {beta}")
                if field.rank != 0 or field.grid != grid:
                    raise GridMismatch("term shapes must be scalars on the grid")
                self._accumulate(beta, field)

    def _accumulate(self, beta: tuple, field: PeriodicField):
        if beta in self.terms:
            self.terms[beta] = self.terms[beta] + field
        else:
            self.terms[beta] = field

    # --- constructors ---

    @classmethod
    def zero(cls, grid: TorusGrid) -> "SeparableField":
        return cls(grid)

    @classmethod
    def one(cls, grid: TorusGrid) -> "SeparableField":
        return cls(grid, {(0,) * grid.dim: PeriodicField.constant(grid, 1.0)})

    @classmethod
    def from_periodic(cls, field: PeriodicField) -> "SeparableField":
        return cls(field.grid, {(0,) * field.grid.dim: field})

    # --- queries ---

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(f.l2_norm() <= tol for f in self.terms.values())

    def degree(self) -> int:
        return max((sum(b) for b in self.terms), default=0)

    def max_norm(self) -> float:
        return max((f.l2_norm() for f in self.terms.values()), default=0.0)

    def purge(self, tol: float = 1e-13) -> "SeparableField":
        """Drop shapes with norm below tol relative to the largest term."""
        scale = max(self.max_norm(), 1.0)
        kept = {b: f for b, f in self.terms.items()
                if f.l2_norm() > tol * scale}
        return SeparableField(self.grid, kept)

    # --- algebra ---

    def __add__(self, other: "SeparableField") -> "SeparableField":
        if other.grid != self.grid:
            raise GridMismatch("separable fields on different grids")
        out = SeparableField(self.grid, dict(self.terms))
        for b, f in other.terms.items():
            out._accumulate(b, f)
        return out

    def __sub__(self, other):
        return self + (other * -1.0)

    def __mul__(self, s: float):
        return SeparableField(
            self.grid, {b: f * float(s) for b, f in self.terms.items()}
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def mul_poly(self, p: SlowPolynomial, degree_cap: int | None = None) -> "SeparableField":
        """Multiply by a slow polynomial; raises DegreeCapExceeded past cap."""
        out = SeparableField(self.grid)
        for bp, c in p.coeffs.items():
            for bt, f in self.terms.items():
                key = tuple(x + y for x, y in zip(bp, bt))
                out._accumulate(key, f * c)
        if degree_cap is not None and out.degree() > degree_cap:
            raise DegreeCapExceeded(
                f"separable field degree {out.degree()} exceeds cap {degree_cap}"
            )
        return out

    def mul_field(self, g: PeriodicField, dealias: bool = True) -> "SeparableField":
        """Multiply every shape by a scalar periodic field."""
        return SeparableField(self.grid, {
            b: pointwise_multiply(f, g, dealias=dealias)
            for b, f in self.terms.items()
        })

    def dx(self, axis: int) -> "SeparableField":
        out = SeparableField(self.grid)
        for b, f in self.terms.items():
            if b[axis] == 0:
                continue
            nb = list(b)
            nb[axis] -= 1
            out._accumulate(tuple(nb), f * float(b[axis]))
        return out

    def dy(self, axis: int) -> "SeparableField":
        return SeparableField(
            self.grid, {b: deriv_y(f, axis) for b, f in self.terms.items()}
        )

    def y_mean(self) -> SlowPolynomial:
        """Mean over the torus as a polynomial in x."""
        return SlowPolynomial(
            self.grid.dim, {b: f.mean() for b, f in self.terms.items()}
        )

    def ring(self) -> "SeparableField":
        """Fluctuating part: subtract the y-mean of every shape."""
        return SeparableField(
            self.grid, {b: f.mean_zero() for b, f in self.terms.items()}
        )

    def max_shape_mean(self) -> float:
        """Largest |<S_beta>| over the stored monomials."""
        return max((abs(f.mean()) for f in self.terms.values()), default=0.0)

    # --- evaluation ---

    def eval_xy(self, x_pts: np.ndarray, y_pts: np.ndarray) -> np.ndarray:
        """chi(x_i, y_i) for paired point lists of shape (m, d)."""
        x_pts = np.atleast_2d(np.asarray(x_pts, dtype=float))
        y_pts = np.atleast_2d(np.asarray(y_pts, dtype=float))
        out = np.zeros(x_pts.shape[0])
        for b, f in self.terms.items():
            mono = np.ones(x_pts.shape[0])
            for ax, p in enumerate(b):
                if p:
                    mono = mono * x_pts[:, ax] ** p
            out += mono * f.evaluate(y_pts)
        return out

    def __repr__(self):
        return f"SeparableField({len(self.terms)} terms, deg {self.degree()})"
