"""Periodic field algebra on the unit torus T^d and the two elementary solvers.

Fields are sampled on a uniform n^d grid and manipulated pseudo-spectrally:
derivatives are exact on resolved modes (multiplication by 2*pi*i*k in Fourier
space) and products are formed on the grid, optionally padded by the 3/2 rule
to remove quadratic aliasing.  The two solvers everything else reduces to are

    solve_cell:            -div(a grad u) = div F + G   on T^d,  <u> = 0
    solve_flux_corrector:  -lap s_ij = d_j g_i - d_i g_j, so that div s = g

The cell solve uses conjugate gradients preconditioned by the constant
coefficient Laplacian, which converges in O(sqrt(theta)) iterations for the
smooth coefficients this library targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    GridMismatch,
    NonZeroMean,
    NotDivergenceFree,
    NotElliptic,
    SingularSystem,
)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on [0,1)^d with an even number of points per axis."""

    dim: int
    modes_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridMismatch(f"dim must be 1 or 2, got {self.dim}")
        n = self.modes_per_axis
        if n < 4 or n % 2 != 0:
            raise GridMismatch(f"modes_per_axis must be even and >= 4, got {n}")

    @property
    def shape(self) -> tuple:
        return (self.modes_per_axis,) * self.dim

    @property
    def npoints(self) -> int:
        return self.modes_per_axis ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        n = self.modes_per_axis
        return np.arange(n) / n

    def coords(self) -> list:
        """Meshgrid coordinate arrays, ij indexing."""
        return list(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    @cached_property
    def wavenumbers(self) -> list:
        """Derivative wavenumbers 2*pi*k per axis, broadcast-shaped.

        The Nyquist entry is zeroed: on an even grid that mode is a pure
        cosine whose sine derivative is not representable, and zeroing it
        keeps gradient and divergence exact adjoints of each other.
        """
        n = self.modes_per_axis
        k = TWO_PI * np.fft.fftfreq(n, d=1.0 / n)
        k[n // 2] = 0.0
        out = []
        for ax in range(self.dim):
            shape = [1] * self.dim
            shape[ax] = n
            out.append(k.reshape(shape))
        return out

    @cached_property
    def k_squared(self) -> np.ndarray:
        """Full |2 pi k|^2 including the Nyquist mode (used for inversions)."""
        n = self.modes_per_axis
        k = TWO_PI * np.fft.fftfreq(n, d=1.0 / n)
        k2 = np.zeros(self.shape)
        for ax in range(self.dim):
            shape = [1] * self.dim
            shape[ax] = n
            k2 = k2 + k.reshape(shape) ** 2
        return k2

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """Boolean mask of modes whose every axis index avoids the Nyquist."""
        n = self.modes_per_axis
        keep = np.ones(n, dtype=bool)
        keep[n // 2] = False
        mask = np.ones(self.shape, dtype=bool)
        for ax in range(self.dim):
            shape = [1] * self.dim
            shape[ax] = n
            mask = mask & keep.reshape(shape)
        return mask


def _check_same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatch("fields live on different grids")
    return g


class PeriodicField:
    """Real field on a TorusGrid; rank 0, 1 or 2 (scalar, vector, matrix).

    values has shape comp_shape + grid.shape with comp_shape () / (d,) / (d,d).
    The grid mean of each component equals its zeroth Fourier coefficient.
    """

    __slots__ = ("grid", "values", "rank")

    def __init__(self, grid: TorusGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        ncomp = values.ndim - grid.dim
        if ncomp not in (0, 1, 2) or values.shape[ncomp:] != grid.shape:
            raise GridMismatch(
                f"values shape {values.shape} incompatible with grid {grid.shape}"
            )
        if ncomp >= 1 and values.shape[0] != grid.dim:
            raise GridMismatch("component axes must have length d")
        if ncomp == 2 and values.shape[1] != grid.dim:
            raise GridMismatch("component axes must have length d")
        self.grid = grid
        self.values = values
        self.rank = ncomp

    # --- constructors ---

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "PeriodicField":
        """Sample a scalar callable of the grid coordinates."""
        return cls(grid, np.asarray(fn(*grid.coords()), dtype=float))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "PeriodicField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def zeros(cls, grid: TorusGrid, rank: int = 0) -> "PeriodicField":
        comp = (grid.dim,) * rank
        return cls(grid, np.zeros(comp + grid.shape))

    # --- basic queries ---

    @property
    def grid_axes(self) -> tuple:
        return tuple(range(self.rank, self.rank + self.grid.dim))

    def mean(self):
        """Torus mean; scalar for rank 0, d-vector / dxd matrix otherwise."""
        m = self.values.mean(axis=self.grid_axes)
        return float(m) if self.rank == 0 else m

    def mean_zero(self) -> "PeriodicField":
        m = np.asarray(self.mean())
        return PeriodicField(
            self.grid, self.values - m.reshape(m.shape + (1,) * self.grid.dim)
        )

    def component(self, *idx) -> "PeriodicField":
        return PeriodicField(self.grid, self.values[idx])

    def l2_norm(self) -> float:
        """L2(T^d) norm; components of vector/matrix fields are summed."""
        return float(np.sqrt(np.sum(self.values ** 2) / self.grid.npoints))

    def linf_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    # --- algebra ---

    def __add__(self, other):
        _check_same_grid(self, other)
        return PeriodicField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return PeriodicField(self.grid, self.values - other.values)

    def __mul__(self, scalar: float):
        return PeriodicField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return PeriodicField(self.grid, -self.values)

    # --- spectral helpers ---

    def fft(self) -> np.ndarray:
        return np.fft.fftn(self.values, axes=self.grid_axes)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Trigonometric interpolation of a scalar field at arbitrary points.

        points: (m, d) array in R^d; periodicity wraps automatically.
        """
        if self.rank != 0:
            raise GridMismatch("evaluate is defined for scalar fields")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.grid.dim:
            raise GridMismatch("points must have d columns")
        n = self.grid.modes_per_axis
        freqs = np.fft.fftfreq(n, d=1.0 / n)
        fh = np.fft.fftn(self.values) / self.grid.npoints
        # real field with even n: split the Nyquist mode so that the
        # interpolant is real (cos(pi n y) rather than exp(-i pi n y))
        if self.grid.dim == 1:
            e = np.exp(TWO_PI * 1j * np.outer(pts[:, 0], freqs))
            e[:, n // 2] = np.cos(TWO_PI * freqs[n // 2] * pts[:, 0])
            return np.real(e @ fh)
        e0 = np.exp(TWO_PI * 1j * np.outer(pts[:, 0], freqs))
        e0[:, n // 2] = np.cos(TWO_PI * freqs[n // 2] * pts[:, 0])
        e1 = np.exp(TWO_PI * 1j * np.outer(pts[:, 1], freqs))
        e1[:, n // 2] = np.cos(TWO_PI * freqs[n // 2] * pts[:, 1])
        return np.real(np.einsum("pa,ab,pb->p", e0, fh, e1))


def mean(f: PeriodicField):
    return f.mean()


def grad_y(f: PeriodicField) -> PeriodicField:
    """Spectral gradient of a scalar field, rank 0 -> rank 1."""
    if f.rank != 0:
        raise GridMismatch("grad_y expects a scalar field")
    fh = np.fft.fftn(f.values)
    comps = [np.real(np.fft.ifftn(1j * k * fh)) for k in f.grid.wavenumbers]
    return PeriodicField(f.grid, np.stack(comps))


def deriv_y(f: PeriodicField, axis: int) -> PeriodicField:
    """Single spectral partial derivative of a scalar field."""
    if f.rank != 0:
        raise GridMismatch("deriv_y expects a scalar field")
    k = f.grid.wavenumbers[axis]
    return PeriodicField(f.grid, np.real(np.fft.ifftn(1j * k * np.fft.fftn(f.values))))


def div_y(f: PeriodicField) -> PeriodicField:
    """Spectral divergence; rank 1 -> rank 0, rank 2 -> rank 1 (column-wise).

    For a matrix field the j-th output component is d_i s_ij, so that the
    stream matrix identity div s = g holds componentwise.
    """
    ks = f.grid.wavenumbers
    if f.rank == 1:
        out = np.zeros(f.grid.shape)
        for i in range(f.grid.dim):
            out += np.real(np.fft.ifftn(1j * ks[i] * np.fft.fftn(f.values[i])))
        return PeriodicField(f.grid, out)
    if f.rank == 2:
        comps = []
        for j in range(f.grid.dim):
            acc = np.zeros(f.grid.shape)
            for i in range(f.grid.dim):
                acc += np.real(
                    np.fft.ifftn(1j * ks[i] * np.fft.fftn(f.values[i, j]))
                )
            comps.append(acc)
        return PeriodicField(f.grid, np.stack(comps))
    raise GridMismatch("div_y expects a vector or matrix field")


def laplacian_y(f: PeriodicField) -> PeriodicField:
    if f.rank != 0:
        raise GridMismatch("laplacian_y expects a scalar field")
    fh = np.fft.fftn(f.values)
    return PeriodicField(f.grid, np.real(np.fft.ifftn(-f.grid.k_squared * fh)))


# --- dealiased products -----------------------------------------------------

def _pad_shape(n: int) -> int:
    m = (3 * n) // 2
    return m + (m % 2)


def _pad_spectrum(fh: np.ndarray, n: int, m: int) -> np.ndarray:
    # the ambiguous Nyquist mode is dropped so that padding and truncation
    # are exact adjoints; smooth fields carry only exponentially small
    # content there
    d = fh.ndim
    out = np.zeros((m,) * d, dtype=complex)
    h = n // 2
    if d == 1:
        out[:h] = fh[:h]
        out[m - (h - 1):] = fh[h + 1:]
    else:
        lo = slice(0, h)
        hi_src = slice(h + 1, n)
        hi_dst = slice(m - (h - 1), m)
        out[lo, lo] = fh[lo, lo]
        out[lo, hi_dst] = fh[lo, hi_src]
        out[hi_dst, lo] = fh[hi_src, lo]
        out[hi_dst, hi_dst] = fh[hi_src, hi_src]
    return out


def _truncate_spectrum(fh: np.ndarray, m: int, n: int) -> np.ndarray:
    d = fh.ndim
    out = np.zeros((n,) * d, dtype=complex)
    h = n // 2
    if d == 1:
        out[:h] = fh[:h]
        out[h + 1:] = fh[m - (h - 1):]
    else:
        lo = slice(0, h)
        hi_src = slice(m - (h - 1), m)
        hi_dst = slice(h + 1, n)
        out[lo, lo] = fh[lo, lo]
        out[lo, hi_dst] = fh[lo, hi_src]
        out[hi_dst, lo] = fh[hi_src, lo]
        out[hi_dst, hi_dst] = fh[hi_src, hi_src]
    return out


def project_nyquist(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Zero all Fourier modes with a Nyquist index on some axis."""
    fh = np.fft.fftn(values)
    fh[~grid.nyquist_mask] = 0.0
    return np.real(np.fft.ifftn(fh))


def pad_values(values: np.ndarray, n: int) -> np.ndarray:
    """Resample a scalar grid array onto the 3/2-padded grid."""
    m = _pad_shape(n)
    fh = np.fft.fftn(values) / values.size
    return np.real(np.fft.ifftn(_pad_spectrum(fh, n, m))) * m ** values.ndim


def truncate_values(values: np.ndarray, n: int) -> np.ndarray:
    """Project an array on the padded grid back onto the n-grid modes."""
    m = values.shape[0]
    fh = np.fft.fftn(values) / values.size
    return np.real(np.fft.ifftn(_truncate_spectrum(fh, m, n))) * n ** values.ndim


def _mul_core(u: np.ndarray, v: np.ndarray, n: int, dealias: bool) -> np.ndarray:
    if not dealias:
        return u * v
    return truncate_values(pad_values(u, n) * pad_values(v, n), n)


def pointwise_multiply(f: PeriodicField, g: PeriodicField,
                       dealias: bool = True) -> PeriodicField:
    """Product of two fields with tensor contraction rules.

    rank0*rank0 -> rank0, rank0*rank1 -> rank1, rank1.rank1 -> rank0 (dot),
    rank2*rank1 -> rank1 (matvec).  Products are formed on the 3/2-padded
    grid then truncated, unless dealias=False.
    """
    grid = _check_same_grid(f, g)
    n = grid.modes_per_axis
    d = grid.dim
    if f.rank == 0 and g.rank == 0:
        return PeriodicField(grid, _mul_core(f.values, g.values, n, dealias))
    if f.rank == 0 and g.rank == 1:
        comps = [_mul_core(f.values, g.values[i], n, dealias) for i in range(d)]
        return PeriodicField(grid, np.stack(comps))
    if f.rank == 1 and g.rank == 0:
        return pointwise_multiply(g, f, dealias)
    if f.rank == 1 and g.rank == 1:
        out = np.zeros(grid.shape)
        for i in range(d):
            out += _mul_core(f.values[i], g.values[i], n, dealias)
        return PeriodicField(grid, out)
    if f.rank == 2 and g.rank == 1:
        comps = []
        for i in range(d):
            acc = np.zeros(grid.shape)
            for j in range(d):
                acc += _mul_core(f.values[i, j], g.values[j], n, dealias)
            comps.append(acc)
        return PeriodicField(grid, np.stack(comps))
    raise GridMismatch(f"unsupported ranks {f.rank} * {g.rank}")


def l2_inner(f: PeriodicField, g: PeriodicField) -> float:
    _check_same_grid(f, g)
    if f.rank != g.rank:
        raise GridMismatch("inner product needs equal ranks")
    return float(np.sum(f.values * g.values) / f.grid.npoints)


def hminus1_norm(f: PeriodicField) -> float:
    """Fourier H^-1 seminorm of a scalar field (zero mode dropped)."""
    if f.rank != 0:
        raise GridMismatch("hminus1_norm expects a scalar field")
    fh = np.fft.fftn(f.values) / f.grid.npoints
    k2 = f.grid.k_squared.copy()
    k2.flat[0] = 1.0
    w = np.abs(fh) ** 2 / k2
    w.flat[0] = 0.0
    return float(np.sqrt(w.sum()))


# --- coefficient fields ------------------------------------------------------

class CoefficientField:
    """Symmetric uniformly elliptic d x d coefficient a(y) on the torus.

    Carries pointwise eigenvalue bounds lam_min <= a <= lam_max and the
    ellipticity ratio theta = lam_max / lam_min.  When built from closed-form
    expressions the callables are kept so that the fine-grid oracle can
    evaluate a(x/eps) exactly; coefficients given only as samples fall back
    to trigonometric interpolation (accurate for smooth fields only, and a
    warning flag is set for the caller to surface).
    """

    def __init__(self, a: PeriodicField, entry_fns=None, from_samples=False):
        if a.rank != 2:
            raise NotElliptic("coefficient must be a rank-2 field")
        sym_gap = np.max(np.abs(a.values - np.swapaxes(a.values, 0, 1)))
        if sym_gap > 1e-12 * max(1.0, np.max(np.abs(a.values))):
            raise NotElliptic(f"coefficient not symmetric, gap {sym_gap:.3e}")
        a = PeriodicField(a.grid, 0.5 * (a.values + np.swapaxes(a.values, 0, 1)))
        self.grid = a.grid
        self.a = a
        self.entry_fns = entry_fns
        self.from_samples = from_samples
        lo, hi = self._eig_bounds()
        if lo <= 0.0:
            raise NotElliptic(f"coefficient not positive definite, min eig {lo:.3e}")
        self.lam_min = lo
        self.lam_max = hi
        self.theta = hi / lo
        self._padded = None

    def _eig_bounds(self):
        v = self.a.values
        if self.grid.dim == 1:
            w = v[0, 0]
            return float(w.min()), float(w.max())
        tr = v[0, 0] + v[1, 1]
        det = v[0, 0] * v[1, 1] - v[0, 1] * v[1, 0]
        disc = np.sqrt(np.maximum((tr / 2) ** 2 - det, 0.0))
        return float((tr / 2 - disc).min()), float((tr / 2 + disc).max())

    @classmethod
    def from_isotropic(cls, grid: TorusGrid, fn) -> "CoefficientField":
        s = np.asarray(fn(*grid.coords()), dtype=float)
        d = grid.dim
        vals = np.zeros((d, d) + grid.shape)
        for i in range(d):
            vals[i, i] = s
        fns = [[(fn if i == j else None) for j in range(d)] for i in range(d)]
        return cls(PeriodicField(grid, vals), entry_fns=fns)

    @classmethod
    def from_diagonal(cls, grid: TorusGrid, fns) -> "CoefficientField":
        d = grid.dim
        if len(fns) != d:
            raise NotElliptic("need one diagonal entry per dimension")
        vals = np.zeros((d, d) + grid.shape)
        table = [[None] * d for _ in range(d)]
        for i, fn in enumerate(fns):
            vals[i, i] = np.asarray(fn(*grid.coords()), dtype=float)
            table[i][i] = fn
        return cls(PeriodicField(grid, vals), entry_fns=table)

    @classmethod
    def from_matrix(cls, grid: TorusGrid, fns) -> "CoefficientField":
        d = grid.dim
        vals = np.zeros((d, d) + grid.shape)
        for i in range(d):
            for j in range(d):
                vals[i, j] = np.asarray(fns[i][j](*grid.coords()), dtype=float)
        return cls(PeriodicField(grid, vals), entry_fns=fns)

    @classmethod
    def from_samples(cls, grid: TorusGrid, values: np.ndarray) -> "CoefficientField":
        return cls(PeriodicField(grid, values), from_samples=True)

    @classmethod
    def identity(cls, grid: TorusGrid) -> "CoefficientField":
        return cls.from_isotropic(grid, lambda *ys: np.ones(grid.shape))

    def check_ellipticity(self, directions=None, tol=1e-10) -> bool:
        """Quadratic-form bracketing lam_min|xi|^2 <= <a xi, xi> <= lam_max|xi|^2
        on every grid point for a sampled set of directions."""
        d = self.grid.dim
        if directions is None:
            directions = list(np.eye(d))
            if d == 2:
                directions += [np.array([1.0, 1.0]) / np.sqrt(2),
                               np.array([1.0, -1.0]) / np.sqrt(2)]
        for xi in directions:
            q = np.zeros(self.grid.shape)
            for i in range(d):
                for j in range(d):
                    q += self.a.values[i, j] * xi[i] * xi[j]
            nrm = float(np.dot(xi, xi))
            if q.min() < self.lam_min * nrm - tol or q.max() > self.lam_max * nrm + tol:
                return False
        return True

    def padded_values(self) -> np.ndarray:
        """Coefficient resampled on the 3/2 grid, cached for the CG operator."""
        if self._padded is None:
            n = self.grid.modes_per_axis
            d = self.grid.dim
            m = _pad_shape(n)
            out = np.zeros((d, d) + (m,) * d)
            for i in range(d):
                for j in range(d):
                    out[i, j] = pad_values(self.a.values[i, j], n)
            self._padded = out
        return self._padded

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """a at arbitrary points, (m, d, d); exact if expressions are known."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.grid.dim
        out = np.zeros((pts.shape[0], d, d))
        for i in range(d):
            for j in range(d):
                fn = self.entry_fns[i][j] if self.entry_fns else None
                if fn is not None:
                    cols = [pts[:, ax] for ax in range(d)]
                    out[:, i, j] = np.asarray(fn(*cols), dtype=float)
                else:
                    out[:, i, j] = self.a.component(i, j).evaluate(pts)
        return out


# --- the two solvers --------------------------------------------------------

def _apply_operator(coeff: CoefficientField, u: np.ndarray,
                    dealias: bool) -> np.ndarray:
    """-div(a grad u); gradient and divergence act on the n-grid, the
    coefficient product is formed on the 3/2 grid when dealias is set.

    Padding and truncation are exact adjoints and the derivative matrix is
    antisymmetric, so the composite is exactly symmetric; it also coincides
    exactly with the div_y(pointwise_multiply(a, grad_y(u))) path, which is
    what makes the computed fluxes divergence-free to solver precision.
    """
    grid = coeff.grid
    n = grid.modes_per_axis
    d = grid.dim
    ks = grid.wavenumbers
    uh = np.fft.fftn(u)
    grads = [np.real(np.fft.ifftn(1j * k * uh)) for k in ks]
    if not dealias:
        av = coeff.a.values
        fluxes = [sum(av[i, j] * grads[j] for j in range(d)) for i in range(d)]
    else:
        m = _pad_shape(n)
        scale = (m / n) ** d
        pads = [np.real(np.fft.ifftn(_pad_spectrum(np.fft.fftn(g), n, m)))
                * scale for g in grads]
        ap = coeff.padded_values()
        fluxes = []
        for i in range(d):
            fp = sum(ap[i, j] * pads[j] for j in range(d))
            fluxes.append(np.real(np.fft.ifftn(
                _truncate_spectrum(np.fft.fftn(fp), m, n))) / scale)
    out = np.zeros(grid.shape, dtype=complex)
    for i in range(d):
        out += 1j * ks[i] * np.fft.fftn(fluxes[i])
    return -np.real(np.fft.ifftn(out))


def solve_cell(coeff: CoefficientField,
               F: PeriodicField | None = None,
               G: PeriodicField | None = None,
               tol: float = 1e-12,
               maxiter: int = 2000,
               dealias: bool = True) -> PeriodicField:
    """Unique mean-zero periodic solution of -div(a grad u) = div F + G.

    G must be mean-free (tolerance 1e-12 relative); the tiny residual mean is
    subtracted before the solve.  Raises SingularSystem when preconditioned
    CG fails to reach the relative residual tol.
    """
    grid = coeff.grid
    b = np.zeros(grid.shape)
    if F is not None:
        _check_same_grid(coeff.a, F)
        if F.rank != 1:
            raise GridMismatch("F must be a vector field")
        b += div_y(F).values
    if G is not None:
        _check_same_grid(coeff.a, G)
        if G.rank != 0:
            raise GridMismatch("G must be a scalar field")
        gmean = G.mean()
        scale = max(G.l2_norm(), 1.0)
        if abs(gmean) > 1e-12 * scale:
            raise NonZeroMean("G", abs(gmean))
        # Nyquist content of the source is outside the operator range on an
        # even grid; it is projected out as part of the discretization
        b += project_nyquist(G.values - gmean, grid)
    b -= b.mean()

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return PeriodicField.zeros(grid)

    k2 = grid.k_squared.copy()
    k2.flat[0] = 1.0
    cbar = 0.5 * (coeff.lam_min + coeff.lam_max)

    def precond(r):
        rh = np.fft.fftn(r) / (cbar * k2)
        rh.flat[0] = 0.0
        return np.real(np.fft.ifftn(rh))

    u = np.zeros(grid.shape)
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = float(np.sum(r * z))
    for _ in range(maxiter):
        Ap = _apply_operator(coeff, p, dealias)
        alpha = rz / float(np.sum(p * Ap))
        u += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            u -= u.mean()
            return PeriodicField(grid, u)
        z = precond(r)
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SingularSystem(
        f"cell solve did not reach tol {tol:.1e} in {maxiter} iterations"
    )


def cell_residual(coeff: CoefficientField, u: PeriodicField,
                  F: PeriodicField | None = None,
                  G: PeriodicField | None = None,
                  dealias: bool = True) -> float:
    """H^-1 norm of div(a grad u + F) + G, the weak residual of solve_cell."""
    r = -_apply_operator(coeff, u.values, dealias)
    if F is not None:
        r = r + div_y(F).values
    if G is not None:
        r = r + project_nyquist(G.values - G.mean(), coeff.grid)
    return hminus1_norm(PeriodicField(coeff.grid, r - r.mean()))


def solve_flux_corrector(g: PeriodicField, tol: float = 1e-10) -> PeriodicField:
    """Skew stream matrix s with -lap s_ij = d_j g_i - d_i g_j and div s = g.

    Requires <g> = 0 and div g = 0 (weakly).  In d=1 the only skew matrix is
    zero, consistent with the flux difference vanishing identically there.
    """
    if g.rank != 1:
        raise GridMismatch("flux corrector source must be a vector field")
    grid = g.grid
    d = grid.dim
    gnorm = max(g.l2_norm(), 1e-300)
    gm = np.asarray(g.mean())
    if np.max(np.abs(gm)) > 1e-10 * max(gnorm, 1.0):
        raise NonZeroMean("g", float(np.max(np.abs(gm))))
    divnorm = hminus1_norm(div_y(g))
    if divnorm > tol * max(gnorm, 1.0):
        raise NotDivergenceFree(
            f"div g has H^-1 norm {divnorm:.3e} (limit {tol:.1e} * |g|)"
        )
    out = np.zeros((d, d) + grid.shape)
    if d == 1:
        return PeriodicField(grid, out)
    ks = grid.wavenumbers
    k2 = grid.k_squared.copy()
    k2.flat[0] = 1.0
    gh = [np.fft.fftn(g.values[i]) for i in range(d)]
    for i in range(d):
        for j in range(i + 1, d):
            sh = (1j * ks[j] * gh[i] - 1j * ks[i] * gh[j]) / k2
            sh.flat[0] = 0.0
            s = np.real(np.fft.ifftn(sh))
            out[i, j] = s
            out[j, i] = -s
    return PeriodicField(grid, out)
