"""The macroscopic function space on R^d.

Functions are expanded in tensorized Hermite functions psi_n(x/sigma)/sqrt(sigma)
(orthonormal in L2).  Position and derivative act through the ladder
recurrences

    x   psi_n = sigma  (sqrt((n+1)/2) psi_{n+1} + sqrt(n/2) psi_{n-1})
    d/dx psi_n = (1/sigma)(sqrt(n/2) psi_{n-1} - sqrt((n+1)/2) psi_{n+1})

so multiplication by a polynomial and -div(abar grad) + W are banded.  All
operator blocks are exact Galerkin matrices: products of ladder matrices are
formed on an extended index range and then truncated, so for the matched
oscillator the assembled matrix is exactly diagonal.

Integrals of (polynomial) x (basis function products) are evaluated with
Gauss-Hermite quadrature, which is exact for such integrands; this is what
the correction hierarchy's solvability integrals use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    GapUnresolved,
    NonConfining,
    NotOrthogonal,
    TruncationUnsafe,
)
from .slowpoly import SlowPolynomial

DEFAULT_CLUSTER_TOL = 1e-6


@dataclass(frozen=True)
class MacroBasis:
    """Tensorized Hermite-function basis: size^dim functions of scale sigma."""

    dim: int
    size: int
    sigma: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.size < 8:
            raise ValueError("basis size must be >= 8 per axis")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def total(self) -> int:
        return self.size ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.size,) * self.dim


def default_sigma(abar: np.ndarray, W: SlowPolynomial) -> float:
    """Scale matching the ground-state width of the quadratic part of W.

    sigma = (det abar / det Q)^(1/(4d)); for -c u'' + w x^2 u this is
    (c/w)^(1/4), the exact oscillator width.
    """
    abar = np.atleast_2d(np.asarray(abar, dtype=float))
    d = abar.shape[0]
    Q = W.quadratic_form()
    det_q = float(np.linalg.det(Q))
    det_a = float(np.linalg.det(abar))
    if det_q <= 0:
        raise NonConfining("potential has no positive quadratic part")
    return float((det_a / det_q) ** (1.0 / (4 * d)))


# --- per-axis ladder matrices -------------------------------------------------


@lru_cache(maxsize=None)
def _xop(n: int) -> np.ndarray:
    m = np.arange(1, n)
    X = np.zeros((n, n))
    X[m - 1, m] = X[m, m - 1] = np.sqrt(m / 2.0)
    return X


@lru_cache(maxsize=None)
def _dop(n: int) -> np.ndarray:
    m = np.arange(1, n)
    D = np.zeros((n, n))
    D[m - 1, m] = np.sqrt(m / 2.0)
    D[m, m - 1] = -np.sqrt(m / 2.0)
    return D


def _axis_x_power(N: int, p: int, sigma: float) -> np.ndarray:
    """Exact Galerkin matrix of multiplication by x^p, N x N."""
    if p == 0:
        return np.eye(N)
    X = _xop(N + p)
    M = np.linalg.matrix_power(X, p)[:N, :N]
    return (sigma ** p) * M


def _axis_kinetic(N: int, sigma: float) -> np.ndarray:
    """Exact <psi_m', psi_n'>, N x N."""
    D = _dop(N + 2)
    return (D.T @ D)[:N, :N] / sigma ** 2


def _axis_deriv(N: int, sigma: float) -> np.ndarray:
    """Exact <psi_m, psi_n'>, N x N."""
    return _dop(N + 1)[:N, :N] / sigma


def _kron_chain(blocks: list) -> np.ndarray:
    out = blocks[0]
    for b in blocks[1:]:
        out = np.kron(out, b)
    return out


def poly_multiply_op(W: SlowPolynomial, basis: MacroBasis,
                     degree_cap: int = 8) -> np.ndarray:
    """Galerkin matrix of multiplication by a polynomial, exact on the basis."""
    from .errors import DegreeCapExceeded
    if W.degree() > degree_cap:
        raise DegreeCapExceeded(
            f"polynomial degree {W.degree()} exceeds cap {degree_cap}"
        )
    N, d = basis.size, basis.dim
    out = np.zeros((basis.total, basis.total))
    for alpha, c in W.coeffs.items():
        blocks = [_axis_x_power(N, alpha[ax], basis.sigma) for ax in range(d)]
        out += c * _kron_chain(blocks)
    return out


def derivative_op(axis: int, basis: MacroBasis) -> np.ndarray:
    """Galerkin matrix of d/dx_axis (exact through the top retained mode)."""
    N, d = basis.size, basis.dim
    blocks = [np.eye(N)] * d
    blocks[axis] = _axis_deriv(N, basis.sigma)
    return _kron_chain(blocks)


def assemble_L0(abar: np.ndarray, W: SlowPolynomial,
                basis: MacroBasis) -> np.ndarray:
    """Symmetric Galerkin matrix of -div(abar grad) + W.

    Requires W of degree exactly 2 with positive definite quadratic part
    (the confining hypothesis); raises NonConfining otherwise.
    """
    abar = np.atleast_2d(np.asarray(abar, dtype=float))
    d = basis.dim
    if abar.shape != (d, d):
        raise ValueError(f"abar must be {d}x{d}")
    if W.dim != d:
        raise ValueError("potential dimension mismatch")
    if W.degree() != 2:
        raise NonConfining(f"potential degree {W.degree()}, need exactly 2")
    Q = W.quadratic_form()
    if np.any(np.linalg.eigvalsh(Q) <= 0):
        raise NonConfining("quadratic part of the potential is not positive definite")

    N = basis.size
    L = poly_multiply_op(W, basis)
    for i in range(d):
        for j in range(d):
            if abar[i, j] == 0.0:
                continue
            if i == j:
                blocks = [np.eye(N)] * d
                blocks[i] = _axis_kinetic(N, basis.sigma)
            else:
                blocks = [np.eye(N)] * d
                blocks[i] = _axis_deriv(N, basis.sigma).T
                blocks[j] = _axis_deriv(N, basis.sigma)
            L += abar[i, j] * _kron_chain(blocks)
    return 0.5 * (L + L.T)


# --- functions -----------------------------------------------------------------


def hermite_function_values(x: np.ndarray, nmax: int, sigma: float) -> np.ndarray:
    """Matrix of psi_n(x/sigma)/sqrt(sigma) for n < nmax, shape (len(x), nmax).

    Stable recurrence with the Gaussian folded in; values underflow to zero
    gracefully far in the tails.
    """
    z = np.asarray(x, dtype=float) / sigma
    out = np.zeros((z.size, nmax))
    h0 = np.pi ** -0.25 * np.exp(-0.5 * z ** 2) / np.sqrt(sigma)
    out[:, 0] = h0
    if nmax > 1:
        out[:, 1] = np.sqrt(2.0) * z * h0
    for n in range(1, nmax - 1):
        out[:, n + 1] = (np.sqrt(2.0 / (n + 1)) * z * out[:, n]
                         - np.sqrt(n / (n + 1.0)) * out[:, n - 1])
    return out


class MacroFunction:
    """Element of the macroscopic space: coefficient vector over a MacroBasis."""

    __slots__ = ("basis", "coeffs")

    def __init__(self, basis: MacroBasis, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
        if coeffs.size != basis.total:
            raise ValueError("coefficient length does not match basis")
        self.basis = basis
        self.coeffs = coeffs

    @classmethod
    def zero(cls, basis: MacroBasis) -> "MacroFunction":
        return cls(basis, np.zeros(basis.total))

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def inner(self, other: "MacroFunction") -> float:
        return float(np.dot(self.coeffs, other.coeffs))

    def __add__(self, other):
        return MacroFunction(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return MacroFunction(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, s: float):
        return MacroFunction(self.basis, self.coeffs * float(s))

    __rmul__ = __mul__

    def __neg__(self):
        return MacroFunction(self.basis, -self.coeffs)

    def derivative(self, axis: int) -> "MacroFunction":
        """d/dx_axis projected back onto the basis (top mode truncated)."""
        return MacroFunction(self.basis, derivative_op(axis, self.basis) @ self.coeffs)

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.norm() <= tol

    def evaluate(self, points: np.ndarray,
                 alpha: tuple | None = None) -> np.ndarray:
        """Values of d^alpha(self) at points (m, d); exact derivative route.

        The coefficients are lifted to an extended basis before applying the
        ladder derivative, so no derivative content is lost to truncation.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.basis.dim
        if pts.shape[1] != d:
            raise ValueError("points must have d columns")
        alpha = tuple(alpha) if alpha is not None else (0,) * d
        order = sum(alpha)
        Ne = self.basis.size + order
        c = extended_coefficients(self, alpha, Ne)
        mats = [hermite_function_values(pts[:, ax], Ne, self.basis.sigma)
                for ax in range(d)]
        if d == 1:
            return mats[0] @ c.reshape(-1)
        return np.einsum("pa,ab,pb->p", mats[0], c, mats[1])


def extended_coefficients(f: MacroFunction, alpha: tuple, Ne: int) -> np.ndarray:
    """Coefficients of d^alpha f in the basis extended to Ne modes per axis."""
    d = f.basis.dim
    c = f.coeffs.reshape(f.basis.shape)
    pad = [(0, Ne - f.basis.size)] * d
    c = np.pad(c, pad)
    for ax in range(d):
        Dp = np.linalg.matrix_power(_dop(Ne), alpha[ax]) / f.basis.sigma ** alpha[ax]
        c = np.moveaxis(np.tensordot(Dp, c, axes=(1, ax)), 0, ax)
    return c


# --- quadrature ---------------------------------------------------------------


@lru_cache(maxsize=None)
def _gh_nodes(Q: int):
    z, w = np.polynomial.hermite.hermgauss(Q)
    logw = np.log(w)
    return z, np.exp(logw + z ** 2)


class QuadratureRule:
    """Gauss-Hermite rule exact for polynomial x (Gaussian-type) integrands.

    Handles integrals int p(x) f(x) g(x) dx with f, g in the (extended)
    basis and p polynomial: total polynomial degree up to 2Q-1 is exact.
    """

    def __init__(self, basis: MacroBasis, n_ext: int, extra_degree: int = 12):
        Q = n_ext + extra_degree
        z, wmod = _gh_nodes(Q)
        self.basis = basis
        self.n_ext = n_ext
        self.x1 = basis.sigma * z
        self.w1 = basis.sigma * wmod
        self.B = hermite_function_values(self.x1, n_ext, basis.sigma)

    def points(self) -> np.ndarray:
        """Physical quadrature nodes, (M, d)."""
        if self.basis.dim == 1:
            return self.x1.reshape(-1, 1)
        X1, X2 = np.meshgrid(self.x1, self.x1, indexing="ij")
        return np.stack([X1.ravel(), X2.ravel()], axis=1)

    def weights(self) -> np.ndarray:
        if self.basis.dim == 1:
            return self.w1
        return np.outer(self.w1, self.w1).ravel()

    def values(self, f: MacroFunction, alpha: tuple | None = None) -> np.ndarray:
        """d^alpha f at the quadrature nodes, flattened."""
        d = self.basis.dim
        alpha = tuple(alpha) if alpha is not None else (0,) * d
        if sum(alpha) > self.n_ext - self.basis.size:
            raise ValueError("quadrature rule extension too small for alpha")
        c = extended_coefficients(f, alpha, self.n_ext)
        if d == 1:
            return self.B @ c.reshape(-1)
        return (self.B @ c @ self.B.T).ravel()

    def integrate(self, *factors) -> float:
        """Integral over R^d of a product of node-value arrays."""
        acc = self.weights().copy()
        for v in factors:
            acc = acc * v
        return float(acc.sum())

    def _basis_block(self, order: int) -> np.ndarray:
        """Per-axis node values of the order-th derivative of the N basis
        functions, exact through the ladder on the extended range."""
        N = self.basis.size
        if order == 0:
            return self.B[:, :N]
        Dp = np.linalg.matrix_power(_dop(self.n_ext), order) \
            / self.basis.sigma ** order
        return self.B @ Dp[:, :N]

    def project(self, values: np.ndarray, alpha: tuple | None = None) -> np.ndarray:
        """Coefficients <d^alpha psi_n, f> from node values of f.

        Used to Galerkin-project divergence-form right-hand sides by parts.
        """
        d = self.basis.dim
        alpha = tuple(alpha) if alpha is not None else (0,) * d
        blocks = [self._basis_block(alpha[ax]) * self.w1[:, None]
                  for ax in range(d)]
        if d == 1:
            return blocks[0].T @ values
        Q = self.x1.size
        V = values.reshape(Q, Q)
        return (blocks[0].T @ V @ blocks[1]).ravel()


_QUAD_CACHE: dict = {}


def quadrature_for(basis: MacroBasis, max_derivative: int = 6,
                   extra_degree: int = 16) -> QuadratureRule:
    key = (basis, basis.size + max_derivative, extra_degree)
    if key not in _QUAD_CACHE:
        _QUAD_CACHE[key] = QuadratureRule(
            basis, basis.size + max_derivative, extra_degree
        )
    return _QUAD_CACHE[key]


# --- spectrum -------------------------------------------------------------------


@dataclass
class SpectrumResult:
    """Eigensolve output: leading eigenpairs plus the full decomposition.

    Eigenvalue indices in the public API are 1-based, matching the usual
    enumeration lambda_1 <= lambda_2 <= ... of the discrete spectrum.
    """

    basis: MacroBasis
    count: int
    eigenvalues: np.ndarray          # first `count`
    eigenfunctions: list             # MacroFunctions, orthonormal
    clusters: list                   # list of (start, stop) 0-based, half-open
    cluster_tol: float
    all_eigenvalues: np.ndarray = field(repr=False)
    all_vectors: np.ndarray = field(repr=False)
    matrix: np.ndarray = field(repr=False)

    def cluster_of(self, j: int) -> tuple:
        """Half-open 0-based index range of the cluster containing lambda_j."""
        i = j - 1
        if i < 0 or i >= self.count:
            raise IndexError(f"eigenvalue index {j} out of computed range")
        for (a, b) in self.clusters:
            if a <= i < b:
                return (a, b)
        raise IndexError("cluster table inconsistent")

    def eigenvalue(self, j: int) -> float:
        return float(self.eigenvalues[j - 1])

    def eigenfunction(self, j: int) -> MacroFunction:
        return self.eigenfunctions[j - 1]


def _cluster_indices(vals: np.ndarray, tol: float) -> list:
    clusters = []
    start = 0
    for i in range(1, len(vals)):
        scale = max(abs(vals[i]), abs(vals[start]), 1.0)
        if vals[i] - vals[i - 1] > tol * scale:
            clusters.append((start, i))
            start = i
    clusters.append((start, len(vals)))
    return clusters


def eigensolve(L0: np.ndarray, count: int, basis: MacroBasis,
               cluster_tol: float = DEFAULT_CLUSTER_TOL) -> SpectrumResult:
    """Dense symmetric eigensolve of the assembled operator.

    count is capped at total/4 so the reported part of the spectrum stays
    well inside the basis trust region; use solve_spectrum for the doubled
    basis self-convergence guard.
    """
    if count < 1 or count > basis.total // 4:
        raise TruncationUnsafe(
            f"count {count} outside the safe range [1, {basis.total // 4}]"
        )
    vals, vecs = np.linalg.eigh(L0)
    # deterministic sign convention: largest-magnitude coefficient positive
    for k in range(vecs.shape[1]):
        i = int(np.argmax(np.abs(vecs[:, k])))
        if vecs[i, k] < 0:
            vecs[:, k] = -vecs[:, k]
    funcs = [MacroFunction(basis, vecs[:, k]) for k in range(count)]
    clusters = _cluster_indices(vals[:count], cluster_tol)
    return SpectrumResult(
        basis=basis, count=count,
        eigenvalues=vals[:count].copy(), eigenfunctions=funcs,
        clusters=clusters, cluster_tol=cluster_tol,
        all_eigenvalues=vals, all_vectors=vecs, matrix=L0,
    )


def solve_spectrum(abar: np.ndarray, W: SlowPolynomial, basis: MacroBasis,
                   count: int, cluster_tol: float = DEFAULT_CLUSTER_TOL,
                   validate: bool = False,
                   validate_rtol: float = 1e-10) -> SpectrumResult:
    """Assemble L0 and eigensolve; optionally verify basis self-convergence.

    With validate=True the first `count` eigenvalues are recomputed with the
    per-axis size doubled and must agree to validate_rtol, else
    TruncationUnsafe is raised.
    """
    spec = eigensolve(assemble_L0(abar, W, basis), count, basis, cluster_tol)
    if validate:
        big = MacroBasis(basis.dim, 2 * basis.size, basis.sigma)
        ref = np.linalg.eigvalsh(assemble_L0(abar, W, big))[:count]
        rel = np.max(np.abs(spec.eigenvalues - ref) / np.maximum(np.abs(ref), 1e-30))
        if rel > validate_rtol:
            raise TruncationUnsafe(
                f"doubling the basis moves eigenvalues by {rel:.3e} relative"
            )
    return spec


def spectral_gap(spec: SpectrumResult, j: int) -> float:
    """Distance from lambda_j to the nearest distinct eigenvalue.

    Numerically coincident copies inside lambda_j's cluster do not count.
    Raises GapUnresolved when lambda_j's cluster touches the end of the
    computed range, because the upper neighbor is then unknown.
    """
    a, b = spec.cluster_of(j)
    lam = spec.eigenvalue(j)
    if b >= spec.count:
        raise GapUnresolved(
            f"cluster of eigenvalue {j} reaches the last computed index"
        )
    gap = spec.eigenvalues[b] - lam
    if a > 0:
        gap = min(gap, lam - spec.eigenvalues[a - 1])
    return float(gap)


def resolvent_solve(spec: SpectrumResult, j: int, f: MacroFunction,
                    ortho_tol: float = 1e-10) -> MacroFunction:
    """Solve (L0 - lambda_j) u = f through the spectral sum, u: cluster-orthogonal.

    f must be orthogonal to the whole lambda_j eigenspace (cluster); raises
    NotOrthogonal with the offending projection magnitude otherwise.
    """
    a, b = spec.cluster_of(j)
    lam = spec.eigenvalue(j)
    fn = np.linalg.norm(f.coeffs)
    if fn == 0.0:
        return MacroFunction.zero(spec.basis)
    proj = spec.all_vectors[:, a:b].T @ f.coeffs
    pmag = float(np.linalg.norm(proj))
    if pmag > ortho_tol * fn:
        raise NotOrthogonal(pmag / fn)
    comps = spec.all_vectors.T @ f.coeffs
    denom = spec.all_eigenvalues - lam
    comps[a:b] = 0.0
    denom[a:b] = 1.0
    u = spec.all_vectors @ (comps / denom)
    return MacroFunction(spec.basis, u)
