"""
Small dense symmetric positive-definite kernel.

Everything that needs M^-1 goes through the Cholesky factor computed once at
construction; explicit inverses are never formed.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, InvalidRho, NotPositiveDefinite, NotSymmetric

# Asymmetry absorbed by averaging; anything larger is rejected
SYMMETRY_TOL = 1e-9
NORMALIZED_TRACE_ULPS = 16


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """
    Immutable SPD matrix with its lower Cholesky factor.

    Build instances with `SpdMatrix.from_array`; the factor is computed
    eagerly so the value can be shared between threads.
    """
    entries: np.ndarray
    factor: np.ndarray

    @classmethod
    def from_array(cls, a):
        a = np.array(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NotPositiveDefinite("matrix has non-finite entries")

        asym = np.abs(a - a.T)
        if np.any(asym > SYMMETRY_TOL * np.maximum(1.0, np.abs(a))):
            raise NotSymmetric(f"matrix is not symmetric (max asymmetry {asym.max():.3g})")
        a = 0.5 * (a + a.T)

        factor = cholesky(a)
        a.setflags(write=False)
        factor.setflags(write=False)
        return cls(entries=a, factor=factor)

    @property
    def dim(self):
        return self.entries.shape[0]

    @property
    def trace(self):
        return float(np.trace(self.entries))

    def logdet(self):
        """log|M| from the Cholesky diagonal."""
        return 2.0 * float(np.sum(np.log(np.diag(self.factor))))

    def solve(self, b):
        """M^-1 b through the cached factor."""
        return linalg.cho_solve((self.factor, True), b)

    def scaled(self, c):
        return SpdMatrix.from_array(c * self.entries)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __repr__(self):
        return f"SpdMatrix(dim={self.dim}, trace={self.trace:.6g})"


def as_array(m):
    if isinstance(m, SpdMatrix):
        return m.entries
    return np.asarray(m, dtype=float)


def as_spd(m):
    if isinstance(m, SpdMatrix):
        return m
    return SpdMatrix.from_array(m)


def cholesky(m):
    """
    Lower-triangular L with L L^T = M.

    Raises NotPositiveDefinite when a pivot is not strictly positive.
    """
    if isinstance(m, SpdMatrix):
        return m.factor.copy()
    a = np.asarray(m, dtype=float)
    try:
        factor = linalg.cholesky(a, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from exc
    if np.any(np.diag(factor) <= 0.0):
        raise NotPositiveDefinite("Cholesky pivot is not positive")
    return factor


def quadratic_form(m, x):
    """
    x^T M^-1 x via a triangular solve.

    `x` may be a single p-vector or an (N, p) array of row vectors, in which
    case one value per row is returned.
    """
    m = as_spd(m)
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.ndim > 2:
        raise DimensionMismatch(f"expected a vector or an (N, {m.dim}) array, got shape {x.shape}")
    if x.shape[-1] != m.dim:
        raise DimensionMismatch(f"vector length {x.shape[-1]} does not match dimension {m.dim}")
    z = linalg.solve_triangular(m.factor, np.atleast_2d(x).T, lower=True)
    y = np.einsum("ij,ij->j", z, z)
    return float(y[0]) if x.ndim == 1 else y


def normalize_trace(m):
    """
    Rescale M so that Tr(M) = p.

    A matrix whose trace is already within NORMALIZED_TRACE_ULPS ulps of p is
    returned unchanged, so normalize_trace(normalize_trace(M)) is bitwise
    equal to normalize_trace(M).
    """
    m = as_spd(m)
    p = m.dim
    tr = np.trace(m.entries)
    if abs(tr - p) <= NORMALIZED_TRACE_ULPS * np.spacing(float(p)):
        return m
    return SpdMatrix.from_array((p / tr) * m.entries)


def toeplitz_rho(p, rho):
    """Scatter with entries rho^|i-j| used in the simulation scenarios."""
    if not 0.0 <= rho < 1.0:
        raise InvalidRho(f"rho must lie in [0, 1), got {rho}")
    if p < 1:
        raise DimensionMismatch(f"dimension must be positive, got {p}")
    return SpdMatrix.from_array(linalg.toeplitz(rho ** np.arange(p)))


def loewner_geq(a, b, tol=0.0):
    """True when A - B is positive semidefinite up to `tol`."""
    a, b = as_array(a), as_array(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    d = a - b
    return bool(linalg.eigvalsh(0.5 * (d + d.T))[0] >= -tol)


def min_eigenvalue(a):
    a = as_array(a)
    return float(linalg.eigvalsh(0.5 * (a + a.T))[0])


def factor_sqrt(s):
    """
    A with A A^T = S.

    The Cholesky factor is returned: A u has the same law for u uniform on
    the sphere whichever square root is used.
    """
    return cholesky(as_spd(s))


def relative_frobenius(a, b):
    """||A - B||_F / ||B||_F."""
    a, b = as_array(a), as_array(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def random_spd(p, rng, ridge=0.1):
    """G G^T + ridge*I with G standard normal; well conditioned by construction."""
    g = rng.standard_normal((p, p))
    return SpdMatrix.from_array(g @ g.T + ridge * np.eye(p))
