"""
MGGD density, profile likelihood and the special functions the estimators use.

All likelihood quantities are evaluated in the log domain: for small shape
parameters the exponents p/beta reach several hundreds.
"""
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DegenerateData, DimensionMismatch, NonPositiveArgument
from .linalg import SpdMatrix, as_spd, quadratic_form

# Working range of the shape parameter in every estimation path
BETA_CLAMP = (0.01, 0.99)

# Quadratic forms below this are treated as a degenerate sample
Y_FLOOR = 1e-300

TRACE_TOL = 1e-9


def clamp_beta(beta, clamp=BETA_CLAMP):
    return float(min(max(beta, clamp[0]), clamp[1]))


def check_beta(beta):
    """Shape parameters accepted by model evaluations: (0, 1], 1 being the Gaussian case."""
    if not (np.isfinite(beta) and 0.0 < beta <= 1.0):
        raise ValueError(f"shape parameter must lie in (0, 1], got {beta}")
    return float(beta)


@dataclass(frozen=True)
class MggdParams:
    scatter: SpdMatrix
    scale_m: float
    shape_beta: float

    def __post_init__(self):
        p = self.scatter.dim
        if abs(self.scatter.trace - p) > TRACE_TOL:
            raise ValueError(f"scatter trace must equal {p}, got {self.scatter.trace}")
        if not (np.isfinite(self.scale_m) and self.scale_m > 0):
            raise NonPositiveArgument(f"scale m must be positive, got {self.scale_m}")
        check_beta(self.shape_beta)

    @classmethod
    def create(cls, scatter, scale_m, shape_beta):
        return cls(scatter=as_spd(scatter), scale_m=float(scale_m), shape_beta=float(shape_beta))

    @property
    def dim(self):
        return self.scatter.dim

    @property
    def sigma(self):
        """Scatter of the stochastic representation, Sigma = m M."""
        return self.scatter.scaled(self.scale_m)

    def to_dict(self):
        return {
            "p": self.dim,
            "m": self.scale_m,
            "beta": self.shape_beta,
            "scatter": self.scatter.entries.tolist(),
        }


@dataclass(frozen=True)
class SampleSet:
    """N observations of dimension p stored as an (N, p) array."""
    vectors: np.ndarray

    @classmethod
    def from_array(cls, x):
        x = np.array(x, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
            raise DimensionMismatch(f"expected an (N, p) array, got shape {x.shape}")
        bad = ~np.all(np.isfinite(x), axis=1)
        if bad.any():
            raise DegenerateData("observation has non-finite entries", row=int(np.argmax(bad)))
        zero = ~np.any(x != 0.0, axis=1)
        if zero.any():
            raise DegenerateData("observation is the zero vector", row=int(np.argmax(zero)))
        x.setflags(write=False)
        return cls(vectors=x)

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def count(self):
        return self.vectors.shape[0]

    def check_estimable(self):
        """
        Proxy for the general-position hypothesis: N >= p + 1 and full column rank.

        The exact condition (every p-subset independent) holds almost surely
        for continuous data and is not checked.
        """
        if self.count < self.dim + 1:
            raise DegenerateData(f"need at least p + 1 = {self.dim + 1} observations, got {self.count}")
        if np.linalg.matrix_rank(self.vectors) < self.dim:
            raise DegenerateData(f"observations do not span R^{self.dim}")
        return self

    def scm(self):
        """Sample covariance sum x x^T / N (zero mean)."""
        return self.vectors.T @ self.vectors / self.count

    def scaled(self, c):
        return SampleSet.from_array(c * self.vectors)


def log_gamma(a):
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise NonPositiveArgument(f"log_gamma needs a positive argument, got {a}")
    return special.gammaln(a)


def digamma(a):
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise NonPositiveArgument(f"digamma needs a positive argument, got {a}")
    return special.psi(a)


def trigamma(a):
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise NonPositiveArgument(f"trigamma needs a positive argument, got {a}")
    return special.polygamma(1, a)


def log_density_generator(y, m, beta, p):
    """log h_{m,beta}(y)."""
    beta = check_beta(beta)
    if m <= 0:
        raise NonPositiveArgument(f"scale m must be positive, got {m}")
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("density generator is defined for y >= 0")
    a = p / (2.0 * beta)
    log_const = (np.log(beta) + special.gammaln(p / 2.0) - (p / 2.0) * np.log(np.pi)
                 - special.gammaln(a) - a * np.log(2.0) - (p / 2.0) * np.log(m))
    return log_const - np.power(y / m, beta) / 2.0


def density_generator(y, m, beta, p):
    return np.exp(log_density_generator(y, m, beta, p))


def log_pdf(x, params):
    """log p(x | M, m, beta); `x` is a p-vector or an (N, p) array."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.dim:
        raise DimensionMismatch(f"vector length {x.shape[-1]} does not match dimension {params.dim}")
    y = quadratic_form(params.scatter, x)
    return -0.5 * params.scatter.logdet() + log_density_generator(
        y, params.scale_m, params.shape_beta, params.dim)


def log_likelihood(data, params):
    return float(np.sum(log_pdf(data.vectors, params)))


def sample_quadratic_forms(m, data):
    """y_i = x_i^T M^-1 x_i; a vanishing value makes the sample degenerate."""
    y = np.atleast_1d(quadratic_form(m, data.vectors))
    small = y < Y_FLOOR
    if small.any():
        raise DegenerateData("quadratic form underflows", row=int(np.argmax(small)))
    return y


def log_sum_powers(y, beta):
    """log sum_i y_i^beta, accumulated as a log-sum-exp."""
    return float(special.logsumexp(beta * np.log(y)))


def log_profile_objective(m, data, beta):
    """
    log F(M) = -log|M| - (p/beta) log sum_i y_i^beta.

    F is the likelihood with the scale replaced by its closed-form estimate
    (raised to the power 2/N); it is invariant under M -> c M.
    """
    beta = check_beta(beta)
    m = as_spd(m)
    y = sample_quadratic_forms(m, data)
    return -m.logdet() - (data.dim / beta) * log_sum_powers(y, beta)
