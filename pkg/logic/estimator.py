"""
Maximum-likelihood estimation of the MGGD parameters.

The scatter matrix solves the fixed-point equation M = f(M) where

    f(M) = (p / sum_j y_j^beta) * sum_i x_i x_i^T y_i^(beta - 1),   y_i = x_i^T M^-1 x_i.

f is homogeneous of degree one, so the solution is unique only up to scale;
the recursion renormalizes to Tr(M) = p after every application. The shape
parameter is the root of the likelihood equation alpha(beta) = 0, tracked by
safeguarded Newton-Raphson steps interleaved with the scatter updates, and
the scale has a closed form once M and beta are known.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy import optimize, special

from .errors import DegenerateData, DimensionMismatch, EmptyTrace, NotConverged, ZeroDerivative
from .linalg import SpdMatrix, as_array, as_spd, normalize_trace, relative_frobenius
from .model import (BETA_CLAMP, Y_FLOOR, check_beta, clamp_beta, digamma,
                    log_profile_objective, sample_quadratic_forms, trigamma)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100
DEFAULT_BETA_INIT = 0.5
DEFAULT_NEWTON_STEP = 0.2

# Tolerated decrease of log F between two normalized iterates
ASCENT_SLACK = 1e-10
ZERO_DERIVATIVE = 1e-12
BRACKET_POINTS = 16


class InitKind(str, Enum):
    IDENTITY = "identity"
    SCM = "scm"
    USER = "user"


@dataclass(frozen=True)
class FitOptions:
    tol_c: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    beta_fixed: Optional[float] = None
    beta_init: float = DEFAULT_BETA_INIT
    init: InitKind = InitKind.SCM
    init_matrix: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    newton_max_step: float = DEFAULT_NEWTON_STEP
    beta_clamp: tuple = BETA_CLAMP

    def __post_init__(self):
        object.__setattr__(self, "init", InitKind(self.init))
        object.__setattr__(self, "beta_clamp", tuple(float(b) for b in self.beta_clamp))
        lo, hi = self.beta_clamp
        if not 0.0 < lo < hi < 1.0:
            raise ValueError(f"beta_clamp must satisfy 0 < lo < hi < 1, got {self.beta_clamp}")
        if not self.tol_c > 0:
            raise ValueError(f"tol_c must be positive, got {self.tol_c}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")
        if not lo <= self.beta_init <= hi:
            raise ValueError(f"beta_init {self.beta_init} outside {self.beta_clamp}")
        if self.beta_fixed is not None and not lo <= self.beta_fixed <= hi:
            raise ValueError(f"beta_fixed {self.beta_fixed} outside {self.beta_clamp}")
        if not self.newton_max_step > 0:
            raise ValueError(f"newton_max_step must be positive, got {self.newton_max_step}")
        if self.init is InitKind.USER:
            if self.init_matrix is None:
                raise ValueError("init 'user' needs an init_matrix")
            object.__setattr__(self, "init_matrix", as_array(self.init_matrix).copy())

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {
            "tol_c": self.tol_c,
            "max_iter": int(self.max_iter),
            "beta_fixed": self.beta_fixed,
            "beta_init": self.beta_init,
            "init": self.init.value,
            "init_matrix": None if self.init_matrix is None else self.init_matrix.tolist(),
            "newton_max_step": self.newton_max_step,
            "beta_clamp": list(self.beta_clamp),
        }


@dataclass
class FitReport:
    m_hat: SpdMatrix
    scale_hat: float
    beta_hat: float
    iterations: int
    c_trace: list
    alpha_residual: float
    converged: bool
    objective: float
    beta_trace: list = field(default_factory=list)
    ascent_violations: int = 0

    @property
    def sigma_hat(self):
        return self.m_hat.scaled(self.scale_hat)

    def to_dict(self):
        return {
            "m_hat": self.m_hat.entries.tolist(),
            "scale_hat": self.scale_hat,
            "beta_hat": self.beta_hat,
            "iterations": self.iterations,
            "c_trace": list(self.c_trace),
            "alpha_residual": self.alpha_residual,
            "converged": self.converged,
            "objective": self.objective,
            "beta_trace": list(self.beta_trace),
            "ascent_violations": self.ascent_violations,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            m_hat=SpdMatrix.from_array(doc["m_hat"]),
            scale_hat=float(doc["scale_hat"]),
            beta_hat=float(doc["beta_hat"]),
            iterations=int(doc["iterations"]),
            c_trace=[float(c) for c in doc["c_trace"]],
            alpha_residual=float(doc["alpha_residual"]),
            converged=bool(doc["converged"]),
            objective=float(doc["objective"]),
            beta_trace=[float(b) for b in doc.get("beta_trace", [])],
            ascent_violations=int(doc.get("ascent_violations", 0)),
        )


def _check_dims(m, data):
    if m.dim != data.dim:
        raise DimensionMismatch(f"matrix dimension {m.dim} does not match data dimension {data.dim}")


def fp_map(m, data, beta):
    """One application of the fixed-point map f(M)."""
    beta = check_beta(beta)
    m = as_spd(m)
    _check_dims(m, data)
    log_y = np.log(sample_quadratic_forms(m, data))
    # p * y_i^(beta-1) / sum_j y_j^beta
    w = data.dim * np.exp((beta - 1.0) * log_y - special.logsumexp(beta * log_y))
    x = data.vectors
    return SpdMatrix.from_array((x.T * w) @ x)


def log_profile_gradient(m, data, beta):
    """
    Gradient of log F at M: M^-1 (f(M) - M) M^-1.

    The gradient of F itself is F(M) times this matrix.
    """
    m = as_spd(m)
    f = fp_map(m, data, beta)
    left = m.solve(f.entries - m.entries)
    g = m.solve(left.T)
    return 0.5 * (g + g.T)


def initial_matrix(data, opts):
    if opts.init is InitKind.IDENTITY:
        m0 = np.eye(data.dim)
    elif opts.init is InitKind.SCM:
        m0 = data.scm()
    else:
        m0 = opts.init_matrix
        if m0.shape != (data.dim, data.dim):
            raise DimensionMismatch(f"initial matrix has shape {m0.shape}, data dimension is {data.dim}")
    return normalize_trace(m0)


def scale_from_quadratic_forms(y, beta, p):
    """m = [beta/(pN) sum_i y_i^beta]^(1/beta) evaluated in logs."""
    y = np.asarray(y, dtype=float)
    log_sum = special.logsumexp(beta * np.log(y))
    return float(np.exp((np.log(beta) - np.log(p * y.size) + log_sum) / beta))


def estimate_scale(m, data, beta):
    """Closed-form scale estimate for a given scatter and shape."""
    beta = check_beta(beta)
    m = as_spd(m)
    _check_dims(m, data)
    return scale_from_quadratic_forms(sample_quadratic_forms(m, data), beta, data.dim)


def _log_moments(beta, y):
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise DegenerateData("empty sample")
    small = y < Y_FLOOR
    if small.any():
        raise DegenerateData("quadratic form underflows", row=int(np.argmax(small)))
    log_y = np.log(y)
    log_sum = special.logsumexp(beta * log_y)
    w = np.exp(beta * log_y - log_sum)
    mean_log = float(np.dot(w, log_y))
    return log_y, log_sum, w, mean_log


def alpha_equation(beta, y, p):
    """
    Likelihood equation for the shape parameter (zero at the MLE).

    The sums of y_i^beta are formed with a log-sum-exp, and the weighted
    mean of log y_i uses the normalized weights y_i^beta / sum_j y_j^beta.
    """
    beta = check_beta(beta)
    _, log_sum, _, mean_log = _log_moments(beta, y)
    n = np.size(y)
    pn = p * n
    return float(pn / 2.0 * mean_log
                 - pn / (2.0 * beta) * (digamma(p / (2.0 * beta)) + np.log(2.0))
                 - n
                 - pn / (2.0 * beta) * (np.log(beta) - np.log(pn) + log_sum))


def alpha_derivative(beta, y, p):
    """Analytic d alpha / d beta."""
    beta = check_beta(beta)
    log_y, log_sum, w, mean_log = _log_moments(beta, y)
    n = np.size(y)
    pn = p * n
    a = p / (2.0 * beta)
    var_log = float(np.dot(w, (log_y - mean_log) ** 2))
    log_scale = np.log(beta) - np.log(pn) + log_sum
    return float(pn / 2.0 * var_log
                 + pn / (2.0 * beta**2) * (digamma(a) + np.log(2.0))
                 + pn * a / (2.0 * beta**2) * trigamma(a)
                 + pn / (2.0 * beta**2) * log_scale
                 - pn / (2.0 * beta) * (1.0 / beta + mean_log))


def bounded_beta_update(beta, step, opts):
    """Apply a Newton step clipped to +-newton_max_step and clamp the result."""
    step = float(np.clip(step, -opts.newton_max_step, opts.newton_max_step))
    return clamp_beta(beta + step, opts.beta_clamp)


def newton_beta_step(beta, y, p, opts=None):
    """One safeguarded Newton-Raphson step on alpha(beta) = 0."""
    opts = opts or FitOptions()
    value = alpha_equation(beta, y, p)
    slope = alpha_derivative(beta, y, p)
    if abs(slope) < ZERO_DERIVATIVE:
        raise ZeroDerivative(f"alpha'({beta:.6g}) = {slope:.3g}; likelihood is flat")
    return bounded_beta_update(beta, -value / slope, opts)


def bracket_alpha_root(y, p, clamp=BETA_CLAMP, n_points=BRACKET_POINTS):
    """First sign change of alpha on an even grid over the clamp range, or None."""
    grid = np.linspace(clamp[0], clamp[1], n_points)
    values = [alpha_equation(b, y, p) for b in grid]
    for lo, hi, v_lo, v_hi in zip(grid[:-1], grid[1:], values[:-1], values[1:]):
        if v_lo == 0.0:
            return lo, lo
        if np.sign(v_lo) != np.sign(v_hi):
            return float(lo), float(hi)
    return None


def _bisect_alpha(y, p, clamp):
    bracket = bracket_alpha_root(y, p, clamp)
    if bracket is None:
        raise NotConverged("no sign change of alpha inside the shape range")
    lo, hi = bracket
    if lo == hi:
        return lo
    logger.info("bisecting alpha on [%.4g, %.4g]", lo, hi)
    return float(optimize.bisect(alpha_equation, lo, hi, args=(y, p), xtol=1e-14))


def _beta_update(beta, y, p, opts):
    try:
        return newton_beta_step(beta, y, p, opts)
    except ZeroDerivative as exc:
        logger.info("%s; falling back to bisection", exc)
        return _bisect_alpha(y, p, opts.beta_clamp)


def solve_beta(y, p, opts=None, beta0=None, tol=1e-8, max_steps=50):
    """
    Iterate Newton steps on alpha with M held fixed.

    Returns (beta, steps). Raises NotConverged when |alpha| stays above
    `tol`, e.g. when the root lies outside the clamp range.
    """
    opts = opts or FitOptions()
    beta = opts.beta_init if beta0 is None else beta0
    for step in range(1, max_steps + 1):
        beta = _beta_update(beta, y, p, opts)
        if abs(alpha_equation(beta, y, p)) < tol:
            return beta, step
    raise NotConverged(f"|alpha| >= {tol:g} after {max_steps} Newton steps (beta={beta:.6g})")


def _fit(data, opts, beta, estimate_beta):
    data.check_estimable()
    p = data.dim
    m = initial_matrix(data, opts)
    c_trace, beta_trace = [], [beta]
    violations = 0
    prev_objective = None
    converged = False
    logger.info("fitting N=%d p=%d (%s beta)", data.count, p, "joint" if estimate_beta else "known")

    for k in range(int(opts.max_iter)):
        m_next = normalize_trace(fp_map(m, data, beta))
        c = relative_frobenius(m_next, m)
        c_trace.append(c)
        m = m_next

        d_beta = 0.0
        if estimate_beta:
            y = sample_quadratic_forms(m, data)
            try:
                beta_next = _beta_update(beta, y, p, opts)
            except NotConverged as exc:
                logger.warning("shape update failed at iteration %d: %s", k + 1, exc)
                break
            d_beta = abs(beta_next - beta)
            beta = beta_next
            beta_trace.append(beta)
        else:
            objective = log_profile_objective(m, data, beta)
            if prev_objective is not None and \
                    objective < prev_objective - ASCENT_SLACK * max(1.0, abs(prev_objective)):
                violations += 1
                logger.warning("log F decreased at iteration %d: %.12g -> %.12g",
                               k + 1, prev_objective, objective)
            prev_objective = objective

        logger.debug("iteration %d: C=%.3e beta=%.6f", k + 1, c, beta)
        if c < opts.tol_c and d_beta < opts.tol_c:
            converged = True
            break

    if not converged:
        logger.warning("fit stopped after %d iterations without convergence (last C=%.3e)",
                       len(c_trace), c_trace[-1] if c_trace else float("nan"))

    y = sample_quadratic_forms(m, data)
    report = FitReport(
        m_hat=m,
        scale_hat=scale_from_quadratic_forms(y, beta, p),
        beta_hat=float(beta),
        iterations=len(c_trace),
        c_trace=c_trace,
        alpha_residual=abs(alpha_equation(beta, y, p)),
        converged=converged,
        objective=log_profile_objective(m, data, beta),
        beta_trace=beta_trace,
        ascent_violations=violations,
    )
    logger.info("fit finished: %d iterations, converged=%s, beta=%.4f, m=%.4g",
                report.iterations, converged, report.beta_hat, report.scale_hat)
    return report


def fit_scatter_fp(data, beta, opts=None):
    """Normalized fixed-point recursion for M with a known shape parameter."""
    opts = opts or FitOptions()
    lo, hi = opts.beta_clamp
    if not lo <= beta <= hi:
        raise ValueError(f"shape parameter {beta} outside the working range {opts.beta_clamp}")
    return _fit(data, opts, float(beta), estimate_beta=False)


def fit_joint(data, opts=None):
    """
    Joint estimation of (M, m, beta).

    Each outer iteration applies one normalized scatter update followed by
    one Newton step on beta; m is computed at the end. With
    `opts.beta_fixed` set this is exactly `fit_scatter_fp`.
    """
    opts = opts or FitOptions()
    if opts.beta_fixed is not None:
        return fit_scatter_fp(data, opts.beta_fixed, opts)
    return _fit(data, opts, float(opts.beta_init), estimate_beta=True)


def convergence_criteria(trace):
    """Relative Frobenius steps ||A_{k+1} - A_k|| / ||A_k|| along a sequence of matrices."""
    trace = [as_array(a) for a in trace]
    if len(trace) < 2:
        raise EmptyTrace("need at least two iterates")
    return [relative_frobenius(nxt, cur) for cur, nxt in zip(trace[:-1], trace[1:])]


def scatter_path(data, beta, m0, n_steps, normalize=True):
    """Iterates M_0, ..., M_n of the fixed-point recursion, with or without renormalization."""
    path = [normalize_trace(m0) if normalize else as_spd(m0)]
    for _ in range(n_steps):
        nxt = fp_map(path[-1], data, beta)
        path.append(normalize_trace(nxt) if normalize else nxt)
    return path


def sigma_fixed_point_step(sigma, data, beta):
    """
    Known-shape recursion written directly for Sigma = m M:

        Sigma <- (beta / N) sum_i x_i x_i^T / (x_i^T Sigma^-1 x_i)^(1 - beta).

    It has the same fixed point as the scale/scatter decomposition but no
    trace renormalization.
    """
    beta = check_beta(beta)
    sigma = as_spd(sigma)
    _check_dims(sigma, data)
    y = sample_quadratic_forms(sigma, data)
    w = beta * np.power(y, beta - 1.0) / data.count
    x = data.vectors
    return SpdMatrix.from_array((x.T * w) @ x)


def _stop_path(path, tol):
    return len(path) >= 2 and relative_frobenius(path[-1], path[-2]) < tol


def sigma_path_unnormalized(data, beta, sigma0, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL):
    """Sigma iterates of the unnormalized recursion, stopped once D(k) < tol."""
    path = [as_spd(sigma0)]
    while len(path) <= max_iter and not _stop_path(path, tol):
        path.append(sigma_fixed_point_step(path[-1], data, beta))
    return path


def sigma_path_normalized(data, beta, m0, max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL):
    """A_k = m_k M_k along the trace-normalized recursion, stopped once D(k) < tol."""
    m = normalize_trace(m0)
    path = [m.scaled(estimate_scale(m, data, beta))]
    while len(path) <= max_iter and not _stop_path(path, tol):
        m = normalize_trace(fp_map(m, data, beta))
        path.append(m.scaled(estimate_scale(m, data, beta)))
    return path


def fit_sigma_unnormalized(data, beta, sigma0=None, opts=None):
    """
    Estimate Sigma with the unnormalized known-shape recursion.

    Returns (sigma, d_trace, converged).
    """
    opts = opts or FitOptions()
    data.check_estimable()
    sigma0 = data.scm() if sigma0 is None else sigma0
    path = sigma_path_unnormalized(data, beta, sigma0, opts.max_iter, opts.tol_c)
    d_trace = convergence_criteria(path)
    converged = d_trace[-1] < opts.tol_c
    if not converged:
        logger.warning("unnormalized recursion stopped after %d iterations (last D=%.3e)",
                       len(d_trace), d_trace[-1])
    return path[-1], d_trace, converged

