"""
Monte Carlo harness for the estimator: bias/consistency sweeps, shape
variance sweeps and convergence traces.

Run i of the cell (N, beta) draws its data from the stream
RngSeed(master_seed, i, substream=(N, beta_key(beta))), so every cell is
reproducible on its own and results do not depend on the number of workers.
Aggregation is a fold over runs in index order.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, DimensionMismatch, MggdError
from .estimator import (FitOptions, InitKind, convergence_criteria, fit_joint, fit_scatter_fp,
                        fit_sigma_unnormalized, sigma_path_normalized, sigma_path_unnormalized)
from .linalg import SpdMatrix, normalize_trace, random_spd, toeplitz_rho
from .model import MggdParams
from .sampler import RngSeed, sample_mggd

logger = logging.getLogger(__name__)

DEFAULT_RUNS = 100
TRACE_INITS = ("identity", "scm", "true", "random")


class FitMode(str, Enum):
    KNOWN_BETA = "KnownBeta"
    JOINT_FIT = "JointFit"


class ExperimentKind(str, Enum):
    BIAS_CONSISTENCY = "bias_consistency"
    BETA_VARIANCE = "beta_variance"
    CONVERGENCE_TRACE = "convergence_trace"


def beta_key(beta):
    return int(round(beta * 1e6))


@dataclass(frozen=True)
class ExperimentConfig:
    p: int = 3
    rho: float = 0.8
    beta_true: float = 0.2
    m_true: float = 1.0
    n_grid: tuple = (100, 1000, 10000)
    runs: int = DEFAULT_RUNS
    mode: FitMode = FitMode.KNOWN_BETA
    master_seed: int = 0
    init: FitOptions = field(default_factory=FitOptions)
    name: str = "experiment"
    kind: ExperimentKind = ExperimentKind.BIAS_CONSISTENCY
    beta_grid: tuple = ()
    scatter: Optional[tuple] = None
    workers: int = 1
    trace_n: int = 200
    inits: tuple = ("identity", "scm", "true")

    def __post_init__(self):
        object.__setattr__(self, "mode", FitMode(self.mode))
        object.__setattr__(self, "kind", ExperimentKind(self.kind))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "beta_grid", tuple(float(b) for b in self.beta_grid))
        object.__setattr__(self, "inits", tuple(self.inits))
        if self.scatter is not None:
            object.__setattr__(self, "scatter", tuple(tuple(float(v) for v in row) for row in self.scatter))

        if self.p < 1:
            raise ConfigError("$.p", "must be a positive integer")
        if not self.n_grid:
            raise ConfigError("$.n_grid", "must be a nonempty list")
        if any(b <= a for a, b in zip(self.n_grid[:-1], self.n_grid[1:])):
            raise ConfigError("$.n_grid", "must be strictly ascending")
        if self.n_grid[0] < self.p + 1:
            raise ConfigError("$.n_grid[0]", f"sample sizes must be at least p + 1 = {self.p + 1}")
        if self.runs < 1:
            raise ConfigError("$.runs", "must be at least 1")
        if self.m_true <= 0:
            raise ConfigError("$.m_true", "must be positive")
        if self.workers < 1:
            raise ConfigError("$.workers", "must be at least 1")
        if self.trace_n < self.p + 1:
            raise ConfigError("$.trace_n", f"must be at least p + 1 = {self.p + 1}")
        lo, hi = self.init.beta_clamp
        for i, beta in enumerate(self.betas()):
            if not lo <= beta <= hi:
                where = f"$.beta_grid[{i}]" if self.beta_grid else "$.beta_true"
                raise ConfigError(where, f"must lie in [{lo}, {hi}]")
        for i, name in enumerate(self.inits):
            if name not in TRACE_INITS:
                raise ConfigError(f"$.inits[{i}]", f"unknown initialization {name!r}")
        if self.scatter is not None and np.shape(self.scatter) != (self.p, self.p):
            raise ConfigError("$.scatter", f"must be a {self.p}x{self.p} matrix")
        if self.kind is ExperimentKind.BETA_VARIANCE and self.mode is not FitMode.JOINT_FIT:
            raise ConfigError("$.mode", "beta_variance experiments need mode JointFit")

    def betas(self):
        return self.beta_grid or (self.beta_true,)

    def true_scatter(self):
        if self.scatter is not None:
            return normalize_trace(SpdMatrix.from_array(self.scatter))
        return normalize_trace(toeplitz_rho(self.p, self.rho))

    def true_params(self, beta=None):
        beta = self.beta_true if beta is None else beta
        return MggdParams(scatter=self.true_scatter(), scale_m=float(self.m_true), shape_beta=float(beta))

    def fit_options(self, beta):
        if self.mode is FitMode.KNOWN_BETA:
            return self.init.replace(beta_fixed=float(beta))
        return self.init.replace(beta_fixed=None)

    def seed(self, n, beta, run):
        return RngSeed(self.master_seed, run, substream=(n, beta_key(beta)))


@dataclass
class RunOutcome:
    run: int
    m_hat: Optional[np.ndarray] = None
    scale_hat: float = float("nan")
    beta_hat: float = float("nan")
    iterations: int = 0
    converged: bool = False
    sigma_unnormalized: Optional[np.ndarray] = None
    error: Optional[str] = None

    @property
    def failed(self):
        return self.error is not None


@dataclass
class MetricsRecord:
    experiment: str
    n: int
    beta_true: float
    runs: int
    bias_norm: float
    consistency: float
    sigma_bias: float
    sigma_consistency: float
    sigma_unnormalized_bias: float
    sigma_unnormalized_consistency: float
    beta_mean: float
    beta_var: float
    beta_mse: float
    mean_iterations: float
    failure_count: int
    nonconverged_count: int


METRICS_COLUMNS = [f.name for f in fields(MetricsRecord)]


@dataclass
class ConvergenceTrace:
    table: pd.DataFrame
    finals: dict
    iterations: dict
    converged: dict


def run_single(cfg, n, beta, run):
    """
    Draw one dataset and fit it; failures are captured, never raised.

    With a known shape the same dataset is also fitted by the unnormalized
    Sigma recursion so the two estimates of Sigma can be compared.
    """
    sigma_unnormalized = None
    try:
        data = sample_mggd(cfg.true_params(beta), n, cfg.seed(n, beta, run))
        opts = cfg.fit_options(beta)
        report = fit_joint(data, opts)
        if cfg.mode is FitMode.KNOWN_BETA:
            sigma, _, _ = fit_sigma_unnormalized(data, beta, opts=opts)
            sigma_unnormalized = sigma.entries.copy()
    except MggdError as exc:
        logger.warning("run %d (N=%d, beta=%g) failed: %s", run, n, beta, exc)
        return RunOutcome(run=run, error=str(exc))
    return RunOutcome(
        run=run,
        m_hat=report.m_hat.entries.copy(),
        scale_hat=report.scale_hat,
        beta_hat=report.beta_hat,
        iterations=report.iterations,
        converged=report.converged,
        sigma_unnormalized=sigma_unnormalized,
    )


def _run_single_packed(args):
    return run_single(*args)


def aggregate_runs(cfg, n, beta, outcomes):
    """Fold run outcomes (in run-index order) into one MetricsRecord."""
    ok = [o for o in outcomes if not o.failed]
    failures = len(outcomes) - len(ok)
    nan = float("nan")
    if not ok:
        return MetricsRecord(cfg.name, n, beta, len(outcomes), nan, nan, nan, nan, nan, nan, nan, nan, nan,
                             nan, failures, 0)

    truth = cfg.true_scatter().entries
    sigma_truth = cfg.m_true * truth
    m_hats = np.stack([o.m_hat for o in ok])
    sigma_hats = np.stack([o.scale_hat * o.m_hat for o in ok])
    beta_hats = np.array([o.beta_hat for o in ok])
    unnormalized = [o.sigma_unnormalized for o in ok if o.sigma_unnormalized is not None]
    if unnormalized:
        sigma_u = np.stack(unnormalized)
        sigma_u_bias = float(np.linalg.norm(sigma_u.mean(axis=0) - sigma_truth))
        sigma_u_consistency = float(np.mean(np.linalg.norm(sigma_u - sigma_truth, axis=(1, 2))))
    else:
        sigma_u_bias = sigma_u_consistency = nan

    return MetricsRecord(
        experiment=cfg.name,
        n=n,
        beta_true=beta,
        runs=len(outcomes),
        bias_norm=float(np.linalg.norm(m_hats.mean(axis=0) - truth)),
        consistency=float(np.mean(np.linalg.norm(m_hats - truth, axis=(1, 2)))),
        sigma_bias=float(np.linalg.norm(sigma_hats.mean(axis=0) - sigma_truth)),
        sigma_consistency=float(np.mean(np.linalg.norm(sigma_hats - sigma_truth, axis=(1, 2)))),
        sigma_unnormalized_bias=sigma_u_bias,
        sigma_unnormalized_consistency=sigma_u_consistency,
        beta_mean=float(beta_hats.mean()),
        beta_var=float(beta_hats.var(ddof=1)) if len(ok) > 1 else 0.0,
        beta_mse=float(np.mean((beta_hats - beta) ** 2)),
        mean_iterations=float(np.mean([o.iterations for o in ok])),
        failure_count=failures,
        nonconverged_count=sum(not o.converged for o in ok),
    )


def _sweep(cfg):
    cells = [(n, beta) for beta in cfg.betas() for n in cfg.n_grid]
    records = []
    executor = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for n, beta in cells:
            logger.info("%s: N=%d beta=%g (%d runs)", cfg.name, n, beta, cfg.runs)
            jobs = [(cfg, n, beta, run) for run in range(cfg.runs)]
            if executor is None:
                outcomes = [run_single(*job) for job in jobs]
            else:
                outcomes = list(executor.map(_run_single_packed, jobs))
            records.append(aggregate_runs(cfg, n, beta, outcomes))
    finally:
        if executor is not None:
            executor.shutdown()
    return records


def run_bias_consistency(cfg):
    """Bias ||mean(M_hat) - M|| and mean ||M_hat - M|| for every (beta, N) cell."""
    return _sweep(cfg)


def run_beta_variance(cfg):
    """Variance and MSE of the shape estimate over N (and over beta when beta_grid is set)."""
    if cfg.mode is not FitMode.JOINT_FIT:
        raise ConfigError("$.mode", "beta_variance experiments need mode JointFit")
    return _sweep(cfg)


def _trace_options(cfg, name, truth):
    if name == "identity":
        return cfg.init.replace(init=InitKind.IDENTITY, beta_fixed=None)
    if name == "scm":
        return cfg.init.replace(init=InitKind.SCM, beta_fixed=None)
    if name == "true":
        return cfg.init.replace(init=InitKind.USER, init_matrix=truth.entries, beta_fixed=None)
    if name == "random":
        start = random_spd(cfg.p, RngSeed(cfg.master_seed, 1, substream=(0,)).generator())
        return cfg.init.replace(init=InitKind.USER, init_matrix=start.entries, beta_fixed=None)
    raise ConfigError("$.inits", f"unknown initialization {name!r}")


def _pad(values, length):
    return list(values) + [float("nan")] * (length - len(values))


def run_convergence_trace(cfg, inits=None, n=None, data=None):
    """
    C(k) per initialization on one dataset, plus D(k) for the normalized
    and unnormalized Sigma recursions started from the same matrix.

    The dataset is sampled from the configured scenario unless `data` is given.
    """
    inits = tuple(cfg.inits if inits is None else inits)
    beta = cfg.beta_true
    truth = cfg.true_scatter()
    if data is None:
        n = cfg.trace_n if n is None else int(n)
        data = sample_mggd(cfg.true_params(beta), n, cfg.seed(n, beta, 0))
    elif data.dim != cfg.p:
        raise DimensionMismatch(f"dataset has dimension {data.dim}, scenario has p = {cfg.p}")

    columns, finals, iterations, converged = {}, {}, {}, {}
    for name in inits:
        report = fit_scatter_fp(data, beta, _trace_options(cfg, name, truth))
        columns[f"C_{name}"] = report.c_trace
        finals[name] = report.m_hat
        iterations[name] = report.iterations
        converged[name] = report.converged

    normalized = sigma_path_normalized(data, beta, data.scm(), cfg.init.max_iter, cfg.init.tol_c)
    unnormalized = sigma_path_unnormalized(data, beta, normalized[0], cfg.init.max_iter, cfg.init.tol_c)
    columns["D_normalized"] = convergence_criteria(normalized)
    columns["D_unnormalized"] = convergence_criteria(unnormalized)
    iterations["normalized"] = len(columns["D_normalized"])
    iterations["unnormalized"] = len(columns["D_unnormalized"])

    length = max(len(v) for v in columns.values())
    table = pd.DataFrame({"k": np.arange(length)})
    for name, values in columns.items():
        table[name] = _pad(values, length)
    return ConvergenceTrace(table=table, finals=finals, iterations=iterations, converged=converged)


def metrics_frame(records):
    return pd.DataFrame([vars(r) for r in records], columns=METRICS_COLUMNS)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    metrics: Optional[pd.DataFrame]
    traces: dict


def run_experiment(cfg):
    """Dispatch on cfg.kind; every experiment also records a convergence trace at trace_n."""
    metrics = None
    if cfg.kind is ExperimentKind.BIAS_CONSISTENCY:
        metrics = metrics_frame(run_bias_consistency(cfg))
    elif cfg.kind is ExperimentKind.BETA_VARIANCE:
        metrics = metrics_frame(run_beta_variance(cfg))
    trace = run_convergence_trace(cfg)
    return ExperimentResult(config=cfg, metrics=metrics, traces={f"trace_n{cfg.trace_n}": trace.table})
