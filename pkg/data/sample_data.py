import logging

import numpy as np
import pandas as pd

from logic.errors import DatasetFormatError
from logic.linalg import SpdMatrix, normalize_trace, toeplitz_rho
from logic.model import MggdParams, SampleSet
from logic.sampler import RngSeed, sample_mggd
from utils.helpers import format_float

logger = logging.getLogger(__name__)

# Parameters fitted on the first wavelet subband of two colour textures;
# used as synthetic ground truth for round-trip checks.
TEXTURE_PARAMETERS = {
    'bark': {
        'm': 0.036,
        'beta': 0.328,
        'scatter': [[0.988, 0.992, 0.883],
                    [0.992, 1.131, 0.922],
                    [0.883, 0.922, 0.881]],
    },
    'leaves': {
        'm': 0.054,
        'beta': 0.265,
        'scatter': [[0.935, 0.966, 0.871],
                    [0.966, 1.074, 0.976],
                    [0.871, 0.976, 0.991]],
    },
}

# Off-trace scatter files are rescaled when the trace misses p by more than this
SCATTER_TRACE_TOL = 1e-6


def texture_params(name):
    """
    MggdParams for one of the bundled texture parameter sets
    """
    try:
        entry = TEXTURE_PARAMETERS[name]
    except KeyError:
        raise ValueError(f"Unknown texture parameter set {name!r}; choose from {sorted(TEXTURE_PARAMETERS)}")
    return MggdParams.create(entry['scatter'], entry['m'], entry['beta'])


def scenario_params(p, beta, m, rho=None, scatter=None):
    """
    Parameters for a sampling scenario: Toeplitz scatter from rho, or an explicit matrix
    """
    if (rho is None) == (scatter is None):
        raise ValueError("Give exactly one of rho or scatter")
    matrix = toeplitz_rho(p, rho) if scatter is None else scatter
    return MggdParams(scatter=normalize_trace(matrix), scale_m=float(m), shape_beta=float(beta))


def generate_sample_data(params, n, seed):
    """
    Draw a reproducible synthetic dataset
    """
    rng_seed = seed if isinstance(seed, RngSeed) else RngSeed(int(seed))
    return sample_mggd(params, n, rng_seed)


def dataset_frame(data):
    """
    SampleSet as a DataFrame with columns x0..x{p-1}
    """
    return pd.DataFrame(data.vectors, columns=[f"x{j}" for j in range(data.dim)])


def write_dataset(data, path):
    """
    Write one observation per row with shortest round-trip float formatting
    """
    df = dataset_frame(data).apply(lambda col: col.map(format_float))
    df.to_csv(path, index=False, lineterminator="\n")


def _read_numeric_csv(path, what):
    try:
        raw = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=True)
    except FileNotFoundError:
        raise DatasetFormatError(f"{what} file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DatasetFormatError(f"Could not parse {what} file {path}: {exc}")
    return raw


def _expected_header(p):
    return [f"x{j}" for j in range(p)]


def validate_csv_data(df):
    """
    Validate a raw string frame and convert it to floats
    """
    if df.empty:
        raise DatasetFormatError("Dataset has no rows")

    # Optional single header row x0,...,x{p-1}
    first = [str(v).strip() for v in df.iloc[0].tolist()]
    if first == _expected_header(df.shape[1]):
        df = df.iloc[1:]
    elif any(v.startswith("x") for v in first):
        raise DatasetFormatError(f"Unexpected header {first}; expected {_expected_header(df.shape[1])}")

    if df.isna().any().any():
        row = int(np.argmax(df.isna().any(axis=1).to_numpy()))
        raise DatasetFormatError(f"Inconsistent column count in data row {row}")

    try:
        values = df.apply(lambda col: col.map(lambda v: float(str(v).strip()))).to_numpy(dtype=float)
    except ValueError as exc:
        raise DatasetFormatError(f"Non-numeric value in dataset: {exc}")
    return values


def read_dataset(path):
    """
    Parse a dataset CSV into a validated SampleSet
    """
    values = validate_csv_data(_read_numeric_csv(path, "dataset"))
    return SampleSet.from_array(values)


def read_scatter(path, p=None):
    """
    Read a p x p scatter CSV; it must be SPD and is rescaled to trace p if needed
    """
    raw = _read_numeric_csv(path, "scatter")
    try:
        values = raw.apply(lambda col: col.map(lambda v: float(str(v).strip()))).to_numpy(dtype=float)
    except ValueError as exc:
        raise DatasetFormatError(f"Non-numeric value in scatter file: {exc}")
    if p is not None and values.shape != (p, p):
        raise DatasetFormatError(f"Scatter file holds a {values.shape} matrix, expected {p}x{p}")

    matrix = SpdMatrix.from_array(values)
    if abs(matrix.trace - matrix.dim) > SCATTER_TRACE_TOL:
        logger.warning("Scatter trace %.6g differs from p=%d; renormalizing", matrix.trace, matrix.dim)
    return normalize_trace(matrix)
