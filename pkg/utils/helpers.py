import json
import logging
import math

import pandas as pd

REPORT_SCHEMA_VERSION = 1

# Required report fields and their JSON types
REPORT_SCHEMA = {
    'schema_version': int,
    'tool': str,
    'version': str,
    'data': str,
    'n': int,
    'p': int,
    'options': dict,
    'master_seed': (int, type(None)),
    'duration_s': float,
    'fit': dict,
}

FIT_SCHEMA = {
    'm_hat': list,
    'scale_hat': float,
    'beta_hat': float,
    'iterations': int,
    'c_trace': list,
    'alpha_residual': float,
    'converged': bool,
    'objective': float,
}

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(verbosity=0):
    """
    Configure the root logger on stderr: WARNING by default, INFO with -v, DEBUG with -vv
    """
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def format_float(value):
    """
    Shortest decimal string that parses back to the same float
    """
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)


def write_table(df, path):
    """
    Write a numeric table to CSV with round-trip float formatting
    """
    out = df.copy()
    for col in out.columns:
        if pd.api.types.is_float_dtype(out[col]):
            out[col] = out[col].map(format_float)
    out.to_csv(path, index=False, lineterminator="\n")


def dumps_json(doc):
    """
    JSON text for reports and parameters; floats keep their shortest repr
    """
    return json.dumps(doc, indent=2, sort_keys=True)


def _matches(value, kind):
    if kind is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, kind)


def validate_report(doc):
    """
    Check a report document against the shipped schema
    """
    missing = [key for key in REPORT_SCHEMA if key not in doc]
    if missing:
        raise ValueError(f"Missing required report fields: {missing}")
    for key, kind in REPORT_SCHEMA.items():
        if not _matches(doc[key], kind):
            raise ValueError(f"Report field {key!r} has the wrong type: {type(doc[key]).__name__}")
    if doc['schema_version'] != REPORT_SCHEMA_VERSION:
        raise ValueError(f"Unsupported report schema version {doc['schema_version']}")

    fit = doc['fit']
    missing = [key for key in FIT_SCHEMA if key not in fit]
    if missing:
        raise ValueError(f"Missing required fit fields: {missing}")
    for key, kind in FIT_SCHEMA.items():
        if not _matches(fit[key], kind):
            raise ValueError(f"Fit field {key!r} has the wrong type: {type(fit[key]).__name__}")
    p = doc['p']
    if len(fit['m_hat']) != p or any(len(row) != p for row in fit['m_hat']):
        raise ValueError(f"m_hat must be a {p}x{p} matrix")
    if len(fit['c_trace']) != fit['iterations']:
        raise ValueError("c_trace length must equal the iteration count")
    return doc


def build_report(report, options, data_path, n, p, duration_s, version, master_seed=None):
    """
    Report document: the fit, the options echo and run metadata
    """
    return {
        'schema_version': REPORT_SCHEMA_VERSION,
        'tool': 'mggd',
        'version': version,
        'data': str(data_path),
        'n': int(n),
        'p': int(p),
        'options': options.to_dict(),
        'master_seed': master_seed,
        'duration_s': float(duration_s),
        'fit': report.to_dict(),
    }


def create_summary_metrics(metrics):
    """
    Compact per-cell summary of a metrics table for the terminal
    """
    summary = metrics[['n', 'beta_true', 'bias_norm', 'consistency', 'beta_mean', 'beta_var',
                       'mean_iterations', 'failure_count']].copy()
    return summary.to_string(index=False, float_format=lambda v: f"{v:.4g}")
