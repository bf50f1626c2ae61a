"""
Experiment configuration documents.

A config is a JSON object; unknown keys and ill-typed values are reported
with the JSON path of the offending field.
"""
import json
from pathlib import Path

from logic.errors import ConfigError
from logic.estimator import FitOptions
from logic.experiments import ExperimentConfig, ExperimentKind, FitMode
from data.sample_data import TEXTURE_PARAMETERS

PRESET_DIR = Path(__file__).parent / "presets"

FIT_KEYS = {
    "tol_c": float,
    "max_iter": int,
    "beta_init": float,
    "init": str,
    "newton_max_step": float,
}

CONFIG_KEYS = {
    "name": str,
    "kind": str,
    "p": int,
    "rho": float,
    "beta_true": float,
    "m_true": float,
    "n_grid": list,
    "runs": int,
    "mode": str,
    "master_seed": int,
    "init": dict,
    "beta_grid": list,
    "scatter": list,
    "texture": str,
    "workers": int,
    "trace_n": int,
    "inits": list,
}


def _typed(value, kind, path):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise ConfigError(path, f"expected {kind.__name__}, got {value!r}")
    return value


def _check_keys(doc, allowed, path):
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected a JSON object")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown field")
    return {key: _typed(value, allowed[key], f"{path}.{key}") for key, value in doc.items()}


def _number_list(values, path, kind):
    return [_typed(v, kind, f"{path}[{i}]") for i, v in enumerate(values)]


def _enum(value, enum, path):
    try:
        return enum(value)
    except ValueError:
        choices = ", ".join(e.value for e in enum)
        raise ConfigError(path, f"expected one of {choices}, got {value!r}")


def parse_fit_options(doc, path="$.init"):
    fields = _check_keys(doc, FIT_KEYS, path)
    if fields.get("init", "scm") not in ("identity", "scm"):
        raise ConfigError(f"{path}.init", "experiments support 'identity' or 'scm'")
    try:
        return FitOptions(**fields)
    except ValueError as exc:
        raise ConfigError(path, str(exc))


def parse_experiment_config(doc):
    """Build an ExperimentConfig from a decoded JSON document."""
    fields = _check_keys(doc, CONFIG_KEYS, "$")

    if "n_grid" in fields:
        fields["n_grid"] = _number_list(fields["n_grid"], "$.n_grid", int)
    if "beta_grid" in fields:
        fields["beta_grid"] = _number_list(fields["beta_grid"], "$.beta_grid", float)
    if "inits" in fields:
        fields["inits"] = [_typed(v, str, f"$.inits[{i}]") for i, v in enumerate(fields["inits"])]
    if "scatter" in fields:
        fields["scatter"] = [_number_list(_typed(row, list, f"$.scatter[{i}]"), f"$.scatter[{i}]", float)
                             for i, row in enumerate(fields["scatter"])]
    if "mode" in fields:
        fields["mode"] = _enum(fields["mode"], FitMode, "$.mode")
    if "kind" in fields:
        fields["kind"] = _enum(fields["kind"], ExperimentKind, "$.kind")
    if "init" in fields:
        fields["init"] = parse_fit_options(fields["init"])
    if "master_seed" in fields and not 0 <= fields["master_seed"] < 2**64:
        raise ConfigError("$.master_seed", "must be a 64-bit unsigned integer")

    texture = fields.pop("texture", None)
    if texture is not None:
        if texture not in TEXTURE_PARAMETERS:
            raise ConfigError("$.texture", f"unknown texture parameter set {texture!r}")
        if "scatter" in fields:
            raise ConfigError("$.texture", "give either texture or scatter, not both")
        entry = TEXTURE_PARAMETERS[texture]
        fields["scatter"] = entry["scatter"]
        fields["p"] = len(entry["scatter"])
        fields.setdefault("m_true", entry["m"])
        fields.setdefault("beta_true", entry["beta"])

    try:
        return ExperimentConfig(**fields)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("$", str(exc))


def load_experiment_config(source):
    """
    Load a config from a JSON file path or from `preset:NAME` for a bundled preset.
    """
    source = str(source)
    path = PRESET_DIR / f"{source[len('preset:'):]}.json" if source.startswith("preset:") else Path(source)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("$", f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON in {path}: {exc}")
    return parse_experiment_config(doc)


def list_presets():
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))
