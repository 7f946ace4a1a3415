"""Configuration management for pds-sampler experiments."""

from __future__ import annotations
import copy
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .filters import (
    ParametricFilterSpec,
    StatisticalFilterSpec,
    build_parametric_r,
    build_space_a,
    build_statistical_r,
    load_samples,
    uniform_a,
)
from .grid import Field, read_grid
from .precondition import Preconditioner, SkewOperator
from .sampler import SamplerConfig, StepSchedule, stable_step_size
from .targets import ScoreTarget, target_from_config

logger = logging.getLogger(__name__)

METRIC_MODES = ("auto", "dense", "spectral")
PRECONDITIONERS = ("none", "identity", "parametric", "statistical", "file")

# Sampler names become output file names
SAMPLER_NAME = re.compile(r"[A-Za-z0-9][A-Za-z0-9_.-]*")

# Stream id for exact draws feeding statistical filters
FILTER_STREAM = 0x5EED

DEFAULT_CONFIG: Dict[str, Any] = {
    "experiment": {
        "seed": 0,
        "chains": 64,
        "checkpoint_stride": 10,
        "out_dir": "pds_runs",
        "metric_mode": "auto",
        "threshold": 0.2,
        "max_iterations": 2000,
        "step_fraction": 0.25,
        "stop_at_threshold": False,
    },
    "target": {
        "kind": "gaussian",
        "shape": [1, 4, 4],
        "mean": 0.0,
        "variances": 1.0,
    },
    "filters": {
        "lambda": 2.0,
        "alpha": 5.0,
        "count": 200,
    },
    "samplers": {},
}

SAMPLER_DEFAULTS: Dict[str, Any] = {
    "schedule": "constant",
    "step": "auto",
    "preconditioner": "none",
    "space_filter": None,
    "skew": None,
    "omega": 0.0,
    "drift_mode": "score",
    "denoise_final": False,
    "levels": 10,
}


class ConfigError(ValueError):
    """Invalid, unreadable or incomplete experiment configuration."""


def _parse_value(raw: str) -> Any:
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def _assign(tree: Dict[str, Any], keys: List[str], value: Any, where: str) -> None:
    node = tree
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"{where}: '{key}' is a value and cannot hold sub-keys")
        node = child
    if isinstance(node.get(keys[-1]), dict):
        raise ConfigError(f"{where}: '{'.'.join(keys)}' is a section and cannot take a value")
    node[keys[-1]] = value


def _strip_comment(line: str) -> str:
    """Drop a trailing ``# comment``; '#' inside quotes or inside a value is kept."""
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#" and (i == 0 or line[i - 1].isspace()):
            return line[:i]
    return line


def parse_dotted(text: str, source: str = "<config>") -> Dict[str, Any]:
    """Parse ``key = value`` lines (with ``[section]`` prefixes) into nested dicts."""
    result: Dict[str, Any] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            node = result
            for key in section.split("."):
                if not key:
                    raise ConfigError(f"{where}: malformed section {section!r}")
                node = node.setdefault(key, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"{where}: '{key}' is a value and cannot hold sub-keys")
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        full = f"{section}.{key}" if section else key
        parts = full.split(".")
        if not all(parts):
            raise ConfigError(f"{where}: malformed key {full!r}")
        _assign(result, parts, _parse_value(value), where)
    return result


def load_config(config_path: Optional[Path] = None) -> Dict[str, Any]:
    """Load configuration from file or return defaults."""
    if not config_path:
        config_candidates = [
            Path.cwd() / "pds-sampler.json",
            Path.cwd() / "pds-sampler.conf",
            Path.home() / ".config" / "pds-sampler" / "config.json",
        ]

        for candidate in config_candidates:
            if candidate.exists():
                config_path = candidate
                break
        else:
            return copy.deepcopy(DEFAULT_CONFIG)

    config_path = Path(config_path)
    try:
        config_text = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Could not read config {config_path}: {e}") from e

    if config_path.suffix == ".json":
        try:
            user_config = json.loads(config_text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{config_path}: invalid JSON ({e})") from e
    else:
        user_config = parse_dotted(config_text, str(config_path))

    if not isinstance(user_config, dict):
        raise ConfigError(f"{config_path}: top level must be a mapping")
    logger.debug("loaded config from %s", config_path)
    return merge_configs(DEFAULT_CONFIG, user_config)


def merge_configs(default: Dict[str, Any], user: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge user config with defaults."""
    result = copy.deepcopy(default)

    for key, value in user.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = merge_configs(result[key], value)
        else:
            result[key] = value

    return result


def save_config(config: Dict[str, Any], config_path: Path) -> None:
    """Save configuration to file in JSON format."""
    config_path.parent.mkdir(parents=True, exist_ok=True)
    config_path.write_text(json.dumps(config, indent=2), encoding="utf-8")


def create_sample_config(output_path: Path) -> None:
    """Create a sample benchmark configuration: ill-conditioned GRF, vanilla vs PDS."""
    sample_config = {
        "experiment": {
            "seed": 7,
            "chains": 256,
            "checkpoint_stride": 10,
            "out_dir": "pds_runs/grf32",
            "metric_mode": "spectral",
            "threshold": 0.2,
            "max_iterations": 3000,
            "step_fraction": 0.25,
            "stop_at_threshold": True,
        },
        "target": {
            "kind": "grf",
            "shape": [1, 32, 32],
            "condition_number": 1000.0,
        },
        "samplers": {
            "vanilla": {},
            "pds": {"preconditioner": "parametric", "r": 6.4, "lambda": 2.0},
            "pds-statistical": {"preconditioner": "statistical", "alpha": 5.0, "count": 200},
        },
    }

    save_config(sample_config, output_path)


@dataclass
class ExperimentConfig:
    target: ScoreTarget
    samplers: Dict[str, SamplerConfig]
    chains: int
    checkpoint_stride: int
    out_dir: Path
    seed: int
    metric_mode: Optional[str]
    threshold: float
    max_iterations: int
    stop_at_threshold: bool = False
    raw: Dict[str, Any] = field(default_factory=dict)


def _section(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    value = config.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a section, got {value!r}")
    return value


def _positive_int(section: Dict[str, Any], key: str, where: str, allow_zero: bool = False) -> int:
    value = section.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"{where}.{key} must be an integer, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"{where}.{key} must be {'>= 0' if allow_zero else '> 0'}, got {value}")
    return int(value)


def _filter_path(value: Any, where: str) -> Path:
    path = Path(str(value))
    if not path.is_file():
        raise ConfigError(f"{where}: filter file not found: {path}")
    return path


def _frequency_filter(
    name: str, section: Dict[str, Any], filters: Dict[str, Any], target: ScoreTarget, seed: int
) -> Optional[Field]:
    kind = str(section.get("preconditioner") or "none").lower()
    where = f"samplers.{name}"
    if kind not in PRECONDITIONERS:
        raise ConfigError(f"{where}.preconditioner must be one of {PRECONDITIONERS}, got {kind!r}")
    shape = target.shape

    if kind == "none":
        return None
    if kind == "identity":
        return Field.ones(shape)
    if kind == "parametric":
        r = section.get("r", filters.get("r"))
        if r is None:
            r = 0.2 * shape.height
        lam = section.get("lambda", filters.get("lambda"))
        return build_parametric_r(shape, ParametricFilterSpec(float(r), float(lam)))
    if kind == "statistical":
        alpha = float(section.get("alpha", filters.get("alpha", 5.0)))
        count = int(section.get("count", filters.get("count", 200)))
        samples_dir = section.get("samples_dir", filters.get("samples_dir"))
        if samples_dir:
            samples = load_samples(Path(samples_dir), count=count, seed=seed)
        else:
            rng = np.random.default_rng([seed, FILTER_STREAM])
            samples = list(target.sample(rng, size=count))
        return build_statistical_r(samples, StatisticalFilterSpec(alpha))

    if "frequency_filter" not in section:
        raise ConfigError(f"{where}: preconditioner = file needs frequency_filter = <path>")
    return read_grid(_filter_path(section["frequency_filter"], f"{where}.frequency_filter"))


def _space_filter(name: str, section: Dict[str, Any], target: ScoreTarget, seed: int) -> Optional[Field]:
    value = section.get("space_filter")
    if value is None:
        return None
    where = f"samplers.{name}.space_filter"
    if str(value).lower() == "samples":
        samples_dir = section.get("samples_dir")
        if not samples_dir:
            raise ConfigError(f"{where} = samples needs samples_dir")
        return build_space_a(load_samples(Path(samples_dir), count=section.get("count"), seed=seed))
    return read_grid(_filter_path(value, where))


def _build_sampler(
    name: str,
    section: Dict[str, Any],
    experiment: Dict[str, Any],
    filters: Dict[str, Any],
    target: ScoreTarget,
    iterations: int,
) -> SamplerConfig:
    seed = int(experiment["seed"])
    section = {**SAMPLER_DEFAULTS, **section}
    where = f"samplers.{name}"

    r = _frequency_filter(name, section, filters, target, seed)
    a = _space_filter(name, section, target, seed)
    preconditioner = None
    if r is not None or a is not None:
        shape = target.shape
        preconditioner = Preconditioner(a if a is not None else uniform_a(shape), r if r is not None else Field.ones(shape))

    step = section["step"]
    if step == "auto" or step is None:
        fraction = float(section.get("step_fraction", experiment.get("step_fraction", 0.25)))
        try:
            step = stable_step_size(target, preconditioner, fraction)
        except ValueError as e:
            raise ConfigError(f"{where}.step = auto is not available ({e}); set step to a number") from e
    step = float(step)

    schedule_kind = str(section["schedule"]).lower()
    if schedule_kind == "constant":
        schedule = StepSchedule.constant(iterations, step)
    elif schedule_kind == "annealed":
        for key in ("sigma_max", "sigma_min"):
            if key not in section:
                raise ConfigError(f"{where}: annealed schedule needs {key}")
        schedule = StepSchedule.geometric(
            iterations,
            step,
            float(section["sigma_max"]),
            float(section["sigma_min"]),
            _positive_int(section, "levels", where),
        )
    else:
        raise ConfigError(f"{where}.schedule must be constant or annealed, got {schedule_kind!r}")

    skew = SkewOperator.from_name(str(section["skew"])) if section["skew"] else None
    return SamplerConfig(
        schedule=schedule,
        preconditioner=preconditioner,
        skew=skew,
        omega=float(section["omega"] or 0.0),
        rng_seed=seed,
        denoise_final=bool(section["denoise_final"]),
        drift_mode=str(section["drift_mode"]),
        checkpoint_stride=int(experiment["checkpoint_stride"]),
        name=name,
    )


def build_experiment(config: Dict[str, Any], benchmark: bool = False) -> ExperimentConfig:
    """Validate a merged config and build the target and every named sampler.

    In benchmark mode every sampler runs ``max_iterations`` steps and the
    threshold is checked at each checkpoint; with
    ``stop_at_threshold`` a sampler stops at the first checkpoint that meets it.
    """
    experiment = _section(config, "experiment")
    filters = _section(config, "filters")
    samplers = _section(config, "samplers")
    if not samplers:
        raise ConfigError("at least one [samplers.<name>] section is required")

    chains = _positive_int(experiment, "chains", "experiment")
    stride = _positive_int(experiment, "checkpoint_stride", "experiment", allow_zero=True)
    max_iterations = _positive_int(experiment, "max_iterations", "experiment")
    mode = str(experiment.get("metric_mode") or "auto").lower()
    if mode not in METRIC_MODES:
        raise ConfigError(f"experiment.metric_mode must be one of {METRIC_MODES}, got {mode!r}")
    threshold = experiment.get("threshold")
    if not isinstance(threshold, (int, float)) or not threshold > 0:
        raise ConfigError(f"experiment.threshold must be > 0, got {threshold!r}")

    try:
        target = target_from_config(_section(config, "target"))
        built: Dict[str, SamplerConfig] = {}
        for name, section in samplers.items():
            if not SAMPLER_NAME.fullmatch(str(name)):
                raise ConfigError(
                    f"sampler name {name!r} must start with a letter or digit and use only letters, digits, '_', '.' or '-'"
                )
            if not isinstance(section, dict):
                raise ConfigError(f"samplers.{name} must be a section")
            if benchmark or "iterations" not in section:
                iterations = max_iterations
            else:
                iterations = _positive_int(section, "iterations", f"samplers.{name}", allow_zero=True)
            built[name] = _build_sampler(name, section, experiment, filters, target, iterations)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError, FileNotFoundError) as e:
        raise ConfigError(str(e)) from e

    return ExperimentConfig(
        target=target,
        samplers=built,
        chains=chains,
        checkpoint_stride=stride,
        out_dir=Path(str(experiment.get("out_dir") or "pds_runs")),
        seed=int(experiment["seed"]),
        metric_mode=None if mode == "auto" else mode,
        threshold=float(threshold),
        max_iterations=max_iterations,
        stop_at_threshold=bool(experiment.get("stop_at_threshold", False)),
        raw=config,
    )
