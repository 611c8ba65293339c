"""Experiment configuration: TOML or JSON files, strict field checking, hashing."""

from dataclasses import dataclass, fields, asdict, is_dataclass
import hashlib
import json
import math
from pathlib import Path
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXPERIMENTS = ("bessel-verify", "barrier-battery", "chaos-run", "chaos-diagnostics", "thickpoints")
TOP_LEVEL = ("experiment", "seed", "workers", "out", "params")
MAX_SEED = (1 << 64) - 1


class ConfigError(ValueError):
    """Schema violation; ``field`` names the offending entry (dotted path)."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class ExperimentConfig:
    experiment: str
    params: object = None
    seed: int = 0
    workers: int = 1
    out: str = "out"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"unknown experiment {self.experiment!r}; "
                                            f"expected one of {', '.join(EXPERIMENTS)}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) \
                or not 0 <= self.seed <= MAX_SEED:
            raise ConfigError("seed", "must be an integer in [0, 2^64)")
        if isinstance(self.workers, bool) or not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers", "must be a positive integer")
        if self.params is None or isinstance(self.params, dict):
            self.params = build_params(self.experiment, self.params or {})

    def hash(self) -> str:
        return config_hash(self)


def _coerce(name: str, value, default):
    """Convert ``value`` to the type of ``default`` or raise a field-level error."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(name, f"expected a list, got {value!r}")
        if default:
            return tuple(_coerce(f"{name}[{i}]", v, default[0]) for i, v in enumerate(value))
        return tuple(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(name, f"expected a table, got {value!r}")
        return dict(value)
    return value


def build_params(experiment: str, raw: dict):
    """Instantiate the parameter dataclass of ``experiment`` from a plain dict."""
    from .experiments import PARAMS

    cls = PARAMS[experiment]
    if not isinstance(raw, dict):
        raise ConfigError("params", "must be a table")
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"params.{key}", f"unknown field for {experiment}")
    defaults = cls()
    kwargs = {k: _coerce(f"params.{k}", v, getattr(defaults, k)) for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("params", str(exc)) from exc


def config_from_dict(data: dict, experiment: str | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a table")
    for key in data:
        if key not in TOP_LEVEL:
            raise ConfigError(key, "unknown top-level field")
    exp = data.get("experiment", experiment)
    if exp is None:
        raise ConfigError("experiment", "missing")
    if experiment is not None and exp != experiment:
        raise ConfigError("experiment", f"config is for {exp!r} but {experiment!r} was requested")
    out = data.get("out", "out")
    if not isinstance(out, str):
        raise ConfigError("out", "must be a string path")
    return ExperimentConfig(exp, dict(data.get("params", {})), data.get("seed", 0),
                            data.get("workers", 1), out)


def load_config(path, experiment: str | None = None) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(p), f"cannot read: {exc}") from exc
    try:
        if p.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(str(p), f"parse error: {exc}") from exc
    return config_from_dict(data, experiment)


def _canonical(obj):
    if is_dataclass(obj):
        return _canonical(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, float):
        return repr(obj) if not math.isfinite(obj) else obj
    return obj


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical JSON of experiment and resolved parameters.

    Seed, worker count and output directory are excluded: the first is
    recorded separately and the other two do not affect results.
    """
    blob = json.dumps({"experiment": cfg.experiment, "params": _canonical(cfg.params)},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
