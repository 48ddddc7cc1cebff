"""Strict JSON experiment configuration.

A config is one JSON object::

    {
      "seed": 0,
      "data": {"kind": "synthetic-least-squares", "size": 2000, "dimension": 10,
               "condition": 20, "noise_std": 0.1, "partition": "balanced"},
      "topology": {"kind": "random", "nodes": 20, "p": 0.3},
      "algorithm": {"variant": "diffusion-avrg", "step_size": 0.1, "epochs": 30},
      "costs": {"t_comp": 1, "t_comm": 1},
      "output": {"trace_csv": "trace.csv"}
    }

Unknown keys and wrongly typed values are rejected with a message naming
the offending field path, e.g. ``algorithm.step_size``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from ..diffusion import VARIANTS
from ..errors import InvalidInput
from ..objective import LOSS_KINDS
from ..topology import TOPOLOGY_KINDS


class ConfigError(InvalidInput):
    """A config value is missing, unknown or malformed; ``path`` names it."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic-least-squares"
    size: int = 2000
    dimension: int = 10
    condition: float = 20.0
    noise_std: float = 0.1
    path: str | None = None
    normalize: bool = True
    loss: str = "least-squares"
    l2_coefficient: float = 0.0
    partition: str = "balanced"
    sizes: list | None = None


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "random"
    nodes: int = 20
    p: float | None = 0.3
    edges: list | None = None


@dataclass(frozen=True)
class RegularizerConfig:
    kind: str = "none"
    eta: float = 0.0


@dataclass(frozen=True)
class AlgorithmConfig:
    variant: str = "diffusion-avrg"
    step_size: float = 0.1
    batch_size: int = 1
    use_weights: bool | None = None
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    epochs: int | None = 30
    tolerance: float | None = None
    probe: bool = False


@dataclass(frozen=True)
class CostConfig:
    t_comp: float = 1.0
    t_comm: float = 1.0


@dataclass(frozen=True)
class OutputConfig:
    trace_csv: str | None = None
    svg: str | None = None
    checkpoint: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    costs: CostConfig = field(default_factory=CostConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_CHOICES = {
    "data.kind": ("synthetic-least-squares", "libsvm"),
    "data.loss": LOSS_KINDS,
    "data.partition": ("balanced", "unbalanced", "explicit"),
    "topology.kind": TOPOLOGY_KINDS,
    "algorithm.variant": VARIANTS,
    "algorithm.regularizer.kind": ("none", "l1"),
}

_NESTED = {
    "data": DataConfig,
    "topology": TopologyConfig,
    "algorithm": AlgorithmConfig,
    "algorithm.regularizer": RegularizerConfig,
    "costs": CostConfig,
    "output": OutputConfig,
}


def _check_scalar(path, value, annotation):
    ann = str(annotation)
    optional = "None" in ann
    if value is None:
        if optional:
            return None
        raise ConfigError(path, "must not be null")
    if ann.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if ann.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if ann.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if ann.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        choices = _CHOICES.get(path)
        if choices is not None and value not in choices:
            raise ConfigError(path, f"{value!r} is not one of {', '.join(choices)}")
        return value
    if ann.startswith("list"):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {ann}")


def _build(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError(prefix or "<root>", "expected a JSON object")
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            path = f"{prefix}.{key}" if prefix else key
            raise ConfigError(path, "unknown key")
    values = {}
    for name, f in known.items():
        if name not in raw:
            continue
        path = f"{prefix}.{name}" if prefix else name
        if path in _NESTED:
            values[name] = _build(_NESTED[path], raw[name], path)
        else:
            values[name] = _check_scalar(path, raw[name], f.type)
    return cls(**values)


def _validate(cfg):
    d, t, a = cfg.data, cfg.topology, cfg.algorithm
    positive = {
        "data.size": d.size,
        "data.dimension": d.dimension,
        "topology.nodes": t.nodes,
        "algorithm.step_size": a.step_size,
        "algorithm.batch_size": a.batch_size,
    }
    for path, value in positive.items():
        if value <= 0:
            raise ConfigError(path, "must be positive")
    if d.condition < 1:
        raise ConfigError("data.condition", "must be at least 1")
    if d.noise_std < 0:
        raise ConfigError("data.noise_std", "must be nonnegative")
    if d.kind == "libsvm" and not d.path:
        raise ConfigError("data.path", "required for libsvm data")
    if d.partition == "explicit" and d.sizes is None:
        raise ConfigError("data.sizes", "required for an explicit partition")
    if t.kind == "random" and (t.p is None or not 0 < t.p <= 1):
        raise ConfigError("topology.p", "random topology needs 0 < p <= 1")
    if t.kind == "explicit" and t.edges is None:
        raise ConfigError("topology.edges", "required for explicit topology")
    if a.epochs is None and a.tolerance is None:
        raise ConfigError("algorithm.epochs", "give an epoch budget or a tolerance")
    if a.epochs is not None and a.epochs < 0:
        raise ConfigError("algorithm.epochs", "must be nonnegative")
    if a.regularizer.eta < 0:
        raise ConfigError("algorithm.regularizer.eta", "must be nonnegative")
    if cfg.costs.t_comp < 0:
        raise ConfigError("costs.t_comp", "must be nonnegative")
    if cfg.costs.t_comm < 0:
        raise ConfigError("costs.t_comm", "must be nonnegative")
    return cfg


def parse_config(raw):
    """Build an :class:`ExperimentConfig` from a dict or JSON text."""
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return _validate(_build(ExperimentConfig, raw, ""))


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    return parse_config(text)
