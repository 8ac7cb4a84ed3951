"""Experiment configuration: YAML in, canonical JSON out.

A config file has the top-level blocks ``experiment``, ``chain``, ``state``,
``grids``, ``tolerances``, ``options``, ``seed`` and ``output_dir``. See the
files under ``configs/`` for complete examples. Loading resolves defaults
and derived shorthands (``gamma`` instead of ``coupling``) so that the
resolved mapping round-trips exactly through :meth:`ExperimentConfig.to_json`.
"""

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from ..chain import ChainParams

__all__ = [
    "EXPERIMENT_KINDS",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "build_grid",
    "chain_from_block",
]

EXPERIMENT_KINDS = (
    "decoherence-scan",
    "thermalization",
    "hydro-compare",
    "bessel-accuracy",
    "conservation-check",
)
STATE_KINDS = ("product-gaussian", "local-equilibrium")
_TOP = ("experiment", "chain", "state", "grids", "tolerances", "options", "seed", "output_dir")
_CHAIN = ("n_particles", "mass", "coupling", "gamma", "binding", "centers", "spacing",
          "periodic", "allow_free")


class ConfigError(ValueError):
    pass


def _coupling_for_gamma(gamma, binding):
    # gamma = nu^2 / (K + 2 nu^2)
    if not 0 <= gamma < 0.5:
        raise ConfigError("gamma must lie in [0, 0.5)")
    return gamma * binding / (1.0 - 2.0 * gamma)


def _resolve_chain(block):
    block = dict(block or {})
    unknown = set(block) - set(_CHAIN)
    if unknown:
        raise ConfigError(f"unknown chain keys: {sorted(unknown)}")
    if "n_particles" not in block:
        raise ConfigError("chain.n_particles is required")
    out = {
        "n_particles": int(block["n_particles"]),
        "mass": float(block.get("mass", 1.0)),
        "binding": float(block.get("binding", 1.0)),
        "periodic": bool(block.get("periodic", True)),
        "allow_free": bool(block.get("allow_free", False)),
    }
    if "gamma" in block and "coupling" in block:
        raise ConfigError("give either chain.gamma or chain.coupling, not both")
    if "gamma" in block:
        out["coupling"] = _coupling_for_gamma(float(block["gamma"]), out["binding"])
    else:
        out["coupling"] = float(block.get("coupling", 0.0))
    if "centers" in block and block["centers"] is not None:
        out["centers"] = [float(b) for b in block["centers"]]
    elif "spacing" in block:
        out["spacing"] = float(block["spacing"])
    return out


def chain_from_block(block):
    """ChainParams from a resolved chain block."""
    return ChainParams.from_dict(block)


def build_grid(spec, scale=1.0):
    """Grid from a list of values or ``{start, stop, points, spacing, zero}``.

    ``spacing`` is ``linear`` (default) or ``log``; ``zero: true`` prepends 0.
    Values are multiplied by ``scale``.
    """
    if spec is None:
        raise ConfigError("missing grid")
    if isinstance(spec, (list, tuple)):
        vals = np.array([float(v) for v in spec])
    else:
        spec = dict(spec)
        start, stop = float(spec["start"]), float(spec["stop"])
        points = int(spec["points"])
        if spec.get("spacing", "linear") == "log":
            if start <= 0:
                raise ConfigError("log grid needs start > 0")
            vals = np.logspace(math.log10(start), math.log10(stop), points)
        else:
            vals = np.linspace(start, stop, points)
        if spec.get("zero", False):
            vals = np.concatenate([[0.0], vals])
    return vals * scale


def _plain(obj):
    """Convert numpy scalars/arrays and tuples into JSON-native types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class ExperimentConfig:
    experiment: str
    chain: dict
    state: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        self.chain = _resolve_chain(self.chain)
        kind = (self.state or {}).get("kind")
        if self.state and kind not in STATE_KINDS:
            raise ConfigError(f"unknown state kind {kind!r}")
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self.output_dir = str(self.output_dir)
        for name in ("state", "grids", "tolerances", "options"):
            setattr(self, name, _plain(dict(getattr(self, name) or {})))

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - set(_TOP)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in data or "chain" not in data:
            raise ConfigError("config needs 'experiment' and 'chain' blocks")
        return cls(**data)

    def to_dict(self):
        return _plain({name: copy.deepcopy(getattr(self, name)) for name in _TOP})

    def to_json(self):
        """Canonical JSON: sorted keys, no whitespace, shortest float repr."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"),
                          allow_nan=False)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def params(self):
        return chain_from_block(self.chain)

    def with_overrides(self, seed=None, output_dir=None):
        data = self.to_dict()
        if seed is not None:
            data["seed"] = int(seed)
        if output_dir is not None:
            data["output_dir"] = str(output_dir)
        return ExperimentConfig.from_dict(data)


def load_config(path):
    """Read a YAML config file into a resolved :class:`ExperimentConfig`."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return ExperimentConfig.from_dict(data)
