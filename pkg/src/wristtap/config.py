"""Run configuration: INI file with section headers, overridable per flag.

Example:

    [dataset]
    path = ./data

    [synth]
    users = 8
    gestures_per_user = 60
    activity_minutes = 30

    [grid]
    sizes = 0.5:4.0:0.5
    offsets = -2.0:2.0:0.5

    [features]
    sensors = Acc,Gyr,LAc,GRV
    cutoff_hz = 10.0
    peak_gate = 0.25

    [forest]
    n_trees = 100
    min_split = 2
    bootstrap = true

    [protocol]
    kinds = auth_terminal_agnostic,intent_user_agnostic
    n_seeds = 10
    fold_count = 10
    theta = 0.5

Every value is validated before any computation; invalid entries raise
ConfigError naming the field. CLI flags override file values, and all
randomness flows from the root seed: protocol seeds are seed..seed+n-1.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import SensorKind
from .errors import ConfigError
from .protocols import (PROTOCOL_KINDS, ForestParams, ProtocolSpec, WindowGrid)

_KIND_BY_NAME = {k.value: k for k in SensorKind}


def parse_axis(text: str, field_name: str) -> tuple[float, ...]:
    """Either `lo:hi:step` or a comma list of floats."""
    text = text.strip()
    try:
        if ":" in text:
            lo, hi, step = (float(v) for v in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            n = int(round((hi - lo) / step))
            return tuple(round(lo + i * step, 9) for i in range(n + 1))
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{field_name}: cannot parse {text!r}") from None


def parse_sensors(text: str) -> tuple[SensorKind, ...]:
    kinds = []
    for token in text.split(","):
        token = token.strip()
        if token not in _KIND_BY_NAME:
            raise ConfigError(f"features.sensors: unknown sensor {token!r}")
        kinds.append(_KIND_BY_NAME[token])
    if not kinds:
        raise ConfigError("features.sensors: empty sensor list")
    return tuple(kinds)


@dataclass(frozen=True)
class SynthParams:
    users: int = 8
    gestures_per_user: int = 60
    activity_minutes: float = 30.0


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; built from an INI file plus CLI overrides."""

    dataset_path: str | None = None
    synth: SynthParams = field(default_factory=SynthParams)
    protocol_kinds: tuple[str, ...] = ("auth_terminal_agnostic", "intent_user_agnostic")
    grid: WindowGrid = field(default_factory=WindowGrid)
    sensors: tuple[SensorKind, ...] = tuple(SensorKind)
    cutoff_hz: float = 10.0
    peak_gate: float = 0.25
    forest: ForestParams = field(default_factory=ForestParams)
    seed: int = 0
    n_seeds: int = 10
    fold_count: int = 10
    theta: float = 0.5
    out_dir: str = "out"
    jobs: int | None = None

    def __post_init__(self):
        for kind in self.protocol_kinds:
            if kind not in PROTOCOL_KINDS:
                raise ConfigError(f"protocol.kinds: unknown protocol {kind!r}")
        if self.n_seeds < 1:
            raise ConfigError("protocol.n_seeds: must be >= 1")
        if not (0.0 <= self.theta <= 1.0):
            raise ConfigError("protocol.theta: must be in [0, 1]")
        if self.cutoff_hz <= 0:
            raise ConfigError("features.cutoff_hz: must be positive")
        if self.peak_gate < 0:
            raise ConfigError("features.peak_gate: must be >= 0")
        if self.forest.n_trees < 1:
            raise ConfigError("forest.n_trees: must be >= 1")
        if self.synth.users < 1 or self.synth.gestures_per_user < 1:
            raise ConfigError("synth: users and gestures_per_user must be >= 1")
        try:
            self.grid.cells()
        except Exception as e:
            raise ConfigError(f"grid: {e}") from None

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(self.seed + i for i in range(self.n_seeds))

    def protocol_spec(self, kind: str) -> ProtocolSpec:
        return ProtocolSpec(
            kind=kind, grid=self.grid, subset=self.sensors, seeds=self.seeds,
            fold_count=self.fold_count, theta=self.theta, cutoff_hz=self.cutoff_hz,
            peak_gate=self.peak_gate, forest=self.forest)

    def fingerprint(self) -> str:
        """Stable hash of the effective configuration."""
        digest = hashlib.sha256(repr(self).encode()).hexdigest()
        return digest[:16]


def _get(cfg: configparser.ConfigParser, section: str, option: str, cast, fallback):
    if not cfg.has_option(section, option):
        return fallback
    raw = cfg.get(section, option)
    try:
        return cast(raw)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{section}.{option}: cannot parse {raw!r}") from None


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def load_config(path: str | Path | None) -> RunConfig:
    """Read a config file; a missing path gives the defaults."""
    base = RunConfig()
    if path is None:
        return base
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    cfg = configparser.ConfigParser(interpolation=None)
    with open(path, "r", encoding="utf-8") as fh:
        cfg.read_file(fh)

    grid = WindowGrid(
        sizes=_get(cfg, "grid", "sizes", lambda v: parse_axis(v, "grid.sizes"), base.grid.sizes),
        offsets=_get(cfg, "grid", "offsets", lambda v: parse_axis(v, "grid.offsets"),
                     base.grid.offsets))
    forest = ForestParams(
        n_trees=_get(cfg, "forest", "n_trees", int, 100),
        mtry=_get(cfg, "forest", "mtry", int, None),
        max_depth=_get(cfg, "forest", "max_depth", int, None),
        min_split=_get(cfg, "forest", "min_split", int, 2),
        bootstrap=_get(cfg, "forest", "bootstrap", _parse_bool, True))
    synth = SynthParams(
        users=_get(cfg, "synth", "users", int, 8),
        gestures_per_user=_get(cfg, "synth", "gestures_per_user", int, 60),
        activity_minutes=_get(cfg, "synth", "activity_minutes", float, 30.0))

    return RunConfig(
        dataset_path=_get(cfg, "dataset", "path", str, None),
        synth=synth,
        protocol_kinds=_get(cfg, "protocol", "kinds",
                            lambda v: tuple(t.strip() for t in v.split(",") if t.strip()),
                            base.protocol_kinds),
        grid=grid,
        sensors=_get(cfg, "features", "sensors", parse_sensors, base.sensors),
        cutoff_hz=_get(cfg, "features", "cutoff_hz", float, 10.0),
        peak_gate=_get(cfg, "features", "peak_gate", float, 0.25),
        forest=forest,
        seed=_get(cfg, "protocol", "seed", int, 0),
        n_seeds=_get(cfg, "protocol", "n_seeds", int, 10),
        fold_count=_get(cfg, "protocol", "fold_count", int, 10),
        theta=_get(cfg, "protocol", "theta", float, 0.5),
        out_dir=_get(cfg, "output", "dir", str, "out"),
    )


def apply_overrides(config: RunConfig, seed: int | None = None, jobs: int | None = None,
                    out: str | None = None, data: str | None = None) -> RunConfig:
    """Fold CLI flags over a file-derived config; flags win."""
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if jobs is not None:
        updates["jobs"] = jobs
    if out is not None:
        updates["out_dir"] = out
    if data is not None:
        updates["dataset_path"] = data
    return replace(config, **updates) if updates else config


def write_run_manifest(config: RunConfig, out_dir: Path) -> Path:
    """Record the config hash and component versions next to the outputs."""
    import numba
    import pandas

    from . import __version__
    from .forest import GENERATOR_NAME

    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_manifest.txt"
    lines = [
        f"config_hash {config.fingerprint()}",
        f"wristtap {__version__}",
        f"numpy {np.__version__}",
        f"numba {numba.__version__}",
        f"pandas {pandas.__version__}",
        f"forest_generator {GENERATOR_NAME}",
        f"synth_generator numpy-pcg64",
        "",
        "config " + repr(config),
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
