"""Run configuration files and run manifests.

A config file is TOML with a top-level ``seed`` and four optional tables::

    seed = 0
    [data]    # kind = "synth" | "idx" | "ppm" | "cache", plus kind-specific keys
    [train]   # any TrainConfig field except seed
    [probe]   # any ProbeConfig field except source and seed
    [eval]    # test_fraction, suites, family, bins

A manifest is the fully resolved configuration as canonical JSON.  Passing a
manifest back as ``--config`` reproduces the run.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import ConfigError
from .evaluation import DEFAULT_BINS, FAMILIES, ProbeConfig
from .trainer import TrainConfig
from .vision import SUITES

DATA_KINDS = {
    "synth": {"samples_per_class": 100, "resolution": 64, "classes": None, "channels": 3,
              "palette": "random", "noise_amplitude": 0.1, "seed": 0},
    "idx": {"images": None, "labels": None},
    "ppm": {"root": None, "resolution": None},
    "cache": {"path": None},
}
REQUIRED_DATA = {"idx": ("images", "labels"), "ppm": ("root",), "cache": ("path",)}

# desk value used when K is omitted, and the reference value it stands in for
K_NOTE = "K defaults to 256 at desk scale; the reference setting is 65536"


@dataclass
class EvalConfig:
    test_fraction: float = 0.2
    suites: list = field(default_factory=lambda: list(SUITES))
    family: str = "rotation"
    bins: int = 0  # 0 = the family default

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"eval.test_fraction must lie in (0, 1), got {self.test_fraction}")
        bad = [s for s in self.suites if s not in SUITES]
        if bad or not self.suites:
            raise ConfigError(f"eval.suites: unknown suite(s) {bad}; expected a subset of {list(SUITES)}")
        if self.family not in FAMILIES:
            raise ConfigError(f"eval.family must be one of {FAMILIES}, got {self.family!r}")
        if self.bins == 1 or self.bins < 0:
            raise ConfigError(f"eval.bins must be 0 (family default) or >= 2, got {self.bins}")

    @property
    def n_bins(self) -> int:
        return self.bins or DEFAULT_BINS[self.family]


@dataclass
class RunConfig:
    seed: int
    data: dict
    train: TrainConfig
    probe: ProbeConfig
    eval: EvalConfig

    def resolved(self) -> dict:
        train = self.train.as_dict()
        probe = asdict(self.probe)
        for d in (train, probe):
            d.pop("seed")
        probe.pop("source")
        return {"seed": self.seed, "data": dict(self.data), "train": train, "probe": probe,
                "eval": asdict(self.eval)}


def _check_keys(table: dict, allowed, where: str):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")


def _typed(value, default, key):
    """Coerce ints to floats where the default is a float; reject other type mismatches."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, (int, float)) and (isinstance(value, bool) or not isinstance(value, type(default))):
        raise ConfigError(f"{key} must be a {type(default).__name__}, got {value!r}")
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def _section(raw: dict, name: str, cls, exclude=()):
    table = raw.get(name, {})
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    defaults = {f.name: getattr(cls(), f.name) for f in fields(cls) if f.name not in exclude}
    _check_keys(table, defaults, name)
    return {k: _typed(v, defaults[k], f"{name}.{k}") for k, v in table.items()}


def _data_section(raw: dict) -> dict:
    table = dict(raw.get("data", {}))
    if "kind" not in table:
        raise ConfigError("missing required key data.kind (one of synth, idx, ppm, cache)")
    kind = table.pop("kind")
    if kind not in DATA_KINDS:
        raise ConfigError(f"data.kind must be one of {sorted(DATA_KINDS)}, got {kind!r}")
    allowed = DATA_KINDS[kind]
    _check_keys(table, allowed, "data")
    for key in REQUIRED_DATA.get(kind, ()):
        if not table.get(key):
            raise ConfigError(f"missing required key data.{key} for data.kind = {kind!r}")
    out = {"kind": kind}
    for k, default in allowed.items():
        out[k] = _typed(table.get(k, default), default, f"data.{k}")
    if kind == "synth":
        if out["resolution"] < 16:
            raise ConfigError(f"data.resolution must be >= 16, got {out['resolution']}")
        if out["samples_per_class"] < 1:
            raise ConfigError(f"data.samples_per_class must be >= 1, got {out['samples_per_class']}")
    return out


def build_config(raw: dict, seed: int | None = None) -> RunConfig:
    """Validate a parsed config table and materialize every default."""
    _check_keys(raw, ("seed", "data", "train", "probe", "eval"), "top level")
    run_seed = raw.get("seed", 0) if seed is None else seed
    if not isinstance(run_seed, int) or isinstance(run_seed, bool) or run_seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {run_seed!r}")
    data = _data_section(raw)
    tkw = _section(raw, "train", TrainConfig, exclude=("seed",))
    if "strategy" in tkw and not tkw["strategy"]:
        raise ConfigError("strategy must not be empty (one of BAug, CAug, CAug+)")
    pkw = _section(raw, "probe", ProbeConfig, exclude=("seed", "source"))
    ekw = _section(raw, "eval", EvalConfig)
    train = TrainConfig(**tkw, seed=run_seed)
    probe = ProbeConfig(**pkw, seed=run_seed)
    return RunConfig(run_seed, data, train, probe, EvalConfig(**ekw))


def read_config_file(path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        content = fh.read()
    if str(path).endswith(".json"):
        try:
            doc = json.loads(content)
        except ValueError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from None
        raw = doc.get("config", doc) if isinstance(doc, dict) else None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a manifest or config object")
        return raw, content
    try:
        return tomllib.loads(content.decode("utf-8")), content
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(path, seed: int | None = None) -> tuple[RunConfig, dict]:
    """Read ``path`` (TOML config or JSON manifest); returns ``(config, manifest)``."""
    raw, content = read_config_file(path)
    cfg = build_config(raw, seed)
    return cfg, make_manifest(cfg, content)


def make_manifest(cfg: RunConfig, content: bytes = b"", command: str = "", artifacts=None) -> dict:
    return {
        "command": command,
        "config": cfg.resolved(),
        "seed": cfg.seed,
        "artifacts": dict(artifacts or {}),
        "tool_version": __version__,
        "config_sha256": hashlib.sha256(content).hexdigest(),
        "notes": {"K": K_NOTE},
    }


def dumps_manifest(manifest: dict) -> str:
    return json.dumps(manifest, sort_keys=True, indent=2) + "\n"


def write_manifest(manifest: dict, out_dir, name: str = "manifest.json") -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_manifest(manifest))
    return path
