"""Experiment configuration: a TOML file validated against the dataclass schema below.

Layout (every key optional; unknown keys are rejected)::

    seed = 2024                 # root seed; RFMASK_SEED overrides it
    out = "runs/default"

    [dataset]
    devices = 10
    calibration_seed = 42
    fingerprint_strength = 0.1
    noise_kinds = ["gaussian", "impulse", "laplacian", "uniform"]
    sigmas = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05]
    samples_per_cell = 2000000  # received symbols per (device, kind, sigma) cell
    workers = 1

    [channel]                   # ChannelConfig fields; kind = "wired" | "wireless"
    kind = "wired"

    [modulation]  [sync]  [imaging]  [classifier]  [rawiq]  [autoencoder]  [protocol]
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from ..channel import ChannelConfig, LinkKind
from ..imaging import ImagingConfig
from ..learn import AutoencoderConfig, ClassifierConfig, ConvStage, RawIQConfig
from ..receiver import SyncConfig
from ..rfchain import ModulationConfig, NoiseKind

SEED_ENV = "RFMASK_SEED"


class ConfigError(ValueError):
    """Configuration failed schema validation."""


@dataclass(frozen=True)
class DatasetConfig:
    devices: int = 10
    calibration_seed: int = 42
    fingerprint_strength: float = 0.1
    noise_kinds: tuple = ("gaussian", "impulse", "laplacian", "uniform")
    sigmas: tuple = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)
    samples_per_cell: int = 2_000_000
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "noise_kinds", tuple(NoiseKind(k).value for k in self.noise_kinds))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if self.devices < 2:
            raise ValueError("need at least 2 devices")
        if self.fingerprint_strength <= 0:
            raise ValueError("fingerprint_strength must be positive")
        if "none" in self.noise_kinds:
            raise ValueError("noise_kinds lists injected noise families; sigma = 0 covers the noise-free cell")
        if any(s < 0 for s in self.sigmas) or len(set(self.sigmas)) != len(self.sigmas):
            raise ValueError("sigmas must be distinct and non-negative")
        if 0.0 not in self.sigmas:
            raise ValueError("the sigma grid must contain 0")
        if self.samples_per_cell < 1 or self.workers < 1:
            raise ValueError("samples_per_cell and workers must be >= 1")


@dataclass(frozen=True)
class ProtocolConfig:
    key: str = "rfmask-demo-key"
    slot_duration: float = 1.0
    levels: tuple = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)
    noise_kind: str = "gaussian"
    iterations: int = 100
    window: int = 6
    adversary_window: int = 0
    rotate_every: int = 0
    # "noise-free" (trained on sigma = 0 only) or "all-levels" (trained on every level)
    adversary: str = "noise-free"
    psucc_p: float = 0.96
    psucc_deltas: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    psucc_w_max: int = 15

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(s) for s in self.levels))
        object.__setattr__(self, "psucc_deltas", tuple(float(s) for s in self.psucc_deltas))
        NoiseKind(self.noise_kind)
        if self.adversary not in ("noise-free", "all-levels"):
            raise ValueError("adversary must be 'noise-free' or 'all-levels'")
        if self.iterations < 1 or self.window < 1 or self.adversary_window < 0:
            raise ValueError("iterations and window must be >= 1")
        if not self.levels:
            raise ValueError("need at least one level")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 2024
    out: str = "runs/default"
    snr_reference_db: float = 15.0
    dataset: DatasetConfig = DatasetConfig()
    channel: ChannelConfig = field(default_factory=ChannelConfig.wired)
    modulation: ModulationConfig = ModulationConfig()
    sync: SyncConfig = SyncConfig()
    imaging: ImagingConfig = ImagingConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    rawiq: RawIQConfig = RawIQConfig()
    autoencoder: AutoencoderConfig = AutoencoderConfig()
    protocol: ProtocolConfig = ProtocolConfig()

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def as_dict(self) -> dict:
        d = {"seed": self.seed, "out": self.out, "snr_reference_db": self.snr_reference_db}
        for f in _SECTIONS:
            v = getattr(self, f)
            d[f] = v.as_dict() if hasattr(v, "as_dict") else _plain(dataclasses.asdict(v))
        return json.loads(json.dumps(d, default=_json_default))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


_SECTIONS = ("dataset", "channel", "modulation", "sync", "imaging", "classifier", "rawiq", "autoencoder", "protocol")
_SECTION_TYPES = {
    "dataset": DatasetConfig, "channel": ChannelConfig, "modulation": ModulationConfig, "sync": SyncConfig,
    "imaging": ImagingConfig, "classifier": ClassifierConfig, "rawiq": RawIQConfig,
    "autoencoder": AutoencoderConfig, "protocol": ProtocolConfig,
}


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def _json_default(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if hasattr(o, "value"):
        return o.value
    if isinstance(o, float) and o == float("inf"):
        return "inf"
    raise TypeError(type(o))


def _build(name: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(unknown))}")
    raw = dict(raw)
    try:
        if cls is ChannelConfig:
            kind = LinkKind(raw.pop("kind", "wired"))
            if "multipath_taps" in raw:
                raw["multipath_taps"] = tuple((t[0], complex(*t[1]) if isinstance(t[1], list) else t[1])
                                              for t in raw["multipath_taps"])
            return ChannelConfig.wired(**raw) if kind is LinkKind.WIRED else ChannelConfig.wireless(**raw)
        if cls is ClassifierConfig and isinstance(raw.get("conv_stage"), dict):
            raw["conv_stage"] = ConvStage(**raw["conv_stage"])
        if cls is ClassifierConfig and raw.get("conv_stage") is False:
            raw["conv_stage"] = None
        for k, v in list(raw.items()):
            if isinstance(v, list):
                raw[k] = tuple(v)
        return cls(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{name}] {e}") from e


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    top = {"seed", "out", "snr_reference_db"} | set(_SECTIONS)
    unknown = set(d) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    kw = {}
    for k in ("seed", "out", "snr_reference_db"):
        if k in d:
            kw[k] = d[k]
    if "seed" in kw and (not isinstance(kw["seed"], int) or isinstance(kw["seed"], bool)):
        raise ConfigError("seed must be an integer")
    for name in _SECTIONS:
        if name in d:
            kw[name] = _build(name, _SECTION_TYPES[name], d[name])
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path=None, seed: int | None = None, out: str | None = None, env=None) -> ExperimentConfig:
    """Load a TOML config (defaults when ``path`` is None) and apply seed/out overrides.

    Seed precedence: explicit ``seed`` argument, then the RFMASK_SEED environment
    variable, then the file.
    """
    env = os.environ if env is None else env
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = tomli.loads(p.read_text())
        except tomli.TOMLDecodeError as e:
            raise ConfigError(f"{p}: {e}") from e
        cfg = config_from_dict(raw)
    else:
        cfg = ExperimentConfig()
    if seed is None and env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV], 0)
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV} must be an integer") from e
    kw = {}
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        kw["seed"] = seed
    if out is not None:
        kw["out"] = str(out)
    return cfg.with_overrides(**kw) if kw else cfg
