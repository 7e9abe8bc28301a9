"""Experiment configuration: nested dataclasses and a strict JSON loader."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .diffcore import ConfigError
from .distill import DistillConfig
from .model import AblationMode, DcstConfig
from .synth import SynthConfig
from .teacher import GnnConfig
from .training import TrainSettings


@dataclass
class CsvSource:
    speeds: str
    sensors: str
    adjacency: str
    step_minutes: float = 5.0


@dataclass
class WindowConfig:
    input_len: int = 12
    horizon: int = 12
    horizon_mode: str = "per_step"


@dataclass
class PretrainConfig:
    """Teacher pre-training; the shuffle seed comes from the experiment seed."""

    lr: float = 3e-3
    epochs: int = 40
    batch_size: int = 32
    patience: int = 10
    loss: str = "mae"


def _desk_dcst() -> DcstConfig:
    return DcstConfig(d_model=16, heads=2, d_ff=64)


def _desk_distill() -> DistillConfig:
    return DistillConfig(alpha=0.3, beta=0.7, lr=2e-3, epochs=12, batch_size=32)


@dataclass
class ExperimentConfig:
    """Everything one run needs. Defaults are sized for a single laptop core."""

    synthetic: SynthConfig | None = field(default_factory=SynthConfig)
    csv: CsvSource | None = None
    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1)
    window: WindowConfig = field(default_factory=WindowConfig)
    dcst: DcstConfig = field(default_factory=_desk_dcst)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    distill: DistillConfig = field(default_factory=_desk_distill)
    ablation: str = "full"
    out: str = "runs/default"
    seed: int = 0

    def validate(self) -> None:
        if (self.synthetic is None) == (self.csv is None):
            raise ConfigError("exactly one of 'synthetic' and 'csv' must be given")
        if self.synthetic is not None:
            self.synthetic.validate()
        fr = self.fractions
        if len(fr) != 3 or min(fr) <= 0 or sum(fr) > 1.0 + 1e-12:
            raise ConfigError(f"fractions must be three positive numbers summing to at most 1, got {fr}")
        w = self.window
        if w.horizon_mode not in ("per_step", "mean"):
            raise ConfigError(f"horizon_mode must be 'per_step' or 'mean', got {w.horizon_mode!r}")
        if w.input_len < 1 or w.horizon < 1:
            raise ConfigError("window lengths must be positive")
        out_h = 1 if w.horizon_mode == "mean" else w.horizon
        for name, sub in (("dcst", self.dcst), ("gnn", self.gnn)):
            if sub.input_len != w.input_len or sub.horizon != out_h:
                raise ConfigError(
                    f"{name} expects (T={sub.input_len}, H={sub.horizon}) but the window gives (T={w.input_len}, H={out_h})"
                )
        self.dcst.validate()
        self.gnn.validate()
        self.distill.validate()
        p = self.pretrain
        if p.lr <= 0 or p.epochs < 1 or p.batch_size < 1 or p.patience < 1 or p.loss not in ("mae", "mse"):
            raise ConfigError("pretrain needs positive lr/epochs/batch_size/patience and loss in {mae, mse}")
        try:
            AblationMode(self.ablation)
        except ValueError:
            raise ConfigError(f"unknown ablation {self.ablation!r}") from None
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")

    def with_overrides(self, seed: int | None = None, out: str | None = None, ablation: str | None = None) -> "ExperimentConfig":
        changes = {k: v for k, v in (("seed", seed), ("out", out), ("ablation", ablation)) if v is not None}
        return dataclasses.replace(self, **changes)

    def pretrain_settings(self) -> TrainSettings:
        p = self.pretrain
        return TrainSettings(lr=p.lr, epochs=p.epochs, batch_size=p.batch_size, patience=p.patience, seed=self.seed)

    def distill_config(self, **changes) -> DistillConfig:
        return dataclasses.replace(self.distill, seed=self.seed, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        d["distill"].pop("seed")
        return d


# ------------------------------------------------------------------ loading

_NESTED = {
    "synthetic": SynthConfig,
    "csv": CsvSource,
    "window": WindowConfig,
    "dcst": DcstConfig,
    "gnn": GnnConfig,
    "pretrain": PretrainConfig,
    "distill": DistillConfig,
}


def _build(cls, raw, where: str, base=None, exclude=()):
    """``cls`` from ``raw``; keys missing from ``raw`` keep their values in ``base``."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)} - set(exclude)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    try:
        return dataclasses.replace(base, **raw) if base is not None else cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(raw: dict) -> ExperimentConfig:
    """Strict construction: unknown keys anywhere raise :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}")
    defaults = ExperimentConfig()
    kwargs = {}
    for key, value in raw.items():
        if key in _NESTED:
            if value is None:
                kwargs[key] = None
                continue
            # the experiment seed drives every stage; nested seeds are not configurable
            kwargs[key] = _build(
                _NESTED[key], value, key, getattr(defaults, key), exclude=("seed",) if key == "distill" else ()
            )
        elif key == "fractions":
            kwargs[key] = tuple(float(v) for v in value)
        elif key == "seed" and (not isinstance(value, int) or isinstance(value, bool)):
            raise ConfigError(f"seed must be an integer, got {value!r}")
        else:
            kwargs[key] = value
    if "csv" in raw and raw["csv"] is not None and "synthetic" not in raw:
        kwargs["synthetic"] = None
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def load(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(raw)


def dump(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
