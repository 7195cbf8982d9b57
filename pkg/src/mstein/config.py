"""Run configuration: flat key=value files with sections, flag overrides.

Precedence: built-in defaults < config file < WDM_SEED env var < command
line flags. Every field can be overridden by a flag of the same name.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields

from .augment import AugmentationPolicy
from .errors import ConfigError

CL_MODES = ("wdm", "cosine", "none")
VARIANCE_WEIGHTS = ("squared", "linear")


@dataclass
class TrainConfig:
    # model
    dim: int = 64
    layers: int = 2
    heads: int = 2
    max_len: int = 50
    ffn_dim: int = 0  # 0 means "same as dim"
    dropout: float = 0.5
    variance_weights: str = "squared"  # attention variance aggregation; "linear" is the ablation
    # optimization
    learning_rate: float = 1e-3
    weight_decay: float = 1e-2
    batch_size: int = 256
    max_epochs: int = 500
    patience: int = 50
    seed: int = 42
    grad_clip: float = 5.0
    # objective
    cl_loss: str = "wdm"  # wdm | cosine | none
    cl_weight: float = 0.1
    pvn_weight: float = 0.1
    pvn_margin: float = 0.5
    temperature: float = 1.0
    # augmentation
    ops: str = "crop,mask,reorder"
    crop_ratio: float = 0.6
    mask_ratio: float = 0.3
    reorder_ratio: float = 0.3
    substitute_rate: float = 0.2
    insert_rate: float = 0.2
    short_seq_threshold: int = 5
    correlation_top_k: int = 10
    # data perturbations (robustness experiments)
    noise_ratio: float = 0.0
    portion: float = 1.0
    # evaluation
    exclude_seen: bool = False
    length_buckets: str = "5,8,12,20"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dim < 1 or self.layers < 0 or self.heads < 1 or self.max_len < 1:
            raise ConfigError("dim/heads/max_len must be >= 1 and layers >= 0")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim ({self.dim}) must be divisible by heads ({self.heads})")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.cl_loss not in CL_MODES:
            raise ConfigError(f"cl_loss must be one of {CL_MODES}")
        if self.variance_weights not in VARIANCE_WEIGHTS:
            raise ConfigError(f"variance_weights must be one of {VARIANCE_WEIGHTS}")
        if self.cl_weight < 0 or self.pvn_weight < 0:
            raise ConfigError("cl_weight and pvn_weight must be >= 0")
        if not 0.0 <= self.noise_ratio <= 1.0:
            raise ConfigError("noise_ratio must be in [0, 1]")
        if not 0.0 < self.portion <= 1.0:
            raise ConfigError("portion must be in (0, 1]")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        try:
            self.policy()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def hidden_dim(self) -> int:
        return self.ffn_dim if self.ffn_dim > 0 else self.dim

    def policy(self) -> AugmentationPolicy:
        return AugmentationPolicy(
            ops=tuple(s.strip() for s in self.ops.split(",") if s.strip()),
            crop_ratio=self.crop_ratio,
            mask_ratio=self.mask_ratio,
            reorder_ratio=self.reorder_ratio,
            substitute_rate=self.substitute_rate,
            insert_rate=self.insert_rate,
            short_seq_threshold=self.short_seq_threshold,
            correlation_top_k=self.correlation_top_k,
        )

    def bucket_edges(self) -> list[int]:
        return [int(x) for x in self.length_buckets.split(",") if x.strip()]


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: str = ""
    out: str = ""
    noise_ratios: str = "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    portions: str = "0.2,0.4,0.6,0.8,1.0"
    batch_sizes: str = "16,32,64,128,256"

    def sweep_values(self, axis: str) -> list[float]:
        raw = {"noise": self.noise_ratios, "portion": self.portions, "batch": self.batch_sizes}[axis]
        values = [v.strip() for v in raw.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"empty sweep list for axis {axis!r}")
        return [float(v) for v in values]


_SECTIONS = {
    "model": ("dim", "layers", "heads", "max_len", "ffn_dim", "dropout", "variance_weights"),
    "train": (
        "learning_rate", "weight_decay", "batch_size", "max_epochs", "patience", "seed",
        "grad_clip", "cl_loss", "cl_weight", "pvn_weight", "pvn_margin", "temperature",
    ),
    "augment": (
        "ops", "crop_ratio", "mask_ratio", "reorder_ratio", "substitute_rate", "insert_rate",
        "short_seq_threshold", "correlation_top_k",
    ),
    "data": ("corpus", "noise_ratio", "portion"),
    "eval": ("exclude_seen", "length_buckets"),
    "sweep": ("noise_ratios", "portions", "batch_sizes"),
    "run": ("out",),
}

_RUN_FIELDS = ("corpus", "out", "noise_ratios", "portions", "batch_sizes")


def _coerce(raw: str, target_type):
    if target_type is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return target_type(raw)


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Build a RunConfig from an optional file plus override mapping.

    `overrides` maps field names to already-typed or string values (the
    CLI passes parsed flag values). WDM_SEED, when set, replaces the
    seed from the file but is still overridable by an explicit flag.
    """
    train_types = {f.name: f.type for f in fields(TrainConfig)}
    train_values: dict = {}
    run_values: dict = {}

    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                if key in _RUN_FIELDS or key == "out":
                    run_values[key] = raw
                else:
                    try:
                        train_values[key] = _coerce(raw, _TYPE_MAP[train_types[key]])
                    except ValueError as exc:
                        raise ConfigError(f"bad value for {key}: {raw!r}") from exc

    env_seed = os.environ.get("WDM_SEED")
    if env_seed is not None:
        try:
            train_values["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"WDM_SEED must be an integer, got {env_seed!r}") from exc

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in _RUN_FIELDS or key == "out":
            run_values[key] = value
        elif key in train_types:
            if isinstance(value, str):
                value = _coerce(value, _TYPE_MAP[train_types[key]])
            train_values[key] = value
        else:
            raise ConfigError(f"unknown config field {key!r}")

    try:
        train = TrainConfig(**train_values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(train=train, **{k: str(v) for k, v in run_values.items()})


# dataclass field types arrive as strings under `from __future__ import annotations`
_TYPE_MAP = {"int": int, "float": float, "str": str, "bool": bool, int: int, float: float, str: str, bool: bool}


def snapshot(run: RunConfig) -> str:
    """Canonical text form of a run configuration (stable across runs)."""
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            if key in _RUN_FIELDS or key == "out":
                value = getattr(run, key)
            else:
                value = getattr(run.train, key)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def model_fingerprint(cfg: TrainConfig, item_count: int) -> str:
    """Hash of the fields that determine parameter shapes and semantics."""
    parts = (
        f"dim={cfg.dim};layers={cfg.layers};heads={cfg.heads};max_len={cfg.max_len};"
        f"ffn_dim={cfg.hidden_dim};variance_weights={cfg.variance_weights};items={item_count}"
    )
    return hashlib.sha256(parts.encode()).hexdigest()
