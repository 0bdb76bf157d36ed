"""Run configuration: flat dotted-key text files plus CLI overrides.

A config file is lines of `section.key = value` (# comments allowed).
Values are Python literals where possible, bare strings otherwise. The
resolved configuration, defaults included, is snapshotted into the run
directory so a run is fully described by one file.
"""

from __future__ import annotations

import ast
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .vit import ViTConfig

__all__ = [
    "ConfigError",
    "StageConfig",
    "DataConfig",
    "AugmentConfig",
    "RunConfig",
    "parse_config_text",
    "load_run_config",
    "flatten_config",
    "config_hash",
]

FRAMEWORKS = ("ema_teacher", "fixmatch")
STAGES = ("supervised_ft", "semi_ft")


class ConfigError(ValueError):
    """Invalid configuration; carries a field-level message."""


@dataclass
class StageConfig:
    """Hyperparameters for one fine-tuning stage.

    tau nominally lives in [0, 1]; values above 1 are accepted and close
    the pseudo-label gate entirely, which is occasionally useful to turn
    a semi stage into a supervised one without changing anything else.
    """

    stage: str = "semi_ft"
    enabled: bool = True
    epochs: int = 10
    warmup_epochs: int = 1
    base_lr: float = 1e-3
    min_lr: float = 0.0
    weight_decay: float = 0.05
    layer_decay: float = 1.0
    mu: float = 5.0
    tau: float = 0.5
    ema_momentum: float = 0.9999
    label_smoothing: float = 0.1
    smooth_pseudo_labels: bool = True
    mixup_alpha: float = 0.8
    cutmix_alpha: float = 1.0
    switch_prob: float = 0.5
    unlabeled_mode: str = "blend"
    unlabeled_ratio: int = 5
    batch_size: int = 10
    seed: int = 0
    framework: str = "ema_teacher"
    unlabeled_mixup: str = "prob_pseudo"
    eval_every: int = 1
    checkpoint_every: int = 1

    def validate(self, prefix: str) -> None:
        def bad(name: str, why: str) -> ConfigError:
            return ConfigError(f"{prefix}.{name}: {why}")

        if self.stage not in STAGES:
            raise bad("stage", f"must be one of {STAGES}, got {self.stage!r}")
        if self.epochs < 0:
            raise bad("epochs", f"must be >= 0, got {self.epochs}")
        if self.epochs > 0 and not 0 <= self.warmup_epochs < self.epochs:
            raise bad("warmup_epochs", f"need 0 <= warmup < epochs, got {self.warmup_epochs}/{self.epochs}")
        if self.epochs == 0 and self.warmup_epochs != 0:
            raise bad("warmup_epochs", "must be 0 when epochs is 0")
        if self.mu < 0:
            raise bad("mu", f"must be >= 0, got {self.mu}")
        if self.tau < 0:
            raise bad("tau", f"must be >= 0, got {self.tau}")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise bad("ema_momentum", f"must be in [0, 1], got {self.ema_momentum}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise bad("label_smoothing", f"must be in [0, 1), got {self.label_smoothing}")
        if self.mixup_alpha < 0 or self.cutmix_alpha < 0:
            raise bad("mixup_alpha", "alphas must be >= 0")
        if not 0.0 < self.layer_decay <= 1.0:
            raise bad("layer_decay", f"must be in (0, 1], got {self.layer_decay}")
        if self.unlabeled_ratio < 1:
            raise bad("unlabeled_ratio", f"must be >= 1, got {self.unlabeled_ratio}")
        if self.batch_size < 1:
            raise bad("batch_size", f"must be >= 1, got {self.batch_size}")
        if self.framework not in FRAMEWORKS:
            raise bad("framework", f"must be one of {FRAMEWORKS}, got {self.framework!r}")
        from .mixup import UNLABELED_MIXUP_VARIANTS

        if self.unlabeled_mixup not in UNLABELED_MIXUP_VARIANTS:
            raise bad("unlabeled_mixup",
                      f"must be one of {UNLABELED_MIXUP_VARIANTS}, got {self.unlabeled_mixup!r}")
        if self.unlabeled_mode not in ("blend", "cut"):
            raise bad("unlabeled_mode", f"must be 'blend' or 'cut', got {self.unlabeled_mode!r}")
        if self.eval_every < 1 or self.checkpoint_every < 1:
            raise bad("eval_every", "cadences must be >= 1")


@dataclass
class DataConfig:
    source: str = "synthetic"
    num_train: int = 5000
    num_eval: int = 1000
    num_classes: int = 10
    image_size: int = 32
    labeled_fraction: float = 0.1
    train_manifest: str = ""
    eval_manifest: str = ""

    def validate(self) -> None:
        if self.source not in ("synthetic", "manifest"):
            raise ConfigError(f"data.source: must be 'synthetic' or 'manifest', got {self.source!r}")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ConfigError(
                f"data.labeled_fraction: must be in (0, 1], got {self.labeled_fraction}"
            )
        if self.source == "manifest" and (not self.train_manifest or not self.eval_manifest):
            raise ConfigError("data.train_manifest/eval_manifest: required for manifest source")
        if self.num_classes < 2:
            raise ConfigError(f"data.num_classes: must be >= 2, got {self.num_classes}")


@dataclass
class AugmentConfig:
    weak_crop_scale: tuple[float, float] = (0.6, 1.0)
    strong_crop_scale: tuple[float, float] = (0.35, 1.0)
    hflip_prob: float = 0.5
    color_jitter: float = 0.4
    rand_augment_ops: int = 2
    rand_augment_magnitude: int = 9
    rand_augment_std: float = 0.5
    erase_prob: float = 0.25


@dataclass
class RunConfig:
    name: str = "run"
    seed: int = 0
    out_dir: str = "runs/run"
    init_checkpoint: str = "scratch"
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ViTConfig = field(default_factory=ViTConfig)
    stage2: StageConfig = field(default_factory=lambda: StageConfig(
        stage="supervised_ft", epochs=30, warmup_epochs=2, mu=0.0, layer_decay=1.0,
        batch_size=50, unlabeled_mixup="none"))
    stage3: StageConfig = field(default_factory=lambda: StageConfig(
        stage="semi_ft", epochs=15, warmup_epochs=1, ema_momentum=0.99))

    def validate(self) -> None:
        self.data.validate()
        self.stage2.validate("stage2")
        self.stage3.validate("stage3")
        if self.model.num_classes != self.data.num_classes:
            raise ConfigError(
                f"model.num_classes: {self.model.num_classes} disagrees with "
                f"data.num_classes {self.data.num_classes}"
            )
        if self.model.image_size != self.data.image_size:
            raise ConfigError(
                f"model.image_size: {self.model.image_size} disagrees with "
                f"data.image_size {self.data.image_size}"
            )


def _parse_value(raw: str):
    raw = raw.strip()
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_config_text(text: str) -> dict[str, object]:
    """Dotted-key lines into a flat dict."""
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        out[key.strip()] = _parse_value(raw)
    return out


_SECTIONS = {
    "run": None,
    "data": DataConfig,
    "augment": AugmentConfig,
    "model": ViTConfig,
    "stage2": StageConfig,
    "stage3": StageConfig,
}

_RUN_KEYS = ("name", "seed", "out_dir", "init_checkpoint")


def _coerce(section: str, key: str, value, target_type) -> object:
    if target_type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target_type in (tuple, "tuple") and isinstance(value, (list, tuple)):
        return tuple(value)
    return value


def build_run_config(flat: dict[str, object]) -> RunConfig:
    """Overlay flat dotted keys onto defaults; unknown keys are errors."""
    cfg = RunConfig()
    model_kwargs: dict[str, object] = {}
    for dotted, value in flat.items():
        if "." not in dotted:
            raise ConfigError(f"{dotted}: keys must be section.field")
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"{dotted}: unknown section {section!r}")
        if section == "run":
            if key not in _RUN_KEYS:
                raise ConfigError(f"{dotted}: unknown run key {key!r}")
            setattr(cfg, key, value)
            continue
        target = {"data": cfg.data, "augment": cfg.augment,
                  "stage2": cfg.stage2, "stage3": cfg.stage3}.get(section)
        if section == "model":
            valid = {f.name for f in fields(ViTConfig)}
            if key not in valid:
                raise ConfigError(f"{dotted}: unknown model field {key!r}")
            model_kwargs[key] = value
            continue
        valid = {f.name: f.type for f in fields(target)}
        if key not in valid:
            raise ConfigError(f"{dotted}: unknown field {key!r} in section {section!r}")
        current = getattr(target, key)
        if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if isinstance(current, tuple) and isinstance(value, (list, tuple)):
            value = tuple(value)
        setattr(target, key, value)
    if model_kwargs:
        base = {f.name: getattr(cfg.model, f.name) for f in fields(ViTConfig)}
        for key, value in model_kwargs.items():
            if isinstance(base[key], float) and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            base[key] = value
        try:
            cfg.model = ViTConfig(**base)
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from exc
    cfg.stage2.stage = "supervised_ft"
    cfg.stage3.stage = "semi_ft"
    cfg.stage2.seed = cfg.seed
    cfg.stage3.seed = cfg.seed
    cfg.validate()
    return cfg


def load_run_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    """Config file plus --set key=value overrides, validated."""
    flat: dict[str, object] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        flat.update(parse_config_text(text))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        flat[key.strip()] = _parse_value(raw)
    return build_run_config(flat)


def flatten_config(cfg: RunConfig) -> dict[str, object]:
    """Every resolved field as dotted keys, defaults included."""
    flat: dict[str, object] = {key: getattr(cfg, key) for key in _RUN_KEYS}
    flat = {f"run.{k}": v for k, v in flat.items()}
    for section, obj in (("data", cfg.data), ("augment", cfg.augment), ("model", cfg.model),
                         ("stage2", cfg.stage2), ("stage3", cfg.stage3)):
        for f in fields(obj):
            flat[f"{section}.{f.name}"] = getattr(obj, f.name)
    return flat


def render_config(cfg: RunConfig) -> str:
    lines = [f"{key} = {value!r}" for key, value in sorted(flatten_config(cfg).items())]
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(render_config(cfg).encode("utf-8")).hexdigest()[:16]
