"""Flat key=value run configuration with a closed key schema.

Unknown keys are rejected so typos cannot silently fall back to
defaults. `--set key=value` pairs override file values; the resolved
config is dumped next to every run's outputs.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from .backbone import BackboneConfig
from .data import AugmentConfig, SynthConfig
from .heads import AblationFlags, ModelConfig, PeeConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v != "")


def _parse_float_list(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v != "")


# key -> (parser, default)
SCHEMA: dict = {
    "backbone.stem_channels": (int, 16),
    "backbone.stage_channels": (_parse_int_list, (16, 32, 64, 64)),
    "backbone.blocks_per_stage": (_parse_int_list, (1, 1, 1, 1)),
    "backbone.reduce_channels": (int, 32),
    "aspp.rates": (_parse_int_list, (1, 2, 4, 6)),
    "aspp.out_channels": (int, 64),
    "model.pee": (_parse_bool, True),
    "model.mtl": (_parse_bool, True),
    "model.cff": (_parse_bool, True),
    "model.ia": (_parse_bool, True),
    "model.decoder_channels": (int, 32),
    "pee.pool_sizes_stage1": (_parse_int_list, (5, 7)),
    "pee.pool_sizes_stage2": (_parse_int_list, (5, 7)),
    "pee.pool_sizes_stage3": (_parse_int_list, (3, 5)),
    "pee.pool_sizes_stage4": (_parse_int_list, (3, 5)),
    "train.epochs": (int, 30),
    "train.batch_size": (int, 4),
    "train.seed": (int, 1),
    "train.lambdas": (_parse_float_list, (1.0, 1.0, 1.0, 1.0)),
    "train.base_lr": (float, 1e-4),
    "train.momentum": (float, 0.9),
    "train.poly_power": (float, 0.9),
    "train.checkpoint_every": (int, 10),
    "train.workers": (int, 1),
    "train.augment": (_parse_bool, True),
    "train.threshold": (float, 0.5),
    "train.out_dir": (str, "runs"),
    "data.dir": (str, "data/synth"),
    "data.out_size": (int, 64),
    "data.edge_width": (int, 3),
    "data.flip_h_prob": (float, 0.5),
    "data.flip_v_prob": (float, 0.5),
    "data.rot_deg_min": (float, -10.0),
    "data.rot_deg_max": (float, 10.0),
    "data.crop_scale_min": (float, 0.5),
    "data.crop_scale_max": (float, 1.0),
    "data.split": (str, "train"),
    "data.train_count": (int, 200),
    "synth.n_images": (int, 250),
    "synth.image_size": (int, 64),
    "synth.axes_min": (float, 0.10),
    "synth.axes_max": (float, 0.25),
    "synth.contrast": (float, 0.4),
    "synth.noise_sigma": (float, 0.05),
    "synth.irregularity": (float, 0.3),
    "synth.seed": (int, 7),
    "synth.out_dir": (str, "data/synth"),
}


class RunConfig:
    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    def resolved_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            v = self.values[key]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key}={v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()[:8]


def _apply_pair(values: dict, key: str, raw: str, origin: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"{origin}: unknown config key {key!r}")
    parser, _ = SCHEMA[key]
    try:
        values[key] = parser(raw)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"{origin}: bad value for {key!r}: {e}") from e


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Resolve defaults, then the config file, then --set overrides."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = line.split("=", 1)
            _apply_pair(values, key.strip(), raw.strip(), f"{path}:{lineno}")
    for pair in overrides or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        _apply_pair(values, key.strip(), raw.strip(), "--set")
    return RunConfig(values)


def model_config(cfg: RunConfig) -> ModelConfig:
    backbone = BackboneConfig(
        stem_channels=cfg["backbone.stem_channels"],
        stage_channels=cfg["backbone.stage_channels"],
        blocks_per_stage=cfg["backbone.blocks_per_stage"],
        aspp_rates=cfg["aspp.rates"],
        aspp_out_channels=cfg["aspp.out_channels"],
        reduce_channels=cfg["backbone.reduce_channels"],
    )
    pee = PeeConfig(pool_sizes_per_stage=tuple(
        cfg[f"pee.pool_sizes_stage{i}"] for i in range(1, 5)))
    flags = AblationFlags(pee=cfg["model.pee"], mtl=cfg["model.mtl"],
                          cff=cfg["model.cff"], ia=cfg["model.ia"])
    return ModelConfig(backbone=backbone, pee=pee, flags=flags,
                       decoder_channels=cfg["model.decoder_channels"])


def train_config(cfg: RunConfig) -> TrainConfig:
    lambdas = cfg["train.lambdas"]
    if len(lambdas) != 4:
        raise ConfigError("train.lambdas needs exactly 4 values")
    return TrainConfig(
        epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
        seed=cfg["train.seed"], lambdas=lambdas, base_lr=cfg["train.base_lr"],
        momentum=cfg["train.momentum"], poly_power=cfg["train.poly_power"],
        checkpoint_every=cfg["train.checkpoint_every"], workers=cfg["train.workers"],
        augment_enabled=cfg["train.augment"], threshold=cfg["train.threshold"],
    )


def augment_config(cfg: RunConfig) -> AugmentConfig:
    return AugmentConfig(
        flip_h_prob=cfg["data.flip_h_prob"], flip_v_prob=cfg["data.flip_v_prob"],
        rot_deg_range=(cfg["data.rot_deg_min"], cfg["data.rot_deg_max"]),
        crop_scale_range=(cfg["data.crop_scale_min"], cfg["data.crop_scale_max"]),
        out_size=cfg["data.out_size"], seed=cfg["train.seed"],
        edge_width=cfg["data.edge_width"],
    )


def synth_config(cfg: RunConfig) -> SynthConfig:
    return SynthConfig(
        n_images=cfg["synth.n_images"], image_size=cfg["synth.image_size"],
        axes_min=cfg["synth.axes_min"], axes_max=cfg["synth.axes_max"],
        contrast=cfg["synth.contrast"], noise_sigma=cfg["synth.noise_sigma"],
        irregularity=cfg["synth.irregularity"], seed=cfg["synth.seed"],
        edge_width=cfg["data.edge_width"],
    )
