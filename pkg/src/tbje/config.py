"""RunConfig: one human-readable JSON file holding the encoder, training,
and mel settings plus file paths. Defaults give the full-scale bimodal
L+A recipe, so `tbje train` with no flags runs that configuration on
whatever bundle the paths point at."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .features import MelConfig
from .model import EncoderConfig
from .training import TrainConfig

PATH_KEYS = ("manifest", "embeddings", "bundle", "out")


def default_encoder() -> EncoderConfig:
    """The full-scale bimodal configuration: 6 joint blocks of width 512."""
    return EncoderConfig(
        modalities=("L", "A"), primary="L", blocks=6, width=512, heads=4,
        mlp_width=1024, lengths={"L": 50, "A": 40},
        input_widths={"L": 300, "A": 80}, task="sentiment-2",
        positional={"L": True})


def mel_to_dict(cfg: MelConfig) -> dict:
    return dataclasses.asdict(cfg)


def mel_from_dict(raw: dict) -> MelConfig:
    known = {f.name for f in dataclasses.fields(MelConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown mel config keys {sorted(unknown)}")
    return MelConfig(**raw)


@dataclass
class RunConfig:
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=default_encoder)
    training: TrainConfig = field(default_factory=TrainConfig)
    mel: MelConfig = field(default_factory=MelConfig)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.paths) - set(PATH_KEYS)
        if unknown:
            raise ConfigError(f"unknown path keys {sorted(unknown)}; "
                              f"known: {list(PATH_KEYS)}")
        if self.encoder.task != self.training.task:
            raise ConfigError(
                f"encoder task {self.encoder.task!r} and training task "
                f"{self.training.task!r} disagree")

    def path(self, key: str):
        value = self.paths.get(key)
        return None if value is None else Path(value)

    def require_path(self, key: str) -> Path:
        value = self.path(key)
        if value is None:
            raise ConfigError(f"no {key!r} path given; set paths.{key} in "
                              f"the config file or pass --{key}")
        return value

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "encoder": self.encoder.to_dict(),
            "training": self.training.to_dict(),
            "mel": mel_to_dict(self.mel),
            "paths": dict(self.paths),
        }

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        known = {"seed", "encoder", "training", "mel", "paths"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        kwargs = {}
        if "seed" in raw:
            kwargs["seed"] = raw["seed"]
        if "encoder" in raw:
            kwargs["encoder"] = EncoderConfig.from_dict(raw["encoder"])
        if "training" in raw:
            kwargs["training"] = TrainConfig.from_dict(raw["training"])
        if "mel" in raw:
            kwargs["mel"] = mel_from_dict(raw["mel"])
        if "paths" in raw:
            kwargs["paths"] = dict(raw["paths"])
        return RunConfig(**kwargs)


def save_run_config(path, cfg: RunConfig) -> None:
    text = json.dumps(cfg.to_dict(), sort_keys=True, indent=1,
                      ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no config file at {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return RunConfig.from_dict(raw)
