"""Configuration sections and the merged run configuration."""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    window: int = 64
    fps: float = 15.0
    n_mels: int = 64
    asr_provider: str = "null"  # null | file
    asr_dir: str = ""
    asr_dim: int = 29


@dataclass
class BodyBranchConfig:
    latent_dim: int = 512
    audio_channels: tuple[int, ...] = (64, 128, 256, 256)
    unet_depth: int = 3
    decoder_hidden: int = 1024
    epsilon: float = 1e-8
    con_grad: str = "both"  # both | pose | audio

    def __post_init__(self):
        self.audio_channels = tuple(int(c) for c in self.audio_channels)
        if min(self.latent_dim, self.decoder_hidden, self.unet_depth, *self.audio_channels) <= 0:
            raise ConfigError("body branch dimensions must be positive")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.con_grad not in ("both", "pose", "audio"):
            raise ConfigError(f"con_grad must be both|pose|audio, got {self.con_grad!r}")


@dataclass
class DetectorConfig:
    d1: int = 512
    d2: int = 1024
    k: int = 16
    theta_phi_dim: int = 512
    conv_channels: tuple[int, ...] = (256, 512)
    kernel_size: int = 5
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if min(self.d1, self.d2, self.theta_phi_dim, *self.conv_channels) <= 0:
            raise ConfigError("detector dimensions must be positive")
        if self.k < 1:
            raise ConfigError("k must be >= 1")


@dataclass
class FaceConfig:
    clip_frames: int = 16
    positive_fraction: float = 0.5
    classifier_hidden: int = 256
    update_body_audio: bool = True

    def __post_init__(self):
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ConfigError("positive_fraction must lie in [0, 1]")


@dataclass
class TrainingConfig:
    lambda_r: float = 10.0
    lambda_reg: float = 10.0
    lambda_h: float = 20.0
    lambda_con: float = 1.0
    lambda_c: float = 1.0
    batch_size: int = 32
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 300
    huber_delta: float = 1.0
    checkpoint_every: int = 10
    use_face_branch: bool = True

    def __post_init__(self):
        if min(self.lambda_r, self.lambda_reg, self.lambda_h, self.lambda_con, self.lambda_c) < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class EvalConfig:
    bc_sigma: float = 0.1
    fgd_dim: int = 32
    fgd_hidden: int = 128
    fgd_epochs: int = 60
    sync_embed_dim: int = 64
    sync_clip_frames: int = 9
    sync_margin: float = 1.0
    sync_min_shift: int = 5
    sync_epochs: int = 60
    learning_rate: float = 1e-3


SECTIONS = {
    "data": DataConfig,
    "branch": BodyBranchConfig,
    "detector": DetectorConfig,
    "face": FaceConfig,
    "training": TrainingConfig,
    "evaluation": EvalConfig,
}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    branch: BodyBranchConfig = field(default_factory=BodyBranchConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    face: FaceConfig = field(default_factory=FaceConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
        kw = {}
        for name, klass in SECTIONS.items():
            section = d.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"config section {name!r} must be a table")
            names = {f.name for f in dataclasses.fields(klass)}
            bad = set(section) - names
            if bad:
                raise ConfigError(f"unknown config key: {name}.{sorted(bad)[0]}")
            try:
                kw[name] = klass(**section)
            except TypeError as exc:
                raise ConfigError(f"bad value in section {name!r}: {exc}") from exc
        return cls(seed=int(d.get("seed", 0)), **kw)

    def override(self, dotted: dict) -> "RunConfig":
        """Apply ``{"training.epochs": 5, "seed": 2}``-style overrides; returns a new config."""
        d = self.to_dict()
        for key, value in dotted.items():
            if value is None:
                continue
            if key == "seed":
                d["seed"] = value
                continue
            section, _, name = key.partition(".")
            if section not in SECTIONS or name not in d[section]:
                raise ConfigError(f"unknown config key: {key}")
            d[section][name] = value
        return RunConfig.from_dict(d)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise FileNotFoundError(f"config not found: {path}") from exc
    try:
        d = json.loads(text) if path.suffix == ".json" else tomllib.loads(text.decode())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse ({exc})") from exc
    return RunConfig.from_dict(d)
