"""Pose/audio data model, corpus manifests and segmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layout as L
from .audio import NullProvider, extract_mel
from .io import LoadError, SchemaError, read_pose, read_wav

FPS = 15
WINDOW = 64


@dataclass
class PoseSequence:
    frames: np.ndarray  # T x J x 2
    fps: float = FPS
    layout: L.SkeletonLayout = L.DEFAULT_LAYOUT

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        t_j_c = self.frames.shape
        if self.frames.ndim != 3 or t_j_c[0] < 1 or t_j_c[1:] != (self.layout.total_keypoints, 2):
            raise SchemaError(f"pose frames must be T x {self.layout.total_keypoints} x 2, got {t_j_c}")
        if not np.isfinite(self.frames).all():
            raise ValueError("pose contains non-finite coordinates")

    def __len__(self):
        return len(self.frames)

    @property
    def body(self) -> np.ndarray:
        return L.split(self.frames, self.layout)[0]

    @property
    def face(self) -> np.ndarray:
        return L.split(self.frames, self.layout)[1]


@dataclass
class SpeechFeatureSet:
    mel: np.ndarray  # T x M
    asr: np.ndarray | None = None  # T x D_asr
    sample_rate: int = 16000
    waveform: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.mel = np.asarray(self.mel, dtype=np.float32)
        if self.asr is not None:
            self.asr = np.asarray(self.asr, dtype=np.float32)
            if len(self.asr) != len(self.mel):
                raise ValueError(f"mel has {len(self.mel)} frames but asr has {len(self.asr)}")
        if not np.isfinite(self.mel).all() or (self.asr is not None and not np.isfinite(self.asr).all()):
            raise ValueError("speech features contain non-finite values")

    def __len__(self):
        return len(self.mel)


@dataclass
class GestureSample:
    audio: SpeechFeatureSet
    pose: PoseSequence
    speaker_id: str
    segment_id: str

    def __post_init__(self):
        if len(self.audio) != len(self.pose):
            raise ValueError(f"{self.segment_id}: audio has {len(self.audio)} frames, pose has {len(self.pose)}")


@dataclass
class ManifestEntry:
    audio: Path
    pose: Path
    speaker: str
    split: str
    extras: dict = field(default_factory=dict)

    @property
    def key(self) -> str:
        return self.pose.stem


@dataclass
class CorpusManifest:
    samples: list[ManifestEntry]
    layout: L.SkeletonLayout = L.DEFAULT_LAYOUT
    root: Path = Path(".")

    def split(self, name: str) -> list[ManifestEntry]:
        return [s for s in self.samples if s.split == name]

    def split_sizes(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for s in self.samples:
            out[s.split] = out.get(s.split, 0) + 1
        return out

    def to_json(self) -> dict:
        rows = []
        for s in self.samples:
            row = {"audio": _rel(s.audio, self.root), "pose": _rel(s.pose, self.root), "speaker": s.speaker, "split": s.split}
            row.update({k: (_rel(v, self.root) if isinstance(v, Path) else v) for k, v in s.extras.items()})
            rows.append(row)
        return {"layout": self.layout.to_json(), "samples": rows}


def _rel(p: Path, root: Path) -> str:
    try:
        return Path(p).relative_to(root).as_posix()
    except ValueError:
        return str(p)


_PATH_EXTRAS = ("mask", "beats", "envelope")


def load_corpus(manifest_path) -> CorpusManifest:
    """Load and validate a JSON manifest; every pose file is parsed and shape-checked."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except FileNotFoundError as exc:
        raise LoadError(f"manifest not found: {manifest_path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest_path}: invalid JSON ({exc})") from exc
    root = manifest_path.parent
    try:
        layout = L.SkeletonLayout.from_json(doc["layout"]) if "layout" in doc else L.DEFAULT_LAYOUT
        rows = doc["samples"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{manifest_path}: missing field {exc}") from exc

    entries = []
    for i, row in enumerate(rows):
        try:
            audio, pose = root / row["audio"], root / row["pose"]
            speaker, split = str(row["speaker"]), str(row.get("split", "train"))
        except KeyError as exc:
            raise SchemaError(f"{manifest_path}: sample {i} missing field {exc}") from exc
        if not audio.is_file():
            raise LoadError(f"audio file not found: {audio}")
        frames = read_pose(pose)
        if frames.shape[1:] != (layout.total_keypoints, 2):
            raise SchemaError(
                f"sample {i} ({pose.name}): expected T x {layout.total_keypoints} x 2, got {frames.shape}"
            )
        extras = {k: v for k, v in row.items() if k not in ("audio", "pose", "speaker", "split")}
        for k in _PATH_EXTRAS:
            if k in extras:
                extras[k] = root / extras[k]
        entries.append(ManifestEntry(audio, pose, speaker, split, extras))
    return CorpusManifest(entries, layout, root)


def write_manifest(manifest: CorpusManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=1) + "\n")


def segment_clips(
    pose: PoseSequence,
    waveform,
    sample_rate: int = 16000,
    window: int = WINDOW,
    speaker_id: str = "speaker",
    key: str = "clip",
    provider=None,
) -> list[GestureSample]:
    """Cut aligned, non-overlapping `window`-frame samples; a trailing remainder is dropped."""
    waveform = np.asarray(waveform, dtype=np.float64)
    n = len(pose) // window
    if n and len(waveform) < int(round(n * window * sample_rate / pose.fps)):
        raise ValueError(f"{key}: audio ({len(waveform) / sample_rate:.3f}s) shorter than pose")
    provider = provider or NullProvider()
    out = []
    for i in range(n):
        a = int(round(i * window * sample_rate / pose.fps))
        b = int(round((i + 1) * window * sample_rate / pose.fps))
        wav = waveform[a:b]
        seg_id = f"{key}_{i:03d}"
        feats = SpeechFeatureSet(
            mel=extract_mel(wav, sample_rate, window),
            asr=provider(wav, window, key=seg_id),
            sample_rate=sample_rate,
            waveform=wav,
        )
        seg = PoseSequence(pose.frames[i * window:(i + 1) * window], pose.fps, pose.layout)
        out.append(GestureSample(feats, seg, speaker_id, seg_id))
    return out


def load_samples(manifest: CorpusManifest, split: str | None = None, window: int = WINDOW, provider=None):
    """Read every manifest entry (optionally one split) and segment it."""
    out = []
    for entry in manifest.samples:
        if split is not None and entry.split != split:
            continue
        wav, sr = read_wav(entry.audio)
        pose = PoseSequence(read_pose(entry.pose), FPS, manifest.layout)
        out.extend(segment_clips(pose, wav, sr, window, entry.speaker, entry.key, provider))
    return out


@dataclass
class PoseNormalizer:
    """Per-coordinate-channel standardization (zero mean, unit std)."""

    mean: np.ndarray  # J x 2
    std: np.ndarray  # J x 2

    @classmethod
    def fit(cls, frames: np.ndarray, min_std: float = 1e-4) -> "PoseNormalizer":
        flat = np.asarray(frames, dtype=np.float64).reshape(-1, *np.shape(frames)[-2:])
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        # frozen coordinates are only centred
        std = np.where(std < min_std, 1.0, std)
        return cls(mean.astype(np.float32), std.astype(np.float32))

    def normalize(self, frames):
        return (frames - self.mean) / self.std

    def denormalize(self, frames):
        return frames * self.std + self.mean
