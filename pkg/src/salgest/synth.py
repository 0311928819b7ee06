"""Deterministic synthetic speech/gesture corpus with known ground truth.

Each sequence is generated from a per-frame amplitude envelope ``e``:

* audio = carrier tone scaled by ``e`` + short tone bursts on a periodic beat grid
* arms  = elbow/wrist/hand translated by ``ARM_GAIN * lowpass(e)``
* fingertips rotate back and forth with zero angular velocity exactly on beats
* lips open proportionally to ``e``

A planted fraction of sequences get an energy spike whose arm displacement is far
beyond the baseline, which is what the saliency labels and masks record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import layout as L
from .data import FPS, CorpusManifest, ManifestEntry, write_manifest
from .io import SAMPLE_RATE, write_pose, write_wav
from .labels import GRID_STEP

CARRIER_HZ = 220.0
CARRIER_AMP = 0.1
CLICK_HZ = 2500.0
CLICK_AMP = 0.5
CLICK_SECONDS = 0.02
ARM_GAIN = 0.02
SPIKE_AMP = 3.0
SPIKE_FRAMES = 8
FINGER_SWING = 0.35  # radians either side of rest
LIP_GAIN = 0.008
PLANTED_FRACTION = 0.3
SPEAKER = "synth"

# face-local lip points
_LOWER_LIP = (55, 56, 57, 58, 59, 65, 66, 67)
_UPPER_LIP = (49, 50, 51, 52, 53, 61, 62, 63)


@dataclass
class SequenceTruth:
    envelope: np.ndarray  # T, instantaneous amplitude envelope
    energy: np.ndarray  # T, low-pass energy driving the arms
    mask: np.ndarray  # T, uint8 planted salient frames
    beat_frames: np.ndarray  # planted beat frame indices inside [0, T)
    salient: bool


def _cell(col: float, row: float) -> tuple[float, float]:
    return ((col + 0.5) * GRID_STEP, (row + 0.5) * GRID_STEP)


def _face_points() -> np.ndarray:
    """70 face landmarks in the 68-point convention plus pupils, around (0.5, 0.15)."""
    cx, cy, s = 0.5, 0.15, 0.06
    pts = np.zeros((70, 2))
    a = np.linspace(np.pi, 0, 17)
    pts[0:17] = np.c_[cx + s * np.cos(a), cy + 0.2 * s + 1.1 * s * np.sin(a)]  # jaw
    pts[17:22] = np.c_[np.linspace(cx - 0.8 * s, cx - 0.2 * s, 5), np.full(5, cy - 0.6 * s)]
    pts[22:27] = np.c_[np.linspace(cx + 0.2 * s, cx + 0.8 * s, 5), np.full(5, cy - 0.6 * s)]
    pts[27:31] = np.c_[np.full(4, cx), np.linspace(cy - 0.4 * s, cy + 0.2 * s, 4)]
    pts[31:36] = np.c_[np.linspace(cx - 0.2 * s, cx + 0.2 * s, 5), np.full(5, cy + 0.3 * s)]
    for start, ex in ((36, cx - 0.45 * s), (42, cx + 0.45 * s)):
        t = np.linspace(0, 2 * np.pi, 7)[:6]
        pts[start:start + 6] = np.c_[ex + 0.18 * s * np.cos(t), cy - 0.3 * s + 0.08 * s * np.sin(t)]
    t = np.linspace(np.pi, -np.pi, 13)[:12]
    pts[48:60] = np.c_[cx + 0.4 * s * np.cos(t), cy + 0.65 * s - 0.15 * s * np.sin(t)]
    t = np.linspace(np.pi, -np.pi, 9)[:8]
    pts[60:68] = np.c_[cx + 0.25 * s * np.cos(t), cy + 0.65 * s - 0.06 * s * np.sin(t)]
    pts[68] = (cx - 0.45 * s, cy - 0.3 * s)
    pts[69] = (cx + 0.45 * s, cy - 0.3 * s)
    return pts


def _hand_points(wrist_col: float, wrist_row: float, mirror: bool) -> np.ndarray:
    pts = np.zeros((21, 2))
    pts[0] = _cell(wrist_col, wrist_row)
    for f in range(5):
        col = wrist_col + (f - 2) * (-1 if mirror else 1)
        for j in range(1, 5):
            pts[4 * f + j] = _cell(col, wrist_row + j)
    return pts


def rest_pose() -> np.ndarray:
    """Default resting pose, 121 x 2; body points sit on quantization-cell centres."""
    pose = np.zeros((L.TOTAL, 2))
    body = {
        L.NOSE: (10, 3), L.NECK: (10, 6), L.R_SHOULDER: (7, 6), L.R_ELBOW: (6, 9),
        L.R_WRIST: (6, 12), L.L_SHOULDER: (13, 6), L.L_ELBOW: (14, 9), L.L_WRIST: (14, 12),
        L.MID_HIP: (10, 15),
    }
    for k, (c, r) in body.items():
        pose[k] = _cell(c, r)
    pose[L.R_HAND_START:L.R_HAND_START + 21] = _hand_points(6, 12, mirror=False)
    pose[L.L_HAND_START:L.L_HAND_START + 21] = _hand_points(14, 12, mirror=True)
    pose[L.FACE_START:L.FACE_START + L.N_FACE] = _face_points()
    return pose


def _tukey(n_total: int, start: int, length: int, ramp: int = 2) -> np.ndarray:
    w = np.zeros(n_total)
    core = np.ones(length)
    r = 0.5 - 0.5 * np.cos(np.pi * (np.arange(1, ramp + 1) / (ramp + 1)))
    core[:ramp] = r
    core[-ramp:] = r[::-1]
    w[start:start + length] = core
    return w


def finger_angle(t: np.ndarray, period: int, phase: int) -> np.ndarray:
    """Fingertip swing angle; angular velocity is zero exactly at frames phase + k*period."""
    x = (np.asarray(t, dtype=np.float64) - phase) / period
    k = np.floor(x)
    u = x - k
    stroke = u - np.sin(2 * np.pi * u) / (2 * np.pi)
    sign = np.where(k.astype(np.int64) % 2 == 0, 1.0, -1.0)
    return FINGER_SWING * sign * (1.0 - 2.0 * stroke)


def _rotate_about(points, centres, angle):
    """Rotate (T, n, 2) points around (T, n, 2) centres by per-frame angles (T,)."""
    c, s = np.cos(angle)[:, None], np.sin(angle)[:, None]
    d = points - centres
    return centres + np.stack([c * d[..., 0] - s * d[..., 1], s * d[..., 0] + c * d[..., 1]], axis=-1)


def synthesize_sequence(rng: np.random.Generator, n_frames: int, salient: bool):
    """One sequence: (waveform, pose T x 121 x 2, SequenceTruth)."""
    g = gaussian_filter1d(rng.standard_normal(n_frames + 24), 2.0)[12:-12]
    g = (g - g.mean()) / (g.std() + 1e-12)
    envelope = 1.0 / (1.0 + np.exp(-2.5 * g))
    mask = np.zeros(n_frames, dtype=np.uint8)
    if salient:
        start = int(rng.integers(3, n_frames - 3 - SPIKE_FRAMES + 1))
        w = _tukey(n_frames, start, SPIKE_FRAMES)
        envelope = envelope + SPIKE_AMP * w
        mask = (w >= 0.5).astype(np.uint8)
    energy = gaussian_filter1d(envelope, 1.0, mode="nearest")

    period = int(rng.integers(7, 11))
    # onsets at t=0 have no preceding signal, and a pause needs frames on both sides;
    # keep beats two frames off either edge
    phase = int(rng.integers(2, period + 2))
    beat_frames = np.arange(phase, n_frames - 2, period)

    # pose
    t = np.arange(n_frames)
    rest = rest_pose()
    pose = np.repeat(rest[None], n_frames, axis=0)
    disp = ARM_GAIN * energy
    for elbow, wrist, hand, sx in ((L.R_ELBOW, L.R_WRIST, L.R_HAND_START, -0.4), (L.L_ELBOW, L.L_WRIST, L.L_HAND_START, 0.4)):
        idx = [elbow, wrist] + list(range(hand, hand + 21))
        pose[:, idx, 0] += sx * disp[:, None]
        pose[:, idx, 1] -= disp[:, None]
    angle = finger_angle(t, period, phase)
    for hand, sgn in ((L.R_HAND_START, 1.0), (L.L_HAND_START, -1.0)):
        tips = [hand + k for k in L.FINGERTIPS]
        parents = [hand + k - 1 for k in L.FINGERTIPS]
        pose[:, tips] = _rotate_about(pose[:, tips], pose[:, parents], sgn * angle)
    lower = [L.FACE_START + k for k in _LOWER_LIP]
    upper = [L.FACE_START + k for k in _UPPER_LIP]
    pose[:, lower, 1] += LIP_GAIN * envelope[:, None]
    pose[:, upper, 1] -= 0.3 * LIP_GAIN * envelope[:, None]

    # audio
    n_samples = int(round(n_frames * SAMPLE_RATE / FPS))
    ts = np.arange(n_samples) / SAMPLE_RATE
    env_s = np.interp(ts * FPS, t, envelope)
    wav = CARRIER_AMP * env_s * np.sin(2 * np.pi * CARRIER_HZ * ts + rng.uniform(0, 2 * np.pi))
    n_click = int(CLICK_SECONDS * SAMPLE_RATE)
    tau = np.arange(n_click) / SAMPLE_RATE
    click = CLICK_AMP * np.exp(-tau / 0.004) * np.sin(2 * np.pi * CLICK_HZ * tau)
    for b in beat_frames:
        s0 = int(round(b * SAMPLE_RATE / FPS))
        seg = wav[s0:s0 + n_click]
        seg += click[:len(seg)]
    return wav, pose.astype(np.float32), SequenceTruth(envelope, energy, mask, beat_frames, salient)


def make_synthetic_corpus(seed: int, n_sequences: int, frames_per_sequence: int = 64, out_dir=None,
                          planted_fraction: float = PLANTED_FRACTION) -> CorpusManifest:
    """Write a corpus of `n_sequences` clips to `out_dir` and return its manifest."""
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    if frames_per_sequence < SPIKE_FRAMES + 6:
        raise ValueError(f"frames_per_sequence must be >= {SPIKE_FRAMES + 6}")
    out = Path(out_dir)
    for sub in ("audio", "pose", "truth"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng([seed, 0])
    n_planted = int(round(planted_fraction * n_sequences))
    planted = set(rng.permutation(n_sequences)[:n_planted].tolist())
    order = rng.permutation(n_sequences)
    n_hold = n_sequences // 10
    split = {int(i): "train" for i in order}
    for i in order[:n_hold]:
        split[int(i)] = "test"
    for i in order[n_hold:2 * n_hold]:
        split[int(i)] = "val"

    entries = []
    for i in range(n_sequences):
        wav, pose, truth = synthesize_sequence(np.random.default_rng([seed, 1, i]), frames_per_sequence, i in planted)
        name = f"seq_{i:04d}"
        audio_p, pose_p = out / "audio" / f"{name}.wav", out / "pose" / f"{name}.gpos"
        mask_p, beats_p, env_p = (out / "truth" / f"{name}{ext}" for ext in (".mask", ".beats", ".env"))
        write_wav(audio_p, wav)
        write_pose(pose_p, pose)
        mask_p.write_bytes(truth.mask.astype(np.uint8).tobytes())
        beats_p.write_text("".join(f"{float(b) / FPS!r}\n" for b in truth.beat_frames))
        env_p.write_bytes(np.stack([truth.envelope, truth.energy]).astype("<f4").tobytes())
        extras = {"mask": mask_p, "beats": beats_p, "envelope": env_p, "label": int(truth.salient)}
        entries.append(ManifestEntry(audio_p, pose_p, SPEAKER, split[i], extras))

    manifest = CorpusManifest(entries, L.DEFAULT_LAYOUT, out)
    write_manifest(manifest, out / "manifest.json")
    (out / "truth.json").write_text(json.dumps({
        "seed": seed, "n_sequences": n_sequences, "frames_per_sequence": frames_per_sequence,
        "fps": FPS, "sample_rate": SAMPLE_RATE, "planted": sorted(int(i) for i in planted),
    }, indent=1) + "\n")
    return manifest


def read_truth(entry) -> SequenceTruth:
    """Load the ground-truth extras the generator wrote for a manifest entry."""
    mask = np.frombuffer(Path(entry.extras["mask"]).read_bytes(), dtype=np.uint8).copy()
    beats = np.array([float(x) for x in Path(entry.extras["beats"]).read_text().split()])
    env = np.frombuffer(Path(entry.extras["envelope"]).read_bytes(), dtype="<f4").reshape(2, -1)
    return SequenceTruth(env[0].astype(np.float64), env[1].astype(np.float64), mask,
                         np.round(beats * FPS).astype(np.int64), bool(entry.extras.get("label", 0)))
