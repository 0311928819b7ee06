"""Motion beats from bone-angle changes and audio beats from onset strength."""

from __future__ import annotations

import logging

import numpy as np

from . import layout as L

log = logging.getLogger(__name__)

ENV_WIN = 320  # 20 ms at 16 kHz
ENV_HOP = 160
PRE_EMPHASIS = 0.97


def bone_angles(body_frames: np.ndarray, bones: np.ndarray) -> np.ndarray:
    """Angle of every bone per frame, shape (T, n_bones)."""
    v = body_frames[:, bones[:, 1]] - body_frames[:, bones[:, 0]]
    return np.arctan2(v[..., 1], v[..., 0])


def motion_change(body_frames, bones) -> np.ndarray:
    """Summed absolute bone-angle change per interior frame (central difference).

    Entry i corresponds to frame i + 1; the signal is symmetric under time reversal.
    """
    ang = bone_angles(np.asarray(body_frames, dtype=np.float64), np.asarray(bones))
    d = ang[2:] - ang[:-2]
    d = (d + np.pi) % (2 * np.pi) - np.pi
    return 0.5 * np.abs(d).sum(axis=1)


def extract_motion_beats(pose, fps: float | None = None, layout: L.SkeletonLayout | None = None) -> np.ndarray:
    """Beat times (s) at kinematic pauses: strict local minima of the change signal below its mean.

    `pose` is a PoseSequence or a (T, J_b, 2) body array (then `fps` and `layout` apply).
    """
    if hasattr(pose, "frames"):
        fps = pose.fps if fps is None else fps
        layout = pose.layout
        body = pose.body
    else:
        body = np.asarray(pose)
        layout = layout or L.DEFAULT_LAYOUT
        fps = 15.0 if fps is None else fps
    if len(body) < 3:
        return np.zeros(0)
    c = motion_change(body, layout.body_bones())
    if len(c) < 3:
        return np.zeros(0)
    mid = c[1:-1]
    is_min = (mid < c[:-2]) & (mid < c[2:]) & (mid < c.mean())
    frames = np.nonzero(is_min)[0] + 2  # +1 for the interior offset, +1 for the central-difference offset
    return frames / float(fps)


def energy_envelope(waveform, win: int = ENV_WIN, hop: int = ENV_HOP) -> np.ndarray:
    x = np.asarray(waveform, dtype=np.float64).ravel()
    x = np.append(x[:1], x[1:] - PRE_EMPHASIS * x[:-1])
    if len(x) < win:
        x = np.pad(x, (0, win - len(x)))
    n = 1 + (len(x) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return np.sqrt((x[idx] ** 2).mean(axis=1))


def extract_audio_beats(waveform, sample_rate: int = 16000, min_gap: float = 0.2, rel_threshold: float = 0.3,
                        win: int = ENV_WIN, hop: int = ENV_HOP) -> np.ndarray:
    """Onset times (s): peaks of the rectified energy-envelope derivative.

    The onset strength is divided by its maximum so the result does not depend on
    the waveform's gain. Peaks below `rel_threshold` are ignored and peaks closer
    than `min_gap` to a stronger one are suppressed.
    """
    env = energy_envelope(waveform, win, hop)
    if len(env) < 2:
        return np.zeros(0)
    flux = np.maximum(np.diff(env), 0.0)
    peak = flux.max()
    if not np.isfinite(peak) or peak <= 1e-12 * max(env.max(), 1e-300) or peak == 0.0:
        return np.zeros(0)
    flux = flux / peak
    left = np.r_[-np.inf, flux[:-1]]
    right = np.r_[flux[1:], -np.inf]
    cand = np.nonzero((flux >= left) & (flux > right) & (flux >= rel_threshold))[0]
    gap = int(np.ceil(min_gap * sample_rate / hop))
    kept: list[int] = []
    for i in cand[np.argsort(-flux[cand], kind="stable")]:
        if all(abs(i - k) >= gap for k in kept):
            kept.append(int(i))
    kept.sort()
    # flux[i] is the rise into window i + 1; report the centre of its newest hop
    return (np.array(kept, dtype=np.float64) + 1) * hop / sample_rate + (win - hop / 2) / sample_rate


def beat_consistency(audio_beats, motion_beats, sigma: float = 0.1) -> float:
    """Mean Gaussian-kernel agreement of each audio beat with its nearest motion beat."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    a = np.asarray(audio_beats, dtype=np.float64).ravel()
    m = np.asarray(motion_beats, dtype=np.float64).ravel()
    if len(a) == 0:
        log.warning("no audio beats; beat consistency reported as 0")
        return 0.0
    if len(m) == 0:
        return 0.0
    d = np.min(np.abs(a[:, None] - m[None, :]), axis=1)
    return float(np.mean(np.exp(-(d ** 2) / (2 * sigma ** 2))))
