"""Resting pose and sequence-level saliency labels (triple-variance rule)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GRID_STEP = 0.05


@dataclass
class SequenceSaliencyLabel:
    label: int
    distances: np.ndarray
    threshold: float


def compute_resting_pose(body_frames, grid_step: float = GRID_STEP) -> np.ndarray:
    """Most frequent body posture.

    Every frame is quantized to a `grid_step` grid; the modal cell wins (ties go to
    the lexicographically smallest cell) and the raw frames inside it are averaged.

    `body_frames` is (N, J_b, 2) or a list of such arrays.
    """
    if isinstance(body_frames, (list, tuple)):
        if not body_frames:
            raise ValueError("no poses given")
        body_frames = np.concatenate([np.asarray(b) for b in body_frames], axis=0)
    body_frames = np.asarray(body_frames, dtype=np.float64)
    if body_frames.ndim != 3 or len(body_frames) == 0:
        raise ValueError(f"expected a non-empty N x J x 2 array, got shape {body_frames.shape}")
    flat = body_frames.reshape(len(body_frames), -1)
    cells = np.floor(flat / grid_step).astype(np.int64)
    # np.unique sorts rows lexicographically, argmax takes the first maximum
    uniq, inverse, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    best = int(np.argmax(counts))
    members = flat[inverse.ravel() == best]
    return members.mean(axis=0).reshape(body_frames.shape[1:])


def rest_distances(body_frames, resting) -> np.ndarray:
    """Per-frame L2 distance of the flattened body coordinates to the resting pose."""
    body = np.asarray(body_frames, dtype=np.float64)
    diff = body - np.asarray(resting, dtype=np.float64)
    return np.sqrt((diff.reshape(len(body), -1) ** 2).sum(axis=1))


def saliency_threshold(distances) -> float:
    """mean + 3 std over all per-frame distances of one speaker's training split."""
    d = np.concatenate([np.ravel(x) for x in distances]) if isinstance(distances, (list, tuple)) else np.ravel(distances)
    return float(d.mean() + 3.0 * d.std())


def derive_sequence_label(body_frames, resting, threshold: float) -> SequenceSaliencyLabel:
    body = np.asarray(body_frames)
    if body.ndim != 3 or body.shape[1:] != np.shape(resting):
        raise ValueError(f"body frames {body.shape} do not match resting pose {np.shape(resting)}")
    d = rest_distances(body, resting)
    return SequenceSaliencyLabel(int(d.max() > threshold), d, float(threshold))


@dataclass
class SpeakerStats:
    resting: np.ndarray
    threshold: float


def speaker_statistics(bodies_by_speaker: dict[str, list[np.ndarray]]) -> dict[str, SpeakerStats]:
    """Resting pose and threshold per speaker from that speaker's training sequences."""
    out = {}
    for spk, bodies in bodies_by_speaker.items():
        rest = compute_resting_pose(bodies)
        thr = saliency_threshold([rest_distances(b, rest) for b in bodies])
        out[spk] = SpeakerStats(rest, thr)
    return out


def label_samples(samples, train_samples=None) -> tuple[np.ndarray, dict[str, SpeakerStats]]:
    """Sequence labels for `samples`; statistics come from `train_samples` (default: same)."""
    train_samples = samples if train_samples is None else train_samples
    grouped: dict[str, list[np.ndarray]] = {}
    for s in train_samples:
        grouped.setdefault(s.speaker_id, []).append(s.pose.body)
    stats = speaker_statistics(grouped)
    labels = []
    for s in samples:
        st = stats.get(s.speaker_id)
        if st is None:
            raise KeyError(f"speaker {s.speaker_id!r} has no training sequences")
        labels.append(derive_sequence_label(s.pose.body, st.resting, st.threshold).label)
    return np.array(labels, dtype=np.int64), stats
