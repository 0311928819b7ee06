"""File formats: GPOS1 binary poses, CSV poses, mono WAV."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

POSE_MAGIC = b"GPOS1"
SAMPLE_RATE = 16000


class LoadError(OSError):
    """A referenced file is missing or unreadable."""


class SchemaError(ValueError):
    """A file parsed but does not match the expected layout."""


def write_pose(path, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 3 or frames.shape[2] != 2:
        raise SchemaError(f"pose array must be T x J x 2, got {frames.shape}")
    t, j, c = frames.shape
    with open(path, "wb") as fh:
        fh.write(POSE_MAGIC)
        fh.write(struct.pack("<III", t, j, c))
        fh.write(np.ascontiguousarray(frames).tobytes())


def write_pose_csv(path, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype=np.float32)
    np.savetxt(path, frames.reshape(len(frames), -1), delimiter=",", fmt="%.7g")


def read_pose(path) -> np.ndarray:
    """Read a pose file as float32 T x J x 2; the format is sniffed from the content."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read pose file {path}: {exc.strerror or exc}") from exc
    if raw.startswith(POSE_MAGIC):
        head = len(POSE_MAGIC) + 12
        if len(raw) < head:
            raise SchemaError(f"{path}: truncated GPOS1 header")
        t, j, c = struct.unpack("<III", raw[len(POSE_MAGIC):head])
        n = t * j * c
        if c != 2 or len(raw) - head != 4 * n:
            raise SchemaError(f"{path}: GPOS1 header {t}x{j}x{c} does not match payload of {len(raw) - head} bytes")
        return np.frombuffer(raw, dtype="<f4", count=n, offset=head).reshape(t, j, c).astype(np.float32)
    try:
        flat = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise SchemaError(f"{path}: not a GPOS1 or CSV pose file ({exc})") from exc
    if flat.shape[1] % 2:
        raise SchemaError(f"{path}: CSV rows must hold 2J values, got {flat.shape[1]}")
    return flat.reshape(len(flat), -1, 2).astype(np.float32)


def write_wav(path, waveform: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(waveform) * 32767.0), -32768, 32767).astype("<i2")
    wavfile.write(path, sample_rate, pcm)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV as float64 mono in [-1, 1]; multi-channel input is averaged."""
    try:
        sr, data = wavfile.read(path)
    except FileNotFoundError as exc:
        raise LoadError(f"cannot read audio file {path}: no such file") from exc
    except ValueError as exc:
        raise SchemaError(f"{path}: unreadable WAV ({exc})") from exc
    data = np.asarray(data)
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    return data, int(sr)
