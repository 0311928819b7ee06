"""Audio features: log-mel spectrogram and the pluggable ASR feature track."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable

import numpy as np

from .io import LoadError

log = logging.getLogger(__name__)

N_MELS = 64
WIN_SECONDS = 0.025
N_FFT = 1024
LOG_FLOOR = 1e-5


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(sample_rate: int, n_mels: int = N_MELS) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(sample_rate: int, n_fft: int = N_FFT, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular (HTK-scale, unit-peak) filters, shape (n_mels, n_fft // 2 + 1)."""
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None] - lo) / (mid - lo)
    down = (hi - freqs[None]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def resample_frames(x: np.ndarray, target: int) -> np.ndarray:
    """Linear interpolation along axis 0 onto `target` evenly spaced points."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n == target:
        return x.copy()
    if n == 1:
        return np.repeat(x, target, axis=0)
    pos = np.linspace(0.0, n - 1, target)
    lo = np.floor(pos).astype(int).clip(0, n - 2)
    frac = (pos - lo)[:, None] if x.ndim > 1 else pos - lo
    return x[lo] * (1.0 - frac) + x[lo + 1] * frac


def extract_mel(waveform, sample_rate: int, target_frames: int, n_mels: int = N_MELS) -> np.ndarray:
    """Log-mel spectrogram resampled to exactly `target_frames` rows (T x n_mels)."""
    x = np.asarray(waveform, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty waveform")
    if target_frames < 1:
        raise ValueError(f"target_frames must be >= 1, got {target_frames}")
    win = int(round(WIN_SECONDS * sample_rate))
    if x.size < win:
        x = np.pad(x, (0, win - x.size))
    # hop picked so that at least target_frames windows fit
    hop = max(1, (x.size - win) // max(target_frames - 1, 1))
    n_frames = 1 + (x.size - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(win)[None, :]
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    mel = power @ mel_filterbank(sample_rate, N_FFT, n_mels).T
    logmel = np.log(np.maximum(mel, LOG_FLOOR))
    return resample_frames(logmel, target_frames).astype(np.float32)


class ProviderError(RuntimeError):
    pass


class NullProvider:
    """No ASR features; downstream concatenation is skipped."""

    name = "null"
    dim = 0

    def __call__(self, waveform, target_frames: int, key: str | None = None):
        return None


class FileProvider:
    """Precomputed features stored as `<key>.npy` (frames x dim) under `root`."""

    name = "file"

    def __init__(self, root, dim: int = 29):
        self.root = Path(root)
        self.dim = dim

    def __call__(self, waveform, target_frames: int, key: str | None = None):
        path = self.root / f"{key}.npy"
        try:
            feats = np.load(path)
        except FileNotFoundError as exc:
            raise LoadError(f"ASR feature file not found: {path}") from exc
        feats = np.asarray(feats, dtype=np.float64).reshape(len(feats), -1)
        if feats.shape[1] != self.dim:
            raise ValueError(f"{path}: expected {self.dim}-dim features, got {feats.shape[1]}")
        return resample_frames(feats, target_frames).astype(np.float32)


class ExternalProvider:
    """Wraps a user callable `fn(waveform, target_frames) -> array`."""

    def __init__(self, fn: Callable, dim: int, name: str | None = None):
        self.fn = fn
        self.dim = dim
        self.name = name or getattr(fn, "__name__", "external")

    def __call__(self, waveform, target_frames: int, key: str | None = None):
        try:
            feats = self.fn(waveform, target_frames)
        except Exception as exc:
            raise ProviderError(f"ASR provider {self.name!r} failed: {exc}") from exc
        feats = np.asarray(feats, dtype=np.float64).reshape(len(feats), -1)
        if len(feats) != target_frames:
            feats = resample_frames(feats, target_frames)
        if not np.isfinite(feats).all():
            raise ProviderError(f"ASR provider {self.name!r} returned non-finite values")
        return feats.astype(np.float32)


def asr_features(waveform, target_frames: int, provider=None, key: str | None = None):
    provider = provider or NullProvider()
    return provider(waveform, target_frames, key=key)
