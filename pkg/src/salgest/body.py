"""Body branch: pose encoder, audio encoder + 1D UNet, shared pose decoder, consistency loss."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import BodyBranchConfig


def _check_finite(x: torch.Tensor, what: str):
    if not torch.isfinite(x).all():
        raise ValueError(f"{what} contains non-finite values")


class PoseEncoder(nn.Module):
    """Two stacked forward GRUs; one latent per frame."""

    def __init__(self, n_keypoints: int, latent_dim: int):
        super().__init__()
        self.gru = nn.GRU(n_keypoints * 2, latent_dim, num_layers=2, batch_first=True)

    def forward(self, pose):  # B x T x J x 2 -> B x T x D
        _check_finite(pose, "pose")
        z, _ = self.gru(pose.flatten(2))
        return z


class AudioEncoder(nn.Module):
    """Same-length 1D conv stack over mel frames."""

    def __init__(self, n_mels: int, channels=(64, 128, 256, 256), kernel_size: int = 3):
        super().__init__()
        layers = []
        c_in = n_mels
        for c in channels:
            layers += [nn.Conv1d(c_in, c, kernel_size, padding=kernel_size // 2), nn.LeakyReLU(0.2)]
            c_in = c
        self.net = nn.Sequential(*layers)
        self.out_channels = c_in

    def forward(self, mel):  # B x T x M -> B x C x T
        return self.net(mel.transpose(1, 2))


class _ConvBlock(nn.Sequential):
    def __init__(self, c_in, c_out):
        super().__init__(
            nn.Conv1d(c_in, c_out, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv1d(c_out, c_out, 3, padding=1), nn.LeakyReLU(0.2),
        )


class UNet1d(nn.Module):
    """UNet over the time axis with `depth` down/up levels and skip connections."""

    def __init__(self, in_channels: int, out_channels: int, depth: int = 3, width: int | None = None):
        super().__init__()
        width = width or out_channels
        self.inc = _ConvBlock(in_channels, width)
        self.down = nn.ModuleList(_ConvBlock(width, width) for _ in range(depth))
        self.up = nn.ModuleList(_ConvBlock(2 * width, width) for _ in range(depth))
        self.out = nn.Conv1d(width, out_channels, 1)

    def forward(self, x):  # B x C x T -> B x D x T
        h = self.inc(x)
        skips = []
        for block in self.down:
            skips.append(h)
            # ceil-mode pooling keeps odd and short lengths valid
            h = block(F.max_pool1d(h, 2, ceil_mode=True))
        for block, skip in zip(self.up, reversed(skips)):
            h = F.interpolate(h, size=skip.shape[-1], mode="linear", align_corners=False)
            h = block(torch.cat([h, skip], dim=1))
        return self.out(h)


class AudioPath(nn.Module):
    """Mel -> conv encoder -> (concat ASR track) -> UNet -> T x D latent."""

    def __init__(self, n_mels: int, asr_dim: int, cfg: BodyBranchConfig):
        super().__init__()
        self.asr_dim = asr_dim
        self.encoder = AudioEncoder(n_mels, cfg.audio_channels)
        self.unet = UNet1d(self.encoder.out_channels + asr_dim, cfg.latent_dim, cfg.unet_depth)

    def forward(self, mel, asr=None):  # -> B x T x D
        h = self.encoder(mel)
        if self.asr_dim:
            if asr is None:
                raise ValueError(f"this audio path expects a {self.asr_dim}-dim ASR track")
            if asr.shape[1] != mel.shape[1]:
                raise ValueError(f"mel has {mel.shape[1]} frames but asr has {asr.shape[1]}")
            h = torch.cat([h, asr.transpose(1, 2)], dim=1)
        return self.unet(h).transpose(1, 2)


class PoseDecoder(nn.Module):
    def __init__(self, latent_dim: int, hidden: int, n_keypoints: int):
        super().__init__()
        self.latent_dim = latent_dim
        self.n_keypoints = n_keypoints
        self.gru = nn.GRU(latent_dim, hidden, batch_first=True)
        self.head = nn.Linear(hidden, n_keypoints * 2)

    def forward(self, z):  # B x T x D -> B x T x J x 2
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"decoder expects latent dim {self.latent_dim}, got {z.shape[-1]}")
        h, _ = self.gru(z)
        return self.head(h).unflatten(-1, (self.n_keypoints, 2))


class BodyBranch(nn.Module):
    def __init__(self, n_body: int, n_mels: int, asr_dim: int, cfg: BodyBranchConfig):
        super().__init__()
        self.cfg = cfg
        self.pose_encoder = PoseEncoder(n_body, cfg.latent_dim)
        self.audio_path = AudioPath(n_mels, asr_dim, cfg)
        self.decoder = PoseDecoder(cfg.latent_dim, cfg.decoder_hidden, n_body)

    def encode_pose(self, body):
        return self.pose_encoder(body)

    def encode_audio(self, mel, asr=None):
        return self.audio_path(mel, asr)

    def decode(self, z):
        return self.decoder(z)

    def forward(self, body, mel, asr=None):
        zp = self.encode_pose(body)
        za = self.encode_audio(mel, asr)
        return zp, za, self.decode(zp), self.decode(za)


def consistency_terms(zp, za, epsilon: float = 1e-8):
    """Per-frame 1 - cosine similarity with the product of norms floored at epsilon."""
    dot = (zp * za).sum(-1)
    denom = torch.clamp(zp.norm(dim=-1) * za.norm(dim=-1), min=epsilon)
    return 1.0 - dot / denom


def consistency_loss(zp, za, saliency=None, epsilon: float = 1e-8):
    """Sum over frames of saliency-weighted (1 - cos); averaged over the batch for 3-D input.

    Saliency weights are treated as constants (detached).
    """
    if zp.shape != za.shape:
        raise ValueError(f"latent shapes differ: {tuple(zp.shape)} vs {tuple(za.shape)}")
    terms = consistency_terms(zp, za, epsilon)
    if saliency is not None:
        saliency = torch.as_tensor(saliency, dtype=terms.dtype)
        if (saliency < 0).any():
            raise ValueError("saliency weights must be non-negative")
        terms = terms * saliency.detach()
    per_seq = terms.sum(-1)
    return per_seq.mean() if per_seq.ndim else per_seq
