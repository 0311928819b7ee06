"""Face branch and the face/body temporal-alignment classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .body import AudioPath, PoseDecoder
from .config import BodyBranchConfig

PROB_CLAMP = 1e-7
ALIGNED = (1.0, 0.0)
MISALIGNED = (0.0, 1.0)


class FaceBranch(nn.Module):
    """Separate mel-only audio path and decoder for the face keypoints."""

    def __init__(self, n_face: int, n_mels: int, cfg: BodyBranchConfig):
        super().__init__()
        self.audio_path = AudioPath(n_mels, 0, cfg)
        self.decoder = PoseDecoder(cfg.latent_dim, cfg.decoder_hidden, n_face)

    def encode_audio(self, mel):
        return self.audio_path(mel)

    def decode(self, z):
        return self.decoder(z)

    def forward(self, mel):
        z = self.encode_audio(mel)
        return z, self.decode(z)


class AlignmentClassifier(nn.Module):
    """GRU over frame-wise [body ; face] features, then three FC layers -> 2-way softmax."""

    def __init__(self, latent_dim: int, hidden: int = 256):
        super().__init__()
        self.gru = nn.GRU(2 * latent_dim, hidden, batch_first=True)
        self.fc = nn.Sequential(
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden // 2), nn.ReLU(),
            nn.Linear(hidden // 2, 2),
        )

    def logits(self, body_feat, face_feat):
        _, h = self.gru(torch.cat([body_feat, face_feat], dim=-1))
        return self.fc(h[-1])

    def forward(self, body_feat, face_feat):  # B x Tc x D each -> B x 2 probabilities
        return torch.softmax(self.logits(body_feat, face_feat), dim=-1)


@dataclass
class AlignmentPair:
    body_feat: torch.Tensor  # Tc x D
    face_feat: torch.Tensor  # Tc x D
    label: tuple[float, float]
    t_b: int
    t_f: int
    index: int = 0  # batch element the clips come from


def sample_feature_pairs(z_body, z_face, clip_frames: int, n_pairs: int, positive_fraction: float = 0.5,
                         rng: np.random.Generator | None = None) -> list[AlignmentPair]:
    """Draw labelled clip pairs; positives share the start frame, negatives never do.

    Latents may be T x D or B x T x D (pair j then uses batch element j mod B).
    Exactly round(n_pairs * positive_fraction) pairs are positive.
    """
    rng = rng or np.random.default_rng()
    if z_body.ndim == 2:
        z_body, z_face = z_body[None], z_face[None]
    n_frames = z_body.shape[1]
    if clip_frames >= n_frames:
        raise ValueError(f"clip length {clip_frames} must be shorter than the sequence ({n_frames})")
    n_starts = n_frames - clip_frames + 1
    n_pos = int(round(n_pairs * positive_fraction))
    pairs = []
    for j in range(n_pairs):
        b = j % z_body.shape[0]
        t_b = int(rng.integers(n_starts))
        if j < n_pos:
            t_f, label = t_b, ALIGNED
        else:
            t_f = t_b
            while t_f == t_b:
                t_f = int(rng.integers(n_starts))
            label = MISALIGNED
        pairs.append(AlignmentPair(z_body[b, t_b:t_b + clip_frames], z_face[b, t_f:t_f + clip_frames], label, t_b, t_f, b))
    return pairs


def stack_pairs(pairs: list[AlignmentPair]):
    body = torch.stack([p.body_feat for p in pairs])
    face = torch.stack([p.face_feat for p in pairs])
    labels = torch.tensor([p.label for p in pairs], dtype=body.dtype)
    return body, face, labels


def cross_entropy(probs, labels):
    """Mean over pairs of -c . log p with probabilities clamped at 1e-7."""
    return -(labels * torch.log(torch.clamp(probs, PROB_CLAMP, 1.0))).sum(-1).mean()


def alignment_loss(pairs: list[AlignmentPair], classifier) -> torch.Tensor:
    body, face, labels = stack_pairs(pairs)
    return cross_entropy(classifier(body, face), labels)
