"""Weakly-supervised salient posture detector.

Body poses -> temporal conv features X -> temporal relation module (frame affinity
weights W1 next to index-prior weights W2) -> per-frame sigmoid scores. Only the
top-k mean of the frame scores is supervised, against sequence-level labels.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint as ck
from .config import DetectorConfig
from .losses import NonFiniteLoss

log = logging.getLogger(__name__)

BCE_CLAMP = 1e-7
KIND = "saliency_detector"


def index_prior_weights(n_frames: int, dtype=torch.float32) -> torch.Tensor:
    """Row-softmax of I[t, s] = -|t - s|; a pure function of the length."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    idx = torch.arange(n_frames, dtype=dtype)
    return torch.softmax(-(idx[:, None] - idx[None, :]).abs(), dim=-1)


def affinity_weights(x, theta: nn.Module | None = None, phi: nn.Module | None = None) -> torch.Tensor:
    """Row-softmax of the frame affinity <theta(x_s), phi(x_t)>; x is (..., T, D1)."""
    q = theta(x) if theta is not None else x
    k = phi(x) if phi is not None else x
    return torch.softmax(q @ k.transpose(-1, -2), dim=-1)


def topk_pool(scores, k: int):
    """Mean of the k largest frame scores along the last axis."""
    n = scores.shape[-1]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    return torch.topk(scores, k, dim=-1).values.mean(-1)


def detector_loss(sequence_score, label):
    s = torch.clamp(sequence_score, BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = torch.as_tensor(label, dtype=s.dtype)
    return -(y * torch.log(s) + (1.0 - y) * torch.log(1.0 - s)).mean()


class SaliencyDetector(nn.Module):
    def __init__(self, n_body: int, cfg: DetectorConfig):
        super().__init__()
        self.cfg = cfg
        self.n_body = n_body
        pad = cfg.kernel_size // 2
        chans = (n_body * 2,) + cfg.conv_channels + (cfg.d1,)
        layers = []
        for i, (a, b) in enumerate(zip(chans[:-1], chans[1:])):
            layers.append(nn.Conv1d(a, b, cfg.kernel_size, padding=pad))
            if i < len(chans) - 2:
                layers.append(nn.ReLU())
        self.features = nn.Sequential(*layers)
        self.theta = nn.Linear(cfg.d1, cfg.theta_phi_dim)
        self.phi = nn.Linear(cfg.d1, cfg.theta_phi_dim)
        self.fc_hidden = nn.Linear(2 * cfg.d1, cfg.d2)
        self.fc_out = nn.Linear(cfg.d2, cfg.d1)
        self.classifier = nn.Linear(cfg.d1, 1)
        # pose normalization applied inside score_poses
        self.register_buffer("pose_mean", torch.zeros(n_body, 2))
        self.register_buffer("pose_std", torch.ones(n_body, 2))

    def extract_initial_features(self, body):  # B x T x J x 2 -> B x T x D1
        if not torch.isfinite(body).all():
            raise ValueError("pose contains non-finite values")
        return self.features(body.flatten(2).transpose(1, 2)).transpose(1, 2)

    def temporal_relation(self, x, w1, w2):
        if w1.shape[-1] != x.shape[-2] or w2.shape[-1] != x.shape[-2]:
            raise ValueError(f"weights {tuple(w1.shape)}/{tuple(w2.shape)} do not match {x.shape[-2]} frames")
        h = torch.cat([w1 @ x, w2 @ x], dim=-1)
        return self.fc_out(F.relu(self.fc_hidden(h)))

    def frame_logits(self, y):
        return self.classifier(y).squeeze(-1)

    def forward(self, body):
        """Frame saliency scores in (0, 1), shape B x T, for normalized body poses."""
        x = self.extract_initial_features(body)
        w1 = affinity_weights(x, self.theta, self.phi)
        w2 = index_prior_weights(x.shape[-2], x.dtype)
        return torch.sigmoid(self.frame_logits(self.temporal_relation(x, w1, w2)))

    def effective_k(self, n_frames: int) -> int:
        if self.cfg.k > n_frames:
            warnings.warn(f"top-k={self.cfg.k} exceeds sequence length {n_frames}; clamping", stacklevel=2)
            return n_frames
        return self.cfg.k

    def sequence_scores(self, body):
        s = self(body)
        return s, topk_pool(s, self.effective_k(s.shape[-1]))

    @torch.no_grad()
    def score_poses(self, raw_body):
        """Scores for raw (un-normalized) body poses, B x T x J_b x 2 -> B x T."""
        was = self.training
        self.eval()
        out = self((raw_body - self.pose_mean) / self.pose_std)
        self.train(was)
        return out


def roc_auc(labels, scores) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties get mid-ranks)."""
    from scipy.stats import rankdata

    labels = np.asarray(labels).astype(bool).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def train_detector(bodies: np.ndarray, labels: np.ndarray, cfg: DetectorConfig, seed: int = 0,
                   normalizer=None, on_epoch=None) -> tuple[SaliencyDetector, list[dict]]:
    """Fit the detector with Adam on sequence labels only.

    `bodies` is raw N x T x J_b x 2; `normalizer` (a PoseNormalizer over body points)
    defaults to one fitted on `bodies`. Returns the model and the per-epoch log.
    """
    from .data import PoseNormalizer

    labels = np.asarray(labels, dtype=np.float32)
    if labels.min() == labels.max():
        warnings.warn("all sequence labels are identical; frame-level AUROC is undefined", stacklevel=2)
    torch.manual_seed(seed)
    model = SaliencyDetector(bodies.shape[2], cfg)
    normalizer = normalizer or PoseNormalizer.fit(bodies)
    model.pose_mean.copy_(torch.as_tensor(normalizer.mean))
    model.pose_std.copy_(torch.as_tensor(normalizer.std))
    x_all = torch.as_tensor(normalizer.normalize(bodies), dtype=torch.float32)
    y_all = torch.as_tensor(labels)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    history = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(x_all))
        model.train()
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = torch.as_tensor(order[i:i + cfg.batch_size])
            _, seq = model.sequence_scores(x_all[idx])
            loss = detector_loss(seq, y_all[idx])
            if not torch.isfinite(loss):
                raise NonFiniteLoss("bce")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        rec = {"epoch": epoch + 1, "bce": total / len(order)}
        history.append(rec)
        log.info("detector epoch %d bce %.4f", epoch + 1, rec["bce"])
        if on_epoch is not None:
            on_epoch(rec)
    model.eval()
    return model, history


def save_detector(path, model: SaliencyDetector, extra: dict | None = None) -> None:
    header = {"kind": KIND, "detector": dataclasses.asdict(model.cfg), "n_body": model.n_body, **(extra or {})}
    ck.save(path, header, ck.module_tensors(model))


def load_detector(path) -> SaliencyDetector:
    header, tensors = ck.load(path)
    if header.get("kind") != KIND:
        raise ck.CheckpointError(f"{path}: expected a {KIND} checkpoint, found kind={header.get('kind')!r}")
    try:
        cfg = DetectorConfig(**header["detector"])
        model = SaliencyDetector(int(header["n_body"]), cfg)
    except (KeyError, TypeError, ValueError) as exc:
        raise ck.CheckpointError(f"{path}: header does not describe a detector ({exc})") from exc
    ck.load_module_tensors(model, tensors)
    model.eval()
    return model
