"""Evaluation metrics: L2 distance, FGD, beat consistency and Pose-Sync Distance.

FGD and PSD need auxiliary networks trained on real data: a sequence autoencoder
whose pooled code is the gesture feature, and a two-tower Pose-SyncNet.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ck
from . import layout as L
from .beats import beat_consistency, extract_audio_beats, extract_motion_beats
from .config import EvalConfig

log = logging.getLogger(__name__)


def l2_metric(generated, truth) -> float:
    """Mean over frames (and sequences) of the per-frame Euclidean distance."""
    g = np.asarray(generated, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if g.shape != t.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {t.shape}")
    per_frame = np.sqrt(((g - t) ** 2).reshape(*g.shape[:-2], -1).sum(-1))
    return float(per_frame.mean())


def sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix; negative eigenvalues from round-off are clipped."""
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(mu1, sigma1, mu2, sigma2) -> float:
    """||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^1/2).

    tr((S1 S2)^1/2) is computed as tr((S1^1/2 S2 S1^1/2)^1/2), which has the same
    eigenvalues but stays symmetric.
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    s1, s2 = np.atleast_2d(sigma1).astype(np.float64), np.atleast_2d(sigma2).astype(np.float64)
    r1 = sqrtm_psd(s1)
    mid = r1 @ s2 @ r1
    w = np.linalg.eigvalsh(0.5 * (mid + mid.T))
    tr_cov = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    d = float(((mu1 - mu2) ** 2).sum() + np.trace(s1) + np.trace(s2) - 2.0 * tr_cov)
    return max(d, 0.0)


def fgd(real_features, gen_features) -> float:
    real = np.asarray(real_features, dtype=np.float64)
    gen = np.asarray(gen_features, dtype=np.float64)
    if real.ndim == 1:
        real, gen = real[:, None], gen[:, None]
    if len(real) < 2 or len(gen) < 2:
        raise ValueError("FGD needs at least 2 samples per set")
    return frechet_distance(real.mean(0), np.cov(real, rowvar=False), gen.mean(0), np.cov(gen, rowvar=False))


# ----------------------------------------------------------------- feature extractor


class PoseAutoencoder(nn.Module):
    """GRU sequence autoencoder over body poses; the time-pooled code is the FGD feature."""

    def __init__(self, n_keypoints: int, hidden: int = 128, feature_dim: int = 32):
        super().__init__()
        self.encoder = nn.GRU(n_keypoints * 2, hidden, batch_first=True)
        self.to_code = nn.Linear(hidden, feature_dim)
        self.decoder = nn.GRU(feature_dim, hidden, batch_first=True)
        self.head = nn.Linear(hidden, n_keypoints * 2)
        self.register_buffer("pose_mean", torch.zeros(n_keypoints, 2))
        self.register_buffer("pose_std", torch.ones(n_keypoints, 2))

    def codes(self, body):  # normalized B x T x J x 2 -> B x T x F
        h, _ = self.encoder(body.flatten(2))
        return self.to_code(h)

    def forward(self, body):
        code = self.codes(body)
        h, _ = self.decoder(code)
        return self.head(h).unflatten(-1, body.shape[-2:])

    @torch.no_grad()
    def features(self, raw_body) -> np.ndarray:
        self.eval()
        x = (torch.as_tensor(np.asarray(raw_body), dtype=torch.float32) - self.pose_mean) / self.pose_std
        return self.codes(x).mean(1).numpy().astype(np.float64)


def train_fgd_extractor(bodies: np.ndarray, cfg: EvalConfig, seed: int = 0) -> PoseAutoencoder:
    from .data import PoseNormalizer

    torch.manual_seed(seed)
    model = PoseAutoencoder(bodies.shape[2], cfg.fgd_hidden, cfg.fgd_dim)
    norm = PoseNormalizer.fit(bodies)
    model.pose_mean.copy_(torch.as_tensor(norm.mean))
    model.pose_std.copy_(torch.as_tensor(norm.std))
    x = torch.as_tensor(norm.normalize(bodies), dtype=torch.float32)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    for epoch in range(cfg.fgd_epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(x))
        for i in range(0, len(order), 32):
            xb = x[torch.as_tensor(order[i:i + 32])]
            loss = (model(xb) - xb).abs().mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
        log.info("fgd extractor epoch %d l1 %.4f", epoch + 1, loss.item())
    model.eval()
    return model


# ----------------------------------------------------------------- Pose-SyncNet


class PoseSyncNet(nn.Module):
    """Two towers: a 9-frame pose clip and the matching 0.6 s of mel frames -> equal-size embeddings."""

    def __init__(self, n_keypoints: int, n_mels: int, clip_frames: int = 9, embed_dim: int = 64, hidden: int = 256):
        super().__init__()
        self.clip_frames = clip_frames
        self.embed_dim = embed_dim
        self.pose_tower = nn.Sequential(
            nn.Flatten(), nn.Linear(clip_frames * n_keypoints * 2, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, embed_dim),
        )
        self.audio_tower = nn.Sequential(
            nn.Flatten(), nn.Linear(clip_frames * n_mels, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, embed_dim),
        )
        self.register_buffer("pose_mean", torch.zeros(n_keypoints, 2))
        self.register_buffer("pose_std", torch.ones(n_keypoints, 2))
        self.register_buffer("mel_mean", torch.zeros(n_mels))
        self.register_buffer("mel_std", torch.ones(n_mels))

    def embed_pose(self, raw_clips):  # B x 9 x J x 2 (raw coordinates)
        return self.pose_tower((raw_clips - self.pose_mean) / self.pose_std)

    def embed_audio(self, mel_clips):  # B x 9 x M (raw log-mel)
        return self.audio_tower((mel_clips - self.mel_mean) / self.mel_std)


def contrastive_loss(dist, same, margin: float = 1.0):
    """SyncNet-style: same * d^2 + (1 - same) * max(margin - d, 0)^2, averaged."""
    return (same * dist ** 2 + (1 - same) * torch.clamp(margin - dist, min=0.0) ** 2).mean()


def sync_pairs(n_frames: int, clip: int, min_shift: int, n: int, rng) -> np.ndarray:
    """Rows (pose_start, audio_start, aligned) with half aligned and half shifted by >= min_shift."""
    if n_frames < clip:
        raise ValueError(f"sequence of {n_frames} frames is too short for a {clip}-frame clip")
    starts = n_frames - clip + 1
    rows = []
    for j in range(n):
        p = int(rng.integers(starts))
        if j % 2 == 0:
            rows.append((p, p, 1))
            continue
        choices = [a for a in range(starts) if abs(a - p) >= min_shift]
        if not choices:
            rows.append((p, p, 1))
            continue
        rows.append((p, int(choices[rng.integers(len(choices))]), 0))
    return np.array(rows, dtype=np.int64)


def _clip_batch(poses, mels, seq_idx, rows, clip):
    p = np.stack([poses[s, a:a + clip] for s, (a, _, _) in zip(seq_idx, rows)])
    m = np.stack([mels[s, b:b + clip] for s, (_, b, _) in zip(seq_idx, rows)])
    return torch.as_tensor(p, dtype=torch.float32), torch.as_tensor(m, dtype=torch.float32)


def train_pose_syncnet(poses: np.ndarray, mels: np.ndarray, cfg: EvalConfig, seed: int = 0) -> PoseSyncNet:
    """poses: N x T x J x 2 raw, mels: N x T x M raw log-mel (frame aligned)."""
    from .data import PoseNormalizer

    poses = np.asarray(poses, dtype=np.float32)
    mels = np.asarray(mels, dtype=np.float32)
    clip = cfg.sync_clip_frames
    if poses.shape[1] < clip:
        raise ValueError(f"sequences of {poses.shape[1]} frames are too short for {clip}-frame clips")
    torch.manual_seed(seed)
    net = PoseSyncNet(poses.shape[2], mels.shape[2], clip, cfg.sync_embed_dim)
    norm = PoseNormalizer.fit(poses)
    net.pose_mean.copy_(torch.as_tensor(norm.mean))
    net.pose_std.copy_(torch.as_tensor(norm.std))
    flat = mels.reshape(-1, mels.shape[2]).astype(np.float64)
    net.mel_mean.copy_(torch.as_tensor(flat.mean(0), dtype=torch.float32))
    net.mel_std.copy_(torch.as_tensor(np.maximum(flat.std(0), 1e-3), dtype=torch.float32))
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    per_seq = 8
    for epoch in range(cfg.sync_epochs):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(poses))
        for i in range(0, len(order), 16):
            seqs = np.repeat(order[i:i + 16], per_seq)
            rows = np.concatenate([sync_pairs(poses.shape[1], clip, cfg.sync_min_shift, per_seq, rng)
                                   for _ in order[i:i + 16]])
            p, m = _clip_batch(poses, mels, seqs, rows, clip)
            d = (net.embed_pose(p) - net.embed_audio(m)).norm(dim=-1)
            loss = contrastive_loss(d, torch.as_tensor(rows[:, 2], dtype=torch.float32), cfg.sync_margin)
            opt.zero_grad()
            loss.backward()
            opt.step()
        log.info("syncnet epoch %d loss %.4f", epoch + 1, loss.item())
    net.eval()
    return net


@torch.no_grad()
def sync_separation(net: PoseSyncNet, poses, mels, shift: int = 5, seed: int = 0):
    """Mean embedding distance of aligned vs `shift`-frame shifted clip pairs."""
    clip = net.clip_frames
    n_frames = poses.shape[1]
    starts = np.arange(0, n_frames - clip - shift + 1)
    rng = np.random.default_rng(seed)
    pos, neg = [], []
    for s in range(len(poses)):
        a = int(rng.choice(starts))
        p = torch.as_tensor(poses[s:s + 1, a:a + clip], dtype=torch.float32)
        fp = net.embed_pose(p)
        ma = torch.as_tensor(mels[s:s + 1, a:a + clip], dtype=torch.float32)
        ms = torch.as_tensor(mels[s:s + 1, a + shift:a + shift + clip], dtype=torch.float32)
        pos.append(float((fp - net.embed_audio(ma)).norm()))
        neg.append(float((fp - net.embed_audio(ms)).norm()))
    return float(np.mean(pos)), float(np.mean(neg))


def psd(pose, mel, pose_embed, audio_embed, clip: int = 9) -> float:
    """Mean ||f_p - f_a|| over floor(T / clip) non-overlapping clips (remainder dropped).

    `pose_embed`/`audio_embed` map a batch of clips to a batch of embeddings.
    """
    n_frames = len(pose)
    if n_frames < clip:
        raise ValueError(f"PSD needs at least {clip} frames, got {n_frames}")
    n = n_frames // clip
    pc = np.stack([pose[i * clip:(i + 1) * clip] for i in range(n)])
    mc = np.stack([mel[i * clip:(i + 1) * clip] for i in range(n)])
    fp = np.asarray(pose_embed(pc), dtype=np.float64)
    fa = np.asarray(audio_embed(mc), dtype=np.float64)
    return float(np.linalg.norm(fp - fa, axis=-1).mean())


def psd_with_net(pose, mel, net: PoseSyncNet) -> float:
    with torch.no_grad():
        return psd(
            pose, mel,
            lambda c: net.embed_pose(torch.as_tensor(c, dtype=torch.float32)).numpy(),
            lambda c: net.embed_audio(torch.as_tensor(c, dtype=torch.float32)).numpy(),
            net.clip_frames,
        )


# ----------------------------------------------------------------- aux checkpoints


def save_aux(path, model: nn.Module, kind: str, cfg: EvalConfig, shape: dict):
    ck.save(path, {"kind": kind, "evaluation": asdict(cfg), "shape": shape}, ck.module_tensors(model))


def load_aux(path, kind: str):
    header, tensors = ck.load(path)
    if header.get("kind") != kind:
        raise ck.CheckpointError(f"{path}: expected a {kind} checkpoint, found kind={header.get('kind')!r}")
    cfg = EvalConfig(**header["evaluation"])
    shape = header["shape"]
    if kind == "fgd_extractor":
        model = PoseAutoencoder(shape["n_keypoints"], cfg.fgd_hidden, cfg.fgd_dim)
    elif kind == "pose_syncnet":
        model = PoseSyncNet(shape["n_keypoints"], shape["n_mels"], cfg.sync_clip_frames, cfg.sync_embed_dim)
    else:
        raise ck.CheckpointError(f"unknown auxiliary kind {kind!r}")
    ck.load_module_tensors(model, tensors)
    model.eval()
    return model


# ----------------------------------------------------------------- report


@dataclass
class MetricReport:
    l2: float
    fgd: float | None
    bc: float
    psd: float | None
    n_samples: int
    config_echo: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None}

    def table(self) -> str:
        rows = [("L2", self.l2), ("FGD", self.fgd), ("BC", self.bc), ("PSD", self.psd)]
        lines = [f"{'metric':<8}{'value':>12}"]
        lines += [f"{name:<8}{('n/a' if v is None else f'{v:.6f}'):>12}" for name, v in rows]
        lines.append(f"{'samples':<8}{self.n_samples:>12d}")
        return "\n".join(lines) + "\n"


def evaluate(generated: np.ndarray, truth: np.ndarray, mels: np.ndarray, waveforms, layout=L.DEFAULT_LAYOUT,
             fps: float = 15.0, sample_rate: int = 16000, cfg: EvalConfig | None = None,
             fgd_extractor: PoseAutoencoder | None = None, syncnet: PoseSyncNet | None = None) -> MetricReport:
    """All metrics for N generated sequences against their ground truth (N x T x J x 2)."""
    cfg = cfg or EvalConfig()
    generated = np.asarray(generated, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    l2 = l2_metric(generated, truth)
    fgd_value = None
    if fgd_extractor is not None and len(generated) < 2:
        log.warning("FGD needs at least 2 sequences; FGD omitted")
    elif fgd_extractor is not None:
        gb, tb = L.split(generated, layout)[0], L.split(truth, layout)[0]
        fgd_value = fgd(fgd_extractor.features(tb), fgd_extractor.features(gb))
    else:
        log.warning("no FGD feature extractor given; FGD omitted")
    bcs = []
    for g, w in zip(generated, waveforms):
        body = L.split(g, layout)[0]
        bcs.append(beat_consistency(extract_audio_beats(w, sample_rate), extract_motion_beats(body, fps, layout),
                                    cfg.bc_sigma))
    psd_value = None
    if syncnet is not None:
        psd_value = float(np.mean([psd_with_net(g, m, syncnet) for g, m in zip(generated, mels)]))
    else:
        log.warning("no Pose-SyncNet given; PSD omitted")
    return MetricReport(l2, fgd_value, float(np.mean(bcs)), psd_value, len(generated), asdict(cfg))
