"""Joint training of the body and face branches, checkpointing and generation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ck
from . import layout as L
from .body import BodyBranch, consistency_loss
from .config import RunConfig
from .data import PoseNormalizer, PoseSequence, SpeechFeatureSet
from .face import AlignmentClassifier, FaceBranch, cross_entropy, sample_feature_pairs, stack_pairs
from .losses import (NonFiniteLoss, huber_part_loss, reconstruction_loss, regression_loss, total_loss,
                     weights_from_config)

log = logging.getLogger(__name__)

KIND = "gesture_model"


class GestureModel(nn.Module):
    def __init__(self, cfg: RunConfig, layout: L.SkeletonLayout, n_mels: int, asr_dim: int = 0):
        super().__init__()
        self.cfg = cfg
        self.layout = layout
        self.n_mels = n_mels
        self.asr_dim = asr_dim
        self.body = BodyBranch(layout.n_body, n_mels, asr_dim, cfg.branch)
        self.face = FaceBranch(layout.n_face, n_mels, cfg.branch)
        self.classifier = AlignmentClassifier(cfg.branch.latent_dim, cfg.face.classifier_hidden)
        self.register_buffer("pose_mean", torch.zeros(layout.total_keypoints, 2))
        self.register_buffer("pose_std", torch.ones(layout.total_keypoints, 2))
        self.register_buffer("mel_mean", torch.zeros(n_mels))
        self.register_buffer("mel_std", torch.ones(n_mels))

    def normalize_mel(self, mel):
        return (mel - self.mel_mean) / self.mel_std

    def generate_normalized(self, mel, asr=None):
        """Normalized mel -> normalized full pose, B x T x J x 2."""
        zb = self.body.encode_audio(mel, asr)
        body = self.body.decode(zb)
        if self.cfg.training.use_face_branch:
            face = self.face.decode(self.face.encode_audio(mel))
        else:
            face = torch.zeros(body.shape[:-2] + (self.layout.n_face, 2), dtype=body.dtype)
        return L.fuse(body, face, self.layout)

    @torch.no_grad()
    def generate(self, mel, asr=None) -> np.ndarray:
        """Raw log-mel (B x T x M) -> denormalized poses (B x T x J x 2)."""
        self.eval()
        mel = self.normalize_mel(torch.as_tensor(mel, dtype=torch.float32))
        if asr is not None:
            asr = torch.as_tensor(asr, dtype=torch.float32)
        pose = self.generate_normalized(mel, asr)
        return (pose * self.pose_std + self.pose_mean).numpy()


@dataclass
class TrainingData:
    pose: torch.Tensor  # N x T x J x 2, normalized
    mel: torch.Tensor  # N x T x M, normalized
    asr: torch.Tensor | None
    saliency: torch.Tensor | None  # N x T

    def __len__(self):
        return len(self.pose)


def prepare_data(samples, model: GestureModel, detector=None) -> TrainingData:
    frames = np.stack([s.pose.frames for s in samples])
    mel = np.stack([s.audio.mel for s in samples])
    asr = np.stack([s.audio.asr for s in samples]) if model.asr_dim else None
    pose = (torch.as_tensor(frames) - model.pose_mean) / model.pose_std
    sal = None
    if detector is not None:
        body = L.split(torch.as_tensor(frames), model.layout)[0]
        sal = torch.cat([detector.score_poses(body[i:i + 64]) for i in range(0, len(body), 64)])
    return TrainingData(pose, model.normalize_mel(torch.as_tensor(mel)),
                        None if asr is None else torch.as_tensor(asr), sal)


def fit_statistics(model: GestureModel, samples):
    frames = np.stack([s.pose.frames for s in samples])
    norm = PoseNormalizer.fit(frames)
    model.pose_mean.copy_(torch.as_tensor(norm.mean))
    model.pose_std.copy_(torch.as_tensor(norm.std))
    mel = np.concatenate([s.audio.mel for s in samples]).astype(np.float64)
    model.mel_mean.copy_(torch.as_tensor(mel.mean(0), dtype=torch.float32))
    model.mel_std.copy_(torch.as_tensor(np.maximum(mel.std(0), 1e-3), dtype=torch.float32))


def batch_losses(model: GestureModel, pose, mel, asr=None, saliency=None, rng=None, with_alignment=True):
    """Every loss component for one normalized minibatch, plus alignment accuracy."""
    cfg = model.cfg
    body_gt, face_gt = L.split(pose, model.layout)
    zp = model.body.encode_pose(body_gt)
    za = model.body.encode_audio(mel, asr)
    recon = model.body.decode(zp)
    gen_body = model.body.decode(za)
    out = {"recon": reconstruction_loss(recon, body_gt)}

    zp_c, za_c = zp, za
    if cfg.branch.con_grad == "pose":
        za_c = za.detach()
    elif cfg.branch.con_grad == "audio":
        zp_c = zp.detach()
    out["con"] = consistency_loss(zp_c, za_c, saliency, cfg.branch.epsilon)

    if cfg.training.use_face_branch:
        zf = model.face.encode_audio(mel)
        gen_face = model.face.decode(zf)
    else:
        zf = None
        gen_face = torch.zeros_like(face_gt)
    out["reg"] = regression_loss(L.fuse(gen_body, gen_face, model.layout), pose)
    out["huber"] = huber_part_loss(gen_body, body_gt, gen_face, face_gt, cfg.training.huber_delta)

    acc = None
    if with_alignment and zf is not None and cfg.training.lambda_c > 0:
        zb_pairs = za if cfg.face.update_body_audio else za.detach()
        pairs = sample_feature_pairs(zb_pairs, zf, cfg.face.clip_frames, len(pose), cfg.face.positive_fraction, rng)
        b, f, labels = stack_pairs(pairs)
        probs = model.classifier(b, f)
        out["c"] = cross_entropy(probs, labels)
        acc = float((probs.argmax(-1) == labels.argmax(-1)).float().mean())
    return out, acc


def save_model(path, model: GestureModel, epoch: int, opt=None, extra: dict | None = None):
    header = {
        "kind": KIND,
        "config": model.cfg.to_dict(),
        "layout": model.layout.to_json(),
        "n_mels": model.n_mels,
        "asr_dim": model.asr_dim,
        "epoch": epoch,
    }
    tensors = ck.module_tensors(model, "model/")
    if opt is not None:
        steps, opt_t = ck.optimizer_tensors(opt, model)
        header["optimizer_steps"] = steps
        tensors.update(opt_t)
    if extra:
        header.update(extra)
    ck.save(path, header, tensors)


def load_model(path) -> tuple[GestureModel, dict, dict]:
    header, tensors = ck.load(path)
    if header.get("kind") != KIND:
        raise ck.CheckpointError(f"{path}: expected a {KIND} checkpoint, found kind={header.get('kind')!r}")
    try:
        cfg = RunConfig.from_dict(header["config"])
        layout = L.SkeletonLayout.from_json(header["layout"])
        model = GestureModel(cfg, layout, int(header["n_mels"]), int(header["asr_dim"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ck.CheckpointError(f"{path}: header does not describe a model ({exc})") from exc
    ck.load_module_tensors(model, tensors, "model/")
    model.eval()
    return model, header, tensors


def _make_optimizer(model: GestureModel, cfg: RunConfig):
    t = cfg.training
    return torch.optim.Adam(model.parameters(), lr=t.learning_rate, betas=(t.beta1, t.beta2))


def train(samples, cfg: RunConfig, out_dir, detector=None, val_samples=None, resume=None, layout=L.DEFAULT_LAYOUT,
          on_epoch=None) -> GestureModel:
    """Train both branches; writes checkpoints and a JSON-lines log to `out_dir`.

    `detector` (a frozen SaliencyDetector) enables saliency weighting of the
    consistency loss; without it every frame has weight 1.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    start_epoch = 0
    if resume is not None:
        model, header, tensors = load_model(resume)
        cfg = model.cfg if cfg is None else cfg
        model.cfg = cfg
        opt = _make_optimizer(model, cfg)
        ck.restore_optimizer(opt, model, header.get("optimizer_steps", {}), tensors)
        start_epoch = int(header["epoch"])
    else:
        asr = samples[0].audio.asr
        model = GestureModel(cfg, layout, samples[0].audio.mel.shape[1], 0 if asr is None else asr.shape[1])
        fit_statistics(model, samples)
        opt = _make_optimizer(model, cfg)
    if detector is None:
        log.info("no saliency detector given; consistency loss uses uniform frame weights")
    data = prepare_data(samples, model, detector)
    val = prepare_data(val_samples, model, None) if val_samples else None
    weights = weights_from_config(cfg.training)
    log_path = out_dir / "train_log.jsonl"
    if start_epoch == 0:
        log_path.write_text("")
    best = float("inf")
    bs = cfg.training.batch_size

    for epoch in range(start_epoch, cfg.training.epochs):
        model.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(data))
        pair_rng = np.random.default_rng([cfg.seed, epoch, 1])
        sums: dict[str, float] = {}
        accs = []
        for i in range(0, len(order), bs):
            idx = torch.as_tensor(order[i:i + bs])
            comps, acc = batch_losses(
                model, data.pose[idx], data.mel[idx], None if data.asr is None else data.asr[idx],
                None if data.saliency is None else data.saliency[idx], pair_rng,
            )
            loss = total_loss(comps, weights)
            if not torch.isfinite(loss):
                raise NonFiniteLoss("total")
            opt.zero_grad()
            loss.backward()
            opt.step()
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v.item() * len(idx)
            sums["total"] = sums.get("total", 0.0) + loss.item() * len(idx)
            if acc is not None:
                accs.append(acc)
        rec = {"epoch": epoch + 1, **{k: v / len(order) for k, v in sums.items()}}
        if accs:
            rec["align_acc"] = float(np.mean(accs))
        if val is not None:
            with torch.no_grad():
                model.eval()
                pred = model.generate_normalized(val.mel, val.asr)
                rec["val_reg"] = regression_loss(pred, val.pose).item()
        with open(log_path, "a") as fh:
            fh.write(json.dumps(rec) + "\n")
        log.info("epoch %d %s", epoch + 1, {k: round(v, 4) for k, v in rec.items() if k != "epoch"})
        if on_epoch is not None:
            on_epoch(rec)
        if val is not None and rec["val_reg"] < best:
            best = rec["val_reg"]
            save_model(out_dir / "best.sgck", model, epoch + 1, opt)
        if cfg.training.checkpoint_every and (epoch + 1) % cfg.training.checkpoint_every == 0:
            save_model(out_dir / f"epoch_{epoch + 1:04d}.sgck", model, epoch + 1, opt)
    save_model(out_dir / "model.sgck", model, cfg.training.epochs, opt)
    model.eval()
    return model


def generate(features: SpeechFeatureSet, model_or_path, fps: float = 15.0) -> PoseSequence:
    """Audio features -> full 121-point pose sequence in original coordinates."""
    model = load_model(model_or_path)[0] if isinstance(model_or_path, (str, Path)) else model_or_path
    if len(features.mel) < 1:
        raise ValueError("audio shorter than one frame")
    asr = None if features.asr is None or not model.asr_dim else features.asr[None]
    frames = model.generate(features.mel[None], asr)[0]
    return PoseSequence(frames, fps, model.layout)
