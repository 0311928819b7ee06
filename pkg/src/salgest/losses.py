"""Pose losses and the weighted training objective.

All pose tensors are (..., T, J, 2); leading batch dimensions are averaged.
"""

from __future__ import annotations

import math

import torch


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_per_frame(pred, target):
    """(1/T) sum_t ||pred_t - target_t||_1, averaged over any batch dims."""
    _same_shape(pred, target)
    return (pred - target).abs().sum(dim=(-1, -2)).mean()


def reconstruction_loss(recon_body, body):
    return l1_per_frame(recon_body, body)


def regression_loss(pred_pose, pose):
    return l1_per_frame(pred_pose, pose)


def huber(pred, target, delta: float = 1.0):
    """Elementwise Huber: 0.5 r^2 for |r| <= delta, delta (|r| - delta/2) beyond."""
    r = (pred - target).abs()
    return torch.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))


def huber_part_loss(pred_body, body, pred_face, face, delta: float = 1.0):
    """(1/2T)(sum_t HL_body,t + sum_t HL_face,t), HL averaged over a frame's coordinates."""
    _same_shape(pred_body, body)
    _same_shape(pred_face, face)
    hb = huber(pred_body, body, delta).mean(dim=(-1, -2)).sum(-1)
    hf = huber(pred_face, face, delta).mean(dim=(-1, -2)).sum(-1)
    n_frames = body.shape[-3]
    return ((hb + hf) / (2 * n_frames)).mean()


LOSS_NAMES = ("recon", "reg", "huber", "con", "c")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, component: str):
        super().__init__(f"loss component {component!r} is not finite")
        self.component = component


def total_loss(components: dict, weights: dict):
    """Weighted sum over LOSS_NAMES; missing components count as zero."""
    total = 0.0
    for name in LOSS_NAMES:
        if name not in components:
            continue
        value = components[name]
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(v):
            raise NonFiniteLoss(name)
        total = total + weights[name] * value
    return total


def weights_from_config(cfg) -> dict:
    return {"recon": cfg.lambda_r, "reg": cfg.lambda_reg, "huber": cfg.lambda_h, "con": cfg.lambda_con, "c": cfg.lambda_c}
