"""Keypoint layout for the 121-point upper-body skeleton.

Index map of the default layout::

    0..8     upper body (nose, neck, shoulders, elbows, wrists, mid-hip)
    9..78    face (68 landmarks + 2 pupils)
    79..99   right hand (21 points)
    100..120 left hand (21 points)

Body = upper body + both hands (51 points), face = 70 points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NOSE, NECK, R_SHOULDER, R_ELBOW, R_WRIST, L_SHOULDER, L_ELBOW, L_WRIST, MID_HIP = range(9)
FACE_START = 9
N_FACE = 70
R_HAND_START = FACE_START + N_FACE
L_HAND_START = R_HAND_START + 21
TOTAL = L_HAND_START + 21

# hand-local bone list (21-point OpenPose hand)
HAND_BONES = [(0, 1), (1, 2), (2, 3), (3, 4)] + [
    (p, c) for f in range(1, 5) for p, c in [(0, 4 * f + 1), (4 * f + 1, 4 * f + 2), (4 * f + 2, 4 * f + 3), (4 * f + 3, 4 * f + 4)]
]
FINGERTIPS = (4, 8, 12, 16, 20)

# face-local lip indices (68-point convention)
INNER_UPPER_LIP = 62
INNER_LOWER_LIP = 66


def _default_bones() -> list[tuple[int, int]]:
    bones = [
        (NECK, NOSE), (NECK, R_SHOULDER), (R_SHOULDER, R_ELBOW), (R_ELBOW, R_WRIST),
        (NECK, L_SHOULDER), (L_SHOULDER, L_ELBOW), (L_ELBOW, L_WRIST), (NECK, MID_HIP),
    ]
    # body wrist and hand root coincide, so no bone joins them
    for start in (R_HAND_START, L_HAND_START):
        bones += [(start + a, start + b) for a, b in HAND_BONES]
    return bones


@dataclass(frozen=True)
class SkeletonLayout:
    total_keypoints: int = TOTAL
    face_indices: tuple[int, ...] = tuple(range(FACE_START, FACE_START + N_FACE))
    body_indices: tuple[int, ...] = tuple(range(0, FACE_START)) + tuple(range(R_HAND_START, TOTAL))
    bones: tuple[tuple[int, int], ...] = field(default_factory=lambda: tuple(_default_bones()))
    coordinate_dims: int = 2

    def __post_init__(self):
        face, body = set(self.face_indices), set(self.body_indices)
        if len(face) != len(self.face_indices) or len(body) != len(self.body_indices):
            raise ValueError("duplicate keypoint indices in layout")
        if face & body:
            raise ValueError(f"face and body index sets overlap: {sorted(face & body)[:5]}")
        if face | body != set(range(self.total_keypoints)):
            raise ValueError("face and body indices must partition [0, total_keypoints)")
        if self.coordinate_dims != 2:
            raise ValueError("only 2D keypoints are supported")
        body_set = set(self.body_indices)
        for a, b in self.bones:
            if a not in body_set or b not in body_set:
                raise ValueError(f"bone ({a}, {b}) references a non-body keypoint")

    @property
    def n_body(self) -> int:
        return len(self.body_indices)

    @property
    def n_face(self) -> int:
        return len(self.face_indices)

    def body_bones(self) -> np.ndarray:
        """Bones re-indexed into the body sub-array, shape (n_bones, 2)."""
        pos = {g: i for i, g in enumerate(self.body_indices)}
        return np.array([(pos[a], pos[b]) for a, b in self.bones], dtype=np.int64).reshape(-1, 2)

    def to_json(self) -> dict:
        return {
            "total": self.total_keypoints,
            "face_indices": list(self.face_indices),
            "body_indices": list(self.body_indices),
            "bones": [list(b) for b in self.bones],
        }

    @classmethod
    def from_json(cls, d: dict) -> "SkeletonLayout":
        kw = dict(
            total_keypoints=int(d["total"]),
            face_indices=tuple(int(i) for i in d["face_indices"]),
            body_indices=tuple(int(i) for i in d["body_indices"]),
        )
        if "bones" in d:
            kw["bones"] = tuple((int(a), int(b)) for a, b in d["bones"])
        return cls(**kw)


DEFAULT_LAYOUT = SkeletonLayout()


def split(frames, layout: SkeletonLayout = DEFAULT_LAYOUT):
    """Split a (..., J, 2) array into its (body, face) parts."""
    return frames[..., list(layout.body_indices), :], frames[..., list(layout.face_indices), :]


def fuse(body, face, layout: SkeletonLayout = DEFAULT_LAYOUT):
    """Inverse of `split`; works for numpy arrays and torch tensors."""
    if isinstance(body, np.ndarray):
        out = np.empty(body.shape[:-2] + (layout.total_keypoints, body.shape[-1]), dtype=body.dtype)
        out[..., list(layout.body_indices), :] = body
        out[..., list(layout.face_indices), :] = face
        return out
    import torch

    # gather through the inverse permutation keeps autograd simple
    order = np.argsort(np.array(layout.body_indices + layout.face_indices))
    return torch.cat([body, face], dim=-2)[..., torch.as_tensor(order), :]
