"""Single-file checkpoint container.

Layout::

    b"SGCKPT1\\n"                  magic
    uint32 (LE)                    header length in bytes
    header                         UTF-8 JSON: metadata + blob table
    blobs                          float32 little-endian, in table order

The blob table lists ``{"name", "shape", "offset", "dtype"}`` per tensor, with
offsets relative to the start of the blob section.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import __version__

MAGIC = b"SGCKPT1\n"
_DTYPES = {"f4": "<f4", "i8": "<i8"}


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


def save(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    table, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = "i8" if np.issubdtype(arr.dtype, np.integer) else "f4"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "dtype": code})
        chunks.append(raw)
        offset += len(raw)
    head = dict(header)
    head.setdefault("version", __version__)
    head["blobs"] = table
    head_bytes = json.dumps(head, sort_keys=True).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head_bytes)))
        fh.write(head_bytes)
        for c in chunks:
            fh.write(c)
    tmp.replace(path)


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FileNotFoundError(f"checkpoint not found: {path}") from exc
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic {raw[:len(MAGIC)]!r} (expected {MAGIC!r})")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise CheckpointError(f"{path}: truncated before header length")
    (n_head,) = struct.unpack("<I", raw[pos:pos + 4])
    pos += 4
    if len(raw) < pos + n_head:
        raise CheckpointError(f"{path}: header declares {n_head} bytes, file has {len(raw) - pos}")
    try:
        header = json.loads(raw[pos:pos + n_head].decode())
        table = header.pop("blobs")
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, AttributeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    base = pos + n_head
    tensors = {}
    for entry in table:
        try:
            dtype = np.dtype(_DTYPES[entry["dtype"]])
            count = int(np.prod(entry["shape"], dtype=np.int64))
            start = base + int(entry["offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad blob entry {entry!r}") from exc
        end = start + count * dtype.itemsize
        if end > len(raw):
            raise CheckpointError(f"{path}: blob {entry['name']!r} runs past end of file ({end} > {len(raw)})")
        tensors[entry["name"]] = np.frombuffer(raw, dtype=dtype, count=count, offset=start).reshape(entry["shape"]).copy()
    return header, tensors


def module_tensors(module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module_tensors(module, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    import torch

    state = {k[len(prefix):]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith(prefix)}
    missing = set(module.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)[:3]}")
    try:
        module.load_state_dict(state, strict=False)
    except RuntimeError as exc:  # shape mismatch
        raise CheckpointError(f"checkpoint does not fit the model: {exc}") from exc


def optimizer_tensors(opt, module, prefix: str = "optim/") -> tuple[dict, dict[str, np.ndarray]]:
    """Adam state keyed by parameter name so it survives a round trip."""
    names = {id(p): n for n, p in module.named_parameters()}
    meta, tensors = {}, {}
    for group in opt.param_groups:
        for p in group["params"]:
            st = opt.state.get(p)
            if not st:
                continue
            n = names[id(p)]
            meta[n] = int(st["step"])
            tensors[f"{prefix}{n}/exp_avg"] = st["exp_avg"].numpy()
            tensors[f"{prefix}{n}/exp_avg_sq"] = st["exp_avg_sq"].numpy()
    return meta, tensors


def restore_optimizer(opt, module, steps: dict, tensors: dict[str, np.ndarray], prefix: str = "optim/") -> None:
    import torch

    params = dict(module.named_parameters())
    for n, step in steps.items():
        p = params[n]
        opt.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.from_numpy(tensors[f"{prefix}{n}/exp_avg"]).clone(),
            "exp_avg_sq": torch.from_numpy(tensors[f"{prefix}{n}/exp_avg_sq"]).clone(),
        }
