"""Command-line entry point: ``salgest <command> ...``.

Exit codes: 0 success, 2 usage/config error, 3 I/O or schema error,
4 numeric divergence, 5 corrupt artifact.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from . import layout as L
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .io import LoadError, SchemaError

log = logging.getLogger("salgest")

EXIT_USAGE, EXIT_IO, EXIT_DIVERGED, EXIT_CORRUPT = 2, 3, 4, 5


class UsageError(Exception):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> RunConfig:
    """Config file, then --set overrides, then dedicated flags (flags win)."""
    cfg = load_config(getattr(args, "config", None))
    dotted = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        dotted[key.strip()] = _parse_value(value)
    if getattr(args, "seed", None) is not None:
        dotted["seed"] = args.seed
    return cfg.override(dotted)


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _corpus(path):
    from .data import load_corpus

    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    return load_corpus(p)


def _split_samples(manifest, split):
    from .data import load_samples

    samples = load_samples(manifest, split)
    if not samples:
        raise UsageError(f"corpus has no usable samples in split {split!r}")
    return samples


# ------------------------------------------------------------------ commands


def cmd_synth_data(args) -> int:
    from .synth import make_synthetic_corpus

    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.frames < 14:
        raise UsageError("--frames must be >= 14")
    m = make_synthetic_corpus(args.seed, args.n, args.frames, args.out)
    print(f"wrote {len(m.samples)} sequences to {args.out} (splits {m.split_sizes()})")
    return 0


def _entry_of(manifest, sample):
    """Manifest entry and segment index a loaded sample was cut from."""
    key, _, idx = sample.segment_id.rpartition("_")
    by_key = {e.key: e for e in manifest.samples}
    return by_key[key], int(idx)


def cmd_train_detector(args) -> int:
    from .detector import save_detector, train_detector
    from .labels import label_samples

    cfg = resolve_config(args)
    if args.epochs is not None:
        cfg = cfg.override({"detector.epochs": args.epochs})
    manifest = _corpus(args.corpus)
    samples = _split_samples(manifest, None)
    splits = [_entry_of(manifest, s)[0].split for s in samples]
    train = [s for s, sp in zip(samples, splits) if sp == "train"]
    labels, stats = label_samples(samples, train)
    chosen = [i for i, sp in enumerate(splits) if args.split == "all" or sp == args.split]
    if not chosen:
        raise UsageError(f"corpus has no samples in split {args.split!r}")
    bodies = np.stack([samples[i].pose.body for i in chosen])
    log.info("training detector on %d sequences (%d salient)", len(chosen), int(labels[chosen].sum()))
    model, history = train_detector(bodies, labels[chosen], cfg.detector, seed=cfg.seed)
    extra = {"config": cfg.to_dict(), "history": history,
             "thresholds": {k: v.threshold for k, v in stats.items()}}
    auc = _frame_auroc(model, manifest, samples)
    if auc is not None:
        extra["frame_auroc"] = auc
        print(f"frame AUROC {auc:.4f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_detector(out, model, extra)
    print(f"detector written to {out}")
    return 0


def _frame_auroc(model, manifest, samples):
    """Frame-level AUROC against planted masks, when the corpus carries them."""
    from .detector import roc_auc
    from .synth import read_truth

    if not all("mask" in e.extras for e in manifest.samples):
        return None
    masks = []
    for s in samples:
        entry, i = _entry_of(manifest, s)
        n = len(s.pose)
        masks.append(read_truth(entry).mask[i * n:(i + 1) * n])
    bodies = torch.as_tensor(np.stack([s.pose.body for s in samples]))
    scores = torch.cat([model.score_poses(bodies[i:i + 32]) for i in range(0, len(bodies), 32)])
    return roc_auc(np.concatenate(masks), scores.numpy().ravel())


def cmd_train(args) -> int:
    from .data import load_samples
    from .detector import load_detector
    from .training import train

    cfg = resolve_config(args)
    if args.epochs is not None:
        cfg = cfg.override({"training.epochs": args.epochs})
    manifest = _corpus(args.corpus)
    train_samples = _split_samples(manifest, "train")
    val = load_samples(manifest, "val") or None
    detector = load_detector(args.detector) if args.detector else None
    if detector is None:
        log.warning("no --detector given; saliency reweighting of the consistency loss is disabled")
    out = Path(args.out)
    train(train_samples, cfg, out, detector=detector, val_samples=val, resume=args.resume, layout=manifest.layout)
    _write_json(out / "config.json", cfg.to_dict())
    print(f"model written to {out / 'model.sgck'}")
    return 0


def cmd_generate(args) -> int:
    from .audio import extract_mel
    from .data import FPS, SpeechFeatureSet
    from .io import read_wav, write_pose, write_pose_csv
    from .training import generate, load_model

    model, header, _ = load_model(args.checkpoint)
    wav, sr = read_wav(args.audio)
    n_frames = int(round(len(wav) / sr * FPS))
    if n_frames < 1:
        raise UsageError("audio is shorter than one pose frame")
    feats = SpeechFeatureSet(extract_mel(wav, sr, n_frames), sample_rate=sr, waveform=wav)
    pose = generate(feats, model, FPS)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    (write_pose_csv if args.csv else write_pose)(out, pose.frames)
    digest = hashlib.sha256(Path(args.checkpoint).read_bytes()).hexdigest()
    _write_json(str(out) + ".json", {"checkpoint_sha256": digest, "audio": Path(args.audio).name,
                                     "shape": list(pose.frames.shape), "config": header["config"]})
    print(f"generated pose {tuple(pose.frames.shape)} -> {out}")
    return 0


def cmd_detect(args) -> int:
    from .detector import load_detector
    from .io import read_pose

    model = load_detector(args.detector)
    frames = read_pose(args.pose)
    if frames.shape[1] != L.DEFAULT_LAYOUT.total_keypoints:
        raise SchemaError(f"{args.pose}: expected {L.DEFAULT_LAYOUT.total_keypoints} keypoints, got {frames.shape[1]}")
    body = torch.as_tensor(L.split(frames)[0][None], dtype=torch.float32)
    scores = model.score_poses(body)[0].numpy()
    lines = ["frame_index,score"] + [f"{i},{s:.6f}" for i, s in enumerate(scores)]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"scored {len(scores)} frames -> {args.out}")
    return 0


def cmd_train_fgd(args) -> int:
    from .metrics import save_aux, train_fgd_extractor

    cfg = resolve_config(args)
    manifest = _corpus(args.corpus)
    samples = _split_samples(manifest, "train")
    bodies = np.stack([s.pose.body for s in samples])
    model = train_fgd_extractor(bodies, cfg.evaluation, cfg.seed)
    save_aux(args.out, model, "fgd_extractor", cfg.evaluation, {"n_keypoints": bodies.shape[2]})
    print(f"FGD feature extractor written to {args.out}")
    return 0


def cmd_train_syncnet(args) -> int:
    from .metrics import save_aux, sync_separation, train_pose_syncnet

    cfg = resolve_config(args)
    manifest = _corpus(args.corpus)
    samples = _split_samples(manifest, "train")
    poses = np.stack([s.pose.frames for s in samples])
    mels = np.stack([s.audio.mel for s in samples])
    net = train_pose_syncnet(poses, mels, cfg.evaluation, cfg.seed)
    pos, neg = sync_separation(net, poses, mels, cfg.evaluation.sync_min_shift, cfg.seed)
    print(f"embedding distance aligned {pos:.4f} / shifted {neg:.4f}")
    save_aux(args.out, net, "pose_syncnet", cfg.evaluation,
             {"n_keypoints": poses.shape[2], "n_mels": mels.shape[2]})
    print(f"Pose-SyncNet written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from .data import FPS
    from .metrics import evaluate, load_aux
    from .training import load_model

    cfg = resolve_config(args)
    manifest = _corpus(args.corpus)
    samples = _split_samples(manifest, args.split)
    truth = np.stack([s.pose.frames for s in samples])
    mels = np.stack([s.audio.mel for s in samples])
    if args.checkpoint:
        model, header, _ = load_model(args.checkpoint)
        generated = model.generate(mels)
        cfg_echo = header["config"]
    else:
        log.warning("no --checkpoint; evaluating ground truth against itself")
        generated = truth
        cfg_echo = cfg.to_dict()
    fgd_net = load_aux(args.fgd_extractor, "fgd_extractor") if args.fgd_extractor else None
    sync = load_aux(args.syncnet, "pose_syncnet") if args.syncnet else None
    report = evaluate(generated, truth, mels, [s.audio.waveform for s in samples], manifest.layout, FPS,
                      samples[0].audio.sample_rate, cfg.evaluation, fgd_net, sync)
    report.config_echo = {"model": cfg_echo, "evaluation": cfg.to_dict()["evaluation"], "split": args.split}
    sys.stdout.write(report.table())
    if args.out:
        _write_json(args.out, report.to_dict())
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="salgest", description="Speech-driven co-speech gesture generation.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="TOML or JSON run configuration")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override e.g. training.epochs=10")
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("synth-data", help="write the synthetic corpus")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--frames", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train-detector", help="derive labels and train the salient posture detector")
    with_config(s)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--split", default="train", choices=["train", "val", "test", "all"])
    s.set_defaults(func=cmd_train_detector)

    s = sub.add_parser("train", help="train the generator")
    with_config(s)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--detector")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="audio file -> pose file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--audio", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--csv", action="store_true", help="write CSV instead of GPOS1")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("detect", help="per-frame saliency scores for a pose file")
    s.add_argument("--detector", required=True)
    s.add_argument("--pose", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("train-fgd", help="train the FGD feature extractor")
    with_config(s)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_fgd)

    s = sub.add_parser("train-syncnet", help="train the Pose-SyncNet used by PSD")
    with_config(s)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_syncnet)

    s = sub.add_parser("evaluate", help="metric report for a model (or ground truth) on a corpus split")
    with_config(s)
    s.add_argument("--corpus", required=True)
    s.add_argument("--checkpoint", help="omit to evaluate ground truth against itself")
    s.add_argument("--syncnet")
    s.add_argument("--fgd-extractor")
    s.add_argument("--split", default="test")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    from .losses import NonFiniteLoss

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"error: corrupt artifact: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except NonFiniteLoss as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (LoadError, SchemaError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
