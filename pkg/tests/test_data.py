import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from salgest import layout as L
from salgest.audio import (FileProvider, NullProvider, ExternalProvider, ProviderError, asr_features,
                           extract_mel, mel_center_frequencies, mel_filterbank, LOG_FLOOR, N_FFT)
from salgest.data import PoseSequence, load_corpus, load_samples, segment_clips
from salgest.io import LoadError, SchemaError, read_pose, write_pose, write_pose_csv
from salgest.labels import (compute_resting_pose, derive_sequence_label, label_samples, rest_distances,
                            saliency_threshold)
from salgest.synth import make_synthetic_corpus, read_truth


def test_default_layout_partition():
    lay = L.DEFAULT_LAYOUT
    assert lay.total_keypoints == 121 and lay.n_face == 70 and lay.n_body == 51
    assert sorted(lay.face_indices + lay.body_indices) == list(range(121))


def test_layout_rejects_overlap():
    with pytest.raises(ValueError):
        L.SkeletonLayout(total_keypoints=4, face_indices=(0, 1), body_indices=(1, 2, 3), bones=())


@given(st.integers(1, 6))
@settings(max_examples=10, deadline=None)
def test_split_fuse_round_trip(t):
    frames = np.random.default_rng(t).normal(size=(t, 121, 2)).astype(np.float32)
    body, face = L.split(frames)
    assert np.array_equal(L.fuse(body, face), frames)


def test_split_fuse_round_trip_torch():
    import torch

    frames = torch.randn(2, 5, 121, 2)
    body, face = L.split(frames)
    assert torch.equal(L.fuse(body, face), frames)


def test_pose_file_formats(tmp_path, rng):
    frames = rng.normal(size=(7, 121, 2)).astype(np.float32)
    write_pose(tmp_path / "a.gpos", frames)
    assert (tmp_path / "a.gpos").read_bytes()[:5] == b"GPOS1"
    assert np.array_equal(read_pose(tmp_path / "a.gpos"), frames)
    write_pose_csv(tmp_path / "a.csv", frames)
    np.testing.assert_allclose(read_pose(tmp_path / "a.csv"), frames, rtol=1e-6)


def test_truncated_pose_file(tmp_path):
    write_pose(tmp_path / "a.gpos", np.zeros((3, 121, 2)))
    raw = (tmp_path / "a.gpos").read_bytes()
    (tmp_path / "b.gpos").write_bytes(raw[:-4])
    with pytest.raises(SchemaError):
        read_pose(tmp_path / "b.gpos")


# ------------------------------------------------------------------ corpus


def test_load_corpus_round_trip(small_corpus):
    m = load_corpus(small_corpus.root / "manifest.json")
    assert len(m.samples) == 12
    assert m.split_sizes() == {"train": 10, "val": 1, "test": 1}
    assert m.layout == L.DEFAULT_LAYOUT


def test_load_corpus_missing_pose(small_corpus, tmp_path):
    doc = json.loads((small_corpus.root / "manifest.json").read_text())
    doc["samples"][0]["pose"] = "pose/nope.gpos"
    for sub in ("audio", "pose"):
        shutil.copytree(small_corpus.root / sub, tmp_path / sub)
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(LoadError, match="nope.gpos"):
        load_corpus(tmp_path / "manifest.json")


def test_load_corpus_wrong_keypoint_count(small_corpus, tmp_path):
    doc = json.loads((small_corpus.root / "manifest.json").read_text())
    for sub in ("audio", "pose"):
        shutil.copytree(small_corpus.root / sub, tmp_path / sub)
    write_pose(tmp_path / "pose" / "bad.gpos", np.zeros((64, 120, 2)))
    doc["samples"][3]["pose"] = "pose/bad.gpos"
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match=r"sample 3 .*121.*120"):
        load_corpus(tmp_path / "manifest.json")


@pytest.mark.parametrize("n_frames,expected", [(200, 3), (64, 1), (63, 0)])
def test_segment_clips_counts(n_frames, expected):
    pose = PoseSequence(np.random.default_rng(0).normal(size=(n_frames, 121, 2)))
    wav = np.random.default_rng(1).normal(size=int(np.ceil(n_frames * 16000 / 15)))
    segs = segment_clips(pose, wav, 16000, 64)
    assert len(segs) == expected
    for i, s in enumerate(segs):
        assert len(s.pose) == 64 and s.audio.mel.shape == (64, 64)
        assert np.array_equal(s.pose.frames, pose.frames[64 * i:64 * (i + 1)])
        assert abs(len(s.audio.waveform) - 64 / 15 * 16000) <= 1
    if segs:
        prefix = np.concatenate([s.pose.frames for s in segs])
        assert np.array_equal(prefix, pose.frames[:len(prefix)])


# ------------------------------------------------------------------ resting pose / labels


def test_resting_pose_constant():
    p = np.random.default_rng(0).uniform(0, 1, size=(51, 2))
    np.testing.assert_allclose(compute_resting_pose(np.repeat(p[None], 20, 0)), p)


def _brute_mode(frames, step=0.05):
    counts = {}
    for f in frames:
        key = tuple(np.floor(f.ravel() / step).astype(int))
        counts.setdefault(key, []).append(f)
    best = max(sorted(counts), key=lambda k: len(counts[k]))  # first maximal in sorted order
    return np.mean(counts[best], axis=0)


def test_resting_pose_majority_matches_bruteforce():
    rng = np.random.default_rng(5)
    p = (np.floor(rng.uniform(0, 1, size=(51, 2)) / 0.05) + 0.5) * 0.05
    q = p + 0.3
    frames = np.concatenate([
        p + rng.uniform(-0.01, 0.01, size=(90, 51, 2)),
        q + rng.uniform(-0.01, 0.01, size=(10, 51, 2)),
    ])
    expected = _brute_mode(frames)
    got = compute_resting_pose(frames)
    np.testing.assert_allclose(got, expected, atol=1e-12)
    assert np.abs(got - p).max() < 0.01


def test_resting_pose_tie_breaks_lexicographically():
    a = np.full((51, 2), 0.525)
    b = np.full((51, 2), 0.225)  # lower cell index
    frames = np.concatenate([np.repeat(a[None], 5, 0), np.repeat(b[None], 5, 0)])
    np.testing.assert_allclose(compute_resting_pose(frames), b)


def test_resting_pose_empty():
    with pytest.raises(ValueError):
        compute_resting_pose(np.zeros((0, 51, 2)))


def test_label_zero_when_at_rest():
    rest = np.random.default_rng(0).uniform(size=(51, 2))
    lab = derive_sequence_label(np.repeat(rest[None], 64, 0), rest, 0.1)
    assert lab.label == 0 and np.all(lab.distances == 0)


def test_label_degenerate_variance():
    rest = np.zeros((51, 2))
    frames = np.zeros((3, 64, 51, 2))
    frames[..., 0, 0] = 0.7  # every frame at distance 0.7
    d = [rest_distances(f, rest) for f in frames]
    thr = saliency_threshold(d)
    assert thr == pytest.approx(0.7)
    assert all(derive_sequence_label(f, rest, thr).label == 0 for f in frames)


def test_label_planted_frame():
    rng = np.random.default_rng(11)
    # small corpus: the planted frame inflates the std enough that no natural draw passes
    n_seq, t = 10, 16
    dist = rng.normal(1.0, 0.1, size=(n_seq, t))
    dist[7, 9] = 5.0
    # realise the distances along one coordinate of a zero resting pose
    frames = np.zeros((n_seq, t, 51, 2))
    frames[..., 0, 0] = dist
    rest = np.zeros((51, 2))
    thr = saliency_threshold([rest_distances(f, rest) for f in frames])
    brute_thr = dist.mean() + 3 * dist.std()
    assert thr == pytest.approx(brute_thr, rel=1e-12)
    labels = [derive_sequence_label(f, rest, thr).label for f in frames]
    brute = [int(max(dist[i]) > brute_thr) for i in range(n_seq)]
    assert labels == brute == [int(i == 7) for i in range(n_seq)]


def test_label_matches_bruteforce_on_random_sequences():
    rng = np.random.default_rng(2)
    rest = rng.uniform(size=(51, 2))
    seqs = rest + rng.normal(0, 0.02, size=(1000, 16, 51, 2)) * rng.exponential(1, size=(1000, 16, 1, 1))
    thr = saliency_threshold([rest_distances(s, rest) for s in seqs])
    for s in seqs:
        d = np.array([np.sqrt(sum((s[t] - rest).ravel() ** 2)) for t in range(len(s))])
        assert derive_sequence_label(s, rest, thr).label == int(d.max() > thr)


# ------------------------------------------------------------------ audio


def test_mel_silence_is_log_floor():
    mel = extract_mel(np.zeros(16000), 16000, 32)
    assert np.all(mel == np.float32(np.log(LOG_FLOOR)))


def test_mel_shape_contract():
    wav = np.random.default_rng(0).normal(size=int(4.2667 * 16000))
    assert extract_mel(wav, 16000, 64).shape == (64, 64)


def test_mel_empty_waveform():
    with pytest.raises(ValueError):
        extract_mel(np.zeros(0), 16000, 64)


def test_mel_tone_matches_reference_dft():
    sr, bin_ = 16000, 30
    f0 = mel_center_frequencies(sr)[bin_]
    wav = np.sin(2 * np.pi * f0 * np.arange(sr) / sr)
    mel = extract_mel(wav, sr, 16)
    assert np.all(mel.argmax(axis=1) == bin_)
    # reference: explicit DFT sum of one Hann-windowed 25 ms frame
    win = 400
    frame = wav[:win] * np.hanning(win)
    k = np.arange(N_FFT // 2 + 1)
    dft = np.array([np.sum(frame * np.exp(-2j * np.pi * kk * np.arange(win) / N_FFT)) for kk in k])
    ref = np.abs(dft) ** 2 @ mel_filterbank(sr).T
    assert ref.argmax() == bin_


def test_asr_providers(tmp_path):
    assert asr_features(np.zeros(10), 64, NullProvider()) is None
    np.save(tmp_path / "clip.npy", np.random.default_rng(0).normal(size=(128, 29)))
    out = asr_features(np.zeros(10), 64, FileProvider(tmp_path, 29), key="clip")
    assert out.shape == (64, 29)
    with pytest.raises(LoadError):
        asr_features(np.zeros(10), 64, FileProvider(tmp_path, 29), key="missing")

    def broken(w, t):
        raise RuntimeError("boom")

    with pytest.raises(ProviderError, match="broken"):
        asr_features(np.zeros(10), 64, ExternalProvider(broken, 29))


# ------------------------------------------------------------------ synthetic corpus


def _digest(root: Path):
    import hashlib

    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_synthetic_corpus_is_deterministic(tmp_path):
    make_synthetic_corpus(1, 5, 64, tmp_path / "a")
    make_synthetic_corpus(1, 5, 64, tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_synthetic_planted_fraction(corpus, samples):
    truth = [read_truth(e) for e in corpus.samples]
    assert sum(t.salient for t in truth) == 60
    train = [s for s, e in zip(samples, corpus.samples) if e.split == "train"]
    labels, _ = label_samples(samples, train)
    assert labels.mean() == pytest.approx(0.3)
