import math

import numpy as np
import pytest
import torch

from salgest.config import DetectorConfig
from salgest.detector import (SaliencyDetector, affinity_weights, detector_loss, index_prior_weights, roc_auc,
                              topk_pool, train_detector)

SMALL = DetectorConfig(d1=16, d2=32, k=4, theta_phi_dim=8, conv_channels=(16, 16), epochs=2, batch_size=8)


@pytest.fixture
def det():
    torch.manual_seed(0)
    return SaliencyDetector(51, SMALL).eval()


def test_initial_features_shape(det):
    for t in (1, 5, 64):
        assert det.extract_initial_features(torch.randn(2, t, 51, 2)).shape == (2, t, 16)


def test_initial_features_shift_equivariance(det):
    x = torch.randn(1, 40, 51, 2)
    s = 4
    shifted = torch.roll(x, s, dims=1)
    fx, fs = det.extract_initial_features(x), det.extract_initial_features(shifted)
    radius = 3 * (SMALL.kernel_size // 2)
    lo, hi = radius + s, 40 - radius
    torch.testing.assert_close(fs[:, lo:hi], fx[:, lo - s:hi - s])


def test_initial_features_zero(det):
    with torch.no_grad():
        for m in det.features:
            if hasattr(m, "bias"):
                m.bias.zero_()
    assert torch.count_nonzero(det.extract_initial_features(torch.zeros(1, 9, 51, 2))) == 0


def test_affinity_uniform_for_identical_rows():
    x = torch.randn(1, 8).repeat(6, 1)
    torch.testing.assert_close(affinity_weights(x), torch.full((6, 6), 1 / 6))


def test_affinity_orthonormal_rows():
    t = 5
    w = affinity_weights(torch.eye(t, dtype=torch.float64))
    diag = math.e / (math.e + t - 1)
    np.testing.assert_allclose(torch.diagonal(w).numpy(), diag, rtol=1e-12)


def test_affinity_rows_sum_to_one(det):
    x = det.extract_initial_features(torch.randn(3, 20, 51, 2))
    w = affinity_weights(x, det.theta, det.phi)
    torch.testing.assert_close(w.sum(-1), torch.ones(3, 20), atol=1e-6, rtol=0)
    assert (w > 0).all()


def test_index_prior_values():
    assert index_prior_weights(1).tolist() == [[1.0]]
    w = index_prior_weights(3, torch.float64)
    e = np.exp([0.0, -1.0, -2.0])
    np.testing.assert_allclose(w[0].numpy(), e / e.sum(), rtol=1e-12)
    np.testing.assert_allclose(w[0].numpy(), [0.6652, 0.2447, 0.0900], atol=1e-4)


@pytest.mark.parametrize("t", [1, 2, 3, 16, 64, 128])
def test_index_prior_structure(t):
    w = index_prior_weights(t, torch.float64)
    assert torch.equal(w, index_prior_weights(t, torch.float64))
    assert (w.argmax(-1) == torch.arange(t)).all()
    # row normalisation breaks symmetry; the kernel relative to the diagonal is symmetric
    rel = w / torch.diagonal(w)[:, None]
    torch.testing.assert_close(rel, rel.T)
    torch.testing.assert_close(w.sum(-1), torch.ones(t, dtype=torch.float64))


def test_temporal_relation_constant_frames(det):
    x = torch.randn(1, 1, 16).repeat(1, 10, 1)
    w1 = affinity_weights(x, det.theta, det.phi)
    y = det.temporal_relation(x, w1, index_prior_weights(10))
    assert y.shape == (1, 10, 16)
    torch.testing.assert_close(y, y[:, :1].expand_as(y))


def test_temporal_relation_zero(det):
    with torch.no_grad():
        det.fc_hidden.bias.zero_()
        det.fc_out.bias.zero_()
    x = torch.zeros(1, 6, 16)
    y = det.temporal_relation(x, affinity_weights(x), index_prior_weights(6))
    assert torch.count_nonzero(y) == 0


def test_temporal_relation_shape_mismatch(det):
    with pytest.raises(ValueError):
        det.temporal_relation(torch.randn(1, 6, 16), torch.ones(6, 5) / 5, index_prior_weights(6))


def test_frame_scores_midpoint_and_range(det):
    with torch.no_grad():
        det.classifier.weight.zero_()
        det.classifier.bias.zero_()
    s = torch.sigmoid(det.frame_logits(torch.zeros(1, 7, 16)))
    assert torch.equal(s, torch.full((1, 7), 0.5))
    scores = det(torch.randn(2, 30, 51, 2))
    assert ((scores > 0) & (scores < 1)).all()


def test_topk_examples():
    assert topk_pool(torch.tensor([0.9, 0.1, 0.8, 0.2]), 2).item() == pytest.approx(0.85)
    assert topk_pool(torch.full((9,), 0.3), 4).item() == pytest.approx(0.3)
    s = torch.rand(11)
    assert topk_pool(s, 11).item() == pytest.approx(s.mean().item())
    with pytest.raises(ValueError):
        topk_pool(s, 12)


def test_topk_bounds_and_monotone(rng):
    for _ in range(100):
        s = torch.as_tensor(rng.uniform(size=20))
        k = int(rng.integers(1, 21))
        v = topk_pool(s, k).item()
        assert s.min().item() - 1e-12 <= v <= s.max().item() + 1e-12
        bumped = s.clone()
        bumped[int(rng.integers(20))] += 0.1
        assert topk_pool(bumped, k).item() >= v - 1e-12


def test_k_clamped_for_short_sequences(det):
    with pytest.warns(UserWarning, match="clamping"):
        _, seq = det.sequence_scores(torch.randn(1, 3, 51, 2))
    assert seq.shape == (1,)


def test_bce_values():
    assert detector_loss(torch.tensor(0.5), 1).item() == pytest.approx(math.log(2))
    assert detector_loss(torch.tensor(0.5), 0).item() == pytest.approx(math.log(2))
    assert detector_loss(torch.tensor(0.9, dtype=torch.float64), 1).item() == pytest.approx(-math.log(0.9))
    assert detector_loss(torch.tensor(1.0), 1).item() < 1e-6


def test_batch_order_invariance(det):
    x = torch.randn(4, 16, 51, 2)
    perm = torch.tensor([2, 0, 3, 1])
    torch.testing.assert_close(det(x)[perm], det(x[perm]))


def test_time_permutation_changes_scores(det):
    x = torch.randn(1, 16, 51, 2)
    assert not torch.allclose(det(x), det(x[:, torch.randperm(16)]))


def test_roc_auc_against_pair_counting(rng):
    labels = rng.integers(0, 2, size=200)
    scores = np.round(rng.normal(size=200), 1)  # force ties
    pos, neg = scores[labels == 1], scores[labels == 0]
    brute = np.mean([(p > n) + 0.5 * (p == n) for p in pos for n in neg])
    assert roc_auc(labels, scores) == pytest.approx(brute)


def test_train_detector_deterministic_and_warns_single_class():
    bodies = np.random.default_rng(0).normal(size=(10, 16, 51, 2)).astype(np.float32)
    labels = np.zeros(10)
    with pytest.warns(UserWarning, match="identical"):
        a, _ = train_detector(bodies, labels, SMALL, seed=3)
    with pytest.warns(UserWarning):
        b, _ = train_detector(bodies, labels, SMALL, seed=3)
    for (n, p), (_, q) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(p, q), n


def test_all_negative_corpus_collapses():
    bodies = np.random.default_rng(0).normal(size=(32, 16, 51, 2)).astype(np.float32)
    cfg = DetectorConfig(d1=16, d2=32, k=4, theta_phi_dim=8, conv_channels=(16, 16), epochs=40, batch_size=8,
                         learning_rate=1e-3)
    with pytest.warns(UserWarning):
        model, _ = train_detector(bodies, np.zeros(32), cfg, seed=0)
    _, seq = model.sequence_scores(torch.as_tensor((bodies - model.pose_mean.numpy()) / model.pose_std.numpy()))
    assert seq.mean().item() < 0.1
