"""Embedders, Gaussian fitting, Frechet distance closed forms, color probe."""

import numpy as np
import pytest

from v2vstyle import data as D
from v2vstyle import metrics as M


# ---------------------------------------------------------------------------
# embedders
# ---------------------------------------------------------------------------

def test_embed_identical_frames_identical_rows():
    e = M.Embedder("frozen_random_cnn", seed=1, embed_dim=8)
    frame = np.random.default_rng(0).random((16, 16, 3)).astype(np.float32)
    rows = e.embed(np.stack([frame, frame, frame]))
    assert rows.shape == (3, 8)
    assert np.array_equal(rows[0], rows[1]) and np.array_equal(rows[1], rows[2])


def test_channel_stats_constant_frame():
    e = M.Embedder("channel_stats")
    v = 0.375
    rows = e.embed(np.full((2, 8, 8, 3), v, dtype=np.float32))
    np.testing.assert_allclose(rows[:, :3], v, atol=1e-7)
    np.testing.assert_allclose(rows[:, 3:], 0.0, atol=1e-7)


def test_frozen_cnn_deterministic_per_seed():
    frames = np.random.default_rng(1).random((4, 32, 32, 3)).astype(np.float32)
    a = M.Embedder("frozen_random_cnn", seed=7).embed(frames)
    b = M.Embedder("frozen_random_cnn", seed=7).embed(frames)
    c = M.Embedder("frozen_random_cnn", seed=8).embed(frames)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_embedder_rejects_unknown_kind():
    with pytest.raises(ValueError, match="kind"):
        M.Embedder("vgg")


# ---------------------------------------------------------------------------
# gaussian fitting
# ---------------------------------------------------------------------------

def test_fit_gaussian_hand_case():
    g = M.fit_gaussian(np.array([[0.0, 0.0], [2.0, 2.0]]))
    np.testing.assert_allclose(g.mu, [1.0, 1.0])
    np.testing.assert_allclose(g.sigma, [[2.0, 2.0], [2.0, 2.0]])


def test_fit_gaussian_repeated_rows_zero_cov():
    g = M.fit_gaussian(np.tile([1.5, -2.0, 3.0], (5, 1)))
    np.testing.assert_allclose(g.sigma, 0.0, atol=1e-12)


def test_fit_gaussian_two_pass_oracle():
    rng = np.random.default_rng(2)
    emb = rng.normal(size=(40, 6))
    g = M.fit_gaussian(emb)
    mu = emb.mean(axis=0)
    cov = np.zeros((6, 6))
    for row in emb:  # direct two-pass accumulation
        d = row - mu
        cov += np.outer(d, d)
    cov /= len(emb) - 1
    assert np.max(np.abs(g.sigma - cov)) < 1e-10
    assert np.max(np.abs(g.mu - mu)) < 1e-12


def test_fit_gaussian_rejects_single_row():
    with pytest.raises(ValueError, match="2 rows"):
        M.fit_gaussian(np.ones((1, 4)))


# ---------------------------------------------------------------------------
# frechet distance closed forms
# ---------------------------------------------------------------------------

def test_fd_zero_on_identical():
    rng = np.random.default_rng(3)
    emb = rng.normal(size=(30, 5))
    g = M.fit_gaussian(emb)
    assert abs(M.frechet_distance(g, g)) < 1e-8


def test_fd_unit_mean_shift():
    d = 4
    mu2 = np.zeros(d)
    mu2[0] = 1.0
    g1 = M.GaussianSummary(np.zeros(d), np.eye(d))
    g2 = M.GaussianSummary(mu2, np.eye(d))
    assert abs(M.frechet_distance(g1, g2) - 1.0) < 1e-8


def test_fd_scalar_closed_form():
    g1 = M.GaussianSummary(np.zeros(1), np.array([[1.0]]))
    g2 = M.GaussianSummary(np.ones(1), np.array([[4.0]]))
    # 1-D gaussians: (mu1-mu2)^2 + (s1-s2)^2 = 1 + (1-2)^2 = 2
    assert abs(M.frechet_distance(g1, g2) - 2.0) < 1e-8


def test_fd_symmetry():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(50, 6))
    b = rng.normal(loc=0.3, size=(60, 6))
    g1, g2 = M.fit_gaussian(a), M.fit_gaussian(b)
    assert abs(M.frechet_distance(g1, g2) - M.frechet_distance(g2, g1)) < 1e-8


def test_fd_dim_mismatch():
    g1 = M.GaussianSummary(np.zeros(2), np.eye(2))
    g2 = M.GaussianSummary(np.zeros(3), np.eye(3))
    with pytest.raises(ValueError, match="dims"):
        M.frechet_distance(g1, g2)


# ---------------------------------------------------------------------------
# fid over clips
# ---------------------------------------------------------------------------

def clipset(seed, n=4, offset=0.0):
    rng = np.random.default_rng(seed)
    return [D.VideoClip((rng.random((3, 16, 16, 3)) + offset).astype(np.float32), "y")
            for _ in range(n)]


def test_fid_self_zero_and_offset_positive():
    e = M.Embedder("channel_stats")
    clips = clipset(5)
    assert abs(M.fid_eval(clips, clips, e)) < 1e-6
    shifted = [D.VideoClip(c.frames + 0.5, "y") for c in clips]
    assert M.fid_eval(clips, shifted, e) > 0.01


def test_fid_invariant_to_order_and_grouping():
    e = M.Embedder("frozen_random_cnn", seed=3, embed_dim=8)
    clips = clipset(6)
    a = M.fid_eval(clips, clipset(7), e)
    b = M.fid_eval(list(reversed(clips)), clipset(7), e)
    regrouped = [D.VideoClip(np.concatenate([c.frames for c in clips]), "y")]
    c = M.fid_eval(regrouped, clipset(7), e)
    assert a == pytest.approx(b, abs=1e-9)
    assert a == pytest.approx(c, abs=1e-9)


def test_fid_same_distribution_within_bootstrap_band():
    e = M.Embedder("channel_stats")
    rng = np.random.default_rng(8)
    pool = (rng.random((80, 12, 12, 3))).astype(np.float32)
    half_fid = M.fid_eval([pool[:40]], [pool[40:]], e)
    boots = []
    for _ in range(40):
        idx = rng.permutation(80)
        boots.append(M.fid_eval([pool[idx[:40]]], [pool[idx[40:]]], e))
    mean, std = np.mean(boots), np.std(boots)
    assert abs(half_fid - mean) < 4 * std + 1e-12


# ---------------------------------------------------------------------------
# color coherence probe
# ---------------------------------------------------------------------------

def switch_spec(seed=0):
    return D.SynthSpec(task="color_switch", frame_size=32, video_length=6,
                       frame_budget={"x": 24, "y": 24, "z": 24, "zbar": 6}, seed=seed)


def test_probe_ground_truth_full_score():
    sets = D.gen_color_switch(switch_spec())
    assert M.color_coherence_probe(sets["y"].clips) == 1.0


def test_probe_all_black_zero():
    clips = [D.VideoClip(np.zeros((6, 32, 32, 3), dtype=np.float32), "y")]
    assert M.color_coherence_probe(clips) == 0.0


def test_probe_swapped_halves_zero():
    sets = D.gen_color_switch(switch_spec(1))
    swapped = []
    for c in sets["y"].clips:
        frames = np.concatenate([c.frames[3:], c.frames[:3]])
        swapped.append(D.VideoClip(frames, "y"))
    assert M.color_coherence_probe(swapped) == 0.0
