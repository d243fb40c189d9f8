"""Frechet-distance evaluation with pluggable deterministic embedders.

Inception-style feature extraction is replaced by either a frozen
random-weight CNN (default) or a per-channel statistics embedder that is
fully analytic; neither claims perceptual fidelity, both are deterministic
per (kind, seed), which is what the desk-scale experiments need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import tensor as T
from .tensor import Tensor

EMBEDDER_KINDS = ("frozen_random_cnn", "channel_stats")


@dataclass
class GaussianSummary:
    mu: np.ndarray
    sigma: np.ndarray


class Embedder:
    """Maps frames (n, H, W, C) to deterministic feature rows (n, embed_dim)."""

    def __init__(self, kind: str = "frozen_random_cnn", seed: int = 1234, embed_dim: int = 32,
                 channels: int = 3):
        if kind not in EMBEDDER_KINDS:
            raise ValueError(f"unknown embedder kind {kind!r} (have {EMBEDDER_KINDS})")
        self.kind = kind
        self.seed = seed
        self.channels = channels
        if kind == "channel_stats":
            self.embed_dim = 2 * channels
            self._kernels = None
        else:
            self.embed_dim = embed_dim
            rng_seeds = [seed * 7 + i for i in range(3)]
            self._kernels = [
                T.xavier_array((3, 3, channels, 16), rng_seeds[0]),
                T.xavier_array((3, 3, 16, 32), rng_seeds[1]),
                T.xavier_array((1, 1, 32, embed_dim), rng_seeds[2]),
            ]

    def embed(self, frames) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 4:
            raise ValueError(f"embed: frames must be (n, H, W, C), got {frames.shape}")
        if self.kind == "channel_stats":
            mean = frames.mean(axis=(1, 2))
            std = frames.std(axis=(1, 2))
            return np.concatenate([mean, std], axis=1).astype(np.float64)
        with T.no_grad():
            h = T.relu(T.conv2d(Tensor(frames), Tensor(self._kernels[0])))
            h = T.avgpool2x2(h) if h.shape[1] % 2 == 0 else h
            h = T.relu(T.conv2d(h, Tensor(self._kernels[1])))
            h = T.avgpool2x2(h) if h.shape[1] % 2 == 0 else h
            h = T.conv2d(h, Tensor(self._kernels[2]))
        return h.data.mean(axis=(1, 2)).astype(np.float64)


def fit_gaussian(embeddings) -> GaussianSummary:
    """Sample mean and unbiased covariance of feature rows."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValueError(f"fit_gaussian: need at least 2 rows, got shape {emb.shape}")
    mu = emb.mean(axis=0)
    centered = emb - mu
    sigma = centered.T @ centered / (emb.shape[0] - 1)
    return GaussianSummary(mu, (sigma + sigma.T) / 2.0)


def frechet_distance(g1: GaussianSummary, g2: GaussianSummary) -> float:
    """|mu1-mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), via symmetric eigensolves."""
    if g1.mu.shape != g2.mu.shape:
        raise ValueError(f"frechet_distance: dims {g1.mu.shape} vs {g2.mu.shape}")
    diff = g1.mu - g2.mu
    w1, v1 = np.linalg.eigh(g1.sigma)
    s1_half = (v1 * np.sqrt(np.clip(w1, 0, None))) @ v1.T
    inner = s1_half @ g2.sigma @ s1_half
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = np.sum(np.sqrt(np.clip(w, 0, None)))
    return float(diff @ diff + np.trace(g1.sigma) + np.trace(g2.sigma) - 2.0 * tr_sqrt)


def _clip_frame_pool(clips) -> np.ndarray:
    arrs = [np.asarray(c.frames if hasattr(c, "frames") else c, dtype=np.float32) for c in clips]
    return np.concatenate(arrs, axis=0)


def fid_eval(real_clips, generated_clips, embedder: Embedder,
             diagonal_load: float = 1e-6) -> float:
    """Frechet distance between frame-embedding Gaussians of the two sides."""
    real = _clip_frame_pool(real_clips)
    gen = _clip_frame_pool(generated_clips)
    if real.shape[0] < 2 or gen.shape[0] < 2:
        raise ValueError("fid_eval: each side needs at least 2 frames")
    g_real = fit_gaussian(embedder.embed(real))
    g_gen = fit_gaussian(embedder.embed(gen))
    load = diagonal_load * np.eye(embedder.embed_dim)
    g_real.sigma = g_real.sigma + load
    g_gen.sigma = g_gen.sigma + load
    return frechet_distance(g_real, g_gen)


def color_coherence_probe(clips, bright_threshold: float = 0.5, margin: float = 0.1) -> float:
    """Fraction of frames whose background color matches the switch schedule.

    Background = complement of the largest connected bright region. Frames in
    the first half must be blue-dominant, in the second half red-dominant,
    both by at least ``margin`` in [0, 1] channel units.
    """
    total = 0
    correct = 0
    for clip in clips:
        frames = np.asarray(clip.frames if hasattr(clip, "frames") else clip, dtype=np.float32)
        tt = frames.shape[0]
        for t, frame in enumerate(frames):
            frame = np.clip(frame, 0.0, 1.0)
            bright = frame.mean(axis=-1) > bright_threshold
            background = np.ones(bright.shape, dtype=bool)
            if bright.any():
                labels, n = ndimage.label(bright)
                if n:
                    sizes = ndimage.sum_labels(np.ones_like(labels), labels, range(1, n + 1))
                    background = labels != (1 + int(np.argmax(sizes)))
            if not background.any():
                total += 1
                continue
            dom = frame[background].mean(axis=0)
            expected = 2 if t < tt // 2 else 0  # blue first half, red second
            others = [c for c in range(3) if c != expected]
            total += 1
            if dom[expected] - max(dom[o] for o in others) >= margin:
                correct += 1
    if total == 0:
        raise ValueError("color_coherence_probe: no frames given")
    return correct / total
