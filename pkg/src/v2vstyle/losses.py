"""The four-part loss suite and its weighted total.

All functions build autodiff graphs and return scalar tensors valued exactly
as the underlying log-sums / squared errors: adversarial and video terms are
sums of log-probabilities (negative numbers, zero under a perfect
discriminator), recurrent and recycle terms are sums of squared residuals.
Policy networks descend on the weighted total; discriminator updates ascend
by flipping the sign of their terms (the training loop owns that).

Prefix quantities -- translated prefixes (G(x_{:t}))_t, next-frame
predictions P(x_{:t}), and per-prefix discriminator decisions -- are read
from one full-sequence pass per clip, which the temporal causality of every
recurrent path makes equivalent to evaluating each prefix separately.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import LOG_EPS, Tensor


@dataclass
class LossWeights:
    """Per-term coefficients of the weighted total (artificial-task defaults)."""

    lambda_rrx: float = 1.0
    lambda_rry: float = 1.0
    lambda_rcx: float = 0.5
    lambda_rcy: float = 0.5
    lambda_vx: float = 1.0
    lambda_vy: float = 1.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


PART_NAMES = ("g_x", "g_y", "rr_x", "rr_y", "rc_xy", "rc_yx", "v_x", "v_y")


@dataclass
class LossReport:
    g_x: float = 0.0
    g_y: float = 0.0
    rr_x: float = 0.0
    rr_y: float = 0.0
    rc_xy: float = 0.0
    rc_yx: float = 0.0
    v_x: float = 0.0
    v_y: float = 0.0
    total: float = 0.0


def total_loss(weights: LossWeights, parts: dict) -> LossReport:
    """Combine named scalar parts into a report; NaN parts fail by name."""
    vals = {}
    for name in PART_NAMES:
        v = float(parts.get(name, 0.0))
        if not np.isfinite(v):
            raise ValueError(f"total_loss: term {name!r} is not finite ({v})")
        vals[name] = v
    total = (vals["g_x"] + vals["g_y"]
             + weights.lambda_rrx * vals["rr_x"] + weights.lambda_rry * vals["rr_y"]
             + weights.lambda_rcx * vals["rc_xy"] + weights.lambda_rcy * vals["rc_yx"]
             + weights.lambda_vx * vals["v_x"] + weights.lambda_vy * vals["v_y"])
    return LossReport(total=total, **vals)


def combine_parts(weights: LossWeights, parts: dict) -> Tensor:
    """Graph-side version of total_loss over scalar tensors (missing parts = 0)."""
    coef = {
        "g_x": 1.0, "g_y": 1.0,
        "rr_x": weights.lambda_rrx, "rr_y": weights.lambda_rry,
        "rc_xy": weights.lambda_rcx, "rc_yx": weights.lambda_rcy,
        "v_x": weights.lambda_vx, "v_y": weights.lambda_vy,
    }
    total = None
    for name, term in parts.items():
        if term is None:
            continue
        piece = term * coef[name]
        total = piece if total is None else total + piece
    if total is None:
        raise ValueError("combine_parts: no loss parts given")
    return total


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _log_pos(t: Tensor) -> Tensor:
    # floor (not two-sided clamp) so a perfect discriminator scores exactly 0
    return T.log(T.clip(t, lo=LOG_EPS))


def _batch(clips) -> np.ndarray:
    lengths = {c.length for c in clips}
    if len(lengths) != 1:
        raise ValueError(f"clip batch must share one length, got {sorted(lengths)}")
    return np.stack([c.frames for c in clips])


def _frame_tensors(batch: np.ndarray, dtype) -> list:
    return [Tensor(np.ascontiguousarray(batch[:, t]), dtype=dtype) for t in range(batch.shape[1])]


def _pooled_frames(clips, dtype) -> Tensor:
    return Tensor(np.concatenate([c.frames for c in clips], axis=0), dtype=dtype)


def _net_dtype(net):
    return net.parameters()[0].dtype


def _generated_frame_pool(gen, clips, dtype, detach):
    """All frames of G(clip) for each clip, pooled into one (sum T_i, H, W, C) tensor."""
    outs = []
    for chunk in _group_by_length(clips):
        batch = _batch(chunk)
        if detach:
            with T.no_grad():
                frames = gen.forward(_frame_tensors(batch, dtype))
            outs.extend(Tensor(f.data.copy()) for f in frames)
        else:
            outs.extend(gen.forward(_frame_tensors(batch, dtype)))
    flat = [f.reshape((-1,) + tuple(f.shape[1:])) for f in outs]
    return T.concat(flat, axis=0)


def _group_by_length(clips):
    groups = {}
    for c in clips:
        groups.setdefault(c.length, []).append(c)
    return [groups[k] for k in sorted(groups)]


def _sum_scalars(terms):
    total = None
    for t in terms:
        total = t if total is None else total + t
    return total


# ---------------------------------------------------------------------------
# adversarial frame losses
# ---------------------------------------------------------------------------

def adv_loss_y(g_y, d_y, x_clips, y_clips, z_clips, style_images, rng,
               style_to_style_head: bool = False, detach_generated: bool = False) -> Tensor:
    """Target-side adversarial terms: style images and real target/style frames
    score high, translated source frames score low on the domain channel."""
    dtype = _net_dtype(d_y)
    terms = []

    n_style = sum(c.length for c in y_clips) if y_clips else len(style_images)
    if len(style_images) == 0:
        warnings.warn("adv_loss_y: empty style-image set, style term skipped")
    elif n_style:
        picks = rng.integers(len(style_images), size=n_style)
        batch = Tensor(np.stack([np.asarray(style_images[i]) for i in picks]), dtype=dtype)
        probs = d_y.forward([batch])
        channel = 1 if style_to_style_head else 0
        terms.append(_log_pos(probs[:, channel:channel + 1]).sum())

    if z_clips:
        probs = d_y.forward([_pooled_frames(z_clips, dtype)])
        terms.append(_log_pos(probs[:, 1:2]).sum())

    if y_clips:
        probs = d_y.forward([_pooled_frames(y_clips, dtype)])
        terms.append(_log_pos(probs[:, 0:1]).sum())

    if x_clips:
        fake = _generated_frame_pool(g_y, x_clips, dtype, detach_generated)
        probs = d_y.forward([fake])
        terms.append(_log_pos(1.0 - probs[:, 0:1]).sum())

    if not terms:
        raise ValueError("adv_loss_y: all input groups empty")
    return _sum_scalars(terms)


def adv_loss_x(g_x, d_x, x_clips, y_clips, z_clips, rng,
               detach_generated: bool = False) -> Tensor:
    """Source-side adversarial terms; both target and style clips translate back."""
    dtype = _net_dtype(d_x)
    terms = []
    if x_clips:
        probs = d_x.forward([_pooled_frames(x_clips, dtype)])
        terms.append(_log_pos(probs[:, 0:1]).sum())
    for clips in (y_clips, z_clips):
        if clips:
            fake = _generated_frame_pool(g_x, clips, dtype, detach_generated)
            probs = d_x.forward([fake])
            terms.append(_log_pos(1.0 - probs[:, 0:1]).sum())
    if not terms:
        raise ValueError("adv_loss_x: all input groups empty")
    return _sum_scalars(terms)


# ---------------------------------------------------------------------------
# recurrent loss
# ---------------------------------------------------------------------------

def recurrent_loss(predictor, clips, style_clips=()) -> Tensor:
    """Sum over t of |frame_{t+1} - predicted frame|^2; style clips add the
    same sum for the style set (target-side predictor only)."""
    dtype = _net_dtype(predictor)
    terms = []
    for group in (clips, style_clips):
        if not group:
            continue
        for chunk in _group_by_length(list(group)):
            batch = _batch(chunk)
            if batch.shape[1] < 2:
                raise ValueError("recurrent_loss: clips must have at least 2 frames")
            frames = _frame_tensors(batch, dtype)
            preds = predictor.forward(frames)
            for t in range(batch.shape[1] - 1):
                terms.append(T.square(preds[t] - frames[t + 1]).sum())
    if not terms:
        raise ValueError("recurrent_loss: no clips given")
    return _sum_scalars(terms)


# ---------------------------------------------------------------------------
# recycle losses
# ---------------------------------------------------------------------------

def _recycle_terms(g_out, g_back, p_mid, clips, prefix_pool, rng) -> list:
    """Shared recycle chain: translate, predict the next frame, splice it onto a
    prefix drawn from the other domain's batch, translate back, compare.

    Returns one squared-error term per time offset.
    """
    dtype = _net_dtype(g_out)
    prefix_data = np.stack([c.frames for c in prefix_pool])
    terms = []
    for chunk in _group_by_length(clips):
        batch = _batch(chunk)
        n, tt = batch.shape[:2]
        if tt < 2:
            raise ValueError("recycle loss: clips must have at least 2 frames")
        frames = _frame_tensors(batch, dtype)
        translated = g_out.forward(frames)
        preds = p_mid.forward(translated)
        for t1 in range(1, tt):  # predicting frame t1+1 (1-based)
            picks = rng.integers(len(prefix_pool), size=n)
            prefix = prefix_data[picks, :t1]
            seq = [Tensor(np.ascontiguousarray(prefix[:, i]), dtype=dtype) for i in range(t1)]
            seq.append(preds[t1 - 1])
            back = g_back.forward(seq)
            terms.append(T.square(back[t1] - frames[t1]).sum())
    return terms


def recycle_loss_xy(g_x, g_y, p_y, x_clips, y_clips, rng) -> Tensor:
    """Source clips pushed into the target domain, advanced one step, and
    pulled back must reproduce the true next source frame."""
    if not x_clips:
        raise ValueError("recycle_loss_xy: no source clips")
    if not y_clips:
        raise ValueError("recycle_loss_xy: target batch empty, nothing to splice onto")
    return _sum_scalars(_recycle_terms(g_y, g_x, p_y, x_clips, y_clips, rng))


def recycle_loss_yx(g_y, g_x, p_x, x_clips, y_clips, z_clips, rng) -> Tensor:
    """Mirror direction, plus the same chain for style clips when present."""
    if not y_clips and not z_clips:
        raise ValueError("recycle_loss_yx: no target or style clips")
    if not x_clips:
        raise ValueError("recycle_loss_yx: source batch empty, nothing to splice onto")
    terms = []
    if y_clips:
        terms.extend(_recycle_terms(g_x, g_y, p_x, y_clips, x_clips, rng))
    if z_clips:
        terms.extend(_recycle_terms(g_x, g_y, p_x, z_clips, x_clips, rng))
    return _sum_scalars(terms)


# ---------------------------------------------------------------------------
# video loss
# ---------------------------------------------------------------------------

def _video_steps(d_video, frames):
    return d_video.forward_steps(frames)


def _video_real_term(d_video, clips, channel, dtype):
    terms = []
    for chunk in _group_by_length(clips):
        steps = _video_steps(d_video, _frame_tensors(_batch(chunk), dtype))
        for s in steps:
            terms.append(_log_pos(s[:, channel:channel + 1]).sum())
    return terms


def _video_fake_term(gen, d_video, clips, channels, dtype, detach):
    terms = []
    for chunk in _group_by_length(clips):
        frames = _frame_tensors(_batch(chunk), dtype)
        if detach:
            with T.no_grad():
                gen_frames = gen.forward(frames)
            gen_frames = [Tensor(f.data.copy()) for f in gen_frames]
        else:
            gen_frames = gen.forward(frames)
        steps = _video_steps(d_video, gen_frames)
        for s in steps:
            for ch in channels:
                terms.append(_log_pos(1.0 - s[:, ch:ch + 1]).sum())
    return terms


def video_loss(g_x, g_y, d_x_video, d_y_video, x_clips, y_clips, z_clips,
               detach_generated: bool = False):
    """Whole-clip adversarial terms over every prefix length; returns (v_x, v_y)."""
    dtype = _net_dtype(d_x_video)
    vx_terms = []
    if x_clips:
        vx_terms += _video_real_term(d_x_video, x_clips, 0, dtype)
    for clips in (y_clips, z_clips):
        if clips:
            vx_terms += _video_fake_term(g_x, d_x_video, clips, (0,), dtype, detach_generated)

    vy_terms = []
    if y_clips:
        vy_terms += _video_real_term(d_y_video, y_clips, 0, dtype)
    if z_clips:
        vy_terms += _video_real_term(d_y_video, z_clips, 1, dtype)
    if x_clips:
        vy_terms += _video_fake_term(g_y, d_y_video, x_clips, (0, 1), dtype, detach_generated)

    zero = Tensor(np.zeros((), dtype=np.float64))
    v_x = _sum_scalars(vx_terms) if vx_terms else zero
    v_y = _sum_scalars(vy_terms) if vy_terms else zero
    return v_x, v_y


# ---------------------------------------------------------------------------
# discriminator objective (ascended by the training loop)
# ---------------------------------------------------------------------------

def discriminator_objective(nets, domain, clips, include_video, style_images, rng,
                            include_frames: bool = True) -> Tensor:
    """Every loss term touching a discriminator, evaluated on a batch of clips
    from one domain. Generators run detached: this objective only trains D.

    ``include_video`` restricts the whole-clip terms to full-length members;
    ``include_frames`` switches the frame-level terms off (loss ablations).
    """
    dtype = _net_dtype(nets.d_x)
    terms = []
    full = [c for c, inc in zip(clips, include_video) if inc]

    if domain == "x":
        if include_frames:
            probs = nets.d_x.forward([_pooled_frames(clips, dtype)])
            terms.append(_log_pos(probs[:, 0:1]).sum())
            fake = _generated_frame_pool(nets.g_y, clips, dtype, detach=True)
            fprobs = nets.d_y.forward([fake])
            terms.append(_log_pos(1.0 - fprobs[:, 0:1]).sum())
        if full:
            terms += _video_real_term(nets.d_x_video, full, 0, dtype)
            terms += _video_fake_term(nets.g_y, nets.d_y_video, full, (0, 1), dtype, detach=True)
    elif domain in ("y", "z"):
        channel = 0 if domain == "y" else 1
        if include_frames:
            probs = nets.d_y.forward([_pooled_frames(clips, dtype)])
            terms.append(_log_pos(probs[:, channel:channel + 1]).sum())
            fake = _generated_frame_pool(nets.g_x, clips, dtype, detach=True)
            fprobs = nets.d_x.forward([fake])
            terms.append(_log_pos(1.0 - fprobs[:, 0:1]).sum())
        if full:
            terms += _video_real_term(nets.d_y_video, full, channel, dtype)
            terms += _video_fake_term(nets.g_x, nets.d_x_video, full, (0,), dtype, detach=True)
    else:
        raise ValueError(f"discriminator_objective: bad domain {domain!r}")

    if include_frames and len(style_images):
        picks = rng.integers(len(style_images), size=sum(c.length for c in clips))
        batch = Tensor(np.stack([np.asarray(style_images[i]) for i in picks]), dtype=dtype)
        probs = nets.d_y.forward([batch])
        terms.append(_log_pos(probs[:, 0:1]).sum())

    if not terms:
        return Tensor(np.zeros((), dtype=np.float64))
    return _sum_scalars(terms)
