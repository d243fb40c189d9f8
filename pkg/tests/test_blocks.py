"""ConvLSTM cell, residual blocks, sequence norm, encoder/decoder."""

import math

import numpy as np
import pytest

from v2vstyle import blocks as B
from v2vstyle import tensor as T
from helpers import check_param_grads

F64 = np.float64


def frames_from(arr, rg=False, dtype=np.float32):
    """(N, T, H, W, C) array -> list of T frame tensors."""
    arr = np.asarray(arr, dtype=dtype)
    return [T.Tensor(arr[:, t], requires_grad=rg, dtype=dtype) for t in range(arr.shape[1])]


def zero_all(mod):
    for _, p in mod.named_parameters():
        p.data[...] = 0.0


# ---------------------------------------------------------------------------
# ConvLSTM cell
# ---------------------------------------------------------------------------

def test_convlstm_zero_weights_zero_state():
    cell = B.ConvLstmCell(2, 3, B.Seeder(0))
    zero_all(cell)
    x = T.Tensor(np.random.default_rng(0).normal(size=(1, 4, 4, 2)).astype(np.float32))
    h0, c0 = cell.init_state(1, 4, 4)
    h, c = cell.step(x, h0, c0)
    # gates i=f=o=0.5 and g=0, so both states stay exactly zero
    assert np.all(h.data == 0) and np.all(c.data == 0)


def test_convlstm_gate_saturation_carries_cell_state():
    cell = B.ConvLstmCell(1, 1, B.Seeder(0))
    zero_all(cell)
    cell.b_f.data[...] = 20.0   # forget gate ~ 1
    cell.b_i.data[...] = -20.0  # input gate ~ 0
    c_prev = T.Tensor(np.full((1, 4, 4, 1), 0.7, dtype=np.float32))
    h_prev = T.Tensor(np.zeros((1, 4, 4, 1), dtype=np.float32))
    x = T.Tensor(np.random.default_rng(1).normal(size=(1, 4, 4, 1)).astype(np.float32))
    _, c = cell.step(x, h_prev, c_prev)
    np.testing.assert_allclose(c.data, 0.7, atol=1e-6)


def scalar_lstm_oracle(xs, wx, wh, b):
    """Plain scalar LSTM recurrence with per-gate weights dicts."""
    h = c = 0.0
    hs = []
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    for x in xs:
        i = sig(wx["i"] * x + wh["i"] * h + b["i"])
        f = sig(wx["f"] * x + wh["f"] * h + b["f"])
        o = sig(wx["o"] * x + wh["o"] * h + b["o"])
        g = math.tanh(wx["g"] * x + wh["g"] * h + b["g"])
        c = f * c + i * g
        h = o * math.tanh(c)
        hs.append(h)
    return hs


def test_convlstm_1x1_grid_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    cell = B.ConvLstmCell(1, 1, B.Seeder(7), dtype=F64)
    wx, wh, b = {}, {}, {}
    for gate in B.GATES:
        # only the kernel center can touch a 1x1 grid; zero the rest
        for attr, store in ((f"W_x{gate}", wx), (f"W_h{gate}", wh)):
            w = getattr(cell, attr)
            w.data[...] = 0.0
            w.data[1, 1, 0, 0] = store.setdefault(gate, float(rng.normal()))
        bias = getattr(cell, f"b_{gate}")
        bias.data[...] = b.setdefault(gate, float(rng.normal()))
    xs = rng.normal(size=5)
    frames = [T.Tensor(np.full((1, 1, 1, 1), x), dtype=F64) for x in xs]
    got = [h.item() for h in cell.forward(frames)]
    want = scalar_lstm_oracle(xs, wx, wh, b)
    assert np.max(np.abs(np.array(got) - np.array(want))) < 1e-6


# ---------------------------------------------------------------------------
# blocks: shape algebra
# ---------------------------------------------------------------------------

def test_rpb_halves_and_urb_doubles():
    seeder = B.Seeder(1)
    rpb = B.BlockRPB(3, 4, 4, 4, seeder)
    frames = frames_from(np.random.default_rng(0).normal(size=(2, 3, 16, 16, 3)))
    out = B.block_forward(rpb, frames)
    assert len(out) == 3 and out[0].shape == (2, 8, 8, 4)

    urb = B.BlockURB(4, 4, 4, 6, seeder)
    up = B.block_forward(urb, out)
    assert len(up) == 3 and up[0].shape == (2, 16, 16, 6)


def test_rpb_urb_roundtrip_restores_shape():
    seeder = B.Seeder(2)
    rpb = B.BlockRPB(5, 4, 4, 7, seeder)
    urb = B.BlockURB(7, 4, 4, 5, seeder)
    frames = frames_from(np.random.default_rng(1).normal(size=(1, 2, 8, 8, 5)))
    out = urb.forward(rpb.forward(frames))
    assert out[0].shape == frames[0].shape


def test_rpb_rejects_odd_input():
    rpb = B.BlockRPB(1, 2, 2, 2, B.Seeder(3))
    frames = frames_from(np.zeros((1, 2, 5, 5, 1)))
    with pytest.raises(T.ShapeError):
        rpb.forward(frames)


def test_block_r_residual_identity_when_zero_weights():
    # zero weights and equal channels: main path is 0, skip is identity,
    # so the block reduces to LeakyReLU(x)
    r = B.BlockR(2, 2, 2, 2, B.Seeder(4))
    zero_all(r)
    x = np.random.default_rng(2).normal(size=(1, 2, 4, 4, 2)).astype(np.float32)
    out = r.forward(frames_from(x))
    want = np.where(x[:, 1] > 0, x[:, 1], 0.2 * x[:, 1])
    np.testing.assert_allclose(out[1].data, want, atol=1e-6)


# ---------------------------------------------------------------------------
# sequence norm
# ---------------------------------------------------------------------------

def test_seqnorm_constant_input_zeros():
    norm = B.SeqNorm(3)
    frames = frames_from(np.full((2, 4, 4, 4, 3), 2.5))
    out = norm.forward(frames)
    assert np.max(np.abs(np.concatenate([f.data for f in out]))) < 1e-3


def test_seqnorm_two_values_pm_one():
    norm = B.SeqNorm(1, eps=1e-12)
    arr = np.zeros((1, 2, 1, 2, 1))
    arr[0, 0] = [[1.0], [3.0]]
    arr[0, 1] = [[1.0], [3.0]]
    out = norm.forward(frames_from(arr, dtype=F64))
    vals = np.concatenate([f.data for f in out]).reshape(-1)
    np.testing.assert_allclose(sorted(vals), [-1, -1, 1, 1], atol=1e-5)


def test_seqnorm_moment_oracle():
    rng = np.random.default_rng(4)
    norm = B.SeqNorm(5, dtype=F64)
    frames = frames_from(rng.normal(2.0, 3.0, size=(3, 4, 6, 6, 5)), dtype=F64)
    out = norm.forward(frames)
    x = np.concatenate([f.data for f in out], axis=0)
    mean = x.mean(axis=(0, 1, 2))
    var = x.var(axis=(0, 1, 2))
    assert np.max(np.abs(mean)) < 1e-6
    assert np.max(np.abs(var - 1)) < 1e-4


def test_seqnorm_infer_uses_running_stats():
    norm = B.SeqNorm(2)
    rng = np.random.default_rng(5)
    for _ in range(20):
        norm.forward(frames_from(rng.normal(1.0, 2.0, size=(4, 2, 4, 4, 2))))
    norm.eval_mode()
    frames = frames_from(np.full((1, 1, 4, 4, 2), 9.0))
    out = norm.forward(frames)[0].data
    # running stats near (1, 4): output should be far from zero, unlike train mode
    assert np.all(out > 2.0)


def test_seqnorm_channel_mismatch():
    norm = B.SeqNorm(3)
    with pytest.raises(T.ShapeError, match="seq_norm"):
        norm.forward(frames_from(np.zeros((1, 1, 4, 4, 2))))


# ---------------------------------------------------------------------------
# encoder / decoder
# ---------------------------------------------------------------------------

DESK_LEVELS = [(8, 8, 8), (8, 8, 8), (4, 4, 4)]


def small_encoder(dtype=np.float32, seed=11):
    return B.Encoder(32, 3, DESK_LEVELS, 256, B.Seeder(seed), dtype=dtype)


def small_decoder(dtype=np.float32, seed=12):
    return B.Decoder(32, 256, 4, [(8, 8, 8), (8, 8, 8), (8, 8, 8)], 3, B.Seeder(seed), dtype=dtype)


def test_encoder_shapes_desk_preset():
    enc = small_encoder()
    frames = frames_from(np.random.default_rng(6).normal(size=(2, 6, 32, 32, 3)))
    embeds, skips = enc.forward(frames)
    assert len(embeds) == 6 and embeds[0].shape == (2, 256)
    assert [s[0].shape[1] for s in skips] == [16, 8, 4]
    assert [s[0].shape[3] for s in skips] == [8, 8, 4]


def test_encoder_rejects_indivisible_dims():
    enc = B.Encoder(32, 3, DESK_LEVELS, 16, B.Seeder(0))
    frames = frames_from(np.zeros((1, 1, 20, 20, 3)))
    with pytest.raises(T.ShapeError, match="divisible"):
        enc.forward(frames)


def test_encoder_causality_prefix_skips():
    enc = small_encoder()
    enc.eval_mode()  # running-stat norm keeps per-step outputs strictly causal
    rng = np.random.default_rng(7)
    a = rng.normal(size=(1, 4, 32, 32, 3)).astype(np.float32)
    b = a.copy()
    b[:, 3] += rng.normal(size=(1, 32, 32, 3))  # differ only at the last step
    _, skips_a = enc.forward(frames_from(a))
    _, skips_b = enc.forward(frames_from(b))
    for sa, sb in zip(skips_a, skips_b):
        for t in range(3):
            np.testing.assert_array_equal(sa[t].data, sb[t].data)
        assert not np.array_equal(sa[3].data, sb[3].data)


def test_decoder_output_shape_and_time():
    enc, dec = small_encoder(), small_decoder()
    frames = frames_from(np.random.default_rng(8).normal(size=(2, 5, 32, 32, 3)))
    embeds, skips = enc.forward(frames)
    out = dec.forward(embeds, skips)
    assert len(out) == 5 and out[0].shape == (2, 32, 32, 3)


def test_decoder_zero_everything_zero_output():
    enc, dec = small_encoder(), small_decoder()
    zero_all(dec)
    frames = frames_from(np.zeros((1, 2, 32, 32, 3)))
    embeds, skips = enc.forward(frames)
    zero_embeds = [T.Tensor(np.zeros_like(e.data)) for e in embeds]
    zero_skips = [[T.Tensor(np.zeros_like(f.data)) for f in s] for s in skips]
    out = dec.forward(zero_embeds, zero_skips)
    assert all(np.all(f.data == 0) for f in out)


def test_decoder_missing_skips_fails():
    dec = small_decoder()
    embeds = [T.Tensor(np.zeros((1, 256)))]
    with pytest.raises(ValueError, match="skip"):
        dec.forward(embeds, None)
    with pytest.raises(ValueError, match="skip"):
        dec.forward(embeds, [[T.Tensor(np.zeros((1, 4, 4, 4)))]])


# ---------------------------------------------------------------------------
# gradients through blocks and the full autoencoder (f64, tiny scale)
# ---------------------------------------------------------------------------

TINY = dict(dtype=F64)


def test_convlstm_step_gradients():
    cell = B.ConvLstmCell(1, 1, B.Seeder(21), dtype=F64)
    rng = np.random.default_rng(9)
    x = rng.normal(size=(1, 3, 3, 1))

    def build():
        frames = [T.Tensor(x, dtype=F64)] * 2
        outs = cell.forward(frames)
        return sum((T.square(o).sum() for o in outs[1:]), T.square(outs[0]).sum())

    check_param_grads(build, cell.parameters(), tol=1e-5)


@pytest.mark.parametrize("block_cls", [B.BlockR, B.BlockRPB, B.BlockURB],
                         ids=["R", "RPB", "URB"])
def test_block_gradients(block_cls):
    block = block_cls(2, 2, 2, 3, B.Seeder(22), **TINY)
    rng = np.random.default_rng(10)
    x = rng.normal(size=(1, 2, 4, 4, 2))

    def build():
        out = block.forward(frames_from(x, dtype=F64))
        return sum((T.square(o).sum() for o in out[1:]), T.square(out[0]).sum())

    check_param_grads(build, block.parameters(), tol=1e-5, max_coords=12)


def test_seqnorm_gradients():
    norm = B.SeqNorm(2, dtype=F64)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 2, 3, 3, 2))

    def build():
        out = norm.forward(frames_from(x, dtype=F64))
        return sum((T.square(o).sum() for o in out[1:]), T.square(out[0]).sum())

    check_param_grads(build, norm.parameters(), tol=1e-5)


def test_encode_decode_gradient_fd():
    seeder = B.Seeder(23)
    levels = [(1, 1, 1), (1, 1, 1), (1, 1, 1)]
    enc = B.Encoder(16, 1, levels, 4, seeder, dtype=F64)
    dec = B.Decoder(16, 4, 1, levels, 1, seeder, dtype=F64)
    rng = np.random.default_rng(12)
    x = rng.normal(size=(1, 2, 16, 16, 1))
    target = rng.normal(size=(1, 16, 16, 1))

    def build():
        embeds, skips = enc.forward(frames_from(x, dtype=F64))
        out = dec.forward(embeds, skips)
        return T.square(out[-1] - T.Tensor(target, dtype=F64)).sum()

    params = enc.parameters() + dec.parameters()
    check_param_grads(build, params, tol=1e-4, max_coords=6, seed=3)


def test_module_names_are_unique_and_stable():
    enc = small_encoder()
    names = [n for n, _ in enc.named_parameters()]
    assert len(names) == len(set(names))
    assert names == [n for n, _ in enc.named_parameters()]
    assert any(".cl1.W_xi" in n for n in names)
    enc.bind_names("G_y.enc")
    bound = [p.name for _, p in enc.named_parameters()]
    assert all(b.startswith("G_y.enc.") for b in bound)
