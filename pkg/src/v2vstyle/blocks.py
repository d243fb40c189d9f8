"""ConvLSTM cell and the residual / pooling / upsampling blocks.

Sequences are represented as lists of frame tensors, each of shape
(N, H, W, C); recurrences run strictly forward in time, so every block is
temporally causal (output at step t never reads inputs after t). The only
train-mode exception is sequence-wise normalization, whose batch statistics
pool over all timesteps.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Seeder:
    """Deterministic per-parameter seed stream derived from one base seed."""

    def __init__(self, base: int):
        self.base = int(base)
        self._count = 0

    def next(self) -> int:
        self._count += 1
        return int(np.random.SeedSequence([self.base, self._count]).generate_state(1)[0])


class Module:
    """Minimal parameter container with recursive walking and train/eval mode."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffer_names", [])
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        params = self.__dict__.get("_params")
        if params is not None:
            if isinstance(value, Parameter):
                params[name] = value
                self.__dict__.get("_modules", {}).pop(name, None)
            elif isinstance(value, Module):
                self.__dict__["_modules"][name] = value
                params.pop(name, None)
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        if name not in self._buffer_names:
            self._buffer_names.append(name)
        object.__setattr__(self, name, np.asarray(array))

    def named_parameters(self, prefix: str = ""):
        """Pure walk; does not touch Parameter.name (see bind_names)."""
        for key, p in self._params.items():
            yield (f"{prefix}.{key}" if prefix else key), p
        for key, mod in self._modules.items():
            sub = f"{prefix}.{key}" if prefix else key
            yield from mod.named_parameters(sub)

    def bind_names(self, prefix: str = ""):
        """Assign stable dotted path names to every parameter."""
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for key in self._buffer_names:
            yield (f"{prefix}.{key}" if prefix else key), getattr(self, key)
        for key, mod in self._modules.items():
            sub = f"{prefix}.{key}" if prefix else key
            yield from mod.named_buffers(sub)

    def set_buffer(self, name: str, array):
        """Set a (possibly nested) buffer by its dotted name."""
        mod = self
        parts = name.split(".")
        for part in parts[:-1]:
            mod = mod._modules[part]
        if parts[-1] not in mod._buffer_names:
            raise KeyError(f"unknown buffer {name!r}")
        object.__setattr__(mod, parts[-1], np.asarray(array))

    def train_mode(self, flag: bool = True):
        object.__setattr__(self, "training", flag)
        for mod in self._modules.values():
            mod.train_mode(flag)
        return self

    def eval_mode(self):
        return self.train_mode(False)

    def state_arrays(self):
        """name -> array copy for params and buffers (used for snapshots)."""
        out = {f"param:{n}": p.data.copy() for n, p in self.named_parameters()}
        out.update({f"buffer:{n}": b.copy() for n, b in self.named_buffers()})
        return out

    def load_state_arrays(self, state):
        for n, p in self.named_parameters():
            p.data[...] = state[f"param:{n}"]
        for n, _ in self.named_buffers():
            self.set_buffer(n, state[f"buffer:{n}"].copy())

    def copy_from(self, other: "Module"):
        """Copy parameter and buffer values from a same-architecture module."""
        mine = list(self.named_parameters())
        theirs = list(other.named_parameters())
        for (_, p), (_, q) in zip(mine, theirs):
            if p.shape != q.shape:
                raise T.ShapeError(f"copy_from: shape {q.shape} vs {p.shape} for {p.name!r}")
            p.data[...] = q.data
        for (n, _), (_, b) in zip(self.named_buffers(), other.named_buffers()):
            self.set_buffer(n, b.copy())

    def shape_manifest(self):
        return [(n, tuple(p.shape)) for n, p in self.named_parameters()]


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._items = []
        for m in mods:
            self.append(m)

    def append(self, mod: Module):
        self._modules[str(len(self._items))] = mod
        self._items.append(mod)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


GATES = ("i", "f", "o", "g")


class ConvLstmCell(Module):
    """Four-gate ConvLSTM: i = sig, f = sig, o = sig, g = tanh, all 3x3 convs.

    c_t = f*c + i*g; h_t = o*tanh(c_t). Forget-gate bias starts at 1.
    """

    def __init__(self, in_channels: int, hidden_channels: int, seeder: Seeder,
                 kernel: int = 3, dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.dtype = dtype
        k, ci, ch = kernel, in_channels, hidden_channels
        for gate in GATES:
            setattr(self, f"W_x{gate}", Parameter(T.xavier_array((k, k, ci, ch), seeder.next(), dtype)))
            setattr(self, f"W_h{gate}", Parameter(T.xavier_array((k, k, ch, ch), seeder.next(), dtype)))
            bias = np.ones(ch, dtype=dtype) if gate == "f" else np.zeros(ch, dtype=dtype)
            setattr(self, f"b_{gate}", Parameter(bias))

    def _fused_weights(self):
        wx = T.concat([getattr(self, f"W_x{g}") for g in GATES], axis=3)
        wh = T.concat([getattr(self, f"W_h{g}") for g in GATES], axis=3)
        b = T.concat([getattr(self, f"b_{g}") for g in GATES], axis=0)
        return wx, wh, b

    def init_state(self, n: int, h: int, w: int):
        zeros = np.zeros((n, h, w, self.hidden_channels), dtype=self.dtype)
        return Tensor(zeros), Tensor(zeros.copy())

    def _apply(self, x_t, h_prev, c_prev, wx, wh, b):
        gates = T.conv2d(x_t, wx) + T.conv2d(h_prev, wh) + b
        ch = self.hidden_channels
        i = T.sigmoid(gates[..., 0 * ch:1 * ch])
        f = T.sigmoid(gates[..., 1 * ch:2 * ch])
        o = T.sigmoid(gates[..., 2 * ch:3 * ch])
        g = T.tanh(gates[..., 3 * ch:4 * ch])
        c_t = f * c_prev + i * g
        h_t = o * T.tanh(c_t)
        return h_t, c_t

    def step(self, x_t: Tensor, h_prev: Tensor, c_prev: Tensor):
        wx, wh, b = self._fused_weights()
        return self._apply(x_t, h_prev, c_prev, wx, wh, b)

    def forward(self, frames):
        wx, wh, b = self._fused_weights()
        n, h, w, _ = frames[0].shape
        state_h, state_c = self.init_state(n, h, w)
        outs = []
        for x_t in frames:
            state_h, state_c = self._apply(x_t, state_h, state_c, wx, wh, b)
            outs.append(state_h)
        return outs


def convlstm_step(cell: ConvLstmCell, x_t, h_prev, c_prev):
    """One recurrence step; zero h/c at t=0 via cell.init_state."""
    return cell.step(x_t, h_prev, c_prev)


class Conv1x1(Module):
    """Pointwise projection used for residual paths with mismatched channels."""

    def __init__(self, in_channels, out_channels, seeder, dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.w = Parameter(T.xavier_array((1, 1, in_channels, out_channels), seeder.next(), dtype))
        self.b = Parameter(np.zeros(out_channels, dtype=dtype))

    def forward(self, x):
        return T.conv2d(x, self.w, self.b)


class SeqNorm(Module):
    """Per-channel normalization over batch x time x space with running stats."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, frames):
        if frames[0].shape[-1] != self.gamma.shape[0]:
            raise T.ShapeError(f"seq_norm: {frames[0].shape[-1]} channels, "
                               f"scale has {self.gamma.shape[0]}")
        x = T.concat(frames, axis=0) if len(frames) > 1 else frames[0]
        if self.training:
            mean = x.mean(axis=(0, 1, 2), keepdims=True)
            var = T.square(x - mean).mean(axis=(0, 1, 2), keepdims=True)
            m = self.momentum
            self.register_buffer(
                "running_mean", (1 - m) * self.running_mean + m * mean.data.reshape(-1))
            self.register_buffer(
                "running_var", (1 - m) * self.running_var + m * var.data.reshape(-1))
        else:
            mean = Tensor(self.running_mean.reshape(1, 1, 1, -1).astype(x.dtype))
            var = Tensor(self.running_var.reshape(1, 1, 1, -1).astype(x.dtype))
        norm = (x - mean) / T.power(var + self.eps, 0.5)
        out = norm * self.gamma + self.beta
        n = frames[0].shape[0]
        if len(frames) == 1:
            return [out]
        return [out[t * n:(t + 1) * n] for t in range(len(frames))]


class BlockR(Module):
    """Two stacked ConvLSTM sublayers with a residual skip and LeakyReLU.

    1x1 projections bridge channel mismatches on either path; the activation
    sits after the residual add.
    """

    def __init__(self, in_channels, hidden1, hidden2, out_channels, seeder,
                 leak: float = 0.2, dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.leak = leak
        self.out_channels = out_channels
        self.cl1 = ConvLstmCell(in_channels, hidden1, seeder, dtype=dtype)
        self.cl2 = ConvLstmCell(hidden1, hidden2, seeder, dtype=dtype)
        self.main_proj = Conv1x1(hidden2, out_channels, seeder, dtype) if hidden2 != out_channels else None
        self.skip_proj = Conv1x1(in_channels, out_channels, seeder, dtype) if in_channels != out_channels else None

    def forward(self, frames):
        seq = self.cl2.forward(self.cl1.forward(frames))
        outs = []
        for x_t, m_t in zip(frames, seq):
            main = self.main_proj.forward(m_t) if self.main_proj else m_t
            skip = self.skip_proj.forward(x_t) if self.skip_proj else x_t
            outs.append(T.leaky_relu(main + skip, alpha=self.leak))
        return outs


class BlockRPB(Module):
    """Residual block, then 2x2 average pooling, then sequence norm (halves H, W)."""

    def __init__(self, in_channels, hidden1, hidden2, out_channels, seeder,
                 dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.r = BlockR(in_channels, hidden1, hidden2, out_channels, seeder, dtype=dtype)
        self.norm = SeqNorm(out_channels, dtype=dtype)

    def forward(self, frames):
        seq = [T.avgpool2x2(f) for f in self.r.forward(frames)]
        return self.norm.forward(seq)


class BlockURB(Module):
    """2x nearest upsampling, then residual block, then sequence norm (doubles H, W)."""

    def __init__(self, in_channels, hidden1, hidden2, out_channels, seeder,
                 dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.r = BlockR(in_channels, hidden1, hidden2, out_channels, seeder, dtype=dtype)
        self.norm = SeqNorm(out_channels, dtype=dtype)

    def forward(self, frames):
        seq = self.r.forward([T.upsample2x_nearest(f) for f in frames])
        return self.norm.forward(seq)


def block_forward(block, frames):
    """Run a block over a frame sequence (time length is preserved)."""
    return block.forward(frames)


class RpbStack(Module):
    """Stacked downsampling blocks; returns per-level skip sequences plus the output."""

    def __init__(self, in_channels, levels, seeder, dtype=T.DEFAULT_DTYPE):
        super().__init__()
        mods = []
        ci = in_channels
        for h1, h2, out in levels:
            mods.append(BlockRPB(ci, h1, h2, out, seeder, dtype=dtype))
            ci = out
        self.levels = ModuleList(mods)
        self.out_channels = ci

    def forward(self, frames):
        skips = []
        seq = frames
        for block in self.levels:
            seq = block.forward(seq)
            skips.append(seq)
        return skips, seq


class Encoder(Module):
    """Three downsampling blocks plus a dense head mapping each step to an embedding."""

    def __init__(self, frame_size, in_channels, levels, embed_dim, seeder,
                 dtype=T.DEFAULT_DTYPE):
        super().__init__()
        if frame_size % 8:
            raise T.ShapeError(f"encoder: frame size {frame_size} not divisible by 8")
        self.frame_size = frame_size
        self.embed_dim = embed_dim
        self.stack = RpbStack(in_channels, levels, seeder, dtype=dtype)
        side = frame_size // (2 ** len(levels))
        self.flat_dim = side * side * levels[-1][2]
        self.w = Parameter(T.xavier_array((self.flat_dim, embed_dim), seeder.next(), dtype))
        self.b = Parameter(np.zeros(embed_dim, dtype=dtype))

    def forward(self, frames):
        if frames[0].shape[1] % 8 or frames[0].shape[2] % 8:
            raise T.ShapeError(f"encoder: spatial dims {frames[0].shape[1:3]} not divisible by 8")
        skips, seq = self.stack.forward(frames)
        n = frames[0].shape[0]
        embeds = [T.dense(f.reshape(n, self.flat_dim), self.w, self.b) for f in seq]
        return embeds, skips


class Decoder(Module):
    """Dense stem, three upsampling blocks with encoder skips, final 3-filter ConvLSTM.

    Output frames are raw ConvLSTM responses (no extra squashing); consumers
    decide how to map them to pixels.
    """

    def __init__(self, frame_size, embed_dim, stem_channels, levels, out_channels,
                 seeder, dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.frame_size = frame_size
        side = frame_size // 8
        self.side = side
        self.stem_channels = stem_channels
        self.w = Parameter(T.xavier_array((embed_dim, side * side * stem_channels), seeder.next(), dtype))
        self.b = Parameter(np.zeros(side * side * stem_channels, dtype=dtype))
        mods = []
        ci = stem_channels
        for h1, h2, out in levels:
            mods.append(BlockURB(ci, h1, h2, out, seeder, dtype=dtype))
            ci = out
        self.levels = ModuleList(mods)
        self.final = ConvLstmCell(ci, out_channels, seeder, dtype=dtype)

    def forward(self, embeds, skips):
        if skips is None or len(skips) != len(self.levels):
            got = "none" if skips is None else len(skips)
            raise ValueError(f"decoder: expected {len(self.levels)} skip sequences, got {got}")
        n = embeds[0].shape[0]
        seq = [T.dense(e, self.w, self.b).reshape((n, self.side, self.side, self.stem_channels))
               for e in embeds]
        # skips arrive encoder-ordered (coarse last); consume deepest first
        for level, skip in zip(self.levels, reversed(skips)):
            seq = [s + k for s, k in zip(seq, skip)]
            seq = level.forward(seq)
        return self.final.forward(seq)
