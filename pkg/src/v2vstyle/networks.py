"""The eight trainable networks, their target copies, and checkpoint io.

Generators and predictors are sequence autoencoders (3 downsampling blocks,
dense bottleneck, 3 upsampling blocks with skip connections, final 3-filter
ConvLSTM). Discriminators and Q networks share that encoder trunk and add two
more downsampling blocks plus two fully connected layers; only the final
activation differs (sigmoid probabilities vs ReLU value estimates).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import ConvLstmCell, Decoder, Encoder, Module, ModuleList, RpbStack, Seeder
from .data import VideoClip, domain_side
from .tensor import FormatError, Parameter, Tensor


@dataclass(frozen=True)
class ModelPreset:
    """Channel plan shared by every network; "desk" runs on a laptop CPU."""

    name: str
    frame_size: int
    enc_levels: tuple
    embed_dim: int
    dec_levels: tuple
    head_levels: tuple
    fc_dims: tuple
    in_channels: int = 3
    out_channels: int = 3


DESK = ModelPreset(
    name="desk", frame_size=32,
    enc_levels=((8, 8, 8), (8, 8, 8), (4, 4, 4)),
    embed_dim=256,
    dec_levels=((8, 8, 8), (8, 8, 8), (8, 8, 8)),
    head_levels=((4, 4, 4), (4, 4, 4)),
    fc_dims=(64, 16),
)

PAPER = ModelPreset(
    name="paper", frame_size=256,
    enc_levels=((64, 32, 16), (32, 32, 16), (32, 32, 16)),
    embed_dim=4000,
    dec_levels=((32, 32, 16), (32, 32, 16), (32, 32, 32)),
    head_levels=((32, 32, 16), (32, 32, 16)),
    fc_dims=(1000, 200),
)

PRESETS = {"desk": DESK, "paper": PAPER}


def get_preset(name: str) -> ModelPreset:
    if name not in PRESETS:
        raise KeyError(f"unknown model preset {name!r} (have {sorted(PRESETS)})")
    return PRESETS[name]


class Generator(Module):
    """Video-to-video mapping between domains; same T and spatial dims out."""

    def __init__(self, preset: ModelPreset, seeder: Seeder, in_side: str, out_domain: str,
                 dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.in_side = in_side
        self.out_domain = out_domain
        self.enc = Encoder(preset.frame_size, preset.in_channels, preset.enc_levels,
                           preset.embed_dim, seeder, dtype=dtype)
        self.dec = Decoder(preset.frame_size, preset.embed_dim, preset.enc_levels[-1][2],
                           preset.dec_levels, preset.out_channels, seeder, dtype=dtype)

    def forward(self, frames):
        embeds, skips = self.enc.forward(frames)
        return self.dec.forward(embeds, skips)


class Predictor(Generator):
    """Same autoencoder; the last output frame is the next-frame prediction."""

    def predict_frames(self, frames):
        return self.forward(frames)


class ScoreHead(Module):
    """Two downsampling blocks then FC-FC-FC; emits one score vector per step."""

    def __init__(self, preset: ModelPreset, seeder: Seeder, width: int, final: str,
                 dtype=T.DEFAULT_DTYPE):
        super().__init__()
        if final not in ("sigmoid", "relu"):
            raise ValueError(f"unknown head activation {final!r}")
        self.width = width
        self.final = final
        in_ch = preset.enc_levels[-1][2]
        self.stack = RpbStack(in_ch, preset.head_levels, seeder, dtype=dtype)
        side = preset.frame_size // (2 ** (3 + len(preset.head_levels)))
        self.flat_dim = side * side * preset.head_levels[-1][2]
        fc1, fc2 = preset.fc_dims
        self.w1 = Parameter(T.xavier_array((self.flat_dim, fc1), seeder.next(), dtype))
        self.b1 = Parameter(np.zeros(fc1, dtype=dtype))
        self.w2 = Parameter(T.xavier_array((fc1, fc2), seeder.next(), dtype))
        self.b2 = Parameter(np.zeros(fc2, dtype=dtype))
        self.w3 = Parameter(T.xavier_array((fc2, width), seeder.next(), dtype))
        # value heads start above the dead half of the final ReLU
        b3 = np.full(width, 0.5, dtype=dtype) if final == "relu" else np.zeros(width, dtype=dtype)
        self.b3 = Parameter(b3)

    def forward(self, feats):
        _, seq = self.stack.forward(feats)
        outs = []
        n = feats[0].shape[0]
        for f in seq:
            h = T.relu(T.dense(f.reshape(n, self.flat_dim), self.w1, self.b1))
            h = T.relu(T.dense(h, self.w2, self.b2))
            h = T.dense(h, self.w3, self.b3)
            outs.append(T.sigmoid(h) if self.final == "sigmoid" else T.relu(h))
        return outs


class Discriminator(Module):
    """Probability head over frames (T=1) or videos; width 1 (source) or 2 (target)."""

    def __init__(self, preset: ModelPreset, seeder: Seeder, width: int, dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.width = width
        self.trunk = RpbStack(preset.in_channels, preset.enc_levels, seeder, dtype=dtype)
        self.head = ScoreHead(preset, seeder, width, "sigmoid", dtype=dtype)

    def forward_steps(self, frames):
        """Score of every prefix: entry t is the decision after seeing frames[:t+1]."""
        _, seq = self.trunk.forward(frames)
        return self.head.forward(seq)

    def forward(self, frames):
        return self.forward_steps(frames)[-1]


class QNetwork(Module):
    """Value of (state video, candidate next frame); the frame is appended in time."""

    def __init__(self, preset: ModelPreset, seeder: Seeder, dtype=T.DEFAULT_DTYPE):
        super().__init__()
        self.trunk = RpbStack(preset.in_channels, preset.enc_levels, seeder, dtype=dtype)
        self.head = ScoreHead(preset, seeder, 1, "relu", dtype=dtype)

    def forward(self, state_frames, action_frame):
        _, seq = self.trunk.forward(list(state_frames) + [action_frame])
        return self.head.forward(seq)[-1]


POLICY_NAMES = ("G_x", "G_y", "P_x", "P_y")
CRITIC_NAMES = ("Q_x", "Q_y")
DISCRIMINATOR_NAMES = ("D_x", "D_y")


class NetworkSet:
    """All live networks plus target copies of the policy and Q networks."""

    def __init__(self, preset: ModelPreset, seed: int = 0, share_frame_video: bool = True,
                 dtype=T.DEFAULT_DTYPE):
        self.preset = preset
        self.seed = seed
        self.share_frame_video = share_frame_video
        self.dtype = dtype
        seeder = Seeder(seed)
        self.g_y = Generator(preset, seeder, "source", "y", dtype=dtype)
        self.g_x = Generator(preset, seeder, "target", "x", dtype=dtype)
        self.p_x = Predictor(preset, seeder, "source", "x", dtype=dtype)
        self.p_y = Predictor(preset, seeder, "target", "y", dtype=dtype)
        self.d_x = Discriminator(preset, seeder, 1, dtype=dtype)
        self.d_y = Discriminator(preset, seeder, 2, dtype=dtype)
        self.q_x = QNetwork(preset, seeder, dtype=dtype)
        self.q_y = QNetwork(preset, seeder, dtype=dtype)
        if share_frame_video:
            self.d_x_video = self.d_x
            self.d_y_video = self.d_y
        else:
            self.d_x_video = Discriminator(preset, seeder, 1, dtype=dtype)
            self.d_y_video = Discriminator(preset, seeder, 2, dtype=dtype)
        self.targets = {}
        for name in POLICY_NAMES + CRITIC_NAMES:
            copy = self._fresh(name, seeder)
            copy.copy_from(self.live(name))
            self.targets[name] = copy
        self._name_everything()

    def _fresh(self, name, seeder):
        preset, dtype = self.preset, self.dtype
        if name == "G_x":
            return Generator(preset, seeder, "target", "x", dtype=dtype)
        if name == "G_y":
            return Generator(preset, seeder, "source", "y", dtype=dtype)
        if name == "P_x":
            return Predictor(preset, seeder, "source", "x", dtype=dtype)
        if name == "P_y":
            return Predictor(preset, seeder, "target", "y", dtype=dtype)
        if name in ("Q_x", "Q_y"):
            return QNetwork(preset, seeder, dtype=dtype)
        raise KeyError(name)

    def live(self, name: str) -> Module:
        key = name.lower()
        return getattr(self, key)

    def target(self, name: str) -> Module:
        return self.targets[name]

    def _named_modules(self):
        mods = {
            "G_x": self.g_x, "G_y": self.g_y, "P_x": self.p_x, "P_y": self.p_y,
            "D_x": self.d_x, "D_y": self.d_y, "Q_x": self.q_x, "Q_y": self.q_y,
        }
        if not self.share_frame_video:
            mods["D_x_video"] = self.d_x_video
            mods["D_y_video"] = self.d_y_video
        for name, mod in self.targets.items():
            mods[f"target.{name}"] = mod
        return mods

    def _name_everything(self):
        for prefix, mod in self._named_modules().items():
            mod.bind_names(prefix)

    def named_parameters(self):
        for prefix, mod in self._named_modules().items():
            yield from mod.named_parameters(prefix)

    def named_buffers(self):
        for prefix, mod in self._named_modules().items():
            yield from mod.named_buffers(prefix)

    def policy_modules(self):
        return [self.g_x, self.g_y, self.p_x, self.p_y]

    def policy_parameters(self):
        return [p for m in self.policy_modules() for p in m.parameters()]

    def critic_parameters(self):
        return self.q_x.parameters() + self.q_y.parameters()

    def discriminator_parameters(self):
        params = self.d_x.parameters() + self.d_y.parameters()
        if not self.share_frame_video:
            params += self.d_x_video.parameters() + self.d_y_video.parameters()
        return params

    def all_parameters(self):
        return [p for _, p in self.named_parameters()]

    def train_mode(self, flag: bool = True):
        for mod in self._named_modules().values():
            mod.train_mode(flag)
        return self

    def eval_mode(self):
        return self.train_mode(False)

    def target_pairs(self):
        """(live, target) module pairs for soft updates."""
        return [(self.live(n), self.targets[n]) for n in POLICY_NAMES + CRITIC_NAMES]


def build_networks(preset_name: str = "desk", seed: int = 0, share_frame_video: bool = True,
                   dtype=T.DEFAULT_DTYPE) -> NetworkSet:
    return NetworkSet(get_preset(preset_name), seed=seed, share_frame_video=share_frame_video,
                      dtype=dtype)


# ---------------------------------------------------------------------------
# clip-level api
# ---------------------------------------------------------------------------

def clip_frames(clip: VideoClip, dtype=None):
    arr = clip.frames if dtype is None else clip.frames.astype(dtype)
    return [Tensor(arr[t][None]) for t in range(arr.shape[0])]


def translate(g: Generator, clip: VideoClip) -> VideoClip:
    """Map a clip to the generator's output domain (shape and T preserved)."""
    if domain_side(clip.domain) != g.in_side:
        raise ValueError(f"translate: clip domain {clip.domain!r} is not on the "
                         f"{g.in_side!r} side")
    with T.no_grad():
        outs = g.forward(clip_frames(clip, g.enc.w.dtype))
    frames = np.stack([o.data[0] for o in outs]).astype(np.float32)
    return VideoClip(frames, g.out_domain)


def predict_next(p: Predictor, clip: VideoClip) -> np.ndarray:
    """Predicted next frame after the clip (the last decoded frame)."""
    if clip.length < 1:
        raise ValueError("predict_next: empty clip")
    with T.no_grad():
        outs = p.forward(clip_frames(clip, p.enc.w.dtype))
    return outs[-1].data[0].astype(np.float32)


def discriminate(d: Discriminator, clip_or_frame) -> np.ndarray:
    """Probabilities for a frame (treated as a T=1 video) or a full clip."""
    if isinstance(clip_or_frame, VideoClip):
        frames = clip_frames(clip_or_frame)
    else:
        arr = np.asarray(clip_or_frame, dtype=np.float32)
        frames = [Tensor(arr[None])]
    with T.no_grad():
        out = d.forward(frames)
    return out.data[0]


def q_value(q: QNetwork, s: VideoClip, a: np.ndarray, video_length: int) -> float:
    """Scalar value of taking frame ``a`` after state ``s`` (non-negative)."""
    if s.length >= video_length:
        raise ValueError(f"q_value: state already has {s.length} frames, no action can "
                         f"follow a length-{video_length} video")
    with T.no_grad():
        out = q.forward(clip_frames(s), Tensor(np.asarray(a, dtype=np.float32)[None]))
    return float(out.data[0, 0])


# ---------------------------------------------------------------------------
# V2VC checkpoints
# ---------------------------------------------------------------------------

_MAGIC_C = b"\x56\x32\x56\x43"  # "V2VC"


def _checkpoint_entries(nets: NetworkSet, velocities=None, extras=None):
    entries = {}
    for name, p in nets.named_parameters():
        entries[name] = p.data
    for name, b in nets.named_buffers():
        entries[f"buffer.{name}"] = b
    if extras:
        for prefix, mod in extras.items():
            for name, p in mod.named_parameters(prefix):
                entries[name] = p.data
            for name, b in mod.named_buffers(prefix):
                entries[f"buffer.{name}"] = b
    if velocities:
        for opt_name, state in velocities.items():
            for pname, v in state.velocity.items():
                entries[f"velocity.{opt_name}.{pname}"] = v
    return entries


def save_checkpoint(path, nets: NetworkSet, velocities=None, extras=None) -> None:
    """Write every parameter, norm buffer, and optimizer velocity to one file."""
    entries = _checkpoint_entries(nets, velocities, extras)
    blob = [_MAGIC_C, struct.pack("<BxxxI", 1, len(entries))]
    for name in sorted(entries):
        encoded = name.encode("utf-8")
        blob.append(struct.pack("<H", len(encoded)))
        blob.append(encoded)
        blob.append(T.tensor_to_bytes(entries[name]))
    with open(path, "wb") as f:
        f.write(b"".join(blob))


def read_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 12:
        raise FormatError("V2VC: truncated header")
    if buf[:4] != _MAGIC_C:
        raise FormatError(f"V2VC: bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<BxxxI", buf, 4)
    if version != 1:
        raise FormatError(f"V2VC: unsupported version {version}")
    pos = 12
    entries = {}
    for _ in range(count):
        if len(buf) - pos < 2:
            raise FormatError("V2VC: truncated entry header")
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if len(buf) - pos < name_len:
            raise FormatError("V2VC: truncated entry name")
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        arr, pos = T.tensor_from_bytes(buf, pos)
        entries[name] = arr
    if pos != len(buf):
        raise FormatError(f"V2VC: {len(buf) - pos} trailing bytes")
    return entries


def load_checkpoint(path, nets: NetworkSet, velocities=None, extras=None) -> dict:
    """Apply a checkpoint onto an existing set; returns leftover velocity arrays.

    Unknown entry names, missing entries, and shape mismatches are distinct
    errors; all shape mismatches are reported together.
    """
    entries = read_checkpoint(path)
    expected_params = dict(nets.named_parameters())
    buffer_setters = {}
    for prefix, mod in nets._named_modules().items():
        for name, _ in mod.named_buffers(prefix):
            buffer_setters[f"buffer.{name}"] = (mod, name[len(prefix) + 1:])
    if extras:
        for prefix, mod in extras.items():
            expected_params.update(dict(mod.named_parameters(prefix)))
            for name, _ in mod.named_buffers(prefix):
                buffer_setters[f"buffer.{name}"] = (mod, name[len(prefix) + 1:])

    mismatches = []
    for name, p in expected_params.items():
        if name not in entries:
            raise FormatError(f"V2VC: missing parameter {name!r}")
        if entries[name].shape != tuple(p.shape):
            mismatches.append(f"{name}: file {entries[name].shape} vs model {tuple(p.shape)}")
    if mismatches:
        raise FormatError("V2VC: shape mismatches: " + "; ".join(mismatches))

    leftover_velocity = {}
    for name, arr in entries.items():
        if name in expected_params:
            p = expected_params[name]
            p.data[...] = arr.astype(p.dtype)
        elif name in buffer_setters:
            mod, local = buffer_setters[name]
            mod.set_buffer(local, arr)
        elif name.startswith("velocity."):
            rest = name[len("velocity."):]
            opt_name, pname = rest.split(".", 1)
            if velocities is not None and opt_name in velocities:
                velocities[opt_name].velocity[pname] = arr.copy()
            else:
                leftover_velocity[rest] = arr
        else:
            raise FormatError(f"V2VC: unknown parameter name {name!r}")
    return leftover_velocity
