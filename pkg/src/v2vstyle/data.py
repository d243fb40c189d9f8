"""Synthetic video datasets, preprocessing, splits, and on-disk frame io.

Four domain roles flow through training: "x" (source videos), "y" (target
videos), "z" (target-style videos), "zbar" (target-style images, stored as
length-1 clips). Frames are float32 in [0, 1] on a 1/255 grid so PNG
round-trips are exact; standardization happens against train-split channel
statistics that are persisted for de-standardization at output time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T

ROLES = ("x", "y", "z", "zbar")
ROLE_DIRS = {"x": "X", "y": "Y", "z": "Z", "zbar": "Zbar"}
_DIR_ROLES = {v: k for k, v in ROLE_DIRS.items()}

SOURCE_DOMAINS = ("x",)
TARGET_DOMAINS = ("y", "z", "zbar")


class DataError(ValueError):
    """Dataset generation or loading failure."""


def domain_side(domain: str) -> str:
    if domain in SOURCE_DOMAINS:
        return "source"
    if domain in TARGET_DOMAINS:
        return "target"
    raise DataError(f"unknown domain tag {domain!r}")


@dataclass
class VideoClip:
    """Ordered frame sequence (T, H, W, C) with a domain tag."""

    frames: np.ndarray
    domain: str

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4:
            raise DataError(f"clip frames must be (T, H, W, C), got {self.frames.shape}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self):
        return self.frames.shape[1:]

    def prefix(self, t: int) -> "VideoClip":
        return VideoClip(self.frames[:t], self.domain)


@dataclass
class DomainSet:
    """All clips of one role; zbar entries are single-frame clips."""

    role: str
    clips: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.clips)

    def all_frames(self) -> np.ndarray:
        return np.concatenate([c.frames for c in self.clips], axis=0)


@dataclass
class SynthSpec:
    """Parameters of the synthetic tasks; generation is pure in (spec, seed)."""

    task: str = "rects_to_circles"
    frame_size: int = 32
    video_length: int = 6
    frame_budget: dict = field(default_factory=lambda: {"x": 600, "y": 100, "z": 100, "zbar": 100})
    min_size_frac: float = 0.15
    max_size_frac: float = 0.35
    max_speed_frac: float = 0.12
    seed: int = 0

    def __post_init__(self):
        if self.frame_size % 8:
            raise DataError(f"frame_size {self.frame_size} not divisible by 8")
        if self.task not in ("rects_to_circles", "color_switch"):
            raise DataError(f"unknown task {self.task!r}")


SHAPE_PALETTE = [
    (230, 30, 30), (30, 200, 30), (40, 90, 230), (230, 220, 40),
    (200, 40, 200), (40, 210, 210), (250, 150, 40), (240, 240, 240),
]
BG_PALETTE_Y = [(40, 40, 170), (170, 40, 40), (40, 150, 40), (150, 150, 40)]
SWITCH_BLUE = (26, 26, 230)
SWITCH_RED = (230, 26, 26)
# bright, green-heavy shapes keep the mask separable from blue/red/black grounds
BRIGHT_PALETTE = [(230, 230, 40), (60, 230, 60), (240, 240, 240), (40, 230, 180)]


def _clip_rng(seed: int, role: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, ROLES.index(role), index]))


def _wrapped_rect_mask(fs, cy, cx, h, w):
    rows = (np.arange(h) + int(round(cy))) % fs
    cols = (np.arange(w) + int(round(cx))) % fs
    return np.ix_(rows, cols)


def _wrapped_circle_mask(fs, cy, cx, r):
    ii, jj = np.mgrid[0:fs, 0:fs]
    dy = (ii - cy + fs / 2) % fs - fs / 2
    dx = (jj - cx + fs / 2) % fs - fs / 2
    return dy * dy + dx * dx <= r * r


def _motion(rng, spec):
    # integer positions and per-clip constant integer velocity: wrapped shape
    # masks translate on the lattice, so pixel counts stay exactly constant
    fs = spec.frame_size
    pos = rng.integers(0, fs, size=2).astype(np.float64)
    top = max(2, int(round(spec.max_speed_frac * fs)) + 1)
    speed = rng.integers(1, top, size=2).astype(np.float64)
    vel = speed * rng.choice([-1.0, 1.0], size=2)
    return pos, vel


def _render_clip(spec, rng, length, shape, shape_color, background):
    """background: per-frame (r, g, b) callable(t) or constant tuple."""
    fs = spec.frame_size
    size = rng.uniform(spec.min_size_frac * fs, spec.max_size_frac * fs)
    rect_h = max(2, int(round(size)))
    rect_w = max(2, int(round(size * rng.uniform(0.6, 1.4))))
    pos, vel = _motion(rng, spec)
    frames = np.zeros((length, fs, fs, 3), dtype=np.uint8)
    for t in range(length):
        bg = background(t) if callable(background) else background
        frames[t, :, :] = bg
        cy, cx = pos + t * vel
        if shape == "rect":
            frames[t][_wrapped_rect_mask(fs, cy % fs, cx % fs, rect_h, rect_w)] = shape_color
        else:
            mask = _wrapped_circle_mask(fs, cy % fs, cx % fs, size / 2)
            frames[t][mask] = shape_color
    return frames.astype(np.float32) / 255.0


def _clip_count(spec, role):
    if role == "zbar":
        return spec.frame_budget["zbar"]
    return spec.frame_budget[role] // spec.video_length


def gen_artificial(spec: SynthSpec) -> dict:
    """Moving rectangles (source) vs circles on varied grounds (target roles)."""
    out = {}
    tt = spec.video_length

    clips = []
    for i in range(_clip_count(spec, "x")):
        rng = _clip_rng(spec.seed, "x", i)
        color = SHAPE_PALETTE[rng.integers(len(SHAPE_PALETTE))]
        clips.append(VideoClip(_render_clip(spec, rng, tt, "rect", color, (0, 0, 0)), "x"))
    out["x"] = DomainSet("x", clips, {"task": spec.task, "seed": spec.seed})

    clips = []
    for i in range(_clip_count(spec, "y")):
        rng = _clip_rng(spec.seed, "y", i)
        color = SHAPE_PALETTE[rng.integers(len(SHAPE_PALETTE))]
        offset = int(rng.integers(4))
        bg = lambda t, o=offset: BG_PALETTE_Y[(t + o) % 4]
        clips.append(VideoClip(_render_clip(spec, rng, tt, "circle", color, bg), "y"))
    out["y"] = DomainSet("y", clips, {"task": spec.task, "seed": spec.seed})

    clips = []
    for i in range(_clip_count(spec, "z")):
        rng = _clip_rng(spec.seed, "z", i)
        gray = int(rng.integers(140, 221))
        clips.append(VideoClip(_render_clip(spec, rng, tt, "circle", (gray,) * 3, (0, 0, 0)), "z"))
    out["z"] = DomainSet("z", clips, {"task": spec.task, "seed": spec.seed})

    clips = []
    for i in range(_clip_count(spec, "zbar")):
        rng = _clip_rng(spec.seed, "zbar", i)
        color = SHAPE_PALETTE[rng.integers(len(SHAPE_PALETTE))]
        bg = SWITCH_BLUE if rng.random() < 0.5 else SWITCH_RED
        clips.append(VideoClip(_render_clip(spec, rng, 1, "circle", color, bg), "zbar"))
    out["zbar"] = DomainSet("zbar", clips, {"task": spec.task, "seed": spec.seed})
    return out


def gen_color_switch(spec: SynthSpec) -> dict:
    """Source shapes on black; target grounds blue for t <= T/2, red after."""
    tt = spec.video_length
    if tt % 2:
        raise DataError(f"color_switch needs even video length, got {tt}")

    def switch_bg(t):
        return SWITCH_BLUE if t < tt // 2 else SWITCH_RED

    out = {}
    for role in ("x", "y", "z"):
        clips = []
        for i in range(_clip_count(spec, role)):
            rng = _clip_rng(spec.seed, role, i)
            color = BRIGHT_PALETTE[rng.integers(len(BRIGHT_PALETTE))]
            bg = (0, 0, 0) if role == "x" else switch_bg
            clips.append(VideoClip(_render_clip(spec, rng, tt, "circle", color, bg), role))
        out[role] = DomainSet(role, clips, {"task": spec.task, "seed": spec.seed})

    clips = []
    for i in range(_clip_count(spec, "zbar")):
        rng = _clip_rng(spec.seed, "zbar", i)
        color = BRIGHT_PALETTE[rng.integers(len(BRIGHT_PALETTE))]
        bg = SWITCH_BLUE if rng.random() < 0.5 else SWITCH_RED
        clips.append(VideoClip(_render_clip(spec, rng, 1, "circle", color, bg), "zbar"))
    out["zbar"] = DomainSet("zbar", clips, {"task": spec.task, "seed": spec.seed})
    return out


def generate(spec: SynthSpec) -> dict:
    return gen_artificial(spec) if spec.task == "rects_to_circles" else gen_color_switch(spec)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.stack([self.mean, self.std]).astype(np.float64)

    @classmethod
    def from_array(cls, arr) -> "ChannelStats":
        return cls(np.asarray(arr[0], dtype=np.float64), np.asarray(arr[1], dtype=np.float64))


def compute_stats(clips, var_floor: float = 1e-6) -> ChannelStats:
    frames = np.concatenate([c.frames for c in clips], axis=0).astype(np.float64)
    mean = frames.mean(axis=(0, 1, 2))
    var = np.maximum(frames.var(axis=(0, 1, 2)), var_floor)
    return ChannelStats(mean, np.sqrt(var))


def standardize(frames: np.ndarray, stats: ChannelStats) -> np.ndarray:
    return ((frames - stats.mean) / stats.std).astype(np.float32)


def destandardize(frames: np.ndarray, stats: ChannelStats) -> np.ndarray:
    return (np.asarray(frames, dtype=np.float64) * stats.std + stats.mean).astype(np.float32)


def conform_frames(frames: np.ndarray, size: int) -> np.ndarray:
    """Center-crop to square, then resize to (size, size) if needed."""
    t, h, w, c = frames.shape
    side = min(h, w)
    if side < size:
        raise DataError(f"frames {h}x{w} smaller than target crop {size}x{size}")
    y0, x0 = (h - side) // 2, (w - side) // 2
    frames = frames[:, y0:y0 + side, x0:x0 + side]
    if side == size:
        return frames
    resized = np.empty((t, size, size, c), dtype=np.float32)
    for ti in range(t):
        for ci in range(c):
            img = Image.fromarray(frames[ti, :, :, ci].astype(np.float32), mode="F")
            resized[ti, :, :, ci] = np.asarray(img.resize((size, size), Image.BILINEAR))
    return resized


def preprocess(split_sets: dict, frame_size: int, stats: ChannelStats = None):
    """Conform and standardize every split; stats come from the train split only."""
    conformed = {
        split: {role: DomainSet(ds.role,
                                [VideoClip(conform_frames(c.frames, frame_size), c.domain)
                                 for c in ds.clips],
                                dict(ds.provenance))
                for role, ds in roles.items()}
        for split, roles in split_sets.items()
    }
    if stats is None:
        train_clips = [c for ds in conformed["train"].values() for c in ds.clips]
        stats = compute_stats(train_clips)
    out = {
        split: {role: DomainSet(ds.role,
                                [VideoClip(standardize(c.frames, stats), c.domain)
                                 for c in ds.clips],
                                dict(ds.provenance))
                for role, ds in roles.items()}
        for split, roles in conformed.items()
    }
    return out, stats


def split(sets: dict, ratios=(0.70, 0.15, 0.15), seed: int = 0) -> dict:
    """Clip-level disjoint partition of every role into train/val/test."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    out = {"train": {}, "val": {}, "test": {}}
    for role, ds in sets.items():
        n = len(ds.clips)
        order = np.random.default_rng(np.random.SeedSequence([seed, ROLES.index(role), 977]))
        idx = order.permutation(n)
        n_val = max(1, int(np.floor(ratios[1] * n)))
        n_test = max(1, int(np.floor(ratios[2] * n)))
        n_train = n - n_val - n_test
        cuts = {
            "train": idx[:n_train],
            "val": idx[n_train:n_train + n_val],
            "test": idx[n_train + n_val:],
        }
        for name, ids in cuts.items():
            if len(ids) == 0:
                raise DataError(f"split: role {role!r} with {n} clips leaves {name!r} empty")
            out[name][role] = DomainSet(role, [ds.clips[i] for i in ids], dict(ds.provenance))
    return out


# ---------------------------------------------------------------------------
# on-disk datasets
# ---------------------------------------------------------------------------

def _write_png(path: Path, frame: np.ndarray):
    arr = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise DataError(f"undecodable frame {path}: {exc}") from exc
    return arr


def save_dataset(root, sets: dict, stats: ChannelStats = None) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = []
    for role in ROLES:
        if role not in sets:
            continue
        for ci, clip in enumerate(sets[role].clips):
            clip_dir = root / ROLE_DIRS[role] / f"clip_{ci:04d}"
            clip_dir.mkdir(parents=True, exist_ok=True)
            for ti in range(clip.length):
                _write_png(clip_dir / f"frame_{ti:03d}.png", clip.frames[ti])
            t, h, w, _ = clip.frames.shape
            manifest.append(f"{role} {clip_dir.relative_to(root)} {t} {h} {w}")
    (root / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    if stats is not None:
        T.save_tensor(root / "stats.v2vt", stats.to_array())


def load_dataset(root) -> tuple[dict, ChannelStats | None]:
    root = Path(root)
    if not (root / "manifest.txt").exists():
        raise DataError(f"no manifest.txt under {root}")
    sets = {}
    for line in (root / "manifest.txt").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        role, rel, t, h, w = line.split()
        clip_dir = root / rel
        frame_paths = sorted(clip_dir.glob("frame_*.png"))
        if len(frame_paths) != int(t):
            raise DataError(f"{clip_dir}: manifest says {t} frames, found {len(frame_paths)}")
        frames = np.stack([_read_png(p) for p in frame_paths])
        sets.setdefault(role, DomainSet(role, [], {"path": str(root)}))
        sets[role].clips.append(VideoClip(frames, role))
    stats = None
    if (root / "stats.v2vt").exists():
        stats = ChannelStats.from_array(T.load_tensor(root / "stats.v2vt"))
    return sets, stats


def load_frame_dir(path, role: str, video_length: int) -> DomainSet:
    """Load clip_dirs_of_numbered_pngs and cut non-overlapping windows of length T."""
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"frame directory {path} does not exist")
    clip_dirs = sorted(p for p in path.iterdir() if p.is_dir())
    if not clip_dirs:
        raise DataError(f"frame directory {path} has no clip subdirectories")
    clips, offenders = [], []
    shape_seen = None
    for clip_dir in clip_dirs:
        frame_paths = sorted(clip_dir.glob("*.png"))
        if len(frame_paths) < video_length:
            offenders.append(f"{clip_dir.name}: {len(frame_paths)} frames < window {video_length}")
            continue
        frames = [_read_png(p) for p in frame_paths]
        shapes = {f.shape for f in frames}
        if len(shapes) > 1:
            offenders.append(f"{clip_dir.name}: ragged frame sizes {sorted(shapes)}")
            continue
        if shape_seen is None:
            shape_seen = frames[0].shape
        elif frames[0].shape != shape_seen:
            offenders.append(f"{clip_dir.name}: size {frames[0].shape} != {shape_seen}")
            continue
        stacked = np.stack(frames)
        for start in range(0, len(frames) - video_length + 1, video_length):
            clips.append(VideoClip(stacked[start:start + video_length], role))
    if offenders:
        raise DataError(f"load_frame_dir({path}): " + "; ".join(offenders))
    return DomainSet(role, clips, {"path": str(path)})
