"""Replay-buffer policy-gradient training loop and its moving parts.

Phase 1 pretrains generators, predictors, and discriminators on the
adversarial + recurrent + recycle objective (no video loss, no RL). Phase 2
runs the full loop: per training video, a transition mini-batch is assembled
(drawing from the replay buffer with probability sigma1, otherwise building a
fresh transition), the critics regress to bootstrapped targets, the policy
networks ascend the critic value of their own candidate actions, targets
track softly, and the discriminators ascend their terms on a prefix batch
from the video's domain.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses as LS
from . import metrics as M
from . import networks as N
from . import tensor as T
from .data import DomainSet, VideoClip, domain_side
from .losses import LossReport, LossWeights
from .networks import NetworkSet
from .tensor import SgdState, Tensor


class NumericsError(RuntimeError):
    """A loss or update became non-finite; carries term and step context."""


STRATEGIES = ("standard_q", "twin_q", "delayed_policy")


@dataclass
class TrainConfig:
    """Every knob of both phases (defaults follow the full-scale recipe)."""

    learning_rate: float = 1e-4
    lr_decay_every: int = 10
    lr_decay: float = 0.1
    momentum: float = 0.97
    weight_decay: float = 3e-3
    clip_norm: float = 5.0
    batch: int = 64                  # transition mini-batch m
    pretrain_batch: int = 4          # clips per pretraining step
    gamma: float = 0.99
    tau: float = 0.005
    sigma1: float = 0.8              # P(draw transition from buffer)
    sigma2: float = 0.8              # P(pick argmax-Q action over random frame)
    video_length: int = 6
    buffer_capacity: int = 10_000
    weights: LossWeights = field(default_factory=LossWeights)
    strategy: str = "delayed_policy"
    policy_delay: int = 2
    epochs: int = 100                # phase-2 cap
    pretrain_epochs: int = 50        # phase-1 cap
    patience: int = 5
    seed: int = 0
    reward_scale: float = 1.0
    reward_context: int = 4          # contrast clips per reward evaluation
    style_counts_as_target: bool = False
    style_to_dy1: bool = False
    drop: str = "none"               # none|adversarial|recurrent|recycle|video
    eval_embedder: str = "frozen_random_cnn"
    eval_embed_dim: int = 32
    eval_seed: int = 1234
    eval_max_clips: int = 16

    def __post_init__(self):
        for name in ("sigma1", "sigma2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.drop not in ("none", "adversarial", "recurrent", "recycle", "video"):
            raise ValueError(f"unknown loss drop {self.drop!r}")

    def effective_weights(self) -> LossWeights:
        w = self.weights
        if self.drop == "recurrent":
            w = replace(w, lambda_rrx=0.0, lambda_rry=0.0)
        elif self.drop == "recycle":
            w = replace(w, lambda_rcx=0.0, lambda_rcy=0.0)
        elif self.drop == "video":
            w = replace(w, lambda_vx=0.0, lambda_vy=0.0)
        return w

    @property
    def use_adversarial(self) -> bool:
        return self.drop != "adversarial"

    @property
    def use_video(self) -> bool:
        return self.drop != "video"


@dataclass
class Transition:
    """One replay record; ``p`` is stored as len(s) + 1 = len(s_next)."""

    s: np.ndarray
    s_domain: str
    a: np.ndarray
    r: float
    s_next: np.ndarray
    a_true: np.ndarray
    a_true_domain: str
    p: int

    def validate(self, video_length: int):
        if not (2 <= self.p <= video_length):
            raise ValueError(f"transition: stored p={self.p} outside [2, {video_length}]")
        if self.s_next.shape[0] != self.p or self.s.shape[0] != self.p - 1:
            raise ValueError("transition: stored p must equal len(s_next) = len(s) + 1")
        if not np.array_equal(self.s_next[:-1], self.s) or \
                not np.array_equal(self.s_next[-1], self.a):
            raise ValueError("transition: s_next must be s with the action appended")
        if not np.isfinite(self.r):
            raise ValueError(f"transition: non-finite reward {self.r}")


class ReplayBuffer:
    """Bounded FIFO ring; sampling is uniform with replacement."""

    def __init__(self, capacity: int = 10_000, video_length: int = 6):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.video_length = video_length
        self._items: list = []
        self._write = 0
        self.inserted = 0

    def __len__(self):
        return len(self._items)

    def push(self, tr: Transition):
        tr.validate(self.video_length)
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._write] = tr
        self._write = (self._write + 1) % self.capacity
        self.inserted += 1

    def sample(self, rng) -> Transition:
        if not self._items:
            raise ValueError("cannot sample from an empty replay buffer")
        return self._items[int(rng.integers(len(self._items)))]

    def items(self):
        return list(self._items)


class DataPool:
    """Epoch-level access to the train split for contrast batches and actions."""

    def __init__(self, train_sets: dict):
        self.sets = train_sets
        self._frame_index = []
        for role in ("x", "y", "z", "zbar"):
            ds = train_sets.get(role)
            if not ds:
                continue
            for ci, clip in enumerate(ds.clips):
                for fi in range(clip.length):
                    self._frame_index.append((role, ci, fi))
        self.style = np.stack([c.frames[0] for c in train_sets["zbar"].clips]) \
            if train_sets.get("zbar") and len(train_sets["zbar"].clips) else \
            np.zeros((0, 1, 1, 3), dtype=np.float32)

    def contrast(self, role: str, rng, k: int = 1):
        ds = self.sets.get(role)
        if not ds or not ds.clips:
            return []
        picks = rng.integers(len(ds.clips), size=min(k, len(ds.clips)))
        return [ds.clips[int(i)] for i in picks]

    def style_batch(self, rng, k: int = 4) -> np.ndarray:
        if not len(self.style):
            return self.style
        picks = rng.integers(len(self.style), size=min(k, len(self.style)))
        return self.style[picks]

    def random_frame(self, rng):
        role, ci, fi = self._frame_index[int(rng.integers(len(self._frame_index)))]
        return self.sets[role].clips[ci].frames[fi], role

    def videos(self):
        out = []
        for role in ("x", "y", "z"):
            ds = self.sets.get(role)
            if ds:
                out.extend(ds.clips)
        return out


# ---------------------------------------------------------------------------
# transitions
# ---------------------------------------------------------------------------

def _side_nets(nets: NetworkSet, domain: str):
    """(own predictor, outbound generator, other predictor, inbound generator, critic)."""
    if domain_side(domain) == "source":
        return nets.p_x, nets.g_y, nets.p_y, nets.g_x, nets.q_x
    return nets.p_y, nets.g_x, nets.p_x, nets.g_y, nets.q_y


def _frames(arr: np.ndarray, dtype=np.float32):
    return [Tensor(np.ascontiguousarray(arr[t][None]), dtype=dtype) for t in range(arr.shape[0])]


def candidate_actions(v_domain: str, s: np.ndarray, nets: NetworkSet):
    """a1 = own-domain prediction; a2 = out-translate, advance, translate back."""
    p_own, g_out, p_mid, g_back, _ = _side_nets(nets, v_domain)
    with T.no_grad():
        frames = _frames(s)
        a1 = p_own.forward(frames)[-1].data[0]
        mid = g_out.forward(frames)
        pred = p_mid.forward(mid)[-1]
        a2 = g_back.forward(mid + [pred])[-1].data[0]
    return a1.astype(np.float32), a2.astype(np.float32)


def reward_for(p: int, report: LossReport, cfg: TrainConfig) -> float:
    """Terminal positions earn the (negated) video loss, others the composite."""
    w = cfg.effective_weights()
    if p == cfg.video_length - 1:
        r = -(w.lambda_vx * report.v_x + w.lambda_vy * report.v_y)
    else:
        r = -(report.g_x + report.g_y
              + w.lambda_rrx * report.rr_x + w.lambda_rry * report.rr_y
              + w.lambda_rcx * report.rc_xy + w.lambda_rcy * report.rc_yx)
    return float(r) * cfg.reward_scale


def reward_context_report(v: VideoClip, p: int, nets: NetworkSet, pool: DataPool,
                          cfg: TrainConfig, rng) -> LossReport:
    """Loss parts on the transition's clip plus a small contrast batch."""
    k = max(1, cfg.reward_context // 4)
    x_clips = [v] if v.domain == "x" else pool.contrast("x", rng, k)
    y_clips = [v] if v.domain == "y" else pool.contrast("y", rng, k)
    z_clips = [v] if v.domain == "z" else pool.contrast("z", rng, k)
    style = pool.style_batch(rng, cfg.reward_context)
    parts = {}
    terminal = p == cfg.video_length - 1
    with T.no_grad():
        if terminal:
            if cfg.use_video:
                vx, vy = LS.video_loss(nets.g_x, nets.g_y, nets.d_x_video, nets.d_y_video,
                                       x_clips, y_clips, z_clips)
                parts["v_x"], parts["v_y"] = vx.item(), vy.item()
        else:
            if cfg.use_adversarial and x_clips and y_clips:
                parts["g_y"] = LS.adv_loss_y(nets.g_y, nets.d_y, x_clips, y_clips, z_clips,
                                             style, rng, cfg.style_to_dy1).item()
                parts["g_x"] = LS.adv_loss_x(nets.g_x, nets.d_x, x_clips, y_clips, z_clips,
                                             rng).item()
            if cfg.drop != "recurrent":
                if x_clips:
                    parts["rr_x"] = LS.recurrent_loss(nets.p_x, x_clips).item()
                if y_clips or z_clips:
                    parts["rr_y"] = LS.recurrent_loss(nets.p_y, y_clips or z_clips,
                                                      style_clips=z_clips if y_clips else ()).item()
            if cfg.drop != "recycle" and x_clips and y_clips:
                parts["rc_xy"] = LS.recycle_loss_xy(nets.g_x, nets.g_y, nets.p_y,
                                                    x_clips, y_clips, rng).item()
                parts["rc_yx"] = LS.recycle_loss_yx(nets.g_y, nets.g_x, nets.p_x,
                                                    x_clips, y_clips, z_clips, rng).item()
    return LS.total_loss(cfg.effective_weights(), parts)


def make_transition(v: VideoClip, nets: NetworkSet, pool: DataPool, cfg: TrainConfig,
                    rng):
    """Build one fresh transition from a training video (Bernoulli exploration).

    Returns (transition, loss report of its reward context).
    """
    tt = cfg.video_length
    p = int(rng.integers(1, tt))
    s = v.frames[:p]
    a1, a2 = candidate_actions(v.domain, s, nets)
    if rng.random() < cfg.sigma2:
        _, _, _, _, critic = _side_nets(nets, v.domain)
        s_clip = VideoClip(s, v.domain)
        q1 = N.q_value(critic, s_clip, a1, tt)
        q2 = N.q_value(critic, s_clip, a2, tt)
        a = a1 if q1 >= q2 else a2
    else:
        a, _ = pool.random_frame(rng)
        a = a.copy()
    try:
        report = reward_context_report(v, p, nets, pool, cfg, rng)
    except ValueError as exc:
        raise NumericsError(f"reward context failed: {exc}") from exc
    r = reward_for(p, report, cfg)
    return Transition(
        s=s.copy(), s_domain=v.domain, a=np.asarray(a, dtype=np.float32), r=r,
        s_next=np.concatenate([s, a[None]], axis=0), a_true=v.frames[p].copy(),
        a_true_domain=v.domain, p=p + 1,
    ), report


# ---------------------------------------------------------------------------
# strategies
# ---------------------------------------------------------------------------

class StrategyBase:
    name = "base"

    def __init__(self, cfg: TrainConfig, nets: NetworkSet):
        self.cfg = cfg
        self.critic_steps = 0

    def _bootstrap(self, tr: Transition, nets: NetworkSet, q_nets) -> float:
        cfg = self.cfg
        if tr.p >= cfg.video_length:
            return tr.r  # terminal: no successor action exists
        dom = tr.a_true_domain
        fires_x = dom == "x"
        fires_y = dom == "y" or (cfg.style_counts_as_target and dom in ("z", "zbar"))
        if not (fires_x or fires_y):
            return tr.r
        predictor = nets.target("P_x") if fires_x else nets.target("P_y")
        with T.no_grad():
            frames = _frames(tr.s)
            action = predictor.forward(frames)[-1]
            vals = [q.forward(frames, action).data[0, 0] for q in q_nets(fires_x)]
        return tr.r + cfg.gamma * float(min(vals))

    def q_target(self, tr: Transition, nets: NetworkSet) -> float:
        def q_nets(fires_x):
            return [nets.target("Q_x") if fires_x else nets.target("Q_y")]
        return self._bootstrap(tr, nets, q_nets)

    def critics_for(self, nets: NetworkSet, domain: str):
        return [nets.q_x if domain_side(domain) == "source" else nets.q_y]

    def critic_parameters(self, nets: NetworkSet):
        return nets.critic_parameters()

    def after_critic_step(self):
        self.critic_steps += 1

    def actor_due(self) -> bool:
        return True

    def soft_update_extras(self, tau: float):
        pass

    def extra_modules(self) -> dict:
        return {}

    def state(self) -> dict:
        return {name: mod.state_arrays() for name, mod in self.extra_modules().items()}

    def load_state(self, st: dict):
        for name, mod in self.extra_modules().items():
            mod.load_state_arrays(st[name])


class StandardQ(StrategyBase):
    """Single critic; bootstrap uses the live critic (no target critic)."""

    name = "standard_q"

    def q_target(self, tr: Transition, nets: NetworkSet) -> float:
        def q_nets(fires_x):
            return [nets.q_x if fires_x else nets.q_y]
        return self._bootstrap(tr, nets, q_nets)


class DelayedPolicy(StrategyBase):
    """Default target computation; the actor moves every policy_delay critic steps."""

    name = "delayed_policy"

    def actor_due(self) -> bool:
        return self.critic_steps % max(1, self.cfg.policy_delay) == 0


class TwinQ(StrategyBase):
    """Second critic pair; targets bootstrap with the minimum of both targets."""

    name = "twin_q"

    def __init__(self, cfg: TrainConfig, nets: NetworkSet):
        super().__init__(cfg, nets)
        from .blocks import Seeder
        seeder = Seeder(cfg.seed + 7919)
        self.q2_x = N.QNetwork(nets.preset, seeder, dtype=nets.dtype)
        self.q2_y = N.QNetwork(nets.preset, seeder, dtype=nets.dtype)
        self.q2_x_target = N.QNetwork(nets.preset, seeder, dtype=nets.dtype)
        self.q2_y_target = N.QNetwork(nets.preset, seeder, dtype=nets.dtype)
        self.q2_x_target.copy_from(self.q2_x)
        self.q2_y_target.copy_from(self.q2_y)
        for prefix, mod in self.extra_modules().items():
            mod.bind_names(prefix)

    def q_target(self, tr: Transition, nets: NetworkSet) -> float:
        def q_nets(fires_x):
            if fires_x:
                return [nets.target("Q_x"), self.q2_x_target]
            return [nets.target("Q_y"), self.q2_y_target]
        return self._bootstrap(tr, nets, q_nets)

    def critics_for(self, nets: NetworkSet, domain: str):
        if domain_side(domain) == "source":
            return [nets.q_x, self.q2_x]
        return [nets.q_y, self.q2_y]

    def critic_parameters(self, nets: NetworkSet):
        return (nets.critic_parameters() + self.q2_x.parameters() + self.q2_y.parameters())

    def soft_update_extras(self, tau: float):
        soft_update(self.q2_x, self.q2_x_target, tau)
        soft_update(self.q2_y, self.q2_y_target, tau)

    def extra_modules(self) -> dict:
        return {"strategy.Q2_x": self.q2_x, "strategy.Q2_y": self.q2_y,
                "strategy.Q2_x_target": self.q2_x_target,
                "strategy.Q2_y_target": self.q2_y_target}


def make_strategy(cfg: TrainConfig, nets: NetworkSet) -> StrategyBase:
    return {"standard_q": StandardQ, "twin_q": TwinQ,
            "delayed_policy": DelayedPolicy}[cfg.strategy](cfg, nets)


def q_target(tr: Transition, nets: NetworkSet, cfg: TrainConfig) -> float:
    """Default (target-network) bootstrapped value; strategies refine this."""
    return StrategyBase(cfg, nets).q_target(tr, nets)


# ---------------------------------------------------------------------------
# updates
# ---------------------------------------------------------------------------

def critic_update(batch, nets: NetworkSet, cfg: TrainConfig, strategy: StrategyBase,
                  opt: SgdState):
    """One SGD step on the critics toward the strategy's bootstrapped targets."""
    targets = [strategy.q_target(tr, nets) for tr in batch]
    params = strategy.critic_parameters(nets)
    T.zero_grads(nets.all_parameters())
    T.zero_grads(params)
    terms = []
    q_values = []
    for tr, rhat in zip(batch, targets):
        frames = _frames(tr.s)
        action = Tensor(tr.a[None])
        for critic in strategy.critics_for(nets, tr.s_domain):
            q = critic.forward(frames, action)
            q_values.append(float(q.data[0, 0]))
            terms.append(T.square(q - rhat).sum())
    loss = LS._sum_scalars(terms) * (1.0 / len(batch))
    value = loss.item()
    if not np.isfinite(value):
        raise NumericsError(f"critic loss became {value}")
    loss.backward()
    T.sgd_step([p for p in params if p.grad is not None], opt)
    T.zero_grads(nets.all_parameters())
    T.zero_grads(params)
    strategy.after_critic_step()
    return value, float(np.mean(q_values))


def actor_update(batch, nets: NetworkSet, cfg: TrainConfig, strategy: StrategyBase,
                 opt: SgdState) -> bool:
    """Ascend the critics' value of both candidate-action routes (descend on -Q)."""
    if not strategy.actor_due():
        return False
    params = nets.policy_parameters()
    T.zero_grads(nets.all_parameters())
    T.zero_grads(strategy.critic_parameters(nets))
    terms = []
    for tr in batch:
        p_own, g_out, p_mid, g_back, critic = _side_nets(nets, tr.s_domain)
        frames = _frames(tr.s)
        a1 = p_own.forward(frames)[-1]
        terms.append(critic.forward(frames, a1))
        mid = g_out.forward(frames)
        pred = p_mid.forward(mid)[-1]
        a2 = g_back.forward(mid + [pred])[-1]
        terms.append(critic.forward(frames, a2))
    loss = LS._sum_scalars(terms) * (-1.0 / (2 * len(batch)))
    value = loss.item()
    if not np.isfinite(value):
        raise NumericsError(f"actor objective became {value}")
    loss.backward()
    T.sgd_step([p for p in params if p.grad is not None], opt)
    T.zero_grads(nets.all_parameters())
    T.zero_grads(strategy.critic_parameters(nets))
    return True


def soft_update(live, target, tau: float):
    """target <- tau * live + (1 - tau) * target, parameters and buffers."""
    live_params = list(live.named_parameters())
    target_params = list(target.named_parameters())
    for (_, p), (_, q) in zip(live_params, target_params):
        if p.shape != q.shape:
            raise T.ShapeError(f"soft_update: {p.shape} vs {q.shape} for {q.name!r}")
        q.data *= (1.0 - tau)
        q.data += tau * p.data
    for (name, b_live), (_, b_tgt) in zip(live.named_buffers(), target.named_buffers()):
        target.set_buffer(name, (1.0 - tau) * b_tgt + tau * b_live)


def discriminator_update(v: VideoClip, pool: DataPool, nets: NetworkSet, cfg: TrainConfig,
                         opt: SgdState, rng) -> float:
    """Ascend every discriminator term on a prefix batch from the video's domain.

    Full-length members also contribute the video terms; shorter prefixes
    contribute only the frame-level terms.
    """
    if not cfg.use_adversarial and not cfg.use_video:
        return 0.0
    ds = pool.sets[v.domain]
    m = cfg.batch
    clips, include_video = [], []
    for _ in range(m):
        clip = ds.clips[int(rng.integers(len(ds.clips)))]
        t = int(rng.integers(1, cfg.video_length + 1))
        clips.append(clip.prefix(t))
        include_video.append(cfg.use_video and t == cfg.video_length)
    if not cfg.use_adversarial:
        keep = [i for i, inc in enumerate(include_video) if inc]
        if not keep:
            return 0.0
        clips = [clips[i] for i in keep]
        include_video = [True] * len(keep)
    style = pool.style_batch(rng, cfg.reward_context) if cfg.use_adversarial else \
        np.zeros((0,) + clips[0].frames.shape[1:], dtype=np.float32)
    params = nets.discriminator_parameters()
    T.zero_grads(nets.all_parameters())
    obj = LS.discriminator_objective(nets, v.domain, clips, include_video, style, rng,
                                     include_frames=cfg.use_adversarial)
    value = obj.item()
    if not np.isfinite(value):
        raise NumericsError(f"discriminator objective became {value}")
    if not obj._parents:
        return value
    loss = obj * (-1.0 / m)
    loss.backward()
    T.sgd_step([p for p in params if p.grad is not None], opt)
    T.zero_grads(nets.all_parameters())
    return value


# ---------------------------------------------------------------------------
# the two-phase training loop
# ---------------------------------------------------------------------------

STEP_COLUMNS = ["step", "epoch", "phase", "g_x", "g_y", "rr_x", "rr_y", "rc_xy", "rc_yx",
                "v_x", "v_y", "total", "critic_loss", "mean_reward", "buffer_size"]
EPOCH_COLUMNS = ["epoch", "phase", "train_fid", "val_fid", "lr"]
TRANSITION_COLUMNS = ["step", "epoch", "p_stored", "branch", "reward", "a_true_domain"]
TRACE_COLUMNS = ["strategy", "epoch", "mean_q", "reward_mean", "reward_std"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class _Csv:
    def __init__(self, path, columns):
        self.file = open(path, "w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.file)
        self.columns = columns
        self.writer.writerow(columns)

    def row(self, **kv):
        self.writer.writerow([_fmt(kv.get(c)) for c in self.columns])
        self.file.flush()

    def close(self):
        self.file.close()


def _set_lr(optimizers, cfg: TrainConfig, epoch: int):
    lr = cfg.learning_rate * (cfg.lr_decay ** (epoch // cfg.lr_decay_every))
    for opt in optimizers:
        opt.learning_rate = lr
    return lr


def _fid_for(nets: NetworkSet, split_sets, cfg: TrainConfig, embedder) -> float:
    """Frechet distance between translated source clips and real target frames."""
    x_clips = split_sets["x"].clips[:cfg.eval_max_clips]
    y_clips = split_sets["y"].clips[:cfg.eval_max_clips]
    nets.eval_mode()
    try:
        generated = [N.translate(nets.g_y, c) for c in x_clips]
    finally:
        nets.train_mode()
    return M.fid_eval(y_clips, generated, embedder)


@dataclass
class TrainResult:
    epoch_rows: list
    best_val_fid: float
    stopped_early: bool
    phase2_epochs: int
    reward_trace: list


def _snapshot(nets: NetworkSet, strategy: StrategyBase = None):
    state = {prefix: mod.state_arrays() for prefix, mod in nets._named_modules().items()}
    if strategy is not None:
        state["__strategy__"] = strategy.state()
    return state


def _restore(nets: NetworkSet, state, strategy: StrategyBase = None):
    for prefix, mod in nets._named_modules().items():
        mod.load_state_arrays(state[prefix])
    if strategy is not None and "__strategy__" in state:
        strategy.load_state(state["__strategy__"])


def train(split_sets: dict, nets: NetworkSet, cfg: TrainConfig, out_dir,
          run_pretrain: bool = True, run_rl: bool = True) -> TrainResult:
    """Run phase 1 (pretraining) and phase 2 (the full loop) with logging.

    ``split_sets`` maps split -> role -> DomainSet of standardized clips.
    Metric CSVs, a transition audit log, and a reward trace land in out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    embedder = M.Embedder(cfg.eval_embedder, seed=cfg.eval_seed, embed_dim=cfg.eval_embed_dim)
    pool = DataPool(split_sets["train"])

    opt_policy = SgdState(cfg.learning_rate, cfg.momentum, cfg.weight_decay, cfg.clip_norm)
    opt_critic = SgdState(cfg.learning_rate, cfg.momentum, cfg.weight_decay, cfg.clip_norm)
    opt_disc = SgdState(cfg.learning_rate, cfg.momentum, cfg.weight_decay, cfg.clip_norm)

    steps_csv = _Csv(out_dir / "steps.csv", STEP_COLUMNS)
    epochs_csv = _Csv(out_dir / "epochs.csv", EPOCH_COLUMNS)
    trans_csv = _Csv(out_dir / "transitions.csv", TRANSITION_COLUMNS)
    trace_csv = _Csv(out_dir / "reward_trace.csv", TRACE_COLUMNS)

    epoch_rows = []
    reward_trace = []
    step = 0
    try:
        if run_pretrain and cfg.pretrain_epochs > 0:
            step = _pretrain_phase(split_sets, nets, cfg, pool,
                                   (opt_policy, opt_disc), embedder,
                                   steps_csv, epochs_csv, epoch_rows, step)
        strategy = make_strategy(cfg, nets)
        best_val = np.inf
        stopped = False
        ran = 0
        if run_rl and cfg.epochs > 0:
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
            buffer = ReplayBuffer(cfg.buffer_capacity, cfg.video_length)
            best_state = None
            since_best = 0
            for epoch in range(cfg.epochs):
                lr = _set_lr((opt_policy, opt_critic, opt_disc), cfg, epoch)
                videos = pool.videos()
                order = rng.permutation(len(videos))
                rewards_epoch, qs_epoch = [], []
                for vi in order:
                    v = videos[int(vi)]
                    step += 1
                    batch, reports, new_rows = [], [], []
                    for _ in range(cfg.batch):
                        if rng.random() < cfg.sigma1 and len(buffer):
                            batch.append(buffer.sample(rng))
                        else:
                            tr, report = make_transition(v, nets, pool, cfg, rng)
                            buffer.push(tr)
                            batch.append(tr)
                            reports.append(report)
                            branch = "video" if tr.p == cfg.video_length else "composite"
                            new_rows.append(dict(step=step, epoch=epoch, p_stored=tr.p,
                                                 branch=branch, reward=tr.r,
                                                 a_true_domain=tr.a_true_domain))
                    critic_loss, mean_q = critic_update(batch, nets, cfg, strategy, opt_critic)
                    actor_update(batch, nets, cfg, strategy, opt_policy)
                    for live, target in nets.target_pairs():
                        soft_update(live, target, cfg.tau)
                    strategy.soft_update_extras(cfg.tau)
                    discriminator_update(v, pool, nets, cfg, opt_disc, rng)
                    rewards_epoch.extend(tr.r for tr in batch)
                    qs_epoch.append(mean_q)
                    for row in new_rows:
                        trans_csv.row(**row)
                    mean_parts = _mean_reports(reports)
                    steps_csv.row(step=step, epoch=epoch, phase=2, critic_loss=critic_loss,
                                  mean_reward=float(np.mean([t.r for t in batch])),
                                  buffer_size=len(buffer), **mean_parts)
                train_fid = _fid_for(nets, split_sets["train"], cfg, embedder)
                val_fid = _fid_for(nets, split_sets["val"], cfg, embedder)
                row = dict(epoch=epoch, phase=2, train_fid=train_fid, val_fid=val_fid, lr=lr)
                epochs_csv.row(**row)
                epoch_rows.append(row)
                trace_row = dict(strategy=cfg.strategy, epoch=epoch,
                                 mean_q=float(np.mean(qs_epoch)),
                                 reward_mean=float(np.mean(rewards_epoch)),
                                 reward_std=float(np.std(rewards_epoch)))
                trace_csv.row(**trace_row)
                reward_trace.append(trace_row)
                ran += 1
                if val_fid < best_val - 1e-12:
                    best_val = val_fid
                    best_state = _snapshot(nets, strategy)
                    since_best = 0
                else:
                    since_best += 1
                    if since_best >= cfg.patience:
                        stopped = True
                        break
            if best_state is not None:
                _restore(nets, best_state, strategy)
        if not np.isfinite(best_val):
            best_val = _fid_for(nets, split_sets["val"], cfg, embedder)
        return TrainResult(epoch_rows, float(best_val), stopped, ran, reward_trace)
    finally:
        for f in (steps_csv, epochs_csv, trans_csv, trace_csv):
            f.close()


def _mean_reports(reports):
    if not reports:
        return {}
    out = {}
    for name in LS.PART_NAMES + ("total",):
        out[name] = float(np.mean([getattr(rep, name) for rep in reports]))
    return out


def _pretrain_phase(split_sets, nets, cfg, pool, optimizers, embedder,
                    steps_csv, epochs_csv, epoch_rows, step):
    opt_policy, opt_disc = optimizers
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    x_all = split_sets["train"]["x"].clips
    weights = cfg.effective_weights()
    best_val = np.inf
    best_state = None
    since_best = 0
    for epoch in range(cfg.pretrain_epochs):
        lr = _set_lr([opt_policy, opt_disc], cfg, epoch)
        order = rng.permutation(len(x_all))
        for lo in range(0, len(order), cfg.pretrain_batch):
            step += 1
            x_clips = [x_all[int(i)] for i in order[lo:lo + cfg.pretrain_batch]]
            y_clips = pool.contrast("y", rng, cfg.pretrain_batch)
            z_clips = pool.contrast("z", rng, cfg.pretrain_batch)
            style = pool.style_batch(rng, cfg.pretrain_batch * cfg.video_length)
            parts = {}
            if cfg.use_adversarial:
                parts["g_y"] = LS.adv_loss_y(nets.g_y, nets.d_y, x_clips, y_clips, z_clips,
                                             style, rng, cfg.style_to_dy1)
                parts["g_x"] = LS.adv_loss_x(nets.g_x, nets.d_x, x_clips, y_clips, z_clips, rng)
            if cfg.drop != "recurrent":
                parts["rr_x"] = LS.recurrent_loss(nets.p_x, x_clips)
                parts["rr_y"] = LS.recurrent_loss(nets.p_y, y_clips, style_clips=z_clips)
            if cfg.drop != "recycle":
                parts["rc_xy"] = LS.recycle_loss_xy(nets.g_x, nets.g_y, nets.p_y,
                                                    x_clips, y_clips, rng)
                parts["rc_yx"] = LS.recycle_loss_yx(nets.g_y, nets.g_x, nets.p_x,
                                                    x_clips, y_clips, z_clips, rng)
            if not parts:
                continue
            total = LS.combine_parts(weights, parts)
            value = total.item()
            if not np.isfinite(value):
                bad = [n for n, t in parts.items() if not np.isfinite(t.item())]
                raise NumericsError(f"pretraining loss non-finite in {bad} at step {step}")
            T.zero_grads(nets.all_parameters())
            total.backward()
            policy_params = [p for p in nets.policy_parameters() if p.grad is not None]
            d_params = [p for p in nets.discriminator_parameters() if p.grad is not None]
            T.sgd_step(policy_params, opt_policy)
            if cfg.use_adversarial and d_params:
                for p in d_params:
                    p.grad = -p.grad  # discriminators ascend their terms
                T.sgd_step(d_params, opt_disc)
            T.zero_grads(nets.all_parameters())
            scalar_parts = {n: t.item() for n, t in parts.items()}
            report = LS.total_loss(weights, scalar_parts)
            steps_csv.row(step=step, epoch=epoch, phase=1,
                          **{n: getattr(report, n) for n in LS.PART_NAMES},
                          total=report.total)
        train_fid = _fid_for(nets, split_sets["train"], cfg, embedder)
        val_fid = _fid_for(nets, split_sets["val"], cfg, embedder)
        row = dict(epoch=epoch, phase=1, train_fid=train_fid, val_fid=val_fid, lr=lr)
        epochs_csv.row(**row)
        epoch_rows.append(row)
        if val_fid < best_val - 1e-12:
            best_val = val_fid
            best_state = _snapshot(nets)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    if best_state is not None:
        _restore(nets, best_state)
    return step
