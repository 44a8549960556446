"""SGD with momentum and weight decay, cosine learning-rate schedule, desk-scale training loop."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from . import tensor as tn
from .data import RawVideo, batch_inputs, sample_test_views, sample_train_clip
from .net import NetworkInstance, backward
from .tensor import NumericError, ParamStore

if TYPE_CHECKING:
    from .arch import ArchConfig


@dataclass(frozen=True)
class LrSchedule:
    eta: float
    n_max: int
    warmup_iters: int = 0
    warmup_start_lr: float = 0.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not 0 <= self.warmup_iters < self.n_max:
            raise ValueError("warmup_iters must satisfy 0 <= warmup_iters < n_max")
        if self.warmup_start_lr < 0:
            raise ValueError("warmup_start_lr must be >= 0")


@dataclass(frozen=True)
class ConstantLr:
    """Fixed rate for ``n_max`` iterations; ``lr=0`` freezes the parameters."""
    lr: float
    n_max: int

    def __post_init__(self):
        if self.lr < 0 or self.n_max < 1:
            raise ValueError("ConstantLr needs lr >= 0 and n_max >= 1")


def cosine_lr(eta: float, n: float, n_max: int) -> float:
    return eta * 0.5 * (math.cos(n / n_max * math.pi) + 1.0)


def lr_at(sched: LrSchedule | ConstantLr, n: int) -> float:
    """Half-period cosine decay; linear ramp to the cosine curve during warm-up."""
    if not 0 <= n <= sched.n_max:
        raise ValueError(f"iteration {n} outside [0, {sched.n_max}]")
    if isinstance(sched, ConstantLr):
        return sched.lr
    if n < sched.warmup_iters:
        target = cosine_lr(sched.eta, sched.warmup_iters, sched.n_max)
        return sched.warmup_start_lr + (target - sched.warmup_start_lr) * n / sched.warmup_iters
    return cosine_lr(sched.eta, n, sched.n_max)


class StepOnPlateau:
    """Divide the rate by ``factor`` after ``patience`` evaluations without improvement.

    Plumbing for step-wise fine-tuning schedules; the saturation rule itself is a choice.
    """

    def __init__(self, lr: float, factor: float = 10.0, patience: int = 3):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad = 0

    def observe(self, val_error: float) -> float:
        if val_error < self.best:
            self.best = val_error
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr /= self.factor
                self.bad = 0
        return self.lr


@dataclass
class OptimState:
    momentum: float = 0.9
    weight_decay: float = 1e-4
    exempt_bn_bias: bool = True
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    n: int = 0


def decays(name: str, state: OptimState) -> bool:
    if not state.exempt_bn_bias:
        return True
    return not name.endswith((".scale", ".shift", ".bias"))


def sgd_step(params: ParamStore, grads: ParamStore, state: OptimState, lr: float):
    """v <- m*v + (g + wd*p); p <- p - lr*v, in place. Returns (params, state)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    for name, p in params.items():
        g = grads.params.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        step = g + state.weight_decay * p if decays(name, state) else g.copy()
        v = state.buffers.get(name)
        if v is None:
            v = np.zeros_like(p)
        v *= state.momentum
        v += step
        state.buffers[name] = v
        p -= lr * v
    state.n += 1
    return params, state


# -- training loop -------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 8
    momentum: float = 0.9
    weight_decay: float = 1e-4
    crop: int = 32
    scale_range: tuple[int, int] = (32, 40)
    augment: bool = True
    eval_every: int = 0
    eval_clips: int = 1
    eval_crops: int = 1
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    bn_mode: str = "train"


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def train_loop(net: NetworkInstance, corpus: Sequence[RawVideo], sched: LrSchedule | ConstantLr, optim: TrainConfig,
               seed: int = 0, val: Sequence[RawVideo] | None = None, log_path=None,
               on_log: Callable[[dict], None] | None = None) -> list[dict]:
    """Train ``net`` in place for ``sched.n_max`` iterations; return the per-iteration log.

    Each record has ``iter``, ``lr``, ``loss``, ``train_top1`` and, every
    ``eval_every`` iterations and at the end, ``val_top1``.
    """
    from .evaluation import evaluate_videos

    if not corpus:
        raise ValueError("training corpus is empty")
    cfg = net.config
    state = OptimState(optim.momentum, optim.weight_decay)
    sample_rng = _rng(seed, 1)
    log: list[dict] = []
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    labels_all = np.array([v.label for v in corpus])
    try:
        for n in range(sched.n_max):
            lr = lr_at(sched, n)
            idx = sample_rng.integers(0, len(corpus), size=optim.batch_size)
            if optim.augment:
                pairs = [sample_train_clip(corpus[i], cfg, sample_rng, optim.crop, optim.scale_range) for i in idx]
            else:
                pairs = [sample_test_views(corpus[i], cfg, optim.crop, 1, 1)[0] for i in idx]
            inp = batch_inputs(pairs, cfg)
            labels = labels_all[idx]
            net.mode = optim.bn_mode
            try:
                loss, grads, logits = backward(net, inp, lambda z: tn.cross_entropy(z, labels), _rng(seed, 2, n))
            except NumericError as exc:
                raise NumericError(f"training diverged at iteration {n}: {exc}") from None
            sgd_step(net.params, grads, state, lr)
            pred = np.argmax(logits.data, axis=1)
            rec = {"iter": n, "lr": lr, "loss": loss, "train_top1": float(100.0 * np.mean(pred == labels))}
            last = n == sched.n_max - 1
            if val is not None and ((optim.eval_every and (n + 1) % optim.eval_every == 0) or last):
                rec["val_top1"] = evaluate_videos(net, val, optim.crop, optim.eval_clips, optim.eval_crops)["top1"]
            log.append(rec)
            if fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if on_log:
                on_log(rec)
            if optim.checkpoint_every and optim.checkpoint_dir and (n + 1) % optim.checkpoint_every == 0:
                os.makedirs(optim.checkpoint_dir, exist_ok=True)
                net.params.save(os.path.join(optim.checkpoint_dir, f"iter_{n + 1:06d}.sfck"))
    finally:
        if fh:
            fh.close()
    net.mode = "eval"
    return log


# -- desk-scale motion experiment ----------------------------------------

def desk_config(mode: str = "slowfast") -> ArchConfig:
    """Small two-pathway network sized for the synthetic motion corpus."""
    from fractions import Fraction

    from .arch import ArchConfig

    cfg = ArchConfig(T=4, tau=8, omega=4, phi=Fraction(1, 4), width=8, blocks=(1, 1, 1, 1), num_classes=4,
                     dropout=0.0)
    if mode != "slowfast":
        cfg = cfg.with_changes(mode=mode, lateral="none")
    return cfg


def motion_experiment(seed: int = 0, iters: int = 2000, num_classes: int = 4, clips_per_class: int = 50,
                      eta: float = 0.1, batch_size: int = 8, log_dir=None,
                      on_log: Callable[[str, dict], None] | None = None) -> dict[str, float]:
    """Train SlowFast, Slow-only, and Slow-only on frame-shuffled clips; return val top-1 of each."""
    from .data import generate_synthetic_corpus, shuffle_frames

    train = generate_synthetic_corpus(seed, num_classes, clips_per_class)
    val = generate_synthetic_corpus(seed + 1, num_classes, clips_per_class)
    runs = {
        "slowfast": (desk_config("slowfast"), train, val),
        "slow-only": (desk_config("slow-only"), train, val),
        "slow-only-shuffled": (desk_config("slow-only"), shuffle_frames(train, seed + 2),
                               shuffle_frames(val, seed + 3)),
    }
    sched = LrSchedule(eta, iters, warmup_iters=min(100, iters // 10))
    optim = TrainConfig(batch_size=batch_size)
    out = {}
    for name, (cfg, tr, va) in runs.items():
        net = NetworkInstance.create(cfg.with_changes(num_classes=num_classes), seed)
        path = os.path.join(log_dir, f"{name}.jsonl") if log_dir else None
        hook = (lambda rec, _n=name: on_log(_n, rec)) if on_log else None
        log = train_loop(net, tr, sched, optim, seed, va, path, hook)
        out[name] = log[-1]["val_top1"]
    return out
