"""One-cycle AdamW training: schedule, optimizer, augmentation,
normalization, and the fit loop.

The learning rate rises from lr_start to lr_peak over phase1 epochs on
a half-cosine and falls to lr_end over phase2; optimizer momentum
(beta1) mirrors it downward then back up.  Both are evaluated at
fractional epochs so short desk-scale runs still sweep the full cycle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericsError
from .loss import LossWeights, loss_breakdown
from .tensor import Tensor


@dataclass
class OneCycleSchedule:
    lr_start: float = 1e-5
    lr_peak: float = 1e-3
    lr_end: float = 1e-9
    mom_start: float = 0.95
    mom_trough: float = 0.85
    phase1: float = 60.0
    phase2: float = 140.0
    iterations_per_epoch: int = 1

    @property
    def total_epochs(self):
        return self.phase1 + self.phase2

    def _check(self, t):
        if not 0 <= t <= self.total_epochs:
            raise ContractError(
                f"schedule evaluated at t={t}, outside [0, {self.total_epochs}]")

    def lr_at(self, t):
        self._check(t)
        if t <= self.phase1:
            return self.lr_start + (self.lr_peak - self.lr_start) * (
                1.0 - math.cos(math.pi * t / self.phase1)) / 2.0
        return self.lr_end + (self.lr_peak - self.lr_end) * (
            1.0 + math.cos(math.pi * (t - self.phase1) / self.phase2)) / 2.0

    def mom_at(self, t):
        self._check(t)
        if t <= self.phase1:
            return self.mom_start + (self.mom_trough - self.mom_start) * (
                1.0 - math.cos(math.pi * t / self.phase1)) / 2.0
        return self.mom_start + (self.mom_trough - self.mom_start) * (
            1.0 + math.cos(math.pi * (t - self.phase1) / self.phase2)) / 2.0

    def at_iteration(self, i):
        """(lr, momentum) at global iteration i of iterations_per_epoch."""
        t = i / self.iterations_per_epoch
        return self.lr_at(t), self.mom_at(t)


def compressed_schedule(epochs):
    """One-cycle schedule squeezed into `epochs` at the 60/140 split."""
    if epochs <= 0:
        raise ConfigError(f"schedule needs a positive epoch count, got {epochs}")
    phase1 = epochs * 0.3
    # remainder, not 0.7*epochs: the two must sum to exactly `epochs`
    return OneCycleSchedule(phase1=phase1, phase2=epochs - phase1)


class AdamW:
    """Adam with decoupled weight decay; beta1 is supplied per step.

    Decay multiplies each weight by (1 - lr*wd) before the adaptive
    update.  Parameters flagged no_decay (norm affines, attention
    gates) and frozen parameters are never decayed; frozen parameters
    are skipped entirely.  Bias correction uses the current beta1.
    """

    def __init__(self, model, beta2=0.99, eps=1e-8, weight_decay=1e-3):
        if not 0 <= beta2 < 1:
            raise ConfigError(f"beta2 must be in [0, 1), got {beta2}")
        if eps <= 0:
            raise ConfigError(f"eps must be positive, got {eps}")
        if weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}")
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
        self._m = {n: np.zeros_like(p.data) for n, p in self._named}
        self._v = {n: np.zeros_like(p.data) for n, p in self._named}

    def zero_grads(self):
        for _, p in self._named:
            p.grad = None

    def step(self, lr, beta1):
        if lr <= 0:
            raise ContractError(f"step needs lr > 0, got {lr}")
        if not 0 <= beta1 < 1:
            raise ContractError(f"beta1 must be in [0, 1), got {beta1}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self._named:
            g = p.grad
            if g is None:
                raise ContractError(f"parameter {name!r} has no gradient; "
                                    "call backward before step")
            if self.weight_decay and not getattr(p, "no_decay", False):
                p.data *= 1.0 - lr * self.weight_decay
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self):
        """Moment buffers plus step count, keyed for checkpointing."""
        entries = {}
        for name, _ in self._named:
            entries[name + ".m"] = self._m[name]
            entries[name + ".v"] = self._v[name]
        return {"step": self.step_count, "entries": entries}

    def load_state(self, state):
        self.step_count = int(state["step"])
        entries = state["entries"]
        for name, p in self._named:
            for suffix, store in ((".m", self._m), (".v", self._v)):
                key = name + suffix
                if key not in entries:
                    raise ContractError(f"optimizer state missing {key!r}")
                arr = np.asarray(entries[key], dtype=p.data.dtype)
                if arr.shape != p.data.shape:
                    raise ContractError(
                        f"optimizer state {key!r} has shape {arr.shape}, "
                        f"parameter is {p.data.shape}")
                store[name] = arr.copy()


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    flip_h: float = 0.5
    flip_v: float = 0.5
    rotations: tuple = (0, 90, 180, 270)
    brightness_range: tuple = (0.9, 1.1)
    contrast_range: tuple = (0.9, 1.1)

    def validate(self):
        for name, p in (("flip_h", self.flip_h), ("flip_v", self.flip_v)):
            if not 0 <= p <= 1:
                raise ConfigError(f"{name} probability must be in [0,1], got {p}")
        if not self.rotations or any(r not in (0, 90, 180, 270) for r in self.rotations):
            raise ConfigError(f"rotations must be right angles, got {self.rotations}")
        for name, (lo, hi) in (("brightness_range", self.brightness_range),
                               ("contrast_range", self.contrast_range)):
            if not (0 < lo <= hi):
                raise ConfigError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        return self


def identity_augment():
    """Config whose every draw is a no-op (for determinism tests)."""
    return AugmentConfig(flip_h=0.0, flip_v=0.0, rotations=(0,),
                         brightness_range=(1.0, 1.0), contrast_range=(1.0, 1.0))


def augment(rgb, cube, cfg, rng):
    """Jointly augment an aligned (rgb, cube) pair.

    Flips, right-angle rotations and brightness apply identically to
    both arrays; contrast jitter perturbs only the rgb input, pulling
    it toward or away from its per-channel mean.  Draw order is fixed
    (flip_h, flip_v, rotation, brightness, contrast) so a seeded rng
    reproduces the run exactly.  Inputs are never mutated.
    """
    cfg.validate()
    rgb = np.asarray(rgb)
    cube = np.asarray(cube)
    if rgb.ndim != 3 or cube.ndim != 3:
        raise DimensionError(
            f"augment expects (C,H,W) arrays, got {rgb.shape} and {cube.shape}")
    if rgb.shape[1:] != cube.shape[1:]:
        raise DimensionError(
            f"rgb {rgb.shape} and cube {cube.shape} are not spatially aligned")

    do_h = rng.random() < cfg.flip_h
    do_v = rng.random() < cfg.flip_v
    angle = cfg.rotations[rng.integers(len(cfg.rotations))]
    brightness = rng.uniform(*cfg.brightness_range)
    contrast = rng.uniform(*cfg.contrast_range)

    if do_h:
        rgb, cube = rgb[:, :, ::-1], cube[:, :, ::-1]
    if do_v:
        rgb, cube = rgb[:, ::-1, :], cube[:, ::-1, :]
    if angle:
        k = angle // 90
        rgb = np.rot90(rgb, k, axes=(1, 2))
        cube = np.rot90(cube, k, axes=(1, 2))
    rgb = np.ascontiguousarray(rgb)
    cube = np.ascontiguousarray(cube)
    if brightness != 1.0:
        rgb = rgb * brightness
        cube = cube * brightness
    if contrast != 1.0:
        mean = rgb.mean(axis=(1, 2), keepdims=True)
        rgb = (rgb - mean) * contrast + mean
    return rgb, cube


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass
class NormalizationStats:
    """Per-channel mean/std for the rgb input and the cube target."""

    rgb_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rgb_std: np.ndarray = field(default_factory=lambda: np.ones(3))
    cube_mean: np.ndarray = field(default_factory=lambda: np.zeros(31))
    cube_std: np.ndarray = field(default_factory=lambda: np.ones(31))

    def validate(self):
        for name in ("rgb_std", "cube_std"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ConfigError(f"{name} must be strictly positive")
        return self

    def _select(self, channels, kind):
        if kind == "rgb" or (kind is None and channels == len(self.rgb_mean)):
            return np.asarray(self.rgb_mean), np.asarray(self.rgb_std)
        if kind == "cube" or (kind is None and channels == len(self.cube_mean)):
            return np.asarray(self.cube_mean), np.asarray(self.cube_std)
        raise ConfigError(
            f"no stats for a {channels}-channel array; pass kind='rgb' or 'cube'")

    @classmethod
    def from_pairs(cls, pairs):
        """Dataset-wide per-channel moments from (rgb, cube) arrays.

        Accumulates running sums so images of different sizes weight by
        their pixel counts; stds are floored at 1e-8 so constant
        channels stay normalizable.
        """
        if not pairs:
            raise ConfigError("cannot compute stats from an empty dataset")

        def moments(arrays):
            total = sq = None
            count = 0
            for a in arrays:
                a = np.asarray(a, dtype=np.float64)
                s = a.sum(axis=(1, 2))
                if total is None:
                    total, sq = s, (a * a).sum(axis=(1, 2))
                else:
                    total = total + s
                    sq = sq + (a * a).sum(axis=(1, 2))
                count += a.shape[1] * a.shape[2]
            mean = total / count
            var = np.maximum(sq / count - mean * mean, 0.0)
            return mean, np.maximum(np.sqrt(var), 1e-8)

        rgb_mean, rgb_std = moments(r for r, _ in pairs)
        cube_mean, cube_std = moments(c for _, c in pairs)
        return cls(rgb_mean=rgb_mean, rgb_std=rgb_std,
                   cube_mean=cube_mean, cube_std=cube_std).validate()


def _channel_view(arr, values):
    shape = [1] * arr.ndim
    shape[-3] = len(values)
    return np.asarray(values, dtype=arr.dtype).reshape(shape)


def normalize(x, stats, kind=None):
    """(x - mean) / std per channel; channel count picks rgb vs cube stats."""
    stats.validate()
    x = np.asarray(x)
    if x.ndim < 3:
        raise DimensionError(f"normalize expects (...,C,H,W), got shape {x.shape}")
    mean, std = stats._select(x.shape[-3], kind)
    return (x - _channel_view(x, mean)) / _channel_view(x, std)


def denormalize(x, stats, kind=None):
    stats.validate()
    x = np.asarray(x)
    if x.ndim < 3:
        raise DimensionError(f"denormalize expects (...,C,H,W), got shape {x.shape}")
    mean, std = stats._select(x.shape[-3], kind)
    return x * _channel_view(x, std) + _channel_view(x, mean)


# ---------------------------------------------------------------------------
# fit loop
# ---------------------------------------------------------------------------

def fit(model, pairs, loss_net, epochs, schedule=None, weights=None,
        optimizer=None, batch_size=2, stats=None, augment_cfg=None, seed=0,
        log_path=None, val_pairs=None, checkpoint_path=None):
    """Train `model` on (rgb, cube) pairs; returns the training log.

    Each iteration: augment -> normalize -> forward -> weighted loss ->
    backward -> AdamW step at the fractional-epoch lr/momentum.  One
    log record per iteration plus one epoch summary (with validation
    MRAE when val_pairs is given); records are appended to log_path as
    JSON lines when set.  A NaN/Inf loss aborts with the iteration
    index, lr and loss terms in the message.
    """
    if not pairs:
        raise ConfigError("fit needs a non-empty dataset")
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if epochs == 0:
        return []

    if schedule is None:
        schedule = compressed_schedule(epochs)
    if schedule.total_epochs < epochs:
        raise ConfigError(
            f"schedule covers {schedule.total_epochs} epochs but fit was asked "
            f"for {epochs}")
    weights = (weights or LossWeights()).validate()
    optimizer = optimizer or AdamW(model)
    stats = (stats or NormalizationStats()).validate()
    augment_cfg = (augment_cfg or AugmentConfig()).validate()
    rng = np.random.default_rng(seed)

    iters_per_epoch = max(1, -(-len(pairs) // batch_size))
    log = []
    log_file = open(log_path, "a") if log_path else None

    def emit(record):
        log.append(record)
        if log_file:
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()

    try:
        global_iter = 0
        model.train()
        for epoch in range(epochs):
            order = rng.permutation(len(pairs))
            epoch_losses = []
            for start in range(0, len(order), batch_size):
                batch_ids = order[start:start + batch_size]
                xs, ys = [], []
                for i in batch_ids:
                    rgb, cube = augment(pairs[i][0], pairs[i][1], augment_cfg, rng)
                    xs.append(normalize(rgb, stats, kind="rgb"))
                    ys.append(normalize(cube, stats, kind="cube"))
                try:
                    xb = np.stack(xs).astype(np.float32)
                    yb = np.stack(ys).astype(np.float32)
                except ValueError as exc:
                    raise DimensionError(
                        f"batch images disagree in shape: {exc}") from None

                t = global_iter / iters_per_epoch
                lr = schedule.lr_at(t)
                mom = schedule.mom_at(t)
                pred = model(Tensor(xb))
                total, parts = loss_breakdown(pred, Tensor(yb), loss_net, weights)
                if not np.isfinite(total.data):
                    raise NumericsError(
                        f"non-finite loss at iteration {global_iter} "
                        f"(epoch {epoch}, lr {lr:.3e}): terms {parts}")
                optimizer.zero_grads()
                total.backward()
                optimizer.step(lr, mom)
                epoch_losses.append(parts["total"])
                emit({"kind": "iteration", "epoch": epoch, "iter": global_iter,
                      "t": round(t, 6), "lr": lr, "momentum": mom, **parts})
                global_iter += 1

            summary = {"kind": "epoch", "epoch": epoch,
                       "mean_loss": float(np.mean(epoch_losses))}
            if val_pairs:
                summary["val_mrae"] = _validation_mrae(model, val_pairs, stats)
                model.train()
            emit(summary)
            if checkpoint_path is not None:
                from .formats import save_checkpoint
                save_checkpoint(checkpoint_path, model, optimizer=optimizer)
    finally:
        if log_file:
            log_file.close()
    return log


def _validation_mrae(model, val_pairs, stats):
    from .metrics import mrae
    from .tensor import no_grad
    model.eval()
    scores = []
    with no_grad():
        for rgb, cube in val_pairs:
            x = normalize(np.asarray(rgb), stats, kind="rgb")[None].astype(np.float32)
            pred = model(Tensor(x)).data[0]
            pred = denormalize(pred, stats, kind="cube")
            scores.append(mrae(pred, np.asarray(cube)))
    return float(np.mean(scores))
