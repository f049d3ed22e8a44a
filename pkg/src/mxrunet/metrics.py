"""Reconstruction metrics (MRAE, RMSE), dataset evaluation, and the
wall-clock latency benchmark.

MRAE divides the absolute error by the ground truth plus a small
epsilon (dark pixels can be exactly 0); the benchmark pins the BLAS
thread count, discards warmup passes, and reports the median over at
least 10 timed forward passes.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def mrae(pred, true, eps=1e-6):
    """Mean over voxels of |pred - true| / (true + eps)."""
    pred = _as_array(pred)
    true = _as_array(true)
    if pred.shape != true.shape:
        raise DimensionError(f"mrae shape mismatch: {pred.shape} vs {true.shape}")
    if eps < 0:
        raise DomainError(f"mrae eps must be >= 0, got {eps}")
    return float(np.mean(np.abs(pred - true) / (true + eps)))


def rmse(pred, true):
    """Root of the mean squared voxel difference."""
    pred = _as_array(pred)
    true = _as_array(true)
    if pred.shape != true.shape:
        raise DimensionError(f"rmse shape mismatch: {pred.shape} vs {true.shape}")
    diff = pred - true
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass
class MetricReport:
    mrae: float
    rmse: float
    per_image_mrae: list
    per_image_rmse: list
    count: int

    def lines(self):
        yield f"images evaluated: {self.count}"
        yield f"MRAE: {self.mrae:.6f}"
        yield f"RMSE: {self.rmse:.6f}"

    def records(self):
        """One machine-readable dict per image plus an aggregate."""
        for i, (m, r) in enumerate(zip(self.per_image_mrae, self.per_image_rmse)):
            yield {"kind": "image", "index": i, "mrae": m, "rmse": r}
        yield {"kind": "aggregate", "count": self.count,
               "mrae": self.mrae, "rmse": self.rmse}


def evaluate_dataset(model, pairs, stats=None, eps=1e-6, clamp_to_unit=False,
                     skip_errors=False):
    """Per-image MRAE/RMSE over (rgb, cube) pairs; aggregate is the mean.

    Pairs hold arrays or file paths (loaded on demand).  The model runs
    in eval mode with no gradient graph; outputs are denormalized with
    `stats` when given and clamped to [0, 1] only when the dataset is
    declared unit-range via clamp_to_unit.  Unreadable or failing pairs
    abort by default, or are logged and skipped with skip_errors.
    """
    if not pairs:
        raise ConfigError("evaluate_dataset needs a non-empty pair list")
    if hasattr(model, "eval"):
        model.eval()
    per_mrae, per_rmse = [], []
    with no_grad():
        for idx, (rgb_src, cube_src) in enumerate(pairs):
            try:
                rgb, cube = _load_pair(rgb_src, cube_src)
                x = rgb
                if stats is not None:
                    from .training import normalize
                    x = normalize(x, stats, kind="rgb")
                pred = model(Tensor(x[None].astype(np.float32))).data[0]
                if stats is not None:
                    from .training import denormalize
                    pred = denormalize(pred, stats, kind="cube")
                if clamp_to_unit:
                    pred = np.clip(pred, 0.0, 1.0)
                per_mrae.append(mrae(pred, cube, eps=eps))
                per_rmse.append(rmse(pred, cube))
            except Exception as exc:
                if not skip_errors:
                    raise
                log.warning("skipping pair %d (%s): %s", idx, rgb_src, exc)
    if not per_mrae:
        raise ConfigError("no pair could be evaluated")
    return MetricReport(mrae=float(np.mean(per_mrae)),
                        rmse=float(np.mean(per_rmse)),
                        per_image_mrae=per_mrae,
                        per_image_rmse=per_rmse,
                        count=len(per_mrae))


def _load_pair(rgb_src, cube_src):
    from .formats import read_cube, read_rgb
    if isinstance(rgb_src, (str, bytes)) or hasattr(rgb_src, "__fspath__"):
        rgb = read_rgb(rgb_src)
    else:
        rgb = np.asarray(rgb_src)
    if isinstance(cube_src, (str, bytes)) or hasattr(cube_src, "__fspath__"):
        cube = read_cube(cube_src)
    else:
        cube = np.asarray(cube_src)
    return rgb, cube


@dataclass
class LatencyReport:
    model_id: str
    input_size: tuple
    warmup: int
    runs: int
    times: list
    median_s: float
    mean_s: float
    threads: int

    def lines(self):
        h, w = self.input_size
        yield f"model: {self.model_id}"
        yield f"input: {h}x{w}, threads: {self.threads}"
        yield f"runs: {self.runs} (after {self.warmup} warmup)"
        yield f"median: {self.median_s:.4f} s/image"
        yield f"mean:   {self.mean_s:.4f} s/image"

    def record(self):
        return {"kind": "latency", "model": self.model_id,
                "input": list(self.input_size), "warmup": self.warmup,
                "runs": self.runs, "threads": self.threads,
                "median_s": self.median_s, "mean_s": self.mean_s,
                "times": self.times}


def benchmark_latency(model, input_size, warmup=3, runs=10, threads=1,
                      model_id="model", seed=0):
    """Median/mean wall time of bare forward passes on one random input.

    Only the forward pass is timed (no IO, no loss, no gradient graph).
    The BLAS thread pool is pinned to `threads` for the whole
    measurement.
    """
    if warmup < 3:
        raise ConfigError(f"warmup must be >= 3, got {warmup}")
    if runs < 10:
        raise ConfigError(f"runs must be >= 10, got {runs}")
    if isinstance(input_size, int):
        input_size = (input_size, input_size)
    h, w = input_size
    in_channels = getattr(getattr(model, "config", None), "in_channels", 3)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, in_channels, h, w)).astype(np.float32))
    if hasattr(model, "eval"):
        model.eval()

    from threadpoolctl import threadpool_limits
    times = []
    with threadpool_limits(limits=threads):
        with no_grad():
            for _ in range(warmup):
                model(x)
            for _ in range(runs):
                start = time.perf_counter()
                model(x)
                times.append(time.perf_counter() - start)
    return LatencyReport(model_id=model_id, input_size=(h, w), warmup=warmup,
                         runs=runs, times=times,
                         median_s=float(np.median(times)),
                         mean_s=float(np.mean(times)), threads=threads)
