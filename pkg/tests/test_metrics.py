"""Evaluation metrics, dataset reports, and the latency benchmark."""

import logging

import numpy as np
import pytest

from mxrunet.errors import ConfigError, DimensionError, DomainError
from mxrunet.metrics import (
    LatencyReport, MetricReport, benchmark_latency, evaluate_dataset, mrae,
    rmse,
)
from mxrunet.model import ModelConfig, build_unet
from mxrunet.selftest import synthetic_pairs
from mxrunet.tensor import Tensor
from mxrunet.training import NormalizationStats


def test_mrae_relative_identity():
    rng = np.random.default_rng(0)
    true = rng.uniform(0.2, 1.0, (31, 8, 8))
    assert mrae(true * 1.1, true, eps=0.0) == pytest.approx(0.1, abs=1e-6)
    assert mrae(true, true) == 0.0


def test_mrae_hand_case_exact():
    assert mrae(np.array([1.0, 3.0]), np.array([2.0, 2.0]), eps=0.0) == 0.5


def test_mrae_eps_guards_small_denominators():
    true = np.array([0.0])
    pred = np.array([1.0])
    assert np.isfinite(mrae(pred, true, eps=1e-6))
    with pytest.raises(DomainError):
        mrae(pred, true, eps=-1.0)


def test_mrae_accepts_tensors():
    a = Tensor(np.array([1.0, 3.0]))
    b = Tensor(np.array([2.0, 2.0]))
    assert mrae(a, b, eps=0.0) == 0.5


def test_rmse_hand_cases():
    assert rmse(np.array([1.0, 3.0]), np.array([2.0, 2.0])) == 1.0
    assert rmse(np.zeros(4), np.zeros(4)) == 0.0
    assert rmse(np.array([3.0]), np.array([0.0])) == 3.0


def test_metrics_reject_shape_mismatch():
    with pytest.raises(DimensionError):
        mrae(np.zeros(3), np.zeros(4))
    with pytest.raises(DimensionError):
        rmse(np.zeros((2, 2)), np.zeros(4))


def test_metric_report_lines_and_records():
    report = MetricReport(mrae=0.1, rmse=0.05, per_image_mrae=[0.1, 0.1],
                          per_image_rmse=[0.04, 0.06], count=2)
    text = "\n".join(report.lines())
    assert "0.1" in text and "2" in text
    records = list(report.records())
    assert records[-1]["kind"] == "aggregate"
    assert len([r for r in records if r["kind"] == "image"]) == 2


class IdentityModel:
    """Maps rgb straight to a 31-band cube by tiling; for plumbing tests."""

    def eval(self):
        return self

    def __call__(self, x):
        data = x.data if isinstance(x, Tensor) else x
        return Tensor(np.repeat(data, 11, axis=1)[:, :31])


def test_evaluate_dataset_on_arrays():
    pairs = synthetic_pairs(count=3, size=32, seed=0)
    model = build_unet(ModelConfig(encoder_depth=18, width_multiplier=0.125),
                       seed=0)
    report = evaluate_dataset(model, pairs)
    assert report.count == 3
    assert len(report.per_image_mrae) == 3
    assert report.mrae == pytest.approx(float(np.mean(report.per_image_mrae)),
                                        rel=1e-6)
    assert np.isfinite(report.rmse)


def test_evaluate_dataset_perfect_model_scores_zero():
    rng = np.random.default_rng(1)
    rgb = rng.uniform(0.2, 1.0, (3, 8, 8)).astype(np.float32)
    cube = np.repeat(rgb, 11, axis=0)[:31]
    report = evaluate_dataset(IdentityModel(), [(rgb, cube)], eps=0.0)
    assert report.mrae == 0.0 and report.rmse == 0.0


def test_evaluate_dataset_clamps_when_asked():
    rgb = np.full((3, 8, 8), 2.0, dtype=np.float32)
    cube = np.ones((31, 8, 8), dtype=np.float32)
    report = evaluate_dataset(IdentityModel(), [(rgb, cube)],
                              clamp_to_unit=True, eps=0.0)
    assert report.mrae == 0.0


def test_evaluate_dataset_empty_and_skip_errors(caplog):
    with pytest.raises(ConfigError):
        evaluate_dataset(IdentityModel(), [])
    bad = ("missing_rgb.ppm", "missing_cube.hsc")
    with pytest.raises(Exception):
        evaluate_dataset(IdentityModel(), [bad])
    good = synthetic_pairs(count=1, size=8, seed=2)[0]
    rgb, _ = good
    cube = np.repeat(rgb, 11, axis=0)[:31]
    with caplog.at_level(logging.WARNING):
        report = evaluate_dataset(IdentityModel(), [bad, (rgb, cube)],
                                  eps=0.0, skip_errors=True)
    assert report.count == 1
    assert any("skip" in rec.message.lower() for rec in caplog.records)
    with pytest.raises(ConfigError):
        evaluate_dataset(IdentityModel(), [bad], skip_errors=True)


def test_evaluate_dataset_applies_normalization_stats():
    pairs = synthetic_pairs(count=2, size=32, seed=3)
    stats = NormalizationStats.from_pairs(pairs)
    model = build_unet(ModelConfig(encoder_depth=18, width_multiplier=0.125),
                       seed=0)
    with_stats = evaluate_dataset(model, pairs, stats=stats)
    without = evaluate_dataset(model, pairs)
    assert with_stats.mrae != without.mrae


def test_benchmark_latency_report_fields():
    model = build_unet(ModelConfig(encoder_depth=18, width_multiplier=0.125),
                       seed=0)
    report = benchmark_latency(model, 32, warmup=3, runs=10, threads=1,
                               model_id="tiny", seed=0)
    assert isinstance(report, LatencyReport)
    assert report.model_id == "tiny"
    assert report.input_size == (32, 32)
    assert len(report.times) == 10
    assert report.median_s == float(np.median(report.times))
    assert report.median_s > 0
    assert "tiny" in "\n".join(report.lines())
    assert report.record()["runs"] == 10


def test_benchmark_latency_enforces_minimums():
    model = IdentityModel()
    with pytest.raises(ConfigError):
        benchmark_latency(model, 32, warmup=2, runs=10)
    with pytest.raises(ConfigError):
        benchmark_latency(model, 32, warmup=3, runs=9)
