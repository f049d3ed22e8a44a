"""Built-in verification suites behind `mxrunet selftest`.

Each check answers one question about the implementation with an
independent oracle where one exists: gradients against central finite
differences, the schedule against its closed form, layer algebra
against hand-computed or structural identities, shapes and parameter
counts against the documented contract, and training against a small
synthetic task the model must overfit.  The runner prints one PASS or
FAIL line per suite and exits nonzero if any suite fails, so the same
code backs both the CLI command and the acceptance tests.
"""

from __future__ import annotations

import gc
import sys
import time

import numpy as np

from .errors import ContractError, DimensionError, DomainError
from .layers import (
    BatchNorm2d, ConvLayer, DecoderBlock, PixelShuffleUpsampler,
    ResidualBlock, SelfAttention, Stem, blur, mish, pixel_shuffle,
    pixel_unshuffle,
)
from .loss import (
    LossNetwork, LossWeights, extract_features, feature_loss, gram,
    loss_breakdown, pixel_loss, style_loss, total_loss,
)
from .metrics import benchmark_latency, evaluate_dataset, mrae, rmse
from .model import ModelConfig, build_unet
from .tensor import (
    Tensor, avg_pool2d, backward, batch_norm2d, concat_channels, conv2d,
    finite_diff_grad, max_pool2d, no_grad, pad2d, softmax,
)
from .training import (
    NormalizationStats, OneCycleSchedule, compressed_schedule,
    identity_augment,
)


class CheckFailure(AssertionError):
    """A suite assertion failed; the message says which and by how much."""


def _require(condition, message):
    if not condition:
        raise CheckFailure(message)


# ---------------------------------------------------------------------------
# 1. gradients: every op and layer against central finite differences.

GRAD_REL = 1e-4
GRAD_ABS = 1e-7          # used where the reference gradient is below 1e-4


def _grad_gap(analytic, numeric):
    """(worst relative error on large entries, worst absolute on small)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise CheckFailure(
            f"gradient shape {analytic.shape} != reference {numeric.shape}")
    diff = np.abs(analytic - numeric)
    large = np.abs(numeric) >= 1e-4
    worst_rel = float((diff[large] / np.abs(numeric[large])).max()) \
        if large.any() else 0.0
    worst_abs = float(diff[~large].max()) if (~large).any() else 0.0
    return worst_rel, worst_abs


def _fd_full(forward, param, h):
    """Central differences over every element of `param`."""
    def probe(t):
        saved = param.data
        param.data = t.data
        try:
            with no_grad():
                return forward()
        finally:
            param.data = saved
    return finite_diff_grad(probe, Tensor(param.data), h).data


def _fd_spot(forward, param, indices, h):
    """Central differences at selected flat indices only."""
    flat = param.data.reshape(-1)
    out = np.zeros(len(indices))
    with no_grad():
        for k, i in enumerate(indices):
            saved = flat[i]
            flat[i] = saved + h
            up = float(forward().data)
            flat[i] = saved - h
            down = float(forward().data)
            flat[i] = saved
            out[k] = (up - down) / (2.0 * h)
    return out


def _check_grad(label, forward, param, h=1e-6, spot=None, rng=None):
    param.grad = None
    loss = forward()
    backward(loss)
    _require(param.grad is not None, f"{label}: no gradient reached the leaf")
    analytic = np.array(param.grad, dtype=np.float64)
    if spot is None:
        numeric = _fd_full(forward, param, h)
    else:
        count = min(spot, param.size)
        indices = rng.choice(param.size, size=count, replace=False)
        numeric = _fd_spot(forward, param, indices, h)
        analytic = analytic.reshape(-1)[indices]
    worst_rel, worst_abs = _grad_gap(analytic, numeric)
    _require(worst_rel < GRAD_REL and worst_abs < GRAD_ABS,
             f"{label}: rel err {worst_rel:.3e} (limit {GRAD_REL:.0e}), "
             f"small-entry abs err {worst_abs:.3e} (limit {GRAD_ABS:.0e})")
    return worst_rel


def _away_from_zero(x, margin=0.25):
    """Shift values off 0 so relu/abs/max kinks stay clear of the probe."""
    return x + np.where(x >= 0, margin, -margin)


def _leaf(rng, shape, low=None, high=None, signed=True):
    if low is not None:
        data = rng.uniform(low, high, size=shape)
    else:
        data = rng.standard_normal(shape)
        if not signed:
            data = np.abs(data) + 0.5
    return Tensor(data.astype(np.float64), requires_grad=True)


def _op_cases(rng):
    """(label, forward, param) triples for raw tensor ops, one seed."""
    cases = []

    x = _leaf(rng, (2, 3, 4))
    x.data = _away_from_zero(x.data)
    cases.append(("elementwise chain", lambda x=x: (
        x.tanh() + x.softplus() * 0.5 - x.relu() * 0.25 + abs(x) * 0.1
    ).mean(), x))

    p = _leaf(rng, (3, 5), low=0.5, high=2.0)
    cases.append(("exp/log/div", lambda p=p: (
        (p.exp().log() * p + p / 3.0).sum()), p))

    a = _leaf(rng, (2, 3, 1, 4))
    b = _leaf(rng, (3, 5, 1))
    cases.append(("broadcast add lhs", lambda a=a, b=b: (a + b).tanh().mean(), a))
    cases.append(("broadcast mul rhs", lambda a=a, b=b: (a * b).tanh().mean(), b))

    s = _leaf(rng, (3, 4, 5))
    cases.append(("sum/mean axes", lambda s=s: (
        s.sum(axis=(0, 2)).mean() + s.mean(axis=1).sum() * 0.5), s))

    r = _leaf(rng, (2, 3, 4))
    cases.append(("reshape/transpose", lambda r=r: (
        r.reshape(6, 4).transpose(1, 0).tanh().mean()), r))

    m1 = _leaf(rng, (3, 4))
    m2 = _leaf(rng, (4, 5))
    cases.append(("matmul 2d lhs", lambda m1=m1, m2=m2: (m1 @ m2).tanh().mean(), m1))
    cases.append(("matmul 2d rhs", lambda m1=m1, m2=m2: (m1 @ m2).tanh().mean(), m2))
    bm1 = _leaf(rng, (2, 3, 4))
    bm2 = _leaf(rng, (2, 4, 5))
    cases.append(("matmul batched", lambda a=bm1, b=bm2: (a @ b).tanh().mean(),
                  bm1))

    sm = _leaf(rng, (2, 5))
    wfix = Tensor(rng.standard_normal((2, 5)))
    cases.append(("softmax", lambda sm=sm, w=wfix: (
        softmax(sm, axis=-1) * w).sum(), sm))

    c1 = _leaf(rng, (1, 2, 3, 3))
    c2 = _leaf(rng, (1, 4, 3, 3))
    cases.append(("concat lhs", lambda a=c1, b=c2: (
        concat_channels([a, b]).tanh().mean()), c1))
    cases.append(("concat rhs", lambda a=c1, b=c2: (
        concat_channels([a, b]).tanh().mean()), c2))

    for mode in ("zero", "replicate", "reflect"):
        px = _leaf(rng, (1, 2, 4, 5))
        cases.append((f"pad2d {mode}", lambda px=px, mode=mode: (
            pad2d(px, (1, 2, 2, 1), mode).tanh().mean()), px))

    cx = _leaf(rng, (2, 3, 6, 6))
    cw = _leaf(rng, (4, 3, 3, 3))
    cb = _leaf(rng, (4,))
    conv_fwd = lambda x=cx, w=cw, b=cb: conv2d(x, w, b, stride=1, pad=1).tanh().mean()
    cases.append(("conv2d s1p1 input", conv_fwd, cx))
    cases.append(("conv2d s1p1 weight", conv_fwd, cw))
    cases.append(("conv2d s1p1 bias", conv_fwd, cb))
    c2x = _leaf(rng, (1, 2, 6, 6))
    c2w = _leaf(rng, (3, 2, 2, 2))
    conv2_fwd = lambda x=c2x, w=c2w: conv2d(x, w, stride=2).tanh().mean()
    cases.append(("conv2d s2 k2 input", conv2_fwd, c2x))
    cases.append(("conv2d s2 k2 weight", conv2_fwd, c2w))
    c3x = _leaf(rng, (1, 3, 4, 4))
    c3w = _leaf(rng, (5, 3, 1, 1))
    cases.append(("conv2d 1x1 weight", lambda x=c3x, w=c3w: (
        conv2d(x, w).tanh().mean()), c3w))

    ax = _leaf(rng, (1, 2, 5, 5))
    cases.append(("avg_pool2d k2s2", lambda ax=ax: (
        avg_pool2d(ax, 2, stride=2).tanh().mean()), ax))
    cases.append(("avg_pool2d blur window", lambda ax=ax: (
        avg_pool2d(ax, 2, stride=1, pad_mode="replicate",
                     pad=(1, 0, 1, 0)).tanh().mean()), ax))

    mx = _leaf(rng, (1, 2, 6, 6))
    cases.append(("max_pool2d k2s2", lambda mx=mx: (
        max_pool2d(mx, 2, stride=2).tanh().mean()), mx))
    cases.append(("max_pool2d k3s2p1", lambda mx=mx: (
        max_pool2d(mx, 3, stride=2, pad=1).tanh().mean()), mx))

    shx = _leaf(rng, (1, 8, 3, 3))
    cases.append(("pixel_shuffle", lambda shx=shx: (
        pixel_shuffle(shx, 2).tanh().mean()), shx))

    bx = _leaf(rng, (3, 4, 5, 5))
    bg = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True)
    bb = Tensor(rng.standard_normal(4), requires_grad=True)
    brm = np.zeros(4)
    brv = np.ones(4)
    bn_fwd = lambda x=bx, g=bg, b=bb: batch_norm2d(
        x, g, b, brm, brv, training=True).tanh().mean()
    cases.append(("batch_norm train input", bn_fwd, bx))
    cases.append(("batch_norm train gamma", bn_fwd, bg))
    cases.append(("batch_norm train beta", bn_fwd, bb))
    erm = rng.standard_normal(4)
    erv = rng.uniform(0.5, 2.0, 4)
    bn_eval = lambda x=bx, g=bg, b=bb: batch_norm2d(
        x, g, b, erm, erv, training=False).tanh().mean()
    cases.append(("batch_norm eval input", bn_eval, bx))
    cases.append(("batch_norm eval gamma", bn_eval, bg))
    return cases


def _layer_cases(rng):
    """(label, forward, param) triples for composite layers, one seed."""
    f64 = np.float64
    cases = []

    mix = _leaf(rng, (1, 3, 5, 5))
    cases.append(("mish", lambda x=mix: mish(x).mean(), mix))

    layer = ConvLayer(3, 4, 3, rng=rng, dtype=f64)
    lx = Tensor(rng.standard_normal((2, 3, 5, 5)), requires_grad=True)
    layer_fwd = lambda x=lx, l=layer: l(x).mean()
    cases.append(("ConvLayer input", layer_fwd, lx))
    cases.append(("ConvLayer conv weight", layer_fwd, layer.conv.weight))
    cases.append(("ConvLayer bn gamma", layer_fwd, layer.bn.gamma))

    up = PixelShuffleUpsampler(4, 2, rng=rng, dtype=f64)
    ux = Tensor(rng.standard_normal((1, 4, 3, 3)), requires_grad=True)
    up_fwd = lambda x=ux, u=up: u(x).mean()
    cases.append(("upsampler input", up_fwd, ux))
    cases.append(("upsampler weight", up_fwd, up.weight))

    bx = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
    cases.append(("blur", lambda x=bx: blur(x).tanh().mean(), bx))

    sa = SelfAttention(8, rng=rng, dtype=f64)
    sx = Tensor(rng.standard_normal((1, 8, 3, 3)), requires_grad=True)
    sa_fwd = lambda x=sx, s=sa: s(x).tanh().mean()
    cases.append(("attention input", sa_fwd, sx))
    cases.append(("attention query", sa_fwd, sa.query))
    cases.append(("attention value", sa_fwd, sa.value))
    cases.append(("attention gamma", sa_fwd, sa.gamma))

    basic = ResidualBlock(4, 6, kind="basic", stride=2, rng=rng, dtype=f64)
    rbx = Tensor(rng.standard_normal((1, 4, 6, 6)), requires_grad=True)
    basic_fwd = lambda x=rbx, b=basic: b(x).mean()
    cases.append(("basic block input", basic_fwd, rbx))
    cases.append(("basic block conv weight", basic_fwd,
                  basic.convs[0].conv.weight))

    neck = ResidualBlock(8, 8, kind="bottleneck", hidden=2, rng=rng, dtype=f64)
    nx = Tensor(rng.standard_normal((1, 8, 4, 4)), requires_grad=True)
    cases.append(("bottleneck block input", lambda x=nx, b=neck: b(x).mean(), nx))

    dec = DecoderBlock(8, 4, rng=rng, dtype=f64)
    dup = Tensor(rng.standard_normal((1, 8, 3, 3)), requires_grad=True)
    dskip = Tensor(rng.standard_normal((1, 4, 6, 6)), requires_grad=True)
    dec_fwd = lambda u=dup, s=dskip, d=dec: d(u, s).mean()
    cases.append(("decoder up input", dec_fwd, dup))
    cases.append(("decoder skip input", dec_fwd, dskip))

    stem = Stem(rng=rng, dtype=f64)
    stx = Tensor(rng.standard_normal((1, 3, 16, 16)), requires_grad=True)
    cases.append(("stem input", lambda x=stx, s=stem: s(x).mean(), stx))
    return cases


def check_gradients():
    worst = 0.0
    total = 0
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        for label, forward, param in _op_cases(rng) + _layer_cases(rng):
            worst = max(worst, _check_grad(f"{label} [seed {seed}]",
                                           forward, param))
            total += 1

    # loss terms, spot-checked through the frozen feature extractor
    for seed in (0, 1, 2):
        rng = np.random.default_rng(100 + seed)
        net = LossNetwork(in_channels=31, seed=seed, dtype=np.float64)
        pred = Tensor(rng.uniform(0.0, 1.0, (1, 31, 8, 8)), requires_grad=True)
        true = Tensor(rng.uniform(0.0, 1.0, (1, 31, 8, 8)))
        for label, weights in (
                ("pixel loss", LossWeights(alpha=(0,) * 3, beta=(0,) * 3)),
                ("feature loss", LossWeights(beta=(0,) * 3, gamma_pix=0.0)),
                ("style loss", LossWeights(alpha=(0,) * 3, gamma_pix=0.0,
                                           beta=(1.0,) * 3)),
                ("total loss", LossWeights())):
            fwd = lambda p=pred, t=true, n=net, w=weights: total_loss(p, t, n, w)
            spot = None if label == "pixel loss" else 25
            worst = max(worst, _check_grad(f"{label} [seed {seed}]", fwd, pred,
                                           h=1e-5, spot=spot, rng=rng))
            total += 1
    return f"{total} cases over 3 seeds, worst rel err {worst:.2e}"


# ---------------------------------------------------------------------------
# 2. schedule: closed-form anchors and exact phase continuity.

def check_schedule():
    sched = OneCycleSchedule()
    anchors = [
        (sched.lr_at, 0.0, 1e-5), (sched.lr_at, 60.0, 1e-3),
        (sched.lr_at, 200.0, 1e-9), (sched.lr_at, 30.0, 5.05e-4),
        (sched.mom_at, 0.0, 0.95), (sched.mom_at, 60.0, 0.85),
        (sched.mom_at, 200.0, 0.95), (sched.mom_at, 30.0, 0.90),
    ]
    for fn, t, expected in anchors:
        got = fn(t)
        rel = abs(got - expected) / abs(expected)
        _require(rel <= 1e-12,
                 f"{fn.__name__}({t}) = {got!r}, expected {expected!r} "
                 f"(rel err {rel:.2e})")

    # both phase formulas must meet the peak bitwise at the boundary
    import math
    right_lr = sched.lr_end + (sched.lr_peak - sched.lr_end) * (
        1.0 + math.cos(0.0)) / 2.0
    right_mom = sched.mom_start + (sched.mom_trough - sched.mom_start) * (
        1.0 + math.cos(0.0)) / 2.0
    _require(sched.lr_at(60.0) == right_lr == sched.lr_peak,
             f"lr discontinuous at phase boundary: "
             f"{sched.lr_at(60.0)!r} vs {right_lr!r}")
    _require(sched.mom_at(60.0) == right_mom == sched.mom_trough,
             f"momentum discontinuous at phase boundary: "
             f"{sched.mom_at(60.0)!r} vs {right_mom!r}")

    for bad in (-0.001, 200.001):
        try:
            sched.lr_at(bad)
        except ContractError:
            pass
        else:
            raise CheckFailure(f"lr_at({bad}) should refuse out-of-range t")

    short = compressed_schedule(7)
    _require(short.total_epochs == 7.0,
             f"compressed total {short.total_epochs!r} != 7.0")
    _require(short.lr_at(short.phase1) == short.lr_peak,
             "compressed schedule peak moved off the phase boundary")
    iters = OneCycleSchedule(iterations_per_epoch=10)
    _require(iters.at_iteration(600) == (1e-3, 0.85),
             "at_iteration(600) should land on the epoch-60 anchor")
    return "8 anchors at 1e-12 relative, boundary bitwise-continuous"


# ---------------------------------------------------------------------------
# 3. layer invariants: initialization and algebraic identities.

def check_layer_invariants():
    rng = np.random.default_rng(0)

    up = PixelShuffleUpsampler(8, 4, scale=2, use_blur=True, rng=rng)
    w = up.weight.data
    _require(w.shape == (16, 8, 1, 1), f"upsampler weight shape {w.shape}")
    groups = w.reshape(4, 4, 8)
    for k in range(4):
        for r in range(1, 4):
            _require(np.array_equal(groups[k, r], groups[k, 0]),
                     "weight replication broken inside shuffle group "
                     f"{k} (sub-kernel {r})")
    x = Tensor(rng.standard_normal((2, 8, 5, 5)).astype(np.float32))
    raw = up.raw_upsample(x).data
    for (si, sj) in ((0, 1), (1, 0), (1, 1)):
        _require(np.array_equal(raw[:, :, si::2, sj::2], raw[:, :, 0::2, 0::2]),
                 f"pre-blur upsample not constant over 2x2 blocks at "
                 f"phase ({si},{sj})")

    y = Tensor(rng.standard_normal((2, 4 * 9, 6, 5)).astype(np.float32))
    shuffled = pixel_shuffle(y, 3)
    back = pixel_unshuffle(shuffled, 3)
    _require(np.array_equal(back.data, y.data),
             "shuffle -> unshuffle is not a bitwise roundtrip")
    small = Tensor(np.arange(1 * 8 * 2 * 3, dtype=np.float32).reshape(1, 8, 2, 3))
    out = pixel_shuffle(small, 2).data
    src = small.data
    for c in range(2):
        for h in range(2):
            for wk in range(3):
                for i in range(2):
                    for j in range(2):
                        _require(out[0, c, h * 2 + i, wk * 2 + j] ==
                                 src[0, c * 4 + i * 2 + j, h, wk],
                                 "pixel_shuffle element placement is wrong")

    sa = SelfAttention(16, rng=rng)
    _require(float(sa.gamma.data) == 0.0, "attention gate must start at 0")
    ax = Tensor(rng.standard_normal((2, 16, 6, 6)).astype(np.float32))
    _require(np.array_equal(sa(ax).data, ax.data),
             "attention with gamma=0 must be a bitwise identity")
    attn = sa.attention_map(ax).data
    _require(attn.shape == (2, 36, 36), f"attention map shape {attn.shape}")
    _require(attn.min() >= 0.0, "attention weights must be non-negative")
    row_err = float(np.abs(attn.sum(axis=-1) - 1.0).max())
    _require(row_err <= 1e-6, f"attention rows sum to 1 +- {row_err:.2e}")

    const = Tensor(np.full((1, 3, 4, 4), 0.7, dtype=np.float32))
    _require(np.array_equal(blur(const).data, const.data),
             "blur must preserve constant images exactly")
    hand = Tensor(np.array([[[[0.0, 4.0], [8.0, 12.0]]]], dtype=np.float32))
    want = np.array([[[[0.0, 2.0], [4.0, 6.0]]]], dtype=np.float32)
    _require(np.array_equal(blur(hand).data, want),
             f"blur hand case gave {blur(hand).data.tolist()}")

    psi = Tensor(rng.standard_normal((2, 5, 7, 3)).astype(np.float32))
    g = gram(psi).data
    _require(np.array_equal(g, g.transpose(0, 2, 1)),
             "Gram matrix is not exactly symmetric")
    vecs = rng.standard_normal((5, 8)).astype(np.float32)
    quad = np.einsum("ci,bcd,di->bi", vecs, g.astype(np.float64), vecs)
    _require(float(quad.min()) >= -1e-8,
             f"Gram quadratic form dipped to {quad.min():.2e}")
    single = gram(Tensor(psi.data[0])).data
    _require(np.allclose(single, g[0], rtol=0, atol=1e-6),
             "3-d and 4-d gram paths disagree")
    return "ICNR, shuffle, attention, blur, Gram identities all hold"


# ---------------------------------------------------------------------------
# 4. model contract: shapes, tap resolutions, rejection messages.

def check_model_contract():
    config = ModelConfig(encoder_depth=18, width_multiplier=0.125)
    model = build_unet(config, seed=0)
    model.eval()
    rng = np.random.default_rng(0)
    sizes = (32, 64, 96, 128)
    with no_grad():
        for h in sizes:
            for w in sizes:
                x = Tensor(rng.standard_normal((1, 3, h, w)).astype(np.float32))
                out = model(x)
                _require(out.shape == (1, 31, h, w),
                         f"{h}x{w}: output shape {out.shape}")
                _, taps = model.encoder.forward_taps(x)
                expect = [(h // 2, w // 2), (h // 4, w // 4),
                          (h // 8, w // 8), (h // 16, w // 16)]
                got = [t.shape[2:] for t in taps]
                _require(got == expect, f"{h}x{w}: tap sizes {got}")
        x2 = Tensor(rng.standard_normal((2, 3, 32, 32)).astype(np.float32))
        bottom, _ = model.encoder.forward_taps(x2)
        _require(bottom.shape[2:] == (1, 1),
                 f"encoder output resolution {bottom.shape[2:]} at 32x32")
        _require(model(x2).shape == (2, 31, 32, 32), "batch forward shape")

    for bad_shape, needle in (((1, 3, 70, 70), "96x96"),
                              ((1, 5, 32, 32), "channel"),
                              ((3, 32, 32), "")):
        try:
            model(Tensor(np.zeros(bad_shape, dtype=np.float32)))
        except DimensionError as exc:
            _require(needle in str(exc),
                     f"rejection for {bad_shape} should mention {needle!r}, "
                     f"got: {exc}")
        else:
            raise CheckFailure(f"input shape {bad_shape} was not rejected")
    return "16 size combos, taps at /2 /4 /8 /16, bottleneck at /32"


# ---------------------------------------------------------------------------
# 5. parameter claims: counts at width 1, monotone, depth-50/18 ratio.

def check_parameter_claims():
    counts = {}
    for depth in (18, 34, 50):
        model = build_unet(ModelConfig(encoder_depth=depth), seed=0)
        counts[depth] = model.num_params()
        del model
        gc.collect()
    _require(counts[18] < counts[34] < counts[50],
             f"counts not monotone in depth: {counts}")
    ratio = counts[50] / counts[18]
    _require(ratio >= 8.0, f"depth-50/depth-18 ratio {ratio:.2f} < 8")
    return (f"18: {counts[18]:,}  34: {counts[34]:,}  50: {counts[50]:,}  "
            f"ratio {ratio:.2f}")


# ---------------------------------------------------------------------------
# 6. latency: depth 18 vs depth 50 at 256x256, single thread.

def check_latency():
    reports = {}
    for depth in (18, 50):
        model = build_unet(ModelConfig(encoder_depth=depth), seed=0)
        model.eval()
        reports[depth] = benchmark_latency(model, 256, warmup=3, runs=10,
                                           threads=1,
                                           model_id=f"depth-{depth}", seed=0)
        del model
        gc.collect()
    fast, slow = reports[18].median_s, reports[50].median_s
    speedup = slow / fast
    _require(speedup >= 2.5,
             f"depth-18 only {speedup:.2f}x faster than depth-50 "
             f"({fast:.3f}s vs {slow:.3f}s)")
    return (f"median depth-18 {fast:.3f}s, depth-50 {slow:.3f}s, "
            f"speedup {speedup:.2f}x over 10 runs")


# ---------------------------------------------------------------------------
# 7. loss identities: self-loss, term isolation, hand values.

def check_loss_identities():
    rng = np.random.default_rng(0)
    net = LossNetwork(in_channels=31, seed=0)
    x = Tensor(rng.uniform(0.0, 1.0, (1, 31, 16, 16)).astype(np.float32))
    same = Tensor(x.data.copy())

    total, parts = loss_breakdown(x, same, net, LossWeights())
    _require(float(total.data) == 0.0,
             f"loss of an input against itself is {float(total.data)!r}")
    _require(all(v == 0.0 for v in parts.values()),
             f"nonzero part in self-comparison: {parts}")

    pred = Tensor(rng.uniform(0.0, 1.0, (1, 31, 16, 16)).astype(np.float32))
    pix_only = LossWeights(alpha=(0.0,) * 3, beta=(0.0,) * 3, gamma_pix=1.0)
    via_weights, _ = loss_breakdown(pred, x, net, pix_only)
    direct = pixel_loss(pred, x)
    _require(float(via_weights.data) == float(direct.data),
             "zeroing feature/style weights must reduce exactly to pixel loss")
    without_net, _ = loss_breakdown(pred, x, None, pix_only)
    _require(float(without_net.data) == float(direct.data),
             "pixel-only breakdown must not require a feature network")

    offset = Tensor((x.data + 1.0).astype(np.float32))
    off_val = float(pixel_loss(offset, x).data)
    _require(abs(off_val - 1.0) <= 1e-6,
             f"pixel loss of a +1 offset is {off_val!r}, want 1")
    hand_p = Tensor(np.array([[[[3.0, 4.0]]]], dtype=np.float32))
    hand_t = Tensor(np.zeros((1, 1, 1, 2), dtype=np.float32))
    got = float(pixel_loss(hand_p, hand_t).data)
    _require(abs(got - 12.5) <= 1e-6,
             f"pixel hand case (3^2+4^2)/2 gave {got!r}, want 12.5")

    psi = Tensor(np.array([[[1.0]], [[2.0]]], dtype=np.float64))
    g = gram(psi).data
    want = np.array([[0.5, 1.0], [1.0, 2.0]], dtype=np.float64)
    _require(np.array_equal(g, want), f"gram hand case gave {g.tolist()}")

    base = float(loss_breakdown(x, same, net, LossWeights())[0].data)
    lower = float(loss_breakdown(
        Tensor((x.data + 0.01).astype(np.float32)), same, net,
        LossWeights())[0].data)
    upper = float(loss_breakdown(
        Tensor((x.data + 0.1).astype(np.float32)), same, net,
        LossWeights())[0].data)
    _require(0.0 == base < lower < upper,
             f"loss not monotone under growing perturbation: "
             f"{base} -> {lower} -> {upper}")
    return "self-loss 0, pixel isolation exact, hand values match"


# ---------------------------------------------------------------------------
# 8. overfit smoke: a small model must memorize 4 synthetic pairs.

def synthetic_pairs(count=4, size=32, seed=7):
    """Blocky RGB images with cubes that are fixed convex band mixes.

    Each band of the cube is an affine function of the RGB channels
    (weights drawn once per dataset), so a correct model with enough
    capacity can drive the reconstruction error toward zero.
    """
    rng = np.random.default_rng(seed)
    mix = rng.dirichlet(np.ones(3), size=31)
    pairs = []
    for _ in range(count):
        base = rng.random((3, size // 4, size // 4))
        rgb = np.repeat(np.repeat(base, 4, axis=1), 4, axis=2)
        cube = 0.25 + 0.5 * np.einsum("kc,chw->khw", mix, rgb)
        pairs.append((rgb.astype(np.float32), cube.astype(np.float32)))
    return pairs


def check_overfit():
    from .training import fit
    pairs = synthetic_pairs(count=2)
    model = build_unet(ModelConfig(encoder_depth=18, width_multiplier=0.125),
                       seed=0)
    stats = NormalizationStats.from_pairs(pairs)
    # one-cycle shape compressed to the run length (200 steps at one
    # batch per epoch); lr_peak raised from the full-scale default
    # because 200 small-batch steps need a larger per-step displacement
    schedule = OneCycleSchedule(lr_peak=1e-2, phase1=60.0, phase2=140.0)
    weights = LossWeights(alpha=(0.0,) * 3, beta=(0.0,) * 3, gamma_pix=1.0)
    log = fit(model, pairs, None, 200, schedule=schedule, weights=weights,
              batch_size=2, stats=stats, augment_cfg=identity_augment(),
              seed=0)
    by_epoch = {}
    for rec in log:
        if rec.get("kind") == "iteration":
            by_epoch.setdefault(rec["epoch"], []).append(rec["pixel"])
    first = float(np.mean(by_epoch[min(by_epoch)]))
    last = float(np.mean(by_epoch[max(by_epoch)]))
    ratio = last / first
    _require(ratio < 0.10,
             f"pixel loss only fell to {ratio:.1%} of its start "
             f"({first:.4g} -> {last:.4g})")
    report = evaluate_dataset(model, pairs, stats=stats)
    _require(report.mrae < 0.1,
             f"training-set MRAE {report.mrae:.4f} >= 0.1 after overfit")
    return (f"pixel loss {first:.4g} -> {last:.4g} ({ratio:.1%}), "
            f"MRAE {report.mrae:.4f}")


# ---------------------------------------------------------------------------
# 9. metric identities.

def check_metrics():
    rng = np.random.default_rng(0)
    true = rng.uniform(0.2, 1.0, (31, 8, 8)).astype(np.float64)
    got = mrae(true * 1.1, true, eps=0.0)
    _require(abs(got - 0.1) <= 1e-6,
             f"mrae(1.1*y, y) = {got!r}, expected 0.1")
    with_eps = mrae(true * 1.1, true)
    _require(abs(with_eps - 0.1) <= 1e-6,
             f"mrae with default eps drifted to {with_eps!r}")

    hand = mrae(np.array([1.0, 3.0]), np.array([2.0, 2.0]), eps=0.0)
    _require(hand == 0.5, f"mrae([1,3],[2,2]) = {hand!r}, expected 0.5 exactly")
    _require(rmse(np.array([1.0, 3.0]), np.array([2.0, 2.0])) == 1.0,
             "rmse([1,3],[2,2]) != 1")
    _require(mrae(true, true) == 0.0 and rmse(true, true) == 0.0,
             "metrics of identical arrays must be exactly 0")
    try:
        mrae(true, true, eps=-1e-9)
    except DomainError:
        pass
    else:
        raise CheckFailure("negative eps must be rejected")
    return "relative-error and hand identities exact"


# ---------------------------------------------------------------------------
# runner

CHECKS = [
    ("gradients", check_gradients),
    ("schedule", check_schedule),
    ("layer-invariants", check_layer_invariants),
    ("model-contract", check_model_contract),
    ("parameter-claims", check_parameter_claims),
    ("latency", check_latency),
    ("loss-identities", check_loss_identities),
    ("overfit", check_overfit),
    ("metrics", check_metrics),
]


def check_names():
    return [name for name, _ in CHECKS]


def run_checks(only=None, stream=None):
    """Run the suites, print one line each, return a process exit code."""
    stream = stream if stream is not None else sys.stdout
    if only is not None:
        unknown = sorted(set(only) - set(check_names()))
        if unknown:
            print(f"unknown check names: {', '.join(unknown)}", file=stream)
            return 2
        selected = [(n, f) for n, f in CHECKS if n in only]
    else:
        selected = CHECKS
    failed = 0
    for name, fn in selected:
        start = time.perf_counter()
        try:
            detail = fn() or ""
            status = "PASS"
        except CheckFailure as exc:
            detail = str(exc)
            status = "FAIL"
        except Exception as exc:          # a crash is also a failure
            detail = f"{type(exc).__name__}: {exc}"
            status = "FAIL"
        elapsed = time.perf_counter() - start
        if status == "FAIL":
            failed += 1
        print(f"{status:4s} {name:18s} ({elapsed:6.1f}s)  {detail}",
              file=stream, flush=True)
        gc.collect()
    print(f"{len(selected) - failed}/{len(selected)} suites passed",
          file=stream, flush=True)
    return 0 if failed == 0 else 1
