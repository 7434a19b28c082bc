"""Built-in oracle and invariant checks, run by ``dynstereo selftest``.

Every check compares a library routine with an independent brute-force
computation or a hand-derived value and raises AssertionError on mismatch.
"""

from __future__ import annotations

import contextlib
import math
import sys
import time
import traceback

import numpy as np

from . import correlation
from .attention import linear_attention, quadratic_attention, time_stage
from .correlation import CORR_SCALES, build_correlation, build_pyramid, lookup, pool_scales
from .data import DisparitySequence, StereoVideo
from .imageio import encode_pfm
from .metrics import delta_t, sequence_loss, tepe, tepe_map
from .pipeline import InferenceConfig, forward, infer_video, plan_windows, predict_clip
from .refiner import Schedule, convex_upsample, upsample_between_scales, upsample_final
from .synth import Layer, SceneSpec, diagnostic_features, generate, random_spec
from .tensor_kernels import avg_pool2d, conv2d, conv3d, conv3d_separable
from .weights import ChecksumError, ModelConfig, dumps_weights, init_weights, loads_weights

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _close(a, b, tol, what):
    err = float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))
    assert err <= tol, f"{what}: max abs error {err:.3e} > {tol:.1e}"


@check
def conv_oracles():
    ramp = np.arange(9, dtype=np.float32).reshape(1, 3, 3)
    assert conv2d(ramp, np.ones((1, 1, 3, 3)), padding=1)[0, 1, 1] == 36.0
    assert conv2d(np.ones((1, 4, 4)), np.ones((1, 1, 1, 1)), stride=2).shape == (1, 2, 2)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 5, 6)).astype(np.float32)
    k = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 5, 6))
    for o in range(3):
        for i in range(5):
            for j in range(6):
                ref[o, i, j] = np.sum(xp[:, i : i + 3, j : j + 3] * k[o])
    _close(conv2d(x, k, padding=1), ref, 1e-5, "conv2d vs loop")


@check
def separable_conv_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 6, 7, 7)).astype(np.float32)
    factors = [rng.standard_normal((2, 2, *ext)).astype(np.float32) for ext in ((1, 1, 5), (5, 1, 1), (1, 5, 5))]
    out = conv3d_separable(x, factors)
    # compose the factors into one dense kernel (T 5, H 5, W 9)
    dense = np.zeros((2, 2, 5, 5, 9))
    k1, k2, k3 = factors
    for o in range(2):
        for m1 in range(2):
            for m2 in range(2):
                for c in range(2):
                    for dt in range(5):
                        for dy in range(5):
                            for dx3 in range(5):
                                for dx1 in range(5):
                                    dense[o, c, dt, dy, dx3 + dx1] += (
                                        k3[o, m2, 0, dy, dx3] * k2[m2, m1, dt, 0, 0] * k1[m1, c, 0, 0, dx1]
                                    )
    ref = conv3d(x, dense.astype(np.float32), padding=(2, 2, 4))
    # zero padding between factors sharing the W axis only matters within 2 columns of the border
    _close(out[..., 2:-2], ref[..., 2:-2], 1e-4, "separable vs composed dense kernel (interior)")
    delta = [np.zeros((2, 2, *f.shape[2:]), np.float32) for f in factors]
    for d in delta:
        d[[0, 1], [0, 1], d.shape[2] // 2, d.shape[3] // 2, d.shape[4] // 2] = 1
    assert np.array_equal(conv3d_separable(x, delta), x)


@check
def pooling_oracle():
    rng = np.random.default_rng(3)
    x = rng.random((8, 8)).astype(np.float32)
    ref = np.array([[x[i * 4 : i * 4 + 4, j * 4 : j * 4 + 4].mean() for j in range(2)] for i in range(2)])
    _close(avg_pool2d(x, 4), ref, 1e-6, "avg_pool2d")


@check
def correlation_oracle():
    rng = np.random.default_rng(4)
    fl = rng.standard_normal((2, 16, 8, 12)).astype(np.float32)
    fr = rng.standard_normal((2, 16, 8, 12)).astype(np.float32)
    c = build_correlation(fl, fr)
    ref = np.zeros((2, 8, 12, 12))
    for t in range(2):
        for h in range(8):
            for w in range(12):
                for w2 in range(12):
                    ref[t, h, w, w2] = sum(float(fl[t, i, h, w]) * float(fr[t, i, h, w2]) for i in range(16)) / 4.0
    _close(c, ref, 1e-5, "correlation vs triple loop")
    pyr = pool_scales(c)
    for s in (2, 4):
        v = pyr.volumes[s]
        for t in range(2):
            for i in range(8 // s):
                for j in range(12 // s):
                    for k in range(12 // s):
                        blk = ref[t, i * s : (i + 1) * s, j * s : (j + 1) * s, k * s : (k + 1) * s].mean()
                        assert abs(v[t, i, j, k] - blk) < 1e-5, f"pooled s={s} entry mismatch"


@check
def lookup_golden_index():
    radius = 2
    t, h, w = 1, 8, 16
    volumes = {}
    for s in CORR_SCALES:
        ws = -(-w // s)
        vol = np.zeros((t, -(-h // s), ws, ws), np.float32)
        vol[...] = 100.0 * s + np.arange(ws)
        volumes[s] = vol
    out = lookup(correlation.CorrelationPyramid(volumes), np.zeros((t, h, w)), radius)
    assert out.shape[1] == 4 * (2 * radius + 1)
    # at pixel (0, 0) with zero disparity, scale s / offset delta reads column delta
    for si, s in enumerate(CORR_SCALES):
        for off in range(-radius, radius + 1):
            inside = 0 <= off < -(-w // s)
            expected = 100.0 * s + off if inside else 0.0
            channel = si * (2 * radius + 1) + off + radius
            assert out[0, channel, 0, 0] == expected, f"channel {channel} should hold (s={s}, delta={off})"


@check
def lookup_integer_oracle():
    rng = np.random.default_rng(5)
    fl = rng.standard_normal((2, 8, 8, 12)).astype(np.float32)
    fr = rng.standard_normal((2, 8, 8, 12)).astype(np.float32)
    pyr = build_pyramid(fl, fr)
    disp = rng.integers(-5, 6, (2, 8, 12)).astype(np.float32)
    out = lookup(pyr, disp, 4)
    c1 = pyr.volumes[1]
    for t in range(2):
        for h in range(8):
            for w in range(12):
                for off in range(-4, 5):
                    col = w + int(disp[t, h, w]) + off
                    expected = c1[t, h, w, col] if 0 <= col < 12 else 0.0
                    assert out[t, off + 4, h, w] == expected, "s=1 lookup differs from direct indexing"


@check
def attention_oracles():
    rng = np.random.default_rng(6)
    q, k, v = (rng.standard_normal((8, 2, 4)).astype(np.float32) for _ in range(3))
    ref = np.zeros((8, 2, 4))
    for hd in range(2):
        s = q[:, hd] @ k[:, hd].T / 2.0
        p = np.exp(s - s.max(1, keepdims=True))
        ref[:, hd] = (p / p.sum(1, keepdims=True)) @ v[:, hd]
    _close(quadratic_attention(q, k, v), ref, 1e-5, "quadratic attention")
    q, k, v = (rng.standard_normal((16, 1, 4)).astype(np.float32) for _ in range(3))
    fq = np.where(q > 0, q + 1, np.exp(q))[:, 0].astype(np.float64)
    fk = np.where(k > 0, k + 1, np.exp(k))[:, 0].astype(np.float64)
    wts = fq @ fk.T
    wts /= wts.sum(1, keepdims=True)
    assert (wts >= 0).all() and np.allclose(wts.sum(1), 1, atol=1e-6)
    _close(linear_attention(q, k, v)[:, 0], wts @ v[:, 0], 1e-5, "linear attention")


@check
def time_permutation_equivariance():
    cfg = ModelConfig.compact()
    weights = init_weights(cfg, 0)
    x = np.random.default_rng(7).standard_normal((5, 2, cfg.d, 2, 3)).astype(np.float32)
    perm = np.array([3, 0, 4, 1, 2])
    a = time_stage(x, weights, "sst.0.time", cfg.heads)[perm]
    b = time_stage(x[perm], weights, "sst.0.time", cfg.heads)
    _close(a, b, 1e-6, "time stage permutation")


@check
def schedule_and_single_correlation():
    assert Schedule(20).counts == {16: 5, 8: 5, 4: 10}
    cfg = ModelConfig.compact()
    weights = init_weights(cfg, 0)
    rng = np.random.default_rng(8)
    video = StereoVideo(rng.random((2, 3, 32, 32)), rng.random((2, 3, 32, 32)))
    calls = []

    def counting(fl, fr):
        calls.append(fl.shape)
        return build_pyramid(fl, fr)

    res = forward(video, weights, cfg, corr_fn=counting)
    assert len(res.predictions) == 20 and all(p.shape == (2, 32, 32) for p in res.predictions)
    assert len(calls) == 3, f"correlation built {len(calls)} times, expected once per stride"


@check
def upsampling_constants():
    cfg = ModelConfig.compact()
    weights = init_weights(cfg, 0)
    rng = np.random.default_rng(9)
    c = np.float32(1.7)
    field = np.full((2, 4, 6), c, np.float32)
    hidden = rng.standard_normal((2, cfg.dh, 4, 6)).astype(np.float32)
    assert np.all(upsample_between_scales(field, hidden, weights, 16) == 2 * c)
    assert np.all(upsample_final(field, hidden, weights) == 4 * c)
    logits = rng.standard_normal((2, 9 * 4, 4, 6)).astype(np.float32) * 5
    wts = np.exp(logits.reshape(2, 9, 4, 4, 6))
    wts /= wts.sum(1, keepdims=True)
    assert np.allclose(wts.sum(1), 1, atol=1e-6)
    assert np.all(convex_upsample(field, logits, 2) == 2 * c)


@check
def loss_and_tepe():
    gt = DisparitySequence(np.zeros((1, 1, 1)))
    preds = [np.full((1, 1, 1), e) for e in (2.0, 1.0, 0.5)]
    assert abs(sequence_loss(preds, gt, 0.9) - 3.02) < 1e-9
    rng = np.random.default_rng(10)
    g = rng.standard_normal((3, 4, 5))
    valid = rng.random((3, 4, 5)) > 0.2
    gt = DisparitySequence(g, valid)
    preds = [rng.standard_normal((3, 4, 5)) for _ in range(4)]
    ref = 0.0
    for t in range(3):
        for m in range(4):
            for i in range(4):
                for j in range(5):
                    if valid[t, i, j]:
                        ref += 0.9 ** (3 - m) * abs(float(np.float32(preds[m][t, i, j])) - float(np.float32(g[t, i, j])))
    assert abs(sequence_loss(preds, gt) - ref) < 1e-5
    one = DisparitySequence(np.array([3.0, 4.0]).reshape(2, 1, 1))
    assert abs(tepe(np.array([3.0, 5.0]).reshape(2, 1, 1), one) - 1.0) < 1e-12
    assert tepe(g + 2.5, DisparitySequence(g)) < 1e-6
    p = g + rng.standard_normal(g.shape)
    vals, mask = tepe_map(p, gt)
    ref_map = np.zeros((4, 5))
    for i in range(4):
        for j in range(5):
            acc = 0.0
            for t in range(2):
                if valid[t, i, j] and valid[t + 1, i, j]:
                    acc += ((float(np.float32(p[t, i, j])) - float(np.float32(p[t + 1, i, j])))
                            - (float(np.float32(g[t, i, j])) - float(np.float32(g[t + 1, i, j])))) ** 2
            ref_map[i, j] = math.sqrt(acc)
    _close(vals, ref_map, 1e-6, "tepe per pixel")
    assert delta_t(p, gt, 1.0) == float((ref_map[mask] > 1.0).mean())


@check
def diagnostic_argmax():
    spec = SceneSpec(seed=0, height=16, width=48, frames=2, focal=100.0, baseline=0.1, background_depth=2.5,
                     background_texture=3, layers=(Layer(5, "rect", 24.0, 8.0, 8.0, 5.0, 10.0 / 12.0),))
    scene = generate(spec)
    feats = diagnostic_features(-scene.disparity.values)
    c = build_correlation(feats[:, 0], feats[:, 1])
    arg = c.argmax(axis=-1)
    cols = np.arange(48)[None, None, :]
    ok = ~scene.occlusion & scene.in_view
    expected = cols - scene.disparity.values.astype(int)
    assert np.array_equal(arg[ok], expected[ok]), "argmax missed the true shift on unoccluded pixels"


@check
def window_partition():
    for length in (1, 7, 20, 25, 40, 47, 200):
        plan = plan_windows(length)
        covered = np.zeros(length, int)
        for win in plan.windows:
            covered[win.keep_begin : win.keep_end] += 1
        assert np.all(covered == 1), f"kept ranges do not partition [0, {length})"
    assert [w.start for w in plan_windows(40).windows] == [0, 10, 20]


@check
def sliding_window_isolation():
    cfg = ModelConfig.compact(iters=4)
    weights = init_weights(cfg, 1)
    rng = np.random.default_rng(11)
    video = StereoVideo(rng.random((13, 3, 16, 16)), rng.random((13, 3, 16, 16)))
    config = InferenceConfig(window=6, overlap=2)
    out = infer_video(video, weights, config)
    assert out.length == 13
    win = plan_windows(13, 6, 2).windows[1]
    alone = predict_clip(video.frames(win.start, win.start + 6), weights)
    t = win.keep_begin
    assert np.array_equal(out.values[t], alone[t - win.start]), "windowed frame differs from isolated run"


@check
def weights_roundtrip():
    weights = init_weights(ModelConfig.compact(), 3)
    blob = dumps_weights(weights)
    back = loads_weights(blob)
    assert back.metadata == weights.metadata
    assert all(np.array_equal(back[n], weights[n]) for n in weights)
    try:
        loads_weights(blob[:-100])
    except ChecksumError:
        pass
    else:
        raise AssertionError("truncated weights were accepted")


@check
def photometric_consistency():
    for seed in range(3):
        scene = generate(random_spec(seed, 32, 64, 3, max_disparity=12))
        d = scene.disparity.values.astype(int)
        ok = ~scene.occlusion & scene.in_view
        for t in range(3):
            ys, xs = np.nonzero(ok[t])
            warped = scene.video.right[t][:, ys, xs - d[t, ys, xs]]
            _close(warped, scene.video.left[t][:, ys, xs], 1e-6, "left warped by gt vs right")


@check
def stability_smoke():
    cfg = ModelConfig.compact()
    weights = init_weights(cfg, 0)
    rng = np.random.default_rng(12)
    for _ in range(100):
        video = StereoVideo(rng.random((5, 3, 64, 96)), rng.random((5, 3, 64, 96)))
        res = forward(video, weights, cfg)
        assert all(np.isfinite(p).all() for p in res.predictions), "non-finite disparity"
        assert res.max_abs_hidden < 1.0, f"hidden state reached {res.max_abs_hidden}"


@check
def deterministic_outputs():
    cfg = ModelConfig.compact(iters=4)
    rng = np.random.default_rng(13)
    video = StereoVideo(rng.random((3, 3, 16, 32)), rng.random((3, 3, 16, 32)))
    runs = [[encode_pfm(f) for f in infer_video(video, init_weights(cfg, 5), InferenceConfig(4, 2)).values]
            for _ in range(2)]
    assert runs[0] == runs[1], "repeated inference produced different PFM bytes"


@contextlib.contextmanager
def corrupted_lookup_order():
    correlation._CORRUPT_CHANNEL_ORDER = True
    try:
        yield
    finally:
        correlation._CORRUPT_CHANNEL_ORDER = False


def run(only=None, corrupt_lookup_order: bool = False, stream=None) -> list[str]:
    """Run the checks, print one line each, and return the names that failed."""
    stream = stream or sys.stdout
    selected = [c for c in CHECKS if not only or c.__name__ in only]
    failures = []
    ctx = corrupted_lookup_order() if corrupt_lookup_order else contextlib.nullcontext()
    start = time.perf_counter()
    with ctx:
        for fn in selected:
            tic = time.perf_counter()
            try:
                fn()
            except Exception as exc:  # report every failure, keep going
                failures.append(fn.__name__)
                detail = str(exc) or traceback.format_exc(limit=1).strip()
                print(f"FAIL {fn.__name__} ({time.perf_counter() - tic:.1f}s): {detail}", file=stream)
            else:
                print(f"pass {fn.__name__} ({time.perf_counter() - tic:.1f}s)", file=stream)
    total = time.perf_counter() - start
    print(f"{len(selected) - len(failures)}/{len(selected)} checks passed in {total:.1f}s", file=stream)
    if failures:
        print("failed: " + ", ".join(failures), file=stream)
    return failures
