"""Acceptance criteria, one test each; every test records a pass/fail line.

Run ``pytest tests/test_acceptance.py -v`` for the summary section, or
``python3 tests/test_acceptance.py`` for the lines alone.
"""

from __future__ import annotations

import io
import time

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from dynstereo import selftest
from dynstereo.attention import linear_attention, quadratic_attention, time_stage
from dynstereo.correlation import build_correlation, build_pyramid, lookup
from dynstereo.data import DisparitySequence, StereoVideo
from dynstereo.imageio import encode_pfm
from dynstereo.metrics import delta_t, sequence_loss, tepe, tepe_map
from dynstereo.pipeline import InferenceConfig, forward, infer_video, plan_windows, predict_clip
from dynstereo.refiner import Schedule, convex_upsample, convex_weights, upsample_between_scales, upsample_final
from dynstereo.synth import Layer, SceneSpec, diagnostic_features, generate, random_spec
from dynstereo.weights import ModelConfig, dumps_weights, init_weights, loads_weights


class Criterion:
    """Collects sub-checks and records one line; re-raises the first failure."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.notes: list[str] = []

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        secs = time.perf_counter() - self.start
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.notes)
        if exc is not None:
            detail = f"{detail}; {exc_type.__name__}: {exc}" if detail else f"{exc_type.__name__}: {exc}"
        line = f"[{status}] criterion {self.number}: {self.title} ({secs:.2f}s) {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False


def test_criterion_01_correlation_oracle():
    with Criterion(1, "correlation and pooled scales vs brute force, < 1 s") as c:
        rng = np.random.default_rng(101)
        fl = rng.standard_normal((2, 16, 8, 12)).astype(np.float32)
        fr = rng.standard_normal((2, 16, 8, 12)).astype(np.float32)
        tic = time.perf_counter()
        corr = build_correlation(fl, fr)
        pyr = build_pyramid(fl, fr)
        runtime = time.perf_counter() - tic
        ref = oracles.correlation(fl, fr)
        err = float(np.abs(corr - ref).max())
        pooled_err = max(float(np.abs(pyr.volumes[s] - oracles.block_mean(ref, s)).max()) for s in (2, 4, 8))
        c.notes.append(f"max err {err:.1e}, pooled {pooled_err:.1e}, library runtime {runtime * 1e3:.1f} ms")
        assert err <= 1e-5 and pooled_err <= 1e-5
        assert runtime < 1.0


def test_criterion_02_lookup_contract():
    with Criterion(2, "lookup has 4(2r+1)=36 channels and is exact at integer disparities") as c:
        rng = np.random.default_rng(102)
        fl = rng.standard_normal((2, 8, 8, 16)).astype(np.float32)
        fr = rng.standard_normal((2, 8, 8, 16)).astype(np.float32)
        pyr = build_pyramid(fl, fr)
        disp = rng.integers(-8, 9, (2, 8, 16)).astype(np.float32)
        out = lookup(pyr, disp, 4)
        assert out.shape == (2, 36, 8, 16)
        mismatches = 0
        for s_idx, s in enumerate((1, 2, 4, 8)):
            vol = pyr.volumes[s]
            for t in range(2):
                for i in range(0, 8, s):
                    for j in range(0, 16, s):
                        if (j + int(disp[t, i, j])) % s:
                            continue  # integer coordinates on this scale only
                        for off in range(-4, 5):
                            col = (j + int(disp[t, i, j])) // s + off
                            ref = vol[t, i // s, j // s, col] if 0 <= col < vol.shape[-1] else 0.0
                            mismatches += out[t, s_idx * 9 + off + 4, i, j] != ref
        c.notes.append(f"{mismatches} mismatches over all scales at integer coordinates")
        assert mismatches == 0


def test_criterion_03_attention():
    with Criterion(3, "quadratic vs dense, linear weights convex, time-stage permutation equivariance") as c:
        rng = np.random.default_rng(103)
        q, k, v = (rng.standard_normal((8, 2, 8)).astype(np.float32) for _ in range(3))
        qerr = float(np.abs(quadratic_attention(q, k, v) - oracles.softmax_attention(q, k, v)).max())
        q, k, v = (rng.standard_normal((16, 1, 8)).astype(np.float32) for _ in range(3))
        wts = oracles.linear_attention_weights(q[:, 0], k[:, 0])
        sum_err = float(np.abs(wts.sum(1) - 1).max())
        lerr = float(np.abs(linear_attention(q, k, v)[:, 0] - wts @ v[:, 0]).max())
        cfg = ModelConfig.compact()
        weights = init_weights(cfg, 3)
        x = rng.standard_normal((6, 2, cfg.d, 2, 3)).astype(np.float32)
        perm = rng.permutation(6)
        perr = float(np.abs(time_stage(x, weights, "sst.2.time", cfg.heads)[perm]
                            - time_stage(x[perm], weights, "sst.2.time", cfg.heads)).max())
        c.notes.append(f"quadratic {qerr:.1e}, weight-sum {sum_err:.1e}, linear {lerr:.1e}, perm {perr:.1e}")
        assert qerr <= 1e-5 and wts.min() >= 0 and sum_err <= 1e-6 and lerr <= 1e-5 and perr <= 1e-6


def test_criterion_04_schedule():
    with Criterion(4, "M=20 gives (5,5,10), 20 predictions, one correlation build per scale") as c:
        counts = Schedule(20).counts
        cfg = ModelConfig.compact()
        weights = init_weights(cfg, 4)
        rng = np.random.default_rng(104)
        video = StereoVideo(rng.random((2, 3, 32, 48)), rng.random((2, 3, 32, 48)))
        builds = []

        def counting(fl, fr):
            builds.append(fl.shape[-2:])
            return build_pyramid(fl, fr)

        res = forward(video, weights, cfg, corr_fn=counting)
        c.notes.append(f"counts {counts[16]},{counts[8]},{counts[4]}; {len(res.predictions)} predictions; "
                       f"builds at {builds}")
        assert (counts[16], counts[8], counts[4]) == (5, 5, 10)
        assert len(res.predictions) == 20
        assert builds == [(2, 3), (4, 6), (8, 12)]


def test_criterion_05_loss():
    with Criterion(5, "sequence loss hand example 3.02 and loop oracle") as c:
        hand = sequence_loss([np.full((1, 1, 1), e) for e in (2.0, 1.0, 0.5)],
                             DisparitySequence(np.zeros((1, 1, 1))), gamma=0.9)
        rng = np.random.default_rng(105)
        g = rng.standard_normal((3, 6, 7)).astype(np.float32)
        valid = rng.random(g.shape) > 0.2
        preds = [rng.standard_normal(g.shape).astype(np.float32) for _ in range(6)]
        got = sequence_loss(preds, DisparitySequence(g, valid), gamma=0.9)
        ref = oracles.sequence_loss(preds, g, valid, 0.9)
        c.notes.append(f"hand {hand:.12g}, oracle err {abs(got - ref):.1e}")
        assert abs(hand - 3.02) < 1e-12 and abs(got - ref) <= 1e-5


def test_criterion_06_tepe():
    with Criterion(6, "TEPE zero cases, hand example, loop oracle, delta_t consistency") as c:
        rng = np.random.default_rng(106)
        g = rng.integers(-40, 40, (4, 5, 5)) / 4.0
        zero_perfect = tepe(g, DisparitySequence(g))
        zero_bias = tepe(g + 3.0, DisparitySequence(g))
        hand = tepe(np.array([3.0, 5.0]).reshape(2, 1, 1), DisparitySequence(np.array([3.0, 4.0]).reshape(2, 1, 1)))
        g = rng.standard_normal((5, 5, 6)).astype(np.float32)
        p = (g + rng.standard_normal(g.shape)).astype(np.float32)
        valid = rng.random(g.shape) > 0.25
        gt = DisparitySequence(g, valid)
        ref = oracles.tepe_per_pixel(p.astype(np.float64), g.astype(np.float64), valid)
        vals, mask = tepe_map(p, gt)
        err = max(abs(vals[ij] - v) for ij, v in ref.items())
        mean_err = abs(tepe(p, gt) - np.mean(list(ref.values())))
        dt_ok = all(delta_t(p, gt, thr) == np.mean([v > thr for v in ref.values()]) for thr in (0.5, 1.0, 2.0))
        c.notes.append(f"perfect {zero_perfect}, bias {zero_bias}, hand {hand}, per-pixel err {err:.1e}")
        assert zero_perfect == 0.0 and zero_bias == 0.0 and abs(hand - 1.0) < 1e-12
        assert set(zip(*np.nonzero(mask))) == set(ref)
        assert err <= 1e-6 and mean_err <= 1e-6 and dt_ok


def diagnostic_scenes():
    hand = SceneSpec(seed=0, height=24, width=64, frames=3, focal=100.0, baseline=0.1, background_depth=2.5,
                     background_texture=9, layers=(Layer(4, "rect", 30.0, 12.0, 9.0, 6.0, 10.0 / 12.0, vx=1.0),))
    specs = [hand] + [random_spec(s, 32, 64, 3, n_layers=1 + s % 2, max_disparity=12) for s in range(6)]
    return [generate(s) for s in specs]


def test_criterion_07_diagnostic_end_to_end():
    with Criterion(7, "one-hot features: correlation argmax recovers gt on unoccluded pixels") as c:
        total = correct = 0
        for scene in diagnostic_scenes():
            assert scene.disparity.values.max() <= 12
            feats = diagnostic_features(-scene.disparity.values)
            arg = build_correlation(feats[:, 0], feats[:, 1]).argmax(-1)
            ok = ~scene.occlusion & scene.in_view
            cols = np.arange(scene.spec.width)[None, None]
            total += int(ok.sum())
            correct += int(((cols - arg)[ok] == scene.disparity.values[ok]).sum())
        c.notes.append(f"{correct}/{total} unoccluded pixels recovered")
        assert correct == total and total > 0


def test_criterion_08_sliding_windows():
    with Criterion(8, "kept ranges partition [0, L), output length L, bit-exact interior isolation") as c:
        lengths = (1, 7, 20, 25, 40, 47, 200)
        for length in lengths:
            covered = np.zeros(length, int)
            for win in plan_windows(length).windows:
                covered[win.keep_begin : win.keep_end] += 1
            assert np.all(covered == 1), f"L={length}"
        weights = init_weights(ModelConfig.compact(iters=4), 8)
        rng = np.random.default_rng(108)
        frames = rng.random((200, 3, 16, 16)), rng.random((200, 3, 16, 16))
        for length in lengths:
            out = infer_video(StereoVideo(frames[0][:length], frames[1][:length]), weights)
            assert out.values.shape == (length, 16, 16), f"L={length}"
        video = StereoVideo(frames[0][:47], frames[1][:47])
        out = infer_video(video, weights)
        checked = 0
        for win in plan_windows(47).windows:
            alone = predict_clip(video.frames(win.start, win.start + 20), weights)
            kept = out.values[win.keep_begin : win.keep_end]
            assert np.array_equal(kept, alone[win.keep_begin - win.start : win.keep_end - win.start])
            checked += win.keep_end - win.keep_begin
        c.notes.append(f"lengths {lengths} ok; {checked} frames equal their isolated window")


def test_criterion_09_upsampling():
    with Criterion(9, "constant c -> 2c between scales and 4c final, convex weights sum to 1") as c:
        cfg = ModelConfig.compact()
        weights = init_weights(cfg, 9)
        rng = np.random.default_rng(109)
        hidden = rng.standard_normal((2, cfg.dh, 4, 6)).astype(np.float32) * 3
        for value in (0.0, 1.0, -2.75, 7.3, 31.0):
            field = np.full((2, 4, 6), value, np.float32)
            for k in (16, 8):
                assert np.all(upsample_between_scales(field, hidden, weights, k) == np.float32(2 * value))
            assert np.all(upsample_final(field, hidden, weights) == np.float32(4 * value))
        logits = rng.standard_normal((2, 9 * 16, 4, 6)).astype(np.float32) * 8
        sum_err = float(np.abs(convex_weights(logits, 4).sum(axis=1) - 1).max())
        assert np.all(convex_upsample(np.full((2, 4, 6), 1.5, np.float32), logits, 4) == 6.0)
        c.notes.append(f"exact for 5 constants; weight-sum err {sum_err:.1e}")
        assert sum_err <= 1e-6


def test_criterion_10_stability():
    with Criterion(10, "100 random videos 64x96x5: finite outputs, hidden in (-1, 1)") as c:
        cfg = ModelConfig.compact()
        weights = init_weights(cfg, 0)
        rng = np.random.default_rng(110)
        worst = 0.0
        for _ in range(100):
            video = StereoVideo(rng.random((5, 3, 64, 96)), rng.random((5, 3, 64, 96)))
            res = forward(video, weights, cfg)
            assert all(np.isfinite(p).all() for p in res.predictions)
            worst = max(worst, res.max_abs_hidden)
        c.notes.append(f"max |hidden| {worst:.6f} (compact widths d={cfg.d}, dh={cfg.dh})")
        assert worst < 1.0


def test_criterion_11_photometric_consistency():
    with Criterion(11, "right(x - d) equals left(x) on non-occluded pixels, integer disparities") as c:
        worst = 0.0
        pixels = 0
        for seed in range(10):
            scene = generate(random_spec(seed, 48, 80, 4, n_layers=2, max_disparity=20))
            d = scene.disparity.values
            assert np.array_equal(d, np.round(d))
            ok = ~scene.occlusion & scene.in_view
            for t in range(scene.spec.frames):
                ys, xs = np.nonzero(ok[t])
                warped = scene.video.right[t][:, ys, xs - d[t, ys, xs].astype(int)]
                worst = max(worst, float(np.abs(warped - scene.video.left[t][:, ys, xs]).max()))
                pixels += len(ys)
        c.notes.append(f"{pixels} pixels, max abs diff {worst:.1e}")
        assert worst <= 1e-6


def test_criterion_12_determinism_and_io():
    with Criterion(12, "weights round trip, byte-identical PFMs, full selftest < 5 min") as c:
        weights = init_weights(ModelConfig.compact(iters=8), 12)
        blob = dumps_weights(weights)
        back = loads_weights(blob)
        assert all(back[n].tobytes() == weights[n].tobytes() for n in weights)
        assert dumps_weights(back) == blob
        rng = np.random.default_rng(112)
        video = StereoVideo(rng.random((6, 3, 32, 48)), rng.random((6, 3, 32, 48)))
        cfg = InferenceConfig(4, 2)
        first = [encode_pfm(f) for f in infer_video(video, weights, cfg).values]
        second = [encode_pfm(f) for f in infer_video(video, back, cfg).values]
        assert first == second
        stream = io.StringIO()
        tic = time.perf_counter()
        failures = selftest.run(stream=stream)
        elapsed = time.perf_counter() - tic
        c.notes.append(f"selftest {len(selftest.CHECKS) - len(failures)}/{len(selftest.CHECKS)} in {elapsed:.1f}s")
        assert not failures, stream.getvalue()
        assert elapsed < 300


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
