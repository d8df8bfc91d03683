import numpy as np
import pytest

from eventvfi import interp, synth
from eventvfi.accum import psnr
from eventvfi.event_core import EventStream, FrameSequence, GrayFrame, RgbFrame, concat_events


@pytest.fixture(scope="module")
def moving():
    scene = synth.SceneSpec(96, 64, 30.0, (synth.disc(10, 220.0, (20, 30), (480.0, 0.0)),), 60_000)
    return scene, synth.generate_rgb_sequence(scene, 120, rgb=False), synth.generate_events(scene)


def test_synthesis_without_events_is_identity():
    base = GrayFrame(np.random.default_rng(0).uniform(0, 255, (8, 8)), 100)
    empty = EventStream(8, 8)
    assert np.array_equal(interp.synthesis_integrate(base, empty, 500).pixels, base.pixels)
    assert interp.synthesis_integrate(base, empty, 100).t == 100


def test_synthesis_applies_exponential_gain():
    base = GrayFrame(np.full((1, 2), 99.0), 0)
    ev = EventStream.from_events(2, 1, [(0, 0, 5, 1), (0, 0, 6, 1), (1, 0, 7, -1), (1, 0, 20, -1)])
    fwd = interp.synthesis_integrate(base, ev, 10, c=0.2)
    assert fwd.pixels[0, 0] == pytest.approx(100 * np.exp(0.4) - 1)
    assert fwd.pixels[0, 1] == pytest.approx(100 * np.exp(-0.2) - 1)
    right = GrayFrame(np.full((1, 2), 99.0), 20)
    back = interp.synthesis_integrate(right, ev, 6, c=0.2, direction="backward")
    # undoes the events stamped in (6, 20]
    assert back.pixels[0, 0] == pytest.approx(99.0)
    assert back.pixels[0, 1] == pytest.approx(100 * np.exp(0.4) - 1)


def test_synthesis_direction_guards():
    base = GrayFrame(np.zeros((2, 2)), 100)
    with pytest.raises(ValueError, match="precedes"):
        interp.synthesis_integrate(base, EventStream(2, 2), 50)
    with pytest.raises(ValueError, match="follows"):
        interp.synthesis_integrate(base, EventStream(2, 2), 150, direction="backward")


def test_synthesis_error_within_two_thresholds_mid_sequence(moving):
    # away from the sensor's starting reference each side may hold a residual
    scene, frames, events = moving
    left, right = frames[2], frames[3]
    t = (left.t + right.t) // 2
    truth = np.log(synth.render_frame(scene, t).pixels + 1)
    fine = synth.generate_events(scene, synth.EventCameraModel(sim_step=1))
    for base, d in ((left, "forward"), (right, "backward")):
        est = interp.synthesis_integrate(base, fine, t, direction=d)
        assert np.abs(np.log(est.pixels + 1) - truth).max() < 0.3


def test_calibrate_contrast_recovers_threshold():
    scene = synth.SceneSpec(64, 48, 40.0, (synth.disc(8, 220.0, (20, 24), (600.0, 0.0)),), 8334)
    events = synth.generate_events(scene, synth.EventCameraModel(contrast_threshold=0.2, sim_step=1))
    left, right = synth.render_frame(scene, 0), synth.render_frame(scene, 8333)
    assert interp.calibrate_contrast(left, right, events) == pytest.approx(0.2, abs=0.02)


def test_flow_of_empty_stream_is_zero():
    flow = interp.estimate_flow(EventStream(32, 32), 0, 50, 100)
    assert not flow.u.any() and not flow.v.any()


def test_flow_needs_one_block():
    with pytest.raises(ValueError, match="smaller than one"):
        interp.estimate_flow(EventStream(8, 40), 0, 5, 10, block=16)


def test_flow_of_translated_event_pattern():
    rng = np.random.default_rng(1)
    n = 4000
    xs, ys = rng.integers(10, 86, n), rng.integers(10, 54, n)
    first = EventStream(96, 64, xs, ys, np.sort(rng.integers(0, 500, n)), rng.choice([-1, 1], n))
    second = EventStream(96, 64, xs + 3, ys - 2, first.t + 500, first.p)
    flow = interp.estimate_flow(concat_events([first, second]), 0, 500, 1000)
    inner = (slice(24, 40), slice(32, 64))
    assert np.all(flow.u[inner] == 6.0) and np.all(flow.v[inner] == -4.0)


def test_flow_of_moving_disc(moving):
    scene, frames, events = moving
    flow = interp.estimate_flow(events, frames[2].t, (frames[2].t + frames[3].t) // 2, frames[3].t)
    v = 480.0 * (frames[3].t - frames[2].t) / 1e6
    assert np.median(flow.u[flow.magnitude() > 0]) == pytest.approx(v, abs=0.5)


def test_warp_identities():
    frame = GrayFrame(np.random.default_rng(2).uniform(0, 255, (12, 10)), 5)
    zero = interp.FlowField.zeros(12, 10)
    assert np.array_equal(interp.warp_frame(frame, zero, 0.4).pixels, frame.pixels)
    flow = interp.FlowField(np.full((12, 10), 3.3), np.full((12, 10), -1.0))
    assert np.array_equal(interp.warp_frame(frame, flow, 0.0).pixels, frame.pixels)
    assert np.array_equal(interp.warp_frame(frame, flow, 1.0, "right").pixels, frame.pixels)


def test_warp_integer_shift_with_edge_clamp():
    px = np.arange(20.0).reshape(4, 5)
    flow = interp.FlowField(np.full((4, 5), 2.0), np.zeros((4, 5)))
    out = interp.warp_frame(GrayFrame(px), flow, 1.0).pixels
    expected = px[:, np.clip(np.arange(5) - 2, 0, 4)]
    assert np.array_equal(out, expected)


def test_warp_half_pixel_is_bilinear():
    px = np.array([[0.0, 10.0, 20.0]])
    flow = interp.FlowField(np.full((1, 3), 1.0), np.zeros((1, 3)))
    assert interp.warp_frame(GrayFrame(px), flow, 0.5).pixels.tolist() == [[0.0, 5.0, 15.0]]


def test_warp_rgb_per_channel():
    rng = np.random.default_rng(3)
    rgb = RgbFrame(rng.uniform(0, 255, (6, 7, 3)))
    flow = interp.FlowField(rng.uniform(-2, 2, (6, 7)), rng.uniform(-2, 2, (6, 7)))
    out = interp.warp_frame(rgb, flow, 0.7).pixels
    for ch in range(3):
        single = interp.warp_frame(GrayFrame(rgb.pixels[..., ch]), flow, 0.7).pixels
        assert np.allclose(out[..., ch], single)


def test_refine_zero_when_equal():
    frame = GrayFrame(np.random.default_rng(4).uniform(0, 255, (32, 32)))
    res = interp.refine_warp(frame, frame)
    assert not res.u.any() and not res.v.any()


def test_refine_recovers_constructed_shift():
    rng = np.random.default_rng(5)
    texture = rng.uniform(0, 255, (48, 64))
    warped = GrayFrame(texture)
    synthesized = GrayFrame(texture[:, np.clip(np.arange(64) - 2, 0, 63)])
    res = interp.refine_warp(warped, synthesized)
    assert np.all(res.u[:, 16:48] == 2.0) and np.all(res.v == 0.0)
    refined = interp.warp_frame(warped, res, 1.0)
    assert np.array_equal(refined.pixels[:, 16:48], synthesized.pixels[:, 16:48])


def test_refine_never_increases_block_error():
    rng = np.random.default_rng(6)
    for _ in range(5):
        a = GrayFrame(rng.uniform(0, 255, (32, 48)))
        b = GrayFrame(np.clip(np.roll(a.pixels, 1, axis=0) + rng.normal(0, 30, (32, 48)), 0, 255))
        refined = interp.warp_frame(a, interp.refine_warp(a, b), 1.0)
        for by in range(2):
            for bx in range(3):
                blk = (slice(16 * by, 16 * by + 16), slice(16 * bx, 16 * bx + 16))
                before = np.abs(a.pixels[blk] - b.pixels[blk]).mean()
                assert np.abs(refined.pixels[blk] - b.pixels[blk]).mean() <= before


def test_blend_properties():
    rng = np.random.default_rng(7)
    f = [GrayFrame(rng.uniform(0, 255, (5, 5))) for _ in range(4)]
    assert np.array_equal(interp.blend(f[0], f[0], f[0], f[0], 0.3).pixels, f[0].pixels)
    assert np.allclose(interp.blend(f[0], f[1], f[2], f[3], 0.5, alpha=1.0).pixels,
                       (f[0].pixels + f[1].pixels) / 2)
    out = interp.blend(*f, 0.8, alpha=0.3).pixels
    stack = np.stack([x.pixels for x in f])
    assert np.all(out >= stack.min(0)) and np.all(out <= stack.max(0))


def test_crossfade_without_events():
    left = GrayFrame(np.full((16, 16), 10.0), 0)
    right = GrayFrame(np.full((16, 16), 110.0), 900)
    req = interp.InterpolationRequest(left, right, EventStream(16, 16), (300, 600), method="synthesis")
    out = interp.interpolate(req)
    assert out.timestamps == [300, 600]
    assert np.allclose(out[0].pixels, 10 + 100 / 3) and np.allclose(out[1].pixels, 10 + 200 / 3)


def test_request_validation(moving):
    _, frames, events = moving
    with pytest.raises(ValueError, match="open interval"):
        interp.InterpolationRequest(frames[0], frames[1], events, (0,))
    with pytest.raises(ValueError, match="strictly increasing"):
        interp.InterpolationRequest(frames[0], frames[1], events, (50, 50))
    with pytest.raises(ValueError, match="method"):
        interp.InterpolationRequest(frames[0], frames[1], events, (50,), method="magic")
    with pytest.raises(ValueError, match="precede"):
        interp.InterpolationRequest(frames[1], frames[0], events, (50,))


def test_three_times_upscale_of_a_pair(moving):
    _, frames, events = moving
    pair = FrameSequence(frames.frames[1:3], frames.nominal_fps)
    out = interp.upscale_sequence(pair, events, 3)
    interval = frames[2].t - frames[1].t
    assert out.timestamps == [frames[1].t, frames[1].t + round(interval / 3),
                              frames[1].t + round(2 * interval / 3), frames[2].t]
    assert out.nominal_fps == 360


@pytest.mark.parametrize("method", interp.METHODS)
def test_every_method_beats_frame_repeat_mid_frame(moving, method):
    scene, frames, events = moving
    left, right = frames[2], frames[4]
    mid = frames[3]
    out = interp.interpolate(interp.InterpolationRequest(left, right, events, (mid.t - left.t,), method=method))
    assert psnr(out[0], mid) > psnr(left, mid)


def test_interpolation_is_deterministic(moving):
    _, frames, events = moving
    req = interp.InterpolationRequest(frames[1], frames[2], events, (2000, 4000))
    a, b = interp.interpolate(req), interp.interpolate(req)
    assert all(x == y for x, y in zip(a, b))


def test_rgb_interpolation_matches_gray_per_channel(moving):
    scene, frames, events = moving
    rgb = synth.generate_rgb_sequence(scene, 120)
    req = interp.InterpolationRequest(rgb[1], rgb[2], events, (4000,), method="synthesis")
    out = interp.interpolate(req)[0].pixels
    gray = interp.interpolate(interp.InterpolationRequest(frames[1], frames[2], events, (4000,),
                                                          method="synthesis"))[0].pixels
    assert np.allclose(out[..., 1], gray)


def test_upscale_targets():
    assert interp.upscale_targets(8333, 3) == [2778, 5555]
    assert interp.upscale_targets(100, 1) == []
    with pytest.raises(ValueError, match="too short"):
        interp.upscale_targets(3, 6)
