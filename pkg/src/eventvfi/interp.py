"""Event-guided frame interpolation with classical building blocks.

Four stages, each checkable against the synthetic oracle:

* synthesis: integrate registered event polarities onto a boundary frame
  (the exact inverse of the log-threshold sensor model);
* warping: block-matching flow from accumulation images of the two
  half-intervals, then bilinear backward warping of the boundary frames;
* refinement: a residual block-matching flow pulling each warped frame
  toward its synthesized counterpart;
* blending: fixed convex weights over the four candidates.

Event windows follow the frame convention used by the synthetic sensor:
a frame at ``t`` already reflects every event stamped ``<= t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .accum import psnr, ssim
from .event_core import (EventStream, FrameSequence, GrayFrame, RgbFrame, slice_events,
                         to_grayscale)

METHODS = ("synthesis", "warp", "blend")
UPSCALE_FACTORS = (3, 6, 10, 12, 25)


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement (pixels) over the whole frame interval."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64)
        v = np.array(self.v, dtype=np.float64)
        if u.shape != v.shape or u.ndim != 2:
            raise ValueError("flow components must be 2-D arrays of equal shape")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("flow must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True)
class InterpolationRequest:
    left: object
    right: object
    events: EventStream
    targets: tuple  # Δt values in µs, strictly inside (0, right.t - left.t)
    contrast: float = 0.15
    method: str = "blend"
    epsilon: float = 1.0
    alpha: float = 0.5
    block: int = 16
    radius: int = 8
    energy_floor: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if type(self.left) is not type(self.right) or self.left.pixels.shape != self.right.pixels.shape:
            raise ValueError("bounding frames must share kind and geometry")
        if self.left.t >= self.right.t:
            raise ValueError("left frame must precede right frame")
        if (self.events.width, self.events.height) != (self.left.width, self.left.height):
            raise ValueError("events must be registered to the frame geometry")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.contrast <= 0:
            raise ValueError("contrast must be positive")
        interval = self.right.t - self.left.t
        for a, b in zip(self.targets, self.targets[1:]):
            if b <= a:
                raise ValueError("targets must be strictly increasing")
        for dt in self.targets:
            if not 0 < dt < interval:
                raise ValueError(f"target Δt={dt} outside the open interval (0, {interval})")


# Synthesis -------------------------------------------------------------

def polarity_sum(events: EventStream, t_after: int, t_upto: int) -> np.ndarray:
    """Signed per-pixel polarity sum of events with ``t_after < t <= t_upto``."""
    part = slice_events(events, t_after + 1, t_upto + 1)
    idx = part.y.astype(np.int64) * events.width + part.x
    s = np.bincount(idx, weights=part.p.astype(np.float64), minlength=events.width * events.height)
    return s.reshape(events.height, events.width)


def synthesis_integrate(base, events: EventStream, t_target: int, c: float = 0.15,
                        direction: str = "forward", epsilon: float = 1.0):
    """Brighten/darken ``base`` by the events between its time and ``t_target``.

    ``forward`` integrates from a left frame toward later times; ``backward``
    starts at a right frame and undoes the events that precede it.
    """
    if direction == "forward":
        if t_target < base.t:
            raise ValueError(f"forward integration target {t_target} precedes base frame at {base.t}")
        s = polarity_sum(events, base.t, t_target)
    elif direction == "backward":
        if t_target > base.t:
            raise ValueError(f"backward integration target {t_target} follows base frame at {base.t}")
        s = -polarity_sum(events, t_target, base.t)
    else:
        raise ValueError("direction must be 'forward' or 'backward'")
    if base.pixels.ndim == 3:
        s = s[:, :, None]
    out = np.clip((base.pixels + epsilon) * np.exp(c * s) - epsilon, 0.0, 255.0)
    # untouched pixels stay bit-exact; (x + eps) - eps can be off by an ulp
    out = np.where(s == 0, base.pixels, out)
    return base.with_pixels(out, t_target)


def calibrate_contrast(left, right, events: EventStream, lo: float = 0.02, hi: float = 1.0,
                       epsilon: float = 1.0) -> float:
    """Contrast value whose forward synthesis best reproduces the right frame."""
    from scipy.optimize import minimize_scalar

    s = polarity_sum(events, left.t, right.t)
    if left.pixels.ndim == 3:
        s = s[:, :, None]
    target = right.pixels

    def error(c):
        out = np.clip((left.pixels + epsilon) * np.exp(c * s) - epsilon, 0.0, 255.0)
        return float(np.mean((out - target) ** 2))

    grid = np.linspace(lo, hi, 50)
    errs = [error(c) for c in grid]
    i = int(np.argmin(errs))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if a == b:
        return float(grid[i])
    res = minimize_scalar(error, bounds=(a, b), method="bounded", options={"xatol": 1e-6})
    return float(res.x) if res.fun <= errs[i] else float(grid[i])


# Block matching --------------------------------------------------------

def _candidates(radius: int) -> list[tuple[int, int]]:
    # zero first, then growing distance, so ties resolve to the smallest motion
    d = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    return sorted(d, key=lambda p: (p[0] ** 2 + p[1] ** 2, p[0], p[1]))


def _block_sum(a: np.ndarray, block: int, nby: int, nbx: int) -> np.ndarray:
    return a[:nby * block, :nbx * block].reshape(nby, block, nbx, block).sum(axis=(1, 3))


def _match_blocks(ref: np.ndarray, search: np.ndarray, block: int, radius: int,
                  clamp: bool) -> np.ndarray:
    """Displacement per block minimizing SAD between ``ref[x]`` and ``search[x + d]``.

    With ``clamp`` the search image is sampled with edge clamping, otherwise
    it is zero outside the frame.
    """
    h, w = ref.shape
    nby, nbx = h // block, w // block
    ys = np.arange(h)
    xs = np.arange(w)
    best = np.full((nby, nbx), np.inf)
    disp = np.zeros((nby, nbx, 2), np.int64)
    for dy, dx in _candidates(radius):
        yy, xx = ys + dy, xs + dx
        if clamp:
            shifted = search[np.clip(yy, 0, h - 1)[:, None], np.clip(xx, 0, w - 1)[None, :]]
            sad = _block_sum(np.abs(ref - shifted), block, nby, nbx)
        else:
            inside = ((yy >= 0) & (yy < h))[:, None] & ((xx >= 0) & (xx < w))[None, :]
            shifted = search[np.clip(yy, 0, h - 1)[:, None], np.clip(xx, 0, w - 1)[None, :]]
            sad = _block_sum(np.abs(ref - np.where(inside, shifted, 0.0)), block, nby, nbx)
        better = sad < best
        best = np.where(better, sad, best)
        disp[better] = (dy, dx)
    return disp


def _interpolate_blocks(vec: np.ndarray, valid: np.ndarray, block: int, h: int, w: int) -> np.ndarray:
    """Bilinear interpolation of per-block vectors between block centres.

    Only valid blocks contribute; weights renormalize over them so that
    pixels next to motionless blocks keep the full motion of their
    neighbours. Pixels with no valid neighbour get zero.
    """
    nby, nbx = valid.shape
    cy = (np.arange(h) + 0.5) / block - 0.5
    cx = (np.arange(w) + 0.5) / block - 0.5
    cy = np.clip(cy, 0, nby - 1)
    cx = np.clip(cx, 0, nbx - 1)
    y0 = np.floor(cy).astype(np.int64)
    x0 = np.floor(cx).astype(np.int64)
    y1 = np.minimum(y0 + 1, nby - 1)
    x1 = np.minimum(x0 + 1, nbx - 1)
    fy = (cy - y0)[:, None]
    fx = (cx - x0)[None, :]
    out = np.zeros((h, w, vec.shape[-1]))
    wsum = np.zeros((h, w))
    for yi, xi, wt in ((y0, x0, (1 - fy) * (1 - fx)), (y0, x1, (1 - fy) * fx),
                       (y1, x0, fy * (1 - fx)), (y1, x1, fy * fx)):
        m = valid[yi[:, None], xi[None, :]] * wt
        out += m[:, :, None] * vec[yi[:, None], xi[None, :]]
        wsum += m
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(wsum[:, :, None] > 0, out / wsum[:, :, None], 0.0)
    return out


def estimate_flow(events: EventStream, t0: int, t_mid: int, t1: int, block: int = 16,
                  radius: int = 8, energy_floor: float = 4.0) -> FlowField:
    """Motion over ``[t0, t1)`` from the activity of its two halves.

    Accumulation magnitudes over ``[t0, t_mid)`` and ``[t_mid, t1)`` are
    scaled by their joint maximum and block-matched; the integer block
    displacement is doubled because the halves' centres are half an
    interval apart. Blocks with fewer than ``energy_floor`` first-half
    events get no motion and do not dilute their neighbours.
    """
    if block < 4 or radius < 1:
        raise ValueError("block must be >= 4 and radius >= 1")
    h, w = events.height, events.width
    if h < block or w < block:
        raise ValueError(f"frame {w}x{h} is smaller than one {block}x{block} block")
    if not t0 <= t_mid <= t1:
        raise ValueError("need t0 <= t_mid <= t1")
    size = h * w

    def activity(a, b):
        part = slice_events(events, a, b)
        idx = part.y.astype(np.int64) * w + part.x
        signed = np.bincount(idx, weights=part.p.astype(np.float64), minlength=size)
        count = np.bincount(idx, minlength=size)
        return np.abs(signed).reshape(h, w), count.reshape(h, w)

    a1, n1 = activity(t0, t_mid)
    a2, _ = activity(t_mid, t1)
    peak = max(a1.max(), a2.max())
    if peak == 0:
        return FlowField.zeros(h, w)
    a1, a2 = a1 * (255.0 / peak), a2 * (255.0 / peak)
    nby, nbx = h // block, w // block
    # only the first half is matched, so only its content can vouch for a block
    energy = _block_sum(n1, block, nby, nbx)
    valid = energy >= energy_floor
    disp = _match_blocks(a1, a2, block, radius, clamp=False) * 2
    disp[~valid] = 0
    field = _interpolate_blocks(disp[:, :, ::-1].astype(np.float64), valid, block, h, w)
    return FlowField(field[:, :, 0], field[:, :, 1])


# Warping ---------------------------------------------------------------

def _bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    if img.ndim == 3:
        fx, fy = fx[:, :, None], fy[:, :, None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def warp_frame(frame, flow: FlowField, tau: float, direction: str = "left"):
    """Backward-warp a boundary frame to fraction ``tau`` of the interval.

    From the left frame the sample point is ``x - tau * flow(x)``; from the
    right frame it is ``x + (1 - tau) * flow(x)``. Samples outside the
    frame clamp to the nearest edge pixel.
    """
    if (flow.height, flow.width) != frame.pixels.shape[:2]:
        raise ValueError("flow and frame geometry differ")
    if direction == "left":
        scale = -tau
    elif direction == "right":
        scale = 1.0 - tau
    else:
        raise ValueError("direction must be 'left' or 'right'")
    if scale == 0 or not (flow.u.any() or flow.v.any()):
        return frame.with_pixels(frame.pixels)
    gy, gx = np.mgrid[0:frame.height, 0:frame.width].astype(np.float64)
    out = _bilinear(frame.pixels, gx + scale * flow.u, gy + scale * flow.v)
    return frame.with_pixels(out)


def refine_warp(warped, synthesized, block: int = 16, radius: int = 8) -> FlowField:
    """Residual flow that moves ``warped`` toward ``synthesized``.

    One integer vector per block, constant inside the block; applying it
    with ``warp_frame(warped, residual, 1.0)`` never raises a block's mean
    absolute difference to ``synthesized`` (such blocks keep zero).
    """
    a = to_grayscale(warped).pixels
    b = to_grayscale(synthesized).pixels
    if a.shape != b.shape:
        raise ValueError("geometry mismatch")
    h, w = a.shape
    if h < block or w < block:
        return FlowField.zeros(h, w)
    nby, nbx = h // block, w // block
    # refined(x) = warped(x - d), so match synthesized blocks against warped at x - d
    disp = -_match_blocks(b, a, block, radius, clamp=True)
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    u[:nby * block, :nbx * block] = np.kron(disp[:, :, 1], np.ones((block, block)))
    v[:nby * block, :nbx * block] = np.kron(disp[:, :, 0], np.ones((block, block)))
    residual = FlowField(u, v)
    refined = warp_frame(GrayFrame(a), residual, 1.0, "left").pixels
    before = _block_sum(np.abs(a - b), block, nby, nbx)
    after = _block_sum(np.abs(refined - b), block, nby, nbx)
    worse = np.kron(after > before, np.ones((block, block), bool))
    u[:nby * block, :nbx * block][worse] = 0.0
    v[:nby * block, :nbx * block][worse] = 0.0
    return FlowField(u, v)


def blend(warp_left, warp_right, synth_left, synth_right, tau: float, alpha: float = 0.5):
    """Convex combination: ``alpha`` splits warp vs synthesis, ``tau`` left vs right."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    weights = (alpha * (1 - tau), alpha * tau, (1 - alpha) * (1 - tau), (1 - alpha) * tau)
    frames = (warp_left, warp_right, synth_left, synth_right)
    shape = warp_left.pixels.shape
    if any(f.pixels.shape != shape for f in frames):
        raise ValueError("geometry mismatch")
    out = sum(wt * f.pixels for wt, f in zip(weights, frames) if wt != 0)
    if not isinstance(out, np.ndarray):
        out = np.zeros(shape)
    # a convex mix never leaves the inputs' per-pixel range; clip float fuzz
    stack = np.stack([f.pixels for f in frames])
    out = np.clip(out, stack.min(axis=0), stack.max(axis=0))
    return warp_left.with_pixels(out)


# Driver ----------------------------------------------------------------

def _mid(a: int, b: int) -> int:
    return (a + b) // 2


def interpolate(req: InterpolationRequest) -> FrameSequence:
    """Intermediate frames at ``left.t + Δt`` for every requested Δt."""
    left, right = req.left, req.right
    interval = right.t - left.t
    flow = None
    if req.method in ("warp", "blend"):
        flow = estimate_flow(req.events, left.t, _mid(left.t, right.t), right.t,
                             req.block, req.radius, req.energy_floor)
    frames = []
    for dt in req.targets:
        t = left.t + dt
        tau = dt / interval
        if req.method in ("synthesis", "blend"):
            s_left = synthesis_integrate(left, req.events, t, req.contrast, "forward", req.epsilon)
            s_right = synthesis_integrate(right, req.events, t, req.contrast, "backward", req.epsilon)
        if req.method == "synthesis":
            out = blend(s_left, s_right, s_left, s_right, tau, alpha=0.0)
        else:
            w_left = warp_frame(left, flow, tau, "left")
            w_right = warp_frame(right, flow, tau, "right")
            if req.method == "warp":
                out = blend(w_left, w_right, w_left, w_right, tau, alpha=1.0)
            else:
                w_left = warp_frame(w_left, refine_warp(w_left, s_left, req.block, req.radius), 1.0)
                w_right = warp_frame(w_right, refine_warp(w_right, s_right, req.block, req.radius), 1.0)
                out = blend(w_left, w_right, s_left, s_right, tau, req.alpha)
        frames.append(out.with_pixels(out.pixels, t))
    fps = Fraction(10 ** 6 * (len(req.targets) + 1), interval)
    return FrameSequence(tuple(frames), fps)


def upscale_targets(interval: int, factor: int) -> list[int]:
    """``factor - 1`` equally spaced Δt values, rounded half up to whole µs."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    targets = [(2 * j * interval + factor) // (2 * factor) for j in range(1, factor)]
    if any(b <= a for a, b in zip([0] + targets, targets + [interval])):
        raise ValueError(f"interval of {interval} µs is too short for x{factor} upscaling")
    return targets


def upscale_sequence(seq: FrameSequence, events: EventStream, factor: int,
                     method: str = "blend", **options) -> FrameSequence:
    """Insert ``factor - 1`` interpolated frames between every pair of frames."""
    if len(seq) < 1:
        raise ValueError("empty sequence")
    out = [seq[0]]
    for left, right in zip(seq.frames, seq.frames[1:]):
        targets = upscale_targets(right.t - left.t, factor)
        if targets:
            req = InterpolationRequest(left, right, events, tuple(targets), method=method, **options)
            out.extend(interpolate(req).frames)
        out.append(right)
    return FrameSequence(tuple(out), seq.nominal_fps * factor)


@dataclass
class GridResult:
    input_fps: Fraction
    factor: int
    method: str
    psnr: float
    ssim: float
    baseline_psnr: float
    baseline_ssim: float
    per_position_psnr: list = field(default_factory=list)
    per_position_baseline: list = field(default_factory=list)


def evaluate_subsampling(seq: FrameSequence, events: EventStream, factor: int,
                         method: str = "blend", **options) -> GridResult:
    """Drop frames to ``fps / factor``, upscale back by ``factor`` and score.

    Interpolated frames are compared with the held-out originals; the
    baseline repeats the left keyframe. Per-position lists hold the mean
    PSNR at each of the ``factor - 1`` intermediate positions.
    """
    kept = FrameSequence(seq.frames[::factor], seq.nominal_fps / factor)
    if len(kept) < 2:
        raise ValueError("sequence too short for this subsampling factor")
    pos_psnr = [[] for _ in range(factor - 1)]
    pos_base = [[] for _ in range(factor - 1)]
    ssims, base_ssims = [], []
    for i, (left, right) in enumerate(zip(kept.frames, kept.frames[1:])):
        truth = seq.frames[i * factor + 1:(i + 1) * factor]
        targets = tuple(f.t - left.t for f in truth)
        req = InterpolationRequest(left, right, events, targets, method=method, **options)
        for j, (est, gt) in enumerate(zip(interpolate(req).frames, truth)):
            g_est, g_gt, g_left = to_grayscale(est), to_grayscale(gt), to_grayscale(left)
            pos_psnr[j].append(psnr(g_est, g_gt))
            pos_base[j].append(psnr(g_left, g_gt))
            if min(g_gt.pixels.shape) >= 11:
                ssims.append(ssim(g_est, g_gt))
                base_ssims.append(ssim(g_left, g_gt))
    per_pos = [float(np.mean(p)) for p in pos_psnr]
    per_base = [float(np.mean(p)) for p in pos_base]
    return GridResult(kept.nominal_fps, factor, method,
                      float(np.mean(per_pos)), float(np.mean(ssims)) if ssims else float("nan"),
                      float(np.mean(per_base)), float(np.mean(base_ssims)) if base_ssims else float("nan"),
                      per_pos, per_base)
