"""Synthetic scenes and an idealized event camera.

Scenes are a uniform background with discs and axis-aligned rectangles
moving at constant velocity. Frames are rendered analytically with
supersampling; events come from the per-pixel log-intensity threshold
model, so every test downstream has an exact ground truth.

Coordinates: pixel ``(x, y)`` is centred on the integer point ``(x, y)``
and covers ``[x - 0.5, x + 0.5) x [y - 0.5, y + 0.5)``. Scene coordinates
are the frame camera's pixel coordinates. An event sensor seen through a
:class:`SensorView` samples the scene at ``r * (x - dx), r * (y - dy)``,
the same map the registration stage estimates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

from .event_core import EventStream, FrameSequence, GrayFrame, RgbFrame

# relative slack on the threshold test so that exact multiples of C survive rounding
THRESHOLD_RTOL = 1e-9


@dataclass(frozen=True)
class MovingObject:
    """A disc (``radius``) or rectangle (``extent`` = full width, height)."""

    shape: str
    intensity: float
    center: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)  # pixels per second
    radius: float = 0.0
    extent: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.shape not in ("disc", "rect"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.shape == "disc" and self.radius <= 0:
            raise ValueError("disc radius must be positive")
        if self.shape == "rect" and min(self.extent) <= 0:
            raise ValueError("rectangle extents must be positive")
        if not all(math.isfinite(v) for v in self.velocity):
            raise ValueError("velocity must be finite")
        if not 0 <= self.intensity <= 255:
            raise ValueError("intensity must lie in [0, 255]")

    def center_at(self, t_us: float) -> tuple[float, float]:
        s = t_us / 1e6
        return (self.center[0] + self.velocity[0] * s, self.center[1] + self.velocity[1] * s)

    def half_size(self) -> tuple[float, float]:
        if self.shape == "disc":
            return (self.radius, self.radius)
        return (self.extent[0] / 2, self.extent[1] / 2)


def disc(radius, intensity, center, velocity=(0.0, 0.0)) -> MovingObject:
    return MovingObject("disc", intensity, tuple(center), tuple(velocity), radius=radius)


def rect(extent, intensity, center, velocity=(0.0, 0.0)) -> MovingObject:
    return MovingObject("rect", intensity, tuple(center), tuple(velocity), extent=tuple(extent))


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    background: float
    objects: tuple = ()
    duration: int = 100_000  # µs

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.width <= 0 or self.height <= 0:
            raise ValueError("scene geometry must be positive")
        if not 0 <= self.background <= 255:
            raise ValueError("background must lie in [0, 255]")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        for obj in self.objects:
            if obj.intensity == self.background:
                raise ValueError("object intensity equals background; it would never produce events")


@dataclass(frozen=True)
class SensorView:
    """Geometry of a second sensor and where its pixels land in the scene."""

    width: int
    height: int
    dx: float = 0.0
    dy: float = 0.0
    r: float = 1.0

    def __post_init__(self):
        if not (self.r > 0 and math.isfinite(self.r)):
            raise ValueError("scale ratio must be positive and finite")

    @classmethod
    def of_scene(cls, scene: SceneSpec) -> "SensorView":
        return cls(scene.width, scene.height)


@dataclass(frozen=True)
class EventCameraModel:
    contrast_threshold: float = 0.15
    epsilon: float = 1.0
    sim_step: int = 100  # µs
    threshold_sigma: float = 0.0  # relative per-pixel jitter, off by default
    seed: int = 0

    def __post_init__(self):
        if self.contrast_threshold <= 0:
            raise ValueError("contrast threshold must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.sim_step < 1:
            raise ValueError("sim_step must be at least 1 µs")
        if self.threshold_sigma < 0:
            raise ValueError("threshold_sigma must be non-negative")


# Rendering -------------------------------------------------------------

def _sample_offsets(supersample: int) -> np.ndarray:
    return (np.arange(supersample) + 0.5) / supersample - 0.5


def _render_array(scene: SceneSpec, t: float, supersample: int, view: SensorView) -> np.ndarray:
    out = np.full((view.height, view.width), float(scene.background))
    offs = _sample_offsets(supersample)
    r = view.r
    for obj in scene.objects:
        cx, cy = obj.center_at(t)
        hx, hy = obj.half_size()
        # pixel index range whose footprint can touch the object's bounding box
        x0 = max(int(math.floor((cx - hx) / r + view.dx - 0.5)), 0)
        x1 = min(int(math.ceil((cx + hx) / r + view.dx + 0.5)) + 1, view.width)
        y0 = max(int(math.floor((cy - hy) / r + view.dy - 0.5)), 0)
        y1 = min(int(math.ceil((cy + hy) / r + view.dy + 0.5)) + 1, view.height)
        if x0 >= x1 or y0 >= y1:
            continue
        xs = r * ((np.arange(x0, x1)[:, None] + offs[None, :]).ravel() - view.dx)
        ys = r * ((np.arange(y0, y1)[:, None] + offs[None, :]).ravel() - view.dy)
        nx, ny = x1 - x0, y1 - y0
        if obj.shape == "disc":
            inside = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2 <= obj.radius ** 2
            cover = inside.reshape(ny, supersample, nx, supersample).mean(axis=(1, 3))
        else:
            fx = (np.abs(xs - cx) <= hx).reshape(nx, supersample).mean(axis=1)
            fy = (np.abs(ys - cy) <= hy).reshape(ny, supersample).mean(axis=1)
            cover = fy[:, None] * fx[None, :]
        region = out[y0:y1, x0:x1]
        out[y0:y1, x0:x1] = region * (1.0 - cover) + obj.intensity * cover
    return out


def render_frame(scene: SceneSpec, t: int, supersample: int = 4,
                 view: Optional[SensorView] = None) -> GrayFrame:
    """Anti-aliased rendering of the scene at time ``t`` (µs).

    Each pixel is the mean of ``supersample**2`` point samples. Objects are
    composited in list order using their per-pixel coverage.
    """
    if not 0 <= t <= scene.duration:
        raise ValueError(f"t={t} outside scene duration [0, {scene.duration}]")
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    view = view or SensorView.of_scene(scene)
    return GrayFrame(_render_array(scene, t, supersample, view), t)


def frame_times(duration: int, fps) -> list[int]:
    """``round(k * 1e6 / fps)`` for every k that stays within ``duration``."""
    fps = Fraction(fps)
    if fps <= 0:
        raise ValueError("fps must be positive")
    period = Fraction(10 ** 6) / fps
    times = []
    k = 0
    while True:
        t = math.floor(k * period + Fraction(1, 2))
        if t > duration:
            return times
        times.append(t)
        k += 1


def generate_rgb_sequence(scene: SceneSpec, fps=Fraction(120), supersample: int = 4,
                          rgb: bool = True) -> FrameSequence:
    frames = []
    for t in frame_times(scene.duration, fps):
        gray = render_frame(scene, t, supersample)
        if rgb:
            frames.append(RgbFrame(np.repeat(gray.pixels[:, :, None], 3, axis=2), t))
        else:
            frames.append(gray)
    return FrameSequence(tuple(frames), Fraction(fps))


# Event generation ------------------------------------------------------

def _pixel_thresholds(model: EventCameraModel, shape) -> np.ndarray:
    c = np.full(shape, model.contrast_threshold)
    if model.threshold_sigma > 0:
        rng = np.random.default_rng(model.seed)
        c = c * (1.0 + model.threshold_sigma * rng.standard_normal(shape))
        c = np.maximum(c, 0.01 * model.contrast_threshold)
    return c


def sim_times(duration: int, sim_step: int) -> list[int]:
    times = list(range(0, duration + 1, sim_step))
    if times[-1] != duration:
        times.append(duration)
    return times


def generate_events(scene: SceneSpec, model: EventCameraModel = EventCameraModel(),
                    view: Optional[SensorView] = None, supersample: int = 4) -> EventStream:
    """Events an idealized sensor would report while watching ``scene``."""
    view = view or SensorView.of_scene(scene)
    times = sim_times(scene.duration, model.sim_step)
    thresholds = _pixel_thresholds(model, (view.height, view.width))
    eps = model.epsilon

    def log_frames():
        for t in times:
            yield np.log(_render_array(scene, t, supersample, view) + eps)

    return events_from_log_frames(log_frames(), times, thresholds, view.width, view.height)


def events_from_log_frames(log_frames: Iterable[np.ndarray], times: Sequence[int],
                           thresholds, width: int, height: int) -> EventStream:
    """Run the threshold model over log-intensity samples taken at ``times``.

    The reference level starts at the first sample and moves by exactly one
    threshold per emitted event. Crossing times are interpolated linearly
    within each step and rounded up to whole microseconds, so an event
    stamped ``t`` has crossed by ``t``.
    """
    thresholds = np.broadcast_to(np.asarray(thresholds, dtype=np.float64), (height, width)).ravel()
    it = iter(log_frames)
    base = np.asarray(next(it), dtype=np.float64).ravel()
    level = np.zeros(base.shape, np.int64)
    prev = base
    xs, ys, ts, ps = [], [], [], []
    for k, cur in enumerate(it, start=1):
        cur = np.asarray(cur, dtype=np.float64).ravel()
        ref = base + level * thresholds
        diff = cur - ref
        count = np.floor(np.abs(diff) / thresholds + THRESHOLD_RTOL).astype(np.int64)
        hit = np.flatnonzero(count)
        if hit.size:
            n = count[hit]
            sign = np.sign(diff[hit]).astype(np.int64)
            pix = np.repeat(hit, n)
            # 1..n for each firing pixel
            j = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n) + 1
            s = np.repeat(sign, n)
            crossing = ref[pix] + s * j * thresholds[pix]
            span = cur[pix] - prev[pix]
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(span != 0, (crossing - prev[pix]) / span, 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            t0, t1 = times[k - 1], times[k]
            stamp = np.clip(np.ceil(t0 + frac * (t1 - t0) - 1e-6).astype(np.int64), t0 + 1, t1)
            xs.append(pix % width)
            ys.append(pix // width)
            ts.append(stamp)
            ps.append(s)
            level[hit] += sign * n
        prev = cur
    if not ts:
        return EventStream(width, height)
    t = np.concatenate(ts)
    order = np.argsort(t, kind="stable")
    return EventStream(width, height, np.concatenate(xs)[order], np.concatenate(ys)[order],
                       t[order], np.concatenate(ps)[order])


def shift_events(stream: EventStream, delta: int) -> EventStream:
    """Add ``delta`` µs to every timestamp (injects a known clock offset)."""
    if len(stream) and int(stream.t[0]) + delta < 0:
        raise ValueError(f"shift by {delta} µs makes timestamp {int(stream.t[0]) + delta} negative")
    return EventStream(stream.width, stream.height, stream.x, stream.y, stream.t + delta, stream.p)


def feature_pairs(view: SensorView, second: tuple[float, float]):
    """Two noiseless (event point, frame point) correspondences for ``view``.

    The first pair sits at the frame camera's origin, the one location where
    a single-point shift estimate agrees with the scaled projection for any
    scale; the second is ``second`` (event coordinates) mapped through it.
    """
    p1_event = (view.dx, view.dy)
    p2_frame = (view.r * (second[0] - view.dx), view.r * (second[1] - view.dy))
    return ((p1_event, (0.0, 0.0)), (tuple(second), p2_frame))


# Scene files -----------------------------------------------------------

def _sections(text: str):
    name, body = None, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            if name is not None:
                yield name, body
            name, body = line[1:-1].strip().lower(), {"__line__": lineno}
            continue
        key, sep, value = line.partition("=")
        if not sep or name is None:
            raise ValueError(f"scene file line {lineno}: expected 'key = value' inside a section")
        body[key.strip().lower()] = value.strip()
    if name is not None:
        yield name, body


def _num(section, key, default=None, cast=float):
    if key not in section:
        if default is None:
            raise ValueError(f"scene file section at line {section['__line__']}: missing {key!r}")
        return default
    try:
        return cast(section[key])
    except ValueError:
        raise ValueError(f"scene file: bad value for {key!r}: {section[key]!r}") from None


def parse_scene(text: str) -> tuple[SceneSpec, Optional[SensorView]]:
    """Parse the key-value scene format (see README) into a scene and optional view."""
    scene_kv, objects, view = None, [], None
    for name, kv in _sections(text):
        if name == "scene":
            scene_kv = kv
        elif name == "object":
            shape = kv.get("shape", "disc")
            center = (_num(kv, "x"), _num(kv, "y"))
            velocity = (_num(kv, "vx", 0.0), _num(kv, "vy", 0.0))
            intensity = _num(kv, "intensity")
            if shape == "disc":
                objects.append(disc(_num(kv, "radius"), intensity, center, velocity))
            elif shape == "rect":
                objects.append(rect((_num(kv, "extent_x"), _num(kv, "extent_y")), intensity, center, velocity))
            else:
                raise ValueError(f"scene file line {kv['__line__']}: unknown shape {shape!r}")
        elif name == "event_camera":
            view = SensorView(_num(kv, "width", cast=int), _num(kv, "height", cast=int),
                              _num(kv, "dx", 0.0), _num(kv, "dy", 0.0), _num(kv, "r", 1.0))
        else:
            raise ValueError(f"scene file line {kv['__line__']}: unknown section [{name}]")
    if scene_kv is None:
        raise ValueError("scene file lacks a [scene] section")
    scene = SceneSpec(_num(scene_kv, "width", cast=int), _num(scene_kv, "height", cast=int),
                      _num(scene_kv, "background"), tuple(objects),
                      _num(scene_kv, "duration_us", cast=int))
    return scene, view


def format_scene(scene: SceneSpec, view: Optional[SensorView] = None) -> str:
    lines = ["[scene]", f"width = {scene.width}", f"height = {scene.height}",
             f"background = {scene.background!r}", f"duration_us = {scene.duration}"]
    for obj in scene.objects:
        lines += ["", "[object]", f"shape = {obj.shape}"]
        if obj.shape == "disc":
            lines.append(f"radius = {obj.radius!r}")
        else:
            lines += [f"extent_x = {obj.extent[0]!r}", f"extent_y = {obj.extent[1]!r}"]
        lines += [f"intensity = {obj.intensity!r}", f"x = {obj.center[0]!r}", f"y = {obj.center[1]!r}",
                  f"vx = {obj.velocity[0]!r}", f"vy = {obj.velocity[1]!r}"]
    if view is not None:
        lines += ["", "[event_camera]", f"width = {view.width}", f"height = {view.height}",
                  f"dx = {view.dx!r}", f"dy = {view.dy!r}", f"r = {view.r!r}"]
    return "\n".join(lines) + "\n"


def demo_scene(duration: int = 400_000) -> SceneSpec:
    """A bright disc and a dark bar crossing a mid-gray background."""
    return SceneSpec(
        width=128, height=96, background=60.0, duration=duration,
        objects=(
            disc(9.0, 210.0, (20.0, 30.0), (220.0, 90.0)),
            rect((8.0, 30.0), 15.0, (110.0, 60.0), (-150.0, 0.0)),
        ),
    )
