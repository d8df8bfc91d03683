"""Temporal synchronization and spatial registration of events to frames.

Clock convention: an event stamped ``t_j`` on the event clock happened at
``t_i = t_j - offset`` on the frame clock, so a positive offset means the
event clock runs ahead. Spatially, event pixel ``(x_j, y_j)`` lands on
frame pixel ``(r * (x_j - dx), r * (y_j - dy))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .accum import SsimReference, frame_abs_diff
from .event_core import (Event, EventStream, FrameSequence, GrayFrame, round_half_away,
                         to_grayscale)

# guards against unit mistakes such as a search span given in ms
MAX_SPAN_PERIODS = 4


@dataclass(frozen=True)
class AlignConfig:
    n_candidates: int = 250
    step: int = 100  # µs
    window: int = 25_000  # µs, also the default coarse scan step
    interleave: int = 3
    ssim_frames: int = 10
    start: int = 0  # first subsequence frame used by the search
    unsigned: bool = False
    compare_at: str = "frame"  # or "event"

    def __post_init__(self):
        for name in ("n_candidates", "step", "window", "interleave", "ssim_frames"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.start < 0:
            raise ValueError("start must be non-negative")
        if self.compare_at not in ("frame", "event"):
            raise ValueError("compare_at must be 'frame' or 'event'")


@dataclass(frozen=True)
class SpatialRegistration:
    dx: float = 0.0
    dy: float = 0.0
    r: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.r) and self.r > 0):
            raise ValueError(f"scale ratio must be positive and finite, got {self.r}")


@dataclass(frozen=True)
class TemporalAlignment:
    subsequence_index: int
    k: int
    offset_us: int
    score: float
    score_curve: np.ndarray = field(repr=False)  # (interleave, n_candidates)
    phases: tuple = ()  # µs of each subsequence's first frame after subsequence 0's
    flagged: tuple = ()  # candidate indices with an empty accumulation window


class ProjectedEvent(NamedTuple):
    x: float
    y: float
    t: int
    out_of_frame: bool
    negative_time: bool


@dataclass(frozen=True)
class Projection:
    """Event camera -> frame camera map: scale about the shifted origin, then retime."""

    registration: SpatialRegistration
    dt_us: int = 0
    width: int = 0
    height: int = 0

    def forward(self, x, y, t):
        reg = self.registration
        return reg.r * (x - reg.dx), reg.r * (y - reg.dy), t - self.dt_us

    def inverse(self, x, y, t):
        reg = self.registration
        return x / reg.r + reg.dx, y / reg.r + reg.dy, t + self.dt_us


# Spatial registration --------------------------------------------------

def estimate_shift(feat_event, feat_rgb) -> tuple[float, float]:
    """Shift between one matched feature seen by both cameras (event minus frame)."""
    return (feat_event[0] - feat_rgb[0], feat_event[1] - feat_rgb[1])


def estimate_scale(pair1, pair2) -> float:
    """Ratio of frame-camera to event-camera distance between two matched features.

    Each pair is ``(event_point, rgb_point)``.
    """
    (e1, i1), (e2, i2) = pair1, pair2
    d_event = math.hypot(e2[0] - e1[0], e2[1] - e1[1])
    if d_event == 0:
        raise ValueError("event-camera feature points coincide; scale is undefined")
    return math.hypot(i2[0] - i1[0], i2[1] - i1[1]) / d_event


def register_features(pair1, pair2) -> SpatialRegistration:
    dx, dy = estimate_shift(*pair1)
    return SpatialRegistration(dx, dy, estimate_scale(pair1, pair2))


def build_projection(reg: SpatialRegistration, dt_us: int = 0, width: int = 0,
                     height: int = 0) -> Projection:
    if not reg.r > 0:
        raise ValueError("scale ratio must be positive")
    return Projection(reg, int(dt_us), width, height)


def project_event(proj: Projection, e: Event) -> ProjectedEvent:
    x, y, t = proj.forward(e.x, e.y, e.t)
    xr, yr = round_half_away(x), round_half_away(y)
    out = bool(proj.width and proj.height) and not (0 <= xr < proj.width and 0 <= yr < proj.height)
    return ProjectedEvent(float(x), float(y), int(t), out, t < 0)


def project_stream(proj: Projection, stream: EventStream,
                   target_geometry: Optional[tuple[int, int]] = None) -> tuple[EventStream, int]:
    """Map every event into frame-camera pixels and time.

    Coordinates round half away from zero. Events falling outside the target
    ``(width, height)`` or before time zero are dropped; the second return
    value counts them.
    """
    width, height = target_geometry or (proj.width, proj.height)
    if not (width and height):
        raise ValueError("target geometry is required")
    x, y, t = proj.forward(stream.x.astype(np.float64), stream.y.astype(np.float64), stream.t)
    xr = round_half_away(x)
    yr = round_half_away(y)
    keep = (xr >= 0) & (xr < width) & (yr >= 0) & (yr < height) & (t >= 0)
    order = np.argsort(t[keep], kind="stable")
    out = EventStream(width, height, xr[keep][order].astype(np.int64), yr[keep][order].astype(np.int64),
                      t[keep][order], stream.p[keep][order])
    return out, int(len(stream) - keep.sum())


def _nearest_index(coords_x, coords_y, width, height) -> np.ndarray:
    xr = round_half_away(coords_x).astype(np.int64)
    yr = round_half_away(coords_y).astype(np.int64)
    ok = (xr >= 0) & (xr < width) & (yr >= 0) & (yr < height)
    return np.where(ok, yr * width + xr, -1)


def resample_map(reg: SpatialRegistration, src: tuple[int, int], dst: tuple[int, int],
                 to_frame: bool = True) -> np.ndarray:
    """Flat source index feeding each destination pixel (-1 where none).

    ``to_frame`` maps an event-camera image (``src``) onto frame-camera
    pixels (``dst``) by inverse projection with nearest sampling; otherwise
    the direction is reversed.
    """
    dw, dh = dst
    gy, gx = np.mgrid[0:dh, 0:dw].astype(np.float64)
    if to_frame:
        sx, sy = gx / reg.r + reg.dx, gy / reg.r + reg.dy
    else:
        sx, sy = reg.r * (gx - reg.dx), reg.r * (gy - reg.dy)
    return _nearest_index(sx, sy, src[0], src[1]).reshape(dh, dw)


def apply_map(values: np.ndarray, index_map: np.ndarray) -> np.ndarray:
    flat = np.asarray(values).ravel()
    return np.where(index_map >= 0, flat[np.maximum(index_map, 0)], 0)


# Temporal synchronization ---------------------------------------------

def split_interleaved(seq: FrameSequence, factor: int) -> list[FrameSequence]:
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor > len(seq):
        raise ValueError(f"factor {factor} exceeds sequence length {len(seq)}")
    return [FrameSequence(seq.frames[m::factor], seq.nominal_fps / factor) for m in range(factor)]


class _WindowAccumulator:
    """Fast repeated accumulation of one stream, projected to the comparison geometry."""

    def __init__(self, events: EventStream, unsigned: bool):
        self.events = events
        self.t = events.t
        self.pix = events.y.astype(np.int64) * events.width + events.x
        self.weights = None if unsigned else events.p.astype(np.float64)
        self.size = events.width * events.height

    def count(self, t0, t1) -> int:
        i0, i1 = np.searchsorted(self.t, [t0, t1])
        return int(i1 - i0)

    def values(self, t0, t1) -> np.ndarray:
        i0, i1 = np.searchsorted(self.t, [t0, t1])
        w = None if self.weights is None else self.weights[i0:i1]
        return np.bincount(self.pix[i0:i1], weights=w, minlength=self.size)


def _normalized(values: np.ndarray) -> np.ndarray:
    mag = np.abs(values).astype(np.float64)
    peak = mag.max()
    return mag * (255.0 / peak) if peak > 0 else mag


def _gray_frames(seq: FrameSequence) -> list[GrayFrame]:
    return [to_grayscale(f) for f in seq]


def coarse_offset(rgb: FrameSequence, events: EventStream, scan_step: int = 25_000,
                  reg: Optional[SpatialRegistration] = None, interleave: int = 3,
                  unsigned: bool = False) -> int:
    """Offset on a ``scan_step`` grid that best matches one difference image.

    The difference image is taken between frames ``interleave`` apart where
    the video changes most; every grid offset whose window holds at least
    one event is scored by SSIM.
    """
    if len(rgb) <= interleave or len(events) == 0:
        raise ValueError("coarse search needs more than `interleave` frames and a non-empty event stream")
    if scan_step <= 0:
        raise ValueError("scan_step must be positive")
    reg = reg or SpatialRegistration()
    gray = _gray_frames(rgb)
    diffs = [frame_abs_diff(gray[i], gray[i + interleave]) for i in range(len(gray) - interleave)]
    best = int(np.argmax([d.pixels.sum() for d in diffs]))
    t_a, t_b = gray[best].t, gray[best + interleave].t
    span = t_b - t_a
    t_first, t_last = int(events.t[0]), int(events.t[-1])
    if t_last + 1 - t_first < span:
        raise ValueError("event stream is shorter than one accumulation window")
    lo = math.floor((t_first - t_b) / scan_step)
    hi = math.ceil((t_last + 1 - t_a) / scan_step)
    height, width = gray[0].pixels.shape
    index_map = resample_map(reg, (events.width, events.height), (width, height))
    ref = SsimReference(diffs[best].pixels)
    acc = _WindowAccumulator(events, unsigned)
    best_offset, best_score = None, -np.inf
    for n in range(lo, hi + 1):
        o = n * scan_step
        if acc.count(t_a + o, t_b + o) == 0:
            continue
        img = _normalized(apply_map(acc.values(t_a + o, t_b + o), index_map))
        score = ref.score(img)
        if score > best_score:
            best_offset, best_score = o, score
    if best_offset is None:
        raise ValueError("empty event coverage: no coarse window contains events")
    return best_offset


def temporal_search(rgb: FrameSequence, events: EventStream, coarse: int = 0,
                    reg: Optional[SpatialRegistration] = None,
                    cfg: AlignConfig = AlignConfig()) -> TemporalAlignment:
    """Fine offset search over interleaved subsequences and stepped candidates.

    Candidate ``k`` accumulates events over windows that start at subsequence
    0's frame times plus ``coarse + k * step``. Each subsequence ``m`` scores
    the same windows against its own difference images, so its implied
    offset is ``coarse + k * step - phase_m``. The score is the mean SSIM
    over ``ssim_frames`` consecutive difference images.
    """
    reg = reg or SpatialRegistration()
    need = cfg.interleave * (cfg.start + cfg.ssim_frames + 1)
    if len(rgb) < need:
        raise ValueError(f"temporal search needs at least {need} frames, got {len(rgb)}")
    subs = [_gray_frames(s) for s in split_interleaved(rgb, cfg.interleave)]
    frames0 = subs[0][cfg.start:cfg.start + cfg.ssim_frames + 1]
    period = (frames0[-1].t - frames0[0].t) / cfg.ssim_frames
    if cfg.n_candidates * cfg.step > MAX_SPAN_PERIODS * period:
        raise ValueError(
            f"search span {cfg.n_candidates * cfg.step} µs exceeds {MAX_SPAN_PERIODS} subsequence periods"
        )
    phases = tuple(int(s[cfg.start].t - frames0[0].t) for s in subs)

    height, width = subs[0][0].pixels.shape
    refs = []
    for sub in subs:
        frames = sub[cfg.start:cfg.start + cfg.ssim_frames + 1]
        diffs = [frame_abs_diff(a, b).pixels for a, b in zip(frames, frames[1:])]
        refs.append(diffs)
    if cfg.compare_at == "frame":
        index_map = resample_map(reg, (events.width, events.height), (width, height))
        refs = [[SsimReference(d) for d in diffs] for diffs in refs]
    else:
        index_map = None
        to_event = resample_map(reg, (width, height), (events.width, events.height), to_frame=False)
        refs = [[SsimReference(apply_map(d, to_event)) for d in diffs] for diffs in refs]

    acc = _WindowAccumulator(events, cfg.unsigned)
    curve = np.empty((cfg.interleave, cfg.n_candidates))
    flagged = []
    for k in range(cfg.n_candidates):
        shift = coarse + k * cfg.step
        windows = [(a.t + shift, b.t + shift) for a, b in zip(frames0, frames0[1:])]
        if any(acc.count(t0, t1) == 0 for t0, t1 in windows):
            curve[:, k] = -1.0
            flagged.append(k)
            continue
        totals = np.zeros(cfg.interleave)
        for s, (t0, t1) in enumerate(windows):
            values = acc.values(t0, t1)
            if index_map is not None:
                values = apply_map(values, index_map)
            img = _normalized(values.reshape(-1))
            img = img.reshape(refs[0][s].shape)
            for m in range(cfg.interleave):
                totals[m] += refs[m][s].score(img)
        curve[:, k] = totals / cfg.ssim_frames
    if len(flagged) == cfg.n_candidates:
        raise ValueError("empty event coverage: every candidate window lacks events")
    flat = int(np.argmax(curve))  # first maximum: smallest m, then smallest k
    m, k = divmod(flat, cfg.n_candidates)
    offset = coarse + k * cfg.step - phases[m]
    return TemporalAlignment(m, k, offset, float(curve[m, k]), curve, phases, tuple(flagged))


# Text formats ----------------------------------------------------------

def format_registration(reg: SpatialRegistration) -> str:
    return f"dx={reg.dx!r} dy={reg.dy!r} r={reg.r!r}\n"


def parse_registration(text: str) -> SpatialRegistration:
    kv = {}
    for token in text.replace(",", " ").split():
        if token.startswith("#"):
            break
        key, sep, value = token.partition("=")
        if not sep:
            raise ValueError(f"malformed registration token {token!r}")
        kv[key] = value
    try:
        return SpatialRegistration(float(kv["dx"]), float(kv["dy"]), float(kv["r"]))
    except KeyError as exc:
        raise ValueError(f"registration lacks {exc.args[0]!r}") from None


def format_report(al: TemporalAlignment, reg: Optional[SpatialRegistration] = None) -> str:
    lines = ["# projection: x_i = r*(x_j - dx); y_i = r*(y_j - dy) (left-hand side of the "
             "y line read as y_i); t_i = t_j - offset_us"]
    if reg is not None:
        lines.append(f"# registration: {format_registration(reg).strip()}")
    if al.flagged:
        lines.append(f"# {len(al.flagged)} candidates had empty windows and scored -1")
    lines.append(f"subseq={al.subsequence_index} k={al.k} offset_us={al.offset_us} ssim={al.score:.6f}")
    return "\n".join(lines) + "\n"


def format_score_curve(al: TemporalAlignment) -> str:
    rows = ["subseq,k,ssim"]
    for m in range(al.score_curve.shape[0]):
        rows.extend(f"{m},{k},{float(al.score_curve[m, k])!r}" for k in range(al.score_curve.shape[1]))
    return "\n".join(rows) + "\n"


def parse_score_curve(text: str) -> list[tuple[int, int, float]]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "subseq,k,ssim":
        raise ValueError("score curve CSV must start with 'subseq,k,ssim'")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"malformed score curve line {lineno}: {line!r}")
        try:
            rows.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError:
            raise ValueError(f"malformed score curve line {lineno}: {line!r}") from None
    return rows
