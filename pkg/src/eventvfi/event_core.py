"""Event and frame data model, plus the EVT-CSV / EVB1 / PNM codecs.

Timestamps are integer microseconds throughout. Events live in
column-oriented numpy arrays so that million-event streams stay cheap;
single records are exposed as :class:`Event` tuples.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np

EVB1_MAGIC = b"EVB1"
EVB1_HEADER = struct.Struct("<4sHHQ")
EVB1_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class EventFormatError(ValueError):
    """Raised when event bytes or text violate the format or a stream invariant."""


class FrameFormatError(ValueError):
    """Raised for malformed PGM/PPM payloads or frame manifests."""


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered events from a sensor of fixed geometry.

    Columns ``x``, ``y``, ``t`` and ``p`` are read-only arrays. Construction
    validates sortedness, polarity values and pixel bounds and raises
    :class:`EventFormatError` on the first violation.
    """

    width: int
    height: int
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint16))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint16))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise EventFormatError(f"invalid sensor geometry {self.width}x{self.height}")
        x = np.asarray(self.x)
        y = np.asarray(self.y)
        t = np.asarray(self.t)
        p = np.asarray(self.p)
        n = len(t)
        if not (len(x) == len(y) == len(p) == n):
            raise EventFormatError("event columns have different lengths")
        if n:
            if np.any(t < 0):
                raise EventFormatError("negative timestamp")
            bad = np.flatnonzero((p != 1) & (p != -1))
            if bad.size:
                raise EventFormatError(f"polarity {int(p[bad[0]])} at event {bad[0]} not in {{-1, +1}}")
            bad = np.flatnonzero((x < 0) | (x >= self.width) | (y < 0) | (y >= self.height))
            if bad.size:
                i = bad[0]
                raise EventFormatError(
                    f"event {i} at ({int(x[i])}, {int(y[i])}) outside {self.width}x{self.height}"
                )
            dec = np.flatnonzero(np.diff(t) < 0)
            if dec.size:
                raise EventFormatError(f"non-monotone timestamps at event {dec[0] + 1}")
        object.__setattr__(self, "x", _readonly(x.astype(np.uint16, copy=False)))
        object.__setattr__(self, "y", _readonly(y.astype(np.uint16, copy=False)))
        object.__setattr__(self, "t", _readonly(t.astype(np.int64, copy=False)))
        object.__setattr__(self, "p", _readonly(p.astype(np.int8, copy=False)))

    @classmethod
    def from_events(cls, width: int, height: int, events: Sequence) -> "EventStream":
        if len(events) == 0:
            return cls(width, height)
        arr = np.asarray([tuple(e) for e in events], dtype=np.int64)
        return cls(width, height, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None

    def __repr__(self) -> str:
        span = f", t=[{self.t[0]}, {self.t[-1]}]" if len(self) else ""
        return f"EventStream({self.width}x{self.height}, n={len(self)}{span})"

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def take(self, index) -> "EventStream":
        """Subset by a slice or boolean mask (order is preserved)."""
        return EventStream(self.width, self.height, self.x[index], self.y[index], self.t[index], self.p[index])


def concat_events(streams: Sequence[EventStream]) -> EventStream:
    if not streams:
        raise ValueError("nothing to concatenate")
    w, h = streams[0].width, streams[0].height
    if any((s.width, s.height) != (w, h) for s in streams):
        raise ValueError("streams have different geometry")
    return EventStream(
        w, h,
        np.concatenate([s.x for s in streams]),
        np.concatenate([s.y for s in streams]),
        np.concatenate([s.t for s in streams]),
        np.concatenate([s.p for s in streams]),
    )


def slice_events(stream: EventStream, t0: int, t1: int) -> EventStream:
    """Events with ``t0 <= t < t1``. Adjacent slices partition the stream."""
    if t0 > t1:
        raise ValueError(f"slice start {t0} after end {t1}")
    i0, i1 = np.searchsorted(stream.t, [t0, t1], side="left")
    return stream.take(slice(i0, i1))


# EVT-CSV ---------------------------------------------------------------

def _parse_header(line: str) -> tuple[int, int]:
    fields = {}
    for part in line.strip().split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise EventFormatError(f"malformed header at line 1: {line.strip()!r}")
        fields[key.strip()] = value.strip()
    try:
        return int(fields["width"]), int(fields["height"])
    except (KeyError, ValueError):
        raise EventFormatError(f"malformed header at line 1: {line.strip()!r}") from None


def parse_events_csv(data: Union[bytes, str]) -> EventStream:
    """Decode EVT-CSV text. Every error message names the offending line."""
    if isinstance(data, bytes):
        try:
            data = data.decode("ascii")
        except UnicodeDecodeError as exc:
            raise EventFormatError(f"non-ASCII input: {exc}") from None
    lines = data.split("\n")
    if not lines or not lines[0].strip():
        raise EventFormatError("missing header line")
    width, height = _parse_header(lines[0])
    rows = []
    last_t = -1
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise EventFormatError(f"malformed line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            x, y, t, p = (int(v) for v in parts)
        except ValueError:
            raise EventFormatError(f"malformed line {lineno}: {line!r}") from None
        if p not in (-1, 1):
            raise EventFormatError(f"polarity {p} at line {lineno} not in {{-1, +1}}")
        if not (0 <= x < width and 0 <= y < height):
            raise EventFormatError(f"coordinates ({x}, {y}) out of bounds at line {lineno}")
        if t < 0:
            raise EventFormatError(f"negative timestamp at line {lineno}")
        if t < last_t:
            raise EventFormatError(f"non-monotone timestamps at line {lineno}")
        last_t = t
        rows.append((x, y, t, p))
    return EventStream.from_events(width, height, rows)


def write_events_csv(stream: EventStream) -> bytes:
    out = [f"width={stream.width},height={stream.height}"]
    out.extend(f"{x},{y},{t},{p}" for x, y, t, p in stream)
    return ("\n".join(out) + "\n").encode("ascii")


# EVB1 ------------------------------------------------------------------

def parse_events_binary(data: bytes) -> EventStream:
    if len(data) < EVB1_HEADER.size:
        raise EventFormatError(
            f"truncated header: expected {EVB1_HEADER.size} bytes, {len(data)} available"
        )
    magic, width, height, count = EVB1_HEADER.unpack_from(data)
    if magic != EVB1_MAGIC:
        raise EventFormatError(f"bad magic {magic!r}, expected {EVB1_MAGIC!r}")
    body = len(data) - EVB1_HEADER.size
    expected = count * EVB1_RECORD.itemsize
    if body < expected:
        raise EventFormatError(
            f"truncated record region: expected {expected} bytes for {count} records, {body} available"
        )
    if body > expected:
        raise EventFormatError(
            f"declared count {count} does not match record region: expected {expected} bytes, {body} present"
        )
    rec = np.frombuffer(data, dtype=EVB1_RECORD, count=count, offset=EVB1_HEADER.size)
    if count and rec["t"].max() > np.iinfo(np.int64).max:
        raise EventFormatError("timestamp exceeds int64 range")
    return EventStream(width, height, rec["x"], rec["y"], rec["t"].astype(np.int64), rec["p"])


def write_events_binary(stream: EventStream) -> bytes:
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise EventFormatError("geometry does not fit EVB1 u16 fields")
    rec = np.empty(len(stream), dtype=EVB1_RECORD)
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["t"] = stream.t
    rec["p"] = stream.p
    return EVB1_HEADER.pack(EVB1_MAGIC, stream.width, stream.height, len(stream)) + rec.tobytes()


def read_events(path: Union[str, os.PathLike]) -> EventStream:
    """Load an event file, choosing the codec from its first bytes."""
    data = Path(path).read_bytes()
    if data[:4] == EVB1_MAGIC:
        return parse_events_binary(data)
    return parse_events_csv(data)


def write_events(stream: EventStream, path: Union[str, os.PathLike], fmt: Optional[str] = None) -> None:
    """Write as EVT-CSV or EVB1; ``fmt`` overrides the choice by file suffix."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "evb1"
    if fmt not in ("csv", "evb1"):
        raise ValueError(f"unknown event format {fmt!r}")
    if fmt == "csv":
        path.write_bytes(write_events_csv(stream))
    else:
        path.write_bytes(write_events_binary(stream))


# Frames ----------------------------------------------------------------

def _frame_array(pixels, channels: int) -> np.ndarray:
    a = np.array(pixels, dtype=np.float64)
    if channels == 1 and a.ndim != 2:
        raise ValueError(f"gray frame needs a 2-D array, got shape {a.shape}")
    if channels == 3 and (a.ndim != 3 or a.shape[2] != 3):
        raise ValueError(f"rgb frame needs an HxWx3 array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("frame contains non-finite values")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GrayFrame:
    pixels: np.ndarray
    t: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pixels", _frame_array(self.pixels, 1))
        object.__setattr__(self, "t", int(self.t))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 1

    def with_pixels(self, pixels, t=None) -> "GrayFrame":
        return GrayFrame(pixels, self.t if t is None else t)

    def __eq__(self, other):
        if not isinstance(other, GrayFrame):
            return NotImplemented
        return self.t == other.t and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RgbFrame:
    pixels: np.ndarray
    t: int = 0

    def __post_init__(self):
        a = _frame_array(self.pixels, 3)
        if a.size and (a.min() < 0 or a.max() > 255):
            raise ValueError("rgb values must lie in [0, 255]")
        object.__setattr__(self, "pixels", a)
        object.__setattr__(self, "t", int(self.t))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return 3

    def with_pixels(self, pixels, t=None) -> "RgbFrame":
        return RgbFrame(pixels, self.t if t is None else t)

    def __eq__(self, other):
        if not isinstance(other, RgbFrame):
            return NotImplemented
        return self.t == other.t and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


Frame = Union[GrayFrame, RgbFrame]


@dataclass(frozen=True)
class FrameSequence:
    frames: tuple
    nominal_fps: Fraction = Fraction(120)

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "nominal_fps", Fraction(self.nominal_fps))
        if self.nominal_fps <= 0:
            raise ValueError("nominal_fps must be positive")
        if frames:
            kind = type(frames[0])
            shape = frames[0].pixels.shape
            for a, b in zip(frames, frames[1:]):
                if b.t <= a.t:
                    raise ValueError(f"frame timestamps not strictly increasing: {a.t} then {b.t}")
            for f in frames:
                if type(f) is not kind or f.pixels.shape != shape:
                    raise ValueError("frames in a sequence must share one geometry and kind")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def timestamps(self) -> list[int]:
        return [f.t for f in self.frames]


def to_grayscale(frame: Frame) -> GrayFrame:
    """BT.601 luma. Gray input passes through unchanged."""
    if isinstance(frame, GrayFrame):
        return frame
    px = frame.pixels
    gray = LUMA_WEIGHTS[0] * px[..., 0] + LUMA_WEIGHTS[1] * px[..., 1] + LUMA_WEIGHTS[2] * px[..., 2]
    # equal channels must map back exactly; the weighted sum can be off by an ulp
    equal = (px[..., 0] == px[..., 1]) & (px[..., 1] == px[..., 2])
    gray = np.where(equal, px[..., 0], gray)
    return GrayFrame(gray, frame.t)


# PGM / PPM -------------------------------------------------------------

def round_half_away(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def encode_pnm(frame: Frame) -> bytes:
    q = np.clip(round_half_away(frame.pixels), 0, 255).astype(np.uint8)
    magic = b"P5" if isinstance(frame, GrayFrame) else b"P6"
    return magic + f"\n{frame.width} {frame.height}\n255\n".encode("ascii") + q.tobytes()


def _pnm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FrameFormatError("truncated PNM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def decode_pnm(data: bytes, t: int = 0) -> Frame:
    tokens, offset = _pnm_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FrameFormatError(f"unsupported PNM type {magic!r}")
    try:
        width, height, maxval = (int(tok) for tok in tokens[1:])
    except ValueError:
        raise FrameFormatError("malformed PNM header") from None
    if maxval != 255:
        raise FrameFormatError(f"unsupported maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    raster = data[offset:offset + need]
    if len(raster) != need:
        raise FrameFormatError(f"PNM raster truncated: expected {need} bytes, {len(raster)} available")
    a = np.frombuffer(raster, dtype=np.uint8).astype(np.float64)
    if channels == 1:
        return GrayFrame(a.reshape(height, width), t)
    return RgbFrame(a.reshape(height, width, 3), t)


def write_frame(frame: Frame, path: Union[str, os.PathLike]) -> None:
    Path(path).write_bytes(encode_pnm(frame))


def read_frame(path: Union[str, os.PathLike], t: int = 0) -> Frame:
    return decode_pnm(Path(path).read_bytes(), t)


# Manifest --------------------------------------------------------------

def format_manifest(entries: Sequence[tuple[str, int]], nominal_fps: Fraction) -> str:
    fps = Fraction(nominal_fps)
    lines = [f"nominal_fps={fps.numerator}/{fps.denominator}"]
    lines.extend(f"{name},{t}" for name, t in entries)
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> tuple[Fraction, list[tuple[str, int]]]:
    fps = None
    entries: list[tuple[str, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("nominal_fps="):
            num, _, den = line.split("=", 1)[1].partition("/")
            try:
                fps = Fraction(int(num), int(den or 1))
            except (ValueError, ZeroDivisionError):
                raise FrameFormatError(f"bad nominal_fps at line {lineno}") from None
            continue
        name, sep, t = line.rpartition(",")
        if not sep:
            raise FrameFormatError(f"malformed manifest line {lineno}: {line!r}")
        try:
            t_us = int(t)
        except ValueError:
            raise FrameFormatError(f"bad timestamp at manifest line {lineno}") from None
        if entries and t_us <= entries[-1][1]:
            raise FrameFormatError(f"manifest timestamps not increasing at line {lineno}")
        entries.append((name, t_us))
    if fps is None:
        raise FrameFormatError("manifest lacks nominal_fps header")
    return fps, entries


def write_sequence(seq: FrameSequence, directory: Union[str, os.PathLike],
                   prefix: str = "frame", manifest: str = "manifest.txt") -> Path:
    """Write frames as PGM/PPM plus a timestamp manifest; return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, frame in enumerate(seq):
        ext = "pgm" if isinstance(frame, GrayFrame) else "ppm"
        name = f"{prefix}_{i:05d}.{ext}"
        write_frame(frame, directory / name)
        entries.append((name, frame.t))
    path = directory / manifest
    path.write_text(format_manifest(entries, seq.nominal_fps))
    return path


def read_sequence(manifest_path: Union[str, os.PathLike]) -> FrameSequence:
    manifest_path = Path(manifest_path)
    fps, entries = parse_manifest(manifest_path.read_text())
    frames = []
    for name, t in entries:
        frame = read_frame(manifest_path.parent / name, t)
        if frames and frame.pixels.shape != frames[0].pixels.shape:
            raise FrameFormatError(
                f"{name}: dimensions {frame.width}x{frame.height} differ from "
                f"{frames[0].width}x{frames[0].height} in the same manifest"
            )
        frames.append(frame)
    return FrameSequence(tuple(frames), fps)
