"""Accumulation frames, voxel grids and image metrics (SSIM, PSNR)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .event_core import EventStream, GrayFrame, slice_events

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_RANGE = 255.0
SSIM_C1 = (0.01 * SSIM_RANGE) ** 2
SSIM_C2 = (0.03 * SSIM_RANGE) ** 2


@dataclass(frozen=True, eq=False)
class AccumulationFrame:
    values: np.ndarray  # (height, width) signed polarity sums
    t0: int
    window: int

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __add__(self, other: "AccumulationFrame") -> "AccumulationFrame":
        if self.values.shape != other.values.shape:
            raise ValueError("geometry mismatch")
        t0 = min(self.t0, other.t0)
        end = max(self.t0 + self.window, other.t0 + other.window)
        return AccumulationFrame(self.values + other.values, t0, end - t0)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    values: np.ndarray  # (bins, height, width)
    t0: int
    t1: int

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def height(self) -> int:
        return self.values.shape[1]


def _pixel_sum(stream: EventStream, weights=None) -> np.ndarray:
    idx = stream.y.astype(np.int64) * stream.width + stream.x
    out = np.bincount(idx, weights=weights, minlength=stream.width * stream.height)
    return out.reshape(stream.height, stream.width)


def accumulate(stream: EventStream, t0: int, window: int, unsigned: bool = False) -> AccumulationFrame:
    """Per-pixel polarity sum over ``[t0, t0 + window)``.

    With ``unsigned`` every event counts +1 regardless of polarity.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    part = slice_events(stream, t0, t0 + window)
    if unsigned:
        values = _pixel_sum(part)
    else:
        values = _pixel_sum(part, part.p.astype(np.int64))
    return AccumulationFrame(np.rint(values).astype(np.int64), t0, window)


def accumulate_sequence(stream: EventStream, t_start: int, period: int, window: int, n: int,
                        unsigned: bool = False) -> list[AccumulationFrame]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return [accumulate(stream, t_start + k * period, window, unsigned) for k in range(n)]


def to_voxel_grid(stream: EventStream, t0: int, t1: int, bins: int = 5) -> VoxelGrid:
    """Bilinear temporal splatting of events in ``[t0, t1)`` into ``bins`` bins.

    Events outside the window are ignored.
    """
    if t1 <= t0:
        raise ValueError("voxel grid needs t1 > t0")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    part = slice_events(stream, t0, t1)
    grid = np.zeros(bins * stream.height * stream.width)
    if len(part):
        u = (part.t - t0) * (bins - 1) / (t1 - t0)
        lower = np.floor(u).astype(np.int64)
        frac = u - lower
        pix = part.y.astype(np.int64) * stream.width + part.x
        p = part.p.astype(np.float64)
        plane = stream.height * stream.width
        np.add.at(grid, lower * plane + pix, p * (1.0 - frac))
        upper = frac > 0
        np.add.at(grid, (lower[upper] + 1) * plane + pix[upper], p[upper] * frac[upper])
    return VoxelGrid(grid.reshape(bins, stream.height, stream.width), t0, t1)


def write_voxel_grid(grid: VoxelGrid) -> bytes:
    """Text header line followed by ``bins`` little-endian float64 planes."""
    header = (f"VOXEL1 width={grid.width} height={grid.height} bins={grid.bins} "
              f"t0={grid.t0} t1={grid.t1}\n")
    return header.encode("ascii") + np.ascontiguousarray(grid.values, dtype="<f8").tobytes()


def read_voxel_grid(data: bytes) -> VoxelGrid:
    head, sep, body = data.partition(b"\n")
    fields = head.decode("ascii", "replace").split()
    if not sep or not fields or fields[0] != "VOXEL1":
        raise ValueError("not a VOXEL1 payload")
    kv = dict(f.split("=", 1) for f in fields[1:])
    w, h, b = int(kv["width"]), int(kv["height"]), int(kv["bins"])
    need = w * h * b * 8
    if len(body) != need:
        raise ValueError(f"voxel payload has {len(body)} bytes, expected {need}")
    values = np.frombuffer(body, dtype="<f8").reshape(b, h, w).astype(np.float64)
    return VoxelGrid(values, int(kv["t0"]), int(kv["t1"]))


def normalize_accum(frame: AccumulationFrame) -> GrayFrame:
    """``255 * |A| / max|A|``; an all-zero frame stays zero."""
    mag = np.abs(frame.values).astype(np.float64)
    peak = mag.max() if mag.size else 0.0
    if peak > 0:
        mag = mag * (255.0 / peak)
    return GrayFrame(mag, frame.t0)


def _check_geometry(a: GrayFrame, b: GrayFrame) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"geometry mismatch: {a.pixels.shape} vs {b.pixels.shape}")


def frame_abs_diff(a: GrayFrame, b: GrayFrame) -> GrayFrame:
    _check_geometry(a, b)
    return GrayFrame(np.abs(a.pixels - b.pixels), b.t)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


_TAPS = gaussian_window()


def _filter_valid(img: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, SSIM_WINDOW, axis=1) @ _TAPS
    return sliding_window_view(rows, SSIM_WINDOW, axis=0) @ _TAPS


class SsimReference:
    """Precomputed local statistics of one image, for scoring many candidates against it."""

    def __init__(self, pixels: np.ndarray):
        img = np.asarray(pixels, dtype=np.float64)
        if img.ndim != 2 or min(img.shape) < SSIM_WINDOW:
            raise ValueError(f"SSIM needs 2-D frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {img.shape}")
        self.shape = img.shape
        self.img = img
        self.mu = _filter_valid(img)
        self.mu_sq = self.mu * self.mu
        self.var = _filter_valid(img * img) - self.mu_sq

    def score(self, pixels: np.ndarray) -> float:
        other = np.asarray(pixels, dtype=np.float64)
        if other.shape != self.shape:
            raise ValueError(f"geometry mismatch: {self.shape} vs {other.shape}")
        mu = _filter_valid(other)
        mu_sq = mu * mu
        var = _filter_valid(other * other) - mu_sq
        mu_ab = self.mu * mu
        cov = _filter_valid(self.img * other) - mu_ab
        num = (2 * mu_ab + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (self.mu_sq + mu_sq + SSIM_C1) * (self.var + var + SSIM_C2)
        return float(np.mean(num / den))


def ssim(a: GrayFrame, b: GrayFrame) -> float:
    """Mean SSIM over every 11x11 Gaussian window lying fully inside the frame."""
    _check_geometry(a, b)
    return SsimReference(a.pixels).score(b.pixels)


def psnr(a: GrayFrame, b: GrayFrame) -> float:
    """PSNR in dB; identical frames give ``inf``."""
    _check_geometry(a, b)
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(SSIM_RANGE ** 2 / mse)
