"""Command-line driver: ``eventvfi <subcommand> ...``.

Every subcommand exits 0 on success and 1 on a module error; diagnostics
go to stderr, data to files or stdout.
"""
from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import accum, align, interp, synth
from .event_core import (EventStream, FrameSequence, parse_manifest, read_events, read_frame,
                         read_sequence, to_grayscale, write_events, write_sequence)


def _point_pair(text: str):
    try:
        xe, ye, xi, yi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'xe,ye,xi,yi', got {text!r}") from None
    return ((xe, ye), (xi, yi))


def _fps(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad frame rate {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("frame rate must be positive")
    return value


def _load_registration(path) -> align.SpatialRegistration:
    if path is None:
        return align.SpatialRegistration()
    return align.parse_registration(Path(path).read_text())


# Subcommands -----------------------------------------------------------

def cmd_convert(args) -> int:
    stream = read_events(args.input)
    write_events(stream, args.output, fmt=args.to)
    print(f"events={len(stream)}")
    return 0


def cmd_synth(args) -> int:
    if args.scene:
        scene, view = synth.parse_scene(Path(args.scene).read_text())
    else:
        scene, view = synth.demo_scene(), None
    if args.duration is not None:
        scene = synth.SceneSpec(scene.width, scene.height, scene.background, scene.objects, args.duration)
    model = synth.EventCameraModel(args.contrast, args.epsilon, args.sim_step, args.threshold_sigma,
                                   args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = synth.generate_rgb_sequence(scene, args.fps, args.supersample, rgb=not args.gray)
    write_sequence(frames, out / "frames")
    events = synth.generate_events(scene, model, view, args.supersample)
    if args.shift:
        events = synth.shift_events(events, args.shift)
    write_events(events, out / "events.evb1")
    view = view or synth.SensorView.of_scene(scene)
    reg = align.SpatialRegistration(view.dx, view.dy, view.r)
    (out / "registration.txt").write_text(align.format_registration(reg))
    (out / "ground_truth.txt").write_text(
        f"shift_us={args.shift}\n{align.format_registration(reg)}"
        f"contrast={args.contrast!r} epsilon={args.epsilon!r} fps={args.fps}\n")
    print(f"frames={len(frames)} events={len(events)} shift_us={args.shift}")
    return 0


def cmd_register(args) -> int:
    reg = align.register_features(args.pair1, args.pair2)
    text = align.format_registration(reg)
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_project(args) -> int:
    stream = read_events(args.events)
    reg = _load_registration(args.registration)
    proj = align.build_projection(reg, args.offset, args.width, args.height)
    out, dropped = align.project_stream(proj, stream)
    write_events(out, args.output)
    print(f"events={len(out)} dropped={dropped}")
    return 0


def _align_config(args) -> align.AlignConfig:
    return align.AlignConfig(args.candidates, args.step, args.window, args.interleave,
                             args.ssim_frames, args.start_frame, args.unsigned, args.compare_at)


def cmd_align(args) -> int:
    frames = read_sequence(args.manifest)
    events = read_events(args.events)
    reg = _load_registration(args.registration)
    cfg = _align_config(args)
    if args.coarse is None:
        coarse = align.coarse_offset(frames, events, args.scan_step or cfg.window, reg,
                                     cfg.interleave, cfg.unsigned)
    else:
        coarse = args.coarse
    result = align.temporal_search(frames, events, coarse, reg, cfg)
    report = align.format_report(result, reg)
    if args.report:
        Path(args.report).write_text(report)
    if args.curve:
        Path(args.curve).write_text(align.format_score_curve(result))
    sys.stdout.write(report)
    return 0


def _interp_options(args) -> dict:
    return dict(contrast=args.contrast, epsilon=args.epsilon, alpha=args.alpha, block=args.block,
                radius=args.radius, energy_floor=args.energy_floor)


def _registered_events(args, width, height) -> EventStream:
    events = read_events(args.events)
    if args.registration or args.offset:
        proj = align.build_projection(_load_registration(args.registration), args.offset, width, height)
        events, _ = align.project_stream(proj, events)
    return events


def _frame_time(path, explicit, manifest):
    if explicit is not None:
        return explicit
    if manifest is None:
        raise ValueError(f"no timestamp for {path}: pass --left-t/--right-t or --manifest")
    _, entries = parse_manifest(Path(manifest).read_text())
    times = dict(entries)
    name = os.path.basename(path)
    if name not in times:
        raise ValueError(f"{name} is not listed in {manifest}")
    return times[name]


def cmd_interp(args) -> int:
    if args.sequence:
        return _interp_grid(args)
    if not (args.left and args.right and args.events and args.out):
        raise ValueError("interp needs --left, --right, --events and --out (or --sequence)")
    left = read_frame(args.left, _frame_time(args.left, args.left_t, args.manifest))
    right = read_frame(args.right, _frame_time(args.right, args.right_t, args.manifest))
    events = _registered_events(args, left.width, left.height)
    seq = FrameSequence((left, right), Fraction(10 ** 6, right.t - left.t))
    result = interp.upscale_sequence(seq, events, args.factor, args.method, **_interp_options(args))
    write_sequence(result, args.out)
    print(f"frames={len(result)} method={args.method} factor={args.factor}")
    return 0


def _interp_grid(args) -> int:
    frames = read_sequence(args.sequence)
    if not args.events:
        raise ValueError("--sequence needs --events")
    events = _registered_events(args, frames[0].width, frames[0].height)
    methods = args.methods or [args.method]
    lines = ["input_fps,factor,method,psnr,ssim,baseline_psnr,baseline_ssim"]
    for factor in args.factors:
        for method in methods:
            r = interp.evaluate_subsampling(frames, events, factor, method, **_interp_options(args))
            lines.append(f"{float(r.input_fps):g},{factor},{method},{r.psnr:.4f},{r.ssim:.6f},"
                         f"{r.baseline_psnr:.4f},{r.baseline_ssim:.6f}")
    text = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_metrics(args) -> int:
    a = to_grayscale(read_frame(args.a))
    b = to_grayscale(read_frame(args.b))
    s = accum.ssim(a, b)
    p = accum.psnr(a, b)
    print(f"ssim={s:.6g} psnr={p:.6g}")
    return 0


def cmd_voxel(args) -> int:
    events = read_events(args.events)
    grid = accum.to_voxel_grid(events, args.t0, args.t1, args.bins)
    Path(args.output).write_bytes(accum.write_voxel_grid(grid))
    print(f"bins={grid.bins} sum={grid.values.sum():.6g}")
    return 0


def render_score_svg(rows, width: int = 640, height: int = 360) -> tuple[str, tuple[int, int, float]]:
    """SVG with one polyline per subsequence and a marker on the global maximum."""
    if not rows:
        raise ValueError("score curve is empty")
    best = max(rows, key=lambda r: r[2])  # first of equal maxima, in file order
    ks = [r[1] for r in rows]
    ss = [r[2] for r in rows]
    k_lo, k_hi = min(ks), max(ks)
    s_lo, s_hi = min(ss), max(ss)
    pad = 40

    def px(k, s):
        fx = (k - k_lo) / (k_hi - k_lo) if k_hi > k_lo else 0.5
        fy = (s - s_lo) / (s_hi - s_lo) if s_hi > s_lo else 0.5
        return pad + fx * (width - 2 * pad), height - pad - fy * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="12">k (time shift index)</text>',
             f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
             f'text-anchor="middle">SSIM</text>']
    for m in sorted({r[0] for r in rows}):
        pts = " ".join("{:.2f},{:.2f}".format(*px(k, s)) for mm, k, s in rows if mm == m)
        color = colors[m % len(colors)]
        parts.append(f'<polyline data-subseq="{m}" fill="none" stroke="{color}" points="{pts}"/>')
    bx, by = px(best[1], best[2])
    parts.append(f'<circle id="argmax" data-subseq="{best[0]}" data-k="{best[1]}" data-ssim="{best[2]!r}" '
                 f'cx="{bx:.2f}" cy="{by:.2f}" r="4" fill="none" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n", best


def cmd_plot_ssim(args) -> int:
    rows = align.parse_score_curve(Path(args.curve).read_text())
    svg, best = render_score_svg(rows)
    Path(args.output).write_text(svg)
    print(f"subseq={best[0]} k={best[1]} ssim={best[2]:.6f}")
    return 0


# Parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eventvfi", description="Event/frame alignment and interpolation.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="convert events between EVT-CSV and EVB1")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--to", choices=("csv", "evb1"), help="output format (default: from the suffix)")
    c.set_defaults(func=cmd_convert)

    s = sub.add_parser("synth", help="render a synthetic scene and its event stream")
    s.add_argument("--scene", help="scene file (default: built-in demo scene)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--fps", type=_fps, default=Fraction(120), help="frame rate (default 120)")
    s.add_argument("--shift", type=int, default=0, help="clock offset added to event times, µs")
    s.add_argument("--duration", type=int, help="override the scene duration, µs")
    s.add_argument("--contrast", type=float, default=0.15, help="contrast threshold C (default 0.15)")
    s.add_argument("--epsilon", type=float, default=1.0, help="log offset (default 1.0)")
    s.add_argument("--sim-step", type=int, default=100, help="simulation step, µs (default 100)")
    s.add_argument("--threshold-sigma", type=float, default=0.0, help="relative per-pixel threshold jitter")
    s.add_argument("--seed", type=int, default=0, help="seed for threshold jitter")
    s.add_argument("--supersample", type=int, default=4, help="samples per pixel axis (default 4)")
    s.add_argument("--gray", action="store_true", help="write PGM instead of PPM frames")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("register", help="shift and scale from two feature correspondences")
    r.add_argument("--pair1", type=_point_pair, required=True, help="xe,ye,xi,yi (event then frame point)")
    r.add_argument("--pair2", type=_point_pair, required=True, help="xe,ye,xi,yi")
    r.add_argument("-o", "--output", help="also write the registration file here")
    r.set_defaults(func=cmd_register)

    pr = sub.add_parser("project", help="map an event stream into frame-camera pixels and time")
    pr.add_argument("--events", required=True)
    pr.add_argument("--registration", help="registration file (default: identity)")
    pr.add_argument("--offset", type=int, default=0, help="temporal offset subtracted from t, µs")
    pr.add_argument("--width", type=int, required=True, help="frame-camera width")
    pr.add_argument("--height", type=int, required=True, help="frame-camera height")
    pr.add_argument("--output", required=True)
    pr.set_defaults(func=cmd_project)

    a = sub.add_parser("align", help="find the event-to-frame clock offset")
    a.add_argument("--manifest", required=True, help="frame manifest")
    a.add_argument("--events", required=True)
    a.add_argument("--registration", help="registration file (default: identity)")
    a.add_argument("--coarse", type=int, help="manual coarse offset, µs (skips the coarse scan)")
    a.add_argument("--scan-step", type=int, help="coarse scan step, µs (default: --window)")
    a.add_argument("--candidates", type=int, default=250, help="candidates per subsequence (default 250)")
    a.add_argument("--step", type=int, default=100, help="candidate spacing, µs (default 100)")
    a.add_argument("--window", type=int, default=25_000, help="accumulation period, µs (default 25000)")
    a.add_argument("--interleave", type=int, default=3, help="interleaved subsequences (default 3)")
    a.add_argument("--ssim-frames", type=int, default=10, help="difference images per score (default 10)")
    a.add_argument("--start-frame", type=int, default=0, help="first subsequence frame used (default 0)")
    a.add_argument("--unsigned", action="store_true", help="count events regardless of polarity")
    a.add_argument("--compare-at", choices=("frame", "event"), default="frame",
                   help="geometry in which SSIM is computed (default frame)")
    a.add_argument("--report", help="write the text report here")
    a.add_argument("--curve", help="write the score curve CSV here")
    a.set_defaults(func=cmd_align)

    i = sub.add_parser("interp", help="interpolate frames between two keyframes, or run the FPS grid")
    i.add_argument("--left")
    i.add_argument("--right")
    i.add_argument("--left-t", type=int, help="left frame time, µs")
    i.add_argument("--right-t", type=int, help="right frame time, µs")
    i.add_argument("--manifest", help="manifest to look up --left/--right times")
    i.add_argument("--events")
    i.add_argument("--registration", help="project events through this registration first")
    i.add_argument("--offset", type=int, default=0, help="temporal offset for projection, µs")
    i.add_argument("--factor", type=int, default=3, help="upscale factor N (default 3)")
    i.add_argument("--method", choices=interp.METHODS, default="blend")
    i.add_argument("--methods", nargs="+", choices=interp.METHODS, help="grid mode: methods to compare")
    i.add_argument("--contrast", type=float, default=0.15, help="contrast c (default 0.15)")
    i.add_argument("--epsilon", type=float, default=1.0)
    i.add_argument("--alpha", type=float, default=0.5, help="warp share in blending (default 0.5)")
    i.add_argument("--block", type=int, default=16, help="block size, px (default 16)")
    i.add_argument("--radius", type=int, default=8, help="search radius, px (default 8)")
    i.add_argument("--energy-floor", type=float, default=4.0, help="events per block for motion (default 4)")
    i.add_argument("--out", help="output directory for frames and manifest")
    i.add_argument("--sequence", help="grid mode: manifest of the full-rate sequence")
    i.add_argument("--factors", type=int, nargs="+", default=[3, 6, 12],
                   help="grid mode: subsampling factors (default 3 6 12, i.e. 120 -> 40/20/10 FPS)")
    i.add_argument("--report", help="grid mode: write the CSV report here")
    i.set_defaults(func=cmd_interp)

    m = sub.add_parser("metrics", help="SSIM and PSNR between two frames")
    m.add_argument("a")
    m.add_argument("b")
    m.set_defaults(func=cmd_metrics)

    v = sub.add_parser("voxel", help="write a voxel grid of an event slice")
    v.add_argument("--events", required=True)
    v.add_argument("--t0", type=int, required=True)
    v.add_argument("--t1", type=int, required=True)
    v.add_argument("--bins", type=int, default=5, help="temporal bins B (default 5)")
    v.add_argument("--output", required=True)
    v.set_defaults(func=cmd_voxel)

    ps = sub.add_parser("plot-ssim", help="plot an align score curve as SVG")
    ps.add_argument("curve", help="score curve CSV from align --curve")
    ps.add_argument("output", help="SVG path")
    ps.set_defaults(func=cmd_plot_ssim)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
