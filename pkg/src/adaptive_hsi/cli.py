"""Command-line entry point: ``python -m adaptive_hsi <command> ...``.

Every command reads and writes files only; with fixed seeds the outputs
are bit-identical across runs and across ``--threads`` settings.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .core import render_guide
from .maskgen import MaskGenParams, generate_mask, label_coverage
from .metrics import evaluate, homogeneity_analysis
from .pipeline import ConfigError, PipelineConfig, StageError, bench, run_pipeline
from .recon import METHODS, GuidedParams, reconstruct_frame
from .sensor import DispersionModel, NoiseParams, capture, load_sensor, nyquist_scan, remove_offset, save_sensor
from .superpixel import SlicParams, slic
from .synth import KINDS, synth_scene


def _q(value: str) -> int | None:
    if value == "auto":
        return None
    q = int(value)
    if q < 1:
        raise argparse.ArgumentTypeError("Q must be a positive integer or 'auto'")
    return q


def _disp(path: str | None, bands: int) -> DispersionModel:
    return DispersionModel.load(path) if path else DispersionModel.linear(bands)


def cmd_synth(a) -> None:
    scene = synth_scene(a.kind, a.width, a.height, a.bands, a.seed, patch=a.patch, period=a.period)
    io.save_cube(scene.cube, a.out)
    if a.guide:
        g, _ = render_guide(scene.cube)
        io.save_guide(g, a.guide)
    if a.gray:
        _, gr = render_guide(scene.cube)
        io.save_gray(gr, a.gray)


def cmd_render(a) -> None:
    g, gr = render_guide(io.load_cube(a.cube))
    io.save_guide(g, a.guide)
    io.save_gray(gr, a.gray)


def cmd_segment(a) -> None:
    guide = io.load_guide(a.guide)
    q = a.Q if a.Q is not None else max(1, guide.height * guide.width // 400)
    spmap = slic(guide, SlicParams(q, a.C, a.iterations))
    io.save_spmap(spmap, a.out)
    if a.preview:
        io.save_label_preview(spmap, a.preview)
    print(f"{spmap.q} superpixels")


def cmd_mask(a) -> None:
    guide = io.load_guide(a.guide)
    params = MaskGenParams(a.N, a.V, a.Q, a.C, a.max_shift, a.sensor_width)
    tim: dict = {}
    mask, spmap = generate_mask(guide, params, tim)
    io.save_mask(mask, a.out)
    if a.spmap:
        io.save_spmap(spmap, a.spmap)
    cov = label_coverage(mask, spmap)
    print(json.dumps({"openings": len(mask), "superpixels": spmap.q,
                      "uncovered_labels": int(np.sum(cov == 0)),
                      **{k: round(v, 3) for k, v in tim.items()}}))


def cmd_simulate(a) -> None:
    cube = io.load_cube(a.cube)
    mask = io.load_mask(a.mask)
    disp = _disp(a.disp, cube.bands)
    noise = None if a.photons is None else NoiseParams(a.photons, a.read, a.seed)
    img = capture(cube, mask, disp, a.eps, noise, sensor_width=a.sensor_width)
    save_sensor(img, a.out)


def cmd_reconstruct(a) -> None:
    guide = io.load_guide(a.guide)
    gray = io.load_gray(a.gray)
    mask = io.load_mask(a.mask)
    spmap = io.load_spmap(a.spmap)
    img = load_sensor(a.sensor)
    disp = DispersionModel.load(a.disp)
    weights = None
    if a.weights:
        from .network import FilterNetWeights
        weights = FilterNetWeights.load(a.weights)
    guided = GuidedParams(*a.kernel, a.epsilon) if a.kernel else None
    wl = None
    if a.wavelengths:
        wl = io.load_cube(a.wavelengths).wavelengths
    report: dict = {}
    cube = reconstruct_frame(guide, gray, img, mask, spmap, disp, a.method, guard=a.V, guided=guided,
                             weights=weights, guide_mode=a.guide_mode, remove_background=a.remove_offset,
                             wavelengths=wl, threads=a.threads, report=report)
    io.save_cube(cube, a.out)
    print(json.dumps({k: round(v, 4) if isinstance(v, float) else v for k, v in report.items()}))


def cmd_offset(a) -> None:
    img = load_sensor(a.sensor)
    clean, offset = remove_offset(img, io.load_mask(a.mask), DispersionModel.load(a.disp), a.margin)
    save_sensor(clean, a.out)
    if a.offset:
        save_sensor(offset, a.offset)


def cmd_scan(a) -> None:
    cube = io.load_cube(a.cube)
    disp = _disp(a.disp, cube.bands)
    noise = None if a.photons is None else NoiseParams(a.photons, a.read, a.seed)
    io.save_cube(nyquist_scan(cube, disp, a.h_spacing, a.v_spacing, noise, a.eps), a.out)


def cmd_evaluate(a) -> None:
    ref, test = io.load_cube(a.ref), io.load_cube(a.test)
    extra = {}
    if a.spmap:
        hom = homogeneity_analysis(ref, io.load_spmap(a.spmap))
        extra["homogeneity"] = {"mean_deg": hom.mean, "median_deg": hom.median,
                                "histogram": hom.histogram, "bin_edges": hom.bin_edges,
                                "reference": hom.reference}
    rep = evaluate(ref, test, extra=extra)
    rep.save(a.out)
    print(f"psnr {rep.psnr_mean:.3f} dB  ssim {rep.ssim_mean:.4f}  sam {rep.sam_mean:.3f} deg")


def cmd_video(a) -> None:
    from .video import VideoParams, run_video
    frames = sorted(p for p in Path(a.frames).iterdir() if p.suffix == ".hsi")
    if len(frames) < 2:
        raise ValueError(f"{a.frames} holds {len(frames)} .hsi frames; at least 2 are needed")
    cubes = [io.load_cube(p) for p in frames]
    disp = _disp(a.disp, cubes[0].bands)
    fn, fv = disp.footprint
    sw = cubes[0].width + fn - 1 if a.wide_sensor else None
    mp = MaskGenParams(fn, max(a.V, fv), a.Q, a.C, None, sw)
    noise = None if a.photons is None else NoiseParams(a.photons, a.read, a.seed)
    weights = None
    if a.weights:
        from .network import FilterNetWeights
        weights = FilterNetWeights.load(a.weights)
    params = VideoParams(disp, mp, a.method, noise, a.eps, weights=weights, threads=a.threads)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    telemetry = []
    for r, src in zip(run_video(cubes, params), frames):
        stem = f"{r.index:04d}"
        io.save_cube(r.cube, out / f"{stem}_recon.hsi")
        io.save_mask(r.mask, out / f"{stem}_mask.png")
        io.save_spmap(r.spmap, out / f"{stem}_labels.bin")
        telemetry.append({"frame": r.index, "source": src.name, **r.telemetry})
        print(f"frame {r.index}: {r.telemetry['psnr']:.2f} dB, {r.telemetry['openings']} openings")
    (out / "telemetry.json").write_text(json.dumps(telemetry, indent=1) + "\n")


def _config(a) -> PipelineConfig:
    cfg = PipelineConfig.load(a.config) if a.config else PipelineConfig()
    cfg = cfg.with_overrides(a.set or [])
    return cfg.with_overrides([f"threads={a.threads}"])


def cmd_run(a) -> None:
    res = run_pipeline(_config(a))
    r = res.report
    print(f"psnr {r.psnr_mean:.3f} dB  ssim {r.ssim_mean:.4f}  sam {r.sam_mean:.3f} deg")
    print(f"artifacts in {res.artifacts['report.json'].parent}")


def cmd_bench(a) -> None:
    res = bench(_config(a), a.repeats)
    print(res.table())
    if a.out:
        Path(a.out).write_text(json.dumps(res.to_json(), indent=1) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaptive_hsi", description="Superpixel-adaptive spectral imaging tools")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for per-band reconstruction (default 1)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic cube")
    s.add_argument("--kind", choices=KINDS, default="natural")
    s.add_argument("--width", type=int, default=128)
    s.add_argument("--height", type=int, default=128)
    s.add_argument("--bands", type=int, default=31)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--patch", type=int, default=16)
    s.add_argument("--period", type=int, default=1)
    s.add_argument("--guide", help="also write the rendered RGB guide")
    s.add_argument("--gray", help="also write the rendered gray guide")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("render", help="render RGB and gray guides from a cube")
    s.add_argument("--cube", required=True)
    s.add_argument("--guide", required=True)
    s.add_argument("--gray", required=True)
    s.set_defaults(fn=cmd_render)

    s = sub.add_parser("segment", help="SLIC superpixels of a guide image")
    s.add_argument("--guide", required=True)
    s.add_argument("--Q", type=_q, default=None, help="superpixel count or 'auto' (HW/400)")
    s.add_argument("--C", type=float, default=10.0)
    s.add_argument("--iterations", type=int, default=10)
    s.add_argument("--preview")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_segment)

    s = sub.add_parser("mask", help="scene-adaptive sampling mask")
    s.add_argument("--guide", required=True)
    s.add_argument("--N", type=int, required=True)
    s.add_argument("--V", type=int, default=1)
    s.add_argument("--Q", type=_q, default=None, help="superpixel count or 'auto' (HW/(4N))")
    s.add_argument("--C", type=float, default=10.0)
    s.add_argument("--max-shift", type=int, default=None)
    s.add_argument("--sensor-width", type=int, default=None)
    s.add_argument("--spmap", help="write the re-segmented superpixel map")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_mask)

    s = sub.add_parser("simulate", help="simulate one sensor frame")
    s.add_argument("--cube", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--disp", help="dispersion JSON (default: one pixel per band)")
    s.add_argument("--eps", type=float, default=0.0)
    s.add_argument("--photons", type=float, default=None, help="peak electrons; omit for noiseless")
    s.add_argument("--read", type=float, default=5.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sensor-width", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("reconstruct", help="recover a cube from one sensor frame")
    s.add_argument("--method", choices=METHODS, default="rank1")
    s.add_argument("--weights")
    s.add_argument("--guide", required=True)
    s.add_argument("--gray", required=True)
    s.add_argument("--sensor", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--spmap", required=True)
    s.add_argument("--disp", required=True)
    s.add_argument("--V", type=int, default=1)
    s.add_argument("--guide-mode", choices=("rgb", "gray"), default="rgb")
    s.add_argument("--kernel", type=int, nargs=2, metavar=("H", "W"))
    s.add_argument("--epsilon", type=float, default=1e-4)
    s.add_argument("--remove-offset", action="store_true")
    s.add_argument("--wavelengths", help="cube whose wavelengths label the output")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_reconstruct)

    s = sub.add_parser("offset", help="estimate and subtract the closed-pixel background")
    s.add_argument("--sensor", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--disp", required=True)
    s.add_argument("--margin", type=int, default=0)
    s.add_argument("--offset")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_offset)

    s = sub.add_parser("scan", help="full-resolution pinhole-array scan")
    s.add_argument("--cube", required=True)
    s.add_argument("--disp")
    s.add_argument("--h-spacing", type=int, default=100)
    s.add_argument("--v-spacing", type=int, default=5)
    s.add_argument("--eps", type=float, default=0.0)
    s.add_argument("--photons", type=float, default=None)
    s.add_argument("--read", type=float, default=5.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_scan)

    s = sub.add_parser("evaluate", help="PSNR, SSIM, SAM and superpixel homogeneity")
    s.add_argument("--ref", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--spmap")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("video", help="lock-step reconstruction of a frame directory")
    s.add_argument("--frames", required=True, help="directory of .hsi cubes, processed in name order")
    s.add_argument("--method", choices=METHODS, default="rank1")
    s.add_argument("--weights")
    s.add_argument("--disp")
    s.add_argument("--V", type=int, default=1)
    s.add_argument("--Q", type=_q, default=None)
    s.add_argument("--C", type=float, default=10.0)
    s.add_argument("--eps", type=float, default=0.0)
    s.add_argument("--photons", type=float, default=None)
    s.add_argument("--read", type=float, default=5.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-wide-sensor", dest="wide_sensor", action="store_false")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_video)

    for name, fn, helptext in (("run", cmd_run, "end-to-end experiment from a config"),
                               ("bench", cmd_bench, "per-stage timing table")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config")
        s.add_argument("--set", action="append", metavar="KEY=VALUE")
        if name == "bench":
            s.add_argument("--repeats", type=int, default=5)
            s.add_argument("--out", help="write the JSON summary here")
        s.set_defaults(fn=fn)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        args.fn(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
