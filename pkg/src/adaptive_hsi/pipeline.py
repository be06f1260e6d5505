"""End-to-end experiment driver: configuration, a single-frame run and timing.

A configuration is one flat JSON object; every key maps to a field of
:class:`PipelineConfig`. Paths in it are relative to ``workspace``. All
randomness derives from ``seed`` through per-stage namespaces, so changing
one stage (say, the noise level) never reshuffles another (the scene).
"""
from __future__ import annotations

import dataclasses
import json
import time
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import HsiCube, SpectralResponse, render_guide
from .io import save_cube, save_gray, save_guide, save_mask, save_spmap
from .maskgen import MaskGenParams, generate_mask
from .metrics import EvalReport, evaluate
from .recon import METHODS, GuidedParams, reconstruct_frame
from .sensor import DispersionModel, NoiseParams, capture, save_sensor
from .synth import KINDS, synth_scene

STAGES = ("segmentation", "mask", "capture-sim", "reconstruction")


class ConfigError(ValueError):
    """The configuration is malformed or internally inconsistent."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def stage_seed(root: int, stage: str) -> int:
    """Seed for one named stage, derived from the root seed."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(stage.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class PipelineConfig:
    workspace: str = "."
    out: str = "run"
    seed: int = 0
    # scene: a cube file, or a synthetic family
    cube: str | None = None
    scene: str = "natural"
    width: int = 128
    height: int = 128
    bands: int | None = None
    # optics
    dispersion: str | None = None
    n: int | None = None
    blur_quadratic: list | None = None
    response: str | None = None
    # mask generation
    v: int = 1
    q: int | None = None
    compactness: float = 10.0
    max_shift: int | None = None
    wide_sensor: bool = True
    # sensor
    contrast_eps: float = 0.0
    photon_level: float | None = 10000.0
    read_std: float = 5.0
    # reconstruction
    method: str = "rank1"
    guide_mode: str = "rgb"
    guided_kernel: list | None = None
    guided_eps: float = 1e-4
    weights: str | None = None
    threads: int = 1

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(obj) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        cfg = cls.from_dict(obj)
        if "workspace" not in obj:
            cfg = dataclasses.replace(cfg, workspace=str(Path(path).resolve().parent))
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, pairs: list[str]) -> "PipelineConfig":
        """Apply ``key=value`` strings; values parse as JSON and fall back to plain strings."""
        obj = self.to_dict()
        for pair in pairs:
            key, sep, raw = pair.partition("=")
            if not sep:
                raise ConfigError(f"override {pair!r} is not key=value")
            if key not in obj:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                obj[key] = json.loads(raw)
            except json.JSONDecodeError:
                obj[key] = raw
        return self.from_dict(obj)

    def path(self, rel: str) -> Path:
        return Path(self.workspace) / rel


@dataclass(frozen=True, eq=False)
class Resolved:
    """A validated configuration with its files loaded."""

    config: PipelineConfig
    cube: HsiCube
    disp: DispersionModel
    response: SpectralResponse | None
    maskgen: MaskGenParams
    noise: NoiseParams | None
    guided: GuidedParams
    weights: object


def _scene(cfg: PipelineConfig) -> HsiCube:
    if cfg.cube is not None:
        from .io import load_cube
        return load_cube(cfg.path(cfg.cube))
    if cfg.scene not in KINDS:
        raise ConfigError(f"scene={cfg.scene!r} is not one of {KINDS}")
    return synth_scene(cfg.scene, cfg.width, cfg.height, cfg.bands or 31,
                       stage_seed(cfg.seed, "scene")).cube


def resolve(cfg: PipelineConfig) -> Resolved:
    """Load referenced files and check that every field agrees with every other."""
    if cfg.method not in METHODS:
        raise ConfigError(f"method={cfg.method!r} is not one of {METHODS}")
    if cfg.guide_mode not in ("rgb", "gray"):
        raise ConfigError(f"guide_mode={cfg.guide_mode!r} must be 'rgb' or 'gray'")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.weights is not None and cfg.method != "network":
        raise ConfigError(f"weights is set but method={cfg.method!r} does not use it")
    if cfg.dispersion is not None and cfg.blur_quadratic is not None:
        raise ConfigError("blur_quadratic conflicts with dispersion: the dispersion file defines the blur")
    cube = _scene(cfg)
    if cfg.bands is not None and cfg.bands != cube.bands:
        raise ConfigError(f"bands={cfg.bands} disagrees with cube ({cube.bands} bands)")
    if cfg.dispersion is not None:
        disp = DispersionModel.load(cfg.path(cfg.dispersion))
        if cfg.n is not None and cfg.n != disp.n:
            raise ConfigError(f"n={cfg.n} disagrees with dispersion (N={disp.n})")
    else:
        n = cube.bands if cfg.n is None else cfg.n
        if n < cube.bands:
            raise ConfigError(f"n={n} is smaller than bands={cube.bands}; shifts would collide")
        if cfg.blur_quadratic is not None:
            shifts = DispersionModel.linear(cube.bands, n).shifts
            disp = DispersionModel.from_quadratic(shifts, cfg.blur_quadratic)
        else:
            disp = DispersionModel.linear(cube.bands, n)
    if disp.bands != cube.bands:
        raise ConfigError(f"dispersion has {disp.bands} bands but bands={cube.bands}")
    response = None
    if cfg.response is not None:
        obj = json.loads(cfg.path(cfg.response).read_text())
        response = SpectralResponse(obj["r"], obj["g"], obj["b"], obj.get("gray"))
        if response.bands != cube.bands:
            raise ConfigError(f"response has {response.bands} bands but bands={cube.bands}")
    fn, fv = disp.footprint
    if cfg.v < 1:
        raise ConfigError("v must be >= 1")
    if fn > cube.width:
        raise ConfigError(f"dispersion footprint ({fn} px) exceeds width={cube.width}")
    sensor_width = cube.width + fn - 1 if cfg.wide_sensor else None
    maskgen = MaskGenParams(fn, max(cfg.v, fv), cfg.q, cfg.compactness, cfg.max_shift, sensor_width)
    if cfg.contrast_eps < 0 or cfg.contrast_eps >= 1:
        raise ConfigError("contrast_eps must lie in [0, 1)")
    if cfg.contrast_eps > 0 and maskgen.v < 2:
        raise ConfigError("contrast_eps > 0 needs v >= 2 so rows keep background pixels for offset removal")
    noise = None
    if cfg.photon_level is not None:
        noise = NoiseParams(cfg.photon_level, cfg.read_std, stage_seed(cfg.seed, "noise"))
    if cfg.guided_kernel is not None:
        kh, kw = cfg.guided_kernel
        guided = GuidedParams(int(kh), int(kw), cfg.guided_eps)
    else:
        guided = GuidedParams.for_spread(disp.n, eps=cfg.guided_eps)
    weights = None
    if cfg.weights is not None:
        from .network import FilterNetWeights
        weights = FilterNetWeights.load(cfg.path(cfg.weights))
    return Resolved(cfg, cube, disp, response, maskgen, noise, guided, weights)


@dataclass(frozen=True, eq=False)
class RunResult:
    report: EvalReport
    recon: HsiCube
    timings_ms: dict
    artifacts: dict


def _stage(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:
        raise StageError(name, exc) from exc


def execute(res: Resolved) -> tuple[dict, dict]:
    """Run every stage in memory; returns (products, timings in ms)."""
    cfg = res.config
    clock = time.perf_counter
    tim: dict = {}
    t0 = clock()
    guide, gray = _stage("guide", render_guide, res.cube, res.response)
    mg: dict = {}
    t1 = clock()
    mask, spmap = _stage("mask", generate_mask, guide, res.maskgen, mg)
    t2 = clock()
    sensor = _stage("capture", capture, res.cube, mask, res.disp, cfg.contrast_eps, res.noise,
                    sensor_width=res.maskgen.sensor_width)
    t3 = clock()
    rep: dict = {}
    recon = _stage("reconstruct", reconstruct_frame, guide, gray, sensor, mask, spmap, res.disp,
                   cfg.method, guard=res.maskgen.v, guided=res.guided, weights=res.weights,
                   guide_mode=cfg.guide_mode, remove_background=cfg.contrast_eps > 0,
                   wavelengths=res.cube.wavelengths, threads=cfg.threads, report=rep)
    t4 = clock()
    tim.update(guide_ms=(t1 - t0) * 1e3, segmentation_ms=mg["slic_ms"],
               mask_ms=(t2 - t1) * 1e3 - mg["slic_ms"], capture_ms=(t3 - t2) * 1e3,
               reconstruction_ms=(t4 - t3) * 1e3, extract_ms=rep["extract_ms"], fuse_ms=rep["fuse_ms"],
               **{k: v for k, v in mg.items() if k != "slic_ms"})
    products = dict(guide=guide, gray=gray, mask=mask, spmap=spmap, sensor=sensor, recon=recon,
                    uncovered_fraction=rep["uncovered_fraction"], samples=rep["samples"])
    return products, tim


def run_pipeline(config: PipelineConfig, write: bool = True) -> RunResult:
    """guide render, mask generation, capture, offset removal, fusion and evaluation.

    Artifacts go to ``workspace/out``. Wall-clock timings are written to
    ``timings.json`` and kept out of ``report.json`` so that every other
    artifact is a pure function of the configuration.
    """
    res = resolve(config)
    products, tim = execute(res)
    t0 = time.perf_counter()
    extra = {"method": config.method, "guide_mode": config.guide_mode, "samples": products["samples"],
             "openings": len(products["mask"]), "superpixels": products["spmap"].q,
             "n": res.maskgen.n, "v": res.maskgen.v}
    report = _stage("evaluate", evaluate, res.cube, products["recon"], products["uncovered_fraction"],
                    None, extra)
    tim["evaluate_ms"] = (time.perf_counter() - t0) * 1e3
    artifacts: dict = {}
    if write:
        out = config.path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        artifacts = {name: out / name for name in
                     ("config.json", "scene.hsi", "dispersion.json", "guide.png", "gray.png", "mask.png",
                      "labels.bin", "sensor.f32", "recon.hsi", "report.json", "timings.json")}

        def write_all():
            # where the run lives and how many threads it used do not affect results
            recorded = {k: v for k, v in config.to_dict().items()
                        if k not in ("threads", "workspace", "out")}
            artifacts["config.json"].write_text(json.dumps(recorded, indent=1, sort_keys=True) + "\n")
            save_cube(res.cube, artifacts["scene.hsi"])
            res.disp.save(artifacts["dispersion.json"])
            save_guide(products["guide"], artifacts["guide.png"])
            save_gray(products["gray"], artifacts["gray.png"])
            save_mask(products["mask"], artifacts["mask.png"])
            save_spmap(products["spmap"], artifacts["labels.bin"])
            save_sensor(products["sensor"], artifacts["sensor.f32"])
            save_cube(products["recon"], artifacts["recon.hsi"])
            report.save(artifacts["report.json"])
            artifacts["timings.json"].write_text(json.dumps(tim, indent=1, sort_keys=True) + "\n")

        _stage("write", write_all)
    timed = dataclasses.replace(report, timings_ms=dict(tim))
    return RunResult(timed, products["recon"], tim, artifacts)


@dataclass(frozen=True)
class BenchResult:
    samples_ms: dict

    def summary(self) -> dict:
        out = {}
        for stage, xs in self.samples_ms.items():
            a = np.asarray(xs, dtype=np.float64)
            out[stage] = {"median_ms": float(np.median(a)), "p95_ms": float(np.percentile(a, 95)),
                          "runs": len(xs)}
        return out

    def to_json(self) -> dict:
        return {"stages": self.summary(), "samples_ms": self.samples_ms}

    def table(self) -> str:
        rows = [("stage", "median ms", "p95 ms")]
        rows += [(s, f"{v['median_ms']:.3f}", f"{v['p95_ms']:.3f}") for s, v in self.summary().items()]
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = [f"{r[0]:<{widths[0]}}  {r[1]:>{widths[1]}}  {r[2]:>{widths[2]}}" for r in rows]
        return "\n".join(lines)


def bench(config: PipelineConfig, repeats: int = 5) -> BenchResult:
    """Median and p95 wall-clock per stage over ``repeats`` in-memory runs (after one untimed run)."""
    if repeats < 3:
        raise ValueError("bench needs at least 3 repeats")
    res = resolve(config)
    keys = {"segmentation": "segmentation_ms", "mask": "mask_ms", "capture-sim": "capture_ms",
            "reconstruction": "reconstruction_ms"}
    samples = {stage: [] for stage in STAGES}
    execute(res)  # warm-up: loads compiled kernels from the cache
    for _ in range(repeats):
        _, tim = execute(res)
        for stage, key in keys.items():
            samples[stage].append(tim[key])
    return BenchResult(samples)
