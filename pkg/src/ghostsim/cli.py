"""Command-line scenario runner.

Usage::

    ghostsim {pseudothermal,slm,computational,section,validate} CONFIG [--out DIR]
    ghostsim compare IMAGE_A IMAGE_B [--tolerance T]

Configs are YAML files in SI units (see README). Every run writes image
exports, a JSON metrics summary, the resolved config snapshot and a
manifest (JSON and text) into its output directory. ``GHOSTSIM_OUTPUT_DIR``
overrides the default output root.

Exit codes: 0 success, 1 config error, 2 precondition violation,
3 acceptance failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import time
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import validation as V
from .coherence import gs_radii
from .correlator import (GhostImage, ScenarioConfig, predicted_image, run_computational,
                         run_pseudothermal, run_slm, simulate_bucket)
from .detection import (DetectorModel, ObjectMask, disk_mask, double_slit_mask, point_mask,
                        rect_mask)
from .errors import ConfigError, GhostSimError, GridMismatch, InvalidArgument
from .grid import GridSpec, RealField, make_grid, read_csv, read_pgm
from .propagation import output_grid
from .sectioning import build_stack, depth_profile, section, write_profile_json
from .source import (GaussianSchellParams, ModulationScheme, PHI_DEFAULT, SlmParams,
                     export_schedule, import_schedule, sinusoidal_scheme)

log = logging.getLogger("ghostsim")

OUTPUT_ENV = "GHOSTSIM_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_ACCEPTANCE = 0, 1, 2, 3
SUBCOMMANDS = ("pseudothermal", "slm", "computational", "section", "validate")

DEFAULTS = {
    "name": "scenario",
    "seed": 0,
    "lambda0": 1.0e-6,
    "acquisition": {"frames": 1000, "dt": 1.0e-3, "t0": 0.0, "temporal": "independent",
                    "blocks": 20, "batch": 32},
    "object": {"shape": "point", "window": 32},
    "scan": {"n": None, "pinhole_offset": 0.0},
    "detectors": {"dc_block": False, "pinhole": {}, "bucket": {}},
    "checks": {"rtol": 0.10},
}
DETECTOR_KEYS = ("eta", "A1", "impulse", "width", "shot_noise", "dt", "q")


# --- config -------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``setA-disk`` etc.)."""
    ref = resources.files("ghostsim") / "configs" / f"{name}.yaml"
    return Path(str(ref))


def load_config(path: str | Path) -> dict:
    """Read a YAML config (or a bundled config name) and fill defaults."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = bundled_config(str(path))
    try:
        raw = yaml.safe_load(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"cannot read {path}", "config") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}", "config") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", "config")
    cfg = _merge(DEFAULTS, raw)
    cfg["_path"] = str(p)
    return cfg


def _get(d: dict, key: str, kind=float, required: bool = True, default=None):
    """Fetch dotted ``key`` from the nested config, converting with ``kind``."""
    cur = d
    for part in key.split("."):
        if not isinstance(cur, dict) or part not in cur or cur[part] is None:
            if required:
                raise ConfigError("missing required value", key)
            return default
        cur = cur[part]
    try:
        return kind(cur)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot interpret {cur!r} as {kind.__name__}", key) from exc


def _as_bool(v):
    if isinstance(v, bool):
        return v
    raise ValueError(v)


def _detector(raw: dict, key: str) -> DetectorModel:
    d = raw["detectors"].get(key) or {}
    unknown = set(d) - set(DETECTOR_KEYS)
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)}", f"detectors.{key}")
    try:
        return DetectorModel(**d)
    except (TypeError, GhostSimError) as exc:
        raise ConfigError(str(exc), f"detectors.{key}") from exc


def _source(raw: dict):
    kind = _get(raw, "source.kind", str)
    if kind == "gaussian-schell":
        return GaussianSchellParams(_get(raw, "source.P"), _get(raw, "source.a0"),
                                    _get(raw, "source.rho0"),
                                    _get(raw, "source.T0", required=False, default=1e-3))
    if kind == "slm":
        return SlmParams(_get(raw, "source.d"), _get(raw, "source.M", int), _get(raw, "source.P"),
                         _get(raw, "source.T0", required=False, default=1e-3),
                         _get(raw, "lambda0"),
                         _get(raw, "source.beam_radius", required=False))
    raise ConfigError(f"unknown source kind {kind!r} (gaussian-schell or slm)", "source.kind")


def _scheme(raw: dict, s: SlmParams, base: Path) -> ModulationScheme:
    variant = _get(raw, "modulation.variant", str, required=False, default="sinusoidal")
    if variant == "stochastic-iid":
        return ModulationScheme("stochastic-iid", seed=_get(raw, "modulation.seed", int, False, 0),
                                levels=_get(raw, "modulation.levels", int, False, 256))
    if variant != "sinusoidal":
        raise ConfigError(f"unknown variant {variant!r}", "modulation.variant")
    sched = _get(raw, "modulation.schedule_file", str, required=False)
    if sched is not None:
        path = Path(sched) if Path(sched).is_absolute() else base / sched
        return import_schedule(path)
    return sinusoidal_scheme(s, _get(raw, "modulation.Omega0"),
                             _get(raw, "modulation.Phi", required=False, default=PHI_DEFAULT),
                             _get(raw, "modulation.assignment", str, False, "random"),
                             _get(raw, "modulation.seed", int, False, 0))


def _mask(raw: dict, g: GridSpec) -> ObjectMask:
    shape = _get(raw, "object.shape", str)
    win = _get(raw, "object.window", int)
    mg = g.crop(win)[0]
    center = tuple(raw["object"].get("center", (0.0, 0.0)))
    if shape == "point":
        return point_mask(mg, center)
    if shape == "disk":
        return disk_mask(mg, _get(raw, "object.radius"), center)
    if shape == "rect":
        return rect_mask(mg, _get(raw, "object.width"), _get(raw, "object.height"), center)
    if shape == "double-slit":
        return double_slit_mask(mg, _get(raw, "object.separation"), _get(raw, "object.width"),
                                _get(raw, "object.height"))
    if shape == "none":
        return ObjectMask(mg, np.zeros((win, win)))
    raise ConfigError(f"unknown object shape {shape!r}", "object.shape")


def build_scenario(raw: dict) -> ScenarioConfig:
    """Turn a parsed config into a :class:`ScenarioConfig` (preconditions checked)."""
    lam = _get(raw, "lambda0")
    L = _get(raw, "L")
    try:
        src = _source(raw)
        g = make_grid(_get(raw, "grid.n", int), _get(raw, "grid.pitch"))
    except InvalidArgument as exc:
        raise ConfigError(str(exc), "source/grid") from exc
    scheme = _scheme(raw, src, Path(raw.get("_path", ".")).parent) if isinstance(src, SlmParams) else None
    mask = _mask(raw, output_grid(g, lam, L))
    temporal = _get(raw, "acquisition.temporal", str)
    return ScenarioConfig(
        source=src, lambda0=lam, L=L, source_grid=g, mask=mask,
        frames=_get(raw, "acquisition.frames", int), dt=_get(raw, "acquisition.dt"),
        scheme=scheme, pinhole=_detector(raw, "pinhole"), bucket=_detector(raw, "bucket"),
        dc_block=_get(raw, "detectors.dc_block", _as_bool), seed=_get(raw, "seed", int),
        scan_n=_get(raw, "scan.n", int, required=False),
        temporal=temporal, pinhole_offset=_get(raw, "scan.pinhole_offset"),
        t0=_get(raw, "acquisition.t0"), blocks=_get(raw, "acquisition.blocks", int),
        batch=_get(raw, "acquisition.batch", int), name=_get(raw, "name", str))


def snapshot(raw: dict) -> dict:
    return {k: v for k, v in raw.items() if not k.startswith("_")}


# --- manifest -----------------------------------------------------------------

@dataclass
class RunManifest:
    name: str
    subcommand: str
    config: dict
    seed: int
    outdir: str
    outputs: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    wall_clock: float = 0.0
    status: str = "running"
    failed_stage: str | None = None
    message: str | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def write(self) -> Path:
        out = Path(self.outdir)
        data = {"name": self.name, "subcommand": self.subcommand, "seed": self.seed,
                "status": self.status, "failed_stage": self.failed_stage, "message": self.message,
                "wall_clock_s": self.wall_clock, "outputs": self.outputs,
                "checks": [c.as_dict() for c in self.checks], "config": self.config}
        (out / "manifest.json").write_text(json.dumps(data, indent=2, default=_jsonable))
        lines = [f"name {self.name}", f"subcommand {self.subcommand}", f"seed {self.seed}",
                 f"status {self.status}", f"wall_clock_s {self.wall_clock:.3f}"]
        if self.failed_stage:
            lines.append(f"failed_stage {self.failed_stage}")
        if self.message:
            lines.append(f"message {self.message}")
        lines += [f"output {k} {v}" for k, v in self.outputs.items()]
        lines += [c.line() for c in self.checks]
        (out / "manifest.txt").write_text("\n".join(lines) + "\n")
        return out / "manifest.json"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def output_dir(raw: dict, subcommand: str, override: str | None) -> Path:
    if override:
        root = Path(override)
    else:
        root = Path(os.environ.get(OUTPUT_ENV, "ghostsim-runs")) / f"{raw.get('name', 'scenario')}-{subcommand}"
    root.mkdir(parents=True, exist_ok=True)
    return root


# --- subcommands ----------------------------------------------------------------

def _image_checks(img: GhostImage, pred: GhostImage, rtol: float) -> list[V.Check]:
    mi, mp = img.metrics(), pred.metrics()
    return [V.rel_check("fwhm_x_vs_predicted", mi["fwhm_x"], mp["fwhm_x"], rtol),
            V.rel_check("fwhm_y_vs_predicted", mi["fwhm_y"], mp["fwhm_y"], rtol),
            V.rel_check("peak_vs_predicted", mi["peak"], mp["peak"], rtol)]


def _export(img: GhostImage, out: Path, stem: str, man: RunManifest):
    for k, v in img.export(out / stem).items():
        man.outputs[f"{stem}.{k}"] = v
    iy, _ = img.peak_index
    prof = out / f"{stem}_profile.csv"
    np.savetxt(prof, np.column_stack([img.grid.x, img.values[iy]]), delimiter=",",
               header="x,value", comments="", fmt="%.17g")
    man.outputs[f"{stem}.profile"] = str(prof)


def _predicted(cfg: ScenarioConfig) -> GhostImage | None:
    try:
        return predicted_image(cfg)
    except InvalidArgument:
        return None  # Gaussian-illuminated SLM has no closed form


def _run_imaging(cfg: ScenarioConfig, raw: dict, out: Path, man: RunManifest, kind: str):
    rtol = float(raw["checks"].get("rtol", 0.10))
    man.failed_stage = "simulate"
    if kind == "pseudothermal":
        img = run_pseudothermal(cfg)
    elif kind == "slm":
        img = run_slm(cfg)
    else:
        if cfg.scheme is not None and cfg.scheme.deterministic:
            export_schedule(cfg.scheme, out / "schedule.csv")
            man.outputs["schedule"] = str(out / "schedule.csv")
        img = run_computational(cfg)
    man.failed_stage = "export"
    _export(img, out, "image", man)
    pred = _predicted(cfg if kind != "computational" else cfg.replace(dc_block=True))
    if pred is not None:
        _export(pred, out, "predicted", man)
        man.checks += _image_checks(img, pred, rtol)
        if img.dc_block:
            free = pred.values < 0.01 * pred.values.max()
            if free.any():
                frac = float((np.abs(img.values[free]) <= 3 * img.sigma[free]).mean())
                man.checks.append(V.Check("background_free_pixels_within_3sigma", frac >= 0.95,
                                          frac, 1.0, 0.95, "object-free region of the predicted image"))
    metrics = {"image": img.metrics(), "predicted": pred.metrics() if pred is not None else None,
               "far_field_factor": cfg.far_field_factor, "frames": cfg.frames}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, default=_jsonable))
    man.outputs["metrics"] = str(out / "metrics.json")


def _focal_depth(cfg: ScenarioConfig) -> float:
    """k0 rho_L^2 at the object plane for the configured source."""
    k0 = 2 * np.pi / cfg.lambda0
    s = cfg.source
    if isinstance(s, SlmParams):
        rL = 2 * cfg.L / (k0 * s.beam_radius) if s.beam_radius else cfg.lambda0 * cfg.L / s.D
    else:
        rL = gs_radii(s, cfg.lambda0, cfg.L)[1]
    return k0 * rL**2


def _run_section(cfg: ScenarioConfig, raw: dict, out: Path, man: RunManifest):
    sec = raw.get("section") or {}
    zR = _focal_depth(cfg)
    if "depths" in sec:
        depths = [float(z) for z in sec["depths"]]
    elif "multiples" in sec:
        depths = [cfg.L + float(m) * zR for m in sec["multiples"]]
    else:
        raise ConfigError("give depths (m) or multiples of k0 rho_L^2", "section")
    cache = sec.get("cache_dir")
    man.failed_stage = "build_stack"
    stack = build_stack(cfg.replace(dc_block=True), depths, cache)
    man.outputs["stack_fingerprint"] = stack.fingerprint
    man.failed_stage = "bucket"
    bucket = simulate_bucket(cfg)
    bucket.to_csv(out / "bucket.csv")
    man.outputs["bucket"] = str(out / "bucket.csv")
    man.failed_stage = "section"
    images = section(bucket, stack)
    for j, img in enumerate(images):
        _export(img, out, f"slice{j:02d}", man)
    prof = depth_profile(images, depths, sec.get("method", "gaussian-fit"))
    man.outputs["depth_profile"] = str(prof.to_csv(out / "depth_profile.csv"))
    man.outputs["depth_profile_json"] = str(write_profile_json(prof, out / "depth_profile.json"))
    truth = float(sec.get("object_depth", cfg.L))
    tol = float(sec.get("tolerance", 0.25 * zR))
    err = abs(prof.focus_estimate - truth)
    man.checks.append(V.Check("section_focus_estimate", err <= tol, prof.focus_estimate, truth, tol))


def _run_validate(raw: dict, man: RunManifest):
    val = raw.get("validate") or {}
    suites = val.get("suites", ["propagation", "sinusoid"])
    lam = _get(raw, "lambda0")
    L = _get(raw, "L")
    frames = int(val.get("frames", _get(raw, "acquisition.frames", int)))
    seed = _get(raw, "seed", int)
    cache = {}
    for name in suites:
        man.failed_stage = f"validate:{name}"
        if name == "propagation":
            man.checks += V.propagation_suite(seed=seed)
        elif name == "sinusoid":
            man.checks += V.sinusoid_suite(_get(raw, "modulation.Phi", required=False, default=PHI_DEFAULT),
                                           _get(raw, "modulation.Omega0", required=False,
                                                default=2 * np.pi * 1e3))
        elif name in ("gs-farfield", "moment-factoring"):
            if "gs" not in cache:
                p = _source(raw)
                g = make_grid(_get(raw, "grid.n", int), _get(raw, "grid.pitch"))
                cache["gs"] = (p, V.gs_ensemble(p, lam, L, g, frames, seed))
            p, stats = cache["gs"]
            man.checks += (V.gs_farfield_suite(p, lam, L, stats) if name == "gs-farfield"
                           else V.moment_factoring_suite(p, lam, L, stats))
        elif name == "temporal":
            p = _source(raw)
            g = make_grid(_get(raw, "grid.n", int), _get(raw, "grid.pitch"))
            dt = float(val.get("dt", p.T0 / 2))
            man.checks += V.temporal_suite(p, V.temporal_ensemble(p, lam, L, g, frames, dt, seed))
        elif name == "slm-kernel":
            man.checks += V.slm_kernel_suite(_source(raw), lam, L)
        else:
            raise ConfigError(f"unknown suite {name!r}", "validate.suites")


def run(config_path: str | Path, subcommand: str, outdir: str | None = None,
        overrides: dict | None = None) -> RunManifest:
    """Run one subcommand on a config file; always leaves a manifest behind once the config parses."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}", "subcommand")
    raw = load_config(config_path)
    for key, value in (overrides or {}).items():
        cur = raw
        *head, last = key.split(".")
        for part in head:
            cur = cur.setdefault(part, {})
        cur[last] = value
    out = output_dir(raw, subcommand, outdir)
    man = RunManifest(str(raw.get("name")), subcommand, snapshot(raw), int(raw.get("seed", 0)), str(out))
    (out / "config.yaml").write_text(yaml.safe_dump(snapshot(raw), sort_keys=False))
    man.outputs["config"] = str(out / "config.yaml")
    start = time.perf_counter()
    try:
        if subcommand == "validate":
            _run_validate(raw, man)
        else:
            man.failed_stage = "config"
            cfg = build_scenario(raw)
            if subcommand == "section":
                _run_section(cfg, raw, out, man)
            else:
                _run_imaging(cfg, raw, out, man, subcommand)
        man.failed_stage = None
        man.status = "passed" if man.passed else "acceptance-failed"
    except GhostSimError as exc:
        man.status = "error"
        man.message = str(exc)
        raise
    finally:
        man.wall_clock = time.perf_counter() - start
        man.write()
    return man


# --- compare ----------------------------------------------------------------------

@dataclass
class CompareReport:
    max_abs_diff: float
    max_rel_diff: float
    mean_rel_diff: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} compare: max relative deviation {self.max_rel_diff:.4g} "
                f"(max abs {self.max_abs_diff:.4g}, tol {self.tolerance:g})")


def compare(a: RealField | GhostImage, b: RealField | GhostImage, tolerance: float,
            sigma: np.ndarray | None = None) -> CompareReport:
    """Pixelwise deviation of ``a`` from ``b``.

    Relative deviations are taken against max |b|. With ``sigma`` the
    tolerance is in units of the per-pixel standard error instead, and the
    test passes when at least 95% of pixels lie within it.
    """
    ga, gb = a.grid, b.grid
    if ga.n != gb.n or not np.isclose(ga.pitch, gb.pitch, rtol=1e-9) or \
            not np.allclose(ga.center, gb.center, atol=1e-9 * ga.pitch * ga.n):
        raise GridMismatch("images live on different grids")
    va, vb = np.asarray(a.values, float), np.asarray(b.values, float)
    diff = np.abs(va - vb)
    scale = float(np.max(np.abs(vb))) or 1.0
    rel = diff / scale
    if sigma is not None:
        z = np.where(sigma > 0, diff / np.where(sigma > 0, sigma, 1), np.where(diff == 0, 0, np.inf))
        passed = bool(np.mean(z <= tolerance) >= 0.95)
    else:
        passed = bool(rel.max() <= tolerance)
    return CompareReport(float(diff.max()), float(rel.max()), float(rel.mean()), tolerance, passed)


def _read_image(path: str) -> RealField:
    return read_pgm(path) if path.endswith(".pgm") else read_csv(path)


# --- entry point --------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ghostsim", description="Ghost-imaging scenario runner")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} scenario")
        sp.add_argument("config", help="YAML config path or bundled config name")
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV}/<name>-<cmd>)")
        sp.add_argument("--frames", type=int, help="override acquisition.frames")
        sp.add_argument("--seed", type=int, help="override the top-level seed")
    cp = sub.add_parser("compare", help="pixelwise comparison of two exported images")
    cp.add_argument("image_a")
    cp.add_argument("image_b")
    cp.add_argument("--tolerance", type=float, default=0.1)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "compare":
        try:
            rep = compare(_read_image(args.image_a), _read_image(args.image_b), args.tolerance)
        except (OSError, GhostSimError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(rep.line())
        return EXIT_OK if rep.passed else EXIT_ACCEPTANCE
    overrides = {}
    if args.frames is not None:
        overrides["acquisition.frames"] = args.frames
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            man = run(args.config, args.command, args.out, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GhostSimError as exc:
        print(f"precondition violation: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    for c in man.checks:
        print(c.line())
    print(f"manifest: {Path(man.outdir) / 'manifest.json'}")
    return EXIT_OK if man.passed else EXIT_ACCEPTANCE


if __name__ == "__main__":
    sys.exit(main())
