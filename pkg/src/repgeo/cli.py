"""Command-line interface.

Every command writes into a run directory containing its artifacts and a
``manifest.json`` that records the fully resolved arguments. ``rerun``
re-executes a manifest into a fresh directory; since all randomness is
seeded and all reductions are ordered, the binary artifacts come out
bitwise identical.

Image arguments accept a file path or a built-in sample reference:

    sample:natural:INDEX[:SEED[:SIZE[:DOWNSAMPLE]]]
    sample:smooth:SIZE:SEED[:SIGMA]
    sample:noise:SIZE:SEED
    sample:disk:SIZE[:RADIUS]

Exit codes: 0 success, 1 failed ``check``, 2 invalid input, 3 the geodesic
optimization did not converge (artifacts are still written).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import geodesic as geo
from . import image_transforms as it
from . import metrics as mt
from . import repr_stack as rs
from . import samples
from .diffcore import ConfigurationError
from .store import load_tensor, read_image, save_tensor, sha256, write_image

log = logging.getLogger("repgeo")

OUT_ENV = "REPGEO_OUT"
EXIT_OK, EXIT_CHECK_FAILED, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 1, 2, 3
MANIFEST = "manifest.json"
PATH_FILE = "path.rgt"


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


# ---------------------------------------------------------------------------
# inputs


def load_image_ref(ref: str, base: Path | None = None) -> np.ndarray:
    if ref.startswith("sample:"):
        parts = ref.split(":")[1:]
        kind, vals = parts[0], parts[1:]
        try:
            if kind == "natural":
                index = int(vals[0])
                seed = int(vals[1]) if len(vals) > 1 else 0
                size = int(vals[2]) if len(vals) > 2 else 64
                down = int(vals[3]) if len(vals) > 3 else 3
                return samples.natural_crop(index, size, seed=seed, downsample=down)
            if kind == "smooth":
                sigma = float(vals[2]) if len(vals) > 2 else 2.0
                return samples.smooth_random_image((1, int(vals[0]), int(vals[0])), int(vals[1]), sigma)
            if kind == "noise":
                return samples.random_image((1, int(vals[0]), int(vals[0])), int(vals[1]))
            if kind == "disk":
                size = int(vals[0])
                radius = float(vals[1]) if len(vals) > 1 else size / 4
                return samples.disk(size, radius)
        except (IndexError, ValueError) as err:
            raise InputError(f"malformed sample reference {ref!r}: {err}") from err
        raise InputError(f"unknown sample kind {kind!r} in {ref!r}")
    path = Path(ref)
    if base is not None and not path.is_absolute():
        path = base / path
    if not path.exists():
        raise InputError(f"input file not found: {path}")
    if path.suffix == ".rgt":
        x = load_tensor(path)
        return x[None] if x.ndim == 2 else x
    return read_image(path)


def stage_input(ref: str, run: Path, name: str, base: Path | None = None) -> str:
    """Copy a file input into the run directory so the manifest is self-contained."""
    if ref.startswith("sample:"):
        return ref
    src = Path(ref) if base is None or Path(ref).is_absolute() else base / ref
    if not src.exists():
        raise InputError(f"input file not found: {src}")
    dest = run / "inputs" / (name + src.suffix)
    dest.parent.mkdir(parents=True, exist_ok=True)
    if src.resolve() != dest.resolve():
        shutil.copyfile(src, dest)
    return str(dest.relative_to(run))


def transform_from_args(a: dict) -> it.TransformSpec:
    kind = a["kind"]
    if kind == "translate":
        mag = [a.get("dx") or 0.0, a.get("dy") or 0.0]
    elif kind == "rotate":
        if a.get("deg") is None:
            raise InputError("--deg is required for rotation")
        mag = a["deg"]
    elif kind == "dilate":
        if a.get("scale") is None:
            raise InputError("--scale is required for dilation")
        mag = a["scale"]
    else:
        raise InputError(f"unknown transform kind {kind!r}")
    return it.TransformSpec(kind, mag, a.get("center"), a.get("boundary"), a.get("interpolation") or "bicubic")


def crop_margin(x: np.ndarray, m: int) -> np.ndarray:
    if m <= 0:
        return x
    if 2 * m >= min(x.shape[-2:]):
        raise InputError(f"margin {m} leaves no pixels of a {x.shape[-2]}x{x.shape[-1]} image")
    return x[..., m:-m, m:-m]


# ---------------------------------------------------------------------------
# run directories


def out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def make_run_dir(out: str | None, default_name: str) -> Path:
    run = Path(out) if out else out_root() / default_name
    run.mkdir(parents=True, exist_ok=True)
    return run


def write_frames(run: Path, path: np.ndarray, bits: int = 8, prefix: str = "frame") -> list:
    names = []
    for n, frame in enumerate(path):
        name = f"{prefix}_{n:03d}.png"
        write_image(run / name, frame, bits)
        names.append(name)
    return names


def write_csv(file: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    file.write_text(buf.getvalue())


def write_manifest(run: Path, command: str, args: dict, artifacts: list, extra: dict | None = None) -> dict:
    manifest = {
        "tool": "repgeo",
        "version": __version__,
        "command": command,
        "args": args,
        "artifacts": {name: sha256(run / name) for name in sorted(artifacts)},
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        manifest.update(extra)
    (run / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(run: Path) -> dict:
    file = run / MANIFEST if run.is_dir() else run
    if not file.exists():
        raise InputError(f"no manifest at {file}")
    return json.loads(file.read_text())


def load_path(ref: str) -> np.ndarray:
    p = Path(ref)
    file = p / PATH_FILE if p.is_dir() else p
    if not file.exists():
        raise InputError(f"no frames found at {file}")
    return load_tensor(file)


# ---------------------------------------------------------------------------
# commands; each takes a dict of resolved arguments and a run directory


def run_transform(a: dict, run: Path, base: Path | None = None) -> int:
    a = dict(a)
    a["input"] = stage_input(a["input"], run, "input", base)
    x0 = load_image_ref(a["input"], run)
    spec = transform_from_args(a)
    path = crop_margin(it.ground_truth_path(spec, x0, a["n"]), a.get("margin", 0))
    save_tensor(run / PATH_FILE, path)
    frames = write_frames(run, path, a.get("bits", 8))
    write_manifest(run, "transform", a, frames + [PATH_FILE], {"transform": spec.to_dict()})
    log.info("wrote %d frames to %s", len(frames), run)
    return EXIT_OK


def geodesic_config(a: dict) -> geo.GeodesicConfig:
    cfg = dict(a.get("config") or {})
    return geo.GeodesicConfig.from_dict(cfg)


def run_synth(a: dict, run: Path, base: Path | None = None) -> int:
    a = dict(a)
    a["x0"] = stage_input(a["x0"], run, "x0", base)
    x0 = load_image_ref(a["x0"], run)
    gt = None
    spec = None
    if a.get("transform"):
        spec = transform_from_args(a["transform"])
        n = geodesic_config(a).n_steps
        gt = crop_margin(it.ground_truth_path(spec, x0, n), a.get("margin", 0))
        x0, xn = gt[0], gt[-1]
    else:
        if not a.get("xn"):
            raise InputError("synth needs --xn or a transform")
        a["xn"] = stage_input(a["xn"], run, "xn", base)
        xn = load_image_ref(a["xn"], run)
        x0, xn = crop_margin(x0, a.get("margin", 0)), crop_margin(xn, a.get("margin", 0))
    if x0.shape != xn.shape:
        raise InputError(f"endpoint shapes differ: {x0.shape} vs {xn.shape}")
    stack = stack_from_arg(a["stack"], run)
    a["stack"] = stack.to_dict()
    rep = rs.build_stack(stack, x0.shape)
    cfg = geodesic_config(a)
    a["config"] = cfg.to_dict()

    status, code, message = "converged", EXIT_OK, None
    try:
        path, diag = geo.synth_geodesic(x0, xn, rep, cfg)
    except geo.GeodesicError as err:
        diag, path = err.diagnostics, err.path
        status, code, message = diag.status if diag else "failed", EXIT_NOT_CONVERGED, str(err)
        log.error("%s", err)
    else:
        status = diag.status
        if status != "converged":
            code = EXIT_NOT_CONVERGED
            log.warning("outer loop stopped with status %s", status)

    artifacts = []
    save_tensor(run / "x0.rgt", x0)
    save_tensor(run / "xn.rgt", xn)
    artifacts += ["x0.rgt", "xn.rgt"]
    if diag is not None:
        (run / "diagnostics.csv").write_text(diag.to_csv())
        artifacts.append("diagnostics.csv")
    if path is not None:
        save_tensor(run / PATH_FILE, path)
        artifacts.append(PATH_FILE)
        artifacts += write_frames(run, path, a.get("bits", 8))
        lin = geo.init_linear(x0, xn, cfg.n_steps)
        save_tensor(run / "linear.rgt", lin)
        artifacts.append("linear.rgt")
        if gt is not None:
            save_tensor(run / "ground_truth.rgt", gt)
            r_geo, r_lin = mt.path_rmse(path, gt), mt.path_rmse(lin, gt)
            write_csv(run / "rmse.csv", ["frame", "geodesic", "linear"],
                      [[n, repr(float(g)), repr(float(l_))] for n, (g, l_) in enumerate(zip(r_geo, r_lin))])
            artifacts += ["ground_truth.rgt", "rmse.csv"]
    extra = {"status": status}
    if message:
        extra["error"] = message
    if diag is not None:
        extra["summary"] = {
            "initial_rep_energy": diag.initial_rep_energy,
            "first_rep_energy": diag.first_rep_energy,
            "first_pixel_energy": diag.first_pixel_energy,
            "rejected_steps": diag.rejected_steps,
            "outer_iterations": len(diag.rows) - 1,
        }
    write_manifest(run, "synth", a, artifacts, extra)
    log.info("synth finished with status %s in %s", status, run)
    return code


def stack_from_arg(ref, base: Path | None = None) -> rs.StackSpec:
    if isinstance(ref, dict):
        return rs.StackSpec.from_dict(ref)
    if ref in rs.PRESETS:
        return rs.preset(ref)
    p = Path(ref)
    if base is not None and not p.is_absolute() and not p.exists():
        p = base / p
    if not p.exists():
        raise InputError(f"{ref!r} is neither a preset ({', '.join(rs.PRESETS)}) nor a stack spec file")
    return rs.StackSpec.from_json(p.read_text())


def run_slice(a: dict, run: Path, base: Path | None = None) -> int:
    src = Path(a["run"]) if base is None or Path(a["run"]).is_absolute() else base / a["run"]
    path = load_path(str(src))
    sl = mt.temporal_slice(path, a["axis"], a["index"])
    stem = f"slice_{a['axis']}_{a['index']:03d}"
    save_tensor(run / f"{stem}.rgt", sl)
    write_image(run / f"{stem}.png", sl, a.get("bits", 8))
    if run.resolve() != src.resolve():
        write_manifest(run, "slice", a, [f"{stem}.rgt", f"{stem}.png"])
    return EXIT_OK


def run_rf(a: dict, run: Path, base: Path | None = None) -> int:
    a = dict(a)
    stack = stack_from_arg(a["stack"], base)
    a["stack"] = stack.to_dict()
    rep = rs.build_stack(stack, tuple(a["shape"]))
    grid_shape = rep.output_shape
    if len(grid_shape) != 3:
        raise InputError(f"stack output {grid_shape} has no spatial grid")
    loc = a.get("location") or [grid_shape[1] // 2, grid_shape[2] // 2]
    a["location"] = [int(v) for v in loc]
    rf = mt.receptive_field(rep, tuple(a["location"]), a["n_noise"], a["seed"])
    save_tensor(run / "rf_map.rgt", rf.grid)
    write_image(run / "rf_map.png", rf.grid / rf.grid.max(), 16 if a.get("bits", 8) == 16 else 8)
    write_csv(run / "rf_size.csv", ["stack", "row", "col", "size_estimate", "center_row", "center_col"],
              [[stack.name, a["location"][0], a["location"][1], repr(rf.size_estimate), repr(rf.center[0]),
                repr(rf.center[1])]])
    write_manifest(run, "rf", a, ["rf_map.rgt", "rf_map.png", "rf_size.csv"])
    log.info("%s receptive field at %s: %.1f px", stack.name, a["location"], rf.size_estimate)
    print(f"{stack.name} size_estimate {rf.size_estimate:g}")
    return EXIT_OK


def run_deviation(a: dict, run: Path, base: Path | None = None) -> int:
    src = Path(a["run"])
    manifest = read_manifest(src)
    stack = stack_from_arg(a.get("stack") or manifest["args"]["stack"], src)
    paths = {"geodesic": load_path(str(src))}
    for label, file in (("ground_truth", "ground_truth.rgt"), ("linear", "linear.rgt")):
        if (src / file).exists():
            paths[label] = load_tensor(src / file)
    rep = rs.build_stack(stack, paths["geodesic"].shape[1:])
    rows = []
    for label, path in paths.items():
        prof = mt.deviation_profile(path, rep)
        rows += [[label, n, repr(p), repr(d)] for n, (p, d) in enumerate(prof.knots)]
        print(f"{label} max_deviation {prof.max_deviation:.6g}")
    write_csv(run / "deviation.csv", ["path", "frame", "arc_position", "deviation"], rows)
    return EXIT_OK


def run_compare(a: dict, run: Path, base: Path | None = None) -> int:
    p, q = load_path(a["path"]), load_path(a["reference"])
    if p.shape != q.shape:
        raise InputError(f"paths differ in shape: {p.shape} vs {q.shape}")
    r = mt.path_rmse(p, q)
    rows = [[n, repr(float(v))] for n, v in enumerate(r)]
    write_csv(run / "compare.csv", ["frame", "rmse"], rows)
    print(f"mean interior rmse {float(np.mean(r[1:-1])) if len(r) > 2 else 0.0:.6g}")
    return EXIT_OK


def run_check(a: dict, run: Path | None, base: Path | None = None) -> int:
    from . import checks

    report = checks.run_checks(a.get("scope") or ["gradients", "invariants"], [Path(r) for r in a.get("runs") or []])
    text = json.dumps(report, indent=2, sort_keys=True)
    if run is not None:
        (run / "check.json").write_text(text + "\n")
    print(text)
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


COMMANDS = {
    "transform": run_transform,
    "synth": run_synth,
    "slice": run_slice,
    "rf": run_rf,
    "deviation": run_deviation,
    "compare": run_compare,
    "check": run_check,
}


# ---------------------------------------------------------------------------
# shipped recipes: fully specified argument sets for the commands above


def _translation_synth(stack: str, crop: int) -> dict:
    # a 96x96 crop is translated and the central 64x64 window kept, so no wrap-around seam enters the frames
    return {
        "command": "synth",
        "args": {
            "x0": f"sample:natural:{crop}:{crop}:96:{TRANSLATION_DOWNSAMPLE}",
            "transform": {"kind": "translate", "dx": 8.0, "dy": 0.0},
            "margin": 16,
            "stack": stack,
            "config": dict(TRANSLATION_CONFIG),
        },
    }


TRANSLATION_DOWNSAMPLE = 1
TRANSLATION_CONFIG = {"reproj_iters": 100}

RECIPES = {
    "transform_translate": {
        "command": "transform",
        "args": {"input": "sample:natural:0:0:64", "kind": "translate", "dx": 8.0, "dy": 0.0, "n": 10},
    },
    "transform_rotate": {
        "command": "transform",
        "args": {"input": "sample:natural:1:0:64", "kind": "rotate", "deg": 4.0, "n": 10},
    },
    "transform_dilate": {
        "command": "transform",
        "args": {"input": "sample:natural:2:0:64", "kind": "dilate", "scale": 1.10, "n": 10},
    },
    "pixel_crossfade": {
        "command": "synth",
        "args": {"x0": "sample:natural:3:0:64", "xn": "sample:natural:4:0:64", "stack": "pixel",
                 "config": {"inner_iters": 10_000, "reproj_iters": 100}},
    },
    "fourier_shift": {
        "command": "synth",
        "args": {"x0": "sample:natural:0:0:64", "transform": {"kind": "translate", "dx": 8.0, "dy": 0.0},
                 "stack": "fourier_mag", "config": {"n_steps": 8, "reproj_iters": 1000}},
    },
    "translate_l2": _translation_synth("smallnet_l2", 0),
    "translate_max": _translation_synth("smallnet_max", 0),
    "rf_stage3": {"command": "rf", "args": {"stack": "smallnet_l2", "shape": [1, 64, 64], "n_noise": 64, "seed": 0}},
    "rf_pool1_36": {"command": "rf",
                    "args": {"stack": "smallnet_l2_pool1_36", "shape": [1, 64, 64], "n_noise": 64, "seed": 0}},
    "rf_pool2_18": {"command": "rf",
                    "args": {"stack": "smallnet_l2_pool2_18", "shape": [1, 64, 64], "n_noise": 64, "seed": 0}},
}


def execute(command: str, args: dict, run: Path, base: Path | None = None) -> int:
    if command not in COMMANDS:
        raise InputError(f"unknown command {command!r}")
    return COMMANDS[command](args, run, base)


def rerun(manifest_path: Path, out: Path) -> int:
    manifest = read_manifest(manifest_path)
    src = manifest_path if manifest_path.is_dir() else manifest_path.parent
    out.mkdir(parents=True, exist_ok=True)
    return execute(manifest["command"], manifest["args"], out, base=src)


# ---------------------------------------------------------------------------
# argument parsing


def _load_json(path):
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise InputError(f"cannot read config {path}: {err}") from err


def _merge(file_values: dict, flags: dict) -> dict:
    """Flags given on the command line override values from a config file."""
    out = dict(file_values)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


CONFIG_FLAGS = {
    "n": "n_steps",
    "inner_iters": "inner_iters",
    "reproj_iters": "reproj_iters",
    "step": "step",
    "step_mode": "step_mode",
    "outer_tol": "outer_tol",
    "outer_window": "outer_window",
    "outer_max": "outer_max",
    "rep_tol": "rep_tol",
    "rep_atol": "rep_atol",
    "max_backtracks": "max_backtracks",
}
ADAM_FLAGS = {"lr": "step_size", "beta1": "beta1", "beta2": "beta2", "adam_eps": "eps"}


def _transform_flags(p):
    p.add_argument("--kind", choices=["translate", "rotate", "dilate"])
    p.add_argument("--dx", type=float, help="horizontal shift in pixels (positive = right)")
    p.add_argument("--dy", type=float, help="vertical shift in pixels (positive = down)")
    p.add_argument("--deg", type=float, help="rotation angle, counter-clockwise as displayed")
    p.add_argument("--scale", type=float, help="dilation factor")
    p.add_argument("--center", type=float, nargs=2, metavar=("ROW", "COL"))
    p.add_argument("--boundary", choices=["circular", "zero", "reflect"])
    p.add_argument("--interpolation", choices=["bilinear", "bicubic"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="repgeo", description="Representational geodesics between images.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="write a ground-truth transformation sequence")
    p.add_argument("--input", required=True, help="image file or sample reference")
    _transform_flags(p)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--margin", type=int, default=0, help="crop this many pixels from every side after warping")
    p.add_argument("--bits", type=int, choices=[8, 16], default=8)
    p.add_argument("--out")

    p = sub.add_parser("synth", help="compute a conditional geodesic")
    p.add_argument("--x0", required=True, help="first image (file or sample reference)")
    p.add_argument("--xn", help="last image; omit when a transform generates it from x0")
    p.add_argument("--stack", default="smallnet_l2", help="preset name or stack spec JSON")
    p.add_argument("--config", help="JSON file with geodesic settings (flags override)")
    _transform_flags(p)
    p.add_argument("--margin", type=int, default=None)
    for flag, typ in (("n", int), ("inner_iters", int), ("reproj_iters", int), ("step", float), ("outer_tol", float),
                      ("outer_window", int), ("outer_max", int), ("rep_tol", float), ("rep_atol", float),
                      ("max_backtracks", int),                      ("lr", float), ("beta1", float), ("beta2", float), ("adam_eps", float)):
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)
    p.add_argument("--step-mode", dest="step_mode", choices=["absolute", "normalized"])
    p.add_argument("--bits", type=int, choices=[8, 16], default=8)
    p.add_argument("--out")

    p = sub.add_parser("slice", help="temporal slice of a run's frames")
    p.add_argument("run")
    p.add_argument("--axis", choices=["row", "column"], default="row")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--bits", type=int, choices=[8, 16], default=8)
    p.add_argument("--out", help="directory for the slice (default: the run directory)")

    p = sub.add_parser("rf", help="measure a receptive field")
    p.add_argument("--stack", default="smallnet_l2")
    p.add_argument("--shape", type=int, nargs=3, default=[1, 64, 64], metavar=("C", "H", "W"))
    p.add_argument("--location", type=int, nargs=2, metavar=("ROW", "COL"))
    p.add_argument("--n-noise", dest="n_noise", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("deviation", help="deviation-from-straight-line profiles of a synth run")
    p.add_argument("run")
    p.add_argument("--stack", help="override the run's stack")
    p.add_argument("--out")

    p = sub.add_parser("compare", help="per-frame RMSE between two paths")
    p.add_argument("path", help="run directory or .rgt file")
    p.add_argument("reference", help="run directory or .rgt file")
    p.add_argument("--out")

    p = sub.add_parser("check", help="gradient checks and invariant audits")
    p.add_argument("--scope", nargs="+", choices=["gradients", "invariants"])
    p.add_argument("--runs", nargs="*", default=[], help="run directories to audit")
    p.add_argument("--out")

    p = sub.add_parser("recipe", help="run a shipped recipe")
    p.add_argument("name", nargs="?", help="recipe name; omit to list")
    p.add_argument("--out")

    p = sub.add_parser("rerun", help="re-execute a run from its manifest")
    p.add_argument("manifest", help="manifest.json or the run directory containing it")
    p.add_argument("--out", required=True)
    return ap


def _synth_args(ns) -> dict:
    flags = vars(ns)
    cfg = _load_json(ns.config)
    adam = dict(cfg.pop("adam", {}) or {})
    adam = _merge(adam, {v: flags[k] for k, v in ADAM_FLAGS.items()})
    cfg = _merge(cfg, {v: flags[k] for k, v in CONFIG_FLAGS.items()})
    if adam:
        cfg["adam"] = adam
    a = {"x0": ns.x0, "stack": ns.stack, "config": cfg, "bits": ns.bits}
    if ns.xn:
        a["xn"] = ns.xn
    if ns.kind:
        a["transform"] = {k: flags[k] for k in ("kind", "dx", "dy", "deg", "scale", "center", "boundary",
                                                 "interpolation") if flags[k] is not None}
    if ns.margin:
        a["margin"] = ns.margin
    return a


def dispatch(ns) -> int:
    c = ns.command
    if c == "transform":
        if not ns.kind:
            raise InputError("--kind is required")
        a = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose", "out") and v is not None}
        return run_transform(a, make_run_dir(ns.out, "transform"))
    if c == "synth":
        return run_synth(_synth_args(ns), make_run_dir(ns.out, "synth"))
    if c == "slice":
        a = {"run": ns.run, "axis": ns.axis, "index": ns.index, "bits": ns.bits}
        return run_slice(a, make_run_dir(ns.out, "slice") if ns.out else Path(ns.run))
    if c == "rf":
        a = {"stack": ns.stack, "shape": ns.shape, "location": ns.location, "n_noise": ns.n_noise, "seed": ns.seed}
        return run_rf(a, make_run_dir(ns.out, "rf"))
    if c == "deviation":
        return run_deviation({"run": ns.run, "stack": ns.stack}, make_run_dir(ns.out, "deviation") if ns.out
                             else Path(ns.run))
    if c == "compare":
        return run_compare({"path": ns.path, "reference": ns.reference}, make_run_dir(ns.out, "compare"))
    if c == "check":
        return run_check({"scope": ns.scope, "runs": ns.runs}, make_run_dir(ns.out, "check") if ns.out else None)
    if c == "recipe":
        if not ns.name:
            for name, r in RECIPES.items():
                print(f"{name:22s} {r['command']}")
            return EXIT_OK
        if ns.name not in RECIPES:
            raise InputError(f"unknown recipe {ns.name!r}; choose from {', '.join(RECIPES)}")
        r = RECIPES[ns.name]
        return execute(r["command"], r["args"], make_run_dir(ns.out, ns.name))
    if c == "rerun":
        return rerun(Path(ns.manifest), Path(ns.out))
    raise InputError(f"unknown command {c!r}")


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return dispatch(ns)
    except (InputError, ConfigurationError, json.JSONDecodeError, KeyError, TypeError) as err:
        print(f"repgeo: error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
