"""Command line front end: ``gareg register | synth | eval | features``.

Exit codes: 0 success, 1 usage or I/O error, 2 algorithmic failure
(insufficient features, no valid registration, RMSE above threshold).

Option precedence: command-line flags override values from ``--config``,
which override built-in defaults. Colour inputs are converted to grey with
luma weights 0.299 R + 0.587 G + 0.114 B. Set ``REG_LOG`` (DEBUG, INFO,
WARNING, ...) for log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .errors import (
    ImageFileError,
    InsufficientFeaturesError,
    PointFileError,
    RegistrationError,
    RegistrationFailedError,
)
from .evolver import GAConfig
from .features import PointSet, load_points, save_points
from .harness import (
    DEFAULT_RMSE_THRESHOLD,
    FULLY_AUTOMATIC,
    SEMI_AUTOMATIC,
    DetectorConfig,
    build_cases,
    default_manifest,
    extract_features,
    fmt,
    load_manifest,
    make_synthetic,
    resolve_image,
    run_registration,
    run_suite,
    sample_case,
)
from .imaging import checkerboard_overlay, load_image, save_image, warp_image
from .pareto import write_front_csv
from .transform import GENE_NAMES, Bounds, Transform

log = logging.getLogger("gareg")

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2
MODE_ALIASES = {"semi": SEMI_AUTOMATIC, "semi_automatic": SEMI_AUTOMATIC, "semi-automatic": SEMI_AUTOMATIC,
                "fully": FULLY_AUTOMATIC, "auto": FULLY_AUTOMATIC, "fully_automatic": FULLY_AUTOMATIC,
                "fully-automatic": FULLY_AUTOMATIC}


class UsageError(Exception):
    pass


def _mode(value: str) -> str:
    try:
        return MODE_ALIASES[value.lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(f"unknown mode {value!r}") from None


def _bounds_override(value: str):
    try:
        gene, rng = value.split("=", 1)
        lo, hi = (float(v) for v in rng.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected GENE=LO:HI, got {value!r}") from None
    if gene not in GENE_NAMES:
        raise argparse.ArgumentTypeError(f"unknown gene {gene!r}; choose from {', '.join(GENE_NAMES)}")
    return gene, lo, hi


def _add_common(p: argparse.ArgumentParser, ga: bool = True):
    p.add_argument("--config", type=Path, help="JSON file with 'ga', 'detector', 'bounds' and 'rmse_threshold' sections")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    p.add_argument("--seed", type=int, help="GA random seed")
    if ga:
        p.add_argument("--jobs", type=int, default=None, help="parallel workers (default 1, deterministic)")
        p.add_argument("--rmse-threshold", type=float, help=f"success threshold in px (default {DEFAULT_RMSE_THRESHOLD})")
        p.add_argument("--bounds", type=_bounds_override, action="append", default=[], metavar="GENE=LO:HI",
                       help="override one gene interval, e.g. --bounds theta=-0.5:0.5 (repeatable)")
        g = p.add_argument_group("GA parameters")
        for f in fields(GAConfig):
            if f.name == "seed":
                continue
            g.add_argument("--" + f.name.replace("_", "-"), type=type(getattr(GAConfig(), f.name)),
                           dest="ga_" + f.name, default=None)
    d = p.add_argument_group("corner detector")
    d.add_argument("--max-points", type=int, dest="det_max_points")
    d.add_argument("--min-separation", type=float, dest="det_min_separation")
    d.add_argument("--sigma", type=float, dest="det_sigma", help="Gaussian smoothing scale (default 1.0)")
    d.add_argument("--harris-k", type=float, dest="det_k", help="corner response k (default 0.04)")
    d.add_argument("--rel-threshold", type=float, dest="det_rel_threshold")
    d.add_argument("--nodata", type=float, default=None,
                   help="intensity marking missing pixels (e.g. 0 for synthesized sensed images); "
                        "corners next to such pixels are ignored")


def _load_config(args) -> dict:
    if not args.config:
        return {}
    try:
        return json.loads(args.config.read_text())
    except FileNotFoundError:
        raise UsageError(f"{args.config}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{args.config}: invalid JSON ({exc})") from None


def _ga_config(args, conf: dict) -> GAConfig:
    cfg = GAConfig.from_dict(conf.get("ga", {}))
    over = {f.name: getattr(args, "ga_" + f.name) for f in fields(GAConfig)
            if f.name != "seed" and getattr(args, "ga_" + f.name, None) is not None}
    if args.seed is not None:
        over["seed"] = args.seed
    return replace(cfg, **over)


def _detector(args, conf: dict) -> DetectorConfig:
    det = DetectorConfig(**conf.get("detector", {}))
    over = {f.name: getattr(args, "det_" + f.name) for f in fields(DetectorConfig)
            if getattr(args, "det_" + f.name, None) is not None}
    return replace(det, **over)


def _bounds(args, conf: dict, width: int, height: int) -> Bounds:
    b = Bounds.from_dict(conf["bounds"]) if "bounds" in conf else Bounds.default(width, height)
    for gene, lo, hi in getattr(args, "bounds", []):
        b = b.with_override(gene, lo, hi)
    return b


def _setting(args, conf: dict, name: str, default):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return conf.get(name, default)


def _nodata_mask(img, value):
    if value is None:
        return None
    return img.data != value


def cmd_register(args) -> int:
    conf = _load_config(args)
    mode = args.mode
    if mode == SEMI_AUTOMATIC and (args.ref_points is None or args.sensed_points is None):
        raise UsageError("semi-automatic mode requires --ref-points and --sensed-points")
    if (args.ref_control is None) != (args.sensed_control is None):
        raise UsageError("--ref-control and --sensed-control must be given together")
    ref = load_image(args.ref)
    sensed = load_image(args.sensed)
    cfg = _ga_config(args, conf)
    ref_pts = load_points(args.ref_points) if args.ref_points else None
    sensed_pts = load_points(args.sensed_points) if args.sensed_points else None
    cref = load_points(args.ref_control) if args.ref_control else None
    csen = load_points(args.sensed_control) if args.sensed_control else None
    threshold = _setting(args, conf, "rmse_threshold", DEFAULT_RMSE_THRESHOLD)
    keep = {}
    report = run_registration(
        ref, sensed, cfg, _bounds(args, conf, ref.width, ref.height), mode,
        ref_pts=ref_pts, sensed_pts=sensed_pts, control_ref=cref, control_sensed=csen,
        sensed_mask=_nodata_mask(sensed, args.nodata), ref_mask=_nodata_mask(ref, args.nodata),
        detector=_detector(args, conf), rmse_threshold=threshold,
        jobs=_setting(args, conf, "jobs", 1), case_name=Path(args.sensed).stem, keep=keep,
    )
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    warped = warp_image(sensed, report.final_transform, ref.width, ref.height)
    ext = args.format
    save_image(warped.image, out / f"warped.{ext}")
    save_image(checkerboard_overlay(ref, warped.image), out / f"overlay.{ext}")
    write_front_csv(keep["phase2"], out / "front.csv")
    if mode == FULLY_AUTOMATIC:
        save_points(keep["ref_pts"], out / "ref_features.csv")
        save_points(keep["sensed_pts"], out / "sensed_features.csv")
    print(_summary(report))
    if report.success is False:
        return EXIT_FAILED
    return EXIT_OK


def _summary(report) -> str:
    t = report.final_transform
    genes = " ".join(f"{n}={getattr(t, n):.6g}" for n in GENE_NAMES)
    rm = "n/a" if report.rmse is None else f"{report.rmse:.4f}"
    return f"transform {genes}\nrmse {rm} ncc {report.ncc:.6f} success {report.success}"


def _parse_transform(args, ref, rng) -> Transform:
    if args.transform and args.transform != "random":
        src = args.transform
        text = Path(src).read_text() if Path(src).is_file() else src
        try:
            return Transform.from_dict(json.loads(text))
        except (json.JSONDecodeError, ValueError) as exc:
            raise UsageError(f"cannot parse transform {src!r}: {exc}") from None
    return None


def cmd_synth(args) -> int:
    conf = _load_config(args)
    try:
        ref = resolve_image(args.ref, args.size)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    bounds = _bounds(args, conf, ref.width, ref.height)
    t = _parse_transform(args, ref, rng)
    if t is None:
        case = sample_case(ref, bounds, rng, args.noise, args.grid, name="synthetic")
    else:
        case = make_synthetic(ref, t, args.noise, args.grid, seed, name="synthetic")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    ext = args.format
    save_image(case.reference, out / f"reference.{ext}")
    save_image(case.sensed, out / f"sensed.{ext}")
    (out / "ground_truth.json").write_text(json.dumps(fmt(case.ground_truth.to_dict()), indent=2) + "\n")
    save_points(case.control_ref, out / "control_ref.csv")
    save_points(case.control_sensed, out / "control_sensed.csv")
    print(f"wrote synthetic case to {out} (valid fraction {case.sensed_mask.mean():.3f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    conf = _load_config(args)
    if args.manifest:
        try:
            manifest = load_manifest(args.manifest)
        except FileNotFoundError:
            raise UsageError(f"{args.manifest}: no such manifest") from None
        base = args.manifest.parent
    else:
        manifest = default_manifest(n_seeds=args.n_seeds or 20, photo=args.photo)
        base = Path.cwd()
    if args.n_seeds:
        for c in manifest["cases"]:
            c["seeds"] = list(range(args.n_seeds))
    cases, seeds, bounds = build_cases(manifest, base)
    if conf.get("bounds") or args.bounds:
        ref = cases[0].reference
        bounds = _bounds(args, conf, ref.width, ref.height)
    cfg = _ga_config(args, conf)
    threshold = _setting(args, conf, "rmse_threshold", DEFAULT_RMSE_THRESHOLD)

    def progress(r):
        log.info("%s seed %d rmse %.3f success %s", r.case, r.seed, r.rmse if r.rmse is not None else float("nan"), r.success)

    result = run_suite(cases, seeds, cfg, bounds, args.mode, jobs=_setting(args, conf, "jobs", 1),
                       progress=progress, detector=_detector(args, conf), rmse_threshold=threshold)
    result.write(args.out)
    print("image,avg_rmse,sigma_rmse")
    for row in result.table():
        print(f"{row['image']},{row['avg_rmse']:.9g},{row['sigma_rmse']:.9g}")
    print(f"success_rate {result.success_rate:.9g}")
    return EXIT_OK


def cmd_features(args) -> int:
    conf = _load_config(args)
    img = load_image(args.image)
    pts = extract_features(img, _detector(args, conf), _nodata_mask(img, args.nodata))
    args.out.mkdir(parents=True, exist_ok=True)
    save_points(pts, args.out / "features.csv")
    print(f"{len(pts)} corners written to {args.out / 'features.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gareg", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("register", help="register a sensed image onto a reference image")
    r.add_argument("--ref", type=Path, required=True)
    r.add_argument("--sensed", type=Path, required=True)
    r.add_argument("--mode", type=_mode, default=FULLY_AUTOMATIC,
                   help="semi_automatic (point files) or fully_automatic (corner detector)")
    r.add_argument("--ref-points", type=Path)
    r.add_argument("--sensed-points", type=Path)
    r.add_argument("--ref-control", type=Path, help="reference control points (CSV, paired by line)")
    r.add_argument("--sensed-control", type=Path, help="sensed control points (CSV, paired by line)")
    r.add_argument("--format", choices=("pgm", "png"), default="pgm")
    _add_common(r)
    r.set_defaults(func=cmd_register)

    s = sub.add_parser("synth", help="make a warped, noisy sensed image with known ground truth")
    s.add_argument("--ref", required=True, help="image path or procedural:checker / procedural:shapes")
    s.add_argument("--transform", help="'random' (default), a JSON file or an inline JSON object")
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma in grey levels")
    s.add_argument("--grid", type=int, default=5, help="control grid size per axis")
    s.add_argument("--size", type=int, default=256, help="size of procedural images")
    s.add_argument("--format", choices=("pgm", "png"), default="pgm")
    s.add_argument("--bounds", type=_bounds_override, action="append", default=[], metavar="GENE=LO:HI")
    s.add_argument("--config", type=Path)
    s.add_argument("--out", type=Path, default=Path("out"))
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="run a suite manifest (default: built-in synthetic suite)")
    e.add_argument("--manifest", type=Path)
    e.add_argument("--mode", type=_mode, default=FULLY_AUTOMATIC)
    e.add_argument("--n-seeds", type=int, help="override the number of seeds per case")
    e.add_argument("--photo", help="user photo used as second base image of the default suite")
    _add_common(e)
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("features", help="detect corners and write them as CSV")
    f.add_argument("--image", type=Path, required=True)
    _add_common(f, ga=False)
    f.set_defaults(func=cmd_features)
    return p


def main(argv=None) -> int:
    level = os.environ.get("REG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageFileError, PointFileError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InsufficientFeaturesError as exc:
        print(f"insufficient features: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except RegistrationFailedError as exc:
        print(f"registration failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except RegistrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
