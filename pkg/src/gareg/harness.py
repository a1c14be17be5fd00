"""Synthetic cases with known ground truth, end-to-end runs and suite statistics."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import CaseRejectedError
from .evolver import GAConfig, run_phase1
from .features import AUTOMATIC, PointSet, detect_corners, load_points
from .imaging import Image, load_image, warp_matrix
from .pareto import run_phase2, select_final
from .similarity import DEFAULT_MIN_OVERLAP, median_distance, ncc, rmse
from .transform import Bounds, Transform, apply_matrix, compose_matrix, invert_matrix
from .imaging import warp_image

log = logging.getLogger(__name__)

SEMI_AUTOMATIC = "semi_automatic"
FULLY_AUTOMATIC = "fully_automatic"
MODES = (SEMI_AUTOMATIC, FULLY_AUTOMATIC)
DEFAULT_RMSE_THRESHOLD = 1.5
PROCEDURAL = ("checker", "shapes")


def fmt(v):
    """Round floats to 9 significant digits so serialized reports diff cleanly."""
    if isinstance(v, float):
        if not math.isfinite(v):
            return None
        return float(f"{v:.9g}")
    if isinstance(v, dict):
        return {k: fmt(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [fmt(x) for x in v]
    return v


# ---------------------------------------------------------------------------
# procedural base images


def checker_image(size: int = 256, seed: int = 1) -> Image:
    """Irregular checkerboard: random tile widths and grey levels plus smooth texture.

    Tile widths vary between 10 and 30 px so corner positions do not repeat
    with a fixed period.
    """
    rng = np.random.default_rng(seed)

    def cuts():
        c = [0]
        while c[-1] < size:
            c.append(c[-1] + int(rng.integers(10, 30)))
        return c

    xs, ys = cuts(), cuts()
    img = np.zeros((size, size))
    for i in range(len(ys) - 1):
        for j in range(len(xs) - 1):
            img[ys[i]:ys[i + 1], xs[j]:xs[j + 1]] = rng.uniform(40, 215)
    yy, xx = np.mgrid[0:size, 0:size]
    texture = 15 * np.sin(xx / 17.0 + 0.3) * np.cos(yy / 23.0)
    texture += 60 * ndimage.gaussian_filter(rng.normal(0, 1, (size, size)), 4)
    img = np.clip(img + texture, 30, 225)
    return Image(ndimage.gaussian_filter(img, 0.7))


def shapes_image(size: int = 256, seed: int = 2, count: int = 60) -> Image:
    """Random rectangles, ellipses and triangles over a smooth background."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    img = 128 + 40 * np.sin(xx / 31.0) * np.cos(yy / 19.0 + 1)
    for _ in range(count):
        cx, cy = rng.uniform(0, size, 2)
        a, b = rng.uniform(6, 30, 2)
        th = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
        v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
        kind = rng.integers(0, 3)
        if kind == 0:
            inside = (abs(u) < a) & (abs(v) < b)
        elif kind == 1:
            inside = (u / a) ** 2 + (v / b) ** 2 < 1
        else:
            inside = (v > -b) & (v < b - 2 * b * abs(u) / a) & (abs(u) < a)
        img[inside] = rng.uniform(30, 225)
    return Image(ndimage.gaussian_filter(np.clip(img, 30, 225), 0.7))


def resolve_image(spec: str, size: int = 256) -> Image:
    """``procedural:checker`` / ``procedural:shapes`` or a path to an image file."""
    if spec.startswith("procedural:"):
        name = spec.split(":", 1)[1]
        if name == "checker":
            return checker_image(size)
        if name == "shapes":
            return shapes_image(size)
        raise ValueError(f"unknown procedural image {name!r}; choose from {PROCEDURAL}")
    return load_image(spec)


# ---------------------------------------------------------------------------
# synthetic cases


@dataclass
class SyntheticCase:
    """A registration problem with corresponding control points.

    ``ground_truth`` maps sensed coordinates onto reference coordinates about
    the sensed image centre; it is ``None`` for real pairs scored only by
    their control points.
    """

    reference: Image
    sensed: Image
    ground_truth: Transform | None
    control_ref: PointSet
    control_sensed: PointSet
    noise_sigma: float = 0.0
    sensed_mask: np.ndarray | None = None
    name: str = "case"


def control_grid(width: int, height: int, grid: int = 5) -> np.ndarray:
    xs = np.linspace(0, width - 1, grid + 2)[1:-1]
    ys = np.linspace(0, height - 1, grid + 2)[1:-1]
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def make_synthetic(reference: Image, t: Transform, noise_sigma: float = 0.0, grid: int = 5,
                   seed: int = 0, bounds: Bounds | None = None, min_valid: float = 0.5,
                   name: str = "case") -> SyntheticCase:
    """Build a sensed image whose registration onto ``reference`` is ``t``.

    Sensed pixel ``s`` takes the reference intensity at ``t(s)``; pixels with
    no reference data stay 0 and are excluded from the noise. Control points
    are a ``grid x grid`` interior lattice on the reference and their exact
    preimages under ``t``.
    """
    if grid < 2:
        raise ValueError("control grid must be at least 2x2")
    if bounds is not None and not bounds.contains(t, tol=1e-12):
        raise ValueError(f"{t} lies outside the search bounds")
    center = reference.center
    fwd = compose_matrix(t, center)
    warped = warp_matrix(reference, fwd, reference.width, reference.height)
    frac = warped.overlap_fraction
    if frac < min_valid:
        raise CaseRejectedError(f"only {frac:.1%} of the sensed frame has data (need {min_valid:.0%})")
    data = warped.image.data.copy()
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, noise_sigma, data.shape)
        data = np.where(warped.mask, np.clip(data + noise, 0, 255), 0.0)
    ref_grid = control_grid(reference.width, reference.height, grid)
    sensed_grid = apply_matrix(invert_matrix(fwd), ref_grid)
    return SyntheticCase(reference, Image(data), t, PointSet(ref_grid), PointSet(sensed_grid),
                         float(noise_sigma), warped.mask, name)


def sample_case(reference: Image, bounds: Bounds, rng: np.random.Generator, noise_sigma: float,
                grid: int = 5, name: str = "case", max_tries: int = 200) -> SyntheticCase:
    """Draw transforms uniformly within ``bounds`` until one keeps >= 50% data."""
    for _ in range(max_tries):
        t = Transform.from_array(rng.uniform(bounds.lo_array, bounds.hi_array))
        try:
            return make_synthetic(reference, t, noise_sigma, grid, int(rng.integers(2**31)),
                                  bounds, name=name)
        except CaseRejectedError:
            continue
    raise CaseRejectedError(f"no acceptable transform after {max_tries} draws")


# ---------------------------------------------------------------------------
# single runs


@dataclass
class RunReport:
    final_transform: Transform
    rmse: float | None
    ncc: float
    median_dist: float
    phase1_generations: int
    phase2_generations: int
    seed: int
    wall_time: float
    success: bool | None
    mode: str = FULLY_AUTOMATIC
    rmse_threshold: float = DEFAULT_RMSE_THRESHOLD
    n_ref_points: int = 0
    n_sensed_points: int = 0
    phase1_stop: str = ""
    phase2_stop: str = ""
    case: str = ""
    phase1_history: list = field(default_factory=list)
    phase2_history: list = field(default_factory=list)

    def to_dict(self, include_time: bool = True) -> dict:
        d = {
            "case": self.case,
            "mode": self.mode,
            "seed": self.seed,
            "final_transform": fmt(self.final_transform.to_dict()),
            "rmse": fmt(self.rmse) if self.rmse is not None else None,
            "rmse_threshold": fmt(float(self.rmse_threshold)),
            "success": self.success,
            "ncc": fmt(self.ncc),
            "median_dist": fmt(self.median_dist),
            "phase1_generations": self.phase1_generations,
            "phase2_generations": self.phase2_generations,
            "phase1_stop": self.phase1_stop,
            "phase2_stop": self.phase2_stop,
            "n_ref_points": self.n_ref_points,
            "n_sensed_points": self.n_sensed_points,
            "phase1_best_median_dist": fmt([float(v) for v in self.phase1_history]),
            "phase2_best_ncc": fmt([float(v) for v in self.phase2_history]),
        }
        if include_time:
            d["wall_time"] = fmt(self.wall_time)
        return d

    def to_json(self, include_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_time), indent=2) + "\n"


@dataclass
class DetectorConfig:
    max_points: int = 200
    min_separation: float = 8.0
    sigma: float = 1.0
    k: float = 0.04
    rel_threshold: float = 0.01


def extract_features(img: Image, det: DetectorConfig, mask=None) -> PointSet:
    return detect_corners(img, det.max_points, det.min_separation, det.sigma, det.k,
                          det.rel_threshold, mask=mask)


def run_registration(reference: Image, sensed: Image, cfg: GAConfig, bounds: Bounds | None = None,
                     mode: str = FULLY_AUTOMATIC, ref_pts: PointSet | None = None,
                     sensed_pts: PointSet | None = None, control_ref: PointSet | None = None,
                     control_sensed: PointSet | None = None, sensed_mask=None, ref_mask=None,
                     detector: DetectorConfig | None = None,
                     rmse_threshold: float = DEFAULT_RMSE_THRESHOLD, planted=None,
                     jobs: int = 1, min_overlap_frac: float = DEFAULT_MIN_OVERLAP,
                     case_name: str = "", keep=None) -> RunReport:
    """Coarse phase, Pareto refinement and final selection for one image pair.

    ``planted`` is a list of transforms injected into the initial population.
    When both control point sets are given the report carries their RMSE and
    the success flag; otherwise both are ``None``. ``keep`` (a dict) receives
    the intermediate populations when supplied.
    """
    t0 = time.perf_counter()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if bounds is None:
        bounds = Bounds.default(reference.width, reference.height)
    if mode == SEMI_AUTOMATIC:
        if ref_pts is None or sensed_pts is None:
            raise ValueError("semi-automatic mode needs point sets for both images")
    else:
        detector = detector or DetectorConfig()
        ref_pts = extract_features(reference, detector, ref_mask)
        sensed_pts = extract_features(sensed, detector, sensed_mask)
    center = sensed.center
    rng = np.random.default_rng(cfg.seed)
    pop1 = run_phase1(ref_pts, sensed_pts, cfg, bounds, center, rng=rng, initial=planted, jobs=jobs)
    ranked = run_phase2(pop1, reference, sensed, ref_pts, sensed_pts, cfg, bounds, center,
                        rng=rng, jobs=jobs, min_overlap_frac=min_overlap_frac,
                        ref_mask=ref_mask, sensed_mask=sensed_mask)
    best = select_final(ranked)
    if keep is not None:
        keep.update(phase1=pop1, phase2=ranked, ref_pts=ref_pts, sensed_pts=sensed_pts)
    err = success = None
    if control_ref is not None and control_sensed is not None:
        err = rmse(control_ref, control_sensed, best.genes, center)
        success = bool(err < rmse_threshold)
    return RunReport(
        final_transform=best.genes,
        rmse=err,
        ncc=best.fitness.ncc,
        median_dist=best.fitness.median_dist,
        phase1_generations=pop1.generation,
        phase2_generations=ranked.generation,
        seed=cfg.seed,
        wall_time=time.perf_counter() - t0,
        success=success,
        mode=mode,
        rmse_threshold=rmse_threshold,
        n_ref_points=len(ref_pts),
        n_sensed_points=len(sensed_pts),
        phase1_stop=pop1.stop_reason,
        phase2_stop=ranked.stop_reason,
        case=case_name,
        phase1_history=list(pop1.best_history),
        phase2_history=list(ranked.ncc_history),
    )


def truth_points(case: SyntheticCase, detector: DetectorConfig | None = None):
    """Noiseless feature sets related exactly by the ground truth.

    Reference corners whose preimage lands inside the sensed frame are mapped
    back through the ground truth; the sensed list is shuffled so no
    correspondence is implied by order.
    """
    detector = detector or DetectorConfig()
    q = extract_features(case.reference, detector)
    fwd = compose_matrix(case.ground_truth, case.sensed.center)
    pre = apply_matrix(invert_matrix(fwd), q.points)
    w, h = case.sensed.width, case.sensed.height
    inside = (pre[:, 0] >= 0) & (pre[:, 0] <= w - 1) & (pre[:, 1] >= 0) & (pre[:, 1] <= h - 1)
    pre = pre[inside]
    order = np.random.default_rng(len(pre)).permutation(len(pre))
    return q, PointSet(pre[order])


def register_case(case: SyntheticCase, cfg: GAConfig, bounds: Bounds | None = None,
                  mode: str = FULLY_AUTOMATIC, **kw) -> RunReport:
    if mode == SEMI_AUTOMATIC and "ref_pts" not in kw:
        ref_pts, sensed_pts = truth_points(case, kw.get("detector"))
        kw.update(ref_pts=ref_pts, sensed_pts=sensed_pts)
    return run_registration(case.reference, case.sensed, cfg, bounds, mode,
                            control_ref=case.control_ref, control_sensed=case.control_sensed,
                            sensed_mask=case.sensed_mask, case_name=case.name, **kw)


# ---------------------------------------------------------------------------
# suites


@dataclass
class SuiteResult:
    runs: list
    cases: list
    rmse_threshold: float = DEFAULT_RMSE_THRESHOLD

    @property
    def success_rate(self) -> float:
        flags = [r.success for r in self.runs if r.success is not None]
        return sum(flags) / len(flags) if flags else float("nan")

    def success_rate_where(self, pred) -> float:
        flags = [r.success for r, c in zip(self.runs, self._case_of_run()) if pred(c) and r.success is not None]
        return sum(flags) / len(flags) if flags else float("nan")

    def _case_of_run(self):
        by_name = {c["image"]: c for c in self.cases}
        return [by_name[r.case] for r in self.runs]

    def table(self) -> list:
        """Per-case rows of image, avg_rmse and sigma_rmse."""
        return [{"image": c["image"], "avg_rmse": c["avg_rmse"], "sigma_rmse": c["sigma_rmse"]}
                for c in self.cases]

    def to_dict(self) -> dict:
        return {
            "success_rate": fmt(self.success_rate),
            "rmse_threshold": fmt(float(self.rmse_threshold)),
            "n_runs": len(self.runs),
            "cases": [fmt(c) for c in self.cases],
        }

    def write(self, out_dir, include_time: bool = True) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        runs_dir = out / "runs"
        runs_dir.mkdir(exist_ok=True)
        for r in self.runs:
            (runs_dir / f"{r.case}_seed{r.seed}.json").write_text(r.to_json(include_time))
        with (out / "runs.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image", "seed", "rmse", "success", "ncc", "median_dist",
                        "phase1_generations", "phase2_generations"])
            for r in self.runs:
                w.writerow([r.case, r.seed, _num(r.rmse), r.success, _num(r.ncc), _num(r.median_dist),
                            r.phase1_generations, r.phase2_generations])
        with (out / "suite.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image", "avg_rmse", "sigma_rmse", "success_rate", "noise_sigma", "n_runs"])
            for c in self.cases:
                w.writerow([c["image"], _num(c["avg_rmse"]), _num(c["sigma_rmse"]),
                            _num(c["success_rate"]), _num(c["noise_sigma"]), c["n_runs"]])
            w.writerow([])
            w.writerow(["success_rate", _num(self.success_rate)])
        (out / "suite.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _num(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return f"{v:.9g}"


def aggregate(runs: list, noise_by_case: dict | None = None) -> list:
    """Per-case mean and population standard deviation of RMSE."""
    noise_by_case = noise_by_case or {}
    names = list(dict.fromkeys(r.case for r in runs))
    rows = []
    for name in names:
        errs = np.array([r.rmse for r in runs if r.case == name and r.rmse is not None], dtype=float)
        flags = [r.success for r in runs if r.case == name and r.success is not None]
        rows.append({
            "image": name,
            "avg_rmse": float(errs.mean()) if errs.size else float("nan"),
            "sigma_rmse": float(errs.std()) if errs.size else float("nan"),
            "success_rate": sum(flags) / len(flags) if flags else float("nan"),
            "noise_sigma": float(noise_by_case.get(name, 0.0)),
            "n_runs": int(errs.size),
        })
    return rows


def _run_one(args):
    case, seed, cfg, bounds, mode, kw = args
    return register_case(case, replace(cfg, seed=int(seed)), bounds, mode, **kw)


def run_suite(cases: list, seeds: list, cfg: GAConfig, bounds: Bounds | None = None,
              mode: str = FULLY_AUTOMATIC, jobs: int = 1, progress=None, **kw) -> SuiteResult:
    """Register every case under every seed and aggregate RMSE statistics.

    ``seeds`` is either one list shared by all cases or a list of lists, one
    per case. With ``jobs > 1`` runs are distributed over processes; results
    keep (case, seed) order.
    """
    if not cases or not seeds:
        raise ValueError("run_suite needs at least one case and one seed")
    per_case = seeds if isinstance(seeds[0], (list, tuple)) else [seeds] * len(cases)
    tasks = [(c, s, cfg, bounds, mode, kw) for c, ss in zip(cases, per_case) for s in ss]
    runs = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for r in ex.map(_run_one, tasks):
                runs.append(r)
                if progress:
                    progress(r)
    else:
        for t in tasks:
            r = _run_one(t)
            runs.append(r)
            if progress:
                progress(r)
    rows = aggregate(runs, {c.name: c.noise_sigma for c in cases})
    threshold = kw.get("rmse_threshold", DEFAULT_RMSE_THRESHOLD)
    return SuiteResult(runs, rows, threshold)


# ---------------------------------------------------------------------------
# manifests

DEFAULT_NOISE_LEVELS = (0.0, 5.0, 10.0)


def default_manifest(n_cases: int = 10, n_seeds: int = 20, size: int = 256,
                     photo: str | None = None, case_seed: int = 2024) -> dict:
    """Ten random-transform cases alternating over two base images.

    The second base image is ``photo`` when given, otherwise the procedural
    shapes image. Noise cycles through 0, 5 and 10 grey levels.
    """
    bases = ["procedural:checker", photo or "procedural:shapes"]
    cases = []
    for i in range(n_cases):
        cases.append({
            "name": f"case{i:02d}",
            "image": bases[i % 2],
            "transform": "random",
            "noise_sigma": DEFAULT_NOISE_LEVELS[i % len(DEFAULT_NOISE_LEVELS)],
            "seeds": list(range(n_seeds)),
        })
    return {"size": size, "case_seed": case_seed, "cases": cases}


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def build_cases(manifest: dict, base_dir=None) -> tuple:
    """Materialise manifest entries into (cases, seeds, bounds).

    Entries either name a base ``image`` (procedural or a file) plus a
    ``transform`` ("random" or a parameter object), or a real pair through
    ``reference``/``sensed`` image paths and ``control_ref``/``control_sensed``
    CSV files.
    """
    base_dir = Path(base_dir) if base_dir else Path.cwd()
    size = int(manifest.get("size", 256))
    rng = np.random.default_rng(int(manifest.get("case_seed", 0)))
    images = {}
    cases, seeds = [], []
    bounds = None
    for i, entry in enumerate(manifest["cases"]):
        name = entry.get("name", f"case{i:02d}")
        case_seeds = entry.get("seeds", manifest.get("seeds", list(range(20))))
        if "reference" in entry:
            ref = load_image(_rel(base_dir, entry["reference"]))
            sen = load_image(_rel(base_dir, entry["sensed"]))
            cref = load_points(_rel(base_dir, entry["control_ref"]))
            csen = load_points(_rel(base_dir, entry["control_sensed"]))
            cases.append(SyntheticCase(ref, sen, None, cref, csen, 0.0, None, name))
            seeds.append(case_seeds)
            continue
        spec = entry["image"]
        if spec not in images:
            img_spec = spec if spec.startswith("procedural:") else str(_rel(base_dir, spec))
            images[spec] = resolve_image(img_spec, size)
        ref = images[spec]
        b = Bounds.from_dict(manifest["bounds"]) if "bounds" in manifest else Bounds.default(ref.width, ref.height)
        bounds = bounds or b
        noise = float(entry.get("noise_sigma", 0.0))
        tr = entry.get("transform", "random")
        if tr == "random":
            case = sample_case(ref, b, rng, noise, name=name)
        else:
            case = make_synthetic(ref, Transform.from_dict(tr), noise, seed=int(rng.integers(2**31)),
                                  bounds=b, name=name)
        cases.append(case)
        seeds.append(case_seeds)
    return cases, seeds, bounds


def _rel(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p
