"""Refinement phase: Pareto ranking over (median distance, NCC).

Non-dominated sorting and crowding distance follow NSGA-II. Survival keeps
the best ``population_size`` of parents plus offspring by (front, crowding),
so both objectives are elitist.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import RegistrationFailedError
from .evolver import GAConfig, Individual, Population, breed, parallel_map_chunks, stalled
from .features import PointSet
from .imaging import Image
from .similarity import DEFAULT_MIN_OVERLAP, FitnessVector, batch_median_distance
from .transform import GENE_NAMES, Bounds, matrices_from_genes

log = logging.getLogger(__name__)


@dataclass
class RankedIndividual:
    individual: Individual
    front: int
    crowding: float
    index: int = 0

    @property
    def fitness(self) -> FitnessVector:
        return self.individual.fitness


class RankedPopulation(list):
    """List of :class:`RankedIndividual` plus the run statistics of the phase."""

    generation: int = 0
    ncc_history: list
    stop_reason: str = ""

    def front(self, k: int = 0) -> list:
        return [r for r in self if r.front == k]


def dominates(a: FitnessVector, b: FitnessVector) -> bool:
    """Pareto dominance: lower median distance and higher NCC, one strictly."""
    if not a.valid:
        return False
    if not b.valid:
        return True
    no_worse = a.median_dist <= b.median_dist and a.ncc >= b.ncc
    better = a.median_dist < b.median_dist or a.ncc > b.ncc
    return no_worse and better


def dominance_matrix(fits: list) -> np.ndarray:
    """``D[i, j]`` is true when fitness ``i`` dominates fitness ``j``."""
    valid = np.array([f.valid for f in fits], dtype=bool)
    med = np.array([f.median_dist if f.valid else np.inf for f in fits])
    cor = np.array([f.ncc if f.valid else -np.inf for f in fits])
    m_i, m_j = med[:, None], med[None, :]
    c_i, c_j = cor[:, None], cor[None, :]
    both = valid[:, None] & valid[None, :]
    pareto = both & (m_i <= m_j) & (c_i >= c_j) & ((m_i < m_j) | (c_i > c_j))
    return pareto | (valid[:, None] & ~valid[None, :])


def crowding_distance(fits: list) -> np.ndarray:
    n = len(fits)
    out = np.zeros(n)
    if n == 0:
        return out
    if not all(f.valid for f in fits):
        return out
    if n <= 2:
        out[:] = np.inf
        return out
    objs = (np.array([f.median_dist for f in fits]), np.array([f.ncc for f in fits]))
    for vals in objs:
        order = np.lexsort((np.arange(n), vals))
        span = vals[order[-1]] - vals[order[0]]
        out[order[0]] = out[order[-1]] = np.inf
        if span > 0:
            gaps = (vals[order[2:]] - vals[order[:-2]]) / span
            out[order[1:-1]] += gaps
    return out


def nondominated_sort(pop: list) -> list:
    """Assign Pareto fronts and per-front crowding; output keeps input order."""
    inds = [p.individual if isinstance(p, RankedIndividual) else p for p in pop]
    n = len(inds)
    fits = [ind.fitness for ind in inds]
    dom = dominance_matrix(fits)
    front = np.full(n, -1, dtype=np.int64)
    remaining = np.ones(n, dtype=bool)
    # count of dominators still unassigned
    counts = dom.sum(axis=0)
    k = 0
    while remaining.any():
        current = remaining & (counts == 0)
        front[current] = k
        remaining &= ~current
        counts = counts - dom[current].sum(axis=0)
        k += 1
    crowd = np.zeros(n)
    for f in range(k):
        members = np.flatnonzero(front == f)
        crowd[members] = crowding_distance([fits[i] for i in members])
    return [RankedIndividual(ind, int(front[i]), float(crowd[i]), i) for i, ind in enumerate(inds)]


def _survivor_order(ranked: list) -> list:
    return sorted(range(len(ranked)), key=lambda i: (ranked[i].front, -ranked[i].crowding, i))


def select_final(ranked: list) -> Individual:
    """Front-0 member with the best NCC; ties by smaller distance, then index."""
    cands = [(i, r) for i, r in enumerate(ranked) if r.front == 0 and r.fitness.valid]
    if not cands:
        raise RegistrationFailedError("no valid Pareto-optimal individual")
    i, best = min(cands, key=lambda ir: (-ir[1].fitness.ncc, ir[1].fitness.median_dist, ir[0]))
    return best.individual


def best_front_ncc(ranked: list) -> float:
    vals = [r.fitness.ncc for r in ranked if r.front == 0 and r.fitness.valid]
    return max(vals) if vals else -math.inf


class JointEvaluator:
    """Both objectives: median feature distance and NCC of the warped sensed image."""

    def __init__(self, ref_img: Image, sensed_img: Image, ref_pts: PointSet, sensed_pts: PointSet,
                 center=None, min_overlap_frac: float = DEFAULT_MIN_OVERLAP, jobs: int = 1,
                 ref_mask=None, sensed_mask=None):
        self.ref = np.ascontiguousarray(ref_img.data)
        self.sensed = np.ascontiguousarray(sensed_img.data)
        # pixels without data (e.g. fill outside a warped frame) stay out of the NCC
        self.use_masks = ref_mask is not None or sensed_mask is not None
        self.ref_ok = np.ones(self.ref.shape, bool) if ref_mask is None else np.asarray(ref_mask, bool)
        smask = np.ones(self.sensed.shape, bool) if sensed_mask is None else sensed_mask
        self.cell_ok = _kernels.cell_valid(smask)
        if self.ref_ok.shape != self.ref.shape or self.cell_ok.shape != self.sensed.shape:
            raise ValueError("validity masks must match their images")
        self.q = np.ascontiguousarray(ref_pts.points)
        self.p = np.ascontiguousarray(sensed_pts.points)
        self.center = sensed_img.center if center is None else center
        self.min_overlap = min_overlap_frac
        self.jobs = jobs

    def _chunk(self, genes: np.ndarray) -> np.ndarray:
        mats = matrices_from_genes(genes, self.center)
        inv = _invert_stack(mats)
        med = batch_median_distance(genes, self.p, self.q, self.center)
        ncc, frac = _kernels.batch_warp_ncc(self.ref, self.sensed, inv, self.ref_ok, self.cell_ok,
                                            self.use_masks)
        return np.column_stack([med, ncc, frac])

    def __call__(self, individuals: list) -> None:
        if not individuals:
            return
        genes = np.array([ind.genes.to_array() for ind in individuals])
        res = parallel_map_chunks(self._chunk, genes, self.jobs)
        for ind, (med, ncc, frac) in zip(individuals, res):
            ok = np.isfinite(med) and np.isfinite(ncc) and frac >= self.min_overlap
            ind.fitness = FitnessVector(float(med), float(ncc), True) if ok else FitnessVector.invalid()


def _invert_stack(mats: np.ndarray) -> np.ndarray:
    a, b, c = mats[:, 0, 0], mats[:, 0, 1], mats[:, 0, 2]
    d, e, f = mats[:, 1, 0], mats[:, 1, 1], mats[:, 1, 2]
    det = a * e - b * d
    out = np.empty_like(mats)
    out[:, 0, 0], out[:, 0, 1] = e / det, -b / det
    out[:, 1, 0], out[:, 1, 1] = -d / det, a / det
    out[:, 0, 2] = -(out[:, 0, 0] * c + out[:, 0, 1] * f)
    out[:, 1, 2] = -(out[:, 1, 0] * c + out[:, 1, 1] * f)
    return out


def run_phase2(seed_pop: Population, ref_img: Image, sensed_img: Image, ref_pts: PointSet,
               sensed_pts: PointSet, cfg: GAConfig, bounds: Bounds, center=None,
               rng: np.random.Generator | None = None, jobs: int = 1,
               min_overlap_frac: float = DEFAULT_MIN_OVERLAP, ref_mask=None,
               sensed_mask=None) -> RankedPopulation:
    """Multi-objective refinement starting from the coarse-phase population.

    ``ref_mask`` and ``sensed_mask`` (true = real data) keep fill pixels out
    of the NCC objective.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed + 1)
    evaluate = JointEvaluator(ref_img, sensed_img, ref_pts, sensed_pts, center, min_overlap_frac, jobs,
                              ref_mask, sensed_mask)
    parents = [Individual(ind.genes, age=ind.age) for ind in seed_pop.individuals]
    evaluate(parents)
    ranked = nondominated_sort(parents)
    history = [best_front_ncc(ranked)]
    n = cfg.population_size
    generation = 0
    while True:
        if stalled(history, cfg.stall_generations, cfg.rel_improvement_eps, minimize=False):
            reason = "stall"
            break
        if generation >= cfg.max_generations:
            reason = "max_generations"
            break
        keys = {id(r.individual): (r.front, -r.crowding) for r in ranked}
        parent_pop = Population([r.individual for r in ranked], generation)
        kids = breed(parent_pop, cfg, bounds, rng, n, key=lambda ind: keys[id(ind)])
        evaluate(kids)
        for r in ranked:
            r.individual.age += 1
        combined = nondominated_sort([r.individual for r in ranked] + kids)
        keep = _survivor_order(combined)[:n]
        ranked = nondominated_sort([combined[i].individual for i in sorted(keep)])
        generation += 1
        history.append(best_front_ncc(ranked))
    log.info("phase 2 stopped after %d generations (%s), best front-0 ncc %.6f",
             generation, reason, history[-1])
    out = RankedPopulation(ranked)
    out.generation = generation
    out.ncc_history = history
    out.stop_reason = reason
    return out


def write_front_csv(ranked: list, path) -> Path:
    """Dump front 0 as rows of ``median_dist, ncc, <six genes>``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["median_dist", "ncc", *GENE_NAMES])
        for r in ranked:
            if r.front != 0:
                continue
            f = r.fitness
            w.writerow([f"{f.median_dist:.9g}", f"{f.ncc:.9g}",
                        *(f"{v:.9g}" for v in r.individual.genes.to_array())])
    return path
