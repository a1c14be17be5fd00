"""Real-coded GA operators and the coarse (distance-only) evolution phase."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import EmptySetError
from .features import PointSet
from .similarity import FitnessVector, batch_median_distance
from .transform import Bounds, Transform

log = logging.getLogger(__name__)


@dataclass
class GAConfig:
    population_size: int = 150
    tournament_size: int = 3
    elitism_count: int = 2
    crossover_rate: float = 0.9
    blend_alpha: float = 0.3
    mutation_rate: float = 0.2
    mutation_sigma_frac: float = 0.1
    stall_generations: int = 30
    rel_improvement_eps: float = 1e-4
    phase1_dist_target: float = 0.5
    max_generations: int = 500
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("population_size", "tournament_size", "stall_generations", "max_generations"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive count")
        if not 0 < self.elitism_count < self.population_size:
            raise ValueError("need 0 < elitism_count < population_size")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.blend_alpha < 0 or self.mutation_sigma_frac < 0:
            raise ValueError("blend_alpha and mutation_sigma_frac must be non-negative")
        if self.rel_improvement_eps < 0 or self.phase1_dist_target < 0:
            raise ValueError("thresholds must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GAConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown GA config keys: {sorted(unknown)}")
        base = cls()
        kw = {}
        for k, v in d.items():
            kw[k] = type(getattr(base, k))(v)
        return replace(base, **kw)

    @classmethod
    def load(cls, path) -> "GAConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass
class Individual:
    genes: Transform
    fitness: FitnessVector = field(default_factory=FitnessVector.invalid)
    age: int = 0


@dataclass
class Population:
    individuals: list
    generation: int = 0
    best_history: list = field(default_factory=list)
    stop_reason: str = ""

    def __len__(self):
        return len(self.individuals)

    def best(self) -> Individual:
        return min(self.individuals, key=distance_key)

    def gene_matrix(self) -> np.ndarray:
        return np.array([ind.genes.to_array() for ind in self.individuals])


def distance_key(ind: Individual):
    """Sort key for the coarse phase: valid before invalid, then median distance."""
    f = ind.fitness
    return (0, f.median_dist) if f.valid else (1, math.inf)


def init_population(cfg: GAConfig, bounds: Bounds, rng: np.random.Generator | None = None) -> Population:
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    genes = rng.uniform(bounds.lo_array, bounds.hi_array, size=(cfg.population_size, 6))
    genes = bounds.clamp(genes)
    return Population([Individual(Transform.from_array(g)) for g in genes], generation=0)


def tournament_select(pop: Population, rng: np.random.Generator, tournament_size: int = 3,
                      key=distance_key) -> Individual:
    """Best of ``tournament_size`` uniform draws (with replacement)."""
    n = len(pop.individuals)
    picks = rng.integers(0, n, size=tournament_size)
    best = min(picks, key=lambda i: (key(pop.individuals[i]), i))
    return pop.individuals[best]


def crossover_blend(a: Individual, b: Individual, alpha: float, rng: np.random.Generator,
                    bounds: Bounds) -> tuple:
    """BLX-alpha: each child gene uniform on the parents' interval widened by alpha."""
    ga, gb = a.genes.to_array(), b.genes.to_array()
    lo = np.minimum(ga, gb)
    hi = np.maximum(ga, gb)
    ext = alpha * (hi - lo)
    u = rng.random((2, 6))
    kids = (lo - ext) + u * (hi - lo + 2 * ext)
    kids = bounds.clamp(kids)
    return Individual(Transform.from_array(kids[0])), Individual(Transform.from_array(kids[1]))


def mutate(ind: Individual, cfg: GAConfig, rng: np.random.Generator, bounds: Bounds) -> Individual:
    """Per-gene Gaussian perturbation with probability ``cfg.mutation_rate``."""
    g = ind.genes.to_array()
    hit = rng.random(6) < cfg.mutation_rate
    noise = rng.standard_normal(6) * (cfg.mutation_sigma_frac * bounds.span)
    if not hit.any():
        return ind
    g = bounds.clamp(np.where(hit, g + noise, g))
    return Individual(Transform.from_array(g))


def breed(pop: Population, cfg: GAConfig, bounds: Bounds, rng: np.random.Generator,
          count: int, key=distance_key) -> list:
    """Produce ``count`` offspring by tournament, blend crossover and mutation."""
    kids = []
    while len(kids) < count:
        a = tournament_select(pop, rng, cfg.tournament_size, key)
        b = tournament_select(pop, rng, cfg.tournament_size, key)
        if rng.random() < cfg.crossover_rate:
            c1, c2 = crossover_blend(a, b, cfg.blend_alpha, rng, bounds)
        else:
            c1, c2 = Individual(a.genes), Individual(b.genes)
        kids.append(mutate(c1, cfg, rng, bounds))
        if len(kids) < count:
            kids.append(mutate(c2, cfg, rng, bounds))
    return kids


def parallel_map_chunks(fn, genes: np.ndarray, jobs: int) -> np.ndarray:
    """Evaluate ``fn`` over row chunks of ``genes``; results keep row order."""
    if jobs <= 1 or len(genes) < 2 * jobs:
        return fn(genes)
    chunks = np.array_split(genes, jobs)
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        parts = list(ex.map(fn, chunks))
    return np.concatenate(parts)


class DistanceEvaluator:
    """Median-distance fitness for the coarse phase (``ncc`` left unset)."""

    def __init__(self, ref_pts: PointSet, sensed_pts: PointSet, center, jobs: int = 1):
        if len(ref_pts) == 0 or len(sensed_pts) == 0:
            raise EmptySetError("feature point sets must be non-empty")
        if len(ref_pts) < 3 or len(sensed_pts) < 3:
            raise ValueError("need at least 3 feature points per image")
        self.q = np.ascontiguousarray(ref_pts.points)
        self.p = np.ascontiguousarray(sensed_pts.points)
        self.center = center
        self.jobs = jobs

    def distances(self, genes: np.ndarray) -> np.ndarray:
        fn = lambda g: batch_median_distance(g, self.p, self.q, self.center)
        return parallel_map_chunks(fn, np.atleast_2d(genes), self.jobs)

    def __call__(self, individuals: list) -> None:
        if not individuals:
            return
        genes = np.array([ind.genes.to_array() for ind in individuals])
        for ind, d in zip(individuals, self.distances(genes)):
            ind.fitness = FitnessVector(float(d), math.nan, True) if np.isfinite(d) else FitnessVector.invalid()


def stalled(history: list, window: int, eps: float, minimize: bool = True) -> bool:
    """True when the best value moved by less than ``eps`` (relative) over ``window``."""
    if len(history) <= window:
        return False
    old, new = history[-1 - window], history[-1]
    gain = (old - new) if minimize else (new - old)
    scale = max(abs(old), 1e-12)
    return gain / scale < eps


def run_phase1(ref_pts: PointSet, sensed_pts: PointSet, cfg: GAConfig, bounds: Bounds,
               center=(0.0, 0.0), rng: np.random.Generator | None = None,
               initial: list | None = None, jobs: int = 1) -> Population:
    """Evolve the population on median feature distance alone.

    Stops when the best distance drops below ``cfg.phase1_dist_target``, when
    it improved by less than ``rel_improvement_eps`` (relative) over the last
    ``stall_generations`` generations, or after ``max_generations``.
    ``initial`` replaces the first individuals of the random start population
    (used to plant known transforms).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    evaluate = DistanceEvaluator(ref_pts, sensed_pts, center, jobs)
    pop = init_population(cfg, bounds, rng)
    if initial:
        for i, t in enumerate(initial[: cfg.population_size]):
            pop.individuals[i] = Individual(t)
    evaluate(pop.individuals)
    pop.best_history.append(pop.best().fitness.median_dist)

    n = cfg.population_size
    while True:
        best = pop.best_history[-1]
        if best < cfg.phase1_dist_target:
            reason = "target"
            break
        if stalled(pop.best_history, cfg.stall_generations, cfg.rel_improvement_eps):
            reason = "stall"
            break
        if pop.generation >= cfg.max_generations:
            reason = "max_generations"
            break
        ranked = sorted(range(n), key=lambda i: (distance_key(pop.individuals[i]), i))
        elites = []
        for i in ranked[: cfg.elitism_count]:
            e = pop.individuals[i]
            elites.append(Individual(e.genes, e.fitness, e.age + 1))
        kids = breed(pop, cfg, bounds, rng, n - len(elites))
        evaluate(kids)
        pop = Population(elites + kids, pop.generation + 1, pop.best_history)
        pop.best_history.append(pop.best().fitness.median_dist)
    log.info("phase 1 stopped after %d generations (%s), best median distance %.4f",
             pop.generation, reason, pop.best_history[-1])
    pop.stop_reason = reason
    return pop
