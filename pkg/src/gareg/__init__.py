"""Two-phase genetic algorithm for 2D affine image registration.

A coarse phase minimizes the median nearest-neighbour distance between
feature point sets; a refinement phase ranks solutions by Pareto dominance
over that distance and the normalized cross correlation of the images, and
returns the Pareto-optimal individual with the best correlation.
"""

from .errors import *  # noqa: F401,F403
from .evolver import GAConfig, Individual, Population, run_phase1
from .features import PointSet, detect_corners, load_points, save_points
from .harness import (
    RunReport,
    SyntheticCase,
    make_synthetic,
    register_case,
    run_registration,
    run_suite,
)
from .imaging import Image, MaskedImage, load_image, sample_bilinear, save_image, warp_image
from .pareto import RankedIndividual, dominates, nondominated_sort, run_phase2, select_final
from .similarity import FitnessVector, correspondences, median_distance, ncc, rmse
from .transform import Bounds, Transform, apply, compose_matrix, invert

__version__ = "0.1.0"
