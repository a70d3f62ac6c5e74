"""Reproducible experiment instances shared by the CLI sweep and the test suite."""
from __future__ import annotations

import numpy as np

from .action import energy_profile, quadrature_min_distance, straight_path
from .core import MassSystem, pairwise_distances
from .minimize import SolveOptions, interior_collision_margin, minimize_free_time


def random_endpoints(seed: int, n_bodies: int, dim: int = 2, box: float = 2.0,
                     min_sep: float = 1.0, min_pass: float = 0.5):
    """Random masses and endpoint configurations.

    Endpoints keep every pair at least ``min_sep`` apart and the straight
    segment between them at least ``min_pass`` apart, so the minimizer does
    not start next to a near-collision.
    """
    rng = np.random.default_rng(seed)
    while True:
        x = rng.uniform(-box, box, (n_bodies, dim))
        if n_bodies > 1 and pairwise_distances(x).min() < min_sep:
            continue
        x_end = x + rng.standard_normal((n_bodies, dim))
        if n_bodies > 1 and quadrature_min_distance(straight_path(x, x_end, 1.0, 64)) < min_pass:
            continue
        masses = tuple(rng.uniform(0.5, 2.0, n_bodies))
        return MassSystem(masses, dim), x, x_end


def energy_case(seed: int, n_bodies: int, h: float, segments=(64, 256), dim: int = 2) -> dict:
    """Free-time solve of one random instance at several resolutions.

    Returns plain values: for each resolution the max |E - h| over segment
    midpoints, convergence, collision margin and floor, duration and value.
    """
    sys, x, x_end = random_endpoints(seed, n_bodies, dim)
    row = {"seed": seed, "n_bodies": n_bodies, "h": h}
    for seg in segments:
        res = minimize_free_time(sys, x, x_end, h, SolveOptions(segments=seg, seed=seed))
        e = energy_profile(sys, res.path)[:, 1]
        row[f"energy_err_{seg}"] = float(np.max(np.abs(e - h)))
        row[f"converged_{seg}"] = bool(res.converged)
        row[f"margin_{seg}"] = float(interior_collision_margin(res))
        row[f"floor_{seg}"] = float(res.collision_floor)
        row[f"tau_{seg}"] = float(res.tau)
        row[f"value_{seg}"] = float(res.value)
    return row
