"""Distance between a deterministic flow and its small-noise perturbations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analysis import DEFAULT_CHUNK, SlopeReport, _sup_error, run_chunks, slope_report
from .models import SodeModel
from .rng import sample_brownian_batch
from .schemes import SchemeKind, integrate

Array = np.ndarray


@dataclass
class SmallNoiseReport:
    epsilons: Array
    errors: Array
    ci_low: Array
    ci_high: Array
    fitted_slope: float
    slope_ci: tuple
    coupling_constant: float
    r: float
    paths: int
    master_seed: int

    def to_csv(self) -> str:
        return SlopeReport(self.epsilons, self.errors, self.ci_low, self.ci_high, self.fitted_slope,
                           self.slope_ci, self.r, self.paths, self.master_seed).to_csv("eps")


def small_noise_experiment(model: SodeModel, epsilons: Sequence[float], level: int = 10, paths: int = 500,
                           r: float = 2.0, seed: int = 0, T: float = 1.0, x0=None,
                           kind=SchemeKind.STOPPED_TAMED_EM, chunk: int = DEFAULT_CHUNK,
                           threads: int = 1) -> SmallNoiseReport:
    """``sup_n |X_n - Y^eps_n|_{L^r}`` where ``X`` solves the noise-free equation.

    Every ``Y^eps`` on a given path uses the same Brownian increments. Models
    with an exact solution use it for both ``X`` and ``Y^eps``; otherwise both
    come from the same scheme so its bias cancels.
    """
    eps = [float(e) for e in epsilons]
    if any(e < 0 for e in eps):
        raise ValueError("noise scales must be non-negative")
    if x0 is None:
        raise ValueError("x0 is required")
    x0 = np.asarray(x0, dtype=float)
    exact = model.exact_solution is not None
    deterministic = model.deterministic()

    def solve(m: SodeModel, grid):
        if exact:
            return m.exact(x0, grid)
        return integrate(kind, m, x0, grid.partition(), grid).states

    def work(idx):
        g = sample_brownian_batch(seed, idx, model.m, level, T)
        base = solve(deterministic, g)
        paths_eps = [base if e == 0 else solve(model.scale_noise(e), g) for e in eps]
        sups = np.stack([_sup_error(base, y) for y in paths_eps], axis=-1)
        order = np.argsort(eps)
        lip = 0.0
        for a, b in zip(order[:-1], order[1:]):
            gap = eps[b] - eps[a]
            if gap > 0:
                lip = max(lip, float(np.max(_sup_error(paths_eps[a], paths_eps[b]))) / gap)
        return sups, lip

    parts = run_chunks(work, paths, chunk, threads)
    sups = np.concatenate([p[0] for p in parts], axis=0)
    lip = max(p[1] for p in parts)
    rep = slope_report(eps, sups, r, seed, tag="bootstrap-smallnoise")
    return SmallNoiseReport(rep.scales, rep.errors, rep.ci_low, rep.ci_high, rep.slope, rep.slope_ci,
                            lip, r, rep.paths, seed)
