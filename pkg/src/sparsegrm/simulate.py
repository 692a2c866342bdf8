"""Synthetic data generation and the end-to-end replication pipeline.

True parameters follow the sparse design: an exchangeable factor
correlation matrix, loadings drawn uniformly on [0.5, 2.0] and masked by
a binary structure matrix that puts 60/20/20 percent of items on one,
two, and three factors, and strictly ordered intercepts drawn from
disjoint uniform ranges.  Responses are sampled from the model exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .align import apply_alignment, best_alignment
from .cv import tune_and_fit
from .data import QMatrix, ResponseData, derive_seeds, split_row_indices
from .metrics import (RecoveryReport, SelectionReport, q_from_loadings,
                      recovery_metrics, selection_metrics)
from .model import Hyperparameters, ModelState
from .optimizer import FitConfig, FitResult, fit_multistart


@dataclass
class SimDesign:
    """Sizes and distributions for one simulated condition.

    q_proportions gives the fractions of items loading on exactly 1, 2,
    and 3 factors; they must round to integer item counts.  When
    intercept_ranges is None the per-category defaults are used.
    """

    n_respondents: int
    n_items: int
    n_factors: int
    rho: float
    n_categories: int = 4
    q_proportions: tuple = (0.6, 0.2, 0.2)
    loading_range: tuple = (0.5, 2.0)
    intercept_ranges: list | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_respondents < 2 or self.n_items < 1 or self.n_factors < 1:
            raise ValueError("sizes must be positive (and N at least 2)")
        if self.n_categories < 2:
            raise ValueError(f"need at least 2 categories, got {self.n_categories}")
        if abs(sum(self.q_proportions) - 1.0) > 1e-12:
            raise ValueError(f"q_proportions must sum to 1: {self.q_proportions}")
        if any(p < 0 for p in self.q_proportions):
            raise ValueError(f"q_proportions must be nonnegative: {self.q_proportions}")
        lo, hi = self.loading_range
        if not 0 < lo < hi:
            raise ValueError(f"loading_range must be positive and ordered: {self.loading_range}")
        if self.intercept_ranges is not None:
            ranges = self.intercept_ranges
            if len(ranges) != self.n_categories - 1:
                raise ValueError(
                    f"{len(ranges)} intercept ranges for "
                    f"{self.n_categories} categories"
                )
            for lo_c, hi_c in ranges:
                if not lo_c < hi_c:
                    raise ValueError(f"empty intercept range ({lo_c}, {hi_c})")
            for c in range(len(ranges) - 1):
                if ranges[c][0] < ranges[c + 1][1]:
                    raise ValueError(
                        "intercept ranges must be disjoint and decreasing"
                    )


def default_intercept_ranges(n_categories: int):
    """Disjoint decreasing uniform ranges for the intercept draws.

    Two categories get the single wide range (-1.5, 1.5).  Otherwise the
    C-1 ranges have half-width 0.375 around centers spaced 1.125 apart
    and centered on zero, which for four categories gives (0.75, 1.5),
    (-0.375, 0.375), and (-1.5, -0.75).
    """
    if n_categories < 2:
        raise ValueError(f"need at least 2 categories, got {n_categories}")
    if n_categories == 2:
        return [(-1.5, 1.5)]
    m = n_categories - 1
    centers = np.linspace(1.125 * (m - 1) / 2.0, -1.125 * (m - 1) / 2.0, m)
    return [(float(c) - 0.375, float(c) + 0.375) for c in centers]


def draw_intercepts(rng, n_categories: int, ranges=None) -> np.ndarray:
    """Draw one strictly decreasing intercept vector."""
    if ranges is None:
        ranges = default_intercept_ranges(n_categories)
    d = np.array([rng.uniform(lo, hi) for lo, hi in ranges])
    # ranges are disjoint except in the two-category case, where sorting
    # a single value is a no-op anyway
    return np.sort(d)[::-1].copy()


def gen_sigma(n_factors: int, rho: float) -> np.ndarray:
    """Exchangeable correlation matrix rho * 11' + (1 - rho) * I."""
    lo = -1.0 / (n_factors - 1) if n_factors > 1 else -1.0
    if not lo < rho < 1.0:
        raise ValueError(
            f"rho must lie in ({lo}, 1) for K={n_factors}, got {rho}"
        )
    return rho * np.ones((n_factors, n_factors)) + (1.0 - rho) * np.eye(n_factors)


def gen_q(design: SimDesign) -> QMatrix:
    """Binary structure matrix with the designed loading counts per item.

    Items loading on r factors take the next r factor columns in cyclic
    order, so columns stay balanced and every factor is loaded.
    """
    counts = [round(p * design.n_items) for p in design.q_proportions]
    if sum(counts) != design.n_items:
        raise ValueError(
            f"q_proportions {design.q_proportions} do not yield integer "
            f"item counts for J={design.n_items}"
        )
    entries = np.zeros((design.n_items, design.n_factors), dtype=np.int64)
    item = 0
    cursor = 0
    for group, n_group in enumerate(counts):
        r = group + 1
        if n_group == 0:
            continue
        if r > design.n_factors:
            raise ValueError(
                f"items loading on {r} factors need K >= {r}, got "
                f"K={design.n_factors}"
            )
        for _ in range(n_group):
            for t in range(r):
                entries[item, (cursor + t) % design.n_factors] = 1
            cursor += r
            item += 1
    return QMatrix(entries=entries)


def gen_true_params(design: SimDesign):
    """Draw (true ModelState, true QMatrix) for one replication."""
    rng = np.random.default_rng(design.seed)
    q = gen_q(design)
    sigma = gen_sigma(design.n_factors, design.rho)
    chol = np.linalg.cholesky(sigma)
    theta = rng.standard_normal((design.n_respondents, design.n_factors)) @ chol.T
    lo, hi = design.loading_range
    u = rng.uniform(lo, hi, size=(design.n_items, design.n_factors))
    loadings = u * q.entries
    intercepts = [
        draw_intercepts(rng, design.n_categories, design.intercept_ranges)
        for _ in range(design.n_items)
    ]
    truth = ModelState(theta=theta, loadings=loadings, intercepts=intercepts)
    return truth, q


def sample_responses(truth: ModelState, categories, seed: int) -> ResponseData:
    """Sample one response per cell from the model; fully observed."""
    n, j = truth.n_respondents, truth.n_items
    categories = np.broadcast_to(np.asarray(categories, dtype=np.int64), (j,))
    rng = np.random.default_rng(seed)
    u = rng.random((n, j))
    responses = np.zeros((n, j), dtype=np.int64)
    for jj in range(j):
        d_j = truth.intercepts[jj]
        if d_j.size != categories[jj] - 1:
            raise ValueError(
                f"item {jj}: {d_j.size} intercepts for {categories[jj]} categories"
            )
        z = truth.theta @ truth.loadings[jj]
        cum = expit(z[:, None] + d_j[None, :])
        responses[:, jj] = (u[:, jj][:, None] < cum).sum(axis=1)
    return ResponseData(
        responses=responses,
        mask=np.ones((n, j), dtype=bool),
        categories=categories.copy(),
    )


def run_replication(design: SimDesign, cfg: FitConfig,
                    train_fraction: float = 0.5, n_folds: int = 5,
                    lam: float | None = None, warm_start: bool = True):
    """Generate, fit, align, and score one replication.

    With lam=None the sparsity weight is selected by two-stage CV on a
    row split and only the test half is fitted and scored; with a fixed
    lam the whole data set is fitted directly.  Returns
    (SelectionReport, RecoveryReport, FitResult).
    """
    seeds = derive_seeds(design.seed, 4)
    truth, q_star = gen_true_params(replace(design, seed=seeds[0]))
    data = sample_responses(truth, design.n_categories, seed=seeds[1])
    sigma = gen_sigma(design.n_factors, design.rho)
    cfg_fit = replace(cfg, seed=seeds[2])

    if lam is None:
        hyper = Hyperparameters(sigma_theta=sigma, lam=0.0)
        result, lam_hat, _ = tune_and_fit(
            data, hyper, cfg_fit, train_fraction=train_fraction,
            seed=seeds[3], n_folds=n_folds, warm_start=warm_start,
        )
        _, test_rows = split_row_indices(design.n_respondents, train_fraction,
                                         seeds[3])
    else:
        hyper = Hyperparameters(sigma_theta=sigma, lam=float(lam))
        result = fit_multistart(data, hyper, cfg_fit)
        test_rows = np.arange(design.n_respondents)

    alignment = best_alignment(result.state.loadings, truth.loadings)
    aligned = apply_alignment(result.state, alignment)
    truth_test = ModelState(
        theta=truth.theta[test_rows],
        loadings=truth.loadings,
        intercepts=truth.intercepts,
    )
    q_hat = q_from_loadings(aligned.loadings, cfg.loading_zero_threshold)
    selection = selection_metrics(q_hat, q_star)
    recovery = recovery_metrics(aligned, truth_test, q_star)
    return selection, recovery, result
