"""Peaking diagnostics for local densities.

A state is an approximate eigenstate of a density A(k) when the ratio
(Delta A)^2 / |<A>|^2 is small. At k = 0 the densities are exactly conserved
totals and the ratio vanishes identically.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .densities import (
    KINDS,
    correlation_profile,
    number_variance_split,
    spectral_moment,
)

__all__ = [
    "SATURATED",
    "DEFAULT_TOLERANCE",
    "PeakingReport",
    "peaking_ratio",
    "smallk_asymptote",
    "variance_decomposition",
    "decoherence_scale",
    "default_k_grid",
    "peaking_scan",
]

SATURATED = math.inf
DEFAULT_TOLERANCE = 0.01


def peaking_ratio(moment):
    """Variance over squared modulus of the mean; ``inf`` when the mean vanishes."""
    mag = abs(moment.mean) ** 2
    if mag < 1e-30:
        return SATURATED
    return moment.variance / mag


def smallk_asymptote(state, k):
    """Leading small-k ratio k^2 (Delta X)^2 / N^2 with X the centre-of-mass sum."""
    dx2 = float(np.sum(state.cov_qq))
    return k * k * dx2 / state.n ** 2


def variance_decomposition(state, k):
    """Split (Delta n(k))^2 into its j = n (diagonal) and j != n (cross) sums."""
    return number_variance_split(state, k)


def default_k_grid(state, points=40):
    """Log-spaced grid over [1e-3, 10] / mean(Delta q), prefixed by k = 0."""
    width = float(np.mean(np.sqrt(np.clip(state.q_var, 0, None))))
    if width <= 0:
        width = 1.0
    return np.concatenate([[0.0], np.logspace(-3, 1, points) / width])


@dataclass
class ScaleResult:
    k_star: float
    resolved: bool
    ratios: dict = field(default_factory=dict)


def decoherence_scale(state, tolerance=DEFAULT_TOLERANCE, k_grid=None, kinds=("number",),
                      params=None):
    """Largest grid wavenumber k* with R(k) <= tolerance at every grid k <= k*.

    All requested density kinds must satisfy the bound. Returns a
    :class:`ScaleResult`; ``resolved`` is False when the first non-zero grid
    point already exceeds the tolerance (then k* = 0).
    """
    if not 0 < tolerance < 1:
        raise ValueError("tolerance must lie in (0, 1)")
    if k_grid is None:
        k_grid = default_k_grid(state)
    k_grid = np.asarray(k_grid, dtype=float)
    if np.any(np.diff(k_grid) <= 0) or k_grid[0] < 0:
        raise ValueError("k_grid must be ascending and non-negative")
    ratios = {
        which: np.array([peaking_ratio(spectral_moment(state, k, which, params)) for k in k_grid])
        for which in kinds
    }
    worst = np.max(np.vstack(list(ratios.values())), axis=0)
    ok = worst <= tolerance
    if ok.all():
        last = len(k_grid) - 1
    else:
        last = int(np.argmin(ok)) - 1
    if last < 0:
        return ScaleResult(0.0, False, ratios)
    k_star = float(k_grid[last])
    resolved = k_star > 0 or len(k_grid) == 1
    return ScaleResult(k_star, resolved, ratios)


@dataclass
class PeakingReport:
    which: str
    k_grid: np.ndarray
    times: np.ndarray
    ratio: np.ndarray  # shape (len(k_grid), len(times))
    asymptote: np.ndarray  # k^2 (Delta X)^2 / N^2, same shape
    decoherence_scale: np.ndarray  # per time
    tolerance: float = DEFAULT_TOLERANCE
    corr_length: np.ndarray = None

    def rows(self):
        """Yield (t, k, which, R, R_smallk) tuples in (time, k) order."""
        for it, t in enumerate(self.times):
            for ik, k in enumerate(self.k_grid):
                yield t, k, self.which, self.ratio[ik, it], self.asymptote[ik, it]


def peaking_scan(states, times, k_grid, which="number", params=None,
                 tolerance=DEFAULT_TOLERANCE):
    """Peaking ratio R(k, t) over a trajectory of states."""
    if which not in KINDS:
        raise ValueError(f"unknown density kind {which!r}")
    k_grid = np.asarray(k_grid, dtype=float)
    ratio = np.zeros((k_grid.size, len(states)))
    asym = np.zeros_like(ratio)
    kstar = np.zeros(len(states))
    corr = np.zeros(len(states))
    for it, state in enumerate(states):
        for ik, k in enumerate(k_grid):
            ratio[ik, it] = peaking_ratio(spectral_moment(state, k, which, params))
            asym[ik, it] = smallk_asymptote(state, k)
        ok = ratio[:, it] <= tolerance
        last = len(k_grid) - 1 if ok.all() else int(np.argmin(ok)) - 1
        kstar[it] = k_grid[last] if last >= 0 else 0.0
        corr[it] = correlation_profile(state)[1]
    return PeakingReport(which, k_grid, np.asarray(times, dtype=float), ratio, asym, kstar,
                         tolerance, corr)
