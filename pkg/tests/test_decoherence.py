import math

import numpy as np
import pytest

from chainhydro.chain import ChainParams, GaussianState, evolve, exact_propagator
from chainhydro.decoherence import (
    SATURATED,
    decoherence_scale,
    default_k_grid,
    peaking_ratio,
    peaking_scan,
    smallk_asymptote,
    variance_decomposition,
)
from chainhydro.densities import SpectralMoment, correlation_profile, spectral_moment, spectral_number

from chainhydro.harness.experiments import crossover_wavenumber

from conftest import random_state


def uncorrelated(n, s2=0.04, spread=None):
    spread = n if spread is None else spread
    return GaussianState.product(np.linspace(0, spread, n), 0.0, s2, 1.0)


def test_ratio_zero_at_k0():
    assert peaking_ratio(spectral_number(uncorrelated(10), 0.0)) == 0.0


def test_ratio_single_particle():
    s2 = 0.5
    st0 = GaussianState.product(0.0, 0.0, s2, 1.0)
    for k in (0.2, 1.0, 2.5):
        assert peaking_ratio(spectral_number(st0, k)) == pytest.approx(math.expm1(k * k * s2),
                                                                       rel=1e-10)


def test_saturated_sentinel():
    assert peaking_ratio(SpectralMoment(1.0, 0.0, 1.0, "momentum")) == SATURATED
    st0 = GaussianState.product([0.0, 1.0], 0.0, 0.1, 1.0)
    # v = 0 everywhere: the momentum density has zero mean
    assert peaking_ratio(spectral_moment(st0, 0.5, "momentum")) == SATURATED


def test_ratio_order_one_over_n():
    s2 = 0.04
    # means spread over a length L with k L = 0.05, so <n(k)> stays close to N
    st0 = uncorrelated(100, s2, spread=0.1)
    k = 0.5
    r = peaking_ratio(spectral_number(st0, k))
    assert r * 100 == pytest.approx(math.expm1(k * k * s2), rel=0.05)


def test_asymptote_uncorrelated():
    st0 = uncorrelated(25, 0.3)
    assert smallk_asymptote(st0, 0.1) == pytest.approx(0.01 * 0.3 / 25, rel=1e-12)
    assert smallk_asymptote(st0, 0.0) == 0.0


def test_small_k_limit_on_evolved_state():
    p = ChainParams(100, coupling=0.05, binding=1.0, centers=np.arange(100.0))
    s0 = 1 / (2 * p.omega)
    st0 = GaussianState.product(p.fixed_point, 0.0, s0 / 4, 4 * p.omega ** 2 * s0)
    st = evolve(st0, exact_propagator(p, 30.0))
    k = 1e-3 / math.sqrt(np.max(st.q_var))
    ratio = peaking_ratio(spectral_number(st, k)) / smallk_asymptote(st, k)
    assert 0.95 <= ratio <= 1.05


def test_uncorrelated_diagonal_formula(rng):
    st0 = random_state(rng, 30, correlated=False, scale=3.0)
    for k in (0.1, 0.8, 2.0):
        mom = spectral_number(st0, k)
        diag = np.sum(-np.expm1(-k * k * st0.q_var))
        assert mom.variance == pytest.approx(diag, rel=1e-10)


def test_variance_decomposition(rng):
    st0 = random_state(rng, 8)
    d, c = variance_decomposition(st0, 0.9)
    assert d + c == pytest.approx(spectral_number(st0, 0.9).variance, rel=1e-10)
    assert variance_decomposition(uncorrelated(8), 0.9)[1] == 0.0


def test_cross_over_diagonal_crossover_tracks_corr_length():
    p = ChainParams(31, coupling=0.01 / 0.98, binding=1.0, centers=np.arange(31.0) - 15,
                    periodic=False)
    s0 = 1 / (2 * p.omega)
    st0 = GaussianState.product(p.fixed_point, 0.0, s0 / 16, 16 * p.omega ** 2 * s0)
    st = evolve(st0, exact_propagator(p, 0.5 / (p.gamma * p.omega)))
    xi = correlation_profile(st)[1]
    ks = np.logspace(-2.5, 1.5, 100)
    ratio = np.array([np.divide(*variance_decomposition(st, k)[::-1]) for k in ks])
    # correlated at coarse scales, diagonal-dominated well above 1 / xi
    assert abs(ratio[0]) > 1 > abs(ratio[-1])
    k_cross = crossover_wavenumber(ks, ratio)
    assert 1 / 3 <= k_cross * xi <= 3


def test_decoherence_scale_single_particle():
    s2 = 0.5
    st0 = GaussianState.product(0.0, 0.0, s2, 1.0)
    grid = np.linspace(0, 1, 101)
    res = decoherence_scale(st0, 0.01, grid)
    expect = grid[np.nonzero(np.expm1(grid ** 2 * s2) <= 0.01)[0][-1]]
    assert res.k_star == expect and res.resolved


def test_decoherence_scale_grows_with_n():
    grid = np.concatenate([[0.0], np.logspace(-2, 1, 80)])
    ks = [decoherence_scale(uncorrelated(n, 0.04, spread=1000.0), 0.01, grid).k_star
          for n in (10, 100, 1000)]
    assert ks[0] < ks[1] < ks[2]


def test_decoherence_scale_unresolved_and_trivial():
    st0 = GaussianState.product(0.0, 0.0, 4.0, 1.0)
    res = decoherence_scale(st0, 0.01, [0.0, 5.0])
    assert res.k_star == 0.0 and not res.resolved
    assert decoherence_scale(st0, 0.01, [0.0]).k_star == 0.0
    with pytest.raises(ValueError):
        decoherence_scale(st0, 1.5, [0.0, 1.0])


def test_default_grid():
    g = default_k_grid(uncorrelated(5, 0.25))
    assert g[0] == 0 and g.size == 41
    assert g[1] == pytest.approx(1e-3 / 0.5) and g[-1] == pytest.approx(10 / 0.5)


def test_peaking_scan_report():
    p = ChainParams(30, coupling=0.02, binding=1.0, centers=np.arange(30.0))
    st0 = GaussianState.product(p.fixed_point, 0.0, 0.1, 1.0)
    times = [0.0, 10.0, 20.0]
    states = [evolve(st0, exact_propagator(p, t)) for t in times]
    k_grid = np.concatenate([[0.0], np.logspace(-2, 0.5, 10)])
    rep = peaking_scan(states, times, k_grid)
    assert np.all(rep.ratio[0] == 0) and np.all(rep.ratio >= 0)
    assert rep.ratio.shape == (11, 3)
    rows = list(rep.rows())
    assert len(rows) == 33 and rows[0][:3] == (0.0, 0.0, "number")


def test_zero_k_ratio_for_conserved_totals(rng):
    p = ChainParams(6, coupling=0.3, binding=1.0)
    st0 = random_state(rng, 6)
    for which in ("momentum", "energy"):
        mom = spectral_moment(st0, 0.0, which, p)
        # totals are sharp only for the ratio's definition; R(0) is finite and >= 0
        assert peaking_ratio(mom) >= 0


def test_time_robustness_at_coarse_scales():
    p = ChainParams(61, coupling=0.01 / 0.98, binding=1.0, centers=np.arange(61.0) - 30,
                    periodic=False)
    s0 = 1 / (2 * p.omega)
    st0 = GaussianState.product(p.fixed_point, 0.0, s0 / 4, 4 * p.omega ** 2 * s0)
    tr = 1 / (p.gamma * p.omega)
    states = [evolve(st0, exact_propagator(p, a * tr)) for a in np.linspace(0, 10, 21)]
    xi_max = max(correlation_profile(s)[1] for s in states)
    k = 0.1 / xi_max
    r0 = peaking_ratio(spectral_number(states[0], k))
    worst = max(peaking_ratio(spectral_number(s, k)) for s in states)
    assert worst / r0 < 100 and worst < 1
