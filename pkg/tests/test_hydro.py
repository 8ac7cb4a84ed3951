import math
import warnings

import numpy as np
import pytest
from scipy.optimize import brentq

from chainhydro.chain import ChainParams, evolve, exact_propagator
from chainhydro.densities import real_space_fields, temperature_field
from chainhydro.hydro import (
    Floors,
    HydroError,
    HydroFields,
    build_local_equilibrium,
    equilibrium_profile,
    extract_fields,
    hydro_evolve,
    hydro_rhs,
    momentum_floor,
    stable_step,
)

TRAP = ChainParams(1, mass=1.0, coupling=0.0, binding=1.0)
FREE = ChainParams(1, mass=1.0, coupling=0.0, binding=0.0)


def cells(lo, hi, n):
    dx = (hi - lo) / n
    return lo + dx * (np.arange(n) + 0.5)


def breathing_solution(x, t, x0, v0, s0, th):
    """Exact trapped Gaussian with affine velocity (K = m = 1, adiabatic index 3)."""
    c, s = math.cos(t), math.sin(t)
    centre = x0 * c + v0 * s
    var = s0 * c * c + th * s * s
    cov = (th - s0) * s * c
    f = np.exp(-0.5 * (x - centre) ** 2 / var)
    f /= f.sum() * (x[1] - x[0])
    v = (-x0 * s + v0 * c) + cov / var * (x - centre)
    return f, v, np.full_like(x, s0 * th / var)


def rel_l2(a, b, mask):
    return float(np.sqrt(np.sum((a - b)[mask] ** 2) / np.sum(b[mask] ** 2)))


# ------------------------------------------------------------ equilibrium


def test_equilibrium_profile_normalisation():
    eq = equilibrium_profile(TRAP, 2.0, (-8 * math.sqrt(2), 8 * math.sqrt(2), 400))
    assert eq.mass() == pytest.approx(1.0, abs=1e-8)
    assert np.all(eq.v == 0) and np.all(eq.theta == 2.0)


def test_equilibrium_peak_value():
    eq = equilibrium_profile(TRAP, 1.0, cells(-10, 10, 2001))
    assert eq.f[1000] == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-6)


def test_equilibrium_narrow_domain_warns():
    with pytest.warns(UserWarning):
        equilibrium_profile(TRAP, 1.0, (-2, 2, 100))


def test_equilibrium_is_discrete_fixed_point():
    eq = equilibrium_profile(TRAP, 1.0, (-8, 8, 400))
    r = hydro_rhs(eq, TRAP)
    inner = slice(2, -2)
    for d in (r.df, r.dv, r.dtheta):
        assert np.max(np.abs(d[inner])) <= 1e-10


def test_free_uniform_state_is_static():
    x = cells(0, 1, 50)
    r = hydro_rhs(HydroFields(x, 1.0, 0.3, 2.0), FREE)
    for d in (r.df, r.dv, r.dtheta):
        assert np.max(np.abs(d)) <= 1e-12


def test_equilibrium_drift_over_1000_steps():
    eq = equilibrium_profile(TRAP, 1.0, (-8, 8, 400))
    dt = stable_step(eq, TRAP, 0.4)
    out = hydro_evolve(eq, TRAP, 2000 * dt, cfl=0.4, max_steps=1000)[-1]
    assert out.t == pytest.approx(1000 * dt, rel=1e-9)
    assert np.linalg.norm(out.f - eq.f) / np.linalg.norm(eq.f) <= 1e-3
    assert np.linalg.norm(out.theta - eq.theta) / np.linalg.norm(eq.theta) <= 1e-3
    assert np.max(np.abs(out.v)) <= 1e-3
    assert abs(out.mass() - 1) <= 1e-5


# ------------------------------------------------------------ evolution


def test_pressureless_characteristics():
    v0 = lambda a: 0.5 * np.exp(-a * a)
    t = 0.8
    errs = []
    for n in (100, 200, 400):
        x = cells(-5, 5, n)
        out = hydro_evolve(HydroFields(x, 1.0, v0(x), 0.0), FREE, t, cfl=0.4)[-1]
        exact = np.array([v0(brentq(lambda a: a + v0(a) * t - xx, xx - 2, xx + 2)) for xx in x])
        errs.append(math.sqrt(np.mean((out.v - exact) ** 2)))
    assert errs[0] / errs[1] >= 3 and errs[1] / errs[2] >= 3


def test_breathing_gaussian_matches_exact_solution():
    theta0 = 50.0
    sig = math.sqrt(theta0)
    x = cells(-7.5 * sig, 7.5 * sig, 400)
    args = (0.5 * sig, 0.707, 0.8 * theta0, 55.5)
    f0, v0, th0 = breathing_solution(x, 0.0, *args)
    times = [1.0, 3.0, 5.0]
    for h in hydro_evolve(HydroFields(x, f0, v0, th0), TRAP, 5.0, output_times=times):
        f, v, th = breathing_solution(x, h.t, *args)
        mask = f > 1e-3 * f.max()
        assert rel_l2(h.f, f, mask) < 5e-3
        assert rel_l2(h.theta, th, mask) < 5e-3
        assert np.sqrt(np.mean((h.v - v)[mask] ** 2)) < 5e-3 * math.sqrt(theta0)
        assert abs(h.mass() - 1) <= 1e-5


def test_grid_refinement_against_fine_reference():
    x_of = lambda n: cells(-6, 6, n)
    init = lambda x: HydroFields(x, np.exp(-0.5 * x * x) * (1 + 0.2 * np.exp(-2 * (x - 1) ** 2)),
                                 0.1 * np.exp(-0.5 * x * x), 1.0)
    ref = hydro_evolve(init(x_of(1600)), TRAP, 0.5)[-1]
    errs = []
    for n in (100, 200):
        out = hydro_evolve(init(x_of(n)), TRAP, 0.5)[-1]
        k = 1600 // n
        coarse = ref.f.reshape(n, k).mean(axis=1)
        errs.append(np.sqrt(np.mean((out.f - coarse) ** 2)))
    assert errs[0] / errs[1] >= 3


def test_galilean_invariance_free_fluid():
    t, boost = 1.0, 2.0

    def runs(n):
        x = cells(-10, 10, n)
        f = np.exp(-0.5 * x * x)
        th = 1.0 + 0.3 * np.exp(-0.5 * x * x)
        rest = hydro_evolve(HydroFields(x, f, 0.0, th), FREE, t)[-1]
        moving = hydro_evolve(HydroFields(x, f, boost, th), FREE, t)[-1]
        return x, rest.f, moving.f

    x, rest, moving = runs(400)
    x2, rest2, _ = runs(800)
    inner = np.abs(x) < 5
    # discretisation error of the rest-frame run, measured against the finer grid
    disc = np.max(np.abs(rest - rest2.reshape(-1, 2).mean(axis=1))[inner])
    shifted = np.interp(x, x + boost * t, rest)
    assert np.max(np.abs(moving - shifted)[inner]) <= 2 * disc + 1e-6


def test_mass_conservation_long_run():
    x = cells(-40, 40, 300)
    f = np.exp(-0.5 * (x - 3) ** 2 / 40.0)
    f /= f.sum() * (x[1] - x[0])
    outs = hydro_evolve(HydroFields(x, f, 1.0, 30.0), TRAP, 20.0, output_times=[5, 10, 20])
    for h in outs:
        assert abs(h.mass() - 1) <= 1e-5


def test_atmosphere_floor_keeps_mass_and_stops_runaway():
    theta0 = 50.0
    sig = math.sqrt(theta0)
    x = cells(-7.5 * sig, 7.5 * sig, 400)
    f = np.exp(-0.5 * x * x / theta0) * (1 + 0.1 * np.exp(-2 * (x - sig) ** 2 / theta0))
    f /= f.sum() * (x[1] - x[0])
    v = 0.7 * np.exp(-0.5 * x * x / theta0)
    h = hydro_evolve(HydroFields(x, f, v, theta0), TRAP, 20.0,
                     floors=Floors(atmosphere=1e-3))[-1]
    assert abs(h.mass() - 1) <= 1e-12
    assert np.max(h.theta) < 3 * theta0


def test_invalid_arguments():
    eq = equilibrium_profile(TRAP, 1.0, (-8, 8, 100))
    with pytest.raises(ValueError):
        hydro_evolve(eq, TRAP, 1.0, cfl=1.5)
    with pytest.raises(ValueError):
        hydro_evolve(eq, TRAP, -1.0)


def test_step_collapse_raises_with_state():
    eq = equilibrium_profile(TRAP, 1.0, (-8, 8, 100))
    with pytest.raises(HydroError) as err:
        hydro_evolve(eq, TRAP, 1.0, floors=Floors(min_step=1.0))
    assert isinstance(err.value.fields, HydroFields)


# ------------------------------------------------------------ state construction and inversion


def local_equilibrium(n_particles=400, theta=None, velocity=None, mass=1.0):
    p = ChainParams(n_particles, mass=mass, coupling=0.0, binding=1.0)
    x = cells(-6, 6, 600)
    f = np.exp(-0.5 * x * x)
    th = np.ones_like(x) if theta is None else theta(x)
    v = np.zeros_like(x) if velocity is None else velocity(x)
    return p, HydroFields(x, f / (f.sum() * (x[1] - x[0])), v, th)


def test_uniform_temperature_round_trip():
    p, fl = local_equilibrium(mass=2.0)
    s = 0.05
    st = build_local_equilibrium(fl, p, s)
    x = np.linspace(-3, 3, 601)
    T = temperature_field(st, x, 0.02, params=p)
    ok = np.isfinite(T)
    # the minimum-uncertainty floor adds 1 / (4 s^2 m) to theta
    np.testing.assert_allclose(T[ok], 1.0 + momentum_floor(s) / p.mass, rtol=1e-3)


def test_tanh_temperature_round_trip():
    theta = lambda x: 2.0 * (1 + 0.2 * np.tanh(x))
    p, fl = local_equilibrium(theta=theta)
    s = 0.05
    st = build_local_equilibrium(fl, p, s)
    x = np.linspace(-4, 4, 801)
    dens = real_space_fields(st, x, 0.02, params=p)
    ok = dens.n > 0.05 * dens.n.max()
    rec = dens.T[ok] - momentum_floor(s) / p.mass
    np.testing.assert_allclose(rec, theta(x[ok]), rtol=0.05)


def test_closure_relations_from_constructed_state():
    vel = lambda x: 0.5 * np.sin(x)
    theta = lambda x: 1.5 + 0.3 * np.cos(x)
    p, fl = local_equilibrium(theta=theta, velocity=vel)
    s = 0.05
    st = build_local_equilibrium(fl, p, s)
    x = np.linspace(-3, 3, 601)
    d = real_space_fields(st, x, 0.02, params=p)
    ok = d.n > 0.05 * d.n.max()
    m, kk = p.mass, p.binding
    v, th = vel(x), theta(x) + momentum_floor(s) / m
    np.testing.assert_allclose(d.g[ok], (m * v * d.n)[ok], rtol=0.02, atol=0.02 * d.g.max())
    tau = (m * v * v + th) * d.n
    np.testing.assert_allclose(d.tau[ok], tau[ok], rtol=0.03)
    j = (1.5 * v * th + 0.5 * m * v ** 3) * d.n + kk / (2 * m) * x * x * d.g
    np.testing.assert_allclose(d.j[ok], j[ok], rtol=0.03, atol=0.03 * np.abs(j).max())


def test_extract_round_trip():
    vel = lambda x: 0.4 * np.tanh(x)
    theta = lambda x: 1.2 + 0.2 * np.tanh(x)
    p, fl = local_equilibrium(theta=theta, velocity=vel)
    s = 0.05
    st = build_local_equilibrium(fl, p, s)
    x = np.linspace(-3, 3, 301)
    ext = extract_fields(real_space_fields(st, x, 0.04, params=p), p,
                         theta_offset=momentum_floor(s) / p.mass)
    ok = ext.mask & (ext.f > 0.05 * np.nanmax(ext.f))
    f_in = np.interp(x, fl.x, fl.f)
    np.testing.assert_allclose(ext.f[ok], f_in[ok], rtol=0.05)
    np.testing.assert_allclose(ext.v[ok], vel(x[ok]), atol=0.05 * 0.4)
    np.testing.assert_allclose(ext.theta[ok], theta(x[ok]), rtol=0.05)


def test_extract_state_at_rest():
    from chainhydro.densities import DensityField
    x = np.linspace(-4, 4, 161)
    n = 10 * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    theta0 = 1.0
    h = (0.5 * theta0 + 0.5 * x * x) * n
    zero = np.zeros_like(x)
    d = DensityField(x, 0.1, n, zero, h, zero, zero, zero, np.ones_like(x, bool), zero, zero)
    ext = extract_fields(d, ChainParams(10, binding=1.0))
    ok = ext.mask
    np.testing.assert_allclose(ext.v[ok], 0.0, atol=1e-15)
    np.testing.assert_allclose(ext.theta[ok], theta0, rtol=1e-12)


def test_extract_is_homogeneous_in_n():
    outs = []
    for n in (200, 400):
        p, fl = local_equilibrium(n_particles=n, velocity=lambda x: 0.3 * x / 3)
        st = build_local_equilibrium(fl, p, 0.05)
        x = np.linspace(-2, 2, 161)
        ext = extract_fields(real_space_fields(st, x, 0.05, params=p), p)
        outs.append(ext)
    for name in ("f", "v", "theta"):
        a, b = getattr(outs[0], name), getattr(outs[1], name)
        np.testing.assert_allclose(a, b, rtol=0.02, atol=1e-12 * np.abs(b).max())


def test_extract_refuses_centres():
    p = ChainParams(3, binding=1.0, centers=[0.0, 1.0, 2.0])
    st = build_local_equilibrium(HydroFields(cells(-3, 3, 60), 1.0, 0.0, 1.0),
                                 ChainParams(3, binding=1.0), 0.3)
    d = real_space_fields(st, np.linspace(-3, 3, 61), 0.2)
    with pytest.raises(ValueError):
        extract_fields(d, p)


def test_extract_clamps_negative_theta():
    from chainhydro.densities import DensityField
    x = np.linspace(-1, 1, 21)
    n = np.ones_like(x)
    zero = np.zeros_like(x)
    d = DensityField(x, 0.2, n, zero, zero, zero, zero, zero, np.ones_like(x, bool), zero, zero)
    with pytest.warns(UserWarning):
        ext = extract_fields(d, ChainParams(1, binding=1.0), theta_floor=0.0)
    assert len(ext.flagged) > 0 and np.all(ext.theta[ext.flagged] == 0.0)


def test_build_rejects_empty_and_wide():
    p = ChainParams(10, binding=1.0)
    x = cells(-1, 1, 20)
    with pytest.raises(ValueError):
        build_local_equilibrium(HydroFields(x, 0.0, 0.0, 1.0), p, 0.1)
    with pytest.raises(ValueError):
        build_local_equilibrium(HydroFields(x, 1.0, 0.0, 1.0), p, 0.0)
    with pytest.warns(UserWarning):
        build_local_equilibrium(HydroFields(x, 1.0, 0.0, 1.0), p, 5.0)


def test_extracted_theta_nonnegative_along_trajectory():
    p = ChainParams(200, coupling=0.01, binding=1.0, periodic=False)
    x = cells(-30, 30, 300)
    f = np.exp(-0.5 * x * x / 50)
    fl = HydroFields(x, f / (f.sum() * (x[1] - x[0])), 0.5 * np.exp(-0.5 * x * x / 50), 50.0)
    st0 = build_local_equilibrium(fl, p, 0.7)
    grid = np.linspace(-25, 25, 1001)
    for t in (0.0, 5.0, 20.0):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            ext = extract_fields(real_space_fields(evolve(st0, exact_propagator(p, t)), grid,
                                                   0.1, params=p), p, n_floor=None)
        assert np.all(ext.theta[ext.mask] >= 0)
