"""Hydrodynamic fields of the trapped chain and their PDE integrator.

The closed system for (f, v, theta) is

    df/dt + v df/dx = -f dv/dx
    dv/dt + v dv/dx = -(1/m) dtheta/dx - theta/(m f) df/dx - K x / m
    dtheta/dt + v dtheta/dx = -2 theta dv/dx

which is the 1-D Euler system with pressure P = f theta / m, internal energy
theta / 2m per unit mass (adiabatic index 3) and a harmonic external force.
The integrator works on the conservative variables (f, f v, E) with a MUSCL
reconstruction, a local Lax-Friedrichs flux and a two-stage SSP Runge-Kutta
step. The density is reconstructed relative to the local isothermal trap
profile and the force is discretised from the same reconstruction, so the
trapped Maxwell-Boltzmann profile is a discrete fixed point.
"""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .chain import GaussianState

logger = logging.getLogger(__name__)

__all__ = [
    "SCHEME",
    "HydroError",
    "HydroFields",
    "HydroRHS",
    "Floors",
    "equilibrium_profile",
    "build_local_equilibrium",
    "momentum_floor",
    "extract_fields",
    "hydro_rhs",
    "hydro_evolve",
    "stable_step",
]

SCHEME = "LLF-RK2"


class HydroError(RuntimeError):
    """Integration failure; ``fields`` holds the last good state."""

    def __init__(self, message, fields=None):
        super().__init__(message)
        self.fields = fields


@dataclass(frozen=True)
class Floors:
    """Vacuum and atmosphere thresholds.

    Cells with f <= f_rel * max(f) are treated as empty. Cells with
    f < atmosphere * max(f) are an inert atmosphere: after every step their
    velocity is set to zero and theta is capped at the largest theta of the
    denser cells. f itself is never modified, so mass stays conserved.
    """

    f_rel: float = 0.0
    theta: float = 0.0
    min_step: float = 1e-12
    atmosphere: float = 0.0


@dataclass(frozen=True, eq=False)
class HydroFields:
    x: np.ndarray
    f: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    t: float = 0.0
    mask: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        arrs = [np.broadcast_to(np.asarray(a, dtype=float), x.shape).copy()
                for a in (self.f, self.v, self.theta)]
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "f", arrs[0])
        object.__setattr__(self, "v", arrs[1])
        object.__setattr__(self, "theta", arrs[2])
        if self.mask is None:
            object.__setattr__(self, "mask", np.ones(x.shape, dtype=bool))

    @property
    def dx(self):
        return float(self.x[1] - self.x[0])

    def mass(self):
        return float(np.sum(self.f) * self.dx)


@dataclass(frozen=True)
class HydroRHS:
    df: np.ndarray
    dv: np.ndarray
    dtheta: np.ndarray
    masked: np.ndarray


def _uniform(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 3:
        raise ValueError("grid needs at least three points")
    d = np.diff(x)
    if not np.allclose(d, d[0], rtol=1e-9, atol=0) or d[0] <= 0:
        raise ValueError("grid must be uniform and ascending")
    return x


def equilibrium_profile(params, theta0, domain):
    """Trapped Maxwell-Boltzmann state: v = 0, theta = theta0, Gaussian f.

    ``domain`` is either a grid of cell centres or ``(x_min, x_max, n_cells)``.
    f is renormalised so that sum(f) dx = 1 on the grid.
    """
    if params.binding <= 0:
        raise ValueError("equilibrium profile needs K > 0")
    if theta0 <= 0:
        raise ValueError("theta0 must be > 0")
    if isinstance(domain, tuple) and len(domain) == 3:
        lo, hi, n = domain
        dx = (hi - lo) / n
        x = lo + dx * (np.arange(int(n)) + 0.5)
    else:
        x = _uniform(domain)
    sigma = math.sqrt(theta0 / params.binding)
    if x[-1] - x[0] < 6 * sigma:
        warnings.warn("domain narrower than 6 thermal widths; profile is truncated", stacklevel=2)
    f = np.exp(-0.5 * params.binding * x * x / theta0)
    f *= math.sqrt(params.binding / (2 * math.pi * theta0))
    dx = x[1] - x[0]
    f /= np.sum(f) * dx
    return HydroFields(x, f, 0.0, theta0)


def momentum_floor(width):
    """Minimum-uncertainty momentum variance 1/(4 s^2) added in state construction."""
    return 1.0 / (4.0 * width * width)


def build_local_equilibrium(fields, params, width):
    """Product Gaussian state sampling the fields by inverse-CDF stratification.

    Particle j sits at x_j = F^{-1}((j - 1/2) / N) with <p_j> = m v(x_j),
    (Delta q_j)^2 = width^2 and (Delta p_j)^2 = m theta(x_j) + 1/(4 width^2).
    """
    if width <= 0:
        raise ValueError("width must be > 0")
    x, f = fields.x, fields.f
    dx = fields.dx
    total = np.sum(f) * dx
    if not total > 0:
        raise ValueError("f has zero total mass")
    n = params.n_particles
    # piecewise-linear CDF through cell edges
    edges = np.concatenate([[x[0] - dx / 2], x + dx / 2])
    cdf = np.concatenate([[0.0], np.cumsum(f) * dx]) / total
    u = (np.arange(n) + 0.5) / n
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    pos = np.interp(u, cdf[keep], edges[keep])
    spacing = np.median(np.diff(pos)) if n > 1 else 0.0
    if n > 1 and width > 0.25 * (pos[-1] - pos[0]):
        warnings.warn("width is comparable to the support of f; particle order is lost", stacklevel=2)
    vj = np.interp(pos, x, fields.v)
    th = np.interp(pos, x, fields.theta)
    m = params.mass
    logger.debug("local equilibrium: N=%d median spacing %.3g, width %.3g", n, spacing, width)
    return GaussianState.product(pos, m * vj, width * width, m * th + momentum_floor(width))


def extract_fields(density, params, n_floor=None, theta_offset=0.0, theta_floor=0.0):
    """Invert smeared densities to (f, v, theta).

    f = n / N, v = g / (m n), theta = 2 h / n - m v^2 - K x^2 - theta_offset.
    Cells with n <= n_floor (default 1e-3 max n) are masked (NaN). Negative
    theta below -1e-6 is clamped to ``theta_floor`` and listed in ``flagged``.
    """
    if np.any(params.centers != 0):
        raise ValueError("field inversion assumes b_j = 0")
    x = density.x
    n = density.n
    if n_floor is None:
        n_floor = 1e-3 * float(n.max())
    mask = n > n_floor
    f = np.full_like(n, np.nan)
    v = np.full_like(n, np.nan)
    th = np.full_like(n, np.nan)
    m, kk = params.mass, params.binding
    nn = n[mask]
    f[mask] = nn / params.n_particles
    v[mask] = density.g[mask] / (m * nn)
    th[mask] = 2 * density.h[mask] / nn - m * v[mask] ** 2 - kk * x[mask] ** 2 - theta_offset
    bad = mask & (th < -1e-6)
    flagged = np.nonzero(bad)[0]
    if flagged.size:
        warnings.warn(f"{flagged.size} cells with negative extracted theta clamped", stacklevel=2)
        th[bad] = theta_floor
    out = HydroFields(x, f, v, th, mask=mask)
    object.__setattr__(out, "flagged", flagged)
    return out


# ---------------------------------------------------------------- integrator


def _mc_slope(a):
    """Monotonised-central limited differences (per cell spacing) for a[1:-1]."""
    dl = a[1:-1] - a[:-2]
    dr = a[2:] - a[1:-1]
    dc = 0.5 * (dl + dr)
    s = np.sign(dc) * np.minimum(np.minimum(2 * np.abs(dl), 2 * np.abs(dr)), np.abs(dc))
    return np.where(dl * dr > 0, s, 0.0)


def _ghosts(f, v, th):
    """Two ghost cells per side.

    ln f is extrapolated quadratically (capped at the edge value), v linearly
    and theta with zero gradient. Gaussian density profiles with affine
    velocity, which include the trapped equilibrium, are continued exactly.
    """
    pad = lambda a: np.concatenate([[a[0], a[0]], a, [a[-1], a[-1]]])
    vg, tg = pad(v), pad(th)
    vg[1], vg[0] = 2 * v[0] - v[1], 3 * v[0] - 2 * v[1]
    vg[-2], vg[-1] = 2 * v[-1] - v[-2], 3 * v[-1] - 2 * v[-2]
    fg = pad(f)
    if f.size >= 3 and np.all(f[:3] > 0) and np.all(f[-3:] > 0):
        lf = np.log(f)
        for side, (a, b, c) in ((0, lf[:3]), (1, lf[-3:][::-1])):
            # quadratic through (0, a), (1, b), (2, c) evaluated at -1 and -2
            g1 = 3 * a - 3 * b + c
            g2 = 6 * a - 8 * b + 3 * c
            g1, g2 = min(g1, a), min(g2, a)
            if side == 0:
                fg[1], fg[0] = math.exp(g1), math.exp(g2)
            else:
                fg[-2], fg[-1] = math.exp(g1), math.exp(g2)
    return vg, tg, fg


class _Scheme:
    def __init__(self, x, params, floors):
        self.x = x
        self.dx = float(x[1] - x[0])
        self.m = params.mass
        self.k = params.binding
        self.floors = floors
        # two ghost cells per side
        self.xg = np.concatenate([x[0] - self.dx * np.array([2.0, 1.0]), x,
                                  x[-1] + self.dx * np.array([1.0, 2.0])])

    def primitives(self, u):
        f, mom, en = u
        fmax = max(float(f.max()), 1e-300)
        vac = f <= self.floors.f_rel * fmax
        safe = np.where(vac, 1.0, f)
        v = np.where(vac, 0.0, mom / safe)
        th = np.where(vac, 0.0, 2 * self.m * (en / safe - 0.5 * v * v))
        th = np.maximum(th, self.floors.theta)
        return f, v, th, vac

    def settle_atmosphere(self, u):
        level = self.floors.atmosphere
        if level <= 0:
            return u
        f, v, th, vac = self.primitives(u)
        thin = f < level * float(f.max())
        if not np.any(thin) or np.all(thin):
            return u
        v = np.where(thin, 0.0, v)
        th = np.where(thin, np.minimum(th, float(th[~thin].max())), th)
        return self.conservative(f, v, th)

    def conservative(self, f, v, th):
        return np.array([f, f * v, f * (0.5 * v * v + 0.5 * th / self.m)])

    def max_speed(self, u):
        f, v, th, vac = self.primitives(u)
        live = ~vac
        if not np.any(live):
            return 0.0
        return float(np.max(np.abs(v[live]) + np.sqrt(3 * th[live] / self.m)))

    def rhs(self, u):
        f, v, th, vac = self.primitives(u)
        vg, tg, fg = _ghosts(f, v, th)
        vacg = np.concatenate([[vac[0]] * 2, vac, [vac[-1]] * 2])
        xg = self.xg
        h = self.dx

        # cells 1..n+2 of the padded array have neighbours on both sides
        sv = _mc_slope(vg)
        st = _mc_slope(tg)
        lnf = np.log(np.maximum(fg, 1e-300))
        thc = tg[1:-1]
        hot = (thc > 0) & (self.k > 0)
        lam = np.where(hot, 0.5 * self.k / np.where(hot, thc, 1.0), 0.0)
        # chi relative to this cell's isothermal trap profile
        chi_l = lnf[:-2] + lam * xg[:-2] ** 2
        chi_c = lnf[1:-1] + lam * xg[1:-1] ** 2
        chi_r = lnf[2:] + lam * xg[2:] ** 2
        dl = chi_c - chi_l
        dr = chi_r - chi_c
        dcn = 0.5 * (dl + dr)
        sc = np.where(dl * dr > 0,
                      np.sign(dcn) * np.minimum(np.minimum(2 * abs(dl), 2 * abs(dr)), abs(dcn)),
                      0.0)
        vacc = vacg[1:-1]
        sc = np.where(vacc, 0.0, sc)
        xc = xg[1:-1]
        xm, xp = xc - h / 2, xc + h / 2
        f_minus = np.exp(chi_c - 0.5 * sc - lam * xm * xm)  # left face of the cell
        f_plus = np.exp(chi_c + 0.5 * sc - lam * xp * xp)  # right face
        fh_minus = np.exp(chi_c - lam * xm * xm)
        fh_plus = np.exp(chi_c - lam * xp * xp)
        v_minus, v_plus = vg[1:-1] - 0.5 * sv, vg[1:-1] + 0.5 * sv
        t_minus, t_plus = tg[1:-1] - 0.5 * st, tg[1:-1] + 0.5 * st

        # faces between padded cells i and i+1 for i = 1..n+1 (n+1 faces)
        fl, vl, tl = f_plus[:-1], v_plus[:-1], t_plus[:-1]
        fr, vr, tr = f_minus[1:], v_minus[1:], t_minus[1:]
        flux = self._llf(fl, vl, tl, fr, vr, tr)
        div = (flux[:, 1:] - flux[:, :-1]) / h  # cells 2..n+1 == physical cells

        # well-balanced trap force from the hydrostatic face values
        phys = slice(1, -1)
        force = tg[2:-2] / self.m * (fh_plus[phys] - fh_minus[phys]) / h
        cold = ~hot[phys]
        force = np.where(cold, -f * self.k * self.x / self.m, force)
        out = -div
        out[1] += force
        out[2] += v * force
        return out, vac

    def _llf(self, fl, vl, tl, fr, vr, tr):
        m = self.m
        ul = self.conservative(fl, vl, tl)
        ur = self.conservative(fr, vr, tr)
        pl, pr = fl * tl / m, fr * tr / m
        fxl = np.array([fl * vl, fl * vl * vl + pl, vl * (ul[2] + pl)])
        fxr = np.array([fr * vr, fr * vr * vr + pr, vr * (ur[2] + pr)])
        cl = np.abs(vl) + np.sqrt(3 * np.maximum(tl, 0) / m)
        cr = np.abs(vr) + np.sqrt(3 * np.maximum(tr, 0) / m)
        alpha = np.maximum(cl, cr)
        return 0.5 * (fxl + fxr) - 0.5 * alpha * (ur - ul)


def hydro_rhs(fields, params, floors=Floors()):
    """Time derivatives (df/dt, dv/dt, dtheta/dt) of the discretised system.

    Vacuum cells (f below the floor) are reported in ``masked`` with zero
    velocity and temperature derivatives.
    """
    x = _uniform(fields.x)
    sch = _Scheme(x, params, floors)
    u = sch.conservative(fields.f, fields.v, fields.theta)
    du, vac = sch.rhs(u)
    f, v, th = fields.f, fields.v, fields.theta
    safe = np.where(vac, 1.0, f)
    df = du[0]
    dv = (du[1] - v * df) / safe
    den = du[2]
    e = u[2]
    dth = 2 * params.mass * ((den - e / safe * df) / safe - v * dv)
    dv = np.where(vac, 0.0, dv)
    dth = np.where(vac, 0.0, dth)
    return HydroRHS(df, dv, dth, vac)


def stable_step(fields, params, cfl, floors=Floors()):
    """dt = cfl dx / max(|v| + sqrt(3 theta / m)) over occupied cells."""
    sch = _Scheme(_uniform(fields.x), params, floors)
    speed = sch.max_speed(sch.conservative(fields.f, fields.v, fields.theta))
    return math.inf if speed == 0 else cfl * sch.dx / speed


def hydro_evolve(fields, params, t_final, cfl=0.4, output_times=None, floors=Floors(),
                 max_steps=None):
    """Integrate to ``t_final`` and return the fields at ``output_times``.

    ``output_times`` defaults to ``[0, t_final]``. With ``max_steps`` the run
    stops after that many steps (the last output then carries the actual time).
    """
    if not 0 < cfl < 1:
        raise ValueError("cfl must lie in (0, 1)")
    if t_final < 0:
        raise ValueError("t_final must be >= 0")
    x = _uniform(fields.x)
    sch = _Scheme(x, params, floors)
    t0 = fields.t
    if output_times is None:
        output_times = [t0, t0 + t_final]
    targets = sorted(float(t) for t in output_times)
    u = sch.conservative(fields.f, fields.v, fields.theta)
    t = t0
    steps = 0
    out = []

    def snapshot():
        f, v, th, vac = sch.primitives(u)
        return HydroFields(x, f.copy(), v.copy(), th.copy(), t, ~vac)

    end = t0 + t_final
    for target in targets:
        target = min(target, end)
        while t < target - 1e-14 * max(1.0, abs(target)):
            if max_steps is not None and steps >= max_steps:
                break
            speed = sch.max_speed(u)
            dt = cfl * sch.dx / speed if speed > 0 else target - t
            dt = min(dt, target - t)
            if dt < floors.min_step:
                raise HydroError(f"time step collapsed to {dt:.3g} at t = {t:.6g}", snapshot())
            k1, _ = sch.rhs(u)
            u1 = u + dt * k1
            k2, _ = sch.rhs(u1)
            new = 0.5 * (u + u1 + dt * k2)
            if not np.all(np.isfinite(new)):
                raise HydroError(f"non-finite state at t = {t + dt:.6g}", snapshot())
            new[0] = np.maximum(new[0], 0.0)
            u = sch.settle_atmosphere(new)
            t += dt
            steps += 1
        out.append(snapshot())
    logger.debug("hydro_evolve: %d steps to t = %.6g", steps, t)
    return out
