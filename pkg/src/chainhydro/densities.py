"""Local densities of a Gaussian chain state.

Spectral moments <A(k)>, (Delta A(k))^2 of the number, momentum and energy
densities, their Gaussian-smeared real-space counterparts, the temperature
field, equal-time correlation profiles and residuals of the local
conservation laws.

All moments are classical (Wigner-symbol) Gaussian moments. Pair sums use
the identity E[F(z) e^{w.z}] = E[e^{w.z}] E_{N(mu + Sigma w, Sigma)}[F(z)]
for polynomial F, which keeps every formula closed-form.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "KINDS",
    "SpectralMoment",
    "DensityField",
    "spectral_number",
    "spectral_momentum",
    "spectral_energy",
    "spectral_moment",
    "real_space_fields",
    "temperature_field",
    "correlation_profile",
    "conservation_residual",
]

KINDS = ("number", "momentum", "energy")

# h(k) here never contains the nu^2 interaction term.
ENERGY_INCLUDES_INTERACTION = False


@dataclass(frozen=True)
class SpectralMoment:
    wavenumber: float
    mean: complex
    variance: float
    which: str


@dataclass(frozen=True, eq=False)
class DensityField:
    """Gaussian-smeared expectation values on a uniform grid.

    ``qn`` is the smeared position moment sum_j <q_j K(x - q_j)>, which enters
    the exact smeared momentum balance. ``T`` holds NaN where ``mask`` is False.
    """

    x: np.ndarray
    window: float
    n: np.ndarray
    g: np.ndarray
    h: np.ndarray
    tau: np.ndarray
    j: np.ndarray
    T: np.ndarray
    mask: np.ndarray
    qn: np.ndarray
    bn: np.ndarray

    @property
    def dx(self):
        return float(self.x[1] - self.x[0]) if self.x.size > 1 else 0.0


def _gauss_phase(state, k):
    """<e^{ik q_j}> for every particle."""
    return np.exp(1j * k * state.q_mean - 0.5 * k * k * state.q_var)


def _pair_weight(state, k):
    """Pair weights a_j a_n^*, a_j a_n^* e^{k^2 sigma_jn} and a_j a_n^* expm1(k^2 sigma_jn).

    a_j = <e^{i k q_j}>. The exponents are combined before exponentiating so
    that large k neither overflows nor produces 0 * inf.
    """
    mu, s2 = state.q_mean, state.q_var
    x = k * k * state.cov_qq
    phase = np.exp(1j * k * (mu[:, None] - mu[None, :]))
    lo = -0.5 * k * k * (s2[:, None] + s2[None, :])
    low = np.exp(lo)
    high = np.exp(lo + x)
    small = np.abs(x) < 1.0
    diff = np.where(small, low * np.expm1(np.where(small, x, 0.0)), high - low)
    return phase * low, phase * high, phase * diff


def _finish(mean, var_terms, k, which):
    var = np.sum(var_terms)
    mag = abs(mean) ** 2
    scale = max(mag, float(np.sum(np.abs(var_terms))), 1e-300)
    if abs(var.imag) > 1e-10 * scale:
        logger.warning(
            "%s variance at k=%g has imaginary part %.3g (scale %.3g)", which, k, var.imag, scale
        )
    var = float(var.real)
    if var < 0:
        if var < -1e-12 * max(mag, 1e-300) and var < -1e-12 * scale:
            logger.warning("%s variance at k=%g is negative (%.3g); clamped", which, k, var)
        var = 0.0
    return SpectralMoment(float(k), complex(mean), var, which)


def spectral_number(state, k):
    """Mean and variance of n(k) = sum_j exp(i k q_j)."""
    k = float(k)
    a = _gauss_phase(state, k)
    mean = np.sum(a)
    if k == 0.0:
        return SpectralMoment(0.0, complex(state.n), 0.0, "number")
    _, _, w = _pair_weight(state, k)
    return _finish(mean, w, k, "number")


def number_variance_split(state, k):
    """Diagonal (j = n) and cross (j != n) parts of (Delta n(k))^2."""
    k = float(k)
    _, _, terms = _pair_weight(state, k)
    diag = np.trace(terms)
    total = np.sum(terms)
    return float(diag.real), float((total - diag).real)


class _Quadratic:
    """Per-particle observable c_j + lq_j q + lp_j p + mqq q^2 + 2 mqp q p + mpp p^2."""

    def __init__(self, c=0.0, lq=0.0, lp=0.0, mqq=0.0, mqp=0.0, mpp=0.0):
        self.c, self.lq, self.lp = c, lq, lp
        self.mqq, self.mqp, self.mpp = mqq, mqp, mpp

    def along(self, axis):
        """Copy whose per-particle coefficients broadcast along ``axis`` of a pair array."""
        shape = (-1, 1) if axis == 0 else (1, -1)
        c, lq, lp = (np.reshape(np.asarray(v, dtype=float), shape) if np.ndim(v) else v
                     for v in (self.c, self.lq, self.lp))
        return _Quadratic(c, lq, lp, self.mqq, self.mqp, self.mpp)

    def value(self, q, p):
        return (
            self.c + self.lq * q + self.lp * p
            + self.mqq * q * q + 2 * self.mqp * q * p + self.mpp * p * p
        )

    def grad(self, q, p):
        return (
            self.lq + 2 * self.mqq * q + 2 * self.mqp * p,
            self.lp + 2 * self.mqp * q + 2 * self.mpp * p,
        )

    def trace(self, vq, cqp, vp):
        # tr(M Sigma) for a 2x2 block
        return self.mqq * vq + 2 * self.mqp * cqp + self.mpp * vp

    def trace_pair(self, xqq, xqp, xpq, xpp):
        # tr(M X M X^T), X the cross-covariance of (q_j, p_j) with (q_n, p_n)
        a, b, d = self.mqq, self.mqp, self.mpp
        b11 = a * xqq + b * xpq
        b12 = a * xqp + b * xpp
        b21 = b * xqq + d * xpq
        b22 = b * xqp + d * xpp
        c11 = a * xqq + b * xqp
        c12 = a * xpq + b * xpp
        c21 = b * xqq + d * xqp
        c22 = b * xpq + d * xpp
        return b11 * c11 + b12 * c21 + b21 * c12 + b22 * c22


def _quadratic_moment(state, k, obs, which):
    k = float(k)
    ik = 1j * k
    mq, mp = state.q_mean, state.p_mean
    sqq, cqp, spp = state.cov_qq, state.cov_qp, state.cov_pp
    dq, dqp, dp = np.diag(sqq), np.diag(cqp), np.diag(spp)
    a = _gauss_phase(state, k)
    tau = obs.trace(dq, dqp, dp)

    # single tilt ik e_{q_j}
    hq = mq + ik * dq
    hp = mp + ik * dqp
    u0 = obs.value(hq, hp) + tau
    mean = np.sum(a * u0)
    if k == 0.0:
        mean = complex(mean.real, 0.0)

    # pair tilt ik (e_{q_j} - e_{q_n}); arrays indexed [j, n]
    qj = hq[:, None] - ik * sqq
    pj = hp[:, None] - ik * cqp.T
    qn = hq.conj()[None, :] + ik * sqq
    pn = hp.conj()[None, :] + ik * cqp
    rows, cols = obs.along(0), obs.along(1)
    uj = rows.value(qj, pj) + tau[:, None]
    un = cols.value(qn, pn) + tau[None, :]
    gjq, gjp = rows.grad(qj, pj)
    gnq, gnp = cols.grad(qn, pn)
    xqq, xqp, xpq, xpp = sqq, cqp, cqp.T, spp
    bsb = gjq * (xqq * gnq + xqp * gnp) + gjp * (xpq * gnq + xpp * gnp)
    tr2 = 2.0 * obs.trace_pair(xqq, xqp, xpq, xpp)

    aa, ae, aem1 = _pair_weight(state, k)
    base = u0[:, None] * u0.conj()[None, :]
    terms = aem1 * (uj * un) + aa * (uj * un - base) + ae * (bsb + tr2)
    return _finish(mean, terms, k, which)


def spectral_momentum(state, k):
    """Mean and variance of g(k) = sum_j p_j exp(i k q_j)."""
    return _quadratic_moment(state, k, _Quadratic(lp=1.0), "momentum")


def _energy_observable(params):
    b = params.centers
    kk = params.binding
    return _Quadratic(
        c=0.5 * kk * b * b, lq=-kk * b, mqq=0.5 * kk, mpp=0.5 / params.mass
    )


def spectral_energy(state, params, k):
    """Mean and variance of the non-interacting energy density h(k).

    h(k) = sum_j (p_j^2 / 2m + K (q_j - b_j)^2 / 2) exp(i k q_j); the nu^2
    bond energy is excluded.
    """
    return _quadratic_moment(state, k, _energy_observable(params), "energy")


def spectral_moment(state, k, which, params=None):
    if which == "number":
        return spectral_number(state, k)
    if which == "momentum":
        return spectral_momentum(state, k)
    if which == "energy":
        if params is None:
            raise ValueError("energy moments need chain parameters")
        return spectral_energy(state, params, k)
    raise ValueError(f"unknown density kind {which!r}")


def _check_grid(grid, window):
    x = np.asarray(grid, dtype=float)
    if window <= 0:
        raise ValueError("window must be > 0")
    if x.ndim != 1 or x.size < 2:
        raise ValueError("grid must be a 1-D array with at least two points")
    dx = np.diff(x)
    if not np.allclose(dx, dx[0], rtol=1e-9, atol=0):
        raise ValueError("grid must be uniform")
    if dx[0] > 0.5 * window * (1 + 1e-12):
        raise ValueError(f"grid too coarse: dx = {dx[0]:.3g} > window / 2 = {window / 2:.3g}")
    return x


def real_space_fields(state, grid, window, params=None, n_floor=None, literal_temperature=False):
    """Gaussian-smeared local densities on ``grid``.

    Each delta(q_j - x) is replaced by a normal kernel of width ``window``.
    Particle j then contributes a Gaussian of variance window^2 + (Delta q_j)^2
    about <q_j>, times conditional moments of (q_j, p_j).

    ``params`` supplies m, K and b_j; without it m = 1, K = 0 and b = 0.
    ``n_floor`` (default 1e-3 of max n) controls where T is reported.
    """
    x = _check_grid(grid, window)
    m = params.mass if params is not None else 1.0
    kk = params.binding if params is not None else 0.0
    b = params.centers if params is not None else np.zeros(state.n)

    mq, mp = state.q_mean[:, None], state.p_mean[:, None]
    s2, c, vp = state.q_var[:, None], state.qp_cov[:, None], state.p_var[:, None]
    d2 = s2 + window * window
    dev = x[None, :] - mq
    w = np.exp(-0.5 * dev * dev / d2) / np.sqrt(2 * np.pi * d2)

    tq = mq + s2 / d2 * dev
    vq = s2 * window * window / d2
    tp = mp + c / d2 * dev
    vpc = vp - c * c / d2
    cc = c * window * window / d2
    u = tq - b[:, None]

    p2 = tp * tp + vpc
    p3 = tp ** 3 + 3 * tp * vpc
    pu2 = tp * (u * u + vq) + 2 * u * cc

    n = w.sum(axis=0)
    g = (w * tp).sum(axis=0)
    tau = (w * p2).sum(axis=0) / m
    h = (w * (p2 / (2 * m) + 0.5 * kk * (u * u + vq))).sum(axis=0)
    jcur = (w * (p3 / (2 * m * m) + kk / (2 * m) * pu2)).sum(axis=0)
    qn = (w * tq).sum(axis=0)
    bn = (w * b[:, None]).sum(axis=0)

    heat = vp if literal_temperature else vpc
    num = (w * np.broadcast_to(heat, w.shape)).sum(axis=0) / m
    if n_floor is None:
        n_floor = 1e-3 * max(float(n.max()), 1e-300)
    mask = n >= n_floor
    temp = np.full_like(n, np.nan)
    temp[mask] = num[mask] / n[mask]
    return DensityField(x, float(window), n, g, h, tau, jcur, temp, mask, qn, bn)


def temperature_field(state, grid, window, params=None, n_floor=None, literal=False):
    """Temperature theta(x) = kT(x) from smeared momentum fluctuations.

    Uses Var(p_j | q_j) under the smearing kernel; ``literal=True`` uses the raw
    (Delta p_j)^2 instead. Cells with n < n_floor are NaN.
    """
    field = real_space_fields(
        state, grid, window, params=params, n_floor=n_floor, literal_temperature=literal
    )
    return field.T


def correlation_profile(state):
    """Average normalised sigma(q_j, q_{j+r}) over j (periodic indices).

    Returns ``(profile, corr_length)``; ``profile`` covers r = 0..N//2 and the
    correlation length is where |profile| first drops below 1/e (linear
    interpolation), ``inf`` if it never does.
    """
    sqq = state.cov_qq
    n = state.n
    var = np.diag(sqq)
    good = var > 0
    if not np.all(good):
        logger.info("%d particles with zero position variance excluded", int(np.sum(~good)))
    rmax = n // 2
    idx = np.arange(n)
    profile = np.zeros(rmax + 1)
    for r in range(rmax + 1):
        jdx = (idx + r) % n
        ok = good & good[jdx]
        if not np.any(ok):
            profile[r] = np.nan
            continue
        corr = sqq[idx[ok], jdx[ok]] / np.sqrt(var[idx[ok]] * var[jdx[ok]])
        profile[r] = corr.mean()
    return profile, _crossing(profile, 1.0 / math.e)


def _crossing(profile, level):
    mag = np.abs(profile)
    below = np.nonzero(mag < level)[0]
    if below.size == 0:
        return math.inf
    r = int(below[0])
    if r == 0:
        return 0.0
    hi, lo = mag[r - 1], mag[r]
    return float(r - 1 + (hi - level) / (hi - lo))


def conservation_residual(states, dt, params, grid, window):
    """Discrete residuals of the three local conservation laws.

    ``states`` are sampled at uniform spacing ``dt``, which should not exceed
    0.01/Omega (a warning is logged otherwise). Time derivatives are
    centred differences over the interior samples and spatial derivatives
    centred differences over the interior grid points. The momentum balance
    uses the smeared force sum_j <K (q_j - b_j) K_window(x - q_j)>, which is
    K x n(x) - K sum_j b_j delta(q_j - x) once the window shrinks to zero.

    Returns a dict with, per law, the absolute L2 residual norm ``abs``, the
    norms of each term and ``rel`` = abs / largest term norm.
    """
    if len(states) < 3:
        raise ValueError("need at least three time samples")
    if params.omega > 0 and dt > 0.01 / params.omega * (1 + 1e-12):
        logger.warning("dt = %.3g exceeds 0.01/Omega = %.3g; time derivatives are under-resolved",
                       dt, 0.01 / params.omega)
    fields = [real_space_fields(s, grid, window, params=params) for s in states]
    m, kk = params.mass, params.binding
    dx = fields[0].dx

    def stack(name):
        return np.array([getattr(f, name) for f in fields])

    n, g, h, tau, jc = (stack(k) for k in ("n", "g", "h", "tau", "j"))
    force = kk * (stack("qn") - stack("bn"))

    def ddt(a):
        return (a[2:] - a[:-2]) / (2 * dt)

    def ddx(a):
        return (a[:, 2:] - a[:, :-2]) / (2 * dx)

    def inner(a):
        return a[1:-1, 1:-1]

    terms = {
        "number": [ddt(n)[:, 1:-1], ddx(g)[1:-1] / m],
        "momentum": [ddt(g)[:, 1:-1], ddx(tau)[1:-1], inner(force)],
        "energy": [ddt(h)[:, 1:-1], ddx(jc)[1:-1]],
    }
    out = {}
    for law, parts in terms.items():
        res = sum(parts)
        norms = [float(np.sqrt(np.mean(p * p))) for p in parts]
        ab = float(np.sqrt(np.mean(res * res)))
        out[law] = {"abs": ab, "terms": norms, "rel": ab / max(max(norms), 1e-300)}
    if params.coupling != 0:
        logger.info("nu^2 != 0: momentum and energy residuals omit interaction fluxes")
    return out
