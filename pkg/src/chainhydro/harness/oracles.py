"""Independent reference computations used to check the closed forms.

None of these share code with the closed-form moments or propagators:
the Monte Carlo sampler draws phase-space points and evaluates observables
pointwise, the ODE oracle integrates Hamilton's equations with RK4, and the
Bessel series sums the power series in extended precision.
"""

import math
from dataclasses import dataclass

import mpmath
import numpy as np

__all__ = ["MCEstimate", "make_rng", "mc_oracle", "ode_oracle", "bessel_series"]

MIN_SAMPLES = 1000
_BATCH = 20000
SPECTRAL = ("number", "momentum", "energy")
FIELDS = ("n", "g", "tau", "h", "j")


def make_rng(seed):
    """Counter-based Philox stream; identical seeds give identical draws."""
    return np.random.Generator(np.random.Philox(int(seed) % 2**64))


@dataclass(frozen=True)
class MCEstimate:
    """Sample mean and variance with standard errors.

    For complex observables ``mean_se`` is ``se(Re) + 1j * se(Im)`` and the
    variance is E|A - <A>|^2.
    """

    mean: object
    mean_se: object
    variance: object
    variance_se: object
    samples: int


def _factor(cov):
    w, u = np.linalg.eigh(0.5 * (cov + cov.T))
    return u * np.sqrt(np.clip(w, 0.0, None))


def _parse(observable):
    if isinstance(observable, str):
        observable = {"which": observable}
    spec = dict(observable)
    which = spec.get("which")
    if which in SPECTRAL:
        if "k" not in spec:
            raise ValueError("spectral observable needs a wavenumber 'k'")
        return "spectral", spec
    if which in FIELDS:
        if "grid" not in spec or "window" not in spec:
            raise ValueError("field observable needs 'grid' and 'window'")
        return "field", spec
    raise ValueError(f"unsupported observable spec {observable!r}")


def _local(which, q, p, m, kk, b):
    # per-particle weight multiplying e^{ikq} or the smearing kernel
    if which in ("number", "n"):
        return np.ones_like(q)
    if which in ("momentum", "g"):
        return p
    if which == "tau":
        return p * p / m
    u2 = (q - b) ** 2
    if which in ("energy", "h"):
        return p * p / (2 * m) + 0.5 * kk * u2
    if which == "j":
        return p / m * (p * p / (2 * m) + 0.5 * kk * u2)
    raise ValueError(which)


def mc_oracle(state, observable, samples, seed, params=None):
    """Monte Carlo estimate of a density observable under the Gaussian state.

    ``observable`` is ``{"which": "number" | "momentum" | "energy", "k": float}``
    for spectral densities or ``{"which": "n" | "g" | "tau" | "h" | "j",
    "grid": array, "window": float}`` for smeared real-space densities.
    Energy-type observables use m, K and b_j from ``params`` (defaults
    m = 1, K = 0, b = 0).
    """
    kind, spec = _parse(observable)
    samples = int(samples)
    if samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples")
    n = state.n
    m = params.mass if params is not None else 1.0
    kk = params.binding if params is not None else 0.0
    b = params.centers if params is not None else np.zeros(n)
    rng = make_rng(seed)
    chol = _factor(np.asarray(state.covariance))
    mu = np.asarray(state.mean)
    which = spec["which"]
    if kind == "field":
        grid = np.asarray(spec["grid"], dtype=float)
        window = float(spec["window"])
        norm = 1.0 / math.sqrt(2 * math.pi * window * window)

    values = []
    done = 0
    while done < samples:
        size = min(_BATCH, samples - done)
        z = mu + rng.standard_normal((size, 2 * n)) @ chol.T
        q, p = z[:, :n], z[:, n:]
        w = _local(which, q, p, m, kk, b)
        if kind == "spectral":
            values.append(np.sum(w * np.exp(1j * float(spec["k"]) * q), axis=1))
        else:
            out = np.zeros((size, grid.size))
            for j in range(n):
                dev = grid[None, :] - q[:, j, None]
                out += w[:, j, None] * norm * np.exp(-0.5 * dev * dev / (window * window))
            values.append(out)
        done += size
    vals = np.concatenate(values, axis=0)

    mean = vals.mean(axis=0)
    dev = vals - mean
    sq = (dev * np.conj(dev)).real
    var = sq.mean(axis=0) * samples / (samples - 1)
    root = math.sqrt(samples)
    if np.iscomplexobj(vals):
        se = vals.real.std(axis=0, ddof=1) / root + 1j * vals.imag.std(axis=0, ddof=1) / root
    else:
        se = vals.std(axis=0, ddof=1) / root
    var_se = sq.std(axis=0, ddof=1) / root
    if kind == "spectral":
        return MCEstimate(complex(mean), complex(se), float(var), float(var_se), samples)
    return MCEstimate(mean, se, var, var_se, samples)


def ode_oracle(params, mean0, t_final, dt, record_every=1):
    """Classic RK4 integration of Hamilton's equations for the phase-space means.

    Returns ``(times, trajectory)`` with one row per recorded step; the step
    is shortened so that ``t_final`` is hit exactly.
    """
    omega = params.omega
    if dt <= 0 or dt > 0.01 / omega * (1 + 1e-12):
        raise ValueError(f"dt must lie in (0, 0.01/Omega] = (0, {0.01 / omega:.3g}]")
    n = params.n_particles
    m = params.mass
    v = params.stiffness
    force0 = params.binding * params.centers
    steps = max(1, int(math.ceil(t_final / dt - 1e-9)))
    h = t_final / steps

    def rate(z):
        q, p = z[:n], z[n:]
        return np.concatenate([p / m, force0 - v @ q])

    z = np.array(mean0, dtype=float)
    if z.shape != (2 * n,):
        raise ValueError(f"initial mean must have length {2 * n}")
    times, traj = [0.0], [z.copy()]
    for i in range(1, steps + 1):
        k1 = rate(z)
        k2 = rate(z + 0.5 * h * k1)
        k3 = rate(z + 0.5 * h * k2)
        k4 = rate(z + h * k3)
        z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if i % record_every == 0 or i == steps:
            times.append(i * h)
            traj.append(z.copy())
    return np.array(times), np.array(traj)


def bessel_series(r, x, digits=20):
    """J_r(x) from its power series summed in extended precision."""
    r = int(r)
    sign = 1
    if r < 0:
        r = -r
        sign = -1 if r % 2 else 1
    x = float(x)
    # terms grow to ~e^{|x|} before cancelling
    with mpmath.workdps(digits + 10 + int(0.45 * abs(x))):
        half = mpmath.mpf(x) / 2
        term = half ** r / mpmath.factorial(r)
        total = term
        tiny = mpmath.mpf(10) ** (-(digits + 5))
        k = 0
        while True:
            k += 1
            term = -term * half * half / (k * (k + r))
            total += term
            if k > abs(x) and abs(term) < tiny * max(abs(total), tiny):
                break
        return sign * float(total)
