"""Harmonic oscillator chain: parameters, Gaussian states and exact/Bessel propagation.

Phase-space ordering is fixed as ``(q_1..q_N, p_1..p_N)`` everywhere in the
package. Units have hbar = 1.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .bessel import bessel_j_orders

logger = logging.getLogger(__name__)

__all__ = [
    "NoConfiningScaleError",
    "ChainParams",
    "GaussianState",
    "AffinePropagator",
    "StateReport",
    "symplectic_form",
    "derived_params",
    "exact_propagator",
    "bessel_kernel",
    "kernel_completeness",
    "approx_propagator",
    "evolve",
    "energy_expectation",
    "symplectic_eigenvalues",
    "validate_state",
]

HBAR = 1.0


class NoConfiningScaleError(ValueError):
    """Raised when an operation needs Omega but K = nu^2 = 0."""


def symplectic_form(n):
    """Standard antisymmetric form J for the (q, p) block ordering."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


@dataclass(frozen=True, eq=False)
class ChainParams:
    """Physical constants of the chain.

    Parameters
    ----------
    n_particles : int
        Number of oscillators N.
    mass : float
        Particle mass m.
    coupling : float
        Nearest-neighbour spring constant nu^2.
    binding : float
        On-site binding constant K.
    centers : array_like, optional
        On-site equilibrium positions b_n (default zeros).
    periodic : bool
        Periodic closure q_{N+1} = q_1. With ``False`` the chain has free ends.
    allow_free : bool
        Permit K = nu^2 = 0 for N > 1 (free particles).
    """

    n_particles: int
    mass: float = 1.0
    coupling: float = 0.0
    binding: float = 1.0
    centers: np.ndarray = None
    periodic: bool = True
    allow_free: bool = False

    def __post_init__(self):
        n = int(self.n_particles)
        if n < 1:
            raise ValueError("n_particles must be >= 1")
        if not self.mass > 0:
            raise ValueError("mass must be > 0")
        if self.coupling < 0 or self.binding < 0:
            raise ValueError("coupling and binding must be >= 0")
        if self.coupling == 0 and self.binding == 0 and n > 1 and not self.allow_free:
            raise ValueError(
                "coupling = binding = 0 describes free particles; pass allow_free=True"
            )
        if self.centers is None:
            centers = np.zeros(n)
        else:
            centers = np.array(self.centers, dtype=float).reshape(-1)
            if centers.size != n:
                raise ValueError(f"expected {n} centers, got {centers.size}")
        centers.setflags(write=False)
        object.__setattr__(self, "n_particles", n)
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "coupling", float(self.coupling))
        object.__setattr__(self, "binding", float(self.binding))
        object.__setattr__(self, "centers", centers)

    @property
    def omega(self):
        """Omega = sqrt((K + 2 nu^2) / m)."""
        return math.sqrt((self.binding + 2.0 * self.coupling) / self.mass)

    @property
    def gamma(self):
        om2 = (self.binding + 2.0 * self.coupling) / self.mass
        if om2 == 0:
            raise NoConfiningScaleError("no confining scale: K = nu^2 = 0")
        return self.coupling / (self.mass * om2)

    @cached_property
    def laplacian(self):
        """Matrix L with sum_n (q_n - q_{n-1})^2 = q^T L q."""
        n = self.n_particles
        lap = np.zeros((n, n))
        if n == 1:
            return lap
        bonds = range(n) if self.periodic else range(1, n)
        for i in bonds:
            j = (i - 1) % n
            lap[i, i] += 1.0
            lap[j, j] += 1.0
            lap[i, j] -= 1.0
            lap[j, i] -= 1.0
        return lap

    @cached_property
    def stiffness(self):
        """Potential Hessian V = K I + nu^2 L."""
        return self.binding * np.eye(self.n_particles) + self.coupling * self.laplacian

    @cached_property
    def modes(self):
        """Normal-mode squared frequencies and eigenvectors of V / m."""
        w2, vecs = np.linalg.eigh(self.stiffness / self.mass)
        return np.clip(w2, 0.0, None), vecs

    @cached_property
    def fixed_point(self):
        """Static equilibrium positions (V^{-1} K b); zeros when K = 0."""
        if self.binding == 0:
            return np.zeros(self.n_particles)
        return np.linalg.solve(self.stiffness, self.binding * self.centers)

    def to_dict(self):
        return {
            "n_particles": self.n_particles,
            "mass": self.mass,
            "coupling": self.coupling,
            "binding": self.binding,
            "centers": [float(b) for b in self.centers],
            "periodic": self.periodic,
            "allow_free": self.allow_free,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        centers = data.pop("centers", None)
        spacing = data.pop("spacing", None)
        n = int(data["n_particles"])
        if centers is None and spacing is not None:
            centers = spacing * (np.arange(n) - (n - 1) / 2.0)
        return cls(centers=centers, **data)


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Gaussian phase-space state (mean vector and covariance matrix)."""

    mean: np.ndarray
    covariance: np.ndarray
    hbar: float = HBAR

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        if mean.size % 2:
            raise ValueError("mean must have even length 2N")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean {mean.size}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def n(self):
        return self.mean.size // 2

    @property
    def q_mean(self):
        return self.mean[: self.n]

    @property
    def p_mean(self):
        return self.mean[self.n :]

    @property
    def cov_qq(self):
        return self.covariance[: self.n, : self.n]

    @property
    def cov_qp(self):
        """Block with entries sigma(q_i, p_j)."""
        return self.covariance[: self.n, self.n :]

    @property
    def cov_pp(self):
        return self.covariance[self.n :, self.n :]

    @property
    def q_var(self):
        return np.diag(self.cov_qq).copy()

    @property
    def p_var(self):
        return np.diag(self.cov_pp).copy()

    @property
    def qp_cov(self):
        """Same-particle sigma(q_j, p_j)."""
        return np.diag(self.cov_qp).copy()

    @classmethod
    def product(cls, q_mean, p_mean, q_var, p_var, qp_cov=0.0):
        """Uncorrelated product of single-particle Gaussians."""
        q_mean = np.asarray(q_mean, dtype=float).reshape(-1)
        n = q_mean.size
        p_mean = np.broadcast_to(np.asarray(p_mean, dtype=float), (n,))
        q_var = np.broadcast_to(np.asarray(q_var, dtype=float), (n,))
        p_var = np.broadcast_to(np.asarray(p_var, dtype=float), (n,))
        qp_cov = np.broadcast_to(np.asarray(qp_cov, dtype=float), (n,))
        cov = np.zeros((2 * n, 2 * n))
        idx = np.arange(n)
        cov[idx, idx] = q_var
        cov[idx + n, idx + n] = p_var
        cov[idx, idx + n] = qp_cov
        cov[idx + n, idx] = qp_cov
        return cls(np.concatenate([q_mean, p_mean]), cov)

    @classmethod
    def ground_like(cls, params, q_mean=None, p_mean=0.0):
        """Product of single-oscillator ground states at frequency Omega."""
        om = params.omega
        if om == 0:
            raise NoConfiningScaleError("ground-like state needs Omega > 0")
        s2 = HBAR / (2.0 * params.mass * om)
        if q_mean is None:
            q_mean = params.fixed_point
        return cls.product(q_mean, p_mean, s2, (params.mass * om) ** 2 * s2)


@dataclass(frozen=True, eq=False)
class AffinePropagator:
    """Affine phase-space map x(t) = S x(0) + d."""

    matrix: np.ndarray
    drift: np.ndarray
    time: float = 0.0

    def __matmul__(self, other):
        # (self @ other) applies ``other`` first
        return AffinePropagator(
            self.matrix @ other.matrix,
            self.matrix @ other.drift + self.drift,
            self.time + other.time,
        )


@dataclass
class StateReport:
    symmetry_defect: float
    min_eigenvalue: float
    symplectic_eigenvalues: np.ndarray
    classical_point: bool = False
    warnings: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.errors


def derived_params(params):
    """Return ``(Omega, gamma, mode_freqs)`` for the chain.

    ``mode_freqs`` are sorted ascending and come from a direct eigen-decomposition
    of the stiffness matrix.
    """
    om = params.omega
    if om == 0:
        raise NoConfiningScaleError("no confining scale: K = nu^2 = 0")
    w2, _ = params.modes
    return om, params.gamma, np.sqrt(w2)


def circulant_mode_freqs(params):
    """Closed-form periodic-chain frequencies, in mode-index order j = 0..N-1."""
    n = params.n_particles
    j = np.arange(n)
    w2 = (params.binding + 4.0 * params.coupling * np.sin(np.pi * j / n) ** 2) / params.mass
    if n == 1:
        w2 = np.array([params.binding / params.mass])
    return np.sqrt(w2)


def _phase_blocks(params, t):
    w2, vecs = params.modes
    w = np.sqrt(w2)
    wt = w * t
    cos = np.cos(wt)
    sin = np.sin(wt)
    # sin(w t) / w -> t for the zero mode
    sinc = np.where(w > 0, sin / np.where(w > 0, w, 1.0), t)
    m = params.mass
    qq = (vecs * cos) @ vecs.T
    qp = (vecs * (sinc / m)) @ vecs.T
    pq = (vecs * (-m * w * sin)) @ vecs.T
    return qq, qp, pq


def exact_propagator(params, t):
    """Exact affine flow of the chain's equations of motion over time ``t``."""
    t = float(t)
    if not math.isfinite(t):
        raise ValueError("t must be finite")
    n = params.n_particles
    if params.binding == 0 and np.any(params.centers != 0):
        logger.info("K = 0: centers do not enter the force and are ignored")
    if t == 0:
        return AffinePropagator(np.eye(2 * n), np.zeros(2 * n), 0.0)
    qq, qp, pq = _phase_blocks(params, t)
    mat = np.block([[qq, qp], [pq, qq]])
    xstar = np.concatenate([params.fixed_point, np.zeros(n)])
    drift = xstar - mat @ xstar
    return AffinePropagator(mat, drift, t)


def _check_bessel_regime(params):
    if params.binding <= 0:
        raise ValueError("the Bessel approximation needs a bound chain (K > 0)")
    if params.gamma > 0.1:
        warnings.warn(
            f"gamma = {params.gamma:.3g} is not small; Bessel kernel is inaccurate",
            stacklevel=3,
        )


def _kernel_arrays(params, offsets, t):
    """f, g and their time derivatives for integer ``offsets`` at time ``t``."""
    om = params.omega
    z = params.gamma * om * t
    offsets = np.asarray(offsets)
    r_abs = np.abs(offsets)
    jr = bessel_j_orders(int(r_abs.max()) + 1, z)
    sign = np.where((offsets < 0) & (r_abs % 2 == 1), -1.0, 1.0)
    j = sign * jr[r_abs]
    # J_r' = (J_{r-1} - J_{r+1}) / 2 with J_{-1} = -J_1
    j_minus = np.where(r_abs == 0, -jr[1], jr[np.maximum(r_abs - 1, 0)])
    jp = sign * 0.5 * (j_minus - jr[r_abs + 1])
    phase = om * t - 0.5 * np.pi * offsets
    c, s = np.cos(phase), np.sin(phase)
    f = j * c
    g = j * s
    dz = params.gamma * om
    fdot = dz * jp * c - om * j * s
    gdot = dz * jp * s + om * j * c
    return f, g, fdot, gdot


def bessel_kernel(params, r, t):
    """Weak-coupling kernel (f_r(t), g_r(t)) = J_r(gamma Omega t) (cos, sin)(Omega t - pi r / 2)."""
    _check_bessel_regime(params)
    f, g, _, _ = _kernel_arrays(params, np.array([int(r)]), float(t))
    return float(f[0]), float(g[0])


def kernel_completeness(params, t, r_max):
    """Deficit 1 - sum_{|r| <= r_max} (f_r^2 + g_r^2); the full sum is exactly 1."""
    _check_bessel_regime(params)
    offsets = np.arange(-int(r_max), int(r_max) + 1)
    f, g, _, _ = _kernel_arrays(params, offsets, float(t))
    return float(1.0 - math.fsum(f * f + g * g))


def approx_propagator(params, t, r_max):
    """Propagator assembled from the Bessel kernel, truncated at |r - n| <= r_max."""
    _check_bessel_regime(params)
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    n = params.n_particles
    limit = (n - 1) // 2 if params.periodic else n - 1
    r_max = min(int(r_max), limit)
    offsets = np.arange(-r_max, r_max + 1)
    f, g, fdot, gdot = _kernel_arrays(params, offsets, float(t))
    m, om = params.mass, params.omega
    qq = np.zeros((n, n))
    qp = np.zeros((n, n))
    pq = np.zeros((n, n))
    pp = np.zeros((n, n))
    rows = np.arange(n)
    for k, off in enumerate(offsets):
        cols = rows + off
        if params.periodic:
            cols = cols % n
            sel = rows
        else:
            ok = (cols >= 0) & (cols < n)
            sel, cols = rows[ok], cols[ok]
        qq[sel, cols] += f[k]
        qp[sel, cols] += g[k] / (m * om)
        pq[sel, cols] += m * fdot[k]
        pp[sel, cols] += gdot[k] / om
    mat = np.block([[qq, qp], [pq, pp]])
    xstar = np.concatenate([params.fixed_point, np.zeros(n)])
    return AffinePropagator(mat, xstar - mat @ xstar, float(t))


def evolve(state, prop):
    """Transport a Gaussian state: mean -> S mean + d, covariance -> S Sigma S^T."""
    if prop.matrix.shape != state.covariance.shape:
        raise ValueError(
            f"propagator of shape {prop.matrix.shape} cannot act on a "
            f"{state.covariance.shape} covariance"
        )
    s = prop.matrix
    cov = s @ state.covariance @ s.T
    return GaussianState(s @ state.mean + prop.drift, 0.5 * (cov + cov.T), state.hbar)


def energy_expectation(state, params):
    """Expectation value of the chain Hamiltonian (including the nu^2 term)."""
    q, p = state.q_mean, state.p_mean
    v = params.stiffness
    b = params.centers
    k = params.binding
    classical = (
        p @ p / (2 * params.mass)
        + 0.5 * q @ v @ q
        - k * b @ q
        + 0.5 * k * b @ b
    )
    fluct = 0.5 * np.sum(v * state.cov_qq) + np.trace(state.cov_pp) / (2 * params.mass)
    return float(classical + fluct)


def symplectic_eigenvalues(cov):
    """Williamson symplectic eigenvalues of a 2N x 2N covariance, ascending."""
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0] // 2
    ev = np.linalg.eigvals(1j * symplectic_form(n) @ cov)
    nu = np.sort(np.abs(ev.real))
    return nu[::2]


def validate_state(state, tol_sym=1e-12, tol_psd=1e-10):
    """Diagnostics for a Gaussian state; never raises."""
    cov = state.covariance
    scale = max(np.max(np.abs(cov)), 1e-300)
    sym = float(np.max(np.abs(cov - cov.T)) / scale) if cov.size else 0.0
    sym_cov = 0.5 * (cov + cov.T)
    eigs = np.linalg.eigvalsh(sym_cov)
    min_eig = float(eigs[0])
    nus = symplectic_eigenvalues(sym_cov)
    report = StateReport(sym, min_eig, nus)
    if not np.any(cov):
        report.classical_point = True
        report.warnings.append("classical point distribution (zero covariance)")
    if sym > tol_sym:
        report.errors.append(f"covariance not symmetric (relative defect {sym:.3g})")
    trace = float(np.trace(sym_cov))
    if min_eig < -tol_psd * max(trace, 1e-300) or (trace == 0 and min_eig < 0):
        report.errors.append(f"covariance not positive semidefinite (min eigenvalue {min_eig:.3g})")
    diag = np.diag(cov)
    if np.any(diag < 0):
        report.errors.append("negative variance on the diagonal")
    if not report.classical_point and np.any(nus < 0.5 * state.hbar * (1 - 1e-9)):
        report.warnings.append(
            f"violates the uncertainty bound: min symplectic eigenvalue {nus.min():.3g} < hbar/2"
        )
    return report
