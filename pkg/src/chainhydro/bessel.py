"""Bessel functions of the first kind for integer order.

Miller's downward recurrence normalised with ``J_0 + 2 sum J_2k = 1``.
Very large arguments use the Hankel asymptotic expansion.
"""

import math

import numpy as np

__all__ = ["bessel_j", "bessel_j_orders", "bessel_j_asymptotic", "bessel_jp"]

# Above this argument the Hankel expansion is used (when the order is small
# enough for it to converge to double precision).
_ASYMPTOTIC_X = 1.0e4
_RESCALE = 1.0e200


def _start_order(r_max, x_max):
    top = max(float(r_max), float(x_max))
    m = int(top + 30 + 12 * math.sqrt(top + 1.0))
    return m + (m % 2)


def _miller(r_max, x):
    """All orders 0..r_max at the (positive) arguments ``x`` (1-D array)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((r_max + 1, x.size))
    if x.size == 0:
        return out
    m = _start_order(r_max, x.max())
    j_next = np.zeros_like(x)
    j_cur = np.full_like(x, 1.0e-300)
    norm = np.zeros_like(x)
    inv_x = 2.0 / x
    for k in range(m, 0, -1):
        j_prev = k * inv_x * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        # j_cur now holds the (unnormalised) order k - 1
        order = k - 1
        if order <= r_max:
            out[order] = j_cur
        if order % 2 == 0 and order > 0:
            norm += 2.0 * j_cur
        big = np.abs(j_cur) > _RESCALE
        if np.any(big):
            scale = np.where(big, 1.0 / _RESCALE, 1.0)
            j_cur = j_cur * scale
            j_next = j_next * scale
            norm = norm * scale
            out[: r_max + 1] *= scale
    norm += j_cur  # order 0
    return out / norm


def bessel_j_asymptotic(r, x, terms=12):
    """Hankel expansion of J_r(x) for large x (``terms=1`` is the leading cosine)."""
    x = np.asarray(x, dtype=float)
    mu = 4.0 * r * r
    chi = x - (0.5 * r + 0.25) * math.pi
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(1, 2 * terms):
        term = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if k % 2 == 1:
            q = q + (-1) ** ((k - 1) // 2) * term
        else:
            p = p + (-1) ** (k // 2) * term
    return np.sqrt(2.0 / (math.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def bessel_j_orders(r_max, x):
    """Return ``J_0(x) .. J_{r_max}(x)`` with shape ``(r_max + 1,) + x.shape``."""
    if r_max < 0:
        raise ValueError("r_max must be non-negative")
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    out = np.zeros((r_max + 1, flat.size))
    ax = np.abs(flat)
    zero = ax == 0.0
    out[0, zero] = 1.0
    far = (ax > _ASYMPTOTIC_X) & (ax > 4.0 * r_max * r_max)
    near = ~zero & ~far
    if np.any(near):
        out[:, near] = _miller(r_max, ax[near])
    if np.any(far):
        for r in range(r_max + 1):
            out[r, far] = bessel_j_asymptotic(r, ax[far])
    # J_r(-x) = (-1)^r J_r(x)
    neg = flat < 0
    if np.any(neg):
        odd = np.arange(r_max + 1) % 2 == 1
        out[np.ix_(odd, neg)] *= -1.0
    return out.reshape((r_max + 1,) + x.shape)


def bessel_j(r, x):
    """Bessel function J_r(x) for integer order ``r`` (any sign) and real ``x``."""
    r = int(r)
    sign = 1.0
    if r < 0:
        r = -r
        sign = -1.0 if r % 2 else 1.0
    vals = bessel_j_orders(r, x)[r]
    if np.ndim(vals) == 0:
        return sign * float(vals)
    return sign * vals


def bessel_jp(r, x):
    """Derivative d/dx J_r(x) = (J_{r-1} - J_{r+1}) / 2."""
    return 0.5 * (bessel_j(r - 1, x) - bessel_j(r + 1, x))
