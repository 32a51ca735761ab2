"""Outgoing scalar Helmholtz kernel ``g(x, y) = exp(ik|x-y|) / (4 pi |x-y|)``.

All functions broadcast over leading axes of ``x`` and ``y``.
"""

from __future__ import annotations

import numpy as np

from .errors import PreconditionError, SingularityError

COINCIDENT_TOL = 1e-14

# |g(x,y) - g(x,x_m)| <= c a max(k/d, 1/d^2) holds with c = 1/(2 pi) + 1/pi
# ~ 0.48 for d >= 2a; 2.0 leaves margin for the sampled checks.
KERNEL_DIFF_CONSTANT = 2.0


def _separation(x, y):
    diff = np.asarray(x, float) - np.asarray(y, float)
    r = np.linalg.norm(diff, axis=-1)
    if np.any(r < COINCIDENT_TOL):
        raise SingularityError("kernel evaluated at coincident points")
    return diff, r


def green(x, y, k: float):
    _, r = _separation(x, y)
    return np.exp(1j * k * r) / (4 * np.pi * r)


def grad_x_green(x, y, k: float):
    """Gradient of ``g`` with respect to its first argument."""
    diff, r = _separation(x, y)
    g = np.exp(1j * k * r) / (4 * np.pi * r)
    factor = g * (1j * k - 1.0 / r) / r
    return factor[..., None] * diff


def green_and_grad(diff, r, k: float):
    """Kernel and first-argument gradient from precomputed ``x - y`` and
    ``|x - y|`` (no coincidence check; callers guarantee ``r > 0``)."""
    g = np.exp(1j * k * r) / (4 * np.pi * r)
    return g, (g * (1j * k - 1.0 / r) / r)[..., None] * diff


def far_field_green(x, y, k: float, origin_scale: float):
    """Far-zone form ``exp(ik|x|)/(4 pi |x|) * exp(-ik beta.y)``, ``beta = x/|x|``.

    Relative error against :func:`green` is ``O(a/|x|) + O(k a**2/|x|)``
    for ``|y| <= a = origin_scale``.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    rx = np.linalg.norm(x, axis=-1)
    if np.any(rx <= 2 * origin_scale):
        raise PreconditionError(f"far-field form needs |x| > 2a; |x|={np.min(rx)}, a={origin_scale}")
    beta = x / rx[..., None]
    return np.exp(1j * k * rx) / (4 * np.pi * rx) * np.exp(-1j * k * np.sum(beta * y, axis=-1))


def kernel_diff_bound(a: float, d: float, k: float) -> float:
    """Upper bound for ``|g(x,y) - g(x,x_m)|`` when ``|y-x_m| <= a``, ``|x-x_m| = d``."""
    if d <= 2 * a:
        raise PreconditionError(f"kernel difference bound needs d > 2a (d={d}, a={a})")
    return KERNEL_DIFF_CONSTANT * a * max(k / d, 1.0 / d**2)


def helmholtz_residual(func, x, k: float, h: float):
    """``(laplacian + k**2) func`` at ``x`` by the 7-point stencil."""
    x = np.asarray(x, float)
    centre = func(x)
    lap = -6.0 * centre
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        lap = lap + func(x + e) + func(x - e)
    return lap / h**2 + k**2 * centre
