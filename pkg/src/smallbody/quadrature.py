"""Product quadrature over balls and boxes, including 1/r and 1/r**2
point singularities.

Ball rules are Gauss-Legendre in the radial variable ``t = r/a`` (optionally
split into panels refined geometrically towards ``t = 1``), Gauss-Legendre
in ``cos(theta)`` and the trapezoid rule in ``phi``.  Singular integrands are
handled by re-centring the spherical coordinates on the singular point, so
the ``r**2`` Jacobian absorbs the singularity.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .core_types import Box
from .errors import QuadratureError

FALLBACK_DISTANCE = 10.0


@lru_cache(maxsize=64)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int, lo: float = -1.0, hi: float = 1.0):
    """``n``-point Gauss-Legendre nodes and weights mapped to ``[lo, hi]``."""
    x, w = _leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def graded_rule(n: int, levels: int = 0):
    """Composite Gauss rule on ``[0, 1]`` with panels halving towards 1.

    Panel breaks at ``1 - 2**-j`` for ``j = 1..levels``; each panel gets
    ``n`` points.  ``levels=0`` is the plain ``n``-point rule.
    """
    if levels <= 0:
        return gauss_legendre(n, 0.0, 1.0)
    breaks = np.concatenate(([0.0], 1.0 - 0.5 ** np.arange(1, levels + 1), [1.0]))
    xs, ws = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        x, w = gauss_legendre(n, lo, hi)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


@dataclass(frozen=True)
class BallRule:
    """Spherical product rule for a ball of any center and radius.

    Parameters
    ----------
    n_r, n_theta, n_phi : int
        Radial points per panel, Gauss points in ``cos(theta)``, trapezoid
        points in ``phi``.
    levels : int
        Number of geometrically refined radial panels next to the surface.
    """

    n_r: int = 24
    n_theta: int = 24
    n_phi: int = 48
    levels: int = 0

    def __post_init__(self):
        if min(self.n_r, self.n_theta, self.n_phi) < 1 or self.levels < 0:
            raise ValueError(f"invalid ball rule orders: {self}")

    @property
    def radial(self):
        return graded_rule(self.n_r, self.levels)

    @property
    def angular(self):
        """Unit directions ``(n_dir, 3)`` and solid-angle weights summing to 4 pi."""
        return _angular(self.n_theta, self.n_phi)

    def nodes(self, center, radius: float):
        """Quadrature points ``(N, 3)`` and volume weights ``(N,)``."""
        t, wt = self.radial
        dirs, wd = self.angular
        pts = np.asarray(center, float) + radius * t[:, None, None] * dirs[None, :, :]
        w = radius**3 * (t**2 * wt)[:, None] * wd[None, :]
        return pts.reshape(-1, 3), w.reshape(-1)

    def refined(self, factor: int = 2) -> "BallRule":
        return BallRule(self.n_r * factor, self.n_theta * factor, self.n_phi * factor, self.levels)

    def coarsened(self) -> "BallRule":
        return BallRule(max(1, self.n_r // 2), max(1, self.n_theta // 2), max(3, self.n_phi // 2), self.levels)


@lru_cache(maxsize=32)
def _angular(n_theta: int, n_phi: int):
    mu, wmu = gauss_legendre(n_theta)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - mu**2)
    dirs = np.stack(
        [
            np.outer(st, np.cos(phi)),
            np.outer(st, np.sin(phi)),
            np.outer(mu, np.ones(n_phi)),
        ],
        axis=-1,
    ).reshape(-1, 3)
    w = np.outer(wmu, np.full(n_phi, 2 * np.pi / n_phi)).reshape(-1)
    dirs.setflags(write=False)
    w.setflags(write=False)
    return dirs, w


DEFAULT_BALL_RULE = BallRule()


@dataclass(frozen=True)
class BoxRule:
    """Tensor Gauss-Legendre rule with ``n`` points per axis."""

    n: int = 16

    def nodes(self, box: Box):
        xs = [gauss_legendre(self.n, box.lo[i], box.hi[i]) for i in range(3)]
        X, Y, Z = np.meshgrid(xs[0][0], xs[1][0], xs[2][0], indexing="ij")
        W = np.einsum("i,j,k->ijk", xs[0][1], xs[1][1], xs[2][1])
        return np.stack([X, Y, Z], axis=-1).reshape(-1, 3), W.reshape(-1)


def _sum(f: Callable, pts: np.ndarray, w: np.ndarray):
    vals = np.asarray(f(pts))
    if vals.shape[0] != pts.shape[0]:
        raise QuadratureError(
            f"integrand returned shape {vals.shape} for {pts.shape[0]} nodes"
        )
    bad = ~np.isfinite(vals)
    if bad.any():
        idx = int(np.nonzero(bad.reshape(len(pts), -1).any(axis=1))[0][0])
        raise QuadratureError(f"non-finite integrand value at node {pts[idx]}")
    if vals.ndim == 1:
        return w @ vals
    return np.tensordot(w, vals, axes=(0, 0))


def integrate_ball(f: Callable, center, radius: float, rule: BallRule = DEFAULT_BALL_RULE):
    """Integrate ``f`` over the ball.  ``f`` maps ``(N, 3)`` points to
    ``(N,)`` scalars or ``(N, 3)`` vectors."""
    pts, w = rule.nodes(center, radius)
    return _sum(f, pts, w)


def integrate_ball_with_error(f: Callable, center, radius: float, rule: BallRule = DEFAULT_BALL_RULE):
    """Integral plus an error estimate from the same rule at half order."""
    value = integrate_ball(f, center, radius, rule)
    coarse = integrate_ball(f, center, radius, rule.coarsened())
    scale = np.max(np.abs(value)) if np.ndim(value) else abs(value)
    est = max(float(np.max(np.abs(value - coarse))), 1e-14 * float(scale))
    return value, est


def integrate_about(f: Callable, point, center, radius: float, rule: BallRule = DEFAULT_BALL_RULE):
    """Integrate ``f`` over the ball using spherical coordinates centred at
    ``point``, which may be a point singularity of ``f`` of order up to
    ``1/r**2``.

    Inside the ball every ray from ``point`` is cut at the sphere.  For a
    point outside but within ``10 * radius`` of the center the directions
    are restricted to the cone subtended by the ball.  Farther away the
    plain ball rule is used.
    """
    point = np.asarray(point, float)
    center = np.asarray(center, float)
    off = point - center
    dist = float(np.linalg.norm(off))
    t, wt = rule.radial
    if dist <= radius:
        dirs, wd = rule.angular
        b = dirs @ off
        R = -b + np.sqrt(np.maximum(b * b - (dist * dist - radius * radius), 0.0))
        r = R[None, :] * t[:, None]
        pts = point + r[..., None] * dirs[None, :, :]
        w = (R**3)[None, :] * (t**2 * wt)[:, None] * wd[None, :]
        return _sum(f, pts.reshape(-1, 3), w.reshape(-1))
    if dist > FALLBACK_DISTANCE * radius:
        return integrate_ball(f, center, radius, rule)
    # cone of directions hitting the ball
    axis = -off / dist
    # sin(psi) = (radius/dist) sin(beta) keeps the chord length smooth at the
    # tangent rays
    rho = radius / dist
    beta, wb = gauss_legendre(rule.n_theta, 0.0, 0.5 * np.pi)
    mu = np.sqrt(1.0 - (rho * np.sin(beta)) ** 2)
    wmu = wb * rho**2 * np.sin(beta) * np.cos(beta) / mu
    phi = 2 * np.pi * np.arange(rule.n_phi) / rule.n_phi
    e1, e2 = _orthonormal_pair(axis)
    st = np.sqrt(1.0 - mu**2)
    dirs = (
        mu[:, None, None] * axis
        + (st[:, None] * np.cos(phi)[None, :])[..., None] * e1
        + (st[:, None] * np.sin(phi)[None, :])[..., None] * e2
    ).reshape(-1, 3)
    wd = np.outer(wmu, np.full(rule.n_phi, 2 * np.pi / rule.n_phi)).reshape(-1)
    b = dirs @ (center - point)
    disc = np.sqrt(np.maximum(b * b - (dist * dist - radius * radius), 0.0))
    r_in, r_out = b - disc, b + disc
    r = r_in[None, :] + (r_out - r_in)[None, :] * t[:, None]
    pts = point + r[..., None] * dirs[None, :, :]
    w = (r_out - r_in)[None, :] * r**2 * wt[:, None] * wd[None, :]
    return _sum(f, pts.reshape(-1, 3), w.reshape(-1))


def _orthonormal_pair(axis):
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def integrate_ball_singular(
    f_smooth: Callable, singular_point, center, radius: float, k: float = 0.0,
    rule: BallRule = DEFAULT_BALL_RULE,
):
    """Integrate ``f_smooth(y) * g(y, singular_point)`` over the ball, with
    ``g`` the outgoing Helmholtz kernel of wavenumber ``k``."""
    s = np.asarray(singular_point, float)

    def integrand(y):
        r = np.linalg.norm(y - s, axis=-1)
        kern = np.exp(1j * k * r) / (4 * np.pi * r)
        vals = np.asarray(f_smooth(y))
        return vals * kern if vals.ndim == 1 else vals * kern[:, None]

    return integrate_about(integrand, s, center, radius, rule)


def integrate_box(f: Callable, box: Box, rule: BoxRule = BoxRule()):
    pts, w = rule.nodes(box)
    return _sum(f, pts, w)


def integrate_box_singular(f: Callable, point, box: Box, n: int = 16):
    """Integrate ``f`` over ``box`` when ``f`` may be singular like
    ``1/|y - point|`` at an interior (or boundary) point.

    The box is split into six pyramids with apex at ``point``; in each the
    map ``y = point + s (F(u, v) - point)`` has Jacobian ``s**2 h_F``.
    """
    point = np.asarray(point, float)
    s, ws = gauss_legendre(n, 0.0, 1.0)
    total = 0.0
    for ax in range(3):
        for side in (box.lo, box.hi):
            h = abs(side[ax] - point[ax])
            if h == 0.0:
                continue
            u_ax, v_ax = [i for i in range(3) if i != ax]
            u, wu = gauss_legendre(n, box.lo[u_ax], box.hi[u_ax])
            v, wv = gauss_legendre(n, box.lo[v_ax], box.hi[v_ax])
            face = np.empty((n, n, 3))
            face[..., ax] = side[ax]
            face[..., u_ax] = u[:, None]
            face[..., v_ax] = v[None, :]
            pts = point + s[:, None, None, None] * (face - point)[None]
            w = (s**2 * ws)[:, None, None] * h * np.outer(wu, wv)[None]
            total = total + _sum(f, pts.reshape(-1, 3), w.reshape(-1))
    return total
