"""Radial scatterer potential and its moment integrals.

Inside a particle of radius ``a`` the potential is

    p(r) = gamma / (4 pi a**kappa) * (1 - t)**2 * h(t),   t = r / a,

and zero outside.  ``q = grad K^2 / K^2`` with ``K^2 = k^2 + p``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core_types import CONSTANT_SHAPE, Particle, Shape
from .errors import DegeneratePotentialError
from .quadrature import BallRule, gauss_legendre, graded_rule, integrate_ball

K2_TOL = 1e-12
PRESCAN_SAMPLES = 1024


@dataclass(frozen=True)
class RadialProfile:
    gamma: complex
    kappa: float
    radius: float
    shape: Shape = CONSTANT_SHAPE

    @classmethod
    def of(cls, particle: Particle) -> "RadialProfile":
        return cls(particle.gamma, particle.kappa, particle.radius, particle.shape)

    @property
    def amplitude(self) -> complex:
        return self.gamma / (4 * np.pi * self.radius**self.kappa)

    def p(self, r):
        t = np.asarray(r, float) / self.radius
        inside = t <= 1.0
        tc = np.where(inside, t, 1.0)
        return np.where(inside, self.amplitude * (1 - tc) ** 2 * self.shape(tc), 0.0 + 0.0j)

    def dp(self, r):
        """Radial derivative ``dp/dr``."""
        t = np.asarray(r, float) / self.radius
        inside = t <= 1.0
        tc = np.where(inside, t, 1.0)
        dt = -2 * (1 - tc) * self.shape(tc) + (1 - tc) ** 2 * self.shape.derivative(tc)
        return np.where(inside, self.amplitude * dt / self.radius, 0.0 + 0.0j)

    def nu(self, k: float) -> float:
        return 4 * np.pi * k**2 * self.radius**self.kappa

    def shape_moment(self) -> float:
        """``int_0^1 (1-t)^2 h(t) t^2 dt`` (1/30 for constant h)."""
        if self.shape.moment is not None:
            return self.shape.moment
        t, w = gauss_legendre(64, 0.0, 1.0)
        return float(w @ ((1 - t) ** 2 * self.shape(t) * t**2))

    def levels(self, k: float) -> int:
        """Radial panel refinement needed to resolve ``nu + gamma (1-t)^2``
        near ``t = 1``."""
        if self.gamma == 0:
            return 0
        width = np.sqrt(self.nu(k) / abs(self.gamma))
        return int(np.clip(np.ceil(np.log2(1.0 / width)) + 4, 0, 60))

    def check_denominator(self, k: float) -> None:
        """Pre-scan ``nu + gamma (1-t)^2 h`` (proportional to ``k^2 + p``)."""
        t = np.linspace(0.0, 1.0, PRESCAN_SAMPLES)
        den = self.nu(k) + self.gamma * (1 - t) ** 2 * self.shape(t)
        scale = max(self.nu(k), abs(self.gamma))
        if np.min(np.abs(den)) < K2_TOL * scale:
            raise DegeneratePotentialError(
                f"k^2 + p vanishes inside the particle (gamma={self.gamma}, k={k})"
            )
        if np.all(np.abs(den.imag) <= 1e-15 * np.abs(den)) and np.any(np.diff(np.sign(den.real)) != 0):
            raise DegeneratePotentialError(
                f"k^2 + p changes sign inside the particle (gamma={self.gamma}, k={k})"
            )


def p_of(r, profile: RadialProfile):
    return profile.p(r)


class PotentialField:
    """``p``, ``grad p``, ``q`` and ``K^2`` for a set of particles."""

    def __init__(self, particles: Sequence[Particle], k: float):
        self.particles = list(particles)
        self.k = float(k)
        self.profiles = [RadialProfile.of(pt) for pt in self.particles]
        self.centers = np.array([pt.center for pt in self.particles]).reshape(-1, 3)
        self.max_radius = max((pt.radius for pt in self.particles), default=0.0)
        self._tree = cKDTree(self.centers) if len(self.particles) else None

    def _locate(self, y):
        """Index of the particle containing each point, or -1."""
        y = np.atleast_2d(np.asarray(y, float))
        idx = np.full(len(y), -1)
        if self._tree is None:
            return y, idx
        dist, near = self._tree.query(y)
        for i, (d, j) in enumerate(zip(dist, near)):
            if d <= self.particles[j].radius:
                idx[i] = j
        return y, idx

    def _radial(self, y):
        y, idx = self._locate(y)
        rvec = np.zeros_like(y)
        inside = idx >= 0
        rvec[inside] = y[inside] - self.centers[idx[inside]]
        return y, idx, rvec, np.linalg.norm(rvec, axis=-1)

    def p(self, y):
        y, idx, _, r = self._radial(y)
        out = np.zeros(len(y), complex)
        for j in np.unique(idx[idx >= 0]):
            sel = idx == j
            out[sel] = self.profiles[j].p(r[sel])
        return out

    def K2(self, y):
        return self.k**2 + self.p(y)

    def grad_p(self, y):
        y, idx, rvec, r = self._radial(y)
        out = np.zeros((len(y), 3), complex)
        for j in np.unique(idx[idx >= 0]):
            sel = (idx == j) & (r > 0)
            out[sel] = self.profiles[j].dp(r[sel])[:, None] * rvec[sel] / r[sel, None]
        return out

    def q(self, y):
        K2 = self.K2(y)
        if np.any(np.abs(K2) < K2_TOL):
            raise DegeneratePotentialError("K^2 = k^2 + p vanishes at an evaluation point")
        return self.grad_p(y) / K2[:, None]


def q_of(y, field: PotentialField):
    return field.q(np.asarray(y, float)[None, :])[0]


def j_m_analytic(profile: RadialProfile) -> complex:
    """``int_B p dy = c1 a**(3 - kappa)`` with ``c1 = gamma int (1-t)^2 h t^2 dt``."""
    c1 = profile.gamma * profile.shape_moment()
    return c1 * profile.radius ** (3 - profile.kappa)


def j_m_quadrature(profile: RadialProfile, rule: BallRule = BallRule()) -> complex:
    return complex(integrate_ball(lambda y: profile.p(np.linalg.norm(y, axis=-1)), np.zeros(3), profile.radius, rule))


def _log_term(profile: RadialProfile, k: float, n: int = 32):
    t, w = graded_rule(n, profile.levels(k))
    F = profile.gamma * (1 - t) ** 2 * profile.shape(t)
    den = profile.nu(k) + F
    return t, w, F, den


def I_a(profile: RadialProfile, k: float, form: str = "direct", n: int = 32) -> complex:
    """``int_0^1 t^3 F'(t) / (nu + F(t)) dt``, ``F = gamma (1-t)^2 h``,
    ``nu = 4 pi k^2 a^kappa``.  Behaves like ``kappa ln a`` as ``a -> 0``.

    ``form="parts"`` evaluates the integrated-by-parts expression
    ``ln(nu) - 3 int t^2 ln(nu + F) dt`` instead.
    """
    if profile.gamma == 0:
        return 0j
    profile.check_denominator(k)
    t, w, F, den = _log_term(profile, k, n)
    if form == "direct":
        s = profile.shape
        dF = profile.gamma * (-2 * (1 - t) * s(t) + (1 - t) ** 2 * s.derivative(t))
        return complex(w @ (t**3 * dF / den))
    if form == "parts":
        # continuous branch of the log along t
        log_den = np.log(np.abs(den)) + 1j * np.unwrap(np.angle(den))
        return complex(np.log(profile.nu(k)) - 3 * (w @ (t**2 * log_den)))
    raise ValueError(f"unknown form {form!r}")


def I_r(profile: RadialProfile, k: float) -> complex:
    """``int_0^1 t^3 p_r(at) / (k^2 + p(at)) dt``; equals ``I_a / a``."""
    return I_a(profile, k) / profile.radius


def angular_factor(i: int, rule: BallRule = BallRule()) -> float:
    """``int_{S^2} (direction_i)^2 dOmega`` (= 4 pi / 3) by the rule's angular nodes."""
    dirs, w = rule.angular
    return float(w @ dirs[:, i] ** 2)


def Y_i(profile: RadialProfile, k: float, i: int, rule: BallRule = BallRule()) -> complex:
    """Diagonal ``i = j`` term: radial integral of ``r^3 p'/(k^2+p)`` times
    the angular factor of axis ``i``."""
    if profile.gamma == 0:
        return 0j
    profile.check_denominator(k)
    t, w = graded_rule(32, profile.levels(k))
    r = profile.radius * t
    radial = profile.radius**4 * (w @ (t**3 * profile.dp(r) / (k**2 + profile.p(r))))
    return complex(radial * angular_factor(i, rule))


def z_m_asymptotic(profile: RadialProfile, k: float, div_E: complex) -> complex:
    """Leading term ``(4 pi/3) a^4 I_r div E`` of :func:`Z_m_quadrature`."""
    return 4 * np.pi / 3 * profile.radius**4 * I_r(profile, k) * div_E


def Z_m_quadrature(particle: Particle, E: Callable, k: float, rule: BallRule | None = None) -> complex:
    """``int_B grad p . E / (k^2 + p) dy`` over the particle ball.

    ``E`` maps points ``(N, 3)`` to complex vectors ``(N, 3)``.
    """
    profile = RadialProfile.of(particle)
    if profile.gamma == 0:
        return 0j
    profile.check_denominator(k)
    if rule is None:
        rule = BallRule(levels=profile.levels(k))
    c = particle.center

    def integrand(y):
        rvec = y - c
        r = np.linalg.norm(rvec, axis=-1)
        radial = profile.dp(r) / (k**2 + profile.p(r)) / r
        return radial * np.einsum("ij,ij->i", rvec, E(y))

    return complex(integrate_ball(integrand, c, particle.radius, rule))


def off_diagonal_gradient_integral(particle: Particle, i: int, j: int, k: float, rule: BallRule | None = None) -> complex:
    """``int_B p' r r0_j r0_i / (k^2 + p) dy``; zero for ``i != j`` by symmetry."""
    profile = RadialProfile.of(particle)
    if rule is None:
        rule = BallRule(levels=profile.levels(k))
    c = particle.center

    def integrand(y):
        rvec = y - c
        r = np.linalg.norm(rvec, axis=-1)
        return profile.dp(r) / (k**2 + profile.p(r)) * rvec[:, i] * rvec[:, j] / r

    return complex(integrate_ball(integrand, c, particle.radius, rule))
