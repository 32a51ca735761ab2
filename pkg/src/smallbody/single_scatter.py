"""Scattering by one small ball.

The far field is carried by two moments,
``V = int p E dy`` (vector) and ``nu = int q . E dy`` (scalar), obtained in
closed form from four coupling coefficients.  :func:`oracle_solve_ie16`
solves the full volume integral equation by collocation and serves as an
independent check of the moment formulas.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .core_types import Particle, PlaneWave
from .errors import (
    BodyNotSmallError,
    PreconditionError,
    ResonanceError,
    SingularityError,
)
from .green import green_and_grad
from .potential import PotentialField, RadialProfile
from .quadrature import BallRule, integrate_about, integrate_ball, integrate_box_singular
from .core_types import Box

RESONANCE_TOL = 1e-12
NEAR_FIELD_FACTOR = 2.0
VALIDITY_FACTOR = 10.0


class AccuracyWarning(UserWarning):
    """A formula was used outside the regime where its error bound is small."""


def default_rule(particle: Particle, k: float) -> BallRule:
    return BallRule(levels=RadialProfile.of(particle).levels(k))


def _radial_parts(particle: Particle, k: float):
    prof = RadialProfile.of(particle)
    c = particle.center

    def geom(y):
        rvec = y - c
        r = np.linalg.norm(rvec, axis=-1)
        return rvec, r

    def p(y):
        return prof.p(geom(y)[1])

    def q(y):
        rvec, r = geom(y)
        return (prof.dp(r) / (k**2 + prof.p(r)) / r)[:, None] * rvec

    return prof, geom, p, q


def coeffs_single(particle: Particle, k: float, rule: BallRule | None = None):
    """Coupling coefficients of a ball with its own center.

    Returns
    -------
    a : complex
        ``int p(x) g(x, x_m) dx``
    A : ndarray (3,)
        ``int p(x) grad_x g(x, x_m) dx``
    B : ndarray (3,)
        ``int q(x) g(x, x_m) dx``
    b : complex
        ``int q(x) . grad_x g(x, x_m) dx``
    """
    rule = rule or default_rule(particle, k)
    prof, geom, p, q = _radial_parts(particle, k)
    if prof.gamma == 0:
        return 0j, np.zeros(3, complex), np.zeros(3, complex), 0j
    prof.check_denominator(k)
    c = particle.center

    def kern(y):
        rvec, r = geom(y)
        return green_and_grad(rvec, r, k)

    a = integrate_about(lambda y: p(y) * kern(y)[0], c, c, particle.radius, rule)
    A = integrate_about(lambda y: p(y)[:, None] * kern(y)[1], c, c, particle.radius, rule)
    B = integrate_about(lambda y: q(y) * kern(y)[0][:, None], c, c, particle.radius, rule)
    b = integrate_about(lambda y: np.einsum("ij,ij->i", q(y), kern(y)[1]), c, c, particle.radius, rule)
    return complex(a), np.asarray(A, complex), np.asarray(B, complex), complex(b)


def source_moments(particle: Particle, incident: Callable, k: float, rule: BallRule | None = None):
    """``V0 = int p E0 dy`` and ``nu0 = int q . E0 dy`` for an incident field."""
    rule = rule or default_rule(particle, k)
    prof, _, p, q = _radial_parts(particle, k)
    if prof.gamma == 0:
        return np.zeros(3, complex), 0j
    V0 = integrate_ball(lambda y: p(y)[:, None] * incident(y), particle.center, particle.radius, rule)
    nu0 = integrate_ball(lambda y: np.einsum("ij,ij->i", q(y), incident(y)), particle.center, particle.radius, rule)
    return np.asarray(V0, complex), complex(nu0)


@dataclass
class SingleMoments:
    particle: Particle
    k: float
    V: np.ndarray
    nu: complex
    a: complex
    A: np.ndarray
    B: np.ndarray
    b: complex
    V0: np.ndarray
    nu0: complex
    warnings: list = field(default_factory=list)


def solve_single(particle: Particle, incident: PlaneWave, k: float | None = None, rule: BallRule | None = None) -> SingleMoments:
    """Moments of one ball from the closed-form 2x2 elimination."""
    k = incident.k if k is None else k
    rule = rule or default_rule(particle, k)
    prof = RadialProfile.of(particle)
    edge = abs(prof.dp(particle.radius))
    assert edge <= 1e-12 * max(abs(prof.amplitude), 1.0), "q must vanish on the particle surface"
    a, A, B, b = coeffs_single(particle, k, rule)
    V0, nu0 = source_moments(particle, incident, k, rule)
    notes = []
    if abs(a) >= 1:
        raise BodyNotSmallError(f"|a_m| = {abs(a):.3g} >= 1; the body is not small")
    if abs(b) >= 1:
        notes.append(f"|b_m| = {abs(b):.3g} >= 1")
        warnings.warn(notes[-1], AccuracyWarning, stacklevel=2)
    den = (1 - a) * (1 - b) - B @ A
    if abs(den) < RESONANCE_TOL:
        raise ResonanceError(f"moment system is resonant: |denominator| = {abs(den):.3g}")
    nu = ((1 - a) * nu0 + B @ V0) / den
    V = V0 / (1 - a) + A * nu / (1 - a)
    return SingleMoments(particle, k, V, complex(nu), a, A, B, b, V0, nu0, notes)


def _check_distance(x, centers, radii):
    x = np.atleast_2d(np.asarray(x, float))
    d = np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=-1)
    ratio = d / radii[None, :]
    if np.any(ratio <= NEAR_FIELD_FACTOR):
        raise PreconditionError(
            f"field point within {NEAR_FIELD_FACTOR} radii of a particle (min d/a = {ratio.min():.3g})"
        )
    if np.any(ratio < VALIDITY_FACTOR):
        warnings.warn(
            f"field point closer than {VALIDITY_FACTOR} radii to a particle (min d/a = {ratio.min():.3g})",
            AccuracyWarning,
            stacklevel=3,
        )
    return x


def eval_field_single(x, moments: SingleMoments, incident: PlaneWave, k: float | None = None) -> np.ndarray:
    """``E0(x) + g(x, x_m) V + grad_x g(x, x_m) nu`` at points ``x`` (``(3,)`` or ``(N, 3)``)."""
    k = incident.k if k is None else k
    single = np.ndim(x) == 1
    pt = moments.particle
    x = _check_distance(x, pt.center[None, :], np.array([pt.radius]))
    diff = x - pt.center
    g, dg = green_and_grad(diff, np.linalg.norm(diff, axis=-1), k)
    E = incident(x) + g[:, None] * moments.V + dg * moments.nu
    return E[0] if single else E


def compute_H(E_field: Callable, x, omega: float, mu: float, h: float = 1e-4) -> np.ndarray:
    """``H = curl E / (i omega mu)`` with a central-difference curl."""
    x = np.asarray(x, float)
    J = np.empty((3, 3), complex)  # J[i, j] = dE_i / dx_j
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        J[:, j] = (np.asarray(E_field(x + e)) - np.asarray(E_field(x - e))) / (2 * h)
    curl = np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])
    return curl / (1j * omega * mu)


@dataclass
class OracleSolution:
    """Collocation solution of the volume integral equation.

    ``nodes`` are cell centres inside the balls; ``E`` the field there.
    """

    nodes: np.ndarray
    E: np.ndarray
    weights: np.ndarray
    p: np.ndarray
    q: np.ndarray
    owner: np.ndarray
    residual: float
    cells_per_diameter: int
    k: float
    incident: PlaneWave

    def moments(self):
        """Per-particle ``V`` (M, 3) and ``nu`` (M,) from the nodal field."""
        M = int(self.owner.max()) + 1
        V = np.zeros((M, 3), complex)
        nu = np.zeros(M, complex)
        pw = self.weights * self.p
        qE = self.weights * np.einsum("ij,ij->i", self.q, self.E)
        for m in range(M):
            sel = self.owner == m
            V[m] = pw[sel] @ self.E[sel]
            nu[m] = qE[sel].sum()
        return V, nu

    def field(self, x) -> np.ndarray:
        """Field at points outside the particles from the discrete integral."""
        single = np.ndim(x) == 1
        x = np.atleast_2d(np.asarray(x, float))
        diff = x[:, None, :] - self.nodes[None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        if np.any(r < 1e-14):
            raise SingularityError("oracle field requested at a collocation node")
        g, dg = green_and_grad(diff, r, self.k)
        src = (self.weights * self.p)[:, None] * self.E
        qE = self.weights * np.einsum("ij,ij->i", self.q, self.E)
        E = self.incident(x) + g @ src + np.einsum("xnj,n->xj", dg, qE)
        return E[0] if single else E


def _ball_cells(particle: Particle, n: int):
    h = 2 * particle.radius / n
    ticks = -particle.radius + h * (np.arange(n) + 0.5)
    X, Y, Z = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    offs = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
    offs = offs[np.linalg.norm(offs, axis=-1) < particle.radius]
    return particle.center + offs, h


def cube_self_integral(h: float, k: float, n: int = 16) -> complex:
    """``int g(0, y) dy`` over the cube of side ``h`` centred at the origin."""
    box = Box(-0.5 * h * np.ones(3), 0.5 * h * np.ones(3))

    def f(y):
        r = np.linalg.norm(y, axis=-1)
        return np.exp(1j * k * r) / (4 * np.pi * r)

    return complex(integrate_box_singular(f, np.zeros(3), box, n))


def oracle_solve_ie16(
    particles: Particle | Sequence[Particle],
    incident: PlaneWave,
    k: float | None = None,
    cells_per_diameter: int = 12,
    tol: float = 1e-8,
) -> OracleSolution:
    """Collocation solve of
    ``E = E0 + int g p E dy + grad_x int g q . E dy`` on ball-interior cells.

    Off-diagonal cells use the midpoint rule with the analytic kernel and
    kernel gradient; the self cell uses the singular cube integral (its
    gradient term vanishes by symmetry).
    """
    if isinstance(particles, Particle):
        particles = [particles]
    k = incident.k if k is None else k
    if cells_per_diameter < 8:
        raise PreconditionError("the oracle mesh needs at least 8 cells across a diameter")
    field_ = PotentialField(particles, k)
    nodes, weights, owner, selfint = [], [], [], []
    for m, pt in enumerate(particles):
        RadialProfile.of(pt).check_denominator(k)
        pts, h = _ball_cells(pt, cells_per_diameter)
        nodes.append(pts)
        weights.append(np.full(len(pts), h**3))
        owner.append(np.full(len(pts), m))
        selfint.append(np.full(len(pts), cube_self_integral(h, k)))
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    owner = np.concatenate(owner)
    selfint = np.concatenate(selfint)
    p = field_.p(nodes)
    q = field_.q(nodes)
    N = len(nodes)

    diff = nodes[:, None, :] - nodes[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(r, 1.0)
    g, dg = green_and_grad(diff, r, k)
    del diff, r
    G = g * weights[None, :]
    G[np.diag_indices(N)] = selfint
    dG = dg * weights[None, :, None]
    dG[np.arange(N), np.arange(N)] = 0.0
    del g, dg
    # A[i, a, j, b] = delta - (G_ij p_j delta_ab + dG_ij,a q_j,b)
    A = np.zeros((N, 3, N, 3), complex)
    Gp = G * p[None, :]
    for a_ in range(3):
        A[:, a_, :, a_] -= Gp
        for b_ in range(3):
            A[:, a_, :, b_] -= dG[:, :, a_] * q[None, :, b_]
    del G, dG, Gp
    A = A.reshape(3 * N, 3 * N)
    A[np.diag_indices(3 * N)] += 1.0
    rhs = incident(nodes).reshape(-1)
    try:
        sol = scipy.linalg.solve(A, rhs, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularityError(f"oracle system is singular: {exc}") from exc
    residual = float(np.linalg.norm(A @ sol - rhs) / np.linalg.norm(rhs))
    if residual > tol:
        from .errors import ConvergenceError

        raise ConvergenceError(f"oracle residual {residual:.3g} above tolerance {tol}")
    return OracleSolution(nodes, sol.reshape(N, 3), weights, p, q, owner, residual, cells_per_diameter, k, incident)
