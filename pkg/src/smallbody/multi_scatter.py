"""The M-body linear algebraic system for the moments ``(V_j, nu_j)``.

Unknowns are stacked as ``(V_1x, V_1y, V_1z, ..., V_Mz, nu_1, ..., nu_M)``
and the system reads ``x = x0 + K x``.

Off-diagonal coefficients of radial particles reduce exactly to kernel
values at the centres by the mean-value property of Helmholtz solutions
on spheres::

    a_jm = S_j g(x_j, x_m)          B_jm = S_j grad_x g(x_j, x_m)
    C_jm = U_j grad_x g(x_j, x_m)   d_jm = -k^2 U_j g(x_j, x_m)

with ``S_j = 4 pi int p r^2 j0(kr) dr`` and
``U_j = 4 pi int (p'/(k^2+p)) r^2 j1(kr)/k dr``.  This keeps memory at
``O(M)`` and lets the coupling be applied matrix-free.  The brute-force
quadrature route (``method="quadrature"``) stays available for checks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree
from scipy.special import spherical_jn

from .core_types import Particle, PlaneWave
from .errors import (
    ConditioningError,
    ConvergenceError,
    GeometryError,
    PreconditionError,
)
from .green import green_and_grad
from .potential import RadialProfile
from .quadrature import BallRule, graded_rule, integrate_ball
from .single_scatter import AccuracyWarning, coeffs_single, source_moments, _check_distance

CONDITION_LIMIT = 1e12
DIRECT_MAX_UNKNOWNS = 8000
CHUNK_PAIRS = 2_000_000


@lru_cache(maxsize=4096)
def _radial_factors(gamma: complex, kappa: float, radius: float, shape, k: float):
    prof = RadialProfile(gamma, kappa, radius, shape)
    if gamma == 0:
        return 0j, 0j
    t, w = graded_rule(32, prof.levels(k))
    r = radius * t
    p = prof.p(r)
    f = prof.dp(r) / (k**2 + p)
    S = 4 * np.pi * radius * (w @ (p * r**2 * spherical_jn(0, k * r)))
    U = 4 * np.pi * radius * (w @ (f * r**2 * spherical_jn(1, k * r) / k))
    return complex(S), complex(U)


def radial_factors(particle: Particle, k: float):
    """``(S, U)``: sphere-averaged weights of the kernel and its gradient."""
    return _radial_factors(particle.gamma, particle.kappa, particle.radius, particle.shape, float(k))


@lru_cache(maxsize=4096)
def _diagonal(gamma: complex, kappa: float, radius: float, shape, k: float):
    pt = Particle(np.zeros(3), radius, gamma, kappa, shape)
    return coeffs_single(pt, k)


@dataclass
class LasSystem:
    """Coefficients of ``V_j = V0_j + sum_m (a_jm V_m + B_jm nu_m)`` and
    ``nu_j = nu0_j + sum_m (C_jm . V_m + d_jm nu_m)``.

    Off-diagonal blocks are generated from ``S``, ``U`` and the centres
    unless ``dense`` holds explicit ``(a, B, C, d)`` arrays.
    """

    particles: list
    k: float
    centers: np.ndarray
    V0: np.ndarray
    nu0: np.ndarray
    diag_a: np.ndarray
    diag_B: np.ndarray
    diag_C: np.ndarray
    diag_d: np.ndarray
    S: np.ndarray
    U: np.ndarray
    dense: Optional[tuple] = None
    min_distance: float = np.inf
    warnings: list = field(default_factory=list)

    @property
    def M(self) -> int:
        return len(self.centers)

    @property
    def size(self) -> int:
        return 4 * self.M

    def source(self) -> np.ndarray:
        return stack(self.V0, self.nu0)

    def _rows(self, lo, hi):
        """Off-diagonal kernel blocks for rows ``lo:hi`` (diagonal zeroed)."""
        diff = self.centers[lo:hi, None, :] - self.centers[None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        rows = np.arange(lo, hi)
        r[rows - lo, rows] = 1.0
        g, dg = green_and_grad(diff, r, self.k)
        g[rows - lo, rows] = 0.0
        dg[rows - lo, rows] = 0.0
        return g, dg

    def _chunks(self):
        step = max(1, CHUNK_PAIRS // max(self.M, 1))
        for lo in range(0, self.M, step):
            yield lo, min(self.M, lo + step)

    def coefficients(self):
        """Dense ``(a, B, C, d)`` with shapes ``(M,M), (M,M,3), (M,M,3), (M,M)``."""
        if self.dense is not None:
            return self.dense
        M = self.M
        a = np.empty((M, M), complex)
        B = np.empty((M, M, 3), complex)
        C = np.empty((M, M, 3), complex)
        d = np.empty((M, M), complex)
        for lo, hi in self._chunks():
            g, dg = self._rows(lo, hi)
            S, U = self.S[lo:hi], self.U[lo:hi]
            a[lo:hi] = S[:, None] * g
            B[lo:hi] = S[:, None, None] * dg
            C[lo:hi] = U[:, None, None] * dg
            d[lo:hi] = -self.k**2 * U[:, None] * g
        idx = np.arange(M)
        a[idx, idx] = self.diag_a
        B[idx, idx] = self.diag_B
        C[idx, idx] = self.diag_C
        d[idx, idx] = self.diag_d
        return a, B, C, d

    def coupling_matrix(self) -> np.ndarray:
        """Dense ``K`` (``4M x 4M``) in the documented stacking order."""
        a, B, C, d = self.coefficients()
        M = self.M
        K = np.zeros((4 * M, 4 * M), complex)
        Kv = K[: 3 * M, : 3 * M].reshape(M, 3, M, 3)
        for c in range(3):
            Kv[:, c, :, c] = a
        K[: 3 * M, 3 * M :] = B.transpose(0, 2, 1).reshape(3 * M, M)
        K[3 * M :, : 3 * M] = C.reshape(M, 3 * M)
        K[3 * M :, 3 * M :] = d
        return K

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``K x`` without forming ``K``."""
        V, nu = unstack(x, self.M)
        if self.dense is not None:
            a, B, C, d = self.dense
            outV = a @ V + np.einsum("jmc,m->jc", B, nu)
            outnu = np.einsum("jmc,mc->j", C, V) + d @ nu
            return stack(outV, outnu)
        outV = np.empty_like(V)
        outnu = np.empty_like(nu)
        for lo, hi in self._chunks():
            g, dg = self._rows(lo, hi)
            outV[lo:hi] = self.S[lo:hi, None] * (g @ V + np.einsum("jmc,m->jc", dg, nu))
            outnu[lo:hi] = self.U[lo:hi] * (np.einsum("jmc,mc->j", dg, V) - self.k**2 * (g @ nu))
        outV += self.diag_a[:, None] * V + self.diag_B * nu[:, None]
        outnu += np.einsum("jc,jc->j", self.diag_C, V) + self.diag_d * nu
        return stack(outV, outnu)

    def row_sums(self) -> np.ndarray:
        """``sum_m |a_jm| + |d_jm| + |B_jm| + |C_jm|`` per row ``j``."""
        out = np.empty(self.M)
        if self.dense is not None:
            a, B, C, d = self.dense
            return (np.abs(a) + np.abs(d) + np.linalg.norm(B, axis=-1) + np.linalg.norm(C, axis=-1)).sum(axis=1)
        for lo, hi in self._chunks():
            g, dg = self._rows(lo, hi)
            ag, ng = np.abs(g), np.linalg.norm(dg, axis=-1)
            S, U = np.abs(self.S[lo:hi, None]), np.abs(self.U[lo:hi, None])
            out[lo:hi] = (S * ag + self.k**2 * U * ag + S * ng + U * ng).sum(axis=1)
        out += (
            np.abs(self.diag_a) + np.abs(self.diag_d)
            + np.linalg.norm(self.diag_B, axis=-1) + np.linalg.norm(self.diag_C, axis=-1)
        )
        return out

    def diagonal_blocks(self) -> np.ndarray:
        """``(M, 4, 4)`` blocks of ``I - K`` for particle self-coupling."""
        M = self.M
        blk = np.zeros((M, 4, 4), complex)
        blk[:, :3, :3] = np.eye(3) * (1 - self.diag_a)[:, None, None]
        blk[:, :3, 3] = -self.diag_B
        blk[:, 3, :3] = -self.diag_C
        blk[:, 3, 3] = 1 - self.diag_d
        return blk


def stack(V: np.ndarray, nu: np.ndarray) -> np.ndarray:
    return np.concatenate([np.asarray(V).reshape(-1), np.asarray(nu).reshape(-1)])


def unstack(x: np.ndarray, M: int):
    return x[: 3 * M].reshape(M, 3), x[3 * M :]


def block_norm(x: np.ndarray, M: int) -> float:
    """``max_j max(|V_j|, |nu_j|)``, the norm in which the contraction
    bound applies."""
    V, nu = unstack(x, M)
    if M == 0:
        return 0.0
    return float(max(np.linalg.norm(V, axis=-1).max(), np.abs(nu).max()))


def _check_geometry(particles: Sequence[Particle]):
    centers = np.array([p.center for p in particles]).reshape(-1, 3)
    radii = np.array([p.radius for p in particles])
    notes = []
    if len(particles) < 2:
        return centers, np.inf, notes
    tree = cKDTree(centers)
    dist, idx = tree.query(centers, k=2)
    nn, other = dist[:, 1], idx[:, 1]
    overlap = nn < radii + radii[other]
    if np.any(overlap):
        j = int(np.argmax(overlap))
        raise GeometryError(f"particles {j} and {int(other[j])} overlap (distance {nn[j]:.3g})")
    dmin = float(nn.min())
    amax = float(radii.max())
    if dmin < 2 * amax:
        notes.append(f"minimum centre distance {dmin:.3g} below 2a = {2 * amax:.3g}")
    elif dmin < 10 * amax:
        notes.append(f"minimum centre distance {dmin:.3g} below 10a = {10 * amax:.3g}")
    return centers, dmin, notes


def assemble_las(
    particles: Sequence[Particle],
    incident: PlaneWave | Callable,
    k: float | None = None,
    rule: BallRule | None = None,
    method: str = "closed_form",
) -> LasSystem:
    """Assemble the many-body system.

    ``method="closed_form"`` uses the sphere mean-value reduction for the
    off-diagonal pairs and, for plane waves, for the sources.
    ``method="quadrature"`` integrates every pair over the ball numerically
    and stores dense coefficient arrays (small ``M`` only).
    Self terms always come from the singular ball quadrature.
    """
    particles = list(particles)
    if k is None:
        k = incident.k
    centers, dmin, notes = _check_geometry(particles)
    M = len(particles)
    diag_a = np.zeros(M, complex)
    diag_B = np.zeros((M, 3), complex)
    diag_C = np.zeros((M, 3), complex)
    diag_d = np.zeros(M, complex)
    S = np.zeros(M, complex)
    U = np.zeros(M, complex)
    V0 = np.zeros((M, 3), complex)
    nu0 = np.zeros(M, complex)
    for j, pt in enumerate(particles):
        if rule is None:
            a_, A_, B_, b_ = _diagonal(pt.gamma, pt.kappa, pt.radius, pt.shape, float(k))
        else:
            a_, A_, B_, b_ = coeffs_single(pt, k, rule)
        diag_a[j], diag_B[j], diag_C[j], diag_d[j] = a_, A_, B_, b_
        S[j], U[j] = radial_factors(pt, k)
    if method == "closed_form" and isinstance(incident, PlaneWave):
        V0 = S[:, None] * incident(centers)
        # div E0 = i k (alpha . amplitude) E0-phase vanishes for a transverse wave
        div = 1j * k * (incident.amplitude @ incident.direction) * np.exp(1j * k * centers @ incident.direction)
        nu0 = U * div
    else:
        for j, pt in enumerate(particles):
            V0[j], nu0[j] = source_moments(pt, incident, k, rule)
    dense = None
    if method == "quadrature":
        dense = _quadrature_coefficients(particles, k, rule, (diag_a, diag_B, diag_C, diag_d))
    elif method != "closed_form":
        raise ValueError(f"unknown assembly method {method!r}")
    for n in notes:
        warnings.warn(n, AccuracyWarning, stacklevel=2)
    return LasSystem(particles, float(k), centers, V0, nu0, diag_a, diag_B, diag_C, diag_d, S, U, dense, dmin, notes)


def _quadrature_coefficients(particles, k, rule, diag):
    M = len(particles)
    a = np.zeros((M, M), complex)
    B = np.zeros((M, M, 3), complex)
    C = np.zeros((M, M, 3), complex)
    d = np.zeros((M, M), complex)
    for j, pj in enumerate(particles):
        prof = RadialProfile.of(pj)
        r_rule = rule or BallRule(levels=prof.levels(k))
        pts, w = r_rule.nodes(pj.center, pj.radius)
        rvec = pts - pj.center
        r = np.linalg.norm(rvec, axis=-1)
        p = prof.p(r)
        q = (prof.dp(r) / (k**2 + p) / r)[:, None] * rvec
        for m, pm in enumerate(particles):
            if m == j:
                continue
            diff = pts - pm.center
            g, dg = green_and_grad(diff, np.linalg.norm(diff, axis=-1), k)
            a[j, m] = w @ (p * g)
            B[j, m] = (w * p) @ dg
            C[j, m] = w @ (q * g[:, None])
            d[j, m] = w @ np.einsum("ij,ij->i", q, dg)
    idx = np.arange(M)
    a[idx, idx], B[idx, idx], C[idx, idx], d[idx, idx] = diag
    return a, B, C, d


def contraction_norm(system: LasSystem) -> float:
    if system.M == 0:
        return 0.0
    return float(system.row_sums().max())


@dataclass
class MultiSolution:
    V: np.ndarray
    nu: np.ndarray
    solver: str
    iterations: int
    residual: float
    history: list = field(default_factory=list)
    condition: Optional[float] = None

    @property
    def vector(self) -> np.ndarray:
        return stack(self.V, self.nu)


def relative_residual(system: LasSystem, x: np.ndarray) -> float:
    b = system.source()
    r = x - system.apply(x) - b
    scale = max(np.linalg.norm(b), np.linalg.norm(x), 1e-300)
    return float(np.linalg.norm(r) / scale)


def solve_las_direct(system: LasSystem) -> MultiSolution:
    """Dense LU solve of ``(I - K) x = x0`` with a 1-norm condition estimate."""
    n = system.size
    if n == 0:
        return MultiSolution(np.zeros((0, 3), complex), np.zeros(0, complex), "direct", 0, 0.0)
    if n > DIRECT_MAX_UNKNOWNS:
        raise PreconditionError(
            f"{n} unknowns exceed the dense limit {DIRECT_MAX_UNKNOWNS}; use solve_las_krylov"
        )
    A = np.eye(n, dtype=complex) - system.coupling_matrix()
    anorm = np.linalg.norm(A, 1)
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    rcond, info = scipy.linalg.lapack.zgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if cond > CONDITION_LIMIT:
        raise ConditioningError(f"system condition estimate {cond:.3g} exceeds {CONDITION_LIMIT:.0e}", cond)
    b = system.source()
    x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    res = float(np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), np.linalg.norm(x), 1e-300))
    V, nu = unstack(x, system.M)
    return MultiSolution(V.copy(), nu.copy(), "direct", 1, res, [res], cond)


def solve_las_iterative(system: LasSystem, tol: float = 1e-12, max_iter: int = 10000) -> MultiSolution:
    """Fixed-point iteration ``x <- x0 + K x`` from ``x = 0``.

    Requires the contraction bound ``contraction_norm(system) < 1``; the
    residual ``|x0 + K x_n - x_n|`` (block max-norm) then shrinks at
    least by that factor per step.
    """
    q = contraction_norm(system)
    if q >= 1:
        raise PreconditionError(f"contraction norm {q:.6g} >= 1; fixed-point iteration refused")
    b = system.source()
    M = system.M
    scale = block_norm(b, M)
    x = np.zeros_like(b)
    history = []
    if scale == 0:
        return MultiSolution(*unstack(x, M), "iterative", 0, 0.0, history)
    for it in range(1, max_iter + 1):
        x_new = b + system.apply(x)
        x = x_new
        res = block_norm(b + system.apply(x) - x, M) / scale
        history.append(res)
        if res <= tol:
            V, nu = unstack(x, M)
            return MultiSolution(V.copy(), nu.copy(), "iterative", it, res, history)
    raise ConvergenceError(f"no convergence after {max_iter} iterations (residual {history[-1]:.3g})", history)


def solve_las_krylov(system: LasSystem, tol: float = 1e-12, max_iter: int = 500) -> MultiSolution:
    """GMRES on ``(I - K) x = x0`` with the coupling applied matrix-free and
    particle self-blocks as a block-Jacobi preconditioner.  For systems too
    large for :func:`solve_las_direct` and not contractive."""
    M, n = system.M, system.size
    b = system.source()
    if not np.any(b):
        return MultiSolution(*unstack(np.zeros_like(b), M), "krylov", 0, 0.0)
    inv_blocks = np.linalg.inv(system.diagonal_blocks())

    def to_blocks(x):
        V, nu = unstack(x, M)
        return np.concatenate([V, nu[:, None]], axis=1)

    def from_blocks(y):
        return stack(y[:, :3], y[:, 3])

    A = spla.LinearOperator((n, n), matvec=lambda x: x - system.apply(x), dtype=complex)
    P = spla.LinearOperator(
        (n, n), matvec=lambda x: from_blocks(np.einsum("jab,jb->ja", inv_blocks, to_blocks(x))), dtype=complex
    )
    history = []
    x, info = spla.gmres(
        A, b, rtol=tol, atol=0.0, restart=min(n, 100), maxiter=max_iter, M=P,
        callback=lambda r: history.append(float(r)), callback_type="pr_norm",
    )
    res = relative_residual(system, x)
    if info != 0 or res > max(100 * tol, 1e-10):
        raise ConvergenceError(f"GMRES did not converge (info={info}, residual {res:.3g})", history)
    V, nu = unstack(x, M)
    return MultiSolution(V.copy(), nu.copy(), "krylov", len(history), res, history)


def solve_las(system: LasSystem, tol: float = 1e-12) -> MultiSolution:
    """Direct solve when it fits in memory, GMRES otherwise."""
    if system.size <= DIRECT_MAX_UNKNOWNS:
        return solve_las_direct(system)
    return solve_las_krylov(system, tol)


def eval_field_multi(x, solution: MultiSolution, particles: Sequence[Particle], incident: PlaneWave, k: float | None = None):
    """``E0(x) + sum_m g(x, x_m) V_m + grad_x g(x, x_m) nu_m``."""
    k = incident.k if k is None else k
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, float))
    if len(particles) == 0:
        E = incident(x)
        return E[0] if single else E
    centers = np.array([p.center for p in particles])
    radii = np.array([p.radius for p in particles])
    tree = cKDTree(centers)
    # only the nearest few particles can violate the distance checks
    kq = min(len(particles), 8)
    _, near = tree.query(x, k=kq)
    near = np.atleast_2d(near.reshape(len(x), -1))
    for i in range(len(x)):
        _check_distance(x[i], centers[near[i]], radii[near[i]])
    E = incident(x).astype(complex)
    step = max(1, CHUNK_PAIRS // len(particles))
    for lo in range(0, len(x), step):
        diff = x[lo : lo + step, None, :] - centers[None, :, :]
        g, dg = green_and_grad(diff, np.linalg.norm(diff, axis=-1), k)
        E[lo : lo + step] += g @ solution.V + np.einsum("xmc,m->xc", dg, solution.nu)
    return E[0] if single else E
