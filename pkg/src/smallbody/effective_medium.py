"""The small-particle limit: particle clouds obeying a density law, the
effective-field integral equation, refraction-coefficient synthesis and
the negative-refraction test.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .core_types import CONSTANT_SHAPE, Box, DistributionLaw, Particle, PlaneWave, Shape
from .errors import (
    ConvergenceError,
    DensityError,
    PreconditionError,
    SingularityError,
    ValidationError,
)
from .green import green_and_grad
from .multi_scatter import assemble_las, contraction_norm, eval_field_multi, solve_las
from .quadrature import BoxRule, gauss_legendre, integrate_box, integrate_box_singular

TARGET_PER_SUBCUBE = 10
OMEGA_REL_STEP = 1e-6
IMAG_TOL = 1e-12


def _as_field(value) -> Callable:
    if callable(value):
        return value
    const = complex(value)
    return lambda x: np.full(np.shape(x)[:-1], const)


# --------------------------------------------------------------------------
# particle clouds
# --------------------------------------------------------------------------

def _subcube_grid(law: DistributionLaw, a: float, per_subcube: float):
    box = law.domain
    t, w = gauss_legendre(4, 0.0, 1.0)
    # mean density from a moderate tensor rule
    mean_N = integrate_box(law.N, box, BoxRule(8)) / box.volume
    if mean_N <= 0:
        return None
    edge = (per_subcube * law.phi(a) / mean_N) ** (1 / 3)
    counts = np.maximum(1, np.round(box.size / edge)).astype(int)
    h = box.size / counts
    idx = np.stack(np.meshgrid(*[np.arange(c) for c in counts], indexing="ij"), axis=-1).reshape(-1, 3)
    lo = box.lo + idx * h
    # per-subcube integral of N by a 4^3 Gauss rule
    T = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    W = np.einsum("i,j,k->ijk", w, w, w).reshape(-1)
    pts = lo[:, None, :] + T[None, :, :] * h
    mass = (law.N(pts.reshape(-1, 3)).reshape(len(lo), -1) @ W) * np.prod(h)
    return lo, h, mass


def subcube_counts(law: DistributionLaw, a: float, per_subcube: float = TARGET_PER_SUBCUBE):
    """Subcube corners, edge lengths and integer counts for radius ``a``.

    Counts come from cumulative rounding of ``phi(a)**-1 int_Delta N``, so
    the total equals the rounded total expected count.
    """
    grid = _subcube_grid(law, a, per_subcube)
    if grid is None:
        return np.zeros((0, 3)), law.domain.size, np.zeros(0, int)
    lo, h, mass = grid
    if np.any(mass < -1e-12):
        raise DensityError("density N(x) is negative somewhere in the domain")
    cum = np.round(np.cumsum(np.maximum(mass, 0.0)) / law.phi(a)).astype(int)
    counts = np.diff(np.concatenate(([0], cum)))
    return lo, h, counts


def _place(lo, h, counts, a, rng):
    centers = []
    for corner, c in zip(lo, counts):
        if c == 0:
            continue
        n_c = int(np.ceil(c ** (1 / 3) - 1e-9))
        cell = h / n_c
        if np.min(cell) <= 2 * a:
            raise DensityError(
                f"cannot pack {c} balls of radius {a} in subcube at {corner} (edge {h})"
            )
        chosen = rng.choice(n_c**3, size=c, replace=False)
        ijk = np.stack(np.unravel_index(chosen, (n_c, n_c, n_c)), axis=-1)
        jitter = rng.random((c, 3))
        centers.append(corner + ijk * cell + a + jitter * (cell - 2 * a))
    return centers


def generate_particles(
    law: DistributionLaw,
    a: float,
    seed: int,
    gamma: complex | Callable = 1.0,
    shape: Shape = CONSTANT_SHAPE,
) -> list[Particle]:
    """Stratified, jittered, non-overlapping particle cloud.

    Each subcube (about ten particles on average) receives its count from
    the law; inside it the particles occupy distinct cells of a finer
    lattice and are jittered so every ball stays inside its cell.  When a
    subcube is too small to hold its balls the stratification is coarsened
    (eight times more particles per subcube) and placement restarts.
    ``gamma`` may be a constant or a field evaluated at the centres.
    """
    gamma_field = _as_field(gamma)
    per_subcube = TARGET_PER_SUBCUBE
    while True:
        rng = np.random.default_rng(seed)
        lo, h, counts = subcube_counts(law, a, per_subcube)
        try:
            centers = _place(lo, h, counts, a, rng)
            break
        except DensityError:
            if len(lo) <= 1:
                raise
            per_subcube *= 8
    if not centers:
        return []
    centers = np.concatenate(centers)
    gammas = np.asarray(gamma_field(centers), dtype=complex) * np.ones(len(centers))
    return [Particle(x, a, g, law.kappa, shape) for x, g in zip(centers, gammas)]


def lemma3_limit_check(
    f: Callable, law: DistributionLaw, a_sequence: Sequence[float], seed: int = 0,
    rule: BoxRule = BoxRule(16),
) -> list[dict]:
    """``phi(a) sum_m f(x_m)`` against ``int_D f N dx`` along ``a_sequence``."""
    reference = float(np.real(integrate_box(lambda x: f(x) * law.N(x), law.domain, rule)))
    rows = []
    for a in a_sequence:
        cloud = generate_particles(law, a, seed)
        centers = np.array([p.center for p in cloud]).reshape(-1, 3)
        total = law.phi(a) * float(np.real(np.sum(f(centers)))) if len(cloud) else 0.0
        rows.append(dict(a=a, M=len(cloud), weighted_sum=total, integral=reference, error=abs(total - reference)))
    return rows


# --------------------------------------------------------------------------
# coefficient and refraction fields
# --------------------------------------------------------------------------

def coefficient_field(law: DistributionLaw, gamma_field, shape: Shape = CONSTANT_SHAPE) -> Callable:
    """``C(x) = gamma(x) * int (1-t)^2 h t^2 dt * N(x)`` (``gamma N / 30`` for constant h)."""
    gamma_field = _as_field(gamma_field)
    if shape.moment is not None:
        moment = shape.moment
    else:
        t, w = gauss_legendre(64, 0.0, 1.0)
        moment = float(w @ ((1 - t) ** 2 * shape(t) * t**2))

    def C(x):
        x = np.asarray(x, float)
        return np.asarray(gamma_field(x), complex) * moment * law.N(x)

    return C


@dataclass(frozen=True)
class RefractionModel:
    """``n^2 = 1 + C / k^2`` and ``K^2 = k^2 + C = k^2 n^2``."""

    C: Callable
    k: float

    def n2(self, x):
        return 1 + np.asarray(self.C(x), complex) / self.k**2

    def K2(self, x):
        return self.k**2 + np.asarray(self.C(x), complex)

    def n(self, x):
        return np.sqrt(self.n2(x))


def refraction_coefficient(C, k: float) -> RefractionModel:
    return RefractionModel(_as_field(C), float(k))


def coefficient_from_refraction(n2, k: float) -> Callable:
    """Inverse map ``C = k^2 (n^2 - 1)`` for a target refraction field."""
    n2 = _as_field(n2)
    return lambda x: k**2 * (np.asarray(n2(x), complex) - 1)


# --------------------------------------------------------------------------
# effective field
# --------------------------------------------------------------------------

@dataclass
class EffectiveField:
    """Collocation solution of ``E = E0 + int_D g C E dy`` on a uniform grid.

    The kernel is scalar, so ``E = amplitude * u`` with ``u`` the scalar
    solution for the unit-amplitude wave; ``E`` has shape ``(n, n, n, 3)``.
    """

    box: Box
    shape: tuple
    h: np.ndarray
    nodes: np.ndarray
    u: np.ndarray
    C: np.ndarray
    incident: PlaneWave
    k: float
    residual: float
    iterations: int
    self_integral: complex

    @property
    def E(self) -> np.ndarray:
        return self.u[..., None] * self.incident.amplitude

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def field(self, x) -> np.ndarray:
        """Evaluate ``E0 + sum_cells g C E`` at arbitrary points off the nodes."""
        single = np.ndim(x) == 1
        x = np.atleast_2d(np.asarray(x, float))
        src = (self.C * self.u).reshape(-1) * self.cell_volume
        nodes = self.nodes.reshape(-1, 3)
        out = np.empty(len(x), complex)
        step = max(1, 2_000_000 // len(nodes))
        for lo in range(0, len(x), step):
            diff = x[lo : lo + step, None, :] - nodes[None, :, :]
            r = np.linalg.norm(diff, axis=-1)
            if np.any(r < 1e-12):
                raise SingularityError("effective field requested at a collocation node; use .E")
            g = np.exp(1j * self.k * r) / (4 * np.pi * r)
            out[lo : lo + step] = g @ src
        E = self.incident(x) + out[:, None] * self.incident.amplitude
        return E[0] if single else E


def _grid(box: Box, n):
    n = np.broadcast_to(np.asarray(n, int), (3,))
    h = box.size / n
    axes = [box.lo[i] + h[i] * (np.arange(n[i]) + 0.5) for i in range(3)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return tuple(int(v) for v in n), h, nodes


def _kernel_fft(shape, h, k, self_int):
    """FFT of the zero-padded convolution kernel ``g(offset) * cell volume``."""
    n = np.array(shape)
    size = 2 * n
    offs = [np.fft.fftfreq(size[i], 1.0 / size[i]) * h[i] for i in range(3)]
    X, Y, Z = np.meshgrid(*offs, indexing="ij")
    r = np.sqrt(X**2 + Y**2 + Z**2)
    r[0, 0, 0] = 1.0
    T = np.exp(1j * k * r) / (4 * np.pi * r) * np.prod(h)
    T[0, 0, 0] = self_int
    # drop the wrap-around row that no pair of grid points can reach
    for i in range(3):
        sl = [slice(None)] * 3
        sl[i] = n[i]
        T[tuple(sl)] = 0.0
    return np.fft.fftn(T)


def solve_effective_field(
    C, incident: PlaneWave, k: float | None = None, box: Box | None = None, n=24,
    method: str = "fft", tol: float = 1e-12,
) -> EffectiveField:
    """Solve the effective-field equation by midpoint collocation on an
    ``n^3`` grid of cells; the self cell uses the singular cube integral.

    ``method="fft"`` applies the Toeplitz operator by FFT inside GMRES;
    ``method="dense"`` forms the matrix (small grids only).
    """
    k = incident.k if k is None else k
    box = box or Box(np.zeros(3), np.ones(3))
    shape, h, nodes = _grid(box, n)
    C_fn = _as_field(C)
    Cv = np.asarray(C_fn(nodes.reshape(-1, 3)), complex).reshape(shape)
    if not np.all(np.isfinite(Cv)):
        raise ValidationError("coefficient field is not finite on the grid")
    half = Box(-0.5 * h, 0.5 * h)

    def g_fn(y):
        r = np.linalg.norm(y, axis=-1)
        return np.exp(1j * k * r) / (4 * np.pi * r)

    self_int = complex(integrate_box_singular(g_fn, np.zeros(3), half, 16))
    u0 = np.exp(1j * k * nodes @ incident.direction)
    N = u0.size
    iterations = 1
    if not np.any(Cv):
        u = u0.copy()
        return EffectiveField(box, shape, h, nodes, u, Cv, incident, k, 0.0, 0, self_int)
    if method == "dense":
        if N > 6000:
            raise PreconditionError(f"dense effective-field solve limited to 6000 cells, got {N}")
        flat = nodes.reshape(-1, 3)
        diff = flat[:, None, :] - flat[None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(r, 1.0)
        G = np.exp(1j * k * r) / (4 * np.pi * r) * np.prod(h)
        np.fill_diagonal(G, self_int)
        A = np.eye(N) - G * Cv.reshape(-1)[None, :]
        try:
            u = scipy.linalg.solve(A, u0.reshape(-1)).reshape(shape)
        except scipy.linalg.LinAlgError as exc:
            raise SingularityError(f"effective-field system is singular: {exc}") from exc

        def apply(v):
            return A @ v
    elif method == "fft":
        Tf = _kernel_fft(shape, h, k, self_int)
        pad = tuple(2 * s for s in shape)
        sl = tuple(slice(0, s) for s in shape)

        def conv(v):
            return np.fft.ifftn(Tf * np.fft.fftn(v, s=pad, axes=(0, 1, 2)))[sl]

        def apply(v):
            v = v.reshape(shape)
            return (v - conv(Cv * v)).reshape(-1)

        op = spla.LinearOperator((N, N), matvec=apply, dtype=complex)
        history = []
        sol, info = spla.gmres(
            op, u0.reshape(-1), rtol=tol, atol=0.0, restart=200, maxiter=50,
            callback=lambda r: history.append(r), callback_type="pr_norm",
        )
        if info != 0:
            raise ConvergenceError(f"effective-field GMRES failed (info={info})", history)
        u = sol.reshape(shape)
        iterations = len(history)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = float(np.linalg.norm(apply(u.reshape(-1)) - u0.reshape(-1)) / np.linalg.norm(u0))
    if res > max(100 * tol, 1e-10):
        raise ConvergenceError(f"effective-field residual {res:.3g} above tolerance")
    return EffectiveField(box, shape, h, nodes, u, Cv, incident, k, res, iterations, self_int)


def _central_gradient(f: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Central differences on interior nodes; shape ``(n-2, n-2, n-2, 3)``."""
    inner = (slice(1, -1),) * 3
    out = []
    for i in range(3):
        fwd = [slice(1, -1)] * 3
        bwd = [slice(1, -1)] * 3
        fwd[i] = slice(2, None)
        bwd[i] = slice(None, -2)
        out.append((f[tuple(fwd)] - f[tuple(bwd)]) / (2 * h[i]))
    del inner
    return np.stack(out, axis=-1)


def _laplacian(f: np.ndarray, h: np.ndarray) -> np.ndarray:
    inner = f[1:-1, 1:-1, 1:-1]
    out = np.zeros_like(inner)
    for i in range(3):
        fwd = [slice(1, -1)] * 3
        bwd = [slice(1, -1)] * 3
        fwd[i] = slice(2, None)
        bwd[i] = slice(None, -2)
        out = out + (f[tuple(fwd)] - 2 * inner + f[tuple(bwd)]) / h[i] ** 2
    return out


@dataclass
class DivergenceReport:
    eta: np.ndarray
    eta_norm: float
    residual: np.ndarray
    residual_norm: float
    source_norm: float
    helmholtz_residual_norm: float


def divergence_diagnostic(field: EffectiveField, C=None, k: float | None = None) -> DivergenceReport:
    """``eta = div E`` on interior nodes, and the residual of
    ``lap eta + K^2 eta + grad K^2 . E = 0`` (``K^2 = k^2 + C``).

    Norms are RMS over the nodes where the stencils fit.  ``C`` defaults to
    the grid values stored with ``field``.
    """
    k = field.k if k is None else k
    h = field.h
    Cv = field.C if C is None else np.asarray(_as_field(C)(field.nodes.reshape(-1, 3)), complex).reshape(field.shape)
    amp = field.incident.amplitude
    grad_u = _central_gradient(field.u, h)
    eta = grad_u @ amp  # on nodes 1..n-2
    K2 = k**2 + Cv
    lap_eta = _laplacian(eta, h)
    gradK2 = _central_gradient(K2, h)[1:-1, 1:-1, 1:-1]
    E_in = field.E[2:-2, 2:-2, 2:-2]
    source = np.einsum("...i,...i->...", gradK2, E_in)
    resid = lap_eta + K2[2:-2, 2:-2, 2:-2] * eta[1:-1, 1:-1, 1:-1] + source
    lap_u = _laplacian(field.u, h)
    helm = lap_u + K2[1:-1, 1:-1, 1:-1] * field.u[1:-1, 1:-1, 1:-1]

    def rms(v):
        return float(np.sqrt(np.mean(np.abs(v) ** 2))) if v.size else 0.0

    return DivergenceReport(eta, rms(eta), resid, rms(resid), rms(source), rms(helm[1:-1, 1:-1, 1:-1]))


# --------------------------------------------------------------------------
# many-body -> effective medium convergence
# --------------------------------------------------------------------------

def convergence_study(
    law: DistributionLaw,
    gamma_field,
    incident: PlaneWave,
    k: float | None,
    a_sequence: Sequence[float],
    probe_points,
    seed: int = 0,
    effective_n: int = 32,
    effective: EffectiveField | None = None,
) -> list[dict]:
    """Many-body field at the probes against the effective-field solution,
    one row per particle radius."""
    k = incident.k if k is None else k
    probes = np.atleast_2d(np.asarray(probe_points, float))
    C = coefficient_field(law, gamma_field)
    if effective is None:
        effective = solve_effective_field(C, incident, k, law.domain, effective_n)
    E_ref = effective.field(probes)
    rows = []
    for a in a_sequence:
        t0 = time.perf_counter()
        cloud = generate_particles(law, a, seed, gamma_field)
        try:
            system = assemble_las(cloud, incident, k)
            sol = solve_las(system)
        except Exception as exc:
            raise type(exc)(f"convergence study failed at a={a}: {exc}") from exc
        E = eval_field_multi(probes, sol, cloud, incident, k)
        err = np.linalg.norm(E - E_ref, axis=-1) / np.linalg.norm(E_ref, axis=-1)
        volume = len(cloud) * 4 * np.pi / 3 * a**3
        rows.append(
            dict(
                a=a, M=len(cloud), solver=sol.solver, iterations=sol.iterations,
                residual=sol.residual, particle_volume=volume,
                volume_fraction=volume / law.domain.volume,
                max_error=float(err.max()) if len(err) else 0.0,
                seconds=time.perf_counter() - t0,
            )
        )
    return rows


# --------------------------------------------------------------------------
# negative refraction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NegativeRefraction:
    negative: bool
    value: float
    n: float
    dn_domega: float


def negative_refraction_check(n: Callable[[float], complex], omega: float, dn: Callable | None = None) -> NegativeRefraction:
    """Evaluate ``n + omega dn/domega`` for a real index ``n(omega)``;
    negative values mean group and phase velocities are opposed."""
    n0 = complex(n(omega))
    if abs(n0.imag) > IMAG_TOL:
        raise PreconditionError(f"criterion needs a real index; Im n = {n0.imag:.3g}")
    if dn is not None:
        d = complex(dn(omega))
    else:
        step = OMEGA_REL_STEP * abs(omega)
        d = (complex(n(omega + step)) - complex(n(omega - step))) / (2 * step)
    value = n0.real + omega * d.real
    return NegativeRefraction(bool(value < 0), float(value), float(n0.real), float(d.real))


def index_from_coefficient(C_of_omega: Callable[[float], complex], wave_speed: float = 1.0) -> Callable[[float], complex]:
    """``n(omega) = sqrt(1 + C(omega) / k^2)``, ``k = omega / wave_speed``."""

    def n(omega):
        k = omega / wave_speed
        return complex(np.sqrt(1 + complex(C_of_omega(omega)) / k**2))

    return n
