"""Shared value types: points, complex field vectors, plane waves, particles.

Vectors are plain ``numpy`` arrays of shape ``(3,)``; the helpers here
validate and coerce them.  Everything else is a frozen dataclass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ValidationError

UNIT_TOL = 1e-12
TRANSVERSE_TOL = 1e-12


def as_vec3(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite components: {arr}")
    return arr


def as_cvec3(v, name: str = "complex vector") -> np.ndarray:
    arr = np.asarray(v, dtype=complex)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite components: {arr}")
    return arr


@dataclass(frozen=True)
class PlaneWave:
    """Incident field ``amplitude * exp(i k direction . x)``.

    Construct through :func:`make_plane_wave`, which enforces a unit
    direction and a transverse amplitude.
    """

    amplitude: np.ndarray
    direction: np.ndarray
    k: float

    def __call__(self, x) -> np.ndarray:
        """Evaluate at points ``x`` of shape ``(..., 3)``; returns ``(..., 3)``."""
        x = np.asarray(x, dtype=float)
        phase = np.exp(1j * self.k * (x @ self.direction))
        return phase[..., None] * self.amplitude

    def curl(self, x) -> np.ndarray:
        """Analytic curl, ``i k direction x amplitude * phase``."""
        x = np.asarray(x, dtype=float)
        phase = np.exp(1j * self.k * (x @ self.direction))
        return 1j * self.k * phase[..., None] * np.cross(self.direction, self.amplitude)

    def scaled(self, factor: complex) -> "PlaneWave":
        return PlaneWave(self.amplitude * factor, self.direction, self.k)


def make_plane_wave(amplitude, direction, k: float) -> PlaneWave:
    amp = as_cvec3(amplitude, "amplitude")
    alpha = as_vec3(direction, "direction")
    if not k > 0 or not np.isfinite(k):
        raise ValidationError(f"wavenumber must be positive, got k={k}")
    if abs(np.linalg.norm(alpha) - 1.0) > UNIT_TOL:
        raise ValidationError(
            f"direction must be a unit vector, |alpha|={np.linalg.norm(alpha):.17g}"
        )
    dot = complex(amp @ alpha)
    if abs(dot) > TRANSVERSE_TOL:
        raise ValidationError(
            f"transversality violated: amplitude . direction = {dot} (tolerance {TRANSVERSE_TOL})"
        )
    amp.setflags(write=False)
    alpha.setflags(write=False)
    return PlaneWave(amp, alpha, float(k))


@dataclass(frozen=True)
class Shape:
    """Radial shape factor ``h(t)`` on ``[0, 1]`` multiplying ``(1 - t)**2``.

    ``dh`` is the analytic derivative when known; otherwise central
    differences with step ``fd_step`` are used.
    """

    name: str
    h: Callable[[np.ndarray], np.ndarray]
    dh: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fd_step: float = 1e-6
    # exact value of int_0^1 (1-t)^2 h(t) t^2 dt, if known
    moment: Optional[float] = None

    def derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.dh is not None:
            return np.asarray(self.dh(t), dtype=float) * np.ones_like(t)
        s = self.fd_step
        return (np.asarray(self.h(t + s)) - np.asarray(self.h(t - s))) / (2 * s)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.asarray(self.h(t), dtype=float) * np.ones_like(t)


CONSTANT_SHAPE = Shape(
    name="constant",
    h=lambda t: np.ones_like(t),
    dh=lambda t: np.zeros_like(t),
    moment=1.0 / 30.0,
)

_SHAPES: dict[str, Shape] = {"constant": CONSTANT_SHAPE}


def register_shape(shape: Shape) -> None:
    """Make a user shape available by name (e.g. from config files)."""
    _SHAPES[shape.name] = shape


def get_shape(name: str) -> Shape:
    try:
        return _SHAPES[name]
    except KeyError:
        raise ValidationError(f"unknown profile shape {name!r}; known: {sorted(_SHAPES)}") from None


@dataclass(frozen=True)
class Particle:
    """A small ball ``|y - center| <= radius`` carrying the potential profile.

    The profile inside the ball is
    ``gamma / (4 pi radius**kappa) * (1 - t)**2 * h(t)`` with ``t = r/radius``.
    """

    center: np.ndarray
    radius: float
    gamma: complex
    kappa: float
    shape: Shape = CONSTANT_SHAPE

    def __post_init__(self):
        c = as_vec3(self.center, "particle center")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "gamma", complex(self.gamma))
        if not (self.radius > 0 and np.isfinite(self.radius)):
            raise ValidationError(f"particle radius must be positive, got {self.radius}")
        if self.gamma.imag < 0:
            raise ValidationError(f"Im gamma must be >= 0, got gamma={self.gamma}")
        if not 0 < self.kappa < 3:
            raise ValidationError(f"kappa out of (0,3): {self.kappa}")

    def moved(self, center) -> "Particle":
        return Particle(center, self.radius, self.gamma, self.kappa, self.shape)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lo, hi]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = as_vec3(self.lo, "box lower corner")
        hi = as_vec3(self.hi, "box upper corner")
        if np.any(hi <= lo):
            raise ValidationError(f"degenerate box: lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    @property
    def size(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)


UNIT_CUBE = Box(np.zeros(3), np.ones(3))


@dataclass(frozen=True)
class DistributionLaw:
    """Particle counting law: a subdomain ``Delta`` holds about
    ``phi(a)**-1 * int_Delta N dx`` particles, ``phi(a) = a**(3 - kappa)``.
    """

    domain: Box
    density: Callable[[np.ndarray], np.ndarray]
    kappa: float

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise ValidationError(f"distribution kappa out of (0,1]: {self.kappa}")

    def phi(self, a: float) -> float:
        return a ** (3.0 - self.kappa)

    def N(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.density(x), dtype=float) * np.ones(x.shape[:-1])


@dataclass(frozen=True)
class MediumSpec:
    """Host domain, background wavenumber and the density law."""

    law: DistributionLaw
    k: float

    def __post_init__(self):
        if not (self.k > 0 and np.isfinite(self.k)):
            raise ValidationError(f"wavenumber must be positive, got k={self.k}")

    @property
    def domain(self) -> Box:
        return self.law.domain

    @property
    def kappa(self) -> float:
        return self.law.kappa
