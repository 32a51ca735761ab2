import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smallbody.core_types import (
    CONSTANT_SHAPE,
    Box,
    DistributionLaw,
    MediumSpec,
    Particle,
    Shape,
    get_shape,
    make_plane_wave,
    register_shape,
)
from smallbody.errors import ValidationError
from smallbody.green import helmholtz_residual


def test_plane_wave_at_origin():
    w = make_plane_wave([1, 0, 0], [0, 0, 1], 1.0)
    np.testing.assert_allclose(w(np.zeros(3)), [1, 0, 0], atol=1e-15)


def test_plane_wave_half_period():
    w = make_plane_wave([1, 0, 0], [0, 0, 1], 1.0)
    np.testing.assert_allclose(w(np.array([0, 0, np.pi])), [-1, 0, 0], atol=1e-15)


def test_plane_wave_transversality_rejected():
    with pytest.raises(ValidationError, match="transversality"):
        make_plane_wave([0, 0, 1], [0, 0, 1], 1.0)


def test_plane_wave_non_unit_direction_rejected():
    with pytest.raises(ValidationError):
        make_plane_wave([1, 0, 0], [0, 0, 2], 1.0)


def test_plane_wave_nonpositive_k_rejected():
    with pytest.raises(ValidationError):
        make_plane_wave([1, 0, 0], [0, 0, 1], 0.0)


def test_plane_wave_solves_helmholtz():
    w = make_plane_wave([0, 1, 0], [0.6, 0, 0.8], 2.0)
    x = np.array([0.3, -0.2, 0.7])
    errs = [np.abs(helmholtz_residual(w, x, 2.0, h)).max() for h in (1e-2, 5e-3)]
    assert errs[1] < errs[0] / 3  # O(h^2)
    assert errs[1] < 1e-4


def test_plane_wave_divergence_free():
    w = make_plane_wave([0, 1, 0], [0.6, 0, 0.8], 2.0)
    x = np.array([0.1, 0.2, 0.3])
    h = 1e-4
    div = sum((w(x + h * e)[i] - w(x - h * e)[i]) / (2 * h) for i, e in enumerate(np.eye(3)))
    assert abs(div) < 1e-8


def test_plane_wave_is_frozen():
    w = make_plane_wave([1, 0, 0], [0, 0, 1], 1.0)
    with pytest.raises(ValueError):
        w.amplitude[0] = 2.0


@given(
    theta=st.floats(0, np.pi), phi=st.floats(0, 2 * np.pi), k=st.floats(0.1, 10),
    x=st.lists(st.floats(-5, 5), min_size=3, max_size=3),
)
@settings(max_examples=50, deadline=None)
def test_plane_wave_modulus_is_amplitude(theta, phi, k, x):
    alpha = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    e = np.cross(alpha, [1.0, 0, 0] if abs(alpha[0]) < 0.9 else [0, 1.0, 0])
    e /= np.linalg.norm(e)
    w = make_plane_wave(e, alpha, k)
    np.testing.assert_allclose(np.abs(w(np.array(x))), np.abs(e), atol=1e-12)


def test_particle_invariants():
    Particle(np.zeros(3), 0.1, 1 + 1j, 1.0)
    with pytest.raises(ValidationError):
        Particle(np.zeros(3), 0.0, 1.0, 1.0)
    with pytest.raises(ValidationError):
        Particle(np.zeros(3), 0.1, 1 - 1j, 1.0)
    with pytest.raises(ValidationError, match=r"kappa out of \(0,3\)"):
        Particle(np.zeros(3), 0.1, 1.0, 3.5)
    with pytest.raises(ValidationError):
        Particle(np.array([0, np.nan, 0]), 0.1, 1.0, 1.0)


def test_particle_moved_keeps_parameters():
    p = Particle(np.zeros(3), 0.1, 2.0, 0.5)
    q = p.moved([1, 2, 3])
    assert (q.radius, q.gamma, q.kappa) == (0.1, 2.0, 0.5)
    np.testing.assert_array_equal(q.center, [1, 2, 3])


def test_shapes_registry():
    assert get_shape("constant") is CONSTANT_SHAPE
    quad = Shape("quadratic", h=lambda t: 1 + t**2)
    register_shape(quad)
    assert get_shape("quadratic") is quad
    # finite-difference derivative when none is registered
    np.testing.assert_allclose(quad.derivative(np.array([0.5])), [1.0], rtol=1e-8)
    with pytest.raises(ValidationError):
        get_shape("nope")


def test_box_and_law():
    box = Box(np.zeros(3), np.array([1.0, 2.0, 3.0]))
    assert box.volume == pytest.approx(6.0)
    assert box.contains(np.array([[0.5, 1, 1], [2, 0, 0]])).tolist() == [True, False]
    with pytest.raises(ValidationError):
        Box(np.ones(3), np.zeros(3))
    law = DistributionLaw(box, lambda x: np.ones(len(x)), 1.0)
    assert law.phi(0.1) == pytest.approx(0.01)
    with pytest.raises(ValidationError):
        DistributionLaw(box, lambda x: 1.0, 1.5)
    with pytest.raises(ValidationError):
        MediumSpec(law, -1.0)
    assert MediumSpec(law, 1.0).kappa == 1.0
