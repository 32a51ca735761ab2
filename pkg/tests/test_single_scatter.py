import warnings

import numpy as np
import pytest

from smallbody.core_types import Particle, make_plane_wave
from smallbody.errors import BodyNotSmallError, PreconditionError
from smallbody.potential import PotentialField, RadialProfile
from smallbody.quadrature import BallRule, gauss_legendre, graded_rule, integrate_ball
from smallbody.single_scatter import (
    AccuracyWarning,
    SingleMoments,
    coeffs_single,
    compute_H,
    eval_field_single,
    oracle_solve_ie16,
    solve_single,
)

WAVE = make_plane_wave([1, 0, 0], [0, 0, 1], 1.0)


def particle(a=0.05, gamma=1.0, kappa=1.0, center=(0, 0, 0)):
    return Particle(np.asarray(center, float), a, gamma, kappa)


def test_zero_gamma_gives_zero_everything():
    pt = particle(gamma=0.0)
    a, A, B, b = coeffs_single(pt, 1.0)
    assert a == 0 and b == 0 and not A.any() and not B.any()
    m = solve_single(pt, WAVE)
    assert not m.V.any() and m.nu == 0
    x = np.array([[0, 0, 1.0], [1.0, 0, 0]])
    np.testing.assert_array_equal(eval_field_single(x, m, WAVE), WAVE(x))


@pytest.mark.parametrize("k", [0.5, 2.0])
def test_vector_coefficients_vanish_by_symmetry(k):
    pt = particle(a=0.1, gamma=3.0)
    a, A, B, b = coeffs_single(pt, k)
    assert np.abs(A).max() < 1e-14 * abs(a) + 1e-300
    assert np.abs(B).max() < 1e-12 * abs(b)


def test_a_m_matches_radial_reduction():
    pt = particle(a=0.01, gamma=1.0)
    k = 1.0
    pr = RadialProfile.of(pt)
    t, w = gauss_legendre(40, 0.0, 1.0)
    r = pt.radius * t
    # int_0^a p(r) exp(ikr) / (4 pi r) 4 pi r^2 dr
    ref = pt.radius * (w @ (pr.p(r) * np.exp(1j * k * r) * r))
    a_m = coeffs_single(pt, k)[0]
    assert a_m == pytest.approx(ref, rel=1e-12)


def test_b_m_matches_radial_reduction():
    pt = particle(a=0.05, gamma=2.0)
    k = 1.3
    pr = RadialProfile.of(pt)
    t, w = graded_rule(32, pr.levels(k))
    r = pt.radius * t
    # q . grad g = p'/(k^2+p) * d/dr(exp(ikr)/(4 pi r)) over the ball
    dg = np.exp(1j * k * r) * (1j * k * r - 1) / (4 * np.pi * r**2)
    ref = 4 * np.pi * pt.radius * (w @ (pr.dp(r) / (k**2 + pr.p(r)) * dg * r**2))
    assert coeffs_single(pt, k)[3] == pytest.approx(ref, rel=1e-10)


def test_closed_form_matches_elimination():
    pt = particle(a=0.05, gamma=1 + 0.5j)
    m = solve_single(pt, WAVE)
    # residual of the 2x2 moment system
    r1 = m.V - m.V0 - m.a * m.V - m.A * m.nu
    r2 = m.nu - m.nu0 - m.B @ m.V - m.b * m.nu
    assert np.abs(r1).max() < 1e-13 * np.abs(m.V).max()
    assert abs(r2) < 1e-13 * np.abs(m.V).max()


def test_weak_scatterer_decouples():
    m = solve_single(particle(gamma=1e-10), WAVE)
    np.testing.assert_allclose(m.V, m.V0, rtol=1e-8, atol=1e-40)


def test_sources_match_quadrature():
    pt = particle(a=0.05, gamma=2.0, center=(0.1, 0.2, 0.3))
    m = solve_single(pt, WAVE)
    pr = RadialProfile.of(pt)
    V0 = integrate_ball(lambda y: pr.p(np.linalg.norm(y - pt.center, axis=-1))[:, None] * WAVE(y), pt.center, pt.radius)
    np.testing.assert_allclose(m.V0, V0, rtol=1e-12)
    assert abs(m.nu0) < 1e-12 * np.abs(V0).max()


def test_body_not_small():
    with pytest.raises(BodyNotSmallError):
        solve_single(particle(a=0.5, gamma=1e4, kappa=0.1), WAVE)


def test_large_b_warns():
    with pytest.warns(AccuracyWarning, match=r"\|b_m\|"):
        m = solve_single(particle(a=0.01, gamma=1.0), WAVE)
    assert m.warnings


def test_field_decays_to_incident():
    m = solve_single(particle(a=0.05, gamma=5.0), WAVE)
    prev = np.inf
    for d in (1.0, 10.0, 100.0):
        x = np.array([d, 0.3, 0.0])
        scat = np.linalg.norm(eval_field_single(x, m, WAVE) - WAVE(x))
        assert scat < prev
        prev = scat
    assert prev < 1e-3 * np.linalg.norm(m.V)


def test_field_distance_checks():
    m = solve_single(particle(a=0.05), WAVE)
    with pytest.raises(PreconditionError):
        eval_field_single(np.array([0.09, 0, 0]), m, WAVE)
    with pytest.warns(AccuracyWarning):
        eval_field_single(np.array([0.2, 0, 0]), m, WAVE)
    with warnings.catch_warnings():
        warnings.simplefilter("error", AccuracyWarning)
        eval_field_single(np.array([1.0, 0, 0]), m, WAVE)


def test_H_of_plane_wave():
    k, omega, mu = 2.0, 3.0, 1.5
    w = make_plane_wave([0, 1, 0], [0.6, 0, 0.8], k)
    x = np.array([0.1, 0.2, 0.3])
    exact = k / (omega * mu) * np.cross(w.direction, w.amplitude) * np.exp(1j * k * w.direction @ x)
    errs = [np.abs(compute_H(w, x, omega, mu, h) - exact).max() for h in (1e-2, 5e-3)]
    assert errs[1] < errs[0] / 3.5  # second order
    assert errs[1] < 1e-4
    np.testing.assert_allclose(compute_H(lambda y: np.ones(3), x, omega, mu), 0, atol=1e-12)


def test_oracle_zero_gamma():
    o = oracle_solve_ie16(particle(gamma=0.0), WAVE, cells_per_diameter=8)
    np.testing.assert_array_equal(o.E, WAVE(o.nodes))


def test_oracle_mesh_precondition():
    with pytest.raises(PreconditionError):
        oracle_solve_ie16(particle(), WAVE, cells_per_diameter=6)


def test_oracle_frozen_moment():
    o = oracle_solve_ie16(particle(), WAVE, cells_per_diameter=8)
    V, nu = o.moments()
    assert o.residual < 1e-8
    assert V[0, 0] == pytest.approx(7.37442264e-05 + 2.89015106e-10j, rel=1e-7)
    assert abs(nu[0]) < 1e-15


def test_oracle_divergence_identity_first_order():
    # div(K^2 E) = 0 inside the ball, by central differences on the oracle grid
    pt = particle()
    rms = []
    for n in (8, 12):
        o = oracle_solve_ie16(pt, WAVE, cells_per_diameter=n)
        h = 2 * pt.radius / n
        idx = np.round((o.nodes - pt.center + pt.radius - h / 2) / h).astype(int)
        where = {tuple(i): j for j, i in enumerate(idx)}
        F = (1.0 + PotentialField([pt], 1.0).p(o.nodes))[:, None] * o.E
        divs = []
        for key in where:
            terms = []
            for ax in range(3):
                e = np.eye(3, dtype=int)[ax]
                fwd, bwd = where.get(tuple(key + e)), where.get(tuple(key - e))
                if fwd is None or bwd is None:
                    break
                terms.append((F[fwd, ax] - F[bwd, ax]) / (2 * h))
            if len(terms) == 3:
                divs.append(sum(terms))
        rms.append(np.sqrt(np.mean(np.abs(divs) ** 2)))
    scale = abs(pt.gamma) / (2 * np.pi * pt.radius**2)  # |grad K^2| near the centre
    assert rms[1] < rms[0]
    assert rms[1] < 0.02 * scale


@pytest.mark.slow
def test_oracle_self_convergence():
    pt = particle()
    V = [oracle_solve_ie16(pt, WAVE, cells_per_diameter=n).moments()[0][0, 0] for n in (8, 12, 16)]
    assert abs(V[2] - V[1]) < abs(V[1] - V[0])


def test_neglected_kernel_terms_are_small():
    # J = int (g(x,y) - g(x,x_m)) p E0 dy against I = g(x,x_m) int p E0 dy
    pt = particle(a=0.05, gamma=1.0)
    pr = RadialProfile.of(pt)
    rule = BallRule()
    k = 1.0
    for d in (0.5, 2.0):
        x = np.array([d, 0, 0])
        gm = np.exp(1j * k * d) / (4 * np.pi * d)

        def diff(y):
            r = np.linalg.norm(x - y, axis=-1)
            return ((np.exp(1j * k * r) / (4 * np.pi * r) - gm) * pr.p(np.linalg.norm(y, axis=-1)))[:, None] * WAVE(y)

        J = integrate_ball(diff, pt.center, pt.radius, rule)
        I = gm * integrate_ball(lambda y: pr.p(np.linalg.norm(y, axis=-1))[:, None] * WAVE(y), pt.center, pt.radius, rule)
        assert np.linalg.norm(J) / np.linalg.norm(I) <= 2.0 * pt.radius / d


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason=(
        "The closed-form moment V overshoots the converged collocation value by a factor that grows as "
        "a shrinks (1.14 at a=0.05, 2.0 at a=0.0125 for gamma=1, kappa=1, k=1); an independent radial "
        "ODE solve agrees with the collocation oracle to 1%, so the gap is in the truncated formula."
    ),
)
def test_moment_gap_vanishes_as_a_decreases():
    gaps = []
    for a in (0.05, 0.025, 0.0125):
        pt = particle(a=a)
        V_formula = solve_single(pt, WAVE).V[0]
        V_oracle = oracle_solve_ie16(pt, WAVE, cells_per_diameter=12).moments()[0][0, 0]
        gaps.append(abs(V_formula - V_oracle) / abs(V_oracle))
    assert gaps[0] > gaps[1] > gaps[2]


def test_moments_dataclass_fields():
    m = solve_single(particle(), WAVE)
    assert isinstance(m, SingleMoments) and m.k == 1.0
