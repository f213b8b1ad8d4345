"""Gravitational fields: radial closed forms, sampled sums, hydrostatic balance."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stratovar.gravity import (
    RadialDensityModel,
    SampledDensity,
    centrifugal,
    hydrostatic_solve,
    monopole_decomposition,
    newtonian_potential,
    poisson_residual,
    solve_phi1,
    static_equilibrium_residual,
)


def _unit_ball():
    return RadialDensityModel(radii=[0.0, 1.0], densities=[1.0], G=1.0)


def _two_layer():
    return RadialDensityModel(radii=[0.0, 0.5, 1.0], densities=[2.0, 1.0], G=1.0)


def test_uniform_ball_potential_worked_values():
    ball = _unit_ball()
    assert ball.potential(np.zeros(3)) == pytest.approx(-2.0 * np.pi, rel=1e-14)
    assert ball.potential(np.array([2.0, 0.0, 0.0])) == pytest.approx(
        -2.0 * np.pi / 3.0, rel=1e-14
    )
    # continuous through the surface
    inner = ball.potential(np.array([1.0 - 1e-9, 0.0, 0.0]))
    outer = ball.potential(np.array([1.0 + 1e-9, 0.0, 0.0]))
    assert abs(inner - outer) < 1e-7


def test_uniform_ball_gravity_profile():
    ball = _unit_ball()
    r = np.array([0.0, 0.5, 1.0, 2.0])
    g = ball.gravity(r)
    expect = np.array([0.0, 4.0 * np.pi / 3.0 * 0.5, 4.0 * np.pi / 3.0, np.pi / 3.0])
    assert np.max(np.abs(g - expect)) < 1e-13


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1.8, 1.8), min_size=3, max_size=3))
def test_gradient_is_derivative_of_potential(coords):
    ball = _two_layer()
    x = np.array(coords)
    h = 1e-6
    grad = ball.potential_gradient(x)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (ball.potential(x + e) - ball.potential(x - e)) / (2.0 * h)
        assert abs(grad[i] - fd) < 2e-5


def test_hessian_trace_satisfies_poisson():
    ball = _two_layer()
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.uniform(-1.2, 1.2, 3)
        r = np.linalg.norm(x)
        if min(abs(r - 0.5), abs(r - 1.0)) < 0.05:
            continue  # stay off the density jumps
        H = ball.potential_hessian(x)
        assert np.max(np.abs(H - H.T)) < 1e-13
        lap = np.trace(H)
        expect = 4.0 * np.pi * ball.density(np.array([r]))[0]
        assert abs(lap - expect) < 1e-11


def test_hessian_at_center():
    ball = _two_layer()
    H = ball.potential_hessian(np.zeros(3))
    assert np.max(np.abs(H - 4.0 * np.pi / 3.0 * 2.0 * np.eye(3))) < 1e-13


def test_radial_model_input_validation():
    with pytest.raises(ValueError):
        RadialDensityModel(radii=[0.1, 1.0], densities=[1.0])
    with pytest.raises(ValueError):
        RadialDensityModel(radii=[0.0, 1.0, 0.5], densities=[1.0, 1.0])
    with pytest.raises(ValueError):
        RadialDensityModel(radii=[0.0, 1.0], densities=[-1.0])
    with pytest.raises(ValueError):
        RadialDensityModel(radii=[0.0, 1.0], densities=[1.0, 1.0])


def test_sampled_density_approximates_radial_model():
    ball = _unit_ball()
    samp = SampledDensity.from_model(ball, extent=1.25, n=24, subsample=2)
    assert len(samp.points) < 24**3  # vacuum cells dropped
    assert abs(samp.total_mass / ball.total_mass - 1.0) < 0.01
    pts = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 3.0, 0.0]])
    phi = newtonian_potential(samp, pts)
    exact = ball.potential(pts)
    assert np.max(np.abs(phi / exact - 1.0)) < 0.01


def test_newtonian_potential_dispatch():
    with pytest.raises(TypeError):
        newtonian_potential(object(), np.zeros((1, 3)))


def test_poisson_residual_exact_for_quadratic():
    n, h = 9, 0.1
    ax = (np.arange(n) - n // 2) * h
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    phi = 0.5 * (X**2 + Y**2 + Z**2)
    rho = np.full_like(phi, 3.0 / (4.0 * np.pi))
    rep = poisson_residual(phi, rho, h, G=1.0)
    assert rep["linf"] < 1e-12
    assert rep["field"].shape == (n - 2, n - 2, n - 2)


def test_poisson_residual_needs_grid():
    with pytest.raises(ValueError):
        poisson_residual(np.zeros((4, 4)), np.zeros((4, 4)), 0.1)


def test_monopole_split_far_field():
    off = RadialDensityModel(
        radii=[0.0, 1.0], densities=[1.0], G=1.0, center=np.array([0.3, 0.0, 0.0])
    )
    dec = monopole_decomposition(off, cutoff=1.5)
    M = dec["mass"]
    assert M == pytest.approx(4.0 * np.pi / 3.0, rel=1e-13)
    # beyond twice the cutoff the blend is complete: pure monopole about origin
    far = np.array([[4.0, 0.0, 0.0], [0.0, 6.0, 0.0]])
    ms = dec["m_s"](far)
    assert np.max(np.abs(ms + M / np.linalg.norm(far, axis=1))) < 1e-13 * M
    # inside the cutoff the monopole part is switched off entirely
    assert np.max(np.abs(dec["m_s"](np.array([[1.0, 0.0, 0.0]])))) == 0.0
    # the remainder decays one power faster than the monopole
    rs = np.array([4.0, 8.0, 16.0])
    resid = np.abs(dec["phi_tilde"](np.column_stack([rs, np.zeros(3), np.zeros(3)])))
    slope = np.polyfit(np.log(rs), np.log(resid), 1)[0]
    assert -2.3 < slope < -1.9


def test_monopole_cutoff_must_cover_support():
    with pytest.raises(ValueError):
        monopole_decomposition(_unit_ball(), cutoff=0.5)


def test_solve_phi1_translation_gives_dipole():
    # rigidly translating a uniform ball perturbs the outside potential by
    # -G M (u . xhat) / r^2 to leading order
    ball = _unit_ball()
    u = np.array([0.01, 0.0, 0.0])
    targets = np.array([[2.5, 0.0, 0.0], [4.0, 0.0, 0.0], [-3.0, 0.0, 0.0]])
    out = solve_phi1(
        ball,
        lambda x: np.broadcast_to(u, (len(x), 3)).copy(),
        (1.6, 40),
        targets=targets,
    )
    r = np.linalg.norm(targets, axis=1)
    exact = -ball.total_mass * (targets @ u) / r**3
    assert np.max(np.abs(out.values / exact - 1.0)) < 0.02


def test_solve_phi1_grid_must_cover_model():
    ball = _unit_ball()
    with pytest.raises(ValueError):
        solve_phi1(ball, lambda x: np.zeros((len(x), 3)), (0.8, 16))


def test_centrifugal_worked_values():
    out = centrifugal(np.array([0.0, 0.0, 2.0]), np.array([1.0, 0.0, 0.0]))
    assert out["Psi"] == -2.0
    assert np.array_equal(out["grad"], np.array([-4.0, 0.0, 0.0]))
    assert np.trace(out["hess"]) == -8.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3),
       st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3))
def test_centrifugal_gradient_consistency(om, xv):
    Omega = np.array(om)
    x = np.array(xv)
    out = centrifugal(Omega, x)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (centrifugal(Omega, x + e)["Psi"]
              - centrifugal(Omega, x - e)["Psi"]) / (2.0 * h)
        assert abs(out["grad"][i] - fd) < 1e-5
    assert np.trace(out["hess"]) == pytest.approx(-2.0 * Omega @ Omega, abs=1e-12)


def test_static_equilibrium_of_hydrostatic_ball():
    ball = _unit_ball()
    prof = hydrostatic_solve(ball)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-0.5, 0.5, (30, 3))
    r = np.linalg.norm(pts, axis=1)
    rho = ball.density(r)
    grad_phi = ball.potential_gradient(pts)
    # T0 = -p0 I and dp0/dr = -rho g, so div T0 = -grad p0 = rho g rhat
    div_T0 = ball.density(r)[:, None] * ball.gravity(r)[:, None] * (
        pts / np.where(r > 0, r, 1.0)[:, None]
    )
    rep = static_equilibrium_residual(rho, grad_phi, np.zeros((30, 3)), div_T0)
    assert rep["linf"] < 1e-12
    with pytest.raises(ValueError):
        static_equilibrium_residual(rho, grad_phi, np.zeros((29, 3)), div_T0)


def test_hydrostatic_pressure_closed_form():
    ball = _unit_ball()
    prof = hydrostatic_solve(ball)
    # center pressure of the uniform ball: 2 pi G rho^2 R^2 / 3
    assert prof.pressure(np.array([0.0]))[0] == pytest.approx(2.0 * np.pi / 3.0, abs=1e-15)
    assert prof.pressure(np.array([1.0]))[0] == 0.0
    assert len(prof.radii) == 200


def test_hydrostatic_pressure_matches_quadrature():
    model = _two_layer()
    prof = hydrostatic_solve(model)
    for r0 in (0.1, 0.3, 0.6, 0.9):
        total = 0.0
        for a, b in ((r0, 0.5), (0.5, 1.0)):
            a = max(a, r0)
            if b <= a:
                continue
            # density is constant within a layer; sample it at the midpoint so
            # the trapezoid endpoints do not straddle the jump
            s = np.linspace(a, b, 4001)
            rho = model.density(np.array([0.5 * (a + b)]))[0]
            total += rho * np.trapezoid(model.gravity(s), s)
        assert prof.pressure(np.array([r0]))[0] == pytest.approx(total, rel=1e-6)
    # continuous across the density jump
    below = prof.pressure(np.array([0.5 - 1e-9]))[0]
    above = prof.pressure(np.array([0.5 + 1e-9]))[0]
    assert abs(below - above) < 1e-7


def test_hydrostatic_solve_rejects_rotation():
    with pytest.raises(ValueError):
        hydrostatic_solve(_unit_ball(), Omega=np.array([0.0, 0.0, 0.1]))
