"""Surface calculus: curvature fields, quadrature, jumps, interface formulas."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stratovar.surface import (
    TwoSidedField,
    cylinder_patch,
    jump_algebra,
    modified_traction,
    normality_check,
    plane_patch,
    project_tangential,
    sphere_patch,
    surface_divergence,
    surface_divergence_theorem_check,
    surface_gradient,
    wswap_check,
)

param_vals = st.lists(st.floats(0.3, 2.7), min_size=2, max_size=2)


def _unit_normal(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


@settings(max_examples=50, deadline=None)
@given(param_vals, st.floats(0.5, 3.0))
def test_sphere_curvature_field(stv, R):
    patch = sphere_patch(R)
    s, t = np.array([stv[0]]), np.array([stv[1]])
    x = patch.chart(s, t)
    W = patch.weingarten_xyz(x)[0]
    nu = patch.normal_xyz(x)[0]
    assert abs(np.trace(W) - 2.0 / R) < 1e-12
    assert np.max(np.abs(W - W.T)) == 0.0
    assert np.max(np.abs(W @ nu)) < 1e-13
    assert abs(np.linalg.norm(x) - R) < 1e-12


def test_cylinder_curvature_field():
    patch = cylinder_patch(0.7)
    x = patch.chart(np.array([0.2]), np.array([1.0]))
    W = patch.weingarten_xyz(x)[0]
    assert abs(np.trace(W) - 1.0 / 0.7) < 1e-13
    assert np.max(np.abs(W @ patch.normal_xyz(x)[0])) < 1e-13
    # the axis direction is flat
    assert np.max(np.abs(W @ np.array([0.0, 0.0, 1.0]))) < 1e-13


def test_plane_patch_is_flat():
    patch = plane_patch(np.zeros(3), np.array([1.0, 0.0, 0.0]), np.array([0.0, 2.0, 0.0]),
                        s_range=(0.0, 1.0), t_range=(0.0, 1.0))
    x = patch.chart(np.array([0.3]), np.array([0.4]))
    assert np.max(np.abs(patch.weingarten_xyz(x))) == 0.0
    assert np.array_equal(patch.normal_xyz(x)[0], np.array([0.0, 0.0, 1.0]))
    # area element includes |e1 x e2| = 2
    q = patch.quadrature(4, 4)
    assert q["w"].sum() == pytest.approx(2.0, rel=1e-13)


def test_closed_sphere_quadrature_is_exact():
    patch = sphere_patch(1.3)
    q = patch.quadrature(8, 16)
    R = 1.3
    assert q["w"].sum() == pytest.approx(4.0 * np.pi * R**2, rel=1e-13)
    moment = np.sum(q["w"] * q["x"][:, 2] ** 2)
    assert moment == pytest.approx(4.0 * np.pi * R**4 / 3.0, rel=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3))
def test_tangential_projection(v):
    nu = np.array([0.0, 0.0, 1.0])
    out = project_tangential(np.array(v), nu)
    assert out @ nu == 0.0
    with pytest.raises(ValueError):
        project_tangential(np.array(v), 2.0 * nu)


def test_surface_gradient_of_linear_field():
    patch = sphere_patch(1.3)
    g = np.array([0.4, -0.7, 0.2])
    s = np.array([0.3, 1.1, 2.0])
    t = np.array([0.5, 2.0, 4.0])
    gs = surface_gradient(lambda x: x @ g, patch, s, t)
    nu = patch.normal(s, t)
    P = np.eye(3)[None] - nu[:, :, None] * nu[:, None, :]
    assert np.max(np.abs(gs - np.einsum("nij,j->ni", P, g))) < 1e-7


def test_surface_divergence_identities():
    patch = sphere_patch(1.3)
    s = np.array([0.3, 1.1, 2.0])
    t = np.array([0.5, 2.0, 4.0])
    # position field: grad_S x is the tangential projector, trace 2
    div_x = surface_divergence(lambda x: x, patch, s, t)
    assert np.max(np.abs(div_x - 2.0)) < 1e-7
    # normal field: divergence is the summed curvature 2/R
    div_nu = surface_divergence(_unit_normal, patch, s, t)
    assert np.max(np.abs(div_nu - 2.0 / 1.3)) < 1e-7


def test_surface_divergence_needs_vector_field():
    patch = sphere_patch(1.0)
    with pytest.raises(ValueError):
        surface_divergence(lambda x: x[:, 0], patch, np.array([0.5]), np.array([0.5]))


def test_surface_gradient_annihilates_normal():
    patch = sphere_patch(1.0)
    s = np.array([0.7, 1.4])
    t = np.array([1.0, 3.0])
    G = surface_gradient(lambda x: np.sin(x), patch, s, t)
    nu = patch.normal(s, t)
    assert np.max(np.abs(np.einsum("nij,nj->ni", G, nu))) < 1e-12


def test_jump_algebra_integer_fields_exact():
    F = TwoSidedField(np.array([[2.0, 1.0], [0.0, 3.0]]),
                      np.array([[1.0, -1.0], [2.0, 5.0]]))
    G = TwoSidedField(np.array([[1.0, 0.0], [4.0, 2.0]]),
                      np.array([[3.0, 2.0], [1.0, 0.0]]))
    rep = jump_algebra(F, G, product=np.matmul)
    assert rep["leibniz_residual"] == 0.0
    assert rep["mean_form_residual"] == 0.0
    assert np.array_equal(rep["jump"], F.plus @ G.plus - F.minus @ G.minus)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jump_algebra_random_fields(seed):
    rng = np.random.default_rng(seed)
    F = TwoSidedField(rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4))
    G = TwoSidedField(rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4))
    rep = jump_algebra(F, G)
    assert rep["leibniz_residual"] < 1e-14
    assert rep["mean_form_residual"] < 1e-14


def test_two_sided_field_callables():
    F = TwoSidedField(lambda x: x[:, 0], lambda x: -x[:, 0])
    x = np.array([[2.0, 0.0, 0.0]])
    assert F.jump()(x)[0] == 4.0
    assert F.mean()(x)[0] == 0.0


def test_wswap_on_rotational_field():
    patch = sphere_patch(1.0)
    a = lambda x: np.cross(np.array([0.0, 0.0, 1.0]), x)
    assert wswap_check(a, patch) < 1e-8


def test_wswap_rejects_non_tangential_field():
    patch = sphere_patch(1.0)
    with pytest.raises(ValueError):
        wswap_check(lambda x: x, patch)  # radial, not tangential


def test_closed_surface_divergence_integrates_to_zero():
    patch = sphere_patch(1.0)

    def ffield(x):
        v = np.stack([x[:, 1] * x[:, 2] ** 2, x[:, 0], -x[:, 0] * x[:, 1]], axis=-1)
        nu = _unit_normal(x)
        return v - np.einsum("ni,ni->n", v, nu)[:, None] * nu

    assert surface_divergence_theorem_check(ffield, patch, ns=64, nt=128) < 1e-6


def test_divergence_theorem_needs_closed_patch():
    patch = plane_patch(np.zeros(3), np.eye(3)[0], np.eye(3)[1])
    with pytest.raises(ValueError):
        surface_divergence_theorem_check(lambda x: x, patch)


def test_normality_check_worked_values():
    nu = np.array([0.0, 0.0, 1.0])
    assert normality_check(-2.0 * np.eye(3), nu) == 0.0
    T = -2.0 * np.eye(3)
    T[0, 2] = T[2, 0] = 0.5
    assert normality_check(T, nu) == pytest.approx(0.5, abs=1e-15)


def test_modified_traction_continuous_fields():
    patch = sphere_patch(1.0)
    tp = lambda x: -0.3 * np.broadcast_to(np.eye(3), (len(x), 3, 3)).copy()
    p0 = lambda x: 1.0 + 0.2 * x[:, 2]
    uf = lambda x: 0.05 * x
    out = modified_traction(tp, p0, uf, patch,
                            np.array([0.4, 1.2]), np.array([0.3, 2.2]))
    # one-sided fields passed as plain callables are continuous by assumption
    assert np.max(np.abs(out["jump"])) == 0.0
    assert out["minus"].shape == (2, 3)


def test_modified_traction_rejects_pressure_jump():
    patch = sphere_patch(1.0)
    tp = lambda x: np.zeros((len(x), 3, 3))
    uf = lambda x: 0.0 * x
    p0 = TwoSidedField(lambda x: 1.0 + 0.0 * x[:, 2], lambda x: 2.0 + 0.0 * x[:, 2])
    with pytest.raises(ValueError):
        modified_traction(tp, p0, uf, patch, np.array([0.4]), np.array([0.3]))
