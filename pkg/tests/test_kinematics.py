"""Finite-strain bookkeeping: worked instances, transform identities, scaling."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stratovar.kinematics import (
    deformation_state,
    inverse_piola_transform,
    linearization_check,
    material_density,
    piola_transform,
    surface_element_transform,
)


def _well_conditioned_F(draw_vals):
    # perturbation of the identity with spectral norm < 1, so det F > 0
    a = np.array(draw_vals).reshape(3, 3)
    return np.eye(3) + 0.3 * a


small_entries = st.lists(
    st.floats(-1.0, 1.0, allow_nan=False), min_size=9, max_size=9
)


def test_uniform_dilation_worked_values():
    state = deformation_state(1.1 * np.eye(3))
    assert abs(state.J - 1.331) < 1e-12
    assert np.max(np.abs(state.C - 1.21 * np.eye(3))) < 1e-12
    assert np.max(np.abs(state.e - 0.105 * np.eye(3))) < 1e-12


def test_identity_deformation_is_trivial():
    state = deformation_state(np.eye(3))
    assert state.J == 1.0
    assert np.array_equal(state.C, np.eye(3))
    assert np.max(np.abs(state.e)) == 0.0


def test_reflections_and_collapses_rejected():
    with pytest.raises(ValueError):
        deformation_state(np.diag([-1.0, 1.0, 1.0]))
    with pytest.raises(ValueError):
        deformation_state(np.diag([1.0, 1.0, 0.0]))


@settings(max_examples=50, deadline=None)
@given(small_entries)
def test_green_strain_symmetric_and_consistent(vals):
    F = _well_conditioned_F(vals)
    state = deformation_state(F)
    assert np.max(np.abs(state.C - F.T @ F)) < 1e-14
    assert np.max(np.abs(state.e - state.e.T)) == 0.0
    assert abs(state.J - np.linalg.det(F)) < 1e-13


def test_piola_of_pressure_under_dilation():
    TPK = piola_transform(np.eye(3), 1.1 * np.eye(3))
    assert np.max(np.abs(TPK - 1.21 * np.eye(3))) < 1e-12


@settings(max_examples=50, deadline=None)
@given(small_entries, small_entries)
def test_piola_round_trip(f_vals, t_vals):
    F = _well_conditioned_F(f_vals)
    T = np.array(t_vals).reshape(3, 3)
    back = inverse_piola_transform(piola_transform(T, F), F)
    scale = 1.0 + np.max(np.abs(T))
    assert np.max(np.abs(back - T)) < 1e-12 * scale


@settings(max_examples=50, deadline=None)
@given(small_entries, small_entries)
def test_piola_preserves_surface_force(f_vals, t_vals):
    # T . (J F^-T nu) must equal (piola T) . nu for any direction
    F = _well_conditioned_F(f_vals)
    T = np.array(t_vals).reshape(3, 3)
    J = np.linalg.det(F)
    nu = np.array([1.0, 0.0, 0.0])
    lhs = T @ surface_element_transform(F, J, nu)
    rhs = piola_transform(T, F) @ nu
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * (1.0 + np.max(np.abs(T)))


def test_surface_element_worked_value():
    F = np.diag([2.0, 1.0, 1.0])
    out = surface_element_transform(F, 2.0, np.array([0.0, 1.0, 0.0]))
    assert np.max(np.abs(out - np.array([0.0, 2.0, 0.0]))) == 0.0


@settings(max_examples=50, deadline=None)
@given(small_entries)
def test_surface_element_matches_cofactor_matrix(vals):
    # independent route: cofactor columns are cross products of F's columns
    F = _well_conditioned_F(vals)
    J = np.linalg.det(F)
    cof = np.column_stack([
        np.cross(F[:, 1], F[:, 2]),
        np.cross(F[:, 2], F[:, 0]),
        np.cross(F[:, 0], F[:, 1]),
    ])
    for nu in np.eye(3):
        assert np.max(np.abs(surface_element_transform(F, J, nu) - cof @ nu)) < 1e-13


def test_surface_element_requires_unit_normal():
    with pytest.raises(ValueError):
        surface_element_transform(np.eye(3), 1.0, np.array([0.0, 2.0, 0.0]))


def test_density_transport():
    assert material_density(5.0, 1.331) == pytest.approx(5.0 / 1.331, rel=1e-15)
    with pytest.raises(ValueError):
        material_density(-1.0, 1.0)
    with pytest.raises(ValueError):
        material_density(1.0, 0.0)


def test_linearization_orders_generic_gradient():
    rng = np.random.default_rng(0)
    grad_u = rng.standard_normal((3, 3))
    report = linearization_check(grad_u, [1e-2, 3e-3, 1e-3, 3e-4])
    assert 1.8 < report["det_slope"] < 2.3
    assert 1.8 < report["inv_transpose_slope"] < 2.3
    assert np.all(np.asarray(report["det_residuals"]) >= 0.0)


def test_linearization_exact_branch_for_nilpotent_gradient():
    # strictly upper triangular gradient: det(I + eps G) == 1 exactly,
    # so the determinant residual vanishes and the slope degenerates
    G = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    report = linearization_check(G, [1e-2, 1e-3])
    assert report["det_slope"] == np.inf
    assert 1.8 < report["inv_transpose_slope"] < 2.3


def test_linearization_epsilon_domain():
    with pytest.raises(ValueError):
        linearization_check(np.eye(3), [0.7])
    with pytest.raises(ValueError):
        linearization_check(np.eye(3), [-1e-3])
