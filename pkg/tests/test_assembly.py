"""Discrete action assembly: structure, consistency, spectra, time stepping."""

import numpy as np
import pytest

from stratovar.assembly import (
    action_value,
    assemble,
    boundary_phi1,
    eigenmodes,
    evolve,
    expansion_check,
    frechet_fd_check,
    hydrostatic_assemble,
    interface_residuals,
    static_phi1,
)
from stratovar.elastica import isotropic_gamma
from stratovar.mesh import DofMap, box_mesh
from stratovar.model import EarthModel, Material

GAM = isotropic_gamma(2.0, 1.0)


def _free_body():
    mesh = box_mesh(n=2)
    model = EarthModel(materials=[Material("body", "solid", rho0=1.0, gamma=GAM)])
    return model, mesh


def _loaded_body():
    # pressure-loaded hull keeps the prestressed box in equilibrium
    mesh = box_mesh(n=2, hull="FS")
    model = EarthModel(
        materials=[Material("body", "solid", rho0=1.0, gamma=GAM, p0=0.1)],
        G=1.0,
        geo_grad=lambda x: 0.05 * np.atleast_2d(x),
    )
    return model, mesh


def _split_rotating():
    mesh = box_mesh(n=2, interface="FS", kinds=("solid", "solid"))
    mats = [
        Material("west", "solid", rho0=1.0, gamma=GAM, p0=0.2),
        Material("east", "solid", rho0=2.0, gamma=isotropic_gamma(3.0, 1.5), p0=0.2),
    ]
    model = EarthModel(materials=mats, Omega=np.array([0.0, 0.0, 0.3]), G=1.0,
                       geo_grad=lambda x: 0.05 * np.atleast_2d(x))
    return model, mesh


def test_structural_matrix_properties():
    model, mesh = _split_rotating()
    system = assemble(model, mesh)
    assert np.max(np.abs(system.C + system.C.T)) < 1e-14
    assert np.max(np.abs(system.K - system.K.T)) < 1e-12
    assert np.max(np.abs(system.K_surface - system.K_surface.T)) < 1e-12
    assert np.linalg.norm(system.K_surface) > 1e-3  # the slip block really is there
    np.linalg.cholesky(system.M)


def test_threaded_assembly_matches_serial():
    model, mesh = _loaded_body()
    s1 = assemble(model, mesh, nthreads=1)
    s2 = assemble(model, mesh, nthreads=2)
    assert np.max(np.abs(s1.K - s2.K)) == 0.0
    assert np.max(np.abs(s1.M - s2.M)) == 0.0
    assert np.max(np.abs(s1.P - s2.P)) == 0.0


def test_quadratic_action_matches_direct_quadrature():
    model, mesh = _loaded_body()
    system = assemble(model, mesh)
    dm = system.dofmap
    rng = np.random.default_rng(7)
    qu = 0.01 * rng.standard_normal(dm.n_u)
    qp = 0.01 * rng.standard_normal(dm.n_phi)
    qdot = 0.01 * rng.standard_normal(dm.n_u)
    from_matrices = system.quadratic_action(qu, qp, qdot)
    direct = action_value(
        (dm.expand_u(qu), dm.expand_phi(qp)),
        (dm.expand_u(qdot), np.zeros(mesh.n_geom)),
        model, mesh,
    )
    assert from_matrices == pytest.approx(direct["A2"], rel=1e-12)
    assert direct["A1"] != 0.0  # first-order terms carried by the background


def test_gradient_matches_action_differences():
    model, mesh = _loaded_body()
    system = assemble(model, mesh)
    dm = system.dofmap
    rng = np.random.default_rng(8)
    qu = 0.01 * rng.standard_normal(dm.n_u)
    qp = 0.01 * rng.standard_normal(dm.n_phi)
    qdot = 0.01 * rng.standard_normal(dm.n_u)
    g = system.gradient(qu, qp, qdot)
    dq = rng.standard_normal(dm.n_u + dm.n_phi)
    dq /= np.linalg.norm(dq)
    h = 1e-6
    plus = system.quadratic_action(qu + h * dq[:dm.n_u], qp + h * dq[dm.n_u:], qdot)
    minus = system.quadratic_action(qu - h * dq[:dm.n_u], qp - h * dq[dm.n_u:], qdot)
    assert g @ dq == pytest.approx((plus - minus) / (2.0 * h), rel=1e-8)


def test_effective_stiffness_is_symmetric_psd():
    model, mesh = _loaded_body()
    system = assemble(model, mesh)
    Keff = system.effective_stiffness()
    assert np.max(np.abs(Keff - Keff.T)) < 1e-14
    vals = np.linalg.eigvalsh(0.5 * (Keff + Keff.T))
    assert vals[0] > -1e-10


def test_frechet_derivative_matches_finite_differences():
    model, mesh = _split_rotating()
    dm = DofMap(mesh)
    rng = np.random.default_rng(3)
    y0 = (0.01 * rng.standard_normal(dm.n_u), 0.01 * rng.standard_normal(dm.n_phi))
    ydot = 0.01 * rng.standard_normal(dm.n_u)
    err = frechet_fd_check(model, mesh, y0, h=1e-4, dofmap=dm, ydot=ydot)
    assert err < 1e-8


def test_frechet_step_size_domain():
    model, mesh = _free_body()
    dm = DofMap(mesh)
    y0 = (np.zeros(dm.n_u), np.zeros(dm.n_phi))
    with pytest.raises(ValueError):
        frechet_fd_check(model, mesh, y0, h=1e-2, dofmap=dm)


def test_expansion_check_requires_welded_mesh():
    model, mesh = _split_rotating()
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError, match="welded"):
        expansion_check(model, mesh, rng.standard_normal((mesh.n_nodes, 3)),
                        rng.standard_normal(mesh.n_geom), [1e-2, 1e-3])


def test_expansion_third_order_remainder():
    model, mesh = _free_body()
    rng = np.random.default_rng(7)
    u_dir = rng.standard_normal((mesh.n_nodes, 3))
    u_dir /= np.max(np.abs(u_dir))
    phi_dir = 0.1 * rng.standard_normal(mesh.n_geom)
    slope = expansion_check(model, mesh, u_dir, phi_dir, [1e-1, 3e-2, 1e-2, 3e-3])
    assert slope > 2.9


def test_free_body_rigid_modes():
    model, mesh = _free_body()
    system = assemble(model, mesh)
    out = eigenmodes(system.M, None, system.K, count=10)
    assert np.sum(np.abs(out["omega2"]) < 1e-10) == 6
    assert np.all(np.diff(out["omega2"]) > -1e-12)  # sorted
    # vectors are M-orthonormal
    V = out["vectors"]
    gram = V.T @ system.M @ V
    assert np.max(np.abs(np.diag(gram) - 1.0)) < 1e-10


def test_rotating_spectrum_solves_the_pencil():
    model, mesh = _free_body()
    model = EarthModel(materials=model.materials, Omega=np.array([0.0, 0.0, 0.4]))
    system = assemble(model, mesh)
    out = eigenmodes(system.M, system.C, system.K, count=8)
    worst = 0.0
    for w, v in zip(out["omega"], out["vectors"].T):
        r = (-w**2 * system.M + 1j * w * system.C + system.K) @ v
        worst = max(worst, np.max(np.abs(r)))
    assert worst < 1e-8


def test_evolve_conserves_energy():
    model, mesh = _loaded_body()
    dm = DofMap(mesh)
    rng = np.random.default_rng(11)
    u0 = 1e-3 * rng.standard_normal(dm.n_u)
    v0 = 1e-3 * rng.standard_normal(dm.n_u)
    out = evolve(model, mesh, u0, v0, dt=0.05, steps=200, dofmap=dm)
    assert out["drift"] < 1e-10
    assert len(out["t"]) == 201
    # reusing the assembled system and thinning the record changes nothing
    out2 = evolve(model, mesh, u0, v0, dt=0.05, steps=200, dofmap=dm,
                  system=out["system"], record_every=50)
    assert len(out2["t"]) == 5
    assert out2["drift"] == pytest.approx(out["drift"], rel=1e-6, abs=1e-14)


def test_evolve_accepts_nodal_state():
    model, mesh = _loaded_body()
    dm = DofMap(mesh)
    u_nodal = 1e-3 * np.stack([np.sin(mesh.nodes[:, 1]),
                               np.cos(mesh.nodes[:, 0]),
                               mesh.nodes[:, 2] ** 2], axis=-1)
    out = evolve(model, mesh, u_nodal, np.zeros_like(u_nodal), dt=0.05, steps=20,
                 dofmap=dm)
    reduced = evolve(model, mesh, dm.reduce_u(u_nodal),
                     np.zeros(dm.n_u), dt=0.05, steps=20, dofmap=dm)
    assert np.max(np.abs(out["u"][-1] - reduced["u"][-1])) < 1e-12


def test_hull_pressure_term_restores_rotational_neutrality():
    # without the hull load a prestressed free box picks up spurious
    # second-order energy under rigid rotation
    material = Material("body", "solid", rho0=1.0, gamma=GAM, p0=0.3)
    energies = {}
    for hull in ("FS", "EXT"):
        mesh = box_mesh(n=2, hull=hull)
        model = EarthModel(materials=[material])
        dm = DofMap(mesh)
        system = assemble(model, mesh, dofmap=dm)
        center = mesh.nodes.mean(axis=0)
        rot = np.cross(np.array([0.2, -0.1, 0.3]), mesh.nodes - center)
        q = dm.reduce_u(rot)
        energies[hull] = abs(q @ system.K @ q)
    assert energies["FS"] < 1e-12
    assert energies["EXT"] > 1e-2


def test_hydrostatic_form_rejects_deviatoric_prestress():
    model = EarthModel(materials=[
        Material("body", "solid", rho0=1.0, gamma=GAM, T0=np.diag([-1.0, -2.0, -3.0]))
    ])
    with pytest.raises(ValueError, match="deviatoric"):
        hydrostatic_assemble(model, box_mesh(n=2))


def test_hydrostatic_form_needs_geopotential():
    model = EarthModel(materials=[Material("body", "solid", rho0=1.0, gamma=GAM, p0=0.2)])
    with pytest.raises(ValueError, match="geopotential"):
        hydrostatic_assemble(model, box_mesh(n=2))


def test_hydrostatic_form_is_classical_without_prestress():
    zeros3 = lambda x: np.zeros((len(np.atleast_2d(x)), 3))
    model = EarthModel(
        materials=[Material("body", "solid", rho0=1.0, gamma=GAM, p0=0.0)],
        geo_grad=zeros3,
        geo_hess=lambda x: np.zeros((len(np.atleast_2d(x)), 3, 3)),
    )
    rep = hydrostatic_assemble(model, box_mesh(n=2))
    assert rep["rel_diff"] < 1e-14
    assert rep["surface_norm"] == 0.0


def test_interface_residuals_essential_conditions_exact():
    mesh = box_mesh(n=2, interface="FS", kinds=("fluid", "solid"))
    model = EarthModel(materials=[
        Material("ocean", "fluid", rho0=1.0, kappa=2.0, p0=0.0),
        Material("rock", "solid", rho0=2.0, gamma=GAM),
    ])
    dm = DofMap(mesh)
    rng = np.random.default_rng(9)
    u = dm.expand_u(0.01 * rng.standard_normal(dm.n_u))
    phi = 0.01 * rng.standard_normal(mesh.n_geom)
    res = interface_residuals(model, mesh, (u, phi))
    # slip constraint and single-valued potential hold by construction
    assert res["fs_normal_jump"] < 1e-14
    assert res["phi_jump"] < 1e-13
    assert res["ss_jump"] == 0.0
    # natural conditions are resolution-limited, not structural
    assert res["fs_traction_jump"] > 0.0
    assert res["phi_flux_jump"] > 0.0


def test_static_phi1_boundary_modes():
    model, mesh = _loaded_body()
    system = assemble(model, mesh)
    rng = np.random.default_rng(10)
    u = 0.01 * rng.standard_normal((mesh.n_nodes, 3))
    hull = sorted(mesh.hull_geom_nodes())
    phi_zero = static_phi1(model, mesh, u, system=system, boundary="zero")
    assert np.max(np.abs(phi_zero[hull])) == 0.0
    phi_mono = static_phi1(model, mesh, u, system=system, boundary="monopole")
    assert np.max(np.abs(phi_mono[hull])) > 0.0
    with pytest.raises(ValueError):
        static_phi1(model, mesh, u, system=system, boundary="fancy")


def test_boundary_phi1_far_field_dipole():
    # translating a uniform density box perturbs the distant potential by
    # the dipole of the displaced mass
    model, mesh = _free_body()
    u = np.zeros((mesh.n_nodes, 3))
    u[:, 0] = 0.01
    target = np.array([[6.0, 0.5, 0.5]])
    val = boundary_phi1(model, mesh, u, target)[0]
    exact = -1.0 * 0.01 / 5.5**2  # G M u / r^2 toward the box center
    assert val == pytest.approx(exact, rel=1e-3)


def test_model_mesh_cross_checks():
    _, mesh = _split_rotating()
    model = EarthModel(materials=[Material("only", "solid", rho0=1.0, gamma=GAM)])
    with pytest.raises(ValueError, match="regions"):
        assemble(model, mesh)
    mats = [
        Material("west", "fluid", rho0=1.0, kappa=2.0, p0=0.1),
        Material("east", "fluid", rho0=1.0, kappa=2.0, p0=0.1),
    ]
    wrong_kind = EarthModel(materials=mats)
    with pytest.raises(ValueError, match="west"):
        assemble(wrong_kind, box_mesh(n=2, interface="FS", kinds=("solid", "fluid")))
