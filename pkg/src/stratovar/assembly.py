"""Discretization of the second-order action on composite meshes.

Trilinear elements, 2x2x2 Gauss quadrature, and dense matrices at desk
scale.  The assembled system realizes

    A2 = 1/2 udot'M udot + 1/2 udot'C u - 1/2 u'K u - phi'B u - 1/2 phi'P phi
         - f'u

over the constrained dof basis, with K collecting the prestressed-elastic
volume term, the geopotential Hessian term, and the slipping-interface
surface term.  The stationarity system is M uddot + C udot + K u + B'phi = -f
with B u + P phi = 0.

Two independent evaluation routes exist throughout: matrix contraction and
direct pointwise quadrature (action_value), plus a separate hydrostatic
assembly path.  The perturbation potential lives on all nodes including any
vacuum padding; its outer-hull values are eliminated (zero there), which
truncates the decay condition at the mesh hull.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.linalg

from .elastica import build_prestressed, fluid_lambda, fluid_xi
from .mesh import DofMap, cell_quadrature, face_quadrature, locate_in_cell, \
    shape_values, shape_gradients, GAUSS_HEX
from .kinematics import DET_FLOOR

__all__ = [
    "SystemMatrices",
    "FieldTables",
    "field_tables",
    "assemble",
    "action_value",
    "frechet_fd_check",
    "expansion_check",
    "eigenmodes",
    "evolve",
    "hydrostatic_assemble",
    "interface_residuals",
    "boundary_phi1",
    "static_phi1",
]

FOUR_PI = 4.0 * np.pi


def _cross_matrix(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def _pointwise_tensors(model, mat, x, nu_hint=None):
    """Lambda and Xi stacks (Q, 3,3,3,3) for one material at points x."""
    x = np.atleast_2d(x)
    Q = len(x)
    lam = np.empty((Q, 3, 3, 3, 3))
    xi = np.empty((Q, 3, 3, 3, 3))
    if mat.kind == "fluid":
        kappa = mat.kappa_field(x)
        p0 = mat.p0_field(x)
        for q in range(Q):
            lam[q] = fluid_lambda(kappa[q], p0[q]).c
            xi[q] = fluid_xi(kappa[q], p0[q]).c
    elif mat.kind == "solid":
        T0 = mat.T0_field(x)
        for q in range(Q):
            built = build_prestressed(mat.gamma, T0[q], model.params)
            lam[q] = built["Lambda"].c
            xi[q] = built["Xi"].c
    else:
        raise ValueError(f"region {mat.name!r} has no constitutive tensors")
    return lam, xi


@dataclass
class FieldTables:
    """Per-quadrature-point field data, shared by every assembly route."""

    mesh: object
    model: object
    mat_cells: np.ndarray          # material cell ids, fixed order
    conn: np.ndarray               # (Mc, 8) node ids
    gconn: np.ndarray              # (Mc, 8) geometric ids
    x: np.ndarray                  # (Mc, Q, 3)
    w: np.ndarray                  # (Mc, Q)
    dNdx: np.ndarray               # (Mc, Q, 8, 3)
    N: np.ndarray                  # (Q, 8) shared reference shapes
    rho: np.ndarray                # (Mc, Q)
    Lam: np.ndarray                # (Mc, Q, 3,3,3,3)
    Xi: np.ndarray
    T0: np.ndarray                 # (Mc, Q, 3, 3)
    geo_grad: np.ndarray | None
    geo_hess: np.ndarray | None
    phi0_value: np.ndarray | None
    phi0_grad: np.ndarray | None   # over ALL cells, see all_* arrays
    force_value: np.ndarray | None
    force_grad: np.ndarray | None
    all_cells: np.ndarray = None   # every cell (material + vacuum)
    all_gconn: np.ndarray = None
    all_w: np.ndarray = None
    all_dNdx: np.ndarray = None
    all_x: np.ndarray = None
    all_phi0_grad: np.ndarray = None
    faces: list = dataclass_field(default_factory=list)
    hull_p: float | None = None    # uniform live pressure holding the hull


def field_tables(model, mesh):
    """Evaluate all model fields at the quadrature points once."""
    model.check_against(mesh)
    mat_cells = mesh.material_cells()
    Mc = len(mat_cells)
    Q = len(GAUSS_HEX)
    N = shape_values(GAUSS_HEX)

    conn = mesh.cells[mat_cells]
    gconn = mesh.geom_id[conn]
    x = np.empty((Mc, Q, 3))
    w = np.empty((Mc, Q))
    dNdx = np.empty((Mc, Q, 8, 3))
    rho = np.empty((Mc, Q))
    Lam = np.empty((Mc, Q, 3, 3, 3, 3))
    Xi = np.empty((Mc, Q, 3, 3, 3, 3))
    T0 = np.empty((Mc, Q, 3, 3))
    for n, c in enumerate(mat_cells):
        qd = cell_quadrature(mesh, c)
        x[n], w[n], dNdx[n] = qd["x"], qd["w"], qd["dNdx"]
        mat = model.material(mesh.cell_region[c])
        rho[n] = mat.rho0_field(x[n])
        Lam[n], Xi[n] = _pointwise_tensors(model, mat, x[n])
        T0[n] = mat.T0_field(x[n])

    flat = x.reshape(-1, 3)

    def sample(fn, shape_tail):
        if fn is None:
            return None
        vals = np.asarray(fn(flat), dtype=float)
        return vals.reshape((Mc, Q) + shape_tail)

    tables = FieldTables(
        mesh=mesh, model=model, mat_cells=mat_cells, conn=conn, gconn=gconn,
        x=x, w=w, dNdx=dNdx, N=N, rho=rho, Lam=Lam, Xi=Xi, T0=T0,
        geo_grad=sample(model.geo_grad, (3,)),
        geo_hess=sample(model.geo_hess, (3, 3)),
        phi0_value=sample(model.phi0_value, ()),
        phi0_grad=sample(model.phi0_grad, (3,)),
        force_value=sample(model.force_value, ()),
        force_grad=sample(model.force_grad, (3,)),
    )

    all_cells = np.arange(len(mesh.cells))
    Ma = len(all_cells)
    tables.all_cells = all_cells
    tables.all_gconn = mesh.geom_id[mesh.cells]
    tables.all_x = np.empty((Ma, Q, 3))
    tables.all_w = np.empty((Ma, Q))
    tables.all_dNdx = np.empty((Ma, Q, 8, 3))
    for c in all_cells:
        qd = cell_quadrature(mesh, c)
        tables.all_x[c], tables.all_w[c] = qd["x"], qd["w"]
        tables.all_dNdx[c] = qd["dNdx"]
    if model.phi0_grad is not None:
        tables.all_phi0_grad = np.asarray(
            model.phi0_grad(tables.all_x.reshape(-1, 3))).reshape(Ma, Q, 3)

    hull_vals = []
    for f in mesh.faces:
        if f.tag not in ("FS", "FAULT"):
            continue
        q = face_quadrature(mesh, f, n=2)
        mat_m = model.material(f.region_minus)
        p_minus = mat_m.face_pressure(q["x"], q["nu"])
        if f.cell_plus >= 0:
            mat_p = model.material(f.region_plus)
            p_plus = mat_p.face_pressure(q["x"], q["nu"])
            scale = max(1.0, float(np.max(np.abs(p_minus))),
                        float(np.max(np.abs(p_plus))))
            if np.max(np.abs(p_plus - p_minus)) > 1e-8 * scale:
                raise ValueError(
                    "equilibrium pressure is discontinuous across a slipping face")
            q["p0"] = 0.5 * (p_plus + p_minus)
            q["face"] = f
            tables.faces.append(q)
        else:
            # a hull face with equilibrium pressure behind it is held by an
            # external live pressure; its potential enters as a volume form,
            # not a face term (see the hull_p branch of the assembly kernels)
            hull_vals.append(p_minus)
    if hull_vals:
        p_body = -np.einsum("cqkk->cq", tables.T0) / 3.0
        lo = min(float(np.min(p_body)), min(float(np.min(v)) for v in hull_vals))
        hi = max(float(np.max(p_body)), max(float(np.max(v)) for v in hull_vals))
        if hi - lo > 1e-10 * max(1.0, abs(hi)):
            raise ValueError(
                "a pressure-loaded hull needs a uniform equilibrium pressure")
        tables.hull_p = 0.5 * (lo + hi)
    return tables


def _elastic_blocks(t, sl):
    """Per-cell 24x24 matrices for a contiguous cell slice (thread kernel)."""
    w, N = t.w[sl], t.N
    out = {}
    out["K"] = np.einsum("cq,cqipkl,cqap,cqbl->caibk", w, t.Lam[sl],
                         t.dNdx[sl], t.dNdx[sl], optimize=True)
    if t.hull_p is not None:
        # live hull pressure: + p ((div u)^2 - grad u : grad u') in the
        # quadratic form, the divergence-theorem image of the swept volume
        wp = w * t.hull_p
        out["K"] += np.einsum("cq,cqai,cqbj->caibj", wp, t.dNdx[sl],
                              t.dNdx[sl], optimize=True)
        out["K"] -= np.einsum("cq,cqaj,cqbi->caibj", wp, t.dNdx[sl],
                              t.dNdx[sl], optimize=True)
    out["Mass"] = np.einsum("cq,qa,qb->cab", w * t.rho[sl], N, N)
    if t.geo_hess is not None:
        out["K"] += np.einsum("cq,qa,qb,cqij->caibj", w * t.rho[sl], N, N,
                              t.geo_hess[sl], optimize=True)
    out["B"] = np.einsum("cq,qa,cqbi->cbai", w * t.rho[sl], N, t.dNdx[sl],
                         optimize=True)
    if t.force_grad is not None:
        out["f"] = np.einsum("cq,qa,cqi->cai", w * t.rho[sl], N, t.force_grad[sl])
    return out


def _chunk_slices(n, nthreads):
    if not nthreads or nthreads <= 1 or n == 0:
        return [slice(0, n)]
    size = -(-n // nthreads)
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def assemble(model, mesh, dofmap=None, nthreads=None, tables=None):
    """Build the reduced system matrices for a model on a mesh."""
    if tables is None:
        tables = field_tables(model, mesh)
    if dofmap is None:
        dofmap = DofMap(mesh)
    N3 = 3 * mesh.n_nodes
    ng = mesh.n_geom

    slices = _chunk_slices(len(tables.mat_cells), nthreads)
    if len(slices) > 1:
        with ThreadPoolExecutor(max_workers=len(slices)) as pool:
            parts = list(pool.map(lambda sl: _elastic_blocks(tables, sl), slices))
    else:
        parts = [_elastic_blocks(tables, sl) for sl in slices]

    M_full = np.zeros((N3, N3))
    C_full = np.zeros((N3, N3))
    K_full = np.zeros((N3, N3))
    f_full = np.zeros(N3)
    B_geo = np.zeros((ng, N3))
    S_omega = _cross_matrix(model.Omega)
    eye3 = np.eye(3)

    for part, sl in zip(parts, slices):
        for local, n in enumerate(range(sl.start, sl.stop)):
            idx = (3 * tables.conn[n][:, None] + np.arange(3)).ravel()
            K_full[np.ix_(idx, idx)] += part["K"][local].reshape(24, 24)
            mass = part["Mass"][local]
            M_full[np.ix_(idx, idx)] += np.kron(mass, eye3)
            if np.any(model.Omega):
                C_full[np.ix_(idx, idx)] += np.kron(2.0 * mass, S_omega)
            B_geo[np.ix_(tables.gconn[n], idx)] += part["B"][local].reshape(8, 24)
            if "f" in part:
                f_full[idx] += part["f"][local].ravel()

    P_geo = np.zeros((ng, ng))
    P_loc = np.einsum("cq,cqai,cqbi->cab", tables.all_w / (FOUR_PI * model.G),
                      tables.all_dNdx, tables.all_dNdx, optimize=True)
    for c in tables.all_cells:
        P_geo[np.ix_(tables.all_gconn[c], tables.all_gconn[c])] += P_loc[c]

    K_surf_full = np.zeros((N3, N3))
    for q in tables.faces:
        f = q["face"]
        wp = q["w"] * q["p0"]
        t1 = np.einsum("q,qa,qb,qij->aibj", wp, q["N"], q["N"], q["W"])
        t2 = np.einsum("q,qj,qa,qbi->aibj", wp, q["nu"], q["N"], q["gradN"])
        S_loc = (t1 + t2 + t2.transpose(2, 3, 0, 1)).reshape(12, 12)
        for nodes, sign in ((f.plus_nodes, 1.0), (f.minus_nodes, -1.0)):
            idx = (3 * nodes[:, None] + np.arange(3)).ravel()
            K_surf_full[np.ix_(idx, idx)] += sign * S_loc
    K_full += K_surf_full

    Z = dofmap.Z
    sel = dofmap.phi_nodes
    return SystemMatrices(
        M=Z.T @ M_full @ Z,
        C=Z.T @ C_full @ Z,
        K=Z.T @ K_full @ Z,
        B=B_geo[sel] @ Z,
        P=P_geo[np.ix_(sel, sel)],
        f=Z.T @ f_full,
        K_surface=Z.T @ K_surf_full @ Z,
        dofmap=dofmap,
        B_geo=B_geo,
        P_geo=P_geo,
    )


@dataclass
class SystemMatrices:
    """Reduced matrices of the discrete second-order action (immutable)."""

    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    B: np.ndarray
    P: np.ndarray
    f: np.ndarray
    K_surface: np.ndarray
    dofmap: DofMap
    B_geo: np.ndarray
    P_geo: np.ndarray

    def effective_stiffness(self):
        """K with the potential block eliminated: K - B' P^{ -1} B."""
        if self.P.size == 0:
            return self.K.copy()
        return self.K - self.B.T @ np.linalg.solve(self.P, self.B)

    def quadratic_action(self, q_u, q_phi, qdot_u):
        """A2 evaluated through the matrices."""
        a = 0.5 * qdot_u @ self.M @ qdot_u + 0.5 * qdot_u @ self.C @ q_u
        a -= 0.5 * q_u @ self.K @ q_u + q_u @ self.f
        if self.P.size:
            a -= q_phi @ self.B @ q_u + 0.5 * q_phi @ self.P @ q_phi
        return float(a)

    def gradient(self, q_u, q_phi, qdot_u):
        """Partial derivatives of A2 in (u, phi): the weak residual vector."""
        g_u = 0.5 * self.C.T @ qdot_u - self.K @ q_u - self.f
        if self.P.size:
            g_u -= self.B.T @ q_phi
            g_phi = -self.B @ q_u - self.P @ q_phi
        else:
            g_phi = np.zeros(0)
        return np.concatenate([g_u, g_phi])


def _centrifugal_psi(Omega, x):
    Om2 = np.dot(Omega, Omega)
    proj = x @ Omega
    return -0.5 * (Om2 * np.einsum("ni,ni->n", x, x) - proj ** 2)


def action_value(y, ydot, model, mesh, tables=None):
    """Order-by-order action values by direct pointwise quadrature.

    y = (u_nodal (N, 3), phi per geometric node); ydot likewise (the potential
    rate never enters).  Returns {"A0", "A1", "A2"}; the A2 route is
    independent of the assembled matrices.
    """
    if tables is None:
        tables = field_tables(model, mesh)
    u, phi = y
    u = np.asarray(u, dtype=float).reshape(mesh.n_nodes, 3)
    phi = np.asarray(phi, dtype=float).reshape(mesh.n_geom)
    udot = np.asarray(ydot[0], dtype=float).reshape(mesh.n_nodes, 3)

    t = tables
    u_c = u[t.conn]          # (Mc, 8, 3)
    ud_c = udot[t.conn]
    phi_c = phi[t.gconn]     # (Mc, 8)

    # pointwise fields on material cells
    u_q = np.einsum("qa,cai->cqi", t.N, u_c)
    ud_q = np.einsum("qa,cai->cqi", t.N, ud_c)
    gu_q = np.einsum("cai,cqaj->cqij", u_c, t.dNdx)
    phi_q = np.einsum("qa,ca->cq", t.N, phi_c)
    gphi_q = np.einsum("ca,cqai->cqi", phi_c, t.dNdx)

    Omega = model.Omega
    A0 = A1 = A2 = 0.0

    # zeroth order: -rho (Phi0 + Psi) - (grad Phi0)^2 / 8 pi G
    if t.phi0_value is not None:
        A0 -= np.einsum("cq,cq,cq->", t.w, t.rho, t.phi0_value)
    if np.any(Omega):
        psi = _centrifugal_psi(Omega, t.x.reshape(-1, 3)).reshape(t.w.shape)
        A0 -= np.einsum("cq,cq,cq->", t.w, t.rho, psi)
    if t.all_phi0_grad is not None:
        A0 -= np.einsum("cq,cqi,cqi->", t.all_w, t.all_phi0_grad,
                        t.all_phi0_grad) / (2.0 * FOUR_PI * model.G)

    # first order
    if np.any(Omega):
        omega_x = np.cross(Omega, t.x)
        A1 += np.einsum("cq,cq->", t.w, t.rho * np.einsum("cqi,cqi->cq", ud_q, omega_x))
    A1 -= np.einsum("cq,cqij,cqij->", t.w, t.T0, gu_q)
    if t.geo_grad is not None:
        A1 -= np.einsum("cq,cq->", t.w,
                        t.rho * np.einsum("cqi,cqi->cq", u_q, t.geo_grad))
    A1 -= np.einsum("cq,cq,cq->", t.w, t.rho, phi_q)
    if t.force_value is not None:
        A1 -= np.einsum("cq,cq,cq->", t.w, t.rho, t.force_value)
    if t.all_phi0_grad is not None:
        phi_all = phi[t.all_gconn]
        gphi_all = np.einsum("ca,cqai->cqi", phi_all, t.all_dNdx)
        A1 -= np.einsum("cq,cqi,cqi->", t.all_w, t.all_phi0_grad,
                        gphi_all) / (FOUR_PI * model.G)

    # second order, volume
    A2 += 0.5 * np.einsum("cq,cq->", t.w,
                          t.rho * np.einsum("cqi,cqi->cq", ud_q, ud_q))
    if np.any(Omega):
        omega_u = np.cross(Omega, u_q)
        A2 += np.einsum("cq,cq->", t.w,
                        t.rho * np.einsum("cqi,cqi->cq", ud_q, omega_u))
    A2 -= 0.5 * np.einsum("cq,cqij,cqijkl,cqkl->", t.w, gu_q, t.Lam, gu_q,
                          optimize=True)
    if t.geo_hess is not None:
        A2 -= 0.5 * np.einsum("cq,cq->", t.w, t.rho * np.einsum(
            "cqi,cqij,cqj->cq", u_q, t.geo_hess, u_q))
    A2 -= np.einsum("cq,cq->", t.w,
                    t.rho * np.einsum("cqi,cqi->cq", u_q, gphi_q))
    if t.force_grad is not None:
        A2 -= np.einsum("cq,cq->", t.w,
                        t.rho * np.einsum("cqi,cqi->cq", u_q, t.force_grad))
    phi_all = phi[t.all_gconn]
    gphi_all = np.einsum("ca,cqai->cqi", phi_all, t.all_dNdx)
    A2 -= np.einsum("cq,cqi,cqi->", t.all_w, gphi_all, gphi_all) / (
        2.0 * FOUR_PI * model.G)
    if t.hull_p is not None:
        div_sq = np.einsum("cqii->cq", gu_q) ** 2
        cross = np.einsum("cqij,cqji->cq", gu_q, gu_q)
        A2 -= 0.5 * t.hull_p * np.einsum("cq,cq->", t.w, div_sq - cross)

    # second order, slipping surfaces: -p0 [nu.gradS(u).u + u.W.u/2]
    for q in t.faces:
        f = q["face"]
        for nodes, sign in ((f.plus_nodes, 1.0), (f.minus_nodes, -1.0)):
            uc = u[nodes]
            u_s = np.einsum("qa,ai->qi", q["N"], uc)
            gSu = np.einsum("ai,qaj->qij", uc, q["gradN"])
            term = np.einsum("qi,qij,qj->q", q["nu"], gSu, u_s)
            term += 0.5 * np.einsum("qi,qij,qj->q", u_s, q["W"], u_s)
            A2 -= sign * float(np.dot(q["w"] * q["p0"], term))

    return {"A0": float(A0), "A1": float(A1), "A2": float(A2)}


def frechet_fd_check(model, mesh, y0, h=1e-4, dofmap=None, ydot=None):
    """Max relative error between the assembled gradient of A2 and central FD.

    y0 = (q_u, q_phi) in reduced coordinates.  The finite differences probe
    the direct-quadrature action in every dof direction.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("step must lie in [1e-7, 1e-3]")
    if dofmap is None:
        dofmap = DofMap(mesh)
    tables = field_tables(model, mesh)
    system = assemble(model, mesh, dofmap=dofmap, tables=tables)
    q_u = np.asarray(y0[0], dtype=float)
    q_phi = np.asarray(y0[1], dtype=float)
    qdot = np.zeros_like(q_u) if ydot is None else np.asarray(ydot, dtype=float)

    grad = system.gradient(q_u, q_phi, qdot)

    def act(qu, qp):
        y = (dofmap.expand_u(qu), dofmap.expand_phi(qp))
        yd = (dofmap.expand_u(qdot), np.zeros(mesh.n_geom))
        return action_value(y, yd, model, mesh, tables=tables)["A2"]

    n_u, n_phi = len(q_u), len(q_phi)
    fd = np.empty(n_u + n_phi)
    for j in range(n_u):
        e = np.zeros(n_u)
        e[j] = h
        fd[j] = (act(q_u + e, q_phi) - act(q_u - e, q_phi)) / (2 * h)
    for j in range(n_phi):
        e = np.zeros(n_phi)
        e[j] = h
        fd[n_u + j] = (act(q_u, q_phi + e) - act(q_u, q_phi - e)) / (2 * h)

    scale = max(float(np.max(np.abs(fd))), 1e-30)
    return float(np.max(np.abs(grad - fd)) / scale)


def expansion_check(model, mesh, u_dir, phi1_dir, eps_list):
    """Order of the Taylor remainder of the quadratic action model.

    Evaluates the nonlinear volume action along phi = Id + eps*u with internal
    energy rho0 U = T0:e + e:Xi:e/2 in the full strain e, the centrifugal
    term exact, the self-gravitation potential composed to second order, and
    the field energy expanded exactly; fits |A_nl - (A0 + eps A1 + eps^2 A2)|
    against eps and returns the log-log slope.
    """
    for f in mesh.faces:
        if f.tag in ("FS", "FAULT"):
            raise ValueError("expansion check needs a welded (slip-free) mesh")
    tables = field_tables(model, mesh)
    u_dir = np.asarray(u_dir, dtype=float).reshape(mesh.n_nodes, 3)
    phi_dir = np.asarray(phi1_dir, dtype=float).reshape(mesh.n_geom)
    zero = (np.zeros_like(u_dir), np.zeros_like(phi_dir))
    orders = action_value((u_dir, phi_dir), zero, model, mesh, tables=tables)
    A0, A1, A2 = orders["A0"], orders["A1"], orders["A2"]

    t = tables
    u_c = u_dir[t.conn]
    u_q = np.einsum("qa,cai->cqi", t.N, u_c)
    gu_q = np.einsum("cai,cqaj->cqij", u_c, t.dNdx)
    phi_q = np.einsum("qa,ca->cq", t.N, phi_dir[t.gconn])
    gphi_q = np.einsum("ca,cqai->cqi", phi_dir[t.gconn], t.dNdx)
    phi_all = phi_dir[t.all_gconn]
    gphi_all = np.einsum("ca,cqai->cqi", phi_all, t.all_dNdx)
    Omega = model.Omega
    Om_mat = np.outer(Omega, Omega) - np.dot(Omega, Omega) * np.eye(3)

    sym = 0.5 * (gu_q + gu_q.transpose(0, 1, 3, 2))
    quad = 0.5 * np.einsum("cqki,cqkj->cqij", gu_q, gu_q)

    residuals = []
    eps_arr = np.asarray(list(eps_list), dtype=float)
    for eps in eps_arr:
        det = np.linalg.det(np.eye(3) + eps * gu_q)
        if np.any(det <= DET_FLOOR):
            raise ValueError(f"deformation at eps={eps} is not orientation-preserving")
        e_full = eps * sym + eps ** 2 * quad
        U = np.einsum("cqij,cqij->cq", t.T0, e_full)
        U += 0.5 * np.einsum("cqij,cqijkl,cqkl->cq", e_full, t.Xi, e_full,
                             optimize=True)
        a_nl = -np.einsum("cq,cq->", t.w, U)
        if np.any(Omega):
            spun = np.cross(Omega, t.x + eps * u_q)
            a_nl += 0.5 * np.einsum("cq,cq->", t.w,
                                    t.rho * np.einsum("cqi,cqi->cq", spun, spun))
        coupling = np.zeros_like(t.w)
        if t.phi0_value is not None:
            hess0 = t.geo_hess - Om_mat if t.geo_hess is not None else None
            coupling += t.phi0_value
            coupling += eps * np.einsum("cqi,cqi->cq", t.phi0_grad, u_q)
            if hess0 is not None:
                coupling += 0.5 * eps ** 2 * np.einsum(
                    "cqi,cqij,cqj->cq", u_q, hess0, u_q)
        coupling += eps * phi_q + eps ** 2 * np.einsum("cqi,cqi->cq", gphi_q, u_q)
        if t.force_value is not None:
            coupling += eps * t.force_value + eps ** 2 * np.einsum(
                "cqi,cqi->cq", t.force_grad, u_q)
        a_nl -= np.einsum("cq,cq,cq->", t.w, t.rho, coupling)
        if t.all_phi0_grad is not None:
            g_total = t.all_phi0_grad + eps * gphi_all
            a_nl -= np.einsum("cq,cqi,cqi->", t.all_w, g_total, g_total) / (
                2.0 * FOUR_PI * model.G)
        else:
            a_nl -= eps ** 2 * np.einsum("cq,cqi,cqi->", t.all_w, gphi_all,
                                         gphi_all) / (2.0 * FOUR_PI * model.G)
        residuals.append(abs(a_nl - (A0 + eps * A1 + eps ** 2 * A2)))

    residuals = np.asarray(residuals)
    if np.max(residuals) < 1e-300:
        return np.inf
    slope, _ = np.polyfit(np.log(eps_arr), np.log(residuals), 1)
    return float(slope)


def eigenmodes(M, C, K, count):
    """Lowest oscillation frequencies and M-normalized vectors.

    Without rotation the symmetric pencil K x = omega^2 M x is solved; with a
    Coriolis matrix the first-order linearization (quadratic pencil) is used
    and the positive-frequency branch returned.
    """
    n = M.shape[0]
    count = min(count, n)
    if C is None or not np.any(C):
        w2, vecs = scipy.linalg.eigh(K, M)
        order = np.argsort(w2)[:count]
        w2 = w2[order]
        vecs = vecs[:, order]
        omega = np.sqrt(np.clip(w2, 0.0, None))
        return {"omega2": w2, "omega": omega, "vectors": vecs}
    A = np.block([[np.zeros((n, n)), np.eye(n)], [-K, -C]])
    Bm = np.block([[np.eye(n), np.zeros((n, n))], [np.zeros((n, n)), M]])
    vals, vecs = scipy.linalg.eig(A, Bm)
    freq = vals.imag
    keep = np.argsort(np.abs(freq))
    ordered = [k for k in keep if freq[k] >= -1e-12]
    sel = []
    for k in ordered:
        if len(sel) == count:
            break
        sel.append(k)
    omega = np.abs(freq[sel])
    out_vecs = vecs[:n, sel]
    for j in range(out_vecs.shape[1]):
        nrm = np.sqrt(abs(np.conj(out_vecs[:, j]) @ M @ out_vecs[:, j]))
        if nrm > 0:
            out_vecs[:, j] /= nrm
    return {"omega2": omega ** 2, "omega": omega, "vectors": out_vecs}


def evolve(model, mesh, y_init, ydot_init, dt, steps, dofmap=None,
           system=None, record_every=1):
    """Newmark average-acceleration integration of the linear system.

    The perturbation potential is eliminated through the Poisson block, so
    each step advances M uddot + C udot + (K - B'P^{-1}B) u = -f.  Reports
    the discrete energy 1/2 udot'M udot + 1/2 u'K_eff u + f'u and its
    relative drift; the Coriolis term does no work.
    """
    if dofmap is None and system is None:
        dofmap = DofMap(mesh)
    if system is None:
        system = assemble(model, mesh, dofmap=dofmap)
    dofmap = system.dofmap

    def as_reduced(v):
        v = np.asarray(v, dtype=float)
        if v.shape == (dofmap.n_u,):
            return v.copy()
        return dofmap.reduce_u(v)

    u = as_reduced(y_init)
    v = as_reduced(ydot_init)
    M, C, f = system.M, system.C, system.f
    K = system.effective_stiffness()

    a = np.linalg.solve(M, -f - C @ v - K @ u)
    S = M + 0.5 * dt * C + 0.25 * dt ** 2 * K
    lu = scipy.linalg.lu_factor(S)

    def energy(u, v):
        return 0.5 * v @ M @ v + 0.5 * u @ K @ u + f @ u

    times = [0.0]
    traj_u = [u.copy()]
    traj_v = [v.copy()]
    energies = [energy(u, v)]
    for n in range(1, steps + 1):
        u_pred = u + dt * v + 0.25 * dt ** 2 * a
        v_pred = v + 0.5 * dt * a
        a = scipy.linalg.lu_solve(lu, -f - C @ v_pred - K @ u_pred)
        u = u_pred + 0.25 * dt ** 2 * a
        v = v_pred + 0.5 * dt * a
        if n % record_every == 0 or n == steps:
            times.append(n * dt)
            traj_u.append(u.copy())
            traj_v.append(v.copy())
            energies.append(energy(u, v))

    energies = np.asarray(energies)
    scale = max(abs(energies[0]), 1e-300)
    drift = float(np.max(np.abs(energies - energies[0])) / scale)
    phi = np.zeros(system.P.shape[0])
    if system.P.size:
        phi = np.linalg.solve(system.P, -system.B @ u)
    return {
        "t": np.asarray(times),
        "u": np.asarray(traj_u),
        "udot": np.asarray(traj_v),
        "energy": energies,
        "drift": drift,
        "phi_final": phi,
        "system": system,
    }


def hydrostatic_assemble(model, mesh, dofmap=None, tables=None):
    """Stiffness from the hydrostatic volume-only quadratic form.

    Requires a pure-pressure prestress; uses the balance field geo_grad in
    place of -grad p0 / rho0.  Returns K_hyd together with the general
    assembly and the equivalence report.
    """
    if tables is None:
        tables = field_tables(model, mesh)
    if dofmap is None:
        dofmap = DofMap(mesh)
    t = tables
    for n, c in enumerate(t.mat_cells):
        T0 = t.T0[n]
        dev = T0 - np.einsum("qkk->q", T0)[:, None, None] / 3.0 * np.eye(3)
        scale = max(1.0, float(np.max(np.abs(T0))))
        if np.max(np.abs(dev)) > 1e-10 * scale:
            mat = model.material(mesh.cell_region[c])
            raise ValueError(
                f"region {mat.name!r} carries deviatoric prestress; the "
                "hydrostatic form does not apply")
    if t.geo_grad is None:
        raise ValueError("hydrostatic assembly needs the geopotential gradient")

    N3 = 3 * mesh.n_nodes
    K_full = np.zeros((N3, N3))
    eye3 = np.eye(3)
    for n, c in enumerate(t.mat_cells):
        mat = model.material(mesh.cell_region[c])
        if mat.kind == "fluid":
            kappa = mat.kappa_field(t.x[n])
            gam = np.einsum("q,ij,kl->qijkl", kappa, eye3, eye3)
        else:
            gam = np.broadcast_to(mat.gamma.c, (len(t.w[n]),) + (3,) * 4)
        K_loc = np.einsum("q,qipkl,qap,qbl->aibk", t.w[n], gam,
                          t.dNdx[n], t.dNdx[n], optimize=True)
        c_half = 0.5 * t.w[n] * t.rho[n]
        g = t.geo_grad[n]
        t1 = np.einsum("q,qj,qa,qbi->aibj", c_half, g, t.N, t.dNdx[n])
        t3 = np.einsum("q,qi,qa,qbj->aibj", c_half, g, t.N, t.dNdx[n])
        K_loc += t1 + t1.transpose(2, 3, 0, 1) - t3 - t3.transpose(2, 3, 0, 1)
        if t.geo_hess is not None:
            K_loc += np.einsum("q,qa,qb,qij->aibj", t.w[n] * t.rho[n],
                               t.N, t.N, t.geo_hess[n])
        idx = (3 * t.conn[n][:, None] + np.arange(3)).ravel()
        K_full[np.ix_(idx, idx)] += K_loc.reshape(24, 24)

    K_hyd = dofmap.Z.T @ K_full @ dofmap.Z
    system = assemble(model, mesh, dofmap=dofmap, tables=tables)
    denom = max(np.linalg.norm(system.K), 1e-300)
    return {
        "K_hyd": K_hyd,
        "system": system,
        "rel_diff": float(np.linalg.norm(K_hyd - system.K) / denom),
        "surface_norm": float(np.linalg.norm(system.K_surface)),
    }


def _side_gradient(mesh, cell, nodal, x_pts):
    """Volume gradient of a nodal vector field from one side's cell."""
    xi = locate_in_cell(mesh, cell, x_pts)
    X = mesh.nodes[mesh.cells[cell]]
    vals = nodal[mesh.cells[cell]]
    out_grad = np.empty((len(x_pts), 3, 3))
    out_val = np.empty((len(x_pts), 3))
    for k in range(len(x_pts)):
        dN = shape_gradients(xi[k])
        J = X.T @ dN
        dNdx = dN @ np.linalg.inv(J)
        out_grad[k] = np.einsum("ai,aj->ij", vals, dNdx)
        out_val[k] = shape_values(xi[k]) @ vals
    return out_val, out_grad


def _scalar_side(mesh, cell, nodal_geom, x_pts):
    xi = locate_in_cell(mesh, cell, x_pts)
    X = mesh.nodes[mesh.cells[cell]]
    vals = nodal_geom[mesh.geom_id[mesh.cells[cell]]]
    out_val = np.empty(len(x_pts))
    out_grad = np.empty((len(x_pts), 3))
    for k in range(len(x_pts)):
        dN = shape_gradients(xi[k])
        dNdx = dN @ np.linalg.inv(X.T @ dN)
        out_val[k] = shape_values(xi[k]) @ vals
        out_grad[k] = vals @ dNdx
    return out_val, out_grad


def interface_residuals(model, mesh, y, tables=None):
    """Sup-norm diagnostics of the interface and boundary conditions.

    Essential conditions ([u].nu on slipping faces, [u] on welded faces) hold
    by construction; traction and potential-flux conditions are natural and
    converge only with resolution.
    """
    if tables is None:
        tables = field_tables(model, mesh)
    u, phi = y
    u = np.asarray(u, dtype=float).reshape(mesh.n_nodes, 3)
    phi = np.asarray(phi, dtype=float).reshape(mesh.n_geom)

    out = {"fs_normal_jump": 0.0, "ss_jump": 0.0, "fs_traction_jump": 0.0,
           "ext_traction": 0.0, "phi_jump": 0.0, "phi_flux_jump": 0.0}

    for f in mesh.faces:
        q = face_quadrature(mesh, f, n=2)
        nu = q["nu"]
        if f.tag in ("FS", "FAULT"):
            du = np.einsum("qa,ai->qi", q["N"], u[f.plus_nodes] - u[f.minus_nodes])
            out["fs_normal_jump"] = max(out["fs_normal_jump"],
                                        float(np.max(np.abs(np.einsum("qi,qi->q", du, nu)))))
        if f.tag == "SS":
            du = u[f.plus_nodes] - u[f.minus_nodes]
            out["ss_jump"] = max(out["ss_jump"], float(np.max(np.abs(du))))

        def side_traction(cell, region, nodes):
            mat = model.material(region)
            _, gu = _side_gradient(mesh, cell, u, q["x"])
            lam, _ = _pointwise_tensors(model, mat, q["x"])
            tpk1 = np.einsum("qijkl,qkl->qij", lam, gu)
            trac = np.einsum("qij,qj->qi", tpk1, nu)
            p0 = mat.face_pressure(q["x"], nu)
            uc = u[nodes]
            # the product p0 u is differentiated along the face through its
            # corner samples, matching the bilinear trace space
            p0_c = mat.face_pressure(mesh.nodes[nodes],
                                     np.broadcast_to(nu[0], (4, 3)))
            prod_c = p0_c[:, None] * uc
            gS_p0u = np.einsum("ai,qaj->qij", prod_c, q["gradN"])
            div_p0u = np.trace(gS_p0u, axis1=1, axis2=2)
            gSu = np.einsum("ai,qaj->qij", uc, q["gradN"])
            nu_gSu = np.einsum("qi,qij->qj", nu, gSu)
            return trac + div_p0u[:, None] * nu - p0[:, None] * nu_gSu

        if f.tag == "FS" and f.cell_plus >= 0:
            tau_m = side_traction(f.cell_minus, f.region_minus, f.minus_nodes)
            tau_p = side_traction(f.cell_plus, f.region_plus, f.plus_nodes)
            out["fs_traction_jump"] = max(out["fs_traction_jump"],
                                          float(np.max(np.linalg.norm(tau_p - tau_m, axis=1))))
        if f.tag == "EXT":
            mat = model.material(f.region_minus)
            _, gu = _side_gradient(mesh, f.cell_minus, u, q["x"])
            lam, _ = _pointwise_tensors(model, mat, q["x"])
            tpk1 = np.einsum("qijkl,qkl->qij", lam, gu)
            trac = np.einsum("qij,qj->qi", tpk1, nu)
            out["ext_traction"] = max(out["ext_traction"],
                                      float(np.max(np.linalg.norm(trac, axis=1))))
        if f.cell_plus >= 0:
            val_m, gphi_m = _scalar_side(mesh, f.cell_minus, phi, q["x"])
            val_p, gphi_p = _scalar_side(mesh, f.cell_plus, phi, q["x"])
            out["phi_jump"] = max(out["phi_jump"], float(np.max(np.abs(val_p - val_m))))
            rho_m = model.material(f.region_minus).rho0_field(q["x"])
            rho_p = model.material(f.region_plus).rho0_field(q["x"])
            u_m = np.einsum("qa,ai->qi", q["N"], u[f.minus_nodes])
            u_p = np.einsum("qa,ai->qi", q["N"], u[f.plus_nodes])
            flux_m = gphi_m + FOUR_PI * model.G * rho_m[:, None] * u_m
            flux_p = gphi_p + FOUR_PI * model.G * rho_p[:, None] * u_p
            jump = np.einsum("qi,qi->q", flux_p - flux_m, nu)
            out["phi_flux_jump"] = max(out["phi_flux_jump"], float(np.max(np.abs(jump))))
    return out


def boundary_phi1(model, mesh, u_nodal, targets, tables=None):
    """Newtonian evaluation of the perturbation potential outside the body.

    Uses the dipole form G int rho0 u . (x' - x)/|x' - x|^3 dV', valid for
    points off the material support; density jumps need no special handling.
    """
    if tables is None:
        tables = field_tables(model, mesh)
    t = tables
    u = np.asarray(u_nodal, dtype=float).reshape(mesh.n_nodes, 3)
    u_q = np.einsum("qa,cai->cqi", t.N, u[t.conn]).reshape(-1, 3)
    src = (t.w * t.rho).reshape(-1)
    pts = t.x.reshape(-1, 3)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    out = np.empty(len(targets))
    for k, xt in enumerate(targets):
        d = xt - pts
        r3 = np.linalg.norm(d, axis=1) ** 3
        out[k] = -model.G * np.sum(src * np.einsum("ni,ni->n", u_q, d) / r3)
    return out


def static_phi1(model, mesh, u_nodal, system=None, boundary="zero"):
    """Solve the discrete Poisson block for the perturbation potential.

    boundary = "zero" eliminates the hull values; "monopole" sets them from
    the Newtonian evaluation of the displaced-mass source, the controlled
    surrogate for the decay condition on a truncated domain.
    """
    if system is None:
        system = assemble(model, mesh)
    dofmap = system.dofmap
    u_flat = np.asarray(u_nodal, dtype=float).reshape(-1)
    rhs = -(system.B_geo @ u_flat)
    sel = dofmap.phi_nodes
    phi = np.zeros(mesh.n_geom)
    if boundary == "monopole":
        hull = np.array(sorted(set(range(mesh.n_geom)) - set(sel.tolist())), dtype=int)
        geom_pos = np.zeros((mesh.n_geom, 3))
        geom_pos[mesh.geom_id] = mesh.nodes
        phi[hull] = boundary_phi1(model, mesh, u_nodal, geom_pos[hull])
        rhs = rhs - system.P_geo @ phi
    elif boundary != "zero":
        raise ValueError("boundary must be 'zero' or 'monopole'")
    phi[sel] = np.linalg.solve(system.P_geo[np.ix_(sel, sel)], rhs[sel])
    return phi
