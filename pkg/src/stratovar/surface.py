"""Surface calculus on parametrized patches.

Tangential projection, surface gradient and divergence through the parametric
chain rule, the Weingarten map, two-sided jump algebra, and the interface
formulas (normality, modified traction).  Interface geometry always carries
analytic normal and Weingarten fields; curvature is never estimated from a
faceted mesh.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "SurfacePatch",
    "TwoSidedField",
    "plane_patch",
    "sphere_patch",
    "cylinder_patch",
    "project_tangential",
    "surface_gradient",
    "surface_divergence",
    "jump_algebra",
    "wswap_check",
    "surface_divergence_theorem_check",
    "normality_check",
    "modified_traction",
]


@dataclass
class SurfacePatch:
    """Parametrized surface piece with analytic normal and curvature.

    chart maps parameter arrays (s, t) to points (..., 3); normal_xyz and
    weingarten_xyz evaluate the unit normal and the Weingarten map W = grad_S nu
    at surface points.  W is symmetric with W . nu = 0.
    """

    name: str
    chart: Callable
    normal_xyz: Callable
    weingarten_xyz: Callable
    s_range: tuple
    t_range: tuple
    closed: bool = False
    chart_tangents: Callable | None = None  # analytic (x_s, x_t) if available

    def normal(self, s, t):
        return self.normal_xyz(self.chart(s, t))

    def tangents(self, s, t):
        """Parameter-direction tangent vectors, analytic or central-differenced."""
        if self.chart_tangents is not None:
            return self.chart_tangents(s, t)
        hs = 1e-6 * (self.s_range[1] - self.s_range[0])
        ht = 1e-6 * (self.t_range[1] - self.t_range[0])
        xs = (self.chart(s + hs, t) - self.chart(s - hs, t)) / (2 * hs)
        xt = (self.chart(s, t + ht) - self.chart(s, t - ht)) / (2 * ht)
        return xs, xt

    def quadrature(self, ns, nt):
        """Surface quadrature nodes and dS weights.

        Open patches use a tensor-product Gauss-Legendre rule on the parameter
        rectangle with the parametric area element.  Closed spheres override
        this with a latitude-longitude rule (Gauss-Legendre in cos(theta),
        uniform periodic in phi) whose weights are exact for the sphere.
        """
        gs, ws = np.polynomial.legendre.leggauss(ns)
        gt, wt = np.polynomial.legendre.leggauss(nt)
        s0, s1 = self.s_range
        t0, t1 = self.t_range
        S = 0.5 * (s1 - s0) * gs + 0.5 * (s1 + s0)
        T = 0.5 * (t1 - t0) * gt + 0.5 * (t1 + t0)
        SS, TT = np.meshgrid(S, T, indexing="ij")
        WW = 0.25 * (s1 - s0) * (t1 - t0) * np.outer(ws, wt)
        s_flat, t_flat = SS.ravel(), TT.ravel()
        xs, xt = self.tangents(s_flat, t_flat)
        area = np.linalg.norm(np.cross(xs, xt), axis=-1)
        return {
            "s": s_flat,
            "t": t_flat,
            "x": self.chart(s_flat, t_flat),
            "w": WW.ravel() * area,
        }


@dataclass
class TwoSidedField:
    """Traces of a field on the two sides of an interface (plus = + side)."""

    plus: object
    minus: object

    def jump(self):
        return _combine(self.plus, self.minus, lambda p, m: p - m)

    def mean(self):
        return _combine(self.plus, self.minus, lambda p, m: 0.5 * (p + m))


def _combine(p, m, op):
    if callable(p):
        return lambda *a, **k: op(np.asarray(p(*a, **k)), np.asarray(m(*a, **k)))
    return op(np.asarray(p, dtype=float), np.asarray(m, dtype=float))


def plane_patch(origin, e1, e2, s_range=(-1.0, 1.0), t_range=(-1.0, 1.0)):
    """Flat patch x = origin + s e1 + t e2 with constant normal and W = 0."""
    origin = np.asarray(origin, dtype=float)
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    nu = np.cross(e1, e2)
    nu = nu / np.linalg.norm(nu)

    def chart(s, t):
        s = np.asarray(s, dtype=float)[..., None]
        t = np.asarray(t, dtype=float)[..., None]
        return origin + s * e1 + t * e2

    def normal_xyz(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(nu, x.shape).copy()

    def weingarten_xyz(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (3, 3))

    def tangents(s, t):
        shape = np.broadcast(np.asarray(s), np.asarray(t)).shape
        return (np.broadcast_to(e1, shape + (3,)).copy(),
                np.broadcast_to(e2, shape + (3,)).copy())

    return SurfacePatch("plane", chart, normal_xyz, weingarten_xyz,
                        s_range, t_range, closed=False, chart_tangents=tangents)


def sphere_patch(radius, center=(0.0, 0.0, 0.0), closed=True,
                 s_range=(0.0, np.pi), t_range=(0.0, 2.0 * np.pi)):
    """Sphere of given radius, outward normal, W = (I - nu nu)/R.

    Chart is latitude-longitude: s = colatitude, t = longitude.
    """
    R = float(radius)
    center = np.asarray(center, dtype=float)

    def chart(s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        return center + R * np.stack([np.sin(s) * np.cos(t),
                                      np.sin(s) * np.sin(t),
                                      np.cos(s) * np.ones_like(t)], axis=-1)

    def normal_xyz(x):
        v = np.asarray(x, dtype=float) - center
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def weingarten_xyz(x):
        nu = normal_xyz(x)
        I = np.eye(3)
        return (I - nu[..., :, None] * nu[..., None, :]) / R

    def tangents(s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        xs = R * np.stack([np.cos(s) * np.cos(t),
                           np.cos(s) * np.sin(t),
                           -np.sin(s) * np.ones_like(t)], axis=-1)
        xt = R * np.stack([-np.sin(s) * np.sin(t),
                           np.sin(s) * np.cos(t),
                           np.zeros(np.broadcast(s, t).shape)], axis=-1)
        return xs, xt

    patch = SurfacePatch(f"sphere(R={R})", chart, normal_xyz, weingarten_xyz,
                         s_range, t_range, closed=closed, chart_tangents=tangents)
    if closed:
        def lat_long_quadrature(ns, nt):
            # Gauss-Legendre in mu = cos(colatitude) avoids the poles entirely
            mu, wmu = np.polynomial.legendre.leggauss(ns)
            phi = 2.0 * np.pi * np.arange(nt) / nt
            MU, PHI = np.meshgrid(mu, phi, indexing="ij")
            S = np.arccos(MU.ravel())
            T = PHI.ravel()
            W = (np.outer(wmu, np.full(nt, 2.0 * np.pi / nt)) * R ** 2).ravel()
            return {"s": S, "t": T, "x": chart(S, T), "w": W}
        patch.quadrature = lat_long_quadrature  # type: ignore[method-assign]
    return patch


def cylinder_patch(radius, axis=(0.0, 0.0, 1.0), center=(0.0, 0.0, 0.0),
                   s_range=(0.0, 2.0 * np.pi), t_range=(-1.0, 1.0)):
    """Cylinder wall of given radius about an axis; W = (I - aa - nu nu)/R."""
    R = float(radius)
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    center = np.asarray(center, dtype=float)
    # orthonormal frame transverse to the axis
    tmp = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(a, tmp)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)

    def chart(s, t):
        s = np.asarray(s, dtype=float)[..., None]
        t = np.asarray(t, dtype=float)[..., None]
        return center + R * (np.cos(s) * e1 + np.sin(s) * e2) + t * a

    def normal_xyz(x):
        v = np.asarray(x, dtype=float) - center
        v = v - (v @ a)[..., None] * a
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def weingarten_xyz(x):
        nu = normal_xyz(x)
        I = np.eye(3)
        return (I - np.outer(a, a) - nu[..., :, None] * nu[..., None, :]) / R

    return SurfacePatch(f"cylinder(R={R})", chart, normal_xyz, weingarten_xyz,
                        s_range, t_range, closed=False)


def project_tangential(f, nu):
    """Tangential part f - (f . nu) nu; for stacked input the last axis is projected."""
    f = np.asarray(f, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-10:
        raise ValueError("nu must be a unit vector")
    return f - (f @ nu)[..., None] * nu if f.ndim > 1 else f - np.dot(f, nu) * nu


def _frames(patch, s, t):
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = patch.chart(s, t)
    xs, xt = patch.tangents(s, t)
    nu = patch.normal_xyz(x)
    return x, xs, xt, nu


def _param_derivative(func, patch, s, t, h_scale=6e-6):
    """Central differences of func(chart(s, t)) in each parameter direction."""
    hs = h_scale * (patch.s_range[1] - patch.s_range[0])
    ht = h_scale * (patch.t_range[1] - patch.t_range[0])
    fsp = np.asarray(func(patch.chart(s + hs, t)), dtype=float)
    fsm = np.asarray(func(patch.chart(s - hs, t)), dtype=float)
    ftp = np.asarray(func(patch.chart(s, t + ht)), dtype=float)
    ftm = np.asarray(func(patch.chart(s, t - ht)), dtype=float)
    return (fsp - fsm) / (2 * hs), (ftp - ftm) / (2 * ht)


def surface_gradient(func, patch, s, t):
    """Surface gradient of a field along a patch via the parametric chain rule.

    func maps points (N, 3) to scalars (N,) or vectors (N, 3).  The gradient
    solves grad_S f . x_s = f_s, grad_S f . x_t = f_t, grad_S f . nu = 0 per
    point; for vector fields the result is (N, 3, 3) with
    (grad_S f)_{ij} = d^S_j f_i, and it annihilates nu from the right.
    """
    x, xs, xt, nu = _frames(patch, s, t)
    fs, ft = _param_derivative(func, patch, np.atleast_1d(s), np.atleast_1d(t))
    n = len(x)
    vector_valued = fs.ndim == 2
    out = np.empty((n, 3, 3)) if vector_valued else np.empty((n, 3))
    for k in range(n):
        A = np.column_stack([xs[k], xt[k], nu[k]])
        if abs(np.linalg.det(A)) < 1e-12:
            raise ValueError("degenerate parametrization: tangent rank < 2")
        Ainv = np.linalg.inv(A)
        if vector_valued:
            rhs = np.column_stack([fs[k], ft[k], np.zeros(3)])
            out[k] = rhs @ Ainv
        else:
            out[k] = np.array([fs[k], ft[k], 0.0]) @ Ainv
    return out


def surface_divergence(func, patch, s, t):
    """Trace of the surface gradient of a vector field."""
    g = surface_gradient(func, patch, s, t)
    if g.ndim != 3:
        raise ValueError("surface divergence needs a vector field")
    return np.trace(g, axis1=1, axis2=2)


def jump_algebra(F, G, product=None):
    """Residuals of the two Leibniz rules for products of two-sided fields.

    [fg] = f+ [g] + [f] g-  and  [fg] = {f}[g] + [f]{g}.  product defaults to
    elementwise multiplication; pass np.matmul for matrix-vector cases.
    """
    if product is None:
        product = np.multiply
    fp, fm = np.asarray(F.plus, dtype=float), np.asarray(F.minus, dtype=float)
    gp, gm = np.asarray(G.plus, dtype=float), np.asarray(G.minus, dtype=float)
    jump_fg = product(fp, gp) - product(fm, gm)
    one_sided = product(fp, gp - gm) + product(fp - fm, gm)
    mean_form = (product(0.5 * (fp + fm), gp - gm) + product(fp - fm, 0.5 * (gp + gm)))
    return {
        "leibniz_residual": float(np.max(np.abs(jump_fg - one_sided))),
        "mean_form_residual": float(np.max(np.abs(jump_fg - mean_form))),
        "jump": jump_fg,
    }


def wswap_check(a_field, patch, ns=16, nt=16):
    """Sup-norm residual of nu . grad_S a + a . W for a tangential field a.

    The left side is differenced parametrically; the right uses the analytic
    Weingarten map, so the two routes are independent.
    """
    q = patch.quadrature(ns, nt)
    x = q["x"]
    nu = patch.normal_xyz(x)
    a = np.asarray(a_field(x), dtype=float)
    tang_resid = np.max(np.abs(np.sum(a * nu, axis=1)))
    if tang_resid > 1e-8 * max(1.0, float(np.max(np.abs(a)))):
        raise ValueError(f"field is not tangential: max |a.nu| = {tang_resid:.3e}")
    grad_a = surface_gradient(a_field, patch, q["s"], q["t"])
    lhs = np.einsum("ni,nij->nj", nu, grad_a)
    W = patch.weingarten_xyz(x)
    rhs = -np.einsum("ni,nij->nj", a, W)
    return float(np.max(np.linalg.norm(lhs - rhs, axis=1)))


def surface_divergence_theorem_check(f_field, patch, ns=64, nt=128):
    """|integral of grad_S . f over a closed patch| for tangential f.

    Vanishes analytically; the return value is the quadrature error.
    """
    if not patch.closed:
        raise ValueError("divergence theorem check needs a closed patch")
    q = patch.quadrature(ns, nt)
    nu = patch.normal_xyz(q["x"])
    f = np.asarray(f_field(q["x"]), dtype=float)
    tang_resid = np.max(np.abs(np.sum(f * nu, axis=1)))
    if tang_resid > 1e-8 * max(1.0, float(np.max(np.abs(f)))):
        raise ValueError(f"field is not tangential: max |f.nu| = {tang_resid:.3e}")
    div = surface_divergence(f_field, patch, q["s"], q["t"])
    return float(abs(np.dot(q["w"], div)))


def normality_check(T, nu):
    """Norm of the tangential traction T . nu - (nu . T . nu) nu."""
    T = np.asarray(T, dtype=float)
    nu = np.asarray(nu, dtype=float)
    traction = T @ nu
    return float(np.linalg.norm(traction - np.dot(nu, traction) * nu))


def modified_traction(tpk1_field, p0_field, u_field, patch, s, t, p0_jump_tol=1e-10):
    """Modified surface traction tau = TPK1 . nu + nu grad_S.(p0 u) - p0 nu . grad_S u.

    All fields are TwoSidedField instances of position callables (a plain
    callable is treated as continuous).  The equilibrium pressure must be
    continuous across the patch.  Returns per-side tractions and their jump,
    each of shape (N, 3).
    """
    def two_sided(f):
        return f if isinstance(f, TwoSidedField) else TwoSidedField(f, f)

    tpk1 = two_sided(tpk1_field)
    p0 = two_sided(p0_field)
    u = two_sided(u_field)

    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = patch.chart(s, t)
    nu = patch.normal_xyz(x)

    p0p = np.asarray(p0.plus(x), dtype=float)
    p0m = np.asarray(p0.minus(x), dtype=float)
    if np.max(np.abs(p0p - p0m)) > p0_jump_tol * max(1.0, float(np.max(np.abs(p0p)))):
        raise ValueError("equilibrium pressure is discontinuous across the patch")

    def one_side(tpk1_f, p0_f, u_f, p0_vals):
        def p0u(pts):
            return np.asarray(p0_f(pts), dtype=float)[:, None] * np.asarray(u_f(pts), dtype=float)
        grad_p0u = surface_gradient(p0u, patch, s, t)
        div_p0u = np.trace(grad_p0u, axis1=1, axis2=2)
        grad_u = surface_gradient(u_f, patch, s, t)
        nu_grad_u = np.einsum("ni,nij->nj", nu, grad_u)
        T = np.asarray(tpk1_f(x), dtype=float)
        traction = np.einsum("nij,nj->ni", T, nu)
        return traction + div_p0u[:, None] * nu - p0_vals[:, None] * nu_grad_u

    tau_plus = one_side(tpk1.plus, p0.plus, u.plus, p0p)
    tau_minus = one_side(tpk1.minus, p0.minus, u.minus, p0m)
    return {"plus": tau_plus, "minus": tau_minus, "jump": tau_plus - tau_minus}
