"""Newtonian potentials, Poisson residuals, monopole decomposition, centrifugal
fields, and static/hydrostatic equilibrium for radially layered density models.

All potentials satisfy the decay-at-infinity convention; Poisson problems are
solved by Newtonian quadrature, never by grid iteration, so no artificial
boundary condition enters.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GRAVITATIONAL_CONSTANT_SI",
    "RadialDensityModel",
    "SampledDensity",
    "PotentialSamples",
    "HydrostaticProfile",
    "newtonian_potential",
    "poisson_residual",
    "monopole_decomposition",
    "solve_phi1",
    "centrifugal",
    "static_equilibrium_residual",
    "hydrostatic_solve",
]

#: SI preset; nondimensional runs use G = 1
GRAVITATIONAL_CONSTANT_SI = 6.67e-11


@dataclass
class RadialDensityModel:
    """Piecewise-constant density over concentric shells.

    Attributes
    ----------
    radii : ndarray
        Layer boundaries r_0 = 0 < r_1 < ... < r_L.
    densities : ndarray
        One density per shell, nonnegative.
    G : float
        Gravitational constant.
    center : (3,) ndarray
        Optional offset of the body center (used to give the potential a
        dipole moment about the origin in decay studies).
    """

    radii: np.ndarray
    densities: np.ndarray
    G: float = 1.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.densities = np.asarray(self.densities, dtype=float)
        self.center = np.asarray(self.center, dtype=float)
        if self.radii[0] != 0.0:
            raise ValueError("layer radii must start at 0")
        if np.any(np.diff(self.radii) <= 0):
            raise ValueError("layer radii must be strictly increasing")
        if len(self.densities) != len(self.radii) - 1:
            raise ValueError("need one density per shell")
        if np.any(self.densities < 0):
            raise ValueError("densities must be nonnegative")

    @property
    def outer_radius(self):
        return float(self.radii[-1])

    @property
    def total_mass(self):
        return float(self.mass(self.outer_radius))

    def density(self, r):
        """Density at radius r (0 outside the outermost shell)."""
        r = np.asarray(r, dtype=float)
        idx = np.searchsorted(self.radii, r, side="right") - 1
        idx = np.clip(idx, 0, len(self.densities) - 1)
        rho = self.densities[idx]
        return np.where(r >= self.outer_radius, 0.0, rho)

    def mass(self, r):
        """Mass enclosed within radius r."""
        r = np.asarray(r, dtype=float)
        shell_mass = 4.0 * np.pi / 3.0 * self.densities * np.diff(self.radii ** 3)
        cum = np.concatenate([[0.0], np.cumsum(shell_mass)])
        rc = np.clip(r, 0.0, self.outer_radius)
        idx = np.clip(np.searchsorted(self.radii, rc, side="right") - 1,
                      0, len(self.densities) - 1)
        return cum[idx] + 4.0 * np.pi / 3.0 * self.densities[idx] * (rc ** 3 - self.radii[idx] ** 3)

    def gravity(self, r):
        """Inward gravitational acceleration magnitude g(r) = G M(r)/r^2."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        nz = r > 0
        out[nz] = self.G * self.mass(r[nz]) / r[nz] ** 2
        return out

    def _potential_radial(self, r):
        # phi(r) = -G M(r)/r - 4 pi G int_r^R rho s ds, exact per shell
        r = np.atleast_1d(np.asarray(r, dtype=float))
        R = self.outer_radius
        phi = np.empty_like(r)
        outside = r >= R
        phi[outside] = -self.G * self.total_mass / r[outside]
        inside = ~outside
        if np.any(inside):
            ri = r[inside]
            # shell integral of rho * s from ri to R
            lo = np.maximum(self.radii[:-1][None, :], ri[:, None])
            hi = self.radii[1:][None, :]
            seg = np.clip(hi ** 2 - lo ** 2, 0.0, None) / 2.0
            tail = seg @ self.densities
            with np.errstate(divide="ignore", invalid="ignore"):
                mr_over_r = np.where(ri > 0, self.mass(ri) / np.where(ri > 0, ri, 1.0), 0.0)
            phi[inside] = -self.G * mr_over_r - 4.0 * np.pi * self.G * tail
        return phi

    def potential(self, x):
        """Newtonian potential at a point or (N, 3) array of points."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x) - self.center
        r = np.linalg.norm(pts, axis=1)
        phi = self._potential_radial(r)
        return float(phi[0]) if single else phi

    def potential_gradient(self, x):
        """grad phi = g(r) rhat, continuous through the center."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x) - self.center
        r = np.linalg.norm(pts, axis=1)
        grad = np.zeros_like(pts)
        nz = r > 0
        grad[nz] = (self.gravity(r[nz]) / r[nz])[:, None] * pts[nz]
        return grad[0] if single else grad

    def potential_hessian(self, x):
        """grad grad phi = (g/r)(I - rhat rhat) + g' rhat rhat with g' = 4 pi G rho - 2 g/r."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x) - self.center
        r = np.linalg.norm(pts, axis=1)
        H = np.zeros((len(pts), 3, 3))
        I = np.eye(3)
        for k, (p, rk) in enumerate(zip(pts, r)):
            if rk == 0:
                H[k] = 4.0 * np.pi / 3.0 * self.G * self.densities[0] * I
                continue
            rhat = p / rk
            g = float(self.gravity(np.array([rk]))[0])
            gprime = 4.0 * np.pi * self.G * float(self.density(np.array([rk]))[0]) - 2.0 * g / rk
            H[k] = (g / rk) * (I - np.outer(rhat, rhat)) + gprime * np.outer(rhat, rhat)
        return H[0] if single else H


@dataclass
class SampledDensity:
    """Density sampled at midpoint cells of a uniform Cartesian grid."""

    points: np.ndarray
    values: np.ndarray
    cell_volume: float
    G: float = 1.0

    @classmethod
    def from_model(cls, model, extent, n, subsample=1):
        """Sample a radial model on an n^3 midpoint grid over [-extent, extent]^3.

        subsample > 1 averages the density over subsample^3 points per cell,
        which smooths the staircase boundary of the support.
        """
        h = 2.0 * extent / n
        axis = -extent + h * (np.arange(n) + 0.5)
        X, Y, Z = np.meshgrid(axis, axis, axis, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        if subsample == 1:
            r = np.linalg.norm(pts - model.center, axis=1)
            vals = np.asarray(model.density(r), dtype=float)
        else:
            off = (np.arange(subsample) + 0.5) / subsample - 0.5
            vals = np.zeros(len(pts))
            for dx in off:
                for dy in off:
                    for dz in off:
                        q = pts + h * np.array([dx, dy, dz])
                        r = np.linalg.norm(q - model.center, axis=1)
                        vals += np.asarray(model.density(r), dtype=float)
            vals /= subsample ** 3
        keep = vals > 0
        return cls(points=pts[keep], values=vals[keep], cell_volume=h ** 3, G=model.G)

    @property
    def total_mass(self):
        return float(np.sum(self.values) * self.cell_volume)

    def potential(self, x):
        """Midpoint-quadrature Newtonian potential; the singular cell uses an
        equal-volume sphere rule."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        targets = np.atleast_2d(x)
        a = (3.0 * self.cell_volume / (4.0 * np.pi)) ** (1.0 / 3.0)
        out = np.empty(len(targets))
        for k, t in enumerate(targets):
            d = np.linalg.norm(self.points - t, axis=1)
            kern = np.empty_like(d)
            far = d >= a
            kern[far] = 1.0 / d[far]
            # interior of an equal-volume uniform sphere: (3a^2 - d^2)/(2a^3)
            kern[~far] = (3.0 * a ** 2 - d[~far] ** 2) / (2.0 * a ** 3)
            out[k] = -self.G * self.cell_volume * np.dot(self.values, kern)
        return float(out[0]) if single else out


@dataclass
class PotentialSamples:
    """Potential values (and optional gradients) at sample points."""

    points: np.ndarray
    values: np.ndarray
    gradients: np.ndarray | None = None


def newtonian_potential(model, x):
    """Potential of a radial or sampled density at point(s) x.

    Radial models use the exact shell formulas; sampled densities use midpoint
    quadrature with a regularized rule for the singular cell.
    """
    if isinstance(model, (RadialDensityModel, SampledDensity)):
        return model.potential(x)
    raise TypeError(f"unsupported density model {type(model).__name__}")


def poisson_residual(phi_grid, rho_grid, h, G=1.0):
    """Max-norm of the 7-point discrete Poisson residual lap phi - 4 pi G rho.

    Evaluated on interior grid points only; O(h^2) for smooth fields.
    """
    phi = np.asarray(phi_grid, dtype=float)
    rho = np.asarray(rho_grid, dtype=float)
    if phi.ndim != 3 or min(phi.shape) < 3:
        raise ValueError("need a 3-d grid with at least 3 points per direction")
    lap = (phi[2:, 1:-1, 1:-1] + phi[:-2, 1:-1, 1:-1]
           + phi[1:-1, 2:, 1:-1] + phi[1:-1, :-2, 1:-1]
           + phi[1:-1, 1:-1, 2:] + phi[1:-1, 1:-1, :-2]
           - 6.0 * phi[1:-1, 1:-1, 1:-1]) / h ** 2
    res = lap - 4.0 * np.pi * G * rho[1:-1, 1:-1, 1:-1]
    return {"linf": float(np.max(np.abs(res))), "field": res}


def _quintic_blend(t):
    # C^2 smoothstep: 0 at t=0, 1 at t=1, zero first and second derivatives
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)


def monopole_decomposition(model, cutoff):
    """Split the potential into a monopole term and a faster-decaying rest.

    m_s(x) = -G M / |x| * (1 - chi(x)) with chi a C^2 quintic blend equal to 1
    inside |x| < cutoff and 0 outside 2*cutoff; phi_tilde = phi - m_s then
    decays like |x|^{-2}.

    The model support must fit inside the cutoff radius.
    """
    if isinstance(model, RadialDensityModel):
        support = model.outer_radius + float(np.linalg.norm(model.center))
        M = model.total_mass
    elif isinstance(model, SampledDensity):
        support = float(np.max(np.linalg.norm(model.points, axis=1)))
        M = model.total_mass
    else:
        raise TypeError(f"unsupported density model {type(model).__name__}")
    if support > cutoff + 1e-12:
        raise ValueError(f"support radius {support:.3g} exceeds cutoff {cutoff:.3g}")
    G = model.G

    def m_s(x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        r = np.linalg.norm(pts, axis=1)
        out = np.zeros(len(pts))
        far = r > cutoff
        t = (r[far] - cutoff) / cutoff
        out[far] = -G * M / r[far] * _quintic_blend(t)
        return float(out[0]) if single else out

    def phi_tilde(x):
        return newtonian_potential(model, x) - m_s(x)

    return {"m_s": m_s, "phi_tilde": phi_tilde, "mass": M}


def solve_phi1(model, u_field, grid, targets=None):
    """Mass-redistribution potential for a displacement field.

    Solves lap phi1 = -4 pi G div(rho0 u) by Newtonian quadrature: rho0 u is
    sampled on a uniform grid covering the support, differenced centrally, and
    the resulting source integrated against the free-space kernel, so phi1
    decays at infinity with no boundary condition imposed.

    Parameters
    ----------
    model : RadialDensityModel
    u_field : callable (N, 3) -> (N, 3)
    grid : (extent, n) tuple
        Midpoint grid over [-extent, extent]^3 with n cells per axis; the
        support of rho0 u must fit strictly inside.
    targets : (M, 3) ndarray, optional
        Evaluation points; defaults to probes along the x axis.

    Returns
    -------
    PotentialSamples
    """
    extent, n = grid
    if model.outer_radius + np.linalg.norm(model.center) >= extent:
        raise ValueError("grid does not contain the support with a margin")
    h = 2.0 * extent / n
    axis = -extent + h * (np.arange(n) + 0.5)
    X, Y, Z = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
    r = np.linalg.norm(pts - model.center, axis=1)
    rho = np.asarray(model.density(r), dtype=float).reshape(n, n, n)
    u = np.asarray(u_field(pts), dtype=float).reshape(n, n, n, 3)
    flux = rho[..., None] * u

    div = np.zeros((n, n, n))
    for ax in range(3):
        div += np.gradient(flux[..., ax], h, axis=ax, edge_order=1)

    if targets is None:
        R = model.outer_radius
        targets = np.array([[s, 0.0, 0.0] for s in
                            (0.0, 0.3 * R, 0.6 * R, 0.9 * R, 1.5 * R, 2.0 * R)])
    targets = np.atleast_2d(np.asarray(targets, dtype=float))

    src_pts = pts
    src = div.ravel()
    nzmask = src != 0.0
    src_pts = src_pts[nzmask]
    src = src[nzmask]
    a = (3.0 * h ** 3 / (4.0 * np.pi)) ** (1.0 / 3.0)
    vals = np.empty(len(targets))
    for k, t in enumerate(targets):
        d = np.linalg.norm(src_pts - t, axis=1)
        kern = np.where(d >= a, 1.0 / np.maximum(d, 1e-300),
                        (3.0 * a ** 2 - d ** 2) / (2.0 * a ** 3))
        vals[k] = model.G * h ** 3 * np.dot(src, kern)
    return PotentialSamples(points=targets, values=vals)


def centrifugal(Omega, x):
    """Centrifugal potential Psi = -(|Omega|^2 |x|^2 - (Omega.x)^2)/2 and derivatives.

    grad Psi = Omega x (Omega x x); the Hessian is the constant matrix
    Omega Omega^T - |Omega|^2 I with trace -2 |Omega|^2.
    """
    Omega = np.asarray(Omega, dtype=float)
    x = np.asarray(x, dtype=float)
    w2 = float(np.dot(Omega, Omega))
    psi = -0.5 * (w2 * np.dot(x, x) - np.dot(Omega, x) ** 2)
    grad = np.cross(Omega, np.cross(Omega, x))
    hess = np.outer(Omega, Omega) - w2 * np.eye(3)
    return {"Psi": float(psi), "grad": grad, "hess": hess}


def static_equilibrium_residual(rho0, grad_phi0, grad_psi, div_T0):
    """Residual of rho0 grad(Phi0 + Psi) - div T0 at common sample points.

    All inputs are arrays over the same N points (rho0 shape (N,), the rest
    (N, 3)).  Returns pointwise norms plus l-inf and l2 summaries.
    """
    rho0 = np.asarray(rho0, dtype=float)
    g = np.asarray(grad_phi0, dtype=float) + np.asarray(grad_psi, dtype=float)
    d = np.asarray(div_T0, dtype=float)
    if g.shape != d.shape or len(rho0) != len(g):
        raise ValueError("sample sets do not match")
    res = rho0[:, None] * g - d
    norms = np.linalg.norm(res, axis=1)
    return {"pointwise": norms,
            "linf": float(np.max(norms)) if len(norms) else 0.0,
            "l2": float(np.sqrt(np.mean(norms ** 2))) if len(norms) else 0.0}


@dataclass
class HydrostaticProfile:
    """Equilibrium pressure profile of a nonrotating radial model."""

    radii: np.ndarray
    p0: np.ndarray
    model: RadialDensityModel

    def pressure(self, r):
        """Exact piecewise closed-form p0(r) (not an interpolation)."""
        return _hydrostatic_pressure(self.model, np.asarray(r, dtype=float))


def _hydrostatic_pressure(model, r):
    # per-layer closed form of  p(r) = int_r^R rho(s) G M(s)/s^2 ds  for
    # piecewise-constant rho; A_l = M_l - (4 pi/3) rho_l r_l^3 collects the
    # 1/s^2 part, which vanishes in the innermost layer
    r = np.atleast_1d(r)
    G = model.G
    radii, dens = model.radii, model.densities
    L = len(dens)
    Ml = np.array([model.mass(radii[l]) for l in range(L)])
    A = Ml - 4.0 * np.pi / 3.0 * dens * radii[:-1] ** 3

    def layer_integral(l, a, b):
        # int_a^b rho_l g(s) ds within layer l, a <= b
        if b <= a:
            return 0.0
        val = 2.0 * np.pi / 3.0 * G * dens[l] ** 2 * (b ** 2 - a ** 2)
        if A[l] != 0.0:
            val += dens[l] * G * A[l] * (1.0 / a - 1.0 / b)
        return val

    # pressure drop across each full layer, integrated outside-in
    p_at = np.zeros(L + 1)  # p at layer boundaries, p_at[L] = 0 at the surface
    for l in range(L - 1, -1, -1):
        p_at[l] = p_at[l + 1] + layer_integral(l, radii[l], radii[l + 1])

    out = np.zeros_like(r, dtype=float)
    for k, rk in enumerate(r):
        if rk >= model.outer_radius:
            out[k] = 0.0
            continue
        l = min(np.searchsorted(radii, rk, side="right") - 1, L - 1)
        out[k] = p_at[l + 1] + layer_integral(l, rk, radii[l + 1])
    return out


def hydrostatic_solve(model, Omega=None, n_samples=200):
    """Integrate hydrostatic balance dp0/dr = -rho0 g inward from p0(R) = 0.

    Only the nonrotating case is supported here; pass Omega = None or zero.
    The returned profile exposes the exact per-layer closed form, so sampled
    values are not interpolation-limited.
    """
    if Omega is not None and np.linalg.norm(Omega) > 0:
        raise ValueError("rotating hydrostatic figures are not supported")
    radii = np.linspace(0.0, model.outer_radius, n_samples)
    p0 = _hydrostatic_pressure(model, radii)
    return HydrostaticProfile(radii=radii, p0=p0, model=model)
