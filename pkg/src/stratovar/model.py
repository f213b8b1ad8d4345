"""Material description of a composite rotating body.

Per-region density, elastic input (a classical stiffness tensor for solids, a
bulk modulus and equilibrium pressure for fluids), prestress, the rotation
vector, and the static geopotential fields that enter the quadratic action.
Fields are either constants or callables over point arrays (N, 3).
"""

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .elastica import PrestressParams, Tensor4
from .gravity import RadialDensityModel

__all__ = [
    "Material",
    "EarthModel",
    "as_scalar_field",
    "as_vector_field",
    "as_tensor_field",
]


def as_scalar_field(spec):
    if callable(spec):
        return lambda x: np.asarray(spec(np.atleast_2d(x)), dtype=float)
    val = float(spec)
    return lambda x: np.full(len(np.atleast_2d(x)), val)


def as_vector_field(spec):
    if callable(spec):
        return lambda x: np.asarray(spec(np.atleast_2d(x)), dtype=float)
    vec = np.asarray(spec, dtype=float)
    return lambda x: np.broadcast_to(vec, (len(np.atleast_2d(x)), 3)).copy()


def as_tensor_field(spec):
    if callable(spec):
        return lambda x: np.asarray(spec(np.atleast_2d(x)), dtype=float)
    mat = np.asarray(spec, dtype=float)
    if mat.shape != (3, 3):
        raise ValueError("tensor field constant must be 3x3")
    return lambda x: np.broadcast_to(mat, (len(np.atleast_2d(x)), 3, 3)).copy()


@dataclass
class Material:
    """One region's constitutive data.

    Solids need gamma (classical stiffness, a Tensor4) and may carry either a
    general symmetric prestress T0 or a pure pressure p0 (meaning T0 = -p0 I).
    Fluids carry kappa and p0 only; their prestress is always -p0 I.
    """

    name: str
    kind: str
    rho0: object = 0.0
    gamma: Tensor4 | None = None
    kappa: object = None
    p0: object = None
    T0: object = None

    def __post_init__(self):
        if self.kind not in ("solid", "fluid", "vacuum"):
            raise ValueError(f"unknown material kind {self.kind!r}")
        if self.kind == "fluid":
            if self.gamma is not None or self.T0 is not None:
                raise ValueError(
                    f"fluid region {self.name!r} admits no shear stiffness or "
                    "deviatoric prestress")
            if self.kappa is None or self.p0 is None:
                raise ValueError(f"fluid region {self.name!r} needs kappa and p0")
        if self.kind == "solid":
            if self.gamma is None:
                raise ValueError(f"solid region {self.name!r} needs a stiffness tensor")
            if self.T0 is not None and self.p0 is not None:
                raise ValueError(f"region {self.name!r}: give T0 or p0, not both")
        if self.kind == "vacuum":
            self.rho0 = 0.0
        self.rho0_field = as_scalar_field(self.rho0)
        self.kappa_field = as_scalar_field(self.kappa) if self.kappa is not None else None
        self.p0_field = as_scalar_field(self.p0) if self.p0 is not None else None
        if self.kind == "fluid":
            p0f = self.p0_field
            self.T0_field = lambda x: -p0f(x)[:, None, None] * np.eye(3)
        elif self.T0 is not None:
            self.T0_field = as_tensor_field(self.T0)
        elif self.p0 is not None:
            p0f = self.p0_field
            self.T0_field = lambda x: -p0f(x)[:, None, None] * np.eye(3)
        else:
            self.T0_field = lambda x: np.zeros((len(np.atleast_2d(x)), 3, 3))

    def face_pressure(self, x, nu):
        """Equilibrium pressure trace -nu . T0 . nu at surface points."""
        T0 = self.T0_field(x)
        return -np.einsum("ni,nij,nj->n", nu, T0, nu)


@dataclass
class EarthModel:
    """Materials aligned with the mesh regions plus global structure.

    geo_grad and geo_hess are gradient and Hessian of the full static
    geopotential (self-gravitation plus centrifugal); phi0_value and
    phi0_grad describe the self-gravitation part alone, which the
    first-order action needs separately.  force_value / force_grad describe
    an external force potential.  Absent callables mean zero fields.
    """

    materials: list
    Omega: np.ndarray = dataclass_field(default_factory=lambda: np.zeros(3))
    G: float = 1.0
    params: PrestressParams = dataclass_field(default_factory=PrestressParams)
    force_value: object = None
    force_grad: object = None
    geo_grad: object = None
    geo_hess: object = None
    phi0_value: object = None
    phi0_grad: object = None

    def __post_init__(self):
        self.Omega = np.asarray(self.Omega, dtype=float)
        if self.Omega.shape != (3,):
            raise ValueError("Omega must be a 3-vector")
        for attr in ("force_value", "force_grad", "geo_grad", "geo_hess",
                     "phi0_value", "phi0_grad"):
            fn = getattr(self, attr)
            if fn is not None and not callable(fn):
                raise ValueError(f"{attr} must be a callable or None")

    def material(self, region_index):
        return self.materials[region_index]

    def check_against(self, mesh):
        if len(self.materials) != len(mesh.regions):
            raise ValueError(
                f"model has {len(self.materials)} materials, mesh has "
                f"{len(mesh.regions)} regions")
        for mat, reg in zip(self.materials, mesh.regions):
            if mat.kind != reg.kind:
                raise ValueError(
                    f"region {reg.name!r} is {reg.kind}, material {mat.name!r} "
                    f"is {mat.kind}")
        return True

    @classmethod
    def with_radial_gravity(cls, materials, radial: RadialDensityModel,
                            Omega=(0.0, 0.0, 0.0), **kwargs):
        """Compose the geopotential fields from a radial density model."""
        Omega = np.asarray(Omega, dtype=float)

        def phi0_value(x):
            return radial.potential(x)

        def phi0_grad(x):
            return radial.potential_gradient(x)

        def geo_grad(x):
            g = radial.potential_gradient(x)
            if np.any(Omega):
                pts = np.atleast_2d(x)
                g = g + (pts @ Omega)[:, None] * Omega - np.dot(Omega, Omega) * pts
            return g

        def geo_hess(x):
            H = radial.potential_hessian(x)
            if np.any(Omega):
                H = H + (np.outer(Omega, Omega) - np.dot(Omega, Omega) * np.eye(3))
            return H

        return cls(materials=list(materials), Omega=Omega, G=radial.G,
                   geo_grad=geo_grad, geo_hess=geo_hess,
                   phi0_value=phi0_value, phi0_grad=phi0_grad, **kwargs)
