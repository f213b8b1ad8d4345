"""Fourth-order elasticity tensors and stress-measure algebra for prestressed media.

Builds the unstressed tensor Gamma and its prestressed companions:

* Xi     couples the material strain to the internal energy,
* Lambda maps grad u to the first Piola-Kirchhoff stress perturbation TPK1,
* Upsilon maps grad u to the incremental Lagrangian stress T1.

All tensors are stored dense (81 components); symmetry is verified, never
assumed structurally.  Index convention: T_{ij} = c_{ijkl} d_l u_k with
(grad u)_{kl} = d_l u_k.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor4",
    "Prestress",
    "FluidModuli",
    "PrestressParams",
    "isotropic_gamma",
    "classical_tensor",
    "build_prestressed",
    "stress_perturbations",
    "t1_strain_form",
    "deviatoric_split",
    "fluid_lambda",
    "fluid_xi",
    "fluid_tpk1",
    "fluid_t1",
]

_I = np.eye(3)


@dataclass
class Tensor4:
    """Dense fourth-order tensor with symmetry metadata.

    Attributes
    ----------
    c : (3, 3, 3, 3) ndarray
        Components c[i, j, k, l].
    has_minor_sym : bool
        Claims c_{ijkl} = c_{jikl} = c_{ijlk}.
    has_major_sym : bool
        Claims c_{ijkl} = c_{klij}.
    """

    c: np.ndarray
    has_minor_sym: bool = False
    has_major_sym: bool = False

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        if self.c.shape != (3, 3, 3, 3):
            raise ValueError(f"expected shape (3,3,3,3), got {self.c.shape}")

    def symmetry_residuals(self):
        """Max-abs residuals of all four index symmetries (claimed or not)."""
        c = self.c
        return {
            "left_minor": float(np.max(np.abs(c - c.transpose(1, 0, 2, 3)))),
            "right_minor": float(np.max(np.abs(c - c.transpose(0, 1, 3, 2)))),
            "major": float(np.max(np.abs(c - c.transpose(2, 3, 0, 1)))),
        }

    def verify(self, tol=1e-14):
        """Check the flagged symmetries against a scaled tolerance.

        Raises ValueError if a claimed symmetry fails; returns the residual
        dict otherwise.
        """
        res = self.symmetry_residuals()
        scale = max(1.0, float(np.max(np.abs(self.c))))
        if self.has_minor_sym:
            worst = max(res["left_minor"], res["right_minor"])
            if worst > tol * scale:
                raise ValueError(f"minor symmetry violated: residual {worst:.3e}")
        if self.has_major_sym:
            if res["major"] > tol * scale:
                raise ValueError(f"major symmetry violated: residual {res['major']:.3e}")
        return res

    def contract(self, grad_u):
        """Return c : grad_u, i.e. T_{ij} = c_{ijkl} (grad_u)_{kl}."""
        return np.einsum("ijkl,kl->ij", self.c, np.asarray(grad_u, dtype=float))


@dataclass
class Prestress:
    """Symmetric equilibrium stress at the reference time."""

    T0: np.ndarray

    def __post_init__(self):
        self.T0 = np.asarray(self.T0, dtype=float)
        if self.T0.shape != (3, 3):
            raise ValueError("prestress must be 3x3")
        if np.max(np.abs(self.T0 - self.T0.T)) > 1e-12 * max(1.0, np.max(np.abs(self.T0))):
            raise ValueError("prestress must be symmetric")


@dataclass
class FluidModuli:
    """Bulk modulus, equilibrium pressure and the adiabatic index kappa/p0."""

    kappa: float
    p0: float

    @property
    def gamma(self):
        if self.p0 == 0:
            raise ZeroDivisionError("adiabatic index undefined at p0 = 0")
        return self.kappa / self.p0


@dataclass(frozen=True)
class PrestressParams:
    """Dimensionless convention parameters of the prestressed energy expansion.

    The default a = 1/2, b = -1/2 makes the incremental Lagrangian stress
    independent of the equilibrium pressure.
    """

    a: float = 0.5
    b: float = -0.5


def isotropic_gamma(kappa, mu):
    """Isotropic unstressed elasticity tensor.

    Gamma_{ijkl} = (kappa - 2 mu/3) d_ij d_kl + mu (d_ik d_jl + d_il d_jk),
    carrying all classical symmetries.
    """
    if kappa <= 0:
        raise ValueError(f"bulk modulus must be positive, got {kappa}")
    if mu < 0:
        raise ValueError(f"shear modulus must be nonnegative, got {mu}")
    lam = kappa - 2.0 * mu / 3.0
    c = (lam * np.einsum("ij,kl->ijkl", _I, _I)
         + mu * (np.einsum("ik,jl->ijkl", _I, _I) + np.einsum("il,jk->ijkl", _I, _I)))
    return Tensor4(c, has_minor_sym=True, has_major_sym=True)


def classical_tensor(c, tol=1e-12):
    """Wrap raw components as a classically symmetric Tensor4, validating on load.

    Used for user-supplied anisotropic parts of Gamma.
    """
    t = Tensor4(np.asarray(c, dtype=float), has_minor_sym=True, has_major_sym=True)
    t.verify(tol)
    return t


def build_prestressed(gamma, T0, params=PrestressParams()):
    """Construct the prestressed tensors Xi, Lambda, Upsilon from Gamma and T0.

    Xi_{ijkl}     = Gamma_{ijkl} + a (T0_{ij} d_kl + T0_{kl} d_ij)
                    + b (T0_{ik} d_jl + T0_{jk} d_il + T0_{il} d_jk + T0_{jl} d_ik)
    Lambda_{ijkl} = d_ik T0_{jl} + Xi_{ijkl}
    Upsilon_{ijkl} = Lambda_{ijkl} + T0_{il} d_kj - T0_{ij} d_kl

    Xi keeps the classical symmetries, Lambda only the major one, Upsilon only
    the left-minor one.

    Parameters
    ----------
    gamma : Tensor4
        Unstressed tensor with classical symmetries (verified here).
    T0 : Prestress or (3, 3) array_like
    params : PrestressParams

    Returns
    -------
    dict with keys "Xi", "Lambda", "Upsilon".
    """
    if not isinstance(gamma, Tensor4):
        raise TypeError("gamma must be a Tensor4")
    if not (gamma.has_minor_sym and gamma.has_major_sym):
        raise ValueError("gamma must carry the classical symmetries")
    gamma.verify()
    if not isinstance(T0, Prestress):
        T0 = Prestress(T0)
    T = T0.T0
    a, b = params.a, params.b

    xi = (gamma.c
          + a * (np.einsum("ij,kl->ijkl", T, _I) + np.einsum("kl,ij->ijkl", T, _I))
          + b * (np.einsum("ik,jl->ijkl", T, _I) + np.einsum("jk,il->ijkl", T, _I)
                 + np.einsum("il,jk->ijkl", T, _I) + np.einsum("jl,ik->ijkl", T, _I)))
    lam = xi + np.einsum("ik,jl->ijkl", _I, T)
    ups = lam + np.einsum("il,kj->ijkl", T, _I) - np.einsum("ij,kl->ijkl", T, _I)

    out = {
        "Xi": Tensor4(xi, has_minor_sym=True, has_major_sym=True),
        "Lambda": Tensor4(lam, has_minor_sym=False, has_major_sym=True),
        "Upsilon": Tensor4(ups, has_minor_sym=False, has_major_sym=False),
    }
    out["Lambda"].verify()
    # left-minor symmetry of Upsilon (symmetry of T1) is not a flag case; check directly
    c = out["Upsilon"].c
    scale = max(1.0, float(np.max(np.abs(c))))
    if np.max(np.abs(c - c.transpose(1, 0, 2, 3))) > 1e-13 * scale:
        raise ValueError("Upsilon lost its left-minor symmetry")
    return out


def _recover_prestress(lam, ups):
    # Upsilon - Lambda = T0_{il} d_kj - T0_{ij} d_kl; read off T0 from entries
    # with k = j != l where only the first dyad survives.
    D = ups.c - lam.c
    T0 = np.empty((3, 3))
    for l in range(3):
        j = 0 if l != 0 else 1
        T0[:, l] = D[:, j, j, l]
    return T0


def stress_perturbations(lam, ups, grad_u, T0=None):
    """First Piola-Kirchhoff and incremental Lagrangian stress perturbations.

    TPK1 = Lambda : grad_u and T1 = Upsilon : grad_u, verifying the conversion
    identity T1 = TPK1 + T0 . (grad_u)^T - T0 (div u).  If T0 is not supplied
    it is recovered from Upsilon - Lambda.

    Returns
    -------
    dict with "TPK1", "T1", "conversion_residual".
    """
    gu = np.asarray(grad_u, dtype=float)
    tpk1 = lam.contract(gu)
    t1 = ups.contract(gu)
    if T0 is None:
        T0 = _recover_prestress(lam, ups)
    else:
        T0 = np.asarray(T0.T0 if isinstance(T0, Prestress) else T0, dtype=float)
    converted = tpk1 + T0 @ gu.T - T0 * np.trace(gu)
    resid = float(np.max(np.abs(t1 - converted)))
    scale = max(1.0, float(np.max(np.abs(t1))))
    if resid > 1e-8 * scale:
        raise ValueError(f"stress conversion identity violated: residual {resid:.3e};"
                         " Lambda and Upsilon do not share a prestress")
    return {"TPK1": tpk1, "T1": t1, "conversion_residual": resid}


def t1_strain_form(gamma, T0_dev, grad_u):
    """Incremental Lagrangian stress from strain and rotation (a = -b = 1/2).

    T1 = Gamma : eps + (1/2)(-T0_dev tr eps + (T0_dev : eps) I)
         - T0_dev . omega + omega . T0_dev

    with eps and omega the symmetric and antisymmetric parts of grad u.  The
    equilibrium pressure does not enter; only the deviatoric prestress does.
    """
    gu = np.asarray(grad_u, dtype=float)
    dev = np.asarray(T0_dev, dtype=float)
    if abs(np.trace(dev)) > 1e-10 * max(1.0, np.max(np.abs(dev))):
        raise ValueError("deviatoric prestress must be traceless")
    eps = 0.5 * (gu + gu.T)
    omg = 0.5 * (gu - gu.T)
    return (gamma.contract(eps)
            + 0.5 * (-dev * np.trace(eps) + np.sum(dev * eps) * _I)
            - dev @ omg + omg @ dev)


def deviatoric_split(T0):
    """Split T0 into equilibrium pressure and deviatoric prestress.

    p0 = -tr(T0)/3 and T0_dev = T0 + p0 I (traceless).
    """
    if not isinstance(T0, Prestress):
        T0 = Prestress(T0)
    T = T0.T0
    p0 = -np.trace(T) / 3.0
    return {"p0": float(p0), "T0_dev": T + p0 * _I}


# Closed forms for an elastic fluid (Gamma = kappa d_ij d_kl, T0 = -p0 I,
# a = -b = 1/2); the independent oracles behind the prestressed construction.

def fluid_lambda(kappa, p0):
    """Lambda_{ijkl} = p0 (gamma - 1) d_ij d_kl + p0 d_jk d_il with gamma = kappa/p0."""
    c = ((kappa - p0) * np.einsum("ij,kl->ijkl", _I, _I)
         + p0 * np.einsum("jk,il->ijkl", _I, _I))
    return Tensor4(c, has_minor_sym=False, has_major_sym=True)


def fluid_xi(kappa, p0):
    """Xi_{ijkl} = p0 (gamma - 1) d_ij d_kl + p0 (d_ik d_jl + d_il d_jk)."""
    c = ((kappa - p0) * np.einsum("ij,kl->ijkl", _I, _I)
         + p0 * (np.einsum("ik,jl->ijkl", _I, _I) + np.einsum("il,jk->ijkl", _I, _I)))
    return Tensor4(c, has_minor_sym=True, has_major_sym=True)


def fluid_tpk1(kappa, p0, grad_u):
    """TPK1 = p0 (gamma - 1) (div u) I + p0 (grad u)^T."""
    gu = np.asarray(grad_u, dtype=float)
    return (kappa - p0) * np.trace(gu) * _I + p0 * gu.T


def fluid_t1(kappa, p0, grad_u):
    """T1 = kappa (div u) I; the pressure perturbation is purely volumetric."""
    gu = np.asarray(grad_u, dtype=float)
    return kappa * np.trace(gu) * _I
