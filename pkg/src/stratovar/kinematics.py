"""Finite-deformation bookkeeping.

Deformation gradient, Jacobian, material strain, density transport, the
Piola transform of stress, surface-element transport, and first-order
expansion checks that anchor the linearized theory.

Gradient convention: (grad u)_{ij} = d_j u_i, i.e. rows are components,
columns are derivative directions.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "StrainState",
    "deformation_state",
    "piola_transform",
    "inverse_piola_transform",
    "material_density",
    "surface_element_transform",
    "linearization_check",
]

#: determinants below this are treated as orientation loss
DET_FLOOR = 1e-12


@dataclass(frozen=True)
class StrainState:
    """Jacobian, right Cauchy-Green tensor and material strain of a motion.

    Attributes
    ----------
    J : float
        det F > 0.
    C : (3, 3) ndarray
        F^T F, symmetric positive definite.
    e : (3, 3) ndarray
        (C - I)/2, the material strain tensor.
    """

    J: float
    C: np.ndarray
    e: np.ndarray


def _as_matrix(F):
    F = np.asarray(F, dtype=float)
    if F.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {F.shape}")
    return F


def deformation_state(F):
    """Return J = det F, C = F^T F and e = (C - I)/2 for a deformation gradient.

    Raises
    ------
    ValueError
        If det F <= 1e-12 (orientation lost or motion degenerate).
    """
    F = _as_matrix(F)
    J = float(np.linalg.det(F))
    if J <= DET_FLOOR:
        raise ValueError(f"deformation gradient has det {J:.3e} <= {DET_FLOOR};"
                         " motion is not positively oriented")
    C = F.T @ F
    e = 0.5 * (C - np.eye(3))
    return StrainState(J=J, C=C, e=e)


def piola_transform(T, F):
    """Piola transform J T F^{-T} mapping Cauchy stress to first Piola-Kirchhoff."""
    T = _as_matrix(T)
    F = _as_matrix(F)
    J = float(np.linalg.det(F))
    if abs(J) <= DET_FLOOR:
        raise ValueError("deformation gradient is singular")
    return J * T @ np.linalg.inv(F).T


def inverse_piola_transform(TPK, F):
    """Recover the Cauchy stress T = J^{-1} TPK F^T from a Piola transform."""
    TPK = _as_matrix(TPK)
    F = _as_matrix(F)
    J = float(np.linalg.det(F))
    if abs(J) <= DET_FLOOR:
        raise ValueError("deformation gradient is singular")
    return (TPK @ F.T) / J


def material_density(rho0, J):
    """Spatial density rho = rho0 / J transported by mass conservation."""
    if J <= 0:
        raise ValueError(f"Jacobian must be positive, got {J}")
    if rho0 < 0:
        raise ValueError(f"reference density must be nonnegative, got {rho0}")
    return rho0 / J


def surface_element_transform(F, J, nu):
    """Weighted spatial normal J F^{-T} nu (the Nanson transport of nu dS)."""
    F = _as_matrix(F)
    nu = np.asarray(nu, dtype=float)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-10:
        raise ValueError("nu must be a unit vector")
    if abs(J) <= DET_FLOOR:
        raise ValueError("Jacobian too small")
    return J * np.linalg.solve(F.T, nu)


def _loglog_slope(eps, res):
    eps = np.asarray(eps, dtype=float)
    res = np.asarray(res, dtype=float)
    keep = res > 0
    if keep.sum() < 2:
        # residuals identically zero: super-convergent, report a large slope
        return np.inf
    return float(np.polyfit(np.log(eps[keep]), np.log(res[keep]), 1)[0])


def linearization_check(grad_u, epsilons):
    """Verify the first-order expansions of det and inverse-transpose.

    For F = I + eps * grad_u the residuals

        |det F - (1 + eps * div u)|  and  |F^{-T} - (I - eps * grad_u^T)|

    must shrink like eps^2.  Returns a report dict with the residual lists
    and the fitted log-log slopes (inf when the residuals vanish exactly).

    Parameters
    ----------
    grad_u : (3, 3) array_like
        Displacement gradient sample.
    epsilons : sequence of float
        Scales in (0, 0.5).
    """
    G = _as_matrix(grad_u)
    epsilons = list(epsilons)
    if any(not 0 < e < 0.5 for e in epsilons):
        raise ValueError("epsilons must lie in (0, 0.5)")
    I = np.eye(3)
    div_u = np.trace(G)
    det_res, inv_res = [], []
    for eps in epsilons:
        F = I + eps * G
        det_res.append(abs(np.linalg.det(F) - (1.0 + eps * div_u)))
        FinvT = np.linalg.inv(F).T
        inv_res.append(np.linalg.norm(FinvT - (I - eps * G.T), ord=np.inf))
    return {
        "epsilons": epsilons,
        "det_residuals": det_res,
        "inv_transpose_residuals": inv_res,
        "det_slope": _loglog_slope(epsilons, det_res),
        "inv_transpose_slope": _loglog_slope(epsilons, inv_res),
    }
