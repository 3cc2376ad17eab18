"""Yield-limited quadratic plastic potential, its functional and the prox.

The density is P(phi; S) = a(phi)/2 |S|^2 on the Frobenius ball
|S| <= sigma_yield and +inf outside.  Its proximal map has a closed form:
the objective 1/2|S-R|^2 + tau P(phi; S) is rotationally symmetric about
the direction of R and radially convex, so the minimizer is radial,
r* = |R|/(1 + tau a) clipped to the yield radius, i.e.

    prox_{tau P}(R) = Proj_{|.| <= sigma_yield}( R / (1 + tau a(phi)) ).

The tests cross-check this derivation against a dense grid search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from geoflow.grid import ScalarField, SymTensorField, inner_product
from geoflow.materials import CoefficientSpec


class PlasticityError(ValueError):
    pass


@dataclass(frozen=True)
class PlasticModel:
    a_spec: CoefficientSpec = field(default_factory=lambda: CoefficientSpec.constant(1.0))
    sigma_yield: float = 1.0

    def __post_init__(self):
        if self.sigma_yield <= 0:
            raise PlasticityError("sigma_yield must be positive")
        if self.a_spec.lo <= 0:
            raise PlasticityError("a(phi) must be bounded away from 0")


def _frobenius_rep(s1, s2):
    return np.sqrt(2.0 * (np.asarray(s1) ** 2 + np.asarray(s2) ** 2))


def plastic_density(phi_val, s1, s2, model: PlasticModel):
    """Pointwise density a(phi)/2 |S|^2, +inf beyond the yield ball.

    S is given in the trace-free representation (s11, s12); |S| is the
    Frobenius norm of the reconstructed matrix.
    """
    a = model.a_spec(phi_val)
    norm = _frobenius_rep(s1, s2)
    dens = 0.5 * a * norm ** 2
    out = np.where(norm <= model.sigma_yield * (1.0 + 1e-12), dens, np.inf)
    return out if np.ndim(out) else float(out)


def plastic_functional(phi: ScalarField, S: SymTensorField, model: PlasticModel) -> float:
    """Quadrature of the density; +inf if any cell violates the yield bound."""
    dens = plastic_density(phi.values, S.s1, S.s2, model)
    if np.any(np.isinf(dens)):
        return float("inf")
    return float(np.sum(dens)) * phi.grid.cell_area


def prox_plastic(phi_val, r1, r2, tau: float, model: PlasticModel):
    """Closed-form proximal map of tau*P(phi; .) at R, in rep coordinates."""
    if tau <= 0:
        raise PlasticityError("tau must be positive")
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    if not (np.all(np.isfinite(r1)) and np.all(np.isfinite(r2))):
        raise PlasticityError("non-finite prox input")
    a = model.a_spec(phi_val)
    shrink = 1.0 / (1.0 + tau * a)
    s1, s2 = shrink * r1, shrink * r2
    norm = _frobenius_rep(s1, s2)
    scale = np.where(norm > model.sigma_yield, model.sigma_yield / np.maximum(norm, 1e-300), 1.0)
    return s1 * scale, s2 * scale


def prox_plastic_field(phi: ScalarField, R: SymTensorField, tau: float, model: PlasticModel) -> SymTensorField:
    s1, s2 = prox_plastic(phi.values, R.s1, R.s2, tau, model)
    return SymTensorField(R.grid, s1, s2)


def subgradient_residual(r1, r2, tau: float, s1, s2):
    """xi = (R - S_out)/tau, a certified subgradient of P(phi; .) at S_out."""
    return (np.asarray(r1) - np.asarray(s1)) / tau, (np.asarray(r2) - np.asarray(s2)) / tau


def plastic_pairing(xi: SymTensorField, S: SymTensorField) -> float:
    """<xi, S> in L2, the dissipative pairing of the discrete energy estimate."""
    return inner_product(xi, S)
