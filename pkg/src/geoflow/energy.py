"""Energy components and the dissipation quadratures shared by the stepper
and the diagnostics evaluators.

The phase-field gradient energy and the mixing/stress-diffusion dissipations
use the face quadrature, which is the form against which the compact
Laplacian and the mobility operator telescope exactly; this is what makes
the per-step energy estimate hold to round-off.
"""

from __future__ import annotations

import numpy as np

from geoflow.grid import (
    BC_NEUMANN,
    Grid,
    GridOperators,
    NEUMANN,
    ScalarField,
    SymTensorField,
    VectorField,
    face_grad_sq,
    face_gradients,
    viscous_dissipation,
)
from geoflow.materials import Params, density_values
from geoflow.potentials import PotentialFamily


def total_energy(v: VectorField, S: SymTensorField, phi: ScalarField,
                 family: PotentialFamily, p: Params) -> dict:
    """Energy components and total for one state.

    Returns kinetic, elastic, phase-field gradient / double-well / singular
    parts and their sum.  The singular part is +inf outside the potential
    domain (it never is along accepted trajectories).
    """
    g = phi.grid
    w = g.cell_area
    rho = density_values(phi.values, p)
    e_kin = 0.5 * float(np.sum(rho * (v.vx ** 2 + v.vy ** 2))) * w
    e_el = float(np.sum(S.s1 ** 2 + S.s2 ** 2)) * w
    e_grad = 0.5 * p.epsilon * face_grad_sq(phi.values, g, BC_NEUMANN)
    from geoflow.potentials import w_dw  # local to avoid cycle at import time

    e_dw = float(np.sum(w_dw(phi.values))) * w / p.epsilon
    sing = family.w_sing(phi.values)
    e_sing = float(np.sum(sing)) * w / p.epsilon if np.all(np.isfinite(sing)) else float("inf")
    total = e_kin + e_el + e_grad + e_dw + e_sing
    return {
        "kinetic": e_kin,
        "elastic": e_el,
        "pf_grad": e_grad,
        "pf_dw": e_dw,
        "pf_sing": e_sing,
        "total": total,
    }


def mixing_dissipation(mu: ScalarField, m_cells, grid: Grid) -> float:
    """integral m |grad mu|^2 with face-averaged mobility (matches the
    conservative mobility operator exactly)."""
    ops = GridOperators(grid)
    m = np.asarray(m_cells).ravel()
    gx, gy = face_gradients(mu.values, grid, BC_NEUMANN)
    m_fx = (ops.Ax[NEUMANN] @ m).reshape(grid.nx + 1, grid.ny)
    m_fy = (ops.Ay[NEUMANN] @ m).reshape(grid.nx, grid.ny + 1)
    return float(np.sum(m_fx * gx ** 2) + np.sum(m_fy * gy ** 2)) * grid.cell_area


def stress_diffusion_dissipation(S: SymTensorField, grid: Grid) -> float:
    """integral |grad S|^2 (Frobenius, factor 2 on the stored entries)."""
    return 2.0 * (
        face_grad_sq(S.s1, grid, BC_NEUMANN) + face_grad_sq(S.s2, grid, BC_NEUMANN)
    )


def step_dissipations(v: VectorField, S: SymTensorField, mu: ScalarField,
                      nu_cells, m_cells, p: Params) -> dict:
    """The three quadratic dissipation rates of one accepted step."""
    g = mu.grid
    return {
        "viscous": viscous_dissipation(v, nu_cells),
        "gamma": p.gamma * stress_diffusion_dissipation(S, g),
        "mixing": mixing_dissipation(mu, m_cells, g),
    }
