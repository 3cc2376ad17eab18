"""The implicit time-discrete scheme: coupled momentum / stress / phase-field
solves producing trajectories that satisfy the discrete energy-dissipation
estimate up to solver tolerance.

One step advances (v, S, phi, mu) by a block Gauss-Seidel fixed point in the
order phase-field -> stress -> momentum -> (exact) divergence constraint:

* the phase-field pair (phi, mu) solves the transport law with coefficients
  frozen at the previous time level and the kappa-split chemical-potential
  relation; Newton with a fraction-to-boundary safeguard in logarithmic
  mode, a primal-dual active set in obstacle mode;
* the stress solves its evolution law with the plastic inclusion realized by
  the closed-form prox inside a Douglas-Rachford alternation (the 1/2-damped
  alternation of resolvent reflections), tolerance 1e-10;
* the momentum is a direct saddle-point solve, so the divergence-free
  constraint holds to factorization round-off and the discrete momentum
  equation holds against every discretely solenoidal test field.

Energy accounting: convection is assembled in the skew (energy-neutral)
form conv(u; m) = (m . grad u + div(u x m))/2, which reproduces the paper's
five-term convection/stabilization grouping up to O(h^2) consistency terms
and pairs to exactly zero against the advected field; together with the
face-quadrature dissipations this makes the per-step energy estimate hold
with only round-off slack.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from geoflow import energy as energy_mod
from geoflow.grid import (
    BC_NEUMANN,
    BC_VELOCITY,
    DIRICHLET,
    NEUMANN,
    Grid,
    GridOperators,
    ScalarField,
    SymTensorField,
    VectorField,
    apply_divergence,
    apply_gradient,
    inner_product,
    norm_l2,
    norm_linf,
    sym_skw_split,
)
from geoflow.materials import Params, density_values, mass_flux
from geoflow.plasticity import PlasticModel, prox_plastic
from geoflow.potentials import PotentialFamily


class StepError(RuntimeError):
    """Inner solver failure; carries the last residuals for diagnosis."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


@dataclass
class SimState:
    v: VectorField
    S: SymTensorField
    phi: ScalarField
    mu: ScalarField
    p: ScalarField
    t: float

    def copy(self):
        return SimState(self.v.copy(), self.S.copy(), self.phi.copy(),
                        self.mu.copy(), self.p.copy(), self.t)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if self.T <= 0 or self.N < 1:
            raise ValueError("need T > 0 and N >= 1")

    @property
    def h(self) -> float:
        return self.T / self.N

    def times(self):
        return np.linspace(0.0, self.T, self.N + 1)


_GL4_X, _GL4_W = np.polynomial.legendre.leggauss(4)


@dataclass
class Forcing:
    """Body force f(x, y, t); per-step averages by 4-node Gauss quadrature.

    func maps (X, Y, t) -> (fx, fy) arrays; None means no forcing.
    """

    grid: Grid
    func: object = None

    def step_average(self, t0: float, h: float) -> VectorField:
        if self.func is None:
            return VectorField.zero(self.grid)
        X, Y = self.grid.cell_centers()
        fx = np.zeros_like(X)
        fy = np.zeros_like(Y)
        for xq, wq in zip(_GL4_X, _GL4_W):
            t = t0 + 0.5 * h * (xq + 1.0)
            gx, gy = self.func(X, Y, t)
            fx += 0.5 * wq * np.asarray(gx, dtype=float)
            fy += 0.5 * wq * np.asarray(gy, dtype=float)
        return VectorField(self.grid, fx, fy)

    @property
    def is_zero(self) -> bool:
        return self.func is None


@dataclass
class StepReport:
    outer_iterations: int
    residuals: dict
    dissipation: dict
    plastic_pairing: float
    f_work: float
    energy_before: float
    energy_after: float
    ede_slack: float
    wall_time: float


@dataclass
class Trajectory:
    grid: Grid
    params: Params
    family: PotentialFamily
    timegrid: TimeGrid
    states: list
    reports: list
    betas: list  # per step: multiplier field of the singular potential
    xis: list    # per step: certified plastic subgradient
    forcings: list  # per step: the averaged forcing field
    complete: bool = True
    flux_mode: str = "discrete-paper"

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def energies(self):
        return [
            energy_mod.total_energy(s.v, s.S, s.phi, self.family, self.params)
            for s in self.states
        ]


@dataclass(frozen=True)
class SolverConfig:
    outer_tol: float = 1e-9
    max_outer: int = 200
    newton_tol: float = 1e-12
    newton_max: int = 50
    pdas_max: int = 80
    dr_tol: float = 1e-10
    dr_max: int = 600
    damping: float = 0.5
    # relative momentum update below which the robustness damping is lifted
    damping_release: float = 1e-4
    lin_tol: float = 1e-11


# ---------------------------------------------------------------------------
# factorization reuse
# ---------------------------------------------------------------------------


class ReusableLU:
    """Sparse LU reused as a preconditioner while the matrix drifts.

    The solve runs LU-preconditioned iterative refinement against the
    current matrix and refactors only when refinement converges too slowly,
    which cuts the factorization count per step by an order of magnitude
    without touching the solution accuracy.
    """

    def __init__(self, rtol=1e-13, max_refine=10):
        self.lu = None
        self.a0 = None
        self.rtol = rtol
        self.max_refine = max_refine
        self.last_refine_count = 0

    def _refactor(self, a_new):
        self.a0 = a_new
        self.lu = spla.splu(a_new.tocsc())

    def factorize(self, a_new):
        self._refactor(a_new)

    def solve(self, a_new, b):
        if self.lu is None:
            self._refactor(a_new)
        if a_new is self.a0:
            # exact factorization of this very matrix: a single solve suffices
            self.last_refine_count = 0
            return self.lu.solve(b)
        x = self.lu.solve(b)
        bnorm = float(np.linalg.norm(b)) + 1e-300
        for k in range(self.max_refine):
            r = b - a_new @ x
            if float(np.linalg.norm(r)) <= self.rtol * bnorm:
                self.last_refine_count = k
                return x
            x = x + self.lu.solve(r)
        self._refactor(a_new)
        self.last_refine_count = self.max_refine
        x = self.lu.solve(b)
        r = b - a_new @ x
        if float(np.linalg.norm(r)) > 10 * self.rtol * bnorm:
            x = x + self.lu.solve(r)
        return x


# ---------------------------------------------------------------------------
# sparse assembly helpers
# ---------------------------------------------------------------------------


def _conv_skew_matrix(grid: Grid, flux: VectorField, bc_kind: str):
    """Matrix of u -> (m . grad u + div(u m))/2 for one advected component.

    Matches grid.conv_skew entry by entry.  The advective ghost and the
    conservative product ghost cancel at the walls for either mirror sign,
    so the matrix is the same for Dirichlet and Neumann advected fields;
    bc_kind is kept for call-site readability.
    """
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    m = grid.ncells
    mx, my = flux.vx, flux.vy

    rows, cols, vals = [], [], []
    idx = np.arange(m).reshape(nx, ny)

    # x-direction: advective m_x*(u_{i+1}-u_{i-1})/2h, conservative
    # ((um)_{i+1}-(um)_{i-1})/2h, each halved.
    cx = 1.0 / (2.0 * hx)
    r = idx[:-1, :].ravel()
    c = idx[1:, :].ravel()
    vals_up = 0.5 * cx * (mx[:-1, :].ravel() + mx[1:, :].ravel())
    rows.append(r); cols.append(c); vals.append(vals_up)          # u_{i+1}
    rows.append(c); cols.append(r); vals.append(-vals_up)         # u_{i-1} from row i+1
    # boundary ghosts cancel: the advective ghost -su*m and the conservative
    # product ghost +su*m sum to zero for either mirror sign su, so the
    # boundary rows carry no diagonal correction.

    cy = 1.0 / (2.0 * hy)
    r = idx[:, :-1].ravel()
    c = idx[:, 1:].ravel()
    vals_up = 0.5 * cy * (my[:, :-1].ravel() + my[:, 1:].ravel())
    rows.append(r); cols.append(c); vals.append(vals_up)
    rows.append(c); cols.append(r); vals.append(-vals_up)

    rows = np.concatenate([np.asarray(x).ravel() for x in rows])
    cols = np.concatenate([np.asarray(x).ravel() for x in cols])
    vals = np.concatenate([np.asarray(x).ravel() for x in vals])
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def _viscous_matrix(grid: Grid, nu_cells):
    """Weak viscous form on stacked (vx, vy): v^T B v = int 2 nu |sym grad v|^2."""
    ops = GridOperators(grid)
    w = grid.cell_area
    nu = np.asarray(nu_cells).ravel()
    wfx = sp.diags(2.0 * (ops.Ax[NEUMANN] @ nu) * w)
    wfy = sp.diags(2.0 * (ops.Ay[NEUMANN] @ nu) * w)
    wn = sp.diags((ops.AnodeN @ nu) * w)
    fx, fy = ops.Fx[DIRICHLET], ops.Fy[DIRICHLET]
    nyx, nxy = ops.NdyD, ops.NdxD
    bxx = (fx.T @ wfx @ fx) + (nyx.T @ wn @ nyx)
    byy = (fy.T @ wfy @ fy) + (nxy.T @ wn @ nxy)
    bxy = nyx.T @ wn @ nxy
    return sp.bmat([[bxx, bxy], [bxy.T, byy]], format="csr")


def _stress_force_vectors(grid: Grid, S: SymTensorField, eta_cells):
    """Weak vector of <eta S, sym grad .> on stacked (vx, vy)."""
    ops = GridOperators(grid)
    w = grid.cell_area
    eta = np.asarray(eta_cells).ravel()
    es1 = eta * S.s1.ravel()
    es2 = eta * S.s2.ravel()
    gx = ops.Fx[DIRICHLET].T @ ((ops.Ax[NEUMANN] @ es1) * w) + ops.NdyD.T @ ((ops.AnodeN @ es2) * w)
    gy = -(ops.Fy[DIRICHLET].T @ ((ops.Ay[NEUMANN] @ es1) * w)) + ops.NdxD.T @ ((ops.AnodeN @ es2) * w)
    return np.concatenate([gx, gy])


def _strain_rhs_for_stress(grid: Grid, v: VectorField, eta_cells):
    """Cell tensor R with <R, Psi> = <eta sym grad v, Psi> for all Psi."""
    ops = GridOperators(grid)
    eta = np.asarray(eta_cells).ravel()
    x, y = v.vx.ravel(), v.vy.ravel()
    exx = ops.Fx[DIRICHLET] @ x
    eyy = ops.Fy[DIRICHLET] @ y
    exy = 0.5 * (ops.NdyD @ x + ops.NdxD @ y)
    eta_fx = ops.Ax[NEUMANN] @ eta
    eta_fy = ops.Ay[NEUMANN] @ eta
    eta_n = ops.AnodeN @ eta
    r1 = 0.5 * (ops.Ax[NEUMANN].T @ (eta_fx * exx) - ops.Ay[NEUMANN].T @ (eta_fy * eyy))
    r2 = ops.AnodeN.T @ (eta_n * exy)
    nx, ny = grid.nx, grid.ny
    return r1.reshape(nx, ny), r2.reshape(nx, ny)


def _mobility_matrix(grid: Grid, m_cells):
    """Strong conservative operator div(m grad .) with Neumann closure."""
    ops = GridOperators(grid)
    m = np.asarray(m_cells).ravel()
    wx = sp.diags(ops.Ax[NEUMANN] @ m)
    wy = sp.diags(ops.Ay[NEUMANN] @ m)
    fx, fy = ops.Fx[NEUMANN], ops.Fy[NEUMANN]
    return (-(fx.T @ wx @ fx) - (fy.T @ wy @ fy)).tocsr()


def _jaumann_blocks(grid: Grid, omega):
    """Blocks of S -> S skw - skw S in rep coords: (s1,s2) -> 2w(-s2, s1)."""
    d = sp.diags(2.0 * np.asarray(omega).ravel())
    return d


# ---------------------------------------------------------------------------
# phase-field inner solve
# ---------------------------------------------------------------------------


def inner_solve_ch(phi_k: ScalarField, v: VectorField, family: PotentialFamily,
                   p: Params, h: float, cfg: SolverConfig,
                   phi_guess=None, mu_guess=None, active_guess=None, lu=None):
    """Solve the coupled transport / chemical-potential pair.

    Transport: (phi - phi_k)/h + v . grad phi_k = div(m(phi_k) grad mu)
    Potential: mu + kappa/eps (phi + phi_k)/2 = -eps lap phi + 1/eps W_kappa'(phi)

    Logarithmic mode runs Newton with a fraction-to-boundary step limit (the
    barrier keeps |phi| < 1+alpha); obstacle mode runs a primal-dual active
    set with the complementarity multiplier beta returned alongside.
    Returns (phi, mu, beta, info).
    """
    g = phi_k.grid
    ops = GridOperators(g)
    m = g.ncells
    eps, kap = p.epsilon, p.kappa
    m_k = p.m_spec(phi_k.values)
    lm = _mobility_matrix(g, m_k)
    lap = ops.lap_compact[NEUMANN]
    grad_phi_k = apply_gradient(phi_k, BC_NEUMANN)
    transport = (v.vx * grad_phi_k.vx + v.vy * grad_phi_k.vy).ravel()
    phik = phi_k.values.ravel()
    ident = sp.identity(m, format="csr")

    phi = (phi_guess.values if phi_guess is not None else phi_k.values).copy().ravel()
    mu = (mu_guess.values if mu_guess is not None else np.zeros(m)).copy().ravel()
    lu = lu if lu is not None else ReusableLU()

    def residuals(phi_v, mu_v, beta_v):
        r1 = (phi_v - phik) / h + transport - lm @ mu_v
        r2 = (mu_v + kap / eps * 0.5 * (phi_v + phik) + eps * (lap @ phi_v)
              - family.w_kappa_smooth_prime(phi_v) / eps - beta_v / eps)
        return r1, r2

    scale = 1.0 + norm_linf(phi_k) + float(np.max(np.abs(transport)))
    area = g.cell_area

    if not family.obstacle_mode:
        ones_b = np.full((m, 1), 1.0 / np.sqrt(m))
        lm_bordered = sp.bmat([[lm, ones_b], [ones_b.T, None]], format="csr")
        lm_lu = ReusableLU()

        def presolve_mu(phi_v, mu_v):
            # the transport row is linear in mu; correcting mu against it at
            # the frozen phase removes the dominant residual before Newton
            # starts (the zero-mean correction leaves mu's constant alone)
            r1 = (phi_v - phik) / h + transport - lm @ mu_v
            sol = lm_lu.solve(lm_bordered, np.concatenate([r1, [0.0]]))
            return mu_v + sol[:m]

        def newton_at(alpha_eff, phi_in, mu_in):
            fam_eff = family if alpha_eff == family.alpha else \
                PotentialFamily(alpha=alpha_eff, kappa=family.kappa, dw_kind=family.dw_kind)
            bound = (1.0 + alpha_eff) * (1.0 - 1e-12)
            # start strictly inside: a half-gap pullback keeps the barrier
            # Hessian bounded on the first iterate
            phi_c = np.clip(phi_in, -(1.0 + 0.5 * alpha_eff), 1.0 + 0.5 * alpha_eff)
            mu_c = presolve_mu(phi_c, mu_in)

            def res_eff(phi_v, mu_v):
                r1 = (phi_v - phik) / h + transport - lm @ mu_v
                r2 = (mu_v + kap / eps * 0.5 * (phi_v + phik) + eps * (lap @ phi_v)
                      - fam_eff.w_kappa_smooth_prime(phi_v) / eps)
                return r1, r2

            history = []
            for it in range(cfg.newton_max):
                r1, r2 = res_eff(phi_c, mu_c)
                rn = np.sqrt((np.sum(r1 ** 2) + np.sum(r2 ** 2)) * area)
                history.append(rn)
                if rn <= cfg.newton_tol * scale:
                    return phi_c, mu_c, it + 1, history
                wpp = fam_eff.w_kappa_smooth_second(phi_c) / eps
                j21 = (kap / (2.0 * eps)) * ident + eps * lap - sp.diags(wpp)
                jac = sp.bmat([[ident / h, -lm], [j21, ident]], format="csr")
                delta = lu.solve(jac, np.concatenate([-r1, -r2]))
                dphi, dmu = delta[:m], delta[m:]
                lam = 1.0
                up = dphi > 0
                dn = dphi < 0
                if np.any(up):
                    lam = min(lam, float(np.min((bound - phi_c[up]) / dphi[up])))
                if np.any(dn):
                    lam = min(lam, float(np.min((-bound - phi_c[dn]) / dphi[dn])))
                lam = min(1.0, 0.995 * lam) if lam < 1.0 / 0.995 else 1.0
                for _ in range(25):
                    phi_t = phi_c + lam * dphi
                    mu_t = mu_c + lam * dmu
                    r1t, r2t = res_eff(phi_t, mu_t)
                    rt = np.sqrt((np.sum(r1t ** 2) + np.sum(r2t ** 2)) * area)
                    if rt < rn or rt <= cfg.newton_tol * scale:
                        phi_c, mu_c = phi_t, mu_t
                        break
                    lam *= 0.5
                else:
                    return None, None, it + 1, history
            return None, None, cfg.newton_max, history

        phi_s, mu_s, iters, history = newton_at(family.alpha, phi, mu)
        if phi_s is None:
            # alpha-continuation: the barrier family itself provides the
            # homotopy, walking the singularity in from a softer potential
            alpha_path = []
            a = max(8.0 * family.alpha, 0.08)
            while a > family.alpha * 1.0001:
                alpha_path.append(a)
                a *= 0.35
            phi_c, mu_c = phi, mu
            for a_eff in alpha_path + [family.alpha]:
                phi_s, mu_s, iters, history = newton_at(a_eff, phi_c, mu_c)
                if phi_s is None:
                    raise StepError(
                        "phase-field Newton failed along the alpha continuation",
                        {"newton_history": history, "alpha_eff": a_eff})
                phi_c, mu_c = phi_s, mu_s
        phi, mu = phi_s, mu_s
        shape = (g.nx, g.ny)
        return (ScalarField(g, phi.reshape(shape)), ScalarField(g, mu.reshape(shape)),
                ScalarField(g, family.w_sing_prime(phi).reshape(shape)),
                {"iterations": iters, "residual": history[-1], "active": None})

    # obstacle mode: primal-dual active set on beta in dI_[-1,1](phi)
    c_pdas = 1.0
    active_p = np.zeros(m, dtype=bool) if active_guess is None else active_guess[0].copy()
    active_m = np.zeros(m, dtype=bool) if active_guess is None else active_guess[1].copy()
    phi = np.clip(phi, -1.0, 1.0)
    beta = np.zeros(m)
    history = []
    for it in range(cfg.pdas_max):
        inactive = ~(active_p | active_m)
        mask_in = sp.diags(inactive.astype(float))
        mask_act = sp.diags((~inactive).astype(float))
        wpp = family.w_kappa_smooth_second(phi) / eps
        j21 = (kap / (2.0 * eps)) * ident + eps * lap - sp.diags(wpp)
        # active rows pin phi to +-1 (in the mu-free row slot)
        j21_eff = mask_in @ j21 + mask_act
        j22_eff = mask_in @ ident
        target = np.where(active_p, 1.0, np.where(active_m, -1.0, 0.0))
        r1, r2 = residuals(phi, mu, np.zeros(m))
        r2_eff = np.where(inactive, r2, phi - target)
        jac = sp.bmat([[ident / h, -lm], [j21_eff, j22_eff]], format="csr")
        delta = lu.solve(jac, np.concatenate([-r1, -r2_eff]))
        phi = phi + delta[:m]
        mu = mu + delta[m:]
        # multiplier from the chemical-potential relation on the active set
        r1, r2 = residuals(phi, mu, np.zeros(m))
        beta = np.where(inactive, 0.0, eps * r2)
        sets = (active_p.copy(), active_m.copy())
        active_p = beta + c_pdas * (phi - 1.0) > 0.0
        active_m = beta + c_pdas * (phi + 1.0) < 0.0
        r2_full = r2 - beta / eps
        rn = np.sqrt((np.sum(r1 ** 2) + np.sum(r2_full ** 2)) * area)
        history.append(rn)
        stable = np.array_equal(active_p, sets[0]) and np.array_equal(active_m, sets[1])
        if stable and rn <= cfg.newton_tol * scale * 10.0:
            break
    else:
        raise StepError("primal-dual active set did not converge",
                        {"pdas_history": history})
    phi = np.where(active_p, 1.0, np.where(active_m, -1.0, phi))
    shape = (g.nx, g.ny)
    return (ScalarField(g, phi.reshape(shape)), ScalarField(g, mu.reshape(shape)),
            ScalarField(g, beta.reshape(shape)),
            {"iterations": it + 1, "residual": history[-1],
             "active": (active_p, active_m)})


# ---------------------------------------------------------------------------
# stress inner solve
# ---------------------------------------------------------------------------


def _solve_stress(S_k: SymTensorField, v: VectorField, phi_k: ScalarField,
                  p: Params, model: PlasticModel, h: float, cfg: SolverConfig,
                  z_warm=None, lu=None):
    """Douglas-Rachford alternation for the stress evolution inclusion.

    K S + xi = S_k/h + eta(phi_k) sym grad v,  xi in dP(phi_k; S) pointwise,
    with K = I/h + skew advection + Jaumann coupling - gamma lap.  The linear
    resolvent (I + tau K)^{-1} is one sparse factorization (tau = h); the
    plastic resolvent is the closed-form prox.  Returns (S, xi, z, info).
    """
    g = S_k.grid
    ops = GridOperators(g)
    m = g.ncells
    eta_k = p.eta_spec(phi_k.values)
    conv = _conv_skew_matrix(g, v, NEUMANN)
    _, skw = sym_skw_split(v)
    jau = _jaumann_blocks(g, skw.omega)
    lapn = ops.lap_compact[NEUMANN]
    kdiag = sp.identity(m) / h - p.gamma * lapn + conv
    K = sp.bmat([[kdiag, -jau], [jau, kdiag]], format="csr")
    r1, r2 = _strain_rhs_for_stress(g, v, eta_k)
    b = np.concatenate([S_k.s1.ravel() / h + r1.ravel(), S_k.s2.ravel() / h + r2.ravel()])

    tau = h
    lu = lu if lu is not None else ReusableLU()
    mlin = (sp.identity(2 * m) + tau * K).tocsr()
    z = b.copy() * tau if z_warm is None else z_warm.copy()
    bscale = 1.0 + np.sqrt(2.0 * np.sum(b ** 2) * g.cell_area)

    def prox_vec(w):
        s1, s2 = prox_plastic(phi_k.values.ravel(), w[:m], w[m:], tau, model)
        return np.concatenate([s1, s2])

    info = {}
    for it in range(cfg.dr_max):
        x = lu.solve(mlin, z + tau * b)
        if it == 0 and lu.last_refine_count >= 2:
            # the cached factorization drifted; this matrix is reused for the
            # whole alternation, so an exact refactor pays for itself
            lu.factorize(mlin)
            x = lu.solve(mlin, z + tau * b)
        w = 2.0 * x - z
        y = prox_vec(w)
        z = z + (y - x)
        xi = (w - y) / tau
        resid = K @ y + xi - b
        rn = np.sqrt(2.0 * np.sum(resid ** 2) * g.cell_area)
        if rn <= cfg.dr_tol * bscale:
            info = {"iterations": it + 1, "residual": rn}
            break
    else:
        xi = (w - y) / tau
        resid = K @ y + xi - b
        rn = np.sqrt(2.0 * np.sum(resid ** 2) * g.cell_area)
        if rn > 1e3 * cfg.dr_tol * bscale:
            raise StepError("stress alternation did not converge",
                            {"dr_residual": rn})
        info = {"iterations": cfg.dr_max, "residual": rn}
    shape = (g.nx, g.ny)
    S = SymTensorField(g, y[:m].reshape(shape), y[m:].reshape(shape))
    xi_f = SymTensorField(g, xi[:m].reshape(shape), xi[m:].reshape(shape))
    return S, xi_f, z, info


# ---------------------------------------------------------------------------
# momentum saddle solve
# ---------------------------------------------------------------------------


def _solve_momentum(v_prev: VectorField, state_k: SimState, S_new: SymTensorField,
                    phi_new: ScalarField, mu_new: ScalarField, f_step: VectorField,
                    p: Params, h: float, flux_mode: str, lu=None):
    """Direct saddle solve of the discrete momentum balance.

    Picard linearization: the advecting mass flux rho_k v_prev + J uses the
    previous outer iterate; the unknown is advected.  The pressure is the
    Lagrange multiplier of the centered divergence constraint, bordered by
    the constant mode.
    """
    g = v_prev.grid
    ops = GridOperators(g)
    m = g.ncells
    w = g.cell_area
    phi_k = state_k.phi
    rho_k = density_values(phi_k.values, p)
    rho_new = density_values(phi_new.values, p)
    nu_k = p.nu_spec(phi_k.values)
    eta_k = p.eta_spec(phi_k.values)
    grad_mu = apply_gradient(mu_new, BC_NEUMANN)
    J = mass_flux(phi_k, grad_mu, p, flux_mode)
    m_adv = VectorField(g, rho_k * v_prev.vx + J.vx, rho_k * v_prev.vy + J.vy)

    conv = _conv_skew_matrix(g, m_adv, DIRICHLET)
    bvisc = _viscous_matrix(g, nu_k)
    diag_mass = sp.diags(np.tile((rho_new / h - 0.5 * (rho_new - rho_k) / h).ravel(), 2))
    zero = sp.csr_matrix((m, m))
    a_mat = diag_mass + sp.bmat([[conv, zero], [zero, conv]]) + bvisc / w

    gp = sp.vstack([ops.Dx[NEUMANN], ops.Dy[NEUMANN]])
    div = sp.hstack([ops.Dx[DIRICHLET], ops.Dy[DIRICHLET]])
    ones = np.full((m, 1), 1.0 / np.sqrt(m))
    saddle = sp.bmat(
        [[a_mat, gp, None], [div, None, ones], [None, ones.T, None]], format="csr"
    )

    grad_phi_k = apply_gradient(phi_k, BC_NEUMANN)
    b = np.concatenate([
        (rho_k * state_k.v.vx / h + f_step.vx + mu_new.values * grad_phi_k.vx).ravel(),
        (rho_k * state_k.v.vy / h + f_step.vy + mu_new.values * grad_phi_k.vy).ravel(),
    ])
    b = b - _stress_force_vectors(g, S_new, eta_k) / w
    rhs = np.concatenate([b, np.zeros(m + 1)])
    lu = lu if lu is not None else ReusableLU()
    sol = lu.solve(saddle, rhs)
    v = VectorField.from_stacked(g, sol[: 2 * m])
    pfield = ScalarField(g, sol[2 * m : 3 * m].reshape(g.nx, g.ny))
    return v, pfield, (a_mat, gp, b)


def _momentum_residual(v: VectorField, a_mat, gp, b, grid: Grid):
    """L2 norm of the solenoidal part of the strong momentum residual."""
    ops = GridOperators(grid)
    r = a_mat @ v.stacked() - b
    m = grid.ncells
    rfield = VectorField.from_stacked(grid, r)
    rhs = apply_divergence(rfield, BC_VELOCITY).values.ravel()
    q = ops.leray_pressure(rhs)
    rproj = r - gp @ q
    return float(np.sqrt(np.sum(rproj ** 2) * grid.cell_area))


# ---------------------------------------------------------------------------
# the step and the driver
# ---------------------------------------------------------------------------


def initial_mu(phi0: ScalarField, family: PotentialFamily, p: Params) -> ScalarField:
    """Chemical potential consistent with the potential relation at t=0.

    Not part of the given data; computed from the stationary form of the
    chemical-potential relation (zero obstacle multiplier selection) for
    reporting and as the first solver guess.
    """
    from geoflow.grid import apply_laplacian
    from geoflow.potentials import w_dw_prime

    lap = apply_laplacian(phi0, BC_NEUMANN)
    if family.obstacle_mode:
        smooth = w_dw_prime(phi0.values)
    else:
        smooth = family.w_smooth_prime(phi0.values)
    return ScalarField(phi0.grid, -p.epsilon * lap.values + smooth / p.epsilon)


def make_initial_state(grid: Grid, phi0: ScalarField, family: PotentialFamily,
                       p: Params, v0: VectorField | None = None,
                       S0: SymTensorField | None = None) -> SimState:
    v0 = VectorField.zero(grid) if v0 is None else v0
    S0 = SymTensorField.zero(grid) if S0 is None else S0
    mu0 = initial_mu(phi0, family, p)
    return SimState(v0, S0, phi0, mu0, ScalarField.constant(grid, 0.0), 0.0)


def step(state_k: SimState, p: Params, family: PotentialFamily, h: float,
         f_step: VectorField, cfg: SolverConfig = SolverConfig(),
         flux_mode: str = "discrete-paper", warm=None):
    """One implicit step; returns (state, report, beta, xi, warm)."""
    t_start = _time.perf_counter()
    g = state_k.phi.grid
    model = PlasticModel(p.a_spec, p.sigma_yield)
    phi_k = state_k.phi
    m_k = p.m_spec(phi_k.values)
    nu_k = p.nu_spec(phi_k.values)
    eta_k = p.eta_spec(phi_k.values)
    lm = _mobility_matrix(g, m_k)
    lapn = GridOperators(g).lap_compact[NEUMANN]
    grad_phi_k = apply_gradient(phi_k, BC_NEUMANN)

    v = state_k.v.copy()
    phi_new, mu_new, beta_new = state_k.phi, state_k.mu, None
    S_new, xi_new = state_k.S, None
    p_new = state_k.p
    warm = warm or {}
    z_warm = warm.get("stress_z")
    active = warm.get("active")
    lus = warm.get("lus") or {
        "ch": ReusableLU(),
        "stress": ReusableLU(),
        "momentum": ReusableLU(),
    }

    res_hist = []
    dv_prev = np.inf
    for outer in range(cfg.max_outer):
        phi_new, mu_new, beta_new, ch_info = inner_solve_ch(
            phi_k, v, family, p, h, cfg,
            phi_guess=phi_new, mu_guess=mu_new, active_guess=active,
            lu=lus["ch"])
        if family.obstacle_mode:
            active = ch_info["active"]
        S_new, xi_new, z_warm, dr_info = _solve_stress(
            state_k.S, v, phi_k, p, model, h, cfg, z_warm=z_warm,
            lu=lus["stress"])
        v_saddle, p_new, mom_parts = _solve_momentum(
            v, state_k, S_new, phi_new, mu_new, f_step, p, h, flux_mode,
            lu=lus["momentum"])
        dv = norm_l2(VectorField(g, v_saddle.vx - v.vx, v_saddle.vy - v.vy))
        vscale = 1.0 + norm_l2(v_saddle)
        # robustness damping: engage the 1/2 relaxation only while the
        # Picard update is growing; a contracting iteration takes full steps
        if dv > dv_prev and dv / vscale > cfg.damping_release:
            damp = cfg.damping
        else:
            damp = 1.0
        dv_prev = dv
        v = VectorField(g, damp * v_saddle.vx + (1 - damp) * v.vx,
                        damp * v_saddle.vy + (1 - damp) * v.vy)

        # joint residuals with the current velocity
        transport = v.vx * grad_phi_k.vx + v.vy * grad_phi_k.vy
        r_ch = ((phi_new.values - phi_k.values) / h + transport).ravel() - lm @ mu_new.values.ravel()
        r_gt = (mu_new.values.ravel()
                + p.kappa / p.epsilon * 0.5 * (phi_new.values + phi_k.values).ravel()
                + p.epsilon * (lapn @ phi_new.values.ravel())
                - family.w_kappa_smooth_prime(phi_new.values.ravel()) / p.epsilon
                - (beta_new.values.ravel() if family.obstacle_mode else 0.0) / p.epsilon)
        r_mom = _momentum_residual(v, *mom_parts, g)
        conv_s = _conv_skew_matrix(g, v, NEUMANN)
        _, skw = sym_skw_split(v)
        jau = _jaumann_blocks(g, skw.omega)
        m = g.ncells
        kdiag = sp.identity(m) / h - p.gamma * lapn + conv_s
        svec = S_new.stacked()
        r1s, r2s = _strain_rhs_for_stress(g, v, eta_k)
        bs = np.concatenate([state_k.S.s1.ravel() / h + r1s.ravel(),
                             state_k.S.s2.ravel() / h + r2s.ravel()])
        rs = np.concatenate([kdiag @ svec[:m] - jau @ svec[m:],
                             jau @ svec[:m] + kdiag @ svec[m:]]) + xi_new.stacked() - bs
        area = g.cell_area
        resid = {
            "momentum": r_mom,
            "stress": float(np.sqrt(2.0 * np.sum(rs ** 2) * area)),
            "ch_transport": float(np.sqrt(np.sum(r_ch ** 2) * area)),
            "gibbs_thomson": float(np.sqrt(np.sum(r_gt ** 2) * area)),
        }
        res_hist.append(resid)
        scale = 1.0 + norm_l2(v) + norm_l2(S_new) + norm_l2(mu_new)
        if max(resid.values()) <= cfg.outer_tol * scale:
            break
    else:
        raise StepError("outer fixed point did not converge", {"history": res_hist})

    state_new = SimState(v, S_new, phi_new, mu_new, p_new, state_k.t + h)

    e0 = energy_mod.total_energy(state_k.v, state_k.S, state_k.phi, family, p)
    e1 = energy_mod.total_energy(v, S_new, phi_new, family, p)
    diss = energy_mod.step_dissipations(v, S_new, mu_new, nu_k, m_k, p)
    pair = inner_product(xi_new, S_new)
    fwork = inner_product(f_step, v)
    slack = (e0["total"] - e1["total"] + h * fwork
             - h * (diss["viscous"] + diss["gamma"] + diss["mixing"] + pair))
    report = StepReport(
        outer_iterations=outer + 1,
        residuals=res_hist[-1],
        dissipation=diss,
        plastic_pairing=pair,
        f_work=fwork,
        energy_before=e0["total"],
        energy_after=e1["total"],
        ede_slack=slack,
        wall_time=_time.perf_counter() - t_start,
    )
    warm_out = {"stress_z": z_warm, "active": active, "lus": lus}
    return state_new, report, beta_new, xi_new, warm_out


def run(initial: SimState, p: Params, family: PotentialFamily, tg: TimeGrid,
        forcing: Forcing | None = None, cfg: SolverConfig = SolverConfig(),
        flux_mode: str = "discrete-paper") -> Trajectory:
    """March N steps; on failure return the partial trajectory flagged
    incomplete."""
    g = initial.phi.grid
    forcing = forcing or Forcing(g)
    states = [initial.copy()]
    reports, betas, xis, fsteps = [], [], [], []
    warm = None
    complete = True
    h = tg.h
    for k in range(tg.N):
        f_step = forcing.step_average(states[-1].t, h)
        try:
            s, rep, beta, xi, warm = step(states[-1], p, family, h, f_step,
                                          cfg, flux_mode, warm)
        except StepError:
            complete = False
            break
        states.append(s)
        reports.append(rep)
        betas.append(beta)
        xis.append(xi)
        fsteps.append(f_step)
    return Trajectory(g, p, family, tg, states, reports, betas, xis, fsteps,
                      complete=complete, flux_mode=flux_mode)
