"""Structured rectangular grid, discrete fields and the discrete operators.

Cell-centered collocated layout on a rectangle [0,lx] x [0,ly]: cell (i,j)
has center ((i+1/2)hx, (j+1/2)hy), arrays are indexed [i, j] and flattened
in C order (idx = i*ny + j).

Two families of difference operators coexist on purpose:

* centered 2h-stencil gradient/divergence (``apply_gradient``,
  ``apply_divergence``) used in advection terms and weak-form evaluations;
  with the ghost conventions below they satisfy *exact* discrete
  integration by parts for (Neumann scalar, Dirichlet vector) pairs;
* compact face-based gradients (``face_gradients``) whose quadratic forms
  back the Laplacian, the H1 norms and the energy functionals, so that
  testing the compact Laplacian against a field telescopes exactly.

Ghost conventions (one layer, mirrored):
  Dirichlet  ghost = -first interior cell   (value 0 at the wall face)
  Neumann    ghost = +first interior cell   (zero normal difference)
  Flux       the component differentiated along its own direction is odd;
             only that component ever needs a ghost in the skew advection.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryCondition:
    """Homogeneous boundary condition tag for a field role."""

    kind: str

    def __post_init__(self):
        if self.kind not in (DIRICHLET, NEUMANN):
            raise GridError(f"unknown boundary condition kind {self.kind!r}")


BC_VELOCITY = BoundaryCondition(DIRICHLET)
BC_NEUMANN = BoundaryCondition(NEUMANN)


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid of nx-by-ny cells on [0,lx] x [0,ly]."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise GridError("nx, ny must be >= 4")
        if self.lx <= 0 or self.ly <= 0:
            raise GridError("lx, ly must be positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def dim(self) -> int:
        return 2

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def measure(self) -> float:
        return self.lx * self.ly

    def cell_centers(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def zeros(self):
        return np.zeros((self.nx, self.ny))


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def _check_shape(grid, values):
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.nx, grid.ny):
        raise GridError(f"field shape {values.shape} != grid {(grid.nx, grid.ny)}")
    return values


def _require_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            bad = np.argwhere(~np.isfinite(a))[0]
            raise GridError(f"non-finite value in {name} at cell {tuple(bad)}")


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = _check_shape(self.grid, self.values)

    def copy(self):
        return ScalarField(self.grid, self.values.copy())

    @classmethod
    def from_function(cls, grid, f):
        X, Y = grid.cell_centers()
        return cls(grid, f(X, Y))

    @classmethod
    def constant(cls, grid, c):
        return cls(grid, np.full((grid.nx, grid.ny), float(c)))


@dataclass
class VectorField:
    grid: Grid
    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        self.vx = _check_shape(self.grid, self.vx)
        self.vy = _check_shape(self.grid, self.vy)

    def copy(self):
        return VectorField(self.grid, self.vx.copy(), self.vy.copy())

    @classmethod
    def zero(cls, grid):
        return cls(grid, grid.zeros(), grid.zeros())

    @classmethod
    def from_functions(cls, grid, fx, fy):
        X, Y = grid.cell_centers()
        return cls(grid, fx(X, Y), fy(X, Y))

    def stacked(self):
        return np.concatenate([self.vx.ravel(), self.vy.ravel()])

    @classmethod
    def from_stacked(cls, grid, vec):
        m = grid.ncells
        return cls(grid, vec[:m].reshape(grid.nx, grid.ny), vec[m:].reshape(grid.nx, grid.ny))


@dataclass
class SymTensorField:
    """Symmetric trace-free 2x2 tensor field, stored as (s11, s12).

    The full matrix [[s11, s12], [s12, -s11]] is reconstructed on demand;
    symmetry and zero trace hold by construction.  Frobenius products carry
    the factor 2: A:B = 2*(a1*b1 + a2*b2).
    """

    grid: Grid
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        self.s1 = _check_shape(self.grid, self.s1)
        self.s2 = _check_shape(self.grid, self.s2)

    def copy(self):
        return SymTensorField(self.grid, self.s1.copy(), self.s2.copy())

    @classmethod
    def zero(cls, grid):
        return cls(grid, grid.zeros(), grid.zeros())

    def to_matrix(self):
        m = np.empty((self.grid.nx, self.grid.ny, 2, 2))
        m[..., 0, 0] = self.s1
        m[..., 0, 1] = self.s2
        m[..., 1, 0] = self.s2
        m[..., 1, 1] = -self.s1
        return m

    def frobenius(self):
        """Pointwise Frobenius norm |S|."""
        return np.sqrt(2.0 * (self.s1 ** 2 + self.s2 ** 2))

    def stacked(self):
        return np.concatenate([self.s1.ravel(), self.s2.ravel()])

    @classmethod
    def from_stacked(cls, grid, vec):
        m = grid.ncells
        return cls(grid, vec[:m].reshape(grid.nx, grid.ny), vec[m:].reshape(grid.nx, grid.ny))


@dataclass
class SymMatrixField:
    """Symmetric 2x2 tensor field with trace, stored as (a11, a12, a22)."""

    grid: Grid
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray

    def trace(self):
        return self.a11 + self.a22

    def deviatoric(self) -> SymTensorField:
        return SymTensorField(self.grid, 0.5 * (self.a11 - self.a22), self.a12.copy())


@dataclass
class SkewPart:
    """Skew-symmetric part of a 2D velocity gradient, one scalar omega.

    Reconstructs [[0, omega], [-omega, 0]] with omega = (d_y vx - d_x vy)/2.
    """

    grid: Grid
    omega: np.ndarray

    def to_matrix(self):
        m = np.zeros((self.grid.nx, self.grid.ny, 2, 2))
        m[..., 0, 1] = self.omega
        m[..., 1, 0] = -self.omega
        return m


# ---------------------------------------------------------------------------
# ghost padding and centered operators
# ---------------------------------------------------------------------------


def pad_ghost(values, bc_x: str, bc_y: str):
    """Return (nx+2, ny+2) array with one mirrored ghost layer per side."""
    sx = -1.0 if bc_x == DIRICHLET else 1.0
    sy = -1.0 if bc_y == DIRICHLET else 1.0
    nx, ny = values.shape
    out = np.empty((nx + 2, ny + 2))
    out[1:-1, 1:-1] = values
    out[0, 1:-1] = sx * values[0, :]
    out[-1, 1:-1] = sx * values[-1, :]
    out[:, 0] = sy * out[:, 1]
    out[:, -1] = sy * out[:, -2]
    return out


def _ddx(padded, hx):
    return (padded[2:, 1:-1] - padded[:-2, 1:-1]) / (2.0 * hx)


def _ddy(padded, hy):
    return (padded[1:-1, 2:] - padded[1:-1, :-2]) / (2.0 * hy)


def apply_gradient(u: ScalarField, bc: BoundaryCondition) -> VectorField:
    """Second-order centered gradient of a scalar field."""
    _require_finite("apply_gradient input", u.values)
    g = u.grid
    p = pad_ghost(u.values, bc.kind, bc.kind)
    return VectorField(g, _ddx(p, g.hx), _ddy(p, g.hy))


def apply_divergence(w, bc: BoundaryCondition):
    """Centered divergence of a vector field (-> scalar) or a symmetric
    trace-free tensor field (-> vector)."""
    g = w.grid
    if isinstance(w, VectorField):
        _require_finite("apply_divergence input", w.vx, w.vy)
        px = pad_ghost(w.vx, bc.kind, bc.kind)
        py = pad_ghost(w.vy, bc.kind, bc.kind)
        return ScalarField(g, _ddx(px, g.hx) + _ddy(py, g.hy))
    if isinstance(w, SymTensorField):
        _require_finite("apply_divergence input", w.s1, w.s2)
        p1 = pad_ghost(w.s1, bc.kind, bc.kind)
        p2 = pad_ghost(w.s2, bc.kind, bc.kind)
        divx = _ddx(p1, g.hx) + _ddy(p2, g.hy)
        divy = _ddx(p2, g.hx) - _ddy(p1, g.hy)
        return VectorField(g, divx, divy)
    raise GridError(f"cannot take divergence of {type(w).__name__}")


def face_gradients(u_values, grid: Grid, bc: BoundaryCondition):
    """Compact one-sided differences at x-faces and y-faces.

    Returns (gx, gy) with shapes (nx+1, ny) and (nx, ny+1); wall faces use
    the ghost convention (0 for Neumann, +-2u/h for Dirichlet).
    """
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    gx = np.empty((nx + 1, ny))
    gy = np.empty((nx, ny + 1))
    gx[1:-1, :] = (u_values[1:, :] - u_values[:-1, :]) / hx
    gy[:, 1:-1] = (u_values[:, 1:] - u_values[:, :-1]) / hy
    if bc.kind == NEUMANN:
        gx[0, :] = 0.0
        gx[-1, :] = 0.0
        gy[:, 0] = 0.0
        gy[:, -1] = 0.0
    else:
        gx[0, :] = 2.0 * u_values[0, :] / hx
        gx[-1, :] = -2.0 * u_values[-1, :] / hx
        gy[:, 0] = 2.0 * u_values[:, 0] / hy
        gy[:, -1] = -2.0 * u_values[:, -1] / hy
    return gx, gy


def face_grad_sq(u_values, grid: Grid, bc: BoundaryCondition) -> float:
    """Integral of |grad u|^2 by the face quadrature (each face owns hx*hy)."""
    gx, gy = face_gradients(u_values, grid, bc)
    return (np.sum(gx ** 2) + np.sum(gy ** 2)) * grid.cell_area


def apply_laplacian(u: ScalarField, bc: BoundaryCondition) -> ScalarField:
    """Compact 5-point Laplacian, the divergence of the face gradients."""
    _require_finite("apply_laplacian input", u.values)
    g = u.grid
    gx, gy = face_gradients(u.values, g, bc)
    out = (gx[1:, :] - gx[:-1, :]) / g.hx + (gy[:, 1:] - gy[:, :-1]) / g.hy
    return ScalarField(g, out)


def sym_skw_split(v: VectorField, bc: BoundaryCondition = BC_VELOCITY):
    """Split the centered velocity gradient into symmetric and skew parts.

    Their sum reconstructs the full discrete gradient exactly; the skew part
    is the single rotation scalar omega = (d_y vx - d_x vy)/2.
    """
    g = v.grid
    px = pad_ghost(v.vx, bc.kind, bc.kind)
    py = pad_ghost(v.vy, bc.kind, bc.kind)
    dxvx, dyvx = _ddx(px, g.hx), _ddy(px, g.hy)
    dxvy, dyvy = _ddx(py, g.hx), _ddy(py, g.hy)
    sym = SymMatrixField(g, dxvx, 0.5 * (dyvx + dxvy), dyvy)
    skw = SkewPart(g, 0.5 * (dyvx - dxvy))
    return sym, skw


def perp_gradient(psi: ScalarField) -> VectorField:
    """Discrete perpendicular gradient (d_y psi, -d_x psi).

    For stream functions supported away from the boundary the centered
    differences commute, so the result is divergence-free to round-off.
    """
    g = psi.grid
    p = pad_ghost(psi.values, NEUMANN, NEUMANN)
    return VectorField(g, _ddy(p, g.hy), -_ddx(p, g.hx))


# ---------------------------------------------------------------------------
# quadrature, inner products, norms
# ---------------------------------------------------------------------------


def mean_value(u: ScalarField) -> float:
    return float(np.sum(u.values)) * u.grid.cell_area / u.grid.measure


def inner_product(a, b) -> float:
    """L2 inner product by the midpoint rule; tensor fields use the full
    Frobenius pairing (factor 2 on the stored independent entries)."""
    if type(a) is not type(b):
        raise GridError("inner_product requires fields of the same kind")
    w = a.grid.cell_area
    if isinstance(a, ScalarField):
        return float(np.sum(a.values * b.values)) * w
    if isinstance(a, VectorField):
        return float(np.sum(a.vx * b.vx) + np.sum(a.vy * b.vy)) * w
    if isinstance(a, SymTensorField):
        return 2.0 * float(np.sum(a.s1 * b.s1) + np.sum(a.s2 * b.s2)) * w
    if isinstance(a, SymMatrixField):
        return float(
            np.sum(a.a11 * b.a11) + 2.0 * np.sum(a.a12 * b.a12) + np.sum(a.a22 * b.a22)
        ) * w
    raise GridError(f"no inner product for {type(a).__name__}")


def norm_l2(a) -> float:
    return float(np.sqrt(max(inner_product(a, a), 0.0)))


def norm_linf(a) -> float:
    if isinstance(a, ScalarField):
        return float(np.max(np.abs(a.values)))
    if isinstance(a, VectorField):
        return float(np.max(np.hypot(a.vx, a.vy)))
    if isinstance(a, SymTensorField):
        return float(np.max(a.frobenius()))
    raise GridError(f"no sup norm for {type(a).__name__}")


def norm_h1(a, bc: BoundaryCondition) -> float:
    """Face-gradient H1 norm, consistent with the compact Laplacian forms."""
    g = a.grid
    if isinstance(a, ScalarField):
        comps = [a.values]
    elif isinstance(a, VectorField):
        comps = [a.vx, a.vy]
    elif isinstance(a, SymTensorField):
        # Frobenius doubling for the two stored entries.
        sq = 2.0 * sum(
            face_grad_sq(c, g, bc) + float(np.sum(c ** 2)) * g.cell_area
            for c in (a.s1, a.s2)
        )
        return float(np.sqrt(sq))
    else:
        raise GridError(f"no H1 norm for {type(a).__name__}")
    sq = sum(face_grad_sq(c, g, bc) + float(np.sum(c ** 2)) * g.cell_area for c in comps)
    return float(np.sqrt(sq))


# ---------------------------------------------------------------------------
# skew-symmetric (energy-neutral) advection
# ---------------------------------------------------------------------------


def _conv_skew_component(u_values, flux: VectorField, bc_u: str, grid: Grid):
    """0.5*(m . grad u + div(u m)) for one advected scalar component.

    The conservative half differentiates the cell product u*m_d along d with
    the product ghost u_ghost*m_ghost; m_d is odd in its own direction
    (zero normal flux through the walls), which makes the telescoping in the
    pairing <conv, u> exact for both Dirichlet and Neumann advected fields.
    """
    hx, hy = grid.hx, grid.hy
    su = -1.0 if bc_u == DIRICHLET else 1.0
    up = pad_ghost(u_values, bc_u, bc_u)
    adv = flux.vx * _ddx(up, hx) + flux.vy * _ddy(up, hy)

    # product fields with ghosts: u ghost mirrored by su, m_d odd along d
    px = np.empty((grid.nx + 2, grid.ny))
    px[1:-1, :] = u_values * flux.vx
    px[0, :] = (su * u_values[0, :]) * (-flux.vx[0, :])
    px[-1, :] = (su * u_values[-1, :]) * (-flux.vx[-1, :])
    py = np.empty((grid.nx, grid.ny + 2))
    py[:, 1:-1] = u_values * flux.vy
    py[:, 0] = (su * u_values[:, 0]) * (-flux.vy[:, 0])
    py[:, -1] = (su * u_values[:, -1]) * (-flux.vy[:, -1])
    cons = (px[2:, :] - px[:-2, :]) / (2.0 * hx) + (py[:, 2:] - py[:, :-2]) / (2.0 * hy)
    return 0.5 * (adv + cons)


def conv_skew(advected, flux: VectorField):
    """Energy-neutral advection 0.5*(m . grad u + div(u x m)).

    <conv_skew(u; m), u> = 0 to round-off for any flux m, which is what makes
    the discrete energy estimate hold without a convection contribution.
    """
    g = advected.grid
    if isinstance(advected, ScalarField):
        return ScalarField(g, _conv_skew_component(advected.values, flux, NEUMANN, g))
    if isinstance(advected, VectorField):
        return VectorField(
            g,
            _conv_skew_component(advected.vx, flux, DIRICHLET, g),
            _conv_skew_component(advected.vy, flux, DIRICHLET, g),
        )
    if isinstance(advected, SymTensorField):
        return SymTensorField(
            g,
            _conv_skew_component(advected.s1, flux, NEUMANN, g),
            _conv_skew_component(advected.s2, flux, NEUMANN, g),
        )
    raise GridError(f"cannot advect {type(advected).__name__}")


# ---------------------------------------------------------------------------
# sparse operator builders (cached per grid)
# ---------------------------------------------------------------------------


def _d_centered_1d(n, h, bc):
    rows, cols, vals = [], [], []
    c = 1.0 / (2.0 * h)
    for i in range(n):
        for j, v in ((i - 1, -c), (i + 1, c)):
            if 0 <= j < n:
                rows.append(i)
                cols.append(j)
                vals.append(v)
            else:
                # fold the ghost back onto the adjacent interior cell
                s = -1.0 if bc == DIRICHLET else 1.0
                k = 0 if j < 0 else n - 1
                rows.append(i)
                cols.append(k)
                vals.append(v * s)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _d_face_1d(n, h, bc):
    """(n+1) x n one-sided face differences with wall closure."""
    rows, cols, vals = [], [], []
    for k in range(1, n):
        rows += [k, k]
        cols += [k - 1, k]
        vals += [-1.0 / h, 1.0 / h]
    if bc == DIRICHLET:
        rows += [0, n]
        cols += [0, n - 1]
        vals += [2.0 / h, -2.0 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def _avg_face_1d(n, bc):
    rows, cols, vals = [], [], []
    for k in range(1, n):
        rows += [k, k]
        cols += [k - 1, k]
        vals += [0.5, 0.5]
    if bc == NEUMANN:
        rows += [0, n]
        cols += [0, n - 1]
        vals += [1.0, 1.0]
    # Dirichlet wall average is zero by the odd mirror
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


class GridOperators:
    """Sparse matrices for one grid, built lazily and cached.

    Scalar dof ordering is the C-order flattening of the (nx, ny) arrays.
    """

    _cache: dict = {}

    def __new__(cls, grid: Grid):
        key = (grid.nx, grid.ny, grid.lx, grid.ly)
        if key not in cls._cache:
            obj = super().__new__(cls)
            obj._init(grid)
            cls._cache[key] = obj
        return cls._cache[key]

    def _init(self, grid: Grid):
        self.grid = grid
        nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
        ix, iy = sp.identity(nx, format="csr"), sp.identity(ny, format="csr")
        self.Dx = {
            b: sp.kron(_d_centered_1d(nx, hx, b), iy, format="csr") for b in (DIRICHLET, NEUMANN)
        }
        self.Dy = {
            b: sp.kron(ix, _d_centered_1d(ny, hy, b), format="csr") for b in (DIRICHLET, NEUMANN)
        }
        self.Fx = {
            b: sp.kron(_d_face_1d(nx, hx, b), iy, format="csr") for b in (DIRICHLET, NEUMANN)
        }
        self.Fy = {
            b: sp.kron(ix, _d_face_1d(ny, hy, b), format="csr") for b in (DIRICHLET, NEUMANN)
        }
        self.Ax = {b: sp.kron(_avg_face_1d(nx, b), iy, format="csr") for b in (DIRICHLET, NEUMANN)}
        self.Ay = {b: sp.kron(ix, _avg_face_1d(ny, b), format="csr") for b in (DIRICHLET, NEUMANN)}
        # node operators: d_y u at the (nx+1)(ny+1) cell corners, etc.
        self.NdyD = sp.kron(_avg_face_1d(nx, DIRICHLET), _d_face_1d(ny, hy, DIRICHLET), format="csr")
        self.NdxD = sp.kron(_d_face_1d(nx, hx, DIRICHLET), _avg_face_1d(ny, DIRICHLET), format="csr")
        self.AnodeN = sp.kron(_avg_face_1d(nx, NEUMANN), _avg_face_1d(ny, NEUMANN), format="csr")
        # compact Laplacians (strong form): -(Fx^T Fx + Fy^T Fy)
        self.lap_compact = {
            b: (-(self.Fx[b].T @ self.Fx[b]) - (self.Fy[b].T @ self.Fy[b])).tocsr()
            for b in (DIRICHLET, NEUMANN)
        }
        self._leray = None

    # -- Leray projection -------------------------------------------------

    def _leray_solver(self):
        if self._leray is None:
            g = self.grid
            gp = sp.vstack([self.Dx[NEUMANN], self.Dy[NEUMANN]]).tocsr()  # pressure gradient
            div = sp.hstack([self.Dx[DIRICHLET], self.Dy[DIRICHLET]]).tocsr()
            lw = (div @ gp).tocsr()  # wide Laplacian div_c(grad_c .)
            m = g.ncells
            ones = np.full((m, 1), 1.0 / np.sqrt(m))
            bordered = sp.bmat([[lw, ones], [ones.T, None]], format="csc")
            self._leray = (spla.splu(bordered), gp, div, m)
        return self._leray

    def leray_pressure(self, rhs_flat):
        lu, gp, div, m = self._leray_solver()
        sol = lu.solve(np.concatenate([rhs_flat, [0.0]]))
        return sol[:m]

    @property
    def pressure_gradient(self):
        return self._leray_solver()[1]

    @property
    def divergence_matrix(self):
        return self._leray_solver()[2]


def leray_project(v: VectorField):
    """Project onto the discretely divergence-free subspace.

    Solves the (wide) pressure Poisson problem div grad p = div v and
    returns (v - grad p, p, max-norm of the residual divergence).
    """
    _require_finite("leray_project input", v.vx, v.vy)
    ops = GridOperators(v.grid)
    g = v.grid
    rhs = apply_divergence(v, BC_VELOCITY).values.ravel()
    p = ops.leray_pressure(rhs)
    gp = ops.pressure_gradient @ p
    out = VectorField(
        g,
        v.vx - gp[: g.ncells].reshape(g.nx, g.ny),
        v.vy - gp[g.ncells :].reshape(g.nx, g.ny),
    )
    resid = norm_linf(apply_divergence(out, BC_VELOCITY))
    return out, ScalarField(g, p.reshape(g.nx, g.ny)), resid


# ---------------------------------------------------------------------------
# viscous / strain quadrature (face-node realization)
# ---------------------------------------------------------------------------
#
# The strain quadrature places the normal strains on faces and the shear
# strain on cell corners.  Compact stencils keep the quadratic form positive
# definite on the whole Dirichlet space (no 2h null modes), which is what
# makes the discrete Korn constant finite.


def strain_faces_nodes(v: VectorField):
    """(exx at x-faces, eyy at y-faces, exy at nodes) for a Dirichlet field."""
    ops = GridOperators(v.grid)
    x, y = v.vx.ravel(), v.vy.ravel()
    exx = ops.Fx[DIRICHLET] @ x
    eyy = ops.Fy[DIRICHLET] @ y
    exy = 0.5 * (ops.NdyD @ x + ops.NdxD @ y)
    return exx, eyy, exy


def viscous_dissipation(v: VectorField, nu_cells) -> float:
    """integral 2 nu |sym grad v|^2 with the face-node strain quadrature."""
    ops = GridOperators(v.grid)
    w = v.grid.cell_area
    nu = np.asarray(nu_cells).ravel()
    nu_fx = ops.Ax[NEUMANN] @ nu
    nu_fy = ops.Ay[NEUMANN] @ nu
    nu_n = ops.AnodeN @ nu
    exx, eyy, exy = strain_faces_nodes(v)
    return float(
        (np.sum(2.0 * nu_fx * exx ** 2) + np.sum(2.0 * nu_fy * eyy ** 2) + np.sum(4.0 * nu_n * exy ** 2)) * w
    )


def viscous_pairing(v: VectorField, w: VectorField, nu_cells) -> float:
    """integral 2 nu sym grad v : sym grad w, same quadrature as above."""
    ops = GridOperators(v.grid)
    area = v.grid.cell_area
    nu = np.asarray(nu_cells).ravel()
    nu_fx = ops.Ax[NEUMANN] @ nu
    nu_fy = ops.Ay[NEUMANN] @ nu
    nu_n = ops.AnodeN @ nu
    ev = strain_faces_nodes(v)
    ew = strain_faces_nodes(w)
    return float(
        (
            np.sum(2.0 * nu_fx * ev[0] * ew[0])
            + np.sum(2.0 * nu_fy * ev[1] * ew[1])
            + np.sum(4.0 * nu_n * ev[2] * ew[2])
        )
        * area
    )


def stress_strain_pairing(S: SymTensorField, v: VectorField, eta_cells) -> float:
    """integral eta S : sym grad v with S averaged onto faces and nodes."""
    ops = GridOperators(S.grid)
    area = S.grid.cell_area
    eta = np.asarray(eta_cells).ravel()
    s1, s2 = S.s1.ravel(), S.s2.ravel()
    exx, eyy, exy = strain_faces_nodes(v)
    t = np.sum((ops.Ax[NEUMANN] @ (eta * s1)) * exx)
    t -= np.sum((ops.Ay[NEUMANN] @ (eta * s1)) * eyy)
    t += 2.0 * np.sum((ops.AnodeN @ (eta * s2)) * exy)
    return float(t * area)


# ---------------------------------------------------------------------------
# field I/O: CSV values + JSON sidecar
# ---------------------------------------------------------------------------

_FIELD_COLUMNS = {
    "ScalarField": ("value",),
    "VectorField": ("vx", "vy"),
    "SymTensorField": ("s11", "s12"),
}


def dump_field(fieldobj, path: str, role: str = "", time: float = 0.0):
    """Write a field as CSV with header i,j,value... plus a JSON sidecar."""
    kind = type(fieldobj).__name__
    if kind not in _FIELD_COLUMNS:
        raise GridError(f"cannot dump {kind}")
    g = fieldobj.grid
    cols = _FIELD_COLUMNS[kind]
    if kind == "ScalarField":
        data = [fieldobj.values]
    elif kind == "VectorField":
        data = [fieldobj.vx, fieldobj.vy]
    else:
        data = [fieldobj.s1, fieldobj.s2]
    ii, jj = np.meshgrid(np.arange(g.nx), np.arange(g.ny), indexing="ij")
    table = np.column_stack([ii.ravel(), jj.ravel()] + [d.ravel() for d in data])
    header = "i,j," + ",".join(cols)
    fmt = ["%d", "%d"] + ["%.17g"] * len(cols)
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=fmt)
    sidecar = {
        "kind": kind,
        "nx": g.nx,
        "ny": g.ny,
        "lx": g.lx,
        "ly": g.ly,
        "role": role,
        "time": time,
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=1)


def load_field(path: str):
    """Round-trip partner of dump_field; values preserved to 1e-15 relative."""
    with open(path + ".json") as fh:
        meta = json.load(fh)
    g = Grid(meta["nx"], meta["ny"], meta["lx"], meta["ly"])
    raw = np.loadtxt(path, delimiter=",", skiprows=1)
    shape = (g.nx, g.ny)
    vals = [raw[:, 2 + k].reshape(shape) for k in range(raw.shape[1] - 2)]
    kind = meta["kind"]
    if kind == "ScalarField":
        out = ScalarField(g, vals[0])
    elif kind == "VectorField":
        out = VectorField(g, vals[0], vals[1])
    elif kind == "SymTensorField":
        out = SymTensorField(g, vals[0], vals[1])
    else:
        raise GridError(f"unknown field kind {kind!r} in sidecar")
    return out, meta
