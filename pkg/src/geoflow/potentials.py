"""Phase-field potential family and the variational-limit probes.

The singular part is either the shifted logarithmic potential

    w_sg(s; a) = a*((1+a+s)*ln(1+a+s) + (1+a-s)*ln(1+a-s)),   a > 0,

finite on [-1-a, 1+a] (endpoints by the x*ln x -> 0 limit, +inf outside),
or the double obstacle (indicator of [-1,1]) for a = 0.  The smooth
double-well defaults to the quartic (1-s^2)^2/4.

No additive normalization is applied to w_sg: its minimum over the domain
sits at s=0 with value 2*a*(1+a)*ln(1+a) >= 0, so the family is already
nonnegative and vanishes as a -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from geoflow.grid import ScalarField
from geoflow.materials import CoefficientSpec


class PotentialError(ValueError):
    pass


# ---------------------------------------------------------------------------
# smooth double-well
# ---------------------------------------------------------------------------


def w_dw(s):
    s = np.asarray(s, dtype=float)
    return 0.25 * (1.0 - s ** 2) ** 2


def w_dw_prime(s):
    s = np.asarray(s, dtype=float)
    return s ** 3 - s


def w_dw_second(s):
    s = np.asarray(s, dtype=float)
    return 3.0 * s ** 2 - 1.0


def w_dw_third(s):
    return 6.0 * np.asarray(s, dtype=float)


# ---------------------------------------------------------------------------
# logarithmic family
# ---------------------------------------------------------------------------


def _xlogx(x):
    out = np.zeros_like(x)
    pos = x > 0.0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def w_sg_alpha(s, alpha):
    """Logarithmic potential; +inf outside [-1-alpha, 1+alpha]."""
    if alpha <= 0:
        raise PotentialError("w_sg_alpha requires alpha > 0")
    s = np.asarray(s, dtype=float)
    up = 1.0 + alpha + s
    dn = 1.0 + alpha - s
    out = np.full(s.shape, np.inf)
    ok = (up >= 0.0) & (dn >= 0.0)
    out[ok] = alpha * (_xlogx(up[ok]) + _xlogx(dn[ok]))
    return out if out.ndim else float(out)


def w_sg_alpha_prime(s, alpha):
    s = np.asarray(s, dtype=float)
    up = 1.0 + alpha + s
    dn = 1.0 + alpha - s
    out = np.full(s.shape, np.inf)
    ok = (up > 0.0) & (dn > 0.0)
    out[ok] = alpha * (np.log(up[ok]) - np.log(dn[ok]))
    neg = (up <= 0.0) & (dn > 0.0)
    out[neg] = -np.inf
    return out if out.ndim else float(out)


def w_sg_alpha_second(s, alpha):
    s = np.asarray(s, dtype=float)
    up = 1.0 + alpha + s
    dn = 1.0 + alpha - s
    out = np.full(s.shape, np.inf)
    ok = (up > 0.0) & (dn > 0.0)
    out[ok] = alpha * (1.0 / up[ok] + 1.0 / dn[ok])
    return out if out.ndim else float(out)


def w_sg_alpha_third(s, alpha):
    s = np.asarray(s, dtype=float)
    up = 1.0 + alpha + s
    dn = 1.0 + alpha - s
    out = np.full(s.shape, np.inf)
    ok = (up > 0.0) & (dn > 0.0)
    out[ok] = alpha * (1.0 / dn[ok] ** 2 - 1.0 / up[ok] ** 2)
    return out if out.ndim else float(out)


def obstacle_project(s):
    """Clamp onto [-1, 1], the recovery map of the obstacle limit."""
    return np.clip(np.asarray(s, dtype=float), -1.0, 1.0)


def mosco_recovery_bound(alpha: float) -> float:
    """sup of w_sg(.; alpha) over [-1,1]: alpha*((alpha+2)ln(alpha+2)+alpha*ln(alpha)).

    This is the per-unit-measure bound for constant recovery sequences; it
    decreases to 0 as alpha -> 0.
    """
    if alpha <= 0:
        return 0.0
    return float(alpha * ((alpha + 2.0) * np.log(alpha + 2.0) + alpha * np.log(alpha)))


# ---------------------------------------------------------------------------
# family object
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialFamily:
    """Double-well plus singular part; alpha = 0 selects the obstacle."""

    alpha: float = 0.1
    kappa: float = 1.0
    dw_kind: str = "quartic"

    def __post_init__(self):
        if self.dw_kind != "quartic":
            raise PotentialError(f"unknown double-well kind {self.dw_kind!r}")
        if self.alpha < 0:
            raise PotentialError("alpha must be nonnegative")
        if self.kappa < 0:
            raise PotentialError("kappa must be nonnegative")

    @property
    def obstacle_mode(self) -> bool:
        return self.alpha == 0.0

    @property
    def domain_halfwidth(self) -> float:
        return 1.0 if self.obstacle_mode else 1.0 + self.alpha

    def w_sing(self, s):
        s = np.asarray(s, dtype=float)
        if self.obstacle_mode:
            out = np.where(np.abs(s) <= 1.0 + 1e-14, 0.0, np.inf)
            return out if out.ndim else float(out)
        return w_sg_alpha(s, self.alpha)

    def w_sing_prime(self, s):
        if self.obstacle_mode:
            raise PotentialError("the obstacle subgradient is multivalued; use select_beta")
        return w_sg_alpha_prime(s, self.alpha)

    def w_sing_second(self, s):
        if self.obstacle_mode:
            s = np.asarray(s, dtype=float)
            out = np.zeros_like(s)
            return out if out.ndim else 0.0
        return w_sg_alpha_second(s, self.alpha)

    def w(self, s):
        return w_dw(s) + self.w_sing(s)

    def w_smooth_prime(self, s):
        """Derivative of the single-valued part (dw plus log when alpha>0)."""
        if self.obstacle_mode:
            return w_dw_prime(s)
        return w_dw_prime(s) + w_sg_alpha_prime(s, self.alpha)

    def w_smooth_second(self, s):
        if self.obstacle_mode:
            return w_dw_second(s)
        return w_dw_second(s) + w_sg_alpha_second(s, self.alpha)

    def w_kappa(self, s):
        """Convexity-compensated potential W_kappa = W + kappa/2 s^2."""
        s = np.asarray(s, dtype=float)
        return self.w(s) + 0.5 * self.kappa * s ** 2

    def w_kappa_smooth_prime(self, s):
        s = np.asarray(s, dtype=float)
        return self.w_smooth_prime(s) + self.kappa * s

    def w_kappa_smooth_second(self, s):
        s = np.asarray(s, dtype=float)
        return self.w_smooth_second(s) + self.kappa


@dataclass
class SubgradientSelection:
    """A selected element beta of the singular subdifferential at phi."""

    beta: ScalarField
    mode: str  # "log" or "obstacle"


def select_beta(phi: ScalarField, family: PotentialFamily, multiplier: ScalarField | None = None):
    """Select beta in the subdifferential of the singular potential at phi.

    alpha > 0: the unique value w_sg'(phi); every cell must satisfy
    |phi| < 1+alpha.  Obstacle mode: the caller may pass the certified
    complementarity multiplier produced by the phase-field solve; without
    one the zero selection is returned (0 lies in the subdifferential
    everywhere on [-1,1]).
    """
    vals = phi.values
    if not family.obstacle_mode:
        bad = np.abs(vals) >= family.domain_halfwidth
        if np.any(bad):
            i, j = np.unravel_index(np.argmax(np.abs(vals)), vals.shape)
            raise PotentialError(
                f"phi leaves the potential domain; worst cell ({i},{j}) value {vals[i, j]:.6g}"
            )
        return SubgradientSelection(ScalarField(phi.grid, family.w_sing_prime(vals)), "log")
    if np.any(np.abs(vals) > 1.0 + 1e-12):
        i, j = np.unravel_index(np.argmax(np.abs(vals)), vals.shape)
        raise PotentialError(
            f"phi violates |phi|<=1; worst cell ({i},{j}) value {vals[i, j]:.6g}"
        )
    if multiplier is not None:
        b = multiplier.values
        tol = 1e-9
        if np.any((b > tol) & (vals < 1.0 - 1e-9)) or np.any((b < -tol) & (vals > -1.0 + 1e-9)):
            raise PotentialError("multiplier is not sign-consistent with the contact set")
        return SubgradientSelection(ScalarField(phi.grid, b.copy()), "obstacle")
    return SubgradientSelection(ScalarField(phi.grid, np.zeros_like(vals)), "obstacle")


# ---------------------------------------------------------------------------
# entropy function F (F(0)=F'(0)=0, F'' = 1/m)
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


def _gl_segment(flat_s, a, b, m_spec):
    """Signed Gauss-Legendre integral of (s-u)/m(u) over [a, b], elementwise."""
    x = _GL_NODES[None, :]
    w = _GL_WEIGHTS[None, :]
    mid = 0.5 * (a + b)[:, None]
    half = 0.5 * (b - a)[:, None]
    u = mid + half * x
    return np.sum(w * (flat_s[:, None] - u) / m_spec(u), axis=1) * half[:, 0]


def entropy_F(s, m_spec: CoefficientSpec):
    """F(s) = int_0^s (s-u)/m(u) du, the mobility entropy function.

    Constant mobility uses the closed form s^2/(2m).  The clamped-affine
    case is integrated by Gauss-Legendre split at the clamp breakpoints,
    where the integrand has kinks.
    """
    s = np.asarray(s, dtype=float)
    if m_spec.is_constant:
        out = s ** 2 / (2.0 * m_spec(0.0))
        return out if out.ndim else float(out)
    flat = s.ravel()
    bp_lo = (m_spec.lo - m_spec.intercept) / m_spec.slope
    bp_hi = (m_spec.hi - m_spec.intercept) / m_spec.slope
    bp_a, bp_b = min(bp_lo, bp_hi), max(bp_lo, bp_hi)
    pos = flat >= 0.0
    # knots walk from 0 toward s, passing breakpoints that lie between
    k1 = np.where(pos, np.clip(bp_a, 0.0, flat), np.clip(bp_b, flat, 0.0))
    k2 = np.where(pos, np.clip(bp_b, 0.0, flat), np.clip(bp_a, flat, 0.0))
    zero = np.zeros_like(flat)
    vals = (
        _gl_segment(flat, zero, k1, m_spec)
        + _gl_segment(flat, k1, k2, m_spec)
        + _gl_segment(flat, k2, flat, m_spec)
    )
    out = vals.reshape(s.shape)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Mosco and scaled-test-function probes
# ---------------------------------------------------------------------------


def sing_energy_time_integral(phi_steps, alpha: float, h: float, cell_area: float) -> float:
    """Time-space integral of w_sg(.; alpha) over a piecewise-constant-in-time
    trajectory; +inf as soon as one cell leaves the domain."""
    total = 0.0
    for vals in phi_steps:
        w = w_sg_alpha(np.asarray(vals, dtype=float), alpha)
        if np.any(np.isinf(w)):
            return float("inf")
        total += float(np.sum(w)) * cell_area * h
    return total


def distance_to_unit_interval(vals) -> float:
    """sup-norm distance of the values to [-1, 1]."""
    return float(np.max(np.maximum(np.abs(np.asarray(vals)) - 1.0, 0.0)))


def mosco_liminf_probe(phi_trajectories, alphas, h: float, cell_area: float):
    """Tabulate the liminf-side quantities of the variational limit.

    For every alpha: the time-integrated singular energy of the trajectory,
    the sup distance of the trajectory to [-1,1], and whether the bound
    distance <= alpha holds pointwise.  A bounded energy column together
    with vanishing distances is the discrete liminf evidence.
    """
    rows = []
    for alpha, steps in zip(alphas, phi_trajectories):
        energy = sing_energy_time_integral(steps, alpha, h, cell_area)
        dist = max(distance_to_unit_interval(vals) for vals in steps)
        rows.append(
            {
                "alpha": float(alpha),
                "sing_energy": energy,
                "distance_to_interval": dist,
                "distance_le_alpha": bool(dist <= alpha + 1e-13),
                "recovery_bound": mosco_recovery_bound(alpha),
            }
        )
    return rows


def scale_test_phase(phi_tilde: ScalarField, alpha: float, theta: float) -> ScalarField:
    """Scale a test phase by (1 - alpha^theta), keeping it inside the
    logarithmic domain whenever |phi_tilde| <= 1."""
    if not 0.0 < alpha < 1.0:
        raise PotentialError("scaling requires 0 < alpha < 1")
    return ScalarField(phi_tilde.grid, (1.0 - alpha ** theta) * phi_tilde.values)


def derivative_bound_report(alpha: float, theta: float, n_samples: int = 20001):
    """Measured suprema of |w_sg'|, |w_sg''|, |w_sg'''| at (1-alpha^theta)*s
    for |s| <= 1, against their analytic majorants."""
    if not 0.0 < alpha < 1.0:
        raise PotentialError("derivative bounds require 0 < alpha < 1")
    s = np.linspace(-1.0, 1.0, n_samples) * (1.0 - alpha ** theta)
    gap = alpha + alpha ** theta
    measured = (
        float(np.max(np.abs(w_sg_alpha_prime(s, alpha)))),
        float(np.max(np.abs(w_sg_alpha_second(s, alpha)))),
        float(np.max(np.abs(w_sg_alpha_third(s, alpha)))),
    )
    majorant = (
        float(alpha * (np.log(3.0) + abs(np.log(gap)))),
        float(2.0 * alpha / gap),
        float(alpha / gap ** 2),
    )
    return {
        "alpha": float(alpha),
        "theta": float(theta),
        "measured": measured,
        "majorant": majorant,
    }
