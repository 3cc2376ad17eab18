"""Material scalars and the constitutive closures rho, nu, eta, m, a, J."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from geoflow.grid import ScalarField, VectorField


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientSpec:
    """Coefficient function of the phase field: constant or clamped affine.

    value(s) = clip(intercept + slope*s, lo, hi); a constant c is the
    special case slope=0, lo=hi=c.
    """

    intercept: float
    slope: float = 0.0
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        lo = self.intercept if self.lo is None else self.lo
        hi = self.intercept if self.hi is None else self.hi
        object.__setattr__(self, "lo", float(min(lo, hi)))
        object.__setattr__(self, "hi", float(max(lo, hi)))

    @classmethod
    def constant(cls, c: float):
        return cls(intercept=float(c))

    @classmethod
    def parse(cls, text: str):
        """Parse 'constant:C' or 'affine:intercept=..,slope=..,lo=..,hi=..'."""
        kind, _, rest = text.partition(":")
        kind = kind.strip()
        if kind == "constant":
            return cls.constant(float(rest))
        if kind == "affine":
            kv = {}
            for item in rest.split(","):
                k, _, v = item.partition("=")
                kv[k.strip()] = float(v)
            unknown = set(kv) - {"intercept", "slope", "lo", "hi"}
            if unknown:
                raise MaterialError(f"unknown affine keys {sorted(unknown)}")
            return cls(**kv)
        raise MaterialError(f"unknown coefficient spec {text!r}")

    def __call__(self, s):
        return np.clip(self.intercept + self.slope * np.asarray(s, dtype=float), self.lo, self.hi)

    @property
    def is_constant(self) -> bool:
        return self.slope == 0.0 or self.lo == self.hi

    @property
    def deriv_bound(self) -> float:
        return abs(self.slope)

    def describe(self) -> str:
        if self.is_constant:
            return f"constant:{self(0.0):.17g}"
        return (
            f"affine:intercept={self.intercept:.17g},slope={self.slope:.17g},"
            f"lo={self.lo:.17g},hi={self.hi:.17g}"
        )


@dataclass(frozen=True)
class Params:
    """All material/model scalars and coefficient-function specifications."""

    rho1: float = 1.0
    rho2: float = 3.0
    nu_spec: CoefficientSpec = field(default_factory=lambda: CoefficientSpec.constant(1.0))
    eta_spec: CoefficientSpec = field(default_factory=lambda: CoefficientSpec.constant(1.0))
    m_spec: CoefficientSpec = field(default_factory=lambda: CoefficientSpec.constant(1.0))
    a_spec: CoefficientSpec = field(default_factory=lambda: CoefficientSpec.constant(1.0))
    sigma_yield: float = 1.0
    gamma: float = 0.0
    alpha: float = 0.1
    epsilon: float = 1.0
    kappa: float = 1.0
    theta: float = 0.4

    # coefficient bounds, taken from the specs
    @property
    def nu1(self):
        return self.nu_spec.lo

    @property
    def nu2(self):
        return self.nu_spec.hi

    @property
    def eta1(self):
        return self.eta_spec.lo

    @property
    def eta2(self):
        return self.eta_spec.hi

    @property
    def m1(self):
        return self.m_spec.lo

    @property
    def m2(self):
        return self.m_spec.hi

    @property
    def a1(self):
        return self.a_spec.lo

    def validate(self):
        """Reject parameter sets outside the admissible ranges.

        a(phi) is additionally required to stay above a positive floor; the
        model only states a(phi) > 0, and without a uniform floor the prox
        loses its contraction, so we enforce a1 > 0 here.
        """
        errors = []
        if self.rho1 <= 0 or self.rho2 <= 0:
            errors.append("rho1, rho2 must be positive")
        if self.nu1 <= 0:
            errors.append("nu lower bound nu1 must be positive")
        if self.m1 <= 0:
            errors.append("mobility lower bound m1 must be positive")
        if self.eta1 < 0:
            errors.append("eta lower bound must be nonnegative")
        if self.a1 <= 0:
            errors.append("plastic coefficient lower bound a1 must be positive")
        if self.sigma_yield <= 0:
            errors.append("sigma_yield must be positive")
        if self.gamma < 0:
            errors.append("gamma must be nonnegative")
        if self.alpha < 0:
            errors.append("alpha must be nonnegative (0 selects obstacle mode)")
        if self.epsilon <= 0:
            errors.append("epsilon must be positive")
        if self.kappa < 0:
            errors.append("kappa must be nonnegative")
        if not 0.0 < self.theta < 0.5:
            errors.append("theta must lie in (0, 1/2)")
        # sampled bound checks on [-2, 2]
        s = np.linspace(-2.0, 2.0, 801)
        for name, spec, lo, hi in (
            ("nu", self.nu_spec, self.nu1, self.nu2),
            ("eta", self.eta_spec, self.eta1, self.eta2),
            ("m", self.m_spec, self.m1, self.m2),
        ):
            vals = spec(s)
            if np.any(vals < lo - 1e-14) or np.any(vals > hi + 1e-14):
                errors.append(f"{name}(s) leaves its declared bounds on [-2,2]")
        if errors:
            raise MaterialError("; ".join(errors))
        return self

    def describe(self) -> dict:
        d = {
            "rho1": self.rho1,
            "rho2": self.rho2,
            "nu": self.nu_spec.describe(),
            "eta": self.eta_spec.describe(),
            "m": self.m_spec.describe(),
            "a": self.a_spec.describe(),
            "sigma_yield": self.sigma_yield,
            "gamma": self.gamma,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "kappa": self.kappa,
            "theta": self.theta,
        }
        return d


def density(phi: ScalarField, p: Params) -> ScalarField:
    """Affine mixture density rho = (rho1+rho2)/2 + (rho2-rho1)/2 * phi."""
    vals = 0.5 * (p.rho1 + p.rho2) + 0.5 * (p.rho2 - p.rho1) * phi.values
    return ScalarField(phi.grid, vals)


def density_values(phi_values, p: Params):
    return 0.5 * (p.rho1 + p.rho2) + 0.5 * (p.rho2 - p.rho1) * np.asarray(phi_values)


def mass_flux(phi: ScalarField, grad_mu: VectorField, p: Params, mode: str = "discrete-paper") -> VectorField:
    """Diffusive mass flux from the density mismatch.

    mode='discrete-paper' omits the mobility factor, exactly as the
    time-discrete problem defines J; mode='continuous-model' includes m(phi).
    """
    if phi.grid is not grad_mu.grid and phi.grid != grad_mu.grid:
        raise MaterialError("phi and grad_mu live on different grids")
    c = -0.5 * (p.rho2 - p.rho1)
    if mode == "discrete-paper":
        fac = c
    elif mode == "continuous-model":
        fac = c * p.m_spec(phi.values)
    else:
        raise MaterialError(f"unknown mass_flux mode {mode!r}")
    return VectorField(phi.grid, fac * grad_mu.vx, fac * grad_mu.vy)


def eval_coefficient(spec: CoefficientSpec, phi: ScalarField) -> ScalarField:
    """Shared evaluator for the nu, eta, m, a closures."""
    return ScalarField(phi.grid, spec(phi.values))
