"""Scalar functionals of the flow: mean curvature, energies, multiplier bounds.

Everything is phrased with the boundary dimension n as a parameter
(a_n = 2/(n-1), critical trace exponent 2# = 2n/(n-1)); gridded
computation is n = 2.  Spherical means are written mean(.) throughout;
dmu_g denotes the evolving boundary measure u^{2#} dmu.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as _gamma

from .errors import AdmissibilityError, PositivityError
from .spectral import BoundaryField, dtn_apply, synthesize

_TWO_SHARP_VOL_TOL = 1e-8


@dataclass(frozen=True)
class Constants:
    """Dimension-dependent exponents for the boundary sphere S^n."""

    n: int = 2

    @property
    def a_n(self):
        return 2.0 / (self.n - 1)

    @property
    def two_sharp(self):
        return 2.0 * self.n / (self.n - 1)

    @property
    def omega_n(self):
        n = self.n
        return 2.0 * np.pi ** ((n + 1) / 2) / _gamma((n + 1) / 2)


DEFAULT_CONSTANTS = Constants(2)


@dataclass
class EnergyReport:
    E: float
    denom: float
    E_f: float
    lam: float


@dataclass
class FlowBounds:
    lambda1: float
    lambda2: float
    Lambda0: float
    gamma: float
    c_star: float
    sigma: float
    beta: float
    condition_ii_ok: bool
    f_mean: float
    f_max: float
    f_absmax: float
    min_H0: float


def _require_positive(values, what="field"):
    if values.min() <= 0.0:
        node = np.unravel_index(np.argmin(values), values.shape)
        raise PositivityError(f"{what} is not positive at node {node}", node=node)


def _as_values(f):
    return f.values if isinstance(f, BoundaryField) else np.asarray(f, dtype=float)


def volume(u, constants=DEFAULT_CONSTANTS):
    """mean(u^{2#}), the conserved boundary volume of the conformal metric."""
    return u.grid.integrate(u.values ** constants.two_sharp)


def mean_curvature(u, constants=DEFAULT_CONSTANTS):
    """Boundary mean curvature of the metric with conformal factor u.

    H = u^{-(2#-1)} (a_n * DtN(u) + u); the DtN term is the normal
    derivative of the harmonic extension, applied spectrally.
    """
    _require_positive(u.values, "conformal factor")
    dtn_values = synthesize(dtn_apply(u.coeffs), u.grid)
    c = constants
    power = -(c.two_sharp - 1.0)
    H = (c.a_n * dtn_values + u.values) * u.values**power
    return BoundaryField(u.grid, values=H)


def total_energy(u, constants=DEFAULT_CONSTANTS):
    """Spectral form of the boundary energy: sum (a_n l + 1) c_{l,m}^2."""
    c = u.coeffs
    ls = np.arange(c.shape[0], dtype=float)[:, None]
    return float(np.sum((constants.a_n * ls + 1.0) * c**2))


def energy_functional(u, f, constants=DEFAULT_CONSTANTS):
    """EnergyReport for (u, f): E, the f-weighted volume, E_f, lambda.

    E_f = E / denom^{(n-1)/n} and lambda = E / denom, defined only on
    the admissible set where denom = mean(f u^{2#}) is positive.
    """
    _require_positive(u.values, "conformal factor")
    fv = _as_values(f)
    E = total_energy(u, constants)
    denom = u.grid.integrate(fv * u.values ** constants.two_sharp)
    if denom <= 0.0:
        raise AdmissibilityError(
            f"f-weighted volume is {denom:.3e}; u lies outside the admissible set for this f",
            condition="positive f-weighted volume",
        )
    E_f = E / denom ** ((constants.n - 1.0) / constants.n)
    return EnergyReport(E=E, denom=denom, E_f=E_f, lam=E / denom)


def f2_norm(u, f, lam, constants=DEFAULT_CONSTANTS, H=None):
    """Dissipation rate F2 = mean((lam f - H)^2 u^{2#})."""
    if H is None:
        H = mean_curvature(u, constants)
    fv = _as_values(f)
    r = lam * fv - H.values
    return u.grid.integrate(r**2 * u.values ** constants.two_sharp)


def lp_residual(u, f, lam, p, constants=DEFAULT_CONSTANTS, H=None):
    """mean(|lam f - H|^p u^{2#}) for the residual-trend diagnostics."""
    if H is None:
        H = mean_curvature(u, constants)
    fv = _as_values(f)
    r = np.abs(lam * fv - H.values)
    return u.grid.integrate(r**p * u.values ** constants.two_sharp)


def lambda_prime(u, f, lam, constants=DEFAULT_CONSTANTS, H=None):
    """Time derivative of the volume-preserving multiplier.

    lambda' = -(mean(f dmu_g))^{-1} [ (n-1)/2 * mean((lam f - H)^2 dmu_g)
              + 1/2 * mean(lam f (lam f - H) dmu_g) ].
    """
    if H is None:
        H = mean_curvature(u, constants)
    fv = _as_values(f)
    w = u.values ** constants.two_sharp
    denomf = u.grid.integrate(fv * w)
    if denomf == 0.0:
        raise AdmissibilityError("f-weighted volume vanishes; multiplier derivative undefined",
                                 condition="positive f-weighted volume")
    r = lam * fv - H.values
    term1 = (constants.n - 1.0) / 2.0 * u.grid.integrate(r**2 * w)
    term2 = 0.5 * u.grid.integrate(lam * fv * r * w)
    return -(term1 + term2) / denomf


def flow_bounds(u0, f, H0, constants=DEFAULT_CONSTANTS, Lambda0=10.0, f_closed=None):
    """Frozen t=0 bounds: multiplier window, barrier, and energy threshold.

    lambda1 = (max f)^{-1} vol^{-1/n},
    lambda2 = E_f[u0]^{n/(n-1)} vol^{-1/n},
    gamma   = min(min H0 - lambda2 max|f|,
                  -sqrt((4/3)(lambda2 max|f|)^2 + (8/3) Lambda0 max|f|)),
    c_star  = -lambda2 max|f| + gamma,
    sigma   = (2^{1/n} mean(f)/max|f| - 1)/2,
    beta    = (1+sigma)^{(n-1)/n} mean(f)^{(1-n)/n}.

    When f_closed (a PrescribedFunction) is given, the extrema of f are
    polished by Newton refinement instead of trusting grid nodes.
    """
    fv = _as_values(f)
    f_mean = u0.grid.integrate(fv)
    if f_mean <= 0.0:
        raise AdmissibilityError(f"mean of f is {f_mean:.3e}, must be positive",
                                 condition="positive mean")
    if f_closed is not None:
        fmin, fmax = f_closed.extrema()
        fmin = min(fmin, float(fv.min()))
        fmax = max(fmax, float(fv.max()))
    else:
        fmin, fmax = float(fv.min()), float(fv.max())
    f_absmax = max(abs(fmin), abs(fmax))
    if fmax <= 0.0:
        raise AdmissibilityError("max f must be positive", condition="positive maximum")
    n = constants.n
    vol = volume(u0, constants)
    report = energy_functional(u0, f, constants)
    lambda1 = vol ** (-1.0 / n) / fmax
    lambda2 = report.E_f ** (n / (n - 1.0)) * vol ** (-1.0 / n)
    min_H0 = float(H0.values.min())
    l2m = lambda2 * f_absmax
    gamma = min(min_H0 - l2m, -np.sqrt((4.0 / 3.0) * l2m**2 + (8.0 / 3.0) * Lambda0 * f_absmax))
    c_star = -l2m + gamma
    sigma = 0.5 * (2.0 ** (1.0 / n) * f_mean / f_absmax - 1.0)
    beta = (1.0 + sigma) ** ((n - 1.0) / n) * f_mean ** ((1.0 - n) / n) if sigma > -1.0 else np.nan
    return FlowBounds(
        lambda1=lambda1,
        lambda2=lambda2,
        Lambda0=Lambda0,
        gamma=gamma,
        c_star=c_star,
        sigma=sigma,
        beta=beta,
        condition_ii_ok=bool(sigma > 0.0),
        f_mean=f_mean,
        f_max=fmax,
        f_absmax=f_absmax,
        min_H0=min_H0,
    )


def membership(u, f, beta, constants=DEFAULT_CONSTANTS):
    """Admissible-set membership: {in_Xstar, in_Xf}.

    in_Xstar: u positive with positive f-weighted volume; in_Xf adds
    unit volume (within 1e-8) and E_f <= beta.
    """
    fv = _as_values(f)
    positive = float(u.values.min()) > 0.0
    if not positive:
        return {"in_Xstar": False, "in_Xf": False}
    w = u.values ** constants.two_sharp
    denom = u.grid.integrate(fv * w)
    in_xstar = denom > 0.0
    if not in_xstar:
        return {"in_Xstar": False, "in_Xf": False}
    vol = u.grid.integrate(w)
    E = total_energy(u, constants)
    E_f = E / denom ** ((constants.n - 1.0) / constants.n)
    in_xf = abs(vol - 1.0) <= _TWO_SHARP_VOL_TOL and E_f <= beta
    return {"in_Xstar": True, "in_Xf": bool(in_xf)}
