"""Boundary conformal group: Moebius dilations, bubbles, normalization.

A ConformalMap(p, eps) acts in the stereographic chart centered at p
(projection from the antipode) as the dilation z -> eps*z.  For eps < 1
it moves points toward p while its conformal factor at p is eps < 1:
this is the map that spreads out a field concentrated at p.  Everything
has a closed form in ambient coordinates; with t = <x, p>:

    D(t)      = (1+t) + eps^2 (1-t)
    phi(x)    = ( 2 eps x_perp, (1+t) - eps^2 (1-t) ) / D   (in the p-frame)
    lambda(x) = 2 eps / D

The inverse map keeps p and replaces eps by 1/eps.

Bubbles are indexed by a concentration parameter eps in (0, 1]: the
profile is the conformal factor of the inverse of ConformalMap(p,
delta) with delta = eps/(2-eps), equivalently in closed form

    u_{p,eps}(x) = [eps(2-eps)]^{(n-1)/2} / |x - (1-eps) p|^{n-1},

which has exactly unit boundary volume, peaks at p with value
((2-eps)/eps)^{(n-1)/2}, and degenerates to the constant 1 at eps = 1.
Its zonal Legendre coefficients decay like (1-eps)^l.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_legendre

from .curvature import DEFAULT_CONSTANTS
from .errors import NormalizeError, PositivityError
from .spectral import BoundaryField, analyze, synth_at, synthesize

_NORTH = np.array([0.0, 0.0, 1.0])


def _rotation_to_north(p):
    """Orthogonal matrix R with R @ p = north pole."""
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    c = p[2]
    if c > 1.0 - 1e-14:
        return np.eye(3)
    if c < -1.0 + 1e-14:
        return np.diag([1.0, -1.0, -1.0])
    axis = np.cross(p, _NORTH)
    s = np.linalg.norm(axis)
    axis = axis / s
    K = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


@dataclass
class ConformalMap:
    """Moebius dilation with fixed points p and -p and chart factor eps."""

    p: np.ndarray
    eps: float
    rotation: np.ndarray = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        norm = np.linalg.norm(self.p)
        if norm == 0:
            raise ValueError("map base point must be a nonzero vector")
        self.p = self.p / norm
        if self.eps <= 0:
            raise ValueError(f"dilation parameter must be positive, got {self.eps}")
        if self.rotation is None:
            self.rotation = _rotation_to_north(self.p)

    def inverse(self):
        return ConformalMap(self.p, 1.0 / self.eps, rotation=self.rotation)

    @property
    def width(self):
        """Concentration parameter of the bubble this map's inverse generates."""
        return 2.0 * self.eps / (1.0 + self.eps)


@dataclass
class NormalizedState:
    map: ConformalMap
    v: BoundaryField
    residual: float


def boundary_map(mp, x):
    """Image of unit vectors x (..., 3) under the boundary action."""
    x = np.asarray(x, dtype=float)
    t = x @ mp.p
    e2 = mp.eps**2
    D = (1.0 + t) + e2 * (1.0 - t)
    perp = x - t[..., None] * mp.p
    out = (2.0 * mp.eps / D)[..., None] * perp + (((1.0 + t) - e2 * (1.0 - t)) / D)[..., None] * mp.p
    # guard against roundoff drifting off the sphere
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def conformal_factor(mp, x):
    """Conformal factor of the boundary action at unit vectors x."""
    x = np.asarray(x, dtype=float)
    t = x @ mp.p
    D = (1.0 + t) + mp.eps**2 * (1.0 - t)
    return 2.0 * mp.eps / D


def _resolution_check(eps_dilation, L):
    ratio = abs(1.0 - eps_dilation) / (1.0 + eps_dilation)
    tail = ratio ** (L + 1)
    if tail > 1e-3:
        warnings.warn(
            f"bubble with dilation {eps_dilation:.4g} is unresolved at degree {L}: "
            f"leading truncated zonal coefficient ~{tail:.2e}",
            RuntimeWarning,
            stacklevel=3,
        )


def bubble(mp, grid, constants=DEFAULT_CONSTANTS):
    """Bubble profile generated by the inverse of mp, as a gridded field.

    The field is the conformal factor of mp.inverse() raised to
    (n-1)/2; for eps < 1 it peaks at p.  Unit boundary volume holds
    exactly in the continuum and to quadrature accuracy on the grid.
    """
    _resolution_check(mp.eps, grid.L)
    lam = conformal_factor(mp.inverse(), grid.nodes())
    return BoundaryField(grid, values=lam ** ((constants.n - 1.0) / 2.0))


def bubble_field(p, eps, grid, constants=DEFAULT_CONSTANTS):
    """Bubble with concentration parameter eps in (0, 1], peaked at p.

    Closed form [eps(2-eps)]^{(n-1)/2} / |x - (1-eps)p|^{n-1}; the
    generating map is ConformalMap(p, eps/(2-eps)).
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"concentration parameter must be in (0, 1], got {eps}")
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    _resolution_check(eps / (2.0 - eps), grid.L)
    nodes = grid.nodes()
    dist = np.linalg.norm(nodes - (1.0 - eps) * p, axis=-1)
    k = (constants.n - 1.0) / 2.0
    values = (eps * (2.0 - eps)) ** k / dist ** (constants.n - 1.0)
    return BoundaryField(grid, values=values)


def bubble_cap_mass(eps, r, n_quad=400, constants=DEFAULT_CONSTANTS):
    """Fraction of a bubble's boundary volume inside the cap of radius r at its peak.

    One-dimensional Gauss quadrature of the closed-form profile over
    cos(colatitude) in [cos r, 1]; the bubble has unit total volume.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"concentration parameter must be in (0, 1], got {eps}")
    b = 1.0 - eps
    a = np.cos(r)
    x, w = np.polynomial.legendre.leggauss(n_quad)
    t = 0.5 * (a + 1.0) + 0.5 * (1.0 - a) * x
    scale = 0.5 * (1.0 - a)
    profile = (eps * (2.0 - eps)) ** constants.n / (1.0 + b * b - 2.0 * b * t) ** constants.n
    return 0.5 * scale * float(w @ profile)


def pullback_normalized(u, mp, constants=DEFAULT_CONSTANTS):
    """Pullback of u under the map, weighted to preserve boundary volume.

    v = (u o phi) * lambda_phi^{(n-1)/2}; the boundary volume of v
    equals that of u (change of variables), which the tests verify on
    the grid.
    """
    if u.values.min() <= 0.0:
        node = np.unravel_index(np.argmin(u.values), u.values.shape)
        raise PositivityError("pullback requires a positive field", node=node)
    nodes = u.grid.nodes()
    mapped = boundary_map(mp, nodes)
    comp = synth_at(u.coeffs, mapped)
    lam = conformal_factor(mp, nodes)
    return BoundaryField(u.grid, values=comp * lam ** ((constants.n - 1.0) / 2.0))


def center_of_mass(u, constants=DEFAULT_CONSTANTS):
    """S = mean(x u^{2#}) and its direction Q (None when |S| <= 1e-10)."""
    nodes = u.grid.nodes()
    w = u.values ** constants.two_sharp
    S = np.array([u.grid.integrate(nodes[..., i] * w) for i in range(3)])
    norm = float(np.linalg.norm(S))
    Q = S / norm if norm > 1e-10 else None
    return S, Q


def _map_from_ball_point(b):
    norm = float(np.linalg.norm(b))
    if norm >= 1.0:
        raise ValueError("ball point must be interior")
    if norm < 1e-14:
        return ConformalMap(_NORTH, 1.0)
    p = b / norm
    delta = (1.0 - norm) / (1.0 + norm)
    return ConformalMap(p, delta)


def normalize(u, constants=DEFAULT_CONSTANTS, tol=1e-8, max_iter=100):
    """Find the Moebius dilation whose volume-preserving pullback of u
    has zero center of mass.

    Damped Newton over the open-ball point b = (1-eps)p with a
    finite-difference Jacobian, starting from b0 = S(u)/2.  Near the
    constant field the map is not unique; if the solve stalls there the
    identity map is returned.
    """
    S0, _ = center_of_mass(u, constants)

    def residual(b):
        mp = _map_from_ball_point(b)
        v = pullback_normalized(u, mp, constants)
        S, _ = center_of_mass(v, constants)
        return S, mp, v

    b = S0 / 2.0
    if np.linalg.norm(b) >= 0.999:
        b = 0.999 * b / np.linalg.norm(b)
    R, mp, v = residual(b)
    best = (float(np.linalg.norm(R)), mp, v)
    h = 1e-6
    for _ in range(max_iter):
        rnorm = float(np.linalg.norm(R))
        if rnorm <= tol:
            return NormalizedState(map=mp, v=v, residual=rnorm)
        J = np.empty((3, 3))
        for j in range(3):
            db = np.zeros(3)
            db[j] = h
            hi = b + db
            lo = b - db
            if np.linalg.norm(hi) >= 1.0:
                hi = b
            if np.linalg.norm(lo) >= 1.0:
                lo = b
            Rhi, _, _ = residual(hi)
            Rlo, _, _ = residual(lo)
            J[:, j] = (Rhi - Rlo) / np.linalg.norm(hi - lo)
        try:
            d = np.linalg.solve(J, -R)
        except np.linalg.LinAlgError:
            break
        stepped = False
        t = 1.0
        while t > 1e-4:
            b_new = b + t * d
            if np.linalg.norm(b_new) < 1.0 - 1e-12:
                R_new, mp_new, v_new = residual(b_new)
                if np.linalg.norm(R_new) < rnorm:
                    b, R, mp, v = b_new, R_new, mp_new, v_new
                    stepped = True
                    break
            t *= 0.5
        if not stepped:
            break
        if np.linalg.norm(R) < best[0]:
            best = (float(np.linalg.norm(R)), mp, v)
    rnorm = float(np.linalg.norm(R))
    if rnorm <= tol:
        return NormalizedState(map=mp, v=v, residual=rnorm)
    if float(np.linalg.norm(S0)) <= 1e-8:
        ident = ConformalMap(_NORTH, 1.0)
        return NormalizedState(map=ident, v=u, residual=float(np.linalg.norm(S0)))
    raise NormalizeError(
        f"center-of-mass solve stalled at residual {best[0]:.3e}",
        best_map=best[1],
        best_residual=best[0],
    )


def _cap_kernel(L, r):
    """Funk-Hecke multipliers of the indicator of a cap of radius r."""
    a = np.cos(r)
    mu = np.empty(L + 1)
    mu[0] = 2.0 * np.pi * (1.0 - a)
    ls = np.arange(1, L + 1)
    mu[1:] = 2.0 * np.pi * (eval_legendre(ls - 1, a) - eval_legendre(ls + 1, a)) / (2 * ls + 1)
    return mu


@dataclass
class ConcentrationReport:
    radii: tuple
    cap_max: dict          # radius -> max over nodes of the cap integral (dmu_g units)
    flags: np.ndarray      # bool over grid nodes: threshold met at ALL radii
    flagged_points: list   # unit vectors of flagged nodes
    clusters: list         # representative unit vectors, merged by geodesic distance
    total_mass: float      # integral of |H|^n dmu_g
    tau: float
    uniqueness_warning: bool


def concentration_check(u, H, tau=0.8, radii=(0.1, 0.2, 0.5), constants=DEFAULT_CONSTANTS):
    """Flag grid nodes whose caps carry a bubble's worth of curvature mass.

    The monitored density is |H|^n u^{2#}; a node is flagged when its
    cap integral is >= tau^n * omega_n at every radius in radii.  Cap
    integrals are spherical convolutions with the cap indicator,
    evaluated by Funk-Hecke multipliers, so they carry truncation error
    of the band-limited density; tau should not be chosen closer to the
    theoretical threshold than that error (tau < 2^{1/n} always).
    """
    if not tau < 2.0 ** (1.0 / constants.n):
        raise ValueError(f"tau must be below 2^(1/n), got {tau}")
    grid = u.grid
    W = np.abs(H.values) ** constants.n * u.values ** constants.two_sharp
    cw = analyze(W, grid)
    total = constants.omega_n * grid.integrate(W)
    flags = np.ones(grid.shape, dtype=bool)
    cap_max = {}
    threshold = tau**constants.n * constants.omega_n
    for r in radii:
        mu = _cap_kernel(grid.L, r)
        cap = synthesize(cw * mu[:, None], grid)
        cap_max[r] = float(cap.max())
        flags &= cap >= threshold
    nodes = grid.nodes()
    flagged_points = [nodes[idx] for idx in zip(*np.nonzero(flags))]
    clusters = []
    for pt in flagged_points:
        for rep in clusters:
            if np.arccos(np.clip(pt @ rep, -1.0, 1.0)) <= 0.5:
                break
        else:
            clusters.append(pt)
    return ConcentrationReport(
        radii=tuple(radii),
        cap_max=cap_max,
        flags=flags,
        flagged_points=flagged_points,
        clusters=clusters,
        total_mass=float(total),
        tau=tau,
        uniqueness_warning=len(clusters) >= 2,
    )
