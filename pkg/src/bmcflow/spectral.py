"""Grids, real spherical-harmonic transforms, and exact spectral operators on S^2.

A field is stored on a Gauss-Legendre x uniform-longitude grid as a real
array of shape (L+1, 2L+2).  Coefficients live in a dense real array of
shape (L+1, 2L+1): entry [l, m+L] multiplies the real harmonic of degree
l and order m.  The basis is normalized so that the spherical mean of
Y^2 equals 1; consequently coeffs[0, L] is the spherical mean of the
field, and Parseval reads  mean(u^2) = sum(coeffs^2).

With L+1 Gauss nodes the colatitude quadrature is exact through
polynomial degree 2L+1 and 2L+2 longitudes resolve all modes |m| <= L,
so analyze/synthesize round-trip band-limited data to machine precision.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import lpmv, gammaln

from .errors import ConfigError


@dataclass
class Grid:
    """Gauss-Legendre colatitude x uniform longitude grid for degree L."""

    L: int
    x: np.ndarray          # cos(colatitude), ascending, shape (L+1,)
    w: np.ndarray          # Gauss weights, sum 2
    n_lon: int
    _leg: dict = field(default_factory=dict, repr=False)
    _dleg: dict = field(default_factory=dict, repr=False)

    @property
    def n_lat(self):
        return self.L + 1

    @property
    def shape(self):
        return (self.n_lat, self.n_lon)

    @property
    def phi(self):
        return 2.0 * np.pi * np.arange(self.n_lon) / self.n_lon

    @property
    def sin_theta(self):
        return np.sqrt(1.0 - self.x**2)

    def nodes(self):
        """Unit vectors of all grid nodes, shape (n_lat, n_lon, 3)."""
        st = self.sin_theta[:, None]
        phi = self.phi[None, :]
        out = np.empty(self.shape + (3,))
        out[..., 0] = st * np.cos(phi)
        out[..., 1] = st * np.sin(phi)
        out[..., 2] = self.x[:, None] * np.ones_like(phi)
        return out

    def legendre(self, m):
        """Normalized associated Legendre table N_{l,m} P_l^m(x_j), shape (n_lat, L+1-m)."""
        if m not in self._leg:
            self._leg[m] = _norm_legendre(m, self.L, self.x)
        return self._leg[m]

    def dlegendre(self, m):
        """d/dtheta of the normalized table, same shape as legendre(m)."""
        if m not in self._dleg:
            self._dleg[m] = _norm_legendre_dtheta(m, self.L, self.x)
        return self._dleg[m]

    def integrate(self, values):
        """Spherical mean (1/4pi) * integral of a gridded field."""
        values = np.asarray(values)
        if values.shape != self.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {self.shape}")
        return 0.5 * self.w @ values.mean(axis=1)


def _norm_factor(m, ls):
    # sqrt((2l+1) (l-m)! / (l+m)!), via logs to stay finite for large l+m
    ls = np.asarray(ls, dtype=float)
    return np.exp(0.5 * (np.log(2 * ls + 1) + gammaln(ls - m + 1) - gammaln(ls + m + 1)))


def _norm_legendre(m, L, x):
    ls = np.arange(m, L + 1)
    P = lpmv(m, ls[None, :], x[:, None])
    return P * _norm_factor(m, ls)[None, :]


def _norm_legendre_dtheta(m, L, x):
    # (1-x^2) dP_l^m/dx = -l x P_l^m + (l+m) P_{l-1}^m, and d/dtheta = -sin(theta) d/dx
    ls = np.arange(m, L + 1)
    P = lpmv(m, ls[None, :], x[:, None])
    Pdown = np.zeros_like(P)
    if len(ls) > 1:
        Pdown[:, 1:] = lpmv(m, ls[:-1][None, :], x[:, None])
    sin_t = np.sqrt(1.0 - x**2)[:, None]
    dP = (ls[None, :] * x[:, None] * P - (ls + m)[None, :] * Pdown) / sin_t
    return dP * _norm_factor(m, ls)[None, :]


def make_grid(L):
    """Build the transform grid for maximum degree L (4 <= L <= 85).

    The upper cap is where the unnormalized associated Legendre
    recursion behind scipy.special.lpmv overflows double precision
    (first NaN at degree 86); all operations here stay well below it.
    """
    if int(L) != L or L < 4:
        raise ConfigError(f"grid degree must be an integer >= 4, got {L}")
    if L > 85:
        raise ConfigError(f"grid degree {L} exceeds the supported band limit 85")
    L = int(L)
    x, w = np.polynomial.legendre.leggauss(L + 1)
    return Grid(L=L, x=x, w=w, n_lon=2 * L + 2)


def _fourier_coeffs(values, grid):
    """Per-latitude cosine/sine longitude coefficients A_m, B_m."""
    F = np.fft.rfft(values, axis=1)
    n = grid.n_lon
    A = np.empty((grid.n_lat, grid.L + 1))
    B = np.zeros_like(A)
    A[:, 0] = F[:, 0].real / n
    A[:, 1:] = 2.0 * F[:, 1 : grid.L + 1].real / n
    B[:, 1:] = -2.0 * F[:, 1 : grid.L + 1].imag / n
    return A, B


def analyze(values, grid):
    """Project a gridded field onto the real harmonic basis."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"values shape {values.shape} does not match grid {grid.shape}")
    A, B = _fourier_coeffs(values, grid)
    q = 0.5 * grid.w
    L = grid.L
    c = np.zeros((L + 1, 2 * L + 1))
    c[:, L] = grid.legendre(0).T @ (q * A[:, 0])
    s2 = np.sqrt(2.0) / 2.0
    for m in range(1, L + 1):
        lam_q = grid.legendre(m).T * q
        c[m:, L + m] = s2 * (lam_q @ A[:, m])
        c[m:, L - m] = s2 * (lam_q @ B[:, m])
    return c


def synthesize(coeffs, grid):
    """Evaluate a coefficient array on the grid."""
    coeffs = np.asarray(coeffs, dtype=float)
    L = grid.L
    if coeffs.shape != (L + 1, 2 * L + 1):
        raise ValueError(f"coeffs shape {coeffs.shape} does not match degree {L}")
    n = grid.n_lon
    G = np.zeros((grid.n_lat, n // 2 + 1), dtype=complex)
    G[:, 0] = (grid.legendre(0) @ coeffs[:, L]) * n
    s2 = np.sqrt(2.0)
    for m in range(1, L + 1):
        lam = grid.legendre(m)
        Am = s2 * (lam @ coeffs[m:, L + m])
        Bm = s2 * (lam @ coeffs[m:, L - m])
        G[:, m] = (Am - 1j * Bm) * (n / 2.0)
    return np.fft.irfft(G, n=n, axis=1)


def synth_at(coeffs, points):
    """Evaluate a coefficient array at arbitrary unit vectors.

    points has shape (..., 3); the return matches points.shape[:-1].
    """
    coeffs = np.asarray(coeffs, dtype=float)
    L = coeffs.shape[0] - 1
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 3)
    x3 = np.clip(flat[:, 2], -1.0, 1.0)
    phi = np.arctan2(flat[:, 1], flat[:, 0])
    out = _norm_legendre(0, L, x3) @ coeffs[:, L]
    s2 = np.sqrt(2.0)
    for m in range(1, L + 1):
        lam = _norm_legendre(m, L, x3)
        Am = lam @ coeffs[m:, L + m]
        Bm = lam @ coeffs[m:, L - m]
        out += s2 * (Am * np.cos(m * phi) + Bm * np.sin(m * phi))
    return out.reshape(pts.shape[:-1])


def mean(values, grid):
    """Spherical mean of a gridded field."""
    return grid.integrate(values)


def degree_multipliers(L):
    """Column vector of degrees l, for building diagonal operators."""
    return np.arange(L + 1, dtype=float)[:, None]


def dtn_apply(coeffs):
    """Dirichlet-to-Neumann map of the harmonic extension to the unit ball.

    The extension of a degree-l harmonic is r^l Y_l, so the outward
    normal derivative at r=1 multiplies each degree by l.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    return coeffs * degree_multipliers(coeffs.shape[0] - 1)


def laplace_beltrami(coeffs):
    """Surface Laplacian: multiplies degree l by -l(l+1)."""
    coeffs = np.asarray(coeffs, dtype=float)
    ls = degree_multipliers(coeffs.shape[0] - 1)
    return coeffs * (-ls * (ls + 1.0))


def gradient_norm_sq(coeffs, grid):
    """Pointwise |grad u|^2 on the grid from spectral first derivatives.

    Derivatives in colatitude use the analytic d/dtheta of the Legendre
    tables; the longitude derivative is taken in Fourier space.  Gauss
    nodes exclude the poles, so dividing by sin(theta) is safe.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    L = grid.L
    if coeffs.shape != (L + 1, 2 * L + 1):
        raise ValueError(f"coeffs shape {coeffs.shape} does not match degree {L}")
    n = grid.n_lon
    Gt = np.zeros((grid.n_lat, n // 2 + 1), dtype=complex)
    Gp = np.zeros_like(Gt)
    Gt[:, 0] = (grid.dlegendre(0) @ coeffs[:, L]) * n
    s2 = np.sqrt(2.0)
    for m in range(1, L + 1):
        dlam = grid.dlegendre(m)
        lam = grid.legendre(m)
        At = s2 * (dlam @ coeffs[m:, L + m])
        Bt = s2 * (dlam @ coeffs[m:, L - m])
        Gt[:, m] = (At - 1j * Bt) * (n / 2.0)
        Am = s2 * (lam @ coeffs[m:, L + m])
        Bm = s2 * (lam @ coeffs[m:, L - m])
        Gp[:, m] = 1j * m * (Am - 1j * Bm) * (n / 2.0)
    u_theta = np.fft.irfft(Gt, n=n, axis=1)
    u_phi = np.fft.irfft(Gp, n=n, axis=1)
    return u_theta**2 + (u_phi / grid.sin_theta[:, None]) ** 2


class BoundaryField:
    """A real field on the boundary sphere with lazily synced coefficients."""

    def __init__(self, grid, values=None, coeffs=None):
        if values is None and coeffs is None:
            raise ValueError("need values or coeffs")
        self.grid = grid
        self._values = None if values is None else np.asarray(values, dtype=float)
        self._coeffs = None if coeffs is None else np.asarray(coeffs, dtype=float)
        if self._values is not None and self._values.shape != grid.shape:
            raise ValueError(f"values shape {self._values.shape} does not match grid {grid.shape}")

    @classmethod
    def from_values(cls, values, grid):
        return cls(grid, values=values)

    @classmethod
    def from_coeffs(cls, coeffs, grid):
        return cls(grid, coeffs=coeffs)

    @classmethod
    def constant(cls, value, grid):
        return cls(grid, values=np.full(grid.shape, float(value)))

    @property
    def values(self):
        if self._values is None:
            self._values = synthesize(self._coeffs, self.grid)
        return self._values

    @property
    def coeffs(self):
        if self._coeffs is None:
            self._coeffs = analyze(self._values, self.grid)
        return self._coeffs

    def mean(self):
        return self.grid.integrate(self.values)

    def filtered(self):
        """Projection onto the band limit (synthesize of analyze)."""
        return BoundaryField(self.grid, values=synthesize(self.coeffs, self.grid))

    def __repr__(self):
        return f"BoundaryField(L={self.grid.L}, min={self.values.min():.3g}, max={self.values.max():.3g})"
