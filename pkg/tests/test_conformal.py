"""Tests for Moebius dilations, bubbles, recentering, and the detector.

Validates:
- conformal factor values at the fixed points and the identity map
- the one-parameter group law and exact inversion
- bubble closed forms: peak height, zonal coefficient decay, unit
  boundary volume, constant curvature
- cap-mass quadrature against a hand antiderivative
- center-of-mass values against a closed-form loop integral
- volume invariance of the weighted pullback
- the recentering solve on bubbles and on the constant
- cap-convolution concentration flags, clustering, and the uniqueness
  warning
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bmcflow.conformal import (
    ConformalMap,
    boundary_map,
    bubble,
    bubble_cap_mass,
    bubble_field,
    center_of_mass,
    concentration_check,
    conformal_factor,
    normalize,
    pullback_normalized,
)
from bmcflow.curvature import mean_curvature, volume
from bmcflow.spectral import BoundaryField, make_grid, synth_at

N_POLE = np.array([0.0, 0.0, 1.0])
S_POLE = np.array([0.0, 0.0, -1.0])


def cap_mass_closed(eps, r):
    """Hand antiderivative of the cap integral of the bubble density:
    (eps(2-eps))^2/(4b) [ 1/(1-b)^2 - 1/(1+b^2-2b cos r) ], b = 1-eps."""
    b = 1.0 - eps
    return (eps * (2.0 - eps)) ** 2 / (4.0 * b) * (
        1.0 / (1.0 - b) ** 2 - 1.0 / (1.0 + b * b - 2.0 * b * np.cos(r))
    )


def s_z_closed(eps):
    """Hand loop integral for the height of the bubble's center of mass:
    S_z = (eps(2-eps))^2/(8b^2) [c/eps^2 - c/(2-eps)^2 - 2 ln((2-eps)/eps)]
    with b = 1-eps, c = 1+b^2."""
    b = 1.0 - eps
    c = 1.0 + b * b
    return (eps * (2.0 - eps)) ** 2 / (8.0 * b * b) * (
        c / eps**2 - c / (2.0 - eps) ** 2 - 2.0 * np.log((2.0 - eps) / eps)
    )


def random_unit(rng):
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def test_conformal_factor_fixed_points():
    """The factor is eps at p, 1/eps at -p, and 2eps/(1+eps^2) on the
    orthogonal circle."""
    mp = ConformalMap(N_POLE, 0.3)
    assert abs(conformal_factor(mp, N_POLE) - 0.3) < 1e-14
    assert abs(conformal_factor(mp, S_POLE) - 1.0 / 0.3) < 1e-14
    eq = np.array([1.0, 0.0, 0.0])
    assert abs(conformal_factor(mp, eq) - 0.6 / 1.09) < 1e-14


def test_identity_map():
    mp = ConformalMap(N_POLE, 1.0)
    rng = np.random.default_rng(0)
    pts = np.array([random_unit(rng) for _ in range(50)])
    assert np.abs(boundary_map(mp, pts) - pts).max() < 1e-14
    assert np.abs(conformal_factor(mp, pts) - 1.0).max() < 1e-14


def test_fixed_points_of_map():
    mp = ConformalMap(np.array([1.0, 2.0, -1.0]), 0.45)
    for x in (mp.p, -mp.p):
        assert np.abs(boundary_map(mp, x) - x).max() < 1e-14


def test_group_law_same_axis():
    """Dilations along one axis compose multiplicatively: 0.5 then 0.4
    equals 0.2."""
    rng = np.random.default_rng(1)
    pts = np.array([random_unit(rng) for _ in range(1000)])
    a = ConformalMap(N_POLE, 0.5)
    b = ConformalMap(N_POLE, 0.4)
    c = ConformalMap(N_POLE, 0.2)
    composed = boundary_map(b, boundary_map(a, pts))
    assert np.abs(composed - boundary_map(c, pts)).max() < 1e-10
    lam = conformal_factor(b, boundary_map(a, pts)) * conformal_factor(a, pts)
    assert np.abs(lam - conformal_factor(c, pts)).max() < 1e-10


def test_inverse_map():
    mp = ConformalMap(np.array([0.3, -0.2, 0.8]), 0.37)
    rng = np.random.default_rng(2)
    pts = np.array([random_unit(rng) for _ in range(200)])
    back = boundary_map(mp.inverse(), boundary_map(mp, pts))
    assert np.abs(back - pts).max() < 1e-12


def test_map_validation():
    with pytest.raises(ValueError):
        ConformalMap(np.zeros(3), 0.5)
    with pytest.raises(ValueError):
        ConformalMap(N_POLE, 0.0)
    with pytest.raises(ValueError):
        ConformalMap(N_POLE, -1.0)


def test_width_matches_concentration_parameter():
    """A bubble with concentration eps comes from the chart dilation
    eps/(2-eps); width inverts that relation."""
    for eps in (0.05, 0.3, 0.4, 0.7, 1.0):
        mp = ConformalMap(N_POLE, eps / (2.0 - eps))
        assert abs(mp.width - eps) < 1e-14


def test_bubble_field_closed_form_and_map_form_agree():
    g = make_grid(31)
    u1 = bubble_field(N_POLE, 0.4, g)
    u2 = bubble(ConformalMap(N_POLE, 0.4 / 1.6), g)
    assert np.abs(u1.values - u2.values).max() < 1e-12


def test_bubble_peak_value():
    """Peak height sqrt((2-eps)/eps); synthesis at the exact peak agrees
    up to the truncated zonal tail (~2 * 0.6^32 at this resolution)."""
    g = make_grid(31)
    u = bubble_field(N_POLE, 0.4, g)
    peak = synth_at(u.coeffs, N_POLE)
    assert abs(peak - np.sqrt(1.6 / 0.4)) < 1e-6


def test_bubble_zonal_decay():
    """Scaled zonal coefficients fall geometrically:
    c_l sqrt(2l+1) = sqrt(eps(2-eps)) (1-eps)^l, up to quadrature
    aliasing of the truncated tail (worst near the band edge)."""
    g = make_grid(31)
    eps = 0.3
    u = bubble_field(N_POLE, eps, g)
    c = u.coeffs
    amp = np.sqrt(eps * (2.0 - eps))
    for l in range(16):
        got = c[l, 31] * np.sqrt(2 * l + 1.0)
        assert abs(got - amp * (1.0 - eps) ** l) < 1e-7
    off_zonal = np.abs(c[:16]).max(axis=0)
    assert np.delete(off_zonal, 31).max() < 1e-12


def test_bubble_volume_and_curvature():
    """Bubbles have unit boundary volume and curvature one; on the grid
    both hold to the resolution of the zonal tail."""
    g = make_grid(31)
    u = bubble_field(N_POLE, 0.4, g)
    assert abs(volume(u) - 1.0) < 1e-8
    H = mean_curvature(u)
    assert np.abs(H.values - 1.0).max() < 1e-4


def test_bubble_eps_validation():
    g = make_grid(8)
    for bad in (0.0, -0.1, 1.2):
        with pytest.raises(ValueError):
            bubble_field(N_POLE, bad, g)


def test_resolution_warning():
    """A bubble whose zonal tail exceeds the band limit warns; a resolved
    one does not."""
    g = make_grid(31)
    with pytest.warns(RuntimeWarning):
        bubble_field(N_POLE, 0.05, g)
    import warnings as _w
    with _w.catch_warnings():
        _w.simplefilter("error")
        bubble_field(N_POLE, 0.4, g)


@pytest.mark.parametrize("eps,r", [
    (0.05, 0.1), (0.05, 0.2), (0.05, 0.5),
    (0.3, 0.5), (0.4, 0.2), (0.7, 0.5), (0.9, 1.0),
])
def test_cap_mass_against_antiderivative(eps, r):
    assert abs(bubble_cap_mass(eps, r) - cap_mass_closed(eps, r)) < 1e-12


def test_cap_mass_frozen_value():
    """Frozen oracle (hand antiderivative, notes): a bubble at eps = 0.05
    holds 0.990016815131 of its volume within geodesic radius 0.5."""
    assert abs(bubble_cap_mass(0.05, 0.5) - 0.990016815131) < 1e-9


def test_cap_mass_uniform_limit():
    """eps = 1 is the round sphere: cap mass is the area fraction."""
    for r in (0.1, 0.5, 1.0):
        assert abs(bubble_cap_mass(1.0, r) - 0.5 * (1.0 - np.cos(r))) < 1e-14


def test_center_of_mass_closed_form():
    """Frozen oracle (hand loop integral, notes): S_z of a north bubble is
    0.9916684950419414 / 0.834097074231405 / 0.7390096039481202 /
    0.3927045319966844 at eps = 0.05 / 0.3 / 0.4 / 0.7."""
    frozen = {
        0.05: 0.9916684950419414,
        0.3: 0.834097074231405,
        0.4: 0.7390096039481202,
        0.7: 0.3927045319966844,
    }
    for eps, want in frozen.items():
        assert abs(s_z_closed(eps) - want) < 1e-12
    g = make_grid(63)
    for eps in (0.3, 0.4, 0.7):
        u = bubble_field(N_POLE, eps, g)
        S, Q = center_of_mass(u)
        assert abs(S[2] - frozen[eps]) < 1e-8
        assert np.abs(S[:2]).max() < 1e-10
        assert Q is not None and Q[2] > 0.999


def test_center_of_mass_constant_is_zero():
    g = make_grid(15)
    u = BoundaryField(g, values=np.ones(g.shape))
    S, Q = center_of_mass(u)
    assert np.abs(S).max() < 1e-14
    assert Q is None


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_pullback_preserves_volume(seed):
    """The weighted pullback is a change of variables for the boundary
    volume."""
    g = make_grid(15)
    rng = np.random.default_rng(seed)
    c = np.zeros((16, 31))
    c[0, 15] = 1.0
    for l in range(1, 5):
        c[l, 15 - l:15 + l + 1] = 0.05 * rng.standard_normal(2 * l + 1)
    u = BoundaryField(g, coeffs=c)
    mp = ConformalMap(random_unit(rng), float(rng.uniform(0.7, 1.4)))
    v = pullback_normalized(u, mp)
    assert abs(volume(v) - volume(u)) < 1e-7


def test_pullback_identity():
    g = make_grid(15)
    rng = np.random.default_rng(5)
    c = np.zeros((16, 31))
    c[0, 15] = 1.0
    c[2, 15] = 0.1 * rng.standard_normal()
    u = BoundaryField(g, coeffs=c)
    v = pullback_normalized(u, ConformalMap(N_POLE, 1.0))
    assert np.abs(v.values - u.values).max() < 1e-10


def test_normalize_recovers_bubble_parameters():
    """Recentering a 0.4-bubble returns a map of width 0.4 whose pullback
    is the constant."""
    g = make_grid(31)
    u = bubble_field(N_POLE, 0.4, g)
    out = normalize(u)
    assert out.residual <= 1e-8
    assert abs(out.map.width - 0.4) < 1e-6
    assert float(out.map.p @ N_POLE) > 1.0 - 1e-6
    assert np.abs(out.v.values - 1.0).max() < 1e-5


def test_normalize_constant_returns_identity():
    g = make_grid(15)
    u = BoundaryField(g, values=np.ones(g.shape))
    out = normalize(u)
    assert out.residual <= 1e-8
    assert abs(out.map.eps - 1.0) < 1e-12
    assert np.abs(out.v.values - 1.0).max() < 1e-12


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_concentration_flags_sharp_bubble():
    """Frozen grid evaluation (notes): at degree 63 the truncated 0.05
    bubble carries cap fractions 0.7298 / 0.9105 / 0.9647 at radii
    0.1 / 0.2 / 0.5, all above tau^2 = 0.64: one cluster at the peak."""
    g = make_grid(63)
    u = bubble_field(N_POLE, 0.05, g)
    H = BoundaryField(g, values=np.ones(g.shape))
    rep = concentration_check(u, H)
    omega = 4.0 * np.pi
    for r, want in [(0.1, 0.7298), (0.2, 0.9105), (0.5, 0.9647)]:
        assert abs(rep.cap_max[r] / omega - want) < 1e-3
    assert rep.flags.any()
    assert len(rep.clusters) == 1
    assert float(rep.clusters[0] @ N_POLE) > 0.99
    assert not rep.uniqueness_warning


def test_concentration_quiet_on_constant():
    g = make_grid(63)
    u = BoundaryField(g, values=np.ones(g.shape))
    H = BoundaryField(g, values=np.ones(g.shape))
    rep = concentration_check(u, H)
    assert not rep.flags.any()
    assert len(rep.clusters) == 0
    assert not rep.uniqueness_warning
    assert abs(rep.total_mass - 4.0 * np.pi) < 1e-10


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_concentration_two_bubbles_warns():
    """Antipodal glued bubbles flag two clusters and trip the uniqueness
    warning."""
    g = make_grid(63)
    u1 = bubble_field(N_POLE, 0.05, g)
    u2 = bubble_field(S_POLE, 0.05, g)
    u = BoundaryField(g, values=u1.values + u2.values)
    H = BoundaryField(g, values=np.ones(g.shape))
    rep = concentration_check(u, H)
    assert len(rep.clusters) == 2
    assert rep.uniqueness_warning


def test_concentration_tau_validation():
    g = make_grid(8)
    u = BoundaryField(g, values=np.ones(g.shape))
    with pytest.raises(ValueError):
        concentration_check(u, u, tau=1.5)
