"""Tests for the volume-normalized curvature flow driver.

Validates:
- config validation and the trajectory column layout
- immediate convergence on the stationary pair (constant factor,
  constant target)
- a full convergence run: monotone normalized energy, unit volume to
  projection accuracy, step-size rules, verdicts, and the recorded
  diagnostic identities
- concentration verdicts from the amplitude guard and from the
  cap-mass detector at t = 0
- CSV round-trip and the verdict document
- the interpolation path between a flowed state and the constant
"""

import json

import numpy as np
import pytest

from bmcflow.conformal import bubble_field
from bmcflow.errors import AdmissibilityError, ConfigError
from bmcflow.flow import (
    FlowConfig,
    check_identities,
    init_state,
    interpolation_path,
    run,
)
from bmcflow.curvature import volume
from bmcflow.prescribed import parse_f_spec
from bmcflow.spectral import BoundaryField, make_grid

N_POLE = np.array([0.0, 0.0, 1.0])

EXPECTED_COLUMNS = (
    "t", "dt", "lambda", "E", "E_f", "F2", "lambda_prime", "vol_err",
    "min_u", "max_u", "S_x", "S_y", "S_z", "S_norm",
    "capmass_r0.1", "capmass_r0.2", "capmass_r0.5",
    "Lp_res_p2", "Lp_res_p4", "min_H_minus_lambda_f",
)


def perturbed_constant(grid, l=2, m=1, amp=0.1):
    L = grid.L
    c = np.zeros((L + 1, 2 * L + 1))
    c[0, L] = 1.0
    c[l, L + m] = amp
    return BoundaryField(grid, coeffs=c)


def ones_field(grid):
    return BoundaryField(grid, values=np.ones(grid.shape))


@pytest.fixture(scope="module")
def converged_run():
    g = make_grid(15)
    cfg = FlowConfig()
    state = init_state(perturbed_constant(g), parse_f_spec("1"), cfg)
    return run(state, cfg)


def test_config_validation():
    FlowConfig().validate()
    with pytest.raises(ConfigError):
        FlowConfig(dt0=0.1, dt_max=0.01).validate()
    with pytest.raises(ConfigError):
        FlowConfig(dt_min=0.0).validate()
    with pytest.raises(ConfigError):
        FlowConfig(conv_tol=0.0).validate()
    with pytest.raises(ConfigError):
        FlowConfig(t_end=-1.0).validate()
    with pytest.raises(ConfigError):
        FlowConfig(record_every=0).validate()


def test_stationary_pair_converges_immediately():
    """u = 1 with f = 1 has H = lambda f exactly: one recorded row."""
    g = make_grid(10)
    cfg = FlowConfig()
    state = init_state(ones_field(g), parse_f_spec("1"), cfg)
    traj = run(state, cfg)
    assert traj.verdict == "Converged"
    assert traj.reason.startswith("initial residual")
    assert len(traj.rows) == 1
    assert traj.rows[0][0] == 0.0


def test_init_rejects_nonpositive_data():
    g = make_grid(10)
    cfg = FlowConfig()
    u0 = BoundaryField(g, values=np.full(g.shape, -0.5))
    with pytest.raises(AdmissibilityError) as err:
        init_state(u0, parse_f_spec("1"), cfg)
    assert err.value.condition == "positivity"


def test_init_rejects_negative_weighted_volume():
    """A bubble sitting deep in the negative region of f = 1 - 2z has
    negative f-weighted volume: outside the admissible set."""
    g = make_grid(31)
    u0 = bubble_field(N_POLE, 0.4, g)
    with pytest.raises(AdmissibilityError):
        init_state(u0, parse_f_spec("1 - 2z"), FlowConfig())


def test_init_rescales_to_unit_volume():
    g = make_grid(15)
    u0 = BoundaryField(g, values=2.0 * perturbed_constant(g).values)
    state = init_state(u0, parse_f_spec("1"), FlowConfig())
    assert abs(volume(state.u) - 1.0) < 1e-13


def test_column_layout(converged_run):
    assert converged_run.columns == EXPECTED_COLUMNS


def test_convergence_verdict(converged_run):
    traj = converged_run
    assert traj.verdict == "Converged"
    assert len(traj.rows) > 100
    assert np.sqrt(traj.column("F2")[-1]) < traj.config.conv_tol


def test_normalized_energy_monotone(converged_run):
    d = np.diff(converged_run.column("E_f"))
    assert d.max() <= 1e-10


def test_volume_projection_holds(converged_run):
    assert np.abs(converged_run.column("vol_err")).max() <= 1e-9


def test_step_size_rules(converged_run):
    dt = converged_run.column("dt")[1:]
    cfg = converged_run.config
    assert dt.max() <= cfg.dt_max + 1e-15
    assert dt.min() >= cfg.dt_min
    assert (dt[1:] <= 2.0 * dt[:-1] + 1e-15).all()


def test_multiplier_window(converged_run):
    """lambda stays inside the frozen window [lambda1, lambda2]."""
    lam = converged_run.column("lambda")
    b = converged_run.bounds
    assert lam.min() >= b.lambda1 - 1e-9
    assert lam.max() <= b.lambda2 + 1e-9


def test_identities_report(converged_run):
    rep = check_identities(converged_run)
    assert rep["decay_rel_err"] <= 1e-2
    assert rep["lambda_prime_rel_err"] <= 1e-2
    assert rep["lambda_window_ok"]
    assert rep["barrier_ok_config"]
    assert rep["barrier_ok_observed"]
    assert rep["barrier_min"] >= rep["barrier_gamma_config"]
    assert rep["F2_sup"] > 0.0
    assert rep["lambda_prime_sup"] > 0.0


def test_identities_need_three_rows():
    g = make_grid(10)
    cfg = FlowConfig()
    traj = run(init_state(ones_field(g), parse_f_spec("1"), cfg), cfg)
    with pytest.raises(ValueError):
        check_identities(traj)


def test_horizon_verdict():
    g = make_grid(10)
    cfg = FlowConfig(t_end=0.1, conv_tol=1e-14)
    state = init_state(perturbed_constant(g, amp=0.05), parse_f_spec("1"), cfg)
    traj = run(state, cfg)
    assert traj.verdict == "HorizonReached"
    assert abs(traj.rows[-1][0] - 0.1) < 1e-9
    assert len(traj.rows) == 11


def test_record_every_thins_rows():
    g = make_grid(10)
    cfg = FlowConfig(t_end=0.1, conv_tol=1e-14, record_every=4)
    state = init_state(perturbed_constant(g, amp=0.05), parse_f_spec("1"), cfg)
    traj = run(state, cfg)
    # rows at steps 0, 4, 8 plus the forced final record at step 10
    assert len(traj.rows) == 4
    t = traj.column("t")
    assert abs(t[1] - 0.04) < 1e-12
    assert abs(t[-1] - 0.1) < 1e-9


def test_amplitude_guard_verdict():
    """An offset bubble (no longer a steady state) trips the max-u guard
    rather than the cap detector: its caps are below threshold at small
    radii but its peak exceeds the configured amplitude."""
    g = make_grid(31)
    cfg = FlowConfig(blowup_maxu=2.0)
    u0 = BoundaryField(g, values=bubble_field(N_POLE, 0.3, g).values + 0.2)
    state = init_state(u0, parse_f_spec("1"), cfg)
    traj = run(state, cfg)
    assert traj.verdict == "Concentrating"
    assert "max u exceeded" in traj.reason
    conc = traj.info["concentration"]
    assert conc["Q"] is not None
    assert conc["Q"][2] > 0.99


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_detector_fires_on_initial_data():
    g = make_grid(63)
    cfg = FlowConfig()
    state = init_state(bubble_field(N_POLE, 0.05, g), parse_f_spec("1"), cfg)
    traj = run(state, cfg)
    assert traj.verdict == "Concentrating"
    assert "initial data" in traj.reason
    assert len(traj.rows) == 1
    conc = traj.info["concentration"]
    assert len(conc["clusters"]) == 1
    assert not conc["uniqueness_warning"]


def test_unprojected_volume_drift_is_small():
    """Without projection the volume drifts at the truncation-error rate
    of the scheme, not catastrophically."""
    g = make_grid(15)
    cfg = FlowConfig(dt0=1e-3, dt_max=1e-3, t_end=0.5, conv_tol=1e-14,
                     vol_project=False)
    state = init_state(perturbed_constant(g), parse_f_spec("1"), cfg)
    traj = run(state, cfg)
    assert np.abs(traj.column("vol_err")).max() <= 1e-3


def test_csv_roundtrip(tmp_path, converged_run):
    path = tmp_path / "traj.csv"
    converged_run.to_csv(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    assert tuple(header) == EXPECTED_COLUMNS
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (len(converged_run.rows), len(EXPECTED_COLUMNS))
    assert np.array_equal(data[:, 0], converged_run.column("t"))
    assert np.array_equal(data[:, 4], converged_run.column("E_f"))


def test_verdict_document(tmp_path, converged_run):
    doc = converged_run.verdict_document()
    assert list(doc) == ["verdict", "reason", "t_final", "steps_recorded",
                         "config", "bounds", "concentration"]
    assert doc["verdict"] == "Converged"
    assert doc["steps_recorded"] == len(converged_run.rows)
    assert doc["config"]["dt_max"] == converged_run.config.dt_max
    assert set(doc["bounds"]) == {
        "lambda1", "lambda2", "Lambda0", "gamma", "c_star", "sigma", "beta",
        "condition_ii_ok", "f_mean", "f_max", "f_absmax", "min_H0",
    }
    path = tmp_path / "verdict.json"
    converged_run.write_verdict(path)
    with open(path) as fh:
        assert json.load(fh) == doc


def test_interpolation_path_endpoints():
    g = make_grid(15)
    u = perturbed_constant(g)
    f = parse_f_spec("1").gridded(g)
    top = interpolation_path(u, f, 1.0)
    assert np.abs(top.values - 1.0).max() < 1e-12
    bottom = interpolation_path(u, f, 0.5)
    ratio = bottom.values / u.values
    assert ratio.std() / ratio.mean() < 1e-12
    mid = interpolation_path(u, f, 0.75)
    assert abs(volume(mid) - 1.0) < 1e-12
    assert mid.values.min() > 0.0


def test_interpolation_path_validation():
    g = make_grid(10)
    u = ones_field(g)
    f = parse_f_spec("1").gridded(g)
    for bad in (0.3, 1.2):
        with pytest.raises(ValueError):
            interpolation_path(u, f, bad)
    with pytest.raises(ValueError):
        interpolation_path(u, f, 0.8, zeta=-1.0)
    neg = BoundaryField(g, values=np.full(g.shape, -1.0))
    with pytest.raises(AdmissibilityError):
        interpolation_path(neg, f, 0.8)
