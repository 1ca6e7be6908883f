"""Batch command-line front end.

Subcommands:

  flow run --config PATH [PATH ...] --out DIR [--jobs N]
      Run one experiment per JSON config; write trajectory.csv,
      verdict.json, and (when requested) identities.json per run.
      Exit 0 for Converged/HorizonReached, 2 for Concentrating,
      3 for scheme failures, 64 for unparseable input.

  morse check --f SPEC [--sym SPEC]
      Critical-point report as JSON on stdout.  Without --sym, exit 0
      iff the function is Morse and all four solvability conditions
      hold; with --sym, exit 0 iff either symmetric-case criterion
      applies (the Morse property is then not required).

  bubble probe --p X,Y,Z --eps E --L N
      Diagnostics of a single concentrated conformal factor against
      its closed forms, as JSON on stdout.

  selftest [--quick]
      Build sanity suites (DtN exactness, Parseval, trace inequality,
      conformal group law, pullback volume invariance) with a pass/fail
      table; exit 0 iff all pass.  Setting BMCFLOW_SELFTEST_BREAK_DTN
      corrupts the measured DtN factor as a negative control.

Experiment config schema (JSON):

  {
    "seed": 0,
    "L": 31,
    "n": 2,
    "f_spec": "2 - z^2",
    "u0_spec": {"type": "constant", "value": 1.0},
    "flow": {"dt_max": 0.01, "t_end": 50.0},
    "checks": ["identities"]
  }

u0_spec types: constant {value}; bubble {p, eps}; perturbation {base,
modes: [{l, m, amp}], random: {lmax, amp}} with the random block drawn
from the seeded generator.  All floats in outputs carry 17 significant
digits and runs with the same config are byte-identical.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .conformal import ConformalMap, boundary_map, bubble_cap_mass, bubble_field, center_of_mass
from .curvature import DEFAULT_CONSTANTS, mean_curvature, total_energy, volume
from .errors import AdmissibilityError, ConfigError, FlowFailure, NotMorseError, SpecParseError
from .flow import FlowConfig, check_identities, init_state, run
from .morse import check_conditions, check_symmetry
from .prescribed import parse_f_spec
from .spectral import BoundaryField, analyze, dtn_apply, make_grid
from . import conformal as _conformal

_EXIT_OK = 0
_EXIT_CONCENTRATING = 2
_EXIT_FAILURE = 3
_EXIT_USAGE = 64


def _build_u0(spec, grid, rng):
    kind = spec.get("type")
    if kind == "constant":
        return BoundaryField.constant(float(spec.get("value", 1.0)), grid)
    if kind == "bubble":
        p = np.asarray(spec["p"], dtype=float)
        return bubble_field(p, float(spec["eps"]), grid)
    if kind == "perturbation":
        L = grid.L
        coeffs = np.zeros((L + 1, 2 * L + 1))
        coeffs[0, L] = float(spec.get("base", 1.0))
        for mode in spec.get("modes", []):
            l, m = int(mode["l"]), int(mode["m"])
            if not (0 <= l <= L and -l <= m <= l):
                raise ConfigError(f"mode (l={l}, m={m}) outside the band limit L={L}")
            coeffs[l, m + L] += float(mode["amp"])
        rand = spec.get("random")
        if rand is not None:
            lmax = min(int(rand["lmax"]), L)
            amp = float(rand["amp"])
            for l in range(1, lmax + 1):
                coeffs[l, L - l:L + l + 1] += amp * rng.standard_normal(2 * l + 1)
        return BoundaryField.from_coeffs(coeffs, grid)
    raise ConfigError(f"unknown u0_spec type {kind!r}")


def _load_experiment(path):
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    L = int(doc.get("L", 31))
    n = int(doc.get("n", 2))
    if n != 2:
        raise ConfigError(f"only the two-sphere boundary (n=2) is supported, got n={n}")
    seed = int(doc.get("seed", 0))
    f_spec = doc.get("f_spec")
    if not isinstance(f_spec, str):
        raise ConfigError("config needs an f_spec string")
    flow_fields = doc.get("flow", {})
    unknown = set(flow_fields) - set(FlowConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown flow config fields: {sorted(unknown)}")
    if "p_list" in flow_fields:
        flow_fields["p_list"] = tuple(flow_fields["p_list"])
    if "cap_radii" in flow_fields:
        flow_fields["cap_radii"] = tuple(flow_fields["cap_radii"])
    config = FlowConfig(**flow_fields).validate()
    checks = doc.get("checks", ["identities"])
    u0_spec = doc.get("u0_spec", {"type": "constant", "value": 1.0})
    return {
        "seed": seed,
        "L": L,
        "n": n,
        "f_spec": f_spec,
        "u0_spec": u0_spec,
        "flow": config,
        "checks": list(checks),
        "raw": doc,
    }


def _experiment_echo(exp):
    cfg = exp["flow"]
    return {
        "seed": exp["seed"],
        "L": exp["L"],
        "n": exp["n"],
        "f_spec": exp["f_spec"],
        "u0_spec": exp["u0_spec"],
        "checks": exp["checks"],
        "flow": {
            "dt0": cfg.dt0,
            "dt_min": cfg.dt_min,
            "dt_max": cfg.dt_max,
            "t_end": cfg.t_end,
            "vol_project": cfg.vol_project,
            "conv_tol": cfg.conv_tol,
            "blowup_maxu": cfg.blowup_maxu,
            "record_every": cfg.record_every,
            "p_list": list(cfg.p_list),
            "Lambda0": cfg.Lambda0,
            "tau": cfg.tau,
            "cap_radii": list(cfg.cap_radii),
        },
    }


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)
        fh.write("\n")


def _run_experiment(config_path, out_dir):
    """One flow run; returns the exit code.  Outputs land in out_dir."""
    try:
        exp = _load_experiment(config_path)
        f = parse_f_spec(exp["f_spec"])
        grid = make_grid(exp["L"])
        rng = np.random.default_rng(exp["seed"])
        u0 = _build_u0(exp["u0_spec"], grid, rng)
    except (ConfigError, SpecParseError, KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"config error in {config_path}: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = _experiment_echo(exp)
    cfg = exp["flow"]
    try:
        state = init_state(u0, f, cfg)
    except AdmissibilityError as exc:
        print(f"admissibility failure ({exc.condition}): {exc}", file=sys.stderr)
        _write_json(out / "verdict.json",
                    {"verdict": "Failed", "reason": f"admissibility: {exc}", "experiment": echo})
        return _EXIT_FAILURE
    try:
        traj = run(state, cfg)
    except FlowFailure as exc:
        traj = exc.trajectory
        if traj is not None:
            traj.to_csv(out / "trajectory.csv")
            doc = traj.verdict_document()
            doc["experiment"] = echo
            _write_json(out / "verdict.json", doc)
        print(f"scheme failure: {exc}", file=sys.stderr)
        return _EXIT_FAILURE
    traj.to_csv(out / "trajectory.csv")
    doc = traj.verdict_document()
    doc["experiment"] = echo
    _write_json(out / "verdict.json", doc)
    if "identities" in exp["checks"] and len(traj.rows) >= 3:
        _write_json(out / "identities.json", check_identities(traj))
    if "morse" in exp["checks"]:
        _write_json(out / "morse.json", _morse_report_doc(check_conditions(f, grid=grid)))
    print(f"{traj.verdict}: {traj.reason} ({len(traj.rows)} rows) -> {out}")
    return _EXIT_CONCENTRATING if traj.verdict == "Concentrating" else _EXIT_OK


def _run_experiment_entry(args):
    return _run_experiment(*args)


def cmd_flow_run(args):
    configs = args.config
    if len(configs) == 1:
        return _run_experiment(configs[0], args.out)
    jobs = [(path, str(Path(args.out) / Path(path).stem)) for path in configs]
    codes = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            codes = list(pool.map(_run_experiment_entry, jobs))
    else:
        codes = [_run_experiment(*job) for job in jobs]
    return max(codes)


def _morse_report_doc(rep):
    doc = {
        "morse_ok": rep.morse_ok,
        "failure": rep.failure,
        "f_mean": rep.f_mean,
        "f_absmax": rep.f_absmax,
        "ratio": rep.ratio,
        "m": list(rep.m),
        "index_sum": rep.index_sum,
        "conditions": rep.conditions,
        "criteria_hold": rep.criteria_hold,
        "warnings": rep.warnings,
        "points": [
            {
                "location": [float(v) for v in cp.location],
                "value": cp.value,
                "laplacian": cp.laplacian,
                "index": cp.index,
                "hessian_eigs": list(cp.hessian_eigs),
                "counted": cp.counted,
            }
            for cp in rep.points
        ],
    }
    if rep.k_verdict is not None:
        doc["k_system"] = {
            "solvable": rep.k_verdict.solvable,
            "k": list(rep.k_verdict.k),
            "reason": rep.k_verdict.reason,
        }
    return doc


def cmd_morse_check(args):
    try:
        f = parse_f_spec(args.f)
    except SpecParseError as exc:
        print(f"bad f spec: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    grid = make_grid(args.L)
    try:
        rep = check_conditions(f, grid=grid)
    except NotMorseError as exc:
        # check_conditions reports rather than raises; keep the net anyway
        rep = None
        doc = {"morse_ok": False, "failure": str(exc)}
    if rep is not None:
        doc = _morse_report_doc(rep)
    ok = bool(doc.get("criteria_hold")) and doc.get("morse_ok", False)
    if args.sym is not None:
        try:
            sym = check_symmetry(f, args.sym, grid=grid)
        except SpecParseError as exc:
            print(f"bad symmetry spec: {exc}", file=sys.stderr)
            return _EXIT_USAGE
        doc["symmetry"] = sym
        ok = sym["invariant_criteria"]["applies"] or sym["fixed_set_max_criteria"]["applies"]
    print(json.dumps(doc, indent=2, default=_json_default))
    return _EXIT_OK if ok else 1


def cmd_bubble_probe(args):
    try:
        p = np.array([float(v) for v in args.p.split(",")], dtype=float)
        if p.shape != (3,) or not np.linalg.norm(p) > 0:
            raise ValueError("need three comma-separated components, not all zero")
        if not 0.0 < args.eps <= 1.0:
            raise ValueError(f"eps must lie in (0, 1], got {args.eps}")
        grid = make_grid(args.L)
    except (ValueError, ConfigError) as exc:
        print(f"bad probe arguments: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    c = DEFAULT_CONSTANTS
    u = bubble_field(p, args.eps, grid)
    H = mean_curvature(u)
    S, Q = center_of_mass(u)
    radii = (0.1, 0.2, 0.5)
    doc = {
        "p": [float(v) for v in p / np.linalg.norm(p)],
        "eps": args.eps,
        "L": args.L,
        "volume_err": volume(u) - 1.0,
        "energy": total_energy(u),
        "max_H_deviation": float(np.abs(H.values - 1.0).max()),
        "peak": float(u.values.max()),
        "peak_closed_form": ((2.0 - args.eps) / args.eps) ** ((c.n - 1.0) / 2.0),
        "cap_mass_fraction": {f"{r:g}": _grid_cap_fraction(u, r) for r in radii},
        "cap_mass_closed_form": {f"{r:g}": bubble_cap_mass(args.eps, r) for r in radii},
        "center_of_mass_S": [float(v) for v in S],
        "Q": None if Q is None else [float(v) for v in Q],
    }
    print(json.dumps(doc, indent=2, default=_json_default))
    return _EXIT_OK


def _grid_cap_fraction(u, r):
    c = DEFAULT_CONSTANTS
    W = u.values**c.two_sharp
    cw = analyze(W, u.grid)
    mu = _conformal._cap_kernel(u.grid.L, r)
    cap = _conformal.synthesize(cw * mu[:, None], u.grid)
    return float(cap.max()) / c.omega_n


def _break_dtn_amount():
    """Negative-control hook: scales the measured DtN factor in selftest."""
    raw = os.environ.get("BMCFLOW_SELFTEST_BREAK_DTN", "")
    if not raw:
        return 0.0
    try:
        return float(raw)
    except ValueError:
        return 0.01


def _suite_dtn(L):
    mult = np.arange(L + 1, dtype=float)
    corrupt = _break_dtn_amount()
    worst = 0.0
    for l in range(L + 1):
        coeffs = np.zeros((L + 1, 2 * L + 1))
        m = min(l, 1)
        coeffs[l, m + L] = 1.0
        got = dtn_apply(coeffs)[l, m + L]
        got *= 1.0 + corrupt
        err = abs(got - mult[l]) / max(mult[l], 1.0)
        worst = max(worst, err)
    return worst < 1e-10, f"max rel err {worst:.3e}"


def _suite_parseval(L, rng):
    grid = make_grid(L)
    coeffs = rng.standard_normal((L + 1, 2 * L + 1))
    for l in range(L + 1):
        coeffs[l, :L - l] = 0.0
        coeffs[l, L + l + 1:] = 0.0
    u = BoundaryField.from_coeffs(coeffs, grid)
    lhs = float(np.sum(coeffs**2))
    rhs = grid.integrate(u.values**2)
    err = abs(lhs - rhs) / max(abs(lhs), 1.0)
    return err < 1e-10, f"rel err {err:.3e}"


def _suite_trace(L, rng, n_fields):
    grid = make_grid(L)
    c = DEFAULT_CONSTANTS
    worst = np.inf
    for _ in range(n_fields):
        coeffs = np.zeros((L + 1, 2 * L + 1))
        lmax = min(6, L)
        for l in range(1, lmax + 1):
            coeffs[l, L - l:L + l + 1] = 0.1 * rng.standard_normal(2 * l + 1) / (1 + l) ** 2
        coeffs[0, L] = 1.0
        u = BoundaryField.from_coeffs(coeffs, grid)
        if u.values.min() <= 0:
            continue
        margin = total_energy(u) - volume(u) ** (2.0 / c.two_sharp)
        worst = min(worst, margin)
    return worst >= -1e-10, f"min margin {worst:.3e}"


def _suite_group_law(L, rng):
    p = np.array([0.0, 0.0, 1.0])
    m1 = ConformalMap(p, 0.5)
    m2 = ConformalMap(p, 0.4)
    m12 = ConformalMap(p, 0.2)
    x = rng.standard_normal((1000, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    err = float(np.abs(boundary_map(m2, boundary_map(m1, x)) - boundary_map(m12, x)).max())
    return err < 1e-10, f"max dev {err:.3e}"


def _suite_volume_invariance(L, rng):
    from .conformal import pullback_normalized
    grid = make_grid(L)
    coeffs = np.zeros((L + 1, 2 * L + 1))
    coeffs[0, L] = 1.0
    lmax = min(4, L)
    for l in range(1, lmax + 1):
        coeffs[l, L - l:L + l + 1] = 0.05 * rng.standard_normal(2 * l + 1) / (1 + l) ** 2
    u = BoundaryField.from_coeffs(coeffs, grid)
    worst = 0.0
    for _ in range(3):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        mp = ConformalMap(axis, float(rng.uniform(0.6, 1.6)))
        v = pullback_normalized(u, mp)
        worst = max(worst, abs(volume(v) - volume(u)))
    return worst < 1e-7, f"max vol dev {worst:.3e}"


def cmd_selftest(args):
    L = 8 if args.quick else 31
    n_fields = 20 if args.quick else 100
    rng = np.random.default_rng(1234)
    suites = [
        ("dtn_exactness", lambda: _suite_dtn(L)),
        ("parseval", lambda: _suite_parseval(L, rng)),
        ("trace_inequality", lambda: _suite_trace(L, rng, n_fields)),
        ("conformal_group_law", lambda: _suite_group_law(L, rng)),
        ("pullback_volume_invariance", lambda: _suite_volume_invariance(min(L, 15), rng)),
    ]
    all_ok = True
    for name, fn in suites:
        ok, detail = fn()
        all_ok &= ok
        print(f"{'ok  ' if ok else 'FAIL'} {name:30s} {detail}")
    print("selftest:", "pass" if all_ok else "FAIL", f"(L={L})")
    return _EXIT_OK if all_ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="bmcflow",
                                     description="Boundary mean-curvature flow experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_flow = sub.add_parser("flow", help="flow experiments")
    flow_sub = p_flow.add_subparsers(dest="flow_command", required=True)
    p_run = flow_sub.add_parser("run", help="run experiments from JSON configs")
    p_run.add_argument("--config", nargs="+", required=True, help="experiment config path(s)")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel processes for multiple configs")
    p_run.set_defaults(func=cmd_flow_run)

    p_morse = sub.add_parser("morse", help="critical-point analysis")
    morse_sub = p_morse.add_subparsers(dest="morse_command", required=True)
    p_check = morse_sub.add_parser("check", help="report solvability criteria for a target function")
    p_check.add_argument("--f", required=True, help="target function spec, e.g. '2 - z^2'")
    p_check.add_argument("--sym", default=None, help="symmetry spec: mirror(AXIS) or rotation(AXIS, k)")
    p_check.add_argument("--L", type=int, default=31, help="band limit for quadrature (default 31)")
    p_check.set_defaults(func=cmd_morse_check)

    p_bubble = sub.add_parser("bubble", help="concentrated conformal factors")
    bubble_sub = p_bubble.add_subparsers(dest="bubble_command", required=True)
    p_probe = bubble_sub.add_parser("probe", help="compare one bubble against its closed forms")
    p_probe.add_argument("--p", required=True, help="center direction X,Y,Z")
    p_probe.add_argument("--eps", type=float, required=True, help="concentration parameter in (0, 1]")
    p_probe.add_argument("--L", type=int, default=31, help="band limit (default 31)")
    p_probe.set_defaults(func=cmd_bubble_probe)

    p_self = sub.add_parser("selftest", help="build sanity checks")
    p_self.add_argument("--quick", action="store_true", help="small grid, < 5 s")
    p_self.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
