"""Command-line front end.

Every command takes an optional JSON config (``--config``) whose keys are the
fields of :class:`RunConfig`; command-line flags override the file and the
``SSVAC_OUTPUT_DIR`` environment variable overrides the output directory
unless ``--output-dir`` is given.

Exit codes: 0 success, 2 validation failure, 3 numerical failure, 4 bad config.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import _io
from .builder import (
    BuildError,
    build,
    classify_regime,
    critical_machs,
    _gamma0,
    _gamma6,
    _sigma_prime,
)
from .core import GAMMA3_TOL, ParameterError, Params, critical_points, derive, eval_FGD, in_cone
from .ode import IntegrationError, Tolerances, numerics
from .oracle import CFLError, NegativeDensityError, cross_validate, default_domain
from .reconstruct import (
    FlowEvaluator,
    IllConditionedFit,
    OutOfDomainError,
    check_initial_data_recovery,
    fit_decay_exponent,
    interface_and_shock_paths,
    physical_jump_check,
    sample_flow,
    write_paths_csv,
)
from .shock import NoIntersectionError, hugoniot_locus, partner_point, rh_residual_relative

log = logging.getLogger("ssvac")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_CONFIG = 0, 2, 3, 4
OUTPUT_ENV = "SSVAC_OUTPUT_DIR"

NUMERICAL_ERRORS = (BuildError, IntegrationError, NoIntersectionError, OutOfDomainError,
                    IllConditionedFit, NegativeDensityError, ArithmeticError)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """All run options.

    Either ``mach`` or ``u_plus`` fixes the flow at the data end; with
    ``u_plus`` the Mach number is ``u_plus / c_plus``.  Defaults:

    ========================  ==========================================
    ``gamma``, ``lambda``     required
    ``mach``                  0
    ``a``, ``c_plus``         1
    ``rtol``, ``atol``        1e-10, 1e-12 (integrator)
    ``launch_radius``         1e-6 (seed distance from the data-end point)
    ``triple_delta``          1e-5 (stop radius around triple points)
    ``jump_xtol``             1e-15 (shock-partner root solve, in ln R'/R)
    ``output_dir``            ``ssvac_out``
    ``times``                 [1.0] (profile times for ``solve``)
    ``n_profile``             801 profile samples
    ``mach_min/max``, ``n_mach``  sweep range, 0 samples means empty
    ``build``                 sweep also builds each sample (false)
    ``workers``               sweep worker processes (1)
    ``skip_oracle``           validate without the FV cross-check
    ``n_cells``, ``t0``, ``t1``, ``cfl``  FV run (4000, 1.0, 1.2, 0.45)
    ``trajectory``            ``gamma0``, ``sigma_prime`` or ``gamma6``
    ``locus``                 trace also writes the Hugoniot locus
    ========================  ==========================================
    """

    gamma: float | None = None
    lam: float | None = None
    mach: float | None = None
    u_plus: float | None = None
    a: float = 1.0
    c_plus: float = 1.0
    rtol: float = 1e-10
    atol: float = 1e-12
    launch_radius: float = 1e-6
    triple_delta: float = 1e-5
    jump_xtol: float = 1e-15
    output_dir: str = "ssvac_out"
    times: tuple[float, ...] = (1.0,)
    n_profile: int = 801
    mach_min: float = -5.0
    mach_max: float = 5.0
    n_mach: int = 0
    build: bool = False
    workers: int = 1
    skip_oracle: bool = False
    n_cells: int = 4000
    t0: float = 1.0
    t1: float = 1.2
    cfl: float = 0.45
    trajectory: str = "gamma0"
    locus: bool = False

    # JSON uses "lambda"; the attribute cannot
    KEY_ALIASES = {"lambda": "lam"}

    def params(self) -> Params:
        if self.gamma is None or self.lam is None:
            raise ConfigError("gamma and lambda are required")
        return Params(self.gamma, self.lam, self.effective_mach(), self.a, self.c_plus)

    def effective_mach(self) -> float:
        if self.u_plus is not None:
            return self.u_plus / self.c_plus
        return 0.0 if self.mach is None else self.mach

    def tolerances(self) -> Tolerances:
        try:
            return Tolerances(self.rtol, self.atol, self.launch_radius, self.triple_delta, self.jump_xtol)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value):
    """Type-check one config value against the field's declared type."""
    typ = str(_FIELDS[name].type)
    if value is None:
        if "None" in typ:
            return None
        raise ConfigError(f"{name} may not be null")
    if typ.startswith("tuple"):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigError(f"{name} must be a non-empty list of numbers")
        return tuple(_coerce_number(name, v) for v in value)
    if typ.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if typ.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if typ.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    return _coerce_number(name, value)


def _coerce_number(name, v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{name} must be a finite number, got {v!r}")
    return float(v)


def config_from_mapping(data: dict, base: RunConfig | None = None) -> RunConfig:
    """Parse a mapping into a config; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    values = {}
    for key, value in data.items():
        name = RunConfig.KEY_ALIASES.get(key, key)
        if name not in _FIELDS or key == "lam":
            raise ConfigError(f"unknown config key {key!r}")
        values[name] = _coerce(name, value)
    return replace(base or RunConfig(), **values)


def validate_config(cfg: RunConfig, command: str) -> None:
    if command != "sweep" or cfg.gamma is not None:
        try:
            cfg.params()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None
    if cfg.mach is not None and cfg.u_plus is not None:
        raise ConfigError("give either mach or u_plus, not both")
    cfg.tolerances()
    if any(t <= 0 for t in cfg.times):
        raise ConfigError("profile times must be positive")
    if cfg.n_profile < 2:
        raise ConfigError("n_profile must be at least 2")
    if cfg.n_mach < 0:
        raise ConfigError("n_mach must be non-negative")
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")
    if cfg.n_cells < 10:
        raise ConfigError("n_cells must be at least 10")
    if not 0 < cfg.t0 <= cfg.t1:
        raise ConfigError("need 0 < t0 <= t1")
    if not 0 < cfg.cfl <= 0.9:
        raise ConfigError("cfl must lie in (0, 0.9]")
    if cfg.trajectory not in ("gamma0", "sigma_prime", "gamma6"):
        raise ConfigError(f"unknown trajectory {cfg.trajectory!r}")


# ---------------------------------------------------------------------------
# commands


def cmd_critical_points(cfg: RunConfig, out: Path) -> int:
    d = derive(cfg.params())
    cols = ["id", "V", "C", "kind", "primary_slope", "secondary_slope", "in_cone", "xi_limit"]
    rows = []
    for cp in critical_points(d):
        V, C = cp.location
        rows.append([cp.id, V, C, cp.kind, cp.primary_slope, cp.secondary_slope,
                     bool(in_cone(V, C)), cp.xi_limit])
    _io.write_csv(out / "critical_points.csv", cols, rows)
    print(",".join(cols))
    for r in rows:
        print(",".join(_io.fmt(v) for v in r))
    return EXIT_OK


def _profile_domain(sol, t: float) -> tuple[float, float]:
    if sol.params.lam > 0 and not sol.is_partial:
        return default_domain(sol, t, t)
    scale = t ** (1.0 / sol.params.lam)
    feats = [0.0, 1.0, sol.xi_v or 0.0, sol.xi_s or 0.0, sol.xi_star or 0.0]
    lo, hi = min(feats) * scale, max(feats) * scale
    span = hi - lo
    return lo - 0.25 * span, hi + 0.75 * span


def diagnostics(sol, times, evaluator: FlowEvaluator | None = None) -> dict:
    """Decay fit, interface data, jump residuals and initial-data recovery."""
    ev = evaluator or FlowEvaluator(sol)
    t = times[0]
    out = {"regime": sol.regime.tag, "xi_v": sol.xi_v, "xi_s": sol.xi_s, "xi_star": sol.xi_star,
           "vacuum_endpoint": sol.vacuum_endpoint, "alpha": sol.decay_exponent_alpha,
           "partial": sol.is_partial, "boundary_gaps": sol.boundary_gaps()}
    if not sol.is_partial:
        fit = fit_decay_exponent(sol, t, evaluator=ev)
        out.update(alpha_hat=fit.alpha_hat, c2x_limit=fit.c2x_limit, c2x_predicted=fit.c2x_predicted)
        rec = check_initial_data_recovery(sol, 1.0, np.geomspace(1e-2, 1e-6, 5), evaluator=ev)
        out["recovery"] = {"t": rec["t"].tolist(), "res_u": rec["res_u"].tolist(), "res_c": rec["res_c"].tolist()}
    if sol.jump is not None:
        r1, r2 = rh_residual_relative(sol.jump.P_minus, sol.jump.P_plus, sol.derived)
        phys = physical_jump_check(sol, t)
        out["rh_residuals"] = {"similarity_mass": r1, "similarity_momentum": r2,
                               "physical_mass": phys["res_mass"], "physical_momentum": phys["res_momentum"]}
        out["two_shock_entropy"] = phys["two_shock_entropy"]
    return out


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    sol = build(cfg.params())
    sol.write(out, "solution")
    ev = FlowEvaluator(sol)
    for i, t in enumerate(cfg.times):
        lo, hi = _profile_domain(sol, t)
        x = np.linspace(lo, hi, cfg.n_profile)
        sample_flow(sol, t, x, ev).to_csv(out / f"profile_t{i}.csv", header=f"t = {_io.fmt(t)}")
    write_paths_csv(out / "paths.csv", interface_and_shock_paths(sol, list(cfg.times)))
    diag = diagnostics(sol, cfg.times, ev)
    _io.write_json(out / "diagnostics.json", diag)
    print(_io.dumps({k: diag[k] for k in ("regime", "xi_v", "xi_s", "xi_star", "alpha", "alpha_hat")
                     if k in diag}))
    return EXIT_OK


def _sweep_sample(args):
    params, tol = args
    with numerics(tol):
        try:
            sol = build(params)
        except NUMERICAL_ERRORS as exc:
            return {"error": f"{type(exc).__name__}: {exc}"}
    return {"vacuum_endpoint": sol.vacuum_endpoint, "xi_v": sol.xi_v, "xi_s": sol.xi_s,
            "xi_star": sol.xi_star, "built_regime": sol.regime.tag, "error": ""}


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    cols = ["mach", "regime"]
    if cfg.build:
        cols += ["vacuum_endpoint", "xi_v", "xi_s", "xi_star", "error"]
    machs = np.linspace(cfg.mach_min, cfg.mach_max, cfg.n_mach) if cfg.mach_max >= cfg.mach_min else []
    rows, thresholds = [], {}
    if len(machs):
        base = cfg.params()
        d = derive(base)
        thresholds["ell"] = d.ell
        if d.lam > 0:
            thresholds["minus_ell"] = -d.ell
            if d.gamma > 3.0 + GAMMA3_TOL:
                thresholds.update(critical_machs(d.gamma, d.lam))
        samples = [base.with_mach(float(m)) for m in machs]
        tags = []
        for p in samples:
            try:
                tags.append(classify_regime(p).tag)
            except NUMERICAL_ERRORS as exc:
                tags.append(f"error: {exc}")
        built = [{}] * len(samples)
        if cfg.build:
            jobs = [(p, cfg.tolerances()) for p in samples]
            if cfg.workers > 1:
                with ProcessPoolExecutor(cfg.workers) as pool:
                    built = list(pool.map(_sweep_sample, jobs))
            else:
                built = [_sweep_sample(j) for j in jobs]
        for m, tag, b in zip(machs, tags, built):
            row = [m, tag]
            if cfg.build:
                row += [b.get(k) for k in ("vacuum_endpoint", "xi_v", "xi_s", "xi_star", "error")]
            rows.append(row)
    _io.write_csv(out / "sweep.csv", cols, rows)
    _io.write_json(out / "thresholds.json", thresholds)
    print(",".join(cols))
    for r in rows:
        print(",".join(_io.fmt(v) for v in r))
    return EXIT_OK


def _check(name, value, tol, ok=None, note=""):
    if ok is None:
        ok = bool(np.isfinite(value) and value <= tol)
    return {"name": name, "status": "pass" if ok else "fail", "value": value, "tolerance": tol, "note": note}


def _skipped(name, note):
    return {"name": name, "status": "skipped", "value": None, "tolerance": None, "note": note}


def run_checks(cfg: RunConfig) -> list[dict]:
    """The invariant suite for one configuration, plus the FV cross-check."""
    params = cfg.params()
    d = derive(params)
    checks = []
    worst = 0.0
    for cp in critical_points(d):
        if cp.id == "P0":
            continue
        V, C = cp.location
        F, G, _ = eval_FGD(V, C, d)
        # cubic residuals, relative to the size of the point
        worst = max(worst, max(abs(F), abs(G)) / (1.0 + abs(V) + abs(C)) ** 3)
    checks.append(_check("critical_point_residual", worst, 1e-12))
    try:
        sol = build(params, check=False)
    except NUMERICAL_ERRORS as exc:
        checks.append(_check("build", math.nan, None, ok=False, note=f"{type(exc).__name__}: {exc}"))
        return checks
    expected = classify_regime(params).tag
    checks.append(_check("regime_matches_thresholds", 0.0, None, ok=sol.regime.tag == expected,
                         note=f"{sol.regime.tag} vs {expected}"))
    gaps = sol.boundary_gaps()
    checks.append(_check("segment_boundary_gap", max(gaps, default=0.0), 1e-6))
    xis = np.concatenate([seg.xi for seg in sol.segments])
    # backward steps relative to the local |xi|
    back_steps = -np.diff(xis) * (1 if d.lam < 0 else -1) / np.maximum(np.abs(xis[1:]), 1e-300)
    checks.append(_check("xi_monotone", float(max(back_steps.max(), 0.0)) if len(back_steps) else 0.0, 1e-9))
    if sol.jump is not None:
        pair = sol.jump
        r = max(rh_residual_relative(pair.P_minus, pair.P_plus, d))
        checks.append(_check("rh_residual", r, 1e-10))
        back = partner_point(pair.P_plus, d, math.copysign(1.0, pair.xi_s / d.lam))
        inv = math.hypot(back[0] - pair.P_minus[0], back[1] - pair.P_minus[1])
        checks.append(_check("jump_involution", inv, 1e-9))
        phys = physical_jump_check(sol, cfg.t0)
        checks.append(_check("two_shock_entropy", 0.0, None, ok=phys["two_shock_entropy"]))
        checks.append(_check("physical_rh_residual", max(phys["res_mass"], phys["res_momentum"]), 1e-10))
    else:
        checks.append(_skipped("rh_residual", "no shock"))
    if sol.is_partial:
        checks.append(_check("xi_star_finite", 0.0, None, ok=sol.xi_star is not None and math.isfinite(sol.xi_star)))
        checks.append(_skipped("oracle_l1_error", "partial flow"))
        return checks
    ev = FlowEvaluator(sol)
    try:
        fit = fit_decay_exponent(sol, cfg.t0, evaluator=ev)
        checks.append(_check("decay_exponent", abs(fit.alpha_hat - sol.decay_exponent_alpha), 0.02,
                             note=f"alpha_hat={_io.fmt(fit.alpha_hat)}"))
        if fit.c2x_limit is not None:
            rel = abs(fit.c2x_limit - fit.c2x_predicted) / abs(fit.c2x_predicted)
            checks.append(_check("interface_c2x_limit", rel, 1e-2))
        rec = check_initial_data_recovery(sol, 1.0, [1e-6], evaluator=ev)
        checks.append(_check("initial_data_recovery", max(rec["final_u"], rec["final_c"]), 1e-3))
    except NUMERICAL_ERRORS as exc:
        checks.append(_check("reconstruction", math.nan, None, ok=False, note=str(exc)))
    if cfg.skip_oracle:
        checks.append(_skipped("oracle_l1_error", "--skip-oracle"))
    elif d.lam < 0:
        checks.append(_skipped("oracle_l1_error", "fixed interface with unbounded far field"))
    else:
        try:
            cv = cross_validate(sol, cfg.t0, cfg.t1, cfg.n_cells, cfl=cfg.cfl)
            checks.append(_check("oracle_l1_error", max(cv.l1_rel_error_u, cv.l1_rel_error_c), 0.03))
        except NUMERICAL_ERRORS as exc:
            checks.append(_check("oracle_l1_error", math.nan, 0.03, ok=False, note=str(exc)))
    return checks


def cmd_validate(cfg: RunConfig, out: Path) -> int:
    checks = run_checks(cfg)
    ok = all(c["status"] != "fail" for c in checks)
    report = {"ok": ok, "checks": checks}
    _io.write_json(out / "validation.json", report)
    print(_io.dumps(report))
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_trace(cfg: RunConfig, out: Path) -> int:
    params = cfg.params()
    d = derive(params)
    if cfg.trajectory == "gamma0":
        tr = _gamma0(params, d)
    elif cfg.trajectory == "sigma_prime":
        tr = _sigma_prime(d.gamma, d.lam)
    else:
        if not d.gamma > 3.0 + GAMMA3_TOL:
            raise ConfigError("gamma6 exists only for gamma > 3")
        tr = _gamma6(d.gamma, d.lam)
    tr.to_csv(out / f"trace_{cfg.trajectory}.csv", header=f"{tr.start_anchor} -> {tr.end_anchor}")
    if cfg.locus:
        hugoniot_locus(tr, d).to_csv(out / f"locus_{cfg.trajectory}.csv")
    print(_io.dumps({"trajectory": cfg.trajectory, "start_anchor": tr.start_anchor,
                     "end_anchor": tr.end_anchor, "n_points": len(tr)}))
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, out: Path) -> int:
    sol = build(cfg.params())
    try:
        cv = cross_validate(sol, cfg.t0, cfg.t1, cfg.n_cells, cfl=cfg.cfl, keep_state=True)
    except CFLError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cv.final.to_csv(out / "oracle_snapshot.csv", header=f"t = {_io.fmt(cfg.t1)}")
    sample_flow(sol, cfg.t1, cv.final.x).to_csv(out / "oracle_exact.csv", header=f"t = {_io.fmt(cfg.t1)}")
    report = {"l1_rel_error_u": cv.l1_rel_error_u, "l1_rel_error_c": cv.l1_rel_error_c,
              "n_cells": cv.n_cells, "domain": list(cv.domain), "t0": cfg.t0, "t1": cfg.t1}
    _io.write_json(out / "oracle.json", report)
    print(_io.dumps(report))
    return EXIT_OK


COMMANDS = {
    "critical-points": cmd_critical_points,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "trace": cmd_trace,
    "oracle": cmd_oracle,
}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    """Malformed command lines are configuration errors, not validation failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssvac", description="Self-similar Euler flows with a vacuum interface.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--gamma", type=float)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--mach", type=float)
    common.add_argument("--u-plus", dest="u_plus", type=float)
    common.add_argument("--c-plus", dest="c_plus", type=float)
    common.add_argument("--a", type=float)
    common.add_argument("--rtol", type=float)
    common.add_argument("--atol", type=float)
    common.add_argument("--launch-radius", dest="launch_radius", type=float)
    common.add_argument("--triple-delta", dest="triple_delta", type=float)
    common.add_argument("--jump-xtol", dest="jump_xtol", type=float)
    common.add_argument("-o", "--output-dir", dest="output_dir")
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "solve":
            sp.add_argument("--times", type=float, nargs="+")
            sp.add_argument("--n-profile", dest="n_profile", type=int)
        elif name == "sweep":
            sp.add_argument("--mach-min", dest="mach_min", type=float)
            sp.add_argument("--mach-max", dest="mach_max", type=float)
            sp.add_argument("--n-mach", dest="n_mach", type=int)
            sp.add_argument("--build", action="store_true", default=None)
            sp.add_argument("--workers", type=int)
        elif name in ("validate", "oracle"):
            if name == "validate":
                sp.add_argument("--skip-oracle", dest="skip_oracle", action="store_true", default=None)
            sp.add_argument("--n-cells", dest="n_cells", type=int)
            sp.add_argument("--t0", type=float)
            sp.add_argument("--t1", type=float)
            sp.add_argument("--cfl", type=float)
        elif name == "trace":
            sp.add_argument("--trajectory", choices=["gamma0", "sigma_prime", "gamma6"])
            sp.add_argument("--locus", action="store_true", default=None)
    return p


def load_config(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from None
        cfg = config_from_mapping(data, cfg)
    env_out = os.environ.get(OUTPUT_ENV)
    if env_out:
        cfg = replace(cfg, output_dir=env_out)
    flags = {k: v for k, v in vars(ns).items() if k not in ("config", "command", "verbose") and v is not None}
    flags = {name: _coerce(name, value) for name, value in flags.items()}
    if "mach" in flags:
        cfg = replace(cfg, u_plus=None)
    elif "u_plus" in flags:
        cfg = replace(cfg, mach=None)
    cfg = replace(cfg, **flags)
    validate_config(cfg, ns.command)
    return cfg


def main(argv=None) -> int:
    try:
        ns = _parser().parse_args(argv)
    except SystemExit as exc:  # --help and malformed command lines
        return exc.code
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(ns)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with numerics(cfg.tolerances()):
            return COMMANDS[ns.command](cfg, out)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
