"""Command-line driver: ``prandtl-lab {spectral,quasimode,scan,steady,report}``.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
Numeric outputs are deterministic; wall-clock data goes to ``run_log.json``
only, so ``manifest.json`` is byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .baseflow import CATALOG, analytic_profile, critical_point_curve, export_flow_csv, \
    find_critical_point, validate_baseflow
from .errors import CompatibilityError, InvalidArgument, NoConvergence, NumericFailure, \
    StabilityError, TrackingError
from .evolution import evolve_quasimode_consistency, export_scan_csv, illposedness_scan
from .quasimode import QuasimodeConfig, export_reports, prepare, residual_bound_check, summary_row
from .spectral import DEFAULT_COUNT, DEFAULT_Z_MAX, auxiliary_eigenproblem, cache_key, \
    find_tau, load_solution, save_solution
from .core import ZGrid
from .vonmises import MarchResolution, blasius, check_oleinik_conditions, invert_von_mises, \
    load_inflow_csv, von_mises_march

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
NUMERIC_ERRORS = (NoConvergence, NumericFailure, StabilityError, TrackingError)


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------------

@dataclass
class Config:
    flow: dict = field(default_factory=lambda: {"name": "critical_shear"})
    spectral: dict = field(default_factory=lambda: {"z_max": DEFAULT_Z_MAX, "n": DEFAULT_COUNT,
                                                    "tol": 1e-10})
    quasimode: dict = field(default_factory=lambda: {"eps_list": [1e-2, 2.5e-3, 1e-3],
                                                     "beta": 0.5})
    evolution: dict = field(default_factory=lambda: {"k_list": [100, 400, 1600], "sigma": 0.0,
                                                     "x_window": 1.0, "control": "monotone_exp",
                                                     "consistency_eps": 1e-2})
    steady: dict = field(default_factory=dict)
    output_dir: str = "out"
    rng_seed: int = 0

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


def _positive_list(name, values):
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{name} must be a nonempty list")
    try:
        vals = [float(v) for v in values]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must contain numbers") from None
    if any(v <= 0 for v in vals):
        raise ConfigError(f"{name} entries must be positive")
    return vals


def load_config(path: str | None, out: str | None = None) -> Config:
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {path} does not exist")
        text = p.read_text()
        try:
            raw = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        raw = raw or {}
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
    cfg = Config()
    known = set(asdict(cfg))
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, val in raw.items():
        base = getattr(cfg, key)
        if isinstance(base, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{key} must be a mapping")
            setattr(cfg, key, {**base, **val})
        else:
            setattr(cfg, key, val)
    if out is not None:
        cfg.output_dir = out
    base = Path(path).parent if path else Path.cwd()
    validate_config(cfg, base_dir=base)
    for section, key in ((cfg.flow, "steady_file"), (cfg.steady, "inflow")):
        if section.get(key) and (base / section[key]).exists():
            section[key] = str(base / section[key])
    return cfg


def validate_config(cfg: Config, base_dir: Path = Path.cwd()) -> None:
    name = cfg.flow.get("name")
    steady_file = cfg.flow.get("steady_file") or cfg.steady.get("inflow")
    if name is None and steady_file is None:
        raise ConfigError("flow.name or flow.steady_file is required")
    if name is not None and name not in CATALOG:
        raise ConfigError(f"flow.name must be one of {CATALOG}")
    if steady_file is not None and not (base_dir / steady_file).exists() \
            and not Path(steady_file).exists():
        raise ConfigError(f"steady inflow file {steady_file} does not exist")
    _positive_list("quasimode.eps_list", cfg.quasimode.get("eps_list"))
    if any(e >= 1 for e in cfg.quasimode["eps_list"]):
        raise ConfigError("quasimode.eps_list entries must lie in (0, 1)")
    _positive_list("evolution.k_list", cfg.evolution.get("k_list"))
    sigma = float(cfg.evolution.get("sigma", 0.0))
    if not 0 <= sigma < 0.5:
        raise ConfigError("evolution.sigma must lie in [0, 1/2)")
    if cfg.evolution.get("delta") is not None and float(cfg.evolution["delta"]) < 0:
        raise ConfigError("evolution.delta must be non-negative")
    for key in ("z_max", "n", "tol"):
        if key in cfg.spectral and not float(cfg.spectral[key]) > 0:
            raise ConfigError(f"spectral.{key} must be positive")
    cut = cfg.quasimode.get("cutoff")
    if cut is not None and (not isinstance(cut, dict) or not {"inner", "outer"} <= set(cut)):
        raise ConfigError("quasimode.cutoff must be a mapping with inner and outer")
    if not isinstance(cfg.rng_seed, int):
        raise ConfigError("rng_seed must be an integer")


def build_flow(cfg: Config):
    params = {k: v for k, v in cfg.flow.items() if k in ("U", "A", "A1", "p_x")}
    try:
        return analytic_profile(cfg.flow["name"], **params)
    except InvalidArgument as exc:
        raise ConfigError(f"flow: {exc}") from None


# --- output helpers ----------------------------------------------------------------

def _dump_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialise {type(obj)}")


def _log(out: Path, command: str, seconds: float, status: str) -> None:
    path = out / "run_log.json"
    log = json.loads(path.read_text()) if path.exists() else {"runs": []}
    log["runs"].append({"command": command, "seconds": round(seconds, 3), "status": status,
                        "finished": time.strftime("%Y-%m-%dT%H:%M:%S")})
    _dump_json(path, log)


# --- commands ------------------------------------------------------------------------

def _critical_C(flow) -> float:
    try:
        a0 = find_critical_point(flow, float(flow.xgrid.nodes[0]))
        curve = critical_point_curve(flow, a0)
    except (InvalidArgument, TrackingError) as exc:
        raise ConfigError(f"flow {flow.name!r} has no usable critical point: {exc}") from None
    if not curve.C_critical > 0:
        raise ConfigError("u0 at the critical point must be positive")
    return float(curve.C_critical)


def spectral_solution(cfg: Config, C: float, force: bool = False, workers: int = 1):
    """Cached spectral solve; returns (solution, cache path, hit)."""
    sp = cfg.spectral
    z_max, n, tol = float(sp.get("z_max", DEFAULT_Z_MAX)), int(sp.get("n", DEFAULT_COUNT)), \
        float(sp.get("tol", 1e-10))
    path = Path(cfg.output_dir) / "cache" / f"spectral_{cache_key(C, z_max, n, tol)}.json"
    if path.exists() and not force:
        return load_solution(path), path, True
    seeds = [-np.sqrt(C) * np.exp(0.25j * np.pi)]
    try:
        sol = find_tau(C, seeds=seeds, zgrid=ZGrid.uniform(z_max, n), tol=tol, workers=workers)
    except NoConvergence:
        sol = find_tau(C, zgrid=ZGrid.uniform(z_max, n), tol=tol, workers=workers)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_solution(sol, path, tol)
    return sol, path, False


def cmd_spectral(cfg: Config, workers=1, force=False) -> dict:
    flow = build_flow(cfg)
    C = _critical_C(flow)
    out = Path(cfg.output_dir)
    try:
        sol, path, hit = spectral_solution(cfg, C, force, workers)
    except NoConvergence as exc:
        land = getattr(exc, "landscape", None)
        if land is not None:
            _dump_json(out / "spectral_landscape.json", {"landscape": land})
        raise
    fit = sol.decay_fit
    decay_path = out / "spectral_decay.csv"
    with decay_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["C", "tau_re", "tau_im", "c", "C_prime", "r_squared"])
        w.writerow([f"{C:.12g}", f"{sol.tau.real:.12g}", f"{sol.tau.imag:.12g}",
                    f"{fit.c:.10g}", f"{fit.C_prime:.10g}", f"{fit.r_squared:.10g}"])
    z2 = float(cfg.spectral.get("z_max", DEFAULT_Z_MAX)) * 1.5
    n2 = int(1.5 * (int(cfg.spectral.get("n", DEFAULT_COUNT)) - 1)) + 1
    wide = find_tau(C, seeds=[sol.tau], zgrid=ZGrid.uniform(z2, n2),
                    tol=float(cfg.spectral.get("tol", 1e-10)))
    a1 = auxiliary_eigenproblem(C).alphas
    a2 = auxiliary_eigenproblem(2 * C).alphas
    m = min(a1.size, a2.size)
    scaling = float(np.max(np.abs(a2[:m] - 2 * a1[:m]) / np.abs(2 * a1[:m]))) if m else float("nan")
    summary = {"C": C, "tau": [sol.tau.real, sol.tau.imag], "im_tau_negative": sol.tau.imag < 0,
               "bc_mismatch": sol.bc_mismatch, "ode_residual_relative": sol.ode_residual,
               "decay_c": fit.c, "decay_r_squared": fit.r_squared,
               "tau_shift_wide_domain": abs(wide.tau - sol.tau),
               "aux_scaling_defect": scaling, "cache_file": path.name, "cache_hit": hit}
    _dump_json(out / "spectral_summary.json", summary)
    return summary


def _qm_config(cfg: Config, eps: float) -> QuasimodeConfig:
    q = cfg.quasimode
    cut = q.get("cutoff") or {}
    return QuasimodeConfig(eps, beta=float(q.get("beta", 0.5)), cutoff_inner=cut.get("inner"),
                           cutoff_outer=cut.get("outer"), x_span=q.get("x_span"),
                           nx=int(q.get("nx", 9)))


def cmd_quasimode(cfg: Config, workers=1, force=False) -> dict:
    flow = build_flow(cfg)
    C = _critical_C(flow)
    sol, _, _ = spectral_solution(cfg, C, False, workers)
    ing = prepare(flow, sol)
    configs = []
    for eps in cfg.quasimode["eps_list"]:
        try:
            configs.append(_qm_config(cfg, float(eps)).resolved(flow, ing.curve))
        except InvalidArgument as exc:
            raise ConfigError(f"quasimode config (eps={eps}): {exc}") from None
    reports = [residual_bound_check(c, ing, workers) for c in configs]
    export_reports(reports, Path(cfg.output_dir))
    rows = [summary_row(r) for r in reports]
    bounds = [r["bound_constant"] for r in rows]
    uppers = [r["upper_const"] for r in rows]
    summary = {"per_eps": rows,
               "bound_constant_variation": max(bounds) / min(bounds),
               "upper_const_variation": max(uppers) / min(uppers),
               "lower_const_min": min(r["lower_const"] for r in rows),
               "delta0_effective_min": min(r["delta0_effective"] for r in rows),
               "ratio_s0_range": [min(r["ratio_s0_min"] for r in rows),
                                  max(r["ratio_s0_max"] for r in rows)],
               "finite": bool(np.all(np.isfinite(bounds)))}
    _dump_json(Path(cfg.output_dir) / "quasimode_uniformity.json", summary)
    return summary


def _scan_summary(res) -> dict:
    return {"flow": res.flow_name, "ks": res.ks, "gammas": res.gammas,
            "gamma_over_sqrt_k": res.gamma_over_sqrt_k, "slope": res.slope,
            "intercept": res.intercept, "r_squared": res.r_squared, "delta": res.delta,
            "sigma": res.sigma, "regularized": res.regularized,
            "regularized_ratios": res.regularized_ratios, "verdict": res.verdict()}


def cmd_scan(cfg: Config, workers=1, force=False) -> dict:
    ev = cfg.evolution
    out = Path(cfg.output_dir)
    flow = build_flow(cfg)
    kw = dict(delta=ev.get("delta"), sigma=float(ev.get("sigma", 0.0)),
              x_window=float(ev.get("x_window", 1.0)), dx=ev.get("dx"),
              beta=float(cfg.quasimode.get("beta", 0.5)), workers=workers)
    main = illposedness_scan(ev["k_list"], flow, **kw)
    export_scan_csv(main, out / f"scan_{flow.name}.csv")
    result = {"main": _scan_summary(main)}
    print(f"ILL-POSED-SIGNATURE: {'yes' if main.verdict() else 'no'} ({flow.name})")
    control = ev.get("control")
    if control:
        ctrl_flow = analytic_profile(control)
        ctrl = illposedness_scan(ev["k_list"], ctrl_flow, **{**kw, "delta": main.delta})
        export_scan_csv(ctrl, out / f"scan_{ctrl_flow.name}.csv")
        result["control"] = _scan_summary(ctrl)
        print(f"ILL-POSED-SIGNATURE: {'yes' if ctrl.verdict() else 'no'} ({ctrl_flow.name})")
    eps_c = ev.get("consistency_eps")
    if eps_c and not flow.monotone:
        sol, _, _ = spectral_solution(cfg, _critical_C(flow), False, workers)
        rep = evolve_quasimode_consistency(float(eps_c), flow, sol)
        result["consistency"] = {"eps": rep.eps, "K": rep.K,
                                 "history_ratio_min": float(rep.history_ratio.min()),
                                 "history_ratio_max": float(rep.history_ratio.max())}
    _dump_json(out / "scan_summary.json", result)
    return result


def cmd_steady(cfg: Config, workers=1, force=False) -> dict:
    st = cfg.steady
    src = cfg.flow.get("steady_file") or st.get("inflow")
    out = Path(cfg.output_dir)
    if src is None:
        raise ConfigError("steady needs flow.steady_file (or steady.inflow)")
    try:
        bc = load_inflow_csv(src, X=float(st.get("X", 1.0)), p_x=float(st.get("p_x", 0.0)))
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from None
    report = check_oleinik_conditions(bc, tol=float(st.get("tol", 1e-3)))
    if not report.passed and not force:
        lines = [f"{c.name}: {c.measured}" for c in report.failed()]
        _dump_json(out / "steady_conditions.json", {"conditions": report.as_dict(),
                                                     "status": "FAILED"})
        raise CompatibilityError("inflow fails: " + "; ".join(lines))
    res = MarchResolution(int(st.get("n_psi", 401)), float(st.get("dxi", 0.005)))
    mf = von_mises_march(bc, float(st.get("psi_max", 10.0)), res, check=report.passed)
    flow = invert_von_mises(mf, count=int(st.get("count", 301)))
    export_flow_csv(flow, out / "steady_flow.csv")
    diag = validate_baseflow(flow)
    data = {"conditions": report.as_dict(),
            "status": "VERIFIED" if report.passed else "UNVERIFIED",
            "separated": bool(mf.separated), "steady_residual": float(diag.steady_residual)}
    if st.get("oracle") == "blasius":
        B = blasius()
        x, y = flow.xgrid.nodes, flow.ygrid.nodes
        exact = np.array([B.u(y / np.sqrt(1 + xx)) for xx in x])
        data["blasius_max_rel_error"] = float(np.max(np.abs(flow.u0 - exact)) / np.max(exact))
    _dump_json(out / "steady_conditions.json", data)
    return data


# --- report ------------------------------------------------------------------------------

def _read(out: Path, name):
    p = out / name
    return json.loads(p.read_text()) if p.exists() else None


def _row(n, title, status, detail=""):
    return {"id": n, "criterion": title, "status": status, "detail": detail}


def acceptance_rows(out: Path) -> list:
    sp, qm = _read(out, "spectral_summary.json"), _read(out, "quasimode_uniformity.json")
    sc, st = _read(out, "scan_summary.json"), _read(out, "steady_conditions.json")
    rows = []
    if sp:
        ok1 = sp["im_tau_negative"] and sp["bc_mismatch"] <= 1e-8 and \
            sp["ode_residual_relative"] <= 1e-5
        rows.append(_row(1, "spectral existence", "pass" if ok1 else "fail",
                         f"tau={sp['tau']}, mismatch={sp['bc_mismatch']:.2e}"))
        ok2 = sp["decay_c"] > 0 and sp["decay_r_squared"] >= 0.99 and \
            sp["tau_shift_wide_domain"] <= 1e-6
        rows.append(_row(2, "gaussian decay", "pass" if ok2 else "fail",
                         f"c={sp['decay_c']:.3g}, r2={sp['decay_r_squared']:.4f}"))
        rows.append(_row(3, "auxiliary scaling",
                         "pass" if sp["aux_scaling_defect"] <= 1e-8 else "fail",
                         f"defect={sp['aux_scaling_defect']:.2e}"))
    else:
        rows += [_row(i, t, "missing", "run: spectral") for i, t in
                 ((1, "spectral existence"), (2, "gaussian decay"), (3, "auxiliary scaling"))]
    if qm:
        rows.append(_row(4, "residual bound uniformity",
                         "pass" if qm["finite"] and qm["bound_constant_variation"] <= 3 else "fail",
                         f"variation={qm['bound_constant_variation']:.3g}"))
        ok5 = qm["lower_const_min"] > 0 and qm["upper_const_variation"] <= 2
        rows.append(_row(5, "growth sandwich", "pass" if ok5 else "fail",
                         f"c1={qm['lower_const_min']:.3g}, "
                         f"c2 variation={qm['upper_const_variation']:.3g}"))
    else:
        rows += [_row(4, "residual bound uniformity", "missing", "run: quasimode"),
                 _row(5, "growth sandwich", "missing", "run: quasimode")]
    rows.append(_row(6, "volterra inversion", "missing", "run: pytest tests/test_acceptance.py"))
    cons = (sc or {}).get("consistency")
    if cons:
        ok7 = 0.5 <= cons["history_ratio_min"] and cons["history_ratio_max"] <= 2
        rows.append(_row(7, "evolution vs quasimode", "pass" if ok7 else "fail",
                         f"ratio range [{cons['history_ratio_min']:.3g}, "
                         f"{cons['history_ratio_max']:.3g}]"))
    else:
        rows.append(_row(7, "evolution vs quasimode", "missing", "run: scan"))
    if sc and "control" in sc:
        m, c = sc["main"], sc["control"]
        sep = min(m["gamma_over_sqrt_k"]) / max(max(c["gamma_over_sqrt_k"]), 1e-300)
        ok8 = (m["slope"] > 0 and m["r_squared"] >= 0.95
               and all(r >= 1.5 for r in m["regularized_ratios"])
               and (max(c["gamma_over_sqrt_k"]) <= 0 or sep >= 5)
               and max(c["regularized"]) <= 1.5 * c["regularized"][0])
        rows.append(_row(8, "ill-posedness signature", "pass" if ok8 else "fail",
                         f"slope={m['slope']:.3g}, r2={m['r_squared']:.3f}"))
    else:
        rows.append(_row(8, "ill-posedness signature", "missing", "run: scan (with control)"))
    if st and "blasius_max_rel_error" in st:
        rows.append(_row(9, "steady blasius round trip",
                         "pass" if st["blasius_max_rel_error"] <= 0.02 else "fail",
                         f"error={st['blasius_max_rel_error']:.2e}"))
    else:
        rows.append(_row(9, "steady blasius round trip", "missing", "run: steady (oracle: blasius)"))
    rows.append(_row(10, "structural invariants", "missing", "run: pytest tests/test_acceptance.py"))
    return rows


def cmd_report(cfg: Config, workers=1, force=False) -> dict:
    out = Path(cfg.output_dir)
    files = []
    for p in sorted(out.glob("*")):
        if p.is_file() and p.name not in ("manifest.json", "run_log.json"):
            if p.suffix == ".json":
                json.loads(p.read_text())
            elif p.suffix == ".csv":
                with p.open() as fh:
                    list(csv.reader(fh))
            files.append({"file": p.name,
                          "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
    rows = acceptance_rows(out)
    manifest = {"config_hash": cfg.digest(),
                "versions": {"prandtl_lab": __version__, "numpy": np.__version__,
                             "scipy": scipy.__version__},
                "files": files, "criteria": rows,
                "verdict": {s: sum(r["status"] == s for r in rows)
                            for s in ("pass", "fail", "missing")}}
    _dump_json(out / "manifest.json", manifest)
    return manifest


COMMANDS = {"spectral": cmd_spectral, "quasimode": cmd_quasimode, "scan": cmd_scan,
            "steady": cmd_steady, "report": cmd_report}


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prandtl-lab",
                                description="High-frequency instability laboratory.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="YAML or JSON configuration file")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--workers", type=int, default=1, help="parallel workers")
    p.add_argument("--force", action="store_true",
                   help="recompute cached results; run steady on failing inflow")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    start = time.perf_counter()
    out = None
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        cfg = load_config(args.config, args.out)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, workers=args.workers, force=args.force)
        if args.command == "report":
            for r in result["criteria"]:
                print(f"[{r['status']:>7}] {r['id']:>2}. {r['criterion']}  {r['detail']}")
        code, status = EXIT_OK, "ok"
    except (ConfigError, InvalidArgument) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code, status = EXIT_CONFIG, "config-error"
    except CompatibilityError as exc:
        print(f"condition failure: {exc}", file=sys.stderr)
        code, status = EXIT_NUMERIC, "condition-failure"
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code, status = EXIT_NUMERIC, "numeric-failure"
    if out is not None:
        _log(out, args.command, time.perf_counter() - start, status)
    return code


if __name__ == "__main__":
    sys.exit(main())
