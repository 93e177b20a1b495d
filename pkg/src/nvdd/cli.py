"""Command-line front end: ``nvdd <subcommand> [--config FILE] [--set block.key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 physics-domain error
(anticrossing proximity, infeasible timing or gate plan), 4 convergence
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .config import SUBCOMMANDS, ConfigError, RunConfig, load_config
from .experiments import (
    REFERENCE_G_HZ,
    REFERENCE_TRANSFER_S,
    EnsembleSpec,
    ScanResult,
    calibrate_cr_plan,
    correlation_scan,
    coupling_map,
    ensemble_average,
    estimate_gate_time,
    fft_spectrum,
    find_dips,
    fit_oscillation,
    oscillation_scan,
    save_scan,
    spectrum_scan,
    transfer_distance,
    transfer_fidelity,
)
from .model import DegeneracyError, FieldConfig
from .propagator import ConvergenceError
from .theory import (
    GslacProximity,
    Infeasible,
    NegativeTau,
    design_gate,
    effective_coupling,
)

__all__ = ["main", "run", "emit_report"]

EXIT_OK, EXIT_CONFIG, EXIT_DOMAIN, EXIT_CONVERGENCE = 0, 2, 3, 4
REFERENCE_SPLITTING_HZ = 2.2e6


def _arange(start, stop, step):
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(max(n, 0))


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_plain)


def _plain(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)


def _finite(v):
    return v if not isinstance(v, float) or math.isfinite(v) else str(v)


def _write_table(base, header, rows, cfg, meta):
    csv_path, json_path = base + ".csv", base + ".json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    _write_json(json_path, {"meta": meta, "config": _cfg_echo(cfg), "version": __version__, "rows": len(rows)})
    return [csv_path, json_path]


def _cfg_echo(cfg: RunConfig):
    d = cfg.to_dict()
    d["noise"] = {k: _finite(v) for k, v in d["noise"].items()}
    return d


def _save(scan: ScanResult, base, cfg):
    return list(save_scan(scan, base, _cfg_echo(cfg)))


def _common(cfg: RunConfig):
    return dict(params=cfg.params, field=cfg.field, noise=cfg.noise, readout=cfg.readout,
                model=cfg.model_dict(), seed=cfg.seed)


# ---------------------------------------------------------------- subcommands

def _spectrum(cfg, out):
    e = cfg.experiment["spectrum"]
    f = _arange(e["f_start_hz"], e["f_stop_hz"], e["f_step_hz"])
    if not len(f):
        return {"subcommand": "spectrum", "points": 0}
    scan = spectrum_scan(f, e["n_p"], grid=e["grid_s"], interpolate=e["interpolate"], workers=cfg.workers,
                         **_common(cfg))
    dips, _ = find_dips(scan, e["dip_prominence"])
    files = _save(scan, os.path.join(out, "spectrum"), cfg)
    return {"subcommand": "spectrum", "points": len(f), "dips_hz": [float(d) for d in dips], "files": files}


def _oscillation(cfg, out):
    e = cfg.experiment["oscillation"]
    n = np.arange(e["n_p_start"], e["n_p_stop"] + 1, e["n_p_step"])
    if not len(n):
        return {"subcommand": "oscillation", "points": 0}
    scan = oscillation_scan(n, branch=e["branch"], grid=e["grid_s"], workers=cfg.workers, **_common(cfg))
    files = _save(scan, os.path.join(out, "oscillation"), cfg)
    res = {"subcommand": "oscillation", "points": len(n), "g_input_hz": abs(effective_coupling(cfg.params, cfg.field).g),
           "files": files}
    if len(n) >= 5:
        fit = fit_oscillation(scan)
        res.update(period_pulses=fit.period, g_fit_hz=fit.g)
    return res


def _coupling_map(cfg, out):
    e = cfg.experiment["coupling-map"]
    if e["mode"] == "field":
        bz = np.linspace(e["b_z_start_t"], e["b_z_stop_t"], e["b_z_num"])
        bp = np.linspace(e["b_perp_start_t"], e["b_perp_stop_t"], e["b_perp_num"])
        cm = coupling_map(bz, bp, cfg.params)
        header = ["b_z_t", "b_perp_t", "g_abs_hz", "gslac_excluded"]
    else:
        xs = np.linspace(-e["stage_half_width_m"], e["stage_half_width_m"], e["stage_num"])
        stage = {"x": xs, "y": xs, "x0": e["stage_x0_m"], "y0": e["stage_y0_m"], "tilt": e["stage_tilt_t_per_m"]}
        cm = coupling_map(e["stage_b_z_t"], params=cfg.params, stage=stage)
        header = ["stage_y_m", "stage_x_m", "g_abs_hz", "gslac_excluded"]
    rows = [(float(r), float(c), float(cm.g_abs[i, j]), int(cm.gslac_mask[i, j]))
            for i, r in enumerate(cm.rows) for j, c in enumerate(cm.cols)]
    files = _write_table(os.path.join(out, "coupling_map"), header, rows, cfg, {"name": "coupling-map", "mode": cm.mode})
    g = cm.g_abs[np.isfinite(cm.g_abs)]
    res = {"subcommand": "coupling-map", "points": len(rows), "excluded": int(cm.gslac_mask.sum()), "files": files}
    if g.size:
        res.update(g_min_hz=float(g.min()), g_max_hz=float(g.max()))
    return res


def _correlation_like(cfg, out, ensemble=None):
    e = cfg.experiment["correlation"]
    t = _arange(e["t_free_start_s"], e["t_free_stop_s"], e["t_free_step_s"])
    kw = dict(n_p=e["n_p"], branch=e["branch"], grid=e["grid_s"], dephase=e["dephase"], readout=cfg.readout,
              model=cfg.model_dict(), workers=cfg.workers)
    if ensemble is None:
        scan = correlation_scan(t, **_common(cfg) | kw)
    else:
        scan = ensemble_average(correlation_scan, ensemble, cfg.params, cfg.field, cfg.noise, t_free_range=t, **kw)
    return scan


def _correlation(cfg, out):
    e = cfg.experiment["correlation"]
    if not len(_arange(e["t_free_start_s"], e["t_free_stop_s"], e["t_free_step_s"])):
        return {"subcommand": "correlation", "points": 0}
    scan = _correlation_like(cfg, out)
    files = _save(scan, os.path.join(out, "correlation"), cfg)
    return _correlation_result("correlation", scan, files)


def _correlation_result(name, scan, files):
    res = {"subcommand": name, "points": len(scan.x), "files": files}
    if len(scan.x) >= 4:
        pk = fft_spectrum(scan)
        res.update(peaks_hz=list(pk.peak_freqs), splitting_hz=pk.splitting, under_resolved=pk.under_resolved)
    return res


def _ensemble(cfg, out):
    e = cfg.experiment["ensemble"]
    ens = EnsembleSpec(e["n_members"], e["b_z_sigma_t"], e["b_perp_sigma_t"], e["t2_dd_s"], cfg.seed)
    kind = e["scan"]
    if kind == "correlation":
        scan = _correlation_like(cfg, out, ens)
        files = _save(scan, os.path.join(out, "ensemble_correlation"), cfg)
        return _correlation_result("ensemble", scan, files)
    kw = dict(readout=cfg.readout, model=cfg.model_dict(), workers=cfg.workers)
    if kind == "spectrum":
        s = cfg.experiment["spectrum"]
        f = _arange(s["f_start_hz"], s["f_stop_hz"], s["f_step_hz"])
        scan = ensemble_average(spectrum_scan, ens, cfg.params, cfg.field, cfg.noise, f_range=f, n_p=s["n_p"],
                                grid=s["grid_s"], interpolate=s["interpolate"], **kw)
        dips, _ = find_dips(scan, s["dip_prominence"])
        files = _save(scan, os.path.join(out, "ensemble_spectrum"), cfg)
        return {"subcommand": "ensemble", "points": len(f), "dips_hz": [float(d) for d in dips], "files": files}
    o = cfg.experiment["oscillation"]
    n = np.arange(o["n_p_start"], o["n_p_stop"] + 1, o["n_p_step"])
    scan = ensemble_average(oscillation_scan, ens, cfg.params, cfg.field, cfg.noise, n_p_list=n, branch=o["branch"],
                            grid=o["grid_s"], **kw)
    files = _save(scan, os.path.join(out, "ensemble_oscillation"), cfg)
    res = {"subcommand": "ensemble", "points": len(n), "files": files}
    if len(n) >= 5:
        fit = fit_oscillation(scan)
        res.update(period_pulses=fit.period, g_fit_hz=fit.g)
    return res


def _transfer(cfg, out):
    e = cfg.experiment["transfer"]
    plan = calibrate_cr_plan(cfg.params, cfg.field, math.pi / 2, e["branch"], e["grid_s"])
    if e["theta_points"] <= 0:
        return {"subcommand": "transfer", "points": 0}
    thetas = np.linspace(0, math.pi, e["theta_points"])
    rows = transfer_fidelity(thetas, cfg.params, cfg.field, (e["c0"], e["c1"]), e["branch"], e["grid_s"], plan)
    d, leak = transfer_distance(plan, cfg.params, e["grid_s"])
    report = estimate_gate_time(plan, cfg.params, e["variant"])
    header = ["theta_rad", "b_perp_t", "p0", "p1", "p0_expected", "p1_expected", "fidelity"]
    table = [(r.theta, r.b_perp, r.p0, r.p1, r.p0_expected, r.p1_expected, r.fidelity) for r in rows]
    meta = {"name": "transfer", "plan": {"n_p": plan.n_p, "tau_s": plan.tau, "b_z_t": plan.b_z,
                                         "b_perp_t": plan.b_perp, "theta_rad": plan.theta, "branch": plan.branch},
            "distance": d, "leakage": leak, "gate_time": {**report.items, "total": report.total},
            "variant": report.variant}
    files = _write_table(os.path.join(out, "transfer"), header, table, cfg, meta)
    return {"subcommand": "transfer", "points": len(rows), "distance": d, "leakage": leak,
            "max_population_error": max((r.error for r in rows), default=math.nan),
            "gate_time_s": report.total, "gate_items": report.items, "files": files}


def _design_gate(cfg, out):
    e = cfg.experiment["design-gate"]
    fr = {"b_z": cfg.field.b_z, "b_perp": np.linspace(e["b_perp_start_t"], e["b_perp_stop_t"], e["b_perp_num"])}
    cons = {"grid": e["grid_s"], "tolerance": e["tolerance_rad"], "max_total_time": e["max_total_time_s"],
            "branch": e["branch"], "interpolate": e["interpolate"]}
    coupling = None
    if e["coupling"] == "simulated":
        from .experiments import unit_rotation_angle
        from .theory import resonance_tau

        def coupling(p, f):
            tau = resonance_tau(p, f, e["branch"])
            return unit_rotation_angle(p, f, tau, e["branch"]) / (2 * math.pi * 16 * tau)
    plan = design_gate(e["theta_rad"], cfg.params, fr, cons, coupling)
    row = (plan.n_p, plan.tau, plan.theta, plan.total_time, plan.angle_error, plan.b_z, plan.b_perp, plan.g)
    header = ["n_p", "tau_s", "theta_rad", "total_time_s", "angle_error_rad", "b_z_t", "b_perp_t", "g_hz"]
    files = _write_table(os.path.join(out, "design_gate"), header, [row], cfg, {"name": "design-gate"})
    return {"subcommand": "design-gate", "points": 1, "plan": dict(zip(header, row)), "files": files}


def _validate(cfg, out):
    from .validation import format_table, run_suite

    results = run_suite(cfg.params, cfg.field)
    rows = [(r.name, int(r.passed), r.detail) for r in results]
    files = _write_table(os.path.join(out, "validate"), ["check", "passed", "detail"], rows, cfg, {"name": "validate"})
    return {"subcommand": "validate", "points": len(rows), "table": format_table(results),
            "all_passed": all(r.passed for r in results), "files": files}


_DISPATCH = {
    "spectrum": _spectrum,
    "oscillation": _oscillation,
    "coupling-map": _coupling_map,
    "correlation": _correlation,
    "ensemble": _ensemble,
    "transfer": _transfer,
    "design-gate": _design_gate,
    "validate": _validate,
}


# ---------------------------------------------------------------- report

def _mhz(v):
    return f"{v / 1e6:.4f} MHz"


def emit_report(results) -> str:
    """Human-readable summary with the published reference values alongside."""
    if not results or not results.get("points"):
        name = (results or {}).get("subcommand", "run")
        return f"{name}: no data"
    name = results["subcommand"]
    lines = [f"{name}: {results['points']} point(s)"]
    if "dips_hz" in results:
        d = results["dips_hz"]
        lines.append(f"dips at {', '.join(_mhz(x) for x in d) or 'none'}")
        if len(d) == 2:
            lines.append(f"dip separation = {_mhz(d[1] - d[0])}")
    if "g_fit_hz" in results:
        lines.append(f"oscillation period = {results['period_pulses']:.1f} pulses (paper: ~160)")
        lines.append(f"fitted |g| = {results['g_fit_hz'] / 1e3:.1f} kHz (paper: {REFERENCE_G_HZ / 1e3:.0f} kHz measured)")
    if "g_input_hz" in results:
        lines.append(f"closed-form |g| at this field = {results['g_input_hz'] / 1e3:.1f} kHz")
    if "g_max_hz" in results:
        lines.append(f"|g| range = {results['g_min_hz'] / 1e3:.1f} .. {results['g_max_hz'] / 1e3:.1f} kHz "
                     f"(paper: 10-90 kHz observed); {results['excluded']} cell(s) excluded near the anticrossing")
    if "splitting_hz" in results:
        peaks = ", ".join(_mhz(p) for p in results["peaks_hz"])
        flag = " [under-resolved]" if results.get("under_resolved") else ""
        lines.append(f"FFT peaks at {peaks}")
        lines.append(f"splitting = {_mhz(results['splitting_hz'])}{flag} (paper: {REFERENCE_SPLITTING_HZ / 1e6:.1f} MHz)")
    if "distance" in results:
        lines.append(f"distance to ideal transfer matrix = {results['distance']:.4f}, leakage = {results['leakage']:.1e}")
        lines.append(f"max population error = {results['max_population_error']:.4f}")
        for k, v in results["gate_items"].items():
            lines.append(f"  {k:<22s} {v * 1e6:8.4f} us")
        lines.append(f"total = {results['gate_time_s'] * 1e6:.3f} us (paper: {REFERENCE_TRANSFER_S * 1e6:.1f} us)")
    if "plan" in results:
        p = results["plan"]
        lines.append(f"plan: n_p = {p['n_p']}, tau = {p['tau_s'] * 1e9:.1f} ns, b_perp = {p['b_perp_t'] * 1e3:.3f} mT, "
                     f"theta = {p['theta_rad']:.4f} rad, total = {p['total_time_s'] * 1e6:.3f} us")
    if "table" in results:
        lines.append(results["table"])
    for f in results.get("files", ()):
        lines.append(f"wrote {f}")
    return "\n".join(lines)


# ---------------------------------------------------------------- entry points

def run(subcommand: str, config_path=None, overrides=None, env=None, stream=None) -> int:
    """Execute one subcommand; returns the process exit code."""
    stream = stream or sys.stdout
    err = sys.stderr
    try:
        if subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {subcommand!r}; choose from {', '.join(SUBCOMMANDS)}")
        cfg = load_config(config_path, overrides, env)
        # domain check before any heavy work
        effective_coupling(cfg.params, cfg.field)
        os.makedirs(cfg.output_dir, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            results = _DISPATCH[subcommand](cfg, cfg.output_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=err)
        return EXIT_CONFIG
    except GslacProximity as e:
        print(f"physics-domain error (GslacProximity): {e}", file=err)
        return EXIT_DOMAIN
    except (NegativeTau, Infeasible, DegeneracyError) as e:
        print(f"physics-domain error ({type(e).__name__}): {e}", file=err)
        return EXIT_DOMAIN
    except (ConvergenceError, RuntimeError) as e:
        print(f"convergence failure: {e}", file=err)
        return EXIT_CONVERGENCE
    print(emit_report(results), file=stream)
    if subcommand == "validate" and not results["all_passed"]:
        return 1
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nvdd", description="NV-centre 14N conditional-rotation simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True, metavar="subcommand")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", "-c", help="YAML run configuration")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="BLOCK.KEY=VALUE",
                        help="override one config value (repeatable)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.overrides)


if __name__ == "__main__":
    sys.exit(main())
