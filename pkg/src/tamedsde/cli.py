"""Command-line experiment runner."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import analysis, galerkin, smallnoise
from .analysis import DivergenceError, fit_loglog, rows_to_csv
from .config import ConfigError, ExperimentConfig, load_config, validate
from .models import REGISTRY, default_x0, lyapunov_excess, make_model, monotonicity_probe, sample_ball
from .rng import SeedSpec, derive_stream
from .schemes import SchemeKind

OUTPUT_ROOT_ENV = "TAMEDSDE_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def list_models() -> str:
    lines = []
    for mid, entry in REGISTRY.items():
        params = ", ".join(f"{k}={v}" for k, v in entry.defaults.items())
        tag = entry.section if entry.section == "oracle" else f"§{entry.section}"
        lines.append(f"{mid:<12} {tag:<8} {entry.description} [sde; {params}]")
    for mid, (_, defaults, section, desc) in galerkin.SPDE_REGISTRY.items():
        params = ", ".join(f"{k}={v}" for k, v in defaults.items())
        tag = section if section == "oracle" else f"§{section}"
        lines.append(f"{mid:<12} {tag:<8} {desc} [spde; {params}]")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Experiment dispatch; each returns (csv text, plot spec or None, summary)
# ---------------------------------------------------------------------------


def _sde(cfg: ExperimentConfig):
    model = make_model(cfg.model, T=cfg.values.get("T", 1.0), **cfg.model_params)
    x0 = cfg.values.get("x0")
    x0 = default_x0(cfg.model) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (model.d,):
        raise ConfigError(f"x0: model {cfg.model!r} needs {model.d} components")
    return model, x0


def _plot(x, y, xlabel: str, ylabel: str, slope: float, intercept: float) -> str:
    lines = [f"# log({xlabel}) log({ylabel})",
             f"# fit: log({ylabel}) = {float(slope)!r} * log({xlabel}) + {float(intercept)!r}"]
    for a, b in zip(x, y):
        if a > 0 and b > 0:
            lines.append(f"{float(np.log(a))!r} {float(np.log(b))!r}")
    return "\n".join(lines) + "\n"


def _converge(cfg, threads):
    v = cfg.values
    model, x0 = _sde(cfg)
    rep = analysis.strong_error(model, v["scheme"], x0, v["levels"], r=v["r"], paths=v["paths"],
                                seed=cfg.master_seed, T=v["T"], ref_offset=v["ref_offset"], threads=threads)
    slope, icpt = fit_loglog(np.asarray(rep.resolutions)[rep.fit_mask], rep.errors[rep.fit_mask]) \
        if rep.rate_defined else (float("nan"), float("nan"))
    summary = dict(fitted_rate=rep.fitted_rate, fitted_rate_ci=list(rep.fitted_rate_ci),
                   reference_gap=rep.reference_gap, gate_ok=rep.gate_ok, brownian_checksum=rep.checksum)
    return rep.to_csv("N"), _plot(rep.resolutions, rep.errors, "N", "error", slope, icpt), summary


def _diverge(cfg, threads):
    v = cfg.values
    model, x0 = _sde(cfg)
    rows = []
    summary = {}
    for name in v["schemes"]:
        frac = analysis.divergence_fraction(model, name, x0, v["level"], v["paths"], v["blowup"],
                                            cfg.master_seed, v["T"], threads=threads)
        rows.append((name, v["level"], v["paths"], frac))
        summary[f"fraction_{name}"] = frac
        if SchemeKind.parse(name) is SchemeKind.STOPPED_TAMED_EM and frac > 0:
            raise DivergenceError(f"stopped-tamed scheme diverged on {frac:.3%} of paths")
    buf = "scheme,level,paths,fraction\n" + "".join(f"{s},{lv},{p},{f!r}\n" for s, lv, p, f in rows)
    return buf, None, summary


def _galerkin(cfg, threads):
    v = cfg.values
    model = galerkin.make_spde(cfg.model, **cfg.model_params)
    rep = galerkin.galerkin_error_experiment(model, v["N_list"], v["M_ref"], v["T"], v["T"] / v["steps"],
                                             v["paths"], v["r"], cfg.master_seed, v["init"], v["record_every"],
                                             threads=threads)
    slope, icpt = fit_loglog(np.asarray(rep.resolutions)[rep.fit_mask], rep.errors[rep.fit_mask]) \
        if rep.rate_defined else (float("nan"), float("nan"))
    summary = dict(fitted_rate=rep.fitted_rate, fitted_rate_ci=list(rep.fitted_rate_ci),
                   tail_norms=[float(t) for t in rep.extra["tail"]])
    return rep.to_csv("N"), _plot(rep.resolutions, rep.errors, "N", "error", slope, icpt), summary


def _smallnoise(cfg, threads):
    v = cfg.values
    model, x0 = _sde(cfg)
    rep = smallnoise.small_noise_experiment(model, v["epsilons"], v["level"], v["paths"], v["r"],
                                            cfg.master_seed, v["T"], x0, v["scheme"], threads=threads)
    pos = rep.errors > 0
    slope, icpt = fit_loglog(rep.epsilons[pos], rep.errors[pos])
    summary = dict(fitted_slope=rep.fitted_slope, slope_ci=list(rep.slope_ci),
                   coupling_constant=rep.coupling_constant)
    return rep.to_csv(), _plot(rep.epsilons, rep.errors, "eps", "error", slope, icpt), summary


def _certify(cfg, threads):
    v = cfg.values
    model, x0 = _sde(cfg)
    header = ["seed", "lhs", "lhs_ci_low", "lhs_ci_high", "rhs", "margin", "exp_factor", "initial_gap",
              "drift_residual", "diffusion_residual", "vacuous"]
    rows = []
    holds = True
    for i in range(v["seeds"]):
        seed = cfg.master_seed + i
        pair = analysis.coupled_euler_ensemble(model, x0, x0, v["fine_level"], v["coarse_level"], v["paths"],
                                               seed, v["T"], threads=threads)
        cert = analysis.perturbation_bound_certify(model, pair, v["p"], v["eps"], v["alpha_scale"],
                                                   v["beta_scale"], v["q"], seed)
        holds &= cert.holds
        c = cert.components
        rows.append([seed, cert.lhs, cert.lhs_ci[0], cert.lhs_ci[1], cert.rhs, cert.margin, c["exp_factor"],
                     c["initial_gap"], c["drift_residual"], c["diffusion_residual"], int(cert.vacuous)])
    return rows_to_csv(header, rows), None, dict(all_hold=bool(holds))


def _ito_check(cfg, threads):
    v = cfg.values
    model, x0 = _sde(cfg)
    pair = analysis.coupled_euler_ensemble(model, x0, x0, v["fine_level"], v["coarse_level"], v["paths"],
                                           cfg.master_seed, v["T"], threads=threads)
    rep = analysis.ito_residual_check(model, pair, v["levels"], v["chi"])
    mesh = v["T"] / 2.0 ** np.asarray(v["levels"], dtype=float)
    slope, icpt = fit_loglog(mesh, rep.median_residuals)
    csv = rows_to_csv(["level", "mesh", "median_residual"],
                      [(lv, m, e) for lv, m, e in zip(v["levels"], mesh, rep.median_residuals)])
    return csv, _plot(mesh, rep.median_residuals, "mesh", "residual", slope, icpt), dict(slope=rep.slope)


def _sensitivity(cfg, threads):
    v = cfg.values
    model, x0 = _sde(cfg)
    rep = analysis.initial_value_sensitivity(model, v["scheme"], x0, v["deltas"], v["level"], v["paths"], v["r"],
                                             cfg.master_seed, v["T"], threads=threads)
    pos = rep.errors > 0
    slope, icpt = fit_loglog(rep.scales[pos], rep.errors[pos])
    return rep.to_csv("delta"), _plot(rep.scales, rep.errors, "delta", "error", slope, icpt), \
        dict(slope=rep.slope, slope_ci=list(rep.slope_ci))


def _model_check(cfg, threads):
    v = cfg.values
    model, _ = _sde(cfg)
    rng = derive_stream(SeedSpec(cfg.master_seed, 0, "model-check"))
    pts = sample_ball(rng, v["n_points"], model.d, v["radius"])
    lyap = float(np.max(lyapunov_excess(model, pts)))
    mono = monotonicity_probe(model, p=v["p"], n_pairs=v["n_points"], radius=v["radius"], seed=cfg.master_seed)
    csv = rows_to_csv(["check", "max_excess", "certified"],
                      [("lyapunov", lyap, int(lyap <= 1e-8)), ("monotonicity", mono.max_excess, int(mono.certified))])
    k = model.constants
    return csv, None, dict(constants=dict(c=k.c, alpha=k.alpha, q0=k.q0, q1=k.q1))


_DISPATCH = {
    "converge": _converge, "diverge": _diverge, "galerkin": _galerkin, "smallnoise": _smallnoise,
    "certify": _certify, "ito-check": _ito_check, "sensitivity": _sensitivity, "model-check": _model_check,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def resolve_output_dir(cfg: ExperimentConfig, override: str | None) -> Path:
    if override:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{cfg.experiment}-{cfg.model}-{cfg.content_hash()[:12]}"


def run(config_path: str, output_dir: str | None = None, threads: int = 1, seed: int | None = None) -> int:
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg.master_seed = int(seed)
            validate(cfg)
        if threads < 1:
            raise ConfigError("threads: must be >= 1")
        out = resolve_output_dir(cfg, output_dir)
        start = time.perf_counter()
        csv, plot, summary = _DISPATCH[cfg.experiment](cfg, threads)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    wall = time.perf_counter() - start
    out.mkdir(parents=True, exist_ok=True)
    files = {"results.csv": csv}
    if plot is not None:
        files["plot.dat"] = plot
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8", newline="\n")
    manifest = dict(config=cfg.as_dict(), config_hash=cfg.content_hash(), version=_version(),
                    wall_time_s=wall, threads=threads, summary=summary,
                    files={name: _sha256(out / name) for name in files})
    (out / "manifest.json").write_text(json.dumps(_json_safe(manifest), indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    print(f"wrote {', '.join(sorted(files))} and manifest.json to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tamedsde", description="Stopped-tamed SDE numerics workbench")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a TOML config")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--seed", type=int)
    sub.add_parser("list-models", help="list registered models")
    args = parser.parse_args(argv)
    if args.command == "list-models":
        print(list_models())
        return EXIT_OK
    return run(args.config, args.output_dir, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
