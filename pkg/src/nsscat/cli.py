"""Command-line orchestration: scenario configs, staged runs, reports.

Scenario files are TOML. A full run executes the stages

    models -> spectral -> singular -> regcalc -> waveop/smoothness

and writes a deterministic ``report.toml`` (no wall-clock content; byte
identical for a fixed config and seed) plus CSV or JSON-lines tables of
the probe curves, Jost scans, Cook tails and evolution traces. Timings go
to a separate ``timings.csv`` which is excluded from reproducibility
guarantees. Diagnostic flags (a predicted divergence, an unresolved
order) never abort a run; only hard errors do.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, regcalc, singular, spectral, waveop
from .errors import ConfigError, NoCauchyDecay, NsscatError, TailNotConverged
from .models import (
    OperatorModel,
    PlantedLevel,
    Potential1D,
    ToyModelSpec,
    build_schrodinger_1d,
    build_toy_model,
    validate_hypotheses,
)

STAGES = ("models", "spectral", "singular", "regcalc", "waveop", "smoothness")


# ----------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------

def _as_complex(v, fieldname):
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, list) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    raise ConfigError("expected a number or [re, im] pair", field=fieldname)


@dataclass
class ScenarioConfig:
    """Validated scenario parameters (see docs/config-schema.md)."""

    raw: dict
    label: str
    seed: int
    model_kind: str
    model_params: dict
    singular_cfg: dict
    regularizer_cfg: dict
    waveop_cfg: dict
    smoothness_cfg: dict
    output_dir: Path
    formats: tuple


def load_config(path, seed_override=None, out_override=None,
                format_override=None) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc

    model = raw.get("model")
    if not isinstance(model, dict):
        raise ConfigError("missing [model] section", field="model")
    kind = model.get("kind")
    if kind not in ("schrodinger", "toy"):
        raise ConfigError("kind must be 'schrodinger' or 'toy'", field="model.kind")

    params = {}
    if kind == "schrodinger":
        for key, default in (("L", None), ("N", None), ("delta", 2.0)):
            v = model.get(key, default)
            if v is None:
                raise ConfigError(f"missing model.{key}", field=f"model.{key}")
            params[key] = v
        if params["N"] < 16:
            raise ConfigError("N must be at least 16", field="model.N")
        pieces = []
        for i, piece in enumerate(model.get("potential", [])):
            iv = piece.get("interval")
            if not (isinstance(iv, list) and len(iv) == 2):
                raise ConfigError("piece needs interval = [a, b]",
                                  field=f"model.potential[{i}].interval")
            a, b = float(iv[0]), float(iv[1])
            if not (-params["L"] < a < b < params["L"]):
                raise ConfigError(
                    f"piece [{a}, {b}] must lie inside (-L, L) = "
                    f"(-{params['L']}, {params['L']})",
                    field=f"model.potential[{i}].interval")
            val = _as_complex(piece.get("value", 0.0),
                              f"model.potential[{i}].value")
            pieces.append((a, b, val))
        params["pieces"] = pieces
    else:
        params["n_band"] = int(model.get("n_band", 8))
        params["band_max"] = float(model.get("band_max", 10.0))
        params["c_band"] = float(model.get("c_band", 0.5))
        params["c_feature"] = float(model.get("c_feature", 1.0))
        params["seed"] = int(model.get("seed", 42))
        for group in ("discrete", "embedded"):
            levels = []
            for i, lv in enumerate(model.get(group, [])):
                levels.append(PlantedLevel(
                    value=_as_complex(lv.get("value"), f"model.{group}[{i}].value"),
                    jordan=int(lv.get("jordan", 1)),
                    coupling=float(lv.get("coupling", 0.0)),
                ))
            params[group] = tuple(levels)

    singular_cfg = dict(raw.get("singular", {}))
    waveop_cfg = dict(raw.get("waveop", {}))
    smoothness_cfg = dict(raw.get("smoothness", {}))
    reg_cfg = dict(raw.get("regularizer", {}))
    out = raw.get("output", {})
    outdir = Path(out_override or out.get("directory", "out"))
    formats = tuple([format_override] if format_override
                    else out.get("formats", ["csv"]))
    for f in formats:
        if f not in ("csv", "json-lines"):
            raise ConfigError(f"unknown format {f!r}", field="output.formats")

    seed = int(seed_override if seed_override is not None
               else raw.get("seed", waveop_cfg.get("seed", 42)))
    label = raw.get("label", path.stem)
    return ScenarioConfig(raw=raw, label=label, seed=seed, model_kind=kind,
                          model_params=params, singular_cfg=singular_cfg,
                          regularizer_cfg=reg_cfg, waveop_cfg=waveop_cfg,
                          smoothness_cfg=smoothness_cfg, output_dir=outdir,
                          formats=formats)


def build_model(cfg: ScenarioConfig) -> OperatorModel:
    p = cfg.model_params
    if cfg.model_kind == "schrodinger":
        pot = (Potential1D.from_pieces(p["pieces"]) if p["pieces"]
               else Potential1D.zero())
        return build_schrodinger_1d(p["L"], int(p["N"]), pot, p["delta"])
    spec = ToyModelSpec(n_band=p["n_band"], band_max=p["band_max"],
                        c_band=p["c_band"], c_feature=p["c_feature"],
                        discrete=p["discrete"], embedded=p["embedded"],
                        seed=p["seed"])
    return build_toy_model(spec)


# ----------------------------------------------------------------------
# Report plumbing
# ----------------------------------------------------------------------

@dataclass
class RunReport:
    """Per-stage records plus flags; serialized deterministically."""

    sections: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)  # (name, value, tol, status)
    flags: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)  # excluded from report.toml

    def check(self, name, value, tol, higher_is_ok=False):
        ok = (value >= tol) if higher_is_ok else (value <= tol)
        self.checks.append((name, float(value), float(tol),
                            "pass" if ok else "flag"))
        if not ok:
            self.flags.append(f"check failed: {name} = {value:.6g} "
                              f"vs {tol:.6g}")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if not np.isfinite(v):
            return f'"{v!r}"'
        return format(float(v), ".12g")
    if isinstance(v, (complex, np.complexfloating)):
        return f"[{format(v.real, '.12g')}, {format(v.imag, '.12g')}]"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)}")


def _emit_toml(d: dict, prefix="") -> str:
    """Minimal deterministic TOML emitter (scalars, lists, nested dicts)."""
    lines = []
    scalars = {k: v for k, v in d.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in d.items() if isinstance(v, dict)}
    for k, v in scalars.items():
        lines.append(f"{k} = {_fmt(v)}")
    for k, v in tables.items():
        name = f"{prefix}.{k}" if prefix else k
        lines.append("")
        lines.append(f"[{name}]")
        lines.append(_emit_toml(v, prefix=name))
    return "\n".join(lines)


def write_report(report: RunReport, cfg: ScenarioConfig) -> Path:
    doc = {
        "meta": {
            "tool": "nsscat",
            "version": __version__,
            "label": cfg.label,
            "seed": cfg.seed,
        },
    }
    doc.update(report.sections)
    doc["checks"] = {
        f"c{i:02d}": {"name": n, "value": v, "tolerance": t, "status": s}
        for i, (n, v, t, s) in enumerate(report.checks)
    }
    doc["flags"] = {"count": len(report.flags), "items": list(report.flags)}
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / "report.toml"
    out.write_text(_emit_toml(doc) + "\n")
    tpath = cfg.output_dir / "timings.csv"
    with tpath.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["stage", "seconds"])
        for k, v in report.timings.items():
            wr.writerow([k, f"{v:.3f}"])
    return out


def write_table(cfg: ScenarioConfig, name: str, header, rows):
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.formats:
        with (cfg.output_dir / f"{name}.csv").open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for row in rows:
                wr.writerow([format(v, ".12g") if isinstance(v, float) else v
                             for v in row])
    if "json-lines" in cfg.formats:
        with (cfg.output_dir / f"{name}.jsonl").open("w") as fh:
            for row in rows:
                fh.write(json.dumps(dict(zip(header, (
                    format(v, ".12g") if isinstance(v, float) else v
                    for v in row)))) + "\n")


# ----------------------------------------------------------------------
# Stages
# ----------------------------------------------------------------------

def _stage_models(cfg, report):
    model = build_model(cfg)
    rep = validate_hypotheses(model, probes=8, refine=model.grid is not None)
    report.sections["hypotheses"] = {
        "lap_sup": rep.lap_sup,
        "lap_trend_fine": rep.lap_trend[1] if rep.lap_trend else rep.lap_sup,
        "eig_total": rep.eig_counts["total"],
        "eig_lower_half": rep.eig_counts["lower_half"],
        "eig_upper_half": rep.eig_counts["upper_half"],
        "feature_count": rep.feature_count,
        "j_residual_H0": rep.j_residuals["H0"],
        "j_residual_C": rep.j_residuals["C"],
        "j_residual_W": rep.j_residuals["W"],
    }
    report.check("j_residual_worst", max(rep.j_residuals.values()), 1e-10)
    for f in rep.flags:
        report.flags.append(f"hypotheses: {f}")
    return model


def _stage_spectral(cfg, model, report):
    data = spectral.assemble_projections(model)
    part = data.partition
    report.sections["spectrum"] = {
        "discrete_count": len(part.discrete),
        "embedded_count": len(part.embedded),
        "ambiguous_count": len(part.ambiguous),
        "band_count": part.band_count,
        "weight_threshold": part.threshold,
        "trace_pi_p": float(np.trace(data.Pi_p).real),
        "pi_p_idempotency": data.residuals["pi_p_idempotency"],
        "j_orthogonality": data.residuals["j_orthogonality"],
        "discrete_eigenvalues": [complex(l) for l, _, _ in data.discrete],
        "embedded_eigenvalues": [float(l) for l, _, _, _ in data.embedded],
    }
    report.check("pi_p_idempotency", data.residuals["pi_p_idempotency"], 1e-8)
    report.check("j_orthogonality", data.residuals["j_orthogonality"], 1e-8)
    return data


def _stage_singular(cfg, model, report):
    sc = cfg.singular_cfg
    lo, hi = model.ess_band
    lam_min = float(sc.get("lambda_min", lo + 0.05 * (hi - lo)))
    lam_max = float(sc.get("lambda_max", lo + 0.3 * (hi - lo)))
    step = float(sc.get("lambda_step", (lam_max - lam_min) / 12.0))
    if not (lo <= lam_min < lam_max <= hi):
        raise ConfigError("lambda grid must lie inside the band",
                          field="singular.lambda_min")
    grid = np.arange(lam_min, lam_max + step / 2, step)
    det = singular.detect_singularities(model, grid)
    rows = [(p.lam, p.side, float(e), float(n))
            for p in det.probes for e, n in zip(p.eps, p.norms)]
    write_table(cfg, "probe_curves", ["lambda", "side", "eps", "norm"], rows)
    report.sections["singularities"] = {
        "count": len(det.records),
        "nu_inf": det.nu_inf,
        "records": [f"{r.side}:{format(r.lam, '.12g')}:nu={r.nu}"
                    f":resolved={r.resolved}" for r in det.records],
    }
    for r in det.records:
        if not r.resolved:
            report.flags.append(
                f"singular: unresolved order at lambda={r.lam:.6g} "
                f"(exponent {r.fitted_exponent:.3f})")

    roots = []
    if model.potential is not None and not model.potential.is_zero:
        k_max = float(sc.get("k_max", np.sqrt(max(lam_max, 1.0)) + 1.0))
        roots = singular.find_real_resonances(model.potential, k_max)
        ks = np.linspace(k_max / 400, k_max, 400)
        avals = singular.jost_function(model.potential, ks, check=False)
        write_table(cfg, "jost_scan", ["k", "re_a", "im_a", "abs_a"],
                    [(float(k), float(a.real), float(a.imag), float(abs(a)))
                     for k, a in zip(ks, avals)])
        report.sections["singularities"]["jost_roots"] = [
            f"k={format(k, '.12g')}:mult={m}:energy={format(E, '.12g')}"
            for k, m, E in roots]
    return det, roots


def _stage_regcalc(cfg, model, data, det, report):
    rc = cfg.regularizer_cfg
    z0 = (_as_complex(rc["z0"], "regularizer.z0") if "z0" in rc
          else regcalc.default_base_point(model))
    reg = regcalc.Regularizer.from_detection(det, z0)
    if "nu_inf" in rc:
        reg = regcalc.Regularizer(factors=reg.factors, z0=reg.z0,
                                  nu_inf=int(rc["nu_inf"]))
    res = regcalc.resolution_of_identity_residual(model, reg, data.Pi_disc)
    report.sections["regularizer"] = {
        "z0": complex(z0),
        "nu_inf": reg.nu_inf,
        "factor_count": len(reg.factors),
        "factors": [f"{f.side}:{format(f.lam, '.12g')}:nu={f.nu}"
                    for f in reg.factors],
        "resolution_identity_residual": float(res),
    }
    tol = 1e-2 if reg.factors else 1e-3
    report.check("resolution_identity_residual", res, tol)
    return reg


def _stage_waveop(cfg, model, data, reg, report):
    wc = cfg.waveop_cfg
    kinds = wc.get("kinds", ["W-(H,H0)"])
    T_max = float(wc.get("T_max", 60.0))
    dt = float(wc.get("dt", 0.0)) or None
    tail_tol = float(wc.get("tail_tol", 1e-3))
    window = float(wc.get("window", 1.0))
    t_samples = [float(t) for t in wc.get("t_samples", [1.0, 5.0, 20.0])]
    section = {}
    for kind in kinds:
        entry = {}
        try:
            res = waveop.cook_wave_operator(model, data, reg, kind,
                                            T_max=T_max, dt=dt,
                                            tail_tol=tail_tol, window=window)
            entry["accepted"] = True
            entry["T_used"] = res.T_used
            entry["tail_norm"] = res.tail_norm
            entry["min_sv_on_ac"] = res.min_sv_on_ac
            entry["intertwining_residual"] = waveop.intertwining_residual(
                res, model, t_samples)
            report.check(f"tail[{kind}]", res.tail_norm, tail_tol)
            report.check(f"intertwining[{kind}]",
                         entry["intertwining_residual"], 10 * tail_tol)
        except NoCauchyDecay as exc:
            res = exc.result
            entry["accepted"] = False
            entry["T_used"] = res.T_used
            entry["tail_norm"] = res.tail_norm
            report.flags.append(f"waveop: {exc}")
        write_table(cfg, f"tails_{_slug(kind)}", ["t", "tail_norm"],
                    [(float(t), float(v)) for t, v in res.tail_history])
        section[_slug(kind)] = entry

    if wc.get("adjoint_check", False):
        rep = waveop.adjoint_pair_check(model, data, reg, T_max=T_max,
                                        tail_tol=tail_tol, window=window,
                                        direction=int(wc.get("direction", -1)))
        section["adjoint"] = {
            "pair_residual": rep.pair_residual,
            "norm_spread": rep.norm_spread,
            "kernel_residual": rep.kernel_residual
            if rep.kernel_residual is not None else -1.0,
        }
        report.check("adjoint_pair_residual", rep.pair_residual, 4 * tail_tol)
    if wc.get("completeness", False):
        rep = waveop.completeness_check(
            model, data, reg, T_max=T_max, tail_tol=tail_tol, window=window,
            direction=int(wc.get("direction", -1)),
            singularity_free=len(reg.factors) == 0)
        section["completeness"] = {
            "min_sv_on_ac": rep.min_sv_on_ac,
            "best_candidate": rep.best_candidate,
            "composition_residual": min(rep.composition_residuals.values()),
            "similarity_residual": rep.similarity_residual,
            "singularity_free": rep.singularity_free,
        }
        report.check("composition_residual",
                     min(rep.composition_residuals.values()), 1e-2)
    if wc.get("semigroup", False):
        T = float(wc.get("semigroup_T", 16.0))
        ts = np.linspace(0.0, T, 33)
        rep = waveop.semigroup_bounds(model, data, ts, seed=cfg.seed)
        section["semigroup"] = {"m1": rep.m1, "m2": rep.m2,
                                "t_argmin": rep.t_argmin,
                                "t_argmax": rep.t_argmax}
        write_table(cfg, "semigroup", ["T", "m1", "m2"],
                    [(float(T), float(rep.m1), float(rep.m2))])
    report.sections["waveop"] = section


def _stage_smoothness(cfg, model, reg, report):
    sm = cfg.smoothness_cfg
    side = sm.get("side", "-")
    T = float(sm.get("T", 200.0))
    try:
        rep = waveop.kato_smoothness(model, reg, T=T, side=side,
                                     require_converged=False, seed=cfg.seed)
        report.sections["smoothness"] = {
            "side": side,
            "T": rep.T,
            "constant_time_domain": rep.constant_time_domain,
            "constant_freq_domain": rep.constant_freq_domain,
            "c0_H0": rep.c0_H0,
            "parseval_ratio": rep.ratio,
            "tail_fraction": rep.tail_fraction,
            "converged": rep.converged,
        }
        if not rep.converged:
            report.flags.append(
                f"smoothness: tail fraction {rep.tail_fraction:.3f} above 5% "
                f"at T={T:g} (divergence signature or horizon too short)")
    except TailNotConverged as exc:  # require_converged=False avoids this
        report.flags.append(f"smoothness: {exc}")


def _slug(kind: str) -> str:
    return (kind.replace("(", "_").replace(")", "").replace(",", "_")
            .replace("*", "s").replace("+", "p").replace("-", "m"))


# ----------------------------------------------------------------------
# Entry points
# ----------------------------------------------------------------------

def run_scenario(config_path, seed=None, out=None, quiet=False,
                 stages=STAGES, table_format=None) -> RunReport:
    """Execute the staged pipeline for one scenario config."""
    cfg = load_config(config_path, seed_override=seed, out_override=out,
                      format_override=table_format)
    report = RunReport()

    def say(msg):
        if not quiet:
            print(msg)

    t0 = time.time()
    model = _stage_models(cfg, report)
    report.timings["models"] = time.time() - t0
    say(f"[models] dim={model.dim} band=[{model.ess_band[0]:.4g}, "
        f"{model.ess_band[1]:.4g}]")

    data = det = reg = None
    if "spectral" in stages:
        t0 = time.time()
        data = _stage_spectral(cfg, model, report)
        report.timings["spectral"] = time.time() - t0
        say(f"[spectral] discrete={len(data.discrete)} "
            f"embedded={len(data.embedded)} band={data.partition.band_count}")
    if "singular" in stages:
        t0 = time.time()
        det, roots = _stage_singular(cfg, model, report)
        report.timings["singular"] = time.time() - t0
        say(f"[singular] records={len(det.records)} jost_roots={len(roots)}")
    if "regcalc" in stages and data is not None and det is not None:
        t0 = time.time()
        reg = _stage_regcalc(cfg, model, data, det, report)
        report.timings["regcalc"] = time.time() - t0
        say(f"[regcalc] factors={len(reg.factors)} "
            f"roi_residual={report.sections['regularizer']['resolution_identity_residual']:.3e}")
    if "waveop" in stages and cfg.waveop_cfg.get("enabled", True) \
            and data is not None and reg is not None:
        t0 = time.time()
        _stage_waveop(cfg, model, data, reg, report)
        report.timings["waveop"] = time.time() - t0
        say("[waveop] done")
    if "smoothness" in stages and cfg.smoothness_cfg.get("enabled", False) \
            and reg is not None:
        t0 = time.time()
        _stage_smoothness(cfg, model, reg, report)
        report.timings["smoothness"] = time.time() - t0
        say("[smoothness] done")

    out_path = write_report(report, cfg)
    say(f"report: {out_path} (flags: {len(report.flags)})")
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nsscat",
        description="Numerical scattering toolkit for non-self-adjoint "
                    "operators on finite matrix models.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", choices=("csv", "json-lines"), default=None,
                       help="table format override")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--quiet", action="store_true")

    stage_of = {
        "run": STAGES,
        "validate": ("models",),
        "spectrum": ("models", "spectral"),
        "singularities": ("models", "spectral", "singular"),
        "resonances": ("models", "spectral", "singular"),
        "waveop": ("models", "spectral", "singular", "regcalc", "waveop"),
        "smoothness": ("models", "spectral", "singular", "regcalc",
                       "smoothness"),
    }
    for name in stage_of:
        add_common(sub.add_parser(name))

    args = parser.parse_args(argv)
    try:
        report = run_scenario(args.config, seed=args.seed, out=args.out,
                              quiet=args.quiet, stages=stage_of[args.command],
                              table_format=args.format)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NsscatError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        for fl in report.flags:
            print(f"flag: {fl}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
