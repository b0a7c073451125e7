"""Command-line entry point: ``dyadpl --command {estimate,simulate,diagnose}``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np

from .inference import ApeError, ApeTarget, ape_corrected, ape_plugin, std_errors
from .model import ModelError, ModelSpec, Variant
from .netgraph import NetworkError, boundary_nodes, degrees, load_network, network_stats, trim_iteratively
from .simulate import DESIGNS, DesignError, McDesign, run_mc
from .solver import EC, MLE, PL, NonConvergence, NonExistence, SolverOptions, fit_ec, fit_mle, fit_pl

log = logging.getLogger("dyadpl")

NA = "n.a."
REPEATABLE = {"estimator", "ape"}


class ConfigError(ValueError):
    pass


def fmt(v) -> str:
    """Nine significant digits; strings pass through."""
    if isinstance(v, str):
        return v
    if v is None:
        return NA
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.9g}"


def write_table(path: Path, header, rows, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def pretty(title: str, header, rows) -> str:
    cells = [[str(h) for h in header]] + [[fmt(v) for v in r] for r in rows]
    widths = [max(len(c[k]) for c in cells) for k in range(len(header))]
    line = "  ".join("-" * w for w in widths)
    out = [title, line]
    for idx, c in enumerate(cells):
        out.append("  ".join(s.rjust(w) for s, w in zip(c, widths)))
        if idx == 0:
            out.append(line)
    return "\n".join(out) + "\n"


def emit(out_dir: Path | None, name: str, title: str, header, rows, comment=None, stream=None):
    stream = stream or sys.stdout
    if comment:
        stream.write(f"# {comment}\n")
    stream.write(pretty(title, header, rows) + "\n")
    if out_dir is not None:
        write_table(out_dir / f"{name}.csv", header, rows, comment)


# ---------------------------------------------------------------------------
# configuration


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dyadpl", description=__doc__)
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("--command", choices=["estimate", "simulate", "diagnose"])
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--estimator", action="append", type=str.upper, choices=[MLE, PL, EC])
    p.add_argument("--edges")
    p.add_argument("--x-cov", dest="x_cov")
    p.add_argument("--z-cov", dest="z_cov")
    p.add_argument("--labels")
    p.add_argument("--ape", action="append", help="regressor:kind, kind in {continuous, binary}")
    p.add_argument("--design")
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--threads", type=int)
    p.add_argument("--trim", action="store_true", default=None, help="retry MLE on the trimmed sample")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--diverge-threshold", dest="diverge_threshold", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


DEFAULTS = {
    "command": None, "variant": "reciprocal", "estimator": None, "edges": None, "x_cov": None,
    "z_cov": None, "labels": None, "ape": None, "design": None, "n": 100, "reps": 1000,
    "seed": 0, "rounds": 1000, "out_dir": None, "threads": None, "trim": False, "tol": None,
    "max_iter": 200, "diverge_threshold": 30.0,
    # explicit design parameters (simulate)
    "rho_L": None, "rho_H": None, "varpi0": None, "varpi1": None,
}
_TYPES = {"n": int, "reps": int, "seed": int, "rounds": int, "threads": int, "max_iter": int,
          "tol": float, "diverge_threshold": float, "rho_L": float, "rho_H": float,
          "varpi0": float, "varpi1": float}


def read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key = key.strip().replace("-", "_")
            val = val.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in REPEATABLE:
                out[key] = [v.strip() for v in val.split(",") if v.strip()]
                if key == "estimator":
                    bad = [v for v in out[key] if v.upper() not in (MLE, PL, EC)]
                    if bad:
                        raise ConfigError(f"{path}:{lineno}: unknown estimator {bad[0]!r}")
                    out[key] = [v.upper() for v in out[key]]
            elif key == "trim":
                out[key] = val.lower() in ("1", "true", "yes", "on")
            elif key in _TYPES:
                try:
                    out[key] = _TYPES[key](val)
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: bad value for {key}: {val!r}") from None
            else:
                out[key] = val
    return out


def resolve(argv=None) -> dict:
    args = build_parser().parse_args(argv)
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config(args.config))
    for k, v in vars(args).items():
        if k in ("config",) or v is None:
            continue
        cfg[k] = v
    if cfg["command"] is None:
        raise ConfigError("--command is required")
    return cfg


def solver_options(cfg) -> SolverOptions:
    return SolverOptions(tol=cfg["tol"], max_iter=cfg["max_iter"],
                         diverge_threshold=cfg["diverge_threshold"], trim=bool(cfg["trim"]))


def _out_dir(cfg):
    if not cfg["out_dir"]:
        return None
    d = Path(cfg["out_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# commands


def _load(cfg):
    if not cfg["edges"]:
        raise ConfigError("an --edges file is required")
    variant = Variant(cfg["variant"])
    if variant is not Variant.DIRECTED and not cfg["z_cov"]:
        raise ConfigError(f"the {variant.value} model needs --z-cov")
    if variant is Variant.UNDIRECTED and cfg["x_cov"]:
        raise ConfigError("the undirected model takes no --x-cov")
    return load_network(cfg["edges"], cfg["x_cov"], cfg["z_cov"], cfg["labels"])


def _param_labels(spec: ModelSpec, cov):
    return ([f"beta[{nm}]" for nm in cov.x_names[:spec.dim_beta]]
            + [f"rho[{nm}]" for nm in cov.z_names[:spec.dim_rho]])


def cmd_estimate(cfg, stream=None) -> int:
    stream = stream or sys.stdout
    net, cov = _load(cfg)
    variant = Variant(cfg["variant"])
    spec = ModelSpec.for_covariates(variant, cov)
    if spec.dim_theta == 0:
        raise ConfigError("no covariates for the chosen variant")
    targets = [ApeTarget.parse(t, cov) for t in (cfg["ape"] or [])]
    for t in targets:
        if t.family == "X" and not spec.directed:
            raise ConfigError(f"APE target {t.name!r} is not part of the {variant.value} model")
    estimators = cfg["estimator"] or [PL]
    opts = solver_options(cfg)
    out_dir = _out_dir(cfg)
    labels = _param_labels(spec, cov)

    coef_rows, ape_rows, diag_rows = [], [], []
    mle = None
    for est in estimators:
        try:
            if est == MLE:
                fit = mle = fit_mle(net, cov, spec, opts)
            elif est == PL:
                fit = fit_pl(net, cov, spec, opts)
            else:
                if mle is None or not mle.existence.get("exists", True):
                    mle = fit_mle(net, cov, spec, replace(opts, trim=False))
                fit = fit_ec(net, cov, spec, opts, mle=mle)
        except NonExistence as exc:
            reason = "NonExistence"
            coef_rows += [(est, lab, NA, NA, reason) for lab in labels]
            diag_rows.append((est, NA, NA, NA, NA, NA, f"{reason}: nodes {list(exc.nodes)}"))
            ape_rows += [(est, t.name, t.kind, NA, NA, NA, NA, reason) for t in targets]
            continue
        except NonConvergence as exc:
            diag_rows.append((est, False, NA, NA, NA, NA, f"NonConvergence: {exc}"))
            continue
        se = std_errors(fit)
        note = "ok"
        trimmed = fit.existence.get("trimmed_sample")
        if trimmed is not None:
            note = f"trimmed sample of {fit.net.n} nodes"
        coef_rows += [(est, lab, fit.theta_hat[k], se[k], note) for k, lab in enumerate(labels)]
        last = fit.trace[-1] if fit.trace else {}
        diag_rows.append((est, fit.converged, fit.loglik, fit.penalized_obj,
                          last.get("grad_norm"), len(fit.trace), note))
        for t in targets:
            if est == EC:
                ape_rows.append((est, t.name, t.kind, NA, NA, NA, NA, "not defined for EC"))
                continue
            plug, _ = ape_plugin(fit, target=t)
            res = ape_corrected(fit, target=t)
            if est == PL:
                ape_rows.append((est, t.name, t.kind, plug, res.delta_corrected, res.trace_correction,
                                 res.std_error, note))
            else:
                ape_rows.append((est, t.name, t.kind, plug, NA, NA, res.std_error, note))

    emit(out_dir, "coefficients", "Coefficients", ["estimator", "parameter", "estimate", "std_error", "note"],
         coef_rows, stream=stream)
    if targets:
        emit(out_dir, "apes", "Average partial effects",
             ["estimator", "regressor", "kind", "plugin", "corrected", "trace_term", "std_error", "note"],
             ape_rows, stream=stream)
    emit(out_dir, "fit_diagnostics", "Fit diagnostics",
         ["estimator", "converged", "loglik", "penalized_obj", "grad_norm", "iterations", "note"],
         diag_rows, stream=stream)
    _existence_report(net, out_dir, stream)
    return 0


def _existence_report(net, out_dir, stream):
    flagged = sorted(boundary_nodes(net))
    labels = net.node_labels or tuple(str(i) for i in range(net.n))
    emit(out_dir, "boundary_nodes", "Boundary-degree nodes", ["node", "label", "reason"],
         [(i, labels[i], why) for i, why in flagged], stream=stream)
    _, trace = trim_iteratively(net)
    rows = [(r + 1, i, labels[i], "|".join(why[i])) for r, (ids, why) in enumerate(trace.rounds) for i in ids]
    emit(out_dir, "trim_trace", f"Trim cascade ({len(trace.surviving)} nodes survive)",
         ["round", "node", "label", "reason"], rows, stream=stream)
    return trace


def cmd_diagnose(cfg, stream=None) -> int:
    stream = stream or sys.stdout
    if not cfg["edges"]:
        raise ConfigError("an --edges file is required")
    net, _ = load_network(cfg["edges"], labels_path=cfg["labels"])
    n = net.n
    out_dir = _out_dir(cfg)
    ds = degrees(net)
    hist_rows = []
    for kind, seq in (("out", ds.d), ("in", ds.b)):
        for deg, cnt in sorted(Counter(seq.tolist()).items()):
            hist_rows.append((kind, deg, cnt))
    emit(out_dir, "degree_histogram", "Degree histogram", ["direction", "degree", "count"], hist_rows, stream=stream)
    a = net.adjacency.astype(int)
    iu = np.triu_indices(n, 1)
    pairs = iu[0].size
    mutual = int((a[iu] & a.T[iu]).sum())
    asym = int((a[iu] ^ a.T[iu]).sum())
    stats = network_stats(net) if n >= 2 else {"density": float("nan"), "transitivity": None}
    dens = stats["density"]
    rows = [("dyads", pairs), ("null_share", (pairs - mutual - asym) / pairs if pairs else float("nan")),
            ("asymmetric_share", asym / pairs if pairs else float("nan")),
            ("mutual_share", mutual / pairs if pairs else float("nan")),
            ("density", dens), ("independence_mutual_benchmark", dens ** 2),
            ("transitivity", stats["transitivity"])]
    emit(out_dir, "summary", "Network summary", ["statistic", "value"], rows, stream=stream)
    _existence_report(net, out_dir, stream)
    return 0


def cmd_simulate(cfg, stream=None) -> int:
    stream = stream or sys.stdout
    explicit = [cfg[k] for k in ("rho_L", "rho_H", "varpi0", "varpi1")]
    common = dict(variant=cfg["variant"], n=cfg["n"], rounds=cfg["rounds"], seed=cfg["seed"])
    if cfg["design"] and cfg["design"] in DESIGNS:
        design = McDesign.named(cfg["design"], **common)
    elif all(v is not None for v in explicit):
        design = McDesign(cfg["design"] or "custom", rho_L=explicit[0], rho_H=explicit[1],
                          varpi0=explicit[2], varpi1=explicit[3], **common)
    else:
        raise DesignError(f"unknown design {cfg['design']!r}; choose from {sorted(DESIGNS)} "
                          "or give rho_L, rho_H, varpi0, varpi1")
    estimators = cfg["estimator"] or [MLE, EC, PL]
    threads = cfg["threads"] or os.cpu_count() or 1
    summary = run_mc(design, reps=cfg["reps"], estimators=estimators, options=solver_options(cfg),
                     threads=threads)
    out_dir = _out_dir(cfg)
    head = (f"seed={design.seed} design={design.design_id} variant={design.variant.value} "
            f"n={design.n} reps={summary.reps} rounds={design.rounds}")
    st = summary.mean_stats
    emit(out_dir, "network_stats", "Network statistics (means over replications)",
         ["design", "density", "reciprocity_share", "transitivity", "mle_success", "pl_success", "reps"],
         [(design.design_id, st["density"], st["reciprocity_share"], st["transitivity"],
           summary.mle_success_rate, summary.pl_success_rate, summary.reps)], head, stream)
    prow = [(est, nm, v["bias"], v["sd"], v["coverage"], v["mean_se"], v["count"])
            for est, tab in summary.params.items() for nm, v in tab.items()]
    prow += [(est, NA, NA, NA, NA, NA, 0) for est, tab in summary.params.items() if not tab]
    emit(out_dir, "parameters", "Common parameters: median bias, SD, 95% coverage",
         ["estimator", "parameter", "bias", "sd", "coverage", "mean_se", "count"], prow, head, stream)
    arow = [(est, nm, v["bias"], v["sd"], v["coverage"], v["count"])
            for est, tab in summary.apes.items() for nm, v in tab.items()]
    emit(out_dir, "apes", "Average partial effects: median bias, SD, 95% coverage",
         ["estimator", "regressor", "bias", "sd", "coverage", "count"], arow, head, stream)
    if out_dir is not None:
        write_table(out_dir / "failures.csv", ["rep", "estimator", "status", "reason"],
                    [(f["rep"], f["estimator"], f["status"], f["reason"]) for f in summary.failures], head)
    return 0


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    try:
        cfg = resolve(argv)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if cfg.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[cfg["command"]](cfg)
    except (ConfigError, NetworkError, ModelError, DesignError, ApeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
