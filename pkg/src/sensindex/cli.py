"""``sensindex`` command-line entry point."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io, suites
from . import variance as var
from .errors import EXIT_CODES, ConfigError, SensIndexError, SuiteFailed
from .estimators import ESTIMATORS, EstimateReport, sobol_multivariate, tn_curve
from .models import CATALOGUE, MULTI_CATALOGUE, get_model, output_moments, sample_model
from .quadrature import CVM_DEFAULT, DEFAULT
from .ranking import TiePolicy

USAGE_EXIT = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _exit_table() -> str:
    return "exit codes:\n" + "\n".join(f"  {k:>3}  {v}" for k, v in sorted(EXIT_CODES.items()))


def _common(p, model_required=False):
    p.add_argument("--model", required=model_required,
                   help="catalogue model: " + ", ".join(sorted(CATALOGUE) + sorted(MULTI_CATALOGUE)))
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="model parameter (repeatable), e.g. a=0.5")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the JSON/CSV result here instead of stdout")
    p.add_argument("--config", help="JSON run configuration; command-line flags take precedence")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sensindex",
        description="Rank-based Sobol' and Cramer-von Mises sensitivity indices.",
        epilog=_exit_table(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="estimate an index from a CSV sample", epilog=_exit_table(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("csv", help="CSV with columns x,y or x,y1..yd")
    p.add_argument("--index", choices=sorted(ESTIMATORS), default="sobol")
    p.add_argument("--level", type=float, help="confidence level for the interval (needs --model)")
    p.add_argument("--tie-policy", choices=[t.value for t in TiePolicy])
    p.add_argument("--emit-plot-data", metavar="CSV", help="write the neighbour curve T_n(t) as tidy CSV")
    _common(p)

    p = sub.add_parser("simulate", help="draw a seeded sample from a catalogue model")
    p.add_argument("--n", type=int)
    _common(p)

    p = sub.add_parser("variance", help="asymptotic variance breakdown for a catalogue model")
    p.add_argument("--index", choices=["sobol", "cvm"], default="sobol")
    _common(p)

    p = sub.add_parser("verify", help="run a verification suite", epilog=_exit_table(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("suite", choices=suites.SUITES)
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--emit-plot-data", metavar="CSV", help="write per-replicate or per-n rows as CSV")
    _common(p)
    return parser


def _config(args) -> io.RunConfig:
    cfg = io.load_config(args.config) if getattr(args, "config", None) else io.RunConfig()
    for key in ("model", "seed", "out"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    for key in ("n", "reps", "level", "tie_policy", "emit_plot_data", "index"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    params = dict(cfg.params)
    params.update(dict(io.parse_param(t) for t in getattr(args, "param", [])))
    cfg.params = params
    cfg.validate("command line")
    return cfg


def _emit(cfg, text: str) -> None:
    if cfg.out:
        io.write_text(cfg.out, text)
    else:
        sys.stdout.write(text)


def cmd_estimate(args, cfg) -> int:
    sample = io.read_sample_csv(args.csv)
    kind = cfg.index or "sobol"
    tie = TiePolicy(cfg.tie_policy or TiePolicy.ERROR)
    seed = cfg.seed or 0
    if sample.d > 1:
        if kind != "sobol":
            raise ConfigError("vector outputs are supported for the sobol index only")
        point = sobol_multivariate(sample, tie, seed).tolist()
    else:
        point = ESTIMATORS[kind](sample, tie, seed)
    report = EstimateReport(index_name=kind, point=point, n=sample.n,
                            diagnostics={"tie_policy": tie.value, "seed": seed})
    if cfg.model:
        if kind == "chatterjee":
            raise ConfigError("model-based variance is available for sobol and cvm only")
        model = get_model(cfg.model, cfg.params)
        if model.d != sample.d:
            raise ConfigError(f"model {model.name} has {model.d} outputs, sample has {sample.d}")
        level = 0.95 if cfg.level is None else cfg.level
        comps = [model.component(k) for k in range(model.d)]
        deltas, sig2, cis = [], [], []
        pts = np.atleast_1d(point)
        for comp, p in zip(comps, pts):
            d = var.delta_n(comp, sample.n, seed=seed, kind=kind)
            s2 = (var.sobol_asymptotic_variance(comp, cfg.quadrature_spec(DEFAULT)).total if kind == "sobol"
                  else var.cvm_asymptotic_variance(comp, cfg.quadrature_spec(CVM_DEFAULT)).total)
            lo, hi = var.confidence_interval(float(p), s2, sample.n, level)
            deltas.append(d.value)
            sig2.append(s2)
            cis.append({"level": level, "lower": lo, "upper": hi})
        scalar = model.d == 1
        report.bias_delta_n = deltas[0] if scalar else deltas
        report.variance = sig2[0] if scalar else sig2
        report.ci = cis[0] if scalar else {"level": level, "components": cis}
        shift = [d / (2 * float(output_moments(c)["var"])) if kind == "sobol" else 3 * d
                 for c, d in zip(comps, deltas)]
        report.diagnostics["model"] = model.name
        report.diagnostics["center_shift"] = shift[0] if scalar else shift
    elif cfg.level is not None:
        var.confidence_interval(0.0, 0.0, 1, cfg.level)  # validate early, no interval without a model
    if cfg.emit_plot_data and sample.d == 1:
        ts = np.sort(sample.ys)
        io.write_rows_csv(cfg.emit_plot_data, ("t", "tn"),
                          zip(ts.tolist(), np.atleast_1d(tn_curve(sample, ts, tie, seed)).tolist()))
    _emit(cfg, io.dumps(io.envelope("estimate", report.to_dict())))
    return 0


def cmd_simulate(args, cfg) -> int:
    if not cfg.model:
        raise ConfigError("simulate needs --model")
    model = get_model(cfg.model, cfg.params)
    n = cfg.n if cfg.n is not None else 1000
    sample = sample_model(model, n, cfg.seed or 0)
    _emit(cfg, io.sample_to_csv(sample))
    return 0


def cmd_variance(args, cfg) -> int:
    if not cfg.model:
        raise ConfigError("variance needs --model")
    model = get_model(cfg.model, cfg.params)
    kind = cfg.index or "sobol"
    result = {"model": model.name}
    if model.d > 1:
        if kind != "sobol":
            raise ConfigError("vector outputs are supported for the sobol index only")
        comps = var.components(model)
        spec = cfg.quadrature_spec(DEFAULT)
        result["components"] = [var.sobol_asymptotic_variance(c, spec).to_dict() for c in comps]
        result["gamma"] = var.gamma_matrix(comps, spec)
        result["index"] = "sobol"
    elif kind == "sobol":
        result.update(var.sobol_asymptotic_variance(model, cfg.quadrature_spec(DEFAULT)).to_dict())
    else:
        result.update(var.cvm_asymptotic_variance(model, cfg.quadrature_spec(CVM_DEFAULT)).to_dict())
    _emit(cfg, io.dumps(io.envelope("variance", result)))
    return 0


def cmd_verify(args, cfg) -> int:
    scfg = dict(cfg.suite)
    for key in ("n", "reps", "seed", "model"):
        v = getattr(cfg, key)
        if v is not None:
            scfg[key] = v
    if cfg.params:
        scfg["params"] = cfg.params
    rep = suites.run_suite(args.suite, scfg)
    rows = rep.pop("rows")
    if cfg.emit_plot_data and rows:
        io.write_rows_csv(cfg.emit_plot_data, rows[0], rows[1:])
    _emit(cfg, io.dumps(io.envelope("verify", rep, rep["pass"])))
    if not rep["pass"]:
        failed = [a["name"] for a in rep["assertions"] if not a["pass"]]
        raise SuiteFailed(f"suite {args.suite} failed: {', '.join(failed)}")
    return 0


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "variance": cmd_variance,
            "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except SensIndexError as exc:
        print(f"sensindex: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
