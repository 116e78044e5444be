"""Command-line interface.

Subcommands: ``fit``, ``simulate``, ``verify-theorems``, ``overfit-demo``
and ``summarize``. Every run writes its fully resolved configuration to
``<out>/config.json``; passing that file back with ``--config`` repeats
the run exactly. Flags given on the command line override values from
the configuration file.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import quadrature_moments, summarize
from .bases import DesignMatrix
from .datasets import ColumnRoles, read_dataset, surrogate_graph, us48_graph
from .errors import (DataFormatError, InvalidEdge, InvalidParameter, IwlsDiverged, MomentUndefined,
                     NumericalFailure, RsrError)
from .graph import read_edge_list
from .model import PriorConfig, make_model
from .samplers import ChainConfig, ChainOutput, gibbs_gaussian, mh_poisson, proposal_fisher, run_chain_diagnostics
from .simulation import (DESK_SCALE, KINDS, PAPER_SCALE, STUDIES, SimulationReport, overfit_csv, overfit_demo,
                         read_fits_csv, run_simulation, summarize_fits)
from .theorems import run_battery, write_report

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this tool reserves 2 for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ------------------------------------------------------------------ config

DEFAULTS = {
    "fit": {"graph": None, "data": None, "response": None, "covariates": [], "expected": None, "model": "ns",
            "q": None, "q_sweep": None, "family": "gaussian", "iters": 20000, "burnin": None, "seed": 0,
            "alpha": 0.05, "priors": {}, "chain_csv": False, "intercept": True},
    "simulate": {"study": "sim1", "graph": None, "replicates": None, "iters": None, "burnin": None, "seed": 2024,
                 "paper_scale": False, "priors": {}},
    "verify-theorems": {"instances": 100, "rotations": 20, "lemma_instances": 20, "grid": 20,
                        "gibbs_iters": 20000, "seed": 20240601},
    "overfit-demo": {"data": None, "response": None, "covariates": [], "order": "correlation", "priors": {},
                     "intercept": True},
    "summarize": {"input": None, "alpha": 0.05},
}


def _resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if loaded.get("command", command) != command:
            raise UsageError(f"config was written for {loaded['command']!r}, not {command!r}")
        unknown = set(loaded) - set(cfg) - {"command", "version"}
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update({k: v for k, v in loaded.items() if k in cfg})
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            cfg[key] = val
    if getattr(args, "no_intercept", False):
        cfg["intercept"] = False
    cfg["command"] = command
    return cfg


def _write_config(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _priors(cfg: dict, family: str) -> PriorConfig:
    base = PriorConfig.default(family).to_dict()
    base.update(cfg.get("priors") or {})
    try:
        return PriorConfig.from_dict(base)
    except (TypeError, KeyError) as exc:
        raise UsageError(f"bad priors entry: {exc}") from None


def _chain(cfg: dict, iters=None, burnin=None) -> ChainConfig:
    return ChainConfig(iterations=int(iters if iters is not None else cfg["iters"]),
                       burn_in=None if burnin is None else int(burnin), seed=int(cfg.get("seed", 0)))


def _load_graph(path):
    if path in (None, "us48"):
        return us48_graph()
    if path == "surrogate194":
        return surrogate_graph()
    return read_edge_list(path)


def _covariate_matrix(cfg: dict, n_expected=None):
    """Design from the data file; ``name^k`` adds a power of a column."""
    if not cfg.get("data") or not cfg.get("response"):
        raise UsageError("--data and --response are required")
    terms = list(cfg.get("covariates") or [])
    base = []
    for t in terms:
        col = t.split("^")[0]
        if col not in base:
            base.append(col)
    roles = ColumnRoles(cfg["response"], tuple(base), cfg.get("expected"))
    ds = read_dataset(cfg["data"], roles, n_expected)
    cols = []
    for t in terms:
        col, _, pw = t.partition("^")
        try:
            k = int(pw) if pw else 1
        except ValueError:
            raise UsageError(f"bad covariate term {t!r}") from None
        cols.append(ds.covariates[:, base.index(col)] ** k)
    Z = np.column_stack(cols) if cols else np.zeros((ds.n, 0))
    if cfg.get("intercept", True):
        d = DesignMatrix.with_ones(Z, tuple(terms)) if cols else DesignMatrix(np.ones((ds.n, 1)), True, ("(Intercept)",))
    else:
        if not cols:
            raise UsageError("a model without intercept needs at least one covariate")
        d = DesignMatrix(Z, False, tuple(terms))
    return ds, d


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------- commands


def cmd_fit(cfg: dict, out: Path) -> int:
    graph = _load_graph(cfg["graph"]) if cfg["model"] != "ns" or cfg["graph"] else None
    ds, design = _covariate_matrix(cfg, graph.n if graph is not None else None)
    family = cfg["family"]
    priors = _priors(cfg, family)
    kind = cfg["model"].upper()
    offset = ds.log_offset
    if family == "gaussian" and offset is not None:
        raise UsageError("expected counts only apply to the Poisson family")
    chain = _chain(cfg, burnin=cfg["burnin"])
    _write_config(out, cfg)

    def build(kind_, q=None):
        if family == "poisson" and kind_ in ("RHZ", "HH"):
            base = make_model("NS", None, design, priors, family="poisson", offset=offset)
            fit = proposal_fisher(base, ds.y)
            return make_model(kind_, graph, design, priors, family, q=q, offset=offset, iwls_weights=fit.w_diag)
        return make_model(kind_, graph, design, priors, family, q=q, offset=offset)

    spec = build(kind, cfg["q"])
    for note in spec.notes:
        _log(f"note: {note}")
    if family == "gaussian":
        res = gibbs_gaussian(spec, ds.y, chain)
    else:
        res = mh_poisson(spec, ds.y, chain)
    for w in res.warnings:
        _log(f"warning: {w}")
    names = spec.design.names or tuple(f"beta{k}" for k in range(spec.p))
    summ = summarize(res, cfg["alpha"], names)
    rows = [(nm, m, v, lo, hi, se) for nm, m, v, lo, hi, se in summ.rows()]
    (out / "summary.csv").write_text(_csv_text(["coefficient", "mean", "variance", "ci_lower", "ci_upper", "mcse"], rows))
    diag = run_chain_diagnostics(res)
    drows = [(blk, j, float(mc), float(es)) for blk, (mcse, ess) in diag.items()
             for j, (mc, es) in enumerate(zip(np.atleast_1d(mcse), np.atleast_1d(ess)))]
    (out / "diagnostics.csv").write_text(_csv_text(["block", "index", "mcse", "ess"], drows))
    if cfg["chain_csv"]:
        cols = [res.beta_samples]
        header = ["iteration", *names]
        if res.tau_s_samples is not None:
            cols.append(res.tau_s_samples[:, None]), header.append("tau_s")
        if res.tau_eps_samples is not None:
            cols.append(res.tau_eps_samples[:, None]), header.append("tau_eps")
        M = np.hstack(cols)
        it0 = chain.burn_in
        (out / "chain.csv").write_text(_csv_text(header, ([it0 + i, *row] for i, row in enumerate(M))))
    if cfg["q_sweep"]:
        _q_sweep(cfg, spec, build, ds, out)
    _log(f"fit {kind} written to {out}")
    return EXIT_OK


def _parse_range(text: str):
    try:
        lo, _, hi = str(text).partition(":")
        lo, hi = int(lo), int(hi or lo)
    except ValueError:
        raise UsageError(f"bad --q-sweep range {text!r}; use LO:HI") from None
    if lo < 1 or hi < lo:
        raise UsageError(f"bad --q-sweep range {text!r}")
    return range(lo, hi + 1)


def _q_sweep(cfg, spec, build, ds, out):
    """Posterior variances of beta across HH basis sizes.

    Gaussian fits use deterministic quadrature; Poisson fits run a chain
    per q. Row q = 0 is the non-spatial model.
    """
    if cfg["model"] != "hh":
        raise UsageError("--q-sweep applies to the HH model")
    names = spec.design.names
    rows = []
    for q in [0, *_parse_range(cfg["q_sweep"])]:
        s = build("NS") if q == 0 else build("HH", q)
        if cfg["family"] == "gaussian":
            mom = quadrature_moments(s, ds.y)
            mean, var = mom.mean, mom.variance
        else:
            res = mh_poisson(s, ds.y, _chain(cfg, burnin=cfg["burnin"]))
            mean, var = res.beta_samples.mean(axis=0), res.beta_samples.var(axis=0, ddof=1)
        rows.append([q, *mean, *var])
    header = ["q", *(f"mean_{n}" for n in names), *(f"var_{n}" for n in names)]
    (out / "q_sweep.csv").write_text(_csv_text(header, rows))


def cmd_simulate(cfg: dict, out: Path) -> int:
    if cfg["study"] not in STUDIES:
        raise UsageError(f"unknown study {cfg['study']!r}; choose from {', '.join(STUDIES)}")
    study = STUDIES[cfg["study"]]
    scale = (PAPER_SCALE if cfg["paper_scale"] else DESK_SCALE)[study.family]
    reps = int(cfg["replicates"] or scale[0])
    iters = int(cfg["iters"] or scale[1])
    graph_path = cfg["graph"] or ("surrogate194" if study.family == "poisson" else "us48")
    graph = _load_graph(graph_path)
    chain = ChainConfig(iterations=iters, burn_in=None if cfg["burnin"] is None else int(cfg["burnin"]))
    cfg = {**cfg, "replicates": reps, "iters": iters, "burnin": chain.burn_in, "graph": graph_path}
    _write_config(out, cfg)
    rep = run_simulation(study, graph, reps, chain, int(cfg["seed"]), priors=_priors(cfg, study.family), log=_log)
    _write_report(rep, out)
    return EXIT_OK


def _write_report(rep: SimulationReport, out: Path) -> None:
    (out / "fits.csv").write_text(rep.fits_csv())
    (out / "cells.csv").write_text(rep.cells_csv())
    (out / "comparisons.csv").write_text(rep.comparisons_csv())
    (out / "table.txt").write_text(rep.table() + "\n")


def cmd_verify(cfg: dict, out: Path) -> int:
    _write_config(out, cfg)
    gi = int(cfg["gibbs_iters"]) or None
    recs, _ = run_battery(int(cfg["instances"]), int(cfg["rotations"]), int(cfg["lemma_instances"]),
                          int(cfg["grid"]), gi, int(cfg["seed"]), log=_log,
                          cross_checks=min(5, int(cfg["instances"])))
    write_report(recs, out / "checks.csv")
    failed = [r for r in recs if r.kind == "assert" and not r.passed]
    by = {}
    for r in recs:
        by.setdefault((r.check, r.kind), []).append(r.passed)
    for (check, kind), ok in by.items():
        _log(f"{check:<28} {kind:<8} {sum(ok)}/{len(ok)}")
    if failed:
        _log(f"{len(failed)} assertion-level checks failed; see {out / 'checks.csv'}")
        return EXIT_VERIFY
    return EXIT_OK


def cmd_overfit(cfg: dict, out: Path) -> int:
    ds, design = _covariate_matrix(cfg)
    priors = _priors(cfg, "gaussian")
    _write_config(out, cfg)
    steps = overfit_demo(design, ds.y, priors, cfg["order"])
    (out / "overfit.csv").write_text(overfit_csv(steps, design.names or tuple(f"beta{k}" for k in range(design.p))))
    _log(f"{len(steps) - 1} synthetic covariates added")
    return EXIT_OK


def cmd_summarize(cfg: dict, out: Path) -> int:
    """Re-derive report tables from a fits CSV, or summarize a chain CSV."""
    if not cfg["input"]:
        raise UsageError("--input is required")
    path = Path(cfg["input"])
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from None
    header = text.split("\n", 1)[0].split(",")
    _write_config(out, cfg)
    if header[:3] == ["study", "gen", "analysis"]:
        study, fits = read_fits_csv(text)
        gens = [g for g in KINDS if any(f.gen == g for f in fits)]
        kinds = [k for k in KINDS if any(f.kind == k for f in fits)]
        reps = len({f.rep for f in fits})
        rep = SimulationReport(study, reps, {"iterations": "?", "burn_in": "?"}, -1, fits)
        rep.cells, rep.comparisons = summarize_fits(fits, gens, kinds)
        (out / "cells.csv").write_text(rep.cells_csv())
        (out / "comparisons.csv").write_text(rep.comparisons_csv())
        (out / "table.txt").write_text(rep.table() + "\n")
        return EXIT_OK
    if header[0] == "iteration":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        try:
            M = np.array([[float(v) for v in r] for r in rows if r])
        except ValueError as exc:
            raise DataFormatError(f"{path}: {exc}") from None
        names = [h for h in header[1:] if h not in ("tau_s", "tau_eps")]
        B = np.ascontiguousarray(M[:, 1:1 + len(names)])
        summ = summarize(ChainOutput(B, None, None, 0, 0), float(cfg["alpha"]), names)
        rows = list(summ.rows())
        (out / "summary.csv").write_text(_csv_text(["coefficient", "mean", "variance", "ci_lower", "ci_upper", "mcse"], rows))
        return EXIT_OK
    raise DataFormatError(f"{path}: not a fits or chain CSV (header {header[:3]})")


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "verify-theorems": cmd_verify,
            "overfit-demo": cmd_overfit, "summarize": cmd_summarize}


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rsrlab", description="Restricted spatial regression toolkit")
    p.add_argument("--version", action="version", version=f"rsrlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration; flags override its values")
        sp.add_argument("--out", required=True, help="output directory")

    def data_flags(sp):
        sp.add_argument("--data", help="CSV file with a header row")
        sp.add_argument("--response", help="response column")
        sp.add_argument("--covariates", type=lambda s: [c for c in s.split(",") if c],
                        help="comma-separated covariate columns; NAME^K adds a power")
        sp.add_argument("--no-intercept", action="store_true", help="omit the intercept column")

    f = sub.add_parser("fit", help="fit one model by MCMC")
    common(f), data_flags(f)
    f.add_argument("--graph", help="edge list file, or 'us48' / 'surrogate194'")
    f.add_argument("--expected", help="column of expected counts (Poisson offset)")
    f.add_argument("--model", choices=["ns", "icar", "rhz", "hh"])
    f.add_argument("--q", type=int, help="HH basis size")
    f.add_argument("--q-sweep", help="HH basis sizes LO:HI for a variance sweep")
    f.add_argument("--family", choices=["gaussian", "poisson"])
    f.add_argument("--iters", type=int)
    f.add_argument("--burnin", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--alpha", type=float)
    f.add_argument("--chain-csv", action="store_true", default=None, help="also write the retained draws")

    s = sub.add_parser("simulate", help="run a simulation study")
    common(s)
    s.add_argument("--study", choices=sorted(STUDIES))
    s.add_argument("--graph", help="edge list file overriding the study's default graph")
    s.add_argument("--replicates", type=int)
    s.add_argument("--iters", type=int)
    s.add_argument("--burnin", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--paper-scale", action="store_true", default=None,
                   help="1000 x 80k (Gaussian) or 100 x 1M (Poisson) instead of desk scale")

    v = sub.add_parser("verify-theorems", help="run the deterministic theorem battery")
    common(v)
    v.add_argument("--instances", type=int)
    v.add_argument("--rotations", type=int)
    v.add_argument("--lemma-instances", type=int)
    v.add_argument("--grid", type=int)
    v.add_argument("--gibbs-iters", type=int, help="0 skips the Gibbs comparison")
    v.add_argument("--seed", type=int)

    o = sub.add_parser("overfit-demo", help="variance path of an overfit non-spatial model")
    common(o), data_flags(o)
    o.add_argument("--order", choices=["correlation", "basis"])

    m = sub.add_parser("summarize", help="tables from a fits CSV or a summary from a chain CSV")
    common(m)
    m.add_argument("--input")
    m.add_argument("--alpha", type=float)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args.command, args)
        return COMMANDS[args.command](cfg, Path(args.out))
    except UsageError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except (DataFormatError, InvalidEdge, InvalidParameter, FileNotFoundError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except (NumericalFailure, IwlsDiverged, MomentUndefined) as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except RsrError as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
