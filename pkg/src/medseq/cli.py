"""Command-line interface: ``medseq summarize | fit | select | bootstrap``.

Every option may also be given in a plain-text ``key=value`` file passed with
``--config``; keys are the long option names with dashes or underscores, and
command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import seqdata
from .ecm import (
    Control,
    EmptyComponentError,
    InadmissibleSpecError,
    ModelSpec,
    fit,
    load_model,
)
from .edm import MODEL_TYPES
from .gating import GatingConfig, RankDeficientDesignError
from .selection import FitCache, grid_search, stepwise
from .wlbs import wlbs_se

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_INTERNAL = 0, 2, 3, 4


class InputError(Exception):
    pass


class NotConverged(Exception):
    pass


def _csv_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()] if text else []


def _int_range(text: str) -> range:
    if ":" in text:
        a, b = text.split(":", 1)
        return range(int(a), int(b) + 1)
    vals = [int(x) for x in _csv_list(text)]
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="medseq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--config", help="key=value file of option defaults")
        sp.add_argument("--input", help="wide-format CSV, one sequence per row")
        sp.add_argument("--seq-columns", help="first:last header range, or name prefix")
        sp.add_argument("--id-column")
        sp.add_argument("--weight-column")
        sp.add_argument("--covariates", default="", help="comma-separated covariate columns")
        sp.add_argument("--delimiter", default=",")
        sp.add_argument("--trim", help="keep time points first:last (1-based, inclusive)")
        sp.add_argument("--seed", type=int, help="random seed (required)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--log-level", default="WARNING")

    def control_args(sp):
        sp.add_argument("--tol", type=float, default=1e-8)
        sp.add_argument("--max-iter", type=int, default=1000)
        sp.add_argument("--tau0-init", type=float, default=0.05)
        sp.add_argument("--lambda-max", type=float, default=1e3)
        sp.add_argument("--noise-gating", choices=["GN", "NGN"], default="NGN")
        sp.add_argument("--ridge", type=float, default=1e-8)

    s = sub.add_parser("summarize", help="state distributions, entropies, duplicates")
    data_args(s)

    f = sub.add_parser("fit", help="fit one model")
    data_args(f)
    control_args(f)
    f.add_argument("--model-type", choices=MODEL_TYPES)
    f.add_argument("--G", type=int)
    f.add_argument("--gating", choices=["equal", "free", "covariate"],
                   help="default: covariate if --gating-covariates is set, else free")
    f.add_argument("--gating-covariates", default="")

    g = sub.add_parser("select", help="grid and stepwise model search")
    data_args(g)
    control_args(g)
    g.add_argument("--types", default=",".join(MODEL_TYPES))
    g.add_argument("--G-range", default="1:9", help="first:last or comma list")
    g.add_argument("--gating-covariates", default="",
                   help="covariates in the grid's gating network")
    g.add_argument("--stepwise", choices=["none", "forward", "backward"], default="none")
    g.add_argument("--candidate-covariates", default="",
                   help="stepwise covariate pool (default: --covariates)")
    g.add_argument("--workers", type=int, default=1)

    b = sub.add_parser("bootstrap", help="WLBS standard errors of a fitted model")
    data_args(b)
    b.add_argument("--model", help="model.json written by fit or select")
    b.add_argument("--B", type=int, default=1000)
    b.add_argument("--workers", type=int, default=1)
    return p


def read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}, line {lineno}: expected key=value")
            k, v = (x.strip() for x in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        conf = read_config(args.config)
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(conf) - known)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        sp.set_defaults(**conf)
        args = parser.parse_args(argv)
    for req in ("input", "seq_columns", "out", "seed"):
        if getattr(args, req, None) in (None, ""):
            raise InputError(f"--{req.replace('_', '-')} is required")
    return args


def load_dataset(args) -> seqdata.SequenceDataset:
    try:
        ds = seqdata.parse_csv(
            args.input,
            args.seq_columns,
            id_column=args.id_column,
            weight_column=args.weight_column,
            covariate_columns=_csv_list(args.covariates),
            delimiter=args.delimiter,
        )
    except FileNotFoundError as exc:
        raise InputError(f"cannot read {args.input}: {exc.strerror}") from None
    if args.trim:
        a, b = (int(x) for x in args.trim.split(":"))
        try:
            ds = seqdata.trim_time_range(ds, a - 1, b - 1)
        except IndexError as exc:
            raise InputError(str(exc)) from None
    return ds


def _control(args) -> Control:
    return Control(args.tol, args.max_iter, args.seed, args.tau0_init, args.lambda_max)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        out.writerows(rows)


def _g(x) -> str:
    return f"{x:.17g}"


def cmd_summarize(args) -> int:
    ds = load_dataset(args)
    out = Path(args.out) / "summary"
    out.mkdir(parents=True, exist_ok=True)
    labels = list(ds.alphabet.labels)
    dist = seqdata.state_distribution(ds)
    _write_rows(out / "state_distribution.csv", ["time", *labels],
                [[t, *map(_g, row)] for t, row in zip(ds.time_labels, dist)])
    ent = seqdata.transversal_entropy(ds)
    _write_rows(out / "entropy.csv", ["time", "entropy"],
                [[t, _g(e)] for t, e in zip(ds.time_labels, ent)])
    obs = ds.observed_mask
    _write_rows(out / "observed_states.csv", ["time", "v_t", "states"],
                [[t, int(m.sum()), " ".join(np.array(labels)[m])]
                 for t, m in zip(ds.time_labels, obs)])
    agg, amap = seqdata.aggregate_duplicates(ds, include_covariates=False)
    sizes = np.bincount(amap.unique_index_of, minlength=agg.n)
    order = sorted(range(agg.n), key=lambda j: (-sizes[j], j))
    _write_rows(out / "duplicates.csv", ["group", "size", "weight", "sequence"],
                [[k + 1, int(sizes[j]), _g(agg.weights[j]),
                  seqdata.sps_encode(agg.states[j], ds.alphabet)]
                 for k, j in enumerate(order)])
    raw = ds.raw_weights
    _write_rows(out / "weights.csv", ["statistic", "value"], [
        ["n", ds.n],
        ["distinct_sequences", agg.n],
        ["raw_sum", _g(raw.sum())],
        ["raw_min", _g(raw.min())],
        ["raw_max", _g(raw.max())],
        ["normalized_sum", _g(ds.weights.sum())],
    ])
    print(f"n={ds.n} T={ds.T} v={ds.v} distinct={agg.n}; wrote {out}")
    return EXIT_OK


def _write_model(model, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    model.to_json(out / "model.json")
    model.write_z_csv(out / "z.csv")
    (out / "report.txt").write_text(model.summary() + "\n")


def cmd_fit(args) -> int:
    ds = load_dataset(args)
    covs = tuple(_csv_list(args.gating_covariates))
    mode = args.gating or ("covariate" if covs else "free")
    if args.model_type is None or args.G is None:
        raise InputError("--model-type and --G are required")
    gating = GatingConfig(mode, covs, args.noise_gating, args.ridge)
    spec = ModelSpec(args.model_type, args.G, gating, _control(args))
    model = fit(ds, spec)
    _write_model(model, Path(args.out))
    print(model.summary())
    if not model.converged:
        raise NotConverged(f"no convergence within {spec.control.max_iter} iterations")
    return EXIT_OK


def cmd_select(args) -> int:
    ds = load_dataset(args)
    control = _control(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    types = _csv_list(args.types)
    bad = [t for t in types if t not in MODEL_TYPES]
    if bad:
        raise InputError(f"unknown model types: {', '.join(bad)}")
    covs = tuple(_csv_list(args.gating_covariates))
    gating = GatingConfig("covariate" if covs else "free", covs, args.noise_gating, args.ridge)
    cache = FitCache(ds, control, args.workers)
    grid = grid_search(ds, types, _int_range(args.G_range), gating, control, cache=cache)
    grid.write_csv(out / "grid.csv")
    if grid.best is None:
        raise NotConverged("every model in the grid failed")
    best = grid.best
    print(f"grid best: {best.spec.describe()} BIC={best.bic:.2f}")
    if args.stepwise != "none":
        pool = _csv_list(args.candidate_covariates) or list(ds.covariate_names)
        trace = stepwise(ds, best, pool, args.stepwise, cache=cache)
        trace.write_csv(out / "stepwise.csv")
        for r in trace.accepted:
            print(f"  step {r.step}: {r.action:<20} {r.spec} BIC={r.bic:.2f}")
        best = trace.final
    _write_model(best, out)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    ds = load_dataset(args)
    if not args.model or not Path(args.model).exists():
        raise InputError(f"fitted model file not found: {args.model}")
    model = load_model(args.model, ds)
    res = wlbs_se(model, ds, args.B, args.seed, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.write_csv(out / "se.csv")
    rows = []
    for b in range(res.B):
        for j, comp in enumerate(res.components):
            for a, term in enumerate(res.terms):
                rows.append([b + 1, comp, term, _g(res.draws[b, a, j])])
    _write_rows(out / "draws.csv", ["replicate", "component", "term", "value"], rows)
    report = (
        f"weighted likelihood bootstrap, B={res.B}, failed={len(res.failed)}\n"
        "standard errors are approximate\n" + res.table().report() + "\n"
    )
    (out / "report.txt").write_text(report)
    print(report, end="")
    return EXIT_OK


COMMANDS = {
    "summarize": cmd_summarize,
    "fit": cmd_fit,
    "select": cmd_select,
    "bootstrap": cmd_bootstrap,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except (InputError, seqdata.SchemaError, InadmissibleSpecError, KeyError,
            RankDeficientDesignError, ValueError, json.JSONDecodeError) as exc:
        print(f"medseq: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NotConverged, EmptyComponentError) as exc:
        print(f"medseq: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    except Exception as exc:  # noqa: BLE001
        print(f"medseq: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
