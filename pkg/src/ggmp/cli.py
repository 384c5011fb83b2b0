"""Command-line interface: ``ggmp synth|fit|predict|eval|ablate-weights``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Settings resolve as command-line flags > ``--config`` TOML file > defaults,
and the effective settings are written into every output file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics as mt
from .config import FitConfig, default_jobs, load_config_file, merge_config
from .dataset import (
    DistributionValuedDataset,
    load_gridded,
    load_samples,
    split_train_test,
    write_gridded,
    write_samples,
)
from .errors import DataError, GgmpError, NumericalError, StageError
from .model import (
    fit,
    fit_weights,
    load_model,
    load_model_extra,
    predictive_mixtures,
    save_model,
)
from .synthgen import SyntheticField, make_dataset
from .weights import dist_loglik, optimize_shared_weights, optimize_xdep_weights, relative_lift

log = logging.getLogger("ggmp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(GgmpError):
    pass


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (DataError, OSError)):
        return EXIT_DATA
    return EXIT_NUMERICAL


def _out_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"output directory does not exist: {p}")
    return p


def _parent_exists(path: str) -> Path:
    p = Path(path)
    if not p.parent.is_dir():
        raise UsageError(f"output directory does not exist: {p.parent}")
    return p


def _resolve_config(args, **extra) -> FitConfig:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {
        "K": getattr(args, "k", None),
        "gp.kernel": getattr(args, "kernel", None),
        "align": getattr(args, "align", None),
        "weights.mode": getattr(args, "weights", None),
        "seed": getattr(args, "seed", None),
        "n_jobs": getattr(args, "jobs", None),
    }
    overrides.update(extra)
    return merge_config(FitConfig(), file_values, overrides)


def _load_data(args) -> DistributionValuedDataset:
    ds = load_samples(args.data)
    if getattr(args, "truth", None):
        truth = load_gridded(args.truth)
        ds = ds.with_grids(truth.grids)
    return ds


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = _out_dir(args.out)
    field_ = SyntheticField(seed=args.seed, n_inputs=args.n)
    ds = make_dataset(field_, T=args.t, seed=args.seed, with_truth=args.truth)
    rows = write_samples(ds, out / "samples.csv")
    if args.truth:
        write_gridded(ds, out / "truth.csv")
    meta = {"command": "synth", "n": args.n, "t": args.t, "seed": args.seed, "rows": rows}
    (out / "synth.json").write_text(json.dumps(meta, indent=1))
    print(f"wrote {rows} sample rows for {ds.N} inputs to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    out = _parent_exists(args.out)
    ds = _load_data(args)
    config = _resolve_config(args)
    if args.resume:
        model = load_model(args.resume)
        config = replace(config, K=model.K)
    train = ds
    if args.test_fraction:
        train, _ = split_train_test(ds, args.test_fraction, config.seed)
    if args.resume:
        model = fit_weights(model, train.subset(model.input_ids), config)
    else:
        model = fit(train, config)
    extra = {"data": str(args.data), "test_fraction": args.test_fraction, "split_seed": config.seed}
    save_model(model, out, extra)
    d = model.diagnostics
    print(
        f"{model.label()}: objective equal={d.get('objective_equal', float('nan')):.6f} "
        f"shared={d.get('objective_shared', float('nan')):.6f} -> {out}"
    )
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    X = np.atleast_2d(np.loadtxt(args.inputs, delimiter=",", ndmin=2))
    if X.shape[1] != model.d:
        raise DataError(f"dimension mismatch: model has d={model.d}, inputs have {X.shape[1]} columns")
    out = _parent_exists(args.out)
    W, Mu, V = model.predict_params(X)
    with open(out, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(model.config.to_dict(), sort_keys=True) + "\n")
        w = csv.writer(fh)
        xcols = [f"x{q + 1}" for q in range(model.d)]
        w.writerow(["row", *xcols, "component", "weight"] + [f"mean{j + 1}" for j in range(model.p)] + [f"var{j + 1}" for j in range(model.p)])
        for i in range(X.shape[0]):
            for k in range(model.K):
                w.writerow(
                    [i, *[f"{v:.10g}" for v in X[i]], k, f"{W[i, k]:.10g}"]
                    + [f"{v:.10g}" for v in Mu[i, k]]
                    + [f"{v:.10g}" for v in V[i, k]]
                )
    print(f"wrote predictive mixtures for {X.shape[0]} inputs to {out}")
    return EXIT_OK


def _test_split(args, model) -> DistributionValuedDataset:
    ds = _load_data(args)
    held = [i for i in ds.ids if i not in set(model.input_ids)]
    if not held:
        raise DataError("no held-out inputs: every input in the data was used for training")
    return ds.subset(held)


def cmd_eval(args) -> int:
    requested = set(args.metrics)
    needs_truth = bool(requested & {"divergence"})
    if needs_truth and not args.truth:
        raise UsageError("divergence metrics need reference densities: pass --truth")
    model = load_model(args.model)
    test = _test_split(args, model)
    out = _parent_exists(args.out)
    rows = []
    label = model.label()
    if "divergence" in requested:
        stats = mt.summarize(mt.density_divergences(model, test.X, test.grid_list()))
        rows += mt.report_rows(label, model.K, stats)
    if "calibration" in requested:
        _, summ = mt.calibration(model, test.X, test.sample_list())
        rec_rows = [(label, model.K, k, v, 0.0) for k, v in summ.items()]
        rows += rec_rows
    if "joint" in requested:
        stats = mt.summarize(mt.sample_divergences(model, test.X, test.sample_list(), seed=model.config.seed))
        rows += mt.report_rows(label, model.K, stats)
    mt.write_report(out, rows, {"model": str(args.model), **model.config.to_dict()})
    if args.plot_data:
        slices = []
        mixes = predictive_mixtures(model, test.X)
        for pid, mix in zip(test.ids, mixes):
            if pid in test.grids:
                g = test.grids[pid]
                slices.append((pid, g.grid, g.density, mix.pdf(g.grid)))
        mt.write_plot_data(_parent_exists(args.plot_data), slices, model.config.to_dict())
    print(f"wrote {len(rows)} metric rows to {out}")
    return EXIT_OK


ABLATION_HEADER = ("K", "L_equal", "L_shared", "lift_shared_pct", "L_input", "lift_input_pct")


def run_ablation(train: DistributionValuedDataset, ks, base: FitConfig, input_dependent: bool) -> list[dict]:
    """Equal vs shared (vs input-dependent) weights on the same trained GPs."""
    from .model import build_table

    rows = []
    for K in ks:
        cfg = replace(base, K=K, weights=replace(base.weights, mode="equal"))
        model = fit(train, cfg)
        table = build_table(model, train, cfg.weights.objective, cfg.weights.bins)
        L_eq = dist_loglik(table, np.full(K, 1.0 / K))
        res = optimize_shared_weights(table, tol=cfg.weights.tol, max_iter=cfg.weights.max_iter)
        row = {"K": K, "L_equal": L_eq, "L_shared": res.objective, "lift_shared_pct": relative_lift(res.objective, L_eq)}
        if input_dependent:
            xres = optimize_xdep_weights(table, model.X_train, res.weights)
            row["L_input"] = xres.objective
            row["lift_input_pct"] = relative_lift(xres.objective, res.objective)
        rows.append(row)
    return rows


def cmd_ablate_weights(args) -> int:
    out = _parent_exists(args.out)
    ds = _load_data(args)
    base = _resolve_config(args)
    train = ds
    if args.test_fraction:
        train, _ = split_train_test(ds, args.test_fraction, base.seed)
    rows = run_ablation(train, args.ks, base, args.input_dependent)
    header = [h for h in ABLATION_HEADER if args.input_dependent or "input" not in h]
    with open(out, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(base.to_dict(), sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            # full precision: lifts are small differences of large objectives
            w.writerow([r["K"]] + [f"{r[h]:.17g}" for h in header[1:]])
    print(f"wrote {len(rows)} ablation rows to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file (overridden by flags)")
    p.add_argument("--kernel", choices=["se", "matern52"])
    p.add_argument("--align", choices=["auto", "sort", "hungarian"])
    p.add_argument("--weights", choices=["equal", "shared", "input"])
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help=f"worker processes (default from $GGMP_JOBS, now {default_jobs()})")
    p.add_argument("--test-fraction", type=float, default=0.2, help="inputs held out before fitting (0 to use all)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ggmp", description="Gaussian-mixture GP regression on distribution-valued data")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--t", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="existing output directory")
    p.add_argument("--truth", action=argparse.BooleanOptionalAction, default=True, help="also write exact gridded densities")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit a model")
    p.add_argument("--data", required=True)
    p.add_argument("--truth", help=argparse.SUPPRESS)
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="existing model file: keep its GPs, re-run the weight stage")
    _add_fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predictive mixture parameters at new inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True, help="CSV of input vectors, no header")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="metrics on the held-out inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--truth", help="gridded reference densities CSV")
    p.add_argument("--metrics", nargs="+", choices=["divergence", "calibration", "joint"], default=["divergence", "calibration"])
    p.add_argument("--out", required=True)
    p.add_argument("--plot-data", help="also write density slices here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-weights", help="equal vs optimised weights")
    p.add_argument("--data", required=True)
    p.add_argument("--truth", help=argparse.SUPPRESS)
    p.add_argument("--ks", type=int, nargs="+", default=[3, 5, 10, 25])
    p.add_argument("--input-dependent", action="store_true")
    p.add_argument("--out", required=True)
    _add_fit_options(p)
    p.set_defaults(func=cmd_ablate_weights)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return args.func(args)
    except (GgmpError, OSError) as exc:
        print(f"ggmp {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
