"""Command-line surface: ``rsd fit | simulate | evaluate | predict``.

Exit codes: 0 success, 1 validation / input error, 2 runtime failure.
Every command is reproducible from (input files, config file, seed).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .gibbs import run_chain
from .metrics import EvalReport, ari, diffk, rmse_coeff, rmspe
from .postprocess import nearest_labels, summarize_trace
from .samplers import RngStream
from .simulate import SimFactors, enumerate_factor_grid, generate_scenario, high_dim_factors
from .state import ChainConfig, HyperParams

logger = logging.getLogger(__name__)

CONFIG_DEFAULTS = {
    "prior": "ridge",
    "iters": 10_000,
    "burnin": 5_000,
    "thin": 10,
    "K": 20,
    "M": 10,
    "lambda": 0.03,
    "c": 0.01,
    "tau0_sq": 1e-3,
    "a_tau": 0.1,
    "b_tau": 0.1,
    "a_sigma": 0.1,
    "b_sigma": 0.1,
    "bU_prior": [0.1, 0.1],
    "bV_prior": [1.0, 4.0],
    "update_dp_rates": True,
    "seed": 0,
    "no_intercept": False,
    "cv_folds": 5,
}

_CLI_TO_CONFIG = {
    "prior": "prior",
    "iters": "iters",
    "burnin": "burnin",
    "thin": "thin",
    "K": "K",
    "M": "M",
    "lasso_lambda": "lambda",
    "seed": "seed",
    "cv_folds": "cv_folds",
}


class _Parser(argparse.ArgumentParser):
    """Argument errors are validation errors (exit code 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def resolve_config(args) -> dict:
    """defaults < config file < command-line flags."""
    cfg = dict(CONFIG_DEFAULTS)
    if getattr(args, "config", None):
        loaded = io.read_json(args.config)
        unknown = set(loaded) - set(CONFIG_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for attr, key in _CLI_TO_CONFIG.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "no_intercept", False):
        cfg["no_intercept"] = True
    return cfg


def _hyper_params(cfg: dict) -> HyperParams:
    return HyperParams(
        K=int(cfg["K"]),
        M=int(cfg["M"]),
        tau0_sq=float(cfg["tau0_sq"]),
        a_tau=float(cfg["a_tau"]),
        b_tau=float(cfg["b_tau"]),
        a_sigma=float(cfg["a_sigma"]),
        b_sigma=float(cfg["b_sigma"]),
        ridge_c=float(cfg["c"]),
        lasso_lambda=float(cfg["lambda"]),
        bU_prior=tuple(cfg["bU_prior"]),
        bV_prior=tuple(cfg["bV_prior"]),
        prior_kind=cfg["prior"],
        update_dp_rates=bool(cfg["update_dp_rates"]),
    ).validate()


def command_fit(args) -> None:
    cfg = resolve_config(args)
    hp = _hyper_params(cfg)
    chain_cfg = ChainConfig(
        n_iters=int(cfg["iters"]), burn_in=int(cfg["burnin"]),
        thin=int(cfg["thin"]), seed=int(cfg["seed"]),
    ).validate()

    table = io.read_table(args.data)
    data, transform = io.make_dataset(table, add_intercept=not cfg["no_intercept"])

    progress = None
    if args.verbose:
        def progress(t, total, state):
            if t % 500 == 0 or t == total:
                logger.info("iteration %d/%d, %d non-empty segments", t, total, np.unique(state.g).size)

    rng = RngStream(int(cfg["seed"]))
    trace = run_chain(data, hp, chain_cfg, rng=rng, callback=progress)
    result = summarize_trace(trace, data, hp, cv_folds=int(cfg["cv_folds"]), seed=int(cfg["seed"]))

    outdir = Path(args.out)
    io.write_labels_csv(outdir / "labels.csv", table.ids, result.labels)

    coef_rows = []
    names = data.feature_names
    for seg in range(result.K_hat):
        for j, name in enumerate(names):
            row = [seg + 1, name, result.Beta_hat[seg, j]]
            if result.intervals is not None:
                row += [result.intervals[seg, j, 0], result.intervals[seg, j, 1]]
            coef_rows.append(row)
    header = ["segment", "feature", "estimate"]
    if result.intervals is not None:
        header += ["lower95", "upper95"]
    io.write_csv(outdir / "coefficients.csv", header, coef_rows)

    io.write_csv(
        outdir / "trace_summary.csv",
        ["iteration", "n_nonempty_segments"],
        zip(trace.stored_iters.tolist(), trace.stored_K_nonempty.tolist()),
    )
    io.write_model(outdir / "model.json", result, data, table.ids, transform,
                   prior=cfg["prior"], add_intercept=not cfg["no_intercept"])
    io.write_json(outdir / "run_meta.json", {
        "command": "fit",
        "data": str(args.data),
        "config": cfg,
        "versions": io.versions(),
    })
    print(f"fit written to {outdir} ({result.K_hat} segments)")


def _factors_from_args(args, seed: int) -> SimFactors:
    return SimFactors(
        K_star=args.k_star, similarity=args.similarity, density=args.density,
        p=args.p, active=args.active, sigma0_sq=args.sigma0_sq, seed=seed,
    ).validate()


def command_simulate(args) -> None:
    outdir = Path(args.out)
    custom = any(
        getattr(args, name) is not None
        for name in ("k_star", "similarity", "density", "p", "active", "sigma0_sq")
    )
    if custom:
        for name, default in (("k_star", 3), ("similarity", "high"), ("density", "high"),
                              ("p", 4), ("active", 1.0), ("sigma0_sq", 100.0)):
            if getattr(args, name) is None:
                setattr(args, name, default)
        factors = _factors_from_args(args, seed=args.seed)
        scenario = generate_scenario(factors)
        cell_dir = outdir / f"custom_{factors.label()}"
        io.write_scenario(cell_dir, scenario)
        print(f"scenario written to {cell_dir}")
        return

    cells: list[tuple[str, SimFactors]] = []
    grid = enumerate_factor_grid(args.seed)
    if args.grid_cell == "all":
        cells = [(f"cell{i:02d}_{f.label()}", f) for i, f in enumerate(grid)]
    elif args.grid_cell in ("p30", "p100"):
        f = high_dim_factors(int(args.grid_cell[1:]), args.seed)
        cells = [(f"highdim_{f.label()}", f)]
    else:
        try:
            idx = int(args.grid_cell)
        except ValueError:
            raise ValueError(f"--grid-cell must be 'all', an index in 0..31, 'p30' or 'p100', got {args.grid_cell!r}")
        if not 0 <= idx < len(grid):
            raise ValueError(f"--grid-cell index out of range: {idx}")
        cells = [(f"cell{idx:02d}_{grid[idx].label()}", grid[idx])]

    for name, factors in cells:
        io.write_scenario(outdir / name, generate_scenario(factors))
    print(f"{len(cells)} scenario(s) written to {outdir}")


def _evaluate_pair(truth_dir: Path, fit_dir: Path | None, fit_truth_dir: Path | None) -> EvalReport:
    truth = io.read_truth(truth_dir)
    test_table = io.read_table(truth_dir / "test.csv")

    if fit_truth_dir is not None:
        # serialization round trip: another cell's truth plays the fit
        other = io.read_truth(fit_truth_dir)
        other_test = io.read_table(fit_truth_dir / "test.csv")
        k_hat = other["K_star"]
        est_labels = other["true_labels_test"]
        predictions = other_test.y
        beta_hat = other["true_Beta"]
        fit_features = other["feature_names"]
    else:
        model = io.read_json(fit_dir / "model.json")
        k_hat = model["K_hat"]
        transform = io.LocationTransform.from_dict(model["transform"])
        S_test = transform.apply(test_table.lon, test_table.lat)
        est_labels = nearest_labels(
            np.asarray(model["train_locations"]), np.asarray(model["labels"]), S_test
        )
        beta_full = np.asarray(model["beta"])
        X = test_table.features
        if model["add_intercept"]:
            X = np.column_stack([np.ones(test_table.n), X])
        predictions = np.einsum("np,np->n", X, beta_full[est_labels - 1])
        fit_features = model["feature_names"]
        beta_hat = beta_full

    # align coefficient matrices on the truth's feature columns
    positions = []
    for name in truth["feature_names"]:
        if name not in fit_features:
            raise ValueError(f"fitted model lacks feature {name!r} needed for coefficient RMSE")
        positions.append(fit_features.index(name))
    beta_hat_aligned = beta_hat[:, positions]

    signed, absolute = diffk(k_hat, truth["K_star"])
    return EvalReport(
        diffk_signed=signed,
        diffk_abs=absolute,
        ari=ari(est_labels, truth["true_labels_test"]),
        rmspe=rmspe(test_table.y, predictions),
        rmse_coeff=rmse_coeff(
            truth["true_Beta"], beta_hat_aligned, truth["true_labels_test"], est_labels
        ),
    )


def command_evaluate(args) -> None:
    if args.aggregate:
        root = Path(args.aggregate)
        reports = sorted(root.glob("*/report.json"))
        if not reports:
            raise ValueError(f"no */report.json found under {root}")
        ref = {}
        if args.reference:
            for path in sorted(Path(args.reference).glob("*/report.json")):
                ref[path.parent.name] = io.read_json(path)
        metric_names = ["diffk_signed", "diffk_abs", "ari", "rmspe", "rmse_coeff"]
        header = ["cell"] + metric_names
        if ref:
            header += [f"delta_{m}" for m in metric_names]
        rows = []
        for path in reports:
            cell = path.parent.name
            report = io.read_json(path)
            row = [cell] + [report[m] for m in metric_names]
            if ref:
                if cell not in ref:
                    raise ValueError(f"reference run lacks cell {cell!r}")
                row += [report[m] - ref[cell][m] for m in metric_names]
            rows.append(row)
        io.write_csv(args.out, header, rows)
        print(f"aggregate table with {len(rows)} cells written to {args.out}")
        return

    if args.truth is None:
        raise ValueError("--truth is required outside aggregate mode")
    if (args.fit is None) == (args.fit_truth is None):
        raise ValueError("provide exactly one of --fit or --fit-truth (or --aggregate)")
    report = _evaluate_pair(
        Path(args.truth),
        Path(args.fit) if args.fit else None,
        Path(args.fit_truth) if args.fit_truth else None,
    )
    io.write_json(args.out, report.to_dict())
    print(
        f"DIFFK={report.diffk_signed:+d} ARI={report.ari:.4f} "
        f"RMSPE={report.rmspe:.4f} RMSE={report.rmse_coeff:.4f} -> {args.out}"
    )


def command_predict(args) -> None:
    model = io.read_json(Path(args.model) / "model.json")
    table = io.read_table(args.data)
    transform = io.LocationTransform.from_dict(model["transform"])
    S = transform.apply(table.lon, table.lat)
    outside = np.any((S < 0) | (S > 1), axis=1)
    if outside.any():
        logger.warning("%d point(s) outside the stored rescaling box; extrapolating", int(outside.sum()))
    labels = nearest_labels(
        np.asarray(model["train_locations"]), np.asarray(model["labels"]), S
    )
    X = table.features
    if model["add_intercept"]:
        X = np.column_stack([np.ones(table.n), X])
    beta = np.asarray(model["beta"])
    preds = np.einsum("np,np->n", X, beta[labels - 1])
    io.write_csv(
        args.out, ["id", "segment", "prediction"],
        ([table.ids[i], int(labels[i]), preds[i]] for i in range(table.n)),
    )
    print(f"predictions for {table.n} points written to {args.out}")


def build_parser() -> _Parser:
    parser = _Parser(prog="rsd", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="progress logging")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit the segmentation model to a data CSV")
    fit.add_argument("--data", required=True, help="input CSV")
    fit.add_argument("--config", help="JSON config file; flags override it")
    fit.add_argument("--prior", choices=["ridge", "lasso"])
    fit.add_argument("--iters", type=int)
    fit.add_argument("--burnin", type=int)
    fit.add_argument("--thin", type=int)
    fit.add_argument("--K", type=int, help="segment truncation level")
    fit.add_argument("--M", type=int, help="component truncation level")
    fit.add_argument("--lambda", dest="lasso_lambda", type=float, help="lasso strength")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--cv-folds", dest="cv_folds", type=int)
    fit.add_argument("--no-intercept", dest="no_intercept", action="store_true")
    fit.add_argument("--out", required=True, help="output directory")
    fit.set_defaults(func=command_fit)

    sim = sub.add_parser("simulate", help="generate benchmark scenarios")
    sim.add_argument("--out", required=True)
    sim.add_argument("--grid-cell", dest="grid_cell", default="all",
                     help="'all', an index 0..31, 'p30' or 'p100'")
    sim.add_argument("--seed", type=int, default=0, help="master seed")
    sim.add_argument("--k-star", dest="k_star", type=int, help="custom cell: true segment count")
    sim.add_argument("--similarity", choices=["high", "low"])
    sim.add_argument("--density", choices=["high", "low"])
    sim.add_argument("--p", type=int)
    sim.add_argument("--active", type=float)
    sim.add_argument("--sigma0-sq", dest="sigma0_sq", type=float)
    sim.set_defaults(func=command_simulate)

    ev = sub.add_parser("evaluate", help="score a fit against scenario truth")
    ev.add_argument("--truth", help="scenario directory with truth sidecars")
    ev.add_argument("--fit", help="fit output directory")
    ev.add_argument("--fit-truth", dest="fit_truth",
                    help="scenario directory whose truth plays the fit (round-trip checks)")
    ev.add_argument("--aggregate", help="root of cell directories containing report.json")
    ev.add_argument("--reference", help="reference root for delta columns (aggregate mode)")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=command_evaluate)

    pred = sub.add_parser("predict", help="predict new points with a fitted model")
    pred.add_argument("--model", required=True, help="fit output directory")
    pred.add_argument("--data", required=True, help="CSV of new points")
    pred.add_argument("--out", required=True)
    pred.set_defaults(func=command_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
