"""Command-line interface: fit, select, simulate, moments.

Exit codes: 0 success, 2 usage/input error, 3 numerical or fit failure.
Heavy imports happen inside the command handlers so that ``--threads``
(or CENSGMR_THREADS) can cap the BLAS pools before numpy loads.
"""

import argparse
import csv
import json
import os
import sys


class UsageError(Exception):
    """Bad input from the user; maps to exit code 2."""


def build_parser():
    parser = argparse.ArgumentParser(
        prog="censgmr",
        description="Censored multivariate Gaussian mixtures of regressions",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap numerical thread pools (default: CENSGMR_THREADS or all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a censored mixture of regressions to CSV data")
    _add_data_args(fit)
    fit.add_argument("--groups", type=int, required=True, help="number of mixture components")
    _add_fit_args(fit)
    fit.add_argument("--out-dir", default=".", help="directory for report and CSV artifacts")
    fit.set_defaults(func=cmd_fit)

    sel = sub.add_parser("select", help="sweep the number of components and pick by ICL")
    _add_data_args(sel)
    sel.add_argument("--gmin", type=int, required=True)
    sel.add_argument("--gmax", type=int, required=True)
    _add_fit_args(sel)
    sel.add_argument("--entropy", choices=["posterior", "map"], default="posterior",
                     help="entropy term of the ICL criterion")
    sel.add_argument("--out", default="selection.csv", help="selection table CSV path")
    sel.set_defaults(func=cmd_select)

    sim = sub.add_parser("simulate", help="run benchmark scenario comparisons")
    sim.add_argument("--scenario", required=True,
                     help="I (mild censoring), II (severe censoring), or a scenario JSON path")
    sim.add_argument("--reps", type=int, default=25)
    sim.add_argument("--methods", default="cens-gmr",
                     help="comma list of cens-gmr,ignore-gmr,delete-gmr,cens-gmm")
    sim.add_argument("--type1", action="store_true",
                     help="run the Wald type-1 calibration study instead of the comparison")
    sim.add_argument("--n", type=int, default=None, help="override scenario sample size")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--restarts", type=int, default=16)
    sim.add_argument("--tol", type=float, default=1e-6)
    sim.add_argument("--max-iter", type=int, default=500)
    sim.add_argument("--out", default="simulation.csv", help="summary CSV path")
    sim.set_defaults(func=cmd_simulate)

    mom = sub.add_parser("moments", help="truncated-Gaussian moments of one region")
    mom.add_argument("--mean", required=True, help="comma-separated mean vector")
    mom.add_argument("--cov", required=True, help="rows separated by ';', entries by ','")
    mom.add_argument("--lower", required=True, help="comma-separated, -inf allowed")
    mom.add_argument("--upper", required=True, help="comma-separated, inf allowed")
    mom.add_argument("--seed", type=int, default=0)
    mom.set_defaults(func=cmd_moments)
    return parser


def _add_data_args(cmd):
    cmd.add_argument("--data", required=True, help="CSV with a header row")
    cmd.add_argument("--limits", required=True, help="detection-limits JSON")
    cmd.add_argument("--responses", required=True, help="comma list of response columns")
    cmd.add_argument("--predictors", default="", help="comma list of predictor columns")
    cmd.add_argument("--no-intercept", dest="intercept", action="store_false",
                     help="do not prepend an intercept column")


def _add_fit_args(cmd):
    cmd.add_argument("--restarts", type=int, default=32)
    cmd.add_argument("--seed", type=int, default=0)
    cmd.add_argument("--tol", type=float, default=1e-6)
    cmd.add_argument("--max-iter", type=int, default=500)
    cmd.add_argument("--init", choices=["random-partition", "kmeans"], default="random-partition")


def _apply_threads(args):
    n = args.threads
    if n is None:
        env = os.environ.get("CENSGMR_THREADS")
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise UsageError("--threads must be at least 1")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def load_limits(path, response_cols):
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"limits file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"limits file {path} is not valid JSON: {exc}")
    entries = spec["responses"] if isinstance(spec, dict) else spec
    by_name = {}
    for entry in entries:
        lo = entry.get("lower")
        hi = entry.get("upper")
        lo = float("-inf") if lo is None else float(lo)
        hi = float("inf") if hi is None else float(hi)
        if not lo < hi:
            raise UsageError(f"limits for {entry.get('name')}: lower must be below upper")
        by_name[entry["name"]] = (lo, hi)
    lower, upper = [], []
    for name in response_cols:
        if name not in by_name:
            raise UsageError(f"no limits entry for response column {name!r}")
        lo, hi = by_name[name]
        lower.append(lo)
        upper.append(hi)
    return lower, upper


def load_dataset(data_path, limits_path, response_cols, predictor_cols, intercept=True):
    """CSV + limits JSON -> (CensoredDataset, per-response censor counts).

    Censoring indicators are derived at ingestion: values at or beyond a
    limit are recorded at the limit (values strictly beyond get a warning).
    """
    import numpy as np
    import pandas as pd

    from .data import CensoredDataset

    try:
        frame = pd.read_csv(data_path)
    except FileNotFoundError:
        raise UsageError(f"data file not found: {data_path}")
    for col in list(response_cols) + list(predictor_cols):
        if col not in frame.columns:
            raise UsageError(f"unknown column {col!r} in {data_path}")
        values = pd.to_numeric(frame[col], errors="coerce")
        bad = values.isna() & ~frame[col].isna()
        if bad.any():
            row = int(bad.idxmax())
            raise UsageError(f"non-numeric cell at row {row}, column {col!r}")
        if values.isna().any():
            row = int(values.isna().idxmax())
            raise UsageError(f"missing value at row {row}, column {col!r}")
        frame[col] = values

    lower, upper = load_limits(limits_path, response_cols)
    lower = np.asarray(lower)
    upper = np.asarray(upper)
    y_raw = frame[list(response_cols)].to_numpy(dtype=float)
    beyond = (y_raw < lower) | (y_raw > upper)
    if beyond.any():
        print(
            f"warning: {int(beyond.sum())} values beyond their detection limit; "
            "treated as censored at the bound", file=sys.stderr,
        )
    C = np.zeros(y_raw.shape, dtype=np.int8)
    C[y_raw <= lower] = -1
    C[y_raw >= upper] = 1
    Y = np.clip(y_raw, lower, upper)

    if predictor_cols:
        X = frame[list(predictor_cols)].to_numpy(dtype=float)
    else:
        X = np.empty((len(frame), 0))
    names = list(predictor_cols)
    if intercept:
        X = np.column_stack([np.ones(len(frame)), X])
        names = ["(intercept)"] + names
    if X.shape[1] == 0:
        raise UsageError("need an intercept or at least one predictor column")

    dataset = CensoredDataset(
        Y, C, X, lower, upper,
        response_names=tuple(response_cols), predictor_names=tuple(names),
    )
    counts = {
        name: {"left": int((C[:, j] == -1).sum()), "right": int((C[:, j] == 1).sum())}
        for j, name in enumerate(response_cols)
    }
    return dataset, counts


def _split_cols(text):
    return [c.strip() for c in text.split(",") if c.strip()]


def _fit_config(args, groups):
    from .mixture import FitConfig

    return FitConfig(
        n_components=groups, tol=args.tol, max_iter=args.max_iter,
        n_restarts=args.restarts, seed=args.seed, init=args.init,
    )


def _stars(p):
    if p is None:
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def _print_coefficient_table(dataset, params, report, out=sys.stdout):
    resp = dataset.response_names or tuple(f"y{j + 1}" for j in range(params.p))
    preds = dataset.predictor_names or tuple(f"x{r + 1}" for r in range(params.d))
    width = max(len(s) for s in preds) + 2
    for g in range(params.n_components):
        print(f"\nGroup {g + 1} (omega = {params.omega[g]:.3f})", file=out)
        print(" " * width + "".join(f"{name:>16}" for name in resp), file=out)
        for r in range(params.d):
            cells = []
            for c in range(params.p):
                e = report.entry(g, r, c)
                cells.append(f"{e.estimate:.4g}{_stars(e.p)}".rjust(16))
            print(preds[r].ljust(width) + "".join(cells), file=out)
    print("\n*: p<0.05; **: p<0.01; ***: p<0.001 (uncorrected)", file=out)


def _report_payload(dataset, fit, report, bic, entropy, icl, paths):
    resp = dataset.response_names or tuple(f"y{j+1}" for j in range(fit.params.p))
    preds = dataset.predictor_names or tuple(f"x{r+1}" for r in range(fit.params.d))
    wald_rows = report.to_rows()
    components = []
    for g, comp in enumerate(fit.params.components):
        wald = [
            {**row, "predictor": preds[row["predictor"]], "response": resp[row["response"]]}
            for row in wald_rows if row["component"] == g
        ]
        for row in wald:
            row.pop("component")
        components.append({
            "beta": comp.beta.tolist(),
            "sigma": comp.sigma.tolist(),
            "wald": wald,
        })
    return {
        "model": {
            "G": fit.params.n_components,
            "nu": fit.n_params,
            "n": dataset.n,
            "loglik": fit.loglik,
            "bic": bic,
            "entropy": entropy,
            "icl": icl,
            "converged": fit.trace.converged,
            "iterations": fit.trace.iterations,
            "final_rel_change": fit.trace.final_rel_change,
            "responses": list(resp),
            "predictors": list(preds),
            "restarts": [
                {"restart": s.restart, "seed": s.seed, "converged": s.converged,
                 "loglik": None if s.loglik == -float("inf") else s.loglik,
                 "iterations": s.iterations, "error": s.error}
                for s in fit.restart_summaries
            ],
            "diagnostics": fit.diagnostics,
            "wald_n_tests": report.n_tests,
            "wald_bonferroni_alpha": report.bonferroni_alpha,
            "wald_pseudo_inverse": report.pseudo_inverse,
        },
        "omega": fit.params.omega.tolist(),
        "components": components,
        "paths": paths,
    }


def cmd_fit(args):
    import numpy as np

    from .inference import empirical_information, wald_tests
    from .mixture import classify, fit_mixture
    from .model_selection import icl_bic

    dataset, counts = load_dataset(
        args.data, args.limits, _split_cols(args.responses),
        _split_cols(args.predictors), args.intercept,
    )
    for name, c in counts.items():
        print(f"{name}: {c['left']} left-censored, {c['right']} right-censored", file=sys.stderr)

    fit = fit_mixture(dataset, _fit_config(args, args.groups))
    info = empirical_information(fit.params, dataset, fit.cache)
    report = wald_tests(fit.params, info)
    bic, entropy, icl = icl_bic(fit, dataset.n)
    labels = classify(fit)

    os.makedirs(args.out_dir, exist_ok=True)
    resp_path = os.path.join(args.out_dir, "responsibilities.csv")
    with open(resp_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row"] + [f"z_{g + 1}" for g in range(args.groups)])
        for i, row in enumerate(fit.resp.Z):
            writer.writerow([i] + [repr(float(v)) for v in row])
    class_path = os.path.join(args.out_dir, "classification.csv")
    with open(class_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "label", "max_posterior"])
        for i, (lab, row) in enumerate(zip(labels, fit.resp.Z)):
            writer.writerow([i, int(lab) + 1, repr(float(row.max()))])

    payload = _report_payload(
        dataset, fit, report, bic, entropy, icl,
        {"responsibilities": "responsibilities.csv", "classification": "classification.csv"},
    )
    report_path = os.path.join(args.out_dir, "report.json")
    with open(report_path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")

    _print_coefficient_table(dataset, fit.params, report)
    print(f"\nloglik {fit.loglik:.6g}  BIC {bic:.6g}  ICL {icl:.6g}")
    print(f"report written to {report_path}")
    return 0


def cmd_select(args):
    from .model_selection import select_g

    if args.gmin > args.gmax or args.gmin < 1:
        raise UsageError("--gmin must be at least 1 and not exceed --gmax")
    dataset, _ = load_dataset(
        args.data, args.limits, _split_cols(args.responses),
        _split_cols(args.predictors), args.intercept,
    )
    table = select_g(
        dataset, range(args.gmin, args.gmax + 1), _fit_config(args, args.gmin),
        hard_entropy=(args.entropy == "map"),
    )
    table.write_csv(args.out)
    print(f"selection table written to {args.out}", file=sys.stderr)
    print(table.chosen)
    return 0


def _scenario_from_args(args):
    import numpy as np

    from .simulation import ScenarioConfig, scenario_mild, scenario_severe

    name = args.scenario
    n = args.n
    if name in ("I", "i", "mild"):
        return scenario_mild(n=n or 1000, seed=args.seed)
    if name in ("II", "ii", "severe"):
        return scenario_severe(n=n or 1000, seed=args.seed)
    try:
        with open(name) as fh:
            spec = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"scenario not found: {name!r} (use I, II, or a JSON path)")
    lower = [float("-inf") if v is None else float(v) for v in spec["lower_limits"]]
    upper = [float("inf") if v is None else float(v) for v in spec["upper_limits"]]
    return ScenarioConfig(
        omega=np.asarray(spec["omega"], dtype=float),
        betas=tuple(np.asarray(b, dtype=float) for b in spec["betas"]),
        sigmas=tuple(np.asarray(s, dtype=float) for s in spec["sigmas"]),
        predictor_cov=np.asarray(spec["predictor_cov"], dtype=float),
        lower_limits=np.asarray(lower),
        upper_limits=np.asarray(upper),
        n=n or int(spec.get("n", 1000)),
        seed=args.seed if args.seed is not None else int(spec.get("seed", 0)),
    )


def cmd_simulate(args):
    import numpy as np

    from .mixture import FitConfig
    from .simulation import run_comparison, type1_study

    sc = _scenario_from_args(args)
    config = FitConfig(
        n_components=sc.n_components, tol=args.tol, max_iter=args.max_iter,
        n_restarts=args.restarts, seed=args.seed,
    )
    if args.type1:
        result = type1_study(sc, args.reps, config)
        rates = result.rates()
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["component", "predictor", "response", "true_zero", "rejection_rate", "n_fits"])
            for key in sorted(rates):
                g, r, c = key
                writer.writerow([
                    g + 1, r, c + 1, int(key in result.zero_coords),
                    repr(rates[key]), result.n_fits,
                ])
        worst = max(v for k, v in rates.items() if k in result.zero_coords)
        print(f"type-1 study written to {args.out} (worst zero-coefficient rate {worst:.3f})")
        return 0

    methods = _split_cols(args.methods)
    summary = run_comparison(sc, args.reps, methods, config)
    table = summary.metric_table()
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "mean", "sd"])
        for method in methods:
            for metric, (mean, sd) in table[method].items():
                writer.writerow([method, metric, repr(mean), "" if np.isnan(sd) else repr(sd)])
    for method in methods:
        ari = table[method].get("ari")
        shown = f"ARI {ari[0]:.3f}" if ari else "ARI n/a"
        print(f"{method}: {shown} over {args.reps} replicates "
              f"({summary.n_failures[method]} failures)")
    print(f"summary written to {args.out}")
    return 0


def _parse_vector(text, name):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"could not parse --{name} {text!r}")


def cmd_moments(args):
    import numpy as np

    from .errors import DegenerateRegionError
    from .truncated_gaussian import GaussianParams, QmcConfig, RectRegion, truncated_moments

    mean = _parse_vector(args.mean, "mean")
    lower = _parse_vector(args.lower, "lower")
    upper = _parse_vector(args.upper, "upper")
    try:
        cov = [[float(v) for v in row.split(",")] for row in args.cov.split(";")]
    except ValueError:
        raise UsageError(f"could not parse --cov {args.cov!r}")
    if not (len(mean) == len(lower) == len(upper) == len(cov)):
        raise UsageError("mean, cov, lower and upper dimensions disagree")
    try:
        params = GaussianParams(np.asarray(mean), np.asarray(cov))
        region = RectRegion(np.asarray(lower), np.asarray(upper))
    except ValueError as exc:
        raise UsageError(str(exc))
    qmc = QmcConfig(seed=args.seed)
    try:
        tm = truncated_moments(params, region, qmc)
    except DegenerateRegionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({
        "m1": tm.m1.tolist(),
        "m2": tm.m2.tolist(),
        "mass": tm.mass,
        "qmc": {"points_per_shift": qmc.points_per_shift, "shifts": qmc.shifts, "seed": qmc.seed},
    }, indent=2))
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(args)
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numerical/fit failures
        from .errors import CensGmrError

        if isinstance(exc, CensGmrError):
            print(f"fit failed: {exc}", file=sys.stderr)
            return 3
        raise


if __name__ == "__main__":
    sys.exit(main())
