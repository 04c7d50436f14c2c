"""Command-line interface: ``ancova-pce {fit,analyze,compare,smooth,oracle,demo}``.

Exit codes: 0 success, 2 input error, 3 numerical failure (diagnostics as
JSON on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from .ancova import ancova_indices, render_index_table, smooth_and_requantify
from .benchmarks import (BENCHMARKS, BINS_DEFAULT, LABELS, MP_DEFAULT, compare_strategies, derive_seed,
                         make_benchmark, mc_ancova, transform_substitution_error)
from .exceptions import InputError, NumericalError
from .marginals import KINDS, DependenceModel, MarginalModel, fit_marginal, read_csv, sample_correlated
from .regression import STRATEGIES, PCERegressor, load_model, save_model

LOGGER = logging.getLogger("ancova_pce")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------
def _g(v):
    return "%.17g" % v


def _out_path(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=True)
        fh.write("\n")


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_cdf(path, y):
    y = np.sort(np.asarray(y, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "cumulative_probability"])
        for i, v in enumerate(y, start=1):
            w.writerow([_g(v), _g(i / y.size)])


def _strategies(arg):
    if arg == "all":
        return list(STRATEGIES)
    out = [s.strip() for s in arg.split(",")]
    for s in out:
        if s not in STRATEGIES:
            raise InputError(f"unknown strategy {s!r}; expected one of {STRATEGIES} or 'all'")
    return out


def _read_matrix(path, D):
    rows = []
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if line == 1:
                    continue  # header
                raise InputError(f"{path}: row {line} has a non-numeric entry") from None
    R = np.array(rows)
    if R.shape != (D, D):
        raise InputError(f"{path}: correlation matrix has shape {R.shape}, expected ({D}, {D})")
    return R


def _marginals_from_args(args, X):
    if getattr(args, "marginals", None):
        with open(args.marginals) as fh:
            specs = json.load(fh)
        marginals = [MarginalModel.from_spec(s) for s in specs]
        if len(marginals) != X.shape[1]:
            raise InputError(f"{args.marginals}: {len(marginals)} marginals for {X.shape[1]} inputs")
        return marginals
    return [fit_marginal(X[:, j], args.marginal_kind) for j in range(X.shape[1])]


def _dependence_from_args(args, marginals, X):
    if getattr(args, "corr", None):
        LOGGER.info("correlation: Pearson matrix from %s", args.corr)
        return DependenceModel.from_pearson(marginals, _read_matrix(args.corr, len(marginals)))
    LOGGER.info("correlation: Gaussian-rank estimate from the input sample")
    return DependenceModel.from_data(X)


def _resolve_set(token, names):
    members = []
    for item in token.split(","):
        item = item.strip()
        if item in names:
            members.append(names.index(item))
        elif item.isdigit() and 1 <= int(item) <= len(names):
            members.append(int(item) - 1)
        else:
            raise InputError(f"unknown input {item!r}; inputs are {names}")
    if not members:
        raise InputError("empty smoothing set")
    return sorted(set(members))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_fit(args):
    if not args.input:
        raise InputError("fit needs --input")
    data = read_csv(args.input, require_response=True)
    X, y = data.values, data.response
    if args.mp is not None:
        if args.mp > X.shape[0]:
            raise InputError(f"--mp {args.mp} exceeds the {X.shape[0]} rows of {args.input}")
        X, y = X[: args.mp], y[: args.mp]
    D = X.shape[1]
    if X.shape[0] < D + 2:
        raise InputError(f"need at least D + 2 = {D + 2} rows, got {X.shape[0]}")
    marginals = _marginals_from_args(args, X)
    dep = _dependence_from_args(args, marginals, X)
    summary = {}
    for s in _strategies(args.strategy):
        model = PCERegressor(s, p_max=args.pmax, marginals=marginals, dependence=dep,
                             faithful=args.faithful, n_jobs=args.workers).fit(X, y)
        path = _out_path(args, f"model_{s}.json")
        save_model(model, path, data.column_names)
        info = model.fit_info_
        LOGGER.info("%s: p=%d e_cloo=%.3e terms=%d", s, info["p_selected"], info["e_cloo"],
                    info["active_set_size"])
        print(f"{LABELS[s]}: p_selected={info['p_selected']} e_cloo={info['e_cloo']:.6e} "
              f"active={info['active_set_size']} -> {path}")
        summary[s] = {"p_selected": info["p_selected"], "e_cloo": info["e_cloo"],
                      "active_set_size": info["active_set_size"], "M_p": info["M_p"]}
    _write_json(_out_path(args, "fit_summary.json"), summary)
    return EXIT_OK


def _evaluation_sample(args, model, names):
    if args.input:
        data = read_csv(args.input)
        if data.values.shape[1] != model.n_features_in_:
            raise InputError(f"{args.input} has {data.values.shape[1]} inputs, the model {model.n_features_in_}")
        return data.values
    ml = args.ml if args.ml is not None else 10_000
    if ml < 1:
        raise InputError("--ml must be >= 1")
    return sample_correlated(model.marginals_, model.dependence_, ml, derive_seed(args.seed, 1),
                             args.design, args.workers)


def cmd_analyze(args):
    if not args.models:
        raise InputError("analyze needs at least one model file")
    if args.ml is not None and args.ml < 1:
        raise InputError("--ml must be >= 1")
    rows = {}
    names = None
    for path in args.models:
        model, names = load_model(path)
        if args.strategy != "all" and model.strategy not in _strategies(args.strategy):
            raise InputError(f"{path} holds a {model.strategy} model, not {args.strategy}")
        Z = _evaluation_sample(args, model, names)
        rep = ancova_indices(model, Z, faithful=args.faithful, input_names=names, n_jobs=args.workers)
        tag = model.strategy
        _write_json(_out_path(args, f"report_{tag}.json"), rep.to_dict())
        _write_text(_out_path(args, f"indices_{tag}.csv"), rep.to_csv())
        _write_cdf(_out_path(args, f"cdf_{tag}.csv"), model.predict(Z, faithful=args.faithful))
        rows[LABELS[tag]] = rep.S
        print(f"{LABELS[tag]}: M_L={rep.M_L} mean={rep.mean:.6g} variance={rep.variance:.6g} "
              f"sum_check={rep.sum_check:.10f} interaction_share={rep.interaction_share:.4f} "
              f"ranking={','.join(rep.to_dict()['ranking'])}")
    table = render_index_table(rows, names)
    _write_text(_out_path(args, "indices_table.txt"), table)
    print(table, end="")
    return EXIT_OK


def _benchmark(args):
    params = {}
    if args.coef:
        params["a"] = [float(v) for v in args.coef.split(",")]
    return make_benchmark(args.model, rho=args.rho, dim=args.dim, **params)


def cmd_compare(args):
    if not args.model:
        raise InputError("compare needs --model <benchmark>")
    bench = _benchmark(args)
    table = compare_strategies(bench, _strategies(args.strategy), M_p=args.mp or MP_DEFAULT,
                               M_L=args.ml or 10_000, M_ref=args.mref, seed=args.seed, p_max=args.pmax,
                               bins=args.bins, faithful=args.faithful, design=args.design,
                               n_jobs=args.workers)
    _write_text(_out_path(args, "compare.csv"), table.to_csv())
    _write_json(_out_path(args, "compare.json"), {
        "benchmark": bench.kind, "rho": args.rho, "seed": args.seed,
        "inputs": table.input_names,
        "reference": table.reference.to_dict(),
        "rows": [{k: v for k, v in r.items() if k not in ("report", "model")} for r in table.rows],
    })
    text = table.render()
    _write_text(_out_path(args, "compare_table.txt"), text)
    print(text, end="")
    return EXIT_OK


def _smooth_rows(methods, Z, sets, reference):
    out = []
    for label, obj in methods:
        for set_label, members in sets:
            res = smooth_and_requantify(obj, Z, members, reference=reference)
            out.append({"method": label, "set": set_label, **res})
    return out


def cmd_smooth(args):
    if args.model:
        bench = _benchmark(args)
        names = bench.input_names
        Zp = bench.sample(args.mp or MP_DEFAULT, derive_seed(args.seed, 0), args.design, args.workers)
        yp = bench.evaluate(Zp)
        Z = bench.sample(args.ml or 10_000, derive_seed(args.seed, 1), args.design, args.workers)
        models = [(LABELS[s], PCERegressor(s, p_max=args.pmax, marginals=bench.marginals,
                                           dependence=bench.dependence, faithful=args.faithful,
                                           n_jobs=args.workers).fit(Zp, yp))
                  for s in _strategies(args.strategy)]
        reference = bench
    elif args.models:
        models, names = [], None
        for path in args.models:
            m, names = load_model(path)
            models.append((LABELS[m.strategy], m))
        Z = _evaluation_sample(args, models[0][1], names)
        reference = None
    else:
        raise InputError("smooth needs --model <benchmark> or model files")

    sets = [(s, _resolve_set(s, names)) for s in (args.set or [])]
    if args.top is not None:
        if not 1 <= args.top <= len(names):
            raise InputError(f"--top must be between 1 and {len(names)}")
        for label, m in models:
            rep = ancova_indices(m, Z, faithful=args.faithful, input_names=names, n_jobs=args.workers)
            members = sorted(rep.ranking[: args.top])
            sets.append((f"top{args.top}:{label}", members))
    if not sets:
        raise InputError("give --set and/or --top")
    methods = list(models) + ([("MC", reference)] if reference is not None else [])
    rows = _smooth_rows(methods, Z, sets, reference)

    cols = ["method", "set", "members", "sigma_before", "sigma_after", "delta_sigma_pct",
            "delta_sigma_rr", "delta_sigma_re"]
    with open(_out_path(args, "smooth.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r["method"], r["set"], " ".join(names[j] for j in r["smooth_set"]),
                        _g(r["sigma_before"]), _g(r["sigma_after"]), _g(r["delta_sigma_pct"]),
                        _g(r["delta_sigma_rr"]) if "delta_sigma_rr" in r else "",
                        _g(r["delta_sigma_re"]) if "delta_sigma_re" in r else ""])
    _write_json(_out_path(args, "smooth.json"), rows)
    for r in rows:
        extra = ""
        if r["method"] != "MC" and "delta_sigma_rr" in r:
            extra = f"  dsigma_rr={r['delta_sigma_rr']:.2f}%  dsigma_re={r['delta_sigma_re']:.4f}"
        flag = "  (all inputs smoothed)" if r["all_smoothed"] else ""
        print(f"{r['method']:<14} {r['set']:<24} sigma {r['sigma_before']:.4f} -> {r['sigma_after']:.4f}"
              f"  dsigma={r['delta_sigma_pct']:.2f}%{extra}{flag}")
    return EXIT_OK


def cmd_oracle(args):
    if not args.model:
        raise InputError("oracle needs --model <benchmark>")
    bench = _benchmark(args)
    M = args.ml or 100_000
    rep = mc_ancova(bench, M=M, seed=derive_seed(args.seed, 2), bins=args.bins, design=args.design,
                    n_jobs=args.workers)
    doc = {"benchmark": bench.kind, "rho": args.rho, "mc": rep.to_dict()}
    known = bench.known_indices()
    if known is not None:
        doc["closed_form"] = {k: v.tolist() for k, v in known.items()}
        Sigma = np.outer(bench._scales, bench._scales) * bench.dependence.copula_correlation
        sub = transform_substitution_error(bench.params["a"], Sigma)
        doc["substitution"] = {part: {k: np.asarray(v).tolist() for k, v in sub[part].items()}
                               for part in ("true", "substituted", "delta")}
    _write_json(_out_path(args, "oracle.json"), doc)
    _write_text(_out_path(args, "oracle_indices.csv"), rep.to_csv())
    rows = {"MC": rep.S}
    if known is not None:
        rows["closed form"] = known["S"]
        rows["substituted"] = doc["substitution"]["substituted"]["S"]
    print(render_index_table(rows, bench.input_names), end="")
    print(f"sum_check={rep.sum_check:.10f}")
    return EXIT_OK


def cmd_demo(args):
    args.model = args.model or "linear_gaussian"
    if args.top is None and not args.set:
        args.top = 1
    print("== strategy comparison ==")
    cmd_compare(args)
    print("== smoothing ==")
    cmd_smooth(args)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "analyze": cmd_analyze, "compare": cmd_compare, "smooth": cmd_smooth,
            "oracle": cmd_oracle, "demo": cmd_demo}


def build_parser():
    parser = argparse.ArgumentParser(prog="ancova-pce",
                                     description="PCE-based ANCOVA sensitivity analysis for correlated inputs")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("models", nargs="*", help="model JSON files (analyze, smooth)")
    parser.add_argument("--input", help="CSV of inputs (plus a final 'response' column for fit)")
    parser.add_argument("--strategy", default="all", help="correlate|nataf|rosenblatt|all or a comma list")
    parser.add_argument("--mp", type=int, help="training sample size")
    parser.add_argument("--ml", type=int, help="evaluation sample size")
    parser.add_argument("--mref", type=int, default=100_000, help="Monte Carlo reference sample size")
    parser.add_argument("--pmax", type=int, default=5, help="highest polynomial degree")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--corr", help="CSV with the target Pearson correlation matrix")
    parser.add_argument("--marginals", help="JSON list of marginal specs")
    parser.add_argument("--marginal-kind", default="empirical", choices=KINDS)
    parser.add_argument("--top", type=int, help="smooth the top K inputs of each strategy's ranking")
    parser.add_argument("--set", action="append", help="inputs smoothed jointly, e.g. Z1,Z3 (repeatable)")
    parser.add_argument("--bins", type=int, default=BINS_DEFAULT)
    parser.add_argument("--faithful", action="store_true", help="apply the full transform before evaluating")
    parser.add_argument("--design", default="lhs", choices=("lhs", "plain"))
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--model", choices=BENCHMARKS, help="built-in benchmark")
    parser.add_argument("--rho", type=float, default=0.5, help="benchmark Pearson correlation")
    parser.add_argument("--dim", type=int, help="benchmark dimension (linear_gaussian, dispatch_toy)")
    parser.add_argument("--coef", help="linear_gaussian coefficients, e.g. 1,2,0.5")
    parser.add_argument("--workers", type=int, default=1, help="threads for row-parallel work")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        # one BLAS thread keeps floating-point reductions identical for any --workers
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(json.dumps({"error": str(exc), "diagnostics": exc.diagnostics}, default=str), file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
