"""Command line front end.

Every subcommand except ``fit`` reads an archive written by ``fit``. Errors
print one line ``error[CODE]: message`` to stderr and exit with 1 (usage),
2 (data), 3 (sampler or numerical failure) or 4 (archive).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from .comparison import compare, comparison_table, information_criterion, pointwise_loglik
from .diagnostics import Thresholds, convergence_report
from .errors import DataError, MissingColumnError, PairBayesError, UsageError
from .io import IngestSpec, TieStrategy, load_dataset, load_fit, rebind, save_fit
from .model import ModelSpec, Prior, build_model
from .posterior import (
    IntervalKind, Matchup, predict, probability_table, rank_distribution, summarize, summary_text,
)
from .sampler import SamplerConfig, sample
from .tables import Table

PRIOR_BLOCKS = ("lambda", "nu", "gamma", "beta", "S", "U")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_format(p, choices=("text", "csv", "json"), default="text"):
    p.add_argument("--format", choices=choices, default=default, help="output format")


def _add_data_override(p):
    p.add_argument("--data", help="contest file to use instead of the path stored in the archive")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pairbayes", description="Bayesian paired comparison models")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", help="fit a model and write an archive")
    p.add_argument("data", help="delimited contest file with a header row")
    p.add_argument("-o", "--output", required=True, help="archive to write")
    p.add_argument("--model", default="bt", help="e.g. bt, davidson, davidson-generalized-U")
    p.add_argument("--player0", default="player0")
    p.add_argument("--player1", default="player1")
    p.add_argument("--result", default="y", help="result column: 0 player0 won, 1 player1 won, 2 tie")
    p.add_argument("--score0", help="score column of player0 (use with --score1 instead of --result)")
    p.add_argument("--score1")
    p.add_argument("--subject", help="subject id column")
    p.add_argument("--order", help="order indicator column (0/1)")
    p.add_argument("--covariates", default="", help="comma-separated subject covariate columns")
    p.add_argument("--player-covariates", help="file with one row of predictors per player")
    p.add_argument("--player-column", default="player")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--solve-ties", choices=[t.value for t in TieStrategy],
                   default="none")
    p.add_argument("--tie-seed", type=int, default=0, help="seed for --solve-ties random")
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--draws", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-treedepth", type=int, default=10)
    p.add_argument("--init-radius", type=float, default=2.0)
    p.add_argument("--jobs", type=int, help="worker processes (default from PAIRBAYES_THREADS)")
    for block in PRIOR_BLOCKS:
        p.add_argument(f"--prior-{block}-sd", type=float, help=f"prior sd of {block}")

    for name, helptext in (("summary", "parameter, probability and rank tables"),
                           ("ranks", "posterior rank table"),
                           ("probabilities", "pairwise probability table")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("archive")
        _add_format(p)
        if name == "summary":
            p.add_argument("--interval", choices=[k.value for k in IntervalKind], default="hpd")
            p.add_argument("--mass", type=float, default=0.95)

    p = sub.add_parser("predict", help="predict new contests")
    p.add_argument("archive")
    p.add_argument("contests", help="file with player0, player1 and optional subject/order/covariates")
    p.add_argument("--player0", default="player0")
    p.add_argument("--player1", default="player1")
    p.add_argument("--subject")
    p.add_argument("--order")
    p.add_argument("--standardized", action="store_true",
                   help="covariate values are already in standardized units")
    p.add_argument("--draws", type=int, help="posterior draws to use per row")
    p.add_argument("--seed", type=int, default=0)
    _add_format(p)

    p = sub.add_parser("diagnose", help="convergence diagnostics")
    p.add_argument("archive")
    p.add_argument("--rhat", type=float, default=1.01)
    p.add_argument("--ess", type=float, default=200.0)
    p.add_argument("--ebfmi", type=float, default=0.2)
    _add_format(p, ("text", "json"))

    for name in ("waic", "loo"):
        p = sub.add_parser(name, help=f"{name.upper()} estimate")
        p.add_argument("archive")
        _add_data_override(p)
        _add_format(p, ("text", "json"))

    p = sub.add_parser("compare", help="compare fitted models")
    p.add_argument("archives", nargs="+")
    p.add_argument("--criterion", default="waic", help="waic or loo")
    _add_data_override(p)
    _add_format(p)

    p = sub.add_parser("plotdata", help="long-format draws for plotting")
    p.add_argument("archive")
    p.add_argument("--parameters", help="comma-separated parameter names (default all)")
    _add_format(p, ("csv", "json"), default="csv")
    return parser


# -- commands -------------------------------------------------------------------

def _ingest_from_args(a) -> IngestSpec:
    covs = [c.strip() for c in a.covariates.split(",") if c.strip()]
    pcov = os.path.abspath(a.player_covariates) if a.player_covariates else None
    return IngestSpec(path=os.path.abspath(a.data), player0=a.player0, player1=a.player1, result=a.result,
                      subject=a.subject, order=a.order, covariates=covs, score0=a.score0,
                      score1=a.score1, solve_ties=a.solve_ties, seed=a.tie_seed,
                      delimiter=a.delimiter, player_covariates=pcov,
                      player_column=a.player_column)


def _spec_from_args(a) -> ModelSpec:
    priors = {}
    for block in ("lambda", "nu", "gamma", "beta", "S"):
        sd = getattr(a, f"prior_{block}_sd")
        if sd is not None:
            priors[f"prior_{block}"] = Prior(0.0, sd ** 2)
    if a.prior_U_sd is not None:
        priors["prior_U_variance"] = a.prior_U_sd ** 2
    return ModelSpec.from_string(a.model, **priors)


def cmd_fit(a, out):
    ingest = _ingest_from_args(a)
    dataset = load_dataset(ingest)
    model = build_model(dataset, _spec_from_args(a))
    config = SamplerConfig(chains=a.chains, warmup=a.warmup, draws=a.draws, seed=a.seed,
                           target_accept=a.target_accept, max_treedepth=a.max_treedepth,
                           init_radius=a.init_radius, n_jobs=a.jobs)
    fit = sample(model, config)
    save_fit(fit, a.output, ingest)
    n_div = int(fit.divergent.sum())
    out.write(f"{model.spec.model_string}: {fit.n_chains} chains x {fit.n_draws} draws, "
              f"{model.dim} parameters, {model.n_contests} contests, "
              f"{n_div} divergent transitions; wrote {a.output}\n")


def cmd_summary(a, out):
    fit = load_fit(a.archive)
    if a.format == "text":
        out.write(summary_text(fit, a.interval, a.mass))
        return
    tables = {"parameters": summarize(fit, a.interval, a.mass),
              "probabilities": probability_table(fit),
              "ranks": rank_distribution(fit).table()}
    if a.format == "json":
        out.write(json.dumps({k: json.loads(t.json()) for k, t in tables.items()}, indent=2) + "\n")
    else:
        out.write("\n".join(t.csv() for t in tables.values()))


def cmd_ranks(a, out):
    out.write(rank_distribution(load_fit(a.archive)).table().render(a.format))


def cmd_probabilities(a, out):
    out.write(probability_table(load_fit(a.archive)).render(a.format))


def cmd_predict(a, out):
    fit = load_fit(a.archive)
    model = fit.model
    with open(a.contests, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        header = reader.fieldnames or []
    missing = [c for c in (a.player0, a.player1, a.subject, a.order) if c and c not in header]
    if missing:
        raise MissingColumnError(f"{a.contests}: missing column(s) {missing}")
    covs = [c for c in model.subject_covariate_names if c in header]
    matchups = []
    for r in rows:
        try:
            values = {c: float(r[c]) for c in covs}
            order = int(float(r[a.order])) if a.order else 1
        except ValueError as exc:
            raise DataError(f"{a.contests}: {exc}") from None
        matchups.append(Matchup(r[a.player0].strip(), r[a.player1].strip(),
                                subject=(r[a.subject].strip() or None) if a.subject else None,
                                covariates=values or None, order=order,
                                standardized=a.standardized))
    out.write(predict(fit, matchups, a.draws, a.seed).table().render(a.format))


def cmd_diagnose(a, out):
    report = convergence_report(load_fit(a.archive), Thresholds(a.rhat, a.ess, a.ebfmi))
    out.write(report.text() if a.format == "text" else json.dumps(report.to_dict(), indent=2) + "\n")


def _bound_model(fit, data_override):
    ingest = fit.metadata.get("ingest")
    if ingest is None:
        raise UsageError("archive does not record its data source; pass --data")
    spec = IngestSpec.from_dict(ingest)
    if data_override:
        spec.path = data_override
    return rebind(fit, load_dataset(spec))


def _criterion(fit, name, data_override):
    model = _bound_model(fit, data_override)
    return information_criterion(pointwise_loglik(model, fit), name)


def cmd_ic(a, out):
    est = _criterion(load_fit(a.archive), a.command, a.data)
    out.write(est.text() if a.format == "text" else json.dumps(est.to_dict(), indent=2) + "\n")


def cmd_compare(a, out):
    if len(a.archives) < 2:
        raise UsageError("compare needs at least two archives")
    information_criterion([[0.0], [0.0]], a.criterion)  # reject unsupported names up front
    estimates = {}
    for path in a.archives:
        fit = load_fit(path)
        name = f"{fit.model.spec.model_string} ({path})"
        estimates[name] = _criterion(fit, a.criterion, a.data)
    out.write(comparison_table(compare(estimates)).render(a.format))


def cmd_plotdata(a, out):
    fit = load_fit(a.archive)
    names = list(fit.names)
    wanted = names if not a.parameters else [p.strip() for p in a.parameters.split(",")]
    unknown = [p for p in wanted if p not in names]
    if unknown:
        raise UsageError(f"unknown parameter(s) {unknown}")
    draws = fit.constrained
    rows = []
    for p in wanted:
        k = names.index(p)
        for c in range(fit.n_chains):
            for d in range(fit.n_draws):
                rows.append([p, c + 1, d + 1, float(draws[c, d, k])])
    out.write(Table(["parameter", "chain", "draw", "value"], rows).render(a.format))


COMMANDS = {
    "fit": cmd_fit, "summary": cmd_summary, "ranks": cmd_ranks,
    "probabilities": cmd_probabilities, "predict": cmd_predict, "diagnose": cmd_diagnose,
    "waic": cmd_ic, "loo": cmd_ic, "compare": cmd_compare, "plotdata": cmd_plotdata,
}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, stream=err, format="%(message)s")
        COMMANDS[args.command](args, out)
    except PairBayesError as exc:
        err.write(f"error[{exc.code}]: {' '.join(str(exc).split())}\n")
        return exc.exit_code
    except OSError as exc:
        err.write(f"error[IO]: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
