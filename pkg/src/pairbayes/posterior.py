"""Posterior summaries: parameter tables, rank distributions, pairwise
probability tables and predictions for new contests."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .diagnostics import effective_sample_size
from .errors import UsageError, ZeroVarianceError
from .model import Extension, Outcome
from .tables import Table


class IntervalKind(str, enum.Enum):
    HPD = "hpd"
    EQUAL_TAILED = "equal-tailed"


@dataclass(frozen=True)
class IntervalEstimate:
    mean: float
    median: float
    lower: float
    upper: float
    kind: IntervalKind = IntervalKind.HPD
    mass: float = 0.95


def _check_mass(mass):
    if not 0.0 < mass < 1.0:
        raise UsageError("interval mass must lie in (0, 1)")


def hpd_interval(draws, mass: float = 0.95) -> tuple[float, float]:
    """Narrowest interval covering ``ceil(mass * S)`` of the sorted draws.

    Among equally narrow windows the one with the smallest lower bound wins.
    """
    _check_mass(mass)
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    if len(x) == 0:
        raise UsageError("no draws")
    m = min(len(x), math.ceil(mass * len(x)))
    widths = x[m - 1:] - x[: len(x) - m + 1]
    k = int(np.argmin(widths))
    return float(x[k]), float(x[k + m - 1])


def equal_tailed_interval(draws, mass: float = 0.95) -> tuple[float, float]:
    """Central interval from linearly interpolated quantiles."""
    _check_mass(mass)
    tail = (1.0 - mass) / 2.0
    lo, hi = np.quantile(np.asarray(draws, dtype=float).ravel(), [tail, 1.0 - tail])
    return float(lo), float(hi)


def interval_estimate(draws, kind: IntervalKind | str = IntervalKind.HPD,
                      mass: float = 0.95) -> IntervalEstimate:
    kind = IntervalKind(kind)
    x = np.asarray(draws, dtype=float).ravel()
    fn = hpd_interval if kind is IntervalKind.HPD else equal_tailed_interval
    lo, hi = fn(x, mass)
    return IntervalEstimate(float(x.mean()), float(np.median(x)), lo, hi, kind, mass)


def _ess_or_nan(chains) -> float:
    try:
        return effective_sample_size(chains)
    except (ZeroVarianceError, UsageError):
        return float("nan")


def summarize(fit, kind: IntervalKind | str = IntervalKind.HPD, mass: float = 0.95,
              parameters: Sequence[str] | None = None) -> Table:
    """One row per parameter on the constrained scale.

    Columns are ``Parameter, Mean, Median, HPD_lower, HPD_higher, ESS``
    (``ET_lower``/``ET_higher`` for equal-tailed intervals).
    """
    kind = IntervalKind(kind)
    prefix = "HPD" if kind is IntervalKind.HPD else "ET"
    draws = fit.constrained
    names = list(fit.names)
    wanted = names if parameters is None else list(parameters)
    rows = []
    for name in wanted:
        if name not in names:
            raise UsageError(f"unknown parameter {name!r}")
        k = names.index(name)
        est = interval_estimate(draws[:, :, k], kind, mass)
        rows.append([name, est.mean, est.median, est.lower, est.upper, _ess_or_nan(draws[:, :, k])])
    return Table(["Parameter", "Mean", "Median", f"{prefix}_lower", f"{prefix}_higher", "ESS"],
                 rows, title="Parameters estimates")


def ability_draws(fit) -> np.ndarray:
    """Per-draw baseline log-abilities, shape ``(draws, players)``."""
    return np.asarray(fit.model.player_abilities(fit.flat()))


@dataclass(frozen=True)
class RankSummary:
    players: tuple[str, ...]
    median: np.ndarray
    mean: np.ndarray
    sd: np.ndarray

    def order(self) -> list[int]:
        """Player indices sorted by median rank, then mean rank."""
        return sorted(range(len(self.players)), key=lambda k: (self.median[k], self.mean[k]))

    def table(self) -> Table:
        rows = [[self.players[k], float(self.median[k]), float(self.mean[k]), float(self.sd[k])]
                for k in self.order()]
        return Table(["Parameter", "MedianRank", "MeanRank", "StdRank"], rows,
                     title="Estimated posterior ranks")


def draw_ranks(abilities) -> np.ndarray:
    """Rank players within each draw, 1 for the highest ability.

    Exact ties go to the player registered first.
    """
    a = np.atleast_2d(np.asarray(abilities, dtype=float))
    order = np.argsort(-a, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(a.shape[0])[:, None]
    ranks[rows, order] = np.arange(1, a.shape[1] + 1)
    return ranks


def rank_summary(abilities, players: Sequence[str]) -> RankSummary:
    ranks = draw_ranks(abilities).astype(float)
    sd = ranks.std(axis=0, ddof=1) if len(ranks) > 1 else np.zeros(ranks.shape[1])
    return RankSummary(tuple(players), np.median(ranks, axis=0), ranks.mean(axis=0), sd)


def rank_distribution(fit) -> RankSummary:
    """Posterior distribution of each player's rank."""
    return rank_summary(ability_draws(fit), fit.model.players)


@dataclass(frozen=True)
class Matchup:
    """A contest to predict. ``covariates`` are raw subject covariate values
    unless ``standardized`` is set."""

    player0: str
    player1: str
    subject: str | None = None
    covariates: Mapping[str, float] | None = None
    order: int = 1
    standardized: bool = False


def _matchup_arrays(model, matchups: Sequence[Matchup]):
    i = np.array([model.player_index(m.player1) for m in matchups], dtype=np.int64)
    j = np.array([model.player_index(m.player0) for m in matchups], dtype=np.int64)
    s = np.array([model.subject_index(m.subject, required=False) for m in matchups], dtype=np.int64)
    k = len(model.subject_covariate_names)
    if model.has(Extension.SUBJECT_PREDICTORS):
        xs = np.stack([model.standardize_covariates(m.covariates, m.standardized) for m in matchups])
    else:
        xs = np.zeros((len(matchups), k))
    order = np.array([m.order for m in matchups], dtype=float)
    return i, j, s, xs, order


def _mean_probabilities(fit, matchups, thetas=None) -> np.ndarray:
    model = fit.model
    thetas = fit.flat(constrained=False) if thetas is None else thetas
    args = _matchup_arrays(model, matchups)
    total = np.zeros((len(matchups), 3 if model.spec.is_davidson else 2))
    for theta in thetas:
        total += model.outcome_probabilities(theta, *args)
    return total / len(thetas)


def _sort_key(name: str):
    return (name.casefold(), name)


def probability_table(fit) -> Table:
    """Posterior mean win probabilities for every unordered player pair.

    Subject effects are averaged out: random effects are set to zero and
    subject covariates to their (standardized) mean. The order effect is
    applied as fitted with the order indicator set to 1.
    """
    model = fit.model
    names = sorted(model.players, key=_sort_key)
    pairs = list(combinations(names, 2))
    matchups = [Matchup(player0=b, player1=a, standardized=True,
                        covariates={c: 0.0 for c in model.subject_covariate_names})
                for a, b in pairs]
    probs = _mean_probabilities(fit, matchups)
    davidson = model.spec.is_davidson
    rows = []
    for (a, b), p in zip(pairs, probs):
        p_i = float(p[Outcome.PLAYER1_WINS])
        row = [a, b, p_i, float(p[Outcome.PLAYER0_WINS])]
        if davidson:
            row.append(float(p[Outcome.TIE]))
        row.append(p_i / (1.0 - p_i) if p_i < 1.0 else math.inf)
        rows.append(row)
    cols = ["i", "j", "i_beats_j", "j_beats_i"] + (["ties"] if davidson else []) + ["odds_ratio"]
    return Table(cols, rows, title="Estimated posterior probabilities")


@dataclass
class Prediction:
    """Predictive output for a batch of matchups.

    ``probabilities`` has shape ``(rows, draws, outcomes)``; ``outcomes``
    holds one sampled :class:`Outcome` per row and draw.
    """

    matchups: list[Matchup]
    probabilities: np.ndarray
    outcomes: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.probabilities.mean(axis=1)

    def table(self) -> Table:
        davidson = self.probabilities.shape[2] == 3
        rows = []
        for m, p in zip(self.matchups, self.mean):
            row = [m.player1, m.player0, m.subject or "", float(p[Outcome.PLAYER1_WINS]),
                   float(p[Outcome.PLAYER0_WINS])]
            if davidson:
                row.append(float(p[Outcome.TIE]))
            rows.append(row)
        cols = ["i", "j", "subject", "i_beats_j", "j_beats_i"] + (["ties"] if davidson else [])
        return Table(cols, rows, title="Predicted probabilities")


def predict(fit, matchups: Sequence[Matchup], draws_per_row: int | None = None,
            seed: int = 0) -> Prediction:
    """Posterior predictive probabilities and sampled outcomes.

    Uses the first ``draws_per_row`` posterior draws (all when ``None``).
    Subjects unknown to the fit, or omitted, get zero random effects.
    """
    if not matchups:
        raise UsageError("no contests to predict")
    thetas = fit.flat(constrained=False)
    if draws_per_row is not None:
        if draws_per_row < 1:
            raise UsageError("draws_per_row must be >= 1")
        thetas = thetas[:draws_per_row]
    model = fit.model
    args = _matchup_arrays(model, matchups)
    probs = np.stack([model.outcome_probabilities(t, *args) for t in thetas], axis=1)
    rng = np.random.Generator(np.random.Philox(key=seed))
    u = rng.uniform(size=probs.shape[:2])
    cum = np.cumsum(probs, axis=2)
    outcomes = (u[..., None] > cum[..., :-1]).sum(axis=2)
    return Prediction(list(matchups), probs, outcomes)


def summary_text(fit, kind: IntervalKind | str = IntervalKind.HPD, mass: float = 0.95) -> str:
    """Parameter, probability and rank tables as one plain-text report."""
    kind = IntervalKind(kind)
    label = "HPD" if kind is IntervalKind.HPD else "equal-tailed"
    params = summarize(fit, kind, mass)
    params.notes = ["NOTES:", "* A higher lambda indicates a higher team ability"]
    parts = [
        f"Estimated baseline parameters with {mass * 100:g}% {label} intervals:",
        "",
        params.text(),
        "Posterior probabilities:",
        "These probabilities are calculated from the predictive posterior distribution",
        "for all player combinations",
        "",
        "",
        probability_table(fit).text(),
        "Rank of the players' abilities:",
        "The rank is based on the posterior rank distribution of the lambda parameter",
        "",
        rank_distribution(fit).table().text(),
    ]
    return "\n".join(parts)
