import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pairbayes.errors import MissingCovariateError, UnknownPlayerError
from pairbayes.model import Contest, ContestDataset, ModelSpec, Outcome, build_model
from pairbayes.posterior import (
    Matchup, draw_ranks, equal_tailed_interval, hpd_interval, predict, probability_table,
    rank_summary, summarize, summary_text,
)
from pairbayes.sampler import PosteriorFit, SamplerConfig, sample

from .conftest import PIZZAS, small_model


def fit_from_draws(model, draws):
    """A fit whose (single-chain) draws are given directly on the unconstrained scale."""
    draws = np.asarray(draws, dtype=float).reshape(1, -1, model.dim)
    n = draws.shape[1]
    zeros = np.zeros((1, n))
    return PosteriorFit(model=model, draws=draws, divergent=zeros.astype(bool),
                        treedepth=zeros.astype(int), accept_stat=zeros, energy=zeros,
                        n_leapfrog=zeros.astype(int), step_size=np.ones(1),
                        inv_mass=np.ones((1, model.dim)), config=SamplerConfig(chains=1, draws=n))


def pair_model(names=("A", "B"), model="bt"):
    contests = [Contest(names[0], names[1], Outcome.PLAYER1_WINS)]
    return build_model(ContestDataset(contests, players=list(names)), ModelSpec.from_string(model))


# -- intervals ------------------------------------------------------------------

def test_hpd_hand_example():
    assert hpd_interval([0, 0, 0, 0, 1, 1, 2, 3, 10], 0.5) == (0, 1)


def test_hpd_symmetric_tie_break_smallest_lower():
    # windows (-2, 0), (-1, 1), (0, 2) are equally narrow
    assert hpd_interval([-2, -1, 0, 1, 2], 0.6) == (-2, 0)


def test_hpd_narrower_than_equal_tailed_on_skewed_draws():
    x = np.random.default_rng(0).exponential(size=10_000)
    lo, hi = hpd_interval(x, 0.9)
    elo, ehi = equal_tailed_interval(x, 0.9)
    assert hi - lo < ehi - elo
    assert np.mean((x >= lo) & (x <= hi)) >= 0.9


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 200), elements=st.floats(-1e3, 1e3)),
       st.floats(0.05, 0.95))
def test_hpd_matches_brute_force(x, mass):
    s = np.sort(x)
    m = math.ceil(mass * len(s))
    best = None
    for a in range(len(s)):
        for b in range(a, len(s)):
            if b - a + 1 >= m and (best is None or s[b] - s[a] < best[1] - best[0]):
                best = (s[a], s[b])
    lo, hi = hpd_interval(x, mass)
    assert hi - lo == pytest.approx(best[1] - best[0], abs=1e-9)
    assert np.sum((s >= lo) & (s <= hi)) >= m


def test_equal_tailed_linear_interpolation():
    assert equal_tailed_interval(np.arange(11.0), 0.8) == pytest.approx((1.0, 9.0))


# -- summarize ------------------------------------------------------------------

def test_single_draw_summary():
    model = pair_model()
    table = summarize(fit_from_draws(model, [[0.3, 0.3]]))
    row = table.records()[0]
    assert row["Mean"] == row["Median"] == row["HPD_lower"] == row["HPD_higher"] == pytest.approx(0.3)


def test_summary_columns():
    table = summarize(fit_from_draws(pair_model(), np.zeros((4, 2))))
    assert table.columns == ["Parameter", "Mean", "Median", "HPD_lower", "HPD_higher", "ESS"]
    assert summarize(fit_from_draws(pair_model(), np.zeros((4, 2))), "equal-tailed").columns[3] == "ET_lower"


def test_summary_reports_random_effect_scale_constrained():
    model = small_model("bt-U")
    theta = np.zeros(model.dim)
    theta[model.layout.block("U_std").slice] = math.log(0.7)
    table = summarize(fit_from_draws(model, [theta]))
    rec = {r["Parameter"]: r for r in table.records()}
    std_name = model.layout.block("U_std").labels[0]
    assert rec[std_name]["Mean"] == pytest.approx(0.7)


def test_prior_only_summary_within_mcse():
    empty = ContestDataset([], players=["A", "B", "C"])
    model = build_model(empty, ModelSpec.from_string("bt"), allow_empty=True)
    fit = sample(model, SamplerConfig(chains=2, warmup=300, draws=1000, seed=4))
    for row in summarize(fit).records():
        k = fit.names.index(row["Parameter"])
        x = fit.constrained[:, :, k]
        assert abs(row["Mean"]) < 3 * x.std() / math.sqrt(row["ESS"])


# -- ranks ----------------------------------------------------------------------

def test_rank_hand_example():
    r = rank_summary([[2, 1, 0], [0, 1, 2], [2, 1, 0]], ["A", "B", "C"])
    assert r.median[0] == 1
    assert r.mean[0] == pytest.approx(5 / 3)
    assert r.sd[0] == pytest.approx(1.1547, abs=1e-4)
    assert r.median[1] == 2 and r.sd[1] == 0
    assert r.mean.sum() == pytest.approx(6, abs=1e-9)


def test_rank_identical_draws_zero_sd():
    r = rank_summary(np.tile([0.5, -1.0, 2.0], (5, 1)), ["A", "B", "C"])
    assert np.all(r.sd == 0)
    assert [r.players[k] for k in r.order()] == ["C", "A", "B"]


def test_rank_ties_go_to_registry_order():
    np.testing.assert_array_equal(draw_ranks([[1.0, 1.0, 0.0]]), [[1, 2, 3]])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(2, 8)),
              elements=st.floats(-5, 5)))
def test_ranks_are_permutations(a):
    ranks = draw_ranks(a)
    n = a.shape[1]
    assert np.all(np.sort(ranks, axis=1) == np.arange(1, n + 1))
    r = rank_summary(a, [str(k) for k in range(n)])
    assert r.mean.sum() == pytest.approx(n * (n + 1) / 2, abs=1e-9)


def test_rank_table_sorted_by_median_then_mean():
    r = rank_summary([[3, 2, 1, 0], [2, 3, 1, 0], [3, 1, 2, 0]], ["A", "B", "C", "D"])
    assert r.table().column("Parameter") == ["A", "B", "C", "D"]


# -- probabilities --------------------------------------------------------------

def test_probability_equal_abilities():
    row = probability_table(fit_from_draws(pair_model(), [[0.4, 0.4]])).records()[0]
    assert row["i_beats_j"] == pytest.approx(0.5)
    assert row["j_beats_i"] == pytest.approx(0.5)
    assert row["odds_ratio"] == pytest.approx(1.0)


def test_probability_logistic_oracle():
    row = probability_table(fit_from_draws(pair_model(), [[1.0, 0.0]])).records()[0]
    assert (row["i"], row["j"]) == ("A", "B")
    assert row["i_beats_j"] == pytest.approx(0.7310586, abs=1e-7)
    assert row["j_beats_i"] == pytest.approx(0.2689414, abs=1e-7)
    assert row["odds_ratio"] == pytest.approx(math.e)


def test_probability_table_pairs_sorted_case_insensitive():
    contests = [Contest(PIZZAS[k], PIZZAS[(k + 1) % 5], Outcome.PLAYER1_WINS) for k in range(5)]
    model = build_model(ContestDataset(contests, players=PIZZAS), ModelSpec.from_string("bt"))
    table = probability_table(fit_from_draws(model, np.zeros((3, 5))))
    assert len(table.rows) == 10
    assert [tuple(r[:2]) for r in table.rows[:4]] == [
        ("aKroger", "DiGiorno"), ("aKroger", "Freschetta"),
        ("aKroger", "Red Barron"), ("aKroger", "Tombstone")]


def test_probability_table_davidson_and_order_effect():
    model = small_model("davidson-ordereffect")
    rng = np.random.default_rng(0)
    draws = rng.normal(size=(20, model.dim))
    table = probability_table(fit_from_draws(model, draws))
    assert table.columns == ["i", "j", "i_beats_j", "j_beats_i", "ties", "odds_ratio"]
    for row in table.records():
        assert row["i_beats_j"] + row["j_beats_i"] + row["ties"] == pytest.approx(1, abs=1e-12)
    shuffled = probability_table(fit_from_draws(model, draws[rng.permutation(20)]))
    for a, b in zip(table.rows, shuffled.rows):
        assert a[2:] == pytest.approx(b[2:], abs=1e-12)


def test_probability_table_random_effects_averaged_out():
    model = small_model("bt-U")
    theta = np.zeros(model.dim)
    theta[model.layout.block("U_raw").slice] = 5.0
    row = probability_table(fit_from_draws(model, [theta])).records()[0]
    assert row["i_beats_j"] == pytest.approx(0.5)


# -- predict ----------------------------------------------------------------------

def test_predict_equal_players():
    model = pair_model()
    fit = fit_from_draws(model, np.random.default_rng(1).normal(0, 1e-3, size=(400, 2)))
    pred = predict(fit, [Matchup("A", "B")])
    assert pred.mean[0, Outcome.PLAYER1_WINS] == pytest.approx(0.5, abs=1e-3)
    assert abs(pred.outcomes.mean() - 0.5) < 4 * 0.5 / math.sqrt(400)
    np.testing.assert_allclose(pred.probabilities.sum(axis=2), 1.0, atol=1e-12)


def test_predict_deterministic_and_draw_limit():
    model = small_model("davidson")
    fit = fit_from_draws(model, np.random.default_rng(2).normal(size=(50, model.dim)))
    q = [Matchup("A", "B"), Matchup("C", "D")]
    a, b = predict(fit, q, seed=3), predict(fit, q, seed=3)
    np.testing.assert_array_equal(a.outcomes, b.outcomes)
    assert predict(fit, q, draws_per_row=7).probabilities.shape == (2, 7, 3)
    assert set(np.unique(a.outcomes)) <= {0, 1, 2}


def test_predict_errors():
    fit = fit_from_draws(small_model("bt-S"), np.zeros((2, small_model("bt-S").dim)))
    with pytest.raises(UnknownPlayerError):
        predict(fit, [Matchup("A", "Zed", covariates={"x0": 0, "x1": 0})])
    with pytest.raises(MissingCovariateError):
        predict(fit, [Matchup("A", "B", covariates={"x0": 0})])


def test_predict_subject_predictor_direction():
    model = small_model("bt-S")
    theta = np.zeros(model.dim)
    s = model.layout.block("S")
    slopes = np.zeros(s.shape)
    slopes[model.player_index("A"), 0] = 0.8
    theta[s.slice] = slopes.ravel()
    fit = fit_from_draws(model, [theta])
    at = lambda z: Matchup("B", "A", covariates={"x0": z, "x1": 0.0}, standardized=True)
    pred = predict(fit, [at(0.0), at(2.0), at(-2.0)])
    p = pred.mean[:, Outcome.PLAYER1_WINS]
    assert p[0] == pytest.approx(0.5)
    assert p[1] > p[0] > p[2]
    assert p[1] == pytest.approx(1 / (1 + math.exp(-1.6)))


def test_summary_text_sections():
    contests = [Contest(PIZZAS[k], PIZZAS[(k + 1) % 5], Outcome.PLAYER1_WINS) for k in range(5)]
    model = build_model(ContestDataset(contests, players=PIZZAS), ModelSpec.from_string("bt"))
    text = summary_text(fit_from_draws(model, np.random.default_rng(0).normal(size=(8, 5))))
    assert "Parameter              Mean   Median   HPD_lower   HPD_higher" in text
    assert "Table: Estimated posterior ranks" in text
    assert "Parameter     MedianRank   MeanRank   StdRank" in text
    assert "i            j             i_beats_j   j_beats_i" in text
