import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from pairbayes.comparison import (
    PointwiseLogLik, compare, comparison_table, fit_generalized_pareto, information_criterion,
    pointwise_loglik, psis_loo, psis_smooth, waic,
)
from pairbayes.errors import DegenerateDrawsError, TooFewTailSamplesError, UnsupportedCriterionError
from pairbayes.model import Contest, ContestDataset, ModelSpec, Outcome, build_model
from pairbayes.sampler import SamplerConfig, sample

from .test_posterior import fit_from_draws


def test_pointwise_loglik_single_contest():
    model = build_model(ContestDataset([Contest("A", "B", Outcome.PLAYER1_WINS)]), ModelSpec.from_string("bt"))
    ll = pointwise_loglik(model, fit_from_draws(model, [[0.0, 0.0]]))
    np.testing.assert_allclose(ll.values, [[math.log(0.5)]])


def test_pointwise_loglik_davidson_tie():
    model = build_model(ContestDataset([Contest("A", "B", Outcome.TIE)]), ModelSpec.from_string("davidson"))
    ll = pointwise_loglik(model, fit_from_draws(model, [[0.0, 0.0, 0.0]]))
    assert ll.values[0, 0] == pytest.approx(math.log(1 / 3), abs=1e-14)


def test_pointwise_loglik_shape():
    model = build_model(ContestDataset([Contest("A", "B", Outcome.PLAYER1_WINS)] * 3),
                        ModelSpec.from_string("bt"))
    ll = pointwise_loglik(model, fit_from_draws(model, np.zeros((7, 2))))
    assert (ll.n_draws, ll.n_obs) == (7, 3)


# -- WAIC -----------------------------------------------------------------------------

def test_waic_hand_example():
    est = waic([[math.log(0.5)], [math.log(0.25)]])
    assert est.elpd == pytest.approx(math.log(0.375) - 0.5 * math.log(2) ** 2, abs=1e-12)
    assert est.p_eff == pytest.approx(0.24022, abs=1e-5)
    assert est.elpd == pytest.approx(-1.22105, abs=1e-5)
    assert est.ic == pytest.approx(2.44211, abs=1e-5)
    assert est.se == 0.0


def test_waic_identical_rows():
    row = np.log([0.5, 0.2, 0.9])
    est = waic(np.tile(row, (4, 1)))
    assert est.p_eff == 0
    assert est.ic == pytest.approx(-2 * row.sum())


def test_waic_needs_two_draws():
    with pytest.raises(DegenerateDrawsError):
        waic([[math.log(0.5)]])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 6)),
              elements=st.floats(-8, -1e-3)),
       st.randoms(use_true_random=False))
def test_waic_and_loo_properties(v, rnd):
    est = waic(v)
    lppd = np.log(np.mean(np.exp(v), axis=0)).sum()
    assert est.elpd <= lppd + 1e-12
    assert est.ic == pytest.approx(-2 * est.elpd, abs=1e-12)
    assert est.se >= 0
    perm = list(range(len(v)))
    rnd.shuffle(perm)
    assert waic(v[perm]).elpd == pytest.approx(est.elpd, abs=1e-10)
    assert psis_loo(v[perm]).elpd == pytest.approx(psis_loo(v).elpd, abs=1e-10)


def test_lppd_converges_to_known_predictive():
    # single Bernoulli success, Beta(3, 2) posterior draws: p(y=1) = 3/5
    p = stats.beta(3, 2).rvs(size=20_000, random_state=np.random.default_rng(0))
    est = waic(np.log(p)[:, None])
    lppd = est.elpd + est.p_eff
    mcse = p.std(ddof=1) / math.sqrt(len(p)) / p.mean()
    assert abs(lppd - math.log(0.6)) < 3 * mcse


# -- Pareto -----------------------------------------------------------------------------

@pytest.mark.parametrize("k", [0.0, 0.5])
def test_gpd_recovers_shape(k):
    x = stats.genpareto(c=k, scale=1.0).rvs(size=10_000, random_state=np.random.default_rng(1))
    k_hat, sigma = fit_generalized_pareto(x)
    assert abs(k_hat - k) < 0.1
    assert sigma == pytest.approx(1.0, rel=0.1)


def test_gpd_too_few_points():
    with pytest.raises(TooFewTailSamplesError):
        fit_generalized_pareto([1.0, 2.0, 3.0, 4.0])


def test_smoothing_never_exceeds_raw_maximum():
    lr = stats.t(df=1.5).rvs(size=4000, random_state=np.random.default_rng(2))
    lw, k = psis_smooth(lr)
    assert lw.max() <= 0.0
    assert np.isfinite(k)


# -- LOO --------------------------------------------------------------------------------

def test_loo_unsmoothed_hand_example():
    est = psis_loo([[math.log(0.5)], [math.log(0.25)]])
    assert est.elpd == pytest.approx(-math.log(3), abs=1e-10)
    assert not est.smoothed
    assert "plain importance sampling" in est.text()


def test_loo_identical_draws():
    est = psis_loo(np.full((100, 1), math.log(0.5)))
    assert est.elpd == math.log(0.5)
    assert math.isnan(est.pareto_k[0])
    assert est.mcse_elpd is None


def test_loo_degenerate():
    with pytest.raises(DegenerateDrawsError):
        psis_loo([[0.0]])


def test_aic_bic_refused():
    for name in ("aic", "BIC"):
        with pytest.raises(UnsupportedCriterionError, match="flat priors"):
            information_criterion([[0.0], [0.0]], name)


@pytest.fixture(scope="module")
def bt_fit_and_model():
    rng = np.random.default_rng(5)
    players = ["P1", "P2", "P3", "P4"]
    lam = dict(zip(players, [-1.0, -0.3, 0.3, 1.0]))
    contests = []
    for _ in range(150):
        a, b = rng.choice(4, size=2, replace=False)
        d = lam[players[a]] - lam[players[b]]
        won = rng.uniform() < 1 / (1 + math.exp(-d))
        contests.append(Contest(players[b], players[a],
                                Outcome.PLAYER1_WINS if won else Outcome.PLAYER0_WINS))
    model = build_model(ContestDataset(contests, players=players), ModelSpec.from_string("bt"))
    return model, sample(model, SamplerConfig(chains=2, warmup=300, draws=1000, seed=1))


def test_healthy_fit_loo_matches_waic(bt_fit_and_model):
    model, fit = bt_fit_and_model
    ll = pointwise_loglik(model, fit)
    w, l = waic(ll), psis_loo(ll)
    assert abs(l.elpd - w.elpd) < 2 * w.se
    assert np.all(l.pareto_k < 0.5)
    assert l.mcse_elpd is not None
    text = l.text()
    assert "All Pareto k estimates are good (k < 0.5)." in text
    assert f"Computed from 2000 by {model.n_contests} log-likelihood matrix" in text


def test_waic_text_layout():
    lines = waic(np.log([[0.5, 0.4], [0.25, 0.6]])).lines()
    assert lines[2] == "          Estimate  SE"
    assert lines[3].startswith("elpd_waic ")
    assert lines[5].startswith("waic ")


def test_compare_orders_by_elpd(bt_fit_and_model):
    model, fit = bt_fit_and_model
    good = waic(pointwise_loglik(model, fit))
    noise = waic(np.full((10, model.n_contests), math.log(0.5)) + 1e-3 * np.arange(10)[:, None])
    rows = compare({"flat": noise, "fitted": good})
    assert [r.name for r in rows] == ["fitted", "flat"]
    assert rows[0].elpd_diff == 0
    assert rows[1].elpd_diff < 0
    assert rows[1].diff_se > 0
    assert comparison_table(rows).columns[0] == "Model"
