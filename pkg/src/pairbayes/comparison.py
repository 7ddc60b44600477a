"""Predictive model comparison: WAIC and Pareto-smoothed importance sampling
leave-one-out cross-validation (PSIS-LOO)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateDrawsError, TooFewTailSamplesError, UnsupportedCriterionError
from .tables import Table

K_GOOD = 0.5
K_OK = 0.7
MIN_SMOOTHING_DRAWS = 50


@dataclass(frozen=True)
class PointwiseLogLik:
    """Log-likelihood matrix, rows are posterior draws, columns observations."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("log-likelihood matrix must be two-dimensional")
        object.__setattr__(self, "values", v)

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    @property
    def n_obs(self) -> int:
        return self.values.shape[1]


def pointwise_loglik(model, fit) -> PointwiseLogLik:
    """Evaluate every observation's log-likelihood at every posterior draw."""
    thetas = fit.flat(constrained=False)
    return PointwiseLogLik(np.stack([model.pointwise_loglik(t) for t in thetas]))


@dataclass
class IcEstimate:
    """An information-criterion estimate with standard errors.

    ``ic`` is on the deviance scale, ``-2 * elpd``.
    """

    criterion: str
    elpd: float
    elpd_se: float
    p_eff: float
    p_eff_se: float
    pointwise_elpd: np.ndarray
    n_draws: int
    pareto_k: np.ndarray | None = None
    mcse_elpd: float | None = None
    smoothed: bool = True
    p_pointwise: np.ndarray = field(default=None, repr=False)

    @property
    def ic(self) -> float:
        return -2.0 * self.elpd

    @property
    def se(self) -> float:
        return self.elpd_se

    @property
    def ic_se(self) -> float:
        return 2.0 * self.elpd_se

    @property
    def n_obs(self) -> int:
        return len(self.pointwise_elpd)

    def k_counts(self) -> dict[str, int]:
        k = self.pareto_k
        if k is None:
            return {}
        finite = np.where(np.isfinite(k), k, np.inf)
        return {
            "good": int(np.sum(finite < K_GOOD)),
            "ok": int(np.sum((finite >= K_GOOD) & (finite < K_OK))),
            "bad": int(np.sum((finite >= K_OK) & (finite <= 1.0))),
            "very bad": int(np.sum(finite > 1.0)),
        }

    def lines(self) -> list[str]:
        ic_name = {"waic": "waic", "loo": "looic"}[self.criterion]
        rows = [(f"elpd_{self.criterion}", self.elpd, self.elpd_se),
                (f"p_{self.criterion}", self.p_eff, self.p_eff_se),
                (ic_name, self.ic, self.ic_se)]
        est = [f"{v:.1f}" for _, v, _ in rows]
        se = [f"{s:.1f}" for _, _, s in rows]
        name_w = max(len(r[0]) for r in rows)
        est_w = max(len("Estimate"), *(len(e) for e in est))
        out = [f"Computed from {self.n_draws} by {self.n_obs} log-likelihood matrix", ""]
        out.append(" " * name_w + " " + "Estimate".rjust(est_w) + "  SE")
        for (name, _, _), e, s in zip(rows, est, se):
            out.append(f"{name.ljust(name_w)} {e.rjust(est_w)} {s.rjust(3)}")
        if self.criterion == "loo":
            out.append("------")
            if self.mcse_elpd is None:
                out.append("Monte Carlo SE of elpd_loo is NA.")
            else:
                out.append(f"Monte Carlo SE of elpd_loo is {self.mcse_elpd:.1f}.")
            out.append("")
            if not self.smoothed:
                out.append("Too few draws for Pareto smoothing; plain importance sampling used.")
            else:
                counts = self.k_counts()
                if counts["good"] == self.n_obs:
                    out.append(f"All Pareto k estimates are good (k < {K_GOOD}).")
                else:
                    out.append("Pareto k diagnostic values:")
                    out.append(f"  (-Inf, {K_GOOD}]  good      {counts['good']}")
                    out.append(f"  ({K_GOOD}, {K_OK}]   ok        {counts['ok']}")
                    out.append(f"  ({K_OK}, 1]     bad       {counts['bad']}")
                    out.append(f"  (1, Inf)     very bad  {counts['very bad']}")
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def to_dict(self) -> dict:
        d = {
            "criterion": self.criterion,
            "n_draws": self.n_draws,
            "n_obs": self.n_obs,
            "elpd": self.elpd,
            "elpd_se": self.elpd_se,
            "p_eff": self.p_eff,
            "p_eff_se": self.p_eff_se,
            "ic": self.ic,
            "ic_se": self.ic_se,
        }
        if self.criterion == "loo":
            d["mcse_elpd"] = self.mcse_elpd
            d["smoothed"] = self.smoothed
            d["pareto_k"] = [None if not np.isfinite(k) else float(k) for k in self.pareto_k]
        return d


def _matrix(ll) -> np.ndarray:
    v = ll.values if isinstance(ll, PointwiseLogLik) else np.asarray(ll, dtype=float)
    if v.ndim != 2:
        raise ValueError("log-likelihood matrix must be two-dimensional")
    return v


def _se(pointwise: np.ndarray) -> float:
    n = len(pointwise)
    if n < 2:
        return 0.0
    return float(math.sqrt(n * np.var(pointwise, ddof=1)))


def waic(ll) -> IcEstimate:
    """Widely applicable information criterion.

    ``p_eff`` per observation is the sample variance (n-1 denominator) of its
    log-likelihood across draws.
    """
    v = _matrix(ll)
    s = v.shape[0]
    if s < 2:
        raise DegenerateDrawsError("WAIC needs at least 2 posterior draws")
    lppd = logsumexp(v, axis=0) - math.log(s)
    p = v.var(axis=0, ddof=1)
    elpd = lppd - p
    return IcEstimate("waic", float(elpd.sum()), _se(elpd), float(p.sum()), _se(p), elpd, s,
                      p_pointwise=p)


# -- generalized Pareto ----------------------------------------------------------------

def fit_generalized_pareto(tail, weak_prior: bool = False) -> tuple[float, float]:
    """Shape and scale of a generalized Pareto fit to positive exceedances.

    Zhang and Stephens' empirical-Bayes profile estimator. ``weak_prior``
    shrinks the shape toward 0.5 with the weight of ten pseudo-observations,
    as is customary when smoothing importance ratios.
    """
    x = np.sort(np.asarray(tail, dtype=float).ravel())
    n = len(x)
    if n < 5:
        raise TooFewTailSamplesError(f"need at least 5 tail values, got {n}")
    if np.any(x < 0):
        raise ValueError("exceedances must be non-negative")
    if x[-1] <= 0:
        return math.inf, math.nan
    prior = 3.0
    m = 30 + int(math.sqrt(n))
    quartile = x[int(n / 4 + 0.5) - 1]
    if quartile <= 0:
        quartile = x[x > 0][0]
    jj = np.arange(1, m + 1)
    theta = 1.0 / x[-1] + (1.0 - np.sqrt(m / (jj - 0.5))) / prior / quartile
    k = np.array([np.mean(np.log1p(-t * x)) for t in theta])
    with np.errstate(divide="ignore", invalid="ignore"):
        profile = n * (np.log(-theta / k) - k - 1.0)
    profile = np.where(np.isfinite(profile), profile, -np.inf)
    weights = np.exp(profile - logsumexp(profile))
    theta_hat = float(np.sum(theta * weights))
    k_hat = float(np.mean(np.log1p(-theta_hat * x)))
    sigma = -k_hat / theta_hat
    if weak_prior:
        k_hat = (k_hat * n + 0.5 * 10) / (n + 10)
    return k_hat, float(sigma)


def gpd_quantile(p, k: float, sigma: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def psis_smooth(log_ratios) -> tuple[np.ndarray, float]:
    """Pareto-smooth one column of log importance ratios.

    Returns smoothed log weights (shifted so the raw maximum is 0) and the
    tail shape estimate. Smoothed values are truncated at the raw maximum.
    """
    lr = np.asarray(log_ratios, dtype=float)
    lr = lr - lr.max()
    s = len(lr)
    m = int(math.ceil(min(0.2 * s, 3.0 * math.sqrt(s))))
    order = np.argsort(lr, kind="stable")
    cutoff = lr[order[s - m - 1]]
    tail_idx = order[s - m:]
    tail = lr[tail_idx]
    if m < 5 or np.all(tail <= cutoff):
        return lr, math.nan
    exp_cutoff = math.exp(cutoff)
    k, sigma = fit_generalized_pareto(np.exp(tail) - exp_cutoff, weak_prior=True)
    if not math.isfinite(k):
        return lr, k
    smoothed = np.log(gpd_quantile((np.arange(1, m + 1) - 0.5) / m, k, sigma) + exp_cutoff)
    out = lr.copy()
    out[tail_idx] = np.minimum(smoothed, 0.0)
    return out, k


def psis_loo(ll) -> IcEstimate:
    """Leave-one-out expected log predictive density via PSIS.

    With fewer than 50 draws the importance ratios are used unsmoothed and
    the estimate is flagged ``smoothed=False``.
    """
    v = _matrix(ll)
    s, n = v.shape
    if s < 2:
        raise DegenerateDrawsError("LOO needs at least 2 posterior draws")
    smooth = s >= MIN_SMOOTHING_DRAWS
    elpd = np.empty(n)
    ks = np.full(n, math.nan)
    mcse_var = np.empty(n)
    for col in range(n):
        log_ratios = -v[:, col]
        if smooth:
            lw, ks[col] = psis_smooth(log_ratios)
        else:
            lw = log_ratios - log_ratios.max()
        top = v[:, col].max()
        elpd[col] = top + (logsumexp(lw + (v[:, col] - top)) - logsumexp(lw))
        w = np.exp(lw - logsumexp(lw))
        lik = np.exp(v[:, col])
        e = math.exp(elpd[col])
        mcse_var[col] = np.sum(w ** 2 * (lik - e) ** 2) / e ** 2
    lppd = logsumexp(v, axis=0) - math.log(s)
    p = lppd - elpd
    reliable = smooth and np.all(np.isfinite(ks)) and np.all(ks < K_OK)
    mcse = float(math.sqrt(mcse_var.sum())) if reliable else None
    return IcEstimate("loo", float(elpd.sum()), _se(elpd), float(p.sum()), _se(p), elpd, s,
                      pareto_k=ks, mcse_elpd=mcse, smoothed=smooth, p_pointwise=p)


def information_criterion(ll, criterion: str) -> IcEstimate:
    """Dispatch by name; AIC and BIC are refused."""
    c = criterion.lower()
    if c == "waic":
        return waic(ll)
    if c in ("loo", "psis-loo", "loo-cv"):
        return psis_loo(ll)
    if c in ("aic", "bic", "dic"):
        raise UnsupportedCriterionError(
            f"{criterion.upper()} is not provided: it assumes flat priors and point estimates, "
            "neither of which holds for these models; use waic or loo")
    raise UnsupportedCriterionError(f"unknown criterion {criterion!r}; use waic or loo")


@dataclass
class ComparisonRow:
    name: str
    elpd: float
    elpd_se: float
    elpd_diff: float
    diff_se: float
    ic: float


def compare(estimates: Mapping[str, IcEstimate]) -> list[ComparisonRow]:
    """Rank models by elpd, best first, with differences to the best model.

    The difference standard error uses the paired pointwise differences, so
    all estimates must be on the same observations.
    """
    items = list(estimates.items())
    if len(items) < 2:
        raise ValueError("compare needs at least two models")
    n = {est.n_obs for _, est in items}
    if len(n) != 1:
        raise ValueError("models were evaluated on different numbers of observations")
    items.sort(key=lambda kv: -kv[1].elpd)
    best = items[0][1]
    rows = []
    for name, est in items:
        diff = est.pointwise_elpd - best.pointwise_elpd
        rows.append(ComparisonRow(name, est.elpd, est.elpd_se, float(diff.sum()), _se(diff), est.ic))
    return rows


def comparison_table(rows: Sequence[ComparisonRow]) -> Table:
    return Table(["Model", "elpd", "se", "elpd_diff", "se_diff", "ic"],
                 [[r.name, r.elpd, r.elpd_se, r.elpd_diff, r.diff_se, r.ic] for r in rows],
                 title="Model comparison")
