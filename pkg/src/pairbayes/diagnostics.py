"""Convergence and sampler-health checks for multi-chain draws."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError, ZeroVarianceError

ESS_CAP = 1.5


@dataclass(frozen=True)
class Thresholds:
    """Limits a healthy fit must meet."""

    rhat: float = 1.01
    ess: float = 200.0
    ebfmi: float = 0.2


def _as_chains(chains) -> np.ndarray:
    """Stack chains into ``(m, n)``, truncating to the shortest."""
    seqs = [np.asarray(c, dtype=float).ravel() for c in chains]
    if not seqs:
        raise UsageError("at least one chain is required")
    n = min(len(s) for s in seqs)
    if n < 4:
        raise UsageError("each chain needs at least 4 draws")
    return np.stack([s[:n] for s in seqs])


def _split(x: np.ndarray) -> np.ndarray:
    n = x.shape[1] - x.shape[1] % 2
    half = n // 2
    return np.concatenate([x[:, :half], x[:, half:n]])


def split_rhat(chains) -> float:
    """Split potential scale reduction factor.

    Each chain is cut in half (an odd final draw is dropped) and the classic
    between/within variance ratio is computed over the half-chains.

    Raises
    ------
    ZeroVarianceError
        If the within-half-chain variance is zero.
    """
    halves = _split(_as_chains(chains))
    m, n = halves.shape
    w = halves.var(axis=1, ddof=1).mean()
    if not w > 0:
        raise ZeroVarianceError("draws have zero within-chain variance")
    b = n * halves.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    return float(np.sqrt(((n - 1) / n * w + b / n) / w))


def autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased sample autocovariance at every lag, via FFT."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def effective_sample_size(chains) -> float:
    """Effective sample size across chains.

    Per-chain autocovariances are combined with the between-chain variance
    and the autocorrelation sum is truncated by Geyer's initial monotone
    positive-pair sequence. The result is clamped to 1.5 times the total
    draw count.
    """
    x = _as_chains(chains)
    m, n = x.shape
    acov = np.stack([autocovariance(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if not var_plus > 0 or not w > 0:
        raise ZeroVarianceError("draws have zero variance")
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Geyer: sum consecutive pairs while positive, enforcing monotone decrease.
    pairs = []
    t = 0
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p <= 0:
            break
        if pairs and p > pairs[-1]:
            p = pairs[-1]
        pairs.append(p)
        t += 2
    tau = -1.0 + 2.0 * sum(pairs)
    total = m * n
    tau = max(tau, 1.0 / ESS_CAP)
    return float(total / tau)


def ebfmi(energies) -> float:
    """Energy Bayesian fraction of missing information for one chain."""
    e = np.asarray(energies, dtype=float).ravel()
    if len(e) < 3:
        raise UsageError("E-BFMI needs at least 3 energies")
    den = float(np.sum((e - e.mean()) ** 2))
    if not den > 0:
        raise ZeroVarianceError("energies are constant")
    return float(np.sum(np.diff(e) ** 2) / den)


def mcse_mean(chains) -> float:
    """Monte Carlo standard error of the mean."""
    x = _as_chains(chains)
    return float(x.std(ddof=1) / np.sqrt(effective_sample_size(x)))


def _safe(fn, arg) -> float:
    try:
        return fn(arg)
    except ZeroVarianceError:
        return float("nan")


@dataclass
class ConvergenceReport:
    """Per-parameter and per-chain health statistics with a verdict."""

    names: tuple[str, ...]
    rhat: np.ndarray
    ess: np.ndarray
    ebfmi: np.ndarray
    n_divergent: int
    n_max_treedepth: int
    max_treedepth: int
    n_transitions: int
    thresholds: Thresholds = field(default_factory=Thresholds)

    @property
    def bad_rhat(self) -> list[str]:
        return [n for n, r in zip(self.names, self.rhat) if not r < self.thresholds.rhat]

    @property
    def bad_ess(self) -> list[str]:
        return [n for n, e in zip(self.names, self.ess) if not e >= self.thresholds.ess]

    @property
    def bad_ebfmi(self) -> list[int]:
        return [c for c, e in enumerate(self.ebfmi) if not e >= self.thresholds.ebfmi]

    @property
    def passed(self) -> bool:
        return not (self.bad_rhat or self.bad_ess or self.bad_ebfmi
                    or self.n_divergent or self.n_max_treedepth)

    def lines(self) -> list[str]:
        out = ["Checking sampler transitions treedepth."]
        if self.n_max_treedepth:
            out.append(f"{self.n_max_treedepth} of {self.n_transitions} iterations saturated "
                       f"the maximum tree depth of {self.max_treedepth}.")
        else:
            out.append("Treedepth satisfactory for all transitions.")
        out += ["", "Checking sampler transitions for divergences."]
        if self.n_divergent:
            out.append(f"{self.n_divergent} of {self.n_transitions} iterations ended "
                       "with a divergence.")
        else:
            out.append("No divergent transitions found.")
        out += ["", "Checking E-BFMI - sampler transitions HMC potential energy."]
        if self.bad_ebfmi:
            for c in self.bad_ebfmi:
                out.append(f"Chain {c + 1}: E-BFMI = {self.ebfmi[c]:.3f} below "
                           f"{self.thresholds.ebfmi}.")
        else:
            out.append("E-BFMI satisfactory for all transitions.")
        out.append("")
        if self.bad_ess:
            out.append("Effective sample size below "
                       f"{self.thresholds.ess:g} for: {', '.join(self.bad_ess)}.")
        else:
            out.append("Effective sample size satisfactory.")
        out.append("")
        if self.bad_rhat:
            out.append(f"Split R-hat not below {self.thresholds.rhat} for: "
                       f"{', '.join(self.bad_rhat)}.")
        else:
            out.append("Split R-hat values satisfactory all parameters.")
        out.append("")
        if self.passed:
            out.append("Processing complete, no problems detected.")
        else:
            out.append("Processing complete, problems detected.")
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def to_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "parameters": [
                {"name": n, "rhat": r, "ess": e}
                for n, r, e in zip(self.names, clean(self.rhat), clean(self.ess))
            ],
            "ebfmi": clean(self.ebfmi),
            "n_divergent": self.n_divergent,
            "n_max_treedepth": self.n_max_treedepth,
            "n_transitions": self.n_transitions,
            "passed": self.passed,
        }


def convergence_report(fit, thresholds: Thresholds | None = None) -> ConvergenceReport:
    """Collect R-hat, ESS, E-BFMI, divergence and treedepth statistics."""
    thresholds = thresholds or Thresholds()
    draws = fit.constrained
    names = tuple(fit.names)
    rhat = np.array([_safe(split_rhat, draws[:, :, k]) for k in range(len(names))])
    ess = np.array([_safe(effective_sample_size, draws[:, :, k]) for k in range(len(names))])
    bfmi = np.array([_safe(ebfmi, e) for e in fit.energy])
    return ConvergenceReport(
        names=names,
        rhat=rhat,
        ess=ess,
        ebfmi=bfmi,
        n_divergent=int(np.sum(fit.divergent)),
        n_max_treedepth=int(np.sum(fit.treedepth >= fit.config.max_treedepth)),
        max_treedepth=fit.config.max_treedepth,
        n_transitions=int(fit.divergent.size),
        thresholds=thresholds,
    )
