"""No-U-Turn Hamiltonian Monte Carlo.

Multinomial NUTS with a diagonal mass matrix, dual-averaging step-size
adaptation and windowed mass-matrix estimation during warmup. Any object
with ``dim``, ``param_names``, ``logp_and_grad(theta)`` and
``constrain(draws)`` can be sampled.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AllDivergentError, NonFiniteInitError, PairBayesError, UsageError

log = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0
INIT_BUFFER = 75
TERM_BUFFER = 50
BASE_WINDOW = 25
THREADS_ENV = "PAIRBAYES_THREADS"


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    ``step_size`` fixes the step size and disables its adaptation (the mass
    matrix is still adapted during warmup). ``warmup=0`` disables adaptation
    entirely.
    """

    chains: int = 4
    warmup: int = 1000
    draws: int = 2000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    step_size: float | None = None
    n_jobs: int | None = None

    def __post_init__(self):
        if self.chains < 1:
            raise UsageError("chains must be >= 1")
        if self.draws < 1:
            raise UsageError("draws must be >= 1")
        if 0 < self.warmup < INIT_BUFFER + BASE_WINDOW + TERM_BUFFER:
            raise UsageError("warmup must be 0 or >= 150 iterations")
        if self.warmup < 0:
            raise UsageError("warmup must be non-negative")
        if not 0.0 < self.target_accept < 1.0:
            raise UsageError("target_accept must lie in (0, 1)")
        if self.max_treedepth < 1:
            raise UsageError("max_treedepth must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise UsageError("seed must be a 64-bit unsigned integer")
        if self.step_size is not None and not self.step_size > 0:
            raise UsageError("step_size must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "n_jobs"}


@dataclass(eq=False)
class PosteriorFit:
    """Draws and per-transition statistics of a finished run.

    ``draws`` has shape ``(chains, draws, dim)`` on the unconstrained scale;
    :attr:`constrained` exponentiates log-scale parameters.
    """

    model: object
    draws: np.ndarray
    divergent: np.ndarray
    treedepth: np.ndarray
    accept_stat: np.ndarray
    energy: np.ndarray
    n_leapfrog: np.ndarray
    step_size: np.ndarray
    inv_mass: np.ndarray
    config: SamplerConfig
    metadata: dict = field(default_factory=dict, repr=False)
    _constrained: np.ndarray | None = field(default=None, init=False, repr=False)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.model.param_names)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def constrained(self) -> np.ndarray:
        if self._constrained is None:
            self._constrained = self.model.constrain(self.draws)
        return self._constrained

    def flat(self, constrained: bool = True) -> np.ndarray:
        """All draws stacked chain after chain, shape ``(chains * draws, dim)``."""
        d = self.constrained if constrained else self.draws
        return d.reshape(-1, d.shape[-1])


def leapfrog(theta, r, eps, grad, inv_mass):
    """One leapfrog step; ``grad`` maps a position to the log-density gradient."""
    r_half = r + 0.5 * eps * grad(theta)
    theta_new = theta + eps * inv_mass * r_half
    return theta_new, r_half + 0.5 * eps * grad(theta_new)


class DualAveraging:
    """Nesterov dual averaging of the log step size."""

    def __init__(self, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(1.0)

    def restart(self, step_size: float):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.x_bar)


class WindowedVariance:
    """Warmup schedule: fast initial buffer, doubling slow windows, fast tail."""

    def __init__(self, warmup: int, dim: int):
        self.warmup = warmup
        self.counter = 0
        self.window_size = BASE_WINDOW
        self.next_window = INIT_BUFFER + BASE_WINDOW - 1
        self.last_window = warmup - TERM_BUFFER - 1
        self.samples: list[np.ndarray] = []

    def _in_window(self):
        return INIT_BUFFER <= self.counter < self.warmup - TERM_BUFFER

    def _advance(self):
        if self.next_window == self.last_window:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != self.last_window:
            if self.next_window + 2 * self.window_size >= self.warmup - TERM_BUFFER:
                self.next_window = self.last_window

    def observe(self, theta) -> np.ndarray | None:
        """Record a warmup draw; returns a new inverse mass at window ends."""
        update = None
        if self._in_window():
            self.samples.append(theta.copy())
        if self.counter == self.next_window and self.counter != self.warmup:
            self._advance()
            x = np.array(self.samples)
            n = len(x)
            var = x.var(axis=0, ddof=1)
            update = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self.samples = []
        self.counter += 1
        return update


class _Chain:
    """State and tree builder for one chain."""

    def __init__(self, target, rng, max_depth):
        self.target = target
        self.rng = rng
        self.max_depth = max_depth
        self.dim = target.dim
        self.inv_mass = np.ones(self.dim)

    def potential(self, theta):
        try:
            lp, g = self.target.logp_and_grad(theta)
        except (PairBayesError, FloatingPointError, OverflowError, ValueError):
            return -math.inf, None
        if not math.isfinite(lp):
            return -math.inf, None
        return lp, g

    def momentum(self):
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_mass)

    def kinetic(self, r):
        return 0.5 * float(np.dot(r * self.inv_mass, r))

    def step(self, z, eps):
        theta, r, lp, g = z
        r_half = r + 0.5 * eps * g
        theta_new = theta + eps * self.inv_mass * r_half
        lp_new, g_new = self.potential(theta_new)
        if g_new is None:
            return theta_new, r_half, -math.inf, None
        return theta_new, r_half + 0.5 * eps * g_new, lp_new, g_new

    def initialize(self, radius):
        for _ in range(100):
            theta = self.rng.uniform(-radius, radius, size=self.dim)
            lp, g = self.potential(theta)
            if g is not None and np.all(np.isfinite(g)):
                return theta, lp, g
        raise NonFiniteInitError("no finite initial point found after 100 attempts")

    def find_step_size(self, theta, lp, g, eps):
        """Double or halve ``eps`` until one-step acceptance crosses 0.8."""
        log_target = math.log(0.8)

        def delta(eps):
            r = self.momentum()
            h0 = -lp + self.kinetic(r)
            _, r1, lp1, g1 = self.step((theta, r, lp, g), eps)
            h = -lp1 + self.kinetic(r1) if g1 is not None else math.inf
            return h0 - h if math.isfinite(h) else -math.inf

        direction = 1 if delta(eps) > log_target else -1
        while True:
            d = delta(eps)
            if direction == 1 and not d > log_target:
                break
            if direction == -1 and not d < log_target:
                break
            eps = eps * 2.0 if direction == 1 else eps * 0.5
            if eps > 1e7 or eps < 1e-12:
                break
        return eps

    # -- NUTS ------------------------------------------------------------------

    @staticmethod
    def _criterion(ps_minus, ps_plus, rho):
        return float(np.dot(ps_plus, rho)) > 0 and float(np.dot(ps_minus, rho)) > 0

    def _leaf(self, z, eps):
        z = self.step(z, eps)
        self.n_leapfrog += 1
        theta, r, lp, g = z
        h = -lp + self.kinetic(r) if g is not None else math.inf
        if not math.isfinite(h):
            h = math.inf
        if h - self.h0 > MAX_DELTA_H:
            self.divergent = True
            self.sum_metro += 0.0 if h == math.inf else math.exp(min(0.0, self.h0 - h))
            return None
        log_w = self.h0 - h
        self.sum_metro += 1.0 if log_w > 0 else math.exp(log_w)
        ps = self.inv_mass * r
        return (z, z, log_w, r.copy(), r, r, ps, ps)

    def build_tree(self, depth, z, eps):
        """Subtree of ``2**depth`` states from ``z``.

        Returns ``(end, proposal, log_weight, rho, p_beg, p_end, ps_beg, ps_end)``
        or ``None`` when the subtree diverged or turned around.
        """
        if depth == 0:
            return self._leaf(z, eps)
        init = self.build_tree(depth - 1, z, eps)
        if init is None:
            return None
        final = self.build_tree(depth - 1, init[0], eps)
        if final is None:
            return None
        log_w = np.logaddexp(init[2], final[2])
        if final[2] > log_w or self.rng.uniform() < math.exp(final[2] - log_w):
            proposal = final[1]
        else:
            proposal = init[1]
        rho = init[3] + final[3]
        persist = (self._criterion(init[6], final[7], rho)
                   and self._criterion(init[6], final[6], init[3] + final[4])
                   and self._criterion(init[7], final[7], final[3] + init[5]))
        if not persist:
            return None
        return (final[0], proposal, log_w, rho, init[4], final[5], init[6], final[7])

    def transition(self, theta, lp, g, eps):
        r0 = self.momentum()
        self.h0 = -lp + self.kinetic(r0)
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False

        z0 = (theta, r0, lp, g)
        fwd = bck = z0
        sample = z0
        rho = r0.copy()
        p_fwd = p_bck = r0
        ps_fwd = ps_bck = self.inv_mass * r0
        log_sum_w = 0.0
        depth = 0
        while depth < self.max_depth:
            forward = self.rng.uniform() > 0.5
            if forward:
                sub = self.build_tree(depth, fwd, eps)
            else:
                sub = self.build_tree(depth, bck, -eps)
            if sub is None:
                break
            end, proposal, sub_w, sub_rho, p_beg, p_end, ps_beg, ps_end = sub
            depth += 1
            if sub_w > log_sum_w or self.rng.uniform() < math.exp(sub_w - log_sum_w):
                sample = proposal
            log_sum_w = np.logaddexp(log_sum_w, sub_w)
            rho_old = rho
            rho = rho_old + sub_rho
            if forward:
                persist = (self._criterion(ps_bck, ps_end, rho)
                           and self._criterion(ps_bck, ps_beg, rho_old + p_beg)
                           and self._criterion(ps_fwd, ps_end, sub_rho + p_fwd))
                fwd, p_fwd, ps_fwd = end, p_end, ps_end
            else:
                persist = (self._criterion(ps_end, ps_fwd, rho)
                           and self._criterion(ps_beg, ps_fwd, rho_old + p_beg)
                           and self._criterion(ps_end, ps_bck, sub_rho + p_bck))
                bck, p_bck, ps_bck = end, p_end, ps_end
            if not persist:
                break
        theta_s, r_s, lp_s, g_s = sample
        energy = -lp_s + self.kinetic(r_s)
        accept = self.sum_metro / max(self.n_leapfrog, 1)
        return theta_s, lp_s, g_s, depth, accept, energy


def _run_chain(target, config: SamplerConfig, chain: int) -> dict:
    rng = np.random.Generator(np.random.Philox(key=(config.seed ^ chain) & (2 ** 64 - 1)))
    ch = _Chain(target, rng, config.max_treedepth)
    theta, lp, g = ch.initialize(config.init_radius)

    fixed = config.step_size is not None
    eps = config.step_size if fixed else ch.find_step_size(theta, lp, g, 1.0)
    adapt = DualAveraging(config.target_accept)
    adapt.restart(eps)
    windows = WindowedVariance(config.warmup, ch.dim) if config.warmup else None

    for _ in range(config.warmup):
        theta, lp, g, _, accept, _ = ch.transition(theta, lp, g, eps)
        if not fixed:
            eps = adapt.update(accept)
        new_inv_mass = windows.observe(theta)
        if new_inv_mass is not None:
            ch.inv_mass = new_inv_mass
            if not fixed:
                eps = ch.find_step_size(theta, lp, g, eps)
                adapt.restart(eps)
    if config.warmup and not fixed:
        eps = adapt.final_step_size

    n = config.draws
    out = {
        "draws": np.empty((n, ch.dim)),
        "divergent": np.zeros(n, dtype=bool),
        "treedepth": np.zeros(n, dtype=np.int64),
        "accept_stat": np.empty(n),
        "energy": np.empty(n),
        "n_leapfrog": np.zeros(n, dtype=np.int64),
    }
    for k in range(n):
        theta, lp, g, depth, accept, energy = ch.transition(theta, lp, g, eps)
        out["draws"][k] = theta
        out["divergent"][k] = ch.divergent
        out["treedepth"][k] = depth
        out["accept_stat"][k] = accept
        out["energy"][k] = energy
        out["n_leapfrog"][k] = ch.n_leapfrog
    out["step_size"] = eps
    out["inv_mass"] = ch.inv_mass.copy()
    frac = out["divergent"].mean()
    if frac > 0.9:
        raise AllDivergentError(
            f"chain {chain}: {frac:.0%} of transitions diverged (step size {eps:.3g}); "
            "try a higher target acceptance or tighter priors")
    return out


def _chain_job(args):
    return _run_chain(*args)


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def sample(model, config: SamplerConfig = SamplerConfig()) -> PosteriorFit:
    """Run ``config.chains`` independent NUTS chains on ``model``.

    Chain ``c`` is seeded with ``seed XOR c``, so results do not depend on
    how chains are scheduled across worker processes.
    """
    if model.dim < 1:
        raise UsageError("model has no parameters")
    jobs = config.n_jobs or default_jobs()
    args = [(model, config, c) for c in range(config.chains)]
    if jobs > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.chains)) as pool:
            results = list(pool.map(_chain_job, args))
    else:
        results = [_chain_job(a) for a in args]

    def stack(key):
        return np.stack([r[key] for r in results])

    fit = PosteriorFit(
        model=model,
        draws=stack("draws"),
        divergent=stack("divergent"),
        treedepth=stack("treedepth"),
        accept_stat=stack("accept_stat"),
        energy=stack("energy"),
        n_leapfrog=stack("n_leapfrog"),
        step_size=np.array([r["step_size"] for r in results]),
        inv_mass=stack("inv_mass"),
        config=config,
    )
    log.info("sampled %d chains x %d draws, %d divergent", fit.n_chains, fit.n_draws,
             int(fit.divergent.sum()))
    return fit
