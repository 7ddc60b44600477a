"""Paired-comparison models.

Data containers for contests, the model specification, the flat parameter
layout, and :class:`CompiledModel`, which evaluates the unnormalized log
posterior and its exact gradient for every combination of

* base likelihood: Bradley-Terry (win/loss) or Davidson (win/loss/tie),
* extensions: order effect, generalized (player covariates), random
  effects per subject, and subject-specific predictors.

Conventions
-----------
In every contest ``player1`` plays the role of *i* and ``player0`` the role of
*j*: result 1 means ``player1`` won, result 0 means ``player0`` won, result 2
is a tie. The order effect ``gamma`` is added to the ``player0`` side when the
contest's order indicator is 1, so ``gamma > 0`` favours ``player0``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .errors import (
    ConstantCovariateError,
    DataError,
    EmptyDatasetError,
    MissingColumnError,
    MissingCovariateError,
    ModelSpecError,
    NonFiniteDensityError,
    NonFiniteGradientError,
    SinglePlayerError,
    TieWithoutDavidsonError,
    UnknownPlayerError,
    UnknownSubjectError,
)

LOG_2PI = math.log(2.0 * math.pi)


class Outcome(enum.IntEnum):
    PLAYER0_WINS = 0
    PLAYER1_WINS = 1
    TIE = 2


@dataclass(frozen=True)
class Contest:
    """A single comparison between two players.

    ``covariates`` holds the subject-level predictor values observed for this
    row (used by subject-specific predictor models).
    """

    player0: str
    player1: str
    outcome: Outcome
    subject: str | None = None
    order: int = 1
    covariates: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.player0 == self.player1:
            raise DataError(f"player {self.player0!r} cannot play against itself")
        object.__setattr__(self, "outcome", Outcome(int(self.outcome)))
        if self.order not in (0, 1):
            raise DataError(f"order indicator must be 0 or 1, got {self.order!r}")


def _unique(seq: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(seq))


@dataclass
class ContestDataset:
    """Ordered contests plus player and subject registries.

    Registries default to order of first appearance. ``player_covariates``
    maps each player to its predictor values (generalized models).
    """

    contests: list[Contest]
    players: list[str] | None = None
    subjects: list[str] | None = None
    player_covariates: Mapping[str, Mapping[str, float]] | None = None
    covariate_names: tuple[str, ...] | None = None

    def __post_init__(self):
        self.contests = list(self.contests)
        seen_players = _unique(p for c in self.contests for p in (c.player0, c.player1))
        if self.players is None:
            self.players = seen_players
        else:
            self.players = _unique(self.players)
            unknown = set(seen_players) - set(self.players)
            if unknown:
                raise UnknownPlayerError(f"contests reference unregistered players: {sorted(unknown)}")
        seen_subjects = _unique(c.subject for c in self.contests if c.subject is not None)
        if self.subjects is None:
            self.subjects = seen_subjects
        else:
            self.subjects = _unique(self.subjects)
            unknown = set(seen_subjects) - set(self.subjects)
            if unknown:
                raise UnknownSubjectError(f"contests reference unregistered subjects: {sorted(unknown)}")
        if len(self.players) < 2:
            raise SinglePlayerError("at least two players are required")

        names = None
        for n, c in enumerate(self.contests):
            row_names = tuple(c.covariates) if c.covariates else ()
            if names is None:
                names = row_names
            elif row_names != names:
                raise MissingCovariateError(
                    f"row {n}: covariates {list(row_names)} differ from {list(names)}")
        if self.covariate_names is None:
            self.covariate_names = names or ()
        elif self.contests and tuple(self.covariate_names) != names:
            raise MissingCovariateError("declared covariate names do not match the rows")
        self.covariate_names = tuple(self.covariate_names)

        if self.player_covariates is not None:
            self.player_covariates = {p: dict(v) for p, v in self.player_covariates.items()}

    def __len__(self):
        return len(self.contests)

    @property
    def player_covariate_names(self) -> tuple[str, ...]:
        if not self.player_covariates:
            return ()
        first = next(iter(self.player_covariates.values()))
        return tuple(first)

    @property
    def n_ties(self) -> int:
        return sum(c.outcome == Outcome.TIE for c in self.contests)

    def fingerprint(self) -> str:
        """Content hash of the dataset (contests, registries, covariates)."""
        payload = {
            "players": self.players,
            "subjects": self.subjects,
            "rows": [
                [c.player0, c.player1, int(c.outcome), c.subject, c.order,
                 [[k, float(v)] for k, v in (c.covariates or {}).items()]]
                for c in self.contests
            ],
            "player_covariates": (
                {p: [[k, float(v)] for k, v in vals.items()]
                 for p, vals in self.player_covariates.items()}
                if self.player_covariates else None
            ),
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# model specification


class Base(str, enum.Enum):
    BRADLEY_TERRY = "bt"
    DAVIDSON = "davidson"


class Extension(str, enum.Enum):
    ORDER_EFFECT = "ordereffect"
    GENERALIZED = "generalized"
    RANDOM_EFFECTS = "U"
    SUBJECT_PREDICTORS = "S"


_EXTENSION_ORDER = list(Extension)


@dataclass(frozen=True)
class Prior:
    mean: float = 0.0
    variance: float = 3.0

    def __post_init__(self):
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ModelSpecError(f"prior variance must be positive, got {self.variance}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class ModelSpec:
    base: Base = Base.BRADLEY_TERRY
    extensions: frozenset[Extension] = frozenset()
    prior_lambda: Prior = Prior(0.0, 3.0)
    prior_nu: Prior = Prior(0.0, 3.0)
    prior_gamma: Prior = Prior(0.0, 1.0)
    prior_beta: Prior = Prior(0.0, 3.0)
    prior_S: Prior = Prior(0.0, 3.0)
    # variance of the half-normal prior on the random-effect scale
    prior_U_variance: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "base", Base(self.base))
        object.__setattr__(self, "extensions", frozenset(Extension(e) for e in self.extensions))
        if not (self.prior_U_variance > 0 and math.isfinite(self.prior_U_variance)):
            raise ModelSpecError("prior_U_variance must be positive")

    @classmethod
    def from_string(cls, model: str, **priors) -> "ModelSpec":
        """Parse a dash-joined model string such as ``'davidson-generalized-U'``."""
        tokens = model.strip().split("-")
        valid_base = [b.value for b in Base]
        valid_ext = [e.value for e in Extension]
        if tokens[0] not in valid_base:
            raise ModelSpecError(
                f"unknown base model {tokens[0]!r}; valid: {valid_base}")
        exts = []
        for tok in tokens[1:]:
            if tok not in valid_ext:
                raise ModelSpecError(
                    f"unknown model token {tok!r}; valid extensions: {valid_ext}")
            if tok in exts:
                raise ModelSpecError(f"duplicate model token {tok!r}")
            exts.append(tok)
        return cls(base=Base(tokens[0]), extensions=frozenset(Extension(t) for t in exts), **priors)

    @property
    def model_string(self) -> str:
        parts = [self.base.value] + [e.value for e in _EXTENSION_ORDER if e in self.extensions]
        return "-".join(parts)

    def has(self, ext: Extension) -> bool:
        return ext in self.extensions

    @property
    def is_davidson(self) -> bool:
        return self.base is Base.DAVIDSON

    def to_dict(self) -> dict:
        return {
            "model": self.model_string,
            "prior_lambda": [self.prior_lambda.mean, self.prior_lambda.variance],
            "prior_nu": [self.prior_nu.mean, self.prior_nu.variance],
            "prior_gamma": [self.prior_gamma.mean, self.prior_gamma.variance],
            "prior_beta": [self.prior_beta.mean, self.prior_beta.variance],
            "prior_S": [self.prior_S.mean, self.prior_S.variance],
            "prior_U_variance": self.prior_U_variance,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        priors = {k: Prior(*d[k]) for k in
                  ("prior_lambda", "prior_nu", "prior_gamma", "prior_beta", "prior_S")}
        return cls.from_string(d["model"], prior_U_variance=d["prior_U_variance"], **priors)


# ---------------------------------------------------------------------------
# parameter layout


@dataclass(frozen=True)
class Block:
    name: str
    start: int
    shape: tuple[int, ...]
    labels: tuple[str, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def slice(self) -> slice:
        return slice(self.start, self.start + self.size)


@dataclass(frozen=True)
class ParameterLayout:
    """Bijection between a flat parameter vector and named blocks.

    Block order: ``lambda``, ``nu``, ``gamma``, ``beta``, ``S``, ``U_std``,
    ``U_raw``. ``U_std`` is stored on the log scale.
    """

    blocks: tuple[Block, ...]

    def __post_init__(self):
        pos = 0
        for b in self.blocks:
            if b.start != pos or len(b.labels) != b.size:
                raise ValueError(f"malformed block {b.name}")
            pos += b.size
        if len(set(self.names)) != len(self.names):
            raise ValueError("parameter names are not unique")

    @classmethod
    def build(cls, spec: ModelSpec, players: Sequence[str], subjects: Sequence[str],
              player_covariates: Sequence[str], subject_covariates: Sequence[str]):
        blocks = []
        pos = 0

        def add(name, shape, labels):
            nonlocal pos
            blk = Block(name, pos, tuple(shape), tuple(labels))
            if blk.size:
                blocks.append(blk)
                pos += blk.size

        n = len(players)
        if not spec.has(Extension.GENERALIZED):
            add("lambda", (n,), [f"lambda[{p}]" for p in players])
        if spec.is_davidson:
            add("nu", (1,), ["nu"])
        if spec.has(Extension.ORDER_EFFECT):
            add("gamma", (1,), ["gamma"])
        if spec.has(Extension.GENERALIZED):
            add("beta", (len(player_covariates),), [f"beta[{k}]" for k in player_covariates])
        if spec.has(Extension.SUBJECT_PREDICTORS):
            add("S", (n, len(subject_covariates)),
                [f"S[{p},{k}]" for p in players for k in subject_covariates])
        if spec.has(Extension.RANDOM_EFFECTS):
            add("U_std", (1,), ["U_std"])
            add("U_raw", (n, len(subjects)), [f"U_raw[{p},{s}]" for p in players for s in subjects])
        return cls(tuple(blocks))

    @property
    def dim(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(label for b in self.blocks for label in b.labels)

    def __contains__(self, name: str) -> bool:
        return any(b.name == name for b in self.blocks)

    def block(self, name: str) -> Block | None:
        for b in self.blocks:
            if b.name == name:
                return b
        return None

    def unpack(self, theta) -> dict[str, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        return {b.name: theta[b.slice].reshape(b.shape) for b in self.blocks}

    def pack(self, values: Mapping[str, object]) -> np.ndarray:
        theta = np.zeros(self.dim)
        for b in self.blocks:
            theta[b.slice] = np.asarray(values[b.name], dtype=float).ravel()
        return theta


# ---------------------------------------------------------------------------
# contest probabilities


def bt_win_probability(lambda_i, lambda_j, gamma=None, order=1):
    """Probability that *i* beats *j* under Bradley-Terry.

    ``gamma`` (order effect) is added to *j*'s log-ability when ``order`` is 1.
    Works elementwise on arrays.
    """
    lj = np.asarray(lambda_j, dtype=float)
    if gamma is not None:
        lj = lj + np.asarray(order) * gamma
    return expit(np.asarray(lambda_i, dtype=float) - lj)


def davidson_probabilities(lambda_i, lambda_j, nu, gamma=None, order=1):
    """Win, loss and tie probabilities ``(p_i, p_j, p_tie)`` under Davidson.

    The tie weight is ``exp(nu + (lambda_i + lambda_j') / 2)`` where
    ``lambda_j'`` already includes the order effect.
    """
    li = np.asarray(lambda_i, dtype=float)
    lj = np.asarray(lambda_j, dtype=float)
    if gamma is not None:
        lj = lj + np.asarray(order) * gamma
    li, lj, nu = np.broadcast_arrays(li, lj, np.asarray(nu, dtype=float))
    logits = np.stack([li, lj, nu + 0.5 * (li + lj)], axis=-1)
    logp = logits - logsumexp(logits, axis=-1, keepdims=True)
    p = np.exp(logp)
    return p[..., 0], p[..., 1], p[..., 2]


# ---------------------------------------------------------------------------
# compiled model


def _normal_logpdf(x, mean, variance):
    return -0.5 * (LOG_2PI + math.log(variance)) - 0.5 * (x - mean) ** 2 / variance


def _standardize(matrix: np.ndarray, names: Sequence[str]):
    if matrix.shape[1] == 0:
        return matrix, np.zeros(0), np.ones(0)
    center = matrix.mean(axis=0)
    scale = matrix.std(axis=0)
    for k, name in enumerate(names):
        if not scale[k] > 1e-12 * max(1.0, abs(center[k])):
            raise ConstantCovariateError(f"covariate {name!r} is constant and cannot be standardized")
    return (matrix - center) / scale, center, scale


@dataclass(frozen=True, eq=False)
class CompiledModel:
    """Frozen model: layout, standardized designs and per-contest index arrays.

    Immutable after construction; all evaluation methods are pure.
    """

    spec: ModelSpec
    layout: ParameterLayout
    players: tuple[str, ...]
    subjects: tuple[str, ...]
    player_covariate_names: tuple[str, ...]
    subject_covariate_names: tuple[str, ...]
    player_design: np.ndarray        # (N, K) standardized player covariates
    player_center: np.ndarray
    player_scale: np.ndarray
    subject_center: np.ndarray
    subject_scale: np.ndarray
    player1_idx: np.ndarray          # role i
    player0_idx: np.ndarray          # role j
    outcome: np.ndarray
    subject_idx: np.ndarray          # -1 where absent
    order: np.ndarray
    subject_design: np.ndarray       # (n_contests, K_subject) standardized
    fingerprint: str
    raw_player_covariates: Mapping[str, Mapping[str, float]] | None = None
    _slices: dict = field(default_factory=dict, repr=False)
    _groups: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._slices.update({b.name: b.slice for b in self.layout.blocks})
        # identical rows share one likelihood term weighted by their count
        if self.n_contests:
            key = np.column_stack([self.player1_idx, self.player0_idx, self.outcome,
                                   self.subject_idx, self.order, self.subject_design])
            uniq, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
            self._groups.update(
                i=self.player1_idx[first], j=self.player0_idx[first], y=self.outcome[first],
                s=self.subject_idx[first], order=self.order[first],
                xs=self.subject_design[first], w=counts.astype(float))

    # -- basic properties ---------------------------------------------------

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.layout.names

    @property
    def n_players(self) -> int:
        return len(self.players)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_contests(self) -> int:
        return len(self.outcome)

    def has(self, ext: Extension) -> bool:
        return self.spec.has(ext)

    def player_index(self, name: str) -> int:
        try:
            return self.players.index(name)
        except ValueError:
            raise UnknownPlayerError(f"unknown player {name!r}") from None

    def subject_index(self, name: str | None, required: bool) -> int:
        if name is None:
            if required:
                raise UnknownSubjectError("this model needs a subject id for every contest")
            return -1
        try:
            return self.subjects.index(name)
        except ValueError:
            if required:
                raise UnknownSubjectError(f"unknown subject {name!r}") from None
            return -1

    def standardize_covariates(self, covariates: Mapping[str, float] | None,
                               standardized: bool = False) -> np.ndarray:
        """Map raw subject covariate values onto the fitted standardized scale."""
        names = self.subject_covariate_names
        if not names:
            return np.zeros(0)
        covariates = covariates or {}
        missing = [k for k in names if k not in covariates]
        if missing:
            raise MissingCovariateError(f"missing covariates: {missing}")
        x = np.array([float(covariates[k]) for k in names])
        return x if standardized else (x - self.subject_center) / self.subject_scale

    # -- transforms -----------------------------------------------------------

    def constrain(self, draws: np.ndarray) -> np.ndarray:
        """Map unconstrained draws (``..., dim``) to the reporting scale."""
        out = np.array(draws, dtype=float, copy=True)
        sl = self._slices.get("U_std")
        if sl is not None:
            out[..., sl] = np.exp(out[..., sl])
        return out

    def unconstrain(self, values: np.ndarray) -> np.ndarray:
        out = np.array(values, dtype=float, copy=True)
        sl = self._slices.get("U_std")
        if sl is not None:
            out[..., sl] = np.log(out[..., sl])
        return out

    def player_abilities(self, theta) -> np.ndarray:
        """Baseline log-abilities (``X beta`` under the generalized model)."""
        theta = np.asarray(theta, dtype=float)
        if "beta" in self._slices:
            return theta[..., self._slices["beta"]] @ self.player_design.T
        return theta[..., self._slices["lambda"]]

    # -- composition ----------------------------------------------------------

    def _compose(self, theta, i_idx, j_idx, subj_idx, xs):
        """Effective log-abilities of both sides, without the order effect."""
        base = self.player_abilities(theta)
        a = base[i_idx]
        b = base[j_idx]
        extra = {}
        if "U_raw" in self._slices:
            u = math.exp(theta[self._slices["U_std"]][0])
            raw = theta[self._slices["U_raw"]].reshape(self.n_players, self.n_subjects)
            has_subject = subj_idx >= 0
            s = np.where(has_subject, subj_idx, 0)
            ui = np.where(has_subject, raw[i_idx, s], 0.0)
            uj = np.where(has_subject, raw[j_idx, s], 0.0)
            a = a + u * ui
            b = b + u * uj
            extra.update(u=u, ui=ui, uj=uj, s=s, has_subject=has_subject)
        if "S" in self._slices:
            smat = theta[self._slices["S"]].reshape(self.n_players, len(self.subject_covariate_names))
            a = a + np.einsum("nk,nk->n", xs, smat[i_idx])
            b = b + np.einsum("nk,nk->n", xs, smat[j_idx])
        return a, b, extra

    def _order_shift(self, theta, order):
        if "gamma" in self._slices:
            return order * theta[self._slices["gamma"]][0]
        return 0.0

    def outcome_probabilities(self, theta, i_idx, j_idx, subj_idx, xs, order) -> np.ndarray:
        """Probabilities per row, columns indexed by :class:`Outcome`.

        Column 0 is ``player0`` (role *j*) winning, column 1 is ``player1``
        (role *i*) winning and, for Davidson models, column 2 is a tie.
        """
        logp = self._outcome_logprobs(np.asarray(theta, dtype=float), i_idx, j_idx, subj_idx, xs, order)
        if self.spec.is_davidson:
            return np.exp(logp)
        # complements, so each pair sums to one exactly
        p = np.exp(logp[:, 1])
        return np.stack([1.0 - p, p], axis=1)

    def _outcome_logprobs(self, theta, i_idx, j_idx, subj_idx, xs, order):
        a, b, _ = self._compose(theta, i_idx, j_idx, subj_idx, xs)
        b = b + self._order_shift(theta, order)
        if self.spec.is_davidson:
            nu = theta[self._slices["nu"]][0]
            logits = np.stack([b, a, nu + 0.5 * (a + b)], axis=1)
            return logits - logsumexp(logits, axis=1, keepdims=True)
        d = a - b
        return np.stack([log_expit(-d), log_expit(d)], axis=1)

    # -- density ----------------------------------------------------------------

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"parameter vector has shape {theta.shape}, expected ({self.dim},)")
        return theta

    def pointwise_loglik(self, theta) -> np.ndarray:
        """Log probability of every observed outcome under ``theta``."""
        theta = self._check(theta)
        logp = self._outcome_logprobs(theta, self.player1_idx, self.player0_idx,
                                      self.subject_idx, self.subject_design, self.order)
        return logp[np.arange(self.n_contests), self.outcome]

    def log_prior(self, theta) -> float:
        return self._prior(self._check(theta), None)

    def _prior(self, theta, grad):
        spec = self.spec
        lp = 0.0
        for name, prior in (("lambda", spec.prior_lambda), ("nu", spec.prior_nu),
                            ("gamma", spec.prior_gamma), ("beta", spec.prior_beta),
                            ("S", spec.prior_S)):
            sl = self._slices.get(name)
            if sl is None:
                continue
            x = theta[sl]
            lp += float(np.sum(_normal_logpdf(x, prior.mean, prior.variance)))
            if grad is not None:
                grad[sl] -= (x - prior.mean) / prior.variance
        sl = self._slices.get("U_std")
        if sl is not None:
            eta = theta[sl][0]
            u = math.exp(eta)
            var = spec.prior_U_variance
            # half-normal on U_std plus log-Jacobian of U_std = exp(eta)
            lp += math.log(2.0) - 0.5 * (LOG_2PI + math.log(var)) - 0.5 * u * u / var + eta
            raw = theta[self._slices["U_raw"]]
            lp += float(-0.5 * raw.size * LOG_2PI - 0.5 * np.dot(raw, raw))
            if grad is not None:
                grad[sl] += 1.0 - u * u / var
                grad[self._slices["U_raw"]] -= raw
        return lp

    def logp_and_grad(self, theta) -> tuple[float, np.ndarray]:
        """Unnormalized log posterior and its gradient."""
        theta = self._check(theta)
        grad = np.zeros(self.dim)
        lp = self._prior(theta, grad)
        if self.n_contests:
            lp += self._likelihood(theta, grad)
        if not math.isfinite(lp):
            raise NonFiniteDensityError(f"log density is {lp}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError("gradient has non-finite entries")
        return lp, grad

    def _likelihood(self, theta, grad) -> float:
        g = self._groups
        i, j, y, xs, order, w = g["i"], g["j"], g["y"], g["xs"], g["order"], g["w"]
        a, b, extra = self._compose(theta, i, j, g["s"], xs)
        b = b + self._order_shift(theta, order)
        sl = self._slices
        n_players = self.n_players

        if self.spec.is_davidson:
            nu = theta[sl["nu"]][0]
            logits = np.stack([b, a, nu + 0.5 * (a + b)], axis=1)
            logp = logits - logsumexp(logits, axis=1, keepdims=True)
            rows = np.arange(len(y))
            ll = float(np.dot(w, logp[rows, y]))
            p = np.exp(logp)
            onehot = np.zeros_like(p)
            onehot[rows, y] = 1.0
            resid = (onehot - p) * w[:, None]
            ga = resid[:, 1] + 0.5 * resid[:, 2]
            gb = resid[:, 0] + 0.5 * resid[:, 2]
            grad[sl["nu"]] += resid[:, 2].sum()
        else:
            sign = np.where(y == Outcome.PLAYER1_WINS, 1.0, -1.0)
            sd = sign * (a - b)
            ll = float(np.dot(w, log_expit(sd)))
            ga = w * sign * expit(-sd)
            gb = -ga

        gbase = np.bincount(i, ga, n_players) + np.bincount(j, gb, n_players)
        if "beta" in sl:
            grad[sl["beta"]] += self.player_design.T @ gbase
        else:
            grad[sl["lambda"]] += gbase
        if "gamma" in sl:
            grad[sl["gamma"]] += np.dot(order, gb)
        if "U_raw" in sl:
            u, s, has = extra["u"], extra["s"], extra["has_subject"]
            n_sub = self.n_subjects
            wa = np.where(has, u * ga, 0.0)
            wb = np.where(has, u * gb, 0.0)
            grad[sl["U_raw"]] += (np.bincount(i * n_sub + s, wa, n_players * n_sub)
                                  + np.bincount(j * n_sub + s, wb, n_players * n_sub))
            grad[sl["U_std"]] += np.dot(wa, extra["ui"]) + np.dot(wb, extra["uj"])
        if "S" in sl:
            k_sub = xs.shape[1]
            gs = np.empty((n_players, k_sub))
            for k in range(k_sub):
                gs[:, k] = (np.bincount(i, ga * xs[:, k], n_players)
                            + np.bincount(j, gb * xs[:, k], n_players))
            grad[sl["S"]] += gs.ravel()
        return ll

    # -- persistence helpers ----------------------------------------------------

    def to_metadata(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "players": list(self.players),
            "subjects": list(self.subjects),
            "player_covariates": (
                {p: dict(v) for p, v in self.raw_player_covariates.items()}
                if self.raw_player_covariates else None
            ),
            "player_covariate_names": list(self.player_covariate_names),
            "subject_covariate_names": list(self.subject_covariate_names),
            "subject_center": self.subject_center.tolist(),
            "subject_scale": self.subject_scale.tolist(),
            "n_contests": self.n_contests,
            "fingerprint": self.fingerprint,
            "param_names": list(self.param_names),
        }

    @classmethod
    def from_metadata(cls, meta: Mapping) -> "CompiledModel":
        """Rebuild the data-free part of a model (no contests attached)."""
        dataset = ContestDataset(
            [], players=meta["players"], subjects=meta["subjects"],
            player_covariates=meta["player_covariates"],
            covariate_names=tuple(meta["subject_covariate_names"]),
        )
        return _compile(
            dataset, ModelSpec.from_dict(meta["spec"]), allow_empty=True,
            subject_center=np.array(meta["subject_center"], dtype=float),
            subject_scale=np.array(meta["subject_scale"], dtype=float),
            fingerprint=meta["fingerprint"],
        )


def build_model(dataset: ContestDataset, spec: ModelSpec, allow_empty: bool = False) -> CompiledModel:
    """Compile ``dataset`` under ``spec``.

    Covariates are standardized column-wise (mean 0, unit variance). Set
    ``allow_empty`` to compile a prior-only model with no contests.
    """
    return _compile(dataset, spec, allow_empty=allow_empty)


def _compile(dataset: ContestDataset, spec: ModelSpec, allow_empty=False,
             subject_center=None, subject_scale=None, fingerprint=None) -> CompiledModel:
    if not dataset.contests and not allow_empty:
        raise EmptyDatasetError("dataset has no contests")
    if not spec.is_davidson and dataset.n_ties:
        raise TieWithoutDavidsonError(
            f"{dataset.n_ties} tie rows present but the 'bt' base cannot model ties; "
            "use a davidson model or resolve ties (remove/random)")

    players = tuple(dataset.players)
    subjects = tuple(dataset.subjects)
    pidx = {p: n for n, p in enumerate(players)}
    sidx = {s: n for n, s in enumerate(subjects)}

    pnames: tuple[str, ...] = ()
    design = np.zeros((len(players), 0))
    pcenter, pscale = np.zeros(0), np.ones(0)
    if spec.has(Extension.GENERALIZED):
        pcov = dataset.player_covariates
        if not pcov:
            raise MissingColumnError("generalized models need player covariates")
        pnames = dataset.player_covariate_names
        if not pnames:
            raise MissingColumnError("generalized models need at least one player covariate")
        rows = []
        for p in players:
            if p not in pcov:
                raise MissingCovariateError(f"player {p!r} has no covariate values")
            if set(pcov[p]) != set(pnames):
                raise MissingCovariateError(f"player {p!r} covariates differ from {list(pnames)}")
            rows.append([float(pcov[p][k]) for k in pnames])
        design, pcenter, pscale = _standardize(np.array(rows, dtype=float), pnames)

    needs_subject = spec.has(Extension.RANDOM_EFFECTS) or spec.has(Extension.SUBJECT_PREDICTORS)
    if needs_subject and not subjects:
        raise MissingColumnError("random-effect and subject-predictor models need subject ids")

    snames: tuple[str, ...] = ()
    xs = np.zeros((len(dataset), 0))
    scenter, sscale = np.zeros(0), np.ones(0)
    if spec.has(Extension.SUBJECT_PREDICTORS):
        snames = dataset.covariate_names
        if not snames:
            raise MissingColumnError("subject-predictor models need subject covariates")
        raw = np.array([[float(c.covariates[k]) for k in snames] for c in dataset.contests],
                       dtype=float).reshape(len(dataset), len(snames))
        if subject_center is None:
            xs, scenter, sscale = _standardize(raw, snames)
        else:
            scenter, sscale = subject_center, subject_scale
            xs = (raw - scenter) / sscale

    n = len(dataset)
    i_idx = np.empty(n, dtype=np.intp)
    j_idx = np.empty(n, dtype=np.intp)
    s_idx = np.full(n, -1, dtype=np.intp)
    outcome = np.empty(n, dtype=np.intp)
    order = np.empty(n, dtype=float)
    for k, c in enumerate(dataset.contests):
        i_idx[k] = pidx[c.player1]
        j_idx[k] = pidx[c.player0]
        outcome[k] = int(c.outcome)
        order[k] = c.order
        if c.subject is not None:
            s_idx[k] = sidx[c.subject]
        elif needs_subject:
            raise UnknownSubjectError(f"row {k} has no subject id")

    layout = ParameterLayout.build(spec, players, subjects, pnames, snames)
    return CompiledModel(
        spec=spec, layout=layout, players=players, subjects=subjects,
        player_covariate_names=tuple(pnames), subject_covariate_names=tuple(snames),
        player_design=design, player_center=pcenter, player_scale=pscale,
        subject_center=scenter, subject_scale=sscale,
        player1_idx=i_idx, player0_idx=j_idx, outcome=outcome, subject_idx=s_idx,
        order=order, subject_design=xs,
        fingerprint=fingerprint or dataset.fingerprint(),
        raw_player_covariates=dataset.player_covariates if spec.has(Extension.GENERALIZED) else None,
    )


# ---------------------------------------------------------------------------
# functional API


def compose_ability(model: CompiledModel, theta, contest: Contest) -> tuple[float, float]:
    """Effective log-abilities ``(player1, player0)`` for one contest.

    Includes random effects and subject predictors but not the order effect.
    """
    theta = model._check(theta)
    needs_subject = model.has(Extension.RANDOM_EFFECTS) or model.has(Extension.SUBJECT_PREDICTORS)
    s = model.subject_index(contest.subject, required=needs_subject)
    xs = model.standardize_covariates(contest.covariates).reshape(1, -1)
    i = np.array([model.player_index(contest.player1)])
    j = np.array([model.player_index(contest.player0)])
    a, b, _ = model._compose(theta, i, j, np.array([s]), xs)
    return float(a[0]), float(b[0])


def log_posterior(model: CompiledModel, theta) -> float:
    theta = model._check(theta)
    lp = model.log_prior(theta)
    if model.n_contests:
        lp += float(np.sum(model.pointwise_loglik(theta)))
    if not math.isfinite(lp):
        raise NonFiniteDensityError(f"log density is {lp}")
    return lp


def grad_log_posterior(model: CompiledModel, theta) -> np.ndarray:
    return model.logp_and_grad(theta)[1]
