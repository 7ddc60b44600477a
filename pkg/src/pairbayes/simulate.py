"""Synthetic paired-comparison data with known ground truth."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .model import Contest, ContestDataset, Outcome, davidson_probabilities


def simulate_contests(
    abilities: Mapping[str, float],
    n_contests: int,
    rng: np.random.Generator,
    nu: float | None = None,
    gamma: float = 0.0,
    subjects: Sequence[str] | None = None,
    subject_offsets: Mapping[tuple[str, str], float] | None = None,
    covariates: Mapping[str, Sequence[float]] | None = None,
    subject_slopes: Mapping[tuple[str, str], float] | None = None,
    player_covariates: Mapping[str, Mapping[str, float]] | None = None,
) -> ContestDataset:
    """Draw contests between uniformly chosen pairs.

    Parameters
    ----------
    abilities
        True log-ability per player.
    nu
        Davidson tie parameter; ``None`` simulates Bradley-Terry (no ties).
    gamma
        Order effect added to ``player0`` on every row.
    subjects
        Subject ids assigned round-robin to rows.
    subject_offsets
        ``(player, subject) -> U`` added to the player's ability for that subject.
    covariates
        ``subject -> values`` for subject covariates ``x0, x1, ...`` (raw scale).
    subject_slopes
        ``(player, covariate) -> slope`` applied to the raw covariate values.
    """
    players = list(abilities)
    lam = np.array([abilities[p] for p in players], dtype=float)
    contests = []
    for n in range(n_contests):
        a, b = rng.choice(len(players), size=2, replace=False)
        p1, p0 = players[a], players[b]
        subject = subjects[n % len(subjects)] if subjects else None
        li, lj = lam[a], lam[b]
        cov = None
        if subject is not None and subject_offsets:
            li += subject_offsets.get((p1, subject), 0.0)
            lj += subject_offsets.get((p0, subject), 0.0)
        if subject is not None and covariates:
            values = covariates[subject]
            cov = {f"x{k}": float(v) for k, v in enumerate(values)}
            if subject_slopes:
                for name, v in cov.items():
                    li += subject_slopes.get((p1, name), 0.0) * v
                    lj += subject_slopes.get((p0, name), 0.0) * v
        if nu is None:
            p_i = 1.0 / (1.0 + np.exp(-(li - lj - gamma)))
            outcome = Outcome.PLAYER1_WINS if rng.uniform() < p_i else Outcome.PLAYER0_WINS
        else:
            p_i, p_j, p_t = davidson_probabilities(li, lj, nu, gamma)
            u = rng.uniform()
            if u < p_i:
                outcome = Outcome.PLAYER1_WINS
            elif u < p_i + p_j:
                outcome = Outcome.PLAYER0_WINS
            else:
                outcome = Outcome.TIE
        contests.append(Contest(p0, p1, outcome, subject=subject, covariates=cov))
    return ContestDataset(contests, players=players, player_covariates=player_covariates)
