"""Rank five frozen pizzas from simulated taste tests.

Simulates 2000 pairwise taste tests between five pizzas with known
log-abilities, fits a Bradley-Terry model, checks convergence and prints
the parameter, probability and rank tables.

    python demos/pizza_ranking.py
"""

import numpy as np

from pairbayes import ModelSpec, SamplerConfig, build_model, convergence_report, sample
from pairbayes import simulate_contests, summary_text
from pairbayes.posterior import ability_draws

TRUE_ABILITY = {"Tombstone": -1.0, "DiGiorno": -0.5, "Freschetta": 0.0,
                "Red Barron": 0.5, "aKroger": 1.0}


def main():
    rng = np.random.default_rng(2024)
    contests = simulate_contests(TRUE_ABILITY, 2000, rng)
    model = build_model(contests, ModelSpec.from_string("bt"))
    print(f"{len(contests)} contests, {model.dim} parameters")

    fit = sample(model, SamplerConfig(chains=4, warmup=1000, draws=2000, seed=1))
    print(convergence_report(fit).text())
    print(summary_text(fit))

    # abilities are only identified up to a common shift; compare differences
    lam = ability_draws(fit)
    base = model.players.index("Freschetta")
    print("Ability relative to Freschetta (posterior mean vs truth):")
    for k, name in enumerate(model.players):
        est = (lam[:, k] - lam[:, base]).mean()
        print(f"  {name:<11} {est:6.2f}  {TRUE_ABILITY[name]:6.2f}")


if __name__ == "__main__":
    main()
