import numpy as np
import pytest

from pairbayes.model import ModelSpec, build_model
from pairbayes.simulate import simulate_contests

PIZZAS = ["Tombstone", "DiGiorno", "Freschetta", "Red Barron", "aKroger"]
TRUE_LAMBDA = dict(zip(PIZZAS, [-1.0, -0.5, 0.0, 0.5, 1.0]))

VARIANTS = [
    "bt", "davidson",
    "bt-ordereffect", "davidson-ordereffect",
    "bt-generalized", "davidson-generalized",
    "bt-U", "davidson-U",
    "bt-S", "davidson-S",
    "davidson-ordereffect-generalized-U",
    "bt-ordereffect-U-S",
    "davidson-ordereffect-generalized-U-S",
]


def small_dataset(model_string: str, n_contests: int = 60, seed: int = 0):
    """A small dataset carrying every column any variant could need."""
    rng = np.random.default_rng(seed)
    players = ["A", "B", "C", "D"]
    subjects = ["s1", "s2", "s3"]
    abilities = dict(zip(players, rng.normal(size=4)))
    covariates = {s: rng.normal(size=2) * 3 + 1 for s in subjects}
    player_cov = {p: {"size": float(rng.normal()), "age": float(rng.uniform(1, 9))} for p in players}
    nu = -0.5 if model_string.startswith("davidson") else None
    ds = simulate_contests(abilities, n_contests, rng, nu=nu, gamma=0.3, subjects=subjects,
                           covariates=covariates, player_covariates=player_cov)
    return ds


def small_model(model_string: str, **kw):
    return build_model(small_dataset(model_string, **kw), ModelSpec.from_string(model_string))


@pytest.fixture(params=VARIANTS)
def variant_model(request):
    return small_model(request.param)


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
