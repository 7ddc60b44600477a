import io
import json

import numpy as np
import pytest

from pairbayes import cli
from pairbayes.errors import (
    AllDivergentError, BadResultValueError, CorruptArchiveError, DataFingerprintMismatchError,
    EmptyAfterTieRemovalError, MissingColumnError, TieWithoutDavidsonError, VersionMismatchError,
)
from pairbayes.io import IngestSpec, load_dataset, load_fit, rebind, save_fit
from pairbayes.model import ModelSpec, Outcome, build_model
from pairbayes.posterior import summarize, summary_text
from pairbayes.sampler import SamplerConfig, sample


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


CONTESTS = """player0,player1,y,subject,age
A,B,1,s1,20
B,C,0,s2,35
C,A,1,s1,20
A,C,0,s3,41
B,A,1,s2,35
C,B,1,s3,41
A,B,0,s1,20
C,A,0,s2,35
"""


@pytest.fixture
def contests_csv(tmp_path):
    return write(tmp_path / "contests.csv", CONTESTS)


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main(argv, out=out, err=err)
    return code, out.getvalue(), err.getvalue()


# -- ingestion --------------------------------------------------------------------

def test_remove_ties(tmp_path):
    path = write(tmp_path / "t.csv", "player0,player1,y\nA,B,0\nA,B,1\nA,B,2\n")
    assert len(load_dataset(IngestSpec(path, solve_ties="remove"))) == 2
    assert load_dataset(IngestSpec(path)).n_ties == 1


def test_random_ties_deterministic(tmp_path):
    path = write(tmp_path / "t.csv", "player0,player1,y\n" + "A,B,2\n" * 40)
    a = load_dataset(IngestSpec(path, solve_ties="random", seed=3))
    b = load_dataset(IngestSpec(path, solve_ties="random", seed=3))
    assert a.fingerprint() == b.fingerprint()
    outcomes = {c.outcome for c in a.contests}
    assert outcomes == {Outcome.PLAYER0_WINS, Outcome.PLAYER1_WINS}


def test_ties_without_davidson_name_count(tmp_path):
    path = write(tmp_path / "t.csv", "player0,player1,y\n" + "A,B,2\n" * 5 + "A,B,1\n")
    ds = load_dataset(IngestSpec(path))
    with pytest.raises(TieWithoutDavidsonError, match="5 tie rows"):
        build_model(ds, ModelSpec.from_string("bt"))


def test_ingest_errors(tmp_path):
    bad = write(tmp_path / "bad.csv", "player0,player1,y\nA,B,3\n")
    with pytest.raises(BadResultValueError, match="line 2"):
        load_dataset(IngestSpec(bad))
    with pytest.raises(MissingColumnError):
        load_dataset(IngestSpec(bad, result="winner"))
    ties = write(tmp_path / "ties.csv", "player0,player1,y\nA,B,2\n")
    with pytest.raises(EmptyAfterTieRemovalError):
        load_dataset(IngestSpec(ties, solve_ties="remove"))


def test_scores_and_columns(tmp_path):
    path = write(tmp_path / "s.csv", "home,away,h,a,judge,first,temp\n"
                                     "A,B,3,1,j1,1,20.5\nB,C,2,2,j2,0,18\nC,A,0,4,j1,1,22\n")
    ds = load_dataset(IngestSpec(path, player0="home", player1="away", score0="h", score1="a",
                                 subject="judge", order="first", covariates=["temp"]))
    assert [c.outcome for c in ds.contests] == [Outcome.PLAYER0_WINS, Outcome.TIE, Outcome.PLAYER1_WINS]
    assert [c.order for c in ds.contests] == [1, 0, 1]
    assert ds.subjects == ["j1", "j2"]
    assert ds.contests[0].covariates == {"temp": 20.5}


def test_player_covariates_file(tmp_path, contests_csv):
    pc = write(tmp_path / "players.csv", "player,price\nA,3\nB,5\nC,4\n")
    ds = load_dataset(IngestSpec(contests_csv, player_covariates=pc))
    model = build_model(ds, ModelSpec.from_string("bt-generalized"))
    assert model.layout.names == ("beta[price]",)


# -- archive ------------------------------------------------------------------------

@pytest.fixture
def small_fit(contests_csv):
    ingest = IngestSpec(contests_csv, subject="subject", covariates=["age"])
    ds = load_dataset(ingest)
    model = build_model(ds, ModelSpec.from_string("bt-ordereffect-U"))
    return ingest, ds, sample(model, SamplerConfig(chains=2, warmup=150, draws=60, seed=4))


def test_archive_round_trip(tmp_path, small_fit):
    ingest, _, fit = small_fit
    path = tmp_path / "fit.bpc"
    save_fit(fit, path, ingest)
    back = load_fit(path)
    for name in ("draws", "divergent", "treedepth", "accept_stat", "energy", "n_leapfrog",
                 "step_size", "inv_mass"):
        np.testing.assert_array_equal(getattr(back, name), getattr(fit, name))
    assert back.names == fit.names
    assert back.config == SamplerConfig(**fit.config.to_dict())
    assert summarize(back).rows == summarize(fit).rows
    assert summary_text(back) == summary_text(fit)


def test_archive_truncated_and_version(tmp_path, small_fit):
    ingest, _, fit = small_fit
    path = tmp_path / "fit.bpc"
    save_fit(fit, path, ingest)
    blob = path.read_bytes()
    (tmp_path / "short.bpc").write_bytes(blob[:-1])
    with pytest.raises(CorruptArchiveError):
        load_fit(tmp_path / "short.bpc")
    (tmp_path / "v2.bpc").write_bytes(b"BPCFIT2\0" + blob[8:])
    with pytest.raises(VersionMismatchError):
        load_fit(tmp_path / "v2.bpc")
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 1
    (tmp_path / "flip.bpc").write_bytes(bytes(flipped))
    with pytest.raises(CorruptArchiveError):
        load_fit(tmp_path / "flip.bpc")


def test_fingerprint_mismatch(tmp_path, small_fit):
    ingest, ds, fit = small_fit
    assert rebind(fit, ds).n_contests == len(ds)
    edited = write(tmp_path / "edited.csv", CONTESTS.replace("A,B,1,s1", "A,B,0,s1", 1))
    other = load_dataset(IngestSpec(edited, subject="subject", covariates=["age"]))
    with pytest.raises(DataFingerprintMismatchError):
        rebind(fit, other)


# -- CLI ------------------------------------------------------------------------------

@pytest.fixture
def fitted_archive(tmp_path, contests_csv):
    out = str(tmp_path / "m.bpc")
    code, stdout, err = run(["fit", contests_csv, "-o", out, "--model", "bt-U", "--subject", "subject",
                             "--chains", "2", "--warmup", "150", "--draws", "80", "--seed", "1"])
    assert code == 0, err
    assert "wrote" in stdout
    return out


def test_cli_subcommands(fitted_archive, tmp_path):
    code, out, _ = run(["summary", fitted_archive])
    assert code == 0
    assert "Table: Estimated posterior ranks" in out
    code, out, _ = run(["ranks", fitted_archive, "--format", "csv"])
    assert code == 0 and out.startswith("Parameter,MedianRank,MeanRank,StdRank\n")
    code, out, _ = run(["probabilities", fitted_archive, "--format", "json"])
    assert code == 0 and len(json.loads(out)["rows"]) == 3
    code, out, _ = run(["diagnose", fitted_archive])
    assert code == 0 and out.startswith("Checking sampler transitions treedepth.")
    code, out, _ = run(["waic", fitted_archive])
    assert code == 0 and "Computed from 160 by 8 log-likelihood matrix" in out
    code, out, _ = run(["loo", fitted_archive, "--format", "json"])
    assert code == 0 and json.loads(out)["n_obs"] == 8
    code, out, _ = run(["plotdata", fitted_archive, "--parameters", "lambda[A]"])
    assert code == 0 and len(out.strip().splitlines()) == 1 + 160
    queries = write(tmp_path / "q.csv", "player0,player1,subject\nA,B,s1\nB,C,\n")
    code, out, _ = run(["predict", fitted_archive, queries, "--subject", "subject", "--format", "csv"])
    assert code == 0 and len(out.strip().splitlines()) == 3


def test_cli_compare(fitted_archive, tmp_path, contests_csv):
    other = str(tmp_path / "bt.bpc")
    assert run(["fit", contests_csv, "-o", other, "--subject", "subject", "--chains", "1",
                "--warmup", "150", "--draws", "80"])[0] == 0
    code, out, _ = run(["compare", fitted_archive, other])
    assert code == 0 and out.count("bt") >= 2
    code, _, err = run(["compare", fitted_archive, other, "--criterion", "aic"])
    assert code == 1 and err.startswith("error[UNSUPPORTED_CRITERION]:")


def test_cli_summary_deterministic(tmp_path, contests_csv):
    outputs = []
    for k in range(2):
        path = str(tmp_path / f"r{k}.bpc")
        run(["fit", contests_csv, "-o", path, "--chains", "1", "--warmup", "150", "--draws", "50"])
        outputs.append(run(["summary", path])[1])
    assert outputs[0] == outputs[1]


def test_cli_exit_codes(tmp_path, contests_csv, fitted_archive, monkeypatch):
    code, _, err = run(["fit", contests_csv])
    assert code == 1 and err.count("\n") == 1 and err.startswith("error[USAGE]")
    code, _, err = run(["fit", contests_csv, "-o", str(tmp_path / "x"), "--model", "bt-Q"])
    assert code == 2 and "valid extensions" in err
    code, _, err = run(["fit", contests_csv, "-o", str(tmp_path / "x"), "--result", "nope"])
    assert code == 2 and err.startswith("error[MISSING_COLUMN]")
    blob = open(fitted_archive, "rb").read()
    short = tmp_path / "short.bpc"
    short.write_bytes(blob[:-1])
    code, _, err = run(["summary", str(short)])
    assert code == 4 and err.startswith("error[CORRUPT_ARCHIVE]")
    edited = write(tmp_path / "edited.csv", CONTESTS.replace("A,B,1,s1", "A,B,0,s1", 1))
    code, _, err = run(["waic", fitted_archive, "--data", edited])
    assert code == 4 and "fingerprint" in err

    def boom(model, config):
        raise AllDivergentError("every transition diverged")

    monkeypatch.setattr(cli, "sample", boom)
    code, _, err = run(["fit", contests_csv, "-o", str(tmp_path / "y")])
    assert code == 3 and err.startswith("error[")
