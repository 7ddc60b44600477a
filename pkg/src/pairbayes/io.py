"""Dataset ingestion and fit archives.

Archive layout (all integers little-endian)::

    b"BPCFIT1\\0" | u64 metadata length | UTF-8 JSON metadata
                 | u64 payload length  | float64 payload | sha256 of all preceding bytes
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ArchiveError, BadResultValueError, CorruptArchiveError, DataError,
    DataFingerprintMismatchError, EmptyAfterTieRemovalError, MissingColumnError,
    VersionMismatchError,
)
from .model import CompiledModel, Contest, ContestDataset, ModelSpec, Outcome, build_model
from .sampler import PosteriorFit, SamplerConfig

MAGIC = b"BPCFIT1\0"
MAGIC_PREFIX = b"BPCFIT"
FORMAT_VERSION = 1


class TieStrategy(str, enum.Enum):
    NONE = "none"
    RANDOM = "random"
    REMOVE = "remove"


@dataclass
class IngestSpec:
    """How to read contests from a delimited text file.

    Either ``result`` (values 0, 1, 2 meaning player0 won, player1 won, tie)
    or both ``score0`` and ``score1`` must be given. ``player_covariates``
    names a second file with one row per player (column ``player_column``)
    holding the predictors for generalized models.
    """

    path: str
    player0: str = "player0"
    player1: str = "player1"
    result: str | None = "y"
    subject: str | None = None
    order: str | None = None
    covariates: Sequence[str] = ()
    score0: str | None = None
    score1: str | None = None
    solve_ties: TieStrategy | str = TieStrategy.NONE
    seed: int = 0
    delimiter: str = ","
    player_covariates: str | None = None
    player_column: str = "player"

    def __post_init__(self):
        self.solve_ties = TieStrategy(self.solve_ties)
        self.covariates = tuple(self.covariates)
        if self.score0 or self.score1:
            if not (self.score0 and self.score1):
                raise MissingColumnError("score-based input needs both score0 and score1 columns")
            self.result = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solve_ties"] = self.solve_ties.value
        d["covariates"] = list(self.covariates)
        return d

    @classmethod
    def from_dict(cls, d) -> "IngestSpec":
        return cls(**d)


def _read_rows(path, delimiter) -> tuple[list[str], list[dict]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh, delimiter=delimiter)
            rows = list(reader)
            header = reader.fieldnames or []
    except FileNotFoundError:
        raise DataError(f"cannot read {path}: no such file") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not valid UTF-8: {exc}") from None
    return [h.strip() for h in header], rows


def _require(header, names, path):
    missing = [n for n in names if n and n not in header]
    if missing:
        raise MissingColumnError(f"{path}: missing column(s) {missing}; found {header}")


def _number(value, what, line):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise DataError(f"line {line}: {what} value {value!r} is not a number") from None


def _outcome(row, spec: IngestSpec, line) -> Outcome:
    if spec.result is not None:
        raw = (row[spec.result] or "").strip()
        try:
            value = float(raw)
        except ValueError:
            value = None
        if value not in (0.0, 1.0, 2.0):
            raise BadResultValueError(f"line {line}: result {raw!r} is not 0, 1 or 2")
        return Outcome(int(value))
    s0 = _number(row[spec.score0], spec.score0, line)
    s1 = _number(row[spec.score1], spec.score1, line)
    if s1 > s0:
        return Outcome.PLAYER1_WINS
    if s0 > s1:
        return Outcome.PLAYER0_WINS
    return Outcome.TIE


def load_player_covariates(path, player_column="player", delimiter=","):
    header, rows = _read_rows(path, delimiter)
    _require(header, [player_column], path)
    names = [h for h in header if h != player_column]
    if not names:
        raise MissingColumnError(f"{path}: no covariate columns besides {player_column!r}")
    out = {}
    for line, row in enumerate(rows, start=2):
        out[row[player_column].strip()] = {k: _number(row[k], k, line) for k in names}
    return out


def load_dataset(spec: IngestSpec) -> ContestDataset:
    """Read contests, resolving ties as ``spec.solve_ties`` says.

    ``remove`` drops tie rows, ``random`` replaces each tie by a fair seeded
    coin flip between the two players and ``none`` keeps them.
    """
    header, rows = _read_rows(spec.path, spec.delimiter)
    needed = [spec.player0, spec.player1, spec.result, spec.subject, spec.order,
              spec.score0, spec.score1, *spec.covariates]
    _require(header, needed, spec.path)

    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    contests = []
    for line, row in enumerate(rows, start=2):
        outcome = _outcome(row, spec, line)
        if outcome is Outcome.TIE:
            if spec.solve_ties is TieStrategy.REMOVE:
                continue
            if spec.solve_ties is TieStrategy.RANDOM:
                outcome = Outcome(int(rng.integers(0, 2)))
        order = 1
        if spec.order:
            o = _number(row[spec.order], spec.order, line)
            if o not in (0.0, 1.0):
                raise DataError(f"line {line}: order indicator must be 0 or 1, got {row[spec.order]!r}")
            order = int(o)
        subject = row[spec.subject].strip() if spec.subject else None
        covariates = {k: _number(row[k], k, line) for k in spec.covariates} or None
        try:
            contests.append(Contest(row[spec.player0].strip(), row[spec.player1].strip(), outcome,
                                    subject=subject or None, order=order, covariates=covariates))
        except DataError as exc:
            raise type(exc)(f"line {line}: {exc}") from None
    if not contests and rows and spec.solve_ties is TieStrategy.REMOVE:
        raise EmptyAfterTieRemovalError("no contests left after removing ties")
    pcov = None
    if spec.player_covariates:
        pcov = load_player_covariates(spec.player_covariates, spec.player_column, spec.delimiter)
    return ContestDataset(contests, player_covariates=pcov)


def rebind(fit: PosteriorFit, dataset: ContestDataset) -> CompiledModel:
    """Recompile the fitted model on ``dataset`` after checking its fingerprint."""
    if dataset.fingerprint() != fit.model.fingerprint:
        raise DataFingerprintMismatchError(
            "the data differ from the data the fit was made on (fingerprint mismatch)")
    return build_model(dataset, fit.model.spec)


# -- archive ------------------------------------------------------------------

_ARRAYS = ("draws", "divergent", "treedepth", "accept_stat", "energy", "n_leapfrog",
           "step_size", "inv_mass")
_INT_ARRAYS = {"treedepth", "n_leapfrog"}


def _payload(fit: PosteriorFit) -> tuple[bytes, dict]:
    shapes, parts = {}, []
    for name in _ARRAYS:
        a = np.asarray(getattr(fit, name))
        shapes[name] = list(a.shape)
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts), shapes


def save_fit(fit: PosteriorFit, path, ingest: IngestSpec | None = None) -> None:
    """Write ``fit`` atomically (temporary file then rename)."""
    payload, shapes = _payload(fit)
    meta = {
        "format_version": FORMAT_VERSION,
        "model": fit.model.to_metadata(),
        "config": fit.config.to_dict(),
        "shapes": shapes,
        "ingest": ingest.to_dict() if ingest else fit.metadata.get("ingest"),
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = b"".join([MAGIC, struct.pack("<Q", len(meta_bytes)), meta_bytes,
                     struct.pack("<Q", len(payload)), payload])
    blob = body + hashlib.sha256(body).digest()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_fit(path) -> PosteriorFit:
    """Read an archive written by :func:`save_fit`.

    Raises
    ------
    VersionMismatchError
        For archives of another format version.
    CorruptArchiveError
        For truncated, altered or unreadable files.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ArchiveError(f"cannot read archive {path}: {exc.strerror}") from None
    if blob[:len(MAGIC_PREFIX)] != MAGIC_PREFIX:
        raise CorruptArchiveError(f"{path} is not a fit archive")
    if blob[:len(MAGIC)] != MAGIC:
        raise VersionMismatchError(f"{path} has archive version {blob[6:7]!r}, expected 1")
    if len(blob) < len(MAGIC) + 16 + 32:
        raise CorruptArchiveError(f"{path} is truncated")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptArchiveError(f"{path} failed its integrity check (truncated or modified)")
    try:
        pos = len(MAGIC)
        (meta_len,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        meta = json.loads(body[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (payload_len,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        payload = body[pos:pos + payload_len]
        if pos + payload_len != len(body):
            raise ValueError("length fields disagree with file size")
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptArchiveError(f"{path}: {exc}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path} has format version {meta.get('format_version')}, expected {FORMAT_VERSION}")

    flat = np.frombuffer(payload, dtype="<f8")
    arrays, offset = {}, 0
    for name in _ARRAYS:
        shape = tuple(meta["shapes"][name])
        size = int(np.prod(shape))
        a = flat[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size
        if name == "divergent":
            a = a.astype(bool)
        elif name in _INT_ARRAYS:
            a = a.astype(np.int64)
        arrays[name] = a
    if offset != len(flat):
        raise CorruptArchiveError(f"{path}: payload size does not match recorded shapes")

    model = CompiledModel.from_metadata(meta["model"])
    fit = PosteriorFit(model=model, config=SamplerConfig(**meta["config"]), **arrays)
    fit.metadata["ingest"] = meta.get("ingest")
    return fit
