"""Dataset files, run configuration, and atomic output writing.

Datasets are JSON-lines: a header line {format_version, D, ordered,
section_name} followed by one line per sequence {id, steps, loss_mask}.
Files ending in .gz are compressed transparently.
"""
from __future__ import annotations

import gzip
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import AllZeroMass, ParseError, SchemaVersionMismatch
from .simplex import SimplexSeries, normalize

log = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1


def _open(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t")
    return open(path, mode)


@dataclass
class IngestResult:
    sequences: list
    dropped_rows: int
    section_name: str
    ordered: bool
    dim: int


def write_dataset(path, seqs, section_name: str = "") -> None:
    """Writes a dataset atomically (temp file + rename)."""
    if not seqs:
        raise ValueError("cannot write an empty dataset")
    dim = seqs[0].steps.shape[1]
    ordered = seqs[0].ordered
    for s in seqs:
        if s.steps.shape[1] != dim or s.ordered != ordered:
            raise ValueError("all sequences must share D and orderedness")
    header = {
        "format_version": DATASET_FORMAT_VERSION,
        "D": dim,
        "ordered": ordered,
        "section_name": section_name,
    }

    def emit(fh):
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for s in seqs:
            row = {
                "id": s.id,
                "steps": [[float(x) for x in step] for step in s.steps],
                "loss_mask": [bool(b) for b in s.loss_mask],
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    atomic_write_text(path, emit)


def ingest(path) -> IngestResult:
    """Reads a dataset file; rows are normalized, and rows whose total mass
    is zero anywhere are dropped and counted."""
    with _open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty dataset file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header: {exc}", line=1) from exc
    if not isinstance(header, dict) or "format_version" not in header:
        raise ParseError("header must be an object with format_version", line=1)
    if header["format_version"] != DATASET_FORMAT_VERSION:
        raise SchemaVersionMismatch(
            f"dataset format {header['format_version']} "
            f"(supported: {DATASET_FORMAT_VERSION})"
        )
    for key in ("D", "ordered", "section_name"):
        if key not in header:
            raise ParseError(f"header missing {key!r}", line=1)
    dim = int(header["D"])
    ordered = bool(header["ordered"])

    sequences = []
    dropped = 0
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            row = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad row: {exc}", line=lineno) from exc
        try:
            steps = np.asarray(row["steps"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad steps: {exc}", line=lineno) from exc
        if steps.ndim != 2 or steps.shape[1] != dim:
            raise ParseError(
                f"steps must be (T, {dim}), got {steps.shape}", line=lineno
            )
        if "id" not in row:
            raise ParseError("row missing id", line=lineno)
        mask = row.get("loss_mask")
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (len(steps) - 1,):
                raise ParseError(
                    f"loss_mask must have length {len(steps) - 1}", line=lineno
                )
        try:
            steps = np.array([normalize(step) for step in steps])
        except AllZeroMass:
            dropped += 1
            continue
        sequences.append(SimplexSeries(str(row["id"]), ordered, steps, mask))
    if dropped:
        log.warning("dropped %d rows with no usable mass from %s", dropped, path)
    return IngestResult(
        sequences=sequences,
        dropped_rows=dropped,
        section_name=str(header["section_name"]),
        ordered=ordered,
        dim=dim,
    )


def atomic_write_text(path, emit) -> None:
    """Writes via a same-directory temp file and rename; `emit` receives the
    open text handle."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        if path.endswith(".gz"):
            os.close(fd)
            with gzip.open(tmp, "wt") as fh:
                emit(fh)
        else:
            with os.fdopen(fd, "w") as fh:
                emit(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload) -> None:
    atomic_write_text(
        path, lambda fh: fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    )


# ------------------------------------------------------------- run config


_RUN_CONFIG_FIELDS = {
    "train_path": str,
    "val_path": str,
    "test_path": str,
    "method": str,
    "variant": str,
    "feature_mode": str,
    "iters": int,
    "batch_size": int,
    "lr": float,
    "warmup": int,
    "weight_decay": float,
    "seeds": list,
    "context_len": int,
    "horizon": int,
    "max_examples": int,
    "out_dir": str,
}


@dataclass
class RunConfig:
    """Declarative run specification; unknown keys and wrong types are
    rejected before any work starts."""

    values: dict = field(default_factory=dict)

    @staticmethod
    def load(path) -> "RunConfig":
        with _open(path, "r") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad config: {exc}", line=exc.lineno) from exc
        if not isinstance(raw, dict):
            raise ParseError("config must be a JSON object", line=1)
        for key, value in raw.items():
            if key not in _RUN_CONFIG_FIELDS:
                raise ParseError(f"unknown config key {key!r}", line=1)
            expected = _RUN_CONFIG_FIELDS[key]
            if expected is float and isinstance(value, int):
                value = float(value)
            if not isinstance(value, expected):
                raise ParseError(
                    f"config key {key!r} must be {expected.__name__}", line=1
                )
        return RunConfig(dict(raw))

    def get(self, key, default=None):
        return self.values.get(key, default)
