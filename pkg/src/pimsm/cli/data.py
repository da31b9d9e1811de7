"""Dataset ingestion: per-sequence CSV files plus a JSON manifest."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..signalgen import LabeledSequenceSet, _standardize


def _read_sequence(path: Path) -> np.ndarray:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    out = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        line = i + 2  # 1-based, after the header
        if len(row) != len(header):
            raise DataError(f"{path}: line {line} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: line {line}, column {header[j]!r}: non-numeric value {cell!r}") from None
    if not np.all(np.isfinite(out)):
        raise DataError(f"{path}: non-finite values")
    return out


def load_csv_dataset(path, standardize: bool = True) -> LabeledSequenceSet:
    """Read a directory written by :meth:`LabeledSequenceSet.to_csv_dir` (or laid out the same way).

    ``manifest.json`` must give ``files`` (or all ``*.csv`` files are used in
    sorted order), ``acquisition_step`` and ``labels`` (may be null).
    Sequences are z-scored per channel unless ``standardize`` is false.
    """
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"{path}: missing manifest.json")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{mpath}: invalid JSON ({exc})") from None
    for key in ("acquisition_step", "labels"):
        if key not in manifest:
            raise DataError(f"{mpath}: missing field {key!r}")
    files = manifest.get("files") or sorted(p.name for p in path.glob("*.csv"))
    if not files:
        raise DataError(f"{path}: no sequence files")
    seqs = []
    for name in files:
        f = path / name
        if not f.is_file():
            raise DataError(f"{mpath}: listed file {name!r} not found")
        seqs.append(_read_sequence(f))
    shapes = {s.shape for s in seqs}
    if len(shapes) != 1:
        raise DataError(f"{path}: sequences have differing shapes {sorted(shapes)}")
    x = np.stack(seqs)
    if standardize:
        x = _standardize(x, axis=1)
    labels = manifest["labels"]
    try:
        step = float(manifest["acquisition_step"])
    except (TypeError, ValueError):
        raise DataError(f"{mpath}: field 'acquisition_step' must be a number") from None
    if labels is not None:
        labels = np.asarray(labels)
        if len(labels) != len(x):
            raise DataError(f"{mpath}: field 'labels' has {len(labels)} entries for {len(x)} sequences")
        if labels.ndim == 1:
            if not np.all(np.equal(np.mod(labels, 1), 0)) or np.any(labels < 0):
                raise DataError(f"{mpath}: class labels must be nonnegative integers")
            labels = labels.astype(int)
    try:
        return LabeledSequenceSet(x, labels, step, manifest.get("generator") or {})
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def split_indices(n: int, fractions=(0.7, 0.15, 0.15), seed: int = 0) -> tuple[np.ndarray, ...]:
    """Seeded random partition into train/validation/test index arrays."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return perm[:a], perm[a:b], perm[b:]
