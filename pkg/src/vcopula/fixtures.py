"""Loaders for labelled 12-attribute tables and the bundled reference data.

Tables are plain CSV. Square tables have a leading ``attribute`` column and
a header row of the 12 attribute labels in canonical order; marginal count
files have the label header and a single row of integers.
"""

import csv
from importlib import resources
from pathlib import Path

import numpy as np

from .model import ATTRIBUTE_LABELS, N_ATTRIBUTES, ModelParams

__all__ = [
    "TableFormatError",
    "read_marginals",
    "write_marginals",
    "read_square_table",
    "write_square_table",
    "published_marginals",
    "published_pair_counts",
    "published_sigma",
    "published_params",
    "load_sigma_params",
]


class TableFormatError(ValueError):
    pass


def _open(source):
    if hasattr(source, "read"):
        return source
    return open(source, newline="", encoding="utf-8")


def read_marginals(source) -> np.ndarray:
    with _open(source) as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) != 2:
        raise TableFormatError("marginal table needs a header and exactly one data row")
    if tuple(h.strip() for h in rows[0]) != ATTRIBUTE_LABELS:
        raise TableFormatError(f"header must be {','.join(ATTRIBUTE_LABELS)}")
    try:
        counts = np.array([int(c) for c in rows[1]], dtype=np.int64)
    except ValueError as exc:
        raise TableFormatError(f"line 2: {exc}") from None
    if len(counts) != N_ATTRIBUTES or (counts < 0).any():
        raise TableFormatError("line 2: expected 12 nonnegative integers")
    return counts


def write_marginals(path, counts) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ATTRIBUTE_LABELS)
        w.writerow([int(c) for c in counts])


def read_square_table(source, dtype=float, symmetric=True) -> np.ndarray:
    """Read a labelled 12 x 12 table; checks labels and (optionally) symmetry."""
    with _open(source) as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or tuple(h.strip() for h in rows[0][1:]) != ATTRIBUTE_LABELS:
        raise TableFormatError("header must be: attribute," + ",".join(ATTRIBUTE_LABELS))
    if len(rows) != N_ATTRIBUTES + 1:
        raise TableFormatError(f"expected 12 data rows, found {len(rows) - 1}")
    out = np.zeros((N_ATTRIBUTES, N_ATTRIBUTES), dtype=dtype)
    for i, row in enumerate(rows[1:]):
        lineno = i + 2
        if row[0].strip() != ATTRIBUTE_LABELS[i]:
            raise TableFormatError(f"line {lineno}: expected row label {ATTRIBUTE_LABELS[i]}")
        if len(row) != N_ATTRIBUTES + 1:
            raise TableFormatError(f"line {lineno}: expected 12 cells")
        try:
            out[i] = [dtype(c) for c in row[1:]]
        except ValueError as exc:
            raise TableFormatError(f"line {lineno}: {exc}") from None
    if symmetric and not np.array_equal(out, out.T):
        bad = np.argwhere(out != out.T)
        i, j = bad[0]
        raise TableFormatError(
            f"table is not symmetric at ({ATTRIBUTE_LABELS[i]}, {ATTRIBUTE_LABELS[j]})"
        )
    return out


def write_square_table(path, table, fmt="{}") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("attribute",) + ATTRIBUTE_LABELS)
        for label, row in zip(ATTRIBUTE_LABELS, table):
            w.writerow([label] + [fmt.format(v) for v in row])


def _data_file(name):
    return resources.files("vcopula").joinpath("data", name)


def published_marginals() -> np.ndarray:
    """Deal counts per attribute for the 9,255-deal reference population."""
    with _data_file("published_marginals.csv").open("r", encoding="utf-8") as fh:
        return read_marginals(fh)


def published_pair_counts() -> np.ndarray:
    """Ordered distinct-deal pair counts per attribute pair."""
    with _data_file("published_pair_counts.csv").open("r", encoding="utf-8") as fh:
        return read_square_table(fh, dtype=int)


def published_sigma() -> np.ndarray:
    """Published estimate of the latent attribute covariance (4 decimals)."""
    with _data_file("published_sigma.csv").open("r", encoding="utf-8") as fh:
        return read_square_table(fh, dtype=float)


def published_params(rank=None) -> ModelParams:
    """Reference parameters: alpha0 = 0 and the published Sigma."""
    return ModelParams.from_sigma(published_sigma(), alpha0=0.0, rank=rank)


def load_sigma_params(path, alpha0=0.0, rank=None) -> ModelParams:
    return ModelParams.from_sigma(read_square_table(Path(path)), alpha0=alpha0, rank=rank)
