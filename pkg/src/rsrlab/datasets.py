"""Bundled graphs, synthetic fixtures and CSV dataset ingestion.

Datasets are CSV files with a header row. Column roles (response,
covariates, optional expected counts) are declared by the caller and
never inferred.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataFormatError, InvalidParameter
from .graph import AdjacencyGraph, read_edge_list


def data_path(name: str) -> Path:
    """Filesystem path of a file shipped in ``rsrlab/data``."""
    p = resources.files("rsrlab") / "data" / name
    if not p.is_file():
        raise FileNotFoundError(f"no bundled data file {name!r}")
    return Path(str(p))


def us48_graph() -> AdjacencyGraph:
    """Queen contiguity of the 48 contiguous US states, alphabetical order.

    Vertex names are two-letter postal abbreviations.
    """
    names = [row["abbr"] for row in _read_rows(data_path("us48_states.csv"))[1]]
    return read_edge_list(data_path("us48.edges"), names=names)


def surrogate_graph() -> AdjacencyGraph:
    """Synthetic connected planar graph on 194 vertices.

    Used for the Poisson study when no municipality graph is supplied.
    """
    return read_edge_list(data_path("surrogate194.edges"))


@dataclass(frozen=True)
class ColumnRoles:
    """Which CSV columns play which part in the model.

    Attributes
    ----------
    response : str
    covariates : tuple of str
    expected : str, optional
        Expected counts ``E_i`` on the raw scale; the model offset is
        their logarithm.
    """

    response: str
    covariates: tuple = ()
    expected: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnRoles":
        try:
            return cls(str(d["response"]), tuple(d.get("covariates", ())), d.get("expected"))
        except KeyError:
            raise InvalidParameter("column roles need a 'response' entry") from None

    def to_dict(self) -> dict:
        return {"response": self.response, "covariates": list(self.covariates), "expected": self.expected}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response, covariates and optional expected counts for n areas."""

    y: np.ndarray
    covariates: np.ndarray
    names: tuple
    expected: np.ndarray | None = None
    ids: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def log_offset(self):
        return None if self.expected is None else np.log(self.expected)


def _read_rows(path):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise DataFormatError(f"{path}: empty file")
            rows = list(reader)
            return list(reader.fieldnames), rows
    except csv.Error as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def read_dataset(path, roles: ColumnRoles, n_expected: int | None = None) -> Dataset:
    """Load a CSV dataset.

    Raises
    ------
    DataFormatError
        Missing columns, empty or non-numeric cells (reported with their
        line number), non-positive expected counts, or a row count that
        differs from `n_expected`.
    """
    path = Path(path)
    header, rows = _read_rows(path)
    wanted = [roles.response, *roles.covariates] + ([roles.expected] if roles.expected else [])
    missing = [c for c in wanted if c not in header]
    if missing:
        raise DataFormatError(f"{path}: columns not found: {', '.join(missing)}")
    vals = np.empty((len(rows), len(wanted)))
    for r, row in enumerate(rows):
        line = r + 2  # header is line 1
        for c, col in enumerate(wanted):
            cell = (row.get(col) or "").strip()
            if cell == "" or cell.upper() in ("NA", "NAN"):
                raise DataFormatError(f"{path}:{line}: missing value in column {col!r}")
            try:
                vals[r, c] = float(cell)
            except ValueError:
                raise DataFormatError(f"{path}:{line}: non-numeric value {cell!r} in column {col!r}") from None
    if n_expected is not None and len(rows) != n_expected:
        raise DataFormatError(f"{path}: {len(rows)} data rows but the graph has {n_expected} vertices")
    k = len(roles.covariates)
    expected = None
    if roles.expected:
        expected = vals[:, 1 + k]
        bad = np.flatnonzero(expected <= 0)
        if bad.size:
            raise DataFormatError(f"{path}:{bad[0] + 2}: expected counts must be positive")
    ids = tuple(row[header[0]] for row in rows)
    return Dataset(vals[:, 0], vals[:, 1:1 + k], tuple(roles.covariates), expected, ids)


SAT_ROLES = ColumnRoles("verbal", ("pct_taking",))
SLOVENIA_ROLES = ColumnRoles("observed", ("ses",), "expected")
