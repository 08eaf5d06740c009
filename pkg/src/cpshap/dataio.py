"""Tabular dataset loading and fingerprinting.

CSV ingestion is deliberately rigid: a header row is required, features
must be numeric unless a column is declared categorical (in which case it
is one-hot expanded with category values sorted for a deterministic
column order), and rows with missing cells are dropped with the count
recorded rather than imputed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataFormatError, EmptyDataError
from .validation import check_matrix, check_same_rows, check_vector

__all__ = ["Dataset", "dataset_from_arrays", "load_csv", "one_hot_expand"]


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus target, with a content fingerprint.

    ``extras`` carries auxiliary per-row arrays (synthetic generators use
    it for latent quantities); ``meta`` records provenance details such as
    dropped-row counts and generator parameters.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    fingerprint: str
    meta: Mapping[str, object] = field(default_factory=dict)
    extras: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


def _fingerprint_arrays(X: np.ndarray, y: np.ndarray, names: Sequence[str]) -> str:
    h = hashlib.sha256()
    h.update(repr((X.shape, tuple(names))).encode())
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    return h.hexdigest()


def dataset_from_arrays(X, y, feature_names=None, meta=None, extras=None) -> Dataset:
    X = check_matrix(X, "X")
    y = check_vector(y, "y")
    check_same_rows(X, y)
    if feature_names is None:
        names = tuple(f"x{j + 1}" for j in range(X.shape[1]))
    else:
        names = tuple(str(n) for n in feature_names)
        if len(names) != X.shape[1]:
            raise DataFormatError(
                f"{len(names)} feature names for {X.shape[1]} columns"
            )
    return Dataset(
        X=X,
        y=y,
        feature_names=names,
        fingerprint=_fingerprint_arrays(X, y, names),
        meta=dict(meta or {}),
        extras=dict(extras or {}),
    )


def one_hot_expand(column: pd.Series, name: str) -> pd.DataFrame:
    """Expand one categorical column into 0/1 columns named ``name=value``.

    Category values are stringified and sorted, so the emitted column
    order does not depend on row order.
    """
    as_str = column.astype(str)
    levels = sorted(as_str.dropna().unique())
    out = {}
    for level in levels:
        out[f"{name}={level}"] = (as_str == level).astype(np.float64)
    frame = pd.DataFrame(out, index=column.index)
    # Preserve missingness so row dropping still sees it.
    frame[column.isna()] = np.nan
    return frame


def load_csv(
    path,
    target: str,
    categoricals: Sequence[str] = (),
    feature_columns: Sequence[str] | None = None,
) -> Dataset:
    """Load a headered CSV into a :class:`Dataset`.

    ``target`` names the label column; ``categoricals`` lists feature
    columns to one-hot expand.  All other feature columns must parse as
    numbers.  Rows containing any missing cell (in the used columns) are
    dropped; the count lands in ``meta["dropped_rows"]``.
    """
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise DataFormatError(f"no such file: {path}") from None
    except Exception as exc:  # malformed CSV
        raise DataFormatError(f"could not parse {path}: {exc}") from None
    if frame.shape[0] == 0:
        raise EmptyDataError(f"{path} has no data rows")
    if target not in frame.columns:
        raise DataFormatError(f"target column {target!r} not found in {path}")
    cats = [str(c) for c in categoricals]
    for c in cats:
        if c not in frame.columns:
            raise DataFormatError(f"categorical column {c!r} not found in {path}")
        if c == target:
            raise DataFormatError("the target column cannot be categorical")
    if feature_columns is None:
        feature_columns = [c for c in frame.columns if c != target]
    else:
        feature_columns = [str(c) for c in feature_columns]
        for c in feature_columns:
            if c not in frame.columns:
                raise DataFormatError(f"feature column {c!r} not found in {path}")
        if target in feature_columns:
            raise DataFormatError("the target column cannot also be a feature")
    if not feature_columns:
        raise DataFormatError("no feature columns left after excluding the target")

    pieces = []
    for c in feature_columns:
        col = frame[c]
        if c in cats:
            pieces.append(one_hot_expand(col, c))
        else:
            numeric = pd.to_numeric(col, errors="coerce")
            fresh_nan = numeric.isna() & col.notna()
            if fresh_nan.any():
                raise DataFormatError(
                    f"column {c!r} has non-numeric values; declare it categorical "
                    f"if that is intended"
                )
            pieces.append(numeric.astype(np.float64).rename(c).to_frame())
    features = pd.concat(pieces, axis=1)

    y_raw = pd.to_numeric(frame[target], errors="coerce")
    if (y_raw.isna() & frame[target].notna()).any():
        raise DataFormatError(f"target column {target!r} has non-numeric values")

    keep = features.notna().all(axis=1) & y_raw.notna()
    dropped = int((~keep).sum())
    features = features.loc[keep]
    y = y_raw.loc[keep]
    if features.shape[0] == 0:
        raise EmptyDataError(f"{path}: all rows were dropped for missing values")

    return dataset_from_arrays(
        features.to_numpy(dtype=np.float64),
        y.to_numpy(dtype=np.float64),
        feature_names=list(features.columns),
        meta={
            "source": str(path),
            "target": target,
            "dropped_rows": dropped,
            "categoricals": list(cats),
        },
    )
