"""Shared data model: designs, supports, sparse coefficient vectors, randomness.

Coordinates are 0-based throughout. The error variance is fixed at one, and
log-likelihoods omit the additive constant ``-(n/2) log(2 pi)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateDesign, DimensionError, DomainError, ParseError


class DesignMatrix:
    """An ``n x p`` regression matrix with cached column norms and Gram matrix.

    The array is copied and frozen, so instances can be shared freely.
    ``x_norm`` is the largest column Euclidean norm, the scale used by every
    design index and by the admissible range of the slab parameter.
    """

    def __init__(self, entries):
        X = np.array(entries, dtype=float, copy=True)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise DimensionError(f"design must be a non-empty 2-D array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ParseError("design contains non-finite entries")
        X.setflags(write=False)
        self.entries = X
        self.n, self.p = X.shape
        norms = np.sqrt(np.einsum("ij,ij->j", X, X))
        norms.setflags(write=False)
        self.col_norms = norms
        self.x_norm = float(norms.max())
        if self.x_norm == 0.0:
            raise DegenerateDesign("all-zero design matrix")

    @cached_property
    def gram(self) -> np.ndarray:
        G = self.entries.T @ self.entries
        G.setflags(write=False)
        return G

    def columns(self, indices) -> np.ndarray:
        return self.entries[:, list(indices)]

    def gram_block(self, indices) -> np.ndarray:
        idx = np.asarray(list(indices), dtype=int)
        return self.gram[np.ix_(idx, idx)]

    @cached_property
    def identity_scale(self) -> float | None:
        """``c`` if the design equals ``c * I``, else ``None``."""
        X = self.entries
        if self.n != self.p:
            return None
        d = np.diag(X)
        if not np.all(d == d[0]) or d[0] == 0:
            return None
        if np.count_nonzero(X - np.diag(d)) != 0:
            return None
        return float(d[0])

    def permuted(self, perm) -> "DesignMatrix":
        return DesignMatrix(self.entries[:, list(perm)])

    def __repr__(self):
        return f"DesignMatrix(n={self.n}, p={self.p}, x_norm={self.x_norm:.6g})"


@dataclass(frozen=True, order=True)
class Model:
    """A support set, stored as a strictly increasing tuple of column indices."""

    indices: tuple = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DomainError(f"model indices must be strictly increasing: {idx}")
        if idx and idx[0] < 0:
            raise DomainError(f"negative model index in {idx}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, indices: Iterable[int]) -> "Model":
        return cls(tuple(sorted(set(int(i) for i in indices))))

    @property
    def s(self) -> int:
        return len(self.indices)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, j):
        return j in self.indices

    def check(self, p: int) -> "Model":
        if self.indices and self.indices[-1] >= p:
            raise DimensionError(f"model {self.indices} out of range for p={p}")
        return self

    def __str__(self):
        return "{" + ",".join(str(i) for i in self.indices) + "}"


@dataclass(frozen=True)
class SparseCoef:
    """A vector in R^p stored by its support and the nonzero values on it."""

    model: Model
    values: np.ndarray
    p: int

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if vals.shape[0] != self.model.s:
            raise DimensionError(
                f"{vals.shape[0]} values for a support of size {self.model.s}")
        self.model.check(self.p)
        if np.any(vals == 0.0):
            raise DomainError("stored coefficient values must be nonzero")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zero(cls, p: int) -> "SparseCoef":
        return cls(Model(), np.zeros(0), p)

    @classmethod
    def from_dense(cls, beta) -> "SparseCoef":
        beta = np.asarray(beta, dtype=float).reshape(-1)
        idx = np.flatnonzero(beta)
        return cls(Model(tuple(idx)), beta[idx], beta.shape[0])

    @property
    def s(self) -> int:
        return self.model.s

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.p)
        if self.model.s:
            out[list(self.model.indices)] = self.values
        return out


@dataclass(frozen=True)
class Observation:
    y: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float, copy=True).reshape(-1)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass
class RngHandle:
    """A reproducible random stream identified by ``(seed, stream)``.

    ``stream`` may be an integer or a tuple of integers; ``child(k)`` derives an
    independent sub-stream. The generator is created lazily and owned by this
    handle, so one handle should be consumed by one caller at a time.
    """

    seed: int
    stream: int | tuple = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False,
                                             compare=False)

    @property
    def key(self) -> tuple:
        return self.stream if isinstance(self.stream, tuple) else (int(self.stream),)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1),
                                        spawn_key=self.key)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def child(self, k: int) -> "RngHandle":
        return RngHandle(self.seed, self.key + (int(k),))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngHandle):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _as_y(y) -> np.ndarray:
    return y.y if isinstance(y, Observation) else np.asarray(y, dtype=float).reshape(-1)


def _check(X: DesignMatrix, y: np.ndarray, beta: SparseCoef | None = None):
    if y.shape[0] != X.n:
        raise DimensionError(f"observation length {y.shape[0]} != n={X.n}")
    if beta is not None and beta.p != X.p:
        raise DimensionError(f"coefficient dimension {beta.p} != p={X.p}")


def residual(X: DesignMatrix, y, beta: SparseCoef) -> np.ndarray:
    """``y - X beta`` using only the active columns."""
    y = _as_y(y)
    _check(X, y, beta)
    if beta.s == 0:
        return y.copy()
    return y - X.columns(beta.model.indices) @ beta.values


def log_likelihood(X: DesignMatrix, y, beta: SparseCoef) -> float:
    """``-||y - X beta||^2 / 2`` (Gaussian constant omitted)."""
    r = residual(X, y, beta)
    return -0.5 * float(r @ r)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_design(path, format: str | None = None) -> DesignMatrix:
    """Read a numeric CSV/TSV table (rows = observations, columns = covariates).

    A first row whose first cell is non-numeric is treated as a header.
    """
    path = Path(path)
    if format is None:
        format = "tsv" if path.suffix.lower() in (".tsv", ".tab") else "csv"
    if format not in ("csv", "tsv"):
        raise ParseError(f"unknown format {format!r}")
    delim = "\t" if format == "tsv" else ","
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delim) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty table")
    if not _is_number(rows[0][0].strip()):
        rows = rows[1:]
    if not rows:
        raise ParseError(f"{path}: header only")
    width = len(rows[0])
    data = []
    for lineno, row in enumerate(rows, 1):
        if len(row) != width:
            raise ParseError(f"{path}: ragged row {lineno} ({len(row)} cells, expected {width})")
        try:
            data.append([float(c) for c in row])
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric cell in row {lineno}: {exc}") from None
    return DesignMatrix(np.array(data))


def load_vector(path) -> np.ndarray:
    """Read a single numeric column (optional header) as a response vector."""
    return load_design(path).entries[:, 0].copy()


def as_design(X) -> DesignMatrix:
    return X if isinstance(X, DesignMatrix) else DesignMatrix(X)


def subsets_count(p: int, s_max: int) -> int:
    from math import comb
    return sum(comb(p, k) for k in range(0, min(s_max, p) + 1))


def support_array(models: Sequence[Model], width: int) -> np.ndarray:
    out = np.full((len(models), width), -1, dtype=int)
    for i, m in enumerate(models):
        out[i, :m.s] = m.indices
    return out
