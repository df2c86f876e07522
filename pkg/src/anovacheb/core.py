"""Domain types: node sets, ANOVA term sets, grouped frequency index sets.

Terms are tuples of 1-based, strictly increasing variable indices; the empty
tuple is the constant term.  Frequencies inside a term's box are enumerated
lexicographically (C order) over ``{1, ..., N_u - 1} ** |u|``.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from anovacheb.errors import (
    DomainError,
    FormatError,
    InvalidThresholdError,
    ResourceError,
    ShapeError,
    UnknownTermError,
    UsageError,
)

Term = Tuple[int, ...]

DEFAULT_MAX_COEFFICIENTS = 10**7


class Density(str, Enum):
    """Sampling density of a node set."""

    CHEBYSHEV = "cheb"
    UNIFORM = "uniform"

    @classmethod
    def parse(cls, value) -> "Density":
        if isinstance(value, Density):
            return value
        key = str(value).lower()
        aliases = {"chebyshev": "cheb", "chebyshevproduct": "cheb", "uni": "uniform"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise UsageError(f"unknown density {value!r} (expected 'cheb' or 'uniform')") from None


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NodeSet:
    """M sample locations in [-1, 1]^d.

    ``theta`` is the padding applied by :func:`anovacheb.solver.scale_nodes`;
    it is ``None`` for node sets that were never scaled.
    """

    nodes: np.ndarray
    density: Density = Density.CHEBYSHEV
    theta: Optional[float] = None

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ShapeError(f"nodes must have shape (M, d) with M, d >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError("nodes contain non-finite coordinates")
        bad = np.flatnonzero(np.any(np.abs(x) > 1.0, axis=1))
        if bad.size:
            raise DomainError(f"node {bad[0]} lies outside [-1, 1]^d: {x[bad[0]].tolist()}")
        density = Density.parse(self.density)
        if self.theta is not None:
            theta = float(self.theta)
            if not 0.0 < theta < 1.0:
                raise UsageError(f"padding theta must lie in (0, 1), got {theta}")
            if np.any(np.abs(x) > 1.0 - theta):
                raise DomainError("padded node set has coordinates outside [-1+theta, 1-theta]")
            object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "nodes", _readonly(x))
        object.__setattr__(self, "density", density)

    @property
    def M(self) -> int:
        return self.nodes.shape[0]

    @property
    def d(self) -> int:
        return self.nodes.shape[1]

    @property
    def padded(self) -> bool:
        return self.theta is not None

    def __len__(self):
        return self.M


def _check_term(u: Iterable[int], d: int) -> Term:
    t = tuple(int(s) for s in u)
    if any(b <= a for a, b in zip(t, t[1:])):
        raise UsageError(f"term {t} is not strictly increasing")
    if t and (t[0] < 1 or t[-1] > d):
        raise UsageError(f"term {t} has indices outside 1..{d}")
    return t


@dataclass(frozen=True)
class AnovaTermSet:
    """Ordered set of ANOVA terms, always containing the empty term.

    ``closure_added`` lists terms that were inserted only to make the set
    downward closed (see :func:`anovacheb.anova.detect_active_set`).
    """

    d: int
    terms: Tuple[Term, ...]
    closure_added: Tuple[Term, ...] = ()

    def __post_init__(self):
        d = int(self.d)
        if d < 1:
            raise UsageError(f"dimension must be >= 1, got {d}")
        terms = [_check_term(u, d) for u in self.terms]
        if () not in terms:
            terms.insert(0, ())
        if len(set(terms)) != len(terms):
            raise UsageError("duplicate terms in term set")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "terms", tuple(terms))
        object.__setattr__(self, "closure_added", tuple(_check_term(u, d) for u in self.closure_added))
        object.__setattr__(self, "_pos", {u: i for i, u in enumerate(terms)})

    def __len__(self):
        return len(self.terms)

    def __iter__(self) -> Iterator[Term]:
        return iter(self.terms)

    def __contains__(self, u) -> bool:
        return tuple(u) in self._pos

    def index(self, u) -> int:
        try:
            return self._pos[tuple(u)]
        except KeyError:
            raise UnknownTermError(f"term {tuple(u)} is not in the term set") from None

    @property
    def max_order(self) -> int:
        return max(len(u) for u in self.terms)

    def is_downward_closed(self) -> bool:
        for u in self.terms:
            for r in range(len(u)):
                for v in itertools.combinations(u, r):
                    if v not in self._pos:
                        return False
        return True

    def issubset(self, other: "AnovaTermSet") -> bool:
        return all(u in other for u in self.terms)

    def to_list(self):
        return [list(u) for u in self.terms]


def build_superposition_term_set(d: int, ds: int) -> AnovaTermSet:
    """All subsets of {1..d} with at most ``ds`` elements, ordered by size then lexicographically."""
    if not 0 <= ds <= d:
        raise InvalidThresholdError(f"superposition threshold must satisfy 0 <= ds <= d, got ds={ds}, d={d}")
    terms = [u for r in range(ds + 1) for u in itertools.combinations(range(1, d + 1), r)]
    return AnovaTermSet(d, tuple(terms))


class GroupedIndexSet:
    """Disjoint union of per-term frequency boxes.

    Parameters
    ----------
    term_set : AnovaTermSet
    bandlimits : mapping term -> N_u
        ``N_u >= 2`` for every non-empty term.  Missing entries are an error.
    """

    def __init__(self, term_set: AnovaTermSet, bandlimits: Mapping[Term, int]):
        self.term_set = term_set
        bl: Dict[Term, int] = {}
        for u in term_set:
            if not u:
                bl[u] = 1
                continue
            if u not in bandlimits:
                raise UsageError(f"no bandlimit given for term {u}")
            n = int(bandlimits[u])
            if n < 2:
                raise UsageError(f"bandlimit for term {u} must be >= 2, got {n}")
            bl[u] = n
        self.bandlimits = bl
        self._sizes = np.array([(bl[u] - 1) ** len(u) if u else 1 for u in term_set], dtype=np.int64)
        self._offsets = np.concatenate([[0], np.cumsum(self._sizes)])

    @classmethod
    def with_order_bandlimits(cls, term_set: AnovaTermSet, n_by_order: Sequence[int],
                              overrides: Optional[Mapping[Term, int]] = None) -> "GroupedIndexSet":
        """Bandlimits ``N_u = n_by_order[|u| - 1]`` with optional per-term overrides."""
        n_by_order = [int(n) for n in n_by_order]
        if len(n_by_order) < term_set.max_order:
            raise UsageError(
                f"need a bandlimit for every order up to {term_set.max_order}, got {n_by_order}")
        bl = {u: n_by_order[len(u) - 1] for u in term_set if u}
        if overrides:
            for u, n in overrides.items():
                u = tuple(u)
                if u not in term_set:
                    raise UnknownTermError(f"override for term {u} not in the term set")
                bl[u] = int(n)
        return cls(term_set, bl)

    @property
    def d(self) -> int:
        return self.term_set.d

    @property
    def terms(self) -> Tuple[Term, ...]:
        return self.term_set.terms

    def cardinality(self) -> int:
        return int(self._offsets[-1])

    __len__ = cardinality

    def block_size(self, u) -> int:
        return int(self._sizes[self.term_set.index(u)])

    def block_shape(self, u) -> Tuple[int, ...]:
        u = tuple(u)
        self.term_set.index(u)
        return (self.bandlimits[u] - 1,) * len(u)

    def block_slice(self, u) -> slice:
        i = self.term_set.index(u)
        return slice(int(self._offsets[i]), int(self._offsets[i + 1]))

    def enumerate(self) -> Iterator[Tuple[Term, Tuple[int, ...]]]:
        """Yield ``(u, k_u)`` in canonical order."""
        for u in self.term_set:
            if not u:
                yield u, ()
                continue
            yield from ((u, k) for k in itertools.product(range(1, self.bandlimits[u]), repeat=len(u)))

    def frequencies(self) -> np.ndarray:
        """Full frequency vectors, shape (|I|, d), in canonical order."""
        out = np.zeros((self.cardinality(), self.d), dtype=np.int64)
        for row, (u, k) in enumerate(self.enumerate()):
            for s, ks in zip(u, k):
                out[row, s - 1] = ks
        return out

    def contains(self, k: Sequence[int]) -> bool:
        k = tuple(int(v) for v in k)
        if len(k) != self.d or any(v < 0 for v in k):
            return False
        u = tuple(s + 1 for s, v in enumerate(k) if v != 0)
        if u not in self.term_set:
            return False
        return all(k[s - 1] <= self.bandlimits[u] - 1 for s in u)

    def check_size(self, max_coefficients: int = DEFAULT_MAX_COEFFICIENTS) -> None:
        if self.cardinality() > max_coefficients:
            raise ResourceError(
                f"index set has {self.cardinality()} coefficients, above the cap of {max_coefficients}")

    def __eq__(self, other):
        return (isinstance(other, GroupedIndexSet) and self.terms == other.terms
                and self.bandlimits == other.bandlimits)

    def __repr__(self):
        return f"GroupedIndexSet(d={self.d}, terms={len(self.terms)}, cardinality={self.cardinality()})"


def cardinality(index_set: GroupedIndexSet) -> int:
    return index_set.cardinality()


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    """Real coefficients aligned to a :class:`GroupedIndexSet`."""

    index_set: GroupedIndexSet
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.shape[0] != self.index_set.cardinality():
            raise ShapeError(
                f"coefficient vector has length {v.shape[0]}, index set needs {self.index_set.cardinality()}")
        object.__setattr__(self, "values", _readonly(v))

    @classmethod
    def zeros(cls, index_set: GroupedIndexSet) -> "CoefficientVector":
        return cls(index_set, np.zeros(index_set.cardinality()))

    def block(self, u) -> np.ndarray:
        """The coefficients of term ``u`` reshaped to its box."""
        u = tuple(u)
        return self.values[self.index_set.block_slice(u)].reshape(self.index_set.block_shape(u))

    @property
    def constant(self) -> float:
        return float(self.values[self.index_set.block_slice(())][0])

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class Dataset:
    nodes: NodeSet
    values: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.values, dtype=np.float64).ravel()
        if y.shape[0] != self.nodes.M:
            raise ShapeError(f"{y.shape[0]} values for {self.nodes.M} nodes")
        if not np.all(np.isfinite(y)):
            raise DomainError("values contain NaN or infinity")
        object.__setattr__(self, "values", _readonly(y))

    @property
    def M(self) -> int:
        return self.nodes.M

    @property
    def d(self) -> int:
        return self.nodes.d


def _split(line: str, delimiter: Optional[str]):
    if delimiter is None:
        return line.split()
    return next(csv.reader([line], delimiter=delimiter))


def _read_table(source):
    if isinstance(source, (str, os.PathLike)):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(io.StringIO(text)) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise FormatError("dataset is empty")
    first = lines[0][1]
    delimiter = next((c for c in (",", ";", "\t") if c in first), None)
    rows, lineno = [], []
    for k, (no, ln) in enumerate(lines):
        fields = [f.strip() for f in _split(ln, delimiter)]
        try:
            rows.append([float(f) for f in fields])
        except ValueError:
            if k == 0:
                continue
            raise FormatError(f"line {no}: non-numeric field in {ln!r}") from None
        lineno.append(no)
    if not rows:
        raise FormatError("dataset has a header but no data rows")
    width = len(rows[0])
    for no, r in zip(lineno, rows):
        if len(r) != width:
            raise FormatError(f"line {no}: expected {width} columns, found {len(r)}")
    return np.array(rows, dtype=np.float64), lineno


def _check_coordinates(x, lineno):
    bad = np.flatnonzero(~np.all(np.abs(x) <= 1.0, axis=1))
    if bad.size:
        raise DomainError(f"line {lineno[bad[0]]}: coordinates outside [-1, 1]: {x[bad[0]].tolist()}")


def read_dataset(source, density="cheb", d: Optional[int] = None) -> Dataset:
    """Read a delimiter-separated table: ``d`` coordinate columns then one value column.

    The delimiter (comma, semicolon, tab or whitespace) is detected from the
    first data line; a non-numeric first line is taken as a header.
    """
    table, lineno = _read_table(source)
    width = table.shape[1]
    if width < 2:
        raise FormatError("dataset needs at least one coordinate column and one value column")
    if d is not None and width != d + 1:
        raise FormatError(f"expected {d + 1} columns for d={d}, found {width}")
    x, y = table[:, :-1], table[:, -1]
    _check_coordinates(x, lineno)
    return Dataset(NodeSet(x, Density.parse(density)), y)


def read_points(source, d: int):
    """Read query points; a trailing value column (``d + 1`` columns) is returned separately.

    Returns
    -------
    x : (M, d) ndarray
    y : (M,) ndarray or None
    """
    table, lineno = _read_table(source)
    width = table.shape[1]
    if width not in (d, d + 1):
        raise FormatError(f"expected {d} or {d + 1} columns for d={d}, found {width}")
    x = table[:, :d]
    _check_coordinates(x, lineno)
    return x, (table[:, d] if width == d + 1 else None)


def write_dataset(data: Dataset, path, delimiter: str = ",") -> None:
    d = data.d
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow([f"x{s}" for s in range(1, d + 1)] + ["y"])
        for xr, yv in zip(data.nodes.nodes, data.values):
            w.writerow([repr(float(v)) for v in xr] + [repr(float(yv))])


def term_count(d: int, ds: int) -> int:
    return sum(math.comb(d, r) for r in range(ds + 1))
