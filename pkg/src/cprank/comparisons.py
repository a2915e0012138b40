"""One-bit comparison data: rating matrices, comparison triples and their storage.

Two relations are kept per dataset:

* item comparisons ``(u, k, l)``: user ``u`` prefers item ``k`` over item ``l``;
* user comparisons ``(m, i, j)``: user ``i`` is more inclined than user ``j``
  toward item ``m``.

Both are held as ``(n, 3)`` integer arrays in canonical (lexicographic) order,
so two sets compare equal iff they hold the same triples.
"""
from __future__ import annotations

import graphlib
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np

__all__ = [
    "RatingMatrix",
    "ItemComparison",
    "UserComparison",
    "ComparisonSet",
    "ComparisonError",
    "CycleError",
    "extract_comparisons",
    "transitive_closure",
    "store_comparisons",
    "load_comparisons",
]


class ComparisonError(ValueError):
    """Malformed or inconsistent comparison data."""


class CycleError(ComparisonError):
    def __init__(self, kind: str, group: int, cycle: list[int]):
        self.kind = kind
        self.group = group
        self.cycle = cycle
        who = "user" if kind == "I" else "item"
        chain = " > ".join(str(c) for c in cycle)
        super().__init__(f"cycle in comparisons of {who} {group}: {chain}")


class ItemComparison(NamedTuple):
    user: int
    preferred: int
    other: int


class UserComparison(NamedTuple):
    item: int
    stronger: int
    weaker: int


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Sparse observed ratings on a dense 0-based index space.

    ``scale`` bounds the ratings (inclusive) when given; synthetic real-valued
    data uses ``None``. ``user_ids``/``item_ids`` map dense indices back to the
    original identifiers when the matrix came from a file.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    scale: tuple[float, float] | None = None
    user_ids: np.ndarray | None = field(default=None, repr=False)
    item_ids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64).ravel()
        items = np.asarray(self.items, dtype=np.int64).ravel()
        ratings = np.asarray(self.ratings, dtype=np.float64).ravel()
        if not (len(users) == len(items) == len(ratings)):
            raise ValueError("users, items and ratings must have equal length")
        if self.num_users < 0 or self.num_items < 0:
            raise ValueError("matrix dimensions must be non-negative")
        if len(users):
            if users.min() < 0 or users.max() >= self.num_users:
                raise ValueError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise ValueError("item index out of range")
        if not np.all(np.isfinite(ratings)):
            raise ValueError("ratings must be finite")
        if self.scale is not None:
            lo, hi = self.scale
            if len(ratings) and (ratings.min() < lo or ratings.max() > hi):
                raise ValueError(f"rating outside scale [{lo}, {hi}]")
        flat = users * max(self.num_items, 1) + items
        if len(np.unique(flat)) != len(flat):
            raise ValueError("duplicate (user, item) entry")
        object.__setattr__(self, "users", _frozen(users))
        object.__setattr__(self, "items", _frozen(items))
        object.__setattr__(self, "ratings", _frozen(ratings))

    @classmethod
    def from_entries(cls, num_users: int, num_items: int,
                     entries: Iterable[tuple[int, int, float]], scale=None) -> RatingMatrix:
        entries = list(entries)
        if entries:
            u, i, r = zip(*entries)
        else:
            u, i, r = (), (), ()
        return cls(num_users, num_items, np.array(u, dtype=np.int64),
                   np.array(i, dtype=np.int64), np.array(r, dtype=float), scale)

    @classmethod
    def from_dense(cls, matrix, mask=None, scale=None) -> RatingMatrix:
        """Build from a dense array; ``mask`` (or non-NaN cells) marks observed entries."""
        matrix = np.asarray(matrix, dtype=float)
        if mask is None:
            mask = ~np.isnan(matrix)
        users, items = np.nonzero(mask)
        return cls(matrix.shape[0], matrix.shape[1], users, items, matrix[users, items], scale)

    def __len__(self) -> int:
        return len(self.ratings)

    @property
    def shape(self) -> tuple[int, int]:
        return self.num_users, self.num_items

    @property
    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()))

    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[self.users, self.items] = True
        return m

    def to_dense(self, fill: float = np.nan) -> np.ndarray:
        out = np.full(self.shape, fill, dtype=float)
        out[self.users, self.items] = self.ratings
        return out

    def __eq__(self, other):
        if not isinstance(other, RatingMatrix):
            return NotImplemented
        if self.shape != other.shape or len(self) != len(other):
            return False
        a = np.lexsort((self.items, self.users))
        b = np.lexsort((other.items, other.users))
        return (np.array_equal(self.users[a], other.users[b])
                and np.array_equal(self.items[a], other.items[b])
                and np.array_equal(self.ratings[a], other.ratings[b]))


def _canonical(triples, name: str) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        arr = np.empty((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ComparisonError(f"{name} must be an (n, 3) array of triples")
    order = np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0]))
    return _frozen(np.ascontiguousarray(arr[order]))


@dataclass(frozen=True, eq=False)
class ComparisonSet:
    """Item-item comparisons per user and user-user comparisons per item.

    ``item_comparisons`` rows are ``(user, preferred, other)`` and
    ``user_comparisons`` rows are ``(item, stronger, weaker)``.
    """

    num_users: int
    num_items: int
    item_comparisons: np.ndarray = field(default_factory=lambda: np.empty((0, 3), dtype=np.int64))
    user_comparisons: np.ndarray = field(default_factory=lambda: np.empty((0, 3), dtype=np.int64))

    def __post_init__(self):
        ic = _canonical(self.item_comparisons, "item_comparisons")
        uc = _canonical(self.user_comparisons, "user_comparisons")
        self._check(ic, self.num_users, self.num_items, "item")
        self._check(uc, self.num_items, self.num_users, "user")
        object.__setattr__(self, "item_comparisons", ic)
        object.__setattr__(self, "user_comparisons", uc)

    @staticmethod
    def _check(t: np.ndarray, n_group: int, n_member: int, name: str):
        if not len(t):
            return
        if t[:, 0].min() < 0 or t[:, 0].max() >= n_group:
            raise ComparisonError(f"{name} comparison group index out of range")
        if t[:, 1:].min() < 0 or t[:, 1:].max() >= n_member:
            raise ComparisonError(f"{name} comparison member index out of range")
        if np.any(t[:, 1] == t[:, 2]):
            raise ComparisonError(f"self-comparison in {name} comparisons")
        if np.any(np.all(t[1:] == t[:-1], axis=1)):
            raise ComparisonError(f"duplicate {name} comparison")
        key = (t[:, 0] * n_member + t[:, 1]) * n_member + t[:, 2]
        rev = (t[:, 0] * n_member + t[:, 2]) * n_member + t[:, 1]
        if np.intersect1d(key, rev).size:
            raise ComparisonError(f"antisymmetry violated in {name} comparisons")

    def __len__(self) -> int:
        return len(self.item_comparisons) + len(self.user_comparisons)

    def __eq__(self, other):
        if not isinstance(other, ComparisonSet):
            return NotImplemented
        return (self.num_users == other.num_users and self.num_items == other.num_items
                and np.array_equal(self.item_comparisons, other.item_comparisons)
                and np.array_equal(self.user_comparisons, other.user_comparisons))

    def iter_item_comparisons(self) -> Iterator[ItemComparison]:
        for u, k, l in self.item_comparisons.tolist():
            yield ItemComparison(u, k, l)

    def iter_user_comparisons(self) -> Iterator[UserComparison]:
        for m, i, j in self.user_comparisons.tolist():
            yield UserComparison(m, i, j)


def _ordered_pairs(group: np.ndarray, member: np.ndarray, value: np.ndarray) -> np.ndarray:
    """All ``(g, a, b)`` with ``value[g, a] > value[g, b]`` inside each group."""
    out = []
    order = np.argsort(group, kind="stable")
    group, member, value = group[order], member[order], value[order]
    bounds = np.flatnonzero(np.diff(group)) + 1
    for idx in np.split(np.arange(len(group)), bounds):
        if len(idx) < 2:
            continue
        v = value[idx]
        a, b = np.nonzero(v[:, None] > v[None, :])
        m = member[idx]
        out.append(np.column_stack([np.full(len(a), group[idx[0]]), m[a], m[b]]))
    if not out:
        return np.empty((0, 3), dtype=np.int64)
    return np.concatenate(out).astype(np.int64)


def extract_comparisons(ratings: RatingMatrix, expand: bool = False) -> ComparisonSet:
    """Convert observed ratings into strict one-bit comparisons.

    Equal ratings produce no comparison in either direction. With ``expand``
    the result is passed through :func:`transitive_closure`, which is a no-op
    for rating-derived sets but kept for symmetry with external data.
    """
    item_cmp = _ordered_pairs(ratings.users, ratings.items, ratings.ratings)
    user_cmp = _ordered_pairs(ratings.items, ratings.users, ratings.ratings)
    out = ComparisonSet(ratings.num_users, ratings.num_items, item_cmp, user_cmp)
    return transitive_closure(out) if expand else out


def _close_relation(triples: np.ndarray, kind: str) -> np.ndarray:
    graphs: dict[int, dict[int, set[int]]] = defaultdict(lambda: defaultdict(set))
    for g, a, b in triples.tolist():
        graphs[g][a].add(b)
    out = []
    for g in sorted(graphs):
        succ = graphs[g]
        # TopologicalSorter treats values as predecessors; feed successors so
        # static_order yields sinks first, which is the order reachability needs.
        sorter = graphlib.TopologicalSorter({a: set(bs) for a, bs in succ.items()})
        try:
            order = list(sorter.static_order())
        except graphlib.CycleError as exc:
            cycle = list(reversed(exc.args[1]))
            raise CycleError(kind, g, cycle) from None
        reach: dict[int, set[int]] = {}
        for node in order:
            r = set()
            for nxt in succ.get(node, ()):
                r.add(nxt)
                r |= reach[nxt]
            reach[node] = r
        for a in sorted(succ):
            out.extend((g, a, b) for b in sorted(reach[a]))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def transitive_closure(cset: ComparisonSet) -> ComparisonSet:
    """Close each per-user and per-item relation under transitivity.

    Raises :class:`CycleError` naming the offending cycle when a relation is
    not acyclic.
    """
    return ComparisonSet(
        cset.num_users,
        cset.num_items,
        _close_relation(cset.item_comparisons, "I"),
        _close_relation(cset.user_comparisons, "U"),
    )


def store_comparisons(cset: ComparisonSet, path) -> None:
    """Write ``cset`` as text: ``num_users num_items`` then ``I u k l`` / ``U m i j`` lines."""
    lines = [f"{cset.num_users} {cset.num_items}"]
    lines.extend(f"I {u} {k} {l}" for u, k, l in cset.item_comparisons.tolist())
    lines.extend(f"U {m} {i} {j}" for m, i, j in cset.user_comparisons.tolist())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_comparisons(path) -> ComparisonSet:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ComparisonError(f"{path}:1: expected header 'num_users num_items'")
        try:
            num_users, num_items = int(header[0]), int(header[1])
        except ValueError:
            raise ComparisonError(f"{path}:1: non-integer header") from None
        rows = {"I": [], "U": []}
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4 or parts[0] not in rows:
                raise ComparisonError(f"{path}:{lineno}: malformed record {line.strip()!r}")
            try:
                rows[parts[0]].append(tuple(int(p) for p in parts[1:]))
            except ValueError:
                raise ComparisonError(f"{path}:{lineno}: non-integer index") from None
    try:
        return ComparisonSet(num_users, num_items, rows["I"], rows["U"])
    except ComparisonError as exc:
        raise ComparisonError(f"{path}: {exc}") from None
