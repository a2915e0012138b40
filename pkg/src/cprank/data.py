"""Dataset ingestion: MovieLens ``u.data`` files, subsetting, and a synthetic low-rank generator."""
from __future__ import annotations

import numpy as np

from .comparisons import RatingMatrix

__all__ = [
    "DataError",
    "parse_movielens",
    "select_subset",
    "synthetic_ratings",
    "write_id_map",
    "write_ratings",
    "read_ratings",
    "load_dataset",
]

MOVIELENS_SCALE = (1.0, 5.0)


class DataError(ValueError):
    pass


def parse_movielens(path) -> RatingMatrix:
    """Read a tab-separated ``user item rating timestamp`` file.

    Users and items are re-indexed densely in ascending order of their
    original ids. When a (user, item) pair appears more than once the record
    with the latest timestamp wins (the later line on equal timestamps).
    """
    latest: dict[tuple[int, int], tuple[int, float]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                user, item, ts = int(parts[0]), int(parts[1]), int(parts[3])
                rating = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed record {line.strip()!r}") from None
            lo, hi = MOVIELENS_SCALE
            if not lo <= rating <= hi:
                raise DataError(f"{path}:{lineno}: rating {rating} outside [{lo}, {hi}]")
            prev = latest.get((user, item))
            if prev is None or ts >= prev[0]:
                latest[(user, item)] = (ts, rating)
    if not latest:
        raise DataError(f"{path}: no ratings found")

    keys = np.array(list(latest.keys()), dtype=np.int64)
    ratings = np.array([v[1] for v in latest.values()])
    user_ids, users = np.unique(keys[:, 0], return_inverse=True)
    item_ids, items = np.unique(keys[:, 1], return_inverse=True)
    return RatingMatrix(len(user_ids), len(item_ids), users, items, ratings,
                        scale=MOVIELENS_SCALE, user_ids=user_ids, item_ids=item_ids)


def _top_by_count(counts: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    # most ratings first, then smaller original id
    order = np.lexsort((ids, -counts))
    return np.sort(order[:n])


def select_subset(ratings: RatingMatrix, num_users: int, num_items: int,
                  rule: str = "most-active") -> RatingMatrix:
    """Keep the most-rated users and items and re-index them.

    Users and items are ranked independently by their number of observed
    ratings in the full matrix, ties broken by ascending original id.
    """
    if rule != "most-active":
        raise ValueError(f"unknown subset rule {rule!r}")
    if num_users < 1 or num_items < 1:
        raise ValueError("subset sizes must be positive")
    if num_users > ratings.num_users or num_items > ratings.num_items:
        raise DataError(
            f"requested {num_users}x{num_items} subset of a "
            f"{ratings.num_users}x{ratings.num_items} matrix"
        )
    uids = ratings.user_ids if ratings.user_ids is not None else np.arange(ratings.num_users)
    iids = ratings.item_ids if ratings.item_ids is not None else np.arange(ratings.num_items)
    ucount = np.bincount(ratings.users, minlength=ratings.num_users)
    icount = np.bincount(ratings.items, minlength=ratings.num_items)
    keep_u = _top_by_count(ucount, uids, num_users)
    keep_i = _top_by_count(icount, iids, num_items)

    umap = np.full(ratings.num_users, -1)
    umap[keep_u] = np.arange(num_users)
    imap = np.full(ratings.num_items, -1)
    imap[keep_i] = np.arange(num_items)
    u = umap[ratings.users]
    i = imap[ratings.items]
    sel = (u >= 0) & (i >= 0)
    return RatingMatrix(num_users, num_items, u[sel], i[sel], ratings.ratings[sel],
                        scale=ratings.scale, user_ids=uids[keep_u], item_ids=iids[keep_i])


def synthetic_ratings(num_users: int, num_items: int, rank: int, noise: float = 0.0,
                      density: float = 1.0, seed: int = 0) -> tuple[RatingMatrix, np.ndarray]:
    """Low-rank ground truth ``X = P Q^T`` with standard-normal factors.

    Returns the observed :class:`RatingMatrix` (a ``density`` fraction of
    cells, each observed independently, plus Gaussian noise of std ``noise``)
    and the noiseless dense ``X``.
    """
    if rank < 1:
        raise ValueError("rank must be at least 1")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((num_users, rank))
    Q = rng.standard_normal((num_items, rank))
    X = P @ Q.T
    observed = X + noise * rng.standard_normal(X.shape) if noise else X.copy()
    mask = rng.random(X.shape) < density if density < 1.0 else np.ones(X.shape, dtype=bool)
    return RatingMatrix.from_dense(observed, mask), X


def write_id_map(ratings: RatingMatrix, path) -> None:
    """Persist the dense-index to original-id maps as ``kind dense original`` lines."""
    with open(path, "w") as fh:
        fh.write("kind\tdense\toriginal\n")
        if ratings.user_ids is not None:
            for d, o in enumerate(ratings.user_ids.tolist()):
                fh.write(f"user\t{d}\t{o}\n")
        if ratings.item_ids is not None:
            for d, o in enumerate(ratings.item_ids.tolist()):
                fh.write(f"item\t{d}\t{o}\n")


def write_ratings(ratings: RatingMatrix, path) -> None:
    """Write ``num_users num_items`` then ``user<TAB>item<TAB>rating`` lines (dense indices)."""
    with open(path, "w") as fh:
        fh.write(f"{ratings.num_users}\t{ratings.num_items}\n")
        for u, i, r in ratings.entries:
            fh.write(f"{u}\t{i}\t{r!r}\n")


def read_ratings(path) -> RatingMatrix:
    """Inverse of :func:`write_ratings`."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: expected header 'num_users num_items'")
        num_users, num_items = int(header[0]), int(header[1])
        entries = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                entries.append((int(parts[0]), int(parts[1]), float(parts[2])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed record {line.strip()!r}") from None
    try:
        return RatingMatrix.from_entries(num_users, num_items, entries)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def load_dataset(path, fmt: str = "movielens") -> RatingMatrix:
    if fmt == "movielens":
        return parse_movielens(path)
    if fmt == "tsv":
        return read_ratings(path)
    raise ValueError(f"unknown dataset format {fmt!r}")
