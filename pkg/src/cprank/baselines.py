"""Reference completion methods: neighbourhood CF and truncated SVD."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .comparisons import RatingMatrix

__all__ = ["KnnConfig", "knn_complete", "svd_complete", "item_means"]

_SIM_EPS = 1e-12


@dataclass(frozen=True)
class KnnConfig:
    k: int = 10
    mode: str = "item"  # "item" or "user"
    similarity: str = "cosine"  # "cosine" (mean-centred) or "pearson"
    passthrough: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.mode not in ("item", "user"):
            raise ValueError(f"unknown kNN mode {self.mode!r}")
        if self.similarity not in ("cosine", "pearson"):
            raise ValueError(f"unknown similarity {self.similarity!r}")


def item_means(X: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, float]:
    """Column means over observed cells; unrated columns get the global mean."""
    global_mean = float(X[mask].mean())
    counts = mask.sum(axis=0)
    sums = np.where(mask, X, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / counts, global_mean)
    return means, global_mean


def _column_similarity(X: np.ndarray, mask: np.ndarray, kind: str) -> np.ndarray:
    M = mask.astype(float)
    Xz = np.where(mask, X, 0.0)
    if kind == "cosine":
        means, _ = item_means(X, mask)
        C = np.where(mask, X - means, 0.0)
        norms = np.linalg.norm(C, axis=0)
        G = C.T @ C
        denom = np.outer(norms, norms)
        with np.errstate(invalid="ignore", divide="ignore"):
            S = np.where(denom > 0, G / denom, 0.0)
    else:
        n = M.T @ M
        sa = Xz.T @ M  # sum of column a over rows that also rated b
        sb = sa.T
        saa = (Xz * Xz).T @ M
        sbb = saa.T
        sab = Xz.T @ Xz
        with np.errstate(invalid="ignore", divide="ignore"):
            cov = sab - sa * sb / n
            va = saa - sa * sa / n
            vb = sbb - sb * sb / n
            S = cov / np.sqrt(va * vb)
        S = np.where((n >= 2) & (va > 1e-12) & (vb > 1e-12), S, 0.0)
    np.fill_diagonal(S, -np.inf)
    return S


def _knn_columns(X: np.ndarray, mask: np.ndarray, cfg: KnnConfig) -> np.ndarray:
    means, global_mean = item_means(X, mask)
    S = _column_similarity(X, mask, cfg.similarity)
    out = np.where(mask, X, np.nan)
    rows, cols = X.shape
    for u in range(rows):
        rated = np.flatnonzero(mask[u])
        for m in range(cols):
            if cfg.passthrough and mask[u, m]:
                continue
            cand = rated[rated != m]
            sims = S[m, cand]
            # rounding leaves orthogonal columns at +-1e-17; treat those as unrelated
            pos = sims > _SIM_EPS
            cand, sims = cand[pos], sims[pos]
            if len(cand):
                # stable sort keeps lower index first among equal similarities
                top = np.argsort(-sims, kind="stable")[:cfg.k]
                w = sims[top]
                out[u, m] = float(w @ X[u, cand[top]] / w.sum())
            else:
                out[u, m] = means[m] if mask[:, m].any() else global_mean
    return out


def knn_complete(ratings: RatingMatrix, cfg: KnnConfig | None = None) -> np.ndarray:
    """Dense prediction of every cell by k-nearest-neighbour collaborative filtering.

    Item-based mode predicts ``(u, m)`` from the ``k`` items rated by ``u``
    that are most similar to ``m`` (positive similarity only), as a
    similarity-weighted mean of ``u``'s ratings. Cells without a usable
    neighbour fall back to the item mean, then the global mean. With
    ``passthrough`` observed cells are copied unchanged; without it they are
    re-predicted from their neighbours.
    """
    cfg = cfg or KnnConfig()
    if len(ratings) == 0:
        raise ValueError("cannot complete an empty rating matrix")
    X = ratings.to_dense(fill=0.0)
    mask = ratings.mask()
    if cfg.mode == "item":
        return _knn_columns(X, mask, cfg)
    return _knn_columns(X.T, mask.T, cfg).T


def svd_complete(ratings: RatingMatrix, rank: int) -> np.ndarray:
    """Rank-``rank`` SVD reconstruction of the item-mean-imputed rating matrix."""
    if not 1 <= rank <= min(ratings.shape):
        raise ValueError(f"rank {rank} outside [1, {min(ratings.shape)}]")
    if len(ratings) == 0:
        raise ValueError("cannot complete an empty rating matrix")
    X = ratings.to_dense(fill=0.0)
    mask = ratings.mask()
    means, _ = item_means(X, mask)
    filled = np.where(mask, X, means[None, :])
    U, s, Vt = np.linalg.svd(filled, full_matrices=False)
    return (U[:, :rank] * s[:rank]) @ Vt[:rank]
