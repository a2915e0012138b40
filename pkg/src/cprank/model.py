"""Latent-factor scoring, the tanh preference link, and the log-posterior objective."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .comparisons import ComparisonSet

__all__ = [
    "ModelParams",
    "Hyperparams",
    "link",
    "log_link",
    "score",
    "pairwise_score_item",
    "pairwise_score_user",
    "cpr_objective",
    "recover_matrix",
    "save_params",
    "load_params",
]


@dataclass(frozen=True, eq=False)
class ModelParams:
    """User factors ``P`` (num_users x rank) and item factors ``Q`` (num_items x rank)."""

    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64, ndmin=2)
        Q = np.array(self.Q, dtype=np.float64, ndmin=2)
        if P.ndim != 2 or Q.ndim != 2:
            raise ValueError("P and Q must be 2-D")
        if P.shape[1] != Q.shape[1]:
            raise ValueError(f"rank mismatch: P has {P.shape[1]} columns, Q has {Q.shape[1]}")
        if P.shape[1] < 1:
            raise ValueError("rank must be at least 1")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise ValueError("parameters must be finite")
        P.setflags(write=False)
        Q.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)

    @property
    def rank(self) -> int:
        return self.P.shape[1]

    @property
    def num_users(self) -> int:
        return self.P.shape[0]

    @property
    def num_items(self) -> int:
        return self.Q.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return np.array_equal(self.P, other.P) and np.array_equal(self.Q, other.Q)


@dataclass(frozen=True)
class Hyperparams:
    """Model and learner settings.

    ``c_m`` is the steepness for user-user comparisons and ``c_u`` for
    item-item comparisons. ``lam`` is the isotropic prior precision applied to
    every row of P and Q.
    """

    rank: int = 2
    c_m: float = 1.0
    c_u: float = 1.0
    lam: float = 0.1
    mu: float = 0.01
    batch_size: int = 32
    seed: int = 0
    lr_decay: bool = False
    deterministic: bool = True

    def __post_init__(self):
        if self.c_m <= 0 or self.c_u <= 0:
            raise ValueError("c_m and c_u must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.rank < 1:
            raise ValueError("rank must be at least 1")


def link(c, x):
    """Preference probability ``1/2 + tanh(c x)/2``.

    Evaluated as the logistic function of ``2 c x`` so the lower tail keeps
    full relative precision.
    """
    return np.exp(log_link(c, x))


def log_link(c, x):
    """``ln link(c, x)`` evaluated as ``-ln(1 + exp(-2 c x))``."""
    return -np.logaddexp(0.0, -2.0 * np.multiply(c, x))


def _check_index(idx, n, what):
    if not 0 <= idx < n:
        raise IndexError(f"{what} index {idx} out of range [0, {n})")


def score(params: ModelParams, user: int, item: int) -> float:
    _check_index(user, params.num_users, "user")
    _check_index(item, params.num_items, "item")
    return float(params.P[user] @ params.Q[item])


def pairwise_score_item(params: ModelParams, u: int, k: int, l: int) -> float:
    """``p_u . (q_k - q_l)``: how much user ``u`` is predicted to prefer ``k`` over ``l``."""
    if k == l:
        raise ValueError("item comparison requires two distinct items")
    _check_index(u, params.num_users, "user")
    _check_index(k, params.num_items, "item")
    _check_index(l, params.num_items, "item")
    return float(params.P[u] @ (params.Q[k] - params.Q[l]))


def pairwise_score_user(params: ModelParams, i: int, j: int, m: int) -> float:
    """``(p_i - p_j) . q_m``: predicted inclination of user ``i`` over ``j`` toward ``m``."""
    if i == j:
        raise ValueError("user comparison requires two distinct users")
    _check_index(i, params.num_users, "user")
    _check_index(j, params.num_users, "user")
    _check_index(m, params.num_items, "item")
    return float((params.P[i] - params.P[j]) @ params.Q[m])


def item_margins(P: np.ndarray, Q: np.ndarray, triples: np.ndarray) -> np.ndarray:
    u, k, l = triples[:, 0], triples[:, 1], triples[:, 2]
    return np.einsum("nr,nr->n", P[u], Q[k] - Q[l])


def user_margins(P: np.ndarray, Q: np.ndarray, triples: np.ndarray) -> np.ndarray:
    m, i, j = triples[:, 0], triples[:, 1], triples[:, 2]
    return np.einsum("nr,nr->n", P[i] - P[j], Q[m])


def _check_dims(params: ModelParams, cset: ComparisonSet):
    if (params.num_users, params.num_items) != (cset.num_users, cset.num_items):
        raise ValueError(
            f"dimension mismatch: params are {params.num_users}x{params.num_items}, "
            f"comparisons are {cset.num_users}x{cset.num_items}"
        )


def cpr_objective(params: ModelParams, cset: ComparisonSet, hyper: Hyperparams) -> float:
    """Log-posterior up to an additive constant.

    Sum of ``ln link`` over all user and item comparisons minus
    ``lam/2 * (||P||^2 + ||Q||^2)``.
    """
    _check_dims(params, cset)
    P, Q = params.P, params.Q
    total = np.sum(log_link(hyper.c_m, user_margins(P, Q, cset.user_comparisons)))
    total += np.sum(log_link(hyper.c_u, item_margins(P, Q, cset.item_comparisons)))
    total -= 0.5 * hyper.lam * (np.sum(P * P) + np.sum(Q * Q))
    return float(total)


def recover_matrix(params: ModelParams) -> np.ndarray:
    return params.P @ params.Q.T


_MAGIC = b"CPRP"


def save_params(params: ModelParams, path, binary: bool = True) -> None:
    """Header ``num_users num_items rank`` then row-major P and Q.

    Binary files are little-endian float64 and round-trip exactly; text files
    use ``repr`` floats, which also round-trip for float64.
    """
    nu, ni, r = params.num_users, params.num_items, params.rank
    if binary:
        with open(path, "wb") as fh:
            fh.write(_MAGIC + struct.pack("<qqq", nu, ni, r))
            fh.write(params.P.astype("<f8").tobytes(order="C"))
            fh.write(params.Q.astype("<f8").tobytes(order="C"))
    else:
        with open(path, "w") as fh:
            fh.write(f"{nu} {ni} {r}\n")
            for row in np.vstack([params.P, params.Q]):
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == _MAGIC:
            nu, ni, r = struct.unpack("<qqq", fh.read(24))
            data = np.frombuffer(fh.read(), dtype="<f8")
            if data.size != (nu + ni) * r:
                raise ValueError(f"{path}: expected {(nu + ni) * r} values, found {data.size}")
            data = data.astype(np.float64).reshape(nu + ni, r)
            return ModelParams(data[:nu], data[nu:])
    with open(path) as fh:
        nu, ni, r = (int(v) for v in fh.readline().split())
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if data.shape != (nu + ni, r):
        raise ValueError(f"{path}: expected {(nu + ni)}x{r} values, found {data.shape}")
    return ModelParams(data[:nu], data[nu:])
