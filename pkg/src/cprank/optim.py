"""Analytic gradients of the CPR objective and the mini-batch stochastic learner."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .comparisons import ComparisonSet
from .model import Hyperparams, ModelParams, cpr_objective, _check_dims

__all__ = [
    "GradientBuffer",
    "TrainReport",
    "StoppingRule",
    "DivergenceError",
    "grad_log_link",
    "pool_comparisons",
    "accumulate_gradient",
    "full_gradient",
    "init_params",
    "train",
]

_logger = logging.getLogger(__name__)

# kind column of a pooled triple array
USER_CMP = 0
ITEM_CMP = 1


class DivergenceError(ArithmeticError):
    def __init__(self, epoch: int, mu: float, value: float):
        self.epoch = epoch
        self.mu = mu
        self.value = value
        super().__init__(
            f"objective became non-finite ({value}) at epoch {epoch} with mu={mu}; "
            "lower the learning rate"
        )


@dataclass
class GradientBuffer:
    dP: np.ndarray
    dQ: np.ndarray

    @classmethod
    def zeros_like(cls, params: ModelParams) -> GradientBuffer:
        return cls(np.zeros_like(params.P), np.zeros_like(params.Q))


@dataclass
class TrainReport:
    epochs_run: int
    objective_trace: list[float]
    final_params: ModelParams
    rng_seed: int
    initial_params: ModelParams | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "objective_trace": list(self.objective_trace),
            "rng_seed": self.rng_seed,
            "rank": self.final_params.rank,
        }


@dataclass(frozen=True)
class StoppingRule:
    """Stop after ``max_epochs`` or once an epoch gains less than ``min_objective_gain``.

    ``min_objective_gain=None`` means ``1e-6 * |initial objective|``; pass
    ``-inf`` to always run ``max_epochs``.
    """

    max_epochs: int = 500
    min_objective_gain: float | None = None


def grad_log_link(c, x):
    """Derivative of ``ln link(c, x)`` with respect to ``x``: ``c (1 - tanh(c x))``."""
    return c * (1.0 - np.tanh(np.multiply(c, x)))


def pool_comparisons(cset: ComparisonSet) -> np.ndarray:
    """Stack both relations into one ``(n, 4)`` array ``[kind, a, b, c]``.

    User comparisons come first (kind 0, rows ``m, i, j``), then item
    comparisons (kind 1, rows ``u, k, l``).
    """
    uc = np.column_stack([np.full(len(cset.user_comparisons), USER_CMP), cset.user_comparisons])
    ic = np.column_stack([np.full(len(cset.item_comparisons), ITEM_CMP), cset.item_comparisons])
    return np.concatenate([uc, ic]).astype(np.int64).reshape(-1, 4)


def _accumulate(P, Q, pooled, c_m, c_u, dP, dQ):
    kind = pooled[:, 0]
    uc = pooled[kind == USER_CMP, 1:]
    if len(uc):
        m, i, j = uc[:, 0], uc[:, 1], uc[:, 2]
        diff = P[i] - P[j]
        qm = Q[m]
        s = grad_log_link(c_m, np.einsum("nr,nr->n", diff, qm))[:, None]
        np.add.at(dQ, m, s * diff)
        np.add.at(dP, i, s * qm)
        np.subtract.at(dP, j, s * qm)
    ic = pooled[kind == ITEM_CMP, 1:]
    if len(ic):
        u, k, l = ic[:, 0], ic[:, 1], ic[:, 2]
        pu = P[u]
        diff = Q[k] - Q[l]
        s = grad_log_link(c_u, np.einsum("nr,nr->n", pu, diff))[:, None]
        np.add.at(dP, u, s * diff)
        np.add.at(dQ, k, s * pu)
        np.subtract.at(dQ, l, s * pu)


def accumulate_gradient(params: ModelParams, batch, hyper: Hyperparams,
                        buf: GradientBuffer | None = None,
                        prior_weight: float = 0.0) -> GradientBuffer:
    """Add the ascent direction of the objective restricted to ``batch`` into ``buf``.

    ``batch`` is a :class:`ComparisonSet` or a pooled ``(n, 4)`` array from
    :func:`pool_comparisons`. The prior gradient ``-lam * Omega`` is added
    with weight ``prior_weight`` (1 for the full objective,
    ``len(batch) / total`` inside an SGD epoch).
    """
    if buf is None:
        buf = GradientBuffer.zeros_like(params)
    if buf.dP.shape != params.P.shape or buf.dQ.shape != params.Q.shape:
        raise ValueError("gradient buffer shape does not match parameters")
    if isinstance(batch, ComparisonSet):
        _check_dims(params, batch)
        batch = pool_comparisons(batch)
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 4)
    _check_batch(batch, params.num_users, params.num_items)
    _accumulate(params.P, params.Q, batch, hyper.c_m, hyper.c_u, buf.dP, buf.dQ)
    if prior_weight and hyper.lam:
        buf.dP -= prior_weight * hyper.lam * params.P
        buf.dQ -= prior_weight * hyper.lam * params.Q
    return buf


def _check_batch(batch, nu, ni):
    if not len(batch):
        return
    kind = batch[:, 0]
    uc = batch[kind == USER_CMP, 1:]
    ic = batch[kind == ITEM_CMP, 1:]
    if len(uc) + len(ic) != len(batch):
        raise ValueError("unknown comparison kind in batch")
    if len(uc) and (uc.min() < 0 or uc[:, 0].max() >= ni or uc[:, 1:].max() >= nu):
        raise IndexError("user comparison index out of range")
    if len(ic) and (ic.min() < 0 or ic[:, 0].max() >= nu or ic[:, 1:].max() >= ni):
        raise IndexError("item comparison index out of range")


def full_gradient(params: ModelParams, cset: ComparisonSet, hyper: Hyperparams) -> GradientBuffer:
    """Gradient of :func:`cpr_objective` (likelihood plus prior)."""
    return accumulate_gradient(params, cset, hyper, prior_weight=1.0)


def init_params(num_users: int, num_items: int, rank: int, seed: int = 0) -> ModelParams:
    """I.i.d. normal factors with standard deviation ``1/sqrt(rank)``."""
    if rank < 1:
        raise ValueError("rank must be at least 1")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(rank)
    P = rng.normal(0.0, scale, size=(num_users, rank))
    Q = rng.normal(0.0, scale, size=(num_items, rank))
    return ModelParams(P, Q)


def train(cset: ComparisonSet, hyper: Hyperparams, stopping: StoppingRule | None = None,
          init: ModelParams | None = None) -> TrainReport:
    """Mini-batch stochastic gradient ascent on the CPR objective.

    Each epoch shuffles the pooled user and item comparisons and steps
    ``Omega += mu * grad`` per batch. The objective on the full data is
    recorded before the first epoch and after every epoch.
    """
    if len(cset) == 0:
        raise ValueError("cannot train on an empty comparison set")
    stopping = stopping or StoppingRule()
    if init is None:
        init = init_params(cset.num_users, cset.num_items, hyper.rank, hyper.seed)
    _check_dims(init, cset)
    if init.rank != hyper.rank:
        raise ValueError(f"initial params have rank {init.rank}, expected {hyper.rank}")

    pooled = pool_comparisons(cset)
    n = len(pooled)
    shuffle_rng = np.random.default_rng([hyper.seed, 1])
    P = init.P.copy()
    Q = init.Q.copy()
    dP = np.empty_like(P)
    dQ = np.empty_like(Q)

    obj = cpr_objective(init, cset, hyper)
    trace = [obj]
    threshold = stopping.min_objective_gain
    if threshold is None:
        threshold = 1e-6 * abs(obj)

    epoch = 0
    # overflow shows up as a non-finite objective and is reported below
    with np.errstate(over="ignore", invalid="ignore"):
        while epoch < stopping.max_epochs:
            epoch += 1
            mu = hyper.mu / np.sqrt(epoch) if hyper.lr_decay else hyper.mu
            perm = shuffle_rng.permutation(n)
            for start in range(0, n, hyper.batch_size):
                batch = pooled[perm[start:start + hyper.batch_size]]
                dP.fill(0.0)
                dQ.fill(0.0)
                _accumulate(P, Q, batch, hyper.c_m, hyper.c_u, dP, dQ)
                if hyper.lam:
                    w = hyper.lam * len(batch) / n
                    dP -= w * P
                    dQ -= w * Q
                P += mu * dP
                Q += mu * dQ
            if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
                raise DivergenceError(epoch, hyper.mu, float("nan"))
            new = cpr_objective(ModelParams(P, Q), cset, hyper)
            if not np.isfinite(new):
                raise DivergenceError(epoch, hyper.mu, new)
            trace.append(new)
            gain = new - obj
            obj = new
            if gain < threshold:
                _logger.debug("stopping at epoch %d: gain %.3g below %.3g", epoch, gain, threshold)
                break

    return TrainReport(epoch, trace, ModelParams(P, Q), hyper.seed, initial_params=init)
