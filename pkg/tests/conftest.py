import numpy as np
import pytest

from cprank.comparisons import ComparisonSet
from cprank.model import ModelParams, cpr_objective


def finite_difference_gradient(params, cset, hyper, step=1e-5):
    """Central differences of cpr_objective over every entry of P and Q."""
    grads = []
    for which in ("P", "Q"):
        base = getattr(params, which)
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += step
            minus[idx] -= step
            pp = ModelParams(plus, params.Q) if which == "P" else ModelParams(params.P, plus)
            mm = ModelParams(minus, params.Q) if which == "P" else ModelParams(params.P, minus)
            g[idx] = (cpr_objective(pp, cset, hyper) - cpr_objective(mm, cset, hyper)) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.where(scale < floor, np.abs(a - n), np.abs(a - n) / np.where(scale < floor, 1, scale))
    return float(err.max()) if err.size else 0.0


def random_instance(rng, max_users=10, max_items=10, max_rank=4, density=0.6):
    """Random params and a random antisymmetric comparison set."""
    nu = int(rng.integers(2, max_users + 1))
    ni = int(rng.integers(2, max_items + 1))
    r = int(rng.integers(1, max_rank + 1))
    items = [(u, k, l) if rng.random() < 0.5 else (u, l, k)
             for u in range(nu) for k in range(ni) for l in range(k + 1, ni) if rng.random() < density]
    users = [(m, i, j) if rng.random() < 0.5 else (m, j, i)
             for m in range(ni) for i in range(nu) for j in range(i + 1, nu) if rng.random() < density]
    params = ModelParams(rng.normal(0, 0.7, (nu, r)), rng.normal(0, 0.7, (ni, r)))
    return params, ComparisonSet(nu, ni, items, users)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
