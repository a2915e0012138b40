"""Recovery metrics and the rank sweep.

Two metrics are tracked for every recovered matrix: the ``r``-th largest
singular value (alone and relative to the largest), and the number of
original comparisons whose orientation the matrix violates.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .baselines import KnnConfig, knn_complete, svd_complete
from .comparisons import ComparisonSet, RatingMatrix, extract_comparisons
from .model import Hyperparams, recover_matrix
from .optim import StoppingRule, train

__all__ = [
    "METHODS",
    "MetricSeries",
    "singular_diagnostics",
    "count_mismatches",
    "normalize_series",
    "detect_knee",
    "rank_sweep",
    "series_to_csv",
    "series_to_json",
    "normalized_results",
    "load_series_csv",
]

_logger = logging.getLogger(__name__)

METHODS = ("cpr", "knn", "svd")
TRACES = ("sigma_r_max", "sigma_ratio", "mismatches")


@dataclass
class MetricSeries:
    """Per-rank metrics of one method. Missing cells are ``None``."""

    method: str
    ranks: list[int]
    sigma_r_max: list[float | None] = field(default_factory=list)
    sigma_ratio: list[float | None] = field(default_factory=list)
    mismatches: list[float | None] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.ranks)
        for name in TRACES:
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} values for {n} ranks")

    def trace(self, name: str) -> list[float | None]:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {"method": self.method, "ranks": list(self.ranks),
                **{name: list(getattr(self, name)) for name in TRACES}}


def singular_values(matrix) -> np.ndarray:
    return np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)


def singular_diagnostics(matrix, r: int) -> tuple[float, float]:
    """Return ``(sigma_r, sigma_r / sigma_1)`` of ``matrix``."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ValueError("matrix must be 2-D")
    if not 1 <= r <= min(matrix.shape):
        raise ValueError(f"r={r} outside [1, {min(matrix.shape)}]")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix has non-finite entries")
    s = singular_values(matrix)
    if s[0] == 0.0:
        warnings.warn("zero matrix: singular value ratio set to 0", RuntimeWarning, stacklevel=2)
        return 0.0, 0.0
    return float(s[r - 1]), float(min(s[r - 1] / s[0], 1.0))


def count_mismatches(recovered, cset: ComparisonSet) -> int:
    """Number of comparisons the recovered matrix orders wrongly; ties count as wrong."""
    X = np.asarray(recovered)
    if X.shape != (cset.num_users, cset.num_items):
        raise ValueError(f"recovered matrix is {X.shape}, comparisons are "
                         f"{cset.num_users}x{cset.num_items}")
    ic, uc = cset.item_comparisons, cset.user_comparisons
    bad = np.count_nonzero(X[ic[:, 0], ic[:, 1]] <= X[ic[:, 0], ic[:, 2]])
    bad += np.count_nonzero(X[uc[:, 1], uc[:, 0]] <= X[uc[:, 2], uc[:, 0]])
    return int(bad)


def normalize_series(series: MetricSeries, mode: str = "first",
                     reference: float | None = None,
                     traces: Sequence[str] = TRACES) -> MetricSeries:
    """Divide traces by their first element (``mode="first"``) or by ``reference``.

    Only the traces listed in ``traces`` are rescaled.
    """
    if mode not in ("first", "reference"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    if mode == "reference" and reference is None:
        raise ValueError("reference mode needs a reference value")
    out = {}
    for name in traces:
        values = getattr(series, name)
        ref = values[0] if mode == "first" else reference
        if not values:
            out[name] = []
            continue
        if ref is None or ref == 0 or (isinstance(ref, float) and math.isnan(ref)):
            raise ZeroDivisionError(f"cannot normalize trace {series.method}/{name}: reference is {ref}")
        out[name] = [None if v is None else v / ref for v in values]
    return replace(series, **out)


def detect_knee(trace: Sequence[float]) -> int:
    """Index ``i`` with the largest drop ``trace[i] / trace[i+1]``.

    Near-equal drops (within 1e-12 relative) resolve to the smallest index.
    A zero in the trace is returned directly as the knee.
    """
    t = np.asarray(trace, dtype=float)
    if len(t) < 3:
        raise ValueError("knee detection needs at least 3 values")
    zeros = np.flatnonzero(t == 0)
    if len(zeros):
        return int(zeros[0])
    drops = t[:-1] / t[1:]
    best = drops.max()
    return int(np.flatnonzero(drops >= best - 1e-12 * abs(best))[0])


@dataclass(frozen=True)
class _Cell:
    method: str
    rank: int
    seed: int


def _run_cell(cell: _Cell, ratings: RatingMatrix, cset: ComparisonSet, hyper: Hyperparams,
              stopping: StoppingRule | None, knn_cfg: KnnConfig, knn_matrix=None):
    if cell.method == "cpr":
        report = train(cset, replace(hyper, rank=cell.rank, seed=cell.seed), stopping)
        matrix = recover_matrix(report.final_params)
    elif cell.method == "svd":
        report, matrix = None, svd_complete(ratings, cell.rank)
    elif cell.method == "knn":
        report = None
        matrix = knn_matrix if knn_matrix is not None else knn_complete(ratings, knn_cfg)
    else:
        raise ValueError(f"unknown method {cell.method!r}")
    sigma, ratio = singular_diagnostics(matrix, cell.rank)
    return sigma, ratio, count_mismatches(matrix, cset), report


def _safe_cell(args):
    cell = args[0]
    try:
        return _run_cell(*args)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _logger.warning("%s at rank %d (seed %d) failed: %s", cell.method, cell.rank, cell.seed, exc)
        return None


def _mean(values):
    vals = [v for v in values if v is not None]
    if len(vals) != len(values) or not vals:
        return None
    return float(np.mean(vals)) if len(vals) > 1 else vals[0]


def rank_sweep(ratings: RatingMatrix, methods: Sequence[str], ranks: Sequence[int],
               hyper: Hyperparams, stopping: StoppingRule | None = None,
               knn_cfg: KnnConfig | None = None, seeds: Sequence[int] | None = None,
               cset: ComparisonSet | None = None, n_jobs: int = 1,
               on_cell: Callable | None = None) -> dict[str, MetricSeries]:
    """Evaluate each method at each rank against the comparisons of ``ratings``.

    CPR is retrained per rank (and per seed when ``seeds`` is given, metrics
    averaged). SVD is truncated at each rank. kNN produces one completion,
    read at each rank; by default it re-predicts observed cells, since
    copying them would reproduce every comparison trivially. A failing
    cell is logged and stored as ``None``.

    ``on_cell(method, rank, seed, report)`` is called for every CPR run that
    succeeded, in sweep order.
    """
    methods = list(methods)
    ranks = [int(r) for r in ranks]
    if not methods:
        return {}
    if not ranks:
        raise ValueError("ranks must be non-empty")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    if cset is None:
        cset = extract_comparisons(ratings)
    knn_cfg = knn_cfg or KnnConfig(passthrough=False)
    seeds = list(seeds) if seeds else [hyper.seed]

    knn_matrix = None
    if "knn" in methods:
        try:
            knn_matrix = knn_complete(ratings, knn_cfg)
        except ValueError as exc:
            _logger.warning("knn completion failed: %s", exc)

    cells = []
    for m in methods:
        for r in ranks:
            for s in (seeds if m == "cpr" else seeds[:1]):
                cells.append(_Cell(m, r, s))
    args = [(c, ratings, cset, hyper, stopping, knn_cfg, knn_matrix) for c in cells]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_safe_cell, args))
    else:
        results = [_safe_cell(a) for a in args]

    by_cell = dict(zip(cells, results))
    out = {}
    for m in methods:
        traces = {t: [] for t in TRACES}
        for r in ranks:
            runs = [by_cell[_Cell(m, r, s)] for s in (seeds if m == "cpr" else seeds[:1])]
            for pos, t in enumerate(TRACES):
                traces[t].append(_mean([None if x is None else x[pos] for x in runs]))
            if on_cell is not None and m == "cpr":
                for s, x in zip(seeds, runs):
                    if x is not None:
                        on_cell(m, r, s, x[3])
        out[m] = MetricSeries(m, list(ranks), **traces)
    return out


def normalized_results(results: dict[str, MetricSeries]) -> dict[str, MetricSeries]:
    """Sigma traces by their first element; mismatches by CPR's first-rank value.

    Falls back to each method's own first mismatch value without CPR. A trace
    that cannot be normalized (zero or missing reference) becomes all ``None``.
    """
    cpr = results.get("cpr")
    ref = cpr.mismatches[0] if cpr is not None and cpr.mismatches else None
    out = {}
    for name, s in results.items():
        norm = {}
        for trace in TRACES:
            try:
                if trace == "mismatches" and cpr is not None:
                    n = normalize_series(s, "reference", ref, traces=[trace])
                else:
                    n = normalize_series(s, "first", traces=[trace])
                norm[trace] = getattr(n, trace)
            except (ZeroDivisionError, ValueError):
                norm[trace] = [None] * len(s.ranks)
        out[name] = replace(s, **norm)
    return out


CSV_COLUMNS = ["method", "rank", "sigma_r_max", "sigma_ratio", "mismatches",
               "sigma_r_max_norm", "sigma_ratio_norm", "mismatches_norm"]


def _fmt(v):
    return "" if v is None else repr(float(v))


def series_to_csv(results: dict[str, MetricSeries], path=None) -> str:
    """Rows ``method, rank`` then raw and normalized metrics; floats written with ``repr``."""
    norm = normalized_results(results)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for name, s in results.items():
        n = norm[name]
        for idx, r in enumerate(s.ranks):
            writer.writerow([name, r, *(_fmt(getattr(s, t)[idx]) for t in TRACES),
                             *(_fmt(getattr(n, t)[idx]) for t in TRACES)])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def series_to_json(results: dict[str, MetricSeries], path=None) -> str:
    norm = normalized_results(results)
    payload = {name: {"raw": s.to_dict(), "normalized": norm[name].to_dict()}
               for name, s in results.items()}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def load_series_csv(path) -> dict[str, MetricSeries]:
    """Read the raw columns of a CSV written by :func:`series_to_csv`."""
    rows: dict[str, dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            s = rows.setdefault(row["method"], {"ranks": [], **{t: [] for t in TRACES}})
            s["ranks"].append(int(row["rank"]))
            for t in TRACES:
                s[t].append(float(row[t]) if row[t] else None)
    return {m: MetricSeries(m, **v) for m, v in rows.items()}
