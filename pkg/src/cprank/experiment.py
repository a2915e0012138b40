"""Reproducible rank-sweep experiments driven by a flat configuration."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import platform
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .baselines import KnnConfig
from .comparisons import extract_comparisons, store_comparisons
from .data import load_dataset, select_subset, synthetic_ratings, write_id_map, write_ratings
from .evaluation import rank_sweep, series_to_csv, series_to_json
from .model import Hyperparams, save_params
from .optim import StoppingRule

__all__ = ["ExperimentConfig", "ExperimentError", "run_experiment", "parse_config_file",
           "parse_ranks", "config_from_mapping"]

_logger = logging.getLogger(__name__)


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


@dataclass
class ExperimentConfig:
    """Everything needed to re-run a sweep.

    ``dataset="synthetic"`` generates a low-rank matrix from the ``synth_*``
    fields; otherwise ``dataset`` is a file path read according to ``format``.
    ``num_users``/``num_items`` of 0 keep the full matrix.
    """

    dataset: str = "synthetic"
    format: str = "movielens"
    num_users: int = 0
    num_items: int = 0
    subset_rule: str = "most-active"
    synth_users: int = 40
    synth_items: int = 60
    synth_rank: int = 5
    synth_noise: float = 0.0
    synth_density: float = 1.0
    methods: list[str] = field(default_factory=lambda: ["cpr", "knn", "svd"])
    ranks: list[int] = field(default_factory=lambda: list(range(2, 27)))
    c_m: float = 1.0
    c_u: float = 1.0
    lam: float = 0.1
    mu: float = 0.01
    batch_size: int = 32
    lr_decay: bool = False
    max_epochs: int = 500
    min_objective_gain: float | None = None
    knn_k: int = 10
    knn_mode: str = "item"
    knn_similarity: str = "cosine"
    knn_passthrough: bool = False
    expand: bool = False
    seed: int = 0
    num_seeds: int = 1
    deterministic: bool = True
    out_dir: str = "cpr-run"
    plot: bool = False
    n_jobs: int = 1

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(rank=min(self.ranks), c_m=self.c_m, c_u=self.c_u, lam=self.lam,
                           mu=self.mu, batch_size=self.batch_size, seed=self.seed,
                           lr_decay=self.lr_decay, deterministic=self.deterministic)

    def stopping(self) -> StoppingRule:
        return StoppingRule(self.max_epochs, self.min_objective_gain)

    def knn_config(self) -> KnnConfig:
        return KnnConfig(self.knn_k, self.knn_mode, self.knn_similarity, self.knn_passthrough)

    def seeds(self) -> list[int]:
        return [self.seed + s for s in range(self.num_seeds)]

    def validate(self) -> None:
        if not self.ranks:
            raise ValueError("ranks must be non-empty")
        if min(self.ranks) < 1:
            raise ValueError("ranks must be positive")
        if self.num_users < 0 or self.num_items < 0:
            raise ValueError("subset bounds must be non-negative")
        if self.num_seeds < 1:
            raise ValueError("num_seeds must be at least 1")
        if self.dataset != "synthetic" and not os.path.exists(self.dataset):
            raise FileNotFoundError(f"dataset not found: {self.dataset}")
        self.hyperparams()
        self.knn_config()


def parse_ranks(text: str) -> list[int]:
    """``"2..26"``, ``"2-26"`` or ``"2,3,5"`` (ranges inclusive)."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        for sep in ("..", "-"):
            if sep in part:
                lo, hi = part.split(sep, 1)
                out.extend(range(int(lo), int(hi) + 1))
                break
        else:
            out.append(int(part))
    return out


_ALIASES = {"lambda": "lam", "rank_list": "ranks", "output": "out_dir", "out": "out_dir"}


def _convert(name: str, value):
    if not isinstance(value, str):
        return value
    ftype = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}[name]
    value = value.strip()
    if name == "ranks":
        return parse_ranks(value)
    if name == "methods":
        return [m.strip().lower() for m in value.split(",") if m.strip()]
    if name == "min_objective_gain":
        return None if value.lower() in ("", "none", "auto") else float(value)
    if ftype in ("bool",):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {value!r}")
    if ftype == "int":
        return int(value)
    if ftype == "float":
        return float(value)
    return value


def config_from_mapping(values: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    updates = {}
    for key, value in values.items():
        name = _ALIASES.get(key, key).replace("-", "_")
        if name not in known:
            raise ValueError(f"unknown configuration key {key!r}")
        updates[name] = _convert(name, value)
    return dataclasses.replace(base or ExperimentConfig(), **updates)


def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _manifest(cfg: ExperimentConfig) -> dict:
    config = dataclasses.asdict(cfg)
    # where the run was written is not part of what it computes
    config.pop("out_dir")
    return {
        "config": config,
        "seeds": cfg.seeds(),
        "versions": {
            "cprank": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }


def _load_ratings(cfg: ExperimentConfig):
    if cfg.dataset == "synthetic":
        ratings, _ = synthetic_ratings(cfg.synth_users, cfg.synth_items, cfg.synth_rank,
                                       noise=cfg.synth_noise, density=cfg.synth_density,
                                       seed=cfg.seed)
    else:
        ratings = load_dataset(cfg.dataset, cfg.format)
    if cfg.num_users or cfg.num_items:
        ratings = select_subset(ratings, cfg.num_users or ratings.num_users,
                                cfg.num_items or ratings.num_items, cfg.subset_rule)
    return ratings


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run the full sweep and write all artifacts into ``cfg.out_dir``.

    Output layout::

        manifest.json  ratings.tsv  id_map.tsv  comparisons.txt
        params/cpr_r{rank}_s{seed}.bin   traces/cpr_r{rank}_s{seed}.json
        metrics.csv  metrics.json  [figures/sigma.png figures/mismatches.png]

    Returns the per-method :class:`MetricSeries`. Any failure is re-raised
    as :class:`ExperimentError` naming the stage.
    """
    stage = "config"
    try:
        cfg.validate()
        out = cfg.out_dir
        os.makedirs(os.path.join(out, "params"), exist_ok=True)
        os.makedirs(os.path.join(out, "traces"), exist_ok=True)
        with open(os.path.join(out, "manifest.json"), "w") as fh:
            json.dump(_manifest(cfg), fh, indent=2, sort_keys=True)
            fh.write("\n")

        stage = "ingest"
        ratings = _load_ratings(cfg)
        write_ratings(ratings, os.path.join(out, "ratings.tsv"))
        write_id_map(ratings, os.path.join(out, "id_map.tsv"))

        stage = "extract"
        cset = extract_comparisons(ratings, expand=cfg.expand)
        store_comparisons(cset, os.path.join(out, "comparisons.txt"))
        _logger.info("%d ratings -> %d item and %d user comparisons", len(ratings),
                     len(cset.item_comparisons), len(cset.user_comparisons))

        def save_cell(method, rank, seed, report):
            tag = f"{method}_r{rank}_s{seed}"
            save_params(report.final_params, os.path.join(out, "params", f"{tag}.bin"))
            with open(os.path.join(out, "traces", f"{tag}.json"), "w") as fh:
                json.dump(report.to_dict(), fh, indent=2)
                fh.write("\n")

        stage = "sweep"
        results = rank_sweep(ratings, cfg.methods, cfg.ranks, cfg.hyperparams(), cfg.stopping(),
                             knn_cfg=cfg.knn_config(), seeds=cfg.seeds(), cset=cset,
                             n_jobs=cfg.n_jobs, on_cell=save_cell)

        stage = "export"
        series_to_csv(results, os.path.join(out, "metrics.csv"))
        series_to_json(results, os.path.join(out, "metrics.json"))

        if cfg.plot:
            stage = "plot"
            from .plotting import render_sweep

            render_sweep(results, os.path.join(out, "figures"))
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(stage, exc) from exc
    return results
