"""End-to-end surrogate construction, portfolio aggregation, and metrics.

A surrogate bundles the feature grid, the trained price train, the off-grid
inference mode, and a manifest recording every knob needed to reproduce the
run.  Serialization writes the train in the binary TT format next to a JSON
manifest sidecar.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cross import BlackBoxPricer, CrossReport, feasible_ranks, init_index_sets, tt_cross
from .errors import DimensionMismatchError
from .grid import FeatureGrid
from .interp import interp_eval, interp_eval_batch
from .tt import TensorTrain, load_tt, save_tt, tt_add, tt_round, tt_scale

MANIFEST_SCHEMA = 1


def config_hash(blob: dict) -> str:
    canon = json.dumps(blob, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class SurrogateModel:
    """Trained price surface with its provenance manifest."""

    grid: FeatureGrid
    y_tt: TensorTrain
    mode: str = "linear"
    length_scale: float | None = None
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.y_tt.shape != self.grid.shape:
            raise DimensionMismatchError("train does not match the grid's core layout")
        if self.mode not in ("linear", "sinh"):
            raise ValueError(f"unknown inference mode {self.mode!r}")
        if self.mode == "sinh" and not self.length_scale:
            raise ValueError("sinh mode needs a length-scale")

    def predict(self, x) -> float:
        return interp_eval(self.y_tt, self.grid, x, self.mode, self.length_scale)

    def predict_batch(self, xs) -> np.ndarray:
        return interp_eval_batch(self.y_tt, self.grid, xs, self.mode, self.length_scale)

    # -- persistence ---------------------------------------------------------

    def save(self, prefix) -> tuple[Path, Path]:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        tt_path = prefix.with_suffix(".tt")
        manifest_path = prefix.with_suffix(".manifest.json")
        save_tt(self.y_tt, tt_path)
        blob = {
            "schema_version": MANIFEST_SCHEMA,
            "grid": self.grid.to_json(),
            "mode": self.mode,
            "length_scale": self.length_scale,
            "ranks": list(self.y_tt.ranks),
            **self.manifest,
        }
        manifest_path.write_text(json.dumps(blob, indent=2, sort_keys=True))
        return tt_path, manifest_path

    @staticmethod
    def load(prefix) -> "SurrogateModel":
        prefix = Path(prefix)
        blob = json.loads(prefix.with_suffix(".manifest.json").read_text())
        if blob.get("schema_version") != MANIFEST_SCHEMA:
            raise ValueError(f"unsupported manifest schema {blob.get('schema_version')}")
        manifest = {
            k: v
            for k, v in blob.items()
            if k not in ("schema_version", "grid", "mode", "length_scale", "ranks")
        }
        return SurrogateModel(
            grid=FeatureGrid.from_json(blob["grid"]),
            y_tt=load_tt(prefix.with_suffix(".tt")),
            mode=blob["mode"],
            length_scale=blob["length_scale"],
            manifest=manifest,
        )


def train_surrogate(
    pricer: BlackBoxPricer,
    grid: FeatureGrid,
    rank: int,
    sweeps: int = 4,
    seed: int = 0,
    mode: str = "linear",
    length_scale: float | None = None,
    tol: float | None = None,
    validation_size: int = 256,
    index_sets=None,
    extra_manifest: dict | None = None,
) -> SurrogateModel:
    """Build a surrogate by running cross sweeps against the pricer.

    The requested rank is clipped per bond to the structural maximum of the
    quantized grid; the evaluations consumed by the sweeps are the effective
    training-set size and land in the manifest along with the cross report.
    Externally supplied ``index_sets`` override the random initialization.
    """
    if pricer.shape != grid.shape:
        raise DimensionMismatchError("pricer shape does not match grid")
    ranks = feasible_ranks(grid.shape, rank)
    sets = index_sets if index_sets is not None else init_index_sets(grid.shape, ranks, seed)
    y_tt, report = tt_cross(
        pricer, sets, ranks=ranks, n_sweeps=sweeps, tol=tol, seed=seed,
        validation_size=validation_size,
    )
    run_blob = {
        "seed": seed,
        "rank_requested": int(rank),
        "sweeps_requested": int(sweeps),
        "mode": mode,
        "grid": grid.to_json(),
    }
    manifest = {
        "seed": seed,
        "rank_requested": int(rank),
        "cross_report": report.to_json(),
        "train_set_size": report.evals_used,
        "config_hash": config_hash(run_blob),
        "tool_version": __version__,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    return SurrogateModel(
        grid=grid, y_tt=y_tt, mode=mode, length_scale=length_scale, manifest=manifest
    )


@dataclass
class Portfolio:
    """Weighted positions over surrogates sharing one grid."""

    positions: list[tuple[SurrogateModel, float]]

    def __post_init__(self):
        if not self.positions:
            raise ValueError("portfolio needs at least one position")
        grid = self.positions[0][0].grid
        for model, _ in self.positions[1:]:
            if model.grid != grid:
                raise DimensionMismatchError("all positions must share one feature grid")

    @property
    def grid(self) -> FeatureGrid:
        return self.positions[0][0].grid

    def predict(self, x) -> float:
        return sum(w * model.predict(x) for model, w in self.positions)

    def predict_batch(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        out = np.zeros(xs.shape[0])
        for model, w in self.positions:
            out += w * model.predict_batch(xs)
        return out


def portfolio_tt(portfolio: Portfolio, eps: float = 1e-12) -> SurrogateModel:
    """Compress the weighted position sum back into a single surrogate.

    The linear combination is formed exactly (ranks add) and then rounded at
    eps, so evaluations match the explicit weighted sum to eps times the
    aggregate scale.
    """
    first, w0 = portfolio.positions[0]
    acc = tt_scale(first.y_tt, w0)
    for model, w in portfolio.positions[1:]:
        acc = tt_add(acc, tt_scale(model.y_tt, w))
    acc = tt_round(acc, eps)
    manifest = {
        "portfolio": {
            "weights": [w for _, w in portfolio.positions],
            "rounding_eps": eps,
            "positions": [m.manifest.get("config_hash") for m, _ in portfolio.positions],
        }
    }
    return SurrogateModel(
        grid=portfolio.grid,
        y_tt=acc,
        mode=first.mode,
        length_scale=first.length_scale,
        manifest=manifest,
    )


def evaluate_mae(model, test_set) -> float:
    """Mean absolute error of model predictions against reference prices.

    ``test_set`` is a sequence of (point, reference) pairs or a pair of
    arrays (points, references); ``model`` is anything with predict_batch.
    """
    if isinstance(test_set, tuple) and len(test_set) == 2:
        xs, refs = test_set
    else:
        xs = np.array([np.asarray(p, dtype=np.float64) for p, _ in test_set])
        refs = np.array([r for _, r in test_set], dtype=np.float64)
    if len(xs) == 0:
        raise ValueError("test set is empty")
    preds = model.predict_batch(np.atleast_2d(xs))
    return float(np.mean(np.abs(preds - np.asarray(refs, dtype=np.float64))))
