"""Threshold-routed hybrid inference between a pruned and an unpruned model.

Every sample is first predicted by the cheap pruned model; samples whose
aggregated predicted spread exceeds the threshold are re-inferred by the
unpruned model, which contributes a point prediction. Energy is accounted
analytically: every sample is charged the pruned network's energy, re-inferred
samples additionally the unpruned network's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn.model import GaussianPrediction, Model, predict_batch
from .synthdata import Dataset


@dataclass(frozen=True)
class HybridConfig:
    """Routing threshold on the aggregated spread; +inf keeps every pruned
    prediction, 0 re-infers everything."""

    tau: float

    def __post_init__(self) -> None:
        if math.isnan(self.tau) or self.tau < 0:
            raise ValueError(f"tau must be >= 0 (or +inf), got {self.tau}")


@dataclass(frozen=True)
class SampleRoute:
    sample_id: str
    source: str  # "pruned" | "unpruned"
    prediction: np.ndarray
    sigma_agg: float


@dataclass(frozen=True)
class HybridResult:
    per_sample: tuple[SampleRoute, ...]
    reinferred_count: int
    total_energy: float
    rmse_overall: float
    rmse_by_stratum: dict[str, float]


@dataclass(frozen=True)
class SweepRow:
    tau: float
    reinferred_count: int
    reinferred_by_stratum: dict[str, int]
    total_energy: float
    rmse: float
    rmse_by_stratum: dict[str, float]
    energy_saving_vs_unpruned: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]


@dataclass(frozen=True)
class PredictionCache:
    """Per-sample state shared by every threshold: one inference pass per model."""

    ids: list[str]
    strata: np.ndarray
    targets: np.ndarray
    mu_pruned: np.ndarray
    sigma_agg: np.ndarray
    mu_unpruned: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def aggregate_sigma(pred: GaussianPrediction) -> float:
    """Sum of the per-category spreads; the routing statistic."""
    return float(np.sum(pred.sigma))


def route(sigma_agg: float, tau: float) -> str:
    """"reinfer" iff the aggregated spread strictly exceeds the threshold."""
    return "reinfer" if sigma_agg > tau else "keep"


def rmse(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Root mean squared residual over samples and categories."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {targets.shape}")
    return float(np.sqrt(((predictions - targets) ** 2).mean()))


def rmse_by_stratum(predictions, targets, strata) -> dict[str, float]:
    strata = np.asarray(strata)
    out = {}
    for stratum in sorted(set(strata.tolist())):
        mask = strata == stratum
        out[str(stratum)] = rmse(predictions[mask], targets[mask])
    return out


def per_sample_rmse(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return np.sqrt(((np.asarray(predictions) - np.asarray(targets)) ** 2).mean(axis=1))


def pearson(xs, ys) -> float:
    """Product-moment correlation; rejects degenerate inputs."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be 1d and the same length")
    if len(xs) < 2:
        raise ValueError("need at least two points")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    vx = float((xc**2).sum())
    vy = float((yc**2).sum())
    if vx == 0.0 or vy == 0.0:
        raise ValueError("zero variance")
    return float((xc * yc).sum() / math.sqrt(vx * vy))


def cache_predictions(pruned_model: Model, unpruned_model: Model, dataset: Dataset) -> PredictionCache:
    """Run both models once over the dataset and cache what the sweep needs."""
    if pruned_model.category_count != unpruned_model.category_count:
        raise ValueError(
            f"category count mismatch: pruned {pruned_model.category_count} "
            f"vs unpruned {unpruned_model.category_count}"
        )
    mu_p, sigma_p = predict_batch(pruned_model, dataset.images)
    mu_u, _ = predict_batch(unpruned_model, dataset.images)
    return PredictionCache(
        ids=list(dataset.ids),
        strata=np.asarray(dataset.strata),
        targets=np.asarray(dataset.targets, dtype=np.float64),
        mu_pruned=mu_p,
        sigma_agg=sigma_p.sum(axis=1),
        mu_unpruned=mu_u,
    )


def result_from_cache(
    cache: PredictionCache, tau: float, e_pruned: float, e_unpruned: float
) -> HybridResult:
    HybridConfig(tau)  # validate
    reinfer = cache.sigma_agg > tau
    predictions = np.where(reinfer[:, None], cache.mu_unpruned, cache.mu_pruned)
    count = int(reinfer.sum())
    per_sample = tuple(
        SampleRoute(
            sample_id=cache.ids[i],
            source="unpruned" if reinfer[i] else "pruned",
            prediction=predictions[i],
            sigma_agg=float(cache.sigma_agg[i]),
        )
        for i in range(len(cache))
    )
    return HybridResult(
        per_sample=per_sample,
        reinferred_count=count,
        total_energy=len(cache) * e_pruned + count * e_unpruned,
        rmse_overall=rmse(predictions, cache.targets),
        rmse_by_stratum=rmse_by_stratum(predictions, cache.targets, cache.strata),
    )


def hybrid_predict(
    pruned_model: Model,
    unpruned_model: Model,
    dataset: Dataset,
    tau: float,
    e_pruned: float,
    e_unpruned: float,
) -> HybridResult:
    """Route one dataset at a single threshold; see the module docstring."""
    cache = cache_predictions(pruned_model, unpruned_model, dataset)
    return result_from_cache(cache, tau, e_pruned, e_unpruned)


def sweep_from_cache(
    cache: PredictionCache, taus, e_pruned: float, e_unpruned: float
) -> SweepResult:
    taus = list(taus)
    if not taus:
        raise ValueError("empty tau list")
    if sorted(taus) != taus:
        raise ValueError("taus must be sorted ascending")
    n = len(cache)
    baseline_unpruned = n * e_unpruned
    rows = []
    for tau in taus:
        HybridConfig(tau)
        reinfer = cache.sigma_agg > tau
        predictions = np.where(reinfer[:, None], cache.mu_unpruned, cache.mu_pruned)
        count = int(reinfer.sum())
        by_stratum = {
            str(s): int(reinfer[cache.strata == s].sum())
            for s in sorted(set(cache.strata.tolist()))
        }
        energy = n * e_pruned + count * e_unpruned
        rows.append(
            SweepRow(
                tau=float(tau),
                reinferred_count=count,
                reinferred_by_stratum=by_stratum,
                total_energy=energy,
                rmse=rmse(predictions, cache.targets),
                rmse_by_stratum=rmse_by_stratum(predictions, cache.targets, cache.strata),
                energy_saving_vs_unpruned=1.0 - energy / baseline_unpruned,
            )
        )
    return SweepResult(rows=tuple(rows))


def threshold_sweep(
    pruned_model: Model,
    unpruned_model: Model,
    dataset: Dataset,
    taus,
    e_pruned: float,
    e_unpruned: float,
) -> SweepResult:
    """One row per threshold from a single pass of cached per-sample predictions."""
    cache = cache_predictions(pruned_model, unpruned_model, dataset)
    return sweep_from_cache(cache, taus, e_pruned, e_unpruned)


def default_tau_grid(sigma_agg: np.ndarray, quantiles=None) -> list[float]:
    """Endpoint sentinels plus spread quantiles of the observed population."""
    if quantiles is None:
        quantiles = [i / 10 for i in range(1, 10)]
    interior = sorted({float(np.quantile(sigma_agg, q)) for q in quantiles})
    return [0.0] + interior + [math.inf]
