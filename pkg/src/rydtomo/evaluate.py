"""Error measures for reconstructed networks.

Position error: a greedy assignment pairs each actual atom with the nearest
unclaimed prediction, then the mean distance over pairs is normalised by the
mean pairwise distance of the actual layout.  This relative error is
dimensionless and comparable across box sizes; its natural ceiling is the
same statistic between two unrelated random layouts, which
:func:`random_layout_baseline` estimates by Monte Carlo.

Coupling error: per-element relative deviations |pred - actual| / |actual|,
with near-zero actual values excluded via a floor tied to each component's
training scale, plus per-component Pearson correlations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import sample_box_layout, DEFAULT_MIN_SEPARATION
from .seeding import derive_seed


def pair_predictions(actual: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """Greedy nearest-prediction assignment, in actual-atom order.

    Returns indices into ``predicted`` such that prediction ``out[n]`` is
    matched with actual atom n.  Distance ties go to the lower prediction
    index.
    """
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape or actual.ndim != 2:
        raise ValueError(f"layout shapes differ: {actual.shape} vs {predicted.shape}")
    m = actual.shape[0]
    free = np.ones(m, dtype=bool)
    out = np.empty(m, dtype=int)
    for n in range(m):
        d = np.sqrt(((predicted - actual[n]) ** 2).sum(axis=1))
        d[~free] = np.inf
        pick = int(np.argmin(d))
        out[n] = pick
        free[pick] = False
    return out


def mean_pairwise_distance(coords: np.ndarray) -> float:
    coords = np.asarray(coords, dtype=float)
    m = coords.shape[0]
    if m < 2:
        raise ValueError("need at least two atoms for a pairwise distance")
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    iu = np.triu_indices(m, k=1)
    return float(dist[iu].mean())


def position_error(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Mean relative position error of one reconstruction (two or more atoms).

    Mean matched distance divided by the actual layout's mean pairwise
    distance.  Single-atom layouts have no internal scale; use
    :func:`position_error_absolute` for those.
    """
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape[0] < 2:
        raise ValueError("relative error is undefined for a single atom; "
                         "use position_error_absolute")
    matched = predicted[pair_predictions(actual, predicted)]
    dist = np.sqrt(((matched - actual) ** 2).sum(axis=1))
    return float(dist.mean() / mean_pairwise_distance(actual))


def position_error_absolute(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Mean matched distance in micrometres (valid for any atom count)."""
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    matched = predicted[pair_predictions(actual, predicted)]
    return float(np.sqrt(((matched - actual) ** 2).sum(axis=1)).mean())


@dataclass(frozen=True)
class PositionErrorSummary:
    per_record: np.ndarray
    mean: float
    median: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "median": self.median,
                "per_record": self.per_record.tolist()}


def summarize_position_errors(actuals: Sequence[np.ndarray],
                              predictions: Sequence[np.ndarray],
                              relative: bool = True) -> PositionErrorSummary:
    err = position_error if relative else position_error_absolute
    values = np.array([err(a, p) for a, p in zip(actuals, predictions)])
    return PositionErrorSummary(per_record=values, mean=float(values.mean()),
                                median=float(np.median(values)))


@dataclass(frozen=True)
class RandomLayoutBaseline:
    """Monte Carlo ceiling of the relative position error."""

    mean: float
    sem: float
    n_pairs: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "sem": self.sem, "n_pairs": self.n_pairs}


def random_layout_baseline(m: int, box_size: float, n_pairs: int = 1000,
                           seed: int = 0,
                           min_separation: float = DEFAULT_MIN_SEPARATION
                           ) -> RandomLayoutBaseline:
    """Relative position error between independent random layouts.

    Draws ``n_pairs`` (actual, predicted) layout pairs from the same
    distribution the datasets use and averages :func:`position_error`; a
    trained model must land well below this number to carry any information.
    """
    if m < 2:
        raise ValueError("the relative-error ceiling needs at least two atoms")
    values = np.empty(n_pairs)
    for i in range(n_pairs):
        actual = sample_box_layout(m, box_size, derive_seed(seed, "actual", i),
                                   min_separation)
        fake = sample_box_layout(m, box_size, derive_seed(seed, "predicted", i),
                                 min_separation)
        values[i] = position_error(actual.positions, fake.positions)
    return RandomLayoutBaseline(mean=float(values.mean()),
                                sem=float(values.std(ddof=1) / np.sqrt(n_pairs)),
                                n_pairs=n_pairs)


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sx = x.std()
    sy = y.std()
    if sx < 1e-300 or sy < 1e-300:
        raise ValueError("correlation is undefined for a constant sequence")
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


@dataclass(frozen=True)
class CouplingErrorSummary:
    """Relative errors and correlations for regressed environment couplings."""

    median_relative_error: float
    relative_errors: np.ndarray        # all retained per-element errors, flat
    n_excluded: int                    # elements under the near-zero floor
    component_names: list
    component_pearson: dict            # name -> r, only for varying components
    component_median_error: dict

    def to_dict(self) -> dict:
        return {"median_relative_error": self.median_relative_error,
                "n_excluded": self.n_excluded,
                "component_pearson": self.component_pearson,
                "component_median_error": self.component_median_error}


def coupling_errors(actual: np.ndarray, predicted: np.ndarray,
                    component_names: Sequence[str],
                    scales: Optional[np.ndarray] = None,
                    floor_factor: float = 1e-6) -> CouplingErrorSummary:
    """Per-element relative errors between coupling matrices of shape (R, K).

    Elements whose actual magnitude falls below ``floor_factor`` times the
    component scale (its standard deviation over the evaluation set unless
    ``scales`` is given) are excluded from the relative-error pool rather
    than allowed to blow it up; their count is reported.  Pearson
    correlations are computed per component wherever the actual values vary.
    """
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape or actual.ndim != 2:
        raise ValueError(f"coupling shapes differ: {actual.shape} vs {predicted.shape}")
    if actual.shape[1] != len(component_names):
        raise ValueError("one name per coupling component required")
    if scales is None:
        scales = actual.std(axis=0)
    scales = np.where(np.asarray(scales) < 1e-12, 1.0, np.asarray(scales))
    floor = floor_factor * scales
    keep = np.abs(actual) >= floor[None, :]
    rel = np.abs(predicted - actual)[keep] / np.abs(actual)[keep]
    correlations = {}
    medians = {}
    for k, name in enumerate(component_names):
        if actual[:, k].std() > 1e-12:
            correlations[name] = pearson(actual[:, k], predicted[:, k])
            kept = keep[:, k]
            if kept.any():
                medians[name] = float(np.median(
                    np.abs(predicted[kept, k] - actual[kept, k])
                    / np.abs(actual[kept, k])))
    return CouplingErrorSummary(
        median_relative_error=float(np.median(rel)) if rel.size else np.nan,
        relative_errors=rel,
        n_excluded=int((~keep).sum()),
        component_names=list(component_names),
        component_pearson=correlations,
        component_median_error=medians,
    )
