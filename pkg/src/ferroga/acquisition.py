"""Acquisition scoring and batch selection for active learning.

All five strategies map posterior (mean, std) vectors to scores; the batch
selector then takes the top-k unqueried candidates. Zero-std limits are
handled explicitly so fully-confident predictions never produce NaN.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr


class MissingIncumbentError(ValueError):
    """EI/POI need the best observed fitness; none was supplied."""


class ExhaustedPoolError(ValueError):
    """Requested more queries than there are unqueried candidates."""


class AcquisitionKind(Enum):
    MEAN = "mean"
    UNCERTAINTY = "uncertainty"
    UCB = "ucb"
    EI = "ei"
    POI = "poi"


_XI_DEFAULTS = {
    AcquisitionKind.UCB: 10.0,
    AcquisitionKind.EI: 0.01,
    AcquisitionKind.POI: 0.01,
}


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: AcquisitionKind = AcquisitionKind.UCB
    xi: float | None = None

    def __post_init__(self):
        if self.xi is None:
            object.__setattr__(self, "xi", _XI_DEFAULTS.get(self.kind, 0.0))
        if self.xi < 0:
            raise ValueError(f"xi must be >= 0, got {self.xi}")


def _phi(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z**2) / np.sqrt(2.0 * np.pi)


def score(
    spec: AcquisitionSpec,
    means: np.ndarray,
    stds: np.ndarray,
    best_observed: float | None = None,
) -> np.ndarray:
    """Score candidates for querying; larger means more attractive.

    Mean: mu. Uncertainty: sigma. UCB: mu + xi*sigma.
    EI: (mu - f* - xi) Phi(z) + sigma phi(z), z = (mu - f* - xi) / sigma,
    degenerating to max(mu - f* - xi, 0) at sigma = 0.
    POI: Phi(z), degenerating to a 0/1 step at sigma = 0.
    """
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)
    if means.shape != stds.shape:
        raise ValueError(f"means shape {means.shape} != stds shape {stds.shape}")
    if (stds < 0).any():
        raise ValueError("stds must be >= 0")

    if spec.kind is AcquisitionKind.MEAN:
        return means.copy()
    if spec.kind is AcquisitionKind.UNCERTAINTY:
        return stds.copy()
    if spec.kind is AcquisitionKind.UCB:
        return means + spec.xi * stds

    if best_observed is None:
        raise MissingIncumbentError(f"{spec.kind.value} requires best_observed")
    improve = means - best_observed - spec.xi
    out = np.empty_like(means)
    positive_std = stds > 0
    z = np.zeros_like(means)
    z[positive_std] = improve[positive_std] / stds[positive_std]
    if spec.kind is AcquisitionKind.EI:
        out[positive_std] = (
            improve[positive_std] * ndtr(z[positive_std])
            + stds[positive_std] * _phi(z[positive_std])
        )
        out[~positive_std] = np.maximum(improve[~positive_std], 0.0)
        return out
    # POI
    out[positive_std] = ndtr(z[positive_std])
    out[~positive_std] = (improve[~positive_std] > 0).astype(float)
    return out


def select_batch(scores: np.ndarray, already_queried, k: int) -> list[int]:
    """Top-k unqueried indices by score, ties broken toward lower index."""
    scores = np.asarray(scores, dtype=float)
    queried = set(int(i) for i in already_queried)
    pool = [i for i in range(scores.size) if i not in queried]
    if k > len(pool):
        raise ExhaustedPoolError(f"requested {k} queries but only {len(pool)} unqueried")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    pool.sort(key=lambda i: (-scores[i], i))
    return pool[:k]
