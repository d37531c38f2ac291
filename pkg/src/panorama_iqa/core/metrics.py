"""
Agreement metrics between predicted and subjective quality scores.

SRCC is the Pearson correlation of average ranks. PLCC and RMSE are computed
after remapping predictions with a five-parameter logistic fitted to the
labels by Levenberg-Marquardt from a fixed set of starting points.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit
from scipy.stats import rankdata

from panorama_iqa.exceptions import (
    FitFailureError,
    ShapeMismatchError,
    UndefinedMetricError,
)

logger = logging.getLogger(__name__)

MIN_FIT_POINTS = 5

FIT_OPTIONS = {
    "method": "lm",
    "ftol": 1e-10,
    "xtol": 1e-15,
    "gtol": 1e-15,
    "max_nfev": 200,
}


def _pair(preds, labels, minimum: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if preds.size != labels.size:
        raise ShapeMismatchError(f"{preds.size} predictions for {labels.size} labels")
    if preds.size < minimum:
        raise UndefinedMetricError(f"need at least {minimum} samples, got {preds.size}")
    return preds, labels


def pearson(x, y) -> float:
    """
    Pearson linear correlation.

    Raises:
        UndefinedMetricError: Fewer than 2 samples or a constant side
    """
    x, y = _pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("correlation is undefined for constant input")
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def srcc(preds, labels) -> float:
    """Spearman rank correlation with average ranks for ties."""
    preds, labels = _pair(preds, labels)
    return pearson(
        rankdata(preds, method="average"), rankdata(labels, method="average")
    )


# ==================== Logistic remapping ====================


@dataclass(frozen=True)
class Logistic5Params:
    """f(x) = b1 * (0.5 - 1 / (1 + exp(b2 * (x - b3)))) + b4 * x + b5"""

    b1: float
    b2: float
    b3: float
    b4: float
    b5: float

    @classmethod
    def identity(cls) -> "Logistic5Params":
        return cls(0.0, 0.0, 0.0, 1.0, 0.0)

    @classmethod
    def from_array(cls, values) -> "Logistic5Params":
        return cls(*(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.array([self.b1, self.b2, self.b3, self.b4, self.b5])

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_array())))

    def __call__(self, x) -> np.ndarray:
        return logistic5(x, self)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _logistic(beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    b1, b2, b3, b4, b5 = beta
    # 0.5 - 1/(1 + exp(t)) == expit(t) - 0.5
    return b1 * (expit(b2 * (x - b3)) - 0.5) + b4 * x + b5


def _logistic_jacobian(beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    b1, b2, b3, _, _ = beta
    s = expit(b2 * (x - b3))
    slope = s * (1.0 - s)
    return np.column_stack(
        [
            s - 0.5,
            b1 * slope * (x - b3),
            -b1 * slope * b2,
            x,
            np.ones_like(x),
        ]
    )


def logistic5(x, params: Logistic5Params) -> np.ndarray:
    """Apply the five-parameter logistic to ``x``."""
    return _logistic(params.as_array(), np.asarray(x, dtype=np.float64))


def _sse(beta: np.ndarray, preds: np.ndarray, labels: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        residual = _logistic(beta, preds) - labels
    value = float(residual @ residual)
    return value if np.isfinite(value) else np.inf


def initial_guesses(preds, labels) -> List[np.ndarray]:
    """
    Deterministic starting points for the fit.

    The first start is the least-squares line (b1 = 0). The others place the
    logistic step at the median prediction with both signs of b2.
    """
    slope, intercept = np.polyfit(preds, labels, 1)
    median = float(np.median(preds))
    spread = float(np.ptp(labels))
    steepness = 1.0 / float(np.std(preds))
    starts = [np.array([0.0, steepness, median, slope, intercept])]
    for sign in (1.0, -1.0):
        starts.append(np.array([spread, sign * steepness, median, slope, intercept]))
        starts.append(
            np.array([spread, sign * steepness, median, 0.0, float(np.mean(labels))])
        )
    return starts


def fit_logistic5(preds, labels) -> Logistic5Params:
    """
    Least-squares fit of the five-parameter logistic.

    Every start is refined with Levenberg-Marquardt; the candidate (refined or
    not) with the smallest SSE wins, so the result is never worse than the
    least-squares line.

    Args:
        preds: Model predictions (at least 5, not all equal)
        labels: Subjective scores

    Raises:
        UndefinedMetricError: Too few points or constant predictions
        FitFailureError: Every candidate is non-finite
    """
    preds, labels = _pair(preds, labels)
    if preds.size < MIN_FIT_POINTS:
        raise UndefinedMetricError(
            f"logistic fit needs at least {MIN_FIT_POINTS} points, got {preds.size}"
        )
    if np.ptp(preds) == 0.0:
        raise UndefinedMetricError("logistic fit is undefined for constant predictions")

    best, best_sse = None, np.inf
    for start in initial_guesses(preds, labels):
        candidates = [start]
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                result = least_squares(
                    lambda beta: _logistic(beta, preds) - labels,
                    start,
                    jac=lambda beta: _logistic_jacobian(beta, preds),
                    **FIT_OPTIONS,
                )
            candidates.append(result.x)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            logger.debug(f"Logistic fit from {start} failed: {e}")
        for candidate in candidates:
            sse = _sse(candidate, preds, labels)
            if np.all(np.isfinite(candidate)) and sse < best_sse:
                best, best_sse = candidate, sse

    if best is None:
        raise FitFailureError("every logistic fit start diverged")
    logger.debug(f"Logistic fit SSE {best_sse:.3e}")
    return Logistic5Params.from_array(best)


def raw_rmse(preds, labels) -> float:
    preds, labels = _pair(preds, labels, minimum=1)
    return float(np.sqrt(np.mean((preds - labels) ** 2)))


def plcc(preds, labels, params: Optional[Logistic5Params] = None) -> float:
    """Pearson correlation after logistic remapping (fitted when ``params`` is None)."""
    preds, labels = _pair(preds, labels)
    if params is None:
        params = fit_logistic5(preds, labels)
    return pearson(logistic5(preds, params), labels)


def rmse(preds, labels, params: Optional[Logistic5Params] = None) -> float:
    """Root mean squared error after logistic remapping."""
    preds, labels = _pair(preds, labels, minimum=1)
    if params is None:
        params = fit_logistic5(preds, labels)
    return raw_rmse(logistic5(preds, params), labels)
