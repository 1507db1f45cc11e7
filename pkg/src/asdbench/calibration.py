"""Gamma-percentile thresholds and the score > threshold decision rule.

The special functions are written out here (asymptotic series plus upward
recurrence) so that thresholds do not depend on a particular scipy build.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateDataError, DomainError, InputError

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SHIFT_TO = 10.0
CLASSIFIER_SHIFT_EPS = 1e-6
THRESHOLD_HEADER = ("machine", "section", "shape", "scale", "percentile", "phi")


def lgamma(x: float) -> float:
    if not x > 0:
        raise DomainError(f"lgamma needs x > 0, got {x}")
    acc = 0.0
    while x < _SHIFT_TO:
        acc -= math.log(x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv * (1 / 12 - inv2 * (1 / 360 - inv2 * (1 / 1260 - inv2 * (1 / 1680 - inv2 / 1188))))
    return acc + (x - 0.5) * math.log(x) - x + _HALF_LOG_2PI + series


def digamma(x: float) -> float:
    if not x > 0:
        raise DomainError(f"digamma needs x > 0, got {x}")
    acc = 0.0
    while x < _SHIFT_TO:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = inv2 * (
        1 / 12
        - inv2 * (1 / 120 - inv2 * (1 / 252 - inv2 * (1 / 240 - inv2 * (1 / 132 - inv2 * 691 / 32760))))
    )
    return acc + math.log(x) - 0.5 / x - series


def trigamma(x: float) -> float:
    if not x > 0:
        raise DomainError(f"trigamma needs x > 0, got {x}")
    acc = 0.0
    while x < _SHIFT_TO:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv * (
        1.0
        + inv * 0.5
        + inv2 * (1 / 6 - inv2 * (1 / 30 - inv2 * (1 / 42 - inv2 * (1 / 30 - inv2 * 5 / 66))))
    )
    return acc + series


def regularized_lower_gamma(a: float, x: float) -> float:
    """P(a, x): power series below a + 1, Lentz continued fraction above."""
    if not a > 0:
        raise DomainError(f"shape must be positive, got {a}")
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    log_prefix = a * math.log(x) - x - lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        n = a
        for _ in range(100000):
            n += 1.0
            term *= x / n
            total += term
            if term < total * 1e-17:
                break
        return min(1.0, total * math.exp(log_prefix))
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 100000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return max(0.0, 1.0 - math.exp(log_prefix) * h)


@dataclass(frozen=True)
class GammaParams:
    shape: float
    scale: float

    def __post_init__(self):
        if not (math.isfinite(self.shape) and math.isfinite(self.scale)):
            raise DomainError("gamma parameters must be finite")
        if self.shape <= 0 or self.scale <= 0:
            raise DomainError(f"gamma parameters must be positive, got {self.shape}, {self.scale}")

    @property
    def mean(self) -> float:
        return self.shape * self.scale


def gamma_cdf(params: GammaParams, x: float) -> float:
    return regularized_lower_gamma(params.shape, x / params.scale)


def gamma_quantile(params: GammaParams, q: float) -> float:
    """Invert the CDF by bisection on x / scale, run until the bracket stops shrinking."""
    if not 0.0 < q < 1.0:
        raise InputError(f"quantile level must lie in (0, 1), got {q}")
    k = params.shape
    lo, hi = 0.0, max(1.0, k)
    while regularized_lower_gamma(k, hi) < q:
        lo, hi = hi, 2.0 * hi
    for _ in range(4000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if regularized_lower_gamma(k, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) * params.scale


def _shape_equation(k, target):
    return math.log(k) - digamma(k) - target


def _solve_shape_bisection(target):
    # ln k - digamma(k) decreases monotonically from +inf to 0
    lo, hi = 1.0, 1.0
    while _shape_equation(lo, target) < 0:
        lo *= 0.5
    while _shape_equation(hi, target) > 0:
        hi *= 2.0
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _shape_equation(mid, target) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gamma_fit(scores, shift: float = 0.0, max_iter: int = 100) -> GammaParams:
    """Maximum-likelihood gamma fit of ``scores + shift``.

    Newton on ln k - digamma(k) = ln(mean) - mean(ln x) from the
    method-of-moments start; falls back to bisection if a step leaves (0, inf).
    """
    x = np.asarray(scores, dtype=np.float64) + shift
    if x.size == 0:
        raise DegenerateDataError("cannot fit a gamma distribution to no scores")
    if not np.all(np.isfinite(x)):
        raise DomainError("scores must be finite")
    if np.any(x <= 0):
        raise DomainError(f"gamma support is positive; minimum shifted score is {x.min()}")
    mean = float(np.mean(x))
    var = float(np.var(x))
    if var == 0.0 or np.unique(x).size < 2:
        raise DegenerateDataError("scores have zero variance")
    target = math.log(mean) - float(np.mean(np.log(x)))
    if not target > 0:
        raise DegenerateDataError("log-mean gap is not positive; scores are numerically constant")

    k = mean * mean / var
    for _ in range(max_iter):
        f = _shape_equation(k, target)
        fprime = 1.0 / k - trigamma(k)
        step = f / fprime
        k_new = k - step
        if not (math.isfinite(k_new) and k_new > 0):
            k = _solve_shape_bisection(target)
            break
        done = abs(k_new - k) < 1e-10 * k
        k = k_new
        if done:
            break
    return GammaParams(k, mean / k)


def gamma_sample(params: GammaParams, n: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).gamma(params.shape, params.scale, n)


@dataclass(frozen=True)
class Threshold:
    """One decision threshold per (machine, section), shared by both domains."""

    value: float
    machine: str
    section: int
    percentile: float
    fitted: GammaParams
    shift: float = 0.0  # added to scores before fitting; ``value`` is in raw score units


def threshold_from_scores(scores, machine, section, percentile=0.9, shift_scores=False) -> Threshold:
    scores = np.asarray(scores, dtype=np.float64)
    if not 0.0 < percentile < 1.0:
        raise ConfigError(f"percentile must lie in (0, 1), got {percentile}")
    shift = 0.0
    if shift_scores and scores.size:
        shift = -float(np.min(scores)) + CLASSIFIER_SHIFT_EPS
    fitted = gamma_fit(scores, shift=shift)
    value = gamma_quantile(fitted, percentile) - shift
    return Threshold(value, machine, int(section), float(percentile), fitted, shift)


def calibrate(det, index, machine: str, section: int, percentile: float = 0.9) -> Threshold:
    """Score every train-split normal clip of the section (both domains) and fit the threshold."""
    from .detectors import training_scores

    scores = training_scores(det, index, machine, section)
    return threshold_from_scores(
        scores, machine, section, percentile, shift_scores=getattr(det, "shift_scores", False)
    )


def decide(score: float, threshold: Threshold) -> str:
    return "anomaly" if score > threshold.value else "normal"


def write_thresholds(path, thresholds) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(THRESHOLD_HEADER)
        for t in thresholds:
            writer.writerow(
                [t.machine, t.section, repr(t.fitted.shape), repr(t.fitted.scale), repr(t.percentile), repr(t.value)]
            )


def read_thresholds(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != THRESHOLD_HEADER:
            raise InputError(f"{path}: header {reader.fieldnames} != {list(THRESHOLD_HEADER)}")
        for row in reader:
            fitted = GammaParams(float(row["shape"]), float(row["scale"]))
            value = float(row["phi"])
            percentile = float(row["percentile"])
            shift = gamma_quantile(fitted, percentile) - value
            out.append(Threshold(value, row["machine"], int(row["section"]), percentile, fitted, shift))
    return out
