"""Mixture-of-Gaussians fusion algebra for 1D height states.

Each fused cell keeps ``{mean, variance, precision_sum, count}``. Unlike a
plain Kalman product, whose posterior variance only shrinks with the sensor
noise, the mixture variance also captures the observed spread between
measurements, so disagreeing measurements leave a visibly uncertain cell.

All operations are pure functions over immutable values and are safe to call
from any number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

__all__ = [
    "COUNT_MAX",
    "EMPTY_STATE",
    "CellState",
    "GaussianMeasurement",
    "KalmanState",
    "fuse_states",
    "inflate",
    "kalman_update",
    "omg_batch",
    "omg_update",
    "omg_update_overflow_safe",
]

# Counts are stored as 32-bit unsigned; they saturate instead of wrapping.
COUNT_MAX = 2**32 - 1


@dataclass(frozen=True, slots=True)
class GaussianMeasurement:
    """One scalar measurement: height value in meters, variance in m^2."""

    value: float
    variance: float


@dataclass(frozen=True, slots=True)
class CellState:
    """Fused state of one cell.

    ``precision_sum`` is the sum of the measurement precisions (1/variance),
    ``count`` the number of fused measurements. The empty state is the
    distinguished value with ``count == 0`` and ``precision_sum == 0`` and
    acts as the identity element of :func:`fuse_states`.
    """

    mean: float = 0.0
    variance: float = 0.0
    precision_sum: float = 0.0
    count: int = 0

    @property
    def is_empty(self) -> bool:
        return self.count == 0 and self.precision_sum == 0.0


EMPTY_STATE = CellState()


@dataclass(frozen=True, slots=True)
class KalmanState:
    """Posterior of a scalar Kalman (product-of-Gaussians) filter."""

    mean: float
    variance: float


def _as_measurement(m) -> GaussianMeasurement:
    if isinstance(m, GaussianMeasurement):
        return m
    value, variance = m
    return GaussianMeasurement(float(value), float(variance))


def _check_measurement(m: GaussianMeasurement) -> None:
    if not (math.isfinite(m.value) and math.isfinite(m.variance)):
        raise ValueError(f"measurement must be finite, got {m!r}")
    if m.variance <= 0.0:
        raise ValueError(f"measurement variance must be > 0, got {m.variance}")


def _saturate(count: int) -> int:
    return count if count < COUNT_MAX else COUNT_MAX


def omg_batch(measurements: Iterable[GaussianMeasurement | Sequence[float]]) -> CellState:
    """Fuse a whole measurement list with the closed-form batch formulas.

    S = sum(1/v_i), mean = sum(x_i/v_i) / S,
    variance = sum((v_i + x_i^2) / v_i) / S - mean^2.

    This is the brute-force reference the cumulative update is checked
    against.

    Raises:
        ValueError: on an empty list, a non-finite value or a variance <= 0.
    """
    precision_sum = 0.0
    weighted_sum = 0.0
    second_moment = 0.0  # sum of (v_i + x_i^2)/v_i
    n = 0
    for raw in measurements:
        m = _as_measurement(raw)
        _check_measurement(m)
        w = 1.0 / m.variance
        precision_sum += w
        weighted_sum += w * m.value
        second_moment += (m.variance + m.value * m.value) / m.variance
        n += 1
    if n == 0:
        raise ValueError("omg_batch needs at least one measurement")
    mean = weighted_sum / precision_sum
    variance = second_moment / precision_sum - mean * mean
    return CellState(mean, variance, precision_sum, _saturate(n))


def omg_update(prior: CellState, m: GaussianMeasurement | Sequence[float]) -> CellState:
    """One cumulative fusion step; folding a sequence reproduces omg_batch.

    The second-moment contribution of the new measurement is accumulated as
    the grouped term (v + x^2)/v, which is the term-by-term expansion of the
    batch formula, so batch and cumulative results agree to rounding error.
    Updating the empty state is equivalent to ``omg_batch([m])``.
    """
    m = _as_measurement(m)
    _check_measurement(m)
    s1 = prior.precision_sum + 1.0 / m.variance
    mean = (prior.precision_sum * prior.mean + m.value / m.variance) / s1
    prior_moment = prior.precision_sum * (prior.variance + prior.mean * prior.mean)
    variance = (prior_moment + (m.variance + m.value * m.value) / m.variance) / s1 - mean * mean
    return CellState(mean, variance, s1, _saturate(prior.count + 1))


def omg_update_overflow_safe(prior: CellState, m: GaussianMeasurement | Sequence[float]) -> CellState:
    """Cumulative update that never squares a raw height value.

    Equivalent to :func:`omg_update` (to rounding error) but rearranged in
    Welford style around the running mean: the cell variance decomposes into
    count/S plus the precision-weighted spread sum(w_i (x_i - mean)^2)/S, and
    the spread is updated via (x - mean_prior)(x - mean_post). This stays
    finite for |x| up to ~1e150 where x^2 in the direct form overflows.
    """
    m = _as_measurement(m)
    _check_measurement(m)
    w = 1.0 / m.variance
    s1 = prior.precision_sum + w
    # spread = S * (variance - count/S); zero for the empty state
    spread = prior.precision_sum * prior.variance - prior.count
    mean = prior.mean + (w / s1) * (m.value - prior.mean)
    spread += w * (m.value - prior.mean) * (m.value - mean)
    count = _saturate(prior.count + 1)
    variance = count / s1 + spread / s1
    return CellState(mean, variance, s1, count)


def fuse_states(a: CellState, b: CellState) -> CellState:
    """Fuse two cell states as if their measurement groups were one batch.

    S = S_a + S_b, mean = (S_a mean_a + S_b mean_b) / S,
    variance = (S_a (var_a + mean_a^2) + S_b (var_b + mean_b^2)) / S - mean^2.

    Associative and commutative up to rounding; the empty state is the
    identity element.
    """
    if a.is_empty:
        return b
    if b.is_empty:
        return a
    s = a.precision_sum + b.precision_sum
    mean = (a.precision_sum * a.mean + b.precision_sum * b.mean) / s
    moment = a.precision_sum * (a.variance + a.mean * a.mean) + b.precision_sum * (
        b.variance + b.mean * b.mean
    )
    variance = moment / s - mean * mean
    return CellState(mean, variance, s, _saturate(a.count + b.count))


def inflate(state: CellState, k: float) -> CellState:
    """Inflate past uncertainty by factor k >= 1.

    variance' = variance + (count + 1)(k - 1), precision_sum' = S / k; mean
    and count are unchanged. Applying k twice is NOT the same as applying k^2
    once for the variance term (S does compose); only single application is
    contractual.
    """
    if state.is_empty:
        raise ValueError("cannot inflate the empty state")
    if k < 1.0:
        raise ValueError(f"inflation factor must be >= 1, got {k}")
    return CellState(
        state.mean,
        state.variance + (state.count + 1) * (k - 1.0),
        state.precision_sum / k,
        state.count,
    )


def kalman_update(
    prior: KalmanState | None, m: GaussianMeasurement | Sequence[float]
) -> KalmanState:
    """Scalar Kalman update (product of Gaussians).

    mean = (mean_prior * v + x * var_prior) / (var_prior + v),
    variance = var_prior * v / (var_prior + v).

    ``prior=None`` starts the filter: the posterior is the measurement
    itself. The Kalman mean equals the mixture mean for the same sequence;
    the Kalman variance is never larger.
    """
    m = _as_measurement(m)
    _check_measurement(m)
    if prior is None:
        return KalmanState(m.value, m.variance)
    if prior.variance <= 0.0:
        raise ValueError(f"prior variance must be > 0, got {prior.variance}")
    denom = prior.variance + m.variance
    mean = (prior.mean * m.variance + m.value * prior.variance) / denom
    variance = prior.variance * m.variance / denom
    return KalmanState(mean, variance)
