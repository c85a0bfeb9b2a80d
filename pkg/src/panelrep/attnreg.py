"""Regularizers over the per-sentence inter-image attention matrix.

The attention matrix has one row per generated word and one column per
panel image; rows are softmax outputs.  Three costs shape it:

* coverage_cost   -- squared drift of each column total from one, so every
                     image gets attended across the sentence.
* salience_score  -- mean over rows of (max - mean) / mean, rewarding rows
                     that single out one image.
* variation_score -- mean over columns of std-over-time / mean-over-time,
                     rewarding attention that moves between words.

``attention_cost`` combines them: the coverage term is added directly,
the other two are inverted (a reward becomes 1/score) with a floor that
both avoids division blow-ups early in training and zeroes the gradient
when a score sits below the floor.
"""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import (
    ShapeError,
    Tensor,
    clamp_min,
    div,
    mul,
    std_rows,
    sub,
    tmax,
    tmean,
    transpose,
    tsum,
)


MEAN_FLOOR = 1e-8


@dataclass(frozen=True)
class RegWeights:
    """Scales for the three attention costs plus the inversion floor."""

    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.5
    delta: float = 0.001

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def inactive(self) -> bool:
        return self.lambda1 == 0 and self.lambda2 == 0 and self.lambda3 == 0


def _check_alpha(alpha: Tensor) -> None:
    if alpha.ndim != 2:
        raise ShapeError(f"attention matrix must be rank 2, got shape {alpha.shape}")
    if alpha.shape[0] < 1 or alpha.shape[1] < 1:
        raise ShapeError(f"attention matrix is empty: shape {alpha.shape}")


def coverage_cost(alpha: Tensor) -> Tensor:
    """Sum over images of (1 - column total)^2; zero iff every column sums to one."""
    _check_alpha(alpha)
    gap = 1.0 - tsum(alpha, axis=0, keepdims=True)
    return tsum(mul(gap, gap))


def salience_score(alpha: Tensor) -> Tensor:
    """Mean over rows of (max - mean) / mean; ties take the first max."""
    _check_alpha(alpha)
    row_max = tmax(alpha, axis=1, keepdims=True)
    row_mean = tmean(alpha, axis=1, keepdims=True)
    return tmean(div(sub(row_max, row_mean), row_mean))


def variation_score(alpha: Tensor) -> Tensor:
    """Mean over columns of population-std over time divided by column mean.

    Row-stochastic input keeps column means positive mathematically, but
    saturated float32 attention can underflow them to zero, so the
    denominator is floored far below any non-degenerate mean.
    """
    _check_alpha(alpha)
    cols = transpose(alpha)
    col_std = std_rows(cols)
    col_mean = clamp_min(tmean(cols, axis=1, keepdims=True), MEAN_FLOOR)
    return tmean(div(col_std, col_mean))


def attention_cost(alpha: Tensor, w: RegWeights) -> Tensor:
    """Combined attention cost for one sentence's attention matrix.

    Terms with a zero weight are omitted from the graph entirely so the
    ablated model carries no gradient from them.
    """
    _check_alpha(alpha)
    total = None
    if w.lambda1 > 0:
        total = w.lambda1 * coverage_cost(alpha)
    if w.lambda2 > 0:
        term = w.lambda2 / clamp_min(salience_score(alpha), w.delta)
        total = term if total is None else total + term
    if w.lambda3 > 0:
        term = w.lambda3 / clamp_min(variation_score(alpha), w.delta)
        total = term if total is None else total + term
    if total is None:
        return Tensor(0.0, dtype=alpha.dtype)
    return total


def report_attention_cost(alphas: list[Tensor], w: RegWeights) -> Tensor:
    """Mean attention cost over a report's non-empty attention matrices."""
    live = [a for a in alphas if a is not None and a.shape[0] > 0]
    if not live:
        raise ShapeError("report has no attention matrices to regularize")
    total = attention_cost(live[0], w)
    for alpha in live[1:]:
        total = total + attention_cost(alpha, w)
    return total / float(len(live))
