"""Iterative denoising inference.

Ranking a query starts from pure Gaussian noise in label space and
alternates two moves along a descending set of timesteps: ask the model
for the clean labels, then draw the previous-step noisy labels from the
closed-form posterior around that estimate. At the last visited step the
model's estimate is returned directly (no noise is added), and documents
are ordered by that estimate, ties broken by list position.

Fewer iterations than the training horizon are supported by visiting a
uniformly spaced subset of timesteps and re-deriving the posterior
coefficients for the visited subsequence from cumulative
signal-retention ratios, so the marginal noise level at each visited
step is unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, IncompatibilityError, NumericError
from .network import DenoiseModel
from .schedule import ScheduleTable, posterior, strided_table


@dataclass(frozen=True)
class SamplerConfig:
    reverse_steps: int
    seed: int = 0
    deterministic_final: bool = True
    zero_variance: bool = False

    def __post_init__(self):
        if self.reverse_steps < 1:
            raise ConfigError(
                f"reverse_steps must be >= 1, got {self.reverse_steps}"
            )
        if not self.deterministic_final:
            raise ConfigError(
                "the final reverse step never adds noise; deterministic_final "
                "cannot be disabled"
            )


@dataclass(frozen=True)
class RankOutput:
    scores: np.ndarray  # (n,) predicted clean labels
    order: np.ndarray  # (n,) document indices, best first


def stride_schedule(timesteps: int, reverse_steps: int) -> list[int]:
    """Uniformly spaced descending subset of {1..T} starting at T, ending at 1."""
    if reverse_steps < 1:
        raise ConfigError(f"reverse_steps must be >= 1, got {reverse_steps}")
    if reverse_steps > timesteps:
        raise ConfigError(
            f"reverse_steps ({reverse_steps}) exceeds schedule length ({timesteps})"
        )
    if reverse_steps == 1:
        return [timesteps]
    spacing = (timesteps - 1) / (reverse_steps - 1)
    visited = [round(timesteps - i * spacing) for i in range(reverse_steps)]
    for prev, cur in zip(visited, visited[1:]):
        if cur >= prev:
            raise NumericError(
                f"stride construction produced a non-descending schedule: {visited}"
            )
    return visited


def _ranking_order(scores: np.ndarray) -> np.ndarray:
    return np.lexsort((np.arange(scores.size), -scores))


def _check_compatible(model: DenoiseModel, table: ScheduleTable) -> None:
    spec = model.schedule
    if table.kind != spec.kind or table.timesteps != spec.timesteps:
        raise IncompatibilityError(
            f"model was trained with schedule {spec.kind}/T={spec.timesteps}, "
            f"sampler was given {table.kind}/T={table.timesteps}"
        )


def rank_query(
    model: DenoiseModel,
    features: np.ndarray,
    table: ScheduleTable,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
    y_init: np.ndarray | None = None,
) -> RankOutput:
    """Run the reverse process on one query list and rank its documents."""
    _check_compatible(model, table)
    visited = stride_schedule(table.timesteps, cfg.reverse_steps)
    effective = strided_table(table, list(reversed(visited)))
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    features = np.asarray(features)
    n = features.shape[0]
    if y_init is None:
        y = rng.standard_normal(n)
    else:
        y = np.asarray(y_init, dtype=np.float64).reshape(n).copy()
    steps = len(visited)
    with ad.no_grad():
        y_hat = None
        for j in range(steps, 0, -1):
            t_orig = visited[steps - j]
            y_hat = model.predict_y0(features, y, t=t_orig).data.reshape(n)
            if j > 1:
                mean, var = posterior(y, np.asarray(y_hat, dtype=np.float64), j, effective)
                if cfg.zero_variance:
                    y = mean
                else:
                    y = mean + np.sqrt(var) * rng.standard_normal(n)
    scores = np.asarray(y_hat, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise NumericError("reverse process produced non-finite scores")
    return RankOutput(scores=scores, order=_ranking_order(scores))


def rank_query_repeated(
    model: DenoiseModel,
    features: np.ndarray,
    table: ScheduleTable,
    cfg: SamplerConfig,
    repeats: int,
) -> list[RankOutput]:
    """Independent repeated rankings with per-run child RNG streams."""
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    children = np.random.SeedSequence(cfg.seed).spawn(repeats)
    return [
        rank_query(model, features, table, cfg, rng=np.random.default_rng(child))
        for child in children
    ]
