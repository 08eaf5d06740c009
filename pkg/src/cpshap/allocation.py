"""Allocation rules for cooperative games.

Exact Shapley values are computed through Harsanyi dividends (the Möbius
transform of the game); proportional Shapley weights each dividend by the
players' absolute individual values.  Sampled estimates average marginal
contributions over random orderings, with an importance-sampling variant
that reweights orderings drawn from one distribution toward another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._threads import resolve_threads, run_tasks
from .exceptions import (
    DegenerateWeightsError,
    DimensionError,
    IncompleteDividendsError,
    ParameterError,
    SupportMismatchError,
)
from .games import (
    EXHAUSTIVE_PLAYER_CAP,
    CoalitionGame,
    check_player_count,
    permutation_chain,
    popcount_array,
)

__all__ = [
    "AllocationVector",
    "RandomOrderDistribution",
    "harsanyi_dividends",
    "mobius_reconstruct",
    "shapley_exact",
    "proportional_shapley_exact",
    "ps_permutation_sample",
    "ps_permutation_pmf",
    "marginal_contributions",
    "draw_weber_samples",
    "weber_mc_estimate",
    "importance_reweight",
]


@dataclass(frozen=True)
class AllocationVector:
    """One allocation of ``v(D) - v(empty)`` over the players.

    ``std_err`` is per-coordinate and only present for sampled estimators.
    """

    values: np.ndarray
    kind: str  # "shapley" | "proportional_shapley"
    estimator: str  # "exact" | "monte_carlo" | "importance_sampling"
    m: int = 0
    std_err: np.ndarray | None = None
    seed: int | None = None

    @property
    def total(self) -> float:
        return float(np.sum(self.values))


def _check_game_exhaustive(game: CoalitionGame) -> int:
    if game.d > EXHAUSTIVE_PLAYER_CAP:
        raise DimensionError(
            f"exhaustive allocation needs d <= {EXHAUSTIVE_PLAYER_CAP}, got {game.d}"
        )
    return game.d


def dividends_dense(values: np.ndarray, d: int) -> np.ndarray:
    """Möbius transform of mask-indexed game values.

    ``values`` has shape ``(2**d,)`` or ``(2**d, k)``; the transform is
    applied along the mask axis, so ``k`` games share one pass.
    """
    arr = np.array(values, dtype=np.float64, copy=True)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    n, k = arr.shape
    if n != (1 << d):
        raise DimensionError(f"expected {1 << d} mask-indexed values, got {n}")
    for j in range(d):
        block = 1 << j
        view = arr.reshape(-1, 2, block, k)
        view[:, 1, :, :] -= view[:, 0, :, :]
    return arr[:, 0] if squeeze else arr


def zeta_dense(dividends: np.ndarray, d: int) -> np.ndarray:
    """Inverse of :func:`dividends_dense` (subset sums)."""
    arr = np.array(dividends, dtype=np.float64, copy=True)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    n, k = arr.shape
    if n != (1 << d):
        raise DimensionError(f"expected {1 << d} mask-indexed values, got {n}")
    for j in range(d):
        block = 1 << j
        view = arr.reshape(-1, 2, block, k)
        view[:, 1, :, :] += view[:, 0, :, :]
    return arr[:, 0] if squeeze else arr


def harsanyi_dividends(game: CoalitionGame) -> dict[int, float]:
    """Dividend of every coalition, keyed by mask (includes the empty set)."""
    d = _check_game_exhaustive(game)
    dense = dividends_dense(game.values_dense(), d)
    return {mask: float(dense[mask]) for mask in range(1 << d)}


def mobius_reconstruct(dividends: Mapping[int, float], coalition: int) -> float:
    """Rebuild ``v(coalition)`` by summing dividends over its subsets."""
    mask = int(coalition)
    if mask < 0:
        raise DimensionError(f"coalition mask must be non-negative, got {mask}")
    total = 0.0
    sub = mask
    while True:
        try:
            total += dividends[sub]
        except KeyError:
            raise IncompleteDividendsError(
                f"dividend for subset {sub:#x} of {mask:#x} is missing"
            ) from None
        if sub == 0:
            return total
        sub = (sub - 1) & mask


def _member_matrix_sum(per_mask: np.ndarray, d: int) -> np.ndarray:
    """Sum mask-indexed columns over all masks containing each player.

    ``per_mask`` has shape ``(2**d, k)``; the result has shape ``(d, k)``.
    """
    n, k = per_mask.shape
    out = np.empty((d, k), dtype=np.float64)
    for j in range(d):
        block = 1 << j
        view = per_mask.reshape(-1, 2, block, k)
        out[j] = view[:, 1, :, :].sum(axis=(0, 1))
    return out


def shapley_from_dense(values: np.ndarray, d: int) -> np.ndarray:
    """Shapley values from mask-indexed games; columns are separate games."""
    arr = np.asarray(values, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    div = dividends_dense(arr, d)
    sizes = popcount_array(np.arange(1 << d, dtype=np.int64))
    shares = np.zeros_like(div)
    nonempty = sizes > 0
    shares[nonempty] = div[nonempty] / sizes[nonempty, None]
    out = _member_matrix_sum(shares, d)
    return out[:, 0] if squeeze else out


def proportional_shapley_from_dense(
    values: np.ndarray,
    d: int,
    egalitarian_fallback: bool = False,
) -> np.ndarray:
    """Proportional Shapley from mask-indexed games.

    The weight of player ``j`` is the absolute individual value
    ``|v({j})|``; each dividend is split among members in proportion to
    their weights.  A coalition whose members all carry zero weight but
    whose dividend is nonzero has no proportional split: this raises
    :class:`DegenerateWeightsError` unless ``egalitarian_fallback`` is
    set, in which case that dividend is shared equally.
    """
    arr = np.asarray(values, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    n, k = arr.shape
    div = dividends_dense(arr, d)
    masks = np.arange(1 << d, dtype=np.int64)
    sizes = popcount_array(masks)

    weights = np.abs(arr[1 << np.arange(d)])  # (d, k)
    denom = np.zeros((n, k), dtype=np.float64)
    for j in range(d):
        block = 1 << j
        denom.reshape(-1, 2, block, k)[:, 1, :, :] += weights[j]

    degenerate = (denom <= 0.0) & (div != 0.0) & (sizes > 0)[:, None]
    if np.any(degenerate):
        if not egalitarian_fallback:
            where = np.argwhere(degenerate)[0]
            raise DegenerateWeightsError(
                "coalition {:#x} has a nonzero dividend but all-zero individual "
                "values; enable the egalitarian fallback to split it equally".format(
                    int(masks[where[0]])
                )
            )
    ratio = np.zeros_like(div)
    ok = denom > 0.0
    ratio[ok] = div[ok] / denom[ok]
    out = weights * _member_matrix_sum(ratio, d)

    if np.any(degenerate) and egalitarian_fallback:
        equal = np.zeros_like(div)
        equal[degenerate] = (div / np.maximum(sizes, 1)[:, None])[degenerate]
        out += _member_matrix_sum(equal, d)
    return out[:, 0] if squeeze else out


def shapley_exact(game: CoalitionGame) -> AllocationVector:
    """Exact Shapley values via Harsanyi dividends."""
    d = _check_game_exhaustive(game)
    values = shapley_from_dense(game.values_dense(), d)
    return AllocationVector(values=values, kind="shapley", estimator="exact")


def proportional_shapley_exact(
    game: CoalitionGame, egalitarian_fallback: bool = False
) -> AllocationVector:
    """Exact proportional Shapley values via weighted dividends."""
    d = _check_game_exhaustive(game)
    values = proportional_shapley_from_dense(
        game.values_dense(), d, egalitarian_fallback=egalitarian_fallback
    )
    return AllocationVector(values=values, kind="proportional_shapley", estimator="exact")


# ---------------------------------------------------------------------------
# Random orderings


def _check_weights(individual_values) -> np.ndarray:
    w = np.abs(np.asarray(individual_values, dtype=np.float64).ravel())
    if w.size < 1:
        raise DimensionError("individual_values must be non-empty")
    if not np.all(np.isfinite(w)):
        raise ParameterError("individual_values must be finite")
    if not np.any(w > 0.0):
        raise DegenerateWeightsError("all individual values are zero")
    return w


def ps_permutation_sample(individual_values, rng: np.random.Generator) -> np.ndarray:
    """Draw one ordering, filling the last position first.

    At every step the next-to-last open position is assigned a remaining
    player with probability proportional to ``|v({j})|``; selection uses
    cumulative-probability inversion scanning players in ascending index
    order.  Zero-weight players can never be drawn while positive mass
    remains, so they end up occupying the earliest positions, in ascending
    index order.
    """
    w = _check_weights(individual_values)
    d = w.size
    remaining = list(range(d))
    perm = np.empty(d, dtype=np.int64)
    for pos in range(d - 1, -1, -1):
        ws = w[remaining]
        total = float(ws.sum())
        if total <= 0.0:
            # Only zero-weight players remain: deterministic ascending fill.
            perm[: pos + 1] = remaining
            break
        u = rng.random() * total
        cum = 0.0
        pick = len(remaining) - 1
        for i, j in enumerate(remaining):
            cum += w[j]
            if u < cum:
                pick = i
                break
        perm[pos] = remaining.pop(pick)
    return perm


def ps_permutation_pmf(individual_values, perm) -> float:
    """Probability that :func:`ps_permutation_sample` emits ``perm``."""
    w = _check_weights(individual_values)
    d = w.size
    p = np.asarray(perm, dtype=np.int64).ravel()
    if p.size != d or sorted(p.tolist()) != list(range(d)):
        raise DimensionError("perm must order exactly the players 0..d-1")
    zeros = [j for j in range(d) if w[j] == 0.0]
    nz = len(zeros)
    if nz and p[:nz].tolist() != zeros:
        return 0.0
    prob = 1.0
    cum = float(w[p[:nz]].sum()) if nz else 0.0
    for pos in range(nz, d):
        cum += float(w[p[pos]])
        prob *= float(w[p[pos]]) / cum
    return prob


@dataclass(frozen=True)
class RandomOrderDistribution:
    """A distribution over orderings of ``d`` players.

    ``kind`` is ``"uniform"`` or ``"proportional"``; the proportional kind
    carries the individual values whose absolute sizes drive the sampler.
    """

    kind: str
    d: int
    individual_values: np.ndarray | None = None

    def __post_init__(self):
        check_player_count(self.d)
        if self.kind == "uniform":
            if self.individual_values is not None:
                raise ParameterError("uniform orderings take no individual values")
        elif self.kind == "proportional":
            w = _check_weights(self.individual_values)
            if w.size != self.d:
                raise DimensionError(
                    f"expected {self.d} individual values, got {w.size}"
                )
            object.__setattr__(self, "individual_values", w)
        else:
            raise ParameterError(f"unknown ordering kind {self.kind!r}")

    @classmethod
    def uniform(cls, d: int) -> "RandomOrderDistribution":
        return cls(kind="uniform", d=d)

    @classmethod
    def proportional(cls, individual_values) -> "RandomOrderDistribution":
        w = np.asarray(individual_values, dtype=np.float64).ravel()
        return cls(kind="proportional", d=w.size, individual_values=w)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "uniform":
            return rng.permutation(self.d).astype(np.int64)
        return ps_permutation_sample(self.individual_values, rng)

    def pmf(self, perm) -> float:
        p = np.asarray(perm, dtype=np.int64).ravel()
        if p.size != self.d or sorted(p.tolist()) != list(range(self.d)):
            raise DimensionError("perm must order exactly the players 0..d-1")
        if self.kind == "uniform":
            return 1.0 / math.factorial(self.d)
        return ps_permutation_pmf(self.individual_values, p)

    @property
    def allocation_kind(self) -> str:
        return "shapley" if self.kind == "uniform" else "proportional_shapley"


def marginal_contributions(game: CoalitionGame, perm) -> np.ndarray:
    """Marginal contribution of every player under one ordering.

    Player ``perm[i]`` joins the players ``perm[:i]`` already present, so
    its contribution is ``v(perm[:i+1]) - v(perm[:i])``.
    """
    p = np.asarray(perm, dtype=np.int64).ravel()
    if p.size != game.d or sorted(p.tolist()) != list(range(game.d)):
        raise DimensionError("perm must order exactly the players 0..d-1")
    chain = permutation_chain(p)
    vals = [game.value(mask) for mask in chain]
    mc = np.empty(game.d, dtype=np.float64)
    for i in range(game.d):
        mc[p[i]] = vals[i + 1] - vals[i]
    return mc


def _stream_rng(seed: int, index: int) -> np.random.Generator:
    """Independent per-permutation stream derived from (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def draw_weber_samples(
    game: CoalitionGame,
    dist: RandomOrderDistribution,
    m: int,
    seed: int,
    n_threads: int | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Sample ``m`` orderings and their marginal-contribution vectors.

    Each ordering uses its own RNG stream keyed by ``(seed, k)``, so the
    result is independent of how work is scheduled across threads.
    """
    if dist.d != game.d:
        raise DimensionError(f"ordering distribution is over {dist.d} players, game has {game.d}")
    m = int(m)
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    perms: list[np.ndarray | None] = [None] * m
    mcs: list[np.ndarray | None] = [None] * m

    def work(k: int) -> None:
        perm = dist.sample(_stream_rng(seed, k))
        perms[k] = perm
        mcs[k] = marginal_contributions(game, perm)

    run_tasks(work, m, n_threads=n_threads)
    return list(zip(perms, mcs))


def _mean_and_stderr(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = rows.shape[0]
    mean = rows.mean(axis=0)
    if m < 2:
        return mean, np.zeros_like(mean)
    err = rows.std(axis=0, ddof=1) / math.sqrt(m)
    return mean, err


def weber_mc_estimate(
    game: CoalitionGame,
    dist: RandomOrderDistribution,
    m: int,
    seed: int,
    n_threads: int | None = None,
) -> AllocationVector:
    """Average marginal contributions over ``m`` sampled orderings.

    The per-coordinate standard error is the sample standard deviation of
    the contributions divided by ``sqrt(m)`` (zero when ``m == 1``).  Every
    estimate telescopes to ``v(D) - v(empty)`` exactly, permutation by
    permutation.
    """
    samples = draw_weber_samples(game, dist, m, seed, n_threads=n_threads)
    rows = np.stack([mc for _, mc in samples])
    values, std_err = _mean_and_stderr(rows)
    return AllocationVector(
        values=values,
        kind=dist.allocation_kind,
        estimator="monte_carlo",
        m=m,
        std_err=std_err,
        seed=int(seed),
    )


def importance_reweight(
    samples: Sequence[tuple[np.ndarray, np.ndarray]],
    p_from: RandomOrderDistribution,
    p_to: RandomOrderDistribution,
) -> AllocationVector:
    """Reweight ordering samples drawn from ``p_from`` toward ``p_to``.

    Each marginal-contribution vector is scaled by the likelihood ratio
    ``p_to(perm) / p_from(perm)``; the estimate is the plain average of the
    scaled vectors, so it is unbiased for the ``p_to`` allocation.  A drawn
    ordering with zero mass under ``p_from`` raises
    :class:`SupportMismatchError`.
    """
    if not samples:
        raise ParameterError("samples must be non-empty")
    if p_from.d != p_to.d:
        raise DimensionError("distributions are over different player counts")
    rows = []
    for perm, mc in samples:
        pf = p_from.pmf(perm)
        if pf <= 0.0:
            raise SupportMismatchError(
                f"source distribution has zero mass on ordering {np.asarray(perm).tolist()}"
            )
        rows.append((p_to.pmf(perm) / pf) * np.asarray(mc, dtype=np.float64))
    stacked = np.stack(rows)
    values, std_err = _mean_and_stderr(stacked)
    return AllocationVector(
        values=values,
        kind=p_to.allocation_kind,
        estimator="importance_sampling",
        m=len(samples),
        std_err=std_err,
    )
