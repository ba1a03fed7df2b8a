"""Shapley attribution of class confidence to feature-map positions.

Exact values enumerate all 2^n coalitions with the combinatorial weights
s!(n-s-1)!/n!. The sampler averages marginal contributions over m uniformly
random permutations, scoring each permutation along its prefix chain (n+1
oracle evaluations, so the total cost is O(m*n)).

Determinism: permutation k draws from its own RNG stream derived from
(seed, k), and accumulation merges fixed-size chunks in index order, so the
estimate is bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import OracleError, ShapeError
from .model import NetworkSplit, forward_head
from .tensor import Tensor
from .worth import Coalition, Game, InProcessOracle, make_game, worth_batch, worth_chain

__all__ = [
    "PermutationSample",
    "ShapleyEstimate",
    "SaliencyMap",
    "exact_shapley",
    "sample_shapley",
    "draw_permutation_sample",
    "shap_cam",
    "EXACT_LIMIT",
    "CHUNK",
]

# exact mode enumerates 2^n subsets; past this it is the sampler's job
EXACT_LIMIT = 16

# permutations per accumulation chunk; fixed (never derived from the worker
# count) so that chunk boundaries, and hence rounding, are schedule-independent
CHUNK = 256


@dataclass(frozen=True)
class PermutationSample:
    """One sampled order and the marginal contribution of every player."""

    order: tuple[int, ...]
    marginals: np.ndarray

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ShapeError("order must be a permutation of 0..n-1")
        marg = np.asarray(self.marginals, dtype=np.float64)
        if marg.shape != (len(self.order),):
            raise ShapeError(f"marginals shape {marg.shape} does not match {len(self.order)} players")
        marg = marg.copy()
        marg.setflags(write=False)
        object.__setattr__(self, "marginals", marg)


@dataclass(frozen=True)
class ShapleyEstimate:
    """Running per-player mean/M2 over sampled marginal contributions."""

    mean: np.ndarray
    m2: np.ndarray
    sample_count: int
    seed: int

    @property
    def values(self) -> np.ndarray:
        return self.mean

    def standard_error(self) -> np.ndarray:
        if self.sample_count < 2:
            raise ValueError("standard error needs at least 2 samples")
        return np.sqrt(self.m2 / (self.sample_count - 1) / self.sample_count)


@dataclass(frozen=True)
class SaliencyMap:
    """An h x w grid of position scores plus how it was produced."""

    grid: np.ndarray
    method: str
    target_class: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 2:
            raise ShapeError(f"saliency grid must be 2-D, got shape {grid.shape}")
        if not np.isfinite(grid).all():
            raise ShapeError("saliency grid contains NaN or Inf")
        grid = grid.copy()
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


def exact_shapley(game: Game, exact_limit: int = EXACT_LIMIT) -> np.ndarray:
    """Shapley values by full subset enumeration (2^n oracle evaluations)."""
    n = game.n_players
    if n > exact_limit:
        raise ValueError(
            f"exact enumeration over {n} players needs 2^{n} evaluations; "
            f"the limit is {exact_limit} — use sample_shapley instead"
        )
    total = 1 << n
    worths = np.empty(total)
    batch = 4096
    for start in range(0, total, batch):
        stop = min(start + batch, total)
        coalitions = [Coalition(mask, n) for mask in range(start, stop)]
        worths[start:stop] = worth_batch(game, coalitions)

    masks = np.arange(total, dtype=np.uint32)
    sizes = np.zeros(total, dtype=np.int64)
    for i in range(n):
        sizes += (masks >> i) & 1

    # weight of adding player i to a coalition of size s: s!(n-s-1)!/n!
    lg = [math.lgamma(k + 1) for k in range(n + 1)]
    weights = np.array([math.exp(lg[s] + lg[n - s - 1] - lg[n]) for s in range(n)])

    values = np.empty(n)
    for i in range(n):
        without = masks[((masks >> i) & 1) == 0]
        gain = worths[without | (1 << i)] - worths[without]
        values[i] = float(np.dot(weights[sizes[without]], gain))
    return values


def _permutation_order(seed: int, index: int, n: int) -> np.ndarray:
    """The index-th permutation stream: independent of how work is scheduled."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, index)))
    return rng.permutation(n)


def draw_permutation_sample(game: Game, seed: int, index: int) -> PermutationSample:
    """Materialize one sampled permutation with its marginal contributions."""
    order = _permutation_order(seed, index, game.n_players)
    chain = worth_chain(game, order)
    marginals = np.empty(game.n_players)
    marginals[order] = np.diff(chain)
    return PermutationSample(tuple(int(p) for p in order), marginals)


def _chunk_stats(game: Game, seed: int, start: int, stop: int):
    """Mean/M2 of marginals over permutations [start, stop)."""
    n = game.n_players
    buf = np.empty((stop - start, n))
    for row, k in enumerate(range(start, stop)):
        order = _permutation_order(seed, k, n)
        chain = worth_chain(game, order)
        buf[row, order] = np.diff(chain)
    mean = buf.mean(axis=0)
    m2 = ((buf - mean) ** 2).sum(axis=0)
    return stop - start, mean, m2


def _merge_stats(a, b):
    """Chan's parallel mean/M2 combination; applied in fixed chunk order."""
    na, mean_a, m2_a = a
    nb, mean_b, m2_b = b
    total = na + nb
    delta = mean_b - mean_a
    mean = mean_a + delta * (nb / total)
    m2 = m2_a + m2_b + delta * delta * (na * nb / total)
    return total, mean, m2


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def sample_shapley(game: Game, m: int, seed: int, workers: int = 1) -> ShapleyEstimate:
    """Permutation-sampling estimate from m sampled orders.

    Bit-identical for any ``workers`` value: chunking and merge order depend
    only on m. Oracles that cannot cross a process boundary are evaluated
    in-process regardless of ``workers``.
    """
    if m < 1:
        raise ValueError(f"sample count must be >= 1, got {m}")
    seed = _check_seed(seed)
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")

    bounds = [(start, min(start + CHUNK, m)) for start in range(0, m, CHUNK)]
    try:
        if workers > 1 and getattr(game.oracle, "picklable", False) and len(bounds) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                stats = list(pool.map(
                    _chunk_stats,
                    [game] * len(bounds),
                    [seed] * len(bounds),
                    [b[0] for b in bounds],
                    [b[1] for b in bounds],
                ))
        else:
            stats = [_chunk_stats(game, seed, start, stop) for start, stop in bounds]
    except OracleError as exc:
        raise OracleError(
            f"sampling aborted before {m} permutations completed: {exc}",
            index=exc.index,
        )

    count, mean, m2 = stats[0]
    for chunk in stats[1:]:
        count, mean, m2 = _merge_stats((count, mean, m2), chunk)
    return ShapleyEstimate(mean=mean, m2=m2, sample_count=count, seed=seed)


def shap_cam(
    model,
    image: Tensor,
    target_class: int,
    m: int = 10000,
    seed: int = 0,
    *,
    exact: bool = False,
    baseline: str = "per-channel",
    workers: int = 1,
    exact_limit: int = EXACT_LIMIT,
) -> SaliencyMap:
    """Shapley saliency grid for one image (or one pre-computed feature map).

    ``model`` is either a NetworkSplit (then ``image`` is a model input and
    the head runs once) or a scoring oracle (then ``image`` must already be
    the C x h x w feature map the oracle expects).
    """
    if isinstance(model, NetworkSplit):
        oracle = InProcessOracle(model)
        feature_map = forward_head(model, image)
    else:
        oracle = model
        feature_map = image
    game = make_game(feature_map, target_class, oracle, baseline=baseline)

    meta = {
        "baseline": baseline,
        "n_players": game.n_players,
        "feature_shape": list(feature_map.shape),
    }
    if exact:
        values = exact_shapley(game, exact_limit)
        meta.update(mode="exact")
    else:
        estimate = sample_shapley(game, m, seed, workers)
        values = estimate.values
        meta.update(mode="sampled", m=m, seed=estimate.seed)
    grid = values.reshape(game.players.h, game.players.w)
    return SaliencyMap(grid=grid, method="shapcam", target_class=target_class, meta=meta)
