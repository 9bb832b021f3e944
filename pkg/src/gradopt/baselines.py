"""Comparator optimizers: pure random search and AdaLipo.

Both minimize ``f`` and return a :class:`~gradopt.core.RunResult` in the
minimization convention.  AdaLipo works internally on ``-f``.

Draw protocol: the run seed is split with ``numpy.random.SeedSequence`` into
two child streams.  Stream 0 produces every candidate point (one
``Generator.random(d)`` call per point); stream 1 produces the
explore/exploit coin flips.  Pure random search uses stream 0 alone, so
AdaLipo with ``exploration_prob=1`` evaluates exactly the points random
search does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .core import Box, RunResult, evaluate
from .errors import EvaluationFailedError, InvalidArgumentError


def _streams(seed: int):
    point_ss, coin_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.Generator(np.random.PCG64(point_ss)), np.random.Generator(np.random.PCG64(coin_ss))


def run_prs(f, box: Box, budget: int, seed: int = 0) -> RunResult:
    """Evaluate ``budget`` i.i.d. uniform points of ``box``."""
    if budget < 1:
        raise InvalidArgumentError(f"budget must be >= 1, got {budget}")
    rng, _ = _streams(seed)
    points, values = [], []
    failed, error = False, None
    try:
        for _ in range(budget):
            x = box.sample(rng)
            values.append(evaluate(f, x))
            points.append(x)
    except EvaluationFailedError as exc:
        failed, error = True, str(exc)
    return RunResult.from_lists(points, values, box.dim, seed, failed=failed, error=error)


@dataclass
class AdaLipoConfig:
    exploration_prob: float = 0.1
    grid_base: float = 1.01
    rejection_cap: Optional[int] = None  # default 10 * d * budget
    seed: int = 0
    batch_size: int = 4096

    def validate(self):
        if not 0 < self.exploration_prob <= 1:
            raise InvalidArgumentError(f"exploration_prob must lie in (0, 1], got {self.exploration_prob}")
        if not self.grid_base > 1:
            raise InvalidArgumentError(f"grid_base must exceed 1, got {self.grid_base}")
        if self.rejection_cap is not None and self.rejection_cap < 1:
            raise InvalidArgumentError("rejection_cap must be positive")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be positive")


def grid_ceil(s: float, grid_base: float) -> float:
    """Smallest ``grid_base**i`` (integer i) that is >= ``s``; 0 for ``s == 0``."""
    if s < 0 or not math.isfinite(s):
        raise InvalidArgumentError(f"slope must be finite and nonnegative, got {s}")
    if s == 0:
        return 0.0
    i = math.ceil(math.log(s) / math.log(grid_base))
    # guard against log rounding on either side
    while grid_base ** i < s:
        i += 1
    while grid_base ** (i - 1) >= s:
        i -= 1
    return grid_base ** i


def max_slope(points, values) -> float:
    """Largest ``|f(x_i) - f(x_j)| / ||x_i - x_j||`` over pairs of distinct points."""
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    best = 0.0
    for i in range(1, len(values)):
        dist = np.linalg.norm(points[:i] - points[i], axis=1)
        ok = dist > 0
        if np.any(ok):
            best = max(best, float(np.max(np.abs(values[:i][ok] - values[i]) / dist[ok])))
    return best


def estimate_lipschitz(history, grid_base: float) -> float:
    """Lipschitz estimate from ``[(point, value), ...]``: the grid ceiling of the max slope."""
    if len(history) < 2:
        raise InvalidArgumentError("need at least two evaluations to estimate a Lipschitz constant")
    points = np.array([np.atleast_1d(np.asarray(p, dtype=float)) for p, _ in history])
    if len(np.unique(points, axis=0)) < 2:
        raise InvalidArgumentError("need at least two distinct points to estimate a Lipschitz constant")
    values = [float(v) for _, v in history]
    return grid_ceil(max_slope(points, values), grid_base)


def upper_bound(candidates: np.ndarray, points: np.ndarray, scores: np.ndarray, k_hat: float) -> np.ndarray:
    """Lipschitz upper bound ``min_i score_i + k_hat * ||x - x_i||`` for each candidate row."""
    dist = cdist(np.atleast_2d(candidates), np.atleast_2d(points))
    return np.min(scores[None, :] + k_hat * dist, axis=1)


def run_adalipo(f, box: Box, budget: int, cfg: Optional[AdaLipoConfig] = None, **overrides) -> RunResult:
    """AdaLipo on ``-f``: explore uniformly with probability p, otherwise draw
    uniform candidates until one could still beat the incumbent under the
    current Lipschitz estimate.

    ``info['k_hat']`` records the estimate after every evaluation and
    ``info['moves']`` tags each point ``'init'``, ``'explore'``,
    ``'exploit'`` or ``'fallback'``.  ``info['k_used']`` holds the estimate
    each point was accepted under.
    """
    cfg = AdaLipoConfig(**{**(cfg.__dict__ if cfg else {}), **overrides})
    cfg.validate()
    if budget < 2:
        raise InvalidArgumentError(f"budget must be >= 2, got {budget}")
    d = box.dim
    cap = cfg.rejection_cap if cfg.rejection_cap is not None else 10 * d * budget
    point_rng, coin_rng = _streams(cfg.seed)

    points = np.empty((budget, d))
    scores = np.empty(budget)
    k_trace, k_used, moves = [], [], []
    n = 0
    k_hat = 0.0
    slope = 0.0
    failed, error = False, None

    try:
        while n < budget:
            if n == 0:
                x, move = box.sample(point_rng), "init"
            elif coin_rng.random() < cfg.exploration_prob:
                x, move = box.sample(point_rng), "explore"
            else:
                x, move = _exploit(box, point_rng, points[:n], scores[:n], k_hat, cap, cfg.batch_size)
            score = -evaluate(f, x)
            points[n], scores[n] = x, score
            k_used.append(k_hat)
            moves.append(move)
            if n > 0:
                dist = np.linalg.norm(points[:n] - x, axis=1)
                ok = dist > 0
                if np.any(ok):
                    slope = max(slope, float(np.max(np.abs(scores[:n][ok] - score) / dist[ok])))
                k_hat = grid_ceil(slope, cfg.grid_base)
            k_trace.append(k_hat)
            n += 1
    except EvaluationFailedError as exc:
        failed, error = True, str(exc)

    info = {"k_hat": np.array(k_trace), "k_used": np.array(k_used), "moves": moves}
    return RunResult(points[:n].copy(), -scores[:n], int(cfg.seed), failed, error, info)


def _admissible(cands, points, scores, k_hat, best):
    """Mask of candidates whose upper bound reaches ``best``.

    Same test as ``upper_bound(...) >= best``, evaluated against the most
    restrictive history points first so rejected candidates drop out early.
    """
    order = np.argsort(scores, kind="stable")
    alive = np.arange(len(cands))
    start, chunk = 0, 8
    while start < order.size and alive.size:
        idx = order[start:start + chunk]
        bound = np.min(scores[idx][None, :] + k_hat * cdist(cands[alive], points[idx]), axis=1)
        alive = alive[bound >= best]
        start += chunk
        chunk *= 4
    mask = np.zeros(len(cands), dtype=bool)
    mask[alive] = True
    return mask


def _exploit(box, rng, points, scores, k_hat, cap, batch_size):
    best = scores.max()
    tried = 0
    m = 16
    while tried < cap:
        m = min(m, batch_size, cap - tried)
        # same stream consumption as m successive box.sample calls
        cands = box.lower + rng.random((m, box.dim)) * (box.upper - box.lower)
        ok = np.flatnonzero(_admissible(cands, points, scores, k_hat, best))
        if ok.size:
            return cands[ok[0]], "exploit"
        tried += m
        m *= 2
    return box.sample(rng), "fallback"
