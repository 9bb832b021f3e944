"""Graduated optimization with two-point Gaussian gradient estimates.

The optimizer minimizes a black-box function over an axis-aligned box.  It
runs a sequence of epochs; epoch ``m`` optimizes the Gaussian smoothing of the
objective at radius ``delta_m`` with per-coordinate scale-free online gradient
descent, and the radius halves from one epoch to the next.

Randomness comes from a single ``numpy.random.Generator`` backed by PCG64 and
seeded with the run seed.  The initial point (uniform policy) is drawn with
``Generator.random`` and every search direction with
``Generator.standard_normal``, in that order, so a run is a pure function of
its seed and configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EvaluationFailedError, InvalidArgumentError

__all__ = [
    "Box",
    "GradOptConfig",
    "SfogdState",
    "EpochSchedule",
    "RunResult",
    "project_box",
    "estimate_gradient",
    "sfogd_step",
    "make_epoch_schedule",
    "run_gradopt",
    "make_rng",
    "evaluate",
    "smoothed_value",
]

INIT_POLICIES = ("uniform", "center", "point")


def make_rng(seed: int) -> np.random.Generator:
    """The generator every optimizer in this package uses for ``seed``."""
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lower, upper]`` in R^d.  Equal bounds freeze a coordinate."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float, ndmin=1)
        upper = np.array(self.upper, dtype=float, ndmin=1)
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise InvalidArgumentError(
                f"bounds must be 1-d vectors of equal length, got {lower.shape} and {upper.shape}"
            )
        if lower.size == 0:
            raise InvalidArgumentError("box dimension must be at least 1")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InvalidArgumentError("box bounds must be finite")
        if np.any(lower > upper):
            raise InvalidArgumentError("every lower bound must be <= its upper bound")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_bounds(cls, bounds: Sequence[Sequence[float]]) -> "Box":
        """Build from ``[(lo, hi), ...]`` pairs."""
        arr = np.asarray(bounds, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise InvalidArgumentError("bounds must be a sequence of (lower, upper) pairs")
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "Box":
        return cls(np.full(dim, lo, dtype=float), np.full(dim, hi, dtype=float))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One uniform point in the box."""
        return self.lower + rng.random(self.dim) * (self.upper - self.lower)

    def contains(self, point, tol: float = 0.0) -> bool:
        point = np.asarray(point, dtype=float)
        return bool(np.all(point >= self.lower - tol) and np.all(point <= self.upper + tol))

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self):
        return f"Box(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


def project_box(point, box: Box) -> np.ndarray:
    """Euclidean projection onto ``box`` (per-coordinate clamping)."""
    point = np.asarray(point, dtype=float)
    if point.shape != (box.dim,):
        raise InvalidArgumentError(
            f"point has shape {point.shape}, box has dimension {box.dim}"
        )
    # + 0.0 turns -0.0 into 0.0
    return np.minimum(np.maximum(point, box.lower), box.upper) + 0.0


def evaluate(f: Callable[[np.ndarray], float], x: np.ndarray) -> float:
    """Call ``f`` at ``x`` and insist on a finite real result."""
    try:
        value = float(f(x))
    except EvaluationFailedError:
        raise
    except (ArithmeticError, ValueError, TypeError) as exc:
        raise EvaluationFailedError(x, None, f"objective raised {exc!r} at {np.asarray(x).tolist()!r}") from exc
    if not math.isfinite(value):
        raise EvaluationFailedError(x, value)
    return value


def estimate_gradient(f, x, delta: float, u):
    """Two-point estimate ``(d / delta) * (f(x + delta*u) - f(x)) * u``.

    ``u`` is a standard Gaussian direction drawn by the caller.  Returns
    ``(g, f_x, f_probe)``; exactly two evaluations of ``f`` are made, first at
    ``x`` and then at ``x + delta*u``.
    """
    if not delta > 0:
        raise InvalidArgumentError(f"delta must be positive, got {delta!r}")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != u.shape or x.ndim != 1:
        raise InvalidArgumentError(f"x and u must be vectors of equal length, got {x.shape} and {u.shape}")
    d = x.size
    f_x = evaluate(f, x)
    f_probe = evaluate(f, x + delta * u)
    g = (d / delta) * (f_probe - f_x) * u
    return g, f_x, f_probe


@dataclass
class SfogdState:
    """Per-coordinate sums of squared gradients for scale-free OGD."""

    eta: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "SfogdState":
        return cls(np.zeros(dim, dtype=float))


def sfogd_step(state: SfogdState, x, g) -> np.ndarray:
    """One scale-free OGD step; mutates ``state.eta`` and returns the unprojected point.

    A coordinate whose accumulated squared gradient is still zero stays where it is.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if not (x.shape == g.shape == state.eta.shape):
        raise InvalidArgumentError(
            f"shape mismatch: x {x.shape}, g {g.shape}, eta {state.eta.shape}"
        )
    if not np.all(np.isfinite(g)):
        raise EvaluationFailedError(x, None, f"non-finite gradient estimate {g.tolist()!r} at {x.tolist()!r}")
    eta = state.eta + g * g
    step = np.zeros_like(x)
    moving = eta > 0
    step[moving] = g[moving] / np.sqrt(eta[moving])
    state.eta = eta
    return x - step


@dataclass(frozen=True)
class EpochSchedule:
    """``(delta_m, iterations_m)`` for each epoch of a run."""

    entries: tuple

    @property
    def deltas(self) -> list:
        return [delta for delta, _ in self.entries]

    @property
    def iterations(self) -> list:
        return [n for _, n in self.entries]

    @property
    def total_iterations(self) -> int:
        return sum(self.iterations)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def make_epoch_schedule(box: Box, budget: int, num_epochs: int) -> EpochSchedule:
    """Split ``budget // 2`` iterations evenly over ``num_epochs`` epochs.

    The first radius is half the box diameter and each later radius is half of
    the previous one.  Leftover iterations go to the earliest epochs.
    """
    if num_epochs < 1:
        raise InvalidArgumentError(f"num_epochs must be >= 1, got {num_epochs}")
    if budget < 2 * num_epochs:
        raise InvalidArgumentError(
            f"budget {budget} cannot fund {num_epochs} epochs (need at least {2 * num_epochs} evaluations)"
        )
    delta = box.diameter() / 2
    if not delta > 0:
        raise InvalidArgumentError("box has zero diameter, smoothing radius would be 0")
    base, extra = divmod(budget // 2, num_epochs)
    entries = []
    for m in range(num_epochs):
        entries.append((delta, base + (1 if m < extra else 0)))
        delta = delta / 2
    return EpochSchedule(tuple(entries))


@dataclass
class GradOptConfig:
    budget: int = 1000
    num_epochs: int = 5
    init: str = "uniform"
    x0: Optional[Sequence[float]] = None
    seed: int = 0
    reset_eta_per_epoch: bool = False

    def validate(self, box: Optional[Box] = None):
        if int(self.budget) != self.budget or self.budget < 1:
            raise InvalidArgumentError(f"budget must be a positive integer, got {self.budget!r}")
        if int(self.num_epochs) != self.num_epochs or self.num_epochs < 1:
            raise InvalidArgumentError(f"num_epochs must be a positive integer, got {self.num_epochs!r}")
        if self.budget < 2 * self.num_epochs:
            raise InvalidArgumentError(
                f"budget {self.budget} is below 2 * num_epochs = {2 * self.num_epochs}"
            )
        if self.init not in INIT_POLICIES:
            raise InvalidArgumentError(f"init must be one of {INIT_POLICIES}, got {self.init!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.init == "point":
            if self.x0 is None:
                raise InvalidArgumentError("init='point' requires x0")
            if box is not None and np.shape(self.x0) != (box.dim,):
                raise InvalidArgumentError(f"x0 must have length {box.dim}")


@dataclass
class RunResult:
    """Everything one optimizer run evaluated, in evaluation order.

    Values follow the minimization convention.  ``info`` holds
    optimizer-specific extras (GradOpt: ``iterates``, ``deltas``, ``eta``,
    ``schedule``; AdaLipo: ``k_hat``, ``moves``).
    """

    points: np.ndarray
    values: np.ndarray
    seed: int
    failed: bool = False
    error: Optional[str] = None
    info: dict = field(default_factory=dict)

    @property
    def evals_used(self) -> int:
        return int(self.values.size)

    @property
    def trace(self):
        return list(zip(self.points, self.values.tolist()))

    @property
    def best_index(self) -> Optional[int]:
        if self.values.size == 0:
            return None
        return int(np.argmin(self.values))

    @property
    def best_value(self) -> float:
        i = self.best_index
        return math.inf if i is None else float(self.values[i])

    @property
    def best_point(self) -> Optional[np.ndarray]:
        i = self.best_index
        return None if i is None else self.points[i].copy()

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.values) if self.values.size else self.values.copy()

    @classmethod
    def from_lists(cls, points, values, dim, seed, **kwargs) -> "RunResult":
        pts = np.array(points, dtype=float).reshape(len(points), dim)
        return cls(pts, np.array(values, dtype=float), int(seed), **kwargs)


def _initial_point(box: Box, config: GradOptConfig, rng: np.random.Generator) -> np.ndarray:
    if config.init == "uniform":
        return box.sample(rng)
    if config.init == "center":
        return box.center()
    return project_box(np.asarray(config.x0, dtype=float), box)


def run_gradopt(f, box: Box, config: Optional[GradOptConfig] = None, **overrides) -> RunResult:
    """Minimize ``f`` over ``box`` with GradOpt.

    Every objective evaluation is recorded, so ``evals_used`` is
    ``2 * (budget // 2)`` for a run that does not fail.  Probe points
    ``x + delta*u`` are not projected and may fall outside ``box``; ``f`` must
    accept them.  A failed evaluation ends the run early and the partial
    result comes back with ``failed=True``.

    Keyword ``overrides`` replace fields of ``config``.
    """
    config = GradOptConfig(**{**(config.__dict__ if config else {}), **overrides})
    config.validate(box)
    schedule = make_epoch_schedule(box, config.budget, config.num_epochs)
    rng = make_rng(config.seed)
    d = box.dim

    x = _initial_point(box, config, rng)
    state = SfogdState.zeros(d)
    points, values = [], []
    iterates, deltas, etas = [x.copy()], [], []
    failed, error = False, None

    try:
        for delta, iterations in schedule:
            if config.reset_eta_per_epoch:
                state = SfogdState.zeros(d)
            for _ in range(iterations):
                if len(values) + 2 > config.budget:
                    break
                u = rng.standard_normal(d)
                probe = x + delta * u
                g, f_x, f_probe = estimate_gradient(f, x, delta, u)
                points.append(x.copy())
                values.append(f_x)
                points.append(probe)
                values.append(f_probe)
                x = project_box(sfogd_step(state, x, g), box)
                iterates.append(x.copy())
                deltas.append(delta)
                etas.append(state.eta.copy())
    except EvaluationFailedError as exc:
        failed, error = True, str(exc)

    info = {
        "iterates": np.array(iterates),
        "deltas": np.array(deltas),
        "eta": np.array(etas).reshape(len(etas), d),
        "schedule": schedule,
    }
    return RunResult.from_lists(points, values, d, config.seed, failed=failed, error=error, info=info)


def smoothed_value(f, x, delta: float, n_samples: int, rng: np.random.Generator, vectorized: bool = False):
    """Monte-Carlo estimate of ``E_u[f(x + delta*u)]`` with its standard error.

    With ``vectorized=True``, ``f`` receives an ``(n_samples, d)`` array and
    returns ``n_samples`` values.
    """
    x = np.asarray(x, dtype=float)
    U = rng.standard_normal((n_samples, x.size))
    pts = x + delta * U
    if vectorized:
        vals = np.asarray(f(pts), dtype=float)
    else:
        vals = np.array([f(p) for p in pts], dtype=float)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n_samples))
    return mean, se
