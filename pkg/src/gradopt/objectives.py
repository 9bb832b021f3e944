"""Test objectives: closed-form synthetic functions and cross-validated
Gaussian kernel ridge regression on tabular data.

The KRR score of hyperparameters ``(lam, sig)`` and optional per-sample
weights ``w`` is

    1 - mean_k  sum_{i in D_k} (fhat_k(X_i) - Y_i)^2 / sum_{i in D_k} (Ybar - Y_i)^2

where ``fhat_k`` is fit on the other nine folds by minimizing
``(1/n') sum w_i (f(X_i) - Y_i)^2 + 10**lam * ||f||^2`` in the RKHS of the
kernel ``exp(-||a - b||^2 / (2 * (10**sig)^2))`` and ``Ybar`` is the mean of
all targets.  Scores are to be maximized.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import yaml
from scipy.spatial.distance import cdist

from .core import Box
from .errors import IngestionError, InvalidArgumentError, NumericError

logger = logging.getLogger(__name__)

LAMBDA_RANGE = (-2.0, 4.0)
SIGMA_RANGE = (-5.0, 5.0)
NUM_FOLDS = 10
MIN_ROWS = 2 * NUM_FOLDS
DEFAULT_MAX_ROWS = 200
MISSING_TOKENS = frozenset({"", "?", "na", "nan", "NA", "NaN"})


class Objective:
    """A black-box function with an evaluation counter.

    Calling the object evaluates it.  ``lipschitz_hint`` is optional
    metadata (a Lipschitz constant w.r.t. the Euclidean norm on ``domain``)
    used only by tests.
    """

    def __init__(self, func: Callable[[np.ndarray], float], domain: Box, name: str = "",
                 lipschitz_hint: Optional[float] = None):
        if lipschitz_hint is not None and not lipschitz_hint > 0:
            raise InvalidArgumentError("lipschitz_hint must be positive")
        self.func = func
        self.domain = domain
        self.name = name
        self.lipschitz_hint = lipschitz_hint
        self.eval_count = 0

    @property
    def dim(self) -> int:
        return self.domain.dim

    def __call__(self, x) -> float:
        self.eval_count += 1
        return float(self.func(np.asarray(x, dtype=float)))

    evaluate = __call__

    def negated(self) -> "Objective":
        func = self.func
        return Objective(lambda x: -func(x), self.domain, f"-{self.name}", self.lipschitz_hint)

    def __repr__(self):
        return f"Objective({self.name!r}, dim={self.dim}, evals={self.eval_count})"


# --------------------------------------------------------------------------
# synthetic functions

def _sphere(x, center=None):
    x = np.asarray(x, dtype=float)
    if center is not None:
        x = x - center
    return float(np.dot(x, x))


def _rosenbrock(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise InvalidArgumentError("rosenbrock needs at least 2 coordinates")
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def _l1_cone(x):
    return float(np.sum(np.abs(np.asarray(x, dtype=float))))


# name -> (function, default box half-width)
SYNTHETIC = {
    "sphere": (_sphere, 1.0),
    "shifted-sphere": (_sphere, 1.0),
    "rosenbrock": (_rosenbrock, 2.0),
    "l1-cone": (_l1_cone, 1.0),
}
DEFAULT_SHIFT = 0.3


def eval_synthetic(name: str, x, center=None) -> float:
    """Value of synthetic function ``name`` at ``x``.

    ``center`` only applies to ``shifted-sphere`` (default: 0.3 in every coordinate).
    """
    if name not in SYNTHETIC:
        raise InvalidArgumentError(f"unknown synthetic function {name!r}; known: {sorted(SYNTHETIC)}")
    x = np.asarray(x, dtype=float)
    if name == "shifted-sphere":
        c = np.full(x.shape, DEFAULT_SHIFT) if center is None else np.asarray(center, dtype=float)
        return _sphere(x, c)
    return SYNTHETIC[name][0](x)


def synthetic_objective(name: str, dim: int, center=None) -> Objective:
    """Synthetic function on its default cube ``[-r, r]^dim``."""
    if name not in SYNTHETIC:
        raise InvalidArgumentError(f"unknown synthetic function {name!r}; known: {sorted(SYNTHETIC)}")
    r = SYNTHETIC[name][1]
    box = Box.cube(-r, r, dim)
    hint = None
    if name == "l1-cone":
        hint = math.sqrt(dim)
    elif name == "sphere":
        hint = 2 * r * math.sqrt(dim)
    return Objective(lambda x: eval_synthetic(name, x, center), box, name, hint)


# --------------------------------------------------------------------------
# datasets

@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    name: str = ""
    dropped_rows: int = 0
    dropped_columns: tuple = ()

    @property
    def n(self) -> int:
        return self.targets.size

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
            raise IngestionError(f"features {X.shape} and targets {y.shape} do not line up")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise IngestionError("dataset contains non-finite entries")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)


def standardize_columns(values: np.ndarray):
    """Z-score each column using the population standard deviation (ddof=0).

    Returns ``(standardized, kept)`` where ``kept`` marks non-constant columns;
    constant columns are removed from the output.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    kept = std > 0
    return (values[:, kept] - mean[kept]) / std[kept], kept


def _parse_float(cell: str) -> Optional[float]:
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return None
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_dataset(path: Union[str, Path], target: Union[int, str] = -1, *,
                 header: Optional[bool] = None, max_rows: Optional[int] = DEFAULT_MAX_ROWS,
                 seed: int = 0, name: Optional[str] = None, min_rows: int = MIN_ROWS,
                 delimiter: str = ",") -> Dataset:
    """Read a numeric CSV into a standardized :class:`Dataset`.

    Rows with a missing (``?`` or empty) or non-numeric cell are dropped.
    The header row is auto-detected (first row has a non-numeric cell) unless
    ``header`` is given.  If more than ``max_rows`` rows survive, a seeded
    random subset of ``max_rows`` is kept.  Features and targets are then
    z-scored; constant feature columns are dropped.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [row for row in csv.reader(fh, delimiter=delimiter) if row and any(c.strip() for c in row)]
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise IngestionError(f"{path} is empty")

    if header is None:
        header = any(_parse_float(c) is None for c in rows[0])
    names = [c.strip() for c in rows[0]] if header else None
    body = rows[1:] if header else rows
    width = len(rows[0])

    if isinstance(target, str):
        if names is None or target not in names:
            raise IngestionError(f"target column {target!r} not found in header {names}")
        tcol = names.index(target)
    else:
        tcol = int(target)
        if not -width <= tcol < width:
            raise IngestionError(f"target index {target} out of range for {width} columns")
        tcol %= width

    parsed, dropped = [], 0
    for row in body:
        vals = [_parse_float(c) for c in row] if len(row) == width else [None]
        if any(v is None for v in vals):
            dropped += 1
            continue
        parsed.append(vals)
    if dropped:
        logger.info("%s: dropped %d of %d rows with missing or non-numeric cells", path.name, dropped, len(body))
    if len(parsed) < min_rows:
        raise IngestionError(
            f"{path}: only {len(parsed)} usable rows after dropping {dropped}; need at least {min_rows}"
        )
    data = np.array(parsed, dtype=float)
    if max_rows is not None and data.shape[0] > max_rows:
        if max_rows < min_rows:
            raise IngestionError(f"max_rows={max_rows} is below the minimum of {min_rows}")
        idx = np.sort(np.random.default_rng(seed).choice(data.shape[0], max_rows, replace=False))
        data = data[idx]

    y = data[:, tcol]
    X = np.delete(data, tcol, axis=1)
    feature_names = [n for i, n in enumerate(names) if i != tcol] if names else list(range(X.shape[1]))
    X, kept = standardize_columns(X)
    if X.shape[1] == 0:
        raise IngestionError(f"{path}: every feature column is constant")
    if y.std() == 0:
        raise IngestionError(f"{path}: target column is constant")
    y = (y - y.mean()) / y.std()
    dropped_cols = tuple(n for n, k in zip(feature_names, kept) if not k)
    return Dataset(X, y, name or path.stem, dropped, dropped_cols)


def load_manifest(path: Union[str, Path]) -> Dataset:
    """Load a dataset described by a key-value manifest file.

    Recognized keys: ``path`` (relative paths resolve against the manifest's
    directory), ``target``, ``max_rows``, ``seed``, ``name``, ``header``.
    """
    path = Path(path)
    try:
        spec = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise IngestionError(f"cannot read manifest {path}: {exc}") from exc
    if "path" not in spec:
        raise IngestionError(f"manifest {path} has no 'path' entry")
    data_path = Path(spec["path"])
    if not data_path.is_absolute():
        data_path = path.parent / data_path
    return load_dataset(
        data_path,
        spec.get("target", -1),
        header=spec.get("header"),
        max_rows=spec.get("max_rows", DEFAULT_MAX_ROWS),
        seed=int(spec.get("seed", 0)),
        name=spec.get("name"),
    )


@dataclass(frozen=True)
class FoldSplit:
    """Fold index (0-based) of every sample."""

    assignments: np.ndarray

    @property
    def num_folds(self) -> int:
        return int(self.assignments.max()) + 1

    def test_mask(self, k: int) -> np.ndarray:
        return self.assignments == k


def make_folds(n: int, seed: int = 0, num_folds: int = NUM_FOLDS) -> FoldSplit:
    """Random permutation cut into ``num_folds`` blocks whose sizes differ by at most one."""
    if n < num_folds:
        raise InvalidArgumentError(f"cannot split {n} samples into {num_folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=int)
    for k, block in enumerate(np.array_split(perm, num_folds)):
        assignments[block] = k
    return FoldSplit(assignments)


# --------------------------------------------------------------------------
# kernel ridge regression

def gaussian_kernel(A, B, bandwidth: float) -> np.ndarray:
    """``exp(-||a - b||^2 / (2 * bandwidth^2))`` for every row pair."""
    return kernel_from_sqdist(cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean"), bandwidth)


def kernel_from_sqdist(sqdist: np.ndarray, bandwidth: float) -> np.ndarray:
    return np.exp(-sqdist / (2.0 * bandwidth * bandwidth))


def solve_weighted_krr(K, y, w, reg: float) -> np.ndarray:
    """Dual coefficients of weighted kernel ridge regression.

    Solves ``(W K + n' reg I) alpha = W y`` with ``W = diag(w)``; ``w=None``
    means unit weights.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    if K.shape != (n, n):
        raise InvalidArgumentError(f"kernel matrix {K.shape} does not match {n} targets")
    if not reg > 0:
        raise InvalidArgumentError(f"reg must be positive, got {reg!r}")
    if w is None:
        A = K.copy()
        rhs = y
    else:
        w = np.asarray(w, dtype=float)
        if w.shape != (n,) or np.any(w < 0):
            raise InvalidArgumentError("weights must be a nonnegative vector matching y")
        A = w[:, None] * K
        rhs = w * y
    A[np.diag_indices(n)] += n * reg
    try:
        alpha = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"KRR system is singular: {exc}") from exc
    if not np.all(np.isfinite(alpha)):
        raise NumericError("KRR solve produced non-finite coefficients")
    return alpha


@dataclass(frozen=True)
class KrrHyperparams:
    lambda_exp: float
    sigma_exp: float
    weights: Optional[np.ndarray] = None

    def clamped(self) -> "KrrHyperparams":
        w = None if self.weights is None else np.clip(np.asarray(self.weights, dtype=float), 0.0, 1.0)
        return KrrHyperparams(
            float(np.clip(self.lambda_exp, *LAMBDA_RANGE)),
            float(np.clip(self.sigma_exp, *SIGMA_RANGE)),
            w,
        )

    @classmethod
    def from_vector(cls, x, weighted: bool) -> "KrrHyperparams":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), x[2:] if weighted else None)


@dataclass
class CvDiagnostics:
    score: float
    ratios: np.ndarray
    failed_folds: list = field(default_factory=list)


def krr_cv_details(dataset: Dataset, folds: FoldSplit, hp: KrrHyperparams,
                   sqdist: Optional[np.ndarray] = None) -> CvDiagnostics:
    """Cross-validated score plus per-fold error ratios.

    A fold whose solve fails gets ratio 1 and is listed in ``failed_folds``.
    ``sqdist`` may hold the precomputed pairwise squared distances of
    ``dataset.features``.
    """
    hp = hp.clamped()
    X, y = dataset.features, dataset.targets
    if hp.weights is not None and hp.weights.shape != (y.size,):
        raise InvalidArgumentError(f"expected {y.size} weights, got {hp.weights.shape}")
    if sqdist is None:
        sqdist = cdist(X, X, "sqeuclidean")
    K_all = kernel_from_sqdist(sqdist, 10.0 ** hp.sigma_exp)
    reg = 10.0 ** hp.lambda_exp
    ybar = y.mean()

    num_folds = folds.num_folds
    ratios = np.ones(num_folds)
    failed = []
    for k in range(num_folds):
        test = folds.test_mask(k)
        train = ~test
        w = None if hp.weights is None else hp.weights[train]
        try:
            alpha = solve_weighted_krr(K_all[np.ix_(train, train)], y[train], w, reg)
        except NumericError:
            failed.append(k)
            continue
        pred = K_all[np.ix_(test, train)] @ alpha
        resid = np.sum((pred - y[test]) ** 2)
        spread = np.sum((ybar - y[test]) ** 2)
        if spread == 0 or not math.isfinite(resid):
            failed.append(k)
            continue
        ratios[k] = resid / spread
    if failed:
        logger.debug("KRR CV: folds %s failed at %s", failed, hp)
    return CvDiagnostics(float(1.0 - ratios.mean()), ratios, failed)


def krr_cv_score(dataset: Dataset, folds: FoldSplit, hp: KrrHyperparams) -> float:
    return krr_cv_details(dataset, folds, hp).score


class KrrCvScore:
    """Picklable score function ``x -> krr_cv_score`` over ``x = (lam, sig[, w_1..w_n])``."""

    def __init__(self, dataset: Dataset, folds: FoldSplit, weighted: bool = False):
        self.dataset = dataset
        self.folds = folds
        self.weighted = weighted
        self._sqdist = cdist(dataset.features, dataset.features, "sqeuclidean")

    @property
    def domain(self) -> Box:
        lo = [LAMBDA_RANGE[0], SIGMA_RANGE[0]]
        hi = [LAMBDA_RANGE[1], SIGMA_RANGE[1]]
        if self.weighted:
            lo += [0.0] * self.dataset.n
            hi += [1.0] * self.dataset.n
        return Box(lo, hi)

    def __call__(self, x) -> float:
        hp = KrrHyperparams.from_vector(x, self.weighted)
        return krr_cv_details(self.dataset, self.folds, hp, self._sqdist).score


def krr_objective(dataset: Dataset, weighted: bool = False, fold_seed: int = 0) -> Objective:
    """Negated KRR CV score as a minimization :class:`Objective`."""
    score = KrrCvScore(dataset, make_folds(dataset.n, fold_seed), weighted)
    name = f"krr:{dataset.name}" + ("-hd" if weighted else "")
    return Objective(lambda x: -score(x), score.domain, name)
