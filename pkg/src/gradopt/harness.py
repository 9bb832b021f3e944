"""Benchmark harness: repeated seeded runs, evals-to-target metric, tables.

All problems are maximization problems at this level.  Optimizers minimize,
so each run sees the negated score, and trace values are negated back
before scoring.

For a problem, the reference best is the highest score any included run
reached, across every algorithm and repetition.  For target ``q``, a run's
evals-to-target is the first (1-based) evaluation whose score is at least
``q * reference_best``, or the budget if that never happens.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .baselines import AdaLipoConfig, run_adalipo, run_prs
from .core import Box, GradOptConfig, RunResult, run_gradopt
from .errors import ConfigError, InvalidArgumentError, MetricUndefinedError
from .objectives import (
    SYNTHETIC,
    KrrCvScore,
    Objective,
    eval_synthetic,
    load_manifest,
    make_folds,
)

logger = logging.getLogger(__name__)

DEFAULT_TARGETS = (0.90, 0.95, 0.99)
DEFAULT_BUDGET = 1000
DEFAULT_REPETITIONS = 100

RUNNABLE_ALGORITHMS = ("gradopt", "prs", "adalipo")
# results for these come from outside implementations, merged from CSV
EXTERNAL_ALGORITHMS = ("hoo", "adalipo-tr")
PROBLEM_KINDS = ("sphere", "hd-surrogate", "synthetic", "krr")


# --------------------------------------------------------------------------
# problems

class SphereScore:
    """``1 - ||x||^2`` on ``[-1, 1]^dim``; best score 1 at the origin."""

    def __init__(self, dim: int = 2):
        self.dim = int(dim)
        self.domain = Box.cube(-1.0, 1.0, self.dim)

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return 1.0 - float(np.dot(x, x))


class SyntheticScore:
    """``offset - f(x)`` for a named synthetic function on its default cube."""

    def __init__(self, function: str, dim: int = 2, offset: float = 1.0):
        if function not in SYNTHETIC:
            raise ConfigError(f"unknown synthetic function {function!r}")
        r = SYNTHETIC[function][1]
        self.function = function
        self.offset = float(offset)
        self.domain = Box.cube(-r, r, int(dim))

    def __call__(self, x) -> float:
        return self.offset - eval_synthetic(self.function, x)


class HdSurrogateScore:
    """Quadratic stand-in for the weighted KRR tuning problem.

    Coordinates are ``(lam, sig, w_1..w_m)`` on
    ``[-2, 4] x [-5, 5] x [0, 1]^m``.  With ``z`` each coordinate's offset
    from its optimum divided by its box width, the score is
    ``1 - hyper_scale * (z_lam^2 + z_sig^2) - weight_scale * mean(z_w^2)``.
    The optimum sits at ``lam = 1, sig = 0.5`` and at weight 1 for all but
    the last ``corrupted`` samples, whose optimal weight is 0.

    Default scales make a uniformly random point score about 0 on average,
    with the hyperparameter and weight terms each costing about 0.5.
    """

    def __init__(self, num_weights: int = 50, hyper_scale: float = 3.0, weight_scale: float = 1.5,
                 corrupted: int = 5):
        if not 0 <= corrupted <= num_weights:
            raise ConfigError("corrupted must lie between 0 and num_weights")
        self.num_weights = int(num_weights)
        self.hyper_scale = float(hyper_scale)
        self.weight_scale = float(weight_scale)
        self.corrupted = int(corrupted)
        self.domain = Box([-2.0, -5.0] + [0.0] * self.num_weights, [4.0, 5.0] + [1.0] * self.num_weights)
        w_opt = np.ones(self.num_weights)
        w_opt[self.num_weights - self.corrupted:] = 0.0
        self.optimum = np.concatenate([[1.0, 0.5], w_opt])

    def __call__(self, x) -> float:
        z = (np.asarray(x, dtype=float) - self.optimum) / self.domain.width
        hyper = z[0] ** 2 + z[1] ** 2
        weights = float(np.mean(z[2:] ** 2)) if self.num_weights else 0.0
        return 1.0 - self.hyper_scale * float(hyper) - self.weight_scale * weights


def _as_key(spec: dict) -> str:
    return yaml.safe_dump(spec, sort_keys=True)


@lru_cache(maxsize=32)
def _build_score(key: str):
    return build_score(yaml.safe_load(key))


def build_score(spec: dict):
    """Score function (to maximize) with a ``domain`` attribute for a problem spec."""
    kind = spec.get("kind")
    if kind == "sphere":
        return SphereScore(spec.get("dim", 2))
    if kind == "synthetic":
        return SyntheticScore(spec["function"], spec.get("dim", 2), spec.get("offset", 1.0))
    if kind == "hd-surrogate":
        return HdSurrogateScore(
            spec.get("num_weights", 50), spec.get("hyper_scale", 3.0),
            spec.get("weight_scale", 1.5), spec.get("corrupted", 5),
        )
    if kind == "krr":
        dataset = load_manifest(spec["manifest"])
        folds = make_folds(dataset.n, int(spec.get("fold_seed", 0)))
        return KrrCvScore(dataset, folds, bool(spec.get("weighted", False)))
    raise ConfigError(f"unknown problem kind {kind!r}; known: {PROBLEM_KINDS}")


class _Negated:
    def __init__(self, score):
        self.score = score

    def __call__(self, x):
        return -self.score(x)


# --------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    problems: list
    algorithms: list
    budget: int = DEFAULT_BUDGET
    repetitions: int = DEFAULT_REPETITIONS
    targets: tuple = DEFAULT_TARGETS
    master_seed: int = 0
    external_results: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(raw) - {"problems", "algorithms", "budget", "repetitions", "targets",
                              "master_seed", "external_results"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        problems = [dict(p) for p in raw.get("problems", [])]
        algorithms = [{"name": a} if isinstance(a, str) else dict(a) for a in raw.get("algorithms", [])]
        external = list(raw.get("external_results", []))
        if base_dir is not None:
            for p in problems:
                if "manifest" in p and not Path(p["manifest"]).is_absolute():
                    p["manifest"] = str((base_dir / p["manifest"]).resolve())
            external = [str((base_dir / e).resolve()) if not Path(e).is_absolute() else e for e in external]
        cfg = cls(
            problems=problems,
            algorithms=algorithms,
            budget=int(raw.get("budget", DEFAULT_BUDGET)),
            repetitions=int(raw.get("repetitions", DEFAULT_REPETITIONS)),
            targets=tuple(float(t) for t in raw.get("targets", DEFAULT_TARGETS)),
            master_seed=int(raw.get("master_seed", 0)),
            external_results=external,
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw or {}, path.parent)

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "repetitions": self.repetitions,
            "targets": list(self.targets),
            "master_seed": self.master_seed,
            "problems": self.problems,
            "algorithms": self.algorithms,
            "external_results": self.external_results,
        }

    @property
    def problem_names(self) -> list:
        return [p["name"] for p in self.problems]

    @property
    def algorithm_names(self) -> list:
        return [a["name"] for a in self.algorithms]

    def validate(self, resolve: bool = False):
        """Check the config; ``resolve=True`` also builds every problem (loads datasets)."""
        if self.budget < 1:
            raise ConfigError(f"budget must be positive, got {self.budget}")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be positive, got {self.repetitions}")
        if not self.targets or not all(0 < t <= 1 for t in self.targets):
            raise ConfigError(f"targets must lie in (0, 1], got {self.targets}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if not self.problems:
            raise ConfigError("no problems configured")
        names = self.problem_names
        if len(set(names)) != len(names):
            raise ConfigError("problem names must be unique")
        for p in self.problems:
            if "name" not in p:
                raise ConfigError(f"problem without a name: {p}")
            if p.get("kind") not in PROBLEM_KINDS:
                raise ConfigError(f"problem {p['name']!r}: unknown kind {p.get('kind')!r}")
            if p["kind"] == "krr" and "manifest" not in p:
                raise ConfigError(f"problem {p['name']!r}: krr problems need a manifest")
            if p["kind"] == "synthetic" and p.get("function") not in SYNTHETIC:
                raise ConfigError(f"problem {p['name']!r}: unknown synthetic function {p.get('function')!r}")
        algs = self.algorithm_names
        if not algs:
            raise ConfigError("no algorithms configured")
        if len(set(algs)) != len(algs):
            raise ConfigError("algorithm names must be unique")
        for a in self.algorithms:
            if a["name"] in EXTERNAL_ALGORITHMS:
                raise ConfigError(
                    f"{a['name']!r} has no built-in implementation; supply its results through external_results"
                )
            if a["name"] not in RUNNABLE_ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a['name']!r}; known: {RUNNABLE_ALGORITHMS}")
            _algorithm_options(a)
        if "gradopt" in algs:
            epochs = _algorithm_options(next(a for a in self.algorithms if a["name"] == "gradopt")).get("num_epochs", 5)
            if self.budget < 2 * epochs:
                raise ConfigError(f"budget {self.budget} too small for GradOpt with {epochs} epochs")
        if "adalipo" in algs and self.budget < 2:
            raise ConfigError("AdaLipo needs a budget of at least 2")
        for path in self.external_results:
            if not Path(path).is_file():
                raise ConfigError(f"external results file {path} not found")
        if resolve:
            for p in self.problems:
                try:
                    _build_score(_as_key(_problem_spec(p)))
                except Exception as exc:
                    raise ConfigError(f"problem {p['name']!r} cannot be built: {exc}") from exc


_ALG_OPTIONS = {
    "gradopt": {"num_epochs", "init", "x0", "reset_eta_per_epoch"},
    "prs": set(),
    "adalipo": {"exploration_prob", "grid_base", "rejection_cap"},
}


def _algorithm_options(alg: dict) -> dict:
    opts = {k: v for k, v in alg.items() if k != "name"}
    bad = set(opts) - _ALG_OPTIONS[alg["name"]]
    if bad:
        raise ConfigError(f"algorithm {alg['name']!r} does not take options {sorted(bad)}")
    return opts


def _problem_spec(problem: dict) -> dict:
    return {k: v for k, v in problem.items() if k != "name"}


def child_seed(master_seed: int, problem: str, repetition: int) -> int:
    """Stable 64-bit seed for one repetition of one problem.

    Algorithms share it, so repetition ``r`` of every algorithm starts from
    the same seed (paired runs).
    """
    digest = hashlib.blake2b(f"{master_seed}|{problem}|{repetition}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# --------------------------------------------------------------------------
# metric

def first_crossing(scores, threshold: float) -> Optional[int]:
    """1-based index of the first score ``>= threshold``, or None."""
    hits = np.flatnonzero(np.asarray(scores, dtype=float) >= threshold)
    return int(hits[0]) + 1 if hits.size else None


def evals_to_target(trace_values, reference_best: float, target: float, budget: int) -> int:
    """Evaluations until a score reaches ``target * reference_best``; ``budget`` if never."""
    if not 0 < target <= 1:
        raise InvalidArgumentError(f"target must lie in (0, 1], got {target}")
    if not reference_best > 0:
        raise MetricUndefinedError(f"reference best {reference_best} is not positive")
    t = first_crossing(trace_values, target * reference_best)
    return budget if t is None or t > budget else t


# --------------------------------------------------------------------------
# running

@dataclass
class RunRecord:
    problem: str
    algorithm: str
    repetition: int
    seed: int
    scores: np.ndarray
    failed: bool = False
    error: Optional[str] = None


def run_algorithm(name: str, options: dict, f, box: Box, budget: int, seed: int) -> RunResult:
    """Dispatch one minimization run by algorithm name."""
    if name == "gradopt":
        return run_gradopt(f, box, GradOptConfig(budget=budget, seed=seed, **options))
    if name == "prs":
        return run_prs(f, box, budget, seed)
    if name == "adalipo":
        return run_adalipo(f, box, budget, AdaLipoConfig(seed=seed, **options))
    raise ConfigError(f"unknown algorithm {name!r}")


def _run_task(task) -> RunRecord:
    problem, spec_key, alg_name, options, budget, rep, seed = task
    score = _build_score(spec_key)
    objective = Objective(_Negated(score), score.domain, problem)
    result = run_algorithm(alg_name, options, objective, score.domain, budget, seed)
    if result.evals_used > budget:
        raise AssertionError(f"{alg_name} used {result.evals_used} > {budget} evaluations")
    return RunRecord(problem, alg_name, rep, seed, -result.values, result.failed, result.error)


def execute_runs(cfg: ExperimentConfig, workers: int = 1) -> list:
    tasks = []
    for p in cfg.problems:
        key = _as_key(_problem_spec(p))
        for a in cfg.algorithms:
            opts = _algorithm_options(a)
            for rep in range(cfg.repetitions):
                seed = child_seed(cfg.master_seed, p["name"], rep)
                tasks.append((p["name"], key, a["name"], opts, cfg.budget, rep, seed))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return [_run_task(t) for t in tasks]


@dataclass
class Cell:
    mean: float
    std: float
    censored: int
    runs: int
    failed: int = 0

    @property
    def na(self) -> bool:
        return not math.isfinite(self.mean)


@dataclass
class ResultsTable:
    """Cells keyed by ``(problem, algorithm, target)``.  ``std`` is the population standard deviation."""

    problems: list
    algorithms: list
    targets: list
    budget: int
    cells: dict = field(default_factory=dict)
    reference_best: dict = field(default_factory=dict)

    def merge(self, other: "ResultsTable") -> "ResultsTable":
        """Add cells from ``other`` (e.g. externally produced results); existing keys win."""
        for p in other.problems:
            if p not in self.problems:
                self.problems.append(p)
        for a in other.algorithms:
            if a not in self.algorithms:
                self.algorithms.append(a)
        for t in other.targets:
            if t not in self.targets:
                self.targets.append(t)
        for key, cell in other.cells.items():
            self.cells.setdefault(key, cell)
        return self


def summarize(records: list, cfg: ExperimentConfig) -> ResultsTable:
    """Two-pass scoring: reference best per problem first, then every cell."""
    table = ResultsTable(list(cfg.problem_names), list(cfg.algorithm_names), list(cfg.targets), cfg.budget)
    by_key = {}
    for rec in records:
        by_key.setdefault((rec.problem, rec.algorithm), []).append(rec)
    for p in cfg.problem_names:
        good = [r.scores for r in records if r.problem == p and not r.failed and r.scores.size]
        table.reference_best[p] = max((float(s.max()) for s in good), default=-math.inf)
    for p in cfg.problem_names:
        ref = table.reference_best[p]
        for a in cfg.algorithm_names:
            recs = sorted(by_key.get((p, a), []), key=lambda r: r.repetition)
            good = [r for r in recs if not r.failed]
            nfail = len(recs) - len(good)
            for t in cfg.targets:
                if not ref > 0 or not good:
                    table.cells[(p, a, t)] = Cell(math.nan, math.nan, 0, len(good), nfail)
                    continue
                vals, censored = [], 0
                for r in good:
                    hit = first_crossing(r.scores, t * ref)
                    if hit is None:
                        censored += 1
                    vals.append(evals_to_target(r.scores, ref, t, cfg.budget))
                arr = np.array(vals, dtype=float)
                table.cells[(p, a, t)] = Cell(float(arr.mean()), float(arr.std()), censored, len(good), nfail)
    return table


def run_experiment(cfg: ExperimentConfig, workers: int = 1, return_records: bool = False):
    cfg.validate(resolve=True)
    records = execute_runs(cfg, workers)
    table = summarize(records, cfg)
    for path in cfg.external_results:
        table.merge(read_results_csv(Path(path).read_text(), cfg.budget))
    return (table, records) if return_records else table


# --------------------------------------------------------------------------
# output

CSV_COLUMNS = ("problem", "algorithm", "target", "mean", "std", "censored")
_CELL_RE = re.compile(r"^\s*(?:\*\*)?([-+0-9.eE]+)(?:\*\*)?\(±\s*([-+0-9.eE]+)\)\s*$")


def format_cell(mean: float, std: float) -> str:
    """``mean(± std)`` with the mean rounded to 2 decimals and the spread to an integer."""
    return f"{_fmt_mean(mean)}(± {int(round(std))})"


def _fmt_mean(mean: float) -> str:
    return repr(round(float(mean), 2))


def parse_cell(text: str):
    """Inverse of :func:`format_cell` (bold markers tolerated)."""
    m = _CELL_RE.match(text)
    if not m:
        raise ValueError(f"not a results cell: {text!r}")
    return float(m.group(1)), float(m.group(2))


def _target_label(t: float) -> str:
    return f"{t * 100:g}% Target"


def emit_results(table: ResultsTable, fmt: str = "markdown") -> str:
    if fmt == "csv":
        return _emit_csv(table)
    if fmt == "markdown":
        return _emit_markdown(table)
    raise InvalidArgumentError(f"unknown format {fmt!r}")


def _emit_csv(table: ResultsTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for p in table.problems:
        for a in table.algorithms:
            for t in table.targets:
                cell = table.cells.get((p, a, t))
                if cell is None:
                    continue
                if cell.na:
                    writer.writerow([p, a, repr(t), "", "", cell.censored])
                else:
                    writer.writerow([p, a, repr(t), repr(cell.mean), repr(cell.std), cell.censored])
    return buf.getvalue()


def read_results_csv(text: str, budget: int = DEFAULT_BUDGET) -> ResultsTable:
    """Parse long-form CSV produced by :func:`emit_results` (or by a third party)."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames[:6]) != CSV_COLUMNS:
        raise ConfigError(f"results CSV must start with columns {CSV_COLUMNS}")
    table = ResultsTable([], [], [], budget)
    for row in reader:
        p, a, t = row["problem"], row["algorithm"], float(row["target"])
        for lst, v in ((table.problems, p), (table.algorithms, a), (table.targets, t)):
            if v not in lst:
                lst.append(v)
        mean = float(row["mean"]) if row["mean"] else math.nan
        std = float(row["std"]) if row["std"] else math.nan
        table.cells[(p, a, t)] = Cell(mean, std, int(row["censored"] or 0), 0)
    return table


def _emit_markdown(table: ResultsTable) -> str:
    blocks = []
    for t in table.targets:
        lines = ["| " + " | ".join([_target_label(t)] + table.problems) + " |",
                 "|" + "---|" * (len(table.problems) + 1)]
        best = {}
        for p in table.problems:
            means = [table.cells[(p, a, t)].mean for a in table.algorithms
                     if (p, a, t) in table.cells and not table.cells[(p, a, t)].na]
            best[p] = round(min(means), 2) if means else None
        for a in table.algorithms:
            row = [a]
            for p in table.problems:
                cell = table.cells.get((p, a, t))
                if cell is None or cell.na:
                    row.append("N/A")
                    continue
                text = format_cell(cell.mean, cell.std)
                if best[p] is not None and round(cell.mean, 2) == best[p]:
                    m = _fmt_mean(cell.mean)
                    text = f"**{m}**" + text[len(m):]
                row.append(text)
            lines.append("| " + " | ".join(row) + " |")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def write_traces(records: list, out_dir: Path):
    """One CSV per run: ``eval_index, value, best_so_far`` (scores, maximization)."""
    for rec in records:
        d = out_dir / "traces" / _safe(rec.problem) / _safe(rec.algorithm)
        d.mkdir(parents=True, exist_ok=True)
        best = np.maximum.accumulate(rec.scores) if rec.scores.size else rec.scores
        with (d / f"rep_{rec.repetition:04d}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eval_index", "value", "best_so_far"])
            for i, (v, b) in enumerate(zip(rec.scores.tolist(), best.tolist()), start=1):
                w.writerow([i, repr(v), repr(b)])


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)
