"""Multi-restart recovery of a full dictionary and matching against ground truth."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import check_seed, child_rng
from .model import Instance
from .optimizer import (
    DEFAULT_CHUNK,
    PreparedData,
    SolveConfig,
    _solve_batch,
    random_initialization,
)

DEFAULT_TOL = 1e-3
CANON_TOL = 1e-9


@dataclass(frozen=True)
class AtomMatch:
    """Closest signed dictionary atom to a unit vector (0-based ``atom_index``)."""

    atom_index: int
    sign: int
    error: float
    matched: bool

    def to_dict(self):
        return {"atom_index": self.atom_index, "sign": self.sign,
                "error": self.error, "matched": self.matched}


def match_atom(q, A, tol: float = DEFAULT_TOL) -> AtomMatch:
    """Match ``q`` to ``argmax_i |<a_i, q>|`` with the sign that minimizes the error."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    q = np.asarray(q, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    c = A.T @ q
    i = int(np.argmax(np.abs(c)))
    sign = 1 if c[i] >= 0 else -1
    err = float(np.linalg.norm(sign * A[:, i] - q))
    return AtomMatch(i, sign, err, err <= tol)


def restart_count(n: int) -> int:
    """round(5 n ln n), rounding halves up."""
    if n < 2:
        raise ValueError("restart_count needs n >= 2")
    return int(math.floor(5.0 * n * math.log(n) + 0.5))


# ---------------------------------------------------------------------------
# restarts


@dataclass(frozen=True)
class RunResult:
    run: int
    q_best: np.ndarray = field(repr=False)
    f_best: float
    iterations: int
    status: str

    @property
    def failed(self) -> bool:
        return self.status == "nonfinite"


_WORKER = {}


def _worker_init(Y, config):
    _WORKER["data"] = PreparedData(Y, config.zero_tol)
    _WORKER["config"] = config


def _run_chunk(data, config, master_seed, runs):
    Q0 = np.array([random_initialization(data.n, child_rng(master_seed, r)) for r in runs])
    traces = _solve_batch(data, config, Q0)
    return [(r, t.q_best, t.f_best, t.iterations_used, t.status) for r, t in zip(runs, traces)]


def _worker_chunk(args):
    master_seed, runs = args
    return _run_chunk(_WORKER["data"], _WORKER["config"], master_seed, runs)


def run_restarts(Y, config: SolveConfig, runs: int, master_seed=0, parallelism: int = 1,
                 chunk_size: int = DEFAULT_CHUNK) -> list:
    """Solve from ``runs`` uniform initializations; run r starts from stream (master_seed, r).

    Runs are grouped into fixed chunks of consecutive indices, so the output
    does not depend on ``parallelism``.
    """
    master_seed = check_seed(master_seed)
    runs = int(runs)
    if runs <= 0:
        return []
    chunks = [list(range(lo, min(lo + chunk_size, runs))) for lo in range(0, runs, chunk_size)]
    if parallelism <= 1 or len(chunks) == 1:
        data = PreparedData(Y, config.zero_tol)
        rows = [row for ch in chunks for row in _run_chunk(data, config, master_seed, ch)]
    else:
        with ProcessPoolExecutor(max_workers=parallelism, initializer=_worker_init,
                                 initargs=(np.asarray(Y), config)) as pool:
            rows = [row for part in pool.map(_worker_chunk, [(master_seed, ch) for ch in chunks])
                    for row in part]
    rows.sort(key=lambda row: row[0])
    return [RunResult(r, q, float(fb), int(it), str(st)) for r, q, fb, it, st in rows]


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class RunRecord:
    run: int
    f_best: float
    iterations: int
    status: str
    match: AtomMatch | None

    def to_dict(self):
        d = {"run": self.run, "f_best": self.f_best, "iterations": self.iterations,
             "status": self.status}
        d.update(self.match.to_dict() if self.match else
                 {"atom_index": None, "sign": None, "error": None, "matched": False})
        return d


@dataclass
class RecoveryReport:
    """Aggregate of a multi-restart recovery.

    ``success`` holds exactly when every atom was matched by some run.
    ``wall_time`` is informational and left out of the serialized form
    unless asked for, so reports of identical computations are identical.
    """

    n: int
    runs: int
    tol: float
    master_seed: int
    records: list
    atoms: dict = field(repr=False)  # atom index -> best matching unit vector
    wall_time: float = 0.0

    @property
    def distinct_atoms(self) -> tuple:
        return tuple(sorted(self.atoms))

    @property
    def success(self) -> bool:
        return len(self.atoms) == self.n

    @property
    def total_iterations(self) -> int:
        return int(sum(r.iterations for r in self.records))

    @property
    def failed_runs(self) -> int:
        return sum(r.status == "nonfinite" for r in self.records)

    def runs_to_success(self):
        """Number of runs (in run order) after which all atoms were found, or None."""
        seen = set()
        for i, rec in enumerate(self.records):
            if rec.match is not None and rec.match.matched:
                seen.add(rec.match.atom_index)
                if len(seen) == self.n:
                    return i + 1
        return None

    def to_dict(self, include_timing: bool = False):
        d = {
            "n": self.n,
            "runs": self.runs,
            "tol": self.tol,
            "master_seed": self.master_seed,
            "success": self.success,
            "atoms_found": len(self.atoms),
            "distinct_atoms": list(self.distinct_atoms),
            "total_iterations": self.total_iterations,
            "failed_runs": self.failed_runs,
            "runs_to_success": self.runs_to_success(),
            "matches": [r.to_dict() for r in self.records],
        }
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2) + "\n"

    def atoms_csv(self) -> str:
        """One recovered unit vector per row, ordered by atom index."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["atom"] + [f"x{j}" for j in range(self.n)])
        for i in self.distinct_atoms:
            w.writerow([i] + [repr(float(v)) for v in self.atoms[i]])
        return buf.getvalue()


def assemble_report(results, A, tol=DEFAULT_TOL, master_seed=0, wall_time=0.0) -> RecoveryReport:
    """Match every run against the columns of ``A``.

    Merging is order independent: for each atom the kept vector is the one
    with the smallest error, ties going to the lower run index.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    records, best = [], {}
    for res in sorted(results, key=lambda r: r.run):
        match = None if res.failed else match_atom(res.q_best, A, tol)
        records.append(RunRecord(res.run, res.f_best, res.iterations, res.status, match))
        if match is not None and match.matched:
            cur = best.get(match.atom_index)
            if cur is None or match.error < cur[0]:
                best[match.atom_index] = (match.error, res.q_best)
    atoms = {i: v for i, (_, v) in sorted(best.items())}
    return RecoveryReport(n, len(records), tol, master_seed, records, atoms, wall_time)


def recover_dictionary(instance: Instance, config: SolveConfig | None = None, R: int | None = None,
                       tol: float = DEFAULT_TOL, master_seed=0, parallelism: int = 1,
                       chunk_size: int = DEFAULT_CHUNK) -> RecoveryReport:
    """Run ``R`` independent restarts (default ``restart_count(n)``) and match each result."""
    if config is None:
        config = SolveConfig.experiment()
    if R is None:
        R = restart_count(instance.n)
    t0 = time.perf_counter()
    results = run_restarts(instance.observations, config, R, master_seed, parallelism, chunk_size)
    return assemble_report(results, instance.dictionary, tol, check_seed(master_seed),
                           time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# deduplication


def canonicalize_sign(v, tol: float = CANON_TOL):
    """Flip ``v`` so that its first entry with |value| > tol is positive."""
    v = np.asarray(v, dtype=np.float64)
    big = np.flatnonzero(np.abs(v) > tol)
    if big.size and v[big[0]] < 0:
        return -v
    return v.copy()


def dedup_atoms(vectors, target_count: int | None = None, correlation_threshold: float | None = None,
                return_indices: bool = False):
    """Prune near duplicates from a list of unit vectors.

    After sign canonicalization, repeatedly removes the vector whose largest
    absolute correlation with another remaining vector is biggest, ties going
    against the later original index. Removal continues until
    ``target_count`` vectors remain, or, in threshold mode (no target), until
    no remaining pair correlates above ``correlation_threshold``.
    """
    V = np.array([canonicalize_sign(v) for v in vectors], dtype=np.float64)
    N = V.shape[0]
    if (target_count is None) == (correlation_threshold is None):
        raise ValueError("give exactly one of target_count and correlation_threshold")
    if target_count is not None and target_count > N:
        raise ValueError(f"cannot keep {target_count} vectors out of {N}")
    if N == 0:
        return ([], []) if return_indices else []
    U = V / np.linalg.norm(V, axis=1, keepdims=True)
    C = np.abs(U @ U.T)
    np.fill_diagonal(C, -np.inf)
    alive = np.ones(N, dtype=bool)
    order = np.arange(N)
    floor = target_count if target_count is not None else 1
    while alive.sum() > floor:
        row_max = C.max(axis=1)
        top = row_max[alive].max()
        if correlation_threshold is not None and top <= correlation_threshold:
            break
        drop = order[alive & (row_max == top)].max()
        alive[drop] = False
        C[drop, :] = -np.inf
        C[:, drop] = -np.inf
    kept = np.flatnonzero(alive)
    out = [V[i] for i in kept]
    return (out, kept.tolist()) if return_indices else out


# ---------------------------------------------------------------------------
# coupon collector


def coupon_miss_bound(n: int, S: int) -> float:
    """n (1 - 1/n)^S, a bound on the chance that S uniform draws miss one of n atoms."""
    return n * (1.0 - 1.0 / n) ** S


def simulate_coupon_misses(n: int, S: int, trials: int, seed=0) -> float:
    """Fraction of trials in which S uniform draws from n atoms miss at least one."""
    rng = child_rng(seed)
    draws = rng.integers(0, n, size=(trials, S))
    hit = np.zeros((trials, n), dtype=bool)
    np.put_along_axis(hit, draws, True, axis=1)
    return float(np.mean(~hit.all(axis=1)))
