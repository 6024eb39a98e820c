"""Phase-transition sweeps over (n, m, theta) grids."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .._rng import check_seed, child_seed
from ..model import make_instance
from ..optimizer import DEFAULT_CHUNK, SolveConfig, default_schedule
from ..recovery import DEFAULT_TOL, recover_dictionary, restart_count

log = logging.getLogger(__name__)

RAW_COLUMNS = ["n", "theta", "m", "instance_seed", "success", "atoms_found", "iterations", "seconds"]
AGG_COLUMNS = ["n", "theta", "m", "instances", "successes", "success_rate",
               "mean_runs_to_success", "seconds"]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class SweepConfig:
    """Grid and solver settings of a sweep.

    The sample sizes are either ``m_values`` (explicit) or
    ``round(10 * n**p)`` for each ``p`` in ``m_exponents``. ``solver`` holds
    ``preset`` ("experiment" or "theory") and optional ``alpha``,
    ``max_iters``, ``stagnation_window``, ``stagnation_rtol``, ``f_target``.
    """

    n_list: list
    theta_list: list
    m_exponents: list | None = None
    m_values: list | None = None
    instances_per_cell: int = 10
    dict_kind: str = "identity"
    solver: dict = field(default_factory=lambda: {"preset": "experiment"})
    tol: float = DEFAULT_TOL
    master_seed: int = 0
    runs: int | None = None
    chunk_size: int = DEFAULT_CHUNK
    theta_override: bool = False

    def __post_init__(self):
        if not self.n_list:
            raise ValueError("n_list must not be empty")
        if not self.theta_list:
            raise ValueError("theta_list must not be empty")
        if (self.m_exponents is None) == (self.m_values is None):
            raise ValueError("give exactly one of m_exponents and m_values")
        if not (self.m_exponents or self.m_values):
            raise ValueError("the m grid must not be empty")
        if int(self.instances_per_cell) < 1:
            raise ValueError("instances_per_cell must be at least 1")
        check_seed(self.master_seed)
        self.solve_config(int(self.n_list[0]))  # validates the solver block

    def m_grid(self, n: int) -> list:
        if self.m_values is not None:
            return [int(m) for m in self.m_values]
        return [_round_half_up(10.0 * n ** float(p)) for p in self.m_exponents]

    def cells(self):
        for n in self.n_list:
            for m in self.m_grid(int(n)):
                for th in self.theta_list:
                    yield int(n), int(m), float(th)

    def solve_config(self, n: int) -> SolveConfig:
        s = dict(self.solver)
        preset = s.pop("preset", "experiment")
        alpha = s.pop("alpha", 0.375 if preset == "theory" else 0.5)
        return SolveConfig(schedule=default_schedule(n, alpha, preset), **s)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        rule = d.pop("m_rule", None)
        if rule is not None:
            if isinstance(rule, dict) and "exponents" in rule:
                d["m_exponents"] = list(rule["exponents"])
            elif isinstance(rule, dict) and "values" in rule:
                d["m_values"] = list(rule["values"])
            elif isinstance(rule, list):
                d["m_values"] = list(rule)
            else:
                raise ValueError("m_rule must be a list or an object with 'exponents' or 'values'")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown sweep config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SweepConfig":
        return cls.from_dict(json.loads(text))


def _theta_key(theta: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(theta)))[0]


def instance_seed(master_seed: int, n: int, m: int, theta: float, index: int) -> int:
    """Seed of instance ``index`` in cell (n, m, theta); depends only on these values."""
    return child_seed(master_seed, 0, n, m, _theta_key(theta), index)


def restart_seed(master_seed: int, n: int, m: int, theta: float, index: int) -> int:
    return child_seed(master_seed, 1, n, m, _theta_key(theta), index)


@dataclass(frozen=True)
class SweepRow:
    n: int
    theta: float
    m: int
    instance_seed: int
    success: bool
    atoms_found: int
    iterations: int
    seconds: float
    runs_to_success: int | None = None


@dataclass(frozen=True)
class CellResult:
    n: int
    theta: float
    m: int
    instances: int
    successes: int
    success_rate: float
    mean_runs_to_success: float | None
    seconds: float


@dataclass
class SweepResult:
    rows: list
    cells: list
    timing: bool = False

    def cell(self, n, m, theta) -> CellResult:
        for c in self.cells:
            if (c.n, c.m, c.theta) == (n, m, float(theta)):
                return c
        raise KeyError((n, m, theta))

    def raw_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for r in self.rows:
            w.writerow([r.n, repr(r.theta), r.m, r.instance_seed, int(r.success), r.atoms_found,
                        r.iterations, f"{r.seconds:.3f}" if self.timing else ""])
        return buf.getvalue()

    def agg_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(AGG_COLUMNS)
        for c in self.cells:
            w.writerow([c.n, repr(c.theta), c.m, c.instances, c.successes, repr(c.success_rate),
                        "" if c.mean_runs_to_success is None else repr(c.mean_runs_to_success),
                        f"{c.seconds:.3f}" if self.timing else ""])
        return buf.getvalue()

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep_raw.csv"), "w", newline="") as fh:
            fh.write(self.raw_csv())
        with open(os.path.join(out_dir, "sweep_agg.csv"), "w", newline="") as fh:
            fh.write(self.agg_csv())

    def monotone_fraction(self) -> float | None:
        """Share of adjacent m pairs (per n, theta) along which the success rate does not drop."""
        groups = {}
        for c in self.cells:
            groups.setdefault((c.n, c.theta), []).append(c)
        good = total = 0
        for cs in groups.values():
            cs.sort(key=lambda c: c.m)
            for a, b in zip(cs, cs[1:]):
                total += 1
                good += b.success_rate >= a.success_rate
        return good / total if total else None


def _run_instance(job):
    config, n, m, theta, index = job
    seed = instance_seed(config.master_seed, n, m, theta, index)
    t0 = time.perf_counter()
    try:
        inst = make_instance(n, m, theta, config.dict_kind, seed, theta_override=config.theta_override)
        runs = restart_count(n) if config.runs is None else int(config.runs)
        rep = recover_dictionary(inst, config.solve_config(n), runs, config.tol,
                                 restart_seed(config.master_seed, n, m, theta, index),
                                 chunk_size=config.chunk_size)
        row = SweepRow(n, theta, m, seed, rep.success, len(rep.atoms), rep.total_iterations,
                       time.perf_counter() - t0, rep.runs_to_success())
    except Exception as exc:  # a failed instance must not stop the sweep
        log.error("cell n=%d m=%d theta=%g instance %d failed: %s", n, m, theta, index, exc)
        row = SweepRow(n, theta, m, seed, False, 0, 0, time.perf_counter() - t0, None)
    return row


def run_sweep(config: SweepConfig, parallelism: int = 1, timing: bool = False, out_dir=None) -> SweepResult:
    """Run every instance of every cell; output is deterministic given ``config``.

    Instances are the unit of parallel work. Timings are measured always but
    only written to the CSV files when ``timing`` is set, since they would
    make otherwise identical outputs differ.
    """
    jobs = [(config, n, m, th, i) for n, m, th in config.cells()
            for i in range(int(config.instances_per_cell))]
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(_run_instance, jobs))
    else:
        rows = []
        for job in jobs:
            rows.append(_run_instance(job))
            r = rows[-1]
            log.info("n=%d m=%d theta=%g seed=%d success=%s atoms=%d (%.1fs)",
                     r.n, r.m, r.theta, r.instance_seed, r.success, r.atoms_found, r.seconds)
    # rows are in job order either way (pool.map preserves order)
    cells = []
    for n, m, th in config.cells():
        rs = [r for r in rows if (r.n, r.m, r.theta) == (n, m, th)]
        succ = sum(r.success for r in rs)
        rts = [r.runs_to_success for r in rs if r.runs_to_success is not None]
        cells.append(CellResult(n, th, m, len(rs), succ, succ / len(rs),
                                sum(rts) / len(rts) if rts else None,
                                sum(r.seconds for r in rs)))
    result = SweepResult(rows, cells, timing)
    if out_dir is not None:
        result.write(out_dir)
    return result
