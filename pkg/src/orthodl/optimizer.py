"""Riemannian subgradient descent on the sphere with a projection retraction.

The iteration is ``q <- (q - eta_k v) / ||q - eta_k v||`` with ``v`` the
tangent projection of the sign(0) = 0 subgradient. The objective is
evaluated at every iterate so that the best point visited is tracked exactly;
``record_every`` only thins what is stored in the trace.

Many runs on the same data are advanced together in batches. Sparse data goes
through a compiled per-sample loop whose results for a run do not depend on
the rest of its batch. Dense data goes through BLAS products, which are
reproducible for a fixed batch composition.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._rng import child_rng
from .objective import SCALE, UNIT_TOL, ZERO_TOL, check_unit, riemannian_subgradient

log = logging.getLogger(__name__)

IDENTITY_TOL = 1e-10
DEFAULT_CHUNK = 256
# above this fraction of nonzeros the BLAS path beats the per-sample kernel
SPARSE_DENSITY_CUTOFF = 0.5


class NonFiniteObjectiveError(FloatingPointError):
    """The objective became NaN or infinite, which points at corrupt data."""


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``eta_k``.

    ``power_decay`` gives ``base_scale * k**(-alpha)`` for k >= 1 and
    ``base_scale`` at k = 0; ``constant`` gives ``base_scale`` throughout.
    """

    kind: str = "power_decay"
    alpha: float = 0.5
    base_scale: float = 1.0

    def __post_init__(self):
        if self.kind == "power_decay":
            if not (0.0 < self.alpha <= 0.5):
                raise ValueError(f"alpha must lie in (0, 1/2], got {self.alpha}")
            if not self.base_scale > 0:
                raise ValueError("base_scale must be positive")
        elif self.kind == "constant":
            if not self.base_scale >= 0:
                raise ValueError("constant step must be nonnegative")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def power_decay(cls, alpha: float, base_scale: float = 1.0) -> "StepSchedule":
        return cls("power_decay", float(alpha), float(base_scale))

    @classmethod
    def constant(cls, eta: float) -> "StepSchedule":
        return cls("constant", 0.5, float(eta))

    def step(self, k: int) -> float:
        if self.kind == "constant" or k == 0:
            return self.base_scale
        return self.base_scale * float(k) ** (-self.alpha)

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "base_scale": self.base_scale}


def default_schedule(n: int, alpha: float = 0.5, preset: str = "theory") -> StepSchedule:
    """Step schedule presets.

    ``theory``: ``k**(-alpha) / (100 sqrt(n))``, the conservative schedule with
    provable guarantees. ``experiment``: ``1 / sqrt(k)``, the much larger
    steps that work well in practice (``alpha`` is ignored).
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not (0.0 < alpha <= 0.5):
        raise ValueError(f"alpha must lie in (0, 1/2], got {alpha}")
    if preset == "theory":
        return StepSchedule.power_decay(alpha, 1.0 / (100.0 * math.sqrt(n)))
    if preset == "experiment":
        return StepSchedule.power_decay(0.5, 1.0)
    raise ValueError(f"unknown preset {preset!r}")


@dataclass(frozen=True)
class SolveConfig:
    """Settings shared by every run of a solve.

    Runs stop after ``max_iters`` steps, once the best value drops to
    ``f_target``, or when the best value has not improved by a relative
    ``stagnation_rtol`` for ``stagnation_window`` iterations (``None``
    disables that rule).
    """

    schedule: StepSchedule = field(default_factory=StepSchedule)
    max_iters: int = 20000
    f_target: float | None = None
    record_every: int = 1
    seed: int = 0
    stagnation_window: int | None = 500
    stagnation_rtol: float = 1e-9
    zero_tol: float = ZERO_TOL

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be at least 1")
        if self.stagnation_window is not None and int(self.stagnation_window) < 1:
            raise ValueError("stagnation_window must be positive or None")

    @classmethod
    def experiment(cls, max_iters: int = 20000, **kw) -> "SolveConfig":
        return cls(schedule=StepSchedule.power_decay(0.5, 1.0), max_iters=max_iters, **kw)

    @classmethod
    def theory(cls, n: int, alpha: float = 0.375, max_iters: int = 20000, **kw) -> "SolveConfig":
        return cls(schedule=default_schedule(n, alpha, "theory"), max_iters=max_iters, **kw)

    def to_dict(self):
        return {
            "schedule": self.schedule.to_dict(),
            "max_iters": int(self.max_iters),
            "f_target": self.f_target,
            "record_every": int(self.record_every),
            "seed": int(self.seed),
            "stagnation_window": self.stagnation_window,
            "stagnation_rtol": self.stagnation_rtol,
            "zero_tol": self.zero_tol,
        }

    @classmethod
    def from_dict(cls, d) -> "SolveConfig":
        d = dict(d)
        sched = d.pop("schedule", None)
        if isinstance(sched, dict):
            d["schedule"] = StepSchedule(**sched)
        elif isinstance(sched, StepSchedule):
            d["schedule"] = sched
        return cls(**d)


@dataclass
class RunTrace:
    """Outcome of one run.

    ``k, f, grad_norm, eta`` hold the recorded (possibly thinned) iterates;
    ``eta[j]`` is the step taken from iterate ``k[j]``. ``f_best`` and
    ``q_best`` are tracked over every iterate, recorded or not.
    """

    k: np.ndarray
    f: np.ndarray
    grad_norm: np.ndarray
    eta: np.ndarray
    q_best: np.ndarray
    f_best: float
    best_iteration: int
    iterations_used: int
    initialization: np.ndarray
    status: str = "max_iters"

    @property
    def iterates(self):
        return list(zip(self.k.tolist(), self.f.tolist(), self.grad_norm.tolist(), self.eta.tolist()))

    def to_csv(self, dest=None) -> str:
        """Write columns k, f, grad_norm, eta; returns the text when ``dest`` is None."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "f", "grad_norm", "eta"])
        for row in self.iterates:
            w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
        text = buf.getvalue()
        if dest is None:
            return text
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# data backends


class _SparseData:
    def __init__(self, Y, tau):
        Yt = np.ascontiguousarray(Y.T)
        nz_rows, nz_cols = np.nonzero(Yt)
        self.indptr = np.zeros(Y.shape[1] + 1, dtype=np.int64)
        np.cumsum(np.bincount(nz_rows, minlength=Y.shape[1]), out=self.indptr[1:])
        self.indices = nz_cols.astype(np.int64)
        self.data = Yt[nz_rows, nz_cols]
        self.tau = tau
        self._z = {}

    def value_grad(self, Q, f, G):
        B = Q.shape[1]
        z = self._z.get(B)
        if z is None:
            z = self._z[B] = np.empty(B)
        _kernels.sparse_value_grad(self.indptr, self.indices, self.data, self.tau, Q, G, f, z)


class _DenseData:
    def __init__(self, Y, tau):
        self.Y = np.ascontiguousarray(Y)
        self.Yt = np.ascontiguousarray(Y.T)
        self.tau = tau

    def value_grad(self, Q, f, G):
        Z = self.Yt @ Q
        _kernels.sign_pass(Z, self.tau, f)
        np.matmul(self.Y, Z, out=G)


class PreparedData:
    """Data matrix laid out for the batched kernels (reusable across solves)."""

    def __init__(self, Y, zero_tol=ZERO_TOL, backend: str | None = None):
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 2 or Y.shape[1] < 1:
            raise ValueError(f"Y must be an (n, m) matrix with m >= 1, got {Y.shape}")
        self.n, self.m = Y.shape
        tau = zero_tol * np.sqrt(np.einsum("ij,ij->j", Y, Y))
        if backend is None:
            density = np.count_nonzero(Y) / Y.size
            backend = "sparse" if density <= SPARSE_DENSITY_CUTOFF else "dense"
        if backend == "sparse":
            self._impl = _SparseData(Y, tau)
        elif backend == "dense":
            self._impl = _DenseData(Y, tau)
        else:
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        self.zero_tol = zero_tol

    def value_grad(self, Q, f, G):
        self._impl.value_grad(Q, f, G)
        c = SCALE / self.m
        f *= c
        G *= c


def _prepare(Y, config: SolveConfig) -> PreparedData:
    if isinstance(Y, PreparedData):
        return Y
    return PreparedData(Y, config.zero_tol)


def _solve_batch(data: PreparedData, config: SolveConfig, Q0, callback=None) -> list:
    """Advance the rows of ``Q0`` (B, n) together; returns one RunTrace per row.

    Finished runs are dropped from the working arrays, which the per-column
    kernels allow without changing any other run's arithmetic. ``callback``
    is called as ``callback(k, run_ids, Q)`` with the live iterates as
    columns of ``Q`` before each step.
    """
    Q0 = np.asarray(Q0, dtype=np.float64)
    B, n = Q0.shape
    K = int(config.max_iters)
    stride = int(config.record_every)
    window = config.stagnation_window
    rtol = config.stagnation_rtol
    target = config.f_target

    # per-run results, indexed by position in Q0
    f_best = np.full(B, np.inf)
    q_best = Q0.T.copy()
    best_k = np.zeros(B, dtype=np.int64)
    used = np.zeros(B, dtype=np.int64)
    status = np.array(["max_iters"] * B, dtype=object)
    rec = []  # (k, run ids, f, grad_norm, eta)

    # working state of the live runs
    live = np.arange(B)
    Q = np.array(Q0.T, order="C")  # always a copy; never step the caller's array
    f = np.empty(B)
    G = np.empty((n, B))
    gn = np.zeros(B)
    fb = np.full(B, np.inf)
    ref = np.zeros(B)  # best value at the last significant improvement
    since = np.zeros(B, dtype=np.int64)
    all_on = np.ones(B, dtype=np.bool_)

    for k in range(K + 1):
        if callback is not None:
            callback(k, live, Q)
        data.value_grad(Q, f, G)
        _kernels.tangent_project(Q, G, all_on, gn)
        stopping = ~np.isfinite(f)
        if stopping.any():
            status[live[stopping]] = "nonfinite"
            log.warning("non-finite objective in %d run(s) at iteration %d", int(stopping.sum()), k)

        better = ~stopping & (f < fb)
        if better.any():
            fb[better] = f[better]
            ids = live[better]
            f_best[ids] = f[better]
            q_best[:, ids] = Q[:, better]
            best_k[ids] = k
        if window is not None:
            if k == 0:
                ref[:] = fb
            else:
                significant = fb < ref - rtol * np.abs(ref)
                ref[significant] = fb[significant]
                since[significant] = 0
                since[~significant] += 1
                stale = ~stopping & (since > window)
                status[live[stale]] = "stagnation"
                stopping |= stale
        if target is not None:
            hit = ~stopping & (fb <= target)
            status[live[hit]] = "target"
            stopping |= hit

        eta = config.schedule.step(k)
        if k % stride == 0 or k == K:
            rec.append((k, live, f.copy(), gn.copy(), eta))
        elif stopping.any():
            rec.append((k, live[stopping], f[stopping], gn[stopping], eta))

        if k == K:
            break
        if stopping.any():
            keep = ~stopping
            if not keep.any():
                break
            live = live[keep]
            Q = np.ascontiguousarray(Q[:, keep])
            f, gn, fb, ref, since = f[keep], gn[keep], fb[keep], ref[keep], since[keep]
            G = np.ascontiguousarray(G[:, keep])
            all_on = all_on[keep]
        worst = _kernels.retract_step(Q, G, eta, all_on, gn)
        if worst > IDENTITY_TOL:
            raise FloatingPointError(
                f"retraction identity violated by {worst:.3g} at iteration {k}"
            )
        used[live] += 1

    per_run = [([], [], [], []) for _ in range(B)]
    for k, ids, fv, gv, eta in rec:
        for j, b in enumerate(ids):
            r = per_run[b]
            r[0].append(k)
            r[1].append(fv[j])
            r[2].append(gv[j])
            r[3].append(eta)
    traces = []
    for b in range(B):
        r = per_run[b]
        traces.append(RunTrace(
            k=np.asarray(r[0], dtype=np.int64), f=np.asarray(r[1], dtype=np.float64),
            grad_norm=np.asarray(r[2], dtype=np.float64), eta=np.asarray(r[3], dtype=np.float64),
            q_best=q_best[:, b].copy(), f_best=float(f_best[b]), best_iteration=int(best_k[b]),
            iterations_used=int(used[b]), initialization=Q0[b].copy(),
            status=str(status[b]),
        ))
    return traces


def random_initialization(n: int, rng: np.random.Generator):
    """Uniform point on the sphere (normalized Gaussian)."""
    g = rng.standard_normal(n)
    return g / np.linalg.norm(g)


def solve(Y, config: SolveConfig, q0=None) -> RunTrace:
    """Run the descent from ``q0`` (uniformly random from ``config.seed`` if omitted)."""
    data = _prepare(Y, config)
    if q0 is None:
        q0 = random_initialization(data.n, child_rng(config.seed))
    q0 = check_unit(q0, UNIT_TOL)
    (trace,) = _solve_batch(data, config, q0[None, :])
    if trace.status == "nonfinite":
        raise NonFiniteObjectiveError(
            "objective became non-finite; check the data for NaN or Inf entries"
        )
    return trace


def solve_many(Y, config: SolveConfig, Q0, chunk_size: int = DEFAULT_CHUNK, callback=None) -> list:
    """Solve from each row of ``Q0`` in batches of ``chunk_size`` runs.

    Runs that hit a non-finite objective are returned with status
    ``"nonfinite"`` instead of raising. ``callback(k, run_ids, Q)`` sees
    every iterate (run ids are row indices of ``Q0``).
    """
    data = _prepare(Y, config)
    Q0 = np.atleast_2d(np.asarray(Q0, dtype=np.float64))
    if Q0.shape[1] != data.n:
        raise ValueError(f"initializations have dimension {Q0.shape[1]}, data has {data.n}")
    for q in Q0:
        check_unit(q, UNIT_TOL)
    out = []
    for lo in range(0, Q0.shape[0], chunk_size):
        cb = None
        if callback is not None:
            cb = (lambda k, ids, Q, lo=lo: callback(k, ids + lo, Q))
        out.extend(_solve_batch(data, config, Q0[lo:lo + chunk_size], cb))
    return out


def descent_step(q, Y, eta: float):
    """One iteration ``(q - eta v) / ||q - eta v||`` with the Riemannian subgradient ``v``."""
    q = check_unit(q, UNIT_TOL)
    if not eta > 0:
        raise ValueError("eta must be positive")
    v = riemannian_subgradient(q, Y)
    p = q - eta * v
    lhs = float(p @ p)
    rhs = 1.0 + eta * eta * float(v @ v)
    if abs(lhs - rhs) > IDENTITY_TOL * rhs:
        raise FloatingPointError(
            f"||q - eta v||^2 = {lhs!r} differs from 1 + eta^2 ||v||^2 = {rhs!r}"
        )
    return p / math.sqrt(lhs)


# ---------------------------------------------------------------------------
# iteration budget


@dataclass(frozen=True)
class BudgetConstants:
    """Leading constants of the two branches of the iteration budget."""

    c1: float = 32000.0
    c2: float = 64.0 / 5.0


THEORY_CONSTANTS = BudgetConstants()
PRACTICAL_CONSTANTS = BudgetConstants(32000.0 / 1e4, 64.0 / 5.0 / 1e4)


def budget_branches(n, theta, eps, alpha, constants: BudgetConstants = THEORY_CONSTANTS):
    """The two lower bounds on K before rounding, as floats."""
    logn = math.log(n)
    tt = theta * (1.0 - theta)
    b1 = (constants.c1 * n ** 2.5 * logn * (1.0 - alpha) / (tt * eps)) ** (1.0 / (1.0 - alpha))
    b2 = (constants.c2 * n ** 1.5 * logn * (1.0 - alpha) / (1.0 - 2.0 * alpha) / (eps * tt)) ** (1.0 / alpha)
    return b1, b2


def iteration_budget(n, theta, eps, alpha=0.375, constants: BudgetConstants = THEORY_CONSTANTS) -> int:
    """Sufficient number of iterations to reach accuracy ``eps`` in objective value.

    The guarantee only covers ``eps <= 2 theta / 25``; larger values trigger
    a warning. Always returns at least 1.
    """
    if not (n >= 1 and 0 < theta < 1 and eps > 0):
        raise ValueError("need n >= 1, theta in (0, 1) and eps > 0")
    if not (0.0 < alpha < 0.5):
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    if eps > 2.0 * theta / 25.0:
        warnings.warn(
            f"eps={eps} exceeds 2*theta/25={2 * theta / 25:.4g}; the budget carries no guarantee there",
            stacklevel=2,
        )
    b1, b2 = budget_branches(n, theta, eps, alpha, constants)
    return max(1, math.ceil(max(b1, b2)))
