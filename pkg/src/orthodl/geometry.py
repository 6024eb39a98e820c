"""Numerical checks of the landscape of the population and empirical objectives.

Everything here is a pure function of its inputs and seeds. The ``check_*``
functions bundle a predicate over many sampled points into a
:class:`CheckResult` that can be serialized to JSON.
"""

from __future__ import annotations

import inspect
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import child_rng
from .model import sample_bg
from .objective import (
    SupportDistribution,
    SubdifferentialSet,
    check_unit,
    objective_value,
    population_base_batch,
    population_objective,
    population_subdifferential,
    subgradient,
)

SAMPLE_CHUNK = 1 << 16


def default_zeta(n: int) -> float:
    """zeta_0 = 1 / (5 log n)."""
    return 1.0 / (5.0 * math.log(n))


# ---------------------------------------------------------------------------
# good sets


@dataclass(frozen=True)
class GoodSetParams:
    """The set of unit q with sign(q_i) = sign and q_i^2 >= (1 + zeta) max_{j != i} q_j^2."""

    zeta: float
    index: int
    sign: int = 1

    def __post_init__(self):
        if self.zeta < 0:
            raise ValueError("zeta must be nonnegative")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def contains(self, q) -> bool:
        return good_set_membership(q, self.zeta) == (self.index, self.sign)


def _dominance(A, zeta):
    """Row-wise (index, ok) where index is the largest |entry| and ok tests the good-set ratio."""
    A = np.abs(A)
    top = np.argmax(A, axis=1)
    rows = np.arange(A.shape[0])
    t2 = A[rows, top] ** 2
    rest = A.copy()
    rest[rows, top] = 0.0
    r2 = rest.max(axis=1) ** 2 if A.shape[1] > 1 else np.zeros(A.shape[0])
    return top, (t2 > 0) & (t2 >= (1.0 + zeta) * r2)


def good_set_membership(q, zeta: float):
    """Return ``(i, sign)`` if q lies in the good set of index i with that sign, else None."""
    q = check_unit(q)
    if zeta < 0:
        raise ValueError("zeta must be nonnegative")
    top, ok = _dominance(q[None, :], zeta)
    if not ok[0]:
        return None
    i = int(top[0])
    return i, (1 if q[i] > 0 else -1)


def good_set_labels(Q, zeta: float):
    """Vectorized membership for rows of Q: label 2*i for (i, +), 2*i+1 for (i, -), -1 for none.

    Rows need not be normalized (the sets are cones intersected with the sphere).
    """
    Q = np.atleast_2d(Q)
    top, ok = _dominance(Q, zeta)
    neg = Q[np.arange(Q.shape[0]), top] < 0
    return np.where(ok, 2 * top + neg, -1)


def sample_good_set(n: int, zeta: float, size: int, seed=0, index: int | None = None, sign: int = 1):
    """Uniform samples from the good set of (index, sign) by rejection from the sphere."""
    index = n - 1 if index is None else int(index)
    target = 2 * index + (0 if sign > 0 else 1)
    rng = child_rng(seed)
    out = []
    have = 0
    while have < size:
        G = rng.standard_normal((max(4 * n * (size - have), 256), n))
        G = G[good_set_labels(G, zeta) == target]
        out.append(G)
        have += G.shape[0]
    Q = np.concatenate(out)[:size]
    return Q / np.linalg.norm(Q, axis=1, keepdims=True)


def lift(w):
    """q(w) = [w; sqrt(1 - ||w||^2)]."""
    w = np.asarray(w, dtype=np.float64)
    r2 = float(w @ w)
    if r2 > 1.0:
        raise ValueError("||w|| must not exceed 1")
    return np.append(w, math.sqrt(1.0 - r2))


# ---------------------------------------------------------------------------
# directional subgradient bounds


def _riemannian(subdiff: SubdifferentialSet, q):
    return subdiff if subdiff.tangent is not None else subdiff.project(q)


def directional_bound_a(q, subdiff: SubdifferentialSet, j: int, i: int | None = None) -> float:
    """inf over the Riemannian subdifferential of <v, e_j / q_j - e_i / q_i> (i defaults to n-1)."""
    q = check_unit(q)
    n = q.shape[0]
    i = n - 1 if i is None else int(i)
    if j == i:
        raise ValueError("j must differ from the reference index")
    if q[j] == 0.0 or q[i] == 0.0:
        raise ValueError(f"direction undefined: q[{j}] = {q[j]}, q[{i}] = {q[i]}")
    u = np.zeros(n)
    u[j] = 1.0 / q[j]
    u[i] = -1.0 / q[i]
    return float(_riemannian(subdiff, q).inf_inner(u))


def directional_bound_b(q, subdiff: SubdifferentialSet, i: int | None = None) -> float:
    """inf over the Riemannian subdifferential of <v, q_i q - e_i> (i defaults to n-1)."""
    q = check_unit(q)
    n = q.shape[0]
    i = n - 1 if i is None else int(i)
    u = q[i] * q
    u[i] -= 1.0
    return float(_riemannian(subdiff, q).inf_inner(u))


def population_bound_a(n, theta, zeta0):
    return theta * (1 - theta) * zeta0 / (2.0 * n * (1.0 + zeta0))


def population_bound_b(n, theta, zeta0, q):
    return theta * (1 - theta) * zeta0 * n ** -1.5 * float(np.linalg.norm(q[:-1])) / 8.0


def empirical_bound_a(n, theta, zeta0):
    return theta * (1 - theta) * zeta0 / (4.0 * n * (1.0 + zeta0))


def empirical_bound_b(n, theta, zeta0, q):
    return math.sqrt(2.0) / 16.0 * theta * (1 - theta) * n ** -1.5 * zeta0 * float(np.linalg.norm(q[:-1]))


# ---------------------------------------------------------------------------
# angles and the expected sign-disagreement metric


def vector_angle(u, v) -> float:
    """Angle in [0, pi] computed as 2 atan2(|u^ - v^|, |u^ + v^|); zero if either is 0."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    a, b = u / nu, v / nv
    return 2.0 * math.atan2(np.linalg.norm(a - b), np.linalg.norm(a + b))


def _subvector_angles(P, Q, M):
    """Angles between P_Omega and Q_Omega for rows of P, Q (k, n) and masks M (c, n) -> (k, c)."""
    pn = np.sqrt((P * P) @ M.T)  # (k, c)
    qn = np.sqrt((Q * Q) @ M.T)
    ok = (pn > 0) & (qn > 0)
    ps = np.where(ok, pn, 1.0)[:, :, None]
    qs = np.where(ok, qn, 1.0)[:, :, None]
    A = P[:, None, :] * M[None, :, :] / ps
    B = Q[:, None, :] * M[None, :, :] / qs
    d = np.linalg.norm(A - B, axis=2)
    s = np.linalg.norm(A + B, axis=2)
    return np.where(ok, 2.0 * np.arctan2(d, s), 0.0)


def _same_support(p, q):
    return np.array_equal(p != 0, q != 0)


def dexp(p, q, dist: SupportDistribution) -> float:
    """(1/pi) E_Omega angle(p_Omega, q_Omega) for p, q with identical support."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.shape[0] != dist.n:
        raise ValueError("p, q and the distribution must share the dimension")
    if not _same_support(p, q):
        raise ValueError("dexp is only defined for points with the same support")
    return float(dexp_batch(p[None], q[None], dist)[0])


def dexp_batch(P, Q, dist: SupportDistribution, block: int = 512):
    """Row-wise dexp (no support check)."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    out = np.zeros(P.shape[0])
    for lo in range(0, P.shape[0], block):
        sl = slice(lo, lo + block)
        for M, w in dist.chunks():
            out[sl] += _subvector_angles(P[sl], Q[sl], M) @ w
    return out / math.pi


def empirical_sign_disagreement(p, q, X) -> float:
    """Fraction of columns x of X with sign(p^T x) != sign(q^T x), using sign(0) = 0."""
    X = np.asarray(X)
    return float(np.mean(np.sign(p @ X) != np.sign(q @ X)))


def _pair_masks(n):
    pairs = list(itertools.combinations(range(n), 2))
    M = np.zeros((len(pairs), n))
    for r, (a, b) in enumerate(pairs):
        M[r, a] = M[r, b] = 1.0
    return M


def angle_inequality_check(u, v):
    """``(angle(u, v), sum over coordinate pairs of sub-angles)``, or None if the angle exceeds pi/2."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lhs = vector_angle(u, v)
    if lhs > math.pi / 2:
        return None
    rhs = float(_subvector_angles(u[None], v[None], _pair_masks(u.shape[0])).sum())
    return lhs, rhs


def two_dim_angle_check(x1, y1, x2, y2, eta):
    """Angle between (x1, y1) and (x2, y2) next to the claimed bound ``eta``.

    Preconditions: y_i >= x_i > 0, 0 < eta <= 1 and 1 <= (y2/x2)/(y1/x1) <= 1 + eta.
    """
    if not (x1 > 0 and x2 > 0 and y1 >= x1 and y2 >= x2 and 0 < eta <= 1):
        raise ValueError("points must satisfy y >= x > 0 and 0 < eta <= 1")
    ratio = (y2 / x2) / (y1 / x1)
    if not (1.0 <= ratio <= 1.0 + eta):
        raise ValueError(f"ratio quotient {ratio} outside [1, 1 + eta]")
    return vector_angle([x1, y1], [x2, y2]), float(eta)


# ---------------------------------------------------------------------------
# Hausdorff distance through support functions


def hausdorff_estimate(setA: SubdifferentialSet, setB: SubdifferentialSet, n_directions: int = 10000,
                       seed=0) -> float:
    """max over sampled unit directions of |h_A(u) - h_B(u)| (a lower bound on the distance)."""
    if setA.dim != setB.dim:
        raise ValueError("sets live in different dimensions")
    U = child_rng(seed).standard_normal((int(n_directions), setA.dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    out = 0.0
    for lo in range(0, U.shape[0], 2048):
        Ub = U[lo:lo + 2048]
        out = max(out, float(np.max(np.abs(setA.support(Ub) - setB.support(Ub)))))
    return out


# ---------------------------------------------------------------------------
# reparametrized population objective around e_n


def _check_reduced_dist(dist, dim):
    if dist.n != dim:
        raise ValueError(f"need a distribution over the first n-1 = {dim} coordinates, got n={dist.n}")


def _radial_parts(v, dist):
    """E||v_Omega|| and per-support a = ||v_{Omega^c}||^2 with weights."""
    v2 = np.asarray(v, dtype=np.float64) ** 2
    e_in = 0.0
    a_list, w_list = [], []
    total = float(v2.sum())
    for M, w in dist.chunks():
        s = M @ v2
        e_in += float(w @ np.sqrt(s))
        a_list.append(np.maximum(total - s, 0.0))
        w_list.append(w)
    return e_in, np.concatenate(a_list), np.concatenate(w_list)


def reduced_population_objective(w, dist: SupportDistribution) -> float:
    """E g(w) = (1 - theta) E||w_Omega|| + theta E sqrt(1 - ||w_{Omega^c}||^2), Omega over n-1 coordinates."""
    w = np.asarray(w, dtype=np.float64)
    _check_reduced_dist(dist, w.shape[0])
    th = dist.theta
    e_in, a, wt = _radial_parts(w, dist)
    return (1 - th) * e_in + th * float(wt @ np.sqrt(np.maximum(1.0 - a, 0.0)))


def _unit_direction(v, dist):
    v = np.asarray(v, dtype=np.float64)
    _check_reduced_dist(dist, v.shape[0])
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError("v must be a unit vector")
    return v


def population_curvature(v, s: float, dist: SupportDistribution) -> float:
    """d^2/ds^2 of h_v(s) = E g(s v) for unit v; equals -theta E[a / (1 - s^2 a)^(3/2)]."""
    v = _unit_direction(v, dist)
    if not (0.0 < s < 1.0):
        raise ValueError("s must lie in (0, 1)")
    _, a, wt = _radial_parts(v, dist)
    return -dist.theta * float(wt @ (a / (1.0 - s * s * a) ** 1.5))


def radial_derivative(v, t: float, dist: SupportDistribution) -> float:
    """d/dt of h_v(t) = (1 - theta) E||v_Omega|| - theta E[t a / sqrt(1 - t^2 a)]."""
    v = _unit_direction(v, dist)
    e_in, a, wt = _radial_parts(v, dist)
    th = dist.theta
    return (1 - th) * e_in - th * float(wt @ (t * a / np.sqrt(1.0 - t * t * a)))


def inward_gradient_bound(w, dist: SupportDistribution) -> float:
    """Radial derivative of E g at w along w / ||w||, on ||w||^2 + ||w||_inf^2 <= 1."""
    w = np.asarray(w, dtype=np.float64)
    _check_reduced_dist(dist, w.shape[0])
    r = float(np.linalg.norm(w))
    if r == 0.0:
        raise ValueError("w must be nonzero")
    if r * r + float(np.max(np.abs(w))) ** 2 > 1.0 + 1e-12:
        raise ValueError("w outside the region ||w||^2 + ||w||_inf^2 <= 1")
    return radial_derivative(w / r, r, dist)


def inward_lower_bound(w, theta: float) -> float:
    """theta (1 - theta) (1 / sqrt(1 + ||w||_inf^2 / ||w||^2) - ||w||)."""
    w = np.asarray(w, dtype=np.float64)
    r = float(np.linalg.norm(w))
    return theta * (1 - theta) * (1.0 / math.sqrt(1.0 + float(np.max(np.abs(w))) ** 2 / r ** 2) - r)


# ---------------------------------------------------------------------------
# volumes of the good sets


def _chunked_gaussian(n, n_samples, seed):
    for c, lo in enumerate(range(0, n_samples, SAMPLE_CHUNK)):
        size = min(SAMPLE_CHUNK, n_samples - lo)
        yield child_rng(seed, c).standard_normal((size, n))


def volume_ratio_mc(n: int, zeta: float, n_samples: int, seed=0):
    """Monte-Carlo fraction of the sphere inside the (n, +) good set; returns (estimate, std_error)."""
    if n < 3:
        raise ValueError("n must be at least 3")
    hits = 0
    for G in _chunked_gaussian(n, int(n_samples), seed):
        hits += int(np.count_nonzero(good_set_labels(G, zeta) == 2 * (n - 1)))
    p = hits / n_samples
    return p, math.sqrt(max(p * (1 - p), 0.0) / n_samples)


def good_set_counts_mc(n: int, zeta: float, n_samples: int, seed=0):
    """Counts of uniform samples in each of the 2n good sets (label order 2i, 2i+1)."""
    counts = np.zeros(2 * n, dtype=np.int64)
    for G in _chunked_gaussian(n, int(n_samples), seed):
        lab = good_set_labels(G, zeta)
        counts += np.bincount(lab[lab >= 0], minlength=2 * n)
    return counts


def volume_lower_bound(n, zeta):
    return 1.0 / (2 * n) - 9.0 / 8.0 * math.log(n) / n * zeta


# ---------------------------------------------------------------------------
# function value bounds around e_n


def bi_lipschitz_check(q, Y=None, dist: SupportDistribution | None = None, theta: float | None = None):
    """Slacks ``(upper_gap, lower_gap)`` of the two-sided bounds on f(q) - f(e_n).

    upper_gap = 2 sqrt(n) ||q - e_n|| - (f(q) - f(e_n)); lower_gap =
    (f(q) - f(e_n)) - (sqrt(2)/16) theta (1 - theta) ||q_{-n}||, reported only
    when f(q) - f(e_n) <= 2 theta / 25 (None otherwise). Uses the exact
    population objective when ``dist`` is given, the empirical one otherwise.
    """
    q = check_unit(q)
    n = q.shape[0]
    e = np.zeros(n)
    e[-1] = 1.0
    if dist is not None:
        theta = dist.theta
        gap = population_objective(q, dist) - population_objective(e, dist)
    else:
        if Y is None or theta is None:
            raise ValueError("empirical mode needs Y and theta")
        gap = objective_value(q, Y) - objective_value(e, Y)
    upper = 2.0 * math.sqrt(n) * float(np.linalg.norm(q - e)) - gap
    lower = None
    if gap <= 2.0 * theta / 25.0:
        lower = gap - math.sqrt(2.0) / 16.0 * theta * (1 - theta) * float(np.linalg.norm(q[:-1]))
    return upper, lower


# ---------------------------------------------------------------------------
# stationary points of the population objective


def sign_vectors(n: int, block: int = 4096):
    """All nonzero vectors in {-1, 0, 1}^n scaled to unit norm, in blocks."""
    total = 3 ** n
    powers = 3 ** np.arange(n, dtype=np.int64)
    table = np.array([0.0, 1.0, -1.0])
    for lo in range(1, total, block):
        idx = np.arange(lo, min(lo + block, total), dtype=np.int64)
        S = table[(idx[:, None] // powers) % 3]
        yield S / np.sqrt(np.count_nonzero(S, axis=1))[:, None]


def stationarity_residuals(Q, dist: SupportDistribution):
    """||(I - q q^T) base(q)|| for each row of Q."""
    Bm = population_base_batch(Q, dist)
    R = Bm - np.sum(Q * Bm, axis=1, keepdims=True) * Q
    return np.linalg.norm(R, axis=1)


# ---------------------------------------------------------------------------
# check harness


@dataclass
class CheckResult:
    """Outcome of one named check: ``passes`` of ``samples`` predicates held."""

    name: str
    samples: int
    passes: int
    worst_slack: float
    required_rate: float = 1.0
    hard: bool = True
    details: dict = field(default_factory=dict)

    @property
    def pass_rate(self) -> float:
        return self.passes / self.samples if self.samples else 1.0

    @property
    def passed(self) -> bool:
        return self.pass_rate >= self.required_rate

    def to_dict(self):
        return {
            "name": self.name,
            "samples": self.samples,
            "passes": self.passes,
            "pass_rate": self.pass_rate,
            "required_rate": self.required_rate,
            "worst_slack": self.worst_slack,
            "hard": self.hard,
            "passed": self.passed,
            "details": self.details,
        }


def _worst(x):
    x = np.asarray(x, dtype=np.float64)
    return float(x.min()) if x.size else float("inf")


def check_stationary(n=8, theta=0.25, probes=100, seed=0, tol=1e-12):
    """Sign vectors are critical; dense probes are not and satisfy the (a) bound for their top index."""
    dist = SupportDistribution(n, theta)
    worst_res, count, res_ok = 0.0, 0, 0
    saddle_violations = 0
    for S in sign_vectors(n):
        res = stationarity_residuals(S, dist)
        worst_res = max(worst_res, float(res.max()))
        count += S.shape[0]
        res_ok += int(np.count_nonzero(res <= tol))
        multi = np.count_nonzero(S, axis=1) >= 2
        saddle_violations += int(np.count_nonzero(good_set_labels(S[multi], 1e-12) >= 0))
    rng = child_rng(seed)
    P = rng.standard_normal((probes, n))
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    probe_res = stationarity_residuals(P, dist)
    a_min = np.inf
    probe_ok = 0
    for q, r in zip(P, probe_res):
        top = int(np.argmax(np.abs(q)))
        S = population_subdifferential(q, dist)
        vals = [directional_bound_a(q, S, j, top) for j in range(n) if j != top]
        a_min = min(a_min, min(vals))
        probe_ok += bool(r > 0 and min(vals) > 0)
    passes = max(res_ok - saddle_violations, 0) + probe_ok
    return CheckResult(
        "stationary", count + probes, passes, min(tol - worst_res, a_min),
        details={"n": n, "theta": theta, "sign_vectors": count, "max_residual": worst_res,
                 "probes": probes, "min_probe_residual": float(probe_res.min()),
                 "min_probe_bound_a": float(a_min), "saddle_violations": saddle_violations},
    )


def check_directional(n=8, theta=0.25, zeta0=0.3, trials=200, m=None, seed=0):
    """Bounds (a) and (b) on good-set samples; population if ``m`` is None, else empirical."""
    Q = sample_good_set(n, zeta0, trials, seed=seed)
    if m is None:
        dist = SupportDistribution(n, theta)
        make = lambda q: population_subdifferential(q, dist)  # noqa: E731
        ba = population_bound_a(n, theta, zeta0)
        bb = lambda q: population_bound_b(n, theta, zeta0, q)  # noqa: E731
    else:
        X = sample_bg(n, int(m), theta, rng=child_rng(seed, 1))
        make = lambda q: subgradient(q, X)  # noqa: E731
        ba = empirical_bound_a(n, theta, zeta0)
        bb = lambda q: empirical_bound_b(n, theta, zeta0, q)  # noqa: E731
    slack_a, slack_b, ok = [], [], 0
    for q in Q:
        S = make(q)
        sa = []
        for j in range(n - 1):
            if q[j] == 0.0:
                continue
            if m is not None and q[-1] ** 2 / q[j] ** 2 > 3.0:
                continue
            sa.append(directional_bound_a(q, S, j) - ba)
        sb = directional_bound_b(q, S) - bb(q)
        slack_a.extend(sa)
        slack_b.append(sb)
        ok += bool(min(sa, default=0.0) >= 0 and sb >= 0)
    name = "directional_population" if m is None else "directional_empirical"
    return CheckResult(
        name, trials, ok, min(_worst(slack_a), _worst(slack_b)),
        required_rate=1.0 if m is None else 0.95, hard=m is None,
        details={"n": n, "theta": theta, "zeta0": zeta0, "m": m,
                 "min_slack_a": _worst(slack_a), "min_slack_b": _worst(slack_b),
                 "directions_a": len(slack_a)},
    )


def check_concentration(n=8, theta=0.25, m_small=1000, m_large=100000, n_directions=10000,
                        seed=0, factor=3.0):
    """Hausdorff distance between empirical and population subdifferentials shrinks with m."""
    rng = child_rng(seed)
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    dist = SupportDistribution(n, theta)
    pop = population_subdifferential(q, dist)
    hd = {}
    for key, m in (("small", m_small), ("large", m_large)):
        X = sample_bg(n, int(m), theta, rng=child_rng(seed, 1 if key == "small" else 2))
        hd[key] = hausdorff_estimate(subgradient(q, X), pop, n_directions, seed=child_rng(seed, 3).integers(2**63))
    ratio = hd["small"] / hd["large"]
    return CheckResult(
        "concentration", 1, int(ratio >= factor), ratio - factor,
        details={"n": n, "theta": theta, "m_small": m_small, "m_large": m_large,
                 "hd_small": hd["small"], "hd_large": hd["large"], "ratio": ratio,
                 "n_directions": n_directions},
    )


def check_init(n=20, trials=1_000_000, seed=0, zeta=None):
    """Union of good sets has probability >= 1/2 and all 2n sets are equally likely."""
    zeta = default_zeta(n) if zeta is None else zeta
    counts = good_set_counts_mc(n, zeta, trials, seed)
    p = float(counts.sum()) / trials
    sigma = math.sqrt(p * (1 - p) / trials)
    pk = p / (2 * n)
    sk = math.sqrt(trials * pk * (1 - pk))
    dev = np.abs(counts - counts.mean()) / sk
    union_ok = p >= 0.5 - 3 * sigma
    uniform_ok = int(np.count_nonzero(dev <= 5.0))
    return CheckResult(
        "init", 1 + 2 * n, int(union_ok) + uniform_ok, min(p - (0.5 - 3 * sigma), 5.0 - float(dev.max())),
        details={"n": n, "zeta": zeta, "samples": trials, "union_fraction": p, "sigma": sigma,
                 "max_count_deviation_sigmas": float(dev.max()), "counts": counts.tolist()},
    )


def check_volume(n=10, zetas=(0.0, 0.1, 0.2), trials=1_000_000, seed=0):
    """Monte-Carlo volume of the (n, +) good set against its lower bound, and monotonicity in zeta."""
    ests, slacks, rows = [], [], []
    for z in zetas:
        est, se = volume_ratio_mc(n, z, trials, seed)
        ests.append(est)
        slacks.append(est - (volume_lower_bound(n, z) - 3 * se))
        rows.append({"zeta": z, "estimate": est, "std_error": se, "bound": volume_lower_bound(n, z)})
    mono = all(a >= b for a, b in zip(ests, ests[1:]))
    passes = sum(s >= 0 for s in slacks) + int(mono)
    return CheckResult("volume", len(zetas) + 1, passes, min(slacks),
                       details={"n": n, "samples": trials, "rows": rows, "monotone": mono})


def _unit_rows(rng, k, d):
    V = rng.standard_normal((k, d))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def _sample_inward_domain(rng, k, d):
    """Nonzero w with ||w||^2 + ||w||_inf^2 <= 1."""
    out = []
    while len(out) < k:
        v = _unit_rows(rng, 1, d)[0]
        rmax = 1.0 / math.sqrt(1.0 + float(np.max(np.abs(v))) ** 2)
        out.append(v * rmax * rng.uniform(1e-3, 1.0))
    return np.array(out)


def check_curvature(n=6, theta=0.3, trials=1000, seed=0, fd_step=1e-4, s_max=0.9):
    """Second derivative of the radial slice is at most -theta(1 - theta); analytic matches FD."""
    dist = SupportDistribution(n - 1, theta)
    full = SupportDistribution(n, theta)
    rng = child_rng(seed)
    V = _unit_rows(rng, trials, n - 1)
    S = rng.uniform(0.05, s_max, trials)
    h = lambda v, s: population_objective(lift(s * v), full)  # noqa: E731
    slack, rel = [], []
    for v, s in zip(V, S):
        c = population_curvature(v, s, dist)
        slack.append(-theta * (1 - theta) + 1e-8 - c)
        fd = (h(v, s + fd_step) - 2 * h(v, s) + h(v, s - fd_step)) / fd_step ** 2
        rel.append(abs(fd - c) / abs(c))
    slack = np.array(slack)
    rel = np.array(rel)
    ok = (slack >= 0) & (rel <= 1e-5)
    return CheckResult("curvature", trials, int(ok.sum()), float(min(slack.min(), 1e-5 - rel.max())),
                       details={"n": n, "theta": theta, "max_curvature": float(-theta * (1 - theta) + 1e-8 - slack.min()),
                                "max_fd_relative_error": float(rel.max())})


def check_inward(n=6, theta=0.3, trials=1000, seed=0, fd_step=1e-5):
    """Radial derivative of E g exceeds its lower bound; analytic matches FD of the lifted objective."""
    dist = SupportDistribution(n - 1, theta)
    full = SupportDistribution(n, theta)
    rng = child_rng(seed)
    W = _sample_inward_domain(rng, trials, n - 1)
    slack, rel = [], []
    for w in W:
        d = inward_gradient_bound(w, dist)
        slack.append(d - inward_lower_bound(w, theta) + 1e-10)
        r = np.linalg.norm(w)
        u = w / r
        fd = (population_objective(lift((r + fd_step) * u), full)
              - population_objective(lift((r - fd_step) * u), full)) / (2 * fd_step)
        rel.append(abs(fd - d) / max(abs(d), 1e-3))
    slack = np.array(slack)
    rel = np.array(rel)
    ok = (slack >= 0) & (rel <= 1e-5)
    return CheckResult("inward", trials, int(ok.sum()), float(min(slack.min(), 1e-5 - rel.max())),
                       details={"n": n, "theta": theta, "min_bound_slack": float(slack.min()),
                                "max_fd_relative_error": float(rel.max())})


def check_angle(trials=10000, seed=0, slack_tol=1e-12):
    """Angle inequality over coordinate pairs, and the two-dimensional ratio bound."""
    rng = child_rng(seed)
    worst, ok, done = np.inf, 0, 0
    while done < trials:
        n = int(rng.integers(3, 9))
        u, v = rng.standard_normal(n), rng.standard_normal(n)
        if u @ v < 0:
            v = -v
        res = angle_inequality_check(u, v)
        if res is None:
            continue
        s = res[1] - res[0] + slack_tol
        worst = min(worst, s)
        ok += s >= 0
        done += 1
    rng2 = child_rng(seed, 1)
    worst2, ok2 = np.inf, 0
    for _ in range(trials):
        x1 = rng2.uniform(0.01, 1.0)
        y1 = x1 * rng2.uniform(1.0, 10.0)
        eta = rng2.uniform(1e-3, 1.0)
        x2 = rng2.uniform(0.01, 1.0)
        y2 = x2 * (y1 / x1) * rng2.uniform(1.0, 1.0 + eta)
        ang, bound = two_dim_angle_check(x1, y1, x2, y2, eta)
        s = bound - ang + slack_tol
        worst2 = min(worst2, s)
        ok2 += s >= 0
    return CheckResult("angle", 2 * trials, int(ok + ok2), float(min(worst, worst2)),
                       details={"pair_inequality_min_slack": float(worst),
                                "two_dim_min_slack": float(worst2)})


def check_dexp(trials=10000, theta=0.3, seed=0, mc_pairs=5, mc_samples=100000, slack_tol=1e-12):
    """Metric axioms of dexp on same-support triples, and E[R(p, q)] = dexp(p, q)."""
    rng = child_rng(seed)
    ns = rng.integers(2, 9, size=trials)
    viol = {"identity": 0, "symmetry": 0, "triangle": 0}
    worst = np.inf
    for n in np.unique(ns):
        k = int(np.count_nonzero(ns == n))
        dist = SupportDistribution(int(n), theta)
        supp = rng.random((k, n)) < 0.5
        supp[np.arange(k), rng.integers(0, n, size=k)] = True
        P, Q, R = (rng.standard_normal((k, n)) * supp for _ in range(3))
        P, Q, R = (Z / np.linalg.norm(Z, axis=1, keepdims=True) for Z in (P, Q, R))
        dpp = dexp_batch(P, P, dist)
        dpq = dexp_batch(P, Q, dist)
        dqp = dexp_batch(Q, P, dist)
        dpr = dexp_batch(P, R, dist)
        drq = dexp_batch(R, Q, dist)
        distinct = np.any(P != Q, axis=1)
        viol["identity"] += int(np.count_nonzero((dpp > slack_tol) | (distinct & (dpq <= 0))))
        viol["symmetry"] += int(np.count_nonzero(np.abs(dpq - dqp) > slack_tol))
        tri = dpr + drq - dpq + slack_tol
        viol["triangle"] += int(np.count_nonzero(tri < 0))
        worst = min(worst, float(tri.min()))
    mc_rows, mc_ok = [], 0
    n = 6
    dist = SupportDistribution(n, theta)
    for t in range(mc_pairs):
        r = child_rng(seed, 10 + t)
        p, q = _unit_rows(r, 2, n)
        d = dexp(p, q, dist)
        X = sample_bg(n, mc_samples, theta, rng=r)
        est = empirical_sign_disagreement(p, q, X)
        sd = math.sqrt(d * (1 - d) / mc_samples)
        mc_rows.append({"dexp": d, "empirical": est, "sigma": sd})
        mc_ok += abs(est - d) <= 3 * sd
    bad = int(sum(viol.values()))
    return CheckResult("dexp", trials + mc_pairs, trials - min(bad, trials) + mc_ok, worst,
                       details={"theta": theta, "violations": viol, "monte_carlo": mc_rows})


def check_bilipschitz(n=8, theta=0.25, trials=500, m=None, seed=0):
    """Two-sided bounds on f(q) - f(e_n) over good-set samples and points near e_n."""
    zeta0 = default_zeta(n)
    rng = child_rng(seed, 1)
    far = sample_good_set(n, zeta0, trials - trials // 2, seed=seed)
    near = np.array([lift(r * v) for r, v in zip(rng.uniform(1e-3, 0.3, trials // 2),
                                                 _unit_rows(rng, trials // 2, n - 1))])
    Q = np.vstack([far, near])
    if m is None:
        dist, Y = SupportDistribution(n, theta), None
    else:
        dist, Y = None, sample_bg(n, int(m), theta, rng=child_rng(seed, 2))
    ups, lows, ok = [], [], 0
    for q in Q:
        up, lo = bi_lipschitz_check(q, Y, dist, theta)
        ups.append(up)
        if lo is not None:
            lows.append(lo)
        ok += up >= 0 and (lo is None or lo >= 0)
    return CheckResult(
        "bilipschitz", trials, ok, min(_worst(ups), _worst(lows)),
        required_rate=1.0 if m is None else 0.95, hard=m is None,
        details={"n": n, "theta": theta, "m": m, "sharpness_samples": len(lows),
                 "min_upper_gap": _worst(ups), "min_lower_gap": _worst(lows)},
    )


def check_gradnorm(n=10, theta=0.25, m=2000, trials=1000, seed=0):
    """Subgradient norms at random points stay below 2 (logged, not a hard requirement)."""
    X = sample_bg(n, m, theta, rng=child_rng(seed, 1))
    P = _unit_rows(child_rng(seed), trials, n)
    norms = np.array([subgradient(q, X).radius() for q in P])
    ok = int(np.count_nonzero(norms <= 2.0))
    return CheckResult("gradnorm", trials, ok, float(2.0 - norms.max()), required_rate=0.0, hard=False,
                       details={"n": n, "theta": theta, "m": m, "max_norm": float(norms.max())})


def check_stability(n=20, theta=0.1, runs=100, iters=1000, alpha=0.375, seed=0):
    """Fraction of theory-step runs started in the (n, +) good set that ever leave the union of good sets."""
    from .optimizer import SolveConfig, solve_many

    zeta0 = default_zeta(n)
    X = sample_bg(n, 10 * n * n, theta, rng=child_rng(seed, 1))
    Q0 = sample_good_set(n, zeta0, runs, seed=child_rng(seed, 2).integers(2**63))
    left = np.zeros(runs, dtype=bool)

    def watch(k, ids, Q):
        left[ids[good_set_labels(Q.T, zeta0) < 0]] = True

    cfg = SolveConfig.theory(n, alpha, max_iters=iters, stagnation_window=None, record_every=iters)
    solve_many(X, cfg, Q0, callback=watch)
    stay = int(np.count_nonzero(~left))
    return CheckResult("stability", runs, stay, 0.05 - float(left.mean()), required_rate=0.95, hard=False,
                       details={"n": n, "theta": theta, "m": 10 * n * n, "iters": iters,
                                "fraction_left": float(left.mean())})


CHECKS = {
    "stationary": (check_stationary, {}),
    "directional_population": (check_directional, {}),
    "directional_empirical": (check_directional, {"m": 100000}),
    "concentration": (check_concentration, {}),
    "init": (check_init, {}),
    "volume": (check_volume, {}),
    "curvature": (check_curvature, {}),
    "inward": (check_inward, {}),
    "angle": (check_angle, {}),
    "dexp": (check_dexp, {}),
    "bilipschitz": (check_bilipschitz, {}),
    "gradnorm": (check_gradnorm, {}),
    "stability": (check_stability, {}),
}


def run_check(name: str, **params) -> CheckResult:
    """Run a registered check.

    Parameters that are None or not accepted by the check are dropped, so a
    command line can pass ``n``, ``theta``, ``trials`` and ``seed`` uniformly.
    """
    if name not in CHECKS:
        raise KeyError(f"unknown check {name!r}; choose from {sorted(CHECKS)}")
    fn, fixed = CHECKS[name]
    accepted = inspect.signature(fn).parameters
    kw = dict(fixed)
    kw.update({k: v for k, v in params.items() if v is not None and k in accepted})
    return fn(**kw)


def report_json(results) -> str:
    """JSON document with one entry per check and the overall verdict."""
    doc = {
        "passed": all(r.passed for r in results),
        "checks": [r.to_dict() for r in results],
    }
    return json.dumps(doc, indent=2, default=float) + "\n"
