"""The scaled l1 objective on the sphere, its subdifferentials and population oracles.

All values carry the factor sqrt(pi/2), so that for Bernoulli-Gaussian data
the expected objective is ``E_Omega ||q_Omega||`` with no stray constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._rng import child_rng
from .model import sample_bg

SCALE = math.sqrt(math.pi / 2.0)
UNIT_TOL = 1e-8
ZERO_TOL = 1e-12
MAX_ENUM_DIM = 22


class NotUnitError(ValueError):
    """Raised when a point handed to a sphere function is not unit norm."""


def check_unit(q, tol=UNIT_TOL):
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError(f"expected a vector, got shape {q.shape}")
    if tol is not None:
        nrm = float(np.linalg.norm(q))
        if abs(nrm - 1.0) > tol:
            raise NotUnitError(f"||q|| = {nrm!r} is not 1 within {tol:g}")
    return q


def objective_value(q, Y, unit_tol=UNIT_TOL) -> float:
    """f(q) = sqrt(pi/2) * mean_i |q^T y_i|.

    ``unit_tol=None`` skips the sphere check so the same formula can be used
    as a convex function on all of R^n.
    """
    q = check_unit(q, unit_tol)
    Y = np.asarray(Y)
    return SCALE * float(np.abs(q @ Y).sum()) / Y.shape[1]


# ---------------------------------------------------------------------------
# subdifferential sets


@dataclass(frozen=True)
class SubdifferentialSet:
    """Convex compact set ``base + sum_g [-1, 1] g + sum_b w_b * Ball(Omega_b)``.

    ``generators`` are the segments contributed by samples on which the
    objective is not differentiable, and the balls (only produced by the
    population oracle) are unit Euclidean balls restricted to the coordinates
    ``Omega_b`` and scaled by ``w_b``. If ``tangent`` is set to a unit vector
    ``q``, the object stands for the image of the set under ``I - q q^T``.
    Everything is queried through the support function.
    """

    base: np.ndarray
    generators: np.ndarray = None
    ball_weights: np.ndarray = None
    ball_masks: np.ndarray = None
    tangent: np.ndarray | None = None

    def __post_init__(self):
        base = np.asarray(self.base, dtype=np.float64)
        n = base.shape[0]
        gens = self.generators
        gens = np.zeros((0, n)) if gens is None else np.asarray(gens, dtype=np.float64).reshape(-1, n)
        bw = np.zeros(0) if self.ball_weights is None else np.asarray(self.ball_weights, dtype=np.float64)
        bm = (np.zeros((0, n), dtype=bool) if self.ball_masks is None
              else np.asarray(self.ball_masks, dtype=bool).reshape(-1, n))
        if bw.shape[0] != bm.shape[0]:
            raise ValueError("ball_weights and ball_masks disagree in length")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "ball_weights", bw)
        object.__setattr__(self, "ball_masks", bm)

    @property
    def dim(self) -> int:
        return self.base.shape[0]

    @property
    def is_singleton(self) -> bool:
        return self.generators.shape[0] == 0 and self.ball_weights.shape[0] == 0

    def _pull(self, u):
        # h_{PS}(u) = h_S(P u) for the symmetric projector P
        if self.tangent is None:
            return u
        q = self.tangent
        return u - np.multiply.outer(u @ q, q)

    def support(self, u):
        """Support function h(u) = sup_{x in S} <x, u> for ``u`` of shape (n,) or (k, n)."""
        u = np.asarray(u, dtype=np.float64)
        single = u.ndim == 1
        U = self._pull(np.atleast_2d(u))
        h = U @ self.base
        if self.generators.shape[0]:
            h = h + np.abs(U @ self.generators.T).sum(axis=1)
        if self.ball_weights.shape[0]:
            sq = U * U
            for lo in range(0, self.ball_masks.shape[0], 4096):
                M = self.ball_masks[lo:lo + 4096].astype(np.float64)
                h = h + np.sqrt(sq @ M.T) @ self.ball_weights[lo:lo + 4096]
        return float(h[0]) if single else h

    def inf_inner(self, u):
        """inf_{x in S} <x, u> = -h(-u)."""
        return -self.support(-np.asarray(u, dtype=np.float64))

    def selection(self):
        """The element obtained with sign(0) = 0 (and the ball centres)."""
        if self.tangent is None:
            return self.base.copy()
        q = self.tangent
        return self.base - (q @ self.base) * q

    def project(self, q) -> "SubdifferentialSet":
        """Riemannian version (I - q q^T) S."""
        return replace(self, tangent=check_unit(q))

    def radius(self, n_directions: int = 4096, seed=0) -> float:
        """sup_{x in S} ||x|| = sup over unit u of h(u).

        Exact for singletons; otherwise estimated from random directions plus
        the selection direction, which gives a lower bound.
        """
        sel = self.selection()
        if self.is_singleton:
            return float(np.linalg.norm(sel))
        U = child_rng(seed).standard_normal((n_directions, self.dim))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        best = float(np.max(self.support(U)))
        nrm = np.linalg.norm(sel)
        if nrm > 0:
            best = max(best, self.support(sel / nrm))
        return best


def subgradient(q, Y, zero_tol=ZERO_TOL, unit_tol=UNIT_TOL) -> SubdifferentialSet:
    """Clarke subdifferential of f at ``q``.

    A sample counts as a zero crossing when |q^T y_i| <= zero_tol * ||y_i||.
    Those samples contribute segments; the rest contribute sign(q^T y_i) y_i
    to the base point.
    """
    q = check_unit(q, unit_tol)
    Y = np.asarray(Y, dtype=np.float64)
    m = Y.shape[1]
    z = q @ Y
    col_norm = np.sqrt(np.einsum("ij,ij->j", Y, Y))
    zero = np.abs(z) <= zero_tol * col_norm
    sgn = np.where(zero, 0.0, np.sign(z))
    c = SCALE / m
    base = c * (Y @ sgn)
    gens = c * Y[:, zero & (col_norm > 0)].T
    return SubdifferentialSet(base, gens)


def riemannian_subgradient(q, Y, zero_tol=ZERO_TOL, unit_tol=UNIT_TOL):
    """(I - q q^T) applied to the sign(0) = 0 selection of the subdifferential."""
    q = check_unit(q, unit_tol)
    g = subgradient(q, Y, zero_tol, unit_tol=None).base
    return g - (q @ g) * q


# ---------------------------------------------------------------------------
# exact enumeration over Bernoulli supports


class SupportDistribution:
    """All 2^n supports Omega of a Bernoulli(theta)^n mask with their weights.

    Subsets are indexed by integers whose bit j marks coordinate j. For
    larger n the subsets are streamed in chunks so memory stays bounded.
    """

    def __init__(self, n: int, theta: float, chunk: int = 1 << 16):
        n = int(n)
        if n < 1:
            raise ValueError(f"n must be positive, got {n}")
        if n > MAX_ENUM_DIM:
            raise ValueError(
                f"enumeration is capped at n <= {MAX_ENUM_DIM}; "
                "use population_objective_mc for larger dimensions"
            )
        theta = float(theta)
        if not (0.0 < theta < 1.0):
            raise ValueError(f"theta must lie in (0, 1), got {theta}")
        self.n = n
        self.theta = theta
        self.chunk = int(chunk)
        k = np.arange(n + 1)
        # weight of any single subset of size k
        self.size_weights = theta ** k * (1.0 - theta) ** (n - k)
        self._cache = None
        if n <= 14:
            self._cache = list(self._generate())

    def __repr__(self):
        return f"SupportDistribution(n={self.n}, theta={self.theta})"

    @property
    def n_subsets(self) -> int:
        return 1 << self.n

    def _generate(self):
        bits = np.arange(self.n, dtype=np.int64)
        for lo in range(0, self.n_subsets, self.chunk):
            idx = np.arange(lo, min(lo + self.chunk, self.n_subsets), dtype=np.int64)
            masks = ((idx[:, None] >> bits) & 1).astype(np.float64)
            w = self.size_weights[masks.sum(axis=1).astype(np.int64)]
            yield masks, w

    def chunks(self):
        """Iterate over ``(masks, weights)``; masks are 0/1 float arrays (c, n)."""
        if self._cache is not None:
            return iter(self._cache)
        return self._generate()

    def total_weight(self) -> float:
        return float(sum(w.sum() for _, w in self.chunks()))

    def expect(self, fn):
        """E_Omega fn(masks) for a vectorized ``fn`` mapping (c, n) masks to (c, ...)."""
        acc = None
        for masks, w in self.chunks():
            part = np.tensordot(w, fn(masks), axes=(0, 0))
            acc = part if acc is None else acc + part
        return acc


def _as_dist(dist, n):
    if not isinstance(dist, SupportDistribution):
        raise TypeError("expected a SupportDistribution")
    if dist.n != n:
        raise ValueError(f"distribution is over n={dist.n} coordinates, q has {n}")
    return dist


def population_objective(q, dist: SupportDistribution, unit_tol=None) -> float:
    """E f(q) = E_Omega ||q_Omega||, summed exactly over all supports."""
    q = check_unit(q, unit_tol)
    dist = _as_dist(dist, q.shape[0])
    q2 = q * q
    return float(dist.expect(lambda M: np.sqrt(M @ q2)))


def population_objective_batch(Q, dist: SupportDistribution):
    """Row-wise population objective for a (k, n) array of points."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    dist = _as_dist(dist, Q.shape[1])
    Q2 = (Q * Q).T
    return dist.expect(lambda M: np.sqrt(M @ Q2))


def population_base_batch(Q, dist: SupportDistribution):
    """Base points sum_{Omega: q_Omega != 0} w(Omega) q_Omega / ||q_Omega|| for each row of Q."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    dist = _as_dist(dist, Q.shape[1])
    Q2 = (Q * Q).T
    acc = np.zeros_like(Q.T)
    for M, w in dist.chunks():
        s = M @ Q2
        pos = s > 0
        inv = np.zeros_like(s)
        inv[pos] = 1.0 / np.sqrt(s[pos])
        acc += M.T @ (w[:, None] * inv)
    return (acc * Q.T).T


def population_subdifferential(q, dist: SupportDistribution, zero_tol=0.0, unit_tol=None):
    """E of the subdifferential, as a :class:`SubdifferentialSet`.

    Supports that meet the nonzero pattern of ``q`` contribute to the base
    point; every nonempty support inside the zero pattern contributes a ball
    of radius w(Omega) on its coordinates. Dense ``q`` gives a singleton.
    """
    q = check_unit(q, unit_tol)
    n = q.shape[0]
    dist = _as_dist(dist, n)
    nz = np.abs(q) > zero_tol
    q_eff = np.where(nz, q, 0.0)
    base = population_base_batch(q_eff, dist)[0]
    zeros = np.flatnonzero(~nz)
    if zeros.size == 0:
        return SubdifferentialSet(base)
    z = zeros.size
    idx = np.arange(1, 1 << z, dtype=np.int64)
    sub = ((idx[:, None] >> np.arange(z)) & 1).astype(bool)
    masks = np.zeros((idx.size, n), dtype=bool)
    masks[:, zeros] = sub
    weights = dist.size_weights[sub.sum(axis=1)]
    return SubdifferentialSet(base, ball_weights=weights, ball_masks=masks)


def c_theta_k(theta: float, k: int) -> float:
    """Scalar c with E-base(q) = c * q at a k-sparse sign vector q = s / sqrt(k).

    c(theta, k) = sum_i binom(k-1, i-1) theta^i (1-theta)^(k-i) sqrt(k/i),
    obtained by conditioning on how many of the k support coordinates fall
    in Omega given that a fixed one does.
    """
    k = int(k)
    if k < 1:
        raise ValueError("k must be at least 1")
    return float(sum(
        math.comb(k - 1, i - 1) * theta ** i * (1.0 - theta) ** (k - i) * math.sqrt(k / i)
        for i in range(1, k + 1)
    ))


def population_objective_mc(q, theta, n_samples: int, seed=0, chunk: int = 1 << 16):
    """Monte-Carlo estimate of sqrt(pi/2) E|q^T x| for x ~ BG(theta).

    Samples are drawn in fixed-size chunks, chunk c from its own child
    stream, so the result depends only on ``(q, theta, n_samples, seed)``.
    Returns ``(estimate, standard_error)``.
    """
    q = check_unit(q, None)
    n_samples = int(n_samples)
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    n = q.shape[0]
    total = 0.0
    total_sq = 0.0
    for c, lo in enumerate(range(0, n_samples, chunk)):
        size = min(chunk, n_samples - lo)
        x = sample_bg(n, size, theta, rng=child_rng(seed, c))
        v = SCALE * np.abs(q @ x)
        total += float(v.sum())
        total_sq += float(v @ v)
    mean = total / n_samples
    if n_samples == 1:
        return mean, float("inf")
    var = max(total_sq - n_samples * mean * mean, 0.0) / (n_samples - 1)
    return mean, math.sqrt(var / n_samples)
