"""Dictionary learning on non-overlapping image patches."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .._rng import check_seed, child_rng
from ..model import sample_bg
from ..optimizer import DEFAULT_CHUNK, SolveConfig
from ..recovery import canonicalize_sign, dedup_atoms, restart_count, run_restarts

log = logging.getLogger(__name__)

BLOCK = 8
EIG_REL_TOL = 1e-10
CENTERING = ("none", "mean")


class ImageFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PGM I/O

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n\r]*[\n\r])*(\S+)")


def read_pgm(path_or_bytes) -> np.ndarray:
    """Read an 8-bit binary (P5) PGM into a (H, W) uint8 array."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        buf = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as fh:
            buf = fh.read()
    pos, vals = 0, []
    for _ in range(4):
        mt = _PGM_TOKEN.match(buf, pos)
        if mt is None:
            raise ImageFormatError("truncated PGM header")
        vals.append(mt.group(1))
        pos = mt.end()
    if vals[0] != b"P5":
        raise ImageFormatError(f"not a binary PGM (magic {vals[0]!r})")
    try:
        W, H, maxval = (int(v) for v in vals[1:])
    except ValueError as exc:
        raise ImageFormatError("malformed PGM header") from exc
    if not 0 < maxval < 256:
        raise ImageFormatError(f"only 8-bit PGM is supported (maxval {maxval})")
    if W <= 0 or H <= 0:
        raise ImageFormatError("PGM dimensions must be positive")
    pos += 1  # single whitespace byte after maxval
    data = buf[pos:pos + W * H]
    if len(data) != W * H:
        raise ImageFormatError(f"expected {W * H} pixel bytes, found {len(data)}")
    img = np.frombuffer(data, dtype=np.uint8).reshape(H, W).copy()
    if maxval != 255:
        img = np.round(img.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return img


def pgm_bytes(img) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise ValueError("pixel values must lie in [0, 255]")
        img = img.astype(np.uint8)
    H, W = img.shape
    return b"P5\n%d %d\n255\n" % (W, H) + np.ascontiguousarray(img).tobytes()


def write_pgm(path, img) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(img))


# ---------------------------------------------------------------------------
# patches


@dataclass(frozen=True)
class PatchMatrix:
    """Vectorized non-overlapping blocks: column j is block j in raster order,
    flattened column-major."""

    height: int
    width: int
    block: int
    Y: np.ndarray = field(repr=False)

    @property
    def n_blocks(self) -> int:
        return self.Y.shape[1]


def extract_patches(img, block: int = BLOCK) -> PatchMatrix:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("expected a grayscale (2-D) image")
    H, W = img.shape
    if H % block or W % block or H == 0 or W == 0:
        raise ValueError(f"image dims {H}x{W} are not multiples of the block size {block}")
    nI, nJ = H // block, W // block
    # (nI, b, nJ, b) -> (nI, nJ, col, row) so that rows vary fastest within a block
    Y = img.reshape(nI, block, nJ, block).transpose(0, 2, 3, 1).reshape(nI * nJ, block * block).T
    return PatchMatrix(H, W, block, np.ascontiguousarray(Y))


def reassemble(patches: PatchMatrix) -> np.ndarray:
    b = patches.block
    nI, nJ = patches.height // b, patches.width // b
    blocks = patches.Y.T.reshape(nI, nJ, b, b).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(blocks.reshape(patches.height, patches.width))


def to_unit_interval(img) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0


def center(Y, mode: str = "none") -> np.ndarray:
    """``none`` leaves the data as is; ``mean`` removes the global mean intensity."""
    Y = np.asarray(Y, dtype=np.float64)
    if mode == "none":
        return Y.copy()
    if mode == "mean":
        return Y - Y.mean()
    raise ValueError(f"unknown centering {mode!r}; expected one of {CENTERING}")


# ---------------------------------------------------------------------------
# preconditioning


@dataclass(frozen=True)
class PreconditionInfo:
    retained: int
    dim: int
    eigenvalues: np.ndarray = field(repr=False)
    P: np.ndarray = field(repr=False)  # (Y Y^T)^{-1/2} on the retained eigenspace

    @property
    def rank_deficient(self) -> bool:
        return self.retained < self.dim


def precondition(Y, rel_tol: float = EIG_REL_TOL, return_info: bool = False):
    """Return ``(Y Y^T)^{-1/2} Y``, inverting only eigenvalues above ``rel_tol * max``."""
    Y = np.asarray(Y, dtype=np.float64)
    lam, V = np.linalg.eigh(Y @ Y.T)
    if not lam.size or lam[-1] <= 0:
        raise ValueError("Y Y^T has no positive eigenvalue")
    keep = lam > rel_tol * lam[-1]
    if not keep.all():
        warnings.warn(f"Y Y^T is rank deficient: keeping {int(keep.sum())} of {lam.size} eigenvalues",
                      RuntimeWarning, stacklevel=2)
    Vk = V[:, keep]
    P = (Vk / np.sqrt(lam[keep])) @ Vk.T
    Ybar = P @ Y
    if return_info:
        return Ybar, PreconditionInfo(int(keep.sum()), lam.size, lam, P)
    return Ybar


def singular_value_range(Ybar, rel_tol: float = EIG_REL_TOL):
    """(min, max) of the nonvanishing singular values."""
    s = np.linalg.svd(np.asarray(Ybar, dtype=np.float64), compute_uv=False)
    s = s[s > math.sqrt(rel_tol) * s[0]]
    return float(s.min()), float(s.max())


# ---------------------------------------------------------------------------
# learning


@dataclass
class LearnedDictionary:
    A: np.ndarray = field(repr=False)  # (n, n), unit columns
    runs: int
    kept_runs: list
    iterations: int
    failed_runs: int


def learn_image_dictionary(Ybar, n: int = 64, runs: int | None = None, config: SolveConfig | None = None,
                           master_seed=0, parallelism: int = 1,
                           chunk_size: int = DEFAULT_CHUNK, rescale: bool = True) -> LearnedDictionary:
    """Solve from ``runs`` random starts (default ``restart_count(n)``) and prune to ``n`` atoms.

    With ``rescale`` the data is multiplied by ``sqrt(m / ||Ybar||_F^2)`` so
    the mean squared column norm is one. The minimizers do not change, but
    the step schedules assume data of roughly that scale; a whitened matrix
    has columns about ``sqrt(n / m)`` long and the runs would crawl.
    """
    Ybar = np.asarray(Ybar, dtype=np.float64)
    if Ybar.shape[0] != n:
        raise ValueError(f"Ybar has {Ybar.shape[0]} rows, expected n={n}")
    if runs is None:
        runs = restart_count(n)
    if runs <= 0:
        raise ValueError("runs must be positive")
    if config is None:
        config = SolveConfig.experiment()
    if rescale:
        Ybar = Ybar * math.sqrt(Ybar.shape[1] / float(np.sum(Ybar * Ybar)))
    results = run_restarts(Ybar, config, runs, master_seed, parallelism, chunk_size)
    good = [r for r in results if not r.failed]
    if len(good) < n:
        raise RuntimeError(f"only {len(good)} of {runs} runs finished; need at least {n} vectors")
    kept, idx = dedup_atoms([r.q_best for r in good], target_count=n, return_indices=True)
    A = np.column_stack([v / np.linalg.norm(v) for v in kept])
    corr = np.abs(A.T @ A) - np.eye(n)
    if corr.max() > 1.0 - 1e-6:
        raise RuntimeError(f"pruning left near-duplicate atoms (max |corr| = {corr.max():.6f}); "
                           f"the runs found fewer than {n} distinct directions")
    return LearnedDictionary(A, runs, [good[i].run for i in idx],
                             int(sum(r.iterations for r in results)),
                             sum(r.failed for r in results))


def filters_in_data_space(A, P) -> np.ndarray:
    """Map learned directions ``q`` to unit data-space filters ``P q / ||P q||``.

    Since ``q^T Ybar = (P q)^T Y``, these are the linear functionals on the
    original patches that the learned directions represent.
    """
    F = np.asarray(P) @ np.asarray(A)
    F = F / np.linalg.norm(F, axis=0, keepdims=True)
    return np.column_stack([canonicalize_sign(F[:, j]) for j in range(F.shape[1])])


def basis_matches(A, tol: float = 1e-2) -> int:
    """Number of standard basis vectors within ``tol`` of some signed column of ``A``."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    hit = np.zeros(n, dtype=bool)
    for j in range(A.shape[1]):
        a = A[:, j]
        i = int(np.argmax(np.abs(a)))
        e = np.zeros(n)
        e[i] = np.sign(a[i])
        if np.linalg.norm(a - e) <= tol:
            hit[i] = True
    return int(hit.sum())


# ---------------------------------------------------------------------------
# sparsity


def l1_l2_ratios(C) -> np.ndarray:
    """Per-column ||c||_1 / ||c||_2 (NaN for zero columns)."""
    C = np.asarray(C, dtype=np.float64)
    l2 = np.linalg.norm(C, axis=0)
    l1 = np.abs(C).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = l1 / l2
    r[l2 == 0] = np.nan
    return r


@dataclass
class SparsityReport:
    coefficients: np.ndarray = field(repr=False)
    ratios: np.ndarray = field(repr=False)
    hist_counts: np.ndarray = field(repr=False)
    hist_edges: np.ndarray = field(repr=False)

    @property
    def mean_ratio(self) -> float:
        return float(np.nanmean(self.ratios))

    def ratio_range(self):
        return float(np.nanmin(self.ratios)), float(np.nanmax(self.ratios))

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(self.hist_edges[:-1], self.hist_edges[1:], self.hist_counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        return buf.getvalue()


def sparsity_report(A, Ybar, bins: int = 100) -> SparsityReport:
    """Coefficients ``A^{-1} Ybar``, their column l1/l2 ratios and a histogram."""
    A = np.asarray(A, dtype=np.float64)
    try:
        C = np.linalg.solve(A, np.asarray(Ybar, dtype=np.float64))
    except np.linalg.LinAlgError as exc:
        raise ValueError("dictionary is singular") from exc
    if not np.isfinite(C).all() or np.linalg.cond(A) > 1e12:
        raise ValueError("dictionary is singular")
    ratios = l1_l2_ratios(C)
    counts, edges = np.histogram(C.ravel(), bins=bins)
    return SparsityReport(C, ratios, counts, edges)


# ---------------------------------------------------------------------------
# visualization and synthetic data


def atom_montage(A, block: int = BLOCK, gap: int = 1) -> np.ndarray:
    """Tile the atoms as block x block images, each min-max scaled to [0, 255]."""
    A = np.asarray(A, dtype=np.float64)
    k = A.shape[1]
    cols = int(math.ceil(math.sqrt(k)))
    rows = int(math.ceil(k / cols))
    side = block + gap
    out = np.zeros((rows * side - gap, cols * side - gap), dtype=np.uint8)
    for j in range(k):
        a = A[:, j]
        lo, hi = a.min(), a.max()
        t = (a - lo) / (hi - lo) if hi > lo else np.full_like(a, 0.5)
        tile = np.round(255.0 * t).reshape(block, block, order="F").astype(np.uint8)
        r, c = divmod(j, cols)
        out[r * side:r * side + block, c * side:c * side + block] = tile
    return out


def synthetic_sparse_image(height: int = 512, width: int = 512, theta: float = 0.15, seed=0,
                           offset: float = 128.0, gain: float = 16.0, block: int = BLOCK) -> np.ndarray:
    """8-bit image whose blocks are ``offset + gain * x`` (rounded, clipped) with x ~ BG(theta)."""
    if height % block or width % block:
        raise ValueError("image dims must be multiples of the block size")
    N = (height // block) * (width // block)
    X = sample_bg(block * block, N, theta, rng=child_rng(check_seed(seed), 0))
    pix = np.clip(np.round(offset + gain * X), 0, 255).astype(np.uint8)
    return reassemble(PatchMatrix(height, width, block, pix))


# ---------------------------------------------------------------------------
# end to end


def run_image_pipeline(img, out_dir=None, runs: int | None = None, config: SolveConfig | None = None,
                       master_seed=0, parallelism: int = 1, centering: str = "none", bins: int = 100,
                       chunk_size: int = DEFAULT_CHUNK, rel_tol: float = EIG_REL_TOL,
                       match_tol: float = 1e-2) -> dict:
    """extract -> precondition -> learn -> prune -> sparsity report; writes artifacts to ``out_dir``."""
    patches = extract_patches(img)
    if not np.array_equal(reassemble(patches), np.asarray(img)):
        raise AssertionError("patch round trip is not exact")
    Y = center(to_unit_interval(patches.Y), centering)
    n = Y.shape[0]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        Ybar, info = precondition(Y, rel_tol, return_info=True)
    smin, smax = singular_value_range(Ybar, rel_tol)
    log.info("preconditioned: %d/%d eigenvalues kept, singular values in [%.12f, %.12f]",
             info.retained, info.dim, smin, smax)
    learned = learn_image_dictionary(Ybar, n, runs, config, master_seed, parallelism, chunk_size)
    rep = sparsity_report(learned.A, Ybar, bins)
    F = filters_in_data_space(learned.A, info.P)
    lo, hi = rep.ratio_range()
    report = {
        "height": patches.height,
        "width": patches.width,
        "block": patches.block,
        "n_patches": patches.n_blocks,
        "centering": centering,
        "master_seed": check_seed(master_seed),
        "runs": learned.runs,
        "total_iterations": learned.iterations,
        "failed_runs": learned.failed_runs,
        "retained_eigenvalues": info.retained,
        "rank_warning": [str(w.message) for w in caught] or None,
        "singular_value_min": smin,
        "singular_value_max": smax,
        "mean_l1_l2_ratio": rep.mean_ratio,
        "min_l1_l2_ratio": lo,
        "max_l1_l2_ratio": hi,
        "basis_matches_whitened": basis_matches(learned.A, match_tol),
        "basis_matches_filters": basis_matches(F, match_tol),
        "match_tol": match_tol,
        "kept_runs": learned.kept_runs,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(json.dumps(report, indent=2) + "\n")
        with open(os.path.join(out_dir, "atoms.csv"), "w", newline="") as fh:
            fh.write(_atoms_csv(learned.A, F))
        with open(os.path.join(out_dir, "coeff_hist.csv"), "w", newline="") as fh:
            fh.write(rep.histogram_csv())
        write_pgm(os.path.join(out_dir, "montage.pgm"), atom_montage(F))
    return report


def _atoms_csv(A, F) -> str:
    n = A.shape[0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["atom", "space"] + [f"x{j}" for j in range(n)])
    for j in range(A.shape[1]):
        w.writerow([j, "whitened"] + [repr(float(v)) for v in A[:, j]])
        w.writerow([j, "filter"] + [repr(float(v)) for v in F[:, j]])
    return buf.getvalue()
