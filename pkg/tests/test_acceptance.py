"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line; the lines are printed together in the
terminal summary. Criterion 13 re-runs the outputs of criteria 1, 6 and 12
with a different worker count and compares bytes.
"""

import json
import os
import time

import numpy as np
import pytest

from orthodl.geometry import report_json, run_check
from orthodl.optimizer import SolveConfig
from orthodl.pipeline.image import extract_patches, reassemble, run_image_pipeline, synthetic_sparse_image, write_pgm, read_pgm
from orthodl.pipeline.sweep import SweepConfig, run_sweep
from orthodl.recovery import restart_count

from conftest import record

CPUS = os.cpu_count() or 1
_CACHE = {}


def cached(key, fn):
    if key not in _CACHE:
        _CACHE[key] = fn()
    return _CACHE[key]


def sweep_cell(m, parallelism, out_dir):
    cfg = SweepConfig(n_list=[20], theta_list=[0.1], m_values=[m], instances_per_cell=10,
                      solver={"preset": "experiment", "max_iters": 20000}, tol=1e-3, master_seed=2024)
    t0 = time.perf_counter()
    res = run_sweep(cfg, parallelism=parallelism, out_dir=out_dir)
    return res, time.perf_counter() - t0


def criterion1(tmp, parallelism):
    out = os.path.join(tmp, f"c1_p{parallelism}")
    res, secs = sweep_cell(4000, parallelism, out)
    files = {name: open(os.path.join(out, name), "rb").read() for name in ("sweep_raw.csv", "sweep_agg.csv")}
    return res, secs, files


def criterion6():
    return run_check("concentration", n=8, theta=0.25, seed=0)


def criterion12(tmp, parallelism):
    img_path = os.path.join(tmp, "synthetic.pgm")
    if not os.path.exists(img_path):
        write_pgm(img_path, synthetic_sparse_image(512, 512, theta=0.15, seed=12))
    img = read_pgm(img_path)
    out = os.path.join(tmp, f"c12_p{parallelism}")
    t0 = time.perf_counter()
    rep = run_image_pipeline(img, out, master_seed=12, parallelism=parallelism, centering="mean")
    secs = time.perf_counter() - t0
    names = ("report.json", "atoms.csv", "coeff_hist.csv", "montage.pgm")
    files = {name: open(os.path.join(out, name), "rb").read() for name in names}
    return img, rep, secs, files


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("acceptance"))


def test_criterion_01_recovery_cell(workdir):
    res, secs, _ = cached("c1", lambda: criterion1(workdir, CPUS))
    cell = res.cells[0]
    assert restart_count(20) == 300
    ok = cell.successes >= 9
    record(1, ok, f"n=20 theta=0.1 m=4000 R=300: {cell.successes}/10 instances fully recovered "
                  f"(need >= 9), {secs:.0f}s")
    assert ok


def test_criterion_02_undersampled():
    res, secs = sweep_cell(45, CPUS, None)
    cell = res.cells[0]
    ok = cell.successes <= 2
    record(2, ok, f"n=20 theta=0.1 m=45: {cell.successes}/10 successes (need <= 2), {secs:.0f}s")
    assert ok


def test_criterion_03_stationarity():
    parts = []
    ok = True
    for n in (4, 8, 12):
        for theta in (0.2, 0.5):
            r = run_check("stationary", n=n, theta=theta, probes=100, seed=n)
            ok &= r.passed
            parts.append(f"n={n},theta={theta}:{r.passes}/{r.samples}")
    record(3, ok, "sign vectors stationary (1e-12), probes non-stationary with bound (a) > 0: " + " ".join(parts))
    assert ok


def test_criterion_04_directional_population():
    r = run_check("directional_population", n=8, theta=0.25, zeta0=0.3, trials=200, seed=0)
    record(4, r.passed, f"{r.passes}/{r.samples} predicates hold, worst slack {r.worst_slack:.3g}")
    assert r.passed


def test_criterion_05_directional_empirical():
    r = run_check("directional_empirical", n=8, theta=0.25, zeta0=0.3, trials=200, seed=0)
    record(5, r.passed, f"pass rate {r.pass_rate:.3f} (need >= 0.95) at m=1e5")
    assert r.passed


def test_criterion_06_concentration():
    r = cached("c6", criterion6)
    ratio = r.details.get("ratio")
    record(6, r.passed, f"Hausdorff estimate shrinks by {ratio:.2f}x from m=1e3 to m=1e5 (need >= 3)")
    assert r.passed


def test_criterion_07_initialization():
    r = run_check("init", n=20, trials=1_000_000, seed=0)
    record(7, r.passed, f"union fraction {r.details.get('union_fraction', float('nan')):.4f}, "
                        f"{r.passes}/{r.samples} predicates")
    assert r.passed


def test_criterion_08_volume():
    r = run_check("volume", n=10, trials=1_000_000, seed=0)
    record(8, r.passed, f"{r.passes}/{r.samples} predicates, worst slack {r.worst_slack:.3g}")
    assert r.passed


def test_criterion_09_curvature_inward():
    c = run_check("curvature", n=6, theta=0.3, trials=1000, seed=0)
    w = run_check("inward", n=6, theta=0.3, trials=1000, seed=0)
    ok = c.passed and w.passed
    record(9, ok, f"curvature {c.passes}/{c.samples}, inward {w.passes}/{w.samples}, "
                  f"worst slacks {c.worst_slack:.3g} / {w.worst_slack:.3g}")
    assert ok


def test_criterion_10_angles():
    r = run_check("angle", trials=10_000, seed=0)
    record(10, r.passed, f"{r.passes}/{r.samples} angle predicates, worst slack {r.worst_slack:.3g}")
    assert r.passed


def test_criterion_11_dexp():
    r = run_check("dexp", trials=10_000, seed=0)
    record(11, r.passed, f"{r.passes}/{r.samples} metric and Monte-Carlo predicates")
    assert r.passed


def test_criterion_12_image(workdir):
    img, rep, secs, _ = cached("c12", lambda: criterion12(workdir, CPUS))
    roundtrip = np.array_equal(reassemble(extract_patches(img)), img)
    sv_ok = abs(rep["singular_value_min"] - 1) <= 1e-8 and abs(rep["singular_value_max"] - 1) <= 1e-8
    ratio_ok = 1.0 <= rep["min_l1_l2_ratio"] and rep["max_l1_l2_ratio"] <= 8.0
    match_ok = rep["basis_matches_filters"] >= 60
    ok = roundtrip and sv_ok and ratio_ok and match_ok and secs <= 15 * 60
    record(12, ok, f"round trip {roundtrip}, singular values in [{rep['singular_value_min']:.12f}, "
                   f"{rep['singular_value_max']:.12f}], ratios in [{rep['min_l1_l2_ratio']:.3f}, "
                   f"{rep['max_l1_l2_ratio']:.3f}], {rep['basis_matches_filters']}/64 filters within 1e-2 "
                   f"({rep['basis_matches_whitened']}/64 in whitened coordinates), {secs:.0f}s")
    assert ok


def test_criterion_13_determinism(workdir):
    other = 2 if CPUS == 1 else 1
    _, _, files1 = cached("c1", lambda: criterion1(workdir, CPUS))
    _, _, files1b = criterion1(workdir, other)
    same1 = files1 == files1b
    j6 = report_json([cached("c6", criterion6)])
    same6 = j6 == report_json([criterion6()])
    _, _, _, files12 = cached("c12", lambda: criterion12(workdir, CPUS))
    _, _, _, files12b = criterion12(workdir, other)
    same12 = files12 == files12b
    ok = same1 and same6 and same12
    record(13, ok, f"byte-identical with {CPUS} vs {other} workers: criterion 1 {same1}, "
                   f"criterion 6 {same6}, criterion 12 {same12}")
    assert ok
