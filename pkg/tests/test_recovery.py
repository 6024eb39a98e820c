import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orthodl._rng import child_rng
from orthodl.model import make_instance, sample_orthogonal
from orthodl.optimizer import SolveConfig
from orthodl.recovery import (
    canonicalize_sign,
    coupon_miss_bound,
    dedup_atoms,
    match_atom,
    recover_dictionary,
    restart_count,
    run_restarts,
    simulate_coupon_misses,
)


def test_match_examples():
    A = sample_orthogonal(8, seed=1)
    m = match_atom(A[:, 3], A)
    assert (m.atom_index, m.sign, m.matched) == (3, 1, True) and m.error < 1e-12
    m = match_atom(-A[:, 1], A)
    assert (m.atom_index, m.sign, m.matched) == (1, -1, True) and m.error < 1e-12
    q = A[:, 2] + 5e-4 * A[:, 7]
    q /= np.linalg.norm(q)
    m = match_atom(q, A, tol=1e-3)
    assert (m.atom_index, m.sign, m.matched) == (2, 1, True)
    assert m.error == pytest.approx(5e-4, rel=0.1)
    assert not match_atom(q, A, tol=1e-4).matched


def test_restart_count():
    assert restart_count(30) == 510
    assert restart_count(2) == 7
    assert restart_count(20) == 300
    assert restart_count(64) == 1331


def test_zero_runs():
    inst = make_instance(6, 100, 0.3, seed=0)
    rep = recover_dictionary(inst, SolveConfig.experiment(max_iters=10), R=0)
    assert not rep.success and rep.records == [] and rep.atoms == {}
    assert rep.runs_to_success() is None


def test_recovery_small_instance_and_determinism():
    inst = make_instance(10, 4000, 0.1, seed=3)
    cfg = SolveConfig.experiment(max_iters=20000)
    a = recover_dictionary(inst, cfg, tol=2e-3, master_seed=9)
    b = recover_dictionary(inst, cfg, tol=2e-3, master_seed=9, chunk_size=256)
    assert a.runs == restart_count(10)
    assert a.success
    assert a.to_json() == b.to_json()
    assert a.atoms_csv() == b.atoms_csv()
    assert 10 <= a.runs_to_success() <= a.runs


def test_recovery_rotated_dictionary():
    inst = make_instance(8, 800, 0.15, "random_orthogonal", seed=5)
    rep = recover_dictionary(inst, SolveConfig.experiment(), tol=5e-3, master_seed=1)
    assert rep.success
    for i, v in rep.atoms.items():
        assert match_atom(v, inst.A).atom_index == i


def test_parallel_restarts_match_serial():
    inst = make_instance(6, 300, 0.2, seed=2)
    cfg = SolveConfig.experiment(max_iters=500)
    a = run_restarts(inst.Y, cfg, 20, master_seed=4, parallelism=1, chunk_size=8)
    b = run_restarts(inst.Y, cfg, 20, master_seed=4, parallelism=2, chunk_size=8)
    assert [r.q_best.tobytes() for r in a] == [r.q_best.tobytes() for r in b]


def test_dedup_examples():
    v = np.array([1.0, 0.0, 0.0])
    w = np.array([0.0, 1.0, 0.0])
    out = dedup_atoms([v, -v, w], target_count=2)
    np.testing.assert_array_equal(np.array(out), [v, w])
    Q = sample_orthogonal(5, seed=0)
    out = dedup_atoms(list(Q.T), target_count=5)
    np.testing.assert_allclose(np.abs(np.array(out)), np.abs(Q.T))
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.99, math.sqrt(1 - 0.99 ** 2), 0.0])
    c = np.array([0.1, 0.0, math.sqrt(1 - 0.01)])
    out, idx = dedup_atoms([a, b, c], target_count=2, return_indices=True)
    assert 2 in idx and len(set(idx) & {0, 1}) == 1
    assert idx == [0, 2]  # ties go against the later index


def test_dedup_threshold_mode():
    v = np.array([1.0, 0.0])
    w = np.array([0.0, 1.0])
    out = dedup_atoms([v, w, v * 1.0], correlation_threshold=0.5)
    assert len(out) == 2
    with pytest.raises(ValueError):
        dedup_atoms([v, w])
    with pytest.raises(ValueError):
        dedup_atoms([v, w], target_count=3)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 6), extra=st.integers(0, 6))
def test_dedup_keeps_basis_from_noisy_copies(seed, n, extra):
    rng = child_rng(seed)
    Q = sample_orthogonal(n, rng=rng)
    vecs = [Q[:, i] for i in range(n)]
    for _ in range(extra):
        v = Q[:, rng.integers(n)] * rng.choice([-1, 1]) + 1e-6 * rng.standard_normal(n)
        vecs.append(v / np.linalg.norm(v))
    out = np.array(dedup_atoms(vecs, target_count=n))
    corr = np.abs(out @ Q)
    assert np.allclose(np.sort(corr.max(axis=0)), 1.0, atol=1e-5)


def test_canonical_sign():
    np.testing.assert_array_equal(canonicalize_sign([0.0, -2.0, 1.0]), [0.0, 2.0, -1.0])
    np.testing.assert_array_equal(canonicalize_sign([1e-12, -2.0]), [-1e-12, 2.0])


def test_coupon_bound():
    n, S = 10, 60
    assert simulate_coupon_misses(n, S, 20000, seed=1) <= coupon_miss_bound(n, S) + 0.01
    assert coupon_miss_bound(20, restart_count(20)) < 20 * math.exp(-15) * 1.01
