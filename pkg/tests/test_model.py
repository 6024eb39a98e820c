import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orthodl._rng import child_rng, child_seed
from orthodl.model import (
    InstanceFormatError,
    Theta,
    instance_from_bytes,
    instance_to_bytes,
    load_instance,
    make_instance,
    orthogonality_error,
    rotate_to_identity,
    sample_bg,
    sample_orthogonal,
    save_instance,
)
from orthodl.objective import objective_value


def test_theta_range():
    with pytest.raises(ValueError):
        Theta(0.0)
    with pytest.raises(ValueError):
        Theta(0.6, n=10)
    assert Theta(0.6, n=10, override=True).value == 0.6
    assert Theta(0.1, n=10).value == 0.1


def test_bg_theta_near_one_keeps_every_entry():
    X = sample_bg(4, 1, 1 - 1e-12, seed=3)
    assert X.shape == (4, 1)
    assert np.all(X != 0)


def test_bg_deterministic():
    a = sample_bg(2, 3, 0.4, seed=11)
    b = sample_bg(2, 3, 0.4, seed=11)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_bg(2, 3, 0.4, seed=12))


def test_bg_nonzero_fraction():
    X = sample_bg(50, 10_000, 0.3, seed=5)
    # binomial std ~ 6.5e-4
    assert abs(np.count_nonzero(X) / X.size - 0.3) < 0.01


def test_bg_nonzeros_are_standard_normal():
    X = sample_bg(20, 20_000, 0.5, seed=2)
    v = X[X != 0]
    assert abs(v.mean()) < 0.01
    assert abs(v.var() - 1) < 0.02


def test_orthogonal_one_by_one():
    A = sample_orthogonal(1, seed=4)
    assert A.shape == (1, 1) and abs(abs(A[0, 0]) - 1) < 1e-15


def test_orthogonal_property():
    assert orthogonality_error(sample_orthogonal(8, seed=0)) < 1e-10


def test_haar_mean_entry_is_zero():
    vals = np.array([sample_orthogonal(3, rng=child_rng(9, i))[0, 0] for i in range(10_000)])
    # E A11 = 0 and Var A11 = 1/3 under Haar measure
    se = np.sqrt(1 / 3 / vals.size)
    assert abs(vals.mean()) < 4 * se
    assert abs(vals.var() - 1 / 3) < 0.02


def test_identity_instance():
    inst = make_instance(10, 100, 0.2, "identity", seed=7)
    assert np.array_equal(inst.Y, inst.X)
    again = make_instance(10, 100, 0.2, "identity", seed=7)
    assert inst.Y.tobytes() == again.Y.tobytes()


def test_random_orthogonal_preserves_column_norms():
    inst = make_instance(10, 200, 0.2, "random_orthogonal", seed=1)
    np.testing.assert_allclose(np.linalg.norm(inst.Y, axis=0), np.linalg.norm(inst.X, axis=0),
                               atol=1e-10)


def test_instance_is_read_only():
    inst = make_instance(5, 10, 0.3, seed=0)
    with pytest.raises(ValueError):
        inst.Y[0, 0] = 1.0


def test_instance_validation():
    with pytest.raises(ValueError):
        make_instance(2, 10, 0.5)
    with pytest.raises(ValueError):
        make_instance(10, 10, 0.0)
    with pytest.raises(ValueError):
        make_instance(5, 10, 0.3, "supplied", dictionary=np.ones((5, 5)))
    with pytest.raises(ValueError):
        make_instance(5, 10, 0.3, "bogus")


def test_supplied_dictionary():
    A = sample_orthogonal(6, seed=3)
    inst = make_instance(6, 50, 0.3, "supplied", seed=2, dictionary=A)
    np.testing.assert_array_equal(inst.A, A)


def test_rotate_to_identity():
    ident = make_instance(5, 20, 0.3, seed=0)
    assert rotate_to_identity(ident) is ident
    inst = make_instance(8, 300, 0.25, "random_orthogonal", seed=4)
    rot = rotate_to_identity(inst)
    np.testing.assert_allclose(rot.Y, inst.X, atol=1e-10)
    rng = child_rng(0)
    for _ in range(5):
        q = rng.standard_normal(8)
        q /= np.linalg.norm(q)
        # f(q; Y) = f(A^T q; A^T Y)
        assert abs(objective_value(q, inst.Y) - objective_value(inst.A.T @ q, rot.Y)) < 1e-12


def test_binary_round_trip(tmp_path):
    inst = make_instance(6, 40, 0.3, "random_orthogonal", seed=8)
    blob = instance_to_bytes(inst)
    back = instance_from_bytes(blob)
    for name in ("dictionary", "coefficients", "observations"):
        assert getattr(back, name).tobytes() == getattr(inst, name).tobytes()
    assert (back.n, back.m, back.theta, back.seed, back.dict_kind) == (6, 40, 0.3, 8, "random_orthogonal")
    path = tmp_path / "inst.bin"
    save_instance(inst, path)
    assert path.read_bytes() == blob
    assert load_instance(path).Y.tobytes() == inst.Y.tobytes()
    buf = io.BytesIO()
    save_instance(inst, buf)
    assert buf.getvalue() == blob


def test_corrupt_instance_rejected():
    blob = instance_to_bytes(make_instance(4, 5, 0.3, seed=0))
    with pytest.raises(InstanceFormatError):
        instance_from_bytes(b"garbage" + blob)
    with pytest.raises(InstanceFormatError):
        instance_from_bytes(blob[:-8])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), keys=st.lists(st.integers(0, 2**31), max_size=4))
def test_child_streams_are_pure(seed, keys):
    assert child_seed(seed, *keys) == child_seed(seed, *keys)
    a = child_rng(seed, *keys).random(3)
    b = child_rng(seed, *keys).random(3)
    assert np.array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 10**6))
def test_haar_samples_orthogonal(n, seed):
    assert orthogonality_error(sample_orthogonal(n, seed=seed)) < 1e-10
