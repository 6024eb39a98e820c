"""Bernoulli-Gaussian sparse coding instances ``Y = A X`` with orthogonal ``A``."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from os import PathLike
from typing import BinaryIO, Union

import numpy as np

from ._rng import check_seed, child_rng

ORTHO_TOL = 1e-10
DICT_KINDS = ("identity", "random_orthogonal", "supplied")

MAGIC = b"ODLINST\x01"
_FORMAT_VERSION = 1


class InstanceFormatError(ValueError):
    """Raised when an instance file is truncated or malformed."""


@dataclass(frozen=True)
class Theta:
    """Bernoulli parameter of the sparse coefficient model.

    The recovery theory assumes ``1/n <= theta <= 1/2``. Passing ``n``
    enforces that range unless ``override`` is set; without ``n`` only
    ``0 < theta < 1`` is checked.
    """

    value: float
    n: int | None = None
    override: bool = False

    def __post_init__(self):
        v = float(self.value)
        if not (0.0 < v < 1.0):
            raise ValueError(f"theta must lie in (0, 1), got {v}")
        if self.n is not None and not self.override:
            lo, hi = 1.0 / self.n, 0.5
            if not (lo - 1e-12 <= v <= hi + 1e-12):
                raise ValueError(
                    f"theta={v} outside [1/n, 1/2] = [{lo:.6g}, 0.5]; "
                    "set override=True to probe outside the assumed range"
                )
        object.__setattr__(self, "value", v)

    def __float__(self):
        return self.value


def _theta_value(theta) -> float:
    if isinstance(theta, Theta):
        return theta.value
    return Theta(theta).value


def sample_bg(n: int, m: int, theta, seed=0, rng: np.random.Generator | None = None):
    """Draw an ``n x m`` Bernoulli-Gaussian matrix.

    Each entry is an independent standard normal with probability ``theta``
    and exactly zero otherwise. The result is column-major so that each
    sample (column) is contiguous.
    """
    if int(n) < 1 or int(m) < 1:
        raise ValueError(f"dimensions must be positive, got n={n}, m={m}")
    th = _theta_value(theta)
    if rng is None:
        rng = child_rng(seed, 0)
    # draw sample by sample so that column i depends only on the stream prefix
    mask = rng.random((m, n)) < th
    gauss = rng.standard_normal((m, n))
    return np.where(mask, gauss, 0.0).T


def sample_orthogonal(n: int, seed=0, rng: np.random.Generator | None = None):
    """Haar-distributed orthogonal matrix via QR of a Gaussian matrix.

    The columns of Q are rescaled by the signs of diag(R), which removes the
    sign ambiguity of the factorization and makes the law exactly Haar.
    """
    if int(n) < 1:
        raise ValueError(f"n must be positive, got {n}")
    if rng is None:
        rng = child_rng(seed, 1)
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return np.asfortranarray(q * d)


def orthogonality_error(A) -> float:
    A = np.asarray(A, dtype=float)
    return float(np.max(np.abs(A.T @ A - np.eye(A.shape[1]))))


def _frozen(a):
    a = np.asfortranarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Instance:
    """A generated dictionary learning problem ``Y = A X``.

    Arrays are stored column-major and marked read-only, so an instance can
    be shared freely between threads and worker processes.
    """

    n: int
    m: int
    theta: float
    dictionary: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)
    observations: np.ndarray = field(repr=False)
    seed: int = 0
    dict_kind: str = "identity"
    theta_override: bool = False

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"instances need n >= 3, got {self.n}")
        if self.m < 1:
            raise ValueError(f"instances need m >= 1, got {self.m}")
        Theta(self.theta, self.n, self.theta_override)
        if self.dict_kind not in DICT_KINDS:
            raise ValueError(f"unknown dict_kind {self.dict_kind!r}")
        for name, shape in (
            ("dictionary", (self.n, self.n)),
            ("coefficients", (self.n, self.m)),
            ("observations", (self.n, self.m)),
        ):
            arr = _frozen(getattr(self, name))
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        err = orthogonality_error(self.dictionary)
        if err > ORTHO_TOL:
            raise ValueError(f"dictionary is not orthogonal (max |A^T A - I| = {err:.3g})")

    # short aliases matching the usual notation
    @property
    def A(self):
        return self.dictionary

    @property
    def X(self):
        return self.coefficients

    @property
    def Y(self):
        return self.observations

    def nnz_fraction(self) -> float:
        return float(np.count_nonzero(self.coefficients)) / (self.n * self.m)


def make_instance(
    n: int,
    m: int,
    theta,
    dict_kind: str = "identity",
    seed=0,
    dictionary=None,
    theta_override: bool = False,
) -> Instance:
    """Generate an instance as a pure function of its arguments.

    ``dict_kind`` is ``"identity"``, ``"random_orthogonal"`` (Haar) or
    ``"supplied"``, in which case ``dictionary`` must be orthogonal to 1e-10.
    Coefficients and dictionary come from separate child streams of ``seed``.
    """
    n, m = int(n), int(m)
    seed = check_seed(seed)
    th = Theta(theta.value if isinstance(theta, Theta) else theta, n,
               theta_override or (isinstance(theta, Theta) and theta.override))
    X = sample_bg(n, m, th, rng=child_rng(seed, 0))
    if dict_kind == "identity":
        A = np.eye(n)
        Y = X.copy(order="F")
    elif dict_kind == "random_orthogonal":
        A = sample_orthogonal(n, rng=child_rng(seed, 1))
        Y = A @ X
    elif dict_kind == "supplied":
        if dictionary is None:
            raise ValueError("dict_kind='supplied' requires a dictionary")
        A = np.array(dictionary, dtype=np.float64)
        if A.shape != (n, n):
            raise ValueError(f"supplied dictionary has shape {A.shape}, expected {(n, n)}")
        err = orthogonality_error(A)
        if err > ORTHO_TOL:
            raise ValueError(f"supplied dictionary is not orthogonal (max error {err:.3g})")
        Y = A @ X
    else:
        raise ValueError(f"dict_kind must be one of {DICT_KINDS}, got {dict_kind!r}")
    return Instance(n, m, th.value, A, X, Y, seed, dict_kind, theta_override)


def rotate_to_identity(instance: Instance) -> Instance:
    """Return the equivalent instance with dictionary ``I`` and data ``A^T Y``.

    A direction ``q'`` found on the rotated instance maps back to ``A q'``.
    """
    if instance.dict_kind == "identity":
        return instance
    A = instance.dictionary
    return Instance(
        instance.n,
        instance.m,
        instance.theta,
        np.eye(instance.n),
        instance.coefficients,
        A.T @ instance.observations,
        instance.seed,
        "identity",
        instance.theta_override,
    )


# ---------------------------------------------------------------------------
# binary container
#
#   bytes 0..7   magic b"ODLINST\x01"
#   bytes 8..11  uint32 little-endian length L of the JSON header
#   next L bytes UTF-8 JSON: n, m, theta, dict_kind, seed, theta_override, version
#   payload      A (n*n), X (n*m), Y (n*m) as little-endian float64, column-major

PathOrFile = Union[str, PathLike, BinaryIO]


def _header(instance: Instance) -> bytes:
    meta = {
        "version": _FORMAT_VERSION,
        "n": instance.n,
        "m": instance.m,
        "theta": instance.theta,
        "dict_kind": instance.dict_kind,
        "seed": instance.seed,
        "theta_override": instance.theta_override,
    }
    return json.dumps(meta, sort_keys=True).encode("utf-8")


def instance_to_bytes(instance: Instance) -> bytes:
    head = _header(instance)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    for arr in (instance.dictionary, instance.coefficients, instance.observations):
        buf.write(np.asarray(arr, dtype="<f8").tobytes(order="F"))
    return buf.getvalue()


def instance_from_bytes(data: bytes) -> Instance:
    if len(data) < 12 or data[:8] != MAGIC:
        raise InstanceFormatError("not an instance file (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        meta = json.loads(data[12:12 + hlen].decode("utf-8"))
        n, m = int(meta["n"]), int(meta["m"])
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise InstanceFormatError(f"corrupt instance header: {exc}") from exc
    if meta.get("version") != _FORMAT_VERSION:
        raise InstanceFormatError(f"unsupported format version {meta.get('version')}")
    offset = 12 + hlen
    sizes = (n * n, n * m, n * m)
    if len(data) != offset + 8 * sum(sizes):
        raise InstanceFormatError(
            f"payload has {len(data) - offset} bytes, expected {8 * sum(sizes)}"
        )
    arrays = []
    for size, shape in zip(sizes, ((n, n), (n, m), (n, m))):
        flat = np.frombuffer(data, dtype="<f8", count=size, offset=offset)
        arrays.append(flat.reshape(shape, order="F").astype(np.float64))
        offset += 8 * size
    try:
        return Instance(
            n, m, float(meta["theta"]), *arrays,
            seed=int(meta["seed"]),
            dict_kind=str(meta["dict_kind"]),
            theta_override=bool(meta.get("theta_override", False)),
        )
    except (KeyError, ValueError) as exc:
        raise InstanceFormatError(f"invalid instance contents: {exc}") from exc


def save_instance(instance: Instance, dest: PathOrFile) -> None:
    payload = instance_to_bytes(instance)
    if hasattr(dest, "write"):
        dest.write(payload)
    else:
        with open(dest, "wb") as fh:
            fh.write(payload)


def load_instance(src: PathOrFile) -> Instance:
    if hasattr(src, "read"):
        return instance_from_bytes(src.read())
    with open(src, "rb") as fh:
        return instance_from_bytes(fh.read())
