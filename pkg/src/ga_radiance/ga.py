"""Clifford algebra over four generators e1..e4.

Multivectors are stored as 16 coefficients in a fixed blade order::

    1, e1, e2, e3, e4, e12, e13, e14, e23, e24, e34,
    e123, e124, e134, e234, e1234

Each blade is identified by a generator bitmask (bit 0 = e1, ..., bit 3 = e4)
and its grade is the popcount of that mask. The metric is a runtime
:class:`Signature`; ``PGA`` makes e4 null, ``MINKOWSKI`` makes it square to -1.

All functions take and return plain ``numpy`` arrays whose last axis has
length 16 and broadcast over leading axes. :class:`Multivector` is a thin
value wrapper with operator overloading for interactive use.
"""

from __future__ import annotations

import functools
import json
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DIM = 16
N_GEN = 4


class SingularOperatorError(ValueError):
    """Raised when a versor has no inverse."""


class DegenerateInputError(ValueError):
    """Raised for zero directions, zero normals and similar inputs."""


def _blade_order() -> tuple[int, ...]:
    masks = sorted(range(DIM), key=lambda m: (bin(m).count("1"), [i for i in range(N_GEN) if m >> i & 1]))
    return tuple(masks)


BLADE_MASKS: tuple[int, ...] = _blade_order()
BLADE_INDEX: dict[int, int] = {m: i for i, m in enumerate(BLADE_MASKS)}
GRADES = np.array([bin(m).count("1") for m in BLADE_MASKS])
BLADE_NAMES: tuple[str, ...] = tuple(
    "1" if m == 0 else "e" + "".join(str(i + 1) for i in range(N_GEN) if m >> i & 1) for m in BLADE_MASKS
)
# blades containing the e4 generator
E4_BLADES = np.array([bool(m & 0b1000) for m in BLADE_MASKS])
REVERSE_SIGNS = np.array([(-1.0) ** (g * (g - 1) // 2) for g in GRADES])


@dataclass(frozen=True)
class Signature:
    """Squares of the generators e1..e4, each in {+1, -1, 0}."""

    squares: tuple[int, int, int, int]

    def __post_init__(self):
        sq = tuple(int(s) for s in self.squares)
        if len(sq) != N_GEN or any(s not in (-1, 0, 1) for s in sq):
            raise ValueError(f"signature needs 4 entries in {{+1,-1,0}}, got {self.squares!r}")
        object.__setattr__(self, "squares", sq)

    def to_json(self) -> list[int]:
        return list(self.squares)

    @classmethod
    def from_json(cls, data: Sequence[int]) -> "Signature":
        return cls(tuple(data))

    @property
    def is_degenerate(self) -> bool:
        return 0 in self.squares


PGA = Signature((1, 1, 1, 0))
MINKOWSKI = Signature((1, 1, 1, -1))
SIGNATURES = {"pga": PGA, "minkowski": MINKOWSKI}


def _reorder_sign(a: int, b: int) -> int:
    """Sign picked up moving the generators of blade ``b`` past those of ``a``."""
    swaps = 0
    a >>= 1
    while a:
        swaps += bin(a & b).count("1")
        a >>= 1
    return -1 if swaps & 1 else 1


@functools.lru_cache(maxsize=None)
def cayley_table(sig: Signature) -> np.ndarray:
    """Structure constants ``C[i, j, k]`` with ``e_i e_j = sum_k C[i, j, k] e_k``."""
    table = np.zeros((DIM, DIM, DIM))
    for i, a in enumerate(BLADE_MASKS):
        for j, b in enumerate(BLADE_MASKS):
            sign = _reorder_sign(a, b)
            common = a & b
            for g in range(N_GEN):
                if common >> g & 1:
                    sign *= sig.squares[g]
            if sign:
                table[i, j, BLADE_INDEX[a ^ b]] = sign
    table.setflags(write=False)
    return table


def _as_mv(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.shape[-1:] != (DIM,):
        raise ValueError(f"multivector arrays need a trailing axis of 16, got shape {arr.shape}")
    return arr


def geometric_product(a, b, sig: Signature = PGA) -> np.ndarray:
    a, b = _as_mv(a), _as_mv(b)
    return np.einsum("...i,...j,ijk->...k", a, b, cayley_table(sig))


def grade_project(a, k: int) -> np.ndarray:
    if not 0 <= k <= N_GEN:
        raise ValueError(f"grade must be in 0..4, got {k}")
    a = _as_mv(a)
    return np.where(GRADES == k, a, 0.0)


def reverse(a) -> np.ndarray:
    return _as_mv(a) * REVERSE_SIGNS


def grade_involution(a) -> np.ndarray:
    return _as_mv(a) * np.where(GRADES % 2 == 0, 1.0, -1.0)


def scalar(value: float = 1.0) -> np.ndarray:
    out = np.zeros(DIM)
    out[0] = value
    return out


def basis(name: str) -> np.ndarray:
    """Unit blade by name, e.g. ``basis("e12")``."""
    out = np.zeros(DIM)
    out[BLADE_NAMES.index(name)] = 1.0
    return out


def inner_product(a, b, sig: Signature = PGA) -> np.ndarray:
    """Scalar part of ``reverse(a) b``.

    This is the invariant bilinear form used by attention: blades containing a
    null generator contribute nothing, the rest contribute with their metric sign.
    """
    a, b = _as_mv(a), _as_mv(b)
    return np.sum(a * b * blade_metric(sig), axis=-1)


@functools.lru_cache(maxsize=None)
def blade_metric(sig: Signature) -> np.ndarray:
    """``<reverse(e_k) e_k>_0`` per blade."""
    table = cayley_table(sig)
    diag = np.array([table[k, k, 0] for k in range(DIM)]) * REVERSE_SIGNS
    diag.setflags(write=False)
    return diag


def versor_inverse(v, sig: Signature = PGA, tol: float = 1e-10) -> np.ndarray:
    """Inverse of a versor as ``reverse(v) / (v reverse(v))``."""
    v = _as_mv(v)
    rev = reverse(v)
    norm = geometric_product(v, rev, sig)
    s = norm[..., 0]
    rest = np.abs(norm[..., 1:]).max(axis=-1)
    scale = np.maximum(np.abs(v).max(axis=-1) ** 2, 1.0)
    if np.any(np.abs(s) <= tol * scale) or np.any(rest > tol * scale):
        raise SingularOperatorError("operator is not an invertible versor (v * reverse(v) is not a nonzero scalar)")
    return rev / s[..., None]


def sandwich_apply(versor, x, sig: Signature = PGA, odd_flip: bool = False) -> np.ndarray:
    """``(+/-) v x v^-1``; the minus sign (``odd_flip``) gives reflections."""
    inv = versor_inverse(versor, sig)
    out = geometric_product(geometric_product(versor, x, sig), inv, sig)
    return -out if odd_flip else out


def compose_interactions(ops: Iterable, sig: Signature = PGA) -> np.ndarray:
    """Product ``I1 I2 ... In``; sandwiching with it applies In first, I1 last."""
    total = scalar(1.0)
    for op in ops:
        versor_inverse(op, sig)
        total = geometric_product(total, op, sig)
    return total


def rotor(axis: Sequence[float], angle: float) -> np.ndarray:
    """Spatial rotor rotating by ``angle`` (right-handed) about ``axis``.

    ``R x reverse(R)`` then rotates grade-1 spatial parts; e4 is left alone.
    """
    n = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise DegenerateInputError("rotation axis must be nonzero")
    n = n / norm
    # dual bivector of the axis: n1 e23 + n2 e31 + n3 e12
    out = scalar(np.cos(angle / 2))
    s = np.sin(angle / 2)
    out[BLADE_NAMES.index("e23")] = -s * n[0]
    out[BLADE_NAMES.index("e13")] = s * n[1]
    out[BLADE_NAMES.index("e12")] = -s * n[2]
    return out


def random_rotor(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    out = scalar(q[0])
    out[BLADE_NAMES.index("e23")] = q[1]
    out[BLADE_NAMES.index("e13")] = q[2]
    out[BLADE_NAMES.index("e12")] = q[3]
    return out


# -- geometry embedding ------------------------------------------------------
#
# Points:     x e1 + y e2 + z e3 + 1 e4   (unit homogeneous e4 part)
# Directions: x e1 + y e2 + z e3          (no e4 part)
# Planes:     n1 e1 + n2 e2 + n3 e3 + d e4, the set {x : n . x = d}
#
# The same layout is used under both signatures. Reflections of points across
# planes go through the trivector form of the point, see ``reflect_point``.

_VEC = [BLADE_NAMES.index(n) for n in ("e1", "e2", "e3", "e4")]
_TRI = [BLADE_NAMES.index(n) for n in ("e234", "e134", "e124", "e123")]
_TRI_SIGNS = np.array([1.0, -1.0, 1.0, 1.0])


def embed_geometry(kind: str, coords: Sequence[float], sig: Signature = PGA, offset: float | None = None) -> np.ndarray:
    c = np.asarray(coords, dtype=float)
    if c.shape != (3,) or not np.all(np.isfinite(c)):
        raise ValueError(f"expected 3 finite coordinates, got {coords!r}")
    out = np.zeros(DIM)
    out[_VEC[:3]] = c
    if kind == "point":
        out[_VEC[3]] = 1.0
    elif kind == "direction":
        if not np.any(c):
            raise DegenerateInputError("direction must be nonzero")
    elif kind == "plane":
        if not np.any(c):
            raise DegenerateInputError("plane normal must be nonzero")
        out[_VEC[3]] = 0.0 if offset is None else float(offset)
    else:
        raise ValueError(f"unknown geometry kind {kind!r}")
    return out


def extract_geometry(kind: str, mv) -> tuple[np.ndarray, float | None]:
    """Inverse of :func:`embed_geometry`; returns ``(coords, offset)``."""
    mv = _as_mv(mv)
    v = mv[_VEC]
    if kind == "point":
        if abs(v[3]) < 1e-12:
            raise DegenerateInputError("point at infinity has no finite coordinates")
        return v[:3] / v[3], None
    if kind == "direction":
        return v[:3].copy(), None
    if kind == "plane":
        return v[:3].copy(), float(v[3])
    raise ValueError(f"unknown geometry kind {kind!r}")


def point_to_trivector(p) -> np.ndarray:
    """Grade-3 form of a grade-1 point, on which plane sandwiches act as mirrors."""
    p = _as_mv(p)
    out = np.zeros(p.shape)
    out[..., _TRI] = p[..., _VEC] * _TRI_SIGNS
    return out


def trivector_to_point(t) -> np.ndarray:
    t = _as_mv(t)
    out = np.zeros(t.shape)
    out[..., _VEC] = t[..., _TRI] * _TRI_SIGNS
    return out


def reflect_point(plane, point, sig: Signature = PGA) -> np.ndarray:
    """Mirror a grade-1 point across a plane via ``p X p^-1`` on its trivector form.

    Only meaningful with a null e4 (the plane offset must not enter the metric).
    The result keeps a positive homogeneous weight; on the trivector form the
    leading minus of a vector reflection cancels.
    """
    if sig.squares[3] != 0:
        raise ValueError("point reflection needs a null e4 generator (PGA signature)")
    t = sandwich_apply(plane, point_to_trivector(point), sig)
    return trivector_to_point(t)


# -- value wrapper -----------------------------------------------------------


class Multivector:
    """Immutable 16-coefficient multivector bound to a signature."""

    __slots__ = ("coeffs", "sig")

    def __init__(self, coeffs, sig: Signature = PGA):
        arr = np.array(coeffs, dtype=float)
        if arr.shape != (DIM,):
            raise ValueError(f"Multivector needs 16 coefficients, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Multivector coefficients must be finite")
        arr.setflags(write=False)
        self.coeffs = arr
        self.sig = sig

    @classmethod
    def blade(cls, name: str, sig: Signature = PGA) -> "Multivector":
        return cls(basis(name), sig)

    def __array__(self, dtype=None, copy=None):
        return self.coeffs if dtype is None else self.coeffs.astype(dtype)

    def _wrap(self, arr) -> "Multivector":
        return Multivector(arr, self.sig)

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, Multivector):
            if other.sig != self.sig:
                raise ValueError("cannot mix multivectors of different signatures")
            return other.coeffs
        return scalar(float(other))

    def __add__(self, other):
        return self._wrap(self.coeffs + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.coeffs - self._coerce(other))

    def __rsub__(self, other):
        return self._wrap(self._coerce(other) - self.coeffs)

    def __neg__(self):
        return self._wrap(-self.coeffs)

    def __mul__(self, other):
        if isinstance(other, Multivector):
            return self._wrap(geometric_product(self.coeffs, self._coerce(other), self.sig))
        return self._wrap(self.coeffs * float(other))

    def __rmul__(self, other):
        return self._wrap(self.coeffs * float(other))

    def __invert__(self):
        return self._wrap(reverse(self.coeffs))

    def __eq__(self, other):
        return isinstance(other, Multivector) and self.sig == other.sig and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash((self.coeffs.tobytes(), self.sig))

    def grade(self, k: int) -> "Multivector":
        return self._wrap(grade_project(self.coeffs, k))

    def inverse(self) -> "Multivector":
        return self._wrap(versor_inverse(self.coeffs, self.sig))

    def sandwich(self, x: "Multivector", odd_flip: bool = False) -> "Multivector":
        return self._wrap(sandwich_apply(self.coeffs, self._coerce(x), self.sig, odd_flip))

    def allclose(self, other, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.coeffs, self._coerce(other), atol=atol, rtol=0))

    def __repr__(self):
        terms = [f"{c:+.6g}*{n}" for c, n in zip(self.coeffs, BLADE_NAMES) if c != 0]
        return f"Multivector({' '.join(terms) or '0'}, sig={self.sig.squares})"

    # serialization: 16 doubles in blade order
    def to_json(self) -> str:
        return json.dumps({"coeffs": self.coeffs.tolist(), "signature": self.sig.to_json()})

    @classmethod
    def from_json(cls, text: str) -> "Multivector":
        data = json.loads(text)
        if isinstance(data, list):
            return cls(data)
        return cls(data["coeffs"], Signature.from_json(data.get("signature", PGA.squares)))

    def to_bytes(self) -> bytes:
        return struct.pack("<16d", *self.coeffs)

    @classmethod
    def from_bytes(cls, blob: bytes, sig: Signature = PGA) -> "Multivector":
        if len(blob) != 16 * 8:
            raise ValueError(f"expected 128 bytes, got {len(blob)}")
        return cls(struct.unpack("<16d", blob), sig)
