"""The 24-element single-qubit Clifford group as signed permutations of Pauli axes.

Elements are identified by an integer index into a fixed table; index 0 is the
identity. Composition and inversion are table lookups on exact integer matrices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

from .qubit import rotation_matrix

GROUP_SIZE = 24
BASES = ("z", "x", "y")


@dataclass(frozen=True, eq=False)
class CliffordElement:
    index: int
    rot: np.ndarray

    def __eq__(self, other):
        return isinstance(other, CliffordElement) and self.index == other.index

    def __hash__(self):
        return hash(self.index)

    def __repr__(self):
        return f"CliffordElement({self.index}, {self.rot.tolist()})"


def _build_rotations() -> np.ndarray:
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            R = np.zeros((3, 3), dtype=np.int64)
            for row, col in enumerate(perm):
                R[row, col] = signs[row]
            if round(np.linalg.det(R)) == 1:
                mats.append(R)
    eye = np.eye(3, dtype=np.int64)
    mats.sort(key=lambda R: (not np.array_equal(R, eye), tuple(R.ravel())))
    return np.array(mats)


ROTATIONS = _build_rotations()
ROTATIONS.setflags(write=False)
_KEYS = {R.tobytes(): i for i, R in enumerate(ROTATIONS)}


def _lookup(R: np.ndarray) -> int:
    try:
        return _KEYS[np.asarray(R, dtype=np.int64).tobytes()]
    except KeyError:
        raise ValueError(f"not a Clifford rotation: {R.tolist()}") from None


# MUL[a, b] is the index whose rotation equals ROT[a] @ ROT[b].
MUL = np.array(
    [[_lookup(ROTATIONS[a] @ ROTATIONS[b]) for b in range(GROUP_SIZE)] for a in range(GROUP_SIZE)],
    dtype=np.int64,
)
INV = np.array([_lookup(R.T) for R in ROTATIONS], dtype=np.int64)
MUL.setflags(write=False)
INV.setflags(write=False)

_ELEMENTS = tuple(CliffordElement(i, ROTATIONS[i]) for i in range(GROUP_SIZE))


def element(index: int) -> CliffordElement:
    return _ELEMENTS[index]


def find(rot) -> CliffordElement:
    """Element whose axis action is ``rot`` (rounded to integers)."""
    return _ELEMENTS[_lookup(np.rint(np.asarray(rot, dtype=float)).astype(np.int64))]


def _quarter(axis: int, sign: int) -> np.ndarray:
    n = np.zeros(3)
    n[axis] = 1.0
    return rotation_matrix(n, sign * np.pi / 2)


IDENTITY = _ELEMENTS[0]
X_HALF = find(_quarter(0, 1))
X_HALF_INV = find(_quarter(0, -1))
Y_HALF = find(_quarter(1, 1))
Z_HALF = find(_quarter(2, 1))
Z_HALF_INV = find(_quarter(2, -1))
X_PI = find(np.diag([1, -1, -1]))

# Basis changes sending the z measurement axis onto x and y.
BASIS_ROTATION = {"z": IDENTITY, "x": Y_HALF, "y": X_HALF_INV}


def enumerate_group() -> list[CliffordElement]:
    return list(_ELEMENTS)


def compose(a: CliffordElement, b: CliffordElement) -> CliffordElement:
    """Element acting as ``b`` first, then ``a``."""
    return _ELEMENTS[MUL[a.index, b.index]]


def inverse(g: CliffordElement) -> CliffordElement:
    return _ELEMENTS[INV[g.index]]


def net_index(indices: Sequence[int]) -> int:
    """Index of ``g_m ... g_1`` for gates applied in list order."""
    return reduce(lambda acc, g: MUL[g, acc], indices, 0)


def compile_inverse(seq: Sequence, basis: str = "z", flip: bool = False) -> CliffordElement:
    """Single Clifford undoing ``seq`` and rotating the measurement axis.

    ``seq`` holds elements or integer indices in application order. The result
    is ``X_pi^flip . R_basis . (g_m ... g_1)^-1``.
    """
    if basis not in BASIS_ROTATION:
        raise ValueError(f"basis must be one of {BASES}, got {basis!r}")
    idx = [g.index if isinstance(g, CliffordElement) else int(g) for g in seq]
    out = MUL[BASIS_ROTATION[basis].index, INV[net_index(idx)]]
    if flip:
        out = MUL[X_PI.index, out]
    return _ELEMENTS[out]


def sample_uniform(rng: np.random.Generator, m: int) -> list[CliffordElement]:
    if m < 0:
        raise ValueError("m must be non-negative")
    return [_ELEMENTS[i] for i in rng.integers(0, GROUP_SIZE, size=m)]


def sample_indices(rng: np.random.Generator, m: int) -> np.ndarray:
    if m < 0:
        raise ValueError("m must be non-negative")
    return rng.integers(0, GROUP_SIZE, size=m, dtype=np.int64)
