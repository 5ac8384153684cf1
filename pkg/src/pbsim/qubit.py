"""Single-qubit states and channels in the affine Bloch representation.

A state is a real 3-vector ``alpha`` with ``rho = (I + alpha . sigma) / 2``.
A channel acts as ``alpha -> M @ alpha + t``; ``M`` is the unital block of the
Pauli transfer matrix and ``t`` the non-unital shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PHYSICAL_TOL = 1e-9
CP_TOL = 1e-9

PAULI = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)

# Ground state sits at -z: amplitude damping relaxes toward it.
GROUND_AXIS = np.array([0.0, 0.0, -1.0])


class NonPhysicalStateError(ValueError):
    """Raised when a Bloch vector leaves the unit ball beyond tolerance."""


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    @classmethod
    def from_array(cls, a) -> "BlochVector":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def norm2(self) -> float:
        return self.x * self.x + self.y * self.y + self.z * self.z

    def is_physical(self, tol: float = PHYSICAL_TOL) -> bool:
        return self.norm2() <= 1.0 + tol

    def is_pure(self, tol: float = PHYSICAL_TOL) -> bool:
        return abs(self.norm2() - 1.0) <= tol

    def density_matrix(self) -> np.ndarray:
        a = self.as_array()
        return 0.5 * (PAULI[0] + np.einsum("k,kij->ij", a, PAULI[1:]))


@dataclass(frozen=True)
class ShotCounts:
    shots: int
    ones: int

    def __post_init__(self):
        if self.shots <= 0:
            raise ValueError(f"shots must be positive, got {self.shots}")
        if not 0 <= self.ones <= self.shots:
            raise ValueError(f"ones={self.ones} outside [0, {self.shots}]")

    @property
    def fraction(self) -> float:
        return self.ones / self.shots


@dataclass(frozen=True, eq=False)
class PauliTransferMap:
    """Affine Bloch-ball map ``alpha -> M alpha + t``."""

    M: np.ndarray
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        M = np.array(self.M, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        M.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "t", t)

    def __eq__(self, other):
        if not isinstance(other, PauliTransferMap):
            return NotImplemented
        return np.array_equal(self.M, other.M) and np.array_equal(self.t, other.t)

    def __hash__(self):
        return hash((self.M.tobytes(), self.t.tobytes()))

    def __matmul__(self, other: "PauliTransferMap") -> "PauliTransferMap":
        """Composition: ``(self @ other)(a) == self(other(a))``."""
        return PauliTransferMap(self.M @ other.M, self.M @ other.t + self.t)

    def ptm(self) -> np.ndarray:
        """Full 4x4 Pauli transfer matrix in the (I, X, Y, Z) basis."""
        R = np.zeros((4, 4))
        R[0, 0] = 1.0
        R[1:, 0] = self.t
        R[1:, 1:] = self.M
        return R

    def choi(self) -> np.ndarray:
        """Choi matrix ``sum_ab |a><b| (x) E(|a><b|)``, trace 2."""
        R = self.ptm()
        J = np.zeros((4, 4), dtype=complex)
        for i in range(4):
            for j in range(4):
                if R[i, j] != 0.0:
                    J += 0.5 * R[i, j] * np.kron(PAULI[j].T, PAULI[i])
        return J

    def min_choi_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.choi()).min())

    def is_cp(self, tol: float = CP_TOL) -> bool:
        return self.min_choi_eigenvalue() >= -tol

    def check_cp(self, tol: float = CP_TOL) -> "PauliTransferMap":
        lam = self.min_choi_eigenvalue()
        if lam < -tol:
            raise ValueError(f"map is not completely positive (Choi eigenvalue {lam:.3e})")
        return self


def identity_map() -> PauliTransferMap:
    return PauliTransferMap(np.eye(3), np.zeros(3))


def depolarizing(p: float) -> PauliTransferMap:
    """Shrink the Bloch ball uniformly by ``p``."""
    return PauliTransferMap(p * np.eye(3), np.zeros(3))


def amplitude_damping(gamma: float) -> PauliTransferMap:
    """Relaxation toward the ground state at -z with probability ``gamma``."""
    s = np.sqrt(1.0 - gamma)
    return PauliTransferMap(np.diag([s, s, 1.0 - gamma]), np.array([0.0, 0.0, -gamma]))


def dephasing(factor: float) -> PauliTransferMap:
    """Scale the transverse (x, y) components by ``factor``."""
    return PauliTransferMap(np.diag([factor, factor, 1.0]), np.zeros(3))


def rotation_matrix(axis, angle: float) -> np.ndarray:
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    K = np.array([[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rotation(axis, angle: float) -> PauliTransferMap:
    return PauliTransferMap(rotation_matrix(axis, angle), np.zeros(3))


def purity(state: BlochVector) -> float:
    return 0.5 * (1.0 + state.norm2())


def purity_metric(state: BlochVector) -> float:
    return state.norm2()


def apply_map(
    channel: PauliTransferMap, state: BlochVector, tol: float = PHYSICAL_TOL
) -> BlochVector:
    out = channel.M @ state.as_array() + channel.t
    n2 = float(out @ out)
    if n2 > 1.0 + tol:
        raise NonPhysicalStateError(
            f"map produced |alpha|^2 = {n2:.12f} > 1; the map is malformed"
        )
    return BlochVector.from_array(out)


def channel_unitarity(channel: PauliTransferMap) -> float:
    M = channel.M
    return float(np.trace(M.T @ M) / 3.0)


def channel_avg_infidelity(channel: PauliTransferMap) -> float:
    return float((3.0 - np.trace(channel.M)) / 6.0)


def survival_probability(state: BlochVector, target_axis) -> float:
    n = np.asarray(target_axis, dtype=float)
    if abs(float(n @ n) - 1.0) > 1e-9:
        raise ValueError("target_axis must be a unit vector")
    p = 0.5 * (1.0 + float(state.as_array() @ n))
    return min(1.0, max(0.0, p))


def sample_counts(prob: float, shots: int, rng: np.random.Generator) -> ShotCounts:
    if shots <= 0:
        raise ValueError("shots must be positive")
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"probability {prob} outside [0, 1]")
    return ShotCounts(int(shots), int(rng.binomial(shots, prob)))
