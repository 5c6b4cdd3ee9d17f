"""Dense statevector simulator used by every other module.

Basis convention: qubit 0 is the most significant bit of the amplitude
index, so ``[Zero, One]`` is the amplitude vector ``[0, 1, 0, 0]``.

Planar measurement basis at angle ``a`` is ``|+_a>, |-_a>`` with
``|+-_a> = (|0> +- e^{ia}|1>)/sqrt(2)``; outcome 0 is ``|+_a>``.

States are immutable at the API level: every operation returns a new
:class:`StateVector`. Randomness is always passed in explicitly as a
``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .angles import Angle8

MAX_QUBITS = 24
NORM_TOL = 1e-10
FORCED_BRANCH_TOL = 1e-14

SQRT2_INV = 1 / math.sqrt(2)


class QSimError(ValueError):
    pass


class EmptyPrepList(QSimError):
    pass


class TooManyQubits(QSimError):
    pass


class IndexOutOfRange(QSimError):
    pass


class DuplicateTarget(QSimError):
    pass


class ArityMismatch(QSimError):
    pass


class DimMismatch(QSimError):
    pass


class ZeroProbabilityForcedBranch(QSimError):
    pass


# ---------------------------------------------------------------------------
# preparations


@dataclass(frozen=True)
class Prep:
    """Single-qubit preparation: ``"0"``, ``"1"``, ``"+"`` or ``"-"`` (with angle)."""

    kind: str
    angle: Angle8 = Angle8(0)

    def __post_init__(self):
        if self.kind not in ("0", "1", "+", "-"):
            raise ValueError(f"unknown preparation {self.kind!r}")

    def vector(self) -> np.ndarray:
        if self.kind == "0":
            return np.array([1, 0], dtype=complex)
        if self.kind == "1":
            return np.array([0, 1], dtype=complex)
        return planar_vector(self.angle.radians, 0 if self.kind == "+" else 1)

    def __str__(self) -> str:
        if self.kind in ("0", "1"):
            return self.kind
        return f"{self.kind}{self.angle.k}"


Zero = Prep("0")
One = Prep("1")


def Plus(angle: Angle8 | int = 0) -> Prep:
    return Prep("+", angle if isinstance(angle, Angle8) else Angle8(angle))


def Minus(angle: Angle8 | int = 0) -> Prep:
    return Prep("-", angle if isinstance(angle, Angle8) else Angle8(angle))


def planar_vector(angle: float, outcome: int = 0) -> np.ndarray:
    sign = 1 if outcome == 0 else -1
    return np.array([1, sign * np.exp(1j * angle)], dtype=complex) * SQRT2_INV


# ---------------------------------------------------------------------------
# state vector


class StateVector:
    """Normalized amplitudes over ``num_qubits`` qubits (read-only array)."""

    __slots__ = ("num_qubits", "amps")

    def __init__(self, amps, normalize: bool = False):
        arr = np.array(amps, dtype=complex).reshape(-1)
        n = int(round(math.log2(arr.size))) if arr.size else 0
        if arr.size < 2 or 2**n != arr.size:
            raise QSimError(f"amplitude count {arr.size} is not a power of two >= 2")
        if n > MAX_QUBITS:
            raise TooManyQubits(f"{n} qubits exceeds the limit of {MAX_QUBITS}")
        if not np.all(np.isfinite(arr)):
            raise QSimError("non-finite amplitude")
        norm = np.linalg.norm(arr)
        if normalize:
            if norm < FORCED_BRANCH_TOL:
                raise QSimError("cannot normalize the zero vector")
            arr = arr / norm
        elif abs(norm - 1) > NORM_TOL:
            raise QSimError(f"state is not normalized (norm={norm})")
        arr.setflags(write=False)
        self.num_qubits = n
        self.amps = arr

    @classmethod
    def _trusted(cls, arr: np.ndarray) -> StateVector:
        obj = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=complex).reshape(-1)
        arr.setflags(write=False)
        obj.num_qubits = int(arr.size).bit_length() - 1
        obj.amps = arr
        return obj

    def tensor(self, other: StateVector) -> StateVector:
        if self.num_qubits + other.num_qubits > MAX_QUBITS:
            raise TooManyQubits("tensor product exceeds qubit limit")
        return StateVector._trusted(np.kron(self.amps, other.amps))

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def inner(self, other: StateVector) -> complex:
        """``<self|other>``."""
        if self.num_qubits != other.num_qubits:
            raise DimMismatch(f"{self.num_qubits} vs {other.num_qubits} qubits")
        return complex(np.vdot(self.amps, other.amps))

    def density(self) -> DensityMatrix:
        return DensityMatrix(np.outer(self.amps, self.amps.conj()))

    def reduced_density(self, qubits) -> DensityMatrix:
        """Reduced density matrix on ``qubits`` (kept in the given order)."""
        qubits = list(qubits)
        _check_targets(self.num_qubits, qubits)
        n = self.num_qubits
        rest = [q for q in range(n) if q not in qubits]
        psi = self.amps.reshape([2] * n).transpose(qubits + rest)
        psi = psi.reshape(2 ** len(qubits), -1)
        return DensityMatrix(psi @ psi.conj().T)

    def __repr__(self) -> str:
        return f"StateVector(num_qubits={self.num_qubits})"


def prepare_state(preps) -> StateVector:
    preps = list(preps)
    if not preps:
        raise EmptyPrepList("need at least one preparation")
    if len(preps) > MAX_QUBITS:
        raise TooManyQubits(f"{len(preps)} qubits exceeds the limit of {MAX_QUBITS}")
    amps = preps[0].vector()
    for p in preps[1:]:
        amps = np.kron(amps, p.vector())
    return StateVector._trusted(amps)


def basis_state(bits) -> StateVector:
    return prepare_state([One if b else Zero for b in bits])


# ---------------------------------------------------------------------------
# gates


def rz(theta: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex)


def rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) * SQRT2_INV
S = np.array([[1, 0], [0, 1j]], dtype=complex)
T = np.array([[1, 0], [0, np.exp(0.25j * math.pi)]], dtype=complex)
CZ = np.diag([1, 1, 1, -1]).astype(complex)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)

_FIXED = {"I": I2, "X": X, "Y": Y, "Z": Z, "H": H, "S": S, "T": T, "CZ": CZ, "CNOT": CNOT}
_ROTATIONS = {"Rz": rz, "Rx": rx}
GATE_KINDS = tuple(_FIXED) + tuple(_ROTATIONS)


@dataclass(frozen=True)
class GateSpec:
    kind: str
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")

    @property
    def arity(self) -> int:
        return 2 if self.kind in ("CZ", "CNOT") else 1

    def matrix(self) -> np.ndarray:
        if self.kind in _ROTATIONS:
            return _ROTATIONS[self.kind](self.theta)
        return _FIXED[self.kind].copy()


def _check_targets(n: int, targets) -> None:
    for q in targets:
        if not 0 <= q < n:
            raise IndexOutOfRange(f"qubit {q} out of range for {n} qubits")
    if len(set(targets)) != len(targets):
        raise DuplicateTarget(f"duplicate target in {list(targets)}")


def apply_matrix(state: StateVector, matrix: np.ndarray, targets) -> StateVector:
    """Apply a ``2^k x 2^k`` unitary to ``targets`` (first target = most significant)."""
    targets = list(targets)
    k = len(targets)
    if matrix.shape != (2**k, 2**k):
        raise ArityMismatch(f"matrix of shape {matrix.shape} for {k} targets")
    n = state.num_qubits
    _check_targets(n, targets)
    psi = state.amps.reshape([2] * n)
    op = matrix.reshape([2] * (2 * k))
    psi = np.tensordot(op, psi, axes=(list(range(k, 2 * k)), targets))
    psi = np.moveaxis(psi, list(range(k)), targets)
    return StateVector._trusted(psi)


def apply_gate(state: StateVector, gate: GateSpec, targets) -> StateVector:
    targets = list(targets)
    if len(targets) != gate.arity:
        raise ArityMismatch(f"{gate.kind} acts on {gate.arity} qubit(s), got {len(targets)}")
    if gate.kind == "CZ":
        # diagonal; done in place on a copy so CZ(a,b) and CZ(b,a) agree bit for bit
        _check_targets(state.num_qubits, targets)
        psi = state.amps.reshape([2] * state.num_qubits).copy()
        idx = [slice(None)] * state.num_qubits
        idx[targets[0]] = 1
        idx[targets[1]] = 1
        psi[tuple(idx)] *= -1
        return StateVector._trusted(psi)
    return apply_matrix(state, gate.matrix(), targets)


def apply_cz(state: StateVector, a: int, b: int) -> StateVector:
    return apply_gate(state, GateSpec("CZ"), [a, b])


# ---------------------------------------------------------------------------
# measurement


def _project(state: StateVector, qubit: int, bra: np.ndarray):
    """Contract ``qubit`` with ``bra``; returns the unnormalized reduced array and its weight."""
    n = state.num_qubits
    _check_targets(n, [qubit])
    psi = state.amps.reshape([2] * n)
    reduced = np.tensordot(bra, psi, axes=([0], [qubit]))
    weight = float(np.vdot(reduced, reduced).real)
    return reduced, weight


def _measure(state, qubit, basis, rng, outcome, keep):
    branches = [_project(state, qubit, basis[b].conj()) for b in (0, 1)]
    if outcome is None:
        if rng is None:
            raise ValueError("either rng or a forced outcome is required")
        p0 = branches[0][1]
        outcome = 0 if rng.random() < p0 else 1
    elif outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome!r}")
    reduced, prob = branches[outcome]
    if prob < FORCED_BRANCH_TOL:
        raise ZeroProbabilityForcedBranch(f"outcome {outcome} on qubit {qubit} has probability {prob:.3g}")
    reduced = reduced / math.sqrt(prob)
    if keep:
        full = np.multiply.outer(basis[outcome], reduced)
        full = np.moveaxis(full, 0, qubit)
        post = StateVector._trusted(full)
    elif state.num_qubits == 1:
        post = None
    else:
        post = StateVector._trusted(reduced)
    return outcome, post, min(prob, 1.0)


def measure_planar(state: StateVector, qubit: int, angle, rng=None, outcome=None, keep=True):
    """Measure ``qubit`` in the ``|+-_angle>`` basis.

    Pass ``rng`` to sample or ``outcome`` to force a branch. With
    ``keep=False`` the measured qubit is removed from the returned state
    (``None`` when nothing is left).

    Returns ``(outcome, post_state, probability_of_outcome)``.
    """
    theta = angle.radians if isinstance(angle, Angle8) else float(angle)
    basis = (planar_vector(theta, 0), planar_vector(theta, 1))
    return _measure(state, qubit, basis, rng, outcome, keep)


_COMPUTATIONAL = (np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex))


def measure_computational(state: StateVector, qubit: int, rng=None, outcome=None, keep=True):
    """Measure ``qubit`` in the ``|0>, |1>`` basis; same contract as :func:`measure_planar`."""
    return _measure(state, qubit, _COMPUTATIONAL, rng, outcome, keep)


# ---------------------------------------------------------------------------
# density matrices and comparisons


class DensityMatrix:
    __slots__ = ("dim", "entries")

    def __init__(self, entries, check: bool = True, tol: float = 1e-12):
        arr = np.array(entries, dtype=complex)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimMismatch(f"density matrix must be square, got {arr.shape}")
        if check:
            if not np.allclose(arr, arr.conj().T, atol=tol, rtol=0):
                raise QSimError("density matrix is not Hermitian")
            if abs(np.trace(arr) - 1) > tol:
                raise QSimError(f"density matrix trace is {np.trace(arr).real}")
            if np.linalg.eigvalsh(arr).min() < -1e-10:
                raise QSimError("density matrix is not positive semidefinite")
        arr.setflags(write=False)
        self.dim = arr.shape[0]
        self.entries = arr

    @classmethod
    def maximally_mixed(cls, dim: int = 2) -> DensityMatrix:
        return cls(np.eye(dim) / dim)

    def __repr__(self) -> str:
        return f"DensityMatrix(dim={self.dim})"


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """``0.5 * ||a - b||_1``."""
    if a.dim != b.dim:
        raise DimMismatch(f"dims {a.dim} and {b.dim} differ")
    diff = a.entries - b.entries
    # difference of Hermitian matrices: singular values are |eigenvalues|
    return float(0.5 * np.abs(np.linalg.eigvalsh(diff)).sum())


def fidelity(a: StateVector, b: StateVector) -> float:
    return abs(a.inner(b)) ** 2


def equal_up_to_global_phase(a: StateVector, b: StateVector, tol: float = NORM_TOL) -> bool:
    return abs(a.inner(b)) >= 1 - tol


def matrices_equal_up_to_phase(u: np.ndarray, v: np.ndarray, tol: float = 1e-10) -> bool:
    """True when ``u = e^{i phi} v`` for some phase, entrywise within ``tol``."""
    if u.shape != v.shape:
        return False
    flat = np.argmax(np.abs(v))
    ref = v.flat[flat]
    if abs(ref) < tol:
        return np.allclose(u, v, atol=tol, rtol=0)
    phase = u.flat[flat] / ref
    if abs(abs(phase) - 1) > tol:
        return False
    return bool(np.allclose(u, phase * v, atol=tol, rtol=0))


def random_state(num_qubits: int, rng: np.random.Generator) -> StateVector:
    v = rng.normal(size=2**num_qubits) + 1j * rng.normal(size=2**num_qubits)
    return StateVector(v, normalize=True)
