"""Single-qubit operator algebra, states and superoperators.

Everything here works on dense 2x2 complex matrices.  The vectorised
engines in :mod:`dlca.dynamics` use the Pauli-transfer form produced by
:func:`pauli_transfer`, which turns any Hermiticity-preserving
superoperator into a real 4x4 matrix acting on ``(Tr rho, <X>, <Y>, <Z>)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-6


class StateError(ValueError):
    """A matrix violates the density-matrix invariants."""


def _frozen(a) -> np.ndarray:
    m = np.array(a, dtype=complex).reshape(2, 2)
    if not np.all(np.isfinite(m)):
        raise ValueError("operator entries must be finite")
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class Operator2:
    """Immutable 2x2 complex operator with an optional reporting label."""

    matrix: np.ndarray
    label: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix))

    @property
    def dag(self) -> "Operator2":
        return Operator2(self.matrix.conj().T)

    def __add__(self, other):
        return Operator2(self.matrix + as_matrix(other))

    def __sub__(self, other):
        return Operator2(self.matrix - as_matrix(other))

    def __mul__(self, scalar):
        return Operator2(self.matrix * scalar)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return Operator2(self.matrix @ as_matrix(other))

    def __neg__(self):
        return Operator2(-self.matrix)

    def __eq__(self, other):
        if not isinstance(other, Operator2):
            return NotImplemented
        return bool(np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash(self.matrix.tobytes())

    def allclose(self, other, atol=1e-12) -> bool:
        return bool(np.allclose(self.matrix, as_matrix(other), rtol=0, atol=atol))

    def is_hermitian(self, atol=HERMITIAN_TOL) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T)) < atol)


IDENTITY = Operator2(np.eye(2), "identity")
SIGMA_X = Operator2([[0, 1], [1, 0]], "sigma_x")
SIGMA_Y = Operator2([[0, -1j], [1j, 0]], "sigma_y")
SIGMA_Z = Operator2([[1, 0], [0, -1]], "sigma_z")
ZERO_OPERATOR = Operator2(np.zeros((2, 2)), "zero")
PAULIS = (IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z)


def as_matrix(o) -> np.ndarray:
    if isinstance(o, (Operator2, DensityMatrix2)):
        return o.matrix
    return np.asarray(o, dtype=complex)


def eigvalsh2(m: np.ndarray) -> tuple[float, float]:
    """Eigenvalues (ascending) of a 2x2 Hermitian matrix, closed form."""
    a = m[0, 0].real
    d = m[1, 1].real
    b = m[0, 1]
    mean = 0.5 * (a + d)
    rad = math.sqrt(0.25 * (a - d) ** 2 + abs(b) ** 2)
    return mean - rad, mean + rad


@dataclass(frozen=True)
class DensityMatrix2:
    """Validated single-qubit density matrix.

    Construction checks Hermiticity, unit trace and positivity (minimum
    eigenvalue above ``-POSITIVITY_TOL``) and raises :class:`StateError`
    otherwise.  Pass ``check=False`` only for intermediate values.
    """

    matrix: np.ndarray
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        m = _frozen(self.matrix)
        object.__setattr__(self, "matrix", m)
        if self.check:
            herm = np.max(np.abs(m - m.conj().T))
            if herm >= HERMITIAN_TOL:
                raise StateError(f"not Hermitian (max |rho - rho^dag| = {herm:.3e})")
            tr = np.trace(m)
            if abs(tr - 1) >= TRACE_TOL:
                raise StateError(f"trace {tr:.12g} differs from 1")
            lo = eigvalsh2(m)[0]
            if lo < -POSITIVITY_TOL:
                raise StateError(f"negative eigenvalue {lo:.3e}")

    @classmethod
    def from_ket(cls, ket) -> "DensityMatrix2":
        v = np.asarray(ket, dtype=complex).reshape(2)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def from_bloch(cls, r, check=True) -> "DensityMatrix2":
        x, y, z = (float(c) for c in r)
        return cls(0.5 * np.array([[1 + z, x - 1j * y], [x + 1j * y, 1 - z]]), check=check)

    @classmethod
    def maximally_mixed(cls) -> "DensityMatrix2":
        return cls(0.5 * np.eye(2))

    @property
    def bloch(self) -> np.ndarray:
        m = self.matrix
        return np.array([2 * m[0, 1].real, -2 * m[0, 1].imag, (m[0, 0] - m[1, 1]).real])

    @property
    def eigenvalues(self) -> tuple[float, float]:
        return eigvalsh2(self.matrix)

    def element(self, i: int, j: int) -> complex:
        return complex(self.matrix[i, j])

    def fidelity_with(self, ket) -> float:
        v = np.asarray(ket, dtype=complex)
        return float((v.conj() @ self.matrix @ v).real)

    def __eq__(self, other):
        if not isinstance(other, DensityMatrix2):
            return NotImplemented
        return bool(np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash(self.matrix.tobytes())


class Basis(enum.Enum):
    PAULI_Z = "PauliZ"
    PAULI_X = "PauliX"

    @property
    def eigenvectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvectors for outcome 0 and outcome 1."""
        if self is Basis.PAULI_Z:
            return PureState.ZERO.ket, PureState.ONE.ket
        return PureState.PLUS.ket, PureState.MINUS.ket

    def state_for(self, outcome: int) -> "PureState":
        return _BASIS_STATES[self][outcome]


_S = 1 / math.sqrt(2)
_KETS = {
    "Zero": np.array([1, 0], dtype=complex),
    "One": np.array([0, 1], dtype=complex),
    "Plus": np.array([_S, _S], dtype=complex),
    "Minus": np.array([_S, -_S], dtype=complex),
}


class PureState(enum.Enum):
    """The four BB84 states; ``index`` is the classifier label."""

    ZERO = "Zero"
    ONE = "One"
    PLUS = "Plus"
    MINUS = "Minus"

    @property
    def ket(self) -> np.ndarray:
        return _KETS[self.value].copy()

    @property
    def index(self) -> int:
        return _ORDER.index(self)

    @classmethod
    def from_index(cls, i: int) -> "PureState":
        return _ORDER[int(i)]

    @property
    def basis(self) -> Basis:
        return Basis.PAULI_Z if self in (PureState.ZERO, PureState.ONE) else Basis.PAULI_X

    @property
    def bit(self) -> int:
        return 0 if self in (PureState.ZERO, PureState.PLUS) else 1

    @property
    def density(self) -> DensityMatrix2:
        return DensityMatrix2.from_ket(self.ket)


_ORDER = (PureState.ZERO, PureState.ONE, PureState.PLUS, PureState.MINUS)
_BASIS_STATES = {
    Basis.PAULI_Z: (PureState.ZERO, PureState.ONE),
    Basis.PAULI_X: (PureState.PLUS, PureState.MINUS),
}
ALL_STATES = _ORDER


# -- superoperators acting on matrices ------------------------------------

def dissipator(o, rho) -> np.ndarray:
    """Lindblad dissipator ``D[o]rho = o rho o^dag - (o^dag o rho + rho o^dag o)/2``."""
    o = as_matrix(o)
    r = as_matrix(rho)
    od = o.conj().T
    odo = od @ o
    return o @ r @ od - 0.5 * (odo @ r + r @ odo)


def innovation(o, rho) -> np.ndarray:
    """Measurement back-action ``H[o]rho = o rho + rho o^dag - Tr[o rho + rho o^dag] rho``."""
    o = as_matrix(o)
    r = as_matrix(rho)
    lin = o @ r + r @ o.conj().T
    return lin - np.trace(lin) * r


def commutator(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    return a @ b - b @ a


def expectation(o, rho) -> complex:
    return complex(np.trace(as_matrix(o) @ as_matrix(rho)))


def measurement_operator(theta: float) -> Operator2:
    """Eavesdropper's homodyne operator ``cos(theta) X + sin(theta) Z``."""
    return Operator2(math.cos(theta) * SIGMA_X.matrix + math.sin(theta) * SIGMA_Z.matrix,
                     f"e(theta={theta:.6g})")


def feedback_operator(phi: float) -> Operator2:
    """Feedback operator ``cos(phi) X + sin(phi) Z``."""
    return Operator2(math.cos(phi) * SIGMA_X.matrix + math.sin(phi) * SIGMA_Z.matrix,
                     f"f(phi={phi:.6g})")


def hamiltonian_for(initial: PureState, omega: float) -> Operator2:
    """Channel Hamiltonian; it depends on the basis Alice encoded in."""
    if initial.basis is Basis.PAULI_Z:
        return Operator2(omega * SIGMA_Z.matrix, "omega*sigma_z")
    return Operator2(omega * SIGMA_X.matrix, "omega*sigma_x")


def born_probability(rho, basis: Basis) -> float:
    """Probability of outcome 0 when measuring ``rho`` in ``basis``."""
    b0 = basis.eigenvectors[0]
    p = float((b0.conj() @ as_matrix(rho) @ b0).real)
    return min(1.0, max(0.0, p))


def project(rho, basis: Basis, u: float) -> tuple[int, DensityMatrix2]:
    """Born-rule projective measurement driven by a uniform draw ``u``."""
    outcome = 0 if u < born_probability(rho, basis) else 1
    return outcome, basis.state_for(outcome).density


# -- superoperator matrices -------------------------------------------------
# vec(rho) is row-major: vec(A rho B) = kron(A, B.T) vec(rho).

_I2 = np.eye(2)


def hamiltonian_superop(H) -> np.ndarray:
    h = as_matrix(H)
    return -1j * (np.kron(h, _I2) - np.kron(_I2, h.T))


def dissipator_superop(o) -> np.ndarray:
    o = as_matrix(o)
    odo = o.conj().T @ o
    return np.kron(o, o.conj()) - 0.5 * (np.kron(odo, _I2) + np.kron(_I2, odo.T))


def lindblad_superop(H, jumps) -> np.ndarray:
    """Generator of ``-i[H, .] + sum_k rate_k D[L_k]``."""
    L = hamiltonian_superop(H)
    for rate, op in jumps:
        if rate:
            L = L + rate * dissipator_superop(op)
    return L


def anticommutator_like_superop(o) -> np.ndarray:
    """Linear part of the innovation, ``rho -> o rho + rho o^dag``."""
    o = as_matrix(o)
    return np.kron(o, _I2) + np.kron(_I2, o.conj())


def pauli_transfer(superop: np.ndarray) -> np.ndarray:
    """Real 4x4 Pauli-transfer matrix ``R_ij = Tr[s_i S(s_j)] / 2``.

    Raises if ``superop`` does not preserve Hermiticity.
    """
    R = np.empty((4, 4), dtype=complex)
    for j, sj in enumerate(PAULIS):
        out = (superop @ sj.matrix.reshape(4)).reshape(2, 2)
        for i, si in enumerate(PAULIS):
            R[i, j] = 0.5 * np.trace(si.matrix @ out)
    if np.max(np.abs(R.imag)) > 1e-12:
        raise ValueError("superoperator does not preserve Hermiticity")
    return R.real.copy()
