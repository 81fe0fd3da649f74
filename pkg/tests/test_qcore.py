import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from dlca.qcore import (
    ALL_STATES,
    IDENTITY,
    PAULIS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    Basis,
    DensityMatrix2,
    Operator2,
    PureState,
    StateError,
    anticommutator_like_superop,
    born_probability,
    commutator,
    dissipator,
    dissipator_superop,
    eigvalsh2,
    expectation,
    feedback_operator,
    hamiltonian_for,
    hamiltonian_superop,
    innovation,
    lindblad_superop,
    measurement_operator,
    pauli_transfer,
    project,
)

unit = st.floats(-1, 1)
angles = st.floats(0, 2 * math.pi)


@st.composite
def states(draw):
    v = np.array([draw(unit), draw(unit), draw(unit)])
    n = np.linalg.norm(v)
    if n > 1:
        v = v / n
    return DensityMatrix2.from_bloch(v).matrix


@st.composite
def operators(draw):
    return np.array([[complex(draw(unit), draw(unit)) for _ in range(2)] for _ in range(2)])


def test_pauli_algebra():
    assert (SIGMA_X @ SIGMA_Y).allclose(1j * SIGMA_Z.matrix)
    for p in PAULIS:
        assert p.is_hermitian()
        assert (p @ p).allclose(IDENTITY)
    assert np.allclose(commutator(SIGMA_X, SIGMA_Z), -2j * SIGMA_Y.matrix)


def test_operator_is_immutable():
    with pytest.raises(ValueError):
        SIGMA_X.matrix[0, 0] = 3


def test_operator_rejects_nan():
    with pytest.raises(ValueError):
        Operator2([[np.nan, 0], [0, 1]])


@pytest.mark.parametrize("m, msg", [
    ([[1, 1], [0, 0]], "Hermitian"),
    ([[0.7, 0], [0, 0.7]], "trace"),
    ([[1.2, 0], [0, -0.2]], "negative"),
])
def test_density_validation(m, msg):
    with pytest.raises(StateError, match=msg):
        DensityMatrix2(m)


def test_state_kets_and_bits():
    assert [s.index for s in ALL_STATES] == [0, 1, 2, 3]
    assert [s.bit for s in ALL_STATES] == [0, 1, 0, 1]
    assert PureState.PLUS.basis is Basis.PAULI_X
    for s in ALL_STATES:
        assert abs(s.density.fidelity_with(s.ket) - 1) < 1e-15
        assert PureState.from_index(s.index) is s


def test_bloch_round_trip():
    r = np.array([0.3, -0.2, 0.5])
    assert np.allclose(DensityMatrix2.from_bloch(r).bloch, r)
    assert np.allclose(PureState.PLUS.density.bloch, [1, 0, 0])


@given(states(), operators())
def test_dissipator_and_innovation_are_traceless(rho, o):
    assert abs(np.trace(dissipator(o, rho))) < 1e-12
    assert abs(np.trace(innovation(o, rho))) < 1e-12


@given(states(), angles)
def test_innovation_is_hermitian_for_hermitian_operator(rho, th):
    h = innovation(measurement_operator(th), rho)
    assert np.max(np.abs(h - h.conj().T)) < 1e-12


@given(angles)
def test_innovation_vanishes_on_eigenstates(th):
    e = measurement_operator(th).matrix
    for v in np.linalg.eigh(e)[1].T:
        assert np.max(np.abs(innovation(e, np.outer(v, v.conj())))) < 1e-12


def test_sigma_x_dissipator_fixes_dark_states():
    for s in (PureState.PLUS, PureState.MINUS):
        assert np.max(np.abs(dissipator(SIGMA_X, s.density))) < 1e-15
    # and flips |0>
    assert np.allclose(dissipator(SIGMA_X, PureState.ZERO.density), SIGMA_Z.matrix * -1)


@given(angles)
def test_measurement_operator_is_a_reflection(th):
    e = measurement_operator(th)
    assert e.is_hermitian()
    assert (e @ e).allclose(IDENTITY)
    assert feedback_operator(th) == e


def test_measurement_operator_special_angles():
    assert measurement_operator(0).allclose(SIGMA_X)
    assert measurement_operator(math.pi / 2).allclose(SIGMA_Z)


def test_hamiltonian_depends_on_basis():
    assert hamiltonian_for(PureState.ONE, 2.0).allclose(2 * SIGMA_Z.matrix)
    assert hamiltonian_for(PureState.MINUS, 2.0).allclose(2 * SIGMA_X.matrix)


def test_born_and_projection():
    rho = PureState.ZERO.density
    assert born_probability(rho, Basis.PAULI_Z) == 1.0
    assert abs(born_probability(rho, Basis.PAULI_X) - 0.5) < 1e-15
    assert project(rho, Basis.PAULI_X, 0.49)[0] == 0
    out, post = project(rho, Basis.PAULI_X, 0.51)
    assert out == 1 and post == PureState.MINUS.density


def test_expectation_and_eigenvalues():
    rho = DensityMatrix2.from_bloch([0, 0, 0.4])
    assert abs(expectation(SIGMA_Z, rho) - 0.4) < 1e-15
    assert np.allclose(eigvalsh2(rho.matrix), [0.3, 0.7])


@given(states(), operators(), operators())
def test_superoperator_matrices_match_direct_action(rho, o, h):
    h = h + h.conj().T
    v = rho.reshape(4)
    assert np.allclose((dissipator_superop(o) @ v).reshape(2, 2), dissipator(o, rho), atol=1e-12)
    assert np.allclose((hamiltonian_superop(h) @ v).reshape(2, 2), -1j * commutator(h, rho), atol=1e-12)
    assert np.allclose((anticommutator_like_superop(o) @ v).reshape(2, 2), o @ rho + rho @ o.conj().T,
                       atol=1e-12)


def test_lindblad_superop_against_column_stacked_oracle():
    H = 0.7 * SIGMA_Z.matrix + 0.2 * SIGMA_X.matrix
    e = measurement_operator(1.1).matrix
    L = lindblad_superop(H, [(1.0, SIGMA_X), (0.5, e)])
    Lo = oracles.liouvillian(H, [(1.0, oracles.X), (0.5, e)])
    rho = DensityMatrix2.from_bloch([0.1, 0.2, 0.3]).matrix
    assert np.allclose((L @ rho.reshape(4)).reshape(2, 2), (Lo @ rho.reshape(-1, order="F")).reshape(2, 2, order="F"))


def test_pauli_transfer_of_bit_flip_channel():
    R = pauli_transfer(dissipator_superop(SIGMA_X))
    assert np.allclose(R, np.diag([0, 0, -2, -2]))


def test_pauli_transfer_rejects_non_hermiticity_preserving():
    with pytest.raises(ValueError):
        pauli_transfer(1j * np.eye(4))
