import numpy as np
import pytest
from scipy.linalg import expm

from rpencounter.qcore import HilbertLayout, build_subspace_ops, expectation, lindblad_dissipator, purity
from rpencounter.spinham import (
    BetweenGenerator, SpinSystemSpec, UnitaryPropagator, build_hamiltonian, build_hamiltonian_matrix,
    electron_state, initial_state, make_nucleus, propagate_between, spin_matrices,
)

from conftest import isotropic_hamiltonian


def test_spin_half_matrices_are_pauli_halves():
    sx, sy, sz = spin_matrices(2)
    assert np.allclose(sx, [[0, 0.5], [0.5, 0]])
    assert np.allclose(sy, [[0, -0.5j], [0.5j, 0]])
    assert np.allclose(sz, np.diag([0.5, -0.5]))


def test_spin_one_sz():
    assert np.allclose(spin_matrices(3)[2], np.diag([1.0, 0.0, -1.0]))


@pytest.mark.parametrize("mult", [2, 3, 4])
def test_angular_momentum_commutator(mult):
    sx, sy, sz = spin_matrices(mult)
    assert np.max(np.abs(sx @ sy - sy @ sx - 1j * sz)) < 1e-14


def test_spin_matrices_reject_small_multiplicity():
    with pytest.raises(ValueError):
        spin_matrices(1)


def test_zeeman_ladder():
    w = 0.7
    spec = SpinSystemSpec(np.array([0, 0, w]))
    lay = spec.layout()
    h = build_hamiltonian_matrix(spec, lay)
    # diagonal in the S, T0, T+, T- order with energies 0, 0, +w, -w
    assert np.allclose(h[:4, :4], np.diag([0, 0, w, -w]))
    assert np.allclose(np.sort(np.linalg.eigvalsh(h[:4, :4])), [-w, 0, 0, w])
    assert not np.any(h[4])


def test_no_field_no_nuclei_is_zero():
    spec = SpinSystemSpec()
    assert not np.any(build_hamiltonian_matrix(spec, spec.layout()))


def test_one_nucleus_spectrum():
    a = 1.3
    _, lay, h = isotropic_hamiltonian(a)
    r_block = h[:8, :8]
    # a S1.I: F = 1 at a/4 (x3), F = 0 at -3a/4, doubled by electron 2
    expected = np.sort([a / 4] * 6 + [-3 * a / 4] * 2)
    assert np.allclose(np.linalg.eigvalsh(r_block), expected, atol=1e-12)
    assert not np.any(h[8:]) and not np.any(h[:, 8:])


def test_hamiltonian_hermitian_for_anisotropic_tensor(rng):
    t = rng.normal(size=(3, 3))
    spec = SpinSystemSpec(np.array([0.1, 0.2, 0.3]), (1.0, 1.02), (make_nucleus(2, 1.0, t + t.T),))
    h = build_hamiltonian_matrix(spec, spec.layout())
    assert np.max(np.abs(h - h.conj().T)) < 1e-12


def test_layout_mismatch_rejected():
    spec = SpinSystemSpec(nuclei=(make_nucleus(1, 0.5, 1.0),))
    with pytest.raises(ValueError):
        build_hamiltonian_matrix(spec, HilbertLayout((3,)))


def test_nucleus_validation_and_isotropy():
    assert make_nucleus(1, 0.5, 2.0).isotropic
    assert not make_nucleus(1, 0.5, np.diag([1.0, 1.0, 2.0])).isotropic
    with pytest.raises(ValueError):
        make_nucleus(3, 0.5, 1.0)
    with pytest.raises(ValueError):
        make_nucleus(1, 0.3, 1.0)
    with pytest.raises(ValueError):
        make_nucleus(1, 0.5, np.eye(2))


def test_initial_state_examples():
    lay0 = HilbertLayout()
    rho = initial_state(lay0)
    assert purity(rho) == pytest.approx(1.0)
    lay = HilbertLayout((2,))
    ops = build_subspace_ops(lay)
    rho = initial_state(lay)
    assert np.trace(rho).real == pytest.approx(1.0)
    assert purity(rho) == pytest.approx(0.5)
    assert expectation(rho, ops.q_s) == pytest.approx(1.0)
    assert expectation(rho, ops.q_t) == pytest.approx(0.0)
    assert expectation(rho, ops.q_p) == pytest.approx(0.0)


def test_propagation_identity_for_zero_hamiltonian(one_nucleus, rng):
    lay, ops = one_nucleus
    rho = initial_state(lay)
    assert np.allclose(propagate_between(rho, BetweenGenerator(np.zeros((10, 10))), 3.0), rho)


def test_zeeman_keeps_singlet():
    spec = SpinSystemSpec(np.array([0.3, -0.2, 1.1]), nuclei=())
    lay = spec.layout()
    gen = build_hamiltonian(spec, lay)
    ops = build_subspace_ops(lay)
    assert np.max(np.abs(gen.hamiltonian @ ops.q_s - ops.q_s @ gen.hamiltonian)) < 1e-15
    rho = initial_state(lay)
    for t in (0.5, 3.0, 10.0):
        assert expectation(propagate_between(rho, gen, t), ops.q_s) == pytest.approx(1.0, abs=1e-12)


def test_singlet_population_matches_expm_oracle():
    a = 1.0
    _, lay, h = isotropic_hamiltonian(a)
    ops = build_subspace_ops(lay)
    rho = initial_state(lay)
    gen = BetweenGenerator(h)
    series = UnitaryPropagator(h).expectation_series(rho, ops.q_s)
    for t in (0.0, 1.0 / a, 2.0 / a):
        u = expm(-1j * h * t)
        oracle = np.real(np.trace(ops.q_s @ u @ rho @ u.conj().T))
        assert abs(expectation(propagate_between(rho, gen, t), ops.q_s) - oracle) < 1e-10
        assert abs(series(t) - oracle) < 1e-10
    # hyperfine drives singlet-triplet interconversion
    assert expectation(propagate_between(rho, gen, 1.5), ops.q_t) > 0.1


def test_recurrence_period_from_spectrum():
    a = 0.8
    _, lay, h = isotropic_hamiltonian(a)
    ops = build_subspace_ops(lay)
    e = np.unique(np.round(np.linalg.eigvalsh(h[:8, :8]), 12))
    period = 2 * np.pi / (e.max() - e.min())   # single Bohr frequency a
    rho = initial_state(lay)
    assert expectation(propagate_between(rho, BetweenGenerator(h), period), ops.q_s) == pytest.approx(1.0, abs=1e-6)


def test_unitarity_preserves_purity():
    _, lay, h = isotropic_hamiltonian(1.0, (0.2, 0, 0.5))
    psi = lay.pure_state({"S": 1, "T+": 0.5j}, nuclear_state=np.diag([1.0, 0.0]))
    out = propagate_between(psi, BetweenGenerator(h), 7.3)
    assert purity(out) == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(np.linalg.eigvalsh(out), np.linalg.eigvalsh(psi), atol=1e-10)


def test_dissipative_propagation_uses_liouvillian(bare):
    lay, ops = bare
    gen = BetweenGenerator(np.zeros((5, 5)), lindblad_dissipator(ops.l["S"]))
    out = propagate_between(lay.pure_state({"S": 1}), gen, 2.0)
    assert expectation(out, ops.q_s) == pytest.approx(np.exp(-2.0))
    with pytest.raises(ValueError):
        propagate_between(out, gen, -1.0)


def test_electron_state_bases(one_nucleus):
    lay, _ = one_nucleus
    rho = initial_state(lay)
    st = electron_state(rho, lay, "st")
    assert np.allclose(st, np.diag([1, 0, 0, 0]))
    prod = electron_state(rho, lay)
    s = np.array([0, 1, -1, 0]) / np.sqrt(2)
    assert np.allclose(prod, np.outer(s, s))
