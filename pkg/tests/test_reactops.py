import numpy as np
import pytest

from rpencounter.qcore import (
    LABELS, build_subspace_ops, commutator_map, integrate_rk4, lindblad_dissipator, normalize,
    purity, random_density_matrix, random_inicon_state, trace_distance, validate_inicon,
)
from rpencounter.reactops import (
    KominisGenerator, ReactionRates, closed_form_full, closed_form_r, coherence_visibility,
    conditional_r_equation, generator_full, generator_r_subspace, integrate_generator, mean_decay,
    nonhermitian_propagate, simplified_generator, simplified_generator_r, solve_r_subspace,
    solve_simplified, solve_symmetric_rates,
)

from conftest import isotropic_hamiltonian


def random_rates(rng, mode="general"):
    if mode == "general":
        return ReactionRates({j: rng.uniform(0, 2) for j in LABELS}, {j: rng.uniform(0, 1) for j in LABELS})
    d_t = 0.0 if mode == "triplet_symmetric_no_t_dephasing" else rng.uniform(0, 1)
    return ReactionRates({"S": rng.uniform(0, 2), "T": rng.uniform(0, 2)},
                         {"S": rng.uniform(0, 1), "T": d_t}, mode)


def test_rate_validation():
    with pytest.raises(ValueError):
        ReactionRates({"S": -1.0})
    with pytest.raises(ValueError):
        ReactionRates({"S": 1.0, "T0": 1.0, "T+": 2.0}, mode="triplet_symmetric")
    with pytest.raises(ValueError):
        ReactionRates({"S": 1.0}, {"T": 0.5}, mode="triplet_symmetric_no_t_dephasing")
    with pytest.raises(ValueError):
        ReactionRates({"X": 1.0})
    r = ReactionRates.symmetric(1.0, 0.5)
    assert r.mode == "triplet_symmetric_no_t_dephasing" and r.r["T-"] == 0.5


def test_derived_coefficients():
    rates = ReactionRates.symmetric(1.0, 0.4, 0.3, 0.1)
    c = rates.coeffs()
    assert c.eta == pytest.approx((1.0 + 0.4) / 2 + (0.3 + 0.1) / 2)
    assert c.gamma["S"] == pytest.approx(1.3)
    assert 0 <= c.p["S"] <= 1 and c.p["S"] == pytest.approx(0.3 / 1.3)
    assert c.eta_jk[("T0", "T0")] == pytest.approx(c.gamma["T"])
    assert c.eta_j["S"] == pytest.approx(1.0 / c.eta)


def test_zero_rates_zero_map(bare, rng):
    _, ops = bare
    gen = generator_full(ReactionRates({}), ops)
    assert np.allclose(gen.dense().matrix, 0)


def test_generator_trace_free(one_nucleus, rng):
    _, ops = one_nucleus
    for mode in ("general", "triplet_symmetric", "triplet_symmetric_no_t_dephasing"):
        gen = generator_full(random_rates(rng, mode), ops)
        for _ in range(100 // 3 + 1):
            rho = random_density_matrix(10, rng)
            assert abs(np.trace(gen(rho))) < 1e-12


def test_equal_rates_steady_state_is_product(bare, rng):
    layout, ops = bare
    gen = generator_full(ReactionRates({"S": 0.7, "T": 0.7}), ops)
    p_state = layout.pure_state({"P": 1})
    assert np.allclose(gen(p_state), 0)
    rho = random_inicon_state(ops, rng)
    late = closed_form_full(rho, ReactionRates({"S": 0.7, "T": 0.7}), ops, 80.0)
    assert np.allclose(late, np.trace(rho).real * p_state, atol=1e-12)
    sym = solve_symmetric_rates(rho, 0.7, 0.0, ops, 2.0)
    assert np.allclose(sym, closed_form_full(rho, ReactionRates({"S": 0.7, "T": 0.7}), ops, 2.0))


def test_singlet_solution_independent_of_dephasing(bare):
    layout, ops = bare
    s = layout.pure_state({"S": 1})
    t = 1.3
    expected = np.exp(-0.8 * t) * s + (1 - np.exp(-0.8 * t)) * layout.pure_state({"P": 1})
    for d in (0.0, 0.5, 3.0):
        assert np.allclose(closed_form_full(s, ReactionRates({"S": 0.8, "T": 0.2}, {"S": d}), ops, t), expected)


@pytest.mark.parametrize("mode", ["general", "triplet_symmetric", "triplet_symmetric_no_t_dephasing"])
def test_coherent_input_matches_rk4(one_nucleus, rng, mode):
    layout, ops = one_nucleus
    rates = random_rates(rng, mode)
    rho0 = layout.pure_state({"S": 1, "T0": 1})
    times = np.array([0.1, 1.0, 5.0]) / rates.max_rate()
    num = integrate_generator(generator_full(rates, ops), rho0, np.concatenate([[0], times]))[1:]
    for t, x in zip(times, num):
        assert np.max(np.abs(closed_form_full(rho0, rates, ops, t) - x)) < 1e-8


def test_triplet_coherences_decay_with_qcoh(bare):
    layout, ops = bare
    rates = ReactionRates({"S": 0.0, "T": 0.3}, {"T": 0.5}, "triplet_symmetric")
    rho0 = layout.pure_state({"T0": 1, "T+": 1})
    t = 2.0
    out = closed_form_full(rho0, rates, ops, t)
    assert out[1, 2] == pytest.approx(0.5 * np.exp(-(0.3 + 0.5) * t))
    num = integrate_generator(generator_full(rates, ops), rho0, [0, t])[-1]
    assert np.max(np.abs(out - num)) < 1e-8


def test_simplified_depends_on_dephasing_sum(one_nucleus, rng):
    _, ops = one_nucleus
    rho0 = random_inicon_state(ops, rng)
    a = solve_simplified(rho0, 0.6, 0.2, 0.3, 0.5, ops, 1.7)
    b = solve_simplified(rho0, 0.6, 0.2, 0.8, 0.0, ops, 1.7)
    assert np.allclose(a, b, atol=1e-14)
    num = integrate_generator(simplified_generator(0.6, 0.2, 0.3, 0.5, ops), rho0, [0, 1.7])[-1]
    assert np.max(np.abs(a - num)) < 1e-8


def test_inicon_violation_rejected(bare):
    layout, ops = bare
    rho = layout.pure_state({"S": 1, "P": 1})
    with pytest.raises(ValueError):
        closed_form_full(rho, ReactionRates({"S": 1.0}), ops, 1.0)


def test_generators_preserve_inicon(one_nucleus, rng):
    _, ops = one_nucleus
    for mode in ("general", "triplet_symmetric"):
        rates = random_rates(rng, mode)
        rho0 = random_inicon_state(ops, rng)
        for t in (0.3, 2.0):
            assert validate_inicon(closed_form_full(rho0, rates, ops, t), ops)


def test_pure_decay_r_subspace(bare, rng):
    layout, ops = bare
    rates = ReactionRates.symmetric(0.9, 0.3)
    rho0 = layout.pure_state({"S": 0.6, "T0": 0.8})
    t = 1.1
    u = np.exp(-0.9 * t / 2) * ops.q_s + np.exp(-0.3 * t / 2) * ops.q_t
    assert np.allclose(closed_form_r(rho0, rates, ops, t), u @ rho0 @ u.conj().T)
    assert np.allclose(solve_r_subspace(rho0, 0.9, 0.3, 0, 0, ops, t), u @ rho0 @ u.conj().T)


def test_pure_dephasing_keeps_pair_trace(bare):
    layout, ops = bare
    rho0 = layout.pure_state({"S": 1, "T0": 1})
    gen = generator_r_subspace(ReactionRates({}, {"S": 0.5, "T": 0.5}, "triplet_symmetric"), ops)
    out = integrate_generator(gen, rho0, [0, 1, 4])
    assert np.allclose(np.real(np.einsum("tii->t", out)), 1.0, atol=1e-12)


def test_balanced_case_splits(bare, rng):
    _, ops = bare
    r_s, r_t = 0.4, 0.7
    both = simplified_generator_r(r_s, r_t, r_s, r_t, ops).dense().matrix
    decay = simplified_generator_r(r_s, r_t, 0, 0, ops).dense().matrix
    deph = (r_s * lindblad_dissipator(ops.q_s) + r_t * lindblad_dissipator(ops.q_t)).dense().matrix
    assert np.allclose(both, decay + deph)


def test_r_subspace_generator_matches_closed_form(one_nucleus, rng):
    _, ops = one_nucleus
    rho0 = ops.q_r @ random_inicon_state(ops, rng) @ ops.q_r
    for _ in range(3):
        r_s, r_t, d_s, d_t = rng.uniform(0, 1, 4)
        num = integrate_generator(simplified_generator_r(r_s, r_t, d_s, d_t, ops), rho0, [0, 2.5])[-1]
        assert np.max(np.abs(num - solve_r_subspace(rho0, r_s, r_t, d_s, d_t, ops, 2.5))) < 1e-8


def test_nonhermitian_propagation(bare):
    layout, ops = bare
    psi0 = np.array([0.6, 0.8j, 0, 0, 0])
    rates = ReactionRates({"S": 0.5, "T": 0.5})
    psi, n2 = nonhermitian_propagate(psi0, rates, np.zeros((5, 5)), ops, 2.0)
    assert np.allclose(psi, np.exp(-0.5 * 2.0 / 2) * psi0)
    psi, n2 = nonhermitian_propagate(psi0, ReactionRates({}), np.zeros((5, 5)), ops, 2.0)
    assert n2 == pytest.approx(1.0)
    rates = ReactionRates.symmetric(1.2, 0.3)
    psi, n2 = nonhermitian_propagate(psi0, rates, np.zeros((5, 5)), ops, 1.4)
    rho = closed_form_r(np.outer(psi0, psi0.conj()), rates, ops, 1.4)
    assert abs(n2 - np.trace(rho).real) < 1e-8
    with pytest.raises(ValueError):
        nonhermitian_propagate(psi0, ReactionRates({"S": 1}, {"S": 1}), np.zeros((5, 5)), ops, 1.0)


def test_nonhermitian_norm_matches_trace_with_hamiltonian():
    _, layout, h = isotropic_hamiltonian(1.0, (0, 0, 0.4))
    ops = build_subspace_ops(layout)
    rates = ReactionRates.symmetric(0.8, 0.1)
    psi0 = np.zeros(10, dtype=complex)
    psi0[0] = 1.0   # |S> with nuclear spin up
    t = 2.2
    _, n2 = nonhermitian_propagate(psi0, rates, h, ops, t)
    rho = integrate_generator(generator_r_subspace(rates, ops), np.outer(psi0, psi0), [0, t], hamiltonian=h)[-1]
    assert abs(n2 - np.trace(rho).real) < 1e-8


def test_haberkorn_purity_under_pure_decay():
    _, layout, h = isotropic_hamiltonian(1.0)
    ops = build_subspace_ops(layout)
    psi = np.zeros(10, dtype=complex)
    psi[0] = 1.0
    rho0 = np.outer(psi, psi)
    from scipy.linalg import expm
    lv = (generator_r_subspace(ReactionRates.symmetric(0.7, 0.2), ops) + commutator_map(h)).dense().matrix
    for t in np.linspace(0, 5, 6):
        rho = (expm(lv * t) @ rho0.reshape(-1)).reshape(10, 10)
        assert purity(normalize(rho)[0]) == pytest.approx(1.0, abs=1e-10)


def test_dephasing_interchange_on_inicon_states(one_nucleus, rng):
    _, ops = one_nucleus
    ds, dt = lindblad_dissipator(ops.q_s), lindblad_dissipator(ops.q_t)
    for _ in range(20):
        rho = random_inicon_state(ops, rng)
        assert np.allclose(ds(rho), dt(rho), atol=1e-15)


def test_kominis_visibility_examples(bare):
    layout, ops = bare
    mix = layout.mixed_state({"S": 0.5, "T0": 0.5})
    assert coherence_visibility(mix, ops) == (0.0, False)
    coh = layout.pure_state({"S": 1, "T0": 1})
    pc, deg = coherence_visibility(coh, ops)
    assert pc == pytest.approx(1.0) and not deg
    assert coherence_visibility(layout.pure_state({"S": 1}), ops) == (0.0, True)


def test_kominis_is_nonlinear(bare, rng):
    layout, ops = bare
    kom = KominisGenerator({"S": 1.0, "T": 0.3}, ops)
    a, b = 0.5, 0.5
    r1 = layout.pure_state({"S": 1, "T0": 1})
    r2 = layout.mixed_state({"S": 0.2, "T0": 0.8})
    diff = kom(a * r1 + b * r2) - (a * kom(r1) + b * kom(r2))
    assert np.max(np.abs(diff)) > 1e-3


def test_kominis_integration_truncates(bare):
    layout, ops = bare
    kom = KominisGenerator({"S": 2.0, "T": 2.0}, ops)
    times = np.linspace(0, 30, 31)
    reached, states, truncated = kom.integrate(layout.mixed_state({"S": 0.5, "T0": 0.5}), times)
    assert truncated and len(reached) < len(times) and len(states) == len(reached)


def test_conditional_pair_equation(bare):
    layout, ops = bare
    rates = ReactionRates.symmetric(0.9, 0.2)
    zero_h = np.zeros((5, 5))
    rhs = conditional_r_equation(rates, zero_h, ops)
    s = layout.pure_state({"S": 1})
    assert mean_decay(rates, s, ops) == pytest.approx(-0.9)
    assert np.allclose(rhs(0, s), 0)
    rho0 = layout.mixed_state({"S": 0.3, "T0": 0.7})
    times = np.linspace(0, 4, 21)
    num = integrate_rk4(rhs, rho0, times, 1e-3)
    for t, x in zip(times, num):
        exact = normalize(solve_r_subspace(rho0, 0.9, 0.2, 0, 0, ops, t))[0]
        assert trace_distance(exact, x) < 1e-8
    with pytest.raises(ValueError):
        conditional_r_equation(ReactionRates({"S": 1}), zero_h, ops)


def test_conditional_equal_rates_reduce_to_unitary():
    _, layout, h = isotropic_hamiltonian(1.0)
    ops = build_subspace_ops(layout)
    rhs = conditional_r_equation(ReactionRates.symmetric(0.6, 0.6), h, ops)
    rho0 = layout.pure_state({"S": 1})
    rho = integrate_rk4(rhs, rho0, [0, 2.0], 1e-3)[-1]
    from scipy.linalg import expm
    u = expm(-2j * h)
    assert np.max(np.abs(rho - u @ rho0 @ u.conj().T)) < 1e-8
