import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import expm

from rpencounter.encounter import EncounterCoupling, build_encounter
from rpencounter.spinham import (
    BetweenGenerator, SpinSystemSpec, build_hamiltonian_matrix, electron_state, make_nucleus,
)
from rpencounter.stochastic import RateModel, TrajectorySimulator, trajectory_rng
from rpencounter.yields import (
    YieldSpec, adaptive_simpson, concurrence, entanglement_lifetime, magnetic_sensitivity,
    singlet_probability, yield_integral,
)

from conftest import isotropic_hamiltonian

SINGLET = np.array([0, 1, -1, 0]) / np.sqrt(2)
CONCURRENCE_YIELD_R1_A1 = 0.6649362915828245


def test_adaptive_simpson():
    assert adaptive_simpson(np.sin, 0, np.pi) == pytest.approx(2.0, rel=1e-10)
    assert adaptive_simpson(lambda x: np.cos(40 * x) ** 2, 0, 3, panels=64) == pytest.approx(
        1.5 + np.sin(240) / 160, rel=1e-9)
    assert adaptive_simpson(np.exp, 1, 1) == 0.0


def test_singlet_probability_without_mixing(bare):
    layout, ops = bare
    h = np.zeros((5, 5))
    for t in (0.1, 1.0, 4.0):
        assert singlet_probability(h, layout.pure_state({"S": 1}), 2.0, t, ops.q_s) == pytest.approx(
            -np.expm1(-2.0 * t), rel=1e-10)
        assert singlet_probability(h, layout.pure_state({"T0": 1}), 2.0, t, ops.q_s) == 0.0


def test_singlet_probability_is_monotone_and_bounded():
    spec, layout, h = isotropic_hamiltonian(1.0, (0.2, 0.0, 0.1))
    from rpencounter.qcore import build_subspace_ops
    q_s = build_subspace_ops(layout).q_s
    rho0 = layout.pure_state({"S": 1.0})
    vals = [singlet_probability(h, rho0, 0.7, t, q_s) for t in np.linspace(0, 10, 21)]
    assert np.all(np.diff(vals) >= -1e-12)
    assert 0 <= min(vals) and max(vals) <= 1


def test_yield_normalization_and_trivial_cases(bare):
    layout, ops = bare
    rho0 = layout.pure_state({"S": 1.0})
    h = np.zeros((5, 5))
    one = YieldSpec("custom", operator=np.eye(5), rate=0.8)
    assert yield_integral(one, h, rho0, layout) == pytest.approx(1.0, abs=1e-10)
    assert yield_integral(YieldSpec(rate=0.8), h, rho0, layout) == pytest.approx(1.0, abs=1e-10)


def test_yield_equals_long_time_singlet_probability():
    spec, layout, h = isotropic_hamiltonian(1.0)
    from rpencounter.qcore import build_subspace_ops
    q_s = build_subspace_ops(layout).q_s
    rho0 = layout.pure_state({"S": 1.0})
    phi = yield_integral(YieldSpec(rate=1.0), h, rho0, layout)
    assert phi == pytest.approx(singlet_probability(h, rho0, 1.0, 40.0, q_s), rel=1e-8)


def test_yield_spec_validation():
    with pytest.raises(ValueError):
        YieldSpec(rate=0.0)
    with pytest.raises(ValueError):
        YieldSpec("custom")
    with pytest.raises(ValueError):
        YieldSpec(distribution="trajectory")
    with pytest.raises(ValueError):
        YieldSpec(functional="purity")


def test_concurrence_examples():
    assert concurrence(np.outer(SINGLET, SINGLET)) == pytest.approx(1.0)
    updown = np.zeros((4, 4))
    updown[1, 1] = 1
    assert concurrence(updown) == pytest.approx(0.0, abs=1e-12)
    w = 0.5
    werner = (1 - w) * np.eye(4) / 4 + w * np.outer(SINGLET, SINGLET)
    assert concurrence(werner) == pytest.approx(0.25, abs=1e-12)
    with pytest.raises(ValueError):
        concurrence(np.eye(3))
    with pytest.raises(ValueError):
        concurrence(np.diag([1.5, -0.5, 0, 0]))


def test_concurrence_yield_regression():
    spec, layout, h = isotropic_hamiltonian(1.0)
    rho0 = layout.pure_state({"S": 1.0})
    val = yield_integral(YieldSpec("concurrence", rate=1.0), h, rho0, layout)
    assert val == pytest.approx(CONCURRENCE_YIELD_R1_A1, rel=1e-10)

    # independent oracle: matrix exponential and adaptive Gauss-Kronrod quadrature
    def integrand(t):
        u = expm(-1j * h * t)
        return np.exp(-t) * concurrence(electron_state(u @ rho0 @ u.conj().T, layout))

    oracle = quad(integrand, 0, 40, limit=2000, epsabs=1e-13, epsrel=1e-12,
                  points=np.linspace(0, 40, 81)[1:-1])[0]
    assert val == pytest.approx(oracle, rel=1e-8)


def test_singlet_yield_matches_von_neumann_trajectories():
    spec, layout, h = isotropic_hamiltonian(1.0)
    rho0 = layout.pure_state({"S": 1.0})
    phi = yield_integral(YieldSpec(rate=1.0), h, rho0, layout)
    maps = build_encounter(EncounterCoupling(np.pi / 2, {"S": 1.0, "T": 1.0},
                                             mode="triplet_symmetric_no_t_dephasing"), layout)
    sim = TrajectorySimulator(BetweenGenerator(h), maps, None, RateModel(r=1.0), [0.0, 40.0])
    n = 3000
    hits = 0
    for i in range(n):
        clicks = sim.run(rho0, trajectory_rng(21, i)).record.clicks()
        hits += bool(clicks) and clicks[0][1] == "S"
    est = hits / n
    assert abs(est - phi) < 4 * np.sqrt(phi * (1 - phi) / n)


def test_sensitivity_examples(bare):
    layout, ops = bare
    rho0 = layout.pure_state({"S": 1.0})
    fixed = magnetic_sensitivity(YieldSpec(rate=1.0), lambda b: np.zeros((5, 5)), rho0, 0.5, 0.01, layout)
    assert abs(fixed.value) < 1e-10

    def zeeman(b):
        s = SpinSystemSpec(np.array([0.0, 0.0, b]), (2.0, 2.0), ())
        return build_hamiltonian_matrix(s, s.layout())
    assert abs(magnetic_sensitivity(YieldSpec(rate=1.0), zeeman, rho0, 0.5, 0.01, layout).value) < 1e-10


def test_sensitivity_step_halving_anisotropic():
    a = np.diag([0.2, 0.2, 1.0])
    nuc = make_nucleus(1, 0.5, a)
    rho_layout = SpinSystemSpec(np.zeros(3), (2.0, 2.0), (nuc,)).layout()
    rho0 = rho_layout.pure_state({"S": 1.0})
    for angle in (0.0, np.pi / 6, np.pi / 3, np.pi / 2):
        direction = np.array([np.sin(angle), 0.0, np.cos(angle)])

        def family(b):
            s = SpinSystemSpec(b * direction, (2.0, 2.0), (nuc,))
            return build_hamiltonian_matrix(s, rho_layout)

        sens = magnetic_sensitivity(YieldSpec(rate=1.0), family, rho0, 0.3, 0.01, rho_layout)
        assert abs(sens.fine - sens.coarse) <= 0.01 * abs(sens.fine) + 1e-9


def test_entanglement_lifetime():
    spec, layout, h = isotropic_hamiltonian(1.0, (0.0, 0.0, 0.3))
    rho0 = layout.pure_state({"S": 1.0})
    t1, c1 = entanglement_lifetime(h, rho0, layout, 12.0, n_grid=400)
    t2, c2 = entanglement_lifetime(h, rho0, layout, 12.0, n_grid=800)
    assert c1 == c2
    assert abs(t1 - t2) <= 2e-6
    unentangled = layout.mixed_state({"T+": 1.0})
    assert entanglement_lifetime(np.zeros_like(h), unentangled, layout, 5.0) == (0.0, False)
    assert entanglement_lifetime(np.zeros_like(h), rho0, layout, 5.0) == (5.0, True)
