"""Reaction yields in the exponential model, field sensitivity and concurrence.

With recombination times distributed as p(t) = r exp(-r t), a quantity f(t)
evaluated on the freely evolving pair state gives the yield

    Phi = int_0^inf p(t) f(t) dt,

and the singlet yield is Phi with f(t) = <Q_S(t)>.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .qcore import HilbertLayout, hermitize
from .spinham import UnitaryPropagator, electron_state
from .stochastic import RateModel

SIGMA_YY = np.kron(np.array([[0, -1j], [1j, 0]]), np.array([[0, -1j], [1j, 0]]))


def adaptive_simpson(f: Callable, a: float, b: float, rtol: float = 1e-8, atol: float = 1e-14,
                     panels: int = 16, max_depth: int = 50) -> float:
    """Adaptive-panel Simpson quadrature of a vectorised f over [a, b].

    The interval starts as ``panels`` equal panels; a panel is split until its
    two-half estimate changes by less than 15 times its share of the tolerance.
    """
    if b <= a:
        return 0.0
    edges = np.linspace(a, b, panels + 1)
    mids = (edges[:-1] + edges[1:]) / 2
    fe, fm = np.asarray(f(edges), dtype=float), np.asarray(f(mids), dtype=float)
    stack = [(edges[i], edges[i + 1], fe[i], fm[i], fe[i + 1], 0) for i in range(panels)]
    whole = float(np.sum((edges[1:] - edges[:-1]) / 6 * (fe[:-1] + 4 * fm + fe[1:])))
    tol = max(rtol * abs(whole), atol)
    total = 0.0
    comp = 0.0
    while stack:
        lo, hi, flo, fmid, fhi, depth = stack.pop()
        h = hi - lo
        q1, q3 = lo + h / 4, lo + 3 * h / 4
        fq1, fq3 = (float(v) for v in np.asarray(f(np.array([q1, q3]))))
        coarse = h / 6 * (flo + 4 * fmid + fhi)
        left = h / 12 * (flo + 4 * fq1 + fmid)
        right = h / 12 * (fmid + 4 * fq3 + fhi)
        err = left + right - coarse
        local_tol = tol * h / (b - a)
        if abs(err) <= 15 * local_tol or depth >= max_depth:
            val = left + right + err / 15
            y = val - comp
            t = total + y
            comp = (t - total) - y
            total = t
        else:
            mid = lo + h / 2
            stack.append((lo, mid, flo, fq1, fmid, depth + 1))
            stack.append((mid, hi, fmid, fq3, fhi, depth + 1))
    return total


def _panels(h_norm: float, span: float) -> int:
    # a few panels per oscillation period of the fastest Bohr frequency
    return int(min(max(16, np.ceil(4 * h_norm * span / np.pi)), 20000))


def singlet_probability(hamiltonian: np.ndarray, rho0: np.ndarray, rate: float, t: float,
                        q_s: np.ndarray, rtol: float = 1e-8) -> float:
    """p_S(t) = int_0^t r exp(-r tau) <Q_S(tau)> dtau under unitary evolution."""
    prop = UnitaryPropagator(hamiltonian)
    qs = prop.expectation_series(rho0, q_s)
    span = float(np.ptp(prop.energies)) if prop.energies.size else 0.0
    return adaptive_simpson(lambda x: rate * np.exp(-rate * x) * qs(x), 0.0, t, rtol=rtol,
                            panels=_panels(span, t))


def concurrence(rho: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit state in the product basis."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"concurrence needs a 4x4 state, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ValueError("concurrence input is not Hermitian")
    tr = float(np.real(np.trace(rho)))
    if tr <= 1e-14:
        raise ValueError("concurrence input has zero trace")
    rho = hermitize(rho) / tr
    w, v = np.linalg.eigh(rho)
    if w[0] < -1e-10:
        raise ValueError(f"concurrence input is not positive (eigenvalue {w[0]:.3e})")
    sq = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
    flipped = SIGMA_YY @ rho.conj() @ SIGMA_YY
    lam = np.sqrt(np.clip(np.linalg.eigvalsh(hermitize(sq @ flipped @ sq)), 0, None))[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


@dataclass(frozen=True)
class YieldSpec:
    """What to average and over which recombination-time distribution.

    functional:   "singlet_fidelity", "concurrence" or "custom" (needs ``operator``)
    distribution: "exponential" (needs ``rate``), "trajectory" (needs ``samples``)
                  or "rate_model", an experimental option that uses the
                  first-encounter density of ``rate_model`` as p(t)
    """

    functional: str = "singlet_fidelity"
    distribution: str = "exponential"
    rate: float = 1.0
    operator: np.ndarray | None = None
    samples: np.ndarray | None = None
    rate_model: RateModel | None = None

    def __post_init__(self):
        if self.functional not in ("singlet_fidelity", "concurrence", "custom"):
            raise ValueError(f"unknown yield functional {self.functional!r}")
        if self.distribution not in ("exponential", "trajectory", "rate_model"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.functional == "custom" and self.operator is None:
            raise ValueError("custom functional needs an operator")
        if self.distribution == "exponential" and not self.rate > 0:
            raise ValueError(f"exponential distribution needs rate > 0, got {self.rate}")
        if self.distribution == "trajectory" and self.samples is None:
            raise ValueError("trajectory distribution needs sample times")
        if self.distribution == "rate_model" and self.rate_model is None:
            raise ValueError("rate_model distribution needs a RateModel")


def functional_series(spec: YieldSpec, hamiltonian, rho0, layout: HilbertLayout, q_s=None) -> Callable:
    """Vectorised f(t) for the yield functional."""
    prop = UnitaryPropagator(hamiltonian)
    if spec.functional == "singlet_fidelity":
        if q_s is None:
            from .qcore import build_subspace_ops
            q_s = build_subspace_ops(layout).q_s
        return prop.expectation_series(rho0, q_s)
    if spec.functional == "custom":
        return prop.expectation_series(rho0, np.asarray(spec.operator))

    def conc(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([concurrence(electron_state(prop.evolve(rho0, x), layout)) for x in t])

    return conc


def yield_integral(spec: YieldSpec, hamiltonian, rho0, layout: HilbertLayout,
                   t_infinity: float | None = None, rtol: float = 1e-8) -> float:
    """Phi = int p(t) f(t) dt, truncated at t_infinity (default 40 / r)."""
    f = functional_series(spec, hamiltonian, rho0, layout)
    if spec.distribution == "trajectory":
        return float(np.mean(f(np.asarray(spec.samples, dtype=float))))
    if spec.distribution == "exponential":
        r = spec.rate

        def density(t):
            return r * np.exp(-r * t)
        t_inf = 40.0 / r if t_infinity is None else t_infinity
    else:
        model = spec.rate_model
        density = model.first_encounter_density
        t_inf = model.cutoff if t_infinity is None else t_infinity
    h_span = float(np.ptp(np.linalg.eigvalsh(hermitize(np.asarray(hamiltonian)))))
    panels = _panels(h_span, t_inf)
    if spec.functional == "concurrence":
        panels = min(panels, 2000)
    return adaptive_simpson(lambda t: density(t) * f(t), 0.0, t_inf, rtol=rtol, panels=panels)


@dataclass(frozen=True)
class Sensitivity:
    value: float      # Richardson-refined derivative
    coarse: float     # central difference at step delta
    fine: float       # central difference at step delta / 2
    error: float      # |fine - coarse|


def magnetic_sensitivity(spec: YieldSpec, family: Callable, rho0, b: float, delta_b: float,
                         layout: HilbertLayout, t_infinity: float | None = None) -> Sensitivity:
    """dPhi/dB by central differences at steps delta and delta/2 with Richardson refinement.

    ``family(B)`` returns the Hamiltonian at field parameter B.
    """
    if not delta_b > 0:
        raise ValueError(f"delta_b must be > 0, got {delta_b}")

    def phi(x):
        return yield_integral(spec, family(x), rho0, layout, t_infinity)

    def central(d):
        return (phi(b + d) - phi(b - d)) / (2 * d)

    coarse = central(delta_b)
    fine = central(delta_b / 2)
    return Sensitivity((4 * fine - coarse) / 3, coarse, fine, abs(fine - coarse))


def entanglement_lifetime(hamiltonian, rho0, layout: HilbertLayout, t_max: float,
                          n_grid: int = 400, tol: float = 1e-6, threshold: float = 1e-12) -> tuple:
    """T_E = sup{t <= t_max : E(t) > 0}, found by a grid scan and bisection.

    Returns (T_E, censored) where censored means E(t_max) > 0.
    """
    prop = UnitaryPropagator(hamiltonian)

    def e(t):
        return concurrence(electron_state(prop.evolve(rho0, t), layout))

    grid = np.linspace(0.0, t_max, n_grid + 1)
    vals = np.array([e(t) for t in grid])
    pos = np.nonzero(vals > threshold)[0]
    if pos.size == 0:
        return 0.0, False
    k = pos[-1]
    if k == n_grid:
        return float(t_max), True
    lo, hi = grid[k], grid[k + 1]
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if e(mid) > threshold:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2), False
