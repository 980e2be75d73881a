"""Conditional (nonlinear) master equations.

A linear, trace-reducing equation d rho_N/dt = L rho_N has the normalized
solution rho = rho_N / Tr rho_N, which obeys the nonlinear equation

    d rho/dt = (L - <L>) rho,   <L> = Tr(L rho) = d ln p / dt .

Covered here: generic conditional generators built from a no-click map, the
closed-form dark evolution of a radical pair under imperfect fluorescence
detection, the dark survival time, and the ensemble ("cloud") maps with their
stochastic master equation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from .encounter import DetectionEfficiencies, EncounterMapParams
from .qcore import (
    SubspaceOps, SuperOp, ZeroTrace, default_step, expectation, hermitize,
    integrate_rk4,
)
from .reactops import jump_map
from .stochastic import binomial_pmf


class UnphysicalMap(ValueError):
    """The no-click map is not completely positive and trace non-increasing."""


class ImpossibleRecord(ValueError):
    """A click count with zero probability was supplied."""


class ConditionalGenerator:
    """d rho/dt = (L - <L>) rho with L = rate (a0 - 1) + extra."""

    def __init__(self, a0: SuperOp, rate: float, extra: SuperOp | None = None, check: bool = True):
        if check:
            if not a0.is_completely_positive():
                raise UnphysicalMap("no-click map is not completely positive")
            if not a0.is_trace_non_increasing():
                raise UnphysicalMap("no-click map increases the trace")
        if rate < 0:
            raise ValueError(f"rate must be >= 0, got {rate}")
        lin = rate * (a0 - SuperOp.identity(a0.dim))
        if extra is not None:
            lin = lin + extra
        self.linear = lin.dense()
        self.rate = rate
        self.dim = a0.dim

    def mean(self, rho) -> float:
        """<L> = Tr(L rho)."""
        return float(np.real(np.trace(self.linear(rho))))

    def rhs(self, _t, rho):
        lr = self.linear(rho)
        return lr - np.real(np.trace(lr)) * rho

    def linear_solution(self, rho0, times) -> np.ndarray:
        """Unnormalized rho_N(t) = exp(L t) rho0 on a time grid."""
        n = self.dim
        v0 = np.asarray(rho0, dtype=complex).reshape(-1)
        m = self.linear.matrix
        return np.array([(expm(m * t) @ v0).reshape(n, n) for t in times])

    def solution(self, rho0, times) -> tuple:
        """(normalized states, p(t)) from the linear solution."""
        lin = self.linear_solution(rho0, times)
        p = np.real(np.einsum("tii->t", lin))
        if np.any(p <= 1e-300):
            raise ZeroTrace("linear solution reached zero trace")
        return lin / p[:, None, None], p

    def integrate(self, rho0, times, max_step: float | None = None) -> np.ndarray:
        """RK4 integration of the nonlinear equation."""
        if max_step is None:
            max_step = default_step(self.linear.norm())
        return integrate_rk4(self.rhs, rho0, times, max_step)


def conditional_generator(a0: SuperOp, rate: float, extra: SuperOp | None = None) -> ConditionalGenerator:
    return ConditionalGenerator(a0, rate, extra)


def occasional_projection_propagator(p_map: SuperOp, rate: float, t: float) -> SuperOp:
    """G(t, 0) = exp(-r t)(1 - P) + P for an idempotent map P."""
    ident = SuperOp.identity(p_map.dim)
    return np.exp(-rate * t) * (ident - p_map) + p_map


@dataclass
class DarkSolution:
    rt: np.ndarray
    trace_n: np.ndarray      # p(D)
    trace_r: np.ndarray      # p(R|D)
    p_rd: np.ndarray         # p(R, D)
    rho_n: np.ndarray | None = None


def dark_probabilities(q_s0: float, q_t0: float, r_tilde_s: float, r_tilde_t: float,
                       eta_s: float, eta_t: float, rt, q_p0: float | None = None) -> DarkSolution:
    """p(D), p(R,D) and p(R|D) as functions of r t for dark evolution.

    p(D)   = 1 - sum_j eta_j (1 - exp(-r~_j r t)) <Q_j>_0
    p(R,D) = sum_j exp(-r~_j r t) <Q_j>_0
    p(R|D) = p(R,D) / p(D)

    ``q_p0`` defaults to 1 - q_S - q_T (a normalized initial state).
    """
    if q_s0 < 0 or q_t0 < 0 or q_s0 + q_t0 > 1 + 1e-12:
        raise ValueError(f"initial populations must be >= 0 and sum to <= 1, got {q_s0}, {q_t0}")
    rt = np.asarray(rt, dtype=float)
    es, et = np.exp(-r_tilde_s * rt), np.exp(-r_tilde_t * rt)
    # the same sum written with non-negative terms only, using 1 = q_S + q_T + q_P;
    # this avoids cancelling 1 against q_S when the triplet seed is tiny
    q_p0 = max(0.0, 1.0 - q_s0 - q_t0) if q_p0 is None else q_p0
    p_d = q_p0 + q_s0 * ((1 - eta_s) + eta_s * es) + q_t0 * ((1 - eta_t) + eta_t * et)
    p_rd = es * q_s0 + et * q_t0
    return DarkSolution(rt, p_d, p_rd / p_d, p_rd)


def dark_closed_form(rho0: np.ndarray, params: EncounterMapParams, eff: DetectionEfficiencies,
                     rate: float, t, ops: SubspaceOps) -> DarkSolution:
    """Unnormalized dark state rho_N(t) with no evolution between encounters.

    ``t`` may be a scalar or an array; rho_n then carries a leading time axis.

    rho_N = rho0_P + e^{-eta~ r t} rho0_R
            + sum_j [ (e^{-r~_j r t} - e^{-eta~ r t}) Q_j rho0 Q_j
                      + (1 - eta_j)(1 - e^{-r~_j r t}) <Q_j>_0 Q_P ]
    """
    if params.mode != "triplet_symmetric_no_t_dephasing":
        raise ValueError("dark closed form needs triplet_symmetric_no_t_dephasing parameters")
    pops = {c: expectation(rho0, ops.projector(c)) for c in ("S", "T", "P")}
    if sum(pops.values()) > 1 + 1e-12:
        raise ValueError(f"initial populations sum to {sum(pops.values())} > 1")
    rt = rate * np.asarray(t, dtype=float)
    eta = params.eta_tilde
    rho_r = ops.q_r @ rho0 @ ops.q_r
    terms = [(np.exp(-eta * rt), rho_r)]
    for c in ("S", "T"):
        rj = params.r_tilde["T0" if c == "T" else c]
        q = ops.projector(c)
        terms.append((np.exp(-rj * rt) - np.exp(-eta * rt), q @ rho0 @ q))
        terms.append((-(1 - eff.for_channel(c)) * np.expm1(-rj * rt), jump_map(ops, c)(rho0)))
    # time-dependent coefficients broadcast over a leading time axis when t is an array
    out = ops.q_p @ rho0 @ ops.q_p + sum(np.multiply.outer(w, m) for w, m in terms)
    probs = dark_probabilities(pops["S"], pops["T"], params.r_tilde["S"], params.r_tilde["T0"],
                               eff.for_channel("S"), eff.for_channel("T"), rt, pops["P"])
    return DarkSolution(np.asarray(rt), probs.trace_n, probs.trace_r, probs.p_rd, out)


def dark_survival_time(R: float, eta_d: float, q_r0: float) -> tuple:
    """Conditioning time (units of 1/r) at which p(R|D) falls to 1/2.

    Returns (exact, approx) with
        exact  = ln[(2 - eta_d) q_R0 / (1 - eta_d q_R0)] / R
        approx = ln[1 / (eps_R + eps_D)] / R,  eps_R = 1 - q_R0, eps_D = 1 - eta_d.
    """
    if R <= 0:
        raise ValueError(f"R must be > 0, got {R}")
    den = 1 - eta_d * q_r0
    num = (2 - eta_d) * q_r0
    if den <= 0 or num <= 0 or num / den <= 0:
        raise ValueError(f"logarithm argument is not positive (eta_d q_R0 = {eta_d * q_r0})")
    eps = (1 - q_r0) + (1 - eta_d)
    approx = np.log(1 / eps) / R if eps > 0 else np.inf
    return float(np.log(num / den) / R), float(approx)


def dark_half_time(q_s0, q_t0, r_tilde_s, r_tilde_t, eta_s, eta_t, rt_max: float = 1e3) -> float:
    """Numerical root of p(R|D)(rt) = 1/2 by bracketing."""
    def f(x):
        return float(dark_probabilities(q_s0, q_t0, r_tilde_s, r_tilde_t, eta_s, eta_t, x).trace_r) - 0.5

    if f(0.0) < 0:
        return 0.0
    hi = 1.0
    while f(hi) > 0:
        hi *= 2
        if hi > rt_max:
            raise ValueError("p(R|D) does not reach 1/2 within the search range")
    return float(brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-14))


def cloud_single_effect(rho: np.ndarray, a: SuperOp, n: int) -> np.ndarray:
    """[(n-1)/n + (1/n) a/<a>] rho: one of n systems triggered the effect a."""
    ar = a(rho)
    pa = float(np.real(np.trace(ar)))
    if pa <= 1e-300:
        raise ZeroTrace("<a> vanishes")
    return (n - 1) / n * rho + ar / (n * pa)


class EnsembleClickMap:
    """M_l for l clicks among n systems in one step of click probability p.

    M_l rho = (1-x) [(1-p) rho + p a rho] / (1 - p<b>) + x b rho / <b>,  x = l/n
    """

    def __init__(self, n: int, l: int, p: float, a: SuperOp, b: SuperOp):
        if not 0 <= l <= n:
            raise ValueError(f"need 0 <= l <= n, got l={l}, n={n}")
        if not 0 <= p <= 1:
            raise ValueError(f"p must lie in [0, 1], got {p}")
        self.n, self.l, self.p = n, l, p
        self.a, self.b = a.dense(), b.dense()
        self.x = l / n

    def probability(self, rho) -> float:
        pb = float(np.real(np.trace(self.b(rho))))
        return binomial_pmf(self.l, self.n, min(max(self.p * pb, 0.0), 1.0))

    def __call__(self, rho):
        br = self.b(rho)
        pb = float(np.real(np.trace(br)))
        x, p = self.x, self.p
        if p * pb <= 0 and self.l > 0:
            raise ImpossibleRecord(f"{self.l} clicks observed but p<B> = 0")
        if 1 - p * pb <= 0 and self.l < self.n:
            raise ImpossibleRecord(f"{self.l} < n clicks observed but p<B> = 1")
        out = np.zeros_like(rho, dtype=complex)
        if self.l < self.n:
            out = out + (1 - x) * ((1 - p) * rho + p * self.a(rho)) / (1 - p * pb)
        if self.l > 0:
            out = out + x * br / pb
        return out


def ensemble_click_map(n: int, l: int, p: float, a: SuperOp, b: SuperOp) -> EnsembleClickMap:
    return EnsembleClickMap(n, l, p, a, b)


def stochastic_me_step(rho, z: float, rate: float, a_cpt: SuperOp, b: SuperOp, dt: float) -> np.ndarray:
    """Euler step of d rho/dt = r [(A_CPT - 1) + z (B - <B>)] rho."""
    if rate * dt > 0.01 * (1 + 1e-12):
        raise ValueError(f"step too large: r dt = {rate * dt} > 0.01")
    br = b(rho)
    drho = a_cpt(rho) - rho + z * (br - np.real(np.trace(br)) * rho)
    return hermitize(rho + rate * dt * drho)


def z_from_clicks(l: int, n: int, dt: float, rate: float, b_mean: float) -> float:
    """z = (x' - r<B>) / (r<B>) with the click rate x' = l / (n dt)."""
    rb = rate * b_mean
    if rb <= 0:
        raise ImpossibleRecord("r<B> = 0: the fluorescence signal is undefined")
    return (l / (n * dt) - rb) / rb


@dataclass
class EnsembleRecord:
    n: int
    times: np.ndarray
    l: np.ndarray
    x: np.ndarray
    z: np.ndarray
    states: np.ndarray


def simulate_ensemble_record(rho0, a_cpt: SuperOp, b: SuperOp, rate: float, n: int, dt: float,
                             steps: int, rng: np.random.Generator, method: str = "sme") -> EnsembleRecord:
    """Draw l ~ Binomial(n, r dt <B>) each step and update the conditional state.

    ``method`` is "sme" (Euler step of the stochastic equation driven by z)
    or "exact" (the ensemble click map M_l).
    """
    if method not in ("sme", "exact"):
        raise ValueError(f"unknown method {method!r}")
    a_cpt, b = a_cpt.dense(), b.dense()
    a = (a_cpt - b).dense()
    p = rate * dt
    rho = np.array(rho0, dtype=complex)
    states = [rho]
    ls, zs = [], []
    for _ in range(steps):
        pb = float(np.real(np.trace(b(rho))))
        l = int(rng.binomial(n, min(max(p * pb, 0.0), 1.0)))
        z = z_from_clicks(l, n, dt, rate, pb) if pb > 0 else 0.0
        if method == "sme":
            rho = stochastic_me_step(rho, z, rate, a_cpt, b, dt)
        else:
            rho = hermitize(EnsembleClickMap(n, l, p, a, b)(rho))
        ls.append(l)
        zs.append(z)
        states.append(rho)
    ls = np.array(ls)
    return EnsembleRecord(n, dt * np.arange(steps + 1), ls, ls / n, np.array(zs), np.array(states))
