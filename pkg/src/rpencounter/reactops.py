"""Reaction generators for the radical pair and their closed-form solutions.

Full-space generator with decay rates r_j and dephasing rates d_j,

    L rho = sum_j [ r_j D(L_j) + d_j D(Q_j) ] rho ,   j in {S, T0, T+, T-},

its restriction to the pair (R) subspace, the pure-state propagator with a
non-Hermitian effective Hamiltonian, and a comparator for the nonlinear
reaction operator proposed by Kominis.

The jump ``<Q_j> Q_P`` of a collapsed channel is always realised as
sum_{i in j} L_i rho L_i^dagger, which keeps the nuclear register intact and
reduces to <Q_j> Q_P when there are no nuclei.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qcore import (
    LABELS, TRIPLETS, SubspaceOps, SuperOp, ZeroTrace, anticommutator_map,
    commutator_map, default_step, expectation, integrate_rk4,
    lindblad_dissipator,
)

MODES = ("general", "triplet_symmetric", "triplet_symmetric_no_t_dephasing")


def _expand(values: dict, name: str) -> dict:
    """Accept per-level keys or a collapsed "T" key and return all four levels."""
    out = {}
    for key, val in values.items():
        if key == "T":
            for t in TRIPLETS:
                out.setdefault(t, float(val))
        elif key in LABELS:
            out[key] = float(val)
        else:
            raise ValueError(f"unknown channel {key!r} in {name}")
    for j in LABELS:
        out.setdefault(j, 0.0)
    return out


@dataclass(frozen=True)
class ReactionRates:
    r: dict
    d: dict = field(default_factory=dict)
    mode: str = "general"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown symmetry mode {self.mode!r}")
        r = _expand(self.r, "r")
        d = _expand(self.d, "d")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "d", d)
        for name, tab in (("r", r), ("d", d)):
            for j, v in tab.items():
                if not v >= 0:
                    raise ValueError(f"negative rate {name}_{j} = {v}")
        if self.mode != "general":
            for name, tab in (("r", r), ("d", d)):
                if len({tab[t] for t in TRIPLETS}) != 1:
                    raise ValueError(f"{self.mode} needs equal triplet rates, {name} = {tab}")
        if self.mode == "triplet_symmetric_no_t_dephasing" and d["T0"] != 0:
            raise ValueError("triplet_symmetric_no_t_dephasing needs d_T = 0")

    @classmethod
    def symmetric(cls, r_s, r_t, d_s=0.0, d_t=0.0) -> "ReactionRates":
        mode = "triplet_symmetric_no_t_dephasing" if d_t == 0 else "triplet_symmetric"
        return cls({"S": r_s, "T": r_t}, {"S": d_s, "T": d_t}, mode)

    @property
    def r_t(self) -> float:
        return self.r["T0"]

    @property
    def d_t(self) -> float:
        return self.d["T0"]

    def max_rate(self) -> float:
        return max(max(self.r.values()), max(self.d.values()))

    def coeffs(self) -> "DerivedCoeffs":
        return DerivedCoeffs.from_rates(self)


@dataclass(frozen=True)
class DerivedCoeffs:
    eta_jk: dict
    eta: float
    r: float
    d: float
    gamma: dict
    p: dict
    eta_j: dict

    @classmethod
    def from_rates(cls, rates: ReactionRates) -> "DerivedCoeffs":
        r, d = rates.r, rates.d
        eta_jk = {(j, k): (r[j] + r[k] + d[j] + d[k]) / 2 for j in LABELS for k in LABELS}
        rs = {"S": r["S"], "T": r["T0"]}
        ds = {"S": d["S"], "T": d["T0"]}
        rbar = (rs["S"] + rs["T"]) / 2
        dbar = (ds["S"] + ds["T"]) / 2
        eta = rbar + dbar
        gamma = {j: rs[j] + ds[j] for j in rs}
        p = {j: ds[j] / gamma[j] if gamma[j] > 0 else 0.0 for j in rs}
        eta_j = {j: rs[j] / eta if eta > 0 else 0.0 for j in rs}
        return cls(eta_jk, eta, rbar, dbar, gamma, p, eta_j)


def _labels(ops: SubspaceOps) -> tuple:
    return ops.layout.rp_labels


def jump_map(ops: SubspaceOps, channel: str) -> SuperOp:
    """rho -> sum_{i in channel} L_i rho L_i^dagger; channel "T" groups the triplets."""
    members = ops.layout.triplet_labels if channel == "T" else (channel,)
    return SuperOp([(ops.l[i], ops.l[i].conj().T) for i in members], dim=ops.layout.total_dim)


def projection_map(q: np.ndarray) -> SuperOp:
    """rho -> q rho q."""
    return SuperOp.sandwich(q, q)


def triplet_coherence_map(ops: SubspaceOps) -> SuperOp:
    """Q_coh = sum_{T_i} Q_i . Q_i - Q_T . Q_T, removing coherences among triplets."""
    out = SuperOp([(ops.q[t], ops.q[t]) for t in ops.layout.triplet_labels], dim=ops.layout.total_dim)
    return out - projection_map(ops.q_t)


def generator_full(rates: ReactionRates, ops: SubspaceOps) -> SuperOp:
    """sum_j [r_j D(L_j) + d_j D(Q_j)] on the full space."""
    n = ops.layout.total_dim
    gen = SuperOp.zero(n)
    if rates.mode == "general":
        for j in _labels(ops):
            if rates.r[j]:
                gen = gen + rates.r[j] * lindblad_dissipator(ops.l[j])
            if rates.d[j]:
                gen = gen + rates.d[j] * lindblad_dissipator(ops.q[j])
        return gen
    # triplet-symmetric form: per-level triplet jumps, total-triplet dephasing
    # plus d_T Q_coh for the coherences among the triplet levels
    for j in _labels(ops):
        if rates.r[j]:
            gen = gen + rates.r[j] * lindblad_dissipator(ops.l[j])
    if rates.d["S"]:
        gen = gen + rates.d["S"] * lindblad_dissipator(ops.q_s)
    if rates.d_t:
        gen = gen + rates.d_t * (lindblad_dissipator(ops.q_t) + triplet_coherence_map(ops))
    return gen


def simplified_generator(r_s: float, r_t: float, d_s: float, d_t: float, ops: SubspaceOps) -> SuperOp:
    """Collapsed S/T generator: r_j(<Q_j>Q_P - {Q_j, .}/2) + d_j D(Q_j), j = S, T.

    Here d_t multiplies D(Q_T) with the total triplet projector.  It does not
    dephase the triplet levels among themselves.
    """
    gen = SuperOp.zero(ops.layout.total_dim)
    for ch, r, d in (("S", r_s, d_s), ("T", r_t, d_t)):
        q = ops.projector(ch)
        if r:
            gen = gen + r * (jump_map(ops, ch) - 0.5 * anticommutator_map(q))
        if d:
            gen = gen + d * lindblad_dissipator(q)
    return gen


def _require_inicon(rho0, ops):
    if np.max(np.abs(ops.q_r @ rho0 @ ops.q_p)) >= 1e-10:
        raise ValueError("initial state has R-P coherence (inicon violated)")


def solve_general(rho0: np.ndarray, rates: ReactionRates, ops: SubspaceOps, t: float) -> np.ndarray:
    """Closed form for arbitrary per-level rates."""
    _require_inicon(rho0, ops)
    labs = _labels(ops)
    r, d = rates.r, rates.d
    out = ops.q_p @ rho0 @ ops.q_p
    for j in labs:
        qj = ops.q[j]
        for k in labs:
            if j == k:
                continue
            eta = (r[j] + r[k] + d[j] + d[k]) / 2
            out = out + np.exp(-eta * t) * (qj @ rho0 @ ops.q[k])
        lj = ops.l[j]
        out = out + np.exp(-r[j] * t) * (qj @ rho0 @ qj) \
            - np.expm1(-r[j] * t) * (lj @ rho0 @ lj.conj().T)
    return out


def _solve_st(rho0, r_s, r_t, d_s, d_t, ops, t, coherence_rate):
    """Shared collapsed-S/T closed form.  coherence_rate is the per-level d_T or None."""
    _require_inicon(rho0, ops)
    eta = (r_s + r_t + d_s + d_t) / 2
    rho_r = ops.q_r @ rho0 @ ops.q_r
    out = ops.q_p @ rho0 @ ops.q_p + np.exp(-eta * t) * rho_r
    for ch, r in (("S", r_s), ("T", r_t)):
        q = ops.projector(ch)
        out = out + (np.exp(-r * t) - np.exp(-eta * t)) * (q @ rho0 @ q) \
            - np.expm1(-r * t) * jump_map(ops, ch)(rho0)
    if coherence_rate:
        out = out + (np.exp(-r_t * t) - np.exp(-(r_t + coherence_rate) * t)) \
            * triplet_coherence_map(ops)(rho0)
    return out


def solve_triplet_symmetric(rho0, rates: ReactionRates, ops: SubspaceOps, t: float) -> np.ndarray:
    """Closed form with equal triplet rates, including the Q_coh term."""
    return _solve_st(rho0, rates.r["S"], rates.r_t, rates.d["S"], rates.d_t, ops, t, rates.d_t)


def solve_simplified(rho0, r_s, r_t, d_s, d_t, ops: SubspaceOps, t: float) -> np.ndarray:
    """Closed form of ``simplified_generator``; depends on d_s, d_t only via their sum."""
    return _solve_st(rho0, r_s, r_t, d_s, d_t, ops, t, None)


def solve_symmetric_rates(rho0, r, d, ops: SubspaceOps, t: float) -> np.ndarray:
    """Equal decay rates r_j = r and total dephasing d = (d_S + d_T)/2."""
    _require_inicon(rho0, ops)
    rho_r = ops.q_r @ rho0 @ ops.q_r
    deph = sum(ops.projector(c) @ rho0 @ ops.projector(c) for c in ("S", "T"))
    inner = ops.q_p @ rho0 @ ops.q_p + np.exp(-d * t) * rho_r - np.expm1(-d * t) * deph
    # the product state: whatever was in P plus everything that recombined
    product = ops.q_p @ rho0 @ ops.q_p + jump_map(ops, "S")(rho0) + jump_map(ops, "T")(rho0)
    return np.exp(-r * t) * inner - np.expm1(-r * t) * product


def closed_form_full(rho0: np.ndarray, rates: ReactionRates, ops: SubspaceOps, t: float) -> np.ndarray:
    """Exact state at time t for the full-space generator of ``rates``."""
    if rates.mode == "general":
        return solve_general(rho0, rates, ops, t)
    return solve_triplet_symmetric(rho0, rates, ops, t)


def generator_r_subspace(rates: ReactionRates, ops: SubspaceOps) -> SuperOp:
    """Trace-reducing pair generator sum_j [-(r_j/2){Q_j, .} + d_j D(Q_j)]."""
    gen = SuperOp.zero(ops.layout.total_dim)
    for j in _labels(ops):
        if rates.r[j]:
            gen = gen - 0.5 * rates.r[j] * anticommutator_map(ops.q[j])
        if rates.mode == "general" and rates.d[j]:
            gen = gen + rates.d[j] * lindblad_dissipator(ops.q[j])
    if rates.mode != "general":
        if rates.d["S"]:
            gen = gen + rates.d["S"] * lindblad_dissipator(ops.q_s)
        if rates.d_t:
            gen = gen + rates.d_t * (lindblad_dissipator(ops.q_t) + triplet_coherence_map(ops))
    return gen


def simplified_generator_r(r_s, r_t, d_s, d_t, ops: SubspaceOps) -> SuperOp:
    """gamma_j (p_j Q_j . Q_j - {Q_j, .}/2) with gamma_j = r_j + d_j, p_j = d_j/gamma_j."""
    gen = SuperOp.zero(ops.layout.total_dim)
    for ch, r, d in (("S", r_s, d_s), ("T", r_t, d_t)):
        q = ops.projector(ch)
        gen = gen + d * projection_map(q) - 0.5 * (r + d) * anticommutator_map(q)
    return gen


def solve_r_subspace(rho0, r_s, r_t, d_s, d_t, ops: SubspaceOps, t: float) -> np.ndarray:
    """Closed form of the collapsed pair generator acting on rho0_R.

    rho_R(t) = e^{-eta t} rho0_R + sum_j [e^{-r_j t} - e^{-eta t}] Q_j rho0_R Q_j
    """
    eta = (r_s + r_t + d_s + d_t) / 2
    rho_r = ops.q_r @ rho0 @ ops.q_r
    out = np.exp(-eta * t) * rho_r
    for ch, r in (("S", r_s), ("T", r_t)):
        q = ops.projector(ch)
        out = out + (np.exp(-r * t) - np.exp(-eta * t)) * (q @ rho_r @ q)
    return out


def closed_form_r(rho0, rates: ReactionRates, ops: SubspaceOps, t: float) -> np.ndarray:
    """Pair-subspace solution as the R projection of the full closed form."""
    rho_r = ops.q_r @ rho0 @ ops.q_r
    full = closed_form_full(rho_r, rates, ops, t)
    return ops.q_r @ full @ ops.q_r


def effective_hamiltonian(hamiltonian: np.ndarray, rates: ReactionRates, ops: SubspaceOps) -> np.ndarray:
    """H_eff = H - (i/2) sum_j r_j Q_j."""
    h = np.array(hamiltonian, dtype=complex)
    for j in _labels(ops):
        h = h - 0.5j * rates.r[j] * ops.q[j]
    return h


def nonhermitian_propagate(psi0: np.ndarray, rates: ReactionRates, hamiltonian: np.ndarray,
                           ops: SubspaceOps, t: float) -> tuple:
    """Propagate a pair-state vector under H_eff; returns (psi(t), |psi(t)|^2).

    The squared norm is the no-jump survival probability.
    """
    from scipy.linalg import expm
    if any(rates.d[j] for j in _labels(ops)):
        raise ValueError("pure-state propagation needs zero dephasing rates")
    psi = expm(-1j * effective_hamiltonian(hamiltonian, rates, ops) * t) @ np.asarray(psi0, dtype=complex)
    return psi, float(np.real(np.vdot(psi, psi)))


def integrate_generator(gen: SuperOp, rho0: np.ndarray, times, hamiltonian=None,
                        max_step: float | None = None, max_rate: float | None = None) -> np.ndarray:
    """RK4 integration of drho/dt = (-i[H, .] + gen) rho on a time grid."""
    total = gen if hamiltonian is None else gen + commutator_map(hamiltonian)
    dense = total.dense()
    if max_step is None:
        if max_rate is None:
            max_rate = dense.norm()
        h_norm = 0.0 if hamiltonian is None else float(np.linalg.norm(hamiltonian, 2))
        max_step = default_step(max_rate, h_norm)
    return integrate_rk4(lambda _t, rho: dense(rho), rho0, times, max_step)


@dataclass
class KominisResult:
    value: np.ndarray
    p_coh: float
    degenerate: bool  # p_coh was 0/0 and set to 0


def coherence_visibility(rho: np.ndarray, ops: SubspaceOps) -> tuple:
    """p_coh = Tr[(Q_S rho)(Q_T rho)] / (Tr(Q_S rho) Tr(Q_T rho)).

    Returns (p_coh, degenerate).  A vanishing denominator gives (0, True).
    """
    qs_rho = ops.q_s @ rho
    qt_rho = ops.q_t @ rho
    den = np.real(np.trace(qs_rho)) * np.real(np.trace(qt_rho))
    if abs(den) < 1e-300 or abs(den) < 1e-14 * max(np.real(np.trace(rho)) ** 2, 1e-300):
        return 0.0, True
    num = np.real(np.trace(qs_rho @ qt_rho))
    return float(num / den), False


class KominisGenerator:
    """Nonlinear comparator L_dep + (1 - p_coh) L_inc + p_coh L_coh on pair states.

    L_dep(k) rho = sum_j k_j D(Q_j) rho
    L_inc rho    = -sum_j k_j Q_j rho Q_j
    L_coh rho    = -sum_j k_j Tr(Q_j rho / Tr rho) rho
    """

    nonlinear = True

    def __init__(self, k_rates: dict, ops: SubspaceOps):
        self.k = {"S": float(k_rates["S"]), "T": float(k_rates["T"])}
        if min(self.k.values()) < 0:
            raise ValueError(f"negative rate in {k_rates}")
        self.ops = ops
        self._dep = sum((self.k[c] * lindblad_dissipator(ops.projector(c)) for c in "ST"),
                        SuperOp.zero(ops.layout.total_dim)).dense()

    def evaluate(self, rho: np.ndarray) -> KominisResult:
        ops = self.ops
        tr = float(np.real(np.trace(rho)))
        if tr <= 1e-14:
            raise ZeroTrace(f"pair trace {tr:.3e} is numerically zero")
        pc, degenerate = coherence_visibility(rho, ops)
        inc = -sum(self.k[c] * ops.projector(c) @ rho @ ops.projector(c) for c in "ST")
        coh = -sum(self.k[c] * expectation(rho, ops.projector(c)) / tr for c in "ST") * rho
        return KominisResult(self._dep(rho) + (1 - pc) * inc + pc * coh, pc, degenerate)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return self.evaluate(rho).value

    def integrate(self, rho0: np.ndarray, times, hamiltonian=None, max_step=None,
                  stop_trace: float = 1e-8) -> tuple:
        """RK4 run of drho/dt = -i[H, rho] + L_Kom rho.

        Stops once Tr rho_R falls below ``stop_trace``.  Returns
        (times reached, states, truncated flag).
        """
        times = np.asarray(times, dtype=float)
        h = np.zeros_like(rho0) if hamiltonian is None else np.asarray(hamiltonian)
        comm = commutator_map(h).dense()
        if max_step is None:
            max_step = default_step(max(self.k.values()), float(np.linalg.norm(h, 2)))

        def rhs(_t, rho):
            return comm(rho) + self(rho)

        states = [np.array(rho0, dtype=complex)]
        for k in range(1, len(times)):
            seg = integrate_rk4(rhs, states[-1], times[k - 1:k + 1], max_step)
            if np.real(np.trace(seg[-1])) < stop_trace:
                return times[:k], np.array(states), True
            states.append(seg[-1])
        return times, np.array(states), False


def conditional_r_equation(rates: ReactionRates, hamiltonian: np.ndarray, ops: SubspaceOps):
    """Trace-preserving nonlinear pair equation drho/dt = -i[H, rho] + (L - <L>) rho.

    L is the pair generator of the collapsed model and <L> = Tr(L rho)
    = -sum_j r_j <Q_j>.  Returns a callable rhs(t, rho).
    """
    if rates.mode != "triplet_symmetric_no_t_dephasing":
        raise ValueError("the conditional pair equation needs triplet_symmetric_no_t_dephasing rates")
    lin = (generator_r_subspace(rates, ops) + commutator_map(hamiltonian)).dense()

    def rhs(_t, rho):
        lr = lin(rho)
        return lr - np.real(np.trace(lr)) * rho

    return rhs


def mean_decay(rates: ReactionRates, rho: np.ndarray, ops: SubspaceOps) -> float:
    """<L> = -sum_j r_j <Q_j>."""
    return -sum(rates.r[j] * expectation(rho, ops.q[j]) for j in _labels(ops))
