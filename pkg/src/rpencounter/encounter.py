"""Encounters as generalized measurements.

During an encounter the pair couples to a model environment with ground state
|0> and excited states |pi_j>, |delta_j>:

    H_I = sum_j ( pi_j L_j (x) |pi_j><0| + delta_j Q_j (x) |delta_j><0| + h.c. ),
    U = exp(-i kappa H_I).

With c_j = |pi_j|^2 + |delta_j|^2 and phi_j = kappa sqrt(c_j) the action on |0>
is known in closed form, giving the Kraus operators

    K_0       = Q_P + sum_j cos(phi_j) Q_j
    K_pi_j    = -i kappa pi_j sinc(phi_j) L_j
    K_delta_j = -i kappa delta_j sinc(phi_j) Q_j

A click in channel j is the environment found in |pi_j>; every other outcome
is "no click".  The maps are stored through the block coherence matrix G of
the no-click map, A_0 rho = sum_ab G_ab Q_a rho Q_b over blocks a, b in
(P, S, T0, T+, T-).  For a single encounter G = g g^T + diag(0, d~) with
g = (1, cos phi_j), so G is positive semidefinite and A_0 is completely
positive on the full space, not only on states without R-P coherence.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .qcore import LABELS, TRIPLETS, HilbertLayout, SubspaceOps, SuperOp, build_subspace_ops
from .reactops import MODES, ReactionRates, jump_map, triplet_coherence_map, projection_map

log = logging.getLogger(__name__)

RANGE_TOL = 1e-12


def sinc(x):
    """sin(x)/x with sinc(0) = 1."""
    return np.sinc(np.asarray(x) / np.pi)


def _expand_complex(values: dict, name: str) -> dict:
    out = {}
    for key, val in values.items():
        if key == "T":
            for t in TRIPLETS:
                out.setdefault(t, complex(val))
        elif key in LABELS:
            out[key] = complex(val)
        else:
            raise ValueError(f"unknown channel {key!r} in {name}")
    for j in LABELS:
        out.setdefault(j, 0j)
    return out


@dataclass(frozen=True)
class EncounterCoupling:
    kappa: float
    pi: dict
    delta: dict = field(default_factory=dict)
    mode: str = "general"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown symmetry mode {self.mode!r}")
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        pi = _expand_complex(self.pi, "pi")
        delta = _expand_complex(self.delta, "delta")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "delta", delta)
        if self.mode != "general":
            for name, tab in (("pi", pi), ("delta", delta)):
                mags = [abs(tab[t]) for t in TRIPLETS]
                if max(mags) - min(mags) > 1e-12 * max(1.0, max(mags)):
                    raise ValueError(f"{self.mode} needs equal triplet |{name}|, got {mags}")
        if self.mode == "triplet_symmetric_no_t_dephasing" and abs(delta["T0"]) > 0:
            raise ValueError("triplet_symmetric_no_t_dephasing needs delta_T = 0")

    def phi(self) -> dict:
        return {j: self.kappa * np.sqrt(abs(self.pi[j]) ** 2 + abs(self.delta[j]) ** 2) for j in LABELS}

    @property
    def collapsed(self) -> bool:
        return self.mode != "general"


class EncounterClass(str, Enum):
    BRIGHT_VON_NEUMANN = "Bright/VonNeumann"
    DARK_PURE_DEPHASING = "Dark/PureDephasing"
    DARK_IDENTITY = "Dark/Identity"
    DARK_GROVER = "Dark/Grover"
    GENERIC = "Generic"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class EncounterMapParams:
    """Coefficients of the encounter maps.

    ``coherence`` is the block coherence matrix G over BLOCKS.  For averaged
    encounters ``phi`` is None and every other field is the weighted mean.
    """

    r_tilde: dict
    d_tilde: dict
    coherence: np.ndarray
    mode: str
    phi: dict | None = None
    pi_zero: bool = False
    warnings: tuple = ()

    BLOCKS = ("P",) + LABELS

    def g(self, a: str, b: str) -> float:
        return float(self.coherence[self.BLOCKS.index(a), self.BLOCKS.index(b)])

    @property
    def c_jk(self) -> dict:
        return {(j, k): self.g(j, k) for j in LABELS for k in LABELS if j != k}

    @property
    def eta_tilde(self) -> float:
        """1 - cos(phi_S) cos(phi_T), the S-T coherence loss per encounter."""
        return 1.0 - self.g("S", "T0")

    @property
    def eta_tilde_j(self) -> dict:
        eta = self.eta_tilde
        if eta <= 0:
            return {"S": 0.0, "T": 0.0}
        return {"S": self.r_tilde["S"] / eta, "T": self.r_tilde["T0"] / eta}

    @property
    def collapsed(self) -> bool:
        return self.mode != "general"


def _check_ranges(r_tilde, d_tilde, phi, coherence, mode) -> tuple:
    msgs = []
    for j in LABELS:
        if not -RANGE_TOL <= r_tilde[j] <= 1 + RANGE_TOL:
            msgs.append(f"r~_{j} = {r_tilde[j]!r} outside [0, 1]")
        if d_tilde[j] < -RANGE_TOL:
            msgs.append(f"d~_{j} = {d_tilde[j]!r} negative")
        if phi is not None and abs(r_tilde[j] + d_tilde[j] - np.sin(phi[j]) ** 2) > 1e-12:
            msgs.append(f"r~_{j} + d~_{j} != sin^2 phi_{j}")
    if mode != "general":
        eta = 1.0 - coherence[1, 2]
        if not -RANGE_TOL <= eta <= 2 + RANGE_TOL:
            msgs.append(f"eta~ = {eta!r} outside [0, 2]")
        if eta > RANGE_TOL:
            es, et = r_tilde["S"] / eta, r_tilde["T0"] / eta
            for name, v in (("eta~_S", es), ("eta~_T", et), ("eta~_S + eta~_T", es + et)):
                if not -1e-9 <= v <= 2 + 1e-9:
                    msgs.append(f"{name} = {v!r} outside [0, 2]")
    for m in msgs:
        log.warning("encounter parameter range: %s", m)
    return tuple(msgs)


def derive_map_params(coupling: EncounterCoupling) -> EncounterMapParams:
    kappa = coupling.kappa
    phi = coupling.phi()
    s2 = {j: sinc(phi[j]) ** 2 for j in LABELS}
    r_tilde = {j: float(kappa ** 2 * abs(coupling.pi[j]) ** 2 * s2[j]) for j in LABELS}
    d_tilde = {j: float(kappa ** 2 * abs(coupling.delta[j]) ** 2 * s2[j]) for j in LABELS}
    g = np.array([1.0] + [np.cos(phi[j]) for j in LABELS])
    coherence = np.outer(g, g) + np.diag([0.0] + [d_tilde[j] for j in LABELS])
    warnings = _check_ranges(r_tilde, d_tilde, phi, coherence, coupling.mode)
    pi_zero = all(abs(coupling.pi[j]) == 0 for j in LABELS)
    return EncounterMapParams(r_tilde, d_tilde, coherence, coupling.mode, phi, pi_zero, warnings)


@dataclass(frozen=True)
class EncounterMaps:
    a_j: dict
    a_0: SuperOp
    params: EncounterMapParams
    efficiencies: dict | None = None
    layout: HilbertLayout | None = None

    @property
    def channels(self) -> tuple:
        return tuple(self.a_j)

    @property
    def a_cpt(self) -> SuperOp:
        return sum(self.a_j.values(), self.a_0)

    @property
    def click_map(self) -> SuperOp:
        """B = sum_j A_j, the map of any click."""
        return sum(self.a_j.values(), SuperOp.zero(self.a_0.dim))


def _channels(layout: HilbertLayout, collapsed: bool) -> tuple:
    return ("S", "T") if collapsed else layout.rp_labels


def _channel_rate(params: EncounterMapParams, channel: str) -> float:
    return params.r_tilde["T0" if channel == "T" else channel]


def build_maps(params: EncounterMapParams, ops: SubspaceOps, mode: str | None = None,
               check: bool = True) -> EncounterMaps:
    """A_j = r~_j L_j . L_j^dagger (collapsed triplet channel in symmetric modes) and
    A_0 = sum_ab G_ab Q_a . Q_b."""
    mode = params.mode if mode is None else mode
    if mode not in MODES:
        raise ValueError(f"unknown symmetry mode {mode!r}")
    if (mode == "general") != (params.mode == "general"):
        raise ValueError(f"maps requested in mode {mode!r} but params are {params.mode!r}")
    layout = ops.layout
    blocks = layout.block_labels
    pairs = []
    for a in blocks:
        for b in blocks:
            gab = params.g(a, b)
            if gab != 0:
                pairs.append((gab * ops.q[a], ops.q[b]))
    a_0 = SuperOp(pairs, dim=layout.total_dim)
    a_j = {c: _channel_rate(params, c) * jump_map(ops, c) for c in _channels(layout, mode != "general")}
    maps = EncounterMaps(a_j, a_0, params, None, layout)
    if check:
        _verify_maps(maps, params, layout)
    return maps


def _verify_maps(maps: EncounterMaps, params: EncounterMapParams, layout: HilbertLayout):
    idx = [EncounterMapParams.BLOCKS.index(b) for b in layout.block_labels]
    g = params.coherence[np.ix_(idx, idx)]
    lam = np.linalg.eigvalsh((g + g.T) / 2)[0]
    if lam < -1e-10:
        raise ValueError(f"no-click map is not completely positive (coherence eigenvalue {lam:.3e})")
    if layout.total_dim <= 20:
        for name, m in [("A_0", maps.a_0)] + [(f"A_{c}", a) for c, a in maps.a_j.items()]:
            if not m.is_completely_positive():
                raise ValueError(f"{name} is not completely positive")
    if not maps.a_cpt.is_trace_preserving(1e-12):
        raise ValueError("encounter maps violate the CPT sum rule")


@dataclass(frozen=True)
class DetectionEfficiencies:
    """Per-channel detection efficiencies; "T" applies to every triplet level."""

    eta_d: dict

    def __post_init__(self):
        for k, v in self.eta_d.items():
            if k not in LABELS + ("T",):
                raise ValueError(f"unknown detection channel {k!r}")
            if not 0 <= v <= 1:
                raise ValueError(f"detection efficiency {k} = {v} outside [0, 1]")

    @classmethod
    def perfect(cls) -> "DetectionEfficiencies":
        return cls({"S": 1.0, "T": 1.0})

    def for_channel(self, channel: str) -> float:
        if channel in self.eta_d:
            return float(self.eta_d[channel])
        if channel in TRIPLETS and "T" in self.eta_d:
            return float(self.eta_d["T"])
        if channel == "T":
            vals = {self.eta_d.get(t) for t in TRIPLETS}
            if len(vals) == 1 and None not in vals:
                return float(vals.pop())
            raise ValueError(f"collapsed triplet channel needs one triplet efficiency, got {self.eta_d}")
        raise ValueError(f"no detection efficiency for channel {channel!r}")


def with_detection(maps: EncounterMaps, eff: DetectionEfficiencies) -> EncounterMaps:
    """A_j -> eta_j A_j and A_0 -> A_0 + sum_j (1 - eta_j) A_j."""
    effs = {c: eff.for_channel(c) for c in maps.channels}
    a_j = {c: effs[c] * a for c, a in maps.a_j.items()}
    a_0 = maps.a_0
    for c, a in maps.a_j.items():
        if effs[c] != 1:
            a_0 = a_0 + (1 - effs[c]) * a
    return EncounterMaps(a_j, a_0, maps.params, effs, maps.layout)


def build_encounter(coupling: EncounterCoupling, layout: HilbertLayout,
                    eff: DetectionEfficiencies | None = None) -> EncounterMaps:
    """Convenience: params, maps and detection in one call."""
    ops = build_subspace_ops(layout)
    maps = build_maps(derive_map_params(coupling), ops, coupling.mode)
    return maps if eff is None else with_detection(maps, eff)


def average_params(entries: list) -> EncounterMapParams:
    """Weighted mean of encounter parameters; entries are (weight, coupling)."""
    if not entries:
        raise ValueError("averaging needs at least one entry")
    weights = np.array([w for w, _ in entries], dtype=float)
    if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
        raise ValueError(f"weights must be non-negative and sum to 1, got {weights.tolist()}")
    modes = {c.mode for _, c in entries}
    if len(modes) != 1:
        raise ValueError(f"all averaged couplings must share one symmetry mode, got {sorted(modes)}")
    plist = [derive_map_params(c) for _, c in entries]
    if len(plist) == 1:
        return plist[0]
    r_tilde = {j: float(sum(w * p.r_tilde[j] for w, p in zip(weights, plist))) for j in LABELS}
    d_tilde = {j: float(sum(w * p.d_tilde[j] for w, p in zip(weights, plist))) for j in LABELS}
    coherence = sum(w * p.coherence for w, p in zip(weights, plist))
    mode = modes.pop()
    warnings = _check_ranges(r_tilde, d_tilde, None, coherence, mode)
    pi_zero = all(p.pi_zero for p in plist)
    return EncounterMapParams(r_tilde, d_tilde, coherence, mode, None, pi_zero, warnings)


def average_maps(entries: list, ops: SubspaceOps) -> EncounterMaps:
    """Maps of the averaged encounter sum_lambda p_lambda A^(lambda)."""
    params = average_params(entries)
    return build_maps(params, ops, params.mode)


@dataclass(frozen=True)
class WeakLimit:
    rates: ReactionRates
    rel_error: float
    weak: bool


def weak_limit(coupling: EncounterCoupling, rate: float, threshold: float = 1e-2) -> WeakLimit:
    """Rates r_j = rate kappa^2 |pi_j|^2 and d_j = rate kappa^2 |delta_j|^2.

    ``rel_error`` is the largest relative gap between rate * r~_j (or d~_j)
    and the weak-limit rate; it is 1 - sinc^2(phi_j) and grows like kappa^2.
    """
    if not rate > 0:
        raise ValueError(f"encounter rate must be > 0, got {rate}")
    k2 = coupling.kappa ** 2
    r = {j: rate * k2 * abs(coupling.pi[j]) ** 2 for j in LABELS}
    d = {j: rate * k2 * abs(coupling.delta[j]) ** 2 for j in LABELS}
    phi = coupling.phi()
    err = 0.0
    for j in LABELS:
        if r[j] > 0 or d[j] > 0:
            err = max(err, float(1.0 - sinc(phi[j]) ** 2))
    return WeakLimit(ReactionRates(r, d, coupling.mode), err, err < threshold)


def classify(params: EncounterMapParams, tol: float = 1e-10) -> EncounterClass:
    r = [params.r_tilde[j] for j in LABELS]
    if all(abs(x - 1) <= tol for x in r):
        return EncounterClass.BRIGHT_VON_NEUMANN
    if not all(abs(x) <= tol for x in r):
        return EncounterClass.GENERIC
    g = params.coherence[1:, 1:]
    if np.all(np.abs(np.abs(g) - 1) <= tol):
        # a unitary dark encounter: signs relative to the singlet
        s = np.sign(g[0])
        if np.all(s > 0):
            return EncounterClass.DARK_IDENTITY
        if np.all(s[1:] < 0) and np.all(np.sign(g[1:, 1:]) > 0):
            return EncounterClass.DARK_GROVER
        return EncounterClass.GENERIC
    return EncounterClass.DARK_PURE_DEPHASING


@dataclass(frozen=True)
class EffectivePOVM:
    s: np.ndarray
    t: np.ndarray
    none: np.ndarray
    nu: dict
    mu: dict

    @property
    def none_positive(self) -> bool:
        """The no-click element is positive only while both eta~_j <= 1."""
        return bool(np.linalg.eigvalsh(self.none)[0] >= -1e-12)


def effective_r_povm(params: EncounterMapParams, ops: SubspaceOps) -> EffectivePOVM:
    """Pair-subspace POVM with nu_j = min(eta~_j, 1), mu_j = max(eta~_j, 1) - 1."""
    if params.eta_tilde <= 1e-14:
        raise ValueError("eta~ = 0: the encounter performs no effective measurement")
    ej = params.eta_tilde_j
    nu = {j: min(ej[j], 1.0) for j in ej}
    mu = {j: max(ej[j], 1.0) - 1.0 for j in ej}
    qs, qt = ops.q_s, ops.q_t
    return EffectivePOVM(
        s=nu["S"] * qs + mu["T"] * qt,
        t=nu["T"] * qt + mu["S"] * qs,
        none=(1 - ej["S"]) * qs + (1 - ej["T"]) * qt,
        nu=nu, mu=mu,
    )


def stp_dephasing(ops: SubspaceOps) -> SuperOp:
    """The S-T-P dephasing map Q = Q_P . Q_P + Q_S . Q_S + Q_T . Q_T."""
    return projection_map(ops.q_p) + projection_map(ops.q_s) + projection_map(ops.q_t)


def symmetric_no_click_form(params: EncounterMapParams, ops: SubspaceOps) -> SuperOp:
    """(1 - eta~) + eta~ [Q_P + sum_j (1 - eta~_j) Q_j] + d~_T Q_coh, for collapsed params.

    Agrees with ``build_maps(...).a_0`` on states without R-P coherence.
    """
    eta = params.eta_tilde
    n = ops.layout.total_dim
    # eta~ (1 - eta~_j) = eta~ - r~_j, which stays finite at eta~ = 0
    out = (1 - eta) * SuperOp.identity(n) + eta * projection_map(ops.q_p)
    for c, q in (("S", ops.q_s), ("T", ops.q_t)):
        out = out + (eta - _channel_rate(params, c)) * projection_map(q)
    if params.d_tilde["T0"]:
        out = out + params.d_tilde["T0"] * triplet_coherence_map(ops)
    return out


def symmetric_cpt_form(params: EncounterMapParams, ops: SubspaceOps) -> SuperOp:
    """(1 - eta~) + eta~ Q + sum_j r~_j (<Q_j> Q_P - Q_j . Q_j) (+ d~_T Q_coh)."""
    eta = params.eta_tilde
    n = ops.layout.total_dim
    out = (1 - eta) * SuperOp.identity(n) + eta * stp_dephasing(ops)
    for c, q in (("S", ops.q_s), ("T", ops.q_t)):
        out = out + _channel_rate(params, c) * (jump_map(ops, c) - projection_map(q))
    if params.d_tilde["T0"]:
        out = out + params.d_tilde["T0"] * triplet_coherence_map(ops)
    return out


def environment_labels(coupling: EncounterCoupling) -> list:
    """Environment basis |0>, |pi_j>, |delta_j>; delta_T levels dropped without triplet dephasing."""
    labels = ["0"] + [f"pi_{j}" for j in LABELS]
    if coupling.mode == "triplet_symmetric_no_t_dephasing":
        labels.append("delta_S")
    else:
        labels += [f"delta_{j}" for j in LABELS]
    return labels


def interaction_hamiltonian(coupling: EncounterCoupling, ops: SubspaceOps) -> np.ndarray:
    """H_I on system (x) environment, environment index fastest."""
    env = environment_labels(coupling)
    ne = len(env)
    h = np.zeros((ops.layout.total_dim * ne,) * 2, dtype=complex)
    for j in ops.layout.rp_labels:
        for name, amp, op in ((f"pi_{j}", coupling.pi[j], ops.l[j]),
                              (f"delta_{j}", coupling.delta[j], ops.q[j])):
            if name not in env or amp == 0:
                continue
            e = np.zeros((ne, ne))
            e[env.index(name), 0] = 1.0
            term = amp * np.kron(op, e)
            h += term + term.conj().T
    return h


def encounter_unitary(coupling: EncounterCoupling, ops: SubspaceOps) -> np.ndarray:
    """U = exp(-i kappa H_I) by Hermitian eigendecomposition."""
    h = interaction_hamiltonian(coupling, ops)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * coupling.kappa * w)) @ v.conj().T


def kraus_operators(coupling: EncounterCoupling, ops: SubspaceOps) -> dict:
    """Closed-form <e|U|0> for every environment level e."""
    phi = coupling.phi()
    k = coupling.kappa
    labs = ops.layout.rp_labels
    out = {"0": ops.q_p + sum(np.cos(phi[j]) * ops.q[j] for j in labs)}
    for j in labs:
        out[f"pi_{j}"] = -1j * k * coupling.pi[j] * sinc(phi[j]) * ops.l[j]
        out[f"delta_{j}"] = -1j * k * coupling.delta[j] * sinc(phi[j]) * ops.q[j]
    return {e: out[e] for e in environment_labels(coupling)}


def encounter_isometry(coupling: EncounterCoupling, ops: SubspaceOps) -> np.ndarray:
    """Closed-form U(. (x) |0>) as a (system*env, system) matrix."""
    kraus = kraus_operators(coupling, ops)
    env = environment_labels(coupling)
    n = ops.layout.total_dim
    v = np.zeros((n * len(env), n), dtype=complex)
    for i, e in enumerate(env):
        v[i::len(env), :] = kraus[e]
    return v
