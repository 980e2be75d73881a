"""Zeeman plus hyperfine Hamiltonian, initial state and unitary propagation.

Units: hbar = 1.  The field and hyperfine tensors are given in angular-frequency
units (the Bohr magneton and g/2 are absorbed); per-radical g deviations enter
as scalar multipliers on the electron spin operators.  The Hamiltonian is

    H = sum_m g_m S_m . (B + sum_k gamma_mk . I_mk)

built in the two-electron product basis |uu>, |ud>, |du>, |dd> and rotated to
the (S, T0, T+, T-) block order by the fixed unitary ``PRODUCT_TO_ST``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qcore import HilbertLayout, SuperOp, commutator_map, hermitize

_SQ = 1 / np.sqrt(2)

# Columns are |S>, |T0>, |T+>, |T-> in the product basis (uu, ud, du, dd).
PRODUCT_TO_ST = np.array([
    [0, 0, 1, 0],
    [_SQ, _SQ, 0, 0],
    [-_SQ, _SQ, 0, 0],
    [0, 0, 0, 1],
], dtype=complex)


def spin_matrices(multiplicity: int) -> tuple:
    """Angular momentum matrices (Sx, Sy, Sz) for spin (multiplicity - 1)/2."""
    if multiplicity < 2:
        raise ValueError(f"multiplicity must be >= 2, got {multiplicity}")
    s = (multiplicity - 1) / 2
    m = s - np.arange(multiplicity)
    # <m+1|S+|m> = sqrt(s(s+1) - m(m+1))
    sp = np.diag(np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1)), 1).astype(complex)
    sm = sp.conj().T
    sx = (sp + sm) / 2
    sy = (sp - sm) / 2j
    sz = np.diag(m).astype(complex)
    return sx, sy, sz


@dataclass(frozen=True)
class Nucleus:
    radical: int          # 1 or 2
    spin: float           # I = 1/2, 1, 3/2, ...
    hyperfine: np.ndarray  # 3x3 real tensor

    @property
    def multiplicity(self) -> int:
        return int(round(2 * self.spin + 1))

    @property
    def isotropic(self) -> bool:
        a = self.hyperfine[0, 0]
        return bool(np.max(np.abs(self.hyperfine - a * np.eye(3))) <= 1e-14)


def make_nucleus(radical: int, spin: float, hyperfine) -> Nucleus:
    """Nucleus with a scalar (isotropic) or 3x3 hyperfine coupling."""
    if radical not in (1, 2):
        raise ValueError(f"radical must be 1 or 2, got {radical}")
    twice = 2 * spin
    if spin <= 0 or abs(twice - round(twice)) > 1e-12:
        raise ValueError(f"nuclear spin must be a positive multiple of 1/2, got {spin}")
    a = np.asarray(hyperfine, dtype=float)
    if a.ndim == 0:
        a = float(a) * np.eye(3)
    if a.shape != (3, 3):
        raise ValueError(f"hyperfine tensor must be scalar or 3x3, got shape {a.shape}")
    return Nucleus(radical, float(spin), a)


@dataclass(frozen=True)
class SpinSystemSpec:
    field_b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g_factors: tuple = (1.0, 1.0)
    nuclei: tuple = ()

    def layout(self, high_field: bool = False) -> HilbertLayout:
        # radical 1 nuclei first, keeping the given order within each radical
        ordered = sorted(self.nuclei, key=lambda n: n.radical)
        return HilbertLayout(tuple(n.multiplicity for n in ordered), high_field)

    def with_field(self, b) -> "SpinSystemSpec":
        return SpinSystemSpec(np.asarray(b, dtype=float), self.g_factors, self.nuclei)


@dataclass(frozen=True)
class BetweenGenerator:
    """Generator between encounters: -i[H, .] plus an optional dissipator."""

    hamiltonian: np.ndarray
    dissipator: SuperOp | None = None

    def superop(self) -> SuperOp:
        gen = commutator_map(self.hamiltonian)
        if self.dissipator is not None:
            gen = gen + self.dissipator
        return gen

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.hamiltonian, 2))


def _electron_ops(g1: float, g2: float) -> list:
    """Two-electron spin operators in the product basis, [[S1x,S1y,S1z],[S2x,...]]."""
    s = spin_matrices(2)
    eye = np.eye(2)
    return [[g1 * np.kron(c, eye) for c in s], [g2 * np.kron(eye, c) for c in s]]


def build_hamiltonian_matrix(spec: SpinSystemSpec, layout: HilbertLayout) -> np.ndarray:
    """Hamiltonian on the full (blocks x nuclei) space, zero on the P block."""
    nuclei = sorted(spec.nuclei, key=lambda n: n.radical)
    dims = tuple(n.multiplicity for n in nuclei)
    if dims != layout.nuclear_dims:
        raise ValueError(f"spin system nuclear dims {dims} do not match layout {layout.nuclear_dims}")
    b = np.asarray(spec.field_b, dtype=float)
    if b.shape != (3,):
        raise ValueError(f"field must be a 3-vector, got shape {b.shape}")
    nn = layout.nuclear_dim
    eye_n = np.eye(nn)
    el = _electron_ops(*spec.g_factors)

    h = np.zeros((4 * nn, 4 * nn), dtype=complex)
    for m in range(2):
        for a in range(3):
            h += b[a] * np.kron(el[m][a], eye_n)
    for k, nuc in enumerate(nuclei):
        ik = spin_matrices(nuc.multiplicity)
        before = int(np.prod(dims[:k]))
        after = int(np.prod(dims[k + 1:]))
        # embed I_k into the nuclear register
        ik = [np.kron(np.kron(np.eye(before), c), np.eye(after)) for c in ik]
        s_m = el[nuc.radical - 1]
        for a in range(3):
            for c in range(3):
                if nuc.hyperfine[a, c] != 0:
                    h += nuc.hyperfine[a, c] * np.kron(s_m[a], ik[c])

    w = np.kron(PRODUCT_TO_ST, eye_n)
    h_st = w.conj().T @ h @ w
    ne = layout.electron_dim
    full = np.zeros((layout.total_dim,) * 2, dtype=complex)
    # In high-field mode the R block keeps only (S, T0), the first two ST states.
    full[:ne * nn, :ne * nn] = h_st[:ne * nn, :ne * nn]
    return hermitize(full)


def build_hamiltonian(spec: SpinSystemSpec, layout: HilbertLayout,
                      dissipator: SuperOp | None = None) -> BetweenGenerator:
    return BetweenGenerator(build_hamiltonian_matrix(spec, layout), dissipator)


def initial_state(layout: HilbertLayout) -> np.ndarray:
    """|S><S| tensored with the maximally mixed nuclear state."""
    return layout.pure_state({"S": 1.0})


class UnitaryPropagator:
    """exp(-i H t) from one cached Hermitian eigendecomposition."""

    def __init__(self, hamiltonian: np.ndarray):
        self.energies, self.vectors = np.linalg.eigh(hermitize(np.asarray(hamiltonian)))

    def unitary(self, t: float) -> np.ndarray:
        v = self.vectors
        return (v * np.exp(-1j * self.energies * t)) @ v.conj().T

    def evolve(self, rho: np.ndarray, t: float) -> np.ndarray:
        if t == 0:
            return rho
        u = self.unitary(t)
        return hermitize(u @ rho @ u.conj().T)

    def expectation_series(self, rho0: np.ndarray, q: np.ndarray):
        """Return f(t) = Tr[q rho(t)] evaluated in the eigenbasis."""
        v = self.vectors
        r = v.conj().T @ rho0 @ v
        qq = v.conj().T @ q @ v
        w = r * qq.T  # w[m, n] = r_mn q_nm
        e = self.energies

        def f(t):
            t = np.asarray(t, dtype=float)
            phase = np.exp(-1j * np.multiply.outer(t, e))
            # sum_mn r_mn q_nm exp(-i (E_m - E_n) t)
            val = np.einsum("...m,mn,...n->...", phase, w, phase.conj())
            return np.real(val)

        return f


def propagate_between(rho: np.ndarray, gen: BetweenGenerator, dt: float) -> np.ndarray:
    """Evolve rho for a time dt under the between-encounter generator."""
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    if gen.dissipator is None:
        return UnitaryPropagator(gen.hamiltonian).evolve(rho, dt)
    from scipy.linalg import expm
    n = gen.dim
    out = expm(gen.superop().matrix * dt) @ np.asarray(rho).reshape(-1)
    return hermitize(out.reshape(n, n))


def electron_state(rho: np.ndarray, layout: HilbertLayout, basis: str = "product") -> np.ndarray:
    """Reduced 4x4 two-electron state of the R block, nuclei traced out.

    The result is not renormalized; its trace is the pair population.
    ``basis`` is "product" (uu, ud, du, dd) or "st" (S, T0, T+, T-).
    """
    if layout.high_field:
        raise ValueError("the reduced two-electron state needs the full triplet layout")
    nn = layout.nuclear_dim
    r = np.asarray(rho)[:4 * nn, :4 * nn].reshape(4, nn, 4, nn)
    red = np.einsum("ajbj->ab", r)
    if basis == "st":
        return red
    if basis == "product":
        return PRODUCT_TO_ST @ red @ PRODUCT_TO_ST.conj().T
    raise ValueError(f"unknown basis {basis!r}")
