"""Hilbert-space layout, projector algebra and superoperators.

The chemical system is a radical pair (four electron-spin states S, T0, T+,
T-) plus a single recombined product state P, each tensored with the
nuclear-spin register.  The basis order is frozen:

    block index (S, T0, T+, T-, P) varies slowest, nuclear indices fastest.

So for a layout with nuclear dimension N the S block occupies rows 0..N-1,
T0 the rows N..2N-1 and so on, with P last.  Every CSV column that refers to
matrix elements depends on this ordering.

States are plain complex numpy arrays.  `check_density_matrix` validates the
density-matrix invariants when a caller wants them enforced.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import prod
from typing import Callable, Sequence

import numpy as np

LABELS = ("S", "T0", "T+", "T-")
TRIPLETS = ("T0", "T+", "T-")

HERMITIAN_TOL = 1e-12
POSITIVITY_TOL = -1e-10
TRACE_TOL = 1e-12
ZERO_TRACE = 1e-14


class ZeroTrace(ArithmeticError):
    """Raised when a state is conditioned away (trace numerically zero)."""


class InvariantViolation(ArithmeticError):
    """Raised when a numerical invariant fails beyond its tolerance."""


@dataclass(frozen=True)
class HilbertLayout:
    """Block structure of the chemical-system space.

    nuclear_dims lists 2I+1 for every nucleus, radical 1 nuclei first.  With
    ``high_field=True`` the T+ and T- blocks are dropped, leaving the
    S-T0 qubit plus P.
    """

    nuclear_dims: tuple = ()
    high_field: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.nuclear_dims)
        if any(d < 1 for d in dims):
            raise ValueError(f"nuclear dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "nuclear_dims", dims)

    @property
    def rp_labels(self) -> tuple:
        return ("S", "T0") if self.high_field else LABELS

    @property
    def triplet_labels(self) -> tuple:
        return tuple(j for j in self.rp_labels if j != "S")

    @property
    def block_labels(self) -> tuple:
        return self.rp_labels + ("P",)

    @property
    def nuclear_dim(self) -> int:
        return prod(self.nuclear_dims)

    @property
    def electron_dim(self) -> int:
        return len(self.rp_labels)

    @property
    def total_dim(self) -> int:
        return (self.electron_dim + 1) * self.nuclear_dim

    def block_index(self, label: str) -> int:
        return self.block_labels.index(label)

    def block_slice(self, label: str) -> slice:
        n = self.nuclear_dim
        b = self.block_index(label)
        return slice(b * n, (b + 1) * n)

    def embed(self, electron_op, nuclear_op=None) -> np.ndarray:
        """Tensor an operator on the block space with a nuclear operator."""
        if nuclear_op is None:
            nuclear_op = np.eye(self.nuclear_dim)
        return np.kron(electron_op, nuclear_op)

    def block_ket(self, label: str) -> np.ndarray:
        v = np.zeros(self.electron_dim + 1)
        v[self.block_index(label)] = 1.0
        return v

    def pure_state(self, amplitudes: dict, nuclear_state=None) -> np.ndarray:
        """Density matrix of a block superposition tensored with a nuclear state.

        ``amplitudes`` maps block labels to complex amplitudes (normalized here).
        ``nuclear_state`` defaults to the maximally mixed nuclear state.
        """
        v = np.zeros(self.electron_dim + 1, dtype=complex)
        for label, a in amplitudes.items():
            v[self.block_index(label)] = a
        v = v / np.linalg.norm(v)
        if nuclear_state is None:
            nuclear_state = np.eye(self.nuclear_dim) / self.nuclear_dim
        return np.kron(np.outer(v, v.conj()), nuclear_state)

    def mixed_state(self, populations: dict, nuclear_state=None) -> np.ndarray:
        """Incoherent block mixture; the label "T" spreads evenly over triplets."""
        w = np.zeros(self.electron_dim + 1)
        for label, p in populations.items():
            if label == "T":
                for t in self.triplet_labels:
                    w[self.block_index(t)] += p / len(self.triplet_labels)
            else:
                w[self.block_index(label)] += p
        if nuclear_state is None:
            nuclear_state = np.eye(self.nuclear_dim) / self.nuclear_dim
        return np.kron(np.diag(w).astype(complex), nuclear_state)


@dataclass(frozen=True)
class SubspaceOps:
    """Projectors Q_j and jump operators L_j = |P><j|, both tensored with 1_nuc."""

    layout: HilbertLayout
    q: dict
    l: dict

    def _get(self, label):
        if label in self.q:
            return self.q[label]
        return np.zeros((self.layout.total_dim,) * 2)

    @property
    def q_s(self):
        return self.q["S"]

    @property
    def q_t0(self):
        return self._get("T0")

    @property
    def q_tp(self):
        return self._get("T+")

    @property
    def q_tm(self):
        return self._get("T-")

    @cached_property
    def q_t(self):
        return sum(self.q[j] for j in self.layout.triplet_labels)

    @cached_property
    def q_r(self):
        return self.q_s + self.q_t

    @property
    def q_p(self):
        return self.q["P"]

    def projector(self, label: str) -> np.ndarray:
        """Q_j for a block label, with "T" the total triplet and "R" the pair."""
        if label == "T":
            return self.q_t
        if label == "R":
            return self.q_r
        return self.q[label]

    @property
    def identity(self):
        return np.eye(self.layout.total_dim)


def build_subspace_ops(layout: HilbertLayout) -> SubspaceOps:
    nb = layout.electron_dim + 1
    p = layout.block_index("P")
    q, l = {}, {}
    for label in layout.block_labels:
        e = np.zeros((nb, nb))
        b = layout.block_index(label)
        e[b, b] = 1.0
        q[label] = layout.embed(e)
    for label in layout.rp_labels:
        e = np.zeros((nb, nb))
        e[p, layout.block_index(label)] = 1.0
        l[label] = layout.embed(e)
    return SubspaceOps(layout, q, l)


class SuperOp:
    """Linear map on operators, rho -> sum_i A_i rho B_i.

    Held as a list of (A, B) factor pairs, or as a dense matrix acting on the
    row-major vectorized state, or both.  Either form converts to the other.
    Row-major vectorization gives vec(A rho B) = (A kron B^T) vec(rho).
    """

    def __init__(self, pairs: Sequence | None = None, matrix: np.ndarray | None = None,
                 dim: int | None = None):
        if pairs is None and matrix is None:
            raise ValueError("SuperOp needs factor pairs or a dense matrix")
        self._pairs = None if pairs is None else [(np.asarray(a), np.asarray(b)) for a, b in pairs]
        self._matrix = None if matrix is None else np.asarray(matrix, dtype=complex)
        if dim is None:
            if self._pairs:
                dim = self._pairs[0][0].shape[0]
            elif self._matrix is not None:
                dim = int(round(np.sqrt(self._matrix.shape[0])))
            else:
                raise ValueError("empty pair list needs an explicit dim")
        self.dim = dim

    @classmethod
    def identity(cls, dim: int) -> "SuperOp":
        eye = np.eye(dim)
        return cls([(eye, eye)])

    @classmethod
    def zero(cls, dim: int) -> "SuperOp":
        return cls([], dim=dim)

    @classmethod
    def sandwich(cls, a, b=None) -> "SuperOp":
        """rho -> a rho b, with b = a^dagger by default."""
        a = np.asarray(a)
        return cls([(a, a.conj().T if b is None else np.asarray(b))])

    @classmethod
    def from_callable(cls, fn: Callable, dim: int) -> "SuperOp":
        """Tabulate a linear function of rho column by column."""
        m = np.empty((dim * dim, dim * dim), dtype=complex)
        for k in range(dim * dim):
            e = np.zeros(dim * dim, dtype=complex)
            e[k] = 1.0
            m[:, k] = np.asarray(fn(e.reshape(dim, dim))).reshape(-1)
        return cls(matrix=m)

    @property
    def has_pairs(self) -> bool:
        return self._pairs is not None

    @property
    def pairs(self) -> list:
        if self._pairs is None:
            self._pairs = _pairs_from_matrix(self._matrix, self.dim)
        return self._pairs

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            n = self.dim
            m = np.zeros((n * n, n * n), dtype=complex)
            for a, b in self._pairs:
                m += np.kron(a, b.T)
            self._matrix = m
        return self._matrix

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho)
        if rho.shape != (self.dim, self.dim):
            raise ValueError(f"state shape {rho.shape} does not match map dimension {self.dim}")
        if self._matrix is not None:
            return (self._matrix @ rho.reshape(-1)).reshape(self.dim, self.dim)
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for a, b in self._pairs:
            out += a @ rho @ b
        return out

    def _check(self, other: "SuperOp"):
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch {self.dim} vs {other.dim}")

    def __add__(self, other: "SuperOp") -> "SuperOp":
        self._check(other)
        if self._pairs is not None and other._pairs is not None:
            return SuperOp(self._pairs + other._pairs, dim=self.dim)
        return SuperOp(matrix=self.matrix + other.matrix)

    def __sub__(self, other: "SuperOp") -> "SuperOp":
        return self + (-1.0) * other

    def __neg__(self) -> "SuperOp":
        return (-1.0) * self

    def __mul__(self, c) -> "SuperOp":
        if self._pairs is not None:
            return SuperOp([(c * a, b) for a, b in self._pairs], dim=self.dim)
        return SuperOp(matrix=c * self._matrix)

    __rmul__ = __mul__

    def __matmul__(self, other: "SuperOp") -> "SuperOp":
        """Composition: (self @ other)(rho) = self(other(rho))."""
        self._check(other)
        if self._pairs is not None and other._pairs is not None and \
                len(self._pairs) * len(other._pairs) <= 64:
            return SuperOp([(a1 @ a2, b2 @ b1) for a1, b1 in self._pairs
                            for a2, b2 in other._pairs], dim=self.dim)
        return SuperOp(matrix=self.matrix @ other.matrix)

    def dense(self) -> "SuperOp":
        """Copy holding only the dense matrix (fast repeated application)."""
        return SuperOp(matrix=self.matrix)

    def choi(self) -> np.ndarray:
        """Choi matrix sum_ij |i><j| kron map(|i><j|)."""
        n = self.dim
        # matrix[(a,b),(i,j)] -> choi[(i,a),(j,b)]
        t = self.matrix.reshape(n, n, n, n)
        return t.transpose(2, 0, 3, 1).reshape(n * n, n * n)

    def is_completely_positive(self, tol: float = 1e-10) -> bool:
        c = self.choi()
        c = (c + c.conj().T) / 2
        return bool(np.linalg.eigvalsh(c)[0] >= -tol)

    def trace_functional(self) -> np.ndarray:
        """Operator E with Tr[map(rho)] = Tr[E rho] (the dual map applied to 1)."""
        n = self.dim
        t = self.matrix.reshape(n, n, n, n)
        # Tr map(rho) = sum_a sum_ij M[(a,a),(i,j)] rho_ij = Tr(E rho), E_ji = sum_a M[a,a,i,j]
        return np.einsum("aaij->ji", t)

    def is_trace_preserving(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.trace_functional() - np.eye(self.dim))) < tol)

    def is_trace_non_increasing(self, tol: float = 1e-10) -> bool:
        e = self.trace_functional()
        e = (e + e.conj().T) / 2
        return bool(np.linalg.eigvalsh(e)[-1] <= 1 + tol)

    def norm(self) -> float:
        """Spectral norm of the dense superoperator matrix."""
        return float(np.linalg.norm(self.matrix, 2))


def _pairs_from_matrix(m: np.ndarray, n: int) -> list:
    # Decompose through matrix units: rho -> sum_{ab,ij} M[(a,b),(i,j)] |a><i| rho |j><b|
    t = m.reshape(n, n, n, n)
    pairs = []
    for a in range(n):
        for i in range(n):
            left = np.zeros((n, n), dtype=complex)
            left[a, i] = 1.0
            right = t[a, :, i, :].T.copy()  # right[j, b] = M[a,b,i,j]
            if np.any(right):
                pairs.append((left, right))
    if not pairs:
        pairs = [(np.zeros((n, n)), np.zeros((n, n)))]
    return pairs


def lindblad_dissipator(c: np.ndarray) -> SuperOp:
    """D(c) rho = c rho c^dagger - 1/2 {c^dagger c, rho}."""
    c = np.asarray(c)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"jump operator must be square, got shape {c.shape}")
    n = c.shape[0]
    cd = c.conj().T
    k = cd @ c
    eye = np.eye(n)
    return SuperOp([(c, cd), (-0.5 * k, eye), (-0.5 * eye, k)])


def commutator_map(h: np.ndarray) -> SuperOp:
    """rho -> -i [H, rho]."""
    h = np.asarray(h)
    eye = np.eye(h.shape[0])
    return SuperOp([(-1j * h, eye), (1j * eye, h)])


def anticommutator_map(q: np.ndarray) -> SuperOp:
    """rho -> {q, rho}."""
    q = np.asarray(q)
    eye = np.eye(q.shape[0])
    return SuperOp([(q, eye), (eye, q)])


def hermitize(rho: np.ndarray) -> np.ndarray:
    return 0.5 * (rho + rho.conj().T)


def expectation(rho: np.ndarray, q: np.ndarray) -> float:
    rho = np.asarray(rho)
    q = np.asarray(q)
    if rho.shape != q.shape:
        raise ValueError(f"dimension mismatch {rho.shape} vs {q.shape}")
    # Tr(rho q) without forming the product
    return float(np.real(np.sum(rho * q.T)))


def normalize(rho_n: np.ndarray) -> tuple:
    """Return (rho_N / Tr rho_N, Tr rho_N)."""
    p = float(np.real(np.trace(rho_n)))
    if p <= ZERO_TRACE:
        raise ZeroTrace(f"trace {p:.3e} is numerically zero")
    return rho_n / p, p


def validate_inicon(rho: np.ndarray, ops: SubspaceOps, tol: float = 1e-10) -> bool:
    """True when the state has no R-P coherence, i.e. rho = rho_R + rho_P."""
    return bool(np.max(np.abs(ops.q_r @ rho @ ops.q_p)) < tol)


def check_density_matrix(rho: np.ndarray, normalized: bool = True) -> None:
    """Raise InvariantViolation unless rho is a valid (possibly improper) state."""
    rho = np.asarray(rho)
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > HERMITIAN_TOL:
        raise InvariantViolation(f"state is not Hermitian (deviation {herm:.3e})")
    lam = np.linalg.eigvalsh(hermitize(rho))[0]
    if lam < POSITIVITY_TOL:
        raise InvariantViolation(f"state is not positive (smallest eigenvalue {lam:.3e})")
    tr = float(np.real(np.trace(rho)))
    if normalized and abs(tr - 1) > 1e-10:
        raise InvariantViolation(f"normalized state has trace {tr!r}")
    if not -TRACE_TOL <= tr <= 1 + TRACE_TOL:
        raise InvariantViolation(f"trace {tr!r} outside [0, 1]")


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Half the trace norm of the (Hermitian) difference."""
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(hermitize(a - b)))))


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.sum(rho * rho.T)))


def rk4_step(rhs: Callable, t: float, rho: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, rho)
    k2 = rhs(t + h / 2, rho + h / 2 * k1)
    k3 = rhs(t + h / 2, rho + h / 2 * k2)
    k4 = rhs(t + h, rho + h * k3)
    return rho + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_rk4(rhs: Callable, rho0: np.ndarray, times: Sequence, max_step: float,
                  hermitian: bool = True) -> np.ndarray:
    """Fixed-step RK4 from times[0], returning the state at every entry of times.

    Each interval between grid times is split into equal steps no longer than
    max_step.  States are Hermitized after every step when ``hermitian``.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise ValueError("time grid must be non-decreasing")
    rho = np.array(rho0, dtype=complex)
    out = np.empty((len(times),) + rho.shape, dtype=complex)
    t = times[0]
    out[0] = rho
    for k in range(1, len(times)):
        span = times[k] - t
        if span > 0:
            n = max(1, int(np.ceil(span / max_step - 1e-9)))
            h = span / n
            for i in range(n):
                rho = rk4_step(rhs, t + i * h, rho, h)
                if hermitian:
                    rho = hermitize(rho)
        t = times[k]
        out[k] = rho
    return out


def default_step(max_rate: float, h_norm: float = 0.0) -> float:
    """Step size min(0.01/max-rate, 0.01/||H||), falling back to 0.01."""
    scale = max(max_rate, h_norm)
    return 0.01 / scale if scale > 0 else 0.01


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-distributed random state, used by property tests and demos."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_inicon_state(ops: SubspaceOps, rng: np.random.Generator) -> np.ndarray:
    """Random state of the form rho_R + rho_P (no R-P coherence)."""
    rho = random_density_matrix(ops.layout.total_dim, rng)
    rho = ops.q_r @ rho @ ops.q_r + ops.q_p @ rho @ ops.q_p
    return rho / np.trace(rho).real
