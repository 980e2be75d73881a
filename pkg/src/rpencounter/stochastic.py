"""Random encounter times, single trajectories and ensemble averages.

Encounters arrive as a Poisson process with rate r(t).  Between encounters the
state evolves under the between-encounter generator; at an encounter one
outcome (a click in some channel, or no click) is drawn with probability
Tr[A_i rho] and the state is replaced by A_i rho / Tr[A_i rho].

Random streams are counter-based (Philox) and keyed by (seed, trajectory
index), so a trajectory does not depend on how work is split across workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .encounter import DetectionEfficiencies, EncounterMaps, with_detection
from .qcore import SuperOp, default_step, hermitize, integrate_rk4
from .spinham import BetweenGenerator, UnitaryPropagator

CHUNK = 64
RATE_KINDS = ("constant", "exponential", "algebraic")


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent Philox stream for one trajectory."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


@dataclass(frozen=True)
class RateModel:
    """Encounter rate r(t): constant r, r exp(-a t) or (r^(-1/mu) + a t)^(-mu)."""

    kind: str = "constant"
    r: float = 1.0
    a: float = 0.0
    mu: float = 1.5
    t_inf: float | None = None

    def __post_init__(self):
        if self.kind not in RATE_KINDS:
            raise ValueError(f"unknown rate model {self.kind!r}")
        if self.r < 0 or self.a < 0:
            raise ValueError(f"rate parameters must be non-negative (r={self.r}, a={self.a})")
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")

    @property
    def cutoff(self) -> float:
        """t_inf, defaulting to 20 / r(0)."""
        if self.t_inf is not None:
            return float(self.t_inf)
        return 20.0 / self.r if self.r > 0 else 0.0

    @property
    def homogeneous(self) -> bool:
        return self.kind == "constant" or self.a == 0

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        if self.homogeneous:
            return np.full_like(t, self.r)
        if self.kind == "exponential":
            return self.r * np.exp(-self.a * t)
        if self.r == 0:
            return np.zeros_like(t)
        return (self.r ** (-1 / self.mu) + self.a * t) ** (-self.mu)

    def integrated(self, t):
        """Integral of r(s) from 0 to t."""
        t = np.asarray(t, dtype=float)
        if self.homogeneous:
            return self.r * t
        if self.kind == "exponential":
            return self.r * -np.expm1(-self.a * t) / self.a
        if self.r == 0:
            return np.zeros_like(t)
        c = self.r ** (-1 / self.mu)
        if self.mu == 1:
            return np.log1p(self.a * t / c) / self.a
        return (c ** (1 - self.mu) - (c + self.a * t) ** (1 - self.mu)) / (self.a * (self.mu - 1))

    def first_encounter_density(self, t):
        return self.rate(t) * np.exp(-self.integrated(t))


def binomial_pmf(k: int, n: int, p: float) -> float:
    """b_kn(p) = C(n, k) p^k (1-p)^(n-k), evaluated through log-gamma."""
    if not (0 <= k <= n) or int(k) != k or int(n) != n:
        raise ValueError(f"need integers 0 <= k <= n, got k={k}, n={n}")
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 0:
        return 1.0 if k == 0 else 0.0
    if p == 1:
        return 1.0 if k == n else 0.0
    logc = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return float(np.exp(logc + k * np.log(p) + (n - k) * np.log1p(-p)))


def sample_encounters(model: RateModel, t_end: float, rng: np.random.Generator) -> list:
    """Encounter times in [0, t_end]; thinning against r(0) for declining rates."""
    rmax = model.r
    if rmax <= 0 or t_end <= 0:
        return []
    times = []
    t = 0.0
    while True:
        t += rng.exponential(1 / rmax)
        if t > t_end:
            return times
        if model.homogeneous or rng.random() * rmax < model.rate(t):
            times.append(t)


def sample_encounter_counts(model: RateModel, t_end: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised count of encounters in [0, t_end] for n independent pairs."""
    counts = np.zeros(n, dtype=np.int64)
    rmax = model.r
    if rmax <= 0 or t_end <= 0:
        return counts
    t = np.zeros(n)
    active = np.arange(n)
    while active.size:
        t[active] += rng.exponential(1 / rmax, active.size)
        active = active[t[active] <= t_end]
        if not model.homogeneous:
            keep = rng.random(active.size) * rmax < model.rate(t[active])
            counts[active[keep]] += 1
        else:
            counts[active] += 1
    return counts


@dataclass
class ClickRecord:
    """Encounter times with their outcome label (a channel or "none")."""

    events: list = field(default_factory=list)

    def clicks(self) -> list:
        return [(t, lab) for t, lab in self.events if lab != "none"]

    def __len__(self):
        return len(self.events)


class ConditionedAway(RuntimeError):
    """A dark (no-click) trajectory produced a click under the abort policy."""


@dataclass
class TrajectoryResult:
    states: np.ndarray          # (n_grid, d, d)
    record: ClickRecord
    dark: np.ndarray            # bool per grid time: no click so far


def unconditional_generator(maps: EncounterMaps, rate: float) -> SuperOp:
    """r (A_CPT - 1)."""
    return rate * (maps.a_cpt - SuperOp.identity(maps.a_0.dim))


class TrajectorySimulator:
    """Precomputed maps and propagator shared by all trajectories of a run.

    ``dark=True`` conditions on seeing no click: a trajectory that clicks is
    discarded from that time on (policy "discard") or aborts the run
    ("abort").  ``picture="heisenberg"`` evolves the interaction-frame state
    and conjugates every encounter map with the free evolution instead.
    """

    def __init__(self, between: BetweenGenerator, maps: EncounterMaps,
                 eff: DetectionEfficiencies | None, model: RateModel, grid,
                 dark: bool = False, policy: str = "discard", picture: str = "schroedinger"):
        if policy not in ("discard", "abort"):
            raise ValueError(f"unknown conditioning policy {policy!r}")
        if picture not in ("schroedinger", "heisenberg"):
            raise ValueError(f"unknown picture {picture!r}")
        if picture == "heisenberg" and between.dissipator is not None:
            raise ValueError("the interaction picture needs a purely unitary between generator")
        if eff is not None:
            maps = with_detection(maps, eff)
        self.maps = maps
        self.model = model
        self.grid = np.asarray(grid, dtype=float)
        if np.any(np.diff(self.grid) < 0) or self.grid[0] < 0:
            raise ValueError("time grid must be sorted and non-negative")
        self.dark = dark
        self.policy = policy
        self.picture = picture
        self.between = between
        self.outcomes = list(maps.channels) + ["none"]
        self._maps = [maps.a_j[c].dense() for c in maps.channels] + [maps.a_0.dense()]
        self._effects = [m.trace_functional() for m in self._maps]
        self._prop = UnitaryPropagator(between.hamiltonian)
        self._static = bool(np.max(np.abs(between.hamiltonian)) == 0) and between.dissipator is None
        self._liouville = None
        if between.dissipator is not None:
            self._liouville = between.superop().matrix
        # P states are fixed points of every encounter map and of H, so a
        # trajectory that has fully recombined can skip the remaining work.
        self._p_slice = None
        if maps.layout is not None and between.dissipator is None:
            self._p_slice = maps.layout.block_slice("P")

    def _evolve(self, rho, dt):
        if dt <= 0 or self._static:
            return rho
        if self._liouville is not None:
            from scipy.linalg import expm
            n = rho.shape[0]
            return hermitize((expm(self._liouville * dt) @ rho.reshape(-1)).reshape(n, n))
        return self._prop.evolve(rho, dt)

    def _absorbed(self, rho) -> bool:
        if self._p_slice is None:
            return False
        s = self._p_slice
        return np.real(np.trace(rho[s, s])) >= 1 - 1e-14

    @staticmethod
    def _finish_absorbed(rest, rho, states, dark_mask, gi, clicked, record):
        for te, is_enc in rest:
            if is_enc:
                record.events.append((te, "none"))
            else:
                states[gi] = rho
                dark_mask[gi] = not clicked
                gi += 1

    def _frame(self, t):
        return self._prop.unitary(t)

    def run(self, rho0: np.ndarray, rng: np.random.Generator) -> TrajectoryResult:
        grid = self.grid
        t_end = grid[-1]
        enc = sample_encounters(self.model, t_end, rng)
        states = np.empty((len(grid),) + rho0.shape, dtype=complex)
        dark_mask = np.ones(len(grid), dtype=bool)
        record = ClickRecord()
        rho = np.array(rho0, dtype=complex)
        heis = self.picture == "heisenberg"
        t = 0.0
        gi = 0
        clicked = False
        events = [(te, 1) for te in enc] + [(tg, 0) for tg in grid]
        # grid points before encounters at equal times
        events.sort(key=lambda e: (e[0], e[1]))
        for n_done, (te, is_enc) in enumerate(events):
            if self._absorbed(rho):
                self._finish_absorbed(events[n_done:], rho, states, dark_mask, gi, clicked, record)
                break
            if not heis:
                rho = self._evolve(rho, te - t)
            t = te
            if not is_enc:
                if heis:
                    u = self._frame(t)
                    states[gi] = hermitize(u @ rho @ u.conj().T)
                else:
                    states[gi] = rho
                dark_mask[gi] = not clicked
                gi += 1
                continue
            if heis:
                u = self._frame(t)
                lab_rho = u @ rho @ u.conj().T
            else:
                lab_rho = rho
            probs = np.array([np.real(np.sum(e * lab_rho.T)) for e in self._effects])
            probs = np.clip(probs, 0.0, None)
            k = int(np.searchsorted(np.cumsum(probs) / probs.sum(), rng.random(), side="right"))
            k = min(k, len(probs) - 1)
            label = self.outcomes[k]
            record.events.append((t, label))
            new = self._maps[k](lab_rho) / probs[k]
            new = hermitize(new)
            if heis:
                new = hermitize(u.conj().T @ new @ u)
            rho = new
            if label != "none" and self.dark:
                clicked = True
                if self.policy == "abort":
                    raise ConditionedAway(f"click {label!r} at t = {t:.6g} in a dark run")
        return TrajectoryResult(states, record, dark_mask)


def run_trajectory(rho0, between: BetweenGenerator, maps: EncounterMaps,
                   eff: DetectionEfficiencies | None, model: RateModel, rng, grid,
                   dark: bool = False, policy: str = "discard") -> TrajectoryResult:
    sim = TrajectorySimulator(between, maps, eff, model, grid, dark, policy)
    return sim.run(rho0, rng)


class _Neumaier:
    """Compensated running sum of arrays."""

    def __init__(self, shape, dtype=float):
        self.s = np.zeros(shape, dtype=dtype)
        self.c = np.zeros(shape, dtype=dtype)

    def add(self, x):
        t = self.s + x
        big = np.abs(self.s) >= np.abs(x)
        self.c += np.where(big, (self.s - t) + x, (x - t) + self.s)
        self.s = t

    def add_sum(self, other: "_Neumaier"):
        self.add(other.s)
        self.add(other.c)

    @property
    def value(self):
        return self.s + self.c


@dataclass
class EnsembleResult:
    grid: np.ndarray
    mean: np.ndarray            # (n_grid, d, d) mean (conditional) state
    stderr_re: np.ndarray       # standard error of the real parts
    stderr_im: np.ndarray       # standard error of the imaginary parts
    counts: np.ndarray          # trajectories contributing at each grid time
    populations: dict           # label -> (n_grid,) mean <Q_label>
    population_stderr: dict
    click_histogram: np.ndarray  # index k: trajectories with k clicks
    n_traj: int
    n_discarded: int


def _chunk_sums(sim: TrajectorySimulator, rho0, seed, start, stop, projectors):
    ng = len(sim.grid)
    d = rho0.shape[0]
    s_re, s_im = _Neumaier((ng, d, d)), _Neumaier((ng, d, d))
    q_re, q_im = _Neumaier((ng, d, d)), _Neumaier((ng, d, d))
    pop = {k: _Neumaier(ng) for k in projectors}
    pop2 = {k: _Neumaier(ng) for k in projectors}
    cnt = np.zeros(ng, dtype=np.int64)
    hist = {}
    discarded = 0
    for i in range(start, stop):
        res = sim.run(rho0, trajectory_rng(seed, i))
        w = res.dark.astype(float)[:, None, None] if sim.dark else 1.0
        re, im = res.states.real * w, res.states.imag * w
        s_re.add(re)
        s_im.add(im)
        q_re.add(re * re)
        q_im.add(im * im)
        for k, q in projectors.items():
            v = np.real(np.einsum("gij,ji->g", res.states, q))
            if sim.dark:
                v = v * res.dark
            pop[k].add(v)
            pop2[k].add(v * v)
        cnt += res.dark if sim.dark else 1
        nclick = len(res.record.clicks())
        hist[nclick] = hist.get(nclick, 0) + 1
        if sim.dark and not res.dark[-1]:
            discarded += 1
    return s_re, s_im, q_re, q_im, pop, pop2, cnt, hist, discarded


def _run_chunk(args):
    return _chunk_sums(*args)


def ensemble_average(n_traj: int, rho0, between: BetweenGenerator, maps: EncounterMaps,
                     eff: DetectionEfficiencies | None, model: RateModel, grid, seed: int,
                     dark: bool = False, policy: str = "discard", workers: int = 1,
                     projectors: dict | None = None, picture: str = "schroedinger") -> EnsembleResult:
    """Average n_traj trajectories on a grid.

    Unconditional runs average every trajectory.  Dark runs average, at each
    grid time, only the trajectories without a click so far.  Sums run over
    fixed chunks of trajectory indices in index order, so the result does not
    depend on ``workers``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    sim = TrajectorySimulator(between, maps, eff, model, grid, dark, policy, picture)
    rho0 = np.asarray(rho0, dtype=complex)
    projectors = projectors or {}
    jobs = [(sim, rho0, seed, s, min(s + CHUNK, n_traj), projectors) for s in range(0, n_traj, CHUNK)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]

    ng, d = len(sim.grid), rho0.shape[0]
    tot = [_Neumaier((ng, d, d)) for _ in range(4)]
    pop = {k: _Neumaier(ng) for k in projectors}
    pop2 = {k: _Neumaier(ng) for k in projectors}
    cnt = np.zeros(ng, dtype=np.int64)
    hist = {}
    discarded = 0
    for part in parts:
        for acc, p in zip(tot, part[:4]):
            acc.add_sum(p)
        for k in projectors:
            pop[k].add_sum(part[4][k])
            pop2[k].add_sum(part[5][k])
        cnt += part[6]
        for k, v in part[7].items():
            hist[k] = hist.get(k, 0) + v
        discarded += part[8]

    safe = np.maximum(cnt, 1).astype(float)
    m_re = tot[0].value / safe[:, None, None]
    m_im = tot[1].value / safe[:, None, None]

    def stderr(sum2, mean):
        var = np.maximum(sum2 / safe.reshape((-1,) + (1,) * (mean.ndim - 1)) - mean ** 2, 0.0)
        denom = np.maximum(safe - 1, 1).reshape((-1,) + (1,) * (mean.ndim - 1))
        return np.sqrt(var * safe.reshape(denom.shape) / denom / safe.reshape(denom.shape))

    pops = {k: pop[k].value / safe for k in projectors}
    hist_arr = np.zeros(max(hist) + 1 if hist else 1, dtype=np.int64)
    for k, v in hist.items():
        hist_arr[k] = v
    return EnsembleResult(
        grid=sim.grid,
        mean=m_re + 1j * m_im,
        stderr_re=stderr(tot[2].value, m_re),
        stderr_im=stderr(tot[3].value, m_im),
        counts=cnt,
        populations=pops,
        population_stderr={k: stderr(pop2[k].value, pops[k]) for k in projectors},
        click_histogram=hist_arr,
        n_traj=n_traj,
        n_discarded=discarded,
    )


def mean_field_solution(rho0, between: BetweenGenerator, maps: EncounterMaps, model: RateModel,
                        grid, eff: DetectionEfficiencies | None = None, max_step: float | None = None) -> np.ndarray:
    """RK4 solution of drho/dt = L_betw rho + r(t) (A_CPT - 1) rho.

    Detection efficiencies do not change A_CPT, so ``eff`` is accepted only
    for signature symmetry with the trajectory functions.
    """
    lb = between.superop().dense()
    gen = (maps.a_cpt - SuperOp.identity(maps.a_0.dim)).dense()
    if max_step is None:
        max_step = default_step(model.r * max(gen.norm(), 1.0), between.norm())

    def rhs(t, rho):
        return lb(rho) + float(model.rate(t)) * gen(rho)

    return integrate_rk4(rhs, rho0, grid, max_step)


def ks_exponential_statistic(samples, rate: float) -> float:
    """Kolmogorov-Smirnov distance between samples and 1 - exp(-rate t)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    cdf = -np.expm1(-rate * x)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def ks_critical_value(n: int, alpha: float = 0.01) -> float:
    """Asymptotic one-sample KS critical value sqrt(-ln(alpha/2)/2)/sqrt(n)."""
    return math.sqrt(-math.log(alpha / 2) / 2) / math.sqrt(n)
