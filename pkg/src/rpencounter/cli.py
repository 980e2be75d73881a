"""Command-line frontend: ``rpencounter <subcommand> --scenario file.toml``.

Every run writes ``<subcommand>.csv`` (and for some subcommands a few extra
CSV files) into the output directory, together with ``scenario.toml`` (the
fully resolved scenario, replayable as is) and ``metadata.toml`` (seed,
version, wall time, derived quantities).

Exit codes: 0 success, 2 parse or validation error, 3 numerical invariant
violation.
"""
from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import tomli_w

from . import __version__
from .conditional import (
    ConditionalGenerator, ImpossibleRecord, UnphysicalMap, dark_closed_form, simulate_ensemble_record,
)
from .encounter import average_maps, classify, with_detection
from .qcore import (
    InvariantViolation, SuperOp, ZeroTrace, build_subspace_ops, commutator_map, default_step, expectation,
    integrate_rk4, trace_distance,
)
from .reactops import (
    closed_form_full, closed_form_r, generator_full, generator_r_subspace, integrate_generator,
)
from .scenario import Scenario, ScenarioError, parse_scenario, render_scenario
from .spinham import BetweenGenerator, build_hamiltonian_matrix
from .stochastic import ConditionedAway, ensemble_average, mean_field_solution, run_trajectory, trajectory_rng
from .yields import YieldSpec, entanglement_lifetime, magnetic_sensitivity, yield_integral

log = logging.getLogger("rpencounter")

STOCHASTIC = ("traj", "ensemble")
# stream index reserved for the ensemble click record, disjoint from trajectory indices
CLOUD_STREAM = 2 ** 63
NUMERICAL_ERRORS = (InvariantViolation, ZeroTrace, ConditionedAway, UnphysicalMap, ImpossibleRecord)


class NumericalFailure(RuntimeError):
    """An oracle cross-check exceeded its tolerance."""


def write_csv(path: Path, header: list, rows) -> None:
    """Fixed header, one row per line, every number as %.12e."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else "%.12e" % v for v in row))
    path.write_text("\n".join(lines) + "\n")


class Context:
    """Domain objects resolved once from a scenario."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.spec = sc.spin_spec()
        self.layout = sc.layout()
        self.ops = build_subspace_ops(self.layout)
        self.h = build_hamiltonian_matrix(self.spec, self.layout)
        self.between = BetweenGenerator(self.h)
        self.model = sc.rate_model()
        self.eff = sc.efficiencies()
        self.grid = sc.grid()
        self.rho0 = sc.initial_state(self.layout)

    @property
    def is_encounter(self) -> bool:
        return self.sc.reaction_kind != "rates"

    def maps(self):
        if not self.is_encounter:
            raise ScenarioError("[reaction]: this subcommand needs an encounter model "
                                "([reaction.encounter] or [[reaction.average]])")
        return average_maps(self.sc.couplings(), self.ops)

    def block_trace(self, rho, a, b=None) -> complex:
        b = a if b is None else b
        if a not in self.layout.block_labels or b not in self.layout.block_labels:
            return 0.0
        return np.trace(rho[..., self.layout.block_slice(a), self.layout.block_slice(b)], axis1=-2, axis2=-1)

    def summary(self, states) -> dict:
        """Block populations and the S-T0 coherence for a stack of states."""
        out = {k: np.real(self.block_trace(states, k)) * np.ones(len(states))
               for k in ("S", "T0", "T+", "T-", "P")}
        out["T"] = out["T0"] + out["T+"] + out["T-"]
        coh = self.block_trace(states, "S", "T0") * np.ones(len(states))
        out["re_S_T0"], out["im_S_T0"] = np.real(coh), np.imag(coh)
        out["trace"] = np.real(np.einsum("tii->t", states))
        return out


def cmd_me(ctx: Context, out: Path, args) -> dict:
    """Unconditional master equation on the time grid."""
    if ctx.is_encounter:
        states = mean_field_solution(ctx.rho0, ctx.between, ctx.maps(), ctx.model, ctx.grid)
    else:
        gen = generator_full(ctx.sc.rates(), ctx.ops)
        states = integrate_generator(gen, ctx.rho0, ctx.grid, hamiltonian=ctx.h)
    s = ctx.summary(states)
    cols = ["Q_S", "Q_T0", "Q_T+", "Q_T-", "Q_T", "Q_P", "trace", "re_S_T0", "im_S_T0"]
    keys = ["S", "T0", "T+", "T-", "T", "P", "trace", "re_S_T0", "im_S_T0"]
    write_csv(out / "me.csv", ["t"] + cols, zip(ctx.grid, *(s[k] for k in keys)))
    return {}


def cmd_dark(ctx: Context, out: Path, args) -> dict:
    """Dark (no-click) conditional evolution: p(D), p(R,D), p(R|D)."""
    maps = ctx.maps()
    params = maps.params
    model = ctx.model
    a0 = with_detection(maps, ctx.eff).a_0
    rt = np.asarray(model.integrated(ctx.grid), dtype=float)
    static = not np.any(ctx.h)
    method = "closed_form"
    if static and model.homogeneous and params.mode == "triplet_symmetric_no_t_dephasing":
        sol = dark_closed_form(ctx.rho0, params, ctx.eff, model.r, ctx.grid, ctx.ops)
        p_d, p_rd = sol.trace_n, sol.p_rd
    else:
        method = "linear_integration"
        extra = None if static else commutator_map(ctx.h)
        base = ConditionalGenerator(a0, 1.0, check=True)
        lin_rate = base.linear
        lin_h = extra.dense() if extra is not None else None
        h_norm = float(np.max(np.abs(np.linalg.eigvalsh(ctx.h)))) if not static else 0.0

        def rhs(t, rho):
            d = float(model.rate(t)) * lin_rate(rho)
            return d if lin_h is None else d + lin_h(rho)

        states = integrate_rk4(rhs, ctx.rho0, ctx.grid, default_step(model.r * lin_rate.norm(), h_norm))
        p_d = np.real(np.einsum("tii->t", states))
        p_rd = sum(np.real(ctx.block_trace(states, k)) for k in ctx.layout.rp_labels)
    if np.any(p_d <= 0):
        raise ZeroTrace("p(D) vanished on the time grid")
    write_csv(out / "dark.csv", ["rt", "pD", "pRD", "pR_given_D"], zip(rt, p_d, p_rd, p_rd / p_d))
    return {"dark_method": method}


def _seed(sc: Scenario, args) -> int:
    seed = args.seed if args.seed is not None else sc.run.get("seed")
    if seed is None:
        raise ScenarioError("[run].seed: a seed is mandatory for stochastic modes (scenario or --seed)")
    if not 0 <= seed < 2 ** 64:
        raise ScenarioError("[run].seed: must be an unsigned 64-bit integer")
    return int(seed)


def cmd_traj(ctx: Context, out: Path, args) -> dict:
    """One stochastic trajectory and its encounter record."""
    seed = _seed(ctx.sc, args)
    dark = ctx.sc.run["conditioning"] == "dark"
    res = run_trajectory(ctx.rho0, ctx.between, ctx.maps(), ctx.eff, ctx.model, trajectory_rng(seed, 0),
                         ctx.grid, dark=dark, policy=ctx.sc.run["policy"])
    s = ctx.summary(res.states)
    write_csv(out / "traj.csv", ["t", "Q_S", "Q_T", "Q_P", "dark"],
              zip(ctx.grid, s["S"], s["T"], s["P"], res.dark.astype(float)))
    write_csv(out / "traj_events.csv", ["t", "outcome"], res.record.events)
    return {"seed": seed, "encounters": len(res.record), "clicks": len(res.record.clicks())}


def cmd_ensemble(ctx: Context, out: Path, args) -> dict:
    """Trajectory average, plus an optional fluorescence cloud record."""
    seed = _seed(ctx.sc, args)
    run = ctx.sc.run
    maps = ctx.maps()
    projectors = {k: ctx.ops.projector(k) for k in ("S", "T", "P")}
    res = ensemble_average(run["n_traj"], ctx.rho0, ctx.between, maps, ctx.eff, ctx.model, ctx.grid, seed,
                           dark=run["conditioning"] == "dark", policy=run["policy"], workers=args.threads,
                           projectors=projectors)
    s = ctx.summary(res.mean)
    if "T0" in ctx.layout.block_labels:
        ss, st = ctx.layout.block_slice("S"), ctx.layout.block_slice("T0")
        # block trace of the coherence; the standard errors of its summands add in quadrature
        se_re = np.sqrt(np.sum(np.diagonal(res.stderr_re[:, ss, st], axis1=1, axis2=2) ** 2, axis=1))
        se_im = np.sqrt(np.sum(np.diagonal(res.stderr_im[:, ss, st], axis1=1, axis2=2) ** 2, axis=1))
    else:
        se_re = se_im = np.zeros(len(ctx.grid))
    header = ["t", "re_S_T0", "im_S_T0", "se_re_S_T0", "se_im_S_T0", "Q_S", "Q_T", "Q_P",
              "se_Q_S", "se_Q_T", "se_Q_P", "n_contributing"]
    rows = zip(ctx.grid, s["re_S_T0"], s["im_S_T0"], se_re, se_im,
               *(res.populations[k] for k in ("S", "T", "P")),
               *(res.population_stderr[k] for k in ("S", "T", "P")), res.counts.astype(float))
    write_csv(out / "ensemble.csv", header, rows)
    write_csv(out / "ensemble_clicks.csv", ["clicks", "trajectories"],
              ((float(k), float(v)) for k, v in enumerate(res.click_histogram)))
    meta = {"seed": seed, "n_traj": res.n_traj, "n_discarded": res.n_discarded, "workers": args.threads}
    if "n_cloud" in run:
        meta.update(_cloud(ctx, out, maps, seed))
    return meta


def _cloud(ctx: Context, out: Path, maps, seed: int) -> dict:
    model = ctx.model
    if not model.homogeneous:
        raise ScenarioError("[rate]: the ensemble click record needs a constant encounter rate")
    detected = with_detection(maps, ctx.eff)
    dt = ctx.sc.run.get("dt", 0.01 / model.r)
    steps = int(np.ceil(ctx.grid[-1] / dt))
    rec = simulate_ensemble_record(ctx.rho0, detected.a_cpt, detected.click_map, model.r,
                                   ctx.sc.run["n_cloud"], dt, steps, trajectory_rng(seed, CLOUD_STREAM))
    s = ctx.summary(rec.states[1:])
    write_csv(out / "ensemble_cloud.csv", ["t", "l", "x", "z", "Q_S", "Q_T", "Q_P"],
              zip(rec.times[1:], rec.l.astype(float), rec.x, rec.z, s["S"], s["T"], s["P"]))
    # raw |z| histogram so the first-order regime can be judged
    counts, edges = np.histogram(np.abs(rec.z), bins=20)
    write_csv(out / "ensemble_z_hist.csv", ["abs_z_lo", "abs_z_hi", "count"],
              zip(edges[:-1], edges[1:], counts.astype(float)))
    return {"cloud_dt": dt, "cloud_steps": steps, "n_cloud": ctx.sc.run["n_cloud"]}


def cmd_yield(ctx: Context, out: Path, args) -> dict:
    """Singlet and concurrence yields with field sensitivity over angles."""
    sc, model = ctx.sc, ctx.model
    field = np.array(sc.data["system"]["field"])
    b_mag = float(np.linalg.norm(field))
    if model.homogeneous:
        spec_s, spec_e = YieldSpec("singlet_fidelity", rate=model.r), YieldSpec("concurrence", rate=model.r)
        t_inf = 40.0 / model.r
    else:
        log.warning("yield with a declining encounter rate uses the experimental rate_model distribution")
        spec_s = YieldSpec("singlet_fidelity", "rate_model", rate_model=model)
        spec_e = YieldSpec("concurrence", "rate_model", rate_model=model)
        t_inf = model.cutoff
    t_max = sc.run.get("t_max", float(ctx.grid[-1]))
    rows = []
    for angle in sc.run["angles"]:
        th = np.radians(angle)
        direction = np.array([np.sin(th), 0.0, np.cos(th)])

        def family(b, direction=direction):
            return build_hamiltonian_matrix(ctx.spec.with_field(b * direction), ctx.layout)

        h = family(b_mag)
        phi_s = yield_integral(spec_s, h, ctx.rho0, ctx.layout, t_inf, rtol=sc.run["functional_rtol"])
        sens = magnetic_sensitivity(spec_s, family, ctx.rho0, b_mag, sc.run["delta_b"], ctx.layout, t_inf)
        phi_e = yield_integral(spec_e, h, ctx.rho0, ctx.layout, t_inf, rtol=1e-6)
        t_e, censored = entanglement_lifetime(h, ctx.rho0, ctx.layout, t_max)
        rows.append((b_mag, float(angle), phi_s, sens.value, sens.error, phi_e, t_e, float(censored)))
    write_csv(out / "yield.csv", ["B", "angle_deg", "Phi_S", "Lambda", "Lambda_err", "Phi_E", "T_E",
                                  "T_E_censored"], rows)
    return {"t_inf": t_inf, "t_max": t_max}


def cmd_classify(ctx: Context, out: Path, args) -> dict:
    """Name the encounter class, e.g. Bright/VonNeumann."""
    params = ctx.maps().params
    cls = classify(params)
    log.info("%s", cls)
    print(cls)
    rows = [(f"r_tilde_{j}", params.r_tilde[j]) for j in params.r_tilde]
    rows += [(f"d_tilde_{j}", params.d_tilde[j]) for j in params.d_tilde]
    rows.append(("eta_tilde", params.eta_tilde))
    write_csv(out / "classify.csv", ["quantity", "value"], rows)
    return {"class": str(cls), "warnings": list(params.warnings)}


def cmd_oracle(ctx: Context, out: Path, args) -> dict:
    """Closed forms against integrators, with the free Hamiltonian switched off."""
    checks = []
    grid = ctx.grid
    rho0 = ctx.rho0
    if not ctx.is_encounter:
        rates = ctx.sc.rates()
        num = integrate_generator(generator_full(rates, ctx.ops), rho0, grid)
        exact = np.array([closed_form_full(rho0, rates, ctx.ops, t) for t in grid])
        checks.append(("closed_form_full_vs_rk4", np.max(np.abs(num - exact)), 1e-8))
        rho_r = ctx.ops.q_r @ rho0 @ ctx.ops.q_r
        num = integrate_generator(generator_r_subspace(rates, ctx.ops), rho_r, grid)
        exact = np.array([closed_form_r(rho0, rates, ctx.ops, t) for t in grid])
        checks.append(("closed_form_r_vs_rk4", np.max(np.abs(num - exact)), 1e-8))
    else:
        maps = ctx.maps()
        detected = with_detection(maps, ctx.eff)
        r = ctx.model.r
        cg = ConditionalGenerator(detected.a_0, r)
        lin_states, p = cg.solution(rho0, grid)
        nonlin = cg.integrate(rho0, grid)
        # the nonlinear equation forms 1 - <Q_j> implicitly, so a tiny initial
        # population q_min costs about eps / q_min of relative accuracy
        pops = [expectation(rho0, ctx.ops.projector(k)) for k in ("S", "T", "P")]
        q_min = min([q for q in pops if q > 0], default=1.0)
        tol = 1e-8 + 10 * np.finfo(float).eps / q_min
        checks.append(("nonlinear_vs_normalized_linear",
                       max(trace_distance(a, b) for a, b in zip(lin_states, nonlin)), tol))
        if maps.params.mode == "triplet_symmetric_no_t_dephasing":
            sol = dark_closed_form(rho0, maps.params, ctx.eff, r, grid, ctx.ops)
            checks.append(("dark_closed_form_pD_vs_linear", np.max(np.abs(sol.trace_n - p)), 1e-8))
            p_rd = sum(np.real(ctx.block_trace(lin_states, k)) for k in ctx.layout.rp_labels) * p
            checks.append(("dark_closed_form_pRD_vs_linear", np.max(np.abs(sol.p_rd - p_rd)), 1e-8))
        ident = SuperOp.identity(maps.a_0.dim)
        tf = maps.a_cpt.trace_functional()
        checks.append(("cpt_sum_rule", np.max(np.abs(tf - ident.trace_functional())), 1e-12))
        static = BetweenGenerator(np.zeros_like(ctx.h))
        mf = mean_field_solution(rho0, static, maps, ctx.model, grid)
        gen = r * (maps.a_cpt - ident)
        num = integrate_generator(gen, rho0, grid)
        checks.append(("mean_field_vs_generator", np.max(np.abs(mf - num)), 1e-8))
    rows = [(name, float(dev), tol, "PASS" if dev <= tol else "FAIL") for name, dev, tol in checks]
    for name, dev, tol, verdict in rows:
        print(f"{verdict} {name}: max deviation {dev:.3e} (tolerance {tol:.1e})")
    write_csv(out / "oracle.csv", ["check", "max_deviation", "tolerance", "verdict"], rows)
    failed = [r[0] for r in rows if r[3] == "FAIL"]
    if failed:
        raise NumericalFailure(f"oracle checks failed: {', '.join(failed)}")
    return {"checks": {name: dev for name, dev, _, _ in rows}}


COMMANDS = {
    "me": cmd_me, "dark": cmd_dark, "traj": cmd_traj, "ensemble": cmd_ensemble,
    "yield": cmd_yield, "classify": cmd_classify, "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rpencounter", description="Radical-pair encounter model runs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=(COMMANDS[name].__doc__ or name).strip().splitlines()[0])
        s.add_argument("--scenario", required=True, type=Path, help="scenario TOML file")
        s.add_argument("--seed", type=int, default=None, help="master seed (u64), overrides [run].seed")
        s.add_argument("--out", type=Path, default=None, help="output directory, overrides [run].output")
        s.add_argument("--threads", type=int, default=1, help="worker processes (speed only)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def run(command: str, sc: Scenario, args) -> Path:
    """Execute one subcommand and write its outputs; returns the output directory."""
    if args.threads < 1:
        raise ScenarioError("--threads must be >= 1")
    if command in STOCHASTIC:
        _seed(sc, args)
    mode = sc.run.get("mode")
    if mode is not None and mode != command:
        log.info("subcommand %r overrides [run].mode = %r", command, mode)
    out = Path(args.out if args.out is not None else sc.run["output"])
    out.mkdir(parents=True, exist_ok=True)
    resolved = sc.copy()
    resolved.run["mode"] = command
    if args.seed is not None:
        resolved.run["seed"] = int(args.seed)
    t0 = time.perf_counter()
    ctx = Context(resolved)
    extra = COMMANDS[command](ctx, out, args)
    wall = time.perf_counter() - t0
    (out / "scenario.toml").write_text(render_scenario(resolved))
    meta = {
        "command": command,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": wall,
        "t_inf": ctx.model.cutoff,
        "threads": args.threads,
        "results": extra,
        "scenario": resolved.data,
    }
    if "seed" in resolved.run:
        meta["seed"] = resolved.run["seed"]
    (out / "metadata.toml").write_text(tomli_w.dumps(_plain(meta)))
    return out


def _plain(obj):
    """Convert numpy scalars for TOML output and drop empty values."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "classify" else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = parse_scenario(args.scenario.read_text())
    except OSError as e:
        print(f"error: cannot read scenario: {e}", file=sys.stderr)
        return 2
    except ScenarioError as e:
        print(f"error: {args.scenario}: {e}", file=sys.stderr)
        return 2
    try:
        run(args.command, sc, args)
    except (NumericalFailure,) + NUMERICAL_ERRORS as e:
        print(f"numerical error in {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    except ScenarioError as e:
        print(f"error: {args.scenario}: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {args.scenario}: {args.command}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
