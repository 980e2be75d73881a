"""Single encounters, many pairs: when does the master equation emerge?

Each pair meets its partner at Poisson-distributed times.  At each encounter
a click (singlet or triplet fluorescence) or no click is drawn, and the state
jumps accordingly.  Between encounters it precesses under the hyperfine and
Zeeman Hamiltonian.  One trajectory looks nothing like the smooth ensemble
behaviour.  Averaging thousands of them recovers the unconditional master
equation rho' = -i[H, rho] + r (A_CPT - 1) rho, and the clicks drop out
because they do not change A_CPT.

Run:  python3 demos/trajectories_vs_master_equation.py
"""
import numpy as np

from rpencounter.encounter import DetectionEfficiencies, EncounterCoupling, build_encounter
from rpencounter.qcore import build_subspace_ops, trace_distance
from rpencounter.spinham import BetweenGenerator, SpinSystemSpec, build_hamiltonian_matrix, make_nucleus
from rpencounter.stochastic import RateModel, ensemble_average, mean_field_solution, run_trajectory, trajectory_rng

spec = SpinSystemSpec(np.array([0.3, 0.0, 0.4]), (2.0, 2.0), (make_nucleus(1, 0.5, 1.0),))
layout = spec.layout()
ops = build_subspace_ops(layout)
between = BetweenGenerator(build_hamiltonian_matrix(spec, layout))

# a generic encounter: partial recombination in both channels plus dephasing
coupling = EncounterCoupling(0.9, {"S": 1.0, "T": 0.6 + 0.2j}, {"S": 0.4, "T": 0.3}, "triplet_symmetric")
maps = build_encounter(coupling, layout)
eff = DetectionEfficiencies({"S": 0.8, "T": 0.5})
model = RateModel(r=1.0)
grid = np.linspace(0.0, 4.0, 9)
rho0 = layout.pure_state({"S": 1.0})

one = run_trajectory(rho0, between, maps, eff, model, trajectory_rng(1, 0), grid)
print("one trajectory, its encounter record:")
for t, outcome in one.record.events:
    print(f"  t = {t:6.3f}  {outcome}")
print("  <Q_S> along it:", np.round([np.trace(ops.q_s @ s).real for s in one.states], 3))

me = mean_field_solution(rho0, between, maps, model, grid)
print("\nn_traj   max trace distance to the master equation")
for n in (10, 100, 1000, 5000):
    ens = ensemble_average(n, rho0, between, maps, eff, model, grid, seed=2026)
    worst = max(trace_distance(a, b) for a, b in zip(ens.mean, me))
    print(f"{n:6d}   {worst:.4f}")
