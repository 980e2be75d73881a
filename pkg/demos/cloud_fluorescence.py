"""Watching a cloud of pairs through its fluorescence.

A single click from one of n pairs barely changes what we know about the
ensemble state: the update is of order 1/n.  Counting l clicks per short step
among n = 10^4 pairs gives a noisy fluorescence signal x(t) = l/n.  Its
relative fluctuation z drives a stochastic master equation

    rho' = r [(A_CPT - 1) + z (B - <B>)] rho,

where B is the sum of the click maps.  Averaged over many records, z washes
out and the unconditional evolution comes back.  This script simulates a few
records, prints the |z| spread and compares the record average with the
unconditional master equation.

Run:  python3 demos/cloud_fluorescence.py
"""
import numpy as np
from scipy.linalg import expm

from rpencounter.conditional import simulate_ensemble_record
from rpencounter.encounter import DetectionEfficiencies, EncounterCoupling, build_encounter, with_detection
from rpencounter.qcore import HilbertLayout, SuperOp, build_subspace_ops
from rpencounter.stochastic import trajectory_rng

layout = HilbertLayout()
ops = build_subspace_ops(layout)
coupling = EncounterCoupling(0.9, {"S": 1.0, "T": 0.5}, {"S": 0.4}, "triplet_symmetric_no_t_dephasing")
maps = with_detection(build_encounter(coupling, layout), DetectionEfficiencies({"S": 0.8, "T": 0.6}))
b = maps.a_j["S"] + maps.a_j["T"]
rho0 = layout.pure_state({"S": 1.0})
rate, dt, steps, n = 1.0, 0.01, 300, 10 ** 4

records = [simulate_ensemble_record(rho0, maps.a_cpt, b, rate, n, dt, steps, trajectory_rng(31, i))
           for i in range(20)]
z = np.concatenate([r.z for r in records])
print(f"z over {len(records)} records: mean {z.mean():+.3f}, std {z.std():.3f}, max |z| {np.abs(z).max():.3f}")

gen = (maps.a_cpt - SuperOp.identity(layout.total_dim)).dense().matrix
t_end = dt * steps
exact = (expm(gen * rate * t_end) @ rho0.reshape(-1)).reshape(rho0.shape)
for label, q in (("S", ops.q_s), ("T", ops.q_t), ("P", ops.q_p)):
    vals = np.array([np.trace(q @ r.states[-1]).real for r in records])
    print(f"<Q_{label}>(t = {t_end:g}): records {vals.mean():.4f} +- {vals.std(ddof=1) / np.sqrt(len(vals)):.4f}, "
          f"unconditional {np.trace(q @ exact).real:.4f}")
