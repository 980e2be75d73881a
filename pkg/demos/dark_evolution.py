"""What an observer concludes while waiting for a fluorescence photon.

A radical pair is watched by a detector that sees every singlet recombination
(eta_S = 1) and no triplet recombination (eta_T = 0).  Encounters are von
Neumann measurements (r~_j = 1) at rate r, and the pair does not evolve
between encounters.

Three probabilities tell the story:

    p(D)    no click seen up to time t
    p(R,D)  no click seen and the pair still unreacted
    p(R|D)  the pair is still unreacted, given that no click was seen

With a near-perfect preparation (triplet seed 1e-10), silence is first read as
"the pair survives".  Only after rt = ln((1 + eps)/eps), about 23 encounters,
does the observer conclude that a photon was missed or the pair never formed.
Lowering eta_S to 0.9 removes that plateau.  The conditional curve then looks
like ordinary unobserved decay.

Run:  python3 demos/dark_evolution.py
"""
import numpy as np

from rpencounter.conditional import dark_half_time, dark_probabilities

EPS = 1e-10
rt = np.array([0.0, 1.0, 5.0, 10.0, 20.0, 22.0, 23.0, 24.0, 26.0, 40.0])

for eta_s, label in ((1.0, "near-perfect detection (eta_S = 1)"), (0.9, "lossy detection (eta_S = 0.9)")):
    sol = dark_probabilities(1 - EPS, EPS, 1.0, 1.0, eta_s, 0.0, rt)
    print(f"\n{label}")
    print(f"{'rt':>6} {'p(D)':>14} {'p(R,D)':>14} {'p(R|D)':>14}")
    for x, pd, prd, prgd in zip(rt, sol.trace_n, sol.p_rd, sol.trace_r):
        print(f"{x:6.1f} {pd:14.6e} {prd:14.6e} {prgd:14.6e}")
    half = dark_half_time(1 - EPS, EPS, 1.0, 1.0, eta_s, 0.0)
    print(f"p(R|D) reaches 1/2 at rt = {half:.6f}")

print(f"\nln((1 + eps)/eps) = {np.log((1 + EPS) / EPS):.6f}")
print(f"asymptotic p(D) with eta_S = 0.9: {0.1 + 0.9 * EPS:.12e}")
