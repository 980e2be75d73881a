"""A radical-pair compass: the singlet yield depends on the field direction.

An anisotropic hyperfine coupling makes singlet-triplet mixing, and hence the
fraction of pairs that recombine through the singlet channel, depend on the
angle between the field and the molecular axis.  With von Neumann encounters
at rate r, the probability of a first encounter at time t is r exp(-r t), so
the singlet yield is Phi_S = int r exp(-r t) <Q_S(t)> dt.

For each angle we report Phi_S, its field sensitivity dPhi_S/dB from central
differences at two step sizes, and the electron-spin concurrence yield.

Run:  python3 demos/singlet_yield_compass.py
"""
import numpy as np

from rpencounter.spinham import SpinSystemSpec, build_hamiltonian_matrix, make_nucleus
from rpencounter.yields import YieldSpec, magnetic_sensitivity, yield_integral

nucleus = make_nucleus(1, 0.5, np.diag([0.5, 0.5, 2.0]))
layout = SpinSystemSpec(np.zeros(3), (2.0, 2.0), (nucleus,)).layout()
rho0 = layout.pure_state({"S": 1.0})
rate, b0 = 0.2, 1.0

print(f"{'angle':>6} {'Phi_S':>10} {'dPhi_S/dB':>12} {'step err':>10} {'Phi_E':>10}")
for deg in (0, 15, 30, 45, 60, 75, 90):
    direction = np.array([np.sin(np.radians(deg)), 0.0, np.cos(np.radians(deg))])

    def family(b):
        return build_hamiltonian_matrix(SpinSystemSpec(b * direction, (2.0, 2.0), (nucleus,)), layout)

    h = family(b0)
    phi_s = yield_integral(YieldSpec(rate=rate), h, rho0, layout)
    sens = magnetic_sensitivity(YieldSpec(rate=rate), family, rho0, b0, 1e-3, layout)
    phi_e = yield_integral(YieldSpec("concurrence", rate=rate), h, rho0, layout)
    print(f"{deg:6d} {phi_s:10.6f} {sens.value:12.6f} {sens.error:10.2e} {phi_e:10.6f}")
