"""Radical-pair spin dynamics with explicit encounter maps.

Modules:
    qcore        Hilbert layout, projectors, superoperators, integrators
    spinham      spin Hamiltonians and free evolution
    reactops     reaction operators and their closed-form solutions
    encounter    encounter maps, detection, averaging, weak limit
    stochastic   encounter-time sampling and quantum trajectories
    conditional  dark (no-click) evolution and ensemble click records
    yields       reaction yields, field sensitivity, concurrence
    scenario     TOML scenario files
    cli          command-line frontend
"""
__version__ = "0.1.0"
