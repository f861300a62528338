"""Resistances across deformed diamonds.

Straight deformed diamonds in Z^3 widen with their length. The Neumann
resistance between the apexes saturates, and the spread unit flow, which
averages paths through a cross-section, gives an upper bound on it.
"""
from errwlab.environment import FieldConfig
from errwlab.lattice import build_diamond
from errwlab.network import ChiParams
from errwlab.spread import resistance_bound_check

print(" L  members    h   a*D^N  flow energy")
for L in (10, 20, 40):
    dia = build_diamond((0, 0, 0), (L, 0, 0), "deformed")
    rep = resistance_bound_check(FieldConfig.zeros(dia.region.graph), 1.0, dia, ChiParams(), K=200)
    print(f"{L:2d}  {len(dia):7d}  {rep.h:.2f}  {rep.a_times_DN:6.3f}  {rep.flow_energy_bound:11.3f}")
