"""Numerical bulk–interface correspondence for quarter-plane magnetic interfaces.

Harper-type lattice Hamiltonians with a magnetic field that differs on the
first quadrant, their interface winding numbers and currents, bulk Chern
numbers, corner spectral flow and a 1-d charge pump.
"""

__version__ = "0.1.0"
