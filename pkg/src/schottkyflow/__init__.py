"""Numerics for the geodesic flow on Schottky surfaces and congruence covers.

Modules
-------
arith       exact SL(2,Z) matrices, Mobius actions, hyperbolic lengths
schottky    ping-pong validation, word balls, box-count dimension oracle
coding      subshift, expanding map, roof function, group-valued cocycle
thermo      collocation transfer operators, pressure, Gibbs data, dimension
congruence  SL(2,Z/q) machinery, twisted operators, gaps, flattening
dolgopyat   cones, sections, damped operators and their contraction audit
zeta        closed-geodesic necklaces, Selberg zeta, resonance scans
counting    geodesic/orbit counting, correlation and Laplace cross-checks
cli         command-line front end
"""

__version__ = "0.1.0"

from . import arith, schottky, coding  # noqa: F401
