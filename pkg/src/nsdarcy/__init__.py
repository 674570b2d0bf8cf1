"""Finite element solver for coupled Navier-Stokes/Darcy flow across a flat interface.

Modules: ``mesh`` (layered rectangles), ``assembly`` (Taylor-Hood blocks),
``operator`` (pencil, spectrum, resolvent, extensions, thresholds),
``timeloop`` (theta and IMEX steppers), ``diagnostics`` (energies and norms),
``mms`` (manufactured solutions), ``cli`` (command line).
"""

__version__ = "0.1.0"
