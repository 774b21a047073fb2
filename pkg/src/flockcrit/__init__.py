"""Critical thresholds and particle simulation for Euler alignment (flocking) systems.

Subpackages and modules:

* :mod:`flockcrit.kernels` - influence kernels, psi and the flocking diameter
* :mod:`flockcrit.majorant` - Riccati thresholds, threshold curves, comparison harness
* :mod:`flockcrit.dynamics1d`, :mod:`flockcrit.dynamics2d` - Lagrangian particle solvers
* :mod:`flockcrit.diagnostics` - flocking metrics, free energy, vacuum level sets
* :mod:`flockcrit.sweep` - phase-diagram sweeps
* :mod:`flockcrit.cli` - the ``flockcrit`` command
"""

__version__ = "0.1.0"
