"""Grad-div stabilized P2/P1 Navier-Stokes solver with adaptive BDF2 stepping.

Submodules: mesh (triangulations and boundary tags), fem (Taylor-Hood
assembly), timestepping (variable-step BDF2, IMEX and semi-implicit),
linsolve (LU reuse with iterative refinement), adaptivity (step
controller), analysis_checks (stability algebra), benchmarks (study
drivers), cli (command line).
"""

from . import adaptivity, analysis_checks, benchmarks, fem, linsolve, mesh, timestepping

__all__ = ["adaptivity", "analysis_checks", "benchmarks", "fem", "linsolve",
           "mesh", "timestepping"]

__version__ = "0.1.0"
