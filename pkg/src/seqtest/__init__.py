"""Sequential tests for multiple composite hypotheses over convex parameter sets.

Modules
-------
schemes      Gaussian/Poisson/Discrete observation schemes and their rate functions.
convexgeom   Convex bodies, the pairwise saddle problem, barrier cuts, volumes.
pairwise     Detectors built from saddle points and their exact risks.
multitest    Aggregation of pairwise detectors with spectral shift balancing.
sequential   Stage construction, the sequential test, JSON serialization.
analysis     Separation, sample-size bounds, stage bounds s*(mu) and its Gaussian upper bound.
harness      Config-driven Monte Carlo experiments and report writers.
"""

from .schemes import SchemeKind
from .convexgeom import Box, Polytope, solve_pairwise
from .sequential import (HypothesisFamily, ScheduleConfig, SequentialTest, Verdict, build_sequential,
                         run_sequential)

__all__ = ["SchemeKind", "Box", "Polytope", "solve_pairwise", "HypothesisFamily", "ScheduleConfig",
           "SequentialTest", "Verdict", "build_sequential", "run_sequential"]
__version__ = "0.1.0"
