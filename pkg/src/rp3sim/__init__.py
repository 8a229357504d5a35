"""Resilient push-pull optimization over directed graphs with trust learning.

Core modules:
  graph     directed topologies, generation, validation, metrics
  trust     stochastic trust observations, opinions, learning-time bounds
  optim     constraint sets, projections, growing set sequences, cost checks
  problems  consensus / quadratic / target-tracking instances with oracles
  protocol  the resilient (RP3) and nominal (PPP) push-pull engines
  analysis  error functionals, contraction gain matrix, expected-rate curves
  batch     seed-batched runs on one fixed instance
  harness   TOML configs, CLI, replication, CSV/JSON outputs
"""

from .graph import DirectedGraph, NominalSubgraph, TopologySpec, generate_topology, validate_assumptions
from .optim import AllSpace, Ball, Box, CostFunction, ExpRadius, LinearRadius, UnboundedRadius
from .problems import Problem, consensus_problem, centralized_solve, random_quadratic_problem
from .protocol import RunSpec, run, make_attack
from .results import RunResult
from .trust import LearningBounds, TrustModelParams, TrustState, UniformDist, paper_trust_params

__version__ = "0.1.0"

__all__ = [
    "AllSpace",
    "Ball",
    "Box",
    "CostFunction",
    "DirectedGraph",
    "ExpRadius",
    "LearningBounds",
    "LinearRadius",
    "NominalSubgraph",
    "Problem",
    "RunResult",
    "RunSpec",
    "TopologySpec",
    "TrustModelParams",
    "TrustState",
    "UnboundedRadius",
    "UniformDist",
    "centralized_solve",
    "consensus_problem",
    "generate_topology",
    "make_attack",
    "paper_trust_params",
    "random_quadratic_problem",
    "run",
    "validate_assumptions",
]
