"""Simulation engine: structural equation models, scenarios and discrete oracles."""
from .oracle import DiscreteDgp, discrete_oracle
from .scenarios import LABELS, ScenarioSpec, custom_scenario, make_scenario, sim_scenario
from .sem import Node, SemSpec, SpecError, eval_points, sample, sample_nodes, truth_q0, truth_q1
from .specs import SPECS, sim1_spec, sim2_spec
