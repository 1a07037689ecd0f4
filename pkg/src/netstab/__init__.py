"""Distributed stabilization of networked linear systems with unknown parameters.

Each subsystem keeps the set of local models consistent with its observed
trajectory, selects a model from it by a Steiner point, synthesizes local
finite-impulse-response closed-loop columns on that model and runs them
with delayed information from its neighbors.
"""
from .analysis import (compare_runs, compute_error_series, convolution_bound, stability_report,
                       verify_closed_loop_identity)
from .consist import ConsistentSet, SetSelectState, select_parameter, setselect_update, update_consistent_set
from .controller import ControllerState, GlobalOperators, assemble_global_operators, compute_control, estimate_disturbance
from .dynamics import GlobalDynamics, LocalParams, assemble_global, local_regressor, param_dim, step_truth
from .errors import *  # noqa: F401,F403
from .geometry import Polytope, project_onto, steiner_point, support_point
from .sim import MessageBus, Scenario, TraceLog, disturbance, run_episode
from .sls import (ClosedLoopColumn, GrammianReport, SensitivityConstants, SparsityMask, build_sparsity_masks,
                  controllability_grammians, fir_feasibility_probe, sensitivity_constants, synthesize_column,
                  verify_column)
from .topology import NetworkTopology, compute_delay_table, compute_neighbor_sets

__version__ = "0.1.0"
