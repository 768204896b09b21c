"""Simulator and analysis toolkit for distributed detection-estimation in
sensor networks with randomly defective sensors."""

from ._version import __version__
from .model import (FieldSnapshot, ModelParams, ParameterError,
                    conditional_snapshot, rng_stream, sample_snapshot,
                    standard_normal)
from .topology import (ConnectivityError, NetworkTopology, from_edge_list,
                       is_connected, random_geometric_graph, read_edge_list,
                       write_edge_list)
from .engine import (EngineConfig, EngineDivergenceError, EngineState, NodeState,
                     NotConvergedError, RunResult, StepSchedule, check_fixed_point,
                     default_schedule, detect, detection_ordering_holds, initialize,
                     iterate, power_schedule, run, washout_schedule)
from .estimators import (EstimatorReport, OracleReport, Variant,
                         centralized_mde_oracle, ideal_estimate, ideal_variance,
                         naive_estimate, naive_variance, psi, psi_binomial_approx)
from .analysis import (DecisionRegion, EventProbabilities, MixtureDistribution,
                       MomentMethod, OrderStatSummary, RegionKind,
                       asymptotic_trimmed_mean, central_orderstat_normal_approx,
                       decision_region, event_probabilities, order_stat_cdf,
                       order_stat_moments, region_contains, regions_nested,
                       sample_trimmed_estimate, variance_decomposition)
from .harness import (CellResult, EngineSettings, ExperimentConfig,
                      ScheduleSettings, SweepResult, SweepRow, TopologySettings,
                      emit_csv, emit_details_csv, emit_plotdata, load_config,
                      paper_sweep_config, parse_sweep_csv, run_sweep)

__all__ = [name for name in dir() if not name.startswith("_")]
