"""Closed-loop MPC driving environment with verifiable rewards.

Modules map one-to-one onto the system's parts: track geometry, the
curvilinear simulator, the tunable receding-horizon controller, behavior
metrics and labels, the reward engine, the lexical memory store, the decision
corpus pipeline, the rollout scoring service, and the evaluation harness/CLI.
"""

from .behaviors import (AdherenceLabel, BehaviorSpec, EVAL_BEHAVIORS,
                        TRAIN_BEHAVIORS, label_adherence, metric_rmse,
                        sample_behavior)
from .episodes import EpisodeEnvironment, drive_reward
from .maps import EVAL_MAP, TRAIN_MAP, get_map
from .mpc import (MpcController, MpcParams, MpcSolution, default_params,
                  schema_descriptor, solve_mpc, validate_params)
from .rewards import (RewardBreakdown, extract_params, r_drive, score_decision,
                      score_format, score_mpc_completion)
from .simulator import (ControlInput, LapLimits, LapTrace, VehicleState,
                        lateral_acceleration, run_lap, step_dynamics)
from .tracks import (FrenetPose, ReferenceLine, TrackGeometry, build_track,
                     generate_raceline, load_raceline, load_track)

__version__ = "0.1.0"
