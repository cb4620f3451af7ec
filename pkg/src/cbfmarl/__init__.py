"""Multi-vehicle intersection simulator with constraint-based reward design
for multi-agent PPO, heuristic reward baselines, and a safety-filter
activation analysis."""

__version__ = "0.1.0"

from .cbf import (CbfConfig, CbfEvaluation, ConstraintValue, all_constraints,
                  evaluate_psi, road_cbf, vehicle_kinematics, vehicle_pair_cbf)
from .dynamics import VehicleParams, clamp_input, derivative, step, wrap_angle
from .env import (COLLISION_ROAD, COLLISION_VEHICLE, EXIT, EpisodeEvent,
                  IntersectionEnv, SimConfig, rect_separation, rects_overlap)
from .evaluation import (EvalConfig, EvalReport, EpisodeTrace, SweepRecord,
                         TotalReward, evaluate_policy, run_episode, sweep,
                         total_reward)
from .geometry import (IntersectionMap, MapConfig, Polyline, ReferencePath,
                       build_intersection, circle_centers, decompose_rectangle,
                       pseudo_distance, rect_corners, sample_reference_points)
from .marl import (NumericalError, PolicyParams, PpoConfig, TrainResult,
                   load_policy, save_policy, train)
from .rewards import (METHODS, RewardBreakdown, RewardConfig, cbf_reward,
                      clip_rho, distance_baseline_reward, progress_reward,
                      step_reward, ttc, ttc_baseline_reward)
from .safety_filter import (FilterResult, activation_degree, apply_filter,
                            assemble_agent_qp, solve_box_qp)
