"""Leader-guided crowd evacuation: simulation and control optimization.

Microscopic follower-leader dynamics, their mean-field Monte-Carlo
approximation, evacuation objectives, and compass-search optimization of
leader trajectories.
"""

__version__ = "0.1.0"

from . import kernels
from .control import (ControlSchedule, LeaderStrategy, WaypointPlan,
                      followers_center_of_mass, go_to_target_control,
                      schedule_to_control)
from .env import Environment, Exit, Wall, is_evacuated, project_velocity, visibility_indicator
from .meso import (DensityGrid, MfmcConfig, ParticleEnsemble, hat_alignment,
                   hat_repulsion, kde_density, mfmc_step, simulate_meso,
                   subsample, topological_radius)
from .micro import (euler_step, follower_acceleration, leader_velocity,
                    repulsion_kernel, self_propulsion, simulate,
                    topological_ball)
from .objective import (CongestionReport, ObjectiveSpec, congestion_metrics,
                        evacuation_time, evaluate_objective, mass_split_cost,
                        residual_mass)
from .optimize import (CompassConfig, SearchTrace, build_initial_schedule,
                       compass_search, perturb_schedule)
from .params import ModelParams
from .scenario import Scenario, bundled_scenarios, load_scenario
from .state import CrowdState, FollowerState, LeaderState
