from .model import ENERGY_MODES, ContactParams, EnvConfig, RewardWeights, RobotModel, default_legs
from .physics import (
    EpisodeDiverged,
    PackedParams,
    WorldState,
    accumulate_energy,
    foot_positions_world,
    orientation_angles,
    pack_params,
    pd_torques,
    physics_substep,
    rotation_matrix,
    run_half_step,
)
from .quadruped import (
    EnvFactory,
    EpisodeDone,
    EpisodeReturn,
    QuadrupedEnv,
    axis_delta,
    compute_reward,
    run_episode,
)
