"""Two-lane mixed-traffic highway simulator and MA2C lane-change trainer."""

from .core import (
    LaneDecision,
    RoadConfig,
    SpawnError,
    VehicleKind,
    VehicleState,
    WorldState,
    advance,
    detect_collisions,
    follower,
    leader,
    neighbors,
    spawn_world,
)
from .hdv import (
    IdmParams,
    MobilParams,
    equilibrium_gap,
    hdv_decide,
    idm_acceleration,
    mobil_incentive,
    mobil_safety,
)
from .env import (
    AvAction,
    EnvConfig,
    HighwayEnv,
    RewardConfig,
    StepResult,
    agent_reward,
    build_observation,
    env_reset,
    env_step,
    local_reward,
    reward_comfort,
    reward_headway,
    reward_safety,
    reward_speed,
)
from .nn import (
    AdamState,
    CheckpointError,
    LossWeights,
    NetworkOutput,
    NetworkParams,
    TrainingFault,
    apply_update,
    backward,
    deserialize,
    forward,
    greedy_action,
    init_params,
    sample_action,
    serialize,
)
from .ma2c import (
    EvalMetrics,
    Hyperparams,
    IdlePolicy,
    PolicyBundle,
    RandomPolicy,
    RolloutBuffer,
    TrainResult,
    collect_rollout,
    compute_advantages,
    compute_returns,
    evaluate,
    train,
    update,
)
from .config import RunConfig, load_config, save_config

__version__ = "0.1.0"
