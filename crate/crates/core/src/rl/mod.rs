//! Progressive age estimation as a walk on the decade x year grid, learned
//! with Double-DQN and an auxiliary focal/absolute-error objective.

pub mod grid;
pub mod loss;
pub mod policy;
pub mod qnet;
pub mod replay;
pub mod trainer;

pub use grid::{
    decode_position, encode_age, env_step, reward, Action, ActionSpace, ActionType, AgentState, GridPosition,
    ImbalanceTable, RewardModel,
};
pub use loss::{combined_loss, focal_loss};
pub use policy::{argmax, select_action};
pub use qnet::{q_forward, QNetworkParams, QOutput};
pub use replay::ReplayBuffer;
pub use trainer::{
    double_q_target, double_q_targets, predict_age, train_prlae, vanilla_q_targets, EmbeddingProvider, RlConfig,
    RlReport, Transition,
};
