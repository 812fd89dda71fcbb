//! Continuous-time actor-critic on imagined rollouts of the learned model.

pub mod evaluate;
pub mod imagine;
pub mod nets;
pub mod train;

pub use evaluate::{discounted_return, eval_times, evaluate_policy, EvalConfig, EvalReport};
pub use imagine::{
    actor_loss, critic_loss, critic_targets, horizon_grid, imagine, quadrature_weights, sample_horizons, value_estimate,
    HorizonSampling, HorizonSpec, ImaginedBatch, MemberPath, Quadrature, RewardModel,
};
pub use nets::{ActorCriticCheckpoint, Critic, Policy};
pub use train::{sample_initial_states, train_actor_critic, AcConfig, AcReport, ActorCritic};
