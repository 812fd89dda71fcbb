//! Learned dynamics: the neural ODE ensemble, its likelihood training,
//! forward simulation, and the discrete-time transition baseline.

pub mod model;
pub mod mpets;
pub mod predict;
pub mod train;

pub use model::{DynamicsCheckpoint, DynamicsConfig, DynamicsForm, EnsembleDynamics};
pub use mpets::{transitions, MpetsMode, MpetsModel, Transition};
pub use predict::{
    clip_for_report, prediction_windows, predictive_mse, predictive_mse_strided, sample_trajectories, MemberField,
    SampledTrajectories, Window, MSE_REPORT_CAP,
};
pub use train::{
    elbo_gradients, elbo_loss, elbo_loss_with, finite_difference_pairs, gradient_match_init, train_dynamics, Dataset,
    ElboEval, SubsequenceBatch, TrainConfig, TrainReport,
};
