//! Learned trajectory scorer: per-feature normalization, LSTM and
//! feed-forward encoders, masked self-attention across feature tokens, a
//! shared scoring head and a weighted sum of per-feature scores.

mod gradcheck;
mod loss;
mod model;
mod params_io;
pub mod tape;

pub use gradcheck::{gradient_check, GradCheckReport, REL_ERROR_FLOOR};
pub use loss::{focal_nll, nll, softmax_distribution, ScoreDistribution};
pub use model::{
    backward, forward, init_params, loss_and_grads, score_bundles, update_running_stats, Architecture, BatchInput,
    ForwardOutput, Mode, ScorerConfig, ScorerParams,
};
pub use params_io::{decode_params, encode_params, load_params, save_params, PARAMS_MAGIC, PARAMS_VERSION};
pub use tape::{Group, Tape, Var};

#[cfg(test)]
mod tests;
