//! Group relative policy optimization over a toy linear policy.

pub mod advantages;
pub mod kl;
pub mod loss;
pub mod policy;
pub mod trainer;

use serde::{Deserialize, Serialize};

pub use advantages::{compute_advantages, AdvantageError};
pub use kl::{kl_grad_theta, kl_term, KlTerm};
pub use loss::{grpo_loss, grpo_loss_value, Completion, CompletionGroup, LossError, LossOutput};
pub use policy::{DecodingTable, Token, ToyPolicy};
pub use trainer::{
    expected_reward, fresh_policy, mean_expected_reward, param_drift, prepare_cases, train, PromptCase, TelemetryRecord,
    TrainError, TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub std_eps: f64,
    pub seed: u64,
    /// Heavy-ball momentum; 0 is plain gradient descent.
    pub momentum: f64,
    /// Step halvings allowed when an update raises the group loss.
    pub max_backtracks: u32,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 0.01,
            learning_rate: 2.0,
            max_steps: 400,
            std_eps: 1e-8,
            seed: 0,
            momentum: 0.0,
            max_backtracks: 30,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.group_size < 2 {
            return Err(format!("group_size {} < 2", self.group_size));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(format!("clip_eps {} outside (0, 1)", self.clip_eps));
        }
        if !(self.kl_coef >= 0.0) {
            return Err(format!("kl_coef {} is negative", self.kl_coef));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate {} is not positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("momentum {} outside [0, 1)", self.momentum));
        }
        Ok(())
    }
}
