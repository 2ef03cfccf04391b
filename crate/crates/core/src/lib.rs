//! What-if analysis toolkit core: game states, state deltas, verifiable
//! rewards, a deterministic mini-MOBA and a small GRPO trainer.

pub mod action;
pub mod diff;
pub mod reward;
pub mod state;
pub mod pipeline;
pub mod sim;
pub mod grpo;
pub mod eval;
pub mod checks;
