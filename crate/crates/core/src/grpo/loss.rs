use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kl::{kl_grad_theta, kl_term};
use super::policy::{Token, ToyPolicy};
use super::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub tokens: Vec<Token>,
    pub logp_theta: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub reward: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionGroup {
    pub prompt_id: String,
    pub features: Vec<f64>,
    pub completions: Vec<Completion>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("completion {completion}: {track} has {got} entries for {want} tokens")]
    MissingTrack { completion: usize, track: &'static str, got: usize, want: usize },
    #[error("group has no completions")]
    EmptyGroup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Mean per-token KL estimate.
    pub kl_mean: f64,
    /// Share of tokens whose clipped branch was active.
    pub clip_frac: f64,
    pub kl_clamped: bool,
}

/// Clipped group surrogate with a KL penalty, averaged over all tokens of the
/// group, and its gradient with respect to the policy parameters. Current
/// log-probabilities are recomputed from `policy`; the old and reference
/// tracks are constants.
pub fn grpo_loss(policy: &ToyPolicy, group: &CompletionGroup, cfg: &TrainerConfig) -> Result<LossOutput, LossError> {
    if group.completions.is_empty() {
        return Err(LossError::EmptyGroup);
    }
    for (i, c) in group.completions.iter().enumerate() {
        for (track, v) in [("logp_theta", &c.logp_theta), ("logp_old", &c.logp_old), ("logp_ref", &c.logp_ref)] {
            if v.len() != c.tokens.len() {
                return Err(LossError::MissingTrack { completion: i, track, got: v.len(), want: c.tokens.len() });
            }
        }
    }
    let n_tokens: usize = group.completions.iter().map(|c| c.tokens.len()).sum();
    let mut grad = vec![0.0; policy.params.len()];
    if n_tokens == 0 {
        return Ok(LossOutput { loss: 0.0, grad, kl_mean: 0.0, clip_frac: 0.0, kl_clamped: false });
    }
    let x = &group.features;
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let mut total = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0usize;
    let mut kl_clamped = false;
    for c in &group.completions {
        let a = c.advantage;
        for (t, tok) in c.tokens.iter().enumerate() {
            let lp = policy.log_prob(*tok, x);
            let rho = (lp - c.logp_old[t]).exp();
            let unclipped = rho * a;
            let clipped_val = rho.clamp(lo, hi) * a;
            let kl = kl_term(c.logp_ref[t], lp);
            kl_clamped |= kl.clamped;
            kl_sum += kl.value;
            total += unclipped.min(clipped_val) - cfg.kl_coef * kl.value;

            let unclipped_active = (lo..=hi).contains(&rho) || (rho > hi && a < 0.0) || (rho < lo && a > 0.0);
            if !unclipped_active {
                clipped += 1;
            }
            let d_surrogate = if unclipped_active { rho * a } else { 0.0 };
            let d_term = d_surrogate - cfg.kl_coef * kl_grad_theta(c.logp_ref[t], lp);
            policy.accumulate_grad(*tok, x, -d_term / n_tokens as f64, &mut grad);
        }
    }
    Ok(LossOutput {
        loss: -total / n_tokens as f64,
        grad,
        kl_mean: kl_sum / n_tokens as f64,
        clip_frac: clipped as f64 / n_tokens as f64,
        kl_clamped,
    })
}

/// Loss value only.
pub fn grpo_loss_value(policy: &ToyPolicy, group: &CompletionGroup, cfg: &TrainerConfig) -> Result<f64, LossError> {
    grpo_loss(policy, group, cfg).map(|o| o.loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(adv: [f64; 2], n: usize) -> (ToyPolicy, CompletionGroup) {
        let p = ToyPolicy::zeros(2);
        let x = vec![1.0, 0.5];
        let tokens: Vec<Token> = (0..n).map(|i| Token { slot: (i % 4) as u8, id: 1 }).collect();
        let lp = p.sequence_log_probs(&tokens, &x);
        let completions = adv
            .iter()
            .map(|a| Completion {
                tokens: tokens.clone(),
                logp_theta: lp.clone(),
                logp_old: lp.clone(),
                logp_ref: lp.clone(),
                reward: 0.0,
                advantage: *a,
            })
            .collect();
        (p, CompletionGroup { prompt_id: "q".into(), features: x, completions })
    }

    #[test]
    fn zero_cases() {
        let cfg = TrainerConfig::default();
        let (p, g) = group([0.0, 0.0], 4);
        let out = grpo_loss(&p, &g, &cfg).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.iter().all(|v| *v == 0.0));

        let cfg = TrainerConfig { kl_coef: 0.0, ..TrainerConfig::default() };
        let (p, g) = group([-1.0, 1.0], 5);
        assert_eq!(grpo_loss(&p, &g, &cfg).unwrap().loss, 0.0);
    }

    #[test]
    fn missing_track() {
        let (p, mut g) = group([1.0, -1.0], 4);
        g.completions[1].logp_ref.pop();
        assert!(matches!(
            grpo_loss(&p, &g, &TrainerConfig::default()),
            Err(LossError::MissingTrack { completion: 1, track: "logp_ref", .. })
        ));
    }
}
