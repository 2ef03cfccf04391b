use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::advantages::{compute_advantages, AdvantageError};
use super::loss::{grpo_loss, grpo_loss_value, Completion, CompletionGroup, LossError};
use super::policy::{features, DecodingTable, ToyPolicy, N_COMPONENTS, N_FEATURES, N_OPTIONS};
use super::TrainerConfig;
use crate::diff::{ComponentKey, StateDelta};
use crate::pipeline::WiaTriplet;
use crate::reward::{reward, score_key, EmptyKeyPolicy, RewardSpec};
use crate::sim::{splitmix, SimError, Simulator};

/// A training prompt with everything needed to decode and score rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptCase {
    pub id: String,
    pub features: Vec<f64>,
    pub table: DecodingTable,
    pub truth: StateDelta,
}

pub fn prepare_cases(sim: &Simulator, triplets: &[WiaTriplet]) -> Result<Vec<PromptCase>, SimError> {
    triplets
        .par_iter()
        .map(|t| {
            Ok(PromptCase {
                id: t.provenance.key(),
                features: features(&t.state, t.action, t.horizon_s),
                table: DecodingTable::for_triplet(sim, t)?,
                truth: t.delta.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_len: f64,
    pub loss: f64,
    pub kl_mean: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}: {dump}")]
    DivergedLoss { step: usize, dump: String },
    #[error("training needs at least one prompt")]
    EmptyDataset,
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: ToyPolicy,
    pub telemetry: Vec<TelemetryRecord>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(seed ^ splitmix(a ^ splitmix(b)))
}

fn rollout(policy: &ToyPolicy, reference: &ToyPolicy, case: &PromptCase, spec: &RewardSpec, seed: u64) -> Completion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = policy.sample(&case.features, &mut rng);
    let logp = policy.sequence_log_probs(&tokens, &case.features);
    let logp_ref = reference.sequence_log_probs(&tokens, &case.features);
    let predicted = case.table.decode(&tokens);
    let r = reward(&predicted, &case.truth, spec).reward;
    Completion { tokens, logp_theta: logp.clone(), logp_old: logp, logp_ref, reward: r, advantage: 0.0 }
}

/// Samples one group for `step` from the current policy.
pub fn sample_group(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    cases: &[PromptCase],
    spec: &RewardSpec,
    cfg: &TrainerConfig,
    step: usize,
) -> Result<CompletionGroup, TrainError> {
    let mut pick = ChaCha8Rng::seed_from_u64(mix(cfg.seed, step as u64, u64::MAX));
    let case = &cases[pick.gen_range(0..cases.len())];
    let mut completions: Vec<Completion> = (0..cfg.group_size)
        .into_par_iter()
        .map(|i| rollout(policy, reference, case, spec, mix(cfg.seed, step as u64, i as u64)))
        .collect();
    let rewards: Vec<f64> = completions.iter().map(|c| c.reward).collect();
    for (c, a) in completions.iter_mut().zip(compute_advantages(&rewards, cfg.std_eps)?) {
        c.advantage = a;
    }
    Ok(CompletionGroup { prompt_id: case.id.clone(), features: case.features.clone(), completions })
}

/// Runs GRPO for `cfg.max_steps` steps. The old policy is refreshed every
/// step and the reference stays at the starting parameters.
pub fn train(cases: &[PromptCase], start: ToyPolicy, spec: &RewardSpec, cfg: &TrainerConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if cases.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let reference = start.clone();
    let mut policy = start;
    let mut velocity = vec![0.0; policy.params.len()];
    let mut telemetry = Vec::with_capacity(cfg.max_steps);
    for step in 0..cfg.max_steps {
        let group = sample_group(&policy, &reference, cases, spec, cfg, step)?;
        let out = grpo_loss(&policy, &group, cfg)?;
        if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
            let dump = serde_json::to_string(&group).unwrap_or_default();
            return Err(TrainError::DivergedLoss { step, dump });
        }
        for (v, g) in velocity.iter_mut().zip(&out.grad) {
            *v = cfg.momentum * *v + g;
        }
        let mut lr = cfg.learning_rate;
        let mut candidate = policy.clone();
        for _ in 0..=cfg.max_backtracks {
            for ((c, p), v) in candidate.params.iter_mut().zip(&policy.params).zip(&velocity) {
                *c = p - lr * v;
            }
            if cfg.max_backtracks == 0 || grpo_loss_value(&candidate, &group, cfg)? <= out.loss {
                break;
            }
            lr *= 0.5;
        }
        policy = candidate;

        let n = group.completions.len() as f64;
        telemetry.push(TelemetryRecord {
            step,
            mean_reward: group.completions.iter().map(|c| c.reward).sum::<f64>() / n,
            mean_len: group.completions.iter().map(|c| c.tokens.len() as f64).sum::<f64>() / n,
            loss: out.loss,
            kl_mean: out.kl_mean,
        });
    }
    Ok(TrainOutcome { policy, telemetry })
}

/// Exact expected reward of the policy on one prompt.
pub fn expected_reward(policy: &ToyPolicy, case: &PromptCase, spec: &RewardSpec) -> f64 {
    let mut probs = [[0.0; N_OPTIONS]; N_COMPONENTS];
    let mut scores = [[0.0; N_OPTIONS]; N_COMPONENTS];
    let mut empty = [[false; N_OPTIONS]; N_COMPONENTS];
    for (k, key) in ComponentKey::ALL.iter().enumerate() {
        probs[k] = policy.option_probs(k, &case.features);
        let truth = case.truth.component(*key);
        for o in 0..N_OPTIONS {
            let pred = &case.table.options[k][o];
            scores[k][o] = score_key(*key, pred, truth, spec.partial_rule).score;
            empty[k][o] = pred.is_empty() && truth.is_empty();
        }
    }
    match spec.empty_key_policy {
        EmptyKeyPolicy::ScoreAll => {
            let den: f64 = ComponentKey::ALL.iter().map(|k| spec.weights.get(*k)).sum();
            ComponentKey::ALL
                .iter()
                .enumerate()
                .map(|(k, key)| spec.weights.get(*key) * (0..N_OPTIONS).map(|o| probs[k][o] * scores[k][o]).sum::<f64>())
                .sum::<f64>()
                / den
        }
        EmptyKeyPolicy::SkipBothEmpty => {
            let mut total = 0.0;
            let mut choice = [0usize; N_COMPONENTS];
            loop {
                let (mut num, mut den, mut p) = (0.0, 0.0, 1.0);
                for (k, key) in ComponentKey::ALL.iter().enumerate() {
                    p *= probs[k][choice[k]];
                    if !empty[k][choice[k]] {
                        num += spec.weights.get(*key) * scores[k][choice[k]];
                        den += spec.weights.get(*key);
                    }
                }
                total += p * if den > 0.0 { num / den } else { 1.0 };
                let mut k = 0;
                while k < N_COMPONENTS {
                    choice[k] += 1;
                    if choice[k] < N_OPTIONS {
                        break;
                    }
                    choice[k] = 0;
                    k += 1;
                }
                if k == N_COMPONENTS {
                    break;
                }
            }
            total
        }
    }
}

pub fn mean_expected_reward(policy: &ToyPolicy, cases: &[PromptCase], spec: &RewardSpec) -> f64 {
    if cases.is_empty() {
        return 0.0;
    }
    cases.iter().map(|c| expected_reward(policy, c, spec)).sum::<f64>() / cases.len() as f64
}

/// Euclidean distance between two parameter vectors.
pub fn param_drift(a: &ToyPolicy, b: &ToyPolicy) -> f64 {
    a.params.iter().zip(&b.params).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn fresh_policy() -> ToyPolicy {
    ToyPolicy::zeros(N_FEATURES)
}

pub fn write_telemetry(records: &[TelemetryRecord], path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("telemetry is serializable"))?;
    }
    w.flush()
}
