//! Rule-based outcome reward over predicted state deltas.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{parse_delta, ChangeRecord, ComponentKey, FieldValue, StateDelta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    #[serde(default = "one")]
    pub minion_wave_changes: f64,
    #[serde(default = "one")]
    pub turret_changes: f64,
    #[serde(default = "one")]
    pub hero_changes: f64,
    #[serde(default = "one")]
    pub dragon_status_changes: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Weights {
    fn default() -> Self {
        Weights { minion_wave_changes: 1.0, turret_changes: 1.0, hero_changes: 1.0, dragon_status_changes: 1.0 }
    }
}

impl Weights {
    pub fn get(&self, key: ComponentKey) -> f64 {
        match key {
            ComponentKey::MinionWaveChanges => self.minion_wave_changes,
            ComponentKey::TurretChanges => self.turret_changes,
            ComponentKey::HeroChanges => self.hero_changes,
            ComponentKey::DragonStatusChanges => self.dragon_status_changes,
        }
    }

    pub fn set(&mut self, key: ComponentKey, w: f64) {
        match key {
            ComponentKey::MinionWaveChanges => self.minion_wave_changes = w,
            ComponentKey::TurretChanges => self.turret_changes = w,
            ComponentKey::HeroChanges => self.hero_changes = w,
            ComponentKey::DragonStatusChanges => self.dragon_status_changes = w,
        }
    }
}

/// How a non-exact prediction can still earn half credit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialRule {
    /// Shared `(entity, field, new)` triple, or the same non-empty entity set.
    #[default]
    OverlapOrSameEntities,
    /// Shared `(entity, field, new)` triple only.
    OverlapOnly,
    /// Exact or nothing.
    Strict,
}

/// Which keys enter the weighted mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyKeyPolicy {
    /// All four keys, both-empty keys count as exact.
    #[default]
    ScoreAll,
    /// Keys empty on both sides are left out; all-empty scores 1.
    SkipBothEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub partial_rule: PartialRule,
    #[serde(default)]
    pub empty_key_policy: EmptyKeyPolicy,
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot parse reward spec: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("weight for {0} must be positive and finite, got {1}")]
    BadWeight(ComponentKey, f64),
}

impl RewardSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        for key in ComponentKey::ALL {
            let w = self.weights.get(key);
            if !(w.is_finite() && w > 0.0) {
                return Err(SpecError::BadWeight(key, w));
            }
        }
        Ok(())
    }

    /// Reads a TOML spec such as `weights.hero_changes = 2.0`.
    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let spec: RewardSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rationale {
    Exact,
    Partial,
    Miss,
}

impl Rationale {
    pub fn score(self) -> f64 {
        match self {
            Rationale::Exact => 1.0,
            Rationale::Partial => 0.5,
            Rationale::Miss => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyScore {
    pub key: ComponentKey,
    pub score: f64,
    pub rationale: Rationale,
}

impl KeyScore {
    pub fn new(key: ComponentKey, rationale: Rationale) -> Self {
        KeyScore { key, score: rationale.score(), rationale }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("no <answer> block in completion")]
    NoAnswerTag,
    #[error("malformed answer: {0}")]
    MalformedAnswer(String),
}

fn strip_think(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find("<think>") {
        out.push_str(&rest[..open]);
        match rest[open..].find("</think>") {
            Some(close) => rest = &rest[open + close + "</think>".len()..],
            None => {
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn strip_fence(body: &str) -> &str {
    let t = body.trim();
    if let Some(inner) = t.strip_prefix("```") {
        let inner = inner.strip_prefix("json").unwrap_or(inner);
        if let Some(inner) = inner.trim_end().strip_suffix("```") {
            return inner.trim();
        }
    }
    t
}

/// Parses the last complete `<answer>` block of a completion. Anything
/// inside `<think>` is ignored.
pub fn extract_answer(completion: &str) -> Result<StateDelta, ExtractError> {
    let text = strip_think(completion);
    let mut last = None;
    let mut saw_open = false;
    let mut from = 0;
    while let Some(off) = text[from..].find("<answer>") {
        saw_open = true;
        let body_start = from + off + "<answer>".len();
        match text[body_start..].find("</answer>") {
            Some(len) => {
                last = Some(&text[body_start..body_start + len]);
                from = body_start + len + "</answer>".len();
            }
            None => break,
        }
    }
    match last {
        Some(body) => parse_delta(strip_fence(body)).map_err(|e| ExtractError::MalformedAnswer(e.to_string())),
        None if saw_open => Err(ExtractError::MalformedAnswer("unterminated <answer> block".into())),
        None => Err(ExtractError::NoAnswerTag),
    }
}

fn triples(records: &[ChangeRecord]) -> BTreeSet<(&str, &str, &FieldValue)> {
    records.iter().map(|r| (r.entity.as_str(), r.field.as_str(), &r.new)).collect()
}

pub fn score_key(key: ComponentKey, predicted: &[ChangeRecord], truth: &[ChangeRecord], rule: PartialRule) -> KeyScore {
    let p: BTreeSet<&ChangeRecord> = predicted.iter().collect();
    let t: BTreeSet<&ChangeRecord> = truth.iter().collect();
    if p == t {
        return KeyScore::new(key, Rationale::Exact);
    }
    let overlap = || !triples(predicted).is_disjoint(&triples(truth));
    let same_entities = || {
        let pe: BTreeSet<&str> = predicted.iter().map(|r| r.entity.as_str()).collect();
        let te: BTreeSet<&str> = truth.iter().map(|r| r.entity.as_str()).collect();
        !pe.is_empty() && pe == te
    };
    let partial = match rule {
        PartialRule::OverlapOrSameEntities => overlap() || same_entities(),
        PartialRule::OverlapOnly => overlap(),
        PartialRule::Strict => false,
    };
    KeyScore::new(key, if partial { Rationale::Partial } else { Rationale::Miss })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub reward: f64,
    pub key_scores: Vec<KeyScore>,
}

/// Weighted mean of per-key scores. Format never contributes.
pub fn reward(predicted: &StateDelta, truth: &StateDelta, spec: &RewardSpec) -> RewardOutcome {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut key_scores = Vec::with_capacity(4);
    for key in ComponentKey::ALL {
        let (p, t) = (predicted.component(key), truth.component(key));
        let ks = score_key(key, p, t, spec.partial_rule);
        key_scores.push(ks);
        if spec.empty_key_policy == EmptyKeyPolicy::SkipBothEmpty && p.is_empty() && t.is_empty() {
            continue;
        }
        let w = spec.weights.get(key);
        num += w * ks.score;
        den += w;
    }
    let reward = if den > 0.0 { num / den } else { 1.0 };
    RewardOutcome { reward, key_scores }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractFailure {
    NoAnswerTag,
    MalformedAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCompletion {
    pub reward: f64,
    pub key_scores: Option<Vec<KeyScore>>,
    pub failure: Option<ExtractFailure>,
}

pub fn score_completion(completion: &str, truth: &StateDelta, spec: &RewardSpec) -> ScoredCompletion {
    match extract_answer(completion) {
        Ok(pred) => {
            let out = reward(&pred, truth, spec);
            ScoredCompletion { reward: out.reward, key_scores: Some(out.key_scores), failure: None }
        }
        Err(e) => ScoredCompletion {
            reward: 0.0,
            key_scores: None,
            failure: Some(match e {
                ExtractError::NoAnswerTag => ExtractFailure::NoAnswerTag,
                ExtractError::MalformedAnswer(_) => ExtractFailure::MalformedAnswer,
            }),
        },
    }
}

/// Scores a group of completions against one truth, preserving order.
pub fn batch_reward(completions: &[String], truth: &StateDelta, spec: &RewardSpec) -> Vec<ScoredCompletion> {
    completions.par_iter().map(|c| score_completion(c, truth, spec)).collect()
}
