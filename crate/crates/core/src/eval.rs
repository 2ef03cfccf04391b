//! Benchmark metrics, report bundles, outcome rules and the downstream
//! action selector.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionLabel;
use crate::diff::{state_diff, ChangeRecord, ComponentKey, FieldValue, StateDelta};
use crate::grpo::TelemetryRecord;
use crate::pipeline::{DatasetManifest, WiaTriplet};
use crate::sim::Simulator;
use crate::state::{GameState, Team};

pub const HISTOGRAM_BINS: usize = 10;
/// How the headline score is defined. Stored in every report.
pub const METRIC_NOTE: &str = "accuracy = mean per-sample reward in [0,1]; exact_match = share of samples scoring 1.0";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot write {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One scored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub provenance: String,
    #[serde(alias = "reward")]
    pub score: f64,
    pub difficulty: u8,
    #[serde(default)]
    pub change_types: Vec<ComponentKey>,
}

impl SampleScore {
    pub fn for_triplet(t: &WiaTriplet, score: f64) -> Self {
        SampleScore {
            provenance: t.provenance.key(),
            score,
            difficulty: t.difficulty(),
            change_types: t.delta.changed_components(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DifficultyStats {
    pub count: u64,
    pub mean: f64,
    pub exact_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub total: u64,
    pub overall_score: f64,
    pub exact_match_rate: f64,
    pub per_difficulty: BTreeMap<u8, DifficultyStats>,
    pub change_type_counts: BTreeMap<ComponentKey, u64>,
    pub histogram: [u64; HISTOGRAM_BINS],
}

/// Bin of a score in `[0,1]`: `[0,0.1)`, ..., `[0.9,1.0]`.
pub fn histogram_bin(score: f64) -> usize {
    ((score * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

pub fn evaluate(samples: &[SampleScore]) -> EvalReport {
    let mut sums: BTreeMap<u8, (u64, f64, u64)> = BTreeMap::new();
    let mut change_type_counts: BTreeMap<ComponentKey, u64> = ComponentKey::ALL.iter().map(|k| (*k, 0)).collect();
    let mut histogram = [0u64; HISTOGRAM_BINS];
    let mut total = 0.0;
    let mut exact = 0u64;
    for s in samples {
        let e = sums.entry(s.difficulty).or_default();
        e.0 += 1;
        e.1 += s.score;
        if s.score == 1.0 {
            e.2 += 1;
            exact += 1;
        }
        total += s.score;
        for k in &s.change_types {
            *change_type_counts.entry(*k).or_default() += 1;
        }
        histogram[histogram_bin(s.score)] += 1;
    }
    let n = samples.len() as u64;
    let per_difficulty = sums
        .into_iter()
        .map(|(d, (c, sum, ex))| (d, DifficultyStats { count: c, mean: sum / c as f64, exact_match: ex as f64 / c as f64 }))
        .collect();
    let rate = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    EvalReport {
        metric: METRIC_NOTE.to_string(),
        total: n,
        overall_score: rate(total),
        exact_match_rate: rate(exact as f64),
        per_difficulty,
        change_type_counts,
        histogram,
    }
}

impl EvalReport {
    /// Count-weighted mean of the per-difficulty means.
    pub fn weighted_mean(&self) -> f64 {
        let n: u64 = self.per_difficulty.values().map(|s| s.count).sum();
        if n == 0 {
            return 0.0;
        }
        self.per_difficulty.values().map(|s| s.count as f64 * s.mean).sum::<f64>() / n as f64
    }

    /// Per-difficulty text table with columns d=1..4 and overall.
    pub fn table(&self) -> String {
        let stats: Vec<DifficultyStats> = (1..=4u8).map(|d| self.per_difficulty.get(&d).copied().unwrap_or_default()).collect();
        let mut out = format!("{:<12}", "metric");
        for d in 1..=4 {
            write!(out, "{:>10}", format!("d={d}")).unwrap();
        }
        writeln!(out, "{:>10}", "overall").unwrap();
        let rows: [(&str, Box<dyn Fn(&DifficultyStats) -> String>, String); 3] = [
            ("count", Box::new(|s| s.count.to_string()), self.total.to_string()),
            ("accuracy", Box::new(|s| format!("{:.4}", s.mean)), format!("{:.4}", self.overall_score)),
            ("exact_match", Box::new(|s| format!("{:.4}", s.exact_match)), format!("{:.4}", self.exact_match_rate)),
        ];
        for (name, cell, overall) in rows {
            write!(out, "{name:<12}").unwrap();
            for s in &stats {
                let v = if s.count == 0 { "-".to_string() } else { cell(s) };
                write!(out, "{v:>10}").unwrap();
            }
            writeln!(out, "{overall:>10}").unwrap();
        }
        out
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), EvalError> {
    std::fs::write(path, text).map_err(|source| EvalError::IoFailure { path: path.to_path_buf(), source })
}

/// Writes `report.json`, `table.txt`, `histogram.csv` and, with telemetry,
/// `reward.csv` and `length.csv` into `dir`. Returns the written paths.
pub fn report_render(report: &EvalReport, telemetry: Option<&[TelemetryRecord]>, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    std::fs::create_dir_all(dir).map_err(|source| EvalError::IoFailure { path: dir.to_path_buf(), source })?;
    let mut files = vec![
        ("report.json", serde_json::to_string_pretty(report).expect("report is serializable") + "\n"),
        ("table.txt", report.table()),
    ];
    let mut hist = String::from("bin_lower,count\n");
    for (i, c) in report.histogram.iter().enumerate() {
        writeln!(hist, "{:.1},{c}", i as f64 / HISTOGRAM_BINS as f64).unwrap();
    }
    files.push(("histogram.csv", hist));
    if let Some(tel) = telemetry {
        let series = |f: fn(&TelemetryRecord) -> f64| {
            let mut s = String::from("step,value\n");
            for r in tel {
                writeln!(s, "{},{}", r.step, f(r)).unwrap();
            }
            s
        };
        files.push(("reward.csv", series(|r| r.mean_reward)));
        files.push(("length.csv", series(|r| r.mean_len)));
    }
    let mut paths = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        write_file(&p, &text)?;
        paths.push(p);
    }
    Ok(paths)
}

pub fn dataset_stats(dataset: &[WiaTriplet]) -> DatasetManifest {
    DatasetManifest::from_triplets(dataset)
}

/// Difficulty and change-type table with two-decimal percentages.
pub fn stats_table(m: &DatasetManifest) -> String {
    let mut out = format!("{:<24}{:>8}{:>10}\n", "", "count", "pct");
    for d in 1..=4u8 {
        let c = m.per_difficulty.get(&d).copied().unwrap_or(0);
        writeln!(out, "{:<24}{c:>8}{:>10}", format!("d={d}"), m.difficulty_pct(d)).unwrap();
    }
    for k in ComponentKey::ALL {
        let c = m.per_change_type.get(&k).copied().unwrap_or(0);
        writeln!(out, "{:<24}{c:>8}{:>10}", k.as_str(), m.change_type_pct(k)).unwrap();
    }
    writeln!(out, "{:<24}{:>8}{:>10}", "total", m.samples, if m.samples == 0 { "0.00" } else { "100.00" }).unwrap();
    out
}

// Outcome rules.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Own,
    Opponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    #[default]
    Any,
    Decreased,
    Increased,
    BecameTrue,
    BecameFalse,
    /// Integer value dropped to zero or below from a positive value.
    Destroyed,
}

impl ChangeKind {
    fn matches(self, old: &FieldValue, new: &FieldValue) -> bool {
        match self {
            ChangeKind::Any => true,
            ChangeKind::Decreased => matches!((old.as_int(), new.as_int()), (Some(a), Some(b)) if b < a),
            ChangeKind::Increased => matches!((old.as_int(), new.as_int()), (Some(a), Some(b)) if b > a),
            ChangeKind::BecameTrue => new.as_bool() == Some(true) && old.as_bool() != Some(true),
            ChangeKind::BecameFalse => new.as_bool() == Some(false) && old.as_bool() == Some(true),
            ChangeKind::Destroyed => matches!((old.as_int(), new.as_int()), (Some(a), Some(b)) if a > 0 && b <= 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Favorable,
    Unfavorable,
}

impl Polarity {
    fn sign(self) -> f64 {
        match self {
            Polarity::Favorable => 1.0,
            Polarity::Unfavorable => -1.0,
        }
    }
}

/// One rule. Unset pattern fields match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<ComponentKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<Side>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default)]
    pub change: ChangeKind,
    pub polarity: Polarity,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl OutcomeRule {
    fn matches(&self, key: ComponentKey, side: Option<Side>, rec: &ChangeRecord) -> bool {
        self.component.is_none_or(|c| c == key)
            && self.side.is_none_or(|s| Some(s) == side)
            && self.field.as_ref().is_none_or(|f| *f == rec.field)
            && self.change.matches(&rec.old, &rec.new)
    }
}

pub const DEFAULT_OUTCOME_RULES: &str = include_str!("outcome_rules.toml");

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("invalid outcome rules: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("rule {index}: weight {weight} must be finite and non-negative")]
    BadWeight { index: usize, weight: f64 },
}

/// Ordered rule list read from a team's point of view. The first matching
/// rule decides a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRules {
    pub perspective: Team,
    #[serde(rename = "rule", default)]
    pub rules: Vec<OutcomeRule>,
}

impl Default for OutcomeRules {
    fn default() -> Self {
        Self::from_toml(DEFAULT_OUTCOME_RULES).expect("shipped outcome rules parse")
    }
}

impl OutcomeRules {
    pub fn from_toml(text: &str) -> Result<Self, RulesError> {
        let rules: OutcomeRules = toml::from_str(text)?;
        for (index, r) in rules.rules.iter().enumerate() {
            if !r.weight.is_finite() || r.weight < 0.0 {
                return Err(RulesError::BadWeight { index, weight: r.weight });
            }
        }
        Ok(rules)
    }

    pub fn with_perspective(&self, team: Team) -> Self {
        OutcomeRules { perspective: team, rules: self.rules.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeLabel {
    Positive,
    Negative,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub score: f64,
    pub label: OutcomeLabel,
}

fn team_of(state: &GameState, key: ComponentKey, entity: &str) -> Option<Team> {
    match key {
        ComponentKey::HeroChanges => state.heroes.iter().find(|h| h.hero_id.as_str() == entity).map(|h| h.team),
        ComponentKey::TurretChanges => state.towers.iter().find(|t| t.tower_id.as_str() == entity).map(|t| t.team),
        ComponentKey::MinionWaveChanges => state.minion_waves.iter().find(|w| w.wave_id.as_str() == entity).map(|w| w.team),
        ComponentKey::DragonStatusChanges => state.primary().map(|p| p.team),
    }
}

/// Scores a delta with `rules`. Entity teams are read from `state`, the
/// state the delta starts from; dragon changes count for the primary hero's team.
pub fn classify_outcome(delta: &StateDelta, state: &GameState, rules: &OutcomeRules) -> Outcome {
    let mut score = 0.0;
    for key in ComponentKey::ALL {
        for rec in delta.component(key) {
            let side = team_of(state, key, &rec.entity).map(|t| if t == rules.perspective { Side::Own } else { Side::Opponent });
            if let Some(r) = rules.rules.iter().find(|r| r.matches(key, side, rec)) {
                score += r.polarity.sign() * r.weight;
            }
        }
    }
    let label = if score > 0.0 {
        OutcomeLabel::Positive
    } else if score < 0.0 {
        OutcomeLabel::Negative
    } else {
        OutcomeLabel::Neutral
    };
    Outcome { score, label }
}

// Downstream action selection.

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[error("forecast for {action} failed: {reason}")]
pub struct ForecastError {
    pub action: String,
    pub reason: String,
}

/// Anything that predicts the delta an action causes.
pub trait Forecaster: Sync {
    fn forecast(&self, state: &GameState, action: ActionLabel) -> Result<StateDelta, ForecastError>;

    /// The forecaster's own top-`k` candidates, if it can rank actions.
    fn propose(&self, _state: &GameState, _k: usize) -> Result<Option<Vec<ActionLabel>>, ForecastError> {
        Ok(None)
    }
}

/// Uses the simulator itself as the forecaster.
pub struct SimForecaster<'a> {
    pub sim: &'a Simulator,
    pub horizon_s: i64,
}

impl Forecaster for SimForecaster<'_> {
    fn forecast(&self, state: &GameState, action: ActionLabel) -> Result<StateDelta, ForecastError> {
        let err = |reason: String| ForecastError { action: action.name().to_string(), reason };
        let next = self.sim.step(state, action, self.horizon_s).map_err(|e| err(e.to_string()))?;
        state_diff(state, &next).map_err(|e| err(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateForecast {
    pub action: ActionLabel,
    pub delta: StateDelta,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: ActionLabel,
    pub score: f64,
    /// Another candidate reached the same score; the earliest in registry order won.
    pub tie: bool,
    /// Best `k` candidates, highest score first.
    pub ranked: Vec<CandidateForecast>,
    pub failures: Vec<ForecastError>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SelectError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("every candidate forecast failed")]
    AllCandidatesFailed(Vec<ForecastError>),
}

/// Forecasts every candidate, classifies it and picks the best. Candidates
/// are the forecaster's own proposals when it has any, else the full registry.
pub fn select_action(
    state: &GameState,
    forecaster: &dyn Forecaster,
    k: usize,
    rules: &OutcomeRules,
) -> Result<Selection, SelectError> {
    if k == 0 {
        return Err(SelectError::InvalidK);
    }
    let candidates: Vec<ActionLabel> = match forecaster.propose(state, k) {
        Ok(Some(list)) if !list.is_empty() => {
            let mut seen = Vec::new();
            for a in list {
                if !seen.contains(&a) {
                    seen.push(a);
                }
            }
            seen
        }
        Ok(_) => ActionLabel::all().collect(),
        Err(e) => {
            tracing::warn!("{e}; falling back to the full registry");
            ActionLabel::all().collect()
        }
    };
    let results: Vec<Result<CandidateForecast, ForecastError>> = candidates
        .par_iter()
        .map(|a| {
            let delta = forecaster.forecast(state, *a)?;
            let outcome = classify_outcome(&delta, state, rules);
            Ok(CandidateForecast { action: *a, delta, outcome })
        })
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(c) => ok.push(c),
            Err(e) => {
                tracing::warn!("{e}; candidate skipped");
                failures.push(e);
            }
        }
    }
    if ok.is_empty() {
        return Err(SelectError::AllCandidatesFailed(failures));
    }
    ok.sort_by(|a, b| b.outcome.score.total_cmp(&a.outcome.score).then(a.action.index().cmp(&b.action.index())));
    let best = ok[0].outcome.score;
    let tie = ok.get(1).is_some_and(|c| c.outcome.score == best);
    ok.truncate(k);
    Ok(Selection { chosen: ok[0].action, score: best, tie, ranked: ok, failures })
}
