//! Trajectory to triplet extraction, inactivity filtering, win/loss balancing
//! and the line-delimited dataset format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::ActionLabel;
use crate::diff::{delta_from_value, difficulty, state_diff_with, ComponentKey, DiffOptions, StateDelta};
use crate::state::{hash_match_id, redact, state_from_value, GameState, DEFAULT_REDACTION_SALT};

/// Longest gap between two states that still forms a triplet.
pub const MAX_GAP_S: i64 = 60;
/// Default run length of `None` actions treated as inactivity.
pub const DEFAULT_INACTIVE_RUN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub match_hash: String,
    pub index: u64,
}

impl Provenance {
    pub fn key(&self) -> String {
        format!("{}:{}", self.match_hash, self.index)
    }
}

/// One `(S_t, a_t, S_delta)` sample with its horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WiaTriplet {
    pub state: GameState,
    pub action: ActionLabel,
    pub delta: StateDelta,
    pub horizon_s: i64,
    pub provenance: Provenance,
}

impl WiaTriplet {
    pub fn difficulty(&self) -> u8 {
        difficulty(&self.delta)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("trajectory is not strictly time-ordered at position {index} (t={t} after t={prev})")]
    UnorderedTrajectory { index: usize, t: i64, prev: i64 },
    #[error("trajectory mixes matches at position {index}")]
    MixedMatches { index: usize },
    #[error("io failure on {path}: {source}")]
    IoFailure { path: PathBuf, source: std::io::Error },
    #[error("schema violation on line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("annotator {0} is not available")]
    UnknownAnnotator(String),
}

/// Maps a trajectory position to an action label.
pub trait Annotator {
    fn annotate(&self, index: usize, state: &GameState) -> ActionLabel;
}

/// Reads actions that were logged alongside the states.
pub struct LoggedAnnotator<'a>(pub &'a [ActionLabel]);

impl Annotator for LoggedAnnotator<'_> {
    fn annotate(&self, index: usize, _state: &GameState) -> ActionLabel {
        self.0.get(index).copied().unwrap_or(ActionLabel::NONE)
    }
}

pub struct ConstantAnnotator(pub ActionLabel);

impl Annotator for ConstantAnnotator {
    fn annotate(&self, _index: usize, _state: &GameState) -> ActionLabel {
        self.0
    }
}

pub fn annotate(states: &[GameState], ann: &dyn Annotator) -> Result<Vec<(GameState, ActionLabel)>, PipelineError> {
    for (i, w) in states.windows(2).enumerate() {
        if w[1].t <= w[0].t {
            return Err(PipelineError::UnorderedTrajectory { index: i + 1, t: w[1].t, prev: w[0].t });
        }
        if hash_match_id(&w[0].match_id, DEFAULT_REDACTION_SALT) != hash_match_id(&w[1].match_id, DEFAULT_REDACTION_SALT) {
            return Err(PipelineError::MixedMatches { index: i + 1 });
        }
    }
    Ok(states.iter().enumerate().map(|(i, s)| (s.clone(), ann.annotate(i, s))).collect())
}

/// Drops pairs where the primary hero is dead and every run of at least
/// `min_run` consecutive `None` actions. Runs are measured on the input.
pub fn filter_inactive(pairs: &[(GameState, ActionLabel)], min_run: usize) -> Vec<(GameState, ActionLabel)> {
    let mut drop = vec![false; pairs.len()];
    let mut i = 0;
    while i < pairs.len() {
        if !pairs[i].1.is_none() {
            i += 1;
            continue;
        }
        let start = i;
        while i < pairs.len() && pairs[i].1.is_none() {
            i += 1;
        }
        if min_run > 0 && i - start >= min_run {
            drop[start..i].iter_mut().for_each(|d| *d = true);
        }
    }
    pairs
        .iter()
        .zip(drop)
        .filter(|((s, _), d)| !d && s.primary().is_some_and(|h| h.alive))
        .map(|(p, _)| p.clone())
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    pub max_gap_s: i64,
    pub diff: DiffOptions,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions { max_gap_s: MAX_GAP_S, diff: DiffOptions::default() }
    }
}

/// Builds triplets from adjacent pairs. A pair yields a triplet when its gap
/// is within the limit, the action changes, and the delta is non-empty.
pub fn extract_triplets(pairs: &[(GameState, ActionLabel)], opts: &ExtractOptions) -> Vec<WiaTriplet> {
    let mut out = Vec::new();
    for (i, w) in pairs.windows(2).enumerate() {
        let ((s0, a0), (s1, a1)) = (&w[0], &w[1]);
        let gap = s1.t - s0.t;
        if gap > opts.max_gap_s || a0 == a1 {
            continue;
        }
        let Ok(delta) = state_diff_with(s0, s1, &opts.diff) else { continue };
        if delta.is_empty() {
            continue;
        }
        out.push(WiaTriplet {
            state: redact(s0),
            action: *a0,
            delta,
            horizon_s: gap,
            provenance: Provenance { match_hash: hash_match_id(&s0.match_id, DEFAULT_REDACTION_SALT), index: i as u64 },
        });
    }
    out
}

/// Match-level metadata needed for balancing.
pub trait MatchMeta {
    fn match_id(&self) -> &str;
    fn hero(&self) -> &str;
    fn win(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancePolicy {
    pub max_per_hero: usize,
    pub seed: u64,
}

impl Default for BalancePolicy {
    fn default() -> Self {
        BalancePolicy { max_per_hero: 200, seed: 0 }
    }
}

/// Hero that could not reach the requested match count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsufficientData {
    pub hero: String,
    pub wins: usize,
    pub losses: usize,
    pub kept: usize,
    pub target: usize,
}

#[derive(Debug, Clone)]
pub struct Balanced<T> {
    pub matches: Vec<T>,
    pub warnings: Vec<InsufficientData>,
}

/// Keeps equally many wins and losses per hero, at most `max_per_hero`
/// matches in total. Selection is a seeded shuffle, so the result is stable.
pub fn balance<T: MatchMeta>(matches: Vec<T>, policy: &BalancePolicy) -> Balanced<T> {
    let mut by_hero: BTreeMap<String, (Vec<T>, Vec<T>)> = BTreeMap::new();
    for m in matches {
        let entry = by_hero.entry(m.hero().to_string()).or_default();
        if m.win() {
            entry.0.push(m);
        } else {
            entry.1.push(m);
        }
    }
    let mut kept = Vec::new();
    let mut warnings = Vec::new();
    for (hero, (mut wins, mut losses)) in by_hero {
        let (nw, nl) = (wins.len(), losses.len());
        let per_side = nw.min(nl).min(policy.max_per_hero / 2);
        let mut rng = ChaCha8Rng::seed_from_u64(policy.seed ^ fxhash(&hero));
        for side in [&mut wins, &mut losses] {
            side.sort_by(|a, b| a.match_id().cmp(b.match_id()));
            side.shuffle(&mut rng);
            side.truncate(per_side);
        }
        if 2 * per_side < policy.max_per_hero {
            warnings.push(InsufficientData { hero, wins: nw, losses: nl, kept: 2 * per_side, target: policy.max_per_hero });
        }
        kept.extend(wins);
        kept.extend(losses);
    }
    Balanced { matches: kept, warnings }
}

fn fxhash(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Sample counts backing the dataset statistics table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: u64,
    pub per_difficulty: BTreeMap<u8, u64>,
    pub per_change_type: BTreeMap<ComponentKey, u64>,
    pub wins: u64,
    pub losses: u64,
    pub per_hero_matches: BTreeMap<String, u64>,
}

impl DatasetManifest {
    pub fn from_triplets(triplets: &[WiaTriplet]) -> Self {
        let mut m = DatasetManifest { samples: triplets.len() as u64, ..Default::default() };
        for d in 1..=4u8 {
            m.per_difficulty.insert(d, 0);
        }
        for k in ComponentKey::ALL {
            m.per_change_type.insert(k, 0);
        }
        for t in triplets {
            *m.per_difficulty.entry(t.difficulty()).or_default() += 1;
            for k in t.delta.changed_components() {
                *m.per_change_type.entry(k).or_default() += 1;
            }
        }
        m
    }

    /// Share of samples as a percentage rounded to two decimals.
    pub fn pct(&self, count: u64) -> String {
        if self.samples == 0 {
            return "0.00".to_string();
        }
        format!("{:.2}", 100.0 * count as f64 / self.samples as f64)
    }

    pub fn difficulty_pct(&self, d: u8) -> String {
        self.pct(self.per_difficulty.get(&d).copied().unwrap_or(0))
    }

    pub fn change_type_pct(&self, k: ComponentKey) -> String {
        self.pct(self.per_change_type.get(&k).copied().unwrap_or(0))
    }

    /// Checks that the stored counts add up.
    pub fn is_consistent(&self) -> bool {
        self.per_difficulty.values().sum::<u64>() == self.samples
            && self.per_change_type.values().all(|c| *c <= self.samples)
            && self.per_hero_matches.values().sum::<u64>() == self.wins + self.losses
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::IoFailure { path: path.to_path_buf(), source }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

pub fn triplet_to_line(t: &WiaTriplet) -> String {
    let mut t = t.clone();
    t.state.canonicalize();
    t.delta.canonicalize();
    serde_json::to_value(&t).expect("triplet is serializable").to_string()
}

/// Parses one triplet record, validating the state and the delta.
pub fn triplet_from_value(mut v: serde_json::Value) -> Result<WiaTriplet, String> {
    let obj = v.as_object_mut().ok_or("record is not an object")?;
    let state = obj.remove("state").ok_or("missing field `state`")?;
    let delta = obj.remove("delta").ok_or("missing field `delta`")?;
    let state = state_from_value(state).map_err(|e| format!("state: {e}"))?;
    let delta = delta_from_value(delta).map_err(|e| format!("delta: {e}"))?;
    obj.insert("state".into(), serde_json::to_value(&state).expect("serializable"));
    obj.insert("delta".into(), serde_json::to_value(&delta).expect("serializable"));
    let t: WiaTriplet = serde_json::from_value(v).map_err(|e| e.to_string())?;
    if !(1..=MAX_GAP_S).contains(&t.horizon_s) {
        return Err(format!("horizon_s {} outside 1..={MAX_GAP_S}", t.horizon_s));
    }
    Ok(t)
}

/// Writes one triplet per line plus a manifest next to the file.
pub fn write_dataset(triplets: &[WiaTriplet], path: &Path) -> Result<DatasetManifest, PipelineError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for t in triplets {
        writeln!(w, "{}", triplet_to_line(t)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    let manifest = DatasetManifest::from_triplets(triplets);
    let mp = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    std::fs::write(&mp, text + "\n").map_err(io_err(&mp))?;
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<Vec<WiaTriplet>, PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| PipelineError::SchemaViolation { line: i + 1, message };
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        out.push(triplet_from_value(v).map_err(schema)?);
    }
    Ok(out)
}

/// Header line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryHeader {
    pub hero: String,
    pub win: bool,
}

/// A recorded match: header followed by `{state, action?}` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub states: Vec<GameState>,
    pub actions: Vec<Option<ActionLabel>>,
}

impl MatchMeta for Trajectory {
    fn match_id(&self) -> &str {
        self.states.first().map_or("", |s| s.match_id.as_str())
    }
    fn hero(&self) -> &str {
        &self.header.hero
    }
    fn win(&self) -> bool {
        self.header.win
    }
}

#[derive(Serialize)]
struct StepLine<'a> {
    state: &'a GameState,
    #[serde(skip_serializing_if = "Option::is_none")]
    action: Option<ActionLabel>,
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", serde_json::to_string(&traj.header).expect("serializable")).map_err(io_err(path))?;
    for (s, a) in traj.states.iter().zip(&traj.actions) {
        let line = serde_json::to_value(StepLine { state: &s.clone().canonical(), action: *a }).expect("serializable");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let schema = |line: usize, message: String| PipelineError::SchemaViolation { line, message };
    let header: TrajectoryHeader = match lines.next() {
        Some((_, l)) => serde_json::from_str(&l.map_err(io_err(path))?).map_err(|e| schema(1, e.to_string()))?,
        None => return Err(schema(1, "empty trajectory file".into())),
    };
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut v: serde_json::Value = serde_json::from_str(&line).map_err(|e| schema(i + 1, e.to_string()))?;
        let obj = v.as_object_mut().ok_or_else(|| schema(i + 1, "record is not an object".into()))?;
        let state = obj.remove("state").ok_or_else(|| schema(i + 1, "missing field `state`".into()))?;
        let action = match obj.remove("action") {
            Some(a) => Some(serde_json::from_value::<ActionLabel>(a).map_err(|e| schema(i + 1, e.to_string()))?),
            None => None,
        };
        if let Some(k) = obj.keys().next() {
            return Err(schema(i + 1, format!("unknown field `{k}`")));
        }
        states.push(state_from_value(state).map_err(|e| schema(i + 1, e.to_string()))?);
        actions.push(action);
    }
    Ok(Trajectory { header, states, actions })
}
