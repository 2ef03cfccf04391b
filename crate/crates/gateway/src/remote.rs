use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use wia_core::action::ActionLabel;
use wia_core::diff::{ComponentKey, StateDelta};
use wia_core::eval::{ForecastError, Forecaster, SampleScore};
use wia_core::pipeline::WiaTriplet;
use wia_core::reward::{extract_answer, score_completion, ExtractFailure, KeyScore, RewardSpec};
use wia_core::state::GameState;

use crate::client::{auth_token, query_model, EndpointConfig, GatewayError};
use crate::templates::{parse_action_list, PromptRenderer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    PromptTooLong,
    Network,
    NoAnswerTag,
    MalformedAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub kind: FailureKind,
    pub message: String,
}

/// One line of a remote results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResult {
    pub provenance: String,
    pub reward: f64,
    pub key_scores: Vec<KeyScore>,
    pub raw_answer_hash: Option<String>,
    pub difficulty: u8,
    pub change_types: Vec<ComponentKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<SampleFailure>,
}

impl RemoteResult {
    pub fn sample_score(&self) -> SampleScore {
        SampleScore {
            provenance: self.provenance.clone(),
            score: self.reward,
            difficulty: self.difficulty,
            change_types: self.change_types.clone(),
        }
    }

    /// Network failures are retried on the next run; everything else is final.
    fn is_final(&self) -> bool {
        self.error.as_ref().is_none_or(|e| e.kind != FailureKind::Network)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteSummary {
    /// One result per distinct provenance, in dataset order.
    pub results: Vec<RemoteResult>,
    pub resumed: usize,
    pub queried: usize,
    pub failures: usize,
}

fn io_err(e: std::io::Error) -> GatewayError {
    GatewayError::Io(e.to_string())
}

fn read_results(path: &Path) -> Result<BTreeMap<String, RemoteResult>, GatewayError> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let f = std::fs::File::open(path).map_err(io_err)?;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RemoteResult>(&line) {
            Ok(r) => {
                out.insert(r.provenance.clone(), r);
            }
            // a run killed mid-write leaves a torn last line
            Err(e) => tracing::warn!("ignoring unreadable results line {}: {e}", i + 1),
        }
    }
    Ok(out)
}

fn write_results(path: &Path, results: &BTreeMap<String, RemoteResult>) -> Result<(), GatewayError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let mut text = String::new();
    for r in results.values() {
        text.push_str(&serde_json::to_string(r).expect("results serialize"));
        text.push('\n');
    }
    std::fs::write(&tmp, text).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

fn score_one(t: &WiaTriplet, cfg: &EndpointConfig, spec: &RewardSpec, renderer: &PromptRenderer) -> RemoteResult {
    let mut r = RemoteResult {
        provenance: t.provenance.key(),
        reward: 0.0,
        key_scores: Vec::new(),
        raw_answer_hash: None,
        difficulty: t.difficulty(),
        change_types: t.delta.changed_components(),
        error: None,
    };
    let fail = |kind, message: String| Some(SampleFailure { kind, message });
    let prompt = match renderer.forecast(&t.state, t.action, t.horizon_s) {
        Ok(p) => p,
        Err(e) => {
            r.error = fail(FailureKind::PromptTooLong, e.to_string());
            return r;
        }
    };
    let raw = match query_model(cfg, &prompt) {
        Ok(raw) => raw,
        Err(e) => {
            r.error = fail(FailureKind::Network, e.to_string());
            return r;
        }
    };
    r.raw_answer_hash = Some(hex::encode(Sha256::digest(raw.as_bytes())));
    let scored = score_completion(&raw, &t.delta, spec);
    r.reward = scored.reward;
    r.key_scores = scored.key_scores.unwrap_or_default();
    r.error = scored.failure.map(|f| match f {
        ExtractFailure::NoAnswerTag => SampleFailure { kind: FailureKind::NoAnswerTag, message: "no answer block".into() },
        ExtractFailure::MalformedAnswer => SampleFailure { kind: FailureKind::MalformedAnswer, message: "answer is not a valid delta".into() },
    });
    r
}

/// Scores every triplet with the remote model. Results are appended to
/// `out` as they arrive and the file is rewritten sorted by provenance at
/// the end. Samples already final in `out` are skipped.
pub fn evaluate_remote(
    dataset: &[WiaTriplet],
    cfg: &EndpointConfig,
    spec: &RewardSpec,
    renderer: &PromptRenderer,
    out: &Path,
) -> Result<RemoteSummary, GatewayError> {
    cfg.validate()?;
    auth_token(cfg)?;
    let mut done: BTreeMap<String, RemoteResult> = read_results(out)?.into_iter().filter(|(_, r)| r.is_final()).collect();
    let mut seen = HashSet::new();
    let pending: Vec<&WiaTriplet> =
        dataset.iter().filter(|t| seen.insert(t.provenance.key()) && !done.contains_key(&t.provenance.key())).collect();
    let resumed = seen.len() - pending.len();

    let file = std::fs::OpenOptions::new().create(true).append(true).open(out).map_err(io_err)?;
    let sink = Mutex::new(file);
    let fresh = Mutex::new(Vec::with_capacity(pending.len()));
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.concurrency.min(pending.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(t) = pending.get(i) else { break };
                let r = score_one(t, cfg, spec, renderer);
                let line = serde_json::to_string(&r).expect("results serialize");
                {
                    let mut f = sink.lock().expect("sink lock");
                    if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                        tracing::warn!("cannot append result: {e}");
                    }
                }
                fresh.lock().expect("results lock").push(r);
            });
        }
    });
    let fresh = fresh.into_inner().expect("results lock");
    let queried = fresh.len();
    for r in fresh {
        done.insert(r.provenance.clone(), r);
    }
    write_results(out, &done)?;

    let mut seen = HashSet::new();
    let results: Vec<RemoteResult> =
        dataset.iter().filter(|t| seen.insert(t.provenance.key())).filter_map(|t| done.get(&t.provenance.key()).cloned()).collect();
    let failures = results.iter().filter(|r| r.error.is_some()).count();
    Ok(RemoteSummary { results, resumed, queried, failures })
}

/// Forecaster backed by a remote model. Candidates come from the downstream
/// prompt; each candidate is forecast with the forecast prompt.
pub struct GatewayForecaster {
    pub cfg: EndpointConfig,
    pub renderer: PromptRenderer,
    pub horizon_s: i64,
}

impl Forecaster for GatewayForecaster {
    fn forecast(&self, state: &GameState, action: ActionLabel) -> Result<StateDelta, ForecastError> {
        let err = |reason: String| ForecastError { action: action.name().to_string(), reason };
        let prompt = self.renderer.forecast(state, action, self.horizon_s).map_err(|e| err(e.to_string()))?;
        let raw = query_model(&self.cfg, &prompt).map_err(|e| err(e.to_string()))?;
        extract_answer(&raw).map_err(|e| err(e.to_string()))
    }

    fn propose(&self, state: &GameState, k: usize) -> Result<Option<Vec<ActionLabel>>, ForecastError> {
        let err = |reason: String| ForecastError { action: "candidates".into(), reason };
        let prompt = self.renderer.downstream(state, &[]).map_err(|e| err(e.to_string()))?;
        let raw = query_model(&self.cfg, &prompt).map_err(|e| err(e.to_string()))?;
        let mut list = parse_action_list(&raw);
        list.truncate(k);
        Ok(if list.is_empty() { None } else { Some(list) })
    }
}
