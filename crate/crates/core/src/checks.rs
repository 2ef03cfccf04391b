//! Randomized invariant checks with independent oracles. Shared by the
//! `selftest` command and the acceptance suite.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

use crate::action::{ActionLabel, REGISTRY_LEN};
use crate::diff::{apply_delta_at, state_diff, ChangeRecord, ComponentKey, FieldValue, StateDelta};
use crate::eval::{classify_outcome, evaluate, select_action, OutcomeRules, SampleScore, SimForecaster, HISTOGRAM_BINS};
use crate::grpo::policy::{Token, ToyPolicy, N_COMPONENTS, N_SLOTS};
use crate::grpo::{
    compute_advantages, fresh_policy, grpo_loss, grpo_loss_value, kl_term, mean_expected_reward, param_drift, prepare_cases,
    train, Completion, CompletionGroup, TelemetryRecord, TrainerConfig,
};
use crate::pipeline::{extract_triplets, DatasetManifest, ExtractOptions, Provenance, WiaTriplet};
use crate::reward::{reward, RewardSpec};
use crate::sim::{make_benchmark, random_action, BenchmarkOptions, HoldingPolicy, SimConfig, Simulator};
use crate::state::{hash_match_id, redact, GameState, DEFAULT_REDACTION_SALT};

pub type CheckResult = Result<String, String>;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{} {} ({:.2}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

/// Runs `f`, timing it and turning a panic into a failure.
pub fn run_check(name: &str, f: impl FnOnce() -> CheckResult) -> CheckReport {
    let start = Instant::now();
    let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into())));
    let (passed, detail) = match out {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckReport { name: name.to_string(), passed, detail, elapsed: start.elapsed() }
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Random inputs.

/// Random delta over a small entity pool so predictions and truths overlap.
pub fn random_delta(rng: &mut impl Rng) -> StateDelta {
    let mut d = StateDelta::default();
    for key in ComponentKey::ALL {
        let n = rng.gen_range(0..4);
        let fields = key.fields();
        let mut recs: Vec<ChangeRecord> = (0..n)
            .map(|_| {
                let e = format!("e{}", rng.gen_range(0..3));
                let f = fields[rng.gen_range(0..fields.len())];
                let v = |rng: &mut dyn rand::RngCore| match rng.gen_range(0..3) {
                    0 => FieldValue::Bool(rng.gen()),
                    1 => FieldValue::Int(rng.gen_range(0..5) * 100),
                    _ => FieldValue::Text(format!("v{}", rng.gen_range(0..3))),
                };
                ChangeRecord::new(e, f, v(rng), v(rng))
            })
            .collect();
        recs.sort();
        recs.dedup_by(|a, b| a.entity == b.entity && a.field == b.field);
        *d.component_mut(key) = recs;
    }
    d
}

/// Copy of `truth` with each component kept, dropped, trimmed or replaced.
pub fn perturb_delta(truth: &StateDelta, rng: &mut impl Rng) -> StateDelta {
    let other = random_delta(rng);
    let mut p = truth.clone();
    for key in ComponentKey::ALL {
        let c = p.component_mut(key);
        match rng.gen_range(0..4) {
            0 => {}
            1 => c.clear(),
            2 => c.truncate(c.len() / 2),
            _ => *c = other.component(key).to_vec(),
        }
    }
    p
}

/// States sampled along random rollouts of several matches.
pub fn random_states(sim: &Simulator, n: usize, rng: &mut impl Rng) -> Vec<GameState> {
    let sc = sim.standard_scenario();
    let mut out = Vec::with_capacity(n);
    let mut index = 0;
    while out.len() < n {
        let mut s = sim.init_match(&sc, index);
        let mut pol = HoldingPolicy::new(rng.gen());
        index += 1;
        while s.t < 1200 && out.len() < n {
            for _ in 0..rng.gen_range(5..40) {
                s = sim.step(&s, pol.next_action(), sim.cfg.tick_s).expect("valid step");
            }
            out.push(s.clone());
        }
    }
    out
}

// Oracles.

fn json_field(v: Option<&Value>) -> FieldValue {
    match v {
        None | Some(Value::Null) => FieldValue::Absent,
        Some(Value::Bool(b)) => FieldValue::Bool(*b),
        Some(Value::Number(n)) => FieldValue::Int(n.as_i64().expect("integer field")),
        Some(Value::String(s)) => FieldValue::Text(s.clone()),
        Some(Value::Array(items)) => FieldValue::Set(items.iter().map(|i| i.as_str().expect("string item").to_string()).collect()),
        Some(Value::Object(_)) => panic!("nested object in state"),
    }
}

/// Brute-force diff: serializes both states and compares every field of
/// every entity object.
pub fn oracle_diff(old: &GameState, new: &GameState) -> StateDelta {
    let a = serde_json::to_value(old).expect("state serializes");
    let b = serde_json::to_value(new).expect("state serializes");
    let parts = [
        (ComponentKey::MinionWaveChanges, "minion_waves", "wave_id"),
        (ComponentKey::TurretChanges, "towers", "tower_id"),
        (ComponentKey::HeroChanges, "heroes", "hero_id"),
        (ComponentKey::DragonStatusChanges, "dragons", "kind"),
    ];
    let mut out = StateDelta::default();
    for (key, list, id) in parts {
        let index = |v: &Value| -> BTreeMap<String, serde_json::Map<String, Value>> {
            v[list]
                .as_array()
                .expect("entity list")
                .iter()
                .map(|e| {
                    let mut obj = e.as_object().expect("entity object").clone();
                    let k = obj.remove(id).and_then(|k| k.as_str().map(str::to_string)).expect("entity key");
                    (k, obj)
                })
                .collect()
        };
        let (before, after) = (index(&a), index(&b));
        let mut recs = Vec::new();
        for ent in before.keys().chain(after.keys()).collect::<BTreeSet<_>>() {
            let (o, n) = (before.get(ent), after.get(ent));
            let fields: BTreeSet<&String> = o.into_iter().chain(n).flat_map(|m| m.keys()).collect();
            for f in fields {
                let ov = json_field(o.and_then(|m| m.get(f)));
                let nv = json_field(n.and_then(|m| m.get(f)));
                if ov != nv {
                    recs.push(ChangeRecord::new(ent.clone(), f.clone(), ov, nv));
                }
            }
        }
        recs.sort();
        *out.component_mut(key) = recs;
    }
    out
}

/// Straight-line triplet extraction over an annotated trajectory.
pub fn oracle_extract(pairs: &[(GameState, ActionLabel)]) -> Vec<WiaTriplet> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < pairs.len() {
        let (s, a) = &pairs[i];
        let (next, next_a) = &pairs[i + 1];
        let gap = next.t - s.t;
        if gap <= 60 && a != next_a {
            let delta = oracle_diff(s, next);
            if !delta.is_empty() {
                out.push(WiaTriplet {
                    state: redact(s),
                    action: *a,
                    delta,
                    horizon_s: gap,
                    provenance: Provenance { match_hash: hash_match_id(&s.match_id, DEFAULT_REDACTION_SALT), index: i as u64 },
                });
            }
        }
        i += 1;
    }
    out
}

// Checks.

/// Three worked reward examples: 1.0, 0.625 and 0.7.
pub fn reward_worked_examples() -> CheckResult {
    let rec = |e: &str, f: &str, o: i64, n: i64| ChangeRecord::new(e, f, FieldValue::Int(o), FieldValue::Int(n));
    let truth = StateDelta {
        minion_wave_changes: vec![ChangeRecord::new("w1", "in_enemy_turret_range", FieldValue::Bool(false), FieldValue::Bool(true))],
        turret_changes: vec![rec("t1", "hp", 5000, 4200), rec("t2", "hp", 6000, 5900)],
        hero_changes: vec![ChangeRecord::new("e1", "alive", FieldValue::Bool(true), FieldValue::Bool(false))],
        dragon_status_changes: vec![],
    };
    let uniform = RewardSpec::default();
    let r1 = reward(&truth, &truth, &uniform).reward;

    let mut p = truth.clone();
    p.turret_changes.truncate(1);
    p.hero_changes.clear();
    let r2 = reward(&p, &truth, &uniform).reward;

    let mut t3 = truth.clone();
    t3.minion_wave_changes.push(ChangeRecord::new("w2", "zone", FieldValue::Text("mid_lane".into()), FieldValue::Text("ally_highground".into())));
    let mut p3 = t3.clone();
    p3.minion_wave_changes.truncate(1);
    p3.turret_changes = vec![rec("t7", "hp", 10, 9)];
    let mut spec = RewardSpec::default();
    spec.weights.hero_changes = 2.0;
    let r3 = reward(&p3, &t3, &spec).reward;

    ensure(r1 == 1.0 && r2 == 0.625 && (r3 - 0.7).abs() < 1e-15, || format!("got {r1}, {r2}, {r3}"))?;
    Ok(format!("{r1}, {r2}, {r3}"))
}

/// Reflexivity and weight-scaling invariance on `n` random deltas.
pub fn reward_identities(n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let truth = random_delta(&mut rng);
        let pred = perturb_delta(&truth, &mut rng);
        let mut spec = RewardSpec::default();
        for k in ComponentKey::ALL {
            spec.weights.set(k, rng.gen_range(0.1..5.0));
        }
        let self_score = reward(&truth, &truth, &spec).reward;
        ensure(self_score == 1.0, || format!("sample {i}: reward(x, x) = {self_score}"))?;
        let base = reward(&pred, &truth, &spec).reward;
        let c: f64 = rng.gen_range(0.01..100.0);
        let mut scaled = spec.clone();
        for k in ComponentKey::ALL {
            scaled.weights.set(k, spec.weights.get(k) * c);
        }
        let s = reward(&pred, &truth, &scaled).reward;
        ensure((s - base).abs() < 1e-12, || format!("sample {i}: scaling by {c} moved reward {base} to {s}"))?;
    }
    Ok(format!("{n} deltas"))
}

/// Zero-mean advantages, the four-reward fixture and zero-variance groups.
pub fn advantage_properties(n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let g = rng.gen_range(2..=16);
        let rewards: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = compute_advantages(&rewards, 1e-8).map_err(|e| e.to_string())?;
        let mean = a.iter().sum::<f64>() / g as f64;
        worst = worst.max(mean.abs());
        ensure(mean.abs() < 1e-9, || format!("group {i}: mean advantage {mean}"))?;
        let flat = vec![rewards[0]; g];
        let z = compute_advantages(&flat, 1e-8).map_err(|e| e.to_string())?;
        ensure(z.iter().all(|v| *v == 0.0), || format!("group {i}: constant rewards gave {z:?}"))?;
    }
    let a = compute_advantages(&[0.2, 0.4, 0.6, 0.8], 1e-8).map_err(|e| e.to_string())?;
    let want = [-1.3416407, -0.4472136, 0.4472136, 1.3416407];
    ensure(a.iter().zip(want).all(|(g, w)| (g - w).abs() < 1e-6), || format!("fixture gave {a:?}"))?;
    Ok(format!("{n} groups, max |mean| {worst:.1e}"))
}

/// Non-negativity, zero at equality and the `rho = e` value.
pub fn kl_properties(n: usize, seed: u64) -> CheckResult {
    const CHUNK: usize = 10_000;
    let bad = (0..n.div_ceil(CHUNK)).into_par_iter().find_map_any(|c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::sim::splitmix(c as u64));
        (c * CHUNK..n.min((c + 1) * CHUNK)).find(|_| {
            let a: f64 = rng.gen_range(-20.0..0.0);
            let b: f64 = if rng.gen_bool(0.1) { a } else { rng.gen_range(-20.0..0.0) };
            let v = kl_term(a, b).value;
            !(v >= 0.0) || (a == b && v != 0.0)
        })
    });
    ensure(bad.is_none(), || format!("pair {} violated non-negativity or zero at equality", bad.unwrap()))?;
    let e = kl_term(0.0, -1.0).value;
    ensure((e - (std::f64::consts::E - 2.0)).abs() < 1e-9, || format!("rho = e gave {e}"))?;
    Ok(format!("{n} pairs, rho = e -> {e:.12}"))
}

struct GradInstance {
    policy: ToyPolicy,
    group: CompletionGroup,
}

fn gradient_instance(rng: &mut impl Rng, cfg: &TrainerConfig) -> Option<GradInstance> {
    let f = rng.gen_range(2..=6);
    let mut old = ToyPolicy::zeros(f);
    old.params.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    let nudge = |p: &ToyPolicy, rng: &mut dyn rand::RngCore, scale: f64| {
        let mut q = p.clone();
        q.params.iter_mut().for_each(|w| *w += rng.gen_range(-scale..scale));
        q
    };
    let current = nudge(&old, rng, 0.4);
    let reference = nudge(&old, rng, 0.4);
    let mut x: Vec<f64> = (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect();
    x[0] = 1.0;
    let g = rng.gen_range(2..=8);
    let mut completions: Vec<Completion> = (0..g)
        .map(|_| {
            let tokens = old.sample(&x, rng);
            Completion {
                logp_theta: current.sequence_log_probs(&tokens, &x),
                logp_old: old.sequence_log_probs(&tokens, &x),
                logp_ref: reference.sequence_log_probs(&tokens, &x),
                tokens,
                reward: rng.gen_range(0..=4) as f64 / 4.0,
                advantage: 0.0,
            }
        })
        .collect();
    let rewards: Vec<f64> = completions.iter().map(|c| c.reward).collect();
    for (c, a) in completions.iter_mut().zip(compute_advantages(&rewards, cfg.std_eps).ok()?) {
        c.advantage = a;
    }
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    // the surrogate has a kink at each clip bound; skip instances sitting on one
    let near_kink = completions.iter().any(|c| {
        c.logp_theta.iter().zip(&c.logp_old).any(|(t, o)| {
            let rho = (t - o).exp();
            (rho - lo).abs() < 1e-4 || (rho - hi).abs() < 1e-4
        })
    });
    if near_kink {
        return None;
    }
    Some(GradInstance { policy: current, group: CompletionGroup { prompt_id: "grad".into(), features: x, completions } })
}

/// Analytic loss gradient against central differences with step `h`.
pub fn gradient_check(n: usize, seed: u64, h: f64, tol: f64) -> CheckResult {
    let cfg = TrainerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::new();
    let mut redrawn = 0;
    while instances.len() < n {
        match gradient_instance(&mut rng, &cfg) {
            Some(i) => instances.push(i),
            None => redrawn += 1,
        }
    }
    let worst = instances
        .par_iter()
        .enumerate()
        .map(|(k, inst)| -> Result<f64, String> {
            let out = grpo_loss(&inst.policy, &inst.group, &cfg).map_err(|e| e.to_string())?;
            let mut worst: f64 = 0.0;
            for i in 0..inst.policy.params.len() {
                let mut a = inst.policy.clone();
                let mut b = inst.policy.clone();
                a.params[i] += h;
                b.params[i] -= h;
                let fa = grpo_loss_value(&a, &inst.group, &cfg).map_err(|e| e.to_string())?;
                let fb = grpo_loss_value(&b, &inst.group, &cfg).map_err(|e| e.to_string())?;
                let fd = (fa - fb) / (2.0 * h);
                let g = out.grad[i];
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                ensure(rel < tol, || format!("instance {k}, coordinate {i}: analytic {g:e} vs numeric {fd:e}"))?;
                worst = worst.max(rel);
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>, String>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(format!("{n} instances ({redrawn} redrawn off a clip bound), max relative error {worst:.1e}"))
}

/// Pairs of random simulator states, some with entities added or removed.
pub fn random_state_pairs(sim: &Simulator, n: usize, rng: &mut impl Rng) -> Vec<(GameState, GameState)> {
    let starts = random_states(sim, n.div_ceil(10).max(1), rng);
    let mut pairs = Vec::with_capacity(n);
    for s in starts.iter().cycle() {
        if pairs.len() == n {
            break;
        }
        let mut s1 = s.clone();
        for _ in 0..rng.gen_range(0..20) {
            s1 = sim.step(&s1, random_action(rng), sim.cfg.tick_s).expect("valid step");
        }
        let mut s2 = sim.step(&s1, random_action(rng), rng.gen_range(0..=120)).expect("valid step");
        match rng.gen_range(0..10) {
            0 if !s1.minion_waves.is_empty() => {
                let i = rng.gen_range(0..s1.minion_waves.len());
                s1.minion_waves.remove(i);
            }
            1 if !s2.minion_waves.is_empty() => {
                let i = rng.gen_range(0..s2.minion_waves.len());
                s2.minion_waves.remove(i);
            }
            2 if !s2.dragons.is_empty() => {
                let i = rng.gen_range(0..s2.dragons.len());
                s2.dragons.remove(i);
            }
            _ => {}
        }
        pairs.push((s1, s2));
    }
    pairs
}

/// `apply(s1, diff(s1, s2)) == s2` and the diff matches the JSON oracle.
pub fn diff_round_trip(n: usize, seed: u64) -> CheckResult {
    let sim = Simulator::new(SimConfig::with_seed(seed)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = random_state_pairs(&sim, n, &mut rng);
    pairs.par_iter().enumerate().try_for_each(|(i, (s1, s2))| {
        let d = state_diff(s1, s2).map_err(|e| format!("pair {i}: {e}"))?;
        let back = apply_delta_at(s1, &d, s2.t).map_err(|e| format!("pair {i}: {e}"))?;
        ensure(&back == s2, || format!("pair {i}: round trip differs"))?;
        ensure(d == oracle_diff(s1, s2), || format!("pair {i}: diff disagrees with the oracle"))
    })?;
    Ok(format!("{n} pairs"))
}

/// Random annotated trajectory with irregular gaps and repeated actions.
pub fn random_trajectory(sim: &Simulator, index: u64, rng: &mut impl Rng) -> Vec<(GameState, ActionLabel)> {
    let mut s = sim.init_match(&sim.standard_scenario(), index);
    let mut a = random_action(rng);
    let len = rng.gen_range(2..30);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        if rng.gen_bool(0.6) {
            a = random_action(rng);
        }
        let gap = if rng.gen_bool(0.2) { rng.gen_range(61..=120) } else { rng.gen_range(0..=60) };
        let next = sim.step(&s, a, gap).expect("valid step");
        out.push((s, a));
        s = next;
        s.t += i64::from(gap == 0);
    }
    out
}

/// `extract_triplets` against the straight-line re-implementation.
pub fn pipeline_oracle(n: usize, seed: u64) -> CheckResult {
    let sim = Simulator::new(SimConfig::with_seed(seed)).map_err(|e| e.to_string())?;
    let counts = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::sim::splitmix(i));
            let traj = random_trajectory(&sim, i, &mut rng);
            let got = extract_triplets(&traj, &ExtractOptions::default());
            ensure(got == oracle_extract(&traj), || format!("trajectory {i}: outputs differ"))?;
            ensure(got.iter().all(|t| t.horizon_s <= 60), || format!("trajectory {i}: horizon above 60 s"))?;
            Ok(got.len())
        })
        .collect::<Result<Vec<usize>, String>>()?;
    Ok(format!("{n} trajectories, {} triplets", counts.iter().sum::<usize>()))
}

#[derive(Debug, Clone)]
pub struct RlRunSummary {
    pub reward_start: f64,
    pub reward_end: f64,
    pub drift_default: f64,
    pub drift_anchored: f64,
    pub telemetry: Vec<TelemetryRecord>,
}

/// Default-config GRPO run on a d in {1,2} benchmark plus a heavily anchored
/// run. Rewards are exact expectations over the whole benchmark.
pub fn rl_run(seed: u64, per_difficulty: usize) -> Result<RlRunSummary, String> {
    let sim = Simulator::new(SimConfig::with_seed(seed)).map_err(|e| e.to_string())?;
    let counts: BTreeMap<u8, usize> = [(1, per_difficulty), (2, per_difficulty)].into();
    let bench = make_benchmark(&sim, &counts, &BenchmarkOptions::default()).map_err(|e| e.to_string())?;
    let cases = prepare_cases(&sim, &bench).map_err(|e| e.to_string())?;
    let spec = RewardSpec::default();
    let cfg = TrainerConfig { seed, ..Default::default() };
    let start = fresh_policy();
    let out = train(&cases, start.clone(), &spec, &cfg).map_err(|e| e.to_string())?;
    let anchored = train(&cases, start.clone(), &spec, &TrainerConfig { kl_coef: 1e3, ..cfg }).map_err(|e| e.to_string())?;
    Ok(RlRunSummary {
        reward_start: mean_expected_reward(&start, &cases, &spec),
        reward_end: mean_expected_reward(&out.policy, &cases, &spec),
        drift_default: param_drift(&out.policy, &start),
        drift_anchored: param_drift(&anchored.policy, &start),
        telemetry: out.telemetry,
    })
}

/// Exact per-difficulty counts and the dataset percentage arithmetic.
pub fn stratification(seed: u64) -> CheckResult {
    let sim = Simulator::new(SimConfig::with_seed(seed)).map_err(|e| e.to_string())?;
    let counts: BTreeMap<u8, usize> = (1..=4).map(|d| (d, 50)).collect();
    let bench = make_benchmark(&sim, &counts, &BenchmarkOptions::default()).map_err(|e| e.to_string())?;
    let m = crate::eval::dataset_stats(&bench);
    ensure((1..=4).all(|d| m.per_difficulty[&d] == 50), || format!("counts {:?}", m.per_difficulty))?;
    let seeded = DatasetManifest { samples: 1476, per_difficulty: [(1, 524)].into(), ..Default::default() };
    let pct = seeded.difficulty_pct(1);
    ensure(pct == "35.50", || format!("524/1476 gave {pct}"))?;
    Ok(format!("per-d counts {:?}, 524/1476 -> {pct}%", m.per_difficulty))
}

/// Weighted-mean identity and histogram conservation on random reports.
pub fn eval_identities(n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in 0..n {
        let len = rng.gen_range(0..200);
        let samples: Vec<SampleScore> = (0..len)
            .map(|i| SampleScore {
                provenance: format!("s:{i}"),
                score: if rng.gen_bool(0.2) { 1.0 } else { rng.gen_range(0.0..=1.0) },
                difficulty: rng.gen_range(1..=4),
                change_types: ComponentKey::ALL.choose_multiple(&mut rng, 2).copied().collect(),
            })
            .collect();
        let rep = evaluate(&samples);
        let gap = (rep.overall_score - rep.weighted_mean()).abs();
        ensure(gap <= 1e-12, || format!("report {r}: weighted mean off by {gap:e}"))?;
        let binned: u64 = rep.histogram.iter().sum();
        ensure(binned == len as u64 && rep.histogram.len() == HISTOGRAM_BINS, || format!("report {r}: {binned} binned of {len}"))?;
        let counted: u64 = rep.per_difficulty.values().map(|s| s.count).sum();
        ensure(counted == len as u64, || format!("report {r}: per-difficulty counts sum to {counted}"))?;
    }
    Ok(format!("{n} reports"))
}

/// With the simulator as forecaster, the chosen action realizes the best
/// polarity over the whole registry.
pub fn selector_optimality(n: usize, seed: u64) -> CheckResult {
    let sim = Simulator::new(SimConfig::with_seed(seed)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = random_states(&sim, n, &mut rng);
    let rules = OutcomeRules::default();
    let horizon = 30;
    let forecaster = SimForecaster { sim: &sim, horizon_s: horizon };
    let ties = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let sel = select_action(s, &forecaster, 4, &rules).map_err(|e| format!("state {i}: {e}"))?;
            let realized = |a: ActionLabel| {
                let next = sim.step(s, a, horizon).expect("valid step");
                classify_outcome(&state_diff(s, &next).expect("same match"), s, &rules).score
            };
            let chosen = realized(sel.chosen);
            let mut worst = chosen;
            for a in ActionLabel::all() {
                let r = realized(a);
                ensure(r <= chosen, || format!("state {i}: {} realizes {r} > {} for {}", a.name(), chosen, sel.chosen.name()))?;
                worst = worst.min(r);
            }
            Ok((usize::from(sel.tie), usize::from(worst < chosen)))
        })
        .collect::<Result<Vec<(usize, usize)>, String>>()?;
    let tied: usize = ties.iter().map(|t| t.0).sum();
    let spread: usize = ties.iter().map(|t| t.1).sum();
    Ok(format!("{n} states, {REGISTRY_LEN} candidates each, {spread} with differing outcomes, {tied} ties at the top"))
}

/// Sequence lengths stay inside the token grammar.
pub fn grammar_lengths(n: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ToyPolicy::zeros(3);
    p.params.iter_mut().for_each(|w| *w = rng.gen_range(-2.0..2.0));
    for i in 0..n {
        let toks: Vec<Token> = p.sample(&[1.0, rng.gen(), rng.gen()], &mut rng);
        ensure((N_COMPONENTS..=N_SLOTS).contains(&toks.len()), || format!("sample {i} has {} tokens", toks.len()))?;
    }
    Ok(format!("{n} samples"))
}
