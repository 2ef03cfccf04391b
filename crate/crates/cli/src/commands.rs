use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use wia_core::action::ActionLabel;
use wia_core::checks::{self, run_check, CheckReport};
use wia_core::diff::ComponentKey;
use wia_core::eval::{
    evaluate, report_render, select_action, stats_table, OutcomeRules, SampleScore, SelectError,
    SimForecaster, DEFAULT_OUTCOME_RULES,
};
use wia_core::grpo::{fresh_policy, mean_expected_reward, prepare_cases, train, TelemetryRecord, TrainerConfig};
use wia_core::pipeline::{
    annotate, balance, extract_triplets, filter_inactive, read_dataset, read_trajectory, write_dataset,
    write_trajectory, BalancePolicy, ConstantAnnotator, ExtractOptions, LoggedAnnotator, PipelineError, Trajectory,
    TrajectoryHeader, WiaTriplet,
};
use wia_core::reward::{score_completion, ExtractFailure, KeyScore, RewardSpec};
use wia_core::sim::{
    make_benchmark, random_action, sha256_hex, BenchmarkOptions, RuleTable, SimConfig, Simulator, BUILTIN_RULES,
    BUILTIN_RULES_SHA256,
};
use wia_core::state::parse_state;
use wia_gateway::{evaluate_remote, EndpointConfig, PromptKind, PromptRenderer, TemplateSet};

use crate::{io_error, write_snapshot, ActArgs, Cli, CliError, Command, EvalRemoteArgs, IngestArgs, ReportArgs, ScoreArgs, SelftestArgs, SimgenArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest(a) => ingest(cli, a),
        Command::Simgen(a) => simgen(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Score(a) => score(cli, a),
        Command::EvalRemote(a) => eval_remote(cli, a),
        Command::Report(a) => report(cli, a),
        Command::Act(a) => act(cli, a),
        Command::Selftest(a) => selftest(a),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_error(path))
}

fn load_spec(path: Option<&Path>) -> Result<RewardSpec, CliError> {
    match path {
        Some(p) => Ok(RewardSpec::from_toml(&read_text(p)?)?),
        None => Ok(RewardSpec::default()),
    }
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = std::fs::File::open(path).map_err(io_error(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_error(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn parse_counts(text: &str) -> Result<BTreeMap<u8, usize>, CliError> {
    let bad = || CliError::Usage(format!("--counts expects d:n pairs such as 1:5,2:5, got `{text}`"));
    let mut out = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (d, n) = part.split_once(':').ok_or_else(bad)?;
        let d: u8 = d.trim().parse().map_err(|_| bad())?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        if out.insert(d, n).is_some() {
            return Err(bad());
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn simulator(seed: u64, rule_table: Option<&Path>) -> Result<Simulator, CliError> {
    let cfg = SimConfig::with_seed(seed);
    match rule_table {
        Some(p) => Ok(Simulator::with_rules(cfg, RuleTable::from_toml(&read_text(p)?)?)?),
        None => Ok(Simulator::new(cfg)?),
    }
}

fn ingest(cli: &Cli, a: &IngestArgs) -> Result<(), CliError> {
    let constant = match a.annotator.as_str() {
        "logged" => None,
        other => match other.strip_prefix("constant:").map(ActionLabel::by_name) {
            Some(Some(label)) => Some(label),
            _ => return Err(PipelineError::UnknownAnnotator(other.to_string()).into()),
        },
    };
    let mut files: Vec<_> = std::fs::read_dir(&a.input)
        .map_err(io_error(&a.input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let trajectories = files.iter().map(|p| read_trajectory(p)).collect::<Result<Vec<Trajectory>, _>>()?;
    let balanced = balance(trajectories, &BalancePolicy { max_per_hero: a.max_per_hero, seed: cli.seed });
    for w in &balanced.warnings {
        tracing::warn!("hero {} kept {} of {} matches ({} wins, {} losses)", w.hero, w.kept, w.target, w.wins, w.losses);
    }
    let opts = ExtractOptions { max_gap_s: a.max_gap, ..Default::default() };
    let mut triplets: Vec<WiaTriplet> = Vec::new();
    for traj in &balanced.matches {
        let pairs = match constant {
            Some(label) => annotate(&traj.states, &ConstantAnnotator(label))?,
            None => {
                if traj.actions.iter().all(Option::is_none) {
                    return Err(CliError::Data(format!(
                        "match {} has no logged actions; pass --annotator constant:<name> or log actions",
                        traj.states.first().map_or("", |s| s.match_id.as_str())
                    )));
                }
                let logged: Vec<ActionLabel> = traj.actions.iter().map(|x| x.unwrap_or(ActionLabel::NONE)).collect();
                annotate(&traj.states, &LoggedAnnotator(&logged))?
            }
        };
        let active = filter_inactive(&pairs, a.min_inactive_run);
        triplets.extend(extract_triplets(&active, &opts));
    }
    let manifest = write_dataset(&triplets, &a.out)?;
    write_snapshot(cli, "ingest", a, &a.out)?;
    println!("{} matches kept of {}, {} triplets", balanced.matches.len(), files.len(), triplets.len());
    print!("{}", stats_table(&manifest));
    Ok(())
}

const ROSTER: [&str; 4] = ["hero_a", "hero_b", "hero_c", "hero_d"];

fn simgen(cli: &Cli, a: &SimgenArgs) -> Result<(), CliError> {
    let counts = parse_counts(&a.counts)?;
    let sim = simulator(cli.seed, a.rule_table.as_deref())?;
    let opts = BenchmarkOptions { horizon: (a.horizon_min, a.horizon_max), ..Default::default() };
    let bench = make_benchmark(&sim, &counts, &opts)?;
    let manifest = write_dataset(&bench, &a.out)?;
    write_snapshot(cli, "simgen", a, &a.out)?;
    print!("{}", stats_table(&manifest));

    if let Some(dir) = &a.trajectories {
        std::fs::create_dir_all(dir).map_err(io_error(dir))?;
        let sc = sim.standard_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(cli.seed ^ 0x7472_616a);
        for i in 0..a.matches {
            let mut s = sim.init_match(&sc, i as u64);
            let (mut states, mut actions) = (Vec::new(), Vec::new());
            let mut elapsed = 0;
            while elapsed < a.ticks {
                let act = random_action(&mut rng);
                let gap = if rng.gen_bool(0.05) { rng.gen_range(61..=90) } else { rng.gen_range(3..=20) };
                let next = sim.step(&s, act, gap as i64 * sim.cfg.tick_s)?;
                states.push(std::mem::replace(&mut s, next));
                actions.push(Some(act));
                elapsed += gap;
            }
            let header = TrajectoryHeader { hero: ROSTER[i % ROSTER.len()].to_string(), win: rng.gen_bool(0.5) };
            let path = dir.join(format!("match_{i:04}.jsonl"));
            write_trajectory(&Trajectory { header, states, actions }, &path)?;
        }
        println!("{} trajectories written to {}", a.matches, dir.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    prompts: usize,
    steps: usize,
    expected_reward_start: f64,
    expected_reward_end: f64,
    first_group_reward: f64,
    last_group_reward: f64,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_error(path))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).map_err(|e| CliError::Data(e.to_string()))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_error(path))
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let spec = load_spec(a.spec.as_deref())?;
    let sim = simulator(cli.seed, None)?;
    let data = if a.data == "sim" {
        let counts: BTreeMap<u8, usize> = [(1, a.per_difficulty), (2, a.per_difficulty)].into();
        make_benchmark(&sim, &counts, &BenchmarkOptions::default())?
    } else {
        read_dataset(Path::new(&a.data))?
    };
    let defaults = TrainerConfig::default();
    let cfg = TrainerConfig {
        group_size: a.group,
        clip_eps: a.eps,
        kl_coef: a.beta,
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        momentum: a.momentum.unwrap_or(defaults.momentum),
        max_steps: a.steps,
        seed: cli.seed,
        ..defaults
    };
    cfg.validate().map_err(CliError::Usage)?;
    let cases = prepare_cases(&sim, &data)?;
    let start = fresh_policy();
    let out = train(&cases, start.clone(), &spec, &cfg)?;

    std::fs::create_dir_all(&a.out).map_err(io_error(&a.out))?;
    write_jsonl(&a.out.join("telemetry.jsonl"), &out.telemetry)?;
    write_json(&a.out.join("policy.json"), &out.policy)?;
    let summary = TrainSummary {
        prompts: cases.len(),
        steps: out.telemetry.len(),
        expected_reward_start: mean_expected_reward(&start, &cases, &spec),
        expected_reward_end: mean_expected_reward(&out.policy, &cases, &spec),
        first_group_reward: out.telemetry.first().map_or(0.0, |t| t.mean_reward),
        last_group_reward: out.telemetry.last().map_or(0.0, |t| t.mean_reward),
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    write_snapshot(cli, "train", a, &a.out)?;
    println!(
        "{} prompts, {} steps: expected reward {:.4} -> {:.4}",
        summary.prompts, summary.steps, summary.expected_reward_start, summary.expected_reward_end
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Prediction {
    provenance: String,
    completion: String,
}

#[derive(Serialize)]
struct ScoreRecord {
    provenance: String,
    reward: f64,
    difficulty: u8,
    change_types: Vec<ComponentKey>,
    key_scores: Vec<KeyScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<ExtractFailure>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    missing: bool,
}

fn score(cli: &Cli, a: &ScoreArgs) -> Result<(), CliError> {
    let spec = load_spec(a.spec.as_deref())?;
    let truth = read_dataset(&a.truth)?;
    let mut preds: HashMap<String, String> = HashMap::new();
    for p in read_lines::<Prediction>(&a.pred)? {
        if preds.insert(p.provenance.clone(), p.completion).is_some() {
            return Err(CliError::Data(format!("duplicate prediction for {}", p.provenance)));
        }
    }
    let known: std::collections::HashSet<String> = truth.iter().map(|t| t.provenance.key()).collect();
    if let Some(stray) = preds.keys().find(|k| !known.contains(*k)) {
        return Err(CliError::Data(format!("prediction {stray} has no matching triplet")));
    }
    let records: Vec<ScoreRecord> = truth
        .iter()
        .map(|t| {
            let key = t.provenance.key();
            let base = ScoreRecord {
                provenance: key.clone(),
                reward: 0.0,
                difficulty: t.difficulty(),
                change_types: t.delta.changed_components(),
                key_scores: Vec::new(),
                failure: None,
                missing: true,
            };
            match preds.get(&key) {
                None => base,
                Some(text) => {
                    let s = score_completion(text, &t.delta, &spec);
                    ScoreRecord { reward: s.reward, key_scores: s.key_scores.unwrap_or_default(), failure: s.failure, missing: false, ..base }
                }
            }
        })
        .collect();
    match &a.out {
        Some(out) => {
            write_jsonl(out, &records)?;
            write_snapshot(cli, "score", a, out)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            for r in &records {
                writeln!(stdout, "{}", serde_json::to_string(r).expect("records serialize")).map_err(|e| CliError::Data(e.to_string()))?;
            }
        }
    }
    let missing = records.iter().filter(|r| r.missing).count();
    if missing > 0 {
        tracing::warn!("{missing} triplets had no prediction and scored 0");
    }
    Ok(())
}

fn eval_remote(cli: &Cli, a: &EvalRemoteArgs) -> Result<(), CliError> {
    let data = read_dataset(&a.data)?;
    let cfg = EndpointConfig::from_toml(&read_text(&a.endpoint)?)?;
    let spec = load_spec(a.spec.as_deref())?;
    let templates = match &a.templates {
        Some(dir) => TemplateSet::from_dir(dir, !a.unpinned).map_err(|e| CliError::Data(e.to_string()))?,
        None => TemplateSet::builtin(),
    };
    let renderer = PromptRenderer::new(templates, cfg.prompt_max_len);
    let summary = evaluate_remote(&data, &cfg, &spec, &renderer, &a.out)?;
    write_snapshot(cli, "eval-remote", a, &a.out)?;
    let scores: Vec<SampleScore> = summary.results.iter().map(|r| r.sample_score()).collect();
    let rep = evaluate(&scores);
    println!("{} resumed, {} queried, {} failures", summary.resumed, summary.queried, summary.failures);
    print!("{}", rep.table());
    let network = summary
        .results
        .iter()
        .filter(|r| r.error.as_ref().is_some_and(|e| e.kind == wia_gateway::remote::FailureKind::Network))
        .count();
    if network > 0 {
        return Err(CliError::Network(format!("{network} samples hit network failures; rerun the same command to retry them")));
    }
    Ok(())
}

fn report(cli: &Cli, a: &ReportArgs) -> Result<(), CliError> {
    let scores: Vec<SampleScore> = read_lines(&a.scores)?;
    let telemetry: Option<Vec<TelemetryRecord>> = a.telemetry.as_deref().map(read_lines).transpose()?;
    let rep = evaluate(&scores);
    std::fs::create_dir_all(&a.out).map_err(io_error(&a.out))?;
    let written = report_render(&rep, telemetry.as_deref(), &a.out).map_err(|e| CliError::Data(e.to_string()))?;
    write_snapshot(cli, "report", a, &a.out)?;
    print!("{}", rep.table());
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn act(cli: &Cli, a: &ActArgs) -> Result<(), CliError> {
    let state = parse_state(&read_text(&a.state)?).map_err(|e| CliError::Data(format!("{}: {e}", a.state.display())))?;
    let rules = match &a.rules {
        Some(p) => OutcomeRules::from_toml(&read_text(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => OutcomeRules::default(),
    };
    let sim = simulator(cli.seed, None)?;
    let forecaster = SimForecaster { sim: &sim, horizon_s: a.horizon };
    let sel = select_action(&state, &forecaster, a.k, &rules).map_err(|e| match e {
        SelectError::InvalidK => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.to_string()),
    })?;
    let text = serde_json::to_string_pretty(&sel).expect("selection serializes");
    match &a.out {
        Some(out) => {
            std::fs::write(out, text + "\n").map_err(io_error(out))?;
            write_snapshot(cli, "act", a, out)?;
        }
        None => println!("{text}"),
    }
    eprintln!("chosen: {} (score {:+.3}{})", sel.chosen.name(), sel.score, if sel.tie { ", tied" } else { "" });
    Ok(())
}

fn pin_checks(a: &SelftestArgs) -> Vec<CheckReport> {
    let mut out = Vec::new();
    let (name, text) = match &a.rule_table {
        Some(p) => (p.display().to_string(), std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))),
        None => ("rules.toml (builtin)".to_string(), Ok(BUILTIN_RULES.to_string())),
    };
    out.push(run_check("rule table checksum", || {
        let text = text?;
        RuleTable::from_pinned(&name, &text, BUILTIN_RULES_SHA256).map_err(|e| e.to_string())?;
        Ok(format!("{name} matches {}", &BUILTIN_RULES_SHA256[..12]))
    }));
    out.push(run_check("prompt template checksums", || {
        let set = match &a.templates {
            Some(dir) => TemplateSet::from_dir(dir, true).map_err(|e| e.to_string())?,
            None => TemplateSet::builtin(),
        };
        set.verify().map_err(|e| e.to_string())?;
        Ok(PromptKind::ALL.iter().map(|k| k.file_name()).collect::<Vec<_>>().join(", "))
    }));
    out.push(run_check("outcome rule table", || {
        let rules = OutcomeRules::from_toml(DEFAULT_OUTCOME_RULES).map_err(|e| e.to_string())?;
        Ok(format!("{} rules, sha256 {}", rules.rules.len(), &sha256_hex(DEFAULT_OUTCOME_RULES.as_bytes())[..12]))
    }));
    out
}

/// The invariant suite at sizes that finish well inside a minute.
pub fn suite() -> Vec<CheckReport> {
    vec![
        run_check("reward worked examples", checks::reward_worked_examples),
        run_check("reward identities", || checks::reward_identities(2_000, 11)),
        run_check("advantage normalization", || checks::advantage_properties(2_000, 12)),
        run_check("kl estimator", || checks::kl_properties(200_000, 13)),
        run_check("grpo gradient", || checks::gradient_check(20, 14, 1e-5, 1e-4)),
        run_check("diff round trip", || checks::diff_round_trip(1_000, 15)),
        run_check("pipeline oracle", || checks::pipeline_oracle(100, 16)),
        run_check("stratification", || checks::stratification(17)),
        run_check("evaluation identities", || checks::eval_identities(200, 18)),
        run_check("selector optimality", || checks::selector_optimality(10, 19)),
        run_check("token grammar", || checks::grammar_lengths(1_000, 20)),
    ]
}

fn selftest(a: &SelftestArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let mut reports = pin_checks(a);
    reports.extend(suite());
    for r in &reports {
        println!("{}", r.line());
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    println!("{} of {} checks passed in {:.1}s", reports.len() - failed.len(), reports.len(), start.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Divergence(format!("failed checks: {}", failed.join(", "))))
    }
}
