//! Acceptance suite: ten criteria at full size, one PASS/FAIL line each.
//! Runtime limits are part of each criterion.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use wia_core::checks::{self, ensure, run_check, CheckReport, CheckResult};
use wia_core::eval::{evaluate, report_render};
use wia_core::grpo::trainer::write_telemetry;
use wia_core::reward::RewardSpec;
use wia_core::sim::{make_benchmark, BenchmarkOptions, SimConfig, Simulator};
use wia_gateway::stub::{StubReply, StubServer};
use wia_gateway::{evaluate_remote, EndpointConfig, PromptRenderer, TemplateSet};

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Duration,
    run: fn() -> CheckResult,
}

fn reward_arithmetic() -> CheckResult {
    let examples = checks::reward_worked_examples()?;
    let identities = checks::reward_identities(10_000, 101)?;
    Ok(format!("examples {examples}; {identities}"))
}

fn rl_run() -> CheckResult {
    let sum = checks::rl_run(7, 100)?;
    let gain = sum.reward_end - sum.reward_start;
    let ratio = sum.drift_anchored / sum.drift_default;
    ensure(sum.telemetry.len() == 400, || format!("{} telemetry records", sum.telemetry.len()))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_telemetry(&sum.telemetry, &dir.path().join("telemetry.jsonl")).map_err(|e| e.to_string())?;
    report_render(&evaluate(&[]), Some(&sum.telemetry), dir.path()).map_err(|e| e.to_string())?;
    for series in ["reward.csv", "length.csv"] {
        let text = std::fs::read_to_string(dir.path().join(series)).map_err(|e| e.to_string())?;
        ensure(text.lines().count() == 401, || format!("{series} has {} lines", text.lines().count()))?;
    }

    ensure(gain >= 0.3, || format!("expected reward {:.4} -> {:.4}, gain {gain:.4} < 0.3", sum.reward_start, sum.reward_end))?;
    ensure(ratio < 0.01, || format!("anchored drift {:.3e} is {:.2}% of default drift {:.3e}", sum.drift_anchored, 100.0 * ratio, sum.drift_default))?;
    Ok(format!(
        "expected reward {:.4} -> {:.4} (gain {gain:.4}); anchored drift {:.2}% of default; reward and length series written",
        sum.reward_start,
        sum.reward_end,
        100.0 * ratio
    ))
}

fn oracle_loopback() -> CheckResult {
    let sim = Simulator::new(SimConfig::with_seed(21)).map_err(|e| e.to_string())?;
    let counts: BTreeMap<u8, usize> = (1..=4).map(|d| (d, 10)).collect();
    let bench = make_benchmark(&sim, &counts, &BenchmarkOptions::default()).map_err(|e| e.to_string())?;
    let renderer = PromptRenderer::new(TemplateSet::builtin(), 1 << 20);
    let answers: HashMap<String, String> = bench
        .iter()
        .map(|t| {
            let prompt = renderer.forecast(&t.state, t.action, t.horizon_s).expect("prompt fits");
            (prompt, format!("<answer>{}</answer>", t.delta.to_json_string()))
        })
        .collect();
    let stub = StubServer::start(move |_, p| answers.get(p).map_or(StubReply::Status(404), |a| StubReply::Answer(a.clone())))
        .map_err(|e| e.to_string())?;
    std::env::set_var("WIA_ACCEPTANCE_TOKEN", "loopback");
    let mut cfg = EndpointConfig::new(stub.base_url(), "oracle", "WIA_ACCEPTANCE_TOKEN");
    cfg.max_retries = 0;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sum = evaluate_remote(&bench, &cfg, &RewardSpec::default(), &renderer, &dir.path().join("remote.jsonl"))
        .map_err(|e| e.to_string())?;
    let bad = sum.results.iter().filter(|r| r.reward != 1.0).count();
    ensure(sum.results.len() == bench.len() && bad == 0, || format!("{bad} of {} loopback samples below 1.0", sum.results.len()))?;
    Ok(format!("{} loopback samples at 1.0", sum.results.len()))
}

fn evaluation() -> CheckResult {
    let ids = checks::eval_identities(2_000, 109)?;
    let loopback = oracle_loopback()?;
    Ok(format!("{ids}; {loopback}"))
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "reward arithmetic", limit: Duration::from_secs(5), run: reward_arithmetic },
    Criterion {
        id: 2,
        name: "advantage normalization",
        limit: Duration::from_secs(5),
        run: || checks::advantage_properties(10_000, 102),
    },
    Criterion { id: 3, name: "kl estimator", limit: Duration::from_secs(5), run: || checks::kl_properties(1_000_000, 103) },
    Criterion {
        id: 4,
        name: "grpo gradient check",
        limit: Duration::from_secs(60),
        run: || checks::gradient_check(100, 104, 1e-5, 1e-4),
    },
    Criterion { id: 5, name: "diff round trip", limit: Duration::from_secs(30), run: || checks::diff_round_trip(10_000, 105) },
    Criterion { id: 6, name: "pipeline oracle", limit: Duration::from_secs(30), run: || checks::pipeline_oracle(1_000, 106) },
    Criterion { id: 7, name: "desk-scale rl run", limit: Duration::from_secs(600), run: rl_run },
    Criterion { id: 8, name: "difficulty stratification", limit: Duration::from_secs(60), run: || checks::stratification(108) },
    Criterion { id: 9, name: "evaluation identities", limit: Duration::from_secs(60), run: evaluation },
    Criterion { id: 10, name: "downstream selector", limit: Duration::from_secs(60), run: || checks::selector_optimality(100, 110) },
];

fn main() {
    let start = Instant::now();
    let mut failed = 0;
    for c in &CRITERIA {
        let mut rep: CheckReport = run_check(c.name, c.run);
        if rep.passed && rep.elapsed > c.limit {
            rep.passed = false;
            rep.detail = format!("over the {}s limit; {}", c.limit.as_secs(), rep.detail);
        }
        failed += usize::from(!rep.passed);
        println!("[{:>2}] {}", c.id, rep.line());
    }
    println!("{} of {} criteria passed in {:.1}s", CRITERIA.len() - failed, CRITERIA.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
