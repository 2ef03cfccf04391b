use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wia_core::action::ActionLabel;
use wia_core::checks::{oracle_diff, oracle_extract, perturb_delta, random_delta, random_state_pairs, random_states, random_trajectory};
use wia_core::diff::{apply_delta_at, delta_from_value, state_diff, ComponentKey, StateDelta};
use wia_core::eval::{classify_outcome, evaluate, ChangeKind, OutcomeRule, OutcomeRules, Polarity, SampleScore, Side};
use wia_core::grpo::policy::ToyPolicy;
use wia_core::grpo::{compute_advantages, grpo_loss, kl_grad_theta, kl_term, Completion, CompletionGroup, TrainerConfig};
use wia_core::pipeline::{extract_triplets, ExtractOptions};
use wia_core::reward::{reward, RewardSpec};
use wia_core::sim::{SimConfig, Simulator};
use wia_core::state::{parse_state, serialize_state, Team};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sim() -> Simulator {
    Simulator::new(SimConfig::with_seed(17)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diff_matches_oracle_and_round_trips(seed in any::<u64>()) {
        let sim = sim();
        for (s1, s2) in random_state_pairs(&sim, 5, &mut rng(seed)) {
            let d = state_diff(&s1, &s2).unwrap();
            prop_assert_eq!(&d, &oracle_diff(&s1, &s2));
            prop_assert_eq!(apply_delta_at(&s1, &d, s2.t).unwrap(), s2);
            prop_assert!(state_diff(&s1, &s1).unwrap().is_empty());
        }
    }

    #[test]
    fn states_and_deltas_survive_serialization(seed in any::<u64>()) {
        let sim = sim();
        let mut r = rng(seed);
        for s in random_states(&sim, 3, &mut r) {
            prop_assert_eq!(parse_state(&serialize_state(&s)).unwrap(), s);
        }
        for (s1, s2) in random_state_pairs(&sim, 3, &mut r) {
            let d = state_diff(&s1, &s2).unwrap();
            let back = delta_from_value(serde_json::from_str(&d.to_json_string()).unwrap()).unwrap();
            prop_assert_eq!(back, d);
        }
    }

    #[test]
    fn reward_is_reflexive_bounded_and_scale_free(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let truth = random_delta(&mut r);
        let pred = perturb_delta(&truth, &mut r);
        let mut spec = RewardSpec::default();
        for k in ComponentKey::ALL {
            spec.weights.set(k, r.gen_range(0.1..4.0));
        }
        prop_assert_eq!(reward(&truth, &truth, &spec).reward, 1.0);
        let base = reward(&pred, &truth, &spec).reward;
        prop_assert!((0.0..=1.0).contains(&base));
        let mut scaled = spec.clone();
        for k in ComponentKey::ALL {
            scaled.weights.set(k, spec.weights.get(k) * c);
        }
        prop_assert!((reward(&pred, &truth, &scaled).reward - base).abs() < 1e-12);
    }

    #[test]
    fn fixing_a_key_never_lowers_reward(seed in any::<u64>(), k in 0usize..4) {
        let mut r = rng(seed);
        let truth = random_delta(&mut r);
        let pred = perturb_delta(&truth, &mut r);
        let key = ComponentKey::ALL[k];
        let mut better = pred.clone();
        *better.component_mut(key) = truth.component(key).to_vec();
        let spec = RewardSpec::default();
        prop_assert!(reward(&better, &truth, &spec).reward >= reward(&pred, &truth, &spec).reward);
    }

    #[test]
    fn advantages_are_normalized(rewards in prop::collection::vec(0.0f64..1.0, 2..16), shift in -5.0f64..5.0) {
        let a = compute_advantages(&rewards, 1e-8).unwrap();
        let n = a.len() as f64;
        prop_assert!((a.iter().sum::<f64>() / n).abs() < 1e-9);
        let spread = rewards.iter().cloned().fold(f64::MIN, f64::max) - rewards.iter().cloned().fold(f64::MAX, f64::min);
        if spread > 1e-3 {
            let var = a.iter().map(|v| v * v).sum::<f64>() / n;
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
        let moved: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
        for (x, y) in a.iter().zip(compute_advantages(&moved, 1e-8).unwrap()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn kl_is_nonnegative_with_matching_gradient(a in -15.0f64..0.0, b in -15.0f64..0.0) {
        prop_assert!(kl_term(a, b).value >= 0.0);
        prop_assert_eq!(kl_term(a, a).value, 0.0);
        let h = 1e-6;
        let fd = (kl_term(a, b + h).value - kl_term(a, b - h).value) / (2.0 * h);
        prop_assert!((fd - kl_grad_theta(a, b)).abs() < 1e-5 * (1.0 + fd.abs()));
    }

    #[test]
    fn wide_clip_without_kl_is_plain_policy_gradient(seed in any::<u64>()) {
        let mut r = rng(seed);
        let f = 3;
        let mut old = ToyPolicy::zeros(f);
        old.params.iter_mut().for_each(|w| *w = r.gen_range(-1.0..1.0));
        let mut cur = old.clone();
        cur.params.iter_mut().for_each(|w| *w += r.gen_range(-0.5..0.5));
        let x = vec![1.0, r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let completions: Vec<Completion> = (0..4)
            .map(|i| {
                let tokens = old.sample(&x, &mut r);
                Completion {
                    logp_theta: cur.sequence_log_probs(&tokens, &x),
                    logp_old: old.sequence_log_probs(&tokens, &x),
                    logp_ref: old.sequence_log_probs(&tokens, &x),
                    tokens,
                    reward: 0.0,
                    advantage: [1.2, -0.4, 0.7, -1.5][i],
                }
            })
            .collect();
        let group = CompletionGroup { prompt_id: "p".into(), features: x.clone(), completions };
        let cfg = TrainerConfig { clip_eps: 1e12, kl_coef: 0.0, ..Default::default() };
        let out = grpo_loss(&cur, &group, &cfg).unwrap();

        let n: usize = group.completions.iter().map(|c| c.tokens.len()).sum();
        let mut loss = 0.0;
        let mut grad = vec![0.0; cur.params.len()];
        for c in &group.completions {
            for (t, tok) in c.tokens.iter().enumerate() {
                let rho = (cur.log_prob(*tok, &x) - c.logp_old[t]).exp();
                loss -= rho * c.advantage / n as f64;
                cur.accumulate_grad(*tok, &x, -rho * c.advantage / n as f64, &mut grad);
            }
        }
        prop_assert!((out.loss - loss).abs() < 1e-12);
        for (g, want) in out.grad.iter().zip(&grad) {
            prop_assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn extraction_matches_straight_line_oracle(seed in any::<u64>()) {
        let sim = sim();
        let traj = random_trajectory(&sim, seed % 50, &mut rng(seed));
        let got = extract_triplets(&traj, &ExtractOptions::default());
        prop_assert_eq!(&got, &oracle_extract(&traj));
        prop_assert!(got.iter().all(|t| t.horizon_s <= 60 && !t.delta.is_empty()));
    }

    #[test]
    fn report_identities(scores in prop::collection::vec((0.0f64..=1.0, 1u8..=4), 0..300)) {
        let samples: Vec<SampleScore> = scores
            .iter()
            .enumerate()
            .map(|(i, (s, d))| SampleScore { provenance: i.to_string(), score: *s, difficulty: *d, change_types: vec![] })
            .collect();
        let rep = evaluate(&samples);
        prop_assert!((rep.overall_score - rep.weighted_mean()).abs() <= 1e-12);
        prop_assert_eq!(rep.histogram.iter().sum::<u64>(), samples.len() as u64);
        prop_assert_eq!(rep.per_difficulty.values().map(|s| s.count).sum::<u64>(), samples.len() as u64);
    }

    #[test]
    fn perspective_flip_negates_symmetric_rules(seed in any::<u64>()) {
        let sim = sim();
        let mut r = rng(seed);
        let s = random_states(&sim, 1, &mut r).pop().unwrap();
        let next = sim.step(&s, ActionLabel::from_index(r.gen_range(0..44)).unwrap(), r.gen_range(1..=120)).unwrap();
        let delta = state_diff(&s, &next).unwrap();
        let kinds = [ChangeKind::Any, ChangeKind::Decreased, ChangeKind::Increased, ChangeKind::BecameTrue, ChangeKind::BecameFalse, ChangeKind::Destroyed];
        let mut rules = Vec::new();
        for _ in 0..r.gen_range(1..6) {
            let key = ComponentKey::ALL[r.gen_range(0..4)];
            let base = OutcomeRule {
                component: Some(key),
                side: Some(Side::Own),
                field: Some(key.fields()[r.gen_range(0..key.fields().len())].to_string()),
                change: kinds[r.gen_range(0..kinds.len())],
                polarity: if r.gen() { Polarity::Favorable } else { Polarity::Unfavorable },
                weight: r.gen_range(0.1..3.0),
            };
            let mirror = OutcomeRule {
                side: Some(Side::Opponent),
                polarity: if base.polarity == Polarity::Favorable { Polarity::Unfavorable } else { Polarity::Favorable },
                ..base.clone()
            };
            rules.push(base);
            rules.push(mirror);
        }
        let rules = OutcomeRules { perspective: Team::Ally, rules };
        let a = classify_outcome(&delta, &s, &rules).score;
        let b = classify_outcome(&delta, &s, &rules.with_perspective(Team::Enemy)).score;
        prop_assert!((a + b).abs() < 1e-12);
        let d = OutcomeRules::default();
        prop_assert!((classify_outcome(&delta, &s, &d).score + classify_outcome(&delta, &s, &d.with_perspective(Team::Enemy)).score).abs() < 1e-12);
    }
}

#[test]
fn empty_delta_is_neutral_under_every_rule_set() {
    let sim = sim();
    let s = random_states(&sim, 1, &mut rng(1)).pop().unwrap();
    let o = classify_outcome(&StateDelta::default(), &s, &OutcomeRules::default());
    assert_eq!(o.score, 0.0);
}
