//! Linear softmax policy over a tiny token grammar, plus the table that
//! turns its token sequences into state deltas.
//!
//! For every component the policy first emits a class token. Any class other
//! than `none` is followed by a magnitude token that scales the horizon used
//! to build the prediction. Sequences are therefore 4 to 8 tokens long.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::ActionLabel;
use crate::diff::{state_diff, ChangeRecord, ComponentKey, StateDelta};
use crate::pipeline::WiaTriplet;
use crate::sim::{EffectMask, SimError, Simulator};
use crate::state::GameState;

pub const N_COMPONENTS: usize = 4;
pub const CLASS_TOKENS: [&str; 4] = ["none", "passive", "action", "combined"];
pub const MAGNITUDE_TOKENS: [&str; 6] = ["quarter", "half", "same", "double", "triple", "quadruple"];
pub const MAGNITUDES: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 3.0, 4.0];
/// Choices per component: `none` plus every (class, magnitude) pair.
pub const N_MAGNITUDES: usize = MAGNITUDES.len();
/// Index of the unscaled magnitude.
pub const SAME_MAGNITUDE: usize = 2;
pub const N_OPTIONS: usize = 1 + 3 * N_MAGNITUDES;
pub const N_SLOTS: usize = 2 * N_COMPONENTS;
pub const N_FEATURES: usize = 16;

/// A token and the slot it was emitted in. Slots `0..4` hold class tokens of
/// each component, slots `4..8` their magnitude tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub slot: u8,
    pub id: u8,
}

pub fn slot_size(slot: usize) -> usize {
    if slot < N_COMPONENTS {
        CLASS_TOKENS.len()
    } else {
        MAGNITUDE_TOKENS.len()
    }
}

impl Token {
    pub fn text(self) -> &'static str {
        if (self.slot as usize) < N_COMPONENTS {
            CLASS_TOKENS[self.id as usize]
        } else {
            MAGNITUDE_TOKENS[self.id as usize]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub n_features: usize,
    pub params: Vec<f64>,
}

fn log_softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    for l in logits {
        *l -= lse;
    }
}

impl ToyPolicy {
    pub fn zeros(n_features: usize) -> Self {
        ToyPolicy { n_features, params: vec![0.0; Self::n_params_for(n_features)] }
    }

    pub fn n_params_for(n_features: usize) -> usize {
        (0..N_SLOTS).map(slot_size).sum::<usize>() * n_features
    }

    fn offset(&self, slot: usize) -> usize {
        (0..slot).map(slot_size).sum::<usize>() * self.n_features
    }

    /// Log-probabilities of every token of `slot` given features `x`.
    pub fn log_probs(&self, slot: usize, x: &[f64]) -> Vec<f64> {
        let f = self.n_features;
        let base = self.offset(slot);
        let mut logits: Vec<f64> = (0..slot_size(slot))
            .map(|j| {
                let row = &self.params[base + j * f..base + (j + 1) * f];
                row.iter().zip(x).map(|(w, v)| w * v).sum()
            })
            .collect();
        log_softmax(&mut logits);
        logits
    }

    pub fn log_prob(&self, tok: Token, x: &[f64]) -> f64 {
        self.log_probs(tok.slot as usize, x)[tok.id as usize]
    }

    pub fn sequence_log_probs(&self, tokens: &[Token], x: &[f64]) -> Vec<f64> {
        tokens.iter().map(|t| self.log_prob(*t, x)).collect()
    }

    /// Adds `scale * d log p(tok) / d params` into `grad`.
    pub fn accumulate_grad(&self, tok: Token, x: &[f64], scale: f64, grad: &mut [f64]) {
        let slot = tok.slot as usize;
        let f = self.n_features;
        let base = self.offset(slot);
        for (j, lp) in self.log_probs(slot, x).into_iter().enumerate() {
            let coef = scale * (if j == tok.id as usize { 1.0 } else { 0.0 } - lp.exp());
            for (g, v) in grad[base + j * f..base + (j + 1) * f].iter_mut().zip(x) {
                *g += coef * v;
            }
        }
    }

    fn draw(&self, slot: usize, x: &[f64], rng: &mut impl Rng) -> Token {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let lps = self.log_probs(slot, x);
        let last = lps.len() - 1;
        for (j, lp) in lps.into_iter().enumerate() {
            acc += lp.exp();
            if u < acc || j == last {
                return Token { slot: slot as u8, id: j as u8 };
            }
        }
        unreachable!()
    }

    pub fn sample(&self, x: &[f64], rng: &mut impl Rng) -> Vec<Token> {
        let mut out = Vec::with_capacity(N_SLOTS);
        for k in 0..N_COMPONENTS {
            let class = self.draw(k, x, rng);
            out.push(class);
            if class.id != 0 {
                out.push(self.draw(N_COMPONENTS + k, x, rng));
            }
        }
        out
    }

    /// Probability of each decoding option of component `k`.
    pub fn option_probs(&self, k: usize, x: &[f64]) -> [f64; N_OPTIONS] {
        let class = self.log_probs(k, x);
        let mag = self.log_probs(N_COMPONENTS + k, x);
        let mut out = [0.0; N_OPTIONS];
        out[0] = class[0].exp();
        for c in 1..4 {
            for m in 0..N_MAGNITUDES {
                out[option_index(c, m)] = (class[c] + mag[m]).exp();
            }
        }
        out
    }
}

fn option_index(class: usize, magnitude: usize) -> usize {
    if class == 0 {
        0
    } else {
        1 + (class - 1) * N_MAGNITUDES + magnitude
    }
}

/// Decoding option chosen for each component.
pub fn options_of(tokens: &[Token]) -> [usize; N_COMPONENTS] {
    let mut out = [0; N_COMPONENTS];
    let mut class = [0usize; N_COMPONENTS];
    for t in tokens {
        let s = t.slot as usize;
        if s < N_COMPONENTS {
            class[s] = t.id as usize;
            out[s] = option_index(class[s], SAME_MAGNITUDE);
        } else {
            let k = s - N_COMPONENTS;
            out[k] = option_index(class[k], t.id as usize);
        }
    }
    out
}

/// Hand-built prompt features.
pub fn features(state: &GameState, action: ActionLabel, horizon_s: i64) -> Vec<f64> {
    let mut x = vec![0.0; N_FEATURES];
    x[0] = 1.0;
    x[1 + action.category().index()] = 1.0;
    x[11] = horizon_s as f64 / 60.0;
    if let Some(p) = state.primary() {
        x[12] = if p.alive { 1.0 } else { 0.0 };
        x[13] = p.hp as f64 / p.max_hp as f64;
    }
    if !state.towers.is_empty() {
        x[14] = state.towers.iter().filter(|t| t.attacking).count() as f64 / state.towers.len() as f64;
    }
    x[15] = if state.dragons.iter().any(|d| d.under_attack) { 1.0 } else { 0.0 };
    x
}

/// Candidate record lists per component and option.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodingTable {
    pub options: Vec<Vec<Vec<ChangeRecord>>>,
}

impl DecodingTable {
    /// Option 0 is the empty list. The others replay the prompt in the
    /// simulator over a scaled horizon with everything but the action, the
    /// action alone, or everything.
    pub fn build(sim: &Simulator, state: &GameState, action: ActionLabel, horizon_s: i64) -> Result<Self, SimError> {
        let mut options = vec![vec![Vec::new(); N_OPTIONS]; N_COMPONENTS];
        let masks = [
            EffectMask { actor: false, passive: true, scripted: true },
            EffectMask { actor: true, passive: false, scripted: false },
            EffectMask::ALL,
        ];
        for (c, mask) in masks.into_iter().enumerate() {
            for (m, scale) in MAGNITUDES.iter().enumerate() {
                let dt = ((horizon_s as f64 * scale).round() as i64).max(1) * sim.cfg.tick_s;
                let next = sim.step_masked(state, action, dt, mask)?;
                let delta = state_diff(state, &next).expect("simulator keeps the match and primary");
                for (k, key) in ComponentKey::ALL.iter().enumerate() {
                    options[k][option_index(c + 1, m)] = delta.component(*key).to_vec();
                }
            }
        }
        Ok(DecodingTable { options })
    }

    pub fn for_triplet(sim: &Simulator, t: &WiaTriplet) -> Result<Self, SimError> {
        Self::build(sim, &t.state, t.action, t.horizon_s)
    }

    pub fn decode(&self, tokens: &[Token]) -> StateDelta {
        let mut d = StateDelta::default();
        for (k, o) in options_of(tokens).into_iter().enumerate() {
            *d.component_mut(ComponentKey::ALL[k]) = self.options[k][o].clone();
        }
        d
    }
}
