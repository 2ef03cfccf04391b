use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use wia_core::action::ActionLabel;
use wia_core::pipeline::WiaTriplet;
use wia_core::state::{serialize_state, GameState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Forecast,
    Distill,
    Downstream,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Forecast, PromptKind::Distill, PromptKind::Downstream];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::Forecast => "forecast.txt",
            PromptKind::Distill => "distill.txt",
            PromptKind::Downstream => "downstream.txt",
        }
    }

    /// Pinned sha256 of the shipped template.
    pub fn pinned_sha256(self) -> &'static str {
        match self {
            PromptKind::Forecast => "d74adb839e0d225593b50164fc35f722cfcadc163462a02bd90e3368315680e7",
            PromptKind::Distill => "8c6a70e2671bbce6995f83fc1e98aa82289fd84ca874f1a8862833c8f890c86f",
            PromptKind::Downstream => "16adbc0f5e3a7a8c237e8e1d1de94e5709b2fe497804f4730a41ce399edb02c2",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::Forecast => include_str!("../templates/forecast.txt"),
            PromptKind::Distill => include_str!("../templates/distill.txt"),
            PromptKind::Downstream => include_str!("../templates/downstream.txt"),
        }
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("template {name} has sha256 {actual}, expected {expected}")]
    ChecksumMismatch { name: String, expected: String, actual: String },
    #[error("template {name} lacks placeholder {placeholder}")]
    MissingPlaceholder { name: String, placeholder: &'static str },
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn placeholders(kind: PromptKind) -> &'static [&'static str] {
    match kind {
        PromptKind::Forecast => &["<game_state></game_state>", "<action></action>", "#time_gap#"],
        PromptKind::Distill => &["<game_state></game_state>", "<action></action>", "<game_state_change></game_state_change>", "#time_gap#"],
        PromptKind::Downstream => &["<game_state></game_state>", "<action_candidates></action_candidates>"],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub forecast: String,
    pub distill: String,
    pub downstream: String,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            forecast: PromptKind::Forecast.builtin().to_string(),
            distill: PromptKind::Distill.builtin().to_string(),
            downstream: PromptKind::Downstream.builtin().to_string(),
        }
    }

    pub fn get(&self, kind: PromptKind) -> &str {
        match kind {
            PromptKind::Forecast => &self.forecast,
            PromptKind::Distill => &self.distill,
            PromptKind::Downstream => &self.downstream,
        }
    }

    /// Loads the three templates from `dir`. With `pinned`, each file must
    /// match its shipped checksum.
    pub fn from_dir(dir: &Path, pinned: bool) -> Result<Self, TemplateError> {
        let read = |kind: PromptKind| -> Result<String, TemplateError> {
            let path = dir.join(kind.file_name());
            let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io { path, source })?;
            if pinned {
                let actual = sha256_hex(&text);
                if actual != kind.pinned_sha256() {
                    return Err(TemplateError::ChecksumMismatch {
                        name: kind.file_name().to_string(),
                        expected: kind.pinned_sha256().to_string(),
                        actual,
                    });
                }
            }
            for p in placeholders(kind) {
                if !text.contains(p) {
                    return Err(TemplateError::MissingPlaceholder { name: kind.file_name().to_string(), placeholder: p });
                }
            }
            Ok(text)
        };
        Ok(TemplateSet { forecast: read(PromptKind::Forecast)?, distill: read(PromptKind::Distill)?, downstream: read(PromptKind::Downstream)? })
    }

    /// Checks the templates against the pinned checksums.
    pub fn verify(&self) -> Result<(), TemplateError> {
        for kind in PromptKind::ALL {
            let actual = sha256_hex(self.get(kind));
            if actual != kind.pinned_sha256() {
                return Err(TemplateError::ChecksumMismatch {
                    name: kind.file_name().to_string(),
                    expected: kind.pinned_sha256().to_string(),
                    actual,
                });
            }
        }
        Ok(())
    }
}

/// Token estimate over `max` tokens. Tokens are estimated as chars / 4.
#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
#[error("prompt of about {estimated} tokens exceeds the limit of {max}")]
pub struct PromptTooLong {
    pub estimated: usize,
    pub max: usize,
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone)]
pub struct PromptRenderer {
    pub templates: TemplateSet,
    pub prompt_max_len: usize,
}

impl PromptRenderer {
    pub fn new(templates: TemplateSet, prompt_max_len: usize) -> Self {
        PromptRenderer { templates, prompt_max_len }
    }

    fn check(&self, text: String) -> Result<String, PromptTooLong> {
        let estimated = estimate_tokens(&text);
        if estimated > self.prompt_max_len {
            return Err(PromptTooLong { estimated, max: self.prompt_max_len });
        }
        Ok(text)
    }

    pub fn forecast(&self, state: &GameState, action: ActionLabel, horizon_s: i64) -> Result<String, PromptTooLong> {
        let text = self
            .templates
            .forecast
            .replacen("<game_state></game_state>", &format!("<game_state>{}</game_state>", serialize_state(state)), 1)
            .replacen("<action></action>", &format!("<action>{}</action>", action.name()), 1)
            .replace("#time_gap#", &horizon_s.to_string());
        self.check(text)
    }

    pub fn distill(&self, t: &WiaTriplet) -> Result<String, PromptTooLong> {
        let text = self
            .templates
            .distill
            .replacen("<game_state></game_state>", &format!("<game_state>{}</game_state>", serialize_state(&t.state)), 1)
            .replacen("<action></action>", &format!("<action>{}</action>", t.action.name()), 1)
            .replacen(
                "<game_state_change></game_state_change>",
                &format!("<game_state_change>{}</game_state_change>", t.delta.to_json_string()),
                1,
            )
            .replace("#time_gap#", &t.horizon_s.to_string());
        self.check(text)
    }

    /// Downstream prompt over `candidates`, or the whole registry when empty.
    pub fn downstream(&self, state: &GameState, candidates: &[ActionLabel]) -> Result<String, PromptTooLong> {
        let all: Vec<ActionLabel>;
        let list = if candidates.is_empty() {
            all = ActionLabel::all().collect();
            &all
        } else {
            candidates
        };
        let mut block = String::new();
        for a in list {
            block.push_str(&format!("\n- {} ({}): {}", a.name(), a.category().as_str(), a.explanation()));
        }
        block.push('\n');
        let text = self
            .templates
            .downstream
            .replacen("<game_state></game_state>", &format!("<game_state>{}</game_state>", serialize_state(state)), 1)
            .replacen("<action_candidates></action_candidates>", &format!("<action_candidates>{block}</action_candidates>"), 1);
        self.check(text)
    }
}

fn strip_think(text: &str) -> String {
    let mut out = String::new();
    let mut rest = text;
    while let Some(i) = rest.find("<think>") {
        out.push_str(&rest[..i]);
        match rest[i..].find("</think>") {
            Some(j) => rest = &rest[i + j + "</think>".len()..],
            None => return out,
        }
    }
    out.push_str(rest);
    out
}

/// Registry actions named in the last `<answer>` block, in order and
/// without repeats. Accepts a JSON list of names or one name per line or
/// comma.
pub fn parse_action_list(completion: &str) -> Vec<ActionLabel> {
    let body = strip_think(completion);
    let Some(start) = body.rfind("<answer>") else { return Vec::new() };
    let inner = &body[start + "<answer>".len()..];
    let inner = &inner[..inner.find("</answer>").unwrap_or(inner.len())];
    let items: Vec<String> = match serde_json::from_str::<Vec<String>>(inner.trim()) {
        Ok(v) => v,
        Err(_) => inner.split(['\n', ',', ';']).map(str::to_string).collect(),
    };
    let mut out = Vec::new();
    for item in items {
        let name = item
            .trim()
            .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*' | ' '))
            .trim_matches(|c: char| c == '"' || c == '\'' || c.is_whitespace());
        let name = name.split(" (").next().unwrap_or(name).trim();
        let found = ActionLabel::by_name(name).or_else(|| ActionLabel::all().find(|a| a.name().eq_ignore_ascii_case(name)));
        if let Some(a) = found {
            if !out.contains(&a) {
                out.push(a);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use wia_core::sim::{SimConfig, Simulator};

    fn state() -> GameState {
        let sim = Simulator::new(SimConfig::with_seed(1)).unwrap();
        sim.init_match(&sim.standard_scenario(), 0)
    }

    fn renderer() -> PromptRenderer {
        PromptRenderer::new(TemplateSet::builtin(), 8192)
    }

    #[test]
    fn shipped_templates_match_pins() {
        TemplateSet::builtin().verify().unwrap();
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates");
        assert_eq!(TemplateSet::from_dir(&dir, true).unwrap(), TemplateSet::builtin());
    }

    #[test]
    fn tampered_template_is_named() {
        let dir = tempfile::tempdir().unwrap();
        for kind in PromptKind::ALL {
            std::fs::write(dir.path().join(kind.file_name()), TemplateSet::builtin().get(kind)).unwrap();
        }
        let edited = TemplateSet::builtin().distill.replace("reasoning", "thinking");
        std::fs::write(dir.path().join("distill.txt"), edited).unwrap();
        match TemplateSet::from_dir(dir.path(), true) {
            Err(TemplateError::ChecksumMismatch { name, .. }) => assert_eq!(name, "distill.txt"),
            other => panic!("{other:?}"),
        }
        assert!(TemplateSet::from_dir(dir.path(), false).is_ok());
    }

    #[test]
    fn forecast_prompt() {
        let s = state();
        let a = ActionLabel::from_index(7).unwrap();
        let p = renderer().forecast(&s, a, 10).unwrap();
        assert!(p.contains("10 seconds after"));
        assert!(!p.contains("#time_gap#"));
        for key in ["minion_wave_changes", "turret_changes", "hero_changes", "dragon_status_changes"] {
            assert_eq!(p.matches(key).count(), 1, "{key}");
        }
        assert!(p.contains(&format!("<game_state>{}</game_state>", serialize_state(&s))));
        assert!(p.contains(&format!("<action>{}</action>", a.name())));
        assert!(p.contains("<think></think>") && p.contains("<answer></answer>"));
        assert_eq!(p, renderer().forecast(&s, a, 10).unwrap());
    }

    #[test]
    fn distill_prompt() {
        let sim = Simulator::new(SimConfig::with_seed(1)).unwrap();
        let s = state();
        let a = ActionLabel::RECALL;
        let next = sim.step(&s, a, 25).unwrap();
        let t = WiaTriplet {
            state: s.clone(),
            action: a,
            delta: wia_core::diff::state_diff(&s, &next).unwrap(),
            horizon_s: 25,
            provenance: wia_core::pipeline::Provenance { match_hash: "h".into(), index: 0 },
        };
        let p = renderer().distill(&t).unwrap();
        assert!(p.contains(&format!("<game_state_change>{}</game_state_change>", t.delta.to_json_string())));
        assert!(p.contains("25 seconds after"));
        assert!(p.contains("<answer></answer>"));
        assert_eq!(p, renderer().distill(&t).unwrap());
    }

    #[test]
    fn downstream_prompt() {
        let s = state();
        let p = renderer().downstream(&s, &[]).unwrap();
        for a in ActionLabel::all() {
            assert!(p.contains(&format!("- {} (", a.name())), "{}", a.name());
        }
        assert!(p.contains("select 4 most probable actions"));
        assert_eq!(p, renderer().downstream(&s, &[]).unwrap());
        let two = renderer().downstream(&s, &[ActionLabel::RECALL]).unwrap();
        assert!(two.contains(ActionLabel::RECALL.name()));
    }

    #[test]
    fn long_prompts_are_rejected() {
        let r = PromptRenderer::new(TemplateSet::builtin(), 50);
        let err = r.forecast(&state(), ActionLabel::NONE, 10).unwrap_err();
        assert_eq!(err.max, 50);
        assert!(err.estimated > 50);
    }

    #[test]
    fn action_lists() {
        let a = ActionLabel::from_index(3).unwrap();
        let b = ActionLabel::from_index(20).unwrap();
        let json = format!("<think>maybe {}</think><answer>[\"{}\", \"{}\", \"bogus\"]</answer>", ActionLabel::RECALL.name(), a.name(), b.name());
        assert_eq!(parse_action_list(&json), [a, b]);
        let lines = format!("<answer>\n1. {}\n2. {} (x)\n3. {}\n</answer>", b.name(), a.name().to_lowercase(), b.name());
        assert_eq!(parse_action_list(&lines), [b, a]);
        assert!(parse_action_list("nothing").is_empty());
    }
}
