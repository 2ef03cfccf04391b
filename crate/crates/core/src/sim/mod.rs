//! Deterministic mini-MOBA used as the ground-truth transition function.
//!
//! Time advances in whole ticks. Every tick applies, in order: transient
//! resets, respawns and teammate movement, the primary hero's action, minion
//! pressure on towers, regeneration, and scripted ganks. Ganks depend only on
//! the configured seed, the match and the tick, so replaying a state with the
//! same action always yields the same successor.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::{ActionEffect, ActionLabel, REGISTRY_LEN};
use crate::diff::{difficulty, state_diff};
use crate::pipeline::{Provenance, WiaTriplet, MAX_GAP_S};
use crate::state::{
    hash_match_id, redact, DragonKind, DragonState, EntityId, GameState, HeroState, Lane, MinionWaveState, Region,
    Team, TowerSite, TowerState, DEFAULT_REDACTION_SALT,
};

/// Shipped rule table.
pub const BUILTIN_RULES: &str = include_str!("rules.toml");
/// sha256 of [`BUILTIN_RULES`].
pub const BUILTIN_RULES_SHA256: &str = "84f1c9fd338791e2239577b5e7ac3316040522792242a879d99c6264e02f3fc6";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub wave_period: i64,
    pub ally_push: [i64; 2],
    pub enemy_push: [i64; 2],
    pub respawn_period: i64,
    pub dragon_respawn_period: i64,
    pub gank_period: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpTable {
    pub hero: i64,
    pub lane_tower: i64,
    pub crystal: i64,
    pub lord: i64,
    pub tyrant: i64,
    pub dragon_king: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub minion_tower_dps: i64,
    pub hero_tower_dps: i64,
    pub tower_hero_dps: i64,
    pub hero_hero_dps: i64,
    pub enemy_hero_dps: i64,
    pub hero_dragon_dps: i64,
    pub dragon_hero_dps: i64,
    pub dragon_regen: i64,
    pub fountain_regen: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Economy {
    pub start_gold: i64,
    pub farm_gold: i64,
    pub kill_gold: i64,
    pub dragon_gold: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleTable {
    pub version: String,
    pub timing: Timing,
    pub hp: HpTable,
    pub rates: Rates,
    pub economy: Economy,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("rule table: {0}")]
    RuleTable(String),
    #[error("rule table checksum mismatch for {name}: expected {expected}, found {actual}")]
    ChecksumMismatch { name: String, expected: String, actual: String },
    #[error("action index {0} is not in the registry")]
    InvalidAction(usize),
    #[error("duration {dt}s is negative or not a multiple of the {tick_s}s tick")]
    InvalidDuration { dt: i64, tick_s: i64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("difficulty quota unreachable within {ticks} ticks; missing {missing:?}")]
    SearchBudgetExceeded { ticks: u64, missing: BTreeMap<u8, usize> },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RuleTable {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let t: RuleTable = toml::from_str(text).map_err(|e| SimError::RuleTable(e.to_string()))?;
        if t.timing.wave_period <= 0 || t.timing.respawn_period <= 0 || t.timing.dragon_respawn_period <= 0 || t.timing.gank_period == 0 {
            return Err(SimError::RuleTable("periods must be positive".into()));
        }
        Ok(t)
    }

    /// Parses `text` after checking it against a pinned checksum.
    pub fn from_pinned(name: &str, text: &str, sha256: &str) -> Result<Self, SimError> {
        let actual = sha256_hex(text.as_bytes());
        if actual != sha256 {
            return Err(SimError::ChecksumMismatch { name: name.into(), expected: sha256.into(), actual });
        }
        Self::from_toml(text)
    }

    pub fn builtin() -> Self {
        Self::from_pinned("rules.toml", BUILTIN_RULES, BUILTIN_RULES_SHA256).expect("shipped rule table is valid")
    }

    /// Seconds a recall needs from anywhere on the map.
    pub fn recall_duration(&self) -> i64 {
        2
    }

    fn tower_max_hp(&self, site: TowerSite) -> i64 {
        if site == TowerSite::Crystal {
            self.hp.crystal
        } else {
            self.hp.lane_tower
        }
    }

    fn dragon_max_hp(&self, kind: DragonKind) -> i64 {
        match kind {
            DragonKind::Lord => self.hp.lord,
            DragonKind::Tyrant => self.hp.tyrant,
            DragonKind::DragonKing => self.hp.dragon_king,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub team_size: u8,
    pub tick_s: i64,
    pub rule_table: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { seed: 0, team_size: 5, tick_s: 1, rule_table: "mini-moba/1".into() }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        SimConfig { seed, ..Default::default() }
    }
}

/// Named starting position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub template: GameState,
    pub difficulty_mix: BTreeMap<u8, f64>,
}

/// Which effect groups a step applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectMask {
    /// The primary hero's action, including teammates grouping with it.
    pub actor: bool,
    /// Respawns, walking home, minion pressure and regeneration.
    pub passive: bool,
    /// Seeded ganks.
    pub scripted: bool,
}

impl EffectMask {
    pub const ALL: EffectMask = EffectMask { actor: true, passive: true, scripted: true };
}

const ALLY_HOMES: [Region; 5] = [Region::MidLane, Region::TopLane, Region::BotLane, Region::AllyJungle, Region::RiverBot];
const ENEMY_HOMES: [Region; 5] = [Region::MidLane, Region::TopLane, Region::BotLane, Region::EnemyJungle, Region::RiverTop];

fn hero_slot(id: &EntityId) -> Option<(Team, usize)> {
    let s = id.as_str();
    let team = match s.as_bytes().first()? {
        b'a' => Team::Ally,
        b'e' => Team::Enemy,
        _ => return None,
    };
    let n: usize = s[1..].parse().ok()?;
    (1..=5).contains(&n).then_some((team, n - 1))
}

fn home_region(h: &HeroState) -> Region {
    match hero_slot(&h.hero_id) {
        Some((Team::Ally, i)) => ALLY_HOMES[i],
        Some((Team::Enemy, i)) => ENEMY_HOMES[i],
        None => base_region(h.team),
    }
}

fn base_region(team: Team) -> Region {
    match team {
        Team::Ally => Region::Fountain,
        Team::Enemy => Region::EnemyHighground,
    }
}

fn highground(team: Team) -> Region {
    match team {
        Team::Ally => Region::AllyHighground,
        Team::Enemy => Region::EnemyHighground,
    }
}

pub fn dragon_region(kind: DragonKind) -> Region {
    match kind {
        DragonKind::Lord | DragonKind::DragonKing => Region::RiverTop,
        DragonKind::Tyrant => Region::RiverBot,
    }
}

fn site_region(team: Team, site: TowerSite) -> Region {
    match site.lane() {
        Some(lane) => lane.region(),
        None => highground(team),
    }
}

fn tower_id(team: Team, site: TowerSite) -> String {
    format!("t-{}-{}", team_str(team), site_str(site))
}

fn team_str(team: Team) -> &'static str {
    match team {
        Team::Ally => "ally",
        Team::Enemy => "enemy",
    }
}

fn site_str(site: TowerSite) -> &'static str {
    match site {
        TowerSite::Top => "top",
        TowerSite::Mid => "mid",
        TowerSite::Bot => "bot",
        TowerSite::Crystal => "crystal",
    }
}

fn lane_str(lane: Lane) -> &'static str {
    site_str(lane.site())
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn damage(hp: &mut i64, amount: i64) {
    *hp = (*hp - amount).max(0);
}

fn heal(hp: &mut i64, max: i64, amount: i64) {
    *hp = (*hp + amount).min(max);
}

pub struct Simulator {
    pub cfg: SimConfig,
    pub rules: RuleTable,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        Self::with_rules(cfg, RuleTable::builtin())
    }

    pub fn with_rules(cfg: SimConfig, rules: RuleTable) -> Result<Self, SimError> {
        if !(1..=5).contains(&cfg.team_size) {
            return Err(SimError::InvalidConfig(format!("team_size {} outside 1..=5", cfg.team_size)));
        }
        if cfg.tick_s < 1 {
            return Err(SimError::InvalidConfig("tick_s must be positive".into()));
        }
        if cfg.rule_table != rules.version {
            return Err(SimError::InvalidConfig(format!(
                "config asks for rule table {} but {} is loaded",
                cfg.rule_table, rules.version
            )));
        }
        Ok(Simulator { cfg, rules })
    }

    /// Full-health symmetric start for `cfg.team_size` heroes per side.
    pub fn standard_scenario(&self) -> Scenario {
        let r = &self.rules;
        let mut heroes = Vec::new();
        for (team, homes, prefix) in [(Team::Ally, ALLY_HOMES, "a"), (Team::Enemy, ENEMY_HOMES, "e")] {
            for (i, home) in homes.iter().enumerate().take(self.cfg.team_size as usize) {
                heroes.push(HeroState {
                    hero_id: EntityId::new(format!("{prefix}{}", i + 1)),
                    team,
                    region: *home,
                    hp: r.hp.hero,
                    max_hp: r.hp.hero,
                    alive: true,
                    level: 1,
                    gold: r.economy.start_gold,
                });
            }
        }
        let mut towers = Vec::new();
        let mut minion_waves = Vec::new();
        for team in [Team::Ally, Team::Enemy] {
            for site in TowerSite::ALL {
                let max = r.tower_max_hp(site);
                towers.push(TowerState { tower_id: EntityId::new(tower_id(team, site)), team, site, hp: max, max_hp: max, attacking: false });
            }
            for lane in Lane::ALL {
                minion_waves.push(MinionWaveState {
                    wave_id: EntityId::new(format!("w-{}-{}", team_str(team), lane_str(lane))),
                    lane,
                    team,
                    zone: lane.region(),
                    in_enemy_turret_range: false,
                    clearing_heroes: BTreeSet::new(),
                });
            }
        }
        let dragons = DragonKind::ALL
            .iter()
            .map(|k| {
                let max = r.dragon_max_hp(*k);
                DragonState { kind: *k, hp: max, max_hp: max, alive: true, under_attack: false }
            })
            .collect();
        let template = GameState {
            match_id: format!("sim-{:016x}", self.cfg.seed),
            t: 0,
            primary_hero_id: EntityId::new("a1"),
            heroes,
            towers,
            minion_waves,
            dragons,
        }
        .canonical();
        let difficulty_mix = (1..=4u8).map(|d| (d, 0.25)).collect();
        Scenario { name: "standard".into(), template, difficulty_mix }
    }

    pub fn init_state(&self, sc: &Scenario) -> GameState {
        let mut s = sc.template.clone();
        s.t = 0;
        s.canonicalize();
        s
    }

    /// Like [`init_state`](Self::init_state) for a numbered match.
    pub fn init_match(&self, sc: &Scenario, index: u64) -> GameState {
        let mut s = self.init_state(sc);
        s.match_id = format!("sim-{:016x}-{index}", self.cfg.seed);
        s
    }

    pub fn step(&self, s: &GameState, a: ActionLabel, dt: i64) -> Result<GameState, SimError> {
        self.step_masked(s, a, dt, EffectMask::ALL)
    }

    pub fn step_masked(&self, s: &GameState, a: ActionLabel, dt: i64, mask: EffectMask) -> Result<GameState, SimError> {
        if a.index() >= REGISTRY_LEN {
            return Err(SimError::InvalidAction(a.index()));
        }
        if dt < 0 || dt % self.cfg.tick_s != 0 {
            return Err(SimError::InvalidDuration { dt, tick_s: self.cfg.tick_s });
        }
        let mut out = s.clone();
        let key = self.match_key(&s.match_id);
        for _ in 0..dt / self.cfg.tick_s {
            self.tick(&mut out, a, mask, key);
        }
        out.canonicalize();
        Ok(out)
    }

    fn match_key(&self, match_id: &str) -> u64 {
        let h = hash_match_id(match_id, DEFAULT_REDACTION_SALT);
        let m = u64::from_str_radix(&h, 16).unwrap_or(0);
        splitmix(self.cfg.seed ^ splitmix(m))
    }

    fn in_push(&self, team: Team, t: i64) -> bool {
        let tm = &self.rules.timing;
        let phase = t.rem_euclid(tm.wave_period);
        let [lo, hi] = match team {
            Team::Ally => tm.ally_push,
            Team::Enemy => tm.enemy_push,
        };
        lo <= phase && phase < hi
    }

    fn tick(&self, s: &mut GameState, a: ActionLabel, mask: EffectMask, key: u64) {
        let r = &self.rules;
        s.t += self.cfg.tick_s;
        let t = s.t;
        let primary = s.primary_hero_id.clone();

        for d in &mut s.dragons {
            d.under_attack = false;
        }
        for tw in &mut s.towers {
            tw.attacking = false;
        }
        for w in &mut s.minion_waves {
            w.clearing_heroes.remove(&primary);
        }

        if mask.passive {
            if t % r.timing.respawn_period == 0 {
                for h in s.heroes.iter_mut().filter(|h| !h.alive) {
                    h.alive = true;
                    h.hp = h.max_hp;
                    h.region = base_region(h.team);
                }
            }
            if t % r.timing.dragon_respawn_period == 0 {
                for d in s.dragons.iter_mut().filter(|d| !d.alive) {
                    d.alive = true;
                    d.hp = d.max_hp;
                }
            }
            for h in s.heroes.iter_mut().filter(|h| h.alive && h.hero_id != primary) {
                let home = home_region(h);
                if h.region != home && !(h.region == base_region(h.team) && h.hp < h.max_hp) {
                    h.region = home;
                }
            }
        }

        if mask.actor && s.primary().is_some_and(|p| p.alive) {
            self.act(s, a);
        }

        if mask.passive {
            self.minion_pressure(s, t);
            for h in s.heroes.iter_mut().filter(|h| h.alive && h.region == base_region(h.team)) {
                heal(&mut h.hp, h.max_hp, r.rates.fountain_regen);
            }
            for d in s.dragons.iter_mut().filter(|d| d.alive && !d.under_attack) {
                heal(&mut d.hp, d.max_hp, r.rates.dragon_regen);
            }
        }
        for i in 0..s.towers.len() {
            let (team, site) = (s.towers[i].team, s.towers[i].site);
            let pressed = s.minion_waves.iter().any(|w| w.in_enemy_turret_range && w.team != team && self.wave_target(s, w) == Some((team, site)));
            if pressed && s.towers[i].hp > 0 {
                s.towers[i].attacking = true;
            }
        }

        if mask.scripted {
            let h = splitmix(key ^ splitmix(t as u64));
            if h % r.timing.gank_period == 0 {
                let alive: Vec<usize> = (0..s.heroes.len()).filter(|i| s.heroes[*i].alive).collect();
                if !alive.is_empty() {
                    let victim = alive[((h / r.timing.gank_period) % alive.len() as u64) as usize];
                    kill(s, victim);
                }
            }
        }
    }

    /// Tower the wave pushes into: its lane tower, else the crystal.
    fn wave_target(&self, s: &GameState, w: &MinionWaveState) -> Option<(Team, TowerSite)> {
        let enemy = w.team.opponent();
        let lane_site = w.lane.site();
        if s.tower(enemy, lane_site).is_some_and(|t| t.hp > 0) {
            Some((enemy, lane_site))
        } else if s.tower(enemy, TowerSite::Crystal).is_some_and(|t| t.hp > 0) {
            Some((enemy, TowerSite::Crystal))
        } else {
            None
        }
    }

    fn minion_pressure(&self, s: &mut GameState, t: i64) {
        for i in 0..s.minion_waves.len() {
            let w = &s.minion_waves[i];
            let enemy = w.team.opponent();
            let lane_tower_up = s.tower(enemy, w.lane.site()).is_some_and(|t| t.hp > 0);
            let zone = if lane_tower_up { w.lane.region() } else { highground(enemy) };
            let target = self.wave_target(s, w);
            let in_range = self.in_push(w.team, t) && target.is_some() && w.clearing_heroes.is_empty();
            let w = &mut s.minion_waves[i];
            w.zone = zone;
            w.in_enemy_turret_range = in_range;
            if let (true, Some((team, site))) = (in_range, target) {
                if let Some(tw) = s.towers.iter_mut().find(|tw| tw.team == team && tw.site == site) {
                    damage(&mut tw.hp, self.rules.rates.minion_tower_dps);
                }
            }
        }
    }

    fn act(&self, s: &mut GameState, a: ActionLabel) {
        let r = &self.rules;
        let pi = s.heroes.iter().position(|h| h.hero_id == s.primary_hero_id).expect("validated state has a primary");
        let pid = s.primary_hero_id.clone();
        match a.effect() {
            ActionEffect::Idle => {}
            ActionEffect::AttackDragon(kind) => {
                s.heroes[pi].region = dragon_region(kind);
                if let Some(d) = s.dragons.iter_mut().find(|d| d.kind == kind && d.alive) {
                    damage(&mut d.hp, r.rates.hero_dragon_dps);
                    if d.hp == 0 {
                        d.alive = false;
                        s.heroes[pi].gold += r.economy.dragon_gold;
                    } else {
                        d.under_attack = true;
                        hurt(s, pi, r.rates.dragon_hero_dps);
                    }
                }
            }
            ActionEffect::AttackTower(site) => {
                s.heroes[pi].region = site_region(Team::Enemy, site);
                if let Some(tw) = s.towers.iter_mut().find(|t| t.team == Team::Enemy && t.site == site && t.hp > 0) {
                    damage(&mut tw.hp, r.rates.hero_tower_dps);
                    if tw.hp == 0 {
                        s.heroes[pi].gold += r.economy.kill_gold;
                    } else {
                        tw.attacking = true;
                        hurt(s, pi, r.rates.tower_hero_dps);
                    }
                }
            }
            ActionEffect::Defend(site) => {
                let region = site_region(Team::Ally, site);
                s.heroes[pi].region = region;
                for w in s.minion_waves.iter_mut().filter(|w| w.team == Team::Enemy && w.zone == region) {
                    if site.lane().is_none_or(|l| l == w.lane) {
                        w.clearing_heroes.insert(pid.clone());
                    }
                }
            }
            ActionEffect::FightIn(region) => {
                s.heroes[pi].region = region;
                let foes: Vec<usize> =
                    (0..s.heroes.len()).filter(|i| s.heroes[*i].team == Team::Enemy && s.heroes[*i].alive && s.heroes[*i].region == region).collect();
                for &f in &foes {
                    damage(&mut s.heroes[f].hp, r.rates.hero_hero_dps);
                    if s.heroes[f].hp == 0 {
                        kill(s, f);
                        let p = &mut s.heroes[pi];
                        p.gold += r.economy.kill_gold;
                        p.level = (p.level + 1).min(15);
                    }
                }
                hurt(s, pi, r.rates.enemy_hero_dps * foes.len() as i64);
            }
            ActionEffect::ClearMinions { region, lane } => {
                s.heroes[pi].region = region;
                let mut cleared = false;
                for w in s.minion_waves.iter_mut().filter(|w| w.team == Team::Enemy && w.lane == lane && w.zone == region) {
                    w.clearing_heroes.insert(pid.clone());
                    cleared = true;
                }
                if cleared {
                    s.heroes[pi].gold += r.economy.farm_gold;
                }
            }
            ActionEffect::Farm(region) => {
                s.heroes[pi].region = region;
                s.heroes[pi].gold += r.economy.farm_gold;
            }
            ActionEffect::GroupIn(region) => {
                for h in s.heroes.iter_mut().filter(|h| h.team == Team::Ally && h.alive) {
                    h.region = region;
                }
            }
            ActionEffect::Recall => {
                let p = &mut s.heroes[pi];
                p.region = match p.region {
                    Region::Fountain | Region::AllyHighground => Region::Fountain,
                    _ => Region::AllyHighground,
                };
            }
        }
    }

    /// Runs `policy` for `n_ticks` ticks, logging the action taken at each
    /// state. The last state carries the action the policy would take next.
    pub fn generate_trajectory(
        &self,
        start: GameState,
        policy: &mut dyn FnMut(&GameState) -> ActionLabel,
        n_ticks: usize,
    ) -> Vec<(GameState, ActionLabel)> {
        let mut out = Vec::with_capacity(n_ticks + 1);
        let mut s = start;
        for _ in 0..n_ticks {
            let a = policy(&s);
            let next = self.step(&s, a, self.cfg.tick_s).expect("registry actions and whole ticks are valid");
            out.push((s, a));
            s = next;
        }
        let a = policy(&s);
        out.push((s, a));
        out
    }
}

fn hurt(s: &mut GameState, i: usize, amount: i64) {
    damage(&mut s.heroes[i].hp, amount);
    if s.heroes[i].hp == 0 {
        kill(s, i);
    }
}

fn kill(s: &mut GameState, i: usize) {
    let h = &mut s.heroes[i];
    h.hp = 0;
    h.alive = false;
    let id = h.hero_id.clone();
    for w in &mut s.minion_waves {
        w.clearing_heroes.remove(&id);
    }
}

/// Random action script that holds each choice for a random stretch.
pub struct HoldingPolicy {
    rng: ChaCha8Rng,
    current: ActionLabel,
    left: i64,
    pub hold: (i64, i64),
}

impl HoldingPolicy {
    pub fn new(seed: u64) -> Self {
        HoldingPolicy { rng: ChaCha8Rng::seed_from_u64(seed), current: ActionLabel::NONE, left: 0, hold: (5, 30) }
    }

    pub fn next_action(&mut self) -> ActionLabel {
        if self.left <= 0 {
            self.current = random_action(&mut self.rng);
            self.left = self.rng.gen_range(self.hold.0..=self.hold.1);
        }
        self.left -= 1;
        self.current
    }
}

pub fn random_action(rng: &mut impl Rng) -> ActionLabel {
    ActionLabel::from_index(rng.gen_range(0..REGISTRY_LEN)).expect("index in range")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    /// Total ticks (rollouts plus probes) the search may spend.
    pub max_ticks: u64,
    /// Inclusive range of probe horizons.
    pub horizon: (i64, i64),
    /// Match length before a new rollout starts.
    pub match_len: i64,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions { max_ticks: 5_000_000, horizon: (5, MAX_GAP_S), match_len: 1200 }
    }
}

/// Collects exactly `counts[d]` triplets of each difficulty `d` by probing
/// random actions along random rollouts.
pub fn make_benchmark(sim: &Simulator, counts: &BTreeMap<u8, usize>, opts: &BenchmarkOptions) -> Result<Vec<WiaTriplet>, SimError> {
    if let Some(d) = counts.keys().find(|d| !(1..=4).contains(*d)) {
        return Err(SimError::InvalidConfig(format!("difficulty {d} outside 1..=4")));
    }
    let (lo, hi) = opts.horizon;
    if lo < 1 || hi > MAX_GAP_S || lo > hi {
        return Err(SimError::InvalidConfig(format!("horizon range {lo}..={hi} outside 1..={MAX_GAP_S}")));
    }
    let mut missing: BTreeMap<u8, usize> = counts.iter().filter(|(_, n)| **n > 0).map(|(d, n)| (*d, *n)).collect();
    let mut by_d: BTreeMap<u8, Vec<WiaTriplet>> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(sim.cfg.seed ^ 0x6265_6e63_686d_6b00));
    let sc = sim.standard_scenario();
    let mut ticks = 0u64;
    let mut match_index = 0u64;
    while !missing.is_empty() {
        let mut s = sim.init_match(&sc, match_index);
        let match_hash = hash_match_id(&s.match_id, DEFAULT_REDACTION_SALT);
        let mut roll = HoldingPolicy::new(rng.gen());
        let mut probe = 0u64;
        while s.t < opts.match_len && !missing.is_empty() {
            if ticks > opts.max_ticks {
                return Err(SimError::SearchBudgetExceeded { ticks, missing });
            }
            let gap = rng.gen_range(3..=15);
            for _ in 0..gap {
                s = sim.step(&s, roll.next_action(), sim.cfg.tick_s)?;
            }
            ticks += gap as u64;
            if !s.primary().is_some_and(|p| p.alive) {
                continue;
            }
            let a = random_action(&mut rng);
            let dt = rng.gen_range(lo..=hi);
            let next = sim.step(&s, a, dt)?;
            ticks += dt as u64;
            let delta = state_diff(&s, &next).expect("same match");
            let d = difficulty(&delta);
            if let Some(left) = missing.get_mut(&d) {
                by_d.entry(d).or_default().push(WiaTriplet {
                    state: redact(&s),
                    action: a,
                    delta,
                    horizon_s: dt,
                    provenance: Provenance { match_hash: match_hash.clone(), index: probe },
                });
                *left -= 1;
                if *left == 0 {
                    missing.remove(&d);
                }
            }
            probe += 1;
        }
        match_index += 1;
    }
    Ok(by_d.into_values().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(seed: u64) -> Simulator {
        Simulator::new(SimConfig::with_seed(seed)).unwrap()
    }

    fn act(name: &str) -> ActionLabel {
        ActionLabel::by_name(name).unwrap()
    }

    #[test]
    fn builtin_checksum_pinned() {
        assert_eq!(sha256_hex(BUILTIN_RULES.as_bytes()), BUILTIN_RULES_SHA256);
        let tampered = BUILTIN_RULES.replace("minion_tower_dps = 12", "minion_tower_dps = 13");
        match RuleTable::from_pinned("rules.toml", &tampered, BUILTIN_RULES_SHA256) {
            Err(SimError::ChecksumMismatch { name, .. }) => assert_eq!(name, "rules.toml"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn initial_state() {
        let sm = sim(1);
        let s = sm.init_state(&sm.standard_scenario());
        s.validate().unwrap();
        assert_eq!(s.t, 0);
        assert_eq!(s.towers.len(), 8);
        assert!(s.towers.iter().all(|t| t.hp == t.max_hp));
        assert_eq!(s.heroes.len(), 10);
        assert!(s.heroes.iter().all(|h| h.alive));
        assert_eq!(s, sim(1).init_state(&sim(1).standard_scenario()));

        let small = Simulator::new(SimConfig { team_size: 2, ..SimConfig::default() }).unwrap();
        assert_eq!(small.standard_scenario().template.heroes.len(), 4);
        assert!(Simulator::new(SimConfig { team_size: 0, ..SimConfig::default() }).is_err());
    }

    #[test]
    fn zero_duration_is_identity() {
        let sm = sim(2);
        let s = sm.init_state(&sm.standard_scenario());
        for a in ActionLabel::all() {
            assert_eq!(sm.step(&s, a, 0).unwrap(), s);
        }
        assert!(sm.step(&s, ActionLabel::NONE, -1).is_err());
    }

    #[test]
    fn recall_reaches_fountain() {
        let sm = sim(3);
        let mut s = sm.init_state(&sm.standard_scenario());
        s.t = 20;
        let out = sm.step_masked(&s, ActionLabel::RECALL, sm.rules.recall_duration(), EffectMask { scripted: false, ..EffectMask::ALL }).unwrap();
        assert_eq!(out.primary().unwrap().region, Region::Fountain);
        let out = sm.step(&s, ActionLabel::RECALL, 1).unwrap();
        assert_eq!(out.primary().unwrap().region, Region::AllyHighground);
    }

    #[test]
    fn tyrant_attack_rate() {
        let sm = sim(4);
        let s = sm.init_state(&sm.standard_scenario());
        let mask = EffectMask { scripted: false, ..EffectMask::ALL };
        let out = sm.step_masked(&s, act("Tyrant"), 10, mask).unwrap();
        let d = out.dragon(DragonKind::Tyrant).unwrap();
        assert!(d.under_attack);
        assert_eq!(d.hp, sm.rules.hp.tyrant - 10 * sm.rules.rates.hero_dragon_dps);
        assert_eq!(out.primary().unwrap().region, Region::RiverBot);
    }

    #[test]
    fn steps_compose() {
        let sm = sim(5);
        let s = sm.init_state(&sm.standard_scenario());
        for a in [act("Mid Tower"), act("Recall"), act("Top Grouping"), act("Defend Bot Tower")] {
            let whole = sm.step(&s, a, 37).unwrap();
            let parts = sm.step(&sm.step(&s, a, 12).unwrap(), a, 25).unwrap();
            assert_eq!(whole, parts);
        }
    }

    #[test]
    fn towers_erode_but_never_heal() {
        let sm = sim(6);
        let mut s = sm.init_state(&sm.standard_scenario());
        let mut last: BTreeMap<String, i64> = BTreeMap::new();
        let mut policy = HoldingPolicy::new(9);
        for _ in 0..900 {
            s = sm.step(&s, policy.next_action(), 1).unwrap();
            s.validate().unwrap();
            for t in &s.towers {
                let prev = last.insert(t.tower_id.0.clone(), t.hp).unwrap_or(t.max_hp);
                assert!(t.hp <= prev, "{} regained hp", t.tower_id);
            }
        }
        assert!(s.towers.iter().any(|t| t.hp < t.max_hp));
    }

    #[test]
    fn trajectory_replays() {
        let sm = sim(7);
        let start = sm.init_state(&sm.standard_scenario());
        let mut p = HoldingPolicy::new(1);
        let traj = sm.generate_trajectory(start.clone(), &mut |_| p.next_action(), 120);
        assert_eq!(traj.len(), 121);
        for w in traj.windows(2) {
            assert_eq!(sm.step(&w[0].0, w[0].1, 1).unwrap(), w[1].0);
        }
        let mut p = HoldingPolicy::new(1);
        assert_eq!(sm.generate_trajectory(start.clone(), &mut |_| p.next_action(), 0).len(), 1);
    }

    #[test]
    fn seeds_diverge_after_first_gank() {
        let (a, b) = (sim(10), sim(11));
        let mut sa = a.init_state(&a.standard_scenario());
        let mut sb = sb_from(&b);
        sb.match_id = sa.match_id.clone();
        let mut diverged = false;
        for _ in 0..300 {
            sa = a.step(&sa, ActionLabel::NONE, 1).unwrap();
            sb = b.step(&sb, ActionLabel::NONE, 1).unwrap();
            if sa != sb {
                diverged = true;
                break;
            }
        }
        assert!(diverged);
    }

    fn sb_from(sm: &Simulator) -> GameState {
        sm.init_state(&sm.standard_scenario())
    }

    #[test]
    fn benchmark_quota_and_oracle() {
        let sm = sim(12);
        let counts: BTreeMap<u8, usize> = [(1, 3), (2, 3), (3, 3), (4, 3)].into();
        let bench = make_benchmark(&sm, &counts, &BenchmarkOptions::default()).unwrap();
        assert_eq!(bench.len(), 12);
        for d in 1..=4u8 {
            assert_eq!(bench.iter().filter(|t| t.difficulty() == d).count(), 3);
        }
        for t in &bench {
            let next = sm.step(&t.state, t.action, t.horizon_s).unwrap();
            assert_eq!(state_diff(&t.state, &next).unwrap(), t.delta);
        }
        let again = make_benchmark(&sm, &counts, &BenchmarkOptions::default()).unwrap();
        assert_eq!(bench, again);
        let tiny = BenchmarkOptions { max_ticks: 10, ..Default::default() };
        assert!(matches!(make_benchmark(&sm, &counts, &tiny), Err(SimError::SearchBudgetExceeded { .. })));
    }
}
