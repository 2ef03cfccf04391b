//! Strategic action registry.
//!
//! The registry is a fixed, ordered table of 44 `(category, name)` pairs. Its
//! order is significant: it is the tie-break order used by the downstream
//! action selector and the index order used by the simulator.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::state::{Region, TowerSite};

/// The ten action categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionCategory {
    None,
    Dragon,
    Tower,
    Defense,
    Hero,
    Line,
    Buff,
    Jungle,
    Grouping,
    Recall,
}

impl ActionCategory {
    pub const ALL: [ActionCategory; 10] = [
        ActionCategory::None,
        ActionCategory::Dragon,
        ActionCategory::Tower,
        ActionCategory::Defense,
        ActionCategory::Hero,
        ActionCategory::Line,
        ActionCategory::Buff,
        ActionCategory::Jungle,
        ActionCategory::Grouping,
        ActionCategory::Recall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionCategory::None => "None",
            ActionCategory::Dragon => "Dragon",
            ActionCategory::Tower => "Tower",
            ActionCategory::Defense => "Defense",
            ActionCategory::Hero => "Hero",
            ActionCategory::Line => "Line",
            ActionCategory::Buff => "Buff",
            ActionCategory::Jungle => "Jungle",
            ActionCategory::Grouping => "Grouping",
            ActionCategory::Recall => "Recall",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ActionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the primary hero does in the simulator while the action is held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionEffect {
    Idle,
    AttackDragon(crate::state::DragonKind),
    AttackTower(TowerSite),
    Defend(TowerSite),
    FightIn(Region),
    ClearMinions { region: Region, lane: crate::state::Lane },
    Farm(Region),
    GroupIn(Region),
    Recall,
}

struct Entry {
    category: ActionCategory,
    name: &'static str,
    explanation: &'static str,
    effect: ActionEffect,
}

macro_rules! entry {
    ($cat:ident, $name:expr, $expl:expr, $eff:expr) => {
        Entry { category: ActionCategory::$cat, name: $name, explanation: $expl, effect: $eff }
    };
}

use crate::state::{DragonKind as Dk, Lane as Ln, Region as Rg, TowerSite as Ts};
use ActionEffect as Ef;

static REGISTRY: [Entry; 44] = [
    entry!(None, "None", "No action triggered for a short period", Ef::Idle),
    entry!(Dragon, "Lord", "Deal damage to the Lord (Main Dragon)", Ef::AttackDragon(Dk::Lord)),
    entry!(Dragon, "Tyrant", "Deal damage to the Tyrant (Early Game Dragon)", Ef::AttackDragon(Dk::Tyrant)),
    entry!(Dragon, "Dragon King", "Deal damage to the Dragon King (Late Game Dragon)", Ef::AttackDragon(Dk::DragonKing)),
    entry!(Tower, "Crystal", "Deal damage to enemy Crystal (Nexus)", Ef::AttackTower(Ts::Crystal)),
    entry!(Tower, "Top Tower", "Deal damage to Top Lane Tower", Ef::AttackTower(Ts::Top)),
    entry!(Tower, "Mid Tower", "Deal damage to Mid Lane Tower", Ef::AttackTower(Ts::Mid)),
    entry!(Tower, "Bot Tower", "Deal damage to Bottom Lane Tower", Ef::AttackTower(Ts::Bot)),
    entry!(Defense, "Defend Crystal", "Defend our Crystal", Ef::Defend(Ts::Crystal)),
    entry!(Defense, "Defend Top Tower", "Defend Top Lane Tower", Ef::Defend(Ts::Top)),
    entry!(Defense, "Defend Mid Tower", "Defend Mid Lane Tower", Ef::Defend(Ts::Mid)),
    entry!(Defense, "Defend Bot Tower", "Defend Bottom Lane Tower", Ef::Defend(Ts::Bot)),
    entry!(Hero, "Top Hero", "Damage enemy heroes in Top Lane", Ef::FightIn(Rg::TopLane)),
    entry!(Hero, "Mid Hero", "Damage enemy heroes in Mid Lane", Ef::FightIn(Rg::MidLane)),
    entry!(Hero, "Bot Hero", "Damage enemy heroes in Bottom Lane", Ef::FightIn(Rg::BotLane)),
    entry!(Hero, "River Top Hero", "Damage enemies in Upper River (including dragon pit)", Ef::FightIn(Rg::RiverTop)),
    entry!(Hero, "River Bot Hero", "Damage enemies in Lower River", Ef::FightIn(Rg::RiverBot)),
    entry!(Hero, "Allied Jungle Hero", "Damage enemies in our Jungle", Ef::FightIn(Rg::AllyJungle)),
    entry!(Hero, "Enemy Jungle Hero", "Damage enemies in opponent's Jungle", Ef::FightIn(Rg::EnemyJungle)),
    entry!(Hero, "Ally High-ground Hero", "Damage enemies on our High-ground", Ef::FightIn(Rg::AllyHighground)),
    entry!(Hero, "Enemy High-ground Hero", "Damage enemies on enemy High-ground", Ef::FightIn(Rg::EnemyHighground)),
    entry!(Line, "Top Minions", "Clear Top Lane minions", Ef::ClearMinions { region: Rg::TopLane, lane: Ln::Top }),
    entry!(Line, "Mid Minions", "Clear Mid Lane minions (including super minions)", Ef::ClearMinions { region: Rg::MidLane, lane: Ln::Mid }),
    entry!(Line, "Bot Minions", "Clear Bottom Lane minions", Ef::ClearMinions { region: Rg::BotLane, lane: Ln::Bot }),
    entry!(Line, "Ally High-ground Minions", "Clear minions on our High-ground", Ef::ClearMinions { region: Rg::AllyHighground, lane: Ln::Mid }),
    entry!(Line, "Enemy High-ground Minions", "Clear minions on enemy High-ground", Ef::ClearMinions { region: Rg::EnemyHighground, lane: Ln::Mid }),
    entry!(Buff, "Allied Red", "Take our Red Buff", Ef::Farm(Rg::AllyJungle)),
    entry!(Buff, "Enemy Red", "Steal enemy Red Buff", Ef::Farm(Rg::EnemyJungle)),
    entry!(Buff, "Allied Blue", "Take our Blue Buff", Ef::Farm(Rg::AllyJungle)),
    entry!(Buff, "Enemy Blue", "Steal enemy Blue Buff", Ef::Farm(Rg::EnemyJungle)),
    entry!(Jungle, "Allied Camps", "Clear our Jungle camps (non-buff)", Ef::Farm(Rg::AllyJungle)),
    entry!(Jungle, "Enemy Camps", "Invade enemy Jungle camps", Ef::Farm(Rg::EnemyJungle)),
    entry!(Jungle, "Void Spirit (Top Crab)", "Kill Void Spirit (River objective)", Ef::Farm(Rg::RiverTop)),
    entry!(Jungle, "Crimson Raptor (Bot Crab)", "Kill Crimson Raptor (River objective)", Ef::Farm(Rg::RiverBot)),
    entry!(Grouping, "Top Grouping", "Group in Top Lane", Ef::GroupIn(Rg::TopLane)),
    entry!(Grouping, "Mid Grouping", "Group in Mid Lane", Ef::GroupIn(Rg::MidLane)),
    entry!(Grouping, "Bot Grouping", "Group in Bottom Lane", Ef::GroupIn(Rg::BotLane)),
    entry!(Grouping, "River Top Grouping", "Group in Upper River", Ef::GroupIn(Rg::RiverTop)),
    entry!(Grouping, "River Bot Grouping", "Group in Lower River", Ef::GroupIn(Rg::RiverBot)),
    entry!(Grouping, "Allied Jungle Group", "Group in our Jungle", Ef::GroupIn(Rg::AllyJungle)),
    entry!(Grouping, "Enemy Jungle Group", "Group in enemy Jungle", Ef::GroupIn(Rg::EnemyJungle)),
    entry!(Grouping, "Ally High-ground Group", "Group on our High-ground", Ef::GroupIn(Rg::AllyHighground)),
    entry!(Grouping, "Enemy High-ground Group", "Group on enemy High-ground", Ef::GroupIn(Rg::EnemyHighground)),
    entry!(Recall, "Recall", "Hero at fountain (including walk-back)", Ef::Recall),
];

/// Number of actions in the registry.
pub const REGISTRY_LEN: usize = 44;

/// One entry of the action registry, stored as its registry index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionLabel(u8);

impl ActionLabel {
    pub const NONE: ActionLabel = ActionLabel(0);
    pub const RECALL: ActionLabel = ActionLabel(43);

    pub fn from_index(index: usize) -> Option<Self> {
        (index < REGISTRY_LEN).then_some(ActionLabel(index as u8))
    }

    /// Looks up a `(category, name)` pair. Both must match the registry exactly.
    pub fn lookup(category: &str, name: &str) -> Option<Self> {
        REGISTRY
            .iter()
            .position(|e| e.category.as_str() == category && e.name == name)
            .map(|i| ActionLabel(i as u8))
    }

    /// Looks up an action by name alone; names are unique across categories.
    pub fn by_name(name: &str) -> Option<Self> {
        REGISTRY.iter().position(|e| e.name == name).map(|i| ActionLabel(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn category(self) -> ActionCategory {
        REGISTRY[self.index()].category
    }

    pub fn name(self) -> &'static str {
        REGISTRY[self.index()].name
    }

    pub fn explanation(self) -> &'static str {
        REGISTRY[self.index()].explanation
    }

    pub fn effect(self) -> ActionEffect {
        REGISTRY[self.index()].effect
    }

    pub fn is_none(self) -> bool {
        self == Self::NONE
    }

    /// All actions in registry order.
    pub fn all() -> impl Iterator<Item = ActionLabel> + Clone {
        (0..REGISTRY_LEN as u8).map(ActionLabel)
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionDoc<'a> {
    category: std::borrow::Cow<'a, str>,
    name: std::borrow::Cow<'a, str>,
}

impl Serialize for ActionLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        ActionDoc { category: self.category().as_str().into(), name: self.name().into() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ActionLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = ActionDoc::deserialize(deserializer)?;
        ActionLabel::lookup(&doc.category, &doc.name).ok_or_else(|| {
            D::Error::custom(format!("unknown action ({}, {})", doc.category, doc.name))
        })
    }
}
