//! Gridworld environments: typed object maps, scripted options with spatial
//! cost, and the episode loop.

mod env;
mod map;

pub use env::{
    execute_option, run_episode, run_in_world, EpisodeConfig, EpisodeRecord, FrozenModel, FrozenState, GridWorld,
    OptionOutcome, Policy, StepRecord,
};
pub use map::{sample_map, step_objects, Cell, DistTable, MapGeometry, MapSpec, Object};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::mining_subtask;
use crate::graph::{Domain, SubtaskGraph, SubtaskId};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectKind {
    Cow,
    Milk,
    Duck,
    Egg,
    Diamond,
    Heart,
    Box,
    Meat,
    Block,
    Ice,
    Mountain,
    Water,
    WorkSpace,
    Furnace,
    Tree,
    Stone,
    Grass,
    Pig,
    Coal,
    Iron,
    Silver,
    Gold,
    JewelerShop,
    LumberShop,
}

impl ObjectKind {
    /// The agent can never stand on these.
    pub fn is_impassable(self) -> bool {
        matches!(self, ObjectKind::Block | ObjectKind::Mountain | ObjectKind::Water)
    }

    /// Probability of a random cardinal move per step.
    pub fn move_prob(self) -> f64 {
        match self {
            ObjectKind::Cow => 0.1,
            ObjectKind::Duck => 0.2,
            _ => 0.0,
        }
    }

    pub fn ascii(self) -> char {
        use ObjectKind::*;
        match self {
            Cow => 'c',
            Milk => 'm',
            Duck => 'd',
            Egg => 'e',
            Diamond => '*',
            Heart => 'h',
            Box => 'b',
            Meat => 'M',
            Block => '#',
            Ice => 'i',
            Mountain => '^',
            Water => '~',
            WorkSpace => 'W',
            Furnace => 'F',
            Tree => 'T',
            Stone => 's',
            Grass => 'g',
            Pig => 'p',
            Coal => 'o',
            Iron => 'I',
            Silver => 'S',
            Gold => 'G',
            JewelerShop => 'J',
            LumberShop => 'L',
        }
    }
}

/// Interactive object types of the Playground domain, in option order.
pub const PLAYGROUND_OBJECTS: [ObjectKind; 8] = [
    ObjectKind::Cow,
    ObjectKind::Milk,
    ObjectKind::Duck,
    ObjectKind::Egg,
    ObjectKind::Diamond,
    ObjectKind::Heart,
    ObjectKind::Box,
    ObjectKind::Meat,
];

/// Crafting stations always present on Mining maps.
pub const MINING_STATIONS: [ObjectKind; 4] =
    [ObjectKind::WorkSpace, ObjectKind::Furnace, ObjectKind::LumberShop, ObjectKind::JewelerShop];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Interaction {
    Pickup,
    Transform,
    Use(u8),
}

impl Interaction {
    /// Whether the primitive consumes the target instance.
    pub fn consumes(self) -> bool {
        matches!(self, Interaction::Pickup | Interaction::Transform)
    }
}

/// A scripted option: walk to the nearest instance of `target`, then
/// perform `interaction` on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OptionSpec {
    pub interaction: Interaction,
    pub target: ObjectKind,
}

/// Playground subtask `i` maps to pickup of object `i` for the first eight
/// ids and to transform of object `i - 8` for the next eight.
pub fn playground_option(i: SubtaskId) -> Option<OptionSpec> {
    let k = PLAYGROUND_OBJECTS.len();
    let interaction = match i / k {
        0 => Interaction::Pickup,
        1 => Interaction::Transform,
        _ => return None,
    };
    Some(OptionSpec { interaction, target: PLAYGROUND_OBJECTS[i % k] })
}

/// Option table for every subtask of `graph`.
pub fn option_catalog<T: Scalar>(graph: &SubtaskGraph<T>) -> Result<Vec<OptionSpec>> {
    match graph.domain() {
        Domain::Playground => (0..graph.n_subtasks())
            .map(|i| {
                playground_option(i).ok_or_else(|| {
                    Error::Config(format!(
                        "Playground supports at most {} subtasks, graph has {}",
                        2 * PLAYGROUND_OBJECTS.len(),
                        graph.n_subtasks()
                    ))
                })
            })
            .collect(),
        Domain::Mining => graph
            .subtasks()
            .iter()
            .map(|s| {
                mining_subtask(&s.label)
                    .map(|m| OptionSpec { interaction: m.interaction, target: m.target })
                    .ok_or_else(|| Error::Config(format!("no Mining subtask labelled `{}`", s.label)))
            })
            .collect(),
    }
}
