//! The Mining crafting template and the subgraph corpus drawn from it.
//!
//! Subtask letters follow the fixed catalog in [`MINING_SUBTASKS`]. The
//! precondition structure is a hand-authored crafting tree: raw materials
//! are leaves, tools gate mining of harder ores, and crafted items need
//! their ingredients.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{AndNode, Domain, Literal, SubtaskGraph, SubtaskSet, SubtaskSpec};
use crate::scalar::Scalar;
use crate::world::{Interaction, ObjectKind};

pub const MINING_CORPUS_SIZE: usize = 640;
pub const MINING_TRAIN_SPLIT: usize = 200;

/// Per-episode step budget range used for every Mining graph.
pub const MINING_STEP_BUDGET: (u32, u32) = (90, 110);

/// Letters that survive every subgraph draw.
pub const MINING_KEEP: [char; 10] = ['A', 'B', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L'];

/// One template entry: letter, name, interaction, target, reward, and the
/// precondition as a list of AND terms over letters.
pub struct MiningSubtask {
    pub letter: char,
    pub name: &'static str,
    pub interaction: Interaction,
    pub target: ObjectKind,
    pub reward: f64,
    pub precondition: &'static [&'static [char]],
}

use Interaction::{Pickup, Use};
use ObjectKind as K;

pub const MINING_SUBTASKS: [MiningSubtask; 26] = [
    MiningSubtask { letter: 'A', name: "get wood", interaction: Pickup, target: K::Tree, reward: 0.1, precondition: &[] },
    MiningSubtask { letter: 'B', name: "get stone", interaction: Pickup, target: K::Stone, reward: 0.1, precondition: &[] },
    MiningSubtask { letter: 'C', name: "get string", interaction: Pickup, target: K::Grass, reward: 0.1, precondition: &[] },
    MiningSubtask { letter: 'D', name: "make firewood", interaction: Use(1), target: K::LumberShop, reward: 0.1, precondition: &[&['A']] },
    MiningSubtask { letter: 'E', name: "get pork", interaction: Pickup, target: K::Pig, reward: 0.1, precondition: &[] },
    MiningSubtask { letter: 'F', name: "make stick", interaction: Use(2), target: K::LumberShop, reward: -0.1, precondition: &[&['A']] },
    MiningSubtask { letter: 'G', name: "get coal", interaction: Pickup, target: K::Coal, reward: 0.2, precondition: &[&['H']] },
    MiningSubtask { letter: 'H', name: "make stone pickaxe", interaction: Use(1), target: K::WorkSpace, reward: 0.3, precondition: &[&['B', 'F']] },
    MiningSubtask { letter: 'I', name: "get iron", interaction: Pickup, target: K::Iron, reward: 0.3, precondition: &[&['H']] },
    MiningSubtask { letter: 'J', name: "light furnace", interaction: Use(1), target: K::Furnace, reward: 0.2, precondition: &[&['D'], &['G']] },
    MiningSubtask { letter: 'K', name: "smelt iron", interaction: Use(2), target: K::Furnace, reward: 0.5, precondition: &[&['I', 'J']] },
    MiningSubtask { letter: 'L', name: "make iron pickaxe", interaction: Use(2), target: K::WorkSpace, reward: 0.7, precondition: &[&['F', 'K']] },
    MiningSubtask { letter: 'M', name: "get silver", interaction: Pickup, target: K::Silver, reward: 0.4, precondition: &[&['H']] },
    MiningSubtask { letter: 'N', name: "get gold", interaction: Pickup, target: K::Gold, reward: 0.8, precondition: &[&['L']] },
    MiningSubtask { letter: 'O', name: "get diamond", interaction: Pickup, target: K::Diamond, reward: 1.2, precondition: &[&['L']] },
    MiningSubtask { letter: 'P', name: "smelt silver", interaction: Use(3), target: K::Furnace, reward: 0.6, precondition: &[&['J', 'M']] },
    MiningSubtask { letter: 'Q', name: "smelt gold", interaction: Use(4), target: K::Furnace, reward: 1.0, precondition: &[&['J', 'N']] },
    MiningSubtask { letter: 'R', name: "make arrow", interaction: Use(3), target: K::LumberShop, reward: 0.3, precondition: &[&['B', 'F']] },
    MiningSubtask { letter: 'S', name: "make bow", interaction: Use(4), target: K::LumberShop, reward: 0.4, precondition: &[&['C', 'F']] },
    MiningSubtask { letter: 'T', name: "make silverware", interaction: Use(3), target: K::WorkSpace, reward: 1.0, precondition: &[&['P']] },
    MiningSubtask { letter: 'U', name: "make goldware", interaction: Use(4), target: K::WorkSpace, reward: 1.5, precondition: &[&['Q']] },
    MiningSubtask { letter: 'V', name: "make bracelet", interaction: Use(5), target: K::WorkSpace, reward: 1.2, precondition: &[&['C', 'P'], &['C', 'Q']] },
    MiningSubtask { letter: 'W', name: "make earrings", interaction: Use(1), target: K::JewelerShop, reward: 2.0, precondition: &[&['O', 'P']] },
    MiningSubtask { letter: 'X', name: "make ring", interaction: Use(2), target: K::JewelerShop, reward: 2.5, precondition: &[&['O', 'Q']] },
    MiningSubtask { letter: 'Y', name: "make necklace", interaction: Use(3), target: K::JewelerShop, reward: 1.8, precondition: &[&['C', 'O']] },
    MiningSubtask { letter: 'Z', name: "cook pork", interaction: Use(5), target: K::Furnace, reward: 0.4, precondition: &[&['E', 'J']] },
];

/// Catalog entry for a template letter.
pub fn mining_subtask(label: &str) -> Option<&'static MiningSubtask> {
    let mut chars = label.chars();
    let c = chars.next()?;
    if chars.next().is_some() {
        return None;
    }
    MINING_SUBTASKS.iter().find(|m| m.letter == c)
}

fn index_of(letter: char) -> usize {
    (letter as u8 - b'A') as usize
}

/// The full 26-subtask Mining graph.
pub fn mining_template<T: Scalar>() -> SubtaskGraph<T> {
    let mut layer = [0usize; 26];
    // Entries are listed so that a pass in dependency order is enough; loop
    // to a fixed point anyway.
    loop {
        let mut changed = false;
        for (i, m) in MINING_SUBTASKS.iter().enumerate() {
            for term in m.precondition {
                for &c in term.iter() {
                    let want = layer[index_of(c)] + 1;
                    if layer[i] < want {
                        layer[i] = want;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut and_nodes = Vec::new();
    let mut or_children = Vec::new();
    let mut subtasks = Vec::new();
    for (i, m) in MINING_SUBTASKS.iter().enumerate() {
        subtasks.push(SubtaskSpec {
            id: i,
            label: m.letter.to_string(),
            layer: layer[i],
            reward: T::lit(m.reward),
        });
        let mut ors = Vec::new();
        for term in m.precondition {
            let id = and_nodes.len();
            let mut children: Vec<Literal> = term.iter().map(|&c| Literal::pos(index_of(c))).collect();
            children.sort();
            and_nodes.push(AndNode { id, children });
            ors.push(id);
        }
        or_children.push(ors);
    }
    SubtaskGraph::with_domain(subtasks, and_nodes, or_children, MINING_STEP_BUDGET, Domain::Mining)
        .expect("mining template is well formed")
}

/// Every subtask set that can be reached from the template by repeatedly
/// deleting a subtask that no remaining subtask depends on, without ever
/// deleting a keep-set letter. Sorted by bit pattern.
pub fn mining_subsets<T: Scalar>(template: &SubtaskGraph<T>) -> Vec<SubtaskSet> {
    let n = template.n_subtasks();
    let keep: SubtaskSet = MINING_KEEP.iter().map(|&c| index_of(c)).collect();
    let support: Vec<SubtaskSet> = (0..n).map(|i| template.precondition_support(i)).collect();
    let closed = |s: SubtaskSet| s.iter().all(|i| support[i].0 & !s.0 == 0);

    // Smallest closed superset of the keep-set.
    let mut required = keep;
    loop {
        let mut next = required;
        for i in required.iter() {
            next.0 |= support[i].0;
        }
        if next == required {
            break;
        }
        required = next;
    }
    let optional: Vec<usize> = (0..n).filter(|&i| !required.contains(i)).collect();
    let mut out = Vec::new();
    for bits in 0u64..(1u64 << optional.len()) {
        let mut s = required;
        for (k, &i) in optional.iter().enumerate() {
            if bits >> k & 1 == 1 {
                s.insert(i);
            }
        }
        if closed(s) {
            out.push(s);
        }
    }
    out.sort();
    out
}

/// Draws the Mining corpus: up to [`MINING_CORPUS_SIZE`] distinct subgraphs,
/// each with rewards scaled per subtask by a factor in `[0.8, 1.2]`.
pub fn enumerate_mining_subgraphs<T: Scalar>(
    template: &SubtaskGraph<T>,
    rng: &mut impl Rng,
) -> Result<Vec<SubtaskGraph<T>>> {
    let mut subsets = mining_subsets(template);
    if subsets.is_empty() {
        return Err(Error::Generation("mining template admits no subgraph".into()));
    }
    subsets.shuffle(rng);
    subsets.truncate(MINING_CORPUS_SIZE);
    subsets
        .into_iter()
        .map(|s| {
            let g = template.restrict(s)?;
            let rewards: Vec<T> = g
                .subtasks()
                .iter()
                .map(|st| st.reward * T::lit(rng.gen_range(0.8..=1.2)))
                .collect();
            g.with_rewards(&rewards)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn template_shape() {
        let g = mining_template::<f64>();
        assert_eq!(g.n_subtasks(), 26);
        assert_eq!(g.domain(), Domain::Mining);
        // light furnace <= OR(firewood, coal)
        let j = index_of('J');
        assert_eq!(g.or_children(j).len(), 2);
        let with_firewood = SubtaskSet::from_iter([index_of('A'), index_of('D')]);
        assert!(g.eligibility(with_firewood).contains(j));
        assert!(g.reward(index_of('F')) < 0.0);
        assert!(g.n_layers() <= 10);
    }

    #[test]
    fn corpus_keeps_required_letters() {
        let t = mining_template::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corpus = enumerate_mining_subgraphs(&t, &mut rng).unwrap();
        assert_eq!(corpus.len(), MINING_CORPUS_SIZE);
        for g in &corpus {
            for c in MINING_KEEP {
                assert!(g.subtasks().iter().any(|s| s.label == c.to_string()), "missing {c}");
            }
            for s in g.subtasks() {
                let base = mining_subtask(&s.label).unwrap().reward;
                let ratio = s.reward / base;
                assert!((0.8 - 1e-12..=1.2 + 1e-12).contains(&ratio));
            }
        }
        let distinct: std::collections::HashSet<String> = corpus
            .iter()
            .map(|g| g.subtasks().iter().map(|s| s.label.as_str()).collect())
            .collect();
        assert_eq!(distinct.len(), corpus.len());
    }
}
