//! Procedural subtask-graph generation.
//!
//! Playground graphs are layered: layer 0 holds leaf subtasks, and each
//! higher layer draws a pool of AND nodes over the regular subtasks of the
//! layer immediately below. Every regular subtask above layer 0 takes a
//! disjunction over part of that pool. Distractors have no precondition and
//! only ever appear as NOT children of AND nodes one layer up.

pub mod mining;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AndNode, Literal, SubtaskGraph, SubtaskSpec};
use crate::scalar::Scalar;

pub use mining::{
    enumerate_mining_subgraphs, mining_subsets, mining_subtask, mining_template, MiningSubtask, MINING_CORPUS_SIZE,
    MINING_KEEP, MINING_STEP_BUDGET, MINING_SUBTASKS, MINING_TRAIN_SPLIT,
};

/// Inclusive integer range.
pub type CountRange = (usize, usize);

/// Number of times a duplicated AND node is redrawn before giving up.
pub const DEFAULT_DEDUP_RETRIES: usize = 100;

/// Parameters of the layered generator. Per-layer lists with `L` entries are
/// indexed by layer; lists with `L - 1` entries are indexed by `layer - 1`
/// and describe the edges from layer `layer - 1` into `layer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams<T> {
    /// Subtasks per layer, distractors included.
    pub n_tasks_per_layer: Vec<usize>,
    pub n_distractors_per_layer: Vec<usize>,
    pub n_and_per_layer: Vec<CountRange>,
    pub n_and_children_pos: Vec<CountRange>,
    pub n_and_children_neg: Vec<CountRange>,
    pub n_distractor_neg_parents: Vec<CountRange>,
    pub n_or_children: Vec<CountRange>,
    pub reward_per_layer: Vec<(T, T)>,
    pub step_budget_range: (u32, u32),
    pub seed: u64,
}

impl<T: Scalar> GenParams<T> {
    pub fn n_layers(&self) -> usize {
        self.n_tasks_per_layer.len()
    }

    pub fn n_subtasks(&self) -> usize {
        self.n_tasks_per_layer.iter().sum()
    }

    fn regular(&self, layer: usize) -> usize {
        self.n_tasks_per_layer[layer] - self.n_distractors_per_layer[layer]
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.n_layers();
        let bad = |m: String| Err(Error::Generation(m));
        if l == 0 {
            return bad("no layers".into());
        }
        let edge_lists = [
            ("n_and_per_layer", &self.n_and_per_layer),
            ("n_and_children_pos", &self.n_and_children_pos),
            ("n_and_children_neg", &self.n_and_children_neg),
            ("n_or_children", &self.n_or_children),
        ];
        if self.n_distractors_per_layer.len() != l || self.reward_per_layer.len() != l {
            return bad("n_distractors_per_layer and reward_per_layer need one entry per layer".into());
        }
        if self.n_distractor_neg_parents.len() != l {
            return bad("n_distractor_neg_parents needs one entry per layer".into());
        }
        for (name, v) in edge_lists {
            if v.len() != l - 1 {
                return bad(format!("{name} needs {} entries, got {}", l - 1, v.len()));
            }
        }
        let all_ranges = edge_lists
            .iter()
            .flat_map(|(n, v)| v.iter().map(move |r| (*n, r)))
            .chain(self.n_distractor_neg_parents.iter().map(|r| ("n_distractor_neg_parents", r)));
        for (name, &(lo, hi)) in all_ranges {
            if lo > hi {
                return bad(format!("{name} has empty range {lo}..={hi}"));
            }
        }
        for (i, &(lo, hi)) in self.reward_per_layer.iter().enumerate() {
            if !(lo <= hi) {
                return bad(format!("reward range of layer {i} is empty"));
            }
        }
        if self.step_budget_range.0 > self.step_budget_range.1 {
            return bad("step budget range is empty".into());
        }
        if self.n_subtasks() > crate::graph::MAX_SUBTASKS {
            return bad(format!("{} subtasks exceeds the graph limit", self.n_subtasks()));
        }
        for layer in 0..l {
            if self.n_distractors_per_layer[layer] > self.n_tasks_per_layer[layer] {
                return bad(format!("layer {layer} has more distractors than subtasks"));
            }
        }
        for layer in 1..l {
            if self.regular(layer) == 0 {
                continue;
            }
            let src = self.regular(layer - 1);
            let (pos_lo, _) = self.n_and_children_pos[layer - 1];
            let (neg_lo, _) = self.n_and_children_neg[layer - 1];
            if src == 0 {
                return bad(format!("layer {layer} has regular subtasks but layer {} has none", layer - 1));
            }
            if pos_lo + neg_lo > src {
                return bad(format!(
                    "AND nodes of layer {layer} need at least {} children but layer {} has {src} regular subtasks",
                    pos_lo + neg_lo,
                    layer - 1
                ));
            }
            if self.n_and_per_layer[layer - 1].1 == 0 {
                return bad(format!("layer {layer} has regular subtasks but no AND nodes"));
            }
            if self.n_or_children[layer - 1].1 == 0 {
                return bad(format!("layer {layer} subtasks take no AND nodes"));
            }
        }
        Ok(())
    }
}

/// Named parameter blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    D1,
    D2,
    D3,
    D4,
    Base,
    BaseMinusOr,
    BaseDistractor,
    BaseNot,
    BaseNegDistractor,
    BaseDelayed,
}

impl Preset {
    pub const ALL: [Preset; 10] = [
        Preset::D1,
        Preset::D2,
        Preset::D3,
        Preset::D4,
        Preset::Base,
        Preset::BaseMinusOr,
        Preset::BaseDistractor,
        Preset::BaseNot,
        Preset::BaseNegDistractor,
        Preset::BaseDelayed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::D1 => "D1",
            Preset::D2 => "D2",
            Preset::D3 => "D3",
            Preset::D4 => "D4",
            Preset::Base => "Base",
            Preset::BaseMinusOr => "Base-OR",
            Preset::BaseDistractor => "Base+Distractor",
            Preset::BaseNot => "Base+NOT",
            Preset::BaseNegDistractor => "Base+NegDistractor",
            Preset::BaseDelayed => "Base+Delayed",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

fn ranges(lo: &[usize], hi: &[usize]) -> Vec<CountRange> {
    lo.iter().copied().zip(hi.iter().copied()).collect()
}

fn reward_ranges<T: Scalar>(lo: &[f64], hi: &[f64]) -> Vec<(T, T)> {
    lo.iter().zip(hi).map(|(&a, &b)| (T::lit(a), T::lit(b))).collect()
}

/// Looks up a preset by name (`D1`..`D4`, `Base`, `Base-OR`, ...).
pub fn preset<T: Scalar>(name: &str) -> Result<GenParams<T>> {
    Ok(preset_params(name.parse()?))
}

pub fn preset_params<T: Scalar>(p: Preset) -> GenParams<T> {
    match p {
        Preset::D1 => GenParams {
            n_tasks_per_layer: vec![6, 4, 2, 1],
            n_distractors_per_layer: vec![2, 1, 0, 0],
            n_and_per_layer: ranges(&[3, 3, 2], &[5, 4, 2]),
            n_and_children_pos: ranges(&[1, 1, 1], &[3, 3, 3]),
            n_and_children_neg: ranges(&[0, 0, 0], &[2, 2, 1]),
            n_distractor_neg_parents: ranges(&[0, 0, 0, 0], &[3, 3, 0, 0]),
            n_or_children: ranges(&[1, 1, 1], &[2, 2, 2]),
            reward_per_layer: reward_ranges(&[0.1, 0.3, 0.7, 1.8], &[0.2, 0.4, 0.9, 2.0]),
            step_budget_range: (48, 72),
            seed: 0,
        },
        Preset::D2 => GenParams {
            n_tasks_per_layer: vec![7, 5, 2, 1],
            n_distractors_per_layer: vec![2, 2, 0, 0],
            n_and_per_layer: ranges(&[4, 3, 2], &[5, 4, 2]),
            n_and_children_pos: ranges(&[1, 1, 1], &[3, 3, 3]),
            n_and_children_neg: ranges(&[0, 0, 0], &[2, 2, 1]),
            n_distractor_neg_parents: ranges(&[0, 0, 0, 0], &[3, 3, 0, 0]),
            n_or_children: ranges(&[1, 1, 1], &[2, 2, 2]),
            reward_per_layer: reward_ranges(&[0.1, 0.3, 0.7, 1.8], &[0.2, 0.4, 0.9, 2.0]),
            step_budget_range: (52, 78),
            seed: 0,
        },
        Preset::D3 => GenParams {
            n_tasks_per_layer: vec![5, 4, 4, 2, 1],
            n_distractors_per_layer: vec![1, 1, 1, 0, 0],
            n_and_per_layer: ranges(&[3, 3, 3, 2], &[5, 4, 4, 2]),
            n_and_children_pos: ranges(&[1, 1, 1, 1], &[3, 3, 3, 3]),
            n_and_children_neg: ranges(&[0, 0, 0, 0], &[2, 2, 1, 1]),
            n_distractor_neg_parents: ranges(&[0, 0, 0, 0, 0], &[3, 3, 3, 0, 0]),
            n_or_children: ranges(&[1, 1, 1, 1], &[2, 2, 2, 2]),
            reward_per_layer: reward_ranges(&[0.1, 0.3, 0.6, 1.0, 2.0], &[0.2, 0.4, 0.7, 1.2, 2.2]),
            step_budget_range: (56, 84),
            seed: 0,
        },
        Preset::D4 => GenParams {
            n_tasks_per_layer: vec![4, 3, 3, 3, 2, 1],
            n_distractors_per_layer: vec![0, 0, 0, 0, 0, 0],
            n_and_per_layer: ranges(&[3, 3, 3, 3, 2], &[5, 4, 4, 4, 2]),
            n_and_children_pos: ranges(&[1, 1, 1, 1, 1], &[3, 3, 3, 3, 3]),
            n_and_children_neg: ranges(&[0, 0, 0, 0, 0], &[2, 2, 1, 1, 0]),
            n_distractor_neg_parents: ranges(&[0; 6], &[0; 6]),
            n_or_children: ranges(&[1, 1, 1, 1, 1], &[2, 2, 2, 2, 2]),
            reward_per_layer: reward_ranges(
                &[0.1, 0.3, 0.6, 1.0, 1.4, 2.4],
                &[0.2, 0.4, 0.7, 1.2, 1.6, 2.6],
            ),
            step_budget_range: (56, 84),
            seed: 0,
        },
        Preset::Base => GenParams {
            n_tasks_per_layer: vec![4, 3, 2, 1],
            n_distractors_per_layer: vec![0, 0, 0, 0],
            n_and_per_layer: ranges(&[3, 3, 2], &[4, 3, 3]),
            n_and_children_pos: ranges(&[1, 1, 2], &[3, 2, 2]),
            n_and_children_neg: ranges(&[0, 0, 0], &[0, 0, 0]),
            n_distractor_neg_parents: ranges(&[0, 0, 0, 0], &[0, 0, 0, 0]),
            n_or_children: ranges(&[1, 1, 1], &[2, 2, 2]),
            reward_per_layer: reward_ranges(&[0.1, 0.3, 0.7, 1.6], &[0.2, 0.4, 0.9, 1.8]),
            step_budget_range: (40, 60),
            seed: 0,
        },
        Preset::BaseMinusOr => GenParams {
            n_or_children: ranges(&[1, 1, 1], &[1, 1, 1]),
            ..preset_params(Preset::Base)
        },
        Preset::BaseDistractor => GenParams {
            n_distractors_per_layer: vec![2, 1, 0, 0],
            ..preset_params(Preset::Base)
        },
        Preset::BaseNot => GenParams {
            n_and_children_neg: ranges(&[0, 0, 0], &[3, 2, 2]),
            ..preset_params(Preset::Base)
        },
        Preset::BaseNegDistractor => GenParams {
            n_distractors_per_layer: vec![2, 1, 0, 0],
            n_distractor_neg_parents: ranges(&[0, 0, 0, 0], &[3, 3, 0, 0]),
            ..preset_params(Preset::Base)
        },
        Preset::BaseDelayed => GenParams {
            reward_per_layer: reward_ranges(&[0.0, 0.0, 0.0, 1.6], &[0.0, 0.0, 0.0, 1.8]),
            ..preset_params(Preset::Base)
        },
    }
}

/// A small hand-built graph with distractors. Leaves `A`, `B`, `C` pay
/// nothing but lead to the top subtask `K`; the distractors `D`, `E` (layer
/// 0) and `H` (layer 1) pay immediately and each blocks one AND node above
/// it.
///
/// ```text
/// F = A & B & !D      G = C & !E      K = F & G & !H
/// ```
pub fn distractor_example<T: Scalar>() -> SubtaskGraph<T> {
    const LABELS: [&str; 9] = ["A", "B", "C", "D", "E", "F", "G", "H", "K"];
    let spec = |id: usize, layer: usize, reward: f64| SubtaskSpec {
        id,
        label: LABELS[id].to_string(),
        layer,
        reward: T::lit(reward),
    };
    let subtasks = vec![
        spec(0, 0, 0.0),
        spec(1, 0, 0.0),
        spec(2, 0, 0.0),
        spec(3, 0, 0.3),
        spec(4, 0, 0.2),
        spec(5, 1, 0.2),
        spec(6, 1, 0.2),
        spec(7, 1, 0.4),
        spec(8, 2, 3.0),
    ];
    let and_nodes = vec![
        AndNode { id: 0, children: vec![Literal::pos(0), Literal::pos(1), Literal::neg(3)] },
        AndNode { id: 1, children: vec![Literal::pos(2), Literal::neg(4)] },
        AndNode { id: 2, children: vec![Literal::pos(5), Literal::pos(6), Literal::neg(7)] },
    ];
    let or_children = vec![vec![], vec![], vec![], vec![], vec![], vec![0], vec![1], vec![], vec![2]];
    SubtaskGraph::new(subtasks, and_nodes, or_children, (40, 40)).expect("example graph is well formed")
}

/// Spreadsheet-style label: A..Z, AA, AB, ...
pub fn label_for(mut i: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

fn draw(rng: &mut impl Rng, (lo, hi): CountRange) -> usize {
    rng.gen_range(lo..=hi)
}

fn draw_reward<T: Scalar>(rng: &mut impl Rng, (lo, hi): (T, T)) -> T {
    if lo == hi {
        lo
    } else {
        T::lit(rng.gen_range(lo.as_f64()..=hi.as_f64()))
    }
}

/// Draws a graph using `params.seed`.
pub fn generate_playground_graph<T: Scalar>(params: &GenParams<T>) -> Result<SubtaskGraph<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    generate_with_rng(params, &mut rng)
}

/// Draws a graph from an explicit RNG stream; `params.seed` is ignored.
pub fn generate_with_rng<T: Scalar>(params: &GenParams<T>, rng: &mut impl Rng) -> Result<SubtaskGraph<T>> {
    params.validate()?;
    let l = params.n_layers();

    // Dense ids: layer by layer, regular subtasks before distractors.
    let mut subtasks = Vec::with_capacity(params.n_subtasks());
    let mut regular: Vec<Vec<usize>> = Vec::with_capacity(l);
    let mut distractors: Vec<Vec<usize>> = Vec::with_capacity(l);
    for layer in 0..l {
        let mut reg = Vec::new();
        let mut dis = Vec::new();
        for k in 0..params.n_tasks_per_layer[layer] {
            let id = subtasks.len();
            subtasks.push(SubtaskSpec {
                id,
                label: label_for(id),
                layer,
                reward: draw_reward(rng, params.reward_per_layer[layer]),
            });
            if k < params.regular(layer) {
                reg.push(id);
            } else {
                dis.push(id);
            }
        }
        regular.push(reg);
        distractors.push(dis);
    }

    let mut and_nodes: Vec<AndNode> = Vec::new();
    let mut or_children = vec![Vec::new(); subtasks.len()];
    // AND node ids actually referenced by each layer.
    let mut layer_ands: Vec<Vec<usize>> = vec![Vec::new(); l];

    for layer in 1..l {
        if regular[layer].is_empty() {
            continue;
        }
        let src = &regular[layer - 1];
        let n_and = draw(rng, params.n_and_per_layer[layer - 1]).max(1);
        let mut pool: Vec<Vec<Literal>> = Vec::with_capacity(n_and);
        let mut seen: HashSet<Vec<Literal>> = HashSet::new();
        // Small source layers may admit fewer distinct nodes than requested;
        // the pool then keeps whatever distinct nodes were found.
        'fill: for _ in 0..n_and {
            let mut attempt = 0;
            loop {
                let node = draw_and_node(rng, src, params, layer);
                if seen.insert(node.clone()) {
                    pool.push(node);
                    break;
                }
                attempt += 1;
                if attempt >= DEFAULT_DEDUP_RETRIES {
                    break 'fill;
                }
            }
        }

        let mut used = vec![None; pool.len()];
        for &i in &regular[layer] {
            let n_oc = draw(rng, params.n_or_children[layer - 1]).clamp(1, pool.len());
            let mut picks: Vec<usize> = (0..pool.len()).collect();
            picks.shuffle(rng);
            picks.truncate(n_oc);
            picks.sort_unstable();
            for p in picks {
                let id = *used[p].get_or_insert_with(|| {
                    let id = and_nodes.len();
                    and_nodes.push(AndNode { id, children: pool[p].clone() });
                    layer_ands[layer].push(id);
                    id
                });
                or_children[i].push(id);
            }
        }
    }

    for layer in 0..l {
        for &d in &distractors[layer] {
            let targets = layer_ands.get(layer + 1).map(Vec::as_slice).unwrap_or(&[]);
            let n_dp = draw(rng, params.n_distractor_neg_parents[layer]).min(targets.len());
            let mut picks = targets.to_vec();
            picks.shuffle(rng);
            for &j in picks.iter().take(n_dp) {
                and_nodes[j].children.push(Literal::neg(d));
            }
        }
    }
    for a in &mut and_nodes {
        a.children.sort();
    }

    SubtaskGraph::new(subtasks, and_nodes, or_children, params.step_budget_range)
        .map_err(|e| Error::Generation(e.to_string()))
}

fn draw_and_node<T: Scalar>(rng: &mut impl Rng, src: &[usize], params: &GenParams<T>, layer: usize) -> Vec<Literal> {
    let n_pos = draw(rng, params.n_and_children_pos[layer - 1]).min(src.len());
    let n_neg = draw(rng, params.n_and_children_neg[layer - 1]).min(src.len() - n_pos);
    let n_pos = if n_pos + n_neg == 0 { 1 } else { n_pos };
    let mut pick: Vec<usize> = src.to_vec();
    pick.shuffle(rng);
    let mut node: Vec<Literal> = pick[..n_pos]
        .iter()
        .map(|&s| Literal::pos(s))
        .chain(pick[n_pos..n_pos + n_neg].iter().map(|&s| Literal::neg(s)))
        .collect();
    node.sort();
    node
}
