#![allow(dead_code)]

use std::sync::Arc;

use graphexec::gen::{generate_playground_graph, preset_params, GenParams, Preset};
use graphexec::graph::SubtaskGraph;
use graphexec::rng::mix_seed;
use graphexec::world::{EpisodeConfig, GridWorld, MapGeometry};

pub fn sample(preset: Preset, seed: u64) -> SubtaskGraph<f64> {
    let mut p = preset_params::<f64>(preset);
    p.seed = mix_seed(seed, &[preset as u64]);
    generate_playground_graph(&p).expect("preset generates")
}

/// Sum-of-products evaluation straight from the stored AND/OR lists.
pub fn sop_eligibility(g: &SubtaskGraph<f64>, x: &[bool]) -> Vec<bool> {
    (0..g.n_subtasks())
        .map(|i| {
            let ors = g.or_children(i);
            let pre = ors.is_empty()
                || ors.iter().any(|&j| {
                    g.and_nodes()[j].children.iter().all(|l| x[l.subtask] != l.negated)
                });
            pre && !x[i]
        })
        .collect()
}

pub fn bits(mask: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| mask >> i & 1 == 1).collect()
}

/// An eight-subtask graph with negations, a distractor and some negative
/// rewards, small enough for brute force.
pub fn small_graph(seed: u64) -> SubtaskGraph<f64> {
    let p = GenParams {
        n_tasks_per_layer: vec![4, 2, 2],
        n_distractors_per_layer: vec![1, 0, 0],
        n_and_per_layer: vec![(2, 3), (1, 2)],
        n_and_children_pos: vec![(1, 2), (1, 2)],
        n_and_children_neg: vec![(0, 1), (0, 1)],
        n_distractor_neg_parents: vec![(1, 2), (0, 0), (0, 0)],
        n_or_children: vec![(1, 2), (1, 2)],
        reward_per_layer: vec![(-0.2, 0.3), (0.2, 0.6), (0.5, 1.0)],
        step_budget_range: (6, 12),
        seed: mix_seed(seed, &[0x5a11]),
    };
    generate_playground_graph(&p).expect("small graph generates")
}

/// Frozen 5x5 world over [`small_graph`].
pub fn small_world(seed: u64) -> GridWorld<f64> {
    let g = Arc::new(small_graph(seed));
    let mut cfg = EpisodeConfig::new(g, seed).frozen(true);
    cfg.geometry = MapGeometry { height: 5, width: 5, obstacles: 0 };
    GridWorld::new(&cfg).expect("small world samples")
}
