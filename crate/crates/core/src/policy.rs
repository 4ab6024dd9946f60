//! Baseline policies and the exhaustive optimum.
//!
//! [`optimal_search`] sweeps option sequences on a frozen snapshot in
//! order of elapsed steps. States that differ only in budget are merged,
//! and states whose admissible bound cannot beat the incumbent are not
//! expanded.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{SubtaskGraph, SubtaskId, TaskState};
use crate::grprop::{grprop_policy, GrpropConfig, SelectMode};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::world::{FrozenModel, FrozenState, GridWorld, Policy};

/// Largest `N` the exhaustive search accepts unless told otherwise.
pub const DEFAULT_OPTIMAL_GUARD: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyId {
    Random,
    Greedy,
    Grprop,
    Optimal,
    Mcts,
    MctsGrprop,
}

impl PolicyId {
    pub const ALL: [PolicyId; 6] = [
        PolicyId::Random,
        PolicyId::Greedy,
        PolicyId::Grprop,
        PolicyId::Optimal,
        PolicyId::Mcts,
        PolicyId::MctsGrprop,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            PolicyId::Random => "random",
            PolicyId::Greedy => "greedy",
            PolicyId::Grprop => "grprop",
            PolicyId::Optimal => "optimal",
            PolicyId::Mcts => "mcts",
            PolicyId::MctsGrprop => "mcts+grprop",
        }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        PolicyId::ALL
            .into_iter()
            .find(|p| p.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

/// Uniform choice among eligible subtasks.
pub fn random_policy(state: &TaskState, rng: &mut Rng) -> Option<SubtaskId> {
    let n = state.eligibility.len();
    if n == 0 {
        return None;
    }
    state.eligibility.iter().nth(rng.gen_range(0..n))
}

/// Eligible subtask with the largest reward; ties go to the lowest id.
pub fn greedy_policy<T: Scalar>(graph: &SubtaskGraph<T>, state: &TaskState) -> Option<SubtaskId> {
    let mut best: Option<(SubtaskId, T)> = None;
    for i in state.eligibility.iter() {
        let r = graph.reward(i);
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RandomPolicy;

impl<T: Scalar> Policy<T> for RandomPolicy {
    fn name(&self) -> String {
        PolicyId::Random.tag().into()
    }

    fn act(&mut self, world: &GridWorld<T>, rng: &mut Rng) -> Option<SubtaskId> {
        random_policy(world.state(), rng)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GreedyPolicy;

impl<T: Scalar> Policy<T> for GreedyPolicy {
    fn name(&self) -> String {
        PolicyId::Greedy.tag().into()
    }

    fn act(&mut self, world: &GridWorld<T>, _rng: &mut Rng) -> Option<SubtaskId> {
        greedy_policy(world.graph(), world.state())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GrpropPolicy<T> {
    pub cfg: GrpropConfig<T>,
    pub mode: SelectMode,
}

impl<T: Scalar> GrpropPolicy<T> {
    pub fn new(cfg: GrpropConfig<T>) -> Self {
        GrpropPolicy { cfg, mode: SelectMode::Argmax }
    }
}

impl<T: Scalar> Policy<T> for GrpropPolicy<T> {
    fn name(&self) -> String {
        PolicyId::Grprop.tag().into()
    }

    fn act(&mut self, world: &GridWorld<T>, rng: &mut Rng) -> Option<SubtaskId> {
        grprop_policy(world.graph(), world.state(), &self.cfg, self.mode, rng)
    }
}

/// Outcome of an exhaustive search.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult<T> {
    pub best_return: T,
    pub sequence: Vec<SubtaskId>,
    /// Distinct states reached.
    pub states: usize,
}

/// Return collected between `root` and `s`. Search moves only execute
/// eligible subtasks, so this is the reward of the newly completed set,
/// summed in id order so equal sets give bit-equal values.
fn gained<T: Scalar>(graph: &SubtaskGraph<T>, root: &FrozenState, s: &FrozenState) -> T {
    s.task
        .completion
        .iter()
        .filter(|&i| !root.task.completion.contains(i))
        .fold(T::zero(), |acc, i| acc + graph.reward(i))
}

/// Admissible bound on the reward still obtainable from a state: a
/// fractional knapsack over uncompleted positive rewards, weighted by the
/// cheapest conceivable option cost.
struct Bound<T> {
    /// `(subtask, reward, cost floor)`, best ratio first.
    items: Vec<(SubtaskId, T, u32)>,
}

impl<T: Scalar> Bound<T> {
    fn new(model: &FrozenModel<T>, root: &FrozenState) -> Self {
        let g = model.graph();
        let mut items: Vec<(SubtaskId, T, u32)> = (0..g.n_subtasks())
            .filter(|&i| g.reward(i) > T::zero() && !root.task.completion.contains(i))
            .filter_map(|i| model.cost_floor(i, root.agent).map(|w| (i, g.reward(i), w)))
            .collect();
        items.sort_by(|a, b| {
            let ra = a.1 / T::lit(a.2 as f64);
            let rb = b.1 / T::lit(b.2 as f64);
            rb.partial_cmp(&ra).expect("finite rewards").then(a.0.cmp(&b.0))
        });
        Bound { items }
    }

    fn at(&self, s: &FrozenState) -> T {
        let mut left = s.task.remaining_steps;
        let mut total = T::zero();
        for &(i, r, w) in &self.items {
            if left == 0 {
                break;
            }
            if s.task.completion.contains(i) {
                continue;
            }
            if w <= left {
                total = total + r;
                left -= w;
            } else {
                total = total + r * T::lit(left as f64) / T::lit(w as f64);
                left = 0;
            }
        }
        // Slack so rounding never prunes a tie.
        total + total * T::lit(1e-9)
    }
}

/// Search key: a state with its budget erased. Of two states with the same
/// key, the one with more budget left dominates.
fn key_of(s: &FrozenState) -> FrozenState {
    let mut k = *s;
    k.task.remaining_steps = 0;
    k
}

struct Visit {
    used: u32,
    parent: Option<(FrozenState, SubtaskId)>,
}

/// Maximum return reachable from `root` on the frozen model, with one
/// witness sequence. Refuses graphs with more than `guard` subtasks.
pub fn optimal_search_from<T: Scalar>(
    model: &FrozenModel<T>,
    root: &FrozenState,
    guard: usize,
) -> Result<SearchResult<T>> {
    let g = model.graph();
    let n = g.n_subtasks();
    if n > guard {
        return Err(Error::Intractable { n, guard });
    }
    let budget = root.task.remaining_steps;
    let bound = Bound::new(model, root);
    // Uniform-cost sweep: states are expanded in order of steps used, so
    // each key is expanded once, with the most budget it can have.
    let mut visits: HashMap<FrozenState, Visit> = HashMap::new();
    let mut buckets: Vec<Vec<FrozenState>> = vec![Vec::new(); budget as usize + 1];
    visits.insert(key_of(root), Visit { used: 0, parent: None });
    buckets[0].push(*root);
    let mut best = (T::zero(), *root);
    for used in 0..=budget {
        for s in std::mem::take(&mut buckets[used as usize]) {
            if visits[&key_of(&s)].used != used {
                continue;
            }
            let value = gained(g, root, &s);
            if value > best.0 {
                best = (value, s);
            }
            if s.is_done() || value + bound.at(&s) <= best.0 {
                continue;
            }
            for i in s.task.eligibility.iter() {
                if model.option_cost(&s, i) > s.task.remaining_steps {
                    continue;
                }
                let (next, _, steps) = model.step(&s, i);
                let at = used + steps;
                let k = key_of(&next);
                if visits.get(&k).is_some_and(|v| v.used <= at) {
                    continue;
                }
                visits.insert(k, Visit { used: at, parent: Some((key_of(&s), i)) });
                buckets[at as usize].push(next);
            }
        }
    }
    let mut sequence = Vec::new();
    let mut k = key_of(&best.1);
    while let Some((parent, i)) = visits[&k].parent {
        sequence.push(i);
        k = parent;
    }
    sequence.reverse();
    Ok(SearchResult { best_return: best.0, sequence, states: visits.len() })
}

/// [`optimal_search_from`] on a frozen snapshot of `world`.
pub fn optimal_search<T: Scalar>(world: &GridWorld<T>, guard: usize) -> Result<SearchResult<T>> {
    let (model, root) = FrozenModel::snapshot(world)?;
    optimal_search_from(&model, &root, guard)
}

/// Follows an optimal plan, replanning whenever the world drifts from the
/// frozen prediction.
#[derive(Clone, Debug)]
pub struct OptimalPolicy {
    pub guard: usize,
    plan: Vec<SubtaskId>,
    expected: Option<(crate::graph::TaskState, usize)>,
    simulated: u64,
}

impl OptimalPolicy {
    pub fn new(guard: usize) -> Self {
        OptimalPolicy { guard, plan: Vec::new(), expected: None, simulated: 0 }
    }
}

impl Default for OptimalPolicy {
    fn default() -> Self {
        Self::new(DEFAULT_OPTIMAL_GUARD)
    }
}

impl<T: Scalar> Policy<T> for OptimalPolicy {
    fn name(&self) -> String {
        PolicyId::Optimal.tag().into()
    }

    fn act(&mut self, world: &GridWorld<T>, _rng: &mut Rng) -> Option<SubtaskId> {
        let here = (*world.state(), world.map().agent());
        if self.expected != Some(here) || self.plan.is_empty() {
            let (model, root) = FrozenModel::snapshot(world).ok()?;
            let res = optimal_search_from(&model, &root, self.guard).ok()?;
            self.simulated += res.states as u64;
            self.plan = res.sequence;
            self.plan.reverse();
            self.expected = Some(here);
        }
        let next = self.plan.pop()?;
        // Predict where this option leaves us, to detect drift next call.
        let (model, root) = FrozenModel::snapshot(world).ok()?;
        let (s, _, _) = model.step(&root, next);
        self.expected = Some((s.task, s.agent));
        Some(next)
    }

    fn simulated_steps(&self) -> u64 {
        self.simulated
    }
}
