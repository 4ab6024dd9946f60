//! Monte-Carlo tree search over option sequences.
//!
//! Tree edges are subtask ids. Simulations run on a [`FrozenModel`] of the
//! current world, so every node holds an exact state. Expansion adds one
//! child per iteration; rollouts play to the end of the episode.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Domain, SubtaskId};
use crate::grprop::{argmax_in, grprop_policy, scores_at, GrpropConfig, SelectMode};
use crate::policy::random_policy;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::world::{FrozenModel, FrozenState, GridWorld, Policy};

/// `R/n + c·sqrt(ln N / n)`; unvisited children score `+∞`.
pub fn ucb_score(total_return: f64, visits: u64, parent_visits: u64, c: f64) -> f64 {
    if visits == 0 {
        return f64::INFINITY;
    }
    let n = visits as f64;
    let exploration = if c == 0.0 { 0.0 } else { c * ((parent_visits.max(1) as f64).ln() / n).sqrt() };
    total_return / n + exploration
}

/// Source of expansion and rollout choices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Guide {
    Random,
    Grprop,
}

/// What a budget in [`MctsConfig`] is counted over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BudgetScope {
    /// Each search gets the full budget.
    Decision,
    /// The budget covers every search of an episode; [`MctsPolicy`] splits
    /// what is left over the decisions it still expects to make.
    Episode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig<T> {
    pub c_ucb: f64,
    pub max_depth: usize,
    pub iteration_budget: Option<u64>,
    /// Simulated environment steps.
    pub step_budget: Option<u64>,
    pub scope: BudgetScope,
    pub expansion: Guide,
    pub rollout: Guide,
    pub grprop: GrpropConfig<T>,
}

impl<T: Scalar> MctsConfig<T> {
    /// Domain defaults: depth 7 on Playground, 10 on Mining, `c = 2√2`.
    pub fn for_domain(domain: Domain, guide: Guide) -> Self {
        MctsConfig {
            c_ucb: 2.0 * std::f64::consts::SQRT_2,
            max_depth: match domain {
                Domain::Playground => 7,
                Domain::Mining => 10,
            },
            iteration_budget: Some(1000),
            step_budget: None,
            scope: BudgetScope::Episode,
            expansion: guide,
            rollout: guide,
            grprop: GrpropConfig::for_domain(domain),
        }
    }

    pub fn with_iterations(mut self, n: u64) -> Self {
        self.iteration_budget = Some(n);
        self.step_budget = None;
        self
    }

    pub fn with_steps(mut self, n: u64) -> Self {
        self.step_budget = Some(n);
        self.iteration_budget = None;
        self
    }

    pub fn with_scope(mut self, scope: BudgetScope) -> Self {
        self.scope = scope;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_ucb >= 0.0 && self.c_ucb.is_finite()) {
            return Err(Error::Config("c_ucb must be finite and non-negative".into()));
        }
        if self.iteration_budget.is_none() && self.step_budget.is_none() {
            return Err(Error::Config("MCTS needs an iteration or step budget".into()));
        }
        if self.iteration_budget == Some(0) || self.step_budget == Some(0) {
            return Err(Error::Config("MCTS budgets must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MctsDiagnostics {
    pub iterations: u64,
    /// Rollout steps plus in-tree transition steps.
    pub simulated_steps: u64,
    pub rollout_steps: u64,
    pub root_visits: u64,
    pub root_total_return: f64,
    pub sum_of_returns: f64,
}

impl MctsDiagnostics {
    fn absorb(&mut self, other: &MctsDiagnostics) {
        self.iterations += other.iterations;
        self.simulated_steps += other.simulated_steps;
        self.rollout_steps += other.rollout_steps;
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    state: FrozenState,
    reward: T,
    steps: u32,
    children: Vec<(SubtaskId, usize)>,
    /// Actions not expanded yet; the next one is popped from the back.
    untried: Vec<SubtaskId>,
    visits: u64,
    total: f64,
    best: f64,
    depth: usize,
}

/// Result of one search.
#[derive(Clone, Debug, PartialEq)]
pub struct MctsPlan<T> {
    pub action: Option<SubtaskId>,
    /// Best trajectory prefix seen, from the root; empty when no tried
    /// prefix beats stopping at once.
    pub best_sequence: Vec<SubtaskId>,
    pub best_return: T,
    /// `(action, visits, mean return)` for each root child.
    pub root_children: Vec<(SubtaskId, u64, f64)>,
    pub diagnostics: MctsDiagnostics,
}

struct Tree<'a, T> {
    model: &'a FrozenModel<T>,
    cfg: &'a MctsConfig<T>,
    nodes: Vec<Node<T>>,
}

impl<'a, T: Scalar> Tree<'a, T> {
    fn make_node(&self, state: FrozenState, reward: T, steps: u32, depth: usize, rng: &mut Rng) -> Node<T> {
        let mut untried: Vec<SubtaskId> = if state.is_done() { Vec::new() } else { state.task.eligibility.iter().collect() };
        match self.cfg.expansion {
            Guide::Random => untried.shuffle(rng),
            Guide::Grprop if untried.len() > 1 => {
                let g = self.model.graph();
                let x: Vec<T> = (0..g.n_subtasks())
                    .map(|i| if state.task.completion.contains(i) { T::one() } else { T::zero() })
                    .collect();
                let s = scores_at(g, &x, &self.cfg.grprop);
                // ascending score, descending id: the back is the argmax
                untried.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).expect("finite scores").then(b.cmp(&a)));
                debug_assert_eq!(untried.last().copied(), argmax_in(&s, state.task.eligibility));
            }
            Guide::Grprop => {}
        }
        Node { state, reward, steps, children: Vec::new(), untried, visits: 0, total: 0.0, best: f64::NEG_INFINITY, depth }
    }

    fn select_child(&self, n: usize) -> usize {
        let node = &self.nodes[n];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for &(_, c) in &node.children {
            let child = &self.nodes[c];
            let score = ucb_score(child.total, child.visits, node.visits, self.cfg.c_ucb);
            if score > best.0 || best.1 == usize::MAX {
                best = (score, c);
            }
        }
        best.1
    }

    fn rollout(&self, mut s: FrozenState, seq: &mut Vec<(SubtaskId, T)>, rng: &mut Rng) -> (T, u64) {
        let g = self.model.graph();
        let mut ret = T::zero();
        let mut steps = 0u64;
        while !s.is_done() {
            let a = match self.cfg.rollout {
                Guide::Random => random_policy(&s.task, rng),
                Guide::Grprop => grprop_policy(g, &s.task, &self.cfg.grprop, SelectMode::Argmax, rng),
            };
            let Some(a) = a else { break };
            let (next, r, k) = self.model.step(&s, a);
            ret = ret + r;
            steps += k as u64;
            seq.push((a, r));
            s = next;
        }
        (ret, steps)
    }
}

/// Runs MCTS from `root` until the budget is spent (always counted for
/// this one search, whatever `cfg.scope` says). The returned action is the
/// first step of the best trajectory prefix found, which is exact on the
/// frozen model.
pub fn mcts_search<T: Scalar>(
    model: &FrozenModel<T>,
    root: &FrozenState,
    cfg: &MctsConfig<T>,
    rng: &mut Rng,
) -> Result<MctsPlan<T>> {
    cfg.validate()?;
    let mut tree = Tree { model, cfg, nodes: Vec::new() };
    let root_node = tree.make_node(*root, T::zero(), 0, 0, rng);
    tree.nodes.push(root_node);

    let mut diag = MctsDiagnostics::default();
    // Stopping at once is always possible.
    let mut best_return = T::zero();
    let mut best_sequence = Vec::new();
    let mut path = Vec::new();
    let mut seq = Vec::new();

    loop {
        let out_of_iters = cfg.iteration_budget.is_some_and(|b| diag.iterations >= b);
        let out_of_steps = cfg.step_budget.is_some_and(|b| diag.simulated_steps >= b);
        if diag.iterations > 0 && (out_of_iters || out_of_steps) {
            break;
        }
        path.clear();
        seq.clear();
        let mut n = 0usize;
        let mut ret = T::zero();
        path.push(n);
        // selection and expansion
        loop {
            let node = &tree.nodes[n];
            if node.state.is_done() {
                break;
            }
            if node.depth >= cfg.max_depth {
                break;
            }
            if let Some(&a) = node.untried.last() {
                let (state, r, k) = model.step(&node.state, a);
                let depth = node.depth + 1;
                tree.nodes[n].untried.pop();
                let child = tree.make_node(state, r, k, depth, rng);
                let c = tree.nodes.len();
                tree.nodes.push(child);
                tree.nodes[n].children.push((a, c));
                ret = ret + r;
                diag.simulated_steps += k as u64;
                seq.push((a, r));
                path.push(c);
                n = c;
                break;
            }
            if node.children.is_empty() {
                break;
            }
            let c = tree.select_child(n);
            let a = tree.nodes[n].children.iter().find(|&&(_, x)| x == c).expect("child").0;
            ret = ret + tree.nodes[c].reward;
            diag.simulated_steps += tree.nodes[c].steps as u64;
            seq.push((a, tree.nodes[c].reward));
            path.push(c);
            n = c;
        }
        // rollout
        let (r, k) = tree.rollout(tree.nodes[n].state, &mut seq, rng);
        ret = ret + r;
        diag.rollout_steps += k;
        diag.simulated_steps += k;
        diag.iterations += 1;
        // backpropagation
        let v = ret.as_f64();
        diag.sum_of_returns += v;
        for &p in &path {
            let node = &mut tree.nodes[p];
            node.visits += 1;
            node.total += v;
            if v > node.best {
                node.best = v;
            }
        }
        // The plan is the best prefix: the agent may stop after any option.
        let mut prefix = T::zero();
        for (len, &(_, r)) in seq.iter().enumerate() {
            prefix = prefix + r;
            if prefix > best_return {
                best_return = prefix;
                best_sequence.clear();
                best_sequence.extend(seq[..=len].iter().map(|&(a, _)| a));
            }
        }
    }

    let root = &tree.nodes[0];
    diag.root_visits = root.visits;
    diag.root_total_return = root.total;
    let root_children = root
        .children
        .iter()
        .map(|&(a, c)| {
            let ch = &tree.nodes[c];
            (a, ch.visits, if ch.visits > 0 { ch.total / ch.visits as f64 } else { 0.0 })
        })
        .collect();
    Ok(MctsPlan {
        action: best_sequence.first().copied(),
        best_sequence,
        best_return,
        root_children,
        diagnostics: diag,
    })
}

/// Receding-horizon MCTS: searches from the current world state before
/// every option. The best plan found so far is kept and re-evaluated on the
/// new snapshot, so a later, luckier-or-unluckier search never discards a
/// better known continuation.
#[derive(Clone, Debug)]
pub struct MctsPolicy<T> {
    pub cfg: MctsConfig<T>,
    incumbent: Vec<SubtaskId>,
    totals: MctsDiagnostics,
    decisions: u64,
}

impl<T: Scalar> MctsPolicy<T> {
    pub fn new(cfg: MctsConfig<T>) -> Self {
        MctsPolicy { cfg, incumbent: Vec::new(), totals: MctsDiagnostics::default(), decisions: 0 }
    }

    pub fn diagnostics(&self) -> MctsDiagnostics {
        self.totals
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    /// Return of following `seq` from `root`, and the steps simulated.
    fn replay(model: &FrozenModel<T>, root: &FrozenState, seq: &[SubtaskId]) -> (T, u64) {
        let mut s = *root;
        let mut ret = T::zero();
        let mut steps = 0;
        for &a in seq {
            if s.is_done() {
                break;
            }
            let (n, r, k) = model.step(&s, a);
            ret = ret + r;
            steps += k as u64;
            s = n;
        }
        (ret, steps)
    }

    /// Decisions still expected from `root`: remaining time over the mean
    /// cost of the eligible options, at most one per uncompleted subtask.
    fn expected_decisions(model: &FrozenModel<T>, root: &FrozenState) -> u64 {
        let n = model.graph().n_subtasks() as u64;
        let open = (n - root.task.completion.len() as u64).max(1);
        let costs: Vec<u64> = root.task.eligibility.iter().map(|i| model.option_cost(root, i) as u64).collect();
        if costs.is_empty() {
            return 1;
        }
        let mean = costs.iter().sum::<u64>().div_ceil(costs.len() as u64).max(1);
        (root.task.remaining_steps as u64).div_ceil(mean).clamp(1, open)
    }

    /// Budget for the next search, or `None` when the episode budget is
    /// spent.
    fn search_config(&self, model: &FrozenModel<T>, root: &FrozenState) -> Option<MctsConfig<T>> {
        if self.cfg.scope == BudgetScope::Decision {
            return Some(self.cfg);
        }
        let d = Self::expected_decisions(model, root);
        let share = |total: u64, spent: u64| (total > spent).then(|| ((total - spent) / d).max(1));
        let mut c = self.cfg;
        c.iteration_budget = match self.cfg.iteration_budget {
            Some(b) => Some(share(b, self.totals.iterations)?),
            None => None,
        };
        c.step_budget = match self.cfg.step_budget {
            Some(b) => Some(share(b, self.totals.simulated_steps)?),
            None => None,
        };
        Some(c)
    }
}

impl<T: Scalar> Policy<T> for MctsPolicy<T> {
    fn name(&self) -> String {
        match self.cfg.expansion {
            Guide::Random => "mcts".into(),
            Guide::Grprop => "mcts+grprop".into(),
        }
    }

    fn act(&mut self, world: &GridWorld<T>, rng: &mut Rng) -> Option<SubtaskId> {
        if world.is_done() {
            return None;
        }
        let (model, root) = FrozenModel::snapshot(world).ok()?;
        let Some(cfg) = self.search_config(&model, &root) else {
            // Out of search budget: keep following the last plan.
            if self.incumbent.is_empty() {
                return None;
            }
            return Some(self.incumbent.remove(0));
        };
        let plan = mcts_search(&model, &root, &cfg, rng).ok()?;
        self.totals.absorb(&plan.diagnostics);
        self.decisions += 1;
        if !self.incumbent.is_empty() {
            let (value, steps) = Self::replay(&model, &root, &self.incumbent);
            self.totals.simulated_steps += steps;
            if value > plan.best_return {
                return Some(self.incumbent.remove(0));
            }
        }
        self.incumbent = plan.best_sequence;
        if self.incumbent.is_empty() {
            return None;
        }
        Some(self.incumbent.remove(0))
    }

    fn simulated_steps(&self) -> u64 {
        self.totals.simulated_steps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ucb_reference_value() {
        let v = ucb_score(5.0, 2, 10, 2.0 * std::f64::consts::SQRT_2);
        let want = 2.5 + 2.0 * std::f64::consts::SQRT_2 * (10f64.ln() / 2.0).sqrt();
        assert!((v - want).abs() < 1e-12);
        assert!((v - 5.534_854).abs() < 1e-6);
    }

    #[test]
    fn ucb_edge_cases() {
        assert_eq!(ucb_score(3.0, 4, 9, 0.0), 0.75);
        assert_eq!(ucb_score(0.0, 0, 9, 1.0), f64::INFINITY);
        assert!(ucb_score(2.0, 2, 20, 1.0) > ucb_score(4.0, 4, 20, 1.0));
    }

    #[test]
    fn config_validation() {
        let c = MctsConfig::<f64>::for_domain(Domain::Playground, Guide::Random);
        assert_eq!(c.max_depth, 7);
        assert!(c.validate().is_ok());
        assert_eq!(MctsConfig::<f64>::for_domain(Domain::Mining, Guide::Grprop).max_depth, 10);
        let mut bad = c;
        bad.iteration_budget = None;
        assert!(bad.validate().is_err());
        bad.c_ucb = -1.0;
        bad.iteration_budget = Some(3);
        assert!(bad.validate().is_err());
    }
}
