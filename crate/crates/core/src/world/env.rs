use std::sync::Arc;

use rand::Rng as _;

use super::map::{sample_map, step_objects, Cell, DistTable, MapGeometry, MapSpec};
use super::{option_catalog, OptionSpec};
use crate::error::{Error, Result};
use crate::graph::{execute_subtask, Domain, SubtaskGraph, SubtaskId, SubtaskSet, TaskState};
use crate::rng::{mix_seed, rng_from, Rng};
use crate::scalar::Scalar;

const WORLD_STREAM: u64 = 0x5eed_0001;
const POLICY_STREAM: u64 = 0x5eed_0002;

/// Everything needed to instantiate one episode.
#[derive(Clone, Debug)]
pub struct EpisodeConfig<T> {
    pub graph: Arc<SubtaskGraph<T>>,
    pub seed: u64,
    pub freeze_stochastic: bool,
    pub geometry: MapGeometry,
    /// Fixed budget; sampled from the graph's range when `None`.
    pub budget: Option<u32>,
}

impl<T: Scalar> EpisodeConfig<T> {
    /// 10x10 map; Mining maps get eight terrain cells.
    pub fn new(graph: Arc<SubtaskGraph<T>>, seed: u64) -> Self {
        let obstacles = match graph.domain() {
            Domain::Playground => 0,
            Domain::Mining => 8,
        };
        EpisodeConfig {
            graph,
            seed,
            freeze_stochastic: false,
            geometry: MapGeometry { height: 10, width: 10, obstacles },
            budget: None,
        }
    }

    pub fn frozen(mut self, freeze: bool) -> Self {
        self.freeze_stochastic = freeze;
        self
    }

    pub fn with_budget(mut self, budget: u32) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn domain(&self) -> Domain {
        self.graph.domain()
    }

    /// Seed of the policy's private random stream.
    pub fn policy_seed(&self) -> u64 {
        mix_seed(self.seed, &[POLICY_STREAM])
    }
}

/// Result of one option execution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptionOutcome<T> {
    pub reward: T,
    pub steps: u32,
    /// No instance of the target type was left on the map.
    pub missing: bool,
    /// The budget ran out before the interaction.
    pub aborted: bool,
}

/// The task MDP: a map, a graph, and the agent's progress.
#[derive(Clone, Debug)]
pub struct GridWorld<T> {
    graph: Arc<SubtaskGraph<T>>,
    options: Arc<[OptionSpec]>,
    dist: Arc<DistTable>,
    map: MapSpec,
    state: TaskState,
    initial_budget: u32,
    frozen: bool,
    rng: Rng,
}

impl<T: Scalar> GridWorld<T> {
    pub fn new(cfg: &EpisodeConfig<T>) -> Result<Self> {
        let mut rng = rng_from(mix_seed(cfg.seed, &[WORLD_STREAM]));
        let (lo, hi) = cfg.graph.step_budget_range();
        let budget = match cfg.budget {
            Some(b) => b,
            None => rng.gen_range(lo..=hi),
        };
        let options: Arc<[OptionSpec]> = option_catalog(&cfg.graph)?.into();
        let map = sample_map(cfg.domain(), cfg.geometry, &options, &mut rng)?;
        Ok(Self::assemble(cfg.graph.clone(), options, map, budget, cfg.freeze_stochastic, rng))
    }

    /// World over a hand-built map.
    pub fn from_map(graph: Arc<SubtaskGraph<T>>, map: MapSpec, budget: u32, frozen: bool, seed: u64) -> Result<Self> {
        let options: Arc<[OptionSpec]> = option_catalog(&graph)?.into();
        if !map.is_passable(map.agent()) {
            return Err(Error::Config("agent placed on impassable cell".into()));
        }
        Ok(Self::assemble(graph, options, map, budget, frozen, rng_from(mix_seed(seed, &[WORLD_STREAM]))))
    }

    fn assemble(
        graph: Arc<SubtaskGraph<T>>,
        options: Arc<[OptionSpec]>,
        map: MapSpec,
        budget: u32,
        frozen: bool,
        rng: Rng,
    ) -> Self {
        let dist = Arc::new(DistTable::new(&map));
        let state = TaskState::initial(&graph, budget);
        GridWorld { graph, options, dist, map, state, initial_budget: budget, frozen, rng }
    }

    pub fn graph(&self) -> &SubtaskGraph<T> {
        &self.graph
    }

    pub fn graph_arc(&self) -> &Arc<SubtaskGraph<T>> {
        &self.graph
    }

    pub fn options(&self) -> &[OptionSpec] {
        &self.options
    }

    pub fn map(&self) -> &MapSpec {
        &self.map
    }

    pub fn distances(&self) -> &DistTable {
        &self.dist
    }

    pub fn state(&self) -> &TaskState {
        &self.state
    }

    pub fn initial_budget(&self) -> u32 {
        self.initial_budget
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn is_done(&self) -> bool {
        self.state.is_done()
    }

    /// Copy with object motion disabled.
    pub fn frozen_clone(&self) -> Self {
        let mut w = self.clone();
        w.frozen = true;
        w
    }

    /// Nearest live instance of the option's target: `(object, distance)`.
    /// Ties go to the lowest row-major cell.
    pub fn nearest_target(&self, subtask: SubtaskId) -> Option<(usize, u32)> {
        let target = self.options[subtask].target;
        let agent = self.map.agent();
        let mut best: Option<(usize, u32, Cell)> = None;
        for (i, o) in self.map.objects().iter().enumerate() {
            if !o.alive || o.kind != target {
                continue;
            }
            let Some(d) = self.dist.get(agent, o.cell) else { continue };
            let better = match best {
                None => true,
                Some((_, bd, bc)) => d < bd || (d == bd && o.cell < bc),
            };
            if better {
                best = Some((i, d, o.cell));
            }
        }
        best.map(|(i, d, _)| (i, d))
    }

    fn tick(&mut self) {
        if !self.frozen {
            step_objects(&mut self.map, &mut self.rng);
        }
    }

    /// Runs the option for `subtask`: walk to the nearest target instance
    /// one step at a time, interact, then apply the graph rules.
    pub fn execute_option(&mut self, subtask: SubtaskId) -> Result<OptionOutcome<T>> {
        if subtask >= self.graph.n_subtasks() {
            return Err(Error::Structure(format!(
                "subtask {subtask} out of range for N = {}",
                self.graph.n_subtasks()
            )));
        }
        if self.state.remaining_steps == 0 {
            return Err(Error::Data("option requested with no remaining budget".into()));
        }
        let opt = self.options[subtask];
        let budget = self.state.remaining_steps;
        let mut steps = 0u32;
        loop {
            let Some((obj, d)) = self.nearest_target(subtask) else {
                steps += 1;
                self.tick();
                self.state.remaining_steps = budget - steps;
                return Ok(OptionOutcome { reward: T::zero(), steps, missing: true, aborted: false });
            };
            if self.frozen && d > 0 {
                // Nothing moves, so the walk can be taken in one stride.
                let walk = d.min(budget - steps);
                steps += walk;
                if walk == d {
                    self.map.set_agent(self.map.objects()[obj].cell);
                }
            } else if d > 0 {
                let to = self.map.objects()[obj].cell;
                let next = self.dist.next_step(&self.map, self.map.agent(), to).expect("reachable target");
                self.map.set_agent(next);
                steps += 1;
                self.tick();
            }
            if steps == budget {
                self.state.remaining_steps = 0;
                return Ok(OptionOutcome { reward: T::zero(), steps, missing: false, aborted: true });
            }
            if self.map.agent() == self.map.objects()[obj].cell {
                steps += 1;
                self.map.interact(obj, opt.interaction);
                self.tick();
                let (next, reward) = execute_subtask(&self.graph, &self.state, subtask)?;
                self.state = next;
                self.state.remaining_steps = budget - steps;
                return Ok(OptionOutcome { reward, steps, missing: false, aborted: false });
            }
        }
    }
}

/// Free-function form of [`GridWorld::execute_option`].
pub fn execute_option<T: Scalar>(world: &mut GridWorld<T>, subtask: SubtaskId) -> Result<OptionOutcome<T>> {
    world.execute_option(subtask)
}

/// Compact search state over a frozen snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FrozenState {
    pub task: TaskState,
    /// Snapshot instances already picked up or transformed.
    pub consumed: u64,
    pub agent: Cell,
}

impl FrozenState {
    pub fn is_done(&self) -> bool {
        self.task.is_done()
    }
}

/// Deterministic transition model of a frozen world snapshot. Search
/// states are small `Copy` values instead of full map clones.
#[derive(Clone, Debug)]
pub struct FrozenModel<T> {
    graph: Arc<SubtaskGraph<T>>,
    dist: Arc<DistTable>,
    /// Per subtask: `(slot, cell)` of each candidate instance, by cell.
    candidates: Vec<Vec<(u8, Cell)>>,
    consumes: Vec<bool>,
}

impl<T: Scalar> FrozenModel<T> {
    /// Snapshot of `world`, plus the matching root state.
    pub fn snapshot(world: &GridWorld<T>) -> Result<(Self, FrozenState)> {
        let n = world.graph.n_subtasks();
        let mut slots: Vec<usize> = Vec::new();
        let mut candidates = Vec::with_capacity(n);
        let mut consumes = Vec::with_capacity(n);
        for opt in world.options.iter() {
            let mut cands = Vec::new();
            for (i, o) in world.map.objects().iter().enumerate() {
                if !o.alive || o.kind != opt.target {
                    continue;
                }
                let slot = match slots.iter().position(|&s| s == i) {
                    Some(p) => p,
                    None => {
                        slots.push(i);
                        slots.len() - 1
                    }
                };
                if slot >= 64 {
                    return Err(Error::Config("frozen snapshot supports at most 64 target instances".into()));
                }
                cands.push((slot as u8, o.cell));
            }
            cands.sort_by_key(|&(_, c)| c);
            candidates.push(cands);
            consumes.push(opt.interaction.consumes());
        }
        let model = FrozenModel { graph: world.graph.clone(), dist: world.dist.clone(), candidates, consumes };
        let root = FrozenState { task: world.state, consumed: 0, agent: world.map.agent() };
        Ok((model, root))
    }

    pub fn graph(&self) -> &SubtaskGraph<T> {
        &self.graph
    }

    pub fn graph_arc(&self) -> &Arc<SubtaskGraph<T>> {
        &self.graph
    }

    fn nearest(&self, s: &FrozenState, subtask: SubtaskId) -> Option<(u8, Cell, u32)> {
        let mut best: Option<(u8, Cell, u32)> = None;
        for &(slot, cell) in &self.candidates[subtask] {
            if s.consumed >> slot & 1 == 1 {
                continue;
            }
            let Some(d) = self.dist.get(s.agent, cell) else { continue };
            if best.is_none_or(|(_, _, bd)| d < bd) {
                best = Some((slot, cell, d));
            }
        }
        best
    }

    /// Lower bound on the steps any successful execution of `subtask` can
    /// take in a trajectory starting at `origin`; `None` when no instance
    /// exists. The agent always stands at `origin` or at a cell targeted by
    /// some other subtask.
    pub fn cost_floor(&self, subtask: SubtaskId, origin: Cell) -> Option<u32> {
        let targets = &self.candidates[subtask];
        if targets.is_empty() {
            return None;
        }
        let mut best = u32::MAX;
        for &(_, cell) in targets {
            let from_others = self
                .candidates
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != subtask)
                .flat_map(|(_, c)| c.iter().map(|&(_, p)| p));
            for p in std::iter::once(origin).chain(from_others) {
                if let Some(d) = self.dist.get(p, cell) {
                    best = best.min(d);
                }
            }
        }
        Some(best.saturating_add(1))
    }

    /// Time the option for `subtask` would take from `s`, ignoring the budget.
    pub fn option_cost(&self, s: &FrozenState, subtask: SubtaskId) -> u32 {
        self.nearest(s, subtask).map_or(1, |(_, _, d)| d + 1)
    }

    /// One option transition: `(next state, reward, steps used)`.
    /// `s` must have budget left and `subtask < N`.
    pub fn step(&self, s: &FrozenState, subtask: SubtaskId) -> (FrozenState, T, u32) {
        let budget = s.task.remaining_steps;
        debug_assert!(budget > 0);
        let mut next = *s;
        match self.nearest(s, subtask) {
            None => {
                next.task.remaining_steps = budget - 1;
                (next, T::zero(), 1)
            }
            Some((_, _, d)) if d + 1 > budget => {
                next.task.remaining_steps = 0;
                (next, T::zero(), budget)
            }
            Some((slot, cell, d)) => {
                next.agent = cell;
                if self.consumes[subtask] {
                    next.consumed |= 1u64 << slot;
                }
                let (task, reward) = execute_subtask(&self.graph, &s.task, subtask).expect("subtask in range");
                next.task = task;
                next.task.remaining_steps = budget - (d + 1);
                (next, reward, d + 1)
            }
        }
    }
}

/// A decision rule over worlds.
pub trait Policy<T: Scalar> {
    fn name(&self) -> String;

    /// Next subtask to attempt, or `None` to stop.
    fn act(&mut self, world: &GridWorld<T>, rng: &mut Rng) -> Option<SubtaskId>;

    /// Environment steps simulated internally so far (search policies).
    fn simulated_steps(&self) -> u64 {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord<T> {
    pub subtask: SubtaskId,
    pub reward: T,
    pub steps: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord<T> {
    pub seed: u64,
    pub budget: u32,
    pub steps: Vec<StepRecord<T>>,
    pub final_completion: SubtaskSet,
    pub total_return: T,
    pub steps_used: u32,
    pub simulated_steps: u64,
}

impl<T: Scalar> EpisodeRecord<T> {
    pub fn rewards(&self) -> Vec<T> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// Samples a world from `cfg` and lets `policy` act until the budget is
/// spent, nothing is eligible, or the policy stops.
pub fn run_episode<T: Scalar>(cfg: &EpisodeConfig<T>, policy: &mut dyn Policy<T>) -> Result<EpisodeRecord<T>> {
    let mut world = GridWorld::new(cfg)?;
    let mut rng = rng_from(cfg.policy_seed());
    run_in_world(&mut world, policy, &mut rng, cfg.seed)
}

/// Episode loop over an existing world.
pub fn run_in_world<T: Scalar>(
    world: &mut GridWorld<T>,
    policy: &mut dyn Policy<T>,
    rng: &mut Rng,
    seed: u64,
) -> Result<EpisodeRecord<T>> {
    let budget = world.state().remaining_steps;
    let start_sim = policy.simulated_steps();
    let mut steps = Vec::new();
    while !world.is_done() {
        let Some(subtask) = policy.act(world, rng) else { break };
        let out = world.execute_option(subtask)?;
        steps.push(StepRecord { subtask, reward: out.reward, steps: out.steps });
    }
    let total_return = steps.iter().map(|s: &StepRecord<T>| s.reward).sum();
    Ok(EpisodeRecord {
        seed,
        budget,
        final_completion: world.state().completion,
        total_return,
        steps_used: budget - world.state().remaining_steps,
        simulated_steps: policy.simulated_steps() - start_sim,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SubtaskSpec;
    use crate::world::ObjectKind;

    fn leaves(n: usize) -> Arc<SubtaskGraph<f64>> {
        let subtasks = (0..n).map(|i| SubtaskSpec { id: i, label: format!("{i}"), layer: 0, reward: 0.5 }).collect();
        Arc::new(SubtaskGraph::new(subtasks, vec![], vec![vec![]; n], (20, 20)).unwrap())
    }

    #[test]
    fn corridor_cost() {
        let g = leaves(2);
        let mut m = MapSpec::empty(10, 10, (2, 3)).unwrap();
        m.add_object((5, 3), ObjectKind::Milk).unwrap();
        for frozen in [true, false] {
            let mut w = GridWorld::from_map(g.clone(), m.clone(), 20, frozen, 0).unwrap();
            let out = w.execute_option(1).unwrap();
            assert_eq!(out.steps, 4);
            assert_eq!(out.reward, 0.5);
            assert_eq!(w.state().remaining_steps, 16);
            assert_eq!(w.map().count_alive(), 0);
        }
    }

    #[test]
    fn target_under_agent_costs_one() {
        let g = leaves(9);
        let mut m = MapSpec::empty(3, 3, (1, 1)).unwrap();
        m.add_object((1, 1), ObjectKind::Milk).unwrap();
        // subtask 9 would be transform Milk; here subtask 1 is pickup Milk
        let mut w = GridWorld::from_map(g, m, 20, true, 0).unwrap();
        let out = w.execute_option(1).unwrap();
        assert_eq!(out.steps, 1);
    }

    #[test]
    fn missing_object_costs_one() {
        let g = leaves(1);
        let m = MapSpec::empty(3, 3, (0, 0)).unwrap();
        let mut w = GridWorld::from_map(g, m, 5, true, 0).unwrap();
        let out = w.execute_option(0).unwrap();
        assert!(out.missing);
        assert_eq!((out.steps, out.reward), (1, 0.0));
        assert_eq!(w.state().completion, SubtaskSet::EMPTY);
    }

    #[test]
    fn abort_when_budget_runs_out() {
        let g = leaves(1);
        let mut m = MapSpec::empty(10, 10, (0, 0)).unwrap();
        m.add_object((9, 9), ObjectKind::Cow).unwrap();
        for frozen in [true, false] {
            let mut w = GridWorld::from_map(g.clone(), m.clone(), 10, frozen, 0).unwrap();
            let out = w.execute_option(0).unwrap();
            assert!(out.aborted);
            assert_eq!((out.steps, out.reward), (10, 0.0));
            assert!(w.is_done());
        }
    }

    #[test]
    fn frozen_model_matches_world() {
        let g = leaves(4);
        let mut m = MapSpec::empty(5, 5, (0, 0)).unwrap();
        m.add_object((4, 4), ObjectKind::Cow).unwrap();
        m.add_object((0, 3), ObjectKind::Milk).unwrap();
        m.add_object((2, 1), ObjectKind::Egg).unwrap();
        let mut w = GridWorld::from_map(g, m, 30, true, 0).unwrap();
        let (model, mut s) = FrozenModel::snapshot(&w).unwrap();
        for sub in [1, 3, 2, 0] {
            let out = w.execute_option(sub).unwrap();
            let (n, r, k) = model.step(&s, sub);
            assert_eq!((out.reward, out.steps), (r, k));
            assert_eq!(n.task, *w.state());
            assert_eq!(n.agent, w.map().agent());
            s = n;
        }
    }
}
