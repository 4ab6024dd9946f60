//! Subtask graphs and their exact boolean semantics.
//!
//! A graph holds `N` subtasks. Each subtask has a precondition in
//! sum-of-products form: an OR over AND nodes, where every AND node is a
//! conjunction of (possibly negated) completion literals. A subtask with no
//! AND nodes is always satisfiable.
//!
//! Completion and eligibility vectors are bit sets ([`SubtaskSet`]), which
//! caps graphs at 64 subtasks.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type SubtaskId = usize;

/// Upper bound on `N` imposed by the bit-set representation.
pub const MAX_SUBTASKS: usize = 64;

/// Current version written into graph files.
pub const FORMAT_VERSION: u32 = 1;

/// A set of subtask ids packed into a `u64`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubtaskSet(pub u64);

impl SubtaskSet {
    pub const EMPTY: SubtaskSet = SubtaskSet(0);

    #[inline]
    pub fn contains(self, i: SubtaskId) -> bool {
        self.0 >> i & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, i: SubtaskId) {
        self.0 |= 1 << i;
    }

    #[inline]
    pub fn with(self, i: SubtaskId) -> SubtaskSet {
        SubtaskSet(self.0 | 1 << i)
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Ids in increasing order.
    pub fn iter(self) -> impl Iterator<Item = SubtaskId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            Some(i)
        })
    }

    /// Lowest id in the set.
    pub fn first(self) -> Option<SubtaskId> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    pub fn from_bools(bits: &[bool]) -> SubtaskSet {
        let mut s = SubtaskSet::EMPTY;
        for (i, &b) in bits.iter().enumerate() {
            if b {
                s.insert(i);
            }
        }
        s
    }

    pub fn to_bools(self, n: usize) -> Vec<bool> {
        (0..n).map(|i| self.contains(i)).collect()
    }

    /// Mask with the low `n` bits set.
    pub fn full(n: usize) -> SubtaskSet {
        if n >= 64 {
            SubtaskSet(u64::MAX)
        } else {
            SubtaskSet((1u64 << n) - 1)
        }
    }
}

impl fmt::Debug for SubtaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl FromIterator<SubtaskId> for SubtaskSet {
    fn from_iter<I: IntoIterator<Item = SubtaskId>>(iter: I) -> Self {
        let mut s = SubtaskSet::EMPTY;
        for i in iter {
            s.insert(i);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSpec<T> {
    pub id: SubtaskId,
    pub label: String,
    pub layer: usize,
    pub reward: T,
}

/// One literal of an AND node: the completion flag of `subtask`, inverted
/// when `negated` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Literal {
    pub subtask: SubtaskId,
    pub negated: bool,
}

impl Literal {
    pub fn pos(subtask: SubtaskId) -> Self {
        Literal { subtask, negated: false }
    }

    pub fn neg(subtask: SubtaskId) -> Self {
        Literal { subtask, negated: true }
    }

    /// `+1` for a plain connection, `-1` for a NOT connection.
    pub fn sign(self) -> i8 {
        if self.negated {
            -1
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AndNode {
    pub id: usize,
    pub children: Vec<Literal>,
}

/// Pre-packed AND node: satisfied iff every `pos` bit is set and no `neg`
/// bit is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct AndMask {
    pos: u64,
    neg: u64,
}

impl AndMask {
    #[inline]
    fn satisfied(self, x: u64) -> bool {
        x & self.pos == self.pos && x & self.neg == 0
    }
}

/// Immutable AND/OR/NOT subtask graph.
#[derive(Clone, Debug, PartialEq)]
pub struct SubtaskGraph<T> {
    subtasks: Vec<SubtaskSpec<T>>,
    and_nodes: Vec<AndNode>,
    or_children: Vec<Vec<usize>>,
    step_budget_range: (u32, u32),
    domain: Domain,
    masks: Vec<AndMask>,
    /// For each subtask, the union of all literals feeding its precondition.
    precond_support: Vec<SubtaskSet>,
    /// Subtasks ordered by layer (ties by id).
    topo: Vec<SubtaskId>,
}

/// Which environment family a graph belongs to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Playground,
    Mining,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Playground => "playground",
            Domain::Mining => "mining",
        })
    }
}

impl<T: Scalar> SubtaskGraph<T> {
    /// Builds and validates a graph. `or_children[i]` lists the AND node ids
    /// whose disjunction is the precondition of subtask `i`.
    pub fn new(
        subtasks: Vec<SubtaskSpec<T>>,
        and_nodes: Vec<AndNode>,
        or_children: Vec<Vec<usize>>,
        step_budget_range: (u32, u32),
    ) -> Result<Self> {
        Self::with_domain(subtasks, and_nodes, or_children, step_budget_range, Domain::Playground)
    }

    pub fn with_domain(
        subtasks: Vec<SubtaskSpec<T>>,
        and_nodes: Vec<AndNode>,
        or_children: Vec<Vec<usize>>,
        step_budget_range: (u32, u32),
        domain: Domain,
    ) -> Result<Self> {
        let n = subtasks.len();
        if n > MAX_SUBTASKS {
            return Err(Error::Structure(format!("{n} subtasks exceeds limit of {MAX_SUBTASKS}")));
        }
        if or_children.len() != n {
            return Err(Error::Structure(format!(
                "or_children has {} entries for {n} subtasks",
                or_children.len()
            )));
        }
        for (i, s) in subtasks.iter().enumerate() {
            if s.id != i {
                return Err(Error::Structure(format!("subtask at position {i} has id {}", s.id)));
            }
            if !s.reward.is_finite() {
                return Err(Error::Structure(format!("subtask {i} has non-finite reward")));
            }
        }
        for (j, a) in and_nodes.iter().enumerate() {
            if a.id != j {
                return Err(Error::Structure(format!("AND node at position {j} has id {}", a.id)));
            }
            if a.children.is_empty() {
                return Err(Error::Structure(format!("AND node {j} has no children")));
            }
            let mut seen = HashSet::new();
            for c in &a.children {
                if c.subtask >= n {
                    return Err(Error::Structure(format!(
                        "AND node {j} references missing subtask {}",
                        c.subtask
                    )));
                }
                if !seen.insert(c.subtask) {
                    return Err(Error::Structure(format!(
                        "AND node {j} lists subtask {} twice",
                        c.subtask
                    )));
                }
            }
        }
        let (lo, hi) = step_budget_range;
        if lo > hi {
            return Err(Error::Structure(format!("step budget range {lo}..={hi} is empty")));
        }

        let masks: Vec<AndMask> = and_nodes
            .iter()
            .map(|a| {
                let mut m = AndMask { pos: 0, neg: 0 };
                for c in &a.children {
                    if c.negated {
                        m.neg |= 1 << c.subtask;
                    } else {
                        m.pos |= 1 << c.subtask;
                    }
                }
                m
            })
            .collect();

        let mut precond_support = vec![SubtaskSet::EMPTY; n];
        for (i, ors) in or_children.iter().enumerate() {
            let mut distinct = HashSet::new();
            for &j in ors {
                let Some(a) = and_nodes.get(j) else {
                    return Err(Error::Structure(format!(
                        "subtask {i} references missing AND node {j}"
                    )));
                };
                if !distinct.insert(masks[j]) {
                    return Err(Error::Structure(format!(
                        "subtask {i} has duplicated AND nodes with identical children"
                    )));
                }
                for c in &a.children {
                    if subtasks[c.subtask].layer >= subtasks[i].layer {
                        return Err(Error::Structure(format!(
                            "subtask {i} (layer {}) depends on subtask {} (layer {})",
                            subtasks[i].layer, c.subtask, subtasks[c.subtask].layer
                        )));
                    }
                    precond_support[i].insert(c.subtask);
                }
            }
        }

        // A parentless-precondition subtask above layer 0 must be a distractor,
        // so it may only ever appear negated.
        for (i, s) in subtasks.iter().enumerate() {
            if s.layer > 0 && or_children[i].is_empty() {
                let positive_use = or_children.iter().flatten().any(|&j| {
                    and_nodes[j].children.iter().any(|c| c.subtask == i && !c.negated)
                });
                if positive_use {
                    return Err(Error::Structure(format!(
                        "subtask {i} has no precondition above layer 0 but is a positive child"
                    )));
                }
            }
        }

        let mut topo: Vec<SubtaskId> = (0..n).collect();
        topo.sort_by_key(|&i| (subtasks[i].layer, i));

        Ok(SubtaskGraph {
            subtasks,
            and_nodes,
            or_children,
            step_budget_range,
            domain,
            masks,
            precond_support,
            topo,
        })
    }

    #[inline]
    pub fn n_subtasks(&self) -> usize {
        self.subtasks.len()
    }

    pub fn subtasks(&self) -> &[SubtaskSpec<T>] {
        &self.subtasks
    }

    pub fn subtask(&self, i: SubtaskId) -> &SubtaskSpec<T> {
        &self.subtasks[i]
    }

    pub fn and_nodes(&self) -> &[AndNode] {
        &self.and_nodes
    }

    pub fn or_children(&self, i: SubtaskId) -> &[usize] {
        &self.or_children[i]
    }

    pub fn step_budget_range(&self) -> (u32, u32) {
        self.step_budget_range
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    #[inline]
    pub fn reward(&self, i: SubtaskId) -> T {
        self.subtasks[i].reward
    }

    pub fn rewards(&self) -> Vec<T> {
        self.subtasks.iter().map(|s| s.reward).collect()
    }

    pub fn n_layers(&self) -> usize {
        self.subtasks.iter().map(|s| s.layer + 1).max().unwrap_or(0)
    }

    /// Subtasks in non-decreasing layer order; every precondition literal of
    /// a subtask appears before it.
    pub fn topological_order(&self) -> &[SubtaskId] {
        &self.topo
    }

    /// True when the subtask has an empty precondition.
    pub fn is_leaf(&self, i: SubtaskId) -> bool {
        self.or_children[i].is_empty()
    }

    /// Every subtask that appears in any AND node of `i`'s precondition.
    pub fn precondition_support(&self, i: SubtaskId) -> SubtaskSet {
        self.precond_support[i]
    }

    /// Leaf subtasks whose parent connections (if any) are all NOT
    /// connections.
    pub fn distractors(&self) -> SubtaskSet {
        let mut positive = 0u64;
        for m in &self.masks {
            positive |= m.pos;
        }
        (0..self.n_subtasks())
            .filter(|&i| self.is_leaf(i) && positive >> i & 1 == 0)
            .collect()
    }

    /// Subtasks that appear only as negated children and never positively.
    pub fn negated_only(&self) -> SubtaskSet {
        let mut pos = 0u64;
        let mut neg = 0u64;
        for m in &self.masks {
            pos |= m.pos;
            neg |= m.neg;
        }
        SubtaskSet(neg & !pos)
    }

    /// Whether the precondition of `i` holds under `completion`.
    #[inline]
    pub fn precondition_holds(&self, i: SubtaskId, completion: SubtaskSet) -> bool {
        let ors = &self.or_children[i];
        ors.is_empty() || ors.iter().any(|&j| self.masks[j].satisfied(completion.0))
    }

    /// Eligibility vector: precondition satisfied and never executed.
    pub fn eligibility(&self, completion: SubtaskSet) -> SubtaskSet {
        let mut e = SubtaskSet::EMPTY;
        for i in 0..self.n_subtasks() {
            if !completion.contains(i) && self.precondition_holds(i, completion) {
                e.insert(i);
            }
        }
        e
    }

    /// Checked variant of [`Self::eligibility`]: rejects bits outside `0..N`.
    pub fn compute_eligibility(&self, completion: SubtaskSet) -> Result<SubtaskSet> {
        let extra = completion.0 & !SubtaskSet::full(self.n_subtasks()).0;
        if extra != 0 {
            return Err(Error::Structure(format!(
                "completion vector has bits beyond N = {}",
                self.n_subtasks()
            )));
        }
        Ok(self.eligibility(completion))
    }

    /// Eligibility over plain boolean vectors.
    pub fn compute_eligibility_vec(&self, completion: &[bool]) -> Result<Vec<bool>> {
        if completion.len() != self.n_subtasks() {
            return Err(Error::Structure(format!(
                "completion vector has length {}, expected {}",
                completion.len(),
                self.n_subtasks()
            )));
        }
        Ok(self
            .eligibility(SubtaskSet::from_bools(completion))
            .to_bools(self.n_subtasks()))
    }

    /// `rᵀ x` for a completion set.
    pub fn completed_reward(&self, completion: SubtaskSet) -> T {
        completion.iter().map(|i| self.reward(i)).sum()
    }

    /// Canonical structural fingerprint; insensitive to AND node numbering
    /// and to the order of AND nodes under a subtask.
    pub fn canonical_form(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n_subtasks() {
            let mut terms: Vec<Vec<Literal>> = self.or_children[i]
                .iter()
                .map(|&j| {
                    let mut c = self.and_nodes[j].children.clone();
                    c.sort();
                    c
                })
                .collect();
            terms.sort();
            out.push_str(&format!("{}@{}:", i, self.subtasks[i].layer));
            for t in terms {
                out.push('(');
                for l in t {
                    if l.negated {
                        out.push('!');
                    }
                    out.push_str(&l.subtask.to_string());
                    out.push(',');
                }
                out.push(')');
            }
            out.push(';');
        }
        out
    }

    /// Returns a copy with per-subtask rewards replaced.
    pub fn with_rewards(&self, rewards: &[T]) -> Result<Self> {
        if rewards.len() != self.n_subtasks() {
            return Err(Error::Structure("reward vector length mismatch".into()));
        }
        let mut g = self.clone();
        for (s, &r) in g.subtasks.iter_mut().zip(rewards) {
            s.reward = r;
        }
        Ok(g)
    }

    pub fn with_step_budget_range(&self, range: (u32, u32)) -> Result<Self> {
        if range.0 > range.1 {
            return Err(Error::Structure("empty step budget range".into()));
        }
        let mut g = self.clone();
        g.step_budget_range = range;
        Ok(g)
    }

    /// Keeps only the subtasks in `keep`, renumbering them densely in
    /// increasing id order. AND nodes touching a removed subtask are dropped.
    pub fn restrict(&self, keep: SubtaskSet) -> Result<Self> {
        let old_ids: Vec<SubtaskId> = keep.iter().filter(|&i| i < self.n_subtasks()).collect();
        let mut remap = vec![usize::MAX; self.n_subtasks()];
        for (new, &old) in old_ids.iter().enumerate() {
            remap[old] = new;
        }
        let mut and_nodes = Vec::new();
        let mut and_remap = vec![usize::MAX; self.and_nodes.len()];
        for (j, a) in self.and_nodes.iter().enumerate() {
            if a.children.iter().all(|c| keep.contains(c.subtask)) {
                and_remap[j] = and_nodes.len();
                and_nodes.push(AndNode {
                    id: and_nodes.len(),
                    children: a
                        .children
                        .iter()
                        .map(|c| Literal { subtask: remap[c.subtask], negated: c.negated })
                        .collect(),
                });
            }
        }
        let mut subtasks = Vec::new();
        let mut or_children = Vec::new();
        for &old in &old_ids {
            let s = &self.subtasks[old];
            subtasks.push(SubtaskSpec {
                id: subtasks.len(),
                label: s.label.clone(),
                layer: s.layer,
                reward: s.reward,
            });
            let ors = &self.or_children[old];
            let kept: Vec<usize> = ors
                .iter()
                .filter(|&&j| and_remap[j] != usize::MAX)
                .map(|&j| and_remap[j])
                .collect();
            if !ors.is_empty() && kept.is_empty() {
                return Err(Error::Structure(format!(
                    "restriction removes every precondition term of subtask {old}"
                )));
            }
            or_children.push(kept);
        }
        SubtaskGraph::with_domain(subtasks, and_nodes, or_children, self.step_budget_range, self.domain)
    }

    pub fn to_file(&self) -> GraphFile<T> {
        GraphFile {
            version: FORMAT_VERSION,
            domain: self.domain,
            n_subtasks: self.n_subtasks(),
            subtasks: self.subtasks.clone(),
            and_nodes: self.and_nodes.clone(),
            or_children: self
                .or_children
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.clone()))
                .collect(),
            step_budget_range: [self.step_budget_range.0, self.step_budget_range.1],
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: GraphFile<T> = serde_json::from_str(text)?;
        f.into_graph()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// On-disk representation of a graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile<T> {
    pub version: u32,
    #[serde(default)]
    pub domain: Domain,
    pub n_subtasks: usize,
    pub subtasks: Vec<SubtaskSpec<T>>,
    pub and_nodes: Vec<AndNode>,
    pub or_children: BTreeMap<SubtaskId, Vec<usize>>,
    pub step_budget_range: [u32; 2],
}

impl<T: Scalar> GraphFile<T> {
    pub fn into_graph(self) -> Result<SubtaskGraph<T>> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Structure(format!("unsupported graph format version {}", self.version)));
        }
        if self.n_subtasks != self.subtasks.len() {
            return Err(Error::Structure(format!(
                "n_subtasks = {} but {} subtasks listed",
                self.n_subtasks,
                self.subtasks.len()
            )));
        }
        let mut or_children = vec![Vec::new(); self.n_subtasks];
        for (i, v) in self.or_children {
            let slot = or_children
                .get_mut(i)
                .ok_or_else(|| Error::Structure(format!("or_children names missing subtask {i}")))?;
            *slot = v;
        }
        SubtaskGraph::with_domain(
            self.subtasks,
            self.and_nodes,
            or_children,
            (self.step_budget_range[0], self.step_budget_range[1]),
            self.domain,
        )
    }
}

/// Progress of one episode over a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TaskState {
    pub completion: SubtaskSet,
    pub eligibility: SubtaskSet,
    pub remaining_steps: u32,
}

impl TaskState {
    pub fn initial<T: Scalar>(graph: &SubtaskGraph<T>, budget: u32) -> Self {
        Self::from_completion(graph, SubtaskSet::EMPTY, budget)
    }

    pub fn from_completion<T: Scalar>(graph: &SubtaskGraph<T>, completion: SubtaskSet, budget: u32) -> Self {
        TaskState { completion, eligibility: graph.eligibility(completion), remaining_steps: budget }
    }

    pub fn is_done(&self) -> bool {
        self.remaining_steps == 0 || self.eligibility.is_empty()
    }
}

/// Applies one execution attempt of `subtask`. The budget is left untouched;
/// durations belong to the environment.
pub fn execute_subtask<T: Scalar>(
    graph: &SubtaskGraph<T>,
    state: &TaskState,
    subtask: SubtaskId,
) -> Result<(TaskState, T)> {
    if subtask >= graph.n_subtasks() {
        return Err(Error::Structure(format!(
            "subtask {subtask} out of range for N = {}",
            graph.n_subtasks()
        )));
    }
    if !state.eligibility.contains(subtask) {
        return Ok((*state, T::zero()));
    }
    let completion = state.completion.with(subtask);
    Ok((
        TaskState {
            completion,
            eligibility: graph.eligibility(completion),
            remaining_steps: state.remaining_steps,
        },
        graph.reward(subtask),
    ))
}

/// Undiscounted sum of rewards.
pub fn episode_return<T: Scalar>(rewards: &[T]) -> T {
    rewards.iter().copied().sum()
}
