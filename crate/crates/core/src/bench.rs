//! Benchmark orchestration: per-episode runs, aggregated rows, normalised
//! reward, MCTS budget curves, and their text outputs.
//!
//! Every episode gets a seed derived from the corpus seed, the graph id and
//! the episode index. All policies see the same worlds, and results are
//! independent of thread scheduling.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Domain, SubtaskGraph};
use crate::grprop::GrpropConfig;
use crate::mcts::{Guide, MctsConfig, MctsPolicy};
use crate::policy::{GreedyPolicy, GrpropPolicy, OptimalPolicy, PolicyId, RandomPolicy, DEFAULT_OPTIMAL_GUARD};
use crate::rng::{mix_seed, rng_from};
use crate::scalar::Scalar;
use crate::world::{run_in_world, EpisodeConfig, GridWorld, MapGeometry, Policy};

pub const DEFAULT_EPISODES: usize = 16;

/// `(R - R_min) / (R_max - R_min)`; `None` when the range is empty.
pub fn normalized_reward(r: f64, r_min: f64, r_max: f64) -> Result<Option<f64>> {
    if r_max < r_min {
        return Err(Error::Data(format!("R_max {r_max} below R_min {r_min}")));
    }
    if r_max == r_min {
        return Ok(None);
    }
    Ok(Some((r - r_min) / (r_max - r_min)))
}

/// 64-bit FNV-1a, used to turn graph ids into seed coordinates.
pub fn graph_key(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed of episode `episode` of graph `graph_id`.
pub fn episode_seed(corpus_seed: u64, graph_id: &str, episode: usize) -> u64 {
    mix_seed(corpus_seed, &[graph_key(graph_id), episode as u64])
}

/// A named graph of a corpus.
#[derive(Clone, Debug)]
pub struct CorpusEntry<T> {
    pub id: String,
    pub graph: Arc<SubtaskGraph<T>>,
}

/// Knobs shared by every benchmark command.
#[derive(Clone, Debug)]
pub struct BenchConfig<T> {
    pub episodes: usize,
    pub seed: u64,
    pub freeze_stochastic: bool,
    pub optimal_guard: usize,
    pub mcts_iterations: u64,
    /// Overrides the per-domain GRProp configuration.
    pub grprop: Option<GrpropConfig<T>>,
    pub geometry: Option<MapGeometry>,
}

impl<T: Scalar> Default for BenchConfig<T> {
    fn default() -> Self {
        BenchConfig {
            episodes: DEFAULT_EPISODES,
            seed: 0,
            freeze_stochastic: false,
            optimal_guard: DEFAULT_OPTIMAL_GUARD,
            mcts_iterations: 1000,
            grprop: None,
            geometry: None,
        }
    }
}

impl<T: Scalar> BenchConfig<T> {
    pub fn grprop_for(&self, d: Domain) -> GrpropConfig<T> {
        self.grprop.unwrap_or_else(|| GrpropConfig::for_domain(d))
    }

    pub fn episode_config(&self, graph: &Arc<SubtaskGraph<T>>, graph_id: &str, episode: usize) -> EpisodeConfig<T> {
        let mut cfg = EpisodeConfig::new(graph.clone(), episode_seed(self.seed, graph_id, episode))
            .frozen(self.freeze_stochastic);
        if let Some(g) = self.geometry {
            cfg.geometry = g;
        }
        cfg
    }

    pub fn make_policy(&self, id: PolicyId, domain: Domain) -> Box<dyn Policy<T> + Send> {
        let mcts = |guide| {
            let mut c = MctsConfig::for_domain(domain, guide).with_iterations(self.mcts_iterations);
            c.grprop = self.grprop_for(domain);
            MctsPolicy::new(c)
        };
        match id {
            PolicyId::Random => Box::new(RandomPolicy),
            PolicyId::Greedy => Box::new(GreedyPolicy),
            PolicyId::Grprop => Box::new(GrpropPolicy::new(self.grprop_for(domain))),
            PolicyId::Optimal => Box::new(OptimalPolicy::new(self.optimal_guard)),
            PolicyId::Mcts => Box::new(mcts(Guide::Random)),
            PolicyId::MctsGrprop => Box::new(mcts(Guide::Grprop)),
        }
    }
}

/// One episode of one policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub graph_id: String,
    pub policy: PolicyId,
    pub episode: usize,
    pub seed: u64,
    pub budget: u32,
    pub total_return: f64,
    pub steps_used: u32,
    pub options: usize,
    pub simulated_steps: u64,
    #[serde(skip)]
    pub wall_time: f64,
}

/// Runs one episode of `policy`. The optimum is always computed on a
/// frozen copy of the world.
pub fn run_one<T: Scalar>(
    entry: &CorpusEntry<T>,
    policy: PolicyId,
    episode: usize,
    cfg: &BenchConfig<T>,
) -> Result<EpisodeRow> {
    let ecfg = cfg.episode_config(&entry.graph, &entry.id, episode);
    let mut world = GridWorld::new(&ecfg)?;
    if policy == PolicyId::Optimal {
        world = world.frozen_clone();
        if entry.graph.n_subtasks() > cfg.optimal_guard {
            return Err(Error::Intractable { n: entry.graph.n_subtasks(), guard: cfg.optimal_guard });
        }
    }
    let mut p = cfg.make_policy(policy, entry.graph.domain());
    let mut rng = rng_from(mix_seed(ecfg.policy_seed(), &[policy as u64]));
    let start = Instant::now();
    let rec = run_in_world(&mut world, p.as_mut(), &mut rng, ecfg.seed)?;
    Ok(EpisodeRow {
        graph_id: entry.id.clone(),
        policy,
        episode,
        seed: ecfg.seed,
        budget: rec.budget,
        total_return: rec.total_return.as_f64(),
        steps_used: rec.steps_used,
        options: rec.steps.len(),
        simulated_steps: rec.simulated_steps,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Every episode of every `(graph, policy)` pair, ordered by graph id,
/// policy, then episode.
pub fn run_episodes<T: Scalar>(
    corpus: &[CorpusEntry<T>],
    policies: &[PolicyId],
    cfg: &BenchConfig<T>,
) -> Result<Vec<EpisodeRow>> {
    let mut order: Vec<&CorpusEntry<T>> = corpus.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut policies = policies.to_vec();
    policies.sort();
    policies.dedup();
    let jobs: Vec<(&CorpusEntry<T>, PolicyId, usize)> = order
        .iter()
        .flat_map(|e| policies.iter().flat_map(move |&p| (0..cfg.episodes).map(move |k| (*e, p, k))))
        .collect();
    jobs.into_par_iter().map(|(e, p, k)| run_one(e, p, k, cfg)).collect()
}

/// Aggregated result of one `(graph, policy)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub graph_id: String,
    pub domain: Domain,
    pub policy: PolicyId,
    pub episodes: usize,
    pub mean_return: f64,
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    /// Normalised reward; `None` when undefined or not reported.
    pub normalized: Option<f64>,
    pub simulated_steps: u64,
    #[serde(skip)]
    pub wall_time: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Runs the requested policies and aggregates them per graph. Playground
/// rows are normalised against Random (0) and the frozen optimum (1), which
/// are run on the same episode seeds; Mining rows report raw means.
pub fn run_bench<T: Scalar>(
    corpus: &[CorpusEntry<T>],
    policies: &[PolicyId],
    cfg: &BenchConfig<T>,
) -> Result<Vec<BenchRow>> {
    let mut needed = policies.to_vec();
    let normalise: Vec<bool> = corpus.iter().map(|e| e.graph.domain() == Domain::Playground).collect();
    if normalise.iter().any(|&b| b) {
        needed.extend([PolicyId::Random, PolicyId::Optimal]);
    }
    needed.sort();
    needed.dedup();

    // Mining graphs skip the optimum.
    let mut order: Vec<&CorpusEntry<T>> = corpus.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let jobs: Vec<(&CorpusEntry<T>, PolicyId, usize)> = order
        .iter()
        .flat_map(|e| {
            let pl = e.graph.domain() == Domain::Playground;
            needed
                .iter()
                .filter(move |&&p| pl || policies.contains(&p))
                .flat_map(move |&p| (0..cfg.episodes).map(move |k| (*e, p, k)))
        })
        .collect();
    let rows: Vec<EpisodeRow> = jobs.into_par_iter().map(|(e, p, k)| run_one(e, p, k, cfg)).collect::<Result<_>>()?;

    let mut out = Vec::new();
    for e in order {
        let of = |p: PolicyId| rows.iter().filter(move |r| r.graph_id == e.id && r.policy == p);
        let playground = e.graph.domain() == Domain::Playground;
        let (r_min, r_max) = if playground {
            (Some(mean(of(PolicyId::Random).map(|r| r.total_return))), Some(mean(of(PolicyId::Optimal).map(|r| r.total_return))))
        } else {
            (None, None)
        };
        let mut ps = policies.to_vec();
        ps.sort();
        ps.dedup();
        for p in ps {
            let m = mean(of(p).map(|r| r.total_return));
            let normalized = match (r_min, r_max) {
                (Some(lo), Some(hi)) => normalized_reward(m, lo, hi).ok().flatten(),
                _ => None,
            };
            out.push(BenchRow {
                graph_id: e.id.clone(),
                domain: e.graph.domain(),
                policy: p,
                episodes: cfg.episodes,
                mean_return: m,
                r_min,
                r_max,
                normalized,
                simulated_steps: of(p).map(|r| r.simulated_steps).sum(),
                wall_time: of(p).map(|r| r.wall_time).sum(),
            });
        }
    }
    Ok(out)
}

/// Mean of the defined normalised rewards of `policy`.
pub fn mean_normalized(rows: &[BenchRow], policy: PolicyId) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.policy == policy).filter_map(|r| r.normalized).collect();
    (!v.is_empty()).then(|| mean(v.into_iter()))
}

/// Mean raw return of `policy` across graphs.
pub fn mean_return(rows: &[BenchRow], policy: PolicyId) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.policy == policy).map(|r| r.mean_return).collect();
    (!v.is_empty()).then(|| mean(v.into_iter()))
}

/// One episode of an MCTS budget sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub graph_id: String,
    pub guide: String,
    /// Simulated steps allowed over the episode.
    pub budget: u64,
    pub episode: usize,
    pub seed: u64,
    pub iterations: u64,
    pub simulated_steps: u64,
    pub rollout_steps: u64,
    pub total_return: f64,
}

/// Runs MCTS under each episode step budget.
pub fn run_curve<T: Scalar>(
    corpus: &[CorpusEntry<T>],
    budgets: &[u64],
    guide: Guide,
    cfg: &BenchConfig<T>,
) -> Result<Vec<CurveRow>> {
    let mut order: Vec<&CorpusEntry<T>> = corpus.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let jobs: Vec<(&CorpusEntry<T>, u64, usize)> = order
        .iter()
        .flat_map(|e| budgets.iter().flat_map(move |&b| (0..cfg.episodes).map(move |k| (*e, b, k))))
        .collect();
    jobs.into_par_iter()
        .map(|(e, budget, k)| {
            let ecfg = cfg.episode_config(&e.graph, &e.id, k);
            let mut world = GridWorld::new(&ecfg)?;
            let domain = e.graph.domain();
            let mut mcfg = MctsConfig::for_domain(domain, guide).with_steps(budget);
            mcfg.grprop = cfg.grprop_for(domain);
            let mut p = MctsPolicy::new(mcfg);
            let mut rng = rng_from(mix_seed(ecfg.policy_seed(), &[budget]));
            let rec = run_in_world(&mut world, &mut p, &mut rng, ecfg.seed)?;
            let d = p.diagnostics();
            Ok(CurveRow {
                graph_id: e.id.clone(),
                guide: guide_tag(guide).into(),
                budget,
                episode: k,
                seed: ecfg.seed,
                iterations: d.iterations,
                simulated_steps: d.simulated_steps,
                rollout_steps: d.rollout_steps,
                total_return: rec.total_return.as_f64(),
            })
        })
        .collect()
}

pub fn guide_tag(g: Guide) -> &'static str {
    match g {
        Guide::Random => "none",
        Guide::Grprop => "grprop",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

/// Bench rows as CSV. Wall time is appended only when `timing` is set,
/// since it differs between runs.
pub fn write_bench_csv<W: Write>(out: W, rows: &[BenchRow], timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "graph_id",
        "domain",
        "policy",
        "episodes",
        "mean_return",
        "r_min",
        "r_max",
        "normalized",
        "simulated_steps",
    ];
    if timing {
        header.push("wall_time_s");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.graph_id.clone(),
            r.domain.to_string(),
            r.policy.to_string(),
            r.episodes.to_string(),
            format!("{:.6}", r.mean_return),
            opt(r.r_min),
            opt(r.r_max),
            opt(r.normalized),
            r.simulated_steps.to_string(),
        ];
        if timing {
            rec.push(format!("{:.3}", r.wall_time));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_episode_csv<W: Write>(out: W, rows: &[EpisodeRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "graph_id",
        "policy",
        "episode",
        "seed",
        "budget",
        "return",
        "steps_used",
        "options",
        "simulated_steps",
    ])?;
    for r in rows {
        w.write_record([
            r.graph_id.clone(),
            r.policy.to_string(),
            r.episode.to_string(),
            r.seed.to_string(),
            r.budget.to_string(),
            format!("{:.6}", r.total_return),
            r.steps_used.to_string(),
            r.options.to_string(),
            r.simulated_steps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv<W: Write>(out: W, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(CurveCsv {
            graph_id: &r.graph_id,
            guide: &r.guide,
            budget: r.budget,
            episode: r.episode,
            seed: r.seed,
            iterations: r.iterations,
            simulated_steps: r.simulated_steps,
            rollout_steps: r.rollout_steps,
            r#return: format!("{:.6}", r.total_return),
        })?;
    }
    if rows.is_empty() {
        w.write_record([
            "graph_id",
            "guide",
            "budget",
            "episode",
            "seed",
            "iterations",
            "simulated_steps",
            "rollout_steps",
            "return",
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveCsv<'a> {
    graph_id: &'a str,
    guide: &'a str,
    budget: u64,
    episode: usize,
    seed: u64,
    iterations: u64,
    simulated_steps: u64,
    rollout_steps: u64,
    r#return: String,
}

/// Machine-readable record of a run's inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub episodes: usize,
    pub freeze_stochastic: bool,
    pub policies: Vec<String>,
    pub graphs: Vec<ManifestGraph>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestGraph {
    pub id: String,
    pub file: String,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
