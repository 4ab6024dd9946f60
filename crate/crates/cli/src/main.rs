use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use graphexec::bench::{
    mean_normalized, mean_return, run_bench, run_curve, run_episodes, write_bench_csv, write_curve_csv,
    write_episode_csv, BenchConfig, CorpusEntry, Manifest, ManifestGraph,
};
use graphexec::gen::{
    enumerate_mining_subgraphs, generate_playground_graph, mining_template, preset, Preset, MINING_TRAIN_SPLIT,
};
use graphexec::graph::{SubtaskGraph, TaskState};
use graphexec::grprop::{grprop_scores, smoothed_eligibility, GrpropConfig, SmoothParams};
use graphexec::mcts::Guide;
use graphexec::policy::PolicyId;
use graphexec::rng::{mix_seed, rng_from};

const MANIFEST: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "graphexec", version, about = "Subtask-graph corpora, policies and benchmarks")]
struct Cli {
    /// Disable random object motion in every episode.
    #[arg(long, global = true)]
    freeze_stochastic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Propagation {
    OneHop,
    Recursive,
}

#[derive(clap::Args, Clone, Debug)]
struct ScorerArgs {
    /// How smoothed eligibility feeds higher layers.
    #[arg(long, value_enum, default_value = "recursive")]
    propagation: Propagation,
    /// Share of smoothed eligibility carried upward in recursive mode.
    #[arg(long, default_value_t = 1.0)]
    carry: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a graph corpus from a preset, or the Mining corpus with
    /// file names tagged by train or test split.
    GenGraphs {
        /// D1..D4, Base, Base-OR, Base+Distractor, Base+NOT,
        /// Base+NegDistractor, Base+Delayed, or mining.
        #[arg(long)]
        preset: String,
        /// Number of graphs; defaults to 500, or the whole Mining corpus.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one policy and write one row per episode.
    Run {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 16)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Aggregate several policies per graph, with normalised reward.
    Bench {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long, default_value = "random,greedy,grprop,optimal")]
        policies: String,
        #[arg(long, default_value_t = 16)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Append a wall-time column (makes output run-dependent).
        #[arg(long)]
        timing: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// MCTS return against per-episode simulated-step budgets.
    Curve {
        #[arg(long)]
        graphs: PathBuf,
        /// Comma-separated budgets; scientific notation accepted.
        #[arg(long, default_value = "1e3,1e4,1e5")]
        mcts_budgets: String,
        #[arg(long, default_value = "none")]
        guide: String,
        #[arg(long, default_value_t = 4)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        scorer: ScorerArgs,
    },
    /// Print a graph's structure and its GRProp scores at the start.
    Inspect {
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        scorer: ScorerArgs,
    },
}

#[derive(clap::Args, Clone, Debug)]
struct CommonArgs {
    /// Largest graph the exhaustive optimum will attempt.
    #[arg(long, default_value_t = 16)]
    optimal_guard: usize,
    /// MCTS iterations per episode, shared across its decisions.
    #[arg(long, default_value_t = 1000)]
    mcts_iterations: u64,
    #[command(flatten)]
    scorer: ScorerArgs,
}

fn scorer_config(args: &ScorerArgs, domain: graphexec::Domain) -> GrpropConfig<f64> {
    let smooth = SmoothParams::for_domain(domain);
    match args.propagation {
        Propagation::OneHop => GrpropConfig::one_hop(smooth),
        Propagation::Recursive => GrpropConfig::recursive(smooth, args.carry),
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

fn gen_graphs(preset_name: &str, count: Option<usize>, seed: u64, out: &Path, freeze: bool) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut graphs = Vec::new();
    let mut save = |id: String, g: &SubtaskGraph<f64>, gseed: Option<u64>| -> Result<()> {
        let file = format!("{id}.json");
        g.save(&out.join(&file)).with_context(|| format!("writing {file}"))?;
        graphs.push(ManifestGraph { id, file, preset: Some(preset_name.to_string()), seed: gseed });
        Ok(())
    };
    if preset_name.eq_ignore_ascii_case("mining") {
        let template = mining_template::<f64>();
        let mut rng = rng_from(seed);
        let corpus = enumerate_mining_subgraphs(&template, &mut rng)?;
        for (i, g) in corpus.iter().take(count.unwrap_or(corpus.len())).enumerate() {
            let id = match i.checked_sub(MINING_TRAIN_SPLIT) {
                None => format!("mining-train-{i:03}"),
                Some(k) => format!("mining-test-{k:03}"),
            };
            save(id, g, None)?;
        }
    } else {
        let p: Preset = preset_name.parse()?;
        let mut params = preset::<f64>(p.name())?;
        for i in 0..count.unwrap_or(500) {
            params.seed = mix_seed(seed, &[i as u64]);
            let g = generate_playground_graph(&params)?;
            save(format!("{}-{i:04}", file_stem(p.name())), &g, Some(params.seed))?;
        }
    }
    let manifest = Manifest {
        command: "gen-graphs".into(),
        seed,
        episodes: 0,
        freeze_stochastic: freeze,
        policies: Vec::new(),
        graphs,
        notes: Vec::new(),
    };
    fs::write(out.join(MANIFEST), manifest.to_json()?)?;
    eprintln!("wrote {} graphs to {}", manifest.graphs.len(), out.display());
    Ok(())
}

/// Every `*.json` graph in `dir` except the manifest, sorted by name.
/// Unreadable files are reported and skipped.
fn load_corpus(dir: &Path) -> Result<Vec<CorpusEntry<f64>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != MANIFEST))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        match SubtaskGraph::<f64>::load(&p) {
            Ok(g) => out.push(CorpusEntry {
                id: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                graph: Arc::new(g),
            }),
            Err(e) => eprintln!("skipping {}: {e}", p.display()),
        }
    }
    Ok(out)
}

fn parse_policies(s: &str) -> Result<Vec<PolicyId>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| Ok(t.parse()?)).collect()
}

fn parse_budgets(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().with_context(|| format!("bad budget `{t}`"))?;
            if !(v >= 1.0 && v.fract() == 0.0 && v < 1e15) {
                bail!("budget `{t}` must be a positive integer");
            }
            Ok(v as u64)
        })
        .collect()
}

fn bench_config(
    corpus: &[CorpusEntry<f64>],
    episodes: usize,
    seed: u64,
    freeze: bool,
    common: &CommonArgs,
) -> BenchConfig<f64> {
    let domain = corpus.first().map_or(graphexec::Domain::Playground, |e| e.graph.domain());
    BenchConfig {
        episodes,
        seed,
        freeze_stochastic: freeze,
        optimal_guard: common.optimal_guard,
        mcts_iterations: common.mcts_iterations,
        grprop: Some(scorer_config(&common.scorer, domain)),
        geometry: None,
    }
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &BenchConfig<f64>,
    policies: Vec<String>,
    corpus: &[CorpusEntry<f64>],
    notes: Vec<String>,
) -> Result<()> {
    let manifest = Manifest {
        command: command.into(),
        seed: cfg.seed,
        episodes: cfg.episodes,
        freeze_stochastic: cfg.freeze_stochastic,
        policies,
        graphs: corpus
            .iter()
            .map(|e| ManifestGraph { id: e.id.clone(), file: format!("{}.json", e.id), preset: None, seed: None })
            .collect(),
        notes,
    };
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest.json");
    fs::write(PathBuf::from(path), manifest.to_json()?)?;
    Ok(())
}

fn inspect(path: &Path, scorer: &ScorerArgs) -> Result<()> {
    let g = SubtaskGraph::<f64>::load(path)?;
    let cfg = scorer_config(scorer, g.domain());
    let mut out = io::stdout().lock();
    let (lo, hi) = g.step_budget_range();
    writeln!(out, "domain {}  subtasks {}  layers {}  budget {lo}..={hi}", g.domain(), g.n_subtasks(), g.n_layers())?;
    let state = TaskState::initial(&g, hi);
    let x = vec![0.0; g.n_subtasks()];
    let fwd = smoothed_eligibility(&g, &x, &cfg)?;
    let scores = grprop_scores(&g, &state, &cfg);
    writeln!(out, "{:>4} {:>5} {:>5} {:>8} {:>4} {:>8} {:>9}  precondition", "id", "label", "layer", "reward", "elig", "e_tilde", "score")?;
    for s in g.subtasks() {
        let pre: Vec<String> = g
            .or_children(s.id)
            .iter()
            .map(|&j| {
                let lits: Vec<String> = g.and_nodes()[j]
                    .children
                    .iter()
                    .map(|c| {
                        let l = &g.subtask(c.subtask).label;
                        if c.negated {
                            format!("!{l}")
                        } else {
                            l.clone()
                        }
                    })
                    .collect();
                format!("({})", lits.join(" & "))
            })
            .collect();
        writeln!(
            out,
            "{:>4} {:>5} {:>5} {:>8.4} {:>4} {:>8.4} {:>9.5}  {}",
            s.id,
            s.label,
            s.layer,
            s.reward,
            u8::from(state.eligibility.contains(s.id)),
            fwd.e_tilde[s.id],
            scores[s.id],
            if pre.is_empty() { "-".into() } else { pre.join(" | ") }
        )?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match run(Cli::parse()) {
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => Ok(()),
        other => other,
    }
}

fn run(cli: Cli) -> Result<()> {
    let freeze = cli.freeze_stochastic;
    match cli.command {
        Command::GenGraphs { preset, count, seed, out } => gen_graphs(&preset, count, seed, &out, freeze)?,
        Command::Run { graphs, policy, episodes, seed, out, common } => {
            let corpus = load_corpus(&graphs)?;
            let policies = parse_policies(&policy)?;
            let cfg = bench_config(&corpus, episodes, seed, freeze, &common);
            let rows = run_episodes(&corpus, &policies, &cfg)?;
            write_episode_csv(fs::File::create(&out)?, &rows)?;
            write_manifest(&out, "run", &cfg, policies.iter().map(|p| p.to_string()).collect(), &corpus, vec![])?;
        }
        Command::Bench { graphs, policies, episodes, seed, out, timing, common } => {
            let corpus = load_corpus(&graphs)?;
            let policies = parse_policies(&policies)?;
            let cfg = bench_config(&corpus, episodes, seed, freeze, &common);
            let rows = run_bench(&corpus, &policies, &cfg)?;
            write_bench_csv(fs::File::create(&out)?, &rows, timing)?;
            let mut notes = vec!["optimal is computed on frozen copies of each episode's world".to_string()];
            for &p in &policies {
                let line = match (mean_normalized(&rows, p), mean_return(&rows, p)) {
                    (Some(n), Some(r)) => format!("{p}: mean return {r:.4}, mean normalized {n:.4}"),
                    (None, Some(r)) => format!("{p}: mean return {r:.4}"),
                    _ => continue,
                };
                eprintln!("{line}");
                notes.push(line);
            }
            write_manifest(&out, "bench", &cfg, policies.iter().map(|p| p.to_string()).collect(), &corpus, notes)?;
        }
        Command::Curve { graphs, mcts_budgets, guide, episodes, seed, out, scorer } => {
            let corpus = load_corpus(&graphs)?;
            let budgets = parse_budgets(&mcts_budgets)?;
            let guide = match guide.as_str() {
                "none" => Guide::Random,
                "grprop" => Guide::Grprop,
                other => bail!("unknown guide `{other}` (expected none or grprop)"),
            };
            let common = CommonArgs { optimal_guard: 16, mcts_iterations: 1, scorer };
            let cfg = bench_config(&corpus, episodes, seed, freeze, &common);
            let rows = run_curve(&corpus, &budgets, guide, &cfg)?;
            write_curve_csv(fs::File::create(&out)?, &rows)?;
            write_manifest(&out, "curve", &cfg, vec![graphexec::bench::guide_tag(guide).into()], &corpus, vec![])?;
        }
        Command::Inspect { graph, scorer } => inspect(&graph, &scorer)?,
    }
    Ok(())
}
