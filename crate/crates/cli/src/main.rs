use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sparselb::harness::{self, AblationConfig, CellResult, ExperimentConfig, RunOptions};
use sparselb::mfcenv::{EnvConfig, ObservationMode};
use sparselb::trainer::{self, CemConfig, Checkpoint, TrainMethod, TrainerConfig, CHECKPOINT_VERSION};
use sparselb::{Execution, PolicySpec, SystemParams, TopologySpec};

#[derive(Debug, Parser)]
#[command(name = "sparselb", version, about = "Load balancing on sparse graphs with delayed queue information")]
struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON config file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Record wall-clock seconds in result files (makes them non-reproducible).
    #[arg(long, global = true)]
    timing: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a topology and report its size and degree profile.
    TopologyInfo {
        #[arg(long)]
        topology: String,
        /// Also write the edge list to <out>/topology.txt.
        #[arg(long)]
        write_edges: bool,
    },
    /// Evaluate one policy on one topology at one Δt.
    Evaluate(EvalArgs),
    /// Full factorial sweep over topologies × policies × Δt.
    Sweep(GridArgs),
    /// Train an offload policy.
    Train(TrainArgs),
    /// Sweep, then rank policies within each (topology, Δt) group.
    Compare(GridArgs),
    /// JSQ/RND/OWN (and optionally a learned policy) on a Bethe lattice.
    BetheAblation(AblationArgs),
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    delta_t: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Write one JSONL trace per episode under <out>/traces.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Comma-separated topologies, e.g. cyc1d:901,torus:30.
    #[arg(long, value_delimiter = ',')]
    topology: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    delta_t: Vec<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Ppo,
    Cem,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    topology: Option<String>,
    #[arg(long)]
    delta_t: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Outer iterations (PPO epochs or CEM generations).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Debug, Args)]
struct AblationArgs {
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    delta_t: Vec<f64>,
    /// Learned policy checkpoint to include.
    #[arg(long)]
    mfr: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

/// Config file of the `train` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainJob {
    env: EnvConfig,
    #[serde(default = "default_method")]
    method: TrainMethod,
    #[serde(default)]
    trainer: TrainerConfig,
    #[serde(default)]
    cem: CemConfig,
    #[serde(default)]
    seed: u64,
}

fn default_method() -> TrainMethod {
    TrainMethod::Ppo
}

#[derive(Debug, Serialize)]
struct ResultsDocument<'a, C: Serialize> {
    config: &'a C,
    cells: &'a [CellResult],
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn parse_policies(list: &[String]) -> Result<Vec<PolicySpec>> {
    list.iter()
        .map(|p| PolicySpec::parse(p).map_err(Into::into))
        .collect()
}

fn parse_topologies(list: &[String]) -> Result<Vec<TopologySpec>> {
    list.iter()
        .map(|t| TopologySpec::parse(t).map_err(Into::into))
        .collect()
}

fn grid_config(cli: &Cli, args: &GridArgs) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => read_json::<ExperimentConfig>(path)?,
        None => ExperimentConfig::new(Vec::new(), Vec::new(), Vec::new()),
    };
    if !args.topology.is_empty() {
        config.topologies = parse_topologies(&args.topology)?;
    }
    if !args.policy.is_empty() {
        config.policies = parse_policies(&args.policy)?;
    }
    if !args.delta_t.is_empty() {
        config.delta_t = args.delta_t.clone();
    }
    if config.policies.is_empty() {
        config.policies = vec![PolicySpec::Jsq, PolicySpec::Rnd, PolicySpec::Own];
    }
    config.episodes = args.episodes.unwrap_or(config.episodes);
    config.horizon = args.horizon.unwrap_or(config.horizon);
    config.seed = cli.seed.unwrap_or(config.seed);
    config.validate()?;
    Ok(config)
}

fn options(cli: &Cli, trace: bool) -> RunOptions {
    RunOptions {
        exec: Execution::with_workers(cli.workers),
        timing: cli.timing,
        keep_episodes: trace,
    }
}

fn write_results<C: Serialize>(out: &Path, config: &C, cells: &[CellResult], trace: bool) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    harness::write_results_csv(&out.join("results.csv"), cells)?;
    harness::write_results_json(&out.join("results.json"), &ResultsDocument { config, cells })?;
    if trace {
        let n = harness::write_traces(&out.join("traces"), cells)?;
        log::info!("wrote {n} trace files");
    }
    Ok(())
}

fn print_cells(cells: &[CellResult]) {
    println!("{:<22} {:<18} {:>6} {:>12} {:>10}", "topology", "policy", "dt", "mean_drops", "ci95");
    for c in cells {
        match &c.error {
            Some(e) => println!("{:<22} {:<18} {:>6} failed: {e}", c.topology, c.policy, c.delta_t),
            None => println!(
                "{:<22} {:<18} {:>6} {:>12.5} {:>10.5}",
                c.topology, c.policy, c.delta_t, c.mean_drops, c.ci95
            ),
        }
    }
}

fn topology_info(cli: &Cli, spec: &str, write_edges: bool) -> Result<()> {
    let spec = TopologySpec::parse(spec)?;
    let topo = spec.build()?;
    let hist: Vec<String> = topo
        .degree_histogram()
        .iter()
        .map(|(d, c)| format!("{d}:{c}"))
        .collect();
    let info = serde_json::json!({
        "key": spec.key(),
        "n_nodes": topo.n_nodes(),
        "n_edges": topo.n_edges(),
        "max_degree": topo.max_degree(),
        "regular_degree": topo.regular_degree(),
        "components": topo.component_count(),
        "degree_histogram": topo.degree_histogram(),
    });
    println!("{}", spec.key());
    println!("  nodes      {}", topo.n_nodes());
    println!("  edges      {}", topo.n_edges());
    println!("  degrees    {}", hist.join(" "));
    println!("  components {}", topo.component_count());
    if write_edges {
        std::fs::create_dir_all(&cli.out)?;
        topo.write_edge_list(&cli.out.join("topology.txt"))?;
        harness::write_results_json(&cli.out.join("topology.json"), &info)?;
    }
    Ok(())
}

fn evaluate(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => read_json::<ExperimentConfig>(path)?,
        None => ExperimentConfig::new(Vec::new(), Vec::new(), Vec::new()),
    };
    if let Some(t) = &args.topology {
        config.topologies = vec![TopologySpec::parse(t)?];
    }
    if let Some(p) = &args.policy {
        config.policies = vec![PolicySpec::parse(p)?];
    }
    if let Some(dt) = args.delta_t {
        config.delta_t = vec![dt];
    }
    config.episodes = args.episodes.unwrap_or(config.episodes);
    config.horizon = args.horizon.unwrap_or(config.horizon);
    config.seed = cli.seed.unwrap_or(config.seed);
    if config.topologies.len() != 1 || config.policies.len() != 1 || config.delta_t.len() != 1 {
        bail!("evaluate needs exactly one topology, one policy and one Δt (use sweep for grids)");
    }
    config.validate()?;
    let spec = &config.topologies[0];
    let topo = spec.build()?;
    let policy = config.policies[0].resolve(config.system.buffer)?;
    let cell = harness::evaluate(
        &topo,
        &spec.key(),
        &policy,
        &config.policies[0].key(),
        config.delta_t[0],
        config.episodes,
        config.horizon,
        &config.system,
        config.seed,
        options(cli, args.trace),
    )?;
    let cells = [cell];
    print_cells(&cells);
    write_results(&cli.out, &config, &cells, args.trace)
}

fn sweep(cli: &Cli, args: &GridArgs, rank: bool) -> Result<()> {
    let config = grid_config(cli, args)?;
    let cells = harness::sweep(&config, options(cli, args.trace))?;
    print_cells(&cells);
    write_results(&cli.out, &config, &cells, args.trace)?;
    if rank {
        let mut rankings = Vec::new();
        for (topology, dt, ranking) in harness::rank_all(&cells) {
            match ranking {
                Ok(r) => {
                    let marks: Vec<String> = r
                        .pairs
                        .iter()
                        .map(|p| format!("{}{}{}", p.better, if p.separated { " < " } else { " ~ " }, p.worse))
                        .collect();
                    println!("{topology} Δt={dt}: {} [{}]", r.order.join(" "), marks.join(", "));
                    rankings.push(serde_json::json!({"topology": topology, "delta_t": dt, "ranking": r}));
                }
                Err(e) => println!("{topology} Δt={dt}: not ranked ({e})"),
            }
        }
        harness::write_results_json(&cli.out.join("rankings.json"), &rankings)?;
    }
    Ok(())
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut job = match &cli.config {
        Some(path) => read_json::<TrainJob>(path)?,
        None => {
            let topology = args.topology.as_deref().context("--topology or --config is required")?;
            let delta_t = args.delta_t.context("--delta-t or --config is required")?;
            TrainJob {
                env: EnvConfig::new(TopologySpec::parse(topology)?, delta_t),
                method: TrainMethod::Ppo,
                trainer: TrainerConfig::default(),
                cem: CemConfig::default(),
                seed: 0,
            }
        }
    };
    if let Some(t) = &args.topology {
        job.env.topology = TopologySpec::parse(t)?;
    }
    if let Some(dt) = args.delta_t {
        job.env.delta_t = dt;
    }
    if let Some(m) = args.method {
        job.method = match m {
            MethodArg::Ppo => TrainMethod::Ppo,
            MethodArg::Cem => TrainMethod::Cem,
        };
    }
    if let Some(n) = args.iterations {
        job.trainer.epochs = n;
        job.cem.iterations = n;
    }
    job.env.horizon = args.horizon.unwrap_or(job.env.horizon);
    job.seed = cli.seed.unwrap_or(job.seed);
    if job.env.observation != ObservationMode::Global {
        log::info!("training on the view of agent 0 ({:?})", job.env.observation);
    }

    let topo = job.env.topology.build()?;
    let exec = Execution::with_workers(cli.workers);
    let output = match job.method {
        TrainMethod::Ppo => trainer::train(&topo, &job.env, &job.trainer, job.seed, exec)?,
        TrainMethod::Cem => trainer::cem_train(&topo, &job.env, &job.cem, job.seed, exec)?,
    };
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        method: job.method,
        iteration: output.best_iteration,
        seed: job.seed,
        policy: output.policy.to_document(),
        trainer: (job.method == TrainMethod::Ppo).then(|| job.trainer.clone()),
        cem: (job.method == TrainMethod::Cem).then(|| job.cem.clone()),
        env_fingerprint: job.env.fingerprint(),
        env: job.env.clone(),
        eval_return: output.best_eval_return,
    };
    std::fs::create_dir_all(&cli.out)?;
    checkpoint.write(&cli.out.join("checkpoint.json"))?;
    trainer::write_curve(&cli.out.join("training_curve.csv"), &output.curve)?;
    println!(
        "best iteration {} with evaluation return {:.5}; checkpoint at {}",
        output.best_iteration,
        output.best_eval_return,
        cli.out.join("checkpoint.json").display()
    );
    Ok(())
}

fn bethe_ablation(cli: &Cli, args: &AblationArgs) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => read_json::<AblationConfig>(path)?,
        None => AblationConfig {
            depth: args.depth.context("--depth or --config is required")?,
            branching: 3,
            delta_t: vec![1.0, 5.0, 10.0],
            mfr: None,
            episodes: 100,
            horizon: 50,
            system: SystemParams::default(),
            seed: 0,
        },
    };
    config.depth = args.depth.unwrap_or(config.depth);
    config.branching = args.branching.unwrap_or(config.branching);
    if !args.delta_t.is_empty() {
        config.delta_t = args.delta_t.clone();
    }
    if let Some(path) = &args.mfr {
        config.mfr = Some(PolicySpec::Checkpoint { path: path.clone() });
    }
    config.episodes = args.episodes.unwrap_or(config.episodes);
    config.horizon = args.horizon.unwrap_or(config.horizon);
    config.seed = cli.seed.unwrap_or(config.seed);

    let report = harness::bethe_ablation(&config, options(cli, false))?;
    println!("{} ({} nodes)", report.topology, report.n_nodes);
    print_cells(&report.cells);
    for row in &report.rows {
        println!(
            "Δt={}: order {}; OWN beats RND: {}{}",
            row.delta_t,
            row.ranking.order.join(" "),
            row.own_beats_rnd,
            row.mfr_worse_than_own
                .map(|w| format!("; learned policy worse than OWN: {w}"))
                .unwrap_or_default()
        );
    }
    write_results(&cli.out, &config, &report.cells, false)?;
    harness::write_results_json(&cli.out.join("ablation.json"), &report)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match &cli.command {
        Command::TopologyInfo { topology, write_edges } => topology_info(&cli, topology, *write_edges),
        Command::Evaluate(args) => evaluate(&cli, args),
        Command::Sweep(args) => sweep(&cli, args, false),
        Command::Compare(args) => sweep(&cli, args, true),
        Command::Train(args) => train(&cli, args),
        Command::BetheAblation(args) => bethe_ablation(&cli, args),
    }
}
