use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use qanm::analysis::ConvergenceTrace;
use qanm::digraph::Digraph;
use qanm::ftqac::{self, FtqacOptions, JsonLinesTrace, RoundObserver};
use qanm::harness::{self, ExperimentConfig};
use qanm::objective::Scenario;
use qanm::quantize::{from_lattice_integer, QuantizationLevel};

#[derive(Parser)]
#[command(
    name = "qanm",
    version,
    about = "Quantized accelerated distributed optimization over digraphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sensor-fusion experiment and emit per-iteration CSV.
    Run(ExperimentArgs),
    /// Print the convergence certificate for a configuration.
    Certify(ExperimentArgs),
    /// Run one standalone finite-time quantized averaging instance.
    Consensus(ConsensusArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML config file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Quantization level; repeat for several runs.
    #[arg(long = "delta")]
    deltas: Vec<QuantizationLevel>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run only the zero-momentum baseline.
    #[arg(long)]
    baseline: bool,
    /// Extra-edge probability for the generated digraph.
    #[arg(long, conflicts_with = "graph_file")]
    graph_prob: Option<f64>,
    /// Edge list to use instead of a generated digraph.
    #[arg(long)]
    graph_file: Option<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(self) -> anyhow::Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.scenario {
            c.scenario = v;
        }
        if let Some(v) = self.nodes {
            c.nodes = v;
        }
        if let Some(v) = self.dim {
            c.dim = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if !self.deltas.is_empty() {
            c.deltas = self.deltas;
        }
        if let Some(v) = self.iters {
            c.iterations = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if self.baseline {
            c.baseline = true;
        }
        if let Some(v) = self.graph_prob {
            c.graph_probability = v;
            c.graph_file = None;
        }
        if self.graph_file.is_some() {
            c.graph_file = self.graph_file;
        }
        if self.out.is_some() {
            c.output_path = self.out;
        }
        if let Err(e) = c.validate() {
            Cli::command().error(ErrorKind::InvalidValue, e).exit();
        }
        Ok(c)
    }
}

#[derive(Args)]
struct ConsensusArgs {
    /// One whitespace-separated integer vector per node per line, or a JSON array.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "1e-3")]
    delta: QuantizationLevel,
    #[arg(long)]
    graph_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.15, conflicts_with = "graph_file")]
    graph_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write per-round node states as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = ftqac::DEFAULT_ROUND_BUDGET)]
    round_budget: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Certify(args) => certify(args),
        Command::Consensus(args) => consensus(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: ExperimentArgs) -> anyhow::Result<()> {
    let config = args.resolve()?;
    let result = harness::run_experiment(&config)?;
    if config.output_path.is_none() {
        harness::write_csv(&result.traces, io::stdout().lock())?;
    }
    for t in &result.traces {
        eprintln!("{}", summary(t));
    }
    Ok(())
}

fn summary(t: &ConvergenceTrace) -> String {
    let last = t.records.last().expect("at least the initial record");
    format!(
        "{} delta={} iterations={} final_e={:.4e} mean_distance={:.4e} max_gap={:.4e}",
        t.method,
        t.delta,
        last.k,
        last.error,
        t.final_distance,
        t.max_consensus_gap()
    )
}

fn certify(args: ExperimentArgs) -> anyhow::Result<()> {
    let config = args.resolve()?;
    let mut out = io::stdout().lock();
    for (i, report) in harness::certify(&config)?.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        write!(out, "{report}")?;
    }
    Ok(())
}

fn consensus(args: ConsensusArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let rho = harness::parse_consensus_input(&text)?;
    let graph = match &args.graph_file {
        Some(path) => Digraph::parse_edge_list(&std::fs::read_to_string(path)?)?,
        None if rho.len() == 1 => Digraph::from_edges(1, [])?,
        None => Digraph::generate_strongly_connected(rho.len(), args.graph_prob, args.seed)?,
    };
    if graph.node_count() != rho.len() {
        bail!(
            "graph has {} nodes but the input has {} rows",
            graph.node_count(),
            rho.len()
        );
    }
    let options = FtqacOptions {
        round_budget: args.round_budget,
    };
    let mut tracer = match &args.trace {
        Some(path) => Some(JsonLinesTrace::new(BufWriter::new(File::create(path)?))),
        None => None,
    };
    let outcome = ftqac::run_seeded(
        &rho,
        &graph,
        args.delta,
        args.seed,
        options,
        tracer.as_mut().map(|t| t as &mut dyn RoundObserver),
    )?;
    if let Some(t) = tracer {
        t.into_inner().flush()?;
    }
    let value = from_lattice_integer(&outcome.lattice, args.delta);
    let mut out = io::stdout().lock();
    writeln!(out, "lattice={}", join(outcome.lattice.iter()))?;
    writeln!(out, "value={}", join(value.iter()))?;
    writeln!(out, "rounds={}", outcome.rounds)?;
    writeln!(out, "tokens={}", outcome.stats.tokens_sent)?;
    writeln!(out, "bits_estimate={}", outcome.stats.bits_estimate)?;
    Ok(())
}

fn join<T: std::fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}
