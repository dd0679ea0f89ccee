//! Experiment configuration and orchestration for the sensor-fusion runs.

mod csv;
mod input;

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use self::csv::{export_csv, read_csv, write_csv, CsvRow, CSV_HEADER};
pub use self::input::parse_consensus_input;

use crate::analysis::{ConvergenceCertificate, ConvergenceTrace, Method};
use crate::digraph::Digraph;
use crate::objective::{build_scenario_objectives, GlobalConstants, QuadraticObjective, Scenario};
use crate::qanm::{self, QanmConfig};
use crate::quantize::QuantizationLevel;
use crate::rng::{self, Domain};
use crate::{ftqac, Error, Result, StateVector};

/// Initial state components are drawn uniformly from this interval.
pub const INITIAL_STATE_RANGE: (f64, f64) = (1.0, 5.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub nodes: usize,
    pub dim: usize,
    pub alpha: f64,
    pub deltas: Vec<QuantizationLevel>,
    pub iterations: usize,
    pub seed: u64,
    /// Run only the zero-momentum baseline instead of the QANM/baseline pair.
    pub baseline: bool,
    pub graph_probability: f64,
    pub graph_file: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
    pub round_budget: u64,
    pub error_floor: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Shared,
            nodes: 20,
            dim: 5,
            alpha: 0.12,
            deltas: vec![
                QuantizationLevel::new(1, 1_000).expect("valid level"),
                QuantizationLevel::new(1, 1_000_000).expect("valid level"),
            ],
            iterations: 300,
            seed: 0,
            baseline: false,
            graph_probability: 0.15,
            graph_file: None,
            output_path: None,
            round_budget: ftqac::DEFAULT_ROUND_BUDGET,
            error_floor: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::Config(
                "at least one quantization level is required".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.nodes == 0 {
            return Err(Error::Config("nodes must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "alpha {} must be positive",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.graph_probability) {
            return Err(Error::Config(format!(
                "graph probability {} outside [0, 1]",
                self.graph_probability
            )));
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<Method> {
        if self.baseline {
            vec![Method::Baseline]
        } else {
            vec![Method::Qanm, Method::Baseline]
        }
    }
}

/// Graph, objectives and initial states shared by every cell of an
/// experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub graph: Digraph,
    pub objectives: Vec<QuadraticObjective>,
    pub initial_states: Vec<StateVector>,
}

impl ExperimentSetup {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let graph = match &config.graph_file {
            Some(path) => {
                let g = Digraph::parse_edge_list(&std::fs::read_to_string(path)?)?;
                if g.node_count() != config.nodes {
                    return Err(Error::Config(format!(
                        "graph file has {} nodes but nodes = {}",
                        g.node_count(),
                        config.nodes
                    )));
                }
                g
            }
            None if config.nodes == 1 => Digraph::from_edges(1, [])?,
            None => Digraph::generate_strongly_connected(
                config.nodes,
                config.graph_probability,
                config.seed,
            )?,
        };
        let objectives =
            build_scenario_objectives(config.scenario, config.nodes, config.dim, config.seed)?;
        let initial_states = initial_states(config.nodes, config.dim, config.seed);
        Ok(Self {
            graph,
            objectives,
            initial_states,
        })
    }

    pub fn qanm_config(
        &self,
        config: &ExperimentConfig,
        delta: QuantizationLevel,
        method: Method,
    ) -> QanmConfig {
        let mut q = QanmConfig::new(
            self.graph.clone(),
            self.objectives.clone(),
            self.initial_states.clone(),
            config.alpha,
            delta,
            config.iterations,
        );
        q.momentum_override = match method {
            Method::Qanm => None,
            Method::Baseline => Some(0.0),
        };
        // same consensus streams for every cell
        q.seed = config.seed;
        q.round_budget = config.round_budget;
        q.error_floor = config.error_floor;
        q
    }
}

pub fn initial_states(n: usize, p: usize, seed: u64) -> Vec<StateVector> {
    let mut rng = rng::stream(seed, Domain::InitialStates, 0);
    let (lo, hi) = INITIAL_STATE_RANGE;
    (0..n)
        .map(|_| StateVector::from_iterator(p, (0..p).map(|_| rng.random_range(lo..=hi))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub setup: ExperimentSetup,
    /// Ordered by quantization level, then method.
    pub traces: Vec<ConvergenceTrace>,
}

impl ExperimentResult {
    pub fn trace(&self, delta: QuantizationLevel, method: Method) -> Option<&ConvergenceTrace> {
        self.traces
            .iter()
            .find(|t| t.delta == delta && t.method == method)
    }
}

/// Runs every `(Δ, method)` cell, concurrently, on one shared setup and
/// writes the CSV when an output path is configured.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let setup = ExperimentSetup::build(config)?;
    let cells: Vec<QanmConfig> = config
        .deltas
        .iter()
        .flat_map(|&delta| config.methods().into_iter().map(move |m| (delta, m)))
        .map(|(delta, m)| setup.qanm_config(config, delta, m))
        .collect();
    let traces = std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .iter()
            .map(|c| scope.spawn(move || qanm::run(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment cell panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    if let Some(path) = &config.output_path {
        export_csv(&traces, path)?;
    }
    Ok(ExperimentResult { setup, traces })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub method: Method,
    pub alpha: f64,
    pub nodes: usize,
    pub globals: GlobalConstants,
    pub certificate: ConvergenceCertificate,
}

impl std::fmt::Display for CertificateReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let g = &self.globals;
        let c = &self.certificate;
        writeln!(f, "method={}", self.method)?;
        writeln!(f, "alpha={}", self.alpha)?;
        writeln!(f, "n={}", self.nodes)?;
        writeln!(f, "mu={}", g.mu)?;
        writeln!(f, "L={}", g.l)?;
        writeln!(f, "betaHat={}", g.beta_hat)?;
        writeln!(f, "betaTilde={}", g.beta_tilde)?;
        writeln!(f, "eta={}", c.eta)?;
        writeln!(f, "b={}", c.b)?;
        writeln!(f, "c={}", c.c)?;
        writeln!(f, "d={}", c.d)?;
        writeln!(f, "conditionHolds={}", c.condition_holds)?;
        writeln!(f, "dInUnit={}", c.d_in_unit)?;
        writeln!(f, "stepSizeOk={}", c.step_size_ok)
    }
}

/// Certificates for each configured method. Violated hypotheses are
/// reported, not rejected.
pub fn certify(config: &ExperimentConfig) -> Result<Vec<CertificateReport>> {
    config.validate()?;
    let objectives =
        build_scenario_objectives(config.scenario, config.nodes, config.dim, config.seed)?;
    config
        .methods()
        .into_iter()
        .map(|method| {
            let betas = match method {
                Method::Qanm => None,
                Method::Baseline => Some(vec![0.0; objectives.len()]),
            };
            let globals = GlobalConstants::compute(&objectives, betas.as_deref())?;
            Ok(CertificateReport {
                method,
                alpha: config.alpha,
                nodes: config.nodes,
                globals,
                certificate: ConvergenceCertificate::compute(&globals, config.alpha, config.nodes),
            })
        })
        .collect()
}
