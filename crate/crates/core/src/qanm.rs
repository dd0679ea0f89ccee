//! The accelerated outer loop.
//!
//! Per outer iteration `k`, every node computes
//!
//! ```text
//! s_i = x_i + β_i (x_i − x_i_prev)
//! z_i = s_i − α ∇f_i(s_i)
//! ```
//!
//! quantizes `z_i` onto the Δ-lattice, and then one complete consensus
//! instance replaces every `x_i` by the same quantized average.

use crate::analysis::{
    consensus_gap, error_metric, lookahead_spread_excess, quantization_term,
    ConvergenceCertificate, ConvergenceTrace, IterationRecord, Method,
};
use crate::digraph::Digraph;
use crate::ftqac::{self, CommunicationStats, FtqacOptions};
use crate::objective::{global_optimum, GlobalConstants, QuadraticObjective};
use crate::quantize::{to_lattice_integer, QuantizationLevel};
use crate::rng::{self, Domain};
use crate::{Error, Result, StateVector};

#[derive(Debug, Clone, PartialEq)]
pub struct QanmNodeState {
    pub x: StateVector,
    pub x_prev: StateVector,
    /// Look-ahead point of the most recent step.
    pub s: StateVector,
    /// Post-gradient point of the most recent step.
    pub z: StateVector,
    pub beta: f64,
}

impl QanmNodeState {
    /// Starts with `x_prev = x`, so the first look-ahead is `x` itself.
    pub fn new(x0: StateVector, beta: f64) -> Self {
        Self {
            x_prev: x0.clone(),
            s: x0.clone(),
            z: x0.clone(),
            x: x0,
            beta,
        }
    }

    pub fn momentum(&self) -> StateVector {
        &self.x - &self.x_prev
    }
}

/// `x + β(x − x_prev)`.
pub fn look_ahead(state: &QanmNodeState) -> StateVector {
    &state.x + (&state.x - &state.x_prev) * state.beta
}

/// `s − α∇f(s)`.
pub fn gradient_step(
    s: &StateVector,
    objective: &QuadraticObjective,
    alpha: f64,
) -> Result<StateVector> {
    let g = objective.gradient(s)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(s - g * alpha)
}

#[derive(Debug, Clone)]
pub struct QanmConfig {
    pub alpha: f64,
    pub delta: QuantizationLevel,
    pub max_outer_iterations: usize,
    pub graph: Digraph,
    pub objectives: Vec<QuadraticObjective>,
    pub initial_states: Vec<StateVector>,
    /// Uniform momentum for every node; `Some(0.0)` is the baseline.
    pub momentum_override: Option<f64>,
    /// Seeds the per-iteration consensus streams.
    pub seed: u64,
    pub round_budget: u64,
    /// Stop early once `e ≤ floor`.
    pub error_floor: Option<f64>,
    /// Reject step sizes above `2/(μ+L)`.
    pub theorem_mode: bool,
}

impl QanmConfig {
    pub fn new(
        graph: Digraph,
        objectives: Vec<QuadraticObjective>,
        initial_states: Vec<StateVector>,
        alpha: f64,
        delta: QuantizationLevel,
        max_outer_iterations: usize,
    ) -> Self {
        Self {
            alpha,
            delta,
            max_outer_iterations,
            graph,
            objectives,
            initial_states,
            momentum_override: None,
            seed: 0,
            round_budget: ftqac::DEFAULT_ROUND_BUDGET,
            error_floor: None,
            theorem_mode: false,
        }
    }

    pub fn method(&self) -> Method {
        match self.momentum_override {
            Some(0.0) => Method::Baseline,
            _ => Method::Qanm,
        }
    }

    pub fn betas(&self) -> Vec<f64> {
        match self.momentum_override {
            Some(b) => vec![b; self.objectives.len()],
            None => self
                .objectives
                .iter()
                .map(QuadraticObjective::beta)
                .collect(),
        }
    }

    pub fn global_constants(&self) -> Result<GlobalConstants> {
        GlobalConstants::compute(&self.objectives, Some(&self.betas()))
    }

    pub fn certificate(&self) -> Result<ConvergenceCertificate> {
        Ok(ConvergenceCertificate::compute(
            &self.global_constants()?,
            self.alpha,
            self.objectives.len(),
        ))
    }

    pub fn dim(&self) -> usize {
        self.objectives.first().map_or(0, QuadraticObjective::dim)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.node_count();
        if self.objectives.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        if self.objectives.len() != n || self.initial_states.len() != n {
            return Err(Error::Config(format!(
                "graph has {n} nodes but {} objectives and {} initial states were given",
                self.objectives.len(),
                self.initial_states.len()
            )));
        }
        let p = self.dim();
        for (f, x0) in self.objectives.iter().zip(&self.initial_states) {
            if f.dim() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: f.dim(),
                });
            }
            if x0.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: x0.len(),
                });
            }
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "step size {} must be positive",
                self.alpha
            )));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::Config(
                "at least one outer iteration is required".into(),
            ));
        }
        if let Some(b) = self.momentum_override {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("momentum {b} outside [0, 1)")));
            }
        }
        self.graph.diameter()?;
        if self.theorem_mode {
            let g = self.global_constants()?;
            let bound = 2.0 / (g.mu + g.l);
            if self.alpha > bound {
                return Err(Error::Config(format!(
                    "step size {} exceeds 2/(μ+L) = {bound}",
                    self.alpha
                )));
            }
        }
        Ok(())
    }
}

/// What one outer iteration observed.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterStep {
    pub rounds: u64,
    pub stats: CommunicationStats,
    /// `max_i ‖x_i^[k+1] − ẑ^[k+1]‖`
    pub consensus_gap: f64,
    pub lookahead_excess: f64,
}

/// Runs outer iteration `k`, moving every node from `x^[k]` to `x^[k+1]`.
/// The consensus randomness is the stream `(seed, k)`.
pub fn outer_iteration(
    states: &mut [QanmNodeState],
    config: &QanmConfig,
    globals: &GlobalConstants,
    k: usize,
) -> Result<OuterStep> {
    let p = config.dim();
    let mut rho = Vec::with_capacity(states.len());
    for (state, objective) in states.iter_mut().zip(&config.objectives) {
        state.s = look_ahead(state);
        state.z = gradient_step(&state.s, objective, config.alpha)?;
        rho.push(to_lattice_integer(&state.z, config.delta)?);
    }
    let look: Vec<StateVector> = states.iter().map(|s| s.s.clone()).collect();
    let momenta: Vec<StateVector> = states.iter().map(QanmNodeState::momentum).collect();
    let lookahead_excess = lookahead_spread_excess(&look, &momenta, globals.beta_tilde)?;

    let outcome = ftqac::run_consensus(
        &rho,
        &config.graph,
        config.delta,
        rng::stream(config.seed, Domain::Consensus, k as u64),
        FtqacOptions {
            round_budget: config.round_budget,
        },
        None,
    )?;

    let z: Vec<StateVector> = states.iter().map(|s| s.z.clone()).collect();
    let gap = consensus_gap(&z, &outcome.outputs)?;
    let bound = quantization_term(config.delta.value(), p);
    if gap > bound {
        return Err(Error::InvariantViolation(format!(
            "iteration {}: consensus gap {gap:e} exceeds 2√pΔ = {bound:e}",
            k + 1
        )));
    }

    for (state, x) in states.iter_mut().zip(outcome.outputs) {
        state.x_prev = std::mem::replace(&mut state.x, x);
    }
    Ok(OuterStep {
        rounds: outcome.rounds,
        stats: outcome.stats,
        consensus_gap: gap,
        lookahead_excess,
    })
}

pub fn run(config: &QanmConfig) -> Result<ConvergenceTrace> {
    config.validate()?;
    let globals = config.global_constants()?;
    let certificate =
        ConvergenceCertificate::compute(&globals, config.alpha, config.objectives.len());
    let x_star = global_optimum(&config.objectives)?;
    let p = config.dim();
    let delta = config.delta.value();

    let mut states: Vec<QanmNodeState> = config
        .initial_states
        .iter()
        .zip(config.betas())
        .map(|(x0, beta)| QanmNodeState::new(x0.clone(), beta))
        .collect();

    let record =
        |k: usize, states: &[QanmNodeState], step: Option<&OuterStep>| -> Result<IterationRecord> {
            let xs: Vec<StateVector> = states.iter().map(|s| s.x.clone()).collect();
            let error = error_metric(&xs, &config.initial_states, &x_star)?;
            let distances: Vec<f64> = xs.iter().map(|x| (x - &x_star).norm()).collect();
            let xi = if certificate.d == 1.0 {
                None
            } else {
                let offset = quantization_term(delta, p) / (certificate.d - 1.0);
                Some(
                    states
                        .iter()
                        .zip(&distances)
                        .map(|(s, cur)| cur + certificate.c * (&s.x_prev - &x_star).norm() + offset)
                        .fold(f64::NEG_INFINITY, f64::max),
                )
            };
            Ok(IterationRecord {
                k,
                error,
                consensus_gap: step.map(|s| s.consensus_gap),
                xi,
                rounds: step.map_or(0, |s| s.rounds),
                stats: step.map_or_else(CommunicationStats::default, |s| s.stats),
                distances,
                lookahead_excess: step.map(|s| s.lookahead_excess),
            })
        };

    let mut records = vec![record(0, &states, None)?];
    for k in 0..config.max_outer_iterations {
        let step = outer_iteration(&mut states, config, &globals, k)?;
        let rec = record(k + 1, &states, Some(&step))?;
        let done = config.error_floor.is_some_and(|floor| rec.error <= floor);
        records.push(rec);
        if done {
            break;
        }
    }

    let last = records.last().expect("at least the initial record");
    let final_distance = last.distances.iter().sum::<f64>() / last.distances.len() as f64;
    Ok(ConvergenceTrace {
        method: config.method(),
        delta: config.delta,
        dim: p,
        globals,
        certificate,
        x_star,
        records,
        final_distance,
    })
}
