//! Convergence certificates, the normalized error metric, and numerical
//! checks of the bounds the accelerated method relies on.

use rand::Rng;
use serde::Serialize;

use crate::ftqac::CommunicationStats;
use crate::objective::{GlobalConstants, QuadraticObjective};
use crate::quantize::QuantizationLevel;
use crate::rng::{self, Domain};
use crate::{Error, Result, StateVector};

/// Constants of the linear-rate certificate:
///
/// - `η = 1 − μα/n`
/// - `b = η·β̂ + α·L·β̃`
/// - `c, d = (∓(η+b) + √((η+b)² + 4b)) / 2`
///
/// so that `d` and `−c` are the roots of `t² − (η+b)t − b = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceCertificate {
    pub eta: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// `b < μα/(2n)`
    pub condition_holds: bool,
    /// `0 < d < 1`
    pub d_in_unit: bool,
    /// `α ≤ 2/(μ + L)`
    pub step_size_ok: bool,
}

impl ConvergenceCertificate {
    pub fn compute(globals: &GlobalConstants, alpha: f64, n: usize) -> Self {
        let n = n as f64;
        let eta = 1.0 - globals.mu * alpha / n;
        let b = eta * globals.beta_hat + alpha * globals.l * globals.beta_tilde;
        let sum = eta + b;
        let root = (sum * sum + 4.0 * b).sqrt();
        let (c, d) = if b == 0.0 {
            (0.0, sum.max(0.0))
        } else {
            ((root - sum) / 2.0, (sum + root) / 2.0)
        };
        Self {
            eta,
            b,
            c,
            d,
            condition_holds: b < globals.mu * alpha / (2.0 * n),
            d_in_unit: 0.0 < d && d < 1.0,
            step_size_ok: alpha <= 2.0 / (globals.mu + globals.l),
        }
    }

    /// Both hypotheses of the linear-rate theorem.
    pub fn hypotheses_hold(&self) -> bool {
        self.condition_holds && self.step_size_ok
    }
}

/// The additive quantization term `2√p·Δ`.
pub fn quantization_term(delta: f64, p: usize) -> f64 {
    2.0 * (p as f64).sqrt() * delta
}

/// `e = √((1/n) Σ ‖x_i − x*‖ / ‖x_i⁰ − x*‖)`.
pub fn error_metric(
    states: &[StateVector],
    initial: &[StateVector],
    x_star: &StateVector,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    if states.len() != initial.len() {
        return Err(Error::DimensionMismatch {
            expected: initial.len(),
            got: states.len(),
        });
    }
    let mut sum = 0.0;
    for (i, (x, x0)) in states.iter().zip(initial).enumerate() {
        check_dim(x_star.len(), x.len())?;
        check_dim(x_star.len(), x0.len())?;
        let denom = (x0 - x_star).norm();
        if denom == 0.0 {
            return Err(Error::DegenerateNormalization(i));
        }
        sum += (x - x_star).norm() / denom;
    }
    Ok((sum / states.len() as f64).sqrt())
}

/// `ξ = ‖x − x*‖ + c‖x_prev − x*‖ + 2√pΔ/(d − 1)`.
pub fn lyapunov_value(
    x_cur: &StateVector,
    x_prev: &StateVector,
    x_star: &StateVector,
    certificate: &ConvergenceCertificate,
    delta: f64,
    p: usize,
) -> Result<f64> {
    check_dim(x_star.len(), x_cur.len())?;
    check_dim(x_star.len(), x_prev.len())?;
    lyapunov_from_distances(
        (x_cur - x_star).norm(),
        (x_prev - x_star).norm(),
        certificate,
        delta,
        p,
    )
}

fn lyapunov_from_distances(
    cur: f64,
    prev: f64,
    certificate: &ConvergenceCertificate,
    delta: f64,
    p: usize,
) -> Result<f64> {
    if certificate.d == 1.0 {
        return Err(Error::DegenerateCertificate);
    }
    Ok(cur + certificate.c * prev + quantization_term(delta, p) / (certificate.d - 1.0))
}

/// `max_i ‖x_i − mean(z)‖`.
pub fn consensus_gap(
    pre_consensus_z: &[StateVector],
    post_consensus_x: &[StateVector],
) -> Result<f64> {
    let z_hat = mean(pre_consensus_z)?;
    if post_consensus_x.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    post_consensus_x.iter().try_fold(0.0f64, |acc, x| {
        check_dim(z_hat.len(), x.len())?;
        Ok(acc.max((x - &z_hat).norm()))
    })
}

/// `max_i (‖ŝ − s_i‖ − β̃‖m_i‖)`; non-positive whenever the look-ahead
/// spread bound holds.
pub fn lookahead_spread_excess(
    look_ahead: &[StateVector],
    momenta: &[StateVector],
    beta_tilde: f64,
) -> Result<f64> {
    let s_hat = mean(look_ahead)?;
    if momenta.len() != look_ahead.len() {
        return Err(Error::DimensionMismatch {
            expected: look_ahead.len(),
            got: momenta.len(),
        });
    }
    Ok(look_ahead
        .iter()
        .zip(momenta)
        .map(|(s, m)| (&s_hat - s).norm() - beta_tilde * m.norm())
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `‖(1/n)Σ∇f_i(ŝ) − (1/n)Σ∇f_i(s_i)‖`, the gradient-averaging discrepancy
/// between evaluating at the mean look-ahead and at the local ones.
pub fn averaged_gradient_gap(
    objectives: &[QuadraticObjective],
    look_ahead: &[StateVector],
) -> Result<f64> {
    let s_hat = mean(look_ahead)?;
    if objectives.len() != look_ahead.len() {
        return Err(Error::DimensionMismatch {
            expected: objectives.len(),
            got: look_ahead.len(),
        });
    }
    let mut at_mean = StateVector::zeros(s_hat.len());
    let mut local = StateVector::zeros(s_hat.len());
    for (f, s) in objectives.iter().zip(look_ahead) {
        at_mean += f.gradient(&s_hat)?;
        local += f.gradient(s)?;
    }
    Ok((at_mean - local).norm() / objectives.len() as f64)
}

pub(crate) fn mean(vs: &[StateVector]) -> Result<StateVector> {
    let first = vs.first().ok_or(Error::EmptyNetwork)?;
    let mut acc = StateVector::zeros(first.len());
    for v in vs {
        check_dim(first.len(), v.len())?;
        acc += v;
    }
    Ok(acc / vs.len() as f64)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest `‖x₁−x₂−θ(∇f(x₁)−∇f(x₂))‖ / ((1−μθ)‖x₁−x₂‖)` observed.
    pub worst_ratio: f64,
}

impl ContractionReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub const CONTRACTION_REL_TOL: f64 = 1e-12;

/// Samples `trials` random pairs and checks
/// `‖x₁ − x₂ − θ(∇f(x₁) − ∇f(x₂))‖ ≤ (1 − μθ)‖x₁ − x₂‖` for an objective
/// drawn from the ensemble, with `μ = min μ_i` and `L = max L_i`.
pub fn contraction_check(
    objectives: &[QuadraticObjective],
    theta: f64,
    trials: usize,
    seed: u64,
) -> Result<ContractionReport> {
    let first = objectives.first().ok_or(Error::EmptyNetwork)?;
    let p = first.dim();
    let mu = objectives
        .iter()
        .map(|f| f.mu())
        .fold(f64::INFINITY, f64::min);
    let l = objectives.iter().map(|f| f.l()).fold(0.0, f64::max);
    if !(theta > 0.0 && theta <= 2.0 / (mu + l)) {
        return Err(Error::Precondition(format!(
            "θ = {theta} outside (0, 2/(μ+L)] = (0, {}]",
            2.0 / (mu + l)
        )));
    }
    let mut rng = rng::stream(seed, Domain::Analysis, 0);
    let mut report = ContractionReport {
        trials,
        violations: 0,
        worst_ratio: 0.0,
    };
    for _ in 0..trials {
        let f = &objectives[rng.random_range(0..objectives.len())];
        let x1 = StateVector::from_fn(p, |_, _| rng.random_range(-10.0..10.0));
        let x2 = StateVector::from_fn(p, |_, _| rng.random_range(-10.0..10.0));
        let lhs = (&x1 - &x2 - (f.gradient(&x1)? - f.gradient(&x2)?) * theta).norm();
        let rhs = (1.0 - mu * theta) * (&x1 - &x2).norm();
        if lhs > rhs * (1.0 + CONTRACTION_REL_TOL) {
            report.violations += 1;
        }
        if rhs > 0.0 {
            report.worst_ratio = report.worst_ratio.max(lhs / rhs);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Per-node Nesterov momentum.
    Qanm,
    /// Momentum forced to zero.
    Baseline,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Qanm => "qanm",
            Self::Baseline => "baseline",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Diagnostics for outer iteration `k` (the state `x^[k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub error: f64,
    /// `max_i ‖x_i − ẑ‖`; absent at `k = 0`.
    pub consensus_gap: Option<f64>,
    /// `max_i ξ_i`; absent when `d = 1`.
    pub xi: Option<f64>,
    /// Consensus rounds spent producing this iterate.
    pub rounds: u64,
    pub stats: CommunicationStats,
    /// `‖x_i − x*‖` per node.
    pub distances: Vec<f64>,
    /// Look-ahead spread excess at the step that produced this iterate.
    pub lookahead_excess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub method: Method,
    pub delta: QuantizationLevel,
    pub dim: usize,
    pub globals: GlobalConstants,
    pub certificate: ConvergenceCertificate,
    pub x_star: StateVector,
    pub records: Vec<IterationRecord>,
    /// Mean `‖x_i − x*‖` at the last iterate.
    pub final_distance: f64,
}

impl ConvergenceTrace {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error).collect()
    }

    /// First `k` with `e ≤ threshold`.
    pub fn iterations_to_reach(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.error <= threshold)
            .map(|r| r.k)
    }

    pub fn max_consensus_gap(&self) -> f64 {
        self.records
            .iter()
            .filter_map(|r| r.consensus_gap)
            .fold(0.0, f64::max)
    }

    /// Largest `ξ_i^[k+1] − d·ξ_i^[k]` over nodes and `k ≥ 1`.
    pub fn xi_recursion_excess(&self) -> Result<f64> {
        let delta = self.delta.value();
        let cert = &self.certificate;
        let xi = |k: usize, i: usize| -> Result<f64> {
            let cur = self.records[k].distances[i];
            let prev = self.records[k.saturating_sub(1)].distances[i];
            lyapunov_from_distances(cur, prev, cert, delta, self.dim)
        };
        let n = self.records.first().map_or(0, |r| r.distances.len());
        let mut worst = f64::NEG_INFINITY;
        for k in 1..self.records.len().saturating_sub(1) {
            for i in 0..n {
                worst = worst.max(xi(k + 1, i)? - cert.d * xi(k, i)?);
            }
        }
        Ok(worst)
    }

    /// Index where the error first comes within [`PLATEAU_BAND`] of its
    /// terminal value; the segment before it is the pre-plateau descent.
    pub fn plateau_onset(&self) -> usize {
        plateau_onset(&self.errors())
    }
}

/// Relative band above the terminal error that counts as the plateau.
pub const PLATEAU_BAND: f64 = 0.05;

/// First index whose value is within [`PLATEAU_BAND`] of the last value.
pub fn plateau_onset(errors: &[f64]) -> usize {
    match errors.last() {
        Some(&last) => errors
            .iter()
            .position(|&e| e <= last * (1.0 + PLATEAU_BAND))
            .unwrap_or(errors.len() - 1),
        None => 0,
    }
}

/// Least-squares slope of `ln e` against the iteration index.
pub fn log_error_slope(errors: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0.0)
        .map(|(k, &e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}
