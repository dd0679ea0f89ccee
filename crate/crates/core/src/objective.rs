//! Local quadratic costs `f_i(x) = ½ ω_i (x − a_i)ᵀ P_i (x − a_i)` and the
//! curvature constants derived from them.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{self, Domain};
use crate::{Error, Matrix, Result, StateVector};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    omega: f64,
    p: Matrix,
    anchor: StateVector,
    constants: CurvatureConstants,
}

/// Strong convexity, smoothness, condition number and the momentum
/// coefficient `β = (√κ − 1)/(√κ + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureConstants {
    pub mu: f64,
    pub l: f64,
    pub kappa: f64,
    pub beta: f64,
}

impl QuadraticObjective {
    pub fn new(omega: f64, p: Matrix, anchor: StateVector) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::InvalidObjective(format!(
                "weight {omega} must be positive"
            )));
        }
        if !p.is_square() {
            return Err(Error::InvalidObjective(format!(
                "P is {}x{}, expected square",
                p.nrows(),
                p.ncols()
            )));
        }
        check_dim(p.nrows(), anchor.len())?;
        if anchor.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("anchor"));
        }
        let constants = derive_constants(omega, &p)?;
        Ok(Self {
            omega,
            p,
            anchor,
            constants,
        })
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn anchor(&self) -> &StateVector {
        &self.anchor
    }

    pub fn constants(&self) -> CurvatureConstants {
        self.constants
    }

    pub fn mu(&self) -> f64 {
        self.constants.mu
    }

    pub fn l(&self) -> f64 {
        self.constants.l
    }

    pub fn kappa(&self) -> f64 {
        self.constants.kappa
    }

    pub fn beta(&self) -> f64 {
        self.constants.beta
    }

    /// `ω P`.
    pub fn hessian(&self) -> Matrix {
        &self.p * self.omega
    }

    pub fn evaluate(&self, x: &StateVector) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let r = x - &self.anchor;
        Ok(0.5 * self.omega * r.dot(&(&self.p * &r)))
    }

    pub fn gradient(&self, x: &StateVector) -> Result<StateVector> {
        check_dim(self.dim(), x.len())?;
        let r = x - &self.anchor;
        Ok((&self.p * r) * self.omega)
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub fn momentum_coefficient(kappa: f64) -> f64 {
    let r = kappa.sqrt();
    (r - 1.0) / (r + 1.0)
}

/// Extreme eigenvalues of `ω P`. Diagonal matrices are read off directly,
/// anything else goes through a symmetric eigensolve.
pub fn derive_constants(omega: f64, p: &Matrix) -> Result<CurvatureConstants> {
    let n = p.nrows();
    if n == 0 || !p.is_square() {
        return Err(Error::InvalidObjective(
            "P must be a non-empty square matrix".into(),
        ));
    }
    let scale = p.amax();
    let mut diagonal = true;
    for i in 0..n {
        for j in 0..i {
            if (p[(i, j)] - p[(j, i)]).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::InvalidObjective("P is not symmetric".into()));
            }
            if p[(i, j)] != 0.0 || p[(j, i)] != 0.0 {
                diagonal = false;
            }
        }
    }
    let eigenvalues: Vec<f64> = if diagonal {
        p.diagonal().iter().copied().collect()
    } else {
        p.clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect()
    };
    if eigenvalues.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("P"));
    }
    let lo = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: lo });
    }
    let (mu, l) = (omega * lo, omega * hi);
    let kappa = l / mu;
    Ok(CurvatureConstants {
        mu,
        l,
        kappa,
        beta: momentum_coefficient(kappa),
    })
}

/// Network-wide constants: mean smoothness, minimum strong convexity, and the
/// mean and spread of the momentum coefficients actually in use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalConstants {
    pub l: f64,
    pub mu: f64,
    pub beta_hat: f64,
    pub beta_tilde: f64,
}

impl GlobalConstants {
    /// `betas` defaults to each objective's own coefficient.
    pub fn compute(objectives: &[QuadraticObjective], betas: Option<&[f64]>) -> Result<Self> {
        if objectives.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        let n = objectives.len() as f64;
        let own: Vec<f64>;
        let betas = match betas {
            Some(b) => {
                check_dim(objectives.len(), b.len())?;
                b
            }
            None => {
                own = objectives.iter().map(QuadraticObjective::beta).collect();
                &own
            }
        };
        let l = objectives.iter().map(QuadraticObjective::l).sum::<f64>() / n;
        let mu = objectives
            .iter()
            .map(QuadraticObjective::mu)
            .fold(f64::INFINITY, f64::min);
        let (beta_hat, beta_tilde) = if betas.iter().all(|&b| b == betas[0]) {
            // exact, free of summation rounding
            (betas[0], 0.0)
        } else {
            let mean = betas.iter().sum::<f64>() / n;
            let spread = betas.iter().map(|b| (mean - b).abs()).fold(0.0, f64::max);
            (mean, spread)
        };
        Ok(Self {
            l,
            mu,
            beta_hat,
            beta_tilde,
        })
    }
}

/// Unique minimizer of `Σ f_i`: `(Σ ω_i P_i)⁻¹ Σ ω_i P_i a_i`.
pub fn global_optimum(objectives: &[QuadraticObjective]) -> Result<StateVector> {
    let first = objectives.first().ok_or(Error::EmptyNetwork)?;
    let p = first.dim();
    let mut a = Matrix::zeros(p, p);
    let mut b = StateVector::zeros(p);
    for obj in objectives {
        check_dim(p, obj.dim())?;
        let h = obj.hessian();
        b += &h * obj.anchor();
        a += h;
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&b));
    }
    a.lu().solve(&b).ok_or(Error::Singular)
}

/// Experimental scenarios for the sensor-fusion application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Every node uses the common diagonal matrix.
    #[serde(alias = "shared-p")]
    Shared,
    /// Common matrix plus a node-specific `P_nᵀ P_n` with Gaussian `P_n`.
    #[serde(alias = "personalized-p")]
    Personalized,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shared" | "shared-p" | "a" => Ok(Self::Shared),
            "personalized" | "personalized-p" | "b" => Ok(Self::Personalized),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Shared => "shared",
            Self::Personalized => "personalized",
        })
    }
}

pub const PERSONALIZATION_STD_DEV: f64 = 0.1;

/// `diag(2^-(p-1), ..., 1/4, 1/2, 1)`; for `p = 5` this is
/// `diag(1/16, 1/8, 1/4, 1/2, 1)`.
pub fn common_matrix(p: usize) -> Matrix {
    Matrix::from_diagonal(&StateVector::from_iterator(
        p,
        (0..p).map(|j| 0.5f64.powi((p - 1 - j) as i32)),
    ))
}

/// Per-node objectives with `ω_i` and every anchor component drawn uniformly
/// from `{1, ..., 5}`.
pub fn build_scenario_objectives(
    scenario: Scenario,
    n: usize,
    p: usize,
    seed: u64,
) -> Result<Vec<QuadraticObjective>> {
    if n == 0 {
        return Err(Error::EmptyNetwork);
    }
    if p == 0 {
        return Err(Error::InvalidObjective("dimension must be positive".into()));
    }
    let mut rng = rng::stream(seed, Domain::Objectives, 0);
    let noise = Normal::new(0.0, PERSONALIZATION_STD_DEV).expect("valid normal parameters");
    let pc = common_matrix(p);
    (0..n)
        .map(|_| {
            let omega = rng.random_range(1..=5) as f64;
            let anchor =
                StateVector::from_iterator(p, (0..p).map(|_| rng.random_range(1..=5) as f64));
            let matrix = match scenario {
                Scenario::Shared => pc.clone(),
                Scenario::Personalized => {
                    let pn = Matrix::from_fn(p, p, |_, _| noise.sample(&mut rng));
                    &pc + pn.tr_mul(&pn)
                }
            };
            QuadraticObjective::new(omega, matrix, anchor)
        })
        .collect()
}
