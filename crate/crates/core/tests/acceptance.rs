//! Acceptance gate. Runs every criterion at its pinned tolerance, prints one
//! PASS/FAIL line each and exits non-zero if any failed.

use std::process::ExitCode;

use qanm::analysis::{
    contraction_check, log_error_slope, quantization_term, ConvergenceCertificate,
    ConvergenceTrace, Method,
};
use qanm::digraph::Digraph;
use qanm::ftqac::{self, FtqacNodeState, FtqacOptions, RoundObserver};
use qanm::harness::{self, ExperimentConfig, ExperimentResult};
use qanm::objective::{
    build_scenario_objectives, global_optimum, GlobalConstants, QuadraticObjective, Scenario,
};
use qanm::qanm::{run, QanmConfig};
use qanm::quantize::QuantizationLevel;
use qanm::{Matrix, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const OUTER_ITERATIONS: usize = 600;
const REACH_THRESHOLD: f64 = 1e-2;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn fine() -> QuantizationLevel {
    "1e-6".parse().unwrap()
}

fn coarse() -> QuantizationLevel {
    "1e-3".parse().unwrap()
}

struct Experiments {
    runs: Vec<(Scenario, u64, ExperimentResult)>,
}

impl Experiments {
    fn run() -> Self {
        let cells: Vec<_> = [Scenario::Shared, Scenario::Personalized]
            .into_iter()
            .flat_map(|s| SEEDS.map(|seed| (s, seed)))
            .collect();
        let runs = std::thread::scope(|scope| {
            let handles: Vec<_> = cells
                .iter()
                .map(|&(scenario, seed)| {
                    scope.spawn(move || {
                        let config = ExperimentConfig {
                            scenario,
                            seed,
                            iterations: OUTER_ITERATIONS,
                            deltas: vec![coarse(), fine()],
                            ..Default::default()
                        };
                        (
                            scenario,
                            seed,
                            harness::run_experiment(&config).expect("experiment"),
                        )
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        Self { runs }
    }

    fn scenario(&self, s: Scenario) -> impl Iterator<Item = (u64, &ExperimentResult)> {
        self.runs
            .iter()
            .filter(move |r| r.0 == s)
            .map(|r| (r.1, &r.2))
    }

    fn traces(&self) -> impl Iterator<Item = &ConvergenceTrace> {
        self.runs.iter().flat_map(|r| &r.2.traces)
    }
}

/// Records conservation and early-halt violations seen at the end of each
/// round.
struct Auditor {
    mass: Vec<i128>,
    weight: i128,
    conservation_violations: usize,
    early_halts: usize,
    rounds: u64,
}

impl RoundObserver for Auditor {
    fn on_round(&mut self, lambda: u64, states: &[FtqacNodeState]) -> qanm::Result<()> {
        let mut mass = vec![0i128; self.mass.len()];
        let mut weight = 0i128;
        for s in states {
            for (acc, v) in mass.iter_mut().zip(s.mass()) {
                *acc += i128::from(*v);
            }
            weight += i128::from(s.weight());
            if s.halted() {
                self.early_halts += 1;
            }
        }
        if mass != self.mass || weight != self.weight {
            self.conservation_violations += 1;
        }
        self.rounds = lambda;
        Ok(())
    }
}

struct ConsensusAudit {
    failures: Vec<String>,
    conservation_violations: usize,
    rounds_checked: u64,
}

fn consensus_audit() -> ConsensusAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let delta = coarse();
    let options = FtqacOptions::default();
    let mut audit = ConsensusAudit {
        failures: Vec::new(),
        conservation_violations: 0,
        rounds_checked: 0,
    };
    for run in 0..100u64 {
        let n = rng.random_range(2..=20usize);
        let p = if rng.random_bool(0.5) { 1 } else { 5 };
        let prob = rng.random_range(0.0..0.5);
        let graph = Digraph::generate_strongly_connected(n, prob, run).unwrap();
        let rho: Vec<Vec<i64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-10_000..=10_000)).collect())
            .collect();
        let totals: Vec<i128> = (0..p)
            .map(|j| rho.iter().map(|r| i128::from(r[j])).sum())
            .collect();
        let mut auditor = Auditor {
            mass: totals.iter().map(|t| 2 * t).collect(),
            weight: 2 * n as i128,
            conservation_violations: 0,
            early_halts: 0,
            rounds: 0,
        };
        let result = ftqac::run_seeded(&rho, &graph, delta, run, options, Some(&mut auditor));
        audit.conservation_violations += auditor.conservation_violations;
        audit.rounds_checked += auditor.rounds;
        let outcome = match result {
            Ok(o) => o,
            Err(e) => {
                audit.failures.push(format!("run {run}: {e}"));
                continue;
            }
        };
        if auditor.early_halts > 0 {
            audit
                .failures
                .push(format!("run {run}: a node halted before the others"));
        }
        if outcome.rounds > options.round_budget {
            audit
                .failures
                .push(format!("run {run}: {} rounds over budget", outcome.rounds));
        }
        let first = &outcome.outputs[0];
        let identical = outcome.outputs.iter().all(|o| {
            o.iter()
                .zip(first.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
        });
        if !identical {
            audit
                .failures
                .push(format!("run {run}: outputs differ between nodes"));
        }
        // |m − Σρ/n| ≤ 1 in exact integer arithmetic
        for (j, &m) in outcome.lattice.iter().enumerate() {
            if (i128::from(m) * n as i128 - totals[j]).abs() > n as i128 {
                audit.failures.push(format!(
                    "run {run}: component {j} is more than Δ from the mean"
                ));
            }
        }
        for (j, v) in first.iter().enumerate() {
            let exact = delta.value() * totals[j] as f64 / n as f64;
            if (v - exact).abs() > delta.value() * (1.0 + 1e-9) {
                audit
                    .failures
                    .push(format!("run {run}: output {v} vs average {exact}"));
            }
        }
    }
    audit
}

fn criterion_1(audit: &ConsensusAudit) -> Outcome {
    Outcome::new(
        audit.failures.is_empty(),
        if audit.failures.is_empty() {
            "100 runs halted together with identical outputs within Δ of the average".to_string()
        } else {
            audit.failures.join("; ")
        },
    )
}

fn criterion_2(audit: &ConsensusAudit) -> Outcome {
    Outcome::new(
        audit.conservation_violations == 0,
        format!(
            "{} violations of exact Σy, Σz conservation over {} rounds",
            audit.conservation_violations, audit.rounds_checked
        ),
    )
}

fn criterion_3(exp: &Experiments) -> Outcome {
    let mut worst = 0.0f64;
    let mut violations = 0;
    let mut iterations = 0;
    for t in exp.traces() {
        let bound = quantization_term(t.delta.value(), t.dim);
        for gap in t.records.iter().filter_map(|r| r.consensus_gap) {
            iterations += 1;
            worst = worst.max(gap / bound);
            if gap > bound {
                violations += 1;
            }
        }
    }
    Outcome::new(
        violations == 0,
        format!("{violations} violations in {iterations} outer iterations, worst gap/(2√pΔ) = {worst:.3}"),
    )
}

fn monotone_before_plateau(t: &ConvergenceTrace) -> bool {
    let e = t.errors();
    e[..=t.plateau_onset()].windows(2).all(|w| w[1] <= w[0])
}

fn reproduction(exp: &Experiments, scenario: Scenario) -> Outcome {
    let mut wins = 0;
    let mut failures = Vec::new();
    let mut reach = Vec::new();
    for (seed, r) in exp.scenario(scenario) {
        let mut ok = true;
        for t in &r.traces {
            if !monotone_before_plateau(t) {
                ok = false;
                failures.push(format!(
                    "seed {seed} {} Δ={}: not monotone before plateau",
                    t.method, t.delta
                ));
            }
        }
        let q = r
            .trace(fine(), Method::Qanm)
            .unwrap()
            .iterations_to_reach(REACH_THRESHOLD);
        let b = r
            .trace(fine(), Method::Baseline)
            .unwrap()
            .iterations_to_reach(REACH_THRESHOLD);
        reach.push(format!("{}/{}", fmt_reach(q), fmt_reach(b)));
        match (q, b) {
            (Some(q), Some(b)) if q < b => {}
            (Some(_), None) => {}
            _ => {
                ok = false;
                failures.push(format!(
                    "seed {seed}: QANM {} vs baseline {}",
                    fmt_reach(q),
                    fmt_reach(b)
                ));
            }
        }
        if ok {
            wins += 1;
        }
    }
    let coarse_reach: Vec<_> = exp
        .scenario(scenario)
        .map(|(_, r)| {
            let q = r.trace(coarse(), Method::Qanm).unwrap();
            let b = r.trace(coarse(), Method::Baseline).unwrap();
            format!(
                "{}/{}",
                fmt_reach(q.iterations_to_reach(REACH_THRESHOLD)),
                fmt_reach(b.iterations_to_reach(REACH_THRESHOLD))
            )
        })
        .collect();
    let mut detail = format!(
        "{wins}/5 seeds; iterations to e ≤ 1e-2 (QANM/baseline) at Δ=1e-6: [{}]; at Δ=1e-3: [{}]",
        reach.join(", "),
        coarse_reach.join(", ")
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    Outcome::new(wins == 5, detail)
}

fn fmt_reach(k: Option<usize>) -> String {
    k.map_or_else(|| "never".to_string(), |k| k.to_string())
}

fn criterion_6(exp: &Experiments) -> Outcome {
    let mut ordered = true;
    let mut within = true;
    let mut worst = [0.0f64; 2];
    for (_, r) in exp.scenario(Scenario::Shared) {
        for method in [Method::Qanm, Method::Baseline] {
            let c = r.trace(coarse(), method).unwrap();
            let f = r.trace(fine(), method).unwrap();
            ordered &= c.final_distance > f.final_distance;
            for (slot, t) in [c, f].into_iter().enumerate() {
                let scale = t.final_distance / ((t.dim as f64).sqrt() * t.delta.value());
                worst[slot] = worst[slot].max(scale);
                within &= scale <= 10.0;
            }
        }
    }
    Outcome::new(
        ordered && within,
        format!(
            "floor(Δ=1e-3) > floor(Δ=1e-6): {ordered}; worst final mean distance / (√pΔ): {:.1} at Δ=1e-3, {:.1} at Δ=1e-6 (limit 10)",
            worst[0], worst[1]
        ),
    )
}

fn criterion_7(exp: &Experiments) -> Outcome {
    let mut slopes_ok = true;
    let mut worst_slope = f64::NEG_INFINITY;
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let tol = 10.0 * fine().value();
    for (_, r) in exp.scenario(Scenario::Shared) {
        for method in [Method::Qanm, Method::Baseline] {
            let t = r.trace(fine(), method).unwrap();
            let errors = t.errors();
            let slope = log_error_slope(&errors[..=t.plateau_onset()]).unwrap_or(f64::INFINITY);
            worst_slope = worst_slope.max(slope);
            slopes_ok &= slope < 0.0;
            if t.certificate.condition_holds {
                checked += 1;
                worst_excess = worst_excess.max(t.xi_recursion_excess().unwrap());
            } else {
                skipped += 1;
            }
        }
    }
    let xi_ok = worst_excess <= tol;
    Outcome::new(
        slopes_ok && xi_ok,
        format!(
            "max pre-plateau log-slope {worst_slope:.4}; ξ recursion checked on {checked} runs \
             (condition fails on {skipped}), worst ξ⁺ − dξ = {worst_excess:.3e} (limit {tol:.0e})"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut details = Vec::new();
    let mut passed = true;
    for (i, scenario) in [Scenario::Shared, Scenario::Personalized]
        .into_iter()
        .enumerate()
    {
        let objs = build_scenario_objectives(scenario, 20, 5, 11).unwrap();
        let mu = objs.iter().map(|f| f.mu()).fold(f64::INFINITY, f64::min);
        let l = objs.iter().map(|f| f.l()).fold(0.0, f64::max);
        for theta in [0.12, 2.0 / (mu + l)] {
            let report = contraction_check(&objs, theta, 1000, 100 + i as u64).unwrap();
            passed &= report.passed() && report.trials == 1000;
            details.push(format!(
                "{scenario} θ={theta:.4}: {} violations, worst ratio {:.6}",
                report.violations, report.worst_ratio
            ));
        }
    }
    Outcome::new(passed, details.join("; "))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut notes = Vec::new();

    // (a) central differences, h scaled to the point
    let mut worst_fd = 0.0f64;
    for trial in 0..100u64 {
        let scenario = if trial % 2 == 0 {
            Scenario::Shared
        } else {
            Scenario::Personalized
        };
        let f = &build_scenario_objectives(scenario, 3, 5, trial).unwrap()[rng.random_range(0..3)];
        let x = StateVector::from_fn(5, |_, _| rng.random_range(-5.0..5.0));
        let g = f.gradient(&x).unwrap();
        let fd = StateVector::from_fn(5, |j, _| {
            let h = 1e-5 * x[j].abs().max(1.0);
            let mut up = x.clone();
            let mut down = x.clone();
            up[j] += h;
            down[j] -= h;
            (f.evaluate(&up).unwrap() - f.evaluate(&down).unwrap()) / (2.0 * h)
        });
        worst_fd = worst_fd.max((&g - &fd).norm() / g.norm().max(1.0));
    }
    let a = worst_fd <= 1e-6;
    notes.push(format!("(a) worst FD rel {worst_fd:.2e}"));

    // (b) optimality residual relative to the gradient magnitudes involved
    let mut worst_residual = 0.0f64;
    for seed in 0..10 {
        for scenario in [Scenario::Shared, Scenario::Personalized] {
            let objs = build_scenario_objectives(scenario, 20, 5, seed).unwrap();
            let x = global_optimum(&objs).unwrap();
            let mut total = StateVector::zeros(5);
            let mut scale = 0.0;
            for f in &objs {
                let g = f.gradient(&x).unwrap();
                scale += f.omega() * f.matrix().norm() * (x.norm() + f.anchor().norm());
                total += g;
            }
            worst_residual = worst_residual.max(total.norm() / scale.max(1.0));
        }
    }
    let b = worst_residual <= 1e-10;
    notes.push(format!("(b) worst scaled residual {worst_residual:.2e}"));

    // (c) a single node reduces to centralized quantized descent
    let objective = QuadraticObjective::new(
        1.0,
        Matrix::identity(1, 1),
        StateVector::from_element(1, 3.0),
    )
    .unwrap();
    let x_star = global_optimum(std::slice::from_ref(&objective)).unwrap();
    let config = QanmConfig::new(
        Digraph::from_edges(1, []).unwrap(),
        vec![objective],
        vec![StateVector::from_element(1, 0.0)],
        0.12,
        fine(),
        400,
    );
    let trace = run(&config).unwrap();
    let x_final = trace.final_distance;
    let c = (x_star[0] - 3.0).abs() < 1e-15 && x_final <= 10.0 * fine().value();
    notes.push(format!("(c) n=1 final distance {x_final:.2e}"));

    // (d) d and −c are the roots of t² − (η+b)t − b
    let mut worst_root = 0.0f64;
    for seed in 0..5 {
        for scenario in [Scenario::Shared, Scenario::Personalized] {
            let objs = build_scenario_objectives(scenario, 20, 5, seed).unwrap();
            for betas in [None, Some(vec![0.0; 20])] {
                let globals = GlobalConstants::compute(&objs, betas.as_deref()).unwrap();
                for alpha in [0.01, 0.12, 0.5] {
                    let cert = ConvergenceCertificate::compute(&globals, alpha, 20);
                    let s = cert.eta + cert.b;
                    worst_root = worst_root
                        .max((cert.c * cert.d - cert.b).abs())
                        .max((cert.d - cert.c - s).abs())
                        .max((cert.d * cert.d - s * cert.d - cert.b).abs());
                }
            }
        }
    }
    let d = worst_root <= 1e-12;
    notes.push(format!("(d) worst root identity residual {worst_root:.2e}"));

    Outcome::new(a && b && c && d, notes.join("; "))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let paths = [dir.path().join("first.csv"), dir.path().join("second.csv")];
    for path in &paths {
        let config = ExperimentConfig {
            seed: 7,
            output_path: Some(path.clone()),
            ..Default::default()
        };
        harness::run_experiment(&config).unwrap();
    }
    let a = std::fs::read(&paths[0]).unwrap();
    let b = std::fs::read(&paths[1]).unwrap();
    Outcome::new(
        a == b && !a.is_empty(),
        format!("{} bytes, identical: {}", a.len(), a == b),
    )
}

fn main() -> ExitCode {
    let started = std::time::Instant::now();
    let audit = consensus_audit();
    let exp = Experiments::run();
    let results = [
        ("1 consensus correctness", criterion_1(&audit)),
        ("2 conservation", criterion_2(&audit)),
        ("3 consensus gap bound", criterion_3(&exp)),
        (
            "4 shared-P reproduction",
            reproduction(&exp, Scenario::Shared),
        ),
        (
            "5 personalized-P reproduction",
            reproduction(&exp, Scenario::Personalized),
        ),
        ("6 quantization floor", criterion_6(&exp)),
        ("7 linear envelope", criterion_7(&exp)),
        ("8 gradient-step contraction", criterion_8()),
        ("9 oracle equivalences", criterion_9()),
        ("10 determinism", criterion_10()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("criterion {name}: {verdict}: {}", outcome.detail);
        failed += usize::from(!outcome.passed);
    }
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
