//! Finite-time quantized average consensus.
//!
//! Each node holds an integer mass vector `y` and an integer weight `z`,
//! initialized to `2ρ` and `2`. Every round a node keeps one unit of weight
//! and splits the rest of its mass into tokens of value `⌊y/z⌋`, each sent
//! to a uniformly chosen member of its out-neighborhood (itself included).
//! Tokens that meet at a node are merged and re-split, so token values
//! equalize to within one lattice step of the quantized average.
//!
//! Termination is decided by max/min consensus on `⌈y/z⌉` and `⌊y/z⌋`:
//! every `D` rounds (`D` the diameter) the extrema are reset from local state
//! and flooded for `D` rounds. When the global spread is at most one, every
//! node outputs the same lower value `m·Δ` and halts in the same round.
//!
//! Rounds are synchronous. Within round `λ` the order is: stopping-variable
//! reset (when `λ ≡ 1 mod D`), stopping-variable exchange, send phase,
//! receive phase. Tokens sent in round `λ` arrive at the end of round `λ`.

use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::digraph::{Digraph, NodeId};
use crate::quantize::{from_lattice_integer, QuantizationLevel};
use crate::rng::{self, Domain};
use crate::{Error, Result, StateVector};

pub const DEFAULT_ROUND_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FtqacNodeState {
    y: Vec<i64>,
    z: i64,
    upper: Vec<i64>,
    lower: Vec<i64>,
    halted: bool,
    output: Option<Vec<i64>>,
    value: Option<StateVector>,
}

impl FtqacNodeState {
    fn new(rho: &[i64]) -> Result<Self> {
        let y = rho
            .iter()
            .map(|&r| {
                r.checked_mul(2)
                    .ok_or_else(|| Error::Overflow(format!("initial mass 2·{r}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            y,
            z: 2,
            upper: Vec::new(),
            lower: Vec::new(),
            halted: false,
            output: None,
            value: None,
        })
    }

    pub fn mass(&self) -> &[i64] {
        &self.y
    }

    pub fn weight(&self) -> i64 {
        self.z
    }

    /// Folded `M`, empty before the first round.
    pub fn upper(&self) -> &[i64] {
        &self.upper
    }

    /// Folded `m`, empty before the first round.
    pub fn lower(&self) -> &[i64] {
        &self.lower
    }

    pub fn halted(&self) -> bool {
        self.halted
    }

    /// Agreed lattice integers once halted.
    pub fn output(&self) -> Option<&[i64]> {
        self.output.as_deref()
    }

    /// `m·Δ` once halted.
    pub fn output_value(&self) -> Option<&StateVector> {
        self.value.as_ref()
    }

    fn reset_stopping(&mut self) {
        let z = self.z;
        self.upper.clear();
        self.lower.clear();
        for &y in &self.y {
            self.lower.push(y.div_euclid(z));
            self.upper.push(ceil_div(y, z));
        }
    }

    fn spread(&self) -> i64 {
        self.upper
            .iter()
            .zip(&self.lower)
            .map(|(hi, lo)| hi - lo)
            .max()
            .unwrap_or(0)
    }
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

/// One transmission: a unit of weight carrying `payload` mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub payload: &'a [i64],
    pub destination: NodeId,
}

impl Token<'_> {
    pub const WEIGHT: i64 = 1;

    /// `⌈log₂(1+|c|)⌉` per payload component plus one bit for the weight.
    pub fn bits_estimate(&self) -> u64 {
        1 + self
            .payload
            .iter()
            .map(|c| u64::from(64 - c.unsigned_abs().leading_zeros()))
            .sum::<u64>()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CommunicationStats {
    pub tokens_sent: u64,
    pub bits_estimate: u64,
    /// `(M, m)` broadcasts, one per edge per round; reported apart from the
    /// quantized data channel.
    pub stopping_messages: u64,
}

impl std::ops::AddAssign for CommunicationStats {
    fn add_assign(&mut self, rhs: Self) {
        self.tokens_sent += rhs.tokens_sent;
        self.bits_estimate += rhs.bits_estimate;
        self.stopping_messages += rhs.stopping_messages;
    }
}

/// Fresh protocol state: `y = 2ρ_i`, `z = 2`.
pub fn initialize(rho: &[Vec<i64>], graph: &Digraph) -> Result<Vec<FtqacNodeState>> {
    let first = rho.first().ok_or(Error::EmptyNetwork)?;
    if rho.len() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count(),
            got: rho.len(),
        });
    }
    let p = first.len();
    rho.iter()
        .map(|r| {
            if r.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: r.len(),
                });
            }
            FtqacNodeState::new(r)
        })
        .collect()
}

/// Advances all nodes in lock-step and owns the synchronous mailbox.
#[derive(Debug)]
pub struct RoundScheduler<'g> {
    graph: &'g Digraph,
    diameter: u64,
    targets: Vec<Vec<NodeId>>,
    rng: ChaCha8Rng,
    lambda: u64,
    stats: CommunicationStats,
    inbox_y: Vec<Vec<i64>>,
    inbox_z: Vec<i64>,
    snapshot_upper: Vec<Vec<i64>>,
    snapshot_lower: Vec<Vec<i64>>,
}

impl<'g> RoundScheduler<'g> {
    pub fn new(graph: &'g Digraph, rng: ChaCha8Rng) -> Result<Self> {
        let diameter = graph.diameter()? as u64;
        let n = graph.node_count();
        // uniform over out-neighbors plus self
        let targets = (0..n)
            .map(|i| {
                let mut t = graph.out_neighbors(i).to_vec();
                t.push(i);
                t.sort_unstable();
                t
            })
            .collect();
        Ok(Self {
            graph,
            diameter,
            targets,
            rng,
            lambda: 1,
            stats: CommunicationStats::default(),
            inbox_y: vec![Vec::new(); n],
            inbox_z: vec![0; n],
            snapshot_upper: vec![Vec::new(); n],
            snapshot_lower: vec![Vec::new(); n],
        })
    }

    pub fn from_seed(graph: &'g Digraph, seed: u64) -> Result<Self> {
        Self::new(graph, rng::stream(seed, Domain::Consensus, 0))
    }

    /// Index of the next round to execute (starts at 1).
    pub fn lambda(&self) -> u64 {
        self.lambda
    }

    pub fn diameter(&self) -> u64 {
        self.diameter
    }

    pub fn stats(&self) -> CommunicationStats {
        self.stats
    }

    /// Sampling support of node `i`: its out-neighbors and itself, each with
    /// probability `1/(1 + D_i^+)`.
    pub fn destinations(&self, node: NodeId) -> &[NodeId] {
        &self.targets[node]
    }

    /// Executes round `λ` and returns `λ`.
    pub fn step_round(&mut self, states: &mut [FtqacNodeState]) -> Result<u64> {
        let n = self.graph.node_count();
        if states.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: states.len(),
            });
        }
        if let Some(i) = states.iter().position(|s| s.halted) {
            return Err(Error::ProtocolViolation(format!(
                "round {} requested but node {i} has halted",
                self.lambda
            )));
        }
        let lambda = self.lambda;
        let p = states.first().map_or(0, |s| s.y.len());

        if (lambda - 1).is_multiple_of(self.diameter) {
            states.iter_mut().for_each(FtqacNodeState::reset_stopping);
        }

        // stopping-variable exchange over in-neighbors
        for (i, s) in states.iter().enumerate() {
            self.snapshot_upper[i].clone_from(&s.upper);
            self.snapshot_lower[i].clone_from(&s.lower);
        }
        for (i, s) in states.iter_mut().enumerate() {
            for &j in self.graph.in_neighbors(i) {
                for c in 0..p {
                    s.upper[c] = s.upper[c].max(self.snapshot_upper[j][c]);
                    s.lower[c] = s.lower[c].min(self.snapshot_lower[j][c]);
                }
            }
        }
        self.stats.stopping_messages += self.graph.edge_count() as u64;

        // send phase
        for inbox in self.inbox_y.iter_mut() {
            inbox.clear();
            inbox.resize(p, 0);
        }
        self.inbox_z.fill(0);
        let mut payload = vec![0i64; p];
        for (i, s) in states.iter_mut().enumerate() {
            let targets = &self.targets[i];
            let mut remaining = s.z;
            while remaining > 1 {
                for (c, y) in payload.iter_mut().zip(s.y.iter_mut()) {
                    *c = y.div_euclid(s.z);
                    *y -= *c;
                }
                s.z -= 1;
                remaining -= 1;
                let destination = targets[self.rng.random_range(0..targets.len())];
                let token = Token {
                    payload: &payload,
                    destination,
                };
                self.stats.tokens_sent += 1;
                self.stats.bits_estimate += token.bits_estimate();
                let inbox = &mut self.inbox_y[destination];
                for (acc, c) in inbox.iter_mut().zip(token.payload) {
                    *acc = acc.checked_add(*c).ok_or_else(mass_overflow)?;
                }
                self.inbox_z[destination] += Token::WEIGHT;
            }
        }

        // receive phase
        for (i, s) in states.iter_mut().enumerate() {
            for (y, add) in s.y.iter_mut().zip(&self.inbox_y[i]) {
                *y = y.checked_add(*add).ok_or_else(mass_overflow)?;
            }
            s.z += self.inbox_z[i];
        }

        self.lambda += 1;
        Ok(lambda)
    }
}

fn mass_overflow() -> Error {
    Error::Overflow("token mass accumulation".into())
}

/// Stop test for a round with `λ ≡ 0 mod D`. Returns `true` when every node
/// halts; a partial halt or disagreeing outputs is a protocol violation.
pub fn check_stop(
    states: &mut [FtqacNodeState],
    lambda: u64,
    diameter: u64,
    delta: QuantizationLevel,
) -> Result<bool> {
    if diameter == 0 || !lambda.is_multiple_of(diameter) {
        return Err(Error::Precondition(format!(
            "stop check at round {lambda} with diameter {diameter}"
        )));
    }
    let ready = states.iter().filter(|s| s.spread() <= 1).count();
    if ready == 0 {
        return Ok(false);
    }
    if ready != states.len() {
        return Err(Error::ProtocolViolation(format!(
            "only {ready} of {} nodes satisfy the stop condition in round {lambda}",
            states.len()
        )));
    }
    let agreed = states[0].lower.clone();
    if let Some(i) = states.iter().position(|s| s.lower != agreed) {
        return Err(Error::ProtocolViolation(format!(
            "node {i} would output {:?} but node 0 outputs {agreed:?}",
            states[i].lower
        )));
    }
    let value = from_lattice_integer(&agreed, delta);
    for s in states.iter_mut() {
        s.halted = true;
        s.output = Some(agreed.clone());
        s.value = Some(value.clone());
    }
    Ok(true)
}

/// Receives the end-of-round state of every node.
pub trait RoundObserver {
    fn on_round(&mut self, lambda: u64, states: &[FtqacNodeState]) -> Result<()>;
}

impl<F: FnMut(u64, &[FtqacNodeState])> RoundObserver for F {
    fn on_round(&mut self, lambda: u64, states: &[FtqacNodeState]) -> Result<()> {
        self(lambda, states);
        Ok(())
    }
}

#[derive(Serialize)]
struct RoundRecord<'a> {
    lambda: u64,
    node: usize,
    y: &'a [i64],
    z: i64,
    #[serde(rename = "M")]
    upper: &'a [i64],
    #[serde(rename = "m")]
    lower: &'a [i64],
}

/// Writes one JSON object per node per round:
/// `{"lambda":1,"node":0,"y":[..],"z":2,"M":[..],"m":[..]}`.
pub struct JsonLinesTrace<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesTrace<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> RoundObserver for JsonLinesTrace<W> {
    fn on_round(&mut self, lambda: u64, states: &[FtqacNodeState]) -> Result<()> {
        for (node, s) in states.iter().enumerate() {
            let record = RoundRecord {
                lambda,
                node,
                y: &s.y,
                z: s.z,
                upper: &s.upper,
                lower: &s.lower,
            };
            serde_json::to_writer(&mut self.out, &record).map_err(std::io::Error::from)?;
            self.out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FtqacOptions {
    pub round_budget: u64,
}

impl Default for FtqacOptions {
    fn default() -> Self {
        Self {
            round_budget: DEFAULT_ROUND_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    /// Per-node outputs `m·Δ`, identical across nodes.
    pub outputs: Vec<StateVector>,
    /// The agreed lattice integers `m`.
    pub lattice: Vec<i64>,
    pub rounds: u64,
    pub stats: CommunicationStats,
}

pub fn run_to_completion(
    rho: &[Vec<i64>],
    graph: &Digraph,
    delta: QuantizationLevel,
    seed: u64,
) -> Result<ConsensusOutcome> {
    run_seeded(rho, graph, delta, seed, FtqacOptions::default(), None)
}

/// [`run_consensus`] with the token routing stream derived from `seed`.
pub fn run_seeded(
    rho: &[Vec<i64>],
    graph: &Digraph,
    delta: QuantizationLevel,
    seed: u64,
    options: FtqacOptions,
    observer: Option<&mut dyn RoundObserver>,
) -> Result<ConsensusOutcome> {
    run_consensus(
        rho,
        graph,
        delta,
        rng::stream(seed, Domain::Consensus, 0),
        options,
        observer,
    )
}

pub fn run_consensus(
    rho: &[Vec<i64>],
    graph: &Digraph,
    delta: QuantizationLevel,
    rng: ChaCha8Rng,
    options: FtqacOptions,
    mut observer: Option<&mut dyn RoundObserver>,
) -> Result<ConsensusOutcome> {
    let mut states = initialize(rho, graph)?;
    let mut scheduler = RoundScheduler::new(graph, rng)?;
    let diameter = scheduler.diameter();
    loop {
        if scheduler.lambda() > options.round_budget {
            return Err(Error::NonTermination {
                budget: options.round_budget,
                dump: dump_states(&states),
            });
        }
        let lambda = scheduler.step_round(&mut states)?;
        if let Some(obs) = observer.as_deref_mut() {
            obs.on_round(lambda, &states)?;
        }
        if lambda % diameter == 0 && check_stop(&mut states, lambda, diameter, delta)? {
            let lattice = states[0]
                .output
                .clone()
                .expect("halted nodes carry an output");
            return Ok(ConsensusOutcome {
                outputs: states
                    .iter()
                    .map(|s| s.value.clone().expect("halted nodes carry an output"))
                    .collect(),
                lattice,
                rounds: lambda,
                stats: scheduler.stats(),
            });
        }
    }
}

fn dump_states(states: &[FtqacNodeState]) -> String {
    let mut out = String::new();
    for (i, s) in states.iter().enumerate() {
        let _ = writeln!(
            out,
            "node {i}: y={:?} z={} M={:?} m={:?}",
            s.y, s.z, s.upper, s.lower
        );
    }
    out
}
