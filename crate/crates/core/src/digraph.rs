//! Directed communication graphs.
//!
//! Edges are stored as `(receiver, sender)` pairs: node `receiver` can hear
//! node `sender`. Every node additionally carries an implicit self-loop, which
//! is never stored and never counted in path lengths.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng::{self, Domain};
use crate::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    n: usize,
    in_neighbors: Vec<Vec<NodeId>>,
    out_neighbors: Vec<Vec<NodeId>>,
    connectivity: Connectivity,
    diameter: Option<usize>,
}

/// Outcome of a strong-connectivity test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connectivity {
    pub strongly_connected: bool,
    /// `(from, to)` such that `to` cannot be reached from `from`.
    pub witness: Option<(NodeId, NodeId)>,
}

impl Digraph {
    /// Builds a graph from `(receiver, sender)` pairs. Self-loops and
    /// duplicate edges are dropped. Connectivity is not required here; use
    /// [`Digraph::diameter`] or [`Digraph::verify_strong_connectivity`].
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize { n, min: 1 });
        }
        let mut set = BTreeSet::new();
        for (receiver, sender) in edges {
            for node in [receiver, sender] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { node, n });
                }
            }
            if receiver != sender {
                set.insert((receiver, sender));
            }
        }
        let mut in_neighbors = vec![Vec::new(); n];
        let mut out_neighbors = vec![Vec::new(); n];
        for &(receiver, sender) in &set {
            in_neighbors[receiver].push(sender);
            out_neighbors[sender].push(receiver);
        }
        for list in out_neighbors.iter_mut() {
            list.sort_unstable();
        }
        let (connectivity, diameter) = match bfs_eccentricities(&out_neighbors) {
            Ok(d) => (
                Connectivity {
                    strongly_connected: true,
                    witness: None,
                },
                Some(d),
            ),
            Err((from, to)) => (
                Connectivity {
                    strongly_connected: false,
                    witness: Some((from, to)),
                },
                None,
            ),
        };
        Ok(Self {
            n,
            in_neighbors,
            out_neighbors,
            connectivity,
            diameter,
        })
    }

    /// Random strongly connected digraph: a directed Hamiltonian cycle over a
    /// random node permutation, plus every other ordered pair independently
    /// with probability `extra_edge_probability`.
    pub fn generate_strongly_connected(
        n: usize,
        extra_edge_probability: f64,
        seed: u64,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize { n, min: 2 });
        }
        if !(0.0..=1.0).contains(&extra_edge_probability) {
            return Err(Error::InvalidProbability(extra_edge_probability));
        }
        let mut rng = rng::stream(seed, Domain::Graph, 0);
        let mut order: Vec<NodeId> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut edges = BTreeSet::new();
        for i in 0..n {
            let sender = order[i];
            let receiver = order[(i + 1) % n];
            edges.insert((receiver, sender));
        }
        for receiver in 0..n {
            for sender in 0..n {
                if receiver == sender || edges.contains(&(receiver, sender)) {
                    continue;
                }
                if rng.random_bool(extra_edge_probability) {
                    edges.insert((receiver, sender));
                }
            }
        }
        let g = Self::from_edges(n, edges)?;
        debug_assert!(g.connectivity.strongly_connected);
        Ok(g)
    }

    /// Directed ring `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn ring(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize { n, min: 2 });
        }
        Self::from_edges(n, (0..n).map(|i| ((i + 1) % n, i)))
    }

    /// Complete digraph on `n` nodes.
    pub fn complete(n: usize) -> Result<Self> {
        Self::from_edges(
            n,
            (0..n).flat_map(|r| (0..n).filter(move |&s| s != r).map(move |s| (r, s))),
        )
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.in_neighbors.iter().map(Vec::len).sum()
    }

    /// Nodes that can transmit to `node`.
    pub fn in_neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.in_neighbors[node]
    }

    /// Nodes that can receive from `node`.
    pub fn out_neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.out_neighbors[node]
    }

    pub fn out_degree(&self, node: NodeId) -> usize {
        self.out_neighbors[node].len()
    }

    /// All stored edges as `(receiver, sender)`, ordered.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.in_neighbors
            .iter()
            .enumerate()
            .flat_map(|(r, senders)| senders.iter().map(move |&s| (r, s)))
    }

    pub fn has_edge(&self, receiver: NodeId, sender: NodeId) -> bool {
        self.in_neighbors
            .get(receiver)
            .is_some_and(|l| l.contains(&sender))
    }

    pub fn verify_strong_connectivity(&self) -> Connectivity {
        self.connectivity
    }

    /// Longest shortest directed path over ordered pairs of distinct nodes.
    /// A single node has diameter 1 so that the stopping period is positive.
    pub fn diameter(&self) -> Result<usize> {
        match (self.diameter, self.connectivity.witness) {
            (Some(d), _) => Ok(d),
            (None, Some((from, to))) => Err(Error::NotStronglyConnected { from, to }),
            (None, None) => unreachable!("diameter and witness are set together"),
        }
    }

    /// Serializes to the edge-list text format: a header `n D` followed by
    /// one `receiver sender` line per edge.
    pub fn to_edge_list(&self) -> Result<String> {
        let d = self.diameter()?;
        let mut out = format!("{} {}\n", self.n, d);
        for (r, s) in self.edges() {
            writeln!(out, "{r} {s}").expect("writing to a String cannot fail");
        }
        Ok(out)
    }

    /// Parses the edge-list text format. The declared diameter must match the
    /// one computed from the edges. Blank lines and `#` comments are ignored.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .enumerate()
            .filter(|(_, l)| !l.is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("edge list is empty".into()))?;
        let [n, declared] = parse_pair(header, 1)?;
        let mut edges = Vec::new();
        for (idx, line) in lines {
            edges.push(parse_pair(line, idx + 1).map(|[r, s]| (r, s))?);
        }
        let g = Self::from_edges(n, edges)?;
        let d = g.diameter()?;
        if d != declared {
            return Err(Error::Parse(format!(
                "declared diameter {declared} but the edges give {d}"
            )));
        }
        Ok(g)
    }
}

fn parse_pair(line: &str, line_no: usize) -> Result<[usize; 2]> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(Error::Parse(format!(
            "line {line_no}: expected two integers, found {:?}",
            line
        )));
    }
    let mut out = [0usize; 2];
    for (slot, f) in out.iter_mut().zip(&fields) {
        *slot = f
            .parse()
            .map_err(|e| Error::Parse(format!("line {line_no}: {f:?}: {e}")))?;
    }
    Ok(out)
}

/// BFS from every source over the out-adjacency lists. Returns the diameter
/// or the first `(from, to)` pair with no directed path.
fn bfs_eccentricities(out: &[Vec<NodeId>]) -> std::result::Result<usize, (NodeId, NodeId)> {
    let n = out.len();
    let mut diameter = 0;
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::with_capacity(n);
    for source in 0..n {
        dist.fill(usize::MAX);
        dist[source] = 0;
        queue.clear();
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &v in &out[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (target, &d) in dist.iter().enumerate() {
            if d == usize::MAX {
                return Err((source, target));
            }
            diameter = diameter.max(d);
        }
    }
    Ok(diameter.max(1))
}

/// Free-function form of [`Digraph::diameter`].
pub fn compute_diameter(g: &Digraph) -> Result<usize> {
    g.diameter()
}
