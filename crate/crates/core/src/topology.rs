//! Bounded-degree network topologies.
//!
//! A [`Topology`] is an immutable simple undirected graph stored in
//! compressed sparse row form. Node `i` is both scheduler `i` and queue `i`.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Number of fresh attempts the configuration model gets before giving up.
pub const CONFIG_MODEL_RETRIES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cyc1d,
    Ccc,
    Torus,
    ConfigModel,
    Bethe,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    family: Family,
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Topology {
    /// Build from an edge list. Edges are undirected; duplicates and
    /// self-loops are rejected.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)], family: Family) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidTopology("graph has no nodes".into()));
        }
        if n_nodes > u32::MAX as usize {
            return Err(Error::InvalidTopology("too many nodes".into()));
        }
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::InvalidTopology(format!(
                    "edge ({a}, {b}) out of range for {n_nodes} nodes"
                )));
            }
            if a == b {
                return Err(Error::InvalidTopology(format!("self-loop at node {a}")));
            }
            adj[a].push(b as u32);
            adj[b].push(a as u32);
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        let mut targets = Vec::with_capacity(2 * edges.len());
        offsets.push(0);
        for (i, list) in adj.iter_mut().enumerate() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidTopology(format!(
                    "duplicate edge at node {i}"
                )));
            }
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        Ok(Self {
            family,
            offsets,
            targets,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_edges(&self) -> usize {
        self.targets.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n_nodes()).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// `Some(d)` when every node has degree `d`.
    pub fn regular_degree(&self) -> Option<usize> {
        let d = self.degree(0);
        (1..self.n_nodes()).all(|i| self.degree(i) == d).then_some(d)
    }

    pub fn degree_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for i in 0..self.n_nodes() {
            *hist.entry(self.degree(i)).or_insert(0) += 1;
        }
        hist
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_nodes()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .map(move |&j| (i, j as usize))
                .filter(|&(i, j)| i < j)
        })
    }

    pub fn component_count(&self) -> usize {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors(u) {
                    let v = v as usize;
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    /// Serialize to the edge-list text format: a `n_nodes=<N>` header and one
    /// `i j` line per edge with `i < j`.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n_nodes={}\n", self.n_nodes());
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let parse_err = |detail: String| Error::Parse {
            what: "edge list",
            detail,
        };
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| parse_err("missing header".into()))?;
        let n_nodes: usize = header
            .strip_prefix("n_nodes=")
            .ok_or_else(|| parse_err(format!("bad header {header:?}")))?
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad node count: {e}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(parse_err(format!("bad edge line {line:?}")));
            };
            let a = a
                .parse()
                .map_err(|e| parse_err(format!("{line:?}: {e}")))?;
            let b = b
                .parse()
                .map_err(|e| parse_err(format!("{line:?}: {e}")))?;
            edges.push((a, b));
        }
        Self::from_edges(n_nodes, &edges, Family::Custom)
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_edge_list(&text)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list()).map_err(|e| Error::io(path, e))
    }
}

/// Ring of `n` nodes, node `i` linked to `i ± 1 (mod n)`.
pub fn build_cyc1d(n: usize) -> Result<Topology> {
    if n < 3 {
        return Err(Error::InvalidTopology(format!(
            "cycle needs at least 3 nodes, got {n}"
        )));
    }
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Topology::from_edges(n, &edges, Family::Cyc1d)
}

/// Cube-connected cycles of order `k`: `k * 2^k` nodes `(p, v)` with cycle
/// edges `(p ± 1, v)` and one cube edge `(p, v ^ (1 << p))`.
///
/// Node `(p, v)` gets index `v * k + p`.
pub fn build_ccc(cycle_order: usize) -> Result<Topology> {
    let k = cycle_order;
    if k < 3 {
        return Err(Error::InvalidTopology(format!(
            "cube-connected cycles need order >= 3, got {k}"
        )));
    }
    if k > 24 {
        return Err(Error::InvalidTopology(format!("order {k} is too large")));
    }
    let idx = |p: usize, v: usize| v * k + p;
    let n = k << k;
    let mut edges = Vec::with_capacity(3 * n / 2);
    for v in 0..(1usize << k) {
        for p in 0..k {
            edges.push((idx(p, v), idx((p + 1) % k, v)));
            let w = v ^ (1 << p);
            if v < w {
                edges.push((idx(p, v), idx(p, w)));
            }
        }
    }
    Topology::from_edges(n, &edges, Family::Ccc)
}

/// Square `side × side` torus; node `(r, c)` gets index `r * side + c`.
pub fn build_torus(side: usize) -> Result<Topology> {
    if side < 3 {
        return Err(Error::InvalidTopology(format!(
            "torus needs side >= 3, got {side}"
        )));
    }
    let idx = |r: usize, c: usize| r * side + c;
    let mut edges = Vec::with_capacity(2 * side * side);
    for r in 0..side {
        for c in 0..side {
            edges.push((idx(r, c), idx(r, (c + 1) % side)));
            edges.push((idx(r, c), idx((r + 1) % side, c)));
        }
    }
    Topology::from_edges(side * side, &edges, Family::Torus)
}

/// Erased configuration model with degrees drawn uniformly from
/// `degree_set`.
///
/// Stubs are matched uniformly at random; self-loops and parallel edges are
/// dropped. An odd stub total is repaired by re-drawing the degree of one
/// random node from the entries of opposite parity. Disconnected results are
/// discarded and the whole construction is retried. A matching that needed
/// no erasure is returned as soon as one is found; otherwise the first
/// connected erased graph is used once the retry budget runs out.
pub fn build_config_model(n: usize, degree_set: &[usize], seed: u64) -> Result<Topology> {
    if n < 4 {
        return Err(Error::InvalidTopology(format!(
            "configuration model needs at least 4 nodes, got {n}"
        )));
    }
    if degree_set.is_empty() || degree_set.iter().any(|&d| d < 2) {
        return Err(Error::InvalidTopology(
            "degree set must be non-empty with entries >= 2".into(),
        ));
    }
    if degree_set.iter().any(|&d| d >= n) {
        return Err(Error::InvalidTopology(format!(
            "degrees must be below the node count {n}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut fallback = None;
    for _attempt in 0..CONFIG_MODEL_RETRIES {
        let mut degrees: Vec<usize> = (0..n)
            .map(|_| degree_set[rng.random_range(0..degree_set.len())])
            .collect();
        if degrees.iter().sum::<usize>() % 2 == 1 {
            let node = rng.random_range(0..n);
            let parity = degrees[node] % 2;
            let flips: Vec<usize> = degree_set
                .iter()
                .copied()
                .filter(|d| d % 2 != parity)
                .collect();
            if flips.is_empty() {
                return Err(Error::InvalidTopology(format!(
                    "every degree in {degree_set:?} is odd and {n} is odd; no even stub total exists"
                )));
            }
            degrees[node] = flips[rng.random_range(0..flips.len())];
        }
        let mut stubs: Vec<usize> = degrees
            .iter()
            .enumerate()
            .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
            .collect();
        stubs.shuffle(&mut rng);
        let pairs = stubs.len() / 2;
        let mut edges: Vec<(usize, usize)> = stubs
            .chunks_exact(2)
            .filter(|p| p[0] != p[1])
            .map(|p| (p[0].min(p[1]), p[0].max(p[1])))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let erased = edges.len() < pairs;
        let topo = Topology::from_edges(n, &edges, Family::ConfigModel)?;
        if !topo.is_connected() {
            continue;
        }
        if !erased {
            return Ok(topo);
        }
        fallback.get_or_insert(topo);
    }
    fallback.ok_or(Error::ConfigModelExhausted {
        attempts: CONFIG_MODEL_RETRIES,
    })
}

/// Finite Bethe lattice (regular tree) of the given depth.
///
/// The root has `branching` children and every other internal node
/// `branching - 1`; nodes are numbered breadth-first from the root.
pub fn build_bethe(depth: usize, branching: usize) -> Result<Topology> {
    if depth < 1 || branching < 3 {
        return Err(Error::InvalidTopology(format!(
            "Bethe lattice needs depth >= 1 and branching >= 3, got depth {depth}, branching {branching}"
        )));
    }
    let n = bethe_size(depth, branching)
        .filter(|&n| n <= u32::MAX as usize)
        .ok_or_else(|| Error::InvalidTopology("Bethe lattice too large".into()))?;
    let mut edges = Vec::with_capacity(n - 1);
    let mut level = vec![0usize];
    let mut next_id = 1;
    for o in 1..=depth {
        let children_each = if o == 1 { branching } else { branching - 1 };
        let mut next_level = Vec::with_capacity(level.len() * children_each);
        for &parent in &level {
            for _ in 0..children_each {
                edges.push((parent, next_id));
                next_level.push(next_id);
                next_id += 1;
            }
        }
        level = next_level;
    }
    debug_assert_eq!(next_id, n);
    Topology::from_edges(n, &edges, Family::Bethe)
}

/// `1 + Σ_{o=1..depth} branching · (branching − 1)^(o−1)`, if it fits.
pub fn bethe_size(depth: usize, branching: usize) -> Option<usize> {
    let mut total: usize = 1;
    let mut layer: usize = branching;
    for _ in 0..depth {
        total = total.checked_add(layer)?;
        layer = layer.checked_mul(branching - 1)?;
    }
    Some(total)
}

/// Serializable description of a topology, used in experiment configs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TopologySpec {
    Cyc1d {
        n: usize,
    },
    Ccc {
        cycle_order: usize,
    },
    Torus {
        side: usize,
    },
    ConfigModel {
        n: usize,
        #[serde(default = "default_degree_set")]
        degrees: Vec<usize>,
        #[serde(default)]
        seed: u64,
    },
    Bethe {
        depth: usize,
        #[serde(default = "default_branching")]
        branching: usize,
    },
    EdgeList {
        path: std::path::PathBuf,
    },
}

fn default_degree_set() -> Vec<usize> {
    vec![2, 3]
}

fn default_branching() -> usize {
    3
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology> {
        match self {
            TopologySpec::Cyc1d { n } => build_cyc1d(*n),
            TopologySpec::Ccc { cycle_order } => build_ccc(*cycle_order),
            TopologySpec::Torus { side } => build_torus(*side),
            TopologySpec::ConfigModel { n, degrees, seed } => {
                build_config_model(*n, degrees, *seed)
            }
            TopologySpec::Bethe { depth, branching } => build_bethe(*depth, *branching),
            TopologySpec::EdgeList { path } => Topology::read_edge_list(path),
        }
    }

    /// Short stable key used in result tables and seed derivation.
    pub fn key(&self) -> String {
        match self {
            TopologySpec::Cyc1d { n } => format!("cyc1d-{n}"),
            TopologySpec::Ccc { cycle_order } => format!("ccc-{cycle_order}"),
            TopologySpec::Torus { side } => format!("torus-{side}"),
            TopologySpec::ConfigModel { n, degrees, seed } => {
                let d: Vec<String> = degrees.iter().map(ToString::to_string).collect();
                format!("cm-{n}-d{}-s{seed}", d.join("_"))
            }
            TopologySpec::Bethe { depth, branching } => format!("bethe-{depth}-{branching}"),
            TopologySpec::EdgeList { path } => format!("file-{}", path.display()),
        }
    }

    /// Parse the compact command-line form: `cyc1d:N`, `ccc:K`, `torus:SIDE`,
    /// `cm:N[:D1,D2,..[:SEED]]`, `bethe:DEPTH[:BRANCHING]`, `file:PATH`, or a
    /// JSON object.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| Error::Parse {
                what: "topology",
                detail: e.to_string(),
            });
        }
        let err = |detail: String| Error::Parse {
            what: "topology",
            detail,
        };
        let (family, rest) = s
            .split_once(':')
            .ok_or_else(|| err(format!("expected <family>:<size>, got {s:?}")))?;
        if family.eq_ignore_ascii_case("file") {
            return Ok(TopologySpec::EdgeList { path: rest.into() });
        }
        let fields: Vec<&str> = rest.split(':').collect();
        let num = |i: usize| -> Result<usize> {
            let f = fields
                .get(i)
                .ok_or_else(|| err(format!("missing field {i} in {s:?}")))?;
            f.parse().map_err(|_| err(format!("{f:?} is not a size")))
        };
        let max_fields = match family.to_ascii_lowercase().as_str() {
            "cm" | "config_model" => 3,
            "bethe" => 2,
            _ => 1,
        };
        if fields.len() > max_fields {
            return Err(err(format!("too many fields in {s:?}")));
        }
        Ok(match family.to_ascii_lowercase().as_str() {
            "cyc1d" | "cycle" => TopologySpec::Cyc1d { n: num(0)? },
            "ccc" => TopologySpec::Ccc {
                cycle_order: num(0)?,
            },
            "torus" => TopologySpec::Torus { side: num(0)? },
            "cm" | "config_model" => {
                let degrees = match fields.get(1) {
                    Some(d) => d
                        .split(',')
                        .map(|x| x.trim().parse().map_err(|_| err(format!("bad degree {x:?}"))))
                        .collect::<Result<Vec<usize>>>()?,
                    None => default_degree_set(),
                };
                let seed = match fields.get(2) {
                    Some(x) => x.parse().map_err(|_| err(format!("bad seed {x:?}")))?,
                    None => 0,
                };
                TopologySpec::ConfigModel {
                    n: num(0)?,
                    degrees,
                    seed,
                }
            }
            "bethe" => TopologySpec::Bethe {
                depth: num(0)?,
                branching: if fields.len() > 1 { num(1)? } else { default_branching() },
            },
            other => return Err(err(format!("unknown family {other:?}"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_spec_parsing() {
        assert_eq!(TopologySpec::parse("cyc1d:101").unwrap(), TopologySpec::Cyc1d { n: 101 });
        assert_eq!(TopologySpec::parse("ccc:5").unwrap(), TopologySpec::Ccc { cycle_order: 5 });
        assert_eq!(
            TopologySpec::parse("cm:50:2,3,4:7").unwrap(),
            TopologySpec::ConfigModel {
                n: 50,
                degrees: vec![2, 3, 4],
                seed: 7
            }
        );
        assert_eq!(
            TopologySpec::parse("bethe:4").unwrap(),
            TopologySpec::Bethe { depth: 4, branching: 3 }
        );
        assert_eq!(
            TopologySpec::parse(r#"{"family":"torus","side":9}"#).unwrap(),
            TopologySpec::Torus { side: 9 }
        );
        for bad in ["cyc1d", "cyc1d:x", "torus:4:4", "hypercube:3"] {
            assert!(TopologySpec::parse(bad).is_err(), "{bad}");
        }
    }

    /// Full scan of the structural invariants.
    fn check_simple(t: &Topology) {
        for i in 0..t.n_nodes() {
            let nb = t.neighbors(i);
            assert!(nb.windows(2).all(|w| w[0] < w[1]), "sorted, no dups");
            for &j in nb {
                assert_ne!(j as usize, i);
                assert!(t.neighbors(j as usize).contains(&(i as u32)));
            }
        }
    }

    #[test]
    fn cycle() {
        let t = build_cyc1d(3).unwrap();
        assert_eq!(t.n_nodes(), 3);
        assert_eq!(t.regular_degree(), Some(2));
        let t = build_cyc1d(101).unwrap();
        assert_eq!((t.n_nodes(), t.n_edges()), (101, 101));
        assert_eq!(t.regular_degree(), Some(2));
        assert_eq!(t.neighbors(0), &[1, 100]);
        check_simple(&t);
        assert!(t.is_connected());
        assert!(build_cyc1d(2).is_err());
    }

    #[test]
    fn ccc_sizes_follow_formula() {
        for k in 3..=7 {
            let t = build_ccc(k).unwrap();
            assert_eq!(t.n_nodes(), k * (1 << k));
            assert_eq!(t.regular_degree(), Some(3));
            check_simple(&t);
            assert!(t.is_connected());
        }
        assert_eq!(build_ccc(3).unwrap().n_nodes(), 24);
        assert_eq!(build_ccc(5).unwrap().n_nodes(), 160);
        assert!(build_ccc(2).is_err());
    }

    #[test]
    fn torus() {
        for (side, n) in [(3, 9), (11, 121), (70, 4900)] {
            let t = build_torus(side).unwrap();
            assert_eq!(t.n_nodes(), n);
            assert_eq!(t.regular_degree(), Some(4));
            check_simple(&t);
            assert!(t.is_connected());
        }
        assert!(build_torus(2).is_err());
    }

    #[test]
    fn bethe() {
        let t = build_bethe(5, 3).unwrap();
        assert_eq!(t.n_nodes(), 94);
        assert_eq!(t.degree(0), 3);
        assert_eq!(t.max_degree(), 3);
        assert_eq!(t.n_edges(), 93);
        check_simple(&t);
        assert!(t.is_connected());

        let star = build_bethe(1, 3).unwrap();
        assert_eq!(star.n_nodes(), 4);
        assert_eq!(star.neighbors(0), &[1, 2, 3]);

        let big = build_bethe(11, 3).unwrap();
        assert_eq!(big.n_nodes(), 6142);
        assert_eq!(big.degree_histogram()[&1], 3 * 1024);
        assert!(build_bethe(0, 3).is_err());
        assert!(build_bethe(3, 2).is_err());
    }

    #[test]
    fn config_model() {
        let t = build_config_model(101, &[2, 3], 11).unwrap();
        assert_eq!(t.n_nodes(), 101);
        assert!(t.max_degree() <= 3);
        assert!(t.is_connected());
        check_simple(&t);
        assert_eq!(t, build_config_model(101, &[2, 3], 11).unwrap());

        let k4 = build_config_model(4, &[3], 5).unwrap();
        assert_eq!(k4.regular_degree(), Some(3));
        assert_eq!(k4.n_edges(), 6);

        assert!(build_config_model(3, &[2], 0).is_err());
        assert!(build_config_model(10, &[1, 2], 0).is_err());
        assert!(build_config_model(5, &[3], 0).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let t = build_bethe(3, 3).unwrap();
        let back = Topology::from_edge_list(&t.to_edge_list()).unwrap();
        assert_eq!(back.family(), Family::Custom);
        assert_eq!(back.offsets, t.offsets);
        assert_eq!(back.targets, t.targets);
        assert!(Topology::from_edge_list("n_nodes=3\n0 0\n").is_err());
        assert!(Topology::from_edge_list("n_nodes=3\n0 1\n1 0\n").is_err());
        assert!(Topology::from_edge_list("nodes=3\n").is_err());
        assert!(Topology::from_edge_list("n_nodes=2\n0 5\n").is_err());
    }

    #[test]
    fn spec_json() {
        let spec: TopologySpec =
            serde_json::from_str(r#"{"family":"config_model","n":50}"#).unwrap();
        assert_eq!(
            spec,
            TopologySpec::ConfigModel {
                n: 50,
                degrees: vec![2, 3],
                seed: 0
            }
        );
        assert_eq!(spec.build().unwrap().n_nodes(), 50);
    }
}
