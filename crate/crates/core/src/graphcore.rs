//! Undirected graphs, their structural statistics, loaders, the stochastic
//! block model generator and edge-flip perturbations.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{sym_normalize_value, Tensor};

/// Unordered node pair stored as `(min, max)`.
pub type Edge = (usize, usize);

#[inline]
pub fn edge_key(u: usize, v: usize) -> Edge {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Per-node class assignments; `None` marks a node whose label is withheld.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    classes: usize,
    assignments: Vec<Option<usize>>,
}

impl Labels {
    pub fn new(classes: usize, assignments: Vec<Option<usize>>) -> Result<Self> {
        if let Some(bad) = assignments.iter().flatten().find(|c| **c >= classes) {
            return Err(Error::config(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            classes,
            assignments,
        })
    }

    pub fn from_classes(classes: usize, assignments: &[usize]) -> Result<Self> {
        Self::new(classes, assignments.iter().map(|c| Some(*c)).collect())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn get(&self, node: usize) -> Option<usize> {
        self.assignments[node]
    }

    pub fn assignments(&self) -> &[Option<usize>] {
        &self.assignments
    }

    /// One-hot matrix `Y`; rows of withheld labels are zero.
    pub fn one_hot(&self) -> Tensor {
        let mut y = Tensor::zeros(self.assignments.len(), self.classes);
        for (i, c) in self.assignments.iter().enumerate() {
            if let Some(c) = c {
                y.set(i, *c, 1.0);
            }
        }
        y
    }

    /// Copy with every label outside `keep` withheld.
    pub fn restricted_to(&self, keep: &Mask) -> Labels {
        Labels {
            classes: self.classes,
            assignments: self
                .assignments
                .iter()
                .enumerate()
                .map(|(i, c)| if keep.contains(i) { *c } else { None })
                .collect(),
        }
    }
}

/// Boolean node selection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn all(n: usize) -> Self {
        Mask(vec![true; n])
    }

    pub fn none(n: usize) -> Self {
        Mask(vec![false; n])
    }

    pub fn from_bools(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    pub fn from_indices(n: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; n];
        for i in indices {
            bits[i] = true;
        }
        Mask(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
            .collect()
    }

    pub fn complement(&self) -> Mask {
        Mask(self.0.iter().map(|b| !b).collect())
    }

    pub fn union(&self, other: &Mask) -> Mask {
        Mask(self.0.iter().zip(&other.0).map(|(a, b)| *a || *b).collect())
    }

    pub fn intersect(&self, other: &Mask) -> Mask {
        Mask(self.0.iter().zip(&other.0).map(|(a, b)| *a && *b).collect())
    }
}

/// Undirected simple graph with optional node features `Z` and labels `Y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<Edge>,
    adjacency: Tensor,
    neighbors: Vec<Vec<usize>>,
    features: Option<Tensor>,
    labels: Option<Labels>,
}

impl Graph {
    /// Builds a graph from unordered pairs; duplicates collapse, self-pairs
    /// and out-of-range endpoints are rejected.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::config(format!("self-loop on node {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::Index(format!(
                    "edge ({u},{v}) out of range for {n} nodes"
                )));
            }
            set.insert(edge_key(u, v));
        }
        Ok(Self::from_edge_set(n, set))
    }

    fn from_edge_set(n: usize, edges: BTreeSet<Edge>) -> Self {
        let mut adjacency = Tensor::zeros(n, n);
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &edges {
            adjacency.set(u, v, 1.0);
            adjacency.set(v, u, 1.0);
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Self {
            n,
            edges,
            adjacency,
            neighbors,
            features: None,
            labels: None,
        }
    }

    pub fn with_features(mut self, features: Tensor) -> Result<Self> {
        if features.rows() != self.n {
            return Err(Error::shape(format!(
                "features have {} rows for {} nodes",
                features.rows(),
                self.n
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::shape(format!(
                "labels cover {} nodes, graph has {}",
                labels.len(),
                self.n
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Same graph with every label outside `keep` withheld.
    pub fn with_labels_restricted(&self, keep: &Mask) -> Graph {
        let mut g = self.clone();
        g.labels = self.labels.as_ref().map(|l| l.restricted_to(keep));
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u != v && self.edges.contains(&edge_key(u, v))
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn features(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn require_features(&self) -> Result<&Tensor> {
        self.features
            .as_ref()
            .ok_or_else(|| Error::State("graph has no node features".into()))
    }

    pub fn require_labels(&self) -> Result<&Labels> {
        self.labels
            .as_ref()
            .ok_or_else(|| Error::State("graph has no labels".into()))
    }

    pub fn propagation_operator(&self, kind: OperatorKind) -> Tensor {
        kind.apply(&self.adjacency)
    }
}

/// Degree, two-walk count and neighbor-edge count per node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub deg: Vec<usize>,
    /// `p_i = sum_j (A^2)_{ij}`, the number of length-2 walks leaving `i`.
    pub p: Vec<usize>,
    /// Edges among the neighbors of `i`, counted once per unordered pair.
    /// The ordered-pair sum `sum_{j,k} A_ij A_jk A_ki` equals `2 * t_i`.
    pub t: Vec<usize>,
}

impl NodeStats {
    pub fn compute(g: &Graph) -> Self {
        let n = g.n();
        let deg: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
        let p = (0..n)
            .map(|i| g.neighbors(i).iter().map(|&j| deg[j]).sum())
            .collect();
        let t = (0..n)
            .map(|i| {
                let nb = g.neighbors(i);
                let mut count = 0;
                for (a, &u) in nb.iter().enumerate() {
                    for &v in &nb[a + 1..] {
                        if g.has_edge(u, v) {
                            count += 1;
                        }
                    }
                }
                count
            })
            .collect();
        Self { deg, p, t }
    }
}

pub fn node_stats(g: &Graph) -> NodeStats {
    NodeStats::compute(g)
}

/// Matrix used to propagate node signals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// The (weighted) adjacency itself, no self-loops.
    RawAdjacency,
    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree of `A + I`.
    SymNormSelfLoops,
}

impl OperatorKind {
    pub fn apply(self, weights: &Tensor) -> Tensor {
        match self {
            OperatorKind::RawAdjacency => weights.clone(),
            OperatorKind::SymNormSelfLoops => {
                sym_normalize_value(weights).expect("adjacency is square")
            }
        }
    }
}

impl std::str::FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "raw_adjacency" => Ok(OperatorKind::RawAdjacency),
            "sym_norm" | "sym_norm_selfloops" => Ok(OperatorKind::SymNormSelfLoops),
            other => Err(Error::config(format!("unknown operator '{other}'"))),
        }
    }
}

/// Set of node pairs whose edge state is toggled.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbation {
    flips: BTreeSet<Edge>,
    budget: usize,
}

impl Perturbation {
    pub fn new(flips: impl IntoIterator<Item = (usize, usize)>, budget: usize) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, v) in flips {
            if u == v {
                return Err(Error::config(format!("flip targets self-pair ({u},{u})")));
            }
            set.insert(edge_key(u, v));
        }
        if set.len() > budget {
            return Err(Error::config(format!(
                "{} flips exceed budget {budget}",
                set.len()
            )));
        }
        Ok(Self { flips: set, budget })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn flips(&self) -> &BTreeSet<Edge> {
        &self.flips
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    /// Perturbation rate `r / |E|` against a reference graph.
    pub fn rate(&self, g: &Graph) -> f64 {
        if g.edge_count() == 0 {
            0.0
        } else {
            self.flips.len() as f64 / g.edge_count() as f64
        }
    }
}

/// Toggles every listed pair; features and labels carry over unchanged.
pub fn apply_perturbation(g: &Graph, p: &Perturbation) -> Result<Graph> {
    let mut edges = g.edges.clone();
    for &(u, v) in p.flips() {
        if v >= g.n() {
            return Err(Error::Index(format!(
                "flip ({u},{v}) out of range for {} nodes",
                g.n()
            )));
        }
        if !edges.remove(&(u, v)) {
            edges.insert((u, v));
        }
    }
    let mut out = Graph::from_edge_set(g.n(), edges);
    out.features = g.features.clone();
    out.labels = g.labels.clone();
    Ok(out)
}

/// Per-node sum of incident weights (diagonal included).
pub fn strength_distribution(weights: &Tensor) -> Vec<f64> {
    weights.row_sums()
}

/// Stochastic block model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
    /// Standard deviation of the Gaussian noise added to one-hot features.
    #[serde(default = "default_feature_noise")]
    pub feature_noise: f64,
}

fn default_feature_noise() -> f64 {
    0.1
}

impl SbmConfig {
    pub fn new(blocks: Vec<usize>, p_in: f64, p_out: f64, seed: u64) -> Self {
        Self {
            blocks,
            p_in,
            p_out,
            seed,
            feature_noise: default_feature_noise(),
        }
    }
}

/// Samples a stochastic block model. Labels are block indices; features
/// are the one-hot label plus seeded Gaussian noise.
pub fn gen_sbm(cfg: &SbmConfig) -> Result<Graph> {
    if cfg.blocks.is_empty() || cfg.blocks.iter().all(|b| *b == 0) {
        return Err(Error::config("stochastic block model needs non-empty blocks"));
    }
    let in_unit = |p: f64| (0.0..=1.0).contains(&p);
    if !in_unit(cfg.p_in) || !in_unit(cfg.p_out) || cfg.p_out > cfg.p_in {
        return Err(Error::config(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
            cfg.p_in, cfg.p_out
        )));
    }
    if cfg.feature_noise.is_nan() || cfg.feature_noise < 0.0 {
        return Err(Error::config("feature noise must be non-negative"));
    }
    let block_of: Vec<usize> = cfg
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(b, size)| std::iter::repeat_n(b, *size))
        .collect();
    let n = block_of.len();
    let classes = cfg.blocks.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut edges = BTreeSet::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block_of[u] == block_of[v] {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.random::<f64>() < p {
                edges.insert((u, v));
            }
        }
    }

    let noise = Normal::new(0.0, cfg.feature_noise).expect("validated noise");
    let mut features = Tensor::zeros(n, classes);
    for (i, b) in block_of.iter().enumerate() {
        for c in 0..classes {
            let base = if c == *b { 1.0 } else { 0.0 };
            features.set(i, c, base + noise.sample(&mut rng));
        }
    }

    Graph::from_edge_set(n, edges)
        .with_features(features)?
        .with_labels(Labels::from_classes(classes, &block_of)?)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_edge_list(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(
                path,
                idx + 1,
                format!("expected two node indices, found {} fields", fields.len()),
            ));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, idx + 1, format!("'{s}' is not a node index")))
        };
        let (u, v) = (parse(fields[0])?, parse(fields[1])?);
        if u == v {
            return Err(parse_err(path, idx + 1, format!("self-loop on node {u}")));
        }
        out.push((u, v, idx + 1));
    }
    Ok(out)
}

fn parse_csv_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                let f = f.trim();
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, idx + 1, format!("'{f}' is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    idx + 1,
                    format!("ragged row: {} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Loads a graph from a whitespace edge list and optional feature/label CSVs.
///
/// Without a feature or label file every index in `0..=max` must appear in
/// the edge list. With one, its row count fixes `N` and indices must stay
/// below it (nodes absent from the edge list are isolated).
pub fn load_graph(
    edges_path: &Path,
    features_path: Option<&Path>,
    labels_path: Option<&Path>,
) -> Result<Graph> {
    let pairs = parse_edge_list(edges_path)?;
    let features = features_path.map(parse_csv_matrix).transpose()?;
    let labels = labels_path.map(parse_csv_matrix).transpose()?;

    let max_index = pairs.iter().map(|(u, v, _)| (*u).max(*v)).max();
    let declared = match (&features, &labels) {
        (Some(f), _) => Some((f.len(), features_path.unwrap())),
        (None, Some(l)) => Some((l.len(), labels_path.unwrap())),
        (None, None) => None,
    };

    let n = match declared {
        Some((rows, _)) => {
            if let Some((u, v, line)) = pairs.iter().find(|(u, v, _)| (*u).max(*v) >= rows) {
                return Err(parse_err(
                    edges_path,
                    *line,
                    format!("edge ({u},{v}) references a node beyond the {rows} rows of node data"),
                ));
            }
            rows
        }
        None => {
            let n = max_index.map_or(0, |m| m + 1);
            let mut seen = vec![false; n];
            for (u, v, _) in &pairs {
                seen[*u] = true;
                seen[*v] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(parse_err(
                    edges_path,
                    0,
                    format!("node indices are not contiguous: {missing} never appears"),
                ));
            }
            n
        }
    };

    let mut g = Graph::from_edges(n, pairs.iter().map(|(u, v, _)| (*u, *v)))?;

    if let Some(rows) = features {
        let path = features_path.unwrap();
        if rows.len() != n {
            return Err(parse_err(
                path,
                rows.len(),
                format!("{} feature rows for {n} nodes", rows.len()),
            ));
        }
        g = g.with_features(Tensor::from_rows(&rows)?)?;
    }
    if let Some(rows) = labels {
        let path = labels_path.unwrap();
        if rows.len() != n {
            return Err(parse_err(
                path,
                rows.len(),
                format!("{} label rows for {n} nodes", rows.len()),
            ));
        }
        let classes = rows.first().map_or(0, |r| r.len());
        let mut assignments = Vec::with_capacity(n);
        for (i, row) in rows.iter().enumerate() {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter_map(|(c, v)| (*v == 1.0).then_some(c))
                .collect();
            let zeros = row.iter().filter(|v| **v == 0.0).count();
            if ones.len() != 1 || zeros != row.len() - 1 {
                return Err(parse_err(path, i + 1, "label row is not one-hot"));
            }
            assignments.push(Some(ones[0]));
        }
        g = g.with_labels(Labels::new(classes, assignments)?)?;
    }
    Ok(g)
}

/// Writes `u v` lines for every edge.
pub fn write_edge_list(g: &Graph, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (u, v) in g.edges() {
        out.push_str(&format!("{u} {v}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn k3() -> Graph {
        Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    pub fn p3() -> Graph {
        Graph::from_edges(3, [(0, 1), (1, 2)]).unwrap()
    }

    /// Star with center 0 and three leaves.
    pub fn star3() -> Graph {
        Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap()
    }

    pub fn two_triangles() -> Graph {
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]).unwrap();
        let labels = Labels::from_classes(2, &[0, 0, 0, 1, 1, 1]).unwrap();
        let mut feats = Tensor::zeros(6, 2);
        for i in 0..6 {
            feats.set(i, i / 3, 1.0);
        }
        g.with_features(feats).unwrap().with_labels(labels).unwrap()
    }

    pub fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        Graph::from_edges(n, edges).unwrap()
    }
}
