//! Local resonance subgraphs.
//!
//! The subgraph around a center `c` carries three weight classes:
//! weight 1 on every edge between two neighbors of `c`, weight
//! `2 * (A^2)_{c,u}` from `c` to every node `u` reachable by a two-walk
//! (the `u = c` term becomes a self-loop of weight `2 * deg_c`), and
//! weight 8 from `c` to each neighbor. Summed with the center's latent
//! signal on the first class they reproduce the resonance intensity exactly.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graphcore::{edge_key, Edge, Graph, NodeStats};
use crate::numkernel::Tensor;
use crate::report::fmt_sig6;

/// Floor applied to min-max scaled weights so the lightest edge survives.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lrs {
    pub center: usize,
    /// Sorted node set; empty for an isolated center.
    pub nodes: Vec<usize>,
    /// Neighbor-pair edges, weight 1 each.
    pub w1: BTreeMap<Edge, f64>,
    /// Two-walk contributions `2 * (A^2)_{c,u}`, keyed `(c,u)`; includes `(c,c)`.
    pub w2: BTreeMap<Edge, f64>,
    /// First-order edges, weight 8 each.
    pub w8: BTreeMap<Edge, f64>,
}

impl Lrs {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total weight per pair, summed over the three classes.
    pub fn weights(&self) -> BTreeMap<Edge, f64> {
        let mut total = BTreeMap::new();
        for class in [&self.w1, &self.w2, &self.w8] {
            for (e, w) in class {
                *total.entry(*e).or_insert(0.0) += w;
            }
        }
        total
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        let e = edge_key(u, v);
        [&self.w1, &self.w2, &self.w8]
            .iter()
            .filter_map(|c| c.get(&e))
            .sum()
    }

    /// Pairs that are edges of the base graph (the weight-1 and weight-8
    /// classes), sorted.
    pub fn base_edges(&self) -> Vec<Edge> {
        let set: BTreeSet<Edge> = self.w1.keys().chain(self.w8.keys()).copied().collect();
        set.into_iter().collect()
    }

    pub fn w1_count(&self) -> usize {
        self.w1.len()
    }

    pub fn w2_sum(&self) -> f64 {
        self.w2.values().sum()
    }

    pub fn w8_sum(&self) -> f64 {
        self.w8.values().sum()
    }

    /// Weighted adjacency over `self.nodes` (in that order), self-loop on
    /// the center included.
    pub fn local_adjacency(&self) -> Tensor {
        let pos: BTreeMap<usize, usize> = self.nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let m = self.nodes.len();
        let mut a = Tensor::zeros(m, m);
        for ((u, v), w) in self.weights() {
            let (i, j) = (pos[&u], pos[&v]);
            a.set(i, j, w);
            if i != j {
                a.set(j, i, w);
            }
        }
        a
    }
}

/// Extracts the local resonance subgraph of `center`.
pub fn extract_lrs(g: &Graph, stats: &NodeStats, center: usize) -> Lrs {
    let c = center;
    let nb = g.neighbors(c);
    let mut w1 = BTreeMap::new();
    let mut w2 = BTreeMap::new();
    let mut w8 = BTreeMap::new();
    if nb.is_empty() {
        return Lrs {
            center,
            nodes: Vec::new(),
            w1,
            w2,
            w8,
        };
    }

    let mut walks: BTreeMap<usize, usize> = BTreeMap::new();
    for &u in nb {
        w8.insert(edge_key(c, u), 8.0);
        for &x in g.neighbors(u) {
            *walks.entry(x).or_insert(0) += 1;
        }
    }
    debug_assert_eq!(walks.get(&c).copied(), Some(stats.deg[c]));
    for (&x, &count) in &walks {
        w2.insert(edge_key(c, x), 2.0 * count as f64);
    }
    for (a, &u) in nb.iter().enumerate() {
        for &v in &nb[a + 1..] {
            if g.has_edge(u, v) {
                w1.insert(edge_key(u, v), 1.0);
            }
        }
    }

    let mut nodes: BTreeSet<usize> = walks.keys().copied().collect();
    nodes.insert(c);
    nodes.extend(nb.iter().copied());
    Lrs {
        center,
        nodes: nodes.into_iter().collect(),
        w1,
        w2,
        w8,
    }
}

/// `zbar_c * |w1| + sum(w2) + sum(w8)`, which equals the resonance intensity
/// of the center.
pub fn lrs_weight_identity(lrs: &Lrs, zbar_center: f64) -> f64 {
    zbar_center * lrs.w1_count() as f64 + lrs.w2_sum() + lrs.w8_sum()
}

/// All subgraphs summed into one weighted graph and min-max scaled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalLrsGraph {
    /// Scaled weights in `[0, 1]`; zero off the support.
    pub weights: Tensor,
    /// Accumulated weights before scaling.
    pub raw: Tensor,
    pub raw_min: f64,
    pub raw_max: f64,
}

/// Min-max scaling over the nonzero support, floored at [`SCALE_FLOOR`].
/// A support with a single distinct value maps to 1.
pub fn min_max_scale(raw: &Tensor) -> (Tensor, f64, f64) {
    let support = raw.data().iter().filter(|w| **w != 0.0);
    let (min, max) = support.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| {
        (lo.min(*w), hi.max(*w))
    });
    if !min.is_finite() {
        return (raw.clone(), 0.0, 0.0);
    }
    let span = max - min;
    let scaled = raw.map(|w| {
        if w == 0.0 {
            0.0
        } else if span <= 0.0 {
            1.0
        } else {
            ((w - min) / span).max(SCALE_FLOOR)
        }
    });
    (scaled, min, max)
}

pub fn build_global_lrs(g: &Graph) -> GlobalLrsGraph {
    let stats = NodeStats::compute(g);
    let n = g.n();
    let mut raw = Tensor::zeros(n, n);
    for c in 0..n {
        for ((u, v), w) in extract_lrs(g, &stats, c).weights() {
            raw.set(u, v, raw.get(u, v) + w);
            if u != v {
                raw.set(v, u, raw.get(v, u) + w);
            }
        }
    }
    let (weights, raw_min, raw_max) = min_max_scale(&raw);
    GlobalLrsGraph {
        weights,
        raw,
        raw_min,
        raw_max,
    }
}

/// Same edge support as `g` with i.i.d. seeded uniform `[0,1)` weights.
pub fn random_weighted_control(g: &Graph, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Tensor::zeros(g.n(), g.n());
    for &(u, v) in g.edges() {
        let x: f64 = rng.random();
        w.set(u, v, x);
        w.set(v, u, x);
    }
    w
}

/// `u,v,w` triples for the upper triangle (diagonal as `u,u,w`).
pub fn weighted_csv(weights: &Tensor) -> String {
    let mut out = String::from("u,v,w\n");
    for u in 0..weights.rows() {
        for v in u..weights.cols() {
            let w = weights.get(u, v);
            if w != 0.0 {
                out.push_str(&format!("{u},{v},{}\n", fmt_sig6(w)));
            }
        }
    }
    out
}

/// Pearson correlation; zero when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
