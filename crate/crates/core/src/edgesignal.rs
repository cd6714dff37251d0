//! Edge-transmitted signals.
//!
//! Deleting edge `(j,k)` and propagating `zw = Z W` again changes only rows
//! `j` and `k`; the difference is the signal the edge carried. Instead of a
//! fresh `A' · zw` per edge, the fast path reuses one cached `A · zw` and
//! subtracts `Q(zw; j, k)`, the matrix holding row `k` of `zw` at row `j`
//! and row `j` at row `k`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphcore::{Edge, Graph};
use crate::lrs::Lrs;
use crate::numkernel::Tensor;
use crate::report::fmt_sig6;

/// Upper end of the layer-0 draws.
pub const EPSILON_SCALE: f64 = 1e-7;

/// Which endpoint view defines the transmitted signal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchoring {
    /// Average of the two directions.
    #[default]
    Symmetric,
    /// Change seen at the lower-indexed endpoint only.
    OneDirection,
}

impl std::str::FromStr for Anchoring {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(Self::Symmetric),
            "one_direction" | "one-direction" => Ok(Self::OneDirection),
            _ => Err(Error::config(format!("unknown anchoring `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Oracle,
    Fast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSignalSet {
    pub layer: usize,
    /// One vector per unordered edge `(j,k)`, `j < k`.
    pub signals: BTreeMap<Edge, Vec<f64>>,
    pub provenance: Provenance,
}

impl EdgeSignalSet {
    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn get(&self, j: usize, k: usize) -> Option<&[f64]> {
        self.signals
            .get(&crate::graphcore::edge_key(j, k))
            .map(Vec::as_slice)
    }

    /// `j,k,c0,c1,...` per edge.
    pub fn to_csv(&self) -> String {
        let width = self.signals.values().next().map_or(0, Vec::len);
        let mut out = String::from("j,k");
        for c in 0..width {
            out.push_str(&format!(",c{c}"));
        }
        out.push('\n');
        for ((j, k), e) in &self.signals {
            out.push_str(&format!("{j},{k}"));
            for x in e {
                out.push(',');
                out.push_str(&fmt_sig6(*x));
            }
            out.push('\n');
        }
        out
    }

    /// Largest elementwise gap to another set over the same edges.
    pub fn max_abs_diff(&self, other: &EdgeSignalSet) -> Result<f64> {
        if self.signals.len() != other.signals.len() {
            return Err(Error::shape("signal sets cover different edges"));
        }
        let mut worst = 0.0f64;
        for ((e1, a), (e2, b)) in self.signals.iter().zip(&other.signals) {
            if e1 != e2 || a.len() != b.len() {
                return Err(Error::shape("signal sets cover different edges"));
            }
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
        Ok(worst)
    }
}

fn require_edge(g: &Graph, zw: &Tensor, j: usize, k: usize) -> Result<()> {
    if zw.rows() != g.n() {
        return Err(Error::shape(format!(
            "zw has {} rows for a graph of {} nodes",
            zw.rows(),
            g.n()
        )));
    }
    if j >= g.n() || k >= g.n() || !g.has_edge(j, k) {
        return Err(Error::config(format!("({j},{k}) is not an edge")));
    }
    Ok(())
}

/// `A' · zw` with `A'` the adjacency after deleting `(j,k)`.
pub fn repropagate_oracle(g: &Graph, zw: &Tensor, j: usize, k: usize) -> Result<Tensor> {
    require_edge(g, zw, j, k)?;
    let mut a = g.adjacency().clone();
    a.set(j, k, 0.0);
    a.set(k, j, 0.0);
    a.matmul(zw)
}

/// Per-layer cache of `A · zw`, the only global product the fast path needs.
#[derive(Clone, Debug, PartialEq)]
pub struct AzwCache {
    zw: Tensor,
    azw: Tensor,
}

impl AzwCache {
    pub fn build(g: &Graph, zw: Tensor) -> Result<Self> {
        let azw = g.adjacency().matmul(&zw)?;
        Ok(Self { zw, azw })
    }

    pub fn zw(&self) -> &Tensor {
        &self.zw
    }

    pub fn azw(&self) -> &Tensor {
        &self.azw
    }
}

/// `A · zw − Q(zw; j, k)` from the cache; equals [`repropagate_oracle`].
pub fn repropagate_fast(g: &Graph, cache: &AzwCache, j: usize, k: usize) -> Result<Tensor> {
    require_edge(g, &cache.zw, j, k)?;
    cache.azw.sub(&cache.zw.row_rearrange_q(j, k)?)
}

/// Signal for `ℓ > 0` from the undeleted rows `z_j, z_k` and the
/// re-propagated rows `r_j, r_k`.
pub fn edge_signal(z_j: &[f64], z_k: &[f64], r_j: &[f64], r_k: &[f64], anchoring: Anchoring) -> Vec<f64> {
    match anchoring {
        Anchoring::Symmetric => (0..z_j.len())
            .map(|c| ((z_j[c] + z_k[c]) - (r_j[c] + r_k[c])) / 2.0)
            .collect(),
        Anchoring::OneDirection => (0..z_j.len()).map(|c| z_j[c] - r_j[c]).collect(),
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Layer-0 draw in `[0, 1e-7)`, a pure function of `(seed, edge, component)`.
pub fn epsilon(seed: u64, edge: Edge, component: usize) -> f64 {
    let h = splitmix64(splitmix64(splitmix64(splitmix64(seed) ^ edge.0 as u64) ^ edge.1 as u64) ^ component as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64 * EPSILON_SCALE
}

pub fn epsilon_signal(seed: u64, edge: Edge, width: usize) -> Vec<f64> {
    (0..width).map(|c| epsilon(seed, edge, c)).collect()
}

/// What a layer offers for signal computation.
#[derive(Clone, Debug)]
pub enum SignalContext {
    /// Layer 0: no previous weights, signals are seeded noise.
    Initial { width: usize, seed: u64 },
    /// Layer `ℓ > 0` with the cached `A · zw`.
    Propagated { layer: usize, cache: AzwCache },
}

impl SignalContext {
    pub fn layer(&self) -> usize {
        match self {
            Self::Initial { .. } => 0,
            Self::Propagated { layer, .. } => *layer,
        }
    }
}

/// Signals for every base-graph edge of `lrs`, via the fast path.
pub fn edge_signal_set(g: &Graph, ctx: &SignalContext, lrs: &Lrs, anchoring: Anchoring) -> Result<EdgeSignalSet> {
    let mut signals = BTreeMap::new();
    for (j, k) in lrs.base_edges() {
        let e = match ctx {
            SignalContext::Initial { width, seed } => epsilon_signal(*seed, (j, k), *width),
            SignalContext::Propagated { cache, .. } => {
                require_edge(g, &cache.zw, j, k)?;
                // only rows j and k of A·zw − Q differ from A·zw
                let (a_j, a_k) = (cache.azw.row(j), cache.azw.row(k));
                let r_j: Vec<f64> = a_j.iter().zip(cache.zw.row(k)).map(|(a, z)| a - z).collect();
                let r_k: Vec<f64> = a_k.iter().zip(cache.zw.row(j)).map(|(a, z)| a - z).collect();
                edge_signal(a_j, a_k, &r_j, &r_k, anchoring)
            }
        };
        signals.insert((j, k), e);
    }
    Ok(EdgeSignalSet {
        layer: ctx.layer(),
        signals,
        provenance: Provenance::Fast,
    })
}

/// Same as [`edge_signal_set`] but with one full re-propagation per edge.
pub fn edge_signal_set_oracle(
    g: &Graph,
    ctx: &SignalContext,
    lrs: &Lrs,
    anchoring: Anchoring,
) -> Result<EdgeSignalSet> {
    let mut signals = BTreeMap::new();
    for (j, k) in lrs.base_edges() {
        let e = match ctx {
            SignalContext::Initial { width, seed } => epsilon_signal(*seed, (j, k), *width),
            SignalContext::Propagated { cache, .. } => {
                let z = g.adjacency().matmul(&cache.zw)?;
                let r = repropagate_oracle(g, &cache.zw, j, k)?;
                edge_signal(z.row(j), z.row(k), r.row(j), r.row(k), anchoring)
            }
        };
        signals.insert((j, k), e);
    }
    Ok(EdgeSignalSet {
        layer: ctx.layer(),
        signals,
        provenance: Provenance::Oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphcore::fixtures::*;
    use crate::graphcore::node_stats;
    use crate::lrs::extract_lrs;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_zw(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn oracle_on_k3() {
        let r = repropagate_oracle(&k3(), &Tensor::eye(3), 0, 1).unwrap();
        assert_eq!(r.row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(r, Tensor::from_rows(&[[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]]).unwrap());
        let zero = repropagate_oracle(&k3(), &Tensor::zeros(3, 2), 1, 2).unwrap();
        assert_eq!(zero, Tensor::zeros(3, 2));
    }

    #[test]
    fn fast_on_k3_matches_hand_value() {
        let g = k3();
        let cache = AzwCache::build(&g, Tensor::eye(3)).unwrap();
        let r = repropagate_fast(&g, &cache, 0, 1).unwrap();
        assert_eq!(r, Tensor::from_rows(&[[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]]).unwrap());
        let zero = AzwCache::build(&g, Tensor::zeros(3, 3)).unwrap();
        assert_eq!(repropagate_fast(&g, &zero, 0, 2).unwrap(), Tensor::zeros(3, 3));
    }

    #[test]
    fn non_edge_is_rejected() {
        let g = p3();
        assert!(matches!(repropagate_oracle(&g, &Tensor::eye(3), 0, 2), Err(Error::Config(_))));
        let cache = AzwCache::build(&g, Tensor::eye(3)).unwrap();
        assert!(matches!(repropagate_fast(&g, &cache, 0, 2), Err(Error::Config(_))));
        assert!(matches!(repropagate_fast(&g, &cache, 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn deletion_is_local() {
        let g = random_graph(12, 0.4, 3);
        let zw = random_zw(12, 3, 4);
        let full = g.adjacency().matmul(&zw).unwrap();
        let &(j, k) = g.edges().iter().next().unwrap();
        let r = repropagate_oracle(&g, &zw, j, k).unwrap();
        for i in (0..12).filter(|i| *i != j && *i != k) {
            assert_eq!(r.row(i), full.row(i));
        }
    }

    #[test]
    fn signal_on_k3() {
        let g = k3();
        let z = g.adjacency().matmul(&Tensor::eye(3)).unwrap();
        let r = repropagate_oracle(&g, &Tensor::eye(3), 0, 1).unwrap();
        let e = edge_signal(z.row(0), z.row(1), r.row(0), r.row(1), Anchoring::Symmetric);
        assert_eq!(e, vec![0.5, 0.5, 0.0]);
        let one = edge_signal(z.row(0), z.row(1), r.row(0), r.row(1), Anchoring::OneDirection);
        assert_eq!(one, vec![0.0, 1.0, 0.0]);
        let zero = vec![0.0; 3];
        assert_eq!(edge_signal(&zero, &zero, &zero, &zero, Anchoring::Symmetric), zero);
    }

    #[test]
    fn initial_layer_is_tiny_noise() {
        let g = k3();
        let lrs = extract_lrs(&g, &node_stats(&g), 0);
        let ctx = SignalContext::Initial { width: 4, seed: 9 };
        let set = edge_signal_set(&g, &ctx, &lrs, Anchoring::Symmetric).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.layer, 0);
        for e in set.signals.values() {
            assert!(e.iter().all(|x| (0.0..EPSILON_SCALE).contains(x)));
        }
        assert_ne!(set.get(0, 1), set.get(0, 2));
        assert_eq!(set.get(1, 0), set.get(0, 1));
        assert_eq!(set, edge_signal_set(&g, &ctx, &lrs, Anchoring::Symmetric).unwrap());
    }

    #[test]
    fn isolated_center_has_no_signals() {
        let g = Graph::from_edges(3, [(1, 2)]).unwrap();
        let lrs = extract_lrs(&g, &node_stats(&g), 0);
        let cache = AzwCache::build(&g, Tensor::eye(3)).unwrap();
        let ctx = SignalContext::Propagated { layer: 1, cache };
        assert!(edge_signal_set(&g, &ctx, &lrs, Anchoring::Symmetric).unwrap().is_empty());
    }

    #[test]
    fn csv_dump() {
        let mut signals = BTreeMap::new();
        signals.insert((0, 1), vec![0.5, 0.25]);
        let set = EdgeSignalSet {
            layer: 1,
            signals,
            provenance: Provenance::Fast,
        };
        assert_eq!(set.to_csv(), "j,k,c0,c1\n0,1,0.5,0.25\n");
    }

    #[test]
    fn epsilon_is_uniform_enough() {
        let xs: Vec<f64> = (0..4000).map(|c| epsilon(1, (2, 3), c) / EPSILON_SCALE).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.5).abs() < 3.0 * (1.0f64 / 12.0 / 4000.0).sqrt());
        assert!(xs.iter().all(|x| (0.0..1.0).contains(x)));
    }

    proptest! {
        #[test]
        fn fast_matches_oracle(n in 2usize..20, p in 0.05f64..0.8, seed in any::<u64>(), d in 1usize..5) {
            let g = random_graph(n, p, seed);
            let zw = random_zw(n, d, seed ^ 0xabc);
            let cache = AzwCache::build(&g, zw.clone()).unwrap();
            for &(j, k) in g.edges() {
                let fast = repropagate_fast(&g, &cache, j, k).unwrap();
                let oracle = repropagate_oracle(&g, &zw, j, k).unwrap();
                prop_assert!(fast.max_abs_diff(&oracle) <= 1e-12);
            }
            let stats = node_stats(&g);
            let ctx = SignalContext::Propagated { layer: 2, cache };
            for c in 0..n {
                let lrs = extract_lrs(&g, &stats, c);
                for anchoring in [Anchoring::Symmetric, Anchoring::OneDirection] {
                    let f = edge_signal_set(&g, &ctx, &lrs, anchoring).unwrap();
                    let o = edge_signal_set_oracle(&g, &ctx, &lrs, anchoring).unwrap();
                    prop_assert!(f.max_abs_diff(&o).unwrap() <= 1e-12);
                    prop_assert_eq!(f.len(), lrs.base_edges().len());
                }
            }
        }

        #[test]
        fn symmetric_signal_is_endpoint_mean(n in 2usize..15, seed in any::<u64>()) {
            let g = random_graph(n, 0.5, seed);
            let zw = random_zw(n, 3, seed);
            let ctx = SignalContext::Propagated { layer: 1, cache: AzwCache::build(&g, zw.clone()).unwrap() };
            let stats = node_stats(&g);
            for c in 0..n {
                let set = edge_signal_set(&g, &ctx, &extract_lrs(&g, &stats, c), Anchoring::Symmetric).unwrap();
                for (&(j, k), e) in &set.signals {
                    for t in 0..3 {
                        prop_assert!((e[t] - (zw.get(j, t) + zw.get(k, t)) / 2.0).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
