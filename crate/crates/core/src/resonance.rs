//! Resonance intensity of a node, its observed counterpart read off a deeper
//! layer, and the standardized difference diagnostic between the two.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{gcn_train, EpochRecord, GcnConfig};
use crate::graphcore::{Graph, Mask, NodeStats};
use crate::numkernel::Activation;
use crate::graphcore::OperatorKind;
use crate::report::{fmt_sig6, mean_std};

/// Standard deviations below this are treated as a constant sequence.
pub const STD_GUARD: f64 = 1e-12;

/// `R_i = zbar_i * T_i + 2 p_i + 8 deg_i`.
pub fn resonance_intensity(stats: &NodeStats, zbar: &[f64]) -> Vec<f64> {
    zbar.iter()
        .enumerate()
        .map(|(i, z)| z * stats.t[i] as f64 + 2.0 * stats.p[i] as f64 + 8.0 * stats.deg[i] as f64)
        .collect()
}

/// `64 * zbar_i - 32` for the latent signal of a deeper layer.
pub fn resonance_observed(zbar: &[f64]) -> Vec<f64> {
    zbar.iter().map(|z| 64.0 * z - 32.0).collect()
}

/// `(x - mean) / std` with the population standard deviation. A constant
/// sequence maps to zeros.
pub fn standardize(seq: &[f64]) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::config(format!(
            "standardize needs at least two values, got {}",
            seq.len()
        )));
    }
    let (mean, std) = mean_std(seq);
    if std < STD_GUARD {
        return Ok(vec![0.0; seq.len()]);
    }
    Ok(seq.iter().map(|x| (x - mean) / std).collect())
}

/// Per-node sequences over training epochs of the defined intensity at
/// layer `k` and the observed intensity at layer `k + k_gap`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceTrace {
    pub k: usize,
    pub k_gap: usize,
    /// `r_def[i][epoch]`
    pub r_def: Vec<Vec<f64>>,
    /// `r_real[i][epoch]`
    pub r_real: Vec<Vec<f64>>,
}

impl ResonanceTrace {
    pub fn from_epochs(records: &[EpochRecord], stats: &NodeStats, k: usize, k_gap: usize) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::config("empty training trace"));
        };
        let layers = first.zbar.len();
        if k + k_gap >= layers {
            return Err(Error::config(format!(
                "layer {} requested from a trace of layers 0..{}",
                k + k_gap,
                layers - 1
            )));
        }
        let n = stats.deg.len();
        let mut r_def = vec![Vec::with_capacity(records.len()); n];
        let mut r_real = vec![Vec::with_capacity(records.len()); n];
        for rec in records {
            let def = resonance_intensity(stats, &rec.zbar[k]);
            let real = resonance_observed(&rec.zbar[k + k_gap]);
            for i in 0..n {
                r_def[i].push(def[i]);
                r_real[i].push(real[i]);
            }
        }
        Ok(Self {
            k,
            k_gap,
            r_def,
            r_real,
        })
    }
}

/// `d[i][epoch] = |STD(r_def[i]) - STD(r_real[i])|`.
pub fn diff_sequence(trace: &ResonanceTrace) -> Result<Vec<Vec<f64>>> {
    if trace.r_def.len() != trace.r_real.len() {
        return Err(Error::config("traces cover different node counts"));
    }
    trace
        .r_def
        .iter()
        .zip(&trace.r_real)
        .map(|(def, real)| {
            if def.len() != real.len() {
                return Err(Error::config(format!(
                    "sequence lengths differ: {} vs {}",
                    def.len(),
                    real.len()
                )));
            }
            let a = standardize(def)?;
            let b = standardize(real)?;
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceExperimentConfig {
    pub gcn: GcnConfig,
    pub ks: Vec<usize>,
    pub gaps: Vec<usize>,
    /// Trailing share of epochs averaged in the summary.
    pub final_fraction: f64,
}

impl ResonanceExperimentConfig {
    /// Sigmoid GCN over the raw adjacency, `k in {0,1}`, `k_gap in {1,2,3}`.
    pub fn standard(d_in: usize, hidden: usize, classes: usize, depth: usize, epochs: usize, seed: u64) -> Self {
        let mut dims = vec![d_in];
        dims.extend(std::iter::repeat_n(hidden, depth.saturating_sub(1)));
        dims.push(classes);
        Self {
            gcn: GcnConfig::diagnostic(dims, epochs, seed),
            ks: vec![0, 1],
            gaps: vec![1, 2, 3],
            final_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gcn.validate()?;
        if self.gcn.operator != OperatorKind::RawAdjacency
            || self.gcn.activations.iter().any(|a| *a != Activation::Sigmoid)
        {
            log::warn!("resonance diagnostic run outside the sigmoid / raw adjacency preset");
        }
        let depth = self.gcn.depth();
        for &k in &self.ks {
            for &gap in &self.gaps {
                if depth < k + gap + 1 {
                    return Err(Error::config(format!(
                        "depth {depth} too shallow for k={k}, k_gap={gap}"
                    )));
                }
            }
        }
        if self.gcn.epochs < 2 {
            return Err(Error::config("need at least two epochs to standardize"));
        }
        if !(self.final_fraction > 0.0 && self.final_fraction <= 1.0) {
            return Err(Error::config("final_fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub epoch: usize,
    pub k: usize,
    pub k_gap: usize,
    pub mean_d: f64,
    pub std_d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub k: usize,
    pub k_gap: usize,
    /// Node-mean `d` averaged over the trailing window of epochs.
    pub final_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub rows: Vec<DiffRow>,
    pub summary: Vec<DiffSummary>,
}

impl ResonanceReport {
    pub fn final_mean(&self, k: usize, k_gap: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.k == k && s.k_gap == k_gap)
            .map(|s| s.final_mean)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,k,k_gap,mean_d,std_d\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch,
                r.k,
                r.k_gap,
                fmt_sig6(r.mean_d),
                fmt_sig6(r.std_d)
            ));
        }
        out
    }
}

/// Trains one GCN on every labelled node and evaluates the difference
/// diagnostic for each `(k, k_gap)` pair.
pub fn run_resonance_experiment(cfg: &ResonanceExperimentConfig, g: &Graph) -> Result<ResonanceReport> {
    cfg.validate()?;
    let labels = g.require_labels()?;
    let train = Mask::from_bools(labels.assignments().iter().map(|c| c.is_some()).collect());
    let model = gcn_train(&cfg.gcn, g, &train)?;
    let stats = NodeStats::compute(g);
    let epochs = model.trace.len();
    let window = ((epochs as f64 * cfg.final_fraction).round() as usize).clamp(1, epochs);

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &k in &cfg.ks {
        for &gap in &cfg.gaps {
            let trace = ResonanceTrace::from_epochs(&model.trace, &stats, k, gap)?;
            let d = diff_sequence(&trace)?;
            let mut node_means = Vec::with_capacity(epochs);
            for epoch in 0..epochs {
                let column: Vec<f64> = d.iter().map(|node| node[epoch]).collect();
                let (mean_d, std_d) = mean_std(&column);
                node_means.push(mean_d);
                rows.push(DiffRow {
                    epoch,
                    k,
                    k_gap: gap,
                    mean_d,
                    std_d,
                });
            }
            let tail = &node_means[epochs - window..];
            summary.push(DiffSummary {
                k,
                k_gap: gap,
                final_mean: tail.iter().sum::<f64>() / tail.len() as f64,
            });
        }
    }
    Ok(ResonanceReport { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphcore::fixtures::*;
    use crate::graphcore::{gen_sbm, node_stats, SbmConfig};
    use proptest::prelude::*;

    #[test]
    fn intensity_examples() {
        let s = node_stats(&k3());
        assert_eq!(resonance_intensity(&s, &[1.0, 1.0, 1.0])[0], 25.0);
        let s = node_stats(&p3());
        assert_eq!(resonance_intensity(&s, &[3.0, -7.5, 0.2])[1], 20.0);
        let lone = Graph::from_edges(1, []).unwrap();
        assert_eq!(resonance_intensity(&node_stats(&lone), &[4.0]), vec![0.0]);
    }

    #[test]
    fn observed_examples() {
        assert_eq!(resonance_observed(&[0.5, 0.0, 1.0]), vec![0.0, -32.0, 32.0]);
    }

    #[test]
    fn standardize_examples() {
        let s = standardize(&[1.0, 2.0, 3.0]).unwrap();
        let e = 1.5f64.sqrt();
        assert!((s[0] + e).abs() < 1e-12 && s[1].abs() < 1e-15 && (s[2] - e).abs() < 1e-12);
        assert!((e - 1.2247).abs() < 1e-4);
        assert_eq!(standardize(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
        let again = standardize(&s).unwrap();
        for (a, b) in again.iter().zip(&s) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(standardize(&[1.0]), Err(Error::Config(_))));
    }

    fn trace(def: Vec<f64>, real: Vec<f64>) -> ResonanceTrace {
        ResonanceTrace {
            k: 0,
            k_gap: 3,
            r_def: vec![def],
            r_real: vec![real],
        }
    }

    #[test]
    fn diff_examples() {
        let d = diff_sequence(&trace(vec![1.0, 4.0, 2.0], vec![1.0, 4.0, 2.0])).unwrap();
        assert_eq!(d[0], vec![0.0; 3]);
        let d = diff_sequence(&trace(vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0])).unwrap();
        // 2 * sqrt(3/2)
        let e = 2.0 * 1.5f64.sqrt();
        assert!((d[0][0] - e).abs() < 1e-12 && d[0][1] < 1e-15 && (d[0][2] - e).abs() < 1e-12);
        assert!((e - 2.449).abs() < 1e-3);
        assert!(diff_sequence(&trace(vec![1.0, 2.0], vec![1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn depth_contract() {
        let mut cfg = ResonanceExperimentConfig::standard(2, 4, 2, 3, 10, 1);
        cfg.ks = vec![1];
        cfg.gaps = vec![3];
        let g = gen_sbm(&SbmConfig::new(vec![5, 5], 0.5, 0.1, 1)).unwrap();
        assert!(matches!(run_resonance_experiment(&cfg, &g), Err(Error::Config(_))));
    }

    #[test]
    fn experiment_csv_is_deterministic() {
        let g = gen_sbm(&SbmConfig::new(vec![10, 10], 0.4, 0.05, 3)).unwrap();
        let cfg = ResonanceExperimentConfig::standard(2, 4, 2, 5, 40, 9);
        let a = run_resonance_experiment(&cfg, &g).unwrap();
        let b = run_resonance_experiment(&cfg, &g).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 40 * 6);
        assert_eq!(a.summary.len(), 6);
        assert!(a.to_csv().starts_with("epoch,k,k_gap,mean_d,std_d\n"));
    }

    proptest! {
        #[test]
        fn diff_absorbs_positive_affine_maps(
            seq in proptest::collection::vec(-10.0f64..10.0, 3..20),
            a1 in 0.1f64..10.0, b1 in -50.0f64..50.0,
            a2 in 0.1f64..10.0, b2 in -50.0f64..50.0,
        ) {
            let (_, std) = mean_std(&seq);
            prop_assume!(std > 1e-3);
            let x: Vec<f64> = seq.iter().map(|v| a1 * v + b1).collect();
            let y: Vec<f64> = seq.iter().map(|v| a2 * v + b2).collect();
            let d = diff_sequence(&trace(x, y)).unwrap();
            prop_assert!(d[0].iter().all(|v| *v < 1e-9));
        }

        #[test]
        fn intensity_is_linear_in_zbar(n in 2usize..12, seed in any::<u64>(), alpha in -3.0f64..3.0,
                                       z in proptest::collection::vec(-2.0f64..2.0, 12)) {
            let g = random_graph(n, 0.5, seed);
            let s = node_stats(&g);
            let z = &z[..n];
            let scaled: Vec<f64> = z.iter().map(|v| alpha * v).collect();
            let r1 = resonance_intensity(&s, z);
            let r2 = resonance_intensity(&s, &scaled);
            for i in 0..n {
                let expect = (alpha - 1.0) * z[i] * s.t[i] as f64;
                prop_assert!((r2[i] - r1[i] - expect).abs() < 1e-9);
            }
        }

        #[test]
        fn triangle_free_ignores_features(n in 2usize..12, z in proptest::collection::vec(-5.0f64..5.0, 12)) {
            // paths are triangle-free
            let g = Graph::from_edges(n, (0..n - 1).map(|i| (i, i + 1))).unwrap();
            let s = node_stats(&g);
            prop_assert_eq!(resonance_intensity(&s, &z[..n]), resonance_intensity(&s, &vec![0.0; n]));
        }
    }
}
