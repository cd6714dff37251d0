//! Graph resonance-fostering network.
//!
//! Layer `ℓ` embeds node `i` as
//! `act(MEAN(CONCAT(A_{G_i} Z_{G_i}, E_{G_i}) · W_ℓ))`, where `G_i` is the
//! local resonance subgraph of `i`, `A_{G_i}` its weighted adjacency and
//! `E_{G_i}` the transmitted signals of its base edges, each scaled by the
//! subgraph weight of that edge.
//!
//! Training runs a batched form of the same computation: all subgraph rows
//! are stacked into one sparse operator over `[Z; E]`, so a layer costs one
//! sparse product, one dense product and one segment mean.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edgesignal::{edge_signal_set, epsilon, Anchoring, AzwCache, EdgeSignalSet, SignalContext};
use crate::error::{Error, Result};
use crate::gcn::{accuracy, check_loss_windows, init_weights, labelled_rows};
use crate::graphcore::{Edge, Graph, Labels, Mask, NodeStats};
use crate::lrs::{extract_lrs, Lrs};
use crate::numkernel::{Activation, SparseRows, Tape, Tensor, Var};
use crate::report::fmt_sig6;

/// Row layout of the concatenated block fed to `W`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GrnVariant {
    /// Edge-signal rows first, then node rows.
    #[default]
    #[serde(rename = "e_z")]
    EZ,
    /// Node rows first, then edge-signal rows.
    #[serde(rename = "z_e")]
    ZE,
    /// Seeded permutation of all rows.
    #[serde(rename = "shuf")]
    Shuf,
    /// Node rows only.
    #[serde(rename = "z_only")]
    ZOnly,
}

impl GrnVariant {
    pub const ALL: [GrnVariant; 4] = [Self::EZ, Self::ZE, Self::Shuf, Self::ZOnly];

    pub fn name(self) -> &'static str {
        match self {
            Self::EZ => "e_z",
            Self::ZE => "z_e",
            Self::Shuf => "shuf",
            Self::ZOnly => "z_only",
        }
    }

    pub fn uses_edges(self) -> bool {
        self != Self::ZOnly
    }
}

impl std::str::FromStr for GrnVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown GRN variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrnConfig {
    /// Layer widths `d_0 .. d_K`.
    pub dims: Vec<usize>,
    /// Activation of every hidden layer.
    pub activation: Activation,
    /// Activation of the last layer, whose output feeds the cross-entropy.
    pub output_activation: Activation,
    pub variant: GrnVariant,
    pub anchoring: Anchoring,
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Fraction of labelled nodes whose labels are used for training.
    pub seen_rate: f64,
    /// Largest global gradient norm applied per step; `None` disables.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

impl GrnConfig {
    /// Three layers `d_in -> hidden -> hidden -> classes`.
    pub fn new(d_in: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        Self {
            dims: vec![d_in, hidden, hidden, classes],
            activation: Activation::Relu,
            output_activation: Activation::Identity,
            variant: GrnVariant::EZ,
            anchoring: Anchoring::Symmetric,
            seed,
            learning_rate: 0.01,
            epochs: 200,
            seen_rate: 1.0,
            grad_clip: Some(1.0),
        }
    }

    pub fn depth(&self) -> usize {
        self.dims.len().saturating_sub(1)
    }

    pub fn activation_at(&self, layer: usize) -> Activation {
        if layer + 1 == self.depth() {
            self.output_activation
        } else {
            self.activation
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth() < 1 {
            return Err(Error::config("a GRN needs at least one layer"));
        }
        if self.dims.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if !(self.seen_rate > 0.0 && self.seen_rate <= 1.0) {
            return Err(Error::config(format!("seen rate {} outside (0, 1]", self.seen_rate)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.grad_clip.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return Err(Error::config("gradient clip must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrnModel {
    pub config: GrnConfig,
    /// `W_ℓ` of shape `d_ℓ × d_{ℓ+1}`, shared by every node.
    pub weights: Vec<Tensor>,
    #[serde(default)]
    pub losses: Vec<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl GrnModel {
    pub fn new(config: GrnConfig) -> Result<Self> {
        config.validate()?;
        let weights = init_weights(&config.dims, config.seed);
        Ok(Self {
            config,
            weights,
            losses: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }
}

/// One row of a node's concatenated block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowRef {
    /// Propagation row for the `pos`-th subgraph node.
    Node(usize),
    /// Signal row for the `pos`-th base edge.
    Edge(usize),
}

fn node_seed(seed: u64, center: usize) -> u64 {
    seed ^ (center as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Order of the `nodes + edges` rows of `center`'s block.
pub fn row_order(variant: GrnVariant, nodes: usize, edges: usize, seed: u64, center: usize) -> Vec<RowRef> {
    let node_rows = (0..nodes).map(RowRef::Node);
    let edge_rows = (0..edges).map(RowRef::Edge);
    match variant {
        GrnVariant::EZ => edge_rows.chain(node_rows).collect(),
        GrnVariant::ZE => node_rows.chain(edge_rows).collect(),
        GrnVariant::ZOnly => node_rows.collect(),
        GrnVariant::Shuf => {
            let mut rows: Vec<RowRef> = node_rows.chain(edge_rows).collect();
            rows.shuffle(&mut ChaCha8Rng::seed_from_u64(node_seed(seed, center)));
            rows
        }
    }
}

/// Embedding of one node for one layer, computed directly from its
/// subgraph. Isolated nodes aggregate nothing and map to `act(0)`.
pub fn grn_layer(
    lrs: &Lrs,
    z_prev: &Tensor,
    signals: &EdgeSignalSet,
    w: &Tensor,
    variant: GrnVariant,
    activation: Activation,
    seed: u64,
) -> Result<Vec<f64>> {
    if z_prev.cols() != w.rows() {
        return Err(Error::shape(format!(
            "layer input has {} columns, weights expect {}",
            z_prev.cols(),
            w.rows()
        )));
    }
    if lrs.is_empty() {
        return Ok(vec![activation.apply(0.0); w.cols()]);
    }
    let node_rows = lrs.local_adjacency().matmul(&z_prev.gather_rows(&lrs.nodes)?)?;
    let edges = if variant.uses_edges() { lrs.base_edges() } else { Vec::new() };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for r in row_order(variant, lrs.nodes.len(), edges.len(), seed, lrs.center) {
        match r {
            RowRef::Node(p) => rows.push(node_rows.row(p).to_vec()),
            RowRef::Edge(p) => {
                let (j, k) = edges[p];
                let e = signals
                    .get(j, k)
                    .ok_or_else(|| Error::shape(format!("no signal for edge ({j},{k})")))?;
                if e.len() != w.rows() {
                    return Err(Error::shape(format!(
                        "signal width {} vs layer width {}",
                        e.len(),
                        w.rows()
                    )));
                }
                let s = lrs.weight(j, k);
                rows.push(e.iter().map(|x| s * x).collect());
            }
        }
    }
    let stacked = Tensor::from_rows(&rows)?;
    let mixed = stacked.matmul(w)?.mean_rows()?;
    Ok(mixed.data().iter().map(|x| activation.apply(*x)).collect())
}

/// Node-by-node forward pass through [`grn_layer`] and the cached signal
/// fast path. Returns the output and the number of `A · zw` products.
pub fn grn_forward_reference(model: &GrnModel, g: &Graph) -> Result<(Tensor, usize)> {
    let stats = NodeStats::compute(g);
    let lrs: Vec<Lrs> = (0..g.n()).map(|c| extract_lrs(g, &stats, c)).collect();
    let cfg = &model.config;
    let mut z = g.require_features()?.clone();
    let mut prev: Option<(Tensor, &Tensor)> = None;
    let mut products = 0;
    for (l, w) in model.weights.iter().enumerate() {
        let ctx = match (&prev, cfg.variant.uses_edges()) {
            (_, false) | (None, _) => SignalContext::Initial {
                width: z.cols(),
                seed: cfg.seed,
            },
            (Some((z_prev, w_prev)), true) => {
                products += 1;
                SignalContext::Propagated {
                    layer: l,
                    cache: AzwCache::build(g, z_prev.matmul(w_prev)?)?,
                }
            }
        };
        let mut rows = Vec::with_capacity(g.n());
        for node in &lrs {
            let signals = edge_signal_set(g, &ctx, node, cfg.anchoring)?;
            rows.push(grn_layer(node, &z, &signals, w, cfg.variant, cfg.activation_at(l), cfg.seed)?);
        }
        let next = Tensor::from_rows(&rows)?;
        prev = Some((std::mem::replace(&mut z, next), w));
    }
    Ok((z, products))
}

/// Weight-independent structure of a graph for batched evaluation.
#[derive(Clone, Debug)]
pub struct GrnPlan {
    n: usize,
    variant: GrnVariant,
    edges: Vec<Edge>,
    j_rows: Arc<Vec<usize>>,
    k_rows: Arc<Vec<usize>>,
    adjacency: Tensor,
    /// All block rows over `[Z; E]` (or `Z` alone).
    stacked: Arc<SparseRows>,
    /// Row `i` averages the block of node `i`.
    segment_mean: Arc<SparseRows>,
}

impl GrnPlan {
    pub fn build(g: &Graph, variant: GrnVariant, seed: u64) -> Self {
        let n = g.n();
        let edges: Vec<Edge> = g.edges().iter().copied().collect();
        let index: BTreeMap<Edge, usize> = edges.iter().enumerate().map(|(i, e)| (*e, i)).collect();
        let with_edges = variant.uses_edges() && !edges.is_empty();
        let stats = NodeStats::compute(g);
        let mut stacked = SparseRows::new(if with_edges { n + edges.len() } else { n });
        let mut segment_mean = SparseRows::new(0);
        let mut segments = Vec::with_capacity(n);
        for c in 0..n {
            let lrs = extract_lrs(g, &stats, c);
            let local = lrs.local_adjacency();
            let base = if with_edges { lrs.base_edges() } else { Vec::new() };
            let start = stacked.n_rows();
            for r in row_order(variant, lrs.nodes.len(), base.len(), seed, c) {
                match r {
                    RowRef::Node(p) => stacked.push_row(
                        lrs.nodes
                            .iter()
                            .enumerate()
                            .filter(|(q, _)| local.get(p, *q) != 0.0)
                            .map(|(q, v)| (*v, local.get(p, q)))
                            .collect(),
                    ),
                    RowRef::Edge(p) => {
                        let e = base[p];
                        stacked.push_row(vec![(n + index[&e], lrs.weight(e.0, e.1))]);
                    }
                }
            }
            segments.push(start..stacked.n_rows());
        }
        segment_mean.cols = stacked.n_rows();
        for seg in segments {
            let m = seg.len() as f64;
            segment_mean.push_row(seg.map(|r| (r, 1.0 / m)).collect());
        }
        Self {
            n,
            variant: if with_edges { variant } else { GrnVariant::ZOnly },
            j_rows: Arc::new(edges.iter().map(|e| e.0).collect()),
            k_rows: Arc::new(edges.iter().map(|e| e.1).collect()),
            edges,
            adjacency: g.adjacency().clone(),
            stacked: Arc::new(stacked),
            segment_mean: Arc::new(segment_mean),
        }
    }

    pub fn stacked_rows(&self) -> usize {
        self.stacked.n_rows()
    }
}

/// Signals of every base edge on the tape. Layer 0 is seeded noise; later
/// layers use `A·zw − Q(zw; j, k)` restricted to the two endpoint rows.
fn signal_rows(
    tape: &mut Tape,
    plan: &GrnPlan,
    cfg: &GrnConfig,
    width: usize,
    prev: Option<(Var, Var)>,
    products: &mut usize,
) -> Result<Var> {
    let Some((z_prev, w_prev)) = prev else {
        let mut eps = Tensor::zeros(plan.edges.len(), width);
        for (r, e) in plan.edges.iter().enumerate() {
            for c in 0..width {
                eps.set(r, c, epsilon(cfg.seed, *e, c));
            }
        }
        return Ok(tape.constant(eps));
    };
    let zw = tape.matmul(z_prev, w_prev)?;
    let a = tape.constant(plan.adjacency.clone());
    let azw = tape.matmul(a, zw)?;
    *products += 1;
    let a_j = tape.gather_rows(azw, plan.j_rows.clone())?;
    let a_k = tape.gather_rows(azw, plan.k_rows.clone())?;
    let zw_j = tape.gather_rows(zw, plan.j_rows.clone())?;
    let zw_k = tape.gather_rows(zw, plan.k_rows.clone())?;
    let r_j = tape.sub(a_j, zw_k)?;
    match cfg.anchoring {
        Anchoring::Symmetric => {
            let r_k = tape.sub(a_k, zw_j)?;
            let before = tape.add(a_j, a_k)?;
            let after = tape.add(r_j, r_k)?;
            let diff = tape.sub(before, after)?;
            Ok(tape.scale(diff, 0.5))
        }
        Anchoring::OneDirection => tape.sub(a_j, r_j),
    }
}

/// Records the batched forward pass and returns every layer output plus the
/// number of `A · zw` products taken.
pub fn grn_forward_vars(
    tape: &mut Tape,
    plan: &GrnPlan,
    cfg: &GrnConfig,
    features: Var,
    weights: &[Var],
) -> Result<(Vec<Var>, usize)> {
    let mut z = features;
    let mut prev = None;
    let mut products = 0;
    let mut outs = Vec::with_capacity(weights.len());
    for (l, &w) in weights.iter().enumerate() {
        let input = if plan.variant.uses_edges() {
            let width = tape.value(z).cols();
            let e = signal_rows(tape, plan, cfg, width, prev, &mut products)?;
            tape.concat_rows(&[z, e])?
        } else {
            z
        };
        let stacked = tape.sparse_matmul(plan.stacked.clone(), input)?;
        let mixed = tape.matmul(stacked, w)?;
        let mean = tape.sparse_matmul(plan.segment_mean.clone(), mixed)?;
        let next = tape.activation(mean, cfg.activation_at(l));
        prev = Some((z, w));
        z = next;
        outs.push(z);
    }
    Ok((outs, products))
}

/// Final-layer output and the number of `A · zw` products taken.
pub fn grn_forward_counted(model: &GrnModel, g: &Graph) -> Result<(Tensor, usize)> {
    let plan = GrnPlan::build(g, model.config.variant, model.config.seed);
    forward_with_plan(model, &plan, g.require_features()?)
}

fn forward_with_plan(model: &GrnModel, plan: &GrnPlan, features: &Tensor) -> Result<(Tensor, usize)> {
    if features.rows() != plan.n || features.cols() != model.config.dims[0] {
        return Err(Error::shape(format!(
            "features {:?} for {} nodes and input width {}",
            features.shape(),
            plan.n,
            model.config.dims[0]
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let ws: Vec<Var> = model.weights.iter().map(|w| tape.constant(w.clone())).collect();
    let (outs, products) = grn_forward_vars(&mut tape, plan, &model.config, x, &ws)?;
    Ok((tape.value(*outs.last().expect("depth >= 1")).clone(), products))
}

/// `N × d_K` output of the model on `g`. Subgraphs are extracted from `g`
/// itself, so a perturbed graph is seen with its own structure.
pub fn grn_forward(model: &GrnModel, g: &Graph) -> Result<Tensor> {
    Ok(grn_forward_counted(model, g)?.0)
}

pub fn grn_predict(model: &GrnModel, g: &Graph) -> Result<Vec<usize>> {
    Ok(grn_forward(model, g)?.argmax_rows())
}

/// Seen / unseen partition of the nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InductiveSplit {
    pub seen: Mask,
    pub unseen: Mask,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Label-stratified split: each class contributes `floor(s_r * n_c)` nodes
/// and the remainder up to `round(s_r * n)` goes one each to the largest
/// classes. Unlabelled nodes are never seen. A class with fewer than two
/// nodes falls back to a uniform split.
pub fn inductive_split(g: &Graph, seen_rate: f64, seed: u64) -> Result<InductiveSplit> {
    if !(seen_rate > 0.0 && seen_rate <= 1.0) {
        return Err(Error::config(format!("seen rate {seen_rate} outside (0, 1]")));
    }
    let labels = g.require_labels()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); labels.classes()];
    for (i, c) in labels.assignments().iter().enumerate() {
        if let Some(c) = c {
            by_class[*c].push(i);
        }
    }
    let labelled: usize = by_class.iter().map(Vec::len).sum();
    let target = (seen_rate * labelled as f64).round() as usize;
    let mut warnings = Vec::new();
    let mut chosen = Vec::with_capacity(target);

    if by_class.iter().any(|c| c.len() < 2) {
        let msg = "a class has fewer than two nodes; using a uniform split".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
        let mut pool: Vec<usize> = by_class.concat();
        pool.sort_unstable();
        pool.shuffle(&mut rng);
        chosen.extend_from_slice(&pool[..target]);
    } else {
        for members in by_class.iter_mut() {
            members.shuffle(&mut rng);
        }
        let mut take: Vec<usize> = by_class
            .iter()
            .map(|m| (seen_rate * m.len() as f64).floor() as usize)
            .collect();
        let mut by_size: Vec<usize> = (0..by_class.len()).collect();
        by_size.sort_by(|a, b| by_class[*b].len().cmp(&by_class[*a].len()).then(a.cmp(b)));
        let mut remainder = target - take.iter().sum::<usize>();
        for &c in by_size.iter().cycle() {
            if remainder == 0 {
                break;
            }
            if take[c] < by_class[c].len() {
                take[c] += 1;
                remainder -= 1;
            }
        }
        for (members, t) in by_class.iter().zip(&take) {
            chosen.extend_from_slice(&members[..*t]);
        }
    }
    let seen = Mask::from_indices(g.n(), chosen);
    Ok(InductiveSplit {
        unseen: seen.complement(),
        seen,
        warnings,
    })
}

/// Gradient descent on cross-entropy over the labels of `seen`. Nothing
/// outside `seen` is read from the labels.
pub fn grn_train(config: &GrnConfig, g: &Graph, seen: &Mask) -> Result<GrnModel> {
    let mut model = GrnModel::new(config.clone())?;
    let features = g.require_features()?;
    let labels = g.require_labels()?;
    if labels.classes() != *config.dims.last().unwrap() {
        return Err(Error::config(format!(
            "{} classes but output width {}",
            labels.classes(),
            config.dims.last().unwrap()
        )));
    }
    let rows = Arc::new(labelled_rows(labels, seen)?);
    let targets = Arc::new(labels.restricted_to(seen).one_hot());
    let plan = GrnPlan::build(g, config.variant, config.seed);
    if features.cols() != config.dims[0] {
        return Err(Error::config(format!(
            "features have {} columns, model expects {}",
            features.cols(),
            config.dims[0]
        )));
    }

    for _ in 0..config.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let ws: Vec<Var> = model.weights.iter().map(|w| tape.leaf(w.clone())).collect();
        let (outs, _) = grn_forward_vars(&mut tape, &plan, config, x, &ws)?;
        let loss = tape.softmax_cross_entropy(*outs.last().unwrap(), targets.clone(), rows.clone())?;
        model.losses.push(tape.value(loss).get(0, 0));
        let grads = tape.backward(loss)?;
        let steps: Vec<Tensor> = model
            .weights
            .iter()
            .zip(&ws)
            .map(|(w, v)| grads.get_or_zeros(*v, w.rows(), w.cols()))
            .collect();
        let norm = steps.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
        let factor = match config.grad_clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        for (w, g) in model.weights.iter_mut().zip(&steps) {
            for (p, d) in w.data_mut().iter_mut().zip(g.data()) {
                *p -= config.learning_rate * factor * d;
            }
        }
    }
    model.warnings = check_loss_windows(&model.losses, 20);
    for w in &model.warnings {
        log::warn!("{w}");
    }
    Ok(model)
}

/// Splits with the configured seen rate and seed, then trains.
pub fn grn_train_inductive(config: &GrnConfig, g: &Graph) -> Result<(GrnModel, InductiveSplit)> {
    let split = inductive_split(g, config.seen_rate, config.seed)?;
    let model = grn_train(config, g, &split.seen)?;
    Ok((model, split))
}

/// Accuracy over `mask` on `g`; no parameters change.
pub fn grn_evaluate(model: &GrnModel, g: &Graph, mask: &Mask) -> Result<f64> {
    let labels = g.require_labels()?;
    Ok(accuracy(&grn_predict(model, g)?, labels, mask))
}

/// Cross-entropy of each node's output against the label distribution of
/// its labelled neighbors, averaged over nodes that have any.
pub fn unsupervised_loss(model: &GrnModel, g: &Graph) -> Result<f64> {
    let logits = grn_forward(model, g)?;
    let labels = g.require_labels()?;
    neighbor_label_cross_entropy(&logits, g, labels)
}

pub(crate) fn neighbor_label_cross_entropy(logits: &Tensor, g: &Graph, labels: &Labels) -> Result<f64> {
    let mut total = 0.0;
    let mut scored = 0usize;
    for i in 0..g.n() {
        let mut dist = vec![0.0; labels.classes()];
        let mut count = 0.0;
        for &j in g.neighbors(i) {
            if let Some(c) = labels.get(j) {
                dist[c] += 1.0;
                count += 1.0;
            }
        }
        if count == 0.0 {
            continue;
        }
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        total -= dist.iter().zip(row).map(|(t, x)| t / count * (x - lse)).sum::<f64>();
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::config("no node has a labelled neighbor"));
    }
    Ok(total / scored as f64)
}

/// `node,c0,c1,...` rows of an embedding.
pub fn embedding_csv(z: &Tensor) -> String {
    let mut out = String::from("node");
    for c in 0..z.cols() {
        out.push_str(&format!(",c{c}"));
    }
    out.push('\n');
    for i in 0..z.rows() {
        out.push_str(&i.to_string());
        for x in z.row(i) {
            out.push(',');
            out.push_str(&fmt_sig6(*x));
        }
        out.push('\n');
    }
    out
}
