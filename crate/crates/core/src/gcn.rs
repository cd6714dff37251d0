//! K-layer GCN: `Z^(k) = act_k(Op · Z^(k-1) · W_k)`, trained by full-batch
//! gradient descent on softmax cross-entropy.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphcore::{Graph, Labels, Mask, OperatorKind};
use crate::numkernel::{Activation, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    /// Layer widths `d_0 .. d_K`.
    pub dims: Vec<usize>,
    /// One activation per layer.
    pub activations: Vec<Activation>,
    pub operator: OperatorKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl GcnConfig {
    /// Sigmoid on every layer over the raw adjacency without self-loops,
    /// the setting under which the resonance mapping is derived.
    pub fn diagnostic(dims: Vec<usize>, epochs: usize, seed: u64) -> Self {
        let k = dims.len().saturating_sub(1);
        Self {
            dims,
            activations: vec![Activation::Sigmoid; k],
            operator: OperatorKind::RawAdjacency,
            learning_rate: 0.5,
            epochs,
            seed,
        }
    }

    /// Relu hidden layers, identity output, normalized operator with
    /// self-loops.
    pub fn classification(dims: Vec<usize>, epochs: usize, seed: u64) -> Self {
        let k = dims.len().saturating_sub(1);
        let mut activations = vec![Activation::Relu; k];
        if let Some(last) = activations.last_mut() {
            *last = Activation::Identity;
        }
        Self {
            dims,
            activations,
            operator: OperatorKind::SymNormSelfLoops,
            learning_rate: 0.2,
            epochs,
            seed,
        }
    }

    pub fn depth(&self) -> usize {
        self.dims.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::config("a GCN needs at least one layer"));
        }
        if self.dims.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if self.activations.len() != self.depth() {
            return Err(Error::config(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.depth()
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Latent signal summaries recorded for one training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// `zbar[k][i]`: row sum of `Z^(k)` at node `i`, for `k = 0..=K`.
    pub zbar: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    pub config: GcnConfig,
    pub weights: Vec<Tensor>,
    #[serde(default)]
    pub trace: Vec<EpochRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Seeded uniform initialization in `[-s, s]`, `s = sqrt(6 / (d_in + d_out))`.
pub fn init_weights(dims: &[usize], seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dims.windows(2)
        .map(|w| {
            let (d_in, d_out) = (w[0], w[1]);
            let s = (6.0 / (d_in + d_out) as f64).sqrt();
            let data = (0..d_in * d_out)
                .map(|_| rng.random_range(-s..=s))
                .collect();
            Tensor::new(d_in, d_out, data).expect("sized by construction")
        })
        .collect()
}

/// Row sums `zbar_i = sum_j z_ij`.
pub fn latent_sum(z: &Tensor) -> Vec<f64> {
    z.row_sums()
}

/// Records the layer stack on `tape` and returns `Z^(1) .. Z^(up_to)`.
pub fn forward_vars(
    tape: &mut Tape,
    activations: &[Activation],
    op: Var,
    features: Var,
    weights: &[Var],
    up_to: usize,
) -> Result<Vec<Var>> {
    if up_to > weights.len() {
        return Err(Error::config(format!(
            "requested layer {up_to} of a {}-layer model",
            weights.len()
        )));
    }
    let mut out = Vec::with_capacity(up_to);
    let mut z = features;
    for (w, act) in weights.iter().zip(activations).take(up_to) {
        let prop = tape.matmul(op, z)?;
        let lin = tape.matmul(prop, *w)?;
        z = tape.activation(lin, *act);
        out.push(z);
    }
    Ok(out)
}

impl GcnModel {
    pub fn new(config: GcnConfig) -> Result<Self> {
        config.validate()?;
        let weights = init_weights(&config.dims, config.seed);
        Ok(Self {
            config,
            weights,
            trace: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass over an explicit propagation matrix.
    pub fn forward_with(&self, op: &Tensor, features: &Tensor, up_to: usize) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let op = tape.constant(op.clone());
        let z0 = tape.constant(features.clone());
        let ws: Vec<Var> = self.weights.iter().map(|w| tape.constant(w.clone())).collect();
        let zs = forward_vars(&mut tape, &self.config.activations, op, z0, &ws, up_to)?;
        Ok(zs.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Output of the final layer on an explicit propagation matrix.
    pub fn logits_with(&self, op: &Tensor, features: &Tensor) -> Result<Tensor> {
        let mut zs = self.forward_with(op, features, self.depth())?;
        Ok(zs.pop().expect("depth >= 1"))
    }

    pub fn predict_with(&self, op: &Tensor, features: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits_with(op, features)?.argmax_rows())
    }
}

/// `Z^(1) .. Z^(up_to)` using the model's operator over `g`.
pub fn gcn_forward(model: &GcnModel, g: &Graph, up_to: usize) -> Result<Vec<Tensor>> {
    let features = g.require_features()?;
    let op = g.propagation_operator(model.config.operator);
    model.forward_with(&op, features, up_to)
}

/// Argmax of the final layer per node; ties go to the lowest class.
pub fn predict(model: &GcnModel, g: &Graph) -> Result<Vec<usize>> {
    let features = g.require_features()?;
    model.predict_with(&g.propagation_operator(model.config.operator), features)
}

/// Fraction of labelled nodes in `mask` whose prediction matches.
pub fn accuracy(predictions: &[usize], labels: &Labels, mask: &Mask) -> f64 {
    let mut total = 0usize;
    let mut hit = 0usize;
    for i in mask.indices() {
        if let Some(y) = labels.get(i) {
            total += 1;
            if predictions[i] == y {
                hit += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Rows of `mask` as cross-entropy rows, checking every one is labelled.
pub(crate) fn labelled_rows(labels: &Labels, mask: &Mask) -> Result<Vec<usize>> {
    if mask.len() != labels.len() {
        return Err(Error::config(format!(
            "mask covers {} nodes, labels {}",
            mask.len(),
            labels.len()
        )));
    }
    let rows = mask.indices();
    if rows.is_empty() {
        return Err(Error::config("training mask is empty"));
    }
    if let Some(i) = rows.iter().find(|i| labels.get(**i).is_none()) {
        return Err(Error::config(format!("training node {i} has no label")));
    }
    Ok(rows)
}

pub(crate) fn check_loss_windows(losses: &[f64], window: usize) -> Vec<String> {
    for t in 0..losses.len().saturating_sub(window) {
        if losses[t + window] > losses[t] {
            return vec![format!(
                "training loss rose over epochs {t}..{}: {:.6} -> {:.6}",
                t + window,
                losses[t],
                losses[t + window]
            )];
        }
    }
    Vec::new()
}

/// Full-batch gradient descent on cross-entropy over `train` using the
/// operator chosen by the config.
pub fn gcn_train(config: &GcnConfig, g: &Graph, train: &Mask) -> Result<GcnModel> {
    let op = g.propagation_operator(config.operator);
    gcn_train_with(config, &op, g.require_features()?, g.require_labels()?, train)
}

/// [`gcn_train`] over an explicit propagation matrix.
pub fn gcn_train_with(
    config: &GcnConfig,
    op: &Tensor,
    features: &Tensor,
    labels: &Labels,
    train: &Mask,
) -> Result<GcnModel> {
    let mut model = GcnModel::new(config.clone())?;
    if features.cols() != config.dims[0] {
        return Err(Error::config(format!(
            "features have {} columns, model expects {}",
            features.cols(),
            config.dims[0]
        )));
    }
    if labels.classes() != *config.dims.last().unwrap() {
        return Err(Error::config(format!(
            "{} classes but output width {}",
            labels.classes(),
            config.dims.last().unwrap()
        )));
    }
    if features.rows() != labels.len() || op.rows() != features.rows() {
        return Err(Error::config("feature, label and operator node counts differ"));
    }
    let rows = Arc::new(labelled_rows(labels, train)?);
    let targets = Arc::new(labels.one_hot());
    let features_sum = latent_sum(features);

    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let op_v = tape.constant(op.clone());
        let z0 = tape.constant(features.clone());
        let ws: Vec<Var> = model.weights.iter().map(|w| tape.leaf(w.clone())).collect();
        let zs = forward_vars(&mut tape, &config.activations, op_v, z0, &ws, ws.len())?;
        let out = *zs.last().expect("depth >= 1");
        let loss = tape.softmax_cross_entropy(out, targets.clone(), rows.clone())?;
        let loss_value = tape.value(loss).get(0, 0);

        let mut zbar = Vec::with_capacity(zs.len() + 1);
        zbar.push(features_sum.clone());
        zbar.extend(zs.iter().map(|z| latent_sum(tape.value(*z))));
        model.trace.push(EpochRecord {
            epoch,
            loss: loss_value,
            zbar,
        });
        losses.push(loss_value);

        let grads = tape.backward(loss)?;
        for (w, v) in model.weights.iter_mut().zip(&ws) {
            let g = grads.get_or_zeros(*v, w.rows(), w.cols());
            for (p, d) in w.data_mut().iter_mut().zip(g.data()) {
                *p -= config.learning_rate * d;
            }
        }
    }
    model.warnings = check_loss_windows(&losses, 20);
    for w in &model.warnings {
        log::warn!("{w}");
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphcore::fixtures::*;
    use crate::graphcore::{gen_sbm, SbmConfig};
    use crate::numkernel::finite_diff_check_many;

    fn fixed_model(dims: Vec<usize>, acts: Vec<Activation>, op: OperatorKind, weights: Vec<Tensor>) -> GcnModel {
        let mut cfg = GcnConfig::diagnostic(dims, 0, 0);
        cfg.activations = acts;
        cfg.operator = op;
        GcnModel {
            config: cfg,
            weights,
            trace: vec![],
            warnings: vec![],
        }
    }

    #[test]
    fn one_layer_sigmoid_on_k3() {
        let g = k3().with_features(Tensor::eye(3)).unwrap();
        let m = fixed_model(
            vec![3, 3],
            vec![Activation::Sigmoid],
            OperatorKind::RawAdjacency,
            vec![Tensor::eye(3)],
        );
        let z = gcn_forward(&m, &g, 1).unwrap();
        let s1 = 1.0 / (1.0 + (-1f64).exp());
        let row = z[0].row(0);
        assert_eq!(row[0], 0.5);
        assert!((row[1] - s1).abs() < 1e-15 && (row[2] - s1).abs() < 1e-15);
        assert!((s1 - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn zero_weights_give_half() {
        let g = k3().with_features(Tensor::eye(3)).unwrap();
        let m = fixed_model(
            vec![3, 2, 2],
            vec![Activation::Sigmoid; 2],
            OperatorKind::RawAdjacency,
            vec![Tensor::zeros(3, 2), Tensor::zeros(2, 2)],
        );
        for z in gcn_forward(&m, &g, 2).unwrap() {
            assert!(z.data().iter().all(|v| *v == 0.5));
        }
    }

    #[test]
    fn identity_stack_is_matrix_power() {
        for seed in 0..5 {
            let g = random_graph(9, 0.35, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let feats = Tensor::new(9, 9, (0..81).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let g = g.with_features(feats.clone()).unwrap();
            let k = 4;
            let m = fixed_model(
                vec![9; k + 1],
                vec![Activation::Identity; k],
                OperatorKind::RawAdjacency,
                vec![Tensor::eye(9); k],
            );
            let zs = gcn_forward(&m, &g, k).unwrap();
            let mut expected = feats;
            for z in &zs {
                expected = g.adjacency().matmul(&expected).unwrap();
                assert_eq!(z, &expected);
            }
            assert_eq!(zs[0], g.adjacency().matmul(g.features().unwrap()).unwrap());
        }
    }

    #[test]
    fn forward_requires_features() {
        let m = GcnModel::new(GcnConfig::diagnostic(vec![3, 2], 0, 1)).unwrap();
        assert!(matches!(gcn_forward(&m, &k3(), 1), Err(Error::State(_))));
    }

    #[test]
    fn latent_sums() {
        assert_eq!(latent_sum(&Tensor::eye(3)), vec![1.0; 3]);
        assert_eq!(latent_sum(&Tensor::filled(2, 4, 0.5)), vec![2.0; 2]);
        let x = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(latent_sum(&x), vec![3.0, 7.0]);
    }

    #[test]
    fn trains_two_triangles() {
        let g = two_triangles();
        let cfg = GcnConfig::classification(vec![2, 8, 2], 200, 3);
        let m = gcn_train(&cfg, &g, &Mask::all(6)).unwrap();
        let pred = predict(&m, &g).unwrap();
        assert_eq!(accuracy(&pred, g.labels().unwrap(), &Mask::all(6)), 1.0);
        assert_eq!(m.trace.len(), 200);
        assert_eq!(m.trace[0].zbar.len(), 3);
        assert!(m.warnings.is_empty(), "{:?}", m.warnings);
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let g = two_triangles();
        let cfg = GcnConfig::classification(vec![2, 4, 2], 0, 11);
        let m = gcn_train(&cfg, &g, &Mask::all(6)).unwrap();
        assert_eq!(m.weights, init_weights(&cfg.dims, 11));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let g = gen_sbm(&SbmConfig::new(vec![8, 8], 0.5, 0.1, 2)).unwrap();
        let cfg = GcnConfig::classification(vec![2, 6, 2], 30, 5);
        let a = gcn_train(&cfg, &g, &Mask::all(16)).unwrap();
        let b = gcn_train(&cfg, &g, &Mask::all(16)).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn init_range() {
        let ws = init_weights(&[4, 8, 2], 9);
        let s0 = (6.0f64 / 12.0).sqrt();
        assert!(ws[0].data().iter().all(|v| v.abs() <= s0));
        assert_eq!(ws[1].shape(), (8, 2));
    }

    #[test]
    fn training_config_errors() {
        let g = two_triangles();
        let cfg = GcnConfig::classification(vec![2, 4, 2], 5, 1);
        assert!(matches!(gcn_train(&cfg, &g, &Mask::none(6)), Err(Error::Config(_))));
        let wrong_out = GcnConfig::classification(vec![2, 4, 3], 5, 1);
        assert!(matches!(gcn_train(&wrong_out, &g, &Mask::all(6)), Err(Error::Config(_))));
        let wrong_in = GcnConfig::classification(vec![5, 4, 2], 5, 1);
        assert!(matches!(gcn_train(&wrong_in, &g, &Mask::all(6)), Err(Error::Config(_))));
        let hidden = g.with_labels_restricted(&Mask::from_indices(6, [0]));
        assert!(matches!(gcn_train(&cfg, &hidden, &Mask::all(6)), Err(Error::Config(_))));
    }

    #[test]
    fn argmax_tie_and_accuracy() {
        let labels = Labels::from_classes(2, &[0, 1, 1]).unwrap();
        let uniform = Tensor::filled(3, 2, 0.25).argmax_rows();
        assert_eq!(uniform, vec![0, 0, 0]);
        assert!((accuracy(&uniform, &labels, &Mask::all(3)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&[0, 1, 1], &labels, &Mask::all(3)), 1.0);
    }

    #[test]
    fn constant_predictor_on_random_labels() {
        // binomial oracle: 200 fair-coin labels against a constant guess
        let n = 200;
        let mut hits = Vec::new();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let labels = Labels::from_classes(2, &ys).unwrap();
            let preds = Tensor::filled(n, 2, 0.0).argmax_rows();
            hits.push(accuracy(&preds, &labels, &Mask::all(n)));
        }
        let mean = hits.iter().sum::<f64>() / hits.len() as f64;
        let sigma = (0.25 / (n as f64 * hits.len() as f64)).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let g = gen_sbm(&SbmConfig::new(vec![3, 3], 0.9, 0.2, 4)).unwrap();
        for cfg in [
            GcnConfig::classification(vec![2, 4, 3, 2], 0, 8),
            GcnConfig::diagnostic(vec![2, 3, 3, 2], 0, 8),
        ] {
            let op = g.propagation_operator(cfg.operator);
            let feats = g.features().unwrap().clone();
            let targets = Arc::new(g.labels().unwrap().one_hot());
            let rows = Arc::new((0..6).collect::<Vec<_>>());
            let weights = init_weights(&cfg.dims, cfg.seed);
            let err = finite_diff_check_many(
                |tape, ws| {
                    let o = tape.constant(op.clone());
                    let z0 = tape.constant(feats.clone());
                    let zs = forward_vars(tape, &cfg.activations, o, z0, ws, ws.len())?;
                    tape.softmax_cross_entropy(*zs.last().unwrap(), targets.clone(), rows.clone())
                },
                &weights,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn loss_window_warning() {
        let rising: Vec<f64> = (0..30).map(|i| i as f64).collect();
        assert_eq!(check_loss_windows(&rising, 20).len(), 1);
        let falling: Vec<f64> = (0..30).map(|i| -(i as f64)).collect();
        assert!(check_loss_windows(&falling, 20).is_empty());
    }
}
