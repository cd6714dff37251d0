//! Structure attacks, attack success rates, robustness grids and the
//! combinatorial cost bound of an exhaustive attacker.
//!
//! The adversary is a greedy gradient attack on a 2-layer GCN surrogate: at
//! every step the gradient of the surrogate loss with respect to a relaxed
//! dense adjacency ranks candidate flips, the best few are re-scored by
//! their exact loss, and the winner is applied. It stands in for
//! meta-gradient attacks at small scale.

use std::collections::BTreeSet;
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{accuracy, forward_vars, gcn_train, gcn_train_with, predict, GcnConfig, GcnModel};
use crate::graphcore::{apply_perturbation, Edge, Graph, Mask, OperatorKind, Perturbation};
use crate::grn::{grn_evaluate, grn_train, inductive_split, GrnConfig, GrnVariant};
use crate::lrs::{build_global_lrs, pearson, random_weighted_control};
use crate::graphcore::strength_distribution;
use crate::numkernel::{sym_normalize_value, Tape, Tensor, Var};
use crate::report::{fmt_sig6, mean_std};

/// Label attached to every attack output.
pub const ATTACK_NOTE: &str = "greedy gradient attack on a 2-layer GCN surrogate (meta-gradient substitute)";

/// Upper bound on the number of perturbation sets an attacker must search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBound {
    pub n: u64,
    pub r: u64,
    pub k: u32,
    /// Size of the pool the `r` flips are drawn from.
    #[serde(with = "decimal")]
    pub population: BigUint,
    #[serde(with = "decimal")]
    pub bound: BigUint,
    pub log10_bound: f64,
    pub warning: Option<String>,
}

mod decimal {
    use num_bigint::BigUint;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&x.to_str_radix(10))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let text = String::deserialize(d)?;
        BigUint::parse_bytes(text.as_bytes(), 10).ok_or_else(|| D::Error::custom("not a decimal integer"))
    }
}

/// Exact `C(n, r)`; zero when `r > n`.
pub fn binomial(n: &BigUint, r: u64) -> BigUint {
    let r_big = BigUint::from(r);
    if &r_big > n {
        return BigUint::zero();
    }
    // use the smaller of r and n - r
    let r = if n - &r_big < r_big {
        let other: BigUint = n - &r_big;
        u64::try_from(other).expect("smaller than r")
    } else {
        r
    };
    let mut acc = BigUint::one();
    for i in 0..r {
        acc *= n - BigUint::from(i);
        acc /= BigUint::from(i + 1);
    }
    acc
}

/// `log10(x)` from the decimal digits; `-inf` for zero.
pub fn log10_big(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let digits = x.to_str_radix(10);
    let head = &digits[..digits.len().min(17)];
    let mantissa: f64 = head.parse::<f64>().expect("decimal digits") / 10f64.powi(head.len() as i32 - 1);
    (digits.len() - 1) as f64 + mantissa.log10()
}

/// `C(n, r)` for `K < 3`, else `(K - 1) * C(floor(n^(K-1) / 2), r)`.
pub fn cost_bound(n: u64, r: u64, k: u32) -> Result<CostBound> {
    if n == 0 || r == 0 || k == 0 {
        return Err(Error::config("cost bound needs n, r, K >= 1"));
    }
    let (population, factor) = if k < 3 {
        (BigUint::from(n), BigUint::one())
    } else {
        (BigUint::from(n).pow(k - 1) / 2u32, BigUint::from(k - 1))
    };
    let bound = factor * binomial(&population, r);
    let warning = if bound.is_zero() {
        let msg = format!("budget {r} exceeds the {population} available choices; bound is 0");
        log::warn!("{msg}");
        Some(msg)
    } else {
        None
    };
    Ok(CostBound {
        n,
        r,
        k,
        log10_bound: log10_big(&bound),
        population,
        bound,
        warning,
    })
}

fn pair_from_index(n: usize, mut t: usize) -> Edge {
    for u in 0..n {
        let row = n - 1 - u;
        if t < row {
            return (u, u + 1 + t);
        }
        t -= row;
    }
    unreachable!("pair index in range")
}

/// `round(rate * |E|)` distinct node pairs drawn uniformly; each is an
/// insertion or a deletion depending on the current state.
pub fn random_attack(g: &Graph, rate: f64, seed: u64) -> Result<Perturbation> {
    if !(rate > 0.0 && rate <= 0.5) {
        return Err(Error::config(format!("perturbation rate {rate} outside (0, 0.5]")));
    }
    let n = g.n();
    let pairs = n * n.saturating_sub(1) / 2;
    if pairs == 0 {
        return Err(Error::config("graph has no node pairs to flip"));
    }
    let budget = (rate * g.edge_count() as f64).round() as usize;
    if budget > pairs {
        return Err(Error::config(format!("budget {budget} exceeds {pairs} node pairs")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flips = index::sample(&mut rng, pairs, budget)
        .into_iter()
        .map(|t| pair_from_index(n, t));
    Perturbation::new(flips, budget)
}

/// Rows and target distributions of the attack loss.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackTargets {
    pub targets: Arc<Tensor>,
    pub rows: Arc<Vec<usize>>,
}

impl AttackTargets {
    /// True labels on labelled `train` nodes, the surrogate's clean-graph
    /// predictions everywhere else, scored over `target`.
    pub fn self_training(g: &Graph, surrogate: &GcnModel, train: &Mask, target: &Mask) -> Result<Self> {
        let labels = g.require_labels()?;
        let preds = predict(surrogate, g)?;
        let mut t = Tensor::zeros(g.n(), labels.classes());
        for i in 0..g.n() {
            let class = match labels.get(i) {
                Some(c) if train.contains(i) => c,
                _ => preds[i],
            };
            t.set(i, class, 1.0);
        }
        let rows = target.indices();
        if rows.is_empty() {
            return Err(Error::config("attack target mask is empty"));
        }
        Ok(Self {
            targets: Arc::new(t),
            rows: Arc::new(rows),
        })
    }
}

fn operator_value(kind: OperatorKind, a: &Tensor) -> Result<Tensor> {
    match kind {
        OperatorKind::RawAdjacency => Ok(a.clone()),
        OperatorKind::SymNormSelfLoops => sym_normalize_value(a),
    }
}

/// Surrogate loss for the adjacency `a`.
pub fn attack_loss(surrogate: &GcnModel, a: &Tensor, features: &Tensor, t: &AttackTargets) -> Result<f64> {
    let logits = surrogate.logits_with(&operator_value(surrogate.config.operator, a)?, features)?;
    let mut tape = Tape::new();
    let l = tape.constant(logits);
    let loss = tape.softmax_cross_entropy(l, t.targets.clone(), t.rows.clone())?;
    Ok(tape.value(loss).get(0, 0))
}

/// Loss and its gradient with respect to every entry of `a`.
pub fn adjacency_gradient(
    surrogate: &GcnModel,
    a: &Tensor,
    features: &Tensor,
    t: &AttackTargets,
) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let a_v = tape.leaf(a.clone());
    let op = match surrogate.config.operator {
        OperatorKind::RawAdjacency => a_v,
        OperatorKind::SymNormSelfLoops => tape.sym_normalize(a_v)?,
    };
    let x = tape.constant(features.clone());
    let ws: Vec<Var> = surrogate.weights.iter().map(|w| tape.constant(w.clone())).collect();
    let zs = forward_vars(&mut tape, &surrogate.config.activations, op, x, &ws, ws.len())?;
    let loss = tape.softmax_cross_entropy(*zs.last().unwrap(), t.targets.clone(), t.rows.clone())?;
    let value = tape.value(loss).get(0, 0);
    let grads = tape.backward(loss)?;
    Ok((value, grads.get_or_zeros(a_v, a.rows(), a.cols())))
}

fn toggle(a: &mut Tensor, (u, v): Edge) {
    let x = 1.0 - a.get(u, v);
    a.set(u, v, x);
    a.set(v, u, x);
}

/// Best single flip by exhaustive exact-loss evaluation, skipping `exclude`.
pub fn exhaustive_best_flip(
    surrogate: &GcnModel,
    a: &Tensor,
    features: &Tensor,
    t: &AttackTargets,
    exclude: &BTreeSet<Edge>,
) -> Result<Option<(Edge, f64)>> {
    let mut best: Option<(Edge, f64)> = None;
    let mut scratch = a.clone();
    for u in 0..a.rows() {
        for v in u + 1..a.rows() {
            if exclude.contains(&(u, v)) {
                continue;
            }
            toggle(&mut scratch, (u, v));
            let l = attack_loss(surrogate, &scratch, features, t)?;
            toggle(&mut scratch, (u, v));
            if best.is_none_or(|(_, b)| l > b) {
                best = Some(((u, v), l));
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedySettings {
    /// Gradient-ranked candidates re-scored by exact loss per step.
    pub rerank: usize,
}

impl Default for GreedySettings {
    fn default() -> Self {
        Self { rerank: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyOutcome {
    pub perturbation: Perturbation,
    /// Flips in the order they were chosen.
    pub sequence: Vec<Edge>,
    /// Surrogate loss before any flip, then after each flip.
    pub losses: Vec<f64>,
    /// True when no remaining flip could raise the loss before the budget
    /// was spent.
    pub stopped_early: bool,
}

/// Greedy structure attack of at most `budget` flips against a trained
/// surrogate. Each step ranks unflipped pairs by the first-order loss
/// change, re-scores the top candidates exactly and applies the best. If
/// none of them raises the loss every remaining pair is scored exactly; the
/// attack stops once no flip raises it. No pair is flipped twice.
pub fn greedy_surrogate_attack(
    g: &Graph,
    surrogate: &GcnModel,
    targets: &AttackTargets,
    budget: usize,
    settings: &GreedySettings,
) -> Result<GreedyOutcome> {
    let features = g.require_features()?;
    let mut a = g.adjacency().clone();
    let mut flipped = BTreeSet::new();
    let mut sequence = Vec::with_capacity(budget);
    let mut current = attack_loss(surrogate, &a, features, targets)?;
    let mut losses = vec![current];
    let mut stopped_early = false;
    let n = g.n();
    let rerank = settings.rerank.max(1);

    while sequence.len() < budget {
        let (_, grad) = adjacency_gradient(surrogate, &a, features, targets)?;
        let mut scored: Vec<(f64, Edge)> = Vec::with_capacity(n * n / 2);
        for u in 0..n {
            for v in u + 1..n {
                if flipped.contains(&(u, v)) {
                    continue;
                }
                let s = grad.get(u, v) + grad.get(v, u);
                scored.push((if a.get(u, v) != 0.0 { -s } else { s }, (u, v)));
            }
        }
        if scored.is_empty() {
            stopped_early = true;
            break;
        }
        scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

        let mut best: Option<(Edge, f64)> = None;
        for &(_, e) in scored.iter().take(rerank) {
            toggle(&mut a, e);
            let l = attack_loss(surrogate, &a, features, targets)?;
            toggle(&mut a, e);
            if best.is_none_or(|(_, b)| l > b) {
                best = Some((e, l));
            }
        }
        let mut choice = best.expect("at least one candidate");
        if choice.1 <= current {
            match exhaustive_best_flip(surrogate, &a, features, targets, &flipped)? {
                Some(found) if found.1 >= current => choice = found,
                _ => {
                    stopped_early = true;
                    break;
                }
            }
        }
        toggle(&mut a, choice.0);
        flipped.insert(choice.0);
        sequence.push(choice.0);
        current = choice.1;
        losses.push(current);
    }
    Ok(GreedyOutcome {
        perturbation: Perturbation::new(sequence.iter().copied(), budget)?,
        sequence,
        losses,
        stopped_early,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    Greedy,
    Random,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Random => "random",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "random" => Ok(Self::Random),
            _ => Err(Error::config(format!("unknown attack `{s}`"))),
        }
    }
}

/// How perturbations are produced inside experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSettings {
    pub kind: AttackKind,
    /// Hidden width of the 2-layer surrogate.
    pub surrogate_hidden: usize,
    pub surrogate_epochs: usize,
    pub greedy: GreedySettings,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            kind: AttackKind::Greedy,
            surrogate_hidden: 16,
            surrogate_epochs: 200,
            greedy: GreedySettings::default(),
        }
    }
}

impl AttackSettings {
    pub fn surrogate_config(&self, g: &Graph, seed: u64) -> Result<GcnConfig> {
        let d = g.require_features()?.cols();
        let c = g.require_labels()?.classes();
        Ok(GcnConfig::classification(vec![d, self.surrogate_hidden, c], self.surrogate_epochs, seed))
    }

    /// Perturbation of `round(rate * |E|)` flips; the surrogate, if any, is
    /// trained on the labels of `train` over the clean graph.
    pub fn perturb(&self, g: &Graph, rate: f64, train: &Mask, seed: u64) -> Result<Perturbation> {
        let budget = (rate * g.edge_count() as f64).round() as usize;
        if budget == 0 {
            return Ok(Perturbation::empty());
        }
        match self.kind {
            AttackKind::Random => random_attack(g, rate, seed),
            AttackKind::Greedy => {
                let surrogate = gcn_train(&self.surrogate_config(g, seed)?, g, train)?;
                let targets = AttackTargets::self_training(g, &surrogate, train, &Mask::all(g.n()))?;
                Ok(greedy_surrogate_attack(g, &surrogate, &targets, budget, &self.greedy)?.perturbation)
            }
        }
    }
}

/// Outcome of attacking one victim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub perturbation: Perturbation,
    pub clean_accuracy: f64,
    pub attacked_accuracy: f64,
    /// Share of targeted nodes whose prediction became wrong.
    pub asr: f64,
    /// Test nodes classified correctly by the clean victim.
    pub targeted: usize,
    pub seed: u64,
    pub victim: GcnConfig,
    pub attack: AttackSettings,
    pub note: String,
}

/// Fraction of nodes in `test` that `clean` got right and `attacked` got
/// wrong, over those `clean` got right; zero when there are none.
pub fn attack_success_rate(
    clean: &[usize],
    attacked: &[usize],
    labels: &crate::graphcore::Labels,
    test: &Mask,
) -> (f64, usize) {
    let mut targeted = 0;
    let mut flipped = 0;
    for i in test.indices() {
        if let Some(y) = labels.get(i) {
            if clean[i] == y {
                targeted += 1;
                if attacked[i] != y {
                    flipped += 1;
                }
            }
        }
    }
    let asr = if targeted == 0 {
        0.0
    } else {
        flipped as f64 / targeted as f64
    };
    (asr, targeted)
}

/// Trains the victim on the clean and on the perturbed graph (poisoning)
/// and measures how many correct test predictions the attack breaks.
pub fn evaluate_attack(
    g: &Graph,
    perturbation: &Perturbation,
    victim: &GcnConfig,
    train: &Mask,
    test: &Mask,
    attack: &AttackSettings,
) -> Result<AttackResult> {
    let labels = g.require_labels()?;
    let attacked_graph = apply_perturbation(g, perturbation)?;
    let clean_model = gcn_train(victim, g, train)?;
    let clean = predict(&clean_model, g)?;
    let attacked_model = gcn_train(victim, &attacked_graph, train)?;
    let attacked = predict(&attacked_model, &attacked_graph)?;
    let (asr, targeted) = attack_success_rate(&clean, &attacked, labels, test);
    Ok(AttackResult {
        perturbation: perturbation.clone(),
        clean_accuracy: accuracy(&clean, labels, test),
        attacked_accuracy: accuracy(&attacked, labels, test),
        asr,
        targeted,
        seed: victim.seed,
        victim: victim.clone(),
        attack: attack.clone(),
        note: ATTACK_NOTE.into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrExperimentConfig {
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub rate: f64,
    /// Labelled share used for training; the rest is the test set.
    pub train_fraction: f64,
    pub hidden: usize,
    pub victim_epochs: usize,
    pub attack: AttackSettings,
}

impl Default for AsrExperimentConfig {
    fn default() -> Self {
        Self {
            depths: (1..=6).collect(),
            seeds: (0..5).collect(),
            rate: 0.2,
            train_fraction: 0.2,
            hidden: 16,
            victim_epochs: 200,
            attack: AttackSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrRow {
    pub depth: usize,
    pub mean_asr: f64,
    pub std_asr: f64,
    pub min_asr: f64,
    pub max_asr: f64,
    pub mean_clean_accuracy: f64,
    pub mean_attacked_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrReport {
    pub config: AsrExperimentConfig,
    pub rows: Vec<AsrRow>,
    pub results: Vec<AttackResult>,
}

fn join_seeds(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

impl AsrReport {
    pub fn row(&self, depth: usize) -> Option<&AsrRow> {
        self.rows.iter().find(|r| r.depth == depth)
    }

    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let mut out = String::from(
            "depth,mean_asr,std_asr,min_asr,max_asr,mean_clean_accuracy,mean_attacked_accuracy,\
             rate,seeds,train_fraction,hidden,victim_epochs,attack,surrogate_hidden,surrogate_epochs,rerank\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.depth,
                fmt_sig6(r.mean_asr),
                fmt_sig6(r.std_asr),
                fmt_sig6(r.min_asr),
                fmt_sig6(r.max_asr),
                fmt_sig6(r.mean_clean_accuracy),
                fmt_sig6(r.mean_attacked_accuracy),
                fmt_sig6(c.rate),
                join_seeds(&c.seeds),
                fmt_sig6(c.train_fraction),
                c.hidden,
                c.victim_epochs,
                c.attack.kind.name(),
                c.attack.surrogate_hidden,
                c.attack.surrogate_epochs,
                c.attack.greedy.rerank
            ));
        }
        out
    }
}

/// Victim GCN of the given depth with hidden layers of equal width.
pub fn victim_config(g: &Graph, depth: usize, hidden: usize, epochs: usize, seed: u64) -> Result<GcnConfig> {
    if depth == 0 {
        return Err(Error::config("victim depth must be positive"));
    }
    let mut dims = vec![g.require_features()?.cols()];
    dims.extend(std::iter::repeat_n(hidden, depth - 1));
    dims.push(g.require_labels()?.classes());
    Ok(GcnConfig::classification(dims, epochs, seed))
}

/// One task per seed: split, attack once, then retrain a victim of every
/// depth on the clean and the perturbed graph.
pub fn asr_seed_results(g: &Graph, cfg: &AsrExperimentConfig, seed: u64) -> Result<Vec<AttackResult>> {
    let split = inductive_split(g, cfg.train_fraction, seed)?;
    let perturbation = cfg.attack.perturb(g, cfg.rate, &split.seen, seed)?;
    cfg.depths
        .iter()
        .map(|&depth| {
            let victim = victim_config(g, depth, cfg.hidden, cfg.victim_epochs, seed)?;
            evaluate_attack(g, &perturbation, &victim, &split.seen, &split.unseen, &cfg.attack)
        })
        .collect()
}

/// Aggregates per-seed results (as produced by [`asr_seed_results`]).
pub fn summarize_asr(cfg: &AsrExperimentConfig, per_seed: Vec<Vec<AttackResult>>) -> AsrReport {
    let mut rows = Vec::new();
    for (d, &depth) in cfg.depths.iter().enumerate() {
        let cell: Vec<&AttackResult> = per_seed.iter().map(|r| &r[d]).collect();
        let asrs: Vec<f64> = cell.iter().map(|r| r.asr).collect();
        let (mean_asr, std_asr) = mean_std(&asrs);
        let clean: Vec<f64> = cell.iter().map(|r| r.clean_accuracy).collect();
        let attacked: Vec<f64> = cell.iter().map(|r| r.attacked_accuracy).collect();
        rows.push(AsrRow {
            depth,
            mean_asr,
            std_asr,
            min_asr: asrs.iter().cloned().fold(f64::INFINITY, f64::min),
            max_asr: asrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean_clean_accuracy: mean_std(&clean).0,
            mean_attacked_accuracy: mean_std(&attacked).0,
        });
    }
    AsrReport {
        config: cfg.clone(),
        rows,
        results: per_seed.into_iter().flatten().collect(),
    }
}

/// Mean attack success rate per victim depth over the configured seeds.
pub fn asr_vs_depth_experiment(g: &Graph, cfg: &AsrExperimentConfig) -> Result<AsrReport> {
    if cfg.depths.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::config("need at least one depth and one seed"));
    }
    let per_seed = cfg
        .seeds
        .iter()
        .map(|&s| asr_seed_results(g, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_asr(cfg, per_seed))
}

/// Model evaluated in the robustness grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Gcn,
    Grn(GrnVariant),
}

impl ModelSpec {
    pub fn name(self) -> String {
        match self {
            Self::Gcn => "gcn".into(),
            Self::Grn(v) => format!("grn_{}", v.name()),
        }
    }
}

impl std::str::FromStr for ModelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "gcn" {
            return Ok(Self::Gcn);
        }
        s.strip_prefix("grn_")
            .or_else(|| (s == "grn").then_some("e_z"))
            .ok_or_else(|| Error::config(format!("unknown model `{s}`")))?
            .parse()
            .map(Self::Grn)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessConfig {
    pub models: Vec<ModelSpec>,
    pub rates: Vec<f64>,
    pub seen_rates: Vec<f64>,
    pub repetitions: usize,
    pub base_seed: u64,
    pub hidden: usize,
    pub gcn_epochs: usize,
    pub grn_epochs: usize,
    pub grn_learning_rate: f64,
    pub attack: AttackSettings,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        let grn = GrnConfig::new(1, 1, 1, 0);
        Self {
            models: vec![ModelSpec::Gcn, ModelSpec::Grn(GrnVariant::EZ)],
            rates: vec![0.0, 0.05, 0.1, 0.2],
            seen_rates: vec![0.2, 0.4, 0.6],
            repetitions: 10,
            base_seed: 0,
            hidden: 16,
            gcn_epochs: 200,
            grn_epochs: grn.epochs,
            grn_learning_rate: grn.learning_rate,
            attack: AttackSettings::default(),
        }
    }
}

/// One trained model in one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub model: ModelSpec,
    pub rate: f64,
    pub seen_rate: f64,
    pub seed: u64,
    pub flips: usize,
    pub seen_accuracy: f64,
    pub unseen_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub model: ModelSpec,
    pub rate: f64,
    pub seen_rate: f64,
    pub mean_seen: f64,
    pub std_seen: f64,
    pub mean_unseen: f64,
    pub std_unseen: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub config: RobustnessConfig,
    pub rows: Vec<RobustnessRow>,
    pub cells: Vec<RobustnessCell>,
}

impl RobustnessReport {
    pub fn row(&self, model: ModelSpec, rate: f64, seen_rate: f64) -> Option<&RobustnessRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.rate == rate && r.seen_rate == seen_rate)
    }

    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let mut out = String::from(
            "model,rate,seen_rate,mean_seen_accuracy,std_seen_accuracy,mean_unseen_accuracy,std_unseen_accuracy,\
             repetitions,base_seed,hidden,gcn_epochs,grn_epochs,grn_learning_rate,attack,surrogate_hidden,surrogate_epochs,rerank\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.model.name(),
                fmt_sig6(r.rate),
                fmt_sig6(r.seen_rate),
                fmt_sig6(r.mean_seen),
                fmt_sig6(r.std_seen),
                fmt_sig6(r.mean_unseen),
                fmt_sig6(r.std_unseen),
                c.repetitions,
                c.base_seed,
                c.hidden,
                c.gcn_epochs,
                c.grn_epochs,
                fmt_sig6(c.grn_learning_rate),
                c.attack.kind.name(),
                c.attack.surrogate_hidden,
                c.attack.surrogate_epochs,
                c.attack.greedy.rerank
            ));
        }
        out
    }
}

/// Every `(seen_rate, rate, repetition)` task of the grid, in output order.
pub fn robustness_tasks(cfg: &RobustnessConfig) -> Vec<(f64, f64, u64)> {
    let mut tasks = Vec::new();
    for &s in &cfg.seen_rates {
        for &r in &cfg.rates {
            for rep in 0..cfg.repetitions {
                tasks.push((s, r, cfg.base_seed + rep as u64));
            }
        }
    }
    tasks
}

/// One task: split, perturb once, train and score every model on the
/// perturbed graph.
pub fn robustness_task(g: &Graph, cfg: &RobustnessConfig, seen_rate: f64, rate: f64, seed: u64) -> Result<Vec<RobustnessCell>> {
    let split = inductive_split(g, seen_rate, seed)?;
    let perturbation = cfg.attack.perturb(g, rate, &split.seen, seed)?;
    let attacked = apply_perturbation(g, &perturbation)?;
    let d = g.require_features()?.cols();
    let classes = g.require_labels()?.classes();
    let mut cells = Vec::with_capacity(cfg.models.len());
    for &model in &cfg.models {
        let (seen_accuracy, unseen_accuracy) = match model {
            ModelSpec::Gcn => {
                let victim = victim_config(g, 2, cfg.hidden, cfg.gcn_epochs, seed)?;
                let m = gcn_train(&victim, &attacked, &split.seen)?;
                let preds = predict(&m, &attacked)?;
                let labels = g.require_labels()?;
                (accuracy(&preds, labels, &split.seen), accuracy(&preds, labels, &split.unseen))
            }
            ModelSpec::Grn(variant) => {
                let mut gc = GrnConfig::new(d, cfg.hidden, classes, seed);
                gc.variant = variant;
                gc.epochs = cfg.grn_epochs;
                gc.learning_rate = cfg.grn_learning_rate;
                gc.seen_rate = seen_rate;
                let m = grn_train(&gc, &attacked, &split.seen)?;
                (
                    grn_evaluate(&m, &attacked, &split.seen)?,
                    grn_evaluate(&m, &attacked, &split.unseen)?,
                )
            }
        };
        cells.push(RobustnessCell {
            model,
            rate,
            seen_rate,
            seed,
            flips: perturbation.len(),
            seen_accuracy,
            unseen_accuracy,
        });
    }
    Ok(cells)
}

pub fn summarize_robustness(cfg: &RobustnessConfig, cells: Vec<RobustnessCell>) -> RobustnessReport {
    let mut rows = Vec::new();
    for &s in &cfg.seen_rates {
        for &r in &cfg.rates {
            for &m in &cfg.models {
                let sel: Vec<&RobustnessCell> = cells
                    .iter()
                    .filter(|c| c.model == m && c.rate == r && c.seen_rate == s)
                    .collect();
                let seen: Vec<f64> = sel.iter().map(|c| c.seen_accuracy).collect();
                let unseen: Vec<f64> = sel.iter().map(|c| c.unseen_accuracy).collect();
                let (mean_seen, std_seen) = mean_std(&seen);
                let (mean_unseen, std_unseen) = mean_std(&unseen);
                rows.push(RobustnessRow {
                    model: m,
                    rate: r,
                    seen_rate: s,
                    mean_seen,
                    std_seen,
                    mean_unseen,
                    std_unseen,
                });
            }
        }
    }
    RobustnessReport {
        config: cfg.clone(),
        rows,
        cells,
    }
}

/// Accuracy of each model on perturbed graphs over the rate and seen-rate
/// grids, `repetitions` seeds per cell.
pub fn robustness_table_experiment(g: &Graph, cfg: &RobustnessConfig) -> Result<RobustnessReport> {
    if cfg.models.is_empty() || cfg.rates.is_empty() || cfg.seen_rates.is_empty() || cfg.repetitions == 0 {
        return Err(Error::config("robustness grid is empty"));
    }
    let mut cells = Vec::new();
    for (s, r, seed) in robustness_tasks(cfg) {
        cells.extend(robustness_task(g, cfg, s, r, seed)?);
    }
    Ok(summarize_robustness(cfg, cells))
}

/// Pearson correlation of node strengths against the unweighted graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthComparison {
    pub lrs: f64,
    pub random: f64,
}

pub fn strength_comparison(g: &Graph, seed: u64) -> StrengthComparison {
    let base = strength_distribution(g.adjacency());
    let lrs = strength_distribution(&build_global_lrs(g).weights);
    let random = strength_distribution(&random_weighted_control(g, seed));
    StrengthComparison {
        lrs: pearson(&lrs, &base),
        random: pearson(&random, &base),
    }
}

/// Weighting applied to a (possibly perturbed) graph before training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphWeighting {
    Plain,
    Lrs,
    Random,
}

impl GraphWeighting {
    pub const ALL: [GraphWeighting; 3] = [Self::Plain, Self::Lrs, Self::Random];

    pub fn name(self) -> &'static str {
        match self {
            Self::Plain => "g",
            Self::Lrs => "g_lrs",
            Self::Random => "g_random",
        }
    }

    pub fn weights(self, g: &Graph, seed: u64) -> Tensor {
        match self {
            Self::Plain => g.adjacency().clone(),
            Self::Lrs => build_global_lrs(g).weights,
            Self::Random => random_weighted_control(g, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrsRobustnessConfig {
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub attack: AttackSettings,
}

impl Default for LrsRobustnessConfig {
    fn default() -> Self {
        Self {
            rates: vec![0.0, 0.05, 0.1, 0.2],
            seeds: (0..10).collect(),
            train_fraction: 0.2,
            hidden: 16,
            epochs: 200,
            attack: AttackSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrsRobustnessRow {
    pub rate: f64,
    pub weighting: GraphWeighting,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub accuracies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrsRobustnessReport {
    pub config: LrsRobustnessConfig,
    pub rows: Vec<LrsRobustnessRow>,
}

impl LrsRobustnessReport {
    pub fn row(&self, rate: f64, weighting: GraphWeighting) -> Option<&LrsRobustnessRow> {
        self.rows.iter().find(|r| r.rate == rate && r.weighting == weighting)
    }

    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let mut out = String::from(
            "rate,graph,mean_accuracy,std_accuracy,seeds,train_fraction,hidden,epochs,attack,surrogate_hidden,surrogate_epochs,rerank\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                fmt_sig6(r.rate),
                r.weighting.name(),
                fmt_sig6(r.mean_accuracy),
                fmt_sig6(r.std_accuracy),
                join_seeds(&c.seeds),
                fmt_sig6(c.train_fraction),
                c.hidden,
                c.epochs,
                c.attack.kind.name(),
                c.attack.surrogate_hidden,
                c.attack.surrogate_epochs,
                c.attack.greedy.rerank
            ));
        }
        out
    }
}

/// Test accuracy of a 2-layer GCN trained on the perturbed graph in each
/// weighting, one entry per weighting in [`GraphWeighting::ALL`] order.
pub fn lrs_robustness_task(g: &Graph, cfg: &LrsRobustnessConfig, rate: f64, seed: u64) -> Result<Vec<f64>> {
    let split = inductive_split(g, cfg.train_fraction, seed)?;
    let perturbation = cfg.attack.perturb(g, rate, &split.seen, seed)?;
    let attacked = apply_perturbation(g, &perturbation)?;
    let features = g.require_features()?;
    let labels = g.require_labels()?;
    let gc = victim_config(g, 2, cfg.hidden, cfg.epochs, seed)?;
    GraphWeighting::ALL
        .iter()
        .map(|w| {
            let op = gc.operator.apply(&w.weights(&attacked, seed));
            let m = gcn_train_with(&gc, &op, features, labels, &split.seen)?;
            Ok(accuracy(&m.predict_with(&op, features)?, labels, &split.unseen))
        })
        .collect()
}

pub fn summarize_lrs_robustness(cfg: &LrsRobustnessConfig, per_task: &[(f64, Vec<f64>)]) -> LrsRobustnessReport {
    let mut rows = Vec::new();
    for &rate in &cfg.rates {
        for (w_idx, &weighting) in GraphWeighting::ALL.iter().enumerate() {
            let accuracies: Vec<f64> = per_task
                .iter()
                .filter(|(r, _)| *r == rate)
                .map(|(_, accs)| accs[w_idx])
                .collect();
            let (mean_accuracy, std_accuracy) = mean_std(&accuracies);
            rows.push(LrsRobustnessRow {
                rate,
                weighting,
                mean_accuracy,
                std_accuracy,
                accuracies,
            });
        }
    }
    LrsRobustnessReport {
        config: cfg.clone(),
        rows,
    }
}

/// GCN accuracy on the plain, LRS-weighted and randomly weighted versions
/// of each perturbed graph.
pub fn lrs_robustness_experiment(g: &Graph, cfg: &LrsRobustnessConfig) -> Result<LrsRobustnessReport> {
    let mut per_task = Vec::new();
    for &rate in &cfg.rates {
        for &seed in &cfg.seeds {
            per_task.push((rate, lrs_robustness_task(g, cfg, rate, seed)?));
        }
    }
    Ok(summarize_lrs_robustness(cfg, &per_task))
}
