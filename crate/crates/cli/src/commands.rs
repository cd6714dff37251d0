use anyhow::{bail, Result};
use rayon::prelude::*;
use serde_json::json;

use resonant_gnn::attackbench::{
    asr_seed_results, cost_bound, evaluate_attack, robustness_task, robustness_tasks, strength_comparison,
    summarize_asr, summarize_robustness, victim_config, AsrExperimentConfig, AttackSettings, GreedySettings,
    ModelSpec, RobustnessConfig,
};
use resonant_gnn::gcn::{accuracy, gcn_train, predict, GcnConfig};
use resonant_gnn::graphcore::{apply_perturbation, node_stats, write_edge_list};
use resonant_gnn::grn::{
    embedding_csv, grn_evaluate, grn_forward, grn_train_inductive, inductive_split, unsupervised_loss, GrnConfig,
};
use resonant_gnn::lrs::{build_global_lrs, extract_lrs, random_weighted_control, weighted_csv};
use resonant_gnn::report::fmt_sig6;
use resonant_gnn::resonance::{run_resonance_experiment, ResonanceExperimentConfig};

use crate::args::*;
use crate::config::{load_dataset, Run};

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?)
}

fn attack_settings(a: &AttackerArgs) -> Result<AttackSettings> {
    Ok(AttackSettings {
        kind: a.attack.parse()?,
        surrogate_hidden: a.surrogate_hidden,
        surrogate_epochs: a.surrogate_epochs,
        greedy: GreedySettings { rerank: a.rerank },
    })
}

fn losses_csv(losses: impl IntoIterator<Item = f64>) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in losses.into_iter().enumerate() {
        out.push_str(&format!("{e},{}\n", fmt_sig6(l)));
    }
    out
}

pub fn train_gcn(a: &TrainGcnArgs) -> Result<()> {
    let g = load_dataset(&a.data)?;
    let d = g.require_features()?.cols();
    let c = g.require_labels()?.classes();
    let mut dims = vec![d];
    dims.extend(std::iter::repeat_n(a.hidden, a.depth.saturating_sub(1)));
    dims.push(c);
    let mut cfg = match a.preset.as_str() {
        "classification" => GcnConfig::classification(dims, a.epochs, a.seed),
        "diagnostic" => GcnConfig::diagnostic(dims, a.epochs, a.seed),
        other => bail!("unknown preset `{other}`; expected classification or diagnostic"),
    };
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    let split = inductive_split(&g, a.train_fraction, a.seed)?;
    let model = gcn_train(&cfg, &g, &split.seen)?;
    let preds = predict(&model, &g)?;
    let labels = g.require_labels()?;

    let mut run = Run::start(&a.run.out, "train-gcn", a)?;
    run.seeds([a.seed, a.data.graph_seed]);
    model.save(&run.path("model.ckpt"))?;
    let mut csv = String::from("node,prediction,label,train\n");
    for (i, p) in preds.iter().enumerate() {
        let label = labels.get(i).map(|l| l.to_string()).unwrap_or_default();
        csv.push_str(&format!("{i},{p},{label},{}\n", split.seen.contains(i) as u8));
    }
    run.write("predictions.csv", &csv)?;
    run.write("losses.csv", &losses_csv(model.trace.iter().map(|r| r.loss)))?;
    let metrics = json!({
        "train_accuracy": accuracy(&preds, labels, &split.seen),
        "test_accuracy": accuracy(&preds, labels, &split.unseen),
        "final_loss": model.trace.last().map(|r| r.loss),
        "warnings": model.warnings,
        "split_warnings": split.warnings,
    });
    println!("test accuracy {}", fmt_sig6(metrics["test_accuracy"].as_f64().unwrap_or(0.0)));
    run.write_json("metrics.json", &metrics)?;
    run.finish()?;
    Ok(())
}

pub fn train_grn(a: &TrainGrnArgs) -> Result<()> {
    let g = load_dataset(&a.data)?;
    let d = g.require_features()?.cols();
    let c = g.require_labels()?.classes();
    let mut cfg = GrnConfig::new(d, a.hidden, c, a.seed);
    cfg.dims = vec![d];
    cfg.dims.extend(std::iter::repeat_n(a.hidden, a.depth.saturating_sub(1)));
    cfg.dims.push(c);
    cfg.variant = a.variant.parse()?;
    cfg.anchoring = a.anchoring.parse()?;
    cfg.epochs = a.epochs;
    cfg.learning_rate = a.lr;
    cfg.grad_clip = (a.grad_clip > 0.0).then_some(a.grad_clip);
    cfg.seen_rate = a.seen_rate;
    cfg.validate()?;
    let (model, split) = grn_train_inductive(&cfg, &g)?;

    let mut run = Run::start(&a.run.out, "train-grn", a)?;
    run.seeds([a.seed, a.data.graph_seed]);
    model.save(&run.path("model.ckpt"))?;
    run.write("embeddings.csv", &embedding_csv(&grn_forward(&model, &g)?))?;
    run.write("losses.csv", &losses_csv(model.losses.iter().copied()))?;
    let unseen = if split.unseen.count() > 0 {
        Some(grn_evaluate(&model, &g, &split.unseen)?)
    } else {
        None
    };
    let metrics = json!({
        "seen_accuracy": grn_evaluate(&model, &g, &split.seen)?,
        "unseen_accuracy": unseen,
        "unsupervised_loss": unsupervised_loss(&model, &g).ok(),
        "final_loss": model.losses.last(),
        "warnings": model.warnings,
        "split_warnings": split.warnings,
    });
    if let Some(u) = unseen {
        println!("unseen accuracy {}", fmt_sig6(u));
    }
    run.write_json("metrics.json", &metrics)?;
    run.finish()?;
    Ok(())
}

pub fn diag_resonance(a: &DiagResonanceArgs) -> Result<()> {
    let g = load_dataset(&a.data)?;
    let d = g.require_features()?.cols();
    let c = g.require_labels()?.classes();
    let mut cfg = ResonanceExperimentConfig::standard(d, a.hidden, c, a.depth, a.epochs, a.seed);
    if let Some(lr) = a.lr {
        cfg.gcn.learning_rate = lr;
    }
    cfg.ks = a.ks.clone();
    cfg.gaps = a.gaps.clone();
    cfg.final_fraction = a.final_fraction;
    let report = run_resonance_experiment(&cfg, &g)?;

    let mut run = Run::start(&a.run.out, "diag-resonance", a)?;
    run.seeds([a.seed, a.data.graph_seed]);
    run.write("resonance.csv", &report.to_csv())?;
    run.write_json("summary.json", &report.summary)?;
    for s in &report.summary {
        println!("k={} k_gap={} final mean d {}", s.k, s.k_gap, fmt_sig6(s.final_mean));
    }
    run.finish()?;
    Ok(())
}

pub fn extract_lrs_cmd(a: &ExtractLrsArgs) -> Result<()> {
    let g = load_dataset(&a.data)?;
    let global = build_global_lrs(&g);
    let strengths = strength_comparison(&g, a.seed);

    let mut run = Run::start(&a.run.out, "extract-lrs", a)?;
    run.seeds([a.seed, a.data.graph_seed]);
    run.write("lrs_global.csv", &weighted_csv(&global.weights))?;
    run.write("lrs_random.csv", &weighted_csv(&random_weighted_control(&g, a.seed)))?;
    if let Some(node) = a.node {
        if node >= g.n() {
            bail!("node {node} out of range for a graph with {} nodes", g.n());
        }
        let lrs = extract_lrs(&g, &node_stats(&g), node);
        let mut csv = String::from("u,v,w\n");
        for ((u, v), w) in lrs.weights() {
            csv.push_str(&format!("{u},{v},{}\n", fmt_sig6(w)));
        }
        run.write(&format!("lrs_node_{node}.csv"), &csv)?;
        println!("node {node}: {} nodes, {} weighted edges", lrs.nodes.len(), lrs.weights().len());
    }
    run.write_json(
        "strength.json",
        &json!({
            "corr_lrs": strengths.lrs,
            "corr_random": strengths.random,
            "raw_min": global.raw_min,
            "raw_max": global.raw_max,
        }),
    )?;
    println!(
        "strength correlation with G: LRS {} random {}",
        fmt_sig6(strengths.lrs),
        fmt_sig6(strengths.random)
    );
    run.finish()?;
    Ok(())
}

pub fn attack(a: &AttackArgs) -> Result<()> {
    let g = load_dataset(&a.data)?;
    let settings = attack_settings(&a.attacker)?;
    let split = inductive_split(&g, a.train_fraction, a.seed)?;
    let perturbation = settings.perturb(&g, a.rate, &split.seen, a.seed)?;
    let victim = victim_config(&g, a.depth, a.hidden, a.epochs, a.seed)?;
    let result = evaluate_attack(&g, &perturbation, &victim, &split.seen, &split.unseen, &settings)?;

    let mut run = Run::start(&a.run.out, "attack", a)?;
    run.seeds([a.seed, a.data.graph_seed]);
    let mut csv = String::from("u,v,action\n");
    for &(u, v) in perturbation.flips() {
        let action = if g.has_edge(u, v) { "delete" } else { "insert" };
        csv.push_str(&format!("{u},{v},{action}\n"));
    }
    run.write("perturbation.csv", &csv)?;
    write_edge_list(&apply_perturbation(&g, &perturbation)?, &run.path("attacked_edges.txt"))?;
    run.write_json("result.json", &result)?;
    println!(
        "{} flips; clean accuracy {} attacked {} ASR {}",
        perturbation.len(),
        fmt_sig6(result.clean_accuracy),
        fmt_sig6(result.attacked_accuracy),
        fmt_sig6(result.asr)
    );
    run.finish()?;
    Ok(())
}

pub fn asr_sweep(a: &AsrSweepArgs) -> Result<()> {
    let g = load_dataset(&a.data)?;
    let cfg = AsrExperimentConfig {
        depths: a.depths.clone(),
        seeds: a.seeds.clone(),
        rate: a.rate,
        train_fraction: a.train_fraction,
        hidden: a.hidden,
        victim_epochs: a.epochs,
        attack: attack_settings(&a.attacker)?,
    };
    if cfg.depths.is_empty() || cfg.seeds.is_empty() {
        bail!("asr-sweep needs at least one depth and one seed");
    }
    let per_seed = pool(a.run.threads)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| asr_seed_results(&g, &cfg, s))
            .collect::<resonant_gnn::Result<Vec<_>>>()
    })?;
    let report = summarize_asr(&cfg, per_seed);

    let mut run = Run::start(&a.run.out, "asr-sweep", a)?;
    run.seeds(a.seeds.iter().copied().chain([a.data.graph_seed]));
    run.write("asr.csv", &report.to_csv())?;
    run.write_json("asr.json", &report)?;
    for r in &report.rows {
        println!("depth {} mean ASR {}", r.depth, fmt_sig6(r.mean_asr));
    }
    run.finish()?;
    Ok(())
}

pub fn cost_bound_cmd(a: &CostBoundArgs) -> Result<()> {
    let (Some(n), Some(r), Some(k)) = (a.n, a.r, a.k) else {
        bail!("cost-bound needs --n, --r and --k");
    };
    let bound = cost_bound(n, r, k)?;
    if let Some(w) = &bound.warning {
        eprintln!("warning: {w}");
    }
    println!("{}", bound.bound);
    if let Some(out) = &a.out {
        let mut run = Run::start(out, "cost-bound", a)?;
        run.write_json("cost_bound.json", &bound)?;
        run.finish()?;
    }
    Ok(())
}

pub fn robustness_table(a: &RobustnessArgs) -> Result<()> {
    let g = load_dataset(&a.data)?;
    let cfg = RobustnessConfig {
        models: a.models.iter().map(|m| m.parse()).collect::<resonant_gnn::Result<Vec<ModelSpec>>>()?,
        rates: a.rates.clone(),
        seen_rates: a.seen_rates.clone(),
        repetitions: a.repetitions,
        base_seed: a.base_seed,
        hidden: a.hidden,
        gcn_epochs: a.gcn_epochs,
        grn_epochs: a.grn_epochs,
        grn_learning_rate: a.grn_lr,
        attack: attack_settings(&a.attacker)?,
    };
    if cfg.models.is_empty() || cfg.rates.is_empty() || cfg.seen_rates.is_empty() || cfg.repetitions == 0 {
        bail!("robustness grid is empty");
    }
    let tasks = robustness_tasks(&cfg);
    let cells = pool(a.run.threads)?.install(|| {
        tasks
            .par_iter()
            .map(|&(s, r, seed)| robustness_task(&g, &cfg, s, r, seed))
            .collect::<resonant_gnn::Result<Vec<_>>>()
    })?;
    let report = summarize_robustness(&cfg, cells.into_iter().flatten().collect());

    let mut run = Run::start(&a.run.out, "robustness-table", a)?;
    run.seeds((0..a.repetitions as u64).map(|r| a.base_seed + r).chain([a.data.graph_seed]));
    run.write("robustness.csv", &report.to_csv())?;
    run.write_json("robustness.json", &report)?;
    for r in &report.rows {
        println!(
            "{} p_r={} s_r={} unseen {} ± {}",
            r.model.name(),
            r.rate,
            r.seen_rate,
            fmt_sig6(r.mean_unseen),
            fmt_sig6(r.std_unseen)
        );
    }
    run.finish()?;
    Ok(())
}
