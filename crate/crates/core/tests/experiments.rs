use resonant_gnn::attackbench::{robustness_table_experiment, ModelSpec, RobustnessConfig};
use resonant_gnn::graphcore::{gen_sbm, SbmConfig};
use resonant_gnn::grn::GrnVariant;

#[test]
fn more_supervision_does_not_hurt_grn_on_clean_graph() {
    let mut sbm = SbmConfig::new(vec![50, 50], 0.2, 0.02, 0);
    sbm.feature_noise = 1.0;
    let g = gen_sbm(&sbm).unwrap();
    let model = ModelSpec::Grn(GrnVariant::EZ);
    let cfg = RobustnessConfig {
        models: vec![model],
        rates: vec![0.0],
        seen_rates: vec![0.2, 0.6],
        ..Default::default()
    };
    let report = robustness_table_experiment(&g, &cfg).unwrap();
    let low = report.row(model, 0.0, 0.2).unwrap().mean_unseen;
    let high = report.row(model, 0.0, 0.6).unwrap().mean_unseen;
    assert!(high >= low, "s_r 0.6: {high}, s_r 0.2: {low}");
}
