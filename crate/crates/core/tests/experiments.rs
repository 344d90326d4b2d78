use weighted_fpp::engine::{RunConfig, StopRule};
use weighted_fpp::experiments::{
    run_covering, run_limit_shape, write_report, ExperimentKind, ExperimentSpec, ShapeReference,
};
use weighted_fpp::weights::{AlphaWeightFunction, NormSpec};

fn covering_fraction(alpha: f64) -> f64 {
    let weight = AlphaWeightFunction::norm_power(NormSpec::Euclidean, alpha, 2).unwrap();
    let cfg = RunConfig::new(weight, 21, StopRule::EdgeCount { n: 1 });
    let mut spec = ExperimentSpec::new(ExperimentKind::Covering, cfg, 40);
    spec.radii = vec![6];
    spec.radius_factor = 4.0;
    let report = run_covering(&spec).unwrap();
    assert_eq!(report.per_replicate.len(), 40);
    report.swallow_fraction[0]
}

#[test]
fn covering_gets_harder_as_alpha_grows() {
    let fr: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|&a| covering_fraction(a)).collect();
    println!("swallow fractions {fr:?}");
    assert!(fr[0] >= 0.9, "{fr:?}");
    assert!(fr[0] >= fr[1] && fr[1] >= fr[2], "{fr:?}");
}

#[test]
fn limit_shape_against_mu_hat() {
    let weight = AlphaWeightFunction::constant(0.5, 1.0, 2).unwrap();
    let cfg = RunConfig::new(weight, 4, StopRule::EdgeCount { n: 1 });
    let mut spec = ExperimentSpec::new(ExperimentKind::LimitShape, cfg, 4);
    spec.times = vec![5.0, 20.0];
    spec.bins = 64;
    spec.reference = ShapeReference::MuHat { replicates: 4, time: 60.0 };
    let report = run_limit_shape(&spec).unwrap();
    println!("distances {:?}", report.distances);
    assert_eq!(report.distances.len(), 2);
    assert!(report.distances[1] < report.distances[0], "{:?}", report.distances);

    let dir = tempfile::tempdir().unwrap();
    let (json, csv) = write_report(dir.path(), "shape", &report).unwrap();
    let back: serde_json::Value = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
    assert_eq!(back["times"], serde_json::json!([5.0, 20.0]));
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 3);
}
