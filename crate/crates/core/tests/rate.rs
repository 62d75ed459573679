use qbcmr_core::model::design_by_name;
use qbcmr_core::pipeline::{rate_study, FitConfig, RateStudyConfig, WeightMode};

fn study(name: &str, ns: Vec<usize>, weight: WeightMode) -> qbcmr_core::pipeline::RateStudyResult {
    let cfg = RateStudyConfig {
        design: design_by_name(name).unwrap(),
        ns,
        replications: 20,
        fit: FitConfig { weight, ..Default::default() },
        base_seed: 17,
    };
    rate_study(&cfg).unwrap()
}

#[test]
fn slope_negative_on_mild_designs() {
    for (name, ns, weight) in [
        ("mild-npiv", vec![500, 2000, 8000], WeightMode::Identity),
        ("mild-npiv-het", vec![500, 2000, 8000], WeightMode::Optimal),
        ("mild-npqiv", vec![250, 1000, 4000], WeightMode::Optimal),
    ] {
        let r = study(name, ns, weight);
        assert!(r.slope < 0.0, "{name}: slope {} cells {:?}", r.slope, r.cells);
        assert!(r.theoretical.is_some_and(|t| t < 0.0));
    }
}

#[test]
fn severe_design_error_decreases() {
    let r = study("severe-npiv", vec![500, 2000, 8000], WeightMode::Optimal);
    assert!(r.cells.windows(2).all(|w| w[1].mean_error < w[0].mean_error), "{:?}", r.cells);
    assert!(r.theoretical.is_none());
}
