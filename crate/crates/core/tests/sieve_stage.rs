use std::sync::Arc;

use proptest::prelude::*;
use qbcmr_core::basis::*;
use qbcmr_core::model::*;
use qbcmr_core::prior::IllPosedness;
use qbcmr_core::rng;
use qbcmr_core::sieve::*;

fn simulated(name: &str, n: usize, seed: u64) -> (DgpDesign, Arc<Dataset>) {
    let design = design_by_name(name).unwrap();
    let data = simulate_dgp(&design, n, &mut rng::seeded(seed)).unwrap();
    (design, Arc::new(data))
}

fn fit_of(data: &Arc<Dataset>, k: usize) -> Arc<FirstStageFit> {
    Arc::new(first_stage_fit(data.clone(), SieveBasisSpec::cosine(1, k).unwrap()).unwrap())
}

fn all_weights(fit: &Arc<FirstStageFit>, model: &MomentModel, y: &[f64]) -> Vec<WeightFunction> {
    let pilot = fit.second_moment_pilot(&residuals_of(model, y, &vec![0.0; y.len()]));
    let fixed: FixedWeight = Arc::new(|w: &[f64]| nalgebra::DMatrix::from_element(1, 1, 1.0 + w[0] * w[0]));
    vec![
        WeightFunction::Identity,
        WeightFunction::Optimal(Some(pilot)),
        WeightFunction::Fixed(fixed),
        WeightFunction::ContinuouslyUpdated,
    ]
}

#[test]
fn first_stage_recovers_conditional_mean() {
    // Y = g(W) + ε with g in the span of the first five cosines
    let (_, sim) = simulated("mild-npiv", 10_000, 11);
    let g = |w: f64| 0.5 + (std::f64::consts::PI * w).cos() - 0.4 * (3.0 * std::f64::consts::PI * w).cos();
    let mut r = rng::seeded(12);
    let y: Vec<f64> = sim.w().iter().map(|w| g(w[0]) + 0.3 * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut r)).collect();
    let data = Arc::new(Dataset::new(sim.x().clone(), y.clone(), sim.w().clone()).unwrap());
    let fit = fit_of(&data, 5);
    for i in 0..=20 {
        let w = i as f64 / 20.0;
        let m = mhat_from_residuals(&fit, &y, &[w]).unwrap();
        assert!((m - g(w)).abs() < 0.1, "w = {w}: {m} vs {}", g(w));
    }
}

#[test]
fn projection_is_a_contraction() {
    let (_, data) = simulated("mild-npiv-het", 2000, 1);
    let fit = fit_of(&data, 8);
    let mut r = rng::seeded(2);
    for _ in 0..20 {
        let v: Vec<f64> = (0..2000).map(|_| rand::Rng::random::<f64>(&mut r) - 0.5).collect();
        let p = fit.fitted(&v);
        let pp = fit.fitted(p.as_slice());
        let nv: f64 = v.iter().map(|x| x * x).sum();
        assert!(p.norm_squared() <= nv * (1.0 + 1e-12));
        assert!((&pp - &p).norm() < 1e-9 * (1.0 + p.norm()));
    }
}

#[test]
fn objective_is_quadratic_along_lines() {
    let (design, data) = simulated("mild-npiv-het", 1500, 3);
    let fit = fit_of(&data, 6);
    let basis = SieveBasisSpec::cosine(1, 12).unwrap();
    let h = FunctionCoefficients::new(basis.clone(), (0..12).map(|i| 0.3 / (i + 1) as f64).collect()).unwrap();
    let g = FunctionCoefficients::new(basis, (0..12).map(|i| if i % 2 == 0 { 0.2 } else { -0.1 }).collect()).unwrap();
    for wf in all_weights(&fit, &design.model, data.y()).into_iter().take(3) {
        let spec = ObjectiveSpec::new(fit.clone(), design.model, wf).unwrap();
        let q: Vec<f64> = (-2..=2)
            .map(|t| {
                let c: Vec<f64> = h.coeffs().iter().zip(g.coeffs()).map(|(a, b)| a + t as f64 * b).collect();
                quasi_objective(&spec, &FunctionCoefficients::new(h.basis().clone(), c).unwrap()).unwrap()
            })
            .collect();
        let third = q[4] - 2.0 * q[3] + 2.0 * q[1] - q[0];
        let scale = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(third.abs() < 1e-10 * scale.max(1.0), "{}: {third}", spec.weights().mode_name());
        assert!(q[0] - 4.0 * q[1] + 6.0 * q[2] - 4.0 * q[3] + q[4] < 1e-10 * scale.max(1.0));
    }
}

#[test]
fn fast_and_direct_objectives_agree() {
    for name in ["mild-npiv-het", "mild-npqiv", "severe-npiv"] {
        let (design, data) = simulated(name, 800, 5);
        let fit = fit_of(&data, 5);
        let h = design.h0.resized(16).unwrap();
        let rho = residuals_of(&design.model, data.y(), &h_at_data(&data, &h).unwrap());
        let mut weights = all_weights(&fit, &design.model, data.y());
        if !design.model.is_linear() {
            weights.push(WeightFunction::Optimal(None));
        }
        for wf in weights {
            let spec = ObjectiveSpec::new(fit.clone(), design.model, wf).unwrap();
            let fast = spec.objective_from_residuals(&rho);
            let direct = spec.objective_direct(&rho).unwrap();
            assert!((fast - direct).abs() <= 1e-10 * fast.abs().max(1e-300), "{name} {}: {fast} vs {direct}", spec.weights().mode_name());
        }
    }
}

#[test]
fn continuously_updated_equals_fixed_at_its_own_weight() {
    let (design, data) = simulated("mild-npiv-het", 1000, 7);
    let fit = fit_of(&data, 6);
    let h = FunctionCoefficients::new(SieveBasisSpec::cosine(1, 8).unwrap(), vec![0.1, -0.3, 0.2, 0.0, 0.05, 0.0, 0.0, 0.01]).unwrap();
    let rho = residuals_of(&design.model, data.y(), &h_at_data(&data, &h).unwrap());
    let cu = ObjectiveSpec::new(fit.clone(), design.model, WeightFunction::ContinuouslyUpdated).unwrap();
    let fixed = ObjectiveSpec::new(fit.clone(), design.model, WeightFunction::Optimal(Some(fit.second_moment_pilot(&rho)))).unwrap();
    let (a, b) = (quasi_objective(&cu, &h).unwrap(), quasi_objective(&fixed, &h).unwrap());
    assert!((a - b).abs() < 1e-10 * a, "{a} vs {b}");
}

#[test]
fn objective_vanishes_on_noiseless_truth() {
    let (design, data) = simulated("zero-npiv", 500, 9);
    let fit = fit_of(&data, 4);
    let spec = ObjectiveSpec::new(fit, design.model, WeightFunction::Identity).unwrap();
    assert_eq!(quasi_objective(&spec, &design.h0).unwrap(), 0.0);
}

#[test]
fn select_k_monotone_in_n_and_zeta() {
    for zeta in [0.0, 0.5, 1.0, 2.0] {
        let ks: Vec<usize> = (6..=16).map(|p| select_k(1 << p, 1.0, &IllPosedness::Mild { zeta }, 1)).collect();
        assert!(ks.windows(2).all(|w| w[0] <= w[1]), "ζ = {zeta}: {ks:?}");
    }
    for p in 6..=16 {
        let ks: Vec<usize> = [0.0, 0.5, 1.0, 2.0, 4.0].iter().map(|&z| select_k(1 << p, 1.0, &IllPosedness::Mild { zeta: z }, 1)).collect();
        assert!(ks.windows(2).all(|w| w[0] >= w[1]), "n = 2^{p}: {ks:?}");
    }
}

#[test]
fn select_k_severe_grows_logarithmically() {
    let ill = IllPosedness::Severe { r: 1.0, zeta: 1.0 };
    let k20 = select_k(20f64.exp() as usize, 1.0, &ill, 1);
    let k40 = select_k(40f64.exp() as usize, 1.0, &ill, 1);
    assert_eq!((k20, k40), (7, 15));
    let ratio = k40 as f64 / k20 as f64;
    assert!((1.5..=2.5).contains(&ratio));
}

#[test]
fn select_k_reference_value() {
    assert_eq!(select_k(1024, 1.0, &IllPosedness::Mild { zeta: 1.0 }, 1), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn objective_nonnegative(seed in 0u64..1000, k in 1usize..8, shift in -1.0f64..1.0) {
        let (design, data) = simulated("mild-npqiv", 300, seed);
        let fit = fit_of(&data, k);
        let h = FunctionCoefficients::new(SieveBasisSpec::cosine(1, 2).unwrap(), vec![shift, 0.3]).unwrap();
        for wf in all_weights(&fit, &design.model, data.y()) {
            let spec = ObjectiveSpec::new(fit.clone(), design.model, wf).unwrap();
            prop_assert!(quasi_objective(&spec, &h).unwrap() >= 0.0);
        }
    }
}
