use proptest::prelude::*;
use qbcmr_core::basis::*;
use qbcmr_core::inference::*;
use qbcmr_core::model::*;
use qbcmr_core::pipeline::{self, FitConfig, RateStudyConfig, WeightMode};
use qbcmr_core::posterior::{ChainConfig, ChainResult};
use qbcmr_core::quadrature;
use qbcmr_core::rng;
use rand_distr::{Distribution, StandardNormal};

fn chain_of(draws: Vec<Vec<f64>>) -> ChainResult {
    let j = draws[0].len();
    ChainResult {
        basis: SieveBasisSpec::cosine(1, j).unwrap(),
        draws,
        accept_rate: 0.25,
        burn_accept_rate: 0.25,
        ess: vec![],
        ess_functional: None,
        ess_min: 1000.0,
        low_ess: false,
        step_final: 0.1,
        seed: 0,
    }
}

fn e1(j: usize) -> FunctionCoefficients {
    FunctionCoefficients::unit(SieveBasisSpec::cosine(1, j).unwrap(), 1).unwrap()
}

fn normal_draws(m: usize, j: usize, sd: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..m).map(|_| (0..j).map(|_| { let z: f64 = StandardNormal.sample(&mut r); sd * z }).collect::<Vec<f64>>()).collect()
}

fn homoskedastic(strength: f64) -> DgpDesign {
    let mut d = design_by_name("mild-npiv").unwrap();
    d.instrument = Instrument::ReflectedDiffusion { strength, order: 0.5 };
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn interval_equivariance(shift in -5.0f64..5.0, scale in 0.1f64..10.0, seed in 0u64..500) {
        let base = normal_draws(200, 3, 1.0, seed);
        let l = LinearFunctional::from_representer(FunctionCoefficients::new(SieveBasisSpec::cosine(1, 3).unwrap(), vec![1.0, 0.5, -0.25]).unwrap());
        let a = credible_interval(&chain_of(base.clone()), &l, 0.1).unwrap();
        let moved: Vec<Vec<f64>> = base.iter().map(|d| vec![scale * d[0] + shift, scale * d[1], scale * d[2]]).collect();
        let b = credible_interval(&chain_of(moved), &l, 0.1).unwrap();
        prop_assert!((b.center - (scale * a.center + shift)).abs() < 1e-9 * (1.0 + b.center.abs()));
        prop_assert!((b.radius - scale * a.radius).abs() < 1e-9 * (1.0 + b.radius));
    }

    #[test]
    fn radius_shrinks_as_gamma_grows(seed in 0u64..500, g1 in 0.01f64..0.98, dg in 0.001f64..0.5) {
        let g2 = (g1 + dg).min(0.99);
        let chain = chain_of(normal_draws(100, 2, 1.0, seed));
        let l = LinearFunctional::from_representer(e1(2));
        let a = credible_interval(&chain, &l, g1).unwrap();
        let b = credible_interval(&chain, &l, g2).unwrap();
        prop_assert!(b.radius <= a.radius);
    }
}

#[test]
fn gaussian_draws_give_normal_quantile() {
    let sigma = 0.37;
    let chain = chain_of(normal_draws(200_000, 1, sigma, 8));
    let ci = credible_interval(&chain, &LinearFunctional::from_representer(e1(1)), 0.1).unwrap();
    assert!((ci.radius / (1.644_853_6 * sigma) - 1.0).abs() < 0.02, "{}", ci.radius);
}

#[test]
fn too_few_draws_rejected() {
    let chain = chain_of(normal_draws(MIN_DRAWS - 1, 1, 1.0, 1));
    assert!(credible_interval(&chain, &LinearFunctional::from_representer(e1(1)), 0.1).is_err());
}

#[test]
fn density_gram_matches_nested_quadrature() {
    let basis = SieveBasisSpec::cosine(2, 6).unwrap();
    let f = |x: &[f64]| 0.5 + x[0] * (1.0 + x[1]) * 2.0 / 3.0;
    let m = density_gram(&basis, f, 8);
    let rule = quadrature::composite(0.0, 1.0, 8, 16);
    for a in 1..=6 {
        for b in 1..=6 {
            let v = rule.integrate(|x| {
                rule.integrate(|y| {
                    let p = [x, y];
                    eval_basis(&basis, a, &p).unwrap() * eval_basis(&basis, b, &p).unwrap() * f(&p)
                })
            });
            assert!((m[(a - 1, b - 1)] - v).abs() < 1e-10, "({a},{b}) {} vs {v}", m[(a - 1, b - 1)]);
        }
    }
    let uniform = density_gram(&basis, |_| 1.0, 4);
    assert!((uniform - nalgebra::DMatrix::<f64>::identity(6, 6)).amax() < 1e-10);
}

#[test]
fn density_gram_enters_the_functional() {
    let basis = SieveBasisSpec::cosine(1, 4).unwrap();
    let gram = density_gram(&basis, |x| 2.0 * x[0], 8);
    let l = LinearFunctional::from_representer(FunctionCoefficients::unit(basis.clone(), 1).unwrap()).with_density_gram(gram).unwrap();
    // ∫ h(x) 2x dx with h = √2 cos(πx) equals -4√2/π²
    let h = FunctionCoefficients::unit(basis, 2).unwrap();
    let v = functional_value(&l, &h).unwrap();
    assert!((v + 4.0 * 2f64.sqrt() / std::f64::consts::PI.powi(2)).abs() < 1e-10);
}

#[test]
fn zero_phitilde_gives_zero_functional() {
    let design = design_by_name("mild-npiv-het").unwrap();
    let zero = FunctionCoefficients::zero(SieveBasisSpec::cosine(1, 16).unwrap());
    for w in [OperatorWeight::Identity, OperatorWeight::Optimal] {
        let l = construct_functional_from_phitilde(&design, &zero, w).unwrap();
        assert!(l.phi.coeffs().iter().all(|v| *v == 0.0));
        let v = asymptotic_variance_oracle(&design, &l, w).unwrap();
        assert_eq!((v.posterior_spread, v.sampling), (0.0, 0.0));
    }
}

#[test]
fn weak_instrument_collapses_to_constant() {
    let design = homoskedastic(1e-14);
    let pt = FunctionCoefficients::new(SieveBasisSpec::cosine(1, 8).unwrap(), vec![0.7, 1.0, -0.5, 0.3, 0.0, 0.1, 0.0, 0.2]).unwrap();
    let l = construct_functional_from_phitilde(&design, &pt, OperatorWeight::Identity).unwrap();
    assert!((l.phi.coeffs()[0] - 0.7).abs() < 1e-9);
    assert!(l.phi.coeffs()[1..].iter().all(|v| v.abs() < 1e-5), "{:?}", l.phi.coeffs());
}

#[test]
fn diffusion_round_trip_closed_form() {
    let design = homoskedastic(0.9);
    let pt = FunctionCoefficients::new(SieveBasisSpec::cosine(1, 10).unwrap(), (0..10).map(|i| 1.0 / (i + 1) as f64).collect()).unwrap();
    let l = construct_functional_from_phitilde(&design, &pt, OperatorWeight::Identity).unwrap();
    for (i, (phi, t)) in l.phi.coeffs().iter().zip(pt.coeffs()).enumerate() {
        let tau = Instrument::diffusion_multiplier(0.9, 0.5, i);
        assert!((phi - tau * tau * t).abs() < 1e-10, "{i}: {phi} vs {}", tau * tau * t);
    }
}

#[test]
fn variance_oracle_optimal_weight_is_efficient() {
    let design = design_by_name("mild-npiv-het").unwrap();
    let pt = e1(64);
    let opt = construct_functional_from_phitilde(&design, &pt, OperatorWeight::Optimal).unwrap();
    let v = asymptotic_variance_oracle(&design, &opt, OperatorWeight::Optimal).unwrap();
    assert!((v.posterior_spread - v.sampling).abs() < 1e-8 * v.sampling);
    let id = construct_functional_from_phitilde(&design, &pt, OperatorWeight::Identity).unwrap();
    let v = asymptotic_variance_oracle(&design, &id, OperatorWeight::Identity).unwrap();
    assert!((v.sampling - v.posterior_spread).abs() > 0.05 * v.posterior_spread, "{v:?}");
}

#[test]
fn variance_oracle_identity_matches_under_unit_homoskedastic_noise() {
    let mut design = homoskedastic(0.9);
    design.noise_sd = 1.0;
    let pt = FunctionCoefficients::new(SieveBasisSpec::cosine(1, 6).unwrap(), vec![0.5, 1.0, 0.0, -0.2, 0.0, 0.0]).unwrap();
    let l = construct_functional_from_phitilde(&design, &pt, OperatorWeight::Identity).unwrap();
    let v = asymptotic_variance_oracle(&design, &l, OperatorWeight::Identity).unwrap();
    assert!((v.posterior_spread - v.sampling).abs() < 1e-8 * v.sampling, "{v:?}");
}

#[test]
fn posterior_spread_matches_oracle() {
    let design = design_by_name("mild-npiv-het").unwrap();
    let n = 2000;
    let l = construct_functional_from_phitilde(&design, &e1(64), OperatorWeight::Optimal).unwrap();
    let oracle = asymptotic_variance_oracle(&design, &l, OperatorWeight::Optimal).unwrap().posterior_spread;
    let cfg = FitConfig::default();
    let mut total = 0.0;
    for seed in 0..20u64 {
        let fit = pipeline::replicate(&design, n, &cfg, Some(l.phi.coeffs()), 900 + seed).unwrap();
        let v: Vec<f64> = fit.chain.draws.iter().map(|d| l.apply(d)).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        total += n as f64 * v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    }
    let spread = total / 20.0;
    assert!((spread / oracle - 1.0).abs() < 0.25, "n·var = {spread}, oracle {oracle}");
}

#[test]
fn single_replication_coverage() {
    let cfg = CoverageConfig {
        design: design_by_name("mild-npiv").unwrap(),
        n: 300,
        replications: 1,
        gamma: 0.1,
        phi_tilde: e1(64),
        fit: FitConfig { chain: ChainConfig { iters: 4000, burn: 1000, ..Default::default() }, ..Default::default() },
        base_seed: 5,
    };
    let a = coverage_study(&cfg).unwrap();
    assert!(a.coverage == 0.0 || a.coverage == 1.0);
    assert_eq!(a.records.len(), 1);
    let b = coverage_study(&cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn coverage_rejects_zero_replications() {
    let cfg = CoverageConfig {
        design: design_by_name("mild-npiv").unwrap(),
        n: 300,
        replications: 0,
        gamma: 0.1,
        phi_tilde: e1(64),
        fit: FitConfig::default(),
        base_seed: 5,
    };
    assert!(coverage_study(&cfg).is_err());
}

#[test]
fn rate_on_noiseless_design() {
    let design = design_by_name("zero-npiv").unwrap();
    let cfg = RateStudyConfig {
        design: design.clone(),
        ns: vec![200, 3200, 51200],
        replications: 8,
        fit: FitConfig { weight: WeightMode::Identity, ..Default::default() },
        base_seed: 3,
    };
    let r = pipeline::rate_study(&cfg).unwrap();
    assert_eq!(r.records.len(), 24);
    assert!(r.records.iter().all(|x| x.error > 0.0 && x.error < 0.01), "{:?}", r.cells);
    // the chain error is Monte Carlo noise around an exact mean of zero; the
    // posterior spread itself contracts
    let spread: Vec<f64> = cfg
        .ns
        .iter()
        .map(|&n| {
            let fit = pipeline::replicate(&design, n, &cfg.fit, None, 1).unwrap();
            let exact = qbcmr_core::posterior::exact_gaussian_posterior(&fit.spec).unwrap();
            assert!(exact.mean.iter().all(|v| *v == 0.0));
            exact.covariance.trace()
        })
        .collect();
    assert!(spread.windows(2).all(|w| w[1] < w[0]), "{spread:?}");
}
