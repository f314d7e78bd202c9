use diffdesign::diffusion::*;
use diffdesign::energy::{Energy, QuadraticEnergy};
use diffdesign::guidance::*;
use diffdesign::seeds::SeedStream;
use diffdesign::Error;
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn zero_lambda_leaves_eps_untouched() {
    let eps = [0.3, -1.2, 0.05];
    let g = [4.0, 1.0, -2.0];
    for v in [Variant::Linear, Variant::LinearUnit, Variant::LinearNorm] {
        assert_eq!(combine(&eps, &g, v, 0.0), eps.to_vec());
    }
}

#[test]
fn linear_unit_example() {
    let out = combine(&[1.0, 0.0], &[3.0, 4.0], Variant::LinearUnit, 0.5);
    assert!((out[0] - 1.3).abs() < 1e-12 && (out[1] - 0.4).abs() < 1e-12);
    let scaled = combine(&[1.0, 0.0], &[30.0, 40.0], Variant::LinearUnit, 0.5);
    assert!((scaled[0] - 1.3).abs() < 1e-12 && (scaled[1] - 0.4).abs() < 1e-12);
}

#[test]
fn linear_and_cvx_arithmetic() {
    assert_eq!(combine(&[1.0, 2.0], &[0.5, -1.0], Variant::Linear, 2.0), vec![2.0, 0.0]);
    assert_eq!(combine(&[1.0, 2.0], &[3.0, -2.0], Variant::Cvx, 0.25), vec![1.5, 1.0]);
    assert_eq!(combine(&[1.0, 2.0], &[3.0, -2.0], Variant::Cvx, 1.0), vec![3.0, -2.0]);
}

#[test]
fn normalized_variants_fall_back_on_zero_gradient() {
    let eps = [0.7, -0.1];
    assert_eq!(combine(&eps, &[0.0, 0.0], Variant::LinearUnit, 3.0), eps.to_vec());
    assert_eq!(combine(&eps, &[0.0, 0.0], Variant::LinearNorm, 3.0), eps.to_vec());
}

proptest! {
    #[test]
    fn linear_norm_moves_by_lambda_eps_norm(
        eps in proptest::collection::vec(-3.0f64..3.0, 4),
        g in proptest::collection::vec(-3.0f64..3.0, 4),
        lambda in 0.0f64..10.0,
    ) {
        prop_assume!(norm(&g) > 1e-6);
        let out = combine(&eps, &g, Variant::LinearNorm, lambda);
        let step: Vec<f64> = out.iter().zip(&eps).map(|(a, b)| a - b).collect();
        prop_assert!((norm(&step) - lambda * norm(&eps)).abs() <= 1e-9 * (1.0 + lambda * norm(&eps)));
        prop_assert!(norm(&out) <= (1.0 + lambda) * norm(&eps) * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn cfg_cancels_when_branches_agree(e in proptest::collection::vec(-3.0f64..3.0, 3), lambda in 0.0f64..10.0) {
        let out = cfg_combine(&e, &e, lambda);
        for (a, b) in out.iter().zip(&e) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + lambda));
        }
    }
}

#[test]
fn cfg_scalar_example() {
    let out = cfg_combine(&[0.2], &[0.1], 1.0);
    assert!((out[0] - 0.3).abs() < 1e-15);
    assert_eq!(cfg_combine(&[0.2], &[0.1], 0.0), vec![0.2]);
}

fn conditional_net() -> Mlp {
    let mut rng = SeedStream::new(12).rng("net", 0);
    Mlp::init(MlpConfig { hidden: 16, hidden_layers: 2, ..MlpConfig::new(3, true) }, &mut rng).unwrap()
}

#[test]
fn cfg_with_zero_lambda_is_the_conditional_network() {
    let net = conditional_net();
    let cond = Conditioning::new([0.5, 0.2], 0.0).unwrap();
    let mut rng = SeedStream::new(1).rng("x", 0);
    let x = standard_normal(9, &mut rng);
    assert_eq!(cfg_eps(&net, &x, 0.3, cond, 0.0).unwrap(), net.predict(&x, 0.3, Some(cond)).unwrap());
}

#[test]
fn cfg_matches_its_formula_on_a_network() {
    let net = conditional_net();
    let cond = Conditioning::new([0.45, 0.25], 0.1).unwrap();
    let mut rng = SeedStream::new(2).rng("x", 0);
    let x = standard_normal(6, &mut rng);
    let c = net.predict(&x, 0.6, Some(cond)).unwrap();
    let u = net.predict(&x, 0.6, None).unwrap();
    let out = cfg_eps(&net, &x, 0.6, cond, 2.5).unwrap();
    for i in 0..6 {
        assert!((out[i] - (3.5 * c[i] - 2.5 * u[i])).abs() < 1e-12);
    }
}

#[test]
fn config_validation() {
    assert!(GuidanceConfig::energy(-0.1, Variant::Linear).validate().is_err());
    assert!(GuidanceConfig::energy(1.5, Variant::Cvx).validate().is_err());
    assert!(GuidanceConfig::energy(1.0, Variant::Cvx).validate().is_ok());
    assert!(GuidanceConfig { tau: 0.0, ..GuidanceConfig::energy(0.5, Variant::Linear) }.validate().is_err());
    let missing = GuidanceConfig { mode: GuidanceMode::Conditional, ..GuidanceConfig::default() };
    assert!(missing.validate().is_err());
}

fn bowl_setup() -> (StandardNormalDenoiser, QuadraticEnergy, NoiseSchedule) {
    let s = NoiseSchedule::default();
    (StandardNormalDenoiser { dim: 2, schedule: s }, QuadraticEnergy::new(vec![1.5, -0.5]), s)
}

#[test]
fn guided_eps_follows_the_formula() {
    let (den, energy, s) = bowl_setup();
    let cfg = GuidanceConfig { tau: 0.5, ..GuidanceConfig::energy(0.3, Variant::Linear) };
    let x = [0.4, 0.9];
    let t = 0.4;
    let eps = den.predict(&x, t).unwrap();
    let out = energy_guided_eps(&den, &energy, &s, &cfg, &x, t, &eps).unwrap();
    let a = s.alpha(t).unwrap();
    let x_hat = estimate_x0(&s, &x, t, &eps).unwrap();
    for i in 0..2 {
        let g = (1.0 - a).sqrt() * 2.0 * (x_hat[i] - energy.center[i]) / 0.5;
        assert!((out[i] - (eps[i] + 0.3 * g)).abs() < 1e-12);
    }
}

#[test]
fn full_jacobian_pulls_back_through_the_estimate() {
    let (den, energy, s) = bowl_setup();
    let cheap = GuidanceConfig::energy(1.0, Variant::Linear);
    let full = GuidanceConfig { full_jacobian: true, ..cheap.clone() };
    let x = [0.4, 0.9];
    let t = 0.5;
    let eps = den.predict(&x, t).unwrap();
    let a = s.alpha(t).unwrap();
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let c = energy_guided_eps(&den, &energy, &s, &cheap, &x, t, &eps).unwrap();
    let f = energy_guided_eps(&den, &energy, &s, &full, &x, t, &eps).unwrap();
    // for eps = sn x, d x_hat / d x = (1 - sn^2) / sa = sa
    for i in 0..2 {
        let g_cheap = (c[i] - eps[i]) * cheap.tau / sn;
        let g_full = (f[i] - eps[i]) * cheap.tau / sn;
        assert!((g_full - sa * g_cheap).abs() < 1e-10, "{g_full} vs {}", sa * g_cheap);
    }
}

#[test]
fn energy_guided_sampling_spends_one_gradient_per_step_and_chain() {
    let (den, energy, s) = bowl_setup();
    let guided = EnergyGuided::new(&den, &energy, s, GuidanceConfig::energy(0.5, Variant::LinearUnit)).unwrap();
    let mut rng = SeedStream::new(3).rng("x1", 0);
    let x1 = standard_normal(2 * 5, &mut rng);
    let before = energy.evaluations();
    ode_sample(&guided, &s, 20, &x1).unwrap();
    assert_eq!(energy.evaluations() - before, 20 * 5);
}

#[test]
fn zero_lambda_guidance_is_bit_identical_to_plain_sampling() {
    let (den, energy, s) = bowl_setup();
    let mut rng = SeedStream::new(4).rng("x1", 0);
    let x1 = standard_normal(2 * 8, &mut rng);
    let plain = ode_sample(&den, &s, 30, &x1).unwrap();
    for v in [Variant::Linear, Variant::LinearUnit, Variant::LinearNorm] {
        let guided = EnergyGuided::new(&den, &energy, s, GuidanceConfig::energy(0.0, v)).unwrap();
        assert_eq!(ode_sample(&guided, &s, 30, &x1).unwrap(), plain, "{}", v.as_str());
    }
}

#[test]
fn guidance_pulls_samples_toward_low_energy() {
    let (den, energy, s) = bowl_setup();
    let mut rng = SeedStream::new(5).rng("x1", 0);
    let x1 = standard_normal(2 * 200, &mut rng);
    let mean_cost = |x: &[f64]| x.chunks(2).map(|r| energy.cost(r).unwrap()).sum::<f64>() / 200.0;
    let plain = mean_cost(&ode_sample(&den, &s, 30, &x1).unwrap());
    let guided = EnergyGuided::new(&den, &energy, s, GuidanceConfig::energy(1.0, Variant::LinearNorm)).unwrap();
    let pulled = mean_cost(&ode_sample(&guided, &s, 30, &x1).unwrap());
    assert!(pulled < plain, "{pulled} vs {plain}");
    assert!(guided.max_norm_ratio() <= 2.0 + 1e-12);
}

#[test]
fn guidance_does_not_touch_network_weights() {
    let net = conditional_net();
    let before = net.params.clone();
    let energy = QuadraticEnergy::new(vec![0.0; 3]);
    let s = NoiseSchedule::default();
    let den = net.with_conditioning(None);
    let guided = EnergyGuided::new(&den, &energy, s, GuidanceConfig::energy(1.0, Variant::Linear)).unwrap();
    let mut rng = SeedStream::new(6).rng("x1", 0);
    ode_sample(&guided, &s, 5, &standard_normal(6, &mut rng)).unwrap();
    assert_eq!(net.params, before);
}

#[test]
fn classifier_free_denoiser_with_zero_lambda_is_conditional_only() {
    let net = conditional_net();
    let s = NoiseSchedule::default();
    let cond = Conditioning::new([0.3, 0.7], 0.0).unwrap();
    let mut rng = SeedStream::new(7).rng("x1", 0);
    let x1 = standard_normal(12, &mut rng);
    let a = ode_sample(&ClassifierFree { net: &net, cond, lambda: 0.0 }, &s, 25, &x1).unwrap();
    let b = ode_sample(&net.with_conditioning(Some(cond)), &s, 25, &x1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn energy_guided_rejects_invalid_config() {
    let (den, energy, s) = bowl_setup();
    assert!(matches!(
        EnergyGuided::new(&den, &energy, s, GuidanceConfig::energy(2.0, Variant::Cvx)),
        Err(Error::Config(_))
    ));
}
