use diffdesign::diffusion::*;
use diffdesign::seeds::SeedStream;
use diffdesign::Error;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

fn sched() -> NoiseSchedule {
    NoiseSchedule::default()
}

#[test]
fn alpha_endpoints_and_midpoint() {
    let s = sched();
    assert_eq!(s.alpha(0.0).unwrap(), 1.0);
    assert!((s.alpha(1.0).unwrap() - (-10.05f64).exp()).abs() <= 1e-12);
    assert!((s.alpha(0.5).unwrap() - (-2.5375f64).exp()).abs() <= 1e-12);
    assert!((s.alpha(0.5).unwrap() - 0.0791).abs() < 5e-5);
    assert!(s.alpha(1.0).unwrap() <= 1e-4);
}

#[test]
fn time_outside_unit_interval_is_rejected() {
    let s = sched();
    assert!(matches!(s.alpha(-0.01), Err(Error::TimeOutOfRange(_))));
    assert!(matches!(s.alpha(1.5), Err(Error::TimeOutOfRange(_))));
    assert!(s.sigma_bar(2.0).is_err());
}

#[test]
fn sigma_bar_is_noise_to_signal_ratio() {
    let s = sched();
    for t in [0.1, 0.4, 0.9] {
        let a = s.alpha(t).unwrap();
        let expected = ((1.0 - a) / a).sqrt();
        assert!((s.sigma_bar(t).unwrap() - expected).abs() <= 1e-12 * expected);
    }
    assert_eq!(s.sigma_bar(0.0).unwrap(), 0.0);
}

#[test]
fn bad_schedules_fail_validation() {
    assert!(NoiseSchedule { beta_min: 0.0, beta_max: 10.0 }.validate().is_err());
    assert!(NoiseSchedule { beta_min: 1.0, beta_max: 0.5 }.validate().is_err());
    assert!(NoiseSchedule { beta_min: 0.05, beta_max: 2.0 }.validate().is_err());
    assert!(sched().validate().is_ok());
}

/// Time at which the default schedule reaches a requested alpha.
fn time_for_alpha(alpha: f64) -> f64 {
    let s = sched();
    // 9.95 t^2 + 0.1 t + ln(alpha) = 0
    let (a, b, c) = (s.beta_max - s.beta_min, 2.0 * s.beta_min, alpha.ln());
    (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
}

#[test]
fn perturb_examples() {
    let s = sched();
    let x0 = [0.3, -1.2];
    let eps = [0.7, 0.1];
    assert_eq!(perturb(&s, &x0, 0.0, &eps).unwrap(), x0.to_vec());
    let t = 0.37;
    let sn = (1.0 - s.alpha(t).unwrap()).sqrt();
    let zero = perturb(&s, &[0.0, 0.0], t, &eps).unwrap();
    assert_eq!(zero, vec![sn * 0.7, sn * 0.1]);
    let t = time_for_alpha(0.25);
    let x = perturb(&s, &[2.0], t, &[1.0]).unwrap();
    assert!((x[0] - 1.8660).abs() < 1e-4);
    assert!(matches!(perturb(&s, &[1.0, 2.0], 0.5, &[1.0]), Err(Error::Shape(_))));
}

#[test]
fn perturb_moments_match_the_marginal() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = [1.5, -0.5];
    let n = 10_000;
    for t in [0.1, 0.5, 0.9] {
        let a = s.alpha(t).unwrap();
        for (c, &x0c) in x0.iter().enumerate() {
            let draws: Vec<f64> = (0..n)
                .map(|_| {
                    let eps = standard_normal(2, &mut rng);
                    perturb(&s, &x0, t, &eps).unwrap()[c]
                })
                .collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let var_true = 1.0 - a;
            let se_mean = (var_true / n as f64).sqrt();
            let se_var = var_true * (2.0 / (n - 1) as f64).sqrt();
            assert!((mean - a.sqrt() * x0c).abs() <= 3.0 * se_mean, "t={t}: mean {mean}");
            assert!((var - var_true).abs() <= 3.0 * se_var, "t={t}: var {var} vs {var_true}");
        }
    }
}

#[test]
fn estimate_x0_examples() {
    let s = sched();
    let t = time_for_alpha(0.25);
    let x = estimate_x0(&s, &[1.0], t, &[0.5]).unwrap();
    assert!((x[0] - 1.13397).abs() < 1e-5);
    assert_eq!(estimate_x0(&s, &[0.4, 2.0], 0.0, &[9.0, -3.0]).unwrap(), vec![0.4, 2.0]);
    let x0 = [0.25, -0.75, 1.0];
    let eps = [0.5, 1.5, -0.2];
    let xt = perturb(&s, &x0, 0.6, &eps).unwrap();
    let back = estimate_x0(&s, &xt, 0.6, &eps).unwrap();
    for (a, b) in back.iter().zip(x0) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn estimate_x0_refuses_vanishing_alpha() {
    let weak = NoiseSchedule { beta_min: 0.1, beta_max: 20.0 };
    assert!(weak.alpha(1.0).unwrap() < MIN_ALPHA);
    assert!(matches!(estimate_x0(&weak, &[1.0], 1.0, &[0.0]), Err(Error::AlphaTooSmall { .. })));
}

proptest! {
    #[test]
    fn score_and_eps_round_trip(eps in proptest::collection::vec(-5.0f64..5.0, 1..8), t in 0.01f64..1.0) {
        let s = sched();
        let score = score_from_eps(&s, &eps, t).unwrap();
        let back = eps_from_score(&s, &score, t).unwrap();
        for (a, b) in back.iter().zip(&eps) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn alpha_is_strictly_decreasing(t in 0.0f64..0.999) {
        let s = sched();
        prop_assert!(s.alpha(t + 1e-3).unwrap() < s.alpha(t).unwrap());
    }
}

#[test]
fn dsm_loss_of_perfect_denoiser_is_zero() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = standard_normal(64 * 3, &mut rng);
    let batch = draw_dsm_batch(&s, &x0, 3, &mut rng);
    assert_eq!(dsm_loss(&batch.eps, &batch.eps, 3), 0.0);
}

#[test]
fn dsm_loss_of_zero_denoiser_is_the_dimension() {
    let s = sched();
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = vec![0.5; 10_000 * d];
    let batch = draw_dsm_batch(&s, &x0, d, &mut rng);
    let loss = dsm_loss(&vec![0.0; x0.len()], &batch.eps, d);
    assert!((loss - d as f64).abs() <= 0.05 * d as f64, "loss {loss}");
}

#[test]
fn dsm_loss_ignores_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pred = standard_normal(20, &mut rng);
    let eps = standard_normal(20, &mut rng);
    let swap = |v: &[f64]| {
        let mut w: Vec<f64> = v[10..].to_vec();
        w.extend_from_slice(&v[..10]);
        w
    };
    let a = dsm_loss(&pred, &eps, 2);
    let b = dsm_loss(&swap(&pred), &swap(&eps), 2);
    assert!((a - b).abs() < 1e-12);
}

fn square_grid() -> Vec<f64> {
    let mut x = Vec::new();
    for i in 0..9 {
        for j in 0..9 {
            x.push(-2.0 + 0.5 * i as f64);
            x.push(-2.0 + 0.5 * j as f64);
        }
    }
    x
}

/// RMSE over times in [0.1, 0.9]; `place` maps the square grid to query points at `t`.
fn grid_rmse(learned: &dyn Denoiser, truth: &dyn Denoiser, place: impl Fn(&[f64], f64) -> Vec<f64>) -> f64 {
    let mut sq = 0.0;
    let mut n = 0;
    for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let x = place(&square_grid(), t);
        let a = learned.predict(&x, t).unwrap();
        let b = truth.predict(&x, t).unwrap();
        sq += a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        n += a.len();
    }
    (sq / n as f64).sqrt()
}

fn train(x: Vec<f64>) -> TrainedDenoiser {
    let data = TrainingSet::new(2, x, Vec::new()).unwrap();
    train_denoiser(&data, &TrainConfig { steps: 2000, seed: 4, ..Default::default() }, &sched()).unwrap()
}

fn quarter_means(losses: &[f64]) -> (f64, f64) {
    let q = losses.len() / 4;
    let m = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (m(&losses[..q]), m(&losses[3 * q..]))
}

#[test]
fn learns_the_dirac_denoiser() {
    let mu = [0.6, -0.4];
    let trained = train(mu.repeat(256));
    let truth = DiracDenoiser { mu: mu.to_vec(), schedule: sched() };
    // grid of noise draws around the point: x = sqrt(a) mu + sqrt(1 - a) z, |z| <= 2
    let place = |z: &[f64], t: f64| perturb(&sched(), &mu.repeat(z.len() / 2), t, z).unwrap();
    let rmse = grid_rmse(&trained.net.with_conditioning(None), &truth, place);
    assert!(rmse <= 0.1, "rmse {rmse}");
    let (first, last) = quarter_means(&trained.losses);
    assert!(last < first);
}

#[test]
fn learns_the_standard_normal_denoiser() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trained = train(standard_normal(2 * 4096, &mut rng));
    let truth = StandardNormalDenoiser { dim: 2, schedule: sched() };
    let rmse = grid_rmse(&trained.net.with_conditioning(None), &truth, |x, _| x.to_vec());
    assert!(rmse <= 0.1, "rmse {rmse}");
}

#[test]
fn training_on_nothing_fails() {
    let data = TrainingSet::new(2, Vec::new(), Vec::new()).unwrap();
    assert!(matches!(train_denoiser(&data, &TrainConfig::default(), &sched()), Err(Error::EmptyDataset)));
}

#[test]
fn training_is_reproducible() {
    let data = TrainingSet::new(2, [0.1, 0.2, -0.3, 0.4].repeat(8), Vec::new()).unwrap();
    let cfg = TrainConfig { steps: 20, hidden: 32, seed: 8, ..Default::default() };
    let a = train_denoiser(&data, &cfg, &sched()).unwrap();
    let b = train_denoiser(&data, &cfg, &sched()).unwrap();
    assert_eq!(a.net.params, b.net.params);
    assert_eq!(a.losses, b.losses);
}

#[test]
fn zeroed_conditioning_is_the_unconditional_branch() {
    let mut rng = SeedStream::new(2).rng("net", 0);
    let net = Mlp::init(MlpConfig::new(3, true), &mut rng).unwrap();
    let x = standard_normal(12, &mut rng);
    let zero = Conditioning::new([0.0, 0.0], 0.0).unwrap();
    let a = net.predict(&x, 0.4, None).unwrap();
    let b = net.predict(&x, 0.4, Some(zero)).unwrap();
    assert_eq!(a, b);
    let c = net.predict(&x, 0.4, Some(Conditioning::new([0.5, 0.2], 0.1).unwrap())).unwrap();
    assert_ne!(a, c);
}

#[test]
fn conditioning_percentile_is_bounded() {
    assert!(Conditioning::new([0.5, 0.5], 1.2).is_err());
    assert!(Conditioning::new([0.5, 0.5], -0.1).is_err());
    assert!(Conditioning::new([0.5, 0.5], 1.0).is_ok());
}

#[test]
fn time_embedding_has_sixteen_bounded_features() {
    let e = time_embedding(0.3);
    assert_eq!(e.len(), TIME_FEATURES);
    assert_eq!(TIME_FEATURES, 16);
    assert!(e.iter().all(|v| v.abs() <= 1.0));
    assert_ne!(time_embedding(0.3), time_embedding(0.31));
}

#[test]
fn network_vjp_matches_finite_differences() {
    let mut rng = SeedStream::new(6).rng("net", 0);
    let net = Mlp::init(MlpConfig { hidden: 16, hidden_layers: 2, ..MlpConfig::new(3, true) }, &mut rng).unwrap();
    let cond = Some(Conditioning::new([0.4, 0.3], 0.2).unwrap());
    let x = standard_normal(6, &mut rng);
    let cot = standard_normal(6, &mut rng);
    let vjp = net.predict_vjp(&x, 0.35, cond, &cot).unwrap();
    let f = |x: &[f64]| {
        let y = net.predict(x, 0.35, cond).unwrap();
        y.iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>()
    };
    for i in 0..x.len() {
        let h = 1e-6;
        let mut p = x.clone();
        p[i] += h;
        let up = f(&p);
        p[i] -= 2.0 * h;
        let fd = (up - f(&p)) / (2.0 * h);
        assert!((vjp[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {} vs {fd}", vjp[i]);
    }
}

#[test]
fn ode_with_dirac_denoiser_lands_on_the_point() {
    let mu = vec![0.3, -1.1, 2.0];
    let den = DiracDenoiser { mu: mu.clone(), schedule: sched() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x1 = standard_normal(3 * 5, &mut rng);
    for steps in [1, 50, 200] {
        let out = ode_sample(&den, &sched(), steps, &x1).unwrap();
        for (i, v) in out.iter().enumerate() {
            assert!((v - mu[i % 3]).abs() < 1e-9, "{steps} steps: {v}");
        }
    }
}

#[test]
fn ode_with_normal_denoiser_preserves_the_gaussian() {
    let den = StandardNormalDenoiser { dim: 2, schedule: sched() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 10_000;
    let x1 = standard_normal(2 * n, &mut rng);
    let out = ode_sample(&den, &sched(), 50, &x1).unwrap();
    let mean = |c: usize| out.iter().skip(c).step_by(2).sum::<f64>() / n as f64;
    let (m0, m1) = (mean(0), mean(1));
    assert!(m0.abs() <= 0.05 && m1.abs() <= 0.05);
    let cov = |a: usize, b: usize, ma: f64, mb: f64| {
        out.chunks(2).map(|r| (r[a] - ma) * (r[b] - mb)).sum::<f64>() / (n - 1) as f64
    };
    assert!((cov(0, 0, m0, m0) - 1.0).abs() <= 0.1);
    assert!((cov(1, 1, m1, m1) - 1.0).abs() <= 0.1);
    assert!(cov(0, 1, m0, m1).abs() <= 0.1);
}

#[test]
fn ode_step_matches_the_sigma_bar_form() {
    let s = sched();
    let den = StandardNormalDenoiser { dim: 2, schedule: s };
    let x = [0.8, -0.3];
    let (t, u) = (0.6, 0.45);
    let eps = den.predict(&x, t).unwrap();
    let step = ode_step(&s, &x, &eps, t, u).unwrap();
    let (at, au) = (s.alpha(t).unwrap(), s.alpha(u).unwrap());
    for i in 0..2 {
        let xbar = x[i] / at.sqrt() + eps[i] * (s.sigma_bar(u).unwrap() - s.sigma_bar(t).unwrap());
        assert!((step[i] - xbar * au.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn samplers_reject_zero_steps_and_ragged_rows() {
    let den = StandardNormalDenoiser { dim: 2, schedule: sched() };
    assert!(ode_sample(&den, &sched(), 0, &[0.0, 0.0]).is_err());
    assert!(matches!(ode_sample(&den, &sched(), 5, &[0.0, 0.0, 1.0]), Err(Error::Shape(_))));
}

#[test]
fn non_finite_predictions_report_the_step() {
    let den = FnDenoiser { dim: 1, f: |x: &[f64], t: f64| vec![if t < 0.5 { f64::NAN } else { 0.0 }; x.len()] };
    match ode_sample(&den, &sched(), 10, &[0.2]) {
        Err(Error::NonFiniteSample { step }) => assert_eq!(step, 6),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn sde_with_dirac_denoiser_centres_on_the_point() {
    let mu = vec![0.7, -0.2];
    let den = DiracDenoiser { mu: mu.clone(), schedule: sched() };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 1000;
    let out = sde_sample(&den, &sched(), 200, n, &mut rng).unwrap();
    for c in 0..2 {
        let m = out.iter().skip(c).step_by(2).sum::<f64>() / n as f64;
        assert!((m - mu[c]).abs() <= 0.05, "coordinate {c}: {m}");
    }
}

#[test]
fn noise_free_single_sde_step_is_the_drift_update() {
    let s = sched();
    let den = StandardNormalDenoiser { dim: 2, schedule: s };
    let x1 = [0.9, -1.4];
    let out = sde_sample_from::<ChaCha8Rng>(&den, &s, 1, &x1, None).unwrap();
    let eps = den.predict(&x1, 1.0).unwrap();
    let score = score_from_eps(&s, &eps, 1.0).unwrap();
    let b = s.beta(1.0);
    for i in 0..2 {
        assert_eq!(out[i], x1[i] + b * (x1[i] + 2.0 * score[i]));
    }
}

#[test]
fn sde_is_deterministic_per_seed() {
    let den = StandardNormalDenoiser { dim: 3, schedule: sched() };
    let run = |seed| sde_sample(&den, &sched(), 30, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn checkpoint_round_trips_exactly() {
    let mut rng = SeedStream::new(1).rng("net", 0);
    let net = Mlp::init(MlpConfig { hidden: 8, hidden_layers: 2, ..MlpConfig::new(4, true) }, &mut rng).unwrap();
    let data: Vec<f64> = (0..40).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect();
    let ckpt = Checkpoint { net, schedule: sched(), standardizer: Standardizer::fit(&data, 4).unwrap() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.net.params, ckpt.net.params);
    assert_eq!(back.net.config, ckpt.net.config);
    assert_eq!(back.schedule, ckpt.schedule);
    assert_eq!(back.standardizer, ckpt.standardizer);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let mut rng = SeedStream::new(1).rng("net", 0);
    let net = Mlp::init(MlpConfig { hidden: 4, hidden_layers: 1, ..MlpConfig::new(2, false) }, &mut rng).unwrap();
    let bytes = Checkpoint { net, schedule: sched(), standardizer: Standardizer::identity(2) }.to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    let mut newer = bytes;
    newer[8] = 99;
    assert!(Checkpoint::from_bytes(&newer).is_err());
}

#[test]
fn standardizer_inverts() {
    let x = [1.0, 10.0, 3.0, 14.0, 5.0, 18.0];
    let s = Standardizer::fit(&x, 2).unwrap();
    let z = s.forward(&x);
    let m = |c: usize| z.iter().skip(c).step_by(2).sum::<f64>() / 3.0;
    assert!(m(0).abs() < 1e-12 && m(1).abs() < 1e-12);
    for (a, b) in s.inverse(&z).iter().zip(x) {
        assert!((a - b).abs() < 1e-12);
    }
}
