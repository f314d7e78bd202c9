use diffdesign::baselines::*;
use diffdesign::diffusion::*;
use diffdesign::energy::{Energy, QuadraticEnergy};
use diffdesign::psample::*;
use diffdesign::seeds::SeedStream;
use diffdesign::Error;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn adam_solves_the_bowl() {
    let e = QuadraticEnergy::new(vec![1.0, -2.0, 0.5]);
    let trace = adam_design_opt(&[0.0; 3], &e, 200, 0.1).unwrap();
    assert_eq!(trace.records.len(), 201);
    assert!(trace.records.last().unwrap().cost < 1e-4);
    assert!(trace.aborted.is_none());
    assert_eq!(trace.evaluations, e.evaluations());
    assert_eq!(trace.records.first().unwrap().design, vec![0.0; 3]);
}

#[test]
fn adam_rejects_bad_input() {
    let e = QuadraticEnergy::new(vec![1.0, 2.0]);
    assert!(adam_design_opt(&[0.0, 0.0], &e, 0, 0.1).is_err());
    assert!(matches!(adam_design_opt(&[0.0], &e, 5, 0.1), Err(Error::Shape(_))));
}

struct Failing;

impl Energy for Failing {
    fn dim(&self) -> usize {
        2
    }
    fn cost(&self, _: &[f64]) -> Result<f64, Error> {
        Ok(1.0)
    }
    fn cost_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>), Error> {
        if x[0] > 0.25 {
            Err(Error::NonFiniteGradient)
        } else {
            Ok((1.0, vec![-1.0, 0.0]))
        }
    }
    fn evaluations(&self) -> u64 {
        0
    }
}

#[test]
fn adam_keeps_a_partial_trace_when_the_gradient_fails() {
    let trace = adam_design_opt(&[0.0, 0.0], &Failing, 50, 0.1).unwrap();
    assert!(trace.aborted.is_some());
    assert!(trace.records.len() > 1 && trace.records.len() < 51);
}

#[test]
fn cem_elites_are_the_lowest_costs() {
    let pop = vec![vec![3.0], vec![1.0], vec![2.0], vec![0.0]];
    let (mean, var) = cem_refit(&pop, &[3.0, 1.0, 2.0, 0.0], 2, 1e-4);
    assert_eq!(mean, vec![0.5]);
    assert_eq!(var, vec![0.25]);
    let cfg = CemConfig { population: 4, elite_fraction: 0.5, ..CemConfig::default() };
    assert_eq!(cfg.elite_count(), 2);
}

#[test]
fn cem_variance_respects_the_floor() {
    let pop = vec![vec![1.0, 2.0]; 5];
    let (_, var) = cem_refit(&pop, &[0.0; 5], 3, 1e-4);
    assert_eq!(var, vec![1e-4, 1e-4]);
}

#[test]
fn cem_finds_the_bowl_minimum() {
    let center = vec![0.8, -0.6, 0.3, 1.2];
    let e = QuadraticEnergy::new(center.clone());
    let cfg = CemConfig::default();
    let trace = cem_design_opt(&cfg, &e, &SeedStream::new(5)).unwrap();
    assert_eq!(trace.records.len(), 32 * 30);
    assert_eq!(trace.evaluations, 960);
    let last: Vec<&TraceRecord> = trace.records.iter().filter(|r| r.iteration == 29).collect();
    let pop: Vec<Vec<f64>> = last.iter().map(|r| r.design.clone()).collect();
    let costs: Vec<f64> = last.iter().map(|r| r.cost).collect();
    let (mean, _) = cem_refit(&pop, &costs, cfg.elite_count(), cfg.cov_floor);
    for (m, c) in mean.iter().zip(&center) {
        assert!((m - c).abs() <= 0.1, "{m} vs {c}");
    }
}

#[test]
fn cem_is_deterministic_per_seed() {
    let e = QuadraticEnergy::new(vec![0.5; 3]);
    let cfg = CemConfig { iterations: 4, ..CemConfig::default() };
    let a = cem_design_opt(&cfg, &e, &SeedStream::new(9)).unwrap();
    let b = cem_design_opt(&cfg, &e, &SeedStream::new(9)).unwrap();
    assert_eq!(a.records, b.records);
}

#[test]
fn cem_config_is_validated() {
    let e = QuadraticEnergy::new(vec![0.0]);
    for bad in [
        CemConfig { population: 1, ..CemConfig::default() },
        CemConfig { elite_fraction: 0.0, ..CemConfig::default() },
        CemConfig { cov_floor: 0.0, ..CemConfig::default() },
    ] {
        assert!(cem_design_opt(&bad, &e, &SeedStream::new(0)).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn best_so_far_never_increases(seed in 0u64..1000) {
        let e = QuadraticEnergy::new(vec![0.3, -0.2]);
        let trace = cem_design_opt(&CemConfig { iterations: 5, ..CemConfig::default() }, &e, &SeedStream::new(seed)).unwrap();
        let b = trace.best_so_far();
        prop_assert!(b.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*b.last().unwrap(), trace.best().unwrap().cost);
    }
}

/// `eps` that makes one sampler step from `t = 1` return its input unchanged.
fn identity_decoder(dim: usize) -> FnDenoiser<impl Fn(&[f64], f64) -> Vec<f64> + Sync> {
    let s = NoiseSchedule::default();
    FnDenoiser {
        dim,
        f: move |x: &[f64], t: f64| {
            let a = s.alpha(t).unwrap();
            x.iter().map(|v| v * (1.0 - a.sqrt()) / (1.0 - a).sqrt()).collect()
        },
    }
}

fn one_step(cfg: PsConfig) -> PsConfig {
    PsConfig { m_steps: 1, full_steps: 1, ..cfg }
}

#[test]
fn identity_decoder_is_identity() {
    let den = identity_decoder(3);
    let x1 = [0.5, -1.0, 2.0];
    let out = quick_decode(&den, &NoiseSchedule::default(), &x1, 1).unwrap();
    for (a, b) in out.iter().zip(x1) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn beats_matched_budget_random_search_on_a_bowl() {
    let dim = 4;
    let center = vec![1.0; dim];
    let cfg = one_step(PsConfig { n: 32, k: 5, sigma_noise: 0.3, ..PsConfig::default() });
    let budget = cfg.expected_evaluations() as usize;
    let den = identity_decoder(dim);
    let mut wins = 0;
    for seed in 0..10 {
        let e = QuadraticEnergy::new(center.clone());
        let seeds = SeedStream::new(seed);
        let r = particle_search(&e, &den, &NoiseSchedule::default(), &cfg, &seeds).unwrap();
        assert_eq!(r.evaluations as usize, budget);
        let mut rng = seeds.rng("iid", 0);
        let iid = (0..budget)
            .map(|_| {
                let x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                e.cost(&x).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        if r.best_cost <= iid {
            wins += 1;
        }
    }
    assert!(wins >= 9, "won {wins} of 10");
}

#[test]
fn no_rounds_is_best_of_n() {
    let e = QuadraticEnergy::new(vec![0.5, 0.5]);
    let cfg = one_step(PsConfig { n: 10, k: 0, ..PsConfig::default() });
    let seeds = SeedStream::new(3);
    let r = particle_search(&e, &identity_decoder(2), &NoiseSchedule::default(), &cfg, &seeds).unwrap();
    assert_eq!(r.evaluations, 10);
    let best = (0..10)
        .map(|i| {
            let mut rng = seeds.rng("ps-init", i);
            let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            e.cost(&x).unwrap()
        })
        .fold(f64::INFINITY, f64::min);
    assert!((r.best_cost - best).abs() < 1e-9);
}

#[test]
fn weights_examples() {
    let w = importance_weights(&[0.0, 0.1 * 2f64.ln()], 0.1).unwrap();
    assert!((w[0] - 2.0 / 3.0).abs() < 1e-12 && (w[1] - 1.0 / 3.0).abs() < 1e-12);
    let flat = importance_weights(&[0.7; 5], 0.1).unwrap();
    assert!(flat.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    let partial = importance_weights(&[f64::INFINITY, 1.0], 0.1).unwrap();
    assert_eq!(partial, vec![0.0, 1.0]);
    assert!(matches!(importance_weights(&[f64::INFINITY; 3], 0.1), Err(Error::AllParticlesFailed)));
}

#[test]
fn resampling_never_picks_zero_weight_atoms() {
    let mut rng = SeedStream::new(1).rng("r", 0);
    for scheme in [Resampling::Multinomial, Resampling::Systematic] {
        let picks = resample_indices(&[0.0, 0.5, 0.0, 0.5, 0.0], 200, scheme, &mut rng);
        assert!(picks.iter().all(|&i| i == 1 || i == 3));
    }
    let sys = resample_indices(&[0.25; 4], 8, Resampling::Systematic, &mut rng);
    for i in 0..4 {
        assert_eq!(sys.iter().filter(|&&p| p == i).count(), 2);
    }
}

#[test]
fn frozen_search_only_duplicates_initial_atoms() {
    let e = QuadraticEnergy::new(vec![0.0, 0.0]);
    let cfg = one_step(PsConfig { n: 6, k: 3, sigma_noise: 0.0, tau: 1e12, ..PsConfig::default() });
    let r = particle_search(&e, &identity_decoder(2), &NoiseSchedule::default(), &cfg, &SeedStream::new(4)).unwrap();
    let initial: Vec<&Vec<f64>> = r.ensemble.s1[..6].iter().collect();
    for p in &r.ensemble.s1 {
        assert!(initial.contains(&p));
    }
}

#[test]
fn ensemble_sizes_follow_the_growth_rule() {
    let e = QuadraticEnergy::new(vec![0.2; 3]);
    let cfg = PsConfig { n: 5, k: 3, m_steps: 1, full_steps: 10, redecode_top: 4, ..PsConfig::default() };
    let den = StandardNormalDenoiser { dim: 3, schedule: NoiseSchedule::default() };
    let r = particle_search(&e, &den, &NoiseSchedule::default(), &cfg, &SeedStream::new(8)).unwrap();
    let ens = &r.ensemble;
    assert_eq!(ens.s1.len(), 5 * 8);
    assert_eq!(ens.s0.len(), ens.s1.len());
    assert_eq!(ens.costs.len(), ens.s1.len());
    for k in 0..=3 {
        let expected = if k == 0 { 5 } else { 5 << (k - 1) };
        assert_eq!(ens.round.iter().filter(|&&r| r == k).count(), expected);
    }
    assert!((ens.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(ens.weights.iter().all(|&w| w >= 0.0));
    assert_eq!(r.redecoded.len(), 4);
    assert_eq!(r.evaluations, cfg.expected_evaluations());
    assert_eq!(r.evaluations, e.evaluations());
    let min = ens.costs.iter().chain(r.redecoded.iter().map(|(_, c)| c)).copied().fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_cost, min);
}

#[test]
fn dirac_decoder_sends_every_particle_to_the_point() {
    let mu = vec![0.4, -0.3];
    let den = DiracDenoiser { mu: mu.clone(), schedule: NoiseSchedule::default() };
    let e = QuadraticEnergy::new(vec![0.0, 0.0]);
    let r = particle_search(&e, &den, &NoiseSchedule::default(), &PsConfig::default(), &SeedStream::new(2)).unwrap();
    for x in &r.ensemble.s0 {
        assert!((x[0] - mu[0]).abs() < 1e-9 && (x[1] - mu[1]).abs() < 1e-9);
    }
}

#[test]
fn one_step_decode_is_the_x0_estimate() {
    let s = NoiseSchedule::default();
    let den = StandardNormalDenoiser { dim: 2, schedule: s };
    let x1 = [0.3, -0.8, 1.1, 0.2];
    let out = quick_decode(&den, &s, &x1, 1).unwrap();
    let eps = den.predict(&x1, 1.0).unwrap();
    assert_eq!(out, estimate_x0(&s, &x1, 1.0, &eps).unwrap());
    let one_by_one: Vec<f64> = x1.chunks(2).flat_map(|r| quick_decode(&den, &s, r, 1).unwrap()).collect();
    assert_eq!(out, one_by_one);
}

#[test]
fn search_is_deterministic_per_seed() {
    let e = QuadraticEnergy::new(vec![0.1, 0.9]);
    let den = identity_decoder(2);
    let cfg = one_step(PsConfig::default());
    let run = |s| particle_search(&e, &den, &NoiseSchedule::default(), &cfg, &SeedStream::new(s)).unwrap();
    assert_eq!(run(6).ensemble, run(6).ensemble);
    assert_ne!(run(6).ensemble, run(7).ensemble);
}

#[test]
fn invalid_search_configs_are_rejected() {
    let e = QuadraticEnergy::new(vec![0.0]);
    let den = identity_decoder(1);
    for bad in [
        PsConfig { n: 0, ..PsConfig::default() },
        PsConfig { tau: 0.0, ..PsConfig::default() },
        PsConfig { sigma_noise: -1.0, ..PsConfig::default() },
        PsConfig { m_steps: 0, ..PsConfig::default() },
    ] {
        assert!(particle_search(&e, &den, &NoiseSchedule::default(), &bad, &SeedStream::new(0)).is_err());
    }
}
