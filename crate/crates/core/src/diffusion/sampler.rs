use rand::Rng;
use rand_distr::StandardNormal;

use super::denoiser::{rows, Denoiser};
use super::schedule::NoiseSchedule;
use crate::Error;

/// Uniform grid from `t = 1` down to `t = 0` with `n_steps` intervals.
pub fn time_grid(n_steps: usize) -> Vec<f64> {
    (0..=n_steps).map(|i| 1.0 - i as f64 / n_steps as f64).collect()
}

fn check(den: &dyn Denoiser, n_steps: usize, x: &[f64]) -> Result<(), Error> {
    if n_steps == 0 {
        return Err(Error::Config("samplers need at least one step".into()));
    }
    rows(x, den.dim())?;
    Ok(())
}

fn finite(x: &[f64], step: usize) -> Result<(), Error> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteSample { step })
    }
}

/// One deterministic step `t -> s`: `sqrt(alpha_s) x_hat + sqrt(1 - alpha_s) eps_hat`.
pub fn ode_step(schedule: &NoiseSchedule, x: &[f64], eps: &[f64], t: f64, s: f64) -> Result<Vec<f64>, Error> {
    let x_hat = super::estimate_x0(schedule, x, t, eps)?;
    let a = schedule.alpha(s)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x_hat.iter().zip(eps).map(|(xh, e)| sa * xh + sn * e).collect())
}

/// Probability-flow ODE from `x1` at `t = 1` to `t = 0`, every row at once.
pub fn ode_sample(den: &dyn Denoiser, schedule: &NoiseSchedule, n_steps: usize, x1: &[f64]) -> Result<Vec<f64>, Error> {
    check(den, n_steps, x1)?;
    let grid = time_grid(n_steps);
    let mut x = x1.to_vec();
    for (k, w) in grid.windows(2).enumerate() {
        let eps = den.predict(&x, w[0])?;
        x = ode_step(schedule, &x, &eps, w[0], w[1])?;
        finite(&x, k)?;
    }
    Ok(x)
}

/// Euler-Maruyama on the reverse SDE with score `-eps_hat / sqrt(1 - alpha)`.
/// `rng = None` drops the noise term.
pub fn sde_sample_from<R: Rng>(
    den: &dyn Denoiser,
    schedule: &NoiseSchedule,
    n_steps: usize,
    x1: &[f64],
    mut rng: Option<&mut R>,
) -> Result<Vec<f64>, Error> {
    check(den, n_steps, x1)?;
    let grid = time_grid(n_steps);
    let dt = 1.0 / n_steps as f64;
    let mut x = x1.to_vec();
    for (k, w) in grid.windows(2).enumerate() {
        let t = w[0];
        let eps = den.predict(&x, t)?;
        let score = super::score_from_eps(schedule, &eps, t)?;
        let beta = schedule.beta(t);
        let noise_scale = (2.0 * beta * dt).sqrt();
        for (xi, si) in x.iter_mut().zip(&score) {
            let mut next = *xi + beta * (*xi + 2.0 * si) * dt;
            if let Some(r) = rng.as_deref_mut() {
                next += noise_scale * r.sample::<f64, _>(StandardNormal);
            }
            *xi = next;
        }
        finite(&x, k)?;
    }
    Ok(x)
}

/// `rows` reverse-SDE samples starting from `x1 ~ N(0, I)` drawn from `rng`.
pub fn sde_sample(
    den: &dyn Denoiser,
    schedule: &NoiseSchedule,
    n_steps: usize,
    rows: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, Error> {
    let x1 = standard_normal(rows * den.dim(), rng);
    sde_sample_from(den, schedule, n_steps, &x1, Some(rng))
}

pub fn standard_normal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}
