use serde::{Deserialize, Serialize};

use crate::Error;

/// Below this the estimate of `x0` divides by (almost) zero.
pub const MIN_ALPHA: f64 = 1e-8;

/// Linear `beta_t = beta_min + t (beta_max - beta_min)` for the forward SDE
/// `dx = -beta x dt + sqrt(2 beta) dw`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self { beta_min: 0.05, beta_max: 10.0 }
    }
}

fn check_time(t: f64) -> Result<(), Error> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    Ok(())
}

impl NoiseSchedule {
    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    /// Squared signal coefficient `exp(-2 int_0^t beta)`.
    pub fn alpha(&self, t: f64) -> Result<f64, Error> {
        check_time(t)?;
        Ok(self.alpha_unchecked(t))
    }

    pub(crate) fn alpha_unchecked(&self, t: f64) -> f64 {
        (-(2.0 * self.beta_min * t + (self.beta_max - self.beta_min) * t * t)).exp()
    }

    /// Noise-to-signal ratio `sqrt(1 - alpha) / sqrt(alpha)`.
    pub fn sigma_bar(&self, t: f64) -> Result<f64, Error> {
        let a = self.alpha(t)?;
        Ok(((1.0 - a) / a).sqrt())
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.beta_min > 0.0 && self.beta_max > self.beta_min) {
            return Err(Error::Config(format!(
                "schedule needs 0 < beta_min < beta_max, got {} and {}",
                self.beta_min, self.beta_max
            )));
        }
        if self.alpha_unchecked(1.0) > 1e-4 {
            return Err(Error::Config("schedule leaves alpha(1) above 1e-4".into()));
        }
        Ok(())
    }
}

/// `sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps`.
pub fn perturb(schedule: &NoiseSchedule, x0: &[f64], t: f64, eps: &[f64]) -> Result<Vec<f64>, Error> {
    shape_eq(x0, eps)?;
    let a = schedule.alpha(t)?;
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| sa * x + sn * e).collect())
}

/// `(x_t - sqrt(1 - alpha_t) eps_hat) / sqrt(alpha_t)`.
pub fn estimate_x0(schedule: &NoiseSchedule, x_t: &[f64], t: f64, eps_hat: &[f64]) -> Result<Vec<f64>, Error> {
    shape_eq(x_t, eps_hat)?;
    let a = schedule.alpha(t)?;
    if a < MIN_ALPHA {
        return Err(Error::AlphaTooSmall { t, alpha: a });
    }
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x_t.iter().zip(eps_hat).map(|(x, e)| (x - sn * e) / sa).collect())
}

/// Score from a noise prediction: `-eps / sqrt(1 - alpha_t)`.
pub fn score_from_eps(schedule: &NoiseSchedule, eps: &[f64], t: f64) -> Result<Vec<f64>, Error> {
    let sn = (1.0 - schedule.alpha(t)?).sqrt();
    Ok(eps.iter().map(|e| -e / sn).collect())
}

/// Inverse of [`score_from_eps`].
pub fn eps_from_score(schedule: &NoiseSchedule, score: &[f64], t: f64) -> Result<Vec<f64>, Error> {
    let sn = (1.0 - schedule.alpha(t)?).sqrt();
    Ok(score.iter().map(|s| -s * sn).collect())
}

pub(crate) fn shape_eq(a: &[f64], b: &[f64]) -> Result<(), Error> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    Ok(())
}
