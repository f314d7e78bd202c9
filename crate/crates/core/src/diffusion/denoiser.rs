use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::Error;

/// A noise predictor `eps_hat(x, t)` over row-major batches.
pub trait Denoiser: Sync {
    fn dim(&self) -> usize;

    /// Predictions for every row of `x` (length `rows * dim`) at a common time.
    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>, Error>;

    /// `cot^T d eps_hat / dx`, row by row.
    fn predict_vjp(&self, _x: &[f64], _t: f64, _cot: &[f64]) -> Result<Vec<f64>, Error> {
        Err(Error::Unsupported("this denoiser has no Jacobian products"))
    }
}

pub(crate) fn rows(x: &[f64], dim: usize) -> Result<usize, Error> {
    if dim == 0 || x.len() % dim != 0 {
        return Err(Error::Shape(format!("{} values do not form rows of width {dim}", x.len())));
    }
    Ok(x.len() / dim)
}

/// Goal position and requested cost percentile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub goal: [f64; 2],
    pub percentile: f64,
}

impl Conditioning {
    pub const WIDTH: usize = 3;

    pub fn new(goal: [f64; 2], percentile: f64) -> Result<Self, Error> {
        if !(0.0..=1.0).contains(&percentile) {
            return Err(Error::Config(format!("percentile {percentile} outside [0, 1]")));
        }
        Ok(Self { goal, percentile })
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.goal[0], self.goal[1], self.percentile]
    }
}

/// Exact denoiser for data concentrated at a single point `mu`.
#[derive(Clone, Debug)]
pub struct DiracDenoiser {
    pub mu: Vec<f64>,
    pub schedule: NoiseSchedule,
}

impl Denoiser for DiracDenoiser {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>, Error> {
        rows(x, self.dim())?;
        let a = self.schedule.alpha(t)?;
        let sn = (1.0 - a).sqrt();
        if sn == 0.0 {
            return Ok(vec![0.0; x.len()]);
        }
        let sa = a.sqrt();
        let d = self.dim();
        Ok(x.iter().enumerate().map(|(i, v)| (v - sa * self.mu[i % d]) / sn).collect())
    }

    fn predict_vjp(&self, x: &[f64], t: f64, cot: &[f64]) -> Result<Vec<f64>, Error> {
        rows(x, self.dim())?;
        let sn = (1.0 - self.schedule.alpha(t)?).sqrt();
        Ok(cot.iter().map(|c| if sn == 0.0 { 0.0 } else { c / sn }).collect())
    }
}

/// Exact denoiser for standard normal data: `eps_hat = sqrt(1 - alpha) x`.
#[derive(Clone, Debug)]
pub struct StandardNormalDenoiser {
    pub dim: usize,
    pub schedule: NoiseSchedule,
}

impl Denoiser for StandardNormalDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>, Error> {
        rows(x, self.dim)?;
        let sn = (1.0 - self.schedule.alpha(t)?).sqrt();
        Ok(x.iter().map(|v| sn * v).collect())
    }

    fn predict_vjp(&self, x: &[f64], t: f64, cot: &[f64]) -> Result<Vec<f64>, Error> {
        rows(x, self.dim)?;
        let sn = (1.0 - self.schedule.alpha(t)?).sqrt();
        Ok(cot.iter().map(|c| sn * c).collect())
    }
}

/// Any closure as a denoiser, mostly for tests.
pub struct FnDenoiser<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>, Error> {
        rows(x, self.dim)?;
        Ok((self.f)(x, t))
    }
}
