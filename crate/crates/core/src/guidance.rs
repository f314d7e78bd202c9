//! Modified denoising directions: energy guidance and classifier-free guidance.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{estimate_x0, rows, Conditioning, Denoiser, Mlp, NoiseSchedule};
use crate::energy::Energy;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    None,
    Energy,
    Conditional,
}

/// How the scaled energy gradient `g` is merged with `eps_hat`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `eps + lambda g`
    Linear,
    /// `eps + lambda g / |g|`
    LinearUnit,
    /// `eps + lambda |eps| g / |g|`
    LinearNorm,
    /// `(1 - lambda) eps + lambda g`
    Cvx,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Linear, Variant::LinearUnit, Variant::LinearNorm, Variant::Cvx];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Linear => "linear",
            Variant::LinearUnit => "linear-unit",
            Variant::LinearNorm => "linear-norm",
            Variant::Cvx => "cvx",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub lambda: f64,
    /// Temperature of the target `exp(-E / tau)`.
    pub tau: f64,
    pub variant: Variant,
    pub conditioning: Option<Conditioning>,
    /// Pull the energy gradient back through the `x0` estimate, denoiser included.
    pub full_jacobian: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mode: GuidanceMode::None,
            lambda: 0.5,
            tau: 0.1,
            variant: Variant::Linear,
            conditioning: None,
            full_jacobian: false,
        }
    }
}

impl GuidanceConfig {
    pub fn energy(lambda: f64, variant: Variant) -> Self {
        Self { mode: GuidanceMode::Energy, lambda, variant, ..Self::default() }
    }

    pub fn conditional(lambda: f64, cond: Conditioning) -> Self {
        Self { mode: GuidanceMode::Conditional, lambda, conditioning: Some(cond), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.lambda >= 0.0) || !(self.tau > 0.0) {
            return Err(Error::Config(format!("need lambda >= 0 and tau > 0, got {} and {}", self.lambda, self.tau)));
        }
        if self.mode == GuidanceMode::Energy && self.variant == Variant::Cvx && self.lambda > 1.0 {
            return Err(Error::Config(format!("cvx guidance needs lambda in [0, 1], got {}", self.lambda)));
        }
        if self.mode == GuidanceMode::Conditional && self.conditioning.is_none() {
            return Err(Error::Config("conditional guidance needs a conditioning vector".into()));
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Merges one row's `eps_hat` with the scaled energy gradient `g`. Normalized
/// variants fall back to `eps_hat` when `g` vanishes.
pub fn combine(eps: &[f64], g: &[f64], variant: Variant, lambda: f64) -> Vec<f64> {
    match variant {
        Variant::Linear => eps.iter().zip(g).map(|(e, g)| e + lambda * g).collect(),
        Variant::Cvx => eps.iter().zip(g).map(|(e, g)| (1.0 - lambda) * e + lambda * g).collect(),
        Variant::LinearUnit | Variant::LinearNorm => {
            let gn = norm(g);
            if gn == 0.0 {
                return eps.to_vec();
            }
            let s = if variant == Variant::LinearUnit { lambda / gn } else { lambda * norm(eps) / gn };
            eps.iter().zip(g).map(|(e, g)| e + s * g).collect()
        }
    }
}

/// `(1 + lambda) eps_cond - lambda eps_uncond`.
pub fn cfg_combine(eps_cond: &[f64], eps_uncond: &[f64], lambda: f64) -> Vec<f64> {
    eps_cond.iter().zip(eps_uncond).map(|(c, u)| (1.0 + lambda) * c - lambda * u).collect()
}

/// Classifier-free guidance with one network serving both branches; the
/// unconditional branch sees zeroed conditioning.
pub fn cfg_eps(net: &Mlp, x_t: &[f64], t: f64, cond: Conditioning, lambda: f64) -> Result<Vec<f64>, Error> {
    let eps_cond = net.predict(x_t, t, Some(cond))?;
    if lambda == 0.0 {
        return Ok(eps_cond);
    }
    let eps_uncond = net.predict(x_t, t, None)?;
    Ok(cfg_combine(&eps_cond, &eps_uncond, lambda))
}

/// [`cfg_eps`] as a denoiser.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierFree<'a> {
    pub net: &'a Mlp,
    pub cond: Conditioning,
    pub lambda: f64,
}

impl Denoiser for ClassifierFree<'_> {
    fn dim(&self) -> usize {
        self.net.config.dim
    }

    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>, Error> {
        cfg_eps(self.net, x, t, self.cond, self.lambda)
    }
}

/// Energy-guided noise prediction for every row of `x_t`; one gradient
/// evaluation of `energy` per row.
pub fn energy_guided_eps(
    base: &dyn Denoiser,
    energy: &dyn Energy,
    schedule: &NoiseSchedule,
    cfg: &GuidanceConfig,
    x_t: &[f64],
    t: f64,
    eps_hat: &[f64],
) -> Result<Vec<f64>, Error> {
    let d = base.dim();
    rows(x_t, d)?;
    let a = schedule.alpha(t)?;
    let sn = (1.0 - a).sqrt();
    let x_hat = estimate_x0(schedule, x_t, t, eps_hat)?;
    let grads: Vec<Result<Vec<f64>, Error>> =
        x_hat.par_chunks(d).map(|row| energy.cost_and_gradient(row).map(|(_, g)| g)).collect();
    let mut grad = Vec::with_capacity(x_t.len());
    for g in grads {
        grad.extend(g?);
    }
    if cfg.full_jacobian {
        // d x_hat / d x_t = (I - sqrt(1 - a) d eps / d x) / sqrt(a)
        let back = base.predict_vjp(x_t, t, &grad)?;
        let sa = a.sqrt();
        for (g, b) in grad.iter_mut().zip(back) {
            *g = (*g - sn * b) / sa;
        }
    }
    let mut out = Vec::with_capacity(x_t.len());
    for (e, g) in eps_hat.chunks(d).zip(grad.chunks(d)) {
        let g: Vec<f64> = g.iter().map(|v| sn * v / cfg.tau).collect();
        out.extend(combine(e, &g, cfg.variant, cfg.lambda));
    }
    Ok(out)
}

/// A denoiser with energy guidance applied at every call. Tracks the largest
/// `|eps_tilde| / |eps_hat|` seen, and rejects linear-norm steps that break
/// `|eps_tilde| <= (1 + lambda) |eps_hat|`.
pub struct EnergyGuided<'a> {
    pub base: &'a dyn Denoiser,
    pub energy: &'a dyn Energy,
    pub schedule: NoiseSchedule,
    pub cfg: GuidanceConfig,
    max_ratio_bits: AtomicU64,
}

impl<'a> EnergyGuided<'a> {
    pub fn new(
        base: &'a dyn Denoiser,
        energy: &'a dyn Energy,
        schedule: NoiseSchedule,
        cfg: GuidanceConfig,
    ) -> Result<Self, Error> {
        cfg.validate()?;
        Ok(Self { base, energy, schedule, cfg, max_ratio_bits: AtomicU64::new(0f64.to_bits()) })
    }

    /// Largest per-row `|eps_tilde| / |eps_hat|` so far.
    pub fn max_norm_ratio(&self) -> f64 {
        f64::from_bits(self.max_ratio_bits.load(Ordering::Relaxed))
    }

    fn note_ratio(&self, r: f64) {
        // non-negative floats order like their bit patterns
        self.max_ratio_bits.fetch_max(r.to_bits(), Ordering::Relaxed);
    }
}

impl Denoiser for EnergyGuided<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>, Error> {
        let eps = self.base.predict(x, t)?;
        let out = energy_guided_eps(self.base, self.energy, &self.schedule, &self.cfg, x, t, &eps)?;
        let d = self.dim();
        for (e, o) in eps.chunks(d).zip(out.chunks(d)) {
            let (ne, no) = (norm(e), norm(o));
            if ne > 0.0 {
                self.note_ratio(no / ne);
            }
            if self.cfg.variant == Variant::LinearNorm && no > (1.0 + self.cfg.lambda) * ne * (1.0 + 1e-12) {
                return Err(Error::GuidanceBound { t, ratio: no / ne, lambda: self.cfg.lambda });
            }
        }
        Ok(out)
    }
}
