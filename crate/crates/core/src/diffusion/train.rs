use adcore::{AdamConfig, AdamState, Graph, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::Conditioning;
use super::mlp::{Mlp, MlpConfig};
use super::schedule::NoiseSchedule;
use crate::seeds::SeedStream;
use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub conditional: bool,
    /// Probability of zeroing a row's conditioning during training.
    pub cond_dropout: f64,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            steps: 2000,
            lr: 1e-3,
            seed: 0,
            conditional: false,
            cond_dropout: 0.1,
            hidden: 256,
            hidden_layers: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.batch_size == 0 || self.steps == 0 || self.hidden == 0 {
            return Err(Error::Config("batch_size, steps and hidden must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::Config("need lr > 0 and cond_dropout in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Row-major training designs with optional per-row conditioning.
#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    pub dim: usize,
    pub x: Vec<f64>,
    pub cond: Vec<Conditioning>,
}

impl TrainingSet {
    pub fn new(dim: usize, x: Vec<f64>, cond: Vec<Conditioning>) -> Result<Self, Error> {
        if dim == 0 || x.len() % dim != 0 {
            return Err(Error::Shape(format!("{} values do not form rows of width {dim}", x.len())));
        }
        if !cond.is_empty() && cond.len() != x.len() / dim {
            return Err(Error::Shape("one conditioning vector per row is required".into()));
        }
        Ok(Self { dim, x, cond })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.x.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

/// Diffusion times, noise and noised rows for one denoising score matching batch.
#[derive(Clone, Debug)]
pub struct DsmBatch {
    pub t: Vec<f64>,
    pub eps: Vec<f64>,
    pub x_t: Vec<f64>,
}

/// Draws `t ~ U(0, 1)` and `eps ~ N(0, I)` for every row of `x0`.
pub fn draw_dsm_batch(schedule: &NoiseSchedule, x0: &[f64], dim: usize, rng: &mut impl Rng) -> DsmBatch {
    let n = x0.len() / dim;
    let mut t = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(x0.len());
    let mut x_t = Vec::with_capacity(x0.len());
    for r in 0..n {
        let tr: f64 = rng.random();
        let a = schedule.alpha_unchecked(tr);
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        t.push(tr);
        for &x in &x0[r * dim..(r + 1) * dim] {
            let e: f64 = rng.sample(StandardNormal);
            eps.push(e);
            x_t.push(sa * x + sn * e);
        }
    }
    DsmBatch { t, eps, x_t }
}

/// Mean over rows of `|pred - eps|^2`.
pub fn dsm_loss(pred: &[f64], eps: &[f64], dim: usize) -> f64 {
    let n = eps.len() / dim;
    let total: f64 = pred.iter().zip(eps).map(|(p, e)| (p - e) * (p - e)).sum();
    total / n as f64
}

/// Loss on one batch and its gradient for every parameter block.
pub fn dsm_loss_and_grad(
    net: &Mlp,
    schedule: &NoiseSchedule,
    x0: &[f64],
    cond: &[[f64; 3]],
    rng: &mut impl Rng,
) -> Result<(f64, Vec<Vec<f64>>), Error> {
    let d = net.config.dim;
    let batch = draw_dsm_batch(schedule, x0, d, rng);
    let n = batch.t.len();
    let mut g = Graph::new();
    let params: Vec<Var> = (0..net.params.len()).map(|b| g.input(net.block_tensor(b))).collect();
    let x = g.constant(Tensor::matrix(n, d, batch.x_t)?);
    let side = g.constant(net.side_inputs(&batch.t, cond));
    let out = net.forward(&mut g, &params, x, side)?;
    let eps = g.constant(Tensor::matrix(n, d, batch.eps)?);
    let diff = g.sub(out, eps)?;
    let sq = g.square(diff)?;
    let total = g.sum(sq)?;
    let loss = g.scale(total, 1.0 / n as f64)?;
    let value = g.value(loss).item()?;
    let mut grads = g.backward(loss)?;
    Ok((value, params.into_iter().map(|p| grads.take(p).into_data()).collect()))
}

#[derive(Clone, Debug)]
pub struct TrainedDenoiser {
    pub net: Mlp,
    /// Training loss at every step.
    pub losses: Vec<f64>,
}

/// Adam on the denoising score matching loss. Conditional training zeroes each
/// row's conditioning with probability `cond_dropout`, so the same network
/// also serves as the unconditional denoiser.
pub fn train_denoiser(data: &TrainingSet, cfg: &TrainConfig, schedule: &NoiseSchedule) -> Result<TrainedDenoiser, Error> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.conditional && data.cond.is_empty() {
        return Err(Error::Config("conditional training needs conditioning on every row".into()));
    }
    let seeds = SeedStream::new(cfg.seed);
    let mut init_rng = seeds.rng("denoiser-init", 0);
    let mut rng = seeds.rng("denoiser-batches", 0);
    let config = MlpConfig { hidden: cfg.hidden, hidden_layers: cfg.hidden_layers, ..MlpConfig::new(data.dim, cfg.conditional) };
    let mut net = Mlp::init(config, &mut init_rng)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &config.block_sizes());
    let d = data.dim;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut x0 = Vec::with_capacity(cfg.batch_size * d);
    let mut cond = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        x0.clear();
        cond.clear();
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..data.len());
            x0.extend_from_slice(data.row(i));
            if cfg.conditional {
                let keep = rng.random::<f64>() >= cfg.cond_dropout;
                cond.push(if keep { data.cond[i].to_array() } else { [0.0; 3] });
            }
        }
        let (loss, grads) = dsm_loss_and_grad(&net, schedule, &x0, &cond, &mut rng)?;
        let mut params: Vec<&mut [f64]> = net.params.iter_mut().map(|p| p.as_mut_slice()).collect();
        let grads: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
        adam.step(&mut params, &grads)?;
        if step % 200 == 0 {
            log::debug!("denoiser step {step}: loss {loss:.4}");
        }
        losses.push(loss);
    }
    Ok(TrainedDenoiser { net, losses })
}
