use adcore::{Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::{rows, Conditioning, Denoiser};
use crate::Error;

/// Sinusoidal features of the diffusion time.
pub const TIME_FEATURES: usize = 16;

/// `sin` then `cos` of `f_k t` for frequencies geometric from 1 to 1000.
pub fn time_embedding(t: f64) -> [f64; TIME_FEATURES] {
    let half = TIME_FEATURES / 2;
    let mut out = [0.0; TIME_FEATURES];
    for k in 0..half {
        let f = 1000f64.powf(k as f64 / (half - 1) as f64);
        out[k] = (f * t).sin();
        out[half + k] = (f * t).cos();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Design dimension, both input and output width.
    pub dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    /// Whether the goal and percentile are appended to the input.
    pub conditional: bool,
}

impl MlpConfig {
    pub fn new(dim: usize, conditional: bool) -> Self {
        Self { dim, hidden: 256, hidden_layers: 3, conditional }
    }

    fn cond_width(&self) -> usize {
        if self.conditional {
            Conditioning::WIDTH
        } else {
            0
        }
    }

    pub fn input_width(&self) -> usize {
        self.dim + TIME_FEATURES + self.cond_width()
    }

    /// `(fan_in, fan_out)` of every dense layer.
    fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_width()];
        dims.extend(std::iter::repeat_n(self.hidden, self.hidden_layers));
        dims.push(self.dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Parameter blocks in storage order: weight then bias for each layer.
    pub fn block_sizes(&self) -> Vec<usize> {
        self.layers().iter().flat_map(|&(i, o)| [i * o, o]).collect()
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::Config("denoiser widths must be positive".into()));
        }
        Ok(())
    }
}

/// SiLU multilayer perceptron predicting the injected noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    pub params: Vec<Vec<f64>>,
}

impl Mlp {
    /// Uniform fan-in initialization; the output layer starts small.
    pub fn init(config: MlpConfig, rng: &mut impl Rng) -> Result<Self, Error> {
        config.validate()?;
        let layers = config.layers();
        let last = layers.len() - 1;
        let mut params = Vec::with_capacity(2 * layers.len());
        for (k, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let a = (3.0 / fan_in as f64).sqrt() * if k == last { 0.1 } else { 1.0 };
            params.push((0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect());
            params.push(vec![0.0; fan_out]);
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: MlpConfig, params: Vec<Vec<f64>>) -> Result<Self, Error> {
        config.validate()?;
        let sizes = config.block_sizes();
        if params.len() != sizes.len() || params.iter().zip(&sizes).any(|(p, &n)| p.len() != n) {
            return Err(Error::Shape("parameter blocks do not match the architecture".into()));
        }
        Ok(Self { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    /// Time features and (optionally) conditioning for every row, `[n, width]`.
    pub(crate) fn side_inputs(&self, times: &[f64], cond: &[[f64; 3]]) -> Tensor {
        let cw = self.config.cond_width();
        let width = TIME_FEATURES + cw;
        let mut out = Vec::with_capacity(times.len() * width);
        for (r, &t) in times.iter().enumerate() {
            out.extend_from_slice(&time_embedding(t));
            if cw > 0 {
                out.extend_from_slice(&cond.get(r).copied().unwrap_or([0.0; 3]));
            }
        }
        Tensor::matrix(times.len(), width, out).expect("side input shape")
    }

    /// Adds the network to `g`; `params` holds one node per block, shaped as by
    /// [`Mlp::block_tensor`].
    pub(crate) fn forward(&self, g: &mut Graph, params: &[Var], x: Var, side: Var) -> Result<Var, Error> {
        let mut h = g.concat(&[x, side])?;
        let n_layers = params.len() / 2;
        for k in 0..n_layers {
            h = g.matmul(h, params[2 * k])?;
            h = g.add_row_bias(h, params[2 * k + 1])?;
            if k + 1 < n_layers {
                h = g.silu(h)?;
            }
        }
        Ok(h)
    }

    /// Block `b` shaped for the graph: weights `[fan_in, fan_out]`, biases flat.
    pub(crate) fn block_tensor(&self, b: usize) -> Tensor {
        let data = self.params[b].clone();
        if b % 2 == 1 {
            return Tensor::vector(data);
        }
        let (i, o) = self.config.layers()[b / 2];
        Tensor::matrix(i, o, data).expect("weight block shape")
    }

    fn run(&self, x: &[f64], t: f64, cond: Option<[f64; 3]>, cot: Option<&[f64]>) -> Result<Vec<f64>, Error> {
        let d = self.config.dim;
        let n = rows(x, d)?;
        let mut g = if cot.is_some() { Graph::new() } else { Graph::no_grad() };
        let params: Vec<Var> = (0..self.params.len()).map(|b| g.constant(self.block_tensor(b))).collect();
        let xv = g.input(Tensor::matrix(n, d, x.to_vec())?);
        let side = self.side_inputs(&vec![t; n], &vec![cond.unwrap_or([0.0; 3]); n]);
        let side = g.constant(side);
        let out = self.forward(&mut g, &params, xv, side)?;
        match cot {
            None => Ok(g.value(out).data().to_vec()),
            Some(c) => {
                let seed = Tensor::matrix(n, d, c.to_vec())?;
                Ok(g.vjp(&[(out, seed)])?.wrt(xv).into_data())
            }
        }
    }

    /// Noise prediction for a batch at a common time. `cond` is ignored by
    /// unconditional networks; `None` zeroes it.
    pub fn predict(&self, x: &[f64], t: f64, cond: Option<Conditioning>) -> Result<Vec<f64>, Error> {
        self.run(x, t, cond.map(Conditioning::to_array), None)
    }

    pub fn predict_vjp(&self, x: &[f64], t: f64, cond: Option<Conditioning>, cot: &[f64]) -> Result<Vec<f64>, Error> {
        self.run(x, t, cond.map(Conditioning::to_array), Some(cot))
    }

    /// View as a [`Denoiser`] with fixed conditioning.
    pub fn with_conditioning(&self, cond: Option<Conditioning>) -> NetDenoiser<'_> {
        NetDenoiser { net: self, cond }
    }
}

/// A network bound to one conditioning value (or none).
#[derive(Clone, Copy, Debug)]
pub struct NetDenoiser<'a> {
    pub net: &'a Mlp,
    pub cond: Option<Conditioning>,
}

impl Denoiser for NetDenoiser<'_> {
    fn dim(&self) -> usize {
        self.net.config.dim
    }

    fn predict(&self, x: &[f64], t: f64) -> Result<Vec<f64>, Error> {
        self.net.predict(x, t, self.cond)
    }

    fn predict_vjp(&self, x: &[f64], t: f64, cot: &[f64]) -> Result<Vec<f64>, Error> {
        self.net.predict_vjp(x, t, self.cond, cot)
    }
}
