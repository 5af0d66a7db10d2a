use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected network with a shared hidden activation and a linear
/// output layer.
///
/// Parameters live in one flat vector: for each layer, the weight matrix
/// (`out x in`, row-major) followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid layer dims {dims:?}")));
        }
        let n = dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            params: vec![0.0; n],
        })
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
    /// weights and biases.
    pub fn init_uniform(dims: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(dims, activation)?;
        for l in 0..net.n_layers() {
            let bound = 1.0 / (net.dims[l] as f64).sqrt();
            let (w, b) = net.layer_mut(l);
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(dims: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(dims, activation)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters for dims {dims:?}, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Length of the activation cache filled by [`Mlp::forward`].
    pub fn cache_len(&self) -> usize {
        self.dims.iter().sum()
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.dims[..=l].windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Weight (row-major `out x in`) and bias slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let off = self.layer_offset(l);
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let (w, rest) = self.params[off..].split_at(o * i);
        (w, &rest[..o])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let off = self.layer_offset(l);
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let (w, rest) = self.params[off..].split_at_mut(o * i);
        (w, &mut rest[..o])
    }

    /// Forward pass. `cache` receives the input followed by every layer's
    /// post-activation output; the network output is its tail.
    pub fn forward<'c>(&self, input: &[f64], cache: &'c mut [f64]) -> &'c [f64] {
        debug_assert_eq!(input.len(), self.dims[0]);
        debug_assert_eq!(cache.len(), self.cache_len());
        cache[..self.dims[0]].copy_from_slice(input);
        let mut act_off = 0;
        let mut par_off = 0;
        let last = self.n_layers() - 1;
        for l in 0..self.n_layers() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let (prev, next) = cache[act_off..].split_at_mut(i);
            let w = &self.params[par_off..par_off + o * i];
            let b = &self.params[par_off + o * i..par_off + o * i + o];
            let act = if l == last {
                Activation::Identity
            } else {
                self.activation
            };
            for r in 0..o {
                let row = &w[r * i..(r + 1) * i];
                let s: f64 = row.iter().zip(prev.iter()).map(|(a, x)| a * x).sum();
                next[r] = act.apply(s + b[r]);
            }
            act_off += i;
            par_off += o * i + o;
        }
        &cache[act_off..]
    }

    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        let mut cache = vec![0.0; self.cache_len()];
        self.forward(input, &mut cache).to_vec()
    }

    /// Reverse pass for one forward evaluation.
    ///
    /// Accumulates `upstream^T d(out)/d(params)` into `grads` and writes
    /// `upstream^T d(out)/d(input)` into `d_input`.
    pub fn backward(&self, cache: &[f64], upstream: &[f64], grads: &mut [f64], d_input: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        debug_assert_eq!(upstream.len(), self.output_dim());
        let n = self.n_layers();
        let max_dim = *self.dims.iter().max().unwrap();
        let mut g = vec![0.0; max_dim];
        let mut g_prev = vec![0.0; max_dim];
        g[..upstream.len()].copy_from_slice(upstream);

        let mut act_off = self.cache_len() - self.output_dim();
        let mut par_off = self.params.len();
        for l in (0..n).rev() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            par_off -= o * i + o;
            let in_off = act_off - i;
            let x = &cache[in_off..act_off];
            let y = &cache[act_off..act_off + o];
            if l != n - 1 {
                for r in 0..o {
                    g[r] *= self.activation.grad_from_output(y[r]);
                }
            }
            let w = &self.params[par_off..par_off + o * i];
            let (gw, gb) = grads[par_off..par_off + o * i + o].split_at_mut(o * i);
            let gp = &mut g_prev[..i];
            gp.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..o {
                let gr = g[r];
                gb[r] += gr;
                if gr == 0.0 {
                    continue;
                }
                let row = &w[r * i..(r + 1) * i];
                let grow = &mut gw[r * i..(r + 1) * i];
                for j in 0..i {
                    grow[j] += gr * x[j];
                    gp[j] += gr * row[j];
                }
            }
            std::mem::swap(&mut g, &mut g_prev);
            act_off = in_off;
        }
        d_input.copy_from_slice(&g[..self.dims[0]]);
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}
