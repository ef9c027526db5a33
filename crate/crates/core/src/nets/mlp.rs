//! Fully connected network with batched forward and reverse-mode passes.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (`fan_in x fan_out`, row-major) followed by the bias.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::linalg::{gemm, Matrix, View};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`
    #[default]
    Silu,
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// He-style initialisation for hidden layers; the output layer starts
    /// small so heads begin near their neutral values.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(param_count(sizes));
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = if l + 1 == layers {
                0.1 / (fan_in as f64).sqrt()
            } else {
                (2.0 / fan_in as f64).sqrt()
            };
            for _ in 0..fan_in * fan_out {
                let z: f64 = rng.sample(StandardNormal);
                params.push(std * z);
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        }
    }

    pub fn from_params(sizes: &[usize], activation: Activation, params: Vec<f64>) -> Option<Self> {
        if sizes.len() < 2 || params.len() != param_count(sizes) {
            return None;
        }
        Some(Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Offsets of (weights, bias) for layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let start = param_count(&self.sizes[..=l]);
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }

    fn affine(&self, l: usize, input: &Matrix) -> Matrix {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let (w_off, b_off) = self.offsets(l);
        let rows = input.rows();
        let mut out = Matrix::zeros(rows, fan_out);
        let bias = &self.params[b_off..b_off + fan_out];
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(bias);
        }
        let w = View::new(&self.params[w_off..b_off], fan_in, fan_out);
        gemm(1.0, View::of(input), false, w, false, 1.0, out.as_mut_slice(), fan_out);
        out
    }

    fn activate(&self, pre: &Matrix) -> Matrix {
        let act = self.activation;
        let data = pre.as_slice().iter().map(|&x| act.apply(x)).collect();
        Matrix::from_vec(pre.rows(), pre.cols(), data)
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, input: &Matrix) -> Matrix {
        assert_eq!(input.cols(), self.input_dim(), "network input width");
        let mut h = input.clone();
        for l in 0..self.num_layers() {
            let z = self.affine(l, &h);
            h = if l + 1 == self.num_layers() {
                z
            } else {
                self.activate(&z)
            };
        }
        h
    }

    pub fn forward(&self, input: &Matrix) -> ForwardCache {
        assert_eq!(input.cols(), self.input_dim(), "network input width");
        let hidden = self.num_layers() - 1;
        let mut pre = Vec::with_capacity(hidden);
        let mut post = Vec::with_capacity(hidden);
        for l in 0..hidden {
            let z = self.affine(l, post.last().unwrap_or(input));
            post.push(self.activate(&z));
            pre.push(z);
        }
        let output = self.affine(hidden, post.last().unwrap_or(input));
        ForwardCache {
            input: input.clone(),
            pre,
            post,
            output,
        }
    }

    /// Accumulate `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        assert_eq!(d_out.rows(), cache.output.rows());
        assert_eq!(d_out.cols(), self.output_dim());
        let mut dz = d_out.clone();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w_off, b_off) = self.offsets(l);
            let h_prev = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            gemm(
                1.0,
                View::of(h_prev),
                true,
                View::of(&dz),
                false,
                1.0,
                &mut grad[w_off..b_off],
                fan_out,
            );
            let db = &mut grad[b_off..b_off + fan_out];
            for r in 0..dz.rows() {
                for (g, d) in db.iter_mut().zip(dz.row(r)) {
                    *g += d;
                }
            }
            if l > 0 {
                let w = View::new(&self.params[w_off..b_off], fan_in, fan_out);
                let mut dh = Matrix::zeros(dz.rows(), fan_in);
                gemm(1.0, View::of(&dz), false, w, true, 0.0, dh.as_mut_slice(), fan_in);
                let act = self.activation;
                for (d, &z) in dh.as_mut_slice().iter_mut().zip(cache.pre[l - 1].as_slice()) {
                    *d *= act.derivative(z);
                }
                dz = dh;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[3, 4, 2], Activation::Silu, &mut rng);
        assert_eq!(net.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(net.offsets(1), (16, 24));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Silu, Activation::Tanh, Activation::Softplus] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut net = Mlp::new(&[3, 5, 4, 2], act, &mut rng);
            let input = Matrix::from_vec(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect());
            // loss = sum(output * weights)
            let weights: Vec<f64> = (0..8).map(|i| 0.5 - 0.2 * i as f64).collect();
            let loss = |n: &Mlp| -> f64 {
                n.predict(&input)
                    .as_slice()
                    .iter()
                    .zip(&weights)
                    .map(|(o, w)| o * w)
                    .sum()
            };
            let cache = net.forward(&input);
            let mut grad = vec![0.0; net.num_params()];
            net.backward(&cache, &Matrix::from_vec(4, 2, weights.clone()), &mut grad);
            let h = 1e-6;
            for p in 0..net.num_params() {
                let orig = net.params[p];
                net.params[p] = orig + h;
                let up = loss(&net);
                net.params[p] = orig - h;
                let down = loss(&net);
                net.params[p] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grad[p]).abs() < 1e-7 * (1.0 + fd.abs()), "{act:?} param {p}: {fd} vs {}", grad[p]);
            }
        }
    }

    #[test]
    fn forward_and_predict_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[2, 8, 8, 3], Activation::Silu, &mut rng);
        let input = Matrix::from_vec(2, 2, vec![0.1, -0.4, 2.0, 0.3]);
        assert_eq!(net.forward(&input).output(), &net.predict(&input));
    }

    #[test]
    fn stable_scalar_functions() {
        assert!((sigmoid(-800.0)).abs() < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(softplus(100.0), 100.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
