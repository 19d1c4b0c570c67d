//! Fully connected networks with hand-written reverse mode and Adam.
//!
//! Parameters live in one flat vector so optimizers and gradient checks can
//! treat them uniformly. Layer `l` stores its weight matrix row-major
//! (`out x in`) followed by its bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn grad(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Multilayer perceptron.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Per-layer pre-activations and activations from a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Cache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("forward pass ran")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// All-zero network with the given layer sizes.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "need at least input and output sizes");
        Self { sizes: sizes.to_vec(), hidden, output, params: vec![0.0; param_count(sizes)] }
    }

    /// Kaiming-uniform weights in `±sqrt(6 / fan_in)` and zero biases.
    pub fn kaiming<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes, hidden, output);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        net
    }

    /// Rebuilds a network from stored parts; `None` if the shapes disagree.
    pub fn from_parts(sizes: Vec<usize>, hidden: Activation, output: Activation, params: Vec<f64>) -> Option<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || params.len() != param_count(&sizes) {
            return None;
        }
        Some(Self { sizes, hidden, output, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> (Activation, Activation) {
        (self.hidden, self.output)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Scales the last layer's weights, e.g. to start a policy near zero output.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let n = self.sizes.len();
        let (fan_in, fan_out) = (self.sizes[n - 2], self.sizes[n - 1]);
        let start = self.params.len() - fan_out - fan_in * fan_out;
        for p in &mut self.params[start..start + fan_in * fan_out] {
            *p *= factor;
        }
    }

    /// Overwrites the last layer's bias.
    pub fn set_output_bias(&mut self, bias: &[f64]) {
        let n = self.output_dim();
        assert_eq!(bias.len(), n, "bias size");
        let len = self.params.len();
        self.params[len - n..].copy_from_slice(bias);
    }

    fn layer_act(&self, l: usize) -> Activation {
        if l + 2 == self.sizes.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).acts.pop().expect("output layer")
    }

    pub fn forward_cached(&self, x: &[f64]) -> Cache {
        assert_eq!(x.len(), self.sizes[0], "input size");
        let mut cache = Cache { acts: vec![x.to_vec()], pre: Vec::with_capacity(self.sizes.len() - 1) };
        let mut off = 0;
        for l in 0..self.sizes.len() - 1 {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &cache.acts[l];
            let act = self.layer_act(l);
            let mut z = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                z.push(b[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>());
            }
            let y = z.iter().map(|&v| act.apply(v)).collect();
            cache.pre.push(z);
            cache.acts.push(y);
            off += n_in * n_out + n_out;
        }
        cache
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    /// Returns `d loss / d input`.
    pub fn backward(&self, cache: &Cache, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut upstream = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.layer_act(l);
            let dz: Vec<f64> =
                (0..n_out).map(|j| upstream[j] * act.grad(cache.pre[l][j], cache.acts[l + 1][j])).collect();
            let o = offsets[l];
            let input = &cache.acts[l];
            let mut down = vec![0.0; n_in];
            for j in 0..n_out {
                if dz[j] == 0.0 {
                    continue;
                }
                let row = o + j * n_in;
                for i in 0..n_in {
                    grad[row + i] += dz[j] * input[i];
                    down[i] += dz[j] * self.params[row + i];
                }
                grad[o + n_in * n_out + j] += dz[j];
            }
            upstream = down;
        }
        upstream
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Adam optimizer state for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_mse_gradient_by_hand() {
        let net = Mlp::from_parts(vec![1, 1], Activation::Identity, Activation::Identity, vec![0.7, -0.2]).unwrap();
        let (x, y) = (1.5, 0.4);
        let cache = net.forward_cached(&[x]);
        let out = cache.output()[0];
        let mut g = vec![0.0; 2];
        net.backward(&cache, &[2.0 * (out - y)], &mut g);
        assert_eq!(g[0], 2.0 * (0.7 * x - 0.2 - y) * x);
        assert_eq!(g[1], 2.0 * (0.7 * x - 0.2 - y));
    }

    #[test]
    fn zero_loss_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::kaiming(&[5, 8, 3], Activation::Tanh, Activation::Identity, &mut rng);
        let cache = net.forward_cached(&[0.1, 0.2, -0.3, 0.4, 0.0]);
        let mut g = vec![0.0; net.n_params()];
        net.backward(&cache, &[0.0; 3], &mut g);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn kaiming_bounds_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sizes = [40, 50, 50, 4];
        let net = Mlp::kaiming(&sizes, Activation::Relu, Activation::Tanh, &mut rng);
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            assert!(net.params()[off..off + w[0] * w[1]].iter().all(|p| p.abs() <= bound));
            off += w[0] * w[1];
            assert!(net.params()[off..off + w[1]].iter().all(|p| *p == 0.0));
            off += w[1];
        }
        assert_eq!(off, net.n_params());
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3);
    }
}
