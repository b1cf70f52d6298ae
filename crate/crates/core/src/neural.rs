//! Small feed-forward networks with hand-written backpropagation.
//!
//! Networks own only their architecture. Parameters live in a flat slice
//! (a window of the learner's [`ParamVector`](crate::params::ParamVector)),
//! laid out layer by layer as a row-major `out x in` weight matrix followed
//! by the `out` biases. Hidden layers use the rectifier, the output layer is
//! affine.

use rand::Rng;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    widths: Vec<usize>,
}

/// Activation record of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    widths: Vec<usize>,
    /// Input to each layer (the network input, then post-rectifier hidden values).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
}

#[inline]
fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

// Subgradient at exactly 0 is 0, matching `relu`'s inactive branch.
#[inline]
fn relu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

impl Mlp {
    /// `widths` lists the input width, every hidden width and the output width.
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        Ok(Self { widths })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_len(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Weight initialisation: uniform Glorot weights, zero biases, and the
    /// final biases set to `output_bias`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, output_bias: f64) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_len());
        let last = self.num_layers() - 1;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-bound..bound));
            }
            let bias = if l == last { output_bias } else { 0.0 };
            params.extend(std::iter::repeat(bias).take(fan_out));
        }
        params
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        check_dim("network parameters", self.param_len(), params.len())?;
        check_dim("network input", self.input_dim(), input.len())?;
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut current = input.to_vec();
        let mut offset = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &params[offset..offset + n_in * n_out];
            let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut z = bias.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                *zo = row.iter().zip(&current).fold(*zo, |acc, (a, b)| acc + a * b);
            }
            inputs.push(current);
            if l + 1 < layers {
                current = z.iter().map(|&v| relu(v)).collect();
                pre.push(z);
            } else {
                current = z;
            }
        }
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok((
            current,
            Tape {
                widths: self.widths.clone(),
                inputs,
                pre,
            },
        ))
    }

    /// Gradients of `<upstream, output>`. Parameter gradients are accumulated
    /// into `param_grad` when given; the input gradient is returned.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        upstream: &[f64],
        mut param_grad: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        if tape.widths != self.widths || tape.inputs.len() != self.num_layers() {
            return Err(Error::StaleTape(format!(
                "tape recorded for widths {:?}, network has {:?}",
                tape.widths, self.widths
            )));
        }
        check_dim("network parameters", self.param_len(), params.len())?;
        check_dim("upstream gradient", self.output_dim(), upstream.len())?;
        if let Some(g) = param_grad.as_deref() {
            check_dim("parameter gradient", self.param_len(), g.len())?;
        }
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut offset = 0;
        for w in self.widths.windows(2) {
            offsets.push(offset);
            offset += w[1] * w[0] + w[1];
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = offsets[l];
            let weights = &params[off..off + n_in * n_out];
            let input = &tape.inputs[l];
            if let Some(g) = param_grad.as_deref_mut() {
                let (gw, gb) = g[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        for (gwi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                            *gwi += d * xi;
                        }
                    }
                    gb[o] += d;
                }
            }
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    for (ni, wi) in next.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *ni += d * wi;
                    }
                }
            }
            if l > 0 {
                for (ni, z) in next.iter_mut().zip(&tape.pre[l - 1]) {
                    *ni *= relu_grad(*z);
                }
            }
            delta = next;
        }
        Ok(delta)
    }
}

/// Gaussian output of a proposal: mean and per-coordinate log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStep {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// Two independent networks giving the mean and the diagonal log standard
/// deviation of a Gaussian proposal from a feature vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaussianProposalHead {
    mean_net: Mlp,
    log_std_net: Mlp,
}

/// Log-std outputs are clamped to `[-LOG_STD_BOUND, LOG_STD_BOUND]`; the
/// gradient through a clamped coordinate is zero.
pub const LOG_STD_BOUND: f64 = 7.0;

#[derive(Debug, Clone)]
pub struct HeadTape {
    mean: Tape,
    log_std: Tape,
    clamped: Vec<bool>,
}

impl GaussianProposalHead {
    /// One hidden layer of `hidden` units per network.
    pub fn new(input_dim: usize, output_dim: usize, hidden: usize) -> Result<Self> {
        Self::with_hidden_layers(input_dim, output_dim, &[hidden])
    }

    pub fn with_hidden_layers(input_dim: usize, output_dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(output_dim);
        Ok(Self {
            mean_net: Mlp::new(widths.clone())?,
            log_std_net: Mlp::new(widths)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.mean_net.output_dim()
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean_net
    }

    pub fn log_std_net(&self) -> &Mlp {
        &self.log_std_net
    }

    pub fn param_len(&self) -> usize {
        self.mean_net.param_len() + self.log_std_net.param_len()
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.mean_net.param_len())
    }

    /// Initial parameters; the log-std network starts at log(0.5).
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = self.mean_net.init_params(rng, 0.0);
        p.extend(self.log_std_net.init_params(rng, 0.5f64.ln()));
        p
    }

    pub fn forward(&self, params: &[f64], features: &[f64]) -> Result<(GaussianStep, HeadTape)> {
        check_dim("proposal head parameters", self.param_len(), params.len())?;
        let (pm, ps) = self.split(params);
        let (mean, mean_tape) = self.mean_net.forward(pm, features)?;
        let (mut log_std, std_tape) = self.log_std_net.forward(ps, features)?;
        let clamped = log_std
            .iter_mut()
            .map(|s| {
                let c = s.clamp(-LOG_STD_BOUND, LOG_STD_BOUND);
                let hit = c != *s;
                *s = c;
                hit
            })
            .collect();
        Ok((
            GaussianStep { mean, log_std },
            HeadTape {
                mean: mean_tape,
                log_std: std_tape,
                clamped,
            },
        ))
    }

    /// Backpropagates upstream gradients on the mean and log-std outputs.
    /// Returns the gradient with respect to the features.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &HeadTape,
        d_mean: &[f64],
        d_log_std: &[f64],
        param_grad: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        let (pm, ps) = self.split(params);
        let (gm, gs) = match param_grad {
            Some(g) => {
                check_dim("proposal head gradient", self.param_len(), g.len())?;
                let (a, b) = g.split_at_mut(self.mean_net.param_len());
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        let mut input_grad = self.mean_net.backward(pm, &tape.mean, d_mean, gm)?;
        let d_log_std: Vec<f64> = d_log_std
            .iter()
            .zip(&tape.clamped)
            .map(|(&d, &hit)| if hit { 0.0 } else { d })
            .collect();
        let from_std = self.log_std_net.backward(ps, &tape.log_std, &d_log_std, gs)?;
        input_grad.iter_mut().zip(from_std).for_each(|(a, b)| *a += b);
        Ok(input_grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line re-evaluation used as an oracle for `forward`.
    fn naive_forward(widths: &[usize], params: &[f64], input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut off = 0;
        for l in 0..widths.len() - 1 {
            let (ni, no) = (widths[l], widths[l + 1]);
            let mut y = vec![0.0; no];
            for o in 0..no {
                let mut acc = params[off + ni * no + o];
                for i in 0..ni {
                    acc += params[off + o * ni + i] * x[i];
                }
                y[o] = if l + 2 < widths.len() { acc.max(0.0) } else { acc };
            }
            off += ni * no + no;
            x = y;
        }
        x
    }

    #[test]
    fn identity_layer_then_rectifier() {
        let net = Mlp::new(vec![2, 2, 2]).unwrap();
        // hidden = relu(I x), output = I hidden
        let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let (out, _) = net.forward(&params, &[1.0, -1.0]).unwrap();
        assert_eq!(out, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let net = Mlp::new(vec![3, 2]).unwrap();
        let params = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.5, -1.0];
        let (out, _) = net.forward(&params, &[4.0, -7.0, 0.3]).unwrap();
        assert_eq!(out, vec![2.5, -1.0]);
    }

    #[test]
    fn forward_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let widths = vec![rng.gen_range(1..5), rng.gen_range(1..8), rng.gen_range(1..4)];
            let net = Mlp::new(widths.clone()).unwrap();
            let params: Vec<f64> = (0..net.param_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let input: Vec<f64> = (0..widths[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (out, _) = net.forward(&params, &input).unwrap();
            assert_eq!(out, naive_forward(&widths, &params, &input));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(vec![3, 6, 2]).unwrap();
        let params = net.init_params(&mut rng, 0.1);
        let (_, tape) = net.forward(&params, &[0.2, -0.4, 1.0]).unwrap();
        let mut g = vec![0.0; net.param_len()];
        let gi = net.backward(&params, &tape, &[0.0, 0.0], Some(&mut g)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_linear_chain_rule() {
        let net = Mlp::new(vec![1, 1]).unwrap();
        let (w, b, x) = (1.7, -0.3, 2.5);
        let (out, tape) = net.forward(&[w, b], &[x]).unwrap();
        assert_eq!(out, vec![w * x + b]);
        let mut g = vec![0.0; 2];
        let gi = net.backward(&[w, b], &tape, &[1.0], Some(&mut g)).unwrap();
        assert_eq!(g, vec![x, 1.0]);
        assert_eq!(gi, vec![w]);
    }

    #[test]
    fn mismatched_tape_is_rejected() {
        let a = Mlp::new(vec![2, 3, 1]).unwrap();
        let b = Mlp::new(vec![2, 4, 1]).unwrap();
        let pa = vec![0.1; a.param_len()];
        let pb = vec![0.1; b.param_len()];
        let (_, tape) = a.forward(&pa, &[1.0, 1.0]).unwrap();
        assert!(matches!(b.backward(&pb, &tape, &[1.0], None), Err(Error::StaleTape(_))));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Mlp::new(vec![2, 1]).unwrap();
        assert!(net.forward(&[0.0; 3], &[1.0]).is_err());
    }

    #[test]
    fn head_init_sets_log_std_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = GaussianProposalHead::new(3, 2, 4).unwrap();
        let p = head.init_params(&mut rng);
        assert_eq!(p.len(), head.param_len());
        let n = p.len();
        assert_eq!(&p[n - 2..], &[0.5f64.ln(), 0.5f64.ln()]);
    }

    #[test]
    fn log_std_is_clamped_with_zero_gradient() {
        let head = GaussianProposalHead::new(1, 1, 1).unwrap();
        // mean net: w1, b1, w2, b2; log-std net likewise, bias 20 on the output
        let params = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 20.0];
        let (step, tape) = head.forward(&params, &[2.0]).unwrap();
        assert_eq!(step.log_std, vec![LOG_STD_BOUND]);
        let mut g = vec![0.0; params.len()];
        head.backward(&params, &tape, &[0.0], &[1.0], Some(&mut g)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
