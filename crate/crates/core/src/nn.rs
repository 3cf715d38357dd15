//! Minimal dense networks with explicit gradients, plus the two
//! parameter-update rules used by the training phases.
//!
//! Parameters live in one flat buffer per network, laid out layer by
//! layer as `weights (out*in, row-major)` then `biases (out)`. Gradient
//! buffers share the layout, so optimizers are plain elementwise loops.
//! Hidden layers use the rectifier, the output layer is linear.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Fully connected network with rectifier hidden layers and linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Forward-pass scratch: per-layer inputs and pre-activations, reused
/// across calls to avoid reallocation in training loops.
#[derive(Debug, Clone)]
pub struct Trace {
    io: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    d_cur: Vec<f64>,
    d_next: Vec<f64>,
}

impl Trace {
    pub fn new(net: &DenseNet) -> Self {
        let io = net.sizes.iter().map(|&n| vec![0.0; n]).collect();
        let pre = net.sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        let widest = *net.sizes.iter().max().unwrap();
        Trace {
            io,
            pre,
            d_cur: vec![0.0; widest],
            d_next: vec![0.0; widest],
        }
    }

    /// Network output recorded by the last `forward_trace`.
    pub fn output(&self) -> &[f64] {
        self.io.last().unwrap()
    }
}

impl DenseNet {
    /// Total parameter count for a size chain.
    fn count_params(sizes: &[usize]) -> usize {
        sizes
            .windows(2)
            .map(|pair| pair[0] * pair[1] + pair[1])
            .sum()
    }

    /// Glorot-uniform initialization: weights in
    /// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new_glorot(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must contain at least two positive entries, got {sizes:?}"
            )));
        }
        let mut params = Vec::with_capacity(Self::count_params(sizes));
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.uniform(-bound, bound));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(DenseNet {
            sizes: sizes.to_vec(),
            params,
        })
    }

    /// Build from an explicit flat parameter buffer (layout as in module docs).
    pub fn from_flat(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must contain at least two positive entries, got {sizes:?}"
            )));
        }
        let expected = Self::count_params(sizes);
        if params.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "flat parameter buffer".into(),
                expected,
                got: params.len(),
            });
        }
        Ok(DenseNet {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zeroed gradient buffer matching this network's layout.
    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        // yields (in_dim, out_dim, weight offset, bias offset)
        let mut offset = 0;
        self.sizes.windows(2).map(move |pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w_off = offset;
            let b_off = offset + fan_in * fan_out;
            offset = b_off + fan_out;
            (fan_in, fan_out, w_off, b_off)
        })
    }

    /// Evaluate the network, recording per-layer state into `trace`.
    pub fn forward_trace(&self, input: &[f64], trace: &mut Trace) -> Result<()> {
        if input.len() != self.sizes[0] {
            return Err(Error::ShapeMismatch {
                context: "network input".into(),
                expected: self.sizes[0],
                got: input.len(),
            });
        }
        trace.io[0].copy_from_slice(input);
        let last = self.sizes.len() - 2;
        for (l, (fan_in, fan_out, w_off, b_off)) in self.layers().enumerate() {
            let (src, rest) = trace.io.split_at_mut(l + 1);
            let src = &src[l];
            let dst = &mut rest[0];
            let pre = &mut trace.pre[l];
            for o in 0..fan_out {
                let row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                let mut acc = self.params[b_off + o];
                for (w, x) in row.iter().zip(src.iter()) {
                    acc += w * x;
                }
                pre[o] = acc;
                dst[o] = if l == last { acc } else { acc.max(0.0) };
            }
        }
        Ok(())
    }

    /// Evaluate the network on a fresh trace.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::new(self);
        self.forward_trace(input, &mut trace)?;
        Ok(trace.output().to_vec())
    }

    /// Backpropagate `d_output` (the loss gradient at the network output)
    /// through the trace of the latest forward pass.
    ///
    /// Parameter gradients are accumulated into `grads`; when `d_input`
    /// is given it receives the loss gradient at the network input.
    pub fn backward_into(
        &self,
        trace: &mut Trace,
        d_output: &[f64],
        grads: &mut [f64],
        d_input: Option<&mut Vec<f64>>,
    ) {
        debug_assert_eq!(d_output.len(), self.output_len());
        debug_assert_eq!(grads.len(), self.params.len());
        let layer_meta: Vec<(usize, usize, usize, usize)> = self.layers().collect();
        let num_layers = layer_meta.len();
        trace.d_cur[..d_output.len()].copy_from_slice(d_output);
        for l in (0..num_layers).rev() {
            let (fan_in, fan_out, w_off, b_off) = layer_meta[l];
            let src = &trace.io[l];
            let want_d_in = l > 0 || d_input.is_some();
            trace.d_next[..fan_in].fill(0.0);
            for o in 0..fan_out {
                let d = trace.d_cur[o];
                grads[b_off + o] += d;
                if d == 0.0 {
                    continue;
                }
                let w_row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                let g_row = &mut grads[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (g, x) in g_row.iter_mut().zip(src.iter()) {
                    *g += d * x;
                }
                if want_d_in {
                    for (dn, w) in trace.d_next[..fan_in].iter_mut().zip(w_row.iter()) {
                        *dn += d * w;
                    }
                }
            }
            if l > 0 {
                // rectifier gate of the upstream hidden layer
                for (d, p) in trace.d_next[..fan_in]
                    .iter_mut()
                    .zip(trace.pre[l - 1].iter())
                {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            std::mem::swap(&mut trace.d_cur, &mut trace.d_next);
        }
        if let Some(d_in) = d_input {
            d_in.clear();
            d_in.extend_from_slice(&trace.d_cur[..self.sizes[0]]);
        }
    }

    /// Loss and parameter gradients of the mean squared error against `target`.
    pub fn grad(&self, input: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        if target.len() != self.output_len() {
            return Err(Error::ShapeMismatch {
                context: "gradient target".into(),
                expected: self.output_len(),
                got: target.len(),
            });
        }
        let mut trace = Trace::new(self);
        self.forward_trace(input, &mut trace)?;
        let out = trace.output();
        let n = out.len() as f64;
        let loss: f64 = out
            .iter()
            .zip(target.iter())
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("dense-net loss".into()));
        }
        let d_out: Vec<f64> = out
            .iter()
            .zip(target.iter())
            .map(|(o, t)| 2.0 * (o - t) / n)
            .collect();
        let mut grads = self.zero_grads();
        self.backward_into(&mut trace, &d_out, &mut grads, None);
        Ok((loss, grads))
    }
}

/// Bias-corrected adaptive-moment optimizer state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(lr: f64, num_params: usize) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }
}

/// One adaptive-moment update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) {
    debug_assert_eq!(params.len(), state.m.len());
    debug_assert_eq!(params.len(), grads.len());
    state.step += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let corr1 = 1.0 - b1.powi(state.step as i32);
    let corr2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / corr1;
        let v_hat = state.v[i] / corr2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

/// Plain gradient step `params -= eta * grads`, in place.
pub fn sgd_step(params: &mut [f64], grads: &[f64], eta: f64) {
    debug_assert_eq!(params.len(), grads.len());
    for (p, g) in params.iter_mut().zip(grads.iter()) {
        *p -= eta * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::from_flat(&[3, 4, 2], vec![0.0; 3 * 4 + 4 + 4 * 2 + 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_affine_layer() {
        // W = [[2]], b = [1], x = [3] -> 7
        let net = DenseNet::from_flat(&[1, 1], vec![2.0, 1.0]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn rectifier_blocks_negative_hidden_units() {
        // hidden pre-activation is -2 => clamped to 0 => output is just bias
        let net = DenseNet::from_flat(&[1, 1, 1], vec![-2.0, 0.0, 5.0, 0.25]).unwrap();
        assert_eq!(net.forward(&[1.0]).unwrap(), vec![0.25]);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let net = DenseNet::from_flat(&[2, 1], vec![1.0, 1.0, 0.0]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        assert!(net.grad(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn perfect_prediction_zeroes_gradients() {
        let net = DenseNet::from_flat(&[1, 1], vec![2.0, 0.0]).unwrap();
        let (loss, grads) = net.grad(&[3.0], &[6.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hand_gradient_one_parameter() {
        // y = w*x, w=1, x=2, target 0: loss 4, dL/dw = 8, dL/db = 4
        let net = DenseNet::from_flat(&[1, 1], vec![1.0, 0.0]).unwrap();
        let (loss, grads) = net.grad(&[2.0], &[0.0]).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(grads[0], 8.0);
        assert_eq!(grads[1], 4.0);
    }

    /// Central finite differences, the independent oracle for backprop.
    fn fd_gradient(net: &DenseNet, input: &[f64], target: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let mut out = Vec::with_capacity(net.num_params());
        let loss_of = |n: &DenseNet| {
            let y = n.forward(input).unwrap();
            y.iter()
                .zip(target.iter())
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
                / y.len() as f64
        };
        for i in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            out.push((loss_of(&plus) - loss_of(&minus)) / (2.0 * h));
        }
        out
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = Rng::new(1234);
        for trial in 0..20 {
            let net = DenseNet::new_glorot(&[4, 8, 3], &mut rng).unwrap();
            let input: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let target: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let (_, analytic) = net.grad(&input, &target).unwrap();
            let numeric = fd_gradient(&net, &input, &target);
            for (i, (a, n)) in analytic.iter().zip(numeric.iter()).enumerate() {
                let scale = a.abs().max(n.abs()).max(1e-6);
                let rel = (a - n).abs() / scale;
                assert!(rel < 1e-4, "trial {trial} param {i}: {a} vs {n} (rel {rel})");
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut params = vec![1.5, -0.25, 3.0];
        let before = params.clone();
        let mut state = AdamState::new(0.01, 3);
        for _ in 0..5 {
            adam_step(&mut state, &mut params, &[0.0, 0.0, 0.0]);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_magnitude_near_learning_rate() {
        // closed form at t=1: m_hat = g, v_hat = g^2,
        // delta = lr * g / (|g| + eps) ~= lr * sign(g)
        let mut params = vec![0.7];
        let mut state = AdamState::new(0.01, 1);
        adam_step(&mut state, &mut params, &[0.35]);
        let delta = 0.7 - params[0];
        let expected = 0.01 * 0.35 / (0.35 + 1e-8);
        assert!((delta - expected).abs() < 1e-15, "delta {delta}");
        assert!((delta - 0.01).abs() < 1e-6);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut params = vec![1.0, 2.0];
            let mut state = AdamState::new(0.1, 2);
            for _ in 0..10 {
                adam_step(&mut state, &mut params, &[0.5, -0.25]);
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sgd_cases() {
        let mut p = vec![1.0];
        sgd_step(&mut p, &[2.0], 0.0);
        assert_eq!(p, vec![1.0], "eta 0 is the identity");
        sgd_step(&mut p, &[2.0], 0.1);
        assert!((p[0] - 0.8).abs() < 1e-15);
        let mut v = vec![1.0, -1.0, 0.5];
        sgd_step(&mut v, &[2.0, 2.0, 2.0], 0.1);
        assert!((v[0] - 0.8).abs() < 1e-15);
        assert!((v[1] + 1.2).abs() < 1e-15);
        assert!((v[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn forward_is_pure_and_bitwise_stable() {
        let mut rng = Rng::new(99);
        let net = DenseNet::new_glorot(&[5, 16, 2], &mut rng).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn glorot_respects_bound() {
        let mut rng = Rng::new(5);
        let net = DenseNet::new_glorot(&[10, 10], &mut rng).unwrap();
        let bound = (6.0 / 20.0_f64).sqrt();
        for &w in &net.params()[..100] {
            assert!(w.abs() <= bound);
        }
        // biases are zero
        assert!(net.params()[100..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn serde_round_trip() {
        let mut rng = Rng::new(8);
        let net = DenseNet::new_glorot(&[3, 4, 2], &mut rng).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: DenseNet = serde_json::from_str(&json).unwrap();
        assert_eq!(net, back);
    }
}
