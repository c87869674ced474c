//! Dense feed-forward networks with exact backpropagation, Adam, and Polyak
//! averaging.
//!
//! Parameters live in one flat buffer laid out layer by layer as
//! `[W0, b0, W1, b1, ...]`, each weight matrix `out x in` in row-major order.
//! Optimizers, target averaging and checkpoints all operate on that buffer.

use rand::Rng;

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
    hidden: Activation,
    output: Activation,
}

/// Layer activations recorded by [`Mlp::forward_trace`]; `activations[0]` is
/// the input and `activations[l + 1]` the output of layer `l`.
#[derive(Clone, Debug)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("trace always holds the input")
    }
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Contract(format!(
            "network needs at least an input and an output width, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Contract(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}

impl Mlp {
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        validate_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
            hidden,
            output,
        })
    }

    /// Weights and biases drawn uniformly from `±1/sqrt(fan_in)` per layer.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden, output)?;
        let mut offset = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out + fan_out] {
                *p = rng.random_range(-bound..=bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_dims(dims)?;
        check_dim("parameter buffer", param_count(dims), params.len())?;
        Ok(Self {
            dims: dims.to_vec(),
            params,
            hidden,
            output,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.dims[..=layer])
    }

    /// Row-major `out x in` weight matrix of `layer`.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let start = self.layer_offset(layer);
        &self.params[start..start + self.dims[layer] * self.dims[layer + 1]]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let start = self.layer_offset(layer);
        let len = self.dims[layer] * self.dims[layer + 1];
        &mut self.params[start..start + len]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let start = self.layer_offset(layer) + self.dims[layer] * self.dims[layer + 1];
        &self.params[start..start + self.dims[layer + 1]]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        let start = self.layer_offset(layer) + self.dims[layer] * self.dims[layer + 1];
        let len = self.dims[layer + 1];
        &mut self.params[start..start + len]
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.dims == other.dims && self.hidden == other.hidden && self.output == other.output
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut current = input.to_vec();
        let mut offset = 0;
        for layer in 0..self.num_layers() {
            let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
            current = self.dense(layer, offset, n_in, n_out, &current);
            offset += n_in * n_out + n_out;
        }
        Ok(current)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut activations = Vec::with_capacity(self.dims.len());
        activations.push(input.to_vec());
        let mut offset = 0;
        for layer in 0..self.num_layers() {
            let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
            let next = self.dense(layer, offset, n_in, n_out, &activations[layer]);
            activations.push(next);
            offset += n_in * n_out + n_out;
        }
        Ok(Trace { activations })
    }

    fn dense(&self, layer: usize, offset: usize, n_in: usize, n_out: usize, x: &[f64]) -> Vec<f64> {
        let act = self.activation_of(layer);
        let w = &self.params[offset..offset + n_in * n_out];
        let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        w.chunks_exact(n_in)
            .zip(b)
            .map(|(row, bias)| {
                let z = row.iter().zip(x).fold(*bias, |acc, (wi, xi)| acc + wi * xi);
                act.apply(z)
            })
            .collect()
    }

    /// Backpropagates `upstream` (the gradient of some scalar with respect to
    /// the network output) through a recorded forward pass.
    ///
    /// Parameter gradients are *added* into `param_grads` when it is given, so
    /// a batch can be accumulated into one buffer. Returns the gradient with
    /// respect to the input.
    pub fn backward_accumulate(
        &self,
        trace: &Trace,
        upstream: &[f64],
        mut param_grads: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        check_dim("upstream gradient", self.output_dim(), upstream.len())?;
        check_dim("trace depth", self.dims.len(), trace.activations.len())?;
        if let Some(g) = param_grads.as_deref() {
            check_dim("parameter gradient buffer", self.params.len(), g.len())?;
        }

        let mut delta: Vec<f64> = upstream.to_vec();
        for layer in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
            let offset = self.layer_offset(layer);
            let act = self.activation_of(layer);
            let out = &trace.activations[layer + 1];
            let x = &trace.activations[layer];

            for (d, y) in delta.iter_mut().zip(out) {
                *d *= act.derivative_from_output(*y);
            }

            if let Some(g) = param_grads.as_deref_mut() {
                let (gw, gb) = g[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for ((row, gbi), d) in gw.chunks_exact_mut(n_in).zip(gb.iter_mut()).zip(&delta) {
                    *gbi += d;
                    if *d != 0.0 {
                        for (gij, xj) in row.iter_mut().zip(x) {
                            *gij += d * xj;
                        }
                    }
                }
            }

            let w = &self.params[offset..offset + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for (row, d) in w.chunks_exact(n_in).zip(&delta) {
                if *d != 0.0 {
                    for (nj, wij) in next.iter_mut().zip(row) {
                        *nj += d * wij;
                    }
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Exact gradients of `upstream . f(input)` with respect to every parameter
    /// and to the input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(input)?;
        let mut grads = vec![0.0; self.params.len()];
        let input_grad = self.backward_accumulate(&trace, upstream, Some(&mut grads))?;
        Ok((grads, input_grad))
    }
}

/// Adam optimizer state for one parameter buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam descent step.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim("adam parameters", self.first_moment.len(), params.len())?;
        check_dim("adam gradients", self.first_moment.len(), grads.len())?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// `target <- rho * target + (1 - rho) * online`, parameter by parameter.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, rho: f64) -> Result<()> {
    if !target.same_architecture(online) {
        return Err(Error::Contract(format!(
            "polyak update between different architectures {:?} and {:?}",
            target.dims, online.dims
        )));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Contract(format!("polyak rho {rho} outside [0, 1]")));
    }
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        *t = rho * *t + (1.0 - rho) * o;
    }
    Ok(())
}
