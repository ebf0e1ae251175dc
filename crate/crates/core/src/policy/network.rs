//! Policy and value MLPs with hand-written backpropagation.
//!
//! Policy: `Fc → tanh → Fc → tanh → Fc → softmax`.
//! Value: `Fc → tanh → Fc`.
//!
//! Weights are stored `inputs × outputs` row-major, so a layer computes
//! `z = Wᵀ x + b`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_HIDDEN: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `inputs × outputs`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = (0..inputs * outputs).map(|_| rng.random_range(-limit..=limit)).collect();
        Dense { inputs, outputs, weight, bias: vec![0.0; outputs] }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        let mut z = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weight[i * self.outputs..(i + 1) * self.outputs];
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += xi * w;
            }
        }
        z
    }

    /// Accumulates `∂L/∂W`, `∂L/∂b` into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &[f64], dz: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weight[i * self.outputs..(i + 1) * self.outputs];
            dx[i] = linalg::dot(row, dz);
            if xi != 0.0 {
                let grow = &mut grad.weight[i * self.outputs..(i + 1) * self.outputs];
                for (g, d) in grow.iter_mut().zip(dz) {
                    *g += xi * d;
                }
            }
        }
        for (g, d) in grad.bias.iter_mut().zip(dz) {
            *g += d;
        }
        dx
    }

    pub fn weight_at(&self, i: usize, j: usize) -> f64 {
        self.weight[i * self.outputs + j]
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|x| x.is_finite())
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.inputs == other.inputs && self.outputs == other.outputs
    }
}

fn tanh_all(z: Vec<f64>) -> Vec<f64> {
    z.into_iter().map(f64::tanh).collect()
}

/// `∂L/∂z` for `h = tanh(z)` given `∂L/∂h`.
fn tanh_backward(h: &[f64], dh: &[f64]) -> Vec<f64> {
    h.iter().zip(dh).map(|(h, d)| d * (1.0 - h * h)).collect()
}

/// Pulls a gradient w.r.t. softmax outputs back to the logits.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let inner = linalg::dot(probs, dprobs);
    probs.iter().zip(dprobs).map(|(p, g)| p * (g - inner)).collect()
}

/// Parameter tensors in a fixed order, for optimizers and serialization.
pub trait Tensors {
    fn tensors(&self) -> Vec<&Vec<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>>;

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParameters {
    pub l1: Dense,
    pub l2: Dense,
    pub l3: Dense,
}

impl PolicyParameters {
    pub fn zeros(d_state: usize, hidden: usize, vocab: usize) -> Self {
        PolicyParameters {
            l1: Dense::zeros(d_state, hidden),
            l2: Dense::zeros(hidden, hidden),
            l3: Dense::zeros(hidden, vocab),
        }
    }

    pub fn init<R: Rng + ?Sized>(d_state: usize, hidden: usize, vocab: usize, rng: &mut R) -> Self {
        PolicyParameters {
            l1: Dense::glorot(d_state, hidden, rng),
            l2: Dense::glorot(hidden, hidden, rng),
            l3: Dense::glorot(hidden, vocab, rng),
        }
    }

    pub fn d_state(&self) -> usize {
        self.l1.inputs
    }

    pub fn hidden(&self) -> usize {
        self.l1.outputs
    }

    pub fn vocab_size(&self) -> usize {
        self.l3.outputs
    }

    /// Zero tensor of the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        PolicyParameters::zeros(self.d_state(), self.hidden(), self.vocab_size())
    }

    pub fn check_shapes(&self) -> Result<()> {
        let ok = self.l2.inputs == self.l1.outputs
            && self.l2.outputs == self.l1.outputs
            && self.l3.inputs == self.l2.outputs
            && [&self.l1, &self.l2, &self.l3]
                .iter()
                .all(|l| l.weight.len() == l.inputs * l.outputs && l.bias.len() == l.outputs);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("policy layers do not chain".into()))
        }
    }
}

impl Tensors for PolicyParameters {
    fn tensors(&self) -> Vec<&Vec<f64>> {
        vec![&self.l1.weight, &self.l1.bias, &self.l2.weight, &self.l2.bias, &self.l3.weight, &self.l3.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.l1.weight,
            &mut self.l1.bias,
            &mut self.l2.weight,
            &mut self.l2.bias,
            &mut self.l3.weight,
            &mut self.l3.bias,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueParameters {
    pub l1: Dense,
    pub l2: Dense,
}

impl ValueParameters {
    pub fn zeros(d_state: usize, hidden: usize) -> Self {
        ValueParameters { l1: Dense::zeros(d_state, hidden), l2: Dense::zeros(hidden, 1) }
    }

    pub fn init<R: Rng + ?Sized>(d_state: usize, hidden: usize, rng: &mut R) -> Self {
        ValueParameters { l1: Dense::glorot(d_state, hidden, rng), l2: Dense::glorot(hidden, 1, rng) }
    }

    pub fn d_state(&self) -> usize {
        self.l1.inputs
    }

    pub fn hidden(&self) -> usize {
        self.l1.outputs
    }

    pub fn zeros_like(&self) -> Self {
        ValueParameters::zeros(self.d_state(), self.hidden())
    }

    pub fn check_shapes(&self) -> Result<()> {
        let ok = self.l2.inputs == self.l1.outputs
            && self.l2.outputs == 1
            && [&self.l1, &self.l2]
                .iter()
                .all(|l| l.weight.len() == l.inputs * l.outputs && l.bias.len() == l.outputs);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("value layers do not chain".into()))
        }
    }
}

impl Tensors for ValueParameters {
    fn tensors(&self) -> Vec<&Vec<f64>> {
        vec![&self.l1.weight, &self.l1.bias, &self.l2.weight, &self.l2.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![&mut self.l1.weight, &mut self.l1.bias, &mut self.l2.weight, &mut self.l2.bias]
    }
}

#[derive(Clone, Debug)]
pub struct PolicyCache {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ValueCache {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
}

/// Gradient arriving at the top of the policy network.
#[derive(Clone, Copy, Debug)]
pub enum Upstream<'a> {
    Probs(&'a [f64]),
    Logits(&'a [f64]),
}

fn check_input(state: &[f64], expected: usize) -> Result<()> {
    if state.len() != expected {
        return Err(Error::DimensionMismatch { context: "state", expected, actual: state.len() });
    }
    Ok(())
}

pub fn policy_forward(state: &[f64], params: &PolicyParameters) -> Result<(Vec<f64>, PolicyCache)> {
    check_input(state, params.d_state())?;
    let h1 = tanh_all(params.l1.forward(state));
    let h2 = tanh_all(params.l2.forward(&h1));
    let logits = params.l3.forward(&h2);
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFiniteParameters("policy network"));
    }
    let probs = linalg::softmax(&logits);
    let cache = PolicyCache { input: state.to_vec(), h1, h2, logits, probs: probs.clone() };
    Ok((probs, cache))
}

/// Accumulates parameter gradients for one forward pass into `grads`.
pub fn policy_backward_into(
    cache: &PolicyCache,
    params: &PolicyParameters,
    upstream: Upstream<'_>,
    grads: &mut PolicyParameters,
) -> Result<()> {
    let vocab = params.vocab_size();
    let matches = cache.input.len() == params.d_state()
        && cache.h1.len() == params.hidden()
        && cache.h2.len() == params.l2.outputs
        && cache.probs.len() == vocab
        && grads.l1.same_shape(&params.l1)
        && grads.l2.same_shape(&params.l2)
        && grads.l3.same_shape(&params.l3);
    if !matches {
        return Err(Error::CacheMismatch);
    }
    let dlogits = match upstream {
        Upstream::Logits(g) if g.len() == vocab => g.to_vec(),
        Upstream::Probs(g) if g.len() == vocab => softmax_backward(&cache.probs, g),
        _ => return Err(Error::CacheMismatch),
    };
    let dh2 = params.l3.backward(&cache.h2, &dlogits, &mut grads.l3);
    let dz2 = tanh_backward(&cache.h2, &dh2);
    let dh1 = params.l2.backward(&cache.h1, &dz2, &mut grads.l2);
    let dz1 = tanh_backward(&cache.h1, &dh1);
    params.l1.backward(&cache.input, &dz1, &mut grads.l1);
    Ok(())
}

pub fn policy_backward(
    cache: &PolicyCache,
    params: &PolicyParameters,
    upstream: Upstream<'_>,
) -> Result<PolicyParameters> {
    let mut grads = params.zeros_like();
    policy_backward_into(cache, params, upstream, &mut grads)?;
    Ok(grads)
}

pub fn value_forward(state: &[f64], params: &ValueParameters) -> Result<(f64, ValueCache)> {
    check_input(state, params.d_state())?;
    let h1 = tanh_all(params.l1.forward(state));
    let value = params.l2.forward(&h1)[0];
    if !value.is_finite() || !params.l1.is_finite() {
        return Err(Error::NonFiniteParameters("value network"));
    }
    Ok((value, ValueCache { input: state.to_vec(), h1 }))
}

pub fn value_backward_into(
    cache: &ValueCache,
    params: &ValueParameters,
    dvalue: f64,
    grads: &mut ValueParameters,
) -> Result<()> {
    if cache.input.len() != params.d_state()
        || cache.h1.len() != params.hidden()
        || !grads.l1.same_shape(&params.l1)
        || !grads.l2.same_shape(&params.l2)
    {
        return Err(Error::CacheMismatch);
    }
    let dh1 = params.l2.backward(&cache.h1, &[dvalue], &mut grads.l2);
    let dz1 = tanh_backward(&cache.h1, &dh1);
    params.l1.backward(&cache.input, &dz1, &mut grads.l1);
    Ok(())
}

pub fn value_backward(cache: &ValueCache, params: &ValueParameters, dvalue: f64) -> Result<ValueParameters> {
    let mut grads = params.zeros_like();
    value_backward_into(cache, params, dvalue, &mut grads)?;
    Ok(grads)
}
