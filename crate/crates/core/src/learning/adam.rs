use crate::error::{Error, Result};
use crate::policy::Tensors;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// One bias-corrected Adam step on a flat tensor. `t` is the 1-based step.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    t: u64,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || m.len() != n || v.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "adam step over {n} parameters with {} gradients and moments of {}/{}",
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    if t == 0 {
        return Err(Error::InvalidConfig("adam step counter starts at 1".into()));
    }
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..n {
        let g = grads[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

/// First and second moments for every tensor of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new<T: Tensors>(params: &T) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<T: Tensors>(&mut self, params: &mut T, grads: &T, lr: f64) -> Result<()> {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch("optimizer state built for another network".into()));
        }
        self.t += 1;
        for (i, p) in params.iter_mut().enumerate() {
            adam_step(p, grads[i], &mut self.m[i], &mut self.v[i], lr, self.t)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.5, -1.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_step(&mut p, &[0.0, 0.0], &mut m, &mut v, 0.1, 1).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
    }

    #[test]
    fn first_step_hand_formula() {
        let mut p = vec![1.0, 1.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        let g = [0.3, -2.0];
        adam_step(&mut p, &g, &mut m, &mut v, 0.01, 1).unwrap();
        // m_hat = g, v_hat = g², so the step is lr·g/(|g| + ε)
        for i in 0..2 {
            let expected = 1.0 - 0.01 * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let run = || {
            let mut p = vec![0.1, 0.2, 0.3];
            let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
            for t in 1..=5 {
                adam_step(&mut p, &[0.1, -0.2, 0.05], &mut m, &mut v, 1e-3, t).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
        let mut p = vec![0.0; 2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        assert!(matches!(adam_step(&mut p, &[1.0], &mut m, &mut v, 0.1, 1), Err(Error::ShapeMismatch(_))));
    }
}
