use super::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment accumulators for a fixed, ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            second: first.clone(),
            first,
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
}

/// One bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8).
///
/// `params` yields `(name, parameter)` pairs in the order the state was
/// built with. Gradients are checked for finiteness before anything is
/// touched, so a failing step leaves parameters and state unchanged.
pub fn adam_step(
    params: &mut [(&str, &mut Tensor)],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Domain(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != state.len() || grads.len() != state.len() {
        return Err(Error::dim(
            "adam_step",
            &[params.len(), grads.len()],
            &[state.len()],
        ));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                param: name.to_string(),
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::vector(vec![0.3, -0.2]);
        let before = p.clone();
        let mut state = AdamState::new([&p]);
        adam_step(&mut [("p", &mut p)], &[Tensor::zeros(&[2])], &mut state, 0.001).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.timestep(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::scalar(1.0);
        let mut state = AdamState::new([&p]);
        adam_step(&mut [("w", &mut p)], &[Tensor::scalar(1.0)], &mut state, 0.001).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let expected = 1.0 - 0.001 / (1.0 + EPSILON);
        assert!((p.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter_and_aborts() {
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::scalar(2.0);
        let mut state = AdamState::new([&a, &b]);
        let err = adam_step(
            &mut [("enc.w", &mut a), ("dec.w", &mut b)],
            &[Tensor::scalar(0.5), Tensor::scalar(f64::NAN)],
            &mut state,
            0.01,
        )
        .unwrap_err();
        assert!(err.to_string().contains("dec.w"));
        assert_eq!(a.item(), 1.0);
        assert_eq!(state.timestep(), 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = Tensor::vector(vec![0.5, -0.25, 0.125]);
            let mut state = AdamState::new([&p]);
            for step in 0..10 {
                let g = p.map(|w| 2.0 * w + step as f64 * 0.01);
                adam_step(&mut [("p", &mut p)], &[g], &mut state, 0.001).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
