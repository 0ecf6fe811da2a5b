//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments mirroring the parameter list, plus the shared
/// step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self
    where
        F: 'a,
    {
        let m: Vec<Tensor<F>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// One update across every parameter: m ← β1·m + (1−β1)·g,
    /// v ← β2·v + (1−β2)·g², θ ← θ − lr·m̂/(√v̂ + eps). All gradients are
    /// screened first; a non-finite entry aborts the step untouched, naming
    /// the parameter and the batch, since clipping would only mask the
    /// divergence.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor<F>)],
        grads: &[Tensor<F>],
        lr: f64,
        batch_index: u64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::config(format!(
                "adam state holds {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::config(format!(
                    "gradient shape {:?} does not match `{name}` {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite gradient for `{name}` at batch {batch_index}"
                )));
            }
        }
        self.t += 1;
        let b1 = F::c(BETA1);
        let b2 = F::c(BETA2);
        let one = F::one();
        let c1 = F::c(1.0 - BETA1.powf(self.t as f64));
        let c2 = F::c(1.0 - BETA2.powf(self.t as f64));
        let eps = F::c(ADAM_EPS);
        let lr = F::c(lr);
        for (((_, p), g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(theta: f64) -> (Vec<(String, Tensor<f64>)>, AdamState<f64>) {
        let p = Tensor::scalar(theta);
        let state = AdamState::new([&p]);
        (vec![("theta".to_string(), p)], state)
    }

    fn step_one(
        owned: &mut [(String, Tensor<f64>)],
        state: &mut AdamState<f64>,
        g: f64,
        lr: f64,
    ) -> Result<()> {
        let mut view: Vec<(String, &mut Tensor<f64>)> = owned
            .iter_mut()
            .map(|(n, t)| (n.clone(), t))
            .collect();
        state.step(&mut view, &[Tensor::scalar(g)], lr, 0)
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // t=1, g=2: m̂ = 2, v̂ = 4, so Δθ = −lr·2/(2+eps) ≈ −lr.
        let (mut p, mut state) = single(0.0);
        step_one(&mut p, &mut state, 2.0, 1e-3).unwrap();
        let theta = p[0].1.data()[0];
        assert!((theta + 1e-3).abs() < 1e-8, "theta {theta}");
    }

    #[test]
    fn zero_gradient_on_zero_state_changes_nothing() {
        let (mut p, mut state) = single(0.7);
        step_one(&mut p, &mut state, 0.0, 1e-3).unwrap();
        assert_eq!(p[0].1.data()[0], 0.7);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn hundred_steps_descend_a_quadratic() {
        let (mut p, mut state) = single(1.0);
        let f = |x: f64| x * x;
        let start = f(p[0].1.data()[0]);
        for _ in 0..100 {
            let g = 2.0 * p[0].1.data()[0];
            step_one(&mut p, &mut state, g, 1e-2).unwrap();
        }
        let end = f(p[0].1.data()[0]);
        assert!(end < start, "{end} vs {start}");
        assert_eq!(state.t, 100);
    }

    #[test]
    fn first_step_moves_against_the_sign_of_theta() {
        for theta in [-3.0, -0.5, 0.7, 2.0] {
            let (mut p, mut state) = single(theta);
            step_one(&mut p, &mut state, 2.0 * theta, 1e-3).unwrap();
            let moved = p[0].1.data()[0] - theta;
            assert!(moved.signum() == -theta.signum(), "theta {theta}: {moved}");
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_batch() {
        let (mut p, mut state) = single(0.0);
        let mut view: Vec<(String, &mut Tensor<f64>)> = p
            .iter_mut()
            .map(|(n, t)| (n.clone(), t))
            .collect();
        let err = state
            .step(&mut view, &[Tensor::scalar(f64::NAN)], 1e-3, 41)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("theta") && msg.contains("41"), "{msg}");
        // the screen rejected the whole step
        assert_eq!(state.t, 0);
        assert_eq!(p[0].1.data()[0], 0.0);
    }

    #[test]
    fn moments_keep_parameter_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4]);
        let state = AdamState::new([&a, &b]);
        assert_eq!(state.m[0].shape(), [2, 3]);
        assert_eq!(state.v[1].shape(), [4]);
        assert!(state.v.iter().all(|t| t.data().iter().all(|&x| x >= 0.0)));
    }
}
