use crate::autodiff::Tensor;
use crate::real::Real;

use super::TrainError;

/// First and second moments, mirroring the parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    /// Steps taken so far.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn zeros_like(params: &[Tensor<T>]) -> Self {
        Self {
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// Bias-corrected Adam. Scalar arithmetic runs in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &[Tensor<T>], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            state: AdamState::zeros_like(params),
        }
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite
    /// or misshapen.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<(), TrainError> {
        if params.len() != grads.len() || params.len() != self.state.m.len() {
            return Err(TrainError::GradientCount {
                params: params.len(),
                grads: grads.len(),
            });
        }
        for (index, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(TrainError::Checkpoint(format!(
                    "gradient {index} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if let Some(element) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteGradient { index, element });
            }
        }
        self.state.t += 1;
        let t = self.state.t as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.state.m.iter_mut().zip(self.state.v.iter_mut()))
        {
            let cells = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((p, &g), (m, v)) in cells {
                let g = g.as_f64();
                let m_new = b1 * m.as_f64() + (1.0 - b1) * g;
                let v_new = b2 * v.as_f64() + (1.0 - b2) * g * g;
                *m = T::from_f64(m_new);
                *v = T::from_f64(v_new);
                let step = lr * (m_new / bc1) / ((v_new / bc2).sqrt() + self.eps);
                *p = T::from_f64(p.as_f64() - step);
            }
        }
        Ok(())
    }
}
