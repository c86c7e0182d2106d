//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the scalar function it is handed; it never
//! looks at a tape. Comparing its output with gradients from
//! [`Tape::backward`](crate::Tape::backward) therefore tests the backward pass
//! against an independent route.

use crate::autodiff::Tensor;

/// Step used by every gradient suite in this crate.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Error measure used for gradient comparisons: `|a - n| / max(1, |a|, |n|)`.
///
/// Below unit magnitude this is an absolute error, which keeps tiny gradients
/// from producing meaningless ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1.0);
    (analytic - numeric).abs() / scale
}

/// Central differences of `f` with respect to every element of every input.
///
/// `f` receives the perturbed inputs; entries are restored after each probe.
pub fn numeric_gradients<F>(inputs: &[Tensor<f64>], step: f64, mut f: F) -> Vec<Tensor<f64>>
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for p in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[p].shape());
        for i in 0..inputs[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = f(&work);
            work[p].data_mut()[i] = orig - step;
            let minus = f(&work);
            work[p].data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Finite differences that never straddle a ReLU kink.
///
/// `f` returns the objective together with the ReLU activation pattern of the
/// evaluation (see [`Tape::relu_pattern`](crate::Tape::relu_pattern)). When a
/// probe at `step` changes the pattern, the element sits within `step` of a
/// kink; the probe is repeated with the step divided by ten until both sides
/// keep the base pattern (down to `1e-8`). Elements that needed a smaller step
/// are listed in [`KinkAwareGradients::kinks`].
pub fn numeric_gradients_kink_aware<F>(
    inputs: &[Tensor<f64>],
    step: f64,
    mut f: F,
) -> KinkAwareGradients
where
    F: FnMut(&[Tensor<f64>]) -> (f64, Vec<bool>),
{
    let (_, base) = f(inputs);
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    let mut kinks = Vec::new();
    for p in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[p].shape());
        for i in 0..inputs[p].numel() {
            let orig = work[p].data()[i];
            let mut h = step;
            loop {
                work[p].data_mut()[i] = orig + h;
                let (plus, pat_plus) = f(&work);
                work[p].data_mut()[i] = orig - h;
                let (minus, pat_minus) = f(&work);
                let crossed = pat_plus != base || pat_minus != base;
                if !crossed || h < 1e-8 {
                    g.data_mut()[i] = (plus - minus) / (2.0 * h);
                    if h != step {
                        kinks.push(KinkProbe {
                            input: p,
                            element: i,
                            step: h,
                            resolved: !crossed,
                        });
                    }
                    break;
                }
                h /= 10.0;
            }
            work[p].data_mut()[i] = orig;
        }
        grads.push(g);
    }
    KinkAwareGradients { grads, kinks }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinkProbe {
    pub input: usize,
    pub element: usize,
    /// Step that was finally used.
    pub step: f64,
    /// `false` if even the smallest step still crossed a kink.
    pub resolved: bool,
}

#[derive(Debug, Clone)]
pub struct KinkAwareGradients {
    pub grads: Vec<Tensor<f64>>,
    pub kinks: Vec<KinkProbe>,
}

/// Worst mismatch between analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub elements: usize,
}

pub fn compare(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> GradReport {
    let mut report = GradReport {
        max_error: 0.0,
        worst: (0, 0),
        elements: 0,
    };
    for (p, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert_eq!(a.shape(), n.shape(), "gradient shapes differ for input {p}");
        for (i, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(x, y);
            if e > report.max_error || e.is_nan() {
                report.max_error = e;
                report.worst = (p, i);
            }
            report.elements += 1;
        }
    }
    report
}
