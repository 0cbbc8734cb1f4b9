use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Norm guard for the relative error of an all-zero reference tensor.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionError {
    pub mse: f64,
    pub rel_frobenius: f64,
    /// Sum of squared differences; kept so callers can aggregate across tensors.
    pub sse: f64,
}

pub fn reconstruction_error(reference: &Tensor, approx: &Tensor) -> Result<ReconstructionError> {
    if reference.shape() != approx.shape() {
        return Err(Error::ShapeMismatch { left: reference.shape().into(), right: approx.shape().into() });
    }
    let (sse, ref_sq) = reference.data().iter().zip(approx.data()).fold((0.0f64, 0.0f64), |(sse, rs), (&w, &r)| {
        let (w, r) = (f64::from(w), f64::from(r));
        (sse + (w - r) * (w - r), rs + w * w)
    });
    Ok(ReconstructionError {
        mse: sse / reference.numel() as f64,
        rel_frobenius: libm::sqrt(sse) / libm::sqrt(ref_sq).max(NORM_EPS),
        sse,
    })
}
