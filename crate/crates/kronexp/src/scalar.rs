//! Scalar abstraction shared by tensors and small dense matrices.
//!
//! Real (`f64`) and complex (`Complex64`) fields run through identical code
//! paths; mixed real-tensor × complex-matrix products are handled by
//! promoting the tensor first (see [`crate::tensor::Tensor::promote`]).

use nalgebra::ComplexField;
use num_complex::Complex64;

/// Field scalar usable in tensors, direction matrices and φ-kernels.
///
/// Everything numerical (norms, conjugation, real/imaginary parts) comes
/// from [`nalgebra::ComplexField`]; this trait only adds the compile-time
/// complex flag and a finiteness check.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync + 'static {
    /// True for complex storage; drives the serialization tag and the
    /// realify policy of split operators.
    const COMPLEX: bool;

    fn is_finite_scalar(self) -> bool;

    /// Builds the scalar from real and imaginary parts. Real storage
    /// requires `im == 0`.
    fn from_re_im(re: f64, im: f64) -> Self;
}

impl Scalar for f64 {
    const COMPLEX: bool = false;

    fn is_finite_scalar(self) -> bool {
        self.is_finite()
    }

    fn from_re_im(re: f64, im: f64) -> Self {
        debug_assert_eq!(im, 0.0, "imaginary part dropped by real storage");
        re
    }
}

impl Scalar for Complex64 {
    const COMPLEX: bool = true;

    fn is_finite_scalar(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    fn from_re_im(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }
}
