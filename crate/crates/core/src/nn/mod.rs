//! Dense networks with hand-written backpropagation, the tanh-squashed
//! Gaussian policy head and Adam.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for tight gradient checks.

mod adam;
mod gaussian;
pub mod gradcheck;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use gaussian::{
    squashed_gaussian_backward, squashed_gaussian_sample, SquashedSample, LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{ForwardCache, Layer, Mlp};

use std::fmt::Debug;

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in parameter slot {slot}")]
    NonFiniteGradient { slot: usize },
}

/// Floating point element type of networks.
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` on strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("representable")
    }

    fn f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("representable")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                // Strides are caller-checked against slice lengths; the
                // bounds below catch layout bugs in debug builds.
                debug_assert!(
                    k == 0 || a.len() >= 1 + (m - 1) * rsa as usize + (k - 1) * csa as usize
                );
                debug_assert!(
                    k == 0 || b.len() >= 1 + (k - 1) * rsb as usize + (n - 1) * csb as usize
                );
                debug_assert!(c.len() >= 1 + (m - 1) * rsc as usize + (n - 1) * csc as usize);
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);
