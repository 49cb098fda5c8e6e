//! Differentiable-tensor substrate: the handful of layer kinds the backbone
//! family needs, with explicit forward/backward passes over `ndarray`
//! buffers and a single-threaded GEMM core.
//!
//! Generic over `f32`/`f64` so numerical checks (finite differences) can run
//! in double precision against the same code path that trains in single.

mod layers;
mod loss;
mod network;

pub use layers::{AvgPool, BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, Phase, Relu};
pub use loss::{cross_entropy, softmax_rows};
pub use network::{Network, NetworkSpec, ParamView, ParamViewMut};

use ndarray::{ArrayView2, ArrayViewMut2};

/// Element type the substrate is generic over.
pub trait Scalar: ndarray::NdFloat + 'static {
    const BYTES: usize;
    fn to_le_bytes_vec(v: Self) -> Vec<u8>;
}

impl Scalar for f32 {
    const BYTES: usize = 4;
    fn to_le_bytes_vec(v: Self) -> Vec<u8> {
        v.to_le_bytes().to_vec()
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;
    fn to_le_bytes_vec(v: Self) -> Vec<u8> {
        v.to_le_bytes().to_vec()
    }
}

/// Cast an `f64` constant into the element type.
pub(crate) fn cast<F: Scalar>(v: f64) -> F {
    F::from(v).expect("finite constant fits in element type")
}

/// dst = a . b, or dst += a . b when `accumulate`. Row-major views;
/// single-threaded, deterministic.
pub fn matmul<F: Scalar>(
    dst: &mut ArrayViewMut2<F>,
    a: &ArrayView2<F>,
    b: &ArrayView2<F>,
    accumulate: bool,
) {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "inner dimensions must agree");
    assert_eq!(dst.dim(), (m, n), "destination shape mismatch");
    let dst_rs = dst.strides()[0];
    let dst_cs = dst.strides()[1];
    let a_rs = a.strides()[0];
    let a_cs = a.strides()[1];
    let b_rs = b.strides()[0];
    let b_cs = b.strides()[1];
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            dst_cs,
            dst_rs,
            accumulate,
            a.as_ptr(),
            a_cs,
            a_rs,
            b.as_ptr(),
            b_cs,
            b_rs,
            if accumulate { F::one() } else { F::zero() },
            F::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}
