//! Scalar abstraction shared by the geometric and transport code.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point scalar used by the generic numeric code: f32 or f64.
pub trait Real:
    Float + FromPrimitive + NumAssign + Debug + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the target type cannot represent it.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    /// Relative tolerance appropriate for pivoting decisions in this precision.
    fn pivot_eps() -> Self;
}

impl Real for f32 {
    fn pivot_eps() -> Self {
        1e-6
    }
}

impl Real for f64 {
    fn pivot_eps() -> Self {
        1e-12
    }
}
