//! Scalar abstraction for the numeric kernels. Rate allocation and
//! complexity modeling are generic over [`Real`] so they run in f32 or f64;
//! the crate root exports f64 aliases as the default.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar: `f32`, `f64`, or anything float-like enough.
pub trait Real: Float + FromPrimitive + std::fmt::Debug {
    /// Conversion from an `f64` literal; panics only on values the target
    /// type cannot represent at all (never for finite constants).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant")
    }

    /// Lossy view as f64, for diagnostics.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(f64::of(1.5), 1.5);
        assert_eq!(f32::of(0.25), 0.25f32);
        assert_eq!(f32::of(0.25).as_f64(), 0.25);
    }
}
