use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type the tensor engine and model are generic over.
///
/// Everything numeric in this crate goes through this trait so the same code
/// runs in f32 or f64. Training and the verification suites use f64; f32 is
/// available for cheap inference experiments.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Sum
    + Debug
    + Display
    + 'static
{
    /// Conversion from an f64 constant (literals, tolerances, learning rates).
    fn from_f(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant not representable in this scalar type")
    }

    /// Widening (f64) view of the value, for reporting and serialization.
    fn to_f(self) -> f64 {
        self.to_f64().expect("scalar not representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_round_trip() {
        assert_eq!(f64::from_f(0.25), 0.25);
        assert_eq!(f32::from_f(0.25), 0.25f32);
        assert_eq!(0.5f32.to_f(), 0.5);
    }

    fn generic_sum<S: Scalar>() -> S {
        [S::one(), S::one(), S::from_f(0.5)].into_iter().sum()
    }

    #[test]
    fn works_generically() {
        assert_eq!(generic_sum::<f64>(), 2.5);
        assert_eq!(generic_sum::<f32>(), 2.5f32);
    }
}
