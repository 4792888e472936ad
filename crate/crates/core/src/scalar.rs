//! Scalar abstraction for cost arithmetic.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real number type used for weights and churn costs.
///
/// Implemented for `f32` and `f64`. Reports are always written from `f64`
/// values, so the `f32` instantiation is mainly useful for low-footprint
/// recorders where precision of the running total matters less.
pub trait ChurnScalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts a byte count, saturating to the largest finite value.
    fn from_bytes(bytes: u64) -> Self {
        Self::from_u64(bytes).unwrap_or_else(Self::max_value)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).unwrap_or_else(Self::nan)
    }
}

impl ChurnScalar for f32 {}
impl ChurnScalar for f64 {}
