//! Scalar abstraction: every numeric module in this crate is generic over
//! [`Real`], instantiated at `f32` or `f64` (aliases at the crate root pin
//! the `f64` variants the CLI uses).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar type for the numeric core.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Default + Send + Sync + 'static
{
    /// Conversion from `f64` for constants, parsed input, and seeds.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Real")
    }

    /// Conversion to `f64` for serialization and reporting.
    #[inline]
    fn to64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
