//! Floating-point element type shared by every tensor and layer.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the engine computes in.
///
/// Training runs in `f32`; gradient checks run in `f64` where central
/// differences are accurate enough to be meaningful.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
    /// Name used in reports ("f32" / "f64").
    const NAME: &'static str;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    #[inline]
    fn half() -> Self {
        Self::of(0.5)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}
