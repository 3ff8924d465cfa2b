use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type the network core is generic over: `f32` or `f64`.
///
/// The extraction stack itself is pinned to `f64` (see the crate-root
/// aliases); the model representation and its evaluation stay generic.
pub trait Scalar: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy {
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
