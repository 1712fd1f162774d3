//! Scalar abstractions shared by the storage layer and the toy model.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use half::f16;
use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::tensor_store::DType;

/// An element type that can live in a checkpoint payload.
pub trait Element: Copy + Debug + Send + Sync + 'static {
    const DTYPE: DType;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    /// Widen to f64. f16 goes through f32 first, which is exact.
    fn widen(self) -> f64;
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte chunk"))
    }

    fn widen(self) -> f64 {
        self
    }
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte chunk"))
    }

    fn widen(self) -> f64 {
        f64::from(self)
    }
}

impl Element for f16 {
    const DTYPE: DType = DType::F16;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f16::from_le_bytes(bytes.try_into().expect("2-byte chunk"))
    }

    fn widen(self) -> f64 {
        f64::from(self.to_f32())
    }
}

/// Floating-point type the toy model and the statistics helpers are generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Element
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    /// Narrow an f64 (used when loading checkpoints or seeding parameters).
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 narrows")
    }

    fn lit(v: f64) -> Self {
        Self::from_f64_lossy(v)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
