//! Scalar abstraction: the numeric element type of tensors.
//!
//! Everything numeric in this crate is generic over [`Scalar`], with `f64`
//! aliases exported at the crate root. `f32` is supported mainly so the
//! on-disk tensor format can round-trip both widths.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point element type usable in tensors and on disk.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Dtype code in the tensor file format (0 = f32, 1 = f64).
    const DTYPE: u8;
    /// Width of one element in bytes, little-endian on disk.
    const WIDTH: usize;

    /// Lossless-enough conversion from `f64` (rounds for `f32`).
    fn of(x: f64) -> Self;
    /// Widen to `f64`.
    fn f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one element from exactly `WIDTH` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Error function, evaluated in double precision.
    fn erf(self) -> Self {
        Self::of(libm::erf(self.f64()))
    }

    /// Standard normal CDF.
    fn norm_cdf(self) -> Self {
        Self::of(0.5 * (1.0 + libm::erf(self.f64() / std::f64::consts::SQRT_2)))
    }

    /// Standard normal PDF.
    fn norm_pdf(self) -> Self {
        let z = self.f64();
        Self::of((-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt())
    }
}

impl Scalar for f32 {
    const DTYPE: u8 = 0;
    const WIDTH: usize = 4;

    fn of(x: f64) -> Self {
        x as f32
    }

    fn f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 needs 4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: u8 = 1;
    const WIDTH: usize = 8;

    fn of(x: f64) -> Self {
        x
    }

    fn f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 needs 8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_reference_points() {
        assert!((<f64 as Scalar>::erf(0.0)).abs() < 1e-15);
        assert!((<f64 as Scalar>::erf(1.0) - 0.8427007929497149).abs() < 1e-12);
        assert!((<f64 as Scalar>::erf(-1.0) + 0.8427007929497149).abs() < 1e-12);
    }

    #[test]
    fn norm_cdf_symmetry() {
        let x = 0.73f64;
        assert!((x.norm_cdf() + (-x).norm_cdf() - 1.0).abs() < 1e-14);
        assert!((0.0f64.norm_cdf() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn byte_round_trip() {
        let mut buf = Vec::new();
        1.5f64.write_le(&mut buf);
        (-2.25f32).write_le(&mut buf);
        assert_eq!(<f64 as Scalar>::read_le(&buf[..8]), 1.5);
        assert_eq!(<f32 as Scalar>::read_le(&buf[8..]), -2.25);
    }
}
