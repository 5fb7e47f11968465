use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type shared by graphs, networks and optimizers.
///
/// Implemented for `f32` and `f64`; training defaults to `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Tag written into checkpoints so a file is only loaded at the precision it was saved with.
    const DTYPE: &'static str;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// `(sin x, cos x)`, accurate to about one ulp.
    fn sin_cos_fast(self) -> (Self, Self);

    fn sin_fast(self) -> Self {
        self.sin_cos_fast().0
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn sin_cos_fast(self) -> (Self, Self) {
        let (s, c) = sin_cos(self as f64);
        (s as f32, c as f32)
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn sin_cos_fast(self) -> (Self, Self) {
        sin_cos(self)
    }
}

/// Beyond this the two-term reduction below loses accuracy.
const REDUCTION_LIMIT: f64 = 1e6;

/// Sine and cosine sharing one Cody-Waite reduction by pi/2, with the
/// fdlibm minimax kernels on [-pi/4, pi/4].
#[allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]
pub fn sin_cos(x: f64) -> (f64, f64) {
    const INV_PIO2: f64 = std::f64::consts::FRAC_2_PI;
    const PIO2_HI: f64 = 1.57079632673412561417e+00;
    const PIO2_LO: f64 = 6.07710050650619224932e-11;
    const S: [f64; 6] = [
        -1.66666666666666324348e-01,
        8.33333333332248946124e-03,
        -1.98412698298579493134e-04,
        2.75573137070700676789e-06,
        -2.50507602534068634195e-08,
        1.58969099521155010221e-10,
    ];
    const C: [f64; 6] = [
        4.16666666666666019037e-02,
        -1.38888888888741095749e-03,
        2.48015872894767294178e-05,
        -2.75573143513906633035e-07,
        2.08757232129817482790e-09,
        -1.13596475577881948265e-11,
    ];
    if !(x.abs() < REDUCTION_LIMIT) {
        return x.sin_cos();
    }
    // Adding and subtracting 1.5 * 2^52 rounds to nearest without a libm call.
    const SHIFTER: f64 = 6755399441055744.0;
    let n = (x * INV_PIO2 + SHIFTER) - SHIFTER;
    let r = (x - n * PIO2_HI) - n * PIO2_LO;
    let z = r * r;
    let sin_r = r + r * z * (S[0] + z * (S[1] + z * (S[2] + z * (S[3] + z * (S[4] + z * S[5])))));
    let hz = 0.5 * z;
    let w = 1.0 - hz;
    let tail = z * z * (C[0] + z * (C[1] + z * (C[2] + z * (C[3] + z * (C[4] + z * C[5])))));
    let cos_r = w + (((1.0 - w) - hz) + tail);
    match (n as i64) & 3 {
        0 => (sin_r, cos_r),
        1 => (cos_r, -sin_r),
        2 => (-sin_r, -cos_r),
        _ => (-cos_r, sin_r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ulps_apart(a: f64, b: f64) -> f64 {
        (a - b).abs() / f64::EPSILON
    }

    #[test]
    fn special_points() {
        assert_eq!(sin_cos(0.0), (0.0, 1.0));
        let (s, c) = sin_cos(std::f64::consts::FRAC_PI_2);
        assert!((s - 1.0).abs() < 1e-16 && c.abs() < 1e-16);
        assert!(sin_cos(f64::NAN).0.is_nan());
        assert_eq!(sin_cos(1e300), 1e300f64.sin_cos());
        assert_eq!(2.0f32.sin_cos_fast().0, 2.0f64.sin() as f32);
    }

    proptest! {
        #[test]
        fn matches_libm(x in -2000.0f64..2000.0) {
            let (s, c) = sin_cos(x);
            prop_assert!(ulps_apart(s, x.sin()) <= 2.0, "sin({x}): {s} vs {}", x.sin());
            prop_assert!(ulps_apart(c, x.cos()) <= 2.0, "cos({x}): {c} vs {}", x.cos());
        }

        #[test]
        fn small_arguments(x in -1.0f64..1.0) {
            let (s, c) = sin_cos(x);
            prop_assert!((s - x.sin()).abs() <= 2.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE));
            prop_assert!(ulps_apart(c, x.cos()) <= 1.0);
        }
    }
}
