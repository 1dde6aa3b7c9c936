use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::FromPrimitive;

/// Element type of every tensor in the network.
pub trait Float:
    num_traits::Float + num_traits::NumAssign + LinalgScalar + ScalarOperand + FromPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    /// `exp` for softmax inputs (at most 0). May trade the last bit of
    /// accuracy for speed.
    fn softmax_exp(self) -> Self {
        self.exp()
    }

    /// Unmasked softmax of one row, in place.
    fn softmax_in_place(row: &mut [Self]) {
        softmax_lanes(row)
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Float for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    #[inline(always)]
    fn softmax_exp(self) -> Self {
        fast_exp(self)
    }

    fn softmax_in_place(row: &mut [Self]) {
        #[cfg(target_arch = "x86_64")]
        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were just detected.
            return unsafe { softmax_avx2(row) };
        }
        softmax_lanes(row)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Float for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Range reduction to `2^n * e^y` with `|y| <= ln2 / 2`, then a degree-6
/// Taylor polynomial. Relative error is about 2e-7.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn softmax_avx2(row: &mut [f32]) {
    softmax_lanes(row)
}

/// Softmax laid out in independent lanes so the loops vectorize.
#[inline(always)]
fn softmax_lanes<T: Float>(row: &mut [T]) {
    const LANES: usize = 16;
    let mut lanes = [T::neg_infinity(); LANES];
    let mut chunks = row.chunks_exact(LANES);
    for c in &mut chunks {
        for i in 0..LANES {
            lanes[i] = if c[i] > lanes[i] { c[i] } else { lanes[i] };
        }
    }
    let max = chunks.remainder().iter().chain(lanes.iter()).fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
    for x in row.iter_mut() {
        *x = (*x - max).softmax_exp();
    }
    let mut lanes = [T::zero(); LANES];
    let mut chunks = row.chunks_exact(LANES);
    for c in &mut chunks {
        for i in 0..LANES {
            lanes[i] += c[i];
        }
    }
    let sum = chunks.remainder().iter().chain(lanes.iter()).fold(T::zero(), |s, &x| s + x);
    let inv = T::one() / sum;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

#[inline(always)]
fn fast_exp(x: f32) -> f32 {
    const SHIFT: f32 = 12_582_912.0;
    let x = x.clamp(-87.0, 88.0);
    let m = x * std::f32::consts::LOG2_E + SHIFT;
    let n = m - SHIFT;
    let k = (m.to_bits() as i32) - 0x4B40_0000;
    let y = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
    let p = 1.0 + y * (1.0 + y * (0.5 + y * (1.0 / 6.0 + y * (1.0 / 24.0 + y * (1.0 / 120.0 + y * (1.0 / 720.0))))));
    p * f32::from_bits(((k + 127) as u32) << 23)
}
