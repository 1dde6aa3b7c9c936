use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// Exact rational used for rewards and objective values.
pub type Exact = Ratio<i64>;

/// Number type that objective quantities can be evaluated in.
///
/// Implemented for `f32`, `f64` and [`Exact`]. Integer fragment counts are
/// lifted with [`Scalar::from_int`]; mixing weights and rewards computed
/// exactly are lifted with [`Scalar::from_exact`].
pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    fn from_int(v: i64) -> Self;
    fn from_exact(r: Exact) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f64 {
    fn from_int(v: i64) -> Self {
        v as f64
    }
    fn from_exact(r: Exact) -> Self {
        *r.numer() as f64 / *r.denom() as f64
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn from_int(v: i64) -> Self {
        v as f32
    }
    fn from_exact(r: Exact) -> Self {
        (*r.numer() as f64 / *r.denom() as f64) as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for Exact {
    fn from_int(v: i64) -> Self {
        Ratio::from_integer(v)
    }
    fn from_exact(r: Exact) -> Self {
        r
    }
    fn to_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

/// Closest small-denominator rational to `v`; used to carry user-supplied
/// weights and goals into exact arithmetic.
pub fn exact_from_f64(v: f64) -> Option<Exact> {
    if !v.is_finite() {
        return None;
    }
    // Decimal inputs such as 0.4 or 0.995 round-trip through a 10^6 grid.
    let scaled = (v * 1_000_000.0).round();
    if scaled.abs() > 9.0e15 {
        return None;
    }
    Some(Ratio::new(scaled as i64, 1_000_000))
}

pub(crate) mod exact_serde {
    use super::{exact_from_f64, Exact, Scalar};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Exact, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(Scalar::to_f64(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Exact, D::Error> {
        let v = f64::deserialize(d)?;
        exact_from_f64(v).ok_or_else(|| serde::de::Error::custom("non-finite number"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_round_trip() {
        assert_eq!(exact_from_f64(0.4).unwrap(), Ratio::new(2, 5));
        assert_eq!(exact_from_f64(0.995).unwrap(), Ratio::new(199, 200));
        assert!(exact_from_f64(f64::NAN).is_none());
    }

    #[test]
    fn lifting_is_consistent() {
        let r = Ratio::new(3, 8);
        assert_eq!(<f64 as Scalar>::from_exact(r), 0.375);
        assert_eq!(<f32 as Scalar>::from_exact(r), 0.375f32);
        assert_eq!(<Exact as Scalar>::from_int(7), Ratio::from_integer(7));
    }
}
