//! Numeric types shared by the transaction interpreter and the PIFO models.
//!
//! Two families are abstracted here:
//!
//! * [`RankValue`] is the unsigned integer type a PIFO orders by. The
//!   behavioral model uses `u64`; the hardware model defaults to `u16`.
//! * [`TxnScalar`] is the number type transactions compute with. The default
//!   is [`Fixed`], a signed Q47.16 fixed-point number. `Ratio<i64>` is also
//!   supported and gives exact arithmetic for cross-checking.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{
    Bounded, CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, Num, One, PrimInt, Unsigned, Zero,
};

/// Unsigned integer usable as a PIFO rank.
pub trait RankValue: PrimInt + Unsigned + fmt::Debug + fmt::Display + Send + Sync + 'static {
    const BITS: u32;

    /// Truncate a 64-bit rank into this width, as narrow hardware would.
    fn from_u64_wrapping(v: u64) -> Self;

    fn to_u64(self) -> u64;
}

macro_rules! rank_value {
    ($($t:ty),*) => {$(
        impl RankValue for $t {
            const BITS: u32 = <$t>::BITS;

            fn from_u64_wrapping(v: u64) -> Self {
                v as $t
            }

            fn to_u64(self) -> u64 {
                self as u64
            }
        }
    )*};
}

rank_value!(u8, u16, u32, u64);

/// Number type a transaction program computes with.
pub trait TxnScalar:
    Copy
    + Ord
    + fmt::Debug
    + fmt::Display
    + Zero
    + One
    + CheckedAdd
    + CheckedSub
    + CheckedMul
    + CheckedDiv
    + Send
    + Sync
    + 'static
{
    fn from_i64(v: i64) -> Option<Self>;

    /// Exact `num / den` where representable; used for decimal literals.
    fn from_ratio(num: i64, den: i64) -> Option<Self>;

    /// Largest integer not greater than `self`.
    fn floor(self) -> Self;

    fn floor_i64(self) -> i64;

    fn ceil_i64(self) -> i64;

    fn checked_neg(self) -> Option<Self> {
        Self::zero().checked_sub(&self)
    }

    /// Floor of the value as a rank; negative values saturate to 0.
    fn to_rank_floor(self) -> u64 {
        self.floor_i64().max(0) as u64
    }

    /// Ceiling of the value as a rank; negative values saturate to 0.
    fn to_rank_ceil(self) -> u64 {
        self.ceil_i64().max(0) as u64
    }

    fn is_truthy(self) -> bool {
        !self.is_zero()
    }

    fn from_bool(b: bool) -> Self {
        if b {
            Self::one()
        } else {
            Self::zero()
        }
    }
}

/// Number of fractional bits in [`Fixed`].
pub const FRAC_BITS: u32 = 16;

/// Fixed-point scale, `2^16`.
pub const SCALE: i64 = 1 << FRAC_BITS;

/// Signed Q47.16 fixed-point number.
///
/// Multiplication and division round toward negative infinity and use a
/// 128-bit intermediate, so `a / b` on integers computes `(a * 2^16) / b`
/// before rescaling.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed(i64);

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);
    pub const ONE: Fixed = Fixed(SCALE);

    pub const fn from_raw(raw: i64) -> Self {
        Fixed(raw)
    }

    pub const fn raw(self) -> i64 {
        self.0
    }

    pub fn from_int(v: i64) -> Self {
        Self::from_i64(v).expect("integer out of fixed-point range")
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    fn from_i128(v: i128) -> Option<Self> {
        i64::try_from(v).ok().map(Fixed)
    }
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fixed({self})")
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let int = self.0.div_euclid(SCALE);
        let frac = self.0.rem_euclid(SCALE);
        if frac == 0 {
            return write!(f, "{int}");
        }
        // Print sign separately so -0.5 does not render as -1.5.
        let neg = self.0 < 0;
        let mag = (self.0 as i128).abs();
        let whole = mag / SCALE as i128;
        let mut rest = mag % SCALE as i128;
        let mut digits = String::new();
        for _ in 0..6 {
            rest *= 10;
            digits.push(char::from(b'0' + (rest / SCALE as i128) as u8));
            rest %= SCALE as i128;
            if rest == 0 {
                break;
            }
        }
        let digits = digits.trim_end_matches('0');
        write!(f, "{}{}.{}", if neg { "-" } else { "" }, whole, digits)
    }
}

impl CheckedAdd for Fixed {
    fn checked_add(&self, v: &Self) -> Option<Self> {
        self.0.checked_add(v.0).map(Fixed)
    }
}

impl CheckedSub for Fixed {
    fn checked_sub(&self, v: &Self) -> Option<Self> {
        self.0.checked_sub(v.0).map(Fixed)
    }
}

impl CheckedMul for Fixed {
    fn checked_mul(&self, v: &Self) -> Option<Self> {
        let wide = Integer::div_floor(&(self.0 as i128 * v.0 as i128), &(SCALE as i128));
        Fixed::from_i128(wide)
    }
}

impl CheckedDiv for Fixed {
    fn checked_div(&self, v: &Self) -> Option<Self> {
        if v.0 == 0 {
            return None;
        }
        let wide = Integer::div_floor(&((self.0 as i128) << FRAC_BITS), &(v.0 as i128));
        Fixed::from_i128(wide)
    }
}

impl Add for Fixed {
    type Output = Fixed;
    fn add(self, rhs: Fixed) -> Fixed {
        self.checked_add(&rhs).expect("fixed-point overflow")
    }
}

impl Sub for Fixed {
    type Output = Fixed;
    fn sub(self, rhs: Fixed) -> Fixed {
        self.checked_sub(&rhs).expect("fixed-point overflow")
    }
}

impl Mul for Fixed {
    type Output = Fixed;
    fn mul(self, rhs: Fixed) -> Fixed {
        self.checked_mul(&rhs).expect("fixed-point overflow")
    }
}

impl Div for Fixed {
    type Output = Fixed;
    fn div(self, rhs: Fixed) -> Fixed {
        self.checked_div(&rhs).expect("fixed-point division by zero or overflow")
    }
}

impl Rem for Fixed {
    type Output = Fixed;
    fn rem(self, rhs: Fixed) -> Fixed {
        Fixed(self.0.rem_euclid(rhs.0))
    }
}

impl Neg for Fixed {
    type Output = Fixed;
    fn neg(self) -> Fixed {
        Fixed(-self.0)
    }
}

impl Zero for Fixed {
    fn zero() -> Self {
        Fixed::ZERO
    }

    fn is_zero(&self) -> bool {
        self.0 == 0
    }
}

impl One for Fixed {
    fn one() -> Self {
        Fixed::ONE
    }
}

impl Bounded for Fixed {
    fn min_value() -> Self {
        Fixed(i64::MIN)
    }

    fn max_value() -> Self {
        Fixed(i64::MAX)
    }
}

impl Num for Fixed {
    type FromStrRadixErr = ();

    fn from_str_radix(s: &str, radix: u32) -> Result<Self, ()> {
        if radix != 10 {
            return Err(());
        }
        parse_decimal(s)
            .and_then(|(n, d)| Fixed::from_ratio(n, d))
            .ok_or(())
    }
}

impl TxnScalar for Fixed {
    fn from_i64(v: i64) -> Option<Self> {
        v.checked_mul(SCALE).map(Fixed)
    }

    fn from_ratio(num: i64, den: i64) -> Option<Self> {
        if den == 0 {
            return None;
        }
        Fixed::from_i128(Integer::div_floor(&((num as i128) << FRAC_BITS), &(den as i128)))
    }

    fn floor(self) -> Self {
        Fixed(self.0.div_euclid(SCALE) * SCALE)
    }

    fn floor_i64(self) -> i64 {
        self.0.div_euclid(SCALE)
    }

    fn ceil_i64(self) -> i64 {
        -((-(self.0 as i128)).div_euclid(SCALE as i128)) as i64
    }
}

impl TxnScalar for Ratio<i64> {
    fn from_i64(v: i64) -> Option<Self> {
        Some(Ratio::from_integer(v))
    }

    fn from_ratio(num: i64, den: i64) -> Option<Self> {
        (den != 0).then(|| Ratio::new(num, den))
    }

    fn floor(self) -> Self {
        Ratio::floor(&self)
    }

    fn floor_i64(self) -> i64 {
        Ratio::floor(&self).to_integer()
    }

    fn ceil_i64(self) -> i64 {
        Ratio::ceil(&self).to_integer()
    }
}

/// Parse a decimal literal such as `12`, `-3`, or `0.125` into `num / den`.
pub fn parse_decimal(s: &str) -> Option<(i64, i64)> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    if frac.len() > 12 {
        return None;
    }
    let den = 10i64.checked_pow(frac.len() as u32)?;
    let int_v: i64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let frac_v: i64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    let num = int_v.checked_mul(den)?.checked_add(frac_v)?;
    Some((if neg { -num } else { num }, den))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_division_matches_scaled_integer_division() {
        let len = Fixed::from_int(100);
        let w = Fixed::from_int(3);
        let q = len / w;
        assert_eq!(q.raw(), (100 * SCALE) / 3);
        assert_eq!(q.floor_i64(), 33);
        assert_eq!(q.ceil_i64(), 34);
    }

    #[test]
    fn fixed_floor_and_ceil_on_negatives() {
        let v = Fixed::from_ratio(-5, 2).unwrap();
        assert_eq!(v.floor_i64(), -3);
        assert_eq!(v.ceil_i64(), -2);
        assert_eq!(v.to_rank_floor(), 0);
        assert_eq!(Fixed::from_int(-4).ceil_i64(), -4);
    }

    #[test]
    fn fixed_display() {
        assert_eq!(Fixed::from_int(42).to_string(), "42");
        assert_eq!(Fixed::from_ratio(1, 2).unwrap().to_string(), "0.5");
        assert_eq!(Fixed::from_ratio(-1, 2).unwrap().to_string(), "-0.5");
        assert_eq!(Fixed::from_ratio(5, 4).unwrap().to_string(), "1.25");
    }

    #[test]
    fn decimal_parsing() {
        assert_eq!(parse_decimal("12"), Some((12, 1)));
        assert_eq!(parse_decimal("0.125"), Some((125, 1000)));
        assert_eq!(parse_decimal("-3.5"), Some((-35, 10)));
        assert_eq!(parse_decimal("x"), None);
        assert_eq!(parse_decimal("."), None);
    }

    #[test]
    fn division_by_zero_is_none() {
        assert!(Fixed::ONE.checked_div(&Fixed::ZERO).is_none());
        let r: Ratio<i64> = Ratio::from_integer(1);
        assert!(r.checked_div(&Ratio::from_integer(0)).is_none());
    }

    #[test]
    fn overflow_is_detected() {
        let big = Fixed::from_raw(i64::MAX / 2);
        assert!(big.checked_mul(&Fixed::from_int(4)).is_none());
        assert!(Fixed::from_i64(i64::MAX / 2).is_none());
    }

    #[test]
    fn narrow_ranks_wrap() {
        assert_eq!(u16::from_u64_wrapping(70_000), 70_000u64 as u16);
        assert_eq!(<u16 as RankValue>::BITS, 16);
    }
}
