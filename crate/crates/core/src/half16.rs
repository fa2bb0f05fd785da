//! Software IEEE 754 binary16.
//!
//! Every operation is correctly rounded (round to nearest, ties to even) and
//! subnormals are kept. Addition and multiplication are evaluated exactly in
//! an `f64` intermediate and rounded once: the exact sum of two binary16
//! values spans at most 40 significant bits and the exact product 22, so the
//! 53-bit intermediate never rounds.

use std::fmt;

use crate::error::{Error, Result};

/// A binary16 value stored as its raw bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(transparent)]
pub struct Half(u16);

const SIGN_MASK: u16 = 0x8000;
const EXP_MASK: u16 = 0x7C00;
const MAN_MASK: u16 = 0x03FF;

/// Smallest positive normal binary16 value, 2^-14.
pub const MIN_POSITIVE_NORMAL: f64 = 6.103515625e-5;
/// Spacing of the subnormal range, 2^-24.
pub const SUBNORMAL_QUANTUM: f64 = 5.960464477539063e-8;
/// Largest finite binary16 value.
pub const MAX_FINITE: f64 = 65504.0;
/// Every integer strictly below this magnitude (2^11) is exactly representable.
pub const EXACT_INTEGER_LIMIT: f64 = 2048.0;
/// Every multiple of 1/2 strictly below this magnitude is exactly representable.
pub const EXACT_HALF_INTEGER_LIMIT: f64 = 1024.0;

impl Half {
    pub const ZERO: Half = Half(0);
    pub const NEG_ZERO: Half = Half(0x8000);
    pub const ONE: Half = Half(0x3C00);
    pub const INFINITY: Half = Half(0x7C00);
    pub const NEG_INFINITY: Half = Half(0xFC00);
    pub const NAN: Half = Half(0x7E00);
    pub const MAX: Half = Half(0x7BFF);

    #[inline]
    pub const fn from_bits(bits: u16) -> Half {
        Half(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Rounds `x` to the nearest binary16 value, ties to even.
    ///
    /// Magnitudes at or above 65520 become infinity; NaN stays NaN.
    pub fn from_f64(x: f64) -> Half {
        let bits = x.to_bits();
        let sign = ((bits >> 48) as u16) & SIGN_MASK;
        let abs = bits & 0x7FFF_FFFF_FFFF_FFFF;

        if abs >= 0x7FF0_0000_0000_0000 {
            return if abs > 0x7FF0_0000_0000_0000 {
                Half(sign | 0x7E00)
            } else {
                Half(sign | EXP_MASK)
            };
        }

        let exp = (abs >> 52) as i32 - 1023;
        let frac = abs & ((1u64 << 52) - 1);

        if exp >= 16 {
            return Half(sign | EXP_MASK);
        }

        if exp >= -14 {
            // Keep the top 10 fraction bits; a carry out of the mantissa bumps
            // the exponent, and past the largest exponent lands on infinity.
            let kept = frac >> 42;
            let rest = frac & ((1u64 << 42) - 1);
            let halfway = 1u64 << 41;
            let mut h = (((exp + 15) as u64) << 10) | kept;
            if rest > halfway || (rest == halfway && kept & 1 == 1) {
                h += 1;
            }
            return Half(sign | h as u16);
        }

        if exp < -25 {
            return Half(sign);
        }

        // Subnormal result: count multiples of 2^-24.
        let sig = frac | (1u64 << 52);
        let shift = (28 - exp) as u32;
        let kept = sig >> shift;
        let rest = sig & ((1u64 << shift) - 1);
        let halfway = 1u64 << (shift - 1);
        let mut h = kept;
        if rest > halfway || (rest == halfway && kept & 1 == 1) {
            h += 1;
        }
        Half(sign | h as u16)
    }

    #[inline]
    pub fn from_f32(x: f32) -> Half {
        Half::from_f64(x as f64)
    }

    /// Exact widening conversion.
    #[inline]
    pub fn to_f32(self) -> f32 {
        let h = self.0 as u32;
        let sign = (h & 0x8000) << 16;
        let exp = (h >> 10) & 0x1F;
        let man = h & 0x3FF;
        if exp == 0 {
            if man == 0 {
                return f32::from_bits(sign);
            }
            // Normalize the subnormal: man * 2^-24 with its top bit at 31 - lz.
            let lz = man.leading_zeros();
            let man = (man << (lz - 21)) & 0x3FF;
            let exp = 134 - lz;
            return f32::from_bits(sign | (exp << 23) | (man << 13));
        }
        if exp == 0x1F {
            return f32::from_bits(sign | 0x7F80_0000 | (man << 13));
        }
        f32::from_bits(sign | ((exp + 127 - 15) << 23) | (man << 13))
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.to_f32() as f64
    }

    #[inline]
    pub fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & MAN_MASK != 0
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    #[inline]
    pub fn is_sign_negative(self) -> bool {
        self.0 & SIGN_MASK != 0
    }
}

impl fmt::Debug for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Half({} /0x{:04x})", self.to_f32(), self.0)
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

impl From<Half> for f32 {
    fn from(h: Half) -> f32 {
        h.to_f32()
    }
}

impl From<Half> for f64 {
    fn from(h: Half) -> f64 {
        h.to_f64()
    }
}

#[inline]
pub fn encode(x: f64) -> Half {
    Half::from_f64(x)
}

#[inline]
pub fn decode(h: Half) -> f64 {
    h.to_f64()
}

/// Correctly rounded binary16 sum.
#[inline]
pub fn add(a: Half, b: Half) -> Half {
    Half::from_f64(a.to_f64() + b.to_f64())
}

/// Correctly rounded binary16 product.
#[inline]
pub fn mul(a: Half, b: Half) -> Half {
    Half::from_f64(a.to_f64() * b.to_f64())
}

/// Spacing between adjacent binary16 values at `magnitude`.
///
/// The subnormal range has the fixed spacing 2^-24. Magnitudes at or beyond
/// 2^16, non-positive or non-finite inputs are rejected.
pub fn ulp_at(magnitude: f64) -> Result<f64> {
    if !magnitude.is_finite() || magnitude <= 0.0 {
        return Err(Error::OutOfRange(format!(
            "ulp_at needs a positive finite magnitude, got {magnitude}"
        )));
    }
    if magnitude >= 65536.0 {
        return Err(Error::OutOfRange(format!(
            "{magnitude} is beyond the binary16 range"
        )));
    }
    if magnitude < MIN_POSITIVE_NORMAL {
        return Ok(SUBNORMAL_QUANTUM);
    }
    let exp = ((magnitude.to_bits() >> 52) & 0x7FF) as i32 - 1023;
    Ok(pow2(exp - 10))
}

fn pow2(e: i32) -> f64 {
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// Rounds an `f32` holding an exact product of two binary16 values to the
/// nearest binary16 value, returned widened to `f32`.
///
/// Hot-path variant of `Half::from_f32(x).to_f32()` for the micro-kernels.
#[inline(always)]
pub(crate) fn round_f32(x: f32) -> f32 {
    let bits = x.to_bits();
    let abs = bits & 0x7FFF_FFFF;
    // [2^-14, 65520): normal binary16 results, no overflow.
    if (0x3880_0000..0x477F_F000).contains(&abs) {
        let r = (bits + 0x0FFF + ((bits >> 13) & 1)) & !0x1FFF;
        f32::from_bits(r)
    } else {
        Half::from_f32(x).to_f32()
    }
}

/// Rounds an exact `f64` sum to the nearest binary16 value, widened to `f32`.
#[inline(always)]
pub(crate) fn round_f64(x: f64) -> f32 {
    let bits = x.to_bits();
    let abs = bits & 0x7FFF_FFFF_FFFF_FFFF;
    if (0x3F10_0000_0000_0000..0x40EF_FE00_0000_0000).contains(&abs) {
        let r = (bits + 0x01FF_FFFF_FFFF + ((bits >> 42) & 1)) & !0x03FF_FFFF_FFFF;
        f64::from_bits(r) as f32
    } else {
        Half::from_f64(x).to_f32()
    }
}

/// One binary16 multiply-then-add step on widened values: `acc + a*b` with
/// the product and the sum each rounded to binary16.
#[inline(always)]
pub(crate) fn mul_add_step(acc: f32, a: f32, b: f32) -> f32 {
    let p = round_f32(a * b);
    round_f64(acc as f64 + p as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Decoding written from the textbook formula, independent of `to_f32`.
    fn textbook_value(bits: u16) -> f64 {
        let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
        let exp = ((bits >> 10) & 0x1F) as i32;
        let man = (bits & 0x3FF) as f64;
        if exp == 0 {
            sign * man * 2f64.powi(-24)
        } else {
            sign * (1.0 + man / 1024.0) * 2f64.powi(exp - 15)
        }
    }

    /// All finite non-negative patterns in increasing order of value.
    fn positive_table() -> Vec<(f64, u16)> {
        (0u16..0x7C00).map(|b| (textbook_value(b), b)).collect()
    }

    /// Nearest-value search over the table; ties pick the even pattern,
    /// magnitudes past the midpoint above MAX go to infinity.
    fn oracle_round(table: &[(f64, u16)], x: f64) -> u16 {
        let sign = if x.is_sign_negative() { 0x8000 } else { 0 };
        let m = x.abs();
        if m >= 65520.0 {
            return sign | 0x7C00;
        }
        let idx = table.partition_point(|&(v, _)| v < m);
        let pick = if idx == table.len() {
            table[idx - 1].1
        } else if table[idx].0 == m || idx == 0 {
            table[idx].1
        } else {
            let (lo, lb) = table[idx - 1];
            let (hi, hb) = table[idx];
            let dl = m - lo;
            let dh = hi - m;
            if dl < dh {
                lb
            } else if dh < dl {
                hb
            } else if lb & 1 == 0 {
                lb
            } else {
                hb
            }
        };
        sign | pick
    }

    /// Exact value as an integer multiple of 2^-24.
    fn scaled(bits: u16) -> i64 {
        let exp = ((bits >> 10) & 0x1F) as i64;
        let man = (bits & 0x3FF) as i64;
        let mag = if exp == 0 {
            man
        } else {
            (1024 + man) << (exp - 1)
        };
        if bits & 0x8000 != 0 {
            -mag
        } else {
            mag
        }
    }

    fn random_finite(rng: &mut ChaCha8Rng) -> Half {
        loop {
            let h = Half::from_bits(rng.gen());
            if h.is_finite() {
                return h;
            }
        }
    }

    #[test]
    fn decode_matches_textbook_formula_for_all_finite_patterns() {
        for bits in 0u16..=u16::MAX {
            let h = Half::from_bits(bits);
            if h.is_finite() {
                assert_eq!(h.to_f64(), textbook_value(bits), "bits {bits:#06x}");
            }
        }
    }

    #[test]
    fn encode_decode_round_trip_every_finite_pattern() {
        for bits in 0u16..=u16::MAX {
            let h = Half::from_bits(bits);
            if h.is_finite() {
                assert_eq!(encode(decode(h)).to_bits(), bits);
            }
        }
    }

    #[test]
    fn decode_is_strictly_increasing_on_positive_patterns() {
        let mut prev = -1.0;
        for bits in 0u16..0x7C00 {
            let v = decode(Half::from_bits(bits));
            assert!(v > prev, "not increasing at {bits:#06x}");
            prev = v;
        }
    }

    #[test]
    fn integers_up_to_2048_are_exact() {
        for i in 0..=2048u32 {
            assert_eq!(decode(encode(i as f64)), i as f64);
        }
        assert_eq!(decode(encode(2049.0)), 2048.0);
        assert_eq!(decode(encode(2051.0)), 2052.0);
        assert_eq!(encode(0.0), Half::ZERO);
    }

    #[test]
    fn encode_examples() {
        assert_eq!(decode(encode(2048.0)), 2048.0);
        assert_eq!(decode(encode(1024.5)), 1024.0);
        assert_eq!(decode(encode(1025.5)), 1026.0);
        assert_eq!(decode(encode(511.75)), 511.75);
        assert_eq!(encode(65519.0), Half::MAX);
        assert_eq!(encode(65520.0), Half::INFINITY);
        assert_eq!(encode(-1e9), Half::NEG_INFINITY);
        assert!(encode(f64::NAN).is_nan());
        assert_eq!(encode(-0.0), Half::NEG_ZERO);
        // Halfway between 0 and the smallest subnormal rounds to even (zero).
        assert_eq!(encode(SUBNORMAL_QUANTUM / 2.0), Half::ZERO);
        assert_eq!(encode(SUBNORMAL_QUANTUM * 1.5).to_bits(), 2);
    }

    #[test]
    fn encode_matches_table_oracle_on_random_reals() {
        let table = positive_table();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200_000 {
            let e: i32 = rng.gen_range(-27..17);
            let x = rng.gen_range(-1.0..1.0) * 2f64.powi(e);
            assert_eq!(encode(x).to_bits(), oracle_round(&table, x), "x = {x:e}");
        }
        // Exact midpoints between neighbours exercise the tie rule.
        for bits in 0u16..0x7BFF {
            let mid = (textbook_value(bits) + textbook_value(bits + 1)) / 2.0;
            assert_eq!(encode(mid).to_bits(), oracle_round(&table, mid));
        }
    }

    #[test]
    fn add_and_mul_match_exact_integer_oracle() {
        let table = positive_table();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let a = random_finite(&mut rng);
            let b = random_finite(&mut rng);

            let sum = (scaled(a.to_bits()) + scaled(b.to_bits())) as f64 * 2f64.powi(-24);
            let want = oracle_round(&table, sum);
            let got = add(a, b).to_bits();
            // Exact zero sums: IEEE gives +0 unless both operands are -0.
            if sum == 0.0 {
                let both_neg = a.to_bits() == 0x8000 && b.to_bits() == 0x8000;
                assert_eq!(got, if both_neg { 0x8000 } else { 0 });
            } else {
                assert_eq!(got, want, "{a:?} + {b:?}");
            }

            let prod =
                (scaled(a.to_bits()) as i128 * scaled(b.to_bits()) as i128) as f64 * 2f64.powi(-48);
            let got = mul(a, b).to_bits();
            if prod == 0.0 {
                assert_eq!(got & 0x7FFF, 0);
                assert_eq!(got & 0x8000, (a.to_bits() ^ b.to_bits()) & 0x8000);
            } else {
                assert_eq!(got, oracle_round(&table, prod), "{a:?} * {b:?}");
            }
        }
    }

    #[test]
    fn add_mul_examples() {
        let h = |x: f64| encode(x);
        assert_eq!(add(h(1.0), h(1.0)), h(2.0));
        assert_eq!(add(h(2047.0), h(1.0)), h(2048.0));
        assert_eq!(add(h(2048.0), h(1.0)), h(2048.0));
        assert_eq!(mul(h(3.0), h(5.0)), h(15.0));
        for bits in (0u16..0x7C00).step_by(37) {
            let x = Half::from_bits(bits);
            assert_eq!(mul(Half::ONE, x), x);
            assert_eq!(decode(mul(Half::ZERO, x)), 0.0);
        }
    }

    #[test]
    fn ulp_examples() {
        assert_eq!(ulp_at(600.0).unwrap(), 0.5);
        assert_eq!(ulp_at(1500.0).unwrap(), 1.0);
        assert_eq!(ulp_at(3000.0).unwrap(), 2.0);
        assert_eq!(ulp_at(1.0).unwrap(), 2f64.powi(-10));
        assert_eq!(ulp_at(1e-6).unwrap(), SUBNORMAL_QUANTUM);
        assert_eq!(ulp_at(65504.0).unwrap(), 32.0);
        assert!(ulp_at(0.0).is_err());
        assert!(ulp_at(-3.0).is_err());
        assert!(ulp_at(70000.0).is_err());
        assert!(ulp_at(f64::INFINITY).is_err());
    }

    #[test]
    fn ulp_matches_neighbour_spacing() {
        for bits in 1u16..0x7BFF {
            let lo = textbook_value(bits);
            let hi = textbook_value(bits + 1);
            assert_eq!(ulp_at(lo).unwrap(), hi - lo, "at {lo}");
        }
    }

    #[test]
    fn fast_rounding_agrees_with_encode() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500_000 {
            let a = random_finite(&mut rng).to_f32();
            let b = random_finite(&mut rng).to_f32();
            let p = a * b;
            assert_eq!(round_f32(p).to_bits(), Half::from_f32(p).to_f32().to_bits());
            let s = a as f64 + b as f64;
            assert_eq!(round_f64(s).to_bits(), Half::from_f64(s).to_f32().to_bits());
        }
        for x in [65519.0f64, 65520.0, 65504.0, 2049.0, -2049.0, 6.1e-5, 6.2e-5] {
            assert_eq!(round_f64(x).to_bits(), Half::from_f64(x).to_f32().to_bits());
            let x = x as f32;
            assert_eq!(round_f32(x).to_bits(), Half::from_f32(x).to_f32().to_bits());
        }
    }
}
