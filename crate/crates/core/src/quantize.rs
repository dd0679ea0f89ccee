//! Uniform mid-tread floor quantizer `q(x)_i = Δ·⌊x_i/Δ⌋`.
//!
//! Levels are exact positive rationals `num/den`, so lattice points `k·Δ`
//! map back to the integer `k` without drift and the consensus protocol can
//! work on exact integer masses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, StateVector};

/// Largest lattice magnitude for which `k·num` is exact in `f64`.
const EXACT_LIMIT: f64 = 9_007_199_254_740_992.0; // 2^53

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QuantizationLevel {
    num: u64,
    den: u64,
}

impl QuantizationLevel {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidLevel(format!("{num}/{den} is not positive")));
        }
        let g = gcd(num, den);
        let (num, den) = (num / g, den / g);
        if num as f64 > EXACT_LIMIT || den as f64 > EXACT_LIMIT {
            return Err(Error::InvalidLevel(format!(
                "{num}/{den} is too fine to represent"
            )));
        }
        Ok(Self { num, den })
    }

    /// Parses a plain or scientific decimal such as `0.5`, `1e-3` or
    /// `2.5E-4` into an exact rational.
    pub fn from_decimal(text: &str) -> Result<Self> {
        let bad = || Error::InvalidLevel(format!("{text:?} is not a positive decimal"));
        let t = text.trim();
        let (mantissa, exponent) = match t.find(['e', 'E']) {
            Some(i) => (&t[..i], t[i + 1..].parse::<i32>().map_err(|_| bad())?),
            None => (t, 0),
        };
        let mantissa = mantissa.strip_prefix('+').unwrap_or(mantissa);
        let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part
            .chars()
            .chain(frac_part.chars())
            .all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        let digits = digits.trim_start_matches('0');
        let mut num: u64 = if digits.is_empty() {
            0
        } else {
            digits.parse().map_err(|_| bad())?
        };
        let scale = exponent - frac_part.len() as i32;
        let mut den: u64 = 1;
        let overflow = || Error::InvalidLevel(format!("{text:?} is out of range"));
        if scale >= 0 {
            num = 10u64
                .checked_pow(scale as u32)
                .and_then(|p| num.checked_mul(p))
                .ok_or_else(overflow)?;
        } else {
            den = 10u64
                .checked_pow(scale.unsigned_abs())
                .ok_or_else(overflow)?;
        }
        Self::new(num, den)
    }

    pub fn numerator(&self) -> u64 {
        self.num
    }

    pub fn denominator(&self) -> u64 {
        self.den
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Nearest `f64` to `k·Δ`.
    pub fn lattice_value(&self, k: i64) -> f64 {
        (k as f64 * self.num as f64) / self.den as f64
    }

    /// Largest `|k|` whose lattice value is computed exactly.
    pub fn max_lattice_magnitude(&self) -> i64 {
        (EXACT_LIMIT / self.num as f64) as i64
    }

    /// `⌊x/Δ⌋` for a scalar, such that
    /// `lattice_value(k) <= x < lattice_value(k + 1)`.
    pub fn floor_index(&self, x: f64) -> Result<i64> {
        if !x.is_finite() {
            return Err(Error::NonFinite("quantizer input"));
        }
        let approx = (x * self.den as f64 / self.num as f64).floor();
        let limit = self.max_lattice_magnitude();
        if approx.abs() >= limit as f64 {
            return Err(Error::Overflow(format!(
                "{x} / {self} exceeds the lattice range ±{limit}"
            )));
        }
        let mut k = approx as i64;
        // One-step corrections for rounding in the scaled product.
        if self.lattice_value(k) > x {
            k -= 1;
        } else if self.lattice_value(k + 1) <= x {
            k += 1;
        }
        Ok(k)
    }
}

impl fmt::Display for QuantizationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl FromStr for QuantizationLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_decimal(s)
    }
}

impl TryFrom<String> for QuantizationLevel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::from_decimal(&s)
    }
}

impl From<QuantizationLevel> for String {
    fn from(q: QuantizationLevel) -> Self {
        q.to_string()
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Component-wise `Δ·⌊x_i/Δ⌋`.
pub fn quantize(x: &StateVector, delta: QuantizationLevel) -> Result<StateVector> {
    let k = to_lattice_integer(x, delta)?;
    Ok(from_lattice_integer(&k, delta))
}

/// Component-wise `⌊x_i/Δ⌋`.
pub fn to_lattice_integer(x: &StateVector, delta: QuantizationLevel) -> Result<Vec<i64>> {
    x.iter().map(|&v| delta.floor_index(v)).collect()
}

pub fn from_lattice_integer(k: &[i64], delta: QuantizationLevel) -> StateVector {
    StateVector::from_iterator(k.len(), k.iter().map(|&v| delta.lattice_value(v)))
}
