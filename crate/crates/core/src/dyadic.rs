//! Exact dyadic geometry.
//!
//! Every object built by the one-sided theory (cubes, their plus/minus
//! neighbours, scaled extensions, the right/down dilation `Q~` and the four
//! quarter squares) has dyadic rational corners, so the kernel stores
//! coordinates as `mantissa * 2^-exp` and never rounds. All boxes are
//! half-open `[lower, upper)`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A dyadic rational `mant * 2^-exp`, kept normalized (odd mantissa, or zero with `exp == 0`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dyadic {
    mant: i64,
    exp: i32,
}

fn narrow(v: i128) -> i64 {
    i64::try_from(v).expect("dyadic coordinate overflow")
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic { mant: 0, exp: 0 };
    pub const ONE: Dyadic = Dyadic { mant: 1, exp: 0 };

    pub fn new(mant: i64, exp: i32) -> Self {
        if mant == 0 {
            return Dyadic::ZERO;
        }
        let tz = mant.trailing_zeros() as i32;
        Dyadic {
            mant: mant >> tz,
            exp: exp - tz,
        }
    }

    pub fn from_int(v: i64) -> Self {
        Dyadic::new(v, 0)
    }

    /// `2^e`.
    pub fn pow2(e: i32) -> Self {
        Dyadic { mant: 1, exp: -e }
    }

    /// `num / den`, rejecting denominators that are not powers of two.
    pub fn from_ratio(num: i64, den: i64) -> Result<Self> {
        if den <= 0 || (den as u64).count_ones() != 1 {
            return Err(Error::NotDyadic(format!("{num}/{den}")));
        }
        Ok(Dyadic::new(num, den.trailing_zeros() as i32))
    }

    /// Exact conversion of a finite float (every finite binary64 is dyadic).
    pub fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::NotDyadic(x.to_string()));
        }
        if x == 0.0 {
            return Ok(Dyadic::ZERO);
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 0 { 1i64 } else { -1 };
        let raw_exp = ((bits >> 52) & 0x7ff) as i32;
        let frac = (bits & ((1u64 << 52) - 1)) as i64;
        let (mant, e2) = if raw_exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1i64 << 52), raw_exp - 1075)
        };
        Ok(Dyadic::new(sign * mant, -e2))
    }

    pub fn mantissa(self) -> i64 {
        self.mant
    }

    pub fn exponent(self) -> i32 {
        self.exp
    }

    pub fn is_zero(self) -> bool {
        self.mant == 0
    }

    pub fn is_positive(self) -> bool {
        self.mant > 0
    }

    /// True when the value is `2^k` for some integer `k`.
    pub fn is_power_of_two(self) -> bool {
        self.mant == 1
    }

    /// `log2` of a power of two.
    pub fn log2(self) -> Option<i32> {
        self.is_power_of_two().then_some(-self.exp)
    }

    pub fn scale_pow2(self, k: i32) -> Self {
        if self.mant == 0 {
            self
        } else {
            Dyadic {
                mant: self.mant,
                exp: self.exp - k,
            }
        }
    }

    pub fn half(self) -> Self {
        self.scale_pow2(-1)
    }

    /// Whether `self * 2^level` is an integer.
    pub fn is_integer_at(self, level: i32) -> bool {
        self.mant == 0 || self.exp <= level
    }

    /// `self * 2^e` as an integer, if exact.
    pub fn to_int_at(self, e: i32) -> Option<i64> {
        if self.mant == 0 {
            return Some(0);
        }
        let shift = e - self.exp;
        if shift < 0 {
            return None;
        }
        let v = (self.mant as i128) << shift;
        i64::try_from(v).ok()
    }

    /// `floor(self * 2^e)`.
    pub fn floor_at(self, e: i32) -> i64 {
        let shift = e - self.exp;
        if shift >= 0 {
            narrow((self.mant as i128) << shift)
        } else {
            narrow((self.mant as i128) >> (-shift).min(127))
        }
    }

    pub fn to_f64(self) -> f64 {
        self.mant as f64 * 2f64.powi(-self.exp)
    }

    fn aligned(self, other: Self) -> (i128, i128, i32) {
        let e = self.exp.max(other.exp);
        let a = (self.mant as i128) << (e - self.exp);
        let b = (other.mant as i128) << (e - other.exp);
        (a, b, e)
    }

    pub fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b, _) = self.aligned(*other);
        a.cmp(&b)
    }
}

impl Add for Dyadic {
    type Output = Dyadic;
    fn add(self, rhs: Dyadic) -> Dyadic {
        let (a, b, e) = self.aligned(rhs);
        let s = a + b;
        if s == 0 {
            return Dyadic::ZERO;
        }
        let tz = s.trailing_zeros() as i32;
        Dyadic {
            mant: narrow(s >> tz),
            exp: e - tz,
        }
    }
}

impl Sub for Dyadic {
    type Output = Dyadic;
    fn sub(self, rhs: Dyadic) -> Dyadic {
        self + (-rhs)
    }
}

impl Neg for Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        Dyadic {
            mant: -self.mant,
            exp: self.exp,
        }
    }
}

impl Mul for Dyadic {
    type Output = Dyadic;
    fn mul(self, rhs: Dyadic) -> Dyadic {
        let m = (self.mant as i128) * (rhs.mant as i128);
        if m == 0 {
            return Dyadic::ZERO;
        }
        Dyadic {
            mant: narrow(m),
            exp: self.exp + rhs.exp,
        }
    }
}

impl From<i64> for Dyadic {
    fn from(v: i64) -> Self {
        Dyadic::from_int(v)
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exp <= 0 {
            write!(f, "{}", (self.mant as i128) << (-self.exp))
        } else if self.exp < 63 {
            write!(f, "{}/{}", self.mant, 1u64 << self.exp)
        } else {
            write!(f, "{}/2^{}", self.mant, self.exp)
        }
    }
}

impl FromStr for Dyadic {
    type Err = Error;

    /// Accepts integers, `a/b` with `b` a power of two, `a/2^k`, and terminating
    /// decimals whose value is dyadic (`0.375` yes, `0.1` no).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::NotDyadic(s.to_string());
        if let Some((num, den)) = s.split_once('/') {
            let num: i64 = num.trim().parse().map_err(|_| bad())?;
            let den = den.trim();
            if let Some(k) = den.strip_prefix("2^") {
                let k: i32 = k.parse().map_err(|_| bad())?;
                return Ok(Dyadic::new(num, k));
            }
            let den: i64 = den.parse().map_err(|_| bad())?;
            return Dyadic::from_ratio(num, den);
        }
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        let mut n: i128 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| bad())? };
        let k = frac_part.len() as u32;
        // n / 10^k is dyadic iff 5^k divides n.
        let five_k = 5i128.checked_pow(k).ok_or_else(bad)?;
        if n % five_k != 0 {
            return Err(bad());
        }
        n /= five_k;
        if neg {
            n = -n;
        }
        let mant = i64::try_from(n).map_err(|_| bad())?;
        Ok(Dyadic::new(mant, k as i32))
    }
}

impl Serialize for Dyadic {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Dyadic {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which side a one-sided construction extends to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

/// Half-open axis-aligned box `[lower, upper)` with dyadic corners.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicBox {
    lower: Vec<Dyadic>,
    upper: Vec<Dyadic>,
}

impl DyadicBox {
    pub fn new(lower: Vec<Dyadic>, upper: Vec<Dyadic>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::invalid("box of dimension 0"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
            return Err(Error::invalid("box lower corner must be < upper corner"));
        }
        Ok(DyadicBox { lower, upper })
    }

    /// The square `[x, x + side)^n`.
    pub fn anchored(x: &[Dyadic], side: Dyadic) -> Result<Self> {
        DyadicBox::new(x.to_vec(), x.iter().map(|&c| c + side).collect())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[Dyadic] {
        &self.lower
    }

    pub fn upper(&self) -> &[Dyadic] {
        &self.upper
    }

    pub fn side(&self, axis: usize) -> Dyadic {
        self.upper[axis] - self.lower[axis]
    }

    pub fn is_square(&self) -> bool {
        let s = self.side(0);
        (1..self.dim()).all(|i| self.side(i) == s)
    }

    pub fn volume(&self) -> Dyadic {
        (0..self.dim()).fold(Dyadic::ONE, |acc, i| acc * self.side(i))
    }

    /// Half-open membership.
    pub fn contains_point(&self, p: &[Dyadic]) -> bool {
        p.len() == self.dim()
            && self
                .lower
                .iter()
                .zip(&self.upper)
                .zip(p)
                .all(|((l, u), x)| l <= x && x < u)
    }

    /// Closed membership `[lower, upper]`, used for corner points of squares.
    pub fn contains_point_closed(&self, p: &[Dyadic]) -> bool {
        p.len() == self.dim()
            && self
                .lower
                .iter()
                .zip(&self.upper)
                .zip(p)
                .all(|((l, u), x)| l <= x && x <= u)
    }

    pub fn contains_box(&self, inner: &DyadicBox) -> bool {
        contains(self, inner)
    }

    pub fn intersect(&self, other: &DyadicBox) -> Option<DyadicBox> {
        if self.dim() != other.dim() {
            return None;
        }
        let lower: Vec<Dyadic> = self.lower.iter().zip(&other.lower).map(|(a, b)| (*a).max(*b)).collect();
        let upper: Vec<Dyadic> = self.upper.iter().zip(&other.upper).map(|(a, b)| (*a).min(*b)).collect();
        DyadicBox::new(lower, upper).ok()
    }

    pub fn translate(&self, shift: &[Dyadic]) -> DyadicBox {
        DyadicBox {
            lower: self.lower.iter().zip(shift).map(|(a, s)| *a + *s).collect(),
            upper: self.upper.iter().zip(shift).map(|(a, s)| *a + *s).collect(),
        }
    }

    /// Plus-neighbour of a square box: translate by its side in every coordinate.
    pub fn plus_neighbor(&self) -> Result<DyadicBox> {
        if !self.is_square() {
            return Err(Error::NotSquare);
        }
        let s = self.side(0);
        Ok(self.translate(&vec![s; self.dim()]))
    }

    pub fn minus_neighbor(&self) -> Result<DyadicBox> {
        if !self.is_square() {
            return Err(Error::NotSquare);
        }
        let s = self.side(0);
        Ok(self.translate(&vec![-s; self.dim()]))
    }

    /// Quarter `i` of a 2D square, numbered as [`DyadicCube::subsquare`].
    pub fn quarter(&self, i: u8) -> Result<DyadicBox> {
        if self.dim() != 2 {
            return Err(Error::NotPlanar(self.dim()));
        }
        if !self.is_square() {
            return Err(Error::NotSquare);
        }
        let (dx, dy) = quarter_offset(i)?;
        let h = self.side(0).half();
        let x = self.lower[0] + if dx == 1 { h } else { Dyadic::ZERO };
        let y = self.lower[1] + if dy == 1 { h } else { Dyadic::ZERO };
        DyadicBox::anchored(&[x, y], h)
    }

    /// `(B^+)^i` for a square box; `plus_quarter(2)` is the `B^{+2}` of the planar covering.
    pub fn plus_quarter(&self, i: u8) -> Result<DyadicBox> {
        self.plus_neighbor()?.quarter(i)
    }

    pub fn plus2(&self) -> Result<DyadicBox> {
        self.plus_quarter(2)
    }
}

impl fmt::Display for DyadicBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dim() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "[{},{})", self.lower[i], self.upper[i])?;
        }
        Ok(())
    }
}

/// `(dx, dy)` offsets of quarter `i`: 0 lower-left, 1 upper-right, 2 lower-right, 3 upper-left.
pub(crate) fn quarter_offset(i: u8) -> Result<(u8, u8)> {
    match i {
        0 => Ok((0, 0)),
        1 => Ok((1, 1)),
        2 => Ok((1, 0)),
        3 => Ok((0, 1)),
        _ => Err(Error::invalid(format!("subsquare index {i} not in 0..=3"))),
    }
}

/// Exact containment `inner ⊆ outer` of half-open boxes.
pub fn contains(outer: &DyadicBox, inner: &DyadicBox) -> bool {
    outer.dim() == inner.dim()
        && (0..outer.dim()).all(|i| outer.lower[i] <= inner.lower[i] && inner.upper[i] <= outer.upper[i])
}

/// Number of boxes of `family` containing `point` (half-open).
pub fn overlap_count(family: &[DyadicBox], point: &[Dyadic]) -> usize {
    family.iter().filter(|b| b.contains_point(point)).count()
}

/// An axis-aligned cube of side `2^-level` with lower corner `lower`.
///
/// The cube is *grid-dyadic* when every lower coordinate is an integer
/// multiple of its side; translates such as `Q~`-related squares may be
/// aligned to a finer grid and are still represented exactly.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicCube {
    level: i32,
    lower: Vec<Dyadic>,
}

impl DyadicCube {
    pub fn new(level: i32, lower: Vec<Dyadic>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("cube of dimension 0"));
        }
        Ok(DyadicCube { level, lower })
    }

    /// The grid-dyadic cube `2^-level * (anchor + [0,1)^n)`.
    pub fn grid(level: i32, anchor: &[i64]) -> Self {
        assert!(!anchor.is_empty(), "cube of dimension 0");
        DyadicCube {
            level,
            lower: anchor.iter().map(|&a| Dyadic::new(a, level)).collect(),
        }
    }

    /// `Q_{x,h} = [x, x+h)^n` with `h = 2^-level`.
    pub fn anchored_at(x: &[Dyadic], level: i32) -> Self {
        DyadicCube {
            level,
            lower: x.to_vec(),
        }
    }

    /// The cube of side `2^-level` whose upper corner is `x`: `[x - h, x)^n`.
    pub fn with_upper_corner(x: &[Dyadic], level: i32) -> Self {
        let h = Dyadic::pow2(-level);
        DyadicCube {
            level,
            lower: x.iter().map(|&c| c - h).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn level(&self) -> i32 {
        self.level
    }

    pub fn side(&self) -> Dyadic {
        Dyadic::pow2(-self.level)
    }

    pub fn lower(&self) -> &[Dyadic] {
        &self.lower
    }

    pub fn upper(&self) -> Vec<Dyadic> {
        let h = self.side();
        self.lower.iter().map(|&c| c + h).collect()
    }

    pub fn volume(&self) -> Dyadic {
        Dyadic::pow2(-self.level * self.dim() as i32)
    }

    pub fn is_grid_dyadic(&self) -> bool {
        self.lower.iter().all(|c| c.is_integer_at(self.level))
    }

    /// Integer anchor at the cube's own level, when grid-dyadic.
    pub fn anchor(&self) -> Option<Vec<i64>> {
        self.lower.iter().map(|c| c.to_int_at(self.level)).collect()
    }

    pub fn to_box(&self) -> DyadicBox {
        DyadicBox {
            lower: self.lower.clone(),
            upper: self.upper(),
        }
    }

    pub fn contains_point(&self, p: &[Dyadic]) -> bool {
        self.to_box().contains_point(p)
    }

    fn translated(&self, by: Dyadic) -> DyadicCube {
        DyadicCube {
            level: self.level,
            lower: self.lower.iter().map(|&c| c + by).collect(),
        }
    }

    /// `Q^+`: translate by `+l(Q)` in every coordinate.
    pub fn plus_neighbor(&self) -> DyadicCube {
        self.translated(self.side())
    }

    /// `Q^-`: translate by `-l(Q)` in every coordinate.
    pub fn minus_neighbor(&self) -> DyadicCube {
        self.translated(-self.side())
    }

    /// `(Q)^{s,+} = prod [a_i, a_i + s h)` or `(Q)^{s,-} = prod [b_i - s h, b_i)`.
    pub fn scaled_extension(&self, s: Dyadic, sign: Sign) -> Result<DyadicBox> {
        if !s.is_positive() {
            return Err(Error::invalid(format!("scale {s} must be positive")));
        }
        let len = s * self.side();
        match sign {
            Sign::Plus => DyadicBox::new(self.lower.clone(), self.lower.iter().map(|&a| a + len).collect()),
            Sign::Minus => {
                let upper = self.upper();
                DyadicBox::new(upper.iter().map(|&b| b - len).collect(), upper)
            }
        }
    }

    /// Quarter `i` of a planar square: 0 is `Q_{x,h/2}` (lower-left), 1 upper-right,
    /// 2 lower-right, 3 upper-left.
    pub fn subsquare(&self, i: u8) -> Result<DyadicCube> {
        if self.dim() != 2 {
            return Err(Error::NotPlanar(self.dim()));
        }
        let (dx, dy) = quarter_offset(i)?;
        let h = self.side().half();
        let x = self.lower[0] + if dx == 1 { h } else { Dyadic::ZERO };
        let y = self.lower[1] + if dy == 1 { h } else { Dyadic::ZERO };
        Ok(DyadicCube {
            level: self.level + 1,
            lower: vec![x, y],
        })
    }

    /// `Q~ = [a, a + 3h/2) x [b - h/2, b + h)`: dilation to the right and downwards by `h/2`.
    pub fn tilde(&self) -> Result<DyadicBox> {
        self.tilde_variant(2)
    }

    /// Dilation matched to quarter `i` of the plus-neighbour.
    ///
    /// `i = 2` is `Q~`; `i = 3` is its transpose (left and up); `i = 1` dilates
    /// right and up. In each case `Q^{+i}` lies in `(Q~)^+`, and for the
    /// square with upper-right corner `x`, `(Q~)^+` lies in `Q_{x, 2 l(Q)}`.
    pub fn tilde_variant(&self, i: u8) -> Result<DyadicBox> {
        if self.dim() != 2 {
            return Err(Error::NotPlanar(self.dim()));
        }
        let h = self.side();
        let hh = h.half();
        let (a, b) = (self.lower[0], self.lower[1]);
        let (lo, hi) = match i {
            1 => ([a, b], [a + h + hh, b + h + hh]),
            2 => ([a, b - hh], [a + h + hh, b + h]),
            3 => ([a - hh, b], [a + h, b + h + hh]),
            _ => return Err(Error::invalid(format!("dilation variant {i} not in 1..=3"))),
        };
        DyadicBox::new(lo.to_vec(), hi.to_vec())
    }

    /// `Q^{+i}`: quarter `i` of the plus-neighbour.
    pub fn plus_quarter(&self, i: u8) -> Result<DyadicCube> {
        self.plus_neighbor().subsquare(i)
    }

    /// `Q^{+2}`: the lower-right quarter of `Q^+`.
    pub fn plus2(&self) -> Result<DyadicCube> {
        self.plus_quarter(2)
    }

    /// Dyadic parent (only meaningful for grid-dyadic cubes).
    pub fn parent(&self) -> Option<DyadicCube> {
        let anchor = self.anchor()?;
        Some(DyadicCube::grid(
            self.level - 1,
            &anchor.iter().map(|a| a.div_euclid(2)).collect::<Vec<_>>(),
        ))
    }
}

impl fmt::Display for DyadicCube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.to_box().fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> Dyadic {
        s.parse().unwrap()
    }

    fn bx(lo: &[&str], hi: &[&str]) -> DyadicBox {
        DyadicBox::new(lo.iter().map(|s| d(s)).collect(), hi.iter().map(|s| d(s)).collect()).unwrap()
    }

    #[test]
    fn dyadic_parse_and_display() {
        assert_eq!(d("3/4").to_string(), "3/4");
        assert_eq!(d("0.375"), Dyadic::from_ratio(3, 8).unwrap());
        assert_eq!(d("-1/2").to_f64(), -0.5);
        assert_eq!(d("6/4"), d("3/2"));
        assert_eq!(d("8").to_string(), "8");
        assert_eq!(d("1/2^3"), d("1/8"));
        assert!("0.1".parse::<Dyadic>().is_err());
        assert!("1/3".parse::<Dyadic>().is_err());
        assert!("abc".parse::<Dyadic>().is_err());
        assert_eq!(Dyadic::from_f64(0.625).unwrap(), d("5/8"));
        assert_eq!(Dyadic::from_f64(-3.0).unwrap(), d("-3"));
    }

    #[test]
    fn plus_and_minus_neighbors() {
        let q = DyadicCube::grid(0, &[0, 0]);
        assert_eq!(q.plus_neighbor(), DyadicCube::grid(0, &[1, 1]));
        let q = DyadicCube::grid(1, &[1]);
        assert_eq!(q.plus_neighbor().to_box(), bx(&["1"], &["3/2"]));
        let q = DyadicCube::grid(0, &[1, 1]);
        assert_eq!(q.minus_neighbor(), DyadicCube::grid(0, &[0, 0]));
        let q = DyadicCube::grid(1, &[0]);
        assert_eq!(q.minus_neighbor().to_box(), bx(&["-1/2"], &["0"]));
        assert!(q.plus_neighbor().is_grid_dyadic());
    }

    #[test]
    fn scaled_extensions() {
        let q = DyadicCube::grid(0, &[0, 0]);
        assert_eq!(q.scaled_extension(Dyadic::ONE, Sign::Plus).unwrap(), q.to_box());
        assert_eq!(q.scaled_extension(Dyadic::ONE, Sign::Minus).unwrap(), q.to_box());
        let ext = q.scaled_extension(d("2"), Sign::Plus).unwrap();
        assert_eq!(ext, bx(&["0", "0"], &["2", "2"]));
        assert_eq!(ext.volume(), d("4") * q.volume());
        let q1 = DyadicCube::grid(0, &[0]);
        assert_eq!(q1.scaled_extension(d("1/2"), Sign::Minus).unwrap(), bx(&["1/2"], &["1"]));
        assert!(q1.scaled_extension(Dyadic::ZERO, Sign::Plus).is_err());
    }

    #[test]
    fn subsquares_follow_quarter_numbering() {
        let q = DyadicCube::grid(-1, &[0, 0]); // [0,2)^2
        assert_eq!(q.subsquare(2).unwrap().to_box(), bx(&["1", "0"], &["2", "1"]));
        assert_eq!(q.subsquare(3).unwrap().to_box(), bx(&["0", "1"], &["1", "2"]));
        assert_eq!(q.subsquare(1).unwrap().to_box(), bx(&["1", "1"], &["2", "2"]));
        assert_eq!(q.subsquare(0).unwrap().to_box(), bx(&["0", "0"], &["1", "1"]));
        assert!(q.subsquare(4).is_err());
        assert!(matches!(DyadicCube::grid(0, &[0]).subsquare(0), Err(Error::NotPlanar(1))));
    }

    #[test]
    fn tilde_and_plus2() {
        let q = DyadicCube::grid(0, &[0, 0]);
        let t = q.tilde().unwrap();
        assert_eq!(t, bx(&["0", "-1/2"], &["3/2", "1"]));
        assert_eq!(t.volume(), d("9/4") * q.volume());

        let q = DyadicCube::grid(0, &[-1, -1]); // [-1,0]^2, corner x = (0,0)
        assert_eq!(q.plus2().unwrap().to_box(), bx(&["1/2", "0"], &["1", "1/2"]));
        let t = q.tilde().unwrap();
        assert_eq!(t, bx(&["-1", "-3/2"], &["1/2", "0"]));
        let t2 = t.plus2().unwrap();
        assert_eq!(t2, bx(&["5/4", "0"], &["2", "3/4"]));
        let x = [Dyadic::ZERO, Dyadic::ZERO];
        let big = DyadicCube::anchored_at(&x, -1).to_box();
        assert!(contains(&big, &t2));
        assert!(contains(&q.to_box(), &q.to_box()));
        assert!(t.plus2().is_ok());
        assert!(bx(&["0", "0"], &["1", "2"]).plus2().is_err());
    }

    #[test]
    fn overlap_of_disjoint_cubes() {
        let a = DyadicCube::grid(1, &[0, 0]).to_box();
        let b = DyadicCube::grid(1, &[1, 0]).to_box();
        for x in 0..8 {
            for y in 0..8 {
                let p = [Dyadic::new(x, 3), Dyadic::new(y, 3)];
                assert!(overlap_count(&[a.clone(), b.clone()], &p) <= 1);
            }
        }
    }

    fn arb_cube() -> impl Strategy<Value = DyadicCube> {
        (-4i32..6, prop::collection::vec(-50i64..50, 2), 0i32..3).prop_map(|(level, anchor, extra)| {
            // anchor at a possibly finer grid than the cube's own level
            let lower = anchor.iter().map(|&a| Dyadic::new(a, level + extra)).collect();
            DyadicCube::new(level, lower).unwrap()
        })
    }

    proptest! {
        #[test]
        fn plus_minus_are_inverse(q in arb_cube()) {
            prop_assert_eq!(q.plus_neighbor().minus_neighbor(), q.clone());
            prop_assert_eq!(q.minus_neighbor().plus_neighbor(), q.clone());
            prop_assert_eq!(q.plus_neighbor().is_grid_dyadic(), q.is_grid_dyadic());
        }

        #[test]
        fn subsquares_partition(q in arb_cube()) {
            let parts: Vec<DyadicBox> = (0..4).map(|i| q.subsquare(i).unwrap().to_box()).collect();
            let total = parts.iter().fold(Dyadic::ZERO, |acc, b| acc + b.volume());
            prop_assert_eq!(total, q.volume());
            for i in 0..4 {
                prop_assert!(contains(&q.to_box(), &parts[i]));
                for j in (i + 1)..4 {
                    prop_assert!(parts[i].intersect(&parts[j]).is_none());
                }
            }
        }

        #[test]
        fn tilde_contains_cube(q in arb_cube()) {
            let t = q.tilde().unwrap();
            prop_assert!(contains(&t, &q.to_box()));
            prop_assert_eq!(t.volume(), Dyadic::from_ratio(9, 4).unwrap() * q.volume());
            prop_assert!(contains(&q.plus_neighbor().to_box(), &q.plus2().unwrap().to_box()));
        }

        #[test]
        fn plus_neighbor_is_anchored_square_at_corner(q in arb_cube()) {
            let x = q.upper();
            prop_assert_eq!(q.plus_neighbor(), DyadicCube::anchored_at(&x, q.level()));
        }

        #[test]
        fn tilde_plus_inside_double_square(q in arb_cube()) {
            let x = q.upper();
            let big = DyadicCube::anchored_at(&x, q.level() - 1).to_box();
            for i in 1..=3u8 {
                let t = q.tilde_variant(i).unwrap();
                prop_assert!(t.contains_point_closed(&x));
                prop_assert!(contains(&big, &t.plus_neighbor().unwrap()));
                prop_assert!(contains(&big, &t.plus_quarter(i).unwrap()));
                prop_assert!(contains(&t.plus_neighbor().unwrap(), &q.plus_quarter(i).unwrap().to_box()));
            }
        }
    }
}
