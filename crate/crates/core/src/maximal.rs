//! Dyadic one-sided maximal operators and the planar anchored operators.
//!
//! Values are means of `|f|` in density units and are constant on cells.
//! Mass outside the extent counts as zero; an empty supremum is zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{quarter_offset, Dyadic, Sign};
use crate::error::{Error, Result};
use crate::grid::{prefix_tables, CellCube, CellSet, DyadicPyramid, GridDomain, Integrand, WeightField, MAX_DIM};

const NO_WITNESS: u8 = u8::MAX;

/// Which operator produced a [`MaximalResult`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Operator {
    DyadicPlus,
    DyadicMinus,
    /// `𝓜^+`: squares `Q_{x,h}` anchored at the cell corner.
    Anchored,
    /// `𝓜^{+i}`, truncated to sizes `h > xi` when `xi` is set.
    Subsquare { i: u8, xi: Option<Dyadic> },
}

/// Per-cell operator values with the scale of an extremal cube.
#[derive(Clone, Debug, PartialEq)]
pub struct MaximalResult {
    domain: GridDomain,
    operator: Operator,
    values: Vec<f64>,
    witness: Vec<u8>,
}

impl MaximalResult {
    pub(crate) fn from_parts(domain: GridDomain, operator: Operator, parts: Vec<(f64, u8)>) -> Self {
        let (values, witness) = parts.into_iter().unzip();
        MaximalResult {
            domain,
            operator,
            values,
            witness,
        }
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn operator(&self) -> Operator {
        self.operator
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Scale (log2 of the side in cells) of the extremal cube at a cell.
    pub fn witness_scale(&self, idx: usize) -> Option<u32> {
        (self.witness[idx] != NO_WITNESS).then(|| self.witness[idx] as u32)
    }

    /// The extremal cube at a cell: the containing grid-dyadic cube for the
    /// dyadic operators, the anchored square `Q_{x,h}` for the planar ones.
    pub fn witness(&self, idx: usize) -> Option<CellCube> {
        let scale = self.witness_scale(idx)?;
        let c = self.domain.cell_coords(idx);
        Some(match self.operator {
            Operator::DyadicPlus | Operator::DyadicMinus => CellCube::containing(scale, &c[..self.domain.dim()]),
            Operator::Anchored | Operator::Subsquare { .. } => {
                let anchor: Vec<i64> = c[..self.domain.dim()].iter().map(|&v| v as i64).collect();
                CellCube::new(scale, &anchor)
            }
        })
    }

    pub fn to_field(&self) -> WeightField {
        WeightField::new(&self.domain, self.values.clone()).expect("operator values are finite and nonnegative")
    }
}

/// `M^{+,d} f`.
pub fn dyadic_plus_maximal<F: Integrand + ?Sized>(f: &F) -> MaximalResult {
    dyadic_maximal(f, Sign::Plus)
}

/// `M^{-,d} f`.
pub fn dyadic_minus_maximal<F: Integrand + ?Sized>(f: &F) -> MaximalResult {
    dyadic_maximal(f, Sign::Minus)
}

/// One pass per scale, coarse to fine: each cube keeps the better of its own
/// neighbour mean and its parent's best, so every cell sees its whole
/// ancestor chain in O(cells) total work.
pub fn dyadic_maximal<F: Integrand + ?Sized>(f: &F, sign: Sign) -> MaximalResult {
    let domain = *f.domain();
    let dim = domain.dim();
    let pyramid = DyadicPyramid::build(f);
    let top = domain.max_scale();
    let mut best: Vec<(f64, u8)> = Vec::new();
    for scale in (0..=top).rev() {
        let per_side = domain.side_cells() >> scale;
        let parent_side = per_side / 2;
        let len = per_side.pow(dim as u32);
        let parent = &best;
        let pyramid = &pyramid;
        best = (0..len)
            .into_par_iter()
            .map(|k| {
                let mut anchor = [0i64; MAX_DIM];
                let mut parent_idx = 0usize;
                let mut r = k;
                let mut mul = 1usize;
                for a in anchor.iter_mut().take(dim) {
                    let c = r % per_side;
                    r /= per_side;
                    *a = (c << scale) as i64;
                    parent_idx += (c / 2) * mul;
                    mul *= parent_side.max(1);
                }
                let q = CellCube { scale, anchor };
                let nb = match sign {
                    Sign::Plus => q.plus(dim),
                    Sign::Minus => q.minus(dim),
                };
                let own = pyramid.sum_or_zero(&nb) / q.cell_count(dim) as f64;
                let inherited = if scale == top { (0.0, NO_WITNESS) } else { parent[parent_idx] };
                if own > 0.0 && own >= inherited.0 {
                    (own, scale as u8)
                } else {
                    inherited
                }
            })
            .collect();
    }
    let operator = match sign {
        Sign::Plus => Operator::DyadicPlus,
        Sign::Minus => Operator::DyadicMinus,
    };
    MaximalResult::from_parts(domain, operator, best)
}

fn require_planar(domain: &GridDomain) -> Result<()> {
    if domain.dim() == 2 {
        Ok(())
    } else {
        Err(Error::NotPlanar(domain.dim()))
    }
}

/// `𝓜^+ f`: the max over sizes `2^s` cells (`s` in `scales`, default all) of
/// the mean of `|f|` over `Q_{x,h}`, `x` the lower-left corner of the cell.
pub fn onesided_maximal_2d<F: Integrand + ?Sized>(f: &F, scales: Option<&[u32]>) -> Result<MaximalResult> {
    let domain = *f.domain();
    require_planar(&domain)?;
    let all: Vec<u32> = (0..=domain.max_scale()).collect();
    let mut scales: Vec<u32> = scales.map(|s| s.to_vec()).unwrap_or(all);
    scales.sort_unstable();
    scales.dedup();
    if let Some(&s) = scales.iter().find(|&&s| s > domain.max_scale()) {
        return Err(Error::invalid(format!("size 2^{s} cells exceeds the extent")));
    }
    let table = prefix_tables(f);
    let n = domain.side_cells();
    let parts = (0..domain.num_cells())
        .into_par_iter()
        .map(|idx| {
            let (x, y) = ((idx % n) as i64, (idx / n) as i64);
            let mut best = (0.0, NO_WITNESS);
            for &s in &scales {
                let h = 1i64 << s;
                let mean = table.query_cells(&[x, y], &[x + h, y + h]) / (h * h) as f64;
                if mean > best.0 {
                    best = (mean, s as u8);
                }
            }
            best
        })
        .collect();
    Ok(MaximalResult::from_parts(domain, Operator::Anchored, parts))
}

/// `𝓜^{+i} f`, or the truncated `M_xi^{+i}` over sizes `h > xi` when `xi` is given.
///
/// A square of one cell has all its subsquares inside the cell, so that size
/// contributes `f(x)`; smaller admissible sizes give the same value.
pub fn subsquare_maximal_2d<F: Integrand + ?Sized>(f: &F, i: u8, xi: Option<Dyadic>) -> Result<MaximalResult> {
    let domain = *f.domain();
    require_planar(&domain)?;
    if !(1..=3).contains(&i) {
        return Err(Error::invalid(format!("subsquare index {i} not in 1..=3")));
    }
    if let Some(x) = xi {
        if !x.is_power_of_two() {
            return Err(Error::NotDyadic(format!("truncation size {x} is not a power of two")));
        }
    }
    let (dx, dy) = quarter_offset(i)?;
    let scales: Vec<u32> = (0..=domain.max_scale())
        .filter(|&s| xi.is_none_or(|x| Dyadic::pow2(s as i32 - domain.depth()) > x))
        .collect();
    let table = prefix_tables(f);
    let dens = f.densities();
    let n = domain.side_cells();
    let parts = (0..domain.num_cells())
        .into_par_iter()
        .map(|idx| {
            let (x, y) = ((idx % n) as i64, (idx / n) as i64);
            let mut best = (0.0, NO_WITNESS);
            for &s in &scales {
                let mean = if s == 0 {
                    dens[idx]
                } else {
                    let q = 1i64 << (s - 1);
                    let (lx, ly) = (x + dx as i64 * q, y + dy as i64 * q);
                    table.query_cells(&[lx, ly], &[lx + q, ly + q]) / (q * q) as f64
                };
                if mean > best.0 {
                    best = (mean, s as u8);
                }
            }
            best
        })
        .collect();
    Ok(MaximalResult::from_parts(domain, Operator::Subsquare { i, xi }, parts))
}

/// Selector for [`level_set`].
#[derive(Clone, Copy, Debug)]
pub enum LevelMode<'a> {
    /// `{T f > t}`.
    Above,
    /// `{t < T f <= 2t}`.
    Band,
    /// `Ω_t = {t < T f, 𝓜^+ f <= 2t}` with `full` the `𝓜^+` values.
    Omega { full: &'a MaximalResult },
}

pub fn level_set(result: &MaximalResult, t: f64, mode: LevelMode<'_>) -> Result<CellSet> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("threshold t = {t} must be positive")));
    }
    let d = result.domain();
    let v = result.values();
    match mode {
        LevelMode::Above => Ok(CellSet::from_predicate(d, |c| v[c] > t)),
        LevelMode::Band => Ok(CellSet::from_predicate(d, |c| v[c] > t && v[c] <= 2.0 * t)),
        LevelMode::Omega { full } => {
            d.check_same(full.domain())?;
            let m = full.values();
            Ok(CellSet::from_predicate(d, |c| v[c] > t && m[c] <= 2.0 * t))
        }
    }
}

/// Brute-force evaluation from exact box measures, one cube at a time.
pub mod oracle {
    use super::*;
    use crate::dyadic::DyadicCube;

    fn field_of<F: Integrand + ?Sized>(f: &F) -> WeightField {
        WeightField::new(f.domain(), f.densities().into_owned()).expect("integrand densities are valid")
    }

    /// Every grid-dyadic cube containing the cell corner, levels extent..=L.
    pub fn dyadic_maximal<F: Integrand + ?Sized>(f: &F, sign: Sign) -> MaximalResult {
        let domain = *f.domain();
        let field = field_of(f);
        let top = domain.max_scale();
        let parts = domain
            .cells()
            .map(|idx| {
                let x = domain.cell_corner(idx);
                let mut best = (0.0, NO_WITNESS);
                for scale in 0..=top {
                    let level = domain.level_of_scale(scale);
                    let side = Dyadic::pow2(-level);
                    let lower: Vec<Dyadic> = x
                        .iter()
                        .map(|c| Dyadic::new(c.floor_at(level), level))
                        .collect();
                    let q = DyadicCube::anchored_at(&lower, level);
                    debug_assert!(q.contains_point(&x) && q.side() == side);
                    let nb = match sign {
                        Sign::Plus => q.plus_neighbor(),
                        Sign::Minus => q.minus_neighbor(),
                    };
                    let mean = field.measure_box(&nb.to_box()).unwrap() / q.volume().to_f64();
                    if mean > best.0 {
                        best = (mean, scale as u8);
                    }
                }
                best
            })
            .collect();
        let operator = match sign {
            Sign::Plus => Operator::DyadicPlus,
            Sign::Minus => Operator::DyadicMinus,
        };
        MaximalResult::from_parts(domain, operator, parts)
    }

    /// Smallest sub-cell size the planar oracles try explicitly.
    const SUB_CELL_LEVELS: i32 = 2;

    /// `𝓜^+` from `[x, x+h)^2` boxes, including sizes below one cell.
    pub fn onesided_maximal_2d<F: Integrand + ?Sized>(f: &F) -> Result<MaximalResult> {
        let domain = *f.domain();
        require_planar(&domain)?;
        let field = field_of(f);
        let parts = domain
            .cells()
            .map(|idx| {
                let x = domain.cell_corner(idx);
                let mut best = (0.0, NO_WITNESS);
                for level in (domain.depth() - domain.max_scale() as i32..=domain.depth() + SUB_CELL_LEVELS).rev() {
                    let q = DyadicCube::anchored_at(&x, level);
                    let mean = field.measure_box(&q.to_box()).unwrap() / q.volume().to_f64();
                    if mean > best.0 {
                        best = (mean, (domain.depth() - level).max(0) as u8);
                    }
                }
                best
            })
            .collect();
        Ok(MaximalResult::from_parts(domain, Operator::Anchored, parts))
    }

    /// `𝓜^{+i}` / `M_xi^{+i}` from exact subsquares `Q^i_{x,h}`.
    pub fn subsquare_maximal_2d<F: Integrand + ?Sized>(f: &F, i: u8, xi: Option<Dyadic>) -> Result<MaximalResult> {
        let domain = *f.domain();
        require_planar(&domain)?;
        let field = field_of(f);
        let parts = domain
            .cells()
            .map(|idx| {
                let x = domain.cell_corner(idx);
                let mut best = (0.0, NO_WITNESS);
                for level in (domain.depth() - domain.max_scale() as i32..=domain.depth() + SUB_CELL_LEVELS).rev() {
                    if xi.is_some_and(|t| Dyadic::pow2(-level) <= t) {
                        continue;
                    }
                    let q = DyadicCube::anchored_at(&x, level).subsquare(i).unwrap();
                    let mean = field.measure_box(&q.to_box()).unwrap() / q.volume().to_f64();
                    if mean > best.0 {
                        best = (mean, (domain.depth() - level).max(0) as u8);
                    }
                }
                best
            })
            .collect();
        Ok(MaximalResult::from_parts(domain, Operator::Subsquare { i, xi }, parts))
    }
}
