//! Weight-class constants of a pair `(w, v)` on a grid, with witnesses.
//!
//! All ratios are formed in cell units (masses as sums of densities, volumes
//! as cell counts). The cell volume cancels, and integer-valued densities give
//! bit-exact results.

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::dyadic::{DyadicCube, Sign};
use crate::error::{Error, Result};
use crate::grid::{
    anchored_cell_cubes, compensated_sum, Compensated, grid_cell_cubes, prefix_tables, CellCube, CellSet, CubeConstraint, GridDomain,
    WeightField, WeightPair, MAX_DIM,
};
use crate::maximal::dyadic_minus_maximal;

/// Which cube family a supremum runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flavor {
    /// Grid-dyadic cubes with `Q^+` in the extent.
    Dyadic,
    /// Dyadic-size cubes at every cell anchor with `Q, Q^+` in the extent.
    Anchored,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassKind {
    /// `sup (|E|/|Q|) (w(Q)/v(E))^(1/p)` over `E ⊂ Q^+`.
    Restricted,
    /// `sup |Q|^-p w(Q) (∫_{Q^+} v^(1-p'))^(p-1)`.
    Muckenhoupt,
    /// `max M^- w / v`.
    A1Pointwise,
}

/// The extremal cube and set of a class constant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub cube: DyadicCube,
    /// `E` as cell indices (ascending); for the A1 check, the single cell `y`.
    pub cells: Vec<usize>,
    #[serde(skip)]
    pub(crate) cell_cube: CellCube,
}

impl Witness {
    fn new(domain: &GridDomain, cell_cube: CellCube, mut cells: Vec<usize>) -> Self {
        cells.sort_unstable();
        Witness {
            cube: domain.cell_cube_to_dyadic(&cell_cube),
            cells,
            cell_cube,
        }
    }

    pub fn cell_cube(&self) -> CellCube {
        self.cell_cube
    }
}

pub(crate) fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassConstant {
    #[serde(serialize_with = "ser_extended")]
    pub value: f64,
    pub kind: ClassKind,
    pub flavor: Flavor,
    pub sign: Sign,
    pub p: f64,
    /// `None` when no cube qualifies or every ratio vanishes.
    pub witness: Option<Witness>,
}

impl ClassConstant {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }

    /// Recomputes the witness ratio from measures in domain units.
    pub fn reevaluate(&self, pair: &WeightPair) -> Result<f64> {
        let Some(wit) = &self.witness else {
            return Ok(0.0);
        };
        let d = pair.domain();
        let (q, q_nb) = oriented(d, &wit.cell_cube, self.sign);
        let q_set = CellSet::from_cells(d, q.cells(d))?;
        let q_vol = q_set.measure();
        let wq = pair.w.measure(&q_set)?;
        match self.kind {
            ClassKind::Restricted => {
                let e = CellSet::from_cells(d, wit.cells.iter().copied())?;
                let ve = pair.v.measure(&e)?;
                Ok(restricted_ratio(e.measure(), q_vol, wq, ve, self.p))
            }
            ClassKind::Muckenhoupt => {
                let pp = pair.conjugate().ok_or_else(|| Error::invalid("Muckenhoupt constant needs p > 1"))?;
                let nb_cells = q_nb.cells(d);
                let dual = nb_cells
                    .iter()
                    .map(|&c| dual_density(pair.v.at(c), pp))
                    .map(|x| x * d.cell_volume());
                let dual = compensated_sum(dual);
                Ok(muckenhoupt_ratio(q_vol, wq, dual, self.p))
            }
            ClassKind::A1Pointwise => {
                let y = wit.cells[0];
                let mean = wq / q_vol;
                Ok(a1_ratio(mean, pair.v.at(y)))
            }
        }
    }
}

/// `(m/n) (w/v)^(1/p)`, zero when `m` or `w` vanishes, infinite when only `v` does.
pub fn restricted_ratio(m: f64, n: f64, w: f64, v: f64, p: f64) -> f64 {
    if m == 0.0 || w == 0.0 {
        0.0
    } else if v == 0.0 {
        f64::INFINITY
    } else if p == 1.0 {
        (m * w) / (n * v)
    } else {
        (m / n) * (w / v).powf(1.0 / p)
    }
}

fn muckenhoupt_ratio(n: f64, w: f64, dual: f64, p: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else if dual.is_infinite() {
        f64::INFINITY
    } else {
        w * dual.powf(p - 1.0) / n.powf(p)
    }
}

fn a1_ratio(mean: f64, v: f64) -> f64 {
    if mean == 0.0 {
        0.0
    } else if v == 0.0 {
        f64::INFINITY
    } else {
        mean / v
    }
}

fn dual_density(v: f64, pp: f64) -> f64 {
    if v == 0.0 {
        f64::INFINITY
    } else {
        v.powf(1.0 - pp)
    }
}

/// `(Q, Q^±)` for the one-sided orientation.
fn oriented(domain: &GridDomain, q: &CellCube, sign: Sign) -> (CellCube, CellCube) {
    let dim = domain.dim();
    match sign {
        Sign::Plus => (*q, q.plus(dim)),
        Sign::Minus => (*q, q.minus(dim)),
    }
}

/// Qualifying cubes of a flavor, in a fixed order that serves as the tie-break key.
pub(crate) fn qualifying_cubes(domain: &GridDomain, flavor: Flavor) -> Vec<CellCube> {
    match flavor {
        Flavor::Dyadic => grid_cell_cubes(domain, CubeConstraint::PlusInside).collect(),
        Flavor::Anchored => anchored_cell_cubes(domain).collect(),
    }
}

/// Best `(ratio, key)` with ties going to the smaller key.
fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

/// Sorted-prefix supremum over `E ⊂ Q^+` for one cube: `(ratio, |E| in cells, Q^+ cells in scan order)`.
pub(crate) fn restricted_sup_for_cube(pair: &WeightPair, q: &CellCube) -> (f64, usize, Vec<usize>) {
    let d = pair.domain();
    let dim = d.dim();
    let w = pair.w.cell_mass(q.cells(d));
    restricted_sup_over(pair, q.cell_count(dim) as f64, w, q.plus(dim).cells(d))
}

/// Sorted-prefix supremum for a set `Q` of `n` cells with `w`-mass `w` over subsets of `nb`.
pub(crate) fn restricted_sup_over(pair: &WeightPair, n: f64, w: f64, mut nb: Vec<usize>) -> (f64, usize, Vec<usize>) {
    nb.sort_by(|&a, &b| pair.v.at(a).total_cmp(&pair.v.at(b)).then(a.cmp(&b)));
    let mut best = (0.0, 0usize);
    let mut acc = Compensated::default();
    for (k, &c) in nb.iter().enumerate() {
        acc.add(pair.v.at(c));
        let m = k + 1;
        let r = restricted_ratio(m as f64, n, w, acc.value(), pair.p);
        if r >= best.0 && r > 0.0 {
            best = (r, m);
        }
    }
    (best.0, best.1, nb)
}

/// `[(w,v)]_{A_p^{+,d}(R)}` (dyadic flavor) or its anchored counterpart.
pub fn restricted_constant(pair: &WeightPair, flavor: Flavor) -> ClassConstant {
    let d = *pair.domain();
    let cubes = qualifying_cubes(&d, flavor);
    let (value, key) = cubes
        .par_iter()
        .enumerate()
        .map(|(k, q)| (restricted_sup_for_cube(pair, q).0, k))
        .reduce(|| (0.0, usize::MAX), better);
    let witness = (value > 0.0).then(|| {
        let q = cubes[key];
        let (_, m, order) = restricted_sup_for_cube(pair, &q);
        Witness::new(&d, q, order[..m].to_vec())
    });
    ClassConstant {
        value,
        kind: ClassKind::Restricted,
        flavor,
        sign: Sign::Plus,
        p: pair.p,
        witness,
    }
}

/// `[(w,v)]_{A_p^+}` over the flavor's cubes; requires `p > 1`.
pub fn muckenhoupt_constant(pair: &WeightPair, flavor: Flavor) -> Result<ClassConstant> {
    let pp = pair
        .conjugate()
        .ok_or_else(|| Error::invalid("Muckenhoupt constant needs p > 1; use the A1 pointwise check at p = 1"))?;
    let d = *pair.domain();
    let dim = d.dim();
    let dual = WeightField::new(&d, pair.v.density().iter().map(|&v| dual_density(v, pp)).map(|x| x.min(f64::MAX)).collect())?;
    let zero_v = CellSet::from_predicate(&d, |c| pair.v.at(c) == 0.0);
    let cubes = qualifying_cubes(&d, flavor);
    let ratio = |q: &CellCube| {
        let nb = q.plus(dim).cells(&d);
        let w = pair.w.cell_mass(q.cells(&d));
        let dm = if nb.iter().any(|&c| zero_v.contains(c)) {
            f64::INFINITY
        } else {
            dual.cell_mass(nb)
        };
        muckenhoupt_ratio(q.cell_count(dim) as f64, w, dm, pair.p)
    };
    let (value, key) = cubes
        .par_iter()
        .enumerate()
        .map(|(k, q)| (ratio(q), k))
        .reduce(|| (0.0, usize::MAX), better);
    let witness = (value > 0.0).then(|| Witness::new(&d, cubes[key], Vec::new()));
    Ok(ClassConstant {
        value,
        kind: ClassKind::Muckenhoupt,
        flavor,
        sign: Sign::Plus,
        p: pair.p,
        witness,
    })
}

/// `max_y M^- w(y) / v(y)`, the pointwise `A_1^+` constant (`p = 1`).
///
/// `M^-` runs over the cubes `R ∋ y` with `R^-` in the flavor's family.
pub fn a1_pointwise_check(pair: &WeightPair, flavor: Flavor) -> Result<ClassConstant> {
    if pair.p != 1.0 {
        return Err(Error::invalid(format!("A1 pointwise check needs p = 1, got {}", pair.p)));
    }
    let d = *pair.domain();
    let dim = d.dim();
    // per cell: (M^- w, Q = R^-) with ties toward the smaller cube
    let minus: Vec<(f64, Option<CellCube>)> = match flavor {
        Flavor::Dyadic => {
            let m = dyadic_minus_maximal(&pair.w);
            d.cells().map(|c| (m.value(c), m.witness(c).map(|r| r.minus(dim)))).collect()
        }
        Flavor::Anchored => anchored_minus_maximal(&pair.w),
    };
    let (value, key) = d
        .cells()
        .into_par_iter()
        .map(|y| (a1_ratio(minus[y].0, pair.v.at(y)), y))
        .reduce(|| (0.0, usize::MAX), better);
    let witness = (value > 0.0).then(|| Witness::new(&d, minus[key].1.expect("positive mean has a cube"), vec![key]));
    Ok(ClassConstant {
        value,
        kind: ClassKind::A1Pointwise,
        flavor,
        sign: Sign::Plus,
        p: 1.0,
        witness,
    })
}

/// Per cell `y`: max over cell-anchored dyadic-size `R ∋ y` with `R, R^-` in the
/// extent of the mean of `w` over `R^-`, and that `R^-`.
fn anchored_minus_maximal(w: &WeightField) -> Vec<(f64, Option<CellCube>)> {
    let d = *w.domain();
    let dim = d.dim();
    let n = d.side_cells() as i64;
    let table = prefix_tables(w);
    d.cells()
        .into_par_iter()
        .map(|y| {
            let c = d.cell_coords(y);
            let mut best: (f64, Option<CellCube>) = (0.0, None);
            for scale in 0..d.max_scale() {
                let h = 1i64 << scale;
                // R anchors a with a <= c < a + h, h <= a (R^- inside), a + h <= n
                let mut lo = [0i64; MAX_DIM];
                let mut hi = [0i64; MAX_DIM];
                let mut empty = false;
                for i in 0..dim {
                    lo[i] = (c[i] as i64 - h + 1).max(h);
                    hi[i] = (c[i] as i64).min(n - h);
                    empty |= lo[i] > hi[i];
                }
                if empty {
                    continue;
                }
                let mut a = lo;
                loop {
                    let q = CellCube {
                        scale,
                        anchor: std::array::from_fn(|i| if i < dim { a[i] - h } else { 0 }),
                    };
                    let mean = table.query_cube(&q) / q.cell_count(dim) as f64;
                    if mean > best.0 {
                        best = (mean, Some(q));
                    }
                    // odometer over the anchor box
                    let mut i = 0;
                    loop {
                        if i == dim {
                            break;
                        }
                        if a[i] < hi[i] {
                            a[i] += 1;
                            break;
                        }
                        a[i] = lo[i];
                        i += 1;
                    }
                    if i == dim {
                        break;
                    }
                }
            }
            best
        })
        .collect()
}

fn reflect_cube(domain: &GridDomain, q: &CellCube) -> CellCube {
    let n = domain.side_cells() as i64;
    let mut r = *q;
    for a in r.anchor.iter_mut().take(domain.dim()) {
        *a = n - *a - q.side();
    }
    r
}

/// The mirrored constant (`A^-` classes) via reflection of the pair.
pub fn mirrored(constant_of: impl Fn(&WeightPair) -> Result<ClassConstant>, pair: &WeightPair) -> Result<ClassConstant> {
    let d = *pair.domain();
    let mut c = constant_of(&pair.reflect())?;
    c.sign = Sign::Minus;
    if let Some(w) = c.witness.take() {
        let n = d.side_cells();
        let cells = w
            .cells
            .iter()
            .map(|&idx| {
                let k = d.cell_coords(idx);
                let r: Vec<usize> = (0..d.dim()).map(|i| n - 1 - k[i]).collect();
                d.cell_index(&r)
            })
            .collect();
        c.witness = Some(Witness::new(&d, reflect_cube(&d, &w.cell_cube), cells));
    }
    Ok(c)
}

pub fn restricted_constant_minus(pair: &WeightPair, flavor: Flavor) -> ClassConstant {
    mirrored(|p| Ok(restricted_constant(p, flavor)), pair).expect("restricted constant is infallible")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// `(max{w,a}, max{v,b})`.
    MaxMax,
    /// `(min{w,a}, max{v,b})`.
    MinMax,
}

pub fn truncate_pair(pair: &WeightPair, a: f64, b: f64, variant: Truncation) -> Result<WeightPair> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::invalid(format!("truncation levels a = {a}, b = {b} must be positive and finite")));
    }
    let w = match variant {
        Truncation::MaxMax => pair.w.map(|x| x.max(a))?,
        Truncation::MinMax => pair.w.map(|x| x.min(a))?,
    };
    let v = pair.v.map(|x| x.max(b))?;
    WeightPair::new(w, v, pair.p)
}
