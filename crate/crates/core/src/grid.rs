//! Finite dyadic grids: the domain, cell sets, cell-constant weights and
//! exact measure queries.
//!
//! Cells are indexed row-major with the first coordinate fastest. Inside the
//! crate, cubes are handled as [`CellCube`]s in local cell coordinates; the
//! public surface converts them to exact [`DyadicCube`]s.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::dyadic::{Dyadic, DyadicBox, DyadicCube};
use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Largest supported number of cells per side (`2^12`).
const MAX_SIDE_LOG2: u32 = 12;

/// A depth-`L` dyadic grid over a grid-dyadic extent cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDomain {
    dim: usize,
    depth: i32,
    extent_level: i32,
    extent_anchor: [i64; MAX_DIM],
}

impl GridDomain {
    /// The grid of side `2^-depth` over `[0,1)^dim`.
    pub fn unit(dim: usize, depth: u32) -> Result<Self> {
        GridDomain::new(dim, depth as i32, &DyadicCube::grid(0, &vec![0; dim.max(1)]))
    }

    pub fn new(dim: usize, depth: i32, extent: &DyadicCube) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::invalid(format!("dimension {dim} not in 1..=3")));
        }
        if extent.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: extent.dim(),
            });
        }
        let anchor = extent
            .anchor()
            .ok_or_else(|| Error::invalid("grid extent must be a grid-dyadic cube"))?;
        if extent.level() > depth {
            return Err(Error::invalid("grid extent is finer than the cell size"));
        }
        let scale = (depth - extent.level()) as u32;
        if scale > MAX_SIDE_LOG2 || scale as usize * dim > 24 {
            return Err(Error::invalid(format!("grid with 2^{scale} cells per side in {dim}D is too large")));
        }
        let mut extent_anchor = [0i64; MAX_DIM];
        extent_anchor[..dim].copy_from_slice(&anchor);
        Ok(GridDomain {
            dim,
            depth,
            extent_level: extent.level(),
            extent_anchor,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `L`: cells have side `2^-L`.
    pub fn depth(&self) -> i32 {
        self.depth
    }

    /// `log2` of the number of cells per side; cube scales run over `0..=max_scale`.
    pub fn max_scale(&self) -> u32 {
        (self.depth - self.extent_level) as u32
    }

    pub fn side_cells(&self) -> usize {
        1usize << self.max_scale()
    }

    pub fn num_cells(&self) -> usize {
        self.side_cells().pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        2f64.powi(-self.depth * self.dim as i32)
    }

    pub fn cell_side(&self) -> Dyadic {
        Dyadic::pow2(-self.depth)
    }

    pub fn extent(&self) -> DyadicCube {
        DyadicCube::grid(self.extent_level, &self.extent_anchor[..self.dim])
    }

    pub fn extent_box(&self) -> DyadicBox {
        self.extent().to_box()
    }

    /// Level `k` of a cube of side `2^scale` cells.
    pub fn level_of_scale(&self, scale: u32) -> i32 {
        self.depth - scale as i32
    }

    pub fn cell_coords(&self, idx: usize) -> [usize; MAX_DIM] {
        let n = self.side_cells();
        let mut c = [0usize; MAX_DIM];
        let mut r = idx;
        for slot in c.iter_mut().take(self.dim) {
            *slot = r % n;
            r /= n;
        }
        c
    }

    pub fn cell_index(&self, coords: &[usize]) -> usize {
        let n = self.side_cells();
        coords[..self.dim].iter().rev().fold(0, |acc, &c| acc * n + c)
    }

    /// Index of the cell at signed local coordinates, if inside the extent.
    pub fn cell_index_checked(&self, coords: &[i64]) -> Option<usize> {
        let n = self.side_cells() as i64;
        let mut idx = 0usize;
        for &c in coords[..self.dim].iter().rev() {
            if c < 0 || c >= n {
                return None;
            }
            idx = idx * n as usize + c as usize;
        }
        Some(idx)
    }

    /// Exact lower corner of a cell.
    pub fn cell_corner(&self, idx: usize) -> Vec<Dyadic> {
        let c = self.cell_coords(idx);
        (0..self.dim).map(|i| self.local_to_dyadic(c[i] as i64, i)).collect()
    }

    pub fn cell_cube(&self, idx: usize) -> DyadicCube {
        DyadicCube::anchored_at(&self.cell_corner(idx), self.depth)
    }

    fn origin_cells(&self, axis: usize) -> i64 {
        self.extent_anchor[axis] << self.max_scale()
    }

    /// Dyadic coordinate of the local cell line `c` along `axis`.
    pub fn local_to_dyadic(&self, c: i64, axis: usize) -> Dyadic {
        Dyadic::new(self.origin_cells(axis) + c, self.depth)
    }

    /// Local cell coordinate of a dyadic coordinate, if it lies on a cell line.
    pub fn dyadic_to_local(&self, x: Dyadic, axis: usize) -> Option<i64> {
        x.to_int_at(self.depth).map(|g| g - self.origin_cells(axis))
    }

    pub fn cell_cube_to_dyadic(&self, c: &CellCube) -> DyadicCube {
        let lower: Vec<Dyadic> = (0..self.dim).map(|i| self.local_to_dyadic(c.anchor[i], i)).collect();
        DyadicCube::anchored_at(&lower, self.level_of_scale(c.scale))
    }

    /// Converts a cube whose corners and side are on cell lines.
    pub fn dyadic_to_cell_cube(&self, q: &DyadicCube) -> Result<CellCube> {
        if q.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: q.dim(),
            });
        }
        if q.level() > self.depth {
            return Err(Error::invalid(format!("cube {q} is smaller than a cell")));
        }
        let scale = (self.depth - q.level()) as u32;
        let mut anchor = [0i64; MAX_DIM];
        for (i, slot) in anchor.iter_mut().enumerate().take(self.dim) {
            *slot = self
                .dyadic_to_local(q.lower()[i], i)
                .ok_or_else(|| Error::invalid(format!("cube {q} is not aligned to the cells")))?;
        }
        Ok(CellCube { scale, anchor })
    }

    pub fn cells(&self) -> std::ops::Range<usize> {
        0..self.num_cells()
    }

    pub(crate) fn check_same(&self, other: &GridDomain) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::DomainMismatch)
        }
    }
}

/// A cube of side `2^scale` cells at a signed local cell anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellCube {
    pub scale: u32,
    pub anchor: [i64; MAX_DIM],
}

impl CellCube {
    pub fn new(scale: u32, anchor: &[i64]) -> Self {
        let mut a = [0i64; MAX_DIM];
        a[..anchor.len()].copy_from_slice(anchor);
        CellCube { scale, anchor: a }
    }

    /// The grid-dyadic cube at `scale` containing local cell `coords`.
    pub fn containing(scale: u32, coords: &[usize]) -> Self {
        let mut a = [0i64; MAX_DIM];
        for (slot, &c) in a.iter_mut().zip(coords) {
            *slot = ((c >> scale) << scale) as i64;
        }
        CellCube { scale, anchor: a }
    }

    pub fn side(&self) -> i64 {
        1i64 << self.scale
    }

    pub fn cell_count(&self, dim: usize) -> u64 {
        1u64 << (self.scale as usize * dim)
    }

    pub fn is_grid_dyadic(&self, dim: usize) -> bool {
        self.anchor[..dim].iter().all(|a| a.rem_euclid(self.side()) == 0)
    }

    fn shifted(&self, dim: usize, by: i64) -> CellCube {
        let mut c = *self;
        for a in c.anchor.iter_mut().take(dim) {
            *a += by;
        }
        c
    }

    pub fn plus(&self, dim: usize) -> CellCube {
        self.shifted(dim, self.side())
    }

    pub fn minus(&self, dim: usize) -> CellCube {
        self.shifted(dim, -self.side())
    }

    pub fn parent(&self, dim: usize) -> CellCube {
        let side = self.side() * 2;
        let mut c = CellCube {
            scale: self.scale + 1,
            anchor: self.anchor,
        };
        for a in c.anchor.iter_mut().take(dim) {
            *a = a.div_euclid(side) * side;
        }
        c
    }

    pub fn is_inside(&self, domain: &GridDomain) -> bool {
        let n = domain.side_cells() as i64;
        self.anchor[..domain.dim()].iter().all(|&a| a >= 0 && a + self.side() <= n)
    }

    pub fn contains_cell(&self, dim: usize, coords: &[usize]) -> bool {
        (0..dim).all(|i| {
            let c = coords[i] as i64;
            c >= self.anchor[i] && c < self.anchor[i] + self.side()
        })
    }

    /// `self ⊆ other`.
    pub fn is_within(&self, dim: usize, other: &CellCube) -> bool {
        (0..dim).all(|i| self.anchor[i] >= other.anchor[i] && self.anchor[i] + self.side() <= other.anchor[i] + other.side())
    }

    pub fn intersects(&self, dim: usize, other: &CellCube) -> bool {
        (0..dim).all(|i| self.anchor[i] < other.anchor[i] + other.side() && other.anchor[i] < self.anchor[i] + self.side())
    }

    /// Indices of the cells of the cube that lie in the extent, in canonical order.
    pub fn cells(&self, domain: &GridDomain) -> Vec<usize> {
        cells_in_range(domain, &self.anchor, &self.shifted(domain.dim(), self.side()).anchor)
    }
}

/// Cell indices with `lo <= coords < hi` (clipped to the extent), canonical order.
pub(crate) fn cells_in_range(domain: &GridDomain, lo: &[i64; MAX_DIM], hi: &[i64; MAX_DIM]) -> Vec<usize> {
    let n = domain.side_cells() as i64;
    let dim = domain.dim();
    let mut lo_c = [0i64; MAX_DIM];
    let mut hi_c = [1i64; MAX_DIM];
    for i in 0..dim {
        lo_c[i] = lo[i].clamp(0, n);
        hi_c[i] = hi[i].clamp(0, n);
        if lo_c[i] >= hi_c[i] {
            return Vec::new();
        }
    }
    let mut out = Vec::with_capacity(((hi_c[0] - lo_c[0]) * (hi_c[1] - lo_c[1]) * (hi_c[2] - lo_c[2])) as usize);
    let nu = n as usize;
    for z in lo_c[2]..hi_c[2] {
        for y in lo_c[1]..hi_c[1] {
            let base = (z as usize * nu + y as usize) * nu;
            for x in lo_c[0]..hi_c[0] {
                out.push(base + x as usize);
            }
        }
    }
    out
}

/// Running Neumaier sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Neumaier-compensated summation.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = Compensated::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// A measurable set `E` as a cell mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellSet {
    domain: GridDomain,
    mask: Vec<bool>,
}

impl CellSet {
    pub fn empty(domain: &GridDomain) -> Self {
        CellSet {
            domain: *domain,
            mask: vec![false; domain.num_cells()],
        }
    }

    pub fn full(domain: &GridDomain) -> Self {
        CellSet {
            domain: *domain,
            mask: vec![true; domain.num_cells()],
        }
    }

    pub fn from_mask(domain: &GridDomain, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != domain.num_cells() {
            return Err(Error::invalid(format!(
                "mask has {} entries, domain has {} cells",
                mask.len(),
                domain.num_cells()
            )));
        }
        Ok(CellSet { domain: *domain, mask })
    }

    pub fn from_cells(domain: &GridDomain, cells: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut s = CellSet::empty(domain);
        for c in cells {
            if c >= s.mask.len() {
                return Err(Error::invalid(format!("cell {c} outside the domain")));
            }
            s.mask[c] = true;
        }
        Ok(s)
    }

    pub fn from_predicate(domain: &GridDomain, f: impl FnMut(usize) -> bool) -> Self {
        CellSet {
            domain: *domain,
            mask: domain.cells().map(f).collect(),
        }
    }

    /// Cells whose region lies in `b` (exact for cell-aligned boxes).
    pub fn from_box(domain: &GridDomain, b: &DyadicBox) -> Result<Self> {
        let (lo, hi) = box_cell_range(domain, b, false)?;
        CellSet::from_cells(domain, cells_in_range(domain, &lo, &hi))
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn insert(&mut self, idx: usize) {
        self.mask[idx] = true;
    }

    pub fn remove(&mut self, idx: usize) {
        self.mask[idx] = false;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    /// Lebesgue measure `|E|`.
    pub fn measure(&self) -> f64 {
        self.count() as f64 * self.domain.cell_volume()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }

    fn zip_with(&self, other: &CellSet, f: impl Fn(bool, bool) -> bool) -> Result<CellSet> {
        self.domain.check_same(&other.domain)?;
        Ok(CellSet {
            domain: self.domain,
            mask: self.mask.iter().zip(&other.mask).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn union(&self, other: &CellSet) -> Result<CellSet> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &CellSet) -> Result<CellSet> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &CellSet) -> Result<CellSet> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> CellSet {
        CellSet {
            domain: self.domain,
            mask: self.mask.iter().map(|b| !b).collect(),
        }
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.domain == other.domain && self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// Reflection `c -> N-1-c` in every coordinate.
    pub fn reflect(&self) -> CellSet {
        CellSet {
            domain: self.domain,
            mask: reflect_cells(&self.domain, &self.mask),
        }
    }

    /// Swap the two axes of a planar set.
    pub fn transpose(&self) -> Result<CellSet> {
        Ok(CellSet {
            domain: self.domain,
            mask: transpose_cells(&self.domain, &self.mask)?,
        })
    }
}

pub(crate) fn reflect_cells<T: Copy>(domain: &GridDomain, data: &[T]) -> Vec<T> {
    let n = domain.side_cells();
    domain
        .cells()
        .map(|idx| {
            let c = domain.cell_coords(idx);
            let mut r = [0usize; MAX_DIM];
            for i in 0..domain.dim() {
                r[i] = n - 1 - c[i];
            }
            data[domain.cell_index(&r)]
        })
        .collect()
}

pub(crate) fn transpose_cells<T: Copy>(domain: &GridDomain, data: &[T]) -> Result<Vec<T>> {
    if domain.dim() != 2 {
        return Err(Error::NotPlanar(domain.dim()));
    }
    Ok(domain
        .cells()
        .map(|idx| {
            let c = domain.cell_coords(idx);
            data[domain.cell_index(&[c[1], c[0]])]
        })
        .collect())
}

/// Local cell range `[lo, hi)` covered by a box. With `outer = false` only cells
/// fully inside count; with `outer = true` every cell meeting the box counts.
fn box_cell_range(domain: &GridDomain, b: &DyadicBox, outer: bool) -> Result<([i64; MAX_DIM], [i64; MAX_DIM])> {
    if b.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            found: b.dim(),
        });
    }
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [1i64; MAX_DIM];
    let e = domain.depth();
    for i in 0..domain.dim() {
        let origin = domain.origin_cells(i);
        let l = b.lower()[i];
        let u = b.upper()[i];
        let (lc, uc) = if outer {
            (l.floor_at(e), -((-u).floor_at(e)))
        } else {
            (-((-l).floor_at(e)), u.floor_at(e))
        };
        lo[i] = lc - origin;
        hi[i] = uc - origin;
    }
    Ok((lo, hi))
}

/// Something that can be integrated cell-by-cell: a weight field or a set's indicator.
pub trait Integrand {
    fn domain(&self) -> &GridDomain;
    /// Per-cell densities of `|f|`.
    fn densities(&self) -> Cow<'_, [f64]>;
}

/// A nonnegative cell-constant density (a weight `w` or `v`).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField {
    domain: GridDomain,
    density: Vec<f64>,
}

impl WeightField {
    pub fn new(domain: &GridDomain, density: Vec<f64>) -> Result<Self> {
        if density.len() != domain.num_cells() {
            return Err(Error::invalid(format!(
                "field has {} entries, domain has {} cells",
                density.len(),
                domain.num_cells()
            )));
        }
        if let Some(bad) = density.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::invalid(format!("density {bad} is not a nonnegative finite number")));
        }
        Ok(WeightField {
            domain: *domain,
            density,
        })
    }

    pub fn constant(domain: &GridDomain, c: f64) -> Result<Self> {
        WeightField::new(domain, vec![c; domain.num_cells()])
    }

    pub fn from_fn(domain: &GridDomain, f: impl FnMut(usize) -> f64) -> Result<Self> {
        WeightField::new(domain, domain.cells().map(f).collect())
    }

    pub fn indicator(set: &CellSet) -> Self {
        WeightField {
            domain: set.domain,
            density: set.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn at(&self, idx: usize) -> f64 {
        self.density[idx]
    }

    /// Sum of densities over cells (mass in units of one cell volume).
    pub fn cell_mass(&self, cells: impl IntoIterator<Item = usize>) -> f64 {
        compensated_sum(cells.into_iter().map(|c| self.density[c]))
    }

    /// `w(S)` for a cell set.
    pub fn measure(&self, set: &CellSet) -> Result<f64> {
        self.domain.check_same(set.domain())?;
        Ok(self.cell_mass(set.iter()) * self.domain.cell_volume())
    }

    pub fn total(&self) -> f64 {
        self.cell_mass(self.domain.cells()) * self.domain.cell_volume()
    }

    /// `w(B ∩ extent)` for a dyadic box, intersecting partially covered cells exactly.
    pub fn measure_box(&self, b: &DyadicBox) -> Result<f64> {
        let (lo, hi) = box_cell_range(&self.domain, b, true)?;
        let dim = self.domain.dim();
        let cells = cells_in_range(&self.domain, &lo, &hi);
        let vol = self.domain.cell_volume();
        let terms = cells.into_iter().filter(|&c| self.density[c] != 0.0).map(|c| {
            let coords = self.domain.cell_coords(c);
            let mut full = true;
            let mut area = Dyadic::ONE;
            for i in 0..dim {
                let c_lo = self.domain.local_to_dyadic(coords[i] as i64, i);
                let c_hi = self.domain.local_to_dyadic(coords[i] as i64 + 1, i);
                let l = c_lo.max(b.lower()[i]);
                let u = c_hi.min(b.upper()[i]);
                if l != c_lo || u != c_hi {
                    full = false;
                }
                area = area * (u - l);
            }
            if full {
                self.density[c] * vol
            } else {
                self.density[c] * area.to_f64()
            }
        });
        Ok(compensated_sum(terms))
    }

    /// As [`measure_box`](Self::measure_box) but rejects boxes leaving the extent.
    pub fn measure_box_strict(&self, b: &DyadicBox) -> Result<f64> {
        if !self.domain.extent_box().contains_box(b) {
            return Err(Error::OutsideExtent);
        }
        self.measure_box(b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        WeightField::new(&self.domain, self.density.iter().map(|&d| f(d)).collect())
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        self.map(|d| d * c)
    }

    pub fn reflect(&self) -> Self {
        WeightField {
            domain: self.domain,
            density: reflect_cells(&self.domain, &self.density),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        Ok(WeightField {
            domain: self.domain,
            density: transpose_cells(&self.domain, &self.density)?,
        })
    }

    pub fn summed_table(&self) -> SummedTable {
        prefix_tables(self)
    }
}

impl Integrand for WeightField {
    fn domain(&self) -> &GridDomain {
        &self.domain
    }
    fn densities(&self) -> Cow<'_, [f64]> {
        Cow::Borrowed(&self.density)
    }
}

impl Integrand for CellSet {
    fn domain(&self) -> &GridDomain {
        &self.domain
    }
    fn densities(&self) -> Cow<'_, [f64]> {
        Cow::Owned(self.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }
}

/// A pair of weights `(w, v)` with exponent `p >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightPair {
    pub w: WeightField,
    pub v: WeightField,
    pub p: f64,
}

impl WeightPair {
    pub fn new(w: WeightField, v: WeightField, p: f64) -> Result<Self> {
        w.domain.check_same(&v.domain)?;
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::invalid(format!("exponent p = {p} must be a finite number >= 1")));
        }
        Ok(WeightPair { w, v, p })
    }

    pub fn domain(&self) -> &GridDomain {
        &self.w.domain
    }

    /// `p' = p / (p - 1)`, defined for `p > 1`.
    pub fn conjugate(&self) -> Option<f64> {
        (self.p > 1.0).then(|| self.p / (self.p - 1.0))
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        WeightPair::new(self.w.clone(), self.v.clone(), p)
    }

    pub fn reflect(&self) -> Self {
        WeightPair {
            w: self.w.reflect(),
            v: self.v.reflect(),
            p: self.p,
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        Ok(WeightPair {
            w: self.w.transpose()?,
            v: self.v.transpose()?,
            p: self.p,
        })
    }
}

/// Inclusive prefix sums with a zero border, for O(1) box sums (in cell-mass units).
#[derive(Clone, Debug)]
pub struct SummedTable {
    domain: GridDomain,
    stride: usize,
    data: Vec<f64>,
}

/// Builds the summed-area table of a field.
pub fn prefix_tables<F: Integrand + ?Sized>(field: &F) -> SummedTable {
    let domain = *field.domain();
    let values = field.densities();
    let n = domain.side_cells();
    let dim = domain.dim();
    let stride = n + 1;
    let len = stride.pow(dim as u32);
    let mut data = vec![0.0f64; len];
    // table index of padded coords (c0+1, c1+1, c2+1)
    let pad = |c: [usize; MAX_DIM]| -> usize {
        let mut idx = 0;
        for i in (0..dim).rev() {
            idx = idx * stride + c[i];
        }
        idx
    };
    for idx in domain.cells() {
        let c = domain.cell_coords(idx);
        let mut p = [0usize; MAX_DIM];
        for i in 0..dim {
            p[i] = c[i] + 1;
        }
        data[pad(p)] = values[idx];
    }
    // running sums along each axis in turn
    for axis in 0..dim {
        let step = stride.pow(axis as u32);
        for t in 0..len {
            let coord = (t / step) % stride;
            if coord > 0 {
                data[t] += data[t - step];
            }
        }
    }
    SummedTable { domain, stride, data }
}

impl SummedTable {
    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    fn at(&self, c: [usize; MAX_DIM]) -> f64 {
        let mut idx = 0;
        for i in (0..self.domain.dim()).rev() {
            idx = idx * self.stride + c[i];
        }
        self.data[idx]
    }

    /// Sum of densities over local cells `lo <= c < hi`, clipped to the extent.
    pub fn query_cells(&self, lo: &[i64], hi: &[i64]) -> f64 {
        let n = self.domain.side_cells() as i64;
        let dim = self.domain.dim();
        let mut l = [0usize; MAX_DIM];
        let mut h = [0usize; MAX_DIM];
        for i in 0..dim {
            let a = lo[i].clamp(0, n);
            let b = hi[i].clamp(0, n);
            if a >= b {
                return 0.0;
            }
            l[i] = a as usize;
            h[i] = b as usize;
        }
        let mut total = 0.0;
        for corner in 0..(1usize << dim) {
            let mut c = [0usize; MAX_DIM];
            let mut lows = 0;
            for i in 0..dim {
                if corner >> i & 1 == 1 {
                    c[i] = l[i];
                    lows += 1;
                } else {
                    c[i] = h[i];
                }
            }
            let v = self.at(c);
            if lows % 2 == 0 {
                total += v;
            } else {
                total -= v;
            }
        }
        total
    }

    pub fn query_cube(&self, c: &CellCube) -> f64 {
        let dim = self.domain.dim();
        let mut hi = c.anchor;
        for a in hi.iter_mut().take(dim) {
            *a += c.side();
        }
        self.query_cells(&c.anchor[..dim], &hi[..dim])
    }

    /// Measure of a cell-aligned box (`w(B ∩ extent)`).
    pub fn query(&self, b: &DyadicBox) -> Result<f64> {
        let (lo, hi) = box_cell_range(&self.domain, b, false)?;
        let (olo, ohi) = box_cell_range(&self.domain, b, true)?;
        if lo != olo || hi != ohi {
            return Err(Error::invalid(format!("box {b} is not aligned to the cells")));
        }
        let dim = self.domain.dim();
        Ok(self.query_cells(&lo[..dim], &hi[..dim]) * self.domain.cell_volume())
    }

    pub fn total(&self) -> f64 {
        let n = self.domain.side_cells();
        self.at([n; MAX_DIM]) * self.domain.cell_volume()
    }
}

/// Which neighbour of an enumerated cube must also lie in the extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CubeConstraint {
    /// `Q ⊂ extent`.
    Inside,
    /// `Q, Q^+ ⊂ extent`.
    PlusInside,
    /// `Q, Q^- ⊂ extent`.
    MinusInside,
}

/// Grid-dyadic cubes of levels coarse to fine, anchors in canonical order.
pub(crate) fn grid_cell_cubes(domain: &GridDomain, constraint: CubeConstraint) -> impl Iterator<Item = CellCube> + '_ {
    let dim = domain.dim();
    (0..=domain.max_scale()).rev().flat_map(move |scale| {
        let per_side = (domain.side_cells() >> scale) as i64;
        let count = (per_side as usize).pow(dim as u32);
        (0..count).filter_map(move |k| {
            let mut anchor = [0i64; MAX_DIM];
            let mut r = k as i64;
            for a in anchor.iter_mut().take(dim) {
                *a = (r % per_side) << scale;
                r /= per_side;
            }
            let q = CellCube { scale, anchor };
            let keep = match constraint {
                CubeConstraint::Inside => true,
                CubeConstraint::PlusInside => q.plus(dim).is_inside(domain),
                CubeConstraint::MinusInside => q.minus(dim).is_inside(domain),
            };
            keep.then_some(q)
        })
    })
}

/// Cell-anchored cubes of dyadic size (any cell anchor) with `Q, Q^+ ⊂ extent`.
pub(crate) fn anchored_cell_cubes(domain: &GridDomain) -> impl Iterator<Item = CellCube> + '_ {
    let dim = domain.dim();
    let n = domain.side_cells() as i64;
    (0..domain.max_scale()).rev().flat_map(move |scale| {
        let span = n - 2 * (1i64 << scale) + 1;
        let count = if span > 0 { (span as usize).pow(dim as u32) } else { 0 };
        (0..count).map(move |k| {
            let mut anchor = [0i64; MAX_DIM];
            let mut r = k as i64;
            for a in anchor.iter_mut().take(dim) {
                *a = r % span;
                r /= span;
            }
            CellCube { scale, anchor }
        })
    })
}

/// Every grid-dyadic cube of levels `extent..=L` satisfying `constraint`, each once.
pub fn enumerate_dyadic_cubes(domain: &GridDomain, constraint: CubeConstraint) -> impl Iterator<Item = DyadicCube> + '_ {
    grid_cell_cubes(domain, constraint).map(move |c| domain.cell_cube_to_dyadic(&c))
}

/// Per-scale sums of a field over all grid-dyadic cubes, built by exact
/// bottom-up aggregation (children summed in a fixed order).
#[derive(Clone, Debug)]
pub struct DyadicPyramid {
    domain: GridDomain,
    levels: Vec<Vec<f64>>,
}

impl DyadicPyramid {
    pub fn build<F: Integrand + ?Sized>(field: &F) -> Self {
        let domain = *field.domain();
        let dim = domain.dim();
        let mut levels = vec![field.densities().into_owned()];
        for scale in 1..=domain.max_scale() {
            let child_n = domain.side_cells() >> (scale - 1);
            let n = child_n / 2;
            let prev = &levels[scale as usize - 1];
            let len = n.pow(dim as u32);
            let mut next = vec![0.0f64; len];
            for (idx, slot) in next.iter_mut().enumerate() {
                let mut c = [0usize; MAX_DIM];
                let mut r = idx;
                for ci in c.iter_mut().take(dim) {
                    *ci = r % n;
                    r /= n;
                }
                let mut s = 0.0;
                for child in 0..(1usize << dim) {
                    let mut cidx = 0usize;
                    for i in (0..dim).rev() {
                        cidx = cidx * child_n + 2 * c[i] + (child >> i & 1);
                    }
                    s += prev[cidx];
                }
                *slot = s;
            }
            levels.push(next);
        }
        DyadicPyramid { domain, levels }
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    /// Sum over a grid-dyadic cube, `None` when the cube is not inside the extent.
    pub fn sum(&self, c: &CellCube) -> Option<f64> {
        if !c.is_inside(&self.domain) {
            return None;
        }
        let dim = self.domain.dim();
        let n = self.domain.side_cells() >> c.scale;
        let mut idx = 0usize;
        for i in (0..dim).rev() {
            idx = idx * n + (c.anchor[i] >> c.scale) as usize;
        }
        Some(self.levels[c.scale as usize][idx])
    }

    /// Sum over a grid-dyadic cube, zero outside the extent.
    pub fn sum_or_zero(&self, c: &CellCube) -> f64 {
        self.sum(c).unwrap_or(0.0)
    }
}
