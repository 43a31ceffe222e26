//! Level-set cube selection, bands, depth decomposition with a step-by-step
//! certificate, and the planar covering selection.

use std::collections::HashMap;

use serde::{Serialize, Serializer};

use crate::classes::{restricted_constant, restricted_sup_over, Flavor};
use crate::dyadic::{Dyadic, DyadicBox, DyadicCube};
use crate::error::{Error, Result};
use crate::grid::{cells_in_range, grid_cell_cubes, CellCube, CellSet, CubeConstraint, DyadicPyramid, GridDomain, WeightPair};

/// Relative tolerance for floating-point steps of the certificate chains.
pub const CHAIN_RTOL: f64 = 1e-12;

fn ser_cells<S: Serializer>(sets: &[CellSet], s: S) -> std::result::Result<S::Ok, S::Error> {
    let lists: Vec<Vec<usize>> = sets.iter().map(|c| c.iter().collect()).collect();
    lists.serialize(s)
}

/// One cube of a [`CubeFamily`] with its `E ∩ Q^+` data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyMember {
    pub cube: DyadicCube,
    #[serde(skip)]
    pub(crate) cell_cube: CellCube,
    /// `|E ∩ Q^+|` in cells.
    pub e_cells: u64,
    /// `|E ∩ Q^+| / |Q|`.
    pub ratio: f64,
    pub band: Option<u32>,
    pub depth: Option<usize>,
}

impl FamilyMember {
    pub fn cell_cube(&self) -> CellCube {
        self.cell_cube
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CubeFamily {
    #[serde(skip)]
    domain: GridDomain,
    pub members: Vec<FamilyMember>,
    pub disjoint: bool,
}

impl CubeFamily {
    /// Builds a family of grid-dyadic cubes, recording `E ∩ Q^+` and checking disjointness.
    pub fn from_cubes(e: &CellSet, cubes: &[DyadicCube]) -> Result<Self> {
        let d = *e.domain();
        let cells = cubes.iter().map(|q| d.dyadic_to_cell_cube(q)).collect::<Result<Vec<_>>>()?;
        if let Some(q) = cubes.iter().find(|q| !q.is_grid_dyadic()) {
            return Err(Error::invalid(format!("cube {q} is not grid-dyadic")));
        }
        Ok(CubeFamily::from_cell_cubes(e, cells))
    }

    pub(crate) fn from_cell_cubes(e: &CellSet, cubes: Vec<CellCube>) -> Self {
        let d = *e.domain();
        let dim = d.dim();
        let members: Vec<FamilyMember> = cubes
            .into_iter()
            .map(|q| {
                let e_cells = q.plus(dim).cells(&d).iter().filter(|&&c| e.contains(c)).count() as u64;
                FamilyMember {
                    cube: d.cell_cube_to_dyadic(&q),
                    cell_cube: q,
                    e_cells,
                    ratio: e_cells as f64 / q.cell_count(dim) as f64,
                    band: None,
                    depth: None,
                }
            })
            .collect();
        let disjoint = pairwise_disjoint(dim, members.iter().map(|m| m.cell_cube));
        CubeFamily {
            domain: d,
            members,
            disjoint,
        }
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Cells of the union of the cubes.
    pub fn union(&self) -> CellSet {
        let mut s = CellSet::empty(&self.domain);
        for m in &self.members {
            for c in m.cell_cube.cells(&self.domain) {
                s.insert(c);
            }
        }
        s
    }

    fn subset(&self, idx: &[usize]) -> CubeFamily {
        let members: Vec<FamilyMember> = idx.iter().map(|&i| self.members[i].clone()).collect();
        let disjoint = pairwise_disjoint(self.domain.dim(), members.iter().map(|m| m.cell_cube));
        CubeFamily {
            domain: self.domain,
            members,
            disjoint,
        }
    }
}

/// Grid-dyadic cubes are nested or disjoint, so disjointness reduces to "no ancestor in the set".
fn pairwise_disjoint(dim: usize, cubes: impl Iterator<Item = CellCube>) -> bool {
    let cubes: Vec<CellCube> = cubes.collect();
    if cubes.iter().all(|q| q.is_grid_dyadic(dim)) {
        let set: std::collections::HashSet<CellCube> = cubes.iter().copied().collect();
        if set.len() != cubes.len() {
            return false;
        }
        let top = cubes.iter().map(|q| q.scale).max().unwrap_or(0);
        cubes.iter().all(|q| {
            let mut a = *q;
            while a.scale < top {
                a = a.parent(dim);
                if set.contains(&a) {
                    return false;
                }
            }
            true
        })
    } else {
        cubes
            .iter()
            .enumerate()
            .all(|(i, a)| cubes[i + 1..].iter().all(|b| !a.intersects(dim, b)))
    }
}

/// The maximal grid-dyadic cubes with `|E ∩ Q^+| / |Q| > t`, coarse to fine.
pub fn select_level_set_cubes(e: &CellSet, t: f64) -> Result<CubeFamily> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("threshold t = {t} must be positive")));
    }
    let d = *e.domain();
    let dim = d.dim();
    let pyramid = DyadicPyramid::build(e);
    let mut claimed = vec![false; d.num_cells()];
    let mut chosen = Vec::new();
    for q in grid_cell_cubes(&d, CubeConstraint::Inside) {
        let first = d.cell_index_checked(&q.anchor).expect("cube inside the extent");
        if claimed[first] {
            continue;
        }
        let count = pyramid.sum_or_zero(&q.plus(dim));
        if count / q.cell_count(dim) as f64 > t {
            for c in q.cells(&d) {
                claimed[c] = true;
            }
            chosen.push(q);
        }
    }
    Ok(CubeFamily::from_cell_cubes(e, chosen))
}

/// Sub-family `C_k` with `μ = 2^k t`: all members with `2^k t < ratio <= 2^{k+1} t`.
#[derive(Clone, Debug, Serialize)]
pub struct Band {
    pub k: u32,
    pub mu: f64,
    pub family: CubeFamily,
}

/// Splits a qualifying family into nonempty bands, ascending in `k`.
pub fn band_partition(family: &CubeFamily, t: f64) -> Result<Vec<Band>> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("threshold t = {t} must be positive")));
    }
    let mut by_k: Vec<Vec<usize>> = Vec::new();
    for (j, m) in family.members.iter().enumerate() {
        if !(m.ratio > t) {
            return Err(Error::Hypothesis(format!("cube {} has ratio {} <= t = {t}", m.cube, m.ratio)));
        }
        let mut k = 0u32;
        while m.ratio > t * 2f64.powi(k as i32 + 1) {
            k += 1;
        }
        if by_k.len() <= k as usize {
            by_k.resize(k as usize + 1, Vec::new());
        }
        by_k[k as usize].push(j);
    }
    Ok(by_k
        .into_iter()
        .enumerate()
        .filter(|(_, idx)| !idx.is_empty())
        .map(|(k, idx)| {
            let mut family = family.subset(&idx);
            for m in &mut family.members {
                m.band = Some(k as u32);
            }
            Band {
                k: k as u32,
                mu: t * 2f64.powi(k as i32),
                family,
            }
        })
        .collect())
}

/// Grading of a disjoint family by the number of strictly larger selected plus-neighbours.
#[derive(Clone, Debug, Serialize)]
pub struct DepthDecomposition {
    pub family: CubeFamily,
    /// `i_m`: member indices of depth `m`.
    pub levels: Vec<Vec<usize>>,
    /// `σ_m`: union of `Q_j^+` over `i_m` (inside the extent).
    #[serde(serialize_with = "ser_cells")]
    pub sigma: Vec<CellSet>,
    /// `F_m = E ∩ σ_m`.
    #[serde(rename = "f_sets", serialize_with = "ser_cells")]
    pub f: Vec<CellSet>,
}

impl DepthDecomposition {
    pub fn depth(&self, j: usize) -> usize {
        self.family.members[j].depth.expect("depth assigned")
    }

    /// `F_m`, empty beyond the deepest level.
    pub fn f_at(&self, m: usize) -> CellSet {
        self.f.get(m).cloned().unwrap_or_else(|| CellSet::empty(self.family.domain()))
    }
}

pub fn depth_decompose(family: &CubeFamily, e: &CellSet) -> Result<DepthDecomposition> {
    let d = *family.domain();
    d.check_same(e.domain())?;
    if !family.disjoint {
        return Err(Error::Hypothesis("depth decomposition needs a disjoint family".into()));
    }
    let dim = d.dim();
    let plus: HashMap<CellCube, usize> = family
        .members
        .iter()
        .enumerate()
        .map(|(j, m)| (m.cell_cube.plus(dim), j))
        .collect();
    let top = family.members.iter().map(|m| m.cell_cube.scale).max().unwrap_or(0);
    let mut out = family.clone();
    let mut levels: Vec<Vec<usize>> = Vec::new();
    for (j, m) in out.members.iter_mut().enumerate() {
        let mut a = m.cell_cube.plus(dim);
        let mut depth = 0;
        while a.scale < top {
            a = a.parent(dim);
            if plus.contains_key(&a) {
                depth += 1;
            }
        }
        m.depth = Some(depth);
        if levels.len() <= depth {
            levels.resize(depth + 1, Vec::new());
        }
        levels[depth].push(j);
    }
    let sigma: Vec<CellSet> = levels
        .iter()
        .map(|idx| {
            let mut s = CellSet::empty(&d);
            for &j in idx {
                for c in out.members[j].cell_cube.plus(dim).cells(&d) {
                    s.insert(c);
                }
            }
            s
        })
        .collect();
    let f = sigma.iter().map(|s| s.intersection(e)).collect::<Result<Vec<_>>>()?;
    Ok(DepthDecomposition {
        family: out,
        levels,
        sigma,
        f,
    })
}

/// One verified inequality `lhs <= rhs` (or `<`) of a certificate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepCheck {
    pub name: String,
    pub passed: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs` at the tightest instance.
    pub slack: f64,
    /// Member index (or point index) realizing the tightest instance.
    pub witness: Option<usize>,
}

impl StepCheck {
    fn new(name: &str) -> Self {
        StepCheck {
            name: name.to_string(),
            passed: true,
            lhs: 0.0,
            rhs: 0.0,
            slack: f64::INFINITY,
            witness: None,
        }
    }

    /// Folds in one instance; `ok` is the exact verdict for it.
    fn record(&mut self, lhs: f64, rhs: f64, ok: bool, witness: Option<usize>) {
        let slack = rhs - lhs;
        if !ok {
            if self.passed || slack < self.slack {
                self.lhs = lhs;
                self.rhs = rhs;
                self.slack = slack;
                self.witness = witness;
            }
            self.passed = false;
        } else if self.passed && slack < self.slack {
            self.lhs = lhs;
            self.rhs = rhs;
            self.slack = slack;
            self.witness = witness;
        }
    }

    pub(crate) fn new_named(name: &str) -> Self {
        StepCheck::new(name)
    }

    pub(crate) fn fold(&mut self, lhs: f64, rhs: f64, ok: bool, witness: usize) {
        self.record(lhs, rhs, ok, Some(witness));
    }

    fn le_rel(&mut self, lhs: f64, rhs: f64, witness: Option<usize>) {
        let ok = lhs <= rhs || lhs <= rhs + CHAIN_RTOL * rhs.abs().max(lhs.abs());
        self.record(lhs, rhs, ok, witness);
    }
}

fn all_passed(steps: &[StepCheck]) -> bool {
    steps.iter().all(|s| s.passed)
}

/// Per-instance certificate of the depth-decomposition estimate.
#[derive(Clone, Debug, Serialize)]
pub struct BandCertificate {
    pub mu: f64,
    pub constant: f64,
    pub p: f64,
    pub dim: usize,
    /// `Σ_j w(Q_j)`.
    pub lhs: f64,
    /// `2^{n+p+2} C^p μ^{-p} v(E ∩ σ_0)`.
    pub rhs: f64,
    pub steps: Vec<StepCheck>,
    pub passed: bool,
}

/// Certifies every step of the estimate with the dyadic restricted constant of `pair`.
pub fn certify_band(decomp: &DepthDecomposition, e: &CellSet, pair: &WeightPair, mu: f64) -> Result<BandCertificate> {
    let c = restricted_constant(pair, Flavor::Dyadic).value;
    certify_band_with(decomp, e, pair, mu, c)
}

/// As [`certify_band`] with a precomputed class constant.
pub fn certify_band_with(decomp: &DepthDecomposition, e: &CellSet, pair: &WeightPair, mu: f64, constant: f64) -> Result<BandCertificate> {
    let d = *decomp.family.domain();
    d.check_same(e.domain())?;
    d.check_same(pair.domain())?;
    let dim = d.dim();
    let n = dim as i32;
    let p = pair.p;
    let members = &decomp.family.members;
    let vol = d.cell_volume();
    let span = 1usize << (dim + 2);

    // hypothesis: μ < |E ∩ Q^+|/|Q| <= 2μ
    let mut hyp = StepCheck::new("hypothesis");
    for (j, m) in members.iter().enumerate() {
        hyp.record(mu, m.ratio, m.ratio > mu && m.ratio <= 2.0 * mu, Some(j));
    }

    // partition invariants
    let mut part = StepCheck::new("partition");
    let total: usize = decomp.levels.iter().map(|l| l.len()).sum();
    part.record(total as f64, members.len() as f64, total == members.len(), None);
    for (m, idx) in decomp.levels.iter().enumerate() {
        let disjoint = pairwise_disjoint(dim, idx.iter().map(|&j| members[j].cell_cube.plus(dim)));
        part.record(0.0, 0.0, disjoint, idx.first().copied());
        if m + 1 < decomp.levels.len() {
            let nested = decomp.sigma[m + 1].is_subset(&decomp.sigma[m]) && decomp.f[m + 1].is_subset(&decomp.f[m]);
            part.record(0.0, 0.0, nested, decomp.levels[m + 1].first().copied());
        }
    }

    // nested cubes: deeper, inside (Q_j0)^{2,+}, total volume <= 2^n |Q_j0|
    let mut nest = StepCheck::new("nested-geometry");
    let inner: Vec<Vec<usize>> = (0..members.len())
        .map(|j0| {
            let outer = members[j0].cell_cube.plus(dim);
            (0..members.len())
                .filter(|&j| {
                    let q = members[j].cell_cube.plus(dim);
                    q.scale < outer.scale && q.is_within(dim, &outer)
                })
                .collect()
        })
        .collect();
    for (j0, list) in inner.iter().enumerate() {
        let q0 = members[j0].cell_cube;
        let ext = CellCube {
            scale: q0.scale + 1,
            anchor: q0.anchor,
        };
        let mut sum = 0u64;
        for &j in list {
            let ok = decomp.depth(j) > decomp.depth(j0) && members[j].cell_cube.is_within(dim, &ext);
            nest.record(0.0, 0.0, ok, Some(j));
            sum += members[j].cell_cube.cell_count(dim);
        }
        let bound = q0.cell_count(dim) << dim;
        nest.record(sum as f64, bound as f64, sum <= bound, Some(j0));
    }

    // (i): Σ_{m > m0} |F_m ∩ Q_j0^+| <= 2^{n+1} |E_j0^+|, integer cell counts
    let mut step1 = StepCheck::new("(i) deeper mass");
    // (ii): some m in (m0, m0 + 2^{n+2}] has |F_m ∩ Q_j0^+| < |E_j0^+| / 2
    let mut step2 = StepCheck::new("(ii) thin level");
    // (iii): |E ∩ Q_j0^+ ∩ F^c_{m0+2^{n+2}}| / |Q_j0| > μ/2
    let mut step3 = StepCheck::new("(iii) remaining density");
    let mut g_sets: Vec<Vec<usize>> = Vec::with_capacity(members.len());
    for (j0, m) in members.iter().enumerate() {
        let m0 = decomp.depth(j0);
        let nb = m.cell_cube.plus(dim).cells(&d);
        let count_in = |set: &CellSet| nb.iter().filter(|&&c| set.contains(c)).count() as u64;
        let deeper: u64 = (m0 + 1..decomp.f.len()).map(|k| count_in(&decomp.f[k])).sum();
        let bound = m.e_cells << (dim + 1);
        step1.record(deeper as f64, bound as f64, deeper <= bound, Some(j0));

        let thin = (m0 + 1..=m0 + span).find(|&k| 2 * count_in(&decomp.f_at(k)) < m.e_cells);
        step2.record(if thin.is_some() { 0.0 } else { 1.0 }, 0.0, thin.is_some(), Some(j0));

        let f_far = decomp.f_at(m0 + span);
        let g: Vec<usize> = nb.iter().copied().filter(|&c| e.contains(c) && !f_far.contains(c)).collect();
        let density = g.len() as f64 / m.cell_cube.cell_count(dim) as f64;
        step3.record(mu / 2.0, density, density > mu / 2.0, Some(j0));
        g_sets.push(g);
    }

    // (iv): Σ w(Q_j) <= Σ C^p (|Q_j|/|G_j|)^p v(G_j) <= C^p (2/μ)^p Σ v(G_j)
    //       <= C^p (2/μ)^p Σ_m v(F_m \ F_{m+K}) <= 2^{n+p+2} C^p μ^{-p} v(F_0)
    let cp = constant.powf(p);
    let s: f64 = members.iter().map(|m| pair.w.cell_mass(m.cell_cube.cells(&d)) * vol).sum();
    let mut a = 0.0;
    let mut b_sum_v = 0.0;
    for (j, m) in members.iter().enumerate() {
        let vg = pair.v.cell_mass(g_sets[j].iter().copied()) * vol;
        let qv = m.cell_cube.cell_count(dim) as f64;
        if !g_sets[j].is_empty() {
            a += cp * (qv / g_sets[j].len() as f64).powf(p) * vg;
        } else {
            a = f64::INFINITY;
        }
        b_sum_v += vg;
    }
    let b = cp * (2.0 / mu).powf(p) * b_sum_v;
    let layers: f64 = (0..decomp.f.len())
        .map(|m| {
            let far = decomp.f_at(m + span);
            pair.v.cell_mass(decomp.f[m].iter().filter(|&c| !far.contains(c))) * vol
        })
        .sum();
    let dd = cp * (2.0 / mu).powf(p) * layers;
    let f0 = decomp.f.first().map(|f| pair.v.cell_mass(f.iter()) * vol).unwrap_or(0.0);
    let rhs = 2f64.powf(n as f64 + p + 2.0) * cp * mu.powf(-p) * f0;
    let mut step4 = StepCheck::new("(iv) final bound");
    let finite = constant.is_finite();
    if finite {
        step4.le_rel(s, a, Some(0));
        step4.le_rel(a, b, Some(1));
        step4.le_rel(b, dd, Some(2));
        step4.le_rel(dd, rhs, Some(3));
        step4.le_rel(s, rhs, Some(4));
    }
    let steps = vec![hyp, part, nest, step1, step2, step3, step4];
    Ok(BandCertificate {
        mu,
        constant,
        p,
        dim,
        lhs: s,
        rhs: if finite { rhs } else { f64::INFINITY },
        passed: all_passed(&steps),
        steps,
    })
}

// ---------------------------------------------------------------------------
// planar covering

/// Half-open box in local cell units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct CellBox {
    pub lo: [i64; 2],
    pub hi: [i64; 2],
}

impl CellBox {
    fn from_dyadic(d: &GridDomain, b: &DyadicBox) -> Result<Self> {
        let conv = |x: Dyadic, axis: usize| {
            d.dyadic_to_local(x, axis)
                .ok_or_else(|| Error::invalid(format!("box {b} is not aligned to the cells")))
        };
        Ok(CellBox {
            lo: [conv(b.lower()[0], 0)?, conv(b.lower()[1], 1)?],
            hi: [conv(b.upper()[0], 0)?, conv(b.upper()[1], 1)?],
        })
    }

    fn to_dyadic(self, d: &GridDomain) -> DyadicBox {
        DyadicBox::new(
            vec![d.local_to_dyadic(self.lo[0], 0), d.local_to_dyadic(self.lo[1], 1)],
            vec![d.local_to_dyadic(self.hi[0], 0), d.local_to_dyadic(self.hi[1], 1)],
        )
        .expect("nonempty box")
    }

    pub(crate) fn side(&self) -> i64 {
        self.hi[0] - self.lo[0]
    }

    fn area(&self) -> f64 {
        ((self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])) as f64
    }

    fn translate(&self, by: i64) -> CellBox {
        CellBox {
            lo: [self.lo[0] + by, self.lo[1] + by],
            hi: [self.hi[0] + by, self.hi[1] + by],
        }
    }

    fn contains_closed(&self, p: [i64; 2]) -> bool {
        (0..2).all(|i| self.lo[i] <= p[i] && p[i] <= self.hi[i])
    }

    fn within(&self, other: &CellBox) -> bool {
        (0..2).all(|i| other.lo[i] <= self.lo[i] && self.hi[i] <= other.hi[i])
    }

    /// Cells of the box inside the extent.
    fn cells(&self, d: &GridDomain) -> Vec<usize> {
        cells_in_range(d, &[self.lo[0], self.lo[1], 0], &[self.hi[0], self.hi[1], 1])
    }

    /// Cells whose lower-left corner lies in the closed box.
    fn closure_cells(&self, d: &GridDomain) -> Vec<usize> {
        cells_in_range(d, &[self.lo[0], self.lo[1], 0], &[self.hi[0] + 1, self.hi[1] + 1, 1])
    }
}

/// Largest number of half-open boxes sharing a point (difference array on compressed coordinates).
fn max_overlap(boxes: &[CellBox]) -> u32 {
    if boxes.is_empty() {
        return 0;
    }
    let axis = |i: usize| {
        let mut v: Vec<i64> = boxes.iter().flat_map(|b| [b.lo[i], b.hi[i]]).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (xs, ys) = (axis(0), axis(1));
    let at = |v: &[i64], c: i64| v.binary_search(&c).expect("coordinate present");
    let w = xs.len();
    let mut diff = vec![0i32; w * ys.len()];
    for b in boxes {
        let (x0, x1, y0, y1) = (at(&xs, b.lo[0]), at(&xs, b.hi[0]), at(&ys, b.lo[1]), at(&ys, b.hi[1]));
        diff[y0 * w + x0] += 1;
        diff[y0 * w + x1] -= 1;
        diff[y1 * w + x0] -= 1;
        diff[y1 * w + x1] += 1;
    }
    for y in 0..ys.len() {
        for x in 1..w {
            diff[y * w + x] += diff[y * w + x - 1];
        }
    }
    for y in 1..ys.len() {
        for x in 0..w {
            diff[y * w + x] += diff[(y - 1) * w + x];
        }
    }
    diff.into_iter().max().unwrap_or(0).max(0) as u32
}

/// Result of the planar covering selection.
#[derive(Clone, Debug, Serialize)]
pub struct CoverSelection {
    pub variant: u8,
    /// Selected indices into the input, in selection order.
    pub gamma: Vec<usize>,
    pub tilde_squares: Vec<DyadicBox>,
    /// `F_j` as cell lists (all cells lie in `E ∩ (Q~_j)^+`), empty when not built.
    pub f_sets: Vec<Vec<usize>>,
    /// Whether every selected square satisfies `|E ∩ (Q~_j)^+| / |Q_j| <= 8t`.
    pub cap_holds: bool,
    /// Max overlap of same-size selected `Q~`.
    pub tilde_overlap: u32,
    /// `max_x Σ_j χ_{F_j}(x)`.
    pub f_overlap: u32,
    pub certificate: Vec<StepCheck>,
    pub passed: bool,
    #[serde(skip)]
    pub(crate) tilde_cells: Vec<CellBox>,
    #[serde(skip)]
    pub(crate) sides: Vec<i64>,
}

/// Greedy covering selection for points `x_j` with squares `Q_j` (upper-right corner `x_j`).
///
/// Squares are taken by decreasing side (ties by anchor); `j` is kept unless
/// `x_j` is already in a selected closed `Q~` or `Q~_j` lies in one.
pub fn covering_select_2d(points: &[Vec<Dyadic>], squares: &[DyadicCube], e: &CellSet, t: f64, variant: u8) -> Result<CoverSelection> {
    let d = *e.domain();
    if d.dim() != 2 {
        return Err(Error::NotPlanar(d.dim()));
    }
    if points.len() != squares.len() {
        return Err(Error::invalid("one square per point is required"));
    }
    if !(1..=3).contains(&variant) {
        return Err(Error::invalid(format!("variant {variant} not in 1..=3")));
    }
    let mut pts = Vec::with_capacity(points.len());
    let mut qs = Vec::with_capacity(points.len());
    for (x, q) in points.iter().zip(squares) {
        if q.dim() != 2 || x.len() != 2 {
            return Err(Error::NotPlanar(q.dim()));
        }
        if q.upper() != *x {
            return Err(Error::invalid(format!("point is not the upper-right corner of {q}")));
        }
        let cq = d.dyadic_to_cell_cube(q)?;
        if cq.scale == 0 {
            return Err(Error::invalid(format!("square {q} must span at least two cells")));
        }
        pts.push([cq.anchor[0] + cq.side(), cq.anchor[1] + cq.side()]);
        qs.push(cq);
    }
    let tildes = squares
        .iter()
        .map(|q| CellBox::from_dyadic(&d, &q.tilde_variant(variant)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(select_cells(&d, &pts, &qs, &tildes, e, t, variant))
}

pub(crate) fn select_cells(d: &GridDomain, pts: &[[i64; 2]], qs: &[CellCube], tildes: &[CellBox], e: &CellSet, t: f64, variant: u8) -> CoverSelection {
    let e_count = |b: &CellBox| b.cells(d).iter().filter(|&&c| e.contains(c)).count() as f64;
    let q_area = |j: usize| (qs[j].side() * qs[j].side()) as f64;

    let mut hyp = StepCheck::new("hypothesis t/4");
    for j in 0..qs.len() {
        let q = qs[j];
        let plus_i = q.plus(2);
        let half = q.side() / 2;
        let (dx, dy) = crate::dyadic::quarter_offset(variant).expect("variant checked");
        let sub = CellBox {
            lo: [plus_i.anchor[0] + dx as i64 * half, plus_i.anchor[1] + dy as i64 * half],
            hi: [plus_i.anchor[0] + (dx as i64 + 1) * half, plus_i.anchor[1] + (dy as i64 + 1) * half],
        };
        let r = e_count(&sub) / q_area(j);
        hyp.record(t / 4.0, r, r > t / 4.0, Some(j));
    }

    let mut order: Vec<usize> = (0..qs.len()).collect();
    order.sort_by(|&a, &b| qs[b].scale.cmp(&qs[a].scale).then(qs[a].anchor.cmp(&qs[b].anchor)));
    let mut gamma: Vec<usize> = Vec::new();
    for &j in &order {
        let covered = gamma.iter().any(|&i| tildes[i].contains_closed(pts[j]));
        let inside = gamma.iter().any(|&i| tildes[j].within(&tildes[i]));
        if !covered && !inside {
            gamma.push(j);
        }
    }

    let mut cover = StepCheck::new("coverage");
    for (j, &x) in pts.iter().enumerate() {
        let ok = gamma.iter().any(|&i| tildes[i].contains_closed(x));
        cover.record(0.0, 0.0, ok, Some(j));
    }
    let mut contain = StepCheck::new("no nested tilde squares");
    for &a in &gamma {
        for &b in &gamma {
            if a != b {
                contain.record(0.0, 0.0, !tildes[a].within(&tildes[b]), Some(a));
            }
        }
    }
    let mut quarter = StepCheck::new("t/4 on (Q~)^+");
    let mut cap_holds = true;
    let mut plus_counts = Vec::with_capacity(gamma.len());
    for &j in &gamma {
        let plus = tildes[j].translate(tildes[j].side());
        let r = e_count(&plus) / q_area(j);
        quarter.record(t / 4.0, r, r > t / 4.0, Some(j));
        cap_holds &= r <= 8.0 * t;
        plus_counts.push(plus);
    }
    let mut sizes: Vec<i64> = gamma.iter().map(|&j| qs[j].side()).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let tilde_overlap = sizes
        .iter()
        .map(|&s| {
            let group: Vec<CellBox> = gamma.iter().filter(|&&j| qs[j].side() == s).map(|&j| tildes[j]).collect();
            max_overlap(&group)
        })
        .max()
        .unwrap_or(0);

    let mut f_sets = Vec::new();
    let mut f_overlap = 0;
    let mut eighth = StepCheck::new("t/8 on F");
    if cap_holds {
        let mut claims = vec![0u32; d.num_cells()];
        for (k, &j) in gamma.iter().enumerate() {
            let mut cand: Vec<usize> = plus_counts[k].cells(d).into_iter().filter(|&c| e.contains(c)).collect();
            cand.sort_by_key(|&c| (claims[c], c));
            let mut f = Vec::new();
            for c in cand {
                if f.len() as f64 / q_area(j) > t / 8.0 {
                    break;
                }
                f.push(c);
            }
            for &c in &f {
                claims[c] += 1;
            }
            let r = f.len() as f64 / q_area(j);
            eighth.record(t / 8.0, r, r > t / 8.0, Some(j));
            f.sort_unstable();
            f_sets.push(f);
        }
        f_overlap = claims.iter().copied().max().unwrap_or(0);
    }
    let certificate = vec![hyp, cover, contain, quarter, eighth];
    CoverSelection {
        variant,
        tilde_squares: gamma.iter().map(|&j| tildes[j].to_dyadic(d)).collect(),
        tilde_cells: gamma.iter().map(|&j| tildes[j]).collect(),
        sides: gamma.iter().map(|&j| qs[j].side()).collect(),
        passed: all_passed(&certificate),
        gamma,
        f_sets,
        cap_holds,
        tilde_overlap,
        f_overlap,
        certificate,
    }
}

/// Per-instance chain of the planar estimate for one selection.
#[derive(Clone, Debug, Serialize)]
pub struct PlanarChain {
    /// `w(K)`.
    pub lhs: f64,
    /// `Σ w(cell closure of Q~_i) / Σ w(Q~_i)`.
    pub dilation: f64,
    pub eight_p: f64,
    pub geometry: f64,
    pub overlap: f64,
    /// `D · 8^p · (9/4)^p · C_overlap`.
    pub c_total: f64,
    /// Sorted-prefix bracket over the selected `Q~_i`.
    pub local_constant: f64,
    pub rhs: f64,
    pub steps: Vec<StepCheck>,
    pub passed: bool,
}

/// Assembles `w(K) <= D 8^p (9/4)^p C_F K^p t^-p v(E)` for a selection with built `F_j`.
pub(crate) fn planar_chain(sel: &CoverSelection, k_set: &CellSet, e: &CellSet, pair: &WeightPair, t: f64) -> PlanarChain {
    let d = *e.domain();
    let p = pair.p;
    let vol = d.cell_volume();
    let lhs = pair.w.cell_mass(k_set.iter()) * vol;
    let w_closure: f64 = sel.tilde_cells.iter().map(|b| pair.w.cell_mass(b.closure_cells(&d)) * vol).sum();
    let w_tilde: Vec<f64> = sel.tilde_cells.iter().map(|b| pair.w.cell_mass(b.cells(&d)) * vol).collect();
    let w_tilde_sum: f64 = w_tilde.iter().sum();
    let dilation = if w_closure == 0.0 { 1.0 } else { w_closure / w_tilde_sum };
    let local_constant = sel
        .tilde_cells
        .iter()
        .map(|b| {
            let plus = b.translate(b.side());
            restricted_sup_over(pair, b.area(), pair.w.cell_mass(b.cells(&d)), plus.cells(&d)).0
        })
        .fold(0.0, f64::max);
    let kp = local_constant.powf(p);
    let eight_p = 8f64.powf(p);
    let geometry = 2.25f64.powf(p);
    let overlap = sel.f_overlap.max(1) as f64;
    let c_total = dilation * eight_p * geometry * overlap;
    let v_e = pair.v.cell_mass(e.iter()) * vol;
    let rhs = c_total * kp * t.powf(-p) * v_e;

    let mut steps = Vec::new();
    let mut s = StepCheck::new("cover: w(K) <= Σ w(closure Q~)");
    s.le_rel(lhs, w_closure, None);
    steps.push(s);
    let mut s = StepCheck::new("dilation: Σ w(closure Q~) <= D Σ w(Q~)");
    s.le_rel(w_closure, dilation * w_tilde_sum, None);
    steps.push(s);
    // class bound on each Q~_i with E ∩ F_i ⊂ (Q~_i)^+
    let mut class = StepCheck::new("class: w(Q~) <= K^p (|Q~|/|E∩F|)^p v(E∩F)");
    let mut eighth = StepCheck::new("t/8: (|Q~|/|E∩F|)^p <= (9/4)^p 8^p t^-p");
    let mut sum_v = 0.0;
    for (k, b) in sel.tilde_cells.iter().enumerate() {
        let f = &sel.f_sets[k];
        let vf = pair.v.cell_mass(f.iter().copied()) * vol;
        sum_v += vf;
        let ratio = b.area() / f.len() as f64;
        class.le_rel(w_tilde[k], kp * ratio.powf(p) * vf, Some(sel.gamma[k]));
        let q_area = (sel.sides[k] * sel.sides[k]) as f64;
        eighth.le_rel(ratio.powf(p), geometry * (q_area / f.len() as f64).powf(p), Some(sel.gamma[k]));
        eighth.le_rel(geometry * (q_area / f.len() as f64).powf(p), geometry * eight_p * t.powf(-p), Some(sel.gamma[k]));
    }
    steps.push(class);
    steps.push(eighth);
    let union: CellSet = CellSet::from_cells(&d, sel.f_sets.iter().flatten().copied()).expect("cells in the domain");
    let v_union = pair.v.cell_mass(union.iter()) * vol;
    let mut s = StepCheck::new("overlap: Σ v(E∩F) <= C_F v(E)");
    s.le_rel(sum_v, overlap * v_union, None);
    s.le_rel(v_union, v_e, None);
    steps.push(s);
    let mut s = StepCheck::new("final: w(K) <= rhs");
    s.le_rel(lhs, rhs, None);
    steps.push(s);
    PlanarChain {
        lhs,
        dilation,
        eight_p,
        geometry,
        overlap,
        c_total,
        local_constant,
        rhs,
        passed: all_passed(&steps),
        steps,
    }
}

pub(crate) fn tilde_cell_box(d: &GridDomain, q: &CellCube, variant: u8) -> Result<CellBox> {
    CellBox::from_dyadic(d, &d.cell_cube_to_dyadic(q).tilde_variant(variant)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::WeightField;
    use crate::maximal::{dyadic_plus_maximal, level_set, LevelMode};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_pair(d: &GridDomain, p: f64) -> WeightPair {
        WeightPair::new(WeightField::constant(d, 1.0).unwrap(), WeightField::constant(d, 1.0).unwrap(), p).unwrap()
    }

    #[test]
    fn selection_hand_case() {
        let d = GridDomain::unit(1, 2).unwrap();
        let e = CellSet::from_cells(&d, [2]).unwrap();
        let fam = select_level_set_cubes(&e, 0.4).unwrap();
        assert_eq!(fam.len(), 1);
        assert_eq!(fam.members[0].cube, DyadicCube::grid(1, &[0]));
        assert!(select_level_set_cubes(&e, 1.0).unwrap().is_empty());
        assert!(select_level_set_cubes(&e, 0.0).is_err());
    }

    #[test]
    fn bands_boundary_and_hypothesis() {
        let d = GridDomain::unit(1, 3).unwrap();
        let e = CellSet::from_cells(&d, [2, 3]).unwrap();
        // Q = [0,1/4): ratio 1; with t = 1/2 the ratio equals 2t and stays in band 0
        let fam = CubeFamily::from_cubes(&e, &[DyadicCube::grid(2, &[0])]).unwrap();
        let bands = band_partition(&fam, 0.5).unwrap();
        assert_eq!(bands.len(), 1);
        assert_eq!(bands[0].k, 0);
        assert!(band_partition(&fam, 1.0).is_err());
        let bands = band_partition(&fam, 0.125).unwrap();
        assert_eq!((bands[0].k, bands[0].mu), (2, 0.5));
    }

    #[test]
    fn depth_of_nested_plus_neighbours() {
        // Q1 = [0,1/2), Q1+ = [1/2,1); Q2 = [1/4,1/2) has Q2+ = [1/2,3/4) ⊊ Q1+
        // but overlaps Q1; use Q2 = [3/8,1/2) ... also inside Q1. Disjoint choice:
        // Q1 = [0,1/4), Q1+ = [1/4,1/2); Q2 = [1/4,3/8)? Q2+ = [3/8,1/2) ⊊ Q1+.
        let d = GridDomain::unit(1, 3).unwrap();
        let e = CellSet::full(&d);
        let fam = CubeFamily::from_cubes(&e, &[DyadicCube::grid(2, &[0]), DyadicCube::grid(3, &[2])]).unwrap();
        assert!(fam.disjoint);
        let dd = depth_decompose(&fam, &e).unwrap();
        assert_eq!(dd.levels, vec![vec![0], vec![1]]);
        assert!(dd.sigma[1].is_subset(&dd.sigma[0]));
        let single = CubeFamily::from_cubes(&e, &[DyadicCube::grid(1, &[0])]).unwrap();
        assert_eq!(depth_decompose(&single, &e).unwrap().levels, vec![vec![0]]);
        let overlapping = CubeFamily::from_cubes(&e, &[DyadicCube::grid(1, &[0]), DyadicCube::grid(2, &[0])]).unwrap();
        assert!(!overlapping.disjoint);
        assert!(depth_decompose(&overlapping, &e).is_err());
    }

    #[test]
    fn single_cube_certificate() {
        let d = GridDomain::unit(1, 2).unwrap();
        let e = CellSet::from_cells(&d, [2]).unwrap();
        let fam = select_level_set_cubes(&e, 0.4).unwrap();
        let bands = band_partition(&fam, 0.4).unwrap();
        let dd = depth_decompose(&bands[0].family, &e).unwrap();
        let cert = certify_band(&dd, &e, &unit_pair(&d, 1.0), bands[0].mu).unwrap();
        assert!(cert.passed, "{cert:#?}");
        assert_eq!(cert.lhs, 0.5);
    }

    #[test]
    fn certificate_reports_hypothesis_violation() {
        let d = GridDomain::unit(1, 2).unwrap();
        let e = CellSet::from_cells(&d, [2]).unwrap();
        let fam = select_level_set_cubes(&e, 0.4).unwrap();
        let dd = depth_decompose(&fam, &e).unwrap();
        let cert = certify_band(&dd, &e, &unit_pair(&d, 1.0), 0.1).unwrap();
        assert!(!cert.passed);
        assert!(!cert.steps[0].passed);
    }

    /// Chain `Q_k = [1 - 2^{1-k}, 1 - 2^{-k})`: each plus-neighbour sits inside the previous one.
    #[test]
    fn nested_chain_certificate() {
        let d = GridDomain::unit(1, 8).unwrap();
        let e = CellSet::full(&d);
        let cubes: Vec<DyadicCube> = (1..=7).map(|k| DyadicCube::grid(k, &[(1i64 << k) - 2])).collect();
        let fam = CubeFamily::from_cubes(&e, &cubes).unwrap();
        assert!(fam.disjoint);
        let dd = depth_decompose(&fam, &e).unwrap();
        assert_eq!(dd.levels, (0..7).map(|k| vec![k]).collect::<Vec<_>>());
        let cert = certify_band(&dd, &e, &unit_pair(&d, 1.0), 0.75).unwrap();
        assert!(cert.passed, "{cert:#?}");
        // deeper mass under Q_1^+: 1/4 + 1/8 + ... + 1/128 in cells of 1/256
        assert_eq!(cert.steps[3].name, "(i) deeper mass");
        let q1 = &cert.steps[3];
        assert!(q1.lhs <= q1.rhs);
    }

    #[test]
    fn random_unweighted_band_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let d = GridDomain::unit(2, 4).unwrap();
            let e = CellSet::from_predicate(&d, |_| rng.random_bool(0.2));
            let t = 0.125;
            let fam = select_level_set_cubes(&e, t).unwrap();
            for band in band_partition(&fam, t).unwrap() {
                let dd = depth_decompose(&band.family, &e).unwrap();
                let cert = certify_band(&dd, &e, &unit_pair(&d, 1.0), band.mu).unwrap();
                assert!(cert.passed, "{cert:#?}");
            }
        }
    }

    #[test]
    fn covering_trivial_cases() {
        let d = GridDomain::unit(2, 4).unwrap();
        let e = CellSet::full(&d);
        let q = DyadicCube::grid(2, &[1, 1]);
        let x = q.upper();
        let sel = covering_select_2d(&[x.clone()], &[q.clone()], &e, 0.5, 2).unwrap();
        assert_eq!(sel.gamma, vec![0]);
        assert!(sel.passed, "{sel:#?}");
        let sel = covering_select_2d(&[x.clone(), x], &[q.clone(), q], &e, 0.5, 2).unwrap();
        assert_eq!(sel.gamma.len(), 1);
    }

    #[test]
    fn covering_rejects_bad_inputs() {
        let d = GridDomain::unit(2, 4).unwrap();
        let e = CellSet::full(&d);
        let q = DyadicCube::grid(2, &[1, 1]);
        assert!(covering_select_2d(&[q.lower().to_vec()], &[q.clone()], &e, 1.0, 2).is_err());
        let cell = DyadicCube::grid(4, &[3, 3]);
        assert!(covering_select_2d(&[cell.upper()], &[cell], &e, 1.0, 2).is_err());
        let line = GridDomain::unit(1, 3).unwrap();
        assert!(covering_select_2d(&[], &[], &CellSet::full(&line), 1.0, 2).is_err());
    }

    #[test]
    fn overlap_counts() {
        let a = CellBox { lo: [0, 0], hi: [2, 2] };
        let b = CellBox { lo: [1, 1], hi: [3, 3] };
        let c = CellBox { lo: [2, 2], hi: [4, 4] };
        assert_eq!(max_overlap(&[a, c]), 1);
        assert_eq!(max_overlap(&[a, b, c]), 2);
        assert_eq!(max_overlap(&[]), 0);
    }

    #[test]
    fn overlap_matches_pointwise_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let boxes: Vec<CellBox> = (0..rng.random_range(1..12))
                .map(|_| {
                    let lo = [rng.random_range(-4..10), rng.random_range(-4..10)];
                    let s = rng.random_range(1..6);
                    CellBox { lo, hi: [lo[0] + s, lo[1] + s] }
                })
                .collect();
            let brute = (-4..16)
                .flat_map(|x| (-4..16).map(move |y| (x, y)))
                .map(|(x, y)| boxes.iter().filter(|b| b.lo[0] <= x && x < b.hi[0] && b.lo[1] <= y && y < b.hi[1]).count() as u32)
                .max()
                .unwrap();
            assert_eq!(max_overlap(&boxes), brute);
        }
    }

    /// Twenty random squares on a 64x64 grid, E filled on each `Q^{+2}` so the hypothesis holds.
    #[test]
    fn covering_random_instance() {
        let d = GridDomain::unit(2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let mut squares = Vec::new();
            let mut e = CellSet::empty(&d);
            for _ in 0..20 {
                let s = rng.random_range(1..=4u32);
                let h = 1i64 << s;
                let x = [rng.random_range(h..=64 - 2 * h), rng.random_range(h..=64 - 2 * h)];
                let q = CellCube::new(s, &[x[0] - h, x[1] - h]);
                for c in cells_in_range(&d, &[x[0] + h / 2, x[1], 0], &[x[0] + h, x[1] + h / 2, 1]) {
                    e.insert(c);
                }
                squares.push(d.cell_cube_to_dyadic(&q));
            }
            let points: Vec<Vec<Dyadic>> = squares.iter().map(|q| q.upper()).collect();
            let sel = covering_select_2d(&points, &squares, &e, 0.5, 2).unwrap();
            assert!(sel.certificate.iter().take(4).all(|s| s.passed), "{sel:#?}");
            for (k, &j) in sel.gamma.iter().enumerate() {
                assert!(sel.tilde_squares[k].contains_point_closed(&points[j]));
            }
            for x in &points {
                assert!(sel.tilde_squares.iter().any(|b| b.contains_point_closed(x)));
            }
            if sel.cap_holds {
                assert!(sel.passed);
                assert!(sel.f_overlap >= 1);
            }
            assert!(sel.tilde_overlap >= 1);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn selection_is_maximal_disjoint_and_matches_level_set(seed in any::<u64>(), dim in 1usize..=3, t in 0.01f64..0.99) {
            let depth = [0, 6, 3, 2][dim];
            let d = GridDomain::unit(dim, depth).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = CellSet::from_predicate(&d, |_| rng.random_bool(0.25));
            let fam = select_level_set_cubes(&e, t).unwrap();
            prop_assert!(fam.disjoint);
            for m in &fam.members {
                prop_assert!(m.ratio > t);
                let q = m.cell_cube;
                if q.scale < d.max_scale() {
                    let parent = q.parent(dim);
                    let pc = parent.plus(dim).cells(&d).iter().filter(|&&c| e.contains(c)).count() as f64;
                    prop_assert!(pc / parent.cell_count(dim) as f64 <= t);
                }
            }
            let ls = level_set(&dyadic_plus_maximal(&e), t, LevelMode::Above).unwrap();
            prop_assert_eq!(fam.union(), ls);
        }

        #[test]
        fn bands_partition_family(seed in any::<u64>(), t in 0.01f64..0.5) {
            let d = GridDomain::unit(2, 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = CellSet::from_predicate(&d, |_| rng.random_bool(0.3));
            let fam = select_level_set_cubes(&e, t).unwrap();
            let bands = band_partition(&fam, t).unwrap();
            let total: usize = bands.iter().map(|b| b.family.len()).sum();
            prop_assert_eq!(total, fam.len());
            for b in &bands {
                for m in &b.family.members {
                    prop_assert!(b.mu < m.ratio && m.ratio <= 2.0 * b.mu);
                }
            }
        }

        #[test]
        fn depth_levels_cover_family(seed in any::<u64>()) {
            let d = GridDomain::unit(1, 7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = CellSet::from_predicate(&d, |_| rng.random_bool(0.3));
            let fam = select_level_set_cubes(&e, 0.2).unwrap();
            let dd = depth_decompose(&fam, &e).unwrap();
            let total: usize = dd.levels.iter().map(|l| l.len()).sum();
            prop_assert_eq!(total, fam.len());
            for m in 1..dd.f.len() {
                prop_assert!(dd.f[m].is_subset(&dd.f[m - 1]));
                prop_assert!(dd.sigma[m].is_subset(&dd.sigma[m - 1]));
            }
        }
    }
}
