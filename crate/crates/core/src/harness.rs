//! End-to-end checks of the weak-type inequalities: sufficiency with explicit
//! constants, necessity through level-set containment, the planar pipeline,
//! and a randomized search for large weak-type ratios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::classes::{qualifying_cubes, restricted_constant, restricted_sup_for_cube, ser_extended, ClassConstant, Flavor};
use crate::covering::{
    band_partition, depth_decompose, certify_band_with, planar_chain, select_cells, select_level_set_cubes, tilde_cell_box, CoverSelection,
    PlanarChain, StepCheck, CHAIN_RTOL,
};
use crate::dyadic::{quarter_offset, DyadicCube};
use crate::error::{Error, Result};
use crate::grid::{CellCube, CellSet, GridDomain, WeightField, WeightPair};
use crate::maximal::{dyadic_plus_maximal, level_set, onesided_maximal_2d, subsquare_maximal_2d, LevelMode};

/// `2^{n+p+2} / (1 - 2^{-p})`.
pub fn weak_type_constant(dim: usize, p: f64) -> f64 {
    2f64.powf(dim as f64 + p + 2.0) / (1.0 - 2f64.powf(-p))
}

/// Dyadic thresholds `2^{-k}`, `k = 1..=depth`, largest first.
pub fn dyadic_t_sweep(domain: &GridDomain) -> Vec<f64> {
    (1..=domain.depth().max(1)).map(|k| 2f64.powi(-k)).collect()
}

fn ratio_of(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

fn rel_le(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs || lhs <= rhs + CHAIN_RTOL * rhs.abs().max(lhs.abs())
}

fn check(name: &str, lhs: f64, rhs: f64, ok: bool) -> StepCheck {
    StepCheck {
        name: name.to_string(),
        passed: ok,
        lhs,
        rhs,
        slack: rhs - lhs,
        witness: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Claim {
    DyadicWeakType,
    Necessity,
    PlanarWeakType,
    Sharpness,
}

/// Grid and source labels sufficient to rebuild an instance.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Descriptor {
    pub dim: usize,
    pub depth: i32,
    pub extent: Option<DyadicCube>,
    pub p: f64,
    pub pair: Option<String>,
    pub set: Option<String>,
    pub t_values: Vec<f64>,
}

impl Descriptor {
    pub fn of(domain: &GridDomain, p: f64) -> Self {
        Descriptor {
            dim: domain.dim(),
            depth: domain.depth(),
            extent: Some(domain.extent()),
            p,
            ..Default::default()
        }
    }
}

/// One band `C_k` of a dyadic level check.
#[derive(Clone, Debug, Serialize)]
pub struct BandSummary {
    pub k: u32,
    pub mu: f64,
    pub cubes: usize,
    pub depth_levels: usize,
    pub lhs: f64,
    #[serde(serialize_with = "ser_extended")]
    pub rhs: f64,
    pub passed: bool,
    pub steps: Vec<StepCheck>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DyadicLevel {
    pub t: f64,
    /// `w({M^{+,d} χ_E > t})`.
    pub lhs: f64,
    #[serde(serialize_with = "ser_extended")]
    pub rhs: f64,
    pub ratio: f64,
    pub bands: Vec<BandSummary>,
    pub steps: Vec<StepCheck>,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PlanarLevel {
    pub t: f64,
    pub i: u8,
    /// Cells of `{t < M_xi^{+i} χ_E, 𝓜^+ χ_E <= 2t}`.
    pub omega_cells: usize,
    pub lhs: f64,
    #[serde(serialize_with = "ser_extended")]
    pub rhs: f64,
    pub ratio: f64,
    /// The chain's right side with the anchored class constant in place of the local one.
    #[serde(serialize_with = "ser_extended")]
    pub rhs_anchored: f64,
    /// Same with the dyadic class constant.
    #[serde(serialize_with = "ser_extended")]
    pub rhs_dyadic: f64,
    /// `w({t < 𝓜^+ χ_E <= 2t})`, for information.
    pub band_weight: f64,
    pub sandwich: Vec<StepCheck>,
    pub selection: CoverSelection,
    pub chain: Option<PlanarChain>,
    pub passed: bool,
    /// Failure of the covering certificate (as opposed to the final inequality).
    pub certificate_failed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct NecessityDetail {
    pub flavor: Flavor,
    pub cubes_checked: usize,
    /// Largest measured `w(level set) t^p / v(E)`.
    #[serde(serialize_with = "ser_extended")]
    pub c_weak: f64,
    /// `[(w,v)] / (2 C_weak^{1/p})`.
    pub extremal_ratio: f64,
    pub containment: StepCheck,
    pub bound: StepCheck,
}

/// Best instance found by the sharpness search.
#[derive(Clone, Debug, Serialize)]
pub struct SharpnessDetail {
    pub budget: usize,
    pub seed: u64,
    pub unweighted: bool,
    pub evaluations: usize,
    pub best_ratio: f64,
    pub best_trial: usize,
    pub best_t: f64,
    pub best_w: Vec<f64>,
    pub best_v: Vec<f64>,
    pub best_set: Vec<usize>,
    /// Largest ratio over every evaluated instance.
    pub max_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub claim: Claim,
    pub descriptor: Descriptor,
    pub seed: Option<u64>,
    pub constants: Vec<ClassConstant>,
    /// Explicit constant of the asserted inequality, when one exists.
    pub theory_constant: Option<f64>,
    pub vacuous: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dyadic: Vec<DyadicLevel>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub planar: Vec<PlanarLevel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub necessity: Option<NecessityDetail>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharpness: Option<SharpnessDetail>,
    pub max_ratio: f64,
    pub certificate_failed: bool,
    pub passed: bool,
}

impl VerifyReport {
    fn new(claim: Claim, descriptor: Descriptor) -> Self {
        VerifyReport {
            claim,
            descriptor,
            seed: None,
            constants: Vec::new(),
            theory_constant: None,
            vacuous: false,
            dyadic: Vec::new(),
            planar: Vec::new(),
            necessity: None,
            sharpness: None,
            max_ratio: 0.0,
            certificate_failed: false,
            passed: true,
        }
    }
}

fn check_set(e: &CellSet, pair: &WeightPair) -> Result<()> {
    pair.domain().check_same(e.domain())
}

/// `w({M^{+,d} χ_E > t}) <= 2^{n+p+2}/(1-2^{-p}) [(w,v)]^p t^{-p} v(E)` for each `t`,
/// with each band routed through the depth-decomposition certificate.
pub fn verify_dyadic_weak_type(pair: &WeightPair, e: &CellSet, t_values: &[f64]) -> Result<VerifyReport> {
    check_set(e, pair)?;
    let constant = restricted_constant(pair, Flavor::Dyadic);
    verify_dyadic_with(pair, e, t_values, constant)
}

/// As [`verify_dyadic_weak_type`] with a precomputed dyadic restricted constant.
pub fn verify_dyadic_with(pair: &WeightPair, e: &CellSet, t_values: &[f64], constant: ClassConstant) -> Result<VerifyReport> {
    check_set(e, pair)?;
    if let Some(t) = t_values.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::invalid(format!("threshold t = {t} must be positive")));
    }
    let d = *pair.domain();
    let p = pair.p;
    let c = constant.value;
    let k_theory = weak_type_constant(d.dim(), p);
    let mut report = VerifyReport::new(Claim::DyadicWeakType, Descriptor::of(&d, p));
    report.descriptor.t_values = t_values.to_vec();
    report.theory_constant = Some(k_theory);
    report.vacuous = !c.is_finite();
    report.constants.push(constant);
    let maximal = dyadic_plus_maximal(e);
    let v_e = pair.v.measure(e)?;
    for &t in t_values {
        let set = level_set(&maximal, t, LevelMode::Above)?;
        let lhs = pair.w.measure(&set)?;
        let rhs = if c.is_finite() {
            k_theory * c.powf(p) * t.powf(-p) * v_e
        } else {
            f64::INFINITY
        };
        let family = select_level_set_cubes(e, t)?;
        let mut steps = vec![check("level set is the union of the selected cubes", 0.0, 0.0, family.union() == set)];
        let mut bands = Vec::new();
        let (mut band_lhs, mut band_rhs) = (0.0, 0.0);
        for band in band_partition(&family, t)? {
            let dd = depth_decompose(&band.family, e)?;
            let cert = certify_band_with(&dd, e, pair, band.mu, c)?;
            band_lhs += cert.lhs;
            band_rhs += cert.rhs;
            bands.push(BandSummary {
                k: band.k,
                mu: band.mu,
                cubes: band.family.len(),
                depth_levels: dd.levels.len(),
                lhs: cert.lhs,
                rhs: cert.rhs,
                passed: cert.passed,
                steps: cert.steps,
            });
        }
        steps.push(check("bands sum to the level set", band_lhs, lhs, rel_le(band_lhs, lhs) && rel_le(lhs, band_lhs)));
        if c.is_finite() {
            steps.push(check("series over bands", band_rhs, rhs, rel_le(band_rhs, rhs)));
        }
        steps.push(check("final bound", lhs, rhs, lhs <= rhs));
        let certified = bands.iter().all(|b| b.passed) && steps[..steps.len() - 1].iter().all(|s| s.passed);
        let holds = steps.last().is_some_and(|s| s.passed);
        report.certificate_failed |= !certified;
        report.passed &= certified && holds;
        let ratio = ratio_of(lhs, rhs);
        report.max_ratio = report.max_ratio.max(ratio);
        report.dyadic.push(DyadicLevel {
            t,
            lhs,
            rhs,
            ratio,
            bands,
            passed: certified && holds,
            steps,
        });
    }
    Ok(report)
}

/// Checks that every qualifying cube sits in the level set of its own extremal set,
/// so any weak-type constant dominates the class constant.
pub fn verify_necessity(pair: &WeightPair, flavor: Flavor) -> Result<VerifyReport> {
    let d = *pair.domain();
    let dim = d.dim();
    let p = pair.p;
    let factor = match flavor {
        Flavor::Dyadic => 2.0,
        Flavor::Anchored if dim == 2 => 8.0,
        Flavor::Anchored => return Err(Error::NotPlanar(dim)),
    };
    let constant = restricted_constant(pair, flavor);
    let vol = d.cell_volume();
    let cubes = qualifying_cubes(&d, flavor);
    let per_cube: Vec<(bool, f64, f64)> = cubes
        .par_iter()
        .map(|q| {
            let (r, m, order) = restricted_sup_for_cube(pair, q);
            if m == 0 {
                return (true, 0.0, r);
            }
            let e = CellSet::from_cells(&d, order[..m].iter().copied()).expect("cells of the domain");
            let t = m as f64 / (factor * q.cell_count(dim) as f64);
            let values = match flavor {
                Flavor::Dyadic => dyadic_plus_maximal(&e),
                Flavor::Anchored => onesided_maximal_2d(&e, None).expect("planar domain"),
            };
            let set = level_set(&values, t, LevelMode::Above).expect("positive threshold");
            let inside = q.cells(&d).iter().all(|&c| set.contains(c));
            let lhs = pair.w.cell_mass(set.iter()) * vol;
            let ve = pair.v.cell_mass(e.iter()) * vol;
            let c_weak = if lhs == 0.0 {
                0.0
            } else if ve == 0.0 {
                f64::INFINITY
            } else {
                lhs * t.powf(p) / ve
            };
            (inside, c_weak, r)
        })
        .collect();
    let mut containment = StepCheck {
        name: "cube inside its level set".into(),
        passed: true,
        lhs: 0.0,
        rhs: 0.0,
        slack: 0.0,
        witness: None,
    };
    if let Some(k) = per_cube.iter().position(|x| !x.0) {
        containment.passed = false;
        containment.witness = Some(k);
    }
    let c_weak = per_cube.iter().map(|x| x.1).fold(0.0, f64::max);
    let bound_rhs = factor * c_weak.powf(1.0 / p);
    let c = constant.value;
    let holds = c <= bound_rhs || c <= bound_rhs * (1.0 + 1e-9);
    let bound = StepCheck {
        name: "class constant <= factor * C_weak^(1/p)".into(),
        passed: holds,
        lhs: c,
        rhs: bound_rhs,
        slack: bound_rhs - c,
        witness: None,
    };
    let mut report = VerifyReport::new(Claim::Necessity, Descriptor::of(&d, p));
    report.vacuous = !c.is_finite();
    report.constants.push(constant);
    report.theory_constant = Some(factor);
    report.max_ratio = if c == 0.0 { 0.0 } else { c / bound_rhs };
    report.passed = containment.passed && bound.passed;
    report.certificate_failed = !containment.passed;
    report.necessity = Some(NecessityDetail {
        flavor,
        cubes_checked: cubes.len(),
        c_weak,
        extremal_ratio: report.max_ratio,
        containment,
        bound,
    });
    Ok(report)
}

/// The planar pipeline for each `t` and each subsquare index `i`.
///
/// `Ω = {t < M_xi^{+i} χ_E, 𝓜^+ χ_E <= 2t}` with `xi` one cell; each point of
/// `Ω` gets the square `Q_x` whose upper-right corner is `x` and whose plus
/// quarter realizes the maximal value, then the covering selection and the
/// chain `w(Ω) <= D 8^p (9/4)^p C_F K^p t^-p v(E)` are certified.
pub fn verify_2d_weak_type(pair: &WeightPair, e: &CellSet, t_values: &[f64]) -> Result<VerifyReport> {
    check_set(e, pair)?;
    let d = *pair.domain();
    if d.dim() != 2 {
        return Err(Error::NotPlanar(d.dim()));
    }
    if let Some(t) = t_values.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::invalid(format!("threshold t = {t} must be positive")));
    }
    let p = pair.p;
    let anchored = restricted_constant(pair, Flavor::Anchored);
    let dyadic = restricted_constant(pair, Flavor::Dyadic);
    let mut report = VerifyReport::new(Claim::PlanarWeakType, Descriptor::of(&d, p));
    report.descriptor.t_values = t_values.to_vec();
    let full = onesided_maximal_2d(e, None)?;
    let subs = (1..=3u8)
        .map(|i| subsquare_maximal_2d(e, i, Some(d.cell_side())))
        .collect::<Result<Vec<_>>>()?;
    let v_e = pair.v.measure(e)?;
    let e_count = |lo: [i64; 2], side: i64| {
        crate::grid::cells_in_range(&d, &[lo[0], lo[1], 0], &[lo[0] + side, lo[1] + side, 1])
            .into_iter()
            .filter(|&c| e.contains(c))
            .count() as f64
    };
    for &t in t_values {
        let band = level_set(&full, t, LevelMode::Band)?;
        let band_weight = pair.w.measure(&band)?;
        for (k, sub) in subs.iter().enumerate() {
            let i = k as u8 + 1;
            let omega = level_set(sub, t, LevelMode::Omega { full: &full })?;
            let (dx, dy) = quarter_offset(i)?;
            let mut pts = Vec::new();
            let mut qs = Vec::new();
            let mut tildes = Vec::new();
            let mut quarter = StepCheck::new_named("t/4 < |E ∩ Q^{+i}|/|Q|");
            let mut cap = StepCheck::new_named("|E ∩ (Q~)^+|/|Q| <= 8t");
            let mut inside = StepCheck::new_named("(Q~)^+ inside Q_{x,2h}");
            for x in omega.iter() {
                let s = sub.witness_scale(x).expect("positive value has a witness");
                let h = 1i64 << s;
                let c = d.cell_coords(x);
                let xy = [c[0] as i64, c[1] as i64];
                let q = CellCube::new(s, &[xy[0] - h, xy[1] - h]);
                let area = (h * h) as f64;
                let r = e_count([xy[0] + dx as i64 * h / 2, xy[1] + dy as i64 * h / 2], h / 2) / area;
                quarter.fold(t / 4.0, r, r > t / 4.0, x);
                let tb = tilde_cell_box(&d, &q, i)?;
                let plus_lo = [tb.lo[0] + tb.side(), tb.lo[1] + tb.side()];
                let plus_side = tb.side();
                let r = e_count(plus_lo, plus_side) / area;
                cap.fold(r, 8.0 * t, r <= 8.0 * t, x);
                let within = plus_lo[0] >= xy[0] && plus_lo[1] >= xy[1] && plus_lo[0] + plus_side <= xy[0] + 2 * h && plus_lo[1] + plus_side <= xy[1] + 2 * h;
                inside.fold(0.0, 0.0, within, x);
                pts.push(xy);
                qs.push(q);
                tildes.push(tb);
            }
            let sandwich = vec![quarter, cap, inside];
            let selection = select_cells(&d, &pts, &qs, &tildes, e, t, i);
            let mut certificate_failed = !selection.passed || !sandwich.iter().all(|s| s.passed);
            let chain = selection.cap_holds.then(|| planar_chain(&selection, &omega, e, pair, t));
            let lhs = pair.w.measure(&omega)?;
            let (rhs, rhs_anchored, rhs_dyadic, holds) = match &chain {
                Some(ch) => {
                    certificate_failed |= !ch.steps[..ch.steps.len() - 1].iter().all(|s| s.passed);
                    certificate_failed |= !rel_le(lhs, ch.lhs) || !rel_le(ch.lhs, lhs);
                    let with = |c: f64| ch.c_total * c.powf(p) * t.powf(-p) * v_e;
                    (ch.rhs, with(anchored.value), with(dyadic.value), lhs <= ch.rhs)
                }
                None => (f64::INFINITY, f64::INFINITY, f64::INFINITY, false),
            };
            let ratio = ratio_of(lhs, rhs);
            report.max_ratio = report.max_ratio.max(ratio);
            report.vacuous |= rhs.is_infinite();
            report.certificate_failed |= certificate_failed;
            report.passed &= holds && !certificate_failed;
            report.planar.push(PlanarLevel {
                t,
                i,
                omega_cells: omega.count(),
                lhs,
                rhs,
                ratio,
                rhs_anchored,
                rhs_dyadic,
                band_weight,
                sandwich,
                selection,
                chain,
                passed: holds && !certificate_failed,
                certificate_failed,
            });
        }
    }
    report.constants.push(anchored);
    report.constants.push(dyadic);
    Ok(report)
}

/// Climbing moves per trial in [`sharpness_search`].
pub const CLIMB_STEPS: usize = 24;

/// Best `lhs / rhs` of the dyadic inequality over thresholds just below each value of `M^{+,d} χ_E`.
pub fn best_weak_ratio(pair: &WeightPair, e: &CellSet) -> (f64, f64) {
    let d = *pair.domain();
    let p = pair.p;
    let c = restricted_constant(pair, Flavor::Dyadic).value;
    let vol = d.cell_volume();
    let v_e = pair.v.cell_mass(e.iter()) * vol;
    if !c.is_finite() || c == 0.0 || v_e == 0.0 {
        return (0.0, 0.0);
    }
    let m = dyadic_plus_maximal(e);
    let mut levels: Vec<f64> = m.values().iter().copied().filter(|&x| x > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let k = weak_type_constant(d.dim(), p) * c.powf(p);
    let mut best = (0.0, 0.0);
    for u in levels {
        let t = u * (1.0 - 2f64.powi(-20));
        let lhs = pair.w.cell_mass(m.values().iter().enumerate().filter(|(_, &x)| x > t).map(|(i, _)| i)) * vol;
        let r = lhs * t.powf(p) / (k * v_e);
        if r > best.0 {
            best = (r, t);
        }
    }
    best
}

struct Trial {
    ratio: f64,
    t: f64,
    w: Vec<f64>,
    v: Vec<f64>,
    e: Vec<bool>,
    max_ratio: f64,
    evaluations: usize,
}

fn run_trial(domain: &GridDomain, p: f64, seed: u64, trial: usize, unweighted: bool) -> Trial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let n = domain.num_cells();
    let density = rng.random_range(0.05..0.5);
    let mut e: Vec<bool> = (0..n).map(|_| rng.random_bool(density)).collect();
    if !e.iter().any(|&b| b) {
        e[rng.random_range(0..n)] = true;
    }
    let weight = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        if unweighted {
            vec![1.0; n]
        } else {
            (0..n).map(|_| 2f64.powi(rng.random_range(-4..=4))).collect()
        }
    };
    let mut w = weight(&mut rng);
    let mut v = weight(&mut rng);
    let eval = |w: &[f64], v: &[f64], e: &[bool]| {
        let pair = WeightPair::new(
            WeightField::new(domain, w.to_vec()).expect("positive densities"),
            WeightField::new(domain, v.to_vec()).expect("positive densities"),
            p,
        )
        .expect("valid exponent");
        let set = CellSet::from_mask(domain, e.to_vec()).expect("mask of the domain");
        best_weak_ratio(&pair, &set)
    };
    let (mut ratio, mut t) = eval(&w, &v, &e);
    let mut max_ratio = ratio;
    let mut evaluations = 1;
    for _ in 0..CLIMB_STEPS {
        let (mut w2, mut v2, mut e2) = (w.clone(), v.clone(), e.clone());
        let c = rng.random_range(0..n);
        match if unweighted { 0 } else { rng.random_range(0..3) } {
            0 => e2[c] = !e2[c],
            1 => w2[c] *= if rng.random_bool(0.5) { 2.0 } else { 0.5 },
            _ => v2[c] *= if rng.random_bool(0.5) { 2.0 } else { 0.5 },
        }
        if !e2.iter().any(|&b| b) {
            continue;
        }
        let (r, t2) = eval(&w2, &v2, &e2);
        evaluations += 1;
        max_ratio = max_ratio.max(r);
        if r > ratio {
            (ratio, t, w, v, e) = (r, t2, w2, v2, e2);
        }
    }
    Trial {
        ratio,
        t,
        w,
        v,
        e,
        max_ratio,
        evaluations,
    }
}

/// Random starts plus hill climbing over `(w, v, E, t)` maximizing the dyadic
/// weak-type ratio against its explicit bound. Deterministic given `seed`.
pub fn sharpness_search(domain: &GridDomain, p: f64, budget: usize, seed: u64, unweighted: bool) -> Result<VerifyReport> {
    if budget == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("exponent p = {p} must be finite and >= 1")));
    }
    let trials: Vec<Trial> = (0..budget).into_par_iter().map(|k| run_trial(domain, p, seed, k, unweighted)).collect();
    let (best_trial, best) = trials
        .iter()
        .enumerate()
        .fold((0, &trials[0]), |acc, (k, tr)| if tr.ratio > acc.1.ratio { (k, tr) } else { acc });
    let max_ratio = trials.iter().map(|t| t.max_ratio).fold(0.0, f64::max);
    let mut report = VerifyReport::new(Claim::Sharpness, Descriptor::of(domain, p));
    report.seed = Some(seed);
    report.theory_constant = Some(weak_type_constant(domain.dim(), p));
    report.max_ratio = max_ratio;
    report.passed = max_ratio <= 1.0;
    report.sharpness = Some(SharpnessDetail {
        budget,
        seed,
        unweighted,
        evaluations: trials.iter().map(|t| t.evaluations).sum(),
        best_ratio: best.ratio,
        best_trial,
        best_t: best.t,
        best_w: best.w.clone(),
        best_v: best.v.clone(),
        best_set: best.e.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect(),
        max_ratio,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn unit(d: &GridDomain, p: f64) -> WeightPair {
        WeightPair::new(WeightField::constant(d, 1.0).unwrap(), WeightField::constant(d, 1.0).unwrap(), p).unwrap()
    }

    fn random_pair(d: &GridDomain, p: f64, rng: &mut ChaCha8Rng) -> WeightPair {
        let w = WeightField::from_fn(d, |_| rng.random_range(1..=8) as f64).unwrap();
        let v = WeightField::from_fn(d, |_| rng.random_range(1..=8) as f64).unwrap();
        WeightPair::new(w, v, p).unwrap()
    }

    #[test]
    fn one_dimensional_example() {
        let d = GridDomain::unit(1, 2).unwrap();
        let e = CellSet::from_cells(&d, [2]).unwrap();
        let r = verify_dyadic_weak_type(&unit(&d, 1.0), &e, &[0.4]).unwrap();
        assert!(r.passed, "{r:#?}");
        let level = &r.dyadic[0];
        assert_eq!(level.lhs, 0.5);
        // 2^4 / (1/2) * (1/0.4) * (1/4)
        let rhs = 16.0 / 0.5 * (1.0 / 0.4) * 0.25;
        assert!((level.rhs - rhs).abs() <= 1e-12 * rhs);
        assert!((level.ratio - 0.5 / rhs).abs() < 1e-15);
        assert!((level.ratio - 0.025).abs() < 1e-12);
    }

    #[test]
    fn empty_set_has_empty_level_sets() {
        let d = GridDomain::unit(2, 3).unwrap();
        let e = CellSet::empty(&d);
        let r = verify_dyadic_weak_type(&unit(&d, 2.0), &e, &dyadic_t_sweep(&d)).unwrap();
        assert!(r.passed);
        assert!(r.dyadic.iter().all(|l| l.lhs == 0.0));
        let r = verify_2d_weak_type(&unit(&d, 1.0), &e, &[0.25]).unwrap();
        assert!(r.passed);
        assert!(r.planar.iter().all(|l| l.omega_cells == 0));
    }

    #[test]
    fn unweighted_bound_over_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in 1..=3 {
            let depth = [0, 6, 3, 2][dim];
            let d = GridDomain::unit(dim, depth).unwrap();
            let e = CellSet::from_predicate(&d, |_| rng.random_bool(0.2));
            for p in [1.0, 2.0] {
                let r = verify_dyadic_weak_type(&unit(&d, p), &e, &dyadic_t_sweep(&d)).unwrap();
                assert!(r.passed, "{r:#?}");
                assert_eq!(r.constants[0].value, if e.is_empty() { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn infinite_constant_is_vacuous() {
        let d = GridDomain::unit(1, 3).unwrap();
        let w = WeightField::constant(&d, 1.0).unwrap();
        let v = WeightField::new(&d, vec![1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let pair = WeightPair::new(w, v, 1.0).unwrap();
        let e = CellSet::from_cells(&d, [4, 5]).unwrap();
        let r = verify_dyadic_weak_type(&pair, &e, &[0.25]).unwrap();
        assert!(r.vacuous);
        assert!(r.dyadic[0].rhs.is_infinite());
        assert!(r.passed);
        let n = verify_necessity(&pair, Flavor::Dyadic).unwrap();
        assert!(n.necessity.as_ref().unwrap().c_weak.is_infinite());
        assert!(n.passed);
    }

    #[test]
    fn necessity_unweighted_and_random() {
        let d = GridDomain::unit(2, 3).unwrap();
        let r = verify_necessity(&unit(&d, 2.0), Flavor::Dyadic).unwrap();
        assert!(r.passed, "{r:#?}");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in [1.0, 1.5, 3.0] {
            let pair = random_pair(&d, p, &mut rng);
            for flavor in [Flavor::Dyadic, Flavor::Anchored] {
                let r = verify_necessity(&pair, flavor).unwrap();
                assert!(r.passed, "{r:#?}");
                assert!(r.max_ratio <= 1.0 + 1e-9);
            }
        }
        let line = GridDomain::unit(1, 3).unwrap();
        assert!(verify_necessity(&unit(&line, 1.0), Flavor::Anchored).is_err());
    }

    #[test]
    fn planar_full_set_at_one_is_empty() {
        let d = GridDomain::unit(2, 4).unwrap();
        let r = verify_2d_weak_type(&unit(&d, 1.0), &CellSet::full(&d), &[1.0]).unwrap();
        assert!(r.planar.iter().all(|l| l.omega_cells == 0 && l.lhs == 0.0));
        assert!(r.passed);
    }

    #[test]
    fn planar_random_unweighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = GridDomain::unit(2, 5).unwrap();
        let e = CellSet::from_predicate(&d, |_| rng.random_bool(0.1));
        let r = verify_2d_weak_type(&unit(&d, 1.0), &e, &[0.125, 0.25, 0.5]).unwrap();
        assert!(r.passed, "{:#?}", r.planar.iter().find(|l| !l.passed));
        assert!(r.max_ratio <= 1.0);
        let omega_total: usize = r.planar.iter().map(|l| l.omega_cells).sum();
        assert!(omega_total > 0);
        assert!(verify_2d_weak_type(&unit(&GridDomain::unit(1, 3).unwrap(), 1.0), &CellSet::empty(&GridDomain::unit(1, 3).unwrap()), &[0.5]).is_err());
    }

    #[test]
    fn planar_weighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = GridDomain::unit(2, 4).unwrap();
        for p in [1.0, 2.0] {
            let pair = random_pair(&d, p, &mut rng);
            let e = CellSet::from_predicate(&d, |_| rng.random_bool(0.2));
            let r = verify_2d_weak_type(&pair, &e, &[0.125, 0.25]).unwrap();
            assert!(r.passed, "{:#?}", r.planar.iter().find(|l| !l.passed));
        }
    }

    #[test]
    fn sharpness_is_deterministic_and_beats_example() {
        let d = GridDomain::unit(1, 2).unwrap();
        let a = sharpness_search(&d, 1.0, 1, 5, true).unwrap();
        let b = sharpness_search(&d, 1.0, 1, 5, true).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let s = sharpness_search(&d, 1.0, 16, 5, true).unwrap();
        assert!(s.sharpness.as_ref().unwrap().best_ratio >= 0.025);
        assert!(s.passed);
        let weighted = sharpness_search(&GridDomain::unit(2, 2).unwrap(), 2.0, 8, 1, false).unwrap();
        assert!(weighted.passed);
        assert!(sharpness_search(&d, 1.0, 0, 5, true).is_err());
    }

    fn lift_to_finer(coarse: &GridDomain, fine: &GridDomain, c: usize) -> usize {
        let k = fine.cell_coords(c);
        let dim = fine.dim();
        let coords: Vec<usize> = k[..dim].iter().map(|&x| x / 2).collect();
        coarse.cell_index(&coords)
    }

    /// Refinement keeps every coarse cube (one scale up), so level sets can only grow.
    #[test]
    fn refinement_only_grows_level_sets() {
        let coarse = GridDomain::unit(2, 2).unwrap();
        let fine = GridDomain::unit(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let pair = random_pair(&coarse, 2.0, &mut rng);
            let e = CellSet::from_predicate(&coarse, |_| rng.random_bool(0.4));
            let lift = |c| lift_to_finer(&coarse, &fine, c);
            let fine_pair = WeightPair::new(
                WeightField::from_fn(&fine, |c| pair.w.at(lift(c))).unwrap(),
                WeightField::from_fn(&fine, |c| pair.v.at(lift(c))).unwrap(),
                2.0,
            )
            .unwrap();
            let fine_e = CellSet::from_predicate(&fine, |c| e.contains(lift(c)));
            let ts = [0.125, 0.25, 0.5];
            let a = verify_dyadic_weak_type(&pair, &e, &ts).unwrap();
            let b = verify_dyadic_weak_type(&fine_pair, &fine_e, &ts).unwrap();
            for (x, y) in a.dyadic.iter().zip(&b.dyadic) {
                assert!(x.lhs <= y.lhs);
            }
            assert!(a.constants[0].value <= b.constants[0].value);
        }
    }

    /// E = the right neighbour of the first cell: the finest cube of the lower-right
    /// quarter of cell 0 sees it after refinement, the coarse model does not.
    #[test]
    fn refinement_can_change_level_sets() {
        let coarse = GridDomain::unit(2, 1).unwrap();
        let fine = GridDomain::unit(2, 2).unwrap();
        let e = CellSet::from_cells(&coarse, [1]).unwrap();
        let fine_e = CellSet::from_predicate(&fine, |c| e.contains(lift_to_finer(&coarse, &fine, c)));
        let a = verify_dyadic_weak_type(&unit(&coarse, 1.0), &e, &[0.5]).unwrap();
        let b = verify_dyadic_weak_type(&unit(&fine, 1.0), &fine_e, &[0.5]).unwrap();
        assert_eq!(a.dyadic[0].lhs, 0.0);
        assert!(b.dyadic[0].lhs > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn scaling_leaves_ratios_unchanged(seed in any::<u64>(), k in -3i32..=3, p in prop::sample::select(vec![1.0, 2.0])) {
            let d = GridDomain::unit(2, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pair = random_pair(&d, p, &mut rng);
            let e = CellSet::from_predicate(&d, |_| rng.random_bool(0.3));
            let c = 2f64.powi(k);
            let scaled = WeightPair::new(pair.w.scaled(c).unwrap(), pair.v.scaled(c).unwrap(), p).unwrap();
            let ts = dyadic_t_sweep(&d);
            let a = verify_dyadic_weak_type(&pair, &e, &ts).unwrap();
            let b = verify_dyadic_weak_type(&scaled, &e, &ts).unwrap();
            prop_assert!(a.passed && b.passed);
            for (x, y) in a.dyadic.iter().zip(&b.dyadic) {
                prop_assert_eq!(x.ratio, y.ratio);
            }
        }

        #[test]
        fn dyadic_bound_holds(seed in any::<u64>(), dim in 1usize..=3, p in prop::sample::select(vec![1.0, 1.5, 2.0])) {
            let depth = [0, 5, 3, 2][dim];
            let d = GridDomain::unit(dim, depth).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pair = random_pair(&d, p, &mut rng);
            let e = CellSet::from_predicate(&d, |_| rng.random_bool(0.25));
            let r = verify_dyadic_weak_type(&pair, &e, &dyadic_t_sweep(&d)).unwrap();
            prop_assert!(r.passed);
            prop_assert!(r.max_ratio <= 1.0);
        }
    }
}
