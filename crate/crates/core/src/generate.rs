//! Seeded instance generators addressed by spec strings such as
//! `loguniform(lo=0.1, hi=10, seed=7)` or `random(density=0.2)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dyadic::{Dyadic, DyadicBox};
use crate::error::{Error, Result};
use crate::grid::{CellCube, CellSet, GridDomain, WeightField, WeightPair};

/// A generator name with `key=value` parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenSpec {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

impl FromStr for GenSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("malformed generator spec '{s}'"));
        let (name, rest) = match s.find('(') {
            Some(i) => {
                let inner = s[i + 1..].strip_suffix(')').ok_or_else(bad)?;
                (&s[..i], Some(inner))
            }
            None => (s, None),
        };
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(bad());
        }
        let mut params = BTreeMap::new();
        for item in rest.into_iter().flat_map(|r| r.split(',')).map(str::trim).filter(|x| !x.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(bad)?;
            if params.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::invalid(format!("parameter '{}' given twice in '{s}'", k.trim())));
            }
        }
        Ok(GenSpec {
            name: name.to_string(),
            params,
        })
    }
}

impl fmt::Display for GenSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)?;
        if !self.params.is_empty() {
            let items: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "({})", items.join(", "))?;
        }
        Ok(())
    }
}

impl GenSpec {
    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::invalid(format!("{}: '{key}={v}' is not a finite number", self.name))),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| Error::invalid(format!("{}: '{key}={v}' is not a nonnegative integer", self.name))),
        }
    }

    fn point(&self, key: &str, dim: usize) -> Result<Option<Vec<Dyadic>>> {
        let Some(v) = self.params.get(key) else {
            return Ok(None);
        };
        let coords = v
            .split(':')
            .map(|x| x.trim().parse::<f64>().map_err(|_| Error::invalid(format!("{}: bad coordinate in '{key}={v}'", self.name))))
            .map(|x| x.and_then(Dyadic::from_f64))
            .collect::<Result<Vec<_>>>()?;
        if coords.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: coords.len(),
            });
        }
        Ok(Some(coords))
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::invalid(format!("{}: unknown parameter '{k}'", self.name))),
            None => Ok(()),
        }
    }

    fn rng(&self, default_seed: u64, stream: u64) -> Result<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.u64_or("seed", default_seed)?);
        rng.set_stream(stream);
        Ok(rng)
    }
}

/// Names accepted by [`generate_pair`].
pub const PAIR_GENERATORS: &[&str] = &["unweighted", "const", "loguniform", "power", "blocks", "step"];

/// Names accepted by [`generate_set`].
pub const SET_GENERATORS: &[&str] = &["empty", "full", "random", "blocks", "box"];

fn cell_center(domain: &GridDomain, idx: usize) -> Vec<f64> {
    let half = domain.cell_side().half().to_f64();
    domain.cell_corner(idx).iter().map(|c| c.to_f64() + half).collect()
}

/// Position of the cell center inside the extent, each coordinate in `[0, 1)`.
fn relative_center(domain: &GridDomain, idx: usize) -> Vec<f64> {
    let ext = domain.extent();
    let side = ext.side().to_f64();
    cell_center(domain, idx).iter().zip(ext.lower()).map(|(c, lo)| (c - lo.to_f64()) / side).collect()
}

fn random_blocks(domain: &GridDomain, count: u64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let dim = domain.dim();
    let mut mask = vec![false; domain.num_cells()];
    for _ in 0..count {
        let scale = rng.random_range(0..domain.max_scale().max(1));
        let per_side = (domain.side_cells() >> scale) as i64;
        let anchor: Vec<i64> = (0..dim).map(|_| rng.random_range(0..per_side) << scale).collect();
        for c in CellCube::new(scale, &anchor).cells(domain) {
            mask[c] = true;
        }
    }
    mask
}

/// Builds `(w, v)` from a generator spec; `seed` is used when the spec has none.
///
/// * `unweighted`, `const(w=1, v=1)`
/// * `loguniform(lo=0.1, hi=10, seed)`: independent log-uniform densities
/// * `power(alpha=-0.5, beta=0.5)`: `|x - c|^alpha`, `|x - c|^beta` at cell centers, `c` the extent center
/// * `blocks(count=4, base=0.1, high=10, seed)`: `base` plus `high` on random grid-dyadic blocks
/// * `step(ratio=100, at=0.5)`: `w` large left of `at` along the first axis, `v` small right of it
pub fn generate_pair(domain: &GridDomain, spec: &str, p: f64, seed: u64) -> Result<WeightPair> {
    let g: GenSpec = spec.parse()?;
    let (w, v) = match g.name.as_str() {
        "unweighted" => {
            g.check_keys(&[])?;
            (WeightField::constant(domain, 1.0)?, WeightField::constant(domain, 1.0)?)
        }
        "const" => {
            g.check_keys(&["w", "v"])?;
            (WeightField::constant(domain, g.f64_or("w", 1.0)?)?, WeightField::constant(domain, g.f64_or("v", 1.0)?)?)
        }
        "loguniform" => {
            g.check_keys(&["lo", "hi", "seed"])?;
            let (lo, hi) = (g.f64_or("lo", 0.1)?, g.f64_or("hi", 10.0)?);
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::invalid("loguniform needs 0 < lo <= hi"));
            }
            let (a, b) = (lo.ln(), hi.ln());
            let draw = |stream| -> Result<WeightField> {
                let mut rng = g.rng(seed, stream)?;
                WeightField::from_fn(domain, |_| if a == b { lo } else { rng.random_range(a..b).exp() })
            };
            (draw(0)?, draw(1)?)
        }
        "power" => {
            g.check_keys(&["alpha", "beta"])?;
            let (alpha, beta) = (g.f64_or("alpha", -0.5)?, g.f64_or("beta", 0.5)?);
            let ext = domain.extent();
            let half = ext.side().half();
            let center: Vec<f64> = ext.lower().iter().map(|c| (*c + half).to_f64()).collect();
            let dist = |idx: usize| {
                cell_center(domain, idx)
                    .iter()
                    .zip(&center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            };
            (WeightField::from_fn(domain, |c| dist(c).powf(alpha))?, WeightField::from_fn(domain, |c| dist(c).powf(beta))?)
        }
        "blocks" => {
            g.check_keys(&["count", "base", "high", "seed"])?;
            let count = g.u64_or("count", 4)?;
            let (base, high) = (g.f64_or("base", 0.1)?, g.f64_or("high", 10.0)?);
            let field = |stream| -> Result<WeightField> {
                let mask = random_blocks(domain, count, &mut g.rng(seed, stream)?);
                WeightField::from_fn(domain, |c| if mask[c] { base + high } else { base })
            };
            (field(0)?, field(1)?)
        }
        "step" => {
            g.check_keys(&["ratio", "at"])?;
            let (ratio, at) = (g.f64_or("ratio", 100.0)?, g.f64_or("at", 0.5)?);
            if !(ratio > 0.0) {
                return Err(Error::invalid("step needs ratio > 0"));
            }
            let left = |c: usize| relative_center(domain, c)[0] < at;
            (
                WeightField::from_fn(domain, |c| if left(c) { ratio } else { 1.0 })?,
                WeightField::from_fn(domain, |c| if left(c) { 1.0 } else { 1.0 / ratio })?,
            )
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown pair generator '{other}' (expected one of {})",
                PAIR_GENERATORS.join(", ")
            )))
        }
    };
    WeightPair::new(w, v, p)
}

/// Builds `E` from a generator spec; `seed` is used when the spec has none.
///
/// * `empty`, `full`
/// * `random(density=0.1, seed)`: independent cells
/// * `blocks(count=3, seed)`: union of random grid-dyadic cubes
/// * `box(lo=x:y, hi=x:y)`: cells inside the box (dyadic coordinates separated by `:`)
pub fn generate_set(domain: &GridDomain, spec: &str, seed: u64) -> Result<CellSet> {
    let g: GenSpec = spec.parse()?;
    match g.name.as_str() {
        "empty" => {
            g.check_keys(&[])?;
            Ok(CellSet::empty(domain))
        }
        "full" => {
            g.check_keys(&[])?;
            Ok(CellSet::full(domain))
        }
        "random" => {
            g.check_keys(&["density", "seed"])?;
            let density = g.f64_or("density", 0.1)?;
            if !(0.0..=1.0).contains(&density) {
                return Err(Error::invalid("random needs density in [0, 1]"));
            }
            let mut rng = g.rng(seed, 2)?;
            Ok(CellSet::from_predicate(domain, |_| rng.random_bool(density)))
        }
        "blocks" => {
            g.check_keys(&["count", "seed"])?;
            let mask = random_blocks(domain, g.u64_or("count", 3)?, &mut g.rng(seed, 3)?);
            CellSet::from_mask(domain, mask)
        }
        "box" => {
            g.check_keys(&["lo", "hi"])?;
            let lo = g.point("lo", domain.dim())?.ok_or_else(|| Error::invalid("box needs lo"))?;
            let hi = g.point("hi", domain.dim())?.ok_or_else(|| Error::invalid("box needs hi"))?;
            CellSet::from_box(domain, &DyadicBox::new(lo, hi)?)
        }
        other => Err(Error::invalid(format!(
            "unknown set generator '{other}' (expected one of {})",
            SET_GENERATORS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_specs() {
        let g: GenSpec = "loguniform(lo=0.5, hi=2,seed=7)".parse().unwrap();
        assert_eq!(g.name, "loguniform");
        assert_eq!(g.params["seed"], "7");
        assert_eq!(g.to_string(), "loguniform(hi=2, lo=0.5, seed=7)");
        assert_eq!("full".parse::<GenSpec>().unwrap().params.len(), 0);
        for bad in ["", "x(", "x(a)", "x(a=1,a=2)", "a b"] {
            assert!(bad.parse::<GenSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn seeded_generators_are_reproducible() {
        let d = GridDomain::unit(2, 3).unwrap();
        let a = generate_pair(&d, "loguniform(seed=7)", 2.0, 0).unwrap();
        let b = generate_pair(&d, "loguniform", 2.0, 7).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.v, b.v);
        assert_ne!(a.w, a.v);
        assert!(a.w.density().iter().all(|&x| (0.1..=10.0).contains(&x)));
        let e1 = generate_set(&d, "random(density=0.5, seed=1)", 0).unwrap();
        let e2 = generate_set(&d, "random(density=0.5)", 1).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn box_and_step() {
        let d = GridDomain::unit(1, 2).unwrap();
        let e = generate_set(&d, "box(lo=0.5, hi=0.75)", 0).unwrap();
        assert_eq!(e.iter().collect::<Vec<_>>(), vec![2]);
        let pair = generate_pair(&d, "step(ratio=4)", 1.0, 0).unwrap();
        assert_eq!(pair.w.density(), &[4.0, 4.0, 1.0, 1.0]);
        assert_eq!(pair.v.density(), &[1.0, 1.0, 0.25, 0.25]);
    }

    #[test]
    fn power_and_blocks_are_positive() {
        let d = GridDomain::unit(2, 4).unwrap();
        let pair = generate_pair(&d, "power(alpha=-1, beta=2)", 1.5, 0).unwrap();
        assert!(pair.w.density().iter().all(|&x| x > 0.0 && x.is_finite()));
        let pair = generate_pair(&d, "blocks(count=2, seed=3)", 1.5, 0).unwrap();
        assert!(pair.v.density().iter().all(|&x| x >= 0.1));
        assert!(generate_set(&d, "blocks(count=2)", 5).unwrap().count() > 0);
    }

    #[test]
    fn rejects_unknown() {
        let d = GridDomain::unit(1, 2).unwrap();
        assert!(generate_pair(&d, "gauss", 1.0, 0).is_err());
        assert!(generate_pair(&d, "const(z=1)", 1.0, 0).is_err());
        assert!(generate_set(&d, "random(density=2)", 0).is_err());
        assert!(generate_set(&d, "box(lo=0:0, hi=1)", 0).is_err());
    }
}
