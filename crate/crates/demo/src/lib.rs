//! Browser bindings: draw a set on a square grid, look at its maximal functions,
//! check the weak-type bound on it and compute class constants.

use onesided::classes::{restricted_constant, Flavor};
use onesided::generate::generate_pair;
use onesided::grid::{CellSet, GridDomain, WeightField};
use onesided::harness::{verify_2d_weak_type, verify_dyadic_weak_type};
use onesided::maximal::{self, Operator};
use onesided::{Dyadic, Error};
use wasm_bindgen::prelude::*;

fn js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn drawn_set(depth: u32, cells: &[u32]) -> Result<CellSet, Error> {
    let d = GridDomain::unit(2, depth)?;
    CellSet::from_cells(&d, cells.iter().map(|&c| c as usize))
}

fn operator(name: &str, xi: f64) -> Result<Operator, Error> {
    let xi = (xi > 0.0).then(|| Dyadic::from_f64(xi)).transpose()?;
    Ok(match name {
        "dyadic-plus" => Operator::DyadicPlus,
        "dyadic-minus" => Operator::DyadicMinus,
        "anchored" => Operator::Anchored,
        "subsquare-1" => Operator::Subsquare { i: 1, xi },
        "subsquare-2" => Operator::Subsquare { i: 2, xi },
        "subsquare-3" => Operator::Subsquare { i: 3, xi },
        _ => return Err(Error::InvalidArgument(format!("unknown operator '{name}'"))),
    })
}

/// Maximal function of the indicator of `cells` on a `2^depth`-square grid, row-major.
/// `xi <= 0` means no lower cutoff for the subsquare operators.
#[wasm_bindgen]
pub fn maximal_2d(depth: u32, cells: Vec<u32>, op: &str, xi: f64) -> Result<Vec<f64>, JsValue> {
    let e = drawn_set(depth, &cells).map_err(js)?;
    let f = WeightField::indicator(&e);
    let m = match operator(op, xi).map_err(js)? {
        Operator::DyadicPlus => maximal::dyadic_plus_maximal(&f),
        Operator::DyadicMinus => maximal::dyadic_minus_maximal(&f),
        Operator::Anchored => maximal::onesided_maximal_2d(&f, None).map_err(js)?,
        Operator::Subsquare { i, xi } => maximal::subsquare_maximal_2d(&f, i, xi).map_err(js)?,
    };
    Ok(m.values().to_vec())
}

/// Weak-type check of the drawn set against a generated pair, as a JSON report.
#[wasm_bindgen]
pub fn weak_type(depth: u32, cells: Vec<u32>, pair_gen: &str, p: f64, seed: u64, t: f64, planar: bool) -> Result<String, JsValue> {
    let e = drawn_set(depth, &cells).map_err(js)?;
    let pair = generate_pair(e.domain(), pair_gen, p, seed).map_err(js)?;
    let r = if planar { verify_2d_weak_type(&pair, &e, &[t]) } else { verify_dyadic_weak_type(&pair, &e, &[t]) }.map_err(js)?;
    serde_json::to_string(&r).map_err(js)
}

/// Restricted class constant of a generated pair with its witness, as JSON.
#[wasm_bindgen]
pub fn class_constant(depth: u32, pair_gen: &str, p: f64, seed: u64, anchored: bool) -> Result<String, JsValue> {
    let d = GridDomain::unit(2, depth).map_err(js)?;
    let pair = generate_pair(&d, pair_gen, p, seed).map_err(js)?;
    let flavor = if anchored { Flavor::Anchored } else { Flavor::Dyadic };
    serde_json::to_string(&restricted_constant(&pair, flavor)).map_err(js)
}
