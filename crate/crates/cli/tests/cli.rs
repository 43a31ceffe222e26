use std::path::Path;
use std::process::{Command, Output};

use onesided::grid::{GridDomain, WeightField};
use onesided::io::{Encoding, GridFile, Payload};

fn onesided(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onesided"))
        .args(args)
        .current_dir(dir)
        .env("ONESIDED_THREADS", "2")
        .output()
        .unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

const EXAMPLE: &[&str] = &["verify", "dyadic", "--dim", "1", "--depth", "2", "--gen", "unweighted", "--gen-set", "box(lo=0.5, hi=0.75)", "--t", "0.4"];

#[test]
fn dyadic_example_passes_with_known_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let out = onesided(EXAMPLE, dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    let level = &r["results"]["data"]["dyadic"][0];
    assert_eq!(level["lhs"], 0.5);
    assert_eq!(level["rhs"], 20.0);
    assert_eq!(level["ratio"], 0.025);
    assert_eq!(r["summary"]["exit_code"], 0);
}

#[test]
fn constant_of_unit_pair_from_file_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = GridDomain::unit(2, 3).unwrap();
    let one = WeightField::constant(&d, 1.0).unwrap();
    GridFile::new(d).with_density("w", &one).with_density("v", &one).write(&dir.path().join("pair.grid"), Encoding::Text).unwrap();
    let out = onesided(&["constant", "--pair", "pair.grid", "--p", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    for c in r["results"]["data"].as_array().unwrap() {
        assert_eq!(c["value"], 1.0, "{c}");
    }
}

#[test]
fn missing_file_exits_2_without_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = onesided(&["constant", "--pair", "nope.grid", "--out", "r.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(!dir.path().join("r.json").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.grid"));
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.grid"), "not a grid\n").unwrap();
    for args in [
        &["constant", "--pair", "bad.grid"][..],
        &["verify", "planar", "--dim", "1", "--depth", "3", "--gen", "unweighted", "--gen-set", "full"],
        &["constant", "--dim", "2", "--depth", "2", "--gen", "nosuchgen"],
        &["constant", "--dim", "2", "--depth", "2", "--gen", "unweighted", "--p", "0.5"],
        &["verify", "dyadic", "--dim", "2", "--depth", "2", "--gen", "unweighted"],
        &["maximal", "--dim", "2", "--depth", "2", "--gen-set", "full", "--operator", "sideways"],
    ] {
        let out = onesided(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
    }
}

#[test]
fn generator_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["constant", "--dim", "2", "--depth", "4", "--gen", "loguniform(seed=7)", "--p", "1.5"];
    let a = onesided(&args, dir.path());
    let b = onesided(&args, dir.path());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn sharpness_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["verify", "sharpness", "--dim", "1", "--depth", "3", "--budget", "100", "--seed", "9"];
    let a = json(&onesided(&args, dir.path()));
    let b = json(&onesided(&args, dir.path()));
    let best = &a["results"]["data"]["sharpness"]["best_ratio"];
    assert!(best.as_f64().unwrap() > 0.0);
    assert_eq!(best, &b["results"]["data"]["sharpness"]["best_ratio"]);
    assert_eq!(a, b);
}

#[test]
fn replay_reproduces_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = EXAMPLE.to_vec();
    args.extend(["--out", "r.json", "--csv", "r.csv"]);
    assert_eq!(onesided(&args, dir.path()).status.code(), Some(0));
    let table = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(table.starts_with("t,"), "{table}");
    assert_eq!(table.lines().count(), 2);
    let out = onesided(&["replay", "r.json", "--out", "again.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(dir.path().join("r.json")).unwrap(), std::fs::read(dir.path().join("again.json")).unwrap());
}

#[test]
fn replay_flags_a_doctored_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = EXAMPLE.to_vec();
    args.extend(["--out", "r.json"]);
    onesided(&args, dir.path());
    let text = std::fs::read_to_string(dir.path().join("r.json")).unwrap();
    std::fs::write(dir.path().join("r.json"), text.replace("0.025", "0.02")).unwrap();
    assert_eq!(onesided(&["replay", "r.json"], dir.path()).status.code(), Some(1));
}

#[test]
fn strict_flags_pairs_outside_the_class() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["constant", "--dim", "1", "--depth", "2", "--gen", "const(w=1, v=0)"];
    assert_eq!(onesided(&base, dir.path()).status.code(), Some(0));
    let mut strict = base.to_vec();
    strict.push("--strict");
    let out = onesided(&strict, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["results"]["data"][0]["value"], "inf");
}

fn dump(dir: &Path, name: &str, extra: &[&str]) -> Vec<f64> {
    let mut args = vec!["maximal", "--dim", "2", "--depth", "3", "--dump", name, "--encoding", "f64le"];
    args.extend(extra);
    let out = onesided(&args, dir);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let g = GridFile::read(&dir.join(name)).unwrap();
    match g.field("values").unwrap() {
        Payload::Density(v) => v.clone(),
        other => panic!("unexpected payload {other:?}"),
    }
}

#[test]
fn empty_set_dumps_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let v = dump(dir.path(), "z.grid", &["--gen-set", "empty"]);
    assert_eq!(v.len(), 64);
    assert!(v.iter().all(|&x| x == 0.0));
}

#[test]
fn oracle_and_fast_dumps_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    for op in ["dyadic-plus", "dyadic-minus", "anchored", "subsquare-1", "subsquare-2", "subsquare-3"] {
        let set = ["--gen-set", "random(density=0.3)", "--seed", "4", "--operator", op];
        dump(dir.path(), "fast.grid", &set);
        let mut with_oracle = set.to_vec();
        with_oracle.push("--oracle");
        dump(dir.path(), "slow.grid", &with_oracle);
        assert_eq!(
            std::fs::read(dir.path().join("fast.values.f64")).unwrap(),
            std::fs::read(dir.path().join("slow.values.f64")).unwrap(),
            "{op}"
        );
    }
}

#[test]
fn dump_reingests_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let first = dump(dir.path(), "a.grid", &["--gen-set", "blocks(count=3)", "--seed", "2", "--operator", "anchored"]);
    let g = GridFile::read(&dir.path().join("a.grid")).unwrap();
    let w = g.density("values").unwrap().unwrap();
    assert!(w.density().iter().zip(&first).all(|(a, b)| a.to_bits() == b.to_bits()));
    GridFile::new(*w.domain()).with_density("w", &w).with_density("v", &w).write(&dir.path().join("b.grid"), Encoding::F64le).unwrap();
    let back = GridFile::read(&dir.path().join("b.grid")).unwrap().density("w").unwrap().unwrap();
    assert!(back.density().iter().zip(&first).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn thread_count_env_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_onesided"))
        .args(EXAMPLE)
        .env("ONESIDED_THREADS", "many")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
