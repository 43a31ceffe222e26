//! Run configuration, the command engine behind the CLI, and the report schema.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classes::{a1_pointwise_check, muckenhoupt_constant, restricted_constant, ClassConstant, Flavor};
use crate::dyadic::{Dyadic, DyadicCube};
use crate::error::{Error, Result};
use crate::generate::{generate_pair, generate_set};
use crate::grid::{CellSet, GridDomain, WeightField, WeightPair};
use crate::harness::{dyadic_t_sweep, sharpness_search, verify_2d_weak_type, verify_dyadic_weak_type, verify_necessity, VerifyReport};
use crate::io::{Encoding, GridFile};
use crate::maximal::{self, level_set, LevelMode, MaximalResult, Operator};

pub const SCHEMA: &str = "onesided-report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Constant,
    VerifyDyadic,
    VerifyPlanar,
    VerifyNecessity,
    VerifySharpness,
    Maximal,
}

/// Where a pair or a set comes from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    File(PathBuf),
    Gen(String),
}

impl Source {
    fn label(&self) -> String {
        match self {
            Source::File(p) => format!("file:{}", p.display()),
            Source::Gen(g) => format!("gen:{g}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub level: i32,
    pub anchor: Vec<i64>,
}

/// Everything a run depends on; embedded verbatim in its report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub dim: Option<usize>,
    pub depth: Option<i32>,
    pub extent: Option<Extent>,
    pub pair: Option<Source>,
    pub set: Option<Source>,
    pub p: f64,
    pub t: Option<Vec<f64>>,
    pub flavor: Flavor,
    pub seed: u64,
    /// Maximal command: `dyadic-plus`, `dyadic-minus`, `anchored`, `subsquare-1`..`subsquare-3`.
    pub operator: Option<String>,
    /// Truncation size for the subsquare operator.
    pub xi: Option<f64>,
    pub oracle: bool,
    pub budget: usize,
    pub unweighted: bool,
    pub strict: bool,
    pub timing: bool,
    pub encoding: Encoding,
    pub dump: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            dim: None,
            depth: None,
            extent: None,
            pair: None,
            set: None,
            p: 1.0,
            t: None,
            flavor: Flavor::Dyadic,
            seed: 0,
            operator: None,
            xi: None,
            oracle: false,
            budget: 100,
            unweighted: false,
            strict: false,
            timing: false,
            encoding: Encoding::F64le,
            dump: None,
            out: None,
            csv: None,
        }
    }

    /// Checks everything that does not need file contents.
    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::invalid(format!("p = {} must be finite and >= 1", self.p)));
        }
        if let Some(t) = self.t.iter().flatten().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::invalid(format!("threshold t = {t} must be positive")));
        }
        if self.dim.is_some_and(|d| !(1..=3).contains(&d)) {
            return Err(Error::invalid("dim must be 1, 2 or 3"));
        }
        let needs_pair = matches!(
            self.command,
            Command::Constant | Command::VerifyDyadic | Command::VerifyPlanar | Command::VerifyNecessity
        );
        if needs_pair && self.pair.is_none() {
            return Err(Error::invalid("a pair source (--pair FILE or --gen NAME) is required"));
        }
        if matches!(self.command, Command::VerifyDyadic | Command::VerifyPlanar) && self.set.is_none() {
            return Err(Error::invalid("a set source (--set FILE or --gen-set NAME) is required"));
        }
        if self.command == Command::Maximal && self.set.is_none() && self.pair.is_none() {
            return Err(Error::invalid("maximal needs a set or a pair source"));
        }
        if self.command == Command::VerifySharpness && self.budget == 0 {
            return Err(Error::invalid("budget must be at least 1"));
        }
        if self.command == Command::VerifyPlanar && self.dim.is_some_and(|d| d != 2) {
            return Err(Error::NotPlanar(self.dim.unwrap_or(0)));
        }
        if let Some(op) = &self.operator {
            parse_operator(op, self.xi)?;
        }
        Ok(())
    }

    fn flag_domain(&self) -> Result<Option<GridDomain>> {
        match (self.dim, self.depth) {
            (Some(dim), Some(depth)) => {
                let ext = match &self.extent {
                    Some(e) => {
                        if e.anchor.len() != dim {
                            return Err(Error::DimensionMismatch {
                                expected: dim,
                                found: e.anchor.len(),
                            });
                        }
                        DyadicCube::grid(e.level, &e.anchor)
                    }
                    None => DyadicCube::grid(0, &vec![0; dim]),
                };
                Ok(Some(GridDomain::new(dim, depth, &ext)?))
            }
            (None, None) if self.extent.is_none() => Ok(None),
            _ => Err(Error::invalid("--dim and --depth must be given together")),
        }
    }
}

fn parse_operator(op: &str, xi: Option<f64>) -> Result<Operator> {
    let xi = xi.map(Dyadic::from_f64).transpose()?;
    Ok(match op {
        "dyadic-plus" => Operator::DyadicPlus,
        "dyadic-minus" => Operator::DyadicMinus,
        "anchored" => Operator::Anchored,
        "subsquare-1" => Operator::Subsquare { i: 1, xi },
        "subsquare-2" => Operator::Subsquare { i: 2, xi },
        "subsquare-3" => Operator::Subsquare { i: 3, xi },
        _ => return Err(Error::invalid(format!("unknown operator '{op}'"))),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelCount {
    pub t: f64,
    pub cells: usize,
    pub measure: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaximalSummary {
    pub operator: Operator,
    pub oracle: bool,
    pub cells: usize,
    pub max: f64,
    pub levels: Vec<LevelCount>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "data")]
pub enum Results {
    Constants(Vec<ClassConstant>),
    Verify(Box<VerifyReport>),
    Maximal(MaximalSummary),
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub passed: bool,
    /// 0 pass, 1 assertion failure, 3 certificate finding (input errors never produce a report).
    pub exit_code: i32,
    pub findings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub config: RunConfig,
    pub results: Results,
    pub summary: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
    /// Maximal values, kept for the optional dump.
    #[serde(skip)]
    pub values: Option<MaximalResult>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `t` versus `lhs`/`rhs` for the verify commands.
    pub fn csv(&self) -> Option<String> {
        let Results::Verify(r) = &self.results else {
            return None;
        };
        let mut s = String::from("t,i,lhs,rhs,ratio,passed\n");
        for l in &r.dyadic {
            s.push_str(&format!("{},,{},{},{},{}\n", l.t, l.lhs, l.rhs, l.ratio, l.passed));
        }
        for l in &r.planar {
            s.push_str(&format!("{},{},{},{},{},{}\n", l.t, l.i, l.lhs, l.rhs, l.ratio, l.passed));
        }
        Some(s)
    }

    /// Writes the maximal values in the grid format.
    pub fn write_dump(&self, path: &Path, enc: Encoding) -> Result<()> {
        let values = self.values.as_ref().ok_or_else(|| Error::invalid("only the maximal command has values to dump"))?;
        GridFile::new(*values.domain()).with_density("values", &values.to_field()).write(path, enc)
    }
}

fn load_pair(source: &Source, domain: Option<GridDomain>, p: f64, seed: u64) -> Result<WeightPair> {
    match source {
        Source::File(path) => {
            let g = GridFile::read(path)?;
            if domain.is_some_and(|d| d != g.domain) {
                return Err(Error::Format {
                    path: path.clone(),
                    message: "grid does not match --dim/--depth/--extent".into(),
                });
            }
            g.pair(p, path)
        }
        Source::Gen(spec) => {
            let d = domain.ok_or_else(|| Error::invalid("generators need --dim and --depth"))?;
            generate_pair(&d, spec, p, seed)
        }
    }
}

fn load_set(source: &Source, domain: Option<GridDomain>, seed: u64) -> Result<CellSet> {
    match source {
        Source::File(path) => {
            let g = GridFile::read(path)?;
            if domain.is_some_and(|d| d != g.domain) {
                return Err(Error::Format {
                    path: path.clone(),
                    message: "grid does not match the pair's domain".into(),
                });
            }
            g.set("E").ok_or_else(|| Error::Format {
                path: path.clone(),
                message: "no set field".into(),
            })?
        }
        Source::Gen(spec) => {
            let d = domain.ok_or_else(|| Error::invalid("generators need --dim and --depth"))?;
            generate_set(&d, spec, seed)
        }
    }
}

fn verify_summary(r: &VerifyReport, strict: bool) -> Summary {
    let mut findings = Vec::new();
    for l in r.dyadic.iter().filter(|l| !l.passed) {
        findings.push(format!("t = {}: lhs {} vs rhs {}", l.t, l.lhs, l.rhs));
    }
    for l in r.planar.iter().filter(|l| !l.passed) {
        let what = if l.certificate_failed { "certificate failure" } else { "bound violated" };
        findings.push(format!("t = {}, i = {}: {what}", l.t, l.i));
    }
    if let Some(n) = &r.necessity {
        for s in [&n.containment, &n.bound].into_iter().filter(|s| !s.passed) {
            findings.push(format!("{} failed", s.name));
        }
    }
    if r.vacuous {
        findings.push("class constant is infinite; bound is vacuous".into());
    }
    let exit_code = if r.certificate_failed {
        3
    } else if !r.passed || (strict && r.vacuous) {
        1
    } else {
        0
    };
    Summary {
        passed: exit_code == 0,
        exit_code,
        findings,
    }
}

/// Runs a validated configuration. Input problems are errors; failed checks are reported.
pub fn execute(config: &RunConfig) -> Result<Report> {
    config.validate()?;
    let start = Instant::now();
    let flag_domain = config.flag_domain()?;
    let pair = config.pair.as_ref().map(|s| load_pair(s, flag_domain, config.p, config.seed)).transpose()?;
    let domain = pair.as_ref().map(|p| *p.domain()).or(flag_domain);
    let set = config.set.as_ref().map(|s| load_set(s, domain, config.seed)).transpose()?;
    let domain = domain.or(set.as_ref().map(|s| *s.domain()));
    let labels = |r: &mut VerifyReport| {
        r.descriptor.pair = config.pair.as_ref().map(Source::label);
        r.descriptor.set = config.set.as_ref().map(Source::label);
        r.seed = Some(config.seed);
    };
    let mut values = None;
    let (results, summary) = match config.command {
        Command::Constant => {
            let pair = pair.expect("validated");
            let mut cs = vec![restricted_constant(&pair, config.flavor)];
            if pair.p > 1.0 {
                cs.push(muckenhoupt_constant(&pair, config.flavor)?);
            } else {
                cs.push(a1_pointwise_check(&pair, config.flavor)?);
            }
            let infinite = cs.iter().any(|c| !c.is_finite());
            let exit_code = if config.strict && infinite { 1 } else { 0 };
            let findings = if infinite { vec!["pair is not in the class".to_string()] } else { Vec::new() };
            (
                Results::Constants(cs),
                Summary {
                    passed: exit_code == 0,
                    exit_code,
                    findings,
                },
            )
        }
        Command::VerifyDyadic | Command::VerifyPlanar => {
            let (pair, set) = (pair.expect("validated"), set.expect("validated"));
            let ts = config.t.clone().unwrap_or_else(|| dyadic_t_sweep(pair.domain()));
            let mut r = if config.command == Command::VerifyDyadic {
                verify_dyadic_weak_type(&pair, &set, &ts)?
            } else {
                verify_2d_weak_type(&pair, &set, &ts)?
            };
            labels(&mut r);
            let s = verify_summary(&r, config.strict);
            (Results::Verify(Box::new(r)), s)
        }
        Command::VerifyNecessity => {
            let mut r = verify_necessity(&pair.expect("validated"), config.flavor)?;
            labels(&mut r);
            let s = verify_summary(&r, config.strict);
            (Results::Verify(Box::new(r)), s)
        }
        Command::VerifySharpness => {
            let d = domain.ok_or_else(|| Error::invalid("sharpness needs --dim and --depth"))?;
            let mut r = sharpness_search(&d, config.p, config.budget, config.seed, config.unweighted)?;
            labels(&mut r);
            let s = verify_summary(&r, config.strict);
            (Results::Verify(Box::new(r)), s)
        }
        Command::Maximal => {
            let op = parse_operator(config.operator.as_deref().unwrap_or("dyadic-plus"), config.xi)?;
            let field: WeightField = match (&set, &pair) {
                (Some(e), _) => WeightField::indicator(e),
                (None, Some(p)) => p.w.clone(),
                _ => unreachable!("validated"),
            };
            let m = run_operator(&field, op, config.oracle)?;
            let ts = config.t.clone().unwrap_or_else(|| dyadic_t_sweep(field.domain()));
            let vol = field.domain().cell_volume();
            let levels = ts
                .iter()
                .map(|&t| {
                    let s = level_set(&m, t, LevelMode::Above)?;
                    Ok(LevelCount {
                        t,
                        cells: s.count(),
                        measure: s.count() as f64 * vol,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let summary = MaximalSummary {
                operator: op,
                oracle: config.oracle,
                cells: field.domain().num_cells(),
                max: m.max(),
                levels,
            };
            values = Some(m);
            (
                Results::Maximal(summary),
                Summary {
                    passed: true,
                    exit_code: 0,
                    findings: Vec::new(),
                },
            )
        }
    };
    let report = Report {
        schema: SCHEMA,
        config: config.clone(),
        results,
        summary,
        timing_ms: config.timing.then(|| start.elapsed().as_secs_f64() * 1e3),
        values,
    };
    if let Some(path) = &config.dump {
        report.write_dump(path, config.encoding)?;
    }
    Ok(report)
}

fn run_operator(f: &WeightField, op: Operator, oracle: bool) -> Result<MaximalResult> {
    use crate::dyadic::Sign;
    match (op, oracle) {
        (Operator::DyadicPlus, false) => Ok(maximal::dyadic_plus_maximal(f)),
        (Operator::DyadicMinus, false) => Ok(maximal::dyadic_minus_maximal(f)),
        (Operator::Anchored, false) => maximal::onesided_maximal_2d(f, None),
        (Operator::Subsquare { i, xi }, false) => maximal::subsquare_maximal_2d(f, i, xi),
        (Operator::DyadicPlus, true) => Ok(maximal::oracle::dyadic_maximal(f, Sign::Plus)),
        (Operator::DyadicMinus, true) => Ok(maximal::oracle::dyadic_maximal(f, Sign::Minus)),
        (Operator::Anchored, true) => maximal::oracle::onesided_maximal_2d(f),
        (Operator::Subsquare { i, xi }, true) => maximal::oracle::subsquare_maximal_2d(f, i, xi),
    }
}

/// Reads the config embedded in a report and runs it again.
pub fn replay(report_json: &str) -> Result<Report> {
    let v: serde_json::Value = serde_json::from_str(report_json).map_err(|e| Error::invalid(format!("report is not JSON: {e}")))?;
    let config: RunConfig = serde_json::from_value(v["config"].clone()).map_err(|e| Error::invalid(format!("bad embedded config: {e}")))?;
    execute(&config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dyadic_example() -> RunConfig {
        let mut c = RunConfig::new(Command::VerifyDyadic);
        c.dim = Some(1);
        c.depth = Some(2);
        c.pair = Some(Source::Gen("unweighted".into()));
        c.set = Some(Source::Gen("box(lo=0.5, hi=0.75)".into()));
        c.t = Some(vec![0.4]);
        c
    }

    #[test]
    fn dyadic_example_passes_with_ratio() {
        let r = execute(&dyadic_example()).unwrap();
        assert_eq!(r.summary.exit_code, 0);
        let Results::Verify(v) = &r.results else { panic!() };
        assert!((v.dyadic[0].ratio - 0.025).abs() < 1e-12);
        assert!(r.csv().unwrap().lines().count() == 2);
    }

    #[test]
    fn constant_of_unweighted_pair() {
        let mut c = RunConfig::new(Command::Constant);
        c.dim = Some(2);
        c.depth = Some(3);
        c.p = 2.0;
        c.pair = Some(Source::Gen("unweighted".into()));
        let r = execute(&c).unwrap();
        let Results::Constants(cs) = &r.results else { panic!() };
        assert_eq!(cs[0].value, 1.0);
    }

    #[test]
    fn reports_are_deterministic_and_replayable() {
        let mut c = RunConfig::new(Command::Constant);
        c.dim = Some(2);
        c.depth = Some(3);
        c.p = 1.5;
        c.pair = Some(Source::Gen("loguniform(seed=7)".into()));
        let a = execute(&c).unwrap().to_json();
        let b = execute(&c).unwrap().to_json();
        assert_eq!(a, b);
        assert_eq!(replay(&a).unwrap().to_json(), a);
    }

    #[test]
    fn validation_errors() {
        let mut c = dyadic_example();
        c.command = Command::VerifyPlanar;
        assert!(execute(&c).is_err());
        let mut c = dyadic_example();
        c.p = 0.5;
        assert!(c.validate().is_err());
        let mut c = dyadic_example();
        c.pair = Some(Source::File("/nonexistent/pair.grid".into()));
        assert!(matches!(execute(&c), Err(Error::Io { .. })));
        let mut c = dyadic_example();
        c.depth = None;
        assert!(execute(&c).is_err());
        let mut c = RunConfig::new(Command::Maximal);
        c.operator = Some("bogus".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn maximal_dump_round_trip_and_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::new(Command::Maximal);
        c.dim = Some(2);
        c.depth = Some(3);
        c.set = Some(Source::Gen("random(density=0.3, seed=2)".into()));
        c.operator = Some("anchored".into());
        c.dump = Some(dir.path().join("fast.grid"));
        let fast = execute(&c).unwrap();
        c.oracle = true;
        c.dump = Some(dir.path().join("slow.grid"));
        execute(&c).unwrap();
        let a = std::fs::read(dir.path().join("fast.values.f64")).unwrap();
        let b = std::fs::read(dir.path().join("slow.values.f64")).unwrap();
        assert_eq!(a, b);
        let back = GridFile::read(&dir.path().join("fast.grid")).unwrap();
        let vals = back.density("values").unwrap().unwrap();
        assert_eq!(vals.density(), fast.values.as_ref().unwrap().values());
    }
}
