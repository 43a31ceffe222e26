//! Grid files: a text manifest plus one payload file per field.
//!
//! ```text
//! onesided-grid 1
//! dim 2
//! depth 5
//! extent 0 0 0
//! encoding f64le
//! fields 2
//! field w density pair.w.f64
//! field v density pair.v.f64
//! ```
//!
//! Payloads are in cell order (first coordinate fastest). Densities are one
//! decimal per line (`text`) or raw little-endian `f64` (`f64le`); sets are
//! `0`/`1` characters (`text`) or bits packed LSB first (`f64le`).

use std::fs;
use std::path::{Path, PathBuf};

use crate::dyadic::DyadicCube;
use crate::error::{Error, Result};
use crate::grid::{CellSet, GridDomain, WeightField, WeightPair};

const MAGIC: &str = "onesided-grid 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Text,
    F64le,
}

impl std::str::FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Encoding::Text),
            "f64le" | "binary" => Ok(Encoding::F64le),
            _ => Err(Error::invalid(format!("unknown encoding '{s}' (expected text or f64le)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Density(Vec<f64>),
    Set(Vec<bool>),
}

impl Payload {
    fn kind(&self) -> &'static str {
        match self {
            Payload::Density(_) => "density",
            Payload::Set(_) => "set",
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::Density(v) => v.len(),
            Payload::Set(v) => v.len(),
        }
    }

    fn extension(&self, enc: Encoding) -> &'static str {
        match (self, enc) {
            (_, Encoding::Text) => "txt",
            (Payload::Density(_), Encoding::F64le) => "f64",
            (Payload::Set(_), Encoding::F64le) => "bits",
        }
    }
}

/// Serializes one payload.
pub fn encode_payload(payload: &Payload, enc: Encoding, row: usize) -> Vec<u8> {
    match (payload, enc) {
        (Payload::Density(v), Encoding::Text) => v.iter().map(|x| format!("{x:?}\n")).collect::<String>().into_bytes(),
        (Payload::Density(v), Encoding::F64le) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        (Payload::Set(v), Encoding::Text) => {
            let mut s = String::with_capacity(v.len() + v.len() / row.max(1) + 1);
            for (k, &b) in v.iter().enumerate() {
                s.push(if b { '1' } else { '0' });
                if (k + 1) % row.max(1) == 0 {
                    s.push('\n');
                }
            }
            s.into_bytes()
        }
        (Payload::Set(v), Encoding::F64le) => {
            let mut out = vec![0u8; v.len().div_ceil(8)];
            for (k, &b) in v.iter().enumerate() {
                if b {
                    out[k / 8] |= 1 << (k % 8);
                }
            }
            out
        }
    }
}

/// Parses one payload of `n` entries.
pub fn decode_payload(bytes: &[u8], kind: &str, enc: Encoding, n: usize) -> std::result::Result<Payload, String> {
    match (kind, enc) {
        ("density", Encoding::Text) => {
            let text = std::str::from_utf8(bytes).map_err(|_| "payload is not UTF-8".to_string())?;
            let v = text
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| format!("bad number '{t}'")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            check_len(v.len(), n)?;
            Ok(Payload::Density(v))
        }
        ("density", Encoding::F64le) => {
            if bytes.len() != 8 * n {
                return Err(format!("expected {} bytes, found {}", 8 * n, bytes.len()));
            }
            Ok(Payload::Density(
                bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect(),
            ))
        }
        ("set", Encoding::Text) => {
            let v = bytes
                .iter()
                .filter(|b| !b.is_ascii_whitespace())
                .map(|&b| match b {
                    b'0' => Ok(false),
                    b'1' => Ok(true),
                    _ => Err(format!("bad set character '{}'", b as char)),
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            check_len(v.len(), n)?;
            Ok(Payload::Set(v))
        }
        ("set", Encoding::F64le) => {
            if bytes.len() != n.div_ceil(8) {
                return Err(format!("expected {} bytes, found {}", n.div_ceil(8), bytes.len()));
            }
            Ok(Payload::Set((0..n).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect()))
        }
        _ => Err(format!("unknown field kind '{kind}'")),
    }
}

fn check_len(found: usize, n: usize) -> std::result::Result<(), String> {
    if found == n {
        Ok(())
    } else {
        Err(format!("expected {n} values, found {found}"))
    }
}

/// A domain with named fields.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFile {
    pub domain: GridDomain,
    pub fields: Vec<(String, Payload)>,
}

impl GridFile {
    pub fn new(domain: GridDomain) -> Self {
        GridFile { domain, fields: Vec::new() }
    }

    pub fn with_density(mut self, name: &str, field: &WeightField) -> Self {
        self.fields.push((name.to_string(), Payload::Density(field.density().to_vec())));
        self
    }

    pub fn with_set(mut self, name: &str, set: &CellSet) -> Self {
        self.fields.push((name.to_string(), Payload::Set(set.mask().to_vec())));
        self
    }

    pub fn field(&self, name: &str) -> Option<&Payload> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn density(&self, name: &str) -> Option<Result<WeightField>> {
        match self.field(name)? {
            Payload::Density(v) => Some(WeightField::new(&self.domain, v.clone())),
            Payload::Set(_) => None,
        }
    }

    /// The field named `name`, or the first set field.
    pub fn set(&self, name: &str) -> Option<Result<CellSet>> {
        let payload = self
            .field(name)
            .filter(|p| matches!(p, Payload::Set(_)))
            .or_else(|| self.fields.iter().map(|(_, p)| p).find(|p| matches!(p, Payload::Set(_))))?;
        match payload {
            Payload::Set(m) => Some(CellSet::from_mask(&self.domain, m.clone())),
            Payload::Density(_) => None,
        }
    }

    /// Fields `w` and `v` as a weight pair.
    pub fn pair(&self, p: f64, path: &Path) -> Result<WeightPair> {
        let missing = |n: &str| Error::Format {
            path: path.to_path_buf(),
            message: format!("no density field '{n}'"),
        };
        let w = self.density("w").ok_or_else(|| missing("w"))??;
        let v = self.density("v").ok_or_else(|| missing("v"))??;
        WeightPair::new(w, v, p)
    }

    fn payload_path(manifest: &Path, name: &str, ext: &str) -> PathBuf {
        let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("grid");
        manifest.with_file_name(format!("{stem}.{name}.{ext}"))
    }

    /// Writes the manifest at `path` and the payloads next to it.
    pub fn write(&self, path: &Path, enc: Encoding) -> Result<()> {
        let d = &self.domain;
        let ext = d.extent();
        let anchor = ext.anchor().expect("extents are grid-dyadic");
        let mut m = format!("{MAGIC}\ndim {}\ndepth {}\nextent {}", d.dim(), d.depth(), ext.level());
        for a in anchor {
            m.push_str(&format!(" {a}"));
        }
        let enc_name = match enc {
            Encoding::Text => "text",
            Encoding::F64le => "f64le",
        };
        m.push_str(&format!("\nencoding {enc_name}\nfields {}\n", self.fields.len()));
        for (name, payload) in &self.fields {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("field name '{name}' must be a nonempty word")));
            }
            let file = Self::payload_path(path, name, payload.extension(enc));
            let bytes = encode_payload(payload, enc, d.side_cells());
            fs::write(&file, bytes).map_err(|source| Error::Io { path: file.clone(), source })?;
            let rel = file.file_name().and_then(|s| s.to_str()).expect("utf-8 file name");
            m.push_str(&format!("field {name} {} {rel}\n", payload.kind()));
        }
        fs::write(path, m).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let fail = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some(MAGIC) {
            return Err(fail(format!("missing '{MAGIC}' header")));
        }
        let (mut dim, mut depth, mut extent, mut enc, mut count) = (None, None, None, None, None);
        let mut entries = Vec::new();
        for line in lines {
            let words: Vec<&str> = line.split_whitespace().collect();
            let num = |w: &str| w.parse::<i64>().map_err(|_| fail(format!("bad number '{w}' in '{line}'")));
            match words.as_slice() {
                ["dim", v] => dim = Some(num(v)? as usize),
                ["depth", v] => depth = Some(num(v)? as i32),
                ["extent", level, anchor @ ..] => extent = Some((num(level)? as i32, anchor.iter().map(|a| num(a)).collect::<Result<Vec<_>>>()?)),
                ["encoding", e] => enc = Some(e.parse::<Encoding>().map_err(|e| fail(e.to_string()))?),
                ["fields", n] => count = Some(num(n)? as usize),
                ["field", name, kind, file] => entries.push((name.to_string(), kind.to_string(), file.to_string())),
                _ => return Err(fail(format!("unrecognized line '{line}'"))),
            }
        }
        let dim = dim.ok_or_else(|| fail("missing 'dim'".into()))?;
        let depth = depth.ok_or_else(|| fail("missing 'depth'".into()))?;
        let enc = enc.ok_or_else(|| fail("missing 'encoding'".into()))?;
        let domain = match extent {
            None => GridDomain::new(dim, depth, &DyadicCube::grid(0, &vec![0; dim]))?,
            Some((level, anchor)) => {
                if anchor.len() != dim {
                    return Err(fail(format!("extent anchor has {} coordinates, dim is {dim}", anchor.len())));
                }
                GridDomain::new(dim, depth, &DyadicCube::grid(level, &anchor))?
            }
        };
        if count.is_some_and(|c| c != entries.len()) {
            return Err(fail(format!("'fields' says {} but {} are listed", count.unwrap_or(0), entries.len())));
        }
        let mut fields = Vec::new();
        for (name, kind, file) in entries {
            let fp = path.with_file_name(&file);
            let bytes = fs::read(&fp).map_err(|source| Error::Io { path: fp.clone(), source })?;
            let payload = decode_payload(&bytes, &kind, enc, domain.num_cells()).map_err(|message| Error::Format { path: fp, message })?;
            if let Payload::Density(v) = &payload {
                if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                    return Err(fail(format!("field '{name}' has invalid density {x}")));
                }
            }
            debug_assert_eq!(payload.len(), domain.num_cells());
            fields.push((name, payload));
        }
        Ok(GridFile { domain, fields })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(d: &GridDomain) -> GridFile {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = WeightField::from_fn(d, |_| rng.random::<f64>() * 1e3).unwrap();
        let v = WeightField::from_fn(d, |_| rng.random::<f64>() / 3.0).unwrap();
        let e = CellSet::from_predicate(d, |_| rng.random_bool(0.3));
        GridFile::new(*d).with_density("w", &w).with_density("v", &v).with_set("E", &e)
    }

    #[test]
    fn round_trip_both_encodings() {
        let dir = tempfile::tempdir().unwrap();
        for d in [GridDomain::unit(2, 3).unwrap(), GridDomain::new(1, 4, &DyadicCube::grid(1, &[1])).unwrap()] {
            let g = sample(&d);
            for enc in [Encoding::Text, Encoding::F64le] {
                let path = dir.path().join("inst.grid");
                g.write(&path, enc).unwrap();
                let back = GridFile::read(&path).unwrap();
                assert_eq!(back, g);
                let bits = |f: &GridFile| match f.field("w").unwrap() {
                    Payload::Density(v) => v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                    _ => unreachable!(),
                };
                assert_eq!(bits(&back), bits(&g));
                assert_eq!(back.pair(2.0, &path).unwrap().v, g.pair(2.0, &path).unwrap().v);
                assert_eq!(back.set("E").unwrap().unwrap().count(), g.set("x").unwrap().unwrap().count());
            }
        }
    }

    #[test]
    fn binary_bytes_are_stable() {
        let d = GridDomain::unit(1, 3).unwrap();
        let p = Payload::Set(vec![true, false, false, true, true, false, false, false]);
        assert_eq!(encode_payload(&p, Encoding::F64le, 8), vec![0b0001_1001]);
        assert_eq!(decode_payload(&[0b0001_1001], "set", Encoding::F64le, 8).unwrap(), p);
        let q = Payload::Density(vec![0.1; d.num_cells()]);
        let bytes = encode_payload(&q, Encoding::F64le, 8);
        assert_eq!(bytes.len(), 64);
        assert_eq!(&bytes[..8], &0.1f64.to_le_bytes());
    }

    #[test]
    fn malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.grid");
        assert!(matches!(GridFile::read(&path), Err(Error::Io { .. })));
        fs::write(&path, "nonsense\n").unwrap();
        assert!(matches!(GridFile::read(&path), Err(Error::Format { .. })));
        fs::write(&path, format!("{MAGIC}\ndim 1\ndepth 2\nencoding text\nfield w density bad.w.txt\n")).unwrap();
        assert!(matches!(GridFile::read(&path), Err(Error::Io { .. })));
        fs::write(dir.path().join("bad.w.txt"), "1\n2\n3\n").unwrap();
        assert!(matches!(GridFile::read(&path), Err(Error::Format { .. })));
        fs::write(dir.path().join("bad.w.txt"), "1\n2\n3\n-4\n").unwrap();
        assert!(matches!(GridFile::read(&path), Err(Error::Format { .. })));
        fs::write(dir.path().join("bad.w.txt"), "1\n2\n3\n4\n").unwrap();
        let g = GridFile::read(&path).unwrap();
        assert!(g.pair(1.0, &path).is_err());
        assert!(decode_payload(b"012", "set", Encoding::Text, 3).is_err());
    }
}
