// SPDX-License-Identifier: Apache-2.0

//! File formats and dataset plumbing.
//!
//! Features are read from CSV (header `f_1,...,f_P`) or from the `GXF1`
//! binary layout: magic, little-endian `u32` rows, `u32` columns, then
//! row-major little-endian `f32` values. Labels come from a CSV with
//! columns `index,label,role`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"GXF1";

/// Formats `x` like C's `%.{digits}g`.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes a file through a temporary sibling and renames it into place, so
/// a failed writer never leaves a partial file behind.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(&dir)?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        write(&mut out)?;
        out.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(FEATURE_MAGIC) {
        parse_features_binary(path, &bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            location: format!("byte {}", e.utf8_error().valid_up_to()),
            message: "not UTF-8 and not a GXF1 binary file".into(),
        })?;
        parse_features_csv(path, &text)
    }
}

pub fn parse_features_csv(path: &Path, text: &str) -> Result<FeatureMatrix> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::EmptyDataset)?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    for (c, name) in columns.iter().enumerate() {
        if *name != format!("f_{}", c + 1) {
            return Err(parse_err(1, format!("expected header column f_{}, found {name:?}", c + 1)));
        }
    }
    let dim = columns.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim {
            return Err(parse_err(idx + 1, format!("expected {dim} fields, found {}", fields.len())));
        }
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(idx + 1, format!("column {}: cannot parse {field:?}", c + 1)))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry {
                    path: path.to_path_buf(),
                    location: format!("line {}, column {}", idx + 1, c + 1),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    FeatureMatrix::new(rows, dim, data)
}

pub fn parse_features_binary(path: &Path, bytes: &[u8]) -> Result<FeatureMatrix> {
    let parse_err = |offset: usize, message: &str| Error::Parse {
        path: path.to_path_buf(),
        location: format!("byte {offset}"),
        message: message.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(parse_err(0, "missing GXF1 header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    let expected = 12 + rows * dim * 4;
    if bytes.len() != expected {
        return Err(parse_err(
            bytes.len().min(expected),
            &format!("expected {expected} bytes for {rows}x{dim}, found {}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(rows * dim);
    for (idx, chunk) in bytes[12..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFiniteEntry {
                path: path.to_path_buf(),
                location: format!("byte {}", 12 + 4 * idx),
            });
        }
        data.push(v as f64);
    }
    FeatureMatrix::new(rows, dim, data)
}

pub fn write_features_csv<W: Write + ?Sized>(features: &FeatureMatrix, out: &mut W) -> Result<()> {
    let header: Vec<String> = (1..=features.dim()).map(|c| format!("f_{c}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..features.rows() {
        let row: Vec<String> = features.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_features_binary<W: Write + ?Sized>(features: &FeatureMatrix, out: &mut W) -> Result<()> {
    out.write_all(FEATURE_MAGIC)?;
    out.write_all(&(features.rows() as u32).to_le_bytes())?;
    out.write_all(&(features.dim() as u32).to_le_bytes())?;
    for v in features.as_slice() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Labelled,
    Unlabelled,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Labelled => "labelled",
            Role::Unlabelled => "unlabelled",
            Role::Test => "test",
        }
    }
}

/// Per-sample ground truth (when known) and role assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub labels: Vec<Option<usize>>,
    pub roles: Vec<Role>,
}

impl LabelFile {
    pub fn labelled_mask(&self) -> Vec<bool> {
        self.roles.iter().map(|r| *r == Role::Labelled).collect()
    }

    pub fn test_mask(&self) -> Vec<bool> {
        self.roles.iter().map(|r| *r == Role::Test).collect()
    }

    /// Number of classes implied by the largest label present.
    pub fn class_count(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |m| m + 1)
    }
}

pub fn read_labels(path: &Path, n: usize) -> Result<LabelFile> {
    let text = fs::read_to_string(path)?;
    parse_labels(path, &text, n)
}

/// Parses `index,label,role` rows; indices not listed default to unlabelled
/// with unknown truth. A leading header row starting with `index` is skipped.
pub fn parse_labels(path: &Path, text: &str, n: usize) -> Result<LabelFile> {
    let mut labels = vec![None; n];
    let mut roles = vec![Role::Unlabelled; n];
    let mut seen = vec![false; n];
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with("index")) {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            location: format!("line {}", idx + 1),
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad index {:?}", fields[0])))?;
        if index >= n {
            return Err(Error::IndexOutOfRange { index, n });
        }
        if std::mem::replace(&mut seen[index], true) {
            return Err(Error::DuplicateIndex(index));
        }
        let label = if fields[1].is_empty() {
            None
        } else {
            Some(
                fields[1]
                    .parse::<usize>()
                    .map_err(|_| parse_err(format!("bad label {:?}", fields[1])))?,
            )
        };
        let role = match fields[2] {
            "labelled" => Role::Labelled,
            "unlabelled" => Role::Unlabelled,
            "test" => Role::Test,
            other => return Err(Error::UnknownRole(other.to_string())),
        };
        if role == Role::Labelled && label.is_none() {
            return Err(parse_err("labelled row without a label".into()));
        }
        labels[index] = label;
        roles[index] = role;
    }
    Ok(LabelFile { labels, roles })
}

pub fn write_labels<W: Write + ?Sized>(file: &LabelFile, out: &mut W) -> Result<()> {
    writeln!(out, "index,label,role")?;
    for (i, (label, role)) in file.labels.iter().zip(&file.roles).enumerate() {
        let label = label.map(|l| l.to_string()).unwrap_or_default();
        writeln!(out, "{i},{label},{}", role.as_str())?;
    }
    Ok(())
}

/// Features plus optional truth and role masks.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub features: FeatureMatrix,
    pub labels: LabelFile,
}

impl DatasetBundle {
    pub fn load(features: &Path, labels: &Path) -> Result<Self> {
        let features = read_features(features)?;
        let labels = read_labels(labels, features.rows())?;
        Ok(Self { features, labels })
    }
}

/// Parameters of the Gaussian-blob benchmark generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub counts: Vec<usize>,
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
    /// Fraction of each class marked `labelled` in the emitted label file.
    pub label_fraction: f64,
    /// Fraction of each class marked `test`.
    pub test_fraction: f64,
}

/// Isotropic Gaussian blobs. Class `c` is centred at `e_c / sqrt(2)`, so
/// every pair of means is exactly one unit apart. Samples are shuffled and
/// roles are assigned by stratified sampling; all truth labels are kept.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(FeatureMatrix, LabelFile)> {
    let classes = spec.counts.len();
    if classes == 0 || spec.counts.contains(&0) {
        return Err(Error::InvalidConfig("every cluster needs at least one sample".into()));
    }
    if spec.dim < classes {
        return Err(Error::InvalidConfig(format!(
            "dimension {} is smaller than the cluster count {classes}",
            spec.dim
        )));
    }
    if !(spec.spread >= 0.0 && spec.spread.is_finite()) {
        return Err(Error::InvalidConfig("spread must be a finite non-negative number".into()));
    }
    if !(0.0..=1.0).contains(&spec.label_fraction)
        || !(0.0..=1.0).contains(&spec.test_fraction)
        || spec.label_fraction + spec.test_fraction > 1.0
    {
        return Err(Error::InvalidConfig("label and test fractions must lie in [0,1] and sum to at most 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut truth: Vec<usize> = spec
        .counts
        .iter()
        .enumerate()
        .flat_map(|(c, &count)| std::iter::repeat_n(c, count))
        .collect();
    truth.shuffle(&mut rng);

    let centre = std::f64::consts::FRAC_1_SQRT_2;
    let mut data = Vec::with_capacity(truth.len() * spec.dim);
    for &c in &truth {
        for d in 0..spec.dim {
            let mean = if d == c { centre } else { 0.0 };
            data.push(mean + spec.spread * noise.sample(&mut rng));
        }
    }
    let features = FeatureMatrix::new(truth.len(), spec.dim, data)?;

    let mut roles = vec![Role::Unlabelled; truth.len()];
    for c in 0..classes {
        let mut members: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == c).collect();
        members.shuffle(&mut rng);
        let n_test = (spec.test_fraction * members.len() as f64).round() as usize;
        let n_lab = (spec.label_fraction * members.len() as f64).round() as usize;
        let n_lab = if spec.label_fraction > 0.0 { n_lab.max(1) } else { 0 };
        for (rank, &i) in members.iter().enumerate() {
            if rank < n_test {
                roles[i] = Role::Test;
            } else if rank < n_test + n_lab {
                roles[i] = Role::Labelled;
            }
        }
    }
    Ok((
        features,
        LabelFile {
            labels: truth.into_iter().map(Some).collect(),
            roles,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_formatting_matches_printf_g() {
        assert_eq!(fmt_sig(1.0, 9), "1");
        assert_eq!(fmt_sig(0.125, 9), "0.125");
        assert_eq!(fmt_sig(1.0 / 3.0, 9), "0.333333333");
        assert_eq!(fmt_sig(-2.0 / 3.0, 9), "-0.666666667");
        assert_eq!(fmt_sig(123456789.4, 9), "123456789");
        assert_eq!(fmt_sig(1234567894.0, 9), "1.23456789e9");
        assert_eq!(fmt_sig(1.5e-7, 9), "1.5e-7");
        assert_eq!(fmt_sig(0.0001, 9), "0.0001");
        assert_eq!(fmt_sig(9.9999999999, 9), "10");
    }

    #[test]
    fn csv_features_parse() {
        let m = parse_features_csv(Path::new("x.csv"), "f_1,f_2\n1.0,2.0\n3.0,4.0").unwrap();
        assert_eq!((m.rows(), m.dim()), (2, 2));
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let err = parse_features_csv(Path::new("x.csv"), "f_1,f_2\n1.0,2.0\n3.0,oops\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_features_csv(Path::new("x.csv"), "f_1\n1.0\nNaN\n").unwrap_err();
        assert!(matches!(err, Error::NonFiniteEntry { .. }));
        assert!(matches!(
            parse_features_csv(Path::new("x.csv"), "f_1,f_2\n"),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn binary_with_zero_rows_is_empty() {
        let mut bytes = FEATURE_MAGIC.to_vec();
        bytes.extend(0u32.to_le_bytes());
        bytes.extend(3u32.to_le_bytes());
        assert!(matches!(
            parse_features_binary(Path::new("x.bin"), &bytes),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn binary_truncation_reports_offset() {
        let m = FeatureMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut bytes = Vec::new();
        write_features_binary(&m, &mut bytes).unwrap();
        bytes.pop();
        let err = parse_features_binary(Path::new("x.bin"), &bytes).unwrap_err();
        assert!(err.to_string().contains("byte"), "{err}");
    }

    #[test]
    fn label_rows_parse() {
        let f = parse_labels(Path::new("l.csv"), "0,2,labelled\n", 3).unwrap();
        assert_eq!(f.labels, vec![Some(2), None, None]);
        assert_eq!(f.roles, vec![Role::Labelled, Role::Unlabelled, Role::Unlabelled]);
        assert_eq!(f.class_count(), 3);
    }

    #[test]
    fn label_errors() {
        let p = Path::new("l.csv");
        assert!(matches!(
            parse_labels(p, "index,label,role\n1,0,test\n1,0,labelled\n", 3),
            Err(Error::DuplicateIndex(1))
        ));
        assert!(matches!(parse_labels(p, "5,0,test\n", 3), Err(Error::IndexOutOfRange { index: 5, n: 3 })));
        assert!(matches!(parse_labels(p, "0,0,train\n", 3), Err(Error::UnknownRole(_))));
    }

    #[test]
    fn synthetic_histogram_and_determinism() {
        let spec = SyntheticSpec {
            counts: vec![500, 300, 50],
            dim: 8,
            spread: 0.3,
            seed: 7,
            label_fraction: 0.1,
            test_fraction: 0.2,
        };
        let (f, l) = gen_synthetic(&spec).unwrap();
        let mut hist = [0usize; 3];
        for c in l.labels.iter().flatten() {
            hist[*c] += 1;
        }
        assert_eq!(hist, [500, 300, 50]);
        assert_eq!(f.rows(), 850);
        let (f2, l2) = gen_synthetic(&spec).unwrap();
        assert_eq!(f, f2);
        assert_eq!(l, l2);
        let labelled = l.roles.iter().filter(|r| **r == Role::Labelled).count();
        assert_eq!(labelled, 50 + 30 + 5);
    }
}
