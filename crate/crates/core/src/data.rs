//! Realization files, dataset bundles, splitting and preprocessing.
//!
//! # File format
//!
//! One CSV file per realization with a header row. Columns, in order:
//!
//! ```text
//! x_1, ..., x_d, t, y_f [, y_cf] [, mu0, mu1]
//! ```
//!
//! `t` is `0` or `1`. `y_cf`, `mu0` and `mu1` are optional; without the
//! noiseless means, effect metrics that need ground truth are reported as
//! unavailable. Floats are written in shortest round-trip form, so writing and
//! reading a realization is bitwise stable.
//!
//! A bundle on disk is a directory of such files, loaded in file-name order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Matrix;

/// Number of covariates in the IHDP benchmark.
pub const IHDP_COVARIATES: usize = 25;

/// One simulated outcome draw over a fixed covariate/treatment table.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub x: Arc<Matrix>,
    pub t: Arc<Vec<u8>>,
    pub y_f: Vec<f64>,
    pub y_cf: Option<Vec<f64>>,
    pub mu0: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
}

impl Realization {
    pub fn n_samples(&self) -> usize {
        self.x.rows()
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&v| v == 1).count()
    }

    /// True effect `mu1 - mu0`, when the means are known.
    pub fn true_ite(&self) -> Option<Vec<f64>> {
        let (mu0, mu1) = (self.mu0.as_ref()?, self.mu1.as_ref()?);
        Some(mu1.iter().zip(mu0).map(|(a, b)| a - b).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        let check_len = |name: &str, len: usize| {
            if len != n {
                Err(Error::contract(format!("{name} has {len} entries for {n} samples")))
            } else {
                Ok(())
            }
        };
        check_len("t", self.t.len())?;
        check_len("y_f", self.y_f.len())?;
        for (name, col) in [("y_cf", &self.y_cf), ("mu0", &self.mu0), ("mu1", &self.mu1)] {
            if let Some(v) = col {
                check_len(name, v.len())?;
            }
        }
        if self.mu0.is_some() != self.mu1.is_some() {
            return Err(Error::contract("mu0 and mu1 must be given together"));
        }
        if let Some(i) = self.t.iter().position(|&v| v > 1) {
            return Err(Error::contract(format!("treatment at row {i} is not 0 or 1")));
        }
        let treated = self.n_treated();
        if treated == 0 || treated == n {
            return Err(Error::contract(format!(
                "realization needs both arms, has {treated} treated of {n}"
            )));
        }
        if !self.x.is_finite() {
            return Err(Error::contract("covariates contain non-finite values"));
        }
        let all_finite = self
            .y_f
            .iter()
            .chain(self.y_cf.iter().flatten())
            .chain(self.mu0.iter().flatten())
            .chain(self.mu1.iter().flatten())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::contract("outcomes contain non-finite values"));
        }
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        let mut header: Vec<String> = (1..=self.x.cols()).map(|i| format!("x_{i}")).collect();
        header.push("t".into());
        header.push("y_f".into());
        if self.y_cf.is_some() {
            header.push("y_cf".into());
        }
        if self.mu0.is_some() {
            header.push("mu0".into());
            header.push("mu1".into());
        }
        header
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", self.header().join(","))?;
        let mut line = String::new();
        for i in 0..self.n_samples() {
            line.clear();
            for v in self.x.row(i) {
                line.push_str(&format!("{v},"));
            }
            line.push_str(&format!("{},{}", self.t[i], self.y_f[i]));
            for col in [&self.y_cf, &self.mu0, &self.mu1].into_iter().flatten() {
                line.push_str(&format!(",{}", col[i]));
            }
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let parse_err = |row: Option<u64>, byte: Option<u64>, message: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            byte,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| parse_err(None, None, e.to_string()))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| parse_err(Some(1), Some(0), e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let t_col = col("t").ok_or_else(|| parse_err(Some(1), Some(0), "missing column t".into()))?;
        let yf_col = col("y_f").ok_or_else(|| parse_err(Some(1), Some(0), "missing column y_f".into()))?;
        let x_cols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("x_")).collect();
        if x_cols.is_empty() {
            return Err(parse_err(Some(1), Some(0), "no covariate columns x_1..x_d".into()));
        }
        for (k, &c) in x_cols.iter().enumerate() {
            if header[c] != format!("x_{}", k + 1) {
                return Err(parse_err(Some(1), Some(0), format!("expected column x_{} got {}", k + 1, header[c])));
            }
        }
        let (ycf_col, mu0_col, mu1_col) = (col("y_cf"), col("mu0"), col("mu1"));
        if mu0_col.is_some() != mu1_col.is_some() {
            return Err(parse_err(Some(1), Some(0), "mu0 and mu1 must appear together".into()));
        }

        let mut x_data = Vec::new();
        let mut t = Vec::new();
        let mut y_f = Vec::new();
        let mut y_cf = ycf_col.map(|_| Vec::new());
        let mut mu0 = mu0_col.map(|_| Vec::new());
        let mut mu1 = mu1_col.map(|_| Vec::new());
        for record in reader.records() {
            let record = record.map_err(|e| {
                let pos = e.position();
                parse_err(pos.map(|p| p.line()), pos.map(|p| p.byte()), e.to_string())
            })?;
            let pos = record.position().cloned();
            let (line, byte) = (pos.as_ref().map(|p| p.line()), pos.as_ref().map(|p| p.byte()));
            let num = |c: usize| -> Result<f64> {
                let field = &record[c];
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, byte, format!("column {} is not a number: {field:?}", header[c])))
            };
            for &c in &x_cols {
                x_data.push(num(c)?);
            }
            t.push(match &record[t_col] {
                "0" | "0.0" => 0u8,
                "1" | "1.0" => 1u8,
                other => return Err(parse_err(line, byte, format!("treatment must be 0 or 1, got {other:?}"))),
            });
            y_f.push(num(yf_col)?);
            for (dst, c) in [(&mut y_cf, ycf_col), (&mut mu0, mu0_col), (&mut mu1, mu1_col)] {
                if let (Some(v), Some(c)) = (dst.as_mut(), c) {
                    v.push(num(c)?);
                }
            }
        }
        let n = t.len();
        let r = Realization {
            x: Arc::new(Matrix::new(n, x_cols.len(), x_data)?),
            t: Arc::new(t),
            y_f,
            y_cf,
            mu0,
            mu1,
        };
        r.validate().map_err(|e| parse_err(None, None, e.to_string()))?;
        Ok(r)
    }
}

/// How to interpret and check a dataset on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    #[default]
    Canonical,
    /// Canonical files that must carry the 25 IHDP covariates.
    Ihdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub n_realizations: usize,
    pub n_samples: usize,
    pub feature_dim: usize,
    /// Counts in the first realization.
    pub n_treated: usize,
    pub n_control: usize,
    pub has_ground_truth: bool,
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub name: String,
    pub feature_dim: usize,
    pub realizations: Vec<Realization>,
}

impl DatasetBundle {
    pub fn new(name: String, realizations: Vec<Realization>) -> Result<Self> {
        let first = realizations
            .first()
            .ok_or_else(|| Error::contract("a dataset needs at least one realization"))?;
        let (n, d) = first.x.shape();
        for (i, r) in realizations.iter().enumerate() {
            if r.x.shape() != (n, d) {
                return Err(Error::contract(format!(
                    "realization {i} has shape {:?}, expected {:?}",
                    r.x.shape(),
                    (n, d)
                )));
            }
            r.validate()
                .map_err(|e| Error::contract(format!("realization {i}: {e}")))?;
        }
        Ok(Self {
            name,
            feature_dim: d,
            realizations,
        })
    }

    pub fn summary(&self) -> BundleSummary {
        let first = &self.realizations[0];
        let n_treated = first.n_treated();
        BundleSummary {
            n_realizations: self.realizations.len(),
            n_samples: first.n_samples(),
            feature_dim: self.feature_dim,
            n_treated,
            n_control: first.n_samples() - n_treated,
            has_ground_truth: self.realizations.iter().all(|r| r.mu0.is_some()),
        }
    }

    /// Writes `realization_0000.csv`, `realization_0001.csv`, ... into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        self.realizations
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let path = dir.join(realization_file_name(i));
                r.write_csv(&path)?;
                Ok(path)
            })
            .collect()
    }
}

pub fn realization_file_name(index: usize) -> String {
    format!("realization_{index:04}.csv")
}

/// Loads one realization file or every `*.csv` in a directory.
pub fn load(path: &Path, format: DataFormat) -> Result<DatasetBundle> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        files
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(Error::config(format!("dataset path {} does not exist", path.display())));
    };
    if files.is_empty() {
        return Err(Error::config(format!("no .csv realization files in {}", path.display())));
    }
    let realizations = files
        .iter()
        .map(|f| Realization::read_csv(f))
        .collect::<Result<Vec<_>>>()?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let bundle = DatasetBundle::new(name, realizations).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        row: None,
        byte: None,
        message: e.to_string(),
    })?;
    if format == DataFormat::Ihdp && bundle.feature_dim != IHDP_COVARIATES {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: None,
            byte: None,
            message: format!(
                "IHDP data must have {IHDP_COVARIATES} covariates, found {}",
                bundle.feature_dim
            ),
        });
    }
    Ok(bundle)
}

/// Column layouts accepted by [`convert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExternalLayout {
    /// Headerless CSV with columns `t, y_factual, y_cfactual, mu0, mu1, x_1..x_d`,
    /// as distributed with the common IHDP simulation files.
    IhdpCsv,
}

/// Reads an external array file and returns it as a canonical realization.
pub fn convert(input: &Path, layout: ExternalLayout) -> Result<Realization> {
    match layout {
        ExternalLayout::IhdpCsv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .trim(csv::Trim::All)
                .from_path(input)
                .map_err(|e| Error::Parse {
                    path: input.to_path_buf(),
                    row: None,
                    byte: None,
                    message: e.to_string(),
                })?;
            let mut t = Vec::new();
            let (mut yf, mut ycf, mut mu0, mu1_init) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut mu1 = mu1_init;
            let mut x = Vec::new();
            let mut d = None;
            for record in reader.records() {
                let record = record.map_err(|e| {
                    let pos = e.position();
                    Error::Parse {
                        path: input.to_path_buf(),
                        row: pos.map(|p| p.line()),
                        byte: pos.map(|p| p.byte()),
                        message: e.to_string(),
                    }
                })?;
                let line = record.position().map(|p| p.line());
                let values = record
                    .iter()
                    .map(|f| f.parse::<f64>())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|e| Error::Parse {
                        path: input.to_path_buf(),
                        row: line,
                        byte: record.position().map(|p| p.byte()),
                        message: e.to_string(),
                    })?;
                if values.len() < 6 {
                    return Err(Error::Parse {
                        path: input.to_path_buf(),
                        row: line,
                        byte: None,
                        message: format!("expected at least 6 columns, got {}", values.len()),
                    });
                }
                let width = values.len() - 5;
                if *d.get_or_insert(width) != width {
                    return Err(Error::Parse {
                        path: input.to_path_buf(),
                        row: line,
                        byte: None,
                        message: "inconsistent column count".into(),
                    });
                }
                t.push(match values[0] {
                    v if v == 0.0 => 0,
                    v if v == 1.0 => 1,
                    v => {
                        return Err(Error::Parse {
                            path: input.to_path_buf(),
                            row: line,
                            byte: None,
                            message: format!("treatment must be 0 or 1, got {v}"),
                        })
                    }
                });
                yf.push(values[1]);
                ycf.push(values[2]);
                mu0.push(values[3]);
                mu1.push(values[4]);
                x.extend_from_slice(&values[5..]);
            }
            let n = t.len();
            let r = Realization {
                x: Arc::new(Matrix::new(n, d.unwrap_or(0), x)?),
                t: Arc::new(t),
                y_f: yf,
                y_cf: Some(ycf),
                mu0: Some(mu0),
                mu1: Some(mu1),
            };
            r.validate().map_err(|e| Error::Parse {
                path: input.to_path_buf(),
                row: None,
                byte: None,
                message: e.to_string(),
            })?;
            Ok(r)
        }
    }
}

/// Disjoint train/validation/test indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    /// Train and validation rows together.
    pub fn within_sample(&self) -> Vec<usize> {
        self.train.iter().chain(&self.valid).copied().collect()
    }
}

/// Split sizes: `test = round(0.1 n)`, `valid = round(0.3 (n - test))`, rest train.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = (0.10 * n as f64).round() as usize;
    let valid = (0.30 * (n - test) as f64).round() as usize;
    (n - test - valid, valid, test)
}

/// Random 63/27/10 split of `0..n`.
pub fn split(n: usize, seed: u64) -> Result<SplitSpec> {
    if n < 10 {
        return Err(Error::contract(format!("need at least 10 samples to split, got {n}")));
    }
    let (n_train, n_valid, _) = split_sizes(n);
    let mut perm: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut perm);
    let test = perm.split_off(n_train + n_valid);
    let valid = perm.split_off(n_train);
    Ok(SplitSpec {
        train: perm,
        valid,
        test,
        seed,
    })
}

/// The split used for realization `index` under experiment seed `seed`.
pub fn split_for_realization(n: usize, seed: u64, index: usize) -> Result<SplitSpec> {
    split(n, derive_seed(seed, index as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationKind {
    #[default]
    MinMax,
    ZScore,
    None,
}

/// Per-feature affine map `(x - offset) / scale` fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub kind: NormalizationKind,
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn fit(x_train: &Matrix, kind: NormalizationKind) -> Result<Self> {
        if x_train.rows() == 0 {
            return Err(Error::contract("normalizer needs at least one training row"));
        }
        let d = x_train.cols();
        let (offset, scale) = match kind {
            NormalizationKind::None => (vec![0.0; d], vec![1.0; d]),
            NormalizationKind::MinMax => {
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for r in 0..x_train.rows() {
                    for (c, &v) in x_train.row(r).iter().enumerate() {
                        lo[c] = lo[c].min(v);
                        hi[c] = hi[c].max(v);
                    }
                }
                let range = hi.iter().zip(&lo).map(|(h, l)| h - l).collect();
                (lo, range)
            }
            NormalizationKind::ZScore => {
                let means = x_train.column_means();
                let n = x_train.rows() as f64;
                let stds = (0..d)
                    .map(|c| {
                        let ss: f64 = (0..x_train.rows()).map(|r| (x_train.get(r, c) - means[c]).powi(2)).sum();
                        (ss / n).sqrt()
                    })
                    .collect();
                (means, stds)
            }
        };
        Ok(Self { kind, offset, scale })
    }

    /// Zero-range features map to 0; values outside the training range are not clipped.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.offset.len() {
            return Err(Error::Shape {
                op: "normalize",
                left: (1, self.offset.len()),
                right: x.shape(),
            });
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            if self.scale[c] == 0.0 {
                0.0
            } else {
                (x.get(r, c) - self.offset[c]) / self.scale[c]
            }
        }))
    }
}

/// Standardization of the factual outcome, fitted on training rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScaler {
    pub mean: f64,
    pub std: f64,
}

impl OutcomeScaler {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn fit(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }

    pub fn scale(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn unscale(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }

    /// Converts a difference of standardized outcomes back to outcome units.
    pub fn unscale_effect(&self, tau: f64) -> f64 {
        tau * self.std
    }
}
