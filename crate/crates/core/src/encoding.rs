//! Numeric datasets built from product traces.
//!
//! Three encodings of the conveyor choice are supported:
//!
//! | scheme | RQM4 | RQM5 | extra column |
//! |--------|------|------|--------------|
//! | A1     | 4    | 5    | none |
//! | A2     | 0    | 1    | none |
//! | A3     | 0    | 1    | `rqm_bar = 1 - rqm` |
//!
//! The product category is a single ordinal column (`1/2/3`).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ProductFeatures, ProductTrace, Rqm, TPiece};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EncodingScheme {
    #[serde(rename = "a1")]
    A1Raw45,
    #[serde(rename = "a2")]
    A2Binary,
    #[serde(rename = "a3")]
    A3BinaryPlusComplement,
}

const BASE_COLUMNS: [&str; 11] = [
    "lg", "dia_gb", "dia_moy", "dia_pb", "t_piece", "q_trim", "u_trim", "q_rqm", "q_rqm4", "q_rqm5",
    "q_rqm7",
];

impl EncodingScheme {
    pub const ALL: [EncodingScheme; 3] = [
        EncodingScheme::A1Raw45,
        EncodingScheme::A2Binary,
        EncodingScheme::A3BinaryPlusComplement,
    ];

    pub fn token(self) -> &'static str {
        match self {
            EncodingScheme::A1Raw45 => "a1",
            EncodingScheme::A2Binary => "a2",
            EncodingScheme::A3BinaryPlusComplement => "a3",
        }
    }

    pub fn n_columns(self) -> usize {
        match self {
            EncodingScheme::A3BinaryPlusComplement => 13,
            _ => 12,
        }
    }

    pub fn columns(self) -> Vec<Column> {
        let mut cols: Vec<Column> = BASE_COLUMNS
            .iter()
            .map(|&name| {
                if name == "t_piece" {
                    Column::discrete(name, &[1.0, 2.0, 3.0])
                } else {
                    Column::continuous(name)
                }
            })
            .collect();
        match self {
            EncodingScheme::A1Raw45 => cols.push(Column::discrete("rqm", &[4.0, 5.0])),
            EncodingScheme::A2Binary => cols.push(Column::discrete("rqm", &[0.0, 1.0])),
            EncodingScheme::A3BinaryPlusComplement => {
                cols.push(Column::discrete("rqm", &[0.0, 1.0]));
                cols.push(Column::discrete("rqm_bar", &[0.0, 1.0]));
            }
        }
        cols
    }

    pub fn rqm_code(self, rqm: Rqm) -> f64 {
        match (self, rqm) {
            (EncodingScheme::A1Raw45, Rqm::Rqm4) => 4.0,
            (EncodingScheme::A1Raw45, Rqm::Rqm5) => 5.0,
            (_, Rqm::Rqm4) => 0.0,
            (_, Rqm::Rqm5) => 1.0,
        }
    }

    /// Appends the encoded (unscaled) feature row for one product.
    pub fn encode_into(self, f: &ProductFeatures, out: &mut Vec<f64>) {
        out.extend_from_slice(&[
            f.lg,
            f.dia_gb,
            f.dia_moy,
            f.dia_pb,
            t_piece_code(f.t_piece),
            f.q_trim as f64,
            f.u_trim,
            f.q_rqm as f64,
            f.q_rqm4 as f64,
            f.q_rqm5 as f64,
            f.q_rqm7 as f64,
        ]);
        let rqm = self.rqm_code(f.rqm);
        out.push(rqm);
        if self == EncodingScheme::A3BinaryPlusComplement {
            out.push(1.0 - rqm);
        }
    }
}

impl fmt::Display for EncodingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncodingScheme::A1Raw45 => "A1 (RQM as 4/5)",
            EncodingScheme::A2Binary => "A2 (RQM as 0/1)",
            EncodingScheme::A3BinaryPlusComplement => "A3 (RQM 0/1 + complement)",
        })
    }
}

impl FromStr for EncodingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a1" | "a1_raw45" => Ok(EncodingScheme::A1Raw45),
            "a2" | "a2_binary" => Ok(EncodingScheme::A2Binary),
            "a3" | "a3_binary_plus_complement" => Ok(EncodingScheme::A3BinaryPlusComplement),
            other => Err(Error::invalid(format!("unknown encoding scheme '{other}'"))),
        }
    }
}

pub fn t_piece_code(t: TPiece) -> f64 {
    match t {
        TPiece::CsmkPass1 => 1.0,
        TPiece::CsmkPass2 => 2.0,
        TPiece::Mkv => 3.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    /// Categorical code column with its admissible levels.
    Discrete { levels: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn continuous(name: &str) -> Self {
        Self { name: name.to_string(), kind: ColumnKind::Continuous }
    }

    pub fn discrete(name: &str, levels: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Discrete { levels: levels.to_vec() },
        }
    }
}

/// How categorical code columns are treated by the scaler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscreteScaling {
    /// Codes are fed to the network as encoded (4/5, 0/1, 1/2/3).
    #[default]
    Raw,
    /// Codes are mapped affinely from their level range onto `[-1, 1]`.
    Symmetric,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Random,
    /// Earliest rows (by source order) form the learning set.
    Chrono,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SplitMode::Random),
            "chrono" => Ok(SplitMode::Chrono),
            other => Err(Error::invalid(format!("unknown split mode '{other}'"))),
        }
    }
}

/// Feature matrix (row-major), target vector and column metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    features: Vec<f64>,
    targets: Vec<f64>,
    row_ids: Vec<usize>,
    scaler: Option<Scaler>,
}

impl Dataset {
    pub fn new(columns: Vec<Column>, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let n = targets.len();
        Self::with_row_ids(columns, features, targets, (0..n).collect())
    }

    pub fn with_row_ids(
        columns: Vec<Column>,
        features: Vec<f64>,
        targets: Vec<f64>,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("dataset needs at least one column"));
        }
        if features.len() != columns.len() * targets.len() || row_ids.len() != targets.len() {
            return Err(Error::invalid(format!(
                "dataset shape mismatch: {} feature values, {} columns, {} targets",
                features.len(),
                columns.len(),
                targets.len()
            )));
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Self { columns, features, targets, row_ids, scaler: None })
    }

    /// Convenience constructor with generic continuous column names.
    pub fn from_rows(rows: &[Vec<f64>], targets: &[f64]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("ragged feature rows"));
        }
        let columns = (0..width).map(|i| Column::continuous(&format!("x{i}"))).collect();
        Self::new(columns, rows.concat(), targets.to_vec())
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.columns.len();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.columns.len())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Index of each row in the source the dataset was built from.
    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    /// Seconds per unit of the stored target (1 for unscaled data).
    pub fn target_unit(&self) -> f64 {
        self.scaler.as_ref().map_or(1.0, |s| s.target_std)
    }

    /// Rows selected by position, keeping metadata and scaler.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        let w = self.n_cols();
        let mut features = Vec::with_capacity(positions.len() * w);
        let mut targets = Vec::with_capacity(positions.len());
        let mut row_ids = Vec::with_capacity(positions.len());
        for &p in positions {
            features.extend_from_slice(self.row(p));
            targets.push(self.targets[p]);
            row_ids.push(self.row_ids[p]);
        }
        Dataset {
            columns: self.columns.clone(),
            features,
            targets,
            row_ids,
            scaler: self.scaler.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.column_names().join(",");
        out.push_str(",delta_t\n");
        for (row, y) in self.rows().zip(&self.targets) {
            for v in row {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{y}\n"));
        }
        out
    }

    /// Reads a dataset written by [`Dataset::to_csv`]; the header must match
    /// the scheme's column order.
    pub fn from_csv(text: &str, scheme: EncodingScheme) -> Result<Self> {
        let columns = scheme.columns();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let expected: Vec<&str> =
            columns.iter().map(|c| c.name.as_str()).chain(["delta_t"]).collect();
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse(format!(
                "dataset header does not match scheme {}",
                scheme.token()
            )));
        }
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for record in reader.records() {
            let record = record?;
            let values = record
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("'{s}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let (y, x) = values.split_last().expect("header guarantees at least two fields");
            features.extend_from_slice(x);
            targets.push(*y);
        }
        Dataset::new(columns, features, targets)
    }
}

/// Encodes traces under `scheme`. Targets are the delays in seconds.
pub fn encode(traces: &[ProductTrace], scheme: EncodingScheme) -> Result<Dataset> {
    if traces.is_empty() {
        return Err(Error::invalid("cannot encode an empty trace set"));
    }
    let mut features = Vec::with_capacity(traces.len() * scheme.n_columns());
    for t in traces {
        scheme.encode_into(&t.features, &mut features);
    }
    let targets = traces.iter().map(|t| t.delta_t).collect();
    Dataset::new(scheme.columns(), features, targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub name: String,
    pub center: f64,
    pub half_range: f64,
}

/// Affine per-column scaling plus a z-score of the target.
///
/// `fit_rows` records the size of the set the scaler was fitted on so that a
/// scaler accidentally refitted on validation data can be detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<ColumnScale>,
    pub target_mean: f64,
    pub target_std: f64,
    pub fit_rows: usize,
    pub discrete: DiscreteScaling,
    /// Columns that were constant on the fitting set (mapped to 0).
    pub constant_columns: Vec<String>,
}

impl Scaler {
    pub fn fit(data: &Dataset, discrete: DiscreteScaling) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("cannot fit a scaler on an empty dataset"));
        }
        let mut columns = Vec::with_capacity(data.n_cols());
        let mut constant_columns = Vec::new();
        for (j, col) in data.columns().iter().enumerate() {
            let (center, half_range) = match (&col.kind, discrete) {
                (ColumnKind::Discrete { .. }, DiscreteScaling::Raw) => (0.0, 1.0),
                (ColumnKind::Discrete { levels }, DiscreteScaling::Symmetric) => {
                    let lo = levels.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if hi > lo {
                        ((lo + hi) / 2.0, (hi - lo) / 2.0)
                    } else {
                        (lo, 1.0)
                    }
                }
                (ColumnKind::Continuous, _) => {
                    let (lo, hi) = data
                        .rows()
                        .map(|r| r[j])
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                    if hi > lo {
                        ((lo + hi) / 2.0, (hi - lo) / 2.0)
                    } else {
                        log::warn!("column '{}' is constant on the fitting set", col.name);
                        constant_columns.push(col.name.clone());
                        (lo, 1.0)
                    }
                }
            };
            columns.push(ColumnScale { name: col.name.clone(), center, half_range });
        }
        let n = data.n_rows() as f64;
        let target_mean = data.targets().iter().sum::<f64>() / n;
        let var = if data.n_rows() > 1 {
            data.targets().iter().map(|y| (y - target_mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let target_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Self {
            columns,
            target_mean,
            target_std,
            fit_rows: data.n_rows(),
            discrete,
            constant_columns,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn scale_row(&self, raw: &[f64], out: &mut [f64]) {
        for ((o, v), c) in out.iter_mut().zip(raw).zip(&self.columns) {
            *o = (v - c.center) / c.half_range;
        }
    }

    pub fn unscale_row(&self, scaled: &[f64], out: &mut [f64]) {
        for ((o, v), c) in out.iter_mut().zip(scaled).zip(&self.columns) {
            *o = v * c.half_range + c.center;
        }
    }

    pub fn scale_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn unscale_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }

    /// Applies the fitted map to another dataset with the same columns.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.n_cols() != self.columns.len()
            || data.columns().iter().zip(&self.columns).any(|(a, b)| a.name != b.name)
        {
            return Err(Error::invalid("scaler columns do not match dataset columns"));
        }
        if data.scaler.is_some() {
            return Err(Error::invalid("dataset is already scaled"));
        }
        let mut features = vec![0.0; data.features.len()];
        for (src, dst) in data.rows().zip(features.chunks_exact_mut(data.n_cols())) {
            self.scale_row(src, dst);
        }
        let targets = data.targets.iter().map(|&y| self.scale_target(y)).collect();
        Ok(Dataset {
            columns: data.columns.clone(),
            features,
            targets,
            row_ids: data.row_ids.clone(),
            scaler: Some(self.clone()),
        })
    }

    /// Errors unless this scaler was fitted on a set the size of `learn`.
    pub fn check_fitted_on(&self, learn: &Dataset) -> Result<()> {
        if self.fit_rows != learn.n_rows() {
            return Err(Error::invalid(format!(
                "scaler was fitted on {} rows but the learning set has {}",
                self.fit_rows,
                learn.n_rows()
            )));
        }
        Ok(())
    }
}

/// Fits a scaler on `data` and returns the scaled copy with it.
pub fn fit_apply_scaler(data: &Dataset, discrete: DiscreteScaling) -> Result<(Dataset, Scaler)> {
    let scaler = Scaler::fit(data, discrete)?;
    Ok((scaler.apply(data)?, scaler))
}

/// Partitions rows into learning and validation sets.
///
/// The validation set gets `floor(n * (1 - learn_fraction))` rows, clamped so
/// that both parts are non-empty.
pub fn split(
    data: &Dataset,
    learn_fraction: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(Dataset, Dataset)> {
    if !(learn_fraction > 0.0 && learn_fraction < 1.0) {
        return Err(Error::invalid(format!("learn fraction {learn_fraction} not in (0, 1)")));
    }
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::invalid("need at least two rows to split"));
    }
    let n_val = ((n as f64 * (1.0 - learn_fraction)).floor() as usize).clamp(1, n - 1);
    let n_learn = n - n_val;
    let mut order: Vec<usize> = (0..n).collect();
    match mode {
        SplitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
        SplitMode::Chrono => order.sort_by_key(|&i| data.row_ids[i]),
    }
    let (learn, val) = order.split_at(n_learn);
    let mut learn = learn.to_vec();
    let mut val = val.to_vec();
    learn.sort_unstable();
    val.sort_unstable();
    Ok((data.subset(&learn), data.subset(&val)))
}
