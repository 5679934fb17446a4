//! Residual statistics and the two-sample tests used to decide whether a
//! categorical input was learned.

pub mod special;

use serde::{Deserialize, Serialize};

use crate::encoding::Dataset;
use crate::error::{Error, Result};

pub use special::{fisher_f_upper, regularized_incomplete_beta, student_t_two_sided};

pub const DEFAULT_CONFIDENCE: f64 = 0.99;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1). Zero for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Mean offset from `x[0]` and sample variance, both computed on `x - x[0]`.
///
/// Centering on a sample's own first value makes the results unchanged by a
/// common shift whenever the shift itself is exact.
fn pivoted_moments(x: &[f64]) -> (f64, f64) {
    let pivot = x[0];
    let n = x.len() as f64;
    let m = x.iter().map(|v| v - pivot).sum::<f64>() / n;
    let var = x.iter().map(|v| (v - pivot - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DegreesOfFreedom {
    Single(f64),
    Pair(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub degrees_of_freedom: DegreesOfFreedom,
    pub p_value: f64,
    pub confidence: f64,
    pub reject_h0: bool,
}

impl TestOutcome {
    fn new(statistic: f64, degrees_of_freedom: DegreesOfFreedom, p_value: f64, confidence: f64) -> Self {
        Self {
            statistic,
            degrees_of_freedom,
            p_value,
            confidence,
            reject_h0: p_value < 1.0 - confidence,
        }
    }
}

fn check_confidence(confidence: f64) -> Result<()> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(format!("confidence {confidence} not in (0, 1)")));
    }
    Ok(())
}

/// Welch two-sample t test of equal means (two-sided).
pub fn t_test_two_sample(a: &[f64], b: &[f64], confidence: f64) -> Result<TestOutcome> {
    check_confidence(confidence)?;
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("t test needs at least two values per sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = pivoted_moments(a);
    let (mb, vb) = pivoted_moments(b);
    let diff = (a[0] - b[0]) + (ma - mb);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        let df = DegreesOfFreedom::Single(na + nb - 2.0);
        return Ok(if diff == 0.0 {
            TestOutcome::new(0.0, df, 1.0, confidence)
        } else {
            TestOutcome::new(diff.signum() * f64::INFINITY, df, 0.0, confidence)
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    let p = student_t_two_sided(t, df);
    Ok(TestOutcome::new(t, DegreesOfFreedom::Single(df), p, confidence))
}

/// One-sided F test of equal variances with the larger variance on top.
pub fn f_test_two_sample(a: &[f64], b: &[f64], confidence: f64) -> Result<TestOutcome> {
    check_confidence(confidence)?;
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("F test needs at least two values per sample"));
    }
    let (_, va) = pivoted_moments(a);
    let (_, vb) = pivoted_moments(b);
    if va == 0.0 && vb == 0.0 {
        return Err(Error::invalid("F test undefined when both variances are zero"));
    }
    // Order-independent choice of numerator: larger variance, then larger n.
    let a_on_top = va > vb || (va == vb && a.len() >= b.len());
    let ((v_max, n_max), (v_min, n_min)) = if a_on_top {
        ((va, a.len()), (vb, b.len()))
    } else {
        ((vb, b.len()), (va, a.len()))
    };
    let df1 = (n_max - 1) as f64;
    let df2 = (n_min - 1) as f64;
    let f = if v_min == 0.0 { f64::INFINITY } else { v_max / v_min };
    let p = fisher_f_upper(f, df1, df2);
    Ok(TestOutcome::new(f, DegreesOfFreedom::Pair(df1, df2), p, confidence))
}

/// Pearson correlation, or `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Fraction of trials whose mean residual is below `threshold` in magnitude.
pub fn frac_mean_below(trial_means: &[f64], threshold: f64) -> Result<f64> {
    if trial_means.is_empty() {
        return Err(Error::invalid("no trial means"));
    }
    Ok(trial_means.iter().filter(|m| m.abs() < threshold).count() as f64 / trial_means.len() as f64)
}

/// Aggregate of one per-trial statistic over all trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    /// Smallest magnitude, reported for mean columns only.
    pub abs_min: Option<f64>,
    pub max: f64,
}

impl Aggregate {
    fn of(values: &[f64], with_abs_min: bool) -> Self {
        Self {
            mean: mean(values),
            std: std_dev(values),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            abs_min: with_abs_min.then(|| values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Per-trial residual moments on the learning and validation sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMoments {
    pub learn_mean: f64,
    pub learn_std: f64,
    pub val_mean: f64,
    pub val_std: f64,
}

impl TrialMoments {
    pub fn of(learn: &[f64], val: &[f64]) -> Result<Self> {
        if learn.is_empty() || val.is_empty() {
            return Err(Error::invalid("empty residual set"));
        }
        Ok(Self { learn_mean: mean(learn), learn_std: std_dev(learn), val_mean: mean(val), val_std: std_dev(val) })
    }
}

/// Mean/StD/Min/(abs)/Max of residual means and standard deviations over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub n_trials: usize,
    pub learn_mean: Aggregate,
    pub learn_std: Aggregate,
    pub val_mean: Aggregate,
    pub val_std: Aggregate,
}

impl SummaryTable {
    pub fn from_moments(trials: &[TrialMoments]) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::invalid("summary needs at least one trial"));
        }
        let col = |f: fn(&TrialMoments) -> f64| trials.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            n_trials: trials.len(),
            learn_mean: Aggregate::of(&col(|t| t.learn_mean), true),
            learn_std: Aggregate::of(&col(|t| t.learn_std), false),
            val_mean: Aggregate::of(&col(|t| t.val_mean), true),
            val_std: Aggregate::of(&col(|t| t.val_std), false),
        })
    }

    fn columns(&self) -> [&Aggregate; 4] {
        [&self.learn_mean, &self.learn_std, &self.val_mean, &self.val_std]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,learn_mean,learn_std,val_mean,val_std\n");
        let rows: [(&str, fn(&Aggregate) -> Option<f64>); 5] = [
            ("Mean", |a| Some(a.mean)),
            ("StD", |a| Some(a.std)),
            ("Min", |a| Some(a.min)),
            ("abs", |a| a.abs_min),
            ("Max", |a| Some(a.max)),
        ];
        for (name, get) in rows {
            let cells: Vec<String> =
                self.columns().iter().map(|a| get(a).map(|v| v.to_string()).unwrap_or_default()).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }

    pub fn to_text(&self, title: &str) -> String {
        let mut out = format!("{title}\n");
        out.push_str(&format!("{:<8}{:>24}{:>24}\n", "", "learning residual", "validation residual"));
        out.push_str(&format!("{:<8}{:>12}{:>12}{:>12}{:>12}\n", "", "Mean", "StD", "Mean", "StD"));
        let rows: [(&str, fn(&Aggregate) -> Option<f64>); 5] = [
            ("Mean", |a| Some(a.mean)),
            ("StD", |a| Some(a.std)),
            ("Min", |a| Some(a.min)),
            ("(abs)", |a| a.abs_min),
            ("Max", |a| Some(a.max)),
        ];
        for (name, get) in rows {
            out.push_str(&format!("{name:<8}"));
            for a in self.columns() {
                match get(a) {
                    Some(v) => out.push_str(&format!("{v:>12.2}")),
                    None => out.push_str(&format!("{:>12}", "")),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Residual summary over trials, each given as (learning, validation) residuals.
pub fn summary_table(per_trial: &[(Vec<f64>, Vec<f64>)]) -> Result<SummaryTable> {
    let moments = per_trial
        .iter()
        .map(|(l, v)| TrialMoments::of(l, v))
        .collect::<Result<Vec<_>>>()?;
    SummaryTable::from_moments(&moments)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub input: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub rows: Vec<CorrelationRow>,
    /// `(trial, column)` pairs where a column had zero variance.
    pub degenerate: Vec<(usize, String)>,
}

impl CorrelationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("input,mean,std,min,max\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.input, r.mean, r.std, r.min, r.max));
        }
        out
    }

    pub fn to_text(&self, title: &str) -> String {
        let mut out = format!("{title}\n{:<10}{:>10}{:>10}{:>10}{:>10}\n", "", "Mean", "StD", "Min", "Max");
        for r in &self.rows {
            out.push_str(&format!("{:<10}{:>10.4}{:>10.4}{:>10.4}{:>10.4}\n", r.input, r.mean, r.std, r.min, r.max));
        }
        out
    }
}

/// Per-input aggregate of `|pearson(column, residual)|` over trials.
///
/// Zero-variance columns count as correlation 0 and are listed in
/// `degenerate`.
pub fn correlation_table(trials: &[(&Dataset, &[f64])]) -> Result<CorrelationTable> {
    let Some((first, _)) = trials.first() else {
        return Err(Error::invalid("correlation table needs at least one trial"));
    };
    let names = first.column_names();
    let mut per_column = vec![Vec::with_capacity(trials.len()); names.len()];
    let mut degenerate = Vec::new();
    for (t, (data, resid)) in trials.iter().enumerate() {
        if data.n_cols() != names.len() || data.n_rows() != resid.len() {
            return Err(Error::invalid(format!("trial {t}: dataset and residuals are not aligned")));
        }
        for (j, name) in names.iter().enumerate() {
            let r = match pearson(&data.column(j), resid) {
                Some(r) => r.abs(),
                None => {
                    log::warn!("trial {t}: column '{name}' has zero variance; correlation set to 0");
                    degenerate.push((t, name.clone()));
                    0.0
                }
            };
            per_column[j].push(r);
        }
    }
    let rows = names
        .into_iter()
        .zip(per_column)
        .map(|(input, v)| {
            let a = Aggregate::of(&v, false);
            CorrelationRow { input, mean: a.mean, std: a.std, min: a.min, max: a.max }
        })
        .collect();
    Ok(CorrelationTable { rows, degenerate })
}
