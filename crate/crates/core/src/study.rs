//! The encoding study: one simulated dataset, several encodings of the
//! conveyor input, and many seeded train-and-prune trials per encoding.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::{encode, split, Dataset, DiscreteScaling, EncodingScheme, Scaler, SplitMode};
use crate::error::{Error, Result};
use crate::mlp::{nguyen_widrow_init, EffectiveStructure, MlpParams, ModelFile};
use crate::pruner::{prune_and_retrain, removal_log_csv, PruneConfig, RemovalRecord};
use crate::reduction::{classify_bottlenecks, sawmill_routings, synchronization_stations, Bottlenecks};
use crate::sim::{compare_with_full, simulate_full, ProductTrace, ReducedComparison, Rqm, SimConfig, Surrogate};
use crate::stats::{
    correlation_table, f_test_two_sample, frac_mean_below, mean, t_test_two_sample, CorrelationTable,
    SummaryTable, TestOutcome, TrialMoments,
};
use crate::trainer::{residuals, rmse, train, TrainConfig, TrainHistory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub n_trials: usize,
    pub n_hidden_init: usize,
    pub schemes: Vec<EncodingScheme>,
    /// Trial `k` uses seed `base_seed + k` for its initial weights.
    pub base_seed: u64,
    pub learn_fraction: f64,
    pub split_mode: SplitMode,
    pub split_seed: u64,
    /// Draw a fresh split per trial from the trial seed instead of sharing one.
    pub resplit_per_trial: bool,
    pub discrete_scaling: DiscreteScaling,
    /// Threshold on |mean residual|, seconds.
    pub mean_threshold: f64,
    pub confidence: f64,
    /// Wall-time repeats for the reduced-model comparison; 0 skips it.
    pub reduced_repeats: usize,
    /// Periods of the utilization history used for bottleneck detection.
    pub utilization_periods: usize,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub prune: PruneConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_trials: 30,
            n_hidden_init: 10,
            schemes: EncodingScheme::ALL.to_vec(),
            base_seed: 0,
            learn_fraction: 2.0 / 3.0,
            split_mode: SplitMode::Random,
            split_seed: 0,
            resplit_per_trial: false,
            discrete_scaling: DiscreteScaling::Raw,
            mean_threshold: 30.0,
            confidence: 0.99,
            reduced_repeats: 5,
            utilization_periods: 10,
            sim: SimConfig::default(),
            train: TrainConfig { max_iterations: 100, ..TrainConfig::default() },
            prune: PruneConfig { retrain_iterations: 10, ..PruneConfig::default() },
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 || self.n_hidden_init == 0 {
            return Err(Error::invalid("n_trials and n_hidden_init must be at least 1"));
        }
        if self.schemes.is_empty() {
            return Err(Error::invalid("no encoding scheme selected"));
        }
        if !(self.learn_fraction > 0.0 && self.learn_fraction < 1.0) {
            return Err(Error::invalid("learn_fraction must lie in (0, 1)"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::invalid("confidence must lie in (0, 1)"));
        }
        if !(self.mean_threshold > 0.0) {
            return Err(Error::invalid("mean_threshold must be positive"));
        }
        if self.utilization_periods == 0 {
            return Err(Error::invalid("utilization_periods must be at least 1"));
        }
        self.sim.validate()?;
        self.train.validate()?;
        self.prune.validate()
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Result of one seeded trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub moments: Option<TrialMoments>,
    pub learn_rmse: f64,
    pub val_rmse: f64,
    pub structure: Option<EffectiveStructure>,
    pub removals_accepted: usize,
    /// Learning residuals of RQM4 against RQM5 products.
    pub rqm_t_test: Option<TestOutcome>,
    pub rqm_f_test: Option<TestOutcome>,
}

impl TrialRecord {
    fn failed(trial: usize, seed: u64, error: String) -> Self {
        Self {
            trial,
            seed,
            error: Some(error),
            moments: None,
            learn_rmse: f64::NAN,
            val_rmse: f64::NAN,
            structure: None,
            removals_accepted: 0,
            rqm_t_test: None,
            rqm_f_test: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub scheme: EncodingScheme,
    pub summary: Option<SummaryTable>,
    pub correlation: Option<CorrelationTable>,
    pub trials: Vec<TrialRecord>,
    pub stats: SchemeStats,
}

/// Headline numbers used to rank the encodings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeStats {
    pub scheme: EncodingScheme,
    pub n_ok: usize,
    /// Mean over trials of |validation mean residual|.
    pub mean_abs_val_mean: f64,
    /// Fraction of trials with |learning mean residual| below the threshold.
    pub frac_mean_below: f64,
    /// Fraction of trials where the RQM-split t test keeps equal means.
    pub frac_t_not_rejected: f64,
    pub frac_f_not_rejected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedReport {
    pub scheme: EncodingScheme,
    pub trial: usize,
    pub val_rmse: f64,
    pub comparison: ReducedComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckReport {
    pub utilizations: Vec<(String, f64)>,
    pub bottlenecks: Bottlenecks,
    pub synchronization: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub base_seed: u64,
    pub trial_seeds: Vec<u64>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub provenance: Provenance,
    pub n_traces: usize,
    pub bottlenecks: BottleneckReport,
    pub schemes: Vec<SchemeReport>,
    /// Best encoding first.
    pub comparison: Vec<SchemeStats>,
    pub reduced: Option<ReducedReport>,
}

impl StudyReport {
    pub fn scheme(&self, scheme: EncodingScheme) -> Option<&SchemeReport> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }
}

/// Per-trial products that are written out but not part of the report.
#[derive(Debug, Clone)]
pub struct TrialArtifacts {
    pub model: Option<ModelFile>,
    pub history: TrainHistory,
    pub removal_log: Vec<RemovalRecord>,
    pub learn_residuals: Vec<f64>,
    pub learn_rqm: Vec<Rqm>,
}

#[derive(Debug, Clone)]
pub struct StudyRun {
    pub config: StudyConfig,
    pub report: StudyReport,
    pub traces: Vec<ProductTrace>,
    /// Indexed like `report.schemes`, then by trial.
    pub artifacts: Vec<Vec<TrialArtifacts>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

/// Orders encodings by mean |validation mean residual|, smallest first.
/// Ties keep the scheme order.
pub fn compare_schemes(stats: &[SchemeStats]) -> Vec<SchemeStats> {
    let mut out = stats.to_vec();
    out.sort_by(|a, b| a.mean_abs_val_mean.total_cmp(&b.mean_abs_val_mean).then(a.scheme.cmp(&b.scheme)));
    out
}

struct Prepared {
    learn: Dataset,
    val: Dataset,
    scaler: Scaler,
}

fn prepare(data: &Dataset, config: &StudyConfig, split_seed: u64) -> Result<Prepared> {
    let (learn, val) = split(data, config.learn_fraction, split_seed, config.split_mode)?;
    let scaler = Scaler::fit(&learn, config.discrete_scaling)?;
    let learn = scaler.apply(&learn)?;
    let val = scaler.apply(&val)?;
    scaler.check_fitted_on(&learn)?;
    Ok(Prepared { learn, val, scaler })
}

fn by_rqm(residuals: &[f64], rqm: &[Rqm]) -> (Vec<f64>, Vec<f64>) {
    let mut r4 = Vec::new();
    let mut r5 = Vec::new();
    for (r, q) in residuals.iter().zip(rqm) {
        match q {
            Rqm::Rqm4 => r4.push(*r),
            Rqm::Rqm5 => r5.push(*r),
        }
    }
    (r4, r5)
}

struct TrialResult {
    record: TrialRecord,
    artifacts: TrialArtifacts,
    params: Option<MlpParams>,
}

fn run_trial(
    config: &StudyConfig,
    scheme: EncodingScheme,
    data: &Dataset,
    shared: Option<&Prepared>,
    traces: &[ProductTrace],
    trial: usize,
) -> TrialResult {
    let seed = config.trial_seed(trial);
    let empty = |error: String| TrialResult {
        record: TrialRecord::failed(trial, seed, error),
        artifacts: TrialArtifacts {
            model: None,
            history: TrainHistory::default(),
            removal_log: Vec::new(),
            learn_residuals: Vec::new(),
            learn_rqm: Vec::new(),
        },
        params: None,
    };
    let owned;
    let prepared = match shared {
        Some(p) => p,
        None => match prepare(data, config, seed) {
            Ok(p) => {
                owned = p;
                &owned
            }
            Err(e) => return empty(e.to_string()),
        },
    };
    let outcome = (|| -> Result<_> {
        let init = nguyen_widrow_init(scheme.n_columns(), config.n_hidden_init, seed)?;
        let trained = train(&init, &prepared.learn, &config.train)?;
        let pruned = prune_and_retrain(&trained.params, &prepared.learn, &prepared.val, &config.train, &config.prune)?;
        let learn_res = residuals(&pruned.params, &prepared.learn)?;
        let val_res = residuals(&pruned.params, &prepared.val)?;
        Ok((trained.history, pruned, learn_res, val_res))
    })();
    let (history, pruned, learn_res, val_res) = match outcome {
        Ok(v) => v,
        Err(e) => {
            log::warn!("{scheme} trial {trial}: {e}");
            return empty(e.to_string());
        }
    };
    let learn_rqm: Vec<Rqm> = prepared.learn.row_ids().iter().map(|&i| traces[i].features.rqm).collect();
    let (r4, r5) = by_rqm(&learn_res, &learn_rqm);
    let moments = TrialMoments::of(&learn_res, &val_res).ok();
    let record = TrialRecord {
        trial,
        seed,
        error: None,
        moments,
        learn_rmse: rmse(&learn_res),
        val_rmse: rmse(&val_res),
        structure: Some(pruned.params.effective_structure()),
        removals_accepted: pruned.removal_log.iter().filter(|r| r.accepted).count(),
        rqm_t_test: t_test_two_sample(&r4, &r5, config.confidence).ok(),
        rqm_f_test: f_test_two_sample(&r4, &r5, config.confidence).ok(),
    };
    let model = ModelFile::new(&pruned.params, prepared.learn.column_names(), Some(prepared.scaler.clone()));
    TrialResult {
        record,
        artifacts: TrialArtifacts {
            model: Some(model),
            history,
            removal_log: pruned.removal_log,
            learn_residuals: learn_res,
            learn_rqm,
        },
        params: Some(pruned.params),
    }
}

fn scheme_stats(scheme: EncodingScheme, trials: &[TrialRecord], threshold: f64) -> SchemeStats {
    let ok: Vec<&TrialRecord> = trials.iter().filter(|t| t.moments.is_some()).collect();
    let n = ok.len();
    let frac = |pred: &dyn Fn(&TrialRecord) -> bool| {
        if n == 0 {
            f64::NAN
        } else {
            ok.iter().filter(|t| pred(t)).count() as f64 / n as f64
        }
    };
    let learn_means: Vec<f64> = ok.iter().map(|t| t.moments.unwrap().learn_mean).collect();
    let abs_val: Vec<f64> = ok.iter().map(|t| t.moments.unwrap().val_mean.abs()).collect();
    SchemeStats {
        scheme,
        n_ok: n,
        mean_abs_val_mean: if n == 0 { f64::NAN } else { mean(&abs_val) },
        frac_mean_below: frac_mean_below(&learn_means, threshold).unwrap_or(f64::NAN),
        frac_t_not_rejected: frac(&|t| t.rqm_t_test.is_some_and(|o| !o.reject_h0)),
        frac_f_not_rejected: frac(&|t| t.rqm_f_test.is_some_and(|o| !o.reject_h0)),
    }
}

/// One network trained (and optionally pruned) outside a full study.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub scheme: EncodingScheme,
    pub seed: u64,
    pub params: MlpParams,
    pub scaler: Scaler,
    pub model: ModelFile,
    pub history: TrainHistory,
    pub removal_log: Vec<RemovalRecord>,
    pub learn_rmse: f64,
    pub val_rmse: f64,
}

/// Simulates, encodes, splits and fits a single network with `seed`.
pub fn fit_model(config: &StudyConfig, scheme: EncodingScheme, seed: u64, prune: bool) -> Result<FittedModel> {
    config.validate()?;
    let sim = simulate_full(&config.sim)?;
    let data = encode(&sim.traces, scheme)?;
    let split_seed = if config.resplit_per_trial { seed } else { config.split_seed };
    let p = prepare(&data, config, split_seed)?;
    let init = nguyen_widrow_init(scheme.n_columns(), config.n_hidden_init, seed)?;
    let trained = train(&init, &p.learn, &config.train)?;
    let (params, removal_log) = if prune {
        let pruned = prune_and_retrain(&trained.params, &p.learn, &p.val, &config.train, &config.prune)?;
        (pruned.params, pruned.removal_log)
    } else {
        (trained.params, Vec::new())
    };
    let learn_rmse = rmse(&residuals(&params, &p.learn)?);
    let val_rmse = rmse(&residuals(&params, &p.val)?);
    let model = ModelFile::new(&params, p.learn.column_names(), Some(p.scaler.clone()));
    Ok(FittedModel {
        scheme,
        seed,
        params,
        scaler: p.scaler,
        model,
        history: trained.history,
        removal_log,
        learn_rmse,
        val_rmse,
    })
}

pub fn bottleneck_report(config: &StudyConfig, run: &crate::sim::SimRun) -> Result<BottleneckReport> {
    let utilizations = run
        .station_utilizations(run.end_time)?
        .into_iter()
        .map(|(s, u)| (s.name().to_string(), u))
        .collect();
    let history = run.utilization_history(config.utilization_periods)?;
    let bottlenecks = classify_bottlenecks(
        &history,
        crate::reduction::DEFAULT_SATURATION,
        crate::reduction::DEFAULT_STRUCTURAL_FRACTION,
    )?;
    let synchronization = synchronization_stations(&sawmill_routings(), &bottlenecks.all()).into_iter().collect();
    Ok(BottleneckReport { utilizations, bottlenecks, synchronization })
}

/// Runs the whole study in memory.
pub fn run_study(config: &StudyConfig, execution: Execution) -> Result<StudyRun> {
    config.validate()?;
    let sim = simulate_full(&config.sim)?;
    let traces = sim.traces.clone();
    let bottlenecks = bottleneck_report(config, &sim)?;
    let mut schemes = Vec::new();
    let mut artifacts = Vec::new();
    let mut best: Option<(EncodingScheme, usize, f64, MlpParams, Scaler)> = None;

    for &scheme in &config.schemes {
        let data = encode(&traces, scheme)?;
        let shared = if config.resplit_per_trial { None } else { Some(prepare(&data, config, config.split_seed)?) };
        let job = |trial: usize| run_trial(config, scheme, &data, shared.as_ref(), &traces, trial);
        let results: Vec<TrialResult> = match execution {
            Execution::Parallel => (0..config.n_trials).into_par_iter().map(job).collect(),
            Execution::Sequential => (0..config.n_trials).map(job).collect(),
        };

        let ok: Vec<&TrialResult> = results.iter().filter(|r| r.record.moments.is_some()).collect();
        let moments: Vec<TrialMoments> = ok.iter().map(|r| r.record.moments.unwrap()).collect();
        let summary = SummaryTable::from_moments(&moments).ok();
        let correlation = if ok.is_empty() {
            None
        } else {
            // Correlations use each trial's own learning set.
            let learn_sets: Vec<Dataset> = ok
                .iter()
                .map(|r| -> Result<Dataset> {
                    match &shared {
                        Some(p) => Ok(p.learn.clone()),
                        None => Ok(prepare(&data, config, r.record.seed)?.learn),
                    }
                })
                .collect::<Result<_>>()?;
            let pairs: Vec<(&Dataset, &[f64])> =
                learn_sets.iter().zip(&ok).map(|(d, r)| (d, r.artifacts.learn_residuals.as_slice())).collect();
            Some(correlation_table(&pairs)?)
        };
        let trials: Vec<TrialRecord> = results.iter().map(|r| r.record.clone()).collect();
        let stats = scheme_stats(scheme, &trials, config.mean_threshold);

        let preferred = scheme == EncodingScheme::A3BinaryPlusComplement
            || !config.schemes.contains(&EncodingScheme::A3BinaryPlusComplement);
        if preferred {
            for r in &ok {
                let v = r.record.val_rmse;
                if best.as_ref().is_none_or(|b| b.0 != scheme || v < b.2) {
                    let scaler = r.artifacts.model.as_ref().and_then(|m| m.scaler.clone()).expect("ok trials carry a scaler");
                    best = Some((scheme, r.record.trial, v, r.params.clone().expect("ok trials carry params"), scaler));
                }
            }
        }
        schemes.push(SchemeReport { scheme, summary, correlation, trials, stats });
        artifacts.push(results.into_iter().map(|r| r.artifacts).collect());
    }

    let comparison = compare_schemes(&schemes.iter().map(|s| s.stats).collect::<Vec<_>>());
    let reduced = match (&best, config.reduced_repeats) {
        (Some((scheme, trial, val_rmse, params, scaler)), repeats) if repeats > 0 => {
            let surrogate = Surrogate::new(params.clone(), *scheme, scaler.clone())?;
            let comparison = compare_with_full(&config.sim, &surrogate, repeats)?;
            Some(ReducedReport { scheme: *scheme, trial: *trial, val_rmse: *val_rmse, comparison })
        }
        _ => None,
    };
    let report = StudyReport {
        provenance: Provenance {
            config_sha256: config.hash(),
            base_seed: config.base_seed,
            trial_seeds: (0..config.n_trials).map(|k| config.trial_seed(k)).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        n_traces: traces.len(),
        bottlenecks,
        schemes,
        comparison,
        reduced,
    };
    Ok(StudyRun { config: config.clone(), report, traces, artifacts })
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Checks that `dir` exists (creating it if needed) and accepts files.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let probe = dir.join(".millreduce-write-check");
    write(probe.clone(), b"")?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn trials_csv(trials: &[TrialRecord]) -> String {
    let mut out = String::from(
        "trial,seed,learn_mean,learn_std,val_mean,val_std,learn_rmse,val_rmse,active_inputs,active_hidden,\
         active_weights,removals,t_statistic,t_p_value,t_reject,f_statistic,f_p_value,f_reject,error\n",
    );
    for t in trials {
        let m = t.moments;
        let s = t.structure;
        let test = |o: Option<TestOutcome>| match o {
            Some(o) => format!("{},{},{}", o.statistic, o.p_value, o.reject_h0),
            None => ",,".to_string(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            t.trial,
            t.seed,
            opt(m.map(|m| m.learn_mean)),
            opt(m.map(|m| m.learn_std)),
            opt(m.map(|m| m.val_mean)),
            opt(m.map(|m| m.val_std)),
            t.learn_rmse,
            t.val_rmse,
            s.map(|s| s.active_inputs.to_string()).unwrap_or_default(),
            s.map(|s| s.active_hidden.to_string()).unwrap_or_default(),
            s.map(|s| s.active_weights.to_string()).unwrap_or_default(),
            t.removals_accepted,
            test(t.rqm_t_test),
            test(t.rqm_f_test),
            t.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
    }
    out
}

pub fn comparison_csv(stats: &[SchemeStats]) -> String {
    let mut out = String::from(
        "rank,scheme,trials_ok,mean_abs_val_mean,frac_mean_below,frac_t_not_rejected,frac_f_not_rejected\n",
    );
    for (k, s) in stats.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            k + 1,
            s.scheme.token(),
            s.n_ok,
            s.mean_abs_val_mean,
            s.frac_mean_below,
            s.frac_t_not_rejected,
            s.frac_f_not_rejected
        );
    }
    out
}

/// Plain-text report of the whole study.
pub fn report_text(report: &StudyReport, threshold: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "millreduce study report");
    let _ = writeln!(out, "config sha256: {}", report.provenance.config_sha256);
    let _ = writeln!(out, "version: {}", report.provenance.version);
    let _ = writeln!(out, "products simulated: {}\n", report.n_traces);

    let b = &report.bottlenecks;
    let _ = writeln!(out, "Station utilization");
    for (name, u) in &b.utilizations {
        let _ = writeln!(out, "  {name:<10}{u:>8.4}");
    }
    let join = |s: &mut dyn Iterator<Item = &String>| s.cloned().collect::<Vec<_>>().join(", ");
    let _ = writeln!(out, "structural bottlenecks:   {}", join(&mut b.bottlenecks.structural.iter()));
    let _ = writeln!(out, "conjunctural bottlenecks: {}", join(&mut b.bottlenecks.conjunctural.iter()));
    let _ = writeln!(out, "synchronization stations: {}\n", join(&mut b.synchronization.iter()));

    for s in &report.schemes {
        let _ = writeln!(out, "== Scheme {} ==", s.scheme);
        match &s.summary {
            Some(t) => out.push_str(&t.to_text(&format!("Mean and standard deviation of the residuals ({})", s.scheme.token()))),
            None => out.push_str("no successful trial\n"),
        }
        out.push('\n');
        if let Some(c) = &s.correlation {
            out.push_str(&c.to_text(&format!("Correlation between inputs and residuals ({})", s.scheme.token())));
            out.push('\n');
        }
        let st = &s.stats;
        let _ = writeln!(out, "trials ok: {}/{}", st.n_ok, s.trials.len());
        let _ = writeln!(out, "|learning mean| < {threshold} s in {:.2}% of trials", 100.0 * st.frac_mean_below);
        let _ = writeln!(out, "RQM split t test keeps equal means in {:.2}% of trials", 100.0 * st.frac_t_not_rejected);
        let _ = writeln!(out, "RQM split F test keeps equal variances in {:.2}% of trials\n", 100.0 * st.frac_f_not_rejected);
    }

    let _ = writeln!(out, "Scheme ranking (mean |validation mean residual|)");
    for (k, s) in report.comparison.iter().enumerate() {
        let _ = writeln!(
            out,
            "  {}. {:<4}{:>10.3} s   below-threshold {:>6.2}%   t kept {:>6.2}%",
            k + 1,
            s.scheme.token(),
            s.mean_abs_val_mean,
            100.0 * s.frac_mean_below,
            100.0 * s.frac_t_not_rejected
        );
    }
    if let Some(r) = &report.reduced {
        let c = &r.comparison;
        let _ = writeln!(out, "\nReduced model (scheme {}, trial {})", r.scheme.token(), r.trial);
        let _ = writeln!(out, "  validation RMSE:           {:.3} s", r.val_rmse);
        let _ = writeln!(out, "  arrival-time MAE:          {:.3} s over {} products", c.arrival_mae, c.n_products);
        let _ = writeln!(
            out,
            "  wall time full / reduced:  {:.3} ms / {:.3} ms (ratio {:.3})",
            1e3 * c.full_seconds,
            1e3 * c.reduced_seconds,
            c.time_ratio()
        );
    }
    out
}

/// Scatter of learning residuals against the conveyor, as SVG.
pub fn residual_scatter_svg(residuals: &[f64], rqm: &[Rqm], title: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 50.0;
    let lo = residuals.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let y = |r: f64| H - PAD - (r - lo) / span * (H - 2.0 * PAD);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(out, r#"<line x1="{PAD}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="gray"/>"#, y(0.0), W - PAD);
    let _ = writeln!(out, r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{hi:.0}</text>"#, PAD - 4.0, y(hi));
    let _ = writeln!(out, r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{lo:.0}</text>"#, PAD - 4.0, y(lo));
    for (label, centre) in [("RQM4", W * 0.33), ("RQM5", W * 0.67)] {
        let _ = writeln!(out, r#"<text x="{centre}" y="{}" text-anchor="middle" font-size="12">{label}</text>"#, H - PAD / 2.0);
    }
    for (r, q) in residuals.iter().zip(rqm) {
        let centre = if *q == Rqm::Rqm4 { W * 0.33 } else { W * 0.67 };
        let x = centre + rng.random_range(-40.0..40.0);
        let _ = writeln!(out, r#"<circle cx="{x:.1}" cy="{:.1}" r="1.2" fill-opacity="0.4"/>"#, y(*r));
    }
    out.push_str("</svg>\n");
    out
}

/// Writes every artifact of `run` below `dir`.
pub fn write_artifacts(run: &StudyRun, dir: &Path) -> Result<()> {
    ensure_writable(dir)?;
    let report = &run.report;
    write(dir.join("config.toml"), run.config.to_toml()?)?;
    write(dir.join("traces.csv"), crate::sim::traces_to_csv(&run.traces)?)?;
    write(dir.join("comparison.csv"), comparison_csv(&report.comparison))?;
    write(dir.join("report.txt"), report_text(report, run.config.mean_threshold))?;
    write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    for (s, arts) in report.schemes.iter().zip(&run.artifacts) {
        let sdir = dir.join(s.scheme.token());
        let mdir = sdir.join("models");
        create_dir(&mdir)?;
        if let Some(t) = &s.summary {
            write(sdir.join("summary.csv"), t.to_csv())?;
        }
        if let Some(c) = &s.correlation {
            write(sdir.join("correlation.csv"), c.to_csv())?;
        }
        write(sdir.join("trials.csv"), trials_csv(&s.trials))?;
        for (t, a) in s.trials.iter().zip(arts) {
            if let Some(m) = &a.model {
                m.write(&mdir.join(format!("trial_{:02}.json", t.trial)))?;
                write(mdir.join(format!("train_history_{:02}.csv", t.trial)), a.history.to_csv())?;
                write(mdir.join(format!("removal_log_{:02}.csv", t.trial)), removal_log_csv(&a.removal_log))?;
            }
        }
        let best = s
            .trials
            .iter()
            .zip(arts)
            .filter(|(t, _)| t.moments.is_some())
            .min_by(|a, b| a.0.val_rmse.total_cmp(&b.0.val_rmse));
        if let Some((t, a)) = best {
            let title = format!("Learning residuals by conveyor, scheme {} trial {}", s.scheme.token(), t.trial);
            write(sdir.join("residuals_rqm.svg"), residual_scatter_svg(&a.learn_residuals, &a.learn_rqm, &title))?;
        }
    }
    Ok(())
}
