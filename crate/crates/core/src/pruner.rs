//! Saliency-guided backward elimination of network parameters.
//!
//! Each round removes the active parameter whose zeroing raises the learning
//! SSE the least, retrains briefly, and keeps the removal only while the
//! validation RMSE stays within `val_degradation_limit` times the best seen.
//! The first rejected removal ends the procedure.

use serde::{Deserialize, Serialize};

use crate::encoding::Dataset;
use crate::error::{Error, Result};
use crate::mlp::{activation, MlpParams, ParamKind};
use crate::trainer::{residuals, rmse, train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// Accept a removal while validation RMSE <= limit * best so far.
    pub val_degradation_limit: f64,
    pub retrain_iterations: usize,
    /// `None` removes until the validation guard trips.
    pub max_removals: Option<usize>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { val_degradation_limit: 1.02, retrain_iterations: 30, max_removals: None }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_degradation_limit >= 1.0 && self.val_degradation_limit.is_finite()) {
            return Err(Error::invalid("validation degradation limit must be >= 1"));
        }
        if self.retrain_iterations == 0 || self.max_removals == Some(0) {
            return Err(Error::invalid("pruning counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalRecord {
    pub step: usize,
    pub weight_id: usize,
    pub saliency: f64,
    pub val_rmse: f64,
    pub accepted: bool,
    /// Active parameter count of the model kept after this step.
    pub active_weights: usize,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub params: MlpParams,
    pub removal_log: Vec<RemovalRecord>,
    /// Smallest validation RMSE observed during the procedure.
    pub best_val_rmse: f64,
    pub final_val_rmse: f64,
}

pub fn removal_log_csv(log: &[RemovalRecord]) -> String {
    let mut out = String::from("step,weight_id,val_rmse,accepted\n");
    for r in log {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.weight_id, r.val_rmse, r.accepted));
    }
    out
}

/// SSE increase on `learn` caused by zeroing each active parameter alone.
///
/// Returned in the order of [`MlpParams::active_indices`], paired with the
/// canonical index. Uses the dataset's stored (possibly scaled) targets.
pub fn saliency(params: &MlpParams, learn: &Dataset) -> Result<Vec<(usize, f64)>> {
    if params.n_inputs() != learn.n_cols() {
        return Err(Error::invalid("model and dataset widths differ"));
    }
    let active = params.active_indices();
    let kinds: Vec<ParamKind> = active.iter().map(|&i| params.kind(i)).collect();
    let nh = params.n_hidden();
    let n_in = params.n_inputs();
    let w1 = params.hidden_weights();
    let b1 = params.hidden_biases();
    let w2 = params.output_weights();
    let mut z = vec![0.0; nh];
    let mut g = vec![0.0; nh];
    let mut acc = vec![0.0; active.len()];
    for (x, y) in learn.rows().zip(learn.targets()) {
        let mut yhat = params.output_bias();
        for i in 0..nh {
            z[i] = w1[i * n_in..(i + 1) * n_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[i];
            g[i] = activation(z[i]);
            yhat += w2[i] * g[i];
        }
        let r = y - yhat;
        for (a, kind) in acc.iter_mut().zip(&kinds) {
            let dy = match *kind {
                ParamKind::HiddenWeight { neuron, input } => {
                    w2[neuron] * (activation(z[neuron] - w1[neuron * n_in + input] * x[input]) - g[neuron])
                }
                ParamKind::HiddenBias { neuron } => w2[neuron] * (activation(z[neuron] - b1[neuron]) - g[neuron]),
                ParamKind::OutputWeight { neuron } => -w2[neuron] * g[neuron],
                ParamKind::OutputBias => -params.output_bias(),
            };
            // (r - dy)^2 - r^2
            *a += dy * dy - 2.0 * r * dy;
        }
    }
    Ok(active.into_iter().zip(acc).collect())
}

fn val_rmse(params: &MlpParams, val: &Dataset) -> Result<f64> {
    Ok(rmse(&residuals(params, val)?))
}

pub fn prune_and_retrain(
    params: &MlpParams,
    learn: &Dataset,
    val: &Dataset,
    tcfg: &TrainConfig,
    pcfg: &PruneConfig,
) -> Result<PruneOutcome> {
    pcfg.validate()?;
    tcfg.validate()?;
    if val.is_empty() || learn.is_empty() {
        return Err(Error::invalid("pruning needs non-empty learning and validation sets"));
    }
    let retrain_cfg = TrainConfig { max_iterations: pcfg.retrain_iterations, ..tcfg.clone() };
    let limit = pcfg.val_degradation_limit;
    let mut current = params.clone();
    let mut best = val_rmse(&current, val)?;
    let mut min_seen = best;
    let mut log = Vec::new();
    let output_bias = current.output_bias_index();

    for step in 0..pcfg.max_removals.unwrap_or(usize::MAX) {
        let Some((weight_id, sal)) = saliency(&current, learn)?
            .into_iter()
            .filter(|&(idx, _)| idx != output_bias)
            .min_by(|a, b| a.1.total_cmp(&b.1))
        else {
            break;
        };
        let mut trial = current.clone();
        trial.mask(weight_id);
        trial.mask_dead_neurons();
        let retrained = match train(&trial, learn, &retrain_cfg) {
            Ok(out) => Some(out.params),
            Err(e) => {
                log::debug!("retraining after removing {weight_id} failed: {e}");
                None
            }
        };
        let (v, accepted) = match &retrained {
            Some(p) => {
                let v = val_rmse(p, val)?;
                min_seen = min_seen.min(v);
                (v, v <= limit * best)
            }
            None => (f64::INFINITY, false),
        };
        if accepted {
            current = retrained.expect("accepted removals have a retrained model");
            best = best.min(v);
        }
        log.push(RemovalRecord {
            step,
            weight_id,
            saliency: sal,
            val_rmse: v,
            accepted,
            active_weights: current.effective_structure().active_weights,
        });
        if !accepted {
            break;
        }
    }

    let mut final_val = val_rmse(&current, val)?;
    if let Ok(full) = train(&current, learn, tcfg) {
        let v = val_rmse(&full.params, val)?;
        if v <= limit * min_seen.min(v) {
            min_seen = min_seen.min(v);
            current = full.params;
            final_val = v;
        }
    }
    Ok(PruneOutcome { params: current, removal_log: log, best_val_rmse: min_seen, final_val_rmse: final_val })
}
