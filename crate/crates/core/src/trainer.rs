//! Batch Levenberg-Marquardt with an outlier-robust criterion.
//!
//! Robust training is iteratively reweighted Huber M-estimation. The scale is
//! the normalized MAD of the current residuals, and each accepted step
//! refreshes the weights `min(1, k*s/|r|)`. The scale used inside one run is
//! non-increasing; because the Huber loss is monotone in its threshold, the
//! recorded cost sequence of accepted steps stays strictly decreasing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encoding::Dataset;
use crate::error::{Error, Result};
use crate::mlp::MlpParams;

/// Damping is kept inside this band; hitting the upper end means the
/// optimizer has stalled.
const MIN_DAMPING: f64 = 1e-15;
const MAX_DAMPING: f64 = 1e16;
const RIDGE: f64 = 1e-12;
const MAD_NORMALIZER: f64 = 0.6745;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub robust: bool,
    /// Huber tuning constant `k`, in units of the robust scale.
    pub robust_tuning: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            initial_damping: 1e-2,
            damping_up: 10.0,
            damping_down: 0.1,
            gradient_tolerance: 1e-6,
            step_tolerance: 1e-8,
            robust: true,
            robust_tuning: 1.345,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.initial_damping,
            self.damping_up,
            self.damping_down,
            self.gradient_tolerance,
            self.step_tolerance,
            self.robust_tuning,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("training parameters must be positive and finite"));
        }
        if !(self.damping_up > 1.0 && self.damping_down < 1.0) {
            return Err(Error::invalid("damping factors must satisfy up > 1 > down > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Criterion value of the current parameters after this iteration.
    pub cost: f64,
    /// Damping to be used by the next iteration.
    pub damping: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_cost: f64,
    pub records: Vec<IterationRecord>,
}

impl TrainHistory {
    pub fn accepted_costs(&self) -> Vec<f64> {
        std::iter::once(self.initial_cost)
            .chain(self.records.iter().filter(|r| r.accepted).map(|r| r.cost))
            .collect()
    }

    pub fn final_cost(&self) -> f64 {
        self.records.last().map_or(self.initial_cost, |r| r.cost)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,cost,damping,step_norm,accepted\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, r.cost, r.damping, r.step_norm, r.accepted
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxIterations,
    GradientTolerance,
    StepTolerance,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M = MlpParams> {
    pub params: M,
    pub history: TrainHistory,
    pub stop: StopReason,
}

/// A model whose scalar output is differentiable in a set of free parameters.
pub trait LeastSquaresModel: Clone {
    fn n_inputs(&self) -> usize;
    /// Indices of the parameters the optimizer may change.
    fn free_parameters(&self) -> Vec<usize>;
    fn parameter(&self, index: usize) -> f64;
    fn set_parameter(&mut self, index: usize, value: f64);
    fn predict(&self, x: &[f64]) -> f64;
    fn scratch_len(&self) -> usize {
        0
    }
    /// Returns the prediction and writes `d prediction / d theta[free[k]]` into `out[k]`.
    fn predict_with_gradient(&self, x: &[f64], free: &[usize], scratch: &mut [f64], out: &mut [f64]) -> f64;
}

impl LeastSquaresModel for MlpParams {
    fn n_inputs(&self) -> usize {
        MlpParams::n_inputs(self)
    }

    fn free_parameters(&self) -> Vec<usize> {
        self.active_indices()
    }

    fn parameter(&self, index: usize) -> f64 {
        self.param(index)
    }

    fn set_parameter(&mut self, index: usize, value: f64) {
        self.set_param(index, value);
    }

    fn predict(&self, x: &[f64]) -> f64 {
        MlpParams::predict(self, x)
    }

    fn scratch_len(&self) -> usize {
        2 * self.n_hidden()
    }

    fn predict_with_gradient(&self, x: &[f64], free: &[usize], scratch: &mut [f64], out: &mut [f64]) -> f64 {
        MlpParams::predict_with_gradient(self, x, free, scratch, out)
    }
}

fn check_shape<M: LeastSquaresModel>(model: &M, data: &Dataset) -> Result<()> {
    if model.n_inputs() != data.n_cols() {
        return Err(Error::invalid(format!(
            "model expects {} inputs, dataset has {} columns",
            model.n_inputs(),
            data.n_cols()
        )));
    }
    Ok(())
}

fn scaled_residuals<M: LeastSquaresModel>(model: &M, data: &Dataset) -> Vec<f64> {
    data.rows()
        .zip(data.targets())
        .map(|(x, y)| y - model.predict(x))
        .collect()
}

/// `target - prediction` for every row, in the original target units.
pub fn residuals(params: &MlpParams, data: &Dataset) -> Result<Vec<f64>> {
    check_shape(params, data)?;
    let unit = data.target_unit();
    Ok(scaled_residuals(params, data).into_iter().map(|r| r * unit).collect())
}

pub fn rmse(residuals: &[f64]) -> f64 {
    (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Normalized median absolute deviation, `MAD / 0.6745`.
pub fn robust_scale(residuals: &[f64]) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::invalid("robust scale of an empty residual set"));
    }
    let mut tmp = residuals.to_vec();
    let med = median(&mut tmp);
    for (t, r) in tmp.iter_mut().zip(residuals) {
        *t = (r - med).abs();
    }
    Ok(median(&mut tmp) / MAD_NORMALIZER)
}

/// Huber weights `min(1, threshold / |r|)`.
pub fn huber_weights(residuals: &[f64], threshold: f64) -> Vec<f64> {
    residuals
        .iter()
        .map(|r| if r.abs() <= threshold { 1.0 } else { threshold / r.abs() })
        .collect()
}

/// Huber weights with threshold `tuning * robust_scale(residuals)`. A zero
/// scale yields unit weights.
pub fn robust_sample_weights(residuals: &[f64], tuning: f64) -> Result<Vec<f64>> {
    let s = robust_scale(residuals)?;
    if s == 0.0 {
        return Ok(vec![1.0; residuals.len()]);
    }
    Ok(huber_weights(residuals, tuning * s))
}

fn huber_loss(r: f64, threshold: f64) -> f64 {
    let a = r.abs();
    if a <= threshold {
        r * r
    } else {
        2.0 * threshold * a - threshold * threshold
    }
}

#[derive(Debug, Clone, Copy)]
enum Criterion<'a> {
    WeightedSse(&'a [f64]),
    Huber(f64),
}

fn criterion_value<M: LeastSquaresModel>(model: &M, data: &Dataset, criterion: Criterion<'_>) -> f64 {
    let rows = data.rows().zip(data.targets());
    match criterion {
        Criterion::WeightedSse(w) => rows
            .zip(w)
            .map(|((x, y), w)| {
                let r = y - model.predict(x);
                w * r * r
            })
            .sum(),
        Criterion::Huber(c) => rows.map(|(x, y)| huber_loss(y - model.predict(x), c)).sum(),
    }
}

/// `J^T W J` (dense, symmetric) and `J^T W r` over the free parameters.
pub(crate) struct NormalEquations {
    pub(crate) free: Vec<usize>,
    pub(crate) jtwj: Vec<f64>,
    pub(crate) jtwr: Vec<f64>,
}

pub(crate) fn normal_equations<M: LeastSquaresModel>(
    model: &M,
    data: &Dataset,
    weights: &[f64],
) -> NormalEquations {
    let free = model.free_parameters();
    let p = free.len();
    let mut jtwj = vec![0.0; p * p];
    let mut jtwr = vec![0.0; p];
    let mut jac = vec![0.0; p];
    let mut scratch = vec![0.0; model.scratch_len()];
    for ((x, y), &w) in data.rows().zip(data.targets()).zip(weights) {
        let pred = model.predict_with_gradient(x, &free, &mut scratch, &mut jac);
        let r = y - pred;
        for j in 0..p {
            let wj = w * jac[j];
            jtwr[j] += wj * r;
            for (a, &jk) in jtwj[j * p + j..(j + 1) * p].iter_mut().zip(&jac[j..]) {
                *a += wj * jk;
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            jtwj[j * p + k] = jtwj[k * p + j];
        }
    }
    NormalEquations { free, jtwj, jtwr }
}

impl NormalEquations {
    /// Solves `(A + damping * diag(A)) delta = J^T W r`.
    pub(crate) fn damped_step(&self, damping: f64) -> Result<Vec<f64>> {
        let p = self.free.len();
        if p == 0 {
            return Ok(Vec::new());
        }
        let mut m = DMatrix::from_row_slice(p, p, &self.jtwj);
        for j in 0..p {
            m[(j, j)] += damping * self.jtwj[j * p + j];
        }
        let rhs = DVector::from_column_slice(&self.jtwr);
        if let Some(chol) = m.clone().cholesky() {
            return Ok(chol.solve(&rhs).iter().copied().collect());
        }
        let max_diag = (0..p).map(|j| m[(j, j)].abs()).fold(1.0, f64::max);
        for j in 0..p {
            m[(j, j)] += RIDGE * max_diag;
        }
        match m.cholesky() {
            Some(chol) => Ok(chol.solve(&rhs).iter().copied().collect()),
            None => Err(Error::NumericalFailure(format!(
                "normal equations not positive definite at damping {damping:e}"
            ))),
        }
    }
}

fn apply_step<M: LeastSquaresModel>(model: &M, free: &[usize], delta: &[f64]) -> M {
    let mut next = model.clone();
    for (&idx, d) in free.iter().zip(delta) {
        next.set_parameter(idx, model.parameter(idx) + d);
    }
    next
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct LmStep<M> {
    pub candidate: M,
    pub new_damping: f64,
    pub accepted: bool,
    pub cost_before: f64,
    pub cost_after: f64,
    pub step_norm: f64,
}

/// One damped Gauss-Newton step on the weighted sum of squared residuals.
///
/// On acceptance `candidate` holds the updated model and damping shrinks by
/// `config.damping_down`; on rejection `candidate` is the unchanged model and
/// damping grows by `config.damping_up`.
pub fn lm_iteration<M: LeastSquaresModel>(
    model: &M,
    data: &Dataset,
    damping: f64,
    weights: &[f64],
    config: &TrainConfig,
) -> Result<LmStep<M>> {
    check_shape(model, data)?;
    if !(damping > 0.0) {
        return Err(Error::invalid("damping must be positive"));
    }
    if weights.len() != data.n_rows() || weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("weights must be positive, one per row"));
    }
    let ne = normal_equations(model, data, weights);
    let cost_before = criterion_value(model, data, Criterion::WeightedSse(weights));
    let delta = ne.damped_step(damping)?;
    let step_norm = norm(&delta);
    let candidate = apply_step(model, &ne.free, &delta);
    let cost_after = criterion_value(&candidate, data, Criterion::WeightedSse(weights));
    let accepted = cost_after < cost_before || (step_norm == 0.0 && cost_after <= cost_before);
    Ok(if accepted {
        LmStep {
            candidate,
            new_damping: (damping * config.damping_down).max(MIN_DAMPING),
            accepted,
            cost_before,
            cost_after,
            step_norm,
        }
    } else {
        LmStep {
            candidate: model.clone(),
            new_damping: (damping * config.damping_up).min(MAX_DAMPING),
            accepted,
            cost_before,
            cost_after: cost_before,
            step_norm,
        }
    })
}

/// Robust state: current Huber threshold and the weights derived from it.
struct RobustState {
    tuning: f64,
    scale: Option<f64>,
}

impl RobustState {
    /// Refreshes the scale (never increasing it) and returns the threshold
    /// and weights for `residuals`.
    fn reweight(&mut self, residuals: &[f64]) -> (f64, Vec<f64>) {
        let s = robust_scale(residuals).unwrap_or(0.0);
        if s > 0.0 {
            self.scale = Some(self.scale.map_or(s, |old| old.min(s)));
        }
        match self.scale {
            Some(s) => {
                let c = self.tuning * s;
                (c, huber_weights(residuals, c))
            }
            None => (f64::INFINITY, vec![1.0; residuals.len()]),
        }
    }
}

/// Levenberg-Marquardt training from `init`.
///
/// Stops after `max_iterations` LM iterations, when the weighted gradient
/// norm drops below `gradient_tolerance`, when an accepted step is shorter
/// than `step_tolerance`, or when damping saturates. Pure in its inputs.
pub fn train<M: LeastSquaresModel>(init: &M, learn: &Dataset, config: &TrainConfig) -> Result<TrainOutcome<M>> {
    config.validate()?;
    check_shape(init, learn)?;
    if learn.is_empty() {
        return Err(Error::invalid("learning set is empty"));
    }
    let mut model = init.clone();
    let mut robust = config.robust.then_some(RobustState { tuning: config.robust_tuning, scale: None });
    let residuals = scaled_residuals(&model, learn);
    let (mut threshold, mut weights) = match robust.as_mut() {
        Some(state) => state.reweight(&residuals),
        None => (f64::INFINITY, vec![1.0; learn.n_rows()]),
    };
    let mut cost = criterion_value(&model, learn, Criterion::Huber(threshold));
    if !cost.is_finite() {
        return Err(Error::invalid("initial cost is not finite"));
    }
    let mut history = TrainHistory { initial_cost: cost, records: Vec::new() };
    let mut damping = config.initial_damping;
    let mut ne = normal_equations(&model, learn, &weights);
    let mut stop = StopReason::MaxIterations;

    for iteration in 0..config.max_iterations {
        if norm(&ne.jtwr) < config.gradient_tolerance {
            stop = StopReason::GradientTolerance;
            break;
        }
        let (accepted, step_norm) = match ne.damped_step(damping) {
            Ok(delta) => {
                let step_norm = norm(&delta);
                let candidate = apply_step(&model, &ne.free, &delta);
                let candidate_cost = criterion_value(&candidate, learn, Criterion::Huber(threshold));
                if candidate_cost < cost {
                    model = candidate;
                    (true, step_norm)
                } else {
                    (false, step_norm)
                }
            }
            Err(Error::NumericalFailure(msg)) => {
                log::debug!("iteration {iteration}: {msg}");
                (false, f64::INFINITY)
            }
            Err(e) => return Err(e),
        };
        if accepted {
            damping = (damping * config.damping_down).max(MIN_DAMPING);
            if let Some(state) = robust.as_mut() {
                (threshold, weights) = state.reweight(&scaled_residuals(&model, learn));
            }
            cost = criterion_value(&model, learn, Criterion::Huber(threshold));
        } else {
            damping = (damping * config.damping_up).min(MAX_DAMPING);
        }
        history.records.push(IterationRecord { iteration, cost, damping, step_norm, accepted });
        if accepted {
            if step_norm < config.step_tolerance {
                stop = StopReason::StepTolerance;
                break;
            }
            ne = normal_equations(&model, learn, &weights);
        } else if damping >= MAX_DAMPING {
            stop = StopReason::Stalled;
            break;
        }
    }
    Ok(TrainOutcome { params: model, history, stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::nguyen_widrow_init;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// y = theta * x
    #[derive(Clone)]
    struct Line {
        theta: f64,
    }

    impl LeastSquaresModel for Line {
        fn n_inputs(&self) -> usize {
            1
        }
        fn free_parameters(&self) -> Vec<usize> {
            vec![0]
        }
        fn parameter(&self, _: usize) -> f64 {
            self.theta
        }
        fn set_parameter(&mut self, _: usize, value: f64) {
            self.theta = value;
        }
        fn predict(&self, x: &[f64]) -> f64 {
            self.theta * x[0]
        }
        fn predict_with_gradient(&self, x: &[f64], _: &[usize], _: &mut [f64], out: &mut [f64]) -> f64 {
            out[0] = x[0];
            self.theta * x[0]
        }
    }

    fn random_dataset(net: &MlpParams, n: usize, noise: f64, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..net.n_inputs()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<f64> =
            rows.iter().map(|x| net.predict(x) + noise * rng.random_range(-1.0..1.0)).collect();
        Dataset::from_rows(&rows, &targets).unwrap()
    }

    #[test]
    fn residuals_of_zero_network() {
        let data = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], &[0.0, 0.0, 0.0]).unwrap();
        let mut p = MlpParams::zeros(1, 2).unwrap();
        assert_eq!(residuals(&p, &data).unwrap(), vec![0.0; 3]);
        p.set_param(p.output_bias_index(), 1.5);
        let data = Dataset::from_rows(&[vec![1.0], vec![2.0]], &[4.0, -1.0]).unwrap();
        assert_eq!(residuals(&p, &data).unwrap(), vec![2.5, -2.5]);
    }

    #[test]
    fn residuals_match_per_sample_subtraction() {
        let net = nguyen_widrow_init(2, 3, 4).unwrap();
        let data = random_dataset(&net, 5, 0.3, 8);
        let trained = train(&net, &data, &TrainConfig { max_iterations: 5, ..Default::default() })
            .unwrap()
            .params;
        let r = residuals(&trained, &data).unwrap();
        for i in 0..5 {
            let x = data.row(i);
            let expected = data.targets()[i] - trained.forward(x).unwrap();
            assert_eq!(r[i], expected);
        }
    }

    #[test]
    fn residuals_dimension_mismatch() {
        let data = Dataset::from_rows(&[vec![1.0, 2.0]], &[0.0]).unwrap();
        assert!(residuals(&MlpParams::zeros(3, 1).unwrap(), &data).is_err());
    }

    #[test]
    fn robust_weights_degenerate_scale() {
        assert_eq!(robust_sample_weights(&[2.0; 6], 1.345).unwrap(), vec![1.0; 6]);
        assert!(robust_sample_weights(&[], 1.345).is_err());
    }

    #[test]
    fn robust_weights_downweight_outlier() {
        // median 0.1, MAD 0.2, s = 0.2/0.6745, threshold = 1.345 s ≈ 0.3988
        let w = robust_sample_weights(&[0.1, -0.1, 0.1, -0.1, 100.0], 1.345).unwrap();
        assert_eq!(&w[..4], &[1.0; 4]);
        let expected = 1.345 * 0.2 / 0.6745 / 100.0;
        assert!((w[4] - expected).abs() < 1e-15);
        assert!(w[4] < 0.05);
    }

    #[test]
    fn zero_residuals_give_zero_step() {
        let net = nguyen_widrow_init(3, 2, 1).unwrap();
        let data = random_dataset(&net, 20, 0.0, 2);
        let step = lm_iteration(&net, &data, 1e-2, &vec![1.0; 20], &TrainConfig::default()).unwrap();
        assert!(step.accepted);
        assert_eq!(step.step_norm, 0.0);
        assert_eq!(step.cost_after, 0.0);
        assert_eq!(step.candidate, net);
    }

    #[test]
    fn single_parameter_step_matches_weighted_least_squares() {
        let xs = [0.5, 1.0, 1.5, 2.0, -1.0];
        let ys = [1.1, 1.9, 3.2, 3.9, -2.2];
        let ws = [1.0, 0.5, 2.0, 1.0, 0.25];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let data = Dataset::from_rows(&rows, &ys).unwrap();
        let closed_form = xs.iter().zip(&ys).zip(&ws).map(|((x, y), w)| w * x * y).sum::<f64>()
            / xs.iter().zip(&ws).map(|(x, w)| w * x * x).sum::<f64>();
        let step = lm_iteration(&Line { theta: -3.0 }, &data, 1e-14, &ws, &TrainConfig::default()).unwrap();
        assert!(step.accepted);
        assert!((step.candidate.theta - closed_form).abs() < 1e-10);
    }

    #[test]
    fn large_damping_approaches_scaled_gradient() {
        let net = nguyen_widrow_init(3, 3, 5).unwrap();
        let target = nguyen_widrow_init(3, 3, 6).unwrap();
        let data = random_dataset(&target, 40, 0.0, 7);
        let weights: Vec<f64> = (0..40).map(|i| 0.5 + (i % 3) as f64 * 0.25).collect();
        let ne = normal_equations(&net, &data, &weights);
        let p = ne.free.len();
        let scaled_grad: Vec<f64> = (0..p).map(|j| ne.jtwr[j] / ne.jtwj[j * p + j]).collect();
        let cosine = |d: &[f64]| {
            d.iter().zip(&scaled_grad).map(|(a, b)| a * b).sum::<f64>() / (norm(d) * norm(&scaled_grad))
        };
        let mut last = -1.0;
        for damping in [1e0, 1e2, 1e4, 1e6] {
            let c = cosine(&ne.damped_step(damping).unwrap());
            assert!(c >= last - 1e-12);
            last = c;
        }
        assert!(last > 1.0 - 1e-6);
    }

    #[test]
    fn lm_iteration_argument_checks() {
        let net = nguyen_widrow_init(2, 2, 1).unwrap();
        let data = Dataset::from_rows(&[vec![0.0, 1.0]], &[1.0]).unwrap();
        let cfg = TrainConfig::default();
        assert!(lm_iteration(&net, &data, 0.0, &[1.0], &cfg).is_err());
        assert!(lm_iteration(&net, &data, 1.0, &[0.0], &cfg).is_err());
        assert!(lm_iteration(&net, &data, 1.0, &[1.0, 1.0], &cfg).is_err());
    }

    #[test]
    fn one_sample_is_interpolated() {
        let net = nguyen_widrow_init(3, 4, 2).unwrap();
        let data = Dataset::from_rows(&[vec![0.2, -0.5, 0.9]], &[2.75]).unwrap();
        let out = train(&net, &data, &TrainConfig::default()).unwrap();
        assert!(residuals(&out.params, &data).unwrap()[0].abs() < 1e-6);
    }

    #[test]
    fn recovers_generator_network() {
        let generator = nguyen_widrow_init(3, 4, 100).unwrap();
        let data = random_dataset(&generator, 300, 0.01, 101);
        let out = train(&nguyen_widrow_init(3, 4, 102).unwrap(), &data, &TrainConfig::default()).unwrap();
        assert!(rmse(&residuals(&out.params, &data).unwrap()) <= 0.02);
    }

    #[test]
    fn non_finite_initial_cost_rejected() {
        let mut net = MlpParams::zeros(1, 1).unwrap();
        net.set_param(net.output_bias_index(), 1e200);
        let data = Dataset::from_rows(&[vec![0.0], vec![1.0]], &[-1e200, 1e200]).unwrap();
        let cfg = TrainConfig { robust: false, ..Default::default() };
        assert!(matches!(train(&net, &data, &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let net = MlpParams::zeros(1, 1).unwrap();
        let data = Dataset::from_rows(&[vec![0.0]], &[0.0]).unwrap();
        let cfg = TrainConfig { damping_up: 0.5, ..Default::default() };
        assert!(train(&net, &data, &cfg).is_err());
    }

    #[test]
    fn history_csv_header() {
        let net = nguyen_widrow_init(2, 2, 1).unwrap();
        let data = random_dataset(&net, 10, 0.1, 1);
        let out = train(&net, &data, &TrainConfig { max_iterations: 3, ..Default::default() }).unwrap();
        let csv = out.history.to_csv();
        assert!(csv.starts_with("iter,cost,damping,step_norm,accepted\n"));
        assert_eq!(csv.lines().count(), out.history.records.len() + 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn accepted_costs_strictly_decrease(seed in 0u64..1000, robust: bool) {
            let generator = nguyen_widrow_init(2, 3, seed).unwrap();
            let mut data = random_dataset(&generator, 60, 0.05, seed + 1);
            if seed % 2 == 0 {
                let mut targets = data.targets().to_vec();
                targets[3] += 25.0;
                data = Dataset::from_rows(&data.rows().map(<[f64]>::to_vec).collect::<Vec<_>>(), &targets).unwrap();
            }
            let cfg = TrainConfig { max_iterations: 40, robust, ..Default::default() };
            let out = train(&nguyen_widrow_init(2, 4, seed + 2).unwrap(), &data, &cfg).unwrap();
            let costs = out.history.accepted_costs();
            for pair in costs.windows(2) {
                prop_assert!(pair[1] < pair[0], "{:?}", pair);
            }
        }

        #[test]
        fn masked_parameters_stay_zero(seed in 0u64..1000) {
            let generator = nguyen_widrow_init(3, 2, seed).unwrap();
            let data = random_dataset(&generator, 40, 0.05, seed);
            let mut init = nguyen_widrow_init(3, 4, seed + 7).unwrap();
            let masked = [init.hidden_weight_index(1, 2), init.hidden_bias_index(3), init.output_weight_index(0)];
            for &m in &masked {
                init.mask(m);
            }
            let out = train(&init, &data, &TrainConfig { max_iterations: 20, ..Default::default() }).unwrap();
            for &m in &masked {
                prop_assert_eq!(out.params.param(m), 0.0);
                prop_assert!(!out.params.is_active(m));
            }
        }

        #[test]
        fn unit_weights_give_plain_sse(seed in 0u64..1000) {
            let net = nguyen_widrow_init(2, 3, seed).unwrap();
            let data = random_dataset(&nguyen_widrow_init(2, 2, seed + 1).unwrap(), 25, 0.1, seed);
            let ones = vec![1.0; 25];
            let sse: f64 = scaled_residuals(&net, &data).iter().map(|r| r * r).sum();
            let weighted = criterion_value(&net, &data, Criterion::WeightedSse(&ones));
            prop_assert!((weighted - sse).abs() <= 1e-12 * sse.max(1.0));
            let huber_inf = criterion_value(&net, &data, Criterion::Huber(f64::INFINITY));
            prop_assert!((huber_inf - sse).abs() <= 1e-12 * sse.max(1.0));
        }

        #[test]
        fn robust_weights_scale_equivariant(
            r in proptest::collection::vec(-50.0f64..50.0, 3..40),
            c in 0.01f64..100.0,
        ) {
            let w1 = robust_sample_weights(&r, 1.345).unwrap();
            let scaled: Vec<f64> = r.iter().map(|v| v * c).collect();
            let w2 = robust_sample_weights(&scaled, 1.345).unwrap();
            for (a, b) in w1.iter().zip(&w2) {
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!(*a > 0.0 && *a <= 1.0);
            }
        }

        #[test]
        fn training_is_deterministic(seed in 0u64..100) {
            let data = random_dataset(&nguyen_widrow_init(2, 2, seed).unwrap(), 30, 0.1, seed);
            let init = nguyen_widrow_init(2, 3, seed + 1).unwrap();
            let cfg = TrainConfig { max_iterations: 15, ..Default::default() };
            let a = train(&init, &data, &cfg).unwrap();
            let b = train(&init, &data, &cfg).unwrap();
            prop_assert_eq!(a.params, b.params);
            prop_assert_eq!(a.history, b.history);
        }
    }
}
