use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::time::Instant;

use super::{
    generate_logs, recent_busy_time, route, service_time, simulate_full, station_rng, EventCensus, LogEntity,
    ProductFeatures, ProductTrace, Rqm, SimConfig, SimRun, Snapshot, Station, TPiece, PRODUCTS_PER_LOG,
};
use crate::encoding::{EncodingScheme, Scaler};
use crate::error::{Error, Result};
use crate::mlp::{MlpParams, ModelFile};

/// Predicts scan-to-trimmer delays for the seven products of a log.
pub trait DelayModel {
    /// `products` are in product-index order; returns one delay per product.
    fn predict_log(&self, products: &[ProductFeatures]) -> Result<Vec<f64>>;
}

/// Replays the delays recorded by a full simulation.
#[derive(Debug, Clone)]
pub struct ReplayOracle {
    delays: HashMap<(usize, u8), f64>,
}

impl ReplayOracle {
    pub fn new(traces: &[ProductTrace]) -> Self {
        Self {
            delays: traces.iter().map(|t| ((t.features.log_id, t.features.product_index), t.delta_t)).collect(),
        }
    }
}

impl DelayModel for ReplayOracle {
    fn predict_log(&self, products: &[ProductFeatures]) -> Result<Vec<f64>> {
        products
            .iter()
            .map(|p| {
                self.delays
                    .get(&(p.log_id, p.product_index))
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("no recorded delay for product {}/{}", p.log_id, p.product_index)))
            })
            .collect()
    }
}

/// A trained network with the encoding and scaling it was fitted under.
#[derive(Debug, Clone)]
pub struct Surrogate {
    params: MlpParams,
    scheme: EncodingScheme,
    scaler: Scaler,
}

impl Surrogate {
    pub fn new(params: MlpParams, scheme: EncodingScheme, scaler: Scaler) -> Result<Self> {
        let n = scheme.n_columns();
        if params.n_inputs() != n || scaler.n_columns() != n {
            return Err(Error::invalid(format!(
                "scheme {scheme} has {n} columns but the model has {} inputs and the scaler {} columns",
                params.n_inputs(),
                scaler.n_columns()
            )));
        }
        Ok(Self { params, scheme, scaler })
    }

    pub fn from_model_file(model: &ModelFile, scheme: EncodingScheme) -> Result<Self> {
        let scaler = model.scaler.clone().ok_or_else(|| Error::invalid("model file carries no scaler"))?;
        Self::new(model.params()?, scheme, scaler)
    }

    pub fn predict(&self, features: &ProductFeatures) -> f64 {
        let mut raw = Vec::with_capacity(self.scheme.n_columns());
        self.scheme.encode_into(features, &mut raw);
        let mut x = vec![0.0; raw.len()];
        self.scaler.scale_row(&raw, &mut x);
        self.scaler.unscale_target(self.params.predict(&x))
    }
}

impl DelayModel for Surrogate {
    /// Products of a log differ only by category, so one pass per category.
    fn predict_log(&self, products: &[ProductFeatures]) -> Result<Vec<f64>> {
        let mut by_category: [Option<f64>; 3] = [None; 3];
        Ok(products
            .iter()
            .map(|p| *by_category[p.t_piece as usize].get_or_insert_with(|| self.predict(p)))
            .collect())
    }
}

/// A product's predicted trimmer-queue entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub log_id: usize,
    pub product_index: u8,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRun {
    pub logs: Vec<LogEntity>,
    pub routes: Vec<Rqm>,
    /// Trimmer-queue entries in service order.
    pub arrivals: Vec<Arrival>,
    /// Inputs each log was scanned with.
    pub features: Vec<ProductFeatures>,
    pub trimmer_busy: Vec<(f64, f64)>,
    pub end_time: f64,
    pub census: EventCensus,
}

/// Single FIFO server driven by known arrival times (Lindley recursion).
struct Trimmer {
    free_at: f64,
    /// Start times of admitted jobs that may not have started yet.
    starts: VecDeque<f64>,
    busy: Vec<(f64, f64)>,
    rng: rand_chacha::ChaCha8Rng,
}

impl Trimmer {
    fn admit(&mut self, config: &SimConfig, arrival: f64) {
        let start = arrival.max(self.free_at);
        let end = start + service_time(config, &mut self.rng, config.trimmer_time);
        self.free_at = end;
        self.starts.push_back(start);
        self.busy.push((start, end));
    }

    fn snapshot_at(&mut self, now: f64, window: f64) -> (usize, f64) {
        while self.starts.front().is_some_and(|&s| s <= now) {
            self.starts.pop_front();
        }
        let u = (recent_busy_time(&self.busy, now - window, now) / window).clamp(0.0, 1.0);
        (self.starts.len(), u)
    }
}

/// Conveyor occupancy inferred from predicted delays and nominal downstream
/// durations.
struct ConveyorEstimate {
    rqm: Rqm,
    leave_rqm: f64,
    enter_rqm7: f64,
    leave_rqm7: f64,
}

/// Runs the reduced line: only log scans and the trimmer are simulated, and
/// every other station is replaced by `model`.
pub fn simulate_reduced(config: &SimConfig, model: &dyn DelayModel) -> Result<ReducedRun> {
    let logs = generate_logs(config)?;
    let n = logs.len();
    let mut trimmer = Trimmer {
        free_at: f64::NEG_INFINITY,
        starts: VecDeque::new(),
        busy: Vec::with_capacity(n * PRODUCTS_PER_LOG),
        rng: station_rng(config.seed, Station::Trimmer.stream()),
    };
    let mut pending: BinaryHeap<Reverse<(u64, u64, usize, u8)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut arrivals = Vec::with_capacity(n * PRODUCTS_PER_LOG);
    let mut features = Vec::with_capacity(n * PRODUCTS_PER_LOG);
    let mut routes = Vec::with_capacity(n);
    let mut on_conveyors: Vec<ConveyorEstimate> = Vec::new();
    let kockums_tail = config.kockums_time + config.transfer_kockums;

    // Times are non-negative, so their bit patterns sort like the values.
    let admit_until = |limit: f64,
                           pending: &mut BinaryHeap<Reverse<(u64, u64, usize, u8)>>,
                           trimmer: &mut Trimmer,
                           arrivals: &mut Vec<Arrival>| {
        while let Some(&Reverse((bits, _, log_id, product_index))) = pending.peek() {
            let time = f64::from_bits(bits);
            if time > limit {
                break;
            }
            pending.pop();
            trimmer.admit(config, time);
            arrivals.push(Arrival { log_id, product_index, time });
        }
    };

    for log in &logs {
        let now = log.arrival_time;
        admit_until(now, &mut pending, &mut trimmer, &mut arrivals);
        let (q_trim, u_trim) = trimmer.snapshot_at(now, config.u_trim_window);
        on_conveyors.retain(|c| c.leave_rqm7 > now);
        let count = |r: Rqm| on_conveyors.iter().filter(|c| c.rqm == r && c.leave_rqm > now).count();
        let snap = Snapshot {
            q_trim,
            u_trim,
            q_rqm4: count(Rqm::Rqm4),
            q_rqm5: count(Rqm::Rqm5),
            q_rqm7: on_conveyors.iter().filter(|c| c.enter_rqm7 <= now && now < c.leave_rqm7).count(),
        };
        let rqm = route(config, log, snap.q_rqm4, snap.q_rqm5);
        routes.push(rqm);
        let products: Vec<ProductFeatures> =
            (1..=PRODUCTS_PER_LOG as u8).map(|k| snap.product(log, rqm, k)).collect();
        let delays = model.predict_log(&products)?;
        if delays.len() != PRODUCTS_PER_LOG || delays.iter().any(|d| !d.is_finite()) {
            return Err(Error::NumericalFailure(format!("model returned invalid delays for log {}", log.id)));
        }
        let canter = config.canter_nominal(log.lg, log.dia_moy);
        let enter_rqm7 = (now + delays[0] - kockums_tail).max(now);
        on_conveyors.push(ConveyorEstimate {
            rqm,
            leave_rqm: (enter_rqm7 - canter).max(now),
            enter_rqm7,
            leave_rqm7: (now + delays[2] - kockums_tail - canter).max(enter_rqm7),
        });
        for (p, d) in products.iter().zip(&delays) {
            let time = now + config.quantize(*d);
            pending.push(Reverse((time.to_bits(), seq, p.log_id, p.product_index)));
            seq += 1;
        }
        features.extend(products);
    }
    admit_until(f64::INFINITY, &mut pending, &mut trimmer, &mut arrivals);

    let end_time = trimmer.busy.last().map_or(0.0, |b| b.1);
    let mut census = EventCensus::new();
    census.insert("log_arrival".into(), n);
    census.insert("trimmer_arrival".into(), arrivals.len());
    census.insert("trimmer_done".into(), trimmer.busy.len());
    Ok(ReducedRun { logs, routes, arrivals, features, trimmer_busy: trimmer.busy, end_time, census })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReducedComparison {
    pub n_products: usize,
    /// Mean |predicted - simulated| trimmer-queue entry time, seconds.
    pub arrival_mae: f64,
    pub full_seconds: f64,
    pub reduced_seconds: f64,
}

impl ReducedComparison {
    pub fn time_ratio(&self) -> f64 {
        self.reduced_seconds / self.full_seconds
    }
}

/// Runs both models on `config` and compares arrival times product by
/// product. Wall times are the minimum over `repeats` runs.
pub fn compare_with_full(config: &SimConfig, model: &dyn DelayModel, repeats: usize) -> Result<ReducedComparison> {
    let repeats = repeats.max(1);
    let mut full: Option<SimRun> = None;
    let mut full_seconds = f64::INFINITY;
    for _ in 0..repeats {
        let t = Instant::now();
        let run = simulate_full(config)?;
        full_seconds = full_seconds.min(t.elapsed().as_secs_f64());
        full = Some(run);
    }
    let mut reduced: Option<ReducedRun> = None;
    let mut reduced_seconds = f64::INFINITY;
    for _ in 0..repeats {
        let t = Instant::now();
        let run = simulate_reduced(config, model)?;
        reduced_seconds = reduced_seconds.min(t.elapsed().as_secs_f64());
        reduced = Some(run);
    }
    let (full, reduced) = (full.expect("at least one run"), reduced.expect("at least one run"));
    let actual: HashMap<(usize, u8), f64> = full
        .traces
        .iter()
        .map(|t| ((t.features.log_id, t.features.product_index), full.arrival_time(t)))
        .collect();
    let mut total = 0.0;
    for a in &reduced.arrivals {
        total += (a.time - actual[&(a.log_id, a.product_index)]).abs();
    }
    Ok(ReducedComparison {
        n_products: reduced.arrivals.len(),
        arrival_mae: total / reduced.arrivals.len() as f64,
        full_seconds,
        reduced_seconds,
    })
}

impl ReducedRun {
    pub fn category_count(&self, t: TPiece) -> usize {
        self.features.iter().filter(|f| f.t_piece == t).count()
    }
}
