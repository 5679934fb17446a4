//! Discrete-event model of the sawmill line and its reduced counterpart.
//!
//! A scanned log travels on RQM4 or RQM5 to the canter. Pass 1 cuts two
//! secondary products (sent to the kockums edger) and the log is turned and
//! parked on RQM7. Pass 2 cuts two more secondary products and leaves a cant
//! for the MKV saw, which yields three main products. All seven products end
//! in the trimmer queue, and the delay from scan to trimmer-queue entry is the
//! quantity the surrogate learns.

mod config;
mod full;
mod reduced;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduction::UtilizationHistory;

pub use config::{Pass1Order, SimConfig};
pub use full::simulate_full;
pub use reduced::{
    compare_with_full, simulate_reduced, Arrival, DelayModel, ReducedComparison, ReducedRun, ReplayOracle,
    Surrogate,
};

pub const PRODUCTS_PER_LOG: usize = 7;

const LOG_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TPiece {
    #[serde(rename = "CSMK1")]
    CsmkPass1,
    #[serde(rename = "CSMK2")]
    CsmkPass2,
    #[serde(rename = "MKV")]
    Mkv,
}

impl TPiece {
    pub const ALL: [TPiece; 3] = [TPiece::CsmkPass1, TPiece::CsmkPass2, TPiece::Mkv];

    /// Category of product `index` (1-based) in the cutting plan.
    pub fn of_product(index: u8) -> TPiece {
        match index {
            1 | 2 => TPiece::CsmkPass1,
            3 | 4 => TPiece::CsmkPass2,
            _ => TPiece::Mkv,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            TPiece::CsmkPass1 => "CSMK1",
            TPiece::CsmkPass2 => "CSMK2",
            TPiece::Mkv => "MKV",
        }
    }
}

impl fmt::Display for TPiece {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for TPiece {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TPiece::ALL
            .into_iter()
            .find(|t| t.token() == s)
            .ok_or_else(|| Error::Parse(format!("unknown product category '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rqm {
    #[serde(rename = "RQM4")]
    Rqm4,
    #[serde(rename = "RQM5")]
    Rqm5,
}

impl Rqm {
    pub fn token(self) -> &'static str {
        match self {
            Rqm::Rqm4 => "RQM4",
            Rqm::Rqm5 => "RQM5",
        }
    }
}

impl fmt::Display for Rqm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Rqm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "RQM4" => Ok(Rqm::Rqm4),
            "RQM5" => Ok(Rqm::Rqm5),
            _ => Err(Error::Parse(format!("unknown conveyor '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntity {
    pub id: usize,
    pub arrival_time: f64,
    pub lg: f64,
    pub dia_pb: f64,
    pub dia_gb: f64,
    pub dia_moy: f64,
}

/// The raw network inputs of one product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductFeatures {
    pub log_id: usize,
    pub product_index: u8,
    pub t_piece: TPiece,
    pub rqm: Rqm,
    pub lg: f64,
    pub dia_pb: f64,
    pub dia_gb: f64,
    pub dia_moy: f64,
    pub q_trim: usize,
    pub u_trim: f64,
    pub q_rqm4: usize,
    pub q_rqm5: usize,
    pub q_rqm7: usize,
    pub q_rqm: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductTrace {
    pub features: ProductFeatures,
    /// Seconds from the log's scan to the product's trimmer-queue entry.
    pub delta_t: f64,
}

/// State of the line seen by a log as it is scanned.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Snapshot {
    pub q_trim: usize,
    pub u_trim: f64,
    pub q_rqm4: usize,
    pub q_rqm5: usize,
    pub q_rqm7: usize,
}

impl Snapshot {
    pub(crate) fn product(&self, log: &LogEntity, rqm: Rqm, product_index: u8) -> ProductFeatures {
        ProductFeatures {
            log_id: log.id,
            product_index,
            t_piece: TPiece::of_product(product_index),
            rqm,
            lg: log.lg,
            dia_pb: log.dia_pb,
            dia_gb: log.dia_gb,
            dia_moy: log.dia_moy,
            q_trim: self.q_trim,
            u_trim: self.u_trim,
            q_rqm4: self.q_rqm4,
            q_rqm5: self.q_rqm5,
            q_rqm7: self.q_rqm7,
            q_rqm: self.q_rqm4 + self.q_rqm5 + self.q_rqm7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Station {
    Canter,
    Kockums,
    Mkv,
    Trimmer,
}

impl Station {
    pub const ALL: [Station; 4] = [Station::Canter, Station::Kockums, Station::Mkv, Station::Trimmer];

    pub fn name(self) -> &'static str {
        match self {
            Station::Canter => "canter",
            Station::Kockums => "kockums",
            Station::Mkv => "mkv",
            Station::Trimmer => "trimmer",
        }
    }

    pub(crate) fn stream(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Station {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number of processed events per event kind.
pub type EventCensus = BTreeMap<String, usize>;

/// Output of a full simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub logs: Vec<LogEntity>,
    pub routes: Vec<Rqm>,
    /// Ordered by trimmer-queue entry.
    pub traces: Vec<ProductTrace>,
    /// Busy intervals per station, indexed like [`Station::ALL`].
    pub busy: [Vec<(f64, f64)>; 4],
    pub end_time: f64,
    pub census: EventCensus,
    /// Per-queue service order as `(log_id, product_index)`; pass-level
    /// queues use product index 0.
    pub queue_log: QueueLog,
}

/// Arrival and departure order of every queue, kept for FIFO checks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueueLog {
    pub entries: BTreeMap<String, Vec<(usize, u8)>>,
    pub exits: BTreeMap<String, Vec<(usize, u8)>>,
}

impl QueueLog {
    pub(crate) fn enter(&mut self, queue: &str, item: (usize, u8)) {
        self.entries.entry(queue.to_string()).or_default().push(item);
    }

    pub(crate) fn exit(&mut self, queue: &str, item: (usize, u8)) {
        self.exits.entry(queue.to_string()).or_default().push(item);
    }
}

impl SimRun {
    pub fn busy_intervals(&self, station: Station) -> &[(f64, f64)] {
        &self.busy[station as usize]
    }

    /// Absolute trimmer-queue entry time of a trace.
    pub fn arrival_time(&self, trace: &ProductTrace) -> f64 {
        self.logs[trace.features.log_id].arrival_time + trace.delta_t
    }

    /// Busy fraction of each station over `[0, horizon]`.
    pub fn station_utilizations(&self, horizon: f64) -> Result<Vec<(Station, f64)>> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("utilization horizon must be positive"));
        }
        Ok(Station::ALL
            .iter()
            .map(|&s| (s, busy_time(self.busy_intervals(s), 0.0, horizon) / horizon))
            .collect())
    }

    /// Per-period utilizations over `[0, end_time]` split in `n_periods`.
    pub fn utilization_history(&self, n_periods: usize) -> Result<UtilizationHistory> {
        if n_periods == 0 {
            return Err(Error::invalid("need at least one period"));
        }
        if !(self.end_time > 0.0) {
            return Err(Error::invalid("simulation has zero length"));
        }
        let width = self.end_time / n_periods as f64;
        let periods = (0..n_periods)
            .map(|k| {
                let lo = k as f64 * width;
                let hi = if k + 1 == n_periods { self.end_time } else { lo + width };
                Station::ALL
                    .iter()
                    .map(|&s| (busy_time(self.busy_intervals(s), lo, hi) / (hi - lo)).clamp(0.0, 1.0))
                    .collect()
            })
            .collect();
        UtilizationHistory::new(Station::ALL.iter().map(|s| s.name().to_string()).collect(), periods)
    }
}

/// Total overlap of `intervals` with `[lo, hi]`.
pub fn busy_time(intervals: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    intervals.iter().map(|&(s, e)| (e.min(hi) - s.max(lo)).max(0.0)).sum()
}

/// Busy time of a single server in `[lo, hi]`, scanning back from the most
/// recent interval. Intervals must be sorted and non-overlapping.
pub(crate) fn recent_busy_time(intervals: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let mut total = 0.0;
    for &(s, e) in intervals.iter().rev() {
        if e <= lo {
            break;
        }
        total += (e.min(hi) - s.max(lo)).max(0.0);
    }
    total
}

pub(crate) fn station_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `nominal * U[1 - j, 1 + j]`, rounded to the clock resolution.
pub(crate) fn service_time(config: &SimConfig, rng: &mut ChaCha8Rng, nominal: f64) -> f64 {
    let u: f64 = rng.random();
    config.quantize(nominal * (1.0 + config.service_jitter * (2.0 * u - 1.0)))
}

pub(crate) fn route(config: &SimConfig, log: &LogEntity, q_rqm4: usize, q_rqm5: usize) -> Rqm {
    if let Some(bound) = config.rqm_balance_bound {
        if q_rqm4.abs_diff(q_rqm5) > bound {
            return if q_rqm4 < q_rqm5 { Rqm::Rqm4 } else { Rqm::Rqm5 };
        }
    }
    if log.dia_moy >= config.rqm4_diameter_threshold {
        Rqm::Rqm4
    } else {
        Rqm::Rqm5
    }
}

/// Scanned logs with exponential inter-arrival times.
pub fn generate_logs(config: &SimConfig) -> Result<Vec<LogEntity>> {
    config.validate()?;
    let mut rng = station_rng(config.seed, LOG_STREAM);
    let gap = Exp::new(1.0 / config.mean_interarrival).map_err(|e| Error::invalid(e.to_string()))?;
    let mut t = 0.0;
    let mut logs = Vec::with_capacity(config.n_logs);
    for id in 0..config.n_logs {
        t += config.quantize(gap.sample(&mut rng));
        let lg = config.lg_min + (config.lg_max - config.lg_min) * rng.random::<f64>();
        let dia_pb = config.dia_pb_min + (config.dia_pb_max - config.dia_pb_min) * rng.random::<f64>();
        let dia_gb = dia_pb + config.taper * lg;
        let dia_moy = (dia_pb + dia_gb) / 2.0;
        logs.push(LogEntity { id, arrival_time: t, lg, dia_pb, dia_gb, dia_moy });
    }
    Ok(logs)
}

fn min_service(config: &SimConfig, nominal: f64) -> f64 {
    ((1.0 - config.service_jitter) * nominal - config.time_resolution / 2.0).max(config.time_resolution)
}

/// Lower bound on the delay of a product, from the shortest service times
/// along its route and no waiting.
pub fn min_path_time(config: &SimConfig, t_piece: TPiece, rqm: Rqm, lg: f64, dia_moy: f64) -> f64 {
    let canter = min_service(config, config.canter_nominal(lg, dia_moy));
    let to_canter = config.quantize(config.transit(rqm)) + canter;
    let kockums = min_service(config, config.kockums_time) + config.quantize(config.transfer_kockums);
    let rqm7 = config.quantize(config.transit_rqm7) + canter;
    match t_piece {
        TPiece::CsmkPass1 => to_canter + kockums,
        TPiece::CsmkPass2 => to_canter + rqm7 + kockums,
        TPiece::Mkv => {
            to_canter + rqm7 + min_service(config, config.mkv_time) + config.quantize(config.transfer_mkv)
        }
    }
}

/// Lower bound over every log the configuration can generate.
pub fn category_min_path_time(config: &SimConfig, t_piece: TPiece) -> f64 {
    let dia_moy = config.dia_pb_min + config.taper * config.lg_min / 2.0;
    [Rqm::Rqm4, Rqm::Rqm5]
        .into_iter()
        .map(|r| min_path_time(config, t_piece, r, config.lg_min, dia_moy))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    log_id: usize,
    product_index: u8,
    t_piece: TPiece,
    rqm: Rqm,
    lg: f64,
    dia_pb: f64,
    dia_gb: f64,
    dia_moy: f64,
    q_trim: usize,
    u_trim: f64,
    q_rqm4: usize,
    q_rqm5: usize,
    q_rqm7: usize,
    q_rqm: usize,
    delta_t: f64,
}

impl From<&ProductTrace> for TraceRecord {
    fn from(t: &ProductTrace) -> Self {
        let f = &t.features;
        Self {
            log_id: f.log_id,
            product_index: f.product_index,
            t_piece: f.t_piece,
            rqm: f.rqm,
            lg: f.lg,
            dia_pb: f.dia_pb,
            dia_gb: f.dia_gb,
            dia_moy: f.dia_moy,
            q_trim: f.q_trim,
            u_trim: f.u_trim,
            q_rqm4: f.q_rqm4,
            q_rqm5: f.q_rqm5,
            q_rqm7: f.q_rqm7,
            q_rqm: f.q_rqm,
            delta_t: t.delta_t,
        }
    }
}

impl From<TraceRecord> for ProductTrace {
    fn from(r: TraceRecord) -> Self {
        Self {
            features: ProductFeatures {
                log_id: r.log_id,
                product_index: r.product_index,
                t_piece: r.t_piece,
                rqm: r.rqm,
                lg: r.lg,
                dia_pb: r.dia_pb,
                dia_gb: r.dia_gb,
                dia_moy: r.dia_moy,
                q_trim: r.q_trim,
                u_trim: r.u_trim,
                q_rqm4: r.q_rqm4,
                q_rqm5: r.q_rqm5,
                q_rqm7: r.q_rqm7,
                q_rqm: r.q_rqm,
            },
            delta_t: r.delta_t,
        }
    }
}

pub fn traces_to_csv(traces: &[ProductTrace]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in traces {
        w.serialize(TraceRecord::from(t))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn traces_from_csv(text: &str) -> Result<Vec<ProductTrace>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<TraceRecord>()
        .map(|rec| Ok(ProductTrace::from(rec?)))
        .collect()
}

pub fn read_traces(path: &Path) -> Result<Vec<ProductTrace>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    traces_from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig { n_logs: 40, ..SimConfig::default() }
    }

    #[test]
    fn log_generation() {
        let c = small();
        let logs = generate_logs(&c).unwrap();
        assert_eq!(logs.len(), 40);
        assert_eq!(logs, generate_logs(&c).unwrap());
        for w in logs.windows(2) {
            assert!(w[1].arrival_time > w[0].arrival_time);
        }
        for l in &logs {
            assert!(l.dia_pb <= l.dia_moy && l.dia_moy <= l.dia_gb);
            assert!((3.0..=6.0).contains(&l.lg));
            assert!((l.dia_gb - (l.dia_pb + l.lg)).abs() < 1e-12);
        }
        let flat = generate_logs(&SimConfig { taper: 0.0, ..c }).unwrap();
        assert!(flat.iter().all(|l| l.dia_pb == l.dia_moy && l.dia_moy == l.dia_gb));
    }

    #[test]
    fn tokens_round_trip() {
        for t in TPiece::ALL {
            assert_eq!(t.token().parse::<TPiece>().unwrap(), t);
        }
        assert_eq!("RQM5".parse::<Rqm>().unwrap(), Rqm::Rqm5);
        assert!("RQM7".parse::<Rqm>().is_err());
        assert_eq!(TPiece::of_product(4), TPiece::CsmkPass2);
        assert_eq!(TPiece::of_product(7), TPiece::Mkv);
    }

    #[test]
    fn trace_csv_round_trip() {
        let run = simulate_full(&small()).unwrap();
        let text = traces_to_csv(&run.traces).unwrap();
        assert!(text.starts_with(
            "log_id,product_index,t_piece,rqm,lg,dia_pb,dia_gb,dia_moy,q_trim,u_trim,q_rqm4,q_rqm5,q_rqm7,q_rqm,delta_t\n"
        ));
        assert!(text.contains(",CSMK1,") && text.contains(",MKV,"));
        assert_eq!(traces_from_csv(&text).unwrap(), run.traces);
    }

    #[test]
    fn busy_time_helpers_agree() {
        let iv = [(0.0, 2.0), (3.0, 7.5), (8.0, 9.0)];
        for (lo, hi) in [(0.0, 10.0), (1.0, 3.5), (2.5, 2.9), (7.0, 8.5), (-5.0, 0.5)] {
            assert_eq!(busy_time(&iv, lo, hi), recent_busy_time(&iv, lo, hi));
        }
        assert_eq!(busy_time(&iv, 1.0, 3.5), 1.5);
    }

    #[test]
    fn balance_override_routes_to_shorter_conveyor() {
        let c = SimConfig { rqm_balance_bound: Some(2), ..SimConfig::default() };
        let big = LogEntity { id: 0, arrival_time: 1.0, lg: 4.0, dia_pb: 40.0, dia_gb: 44.0, dia_moy: 42.0 };
        assert_eq!(route(&c, &big, 1, 0), Rqm::Rqm4);
        assert_eq!(route(&c, &big, 5, 1), Rqm::Rqm5);
        assert_eq!(route(&SimConfig::default(), &big, 5, 1), Rqm::Rqm4);
    }
}
