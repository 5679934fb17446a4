//! Bottleneck classification and synchronization-station selection.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A manufacturing order and the stations it visits, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Routing {
    pub mo_id: String,
    pub stations: Vec<String>,
}

impl Routing {
    pub fn new(mo_id: impl Into<String>, stations: Vec<String>) -> Result<Self> {
        let mo_id = mo_id.into();
        if stations.is_empty() {
            return Err(Error::invalid(format!("routing '{mo_id}' has no stations")));
        }
        Ok(Self { mo_id, stations })
    }

    fn uses_any(&self, set: &BTreeSet<String>) -> bool {
        self.stations.iter().any(|s| set.contains(s))
    }
}

/// Reads routings from `mo_id,station_1,...` lines. A header line starting
/// with `mo_id` is skipped.
pub fn routings_from_csv(text: &str) -> Result<Vec<Routing>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut fields = record.iter().map(str::trim).filter(|f| !f.is_empty());
        let Some(mo_id) = fields.next() else { continue };
        if mo_id == "mo_id" {
            continue;
        }
        out.push(Routing::new(mo_id, fields.map(String::from).collect())?);
    }
    Ok(out)
}

pub fn read_routings(path: &Path) -> Result<Vec<Routing>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    routings_from_csv(&text)
}

/// Per-period utilization of each station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationHistory {
    stations: Vec<String>,
    /// `periods[k][j]` is the utilization of `stations[j]` in period `k`.
    periods: Vec<Vec<f64>>,
}

impl UtilizationHistory {
    pub fn new(stations: Vec<String>, periods: Vec<Vec<f64>>) -> Result<Self> {
        if periods.is_empty() {
            return Err(Error::invalid("utilization history has no periods"));
        }
        for (k, p) in periods.iter().enumerate() {
            if p.len() != stations.len() {
                return Err(Error::invalid(format!("period {k} has {} values for {} stations", p.len(), stations.len())));
            }
            if p.iter().any(|u| !(0.0..=1.0).contains(u)) {
                return Err(Error::invalid(format!("period {k} has a utilization outside [0, 1]")));
            }
        }
        Ok(Self { stations, periods })
    }

    pub fn stations(&self) -> &[String] {
        &self.stations
    }

    pub fn periods(&self) -> &[Vec<f64>] {
        &self.periods
    }

    pub fn latest(&self) -> &[f64] {
        self.periods.last().expect("history is non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Bottlenecks {
    pub structural: BTreeSet<String>,
    pub conjunctural: BTreeSet<String>,
}

impl Bottlenecks {
    pub fn all(&self) -> BTreeSet<String> {
        self.structural.union(&self.conjunctural).cloned().collect()
    }
}

pub const DEFAULT_SATURATION: f64 = 0.9;
pub const DEFAULT_STRUCTURAL_FRACTION: f64 = 0.5;

/// Conjunctural: saturated in the latest period. Structural: saturated in at
/// least `structural_fraction` of all periods.
pub fn classify_bottlenecks(
    history: &UtilizationHistory,
    saturation: f64,
    structural_fraction: f64,
) -> Result<Bottlenecks> {
    for (name, v) in [("saturation", saturation), ("structural_fraction", structural_fraction)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::invalid(format!("{name} {v} not in (0, 1]")));
        }
    }
    let n_periods = history.periods.len() as f64;
    let mut out = Bottlenecks::default();
    for (j, name) in history.stations.iter().enumerate() {
        if history.latest()[j] >= saturation {
            out.conjunctural.insert(name.clone());
        }
        let saturated = history.periods.iter().filter(|p| p[j] >= saturation).count() as f64;
        if saturated >= structural_fraction * n_periods {
            out.structural.insert(name.clone());
        }
    }
    Ok(out)
}

/// Greedy choice of non-bottleneck stations that synchronize the orders not
/// passing through a bottleneck.
///
/// Candidates are the non-bottleneck stations of orders that use a
/// bottleneck. Each round picks the candidate covering the most uncovered
/// non-bottleneck orders, breaking ties by name, until nothing more can be
/// covered.
pub fn synchronization_stations(routings: &[Routing], bottlenecks: &BTreeSet<String>) -> BTreeSet<String> {
    let (using, other): (Vec<&Routing>, Vec<&Routing>) = routings.iter().partition(|r| r.uses_any(bottlenecks));
    let candidates: BTreeSet<&String> = using
        .iter()
        .flat_map(|r| r.stations.iter())
        .filter(|s| !bottlenecks.contains(*s))
        .collect();
    let mut uncovered: Vec<&Routing> = other;
    let mut chosen = BTreeSet::new();
    loop {
        let mut best: Option<(&String, usize)> = None;
        for &c in &candidates {
            if chosen.contains(c) {
                continue;
            }
            let gain = uncovered.iter().filter(|r| r.stations.contains(c)).count();
            if gain > 0 && best.is_none_or(|(_, g)| gain > g) {
                best = Some((c, gain));
            }
        }
        let Some((station, _)) = best else { break };
        uncovered.retain(|r| !r.stations.contains(station));
        chosen.insert(station.clone());
    }
    chosen
}

/// Routings of the sawmill products: one order per product category.
pub fn sawmill_routings() -> Vec<Routing> {
    let r = |id: &str, s: &[&str]| Routing { mo_id: id.into(), stations: s.iter().map(|x| x.to_string()).collect() };
    vec![
        r("CSMK1", &["canter", "kockums", "trimmer"]),
        r("CSMK2", &["canter", "kockums", "trimmer"]),
        r("MKV", &["canter", "mkv", "trimmer"]),
    ]
}
