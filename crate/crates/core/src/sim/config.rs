use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which waiting pass-1 log the canter takes when several conveyors hold one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass1Order {
    /// Earliest conveyor exit first.
    Fifo,
    /// RQM5 is drained before RQM4.
    #[default]
    Rqm5First,
}

/// All parameters of the sawmill line. Times are in seconds, lengths in
/// metres, diameters in centimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_logs: usize,
    pub seed: u64,
    pub mean_interarrival: f64,
    pub lg_min: f64,
    pub lg_max: f64,
    pub dia_pb_min: f64,
    pub dia_pb_max: f64,
    /// Diameter growth from small to big end, cm per metre of length.
    pub taper: f64,
    /// Logs with `dia_moy >= rqm4_diameter_threshold` go to RQM4.
    pub rqm4_diameter_threshold: f64,
    /// When set, a log goes to the shorter conveyor whenever the two counts
    /// differ by more than this bound.
    pub rqm_balance_bound: Option<usize>,
    pub canter_base: f64,
    pub canter_per_m: f64,
    pub canter_per_cm: f64,
    pub kockums_time: f64,
    pub mkv_time: f64,
    pub trimmer_time: f64,
    /// Each service time is its nominal value times `U[1 - j, 1 + j]`.
    pub service_jitter: f64,
    pub transit_rqm4: f64,
    pub transit_rqm5: f64,
    pub transit_rqm7: f64,
    pub transfer_kockums: f64,
    pub transfer_mkv: f64,
    pub pass1_order: Pass1Order,
    pub u_trim_window: f64,
    /// Every sampled duration is rounded to a multiple of this step. A power
    /// of two keeps all clock arithmetic exact.
    pub time_resolution: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_logs: 1825,
            seed: 1,
            mean_interarrival: 45.0,
            lg_min: 3.0,
            lg_max: 6.0,
            dia_pb_min: 20.0,
            dia_pb_max: 45.0,
            taper: 1.0,
            rqm4_diameter_threshold: 32.0,
            rqm_balance_bound: None,
            canter_base: 8.0,
            canter_per_m: 1.0,
            canter_per_cm: 0.2,
            kockums_time: 6.75,
            mkv_time: 22.0,
            trimmer_time: 5.95,
            service_jitter: 0.2,
            transit_rqm4: 600.0,
            transit_rqm5: 120.0,
            transit_rqm7: 60.0,
            transfer_kockums: 30.0,
            transfer_mkv: 45.0,
            pass1_order: Pass1Order::default(),
            u_trim_window: 600.0,
            time_resolution: 1.0 / 1024.0,
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mean_interarrival", self.mean_interarrival),
            ("lg_min", self.lg_min),
            ("dia_pb_min", self.dia_pb_min),
            ("canter_base", self.canter_base),
            ("kockums_time", self.kockums_time),
            ("mkv_time", self.mkv_time),
            ("trimmer_time", self.trimmer_time),
            ("transit_rqm4", self.transit_rqm4),
            ("transit_rqm5", self.transit_rqm5),
            ("transit_rqm7", self.transit_rqm7),
            ("transfer_kockums", self.transfer_kockums),
            ("transfer_mkv", self.transfer_mkv),
            ("u_trim_window", self.u_trim_window),
            ("time_resolution", self.time_resolution),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let non_negative = [
            ("taper", self.taper),
            ("canter_per_m", self.canter_per_m),
            ("canter_per_cm", self.canter_per_cm),
            ("rqm4_diameter_threshold", self.rqm4_diameter_threshold),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        if self.n_logs == 0 {
            return Err(Error::invalid("n_logs must be at least 1"));
        }
        if self.lg_max < self.lg_min || self.dia_pb_max < self.dia_pb_min {
            return Err(Error::invalid("log dimension ranges are inverted"));
        }
        if !(0.0..1.0).contains(&self.service_jitter) {
            return Err(Error::invalid("service_jitter must lie in [0, 1)"));
        }
        Ok(())
    }

    pub(crate) fn quantize(&self, t: f64) -> f64 {
        (t / self.time_resolution).round().max(1.0) * self.time_resolution
    }

    pub(crate) fn transit(&self, rqm: super::Rqm) -> f64 {
        match rqm {
            super::Rqm::Rqm4 => self.transit_rqm4,
            super::Rqm::Rqm5 => self.transit_rqm5,
        }
    }

    /// Nominal duration of one canter pass on a log.
    pub fn canter_nominal(&self, lg: f64, dia_moy: f64) -> f64 {
        self.canter_base + self.canter_per_m * lg + self.canter_per_cm * dia_moy
    }
}
