//! Cost accounting (§2.5.3–§2.5.4): GPU hours, memory, energy, carbon and
//! per-note throughput from resource-sample logs.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// kg CO2 per kWh (§2.5.3).
pub const CARBON_KG_PER_KWH: f64 = 0.39;

/// One row of a resource log: `timestamp,gpu_id,power_w,mem_gb`.
/// Timestamps are seconds on any fixed epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceSample {
    pub timestamp: f64,
    pub gpu_id: u32,
    pub power_w: f64,
    pub mem_gb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Inference,
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Phase::Train),
            "inference" | "test" => Ok(Phase::Inference),
            other => Err(format!("unknown phase `{other}` (expected train|inference)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub phase: Phase,
    pub num_gpus: u32,
    pub wall_seconds: f64,
    pub notes_processed: u64,
    /// Training epochs; ignored for inference.
    pub epochs: Option<u32>,
    pub samples: Vec<ResourceSample>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TelemetryError {
    #[error("ledger has no resource samples")]
    NoSamples,
    #[error("cannot compute per-note time for zero notes")]
    ZeroNotes,
    #[error("timestamps for GPU {gpu_id} are not monotone at t={timestamp}")]
    NonMonotone { gpu_id: u32, timestamp: f64 },
    #[error("invalid ledger: {0}")]
    InvalidLedger(String),
    #[error("malformed sample log: {0}")]
    Csv(String),
}

/// Parse a `timestamp,gpu_id,power_w,mem_gb` CSV log (header required).
pub fn read_samples(reader: impl Read) -> Result<Vec<ResourceSample>, TelemetryError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(|e| TelemetryError::Csv(e.to_string()))).collect()
}

impl RunLedger {
    pub fn validate(&self) -> Result<(), TelemetryError> {
        if self.num_gpus == 0 {
            return Err(TelemetryError::InvalidLedger("num_gpus must be at least 1".into()));
        }
        if !(self.wall_seconds.is_finite() && self.wall_seconds > 0.0) {
            return Err(TelemetryError::InvalidLedger("wall_seconds must be positive".into()));
        }
        if self.epochs == Some(0) {
            return Err(TelemetryError::InvalidLedger("epochs must be at least 1".into()));
        }
        let mut last: BTreeMap<u32, f64> = BTreeMap::new();
        for s in &self.samples {
            if !(s.power_w >= 0.0 && s.mem_gb >= 0.0) {
                return Err(TelemetryError::InvalidLedger(format!(
                    "negative or NaN power/memory at t={} on GPU {}",
                    s.timestamp, s.gpu_id
                )));
            }
            if let Some(&prev) = last.get(&s.gpu_id) {
                if s.timestamp.is_nan() || s.timestamp < prev {
                    return Err(TelemetryError::NonMonotone { gpu_id: s.gpu_id, timestamp: s.timestamp });
                }
            }
            last.insert(s.gpu_id, s.timestamp);
        }
        Ok(())
    }

    fn per_gpu(&self) -> BTreeMap<u32, Vec<&ResourceSample>> {
        let mut by: BTreeMap<u32, Vec<&ResourceSample>> = BTreeMap::new();
        for s in &self.samples {
            by.entry(s.gpu_id).or_default().push(s);
        }
        by
    }
}

/// GPUs × wall time.
pub fn gpu_hours(ledger: &RunLedger) -> f64 {
    ledger.num_gpus as f64 * ledger.wall_seconds / 3600.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMethod {
    /// Arithmetic mean of power samples × wall time (the paper's reading).
    #[default]
    MeanPower,
    /// Time-weighted mean (trapezoid rule over sample timestamps) × wall time.
    Trapezoid,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Trapezoid-weighted mean of `(t, y)` points; plain mean if they span no time.
fn time_weighted_mean(points: &[(f64, f64)]) -> f64 {
    let span = points.last().map_or(0.0, |l| l.0) - points.first().map_or(0.0, |f| f.0);
    if span <= 0.0 {
        return mean(points.iter().map(|p| p.1));
    }
    let area: f64 = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum();
    area / span
}

/// Σ over sampled GPUs of mean power (kW) × wall hours.
pub fn energy_kwh(ledger: &RunLedger, method: EnergyMethod) -> Result<f64, TelemetryError> {
    if ledger.samples.is_empty() {
        return Err(TelemetryError::NoSamples);
    }
    let wall_hours = ledger.wall_seconds / 3600.0;
    Ok(ledger
        .per_gpu()
        .values()
        .map(|samples| {
            let watts = match method {
                EnergyMethod::MeanPower => mean(samples.iter().map(|s| s.power_w)),
                EnergyMethod::Trapezoid => {
                    time_weighted_mean(&samples.iter().map(|s| (s.timestamp, s.power_w)).collect::<Vec<_>>())
                }
            };
            watts / 1000.0 * wall_hours
        })
        .sum())
}

pub fn carbon_kg(energy_kwh: f64) -> f64 {
    energy_kwh * CARBON_KG_PER_KWH
}

pub fn seconds_per_note(wall_seconds: f64, notes: u64) -> Result<f64, TelemetryError> {
    if notes == 0 {
        return Err(TelemetryError::ZeroNotes);
    }
    Ok(wall_seconds / notes as f64)
}

/// Mean memory per GPU: per-GPU sample means, averaged over GPUs.
pub fn avg_memory_gb(ledger: &RunLedger) -> Result<f64, TelemetryError> {
    let by = ledger.per_gpu();
    if by.is_empty() {
        return Err(TelemetryError::NoSamples);
    }
    Ok(mean(by.values().map(|s| mean(s.iter().map(|x| x.mem_gb)))))
}

/// Sum over GPUs of each GPU's mean memory.
pub fn total_memory_gb(ledger: &RunLedger) -> Result<f64, TelemetryError> {
    let by = ledger.per_gpu();
    if by.is_empty() {
        return Err(TelemetryError::NoSamples);
    }
    Ok(by.values().map(|s| mean(s.iter().map(|x| x.mem_gb))).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub phase: Phase,
    pub num_gpus: u32,
    pub wall_seconds: f64,
    pub gpu_hours: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gpu_hours_per_epoch: Option<f64>,
    /// Mean memory per GPU.
    pub avg_memory_gb: f64,
    /// Per-GPU means summed over GPUs (Table 3's 70B inference figure).
    pub total_memory_gb: f64,
    pub energy_kwh: f64,
    pub carbon_kg: f64,
    /// Absent for training ledgers that record no note count.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seconds_per_note: Option<f64>,
    pub energy_method: EnergyMethod,
}

pub fn cost_report(ledger: &RunLedger, method: EnergyMethod) -> Result<CostReport, TelemetryError> {
    ledger.validate()?;
    let hours = gpu_hours(ledger);
    let energy = energy_kwh(ledger, method)?;
    let per_note = match (ledger.phase, ledger.notes_processed) {
        (Phase::Train, 0) => None,
        (_, n) => Some(seconds_per_note(ledger.wall_seconds, n)?),
    };
    Ok(CostReport {
        phase: ledger.phase,
        num_gpus: ledger.num_gpus,
        wall_seconds: ledger.wall_seconds,
        gpu_hours: hours,
        gpu_hours_per_epoch: match ledger.phase {
            Phase::Train => ledger.epochs.map(|e| hours / e as f64),
            Phase::Inference => None,
        },
        avg_memory_gb: avg_memory_gb(ledger)?,
        total_memory_gb: total_memory_gb(ledger)?,
        energy_kwh: energy,
        carbon_kg: carbon_kg(energy),
        seconds_per_note: per_note,
        energy_method: method,
    })
}

/// Table 3-shaped text rendering (2 dp, as printed in the paper).
pub fn render_report(r: &CostReport) -> String {
    let mut rows = vec![
        ("Phase", format!("{:?}", r.phase).to_lowercase()),
        ("GPUs", r.num_gpus.to_string()),
        ("Memory usage (GB/GPU)", format!("{:.2}", r.avg_memory_gb)),
        ("Memory usage (GB total)", format!("{:.2}", r.total_memory_gb)),
        ("Total GPU hours", format!("{:.2}", r.gpu_hours)),
    ];
    if let Some(e) = r.gpu_hours_per_epoch {
        rows.push(("GPU hours per epoch", format!("{e:.2}")));
    }
    rows.push(("Energy (kWh)", format!("{:.2}", r.energy_kwh)));
    rows.push(("Carbon (kg CO2)", format!("{:.2}", r.carbon_kg)));
    if let Some(s) = r.seconds_per_note {
        rows.push(("Seconds per note", format!("{s:.1}")));
    }
    rows.iter().map(|(k, v)| format!("{k:<24} {v:>10}\n")).collect()
}

/// Constant-power samples at 1 s spacing, for fixtures and tests.
pub fn constant_samples(gpus: u32, power_w: f64, mem_gb: f64, count: usize) -> Vec<ResourceSample> {
    (0..count)
        .flat_map(|i| {
            (0..gpus).map(move |g| ResourceSample { timestamp: i as f64, gpu_id: g, power_w, mem_gb })
        })
        .collect()
}
