use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::Scheme;
use super::plan::FleetPlan;
use crate::aggregation::AggregationScheme;
use crate::{Error, Result, SCHEMA_VERSION};

/// One device's part in an aggregation event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub device: usize,
    pub loss: f64,
    pub kept_fraction: f64,
    pub staleness: u64,
    /// Masked neuron indices per layer.
    pub masked: Vec<Vec<usize>>,
}

/// State right after one aggregation event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub event: u64,
    pub clock_seconds: f64,
    pub updates: Vec<UpdateRecord>,
    /// Weights the updates entered the global model with (the blend factor
    /// for async).
    pub alphas: Vec<f64>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub events: u64,
    pub final_clock_seconds: f64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub mean_period_seconds: f64,
    pub target_accuracy: Option<f64>,
    pub time_to_target_seconds: Option<f64>,
    pub trailing_window: usize,
    pub trailing_mean: f64,
    pub trailing_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub schema_version: u32,
    pub scheme: Scheme,
    pub aggregation: AggregationScheme,
    pub seed: u64,
    pub plan: FleetPlan,
    pub records: Vec<CycleRecord>,
    pub summary: RunSummary,
}

impl ExperimentLog {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        match v.get("schema_version").and_then(|s| s.as_u64()) {
            Some(s) if s == SCHEMA_VERSION as u64 => Ok(serde_json::from_value(v)?),
            other => Err(Error::InvalidConfig(format!(
                "log schema_version {other:?} is not supported (expected {SCHEMA_VERSION})"
            ))),
        }
    }

    /// Simulated time at which accuracy first reaches `threshold`.
    pub fn time_to(&self, threshold: f64) -> Option<f64> {
        self.records.iter().find(|r| r.accuracy >= threshold).map(|r| r.clock_seconds)
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.accuracy).collect()
    }

    /// One row per event: clock, accuracy, mean device loss and alphas.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["schema_version", "scheme", "event", "clock_seconds", "accuracy", "mean_loss", "devices", "alphas"])?;
        for r in &self.records {
            let mean_loss = r.updates.iter().map(|u| u.loss).sum::<f64>() / r.updates.len().max(1) as f64;
            let devices: Vec<String> = r.updates.iter().map(|u| u.device.to_string()).collect();
            let alphas: Vec<String> = r.alphas.iter().map(|a| a.to_string()).collect();
            w.write_record([
                SCHEMA_VERSION.to_string(),
                self.scheme.to_string(),
                r.event.to_string(),
                r.clock_seconds.to_string(),
                r.accuracy.to_string(),
                mean_loss.to_string(),
                devices.join(";"),
                alphas.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable summary block.
    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let ttt = match (s.target_accuracy, s.time_to_target_seconds) {
            (Some(t), Some(secs)) => format!("{:.1} min to reach {:.2}%", secs / 60.0, 100.0 * t),
            (Some(t), None) => format!("{:.2}% not reached", 100.0 * t),
            _ => "no target set".into(),
        };
        format!(
            "schema_version: {}\nscheme: {}\nseed: {}\naggregation events: {}\nsimulated time: {:.1} min\nmean aggregation period: {:.2} min\n\
             final accuracy: {:.2}%\nbest accuracy: {:.2}%\ntime to target: {ttt}\n\
             trailing {}-event accuracy: mean {:.2}%, variance {:.3e}\n",
            self.schema_version,
            self.scheme,
            self.seed,
            s.events,
            s.final_clock_seconds / 60.0,
            s.mean_period_seconds / 60.0,
            100.0 * s.final_accuracy,
            100.0 * s.best_accuracy,
            s.trailing_window,
            100.0 * s.trailing_mean,
            s.trailing_variance,
        )
    }
}

/// Population mean and variance of the last `window` values.
pub fn trailing_stats(values: &[f64], window: usize) -> (f64, f64) {
    let tail = &values[values.len().saturating_sub(window)..];
    if tail.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    let var = tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

pub(crate) fn summarise(records: &[CycleRecord], target: Option<f64>, window: usize) -> RunSummary {
    let acc: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    let (trailing_mean, trailing_variance) = trailing_stats(&acc, window);
    let final_clock = records.last().map_or(0.0, |r| r.clock_seconds);
    RunSummary {
        events: records.len() as u64,
        final_clock_seconds: final_clock,
        final_accuracy: acc.last().copied().unwrap_or(f64::NAN),
        best_accuracy: acc.iter().copied().fold(f64::NAN, f64::max),
        mean_period_seconds: if records.is_empty() { 0.0 } else { final_clock / records.len() as f64 },
        target_accuracy: target,
        time_to_target_seconds: target.and_then(|t| records.iter().find(|r| r.accuracy >= t).map(|r| r.clock_seconds)),
        trailing_window: window,
        trailing_mean,
        trailing_variance,
    }
}

/// True when `fast` reaches every accuracy level that `slow` reaches, no
/// later than `slow` does.
pub fn reaches_no_later(fast: &ExperimentLog, slow: &ExperimentLog) -> bool {
    slow.records.iter().all(|r| fast.time_to(r.accuracy).is_some_and(|t| t <= slow.time_to(r.accuracy).unwrap()))
}
