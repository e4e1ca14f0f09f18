//! CSV ingestion of measurement logs and CSV export of estimates.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::cost::{keep_counts_for_fraction, SweepRow};
use super::fit::Measurement;
use crate::nn::ModelSpec;
use crate::{Error, Result, SCHEMA_VERSION};

#[derive(Debug, Deserialize)]
struct MeasurementRow {
    #[serde(rename = "spec-id")]
    spec_id: String,
    #[serde(rename = "keep-fraction")]
    keep_fraction: f64,
    #[serde(rename = "observed-seconds")]
    observed_seconds: f64,
    #[serde(rename = "observed-bytes")]
    observed_bytes: f64,
}

/// Reads a measurement log with columns
/// `spec-id,keep-fraction,observed-seconds,observed-bytes`. Each `spec-id`
/// must name an entry of `specs`.
pub fn read_measurements<R: Read>(input: R, specs: &HashMap<String, ModelSpec>) -> Result<Vec<Measurement>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (line, row) in reader.deserialize::<MeasurementRow>().enumerate() {
        let row = row?;
        let spec = specs
            .get(&row.spec_id)
            .ok_or_else(|| Error::InvalidConfig(format!("row {}: unknown spec-id {:?}", line + 1, row.spec_id)))?;
        if !(row.keep_fraction > 0.0 && row.keep_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "row {}: keep-fraction {} outside (0, 1]",
                line + 1,
                row.keep_fraction
            )));
        }
        if !(row.observed_seconds > 0.0 && row.observed_seconds.is_finite()) {
            return Err(Error::InvalidConfig(format!("row {}: observed-seconds must be positive", line + 1)));
        }
        out.push(Measurement {
            spec: spec.clone(),
            keep_counts: keep_counts_for_fraction(spec, row.keep_fraction),
            observed_seconds: row.observed_seconds,
            observed_bytes: row.observed_bytes,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SweepCsvRow {
    pub schema_version: u32,
    pub keep_fraction: f64,
    pub workload_flops: f64,
    pub memory_bytes: f64,
    pub time_seconds: f64,
    pub time_minutes: f64,
}

/// Writes a keep-fraction sweep as CSV, one row per fraction.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(SweepCsvRow {
            schema_version: SCHEMA_VERSION,
            keep_fraction: r.keep_fraction,
            workload_flops: r.estimate.workload,
            memory_bytes: r.estimate.memory,
            time_seconds: r.estimate.time,
            time_minutes: r.estimate.time / 60.0,
        })?;
    }
    w.flush()?;
    Ok(())
}
