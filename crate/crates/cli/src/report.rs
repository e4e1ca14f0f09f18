use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use edgefl::sim::{trailing_stats, ExperimentLog};
use edgefl::SCHEMA_VERSION;

use crate::error::CliError;

fn fmt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Column labels `<scheme>-seed<seed>`, with a `#n` suffix on repeats.
fn labels(logs: &[ExperimentLog]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    logs.iter()
        .map(|l| {
            let base = format!("{}-seed{}", l.scheme, l.seed);
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                base
            } else {
                format!("{base}#{n}")
            }
        })
        .collect()
}

/// Latest accuracy at or before `t`, if the log has any record by then.
fn accuracy_at(log: &ExperimentLog, t: f64) -> Option<f64> {
    log.records.iter().take_while(|r| r.clock_seconds <= t).last().map(|r| r.accuracy)
}

pub fn report(paths: &[std::path::PathBuf], out: &Path, thresholds: &[f64]) -> Result<(), CliError> {
    if paths.is_empty() {
        return Err(CliError::config("report needs at least one log file"));
    }
    let mut logs = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| CliError::input(p, e))?;
        logs.push(ExperimentLog::from_json(&text).map_err(|e| CliError::input(p, e))?);
    }
    let names = labels(&logs);
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    // Step-aligned series on the union of all event times.
    let mut times: Vec<f64> = logs.iter().flat_map(|l| l.records.iter().map(|r| r.clock_seconds)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let series = out.join("series.csv");
    let mut w = csv::Writer::from_path(&series)?;
    let mut header = vec!["schema_version".to_string(), "clock_seconds".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for t in &times {
        let mut row = vec![SCHEMA_VERSION.to_string(), t.to_string()];
        row.extend(logs.iter().map(|l| fmt(accuracy_at(l, *t))));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(&series, e))?;

    let summary = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary)?;
    w.write_record([
        "schema_version",
        "run",
        "scheme",
        "aggregation",
        "seed",
        "events",
        "final_clock_seconds",
        "final_accuracy",
        "best_accuracy",
        "accuracy_mean",
        "accuracy_variance",
        "trailing_window",
        "trailing_mean",
        "trailing_variance",
    ])?;
    for (name, l) in names.iter().zip(&logs) {
        let acc = l.accuracies();
        let (mean, var) = trailing_stats(&acc, acc.len());
        let s = &l.summary;
        w.write_record([
            SCHEMA_VERSION.to_string(),
            name.clone(),
            l.scheme.to_string(),
            serde_json::to_value(l.aggregation)?.as_str().unwrap_or_default().to_string(),
            l.seed.to_string(),
            s.events.to_string(),
            s.final_clock_seconds.to_string(),
            s.final_accuracy.to_string(),
            s.best_accuracy.to_string(),
            mean.to_string(),
            var.to_string(),
            s.trailing_window.to_string(),
            s.trailing_mean.to_string(),
            s.trailing_variance.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&summary, e))?;

    // Across runs of one scheme: mean and variance of the final accuracy.
    let mut by_scheme: BTreeMap<String, Vec<&ExperimentLog>> = BTreeMap::new();
    for l in &logs {
        by_scheme.entry(l.scheme.to_string()).or_default().push(l);
    }
    let schemes = out.join("schemes.csv");
    let mut w = csv::Writer::from_path(&schemes)?;
    w.write_record([
        "schema_version",
        "scheme",
        "runs",
        "final_accuracy_mean",
        "final_accuracy_variance",
        "trailing_variance_mean",
    ])?;
    for (scheme, runs) in &by_scheme {
        let finals: Vec<f64> = runs.iter().map(|l| l.summary.final_accuracy).collect();
        let (mean, var) = trailing_stats(&finals, finals.len());
        let tv = runs.iter().map(|l| l.summary.trailing_variance).sum::<f64>() / runs.len() as f64;
        w.write_record([
            SCHEMA_VERSION.to_string(),
            scheme.clone(),
            runs.len().to_string(),
            mean.to_string(),
            var.to_string(),
            tv.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&schemes, e))?;

    let reach = out.join("time_to_threshold.csv");
    let mut w = csv::Writer::from_path(&reach)?;
    let mut header = vec!["schema_version".to_string(), "threshold".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for th in thresholds {
        let mut row = vec![SCHEMA_VERSION.to_string(), th.to_string()];
        row.extend(logs.iter().map(|l| fmt(l.time_to(*th))));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(&reach, e))?;

    for p in [series, summary, schemes, reach] {
        println!("wrote {}", p.display());
    }
    Ok(())
}
