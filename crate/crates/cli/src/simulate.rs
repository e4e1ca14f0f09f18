use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use edgefl::sim::{run_experiment, FleetConfig, Scheme};
use edgefl::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const DEFAULT_RUNS_DIR: &str = "runs";

pub struct Overrides {
    pub seed: Option<u64>,
    pub scheme: Option<String>,
    pub threads: Option<usize>,
}

/// Everything needed to repeat a run. Written before any compute starts and
/// rewritten with the outcome when the run ends.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_path: PathBuf,
    /// Directory that relative dataset paths are resolved against.
    pub data_root: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub scheme: Scheme,
    pub threads: usize,
    pub started_at: String,
    #[serde(default)]
    pub finished_at: Option<String>,
    /// `running`, `completed` or `failed: <reason>`.
    pub status: String,
    #[serde(default)]
    pub rerun_of: Option<PathBuf>,
    /// Effective configuration with every override applied.
    pub config: FleetConfig,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn simulate(config: &Path, out: Option<&Path>, o: Overrides) -> Result<(), CliError> {
    let text = fs::read_to_string(config).map_err(|e| CliError::input(config, e))?;
    let mut cfg = FleetConfig::from_json(&text).map_err(|e| CliError::input(config, e))?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(s) = &o.scheme {
        cfg.scheme = s.parse().map_err(|e| CliError::config(format!("--scheme: {e}")))?;
    }
    if let Some(t) = o.threads {
        cfg.threads = t;
    }
    cfg.validate().map_err(|e| CliError::input(config, e))?;
    let config_path = absolute(config);
    let data_root = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    execute(cfg, config_path, data_root, out.unwrap_or(Path::new(DEFAULT_RUNS_DIR)), None)
}

pub fn rerun(manifest: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let text = fs::read_to_string(manifest).map_err(|e| CliError::input(manifest, e))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::input(manifest, e))?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(CliError::input(manifest, format!("schema_version {} is not supported", m.schema_version)));
    }
    m.config.validate().map_err(|e| CliError::input(manifest, e))?;
    let base = match out {
        Some(o) => o.to_path_buf(),
        None => m.output_dir.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_RUNS_DIR)),
    };
    execute(m.config, m.config_path, m.data_root, &base, Some(absolute(manifest)))
}

/// Creates `<base>/<scheme>-seed<seed>-<timestamp>[-n]`, never reusing an
/// existing directory.
fn fresh_run_dir(base: &Path, cfg: &FleetConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(base).map_err(|e| CliError::io(base, e))?;
    let stem = format!("{}-seed{}-{}", cfg.scheme, cfg.seed, Utc::now().format("%Y%m%dT%H%M%SZ"));
    for n in 1.. {
        let name = if n == 1 { stem.clone() } else { format!("{stem}-{n}") };
        let dir = base.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
    unreachable!("unbounded suffix search")
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn execute(
    cfg: FleetConfig,
    config_path: PathBuf,
    data_root: PathBuf,
    base: &Path,
    rerun_of: Option<PathBuf>,
) -> Result<(), CliError> {
    let dir = fresh_run_dir(base, &cfg)?;
    let mut manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        config_path,
        data_root,
        output_dir: absolute(&dir),
        seed: cfg.seed,
        scheme: cfg.scheme,
        threads: cfg.threads,
        started_at: now(),
        finished_at: None,
        status: "running".into(),
        rerun_of,
        config: cfg,
    };
    let manifest_path = dir.join("manifest.json");
    write(&manifest_path, &serde_json::to_string_pretty(&manifest)?)?;
    println!("run directory {}", dir.display());

    let result = run_experiment(&manifest.config, &manifest.data_root);
    manifest.finished_at = Some(now());
    manifest.status = match &result {
        Ok(_) => "completed".into(),
        Err(e) => format!("failed: {e}"),
    };
    write(&manifest_path, &serde_json::to_string_pretty(&manifest)?)?;
    let log = result?;

    write(&dir.join("log.json"), &log.to_json()?)?;
    let csv_path = dir.join("cycles.csv");
    let file = fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    log.write_csv(file)?;
    let summary = log.summary_text();
    write(&dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
