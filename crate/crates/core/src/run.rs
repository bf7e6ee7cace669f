//! End-to-end runs: load and split data, train, evaluate, compare modes.

use std::fmt::Write as _;

use crate::checkpoint::sha256_hex;
use crate::config::{DataSource, RunConfig};
use crate::data::{apply_scaler, chronological_split, fit_scaler, load_csv, sniff_timestamp_column, ChannelScaler, SeriesMatrix, Splits};
use crate::diagnostics::{Mode, VarianceRecord};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_metrics, MetricTable};
use crate::model::{Branch, ModelConfig, Params};
use crate::synth::{generate_series, TrueOperatorSpec};
use crate::trainer::{train, TrainOutcome, WindowSet};

pub const VERSION: &str = concat!("dualpath ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFingerprint {
    pub path: String,
    pub rows: usize,
    pub columns: usize,
    /// SHA-256 of the file bytes, or of the generated values for synthetic data.
    pub checksum: String,
}

/// Standardized, windowed splits of one dataset.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub name: String,
    pub channels: usize,
    pub scaler: ChannelScaler,
    pub splits: Splits,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub fingerprint: DatasetFingerprint,
}

fn load_series(cfg: &RunConfig) -> Result<(SeriesMatrix, String)> {
    match &cfg.data {
        DataSource::Csv(path) => {
            if !path.exists() {
                return Err(Error::FileNotFound(path.clone()));
            }
            let has_ts = match cfg.timestamp {
                Some(t) => t,
                None => sniff_timestamp_column(path)?,
            };
            let series = load_csv(path, has_ts)?;
            Ok((series, sha256_hex(&std::fs::read(path)?)))
        }
        DataSource::Synth(path) => {
            let spec = TrueOperatorSpec::load(path)?;
            let series = generate_series(&spec, cfg.synth_length, cfg.train.seed)?;
            let bytes: Vec<u8> = series.values().iter().flat_map(|v| v.to_le_bytes()).collect();
            Ok((series, sha256_hex(&bytes)))
        }
    }
}

/// Loads, splits chronologically, standardizes with train statistics
/// and windows every split with stride 1.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let (series, checksum) = load_series(cfg)?;
    if series.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = chronological_split(series.len(), cfg.split_ratio())?;
    let raw = Splits::materialize(&series, &spec, cfg.lookback, cfg.horizon)?;
    let scaler = fit_scaler(&raw.train)?;
    let splits = raw.map(|s| apply_scaler(&scaler, s));
    let windows = |s: &SeriesMatrix| WindowSet::new(s.clone(), cfg.lookback, cfg.horizon, 1);
    Ok(PreparedData {
        name: cfg.data.name(),
        channels: series.channels(),
        train: windows(&splits.train)?,
        val: windows(&splits.val)?,
        test: windows(&splits.test)?,
        scaler,
        splits,
        fingerprint: DatasetFingerprint {
            path: cfg.data.path().display().to_string(),
            rows: series.len(),
            columns: series.channels(),
            checksum,
        },
    })
}

/// Resolved inputs of a run, written beside its outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: String,
    pub fingerprint: DatasetFingerprint,
    pub seed: u64,
    pub mode: String,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, data: &PreparedData) -> Self {
        RunManifest {
            command: command.to_string(),
            config: cfg.render(),
            fingerprint: data.fingerprint.clone(),
            seed: cfg.train.seed,
            mode: cfg.train.mode.to_string(),
            version: VERSION.to_string(),
        }
    }

    pub fn render(&self) -> String {
        let f = &self.fingerprint;
        let mut s = String::new();
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "dataset = {}", f.path);
        let _ = writeln!(s, "rows = {}", f.rows);
        let _ = writeln!(s, "columns = {}", f.columns);
        let _ = writeln!(s, "sha256 = {}", f.checksum);
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config);
        s
    }
}

/// A trained model with its validation history and test scores.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub model: ModelConfig,
    pub outcome: TrainOutcome,
    pub test_mse: f64,
    pub test_mae: f64,
}

impl TrainedRun {
    pub fn params(&self) -> &Params {
        &self.outcome.params
    }
}

pub fn train_run(cfg: &RunConfig, data: &PreparedData) -> Result<TrainedRun> {
    let model = cfg.model(data.channels);
    let outcome = train(&model, &cfg.train, &data.train, &data.val)?;
    let (test_mse, test_mae) = evaluate_metrics(&outcome.params, &model, &data.test, cfg.train.batch)?;
    log::info!("{} best epoch {}: test mse {test_mse:.5} mae {test_mae:.5}", cfg.train.mode, outcome.best_epoch);
    Ok(TrainedRun {
        model,
        outcome,
        test_mse,
        test_mae,
    })
}

pub fn variant_label(mode: Mode) -> &'static str {
    match mode {
        Mode::Alternating => "w/ AO",
        Mode::Joint => "w/o AO",
    }
}

/// Alternating and joint runs under one seed and config.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub alternating: TrainedRun,
    pub joint: TrainedRun,
}

impl Comparison {
    pub fn table(&self, dataset: &str, horizon: usize) -> MetricTable {
        let mut t = MetricTable::default();
        for (mode, run) in [(Mode::Alternating, &self.alternating), (Mode::Joint, &self.joint)] {
            t.push(dataset, horizon, variant_label(mode), run.test_mse, run.test_mae);
        }
        t
    }

    pub fn run(&self, mode: Mode) -> &TrainedRun {
        match mode {
            Mode::Alternating => &self.alternating,
            Mode::Joint => &self.joint,
        }
    }

    /// Mean branch log-variance over the last `n` recorded epochs.
    pub fn tail_log_variance(&self, mode: Mode, branch: Branch, n: usize) -> Option<f64> {
        tail_mean(&self.run(mode).outcome.epoch_variance, branch, n)
    }

    pub fn variance_records(&self, step_level: bool) -> Vec<VarianceRecord> {
        [&self.alternating, &self.joint]
            .iter()
            .flat_map(|r| {
                if step_level {
                    r.outcome.step_variance.clone()
                } else {
                    r.outcome.epoch_variance.clone()
                }
            })
            .collect()
    }
}

pub fn tail_mean(records: &[VarianceRecord], branch: Branch, n: usize) -> Option<f64> {
    let vals: Vec<f64> = records.iter().filter(|r| r.branch == branch).map(|r| r.log_variance).collect();
    if vals.is_empty() {
        return None;
    }
    let tail = &vals[vals.len().saturating_sub(n)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

pub fn compare_modes(cfg: &RunConfig, data: &PreparedData) -> Result<Comparison> {
    Ok(Comparison {
        alternating: train_run(&cfg.with_mode(Mode::Alternating), data)?,
        joint: train_run(&cfg.with_mode(Mode::Joint), data)?,
    })
}
