//! Subcommand implementations behind the `dualpath` binary.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | configuration or spec error |
//! | 2 | data, checkpoint or I/O error |
//! | 3 | numerical abort |
//! | 4 | a verification verdict failed |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::diagnostics::{export_variance_series, Mode};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_metrics, MetricTable};
use crate::model::Branch;
use crate::run::{compare_modes, prepare_data, train_run, variant_label, Comparison, RunManifest, TrainedRun};
use crate::synth::{export_verdicts, run_theory_suite, SuiteConfig, TrueOperatorSpec, Verdict};
use crate::trainer::EpochReport;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERDICT: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Evaluate,
    Ablate,
    DiagnoseGradvar,
    SynthVerify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::DiagnoseGradvar => "diagnose-gradvar",
            Command::SynthVerify => "synth-verify",
        }
    }
}

/// Maps every error to its documented exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Syntax { .. } | Error::SingleChannel | Error::ShapeMismatch { .. } => EXIT_CONFIG,
        Error::NonFiniteLoss { .. } | Error::NonFiniteValue { .. } => EXIT_NUMERIC,
        Error::FileNotFound(_)
        | Error::Parse { .. }
        | Error::EmptyDataset
        | Error::SplitTooSmall { .. }
        | Error::ConstantChannel(_)
        | Error::EmptyTestSet
        | Error::MissingState(_)
        | Error::UnstableSystem { .. }
        | Error::InsufficientSamples { .. }
        | Error::DegenerateTrajectory
        | Error::WindowTooShort { .. }
        | Error::NotScalarLoss(_)
        | Error::Io(_)
        | Error::Csv(_) => EXIT_DATA,
    }
}

/// Options shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

/// Runs one subcommand, reporting failures on stderr. Returns the exit code.
pub fn run(inv: &Invocation) -> i32 {
    let result = match inv.command {
        Command::SynthVerify => synth_verify(inv),
        other => load_config(inv).and_then(|cfg| {
            std::fs::create_dir_all(&inv.out)?;
            match other {
                Command::Train => cmd_train(&cfg, &inv.out).map(|(_, table)| print!("{table}")),
                Command::Evaluate => cmd_evaluate(&cfg, &inv.out).map(|table| print!("{table}")),
                Command::Ablate => cmd_ablate(&cfg, &inv.out).map(|(_, table)| print!("{table}")),
                Command::DiagnoseGradvar => cmd_diagnose_gradvar(&cfg, &inv.out).map(|(_, summary)| print!("{summary}")),
                Command::SynthVerify => unreachable!(),
            }
            .map(|()| EXIT_OK)
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(inv: &Invocation) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&inv.config).map_err(|e| match e {
        // a missing config file is a configuration problem, not a data one
        Error::FileNotFound(p) => Error::Config(format!("cannot read config file {}", p.display())),
        other => other,
    })?;
    if let Some(seed) = inv.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

pub fn epoch_csv(history: &[EpochReport]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut s = String::from("epoch,train_loss,val_mse,val_mae,ar_log_var,cr_log_var,wall_time_s\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{},{},{:.3}",
            r.epoch,
            r.train_loss,
            r.val_mse,
            r.val_mae,
            fmt(r.ar_log_var),
            fmt(r.cr_log_var),
            r.wall_time.as_secs_f64()
        );
    }
    s
}

fn write_run_outputs(out: &Path, run: &TrainedRun) -> Result<()> {
    save_checkpoint(&out.join("checkpoint.txt"), run.params(), &run.model)?;
    write(&out.join("epochs.csv"), &epoch_csv(&run.outcome.history))?;
    if !run.outcome.epoch_variance.is_empty() {
        export_variance_series(&run.outcome.epoch_variance, &out.join("variance_epoch.csv"))?;
    }
    if !run.outcome.step_variance.is_empty() {
        export_variance_series(&run.outcome.step_variance, &out.join("variance_step.csv"))?;
    }
    Ok(())
}

/// Trains one model; writes checkpoint, epoch log, variance series,
/// test metrics and the manifest into `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<(TrainedRun, MetricTable)> {
    let data = prepare_data(cfg)?;
    let run = train_run(cfg, &data)?;
    write_run_outputs(out, &run)?;
    let mut table = MetricTable::default();
    table.push(&data.name, cfg.horizon, cfg.train.mode.as_str(), run.test_mse, run.test_mae);
    write(&out.join("metrics.csv"), &table.to_csv())?;
    write(&out.join("manifest.txt"), &RunManifest::new("train", cfg, &data).render())?;
    Ok((run, table))
}

/// Scores a saved checkpoint on the test split.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<MetricTable> {
    let path = cfg.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.txt"));
    let (model, params) = load_checkpoint(&path)?;
    let data = prepare_data(cfg)?;
    if model.channels != data.channels || model.lookback != cfg.lookback || model.horizon != cfg.horizon {
        return Err(Error::shape(
            "evaluate",
            format!(
                "checkpoint is D={} L={} H={}, run is D={} L={} H={}",
                model.channels, model.lookback, model.horizon, data.channels, cfg.lookback, cfg.horizon
            ),
        ));
    }
    let (mse, mae) = evaluate_metrics(&params, &model, &data.test, cfg.train.batch)?;
    let mut table = MetricTable::default();
    table.push(&data.name, cfg.horizon, "checkpoint", mse, mae);
    write(&out.join("evaluation.csv"), &table.to_csv())?;
    write(&out.join("manifest.txt"), &RunManifest::new("evaluate", cfg, &data).render())?;
    Ok(table)
}

/// Trains both modes under the same seed and config.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<(Comparison, MetricTable)> {
    let data = prepare_data(cfg)?;
    let cmp = compare_modes(cfg, &data)?;
    let table = cmp.table(&data.name, cfg.horizon);
    write(&out.join("ablation.csv"), &table.to_csv())?;
    write(&out.join("manifest.txt"), &RunManifest::new("ablate", cfg, &data).render())?;
    Ok((cmp, table))
}

/// Trains both modes and exports per-branch gradient log-variance.
/// Returns the comparison and the tail-mean summary CSV.
pub fn cmd_diagnose_gradvar(cfg: &RunConfig, out: &Path) -> Result<(Comparison, String)> {
    let data = prepare_data(cfg)?;
    let cmp = compare_modes(cfg, &data)?;
    export_variance_series(&cmp.variance_records(false), &out.join("gradvar_epoch.csv"))?;
    export_variance_series(&cmp.variance_records(true), &out.join("gradvar_step.csv"))?;
    let mut summary = String::from("variant,branch,tail_mean_log_variance\n");
    for mode in [Mode::Alternating, Mode::Joint] {
        for branch in [Branch::Ar, Branch::Cr] {
            if let Some(v) = cmp.tail_log_variance(mode, branch, 5) {
                let _ = writeln!(summary, "{},{},{v:?}", variant_label(mode), branch.as_str());
            }
        }
    }
    write(&out.join("gradvar_summary.csv"), &summary)?;
    write(&out.join("manifest.txt"), &RunManifest::new("diagnose-gradvar", cfg, &data).render())?;
    Ok((cmp, summary))
}

/// Runs the theory suite on the synthetic spec file named by `--config`.
fn synth_verify(inv: &Invocation) -> Result<i32> {
    let spec = TrueOperatorSpec::load(&inv.config).map_err(|e| match e {
        Error::FileNotFound(p) => Error::Config(format!("cannot read spec file {}", p.display())),
        other => other,
    })?;
    std::fs::create_dir_all(&inv.out)?;
    let config = SuiteConfig {
        seed: inv.seed.unwrap_or(0),
        ..SuiteConfig::default()
    };
    let verdicts = cmd_synth_verify(&spec, &config, &inv.out)?;
    for v in &verdicts {
        println!(
            "{:<28} {:>14.6e} {:>14.6e} {:>12.4e} {}",
            v.check, v.estimate, v.reference, v.std_error, v.status
        );
    }
    Ok(if verdicts.iter().any(Verdict::failed) {
        EXIT_VERDICT
    } else {
        EXIT_OK
    })
}

pub fn cmd_synth_verify(spec: &TrueOperatorSpec, config: &SuiteConfig, out: &Path) -> Result<Vec<Verdict>> {
    let verdicts = run_theory_suite(spec, config)?;
    export_verdicts(&verdicts, &out.join("verdicts.csv"))?;
    Ok(verdicts)
}
