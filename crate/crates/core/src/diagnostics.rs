//! Rolling per-parameter gradient variance, summed within a branch and
//! reported on a natural-log scale.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Branch;

/// Floor applied before taking the log.
pub const VAR_FLOOR: f64 = 1e-30;

/// Default rolling window length.
pub const DEFAULT_WINDOW: usize = 32;

/// Ring buffer of the last `window` gradient values for every scalar
/// parameter of one branch.
#[derive(Clone, Debug)]
pub struct RollingVarTracker {
    branch: Branch,
    window: usize,
    params: usize,
    /// `buffer[slot * params + p]`.
    buffer: Vec<f64>,
    next: usize,
    filled: usize,
    updates: u64,
}

impl RollingVarTracker {
    pub fn new(branch: Branch, params: usize, window: usize) -> Self {
        assert!(window >= 2, "rolling window must hold at least two updates");
        RollingVarTracker {
            branch,
            window,
            params,
            buffer: vec![0.0; window * params],
            next: 0,
            filled: 0,
            updates: 0,
        }
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Entries currently buffered per parameter.
    pub fn len(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    /// Total snapshots recorded since creation.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Records one flattened gradient snapshot of the branch.
    pub fn update(&mut self, snapshot: &[f64]) -> Result<()> {
        if snapshot.len() != self.params {
            return Err(Error::shape(
                "tracker_update",
                format!("{} values for {} parameters", snapshot.len(), self.params),
            ));
        }
        let at = self.next * self.params;
        self.buffer[at..at + self.params].copy_from_slice(snapshot);
        self.next = (self.next + 1) % self.window;
        self.filled = (self.filled + 1).min(self.window);
        self.updates += 1;
        Ok(())
    }

    /// Buffered values of parameter `p`, oldest first.
    pub fn history(&self, p: usize) -> Vec<f64> {
        let start = if self.filled < self.window { 0 } else { self.next };
        (0..self.filled)
            .map(|k| self.buffer[((start + k) % self.window) * self.params + p])
            .collect()
    }

    /// Unbiased sample variance of each parameter's buffered values.
    pub fn variances(&self) -> Result<Vec<f64>> {
        if self.filled < 2 {
            return Err(Error::WindowTooShort { have: self.filled });
        }
        let n = self.filled as f64;
        let mut mean = vec![0.0; self.params];
        for slot in 0..self.filled {
            let row = &self.buffer[slot * self.params..(slot + 1) * self.params];
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.params];
        for slot in 0..self.filled {
            let row = &self.buffer[slot * self.params..(slot + 1) * self.params];
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n - 1.0);
        Ok(var)
    }

    pub fn variance_sum(&self) -> Result<f64> {
        Ok(self.variances()?.iter().sum())
    }
}

/// Training mode a variance curve came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Alternating,
    Joint,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Alternating => "alternating",
            Mode::Joint => "joint",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alternating" | "ao" => Ok(Mode::Alternating),
            "joint" => Ok(Mode::Joint),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchVarianceReport {
    pub index: usize,
    pub branch: Branch,
    /// `ln(max(Σ var, VAR_FLOOR))`.
    pub log_variance: f64,
}

pub fn branch_log_variance(tracker: &RollingVarTracker, index: usize) -> Result<BranchVarianceReport> {
    let total = tracker.variance_sum()?;
    Ok(BranchVarianceReport {
        index,
        branch: tracker.branch(),
        log_variance: total.max(VAR_FLOOR).ln(),
    })
}

/// One row of an exported variance series.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceRecord {
    pub step_or_epoch: usize,
    pub branch: Branch,
    pub mode: Mode,
    pub log_variance: f64,
}

const HEADER: [&str; 4] = ["step_or_epoch", "branch", "mode", "log_variance"];

pub fn write_variance_series<W: Write>(history: &[VarianceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in history {
        w.write_record([
            r.step_or_epoch.to_string(),
            r.branch.as_str().to_string(),
            r.mode.to_string(),
            // shortest representation that parses back to the same f64
            format!("{:?}", r.log_variance),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_variance_series(history: &[VarianceRecord], path: &Path) -> Result<()> {
    if history.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let file = std::fs::File::create(path)?;
    write_variance_series(history, std::io::BufWriter::new(file))
}

pub fn load_variance_series(path: &Path) -> Result<Vec<VarianceRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |col: usize, msg: &str| Error::Parse {
            row: r + 1,
            col,
            msg: msg.to_string(),
        };
        let branch = match &rec[1] {
            "AR" => Branch::Ar,
            "CR" => Branch::Cr,
            _ => return Err(bad(1, "unknown branch")),
        };
        out.push(VarianceRecord {
            step_or_epoch: rec[0].parse().map_err(|_| bad(0, "not an integer"))?,
            branch,
            mode: rec[2].parse().map_err(|_| bad(2, "unknown mode"))?,
            log_variance: rec[3].parse().map_err(|_| bad(3, "not a number"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stream_has_zero_variance() {
        let mut t = RollingVarTracker::new(Branch::Ar, 2, 4);
        for _ in 0..6 {
            t.update(&[3.0, -1.0]).unwrap();
        }
        assert_eq!(t.variances().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn alternating_signs_with_window_two() {
        let mut t = RollingVarTracker::new(Branch::Cr, 1, 2);
        for k in 0..5 {
            t.update(&[if k % 2 == 0 { 1.0 } else { -1.0 }]).unwrap();
        }
        assert_eq!(t.variance_sum().unwrap(), 2.0);
    }

    #[test]
    fn buffer_keeps_last_window() {
        let mut t = RollingVarTracker::new(Branch::Ar, 1, 4);
        for k in 0..7 {
            t.update(&[k as f64]).unwrap();
        }
        assert_eq!(t.history(0), vec![3., 4., 5., 6.]);
        assert_eq!(t.len(), 4);
        assert_eq!(t.updates(), 7);
    }

    #[test]
    fn log_variance_examples() {
        let mut t = RollingVarTracker::new(Branch::Ar, 2, 2);
        t.update(&[0.0, 1.0]).unwrap();
        assert!(matches!(branch_log_variance(&t, 0), Err(Error::WindowTooShort { have: 1 })));
        t.update(&[1.0, 0.0]).unwrap();
        // each parameter: variance of {0, 1} = 0.5
        assert_eq!(branch_log_variance(&t, 1).unwrap().log_variance, 0.0);

        let mut z = RollingVarTracker::new(Branch::Cr, 1, 3);
        z.update(&[0.0]).unwrap();
        z.update(&[0.0]).unwrap();
        assert_eq!(branch_log_variance(&z, 0).unwrap().log_variance, VAR_FLOOR.ln());
    }

    #[test]
    fn wrong_snapshot_size() {
        let mut t = RollingVarTracker::new(Branch::Ar, 2, 2);
        assert!(t.update(&[1.0]).is_err());
    }

    #[test]
    fn export_row_count_and_roundtrip() {
        let mut rows = Vec::new();
        for mode in [Mode::Alternating, Mode::Joint] {
            for branch in [Branch::Ar, Branch::Cr] {
                for e in 0..10 {
                    rows.push(VarianceRecord {
                        step_or_epoch: e,
                        branch,
                        mode,
                        log_variance: -(e as f64) / 3.0 + 0.1234567890123456789,
                    });
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("var.csv");
        export_variance_series(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 41);
        assert_eq!(load_variance_series(&path).unwrap(), rows);
        assert!(export_variance_series(&[], &path).is_err());
    }
}
