//! Forecast accuracy on a window set.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{predict, ModelConfig, Params};
use crate::trainer::WindowSet;

/// MSE and MAE over every forecast entry of `set`, evaluated in chunks
/// of `batch` windows.
pub fn evaluate_metrics(params: &Params, config: &ModelConfig, set: &WindowSet, batch: usize) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let windows: Vec<_> = chunk.iter().map(|&k| set.window(k)).collect();
        let xs: Vec<_> = windows.iter().map(|w| &w.x).collect();
        let y_hat = predict(&xs, params, config)?;
        let truth = windows.iter().flat_map(|w| w.y.data().iter());
        for (p, t) in y_hat.data().iter().zip(truth) {
            let e = p - t;
            se += e * e;
            ae += e.abs();
            n += 1;
        }
    }
    Ok((se / n as f64, ae / n as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub dataset: String,
    pub horizon: usize,
    pub variant: String,
    pub mse: f64,
    pub mae: f64,
}

/// Rows of results, printable as an aligned text table or CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn push(&mut self, dataset: &str, horizon: usize, variant: &str, mse: f64, mae: f64) {
        self.rows.push(MetricRow {
            dataset: dataset.to_string(),
            horizon,
            variant: variant.to_string(),
            mse,
            mae,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dataset,horizon,variant,mse,mae\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{:?},{:?}\n", r.dataset, r.horizon, r.variant, r.mse, r.mae));
        }
        s
    }
}

impl fmt::Display for MetricTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>4} {:<14} {:>10} {:>10}", "dataset", "H", "variant", "MSE", "MAE")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:>4} {:<14} {:>10.4} {:>10.4}",
                r.dataset, r.horizon, r.variant, r.mse, r.mae
            )?;
        }
        Ok(())
    }
}
