//! Loading, chronological splitting, standardization, windowing, RevIN.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Floor for the RevIN variance.
pub const REVIN_EPS: f64 = 1e-5;

/// `D × T` observation grid, one row per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesMatrix {
    channels: usize,
    len: usize,
    values: Vec<f64>,
    names: Vec<String>,
    timestamps: Option<Vec<String>>,
}

impl SeriesMatrix {
    /// Builds a series from channel-major values (`values[i * len + t]`).
    pub fn new(names: Vec<String>, len: usize, values: Vec<f64>) -> Result<Self> {
        let channels = names.len();
        if channels == 0 || len == 0 {
            return Err(Error::EmptyDataset);
        }
        if values.len() != channels * len {
            return Err(Error::shape(
                "series",
                format!("{channels} channels x {len} steps needs {} values, got {}", channels * len, values.len()),
            ));
        }
        Ok(SeriesMatrix {
            channels,
            len,
            values,
            names,
            timestamps: None,
        })
    }

    pub fn from_channels(channels: Vec<Vec<f64>>) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::shape("series", "channels differ in length"));
        }
        let names = (0..channels.len()).map(|i| format!("ch{i}")).collect();
        SeriesMatrix::new(names, len, channels.concat())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.values[i * self.len..(i + 1) * self.len]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Steps `[start, end)` of every channel.
    pub fn range(&self, start: usize, end: usize) -> SeriesMatrix {
        assert!(start <= end && end <= self.len);
        let len = end - start;
        let mut values = Vec::with_capacity(self.channels * len);
        for i in 0..self.channels {
            values.extend_from_slice(&self.channel(i)[start..end]);
        }
        SeriesMatrix {
            channels: self.channels,
            len,
            values,
            names: self.names.clone(),
            timestamps: self.timestamps.as_ref().map(|t| t[start..end].to_vec()),
        }
    }
}

/// Reads a comma-separated file with a header row. When `has_timestamp`
/// is set the first column is kept as metadata only.
pub fn load_csv(path: &Path, has_timestamp: bool) -> Result<SeriesMatrix> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let skip = usize::from(has_timestamp);
    let names: Vec<String> = headers.iter().skip(skip).map(|h| h.trim().to_string()).collect();
    if names.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut stamps = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            col: 0,
            msg: e.to_string(),
        })?;
        if record.len() != names.len() + skip {
            return Err(Error::Parse {
                row,
                col: record.len(),
                msg: format!("expected {} fields, found {}", names.len() + skip, record.len()),
            });
        }
        if has_timestamp {
            stamps.push(record[0].to_string());
        }
        for (c, col) in columns.iter_mut().enumerate() {
            let cell = record[c + skip].trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                col: c + skip,
                msg: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    col: c + skip,
                    msg: format!("`{cell}` is not finite"),
                });
            }
            col.push(v);
        }
    }
    let len = columns[0].len();
    if len == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut series = SeriesMatrix::new(names, len, columns.concat())?;
    if has_timestamp {
        series.timestamps = Some(stamps);
    }
    Ok(series)
}

/// Guesses whether the first column is a timestamp: it is when the first
/// data cell does not parse as a number.
pub fn sniff_timestamp_column(path: &Path) -> Result<bool> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    match reader.records().next() {
        Some(rec) => {
            let rec = rec?;
            Ok(rec.get(0).is_some_and(|c| c.trim().parse::<f64>().is_err()))
        }
        None => Err(Error::EmptyDataset),
    }
}

// ── splits ───────────────────────────────────────────────────────────

/// Chronological train/val/test boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub ratio: [f64; 3],
    /// `[0, b1, b2, T]`.
    pub bounds: [usize; 4],
}

impl SplitSpec {
    pub fn lengths(&self) -> [usize; 3] {
        let b = self.bounds;
        [b[1] - b[0], b[2] - b[1], b[3] - b[2]]
    }
}

/// Boundaries at `floor(T · cumulative ratio)`; no shuffling.
pub fn chronological_split(len: usize, ratio: [f64; 3]) -> Result<SplitSpec> {
    if ratio.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::Config(format!("split ratio components must be positive, got {ratio:?}")));
    }
    let total: f64 = ratio.iter().sum();
    // Integer-valued ratios are resolved exactly so 7:1:2 of 100 is 70/10/20.
    let cut = |num: f64| -> usize {
        let exact = len as f64 * num / total;
        let rounded = exact.round();
        if (exact - rounded).abs() < 1e-9 {
            rounded as usize
        } else {
            exact.floor() as usize
        }
    };
    let b1 = cut(ratio[0]);
    let b2 = cut(ratio[0] + ratio[1]);
    Ok(SplitSpec {
        ratio,
        bounds: [0, b1, b2, len],
    })
}

/// The three materialized splits. Val and test carry `lookback` steps of
/// left context from the preceding split so their first window's target
/// starts exactly at the boundary.
#[derive(Clone, Debug)]
pub struct Splits {
    pub spec: SplitSpec,
    pub train: SeriesMatrix,
    pub val: SeriesMatrix,
    pub test: SeriesMatrix,
}

impl Splits {
    pub fn materialize(series: &SeriesMatrix, spec: &SplitSpec, lookback: usize, horizon: usize) -> Result<Self> {
        let [_, b1, b2, end] = spec.bounds;
        let needed = lookback + horizon;
        if b1 < needed {
            return Err(Error::SplitTooSmall { split: "train", len: b1, needed });
        }
        if b2 - b1 < horizon || b1 < lookback {
            return Err(Error::SplitTooSmall {
                split: "val",
                len: b2 - b1 + lookback.min(b1),
                needed,
            });
        }
        if end - b2 < horizon {
            return Err(Error::SplitTooSmall {
                split: "test",
                len: end - b2 + lookback.min(b2),
                needed,
            });
        }
        Ok(Splits {
            spec: spec.clone(),
            train: series.range(0, b1),
            val: series.range(b1 - lookback, b2),
            test: series.range(b2 - lookback, end),
        })
    }

    pub fn map(&self, f: impl Fn(&SeriesMatrix) -> SeriesMatrix) -> Splits {
        Splits {
            spec: self.spec.clone(),
            train: f(&self.train),
            val: f(&self.val),
            test: f(&self.test),
        }
    }
}

// ── standardization ──────────────────────────────────────────────────

/// Per-channel z-score fitted on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Population mean and standard deviation per channel.
pub fn fit_scaler(train: &SeriesMatrix) -> Result<ChannelScaler> {
    let mut mean = Vec::with_capacity(train.channels());
    let mut std = Vec::with_capacity(train.channels());
    for i in 0..train.channels() {
        let c = train.channel(i);
        let m = c.iter().sum::<f64>() / c.len() as f64;
        let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c.len() as f64;
        if var <= 0.0 {
            return Err(Error::ConstantChannel(i));
        }
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(ChannelScaler { mean, std })
}

impl ChannelScaler {
    pub fn identity(channels: usize) -> Self {
        ChannelScaler {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

pub fn apply_scaler(scaler: &ChannelScaler, series: &SeriesMatrix) -> SeriesMatrix {
    let mut out = series.clone();
    let len = series.len();
    for i in 0..series.channels() {
        let (m, s) = (scaler.mean[i], scaler.std[i]);
        for v in &mut out.values[i * len..(i + 1) * len] {
            *v = (*v - m) / s;
        }
    }
    out
}

// ── windows ──────────────────────────────────────────────────────────

/// One training sample: lookback `x` (`D × L`) ending at `origin`, and the
/// following `horizon` steps `y` (`D × H`).
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub x: Tensor,
    pub y: Tensor,
    pub origin: usize,
}

/// Number of windows of a split of length `len`.
pub fn window_count(len: usize, lookback: usize, horizon: usize, stride: usize) -> usize {
    if len < lookback + horizon || stride == 0 {
        0
    } else {
        (len - lookback - horizon) / stride + 1
    }
}

/// Window origins (index of the last lookback step) in chronological order.
pub fn window_origins(len: usize, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<usize>> {
    if len < lookback + horizon {
        return Err(Error::SplitTooSmall {
            split: "window",
            len,
            needed: lookback + horizon,
        });
    }
    let n = window_count(len, lookback, horizon, stride.max(1));
    Ok((0..n).map(|k| lookback - 1 + k * stride.max(1)).collect())
}

/// Extracts the window whose lookback ends at `origin`.
pub fn window_at(split: &SeriesMatrix, origin: usize, lookback: usize, horizon: usize) -> WindowPair {
    let d = split.channels();
    let start = origin + 1 - lookback;
    let mut x = Vec::with_capacity(d * lookback);
    let mut y = Vec::with_capacity(d * horizon);
    for i in 0..d {
        let c = split.channel(i);
        x.extend_from_slice(&c[start..=origin]);
        y.extend_from_slice(&c[origin + 1..origin + 1 + horizon]);
    }
    WindowPair {
        x: Tensor::new([d, lookback], x).expect("window shape"),
        y: Tensor::new([d, horizon], y).expect("window shape"),
        origin,
    }
}

/// Sliding windows over a split, `N − L − H + 1` of them at stride 1.
pub fn window_iter(
    split: &SeriesMatrix,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<impl Iterator<Item = WindowPair> + '_> {
    let origins = window_origins(split.len(), lookback, horizon, stride)?;
    Ok(origins
        .into_iter()
        .map(move |o| window_at(split, o, lookback, horizon)))
}

// ── RevIN ────────────────────────────────────────────────────────────

/// Per-channel lookback statistics; `std` already includes the epsilon.
#[derive(Clone, Debug, PartialEq)]
pub struct RevinStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Normalizes each row of `x` by its own mean and `sqrt(var + ε)`.
pub fn revin_normalize(x: &Tensor) -> (Tensor, RevinStats) {
    let (d, l) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; d * l];
    let mut mean = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    for i in 0..d {
        let row = x.row(i);
        let m = row.iter().sum::<f64>() / l as f64;
        let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / l as f64;
        let s = (var + REVIN_EPS).sqrt();
        for (o, v) in out[i * l..(i + 1) * l].iter_mut().zip(row) {
            *o = (v - m) / s;
        }
        mean.push(m);
        std.push(s);
    }
    (Tensor::new([d, l], out).expect("same shape"), RevinStats { mean, std })
}

/// Inverse of [`revin_normalize`] for any row length.
pub fn revin_denormalize(y: &Tensor, stats: &RevinStats) -> Tensor {
    let (d, h) = (y.shape()[0], y.shape()[1]);
    let mut out = y.clone();
    for i in 0..d {
        for v in &mut out.data_mut()[i * h..(i + 1) * h] {
            *v = *v * stats.std[i] + stats.mean[i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_plain_csv() {
        let f = write_tmp("a,b,c\n1,2,3\n4,5,6\n7,8,9\n10,11,12\n");
        let s = load_csv(f.path(), false).unwrap();
        assert_eq!((s.channels(), s.len()), (3, 4));
        assert_eq!(s.channel(1), &[2., 5., 8., 11.]);
    }

    #[test]
    fn text_in_row_two_is_a_parse_error() {
        let f = write_tmp("a,b\n1,2\n3,oops\n");
        match load_csv(f.path(), false) {
            Err(Error::Parse { row: 2, col: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn timestamp_column_is_metadata() {
        let f = write_tmp("date,x,y\n2016-07-01 00:00:00,1,2\n2016-07-01 01:00:00,3,4\n");
        assert!(sniff_timestamp_column(f.path()).unwrap());
        let s = load_csv(f.path(), true).unwrap();
        assert_eq!(s.channels(), 2);
        assert_eq!(s.timestamps().unwrap()[1], "2016-07-01 01:00:00");
    }

    #[test]
    fn missing_and_empty_files() {
        assert!(matches!(
            load_csv(Path::new("/nonexistent/x.csv"), false),
            Err(Error::FileNotFound(_))
        ));
        let f = write_tmp("a,b\n");
        assert!(matches!(load_csv(f.path(), false), Err(Error::EmptyDataset)));
    }

    #[test]
    fn split_lengths() {
        assert_eq!(chronological_split(100, [7., 1., 2.]).unwrap().lengths(), [70, 10, 20]);
        assert_eq!(chronological_split(17420, [6., 2., 2.]).unwrap().lengths(), [10452, 3484, 3484]);
        assert!(chronological_split(100, [0., 1., 1.]).is_err());
    }

    #[test]
    fn tiny_series_cannot_hold_a_window() {
        let s = SeriesMatrix::from_channels(vec![vec![0.0; 10]]).unwrap();
        let spec = chronological_split(10, [7., 1., 2.]).unwrap();
        assert!(matches!(
            Splits::materialize(&s, &spec, 512, 96),
            Err(Error::SplitTooSmall { split: "train", .. })
        ));
    }

    #[test]
    fn scaler_statistics() {
        let s = SeriesMatrix::from_channels(vec![vec![2., 4., 6.]]).unwrap();
        let sc = fit_scaler(&s).unwrap();
        assert_eq!(sc.mean[0], 4.0);
        assert!((sc.std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let c = SeriesMatrix::from_channels(vec![vec![5., 5., 5.]]).unwrap();
        assert!(matches!(fit_scaler(&c), Err(Error::ConstantChannel(0))));
        let id = apply_scaler(&ChannelScaler::identity(1), &s);
        assert_eq!(id, s);
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_count(700, 512, 96, 1), 93);
        assert_eq!(window_count(608, 512, 96, 1), 1);
        let s = SeriesMatrix::from_channels(vec![(0..20).map(f64::from).collect()]).unwrap();
        let w: Vec<_> = window_iter(&s, 5, 3, 1).unwrap().collect();
        assert_eq!(w.len(), 13);
        assert_eq!(w[0].x.data(), &[0., 1., 2., 3., 4.]);
        assert_eq!(w[0].y.data(), &[5., 6., 7.]);
        assert_eq!(w[0].origin, 4);
        assert!(window_iter(&s, 18, 3, 1).is_err());
    }

    #[test]
    fn revin_examples() {
        let x = Tensor::new([2, 3], vec![1., 2., 3., 5., 5., 5.]).unwrap();
        let (n, stats) = revin_normalize(&x);
        assert!((n.data()[0] + 1.224735).abs() < 1e-5);
        assert_eq!(n.data()[1], 0.0);
        assert_eq!(&n.data()[3..], &[0., 0., 0.]);
        let back = revin_denormalize(&n, &stats);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
