//! Line-oriented `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::diagnostics::Mode;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::{AoSchedule, Granularity, TrainConfig};

/// Where the series comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    /// Generated from a synthetic operator spec file.
    Synth(PathBuf),
}

impl DataSource {
    /// Short name used in result tables: the file stem.
    pub fn name(&self) -> String {
        let p = match self {
            DataSource::Csv(p) | DataSource::Synth(p) => p,
        };
        p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into())
    }

    pub fn path(&self) -> &Path {
        match self {
            DataSource::Csv(p) | DataSource::Synth(p) => p,
        }
    }
}

/// Everything a command needs, resolved from the config file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    /// Explicit split ratio; `None` picks 6:2:2 for ETT files and 7:1:2 otherwise.
    pub ratio: Option<[f64; 3]>,
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub train: TrainConfig,
    /// `None` sniffs the first column.
    pub timestamp: Option<bool>,
    /// Length of a generated synthetic series.
    pub synth_length: usize,
    pub checkpoint: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "data",
    "ratio",
    "lookback",
    "horizon",
    "mode",
    "n_ar",
    "n_cr",
    "lr_ar",
    "lr_cr",
    "lambda_ar",
    "lambda_cr",
    "batch",
    "epochs",
    "patience",
    "seed",
    "d_model",
    "heads",
    "layers",
    "d_ff",
    "granularity",
    "var_window",
    "timestamp",
    "synth_length",
    "checkpoint",
];

fn parse_ratio(v: &str) -> Option<[f64; 3]> {
    let parts: Vec<f64> = v
        .split([':', ',', ' '])
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    <[f64; 3]>::try_from(parts).ok()
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut data = None;
        let mut cfg = RunConfig {
            data: DataSource::Csv(PathBuf::new()),
            ratio: None,
            lookback: 512,
            horizon: 96,
            d_model: 128,
            heads: 8,
            layers: 2,
            d_ff: 256,
            train: TrainConfig::default(),
            timestamp: None,
            synth_length: 4000,
            checkpoint: None,
        };
        let (mut n_ar, mut n_cr, mut granularity) = (10, 2, Granularity::MiniBatch);
        let mut seen = Vec::new();

        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", n + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(at(format!("unknown key `{key}`")));
            }
            if seen.contains(&key) {
                return Err(at(format!("duplicate key `{key}`")));
            }
            seen.push(key);
            let bad = |what: &str| at(format!("`{key}` expects {what}, got `{value}`"));
            let int = || value.parse::<usize>().map_err(|_| bad("a non-negative integer"));
            let float = || value.parse::<f64>().map_err(|_| bad("a number"));
            match key {
                "data" => {
                    data = Some(match value.strip_prefix("synth:") {
                        Some(p) => DataSource::Synth(base_dir.join(p.trim())),
                        None => DataSource::Csv(base_dir.join(value)),
                    })
                }
                "ratio" => cfg.ratio = Some(parse_ratio(value).ok_or_else(|| bad("three numbers like 7:1:2"))?),
                "lookback" => cfg.lookback = int()?,
                "horizon" => cfg.horizon = int()?,
                "mode" => cfg.train.mode = value.parse().map_err(|_| bad("`alternating` or `joint`"))?,
                "n_ar" => n_ar = int()?,
                "n_cr" => n_cr = int()?,
                "lr_ar" => cfg.train.lr_ar = float()?,
                "lr_cr" => cfg.train.lr_cr = float()?,
                "lambda_ar" => cfg.train.lambda_ar = float()?,
                "lambda_cr" => cfg.train.lambda_cr = float()?,
                "batch" => cfg.train.batch = int()?,
                "epochs" => cfg.train.epochs = int()?,
                "patience" => cfg.train.patience = int()?,
                "seed" => cfg.train.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
                "d_model" => cfg.d_model = int()?,
                "heads" => cfg.heads = int()?,
                "layers" => cfg.layers = int()?,
                "d_ff" => cfg.d_ff = int()?,
                "granularity" => {
                    granularity = match value {
                        "batch" | "mini-batch" => Granularity::MiniBatch,
                        "epoch" | "inner-epoch" => Granularity::InnerEpoch,
                        _ => return Err(bad("`batch` or `epoch`")),
                    }
                }
                "var_window" => cfg.train.var_window = int()?,
                "timestamp" => {
                    cfg.timestamp = match value {
                        "auto" => None,
                        "yes" | "true" => Some(true),
                        "no" | "false" => Some(false),
                        _ => return Err(bad("`auto`, `yes` or `no`")),
                    }
                }
                "synth_length" => cfg.synth_length = int()?,
                "checkpoint" => cfg.checkpoint = Some(base_dir.join(value)),
                _ => unreachable!("key list checked above"),
            }
        }
        cfg.data = data.ok_or_else(|| Error::Config("missing required key `data`".into()))?;
        cfg.train.schedule = AoSchedule::new(n_ar, n_cr, granularity)?;
        cfg.train.validate()?;
        cfg.model(1).validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn model(&self, channels: usize) -> ModelConfig {
        ModelConfig {
            channels,
            lookback: self.lookback,
            horizon: self.horizon,
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            d_ff: self.d_ff,
        }
    }

    /// Split ratio, defaulting by dataset family.
    pub fn split_ratio(&self) -> [f64; 3] {
        self.ratio.unwrap_or_else(|| {
            if self.data.name().to_ascii_uppercase().starts_with("ETT") {
                [6.0, 2.0, 2.0]
            } else {
                [7.0, 1.0, 2.0]
            }
        })
    }

    /// Fully resolved configuration in the input format.
    pub fn render(&self) -> String {
        let t = &self.train;
        let data = match &self.data {
            DataSource::Csv(p) => p.display().to_string(),
            DataSource::Synth(p) => format!("synth:{}", p.display()),
        };
        let r = self.split_ratio();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("data", data);
        kv("ratio", format!("{}:{}:{}", r[0], r[1], r[2]));
        kv("lookback", self.lookback.to_string());
        kv("horizon", self.horizon.to_string());
        kv("mode", t.mode.to_string());
        kv("n_ar", t.schedule.n_ar().to_string());
        kv("n_cr", t.schedule.n_cr().to_string());
        kv(
            "granularity",
            match t.schedule.granularity() {
                Granularity::MiniBatch => "batch".into(),
                Granularity::InnerEpoch => "epoch".into(),
            },
        );
        kv("lr_ar", format!("{:?}", t.lr_ar));
        kv("lr_cr", format!("{:?}", t.lr_cr));
        kv("lambda_ar", format!("{:?}", t.lambda_ar));
        kv("lambda_cr", format!("{:?}", t.lambda_cr));
        kv("batch", t.batch.to_string());
        kv("epochs", t.epochs.to_string());
        kv("patience", t.patience.to_string());
        kv("seed", t.seed.to_string());
        kv("var_window", t.var_window.to_string());
        kv("d_model", self.d_model.to_string());
        kv("heads", self.heads.to_string());
        kv("layers", self.layers.to_string());
        kv("d_ff", self.d_ff.to_string());
        kv(
            "timestamp",
            match self.timestamp {
                None => "auto".into(),
                Some(true) => "yes".into(),
                Some(false) => "no".into(),
            },
        );
        kv("synth_length", self.synth_length.to_string());
        if let Some(c) = &self.checkpoint {
            kv("checkpoint", c.display().to_string());
        }
        s
    }

    pub fn with_mode(&self, mode: Mode) -> RunConfig {
        let mut c = self.clone();
        c.train.mode = mode;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::parse("data = ETTh1.csv\nhorizon = 192 # longer\nmode = joint\n", Path::new("/d")).unwrap();
        assert_eq!(cfg.data, DataSource::Csv(PathBuf::from("/d/ETTh1.csv")));
        assert_eq!((cfg.lookback, cfg.horizon), (512, 192));
        assert_eq!(cfg.train.mode, Mode::Joint);
        assert_eq!(cfg.split_ratio(), [6.0, 2.0, 2.0]);
        assert_eq!((cfg.train.schedule.n_ar(), cfg.train.schedule.n_cr()), (10, 2));
        assert_eq!((cfg.train.lr_ar, cfg.train.lr_cr), (5e-3, 1e-4));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("data = x.csv\nlearning_rate = 1\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "data = x.csv\nn_cr = 0\n",
            "data = x.csv\npatience = 0\n",
            "data = x.csv\nlr_ar = -1\n",
            "data = x.csv\nratio = 7:1\n",
            "data = x.csv\nheads = 3\n",
            "lookback = 8\n",
            "data = x.csv\nseed = 1\nseed = 2\n",
        ] {
            assert!(matches!(RunConfig::parse(text, Path::new(".")), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn render_roundtrips() {
        let text = "data = synth:corr.spec\nratio = 7:1:2\nlookback = 48\nhorizon = 12\nd_model = 16\n\
                    heads = 2\nlayers = 1\nd_ff = 32\ngranularity = epoch\nlambda_cr = 0.01\n";
        let cfg = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.data, DataSource::Synth(PathBuf::from("/cfg/corr.spec")));
        let again = RunConfig::parse(&cfg.render(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, RunConfig { ratio: Some([7.0, 1.0, 2.0]), ..cfg });
    }
}
