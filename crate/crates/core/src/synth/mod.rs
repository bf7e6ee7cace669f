//! Synthetic multivariate series from a known linear transition operator,
//! with Monte-Carlo checks of the gradient-entanglement identities.

mod suite;
mod theory;

pub use suite::*;
pub use theory::*;

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::data::SeriesMatrix;
use crate::error::{Error, Result};

/// Generation aborts once any value exceeds this magnitude.
pub const MAGNITUDE_GUARD: f64 = 1e6;

/// Blocks simulated before a Monte-Carlo window is read off.
pub const BURN_IN_BLOCKS: usize = 32;

/// Instantaneous coupling: innovation of `target` is
/// `alpha * v_source + sqrt(1 - alpha²) * ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub target: usize,
    pub source: usize,
    pub alpha: f64,
}

/// Ground-truth operator. Every map `f_ij` is the linear "carry last
/// value" template scaled by `coef[i][j]`: `f_ij(x)[h] = coef[i][j] * x[L-1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueOperatorSpec {
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    /// `coef[i][j]`; the diagonal is the AR part.
    pub coef: Vec<Vec<f64>>,
    pub sigma: f64,
    pub couplings: Vec<Coupling>,
}

impl TrueOperatorSpec {
    /// AR-only operator with the same coefficient on every channel.
    pub fn diagonal(channels: usize, lookback: usize, horizon: usize, c: f64, sigma: f64) -> Self {
        let coef = (0..channels)
            .map(|i| (0..channels).map(|j| if i == j { c } else { 0.0 }).collect())
            .collect();
        TrueOperatorSpec {
            channels,
            lookback,
            horizon,
            coef,
            sigma,
            couplings: Vec::new(),
        }
    }

    pub fn with_coupling(mut self, target: usize, source: usize, alpha: f64) -> Self {
        self.couplings.push(Coupling { target, source, alpha });
        self
    }

    pub fn with_cross(mut self, i: usize, j: usize, scale: f64) -> Self {
        self.coef[i][j] = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.lookback == 0 || self.horizon == 0 {
            return bad("channels, lookback and horizon must be positive".into());
        }
        if self.coef.len() != self.channels || self.coef.iter().any(|r| r.len() != self.channels) {
            return bad("coefficient matrix must be channels x channels".into());
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be a non-negative number, got {}", self.sigma));
        }
        for c in &self.couplings {
            if c.target >= self.channels || c.source >= self.channels || c.target == c.source {
                return bad(format!("invalid coupling pair ({}, {})", c.target, c.source));
            }
            if !(c.alpha.abs() <= 1.0) {
                return bad(format!("coupling alpha must lie in [-1, 1], got {}", c.alpha));
            }
            if self.couplings.iter().any(|o| o.target == c.source) {
                return bad(format!("channel {} is both a coupling source and target", c.source));
            }
            if self.couplings.iter().filter(|o| o.target == c.target).count() > 1 {
                return bad(format!("channel {} has more than one coupling source", c.target));
            }
        }
        Ok(())
    }

    /// `f_ij` as an `H × L` matrix.
    pub fn operator_matrix(&self, i: usize, j: usize) -> Tensor {
        template(self.lookback, self.horizon, self.coef[i][j])
    }

    /// Noise-free target `F * x` for a `D × L` lookback, as `D × H`.
    pub fn conditional_mean(&self, x: &Tensor) -> Tensor {
        let (d, l, h) = (self.channels, self.lookback, self.horizon);
        let mut out = Vec::with_capacity(d * h);
        for i in 0..d {
            let level: f64 = (0..d).map(|j| self.coef[i][j] * x.at(j, l - 1)).sum();
            out.extend(std::iter::repeat_n(level, h));
        }
        Tensor::new([d, h], out).expect("shape")
    }

    /// Parses the key=value spec format. `cross` and `coupling` may
    /// repeat; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut channels = None;
        let mut lookback = None;
        let mut horizon = None;
        let mut sigma = 1.0;
        let mut diag: Option<(usize, Vec<f64>)> = None;
        let mut cross = Vec::new();
        let mut couplings = Vec::new();

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let syntax = |msg: String| Error::Syntax { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected key = value, got `{line}`")))?;
            let value = value.trim();
            let int = |v: &str| v.parse::<usize>().map_err(|_| syntax(format!("`{v}` is not a non-negative integer")));
            let float = |v: &str| v.parse::<f64>().map_err(|_| syntax(format!("`{v}` is not a number")));
            let triple = |v: &str| -> Result<(usize, usize, f64)> {
                let parts: Vec<&str> = v.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(syntax(format!("expected `i j value`, got `{v}`")));
                }
                Ok((int(parts[0])?, int(parts[1])?, float(parts[2])?))
            };
            match key.trim() {
                "channels" => channels = Some(int(value)?),
                "lookback" => lookback = Some(int(value)?),
                "horizon" => horizon = Some(int(value)?),
                "sigma" => sigma = float(value)?,
                "diag" => {
                    let vals = value
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(float)
                        .collect::<Result<Vec<_>>>()?;
                    if vals.is_empty() {
                        return Err(syntax("diag needs at least one value".into()));
                    }
                    diag = Some((line_no, vals));
                }
                "cross" => cross.push((line_no, triple(value)?)),
                "coupling" => {
                    let (t, s, a) = triple(value)?;
                    couplings.push((line_no, Coupling { target: t, source: s, alpha: a }));
                }
                other => return Err(syntax(format!("unknown key `{other}`"))),
            }
        }

        let missing = |k: &str| Error::Syntax {
            line: 0,
            msg: format!("missing required key `{k}`"),
        };
        let d = channels.ok_or_else(|| missing("channels"))?;
        let l = lookback.ok_or_else(|| missing("lookback"))?;
        let h = horizon.ok_or_else(|| missing("horizon"))?;
        let diag_vals = match diag {
            None => vec![0.0; d],
            Some((_, v)) if v.len() == 1 => vec![v[0]; d],
            Some((_, v)) if v.len() == d => v,
            Some((line, v)) => {
                return Err(Error::Syntax {
                    line,
                    msg: format!("diag has {} values for {d} channels", v.len()),
                })
            }
        };
        let mut coef = vec![vec![0.0; d]; d];
        for (i, row) in coef.iter_mut().enumerate() {
            row[i] = diag_vals[i];
        }
        for (line, (i, j, s)) in cross {
            if i >= d || j >= d || i == j {
                return Err(Error::Syntax {
                    line,
                    msg: format!("cross pair ({i}, {j}) must name two distinct channels below {d}"),
                });
            }
            coef[i][j] = s;
        }
        let spec = TrueOperatorSpec {
            channels: d,
            lookback: l,
            horizon: h,
            coef,
            sigma,
            couplings: couplings.iter().map(|(_, c)| *c).collect(),
        };
        if let Err(Error::Config(msg)) = spec.validate() {
            let line = couplings.first().map(|(l, _)| *l).unwrap_or(0);
            return Err(Error::Syntax { line, msg });
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes back to the text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "lookback = {}", self.lookback);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "sigma = {:?}", self.sigma);
        let diag: Vec<String> = (0..self.channels).map(|i| format!("{:?}", self.coef[i][i])).collect();
        let _ = writeln!(s, "diag = {}", diag.join(", "));
        for i in 0..self.channels {
            for j in 0..self.channels {
                if i != j && self.coef[i][j] != 0.0 {
                    let _ = writeln!(s, "cross = {i} {j} {:?}", self.coef[i][j]);
                }
            }
        }
        for c in &self.couplings {
            let _ = writeln!(s, "coupling = {} {} {:?}", c.target, c.source, c.alpha);
        }
        s
    }
}

/// `H × L` matrix with `scale` in the last column.
pub fn template(lookback: usize, horizon: usize, scale: f64) -> Tensor {
    let mut m = Tensor::zeros([horizon, lookback]);
    for h in 0..horizon {
        m.data_mut()[h * lookback + lookback - 1] = scale;
    }
    m
}

/// Rolls the system forward in blocks of `H`.
struct Chain<'a> {
    spec: &'a TrueOperatorSpec,
    /// Channel-major history.
    values: Vec<Vec<f64>>,
    emitted: usize,
}

impl<'a> Chain<'a> {
    fn new(spec: &'a TrueOperatorSpec) -> Self {
        Chain {
            spec,
            values: vec![vec![0.0; spec.lookback]; spec.channels],
            emitted: 0,
        }
    }

    fn last(&self, j: usize) -> f64 {
        *self.values[j].last().expect("non-empty history")
    }

    fn block(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let s = self.spec;
        let levels: Vec<f64> = (0..s.channels)
            .map(|i| (0..s.channels).map(|j| s.coef[i][j] * self.last(j)).sum())
            .collect();
        for _ in 0..s.horizon {
            let eps: Vec<f64> = (0..s.channels).map(|_| StandardNormal.sample(rng)).collect();
            let mut v: Vec<f64> = eps.iter().map(|e| s.sigma * e).collect();
            for c in &s.couplings {
                v[c.target] = s.sigma * (c.alpha * eps[c.source] + (1.0 - c.alpha * c.alpha).sqrt() * eps[c.target]);
            }
            for i in 0..s.channels {
                let x = levels[i] + v[i];
                if !(x.abs() <= MAGNITUDE_GUARD) {
                    return Err(Error::UnstableSystem {
                        step: self.emitted,
                        value: x,
                    });
                }
                self.values[i].push(x);
            }
            self.emitted += 1;
        }
        Ok(())
    }

    /// The last `L` values as `D × L`.
    fn lookback(&self) -> Tensor {
        let l = self.spec.lookback;
        let data = self.values.iter().flat_map(|c| c[c.len() - l..].iter().copied()).collect();
        Tensor::new([self.spec.channels, l], data).expect("shape")
    }

    fn trim(&mut self) {
        let l = self.spec.lookback;
        for c in &mut self.values {
            if c.len() > 4 * l {
                c.drain(..c.len() - l);
            }
        }
    }
}

/// `T` observations after a burn-in of [`BURN_IN_BLOCKS`] blocks.
pub fn generate_series(spec: &TrueOperatorSpec, len: usize, seed: u64) -> Result<SeriesMatrix> {
    spec.validate()?;
    if len <= spec.lookback + spec.horizon {
        return Err(Error::Config(format!(
            "series length {len} must exceed lookback + horizon = {}",
            spec.lookback + spec.horizon
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chain = Chain::new(spec);
    for _ in 0..BURN_IN_BLOCKS {
        chain.block(&mut rng)?;
        chain.trim();
    }
    let start: Vec<usize> = chain.values.iter().map(Vec::len).collect();
    while chain.values[0].len() - start[0] < len {
        chain.block(&mut rng)?;
    }
    let channels = chain
        .values
        .iter()
        .zip(&start)
        .map(|(c, &s)| c[s..s + len].to_vec())
        .collect();
    let names = (0..spec.channels).map(|i| format!("x{i}")).collect();
    SeriesMatrix::new(names, len, flatten(channels))
}

fn flatten(channels: Vec<Vec<f64>>) -> Vec<f64> {
    channels.into_iter().flatten().collect()
}

/// `n` independent `D × L` lookbacks, window `k` drawn from its own
/// chain on generator stream `k` of `seed`.
pub fn sample_windows(spec: &TrueOperatorSpec, n: usize, seed: u64) -> Result<Vec<Tensor>> {
    spec.validate()?;
    (0..n).map(|k| sample_window(spec, seed, k as u64)).collect()
}

/// One lookback from generator stream `stream` of `seed`.
pub fn sample_window(spec: &TrueOperatorSpec, seed: u64, stream: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut chain = Chain::new(spec);
    for _ in 0..BURN_IN_BLOCKS.max(spec.lookback.div_ceil(spec.horizon) + 1) {
        chain.block(&mut rng)?;
        chain.trim();
    }
    Ok(chain.lookback())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_walk_increments_are_innovations() {
        let spec = TrueOperatorSpec::diagonal(2, 4, 1, 1.0, 1.0);
        let s = generate_series(&spec, 4000, 1).unwrap();
        // with H = 1 and unit carry, increments are iid N(0, 1)
        let x = s.channel(0);
        let inc: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = inc.iter().sum::<f64>() / inc.len() as f64;
        let var = inc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (inc.len() - 1) as f64;
        assert!(mean.abs() < 0.1 && (var - 1.0).abs() < 0.1, "{mean} {var}");
    }

    #[test]
    fn noiseless_generation_is_reproducible() {
        let spec = TrueOperatorSpec::diagonal(3, 6, 3, 0.7, 0.0).with_cross(0, 1, 0.2);
        let a = generate_series(&spec, 50, 9).unwrap();
        let b = generate_series(&spec, 50, 9).unwrap();
        assert_eq!(a.values(), b.values());
        let noisy = TrueOperatorSpec { sigma: 0.5, ..spec };
        assert_eq!(
            generate_series(&noisy, 50, 9).unwrap().values(),
            generate_series(&noisy, 50, 9).unwrap().values()
        );
    }

    #[test]
    fn coupled_pair_is_strongly_correlated() {
        let spec = TrueOperatorSpec::diagonal(2, 8, 8, 0.5, 1.0).with_coupling(0, 1, 0.9);
        let windows = sample_windows(&spec, 4000, 3).unwrap();
        let (a, b): (Vec<f64>, Vec<f64>) = windows.iter().map(|w| (w.at(0, 3), w.at(1, 3))).unzip();
        let corr = correlation(&a, &b);
        assert!(corr > 0.8, "{corr}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn explosive_operator_is_rejected() {
        let spec = TrueOperatorSpec::diagonal(1, 2, 2, 3.0, 1.0);
        assert!(matches!(generate_series(&spec, 500, 0), Err(Error::UnstableSystem { .. })));
    }

    #[test]
    fn parse_roundtrip_and_errors() {
        let text = "channels = 3\nlookback = 8\nhorizon = 4 # short\nsigma = 0.5\ndiag = 0.6\n\
                    cross = 0 2 0.25\ncoupling = 1 0 0.9\n";
        let spec = TrueOperatorSpec::parse(text).unwrap();
        assert_eq!(spec.coef[0][2], 0.25);
        assert_eq!(spec.coef[2][2], 0.6);
        assert_eq!(spec.couplings, vec![Coupling { target: 1, source: 0, alpha: 0.9 }]);
        assert_eq!(TrueOperatorSpec::parse(&spec.to_text()).unwrap(), spec);

        let err = TrueOperatorSpec::parse("channels = 2\nlookback = x\n").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 2, .. }));
        let err = TrueOperatorSpec::parse("channels = 2\nlookback = 2\nhorizon = 1\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 4, .. }));
        let err = TrueOperatorSpec::parse("channels = 2\nlookback = 2\nhorizon = 1\ncross = 0 0 1\n").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 4, .. }));
    }

    #[test]
    fn conditional_mean_matches_operator_matrices() {
        let spec = TrueOperatorSpec::diagonal(2, 3, 2, 0.5, 1.0).with_cross(1, 0, -0.4);
        let x = Tensor::new([2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
        let y = spec.conditional_mean(&x);
        for i in 0..2 {
            for h in 0..2 {
                let mut acc = 0.0;
                for j in 0..2 {
                    let m = spec.operator_matrix(i, j);
                    acc += (0..3).map(|l| m.at(h, l) * x.at(j, l)).sum::<f64>();
                }
                assert!((y.at(i, h) - acc).abs() < 1e-15);
            }
        }
    }
}
