use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sample_window, TrueOperatorSpec};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Minimum Monte-Carlo sample count for the bias and covariance checks.
pub const MIN_SAMPLES: usize = 10_000;
/// Minimum snapshot count for the law-of-total-covariance check.
pub const MIN_SNAPSHOTS: usize = 10;
/// Minimum mini-batch gradients per snapshot.
pub const MIN_BATCHES: usize = 1_000;

const TOTAL_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const SECOND_SAMPLE_SALT: u64 = 0xd1b5_4a32_d192_ed03;
const TRAJECTORY_SALT: u64 = 0x94d0_49bb_1331_11eb;

// ── fitted operator ──────────────────────────────────────────────────

/// Fitted linear maps `f̂_ij`, each `H × L`.
#[derive(Clone, Debug, PartialEq)]
pub struct FitOperator {
    pub channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    maps: Vec<Tensor>,
}

impl FitOperator {
    pub fn zeros(spec: &TrueOperatorSpec) -> Self {
        let (d, l, h) = (spec.channels, spec.lookback, spec.horizon);
        FitOperator {
            channels: d,
            lookback: l,
            horizon: h,
            maps: vec![Tensor::zeros([h, l]); d * d],
        }
    }

    /// The true operator itself.
    pub fn exact(spec: &TrueOperatorSpec) -> Self {
        let mut fit = Self::zeros(spec);
        for i in 0..spec.channels {
            for j in 0..spec.channels {
                fit.set(i, j, spec.operator_matrix(i, j));
            }
        }
        fit
    }

    pub fn get(&self, i: usize, j: usize) -> &Tensor {
        &self.maps[i * self.channels + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut Tensor {
        &mut self.maps[i * self.channels + j]
    }

    pub fn set(&mut self, i: usize, j: usize, m: Tensor) {
        assert_eq!(m.shape(), [self.horizon, self.lookback]);
        self.maps[i * self.channels + j] = m;
    }

    /// Replaces every diagonal map with `other`'s.
    pub fn with_ar_from(mut self, other: &FitOperator) -> Self {
        for i in 0..self.channels {
            self.set(i, i, other.get(i, i).clone());
        }
        self
    }

    fn cr_equal(&self, other: &FitOperator) -> bool {
        (0..self.channels)
            .flat_map(|i| (0..self.channels).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .all(|(i, j)| self.get(i, j) == other.get(i, j))
    }

    /// `ŷ = F̂ * x`, `D × H`.
    pub fn predict(&self, x: &Tensor) -> Tensor {
        let (d, h) = (self.channels, self.horizon);
        let mut out = vec![0.0; d * h];
        for i in 0..d {
            for j in 0..d {
                matvec_acc(self.get(i, j), x.row(j), &mut out[i * h..(i + 1) * h], 1.0);
            }
        }
        Tensor::new([d, h], out).expect("shape")
    }
}

/// `out += sign * m · v`.
fn matvec_acc(m: &Tensor, v: &[f64], out: &mut [f64], sign: f64) {
    let l = v.len();
    for (h, o) in out.iter_mut().enumerate() {
        let row = &m.data()[h * l..(h + 1) * l];
        *o += sign * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `-r xᵀ` as an `H × L` tensor.
fn neg_outer(r: &[f64], x: &[f64]) -> Tensor {
    let data = r.iter().flat_map(|&rh| x.iter().map(move |&xl| -rh * xl)).collect();
    Tensor::new([r.len(), x.len()], data).expect("shape")
}

fn neg_outer_into(r: &[f64], x: &[f64], out: &mut [f64]) {
    for (h, &rh) in r.iter().enumerate() {
        for (l, &xl) in x.iter().enumerate() {
            out[h * x.len() + l] = -rh * xl;
        }
    }
}

// ── residuals and gradients ──────────────────────────────────────────

/// Per-projection residuals `r_ij = f_ij(x_j) − f̂_ij(x_j)` of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualDecomposition {
    channels: usize,
    horizon: usize,
    /// `parts[(i * D + j) * H + h]`.
    parts: Vec<f64>,
}

impl ResidualDecomposition {
    pub fn compute(spec: &TrueOperatorSpec, fit: &FitOperator, x: &Tensor) -> Self {
        let (d, h) = (spec.channels, spec.horizon);
        let mut parts = vec![0.0; d * d * h];
        for i in 0..d {
            for j in 0..d {
                let out = &mut parts[(i * d + j) * h..(i * d + j + 1) * h];
                matvec_acc(&spec.operator_matrix(i, j), x.row(j), out, 1.0);
                matvec_acc(fit.get(i, j), x.row(j), out, -1.0);
            }
        }
        ResidualDecomposition {
            channels: d,
            horizon: h,
            parts,
        }
    }

    pub fn part(&self, i: usize, j: usize) -> &[f64] {
        let (d, h) = (self.channels, self.horizon);
        &self.parts[(i * d + j) * h..(i * d + j + 1) * h]
    }

    /// `r_i = Σ_j r_ij`.
    pub fn aggregate(&self, i: usize) -> Vec<f64> {
        self.sum_where(i, |_| true)
    }

    /// `r_{−ii} = Σ_{j≠i} r_ij`.
    pub fn cross_sum(&self, i: usize) -> Vec<f64> {
        self.sum_where(i, |j| j != i)
    }

    fn sum_where(&self, i: usize, keep: impl Fn(usize) -> bool) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon];
        for j in (0..self.channels).filter(|&j| keep(j)) {
            out.iter_mut().zip(self.part(i, j)).for_each(|(o, r)| *o += r);
        }
        out
    }
}

/// Gradient of `½‖r_ij‖²` with respect to `f̂_ij`: `−J_ijᵀ r_ij`.
pub fn true_gradient(fit: &FitOperator, x: &Tensor, spec: &TrueOperatorSpec, i: usize, j: usize) -> Tensor {
    let mut r = vec![0.0; spec.horizon];
    matvec_acc(&spec.operator_matrix(i, j), x.row(j), &mut r, 1.0);
    matvec_acc(fit.get(i, j), x.row(j), &mut r, -1.0);
    neg_outer(&r, x.row(j))
}

/// Gradient from the observable aggregate residual `r_i = y_i − ŷ_i`:
/// `−J_ijᵀ r_i`.
pub fn mixed_gradient(fit: &FitOperator, x: &Tensor, y: &Tensor, i: usize, j: usize) -> Tensor {
    let y_hat = fit.predict(x);
    let r: Vec<f64> = y.row(i).iter().zip(y_hat.row(i)).map(|(a, b)| a - b).collect();
    neg_outer(&r, x.row(j))
}

// ── estimates and verdicts ───────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEstimate {
    pub value: f64,
    pub se: f64,
}

/// Trace estimates of `Cov(a)`, `Cov(b)`, `Cov(a, b)` and `Cov(a + b)` from `n`
/// samples of `k`-vectors produced by `fill(sample, a, b)`. Two passes:
/// means first, then per-sample deviation products, whose spread gives
/// the standard errors.
fn covariance_traces(n: usize, k: usize, fill: &mut dyn FnMut(usize, &mut [f64], &mut [f64])) -> [TraceEstimate; 4] {
    let (mut a, mut b) = (vec![0.0; k], vec![0.0; k]);
    let (mut ma, mut mb) = (vec![0.0; k], vec![0.0; k]);
    for s in 0..n {
        fill(s, &mut a, &mut b);
        ma.iter_mut().zip(&a).for_each(|(m, v)| *m += v);
        mb.iter_mut().zip(&b).for_each(|(m, v)| *m += v);
    }
    ma.iter_mut().for_each(|m| *m /= n as f64);
    mb.iter_mut().for_each(|m| *m /= n as f64);
    let mut sums = [[0.0; 2]; 4];
    for s in 0..n {
        fill(s, &mut a, &mut b);
        let mut prods = [0.0; 4];
        for c in 0..k {
            let (da, db) = (a[c] - ma[c], b[c] - mb[c]);
            prods[0] += da * da;
            prods[1] += db * db;
            prods[2] += da * db;
            prods[3] += (da + db) * (da + db);
        }
        for (acc, p) in sums.iter_mut().zip(prods) {
            acc[0] += p;
            acc[1] += p * p;
        }
    }
    let nf = n as f64;
    sums.map(|[s1, s2]| {
        let mean = s1 / nf;
        let var = (s2 / nf - mean * mean).max(0.0);
        let scale = nf / (nf - 1.0);
        TraceEstimate {
            value: s1 / (nf - 1.0),
            se: scale * (var / nf).sqrt(),
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Reported only; does not affect the overall outcome.
    Info,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Info => "info",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub check: String,
    pub estimate: f64,
    pub reference: f64,
    pub std_error: f64,
    pub status: Status,
}

impl Verdict {
    pub(crate) fn new(check: &str, estimate: f64, reference: f64, std_error: f64, ok: bool) -> Self {
        Verdict {
            check: check.to_string(),
            estimate,
            reference,
            std_error,
            status: if ok { Status::Pass } else { Status::Fail },
        }
    }

    pub(crate) fn info(check: &str, estimate: f64, reference: f64, std_error: f64) -> Self {
        Verdict {
            status: Status::Info,
            ..Verdict::new(check, estimate, reference, std_error, true)
        }
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

pub fn write_verdicts<W: Write>(verdicts: &[Verdict], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["check", "estimate", "reference", "std_error", "verdict"])?;
    for v in verdicts {
        w.write_record([
            v.check.clone(),
            format!("{:?}", v.estimate),
            format!("{:?}", v.reference),
            format!("{:?}", v.std_error),
            v.status.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_verdicts(verdicts: &[Verdict], path: &Path) -> Result<()> {
    write_verdicts(verdicts, std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

// ── bias ─────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct BiasBin {
    /// Range of the lookback mean of `x_i` covered by the bin.
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean: f64,
    pub se: f64,
}

impl BiasBin {
    /// `|mean| / se`; zero when both vanish.
    pub fn z(&self) -> f64 {
        if self.mean == 0.0 {
            0.0
        } else {
            self.mean.abs() / self.se
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasReport {
    pub channel: usize,
    pub bins: Vec<BiasBin>,
}

impl BiasReport {
    pub fn max_z(&self) -> f64 {
        self.bins.iter().map(BiasBin::z).fold(0.0, f64::max)
    }
}

/// Conditional mean of the contamination `−J_iiᵀ r_{−ii}` given `x_i`,
/// estimated per quantile bin of the lookback mean of `x_i`. The bin
/// score is the sum of the gradient's coordinates.
pub fn bias_estimate(
    spec: &TrueOperatorSpec,
    fit: &FitOperator,
    channel: usize,
    n: usize,
    bins: usize,
    seed: u64,
) -> Result<BiasReport> {
    if n < MIN_SAMPLES.max(bins * 2) {
        return Err(Error::InsufficientSamples {
            needed: MIN_SAMPLES.max(bins * 2),
            got: n,
        });
    }
    spec.validate()?;
    let mut rows: Vec<(f64, f64)> = Vec::with_capacity(n);
    for k in 0..n {
        let x = sample_window(spec, seed, k as u64)?;
        let r = ResidualDecomposition::compute(spec, fit, &x).cross_sum(channel);
        let xi = x.row(channel);
        let stat = xi.iter().sum::<f64>() / xi.len() as f64;
        let score = -r.iter().sum::<f64>() * xi.iter().sum::<f64>();
        rows.push((stat, score));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let chunk = &rows[b * n / bins..(b + 1) * n / bins];
        let m = chunk.len() as f64;
        let mean = chunk.iter().map(|r| r.1).sum::<f64>() / m;
        let var = chunk.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / (m - 1.0);
        out.push(BiasBin {
            lower: chunk[0].0,
            upper: chunk[chunk.len() - 1].0,
            count: chunk.len(),
            mean,
            se: (var / m).sqrt(),
        });
    }
    Ok(BiasReport { channel, bins: out })
}

// ── covariance decomposition ─────────────────────────────────────────

/// Trace-norm estimates for the AR block of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceEstimate {
    pub channel: usize,
    /// `‖Σ_ii‖₁`, true AR gradient.
    pub sigma_ii: TraceEstimate,
    /// `‖Σ_{−ii}‖₁`, CR contamination.
    pub sigma_cr: TraceEstimate,
    /// `Tr Cov(J_iiᵀ r_ii, J_iiᵀ r_{−ii})`.
    pub cross: TraceEstimate,
    /// `‖Cov(J_iiᵀ r_i)‖₁` from an independent sample.
    pub total: TraceEstimate,
    pub samples: usize,
}

impl CovarianceEstimate {
    /// `Σ_ii + Σ_{−ii} + 2·cross`.
    pub fn decomposed(&self) -> f64 {
        self.sigma_ii.value + self.sigma_cr.value + 2.0 * self.cross.value
    }

    /// Cauchy–Schwarz lower bound on the total trace.
    pub fn lower_bound(&self) -> f64 {
        let (a, b) = (self.sigma_ii.value, self.sigma_cr.value);
        a + b - 2.0 * (a * b).sqrt()
    }

    /// `‖Σ_{−ii}‖₁ / ‖Σ_ii‖₁`; zero when there is no contamination.
    pub fn regime_ratio(&self) -> f64 {
        if self.sigma_cr.value == 0.0 {
            0.0
        } else {
            self.sigma_cr.value / self.sigma_ii.value
        }
    }
}

pub fn covariance_decomposition_check(
    spec: &TrueOperatorSpec,
    fit: &FitOperator,
    channel: usize,
    n: usize,
    seed: u64,
) -> Result<(CovarianceEstimate, Vec<Verdict>)> {
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_SAMPLES,
            got: n,
        });
    }
    let k = spec.horizon * spec.lookback;
    let draw = |seed: u64| super::sample_windows(spec, n, seed);
    let sample_a = draw(seed)?;
    let [sigma_ii, sigma_cr, cross, decomposed] = covariance_traces(n, k, &mut |s, a, b| {
        let x = &sample_a[s];
        let dec = ResidualDecomposition::compute(spec, fit, x);
        neg_outer_into(dec.part(channel, channel), x.row(channel), a);
        neg_outer_into(&dec.cross_sum(channel), x.row(channel), b);
    });
    drop(sample_a);
    let sample_b = draw(seed ^ SECOND_SAMPLE_SALT)?;
    let [total, ..] = covariance_traces(n, k, &mut |s, a, b| {
        let x = &sample_b[s];
        let y = spec.conditional_mean(x);
        let g = mixed_gradient(fit, x, &y, channel, channel);
        a.copy_from_slice(g.data());
        b.copy_from_slice(g.data());
    });
    let est = CovarianceEstimate {
        channel,
        sigma_ii,
        sigma_cr,
        cross,
        total,
        samples: n,
    };

    let combined_se = (total.se.powi(2) + decomposed.se.powi(2)).sqrt();
    let mut verdicts = vec![
        Verdict::new(
            "trace_additivity",
            total.value,
            est.decomposed(),
            combined_se,
            relative_gap(total.value, est.decomposed()) <= 0.05,
        ),
        Verdict::new(
            "cauchy_schwarz_bound",
            total.value,
            est.lower_bound(),
            total.se,
            total.value >= est.lower_bound() - 3.0 * combined_se,
        ),
        Verdict::info("contamination_ratio", est.regime_ratio(), 4.0, 0.0),
    ];
    if est.regime_ratio() > 4.0 {
        verdicts.push(Verdict::new(
            "mixed_exceeds_true",
            total.value,
            sigma_ii.value,
            (total.se.powi(2) + sigma_ii.se.powi(2)).sqrt(),
            total.value > sigma_ii.value,
        ));
    }
    Ok((est, verdicts))
}

// ── law of total covariance ──────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub snapshots: usize,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            steps: 400,
            lr: 0.02,
            batch: 16,
            snapshots: MIN_SNAPSHOTS,
        }
    }
}

/// Jointly trains every map of a zero-initialized fit with SGD on
/// `½ Σ_i ‖r_i‖²` and records evenly spaced snapshots. Each snapshot
/// keeps its own CR maps but carries the final AR maps, so only `θ_CR`
/// varies across snapshots.
pub fn joint_trajectory(spec: &TrueOperatorSpec, config: &TrajectoryConfig, seed: u64) -> Result<Vec<FitOperator>> {
    spec.validate()?;
    if config.snapshots == 0 || config.steps < config.snapshots || config.batch == 0 {
        return Err(Error::Config("trajectory needs steps >= snapshots >= 1 and batch >= 1".into()));
    }
    let d = spec.channels;
    let mut fit = FitOperator::zeros(spec);
    let stride = config.steps / config.snapshots;
    let mut snaps = Vec::with_capacity(config.snapshots);
    let seed = seed ^ TRAJECTORY_SALT;
    for step in 0..config.steps {
        let mut grads = vec![Tensor::zeros([spec.horizon, spec.lookback]); d * d];
        for w in 0..config.batch {
            let x = sample_window(spec, seed, (step * config.batch + w) as u64)?;
            let dec = ResidualDecomposition::compute(spec, &fit, &x);
            for i in 0..d {
                let r = dec.aggregate(i);
                for j in 0..d {
                    let g = neg_outer(&r, x.row(j));
                    let acc = grads[i * d + j].data_mut();
                    acc.iter_mut().zip(g.data()).for_each(|(a, v)| *a += v / config.batch as f64);
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                let g = &grads[i * d + j];
                let m = fit.get_mut(i, j).data_mut();
                m.iter_mut().zip(g.data()).for_each(|(p, v)| *p -= config.lr * v);
            }
        }
        if (step + 1) % stride == 0 && snaps.len() < config.snapshots {
            snaps.push(fit.clone());
        }
    }
    if snaps.windows(2).all(|w| w[0].cr_equal(&w[1])) {
        return Err(Error::DegenerateTrajectory);
    }
    Ok(snaps.into_iter().map(|s| s.with_ar_from(&fit)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LawReport {
    pub channel: usize,
    /// Mean within-snapshot trace: the alternating-side quantity.
    pub within: TraceEstimate,
    /// Trace of the covariance of per-snapshot mean gradients.
    pub between: TraceEstimate,
    /// Trace of the unconditional covariance over random snapshots.
    pub total: TraceEstimate,
    pub snapshots: usize,
    pub batches: usize,
}

/// Sampling plan for [`total_covariance_law_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LawConfig {
    pub channel: usize,
    pub batches: usize,
    pub batch_size: usize,
}

impl Default for LawConfig {
    fn default() -> Self {
        LawConfig {
            channel: 0,
            batches: MIN_BATCHES,
            batch_size: 8,
        }
    }
}

/// Mini-batch mean of the mixed AR gradient of `channel`.
fn batch_gradient(
    spec: &TrueOperatorSpec,
    fit: &FitOperator,
    channel: usize,
    batch: usize,
    seed: u64,
    first_stream: u64,
    out: &mut [f64],
) -> Result<()> {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut g = vec![0.0; out.len()];
    for w in 0..batch {
        let x = sample_window(spec, seed, first_stream + w as u64)?;
        let y = spec.conditional_mean(&x);
        let y_hat = fit.predict(&x);
        let r: Vec<f64> = y.row(channel).iter().zip(y_hat.row(channel)).map(|(a, b)| a - b).collect();
        neg_outer_into(&r, x.row(channel), &mut g);
        out.iter_mut().zip(&g).for_each(|(o, v)| *o += v / batch as f64);
    }
    Ok(())
}

pub fn total_covariance_law_check(
    spec: &TrueOperatorSpec,
    snapshots: &[FitOperator],
    config: &LawConfig,
    seed: u64,
) -> Result<(LawReport, Vec<Verdict>)> {
    if snapshots.len() < MIN_SNAPSHOTS {
        return Err(Error::InsufficientSamples {
            needed: MIN_SNAPSHOTS,
            got: snapshots.len(),
        });
    }
    if config.batches < MIN_BATCHES {
        return Err(Error::InsufficientSamples {
            needed: MIN_BATCHES,
            got: config.batches,
        });
    }
    let (s_count, m, bs, ch) = (snapshots.len(), config.batches, config.batch_size, config.channel);
    let k = spec.horizon * spec.lookback;

    // within-snapshot traces and mean gradients
    let mut within = Vec::with_capacity(s_count);
    let mut means = Vec::with_capacity(s_count);
    let mut cache = vec![0.0; m * k];
    for (s, fit) in snapshots.iter().enumerate() {
        let base = (s * m * bs) as u64;
        for b in 0..m {
            batch_gradient(spec, fit, ch, bs, seed, base + (b * bs) as u64, &mut cache[b * k..(b + 1) * k])?;
        }
        let [t, ..] = covariance_traces(m, k, &mut |b, a, c| {
            a.copy_from_slice(&cache[b * k..(b + 1) * k]);
            c.copy_from_slice(&cache[b * k..(b + 1) * k]);
        });
        let mut mu = vec![0.0; k];
        for b in 0..m {
            mu.iter_mut().zip(&cache[b * k..(b + 1) * k]).for_each(|(u, v)| *u += v / m as f64);
        }
        within.push(t);
        means.push(mu);
    }
    let sf = s_count as f64;
    let within_mean = within.iter().map(|t| t.value).sum::<f64>() / sf;
    let within_se = within.iter().map(|t| t.se * t.se).sum::<f64>().sqrt() / sf;

    // population variance across snapshots of the estimated means,
    // minus the part contributed by their own sampling noise
    let grand: Vec<f64> = (0..k).map(|c| means.iter().map(|u| u[c]).sum::<f64>() / sf).collect();
    let raw_between: f64 = means
        .iter()
        .map(|u| u.iter().zip(&grand).map(|(a, g)| (a - g).powi(2)).sum::<f64>())
        .sum::<f64>()
        / sf;
    let between_value = raw_between - within_mean / m as f64;
    // delta method over the per-coordinate mean estimates
    let mut between_var = 0.0;
    for (s, u) in means.iter().enumerate() {
        let per_coord_var = within[s].value / k as f64 / m as f64;
        let dev: f64 = u.iter().zip(&grand).map(|(a, g)| (2.0 * (a - g) / sf).powi(2)).sum();
        between_var += dev * per_coord_var;
    }

    // unconditional covariance from independent draws
    let draws = s_count * m;
    let total_seed = seed ^ TOTAL_SALT;
    let mut picker = ChaCha8Rng::seed_from_u64(total_seed);
    let picks: Vec<usize> = (0..draws).map(|_| picker.random_range(0..s_count)).collect();
    let mut total_cache = vec![0.0; draws * k];
    for (t, &s) in picks.iter().enumerate() {
        batch_gradient(
            spec,
            &snapshots[s],
            ch,
            bs,
            total_seed,
            (t * bs) as u64,
            &mut total_cache[t * k..(t + 1) * k],
        )?;
    }
    let [total, ..] = covariance_traces(draws, k, &mut |t, a, c| {
        a.copy_from_slice(&total_cache[t * k..(t + 1) * k]);
        c.copy_from_slice(&total_cache[t * k..(t + 1) * k]);
    });

    let report = LawReport {
        channel: ch,
        within: TraceEstimate {
            value: within_mean,
            se: within_se,
        },
        between: TraceEstimate {
            value: between_value,
            se: between_var.sqrt(),
        },
        total,
        snapshots: s_count,
        batches: m,
    };
    let sum = report.within.value + report.between.value;
    let verdicts = vec![
        Verdict::new(
            "total_covariance_identity",
            total.value,
            sum,
            (total.se.powi(2) + within_se.powi(2) + between_var).sqrt(),
            relative_gap(total.value, sum) <= 0.05,
        ),
        Verdict::new(
            "within_le_total",
            report.within.value,
            total.value,
            (total.se.powi(2) + within_se.powi(2)).sqrt(),
            report.within.value <= total.value + 3.0 * (total.se.powi(2) + within_se.powi(2)).sqrt(),
        ),
        Verdict::info("between_snapshot_trace", report.between.value, 0.0, report.between.se),
    ];
    Ok((report, verdicts))
}
