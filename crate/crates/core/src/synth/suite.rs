use super::{
    bias_estimate, covariance_decomposition_check, joint_trajectory, template, total_covariance_law_check,
    FitOperator, LawConfig, TrajectoryConfig, TrueOperatorSpec, Verdict,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub samples: usize,
    pub bias_samples: usize,
    pub bins: usize,
    /// Offset applied to the fitted AR coefficient.
    pub ar_error: f64,
    /// Offset applied to the fitted CR coefficient of the probed pair.
    pub cr_error: f64,
    pub trajectory: TrajectoryConfig,
    pub law: LawConfig,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            samples: 100_000,
            bias_samples: 20_000,
            bins: 10,
            ar_error: 0.1,
            cr_error: 0.3,
            trajectory: TrajectoryConfig::default(),
            law: LawConfig::default(),
            seed: 0,
        }
    }
}

/// Channel whose AR block is probed and its CR partner: the first
/// coupled pair when one exists.
pub fn probe_pair(spec: &TrueOperatorSpec) -> (usize, usize) {
    match spec.couplings.first() {
        Some(c) => (c.target, c.source),
        None => (0, 1 % spec.channels),
    }
}

/// True operator with the probed AR map off by `ar_error` and the
/// probed CR map off by `cr_error`.
pub fn misspecified_fit(spec: &TrueOperatorSpec, ar_error: f64, cr_error: f64) -> FitOperator {
    let (i, j) = probe_pair(spec);
    let (l, h) = (spec.lookback, spec.horizon);
    let mut fit = FitOperator::exact(spec);
    fit.set(i, i, template(l, h, spec.coef[i][i] - ar_error));
    if i != j {
        fit.set(i, j, template(l, h, spec.coef[i][j] + cr_error));
    }
    fit
}

/// Bias, covariance-decomposition and total-covariance checks on one spec.
pub fn run_theory_suite(spec: &TrueOperatorSpec, config: &SuiteConfig) -> Result<Vec<Verdict>> {
    spec.validate()?;
    if spec.channels < 2 {
        return Err(Error::SingleChannel);
    }
    let (i, _) = probe_pair(spec);
    let mut out = Vec::new();

    let exact_cr = misspecified_fit(spec, config.ar_error, 0.0);
    let clean = bias_estimate(spec, &exact_cr, i, config.bias_samples, config.bins, config.seed)?;
    out.push(Verdict::new("bias_without_contamination", clean.max_z(), 3.0, 1.0, clean.max_z() <= 3.0));
    let fit = misspecified_fit(spec, config.ar_error, config.cr_error);
    let biased = bias_estimate(spec, &fit, i, config.bias_samples, config.bins, config.seed)?;
    let silent = biased.bins.iter().all(|b| b.mean == 0.0 && b.se == 0.0);
    if spec.couplings.is_empty() || silent {
        out.push(Verdict::info("bias_under_misspecification", biased.max_z(), 5.0, 1.0));
    } else {
        out.push(Verdict::new(
            "bias_under_misspecification",
            biased.max_z(),
            5.0,
            1.0,
            biased.max_z() > 5.0,
        ));
    }

    let (_, verdicts) = covariance_decomposition_check(spec, &fit, i, config.samples, config.seed)?;
    out.extend(verdicts);

    match joint_trajectory(spec, &config.trajectory, config.seed) {
        Ok(snaps) => {
            let law = LawConfig { channel: i, ..config.law };
            let (_, verdicts) = total_covariance_law_check(spec, &snaps, &law, config.seed)?;
            out.extend(verdicts);
        }
        // no outer variation: the identity holds with a zero between-term
        Err(Error::DegenerateTrajectory) => out.push(Verdict::info("degenerate_trajectory", 0.0, 0.0, 0.0)),
        Err(e) => return Err(e),
    }
    Ok(out)
}
