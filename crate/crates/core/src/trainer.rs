//! Alternating (AR then CR) and joint training loops.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::data::{window_at, window_origins, SeriesMatrix, WindowPair};
use crate::diagnostics::{branch_log_variance, Mode, RollingVarTracker, VarianceRecord, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::metrics::evaluate_metrics;
use crate::model::{forward_batch, l1_penalty_var, Branch, ModelConfig, NormalizedBatch, Params};
use crate::optim::{AmsGrad, AmsGradConfig};

// ── configuration ────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    /// `n_ar` AR steps then `n_cr` CR steps on every mini-batch.
    MiniBatch,
    /// `n_ar` full passes updating AR, then `n_cr` passes updating CR.
    InnerEpoch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AoSchedule {
    n_ar: usize,
    n_cr: usize,
    granularity: Granularity,
}

impl AoSchedule {
    pub fn new(n_ar: usize, n_cr: usize, granularity: Granularity) -> Result<Self> {
        if n_ar == 0 || n_cr == 0 {
            return Err(Error::Config(format!(
                "alternating schedule needs at least one update per branch, got ({n_ar}, {n_cr})"
            )));
        }
        Ok(AoSchedule { n_ar, n_cr, granularity })
    }

    pub fn n_ar(&self) -> usize {
        self.n_ar
    }

    pub fn n_cr(&self) -> usize {
        self.n_cr
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }
}

impl Default for AoSchedule {
    fn default() -> Self {
        AoSchedule {
            n_ar: 10,
            n_cr: 2,
            granularity: Granularity::MiniBatch,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_ar: f64,
    pub lr_cr: f64,
    pub lambda_ar: f64,
    pub lambda_cr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub mode: Mode,
    pub schedule: AoSchedule,
    /// Rolling window for gradient-variance tracking.
    pub var_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_ar: 5e-3,
            lr_cr: 1e-4,
            lambda_ar: 0.0,
            lambda_cr: 0.0,
            batch: 32,
            epochs: 30,
            patience: 5,
            seed: 2024,
            mode: Mode::Alternating,
            schedule: AoSchedule::default(),
            var_window: DEFAULT_WINDOW,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_ar", self.lr_ar), ("lr_cr", self.lr_cr)];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("{k} must be positive, got {v}")));
        }
        if self.lambda_ar < 0.0 || self.lambda_cr < 0.0 {
            return Err(Error::Config("penalty weights must be non-negative".into()));
        }
        if self.batch == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch, epochs and patience must be at least 1".into()));
        }
        if self.var_window < 2 {
            return Err(Error::Config("var_window must be at least 2".into()));
        }
        Ok(())
    }
}

// ── batches ──────────────────────────────────────────────────────────

/// All windows of one split, addressed by position.
#[derive(Clone, Debug)]
pub struct WindowSet {
    series: SeriesMatrix,
    lookback: usize,
    horizon: usize,
    origins: Vec<usize>,
}

impl WindowSet {
    pub fn new(series: SeriesMatrix, lookback: usize, horizon: usize, stride: usize) -> Result<Self> {
        let origins = window_origins(series.len(), lookback, horizon, stride)?;
        Ok(WindowSet {
            series,
            lookback,
            horizon,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn window(&self, k: usize) -> WindowPair {
        window_at(&self.series, self.origins[k], self.lookback, self.horizon)
    }

    pub fn prepare(&self, idx: &[usize]) -> Result<PreparedBatch> {
        let windows: Vec<WindowPair> = idx.iter().map(|&k| self.window(k)).collect();
        PreparedBatch::new(&windows)
    }
}

/// A mini-batch with RevIN already applied to its inputs.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub inputs: NormalizedBatch,
    /// `[B, D, H]`.
    pub target: Tensor,
}

impl PreparedBatch {
    pub fn new(windows: &[WindowPair]) -> Result<Self> {
        let xs: Vec<&Tensor> = windows.iter().map(|w| &w.x).collect();
        let inputs = NormalizedBatch::new(&xs)?;
        let (d, h) = (windows[0].y.shape()[0], windows[0].y.shape()[1]);
        let target = windows.iter().flat_map(|w| w.y.data().iter().copied()).collect();
        Ok(PreparedBatch {
            inputs,
            target: Tensor::new([windows.len(), d, h], target)?,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.batch
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.batch == 0
    }
}

/// Mean squared error over all entries.
pub fn loss_mse(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    if y_hat.shape() != y.shape() {
        return Err(Error::shape("loss_mse", format!("{:?} vs {:?}", y_hat.shape(), y.shape())));
    }
    let n = y.numel().max(1) as f64;
    Ok(y_hat.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

// ── objective ────────────────────────────────────────────────────────

/// Value and branch gradients of `MSE + Σ penalties`.
#[derive(Clone, Debug)]
pub struct Objective {
    pub mse: f64,
    pub total: f64,
    /// Gradients of the trainable parameters, canonical order.
    pub grads: Vec<(String, Tensor)>,
}

impl Objective {
    /// Gradients of one branch flattened in canonical order.
    pub fn flat(&self, branch: Branch) -> Vec<f64> {
        self.grads
            .iter()
            .filter(|(n, _)| Branch::of(n) == Some(branch))
            .flat_map(|(_, g)| g.data().iter().copied())
            .collect()
    }
}

/// Evaluates the training objective with gradients for `trainable`
/// branches only. Frozen branches enter the tape as constants.
pub fn objective(
    params: &Params,
    config: &ModelConfig,
    batch: &PreparedBatch,
    trainable: &[Branch],
    penalties: &[(Branch, f64)],
) -> Result<Objective> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, |b| trainable.contains(&b));
    let out = forward_batch(&mut tape, &batch.inputs, &bound, config)?;
    let target = tape.constant(batch.target.clone());
    let mse = tape.mse(out.y_hat, target)?;
    let mut loss = mse;
    for &(branch, lambda) in penalties {
        if let Some(p) = l1_penalty_var(&mut tape, &bound, branch, lambda, config.horizon)? {
            loss = tape.add(loss, p)?;
        }
    }
    let leaves: Vec<(String, crate::autodiff::Var)> = bound
        .named()
        .into_iter()
        .filter(|(n, _)| Branch::of(n).is_some_and(|b| trainable.contains(&b)))
        .map(|(n, v)| (n, *v))
        .collect();
    let vars: Vec<_> = leaves.iter().map(|(_, v)| *v).collect();
    let grads = tape.backward(loss, &vars)?;
    let grads: Vec<(String, Tensor)> = leaves
        .into_iter()
        .zip(grads.into_tensors())
        .map(|((n, _), g)| (n, g))
        .collect();
    Ok(Objective {
        mse: tape.value(mse).item(),
        total: tape.value(loss).item(),
        grads,
    })
}

// ── trainer ──────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub enum Optimizers {
    /// Two independent states; `cr` is absent when the model has no CR path.
    Alternating { ar: AmsGrad, cr: Option<AmsGrad> },
    /// One state over every parameter.
    Joint(AmsGrad),
}

/// What an observer sees after every applied step.
pub struct StepView<'a> {
    /// Branch that was updated; `None` for a joint step.
    pub branch: Option<Branch>,
    pub params: &'a Params,
    pub optimizers: &'a Optimizers,
}

/// Losses observed during one alternating cycle, before each step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CycleReport {
    pub ar_losses: Vec<f64>,
    pub cr_losses: Vec<f64>,
    /// Branch of every applied step, in order.
    pub order: Vec<Branch>,
}

pub struct Trainer {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub params: Params,
    pub optimizers: Optimizers,
    pub ar_tracker: RollingVarTracker,
    pub cr_tracker: Option<RollingVarTracker>,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig, params: Params) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        let names_sizes = |branch: Option<Branch>| -> Vec<(String, usize)> {
            params
                .named()
                .into_iter()
                .filter(|(n, _)| branch.is_none() || Branch::of(n) == branch)
                .map(|(n, t)| (n, t.numel()))
                .collect()
        };
        let make = |lr: f64, entries: Vec<(String, usize)>| {
            AmsGrad::new(AmsGradConfig::with_lr(lr), entries.iter().map(|(n, k)| (n.as_str(), *k)))
        };
        let has_cr = params.cr.is_some();
        let optimizers = match config.mode {
            Mode::Alternating => Optimizers::Alternating {
                ar: make(config.lr_ar, names_sizes(Some(Branch::Ar))),
                cr: has_cr.then(|| make(config.lr_cr, names_sizes(Some(Branch::Cr)))),
            },
            // one shared step size: the AR rate
            Mode::Joint => Optimizers::Joint(make(config.lr_ar, names_sizes(None))),
        };
        let ar_tracker = RollingVarTracker::new(Branch::Ar, params.branch_len(Branch::Ar), config.var_window);
        let cr_tracker =
            has_cr.then(|| RollingVarTracker::new(Branch::Cr, params.branch_len(Branch::Cr), config.var_window));
        Ok(Trainer {
            model,
            config,
            params,
            optimizers,
            ar_tracker,
            cr_tracker,
        })
    }

    /// Fresh parameters from `config.seed`, then [`Trainer::new`].
    pub fn from_seed(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::init(&model, &mut rng)?;
        Trainer::new(model, config, params)
    }

    fn penalty(&self, branch: Branch) -> (Branch, f64) {
        match branch {
            Branch::Ar => (Branch::Ar, self.config.lambda_ar),
            Branch::Cr => (Branch::Cr, self.config.lambda_cr),
        }
    }

    /// One step on `branch` with the other branch frozen. Returns the
    /// objective value before the step, or `None` when the branch does
    /// not exist.
    pub fn branch_step(&mut self, batch: &PreparedBatch, branch: Branch) -> Result<Option<f64>> {
        let penalty = self.penalty(branch);
        let Optimizers::Alternating { ar, cr } = &mut self.optimizers else {
            return Err(Error::Config("branch steps need the alternating mode".into()));
        };
        let opt = match branch {
            Branch::Ar => ar,
            Branch::Cr => match cr {
                Some(c) => c,
                None => return Ok(None),
            },
        };
        let obj = objective(&self.params, &self.model, batch, &[branch], &[penalty])?;
        check_finite(&obj)?;
        let mut targets = self.params.named_mut();
        targets.retain(|(n, _)| Branch::of(n) == Some(branch));
        opt.step(&mut targets, &obj.grads)?;
        let tracker = match branch {
            Branch::Ar => Some(&mut self.ar_tracker),
            Branch::Cr => self.cr_tracker.as_mut(),
        };
        if let Some(t) = tracker {
            t.update(&obj.flat(branch))?;
        }
        Ok(Some(obj.total))
    }

    /// `n_ar` AR steps (CR frozen) then `n_cr` CR steps (AR frozen).
    pub fn ao_cycle(&mut self, batch: &PreparedBatch) -> Result<CycleReport> {
        self.ao_cycle_with(batch, &mut |_| {})
    }

    /// [`Trainer::ao_cycle`] with `observer` called after every step.
    pub fn ao_cycle_with(&mut self, batch: &PreparedBatch, observer: &mut dyn FnMut(StepView<'_>)) -> Result<CycleReport> {
        if self.config.mode != Mode::Alternating {
            return Err(Error::Config("ao_cycle needs the alternating mode".into()));
        }
        let mut report = CycleReport::default();
        for (branch, count) in [(Branch::Ar, self.config.schedule.n_ar), (Branch::Cr, self.config.schedule.n_cr)] {
            for _ in 0..count {
                let Some(loss) = self.branch_step(batch, branch)? else { break };
                match branch {
                    Branch::Ar => report.ar_losses.push(loss),
                    Branch::Cr => report.cr_losses.push(loss),
                }
                report.order.push(branch);
                observer(StepView {
                    branch: Some(branch),
                    params: &self.params,
                    optimizers: &self.optimizers,
                });
            }
        }
        Ok(report)
    }

    /// One shared-optimizer step on `MSE + R_AR + R_CR`. Returns the
    /// objective before the step.
    pub fn joint_step(&mut self, batch: &PreparedBatch) -> Result<f64> {
        let Optimizers::Joint(opt) = &mut self.optimizers else {
            return Err(Error::Config("joint_step needs the joint mode".into()));
        };
        let obj = objective(
            &self.params,
            &self.model,
            batch,
            &[Branch::Ar, Branch::Cr],
            &[(Branch::Ar, self.config.lambda_ar), (Branch::Cr, self.config.lambda_cr)],
        )?;
        check_finite(&obj)?;
        let mut targets = self.params.named_mut();
        opt.step(&mut targets, &obj.grads)?;
        self.ar_tracker.update(&obj.flat(Branch::Ar))?;
        if let Some(t) = &mut self.cr_tracker {
            t.update(&obj.flat(Branch::Cr))?;
        }
        Ok(obj.total)
    }

    fn log_variance(&self, branch: Branch, index: usize) -> Option<f64> {
        let tracker = match branch {
            Branch::Ar => Some(&self.ar_tracker),
            Branch::Cr => self.cr_tracker.as_ref(),
        }?;
        branch_log_variance(tracker, index).ok().map(|r| r.log_variance)
    }
}

fn check_finite(obj: &Objective) -> Result<()> {
    if !obj.total.is_finite() {
        return Err(Error::NonFiniteValue { op: "loss" });
    }
    if let Some((name, _)) = obj.grads.iter().find(|(_, g)| !g.is_finite()) {
        log::error!("non-finite gradient for `{name}`");
        return Err(Error::NonFiniteValue { op: "gradient" });
    }
    Ok(())
}

// ── training loop ────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub ar_log_var: Option<f64>,
    pub cr_log_var: Option<f64>,
    pub wall_time: Duration,
}

impl EpochReport {
    /// The report with timing zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> EpochReport {
        EpochReport {
            wall_time: Duration::ZERO,
            ..self.clone()
        }
    }
}

/// Patience-based stopping on validation MSE.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val: f64) -> StopDecision {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params,
    pub best_epoch: usize,
    pub history: Vec<EpochReport>,
    /// Branch log-variance at the end of every epoch.
    pub epoch_variance: Vec<VarianceRecord>,
    /// Branch log-variance after every mini-batch.
    pub step_variance: Vec<VarianceRecord>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Trains from `config.seed`, keeping the parameters with the best
/// validation MSE.
pub fn train(model: &ModelConfig, config: &TrainConfig, train_set: &WindowSet, val_set: &WindowSet) -> Result<TrainOutcome> {
    let trainer = Trainer::from_seed(model.clone(), config.clone())?;
    train_with(trainer, train_set, val_set)
}

pub fn train_with(mut trainer: Trainer, train_set: &WindowSet, val_set: &WindowSet) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::SplitTooSmall {
            split: "train",
            len: 0,
            needed: 1,
        });
    }
    let cfg = trainer.config.clone();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = trainer.params.clone();
    let mut history = Vec::new();
    let mut epoch_variance = Vec::new();
    let mut step_variance = Vec::new();
    let mut batch_counter = 0usize;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let batches: Vec<&[usize]> = order.chunks(cfg.batch).collect();

        let abort = |step: usize, e: Error| match e {
            Error::NonFiniteValue { op } => {
                log::error!("numerical abort at epoch {epoch}, step {step} ({op})");
                Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!("non-finite value in {op}"),
                }
            }
            other => other,
        };

        let mut loss_sum = 0.0;
        let mut record_steps = |trainer: &Trainer, counter: &mut usize| {
            *counter += 1;
            for branch in [Branch::Ar, Branch::Cr] {
                if let Some(v) = trainer.log_variance(branch, *counter) {
                    step_variance.push(VarianceRecord {
                        step_or_epoch: *counter,
                        branch,
                        mode: cfg.mode,
                        log_variance: v,
                    });
                }
            }
        };

        match (cfg.mode, cfg.schedule.granularity) {
            (Mode::Joint, _) => {
                for (s, idx) in batches.iter().enumerate() {
                    let b = train_set.prepare(idx)?;
                    loss_sum += trainer.joint_step(&b).map_err(|e| abort(s, e))?;
                    record_steps(&trainer, &mut batch_counter);
                }
            }
            (Mode::Alternating, Granularity::MiniBatch) => {
                for (s, idx) in batches.iter().enumerate() {
                    let b = train_set.prepare(idx)?;
                    let rep = trainer.ao_cycle(&b).map_err(|e| abort(s, e))?;
                    loss_sum += rep.ar_losses.first().copied().unwrap_or(0.0);
                    record_steps(&trainer, &mut batch_counter);
                }
            }
            (Mode::Alternating, Granularity::InnerEpoch) => {
                let prepared = batches
                    .iter()
                    .map(|idx| train_set.prepare(idx))
                    .collect::<Result<Vec<_>>>()?;
                let mut step = 0;
                for branch in std::iter::repeat_n(Branch::Ar, cfg.schedule.n_ar)
                    .chain(std::iter::repeat_n(Branch::Cr, cfg.schedule.n_cr))
                {
                    for (k, b) in prepared.iter().enumerate() {
                        let loss = trainer.branch_step(b, branch).map_err(|e| abort(step, e))?;
                        if step < prepared.len() {
                            loss_sum += loss.unwrap_or(0.0);
                        }
                        step += 1;
                        if k + 1 == prepared.len() {
                            record_steps(&trainer, &mut batch_counter);
                        }
                    }
                }
            }
        }

        let (val_mse, val_mae) = evaluate_metrics(&trainer.params, &trainer.model, val_set, cfg.batch)?;
        let report = EpochReport {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_mse,
            val_mae,
            ar_log_var: trainer.log_variance(Branch::Ar, epoch),
            cr_log_var: trainer.log_variance(Branch::Cr, epoch),
            wall_time: started.elapsed(),
        };
        for (branch, v) in [(Branch::Ar, report.ar_log_var), (Branch::Cr, report.cr_log_var)] {
            if let Some(v) = v {
                epoch_variance.push(VarianceRecord {
                    step_or_epoch: epoch,
                    branch,
                    mode: cfg.mode,
                    log_variance: v,
                });
            }
        }
        log::info!(
            "epoch {epoch}: train {:.5} val mse {:.5} mae {:.5}",
            report.train_loss,
            val_mse,
            val_mae
        );
        if !val_mse.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: batches.len(),
                detail: "validation MSE is not finite".into(),
            });
        }
        history.push(report);
        match stopper.observe(epoch, val_mse) {
            StopDecision::Improved => best = trainer.params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    Ok(TrainOutcome {
        params: best,
        best_epoch: stopper.best_epoch(),
        history,
        epoch_variance,
        step_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(d: usize, t: usize) -> SeriesMatrix {
        let channels = (0..d)
            .map(|i| {
                (0..t)
                    .map(|k| {
                        let k = k as f64;
                        (0.3 * k + i as f64).sin() + 0.5 * (0.11 * k * (i + 1) as f64).cos()
                    })
                    .collect()
            })
            .collect();
        SeriesMatrix::from_channels(channels).unwrap()
    }

    fn tiny_model(d: usize) -> ModelConfig {
        ModelConfig {
            channels: d,
            lookback: 8,
            horizon: 4,
            d_model: 8,
            heads: 2,
            layers: 1,
            d_ff: 8,
        }
    }

    fn tiny_config(mode: Mode) -> TrainConfig {
        TrainConfig {
            batch: 8,
            epochs: 3,
            patience: 2,
            seed: 7,
            mode,
            lambda_ar: 1e-3,
            lambda_cr: 1e-3,
            ..TrainConfig::default()
        }
    }

    fn batch(d: usize) -> PreparedBatch {
        let set = WindowSet::new(series(d, 60), 8, 4, 1).unwrap();
        set.prepare(&(0..8).collect::<Vec<_>>()).unwrap()
    }

    fn branch_tensors(p: &Params, branch: Branch) -> Vec<Tensor> {
        p.named()
            .into_iter()
            .filter(|(n, _)| Branch::of(n) == Some(branch))
            .map(|(_, t)| t.clone())
            .collect()
    }

    #[test]
    fn mse_examples() {
        let a = Tensor::new([2], vec![0.0, 2.0]).unwrap();
        let b = Tensor::new([2], vec![1.0, 0.0]).unwrap();
        assert_eq!(loss_mse(&a, &b).unwrap(), 2.5);
        assert_eq!(loss_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_mse(&Tensor::ones([2, 3]), &Tensor::zeros([2, 3])).unwrap(), 1.0);
        assert!(loss_mse(&a, &Tensor::zeros([3])).is_err());
    }

    #[test]
    fn schedule_defaults_and_invariants() {
        let s = AoSchedule::default();
        assert_eq!((s.n_ar(), s.n_cr(), s.granularity()), (10, 2, Granularity::MiniBatch));
        assert!(AoSchedule::new(1, 0, Granularity::MiniBatch).is_err());
        assert!(AoSchedule::new(0, 1, Granularity::MiniBatch).is_err());
    }

    #[test]
    fn ao_cycle_freezes_the_idle_branch() {
        let mut tr = Trainer::from_seed(tiny_model(3), tiny_config(Mode::Alternating)).unwrap();
        let b = batch(3);
        let cr0 = branch_tensors(&tr.params, Branch::Cr);
        let Optimizers::Alternating { cr: Some(opt_cr0), .. } = tr.optimizers.clone() else { panic!() };
        let mut ar_after: Option<(Vec<Tensor>, AmsGrad)> = None;
        let mut steps = Vec::new();
        let rep = tr
            .ao_cycle_with(&b, &mut |view| {
                let Optimizers::Alternating { ar, cr: Some(cr) } = view.optimizers else { panic!() };
                let branch = view.branch.unwrap();
                steps.push(branch);
                match branch {
                    Branch::Ar => {
                        assert_eq!(branch_tensors(view.params, Branch::Cr), cr0);
                        assert_eq!(cr, &opt_cr0);
                        ar_after = Some((branch_tensors(view.params, Branch::Ar), ar.clone()));
                    }
                    Branch::Cr => {
                        let (p, o) = ar_after.as_ref().unwrap();
                        assert_eq!(&branch_tensors(view.params, Branch::Ar), p);
                        assert_eq!(ar, o);
                    }
                }
            })
            .unwrap();
        let mut expected = vec![Branch::Ar; 10];
        expected.extend([Branch::Cr; 2]);
        assert_eq!(steps, expected);
        assert_eq!(rep.order, expected);
        assert_eq!(rep.ar_losses.len(), 10);
        assert_eq!(rep.cr_losses.len(), 2);
        let Optimizers::Alternating { ar, cr: Some(cr) } = &tr.optimizers else { panic!() };
        assert_eq!((ar.step_count(), cr.step_count()), (10, 2));
    }

    #[test]
    fn step_one_gradient_matches_joint_slice() {
        let model = tiny_model(3);
        let params = Params::init(&model, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = batch(3);
        let step1 = objective(&params, &model, &b, &[Branch::Ar], &[(Branch::Ar, 0.1)]).unwrap();
        let joint = objective(
            &params,
            &model,
            &b,
            &[Branch::Ar, Branch::Cr],
            &[(Branch::Ar, 0.1), (Branch::Cr, 0.1)],
        )
        .unwrap();
        assert!(!step1.grads.is_empty());
        assert_eq!(step1.flat(Branch::Ar), joint.flat(Branch::Ar));
        assert!(step1.flat(Branch::Cr).is_empty());
    }

    #[test]
    fn joint_step_with_silent_cr_equals_ar_step() {
        let model = tiny_model(2);
        let mut params = Params::init(&model, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for (n, t) in params.named_mut() {
            if Branch::of(&n) == Some(Branch::Cr) {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let b = batch(2);
        let mut cfg = tiny_config(Mode::Joint);
        cfg.lambda_cr = 0.0;
        let mut joint = Trainer::new(model.clone(), cfg.clone(), params.clone()).unwrap();
        joint.joint_step(&b).unwrap();
        cfg.mode = Mode::Alternating;
        let mut alt = Trainer::new(model, cfg, params).unwrap();
        alt.branch_step(&b, Branch::Ar).unwrap();
        assert_eq!(
            branch_tensors(&joint.params, Branch::Ar),
            branch_tensors(&alt.params, Branch::Ar)
        );
        let Optimizers::Joint(opt) = &joint.optimizers else { panic!() };
        assert_eq!(opt.step_count(), 1);
        assert_eq!(opt.names().len(), joint.params.names().len());
    }

    #[test]
    fn joint_training_overfits_a_fixed_batch() {
        let mut cfg = tiny_config(Mode::Joint);
        cfg.lr_ar = 1e-2;
        let mut tr = Trainer::from_seed(tiny_model(2), cfg).unwrap();
        let b = batch(2);
        let first = tr.joint_step(&b).unwrap();
        let mut last = first;
        for _ in 0..49 {
            last = tr.joint_step(&b).unwrap();
        }
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn ar_updates_ignore_cr_optimizer_state() {
        let b = batch(3);
        let mut with = Trainer::from_seed(tiny_model(3), tiny_config(Mode::Alternating)).unwrap();
        let mut without = Trainer::from_seed(tiny_model(3), tiny_config(Mode::Alternating)).unwrap();
        if let Optimizers::Alternating { cr, .. } = &mut without.optimizers {
            *cr = None;
        }
        for _ in 0..5 {
            with.branch_step(&b, Branch::Ar).unwrap();
            without.branch_step(&b, Branch::Ar).unwrap();
        }
        assert_eq!(
            branch_tensors(&with.params, Branch::Ar),
            branch_tensors(&without.params, Branch::Ar)
        );
    }

    #[test]
    fn wrong_mode_is_rejected() {
        let b = batch(2);
        let mut joint = Trainer::from_seed(tiny_model(2), tiny_config(Mode::Joint)).unwrap();
        assert!(joint.ao_cycle(&b).is_err());
        let mut alt = Trainer::from_seed(tiny_model(2), tiny_config(Mode::Alternating)).unwrap();
        assert!(alt.joint_step(&b).is_err());
    }

    #[test]
    fn early_stopping_on_worsening_validation() {
        let mut s = EarlyStopping::new(3);
        let decisions: Vec<_> = (1..=4).map(|e| s.observe(e, e as f64)).collect();
        assert_eq!(
            decisions,
            vec![
                StopDecision::Improved,
                StopDecision::Continue,
                StopDecision::Continue,
                StopDecision::Stop
            ]
        );
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn training_is_deterministic_and_keeps_best() {
        let s = series(3, 120);
        let train_set = WindowSet::new(s.range(0, 80), 8, 4, 1).unwrap();
        let val_set = WindowSet::new(s.range(68, 120), 8, 4, 1).unwrap();
        let model = tiny_model(3);
        for mode in [Mode::Alternating, Mode::Joint] {
            let cfg = tiny_config(mode);
            let a = train(&model, &cfg, &train_set, &val_set).unwrap();
            let b = train(&model, &cfg, &train_set, &val_set).unwrap();
            let strip = |h: &[EpochReport]| h.iter().map(EpochReport::without_timing).collect::<Vec<_>>();
            assert_eq!(strip(&a.history), strip(&b.history));
            assert_eq!(a.params, b.params);
            let (mse, _) = evaluate_metrics(&a.params, &model, &val_set, 8).unwrap();
            assert_eq!(mse, a.history[a.best_epoch - 1].val_mse);
            assert!(!a.step_variance.is_empty());
        }
    }

    #[test]
    fn inner_epoch_granularity_runs() {
        let s = series(2, 100);
        let train_set = WindowSet::new(s.range(0, 70), 8, 4, 1).unwrap();
        let val_set = WindowSet::new(s.range(58, 100), 8, 4, 1).unwrap();
        let mut cfg = tiny_config(Mode::Alternating);
        cfg.schedule = AoSchedule::new(2, 1, Granularity::InnerEpoch).unwrap();
        cfg.epochs = 2;
        let out = train(&tiny_model(2), &cfg, &train_set, &val_set).unwrap();
        assert_eq!(out.history.len(), 2);
        assert!(out.history.iter().all(|r| r.train_loss.is_finite()));
    }
}
