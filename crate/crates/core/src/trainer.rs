//! The alternating supernet/controller training loop in both update modes.
//!
//! In `di` mode every shared layer touched by a step is updated with its
//! projected gradient, and only afterwards are that step's layer inputs folded
//! into the layer's projection. The projection consulted by a step therefore
//! reflects strictly earlier batches. `standard` mode takes plain gradient
//! steps and never touches a projection.

use alloc::string::String;
use alloc::vec::Vec;

use crate::controller::{PolicyParams, DEFAULT_BASELINE_DECAY, DEFAULT_ENTROPY_WEIGHT};
use crate::data::Dataset;
use crate::error::{config, usage, Result};
use crate::matrix::Matrix;
use crate::netcore::{accuracy, softmax_xent, Batch};
use crate::ogd::projected_step;
use crate::rng::SplitMix64;
use crate::searchspace::{sample_uniform, shared_params_of, subnet_forward, ArchEncoding, CellSpec, SharedParamStore};

pub const FORMAT_TAG: &str = "di-ws/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Mode {
    /// Projected updates with projection absorption.
    Di,
    /// Plain gradient steps.
    Standard,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Di => "di",
            Mode::Standard => "standard",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub mode: Mode,
    pub lambda: f64,
    pub eta_w: f64,
    pub eta_theta: f64,
    /// Supernet steps per epoch.
    pub t_n: usize,
    /// Controller steps per epoch.
    pub t_c: usize,
    pub epochs: usize,
    pub controller_start_epoch: usize,
    pub batch_size: usize,
    /// Feature vectors absorbed per layer per step.
    pub absorb_cap: usize,
    pub seed: u64,
    /// Fraction of the data used for supernet training; the rest drives the
    /// controller and all evaluations.
    pub split_fraction: f64,
    pub entropy_weight: f64,
    /// EMA decay of the reward baseline; `None` disables the baseline.
    pub baseline_decay: Option<f64>,
    /// Reset every projection at the start of each epoch divisible by this.
    pub projection_reset_every: Option<usize>,
    pub cell: CellSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Di,
            lambda: 1.0,
            eta_w: 0.1,
            eta_theta: 0.05,
            t_n: 50,
            t_c: 20,
            epochs: 80,
            controller_start_epoch: 30,
            batch_size: 32,
            absorb_cap: 8,
            seed: 0,
            split_fraction: 0.4,
            entropy_weight: DEFAULT_ENTROPY_WEIGHT,
            baseline_decay: Some(DEFAULT_BASELINE_DECAY),
            projection_reset_every: None,
            cell: CellSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(config!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.eta_w > 0.0 && self.eta_w.is_finite()) {
            return Err(config!("eta_w must be positive, got {}", self.eta_w));
        }
        if !(self.eta_theta > 0.0 && self.eta_theta.is_finite()) {
            return Err(config!("eta_theta must be positive, got {}", self.eta_theta));
        }
        if self.batch_size == 0 {
            return Err(config!("batch_size must be at least 1"));
        }
        if self.absorb_cap == 0 {
            return Err(config!("absorb_cap must be at least 1"));
        }
        if self.controller_start_epoch > self.epochs {
            return Err(config!(
                "controller_start_epoch {} exceeds epochs {}",
                self.controller_start_epoch,
                self.epochs
            ));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(config!("split_fraction must lie in (0, 1), got {}", self.split_fraction));
        }
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return Err(config!("entropy_weight must be non-negative"));
        }
        if let Some(decay) = self.baseline_decay {
            if !(0.0..1.0).contains(&decay) {
                return Err(config!("baseline_decay must lie in [0, 1), got {decay}"));
            }
        }
        if self.projection_reset_every == Some(0) {
            return Err(config!("projection_reset_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Supernet,
    Controller,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Supernet => "supernet",
            Phase::Controller => "controller",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub arch: String,
    pub loss: f64,
    /// Batch accuracy of the sampled architecture: the training batch before
    /// the update in supernet steps, the validation batch in controller steps.
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub steps: Vec<StepRecord>,
}

impl PhaseRecord {
    pub fn mean_reward(&self) -> Option<f64> {
        if self.steps.is_empty() {
            return None;
        }
        Some(self.steps.iter().map(|s| s.reward).sum::<f64>() / self.steps.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub format: &'static str,
    pub config: TrainConfig,
    pub phases: Vec<PhaseRecord>,
    pub final_policy: PolicyParams,
    pub store: SharedParamStore,
}

impl RunRecord {
    /// Mean step reward of each epoch (both phases pooled), in epoch order.
    pub fn epoch_mean_rewards(&self) -> Vec<f64> {
        let mut sums: Vec<(f64, usize)> = alloc::vec![(0.0, 0); self.config.epochs];
        for phase in &self.phases {
            for step in &phase.steps {
                sums[phase.epoch].0 += step.reward;
                sums[phase.epoch].1 += 1;
            }
        }
        sums.into_iter().map(|(s, n)| if n == 0 { 0.0 } else { s / n as f64 }).collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.phases.iter().flat_map(|p| p.steps.iter().map(|s| s.loss)).collect()
    }
}

/// Independent random streams of one run.
#[derive(Debug, Clone)]
pub struct RunRngs {
    pub init: SplitMix64,
    pub split: SplitMix64,
    pub arch: SplitMix64,
    pub batch: SplitMix64,
    pub absorb: SplitMix64,
    pub controller: SplitMix64,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            init: SplitMix64::derived(seed, 1),
            split: SplitMix64::derived(seed, 2),
            arch: SplitMix64::derived(seed, 3),
            batch: SplitMix64::derived(seed, 4),
            absorb: SplitMix64::derived(seed, 5),
            controller: SplitMix64::derived(seed, 6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Update rule applied to the shared layers of one architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRule {
    pub mode: Mode,
    pub eta: f64,
    pub absorb_cap: usize,
}

/// One forward/backward/update on `batch`. Returns the pre-update loss and
/// batch accuracy.
pub fn train_step(
    store: &mut SharedParamStore,
    arch: &ArchEncoding,
    batch: &Batch,
    rule: UpdateRule,
    absorb_rng: &mut SplitMix64,
) -> Result<StepStats> {
    let out = subnet_forward(arch, batch, store)?;
    let xent = softmax_xent(&out.logits, &batch.labels)?;
    let stats = StepStats { loss: xent.loss, accuracy: accuracy(&out.logits, &batch.labels) };
    let grads = out.tape.backward(out.logits_id, &xent.grad_logits)?;
    for key in shared_params_of(store.spec(), arch) {
        // Layers cut off from the output by zero edges get no gradient.
        let Some(g) = grads.get(&key) else { continue };
        let layer = store.layer_mut(&key)?;
        layer.weight = match rule.mode {
            Mode::Di => projected_step(&layer.weight, g, &layer.projection, rule.eta)?,
            Mode::Standard => {
                let mut w = layer.weight.clone();
                w.axpy(-rule.eta, g)?;
                w
            }
        };
        if !layer.weight.is_finite() {
            return Err(crate::error::numerical!("weights of {key} diverged"));
        }
    }
    if rule.mode == Mode::Di {
        for (key, input) in out.tape.linear_inputs() {
            let features: Matrix = input.transpose();
            store.layer_mut(key)?.projection.absorb_batch(&features, rule.absorb_cap, absorb_rng)?;
        }
    }
    Ok(stats)
}

/// `t_n` supernet steps. Architectures come from `policy` when given, and
/// uniformly from the search space otherwise.
pub fn supernet_phase(
    store: &mut SharedParamStore,
    policy: Option<&PolicyParams>,
    train: &Dataset,
    cfg: &TrainConfig,
    rngs: &mut RunRngs,
) -> Result<Vec<StepRecord>> {
    let rule = UpdateRule { mode: cfg.mode, eta: cfg.eta_w, absorb_cap: cfg.absorb_cap };
    let mut steps = Vec::with_capacity(cfg.t_n);
    for _ in 0..cfg.t_n {
        let arch = match policy {
            Some(p) => p.sample_arch(&mut rngs.arch).arch,
            None => sample_uniform(store.spec(), &mut rngs.arch),
        };
        let batch = train.sample_batch(cfg.batch_size, &mut rngs.batch);
        let stats = train_step(store, &arch, &batch, rule, &mut rngs.absorb)?;
        steps.push(StepRecord { arch: arch.encode(), loss: stats.loss, reward: stats.accuracy });
    }
    Ok(steps)
}

/// `t_c` REINFORCE steps rewarded by validation-batch accuracy.
pub fn controller_phase(
    policy: &mut PolicyParams,
    store: &SharedParamStore,
    val: &Dataset,
    cfg: &TrainConfig,
    rngs: &mut RunRngs,
) -> Result<Vec<StepRecord>> {
    let mut steps = Vec::with_capacity(cfg.t_c);
    for _ in 0..cfg.t_c {
        let sample = policy.sample_arch(&mut rngs.controller);
        let batch = val.sample_batch(cfg.batch_size, &mut rngs.batch);
        let out = subnet_forward(&sample.arch, &batch, store)?;
        let reward = accuracy(&out.logits, &batch.labels);
        let loss = softmax_xent(&out.logits, &batch.labels)?.loss;
        policy.reinforce_update(&sample.arch, reward, cfg.eta_theta)?;
        steps.push(StepRecord { arch: sample.arch.encode(), loss, reward });
    }
    Ok(steps)
}

/// Hook invoked once per epoch after both phases.
pub trait EpochObserver {
    fn after_epoch(&mut self, epoch: usize, store: &SharedParamStore, val: &Dataset) -> Result<()>;
}

impl EpochObserver for () {
    fn after_epoch(&mut self, _: usize, _: &SharedParamStore, _: &Dataset) -> Result<()> {
        Ok(())
    }
}

pub fn run(cfg: &TrainConfig, dataset: &Dataset) -> Result<RunRecord> {
    run_observed(cfg, dataset, &mut ())
}

pub fn run_observed(cfg: &TrainConfig, dataset: &Dataset, observer: &mut dyn EpochObserver) -> Result<RunRecord> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(config!("dataset is empty"));
    }
    if dataset.dim() != cfg.cell.feature_dim {
        return Err(config!("dataset has {} features, the cell width is {}", dataset.dim(), cfg.cell.feature_dim));
    }
    let mut rngs = RunRngs::new(cfg.seed);
    let (train, val) = dataset.split(cfg.split_fraction, &mut rngs.split)?;
    let mut store = SharedParamStore::new(&cfg.cell, dataset.num_classes, cfg.lambda, &mut rngs.init)?;
    let mut policy = PolicyParams::uniform(&cfg.cell, cfg.entropy_weight, cfg.baseline_decay);
    let mut phases = Vec::new();
    for epoch in 0..cfg.epochs {
        if let Some(k) = cfg.projection_reset_every {
            if epoch > 0 && epoch % k == 0 {
                store.reset_projections();
            }
        }
        let controller_on = epoch >= cfg.controller_start_epoch;
        let steps = supernet_phase(&mut store, controller_on.then_some(&policy), &train, cfg, &mut rngs)?;
        phases.push(PhaseRecord { epoch, phase: Phase::Supernet, steps });
        if controller_on {
            let steps = controller_phase(&mut policy, &store, &val, cfg, &mut rngs)?;
            phases.push(PhaseRecord { epoch, phase: Phase::Controller, steps });
        }
        observer.after_epoch(epoch, &store, &val)?;
    }
    Ok(RunRecord { format: FORMAT_TAG, config: cfg.clone(), phases, final_policy: policy, store })
}

/// Index of the first position where two loss sequences differ.
pub fn first_divergence(a: &[f64], b: &[f64]) -> Option<usize> {
    a.iter()
        .zip(b)
        .position(|(x, y)| x.to_bits() != y.to_bits())
        .or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())))
}

/// Validation accuracy of `arch` on the whole of `data`.
pub fn evaluate(arch: &ArchEncoding, store: &SharedParamStore, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(usage!("cannot evaluate on an empty dataset"));
    }
    let out = subnet_forward(arch, &data.samples, store)?;
    Ok(accuracy(&out.logits, &data.samples.labels))
}
