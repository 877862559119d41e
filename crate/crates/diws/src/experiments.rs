//! Experiment drivers behind the subcommands.

use diws_core::convergence::{descent_rate_check, projected_descent_check, random_contraction, Quadratic};
use diws_core::data::Dataset;
use diws_core::matrix::Matrix;
use diws_core::metrics::{
    gt_tau_with_scratch, pd_matrix_experiment, scratch_accuracy, ArchTracker, EpochTrace, GtTauReport,
    PdExperimentConfig, PdMatrix, ScratchConfig,
};
use diws_core::ogd::output_change_check;
use diws_core::rng::SplitMix64;
use diws_core::searchspace::{sample_distinct, ArchEncoding, CellSpec};
use diws_core::trainer::{run_observed, Mode, RunRecord, RunRngs, TrainConfig};
use diws_core::Result;

/// Stream (derived from the experiment seed) that picks the architectures
/// an experiment evaluates.
pub const ARCH_STREAM: u64 = 9;

pub fn experiment_archs(cell: &CellSpec, n: usize, seed: u64) -> Result<Vec<ArchEncoding>> {
    sample_distinct(cell, n, &mut SplitMix64::derived(seed, ARCH_STREAM))
}

/// The train/validation split a run with `cfg` uses.
pub fn train_val_split(cfg: &TrainConfig, data: &Dataset) -> Result<(Dataset, Dataset)> {
    data.split(cfg.split_fraction, &mut RunRngs::new(cfg.seed).split)
}

pub fn pd_config(cfg: &TrainConfig, mode: Mode, steps_per_arch: usize) -> PdExperimentConfig {
    PdExperimentConfig {
        mode,
        lambda: cfg.lambda,
        eta_w: cfg.eta_w,
        steps_per_arch,
        batch_size: cfg.batch_size,
        absorb_cap: cfg.absorb_cap,
        seed: cfg.seed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdComparison {
    pub di: PdMatrix,
    pub standard: PdMatrix,
}

/// The same architecture sequence, data split and seed under both modes.
pub fn compare_pd(cfg: &TrainConfig, data: &Dataset, n_archs: usize, steps_per_arch: usize) -> Result<PdComparison> {
    let (train, val) = train_val_split(cfg, data)?;
    let archs = experiment_archs(&cfg.cell, n_archs, cfg.seed)?;
    let run = |mode| pd_matrix_experiment(&archs, &cfg.cell, &pd_config(cfg, mode, steps_per_arch), &train, &val);
    Ok(PdComparison { di: run(Mode::Di)?, standard: run(Mode::Standard)? })
}

/// A full run that evaluates `tracked` architectures after every epoch.
pub fn tracked_run(cfg: &TrainConfig, data: &Dataset, tracked: usize) -> Result<(RunRecord, EpochTrace)> {
    let mut tracker = ArchTracker::new(experiment_archs(&cfg.cell, tracked, cfg.seed)?);
    let record = run_observed(cfg, data, &mut tracker)?;
    Ok((record, tracker.into_trace()))
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Standalone accuracies of the GT-Tau architectures; independent of the
/// supernet mode, so paired comparisons compute them once.
pub fn gt_scratch(
    cfg: &TrainConfig,
    data: &Dataset,
    archs: &[ArchEncoding],
    scratch: &ScratchConfig,
) -> Result<Vec<f64>> {
    let (train, val) = train_val_split(cfg, data)?;
    archs.iter().map(|a| scratch_accuracy(a, &cfg.cell, scratch, &train, &val)).collect()
}

/// Trains a supernet with `cfg` and ranks `archs` with its inherited weights
/// against `scratch_accs`.
pub fn gt_tau_run(
    cfg: &TrainConfig,
    data: &Dataset,
    archs: &[ArchEncoding],
    scratch_accs: Vec<f64>,
) -> Result<(RunRecord, GtTauReport)> {
    let record = run_observed(cfg, data, &mut ())?;
    let (_, val) = train_val_split(cfg, data)?;
    let report = gt_tau_with_scratch(archs, &record.store, &val, scratch_accs)?;
    Ok((record, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckInstance {
    pub suite: &'static str,
    pub index: usize,
    pub holds: bool,
    pub detail: String,
}

/// Seeded instance counts for [`check_suites`].
pub const OUTPUT_CHANGE_INSTANCES: usize = 100;
pub const DESCENT_INSTANCES: usize = 20;

/// Output-change bound on random full-rank instances, the `O(1/t)` gradient
/// descent rate and projected monotone descent on random quadratics.
pub fn check_suites(seed: u64) -> Result<Vec<CheckInstance>> {
    let mut out = Vec::new();
    let mut rng = SplitMix64::derived(seed, 21);
    for index in 0..OUTPUT_CHANGE_INSTANCES {
        let d = 1 + rng.below(8);
        let n = d + rng.below(8);
        let c = 1 + rng.below(4);
        let w = Matrix::from_fn(d, c, |_, _| rng.normal());
        let g = Matrix::from_fn(d, c, |_, _| rng.normal());
        let x = Matrix::from_fn(d, n, |_, _| rng.normal());
        let b = output_change_check(&w, &g, &x, 1.0, 0.1)?;
        out.push(CheckInstance {
            suite: "output_change_bound",
            index,
            holds: b.holds,
            detail: format!("d={d} n={n} delta={} bound={}", b.delta, b.bound),
        });
    }
    let mut rng = SplitMix64::derived(seed, 22);
    for index in 0..DESCENT_INSTANCES {
        let rows = 1 + rng.below(4);
        let cols = 1 + rng.below(4);
        let q = Quadratic::random(&mut rng, rows, cols)?;
        let w0 = Matrix::from_fn(rows, cols, |_, _| rng.normal());
        let eta = 1.0 / q.smoothness()?;
        let rate = descent_rate_check(&q, &w0, eta, 500)?;
        let worst = rate.gaps.iter().zip(&rate.bounds).map(|(g, b)| g / b).fold(0.0, f64::max);
        out.push(CheckInstance {
            suite: "gradient_descent_rate",
            index,
            holds: rate.holds,
            detail: format!("dim={} max gap/bound={worst}", rows * cols),
        });
        let p = random_contraction(&mut rng, rows);
        let descent = projected_descent_check(&q, &w0, &p, eta, 500)?;
        out.push(CheckInstance {
            suite: "projected_descent",
            index,
            holds: descent.monotone,
            detail: format!("dim={} final loss={}", rows * cols, descent.losses[descent.losses.len() - 1]),
        });
    }
    Ok(out)
}
