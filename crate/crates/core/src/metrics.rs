//! Disturbance measurements: prediction differences, accuracy-change
//! matrices, interval performance change and rank correlations.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use libm::sqrt;

use crate::data::Dataset;
use crate::error::{config, numerical, usage, Result};
use crate::matrix::{norm2, Matrix};
use crate::rng::SplitMix64;
use crate::searchspace::{subnet_forward, ArchEncoding, CellSpec, SharedParamStore};
use crate::trainer::{evaluate, train_step, EpochObserver, Mode, UpdateRule};

/// `||f(X; w) - f(X; w_o)||_F` over the logits of `arch`.
pub fn prediction_pd(
    arch: &ArchEncoding,
    batch: &crate::netcore::Batch,
    store_before: &SharedParamStore,
    store_after: &SharedParamStore,
) -> Result<f64> {
    let before = subnet_forward(arch, batch, store_before)?.logits;
    let after = subnet_forward(arch, batch, store_after)?.logits;
    Ok(after.sub(&before)?.frobenius())
}

/// Reporting threshold on per-sample output change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceBudget {
    gamma: f64,
}

impl DisturbanceBudget {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(config!("gamma must be a non-negative number, got {gamma}"));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Fraction of probe rows whose output moved by more than `gamma`
    /// (Euclidean norm of the row difference).
    pub fn fraction_exceeding(&self, before: &Matrix, after: &Matrix) -> Result<f64> {
        let diff = after.sub(before)?;
        if diff.rows() == 0 {
            return Ok(0.0);
        }
        let over = (0..diff.rows()).filter(|&i| norm2(diff.row(i)) > self.gamma).count();
        Ok(over as f64 / diff.rows() as f64)
    }
}

/// Mean of `|row[c + interval] - row[c]|` over every row and every column
/// pair where both cells are filled.
pub fn performance_change(rows: &[Vec<Option<f64>>], interval: usize) -> Result<f64> {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    if interval == 0 || interval >= width {
        return Err(usage!("interval {interval} must lie in 1..{width}"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for row in rows {
        for c in 0..row.len().saturating_sub(interval) {
            if let (Some(a), Some(b)) = (row[c], row[c + interval]) {
                total += libm::fabs(b - a);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(usage!("no filled cell pairs at interval {interval}"));
    }
    Ok(total / count as f64)
}

/// Accuracy of architecture `i` (row) after training architecture `j`
/// (column); cells before an architecture was first trained are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdMatrix {
    pub archs: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl PdMatrix {
    pub fn len(&self) -> usize {
        self.archs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.archs.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i][j]
    }

    /// `max - min` over the filled cells of row `i`.
    pub fn row_fluctuation(&self, i: usize) -> f64 {
        let filled: Vec<f64> = self.cells[i].iter().flatten().copied().collect();
        let max = filled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = filled.iter().copied().fold(f64::INFINITY, f64::min);
        if filled.is_empty() {
            0.0
        } else {
            max - min
        }
    }

    /// Mean over rows of the mean `|acc(i, j) - acc(i, i)|` for `j > i`: how
    /// far each architecture drifts from its accuracy right after its own
    /// training. Rows with no later column are skipped.
    pub fn mean_row_change(&self) -> f64 {
        let mut per_row = Vec::new();
        for (i, row) in self.cells.iter().enumerate() {
            let Some(own) = row[i] else { continue };
            let later: Vec<f64> = row[i + 1..].iter().flatten().map(|v| libm::fabs(v - own)).collect();
            if !later.is_empty() {
                per_row.push(later.iter().sum::<f64>() / later.len() as f64);
            }
        }
        if per_row.is_empty() {
            0.0
        } else {
            per_row.iter().sum::<f64>() / per_row.len() as f64
        }
    }

    pub fn performance_change(&self, interval: usize) -> Result<f64> {
        performance_change(&self.cells, interval)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct PdExperimentConfig {
    pub mode: Mode,
    pub lambda: f64,
    pub eta_w: f64,
    pub steps_per_arch: usize,
    pub batch_size: usize,
    pub absorb_cap: usize,
    pub seed: u64,
}

impl Default for PdExperimentConfig {
    fn default() -> Self {
        Self { mode: Mode::Di, lambda: 1.0, eta_w: 0.1, steps_per_arch: 50, batch_size: 32, absorb_cap: 8, seed: 0 }
    }
}

/// Trains `archs` one after another on a fresh supernet, calling
/// `after_each(j, store)` once architecture `j` has had its steps.
pub fn train_sequence(
    archs: &[ArchEncoding],
    cell: &CellSpec,
    cfg: &PdExperimentConfig,
    train: &Dataset,
    mut after_each: impl FnMut(usize, &SharedParamStore) -> Result<()>,
) -> Result<SharedParamStore> {
    if archs.is_empty() {
        return Err(usage!("need at least one architecture"));
    }
    let mut init = SplitMix64::derived(cfg.seed, 1);
    let mut batches = SplitMix64::derived(cfg.seed, 4);
    let mut absorb = SplitMix64::derived(cfg.seed, 5);
    let mut store = SharedParamStore::new(cell, train.num_classes, cfg.lambda, &mut init)?;
    let rule = UpdateRule { mode: cfg.mode, eta: cfg.eta_w, absorb_cap: cfg.absorb_cap };
    for (j, arch) in archs.iter().enumerate() {
        for _ in 0..cfg.steps_per_arch {
            let batch = train.sample_batch(cfg.batch_size, &mut batches);
            train_step(&mut store, arch, &batch, rule, &mut absorb)?;
        }
        after_each(j, &store)?;
    }
    Ok(store)
}

/// Records the accuracy of every already-trained architecture after each
/// step of [`train_sequence`].
pub fn pd_matrix_experiment(
    archs: &[ArchEncoding],
    cell: &CellSpec,
    cfg: &PdExperimentConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<PdMatrix> {
    let n = archs.len();
    let mut cells = alloc::vec![alloc::vec![None; n]; n];
    train_sequence(archs, cell, cfg, train, |j, store| {
        for (i, earlier) in archs.iter().enumerate().take(j + 1) {
            cells[i][j] = Some(evaluate(earlier, store, val)?);
        }
        Ok(())
    })?;
    Ok(PdMatrix { archs: archs.iter().map(ArchEncoding::encode).collect(), cells })
}

/// Stores after the first architecture and after the whole sequence.
pub fn sequential_stores(
    archs: &[ArchEncoding],
    cell: &CellSpec,
    cfg: &PdExperimentConfig,
    train: &Dataset,
) -> Result<(SharedParamStore, SharedParamStore)> {
    let mut first = None;
    let last = train_sequence(archs, cell, cfg, train, |j, store| {
        if j == 0 {
            first = Some(store.clone());
        }
        Ok(())
    })?;
    Ok((first.expect("sequence is non-empty"), last))
}

fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).expect("values checked finite")
}

/// Counts inversions of `values` while merge-sorting it in place.
fn count_inversions(values: &mut [f64], scratch: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = values.split_at_mut(mid);
        let (sl, sr) = scratch.split_at_mut(mid);
        count_inversions(left, sl) + count_inversions(right, sr)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if values[j] < values[i] {
            scratch[k] = values[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            scratch[k] = values[i];
            i += 1;
        }
        k += 1;
    }
    scratch[k..k + mid - i].copy_from_slice(&values[i..mid]);
    k += mid - i;
    scratch[k..k + n - j].copy_from_slice(&values[j..n]);
    values.copy_from_slice(&scratch[..n]);
    swaps
}

/// Sum of `t (t - 1) / 2` over runs of equal values in a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * run.saturating_sub(1) / 2;
            run = 1;
        }
        prev = Some(v);
    }
    total + run * run.saturating_sub(1) / 2
}

/// Kendall's tau-b in `O(n log n)` (Knight's algorithm). Returns 0 when
/// either side is entirely tied.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(usage!("sequences have lengths {} and {}", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(usage!("kendall tau needs at least two observations"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(numerical!("kendall tau inputs must be finite"));
    }
    let n = a.len() as u64;
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|x, y| cmp_f64(&x.0, &y.0).then(cmp_f64(&x.1, &y.1)));
    let total = n * (n - 1) / 2;
    let ties_a = tied_pairs(pairs.iter().map(|p| p.0));
    let ties_joint = tied_pairs(pairs.iter().copied());
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut scratch = alloc::vec![0.0; ys.len()];
    let discordant = count_inversions(&mut ys, &mut scratch);
    let ties_b = tied_pairs(ys.iter().copied());
    let numerator = total as f64 - ties_a as f64 - ties_b as f64 + ties_joint as f64 - 2.0 * discordant as f64;
    let denom = sqrt((total - ties_a) as f64 * (total - ties_b) as f64);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((numerator / denom).clamp(-1.0, 1.0))
}

/// Accuracy of a fixed set of architectures at the end of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub archs: Vec<String>,
    /// `accuracies[i][e]`: architecture `i` after epoch `e`.
    pub accuracies: Vec<Vec<f64>>,
}

impl EpochTrace {
    pub fn epochs(&self) -> usize {
        self.accuracies.first().map_or(0, Vec::len)
    }

    pub fn column(&self, epoch: usize) -> Vec<f64> {
        self.accuracies.iter().map(|row| row[epoch]).collect()
    }

    /// `(e, tau(acc at e, acc at e + interval))` for every valid `e`.
    pub fn ktau_series(&self, interval: usize) -> Result<Vec<(usize, f64)>> {
        let epochs = self.epochs();
        if interval == 0 || interval >= epochs {
            return Err(usage!("interval {interval} must lie in 1..{epochs}"));
        }
        (0..epochs - interval).map(|e| Ok((e, kendall_tau(&self.column(e), &self.column(e + interval))?))).collect()
    }

    pub fn performance_change(&self, interval: usize) -> Result<f64> {
        let rows: Vec<Vec<Option<f64>>> =
            self.accuracies.iter().map(|r| r.iter().copied().map(Some).collect()).collect();
        performance_change(&rows, interval)
    }
}

/// Epoch observer that evaluates tracked architectures on the validation
/// split.
pub struct ArchTracker {
    archs: Vec<ArchEncoding>,
    trace: EpochTrace,
}

impl ArchTracker {
    pub fn new(archs: Vec<ArchEncoding>) -> Self {
        let trace = EpochTrace {
            archs: archs.iter().map(ArchEncoding::encode).collect(),
            accuracies: alloc::vec![Vec::new(); archs.len()],
        };
        Self { archs, trace }
    }

    pub fn into_trace(self) -> EpochTrace {
        self.trace
    }
}

impl EpochObserver for ArchTracker {
    fn after_epoch(&mut self, _epoch: usize, store: &SharedParamStore, val: &Dataset) -> Result<()> {
        for (arch, row) in self.archs.iter().zip(&mut self.trace.accuracies) {
            row.push(evaluate(arch, store, val)?);
        }
        Ok(())
    }
}

/// Budget for standalone training of one architecture.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ScratchConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for ScratchConfig {
    fn default() -> Self {
        Self { steps: 400, batch_size: 32, eta: 0.1, seed: 0 }
    }
}

/// Validation accuracy of `arch` trained alone on a fresh store. Every
/// architecture starts from the same initialization and batch stream.
pub fn scratch_accuracy(
    arch: &ArchEncoding,
    cell: &CellSpec,
    scratch: &ScratchConfig,
    train: &Dataset,
    val: &Dataset,
) -> Result<f64> {
    let mut init = SplitMix64::derived(scratch.seed, 101);
    let mut batches = SplitMix64::derived(scratch.seed, 102);
    let mut unused = SplitMix64::new(0);
    let mut store = SharedParamStore::new(cell, train.num_classes, 1.0, &mut init)?;
    let rule = UpdateRule { mode: Mode::Standard, eta: scratch.eta, absorb_cap: 1 };
    for _ in 0..scratch.steps {
        let batch = train.sample_batch(scratch.batch_size, &mut batches);
        train_step(&mut store, arch, &batch, rule, &mut unused)?;
    }
    evaluate(arch, &store, val)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtTauReport {
    pub archs: Vec<String>,
    pub ws_accs: Vec<f64>,
    pub scratch_accs: Vec<f64>,
    pub tau: f64,
}

/// Rank agreement between inherited-weight accuracies and accuracies after
/// standalone training.
pub fn gt_tau(
    archs: &[ArchEncoding],
    store: &SharedParamStore,
    train: &Dataset,
    val: &Dataset,
    scratch: &ScratchConfig,
) -> Result<GtTauReport> {
    let scratch_accs =
        archs.iter().map(|a| scratch_accuracy(a, store.spec(), scratch, train, val)).collect::<Result<Vec<_>>>()?;
    gt_tau_with_scratch(archs, store, val, scratch_accs)
}

/// As [`gt_tau`] with precomputed standalone accuracies.
pub fn gt_tau_with_scratch(
    archs: &[ArchEncoding],
    store: &SharedParamStore,
    val: &Dataset,
    scratch_accs: Vec<f64>,
) -> Result<GtTauReport> {
    if scratch_accs.len() != archs.len() {
        return Err(usage!("{} scratch accuracies for {} architectures", scratch_accs.len(), archs.len()));
    }
    let ws_accs = archs.iter().map(|a| evaluate(a, store, val)).collect::<Result<Vec<_>>>()?;
    let tau = kendall_tau(&ws_accs, &scratch_accs)?;
    Ok(GtTauReport { archs: archs.iter().map(ArchEncoding::encode).collect(), ws_accs, scratch_accs, tau })
}
