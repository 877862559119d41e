//! Labelled datasets and the synthetic Gaussian-cluster generator.

use alloc::vec::Vec;

use crate::error::{config, Result};
use crate::matrix::Matrix;
use crate::netcore::Batch;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Batch,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(config!("a dataset needs at least two classes"));
        }
        Ok(Self { samples: Batch::new(features, labels, num_classes)?, num_classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { samples: self.samples.select(indices), num_classes: self.num_classes }
    }

    /// Shuffles and splits into `(train, validation)` with
    /// `round(len * train_fraction)` training samples.
    pub fn split(&self, train_fraction: f64, rng: &mut SplitMix64) -> Result<(Dataset, Dataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(config!("split fraction must lie in (0, 1), got {train_fraction}"));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut order);
        let n_train = libm::round(self.len() as f64 * train_fraction) as usize;
        if n_train == 0 || n_train == self.len() {
            return Err(config!("splitting {} samples at {train_fraction} leaves an empty side", self.len()));
        }
        Ok((self.subset(&order[..n_train]), self.subset(&order[n_train..])))
    }

    /// `size` distinct samples drawn uniformly (all of them if `size >= len`).
    pub fn sample_batch(&self, size: usize, rng: &mut SplitMix64) -> Batch {
        let idx = rng.sample_indices(self.len(), size);
        self.samples.select(&idx)
    }
}

/// Gaussian clusters around signed unit axis vectors.
///
/// Cluster `k` of class `c` is centred at `s e_a` with axis
/// `a = c + (k / 2) * num_classes` and sign `s = +1` for even `k`, `-1` for
/// odd `k`. With one cluster per class the means are mutually `sqrt(2)` apart
/// and the classes are linearly separable (in practice) when
/// `cluster_spread < sqrt(2) / 4`. Two clusters per class put each class on
/// both ends of its own axis, which no linear classifier separates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub cluster_spread: f64,
    pub clusters_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { num_classes: 4, dim: 16, samples_per_class: 200, cluster_spread: 0.3, clusters_per_class: 1, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(config!("num_classes must be at least 2"));
        }
        if self.dim == 0 || self.samples_per_class == 0 || self.clusters_per_class == 0 {
            return Err(config!("dim, samples_per_class and clusters_per_class must be positive"));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(config!("cluster_spread must be a non-negative number"));
        }
        let axes = self.num_classes * self.clusters_per_class.div_ceil(2);
        if axes > self.dim {
            return Err(config!(
                "{} classes with {} clusters each need {axes} axes, dim is {}",
                self.num_classes,
                self.clusters_per_class,
                self.dim
            ));
        }
        Ok(())
    }

    pub fn cluster_mean(&self, class: usize, cluster: usize) -> Vec<f64> {
        let mut mean = alloc::vec![0.0; self.dim];
        let axis = class + (cluster / 2) * self.num_classes;
        mean[axis] = if cluster.is_multiple_of(2) { 1.0 } else { -1.0 };
        mean
    }
}

/// Samples are ordered class-major; sample `s` of a class belongs to cluster
/// `s % clusters_per_class`. Coordinates are `mean + spread * N(0, 1)` drawn
/// in row order from `SplitMix64::new(seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let n = spec.num_classes * spec.samples_per_class;
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..spec.num_classes {
        for s in 0..spec.samples_per_class {
            let mean = spec.cluster_mean(class, s % spec.clusters_per_class);
            for m in mean {
                data.push(m + spec.cluster_spread * rng.normal());
            }
            labels.push(class);
        }
    }
    Dataset::new(Matrix::from_vec(n, spec.dim, data)?, labels, spec.num_classes)
}
