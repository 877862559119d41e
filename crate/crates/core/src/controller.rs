//! Factorized categorical architecture policy trained with REINFORCE.

use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log};

use crate::error::{numerical, usage, Result};
use crate::netcore::argmax;
use crate::rng::SplitMix64;
use crate::searchspace::{ArchEncoding, CellSpec};

pub const DEFAULT_ENTROPY_WEIGHT: f64 = 0.005;
pub const DEFAULT_BASELINE_DECAY: f64 = 0.9;

/// Exponential moving average of past rewards.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Baseline {
    pub decay: f64,
    /// `None` until the first reward arrives.
    pub value: Option<f64>,
}

/// One independent categorical per edge.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyParams {
    pub logits: Vec<Vec<f64>>,
    pub entropy_weight: f64,
    pub baseline: Option<Baseline>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub arch: ArchEncoding,
    pub log_prob: f64,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| exp(z - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = log(logits.iter().map(|z| exp(z - max)).sum::<f64>()) + max;
    logits.iter().map(|z| z - lse).collect()
}

fn categorical_entropy(logits: &[f64]) -> f64 {
    let p = softmax(logits);
    let logp = log_softmax(logits);
    -p.iter().zip(&logp).map(|(a, b)| if *a > 0.0 { a * b } else { 0.0 }).sum::<f64>()
}

impl PolicyParams {
    /// All-zero logits, i.e. the uniform distribution over the search space.
    pub fn uniform(spec: &CellSpec, entropy_weight: f64, baseline_decay: Option<f64>) -> Self {
        Self {
            logits: vec![vec![0.0; spec.num_ops()]; spec.num_edges()],
            entropy_weight,
            baseline: baseline_decay.map(|decay| Baseline { decay, value: None }),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.logits.len()
    }

    pub fn probabilities(&self, edge: usize) -> Vec<f64> {
        softmax(&self.logits[edge])
    }

    fn check(&self, arch: &ArchEncoding) -> Result<()> {
        let choices = arch.choices();
        if choices.len() != self.logits.len() {
            return Err(usage!("architecture has {} edges, policy has {}", choices.len(), self.logits.len()));
        }
        for (e, (&c, row)) in choices.iter().zip(&self.logits).enumerate() {
            if c >= row.len() {
                return Err(usage!("edge {e} chooses op {c}, policy has {} ops", row.len()));
            }
        }
        Ok(())
    }

    pub fn sample_arch(&self, rng: &mut SplitMix64) -> Sample {
        let mut choices = Vec::with_capacity(self.logits.len());
        let mut log_prob = 0.0;
        for row in &self.logits {
            let p = softmax(row);
            let c = rng.categorical(&p);
            log_prob += log_softmax(row)[c];
            choices.push(c);
        }
        Sample { arch: ArchEncoding::from_choices_unchecked(choices), log_prob }
    }

    pub fn log_prob(&self, arch: &ArchEncoding) -> Result<f64> {
        self.check(arch)?;
        Ok(arch.choices().iter().zip(&self.logits).map(|(&c, row)| log_softmax(row)[c]).sum())
    }

    /// Sum of the per-edge categorical entropies.
    pub fn entropy(&self) -> f64 {
        self.logits.iter().map(|row| categorical_entropy(row)).sum()
    }

    /// `d log pi(arch) / d logits`: `onehot(choice) - p` on each edge.
    pub fn grad_log_prob(&self, arch: &ArchEncoding) -> Result<Vec<Vec<f64>>> {
        self.check(arch)?;
        Ok(arch
            .choices()
            .iter()
            .zip(&self.logits)
            .map(|(&c, row)| {
                let mut g: Vec<f64> = softmax(row).into_iter().map(|p| -p).collect();
                g[c] += 1.0;
                g
            })
            .collect())
    }

    /// `d H / d logits`: `-p_k (log p_k + H_edge)` on each edge.
    pub fn grad_entropy(&self) -> Vec<Vec<f64>> {
        self.logits
            .iter()
            .map(|row| {
                let p = softmax(row);
                let logp = log_softmax(row);
                let h = categorical_entropy(row);
                p.iter().zip(&logp).map(|(pk, lk)| -pk * (lk + h)).collect()
            })
            .collect()
    }

    /// One REINFORCE step with an entropy bonus:
    /// `theta += eta (reward - baseline) grad log pi + eta w_H grad H`.
    /// The baseline (when enabled) starts at the first reward and is updated
    /// after the step.
    pub fn reinforce_update(&mut self, arch: &ArchEncoding, reward: f64, eta: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(numerical!("reward {reward} is not finite"));
        }
        let grad_lp = self.grad_log_prob(arch)?;
        let grad_h = self.grad_entropy();
        let baseline_value = match &mut self.baseline {
            Some(b) => *b.value.get_or_insert(reward),
            None => 0.0,
        };
        let advantage = reward - baseline_value;
        for ((row, glp), gh) in self.logits.iter_mut().zip(&grad_lp).zip(&grad_h) {
            for ((z, a), b) in row.iter_mut().zip(glp).zip(gh) {
                *z += eta * advantage * a + eta * self.entropy_weight * b;
            }
        }
        if let Some(b) = &mut self.baseline {
            b.value = Some(b.decay * baseline_value + (1.0 - b.decay) * reward);
        }
        Ok(())
    }

    /// Per-edge argmax, lowest index on ties.
    pub fn argmax_arch(&self) -> ArchEncoding {
        ArchEncoding::from_choices_unchecked(self.logits.iter().map(|row| argmax(row)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_edge(logits: Vec<f64>) -> PolicyParams {
        PolicyParams { logits: vec![logits], entropy_weight: 0.0, baseline: None }
    }

    fn one_edge_spec(ops: usize) -> CellSpec {
        use crate::searchspace::OpKind::*;
        CellSpec {
            num_intermediate: 1,
            ops_per_edge: [LinearShared, ReluLinearShared, Identity, Zero][..ops].to_vec(),
            ..CellSpec::default()
        }
    }

    #[test]
    fn near_deterministic_sampling() {
        let policy = one_edge(vec![10.0, -10.0]);
        let mut rng = SplitMix64::new(1);
        let hits = (0..10_000).filter(|_| policy.sample_arch(&mut rng).arch.choices()[0] == 0).count();
        assert!(hits as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let spec = CellSpec::default();
        let policy = PolicyParams::uniform(&spec, 0.0, None);
        let mut rng = SplitMix64::new(2);
        let mut counts = vec![[0usize; 4]; 6];
        for _ in 0..10_000 {
            let s = policy.sample_arch(&mut rng);
            for (e, &c) in s.arch.choices().iter().enumerate() {
                counts[e][c] += 1;
            }
        }
        for row in &counts {
            for &c in row {
                assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.02);
            }
        }
    }

    #[test]
    fn sampled_log_prob_is_consistent() {
        let policy = PolicyParams { logits: vec![vec![0.3, -1.0, 2.0, 0.0]; 6], entropy_weight: 0.0, baseline: None };
        let mut rng = SplitMix64::new(3);
        for _ in 0..20 {
            let s = policy.sample_arch(&mut rng);
            assert!((s.log_prob - policy.log_prob(&s.arch).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_log_prob_and_entropy() {
        let spec = CellSpec::default();
        let policy = PolicyParams::uniform(&spec, 0.0, None);
        let arch = ArchEncoding::new(&spec, vec![1, 3, 0, 2, 2, 1]).unwrap();
        assert!((policy.log_prob(&arch).unwrap() + 6.0 * log(4.0)).abs() < 1e-12);
        assert!((policy.entropy() - 6.0 * log(4.0)).abs() < 1e-12);
        let sharp = one_edge(vec![30.0, 0.0, 0.0, 0.0]);
        assert!(sharp.entropy() < 0.01);
    }

    #[test]
    fn log_prob_rejects_mismatch() {
        let policy = one_edge(vec![0.0, 0.0]);
        let spec = CellSpec::default();
        let arch = ArchEncoding::uniform_op(&spec, 0).unwrap();
        assert!(matches!(policy.log_prob(&arch), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn zero_advantage_leaves_logits() {
        let spec = one_edge_spec(3);
        let mut policy = PolicyParams {
            logits: vec![vec![0.2, -0.4, 1.0]],
            entropy_weight: 0.0,
            baseline: Some(Baseline { decay: 0.9, value: Some(0.7) }),
        };
        let before = policy.logits.clone();
        let arch = ArchEncoding::new(&spec, vec![1]).unwrap();
        policy.reinforce_update(&arch, 0.7, 0.5).unwrap();
        assert_eq!(policy.logits, before);
    }

    #[test]
    fn positive_advantage_raises_probability() {
        let spec = one_edge_spec(4);
        let mut policy = one_edge(vec![0.5, -0.2, 0.1, 0.0]);
        let arch = ArchEncoding::new(&spec, vec![2]).unwrap();
        let before = policy.probabilities(0)[2];
        policy.reinforce_update(&arch, 1.0, 0.1).unwrap();
        assert!(policy.probabilities(0)[2] > before);
    }

    #[test]
    fn baseline_starts_at_first_reward() {
        let spec = one_edge_spec(2);
        let mut policy = PolicyParams::uniform(&spec, 0.0, Some(0.9));
        let arch = ArchEncoding::new(&spec, vec![0]).unwrap();
        policy.reinforce_update(&arch, 0.4, 0.1).unwrap();
        assert_eq!(policy.logits, vec![vec![0.0, 0.0]]);
        assert_eq!(policy.baseline.as_ref().unwrap().value, Some(0.4));
        policy.reinforce_update(&arch, 1.4, 0.1).unwrap();
        let b = policy.baseline.as_ref().unwrap().value.unwrap();
        assert!((b - 0.5).abs() < 1e-12);
        assert!(policy.logits[0][0] > 0.0);
    }

    #[test]
    fn non_finite_reward_rejected() {
        let spec = one_edge_spec(2);
        let mut policy = PolicyParams::uniform(&spec, 0.0, None);
        let arch = ArchEncoding::new(&spec, vec![0]).unwrap();
        assert!(matches!(policy.reinforce_update(&arch, f64::NAN, 0.1), Err(crate::Error::Numerical(_))));
    }

    #[test]
    fn argmax_rules() {
        let spec = CellSpec::default();
        let uniform = PolicyParams::uniform(&spec, 0.0, None);
        assert_eq!(uniform.argmax_arch(), ArchEncoding::uniform_op(&spec, 0).unwrap());

        let target = [3usize, 1, 0, 2, 2, 1];
        let mut policy = PolicyParams::uniform(&spec, 0.0, None);
        for (row, &t) in policy.logits.iter_mut().zip(&target) {
            row[t] = 1.0;
        }
        assert_eq!(policy.argmax_arch().choices(), &target);
        for row in policy.logits.iter_mut() {
            row.iter_mut().for_each(|z| *z += 7.5);
        }
        assert_eq!(policy.argmax_arch().choices(), &target);
    }
}
