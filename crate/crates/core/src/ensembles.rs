//! Merging ensemble members into one mean/variance prediction, and the
//! bookkeeping used to build ensembles (cosine schedule with warm restarts,
//! snapshot selection, per-member data subsets).

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{FlowField, HypothesisSet, UncertaintyField};

/// Mean flow and per-component variance of a merged ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedPrediction {
    pub mean: FlowField,
    pub var_u: Vec<f64>,
    pub var_v: Vec<f64>,
}

impl MergedPrediction {
    /// `var_u + var_v` per pixel, the default ranking scalar for merged
    /// predictions.
    pub fn total_variance(&self) -> Vec<f64> {
        self.var_u.iter().zip(&self.var_v).map(|(a, b)| a + b).collect()
    }

    /// Laplace scales with the same variance, `b = sqrt(var / 2)`. Zero
    /// variances end up at the scale floor.
    pub fn to_uncertainty(&self) -> Result<UncertaintyField> {
        let (w, h) = self.mean.dims();
        let conv = |v: &[f64]| v.iter().map(|x| (x / 2.0).sqrt()).collect::<Vec<_>>();
        UncertaintyField::floored(w, h, conv(&self.var_u), conv(&self.var_v))
    }
}

fn mean_of<'a>(fields: impl Iterator<Item = &'a [f64]>, n: usize, m: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    for f in fields {
        for (a, x) in acc.iter_mut().zip(f) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= m as f64);
    acc
}

/// Empirical mean and biased (`1/M`) variance of the member flows.
/// Member uncertainties, if any, are ignored.
pub fn merge_empirical(hyps: &HypothesisSet) -> Result<MergedPrediction> {
    if hyps.is_empty() {
        return Err(Error::EmptyHypotheses);
    }
    let (w, h) = hyps.dims();
    let n = w * h;
    let m = hyps.len();
    let mu_u = mean_of(hyps.flows().map(|f| f.u()), n, m);
    let mu_v = mean_of(hyps.flows().map(|f| f.v()), n, m);
    let mut var_u = vec![0.0; n];
    let mut var_v = vec![0.0; n];
    for f in hyps.flows() {
        for i in 0..n {
            var_u[i] += (f.u()[i] - mu_u[i]).powi(2);
            var_v[i] += (f.v()[i] - mu_v[i]).powi(2);
        }
    }
    var_u.iter_mut().chain(var_v.iter_mut()).for_each(|x| *x /= m as f64);
    Ok(MergedPrediction {
        mean: FlowField::new(w, h, mu_u, mu_v)?,
        var_u,
        var_v,
    })
}

/// Mean and variance of the uniform mixture of the members' Laplace
/// distributions, by the law of total variance:
/// `var = (1/M) sum_i ((mu_i - mu)^2 + 2 b_i^2)` per component.
pub fn merge_predictive(hyps: &HypothesisSet) -> Result<MergedPrediction> {
    if hyps.is_empty() {
        return Err(Error::EmptyHypotheses);
    }
    let uncs = hyps.uncertainties()?;
    let mut merged = merge_empirical(hyps)?;
    let m = hyps.len() as f64;
    for unc in uncs {
        for i in 0..merged.var_u.len() {
            merged.var_u[i] += unc.variance_u(i) / m;
            merged.var_v[i] += unc.variance_v(i) / m;
        }
    }
    Ok(merged)
}

/// Variance `2 b^2` of a Laplace distribution with scale `b`.
pub fn variance_of_laplace(b: f64) -> Result<f64> {
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::InvalidScale { index: 0, value: b });
    }
    Ok(2.0 * b * b)
}

/// Cosine annealing with warm restarts.
///
/// Cycle `c` (0-based) lasts `cycle_length * t_mult^c` iterations. The
/// first `pre_cycles` cycles are discarded; a snapshot is taken at the end of
/// each of the following `num_snapshots` cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdrSchedule {
    pub base_lr: f64,
    pub cycle_length: u64,
    #[serde(default = "one")]
    pub t_mult: f64,
    #[serde(default)]
    pub pre_cycles: usize,
    pub num_snapshots: usize,
}

fn one() -> f64 {
    1.0
}

impl SgdrSchedule {
    /// 75k-iteration cycles, equal cycle lengths, 8 discarded pre-cycles and
    /// 8 snapshots, starting at a learning rate of 2e-4.
    pub fn flownet_defaults() -> Self {
        Self {
            base_lr: 2e-4,
            cycle_length: 75_000,
            t_mult: 1.0,
            pre_cycles: 8,
            num_snapshots: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycle_length == 0 {
            return Err(Error::InvalidArgument("cycle_length must be >= 1".into()));
        }
        if !(self.t_mult >= 1.0 && self.t_mult.is_finite()) {
            return Err(Error::InvalidArgument("t_mult must be >= 1".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::InvalidArgument("base_lr must be positive".into()));
        }
        Ok(())
    }

    fn cycle_len(&self, cycle: usize) -> u64 {
        if self.t_mult == 1.0 {
            self.cycle_length
        } else {
            (self.cycle_length as f64 * self.t_mult.powi(cycle as i32)).round() as u64
        }
    }

    /// Position inside the current cycle and that cycle's length.
    fn locate(&self, iteration: u64) -> (u64, u64) {
        if self.t_mult == 1.0 {
            return (iteration % self.cycle_length, self.cycle_length);
        }
        let mut start = 0u64;
        let mut cycle = 0usize;
        loop {
            let len = self.cycle_len(cycle).max(1);
            if iteration < start + len {
                return (iteration - start, len);
            }
            start += len;
            cycle += 1;
        }
    }

    pub fn lr(&self, iteration: u64) -> f64 {
        let (t, len) = self.locate(iteration);
        0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * t as f64 / len as f64).cos())
    }

    /// Iterations at which snapshots are taken: the ends of cycles
    /// `pre_cycles + 1 ..= pre_cycles + num_snapshots`.
    pub fn snapshot_iterations(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.num_snapshots);
        let mut end = 0u64;
        for cycle in 0..self.pre_cycles + self.num_snapshots {
            end += self.cycle_len(cycle).max(1);
            if cycle >= self.pre_cycles {
                out.push(end);
            }
        }
        out
    }

    /// Iteration count needed to reach the last snapshot.
    pub fn total_iterations(&self) -> u64 {
        self.snapshot_iterations().last().copied().unwrap_or(0)
    }
}

pub fn sgdr_lr(schedule: &SgdrSchedule, iteration: u64) -> f64 {
    schedule.lr(iteration)
}

pub fn snapshot_iterations(schedule: &SgdrSchedule) -> Vec<u64> {
    schedule.snapshot_iterations()
}

/// Per-member training subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapPlan {
    pub num_members: usize,
    #[serde(default = "default_fraction")]
    pub subset_fraction: f64,
    pub seeds: Vec<u64>,
    /// Draw indices with replacement (classic bootstrap) instead of
    /// distinct subsets.
    #[serde(default)]
    pub with_replacement: bool,
}

fn default_fraction() -> f64 {
    0.67
}

impl BootstrapPlan {
    /// `num_members` members, 67% subsets without replacement, member seeds
    /// derived from `seed`.
    pub fn new(num_members: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            num_members,
            subset_fraction: default_fraction(),
            seeds: (0..num_members).map(|_| rng.random()).collect(),
            with_replacement: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(Error::InvalidArgument("subset_fraction must lie in (0, 1]".into()));
        }
        if self.seeds.len() != self.num_members {
            return Err(Error::InvalidArgument(format!(
                "{} seeds for {} members",
                self.seeds.len(),
                self.num_members
            )));
        }
        Ok(())
    }

    pub fn subset_size(&self, dataset_size: usize) -> usize {
        ((self.subset_fraction * dataset_size as f64).round() as usize).clamp(1, dataset_size)
    }
}

/// Sorted index list for every member of `plan`.
pub fn bootstrap_indices(plan: &BootstrapPlan, dataset_size: usize) -> Result<Vec<Vec<usize>>> {
    plan.validate()?;
    if dataset_size == 0 {
        return Err(Error::InvalidArgument("dataset_size must be >= 1".into()));
    }
    let k = plan.subset_size(dataset_size);
    Ok(plan
        .seeds
        .iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = if plan.with_replacement {
                (0..k).map(|_| rng.random_range(0..dataset_size)).collect()
            } else {
                index::sample(&mut rng, dataset_size, k).into_vec()
            };
            idx.sort_unstable();
            idx
        })
        .collect())
}
