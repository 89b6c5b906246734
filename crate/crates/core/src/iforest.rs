//! Isolation Forest baseline over mean-pooled pixels of the mid slice.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::{self, hash64};
use crate::volume::Volume;

pub const EULER_GAMMA: f64 = 0.577_215_664_9;
pub const DEFAULT_GRID: usize = 16;

/// Mean-pools the mid slice (`⌊S/2⌋`) onto a `grid × grid` lattice, row-major.
pub fn extract_features(v: &Volume, grid: usize) -> Result<Vec<f64>> {
    if grid == 0 {
        return Err(Error::InvalidArgument("feature grid must be at least 1".into()));
    }
    let (h, w) = (v.height(), v.width());
    let slice = v.slice(v.depth() / 2);
    let bounds = |i: usize, n: usize| {
        let lo = i * n / grid;
        let hi = ((i + 1) * n / grid).max(lo + 1).min(n);
        (lo.min(n - 1), hi)
    };
    let mut out = Vec::with_capacity(grid * grid);
    for gy in 0..grid {
        let (y0, y1) = bounds(gy, h);
        for gx in 0..grid {
            let (x0, x1) = bounds(gx, w);
            let mut sum = 0.0;
            for y in y0..y1 {
                sum += slice[y * w + x0..y * w + x1].iter().sum::<f64>();
            }
            out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    Ok(out)
}

/// Average path length of an unsuccessful BST search over `n` points.
pub fn avg_path_c(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let n = n as f64;
    2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
}

#[derive(Debug, Clone, PartialEq)]
pub enum ITree {
    Internal {
        split_dim: usize,
        split_value: f64,
        left: Box<ITree>,
        right: Box<ITree>,
    },
    External {
        size: usize,
        depth: usize,
    },
}

pub fn build_tree(points: &[&[f64]], height_limit: usize, rng: &mut seed::Rng) -> ITree {
    build_node(points, 0, height_limit, rng)
}

fn build_node(points: &[&[f64]], depth: usize, height_limit: usize, rng: &mut seed::Rng) -> ITree {
    let external = ITree::External {
        size: points.len(),
        depth,
    };
    if depth >= height_limit || points.len() <= 1 {
        return external;
    }
    let dims = points[0].len();
    let ranges: Vec<(usize, f64, f64)> = (0..dims)
        .filter_map(|d| {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[d]), hi.max(p[d])));
            (lo < hi).then_some((d, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return external;
    }
    let (split_dim, lo, hi) = ranges[rng.gen_range(0..ranges.len())];
    // Uniform in the open interval (lo, hi).
    let split_value = loop {
        let s = rng.gen_range(lo..hi);
        if s > lo {
            break s;
        }
    };
    let (left, right): (Vec<&[f64]>, Vec<&[f64]>) = points.iter().partition(|p| p[split_dim] < split_value);
    ITree::Internal {
        split_dim,
        split_value,
        left: Box::new(build_node(&left, depth + 1, height_limit, rng)),
        right: Box::new(build_node(&right, depth + 1, height_limit, rng)),
    }
}

/// Depth of the external node reached by `x` plus `c(size)` of that node.
pub fn path_length(x: &[f64], tree: &ITree) -> f64 {
    let mut node = tree;
    let mut depth = 0usize;
    loop {
        match node {
            ITree::Internal {
                split_dim,
                split_value,
                left,
                right,
            } => {
                node = if x[*split_dim] < *split_value { left } else { right };
                depth += 1;
            }
            ITree::External { size, .. } => return depth as f64 + avg_path_c(*size),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub trees: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            subsample: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    pub trees: Vec<ITree>,
    pub subsample_size: usize,
    pub height_limit: usize,
    pub feature_dim: usize,
}

fn ceil_log2(n: usize) -> usize {
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

impl IsolationForest {
    pub fn fit(features: &[Vec<f64>], cfg: &ForestConfig) -> Result<Self> {
        if cfg.trees == 0 || cfg.subsample < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 1 tree and a subsample of at least 2, got {} / {}",
                cfg.trees, cfg.subsample
            )));
        }
        if features.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "isolation forest needs at least 2 points, got {}",
                features.len()
            )));
        }
        let feature_dim = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != feature_dim) {
            return Err(Error::dims(feature_dim, bad.len()));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector".into()));
        }
        let psi = cfg.subsample.min(features.len());
        let height_limit = ceil_log2(psi);
        let trees = (0..cfg.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(hash64(cfg.seed, t as u64));
                let sample: Vec<&[f64]> = index::sample(&mut rng, features.len(), psi)
                    .into_iter()
                    .map(|i| features[i].as_slice())
                    .collect();
                build_tree(&sample, height_limit, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            subsample_size: psi,
            height_limit,
            feature_dim,
        })
    }

    pub fn expected_path_length(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_dim {
            return Err(Error::dims(self.feature_dim, x.len()));
        }
        Ok(self.trees.iter().map(|t| path_length(x, t)).sum::<f64>() / self.trees.len() as f64)
    }

    /// `2^(−E[h(x)] / c(ψ))`; higher is more anomalous.
    pub fn anomaly_score(&self, x: &[f64]) -> Result<f64> {
        Ok(score_from_path(self.expected_path_length(x)?, self.subsample_size))
    }

    pub fn score_all(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.anomaly_score(x)).collect()
    }
}

pub fn score_from_path(expected_path: f64, subsample_size: usize) -> f64 {
    2f64.powf(-expected_path / avg_path_c(subsample_size))
}
