//! Siamese training on the reference set.
//!
//! Both branches of a pair are evaluated by the same [`EmbeddingNet`]; their
//! parameter gradients are summed and applied as a single SGD step per pair.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::med::{euclidean, mean_pairwise_distance};
use crate::nn::{EmbeddingNet, ParamGrads, Pooling, Sgd, SgdConfig, Tensor};
use crate::seed::{self, hash64};
use crate::volume::Volume;

pub const DEFAULT_REFERENCE_SIZE: usize = 20;
pub const DEFAULT_EPOCHS: usize = 6;

/// The human-approved volumes that define normal.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    members: Vec<Volume>,
}

impl ReferenceSet {
    pub fn new(members: Vec<Volume>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a reference set needs at least 2 members, got {}",
                members.len()
            )));
        }
        let mut seen = HashSet::new();
        for m in &members {
            if !seen.insert(m.id()) {
                return Err(Error::InvalidArgument(format!("duplicate reference id '{}'", m.id())));
            }
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Volume] {
        &self.members
    }

    pub fn ids(&self) -> Vec<String> {
        self.members.iter().map(|m| m.id().to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    Similar,
    Dissimilar,
}

/// Indices into the reference set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairSample {
    pub a: usize,
    pub b: usize,
    pub label: PairLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub margin: f64,
    pub pooling: Pooling,
    pub shuffle_seed: u64,
    pub collapse_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            sgd: SgdConfig::default(),
            margin: 1.0,
            pooling: Pooling::MeanSlices,
            shuffle_seed: 0,
            collapse_tolerance: 1e-6,
        }
    }
}

impl TrainConfig {
    /// Pairs are always presented one at a time.
    pub const BATCH_SIZE: usize = 1;

    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if !(self.margin > 0.0) {
            return Err(Error::InvalidArgument(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.collapse_tolerance > 0.0) {
            return Err(Error::InvalidArgument("collapse tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub initial_mean_distance: f64,
    pub final_mean_distance: f64,
    pub collapsed: bool,
    pub steps: usize,
}

impl TrainReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "epochs {}", self.epoch_losses.len());
        let _ = writeln!(out, "steps {}", self.steps);
        for (i, loss) in self.epoch_losses.iter().enumerate() {
            let _ = writeln!(out, "epoch_mean_loss {} {loss:.16e}", i + 1);
        }
        let _ = writeln!(out, "initial_mean_intra_reference_ed {:.16e}", self.initial_mean_distance);
        let _ = writeln!(out, "final_mean_intra_reference_ed {:.16e}", self.final_mean_distance);
        let _ = writeln!(out, "collapsed {}", self.collapsed);
        out
    }
}

/// All unordered pairs of `0..k`, shuffled by `shuffle_seed`, labeled similar.
pub fn enumerate_pairs(k: usize, shuffle_seed: u64) -> Result<Vec<PairSample>> {
    if k < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 references to pair, got {k}")));
    }
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            pairs.push(PairSample {
                a,
                b,
                label: PairLabel::Similar,
            });
        }
    }
    pairs.shuffle(&mut seed::rng(shuffle_seed));
    Ok(pairs)
}

/// `y·d² + (1−y)·max(0, m−d)²` with `d = ‖a−b‖`, and its gradients in `a` and `b`.
pub fn contrastive_loss(a: &Tensor, b: &Tensor, label: PairLabel, margin: f64) -> Result<(f64, Tensor, Tensor)> {
    let d = euclidean(a.data(), b.data())?;
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let (loss, coeff) = match label {
        PairLabel::Similar => (d * d, 2.0),
        PairLabel::Dissimilar => {
            let hinge = (margin - d).max(0.0);
            let coeff = if d > 0.0 { -2.0 * hinge / d } else { 0.0 };
            (hinge * hinge, coeff)
        }
    };
    let d_a: Vec<f64> = diff.iter().map(|x| coeff * x).collect();
    let d_b: Vec<f64> = d_a.iter().map(|x| -x).collect();
    Ok((loss, Tensor::vector(d_a), Tensor::vector(d_b)))
}

/// True iff the mean pairwise distance of the embeddings is below `tol`.
pub fn detect_collapse(embeddings: &[Tensor], tol: f64) -> Result<bool> {
    if embeddings.len() < 2 {
        return Err(Error::InsufficientData("collapse check needs at least 2 embeddings".into()));
    }
    let vectors: Vec<&[f64]> = embeddings.iter().map(Tensor::data).collect();
    Ok(mean_pairwise_distance(&vectors)? < tol)
}

/// Loss and summed parameter gradients for one pair through the shared net.
pub fn pair_gradients(
    net: &EmbeddingNet,
    a: &Volume,
    b: &Volume,
    label: PairLabel,
    cfg: &TrainConfig,
) -> Result<(f64, ParamGrads)> {
    let trace_a = net.embed_volume_for_training(a, cfg.pooling)?;
    let trace_b = net.embed_volume_for_training(b, cfg.pooling)?;
    let (loss, d_a, d_b) = contrastive_loss(&trace_a.embedding, &trace_b.embedding, label, cfg.margin)?;
    let mut grads = net.backward_volume(&trace_a, &d_a)?;
    grads.add_assign(&net.backward_volume(&trace_b, &d_b)?);
    Ok((loss, grads))
}

fn reference_embeddings(net: &EmbeddingNet, refs: &ReferenceSet, pooling: Pooling) -> Result<Vec<Tensor>> {
    refs.members().iter().map(|v| net.embed_volume(v, pooling)).collect()
}

fn mean_distance(embeddings: &[Tensor]) -> Result<f64> {
    let vectors: Vec<&[f64]> = embeddings.iter().map(Tensor::data).collect();
    mean_pairwise_distance(&vectors)
}

/// Runs the training loop and reports, without treating collapse as an error.
pub fn fit(refs: &ReferenceSet, net: &EmbeddingNet, cfg: &TrainConfig) -> Result<(EmbeddingNet, TrainReport)> {
    cfg.validate()?;
    let mut net = net.clone();
    let mut opt = Sgd::new(cfg.sgd)?;
    let initial_mean_distance = mean_distance(&reference_embeddings(&net, refs, cfg.pooling)?)?;

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let pairs = enumerate_pairs(refs.len(), hash64(cfg.shuffle_seed, epoch as u64))?;
        let mut total = 0.0;
        for (i, pair) in pairs.iter().enumerate() {
            let members = refs.members();
            let (loss, grads) = pair_gradients(&net, &members[pair.a], &members[pair.b], pair.label, cfg)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {} step {} (pair {} / {})",
                    epoch + 1,
                    i + 1,
                    members[pair.a].id(),
                    members[pair.b].id()
                )));
            }
            opt.step(&mut net, &grads).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("{msg} at epoch {} step {}", epoch + 1, i + 1)),
                other => other,
            })?;
            total += loss;
            steps += 1;
        }
        epoch_losses.push(total / pairs.len() as f64);
    }

    let final_embeddings = reference_embeddings(&net, refs, cfg.pooling)?;
    let final_mean_distance = mean_distance(&final_embeddings)?;
    let collapsed = detect_collapse(&final_embeddings, cfg.collapse_tolerance)?;
    Ok((
        net,
        TrainReport {
            epoch_losses,
            initial_mean_distance,
            final_mean_distance,
            collapsed,
            steps,
        },
    ))
}

/// Trains the shared embedder; fails if the reference embeddings collapsed.
pub fn train(refs: &ReferenceSet, net: &EmbeddingNet, cfg: &TrainConfig) -> Result<(EmbeddingNet, TrainReport)> {
    let (net, report) = fit(refs, net, cfg)?;
    if report.collapsed {
        return Err(Error::Collapse {
            mean_distance: report.final_mean_distance,
            tolerance: cfg.collapse_tolerance,
        });
    }
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec())
    }

    #[test]
    fn pair_counts_and_order() {
        assert_eq!(enumerate_pairs(20, 0).unwrap().len(), 190);
        let two = enumerate_pairs(2, 5).unwrap();
        assert_eq!(two, vec![PairSample { a: 0, b: 1, label: PairLabel::Similar }]);
        assert!(enumerate_pairs(1, 0).is_err());

        let a = enumerate_pairs(10, 1).unwrap();
        assert_eq!(a, enumerate_pairs(10, 1).unwrap());
        let b = enumerate_pairs(10, 2).unwrap();
        assert_ne!(a, b);
        let set = |p: &[PairSample]| p.iter().map(|s| (s.a, s.b)).collect::<HashSet<_>>();
        assert_eq!(set(&a), set(&b));
        assert!(a.iter().all(|p| p.a < p.b && p.label == PairLabel::Similar));
    }

    #[test]
    fn contrastive_formula() {
        let (loss, da, db) = contrastive_loss(&v(&[1.0, 2.0]), &v(&[1.0, 2.0]), PairLabel::Similar, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(da.data().iter().chain(db.data()).all(|&g| g == 0.0));

        let (loss, da, db) = contrastive_loss(&v(&[2.0, 0.0]), &v(&[0.0, 0.0]), PairLabel::Similar, 1.0).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(da.data(), &[4.0, 0.0]);
        assert_eq!(db.data(), &[-4.0, 0.0]);

        let (loss, ..) = contrastive_loss(&v(&[0.5]), &v(&[0.0]), PairLabel::Dissimilar, 1.0).unwrap();
        assert_eq!(loss, 0.25);
        let (loss, da, _) = contrastive_loss(&v(&[1.5]), &v(&[0.0]), PairLabel::Dissimilar, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(da.data(), &[0.0]);
        let (loss, da, _) = contrastive_loss(&v(&[0.0]), &v(&[0.0]), PairLabel::Dissimilar, 1.0).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(da.data(), &[0.0]);
    }

    #[test]
    fn collapse_detection() {
        let same = vec![v(&[1.0, 1.0]); 3];
        assert!(detect_collapse(&same, 1e-6).unwrap());
        assert!(!detect_collapse(&[v(&[0.0]), v(&[1.0])], 1e-6).unwrap());
        assert!(detect_collapse(&[v(&[0.0])], 1e-6).is_err());
    }

    #[test]
    fn reference_set_validation() {
        let a = Volume::filled("a", 1, 4, 4, 0.1).unwrap();
        assert!(ReferenceSet::new(vec![a.clone()]).is_err());
        assert!(ReferenceSet::new(vec![a.clone(), a.clone()]).is_err());
        let b = a.clone().with_id("b");
        assert_eq!(ReferenceSet::new(vec![a, b]).unwrap().len(), 2);
    }
}
