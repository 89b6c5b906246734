//! End-to-end screening over an in-memory dataset: sample references, train,
//! embed, score, and split out the held-out items for evaluation.

use std::collections::HashSet;

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{ConfusionCounts, LabeledScores};
use crate::iforest::{self, ForestConfig, IsolationForest};
use crate::med::{self, ScoreRecord, ThresholdModel};
use crate::nn::{EmbeddingNet, NetSpec};
use crate::seed::{self, hash64, stream};
use crate::siamese::{self, ReferenceSet, TrainConfig, TrainReport, DEFAULT_REFERENCE_SIZE};
use crate::volume::{self, DatasetManifest, Label, Volume};

/// A manifest with every volume loaded and preprocessed to a common size.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: DatasetManifest,
    volumes: Vec<Volume>,
}

impl Dataset {
    pub fn load(manifest: DatasetManifest, height: usize, width: usize) -> Result<Self> {
        let volumes = manifest
            .entries
            .par_iter()
            .map(|entry| {
                let v = volume::load_volume(&manifest.resolve(entry))?;
                Ok(volume::preprocess(&v, height, width)?.with_id(entry.id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, volumes })
    }

    pub fn from_parts(manifest: DatasetManifest, volumes: Vec<Volume>) -> Result<Self> {
        if manifest.len() != volumes.len() {
            return Err(Error::dims(manifest.len(), volumes.len()));
        }
        Ok(Self { manifest, volumes })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn volumes(&self) -> &[Volume] {
        &self.volumes
    }

    fn index_of(&self, id: &str) -> Result<usize> {
        self.manifest
            .position(id)
            .ok_or_else(|| Error::InvalidArgument(format!("id '{id}' not in manifest")))
    }

    /// Reference set from manifest ids; every member must be labeled good.
    pub fn reference_set(&self, ids: &[String]) -> Result<ReferenceSet> {
        let members = ids
            .iter()
            .map(|id| {
                let i = self.index_of(id)?;
                if self.manifest.entries[i].label != Label::Good {
                    return Err(Error::InvalidArgument(format!(
                        "reference '{id}' is labeled {}, not good",
                        self.manifest.entries[i].label
                    )));
                }
                Ok(self.volumes[i].clone())
            })
            .collect::<Result<Vec<_>>>()?;
        ReferenceSet::new(members)
    }
}

/// Draws `k` distinct good entries, returned in manifest order.
pub fn sample_references(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<String>> {
    let good = manifest.good_indices();
    if good.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} good entries cannot supply a reference set of {k}",
            good.len()
        )));
    }
    let mut picked: Vec<usize> = index::sample(&mut seed::rng(seed), good.len(), k)
        .into_iter()
        .map(|i| good[i])
        .collect();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| manifest.entries[i].id.clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningConfig {
    pub reference_size: usize,
    pub net: NetSpec,
    pub train: TrainConfig,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            reference_size: DEFAULT_REFERENCE_SIZE,
            net: NetSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScreeningRun {
    pub reference_ids: Vec<String>,
    pub net: EmbeddingNet,
    pub report: TrainReport,
    pub model: ThresholdModel,
    /// Every manifest entry, ranked.
    pub records: Vec<ScoreRecord>,
    /// Labeled entries outside the reference set.
    pub test: LabeledScores,
    pub test_flags: Vec<bool>,
    pub counts: ConfusionCounts,
}

impl ScreeningRun {
    pub fn auc(&self) -> Result<f64> {
        crate::eval::auc(&self.test)
    }

    pub fn flagged_references(&self) -> usize {
        let refs: HashSet<&str> = self.reference_ids.iter().map(String::as_str).collect();
        self.records.iter().filter(|r| r.flagged && refs.contains(r.id.as_str())).count()
    }
}

/// Embeds every volume with a trained net, in parallel, in manifest order.
pub fn embed_all(net: &EmbeddingNet, dataset: &Dataset, pooling: crate::nn::Pooling) -> Result<Vec<(String, Vec<f64>)>> {
    dataset
        .volumes
        .par_iter()
        .map(|v| Ok((v.id().to_string(), net.embed_volume(v, pooling)?.into_data())))
        .collect()
}

/// Trains on `reference_ids` from a net initialised with `init_seed`, then scores everything.
pub fn screen(dataset: &Dataset, reference_ids: &[String], init_seed: u64, cfg: &ScreeningConfig) -> Result<ScreeningRun> {
    let refs = dataset.reference_set(reference_ids)?;
    let init = EmbeddingNet::init(cfg.net, init_seed)?;
    let (net, report) = siamese::train(&refs, &init, &cfg.train)?;
    score_trained(dataset, reference_ids, net, report, cfg)
}

pub(crate) fn score_trained(
    dataset: &Dataset,
    reference_ids: &[String],
    net: EmbeddingNet,
    report: TrainReport,
    cfg: &ScreeningConfig,
) -> Result<ScreeningRun> {
    let pooling = cfg.train.pooling;
    let embeddings = embed_all(&net, dataset, pooling)?;
    let ref_embeddings = reference_ids
        .iter()
        .map(|id| Ok(embeddings[dataset.index_of(id)?].1.clone()))
        .collect::<Result<Vec<_>>>()?;
    let model = ThresholdModel::new(reference_ids.to_vec(), ref_embeddings)?;
    let records = med::score_embeddings(&embeddings, &model)?;

    let (test, test_flags) = held_out(dataset.manifest(), reference_ids, &records, |r| r.med, |r| r.flagged)?;
    let counts = ConfusionCounts::from_predictions(test_flags.iter().copied(), &test.is_bad);
    Ok(ScreeningRun {
        reference_ids: reference_ids.to_vec(),
        net,
        report,
        model,
        records,
        test,
        test_flags,
        counts,
    })
}

/// Labeled, non-reference entries in manifest order, with their scores and flags.
pub fn held_out(
    manifest: &DatasetManifest,
    exclude: &[String],
    records: &[ScoreRecord],
    score: impl Fn(&ScoreRecord) -> f64,
    flag: impl Fn(&ScoreRecord) -> bool,
) -> Result<(LabeledScores, Vec<bool>)> {
    let exclude: HashSet<&str> = exclude.iter().map(String::as_str).collect();
    let by_id: std::collections::HashMap<&str, &ScoreRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let (mut ids, mut scores, mut is_bad, mut flags) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for entry in &manifest.entries {
        if exclude.contains(entry.id.as_str()) || entry.label == Label::Unknown {
            continue;
        }
        let Some(record) = by_id.get(entry.id.as_str()) else {
            continue;
        };
        ids.push(entry.id.clone());
        scores.push(score(record));
        is_bad.push(entry.label == Label::Bad);
        flags.push(flag(record));
    }
    Ok((LabeledScores::new(ids, scores, is_bad)?, flags))
}

/// Full screening with all randomness derived from one run seed.
pub fn screen_with_seed(dataset: &Dataset, cfg: &ScreeningConfig, run_seed: u64) -> Result<ScreeningRun> {
    let reference_ids = sample_references(
        dataset.manifest(),
        cfg.reference_size,
        hash64(run_seed, stream::REFERENCE_SAMPLE),
    )?;
    let mut cfg = cfg.clone();
    cfg.train.shuffle_seed = hash64(run_seed, stream::PAIR_SHUFFLE);
    screen(dataset, &reference_ids, hash64(run_seed, stream::NET_INIT), &cfg)
}

/// Isolation Forest scores for every volume (fit on all of them), in manifest order.
pub fn baseline_scores(dataset: &Dataset, cfg: &ForestConfig, grid: usize) -> Result<Vec<(String, f64)>> {
    let features = dataset
        .volumes
        .par_iter()
        .map(|v| iforest::extract_features(v, grid))
        .collect::<Result<Vec<_>>>()?;
    let forest = IsolationForest::fit(&features, cfg)?;
    let scores = forest.score_all(&features)?;
    Ok(dataset.volumes.iter().map(|v| v.id().to_string()).zip(scores).collect())
}
