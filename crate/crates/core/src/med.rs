//! Mean-Euclidean-distance scoring against the reference embeddings.
//!
//! An item's MED is the average distance from its embedding to every
//! reference embedding (excluding itself when the item is a reference). Items
//! whose MED exceeds the largest distance between any two references are
//! flagged. A reference's own MED is a mean of intra-reference distances, each
//! at most that maximum, so references are never flagged.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{EmbeddingNet, Pooling};
use crate::volume::{self, DatasetManifest};

pub const SCORES_HEADER: [&str; 4] = ["id", "med", "flagged", "rank"];

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Mean distance from `query` to `refs`, skipping index `exclude`.
pub fn med(query: &[f64], refs: &[&[f64]], exclude: Option<usize>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, r) in refs.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        sum += euclidean(query, r)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InsufficientData("no references left to average over".into()));
    }
    Ok(sum / n as f64)
}

fn pairwise(refs: &[&[f64]]) -> Result<Vec<f64>> {
    if refs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 reference embeddings, got {}",
            refs.len()
        )));
    }
    let mut out = Vec::with_capacity(refs.len() * (refs.len() - 1) / 2);
    for i in 0..refs.len() {
        for j in i + 1..refs.len() {
            out.push(euclidean(refs[i], refs[j])?);
        }
    }
    Ok(out)
}

/// Largest distance between any two references.
pub fn compute_threshold(refs: &[&[f64]]) -> Result<f64> {
    Ok(pairwise(refs)?.into_iter().fold(0.0, f64::max))
}

pub fn mean_pairwise_distance(refs: &[&[f64]]) -> Result<f64> {
    let d = pairwise(refs)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdModel {
    pub ids: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
    pub threshold: f64,
}

impl ThresholdModel {
    pub fn new(ids: Vec<String>, embeddings: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != embeddings.len() {
            return Err(Error::dims(format!("{} reference embeddings", ids.len()), embeddings.len()));
        }
        if let Some(bad) = embeddings.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("reference embedding component {bad}")));
        }
        let threshold = compute_threshold(&Self::views(&embeddings))?;
        Ok(Self {
            ids,
            embeddings,
            threshold,
        })
    }

    fn views(embeddings: &[Vec<f64>]) -> Vec<&[f64]> {
        embeddings.iter().map(Vec::as_slice).collect()
    }

    /// Embeds the reference volumes of `manifest` named by `ids`.
    pub fn from_manifest(net: &EmbeddingNet, manifest: &DatasetManifest, ids: &[String], pooling: Pooling) -> Result<Self> {
        let embeddings = ids
            .iter()
            .map(|id| {
                let entry = manifest
                    .entries
                    .iter()
                    .find(|e| &e.id == id)
                    .ok_or_else(|| Error::InvalidArgument(format!("reference id '{id}' not in manifest")))?;
                embed_path(net, &manifest.resolve(entry), pooling)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ids.to_vec(), embeddings)
    }

    pub fn is_degenerate(&self) -> bool {
        self.threshold == 0.0
    }

    /// MED of an item, excluding itself if it is one of the references.
    pub fn med(&self, id: &str, embedding: &[f64]) -> Result<f64> {
        let exclude = self.ids.iter().position(|r| r == id);
        med(embedding, &Self::views(&self.embeddings), exclude)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub med: f64,
    pub flagged: bool,
    pub rank: usize,
}

/// Orders by score descending (ties by id ascending) and assigns ranks from 1.
pub fn rank_scores(scores: Vec<(String, f64)>, threshold: f64) -> Vec<ScoreRecord> {
    let mut scores = scores;
    scores.sort_by(|(ia, a), (ib, b)| b.partial_cmp(a).unwrap_or(Ordering::Equal).then_with(|| ia.cmp(ib)));
    scores
        .into_iter()
        .enumerate()
        .map(|(i, (id, med))| ScoreRecord {
            flagged: med > threshold,
            id,
            med,
            rank: i + 1,
        })
        .collect()
}

/// Scores already-computed embeddings, in parallel, gathered in input order.
pub fn score_embeddings(items: &[(String, Vec<f64>)], model: &ThresholdModel) -> Result<Vec<ScoreRecord>> {
    let scores = items
        .par_iter()
        .map(|(id, e)| Ok((id.clone(), model.med(id, e)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_scores(scores, model.threshold))
}

fn embed_path(net: &EmbeddingNet, path: &Path, pooling: Pooling) -> Result<Vec<f64>> {
    let v = volume::load_volume(path)?;
    let v = volume::preprocess(&v, net.spec.input_h, net.spec.input_w)?;
    Ok(net.embed_volume(&v, pooling)?.into_data())
}

#[derive(Debug)]
pub struct ScoreOutcome {
    pub records: Vec<ScoreRecord>,
    pub failures: Vec<(String, Error)>,
    pub warnings: Vec<String>,
}

impl ScoreOutcome {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Loads, preprocesses, embeds and scores every manifest entry.
///
/// Items that fail to load are reported in `failures`; the rest are ranked.
pub fn score_dataset(net: &EmbeddingNet, manifest: &DatasetManifest, model: &ThresholdModel, pooling: Pooling) -> ScoreOutcome {
    let results: Vec<(String, Result<f64>)> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let med = embed_path(net, &manifest.resolve(entry), pooling).and_then(|e| model.med(&entry.id, &e));
            (entry.id.clone(), med)
        })
        .collect();
    let mut scores = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(m) => scores.push((id, m)),
            Err(e) => failures.push((id, e)),
        }
    }
    let mut warnings = Vec::new();
    if model.is_degenerate() {
        warnings.push(
            "threshold is 0: reference embeddings coincide (see the trainer's collapse diagnostic); \
             every item not identical to the references is flagged"
                .to_string(),
        );
    }
    ScoreOutcome {
        records: rank_scores(scores, model.threshold),
        failures,
        warnings,
    }
}

pub fn render_scores(records: &[ScoreRecord]) -> String {
    let mut out = SCORES_HEADER.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{:.16e},{},{}\n", r.id, r.med, r.flagged, r.rank));
    }
    out
}

pub fn write_scores(records: &[ScoreRecord], path: &Path) -> Result<()> {
    fs::write(path, render_scores(records)).map_err(|e| Error::io(path, e))
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if headers.iter().ne(SCORES_HEADER) {
        return Err(Error::format(path, format!("header must be '{}'", SCORES_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let row = i + 2;
        let field_err = |what: &str| Error::format(path, format!("row {row}: invalid {what}"));
        out.push(ScoreRecord {
            id: record[0].to_string(),
            med: record[1].parse().map_err(|_| field_err("med"))?,
            flagged: record[2].parse().map_err(|_| field_err("flagged"))?,
            rank: record[3].parse().map_err(|_| field_err("rank"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert!(euclidean(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn med_examples() {
        let refs: [&[f64]; 2] = [&[0.0, 0.0], &[2.0, 0.0]];
        assert_eq!(med(&[1.0, 0.0], &refs, None).unwrap(), 1.0);
        assert_eq!(med(&[6.0, 8.0], &[&[0.0, 0.0]], None).unwrap(), 10.0);
        assert_eq!(med(&[0.0, 0.0], &refs, Some(0)).unwrap(), 2.0);
        assert!(med(&[0.0, 0.0], &[&[0.0, 0.0]], Some(0)).is_err());
    }

    #[test]
    fn threshold_examples() {
        let t = compute_threshold(&[&[0.0, 0.0], &[2.0, 0.0], &[0.0, 2.0]]).unwrap();
        assert!((t - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(compute_threshold(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap(), 0.0);
        assert!(compute_threshold(&[&[1.0]]).is_err());
    }

    #[test]
    fn ranks_break_ties_by_id() {
        let scores = vec![("b".to_string(), 1.0), ("a".to_string(), 1.0), ("c".to_string(), 2.0)];
        let r = rank_scores(scores, 1.0);
        let order: Vec<_> = r.iter().map(|s| (s.id.as_str(), s.rank, s.flagged)).collect();
        assert_eq!(order, vec![("c", 1, true), ("a", 2, false), ("b", 3, false)]);
    }

    #[test]
    fn scores_csv_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("scores.csv");
        let records = rank_scores(vec![("x".into(), 0.1 + 0.2), ("y".into(), 1.0 / 3.0)], 0.31);
        write_scores(&records, &path).unwrap();
        assert_eq!(load_scores(&path).unwrap(), records);
    }

    fn embedding_set() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..8, 1usize..6).prop_flat_map(|(k, d)| prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), k))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn references_are_never_flagged(refs in embedding_set()) {
            let ids: Vec<String> = (0..refs.len()).map(|i| format!("r{i}")).collect();
            let model = ThresholdModel::new(ids.clone(), refs.clone()).unwrap();
            let items: Vec<(String, Vec<f64>)> = ids.into_iter().zip(refs).collect();
            let records = score_embeddings(&items, &model).unwrap();
            prop_assert!(records.iter().all(|r| !r.flagged && r.med <= model.threshold));
        }

        #[test]
        fn translation_and_scale(refs in embedding_set(), shift in -5.0f64..5.0, alpha in 0.1f64..10.0) {
            let d = refs[0].len();
            let query: Vec<f64> = (0..d).map(|i| i as f64 * 0.7 - 1.0).collect();
            let views = |s: &[Vec<f64>]| s.iter().map(|v| v.to_vec()).collect::<Vec<_>>();
            let base_refs = views(&refs);
            let ref_views: Vec<&[f64]> = base_refs.iter().map(Vec::as_slice).collect();
            let m0 = med(&query, &ref_views, None).unwrap();
            let t0 = compute_threshold(&ref_views).unwrap();

            let moved: Vec<Vec<f64>> = refs.iter().map(|v| v.iter().map(|x| x + shift).collect()).collect();
            let moved_views: Vec<&[f64]> = moved.iter().map(Vec::as_slice).collect();
            let q_moved: Vec<f64> = query.iter().map(|x| x + shift).collect();
            prop_assert!((med(&q_moved, &moved_views, None).unwrap() - m0).abs() < 1e-9);
            prop_assert!((compute_threshold(&moved_views).unwrap() - t0).abs() < 1e-9);

            let scaled: Vec<Vec<f64>> = refs.iter().map(|v| v.iter().map(|x| x * alpha).collect()).collect();
            let scaled_views: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
            let q_scaled: Vec<f64> = query.iter().map(|x| x * alpha).collect();
            prop_assert!((med(&q_scaled, &scaled_views, None).unwrap() - alpha * m0).abs() < 1e-9 * alpha.max(1.0) * (1.0 + m0));
            prop_assert!((compute_threshold(&scaled_views).unwrap() - alpha * t0).abs() < 1e-9 * alpha.max(1.0) * (1.0 + t0));
        }

        #[test]
        fn duplicate_reference_keeps_threshold(refs in embedding_set(), pick in 0usize..8) {
            let views: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
            let t = compute_threshold(&views).unwrap();
            let mut more = views.clone();
            more.push(views[pick % views.len()]);
            prop_assert_eq!(compute_threshold(&more).unwrap(), t);
        }

        #[test]
        fn ranking_ignores_input_order(scores in prop::collection::vec(0u8..4, 1..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let items: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, &s)| (format!("id{i:02}"), f64::from(s))).collect();
            let mut shuffled = items.clone();
            shuffled.shuffle(&mut crate::seed::rng(seed));
            prop_assert_eq!(rank_scores(items, 1.5), rank_scores(shuffled, 1.5));
        }
    }
}
