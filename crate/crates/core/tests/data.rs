use proptest::prelude::*;
use refscreen::med::{self, ThresholdModel};
use refscreen::nn::{EmbeddingNet, NetSpec, Pooling};
use refscreen::synth::{self, CorruptionKind, GenConfig};
use refscreen::volume::{self, DatasetEntry, DatasetManifest, Label, Volume};

fn read_tree(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn default_corpus_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = GenConfig { slices: 2, height: 16, width: 16, ..GenConfig::default() };
    let manifest = synth::gen_corpus(&cfg, tmp.path()).unwrap();
    assert_eq!(manifest.len(), 240);
    assert_eq!(manifest.entries.iter().filter(|e| e.label == Label::Bad).count(), 20);
    for kind in CorruptionKind::ALL {
        assert_eq!(manifest.entries.iter().filter(|e| e.corruption_kind == Some(kind)).count(), 5);
    }
    let reloaded = volume::load_manifest(&tmp.path().join("manifest.csv")).unwrap();
    assert_eq!(reloaded.entries, manifest.entries);
}

#[test]
fn corpus_generation_is_byte_identical() {
    let cfg = GenConfig { seed: 42, n_good: 6, n_bad_per_kind: 1, slices: 2, height: 16, width: 16 };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth::gen_corpus(&cfg, a.path()).unwrap();
    synth::gen_corpus(&cfg, b.path()).unwrap();
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
}

#[test]
fn empty_corpus_has_header_only_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = GenConfig { n_good: 0, n_bad_per_kind: 0, ..GenConfig::default() };
    assert!(synth::gen_corpus(&cfg, tmp.path()).unwrap().is_empty());
    let text = std::fs::read_to_string(tmp.path().join("manifest.csv")).unwrap();
    assert_eq!(text, "id,path,label,corruption_kind\n");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_quantizes_within_half_a_level(
        data in prop::collection::vec(0.0f64..=1.0, 2 * 5 * 7),
    ) {
        let tmp = tempfile::tempdir().unwrap();
        let v = Volume::new("q", 2, 5, 7, data).unwrap();
        volume::save_volume(&v, tmp.path()).unwrap();
        let back = volume::load_volume(tmp.path()).unwrap();
        prop_assert_eq!(back.shape(), v.shape());
        for (a, b) in v.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn preprocess_output_is_in_unit_range(
        h in 1usize..12, w in 1usize..12, th in 1usize..20, tw in 1usize..20, seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = refscreen::seed::rng(seed);
        let data = (0..2 * h * w).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let out = volume::preprocess(&Volume::new("p", 2, h, w, data).unwrap(), th, tw).unwrap();
        prop_assert_eq!(out.shape(), (2, th, tw));
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

/// Writes `vols` as a manifest-backed dataset with every item labelled `label`.
fn write_dataset(root: &std::path::Path, vols: &[(Volume, Label)]) -> DatasetManifest {
    let mut manifest = DatasetManifest::new(root);
    for (v, label) in vols {
        volume::save_volume(v, &root.join(v.id())).unwrap();
        manifest.entries.push(DatasetEntry {
            id: v.id().to_string(),
            path: v.id().to_string(),
            label: *label,
            corruption_kind: None,
        });
    }
    volume::write_manifest(&manifest, &root.join("manifest.csv")).unwrap();
    manifest
}

#[test]
fn scoring_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let refs: Vec<(Volume, Label)> = (0..4)
        .map(|i| (synth::gen_good(i, 2, 16, 16).unwrap().with_id(format!("ref{i}")), Label::Good))
        .collect();
    let net = EmbeddingNet::init(NetSpec::with_input(16, 16), 1).unwrap();
    let ids: Vec<String> = refs.iter().map(|(v, _)| v.id().to_string()).collect();

    // Only the references: nothing is flagged.
    let manifest = write_dataset(tmp.path(), &refs);
    let model = ThresholdModel::from_manifest(&net, &manifest, &ids, Pooling::MeanSlices).unwrap();
    let out = med::score_dataset(&net, &manifest, &model, Pooling::MeanSlices);
    assert!(!out.is_partial());
    assert_eq!(out.records.len(), 4);
    assert!(out.records.iter().all(|r| !r.flagged));

    // A blank item joins and ranks first.
    let blank = synth::corrupt(&refs[0].0, CorruptionKind::BlankNoise, 5).unwrap().with_id("blank");
    let mut all = refs.clone();
    all.push((blank, Label::Bad));
    let manifest = write_dataset(tmp.path(), &all);
    let out = med::score_dataset(&net, &manifest, &model, Pooling::MeanSlices);
    assert_eq!(out.records[0].id, "blank");
    assert_eq!(out.records[0].rank, 1);
    assert!(out.records[0].flagged);

    // Scores survive a write/read cycle bit-exactly.
    let path = tmp.path().join("scores.csv");
    med::write_scores(&out.records, &path).unwrap();
    assert_eq!(med::load_scores(&path).unwrap(), out.records);

    // An empty manifest scores nothing; a missing volume is a partial failure.
    let empty = DatasetManifest::new(tmp.path());
    assert!(med::score_dataset(&net, &empty, &model, Pooling::MeanSlices).records.is_empty());
    let mut broken = manifest.clone();
    broken.entries[1].path = "missing".into();
    let out = med::score_dataset(&net, &broken, &model, Pooling::MeanSlices);
    assert!(out.is_partial());
    assert_eq!(out.records.len(), 4);
}
