use std::fs;
use std::path::{Path, PathBuf};

use refscreen::eval::{self, EvalReport, LabeledScores, ThresholdRule};
use refscreen::iforest::DEFAULT_GRID;
use refscreen::med::{self, ThresholdModel};
use refscreen::nn::{self, EmbeddingNet, NetSpec, Pooling, SgdConfig};
use refscreen::pipeline::{self, Dataset, ScreeningConfig};
use refscreen::siamese::{self, ReferenceSet, TrainConfig, DEFAULT_EPOCHS, DEFAULT_REFERENCE_SIZE};
use refscreen::synth::{self, GenConfig};
use refscreen::volume::{self, DEFAULT_SIZE};
use refscreen::{ForestConfig, Label};

use crate::config::{sidecar, Resolver};
use crate::{exit, BaselineArgs, CliError, EvalArgs, GenArgs, ScoreArgs, StabilityArgs, TrainArgs};

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn usage(e: refscreen::Error) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn gen(a: GenArgs, config: Option<&Path>) -> Result<u8, CliError> {
    let mut r = Resolver::new(config, "gen")?;
    let out: PathBuf = r.require("out", a.out)?;
    let defaults = GenConfig::default();
    let size = r.get("size", a.size, DEFAULT_SIZE)?;
    let cfg = GenConfig {
        seed: r.get("seed", a.seed, defaults.seed)?,
        n_good: r.get("good", a.good, defaults.n_good)?,
        n_bad_per_kind: r.get("bad_per_kind", a.bad_per_kind, defaults.n_bad_per_kind)?,
        slices: r.get("slices", a.slices, defaults.slices)?,
        height: size,
        width: size,
    };
    cfg.validate().map_err(usage)?;
    let manifest = synth::gen_corpus(&cfg, &out)?;
    r.write_echo(&out.join("config.toml"))?;
    let bad = manifest.entries.iter().filter(|e| e.label == Label::Bad).count();
    println!(
        "wrote {} volumes ({} bad) and {}",
        manifest.len(),
        bad,
        out.join("manifest.csv").display()
    );
    Ok(exit::OK)
}

pub fn train(a: TrainArgs, config: Option<&Path>) -> Result<u8, CliError> {
    let mut r = Resolver::new(config, "train")?;
    let manifest_path: PathBuf = r.require("manifest", a.manifest)?;
    let model_path: PathBuf = r.require("model", a.model)?;
    let ref_ids_path: Option<PathBuf> = r.get_opt("ref_ids", a.ref_ids)?;
    let size = r.get("size", a.size, DEFAULT_SIZE)?;
    let seed = r.get("seed", a.seed, 0u64)?;
    let cfg = TrainConfig {
        epochs: r.get("epochs", a.epochs, DEFAULT_EPOCHS)?,
        sgd: SgdConfig {
            learning_rate: r.get("lr", a.lr, SgdConfig::default().learning_rate)?,
            momentum: r.get("momentum", a.momentum, 0.0)?,
        },
        margin: r.get("margin", a.margin, 1.0)?,
        pooling: r.get("pooling", a.pooling, Pooling::MeanSlices)?,
        shuffle_seed: seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(usage)?;
    let spec = NetSpec::with_input(size, size);
    spec.validate().map_err(usage)?;

    let manifest = volume::load_manifest(&manifest_path)?;
    let ref_ids = match ref_ids_path {
        Some(path) => volume::load_id_list(&path)?,
        None => {
            let k = r.get("ref_size", a.ref_size, DEFAULT_REFERENCE_SIZE)?;
            let ref_seed = r.get("ref_seed", a.ref_seed, 0u64)?;
            pipeline::sample_references(&manifest, k, ref_seed)?
        }
    };
    let mut members = Vec::with_capacity(ref_ids.len());
    for id in &ref_ids {
        let entry = manifest
            .entries
            .iter()
            .find(|e| &e.id == id)
            .ok_or_else(|| CliError::Data(format!("reference id '{id}' not in manifest")))?;
        if entry.label != Label::Good {
            return Err(CliError::Data(format!("reference '{id}' is labeled {}, not good", entry.label)));
        }
        let v = volume::load_volume(&manifest.resolve(entry))?;
        members.push(volume::preprocess(&v, size, size)?.with_id(id.clone()));
    }
    let refs = ReferenceSet::new(members)?;

    let init = EmbeddingNet::init(spec, seed)?;
    let (net, report) = siamese::train(&refs, &init, &cfg)?;
    nn::save_net(&net, &model_path)?;
    volume::write_id_list(&ref_ids, &sidecar(&model_path, "refs"))?;
    write_text(&sidecar(&model_path, "report.txt"), &report.render())?;
    r.write_echo(&sidecar(&model_path, "config.toml"))?;
    println!(
        "trained on {} references for {} epochs: mean intra-reference distance {:.6} -> {:.6}",
        refs.len(),
        cfg.epochs,
        report.initial_mean_distance,
        report.final_mean_distance
    );
    Ok(exit::OK)
}

pub fn score(a: ScoreArgs, config: Option<&Path>) -> Result<u8, CliError> {
    let mut r = Resolver::new(config, "score")?;
    let model_path: PathBuf = r.require("model", a.model)?;
    let refs_path = r.get("refs", a.refs, sidecar(&model_path, "refs"))?;
    let manifest_path: PathBuf = r.require("manifest", a.manifest)?;
    let pooling = r.get("pooling", a.pooling, Pooling::MeanSlices)?;
    let out = r.get("out", a.out, PathBuf::from("scores.csv"))?;

    let net = nn::load_net(&model_path)?;
    let ref_ids = volume::load_id_list(&refs_path)?;
    let manifest = volume::load_manifest(&manifest_path)?;
    let model = ThresholdModel::from_manifest(&net, &manifest, &ref_ids, pooling)?;
    let outcome = med::score_dataset(&net, &manifest, &model, pooling);
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    med::write_scores(&outcome.records, &out)?;
    r.write_echo(&sidecar(&out, "config.toml"))?;
    let flagged = outcome.records.iter().filter(|s| s.flagged).count();
    println!(
        "scored {} items, threshold {:.6}, {} flagged",
        outcome.records.len(),
        model.threshold,
        flagged
    );
    if outcome.is_partial() {
        for (id, e) in &outcome.failures {
            eprintln!("error: {id}: {e}");
        }
        return Ok(exit::PARTIAL);
    }
    Ok(exit::OK)
}

/// Flag rule written to the baseline CSV; evaluation uses its own threshold rule.
const IFOREST_FLAG_SCORE: f64 = 0.5;

pub fn baseline(a: BaselineArgs, config: Option<&Path>) -> Result<u8, CliError> {
    let mut r = Resolver::new(config, "baseline")?;
    let manifest_path: PathBuf = r.require("manifest", a.manifest)?;
    let defaults = ForestConfig::default();
    let cfg = ForestConfig {
        trees: r.get("trees", a.trees, defaults.trees)?,
        subsample: r.get("subsample", a.subsample, defaults.subsample)?,
        seed: r.get("seed", a.seed, defaults.seed)?,
    };
    let grid = r.get("grid", a.grid, DEFAULT_GRID)?;
    let size = r.get("size", a.size, DEFAULT_SIZE)?;
    let out = r.get("out", a.out, PathBuf::from("baseline.csv"))?;
    if size == 0 {
        return Err(CliError::Usage("--size must be positive".into()));
    }

    let manifest = volume::load_manifest(&manifest_path)?;
    let dataset = Dataset::load(manifest, size, size)?;
    let scores = pipeline::baseline_scores(&dataset, &cfg, grid).map_err(|e| match e {
        refscreen::Error::InvalidArgument(m) => CliError::Usage(m),
        other => other.into(),
    })?;
    let records = med::rank_scores(scores, IFOREST_FLAG_SCORE);
    med::write_scores(&records, &out)?;
    r.write_echo(&sidecar(&out, "config.toml"))?;
    println!("scored {} items with {} trees", records.len(), cfg.trees);
    Ok(exit::OK)
}

fn parse_rule(text: &str) -> Result<ThresholdRule, CliError> {
    match text {
        "flagged" => Ok(ThresholdRule::Flagged),
        "youden" => Ok(ThresholdRule::Youden),
        other => other
            .parse::<f64>()
            .map(ThresholdRule::Fixed)
            .map_err(|_| CliError::Usage(format!("--threshold must be flagged, youden or a number, got '{other}'"))),
    }
}

pub fn eval(a: EvalArgs, config: Option<&Path>) -> Result<u8, CliError> {
    let mut r = Resolver::new(config, "eval")?;
    let scores_path: PathBuf = r.require("scores", a.scores)?;
    let manifest_path: PathBuf = r.require("manifest", a.manifest)?;
    let exclude_path: Option<PathBuf> = r.get_opt("exclude", a.exclude)?;
    let method = r.get("method", a.method, "siamese_med".to_string())?;
    let rule_text = r.get("threshold", a.threshold, "flagged".to_string())?;
    let out = r.get("out", a.out, PathBuf::from("report.txt"))?;
    let roc: Option<PathBuf> = r.get_opt("roc", a.roc)?;
    let rule = parse_rule(&rule_text)?;

    let records = med::load_scores(&scores_path)?;
    let manifest = volume::load_manifest(&manifest_path)?;
    let exclude = match &exclude_path {
        Some(p) => volume::load_id_list(p)?,
        None => Vec::new(),
    };
    let (labeled, flags): (LabeledScores, Vec<bool>) =
        pipeline::held_out(&manifest, &exclude, &records, |s| s.med, |s| s.flagged)?;
    let mut report = EvalReport::evaluate(method.clone(), &labeled, rule, Some(&flags))?;
    report.config = r
        .echo()
        .iter()
        .filter(|(k, _)| k.as_str() != "command")
        .map(|(k, v)| (k.clone(), v.to_string()))
        .collect();
    report.config.push(("n_items".into(), labeled.len().to_string()));
    write_text(&out, &report.render())?;
    if let Some(path) = &roc {
        let curve = eval::roc_points(&labeled)?;
        write_text(path, &eval::render_roc_svg(&curve, &method))?;
    }
    r.write_echo(&sidecar(&out, "config.toml"))?;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.1}%", 100.0 * x));
    println!(
        "{method}: AUC {:.4}, sensitivity {}, specificity {}",
        report.auc,
        pct(report.sensitivity()),
        pct(report.specificity())
    );
    Ok(exit::OK)
}

pub fn stability(a: StabilityArgs, config: Option<&Path>) -> Result<u8, CliError> {
    let mut r = Resolver::new(config, "stability")?;
    let manifest_path: PathBuf = r.require("manifest", a.manifest)?;
    let runs = r.get("runs", a.runs, 5usize)?;
    let seed = r.get("seed", a.seed, 0u64)?;
    let size = r.get("size", a.size, DEFAULT_SIZE)?;
    let out = r.get("out", a.out, PathBuf::from("stability.txt"))?;
    let cfg = ScreeningConfig {
        reference_size: r.get("ref_size", a.ref_size, DEFAULT_REFERENCE_SIZE)?,
        net: NetSpec::with_input(size, size),
        train: TrainConfig {
            epochs: r.get("epochs", a.epochs, DEFAULT_EPOCHS)?,
            sgd: SgdConfig {
                learning_rate: r.get("lr", a.lr, SgdConfig::default().learning_rate)?,
                momentum: 0.0,
            },
            pooling: r.get("pooling", a.pooling, Pooling::MeanSlices)?,
            ..TrainConfig::default()
        },
    };
    cfg.net.validate().map_err(usage)?;
    cfg.train.validate().map_err(usage)?;
    if runs < 2 {
        return Err(CliError::Usage("--runs must be at least 2".into()));
    }

    let manifest = volume::load_manifest(&manifest_path)?;
    let dataset = Dataset::load(manifest, size, size)?;
    let summary = eval::ref_sensitivity_experiment(&dataset, &cfg, runs, seed)?;
    write_text(&out, &summary.render())?;
    r.write_echo(&sidecar(&out, "config.toml"))?;
    println!(
        "{} runs: AUC min {:.4}, max {:.4}, spread {:.4}",
        summary.runs.len(),
        summary.min_auc,
        summary.max_auc,
        summary.spread()
    );
    Ok(exit::OK)
}
