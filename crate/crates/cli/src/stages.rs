//! Pipeline stages. Each stage reads the run configuration plus earlier
//! stages' outputs under `output_dir` and writes its own subdirectory with a
//! `manifest.json` carrying the config hash and fingerprints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use vitatlas::agreement::{agreement_report, AgreementReport, AnnotationMatrix, ReportOptions};
use vitatlas::atlas::{
    build_atlas, capture_activations, export_atlas, import_atlas, synthesize_atlas, ActivationRecord, Atlas,
    AtlasConfig, MANIFEST_FILE,
};
use vitatlas::data::synthetic::generate;
use vitatlas::data::{dataset_fingerprint, load_image_folder, stratified_group_kfold, ClassMap, LabeledPatch, Normalization};
use vitatlas::featvis::{target_seed, visualize_all_classes, FeatvisConfig, VisualizationRecord};
use vitatlas::fingerprint::sha256_hex;
use vitatlas::model::{argmax, evaluate, train_linear_head, Checkpoint, Classifier, VisionTransformer};
use vitatlas::surrogate::{
    assign_labels, build_reference_set, majority_gt_labels, write_label_maps, BackboneExtractor, FeatureExtractor,
    LabelMap, RandomConvExtractor,
};

use crate::config::{DatasetConfig, ExtractorKind, RunConfig};
use crate::error::{CliError, Result};

pub const STAGE_MANIFEST: &str = "manifest.json";

/// Paths of every artifact under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.stage_dir(stage).join(STAGE_MANIFEST)
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.stage_dir("train").join("model.ckpt")
    }

    pub fn folds_csv(&self) -> PathBuf {
        self.stage_dir("train").join("folds.csv")
    }

    pub fn capture_file(&self, layer: usize) -> PathBuf {
        self.stage_dir("capture").join(format!("layer_{layer}.json"))
    }

    pub fn atlas_dir(&self) -> PathBuf {
        self.stage_dir("atlas")
    }

    pub fn label_maps(&self) -> PathBuf {
        self.stage_dir("metrics").join("labels.csv")
    }

    pub fn metric_annotations(&self) -> PathBuf {
        self.stage_dir("metrics").join("annotations.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }
}

/// Written by every stage except `atlas`, whose own manifest plays this role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub dataset_fingerprint: String,
    pub model_fingerprint: Option<String>,
    /// Relative path to SHA-256 of every file the stage wrote.
    pub files: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

/// A validated configuration with its output layout.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub layout: Layout,
    pub config_hash: String,
}

impl Context {
    pub fn new(config: RunConfig) -> Self {
        Self {
            layout: Layout::new(&config.output_dir),
            config_hash: config.hash(),
            config,
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(bytes))
}

fn pretty_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn write_manifest(layout: &Layout, manifest: &StageManifest) -> Result<()> {
    write_bytes(&layout.manifest(&manifest.stage), &pretty_json(manifest)?)?;
    Ok(())
}

pub fn read_manifest(layout: &Layout, stage: &'static str) -> Result<StageManifest> {
    let path = layout.manifest(stage);
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            stage,
            what: "stage manifest",
            path,
        });
    }
    let text = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(serde_json::from_slice(&text)?)
}

/// The class vocabulary without loading any images.
pub fn class_map(cfg: &RunConfig) -> Result<ClassMap> {
    match &cfg.dataset {
        DatasetConfig::Folder { classes, .. } => classes.class_map(),
        DatasetConfig::Synthetic { textures, .. } => {
            let codes: Vec<String> = textures.classes().into_iter().map(|c| c.code).collect();
            Ok(ClassMap::from_codes(&codes)?)
        }
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<(ClassMap, Vec<LabeledPatch>)> {
    match &cfg.dataset {
        DatasetConfig::Folder { path, classes } => {
            let map = classes.class_map()?;
            let (patches, report) = load_image_folder(path, &map)?;
            for w in &report.warnings {
                warn!("{w}");
            }
            Ok((map, patches))
        }
        DatasetConfig::Synthetic { .. } => {
            let (set, synth) = cfg.dataset.synthetic_config().expect("synthetic dataset");
            Ok(generate(&set.classes(), &synth)?)
        }
    }
}

/// Train and held-out patches of the configured fold split.
fn split(cfg: &RunConfig, patches: &[LabeledPatch], num_classes: usize) -> Result<(Vec<LabeledPatch>, Vec<LabeledPatch>)> {
    let (folds, _) = stratified_group_kfold(patches, num_classes, cfg.train.folds, cfg.train.fold_seed)?;
    let (test, train) = folds.split(cfg.train.test_fold);
    let pick = |idx: &[usize]| idx.iter().map(|&i| patches[i].clone()).collect::<Vec<_>>();
    Ok((pick(&train), pick(&test)))
}

fn load_model(ctx: &Context) -> Result<Classifier> {
    let path = ctx.layout.checkpoint();
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            stage: "train",
            what: "model checkpoint",
            path,
        });
    }
    Ok(Checkpoint::load(&path)?.classifier)
}

/// Loads the dataset and checks it against the one the model was trained on.
fn checked_dataset(ctx: &Context) -> Result<(ClassMap, Vec<LabeledPatch>, String)> {
    let trained = read_manifest(&ctx.layout, "train")?;
    let (map, patches) = load_dataset(&ctx.config)?;
    let fp = dataset_fingerprint(&patches);
    if fp != trained.dataset_fingerprint {
        return Err(CliError::Mismatch(format!(
            "dataset fingerprint {fp} differs from the trained model's {}",
            trained.dataset_fingerprint
        )));
    }
    Ok((map, patches, fp))
}

/// Trains the linear head on all folds but the held-out one and saves the
/// checkpoint and fold assignment.
pub fn train(ctx: &Context) -> Result<StageManifest> {
    let cfg = &ctx.config;
    let (map, patches) = load_dataset(cfg)?;
    let dataset_fp = dataset_fingerprint(&patches);
    let (folds, fold_report) = stratified_group_kfold(&patches, map.len(), cfg.train.folds, cfg.train.fold_seed)?;
    let mut folds_csv = Vec::new();
    folds.write_csv(&mut folds_csv, &patches, &map)?;

    let backbone = match &cfg.model.checkpoint {
        Some(path) => Checkpoint::load(path)?.classifier.backbone,
        None => VisionTransformer::random(cfg.model.spec(), cfg.model.seed)?,
    };
    let normalization = Normalization::imagenet();
    let (train_set, val_set) = split(cfg, &patches, map.len())?;
    info!("training head on {} patches, validating on {}", train_set.len(), val_set.len());
    let (head, log) = train_linear_head(
        &backbone,
        &normalization,
        &train_set,
        &val_set,
        map.len(),
        &cfg.train.train_config(),
    )?;
    let classifier = Classifier::new(backbone, head, normalization, map)?;
    let eval = evaluate(&classifier, &val_set)?;
    info!("held-out accuracy {:.4}", eval.accuracy);
    let model_fp = classifier.fingerprint();

    let checkpoint = Checkpoint {
        classifier,
        training_log: Some(log.clone()),
    };
    let mut ckpt_bytes = Vec::new();
    checkpoint.write(&mut ckpt_bytes)?;
    let mut files = BTreeMap::new();
    files.insert("model.ckpt".into(), write_bytes(&ctx.layout.checkpoint(), &ckpt_bytes)?);
    files.insert("folds.csv".into(), write_bytes(&ctx.layout.folds_csv(), &folds_csv)?);
    let manifest = StageManifest {
        stage: "train".into(),
        config_hash: ctx.config_hash.clone(),
        dataset_fingerprint: dataset_fp,
        model_fingerprint: Some(model_fp),
        files,
        summary: json!({
            "patches": patches.len(),
            "train_patches": train_set.len(),
            "validation_patches": val_set.len(),
            "validation": eval,
            "best_epoch": log.best_epoch,
            "epochs": log.epochs.len(),
            "fold_warnings": fold_report.warnings,
            "max_fold_proportion_gap": fold_report.max_proportion_gap,
        }),
    };
    write_manifest(&ctx.layout, &manifest)?;
    Ok(manifest)
}

/// Captures activation records at every configured layer.
pub fn capture(ctx: &Context) -> Result<StageManifest> {
    let model = load_model(ctx)?;
    let (_, patches, dataset_fp) = checked_dataset(ctx)?;
    let mut files = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for layer in ctx.config.capture_layers() {
        let records = capture_activations(&model, &patches, layer)?;
        let mut bytes = serde_json::to_vec(&records)?;
        bytes.push(b'\n');
        let path = ctx.layout.capture_file(layer);
        files.insert(
            path.file_name().expect("file name").to_string_lossy().into_owned(),
            write_bytes(&path, &bytes)?,
        );
        counts.insert(layer.to_string(), records.len());
    }
    let manifest = StageManifest {
        stage: "capture".into(),
        config_hash: ctx.config_hash.clone(),
        dataset_fingerprint: dataset_fp,
        model_fingerprint: Some(model.fingerprint()),
        files,
        summary: json!({ "records_per_layer": counts }),
    };
    write_manifest(&ctx.layout, &manifest)?;
    Ok(manifest)
}

fn read_records(ctx: &Context, layer: usize) -> Result<Vec<ActivationRecord>> {
    let path = ctx.layout.capture_file(layer);
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            stage: "capture",
            what: "activation records",
            path,
        });
    }
    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// One class visualization per class: `class_<id>_<code>.png` plus a JSON
/// sidecar.
pub fn cv(ctx: &Context) -> Result<StageManifest> {
    let model = load_model(ctx)?;
    let trained = read_manifest(&ctx.layout, "train")?;
    let fcfg = ctx.config.cv.featvis();
    let dir = ctx.layout.stage_dir("cv");
    let results = visualize_all_classes(&model, &fcfg)?;
    let mut files = BTreeMap::new();
    let mut classes = Vec::new();
    for (c, (image, trace)) in results.iter().enumerate() {
        let code = model.class_map.code(c).expect("class in map");
        let image = image.quantized_u8();
        let stem = format!("class_{c:02}_{code}");
        files.insert(format!("{stem}.png"), write_bytes(&dir.join(format!("{stem}.png")), &image.encode_png()?)?);
        let run_cfg = FeatvisConfig {
            seed: target_seed(fcfg.seed, c),
            ..fcfg
        };
        let mut record = VisualizationRecord::new("class", code, &run_cfg, trace);
        record.config_hash = ctx.config_hash.clone();
        files.insert(format!("{stem}.json"), write_bytes(&dir.join(format!("{stem}.json")), &pretty_json(&record)?)?);
        let predicted = argmax(&model.forward_image(&image)?.logits);
        classes.push(json!({
            "class": code,
            "predicted": model.class_map.code(predicted),
            "best_objective": trace.best(),
        }));
    }
    let manifest = StageManifest {
        stage: "cv".into(),
        config_hash: ctx.config_hash.clone(),
        dataset_fingerprint: trained.dataset_fingerprint,
        model_fingerprint: Some(model.fingerprint()),
        files,
        summary: json!({ "steps": fcfg.steps, "classes": classes }),
    };
    write_manifest(&ctx.layout, &manifest)?;
    Ok(manifest)
}

/// Builds, renders and exports the atlas at the configured layer.
pub fn atlas(ctx: &Context) -> Result<Atlas> {
    let cfg = &ctx.config;
    let model = load_model(ctx)?;
    let trained = read_manifest(&ctx.layout, "train")?;
    let records = read_records(ctx, cfg.atlas_layer())?;
    let codes: Vec<String> = model.class_map.codes().map(String::from).collect();
    let acfg = AtlasConfig {
        grid_size: cfg.atlas.grid_size,
        reducer: cfg.atlas.reducer(),
        seed: cfg.atlas.seed,
    };
    let mut atlas = build_atlas(&records, &codes, &acfg, &trained.dataset_fingerprint, &model.fingerprint())?;
    atlas.config_hash = ctx.config_hash.clone();
    let failures = synthesize_atlas(&mut atlas, &model, &cfg.atlas.synthesis.featvis())?;
    for ((i, j), e) in &failures {
        warn!("cell ({i}, {j}) not rendered: {e}");
    }
    let dir = ctx.layout.atlas_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    export_atlas(&atlas, &dir)?;
    info!(
        "atlas: {} of {} cells occupied, mean purity {:.3}",
        atlas.non_empty().count(),
        atlas.cells.len(),
        atlas.mean_purity()
    );
    Ok(atlas)
}

pub fn load_atlas(ctx: &Context) -> Result<Atlas> {
    let dir = ctx.layout.atlas_dir();
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(CliError::MissingArtifact {
            stage: "atlas",
            what: "atlas manifest",
            path: dir.join(MANIFEST_FILE),
        });
    }
    Ok(import_atlas(&dir)?)
}

/// Surrogate label maps for every configured method, plus the majority
/// ground-truth map, as `labels.csv` and as an annotation matrix.
pub fn metrics(ctx: &Context) -> Result<StageManifest> {
    let cfg = &ctx.config;
    let model = load_model(ctx)?;
    let atlas = load_atlas(ctx)?;
    let (map, patches, dataset_fp) = checked_dataset(ctx)?;
    let model_fp = model.fingerprint();
    if atlas.model_fingerprint != model_fp || atlas.dataset_fingerprint != dataset_fp {
        return Err(CliError::Mismatch(
            "atlas was built from a different model or dataset; rerun `vitatlas atlas`".into(),
        ));
    }
    let methods = cfg.metrics.parsed_methods()?;
    let (train_set, _) = split(cfg, &patches, map.len())?;
    let extractor: Box<dyn FeatureExtractor + '_> = match cfg.metrics.extractor {
        ExtractorKind::Backbone => Box::new(BackboneExtractor::new(&model.backbone, model.normalization)),
        ExtractorKind::RandomConv => Box::new(RandomConvExtractor::new(&cfg.metrics.random_conv_channels, cfg.metrics.seed)?),
    };
    let refs = if methods.iter().any(|m| m.needs_image()) {
        Some(build_reference_set(
            extractor.as_ref(),
            &train_set,
            map.len(),
            cfg.metrics.references_per_class,
            cfg.metrics.seed,
        )?)
    } else {
        None
    };
    let mut maps: Vec<LabelMap> = vec![majority_gt_labels(&atlas)];
    for m in methods {
        maps.push(assign_labels(&atlas, m, Some(extractor.as_ref()), refs.as_ref())?);
    }
    let gt = &maps[0];
    let summary: Vec<serde_json::Value> = maps[1..]
        .iter()
        .map(|m| {
            let labeled = m.entries.iter().filter(|e| e.label.is_some()).count();
            let agree = m
                .entries
                .iter()
                .filter(|e| e.label.is_some() && e.label == gt.label_at(e.i, e.j))
                .count();
            json!({ "method": m.method, "labeled": labeled, "matches_majority_gt": agree, "warnings": m.warnings })
        })
        .collect();

    let mut labels_csv = Vec::new();
    write_label_maps(&maps, &mut labels_csv)?;
    let refs_of: Vec<&LabelMap> = maps.iter().collect();
    let mut annotations_csv = Vec::new();
    AnnotationMatrix::from_label_maps(&refs_of)?.write_csv(&mut annotations_csv)?;
    let mut files = BTreeMap::new();
    files.insert("labels.csv".into(), write_bytes(&ctx.layout.label_maps(), &labels_csv)?);
    files.insert(
        "annotations.csv".into(),
        write_bytes(&ctx.layout.metric_annotations(), &annotations_csv)?,
    );
    let manifest = StageManifest {
        stage: "metrics".into(),
        config_hash: ctx.config_hash.clone(),
        dataset_fingerprint: dataset_fp,
        model_fingerprint: Some(model_fp),
        files,
        summary: json!({ "extractor": extractor.name(), "methods": summary }),
    };
    write_manifest(&ctx.layout, &manifest)?;
    Ok(manifest)
}

/// Reads and merges annotation CSVs into one matrix.
pub fn load_annotations(ctx: &Context) -> Result<AnnotationMatrix> {
    let vocabulary: Vec<String> = class_map(&ctx.config)?.codes().map(String::from).collect();
    let sources = if ctx.config.agreement.annotations.is_empty() {
        let path = ctx.layout.metric_annotations();
        if !path.exists() {
            return Err(CliError::MissingArtifact {
                stage: "metrics",
                what: "annotation matrix",
                path,
            });
        }
        vec![path]
    } else {
        ctx.config.agreement.annotations.clone()
    };
    let mut records = Vec::new();
    for path in &sources {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let m = AnnotationMatrix::read_csv(file, vocabulary.clone())?;
        for i in 0..m.num_items() {
            for r in 0..m.num_raters() {
                if let Some(l) = m.get(i, r) {
                    records.push((m.items()[i].clone(), m.raters()[r].clone(), l.to_string()));
                }
            }
        }
    }
    Ok(AnnotationMatrix::from_records(vocabulary, records)?)
}

/// Agreement report over the configured annotation sources.
pub fn agreement(ctx: &Context) -> Result<AgreementReport> {
    let cfg = &ctx.config.agreement;
    let matrix = load_annotations(ctx)?;
    let report = agreement_report(
        &matrix,
        &ReportOptions {
            uncertain_mode: cfg.uncertain_mode,
            iterations: cfg.bootstrap_iterations,
            seed: cfg.seed,
            reference: cfg.reference.clone(),
        },
    )?;
    let dir = ctx.layout.stage_dir("agreement");
    let mut files = BTreeMap::new();
    files.insert("report.txt".into(), write_bytes(&dir.join("report.txt"), report.to_text().as_bytes())?);
    files.insert("report.json".into(), write_bytes(&dir.join("report.json"), &pretty_json(&report)?)?);
    let mut buf = Vec::new();
    report.write_pairwise_csv(&mut buf)?;
    files.insert("pairwise.csv".into(), write_bytes(&dir.join("pairwise.csv"), &buf)?);
    let mut buf = Vec::new();
    report.write_coverage_csv(&mut buf)?;
    files.insert("coverage.csv".into(), write_bytes(&dir.join("coverage.csv"), &buf)?);
    let mut buf = Vec::new();
    report.write_overlap_csv(&mut buf)?;
    files.insert("overlap.csv".into(), write_bytes(&dir.join("overlap.csv"), &buf)?);
    let trained = read_manifest(&ctx.layout, "train").ok();
    write_manifest(
        &ctx.layout,
        &StageManifest {
            stage: "agreement".into(),
            config_hash: ctx.config_hash.clone(),
            dataset_fingerprint: trained.as_ref().map_or_else(String::new, |t| t.dataset_fingerprint.clone()),
            model_fingerprint: trained.and_then(|t| t.model_fingerprint),
            files,
            summary: json!({
                "fleiss_kappa": report.fleiss_kappa.map(|a| a.value),
                "krippendorff_alpha": report.krippendorff_alpha.map(|a| a.value),
                "items": report.items,
                "raters": report.raters,
            }),
        },
    )?;
    Ok(report)
}

/// Collects every stage's results into `report.md`, refusing artifacts from
/// different datasets or models.
pub fn report(ctx: &Context) -> Result<String> {
    let train = read_manifest(&ctx.layout, "train")?;
    let mut stages = vec![("train", train.clone())];
    for stage in ["capture", "cv", "metrics", "agreement"] {
        if let Ok(m) = read_manifest(&ctx.layout, stage) {
            stages.push((stage, m));
        }
    }
    let atlas = load_atlas(ctx).ok();
    let mut fingerprints: Vec<(&str, &str, Option<&str>)> = stages
        .iter()
        .map(|(s, m)| (*s, m.dataset_fingerprint.as_str(), m.model_fingerprint.as_deref()))
        .collect();
    if let Some(a) = &atlas {
        fingerprints.push(("atlas", &a.dataset_fingerprint, Some(&a.model_fingerprint)));
    }
    for (stage, data_fp, model_fp) in &fingerprints {
        // agreement over external CSVs may have no training context
        if data_fp.is_empty() {
            continue;
        }
        if *data_fp != train.dataset_fingerprint {
            return Err(CliError::Mismatch(format!("`{stage}` used a different dataset than `train`")));
        }
        if model_fp.is_some_and(|m| Some(m) != train.model_fingerprint.as_deref()) {
            return Err(CliError::Mismatch(format!("`{stage}` used a different model than `train`")));
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "# Run report\n");
    let _ = writeln!(out, "- config hash: `{}`", ctx.config_hash);
    let _ = writeln!(out, "- dataset fingerprint: `{}`", train.dataset_fingerprint);
    if let Some(m) = &train.model_fingerprint {
        let _ = writeln!(out, "- model fingerprint: `{m}`");
    }
    for (stage, m) in &stages {
        if m.config_hash != ctx.config_hash {
            let _ = writeln!(out, "- note: `{stage}` was produced by a different configuration");
        }
    }
    let v = &train.summary["validation"];
    let _ = writeln!(out, "\n## Model\n");
    let _ = writeln!(
        out,
        "held-out accuracy {:.4}, macro F1 {:.4}, AUROC {:.4}",
        v["accuracy"].as_f64().unwrap_or(f64::NAN),
        v["f1_macro"].as_f64().unwrap_or(f64::NAN),
        v["auroc"].as_f64().unwrap_or(f64::NAN)
    );
    if let Some((_, m)) = stages.iter().find(|(s, _)| *s == "cv") {
        let _ = writeln!(out, "\n## Class visualizations\n");
        let _ = writeln!(out, "| class | predicted | best logit |\n|---|---|---|");
        for c in m.summary["classes"].as_array().into_iter().flatten() {
            let _ = writeln!(
                out,
                "| {} | {} | {:.3} |",
                c["class"].as_str().unwrap_or(""),
                c["predicted"].as_str().unwrap_or(""),
                c["best_objective"].as_f64().unwrap_or(f64::NAN)
            );
        }
    }
    if let Some(a) = &atlas {
        let ratios: Vec<f64> = a
            .non_empty()
            .filter_map(|c| Some(c.inversion_loss? / c.initial_loss?))
            .collect();
        let converged = ratios.iter().filter(|r| **r <= 0.1).count();
        let _ = writeln!(out, "\n## Atlas\n");
        let _ = writeln!(
            out,
            "layer {}, {}×{} grid, {} occupied cells, mean purity {:.3}, {} of {} rendered cells below 10% of initial inversion loss",
            a.layer,
            a.grid_size,
            a.grid_size,
            a.non_empty().count(),
            a.mean_purity(),
            converged,
            ratios.len()
        );
    }
    if let Some((_, m)) = stages.iter().find(|(s, _)| *s == "metrics") {
        let _ = writeln!(out, "\n## Surrogate labels\n");
        let _ = writeln!(out, "| method | labeled | matches majority GT |\n|---|---|---|");
        for r in m.summary["methods"].as_array().into_iter().flatten() {
            let _ = writeln!(
                out,
                "| {} | {} | {} |",
                r["method"].as_str().unwrap_or(""),
                r["labeled"],
                r["matches_majority_gt"]
            );
        }
    }
    let agreement_txt = ctx.layout.stage_dir("agreement").join("report.txt");
    if let Ok(text) = std::fs::read_to_string(&agreement_txt) {
        let _ = writeln!(out, "\n## Agreement\n\n```\n{}```", text);
    }
    write_bytes(&ctx.layout.report(), out.as_bytes())?;
    Ok(out)
}
