//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vitatlas::agreement::{UncertainMode, DEFAULT_BOOTSTRAP_ITERATIONS};
use vitatlas::atlas::{Reducer, TsneConfig};
use vitatlas::data::synthetic::{SyntheticConfig, TextureSet};
use vitatlas::data::{AugmentConfig, ClassMap};
use vitatlas::featvis::{FeatvisConfig, DEFAULT_STEPS};
use vitatlas::fingerprint::sha256_hex;
use vitatlas::model::{BackboneSpec, TrainConfig};
use vitatlas::surrogate::{Method, DEFAULT_REFERENCES_PER_CLASS};

use crate::error::{CliError, Result};

/// Environment variable overriding `serve.bind`.
pub const BIND_ENV: &str = "VITATLAS_BIND";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub cv: OptimSection,
    #[serde(default)]
    pub capture: CaptureSection,
    #[serde(default)]
    pub atlas: AtlasSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub agreement: AgreementSection,
    #[serde(default)]
    pub serve: ServeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// `path/<class_code>/*.png|jpg|tif`.
    Folder { path: PathBuf, classes: ClassesSpec },
    /// Procedural textures.
    Synthetic {
        textures: TextureSet,
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_size")]
        size: usize,
        #[serde(default = "default_slides")]
        slides: usize,
        #[serde(default)]
        seed: u64,
    },
}

/// A preset name (`nct`, `tcga11`) or an explicit list of class codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassesSpec {
    Preset(String),
    Codes(Vec<String>),
}

impl ClassesSpec {
    pub fn class_map(&self) -> Result<ClassMap> {
        match self {
            ClassesSpec::Preset(p) if p == "nct" => Ok(ClassMap::nct()),
            ClassesSpec::Preset(p) if p == "tcga11" => Ok(ClassMap::tcga11()),
            ClassesSpec::Preset(p) => Err(CliError::Invalid(format!(
                "unknown class preset `{p}` (expected nct, tcga11 or a list of codes)"
            ))),
            ClassesSpec::Codes(codes) => Ok(ClassMap::from_codes(codes)?),
        }
    }
}

fn default_per_class() -> usize {
    40
}
fn default_size() -> usize {
    32
}
fn default_slides() -> usize {
    8
}

impl DatasetConfig {
    pub fn synthetic_config(&self) -> Option<(TextureSet, SyntheticConfig)> {
        match *self {
            DatasetConfig::Synthetic {
                textures,
                per_class,
                size,
                slides,
                seed,
            } => Some((
                textures,
                SyntheticConfig {
                    per_class,
                    size,
                    slides,
                    seed,
                    ..SyntheticConfig::default()
                },
            )),
            DatasetConfig::Folder { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackbonePreset {
    /// 6 layers, 64 dims, 32 px input.
    Small,
    /// 8 layers, 128 dims, 224 px input.
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackbonePreset,
    /// Seed of the random backbone weights.
    pub seed: u64,
    /// Take the backbone from this checkpoint instead.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackbonePreset::Small,
            seed: 0,
            checkpoint: None,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self) -> BackboneSpec {
        match self.backbone {
            BackbonePreset::Small => BackboneSpec::small(),
            BackbonePreset::Base => BackboneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub folds: usize,
    /// Held-out fold used for validation and early stopping.
    pub test_fold: usize,
    pub fold_seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            folds: 4,
            test_fold: 0,
            fold_seed: 0,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            seed: t.seed,
            augment: false,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            seed: self.seed,
            augment: self.augment.then(AugmentConfig::default),
        }
    }
}

/// Image optimization settings for class visualizations or atlas synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub decay_power: f64,
    pub init_std: f64,
    pub seed: u64,
    pub jitter: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        let f = FeatvisConfig::default();
        Self {
            steps: DEFAULT_STEPS,
            learning_rate: f.learning_rate,
            decay_power: f.decay_power,
            init_std: f.init_std,
            seed: f.seed,
            jitter: f.jitter,
        }
    }
}

impl OptimSection {
    pub fn featvis(&self) -> FeatvisConfig {
        FeatvisConfig {
            steps: self.steps,
            learning_rate: self.learning_rate,
            decay_power: self.decay_power,
            init_std: self.init_std,
            seed: self.seed,
            jitter: self.jitter,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureSection {
    /// Layers to capture; empty means the atlas layer only.
    pub layers: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerKind {
    Tsne,
    Pca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtlasSection {
    /// Defaults to the backbone's middle layer.
    pub layer: Option<usize>,
    pub grid_size: usize,
    pub reducer: ReducerKind,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub seed: u64,
    pub synthesis: OptimSection,
}

impl Default for AtlasSection {
    fn default() -> Self {
        let t = TsneConfig::default();
        Self {
            layer: None,
            grid_size: 10,
            reducer: ReducerKind::Tsne,
            perplexity: t.perplexity,
            tsne_iterations: t.iterations,
            seed: 0,
            synthesis: OptimSection::default(),
        }
    }
}

impl AtlasSection {
    pub fn reducer(&self) -> Reducer {
        match self.reducer {
            ReducerKind::Tsne => Reducer::Tsne(TsneConfig {
                perplexity: self.perplexity,
                iterations: self.tsne_iterations,
                ..TsneConfig::default()
            }),
            ReducerKind::Pca => Reducer::Pca,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    /// The classifier's own backbone tokens.
    Backbone,
    /// A fixed random convolutional network.
    RandomConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Method names such as `LPIPS_NN` or `Mahalanobis`.
    pub methods: Vec<String>,
    pub extractor: ExtractorKind,
    pub random_conv_channels: Vec<usize>,
    pub references_per_class: usize,
    pub seed: u64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            methods: Method::ALL.iter().map(ToString::to_string).collect(),
            extractor: ExtractorKind::Backbone,
            random_conv_channels: vec![16, 32, 64],
            references_per_class: DEFAULT_REFERENCES_PER_CLASS,
            seed: 0,
        }
    }
}

impl MetricsSection {
    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        self.methods
            .iter()
            .map(|m| m.parse::<Method>().map_err(CliError::from))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgreementSection {
    /// Annotation CSVs to merge; empty means the metrics stage output.
    pub annotations: Vec<PathBuf>,
    pub uncertain_mode: UncertainMode,
    pub bootstrap_iterations: usize,
    pub seed: u64,
    /// Rater treated as ground truth, e.g. `majority_gt`.
    pub reference: Option<String>,
}

impl Default for AgreementSection {
    fn default() -> Self {
        Self {
            annotations: Vec::new(),
            uncertain_mode: UncertainMode::Exclude,
            bootstrap_iterations: DEFAULT_BOOTSTRAP_ITERATIONS,
            seed: 0,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: String,
    /// Hide ground-truth-derived fields unless a request asks otherwise.
    pub blind: bool,
    /// Append-only annotation log; defaults to `<output_dir>/annotations/store.jsonl`.
    pub store: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            blind: true,
            store: None,
        }
    }
}

impl RunConfig {
    /// Parses TOML. Errors carry the line and column of the offending value.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|s| line_col(text, s.start))
                .unwrap_or((0, 0));
            CliError::Config {
                path: origin.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })
    }

    /// Reads, parses, resolves relative paths against the file's directory
    /// and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let DatasetConfig::Folder { path, .. } = &mut self.dataset {
            fix(path);
        }
        if let Some(p) = &mut self.model.checkpoint {
            fix(p);
        }
        self.agreement.annotations.iter_mut().for_each(fix);
        if let Some(p) = &mut self.serve.store {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let exists = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(CliError::Invalid(format!("{what} `{}` does not exist", p.display())))
            }
        };
        if let DatasetConfig::Folder { path, classes } = &self.dataset {
            exists(path, "dataset path")?;
            classes.class_map()?;
        }
        if let Some(p) = &self.model.checkpoint {
            exists(p, "model checkpoint")?;
        }
        for p in &self.agreement.annotations {
            exists(p, "annotation file")?;
        }
        let spec = self.model.spec();
        if self.train.folds < 2 || self.train.test_fold >= self.train.folds {
            return Err(CliError::Invalid(format!(
                "train.test_fold {} must be below train.folds {} (at least 2)",
                self.train.test_fold, self.train.folds
            )));
        }
        for &l in self.capture.layers.iter().chain(self.atlas.layer.iter()) {
            if l >= spec.num_layers {
                return Err(CliError::Invalid(format!(
                    "layer {l} out of range for a {}-layer backbone",
                    spec.num_layers
                )));
            }
        }
        if self.atlas.grid_size == 0 {
            return Err(CliError::Invalid("atlas.grid_size must be at least 1".into()));
        }
        if self.agreement.bootstrap_iterations == 0 {
            return Err(CliError::Invalid("agreement.bootstrap_iterations must be at least 1".into()));
        }
        self.metrics.parsed_methods()?;
        Ok(())
    }

    pub fn atlas_layer(&self) -> usize {
        self.atlas.layer.unwrap_or_else(|| self.model.spec().default_atlas_layer())
    }

    pub fn capture_layers(&self) -> Vec<usize> {
        if self.capture.layers.is_empty() {
            vec![self.atlas_layer()]
        } else {
            self.capture.layers.clone()
        }
    }

    /// SHA-256 of the canonical JSON form, without the output directory and
    /// service settings, which do not affect any artifact's content.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.serve = ServeSection::default();
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }

    pub fn store_path(&self) -> PathBuf {
        self.serve
            .store
            .clone()
            .unwrap_or_else(|| self.output_dir.join("annotations").join("store.jsonl"))
    }

    pub fn bind_address(&self) -> String {
        std::env::var(BIND_ENV).unwrap_or_else(|_| self.serve.bind.clone())
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"

[dataset]
kind = "synthetic"
textures = "five"
per_class = 10
"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::from_toml(MINIMAL, "run.toml").unwrap();
        assert_eq!(cfg.atlas.grid_size, 10);
        assert_eq!(cfg.cv.steps, 8192);
        assert_eq!(cfg.agreement.bootstrap_iterations, 300);
        assert!(cfg.serve.blind);
        assert_eq!(cfg.atlas_layer(), 3);
        assert_eq!(cfg.metrics.parsed_methods().unwrap().len(), 7);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let text = format!("{MINIMAL}\n[atlas]\ngrid_size = 5\ngird = 3\n");
        match RunConfig::from_toml(&text, "run.toml") {
            Err(CliError::Config { line, message, .. }) => {
                assert_eq!(line, 11, "{message}");
                assert!(message.contains("gird"));
            }
            other => panic!("expected a config error, got {other:?}"),
        }
        let wrong_type = format!("{MINIMAL}\n[cv]\nsteps = \"many\"\n");
        match RunConfig::from_toml(&wrong_type, "run.toml") {
            Err(CliError::Config { line, .. }) => assert_eq!(line, 10),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn validation_checks_paths_and_ranges() {
        let mut cfg = RunConfig::from_toml(MINIMAL, "run.toml").unwrap();
        cfg.atlas.layer = Some(6);
        assert!(cfg.validate().is_err());
        cfg.atlas.layer = None;
        cfg.agreement.annotations = vec!["/nonexistent/a.csv".into()];
        assert!(cfg.validate().is_err());
        cfg.agreement.annotations.clear();
        cfg.metrics.methods = vec!["Bogus".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_toml(MINIMAL, "a").unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.atlas.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = RunConfig::from_toml(MINIMAL, "run.toml").unwrap();
        cfg.resolve_paths(Path::new("/data/runs"));
        assert_eq!(cfg.output_dir, PathBuf::from("/data/runs/out"));
        assert_eq!(cfg.store_path(), PathBuf::from("/data/runs/out/annotations/store.jsonl"));
    }
}
