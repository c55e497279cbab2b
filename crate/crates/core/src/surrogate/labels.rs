use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use log::warn;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cosine_distance, ledoit_wolf_fit, lpips_features, mahalanobis_sq, FeatureExtractor, GaussianFit};
use crate::atlas::{cell_attribution_score, member_attribution_votes, Atlas, AtlasCell};
use crate::data::LabeledPatch;
use crate::error::{Error, Result};

pub const DEFAULT_REFERENCES_PER_CLASS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Class of the single nearest reference (or the majority member vote).
    Nn,
    /// Class with the best mean distance (or mean attribution).
    Dist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Attribution(Strategy),
    Lpips(Strategy),
    /// Cosine distance between embeddings.
    DreamSim(Strategy),
    Mahalanobis,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Attribution(Strategy::Nn),
        Method::Attribution(Strategy::Dist),
        Method::Lpips(Strategy::Nn),
        Method::Lpips(Strategy::Dist),
        Method::DreamSim(Strategy::Nn),
        Method::DreamSim(Strategy::Dist),
        Method::Mahalanobis,
    ];

    pub fn needs_image(self) -> bool {
        !matches!(self, Method::Attribution(_))
    }

    /// Method id, suffixed with `@extractor` for feature-based methods.
    pub fn id(self, extractor: &str) -> String {
        if self.needs_image() {
            format!("{self}@{extractor}")
        } else {
            self.to_string()
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = |s: &Strategy| match s {
            Strategy::Nn => "NN",
            Strategy::Dist => "Dist",
        };
        match self {
            Method::Attribution(st) => write!(f, "Attribution_{}", s(st)),
            Method::Lpips(st) => write!(f, "LPIPS_{}", s(st)),
            Method::DreamSim(st) => write!(f, "DreamSim_{}", s(st)),
            Method::Mahalanobis => write!(f, "Mahalanobis"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let base = s.split('@').next().unwrap_or(s);
        Method::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(base))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// Sampled real images of one class, their features and Gaussian fit.
#[derive(Debug, Clone)]
pub struct ClassReference {
    pub class_id: usize,
    pub patch_ids: Vec<String>,
    /// Per sample, per layer.
    pub layer_features: Vec<Vec<Array2<f64>>>,
    /// Per sample final representation.
    pub embeddings: Vec<Vec<f64>>,
    pub fit: GaussianFit,
}

#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub extractor: String,
    pub seed: u64,
    pub classes: Vec<ClassReference>,
}

/// Samples up to `per_class` patches of every class (seeded) and fits each
/// class's final features.
pub fn build_reference_set<E: FeatureExtractor + ?Sized>(
    extractor: &E,
    patches: &[LabeledPatch],
    num_classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<ReferenceSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let mut idx: Vec<usize> = (0..patches.len()).filter(|&i| patches[i].class_id == c).collect();
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        if idx.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "class {c} has {} reference patches; need at least 2",
                idx.len()
            )));
        }
        let feats: Vec<(Vec<Array2<f64>>, Vec<f64>)> = idx
            .par_iter()
            .map(|&i| Ok((extractor.extract(&patches[i].image)?, extractor.embedding(&patches[i].image)?)))
            .collect::<Result<_>>()?;
        let (layer_features, embeddings): (Vec<_>, Vec<_>) = feats.into_iter().unzip();
        let fit = ledoit_wolf_fit(&embeddings)?;
        classes.push(ClassReference {
            class_id: c,
            patch_ids: idx.iter().map(|&i| patches[i].id.clone()).collect(),
            layer_features,
            embeddings,
            fit,
        });
    }
    Ok(ReferenceSet {
        extractor: extractor.name().to_string(),
        seed,
        classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub i: usize,
    pub j: usize,
    /// `None` when the cell could not be labeled.
    pub label: Option<usize>,
    pub score: Option<f64>,
    pub tie: bool,
}

/// One label per non-empty atlas cell for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub method: String,
    pub class_codes: Vec<String>,
    pub entries: Vec<LabelEntry>,
    pub warnings: Vec<String>,
}

impl LabelMap {
    pub fn label_at(&self, i: usize, j: usize) -> Option<usize> {
        self.entries.iter().find(|e| (e.i, e.j) == (i, j)).and_then(|e| e.label)
    }

    pub fn code(&self, label: Option<usize>) -> &str {
        label.and_then(|l| self.class_codes.get(l)).map_or("", String::as_str)
    }

    /// CSV with header `cell_i,cell_j,method,label,score,tie_flag`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_label_maps(std::slice::from_ref(self), out)
    }

    /// Reads rows of all methods from a label-map CSV, one map per method in
    /// order of first appearance.
    pub fn read_csv<R: Read>(input: R, class_codes: &[String]) -> Result<Vec<LabelMap>> {
        let mut maps: Vec<LabelMap> = Vec::new();
        let mut reader = csv::Reader::from_reader(input);
        for row in reader.records() {
            let row = row?;
            if row.len() != 6 {
                return Err(Error::Format(format!("expected 6 columns, got {}", row.len())));
            }
            let parse = |k: usize| -> Result<usize> {
                row[k].parse().map_err(|_| Error::Format(format!("bad cell index `{}`", &row[k])))
            };
            let label = match &row[3] {
                "" => None,
                code => Some(
                    class_codes
                        .iter()
                        .position(|c| c == code)
                        .ok_or_else(|| Error::UnknownLabel(code.to_string()))?,
                ),
            };
            let score = match &row[4] {
                "" => None,
                s => Some(s.parse().map_err(|_| Error::Format(format!("bad score `{s}`")))?),
            };
            let entry = LabelEntry {
                i: parse(0)?,
                j: parse(1)?,
                label,
                score,
                tie: &row[5] == "1",
            };
            match maps.iter_mut().find(|m| m.method == row[2]) {
                Some(m) => m.entries.push(entry),
                None => maps.push(LabelMap {
                    method: row[2].to_string(),
                    class_codes: class_codes.to_vec(),
                    entries: vec![entry],
                    warnings: Vec::new(),
                }),
            }
        }
        Ok(maps)
    }
}

/// Writes several maps into one CSV under a single header.
pub fn write_label_maps<W: Write>(maps: &[LabelMap], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_i", "cell_j", "method", "label", "score", "tie_flag"])?;
    for map in maps {
        for e in &map.entries {
            w.write_record([
                e.i.to_string(),
                e.j.to_string(),
                map.method.clone(),
                map.code(e.label).to_string(),
                e.score.map_or(String::new(), |s| s.to_string()),
                u8::from(e.tie).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<label map>", e))
}

/// Picks the best of `scores` (largest if `maximize`), lowest index on ties.
pub fn pick(scores: &[f64], maximize: bool) -> (usize, f64, bool) {
    let better = |a: f64, b: f64| if maximize { a > b } else { a < b };
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if better(s, scores[best]) {
            best = k;
        }
    }
    let tie = scores.iter().filter(|&&s| s == scores[best]).count() > 1;
    (best, scores[best], tie)
}

/// Nearest single reference over all classes; ties resolved to the lowest class.
fn nearest(per_class: &[Vec<f64>]) -> (usize, f64, bool) {
    let mins: Vec<f64> = per_class
        .iter()
        .map(|d| d.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    pick(&mins, false)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Labels a cell from the generated-image features alone.
fn label_from_features(
    method: Method,
    layers: &[Array2<f64>],
    embedding: &[f64],
    refs: &ReferenceSet,
) -> Result<(usize, f64, bool)> {
    match method {
        Method::Lpips(strategy) | Method::DreamSim(strategy) => {
            let dists: Vec<Vec<f64>> = refs
                .classes
                .iter()
                .map(|c| {
                    if matches!(method, Method::Lpips(_)) {
                        c.layer_features.iter().map(|r| lpips_features(layers, r, None)).collect()
                    } else {
                        c.embeddings.iter().map(|r| cosine_distance(embedding, r)).collect()
                    }
                })
                .collect::<Result<_>>()?;
            Ok(match strategy {
                Strategy::Nn => nearest(&dists),
                Strategy::Dist => pick(&dists.iter().map(|d| mean(d)).collect::<Vec<_>>(), false),
            })
        }
        Method::Mahalanobis => {
            let scores: Vec<f64> = refs
                .classes
                .iter()
                .map(|c| mahalanobis_sq(embedding, &c.fit.mean, &c.fit.precision))
                .collect::<Result<_>>()?;
            Ok(pick(&scores, false))
        }
        Method::Attribution(_) => unreachable!("attribution labels do not use features"),
    }
}

fn label_by_attribution(cell: &AtlasCell, strategy: Strategy, num_classes: usize) -> Result<(usize, f64, bool)> {
    match strategy {
        Strategy::Dist => {
            let scores: Vec<f64> = (0..num_classes)
                .map(|c| cell_attribution_score(cell, c))
                .collect::<Result<_>>()?;
            Ok(pick(&scores, true))
        }
        Strategy::Nn => {
            let votes = member_attribution_votes(cell, num_classes);
            let fractions: Vec<f64> = votes.iter().map(|&v| v as f64 / cell.n() as f64).collect();
            Ok(pick(&fractions, true))
        }
    }
}

/// Labels every non-empty cell of `atlas` with `method`.
///
/// Feature-based methods need `extractor` and `refs`; cells without a
/// generated image are left unlabeled with a warning.
pub fn assign_labels<E: FeatureExtractor + ?Sized>(
    atlas: &Atlas,
    method: Method,
    extractor: Option<&E>,
    refs: Option<&ReferenceSet>,
) -> Result<LabelMap> {
    let num_classes = atlas.class_codes.len();
    let (ext_name, features) = if method.needs_image() {
        let (ext, refs) = extractor.zip(refs).ok_or_else(|| {
            Error::InvalidArgument(format!("{method} needs a feature extractor and a reference set"))
        })?;
        if refs.extractor != ext.name() {
            return Err(Error::InvalidArgument(format!(
                "reference set built with `{}`, extractor is `{}`",
                refs.extractor,
                ext.name()
            )));
        }
        if refs.classes.len() != num_classes {
            return Err(Error::Shape(format!(
                "{} reference classes for {num_classes} atlas classes",
                refs.classes.len()
            )));
        }
        (ext.name().to_string(), Some((ext, refs)))
    } else {
        (String::new(), None)
    };
    let cells: Vec<&AtlasCell> = atlas.non_empty().collect();
    let results: Vec<Result<Option<(usize, f64, bool)>>> = cells
        .par_iter()
        .map(|cell| match (method, features) {
            (Method::Attribution(strategy), _) => label_by_attribution(cell, strategy, num_classes).map(Some),
            (_, Some((ext, refs))) => {
                let Some(image) = &cell.generated_image else {
                    return Ok(None);
                };
                let layers = if matches!(method, Method::Lpips(_)) { ext.extract(image)? } else { Vec::new() };
                let embedding = if matches!(method, Method::Lpips(_)) { Vec::new() } else { ext.embedding(image)? };
                label_from_features(method, &layers, &embedding, refs).map(Some)
            }
            _ => unreachable!("checked above"),
        })
        .collect();
    let mut entries = Vec::with_capacity(cells.len());
    let mut warnings = Vec::new();
    for (cell, result) in cells.iter().zip(results) {
        let entry = match result? {
            Some((label, score, tie)) => LabelEntry {
                i: cell.i,
                j: cell.j,
                label: Some(label),
                score: Some(score),
                tie,
            },
            None => {
                let msg = format!("cell ({}, {}) has no generated image; left unlabeled", cell.i, cell.j);
                warn!("{msg}");
                warnings.push(msg);
                LabelEntry {
                    i: cell.i,
                    j: cell.j,
                    label: None,
                    score: None,
                    tie: false,
                }
            }
        };
        entries.push(entry);
    }
    Ok(LabelMap {
        method: if ext_name.is_empty() { method.to_string() } else { method.id(&ext_name) },
        class_codes: atlas.class_codes.clone(),
        entries,
        warnings,
    })
}

/// Majority ground-truth labels of the non-empty cells, as a label map.
pub fn majority_gt_labels(atlas: &Atlas) -> LabelMap {
    LabelMap {
        method: "MajorityGT".to_string(),
        class_codes: atlas.class_codes.clone(),
        entries: atlas
            .non_empty()
            .map(|c| LabelEntry {
                i: c.i,
                j: c.j,
                label: c.majority_gt,
                score: c.purity(),
                tie: c.majority_tie,
            })
            .collect(),
        warnings: Vec::new(),
    }
}

/// Mahalanobis label for a bare feature vector against per-class fits.
pub fn mahalanobis_label(feature: &[f64], fits: &[GaussianFit]) -> Result<(usize, f64, bool)> {
    let scores: Vec<f64> = fits
        .iter()
        .map(|f| mahalanobis_sq(feature, &f.mean, &f.precision))
        .collect::<Result<_>>()?;
    Ok(pick(&scores, false))
}
