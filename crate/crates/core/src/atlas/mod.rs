//! Activation atlases: per-patch activations are embedded in the plane, binned
//! on a `g × g` grid, averaged per cell and rendered by feature inversion.

mod embed;
mod io;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use embed::{embed_2d, Embedding2D, Reducer, TsneConfig};
pub use io::{export_atlas, import_atlas, MANIFEST_FILE, MANIFEST_VERSION};

use crate::data::LabeledPatch;
use crate::error::{Error, Result};
use crate::featvis::{feature_inversion, target_seed, FeatvisConfig, VisualModel};
use crate::fingerprint::sha256_hex;
use crate::model::{argmax, Backbone, Classifier};
use crate::ImageTensor;

/// Activation of one patch at one layer plus its per-class attributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub patch_id: String,
    pub layer: usize,
    pub vector: Vec<f64>,
    pub gt_class: usize,
    /// `attribution[c] = ⟨f, ∇_f logit_c⟩`.
    pub attribution: Vec<f64>,
}

/// Captures the cls token at `layer` for every patch, without augmentation.
pub fn capture_activations<B: Backbone>(
    model: &Classifier<B>,
    patches: &[LabeledPatch],
    layer: usize,
) -> Result<Vec<ActivationRecord>> {
    if layer >= model.num_layers() {
        return Err(Error::OutOfRange {
            what: "layer",
            index: layer,
            limit: model.num_layers(),
        });
    }
    patches
        .par_iter()
        .map(|p| {
            let (vector, attribution) = model.attribution(&model.normalize(&p.image), layer)?;
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("activation of `{}`", p.id)));
            }
            Ok(ActivationRecord {
                patch_id: p.id.clone(),
                layer,
                vector,
                gt_class: p.class_id,
                attribution,
            })
        })
        .collect()
}

/// Grid cell `(i, j)` for every point: `i` bins the y coordinate, `j` the x
/// coordinate. Points on the maximum coordinate fall in the last bin.
pub fn gridify(coords: &[[f64; 2]], g: usize) -> Vec<(usize, usize)> {
    let g = g.max(1);
    let bounds = |k: usize| {
        coords
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c[k]), hi.max(c[k])))
    };
    let bin = |v: f64, (lo, hi): (f64, f64)| {
        if hi > lo {
            (((v - lo) / (hi - lo) * g as f64).floor() as usize).min(g - 1)
        } else {
            0
        }
    };
    let (bx, by) = (bounds(0), bounds(1));
    coords.iter().map(|c| (bin(c[1], by), bin(c[0], bx))).collect()
}

/// A record's footprint in its cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMember {
    pub patch_id: String,
    pub gt_class: usize,
    pub x: f64,
    pub y: f64,
    pub attribution: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasCell {
    pub i: usize,
    pub j: usize,
    pub members: Vec<CellMember>,
    /// Component-wise mean of member activations; empty for empty cells.
    pub mean_activation: Vec<f64>,
    pub class_histogram: Vec<usize>,
    pub mean_attribution: Vec<f64>,
    pub majority_gt: Option<usize>,
    pub majority_tie: bool,
    #[serde(skip)]
    pub generated_image: Option<ImageTensor>,
    /// Best inversion loss reached for the generated image.
    pub inversion_loss: Option<f64>,
    pub initial_loss: Option<f64>,
    pub seed: Option<u64>,
    /// Path of the image relative to the atlas directory.
    pub image_file: Option<String>,
    pub image_sha256: Option<String>,
}

impl AtlasCell {
    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Fraction of members carrying the majority ground-truth class.
    pub fn purity(&self) -> Option<f64> {
        let max = *self.class_histogram.iter().max()?;
        (!self.is_empty()).then(|| max as f64 / self.n() as f64)
    }
}

/// Mean over members of `⟨f_i, ∇_{f_i} logit_c⟩`.
pub fn cell_attribution_score(cell: &AtlasCell, class: usize) -> Result<f64> {
    if cell.is_empty() {
        return Err(Error::InsufficientData(format!("cell ({}, {}) is empty", cell.i, cell.j)));
    }
    let mut sum = 0.0;
    for m in &cell.members {
        sum += *m.attribution.get(class).ok_or(Error::OutOfRange {
            what: "class",
            index: class,
            limit: m.attribution.len(),
        })?;
    }
    Ok(sum / cell.n() as f64)
}

/// Index of the largest count, lowest index on ties, and whether a tie occurred.
pub fn majority(counts: &[usize]) -> (usize, bool) {
    let best = counts.iter().copied().max().unwrap_or(0);
    let idx = counts.iter().position(|&c| c == best).unwrap_or(0);
    (idx, counts.iter().filter(|&&c| c == best).count() > 1)
}

/// Builds `g²` cells in row-major order from records and their cell assignment.
pub fn aggregate(
    records: &[ActivationRecord],
    coords: &[[f64; 2]],
    assignment: &[(usize, usize)],
    g: usize,
    num_classes: usize,
) -> Result<Vec<AtlasCell>> {
    if records.len() != assignment.len() || records.len() != coords.len() {
        return Err(Error::Shape(format!(
            "{} records, {} coordinates, {} assignments",
            records.len(),
            coords.len(),
            assignment.len()
        )));
    }
    let dim = records.first().map_or(0, |r| r.vector.len());
    let mut cells: Vec<AtlasCell> = (0..g * g)
        .map(|k| AtlasCell {
            i: k / g,
            j: k % g,
            members: Vec::new(),
            mean_activation: Vec::new(),
            class_histogram: vec![0; num_classes],
            mean_attribution: Vec::new(),
            majority_gt: None,
            majority_tie: false,
            generated_image: None,
            inversion_loss: None,
            initial_loss: None,
            seed: None,
            image_file: None,
            image_sha256: None,
        })
        .collect();
    let mut sums = vec![(vec![0.0; dim], vec![0.0; num_classes]); g * g];
    for ((r, c), &(i, j)) in records.iter().zip(coords).zip(assignment) {
        if i >= g || j >= g {
            return Err(Error::OutOfRange {
                what: "grid cell",
                index: i.max(j),
                limit: g,
            });
        }
        if r.vector.len() != dim || r.attribution.len() != num_classes || r.gt_class >= num_classes {
            return Err(Error::Shape(format!("record `{}` does not match the atlas", r.patch_id)));
        }
        let k = i * g + j;
        let cell = &mut cells[k];
        cell.class_histogram[r.gt_class] += 1;
        cell.members.push(CellMember {
            patch_id: r.patch_id.clone(),
            gt_class: r.gt_class,
            x: c[0],
            y: c[1],
            attribution: r.attribution.clone(),
        });
        for (s, v) in sums[k].0.iter_mut().zip(&r.vector) {
            *s += v;
        }
        for (s, v) in sums[k].1.iter_mut().zip(&r.attribution) {
            *s += v;
        }
    }
    for (cell, (act, attr)) in cells.iter_mut().zip(sums) {
        if cell.is_empty() {
            continue;
        }
        let n = cell.n() as f64;
        cell.mean_activation = act.into_iter().map(|s| s / n).collect();
        cell.mean_attribution = attr.into_iter().map(|s| s / n).collect();
        let (label, tie) = majority(&cell.class_histogram);
        cell.majority_gt = Some(label);
        cell.majority_tie = tie;
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub reducer: String,
    pub perplexity: f64,
    pub seed: u64,
    pub num_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    pub grid_size: usize,
    pub layer: usize,
    pub class_codes: Vec<String>,
    /// Row-major, `grid_size²` entries.
    pub cells: Vec<AtlasCell>,
    pub dataset_fingerprint: String,
    pub model_fingerprint: String,
    pub embedding: EmbeddingMeta,
    pub synthesis: Option<FeatvisConfig>,
    pub config_hash: String,
}

impl Atlas {
    pub fn cell(&self, i: usize, j: usize) -> Option<&AtlasCell> {
        (i < self.grid_size && j < self.grid_size).then(|| &self.cells[i * self.grid_size + j])
    }

    pub fn non_empty(&self) -> impl Iterator<Item = &AtlasCell> {
        self.cells.iter().filter(|c| !c.is_empty())
    }

    pub fn num_records(&self) -> usize {
        self.cells.iter().map(AtlasCell::n).sum()
    }

    /// Unweighted mean of [`AtlasCell::purity`] over non-empty cells.
    pub fn mean_purity(&self) -> f64 {
        let purities: Vec<f64> = self.cells.iter().filter_map(AtlasCell::purity).collect();
        purities.iter().sum::<f64>() / purities.len().max(1) as f64
    }
}

/// Settings shared by [`build_atlas`] and [`synthesize_atlas`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtlasConfig {
    pub grid_size: usize,
    pub reducer: Reducer,
    pub seed: u64,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        Self {
            grid_size: 10,
            reducer: Reducer::default(),
            seed: 0,
        }
    }
}

/// Embeds, grids and aggregates `records` into an atlas without images.
pub fn build_atlas(
    records: &[ActivationRecord],
    class_codes: &[String],
    cfg: &AtlasConfig,
    dataset_fingerprint: &str,
    model_fingerprint: &str,
) -> Result<Atlas> {
    if cfg.grid_size == 0 {
        return Err(Error::InvalidArgument("grid size must be at least 1".into()));
    }
    let layer = records.first().map_or(0, |r| r.layer);
    if records.iter().any(|r| r.layer != layer) {
        return Err(Error::InvalidArgument("records come from different layers".into()));
    }
    let vectors: Vec<Vec<f64>> = records.iter().map(|r| r.vector.clone()).collect();
    let embedding = embed_2d(&vectors, &cfg.reducer, cfg.seed)?;
    let assignment = gridify(&embedding.coords, cfg.grid_size);
    let cells = aggregate(records, &embedding.coords, &assignment, cfg.grid_size, class_codes.len())?;
    Ok(Atlas {
        grid_size: cfg.grid_size,
        layer,
        class_codes: class_codes.to_vec(),
        cells,
        dataset_fingerprint: dataset_fingerprint.to_string(),
        model_fingerprint: model_fingerprint.to_string(),
        embedding: EmbeddingMeta {
            reducer: embedding.reducer,
            perplexity: embedding.perplexity,
            seed: embedding.seed,
            num_records: records.len(),
        },
        synthesis: None,
        config_hash: String::new(),
    })
}

/// Cells whose inversion failed, with the reason.
pub type SynthesisFailures = Vec<((usize, usize), String)>;

/// Renders every non-empty cell by inverting its mean activation. Images are
/// quantized to 8 bits so they survive export unchanged. Failing cells are
/// reported and left without an image.
pub fn synthesize_atlas<M: VisualModel + ?Sized>(
    atlas: &mut Atlas,
    model: &M,
    cfg: &FeatvisConfig,
) -> Result<SynthesisFailures> {
    if atlas.layer >= model.num_layers() {
        return Err(Error::OutOfRange {
            what: "layer",
            index: atlas.layer,
            limit: model.num_layers(),
        });
    }
    let g = atlas.grid_size;
    let layer = atlas.layer;
    let results: Vec<_> = atlas
        .cells
        .par_iter()
        .map(|cell| {
            if cell.is_empty() {
                return None;
            }
            let seed = target_seed(cfg.seed, cell.i * g + cell.j);
            let run_cfg = FeatvisConfig { seed, ..*cfg };
            Some((seed, feature_inversion(model, layer, &cell.mean_activation, &run_cfg)))
        })
        .collect();
    let mut failures = Vec::new();
    for (cell, result) in atlas.cells.iter_mut().zip(results) {
        match result {
            None => {}
            Some((seed, Ok((image, trace)))) => {
                let image = image.quantized_u8();
                cell.image_sha256 = Some(sha256_hex(&image.encode_png()?));
                cell.image_file = Some(io::cell_image_path(cell.i, cell.j));
                cell.generated_image = Some(image);
                cell.inversion_loss = Some(trace.best());
                cell.initial_loss = Some(trace.initial());
                cell.seed = Some(seed);
            }
            Some((_, Err(e))) => {
                warn!("cell ({}, {}): {e}", cell.i, cell.j);
                failures.push(((cell.i, cell.j), e.to_string()));
            }
        }
    }
    atlas.synthesis = Some(*cfg);
    Ok(failures)
}

/// Majority class of each member's arg-max attribution, for every non-empty cell.
pub fn member_attribution_votes(cell: &AtlasCell, num_classes: usize) -> Vec<usize> {
    let mut votes = vec![0; num_classes];
    for m in &cell.members {
        votes[argmax(&m.attribution)] += 1;
    }
    votes
}
