#![allow(dead_code)]

use std::path::Path;

use vitatlas::atlas::{aggregate, ActivationRecord, Atlas, EmbeddingMeta};
use vitatlas::ImageTensor;
use vitatlas_cli::{Context, RunConfig};

/// A configuration small enough to run every stage in seconds.
pub fn tiny_config(dir: &Path) -> Context {
    let text = r#"
output_dir = "out"

[dataset]
kind = "synthetic"
textures = "five"
per_class = 12
slides = 4
seed = 3

[train]
max_epochs = 30
batch_size = 4

[cv]
steps = 24

[atlas]
grid_size = 4
tsne_iterations = 250

[atlas.synthesis]
steps = 24

[metrics]
references_per_class = 6

[agreement]
bootstrap_iterations = 50
"#;
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    Context::new(RunConfig::load(&path).unwrap())
}

/// A `g × g` atlas over classes A, B, C with one member per cell and a
/// rendered image in every cell whose index is even.
pub fn grid_atlas(g: usize) -> Atlas {
    let records: Vec<ActivationRecord> = (0..g * g)
        .map(|k| ActivationRecord {
            patch_id: format!("p{k}"),
            layer: 0,
            vector: vec![k as f64, 1.0],
            gt_class: k % 3,
            attribution: vec![0.1 * k as f64, 0.0, -0.5],
        })
        .collect();
    let coords: Vec<[f64; 2]> = (0..g * g).map(|k| [(k % g) as f64, (k / g) as f64]).collect();
    let assignment: Vec<(usize, usize)> = (0..g * g).map(|k| (k / g, k % g)).collect();
    let mut cells = aggregate(&records, &coords, &assignment, g, 3).unwrap();
    for (k, cell) in cells.iter_mut().enumerate() {
        if k % 2 == 0 {
            let shade = k as f64 / (g * g) as f64;
            cell.generated_image = Some(ImageTensor::filled(8, 8, [shade, 0.5, 1.0 - shade]).unwrap());
            cell.image_file = Some(format!("cells/cell_{}_{}.png", cell.i, cell.j));
            cell.image_sha256 = Some(vitatlas::fingerprint::sha256_hex(
                &cell.generated_image.as_ref().unwrap().encode_png().unwrap(),
            ));
        }
    }
    Atlas {
        grid_size: g,
        layer: 0,
        class_codes: vec!["A".into(), "B".into(), "C".into()],
        cells,
        dataset_fingerprint: "dataset".into(),
        model_fingerprint: "model".into(),
        embedding: EmbeddingMeta {
            reducer: "fixed".into(),
            perplexity: 0.0,
            seed: 0,
            num_records: g * g,
        },
        synthesis: None,
        config_hash: "config".into(),
    }
}
