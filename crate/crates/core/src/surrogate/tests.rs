use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::atlas::{aggregate, ActivationRecord, Atlas, EmbeddingMeta};
use crate::data::LabeledPatch;
use crate::ImageTensor;

fn solid(rgb: [f64; 3]) -> ImageTensor {
    ImageTensor::filled(8, 8, rgb).unwrap()
}

fn noisy(seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::new(Array3::from_shape_simple_fn((8, 8, 3), || rng.random::<f64>())).unwrap()
}

fn atlas_from(cells: Vec<crate::atlas::AtlasCell>, g: usize, classes: usize) -> Atlas {
    Atlas {
        grid_size: g,
        layer: 0,
        class_codes: (0..classes).map(|c| format!("C{c}")).collect(),
        cells,
        dataset_fingerprint: String::new(),
        model_fingerprint: String::new(),
        embedding: EmbeddingMeta {
            reducer: "none".into(),
            perplexity: 0.0,
            seed: 0,
            num_records: 0,
        },
        synthesis: None,
        config_hash: String::new(),
    }
}

fn records(attrs: &[Vec<f64>]) -> Vec<ActivationRecord> {
    attrs
        .iter()
        .enumerate()
        .map(|(k, a)| ActivationRecord {
            patch_id: format!("r{k}"),
            layer: 0,
            vector: vec![k as f64],
            gt_class: 0,
            attribution: a.clone(),
        })
        .collect()
}

#[test]
fn exact_reference_match_is_nearest() {
    let ext = RandomConvExtractor::new(&[4, 4], 1).unwrap();
    let patches: Vec<LabeledPatch> = (0..6)
        .map(|k| LabeledPatch {
            id: format!("p{k}"),
            image: noisy(k),
            class_id: k as usize % 3,
            group_id: "g".into(),
        })
        .collect();
    let refs = build_reference_set(&ext, &patches, 3, 64, 0).unwrap();
    let recs = records(&[vec![0.0; 3]]);
    let mut cells = aggregate(&recs, &[[0.0; 2]], &[(0, 0)], 1, 3).unwrap();
    cells[0].generated_image = Some(patches[4].image.clone());
    let atlas = atlas_from(cells, 1, 3);
    for m in [Method::Lpips(Strategy::Nn), Method::DreamSim(Strategy::Nn)] {
        let map = assign_labels(&atlas, m, Some(&ext), Some(&refs)).unwrap();
        assert_eq!(map.entries[0].label, Some(1));
        assert!(map.entries[0].score.unwrap().abs() < 1e-12);
        assert!(map.method.ends_with(&format!("@{}", ext.name())));
    }
}

#[test]
fn unanimous_attribution_labels_both_ways() {
    let recs = records(&[vec![0.1, 0.9, 0.3], vec![-0.2, 0.5, 0.4], vec![0.0, 2.0, 1.0]]);
    let cells = aggregate(&recs, &[[0.0; 2]; 3], &[(0, 0); 3], 1, 3).unwrap();
    let atlas = atlas_from(cells, 1, 3);
    for s in [Strategy::Nn, Strategy::Dist] {
        let map = assign_labels::<RandomConvExtractor>(&atlas, Method::Attribution(s), None, None).unwrap();
        assert_eq!(map.entries[0].label, Some(1));
        assert!(!map.entries[0].tie);
    }
}

#[test]
fn attribution_dist_uses_mean_not_votes() {
    // two members vote class 0 narrowly, one votes class 1 strongly
    let recs = records(&[vec![1.0, 0.9], vec![1.0, 0.9], vec![0.0, 3.0]]);
    let cells = aggregate(&recs, &[[0.0; 2]; 3], &[(0, 0); 3], 1, 2).unwrap();
    let atlas = atlas_from(cells, 1, 2);
    let nn = assign_labels::<RandomConvExtractor>(&atlas, Method::Attribution(Strategy::Nn), None, None).unwrap();
    let dist = assign_labels::<RandomConvExtractor>(&atlas, Method::Attribution(Strategy::Dist), None, None).unwrap();
    assert_eq!(nn.entries[0].label, Some(0));
    assert_eq!(dist.entries[0].label, Some(1));
}

#[test]
fn ties_take_lowest_class_and_flag() {
    let recs = records(&[vec![1.0, 1.0, 0.0]]);
    let cells = aggregate(&recs, &[[0.0; 2]], &[(0, 0)], 1, 3).unwrap();
    let map = assign_labels::<RandomConvExtractor>(&atlas_from(cells, 1, 3), Method::Attribution(Strategy::Dist), None, None)
        .unwrap();
    assert_eq!(map.entries[0].label, Some(0));
    assert!(map.entries[0].tie);
}

#[test]
fn missing_image_leaves_cell_unlabeled() {
    let ext = RandomConvExtractor::new(&[4], 0).unwrap();
    let patches: Vec<LabeledPatch> = (0..4)
        .map(|k| LabeledPatch {
            id: format!("p{k}"),
            image: solid([0.1 * k as f64, 0.5, 0.5]),
            class_id: k as usize % 2,
            group_id: "g".into(),
        })
        .collect();
    let refs = build_reference_set(&ext, &patches, 2, 64, 0).unwrap();
    let recs = records(&[vec![0.0; 2]]);
    let cells = aggregate(&recs, &[[0.0; 2]], &[(0, 0)], 2, 2).unwrap();
    let map = assign_labels(&atlas_from(cells, 2, 2), Method::Mahalanobis, Some(&ext), Some(&refs)).unwrap();
    assert_eq!(map.entries.len(), 1);
    assert_eq!(map.entries[0].label, None);
    assert_eq!(map.warnings.len(), 1);
    assert!(assign_labels::<RandomConvExtractor>(&atlas_from(Vec::new(), 0, 2), Method::Mahalanobis, None, None).is_err());
}

#[test]
fn mahalanobis_labels_match_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let d = 16;
    let centers: Vec<Vec<f64>> = (0..3).map(|c| (0..d).map(|k| if k % 3 == c { 2.0 } else { 0.0 }).collect()).collect();
    let fits: Vec<GaussianFit> = centers
        .iter()
        .map(|m| {
            let rows: Vec<Vec<f64>> = (0..64).map(|_| m.iter().map(|v| v + normal.sample(&mut rng)).collect()).collect();
            ledoit_wolf_fit(&rows).unwrap()
        })
        .collect();
    for _ in 0..50 {
        let c = rng.random_range(0..3);
        let p: Vec<f64> = centers[c].iter().map(|v| v + 1.5 * normal.sample(&mut rng)).collect();
        let (label, score, _) = mahalanobis_label(&p, &fits).unwrap();
        let mut best = (0, f64::INFINITY);
        for (k, f) in fits.iter().enumerate() {
            let diff: Vec<f64> = p.iter().zip(f.mean.iter()).map(|(a, b)| a - b).collect();
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    s += diff[i] * f.precision[(i, j)] * diff[j];
                }
            }
            if s < best.1 {
                best = (k, s);
            }
        }
        assert_eq!(label, best.0);
        assert!((score - best.1).abs() < 1e-9 * (1.0 + best.1));
    }
}

#[test]
fn reference_sampling_is_seeded() {
    let ext = RandomConvExtractor::new(&[2], 0).unwrap();
    let patches: Vec<LabeledPatch> = (0..40)
        .map(|k| LabeledPatch {
            id: format!("p{k}"),
            image: noisy(k),
            class_id: k as usize % 2,
            group_id: "g".into(),
        })
        .collect();
    let a = build_reference_set(&ext, &patches, 2, 5, 3).unwrap();
    let b = build_reference_set(&ext, &patches, 2, 5, 3).unwrap();
    let c = build_reference_set(&ext, &patches, 2, 5, 4).unwrap();
    assert_eq!(a.classes[0].patch_ids, b.classes[0].patch_ids);
    assert_eq!(a.classes[0].patch_ids.len(), 5);
    assert_ne!(a.classes[0].patch_ids, c.classes[0].patch_ids);
}

#[test]
fn label_map_csv_round_trip() {
    let map = LabelMap {
        method: "LPIPS_NN@x".into(),
        class_codes: vec!["A".into(), "B".into()],
        entries: vec![
            LabelEntry { i: 0, j: 1, label: Some(1), score: Some(0.25), tie: false },
            LabelEntry { i: 2, j: 0, label: None, score: None, tie: false },
            LabelEntry { i: 3, j: 3, label: Some(0), score: Some(1.0 / 3.0), tie: true },
        ],
        warnings: Vec::new(),
    };
    let mut buf = Vec::new();
    map.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("cell_i,cell_j,method,label,score,tie_flag\n"));
    let back = LabelMap::read_csv(buf.as_slice(), &map.class_codes).unwrap();
    assert_eq!(back, vec![map]);
    assert_eq!("lpips_dist@foo".parse::<Method>().unwrap(), Method::Lpips(Strategy::Dist));
    assert!("nope".parse::<Method>().is_err());
}
