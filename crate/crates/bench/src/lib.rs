//! Seeded fixtures shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitatlas::agreement::AnnotationMatrix;
use vitatlas::ImageTensor;

pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn random_image(size: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = ndarray::Array3::from_shape_fn((size, size, 3), |_| rng.random::<f64>());
    ImageTensor::new(data).expect("values in range")
}

pub fn random_feature_layers(layers: usize, positions: usize, channels: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..layers)
        .map(|_| Array2::from_shape_fn((positions, channels), |_| rng.random_range(-1.0..1.0)))
        .collect()
}

/// Raters agree with a hidden truth with probability `p`.
pub fn noisy_annotations(items: usize, raters: usize, classes: usize, p: f64, seed: u64) -> AnnotationMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<String> = (0..classes).map(|c| format!("C{c}")).collect();
    let rows = (0..items)
        .map(|_| {
            let truth = rng.random_range(0..classes);
            (0..raters)
                .map(|_| {
                    let v = if rng.random::<f64>() < p { truth } else { rng.random_range(0..classes) };
                    Some(codes[v].clone())
                })
                .collect()
        })
        .collect();
    AnnotationMatrix::new(
        (0..items).map(|i| format!("i{i}")).collect(),
        (0..raters).map(|r| format!("r{r}")).collect(),
        codes,
        rows,
    )
    .expect("valid matrix")
}
