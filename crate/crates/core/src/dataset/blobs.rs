use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{LnmError, Result};
use crate::rng::RngState;

/// Isotropic Gaussian clusters, one per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    /// Centers are drawn uniformly from `[-center_box, center_box]^dim`.
    #[serde(default = "default_center_box")]
    pub center_box: f64,
}

fn default_center_box() -> f64 {
    10.0
}

impl BlobSpec {
    pub fn new(classes: usize, per_class: usize, dim: usize, spread: f64) -> Self {
        Self {
            classes,
            per_class,
            dim,
            spread,
            center_box: default_center_box(),
        }
    }

    pub fn generate(&self, rng: &mut RngState) -> Result<LabeledDataset> {
        let (k, n_c, d) = (self.classes, self.per_class, self.dim);
        if k < 2 || d < 2 {
            return Err(LnmError::precondition(format!(
                "blobs need k >= 2 and d >= 2, got k={k}, d={d}"
            )));
        }
        if n_c == 0 {
            return Err(LnmError::EmptyClass { class: 0 });
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) || !(self.center_box > 0.0) {
            return Err(LnmError::precondition("spread and center_box must be positive"));
        }
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
        while centers.len() < k {
            let c: Vec<f64> = (0..d)
                .map(|_| rng.random_range(-self.center_box..self.center_box))
                .collect();
            if centers.iter().all(|o| o != &c) {
                centers.push(c);
            }
        }
        let noise = Normal::new(0.0, self.spread).expect("validated spread");
        let n = k * n_c;
        let mut features = Array2::<f32>::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for (class, center) in centers.iter().enumerate() {
            for s in 0..n_c {
                let row = class * n_c + s;
                for (j, c) in center.iter().enumerate() {
                    features[[row, j]] = (c + noise.sample(rng)) as f32;
                }
                labels.push(class);
            }
        }
        LabeledDataset::new(features, labels.clone(), Some(labels), k)
    }
}

pub fn make_blobs(k: usize, n_per_class: usize, d: usize, spread: f64, rng: &mut RngState) -> Result<LabeledDataset> {
    BlobSpec::new(k, n_per_class, d, spread).generate(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = make_blobs(3, 20, 4, 1.0, &mut RngState::new(8)).unwrap();
        let b = make_blobs(3, 20, 4, 1.0, &mut RngState::new(8)).unwrap();
        assert_eq!(a, b);
        let c = make_blobs(3, 20, 4, 1.0, &mut RngState::new(9)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn preconditions() {
        let mut rng = RngState::new(1);
        assert!(matches!(
            make_blobs(3, 0, 4, 1.0, &mut rng),
            Err(LnmError::EmptyClass { .. })
        ));
        assert!(make_blobs(1, 5, 4, 1.0, &mut rng).is_err());
        assert!(make_blobs(3, 5, 1, 1.0, &mut rng).is_err());
    }

    #[test]
    fn labels_are_clean_copies() {
        let ds = make_blobs(4, 10, 3, 0.5, &mut RngState::new(2)).unwrap();
        assert_eq!(ds.clean_labels().unwrap(), ds.observed_labels());
        assert_eq!(ds.n(), 40);
    }
}
