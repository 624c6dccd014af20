//! Per-bag matrices shared by the generator and discriminator forwards.

use ndarray::Array2;

use crate::data::FeatureBag;
use crate::error::{Error, Result};

/// f64 views of one bag, prepared once and reused across forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct BagTensors {
    /// All rows, padding included (m×c).
    pub features: Array2<f64>,
    /// Valid rows only.
    pub valid_features: Array2<f64>,
    /// Masked region-mean operator (regions × m): row τ holds 1/n_τ on the
    /// valid patches of region τ and zero elsewhere.
    pub region_pool: Array2<f64>,
}

impl BagTensors {
    pub fn new(bag: &FeatureBag) -> Result<Self> {
        let n_valid = bag.n_valid();
        if n_valid == 0 {
            return Err(Error::AllMasked);
        }
        let features = bag.features.mapv(f64::from);
        let valid_rows: Vec<usize> = (0..bag.n_patches()).filter(|&j| bag.valid[j]).collect();
        let valid_features = features.select(ndarray::Axis(0), &valid_rows);

        let n_regions = bag.n_regions();
        let mut counts = vec![0usize; n_regions];
        for (&r, &v) in bag.region_ids.iter().zip(&bag.valid) {
            if v {
                counts[r] += 1;
            }
        }
        if let Some(r) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyRegion(r));
        }
        let mut region_pool = Array2::zeros((n_regions, bag.n_patches()));
        for (j, (&r, &v)) in bag.region_ids.iter().zip(&bag.valid).enumerate() {
            if v {
                region_pool[[r, j]] = 1.0 / counts[r] as f64;
            }
        }
        Ok(BagTensors {
            features,
            valid_features,
            region_pool,
        })
    }

    pub fn n_regions(&self) -> usize {
        self.region_pool.nrows()
    }

    pub fn n_patches(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Masked mean of raw features per region (regions × c).
    pub fn region_means(&self) -> Array2<f64> {
        self.region_pool.dot(&self.features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(valid: Vec<bool>) -> FeatureBag {
        FeatureBag {
            patient_id: "p".into(),
            features: Array2::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f32),
            coords: (0..4).map(|j| [0, j]).collect(),
            region_ids: vec![0, 0, 1, 1],
            valid,
            patches_per_region: 2,
        }
    }

    #[test]
    fn pool_ignores_padding() {
        let t = BagTensors::new(&bag(vec![true, false, true, true])).unwrap();
        let means = t.region_means();
        assert_eq!(means.row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(means.row(1).to_vec(), vec![5.0, 6.0]);
        assert_eq!(t.valid_features.nrows(), 3);
    }

    #[test]
    fn all_masked_is_an_error() {
        assert!(matches!(BagTensors::new(&bag(vec![false; 4])), Err(Error::AllMasked)));
    }

    #[test]
    fn empty_region_is_an_error() {
        let err = BagTensors::new(&bag(vec![true, true, false, false])).unwrap_err();
        assert!(matches!(err, Error::EmptyRegion(1)));
    }
}
