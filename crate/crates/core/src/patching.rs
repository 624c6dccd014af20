//! Big-to-small patching: grouping patch coordinates into η×η regions and
//! packing features into a region-ordered, padded [`FeatureBag`].
//!
//! Background filtering is the caller's job; only tissue patches are passed in.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::FeatureBag;
use crate::error::{Error, Result};

pub const DEFAULT_ETA: usize = 4;
pub const DEFAULT_PATCH_PX: usize = 256;
pub const DEFAULT_MAGNIFICATION: f64 = 20.0;

/// Patch coordinates on the grid at a fixed magnification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    /// (row, col) of every patch, in patch units.
    pub coords: Vec<[i32; 2]>,
    /// Region side length in patches.
    pub eta: usize,
    pub patch_px: usize,
    pub magnification: f64,
}

impl PatchGrid {
    pub fn new(coords: Vec<[i32; 2]>) -> Self {
        PatchGrid {
            coords,
            eta: DEFAULT_ETA,
            patch_px: DEFAULT_PATCH_PX,
            magnification: DEFAULT_MAGNIFICATION,
        }
    }

    pub fn with_eta(mut self, eta: usize) -> Self {
        self.eta = eta;
        self
    }

    pub fn patches_per_region(&self) -> usize {
        self.eta * self.eta
    }

    fn region_key(&self, c: [i32; 2]) -> (i32, i32) {
        let eta = self.eta as i32;
        (c[0].div_euclid(eta), c[1].div_euclid(eta))
    }

    fn check(&self) -> Result<()> {
        if self.eta == 0 {
            return Err(Error::Config("eta must be at least 1".into()));
        }
        if let Some(c) = self.coords.iter().find(|c| c[0] < 0 || c[1] < 0) {
            return Err(Error::Config(format!("negative patch coordinate {c:?}")));
        }
        Ok(())
    }
}

/// Dense region index of every patch; regions are numbered in lexicographic
/// (region_row, region_col) order.
pub fn assign_regions(grid: &PatchGrid) -> Result<Vec<usize>> {
    grid.check()?;
    let keys = region_index(grid);
    Ok(grid.coords.iter().map(|&c| keys[&grid.region_key(c)]).collect())
}

fn region_index(grid: &PatchGrid) -> BTreeMap<(i32, i32), usize> {
    let mut keys: BTreeMap<(i32, i32), usize> =
        grid.coords.iter().map(|&c| (grid.region_key(c), 0)).collect();
    for (i, v) in keys.values_mut().enumerate() {
        *v = i;
    }
    keys
}

/// Packs patch features into a bag: regions in dense order, patches within
/// a region row-major over the η×η cells. Cells without a patch become
/// zero rows flagged invalid in the mask.
pub fn build_bag(patient_id: &str, grid: &PatchGrid, features: &Array2<f32>) -> Result<FeatureBag> {
    if grid.coords.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if features.nrows() != grid.coords.len() {
        return Err(Error::RowCountMismatch {
            rows: features.nrows(),
            coords: grid.coords.len(),
        });
    }
    grid.check()?;
    let keys = region_index(grid);
    let mut by_cell: BTreeMap<[i32; 2], usize> = BTreeMap::new();
    for (j, &c) in grid.coords.iter().enumerate() {
        if by_cell.insert(c, j).is_some() {
            return Err(Error::InvalidBag(format!("duplicate patch coordinate {c:?}")));
        }
    }

    let eta = grid.eta as i32;
    let s = grid.patches_per_region();
    let m = keys.len() * s;
    let c = features.ncols();
    let mut out = Array2::<f32>::zeros((m, c));
    let mut coords = Vec::with_capacity(m);
    let mut region_ids = Vec::with_capacity(m);
    let mut valid = Vec::with_capacity(m);
    for (&(rr, rc), &region) in &keys {
        for dr in 0..eta {
            for dc in 0..eta {
                let cell = [rr * eta + dr, rc * eta + dc];
                let row = coords.len();
                match by_cell.get(&cell) {
                    Some(&j) => {
                        out.row_mut(row).assign(&features.row(j));
                        valid.push(true);
                    }
                    None => valid.push(false),
                }
                coords.push(cell);
                region_ids.push(region);
            }
        }
    }
    let bag = FeatureBag {
        patient_id: patient_id.to_string(),
        features: out,
        coords,
        region_ids,
        valid,
        patches_per_region: s,
    };
    debug_assert!(bag.validate().is_ok());
    Ok(bag)
}
