use ndarray::{s, Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GridError;

/// Rectangular sub-grid in grid-cell units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub row_off: usize,
    pub col_off: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn full(height: usize, width: usize) -> Self {
        Self { row_off: 0, col_off: 0, height, width }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_off..self.row_off + self.height).contains(&row)
            && (self.col_off..self.col_off + self.width).contains(&col)
    }

    /// Checks bounds within an `H x W` grid and alignment to `patch`.
    pub fn validate(&self, grid_h: usize, grid_w: usize, patch: usize) -> Result<(), GridError> {
        let fits = self.row_off + self.height <= grid_h && self.col_off + self.width <= grid_w;
        let aligned = patch > 0
            && self.height >= patch
            && self.width >= patch
            && [self.row_off, self.col_off, self.height, self.width].iter().all(|x| x % patch == 0);
        if !fits || !aligned {
            return Err(GridError::BadRegion { region: *self, grid: (grid_h, grid_w), patch });
        }
        Ok(())
    }

    /// Copy of this region from a `[V, H, W]` field.
    pub fn extract<T: Clone>(&self, field: ArrayView3<'_, T>) -> Array3<T> {
        field
            .slice(s![.., self.row_off..self.row_off + self.height, self.col_off..self.col_off + self.width])
            .to_owned()
    }
}

/// Ordered list of crop regions.
pub type CropPlan = Vec<Region>;

fn crop_size(h: usize, w: usize, split: usize, patch: usize) -> Result<(usize, usize), GridError> {
    if split == 0 || !h.is_multiple_of(split) || !w.is_multiple_of(split) {
        return Err(GridError::IndivisibleGrid { height: h, width: w, split, patch });
    }
    let (ch, cw) = (h / split, w / split);
    if patch == 0 || ch % patch != 0 || cw % patch != 0 {
        return Err(GridError::IndivisibleGrid { height: h, width: w, split, patch });
    }
    Ok((ch, cw))
}

/// The `split^2` non-overlapping `(H/S) x (W/S)` tiles, row-major by offset.
pub fn canonical_crops(h: usize, w: usize, split: usize, patch: usize) -> Result<CropPlan, GridError> {
    let (ch, cw) = crop_size(h, w, split, patch)?;
    let mut plan = Vec::with_capacity(split * split);
    for i in 0..split {
        for j in 0..split {
            plan.push(Region { row_off: i * ch, col_off: j * cw, height: ch, width: cw });
        }
    }
    Ok(plan)
}

/// One `(H/S) x (W/S)` region at a uniformly drawn patch-aligned offset.
pub fn random_crop(h: usize, w: usize, split: usize, patch: usize, seed: u64) -> Result<Region, GridError> {
    let (ch, cw) = crop_size(h, w, split, patch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (h - ch) / patch + 1;
    let cols = (w - cw) / patch + 1;
    Ok(Region {
        row_off: rng.gen_range(0..rows) * patch,
        col_off: rng.gen_range(0..cols) * patch,
        height: ch,
        width: cw,
    })
}
