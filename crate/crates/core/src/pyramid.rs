//! Multi-scale feature pyramid configuration and patch-level views.

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial strides of the pyramid levels relative to the input image.
pub const STRIDES: [usize; 3] = [8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneKind {
    #[serde(rename = "small-cnn")]
    SmallCnn,
    #[serde(rename = "pretrained-resnet18")]
    PretrainedResnet18,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small-cnn" => Ok(BackboneKind::SmallCnn),
            "pretrained-resnet18" => Ok(BackboneKind::PretrainedResnet18),
            other => Err(Error::Config(format!(
                "unknown backbone {other:?} (expected small-cnn or pretrained-resnet18)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub backbone: BackboneKind,
    /// Pyramid level count L (1..=3, strides 8/16/32).
    pub levels: usize,
    /// Shared channel width C of every pyramid level.
    pub channels: usize,
    pub bifpn_repeats: usize,
    /// Weights file for the pretrained backbone; required for
    /// `pretrained-resnet18`, ignored for `small-cnn`.
    pub backbone_weights: Option<PathBuf>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            backbone: BackboneKind::SmallCnn,
            levels: 3,
            channels: 64,
            bifpn_repeats: 2,
            backbone_weights: None,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self, input_size: usize) -> Result<()> {
        if self.levels < 1 || self.levels > STRIDES.len() {
            return Err(Error::Config(format!(
                "levels must be in 1..={}, got {}",
                STRIDES.len(),
                self.levels
            )));
        }
        if self.channels < 8 {
            return Err(Error::Config(format!(
                "pyramid channel width must be >= 8, got {}",
                self.channels
            )));
        }
        let deepest = STRIDES[self.levels - 1];
        if input_size < deepest || input_size % deepest != 0 {
            return Err(Error::Shape(format!(
                "input size {input_size} incompatible with stride schedule {:?}: \
                 expected a positive multiple of {deepest} (e.g. {deepest}, {}, {})",
                &STRIDES[..self.levels],
                2 * deepest,
                4 * deepest
            )));
        }
        Ok(())
    }

    pub fn strides(&self) -> &[usize] {
        &STRIDES[..self.levels]
    }

    /// (height, width, stride) of each pyramid level for a given input size.
    pub fn grids(&self, input_size: usize) -> Vec<(usize, usize, usize)> {
        self.strides()
            .iter()
            .map(|&s| (input_size / s, input_size / s, s))
            .collect()
    }
}

/// L per-scale feature maps of one image, channel width C shared.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    /// Level i has shape C × H_i × W_i with H_i strictly decreasing.
    pub levels: Vec<Array3<f32>>,
    /// Spatial stride of each level relative to the input.
    pub scales: Vec<usize>,
}

/// Dense patch embeddings of one pyramid level: every grid cell is a patch.
#[derive(Debug, Clone)]
pub struct PatchSet {
    /// N × C patch embeddings, row-major over the level grid.
    pub patches: Array2<f32>,
    /// (row, col) on the level grid for each patch row.
    pub coords: Vec<(usize, usize)>,
    pub scale_index: usize,
    pub stride: usize,
}

/// Flatten each pyramid level into its dense patch set. Lossless: row j of
/// the patch matrix is the feature column at `coords[j]`.
pub fn patchify(pyramid: &FeaturePyramid) -> Vec<PatchSet> {
    pyramid
        .levels
        .iter()
        .enumerate()
        .map(|(i, level)| {
            let (c, h, w) = level.dim();
            let mut patches = Array2::<f32>::zeros((h * w, c));
            let mut coords = Vec::with_capacity(h * w);
            for r in 0..h {
                for col in 0..w {
                    for ch in 0..c {
                        patches[(r * w + col, ch)] = level[(ch, r, col)];
                    }
                    coords.push((r, col));
                }
            }
            PatchSet {
                patches,
                coords,
                scale_index: i,
                stride: pyramid.scales[i],
            }
        })
        .collect()
}

/// Inverse of [`patchify`] for one level; used to validate losslessness and
/// to scatter per-patch scores back onto the grid.
pub fn scatter_to_grid(set: &PatchSet, h: usize, w: usize) -> Array3<f32> {
    let c = set.patches.ncols();
    let mut level = Array3::<f32>::zeros((c, h, w));
    for (j, &(r, col)) in set.coords.iter().enumerate() {
        for ch in 0..c {
            level[(ch, r, col)] = set.patches[(j, ch)];
        }
    }
    level
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pyramid() -> FeaturePyramid {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mk = |h: usize| Array3::from_shape_fn((5, h, h), |_| rng.gen_range(-1.0..1.0f32));
        FeaturePyramid {
            levels: vec![mk(4), mk(2)],
            scales: vec![8, 16],
        }
    }

    #[test]
    fn patchify_is_lossless() {
        let pyr = random_pyramid();
        let sets = patchify(&pyr);
        assert_eq!(sets[0].patches.dim(), (16, 5));
        assert_eq!(sets[0].coords.len(), 16);
        for (set, level) in sets.iter().zip(pyr.levels.iter()) {
            let (_, h, w) = level.dim();
            let rebuilt = scatter_to_grid(set, h, w);
            assert_eq!(&rebuilt, level);
        }
    }

    #[test]
    fn patchify_locality() {
        let mut pyr = random_pyramid();
        let sets_a = patchify(&pyr);
        // Perturb a single spatial location of level 1.
        for ch in 0..5 {
            pyr.levels[1][(ch, 1, 0)] += 1.0;
        }
        let sets_b = patchify(&pyr);
        assert_eq!(sets_a[0].patches, sets_b[0].patches);
        let idx = sets_a[1].coords.iter().position(|&c| c == (1, 0)).unwrap();
        for j in 0..sets_a[1].patches.nrows() {
            let same = sets_a[1].patches.row(j) == sets_b[1].patches.row(j);
            assert_eq!(same, j != idx);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExtractorConfig::default();
        assert!(cfg.validate(64).is_ok());
        assert!(cfg.validate(48).is_err());
        assert!(matches!(cfg.validate(30), Err(Error::Shape(_))));
        cfg.levels = 5;
        assert!(cfg.validate(64).is_err());
        cfg.levels = 1;
        // With one level only a multiple of 8 is needed.
        assert!(cfg.validate(24).is_ok());
        cfg.channels = 4;
        assert!(cfg.validate(24).is_err());
    }
}
