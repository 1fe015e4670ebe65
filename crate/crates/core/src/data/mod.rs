//! Synthetic depth-completion data: scenes, LiDAR-like sparsification and file I/O.

pub mod dataset;
pub mod pgm;
pub mod scene;
pub mod sparsify;

pub use dataset::{load_sample, make_dataset, Manifest, ManifestEntry};
pub use scene::{gen_scene, Scene, SceneConfig};
pub use sparsify::{patterns, sparsify, SparsifyConfig, SparsifyPattern};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One training/evaluation example. Depths are in millimetres, 0 = missing.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSample {
    /// `[3,H,W]` in `[0,1]`.
    pub rgb: Tensor,
    /// `[1,H,W]`.
    pub sparse: Tensor,
    /// `[1,H,W]`, 1 where `sparse > 0`.
    pub mask: Tensor,
    /// `[1,H,W]`, 0 where unlabeled.
    pub gt: Tensor,
}

impl DepthSample {
    /// Builds a sample, deriving the availability mask from `sparse`.
    pub fn new(rgb: Tensor, sparse: Tensor, gt: Tensor) -> Result<Self> {
        let mask = availability_mask(&sparse);
        let s = Self { rgb, sparse, mask, gt };
        s.validate()?;
        Ok(s)
    }

    pub fn height(&self) -> usize {
        self.gt.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.gt.shape()[2]
    }

    /// Checks shapes, finiteness, non-negativity, the mask rule and that
    /// every measured sparse depth equals the ground truth at that pixel.
    pub fn validate(&self) -> Result<()> {
        let [_, h, w] = self.gt.dims3("sample gt")?;
        if self.rgb.shape() != [3, h, w] {
            return Err(Error::dim("sample rgb", self.rgb.shape(), &[3, h, w]));
        }
        for t in [&self.sparse, &self.mask] {
            if t.shape() != [1, h, w] {
                return Err(Error::dim("sample map", t.shape(), &[1, h, w]));
            }
        }
        for t in [&self.sparse, &self.gt, &self.rgb] {
            if t.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Range("sample values must be finite and non-negative".into()));
            }
        }
        for ((&s, &m), &g) in self.sparse.data().iter().zip(self.mask.data()).zip(self.gt.data()) {
            if (m == 1.0) != (s > 0.0) || (m != 0.0 && m != 1.0) {
                return Err(Error::Contract(
                    "mask must be 1 exactly where sparse depth is present".into(),
                ));
            }
            if s > 0.0 && s != g {
                return Err(Error::Contract(format!(
                    "sparse depth {s} differs from ground truth {g}"
                )));
            }
        }
        Ok(())
    }
}

/// 1 where `depth > 0`, else 0.
pub fn availability_mask(depth: &Tensor) -> Tensor {
    Tensor::new(
        depth.shape().to_vec(),
        depth.data().iter().map(|&d| if d > 0.0 { 1.0 } else { 0.0 }).collect(),
    )
    .expect("same shape")
}

/// Generates a complete sample from scene and sparsification settings.
pub fn gen_sample(scene: &SceneConfig, sparse_cfg: &SparsifyConfig) -> Result<DepthSample> {
    let (rgb, gt) = gen_scene(scene)?;
    let (sparse, mask) = sparsify(
        &gt,
        sparse_cfg.keep_rate,
        &sparse_cfg.pattern,
        sparsify::sparsify_seed(scene.seed),
    )?;
    let s = DepthSample { rgb, sparse, mask, gt };
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_samples_satisfy_invariants() {
        for seed in 0..4 {
            let scene = SceneConfig::new(32, 48, seed);
            for pattern in ["uniform", "scanline"] {
                let s = gen_sample(&scene, &SparsifyConfig::new(0.1, pattern)).unwrap();
                s.validate().unwrap();
                assert!(s.mask.data().contains(&1.0));
            }
        }
    }

    #[test]
    fn validate_catches_mask_and_value_violations() {
        let scene = SceneConfig::new(16, 16, 1);
        let mut s = gen_sample(&scene, &SparsifyConfig::new(0.5, "uniform")).unwrap();
        let idx = s.mask.data().iter().position(|&m| m == 1.0).unwrap();
        s.mask.data_mut()[idx] = 0.0;
        assert!(s.validate().is_err());
        s.mask.data_mut()[idx] = 1.0;
        s.sparse.data_mut()[idx] += 4.0;
        assert!(s.validate().is_err());
    }
}
