//! Turning dense ground truth into sparse LiDAR-like measurements.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::init_rng;
use crate::registry::{Named, Registry};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SparsifyConfig {
    pub keep_rate: f64,
    pub pattern: String,
}

impl SparsifyConfig {
    pub fn new(keep_rate: f64, pattern: &str) -> Self {
        Self {
            keep_rate,
            pattern: pattern.to_string(),
        }
    }
}

/// Decides which labeled pixels survive.
pub trait SparsifyPattern: Named + Send + Sync {
    /// Returns a keep flag per pixel of an `h x w` map; only pixels with
    /// `labeled[i]` may be kept.
    fn select(&self, labeled: &[bool], h: usize, w: usize, keep_rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool>;
}

/// Independent Bernoulli(keep_rate) draw per labeled pixel.
pub struct Uniform;

/// Every k-th row, `k = round(1 / keep_rate)`, starting at row 0.
pub struct Scanline;

impl Named for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }
}

impl Named for Scanline {
    fn name(&self) -> &'static str {
        "scanline"
    }
}

impl SparsifyPattern for Uniform {
    fn select(&self, labeled: &[bool], _h: usize, _w: usize, keep_rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
        labeled.iter().map(|&l| l && rng.gen_bool(keep_rate)).collect()
    }
}

impl SparsifyPattern for Scanline {
    fn select(&self, labeled: &[bool], _h: usize, w: usize, keep_rate: f64, _rng: &mut ChaCha8Rng) -> Vec<bool> {
        let k = scanline_period(keep_rate);
        labeled
            .iter()
            .enumerate()
            .map(|(i, &l)| l && (i / w).is_multiple_of(k))
            .collect()
    }
}

pub fn scanline_period(keep_rate: f64) -> usize {
    ((1.0 / keep_rate).round() as usize).max(1)
}

pub fn patterns() -> Registry<dyn SparsifyPattern> {
    Registry::<dyn SparsifyPattern>::new("sparsify pattern")
        .register(Arc::new(Uniform))
        .register(Arc::new(Scanline))
}

/// Seed for the sparsification stream of a sample whose scene uses `scene_seed`.
pub fn sparsify_seed(scene_seed: u64) -> u64 {
    scene_seed ^ 0x5EED_5BA5_E000_0001
}

/// Keeps a subset of the labeled pixels of `gt [1,H,W]`.
/// Returns `(sparse, mask)`; `sparse` equals `gt` where kept and 0 elsewhere.
pub fn sparsify(gt: &Tensor, keep_rate: f64, pattern: &str, seed: u64) -> Result<(Tensor, Tensor)> {
    if !(keep_rate > 0.0 && keep_rate <= 1.0) {
        return Err(Error::config(format!("keep rate {keep_rate} must lie in (0, 1]")));
    }
    let [c, h, w] = gt.dims3("sparsify")?;
    if c != 1 {
        return Err(Error::dim("sparsify", gt.shape(), &[1, h, w]));
    }
    let pattern = patterns().get(pattern)?;
    let labeled: Vec<bool> = gt.data().iter().map(|&d| d > 0.0).collect();
    let mut rng = init_rng(seed);
    let keep = pattern.select(&labeled, h, w, keep_rate, &mut rng);
    let sparse: Vec<f64> = keep
        .iter()
        .zip(gt.data())
        .map(|(&k, &d)| if k { d } else { 0.0 })
        .collect();
    let mask: Vec<f64> = keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
    Ok((Tensor::new(vec![1, h, w], sparse)?, Tensor::new(vec![1, h, w], mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[1, h, w], |i| if i < w { 0.0 } else { 1000.0 + i as f64 })
    }

    #[test]
    fn keep_rate_one_keeps_every_labeled_pixel() {
        let gt = ramp(8, 8);
        for p in ["uniform", "scanline"] {
            let (sparse, _) = sparsify(&gt, 1.0, p, 0).unwrap();
            assert_eq!(sparse, gt);
        }
    }

    #[test]
    fn scanline_rows_follow_period() {
        let gt = Tensor::full(&[1, 12, 4], 5000.0);
        let (_, mask) = sparsify(&gt, 0.25, "scanline", 0).unwrap();
        for y in 0..12 {
            let expect = if y % 4 == 0 { 1.0 } else { 0.0 };
            for x in 0..4 {
                assert_eq!(mask.at(&[0, y, x]), expect);
            }
        }
        assert_eq!(scanline_period(0.3), 3);
    }

    #[test]
    fn uniform_rate_is_close_to_keep_rate() {
        let gt = Tensor::full(&[1, 64, 64], 3000.0);
        let (_, mask) = sparsify(&gt, 0.2, "uniform", 11).unwrap();
        let frac = mask.data().iter().sum::<f64>() / 4096.0;
        assert!((frac - 0.2).abs() < 0.03, "{frac}");
    }

    #[test]
    fn bad_inputs_rejected() {
        let gt = ramp(4, 4);
        assert!(sparsify(&gt, 0.0, "uniform", 0).is_err());
        assert!(sparsify(&gt, 1.5, "uniform", 0).is_err());
        assert!(matches!(sparsify(&gt, 0.5, "radial", 0), Err(Error::Lookup { .. })));
    }

    proptest! {
        #[test]
        fn mask_and_values_agree(seed in any::<u64>(), rate in 0.01f64..=1.0, scan in any::<bool>()) {
            let gt = ramp(8, 12);
            let pattern = if scan { "scanline" } else { "uniform" };
            let (sparse, mask) = sparsify(&gt, rate, pattern, seed).unwrap();
            for i in 0..gt.numel() {
                let (s, m, g) = (sparse.data()[i], mask.data()[i], gt.data()[i]);
                prop_assert_eq!(m == 1.0, s > 0.0);
                prop_assert!(s == 0.0 || s == g);
                prop_assert!(g > 0.0 || m == 0.0);
            }
        }
    }
}
