//! Procedural road-like scenes: a ground plane receding towards the top of
//! the image plus axis-aligned upright rectangles standing on it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::init_rng;
use crate::tensor::Tensor;

/// Depth storage step in millimetres; generated depths lie on this grid.
pub const DEPTH_STEP_MM: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub primitives: usize,
    pub seed: u64,
}

impl SceneConfig {
    pub fn new(height: usize, width: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            d_min: 2000.0,
            d_max: 80000.0,
            primitives: 6,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_max > self.d_min && self.d_max.is_finite()) {
            return Err(Error::config(format!(
                "depth range [{}, {}] must satisfy 0 < d_min < d_max",
                self.d_min, self.d_max
            )));
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(16) || !self.width.is_multiple_of(16) {
            return Err(Error::config(format!(
                "scene size {}x{} must be a positive multiple of 16",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Rows above this index carry no ground truth.
    pub fn unlabeled_rows(&self) -> usize {
        self.height / 8
    }
}

/// An upright rectangle with constant or horizontally sloped depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    /// Depth at column `x0`.
    pub depth: f64,
    /// Relative depth change from `x0` to `x1`.
    pub slope: f64,
    pub color: [f64; 3],
}

impl Rect {
    /// Depth at `(x, y)` if covered, before clamping.
    pub fn depth_at(&self, x: usize, y: usize) -> Option<f64> {
        if x < self.x0 || x >= self.x1 || y < self.y0 || y >= self.y1 {
            return None;
        }
        let t = (x - self.x0) as f64 / (self.x1 - self.x0).max(1) as f64;
        Some(self.depth * (1.0 + self.slope * t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cfg: SceneConfig,
    pub ground_color: [f64; 3],
    pub sky_color: [f64; 3],
    pub rects: Vec<Rect>,
}

impl Scene {
    pub fn layout(cfg: &SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = init_rng(cfg.seed);
        let ground_color = random_color(&mut rng);
        let sky_color = random_color(&mut rng);
        let (h, w) = (cfg.height, cfg.width);
        let first_labeled = cfg.unlabeled_rows();
        let mut rects = Vec::with_capacity(cfg.primitives);
        for _ in 0..cfg.primitives {
            let rw = rng.gen_range((w / 16).max(1)..=(w / 3).max(1));
            let x0 = rng.gen_range(0..=w - rw);
            let bottom = rng.gen_range(h / 4..h) + 1;
            let rh = rng.gen_range((h / 8).max(1)..=(h / 2).max(1));
            let y0 = bottom.saturating_sub(rh).max(first_labeled / 2);
            let depth = (ground_depth(cfg, bottom - 1) * rng.gen_range(0.6..1.0)).max(cfg.d_min);
            let slope = if rng.gen_bool(0.5) {
                rng.gen_range(-0.3..0.3)
            } else {
                0.0
            };
            rects.push(Rect {
                x0,
                x1: x0 + rw,
                y0,
                y1: bottom,
                depth,
                slope,
                color: random_color(&mut rng),
            });
        }
        Ok(Self {
            cfg: cfg.clone(),
            ground_color,
            sky_color,
            rects,
        })
    }

    /// Nearest surface depth at a pixel, clamped to the scene range and
    /// snapped to the storage grid, plus the colour of that surface.
    pub fn surface(&self, x: usize, y: usize) -> (f64, [f64; 3]) {
        let mut depth = ground_depth(&self.cfg, y);
        let mut color = self.ground_color;
        for r in &self.rects {
            if let Some(d) = r.depth_at(x, y) {
                if d < depth {
                    depth = d;
                    color = r.color;
                }
            }
        }
        (self.quantize(depth), color)
    }

    fn quantize(&self, d: f64) -> f64 {
        let lo = (self.cfg.d_min / DEPTH_STEP_MM).ceil() * DEPTH_STEP_MM;
        let hi = (self.cfg.d_max / DEPTH_STEP_MM).floor() * DEPTH_STEP_MM;
        ((d / DEPTH_STEP_MM).round() * DEPTH_STEP_MM).clamp(lo, hi)
    }

    /// Renders `(rgb [3,H,W], gt [1,H,W])`.
    pub fn render(&self) -> (Tensor, Tensor) {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let mut rgb = Tensor::zeros(&[3, h, w]);
        let mut gt = Tensor::zeros(&[1, h, w]);
        let span = self.cfg.d_max - self.cfg.d_min;
        for y in 0..h {
            for x in 0..w {
                let (depth, color) = self.surface(x, y);
                let labeled = y >= self.cfg.unlabeled_rows();
                let (shade, color) = if labeled || depth < ground_depth(&self.cfg, y) {
                    (0.3 + 0.7 * (self.cfg.d_max - depth) / span, color)
                } else {
                    (1.0, self.sky_color)
                };
                for c in 0..3 {
                    rgb.data_mut()[(c * h + y) * w + x] = (color[c] * shade).clamp(0.0, 1.0);
                }
                if labeled {
                    gt.data_mut()[y * w + x] = depth;
                }
            }
        }
        (rgb, gt)
    }
}

/// Ground plane depth at row `y`: inverse depth is linear in the row index,
/// from `1/d_max` at the top row to `1/d_min` at the bottom row.
pub fn ground_depth(cfg: &SceneConfig, y: usize) -> f64 {
    let t = y as f64 / (cfg.height - 1).max(1) as f64;
    let inv = 1.0 / cfg.d_max + (1.0 / cfg.d_min - 1.0 / cfg.d_max) * t;
    1.0 / inv
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.gen_range(0.2..1.0),
        rng.gen_range(0.2..1.0),
        rng.gen_range(0.2..1.0),
    ]
}

/// Deterministic scene for `cfg.seed`: `(rgb [3,H,W], gt [1,H,W])`.
pub fn gen_scene(cfg: &SceneConfig) -> Result<(Tensor, Tensor)> {
    Ok(Scene::layout(cfg)?.render())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig::new(32, 64, 9);
        assert_eq!(gen_scene(&cfg).unwrap(), gen_scene(&cfg).unwrap());
        let other = SceneConfig { seed: 10, ..cfg };
        assert_ne!(
            gen_scene(&other).unwrap().1,
            gen_scene(&SceneConfig::new(32, 64, 9)).unwrap().1
        );
    }

    #[test]
    fn zero_primitives_is_ground_plane_only() {
        let cfg = SceneConfig {
            primitives: 0,
            ..SceneConfig::new(32, 32, 1)
        };
        let scene = Scene::layout(&cfg).unwrap();
        let (_, gt) = gen_scene(&cfg).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let v = gt.at(&[0, y, x]);
                if y < cfg.unlabeled_rows() {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, scene.quantize(ground_depth(&cfg, y)));
                }
            }
            // constant along each row
        }
        let row = |y: usize| gt.at(&[0, y, 0]);
        assert!(row(31) < row(20) && row(20) < row(8));
    }

    #[test]
    fn overlapping_rectangles_take_the_minimum_depth() {
        let cfg = SceneConfig {
            primitives: 12,
            ..SceneConfig::new(48, 64, 21)
        };
        let scene = Scene::layout(&cfg).unwrap();
        let (_, gt) = scene.render();
        let mut overlaps = 0;
        for y in cfg.unlabeled_rows()..cfg.height {
            for x in 0..cfg.width {
                let covering: Vec<f64> = scene.rects.iter().filter_map(|r| r.depth_at(x, y)).collect();
                if covering.len() > 1 {
                    overlaps += 1;
                }
                let mut expect = ground_depth(&cfg, y);
                for d in covering {
                    if d < expect {
                        expect = d;
                    }
                }
                assert_eq!(gt.at(&[0, y, x]), scene.quantize(expect));
            }
        }
        assert!(overlaps > 0, "seed should produce overlapping rectangles");
    }

    #[test]
    fn labeled_depths_stay_in_range() {
        for seed in 0..8 {
            let cfg = SceneConfig::new(32, 96, seed);
            let (rgb, gt) = gen_scene(&cfg).unwrap();
            assert!(gt
                .data()
                .iter()
                .all(|&d| d == 0.0 || (cfg.d_min..=cfg.d_max).contains(&d)));
            assert!(rgb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let unlabeled = cfg.unlabeled_rows() * cfg.width;
            assert!(gt.data()[..unlabeled].iter().all(|&d| d == 0.0));
            assert!(gt.data()[unlabeled..].iter().all(|&d| d > 0.0));
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SceneConfig::new(30, 32, 0).validate().is_err());
        let mut c = SceneConfig::new(32, 32, 0);
        c.d_min = 0.0;
        assert!(c.validate().is_err());
    }
}
