//! Coarse-to-fine depth completion network.
//!
//! Input is `[rgb ; sparse ; mask]` (5 channels). A strided conv encoder
//! reduces it by the output stride, the enhancer refines the bottleneck,
//! and nearest-neighbour up-projection units with reduced skip features
//! decode a coarse depth map. Two residual hourglass blocks over
//! `[coarse ; sparse ; mask]` then correct it locally.

mod checkpoint;
pub mod config;
pub mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, CONFIG_ENTRY};
pub use config::NetworkConfig;

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{pgm, DepthSample};
use crate::enhancer::{enhancer_param_count, ScEnhancer};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};
use crate::tensor::{Tape, Tensor, Var};
use layers::{layer_rng, Conv, Init};

pub const INPUT_CHANNELS: usize = 5;
const REFINE_INPUT_CHANNELS: usize = 3;
const HOURGLASS_BLOCKS: usize = 2;

/// Whether dropout is active for a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Debug)]
struct Skip {
    level: usize,
    reduce: Conv,
}

#[derive(Debug)]
struct Hourglass {
    down: Conv,
    mid: Conv,
    up: Conv,
}

#[derive(Debug)]
struct Refiner {
    lift: Conv,
    blocks: Vec<Hourglass>,
    out: Conv,
}

/// Network structure plus its parameters.
#[derive(Debug)]
pub struct Network {
    cfg: NetworkConfig,
    params: ParamSet,
    encoder: Vec<Conv>,
    bottleneck: Conv,
    enhancer: Option<ScEnhancer>,
    /// One per up-projection unit, coarsest first.
    decoder: Vec<Conv>,
    skips: Vec<Skip>,
    head: Conv,
    refiner: Option<Refiner>,
}

/// Handles produced by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub coarse: Var,
    pub refined: Var,
    /// Named intermediate activations, in execution order.
    pub layers: Vec<(String, Var)>,
}

impl ForwardOutput {
    pub fn layer(&self, name: &str) -> Result<Var> {
        self.layers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Lookup {
                kind: "layer",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> Vec<&str> {
        self.layers.iter().map(|(n, _)| n.as_str()).collect()
    }
}

impl Network {
    /// Builds and initializes a network from `cfg.seed`.
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let mut params = ParamSet::new();
        let n = cfg.stages();

        let mut encoder = Vec::with_capacity(n);
        let mut cin = INPUT_CHANNELS;
        for level in 1..=n {
            let w = cfg.encoder_width(level);
            encoder.push(Conv::declare(
                &mut params,
                &format!("enc{level}"),
                cin,
                w,
                3,
                2,
                Init::Kaiming,
                seed,
            )?);
            cin = w;
        }
        let c_enc = cfg.bottleneck_channels;
        let bottleneck = Conv::declare(&mut params, "bottleneck", cin, c_enc, 3, 1, Init::Kaiming, seed)?;

        let enhancer = if cfg.enhancer_active() {
            let mut rng = layer_rng(seed, "enhancer");
            Some(ScEnhancer::declare(
                &mut params,
                "enhancer.",
                &cfg.enhancer(),
                &mut rng,
            )?)
        } else {
            None
        };

        let mut decoder = Vec::with_capacity(n);
        let mut skips = Vec::new();
        let mut cin = c_enc;
        for unit in 1..=n {
            let level = n - unit;
            let w = cfg.decoder_width(unit);
            decoder.push(Conv::declare(
                &mut params,
                &format!("up{unit}"),
                cin,
                w,
                3,
                1,
                Init::Kaiming,
                seed,
            )?);
            cin = w;
            if cfg.skip && level >= 1 {
                let reduce = Conv::declare(
                    &mut params,
                    &format!("skip{level}"),
                    cfg.encoder_width(level),
                    w,
                    1,
                    1,
                    Init::Kaiming,
                    seed,
                )?;
                skips.push(Skip { level, reduce });
                cin += w;
            }
        }
        let head = Conv::declare(&mut params, "head", cin, 1, 3, 1, Init::Kaiming, seed)?;
        // start near a plausible depth rather than on the ReLU boundary
        params.get_mut(head.b).data_mut()[0] = 1.0;

        let refiner = if cfg.refinement {
            let h = cfg.refine_channels;
            let lift = Conv::declare(
                &mut params,
                "refine.lift",
                REFINE_INPUT_CHANNELS,
                h,
                3,
                1,
                Init::Kaiming,
                seed,
            )?;
            let mut blocks = Vec::with_capacity(HOURGLASS_BLOCKS);
            for b in 1..=HOURGLASS_BLOCKS {
                let p = format!("refine.hg{b}");
                blocks.push(Hourglass {
                    down: Conv::declare(&mut params, &format!("{p}.down"), h, h, 3, 2, Init::Kaiming, seed)?,
                    mid: Conv::declare(&mut params, &format!("{p}.mid"), h, h, 3, 1, Init::Kaiming, seed)?,
                    up: Conv::declare(&mut params, &format!("{p}.up"), h, h, 3, 1, Init::Kaiming, seed)?,
                });
            }
            let out = Conv::declare(&mut params, "refine.out", h, 1, 3, 1, Init::Zero, seed)?;
            Some(Refiner { lift, blocks, out })
        } else {
            None
        };

        Ok(Self {
            cfg: cfg.clone(),
            params,
            encoder,
            bottleneck,
            enhancer,
            decoder,
            skips,
            head,
            refiner,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn enhancer(&self) -> Option<&ScEnhancer> {
        self.enhancer.as_ref()
    }

    /// Number of up-projection units in the decoder.
    pub fn up_units(&self) -> usize {
        self.decoder.len()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        sample: &DepthSample,
        mode: Mode<'_>,
    ) -> Result<ForwardOutput> {
        self.forward_maps(tape, bound, &sample.rgb, &sample.sparse, &sample.mask, mode)
    }

    /// Forward pass from raw maps: `rgb [3,H,W]`, `sparse`/`mask [1,H,W]`.
    pub fn forward_maps(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        rgb: &Tensor,
        sparse: &Tensor,
        mask: &Tensor,
        mode: Mode<'_>,
    ) -> Result<ForwardOutput> {
        let [c, h, w] = rgb.dims3("network rgb")?;
        if c != 3 {
            return Err(Error::dim("network rgb", rgb.shape(), &[3, h, w]));
        }
        for t in [sparse, mask] {
            if t.shape() != [1, h, w] {
                return Err(Error::dim("network input", t.shape(), &[1, h, w]));
            }
        }
        self.cfg.check_input(h, w)?;
        let scale = self.cfg.depth_scale_mm;
        let mut layers = Vec::new();

        let rgb_v = tape.constant(rgb.clone());
        let sparse_v = tape.constant(sparse.clone());
        let sparse_n = tape.scale(sparse_v, 1.0 / scale)?;
        let mask_v = tape.constant(mask.clone());
        let input = tape.concat_channels(&[rgb_v, sparse_n, mask_v])?;
        layers.push(("input".to_string(), input));

        let mut x = input;
        let mut features = Vec::with_capacity(self.encoder.len());
        for (i, conv) in self.encoder.iter().enumerate() {
            x = conv.apply_relu(tape, bound, x)?;
            layers.push((format!("enc{}", i + 1), x));
            features.push(x);
        }
        x = self.bottleneck.apply_relu(tape, bound, x)?;
        layers.push(("bottleneck".to_string(), x));

        if let Mode::Train(rng) = mode {
            if self.cfg.dropout > 0.0 {
                x = dropout(tape, x, self.cfg.dropout, rng)?;
            }
        }

        if let Some(enh) = &self.enhancer {
            let out = enh.forward(tape, bound, x)?;
            if let Some(a) = out.attention {
                layers.push(("attention".to_string(), a));
            }
            x = out.output;
            layers.push(("enhanced".to_string(), x));
        }

        let n = self.decoder.len();
        for (u, conv) in self.decoder.iter().enumerate() {
            let level = n - 1 - u;
            let up = tape.upsample2x(x)?;
            x = conv.apply_relu(tape, bound, up)?;
            if let Some(skip) = self.skips.iter().find(|s| s.level == level) {
                let f = features[level - 1];
                if tape.shape(f)[1..] != tape.shape(x)[1..] {
                    return Err(Error::dim("skip resolution", tape.shape(f), tape.shape(x)));
                }
                let r = skip.reduce.apply(tape, bound, f)?;
                x = tape.concat_channels(&[x, r])?;
            }
            layers.push((format!("up{}", u + 1), x));
        }
        let raw = self.head.apply(tape, bound, x)?;
        let raw = tape.scale(raw, scale)?;
        let coarse = tape.relu(raw)?;
        layers.push(("coarse".to_string(), coarse));

        let refined = match &self.refiner {
            None => coarse,
            Some(r) => {
                let coarse_n = tape.scale(coarse, 1.0 / scale)?;
                let rin = tape.concat_channels(&[coarse_n, sparse_n, mask_v])?;
                let mut y = r.lift.apply_relu(tape, bound, rin)?;
                for (b, hg) in r.blocks.iter().enumerate() {
                    let d = hg.down.apply_relu(tape, bound, y)?;
                    let m = hg.mid.apply_relu(tape, bound, d)?;
                    let u = tape.upsample2x(m)?;
                    let o = hg.up.apply(tape, bound, u)?;
                    y = tape.add(y, o)?;
                    layers.push((format!("hourglass{}", b + 1), y));
                }
                let delta = r.out.apply(tape, bound, y)?;
                let delta = tape.scale(delta, scale)?;
                let sum = tape.add(coarse, delta)?;
                tape.relu(sum)?
            }
        };
        layers.push(("refined".to_string(), refined));
        Ok(ForwardOutput {
            coarse,
            refined,
            layers,
        })
    }

    /// Evaluation-mode prediction `(coarse, refined)` in millimetres.
    pub fn predict(&self, sample: &DepthSample) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, sample, Mode::Eval)?;
        Ok((tape.value(out.coarse).clone(), tape.value(out.refined).clone()))
    }

    /// Per-channel `[H',W']` activations of the named layer, in eval mode.
    /// Rank-2 layers (the attention map) yield a single image.
    pub fn activations(&self, sample: &DepthSample, layer: &str) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, sample, Mode::Eval)?;
        let t = tape.value(out.layer(layer)?);
        match t.rank() {
            2 => Ok(vec![t.clone()]),
            3 => (0..t.shape()[0]).map(|c| t.channel(c)).collect(),
            _ => Err(Error::Contract(format!(
                "layer `{layer}` has unsupported rank {}",
                t.rank()
            ))),
        }
    }

    /// Writes one 16-bit PGM per channel of `layer` into `dir`
    /// (`<layer>_<channel>.pgm`, min-max normalized) and returns the maps.
    pub fn dump_activations(&self, sample: &DepthSample, layer: &str, dir: &Path) -> Result<Vec<Tensor>> {
        let maps = self.activations(sample, layer)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (c, m) in maps.iter().enumerate() {
            pgm::write_normalized(&dir.join(format!("{layer}_{c:03}.pgm")), m)?;
        }
        Ok(maps)
    }
}

/// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    let keep = 1.0 / (1.0 - p);
    let shape = tape.shape(x).to_vec();
    let mask = Tensor::from_fn(&shape, |_| if rng.gen_bool(p) { 0.0 } else { keep });
    let m = tape.constant(mask);
    tape.mul(x, m)
}

/// Closed-form trainable scalar count for `cfg`.
pub fn count_params(cfg: &NetworkConfig) -> Result<usize> {
    cfg.validate()?;
    let n = cfg.stages();
    let mut total = 0;
    let mut cin = INPUT_CHANNELS;
    for level in 1..=n {
        total += Conv::param_count(cin, cfg.encoder_width(level), 3);
        cin = cfg.encoder_width(level);
    }
    total += Conv::param_count(cin, cfg.bottleneck_channels, 3);
    if cfg.enhancer_active() {
        total += enhancer_param_count(&cfg.enhancer())?;
    }
    let mut cin = cfg.bottleneck_channels;
    for unit in 1..=n {
        let level = n - unit;
        let w = cfg.decoder_width(unit);
        total += Conv::param_count(cin, w, 3);
        cin = w;
        if cfg.skip && level >= 1 {
            total += Conv::param_count(cfg.encoder_width(level), w, 1);
            cin += w;
        }
    }
    total += Conv::param_count(cin, 1, 3);
    if cfg.refinement {
        let h = cfg.refine_channels;
        total += Conv::param_count(REFINE_INPUT_CHANNELS, h, 3);
        total += HOURGLASS_BLOCKS * 3 * Conv::param_count(h, h, 3);
        total += Conv::param_count(h, 1, 3);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_sample, SceneConfig, SparsifyConfig};

    fn small(refinement: bool) -> NetworkConfig {
        NetworkConfig {
            encoder_channels: vec![8, 16, 16],
            bottleneck_channels: 16,
            reduction: 4,
            refinement,
            seed: 5,
            ..NetworkConfig::default()
        }
    }

    fn sample(h: usize, w: usize) -> DepthSample {
        gen_sample(&SceneConfig::new(h, w, 3), &SparsifyConfig::new(0.1, "uniform")).unwrap()
    }

    #[test]
    fn output_shapes_and_unit_counts() {
        let s = sample(32, 96);
        for os in [8, 16] {
            let cfg = NetworkConfig {
                output_stride: os,
                ..small(true)
            };
            let net = Network::new(&cfg).unwrap();
            assert_eq!(net.up_units(), if os == 8 { 3 } else { 4 });
            let mut tape = Tape::new();
            let b = net.bind(&mut tape);
            let out = net.forward(&mut tape, &b, &s, Mode::Eval).unwrap();
            assert_eq!(tape.shape(out.coarse), [1, 32, 96]);
            assert_eq!(tape.shape(out.refined), [1, 32, 96]);
            let bottleneck = tape.shape(out.layer("bottleneck").unwrap()).to_vec();
            assert_eq!(bottleneck, vec![16, 32 / os, 96 / os]);
        }
    }

    #[test]
    fn count_params_matches_enumeration() {
        let mut cfgs = vec![NetworkConfig::default(), NetworkConfig::baseline(), small(false)];
        for os in [8, 16] {
            for skip in [false, true] {
                for channel in [None, Some("mean_only"), Some("variance_only"), Some("proposed")] {
                    cfgs.push(NetworkConfig {
                        output_stride: os,
                        skip,
                        channel: channel.map(str::to_string),
                        ..NetworkConfig::default()
                    });
                }
            }
        }
        cfgs.push(NetworkConfig {
            fusion: "concat".into(),
            ..NetworkConfig::default()
        });
        for cfg in cfgs {
            let net = Network::new(&cfg).unwrap();
            assert_eq!(count_params(&cfg).unwrap(), net.params().scalar_count(), "{cfg:?}");
        }
    }

    #[test]
    fn enhancer_delta_is_enhancer_param_count() {
        let on = NetworkConfig::default();
        let off = NetworkConfig {
            spatial: false,
            channel: None,
            ..on.clone()
        };
        let delta = count_params(&on).unwrap() - count_params(&off).unwrap();
        assert_eq!(delta, enhancer_param_count(&on.enhancer()).unwrap());
    }

    #[test]
    fn zero_scales_match_enhancer_off_network() {
        let s = sample(32, 64);
        let on = Network::new(&small(true)).unwrap();
        let off = Network::new(&NetworkConfig {
            spatial: false,
            channel: None,
            ..small(true)
        })
        .unwrap();
        let (c_on, r_on) = on.predict(&s).unwrap();
        let (c_off, r_off) = off.predict(&s).unwrap();
        assert_eq!(c_on, c_off);
        assert_eq!(r_on, r_off);
    }

    #[test]
    fn zero_refinement_output_is_pure_residual() {
        let s = sample(32, 64);
        let net = Network::new(&small(true)).unwrap();
        let (coarse, refined) = net.predict(&s).unwrap();
        assert_eq!(coarse, refined);
        assert!(coarse.data().iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn random_refinement_stays_finite_and_nonnegative() {
        let mut net = Network::new(&small(true)).unwrap();
        let mut rng = crate::params::init_rng(77);
        for (name, t) in net.params_mut().tensors_mut() {
            if name.starts_with("refine.out") {
                *t = Tensor::uniform(t.shape(), 1.0, &mut rng).with_requires_grad(true);
            }
        }
        for s in [sample(16, 16), {
            let mut z = sample(16, 16);
            z.sparse = Tensor::zeros(&[1, 16, 16]);
            z.mask = Tensor::zeros(&[1, 16, 16]);
            z
        }] {
            let (coarse, refined) = net.predict(&s).unwrap();
            assert_ne!(coarse, refined);
            assert!(refined.data().iter().all(|&d| d.is_finite() && d >= 0.0));
        }
    }

    #[test]
    fn zero_input_and_zero_bias_give_zero_bottleneck() {
        let mut net = Network::new(&small(false)).unwrap();
        for (name, t) in net.params_mut().tensors_mut() {
            if name.ends_with(".b") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::new();
        let b = net.bind(&mut tape);
        let z3 = Tensor::zeros(&[3, 16, 16]);
        let z1 = Tensor::zeros(&[1, 16, 16]);
        let out = net.forward_maps(&mut tape, &b, &z3, &z1, &z1, Mode::Eval).unwrap();
        let bn = tape.value(out.layer("bottleneck").unwrap());
        assert!(bn.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_zero_weights_give_zero_depth() {
        let mut net = Network::new(&small(true)).unwrap();
        for (_, t) in net.params_mut().tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let (coarse, refined) = net.predict(&sample(16, 16)).unwrap();
        assert!(coarse.data().iter().chain(refined.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn skip_off_keeps_shape_and_shrinks_count() {
        let on = small(true);
        let off = NetworkConfig {
            skip: false,
            ..on.clone()
        };
        assert!(count_params(&off).unwrap() < count_params(&on).unwrap());
        let (c, _) = Network::new(&off).unwrap().predict(&sample(16, 32)).unwrap();
        assert_eq!(c.shape(), [1, 16, 32]);
    }

    #[test]
    fn os8_has_more_fine_decoder_activations_than_os16() {
        let s = sample(32, 32);
        let count = |os: usize| {
            let net = Network::new(&NetworkConfig {
                output_stride: os,
                refinement: false,
                ..NetworkConfig::default()
            })
            .unwrap();
            let mut tape = Tape::new();
            let b = net.bind(&mut tape);
            let out = net.forward(&mut tape, &b, &s, Mode::Eval).unwrap();
            out.layers
                .iter()
                .filter(|(n, _)| n.starts_with("up"))
                .map(|(_, v)| tape.value(*v))
                .filter(|t| t.shape()[1] == 16 || t.shape()[1] == 8)
                .map(Tensor::numel)
                .sum::<usize>()
        };
        assert!(count(8) > count(16));
    }

    #[test]
    fn indivisible_input_is_config_error() {
        let net = Network::new(&small(false)).unwrap();
        let s = gen_sample(&SceneConfig::new(16, 16, 0), &SparsifyConfig::new(0.5, "uniform")).unwrap();
        let cfg16 = NetworkConfig {
            output_stride: 16,
            ..small(false)
        };
        assert!(Network::new(&cfg16).unwrap().predict(&s).is_ok());
        let mut tape = Tape::new();
        let b = net.bind(&mut tape);
        let r3 = Tensor::zeros(&[3, 12, 16]);
        let r1 = Tensor::zeros(&[1, 12, 16]);
        assert!(matches!(
            net.forward_maps(&mut tape, &b, &r3, &r1, &r1, Mode::Eval),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_only_in_training() {
        let cfg = NetworkConfig {
            dropout: 0.5,
            ..small(false)
        };
        let net = Network::new(&cfg).unwrap();
        let s = sample(16, 16);
        let (a, _) = net.predict(&s).unwrap();
        let (b, _) = net.predict(&s).unwrap();
        assert_eq!(a, b);
        let mut rng = crate::params::init_rng(1);
        let mut tape = Tape::new();
        let bd = net.bind(&mut tape);
        let out = net.forward(&mut tape, &bd, &s, Mode::Train(&mut rng)).unwrap();
        assert_ne!(tape.value(out.coarse), &a);
    }

    #[test]
    fn dump_writes_one_image_per_channel() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::new(&small(false)).unwrap();
        let s = sample(16, 32);
        let maps = net.dump_activations(&s, "bottleneck", dir.path()).unwrap();
        assert_eq!(maps.len(), 16);
        for (c, m) in maps.iter().enumerate() {
            let bytes = std::fs::read(dir.path().join(format!("bottleneck_{c:03}.pgm"))).unwrap();
            let img = pgm::decode(&bytes).unwrap();
            assert_eq!((img.height, img.width), (2, 4));
            let lo = m.data().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = m.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let step = (hi - lo) / 65535.0;
            for (p, v) in img.pixels.iter().zip(m.data()) {
                assert!((lo + *p as f64 * step - v).abs() <= step);
            }
        }
        assert!(matches!(
            net.dump_activations(&s, "nope", dir.path()),
            Err(Error::Lookup { kind: "layer", .. })
        ));
    }
}
