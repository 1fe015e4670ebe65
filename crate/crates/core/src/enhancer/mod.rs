//! Spatial and channel feature enhancer.
//!
//! The enhancer takes a feature map `A: [C,H,W]` and produces
//! `Y = lambda E + gamma X + A`, where `E` is non-local spatial attention
//! over all positions with `A` itself as the value map, and `X` is `A`
//! rescaled per channel by weights regressed from global channel
//! statistics (mean and variance by default). With both scales at zero
//! the module is exactly the identity.
//!
//! Branch selection and fusion are configured by name, so the ablation
//! variants (mean-only / variance-only descriptors, concatenation fusion)
//! are interchangeable strategies behind the same module.

pub mod channel;
pub mod fusion;
pub mod spatial;

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, init_rng, Bound, ParamId, ParamSet};
use crate::tensor::{Tape, Var};

pub use channel::{channel_rescale, descriptors, excite, squeeze, ChannelDescriptor};
pub use fusion::{concat_project, fuse, fusions, Branches, Fusion, FusionStrategy};
pub use spatial::{spatial_attention, SpatialOutput, QK_REDUCTION};

/// Default excitation reduction ratio.
pub const DEFAULT_REDUCTION: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnhancerConfig {
    pub channels: usize,
    pub reduction: usize,
    pub spatial: bool,
    /// Channel descriptor name, `None` disables the channel branch.
    pub channel: Option<String>,
    pub fusion: String,
}

impl EnhancerConfig {
    pub fn new(channels: usize, reduction: usize) -> Self {
        Self {
            channels,
            reduction,
            spatial: true,
            channel: Some("proposed".into()),
            fusion: "proposed".into(),
        }
    }

    pub fn with_channel(mut self, variant: Option<&str>) -> Self {
        self.channel = variant.map(str::to_string);
        self
    }

    pub fn with_spatial(mut self, on: bool) -> Self {
        self.spatial = on;
        self
    }

    pub fn with_fusion(mut self, fusion: &str) -> Self {
        self.fusion = fusion.to_string();
        self
    }

    /// True when at least one branch is active.
    pub fn is_active(&self) -> bool {
        self.spatial || self.channel.is_some()
    }

    fn descriptor(&self) -> Result<Option<Arc<dyn ChannelDescriptor>>> {
        self.channel.as_deref().map(|n| descriptors().get(n)).transpose()
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("enhancer needs at least one channel"));
        }
        if self.spatial {
            spatial::check_channels(self.channels)?;
        }
        if let Some(d) = self.descriptor()? {
            channel::hidden_width(d.width(self.channels), self.reduction)?;
        }
        fusions().get(&self.fusion)?;
        if self.fusion == "concat" && !(self.spatial && self.channel.is_some()) {
            return Err(Error::config("concat fusion needs both branches enabled"));
        }
        Ok(())
    }
}

/// Exact number of trainable scalars the enhancer stores.
pub fn enhancer_param_count(cfg: &EnhancerConfig) -> Result<usize> {
    cfg.validate()?;
    let c = cfg.channels;
    let mut total = 0;
    if cfg.spatial {
        total += 2 * (c * (c / QK_REDUCTION));
    }
    if let Some(d) = cfg.descriptor()? {
        let width = d.width(c);
        let hidden = channel::hidden_width(width, cfg.reduction)?;
        total += hidden * width + c * hidden;
    }
    total += fusions().get(&cfg.fusion)?.param_count(c);
    Ok(total)
}

/// Forward results of [`ScEnhancer::forward`].
#[derive(Debug, Clone, Copy)]
pub struct EnhancerOutput {
    pub output: Var,
    pub attention: Option<Var>,
    pub channel_weights: Option<Var>,
}

/// The enhancer bound to parameters inside a [`ParamSet`].
#[derive(Debug)]
pub struct ScEnhancer {
    cfg: EnhancerConfig,
    prefix: String,
    wq: Option<ParamId>,
    wk: Option<ParamId>,
    w1: Option<ParamId>,
    w2: Option<ParamId>,
    descriptor: Option<DescriptorHandle>,
    fusion: Box<dyn Fusion>,
}

struct DescriptorHandle(Arc<dyn ChannelDescriptor>);

impl std::fmt::Debug for DescriptorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0.name())
    }
}

impl ScEnhancer {
    /// Registers the enhancer's parameters under `prefix`.
    ///
    /// Projection weights are uniform in `+-1/sqrt(fan_in)`; fusion scales start at zero.
    pub fn declare(params: &mut ParamSet, prefix: &str, cfg: &EnhancerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let (mut wq, mut wk, mut w1, mut w2) = (None, None, None, None);
        if cfg.spatial {
            let r = c / QK_REDUCTION;
            wq = Some(params.insert(format!("{prefix}wq"), fan_in_uniform(&[r, c, 1, 1], c, rng))?);
            wk = Some(params.insert(format!("{prefix}wk"), fan_in_uniform(&[r, c, 1, 1], c, rng))?);
        }
        let descriptor = cfg.descriptor()?;
        if let Some(d) = &descriptor {
            let width = d.width(c);
            let hidden = channel::hidden_width(width, cfg.reduction)?;
            w1 = Some(params.insert(format!("{prefix}w1"), fan_in_uniform(&[hidden, width], width, rng))?);
            w2 = Some(params.insert(format!("{prefix}w2"), fan_in_uniform(&[c, hidden], hidden, rng))?);
        }
        let fusion = fusions().get(&cfg.fusion)?.declare(params, prefix, c)?;
        Ok(Self {
            cfg: cfg.clone(),
            prefix: prefix.to_string(),
            wq,
            wk,
            w1,
            w2,
            descriptor: descriptor.map(DescriptorHandle),
            fusion,
        })
    }

    /// An enhancer owning its own parameter set with unprefixed names.
    pub fn standalone(cfg: &EnhancerConfig, seed: u64) -> Result<(Self, ParamSet)> {
        let mut params = ParamSet::new();
        let mut rng = init_rng(seed);
        let e = Self::declare(&mut params, "", cfg, &mut rng)?;
        Ok((e, params))
    }

    pub fn config(&self) -> &EnhancerConfig {
        &self.cfg
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, a: Var) -> Result<EnhancerOutput> {
        let [c, _, _] = tape.value(a).dims3("sc_enhance")?;
        if c != self.cfg.channels {
            return Err(Error::dim("sc_enhance channels", &[c], &[self.cfg.channels]));
        }
        let mut attention = None;
        let spatial = match (self.wq, self.wk) {
            (Some(wq), Some(wk)) => {
                let out = spatial_attention(tape, a, bound.var(wq), bound.var(wk))?;
                attention = Some(out.attention);
                Some(out.enhanced)
            }
            _ => None,
        };
        let mut channel_weights = None;
        let channel = match (&self.descriptor, self.w1, self.w2) {
            (Some(d), Some(w1), Some(w2)) => {
                let z = d.0.describe(tape, a)?;
                let s = excite(tape, z, bound.var(w1), bound.var(w2))?;
                channel_weights = Some(s);
                Some(channel_rescale(tape, a, s)?)
            }
            _ => None,
        };
        let output = self.fusion.fuse(tape, bound, Branches { spatial, channel }, a)?;
        Ok(EnhancerOutput {
            output,
            attention,
            channel_weights,
        })
    }

    /// This enhancer's parameter names with the prefix removed, paired with ids.
    pub fn param_entries<'a>(&'a self, params: &'a ParamSet) -> impl Iterator<Item = (&'a str, ParamId)> + 'a {
        params
            .iter()
            .filter_map(move |(name, _)| name.strip_prefix(self.prefix.as_str()).zip(params.id(name)))
    }

    /// Archive with the fixed entry names `wq`, `wk`, `w1`, `w2`, `lambda`, `gamma`
    /// (`proj` instead of the scales for concat fusion).
    pub fn to_archive(&self, params: &ParamSet) -> Result<Archive> {
        let mut ar = Archive::new();
        for (short, id) in self.param_entries(params) {
            ar.insert_tensor(short, params.get(id))?;
        }
        Ok(ar)
    }

    pub fn load_archive(&self, params: &mut ParamSet, archive: &Archive) -> Result<()> {
        let entries: Vec<(String, ParamId)> = self.param_entries(params).map(|(s, id)| (s.to_string(), id)).collect();
        for (short, id) in entries {
            let t = archive.tensor(&short)?;
            if t.shape() != params.get(id).shape() {
                return Err(Error::dim("load enhancer parameter", params.get(id).shape(), t.shape()));
            }
            *params.get_mut(id) = t.with_requires_grad(true);
        }
        Ok(())
    }
}

/// Full enhancer from explicit tape variables: spatial branch, mean+variance
/// channel branch and scaled-sum fusion.
#[allow(clippy::too_many_arguments)]
pub fn sc_enhance(tape: &mut Tape, a: Var, wq: Var, wk: Var, w1: Var, w2: Var, lambda: Var, gamma: Var) -> Result<Var> {
    let e = spatial_attention(tape, a, wq, wk)?.enhanced;
    let z = squeeze(tape, a)?;
    let s = excite(tape, z, w1, w2)?;
    let x = channel_rescale(tape, a, s)?;
    fuse(tape, e, x, a, lambda, gamma)
}

/// Channel weights `s: [C]` for a named descriptor variant.
pub fn channel_attention_variant(tape: &mut Tape, a: Var, variant: &str, w1: Var, w2: Var) -> Result<Var> {
    let d = descriptors()
        .get(variant)
        .map_err(|_| Error::config(format!("unknown channel variant `{variant}`")))?;
    let z = d.describe(tape, a)?;
    excite(tape, z, w1, w2)
}
