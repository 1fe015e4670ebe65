use crate::enhancer::{EnhancerConfig, DEFAULT_REDUCTION};
use crate::error::{Error, Result};
use crate::kv::KvRecord;

/// Architecture switches and widths of the completion network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// 8 or 16.
    pub output_stride: usize,
    /// Widths of the strided encoder stages; the last entry repeats when
    /// the stride needs more stages than listed.
    pub encoder_channels: Vec<usize>,
    /// Width `C_enc` of the bottleneck conv feeding the enhancer.
    pub bottleneck_channels: usize,
    pub skip: bool,
    pub spatial: bool,
    /// Channel descriptor name, `None` for off.
    pub channel: Option<String>,
    pub fusion: String,
    pub refinement: bool,
    pub reduction: usize,
    pub refine_channels: usize,
    pub dropout: f64,
    /// Depth unit inside the network: inputs are divided by it and raw
    /// outputs multiplied by it, keeping activations near 1.
    pub depth_scale_mm: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            output_stride: 8,
            encoder_channels: vec![16, 32, 64],
            bottleneck_channels: 32,
            skip: true,
            spatial: true,
            channel: Some("proposed".into()),
            fusion: "proposed".into(),
            refinement: true,
            reduction: DEFAULT_REDUCTION,
            refine_channels: 8,
            dropout: 0.0,
            depth_scale_mm: 10_000.0,
            seed: 0,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "output_stride",
    "encoder_channels",
    "bottleneck_channels",
    "skip",
    "spatial",
    "channel",
    "fusion",
    "refinement",
    "reduction",
    "refine_channels",
    "dropout",
    "depth_scale_mm",
    "seed",
];

impl NetworkConfig {
    /// Plain encoder-decoder with skips: no enhancer, no refinement.
    pub fn baseline() -> Self {
        Self {
            spatial: false,
            channel: None,
            refinement: false,
            ..Self::default()
        }
    }

    pub fn stages(&self) -> usize {
        self.output_stride.trailing_zeros() as usize
    }

    /// Width of the encoder stage producing resolution `/2^level` (`level >= 1`).
    pub fn encoder_width(&self, level: usize) -> usize {
        let i = level.min(self.encoder_channels.len()) - 1;
        self.encoder_channels[i]
    }

    /// Width of up-projection unit `unit` (1-based): halves from the
    /// bottleneck width per unit, never below 8.
    pub fn decoder_width(&self, unit: usize) -> usize {
        (self.bottleneck_channels >> unit.min(usize::BITS as usize - 1)).max(8)
    }

    pub fn enhancer(&self) -> EnhancerConfig {
        EnhancerConfig {
            channels: self.bottleneck_channels,
            reduction: self.reduction,
            spatial: self.spatial,
            channel: self.channel.clone(),
            fusion: self.fusion.clone(),
        }
    }

    pub fn enhancer_active(&self) -> bool {
        self.spatial || self.channel.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_stride != 8 && self.output_stride != 16 {
            return Err(Error::config(format!(
                "output stride {} must be 8 or 16",
                self.output_stride
            )));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::config(
                "encoder channels must be a non-empty list of positive widths",
            ));
        }
        if self.bottleneck_channels == 0 || self.refine_channels == 0 {
            return Err(Error::config("layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.depth_scale_mm > 0.0 && self.depth_scale_mm.is_finite()) {
            return Err(Error::config("depth scale must be positive"));
        }
        if self.enhancer_active() {
            crate::enhancer::enhancer_param_count(&self.enhancer())?;
        }
        Ok(())
    }

    /// Errors unless `h` and `w` are positive multiples of the output stride.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let os = self.output_stride;
        if h == 0 || w == 0 || !h.is_multiple_of(os) || !w.is_multiple_of(os) {
            return Err(Error::config(format!(
                "input {h}x{w} not divisible by output stride {os}"
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvRecord {
        let mut kv = KvRecord::new();
        kv.set("output_stride", self.output_stride);
        kv.set(
            "encoder_channels",
            self.encoder_channels
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.set("bottleneck_channels", self.bottleneck_channels);
        kv.set("skip", self.skip);
        kv.set("spatial", self.spatial);
        kv.set("channel", self.channel.as_deref().unwrap_or("off"));
        kv.set("fusion", &self.fusion);
        kv.set("refinement", self.refinement);
        kv.set("reduction", self.reduction);
        kv.set("refine_channels", self.refine_channels);
        kv.set("dropout", self.dropout);
        kv.set("depth_scale_mm", self.depth_scale_mm);
        kv.set("seed", self.seed);
        kv
    }

    /// Reads the network keys of `kv` over defaults; other keys are ignored.
    pub fn from_kv(kv: &KvRecord) -> Result<Self> {
        let d = Self::default();
        let channel = match kv.get_str("channel") {
            None => d.channel.clone(),
            Some("off") => None,
            Some(v) => Some(v.to_string()),
        };
        let cfg = Self {
            output_stride: kv.get_or("output_stride", d.output_stride)?,
            encoder_channels: kv.get_list("encoder_channels")?.unwrap_or(d.encoder_channels),
            bottleneck_channels: kv.get_or("bottleneck_channels", d.bottleneck_channels)?,
            skip: kv.get_or("skip", d.skip)?,
            spatial: kv.get_or("spatial", d.spatial)?,
            channel,
            fusion: kv.get_str("fusion").map(str::to_string).unwrap_or(d.fusion),
            refinement: kv.get_or("refinement", d.refinement)?,
            reduction: kv.get_or("reduction", d.reduction)?,
            refine_channels: kv.get_or("refine_channels", d.refine_channels)?,
            dropout: kv.get_or("dropout", d.dropout)?,
            depth_scale_mm: kv.get_or("depth_scale_mm", d.depth_scale_mm)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
