//! Squeeze-and-excitation channel attention with pluggable descriptors.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::registry::{Named, Registry};
use crate::tensor::{Tape, Var};

/// Global per-channel statistic fed to the excitation MLP.
pub trait ChannelDescriptor: Named + Send + Sync {
    /// Descriptor length for `channels` input channels.
    fn width(&self, channels: usize) -> usize;

    /// `a: [C,H,W]` to a descriptor of length `width(C)`.
    fn describe(&self, tape: &mut Tape, a: Var) -> Result<Var>;
}

/// Means followed by population variances, length `2C`.
pub struct MeanVariance;

/// Global average pooling, length `C`.
pub struct MeanOnly;

/// Global variance pooling, length `C`.
pub struct VarianceOnly;

impl Named for MeanVariance {
    fn name(&self) -> &'static str {
        "proposed"
    }
}

impl ChannelDescriptor for MeanVariance {
    fn width(&self, channels: usize) -> usize {
        2 * channels
    }

    fn describe(&self, tape: &mut Tape, a: Var) -> Result<Var> {
        squeeze(tape, a)
    }
}

impl Named for MeanOnly {
    fn name(&self) -> &'static str {
        "mean_only"
    }
}

impl ChannelDescriptor for MeanOnly {
    fn width(&self, channels: usize) -> usize {
        channels
    }

    fn describe(&self, tape: &mut Tape, a: Var) -> Result<Var> {
        tape.channel_mean(a)
    }
}

impl Named for VarianceOnly {
    fn name(&self) -> &'static str {
        "variance_only"
    }
}

impl ChannelDescriptor for VarianceOnly {
    fn width(&self, channels: usize) -> usize {
        channels
    }

    fn describe(&self, tape: &mut Tape, a: Var) -> Result<Var> {
        tape.channel_var(a)
    }
}

pub fn descriptors() -> Registry<dyn ChannelDescriptor> {
    Registry::<dyn ChannelDescriptor>::new("channel variant")
        .register(Arc::new(MeanVariance))
        .register(Arc::new(MeanOnly))
        .register(Arc::new(VarianceOnly))
        .alias("mean", "mean_only")
        .alias("variance", "variance_only")
}

/// `[z_mean || z_var]` for `a: [C,H,W]`, giving `[2C]`.
pub fn squeeze(tape: &mut Tape, a: Var) -> Result<Var> {
    let mean = tape.channel_mean(a)?;
    let var = tape.channel_var(a)?;
    tape.concat_channels(&[mean, var])
}

/// Hidden width of the excitation MLP for a descriptor of length `width`.
pub fn hidden_width(width: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || !width.is_multiple_of(reduction) {
        return Err(Error::config(format!(
            "descriptor width {width} is not divisible by reduction ratio {reduction}"
        )));
    }
    Ok(width / reduction)
}

/// `sigmoid(W2 relu(W1 z))` with `w1: [D/r, D]`, `w2: [C, D/r]`, giving `[C]`.
pub fn excite(tape: &mut Tape, z: Var, w1: Var, w2: Var) -> Result<Var> {
    let d = match tape.shape(z) {
        &[d] => d,
        other => return Err(Error::dim("excite descriptor", other, &[0])),
    };
    let c = match (tape.shape(w1), tape.shape(w2)) {
        (&[hid, d1], &[c, hid2]) if d1 == d && hid2 == hid => c,
        (s1, s2) => {
            return Err(Error::config(format!(
                "excitation widths do not chain: z [{d}], w1 {s1:?}, w2 {s2:?}"
            )))
        }
    };
    let zc = tape.reshape(z, &[d, 1])?;
    let h = tape.matmul(w1, zc)?;
    let h = tape.relu(h)?;
    let s = tape.matmul(w2, h)?;
    let s = tape.sigmoid(s)?;
    tape.reshape(s, &[c])
}

/// `x_c = s_c a_c`.
pub fn channel_rescale(tape: &mut Tape, a: Var, s: Var) -> Result<Var> {
    tape.channel_scale(a, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_rng;
    use crate::tensor::Tensor;

    fn squeeze_of(a: Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let av = tape.constant(a);
        let z = squeeze(&mut tape, av).unwrap();
        tape.value(z).data().to_vec()
    }

    #[test]
    fn constant_channel_has_zero_variance() {
        let z = squeeze_of(Tensor::full(&[1, 3, 3], 5.0));
        assert_eq!(z, vec![5.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_descriptor() {
        let a = Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 3.0, 1.0]).unwrap();
        assert_eq!(squeeze_of(a), vec![2.0, 1.0]);
    }

    #[test]
    fn layout_is_means_then_variances() {
        let a = Tensor::new(vec![2, 1, 2], vec![0.0, 2.0, 10.0, 10.0]).unwrap();
        assert_eq!(squeeze_of(a), vec![1.0, 10.0, 1.0, 0.0]);
    }

    fn excite_of(z: &Tensor, w1: &Tensor, w2: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (zv, a, b) = (
            tape.constant(z.clone()),
            tape.constant(w1.clone()),
            tape.constant(w2.clone()),
        );
        let s = excite(&mut tape, zv, a, b)?;
        Ok(tape.value(s).clone())
    }

    #[test]
    fn zero_weights_or_zero_descriptor_give_half() {
        let mut rng = init_rng(1);
        let z = Tensor::uniform(&[8], 1.0, &mut rng);
        let s = excite_of(&z, &Tensor::zeros(&[4, 8]), &Tensor::zeros(&[4, 4])).unwrap();
        assert_eq!(s.data(), &[0.5; 4]);
        let w1 = Tensor::uniform(&[4, 8], 1.0, &mut rng);
        let w2 = Tensor::uniform(&[4, 4], 1.0, &mut rng);
        let s = excite_of(&Tensor::zeros(&[8]), &w1, &w2).unwrap();
        assert_eq!(s.data(), &[0.5; 4]);
    }

    #[test]
    fn excite_matches_direct_two_layer_evaluation() {
        // C = 4, r = 2: z in R^8, hidden 4.
        let mut rng = init_rng(2);
        let z = Tensor::uniform(&[8], 1.0, &mut rng);
        let w1 = Tensor::uniform(&[4, 8], 1.0, &mut rng);
        let w2 = Tensor::uniform(&[4, 4], 1.0, &mut rng);
        let s = excite_of(&z, &w1, &w2).unwrap();
        for c in 0..4 {
            let mut acc = 0.0;
            for h in 0..4 {
                let pre: f64 = (0..8).map(|d| w1.at(&[h, d]) * z.data()[d]).sum();
                acc += w2.at(&[c, h]) * pre.max(0.0);
            }
            let expected = 1.0 / (1.0 + (-acc).exp());
            assert!((s.data()[c] - expected).abs() < 1e-12);
            assert!(s.data()[c] > 0.0 && s.data()[c] < 1.0);
        }
    }

    #[test]
    fn excite_rejects_width_mismatch() {
        let r = excite_of(&Tensor::zeros(&[6]), &Tensor::zeros(&[4, 8]), &Tensor::zeros(&[4, 4]));
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(hidden_width(8, 3).is_err());
        assert_eq!(hidden_width(16, 2).unwrap(), 8);
    }

    #[test]
    fn rescale_by_two_and_half() {
        let a = Tensor::from_fn(&[2, 2, 2], |i| i as f64 + 1.0);
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let s = tape.constant(Tensor::new(vec![2], vec![2.0, 0.5]).unwrap());
        let x = channel_rescale(&mut tape, av, s).unwrap();
        let x = tape.value(x);
        for i in 0..8 {
            let f = if i < 4 { 2.0 } else { 0.5 };
            assert_eq!(x.data()[i], f * a.data()[i]);
        }
        let bad = tape.constant(Tensor::zeros(&[3]));
        assert!(matches!(
            channel_rescale(&mut tape, av, bad),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn descriptor_variants_by_name() {
        let reg = descriptors();
        let a = Tensor::full(&[4, 2, 2], 3.0);
        for (name, width, expect) in [("mean", 4, 3.0), ("variance_only", 4, 0.0), ("proposed", 8, 3.0)] {
            let d = reg.get(name).unwrap();
            assert_eq!(d.width(4), width);
            let mut tape = Tape::new();
            let av = tape.constant(a.clone());
            let z = d.describe(&mut tape, av).unwrap();
            assert_eq!(tape.shape(z), [width]);
            assert_eq!(tape.value(z).data()[0], expect);
        }
        assert!(matches!(reg.get("median"), Err(Error::Lookup { .. })));
    }
}
