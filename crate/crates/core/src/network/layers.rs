use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{Bound, ParamId, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `+-sqrt(6 / fan_in)`, zero bias.
    Kaiming,
    /// All weights and bias zero.
    Zero,
}

/// Square convolution with bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn declare(
        params: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        init: Init,
        seed: u64,
    ) -> Result<Self> {
        let shape = [cout, cin, k, k];
        let w = match init {
            Init::Kaiming => {
                let mut rng = layer_rng(seed, name);
                Tensor::uniform(&shape, (6.0 / (cin * k * k) as f64).sqrt(), &mut rng)
            }
            Init::Zero => Tensor::zeros(&shape),
        };
        Ok(Self {
            w: params.insert(format!("{name}.w"), w)?,
            b: params.insert(format!("{name}.b"), Tensor::zeros(&[cout]))?,
            stride,
            pad: k / 2,
        })
    }

    pub fn param_count(cin: usize, cout: usize, k: usize) -> usize {
        cout * cin * k * k + cout
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, bound.var(self.w), Some(bound.var(self.b)), self.stride, self.pad)
    }

    pub fn apply_relu(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = self.apply(tape, bound, x)?;
        tape.relu(y)
    }
}

/// Independent generator per named layer, so adding or removing one layer
/// leaves every other layer's initial weights untouched.
pub fn layer_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
