//! Combining the spatial and channel branches with the identity map.

use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamSet};
use crate::registry::{Named, Registry};
use crate::tensor::{Tape, Tensor, Var};

/// Branch outputs available to a fusion.
#[derive(Debug, Clone, Copy)]
pub struct Branches {
    pub spatial: Option<Var>,
    pub channel: Option<Var>,
}

/// How enhanced maps are merged back into the feature stream.
pub trait FusionStrategy: Named + Send + Sync {
    fn param_count(&self, channels: usize) -> usize;

    /// Registers this fusion's parameters under `prefix`.
    fn declare(&self, params: &mut ParamSet, prefix: &str, channels: usize) -> Result<Box<dyn Fusion>>;
}

/// A fusion bound to its parameters.
pub trait Fusion: Debug + Send + Sync {
    fn fuse(&self, tape: &mut Tape, bound: &Bound, branches: Branches, a: Var) -> Result<Var>;
}

/// `Y = lambda E + gamma X + A` with two trainable scalars, both zero at start.
pub struct ScaledSum;

/// `Y = P [E ; X] + A` with a bias-free 1x1 projection `P`, zero at start.
pub struct ConcatProject;

impl Named for ScaledSum {
    fn name(&self) -> &'static str {
        "proposed"
    }
}

impl Named for ConcatProject {
    fn name(&self) -> &'static str {
        "concat"
    }
}

#[derive(Debug)]
struct ScaledSumFusion {
    lambda: ParamId,
    gamma: ParamId,
}

#[derive(Debug)]
struct ConcatFusion {
    proj: ParamId,
}

impl FusionStrategy for ScaledSum {
    fn param_count(&self, _channels: usize) -> usize {
        2
    }

    fn declare(&self, params: &mut ParamSet, prefix: &str, _channels: usize) -> Result<Box<dyn Fusion>> {
        let lambda = params.insert(format!("{prefix}lambda"), Tensor::scalar(0.0))?;
        let gamma = params.insert(format!("{prefix}gamma"), Tensor::scalar(0.0))?;
        Ok(Box::new(ScaledSumFusion { lambda, gamma }))
    }
}

impl Fusion for ScaledSumFusion {
    fn fuse(&self, tape: &mut Tape, bound: &Bound, branches: Branches, a: Var) -> Result<Var> {
        let e = branches.spatial;
        let x = branches.channel;
        let (lambda, gamma) = (bound.var(self.lambda), bound.var(self.gamma));
        let scaled = match (e, x) {
            (Some(e), Some(x)) => {
                let le = tape.scalar_mul(lambda, e)?;
                let gx = tape.scalar_mul(gamma, x)?;
                Some(tape.add(le, gx)?)
            }
            (Some(e), None) => Some(tape.scalar_mul(lambda, e)?),
            (None, Some(x)) => Some(tape.scalar_mul(gamma, x)?),
            (None, None) => None,
        };
        match scaled {
            Some(s) => tape.add(s, a),
            None => Ok(a),
        }
    }
}

impl FusionStrategy for ConcatProject {
    fn param_count(&self, channels: usize) -> usize {
        channels * 2 * channels
    }

    fn declare(&self, params: &mut ParamSet, prefix: &str, channels: usize) -> Result<Box<dyn Fusion>> {
        let proj = params.insert(format!("{prefix}proj"), Tensor::zeros(&[channels, 2 * channels, 1, 1]))?;
        Ok(Box::new(ConcatFusion { proj }))
    }
}

impl Fusion for ConcatFusion {
    fn fuse(&self, tape: &mut Tape, bound: &Bound, branches: Branches, a: Var) -> Result<Var> {
        let (Some(e), Some(x)) = (branches.spatial, branches.channel) else {
            return Err(Error::config("concat fusion needs both spatial and channel branches"));
        };
        let p = concat_project(tape, e, x, bound.var(self.proj))?;
        tape.add(p, a)
    }
}

pub fn fusions() -> Registry<dyn FusionStrategy> {
    Registry::<dyn FusionStrategy>::new("fusion variant")
        .register(Arc::new(ScaledSum))
        .register(Arc::new(ConcatProject))
}

/// `Y = lambda E + gamma X + A` for single-element `lambda`, `gamma`.
pub fn fuse(tape: &mut Tape, e: Var, x: Var, a: Var, lambda: Var, gamma: Var) -> Result<Var> {
    let (se, sx, sa) = (tape.shape(e), tape.shape(x), tape.shape(a));
    if se != sx || se != sa {
        return Err(Error::dim("fuse", se, if se != sx { sx } else { sa }));
    }
    let le = tape.scalar_mul(lambda, e)?;
    let gx = tape.scalar_mul(gamma, x)?;
    let s = tape.add(le, gx)?;
    tape.add(s, a)
}

/// Channel concatenation `[E ; X]` followed by a 1x1 projection
/// `proj: [C, 2C, 1, 1]` back to `C` channels.
pub fn concat_project(tape: &mut Tape, e: Var, x: Var, proj: Var) -> Result<Var> {
    if tape.shape(e) != tape.shape(x) {
        return Err(Error::dim("concat fusion", tape.shape(e), tape.shape(x)));
    }
    let cat = tape.concat_channels(&[e, x])?;
    tape.conv2d(cat, proj, None, 1, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_rng;

    #[test]
    fn zero_scales_return_identity_bit_exactly() {
        let mut rng = init_rng(3);
        let mut tape = Tape::new();
        let a = Tensor::uniform(&[2, 3, 3], 5.0, &mut rng);
        let av = tape.constant(a.clone());
        let e = tape.constant(Tensor::uniform(&[2, 3, 3], 5.0, &mut rng));
        let x = tape.constant(Tensor::uniform(&[2, 3, 3], 5.0, &mut rng));
        let z = tape.constant(Tensor::scalar(0.0));
        let y = fuse(&mut tape, e, x, av, z, z).unwrap();
        let y = tape.value(y);
        for (p, q) in y.data().iter().zip(a.data()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }

    #[test]
    fn lambda_one_with_e_equal_a_doubles() {
        let a = Tensor::from_fn(&[1, 2, 2], |i| i as f64 - 1.5);
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let x = tape.constant(Tensor::full(&[1, 2, 2], 9.0));
        let one = tape.constant(Tensor::scalar(1.0));
        let zero = tape.constant(Tensor::scalar(0.0));
        let y = fuse(&mut tape, av, x, av, one, zero).unwrap();
        let expect: Vec<f64> = a.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.value(y).data(), expect.as_slice());
    }

    #[test]
    fn weighted_sum_oracle() {
        let mut rng = init_rng(4);
        let (e, x, a) = (
            Tensor::uniform(&[3, 2, 2], 1.0, &mut rng),
            Tensor::uniform(&[3, 2, 2], 1.0, &mut rng),
            Tensor::uniform(&[3, 2, 2], 1.0, &mut rng),
        );
        let mut tape = Tape::new();
        let (ev, xv, av) = (
            tape.constant(e.clone()),
            tape.constant(x.clone()),
            tape.constant(a.clone()),
        );
        let l = tape.constant(Tensor::scalar(0.3));
        let g = tape.constant(Tensor::scalar(0.7));
        let y = fuse(&mut tape, ev, xv, av, l, g).unwrap();
        for i in 0..12 {
            let expect = 0.3 * e.data()[i] + 0.7 * x.data()[i] + a.data()[i];
            assert!((tape.value(y).data()[i] - expect).abs() < 1e-12);
        }
        let bad = tape.constant(Tensor::zeros(&[3, 2, 1]));
        assert!(matches!(
            fuse(&mut tape, ev, bad, av, l, g),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn concat_doubles_channels_and_selector_recovers_e() {
        let mut rng = init_rng(8);
        let e = Tensor::uniform(&[2, 3, 3], 1.0, &mut rng);
        let x = Tensor::uniform(&[2, 3, 3], 1.0, &mut rng);
        let mut tape = Tape::new();
        let (ev, xv) = (tape.constant(e.clone()), tape.constant(x));
        let cat = tape.concat_channels(&[ev, xv]).unwrap();
        assert_eq!(tape.shape(cat), [4, 3, 3]);
        // [I ; 0] selector
        let mut p = Tensor::zeros(&[2, 4, 1, 1]);
        p.set(&[0, 0, 0, 0], 1.0);
        p.set(&[1, 1, 0, 0], 1.0);
        let pv = tape.constant(p);
        let y = concat_project(&mut tape, ev, xv, pv).unwrap();
        assert_eq!(tape.value(y).data(), e.data());
    }

    #[test]
    fn concat_matches_naive_oracle() {
        let mut rng = init_rng(9);
        let e = Tensor::uniform(&[2, 2, 3], 1.0, &mut rng);
        let x = Tensor::uniform(&[2, 2, 3], 1.0, &mut rng);
        let p = Tensor::uniform(&[2, 4, 1, 1], 1.0, &mut rng);
        let mut tape = Tape::new();
        let (ev, xv, pv) = (
            tape.constant(e.clone()),
            tape.constant(x.clone()),
            tape.constant(p.clone()),
        );
        let y = concat_project(&mut tape, ev, xv, pv).unwrap();
        let y = tape.value(y);
        for o in 0..2 {
            for pix in 0..6 {
                let mut acc = 0.0;
                for c in 0..2 {
                    acc += p.at(&[o, c, 0, 0]) * e.data()[c * 6 + pix];
                    acc += p.at(&[o, c + 2, 0, 0]) * x.data()[c * 6 + pix];
                }
                assert!((y.data()[o * 6 + pix] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn strategy_param_counts() {
        let reg = fusions();
        assert_eq!(reg.get("proposed").unwrap().param_count(32), 2);
        assert_eq!(reg.get("concat").unwrap().param_count(8), 128);
    }
}
