//! Central finite-difference checks of reverse-mode gradients.
//!
//! Every checkable unit builds a small case: named input groups plus a
//! forward function. The scalar under test is `sum(R * f(inputs))` for a
//! fixed random `R`. For each input coordinate the harness compares the
//! tape gradient with `(L(x+eps) - L(x-eps)) / 2eps` and reports
//! `|g - fd| / max(1, |fd|)`. Coordinates whose perturbation flips any ReLU
//! (the finite difference would straddle a kink) are skipped and counted.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::data::availability_mask;
use crate::enhancer::{EnhancerConfig, ScEnhancer};
use crate::error::Result;
use crate::network::{Mode, Network, NetworkConfig};
use crate::params::{init_rng, Bound};
use crate::registry::{Named, Registry};
use crate::tensor::{Tape, Tensor, Var};

pub const EPS: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-5;

type ForwardFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Inputs and forward function of one check.
pub struct Case {
    pub inputs: Vec<(String, Tensor)>,
    pub forward: ForwardFn,
}

pub trait GradUnit: Named + Send + Sync {
    fn tolerance(&self) -> f64 {
        OP_TOLERANCE
    }
    fn case(&self) -> Result<Case>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitReport {
    pub unit: String,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl UnitReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    /// Every group below tolerance with at least one checked coordinate.
    pub fn passed(&self) -> bool {
        self.groups
            .iter()
            .all(|g| g.max_rel_err < self.tolerance && g.checked > 0)
    }
}

impl fmt::Display for UnitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} {} max_rel_err={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.unit,
            self.max_rel_err(),
            self.tolerance
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "  {:<28} max_rel_err={:.3e} checked={} skipped={}",
                g.name, g.max_rel_err, g.checked, g.skipped
            )?;
        }
        Ok(())
    }
}

fn weights_for(shape: &[usize]) -> Tensor {
    let mut rng = init_rng(0x6AD);
    Tensor::uniform(shape, 1.0, &mut rng)
}

/// Builds the weighted-sum loss at `values` on a fresh tape.
fn evaluate(case: &Case, values: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
    let out = (case.forward)(&mut tape, &vars)?;
    let r = tape.constant(weights_for(tape.shape(out)));
    let prod = tape.mul(out, r)?;
    let loss = tape.sum(prod)?;
    Ok((tape, vars, loss))
}

pub fn check_case(name: &str, case: &Case, eps: f64, tolerance: f64) -> Result<UnitReport> {
    let mut values: Vec<Tensor> = case.inputs.iter().map(|(_, t)| t.clone()).collect();
    let (tape, vars, loss) = evaluate(case, &values)?;
    let base_sig = tape.relu_signature();
    let grads = tape.backward(loss)?;
    let mut groups = Vec::with_capacity(values.len());
    for (gi, (gname, _)) in case.inputs.iter().enumerate() {
        let analytic = grads.get(vars[gi]).expect("inputs require grad").clone();
        let mut report = GroupReport {
            name: gname.clone(),
            max_rel_err: 0.0,
            checked: 0,
            skipped: 0,
        };
        for j in 0..values[gi].numel() {
            let orig = values[gi].data()[j];
            let mut side = |x: f64| -> Result<(f64, bool)> {
                values[gi].data_mut()[j] = x;
                let (t, _, l) = evaluate(case, &values)?;
                Ok((t.value(l).item()?, t.relu_signature() == base_sig))
            };
            let (lp, same_p) = side(orig + eps)?;
            let (lm, same_m) = side(orig - eps)?;
            values[gi].data_mut()[j] = orig;
            if !(same_p && same_m) {
                report.skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * eps);
            let err = (analytic.data()[j] - fd).abs() / fd.abs().max(1.0);
            report.max_rel_err = report.max_rel_err.max(err);
            report.checked += 1;
        }
        groups.push(report);
    }
    Ok(UnitReport {
        unit: name.to_string(),
        tolerance,
        groups,
    })
}

pub fn check_unit(unit: &dyn GradUnit) -> Result<UnitReport> {
    check_case(unit.name(), &unit.case()?, EPS, unit.tolerance())
}

/// Runs one named unit, or every registered unit when `name` is `None`.
pub fn run(name: Option<&str>) -> Result<Vec<UnitReport>> {
    let reg = units();
    match name {
        Some(n) => Ok(vec![check_unit(reg.get(n)?.as_ref())?]),
        None => reg.iter().map(|u| check_unit(u.as_ref())).collect(),
    }
}

/// A tensor-op unit: random inputs of fixed shapes and a closure over them.
struct OpUnit {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    /// Push every value at least this far from zero (keeps ReLU off its kink).
    min_abs: f64,
    f: fn(&mut Tape, &[Var]) -> Result<Var>,
}

impl Named for OpUnit {
    fn name(&self) -> &'static str {
        self.name
    }
}

impl GradUnit for OpUnit {
    fn case(&self) -> Result<Case> {
        let mut rng = init_rng(self.name.len() as u64 * 7919);
        let inputs = self
            .shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut t = Tensor::uniform(s, 1.0, &mut rng);
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = v.signum() * (self.min_abs + v.abs()));
                (format!("input{i}"), t)
            })
            .collect();
        let f = self.f;
        Ok(Case {
            inputs,
            forward: Box::new(f),
        })
    }
}

macro_rules! op {
    ($name:literal, [$($s:expr),*], $f:expr) => {
        op!($name, [$($s),*], 0.0, $f)
    };
    ($name:literal, [$($s:expr),*], $min:expr, $f:expr) => {
        Arc::new(OpUnit { name: $name, shapes: &[$(&$s),*], min_abs: $min, f: $f }) as Arc<dyn GradUnit>
    };
}

/// The enhancer at `C=8, H=W=2` with non-zero fusion scales.
struct EnhancerUnit {
    name: &'static str,
    fusion: &'static str,
}

impl Named for EnhancerUnit {
    fn name(&self) -> &'static str {
        self.name
    }
}

impl GradUnit for EnhancerUnit {
    fn case(&self) -> Result<Case> {
        let cfg = EnhancerConfig::new(8, 2).with_fusion(self.fusion);
        let (enh, mut params) = ScEnhancer::standalone(&cfg, 21)?;
        let mut rng = init_rng(22);
        for (_, t) in params.tensors_mut() {
            if t.data().iter().all(|&v| v == 0.0) {
                *t = Tensor::uniform(t.shape(), 0.8, &mut rng);
            }
        }
        let mut inputs: Vec<(String, Tensor)> = params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        inputs.push(("a".into(), Tensor::uniform(&[8, 2, 2], 1.0, &mut rng)));
        let n = params.len();
        Ok(Case {
            inputs,
            forward: Box::new(move |tape, v| {
                let bound = Bound::from_vars(v[..n].to_vec());
                Ok(enh.forward(tape, &bound, v[n])?.output)
            }),
        })
    }
}

/// The whole network on a `5 x 8 x 16` input at output stride 8.
struct NetworkUnit;

impl Named for NetworkUnit {
    fn name(&self) -> &'static str {
        "network"
    }
}

pub fn gradcheck_network_config() -> NetworkConfig {
    NetworkConfig {
        output_stride: 8,
        encoder_channels: vec![4, 8, 8],
        bottleneck_channels: 8,
        reduction: 2,
        refine_channels: 4,
        depth_scale_mm: 1.0,
        seed: 31,
        ..NetworkConfig::default()
    }
}

impl GradUnit for NetworkUnit {
    fn tolerance(&self) -> f64 {
        NETWORK_TOLERANCE
    }

    fn case(&self) -> Result<Case> {
        let mut net = Network::new(&gradcheck_network_config())?;
        let mut rng = init_rng(32);
        for (name, t) in net.params_mut().tensors_mut() {
            if name.ends_with(".b") {
                *t = Tensor::uniform(t.shape(), 0.1, &mut rng);
            } else if t.data().iter().all(|&v| v == 0.0) {
                *t = Tensor::uniform(t.shape(), 0.5, &mut rng);
            }
        }
        let (h, w) = (8, 16);
        let rgb = Tensor::uniform(&[3, h, w], 1.0, &mut rng).into_data();
        let rgb = Tensor::new(vec![3, h, w], rgb.iter().map(|v| v.abs()).collect())?;
        let sparse = Tensor::from_fn(&[1, h, w], |_| {
            if rng.gen_bool(0.3) {
                rng.gen_range(0.5..3.0)
            } else {
                0.0
            }
        });
        let mask = availability_mask(&sparse);
        let inputs = net.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        Ok(Case {
            inputs,
            forward: Box::new(move |tape, v| {
                let bound = Bound::from_vars(v.to_vec());
                let out = net.forward_maps(tape, &bound, &rgb, &sparse, &mask, Mode::Eval)?;
                tape.concat_channels(&[out.coarse, out.refined])
            }),
        })
    }
}

/// Every checkable unit, by name.
pub fn units() -> Registry<dyn GradUnit> {
    let ops: Vec<Arc<dyn GradUnit>> = vec![
        op!("matmul", [[3, 4], [4, 2]], |t, v| t.matmul(v[0], v[1])),
        op!("conv2d", [[2, 5, 5], [3, 2, 3, 3], [3]], |t, v| t.conv2d(
            v[0],
            v[1],
            Some(v[2]),
            1,
            1
        )),
        op!("conv2d_strided", [[2, 6, 6], [3, 2, 3, 3], [3]], |t, v| t.conv2d(
            v[0],
            v[1],
            Some(v[2]),
            2,
            1
        )),
        op!("conv2d_1x1", [[4, 3, 2], [2, 4, 1, 1]], |t, v| t
            .conv2d(v[0], v[1], None, 1, 0)),
        op!("upsample2x", [[2, 2, 3]], |t, v| t.upsample2x(v[0])),
        op!("softmax_rows", [[3, 5]], |t, v| t.softmax_rows(v[0])),
        op!("relu", [[2, 3, 3]], 0.1, |t, v| t.relu(v[0])),
        op!("sigmoid", [[2, 3]], |t, v| t.sigmoid(v[0])),
        op!("add", [[2, 3, 3], [2, 3, 3]], |t, v| t.add(v[0], v[1])),
        op!("sub", [[2, 3, 3], [2, 3, 3]], |t, v| t.sub(v[0], v[1])),
        op!("mul", [[2, 3, 3], [2, 3, 3]], |t, v| t.mul(v[0], v[1])),
        op!("scale", [[2, 3]], |t, v| t.scale(v[0], 2.0)),
        op!("scalar_mul", [[1], [2, 3, 3]], |t, v| t.scalar_mul(v[0], v[1])),
        op!("channel_scale", [[3, 2, 2], [3]], |t, v| t.channel_scale(v[0], v[1])),
        op!("concat_channels", [[2, 2, 3], [1, 2, 3]], |t, v| t
            .concat_channels(&[v[0], v[1]])),
        op!("reshape", [[2, 3, 4]], |t, v| t.reshape(v[0], &[6, 4])),
        op!("transpose2d", [[3, 4]], |t, v| t.transpose2d(v[0])),
        op!("sum", [[2, 3]], |t, v| t.sum(v[0])),
        op!("channel_mean", [[3, 2, 3]], |t, v| t.channel_mean(v[0])),
        op!("channel_var", [[3, 2, 3]], |t, v| t.channel_var(v[0])),
    ];
    let mut reg = Registry::<dyn GradUnit>::new("gradcheck unit");
    for u in ops {
        reg = reg.register(u);
    }
    reg.register(Arc::new(EnhancerUnit {
        name: "sc_enhance",
        fusion: "proposed",
    }))
    .register(Arc::new(EnhancerUnit {
        name: "sc_enhance_concat",
        fusion: "concat",
    }))
    .register(Arc::new(NetworkUnit))
}
