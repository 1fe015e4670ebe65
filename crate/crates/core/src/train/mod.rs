//! Objective, optimizer and the minibatch training loop.

pub mod adam;
pub mod loss;

pub use adam::{Adam, AdamConfig};
pub use loss::{depth_loss, masked_mse, masked_mse_value, DepthLoss, LossConfig, MaskedMse};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::DepthSample;
use crate::error::{Error, Result};
use crate::kv::KvRecord;
use crate::network::{Mode, Network};
use crate::params::init_rng;
use crate::tensor::{Tape, Tensor};

pub const LOG_HEADER: &str = "step,loss,coarse_mse,refined_mse";

pub const TRAIN_KEYS: &[&str] = &["lr", "batch_size", "steps", "alpha", "beta"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Drives the shuffle order and dropout masks.
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            steps: 100,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::config("batch size and step count must be at least 1"));
        }
        self.loss.validate()
    }

    /// Reads training keys over defaults; `seed` is shared with the network.
    pub fn from_kv(kv: &KvRecord) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            lr: kv.get_or("lr", d.lr)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            steps: kv.get_or("steps", d.steps)?,
            seed: kv.get_or("seed", d.seed)?,
            loss: LossConfig {
                alpha: kv.get_or("alpha", d.loss.alpha)?,
                beta: kv.get_or("beta", d.loss.beta)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvRecord {
        let mut kv = KvRecord::new();
        kv.set("lr", self.lr);
        kv.set("batch_size", self.batch_size);
        kv.set("steps", self.steps);
        kv.set("seed", self.seed);
        kv.set("alpha", self.loss.alpha);
        kv.set("beta", self.loss.beta);
        kv
    }
}

/// Batch-mean values recorded before the update of a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub coarse_mse: f64,
    pub refined_mse: f64,
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.step, self.loss, self.coarse_mse, self.refined_mse)
    }
}

pub fn log_csv(logs: &[StepLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for l in logs {
        writeln!(out, "{}", l.csv_row()).expect("write to String");
    }
    out
}

/// Endless stream of sample indices: a fresh seeded permutation per epoch.
#[derive(Debug)]
pub struct BatchOrder {
    rng: ChaCha8Rng,
    perm: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = init_rng(seed);
        rng.set_stream(1);
        Self {
            rng,
            perm: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.perm.len() {
                self.perm.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Loss values and parameter gradients for one sample.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub loss: f64,
    pub coarse_mse: f64,
    pub refined_mse: f64,
    pub grads: Vec<Tensor>,
}

pub fn sample_gradients(net: &Network, sample: &DepthSample, loss: &LossConfig, mode: Mode<'_>) -> Result<SampleGrad> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let out = net.forward(&mut tape, &bound, sample, mode)?;
    let l = depth_loss(&mut tape, out.coarse, out.refined, &sample.gt, loss)?;
    let mut g = tape.backward(l.loss)?;
    let grads = bound
        .vars()
        .iter()
        .map(|&v| g.take(v).expect("parameters require grad"))
        .collect();
    Ok(SampleGrad {
        loss: tape.value(l.loss).item()?,
        coarse_mse: tape.value(l.coarse.value).item()?,
        refined_mse: tape.value(l.refined.value).item()?,
        grads,
    })
}

/// Runs `cfg.steps` Adam steps on batch-averaged gradients.
/// `on_step` sees each log entry as it is produced.
pub fn train(
    net: &mut Network,
    samples: &[DepthSample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut order = BatchOrder::new(samples.len(), cfg.seed);
    let mut dropout_rng = init_rng(cfg.seed);
    dropout_rng.set_stream(2);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        net.params(),
    );
    let mut logs = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = order.next_batch(cfg.batch_size);
        let mut sum: Option<Vec<Tensor>> = None;
        let (mut loss, mut cm, mut rm) = (0.0, 0.0, 0.0);
        for &i in &batch {
            let sg = sample_gradients(net, &samples[i], &cfg.loss, Mode::Train(&mut dropout_rng))?;
            loss += sg.loss;
            cm += sg.coarse_mse;
            rm += sg.refined_mse;
            match &mut sum {
                None => sum = Some(sg.grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&sg.grads) {
                        a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                    }
                }
            }
        }
        let b = batch.len() as f64;
        let mut grads = sum.expect("batch is non-empty");
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|x| *x /= b);
        }
        let entry = StepLog {
            step,
            loss: loss / b,
            coarse_mse: cm / b,
            refined_mse: rm / b,
        };
        on_step(&entry);
        logs.push(entry);
        adam.step(net.params_mut(), &grads)?;
    }
    Ok(logs)
}
