//! KITTI-style depth completion metrics, pooled over all valid pixels.
//!
//! Depths are millimetres; inverse depth is `1e6 / d_mm` in 1/km. A pixel
//! is valid when its ground truth is positive. Inverse metrics additionally
//! skip pixels predicted as exactly 0 and count them separately.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const REPORT_HEADER: &str = "samples,valid_pixels,rmse_mm,mae_mm,irmse_1perkm,imae_1perkm,excluded_inverse_pixels";
pub const SAMPLE_HEADER: &str = "sample,valid_pixels,rmse_mm,mae_mm,irmse_1perkm,imae_1perkm,excluded_inverse_pixels";

/// Running sums from which every metric is derived.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    pub valid: usize,
    pub sq: f64,
    pub abs: f64,
    pub inv_valid: usize,
    pub inv_sq: f64,
    pub inv_abs: f64,
    pub excluded: usize,
}

pub fn inverse_km(d_mm: f64) -> f64 {
    1e6 / d_mm
}

impl Accumulator {
    pub fn add(&mut self, pred: &Tensor, gt: &Tensor) -> Result<()> {
        if pred.shape() != gt.shape() {
            return Err(Error::dim("metrics", pred.shape(), gt.shape()));
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g.is_nan() || g <= 0.0 {
                continue;
            }
            let e = p - g;
            self.valid += 1;
            self.sq += e * e;
            self.abs += e.abs();
            if p == 0.0 {
                self.excluded += 1;
            } else {
                let ie = inverse_km(p) - inverse_km(g);
                self.inv_valid += 1;
                self.inv_sq += ie * ie;
                self.inv_abs += ie.abs();
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, o: &Accumulator) {
        self.valid += o.valid;
        self.sq += o.sq;
        self.abs += o.abs;
        self.inv_valid += o.inv_valid;
        self.inv_sq += o.inv_sq;
        self.inv_abs += o.inv_abs;
        self.excluded += o.excluded;
    }

    pub fn metrics(&self) -> Metrics {
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        Metrics {
            valid_pixels: self.valid,
            rmse_mm: mean(self.sq, self.valid).sqrt(),
            mae_mm: mean(self.abs, self.valid),
            irmse_1perkm: mean(self.inv_sq, self.inv_valid).sqrt(),
            imae_1perkm: mean(self.inv_abs, self.inv_valid),
            excluded_inverse_pixels: self.excluded,
        }
    }
}

/// Metric values; NaN where no pixel contributed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub valid_pixels: usize,
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub irmse_1perkm: f64,
    pub imae_1perkm: f64,
    pub excluded_inverse_pixels: usize,
}

impl Metrics {
    fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.valid_pixels,
            self.rmse_mm,
            self.mae_mm,
            self.irmse_1perkm,
            self.imae_1perkm,
            self.excluded_inverse_pixels
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub samples: usize,
    pub total: Metrics,
    pub per_sample: Vec<Metrics>,
    /// No valid pixel anywhere; metric values are NaN.
    pub degenerate: bool,
}

/// Pixel-pooled metrics over `(prediction, ground truth)` pairs.
pub fn evaluate<'a>(pairs: impl IntoIterator<Item = (&'a Tensor, &'a Tensor)>) -> Result<Report> {
    let mut total = Accumulator::default();
    let mut per_sample = Vec::new();
    for (pred, gt) in pairs {
        let mut acc = Accumulator::default();
        acc.add(pred, gt)?;
        total.merge(&acc);
        per_sample.push(acc.metrics());
    }
    Ok(Report {
        samples: per_sample.len(),
        total: total.metrics(),
        per_sample,
        degenerate: total.valid == 0,
    })
}

impl Report {
    /// Aggregate header and row, a blank line, then one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{REPORT_HEADER}\n{},{}\n\n{SAMPLE_HEADER}\n",
            self.samples,
            self.total.csv_fields()
        );
        for (i, m) in self.per_sample.iter().enumerate() {
            writeln!(out, "{i},{}", m.csv_fields()).expect("write to String");
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |m: &str| Error::Parse(format!("report: {m}"));
        if lines.next() != Some(REPORT_HEADER) {
            return Err(bad("missing aggregate header"));
        }
        let (samples, total) = parse_row(lines.next().ok_or_else(|| bad("missing aggregate row"))?)?;
        if lines.next() != Some("") || lines.next() != Some(SAMPLE_HEADER) {
            return Err(bad("missing per-sample section"));
        }
        let mut per_sample = Vec::new();
        for (i, line) in lines.enumerate() {
            let (idx, m) = parse_row(line)?;
            if idx != i {
                return Err(bad(&format!("sample row {i} labelled {idx}")));
            }
            per_sample.push(m);
        }
        if per_sample.len() != samples {
            return Err(bad(&format!("{} sample rows for {samples} samples", per_sample.len())));
        }
        Ok(Self {
            samples,
            total,
            per_sample,
            degenerate: total.valid_pixels == 0,
        })
    }
}

fn parse_row(line: &str) -> Result<(usize, Metrics)> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 7 {
        return Err(Error::Parse(format!("report row `{line}` needs 7 fields")));
    }
    let u = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad count `{s}`")));
    let x = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad value `{s}`")));
    Ok((
        u(f[0])?,
        Metrics {
            valid_pixels: u(f[1])?,
            rmse_mm: x(f[2])?,
            mae_mm: x(f[3])?,
            irmse_1perkm: x(f[4])?,
            imae_1perkm: x(f[5])?,
            excluded_inverse_pixels: u(f[6])?,
        },
    ))
}
