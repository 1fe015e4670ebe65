//! File-level workflows behind the command line: train, evaluate, ablate, dump.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::dataset::Manifest;
use crate::data::DepthSample;
use crate::error::{Error, Result};
use crate::kv::KvRecord;
use crate::metrics::{evaluate, Report};
use crate::network::config::CONFIG_KEYS;
use crate::network::{count_params, load_checkpoint, save_checkpoint, Network, NetworkConfig};
use crate::tensor::Tensor;
use crate::train::{log_csv, train, StepLog, TrainConfig, TRAIN_KEYS};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Network and training settings from one `key=value` record.
pub fn parse_run_config(kv: &KvRecord) -> Result<(NetworkConfig, TrainConfig)> {
    let allowed: Vec<&str> = CONFIG_KEYS.iter().chain(TRAIN_KEYS).copied().collect();
    kv.reject_unknown(&allowed)?;
    Ok((NetworkConfig::from_kv(kv)?, TrainConfig::from_kv(kv)?))
}

/// Default training log location next to a checkpoint.
pub fn default_log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_os_string();
    s.push(".log.csv");
    PathBuf::from(s)
}

pub fn load_samples(manifest: &Path) -> Result<Vec<DepthSample>> {
    Manifest::load(manifest)?.load_all()
}

/// Trains from files; writes the checkpoint and the step log.
pub fn train_files(manifest: &Path, config: &Path, ckpt: &Path, log: &Path) -> Result<Vec<StepLog>> {
    let (net_cfg, train_cfg) = parse_run_config(&KvRecord::parse(&read_text(config)?)?)?;
    let samples = load_samples(manifest)?;
    let mut net = Network::new(&net_cfg)?;
    let logs = train(&mut net, &samples, &train_cfg, |_| {})?;
    save_checkpoint(&net, ckpt)?;
    write_text(log, &log_csv(&logs))?;
    Ok(logs)
}

/// Refined predictions of `net` scored against each sample's ground truth.
pub fn evaluate_network(net: &Network, samples: &[DepthSample]) -> Result<Report> {
    let preds: Vec<Tensor> = samples
        .iter()
        .map(|s| net.predict(s).map(|(_, refined)| refined))
        .collect::<Result<_>>()?;
    evaluate(preds.iter().zip(samples.iter().map(|s| &s.gt)))
}

pub fn eval_files(manifest: &Path, ckpt: &Path, report: &Path) -> Result<Report> {
    let net = load_checkpoint(ckpt)?;
    let r = evaluate_network(&net, &load_samples(manifest)?)?;
    write_text(report, &r.to_csv())?;
    Ok(r)
}

/// One named configuration of an ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub name: String,
    pub net: NetworkConfig,
    pub train: TrainConfig,
}

/// Parses a grid file. Each non-blank, non-`#` line is
/// `NAME key=value ...`; a row named `base` sets defaults for all later rows.
pub fn parse_grid(text: &str) -> Result<Vec<GridRow>> {
    let mut base = KvRecord::new();
    let mut rows: Vec<GridRow> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let name = tokens.next().expect("non-empty line");
        let body = tokens.collect::<Vec<_>>().join("\n");
        let kv = KvRecord::parse(&body).map_err(|e| Error::Parse(format!("grid line {}: {e}", lineno + 1)))?;
        if name == "base" {
            base.extend(&kv);
            continue;
        }
        if rows.iter().any(|r| r.name == name) {
            return Err(Error::Parse(format!(
                "grid line {}: duplicate row `{name}`",
                lineno + 1
            )));
        }
        let mut merged = base.clone();
        merged.extend(&kv);
        let (net, train) = parse_run_config(&merged).map_err(|e| Error::config(format!("grid row `{name}`: {e}")))?;
        rows.push(GridRow {
            name: name.to_string(),
            net,
            train,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse("grid defines no rows".into()));
    }
    Ok(rows)
}

pub const ABLATION_HEADER: &str = "row,output_stride,skip,spatial,channel,fusion,refinement,params,final_loss,rmse_mm,mae_mm,irmse_1perkm,imae_1perkm";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub row: GridRow,
    pub params: usize,
    pub final_loss: f64,
    pub report: Report,
}

impl AblationResult {
    pub fn csv_row(&self) -> String {
        let n = &self.row.net;
        let t = &self.report.total;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.row.name,
            n.output_stride,
            n.skip,
            n.spatial,
            n.channel.as_deref().unwrap_or("off"),
            n.fusion,
            n.refinement,
            self.params,
            self.final_loss,
            t.rmse_mm,
            t.mae_mm,
            t.irmse_1perkm,
            t.imae_1perkm
        )
    }
}

pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in results {
        writeln!(out, "{}", r.csv_row()).expect("write to String");
    }
    out
}

/// Trains and scores every row on `samples`; `on_row` sees each result.
pub fn ablate(
    samples: &[DepthSample],
    rows: &[GridRow],
    mut on_row: impl FnMut(&AblationResult),
) -> Result<Vec<AblationResult>> {
    let mut results = Vec::with_capacity(rows.len());
    for row in rows {
        let mut net = Network::new(&row.net)?;
        let logs = train(&mut net, samples, &row.train, |_| {})?;
        let report = evaluate_network(&net, samples)?;
        let r = AblationResult {
            row: row.clone(),
            params: count_params(&row.net)?,
            final_loss: logs.last().map_or(f64::NAN, |l| l.loss),
            report,
        };
        on_row(&r);
        results.push(r);
    }
    Ok(results)
}

pub fn ablate_files(
    manifest: &Path,
    grid: &Path,
    out: &Path,
    on_row: impl FnMut(&AblationResult),
) -> Result<Vec<AblationResult>> {
    let rows = parse_grid(&read_text(grid)?)?;
    let samples = load_samples(manifest)?;
    let results = ablate(&samples, &rows, on_row)?;
    write_text(out, &ablation_csv(&results))?;
    Ok(results)
}
