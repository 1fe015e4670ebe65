//! On-disk datasets: per-sample files plus a tab-separated manifest.
//!
//! Manifest lines are `index<TAB>rgb_path<TAB>sparse_path<TAB>gt_path<TAB>seed`.
//! Paths are relative to the manifest's directory unless absolute.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::pgm;
use super::scene::SceneConfig;
use super::sparsify::SparsifyConfig;
use super::{availability_mask, gen_sample, DepthSample};
use crate::error::{Error, Result};
use crate::tensor::dtsr::{self, DType};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub keep_rate: f64,
    pub pattern: String,
    pub seed: u64,
}

impl DatasetSpec {
    /// Scene settings for sample `index`.
    pub fn scene(&self, index: usize) -> SceneConfig {
        SceneConfig::new(self.height, self.width, self.sample_seed(index))
    }

    pub fn sample_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }

    pub fn sparsify(&self) -> SparsifyConfig {
        SparsifyConfig::new(self.keep_rate, &self.pattern)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    pub rgb: PathBuf,
    pub sparse: PathBuf,
    pub gt: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub base: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| Error::Parse(format!("manifest line {}: {what}", lineno + 1));
            if fields.len() != 5 {
                return Err(bad(&format!("expected 5 tab-separated fields, got {}", fields.len())));
            }
            entries.push(ManifestEntry {
                index: fields[0].parse().map_err(|_| bad("bad index"))?,
                rgb: PathBuf::from(fields[1]),
                sparse: PathBuf::from(fields[2]),
                gt: PathBuf::from(fields[3]),
                seed: fields[4].parse().map_err(|_| bad("bad seed"))?,
            });
        }
        if entries.is_empty() {
            return Err(Error::Parse("manifest has no entries".into()));
        }
        Ok(Self {
            base: base.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                e.index,
                e.rgb.display(),
                e.sparse.display(),
                e.gt.display(),
                e.seed
            )
            .expect("write to String");
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sample(&self, i: usize) -> Result<DepthSample> {
        let entry = self.entries.get(i).ok_or_else(|| Error::Lookup {
            kind: "sample",
            name: i.to_string(),
        })?;
        load_sample(entry, &self.base)
    }

    pub fn load_all(&self) -> Result<Vec<DepthSample>> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_sample(entry: &ManifestEntry, base: &Path) -> Result<DepthSample> {
    let rgb = dtsr::load(resolve(base, &entry.rgb))?;
    let sparse = pgm::read_depth(&resolve(base, &entry.sparse))?;
    let gt = pgm::read_depth(&resolve(base, &entry.gt))?;
    let mask = availability_mask(&sparse);
    let s = DepthSample { rgb, sparse, mask, gt };
    s.validate()?;
    Ok(s)
}

/// Writes one sample's files into `dir` and returns its manifest entry.
pub fn write_sample(dir: &Path, index: usize, seed: u64, sample: &DepthSample) -> Result<ManifestEntry> {
    let entry = ManifestEntry {
        index,
        rgb: PathBuf::from(format!("{index:05}_rgb.dtsr")),
        sparse: PathBuf::from(format!("{index:05}_sparse.pgm")),
        gt: PathBuf::from(format!("{index:05}_gt.pgm")),
        seed,
    };
    dtsr::save(dir.join(&entry.rgb), &sample.rgb, DType::F64)?;
    pgm::write_depth(&dir.join(&entry.sparse), &sample.sparse)?;
    pgm::write_depth(&dir.join(&entry.gt), &sample.gt)?;
    Ok(entry)
}

/// Generates `spec.n` samples into `out_dir` and writes the manifest.
/// Returns the manifest path.
pub fn make_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<PathBuf> {
    if spec.n == 0 {
        return Err(Error::config("dataset needs at least one sample"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let sample = gen_sample(&spec.scene(i), &spec.sparsify())?;
        entries.push(write_sample(out_dir, i, spec.sample_seed(i), &sample)?);
    }
    let manifest = Manifest {
        base: out_dir.to_path_buf(),
        entries,
    };
    let path = out_dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// In-memory equivalent of `make_dataset` followed by loading every sample.
pub fn gen_samples(spec: &DatasetSpec) -> Result<Vec<DepthSample>> {
    (0..spec.n)
        .map(|i| gen_sample(&spec.scene(i), &spec.sparsify()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        DatasetSpec {
            n: 3,
            height: 16,
            width: 32,
            keep_rate: 0.2,
            pattern: "uniform".into(),
            seed: 40,
        }
    }

    #[test]
    fn disk_round_trip_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = make_dataset(&spec(), dir.path()).unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.entries[2].seed, 42);
        assert_eq!(m.load_all().unwrap(), gen_samples(&spec()).unwrap());
    }

    #[test]
    fn manifest_parse_errors() {
        let base = Path::new(".");
        assert!(Manifest::parse("", base).is_err());
        assert!(Manifest::parse("0\ta\tb\tc\n", base).is_err());
        assert!(Manifest::parse("x\ta\tb\tc\t1\n", base).is_err());
        let m = Manifest::parse("0\ta\tb\tc\t1\n", base).unwrap();
        assert_eq!(m.render(), "0\ta\tb\tc\t1\n");
    }

    #[test]
    fn missing_file_is_io_error() {
        let m = Manifest::parse("0\tnope.dtsr\tb\tc\t1\n", Path::new("/nonexistent")).unwrap();
        assert!(matches!(m.sample(0), Err(Error::Io { .. })));
    }
}
