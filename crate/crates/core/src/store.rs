//! On-disk artifacts: append-only sample stores, run manifests, and
//! output files that are never overwritten.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::seeding::StreamKey;
use crate::utility::{DesignUtilityEstimate, ExcludedReplicate, UtilitySample};

/// Identity of a sample store; stored beside the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub design: Design,
    pub stream: StreamKey,
    pub t2: usize,
    /// [`ExperimentConfig::sampling_hash`](crate::config::ExperimentConfig::sampling_hash) of the producing run.
    pub sampling_hash: String,
}

/// Utility samples of one design, one JSON object per line.
///
/// `<name>.jsonl` holds the samples, `<name>.excluded.jsonl` the excluded
/// replicates and `<name>.meta.json` the header. Files are only appended to.
#[derive(Debug, Clone)]
pub struct SampleStore {
    samples_path: PathBuf,
    excluded_path: PathBuf,
    header: StoreHeader,
}

fn file_stem(stream: &StreamKey, design: &Design) -> String {
    let label: String = stream
        .label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{label}_{}", design.label())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Input(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if items.is_empty() {
        return Ok(());
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for item in items {
        writeln!(f, "{}", serde_json::to_string(item)?)?;
    }
    f.flush()?;
    Ok(())
}

impl SampleStore {
    /// Opens the store for `header` in `dir`, creating it if needed.
    ///
    /// An existing store with a different header is a contract violation:
    /// its samples were drawn under another configuration.
    pub fn open(dir: &Path, header: StoreHeader) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let stem = file_stem(&header.stream, &header.design);
        let meta = dir.join(format!("{stem}.meta.json"));
        if meta.exists() {
            let existing: StoreHeader = serde_json::from_str(&fs::read_to_string(&meta)?)?;
            if existing != header {
                return Err(Error::ContractViolation(format!(
                    "sample store {} was built with different sampling settings (T2 {} vs {}, hash {} vs {})",
                    meta.display(),
                    existing.t2,
                    header.t2,
                    existing.sampling_hash,
                    header.sampling_hash
                )));
            }
        } else {
            fs::write(&meta, serde_json::to_string_pretty(&header)?)?;
        }
        Ok(Self {
            samples_path: dir.join(format!("{stem}.jsonl")),
            excluded_path: dir.join(format!("{stem}.excluded.jsonl")),
            header,
        })
    }

    pub fn path(&self) -> &Path {
        &self.samples_path
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    /// The estimate made of everything stored so far.
    pub fn load(&self) -> Result<DesignUtilityEstimate> {
        let mut samples: Vec<UtilitySample> = read_jsonl(&self.samples_path)?;
        let mut excluded: Vec<ExcludedReplicate> = read_jsonl(&self.excluded_path)?;
        samples.sort_by_key(|s| s.replicate);
        excluded.sort_by_key(|x| x.replicate);
        let mut seen: Vec<u64> = samples.iter().map(|s| s.replicate).chain(excluded.iter().map(|x| x.replicate)).collect();
        seen.sort_unstable();
        if seen.iter().enumerate().any(|(i, &r)| r != i as u64) {
            return Err(Error::Input(format!(
                "sample store {} does not hold a contiguous replicate range",
                self.samples_path.display()
            )));
        }
        Ok(DesignUtilityEstimate::from_samples(
            self.header.design.clone(),
            self.header.stream.clone(),
            self.header.t2,
            samples,
            excluded,
        ))
    }

    /// Appends the replicates of `estimate` that are not stored yet.
    pub fn save(&self, estimate: &DesignUtilityEstimate) -> Result<()> {
        if estimate.design != self.header.design || estimate.stream != self.header.stream || estimate.t2 != self.header.t2 {
            return Err(Error::ContractViolation("estimate does not belong to this sample store".into()));
        }
        let stored = self.load()?;
        let cut = stored.next_replicate();
        let new_samples: Vec<_> = estimate.samples.iter().filter(|s| s.replicate >= cut).copied().collect();
        let new_excluded: Vec<_> = estimate.excluded.iter().filter(|x| x.replicate >= cut).cloned().collect();
        append_jsonl(&self.samples_path, &new_samples)?;
        append_jsonl(&self.excluded_path, &new_excluded)
    }
}

/// Creates `path` and writes `contents`, refusing to replace an existing file.
pub fn write_new(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = OpenOptions::new().write(true).create_new(true).open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AlreadyExists {
            Error::Input(format!("{} already exists; choose a new output directory", path.display()))
        } else {
            Error::Io(e)
        }
    })?;
    f.write_all(contents)?;
    Ok(())
}

/// Index of everything a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<PathBuf>,
    pub sample_stores: Vec<PathBuf>,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix: unix_now(),
            finished_unix: 0,
            outputs: Vec::new(),
            sample_stores: Vec::new(),
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix = unix_now();
        let path = dir.join("manifest.json");
        write_new(&path, serde_json::to_string_pretty(&self)?.as_bytes())?;
        Ok(path)
    }
}
