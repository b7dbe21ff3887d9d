use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::data::SourceId;
use crate::error::{Error, Result};
use crate::probe::TrainConfig;
use crate::sampler::OrderPolicy;

pub const DEFAULT_N_LIST: [usize; 11] = [2, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50];
pub const DEFAULT_K_LIST: [usize; 5] = [1, 5, 10, 15, 20];
/// Sweep mode trains this many ways, or every tag when the vocabulary is smaller.
pub const SWEEP_MAX_N: usize = 50;

/// Input features: one extractor, or every extractor in the manifest concatenated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Embedding {
    Source(SourceId),
    Combined,
}

impl Embedding {
    /// Name safe to embed in output file names.
    pub fn file_stem(&self) -> String {
        self.to_string().replace([':', '/', '\\'], "-")
    }
}

impl fmt::Display for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Embedding::Source(s) => s.fmt(f),
            Embedding::Combined => f.write_str("combined"),
        }
    }
}

impl FromStr for Embedding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "combined" {
            Ok(Embedding::Combined)
        } else {
            s.parse()
                .map(Embedding::Source)
                .map_err(|_| Error::Config(format!("unknown embedding {s:?}")))
        }
    }
}

impl Serialize for Embedding {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    Sweep,
    Grid,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Sweep => "sweep",
            Mode::Grid => "grid",
        })
    }
}

/// Frame normalization applied before aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Per-dimension z-score with training-split statistics.
    #[default]
    Zscore,
    /// Each frame scaled to unit L2 norm.
    UnitL2,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub embedding: Embedding,
    pub mode: Mode,
    /// Grid only; defaults to [`DEFAULT_N_LIST`].
    pub n_list: Option<Vec<usize>>,
    /// Grid and sweep; defaults to [`DEFAULT_K_LIST`].
    pub k_list: Option<Vec<usize>>,
    /// Support-sampling seeds (grid and sweep); defaults to `[0]`.
    pub seeds: Option<Vec<u64>>,
    /// Seed recorded in the full probe's provenance.
    pub seed: u64,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub normalization: Normalization,
    pub order_policy: OrderPolicy,
    /// Greedy cross-tag deduplication of support clips.
    pub dedup: bool,
    /// Compute weight correlation against the full probe.
    pub correlation: bool,
    /// Full-probe artifact; defaults to the one `train-full` writes in `output_dir`.
    pub full_probe: Option<PathBuf>,
    /// Worker threads for grid cells; `None` uses all cores.
    pub threads: Option<usize>,
    /// Include per-cell wall-clock milliseconds in result files.
    pub record_timings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: PathBuf::from("manifest.json"),
            embedding: Embedding::Combined,
            mode: Mode::Full,
            n_list: None,
            k_list: None,
            seeds: None,
            seed: 0,
            train: TrainConfig::default(),
            output_dir: PathBuf::from("out"),
            normalization: Normalization::Zscore,
            order_policy: OrderPolicy::FrequencyDescending,
            dedup: true,
            correlation: true,
            full_probe: None,
            threads: None,
            record_timings: false,
        }
    }
}

fn check_increasing(name: &str, list: &[usize]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::Config(format!("{name} list is empty")));
    }
    if list[0] == 0 {
        return Err(Error::Config(format!("{name} values must be positive")));
    }
    if list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("{name} list {list:?} is not strictly increasing")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        match self.mode {
            Mode::Full => {
                let grid_only = [
                    ("n_list", self.n_list.is_some()),
                    ("k_list", self.k_list.is_some()),
                    ("seeds", self.seeds.is_some()),
                    ("full_probe", self.full_probe.is_some()),
                ];
                if let Some((name, _)) = grid_only.iter().find(|(_, set)| *set) {
                    return Err(Error::Config(format!("{name} does not apply to full mode")));
                }
            }
            Mode::Sweep => {
                if self.n_list.is_some() {
                    return Err(Error::Config("sweep fixes N; n_list does not apply".into()));
                }
            }
            Mode::Grid => {}
        }
        if self.mode != Mode::Full {
            check_increasing("N", &self.n_list())?;
            check_increasing("K", &self.k_list())?;
            if self.seeds().is_empty() {
                return Err(Error::Config("seed list is empty".into()));
            }
        }
        Ok(())
    }

    pub fn n_list(&self) -> Vec<usize> {
        self.n_list.clone().unwrap_or_else(|| DEFAULT_N_LIST.to_vec())
    }

    pub fn k_list(&self) -> Vec<usize> {
        self.k_list.clone().unwrap_or_else(|| DEFAULT_K_LIST.to_vec())
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![0])
    }

    /// Digest of everything that determines result values.
    pub fn result_digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.threads = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn full_probe_path(&self) -> PathBuf {
        self.full_probe.clone().unwrap_or_else(|| {
            self.output_dir
                .join(format!("full_probe_{}.fsp", self.embedding.file_stem()))
        })
    }
}
