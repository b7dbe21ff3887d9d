use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Mode, SWEEP_MAX_N};
use super::pipeline::{prepare, PreparedData};
use super::report::{emit_report, ReportKind};
use crate::analysis::{block_shares, position_norms, weight_correlation, BlockShare};
use crate::data::write_file_atomic;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::probe::{train, ProbeModel, ProbeProvenance, Shots, TrainHistory};
use crate::sampler::{order_tags, sample_support, support_labels, SamplingOptions, TagOrder};

/// One trained and evaluated few-shot probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub embedding: String,
    pub n_way: usize,
    pub k_shot: usize,
    pub seed: u64,
    pub map: f64,
    pub mean_auc: f64,
    pub excluded_tags: usize,
    pub weight_correlation: Option<f64>,
    pub num_test_rows: usize,
    pub support_rows: usize,
    pub shortfall: usize,
    pub best_epoch: Option<usize>,
    pub support_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u64>,
}

impl GridRow {
    fn key(&self) -> (String, usize, usize, u64) {
        (self.embedding.clone(), self.n_way, self.k_shot, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
}

impl GridResult {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Sorts rows by (embedding, N, K, seed).
    pub fn sort(&mut self) {
        self.rows.sort_by_key(GridRow::key);
    }
}

#[derive(Debug, Serialize)]
struct OutputEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `<stem>.outputs.json` listing each produced file with its digest.
pub(crate) fn write_outputs_log(dir: &Path, stem: &str, files: &[PathBuf]) -> Result<PathBuf> {
    let mut entries = Vec::new();
    for f in files {
        let bytes = std::fs::read(f).map_err(|e| Error::io(f, e))?;
        let rel = f.strip_prefix(dir).unwrap_or(f);
        entries.push(OutputEntry {
            path: rel.to_string_lossy().into_owned(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let path = dir.join(format!("{stem}.outputs.json"));
    let mut text = serde_json::to_string_pretty(&entries)?;
    text.push('\n');
    write_file_atomic(&path, text.as_bytes())?;
    Ok(path)
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file_atomic(path, text.as_bytes())
}

#[derive(Debug, Serialize)]
struct FullReport<'a> {
    embedding: String,
    config_digest: String,
    num_train: usize,
    num_valid: usize,
    num_test: usize,
    tag_names: &'a [String],
    metrics: &'a MetricsReport,
    block_shares: Option<Vec<BlockShare>>,
    history: &'a TrainHistory,
}

#[derive(Debug, Clone)]
pub struct FullOutcome {
    pub model: ProbeModel,
    pub report: MetricsReport,
    pub history: TrainHistory,
    pub files: Vec<PathBuf>,
}

/// Trains on the whole training split and evaluates every tag on the test split.
pub fn run_full(config: &ExperimentConfig) -> Result<FullOutcome> {
    if config.mode != Mode::Full {
        return Err(Error::Config(format!("run_full called with mode {}", config.mode)));
    }
    config.validate()?;
    let data = prepare(&config.manifest, &config.embedding, config.normalization)?;
    let (model, history, report) = train_full(&data, config)?;

    let dir = &config.output_dir;
    ensure_dir(dir)?;
    let stem = config.embedding.file_stem();
    let probe_path = dir.join(format!("full_probe_{stem}.fsp"));
    model.write(&probe_path)?;

    let profile = position_norms(&model);
    let shares = match block_shares(&profile, data.table.blocks()) {
        Ok(s) => Some(s),
        Err(Error::Undefined(msg)) => {
            warn!("block shares undefined: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    let report_path = dir.join(format!("full_report_{stem}.json"));
    write_json(
        &report_path,
        &FullReport {
            embedding: config.embedding.to_string(),
            config_digest: config.result_digest(),
            num_train: data.split.train.len(),
            num_valid: data.split.valid.len(),
            num_test: data.split.test.len(),
            tag_names: data.tags.tag_names(),
            metrics: &report,
            block_shares: shares,
            history: &history,
        },
    )?;

    let profile_path = dir.join(format!("weight_profile_{stem}.csv"));
    let mut csv = String::from("position,source,norm\n");
    for b in data.table.blocks() {
        for j in b.start..b.start + b.len {
            csv.push_str(&format!("{j},{},{}\n", b.source, profile.norms[j]));
        }
    }
    write_file_atomic(&profile_path, csv.as_bytes())?;

    let mut files = vec![probe_path, report_path, profile_path];
    files.push(write_outputs_log(dir, &format!("full_{stem}"), &files)?);
    info!("full probe {}: mAP {:.4}, AUC {:.4}", config.embedding, report.map, report.mean_auc);
    Ok(FullOutcome {
        model,
        report,
        history,
        files,
    })
}

/// Trains and evaluates the full probe without writing anything.
pub fn train_full(
    data: &PreparedData,
    config: &ExperimentConfig,
) -> Result<(ProbeModel, TrainHistory, MetricsReport)> {
    let all_tags: Vec<usize> = (0..data.tags.num_tags()).collect();
    let split = &data.split;
    let x_train = data.table.features(&split.train);
    let y_train = data.tags.submatrix(&split.train, &all_tags);
    let x_valid = data.table.features(&split.valid);
    let y_valid = data.tags.submatrix(&split.valid, &all_tags);
    let (mut model, history) = train(&x_train, &y_train, &x_valid, &y_valid, &config.train, config.seed)?;
    model.provenance = ProbeProvenance {
        blocks: data.table.blocks().to_vec(),
        n_way: all_tags.len(),
        k_shot: Shots::Full,
        seed: config.seed,
        config_digest: config.train.digest(),
    };
    let x_test = data.table.features(&split.test);
    let y_test = data.tags.labels().select(Axis(0), &split.test);
    let report = evaluate(&model, &x_test, &y_test, &all_tags)?;
    Ok((model, history, report))
}

struct CellContext<'a> {
    data: &'a PreparedData,
    config: &'a ExperimentConfig,
    orders: BTreeMap<u64, TagOrder>,
    options: SamplingOptions,
    x_valid: Array2<f64>,
    x_test: Array2<f64>,
    y_test: Array2<u8>,
    full: Option<ProbeModel>,
}

impl CellContext<'_> {
    fn run(&self, seed: u64, n_way: usize, k_shot: usize) -> Result<GridRow> {
        let started = Instant::now();
        let data = self.data;
        let support = sample_support(
            &data.tags,
            &data.split,
            &self.orders[&seed],
            n_way,
            k_shot,
            seed,
            self.options,
        )?;
        let (rows, y_train) = support_labels(&data.tags, &support)?;
        let x_train = data.table.features(&rows);
        let y_valid = data.tags.submatrix(&data.split.valid, &support.tag_indices);
        let (mut model, history) =
            train(&x_train, &y_train, &self.x_valid, &y_valid, &self.config.train, seed)?;
        model.tag_indices = support.tag_indices.clone();
        model.provenance = ProbeProvenance {
            blocks: data.table.blocks().to_vec(),
            n_way,
            k_shot: Shots::K(k_shot),
            seed,
            config_digest: self.config.train.digest(),
        };
        let report = evaluate(&model, &self.x_test, &self.y_test, &support.tag_indices)?;
        let weight_correlation = match &self.full {
            Some(full) => {
                match weight_correlation(&model, &full.restrict_tags(&support.tag_indices)?) {
                    Ok(r) => Some(r),
                    Err(Error::Undefined(msg)) => {
                        warn!("N={n_way} K={k_shot} seed={seed}: {msg}");
                        None
                    }
                    Err(e) => return Err(e),
                }
            }
            None => None,
        };
        Ok(GridRow {
            embedding: data.embedding.to_string(),
            n_way,
            k_shot,
            seed,
            map: report.map,
            mean_auc: report.mean_auc,
            excluded_tags: report.excluded.len(),
            weight_correlation,
            num_test_rows: report.num_test_rows,
            support_rows: support.rows.len(),
            shortfall: support.shortfalls.iter().sum(),
            best_epoch: history.best_epoch,
            support_digest: support.digest(),
            wall_clock_ms: self
                .config
                .record_timings
                .then(|| started.elapsed().as_millis() as u64),
        })
    }
}

struct Checkpoint {
    path: PathBuf,
    file: Mutex<File>,
}

impl Checkpoint {
    fn append(&self, row: &GridRow) -> Result<()> {
        let line = serde_json::to_string(row)? + "\n";
        let mut f = self.file.lock().unwrap();
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads completed rows from an earlier run, then rewrites the checkpoint with them.
fn open_checkpoint(dir: &Path, stem: &str, digest: &str) -> Result<(Vec<GridRow>, Checkpoint)> {
    ensure_dir(dir)?;
    let path = dir.join(format!("{stem}.partial.jsonl"));
    let done = resume_rows(&path, digest);
    if !done.is_empty() {
        info!("resuming: {} cells already complete", done.len());
    }
    let mut file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut prefix = serde_json::to_string(&PartialHeader {
        digest: digest.to_string(),
    })?;
    prefix.push('\n');
    for row in &done {
        prefix.push_str(&serde_json::to_string(row)?);
        prefix.push('\n');
    }
    file.write_all(prefix.as_bytes())
        .and_then(|_| file.flush())
        .map_err(|e| Error::io(&path, e))?;
    Ok((
        done,
        Checkpoint {
            path,
            file: Mutex::new(file),
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct PartialHeader {
    digest: String,
}

/// Rows already completed by an interrupted run with the same result digest.
fn resume_rows(path: &Path, digest: &str) -> Vec<GridRow> {
    let Ok(file) = File::open(path) else {
        return Vec::new();
    };
    let mut lines = BufReader::new(file).lines();
    let header_ok = lines
        .next()
        .and_then(|l| l.ok())
        .and_then(|l| serde_json::from_str::<PartialHeader>(&l).ok())
        .is_some_and(|h| h.digest == digest);
    if !header_ok {
        return Vec::new();
    }
    // a torn final line from a crash is dropped
    lines
        .map_while(|l| l.ok())
        .map_while(|l| serde_json::from_str::<GridRow>(&l).ok())
        .collect()
}

/// Loads the full-probe reference when correlation is enabled.
fn load_reference(config: &ExperimentConfig, data: &PreparedData) -> Result<Option<ProbeModel>> {
    if config.correlation {
        let path = config.full_probe_path();
        if !path.exists() {
            return Err(Error::Dependency(format!(
                "full probe {} not found; run train-full first or disable correlation",
                path.display()
            )));
        }
        let full = ProbeModel::load(&path)?;
        if full.dims() != data.table.dims() {
            return Err(Error::Dependency(format!(
                "full probe {} has {} input dims, features have {}",
                path.display(),
                full.dims(),
                data.table.dims()
            )));
        }
        Ok(Some(full))
    } else {
        Ok(None)
    }
}

/// N values a mode trains: the configured list for grids, the largest available for sweeps.
pub fn mode_n_list(config: &ExperimentConfig, num_tags: usize) -> Result<Vec<usize>> {
    match config.mode {
        Mode::Grid => Ok(config.n_list()),
        Mode::Sweep => Ok(vec![num_tags.min(SWEEP_MAX_N)]),
        Mode::Full => Err(Error::Config("full mode has no few-shot cells".into())),
    }
}

/// Few-shot probes for every (seed, N, K) cell, evaluated on the whole test split.
///
/// With `checkpoint_dir` set, each finished row is appended to
/// `<mode>_<embedding>.partial.jsonl` there, and rows left by an interrupted
/// run with the same result digest are reused instead of recomputed.
pub fn run_cells(
    config: &ExperimentConfig,
    data: &PreparedData,
    full: Option<&ProbeModel>,
    checkpoint_dir: Option<&Path>,
) -> Result<GridResult> {
    config.validate()?;
    let n_list = mode_n_list(config, data.tags.num_tags())?;
    let k_list = config.k_list();
    let seeds = config.seeds();
    let num_tags = data.tags.num_tags();
    if let Some(&n) = n_list.iter().find(|&&n| n > num_tags) {
        return Err(Error::Config(format!("N={n} exceeds the {num_tags} tags in the dataset")));
    }
    if let Some(full) = full {
        if full.dims() != data.table.dims() {
            return Err(Error::Dependency(format!(
                "full probe has {} input dims, features have {}",
                full.dims(),
                data.table.dims()
            )));
        }
    }

    let orders = seeds
        .iter()
        .map(|&s| (s, order_tags(&data.tags, &data.split, config.order_policy, s)))
        .collect();
    let ctx = CellContext {
        data,
        config,
        orders,
        options: SamplingOptions {
            dedup: config.dedup,
            horizon: *k_list.last().unwrap(),
        },
        x_valid: data.table.features(&data.split.valid),
        x_test: data.table.features(&data.split.test),
        y_test: data.tags.labels().select(Axis(0), &data.split.test),
        full: full.cloned(),
    };

    let stem = format!("{}_{}", config.mode, config.embedding.file_stem());
    let (done, checkpoint) = match checkpoint_dir {
        Some(dir) => {
            let (done, file) = open_checkpoint(dir, &stem, &config.result_digest())?;
            (done, Some(file))
        }
        None => (Vec::new(), None),
    };

    let finished: HashSet<(usize, usize, u64)> = done.iter().map(|r| (r.n_way, r.k_shot, r.seed)).collect();
    let mut cells = Vec::new();
    for &seed in &seeds {
        for &n in &n_list {
            for &k in &k_list {
                if !finished.contains(&(n, k, seed)) {
                    cells.push((seed, n, k));
                }
            }
        }
    }
    info!("{}: {} cells to run", stem, cells.len());

    let work = || {
        cells
            .par_iter()
            .map(|&(seed, n, k)| {
                let row = ctx.run(seed, n, k)?;
                if let Some(cp) = &checkpoint {
                    cp.append(&row)?;
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()
    };
    let new_rows = match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };

    let mut result = GridResult {
        rows: done.into_iter().chain(new_rows).collect(),
    };
    result.sort();
    Ok(result)
}

fn finalize(config: &ExperimentConfig, result: &GridResult, curve_or_heatmap: ReportKind) -> Result<Vec<PathBuf>> {
    let dir = &config.output_dir;
    let stem = format!("{}_{}", config.mode, config.embedding.file_stem());
    let mut files = emit_report(result, ReportKind::RowsCsv, dir, &stem)?;
    files.extend(emit_report(result, ReportKind::SummaryJson, dir, &stem)?);
    files.extend(emit_report(result, curve_or_heatmap, dir, &stem)?);
    let partial = dir.join(format!("{stem}.partial.jsonl"));
    std::fs::remove_file(&partial).map_err(|e| Error::io(&partial, e))?;
    files.push(write_outputs_log(dir, &stem, &files)?);
    Ok(files)
}

/// The N × K ablation grid.
pub fn run_grid(config: &ExperimentConfig) -> Result<(GridResult, Vec<PathBuf>)> {
    if config.mode != Mode::Grid {
        return Err(Error::Config(format!("run_grid called with mode {}", config.mode)));
    }
    config.validate()?;
    let data = prepare(&config.manifest, &config.embedding, config.normalization)?;
    let full = load_reference(config, &data)?;
    let result = run_cells(config, &data, full.as_ref(), Some(&config.output_dir))?;
    let files = finalize(config, &result, ReportKind::HeatmapCsv)?;
    Ok((result, files))
}

/// Data-efficiency sweep over K at the largest available N.
pub fn run_sweep(config: &ExperimentConfig) -> Result<(GridResult, Vec<PathBuf>)> {
    if config.mode != Mode::Sweep {
        return Err(Error::Config(format!("run_sweep called with mode {}", config.mode)));
    }
    config.validate()?;
    let data = prepare(&config.manifest, &config.embedding, config.normalization)?;
    let full = load_reference(config, &data)?;
    let result = run_cells(config, &data, full.as_ref(), Some(&config.output_dir))?;
    let files = finalize(config, &result, ReportKind::CurveCsv)?;
    Ok((result, files))
}

