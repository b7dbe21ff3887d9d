use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsprobe::data::SyntheticSpec;
use fsprobe::runner::{
    aggregate_file, aggregate_manifest, emit_report, run_full, run_grid, run_sweep, synth,
    validate_path, Embedding, ExperimentConfig, GridResult, Mode, Normalization, ReportKind,
};
use fsprobe::sampler::OrderPolicy;
use fsprobe::{Error, Result};

/// Few-shot linear probes over pretrained audio embeddings.
#[derive(Parser, Debug)]
#[command(name = "fsprobe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Aggregate frame embeddings into mean ⊕ std clip features.
    Aggregate(AggregateArgs),
    /// Generate a synthetic multi-label dataset.
    Synth(SynthArgs),
    /// Train and evaluate the probe on the full training split.
    TrainFull(ExperimentArgs),
    /// Sweep K at the largest available N.
    Sweep(ExperimentArgs),
    /// Train every (N, K) cell of the few-shot grid.
    Grid(ExperimentArgs),
    /// Emit a report from a results summary.
    Report(ReportArgs),
    /// Check binary files and manifests.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct AggregateArgs {
    /// Single frames file; written without normalization.
    #[arg(long, conflicts_with_all = ["manifest", "embedding", "normalization"])]
    frames: Option<PathBuf>,
    #[arg(long, required_unless_present = "frames")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    embedding: Option<String>,
    #[arg(long)]
    normalization: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    clips: usize,
    #[arg(long, default_value_t = 10)]
    tags: usize,
    #[arg(long, default_value_t = 32)]
    dims: usize,
    #[arg(long, default_value_t = 4)]
    frames: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Dataset name recorded in the manifest.
    #[arg(long, default_value = "synthetic")]
    name: String,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Summary JSON written by `sweep` or `grid`.
    #[arg(long)]
    results: PathBuf,
    /// heatmap-csv, curve-csv, summary-json or rows-csv.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    out: PathBuf,
    /// File name prefix; defaults to the results file stem.
    #[arg(long)]
    stem: Option<String>,
}

/// Experiment settings; each flag overrides the same field of `--config`.
#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// vggish, openl3, passt, synthetic, other:<name> or combined.
    #[arg(long)]
    embedding: Option<String>,
    #[arg(long, visible_alias = "out")]
    output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// zscore, unit_l2 or none.
    #[arg(long)]
    normalization: Option<String>,
    /// frequency_descending, manifest_order or seeded_shuffle.
    #[arg(long)]
    order_policy: Option<String>,
    #[arg(long)]
    no_dedup: bool,
    #[arg(long)]
    no_correlation: bool,
    #[arg(long)]
    full_probe: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    record_timings: bool,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    l2_penalty: Option<f64>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.replace('-', "_")))
        .map_err(|_| Error::Config(format!("unknown {what} {value:?}")))
}

impl ExperimentArgs {
    fn into_config(self, mode: Mode) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        c.mode = mode;
        if let Some(v) = self.manifest {
            c.manifest = v;
        }
        if let Some(v) = self.embedding {
            c.embedding = v.parse()?;
        }
        if let Some(v) = self.output_dir {
            c.output_dir = v;
        }
        if self.n_list.is_some() {
            c.n_list = self.n_list;
        }
        if self.k_list.is_some() {
            c.k_list = self.k_list;
        }
        if self.seeds.is_some() {
            c.seeds = self.seeds;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.normalization {
            c.normalization = parse_enum("normalization", &v)?;
        }
        if let Some(v) = self.order_policy {
            c.order_policy = parse_enum::<OrderPolicy>("order policy", &v)?;
        }
        if self.no_dedup {
            c.dedup = false;
        }
        if self.no_correlation {
            c.correlation = false;
        }
        if self.full_probe.is_some() {
            c.full_probe = self.full_probe;
        }
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        if self.record_timings {
            c.record_timings = true;
        }
        if let Some(v) = self.learning_rate {
            c.train.learning_rate = v;
        }
        if let Some(v) = self.max_epochs {
            c.train.max_epochs = v;
        }
        if let Some(v) = self.patience {
            c.train.patience = v;
        }
        if let Some(v) = self.l2_penalty {
            c.train.l2_penalty = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Aggregate(a) => {
            let table = match (&a.frames, &a.manifest) {
                (Some(frames), _) => aggregate_file(frames, &a.out)?,
                (None, Some(manifest)) => {
                    let embedding: Embedding = match &a.embedding {
                        Some(e) => e.parse()?,
                        None => Embedding::Combined,
                    };
                    let normalization: Normalization = match &a.normalization {
                        Some(n) => parse_enum("normalization", n)?,
                        None => Normalization::default(),
                    };
                    aggregate_manifest(manifest, &embedding, normalization, &a.out)?
                }
                (None, None) => return Err(Error::Config("give --frames or --manifest".into())),
            };
            println!("{}: {} clips × {} dims", a.out.display(), table.num_clips(), table.dims());
        }
        Command::Synth(s) => {
            let spec = SyntheticSpec {
                num_clips: s.clips,
                num_tags: s.tags,
                frame_dim: s.dims,
                frames_per_clip: s.frames,
                noise_scale: s.noise,
                seed: s.seed,
            };
            print_files(&synth(&spec, &s.out, &s.name)?);
        }
        Command::TrainFull(args) => {
            let outcome = run_full(&args.into_config(Mode::Full)?)?;
            println!("mAP {:.4}  AUC {:.4}", outcome.report.map, outcome.report.mean_auc);
            print_files(&outcome.files);
        }
        Command::Sweep(args) => print_files(&run_sweep(&args.into_config(Mode::Sweep)?)?.1),
        Command::Grid(args) => print_files(&run_grid(&args.into_config(Mode::Grid)?)?.1),
        Command::Report(r) => {
            let kind: ReportKind = r.kind.parse()?;
            let result = GridResult::load(&r.results)?;
            let stem = r.stem.unwrap_or_else(|| default_stem(&r.results));
            print_files(&emit_report(&result, kind, &r.out, &stem)?);
        }
        Command::Validate { paths } => {
            for p in paths {
                println!("{}: {}", p.display(), validate_path(&p)?);
            }
        }
    }
    Ok(())
}

fn default_stem(results: &Path) -> String {
    let stem = results.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    stem.strip_suffix("_summary").unwrap_or(stem).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
