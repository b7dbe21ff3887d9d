//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod oracles;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fsprobe::data::{generate_synthetic, SyntheticDataset, SyntheticSpec};
use fsprobe::metrics::{average_precision, roc_auc, MetricsReport};
use fsprobe::probe::{gradient, ProbeModel, ProbeProvenance, Shots};
use fsprobe::runner::{
    aggregate_source, run_cells, run_full, train_full, Embedding, ExperimentConfig, GridResult,
    Mode, Normalization, PreparedData,
};
use fsprobe::sampler::{order_tags, sample_support, OrderPolicy, SamplingOptions};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fsprobe(args: &[OsString]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fsprobe"))
        .args(args)
        .output()
        .expect("spawn fsprobe")
}

macro_rules! args {
    ($($a:expr),* $(,)?) => { vec![$(OsString::from($a)),*] };
}

fn separable_spec() -> SyntheticSpec {
    SyntheticSpec {
        num_clips: 500,
        num_tags: 10,
        frame_dim: 32,
        frames_per_clip: 4,
        noise_scale: 0.1,
        seed: 42,
    }
}

fn prepared(data: &SyntheticDataset) -> PreparedData {
    PreparedData {
        embedding: Embedding::Source(data.frames.source().clone()),
        table: aggregate_source(&data.frames, &data.split, Normalization::Zscore).unwrap(),
        tags: data.tags.clone(),
        split: data.split.clone(),
    }
}

// ---------------------------------------------------------------------------

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut cases = 0usize;
    let mut degenerate_ok = true;
    let check = |scores: &[f64], labels: &[u8], worst: &mut f64| {
        let ap = average_precision(scores, labels).unwrap();
        let auc = roc_auc(scores, labels).unwrap();
        *worst = worst
            .max((ap - oracles::average_precision(scores, labels)).abs())
            .max((auc - oracles::roc_auc(scores, labels)).abs());
    };

    for n in 1..=8usize {
        for mask in 0u32..(1 << n) {
            let labels: Vec<u8> = (0..n).map(|i| ((mask >> i) & 1) as u8).collect();
            let families: [Vec<f64>; 3] = [
                (0..n).map(|_| rng.random::<f64>()).collect(),
                (0..n).map(|_| f64::from(rng.random_range(0..3u8))).collect(),
                vec![0.5; n],
            ];
            let pos = mask.count_ones() as usize;
            for scores in &families {
                if pos == 0 {
                    degenerate_ok &=
                        average_precision(scores, &labels).is_err() && roc_auc(scores, &labels).is_err();
                } else if pos == n {
                    degenerate_ok &= average_precision(scores, &labels).ok() == Some(1.0)
                        && oracles::average_precision(scores, &labels) == 1.0
                        && roc_auc(scores, &labels).is_err();
                } else {
                    check(scores, &labels, &mut worst);
                    cases += 1;
                }
            }
        }
    }
    for i in 0..1000 {
        let n = rng.random_range(2..=200usize);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        labels[0] = 1;
        labels[1] = 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.sample(StandardNormal);
                if i % 2 == 0 { s } else { (s * 4.0).round() / 4.0 }
            })
            .collect();
        check(&scores, &labels, &mut worst);
        cases += 1;
    }
    let elapsed = started.elapsed();
    outcome(
        worst <= 1e-12 && degenerate_ok && elapsed < Duration::from_secs(10),
        format!(
            "{cases} cases, max |Δ| = {worst:.2e} (≤ 1e-12), single-class patterns handled: {degenerate_ok}, {:.2}s (< 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let normal = |rng: &mut ChaCha8Rng, scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
    for problem in 0..50 {
        let (n, d, t) = if problem == 0 {
            (10, 16, 5)
        } else {
            (rng.random_range(1..=10), rng.random_range(1..=16), rng.random_range(1..=5))
        };
        let x = Array2::from_shape_fn((n, d), |_| normal(&mut rng, 1.0));
        let y = Array2::from_shape_fn((n, t), |_| f64::from(u8::from(rng.random_bool(0.4))));
        let w = Array2::from_shape_fn((t, d), |_| normal(&mut rng, 0.5));
        let b = Array1::from_shape_fn(t, |_| normal(&mut rng, 0.5));
        let l2 = if problem % 2 == 0 { 0.0 } else { rng.random_range(0.0..0.1) };

        let provenance = ProbeProvenance {
            blocks: vec![],
            n_way: t,
            k_shot: Shots::Full,
            seed: 0,
            config_digest: String::new(),
        };
        let model = ProbeModel::new(w.clone(), b.clone(), (0..t).collect(), provenance).unwrap();
        let (gw, gb) = gradient(&model, &x, &y, l2).unwrap();

        let rel = |a: f64, num: f64| if a == num { 0.0 } else { (a - num).abs() / a.abs().max(num.abs()) };
        for i in 0..t {
            for j in 0..d {
                let num = oracles::central_difference(&w, &b, &x, &y, l2, i, Some(j), h);
                worst = worst.max(rel(gw[[i, j]], num));
            }
            let num = oracles::central_difference(&w, &b, &x, &y, l2, i, None, h);
            worst = worst.max(rel(gb[i], num));
        }
    }
    let elapsed = started.elapsed();
    outcome(
        worst < 1e-5 && elapsed < Duration::from_secs(10),
        format!(
            "50 problems up to 10×16×5, max relative error {worst:.2e} (< 1e-5), {:.2}s (< 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn separable_recovery() -> Outcome {
    let started = Instant::now();
    let data = generate_synthetic(&separable_spec()).unwrap();

    // a direct construction shows the targets are attainable
    let means = {
        let t = fsprobe::data::aggregate_frames(&data.frames);
        let d = data.frames.dims();
        t.rows().slice(ndarray::s![.., ..d]).mapv(f64::from)
    };
    let scores = means.dot(&oracles::separating_weights(&data.prototypes).t());
    let test = &data.split.test;
    let all: Vec<usize> = (0..data.tags.num_tags()).collect();
    let constructed = MetricsReport::from_scores(
        &scores.select(Axis(0), test),
        &data.tags.labels().select(Axis(0), test),
        &all,
    )
    .unwrap();

    let config = ExperimentConfig {
        embedding: Embedding::Source(data.frames.source().clone()),
        ..ExperimentConfig::default()
    };
    let (_, history, report) = train_full(&prepared(&data), &config).unwrap();
    let elapsed = started.elapsed();
    outcome(
        report.map >= 0.95
            && report.mean_auc >= 0.98
            && constructed.map >= 0.95
            && constructed.mean_auc >= 0.98
            && elapsed < Duration::from_secs(60),
        format!(
            "trained mAP {:.4} (≥ 0.95), AUC {:.4} (≥ 0.98) after {} epochs; constructed solution mAP {:.4}, AUC {:.4}; {:.1}s (< 60s)",
            report.map,
            report.mean_auc,
            history.train_loss.len(),
            constructed.map,
            constructed.mean_auc,
            elapsed.as_secs_f64()
        ),
    )
}

/// Seed-mean (mAP, correlation) per K at N = 10 on the separable dataset.
fn trend_means() -> Vec<(usize, f64, f64)> {
    let data = generate_synthetic(&separable_spec()).unwrap();
    let prepared = prepared(&data);
    let mut config = ExperimentConfig {
        embedding: Embedding::Source(data.frames.source().clone()),
        ..ExperimentConfig::default()
    };
    let (full, _, _) = train_full(&prepared, &config).unwrap();
    config.mode = Mode::Grid;
    config.n_list = Some(vec![10]);
    config.seeds = Some((0..5).collect());
    let result = run_cells(&config, &prepared, Some(&full), None).unwrap();
    config
        .k_list()
        .into_iter()
        .map(|k| {
            let rows: Vec<_> = result.rows.iter().filter(|r| r.k_shot == k).collect();
            let map = rows.iter().map(|r| r.map).sum::<f64>() / rows.len() as f64;
            let corr = rows.iter().map(|r| r.weight_correlation.unwrap()).sum::<f64>() / rows.len() as f64;
            (k, map, corr)
        })
        .collect()
}

fn data_efficiency(means: &[(usize, f64, f64)]) -> Outcome {
    let drops: Vec<f64> = means.windows(2).map(|w| w[0].1 - w[1].1).filter(|d| *d > 0.0).collect();
    let pass = drops.len() <= 1 && drops.iter().all(|d| *d <= 0.02);
    let series: Vec<String> = means.iter().map(|(k, m, _)| format!("K={k}: {m:.4}")).collect();
    outcome(
        pass,
        format!(
            "N=10, 5 seeds, seed-mean mAP [{}]; {} adjacent decrease(s) (≤ 1, each ≤ 0.02)",
            series.join(", "),
            drops.len()
        ),
    )
}

fn correlation_trend(means: &[(usize, f64, f64)]) -> Outcome {
    let first = means.first().unwrap().2;
    let last = means.last().unwrap().2;
    let series: Vec<String> = means.iter().map(|(k, _, c)| format!("K={k}: {c:.4}")).collect();
    outcome(
        last > first && last >= 0.8,
        format!("seed-mean correlation [{}]; K=20 > K=1 and K=20 ≥ 0.8", series.join(", ")),
    )
}

fn nesting() -> Outcome {
    let data = generate_synthetic(&SyntheticSpec {
        num_clips: 120,
        num_tags: 6,
        frame_dim: 4,
        frames_per_clip: 1,
        noise_scale: 0.1,
        seed: 7,
    })
    .unwrap();
    let (ns, ks) = ([2usize, 3, 5], [1usize, 2, 4]);
    let options = SamplingOptions {
        dedup: true,
        horizon: 4,
    };
    let mut checks = 0usize;
    let mut violations = Vec::new();
    for seed in 0..10u64 {
        let order = order_tags(&data.tags, &data.split, OrderPolicy::FrequencyDescending, seed);
        let mut sets = BTreeMap::new();
        for &n in &ns {
            for &k in &ks {
                sets.insert((n, k), sample_support(&data.tags, &data.split, &order, n, k, seed, options).unwrap());
            }
        }
        for (&(n, k), small) in &sets {
            for (&(n2, k2), big) in &sets {
                if n > n2 || k > k2 || (n, k) == (n2, k2) {
                    continue;
                }
                checks += 1;
                let tags_nested = big.tag_indices[..n] == small.tag_indices[..];
                let per_tag_nested = small
                    .per_tag
                    .iter()
                    .zip(&big.per_tag)
                    .all(|(s, b)| b.starts_with(s));
                let rows: BTreeSet<_> = big.rows.iter().collect();
                let union_nested = small.rows.iter().all(|r| rows.contains(r));
                if !(tags_nested && per_tag_nested && union_nested) {
                    violations.push(format!("seed {seed}: ({n},{k}) ⊄ ({n2},{k2})"));
                }
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!(
            "N ∈ {{2,3,5}} × K ∈ {{1,2,4}} × 10 seeds, {checks} ordered pairs checked, {} violation(s){}",
            violations.len(),
            violations.first().map(|v| format!(", first {v}")).unwrap_or_default()
        ),
    )
}

fn csv_shape(path: &Path) -> (usize, usize, bool) {
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cols = lines[0].split(',').count() - 1;
    let complete = lines[1..]
        .iter()
        .all(|l| l.split(',').count() == cols + 1 && l.split(',').all(|v| !v.is_empty()));
    (lines.len() - 1, cols, complete)
}

fn grid_shape(work: &Path) -> Outcome {
    let data = work.join("data50");
    let out = work.join("out50");
    let synth = fsprobe(&args![
        "synth", "--clips", "1500", "--tags", "50", "--dims", "8", "--frames", "2", "--seed", "5",
        "--out", &data
    ]);
    let manifest = data.join("manifest.json");
    let common = args!["--manifest", &manifest, "--embedding", "synthetic", "--out", &out];
    let full = fsprobe(&[args!["train-full"], common.clone()].concat());
    let grid = fsprobe(&[args!["grid"], common].concat());
    if !(synth.status.success() && full.status.success() && grid.status.success()) {
        return outcome(
            false,
            format!("command failed: {}", String::from_utf8_lossy(&grid.stderr)),
        );
    }
    let result = GridResult::load(&out.join("grid_synthetic_summary.json")).unwrap();
    let cells: BTreeSet<_> = result.rows.iter().map(|r| (r.n_way, r.k_shot)).collect();
    let mut shapes = Vec::new();
    let mut pass = result.rows.len() == 55 && cells.len() == 55;
    for name in ["map", "auc", "map_std", "auc_std"] {
        let (rows, cols, complete) = csv_shape(&out.join(format!("grid_synthetic_heatmap_{name}.csv")));
        pass &= rows == 5 && cols == 11 && complete;
        shapes.push(format!("{name} {rows}×{cols}"));
    }
    outcome(
        pass,
        format!(
            "{} rows over {} distinct (N, K) cells (= 55); heatmaps K×N: {}",
            result.rows.len(),
            cells.len(),
            shapes.join(", ")
        ),
    )
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Stdout lines and every file under the root.
type Session = (Vec<String>, BTreeMap<PathBuf, Vec<u8>>);

fn determinism(work: &Path) -> Outcome {
    let session = |root: &Path| -> std::result::Result<Session, String> {
        let data = root.join("data");
        let out = root.join("out");
        let manifest = data.join("manifest.json");
        let summary = out.join("grid_synthetic_summary.json");
        let exp = args!["--manifest", &manifest, "--embedding", "synthetic", "--out", &out];
        let mut commands = vec![
            args!["synth", "--clips", "300", "--tags", "8", "--dims", "8", "--frames", "3", "--seed", "11", "--out", &data],
            args!["validate", data.join("frames.fse"), data.join("tags.fsl"), &manifest],
            args!["aggregate", "--frames", data.join("frames.fse"), "--out", root.join("raw.fsa")],
            args!["aggregate", "--manifest", &manifest, "--embedding", "synthetic", "--out", root.join("z.fsa")],
            [args!["train-full"], exp.clone()].concat(),
            [args!["sweep", "--k-list", "1,5,10", "--seeds", "0,1"], exp.clone()].concat(),
            [args!["grid", "--n-list", "2,5,8", "--k-list", "1,5", "--seeds", "0,1,2"], exp].concat(),
        ];
        for kind in ["heatmap-csv", "curve-csv", "summary-json", "rows-csv"] {
            commands.push(args!["report", "--results", &summary, "--kind", kind, "--out", root.join("report")]);
        }
        commands.push(args!["validate", root.join("z.fsa"), out.join("full_probe_synthetic.fsp")]);

        let mut stdouts = Vec::new();
        for c in &commands {
            let o = fsprobe(c);
            if !o.status.success() {
                return Err(format!("{:?} failed: {}", c[0], String::from_utf8_lossy(&o.stderr)));
            }
            stdouts.push(String::from_utf8_lossy(&o.stdout).replace(&*root.to_string_lossy(), "<root>"));
        }
        Ok((stdouts, snapshot(root)))
    };
    let root = work.join("determinism");
    let first = session(&root);
    std::fs::remove_dir_all(&root).unwrap();
    let (a, b) = match (first, session(&root)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e),
    };
    let differing: Vec<String> = a
        .1
        .keys()
        .chain(b.1.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|p| a.1.get(*p) != b.1.get(*p))
        .map(|p| p.display().to_string())
        .collect();
    let stdout_equal = a.0 == b.0;
    outcome(
        differing.is_empty() && stdout_equal,
        format!(
            "{} subcommand invocations × 2 runs, {} output files compared, {} differing{}; stdout identical: {stdout_equal}",
            a.0.len(),
            a.1.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({})", differing.join(", ")) }
        ),
    )
}

/// Optional check against published full-probe numbers on user-supplied embeddings.
fn headline_numbers(work: &Path) -> Option<String> {
    let manifest = std::env::var_os("FSPROBE_MTAT_MANIFEST")?;
    let expected = [
        ("combined", 0.47, 0.92),
        ("passt", 0.45, 0.91),
        ("openl3", 0.43, 0.90),
        ("vggish", 0.42, 0.90),
    ];
    let mut parts = Vec::new();
    for (embedding, map, auc) in expected {
        let config = ExperimentConfig {
            manifest: PathBuf::from(&manifest),
            embedding: embedding.parse().unwrap(),
            output_dir: work.join("headline"),
            ..ExperimentConfig::default()
        };
        match run_full(&config) {
            Ok(o) => parts.push(format!(
                "{embedding} mAP {:.3} ({:+.3}) AUC {:.3} ({:+.3}){}",
                o.report.map,
                o.report.map - map,
                o.report.mean_auc,
                o.report.mean_auc - auc,
                if (o.report.map - map).abs() <= 0.02 { "" } else { " outside ±0.02" }
            )),
            Err(e) => parts.push(format!("{embedding}: {e}")),
        }
    }
    Some(parts.join("; "))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        }
    }
}

type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);

fn main() -> ExitCode {
    let work = tempfile::tempdir().unwrap();
    let work = work.path();
    let trend = std::cell::OnceCell::new();
    let trend_of = || trend.get_or_init(trend_means).clone();

    let criteria: Vec<Criterion<'_>> = vec![
        ("metric oracle equivalence", Box::new(metric_oracle)),
        ("gradient check", Box::new(gradient_check)),
        ("separable synthetic recovery", Box::new(separable_recovery)),
        ("data-efficiency trend", Box::new(|| data_efficiency(&trend_of()))),
        ("weight-correlation trend", Box::new(|| correlation_trend(&trend_of()))),
        ("nesting invariant", Box::new(nesting)),
        ("grid shape", Box::new(|| grid_shape(work))),
        ("determinism", Box::new(|| determinism(work))),
    ];
    let total = criteria.len();
    let mut passed = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let o = guarded(run);
        passed += usize::from(o.pass);
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
    }
    match headline_numbers(work) {
        Some(detail) => println!("INFO headline numbers (non-gating): {detail}"),
        None => println!(
            "SKIP headline numbers (non-gating): set FSPROBE_MTAT_MANIFEST to a manifest of extracted embeddings"
        ),
    }
    println!("acceptance: {passed}/{total} criteria passed");
    if passed == total {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
