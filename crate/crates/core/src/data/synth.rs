//! Seeded synthetic multi-label datasets for desk-scale experiments.
//!
//! Generator version 1: `ChaCha8Rng::seed_from_u64(seed)` drives, in order,
//! the tag prototypes (standard normal, tag-major), then per attempt the
//! per-clip tag draws (count uniform in 1..=3, tags by `index::sample`) and a
//! Fisher-Yates shuffle of clip indices for the 70/10/20 split, then the frame
//! noise (standard normal, clip-major, frame-major).

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::frames::FrameStore;
use super::manifest::Manifest;
use super::source::SourceId;
use super::tags::{SplitAssignment, TagMatrix};
use crate::error::{Error, Result};

pub const GENERATOR_VERSION: u32 = 1;
const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_clips: usize,
    pub num_tags: usize,
    pub frame_dim: usize,
    pub frames_per_clip: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub frames: FrameStore,
    pub tags: TagMatrix,
    pub split: SplitAssignment,
    /// One row per tag; a clip's clean embedding is the sum of its active rows.
    pub prototypes: Array2<f64>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    let SyntheticSpec {
        num_clips,
        num_tags,
        frame_dim,
        frames_per_clip,
        noise_scale,
        seed,
    } = *spec;
    if num_tags == 0 || frame_dim == 0 || frames_per_clip == 0 {
        return Err(Error::Argument("synthetic sizes must be positive".into()));
    }
    if num_clips < 10 {
        return Err(Error::Argument("need at least 10 clips to fill a 70/10/20 split".into()));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::Argument(format!("noise scale {noise_scale} must be finite and >= 0")));
    }
    if num_clips < 10 * num_tags {
        warn!("{num_clips} clips for {num_tags} tags; every split may not cover every tag");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes = Array2::from_shape_simple_fn((num_tags, frame_dim), || {
        rng.sample::<f64, _>(StandardNormal)
    });

    let n_train = num_clips * 7 / 10;
    let n_valid = num_clips / 10;
    let max_active = num_tags.min(3);
    let mut accepted = None;
    for _ in 0..MAX_ATTEMPTS {
        let mut labels = Array2::<u8>::zeros((num_clips, num_tags));
        for mut row in labels.axis_iter_mut(Axis(0)) {
            let count = rng.random_range(1..=max_active);
            for t in index::sample(&mut rng, num_tags, count) {
                row[t] = 1;
            }
        }
        let mut order: Vec<usize> = (0..num_clips).collect();
        order.shuffle(&mut rng);
        let split = SplitAssignment::new(
            order[..n_train].to_vec(),
            order[n_train..n_train + n_valid].to_vec(),
            order[n_train + n_valid..].to_vec(),
        );
        let covered = [&split.train, &split.valid, &split.test].iter().all(|rows| {
            (0..num_tags).all(|t| rows.iter().any(|&r| labels[[r, t]] == 1))
        });
        if covered {
            accepted = Some((labels, split));
            break;
        }
    }
    let (labels, split) = accepted.ok_or_else(|| {
        Error::Generation(format!(
            "no draw in {MAX_ATTEMPTS} attempts gave every one of {num_tags} tags a positive in \
             every split; increase num_clips (currently {num_clips})"
        ))
    })?;

    let clip_ids: Vec<String> = (0..num_clips).map(|i| format!("clip{i:06}")).collect();
    let mut frames = Vec::with_capacity(num_clips);
    for row in labels.axis_iter(Axis(0)) {
        let mut clean = vec![0.0f64; frame_dim];
        for (t, _) in row.iter().enumerate().filter(|(_, &v)| v == 1) {
            for (c, p) in clean.iter_mut().zip(prototypes.row(t)) {
                *c += p;
            }
        }
        let f = Array2::from_shape_fn((frames_per_clip, frame_dim), |(_, j)| {
            let noise: f64 = rng.sample(StandardNormal);
            (clean[j] + noise_scale * noise) as f32
        });
        frames.push(f);
    }
    let tag_names = (0..num_tags).map(|t| format!("tag{t:02}")).collect();
    Ok(SyntheticDataset {
        frames: FrameStore::new(clip_ids.clone(), frame_dim, frames, SourceId::Synthetic)?,
        tags: TagMatrix::new(clip_ids, tag_names, labels)?,
        split,
        prototypes,
    })
}

impl SyntheticDataset {
    /// Writes `frames.fse`, `tags.fsl` and `manifest.json` into `dir`.
    pub fn write_to(&self, dir: &Path, name: &str) -> Result<Manifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.frames.write(&dir.join("frames.fse"))?;
        self.tags.write(&dir.join("tags.fsl"))?;
        let mut sources = BTreeMap::new();
        sources.insert(SourceId::Synthetic, "frames.fse".to_string());
        let manifest = Manifest::new(name, sources, "tags.fsl", self.split.clone());
        manifest.write(&dir.join("manifest.json"))?;
        Manifest::load(&dir.join("manifest.json"))
    }
}
