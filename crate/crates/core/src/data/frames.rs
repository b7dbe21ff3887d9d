//! Frame-level embedding stores and the operations applied before aggregation.

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::codec::{read_file, write_file_atomic, Reader, Writer};
use super::source::SourceId;
use super::table::{AggregatedTable, Block};
use crate::error::{Error, Result};

pub const FRAMES_MAGIC: &[u8; 4] = b"FSE1";
pub const FRAMES_VERSION: u32 = 1;

/// Stddev floor applied when standardizing.
pub const STD_EPSILON: f64 = 1e-8;

/// Per-clip sequences of fixed-dimension embedding frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStore {
    clip_ids: Vec<String>,
    dims: usize,
    frames: Vec<Array2<f32>>,
    source: SourceId,
}

impl FrameStore {
    pub fn new(
        clip_ids: Vec<String>,
        dims: usize,
        frames: Vec<Array2<f32>>,
        source: SourceId,
    ) -> Result<Self> {
        if dims == 0 {
            return Err(Error::Validation("frame dims must be positive".into()));
        }
        if clip_ids.len() != frames.len() {
            return Err(Error::Validation(format!(
                "{} clip ids for {} frame matrices",
                clip_ids.len(),
                frames.len()
            )));
        }
        source.check_frame_dim(dims)?;
        for (id, f) in clip_ids.iter().zip(&frames) {
            if f.nrows() == 0 {
                return Err(Error::Validation(format!("clip {id} has no frames")));
            }
            if f.ncols() != dims {
                return Err(Error::Validation(format!(
                    "clip {id} has {}-dimensional frames, store dims is {dims}",
                    f.ncols()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("clip {id} has non-finite values")));
            }
        }
        Ok(FrameStore {
            clip_ids,
            dims,
            frames,
            source,
        })
    }

    pub fn clip_ids(&self) -> &[String] {
        &self.clip_ids
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn frames(&self) -> &[Array2<f32>] {
        &self.frames
    }

    pub fn source(&self) -> &SourceId {
        &self.source
    }

    pub fn num_clips(&self) -> usize {
        self.clip_ids.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(FRAMES_MAGIC);
        w.u32(FRAMES_VERSION);
        w.len(self.num_clips())?;
        w.len(self.dims)?;
        self.source.encode(&mut w)?;
        for (id, f) in self.clip_ids.iter().zip(&self.frames) {
            w.string(id)?;
            w.len(f.nrows())?;
            for v in f.iter() {
                w.f32(*v);
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(FRAMES_MAGIC)?;
        r.version(FRAMES_VERSION)?;
        let num_clips = r.len("num_clips")?;
        let dims_at = r.offset();
        let dims = r.len("dims")?;
        if dims == 0 {
            return Err(Error::format(dims_at, "dims must be positive"));
        }
        let source = SourceId::decode(&mut r)?;
        let mut clip_ids = Vec::with_capacity(num_clips.min(1 << 20));
        let mut frames = Vec::with_capacity(num_clips.min(1 << 20));
        for _ in 0..num_clips {
            clip_ids.push(r.string("clip id")?);
            let nf_at = r.offset();
            let num_frames = r.len("num_frames")?;
            if num_frames == 0 {
                return Err(Error::format(nf_at, "clip has zero frames"));
            }
            let count = num_frames
                .checked_mul(dims)
                .ok_or_else(|| Error::format(nf_at, "frame count overflow"))?;
            // bound the allocation by what the buffer can actually hold
            if count > (bytes.len() - r.offset()) / 4 {
                return Err(Error::format(r.offset(), "truncated payload reading frames"));
            }
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(r.f32_finite("frame value")?);
            }
            frames.push(Array2::from_shape_vec((num_frames, dims), data).unwrap());
        }
        r.finish()?;
        FrameStore::new(clip_ids, dims, frames, source)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file_atomic(path, &self.to_bytes()?)
    }

    fn map_frames(&self, f: impl Fn(&Array2<f32>) -> Array2<f32>) -> FrameStore {
        FrameStore {
            clip_ids: self.clip_ids.clone(),
            dims: self.dims,
            frames: self.frames.iter().map(f).collect(),
            source: self.source.clone(),
        }
    }
}

/// Collapses each clip to `[mean ⊕ population std]` over its frames.
pub fn aggregate_frames(store: &FrameStore) -> AggregatedTable {
    let d = store.dims;
    let mut rows = Array2::<f32>::zeros((store.num_clips(), 2 * d));
    for (mut out, f) in rows.outer_iter_mut().zip(&store.frames) {
        let n = f.nrows() as f64;
        for j in 0..d {
            let col = f.column(j);
            let mean = col.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = col
                .iter()
                .map(|&v| {
                    let c = v as f64 - mean;
                    c * c
                })
                .sum::<f64>()
                / n;
            out[j] = mean as f32;
            out[d + j] = var.sqrt() as f32;
        }
    }
    let blocks = vec![Block {
        source: store.source.clone(),
        start: 0,
        len: 2 * d,
    }];
    AggregatedTable::new(store.clip_ids.clone(), rows, blocks)
        .expect("aggregation of a valid store yields a valid table")
}

/// Per-dimension frame statistics over a subset of clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub computed_on: String,
}

impl NormStats {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }
}

/// Mean and population stddev over all frames of the clips at `rows`.
pub fn compute_norm_stats(store: &FrameStore, rows: &[usize], computed_on: &str) -> Result<NormStats> {
    if rows.is_empty() {
        return Err(Error::Argument("norm stats need at least one row".into()));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= store.num_clips()) {
        return Err(Error::Argument(format!(
            "row {bad} out of range for {} clips",
            store.num_clips()
        )));
    }
    let d = store.dims;
    let mut sum = vec![0.0f64; d];
    let mut count = 0usize;
    for &r in rows {
        let f = &store.frames[r];
        count += f.nrows();
        for frame in f.outer_iter() {
            for (s, &v) in sum.iter_mut().zip(frame.iter()) {
                *s += v as f64;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; d];
    for &r in rows {
        for frame in store.frames[r].outer_iter() {
            for ((s, &v), m) in sq.iter_mut().zip(frame.iter()).zip(&mean) {
                let c = v as f64 - m;
                *s += c * c;
            }
        }
    }
    let std = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
    Ok(NormStats {
        mean,
        std,
        computed_on: computed_on.to_string(),
    })
}

/// Z-scores every frame value with `stats`, flooring stddev at [`STD_EPSILON`].
pub fn standardize_frames(store: &FrameStore, stats: &NormStats) -> Result<FrameStore> {
    if stats.dims() != store.dims || stats.std.len() != store.dims {
        return Err(Error::Argument(format!(
            "norm stats have {} dims, store has {}",
            stats.dims(),
            store.dims
        )));
    }
    let scale: Vec<f64> = stats.std.iter().map(|s| s.max(STD_EPSILON)).collect();
    Ok(store.map_frames(|f| {
        let mut out = f.clone();
        for mut frame in out.outer_iter_mut() {
            for ((v, m), s) in frame.iter_mut().zip(&stats.mean).zip(&scale) {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        out
    }))
}

/// Scales every frame to unit L2 norm; all-zero frames stay zero.
pub fn unit_l2_frames(store: &FrameStore) -> FrameStore {
    store.map_frames(|f| {
        let mut out = f.clone();
        for mut frame in out.axis_iter_mut(Axis(0)) {
            let norm = frame.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm > STD_EPSILON {
                frame.mapv_inplace(|v| (v as f64 / norm) as f32);
            }
        }
        out
    })
}
