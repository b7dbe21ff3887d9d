use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::codec::{read_file, write_file_atomic, Reader, Writer};
use super::source::SourceId;
use crate::error::{Error, Result};

pub const TABLE_MAGIC: &[u8; 4] = b"FSA1";
pub const TABLE_VERSION: u32 = 1;

/// Column range `[start, start + len)` contributed by one embedding source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub source: SourceId,
    pub start: usize,
    pub len: usize,
}

/// Checks that `blocks` tile `[0, dims)` in order without gaps or overlap.
pub fn check_tiling(blocks: &[Block], dims: usize) -> Result<()> {
    let mut next = 0;
    for b in blocks {
        if b.start != next || b.len == 0 {
            return Err(Error::Argument(format!(
                "block {} [{}, {}) does not continue tiling at column {next}",
                b.source,
                b.start,
                b.start + b.len
            )));
        }
        next += b.len;
    }
    if next != dims {
        return Err(Error::Argument(format!(
            "blocks cover {next} columns, table has {dims}"
        )));
    }
    Ok(())
}

/// One aggregated feature vector per clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedTable {
    clip_ids: Vec<String>,
    rows: Array2<f32>,
    blocks: Vec<Block>,
}

impl AggregatedTable {
    pub fn new(clip_ids: Vec<String>, rows: Array2<f32>, blocks: Vec<Block>) -> Result<Self> {
        if rows.nrows() != clip_ids.len() {
            return Err(Error::Validation(format!(
                "{} rows for {} clip ids",
                rows.nrows(),
                clip_ids.len()
            )));
        }
        if rows.ncols() == 0 {
            return Err(Error::Validation("table dims must be positive".into()));
        }
        check_tiling(&blocks, rows.ncols()).map_err(|e| Error::Validation(e.to_string()))?;
        for b in &blocks {
            if b.len % 2 != 0 {
                return Err(Error::Validation(format!(
                    "block {} has odd length {}",
                    b.source, b.len
                )));
            }
            if let Some(d) = b.source.frame_dim() {
                if b.len != 2 * d {
                    return Err(Error::Validation(format!(
                        "block {} has length {}, expected {}",
                        b.source,
                        b.len,
                        2 * d
                    )));
                }
            }
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("table has non-finite values".into()));
        }
        Ok(AggregatedTable {
            clip_ids,
            rows,
            blocks,
        })
    }

    pub fn clip_ids(&self) -> &[String] {
        &self.clip_ids
    }

    pub fn dims(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f32> {
        &self.rows
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_clips(&self) -> usize {
        self.clip_ids.len()
    }

    /// Selected rows widened to f64 for training and scoring.
    pub fn features(&self, rows: &[usize]) -> Array2<f64> {
        self.rows.select(Axis(0), rows).mapv(f64::from)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(TABLE_MAGIC);
        w.u32(TABLE_VERSION);
        w.len(self.num_clips())?;
        w.len(self.dims())?;
        w.len(self.blocks.len())?;
        for b in &self.blocks {
            b.source.encode(&mut w)?;
            w.len(b.start)?;
            w.len(b.len)?;
        }
        for id in &self.clip_ids {
            w.string(id)?;
        }
        for v in self.rows.iter() {
            w.f32(*v);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(TABLE_MAGIC)?;
        r.version(TABLE_VERSION)?;
        let num_clips = r.len("num_clips")?;
        let dims_at = r.offset();
        let dims = r.len("dims")?;
        if dims == 0 {
            return Err(Error::format(dims_at, "dims must be positive"));
        }
        let num_blocks = r.len("num_blocks")?;
        let mut blocks = Vec::with_capacity(num_blocks.min(1024));
        for _ in 0..num_blocks {
            let source = SourceId::decode(&mut r)?;
            let start = r.len("block start")?;
            let len = r.len("block len")?;
            blocks.push(Block { source, start, len });
        }
        let mut clip_ids = Vec::with_capacity(num_clips.min(1 << 20));
        for _ in 0..num_clips {
            clip_ids.push(r.string("clip id")?);
        }
        let count = num_clips
            .checked_mul(dims)
            .filter(|&c| c <= (bytes.len() - r.offset()) / 4)
            .ok_or_else(|| Error::format(r.offset(), "truncated payload reading rows"))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(r.f32_finite("table value")?);
        }
        r.finish()?;
        let rows = Array2::from_shape_vec((num_clips, dims), data).unwrap();
        AggregatedTable::new(clip_ids, rows, blocks)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file_atomic(path, &self.to_bytes()?)
    }
}

/// Concatenates aligned tables column-wise, appending provenance blocks.
pub fn concat_tables(tables: &[AggregatedTable]) -> Result<AggregatedTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Argument("no tables to concatenate".into()))?;
    for t in &tables[1..] {
        check_aligned(first.clip_ids(), t.clip_ids())?;
    }
    let views: Vec<_> = tables.iter().map(|t| t.rows.view()).collect();
    let rows = concatenate(Axis(1), &views).expect("row counts checked by alignment");
    let mut blocks = Vec::new();
    let mut offset = 0;
    for t in tables {
        for b in &t.blocks {
            blocks.push(Block {
                source: b.source.clone(),
                start: offset + b.start,
                len: b.len,
            });
        }
        offset += t.dims();
    }
    AggregatedTable::new(first.clip_ids.clone(), rows, blocks)
}

/// Errors with the first position where two clip id lists disagree.
pub fn check_aligned(left: &[String], right: &[String]) -> Result<()> {
    let n = left.len().max(right.len());
    for i in 0..n {
        let (l, r) = (left.get(i), right.get(i));
        if l != r {
            return Err(Error::Alignment {
                position: i,
                left: l.cloned().unwrap_or_default(),
                right: r.cloned().unwrap_or_default(),
            });
        }
    }
    Ok(())
}
