//! Dataset utilities behind the `aggregate`, `synth` and `validate` commands.

use std::path::{Path, PathBuf};

use super::config::{Embedding, Normalization};
use super::experiments::write_outputs_log;
use super::pipeline::prepare;
use crate::data::{
    aggregate_frames, check_aligned, generate_synthetic, read_file, AggregatedTable, FrameStore,
    Manifest, SyntheticSpec, TagMatrix, FRAMES_MAGIC, TABLE_MAGIC, TAGS_MAGIC,
};
use crate::error::{Error, Result};
use crate::probe::{ProbeModel, PROBE_MAGIC};

/// Aggregates a single frames file without normalization.
pub fn aggregate_file(frames: &Path, out: &Path) -> Result<AggregatedTable> {
    let table = aggregate_frames(&FrameStore::load(frames)?);
    table.write(out)?;
    Ok(table)
}

/// Normalizes, aggregates and concatenates the manifest's selection.
pub fn aggregate_manifest(
    manifest: &Path,
    embedding: &Embedding,
    normalization: Normalization,
    out: &Path,
) -> Result<AggregatedTable> {
    let data = prepare(manifest, embedding, normalization)?;
    data.table.write(out)?;
    Ok(data.table)
}

/// Generates a synthetic dataset into `dir` and returns the files written.
pub fn synth(spec: &SyntheticSpec, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
    let data = generate_synthetic(spec)?;
    data.write_to(dir, name)?;
    let mut files: Vec<PathBuf> = ["frames.fse", "tags.fsl", "manifest.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    files.push(write_outputs_log(dir, "synth", &files)?);
    Ok(files)
}

/// Checks one file by its magic (or as a manifest) and returns a one-line summary.
pub fn validate_path(path: &Path) -> Result<String> {
    let bytes = read_file(path)?;
    let magic: Option<&[u8; 4]> = bytes.get(..4).and_then(|m| m.try_into().ok());
    match magic {
        Some(m) if m == FRAMES_MAGIC => {
            let s = FrameStore::from_bytes(&bytes)?;
            Ok(format!(
                "frames: {} clips, {} dims, source {}",
                s.num_clips(),
                s.dims(),
                s.source()
            ))
        }
        Some(m) if m == TABLE_MAGIC => {
            let t = AggregatedTable::from_bytes(&bytes)?;
            Ok(format!("table: {} clips, {} dims, {} blocks", t.num_clips(), t.dims(), t.blocks().len()))
        }
        Some(m) if m == TAGS_MAGIC => {
            let t = TagMatrix::from_bytes(&bytes)?;
            Ok(format!("tags: {} clips, {} tags", t.num_clips(), t.num_tags()))
        }
        Some(m) if m == PROBE_MAGIC => {
            let p = ProbeModel::from_bytes(&bytes)?;
            Ok(format!(
                "probe: {} tags, {} dims, k_shot {}",
                p.num_tags(),
                p.dims(),
                p.provenance.k_shot
            ))
        }
        _ if bytes.first() == Some(&b'{') => validate_manifest(path),
        _ => Err(Error::format(0, "unrecognized file type")),
    }
}

fn validate_manifest(path: &Path) -> Result<String> {
    let m = Manifest::load(path)?;
    let tags = TagMatrix::load(&m.tags_path())?;
    m.splits.validate(tags.num_clips())?;
    for source in m.sources.keys() {
        let frames = FrameStore::load(&m.source_path(source)?)?;
        check_aligned(tags.clip_ids(), frames.clip_ids())?;
    }
    Ok(format!(
        "manifest {:?}: {} sources, {} clips, {} tags, split {}/{}/{}",
        m.dataset,
        m.sources.len(),
        tags.num_clips(),
        tags.num_tags(),
        m.splits.train.len(),
        m.splits.valid.len(),
        m.splits.test.len()
    ))
}
