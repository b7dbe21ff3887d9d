use std::path::Path;

use log::info;

use super::config::{Embedding, Normalization};
use crate::data::{
    aggregate_frames, check_aligned, compute_norm_stats, concat_tables, standardize_frames,
    unit_l2_frames, AggregatedTable, FrameStore, Manifest, SourceId, SplitAssignment, TagMatrix,
};
use crate::error::{Error, Result};

/// Aggregated features, labels and split for one embedding selection.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub embedding: Embedding,
    pub table: AggregatedTable,
    pub tags: TagMatrix,
    pub split: SplitAssignment,
}

fn sources_for(manifest: &Manifest, embedding: &Embedding) -> Result<Vec<SourceId>> {
    match embedding {
        Embedding::Source(s) => Ok(vec![s.clone()]),
        Embedding::Combined => {
            if manifest.sources.is_empty() {
                return Err(Error::Config("manifest lists no embedding files".into()));
            }
            Ok(manifest.sources.keys().cloned().collect())
        }
    }
}

/// Normalizes one source's frames and aggregates them.
pub fn aggregate_source(
    frames: &FrameStore,
    split: &SplitAssignment,
    normalization: Normalization,
) -> Result<AggregatedTable> {
    let normalized = match normalization {
        Normalization::Zscore => {
            let stats = compute_norm_stats(frames, &split.train, "train")?;
            standardize_frames(frames, &stats)?
        }
        Normalization::UnitL2 => unit_l2_frames(frames),
        Normalization::None => frames.clone(),
    };
    Ok(aggregate_frames(&normalized))
}

/// Loads the manifest's tags and the selected frame files, then normalizes,
/// aggregates and concatenates them in manifest source order.
pub fn prepare(
    manifest_path: &Path,
    embedding: &Embedding,
    normalization: Normalization,
) -> Result<PreparedData> {
    let manifest = Manifest::load(manifest_path)?;
    let tags = TagMatrix::load(&manifest.tags_path())?;
    manifest.splits.validate(tags.num_clips())?;

    let mut tables = Vec::new();
    for source in sources_for(&manifest, embedding)? {
        let path = manifest.source_path(&source)?;
        if !path.exists() {
            return Err(Error::Config(format!(
                "{source} embedding file {} does not exist",
                path.display()
            )));
        }
        let frames = FrameStore::load(&path)?;
        if frames.source() != &source {
            return Err(Error::Validation(format!(
                "{} holds {} frames, manifest lists it as {source}",
                path.display(),
                frames.source()
            )));
        }
        check_aligned(tags.clip_ids(), frames.clip_ids())?;
        info!("aggregating {source}: {} clips × {} dims", frames.num_clips(), frames.dims());
        tables.push(aggregate_source(&frames, &manifest.splits, normalization)?);
    }
    Ok(PreparedData {
        embedding: embedding.clone(),
        table: concat_tables(&tables)?,
        tags,
        split: manifest.splits.clone(),
    })
}
