//! Weight-space diagnostics: per-position L1 profiles, their Pearson
//! correlation between probes, and per-embedding magnitude shares.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{check_tiling, Block, SourceId};
use crate::error::{Error, Result};
use crate::probe::{ProbeModel, Shots};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    /// L1 norm over tags at each input position. Biases are not included.
    pub norms: Vec<f64>,
    pub n_way: usize,
    pub k_shot: Shots,
}

pub fn position_norms(model: &ProbeModel) -> WeightProfile {
    let norms = model
        .weights
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|w| w.abs()).sum())
        .collect();
    WeightProfile {
        norms,
        n_way: model.provenance.n_way,
        k_shot: model.provenance.k_shot,
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Argument(format!(
            "pearson needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("correlation of a constant vector".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of the two probes' position-norm profiles.
pub fn weight_correlation(few: &ProbeModel, full: &ProbeModel) -> Result<f64> {
    if few.dims() != full.dims() {
        return Err(Error::Argument(format!(
            "probe dims differ: {} vs {}",
            few.dims(),
            full.dims()
        )));
    }
    let a: BTreeSet<_> = few.tag_indices.iter().collect();
    let b: BTreeSet<_> = full.tag_indices.iter().collect();
    if a != b {
        return Err(Error::Argument(
            "probes score different tag sets; restrict the reference first".into(),
        ));
    }
    pearson(&position_norms(few).norms, &position_norms(full).norms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockShare {
    pub source: SourceId,
    pub start: usize,
    pub len: usize,
    pub share: f64,
}

/// Fraction of the total profile mass falling in each block.
pub fn block_shares(profile: &WeightProfile, blocks: &[Block]) -> Result<Vec<BlockShare>> {
    check_tiling(blocks, profile.norms.len())?;
    let total: f64 = profile.norms.iter().sum();
    if total <= 0.0 {
        return Err(Error::Undefined("weight profile has zero total mass".into()));
    }
    Ok(blocks
        .iter()
        .map(|b| BlockShare {
            source: b.source.clone(),
            start: b.start,
            len: b.len,
            share: profile.norms[b.start..b.start + b.len].iter().sum::<f64>() / total,
        })
        .collect())
}
