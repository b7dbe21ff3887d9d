use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::codec::{read_file, write_file_atomic, Reader, Writer};
use crate::error::{Error, Result};

pub const TAGS_MAGIC: &[u8; 4] = b"FSL1";
pub const TAGS_VERSION: u32 = 1;

/// Multi-hot ground truth, clips × tags.
#[derive(Debug, Clone, PartialEq)]
pub struct TagMatrix {
    clip_ids: Vec<String>,
    tag_names: Vec<String>,
    labels: Array2<u8>,
}

impl TagMatrix {
    /// Rejects non-binary entries and tags with no positives at all.
    pub fn new(clip_ids: Vec<String>, tag_names: Vec<String>, labels: Array2<u8>) -> Result<Self> {
        if labels.dim() != (clip_ids.len(), tag_names.len()) {
            return Err(Error::Validation(format!(
                "label matrix is {:?}, expected ({}, {})",
                labels.dim(),
                clip_ids.len(),
                tag_names.len()
            )));
        }
        if tag_names.is_empty() {
            return Err(Error::Validation("tag vocabulary is empty".into()));
        }
        if labels.iter().any(|&v| v > 1) {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        for (t, col) in labels.axis_iter(Axis(1)).enumerate() {
            if col.iter().all(|&v| v == 0) {
                return Err(Error::Validation(format!(
                    "tag {:?} has no positive clips",
                    tag_names[t]
                )));
            }
        }
        Ok(TagMatrix {
            clip_ids,
            tag_names,
            labels,
        })
    }

    pub fn clip_ids(&self) -> &[String] {
        &self.clip_ids
    }

    pub fn tag_names(&self) -> &[String] {
        &self.tag_names
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn num_clips(&self) -> usize {
        self.clip_ids.len()
    }

    pub fn num_tags(&self) -> usize {
        self.tag_names.len()
    }

    pub fn is_positive(&self, row: usize, tag: usize) -> bool {
        self.labels[[row, tag]] == 1
    }

    /// Positive count per tag over `rows`.
    pub fn positive_counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_tags()];
        for &r in rows {
            for (c, &v) in counts.iter_mut().zip(self.labels.row(r)) {
                *c += v as usize;
            }
        }
        counts
    }

    /// Label submatrix for `rows` × `tags` as f64.
    pub fn submatrix(&self, rows: &[usize], tags: &[usize]) -> Array2<f64> {
        self.labels
            .select(Axis(0), rows)
            .select(Axis(1), tags)
            .mapv(f64::from)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(TAGS_MAGIC);
        w.u32(TAGS_VERSION);
        w.len(self.num_clips())?;
        w.len(self.num_tags())?;
        for t in &self.tag_names {
            w.string(t)?;
        }
        for c in &self.clip_ids {
            w.string(c)?;
        }
        w.bytes(self.labels.as_standard_layout().as_slice().unwrap());
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(TAGS_MAGIC)?;
        r.version(TAGS_VERSION)?;
        let num_clips = r.len("num_clips")?;
        let tags_at = r.offset();
        let num_tags = r.len("num_tags")?;
        if num_tags == 0 {
            return Err(Error::format(tags_at, "num_tags must be positive"));
        }
        let mut tag_names = Vec::with_capacity(num_tags.min(1 << 16));
        for _ in 0..num_tags {
            tag_names.push(r.string("tag name")?);
        }
        let mut clip_ids = Vec::with_capacity(num_clips.min(1 << 20));
        for _ in 0..num_clips {
            clip_ids.push(r.string("clip id")?);
        }
        let count = num_clips
            .checked_mul(num_tags)
            .ok_or_else(|| Error::format(r.offset(), "label count overflow"))?;
        let at = r.offset();
        let raw = r.take(count, "labels")?;
        if let Some(i) = raw.iter().position(|&v| v > 1) {
            return Err(Error::format(at + i, format!("label byte {} is not 0/1", raw[i])));
        }
        r.finish()?;
        let labels = Array2::from_shape_vec((num_clips, num_tags), raw.to_vec()).unwrap();
        TagMatrix::new(clip_ids, tag_names, labels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file_atomic(path, &self.to_bytes()?)
    }
}

/// Disjoint train/valid/test row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    pub fn new(train: Vec<usize>, valid: Vec<usize>, test: Vec<usize>) -> Self {
        SplitAssignment { train, valid, test }
    }

    pub fn validate(&self, num_clips: usize) -> Result<()> {
        let mut seen = vec![false; num_clips];
        for (name, rows) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            if rows.is_empty() {
                return Err(Error::Validation(format!("{name} split is empty")));
            }
            for &r in rows {
                if r >= num_clips {
                    return Err(Error::Validation(format!(
                        "{name} row {r} out of range for {num_clips} clips"
                    )));
                }
                if std::mem::replace(&mut seen[r], true) {
                    return Err(Error::Validation(format!(
                        "row {r} appears twice across splits"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn zero_positive_tag_rejected() {
        let r = TagMatrix::new(ids(2), vec!["a".into(), "b".into()], array![[1, 0], [1, 0]]);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn file_round_trip() {
        let m = TagMatrix::new(ids(3), vec!["rock".into(), "piano".into()], array![[1, 0], [1, 1], [0, 1]])
            .unwrap();
        let bytes = m.to_bytes().unwrap();
        assert_eq!(TagMatrix::from_bytes(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 1] = 7;
        assert!(matches!(
            TagMatrix::from_bytes(&bad),
            Err(Error::Format { offset, .. }) if offset == n - 1
        ));
        assert!(matches!(
            TagMatrix::from_bytes(&bytes[..n - 2]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn counts_and_submatrix() {
        let m = TagMatrix::new(ids(3), vec!["a".into(), "b".into()], array![[1, 0], [1, 1], [0, 1]]).unwrap();
        assert_eq!(m.positive_counts(&[0, 1]), vec![2, 1]);
        assert_eq!(m.submatrix(&[1, 2], &[1]), array![[1.0], [1.0]]);
    }

    #[test]
    fn split_validation() {
        assert!(SplitAssignment::new(vec![0, 1], vec![2], vec![3]).validate(4).is_ok());
        assert!(SplitAssignment::new(vec![0, 1], vec![1], vec![3]).validate(4).is_err());
        assert!(SplitAssignment::new(vec![0], vec![], vec![3]).validate(4).is_err());
        assert!(SplitAssignment::new(vec![0], vec![2], vec![9]).validate(4).is_err());
    }
}
