use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Which pretrained extractor produced an embedding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceId {
    Vggish,
    Openl3,
    Passt,
    Synthetic,
    Other(String),
}

impl SourceId {
    /// Frame dimension the named extractors are known to produce.
    pub fn frame_dim(&self) -> Option<usize> {
        match self {
            SourceId::Vggish => Some(128),
            SourceId::Openl3 => Some(512),
            SourceId::Passt => Some(768),
            SourceId::Synthetic | SourceId::Other(_) => None,
        }
    }

    pub(crate) fn code(&self) -> u8 {
        match self {
            SourceId::Vggish => 0,
            SourceId::Openl3 => 1,
            SourceId::Passt => 2,
            SourceId::Synthetic => 3,
            SourceId::Other(_) => 4,
        }
    }

    /// Checks a frame dimension against the extractor's known output size.
    pub fn check_frame_dim(&self, dims: usize) -> Result<()> {
        match self.frame_dim() {
            Some(expected) if expected != dims => Err(Error::Validation(format!(
                "source {self} produces {expected}-dimensional frames, got {dims}"
            ))),
            _ => Ok(()),
        }
    }

    pub(crate) fn encode(&self, w: &mut super::codec::Writer) -> Result<()> {
        w.u8(self.code());
        if let SourceId::Other(name) = self {
            w.string(name)?;
        }
        Ok(())
    }

    pub(crate) fn decode(r: &mut super::codec::Reader<'_>) -> Result<SourceId> {
        let at = r.offset();
        Ok(match r.u8("source id")? {
            0 => SourceId::Vggish,
            1 => SourceId::Openl3,
            2 => SourceId::Passt,
            3 => SourceId::Synthetic,
            4 => SourceId::Other(r.string("source name")?),
            c => return Err(Error::format(at, format!("unknown source id {c}"))),
        })
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceId::Vggish => f.write_str("vggish"),
            SourceId::Openl3 => f.write_str("openl3"),
            SourceId::Passt => f.write_str("passt"),
            SourceId::Synthetic => f.write_str("synthetic"),
            SourceId::Other(name) => write!(f, "other:{name}"),
        }
    }
}

impl FromStr for SourceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "vggish" => SourceId::Vggish,
            "openl3" => SourceId::Openl3,
            "passt" => SourceId::Passt,
            "synthetic" => SourceId::Synthetic,
            _ => match s.strip_prefix("other:") {
                Some(name) if !name.is_empty() => SourceId::Other(name.to_string()),
                _ => return Err(Error::Argument(format!("unknown embedding source {s:?}"))),
            },
        })
    }
}

impl Serialize for SourceId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SourceId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for s in [
            SourceId::Vggish,
            SourceId::Openl3,
            SourceId::Passt,
            SourceId::Synthetic,
            SourceId::Other("clap".into()),
        ] {
            assert_eq!(s.to_string().parse::<SourceId>().unwrap(), s);
        }
        assert!("other:".parse::<SourceId>().is_err());
        assert!("mfcc".parse::<SourceId>().is_err());
    }

    #[test]
    fn known_dims() {
        assert_eq!(SourceId::Vggish.frame_dim(), Some(128));
        assert_eq!(SourceId::Openl3.frame_dim(), Some(512));
        assert_eq!(SourceId::Passt.frame_dim(), Some(768));
        assert!(SourceId::Passt.check_frame_dim(512).is_err());
        assert!(SourceId::Synthetic.check_frame_dim(7).is_ok());
    }
}
