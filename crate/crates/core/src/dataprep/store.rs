//! Binary processed-dataset file.
//!
//! ```text
//! magic      b"LBDS"
//! version    u8
//! d, n       u64, u64
//! r, k       u64, u64            image layout (0, 0 when absent)
//! pr, pc     u64, u64            patch dims   (0, 0 when absent)
//! classes    u64, then per class u32 length + UTF-8 name, in id order
//! features   d × (u32 length + UTF-8 name)
//! scaler     u8 flag; when 1, d f64 means then d f64 stds
//! values     n × d f64, row-major
//! labels     n × u32
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::{Dataset, ImageLayout, LabelMap, Scaler};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LBDS";
pub const DATASET_FORMAT_VERSION: u8 = 1;

/// A dataset plus the preprocessing that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedDataset {
    pub dataset: Dataset,
    pub layout: Option<ImageLayout>,
    pub scaler: Option<Scaler>,
}

impl ProcessedDataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let ds = &self.dataset;
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u8(DATASET_FORMAT_VERSION);
        w.u64(ds.d() as u64);
        w.u64(ds.n() as u64);
        let (r, k, pr, pc) = self
            .layout
            .map(|l| (l.rows, l.cols, l.patch_rows, l.patch_cols))
            .unwrap_or_default();
        for v in [r, k, pr, pc] {
            w.u64(v as u64);
        }
        w.u64(ds.num_classes() as u64);
        for name in ds.label_map().names() {
            w.str(name);
        }
        for name in ds.feature_names() {
            w.str(name);
        }
        match &self.scaler {
            Some(s) => {
                w.u8(1);
                w.f64s(&s.mean);
                w.f64s(&s.std);
            }
            None => w.u8(0),
        }
        w.f64s(ds.features());
        for &l in ds.labels() {
            w.u32(l as u32);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset file");
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt("not a processed dataset file".into()));
        }
        let version = r.u8()?;
        if version != DATASET_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        let d = r.len(8)?;
        let n = r.len(8)?;
        let dims: Vec<usize> = (0..4).map(|_| r.u64().map(|v| v as usize)).collect::<Result<_>>()?;
        let classes = r.len(4)?;
        let label_map = LabelMap::new((0..classes).map(|_| r.str()).collect::<Result<_>>()?);
        let feature_names: Vec<String> = (0..d).map(|_| r.str()).collect::<Result<_>>()?;
        let scaler = match r.u8()? {
            0 => None,
            1 => Some(Scaler {
                mean: r.f64s(d)?,
                std: r.f64s(d)?,
            }),
            other => return Err(Error::Corrupt(format!("bad scaler flag {other}"))),
        };
        let features = r.f64s(n * d)?;
        let labels: Vec<usize> = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        r.expect_end()?;

        let layout = if dims[0] == 0 {
            None
        } else {
            Some(ImageLayout::new(d, dims[0], dims[1], dims[2], dims[3]).map_err(|e| Error::Corrupt(e.to_string()))?)
        };
        let dataset = Dataset::new(features, feature_names, labels, label_map)
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok(ProcessedDataset {
            dataset,
            layout,
            scaler,
        })
    }
}

pub fn save_processed(data: &ProcessedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, data.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_processed(path: impl AsRef<Path>) -> Result<ProcessedDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ProcessedDataset::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::{gen_synthetic, SynthSpec};

    fn sample() -> ProcessedDataset {
        let dataset = gen_synthetic(&SynthSpec::new(3, 7, 4, 2.0, 3)).unwrap();
        ProcessedDataset {
            scaler: Some(Scaler::fit(&dataset)),
            layout: Some(ImageLayout::for_dim(7).unwrap()),
            dataset,
        }
    }

    #[test]
    fn round_trip() {
        let p = sample();
        assert_eq!(ProcessedDataset::from_bytes(&p.to_bytes()).unwrap(), p);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"LBDS");
        assert_eq!(bytes[4], DATASET_FORMAT_VERSION);
        assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), 7);
        assert_eq!(u64::from_le_bytes(bytes[13..21].try_into().unwrap()), 12);
    }

    #[test]
    fn truncation_and_version() {
        let mut bytes = sample().to_bytes();
        assert!(matches!(
            ProcessedDataset::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Corrupt(_))
        ));
        bytes[4] = 9;
        assert!(matches!(ProcessedDataset::from_bytes(&bytes), Err(Error::Version { found: 9, .. })));
    }
}
