//! Binary model checkpoints.
//!
//! ```text
//! magic     b"LBCK"
//! version   u8
//! tag       u8                  1 = vae, 2 = vit, 3 = classifier
//! seed      u64                 seed the model was initialized and trained from
//! config    u64 count, then per entry: key, value (u32 length + UTF-8 each)
//! params    u64 count, then per tensor:
//!             name   u32 length + UTF-8
//!             rank   u64
//!             dims   rank × u64
//!             values product(dims) × f64
//! ```
//!
//! Little-endian throughout. Values are stored as raw IEEE-754 bits, so a
//! loaded model reproduces every output of the saved one exactly.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::classifiers::{ClassifierConfig, ClassifierModel};
use crate::codec::{Reader, Writer};
use crate::dataprep::ImageLayout;
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};
use crate::vae::{VaeConfig, VaeModel};
use crate::vit::{VitConfig, VitModel};

const MAGIC: &[u8; 4] = b"LBCK";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Vae(VaeModel),
    Vit(VitModel),
    Classifier(ClassifierModel),
}

impl AnyModel {
    pub fn tag_name(&self) -> &'static str {
        tag_name(self.tag())
    }

    fn tag(&self) -> u8 {
        match self {
            AnyModel::Vae(_) => 1,
            AnyModel::Vit(_) => 2,
            AnyModel::Classifier(_) => 3,
        }
    }

    fn params(&self) -> &ParamStore {
        match self {
            AnyModel::Vae(m) => m.params(),
            AnyModel::Vit(m) => m.params(),
            AnyModel::Classifier(m) => m.params(),
        }
    }

    fn config_echo(&self) -> Vec<(&'static str, String)> {
        match self {
            AnyModel::Vae(m) => {
                let c = m.config();
                vec![
                    ("input_dim", c.input_dim.to_string()),
                    ("latent_dim", c.latent_dim.to_string()),
                    ("hidden", join(&c.hidden)),
                ]
            }
            AnyModel::Vit(m) => {
                let c = m.config();
                let l = c.layout;
                vec![
                    ("input_dim", l.input_dim.to_string()),
                    ("image", format!("{}x{}", l.rows, l.cols)),
                    ("patch", format!("{}x{}", l.patch_rows, l.patch_cols)),
                    ("embed_dim", c.embed_dim.to_string()),
                    ("heads", c.num_heads.to_string()),
                    ("depth", c.depth.to_string()),
                    ("mlp_hidden", c.mlp_hidden.to_string()),
                    ("latent_dim", c.latent_dim.to_string()),
                    ("num_classes", c.num_classes.to_string()),
                    ("dropout", c.dropout.to_string()),
                ]
            }
            AnyModel::Classifier(m) => {
                let c = m.config();
                vec![
                    ("kind", c.kind.to_string()),
                    ("input_dim", c.input_dim.to_string()),
                    ("num_classes", c.num_classes.to_string()),
                    ("widths", join(&c.widths)),
                    ("dropout", join(&c.dropout)),
                ]
            }
        }
    }
}

impl From<VaeModel> for AnyModel {
    fn from(m: VaeModel) -> Self {
        AnyModel::Vae(m)
    }
}

impl From<VitModel> for AnyModel {
    fn from(m: VitModel) -> Self {
        AnyModel::Vit(m)
    }
}

impl From<ClassifierModel> for AnyModel {
    fn from(m: ClassifierModel) -> Self {
        AnyModel::Classifier(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub seed: u64,
}

fn tag_name(tag: u8) -> &'static str {
    match tag {
        1 => "vae",
        2 => "vit",
        3 => "classifier",
        _ => "unknown",
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

struct Echo(BTreeMap<String, String>);

impl Echo {
    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        self.0
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Corrupt(format!("checkpoint config lacks a valid '{key}'")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw: String = self.get(key)?;
        raw.split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Corrupt(format!("bad '{key}' entry '{s}'"))))
            .collect()
    }

    fn pair(&self, key: &str) -> Result<(usize, usize)> {
        let raw: String = self.get(key)?;
        let (a, b) = raw
            .split_once('x')
            .ok_or_else(|| Error::Corrupt(format!("bad '{key}' value '{raw}'")))?;
        let p = |s: &str| s.parse().map_err(|_| Error::Corrupt(format!("bad '{key}' value '{raw}'")));
        Ok((p(a)?, p(b)?))
    }
}

pub fn checkpoint_bytes(model: &AnyModel, seed: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u8(CHECKPOINT_VERSION);
    w.u8(model.tag());
    w.u64(seed);
    let echo = model.config_echo();
    w.u64(echo.len() as u64);
    for (k, v) in &echo {
        w.str(k);
        w.str(v);
    }
    let params = model.params();
    w.u64(params.len() as u64);
    for (name, t) in params.iter() {
        w.str(name);
        w.u64(t.ndim() as u64);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        w.f64s(t.data());
    }
    w.finish()
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.take(4)? != MAGIC {
        return Err(Error::Corrupt("not a checkpoint file".into()));
    }
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let tag = r.u8()?;
    let seed = r.u64()?;
    let n_echo = r.len(8)?;
    let mut echo = BTreeMap::new();
    for _ in 0..n_echo {
        let k = r.str()?;
        echo.insert(k, r.str()?);
    }
    let echo = Echo(echo);
    let n_params = r.len(12)?;
    let mut params = ParamStore::new();
    for _ in 0..n_params {
        let name = r.str()?;
        let rank = r.len(8)?;
        let shape: Vec<usize> = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<_>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Corrupt(format!("tensor {name} is impossibly large")))?;
        let data = r.f64s(numel)?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("tensor {name}: {e}")))?;
        params.push(name, t);
    }
    r.expect_end()?;

    let model = match tag {
        1 => AnyModel::Vae(VaeModel::from_params(
            VaeConfig {
                input_dim: echo.get("input_dim")?,
                latent_dim: echo.get("latent_dim")?,
                hidden: echo.list("hidden")?,
            },
            params,
        )?),
        2 => {
            let (rows, cols) = echo.pair("image")?;
            let (pr, pc) = echo.pair("patch")?;
            let layout = ImageLayout::new(echo.get("input_dim")?, rows, cols, pr, pc)
                .map_err(|e| Error::Corrupt(e.to_string()))?;
            AnyModel::Vit(VitModel::from_params(
                VitConfig {
                    layout,
                    embed_dim: echo.get("embed_dim")?,
                    num_heads: echo.get("heads")?,
                    depth: echo.get("depth")?,
                    mlp_hidden: echo.get("mlp_hidden")?,
                    latent_dim: echo.get("latent_dim")?,
                    num_classes: echo.get("num_classes")?,
                    dropout: echo.get("dropout")?,
                },
                params,
            )?)
        }
        3 => {
            let widths: Vec<usize> = echo.list("widths")?;
            let dropout: Vec<f64> = echo.list("dropout")?;
            AnyModel::Classifier(ClassifierModel::from_params(
                ClassifierConfig {
                    kind: echo.get("kind")?,
                    input_dim: echo.get("input_dim")?,
                    num_classes: echo.get("num_classes")?,
                    widths: widths
                        .try_into()
                        .map_err(|_| Error::Corrupt("classifier needs four widths".into()))?,
                    dropout: dropout
                        .try_into()
                        .map_err(|_| Error::Corrupt("classifier needs two dropout rates".into()))?,
                },
                params,
            )?)
        }
        other => {
            return Err(Error::Tag {
                expected: "vae, vit or classifier".into(),
                found: format!("unknown tag {other}"),
            })
        }
    };
    Ok(Checkpoint { model, seed })
}

pub fn save_checkpoint(model: &AnyModel, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(model, seed)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

fn mismatch(expected: &str, found: &AnyModel) -> Error {
    Error::Tag {
        expected: expected.into(),
        found: found.tag_name().into(),
    }
}

pub fn load_vae(path: impl AsRef<Path>) -> Result<VaeModel> {
    match load_checkpoint(path)?.model {
        AnyModel::Vae(m) => Ok(m),
        other => Err(mismatch("vae", &other)),
    }
}

pub fn load_vit(path: impl AsRef<Path>) -> Result<VitModel> {
    match load_checkpoint(path)?.model {
        AnyModel::Vit(m) => Ok(m),
        other => Err(mismatch("vit", &other)),
    }
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<ClassifierModel> {
    match load_checkpoint(path)?.model {
        AnyModel::Classifier(m) => Ok(m),
        other => Err(mismatch("classifier", &other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{build_classifier, ClassifierKind};
    use crate::vae::vae_init;
    use crate::vit::vit_init;

    fn models() -> Vec<AnyModel> {
        let layout = ImageLayout::for_dim(12).unwrap();
        vec![
            vae_init(12, 3, &[6, 4], 1).unwrap().into(),
            vit_init(
                VitConfig {
                    embed_dim: 8,
                    num_heads: 2,
                    ..VitConfig::new(layout, 2, 3)
                },
                2,
            )
            .unwrap()
            .into(),
            build_classifier(ClassifierConfig::new(ClassifierKind::Blstm, 4, 3), 3).unwrap().into(),
        ]
    }

    #[test]
    fn round_trip_every_family() {
        for m in models() {
            let back = checkpoint_from_bytes(&checkpoint_bytes(&m, 42)).unwrap();
            assert_eq!(back.seed, 42);
            assert_eq!(back.model, m);
        }
    }

    #[test]
    fn truncated_files_are_corrupt() {
        for m in models() {
            let bytes = checkpoint_bytes(&m, 0);
            for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
                assert!(matches!(checkpoint_from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
            }
        }
    }

    #[test]
    fn version_and_tag_errors() {
        let mut bytes = checkpoint_bytes(&models()[0], 0);
        bytes[4] = 2;
        assert!(matches!(checkpoint_from_bytes(&bytes), Err(Error::Version { found: 2, .. })));
        bytes[4] = CHECKPOINT_VERSION;
        bytes[5] = 9;
        assert!(matches!(checkpoint_from_bytes(&bytes), Err(Error::Tag { .. })));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vae.lbck");
        save_checkpoint(&models()[0], 0, &path).unwrap();
        assert!(load_vae(&path).is_ok());
        assert!(matches!(load_vit(&path), Err(Error::Tag { .. })));
        assert!(matches!(load_classifier(&path), Err(Error::Tag { .. })));
    }
}
