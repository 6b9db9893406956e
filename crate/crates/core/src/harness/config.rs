//! Flat `section.key = value` experiment configuration.
//!
//! Lines are UTF-8; `#` starts a comment; blank lines are ignored. Lists are
//! comma separated. Any key can be overridden after loading with
//! [`ExperimentConfig::set`], which is what the CLI's `--set` flag does.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::classifiers::{ClassifierConfig, ClassifierKind};
use crate::dataprep::{SplitSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::numcore::train::TrainConfig;

use super::EncoderKind;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Budget {
    pub fn with_seed(self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            seed,
        }
    }
}

/// Per-kind replacements for the shared classifier budget.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BudgetOverride {
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// CSV or processed dataset; `None` means generate from `synth`.
    pub data_path: Option<PathBuf>,
    /// Display name in table captions.
    pub data_name: Option<String>,
    pub label_column: String,
    /// Columns removed after loading.
    pub drop: Vec<String>,
    /// CSV columns skipped while reading (e.g. textual addresses).
    pub ignore: Vec<String>,
    pub standardize: bool,

    pub synth: SynthSpec,

    pub image: Option<(usize, usize)>,
    pub patch: Option<(usize, usize)>,

    pub split: SplitSpec,

    pub latent_dims: Vec<usize>,
    pub encoders: Vec<EncoderKind>,
    pub classifiers: Vec<ClassifierKind>,
    pub repeats: usize,

    pub vae: Budget,
    pub vae_hidden: Vec<usize>,

    pub vit: Budget,
    pub vit_embed_dim: usize,
    pub vit_heads: usize,
    pub vit_depth: usize,
    pub vit_mlp_hidden: usize,
    pub vit_dropout: f64,

    pub classifier: Budget,
    pub classifier_widths: [usize; 4],
    pub classifier_dropout: [f64; 2],
    pub classifier_overrides: Vec<(ClassifierKind, BudgetOverride)>,

    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_path: None,
            data_name: None,
            label_column: "label".into(),
            drop: Vec::new(),
            ignore: Vec::new(),
            standardize: true,
            synth: SynthSpec::new(9, 115, 200, 10.0, 1),
            image: None,
            patch: None,
            split: SplitSpec::default(),
            latent_dims: vec![2, 6, 10, 14],
            encoders: vec![EncoderKind::Vae, EncoderKind::Vit],
            classifiers: ClassifierKind::ALL.to_vec(),
            repeats: 1,
            vae: Budget {
                epochs: 30,
                batch: 128,
                lr: 1e-3,
            },
            vae_hidden: vec![64, 32],
            vit: Budget {
                epochs: 5,
                batch: 128,
                lr: 1e-3,
            },
            vit_embed_dim: 32,
            vit_heads: 4,
            vit_depth: 2,
            vit_mlp_hidden: 64,
            vit_dropout: 0.1,
            classifier: Budget {
                epochs: 20,
                batch: 128,
                lr: 1e-3,
            },
            classifier_widths: ClassifierConfig::DEFAULT_WIDTHS,
            classifier_dropout: [0.3, 0.2],
            classifier_overrides: Vec::new(),
            seed: 0,
            out: PathBuf::from("out"),
            workers: 1,
            save_checkpoints: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn parse_pair(key: &str, value: &str) -> Result<(usize, usize)> {
    let v: Vec<usize> = value
        .split(['x', 'X', ','])
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    match v[..] {
        [a, b] => Ok((a, b)),
        _ => Err(Error::Config(format!("{key}: expected AxB, got '{value}'"))),
    }
}

fn fixed<const N: usize, T: FromStr + Copy>(key: &str, value: &str) -> Result<[T; N]> {
    let v: Vec<T> = parse_list(key, value)?;
    v.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected {N} comma-separated values, got '{value}'")))
}

fn list_text<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies every assignment in `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Parses `key=value` and applies it.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{assignment}'")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.path" => self.data_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "data.name" => self.data_name = (!value.is_empty()).then(|| value.to_string()),
            "data.label_column" => self.label_column = value.to_string(),
            "data.drop" => self.drop = parse_list(key, value)?,
            "data.ignore" => self.ignore = parse_list(key, value)?,
            "data.standardize" => self.standardize = parse_bool(key, value)?,

            "synth.classes" => self.synth.num_classes = parse(key, value)?,
            "synth.dim" => {
                self.synth.dim = parse(key, value)?;
                self.synth.informative_rank = self.synth.informative_rank.min(self.synth.dim);
            }
            "synth.per_class" => self.synth.per_class = parse(key, value)?,
            "synth.separation" => self.synth.separation = parse(key, value)?,
            "synth.rank" => self.synth.informative_rank = parse(key, value)?,
            "synth.seed" => self.synth.seed = parse(key, value)?,

            "image.shape" => self.image = Some(parse_pair(key, value)?),
            "patch.shape" => self.patch = Some(parse_pair(key, value)?),

            "split.test_fraction" => self.split.test_fraction = parse(key, value)?,
            "split.seed" => self.split.seed = parse(key, value)?,
            "split.stratified" => self.split.stratified = parse_bool(key, value)?,

            "grid.latent_dims" => self.latent_dims = parse_list(key, value)?,
            "grid.encoders" => self.encoders = parse_list(key, value)?,
            "grid.classifiers" => self.classifiers = parse_list(key, value)?,
            "grid.repeats" => self.repeats = parse(key, value)?,

            "vae.epochs" => self.vae.epochs = parse(key, value)?,
            "vae.batch" => self.vae.batch = parse(key, value)?,
            "vae.lr" => self.vae.lr = parse(key, value)?,
            "vae.hidden" => self.vae_hidden = parse_list(key, value)?,

            "vit.epochs" => self.vit.epochs = parse(key, value)?,
            "vit.batch" => self.vit.batch = parse(key, value)?,
            "vit.lr" => self.vit.lr = parse(key, value)?,
            "vit.embed_dim" => self.vit_embed_dim = parse(key, value)?,
            "vit.heads" => self.vit_heads = parse(key, value)?,
            "vit.depth" => self.vit_depth = parse(key, value)?,
            "vit.mlp_hidden" => self.vit_mlp_hidden = parse(key, value)?,
            "vit.dropout" => self.vit_dropout = parse(key, value)?,

            "classifier.epochs" => self.classifier.epochs = parse(key, value)?,
            "classifier.batch" => self.classifier.batch = parse(key, value)?,
            "classifier.lr" => self.classifier.lr = parse(key, value)?,
            "classifier.widths" => self.classifier_widths = fixed(key, value)?,
            "classifier.dropout" => self.classifier_dropout = fixed(key, value)?,

            "run.seed" => self.seed = parse(key, value)?,
            "run.out" => self.out = PathBuf::from(value),
            "run.workers" => self.workers = parse(key, value)?,
            "run.save_checkpoints" => self.save_checkpoints = parse_bool(key, value)?,

            _ => return self.set_override(key, value),
        }
        Ok(())
    }

    fn set_override(&mut self, key: &str, value: &str) -> Result<()> {
        let unknown = || Error::Config(format!("unknown key '{key}'"));
        let rest = key.strip_prefix("classifier.").ok_or_else(unknown)?;
        let (kind, field) = rest.split_once('.').ok_or_else(unknown)?;
        let kind: ClassifierKind = kind.parse().map_err(|_| unknown())?;
        let slot = match self.classifier_overrides.iter().position(|(k, _)| *k == kind) {
            Some(i) => &mut self.classifier_overrides[i].1,
            None => {
                self.classifier_overrides.push((kind, BudgetOverride::default()));
                &mut self.classifier_overrides.last_mut().expect("just pushed").1
            }
        };
        match field {
            "epochs" => slot.epochs = Some(parse(key, value)?),
            "batch" => slot.batch = Some(parse(key, value)?),
            "lr" => slot.lr = Some(parse(key, value)?),
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// Budget of one classifier kind after per-kind overrides.
    pub fn classifier_budget(&self, kind: ClassifierKind) -> Budget {
        let mut b = self.classifier;
        if let Some((_, o)) = self.classifier_overrides.iter().find(|(k, _)| *k == kind) {
            b.epochs = o.epochs.unwrap_or(b.epochs);
            b.batch = o.batch.unwrap_or(b.batch);
            b.lr = o.lr.unwrap_or(b.lr);
        }
        b
    }

    /// Name used in table captions.
    pub fn dataset_name(&self) -> String {
        if let Some(n) = &self.data_name {
            return n.clone();
        }
        match &self.data_path {
            Some(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().to_uppercase())
                .unwrap_or_else(|| "DATA".into()),
            None => "SYNTHETIC".into(),
        }
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_dims.is_empty() || self.latent_dims.contains(&0) {
            return bad(format!("latent dims must be positive and nonempty: {:?}", self.latent_dims));
        }
        if self.encoders.is_empty() {
            return bad("no encoders configured".into());
        }
        if self.classifiers.is_empty() {
            return bad("no classifiers configured".into());
        }
        if self.repeats == 0 || self.workers == 0 {
            return bad("repeats and workers must be at least 1".into());
        }
        for (name, b) in [("vae", self.vae), ("vit", self.vit), ("classifier", self.classifier)] {
            b.with_seed(0)
                .validate()
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// Checks against the loaded data's width.
    pub fn validate_for_dim(&self, d: usize) -> Result<()> {
        if let Some(&k) = self.latent_dims.iter().find(|&&k| k >= d) {
            return Err(Error::Config(format!("latent dim {k} must be below input width {d}")));
        }
        Ok(())
    }

    /// The configuration as loadable text, one key per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line(
            "data.path",
            self.data_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        line("data.name", self.data_name.clone().unwrap_or_default());
        line("data.label_column", self.label_column.clone());
        line("data.drop", self.drop.join(","));
        line("data.ignore", self.ignore.join(","));
        line("data.standardize", self.standardize.to_string());
        line("synth.classes", self.synth.num_classes.to_string());
        line("synth.dim", self.synth.dim.to_string());
        line("synth.per_class", self.synth.per_class.to_string());
        line("synth.separation", self.synth.separation.to_string());
        line("synth.rank", self.synth.informative_rank.to_string());
        line("synth.seed", self.synth.seed.to_string());
        if let Some((r, c)) = self.image {
            line("image.shape", format!("{r}x{c}"));
        }
        if let Some((r, c)) = self.patch {
            line("patch.shape", format!("{r}x{c}"));
        }
        line("split.test_fraction", self.split.test_fraction.to_string());
        line("split.seed", self.split.seed.to_string());
        line("split.stratified", self.split.stratified.to_string());
        line("grid.latent_dims", list_text(&self.latent_dims));
        line("grid.encoders", list_text(&self.encoders));
        line("grid.classifiers", list_text(&self.classifiers));
        line("grid.repeats", self.repeats.to_string());
        for (name, b) in [("vae", self.vae), ("vit", self.vit), ("classifier", self.classifier)] {
            line(&format!("{name}.epochs"), b.epochs.to_string());
            line(&format!("{name}.batch"), b.batch.to_string());
            line(&format!("{name}.lr"), b.lr.to_string());
        }
        line("vae.hidden", list_text(&self.vae_hidden));
        line("vit.embed_dim", self.vit_embed_dim.to_string());
        line("vit.heads", self.vit_heads.to_string());
        line("vit.depth", self.vit_depth.to_string());
        line("vit.mlp_hidden", self.vit_mlp_hidden.to_string());
        line("vit.dropout", self.vit_dropout.to_string());
        line("classifier.widths", list_text(&self.classifier_widths));
        line("classifier.dropout", list_text(&self.classifier_dropout));
        for (kind, o) in &self.classifier_overrides {
            let kind = kind.name().to_ascii_lowercase();
            if let Some(v) = o.epochs {
                line(&format!("classifier.{kind}.epochs"), v.to_string());
            }
            if let Some(v) = o.batch {
                line(&format!("classifier.{kind}.batch"), v.to_string());
            }
            if let Some(v) = o.lr {
                line(&format!("classifier.{kind}.lr"), v.to_string());
            }
        }
        line("run.seed", self.seed.to_string());
        line("run.out", self.out.display().to_string());
        line("run.workers", self.workers.to_string());
        line("run.save_checkpoints", self.save_checkpoints.to_string());
        s
    }
}
