use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{save_checkpoint, AnyModel};
use super::table::{emit_table, CellResult, ResultTable, TableFormat};
use super::{EncoderKind, ExperimentConfig};
use crate::classifiers::{build_classifier, classifier_predict, classifier_train, ClassifierConfig, ClassifierKind, ClassifierModel};
use crate::dataprep::{
    drop_fields, gen_synthetic, load_csv_with, load_processed, split, standardize, CsvOptions, Dataset, ImageLayout,
    LatentDataset, Scaler,
};
use crate::error::{Error, Result};
use crate::evalkit::{confusion, metrics, MetricQuad};
use crate::vae::{vae_init, vae_project, vae_train, VaeModel};
use crate::vit::{vit_init, vit_project, vit_train, VitConfig, VitModel};

pub const CELL_FORMAT_VERSION: u32 = 1;

/// Train and test splits ready for encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
    pub layout: ImageLayout,
    /// Statistics fitted on the train split, when standardizing.
    pub scaler: Option<Scaler>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    Vae(VaeModel),
    Vit(VitModel),
}

impl Encoder {
    pub fn project(&self, dataset: &Dataset) -> Result<LatentDataset> {
        match self {
            Encoder::Vae(m) => vae_project(m, dataset),
            Encoder::Vit(m) => vit_project(m, dataset),
        }
    }

    pub fn into_any(self) -> AnyModel {
        match self {
            Encoder::Vae(m) => AnyModel::Vae(m),
            Encoder::Vit(m) => AnyModel::Vit(m),
        }
    }
}

/// Structured record of one grid cell, written as
/// `cell-<encoder>-<dim>-<model>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub format: String,
    pub version: u32,
    pub dataset: String,
    pub encoder: String,
    pub latent_dim: usize,
    pub model: String,
    pub encoder_seed: u64,
    pub classifier_seed: u64,
    pub repeats: usize,
    pub projection_sha256: String,
    pub status: String,
    pub acc: Option<f64>,
    pub prc: Option<f64>,
    pub rec: Option<f64>,
    pub f1: Option<f64>,
    pub error: Option<String>,
    pub encoder_loss: Vec<f64>,
    pub classifier_loss: Vec<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a grid coordinate, independent of every other coordinate and of
/// evaluation order.
pub fn cell_seed(master: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix64(master), |h, &c| splitmix64(h ^ splitmix64(c)))
}

fn encoder_code(kind: EncoderKind) -> u64 {
    match kind {
        EncoderKind::Vae => 1,
        EncoderKind::Vit => 2,
    }
}

fn classifier_code(kind: ClassifierKind) -> u64 {
    ClassifierKind::ALL.iter().position(|&k| k == kind).expect("listed") as u64 + 10
}

pub fn encoder_seed(master: u64, kind: EncoderKind, dim: usize, repeat: usize) -> u64 {
    cell_seed(master, &[encoder_code(kind), dim as u64, repeat as u64])
}

pub fn classifier_seed(master: u64, enc: EncoderKind, dim: usize, kind: ClassifierKind, repeat: usize) -> u64 {
    cell_seed(
        master,
        &[encoder_code(enc), dim as u64, classifier_code(kind), repeat as u64],
    )
}

/// SHA-256 over the raw bytes of a train and test projection.
pub fn projection_hash(train: &LatentDataset, test: &LatentDataset) -> String {
    let mut h = Sha256::new();
    for ds in [train, test] {
        h.update((ds.n() as u64).to_le_bytes());
        h.update((ds.d() as u64).to_le_bytes());
        for v in ds.features() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Configured image layout for width `d`, else a stored one, else the
/// default.
pub fn resolve_layout(cfg: &ExperimentConfig, d: usize, stored: Option<ImageLayout>) -> Result<ImageLayout> {
    match (cfg.image, cfg.patch) {
        (Some((r, c)), patch) => {
            let (pr, pc) = patch.unwrap_or((r, 1));
            ImageLayout::new(d, r, c, pr, pc)
        }
        (None, Some((pr, pc))) => {
            let base = stored.filter(|l| l.input_dim == d).map_or_else(|| ImageLayout::for_dim(d), Ok)?;
            ImageLayout::new(d, base.rows, base.cols, pr, pc)
        }
        (None, None) => stored
            .filter(|l| l.input_dim == d)
            .map_or_else(|| ImageLayout::for_dim(d), Ok),
    }
}

fn is_processed(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    Ok(f.read_exact(&mut magic).is_ok() && &magic == b"LBDS")
}

/// Loads (CSV or processed file) or generates the dataset, drops configured
/// fields, splits, and standardizes with statistics from the train split.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (dataset, stored) = match &cfg.data_path {
        Some(path) if is_processed(path)? => {
            let p = load_processed(path)?;
            (p.dataset, p.layout)
        }
        Some(path) => {
            let opts = CsvOptions {
                label_column: cfg.label_column.clone(),
                ignore: cfg.ignore.clone(),
            };
            (load_csv_with(path, &opts)?.dataset, None)
        }
        None => (gen_synthetic(&cfg.synth)?, None),
    };
    let dataset = drop_fields(&dataset, &cfg.drop)?;
    let layout = resolve_layout(cfg, dataset.d(), stored)?;
    let (train, test) = split(&dataset, &cfg.split)?;
    let (train, test, scaler) = if cfg.standardize {
        let (a, b, s) = standardize(&train, &test)?;
        (a, b, Some(s))
    } else {
        (train, test, None)
    };
    Ok(PreparedData {
        name: cfg.dataset_name(),
        train,
        test,
        layout,
        scaler,
    })
}

/// Trains one encoder on the train split. Returns the model and its loss
/// curve.
pub fn train_encoder(
    cfg: &ExperimentConfig,
    kind: EncoderKind,
    dim: usize,
    train: &Dataset,
    layout: ImageLayout,
    seed: u64,
) -> Result<(Encoder, Vec<f64>)> {
    match kind {
        EncoderKind::Vae => {
            let mut m = vae_init(train.d(), dim, &cfg.vae_hidden, seed)?;
            let curve = vae_train(&mut m, train, &cfg.vae.with_seed(seed))?;
            Ok((Encoder::Vae(m), curve))
        }
        EncoderKind::Vit => {
            let config = VitConfig {
                layout,
                embed_dim: cfg.vit_embed_dim,
                num_heads: cfg.vit_heads,
                depth: cfg.vit_depth,
                mlp_hidden: cfg.vit_mlp_hidden,
                latent_dim: dim,
                num_classes: train.num_classes(),
                dropout: cfg.vit_dropout,
            };
            let mut m = vit_init(config, seed)?;
            let curve = vit_train(&mut m, train, &cfg.vit.with_seed(seed))?;
            Ok((Encoder::Vit(m), curve))
        }
    }
}

pub fn train_classifier(
    cfg: &ExperimentConfig,
    kind: ClassifierKind,
    train: &LatentDataset,
    seed: u64,
) -> Result<(ClassifierModel, Vec<f64>)> {
    let config = ClassifierConfig {
        widths: cfg.classifier_widths,
        dropout: cfg.classifier_dropout,
        ..ClassifierConfig::new(kind, train.d(), train.num_classes())
    };
    let mut m = build_classifier(config, seed)?;
    let curve = classifier_train(&mut m, train, &cfg.classifier_budget(kind).with_seed(seed))?;
    Ok((m, curve))
}

pub fn evaluate_classifier(model: &ClassifierModel, test: &LatentDataset) -> Result<MetricQuad> {
    let pred = classifier_predict(model, test)?;
    metrics(&confusion(test.labels(), &pred.labels, model.config().num_classes)?)
}

fn mean_quad(qs: &[MetricQuad]) -> MetricQuad {
    let n = qs.len() as f64;
    let s = |f: fn(&MetricQuad) -> f64| qs.iter().map(f).sum::<f64>() / n;
    MetricQuad {
        acc: s(|q| q.acc),
        prc: s(|q| q.prc),
        rec: s(|q| q.rec),
        f1: s(|q| q.f1),
    }
}

struct Group<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a PreparedData,
    encoder: EncoderKind,
    dim: usize,
}

impl Group<'_> {
    fn file_stem(&self, model: Option<ClassifierKind>) -> String {
        let mut s = format!("{}-{}", self.encoder.name().to_ascii_lowercase(), self.dim);
        if let Some(m) = model {
            s = format!("{s}-{}", m.name().to_ascii_lowercase());
        }
        s
    }

    fn write_json(&self, record: &CellRecord) -> Result<()> {
        let path = self
            .cfg
            .out
            .join(format!("cell-{}.json", self.file_stem(Some(record.model.parse()?))));
        let text = serde_json::to_string_pretty(record).map_err(|e| Error::Corrupt(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn checkpoint(&self, name: String, model: AnyModel, seed: u64) -> Result<()> {
        if self.cfg.save_checkpoints {
            save_checkpoint(&model, seed, self.cfg.out.join(name))?;
        }
        Ok(())
    }

    fn run(&self, on_cell: &(dyn Fn(&CellResult) + Sync)) -> Result<Vec<CellResult>> {
        let cfg = self.cfg;
        let kinds = &cfg.classifiers;
        // Per classifier: metrics of each repeat, or the first failure.
        let mut quads: Vec<Result<Vec<MetricQuad>, String>> = vec![Ok(Vec::new()); kinds.len()];
        let mut records: Vec<CellRecord> = Vec::with_capacity(kinds.len());
        let mut hashes = vec![String::new(); kinds.len()];

        for repeat in 0..cfg.repeats {
            let eseed = encoder_seed(cfg.seed, self.encoder, self.dim, repeat);
            let encoded = train_encoder(cfg, self.encoder, self.dim, &self.data.train, self.data.layout, eseed)
                .and_then(|(enc, curve)| {
                    let tr = enc.project(&self.data.train)?;
                    let te = enc.project(&self.data.test)?;
                    Ok((enc, curve, tr, te))
                });
            let (enc, enc_curve, ztr, zte) = match encoded {
                Ok(v) => v,
                Err(e) => {
                    for q in quads.iter_mut().filter(|q| q.is_ok()) {
                        *q = Err(format!("encoder: {e}"));
                    }
                    if repeat == 0 {
                        records = kinds.iter().map(|&k| self.record(k, eseed, 0, String::new(), Vec::new())).collect();
                    }
                    continue;
                }
            };
            if repeat == 0 {
                self.checkpoint(format!("enc-{}.lbck", self.file_stem(None)), enc.into_any(), eseed)?;
            }

            for (i, &kind) in kinds.iter().enumerate() {
                let cseed = classifier_seed(cfg.seed, self.encoder, self.dim, kind, repeat);
                // Hash what this classifier actually consumes.
                let hash = projection_hash(&ztr, &zte);
                let outcome = train_classifier(cfg, kind, &ztr, cseed)
                    .and_then(|(m, curve)| Ok((evaluate_classifier(&m, &zte)?, m, curve)));
                let mut curve = Vec::new();
                match outcome {
                    Ok((q, m, c)) => {
                        if let Ok(v) = &mut quads[i] {
                            v.push(q);
                        }
                        if repeat == 0 {
                            self.checkpoint(format!("clf-{}.lbck", self.file_stem(Some(kind))), m.into(), cseed)?;
                        }
                        curve = c;
                    }
                    Err(e) => {
                        if quads[i].is_ok() {
                            quads[i] = Err(e.to_string());
                        }
                    }
                }
                if repeat == 0 {
                    hashes[i] = hash.clone();
                    records.push(self.record(kind, eseed, cseed, hash, enc_curve.clone()));
                    records[i].classifier_loss = curve;
                }
            }
        }

        let mut cells = Vec::with_capacity(kinds.len());
        for (i, &kind) in kinds.iter().enumerate() {
            let (metrics, error) = match &quads[i] {
                Ok(v) => (Some(mean_quad(v)), None),
                Err(e) => (None, Some(e.clone())),
            };
            let rec = &mut records[i];
            rec.status = if metrics.is_some() { "ok" } else { "failed" }.into();
            if let Some(q) = metrics {
                (rec.acc, rec.prc, rec.rec, rec.f1) = (Some(q.acc), Some(q.prc), Some(q.rec), Some(q.f1));
            }
            rec.error = error.clone();
            self.write_json(rec)?;
            let cell = CellResult {
                encoder: self.encoder,
                dim: self.dim,
                classifier: kind,
                metrics,
                error,
                projection_sha256: hashes[i].clone(),
            };
            on_cell(&cell);
            cells.push(cell);
        }
        Ok(cells)
    }

    fn record(&self, kind: ClassifierKind, eseed: u64, cseed: u64, hash: String, enc_curve: Vec<f64>) -> CellRecord {
        CellRecord {
            format: "latentbench-cell".into(),
            version: CELL_FORMAT_VERSION,
            dataset: self.data.name.clone(),
            encoder: self.encoder.name().into(),
            latent_dim: self.dim,
            model: kind.name().into(),
            encoder_seed: eseed,
            classifier_seed: cseed,
            repeats: self.cfg.repeats,
            projection_sha256: hash,
            status: "failed".into(),
            acc: None,
            prc: None,
            rec: None,
            f1: None,
            error: None,
            encoder_loss: enc_curve,
            classifier_loss: Vec::new(),
        }
    }
}

pub fn run_grid(cfg: &ExperimentConfig) -> Result<ResultTable> {
    run_grid_with(cfg, &|_| {})
}

/// Runs every configured cell, calling `on_cell` as each one finishes.
///
/// Every (encoder, latent dim) group trains its encoder once and evaluates
/// all classifiers on that shared projection. Groups are spread over
/// `cfg.workers` threads; results do not depend on the worker count. A cell
/// that fails is recorded as failed and the grid continues. Writes per-cell
/// JSON records, checkpoints, `results.csv`, `results.md` and the effective
/// `config.txt` under `cfg.out`.
pub fn run_grid_with(cfg: &ExperimentConfig, on_cell: &(dyn Fn(&CellResult) + Sync)) -> Result<ResultTable> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    cfg.validate_for_dim(data.train.d())?;
    let out: &PathBuf = &cfg.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| Error::io(out.join("config.txt"), e))?;

    let groups: Vec<Group> = cfg
        .encoders
        .iter()
        .flat_map(|&encoder| {
            cfg.latent_dims.iter().map({
                let data = &data;
                move |&dim| Group {
                    cfg,
                    data,
                    encoder,
                    dim,
                }
            })
        })
        .collect();
    let results: Mutex<Vec<Option<Result<Vec<CellResult>>>>> = Mutex::new((0..groups.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(group) = groups.get(i) else { break };
        let r = group.run(on_cell);
        results.lock().expect("no poisoned workers")[i] = Some(r);
    };
    let workers = cfg.workers.min(groups.len()).max(1);
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }

    let mut cells = Vec::new();
    for r in results.into_inner().expect("no poisoned workers") {
        cells.extend(r.expect("every group ran")?);
    }
    let table = ResultTable {
        dataset: data.name.clone(),
        encoders: cfg.encoders.clone(),
        dims: cfg.latent_dims.clone(),
        classifiers: cfg.classifiers.clone(),
        cells,
    };
    for (name, format) in [("results.csv", TableFormat::Csv), ("results.md", TableFormat::Markdown)] {
        let path = out.join(name);
        std::fs::write(&path, emit_table(&table, format)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(table)
}
