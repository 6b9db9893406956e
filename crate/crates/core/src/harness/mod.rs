//! Experiment plumbing: configuration, checkpoints, the encoder × latent
//! dim × classifier grid, result tables and the command-line front end.

mod checkpoint;
pub mod cli;
mod config;
mod grid;
mod table;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, load_classifier, load_vae, load_vit, save_checkpoint,
    AnyModel, Checkpoint, CHECKPOINT_VERSION,
};
pub use config::{Budget, BudgetOverride, ExperimentConfig};
pub use grid::{
    cell_seed, classifier_seed, encoder_seed, evaluate_classifier, prepare_data, projection_hash, resolve_layout,
    run_grid, run_grid_with, train_classifier, train_encoder, CellRecord, Encoder, PreparedData, CELL_FORMAT_VERSION,
};
pub use table::{emit_table, parse_results_csv, CellResult, ResultTable, TableFormat};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EncoderKind {
    Vae,
    Vit,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 2] = [EncoderKind::Vae, EncoderKind::Vit];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Vae => "VAE",
            EncoderKind::Vit => "ViT",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown encoder '{s}' (expected vae or vit)")))
    }
}
