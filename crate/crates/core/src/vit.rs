//! Vision-transformer encoder over the patch sequences built by
//! [`ImageLayout`].
//!
//! Patches are linearly embedded, a learnable classification token is
//! prepended, learned positional rows are added, and the sequence passes
//! through pre-norm transformer blocks. The final classification-token state
//! is projected to `k` dimensions; that projection is the latent. A softmax
//! head on top of the latent is used only for supervised training and is
//! ignored by [`vit_project`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataprep::{extract_patches, Dataset, ImageInstance, ImageLayout, LatentDataset, PatchSequence};
use crate::error::{Error, Result};
use crate::numcore::train::{fit, TrainConfig};
use crate::numcore::{Bound, Dense, Graph, ParamId, ParamStore, Tensor, Var};

const PROJECT_CHUNK: usize = 256;
const EMBED_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VitConfig {
    pub layout: ImageLayout,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub depth: usize,
    pub mlp_hidden: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub dropout: f64,
}

impl VitConfig {
    /// Embedding 32, 4 heads, 2 blocks, MLP width 64, dropout 0.1.
    pub fn new(layout: ImageLayout, latent_dim: usize, num_classes: usize) -> Self {
        VitConfig {
            layout,
            embed_dim: 32,
            num_heads: 4,
            depth: 2,
            mlp_hidden: 64,
            latent_dim,
            num_classes,
            dropout: 0.1,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Sequence length including the classification token.
    pub fn seq_len(&self) -> usize {
        self.layout.num_patches() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.embed_dim,
            self.num_heads,
            self.mlp_hidden,
            self.latent_dim,
            self.num_classes,
        ];
        if positive.contains(&0) {
            return Err(Error::Invalid(format!("ViT sizes must be positive: {self:?}")));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Invalid(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        // Re-run the layout checks in case the fields were edited by hand.
        let l = self.layout;
        ImageLayout::new(l.input_dim, l.rows, l.cols, l.patch_rows, l.patch_cols)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    ln1: (ParamId, ParamId),
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    ln2: (ParamId, ParamId),
    mlp1: Dense,
    mlp2: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VitModel {
    config: VitConfig,
    params: ParamStore,
    patch: Dense,
    cls: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    latent: Dense,
    head: Dense,
}

/// Attention of one layer for one instance: per head, a `T × T` row-stochastic
/// matrix with `T` = patch count + 1.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub heads: Vec<Tensor>,
}

/// Graph handles of a batched forward pass.
#[derive(Clone, Debug)]
pub struct VitVars {
    pub latent: Var,
    pub logits: Var,
    /// Per block, `(B · H) × T × T`.
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VitOutput {
    pub latent: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn vit_init(config: VitConfig, seed: u64) -> Result<VitModel> {
    VitModel::new(config, seed)
}

impl VitModel {
    pub fn new(config: VitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = config.embed_dim;
        let mut params = ParamStore::new();
        let patch = params.dense("patch", config.layout.patch_len(), e, &mut rng);
        let normal = Normal::new(0.0, EMBED_INIT_STD).expect("valid std");
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal.sample(&mut rng)).collect() };
        let cls = params.push("cls", Tensor::from_parts(vec![e], draw(e)));
        let t = config.seq_len();
        let pos = params.push("pos", Tensor::from_parts(vec![t, e], draw(t * e)));
        let ln = |params: &mut ParamStore, name: String| {
            (
                params.push(format!("{name}.gamma"), Tensor::filled(&[e], 1.0)),
                params.push(format!("{name}.beta"), Tensor::zeros(&[e])),
            )
        };
        let mut blocks = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let ln1 = ln(&mut params, format!("block{i}.ln1"));
            let q = params.dense(&format!("block{i}.q"), e, e, &mut rng);
            let k = params.dense(&format!("block{i}.k"), e, e, &mut rng);
            let v = params.dense(&format!("block{i}.v"), e, e, &mut rng);
            let o = params.dense(&format!("block{i}.o"), e, e, &mut rng);
            let ln2 = ln(&mut params, format!("block{i}.ln2"));
            let mlp1 = params.dense(&format!("block{i}.mlp1"), e, config.mlp_hidden, &mut rng);
            let mlp2 = params.dense(&format!("block{i}.mlp2"), config.mlp_hidden, e, &mut rng);
            blocks.push(Block {
                ln1,
                q,
                k,
                v,
                o,
                ln2,
                mlp1,
                mlp2,
            });
        }
        let latent = params.dense("latent", e, config.latent_dim, &mut rng);
        let head = params.dense("head", config.latent_dim, config.num_classes, &mut rng);
        Ok(VitModel {
            config,
            params,
            patch,
            cls,
            pos,
            blocks,
            latent,
            head,
        })
    }

    pub fn from_params(config: VitConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &VitConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `patches` is `B × P × (pr·pc)`; returns `B × P × E`.
    pub fn embed_graph(&self, g: &mut Graph, p: &Bound, patches: Var) -> Result<Var> {
        let shape = g.shape(patches).to_vec();
        let (np, pl) = (self.config.layout.num_patches(), self.config.layout.patch_len());
        if shape.len() != 3 || shape[1] != np || shape[2] != pl {
            return Err(Error::shape(
                "patch_embed",
                format!("expected B x {np} x {pl}, got {shape:?}"),
            ));
        }
        let flat = g.reshape(patches, &[shape[0] * np, pl])?;
        let tokens = self.patch.forward(g, p, flat)?;
        g.reshape(tokens, &[shape[0], np, self.config.embed_dim])
    }

    /// Prepends the classification token and adds positional rows:
    /// `B × P × E` in, `B × (P+1) × E` out.
    pub fn prepend_graph(&self, g: &mut Graph, p: &Bound, tokens: Var) -> Result<Var> {
        let shape = g.shape(tokens).to_vec();
        let e = self.config.embed_dim;
        if shape.len() != 3 || shape[1] + 1 != self.config.seq_len() || shape[2] != e {
            return Err(Error::shape(
                "add_positional_and_token",
                format!("expected B x {} x {e}, got {shape:?}", self.config.seq_len() - 1),
            ));
        }
        let zeros = g.constant(Tensor::zeros(&[shape[0], 1, e]))?;
        let cls = g.add(zeros, p.get(self.cls))?;
        let seq = g.concat(&[cls, tokens], 1)?;
        g.add(seq, p.get(self.pos))
    }

    fn layer_norm(&self, g: &mut Graph, p: &Bound, x: Var, (gamma, beta): (ParamId, ParamId)) -> Result<Var> {
        let n = g.layer_norm(x, 2)?;
        let s = g.mul(n, p.get(gamma))?;
        g.add(s, p.get(beta))
    }

    /// Multi-head self-attention of block `i` on `B × T × E`. Returns the
    /// projected output and the `(B·H) × T × T` attention weights.
    pub fn mhsa_graph(&self, g: &mut Graph, p: &Bound, i: usize, x: Var) -> Result<(Var, Var)> {
        let blk = self.block(i)?;
        let shape = g.shape(x).to_vec();
        let (e, h, dh) = (self.config.embed_dim, self.config.num_heads, self.config.head_dim());
        if shape.len() != 3 || shape[2] != e {
            return Err(Error::shape("mhsa", format!("expected B x T x {e}, got {shape:?}")));
        }
        let (b, t) = (shape[0], shape[1]);
        let flat = g.reshape(x, &[b * t, e])?;
        let split = |g: &mut Graph, d: &Dense| -> Result<Var> {
            let y = d.forward(g, p, flat)?;
            let y = g.reshape(y, &[b, t, h, dh])?;
            let y = g.permute(y, &[0, 2, 1, 3])?;
            g.reshape(y, &[b * h, t, dh])
        };
        let q = split(g, &blk.q)?;
        let k = split(g, &blk.k)?;
        let v = split(g, &blk.v)?;
        let scores = g.batch_matmul(q, k, true)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let att = g.softmax(scores, 2)?;
        let ctx = g.batch_matmul(att, v, false)?;
        let ctx = g.reshape(ctx, &[b, h, t, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b * t, e])?;
        let out = blk.o.forward(g, p, ctx)?;
        Ok((g.reshape(out, &[b, t, e])?, att))
    }

    /// `x + drop(MHSA(LN(x)))`, then `x + drop(MLP(LN(x)))`.
    pub fn block_graph(&self, g: &mut Graph, p: &Bound, i: usize, x: Var) -> Result<(Var, Var)> {
        let blk = self.block(i)?;
        let rate = self.config.dropout;
        let n = self.layer_norm(g, p, x, blk.ln1)?;
        let (a, att) = self.mhsa_graph(g, p, i, n)?;
        let a = g.dropout(a, rate)?;
        let x = g.add(x, a)?;

        let shape = g.shape(x).to_vec();
        let n = self.layer_norm(g, p, x, blk.ln2)?;
        let flat = g.reshape(n, &[shape[0] * shape[1], shape[2]])?;
        let m = blk.mlp1.forward(g, p, flat)?;
        let m = g.relu(m)?;
        let m = blk.mlp2.forward(g, p, m)?;
        let m = g.reshape(m, &shape)?;
        let m = g.dropout(m, rate)?;
        Ok((g.add(x, m)?, att))
    }

    /// Full forward pass on `B × P × (pr·pc)` patches.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, patches: Var) -> Result<VitVars> {
        let tokens = self.embed_graph(g, p, patches)?;
        let mut x = self.prepend_graph(g, p, tokens)?;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for i in 0..self.blocks.len() {
            let (y, att) = self.block_graph(g, p, i, x)?;
            x = y;
            attention.push(att);
        }
        let b = g.shape(x)[0];
        let cls = g.slice(x, 1, 0, 1)?;
        let cls = g.reshape(cls, &[b, self.config.embed_dim])?;
        let latent = self.latent.forward(g, p, cls)?;
        let logits = self.head.forward(g, p, latent)?;
        Ok(VitVars {
            latent,
            logits,
            attention,
        })
    }

    /// Patches of the records at `indices`, `B × P × (pr·pc)`, zero where
    /// the layout pads.
    pub fn patch_batch(&self, dataset: &Dataset, indices: &[usize]) -> Result<Tensor> {
        let layout = &self.config.layout;
        if dataset.d() != layout.input_dim {
            return Err(Error::shape(
                "vit",
                format!("model expects {} features, data has {}", layout.input_dim, dataset.d()),
            ));
        }
        let gather = layout.gather_index();
        let mut data = Vec::with_capacity(indices.len() * gather.len());
        for &i in indices {
            let row = dataset.row(i);
            data.extend(gather.iter().map(|g| g.map_or(0.0, |j| row[j])));
        }
        Tensor::new(vec![indices.len(), layout.num_patches(), layout.patch_len()], data)
    }

    fn block(&self, i: usize) -> Result<&Block> {
        self.blocks
            .get(i)
            .ok_or_else(|| Error::Invalid(format!("block {i} out of range for depth {}", self.blocks.len())))
    }

    fn sequence_tensor(&self, patches: &PatchSequence) -> Result<Tensor> {
        let l = &self.config.layout;
        if patches.patch_dims() != (l.patch_rows, l.patch_cols) || patches.len() != l.num_patches() {
            return Err(Error::shape(
                "vit",
                format!(
                    "expected {} patches of {}x{}, got {} of {:?}",
                    l.num_patches(),
                    l.patch_rows,
                    l.patch_cols,
                    patches.len(),
                    patches.patch_dims()
                ),
            ));
        }
        Tensor::new(vec![1, l.num_patches(), l.patch_len()], patches.patches().concat())
    }

    fn single_sequence(&self, seq: &Tensor) -> Result<Tensor> {
        if seq.ndim() != 2 || seq.shape()[1] != self.config.embed_dim {
            return Err(Error::shape(
                "vit",
                format!("expected T x {}, got {:?}", self.config.embed_dim, seq.shape()),
            ));
        }
        seq.clone().reshaped(&[1, seq.shape()[0], seq.shape()[1]])
    }
}

fn squeeze(t: &Tensor) -> Tensor {
    let s = t.shape();
    t.clone().reshaped(&s[1..]).expect("leading unit axis")
}

fn split_heads(att: &Tensor, heads: usize) -> AttentionWeights {
    let t = att.shape()[1];
    AttentionWeights {
        heads: (0..heads)
            .map(|h| Tensor::from_parts(vec![t, t], att.data()[h * t * t..(h + 1) * t * t].to_vec()))
            .collect(),
    }
}

/// `P × E` token matrix of one patch sequence.
pub fn patch_embed(patches: &PatchSequence, model: &VitModel) -> Result<Tensor> {
    let x = model.sequence_tensor(patches)?;
    let mut g = Graph::inference();
    let p = model.params.bind(&mut g)?;
    let x = g.constant(x)?;
    let y = model.embed_graph(&mut g, &p, x)?;
    Ok(squeeze(g.value(y)))
}

/// `(P+1) × E` sequence: classification token first, positional rows added.
pub fn add_positional_and_token(tokens: &Tensor, model: &VitModel) -> Result<Tensor> {
    let x = model.single_sequence(tokens)?;
    let mut g = Graph::inference();
    let p = model.params.bind(&mut g)?;
    let x = g.constant(x)?;
    let y = model.prepend_graph(&mut g, &p, x)?;
    Ok(squeeze(g.value(y)))
}

/// Attention sublayer of `block` applied to a `T × E` sequence, without the
/// residual or layer norm.
pub fn mhsa(sequence: &Tensor, model: &VitModel, block: usize) -> Result<(Tensor, AttentionWeights)> {
    let x = model.single_sequence(sequence)?;
    let mut g = Graph::inference();
    let p = model.params.bind(&mut g)?;
    let x = g.constant(x)?;
    let (y, att) = model.mhsa_graph(&mut g, &p, block, x)?;
    Ok((squeeze(g.value(y)), split_heads(g.value(att), model.config.num_heads)))
}

/// One full pre-norm block on a `T × E` sequence, inference mode.
pub fn transformer_block(sequence: &Tensor, model: &VitModel, block: usize) -> Result<Tensor> {
    let x = model.single_sequence(sequence)?;
    let mut g = Graph::inference();
    let p = model.params.bind(&mut g)?;
    let x = g.constant(x)?;
    let (y, _) = model.block_graph(&mut g, &p, block, x)?;
    Ok(squeeze(g.value(y)))
}

pub fn vit_forward(model: &VitModel, image: &ImageInstance) -> Result<VitOutput> {
    let l = &model.config.layout;
    if (image.rows(), image.cols()) != (l.rows, l.cols) {
        return Err(Error::shape(
            "vit_forward",
            format!("expected {}x{} image, got {}x{}", l.rows, l.cols, image.rows(), image.cols()),
        ));
    }
    vit_forward_patches(model, &extract_patches(image, l.patch_rows, l.patch_cols)?)
}

pub fn vit_forward_patches(model: &VitModel, patches: &PatchSequence) -> Result<VitOutput> {
    Ok(run_single(model, patches)?.0)
}

/// Attention weights of every block for one instance.
pub fn vit_attention(model: &VitModel, patches: &PatchSequence) -> Result<Vec<AttentionWeights>> {
    Ok(run_single(model, patches)?.1)
}

fn run_single(model: &VitModel, patches: &PatchSequence) -> Result<(VitOutput, Vec<AttentionWeights>)> {
    let x = model.sequence_tensor(patches)?;
    let mut g = Graph::inference();
    let p = model.params.bind(&mut g)?;
    let x = g.constant(x)?;
    let out = model.forward_graph(&mut g, &p, x)?;
    let atts = out
        .attention
        .iter()
        .map(|&a| split_heads(g.value(a), model.config.num_heads))
        .collect();
    Ok((
        VitOutput {
            latent: g.value(out.latent).data().to_vec(),
            logits: g.value(out.logits).data().to_vec(),
        },
        atts,
    ))
}

/// Supervised training of the whole network and head with softmax
/// cross-entropy. Returns the mean loss of each epoch.
pub fn vit_train(model: &mut VitModel, train: &Dataset, config: &TrainConfig) -> Result<Vec<f64>> {
    if train.num_classes() > model.config.num_classes {
        return Err(Error::Invalid(format!(
            "data has {} classes, head has {}",
            train.num_classes(),
            model.config.num_classes
        )));
    }
    let structure = model.clone();
    structure.patch_batch(train, &[0])?;
    fit(&mut model.params, train.n(), config, |g, p, idx| {
        let x = g.constant(structure.patch_batch(train, idx)?)?;
        let out = structure.forward_graph(g, p, x)?;
        g.softmax_cross_entropy(out.logits, &train.batch_labels(idx))
    })
}

fn batched(model: &VitModel, dataset: &Dataset, pick: impl Fn(&VitVars) -> Var) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..dataset.n()).collect();
    let mut out = Vec::new();
    for chunk in all.chunks(PROJECT_CHUNK) {
        let mut g = Graph::inference();
        let p = model.params.bind(&mut g)?;
        let x = g.constant(model.patch_batch(dataset, chunk)?)?;
        let vars = model.forward_graph(&mut g, &p, x)?;
        out.extend_from_slice(g.value(pick(&vars)).data());
    }
    Ok(out)
}

/// Latent vectors of every record; the head is not used.
pub fn vit_project(model: &VitModel, dataset: &Dataset) -> Result<LatentDataset> {
    let latent = batched(model, dataset, |v| v.latent)?;
    Dataset::latent(
        latent,
        model.config.latent_dim,
        dataset.labels().to_vec(),
        dataset.label_map().clone(),
    )
}

/// Head predictions (argmax of the logits, lowest index on ties).
pub fn vit_predict(model: &VitModel, dataset: &Dataset) -> Result<Vec<usize>> {
    let logits = batched(model, dataset, |v| v.logits)?;
    Ok(logits
        .chunks(model.config.num_classes)
        .map(crate::classifiers::argmax)
        .collect())
}
