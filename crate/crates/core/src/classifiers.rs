//! The five downstream classifiers trained on latent vectors.
//!
//! Every model has four hidden layers followed by a softmax output. The DNN
//! uses four ReLU dense layers; the recurrent kinds replace the first with a
//! recurrent layer that reads the latent vector as `k` scalar timesteps and
//! hands its final state to the dense layers. Dropout of 0.3 and 0.2 follows
//! hidden layers three and four.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataprep::Dataset;
use crate::error::{Error, Result};
use crate::numcore::train::{fit, TrainConfig};
use crate::numcore::{glorot_uniform, Bound, Dense, Graph, ParamId, ParamStore, Tensor, Var};

const PREDICT_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassifierKind {
    Dnn,
    Lstm,
    Blstm,
    Gru,
    Srnn,
}

impl ClassifierKind {
    /// Table row order.
    pub const ALL: [ClassifierKind; 5] = [Self::Dnn, Self::Lstm, Self::Blstm, Self::Gru, Self::Srnn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dnn => "DNN",
            Self::Lstm => "LSTM",
            Self::Blstm => "BLSTM",
            Self::Gru => "GRU",
            Self::Srnn => "sRNN",
        }
    }

    pub fn is_recurrent(self) -> bool {
        self != Self::Dnn
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown classifier '{s}' (expected dnn, lstm, blstm, gru or srnn)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub widths: [usize; 4],
    /// Rates after hidden layers three and four.
    pub dropout: [f64; 2],
}

impl ClassifierConfig {
    pub const DEFAULT_WIDTHS: [usize; 4] = [64, 64, 32, 16];

    pub fn new(kind: ClassifierKind, input_dim: usize, num_classes: usize) -> Self {
        ClassifierConfig {
            kind,
            input_dim,
            num_classes,
            widths: Self::DEFAULT_WIDTHS,
            dropout: [0.3, 0.2],
        }
    }

    /// Width of the first hidden layer's output.
    pub fn first_width(&self) -> usize {
        match self.kind {
            ClassifierKind::Blstm => 2 * self.widths[0],
            _ => self.widths[0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.widths.contains(&0) {
            return Err(Error::Invalid(format!("classifier sizes must be positive: {self:?}")));
        }
        if self.dropout.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Invalid(format!("dropout rates {:?} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Parameters of one recurrent direction. Gate blocks are stacked along
/// the output axis of `w`, `u` and `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Cell {
    /// `h = tanh(x w + h u + b)`
    Srnn { w: ParamId, u: ParamId, b: ParamId },
    /// Gates `i, f, g, o` in that order.
    Lstm { w: ParamId, u: ParamId, b: ParamId },
    /// `w`, `b` hold update, reset and candidate blocks; `u` holds update and
    /// reset, `un` the candidate's recurrent map applied after the reset.
    Gru { w: ParamId, u: ParamId, un: ParamId, b: ParamId },
}

#[derive(Clone, Debug, PartialEq)]
enum First {
    Dense(Dense),
    Recurrent(Cell),
    Bidirectional(Cell, Cell),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    config: ClassifierConfig,
    params: ParamStore,
    first: First,
    hidden: [Dense; 3],
    output: Dense,
}

/// State after each step of a forward recurrent pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepState {
    pub hidden: Tensor,
    /// LSTM memory; `None` for other cells.
    pub cell: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// One probability row per record.
    pub probs: Vec<Vec<f64>>,
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `k` timesteps of one scalar feature each, in coordinate order.
pub fn latent_to_sequence(z: &[f64]) -> Vec<Vec<f64>> {
    z.iter().map(|&v| vec![v]).collect()
}

fn make_cell(params: &mut ParamStore, prefix: &str, kind: ClassifierKind, h: usize, rng: &mut ChaCha8Rng) -> Cell {
    let mut push = |name: &str, t: Tensor| params.push(format!("{prefix}.{name}"), t);
    match kind {
        ClassifierKind::Srnn => Cell::Srnn {
            w: push("w", glorot_uniform(1, h, rng)),
            u: push("u", glorot_uniform(h, h, rng)),
            b: push("b", Tensor::zeros(&[h])),
        },
        ClassifierKind::Lstm | ClassifierKind::Blstm => Cell::Lstm {
            w: push("w", glorot_uniform(1, 4 * h, rng)),
            u: push("u", glorot_uniform(h, 4 * h, rng)),
            b: push("b", Tensor::zeros(&[4 * h])),
        },
        ClassifierKind::Gru => Cell::Gru {
            w: push("w", glorot_uniform(1, 3 * h, rng)),
            u: push("u", glorot_uniform(h, 2 * h, rng)),
            un: push("un", glorot_uniform(h, h, rng)),
            b: push("b", Tensor::zeros(&[3 * h])),
        },
        ClassifierKind::Dnn => unreachable!("dense first layer has no cell"),
    }
}

pub fn build_classifier(config: ClassifierConfig, seed: u64) -> Result<ClassifierModel> {
    ClassifierModel::new(config, seed)
}

impl ClassifierModel {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let [w1, w2, w3, w4] = config.widths;
        let first = match config.kind {
            ClassifierKind::Dnn => First::Dense(params.dense("l1", config.input_dim, w1, &mut rng)),
            ClassifierKind::Blstm => First::Bidirectional(
                make_cell(&mut params, "l1.fwd", config.kind, w1, &mut rng),
                make_cell(&mut params, "l1.bwd", config.kind, w1, &mut rng),
            ),
            kind => First::Recurrent(make_cell(&mut params, "l1", kind, w1, &mut rng)),
        };
        let hidden = [
            params.dense("l2", config.first_width(), w2, &mut rng),
            params.dense("l3", w2, w3, &mut rng),
            params.dense("l4", w3, w4, &mut rng),
        ];
        let output = params.dense("out", w4, config.num_classes, &mut rng);
        Ok(ClassifierModel {
            config,
            params,
            first,
            hidden,
            output,
        })
    }

    pub fn from_params(config: ClassifierConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn kind(&self) -> ClassifierKind {
        self.config.kind
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.config.input_dim {
            return Err(Error::shape(
                "classifier",
                format!("expected B x {}, got {s:?}", self.config.input_dim),
            ));
        }
        Ok(())
    }

    /// Output of the first hidden layer for latents `x` (`B × k`).
    pub fn first_layer_graph(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        match &self.first {
            First::Dense(d) => {
                let y = d.forward(g, p, x)?;
                g.relu(y)
            }
            First::Recurrent(cell) => {
                let steps = sequence_steps(g, x)?;
                Ok(run_cell(g, p, *cell, self.config.widths[0], &steps)?.last().expect("k >= 1").0)
            }
            First::Bidirectional(fwd, bwd) => {
                let mut steps = sequence_steps(g, x)?;
                let h = self.config.widths[0];
                let f = run_cell(g, p, *fwd, h, &steps)?.last().expect("k >= 1").0;
                steps.reverse();
                let b = run_cell(g, p, *bwd, h, &steps)?.last().expect("k >= 1").0;
                g.concat(&[f, b], 1)
            }
        }
    }

    /// Unnormalized class scores for latents `x` (`B × k`).
    pub fn logits_graph(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let mut h = self.first_layer_graph(g, p, x)?;
        for (i, layer) in self.hidden.iter().enumerate() {
            let a = layer.forward(g, p, h)?;
            h = g.relu(a)?;
            if i >= 1 {
                h = g.dropout(h, self.config.dropout[i - 1])?;
            }
        }
        self.output.forward(g, p, h)
    }
}

fn sequence_steps(g: &mut Graph, x: Var) -> Result<Vec<Var>> {
    let k = g.shape(x)[1];
    (0..k).map(|t| g.slice(x, 1, t, 1)).collect()
}

/// Runs one direction over `steps` (each `B × in`) from a zero state.
/// Returns `(hidden, cell)` after every step; `cell` equals `hidden` for
/// cells without separate memory.
fn run_cell(g: &mut Graph, p: &Bound, cell: Cell, h: usize, steps: &[Var]) -> Result<Vec<(Var, Var)>> {
    let b = g.shape(steps[0])[0];
    let zero = g.constant(Tensor::zeros(&[b, h]))?;
    let (mut hid, mut mem) = (zero, zero);
    let mut out = Vec::with_capacity(steps.len());
    for &x in steps {
        match cell {
            Cell::Srnn { w, u, b } => {
                let xw = g.matmul(x, p.get(w))?;
                let hu = g.matmul(hid, p.get(u))?;
                let s = g.add(xw, hu)?;
                let s = g.add(s, p.get(b))?;
                hid = g.tanh(s)?;
                mem = hid;
            }
            Cell::Lstm { w, u, b } => {
                let xw = g.matmul(x, p.get(w))?;
                let hu = g.matmul(hid, p.get(u))?;
                let s = g.add(xw, hu)?;
                let s = g.add(s, p.get(b))?;
                let gi = g.slice(s, 1, 0, h)?;
                let gf = g.slice(s, 1, h, h)?;
                let gg = g.slice(s, 1, 2 * h, h)?;
                let go = g.slice(s, 1, 3 * h, h)?;
                let i = g.sigmoid(gi)?;
                let f = g.sigmoid(gf)?;
                let c_new = g.tanh(gg)?;
                let o = g.sigmoid(go)?;
                let keep = g.mul(f, mem)?;
                let write = g.mul(i, c_new)?;
                mem = g.add(keep, write)?;
                let tc = g.tanh(mem)?;
                hid = g.mul(o, tc)?;
            }
            Cell::Gru { w, u, un, b } => {
                let xw = g.matmul(x, p.get(w))?;
                let xw = g.add(xw, p.get(b))?;
                let hu = g.matmul(hid, p.get(u))?;
                let xz = g.slice(xw, 1, 0, h)?;
                let hz = g.slice(hu, 1, 0, h)?;
                let xr = g.slice(xw, 1, h, h)?;
                let hr = g.slice(hu, 1, h, h)?;
                let xn = g.slice(xw, 1, 2 * h, h)?;
                let sz = g.add(xz, hz)?;
                let z = g.sigmoid(sz)?;
                let sr = g.add(xr, hr)?;
                let r = g.sigmoid(sr)?;
                let rh = g.mul(r, hid)?;
                let hn = g.matmul(rh, p.get(un))?;
                let sn = g.add(xn, hn)?;
                let n = g.tanh(sn)?;
                // h = z ⊙ h_prev + (1 - z) ⊙ n = n + z ⊙ (h_prev - n)
                let d = g.sub(hid, n)?;
                let zd = g.mul(z, d)?;
                hid = g.add(n, zd)?;
                mem = hid;
            }
        }
        out.push((hid, mem));
    }
    Ok(out)
}

/// Final recurrent representation of each row of `z` (`B × k`); for BLSTM
/// the forward and backward final states concatenated.
pub fn recurrent_forward(model: &ClassifierModel, z: &Tensor) -> Result<Tensor> {
    if !model.kind().is_recurrent() {
        return Err(Error::Invalid("DNN has no recurrent layer".into()));
    }
    let mut g = Graph::inference();
    let p = model.params.bind(&mut g)?;
    let x = g.constant(z.clone())?;
    let y = model.first_layer_graph(&mut g, &p, x)?;
    Ok(g.value(y).clone())
}

/// Per-step states of the (forward) recurrent direction.
pub fn recurrent_trace(model: &ClassifierModel, z: &Tensor) -> Result<Vec<StepState>> {
    let cell = match &model.first {
        First::Dense(_) => return Err(Error::Invalid("DNN has no recurrent layer".into())),
        First::Recurrent(c) | First::Bidirectional(c, _) => *c,
    };
    let mut g = Graph::inference();
    let p = model.params.bind(&mut g)?;
    let x = g.constant(z.clone())?;
    model.check_input(&g, x)?;
    let steps = sequence_steps(&mut g, x)?;
    let states = run_cell(&mut g, &p, cell, model.config.widths[0], &steps)?;
    Ok(states
        .into_iter()
        .map(|(h, c)| StepState {
            hidden: g.value(h).clone(),
            cell: matches!(cell, Cell::Lstm { .. }).then(|| g.value(c).clone()),
        })
        .collect())
}

/// Adam on softmax cross-entropy with dropout active. Returns the mean loss
/// of each epoch.
pub fn classifier_train(model: &mut ClassifierModel, latents: &Dataset, config: &TrainConfig) -> Result<Vec<f64>> {
    if latents.d() != model.config.input_dim {
        return Err(Error::shape(
            "classifier_train",
            format!("model expects {} inputs, data has {}", model.config.input_dim, latents.d()),
        ));
    }
    if latents.num_classes() > model.config.num_classes {
        return Err(Error::Invalid(format!(
            "data has {} classes, model outputs {}",
            latents.num_classes(),
            model.config.num_classes
        )));
    }
    let structure = model.clone();
    fit(&mut model.params, latents.n(), config, |g, p, idx| {
        let x = g.constant(latents.batch(idx))?;
        let logits = structure.logits_graph(g, p, x)?;
        g.softmax_cross_entropy(logits, &latents.batch_labels(idx))
    })
}

/// Class probabilities of each row of `z` (`n × k`), dropout off.
pub fn classifier_probs(model: &ClassifierModel, z: &Tensor) -> Result<Tensor> {
    let mut g = Graph::inference();
    let p = model.params.bind(&mut g)?;
    let x = g.constant(z.clone())?;
    let logits = model.logits_graph(&mut g, &p, x)?;
    let probs = g.softmax(logits, 1)?;
    Ok(g.value(probs).clone())
}

pub fn classifier_predict(model: &ClassifierModel, latents: &Dataset) -> Result<Prediction> {
    if latents.d() != model.config.input_dim {
        return Err(Error::shape(
            "classifier_predict",
            format!("model expects {} inputs, data has {}", model.config.input_dim, latents.d()),
        ));
    }
    let all: Vec<usize> = (0..latents.n()).collect();
    let mut probs = Vec::with_capacity(latents.n());
    for chunk in all.chunks(PREDICT_CHUNK) {
        let t = classifier_probs(model, &latents.batch(chunk))?;
        probs.extend(t.data().chunks(model.config.num_classes).map(<[f64]>::to_vec));
    }
    Ok(Prediction {
        labels: probs.iter().map(|r| argmax(r)).collect(),
        probs,
    })
}
