//! Variational auto-encoder used as an unsupervised projection into a
//! `k`-dimensional latent space.
//!
//! The encoder maps a record through ReLU hidden layers to the mean and
//! log-variance of a diagonal Gaussian posterior; the decoder mirrors the
//! hidden widths back to the input width with a linear output. Training
//! minimizes the negative evidence lower bound, written as a squared-error
//! reconstruction term plus the closed-form KL divergence to a standard
//! normal prior, with one reparameterized sample per record and step.
//! Projection uses the posterior mean and draws no randomness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataprep::{Dataset, LatentDataset};
use crate::error::{Error, Result};
use crate::numcore::train::{fit, TrainConfig};
use crate::numcore::{Bound, Dense, Graph, ParamStore, Tensor, Var};

/// Rows per inference graph when encoding a whole dataset.
const PROJECT_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    /// Encoder hidden widths, outermost first; the decoder mirrors them.
    pub hidden: Vec<usize>,
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Invalid(format!("VAE dimensions must be positive: {self:?}")));
        }
        if self.latent_dim >= self.input_dim {
            return Err(Error::Invalid(format!(
                "latent dim {} must be below input dim {}",
                self.latent_dim, self.input_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    config: VaeConfig,
    params: ParamStore,
    encoder: Vec<Dense>,
    mu_head: Dense,
    logvar_head: Dense,
    decoder: Vec<Dense>,
    output: Dense,
}

/// Values of the minimized objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboBreakdown {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Graph handles of the objective's terms.
#[derive(Clone, Copy, Debug)]
pub struct ElboVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

/// Seeded model with Glorot-uniform weights and zero biases.
pub fn vae_init(d: usize, k: usize, hidden: &[usize], seed: u64) -> Result<VaeModel> {
    VaeModel::new(
        VaeConfig {
            input_dim: d,
            latent_dim: k,
            hidden: hidden.to_vec(),
        },
        seed,
    )
}

impl VaeModel {
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut encoder = Vec::new();
        let mut width = config.input_dim;
        for (i, &h) in config.hidden.iter().enumerate() {
            encoder.push(params.dense(&format!("enc.{i}"), width, h, &mut rng));
            width = h;
        }
        let mu_head = params.dense("enc.mu", width, config.latent_dim, &mut rng);
        let logvar_head = params.dense("enc.logvar", width, config.latent_dim, &mut rng);
        let mut decoder = Vec::new();
        let mut width = config.latent_dim;
        for (i, &h) in config.hidden.iter().rev().enumerate() {
            decoder.push(params.dense(&format!("dec.{i}"), width, h, &mut rng));
            width = h;
        }
        let output = params.dense("dec.out", width, config.input_dim, &mut rng);
        Ok(VaeModel {
            config,
            params,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            output,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Rebuilds a model around stored parameters.
    pub fn from_params(config: VaeConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    /// `x` is `n × d`; returns `(mu, logvar)`, each `n × k`.
    pub fn encode_graph(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for layer in &self.encoder {
            let a = layer.forward(g, p, h)?;
            h = g.relu(a)?;
        }
        Ok((self.mu_head.forward(g, p, h)?, self.logvar_head.forward(g, p, h)?))
    }

    /// `z` is `n × k`; returns `n × d` reconstructions.
    pub fn decode_graph(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Var> {
        let mut h = z;
        for layer in &self.decoder {
            let a = layer.forward(g, p, h)?;
            h = g.relu(a)?;
        }
        self.output.forward(g, p, h)
    }

    /// Negative ELBO of a batch with one posterior sample per row drawn from
    /// `rng`.
    pub fn loss_graph<R: Rng + ?Sized>(&self, g: &mut Graph, p: &Bound, x: Var, rng: &mut R) -> Result<ElboVars> {
        let (mu, logvar) = self.encode_graph(g, p, x)?;
        let z = reparameterize(g, mu, logvar, rng)?;
        let recon = self.decode_graph(g, p, z)?;
        elbo_loss(g, x, recon, mu, logvar)
    }

    fn check_width(&self, t: &Tensor, width: usize, what: &str) -> Result<()> {
        if t.ndim() != 2 || t.shape()[1] != width {
            return Err(Error::shape(
                "vae",
                format!("{what} must be n x {width}, got {:?}", t.shape()),
            ));
        }
        Ok(())
    }
}

/// `z = mu + exp(logvar / 2) ⊙ ε` with `ε ~ N(0, I)` drawn from `rng`.
/// Gradients reach `mu` and `logvar`; `ε` is a constant.
pub fn reparameterize<R: Rng + ?Sized>(g: &mut Graph, mu: Var, logvar: Var, rng: &mut R) -> Result<Var> {
    if g.shape(mu) != g.shape(logvar) {
        return Err(Error::shape(
            "reparameterize",
            format!("{:?} vs {:?}", g.shape(mu), g.shape(logvar)),
        ));
    }
    let shape = g.shape(mu).to_vec();
    let n = shape.iter().product();
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let eps = g.constant(Tensor::new(shape, eps)?)?;
    let half = g.scale(logvar, 0.5)?;
    let sigma = g.exp(half)?;
    let noise = g.mul(sigma, eps)?;
    g.add(mu, noise)
}

/// Per-batch-mean squared reconstruction error plus KL divergence of
/// `N(mu, exp(logvar))` from `N(0, I)`.
pub fn elbo_loss(g: &mut Graph, x: Var, x_recon: Var, mu: Var, logvar: Var) -> Result<ElboVars> {
    if g.shape(x) != g.shape(x_recon) || g.shape(mu) != g.shape(logvar) || g.shape(x)[0] != g.shape(mu)[0] {
        return Err(Error::shape(
            "elbo_loss",
            format!(
                "x {:?}, recon {:?}, mu {:?}, logvar {:?}",
                g.shape(x),
                g.shape(x_recon),
                g.shape(mu),
                g.shape(logvar)
            ),
        ));
    }
    let n = g.shape(x)[0] as f64;
    let diff = g.sub(x, x_recon)?;
    let sq = g.mul(diff, diff)?;
    let sse = g.sum(sq)?;
    let recon = g.scale(sse, 1.0 / n)?;

    // -1/2 Σ (1 + logvar - mu² - exp(logvar))
    let mu_sq = g.mul(mu, mu)?;
    let var = g.exp(logvar)?;
    let one_plus = g.add_scalar(logvar, 1.0)?;
    let t = g.sub(one_plus, mu_sq)?;
    let t = g.sub(t, var)?;
    let s = g.sum(t)?;
    let kl = g.scale(s, -0.5 / n)?;

    let total = g.add(recon, kl)?;
    Ok(ElboVars { total, recon, kl })
}

/// [`elbo_loss`] evaluated on plain tensors.
pub fn elbo_breakdown(x: &Tensor, x_recon: &Tensor, mu: &Tensor, logvar: &Tensor) -> Result<ElboBreakdown> {
    let mut g = Graph::inference();
    let vars = [x, x_recon, mu, logvar].map(|t| g.constant(t.clone()));
    let [x, r, m, l] = vars;
    let e = elbo_loss(&mut g, x?, r?, m?, l?)?;
    Ok(ElboBreakdown {
        total: g.value(e.total).item()?,
        recon: g.value(e.recon).item()?,
        kl: g.value(e.kl).item()?,
    })
}

/// Posterior mean and log-variance of each row of `x` (`n × d`).
pub fn vae_encode(model: &VaeModel, x: &Tensor) -> Result<(Tensor, Tensor)> {
    model.check_width(x, model.config.input_dim, "input")?;
    let mut g = Graph::inference();
    let p = model.params.bind(&mut g)?;
    let xv = g.constant(x.clone())?;
    let (mu, logvar) = model.encode_graph(&mut g, &p, xv)?;
    Ok((g.value(mu).clone(), g.value(logvar).clone()))
}

/// Decodes each row of `z` (`n × k`).
pub fn vae_decode(model: &VaeModel, z: &Tensor) -> Result<Tensor> {
    model.check_width(z, model.config.latent_dim, "latent")?;
    let mut g = Graph::inference();
    let p = model.params.bind(&mut g)?;
    let zv = g.constant(z.clone())?;
    let out = model.decode_graph(&mut g, &p, zv)?;
    Ok(g.value(out).clone())
}

/// Minibatch Adam on the negative ELBO. Returns the mean total loss of each
/// epoch.
pub fn vae_train(model: &mut VaeModel, train: &Dataset, config: &TrainConfig) -> Result<Vec<f64>> {
    if train.d() != model.config.input_dim {
        return Err(Error::shape(
            "vae_train",
            format!("model expects {} features, data has {}", model.config.input_dim, train.d()),
        ));
    }
    let structure = model.clone();
    fit(&mut model.params, train.n(), config, |g, p, idx| {
        let x = g.constant(train.batch(idx))?;
        let mut rng = ChaCha8Rng::seed_from_u64(g.rng().random());
        Ok(structure.loss_graph(g, p, x, &mut rng)?.total)
    })
}

/// Encoder means of every record, labels carried through.
pub fn vae_project(model: &VaeModel, dataset: &Dataset) -> Result<LatentDataset> {
    if dataset.d() != model.config.input_dim {
        return Err(Error::shape(
            "vae_project",
            format!("model expects {} features, data has {}", model.config.input_dim, dataset.d()),
        ));
    }
    let k = model.config.latent_dim;
    let mut latent = Vec::with_capacity(dataset.n() * k);
    let all: Vec<usize> = (0..dataset.n()).collect();
    for chunk in all.chunks(PROJECT_CHUNK) {
        let (mu, _) = vae_encode(model, &dataset.batch(chunk))?;
        latent.extend_from_slice(mu.data());
    }
    Dataset::latent(latent, k, dataset.labels().to_vec(), dataset.label_map().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_heads(model: &mut VaeModel) {
        for name in ["enc.mu.w", "enc.mu.b", "enc.logvar.w", "enc.logvar.b"] {
            model.params.by_name_mut(name).unwrap().data_mut().fill(0.0);
        }
    }

    #[test]
    fn head_widths() {
        let m = vae_init(115, 10, &[64, 32], 1).unwrap();
        assert_eq!(m.params.by_name("enc.mu.w").unwrap().shape(), &[32, 10]);
        assert_eq!(m.params.by_name("enc.logvar.w").unwrap().shape(), &[32, 10]);
        assert_eq!(m.params.by_name("dec.out.w").unwrap().shape(), &[64, 115]);
    }

    #[test]
    fn latent_must_be_smaller_than_input() {
        assert!(vae_init(4, 4, &[8], 0).is_err());
        assert!(vae_init(4, 0, &[8], 0).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        assert_eq!(vae_init(20, 3, &[8, 4], 7).unwrap(), vae_init(20, 3, &[8, 4], 7).unwrap());
        assert_ne!(vae_init(20, 3, &[8, 4], 7).unwrap(), vae_init(20, 3, &[8, 4], 8).unwrap());
    }

    #[test]
    fn zero_heads_give_standard_posterior() {
        let mut m = vae_init(6, 2, &[5], 3).unwrap();
        zero_heads(&mut m);
        let x = Tensor::new(vec![2, 6], (0..12).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let (mu, logvar) = vae_encode(&m, &x).unwrap();
        assert!(mu.data().iter().chain(logvar.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_output_layer_decodes_to_zero() {
        let mut m = vae_init(6, 2, &[5], 3).unwrap();
        m.params.by_name_mut("dec.out.w").unwrap().data_mut().fill(0.0);
        let z = Tensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 0.1, -0.3, 0.9]).unwrap();
        let out = vae_decode(&m, &z).unwrap();
        assert_eq!(out.shape(), &[3, 6]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let m = vae_init(6, 2, &[5], 3).unwrap();
        assert!(vae_encode(&m, &Tensor::zeros(&[1, 5])).is_err());
        assert!(vae_decode(&m, &Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn kl_cases() {
        let x = Tensor::zeros(&[1, 3]);
        let zero = Tensor::zeros(&[1, 1]);
        let b = elbo_breakdown(&x, &x, &zero, &zero).unwrap();
        assert_eq!((b.kl, b.recon, b.total), (0.0, 0.0, 0.0));
        let one = Tensor::filled(&[1, 1], 1.0);
        let b = elbo_breakdown(&x, &x, &one, &zero).unwrap();
        assert!((b.kl - 0.5).abs() < 1e-15);
        assert_eq!(b.total, b.kl);
    }

    #[test]
    fn vanishing_variance_returns_mean() {
        let mut g = Graph::inference();
        let mu = g.constant(Tensor::new(vec![1, 3], vec![0.25, -4.0, 9.5]).unwrap()).unwrap();
        let lv = g.constant(Tensor::filled(&[1, 3], -50.0)).unwrap();
        let z = reparameterize(&mut g, mu, lv, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (a, b) in g.value(z).data().iter().zip(g.value(mu).data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn epochs_zero_rejected() {
        let mut m = vae_init(4, 2, &[3], 0).unwrap();
        let ds = crate::dataprep::gen_synthetic(&crate::dataprep::SynthSpec::new(2, 4, 3, 1.0, 0)).unwrap();
        let cfg = TrainConfig { epochs: 0, batch: 4, lr: 1e-3, seed: 0 };
        assert!(vae_train(&mut m, &ds, &cfg).is_err());
    }
}
