//! Oracles and fixtures shared by the integration tests and the acceptance
//! runner. Everything here is written independently of the library's own
//! implementations.

#![allow(dead_code)]

use latentbench::classifiers::{ClassifierConfig, ClassifierKind, ClassifierModel};
use latentbench::dataprep::{Dataset, ImageLayout, LabelMap};
use latentbench::numcore::{grad_check, Bound, Graph, Tensor, Var};
use latentbench::vae::VaeModel;
use latentbench::vit::{VitConfig, VitModel};
use latentbench::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Textbook triple loop.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

/// One Adam update written out for a single scalar.
pub fn scalar_adam(w: f64, grads: &[f64], lr: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (w, 0.0, 0.0);
    for (t, g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
    }
    w
}

/// Accuracy (percent), then macro precision, recall and F1 over the classes
/// present in `y_true`, computed by counting per class.
pub fn brute_metrics(y_true: &[usize], y_pred: &[usize], c: usize) -> [f64; 4] {
    let n = y_true.len() as f64;
    let correct = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count() as f64;
    let (mut prc, mut rec, mut f1, mut present) = (0.0, 0.0, 0.0, 0.0);
    for class in 0..c {
        if !y_true.contains(&class) {
            continue;
        }
        present += 1.0;
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t == class, p == class) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fneg += 1.0,
                _ => {}
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        prc += p;
        rec += r;
        f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    [100.0 * correct / n, prc / present, rec / present, f1 / present]
}

/// `KL(N(mu, e^logvar) || N(0, 1))` by composite Simpson integration of
/// `q log(q / p)` over `mu ± 14σ`.
pub fn kl_quadrature(mu: f64, logvar: f64) -> f64 {
    let sd = (0.5 * logvar).exp();
    let (lo, hi) = (mu - 14.0 * sd, mu + 14.0 * sd);
    let steps = 40_000;
    let h = (hi - lo) / steps as f64;
    let log_q = |x: f64| -0.5 * ((x - mu) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let log_p = |x: f64| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let f = |x: f64| log_q(x).exp() * (log_q(x) - log_p(x));
    let mut s = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// Test accuracy (percent) of assigning each test row to the nearest train
/// class mean.
pub fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let (c, d) = (train.num_classes(), train.d());
    let mut means = vec![vec![0.0; d]; c];
    let mut counts = vec![0.0f64; c];
    for i in 0..train.n() {
        let l = train.labels()[i];
        counts[l] += 1.0;
        for (m, v) in means[l].iter_mut().zip(train.row(i)) {
            *m += v;
        }
    }
    for (m, n) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= n.max(1.0));
    }
    let mut correct = 0;
    for i in 0..test.n() {
        let row = test.row(i);
        let dist = |m: &Vec<f64>| m.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let best = (0..c)
            .filter(|&k| counts[k] > 0.0)
            .min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b])))
            .unwrap();
        correct += usize::from(best == test.labels()[i]);
    }
    100.0 * correct as f64 / test.n() as f64
}

/// Mean silhouette coefficient with Euclidean distance.
pub fn silhouette(ds: &Dataset) -> f64 {
    let n = ds.n();
    let c = ds.num_classes();
    let dist = |i: usize, j: usize| {
        ds.row(i)
            .iter()
            .zip(ds.row(j))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; c];
        let mut counts = vec![0usize; c];
        for j in 0..n {
            if i != j {
                sums[ds.labels()[j]] += dist(i, j);
                counts[ds.labels()[j]] += 1;
            }
        }
        let own = ds.labels()[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..c)
            .filter(|&k| k != own && counts[k] > 0)
            .map(|k| sums[k] / counts[k] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// `per_class` rows per class around well separated means in `d` dims.
pub fn blobs(c: usize, d: usize, per_class: usize, spread: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| r.random_range(-4.0..4.0)).collect())
        .collect();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..per_class {
        for (k, m) in centers.iter().enumerate() {
            features.extend(m.iter().map(|v| v + spread * r.random_range(-1.0..1.0)));
            labels.push(k);
        }
    }
    Dataset::new(
        features,
        (0..d).map(|i| format!("f{i}")).collect(),
        labels,
        LabelMap::numbered(c),
    )
    .unwrap()
}

/// `sum(y ⊙ w)` for a fixed pseudo-random `w`, so every output coordinate
/// carries a distinct weight in the gradient.
pub fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = uniform(&mut rng(seed), &g.shape(y).to_vec(), -1.0, 1.0);
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Model parameters moved off their initial values. Zero-initialized biases
/// put ReLU inputs exactly on the kink whenever a whole layer is inactive,
/// where the one-sided derivative and the central difference disagree.
pub fn jittered(params: &[Tensor], seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    params
        .iter()
        .map(|t| {
            let data = t.data().iter().map(|v| v + r.random_range(-0.3..0.3)).collect();
            Tensor::new(t.shape().to_vec(), data).unwrap()
        })
        .collect()
}

type OpFn = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// A named objective over freshly drawn inputs.
pub struct OpCase {
    pub name: &'static str,
    pub f: OpFn,
    pub inputs: Vec<Tensor>,
}

/// Every differentiable graph operation, instance `i`.
pub fn op_cases(i: u64) -> Vec<OpCase> {
    let mut r = rng(0x0a11 + i);
    let mut t = |shape: &[usize]| uniform(&mut r, shape, -2.0, 2.0);
    let (a23, b34, v3, m23b) = (t(&[2, 3]), t(&[3, 4]), t(&[3]), t(&[2, 3]));
    let (ba, bb, bt) = (t(&[3, 2, 4]), t(&[3, 4, 5]), t(&[3, 5, 4]));
    let x234 = t(&[2, 3, 4]);
    let pos = uniform(&mut rng(0x1065 + i), &[2, 3], 0.3, 3.0);
    let s = 0xfeed + i;
    let case = |name: &'static str, f: OpFn, inputs: Vec<Tensor>| OpCase { name, f, inputs };
    vec![
        case(
            "matmul",
            Box::new(move |g, v| {
                let y = g.matmul(v[0], v[1])?;
                weighted_sum(g, y, s)
            }),
            vec![a23.clone(), b34],
        ),
        case(
            "batch_matmul",
            Box::new(move |g, v| {
                let y = g.batch_matmul(v[0], v[1], false)?;
                weighted_sum(g, y, s)
            }),
            vec![ba.clone(), bb],
        ),
        case(
            "batch_matmul_transposed",
            Box::new(move |g, v| {
                let y = g.batch_matmul(v[0], v[1], true)?;
                weighted_sum(g, y, s)
            }),
            vec![ba, bt],
        ),
        case(
            "add_broadcast",
            Box::new(move |g, v| {
                let y = g.add(v[0], v[1])?;
                weighted_sum(g, y, s)
            }),
            vec![a23.clone(), v3.clone()],
        ),
        case(
            "sub_broadcast",
            Box::new(move |g, v| {
                let y = g.sub(v[0], v[1])?;
                weighted_sum(g, y, s)
            }),
            vec![a23.clone(), v3.clone()],
        ),
        case(
            "mul",
            Box::new(move |g, v| {
                let y = g.mul(v[0], v[1])?;
                weighted_sum(g, y, s)
            }),
            vec![a23.clone(), m23b.clone()],
        ),
        case(
            "mul_broadcast",
            Box::new(move |g, v| {
                let y = g.mul(v[0], v[1])?;
                weighted_sum(g, y, s)
            }),
            vec![a23.clone(), v3],
        ),
        case(
            "affine",
            Box::new(move |g, v| {
                let y = g.affine(v[0], -1.7, 0.4)?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y, s)
            }),
            vec![a23.clone()],
        ),
        case(
            "relu",
            Box::new(move |g, v| {
                let y = g.relu(v[0])?;
                weighted_sum(g, y, s)
            }),
            vec![a23.clone()],
        ),
        case(
            "tanh",
            Box::new(move |g, v| {
                let y = g.tanh(v[0])?;
                weighted_sum(g, y, s)
            }),
            vec![a23.clone()],
        ),
        case(
            "sigmoid",
            Box::new(move |g, v| {
                let y = g.sigmoid(v[0])?;
                weighted_sum(g, y, s)
            }),
            vec![a23.clone()],
        ),
        case(
            "exp",
            Box::new(move |g, v| {
                let y = g.exp(v[0])?;
                weighted_sum(g, y, s)
            }),
            vec![a23.clone()],
        ),
        case(
            "log",
            Box::new(move |g, v| {
                let y = g.log(v[0])?;
                weighted_sum(g, y, s)
            }),
            vec![pos],
        ),
        case(
            "softmax",
            Box::new(move |g, v| {
                let y = g.softmax(v[0], 1)?;
                weighted_sum(g, y, s)
            }),
            vec![x234.clone()],
        ),
        case(
            "layer_norm",
            Box::new(move |g, v| {
                let y = g.layer_norm(v[0], 2)?;
                weighted_sum(g, y, s)
            }),
            vec![x234.clone()],
        ),
        case(
            "reshape",
            Box::new(move |g, v| {
                let y = g.reshape(v[0], &[6, 4])?;
                let y = g.tanh(y)?;
                weighted_sum(g, y, s)
            }),
            vec![x234.clone()],
        ),
        case(
            "permute",
            Box::new(move |g, v| {
                let y = g.permute(v[0], &[2, 0, 1])?;
                let y = g.sigmoid(y)?;
                weighted_sum(g, y, s)
            }),
            vec![x234.clone()],
        ),
        case(
            "slice",
            Box::new(move |g, v| {
                let y = g.slice(v[0], 2, 1, 2)?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y, s)
            }),
            vec![x234.clone()],
        ),
        case(
            "concat",
            Box::new(move |g, v| {
                let y = g.concat(&[v[0], v[1], v[0]], 1)?;
                let y = g.tanh(y)?;
                weighted_sum(g, y, s)
            }),
            vec![a23.clone(), m23b],
        ),
        case(
            "sum",
            Box::new(move |g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.sum(sq)
            }),
            vec![a23.clone()],
        ),
        case(
            "mean",
            Box::new(move |g, v| {
                let sq = g.tanh(v[0])?;
                g.mean(sq)
            }),
            vec![x234.clone()],
        ),
        case(
            "sum_axis",
            Box::new(move |g, v| {
                let y = g.sum_axis(v[0], 1)?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y, s)
            }),
            vec![x234.clone()],
        ),
        case(
            "mean_axis",
            Box::new(move |g, v| {
                let y = g.mean_axis(v[0], 2)?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y, s)
            }),
            vec![x234.clone()],
        ),
        case(
            "dropout",
            Box::new(move |g, v| {
                let y = g.dropout(v[0], 0.4)?;
                weighted_sum(g, y, s)
            }),
            vec![x234],
        ),
        case(
            "softmax_cross_entropy",
            Box::new(move |g, v| g.softmax_cross_entropy(v[0], &[2, 0])),
            vec![a23],
        ),
    ]
}

pub fn toy_vae(seed: u64) -> VaeModel {
    latentbench::vae::vae_init(6, 2, &[5, 4], seed).unwrap()
}

/// Worst relative error of the full VAE objective's parameter gradient.
pub fn vae_grad_error(seed: u64) -> f64 {
    let model = toy_vae(seed);
    let x = uniform(&mut rng(seed ^ 0x5a5a), &[3, 6], -1.5, 1.5);
    let point = jittered(model.params().tensors(), seed ^ 0x7177);
    grad_check(
        |g, v| {
            let p = Bound::from_vars(v.to_vec());
            let x = g.constant(x.clone())?;
            let mut noise = rng(seed ^ 0xe95);
            Ok(model.loss_graph(g, &p, x, &mut noise)?.total)
        },
        &point,
        FD_STEP,
    )
    .unwrap()
}

pub fn toy_vit(seed: u64) -> VitModel {
    let layout = ImageLayout::for_dim(8).unwrap();
    let config = VitConfig {
        embed_dim: 4,
        num_heads: 2,
        depth: 2,
        mlp_hidden: 6,
        ..VitConfig::new(layout, 3, 3)
    };
    latentbench::vit::vit_init(config, seed).unwrap()
}

/// Worst relative error of a two-block ViT's cross-entropy gradient,
/// dropout active with a fixed mask.
pub fn vit_grad_error(seed: u64) -> f64 {
    let model = toy_vit(seed);
    let data = uniform(&mut rng(seed ^ 0x717), &[2, 8], -1.5, 1.5);
    let ds = Dataset::new(
        data.into_data(),
        (0..8).map(|i| format!("f{i}")).collect(),
        vec![1, 2],
        LabelMap::numbered(3),
    )
    .unwrap();
    let patches = model.patch_batch(&ds, &[0, 1]).unwrap();
    let point = jittered(model.params().tensors(), seed ^ 0x7177);
    grad_check(
        |g, v| {
            let p = Bound::from_vars(v.to_vec());
            let x = g.constant(patches.clone())?;
            let out = model.forward_graph(g, &p, x)?;
            g.softmax_cross_entropy(out.logits, &[1, 2])
        },
        &point,
        FD_STEP,
    )
    .unwrap()
}

pub fn toy_classifier(kind: ClassifierKind, seed: u64) -> ClassifierModel {
    let config = ClassifierConfig {
        widths: [3, 4, 4, 3],
        ..ClassifierConfig::new(kind, 4, 3)
    };
    latentbench::classifiers::build_classifier(config, seed).unwrap()
}

/// Worst relative error of a classifier stack's cross-entropy gradient.
pub fn classifier_grad_error(kind: ClassifierKind, seed: u64) -> f64 {
    let model = toy_classifier(kind, seed);
    let z = uniform(&mut rng(seed ^ 0xc1a), &[3, 4], -1.5, 1.5);
    let point = jittered(model.params().tensors(), seed ^ 0x7177);
    grad_check(
        |g, v| {
            let p = Bound::from_vars(v.to_vec());
            let x = g.constant(z.clone())?;
            let logits = model.logits_graph(g, &p, x)?;
            g.softmax_cross_entropy(logits, &[0, 2, 1])
        },
        &point,
        FD_STEP,
    )
    .unwrap()
}
