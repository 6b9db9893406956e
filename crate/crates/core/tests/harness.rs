use std::path::Path;
use std::process::Command;

use latentbench::classifiers::ClassifierKind;
use latentbench::dataprep::load_processed;
use latentbench::harness::{
    checkpoint_bytes, checkpoint_from_bytes, emit_table, encoder_seed, load_checkpoint, parse_results_csv,
    prepare_data, run_grid, save_checkpoint, train_classifier, train_encoder, AnyModel, CellRecord, EncoderKind,
    ExperimentConfig, TableFormat,
};

const SMALL: &str = "
synth.classes = 3
synth.dim = 12
synth.per_class = 30
synth.separation = 8
synth.rank = 4
grid.latent_dims = 2,3
vae.epochs = 3
vae.batch = 32
vit.epochs = 2
vit.batch = 32
vit.embed_dim = 8
vit.heads = 2
vit.depth = 1
vit.mlp_hidden = 8
classifier.epochs = 2
classifier.batch = 32
classifier.widths = 8,8,6,4
";

fn small(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_text(SMALL).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn bin(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_latentbench")).args(args).output().unwrap();
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn grid_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let table = run_grid(&cfg).unwrap();
    assert_eq!(table.cells.len(), 2 * 2 * 5);
    assert!(table.cells.iter().all(|c| c.metrics.is_some()));

    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(parse_results_csv(&csv).unwrap(), table.at_printed_precision());
    let md = std::fs::read_to_string(dir.path().join("results.md")).unwrap();
    assert_eq!(md, emit_table(&table, TableFormat::Markdown).unwrap());
    let saved = ExperimentConfig::load(dir.path().join("config.txt")).unwrap();
    assert_eq!(saved, cfg);

    for c in &table.cells {
        let stem = format!(
            "{}-{}-{}",
            c.encoder.name().to_ascii_lowercase(),
            c.dim,
            c.classifier.name().to_ascii_lowercase()
        );
        let text = std::fs::read_to_string(dir.path().join(format!("cell-{stem}.json"))).unwrap();
        let rec: CellRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(rec.status, "ok");
        assert_eq!(rec.projection_sha256, c.projection_sha256);
        let q = c.metrics.unwrap();
        assert_eq!((rec.acc, rec.prc, rec.rec, rec.f1), (Some(q.acc), Some(q.prc), Some(q.rec), Some(q.f1)));
        assert!(dir.path().join(format!("clf-{stem}.lbck")).exists());
    }
}

#[test]
fn classifiers_of_a_group_share_one_projection() {
    let dir = tempfile::tempdir().unwrap();
    let table = run_grid(&small(dir.path())).unwrap();
    for e in EncoderKind::ALL {
        for d in [2, 3] {
            let hashes: Vec<&str> = ClassifierKind::ALL
                .iter()
                .map(|&k| table.get(e, d, k).unwrap().projection_sha256.as_str())
                .collect();
            assert_eq!(hashes[0].len(), 64);
            assert!(hashes.iter().all(|h| *h == hashes[0]), "{e} {d}");
        }
    }
    let (a, b) = (
        &table.get(EncoderKind::Vae, 2, ClassifierKind::Dnn).unwrap().projection_sha256,
        &table.get(EncoderKind::Vit, 2, ClassifierKind::Dnn).unwrap().projection_sha256,
    );
    assert_ne!(a, b);
}

#[test]
fn a_failing_cell_leaves_the_others_untouched() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let clean = run_grid(&small(d1.path())).unwrap();
    let mut cfg = small(d2.path());
    cfg.set("classifier.gru.lr", "1e300").unwrap();
    let broken = run_grid(&cfg).unwrap();
    for (a, b) in clean.cells.iter().zip(&broken.cells) {
        if b.classifier == ClassifierKind::Gru {
            assert!(b.metrics.is_none());
            assert!(b.error.as_deref().unwrap_or("").contains("non-finite"), "{:?}", b.error);
        } else {
            assert_eq!(a, b);
        }
    }
    let md = emit_table(&broken, TableFormat::Markdown).unwrap();
    assert!(md.contains("| GRU | failed |"));
}

#[test]
fn worker_count_does_not_change_results() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_grid(&small(d1.path())).unwrap();
    let mut cfg = small(d2.path());
    cfg.workers = 3;
    run_grid(&cfg).unwrap();
    let read = |d: &Path| std::fs::read(d.join("results.csv")).unwrap();
    assert_eq!(read(d1.path()), read(d2.path()));
}

#[test]
fn checkpoints_reproduce_outputs_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let data = prepare_data(&cfg).unwrap();
    for kind in EncoderKind::ALL {
        let seed = encoder_seed(0, kind, 3, 0);
        let (enc, _) = train_encoder(&cfg, kind, 3, &data.train, data.layout, seed).unwrap();
        let z = enc.project(&data.test).unwrap();
        let path = dir.path().join(format!("{kind}.lbck"));
        save_checkpoint(&enc.clone().into_any(), seed, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.seed, seed);
        let z2 = match back.model {
            AnyModel::Vae(m) => latentbench::vae::vae_project(&m, &data.test).unwrap(),
            AnyModel::Vit(m) => latentbench::vit::vit_project(&m, &data.test).unwrap(),
            AnyModel::Classifier(_) => panic!("wrong family"),
        };
        assert_eq!(z.features(), z2.features());

        let ztrain = enc.project(&data.train).unwrap();
        for k in ClassifierKind::ALL {
            let (m, _) = train_classifier(&cfg, k, &ztrain, 7).unwrap();
            let bytes = checkpoint_bytes(&m.clone().into(), 7);
            let AnyModel::Classifier(m2) = checkpoint_from_bytes(&bytes).unwrap().model else {
                panic!("wrong family")
            };
            let (p1, p2) = (
                latentbench::classifiers::classifier_predict(&m, &z).unwrap(),
                latentbench::classifiers::classifier_predict(&m2, &z).unwrap(),
            );
            assert_eq!(p1, p2);
        }
    }
}

#[test]
fn command_line_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).display().to_string();
    let cfg_path = p("small.cfg");
    std::fs::write(&cfg_path, SMALL).unwrap();
    let base = ["--config", cfg_path.as_str(), "--out"];
    let run = |extra: &[&str]| {
        let out = p("out");
        let mut args: Vec<&str> = base.to_vec();
        args.push(&out);
        args.extend_from_slice(extra);
        let r = bin(&args);
        assert!(r.0, "{extra:?} failed: {}", r.2);
        r.1
    };

    let csv = p("synth.csv");
    run(&["gen-synth", "--classes", "3", "--dim", "12", "--per-class", "20", "--output", &csv]);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("f0,"));

    let stdout = run(&["preprocess", "--input", &csv]);
    assert!(stdout.contains("12 features -> 3x4 image"), "{stdout}");
    let train = load_processed(p("out/train.lbds")).unwrap();
    assert!(train.scaler.is_some());
    assert_eq!(train.dataset.n() + load_processed(p("out/test.lbds")).unwrap().dataset.n(), 60);

    let (train_f, test_f) = (p("out/train.lbds"), p("out/test.lbds"));
    for enc in ["vae", "vit"] {
        let ck = p(&format!("{enc}.lbck"));
        run(&["train-encoder", "--encoder", enc, "--latent-dim", "2", "--train", &train_f, "--output", &ck]);
        let (ztr, zte) = (p(&format!("{enc}-train.lbds")), p(&format!("{enc}-test.lbds")));
        run(&["project", "--checkpoint", &ck, "--data", &train_f, "--output", &ztr]);
        run(&["project", "--checkpoint", &ck, "--data", &test_f, "--output", &zte]);
        assert_eq!(load_processed(&zte).unwrap().dataset.d(), 2);
        let clf = p(&format!("{enc}-gru.lbck"));
        run(&["train-classifier", "--model", "gru", "--train", &ztr, "--output", &clf]);
        let line = run(&["evaluate", "--checkpoint", &clf, "--data", &zte]);
        assert!(line.starts_with("GRU\tAcc "), "{line}");
        // An encoder checkpoint is not a classifier.
        let bad = bin(&["evaluate", "--checkpoint", &ck, "--data", &zte]);
        assert!(!bad.0);
    }

    let md = run(&["--set", "grid.encoders=vae", "--set", "grid.classifiers=dnn,srnn", "grid"]);
    assert!(md.contains("### CLASSIFIER PERFORMANCE ON SYNTHETIC-VAE-ENCODED LATENT SPACE VECTORS"));
    let emitted = run(&["emit", "--results", &p("out/results.csv"), "--format", "csv"]);
    assert_eq!(emitted, std::fs::read_to_string(p("out/results.csv")).unwrap());
    let emitted_md = run(&["emit", "--results", &p("out/results.csv")]);
    assert_eq!(emitted_md, md);
}

#[test]
fn command_line_errors() {
    let (ok, _, err) = bin(&["grid", "--set", "grid.latent_dims=2,200"]);
    assert!(!ok);
    assert!(err.contains("latent dim 200"), "{err}");
    let (ok, _, err) = bin(&["train-encoder", "--encoder", "pca", "--latent-dim", "2", "--train", "x"]);
    assert!(!ok);
    assert!(err.contains("pca"), "{err}");
    let (ok, _, err) = bin(&["evaluate", "--checkpoint", "/nonexistent/c.lbck", "--data", "/nonexistent/d"]);
    assert!(!ok);
    assert!(err.contains("/nonexistent/c.lbck"), "{err}");
    let (ok, _, err) = bin(&["grid", "--repeats", "0"]);
    assert!(!ok);
    assert!(err.contains("repeats"), "{err}");
    let (ok, out, _) = bin(&["--help"]);
    assert!(ok);
    for sub in ["preprocess", "gen-synth", "train-encoder", "project", "train-classifier", "evaluate", "grid", "emit"] {
        assert!(out.contains(sub), "{sub}");
    }
}
