use proptest::prelude::*;
use todyformer::config::{RunConfig, Task};
use todyformer::encoder::EncoderConfig;
use todyformer::graph::{EventGraph, Part, RawEdge, NO_LABEL};
use todyformer::synth::{generate, Pattern, SynthConfig};
use todyformer::trainer::{eval_batches, evaluate, read_metrics_csv, train, train_batches, Artifacts, Dataset, Model};
use todyformer::Error;

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        hidden: 8,
        blocks: 2,
        mpnn_layers: 2,
        attn_layers: 1,
        heads: 2,
        time_dim: 4,
        fanouts: vec![4, 2],
        ..EncoderConfig::default()
    }
}

fn tiny_config(task: Task) -> RunConfig {
    let mut cfg = RunConfig::new("unused.csv", task);
    cfg.encoder = tiny_encoder();
    cfg.window = 40;
    cfg.patches = 4;
    cfg.batch_size = 25;
    cfg.epochs = 2;
    cfg.lr = 1e-3;
    cfg.precision = todyformer::config::Precision::F64;
    cfg
}

fn periodic(labels: bool) -> Dataset {
    let mut s = SynthConfig::new(Pattern::Periodic, 12, 300, 3);
    s.labels = labels;
    Dataset::from_graph(generate(&s).unwrap(), "periodic")
}

fn random_stream(e: usize, n: u64, seed: u64) -> Dataset {
    let mut state = seed | 1;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let rows = (0..e)
        .map(|i| {
            let src = next() % n;
            let dst = (src + 1 + next() % (n - 1)) % n;
            RawEdge { src, dst, t: i as f64, label: NO_LABEL, feat: vec![] }
        })
        .collect();
    Dataset::from_graph(EventGraph::from_raw(rows, false).unwrap(), "random")
}

#[test]
fn same_seed_same_history() {
    let data = periodic(false);
    let cfg = tiny_config(Task::Flp);
    let (m1, r1) = train::<f64>(&cfg, &data, None).unwrap();
    let (m2, r2) = train::<f64>(&cfg, &data, None).unwrap();
    assert_eq!(r1.losses, r2.losses);
    assert_eq!(r1.rows, r2.rows);
    assert_eq!(m1.store.entries(), m2.store.entries());
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(train::<f64>(&other, &data, None).unwrap().1.losses, r1.losses);
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let data = periodic(false);
    let mut cfg = tiny_config(Task::Flp);
    cfg.lr = 0.0;
    cfg.epochs = 3;
    let (trained, report) = train::<f64>(&cfg, &data, None).unwrap();
    let init = Model::<f64>::new(&cfg, &data.graph).unwrap();
    assert_eq!(trained.store.entries(), init.store.entries());
    assert_eq!(report.losses.len(), 3);
}

#[test]
fn training_reduces_the_loss() {
    let data = periodic(false);
    let mut cfg = tiny_config(Task::Flp);
    cfg.epochs = 6;
    let (_, r) = train::<f64>(&cfg, &data, None).unwrap();
    assert!(r.losses.last().unwrap() < &r.losses[0], "{:?}", r.losses);
}

#[test]
fn untrained_model_scores_near_one_half() {
    let data = random_stream(600, 40, 9);
    let aps: Vec<f64> = (0..5)
        .map(|seed| {
            let mut cfg = tiny_config(Task::Flp);
            cfg.seed = seed;
            cfg.eval_negatives = 3;
            let model = Model::<f64>::new(&cfg, &data.graph).unwrap();
            let m = evaluate(&model, &cfg, &data, Part::Test).unwrap();
            // With three negatives per positive chance AP is 0.25; AUC stays at one half.
            m["auc"]
        })
        .collect();
    let mean = aps.iter().sum::<f64>() / aps.len() as f64;
    assert!((mean - 0.5).abs() < 0.05, "{aps:?}");
}

#[test]
fn untrained_ap_on_balanced_pairs() {
    let data = random_stream(600, 40, 10);
    let aps: Vec<f64> = (0..5)
        .map(|seed| {
            let mut cfg = tiny_config(Task::Flp);
            cfg.seed = seed;
            let model = Model::<f64>::new(&cfg, &data.graph).unwrap();
            evaluate(&model, &cfg, &data, Part::Val).unwrap()["ap"]
        })
        .collect();
    let mean = aps.iter().sum::<f64>() / aps.len() as f64;
    assert!((mean - 0.5).abs() < 0.05, "{aps:?}");
}

#[test]
fn checkpoint_roundtrip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let art = Artifacts { dir: dir.path().join("run") };
    let data = periodic(false);
    let cfg = tiny_config(Task::Flp);
    let (model, report) = train::<f64>(&cfg, &data, Some(&art)).unwrap();
    let before = evaluate(&model, &cfg, &data, Part::Test).unwrap();
    let (loaded, meta) = Model::<f64>::load(&cfg, &data.graph, &art.checkpoint()).unwrap();
    assert_eq!(loaded.store.entries(), model.store.entries());
    assert_eq!(evaluate(&loaded, &cfg, &data, Part::Test).unwrap(), before);
    assert_eq!(before, report.test);
    assert_eq!(meta["epoch"].as_u64().unwrap() as usize, report.best_epoch);
    // Validation reproduces the logged value.
    let val = evaluate(&loaded, &cfg, &data, Part::Val).unwrap();
    assert!((val["ap"] - report.best_val).abs() < 1e-9);
    let logged = read_metrics_csv(&art.metrics()).unwrap();
    let row = logged
        .iter()
        .find(|r| r.split == "val" && r.metric == "ap" && r.epoch == report.best_epoch)
        .unwrap();
    assert!((row.value - val["ap"]).abs() < 1e-9);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(art.manifest()).unwrap()).unwrap();
    assert_eq!(manifest["dataset_hash"], "periodic");
    assert_eq!(manifest["config"], cfg.to_json());
}

#[test]
fn f32_checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let art = Artifacts { dir: dir.path().to_path_buf() };
    let data = periodic(false);
    let mut cfg = tiny_config(Task::Flp);
    cfg.precision = todyformer::config::Precision::F32;
    cfg.epochs = 1;
    let (model, _) = train::<f32>(&cfg, &data, Some(&art)).unwrap();
    let (loaded, _) = Model::<f32>::load(&cfg, &data.graph, &art.checkpoint()).unwrap();
    assert_eq!(
        evaluate(&loaded, &cfg, &data, Part::Val).unwrap(),
        evaluate(&model, &cfg, &data, Part::Val).unwrap()
    );
}

#[test]
fn mismatched_checkpoint_is_a_version_error() {
    let dir = tempfile::tempdir().unwrap();
    let art = Artifacts { dir: dir.path().to_path_buf() };
    let data = periodic(false);
    let mut cfg = tiny_config(Task::Flp);
    cfg.epochs = 1;
    train::<f64>(&cfg, &data, Some(&art)).unwrap();
    let mut wider = cfg.clone();
    wider.encoder.hidden = 12;
    let err = Model::<f64>::load(&wider, &data.graph, &art.checkpoint()).unwrap_err();
    assert!(matches!(err, Error::Version(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn divergence_is_a_numeric_error() {
    let data = periodic(false);
    let mut cfg = tiny_config(Task::Flp);
    cfg.precision = todyformer::config::Precision::F32;
    cfg.lr = 1e37;
    cfg.epochs = 3;
    let err = train::<f32>(&cfg, &data, None).map(|_| ()).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
    let msg = err.to_string();
    assert!(msg.contains("epoch") && msg.contains("batch"), "{msg}");
}

#[test]
fn node_classification_freezes_the_encoder() {
    let data = periodic(true);
    let mut dnc = tiny_config(Task::Dnc);
    dnc.pretrain_epochs = Some(2);
    dnc.epochs = 3;
    let (dm, dr) = train::<f64>(&dnc, &data, None).unwrap();
    let mut flp = tiny_config(Task::Flp);
    flp.epochs = 2;
    let (fm, _) = train::<f64>(&flp, &data, None).unwrap();
    let shared = fm.store.len();
    assert_eq!(&dm.store.entries()[..shared], &fm.store.entries()[..]);
    assert!(dm.store.len() > shared);
    assert!(dr.test.contains_key("auc") && dr.test.contains_key("accuracy"));
    assert!(dr.rows.iter().any(|r| r.task == "dnc" && r.split == "test"));
}

#[test]
fn node_classification_needs_labels() {
    let data = periodic(false);
    let err = train::<f64>(&tiny_config(Task::Dnc), &data, None).map(|_| ()).unwrap_err();
    assert!(matches!(err, Error::TaskData(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn inductive_runs_complete() {
    let data = random_stream(500, 30, 4);
    let mut cfg = tiny_config(Task::Flp);
    cfg.split = todyformer::graph::SplitMode::Inductive;
    cfg.epochs = 1;
    let (_, r) = train::<f64>(&cfg, &data, None).unwrap();
    assert!(r.test["ap"].is_finite());
}

#[test]
fn zero_epochs_evaluates_the_initial_model() {
    let data = periodic(false);
    let mut cfg = tiny_config(Task::Flp);
    cfg.epochs = 0;
    let (_, r) = train::<f64>(&cfg, &data, None).unwrap();
    assert_eq!(r.best_epoch, 0);
    assert!(r.losses.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn training_batches_partition_and_never_leak(n in 1usize..500, b in 1usize..64, w in 1usize..40) {
        let batches = train_batches(n, b, w);
        let mut seen: Vec<usize> = Vec::new();
        for batch in &batches {
            prop_assert!(batch.window_end >= w.max(1));
            prop_assert!(batch.edges.iter().all(|&i| i >= batch.window_end && i < n));
            prop_assert!(batch.edges.len() <= b);
            seen.extend(&batch.edges);
        }
        let first = seen.first().copied().unwrap_or(n);
        prop_assert_eq!(seen, (first..n).collect::<Vec<_>>());
    }

    #[test]
    fn evaluation_batches_cover_the_split(lo in 0usize..200, len in 1usize..300, b in 1usize..64, skip in 1usize..5) {
        let edges: Vec<usize> = (lo..lo + len).filter(|i| i % skip != 1).collect();
        prop_assume!(!edges.is_empty());
        let batches = eval_batches(&edges, b);
        let mut seen: Vec<usize> = Vec::new();
        for batch in &batches {
            prop_assert!(batch.edges.iter().all(|&i| i >= batch.window_end));
            prop_assert!(batch.window_end > 0);
            prop_assert_eq!(batch.window_end, batch.edges[0]);
            seen.extend(&batch.edges);
        }
        // Edge 0 has no history and is the only edge left out.
        let scorable: Vec<usize> = edges.iter().copied().filter(|&i| i > 0).collect();
        prop_assert_eq!(seen, scorable);
    }
}
