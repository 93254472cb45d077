//! The staged commands chained through files, as a user would run them.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use xampler::corpus::{load_candidates, save_dataset};
use xampler::dataconstruct::load_pairs;
use xampler::embedding::save_embeddings;
use xampler::synthetic::{generate, shuffled_rows, SyntheticSpec};
use xampler::trainer::load_head;

fn xampler(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xampler")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = xampler(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    evals: Vec<PathBuf>,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let spec = SyntheticSpec {
            train_size: 40,
            eval_per_language: 14,
            ..SyntheticSpec::default()
        };
        let d = generate(&spec, 9).unwrap();
        save_dataset(&d.train, root.join("train.jsonl")).unwrap();
        let evals: Vec<PathBuf> = d
            .eval_sets
            .iter()
            .enumerate()
            .map(|(i, ds)| {
                let p = root.join(format!("eval{i}.jsonl"));
                save_dataset(ds, &p).unwrap();
                p
            })
            .collect();
        save_embeddings(&d.base, root.join("base.xemb")).unwrap();
        save_embeddings(&d.mining, root.join("mining.xemb")).unwrap();
        save_embeddings(&shuffled_rows(&d.base, 9, 4).unwrap(), root.join("layer4.xemb")).unwrap();
        Workspace { _dir: dir, root, evals }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn eval_args(&self) -> Vec<String> {
        self.evals.iter().flat_map(|p| ["--eval".to_string(), s(p).to_string()]).collect()
    }
}

#[test]
fn staged_pipeline() {
    let w = Workspace::new();
    let (train, base, mining) = (w.path("train.jsonl"), w.path("base.xemb"), w.path("mining.xemb"));
    let (cands, pairs, head) = (w.path("cands.jsonl"), w.path("pairs.jsonl"), w.path("head.bin"));

    let msg = ok(&["mine", "--train", s(&train), "--mining-embeddings", s(&mining), "--k", "4", "--candidates", s(&cands)]);
    assert!(msg.contains("mined 40 candidate sets (k=4)"), "{msg}");
    assert_eq!(load_candidates(&cands).unwrap().len(), 40);

    let msg = ok(&["construct", "--train", s(&train), "--candidates", s(&cands), "--pairs", s(&pairs)]);
    assert!(msg.contains("constructed 160 pairs") && msg.contains("160 scorer calls"), "{msg}");
    assert_eq!(load_pairs(&pairs).unwrap().len(), 160);

    let msg = ok(&[
        "train", "--pairs", s(&pairs), "--embeddings", s(&base), "--epochs", "3", "--lr", "0.005", "--seed", "2",
        "--head", s(&head),
    ]);
    assert!(msg.starts_with("trained 3 epochs"), "{msg}");
    let (h, meta) = load_head(&head).unwrap();
    assert_eq!((h.d_in(), meta.epoch, meta.seed), (32, 3, 2));

    let report_path = w.path("report.csv");
    let mut eval = vec![
        "eval-icl", "--train", s(&train), "--embeddings", s(&base), "--head", s(&head), "--shots", "3", "--report",
        s(&report_path),
    ];
    let eval_args = w.eval_args();
    eval.extend(eval_args.iter().map(String::as_str));
    let table = ok(&eval);
    assert!(table.starts_with("language,xampler\n"), "{table}");
    assert!(table.lines().any(|l| l.starts_with("Avg")), "{table}");
    let report = std::fs::read_to_string(&report_path).unwrap();
    assert!(report.contains("effective config:"), "{report}");

    eval[0] = "eval-knn";
    let report = ok(&eval);
    assert!(report.lines().any(|l| l.starts_with("Avg")), "{report}");

    let shots = w.path("shots.jsonl");
    let mut retrieve = vec!["retrieve", "--train", s(&train), "--embeddings", s(&base), "--shots", "2", "--out", s(&shots)];
    retrieve.extend(eval_args.iter().map(String::as_str));
    ok(&retrieve);
    let lines = std::fs::read_to_string(&shots).unwrap();
    assert_eq!(lines.lines().count(), 3 * 14);
}

#[test]
fn layer_sweep_picks_informative_layer() {
    let w = Workspace::new();
    let (train, l0, l4) = (w.path("train.jsonl"), w.path("base.xemb"), w.path("layer4.xemb"));
    let mut args = vec![
        "sweep-layers", "--train", s(&train), "--layer-embeddings", s(&l4), "--layer-embeddings", s(&l0), "--shots", "5",
    ];
    let eval_args = w.eval_args();
    args.extend(eval_args.iter().map(String::as_str));
    let out = ok(&args);
    assert!(out.contains("# best layer: 0"), "{out}");
}

#[test]
fn missing_inputs_exit_with_usage_error() {
    let out = xampler(&["mine", "--k", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.train"));

    let out = xampler(&["train", "--set", "trainer.bogus=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}
