use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qfcl::checkpoint::Checkpoint;
use qfcl::manifest::RunManifest;

const TINY: &str = "epochs = 2
d_model = 16
n_heads = 2
n_enc_layers = 1
n_dec_layers = 1
d_ff = 32
batch_size = 8
queue_size = 32
n_h = 2
learning_rate = 0.001
pair_count = 40
analysis_n_h = 2
";

fn qfcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfcl")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = qfcl(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    cfg: PathBuf,
    train: PathBuf,
    dev: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cfg = root.join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let train = root.join("train.jsonl");
    let dev = root.join("dev.jsonl");
    ok(&["gen-corpus", "--config", p(&cfg), "--seed", "1", "--out", p(&train)]);
    ok(&["gen-corpus", "--config", p(&cfg), "--seed", "2", "--out", p(&dev)]);
    Fixture {
        _dir: dir,
        root,
        cfg,
        train,
        dev,
    }
}

fn train(f: &Fixture, name: &str, extra: &[&str]) -> PathBuf {
    let out = f.root.join(name);
    let mut args = vec![
        "train",
        "--config",
        p(&f.cfg),
        "--corpus",
        p(&f.train),
        "--dev",
        p(&f.dev),
        "--out",
        p(&out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn gen_corpus_is_deterministic_and_recorded() {
    let f = fixture();
    let again = f.root.join("again.jsonl");
    ok(&["gen-corpus", "--config", p(&f.cfg), "--seed", "1", "--out", p(&again)]);
    assert_eq!(fs::read(&f.train).unwrap(), fs::read(&again).unwrap());
    assert_eq!(fs::read_to_string(&f.train).unwrap().lines().count(), 40);
    let m: RunManifest =
        serde_json::from_str(&fs::read_to_string(f.root.join("again.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!((m.subcommand.as_str(), m.seed), ("gen-corpus", 1));
}

#[test]
fn gen_negatives_emits_records() {
    let f = fixture();
    let out = f.root.join("neg.jsonl");
    ok(&["gen-negatives", "--corpus", p(&f.train), "--n-h", "3", "--seed", "5", "--out", p(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 40);
    let with_focus = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| !v["focuses"].as_array().unwrap().is_empty())
        .inspect(|v| assert_eq!(v["negatives"].as_array().unwrap().len(), 3))
        .count();
    assert!(with_focus > 30);
}

#[test]
fn train_evaluate_analyze_round() {
    let f = fixture();
    let before = fs::read(&f.train).unwrap();
    let out = train(&f, "run", &[]);
    assert_eq!(fs::read(&f.train).unwrap(), before);

    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(m["config"]["train"]["contrastive"]["alpha"], 1.0);
    assert_eq!(m["config"]["train"]["contrastive"]["beta"], 0.5);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);

    let log = fs::read_to_string(out.join("trainlog.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,epoch,ce,ctrCS,ctrCH,ctrGS,ctrGH,total");
    assert_eq!(log.lines().count(), 1 + 2 * 5);
    for e in 0..=2 {
        assert!(out.join(format!("checkpoints/epoch_{e:03}.ckpt")).exists());
    }
    assert!(out.join("best.ckpt").exists());
    let state = Checkpoint::load(&out.join("state.ckpt")).unwrap();
    assert!(state.resume.is_some());
    assert_eq!(state.meta.epoch, 2);
    let last = Checkpoint::load(&out.join("checkpoints/epoch_002.ckpt")).unwrap();
    assert!(last.resume.is_none());
    assert_eq!(last.model, state.model);

    let eval = ok(&["evaluate", "--checkpoint", p(&out.join("best.ckpt")), "--corpus", p(&f.dev)]);
    let v: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 4);
    for k in ["r1", "r2", "rl", "focus_accuracy"] {
        assert!(v[k].is_f64(), "{k}");
    }
    let beam = ok(&["evaluate", "--checkpoint", p(&out.join("best.ckpt")), "--corpus", p(&f.dev), "--beam", "2"]);
    assert!(serde_json::from_slice::<serde_json::Value>(&beam.stdout).is_ok());

    let csv = ok(&["analyze", "--config", p(&f.cfg), "--checkpoints", p(&out.join("checkpoints")), "--dev", p(&f.dev)]);
    let csv = String::from_utf8(csv.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,s_c_faq_pos,s_c_sim_neg,s_c_hard_neg,s_g_faq_pos,s_g_sim_neg,s_g_hard_neg"
    );
    let epochs: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["0", "1", "2"]);
}

#[test]
fn modes_differ_only_in_contrastive_columns() {
    let f = fixture();
    let ce = fs::read_to_string(train(&f, "ce", &["--mode", "ce_only"]).join("trainlog.csv")).unwrap();
    let qf = fs::read_to_string(train(&f, "qf", &["--mode", "qfcl"]).join("trainlog.csv")).unwrap();
    assert_eq!(ce.lines().count(), qf.lines().count());
    for (a, b) in ce.lines().zip(qf.lines()).skip(1) {
        let a: Vec<&str> = a.split(',').collect();
        let b: Vec<&str> = b.split(',').collect();
        assert_eq!(a[..2], b[..2]);
        assert!(a[3..7].iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
        assert_eq!(a[2], a[7]);
    }
    let later = qf.lines().last().unwrap().split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>();
    assert!(later[3] > 0.0 && later[5] > 0.0);
    let first = |s: &str| s.lines().nth(1).unwrap().split(',').nth(2).unwrap().to_string();
    assert_eq!(first(&ce), first(&qf));
}

#[test]
fn zero_epochs_writes_only_the_initial_checkpoint() {
    let f = fixture();
    let cfg0 = f.root.join("zero.toml");
    fs::write(&cfg0, TINY.replace("epochs = 2", "epochs = 0")).unwrap();
    let out = f.root.join("zero_run");
    ok(&["train", "--config", p(&cfg0), "--corpus", p(&f.train), "--dev", p(&f.dev), "--out", p(&out)]);
    let names: Vec<String> = fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names, ["epoch_000.ckpt"]);
    assert_eq!(fs::read_to_string(out.join("trainlog.csv")).unwrap().lines().count(), 1);
}

fn error_of(out: &Output) -> (i32, String) {
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    (out.status.code().unwrap(), err)
}

#[test]
fn failures_map_to_exit_codes() {
    let f = fixture();
    let (code, err) = error_of(&qfcl(&["train", "--bogus"]));
    assert_eq!(code, 2);
    assert!(err.starts_with("error[usage]: "), "{err}");
    assert_eq!(error_of(&qfcl(&[])).0, 2);

    let missing = f.root.join("nope.jsonl");
    let (code, err) = error_of(&qfcl(&["evaluate", "--checkpoint", p(&missing), "--corpus", p(&f.dev)]));
    assert_eq!(code, 3);
    assert!(err.starts_with("error[io]: "), "{err}");

    let bad = f.root.join("bad.toml");
    fs::write(&bad, "tau = 0\n").unwrap();
    let (code, err) = error_of(&qfcl(&["gen-corpus", "--config", p(&bad), "--out", p(&f.root.join("x"))]));
    assert_eq!(code, 4);
    assert!(err.starts_with("error[config]: ") && err.contains("tau"), "{err}");

    fs::write(&bad, "temperature = 1\n").unwrap();
    let (code, err) = error_of(&qfcl(&["gen-corpus", "--config", p(&bad), "--out", p(&f.root.join("x"))]));
    assert_eq!(code, 4);
    assert!(err.contains("temperature"), "{err}");

    let junk = f.root.join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let (code, _) = error_of(&qfcl(&["evaluate", "--checkpoint", p(&junk), "--corpus", p(&f.dev)]));
    assert_eq!(code, 3);

    assert!(qfcl(&["--help"]).status.success());
}
