use std::path::Path;
use std::process::{Command, Output};

const R34_PROBES: &str = "stage,relus,acc_wo_kd,acc_w_kd
S1,1573K,42.10,39.4
S2,1049K,53.49,51.74
S3,786K,57.28,60.83
S4,197K,48.10,54.41
";

const R18_PROBES: &str = "stage,relus,acc_wo_kd,acc_w_kd
S1,262K,,59.85
S2,131K,,68.79
S3,66K,,69.92
S4,33K,,63.16
";

const R18_C100_FRONT: &str = "culled,thinned,alpha,rho,relus,accuracy,latency_s
S1,NA,NA,NA,229.38K,76.22,4.61
S1+S4,NA,NA,NA,196.61K,75.51,3.94
S1,S2+S3+S4,NA,NA,114.69K,74.72,2.38
S1,S2+S3+S4,0.5,NA,57.34K,72.68,1.37
S1+S4,S2+S3,0.5,NA,49.15K,69.50,1.19
S1,S2+S3+S4,NA,0.5,28.67K,68.68,0.74
S1+S4,S2+S3,0.5,NA,24.57K,68.41,0.56
S1,S2+S3+S4,0.5,0.5,14.33K,65.36,0.52
S1+S4,S2+S3,0.5,0.5,12.28K,64.97,0.45
S1,S2*+S3*+S4*,0.5,0.5,7.17K,62.30,0.21
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relureduce"))
        .current_dir(dir)
        .env_remove("RELUREDUCE_THREADS")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn profile_reports() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["profile", "--arch", "resnet18", "--input", "32", "--out-dir", "r18"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(d.path().join("r18/layers.csv")).lines().last().unwrap().starts_with("total,,,557056,"));
    assert!(d.path().join("r18/distribution.csv").exists());
    let o = run(d.path(), &["profile", "--arch", "vgg16", "--input", "32", "--classes", "10", "--out-dir", "vgg"]);
    assert_eq!(code(&o), 0);
    let stages = read(d.path().join("vgg/stages.csv"));
    assert!(stages.lines().any(|l| l.starts_with("S1,") && l.ends_with(",139264")), "{stages}");
    assert_eq!(code(&run(d.path(), &["profile", "--arch", "resnet50"])), 2);
    assert_eq!(code(&run(d.path(), &["profile", "--arch", "vgg16", "--input", "8"])), 3);
    assert_eq!(code(&run(d.path(), &["profile", "--bogus-flag"])), 2);
}

#[test]
fn criticality_from_csv() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("r34.csv"), R34_PROBES).unwrap();
    let o = run(d.path(), &["criticality", "--from-csv", "r34.csv"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("order: S1 < S2 < S4 < S3"));
    let csv = read(d.path().join("out/criticality.csv"));
    assert!(csv.contains("S3,786,13.4382,4"), "{csv}");
    std::fs::write(d.path().join("empty.csv"), "stage,relus,acc_wo_kd,acc_w_kd\n").unwrap();
    assert_eq!(code(&run(d.path(), &["criticality", "--from-csv", "empty.csv"])), 2);
    assert_eq!(code(&run(d.path(), &["criticality", "--from-csv", "missing.csv"])), 2);
}

#[test]
fn reduce_from_published_accuracies() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("front.csv"), R18_C100_FRONT).unwrap();
    let o = run(d.path(), &["reduce", "--accuracy-from-csv", "front.csv"]);
    assert_eq!(code(&o), 0);
    let pareto = read(d.path().join("out/pareto.csv"));
    assert_eq!(pareto.lines().next(), Some("culled,thinned,alpha,rho,relus,accuracy,latency_s,acc_per_kilorelu"));
    assert_eq!(pareto.lines().count(), 11);
}

#[test]
fn override_of_most_critical_stage_is_refused() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("r18.csv"), R18_PROBES).unwrap();
    let args = ["reduce", "--arch", "resnet18", "--from-csv", "r18.csv", "--stages-override", "S1,S3", "--dry-run"];
    assert_eq!(code(&run(d.path(), &args)), 2);
    let ok = run(d.path(), &["reduce", "--arch", "resnet18", "--from-csv", "r18.csv", "--dry-run"]);
    assert_eq!(code(&ok), 0);
    assert_eq!(stdout(&ok).matches("\"train it").count(), 15);
    assert!(!d.path().join("out").exists(), "dry run wrote files");
}

#[test]
fn dry_run_config_round_trips() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"seed": 4, "arch": {"family": "resnet10", "input": 16, "classes": 4, "alpha": "1/16"},
        "train": {"epochs": 2, "batch_size": 16, "lr0": 0.05}, "pipeline": {"w": 0.07}}"#;
    std::fs::write(d.path().join("c.json"), cfg).unwrap();
    let first = run(d.path(), &["--config", "c.json", "--dry-run", "reduce", "--train-size", "64"]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&first)).unwrap();
    std::fs::write(d.path().join("c2.json"), serde_json::to_string(&v["config"]).unwrap()).unwrap();
    let second = run(d.path(), &["--config", "c2.json", "--dry-run", "reduce"]);
    assert_eq!(stdout(&first), stdout(&second));
    std::fs::write(d.path().join("bad.json"), r#"{"arch": {"family": "resnet10", "depth": 3}}"#).unwrap();
    assert_eq!(code(&run(d.path(), &["--config", "bad.json", "profile"])), 2);
}

#[test]
fn reduce_trains_fifteen_reproducibly() {
    let d = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec![
            "reduce",
            "--arch",
            "resnet6",
            "--input",
            "8",
            "--classes",
            "3",
            "--alpha",
            "1/16",
            "--train-size",
            "96",
            "--test-size",
            "30",
            "--noise",
            "3",
            "--epochs",
            "1",
            "--batch-size",
            "16",
            "--lr",
            "0.05",
            "--seed",
            "2",
            "--out-dir",
            out,
        ]
    };
    let a = run(d.path(), &args("a"));
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let b = Command::new(env!("CARGO_BIN_EXE_relureduce"))
        .current_dir(d.path())
        .env("RELUREDUCE_THREADS", "2")
        .args(args("b"))
        .output()
        .unwrap();
    assert_eq!(code(&b), 0);
    for f in ["candidates.csv", "pareto.csv", "criticality.csv"] {
        assert_eq!(read(d.path().join("a").join(f)), read(d.path().join("b").join(f)), "{f}");
    }
    let manifest = |dir: &str| {
        let mut v: serde_json::Value = serde_json::from_str(&read(d.path().join(dir).join("manifest.json"))).unwrap();
        v["config"]["threads"] = serde_json::Value::Null;
        v
    };
    assert_eq!(manifest("a"), manifest("b"));
    assert_eq!(read(d.path().join("a/candidates.csv")).lines().count(), 16);
}

#[test]
fn train_then_merge() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        d.path(),
        &[
            "train",
            "--arch",
            "mobilenetv1",
            "--input",
            "16",
            "--classes",
            "3",
            "--alpha",
            "1/8",
            "--train-size",
            "60",
            "--test-size",
            "20",
            "--epochs",
            "1",
            "--batch-size",
            "20",
            "--output",
            "m.rrdk",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(d.path().join("out/history.csv")).starts_with("epoch,lr,train_loss,train_acc,val_acc"));
    let o = run(d.path(), &["merge", "--input", "m.rrdk", "--output", "merged.rrdk"]);
    assert_eq!(code(&o), 0);
    let o = run(d.path(), &["merge", "--input", "merged.rrdk", "--output", "again.rrdk"]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read(d.path().join("merged.rrdk")).unwrap(),
        std::fs::read(d.path().join("again.rrdk")).unwrap()
    );
    let o = run(d.path(), &["merge", "--input", "m.rrdk", "--output", "strict.rrdk", "--tolerance", "1e-300"]);
    assert_eq!(code(&o), 5);
    assert!(!d.path().join("strict.rrdk").exists());
    std::fs::write(d.path().join("junk.rrdk"), b"NOPE!").unwrap();
    assert_eq!(code(&run(d.path(), &["merge", "--input", "junk.rrdk"])), 2);
}

#[test]
fn estimate_inputs() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["estimate", "229.38", "0"]);
    assert_eq!(code(&o), 0);
    let rows: Vec<f64> = stdout(&o).lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!((rows[0] - 4.61).abs() < 0.25 * 4.61);
    assert!(rows[1] > 0.0 && rows[1] < 0.5);
    std::fs::write(
        d.path().join("timings.csv"),
        "kilo_relus,latency_s\n917.52,17.16\n458.76,8.87\n229.38,4.61\n114.69,2.47\n98.31,2.64\n57.35,1.85\n",
    )
    .unwrap();
    let o = run(d.path(), &["estimate", "--fit", "timings.csv", "98.31"]);
    assert_eq!(code(&o), 0);
    assert_eq!(code(&run(d.path(), &["estimate", "lots"])), 2);
    assert_eq!(code(&run(d.path(), &["estimate"])), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_relureduce"))
        .current_dir(d.path())
        .env("RELUREDUCE_THREADS", "zero")
        .args(["estimate", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
