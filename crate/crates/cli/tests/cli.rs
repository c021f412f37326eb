use std::path::Path;
use std::process::{Command, Output};

fn lragnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lragnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "
seed = 3
[attention]
heads = 2
[gcn]
layers = 2
hidden = 8
[rl]
hidden = 16
epochs = 1
[optimizer]
epochs = 2
";

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let cfg = dir.path().join("small.toml");
    let run = dir.path().join("run");
    let eval = dir.path().join("eval");
    std::fs::write(&cfg, SMALL).unwrap();

    let out = lragnn(&["synth", "--out", arg(&data), "--samples", "40", "--nodes", "6", "--features", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&data).unwrap().lines().count(), 40);

    let out = lragnn(&["train", "--config", arg(&cfg), "--data", arg(&data), "--out", arg(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.json", "report.txt", "cs_curve.tsv", "predictions.tsv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let ckpt = run.join("checkpoint.bin");
    let out = lragnn(&[
        "eval",
        "--config",
        arg(&cfg),
        "--checkpoint",
        arg(&ckpt),
        "--data",
        arg(&data),
        "--out",
        arg(&eval),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(eval.join("eval_metrics.json").exists());
}

#[test]
fn gradcheck_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = lragnn(&["gradcheck", "--out", arg(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[graph]\nthreshold = 3.0\n").unwrap();
    std::fs::write(&data, "{\"id\": \"a\", \"age\": 20}\nnot json\n").unwrap();
    let out_dir = dir.path().join("run");

    let out = lragnn(&["train", "--config", arg(&bad_cfg), "--data", arg(&data), "--out", arg(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));

    let out = lragnn(&["train", "--data", arg(&data), "--out", arg(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));

    let out = lragnn(&["gradcheck", "--tolerance", "0"]);
    assert_eq!(out.status.code(), Some(5));
}
