use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn cmic(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmic"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cmic(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    cmic(dir, args).status.code().unwrap()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

const CE_CONFIG: &str = "mode = \"ce\"\nlambda = 0.0\nbeta = 0.0\nepochs = 60\nbatch_size = 32\nhidden = [32]\nlr = 0.05\nlr_milestones = [30, 45]\n";
const CMIC_CONFIG: &str = "mode = \"cmic\"\nlambda = 0.7\nbeta = 0.4\nepochs = 60\nbatch_size = 32\nhidden = [32]\nlr = 0.05\nlr_milestones = [30, 45]\n";

/// Train and test blob CSVs in a fresh directory.
fn blobs_workspace() -> (TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    ok(
        &dir,
        &["gendata", "--blobs", "--seed", "100", "--out", "train"],
    );
    ok(
        &dir,
        &["gendata", "--blobs", "--seed", "200", "--out", "test"],
    );
    std::fs::write(dir.join("ce.toml"), CE_CONFIG).unwrap();
    std::fs::write(dir.join("cmic.toml"), CMIC_CONFIG).unwrap();
    (tmp, dir)
}

fn train(dir: &Path, config: &str, out: &str) {
    ok(
        dir,
        &[
            "train",
            "--config",
            config,
            "--data",
            "train/blobs.csv",
            "--eval",
            "test/blobs.csv",
            "--scale",
            "minmax",
            "--out",
            out,
        ],
    );
}

fn final_field(curve: &str, column: usize) -> f64 {
    curve
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(column)
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn metrics_on_ln2_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["gendata", "--fixture", "ln2-cmi", "--out", "fx"]);
    let text = ok(dir, &["metrics", "fx/ln2-cmi.csv"]);
    assert!(text.contains("cmi                0.693147"), "{text}");

    let json = ok(dir, &["metrics", "--json", "fx/ln2-cmi.csv"]);
    assert_eq!(json, ok(dir, &["metrics", "--json", "fx/ln2-cmi.csv"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!((v["cmi"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(v["gamma"].as_f64(), Some(0.0));
    assert!(v["ncmi"].is_null());

    let csv = ok(dir, &["metrics", "--csv", "fx/ln2-cmi.csv"]);
    assert_eq!(csv.lines().nth(1).unwrap().split(',').nth(4), Some("nan"));
}

#[test]
fn metrics_reports_bad_rows_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("bad.csv"),
        "label,p0,p1\n0,0.5,0.5\n1,0.5,0.4\n",
    )
    .unwrap();
    let out = cmic(tmp.path(), &["metrics", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("line 3"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(code(tmp.path(), &["metrics", "missing.csv"]), 2);
}

#[test]
fn gendata_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "gendata",
            "--blobs",
            "--classes",
            "3",
            "--per-class",
            "100",
            "--seed",
            "1",
            "--out",
            "a",
        ],
    );
    ok(
        dir,
        &[
            "gendata",
            "--blobs",
            "--classes",
            "3",
            "--per-class",
            "100",
            "--seed",
            "1",
            "--out",
            "b",
        ],
    );
    let a = read(dir.join("a/blobs.csv"));
    assert_eq!(a.lines().count(), 301);
    assert_eq!(a, read(dir.join("b/blobs.csv")));
    assert!(dir.join("a/manifest.json").exists());

    ok(dir, &["gendata", "--fixture", "idx-mini", "--out", "idx"]);
    assert_eq!(
        std::fs::read(dir.join("idx/images.idx")).unwrap(),
        [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 255]
    );
    assert_eq!(
        std::fs::read(dir.join("idx/labels.idx")).unwrap(),
        [0, 0, 8, 1, 0, 0, 0, 1, 7]
    );
}

#[test]
fn ce_training_run_directory() {
    let (_tmp, dir) = blobs_workspace();
    std::fs::write(
        dir.join("short.toml"),
        CE_CONFIG.replace("epochs = 60", "epochs = 5"),
    )
    .unwrap();
    train(&dir, "short.toml", "run");
    let curve = read(dir.join("run/curve.csv"));
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(
        lines[0],
        "epoch,cmi,gamma,ncmi,eps_top1,eps_expected,ce_bound,train_loss"
    );
    assert_eq!(lines.len(), 6);
    let losses: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");

    for f in [
        "curve.json",
        "checkpoint.json",
        "config.toml",
        "scaler.json",
        "manifest.json",
    ] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir.join("run/manifest.json"))).unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["config"]["train"]["epochs"], 5);
    let digest = manifest["inputs"][1]["sha256"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
}

#[test]
fn cmic_run_ends_with_lower_ncmi_and_is_reproducible() {
    let (_tmp, dir) = blobs_workspace();
    train(&dir, "ce.toml", "ce");
    train(&dir, "cmic.toml", "cmic");
    train(&dir, "cmic.toml", "cmic2");
    let (ce, cm) = (
        read(dir.join("ce/curve.csv")),
        read(dir.join("cmic/curve.csv")),
    );
    assert!(final_field(&cm, 3) < final_field(&ce, 3));
    assert_eq!(cm, read(dir.join("cmic2/curve.csv")));
    assert_eq!(
        read(dir.join("cmic/checkpoint.json")),
        read(dir.join("cmic2/checkpoint.json"))
    );
}

#[test]
fn rejects_inconsistent_config() {
    let (_tmp, dir) = blobs_workspace();
    std::fs::write(dir.join("bad.toml"), "mode = \"ce\"\nlambda = 0.7\n").unwrap();
    assert_eq!(
        code(
            &dir,
            &[
                "train",
                "--config",
                "bad.toml",
                "--data",
                "train/blobs.csv",
                "--out",
                "r"
            ]
        ),
        1
    );
    std::fs::write(dir.join("typo.toml"), "lamda = 0.7\n").unwrap();
    assert_eq!(
        code(
            &dir,
            &[
                "train",
                "--config",
                "typo.toml",
                "--data",
                "train/blobs.csv",
                "--out",
                "r"
            ]
        ),
        1
    );
}

#[test]
fn attack_outputs() {
    let (_tmp, dir) = blobs_workspace();
    std::fs::write(
        dir.join("short.toml"),
        CE_CONFIG.replace("epochs = 60", "epochs = 3"),
    )
    .unwrap();
    train(&dir, "short.toml", "run");
    let base = [
        "attack",
        "--checkpoint",
        "run/checkpoint.json",
        "--data",
        "test/blobs.csv",
        "--scaler",
        "run/scaler.json",
    ];

    let clean_only = ok(&dir, &[&base[..], &["--budgets", "0"]].concat());
    let lines: Vec<&str> = clean_only.lines().collect();
    let clean = lines[0].strip_prefix("clean accuracy: ").unwrap();
    assert_eq!(lines[1], "budget,accuracy");
    assert_eq!(lines[2], format!("0,{clean}"));
    assert_eq!(lines.len(), 3);

    let fgsm = ok(&dir, &base);
    assert_eq!(fgsm.lines().count(), 9);
    let pgd = ok(
        &dir,
        &[&base[..], &["--attack", "pgd", "--seed", "3"]].concat(),
    );
    assert_eq!(
        pgd,
        ok(
            &dir,
            &[&base[..], &["--attack", "pgd", "--seed", "3"]].concat()
        )
    );

    assert_eq!(
        code(&dir, &[&base[..], &["--budgets", "0.2,0.1"]].concat()),
        1
    );
    ok(&dir, &["gendata", "--blobs", "--dim", "3", "--out", "wide"]);
    let mismatch = [
        "attack",
        "--checkpoint",
        "run/checkpoint.json",
        "--data",
        "wide/blobs.csv",
    ];
    assert_eq!(code(&dir, &mismatch), 2);
}

#[test]
fn simplex_projection() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("p.csv"),
        "label,p0,p1,p2,p3\n0,1,0,0,0\n1,0,1,0,0\n2,0.25,0.25,0.25,0.25\n3,0,0,0,1\n",
    )
    .unwrap();
    let out = cmic(dir, &["simplex", "p.csv", "--classes", "0,1,2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], vec![0.0, 0.0, 0.0]);
    assert_eq!(rows[1], vec![1.0, 1.0, 0.0]);
    assert!((rows[2][1] - 0.5).abs() < 1e-12 && (rows[2][2] - 3f64.sqrt() / 6.0).abs() < 1e-12);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipped 1"));

    assert_eq!(code(dir, &["simplex", "p.csv", "--classes", "0,1"]), 1);
    assert_eq!(code(dir, &["simplex", "p.csv", "--classes", "0,1,1"]), 1);
}

#[test]
fn table1_report() {
    let tmp = tempfile::tempdir().unwrap();
    let json = ok(tmp.path(), &["table1", "--bundled", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 18);
    assert!((v["pearson_published"].as_f64().unwrap() - 0.9929).abs() < 0.01);
    let resnet18 = &v["rows"][0];
    assert_eq!(resnet18["model"], "ResNet18");
    assert!((resnet18["recomputed_ncmi"].as_f64().unwrap() - 0.101).abs() <= 0.0005);
    assert!(ok(tmp.path(), &["table1", "--bundled"]).contains("max discrepancy"));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(tmp.path(), &["bogus"]), 1);
    assert_eq!(code(tmp.path(), &["table1"]), 1);
    assert_eq!(code(tmp.path(), &["--help"]), 0);
}
