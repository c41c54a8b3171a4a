use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
[dataset.synthetic]
n_users = 80
n_items = 40
n_interactions = 900
seed = 2

[models.bpr-nnmf]
algorithm = "bpr"
nnmf = true
f = 6
epochs_max = 10
user_k = 4
item_k = 4

[models.funk-mf]
algorithm = "funk"
f = 6
epochs_max = 10

[baselines.iknn]
kind = "item_knn"
k = 8

[stability]
seeds = [1, 2, 3]
cutoffs = [5]

[search]
budget = 2
f = [4, 6]
"#;

fn nnmf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnmf"))
        .current_dir(dir)
        .args(args)
        .env_remove("NNMF_OUT_DIR")
        .output()
        .unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("experiment.toml"), config).unwrap();
    dir
}

fn ok(dir: &Path, args: &[&str]) {
    let out = nnmf(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

const ALL: [&str; 6] = ["preprocess", "train", "evaluate", "stability", "search", "report"];

#[test]
fn full_pipeline_is_idempotent_and_regenerates_intermediates() {
    let dir = setup(CONFIG);
    for cmd in ALL {
        ok(dir.path(), &[cmd]);
    }
    let out = dir.path().join("out");
    let first = snapshot(&out);
    for expected in [
        "split/train.tsv",
        "split/meta.json",
        "models/bpr-nnmf.bin",
        "models/bpr-nnmf.history.csv",
        "eval/longtail.csv",
        "stability/summary.csv",
        "stability/per_bin.csv",
        "search/trials.csv",
        "search/best.toml",
        "report/report.md",
        "report/report.json",
    ] {
        assert!(first.contains_key(Path::new(expected)), "missing {expected}");
    }
    let trials = String::from_utf8(first[Path::new("search/trials.csv")].clone()).unwrap();
    assert!(trials.starts_with("# random search"));

    for cmd in ALL {
        ok(dir.path(), &[cmd]);
    }
    assert_eq!(snapshot(&out), first, "rerun changed outputs");

    std::fs::remove_dir_all(out.join("models")).unwrap();
    std::fs::remove_dir_all(out.join("similarity")).unwrap();
    std::fs::remove_dir_all(out.join("eval")).unwrap();
    for cmd in ["train", "evaluate"] {
        ok(dir.path(), &[cmd]);
    }
    assert_eq!(snapshot(&out), first, "regenerated intermediates differ");
}

#[test]
fn stability_summary_has_a_row_per_model_kind_and_cutoff() {
    let dir = setup(CONFIG);
    for cmd in ["preprocess", "train"] {
        ok(dir.path(), &[cmd]);
    }
    ok(dir.path(), &["stability", "--seed-list", "4,5"]);
    let summary = std::fs::read_to_string(dir.path().join("out/stability/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 3);
}

#[test]
fn output_directory_follows_flag_then_environment() {
    let dir = setup(CONFIG);
    let env_out = dir.path().join("from-env");
    let status = Command::new(env!("CARGO_BIN_EXE_nnmf"))
        .current_dir(dir.path())
        .arg("preprocess")
        .env("NNMF_OUT_DIR", &env_out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(env_out.join("split/train.tsv").exists());

    ok(dir.path(), &["preprocess", "--out", "flagged"]);
    assert!(dir.path().join("flagged/split/meta.json").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn exit_codes_distinguish_config_and_data_errors() {
    let dir = setup("not = [valid");
    assert_eq!(nnmf(dir.path(), &["preprocess"]).status.code(), Some(1));

    let dir = setup(&CONFIG.replace("user_k = 4\nitem_k = 4", "user_k = 1\nitem_k = 1"));
    let out = nnmf(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bpr-nnmf"));

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nnmf(dir.path(), &["preprocess"]).status.code(), Some(1));

    let dir = setup(CONFIG);
    ok(dir.path(), &["preprocess"]);
    let out = nnmf(dir.path(), &["evaluate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("bpr-nnmf.bin") && err.contains("funk-mf.bin"),
        "{err}"
    );

    let missing = setup(&CONFIG.replace(
        "[dataset.synthetic]\nn_users = 80\nn_items = 40\nn_interactions = 900\nseed = 2",
        "[dataset]\npath = \"nowhere.tsv\"",
    ));
    assert_eq!(nnmf(missing.path(), &["preprocess"]).status.code(), Some(2));
}

#[test]
fn divergent_training_exits_with_three() {
    let dir = setup(&CONFIG.replace(
        "epochs_max = 10\n\n[baselines",
        "epochs_max = 10\nlearning_rate = 1000.0\n\n[baselines",
    ));
    ok(dir.path(), &["preprocess"]);
    assert_eq!(nnmf(dir.path(), &["train"]).status.code(), Some(3));
}
