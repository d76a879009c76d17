use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 4
k = 5

[data]
synthetic = { users = 12, items = 160, categories = 6 }
negatives = 30

[evolution]
pop_size = 10
generations = 3

[init]
n_user_clusters = 2
init_generations = 1

[transfer]
tau = 2
n_clusters = 2

[scorer]
epochs = 1
hidden = [8, 4]
user_dim = 4

[evaluation]
ks = [5]
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pareto-rerank"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn prepare_writes_manifest_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = run(&[
            "prepare",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["artifacts"].as_array().unwrap().len(), 4);
    assert_eq!(ma, mb);
}

#[test]
fn run_then_eval_reproduces_the_report_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("run");
    let o = run(&[
        "run",
        "--config",
        &config,
        "--threads",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "fronts.tsv",
        "anchors.tsv",
        "final_lists.tsv",
        "report.txt",
        "per_user.csv",
        "hv_trace.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let lists = out.join("final_lists.tsv");
    let eval = tmp.path().join("eval");
    let o = run(&[
        "eval",
        "--config",
        &config,
        "--lists",
        lists.to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pick = |path: &Path| -> Vec<String> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .filter(|l| l.starts_with("hr@") || l.starts_with("f1@"))
            .map(String::from)
            .collect()
    };
    assert_eq!(
        pick(&out.join("report.txt")),
        pick(&eval.join("eval_report.txt"))
    );
}

#[test]
fn baselines_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("base");
    for method in ["topk", "mmr"] {
        let o = run(&[
            "baseline",
            "--config",
            &config,
            "--method",
            method,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(format!("baseline_{method}_report.txt")).exists());
    }
}

#[test]
fn missing_input_fails_with_data_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "[data]\ninteractions = \"nope.tsv\"\n");
    let o = run(&[
        "run",
        "--config",
        &config,
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.tsv"));
}

#[test]
fn bad_config_and_usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "k = 10\n[transfer]\ntau = 0\n[data]\nsynthetic = {}\n",
    );
    let o = run(&["run", "--config", &config]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["run"]);
    assert_eq!(o.status.code(), Some(1));
}
