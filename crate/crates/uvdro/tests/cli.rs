use std::path::Path;
use std::process::{Command, Output};

fn uvdro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvdro"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"{
    "schema_version": 1,
    "task": "medical_sim",
    "objectives": ["erm", "uv_dro"],
    "q_train": [0.05, 0.5],
    "seeds": [0, 1],
    "n_train": 30,
    "n_test": 20,
    "train": {"learning_rate": 0.1, "steps": 20}
}"#;

#[test]
fn sweep_writes_records_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let res = uvdro(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 2 * 2 * 2);
    let aggregate = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(aggregate.lines().count(), 1 + 2 * 2);
}

#[test]
fn seed_flag_and_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let res = uvdro(&[
        "train",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
        "--format",
        "jsonl",
    ]);
    assert!(res.status.success());
    let text = std::fs::read_to_string(out.join("records.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.contains("\"seed\":7")));
}

#[test]
fn report_reaggregates_a_records_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert!(
        uvdro(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    let again = dir.path().join("again");
    let res = uvdro(&[
        "report",
        "--input",
        out.join("records.csv").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    assert_eq!(
        std::fs::read(out.join("aggregate.csv")).unwrap(),
        std::fs::read(again.join("aggregate.csv")).unwrap()
    );
}

#[test]
fn generate_writes_three_splits_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("data");
    let res = uvdro(&[
        "generate",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(res.status.success());
    let train = std::fs::read_to_string(out.join("medical_sim_q0.05_seed3_train.csv")).unwrap();
    assert_eq!(train.lines().next(), Some("x0,x1,label,uv"));
    assert_eq!(train.lines().count(), 1 + 24);
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 2 * 3);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &SMALL.replace("\"schema_version\": 1", "\"schema_version\": 9"),
    );
    let res = uvdro(&["sweep", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("schema_version"));
    let res = uvdro(&[
        "sweep",
        "--config",
        dir.path().join("missing.json").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(uvdro(&["sweep"]).status.code(), Some(2));
}

#[test]
fn failed_records_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // Two rows cannot cover n_train + n_test, so every record fails.
    let images = dir.path().join("images.csv");
    std::fs::write(&images, "p0,p1,p2,p3,label\n1,0,0,1,a\n0,1,1,0,b\n").unwrap();
    let body = format!(
        r#"{{"schema_version": 1, "task": "confounded_images", "objectives": ["erm"],
            "alpha_star": [0.1], "n_train": 10, "n_test": 5, "train": {{"steps": 2}},
            "images": {{"path": "{}", "side": 2}}}}"#,
        images.display()
    );
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    let res = uvdro(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        res.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert!(String::from_utf8_lossy(&res.stderr).contains("record failed"));
}

#[test]
fn bundled_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            uvdro::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
