use std::path::Path;
use std::process::{Command, Output};

use dynexec_core::harness::{load_config, save_config};
use serde_json::Value;

fn dynexec(dir: &Path, args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dynexec"));
    cmd.args(args).current_dir(dir).env_remove("DYNEXEC_SEED");
    if let Some(seed) = env_seed {
        cmd.env("DYNEXEC_SEED", seed);
    }
    cmd.output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = dynexec(dir, args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn metrics(out: &Output) -> Value {
    let report: Value = serde_json::from_slice(&out.stdout).expect("report JSON on stdout");
    report["metrics"].clone()
}

fn models(dir: &Path) {
    ok(dir, &["gen-model", "--kind", "table", "--vocab", "6", "--seed", "1", "--out", "target.json"]);
    ok(dir, &["gen-model", "--kind", "table", "--perturb", "target.json", "--mix", "0.4", "--cost", "0.1", "--seed", "2", "--out", "draft.json"]);
}

fn specdec_config(dir: &Path, name: &str, seed: Option<u64>) -> String {
    let seed = seed.map(|s| format!(r#","master_seed":{s}"#)).unwrap_or_default();
    let text = format!(
        r#"{{"technique":"specdec","params":{{"target":"target.json","draft":"draft.json","n":32}}{seed}}}"#
    );
    std::fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn exit_codes_distinguish_validation_from_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    models(d);
    assert_eq!(dynexec(d, &["early-exit", "--count", "300"], None).status.code(), Some(0));
    // Unknown flag, missing file, bad schema: all validation errors.
    assert_eq!(dynexec(d, &["specdec", "--target", "target.json", "--draft", "draft.json", "--speed", "2"], None).status.code(), Some(1));
    assert_eq!(dynexec(d, &["specdec", "--target", "absent.json", "--draft", "draft.json"], None).status.code(), Some(1));
    std::fs::write(d.join("bad.json"), r#"{"technique":"specdec","params":{"target":"target.json","draft":"draft.json","speed":2}}"#).unwrap();
    let out = dynexec(d, &["run", "--config", "bad.json"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed"));
    // A prompt token outside the vocabulary fails at run time.
    assert_eq!(dynexec(d, &["lookahead", "--model", "target.json", "--prompt", "40"], None).status.code(), Some(2));
    assert_eq!(dynexec(d, &["early-exit", "--count", "20"], None).status.code(), Some(2));
}

#[test]
fn seed_flag_beats_config_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    models(d);
    let with_seed = |seed: u64| metrics(&ok(d, &["run", "--config", &specdec_config(d, &format!("s{seed}.json"), Some(seed))]));
    let (s3, s5, s7) = (with_seed(3), with_seed(5), with_seed(7));
    assert_ne!(s3, s5);

    let cfg = specdec_config(d, "c5.json", Some(5));
    let flagged = dynexec(d, &["run", "--config", &cfg, "--seed", "3"], Some("7"));
    assert_eq!(metrics(&flagged), s3);
    assert_eq!(metrics(&dynexec(d, &["run", "--config", &cfg], Some("7"))), s5);

    let unseeded = specdec_config(d, "none.json", None);
    assert_eq!(metrics(&dynexec(d, &["run", "--config", &unseeded], Some("7"))), s7);
    assert_eq!(metrics(&ok(d, &["run", "--config", &unseeded])), metrics(&ok(d, &["run", "--config", &specdec_config(d, "zero.json", Some(0))])));
}

#[test]
fn plot_file_is_sorted_two_column_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["early-exit", "--count", "400", "--taus", "0,0.2,0.5", "--plot", "tau.dat"]);
    let text = std::fs::read_to_string(d.join("tau.dat")).unwrap();
    let xs: Vec<f64> = text
        .lines()
        .map(|line| {
            let cols: Vec<f64> = line.split_whitespace().map(|c| c.parse().unwrap()).collect();
            assert_eq!(cols.len(), 2, "{line}");
            assert!((0.0..=1.0).contains(&cols[1]));
            cols[0]
        })
        .collect();
    assert_eq!(xs, vec![0.0, 0.2, 0.5]);

    // Lookahead has no default series and no requested kind.
    models(d);
    let out = dynexec(d, &["lookahead", "--model", "target.json", "--plot", "x.dat"], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn batch_parallel_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    models(d);
    let configs: Vec<String> = (0..4).map(|i| specdec_config(d, &format!("b{i}.json"), Some(i))).collect();
    let run = |parallel: bool| {
        let mut args = vec!["batch"];
        args.extend(configs.iter().map(String::as_str));
        if parallel {
            args.push("--parallel");
        }
        let reports: Vec<Value> = serde_json::from_slice(&ok(d, &args).stdout).unwrap();
        reports.into_iter().map(|r| r["metrics"].clone()).collect::<Vec<_>>()
    };
    let sequential = run(false);
    assert_eq!(sequential.len(), 4);
    assert_eq!(run(true), sequential);
}

#[test]
fn config_round_trips_through_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("route.json"),
        r#"{"technique":"route","params":{"small":"s.json","large":"l.json","workload":"w.json","thetas":["-inf",0.5,"inf"]},"master_seed":9,"report":"out.csv"}"#,
    )
    .unwrap();
    let first = load_config(&d.join("route.json")).unwrap();
    save_config(&first, &d.join("copy.json")).unwrap();
    let second = load_config(&d.join("copy.json")).unwrap();
    assert_eq!(first.to_json(), second.to_json());
    save_config(&second, &d.join("copy2.json")).unwrap();
    assert_eq!(std::fs::read(d.join("copy.json")).unwrap(), std::fs::read(d.join("copy2.json")).unwrap());
}
