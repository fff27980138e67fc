use std::path::Path;
use std::process::{Command, Output};

use gansic::harness::ScenarioConfig;

fn gansic(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gansic"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{"snr_db": [0.0, 8.0], "methods": ["map", "sic"], "eval": {"max_vectors": 1000}}"#;

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = gansic(dir.path(), &["sweep-static", "--config", "no/such/cfg.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/cfg.json"));
}

#[test]
fn unknown_override_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = gansic(dir.path(), &["sweep-static", "--set", "channel.colour=red"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("channel.colour"));
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"snr": [1.0]}"#).unwrap();
    let o = gansic(dir.path(), &["sweep-static", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = gansic(dir.path(), &["sweep-static", "--set", "methods=[]"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_usage_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gansic(dir.path(), &["launch"]).status.code(), Some(2));
    assert_eq!(gansic(dir.path(), &["sweep-static", "--seed", "minus-one"]).status.code(), Some(2));
}

#[test]
fn online_method_in_static_sweep_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = gansic(dir.path(), &["sweep-static", "--set", "methods=gansic_initial", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_subcommands_and_every_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = gansic(dir.path(), &["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["sweep-static", "sweep-dynamic", "train-gan", "online", "joint", "plot", "gradcheck"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    for (key, value) in ScenarioConfig::documented_keys() {
        assert!(text.contains(&format!("{key} = {value}")), "{key} missing from help");
    }
}

#[test]
fn sweep_writes_only_into_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), SMALL).unwrap();
    let o = gansic(dir.path(), &["sweep-static", "--config", "c.json", "--out", "res", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut top: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    top.sort();
    assert_eq!(top, vec!["c.json", "res"]);
    let mut outputs: Vec<_> = std::fs::read_dir(dir.path().join("res"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    outputs.sort();
    assert_eq!(outputs, vec!["results.csv", "results.svg"]);
    // One summary line per row.
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 4);
}

#[test]
fn seed_flag_changes_results_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), SMALL).unwrap();
    let run = |out: &str, seed: &str| {
        let o = gansic(dir.path(), &["sweep-static", "--config", "c.json", "--out", out, "--seed", seed]);
        assert!(o.status.success());
        std::fs::read(dir.path().join(out).join("results.csv")).unwrap()
    };
    let a = run("a", "7");
    assert_eq!(a, run("b", "7"));
    assert_ne!(a, run("c", "8"));
}

#[test]
fn plot_rerenders_an_existing_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), SMALL).unwrap();
    assert!(gansic(dir.path(), &["sweep-static", "--config", "c.json", "--out", "r"]).status.success());
    let svg = dir.path().join("r").join("results.svg");
    let before = std::fs::read(&svg).unwrap();
    std::fs::remove_file(&svg).unwrap();
    assert!(gansic(dir.path(), &["plot", "--out", "r"]).status.success());
    assert_eq!(std::fs::read(&svg).unwrap(), before);
}

#[test]
fn plot_without_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = gansic(dir.path(), &["plot", "--out", "nothing-here"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = gansic(dir.path(), &["gradcheck", "--out", "g"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("g").join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}
