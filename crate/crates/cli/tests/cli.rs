use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "zones=[2]",
    "n_repeat_seeds=1",
    "n_source_buildings=3",
    "n_target_buildings=2",
    "agent.hidden_layers=[8]",
    "agent.batch_size=8",
    "meta.building_batch_size=2",
    "meta.rounds=1",
    "methods.rl_mpc=false",
    "methods.pretrained=false",
    "methods.maml=false",
];

fn metaems(args: &[&str], out: &Path) -> Output {
    // Flags after the subcommand so that repeated `--set`s accumulate.
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_metaems"));
    cmd.env_remove("METAEMS_OUTPUT_DIR").args(args).arg("--output").arg(out);
    for s in TINY {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn full_experiment_writes_outputs_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = metaems(&["full-experiment", "--config", "quick", "--seed", "7", "--set", "meta.t_theta=20"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["summary.csv", "breakdown.csv", "curves.csv", "summary.txt", "config.resolved.toml"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert!(dir.path().join("checkpoints").is_dir());
    let resolved = std::fs::read_to_string(dir.path().join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("master_seed = 7"));
    assert!(resolved.contains("t_theta = 20"));
    assert!(resolved.contains("zones = [2]"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("metaems"));

    // The report subcommand re-renders the same text.
    let again = tempfile::tempdir().unwrap();
    let input = dir.path().to_str().unwrap();
    let r = metaems(&["report", "--input", input], again.path());
    assert!(r.status.success(), "{}", stderr(&r));
    let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&r.stdout), text);
}

#[test]
fn meta_train_then_meta_test() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    let o = metaems(&["meta-train"], &train);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(train.join("checkpoints/metaems_zone2_seed0.ckpt").exists());
    assert!(train.join("meta_log.csv").exists());
    assert!(!train.join("summary.csv").exists());

    let test = dir.path().join("test");
    let ckpt = train.join("checkpoints");
    let o = metaems(&["meta-test", "--checkpoints", ckpt.to_str().unwrap()], &test);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(test.join("summary.csv")).unwrap();
    assert!(summary.contains("metaems") && summary.contains("rbc"));
    assert!(!summary.contains("random_init"));
}

#[test]
fn baseline_runs_one_method() {
    let dir = tempfile::tempdir().unwrap();
    let o = metaems(&["baseline", "--method", "no_control"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.contains("no_control"));
    assert!(!summary.contains("metaems"));

    let o = metaems(&["baseline", "--method", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn gen_traces_writes_the_trace_schema() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("t.csv");
    let o = metaems(&["gen-traces", "--zone", "3", "--length", "48", "--seed", "4", "--out", file.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&file).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("hour,renewable_kw,load_kw,outdoor_c,price"));
    assert_eq!(lines.count(), 48);

    // Same seed, same file.
    let file2 = dir.path().join("t2.csv");
    metaems(&["gen-traces", "--zone", "3", "--length", "48", "--seed", "4", "--out", file2.to_str().unwrap()], dir.path());
    assert_eq!(std::fs::read(&file).unwrap(), std::fs::read(&file2).unwrap());

    let o = metaems(&["gen-traces", "--zone", "9"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = metaems(&["full-experiment", "--config", "/no/such/file.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/file.toml"));

    let o = metaems(&["full-experiment", "--set", "meta.t_theta=0"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let o = metaems(&["full-experiment", "--set", "not_a_key=3"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let o = metaems(&["no-such-subcommand"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let o = metaems(&["meta-test", "--checkpoints", "/no/such/dir"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn output_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("x.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_metaems"))
        .env("METAEMS_OUTPUT_DIR", dir.path())
        .args(["gen-traces", "--zone", "1", "--length", "24", "--out", file.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("config.resolved.toml").exists());
}

#[test]
fn help_lists_config_keys() {
    let o = Command::new(env!("CARGO_BIN_EXE_metaems")).arg("--help").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("meta.t_theta"));
    assert!(text.contains("[published]"));
    assert!(text.contains("agent.reward_scale"));
}

#[test]
fn shipped_config_files_match_the_presets() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["quick", "paper"] {
        let file = metaems::harness::ExperimentConfig::load(&root.join(format!("{name}.toml")), &[]).unwrap();
        assert_eq!(Some(file), metaems::harness::ExperimentConfig::preset(name), "{name}");
    }
}
