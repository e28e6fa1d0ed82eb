use super::*;
use crate::testutil::small_agent_config;

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::quick();
    c.n_repeat_seeds = 2;
    c.zones = vec![2];
    c.n_source_buildings = 3;
    c.n_target_buildings = 2;
    c.agent = small_agent_config();
    c.meta.building_batch_size = 2;
    c.meta.rounds = Some(1);
    c.methods.rl_mpc = false;
    c.methods.pretrained = false;
    c
}

#[test]
fn source_and_target_buildings_are_disjoint() {
    let mut c = tiny();
    c.n_source_buildings = 8;
    c.n_target_buildings = 3;
    let b = zone_buildings(&c, 1, job_seed(7, 1, 0)).unwrap();
    assert_eq!((b.sources.len(), b.targets.len()), (8, 3));
    for t in &b.targets {
        assert!(b.sources.iter().all(|s| s.trace() != t.trace()));
    }
    // Other repeat seeds draw other buildings.
    let other = zone_buildings(&c, 1, job_seed(7, 1, 1)).unwrap();
    assert_ne!(b.targets[0].config(), other.targets[0].config());
}

#[test]
fn method_selection_and_names() {
    let mut t = MethodToggles::default();
    assert_eq!(enabled_methods(&t), Method::ALL.to_vec());
    t.maml = false;
    t.no_control = false;
    assert!(!enabled_methods(&t).contains(&Method::Maml));
    assert_eq!(enabled_methods(&t)[0], Method::Rbc);
    for m in Method::ALL {
        assert_eq!(Method::parse(m.name()), Some(m));
    }
    assert_eq!(Method::parse("nope"), None);
}

#[test]
fn sample_std_over_seeds() {
    assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
}

#[test]
fn experiment_is_deterministic_and_reports_are_consistent() {
    let c = tiny();
    let a = run_experiment(&c, 1, &JobOptions::default()).unwrap();
    let b = run_experiment(&c, 2, &JobOptions::default()).unwrap();
    assert_eq!(a.summary(), b.summary());
    assert_eq!(a.config_hash, b.config_hash);

    // The reference normalises itself to exactly 100 percent.
    for r in a.summary().iter().filter(|r| r.method == Method::Rbc) {
        assert_eq!(r.avg_cost_mean, 100.0);
        assert_eq!(r.avg_cost_std, 0.0);
        assert_eq!(r.n_seeds, 2);
    }
    for e in a.scores.iter().flat_map(|s| &s.episodes).filter(|e| e.method == Method::Rbc) {
        assert!(e.district_normalized.values().iter().all(|v| *v == 1.0));
    }

    let dir = tempfile::tempdir().unwrap();
    write_reports(&a, dir.path()).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    write_reports(&b, dir2.path()).unwrap();
    for f in ["summary.csv", "breakdown.csv", "buildings.csv", "curves.csv", "meta_log.csv", "summary.txt"] {
        let x = std::fs::read(dir.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(dir2.path().join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(read_summary_csv(&dir.path().join("summary.csv")).unwrap().len(), a.summary().len());

    let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    let lines: Vec<&str> = curves.lines().collect();
    let methods = a.methods().len();
    assert_eq!(lines[0].split(',').count(), 4 + methods);
    assert_eq!(lines.iter().filter(|l| l.starts_with("accumulated_reward")).count(), c.test_episodes);
    assert_eq!(lines.iter().filter(|l| l.starts_with("daily_net_consumption")).count(), c.episode_length / 24);

    let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(text.contains("metaems"));
}

#[test]
fn checkpoints_round_trip_and_resume() {
    let c = tiny();
    let trained = run_experiment(&c, 1, &JobOptions { checkpoint_dir: None, train_only: true }).unwrap();
    assert!(trained.scores.is_empty());
    let dir = tempfile::tempdir().unwrap();
    write_reports(&trained, dir.path()).unwrap();
    let ckpt = dir.path().join("checkpoints");
    let name = meta_checkpoint_name(Method::MetaEms, 2, 0);
    let loaded: MetaState = load_checkpoint(&ckpt.join(&name)).unwrap();
    assert_eq!(Some(&loaded), trained.jobs[0].meta.as_ref());

    let again = dir.path().join("again.ckpt");
    save_checkpoint(&again, &loaded).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(ckpt.join(&name)).unwrap());

    // Testing from the saved initialisation matches training and testing in one go.
    let mut only = c.clone();
    only.methods = MethodToggles {
        no_control: false,
        random_init: false,
        pretrained: false,
        maml: false,
        rl_mpc: false,
        metaems: true,
    };
    let direct = run_experiment(&only, 1, &JobOptions::default()).unwrap();
    let resumed = run_experiment(&only, 1, &JobOptions { checkpoint_dir: Some(ckpt.clone()), train_only: false }).unwrap();
    assert_eq!(direct.summary(), resumed.summary());

    let mut bytes = std::fs::read(ckpt.join(&name)).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(ckpt.join(&name), bytes).unwrap();
    let err = run_experiment(&only, 1, &JobOptions { checkpoint_dir: Some(ckpt), train_only: false }).unwrap_err();
    assert!(err.is_config());
}

#[test]
fn checkpoint_with_other_architecture_is_rejected() {
    let c = tiny();
    let trained = run_experiment(&c, 1, &JobOptions { checkpoint_dir: None, train_only: true }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_reports(&trained, dir.path()).unwrap();
    let mut wide = c.clone();
    wide.agent.hidden_layers = vec![16, 16];
    let err = run_experiment(&wide, 1, &JobOptions { checkpoint_dir: Some(dir.path().join("checkpoints")), train_only: false })
        .unwrap_err();
    assert!(err.to_string().contains("hidden_layers"));
}

#[test]
fn missing_rbc_table_is_a_config_error() {
    let mut c = tiny();
    c.rbc_table = "/nonexistent/rules.csv".into();
    let err = run_experiment(&c, 1, &JobOptions::default()).unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("/nonexistent/rules.csv"));
}

#[test]
fn improvement_column_only_when_best() {
    let row = |m, v: f64| BreakdownRow {
        zone: "all".into(),
        method: m,
        episode: 1,
        aggregation: "district",
        values: ScoreReport::from_values([v; 6]),
    };
    let summary = vec![];
    let t = render_summary_text(&summary, &[row(Method::Rbc, 1.0), row(Method::MetaEms, 0.8)]);
    assert!(t.contains("20.00%"));
    let t = render_summary_text(&summary, &[row(Method::Rbc, 1.0), row(Method::MetaEms, 1.2)]);
    let last = t.lines().last().unwrap();
    assert!(last.starts_with("improvement") && !last.contains('%'));
}

#[test]
fn first_episode_does_not_depend_on_later_ones() {
    let one = tiny();
    let mut two = tiny();
    two.test_episodes = 2;
    let a = run_experiment(&one, 1, &JobOptions::default()).unwrap();
    let b = run_experiment(&two, 1, &JobOptions::default()).unwrap();
    let first: Vec<SummaryRow> = b.summary().into_iter().filter(|r| r.episode == 1).collect();
    assert_eq!(a.summary(), first);
}
