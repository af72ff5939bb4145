use dunkl_sparse::harness::{emit, run, Format, RunConfig, RunReport, EXPERIMENTS};

fn small() -> RunConfig {
    RunConfig {
        resolution: 64,
        sparse_trials: 4,
        commutator_trials: 3,
        weighted_trials: 3,
        rdf_trials: 3,
        rdf_terms: 12,
        wp_draws: 40,
        samples: 200,
        batches: 2,
        check_resolution: false,
        experiments: EXPERIMENTS.iter().map(|s| s.to_string()).collect(),
        ..RunConfig::default()
    }
}

#[test]
fn small_run_is_deterministic_and_round_trips() {
    let cfg = small();
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.numeric_json().unwrap(), b.numeric_json().unwrap());
    let names: Vec<&str> = a.blocks.iter().map(|b| b.name.as_str()).collect();
    assert_eq!(names, EXPERIMENTS);
    assert!(a.blocks.iter().all(|b| b.error.is_none()), "{:?}", a.blocks.iter().map(|b| &b.error).collect::<Vec<_>>());

    let back = RunReport::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back.numeric_json().unwrap(), a.numeric_json().unwrap());

    let dir = tempfile::tempdir().unwrap();
    let csv = std::fs::read_to_string(emit(&a, dir.path(), Format::Csv).unwrap()).unwrap();
    let rows = a.rows().count();
    assert!(rows > 0);
    assert_eq!(csv.lines().count(), rows + 1);
    let json = std::fs::read_to_string(emit(&a, dir.path(), Format::Json).unwrap()).unwrap();
    assert_eq!(RunReport::from_json(&json).unwrap(), a);
}

#[test]
fn empty_report_emits_valid_files() {
    let r = RunReport::empty(RunConfig::default());
    let dir = tempfile::tempdir().unwrap();
    let csv = std::fs::read_to_string(emit(&r, dir.path(), Format::Csv).unwrap()).unwrap();
    assert_eq!(csv, "experiment,case,resolution,batch,trial,ratio\n");
    let json = std::fs::read_to_string(emit(&r, dir.path(), Format::Json).unwrap()).unwrap();
    let back = RunReport::from_json(&json).unwrap();
    assert!(back.blocks.is_empty() && back.pass);
}

#[test]
fn config_round_trip_and_validation() {
    let cfg = small();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    for dir in ["lebesgue", "rank_one", "z2z2"] {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{dir}.toml"));
        RunConfig::load(&path).unwrap().validate().unwrap();
    }
    let bad = [
        RunConfig { kernel: "nope".into(), ..small() },
        RunConfig { weights: vec!["power:1".into()], ..small() },
        RunConfig { experiments: vec!["everything".into()], ..small() },
        RunConfig { resolution: 4, ..small() },
        RunConfig { delta: 0.75, ..small() },
        RunConfig { p: vec![1.0], ..small() },
        RunConfig { bounds: [1.0, -1.0], ..small() },
        RunConfig { root_system: "e8".into(), ..small() },
    ];
    for cfg in bad {
        assert!(run(&cfg).is_err(), "{cfg:?}");
    }
    assert!(RunConfig::from_toml("unknown_field = 1").is_err());
}

#[test]
fn experiments_run_in_dependency_order() {
    let cfg = RunConfig { experiments: vec!["dyadic".into(), "reflection".into()], ..small() };
    assert_eq!(cfg.ordered_experiments(), vec!["reflection", "dyadic"]);
    let r = run(&cfg).unwrap();
    assert!(r.pass && r.blocks.len() == 2);
}

#[test]
fn failing_block_does_not_stop_the_run() {
    // The lower-bound ball pair does not fit at this center, so only that block fails.
    let mut cfg = RunConfig { experiments: vec!["reflection".into(), "lower".into(), "measure".into()], ..small() };
    cfg.lower.center = Some(vec![0.9]);
    let r = run(&cfg).unwrap();
    assert!(!r.pass);
    let lower = r.block("lower").unwrap();
    assert!(!lower.pass && lower.error.is_some());
    assert!(r.block("reflection").unwrap().pass && r.block("measure").unwrap().pass);
}
