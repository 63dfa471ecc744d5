mod common;

use std::path::PathBuf;

use fedsim::engine::{run, RecordKind};
use fedsim::metrics::migration_counts;
use fedsim::model::{AgentId, Money};
use fedsim::{compute_metrics, emit_report, load_scenario, parse_report, ReportFormat, Scenario, ScenarioError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn example_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/three_brokers.toml")
}

#[test]
fn bundled_example_loads_and_echoes() {
    let scenario = load_scenario(example_path()).unwrap();
    assert_eq!(scenario.brokers.len(), 3);
    let echoed = scenario.to_toml_string();
    assert_eq!(Scenario::from_toml_str(&echoed).unwrap(), scenario);
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_scenario(dir.path().join("absent.toml")).unwrap_err();
    assert!(matches!(err, ScenarioError::Io { .. }));
}

#[test]
fn random_scenarios_echo_idempotently() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenario = common::random_scenario(&mut rng, &common::Shape::fuzz());
        let once = Scenario::from_toml_str(&scenario.to_toml_string()).unwrap();
        assert_eq!(once, scenario);
        assert_eq!(once.to_toml_string(), scenario.to_toml_string());
    }
}

#[test]
fn file_written_to_disk_round_trips() {
    let scenario = load_scenario(example_path()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("echo.toml");
    std::fs::write(&path, scenario.to_toml_string()).unwrap();
    assert_eq!(load_scenario(&path).unwrap(), scenario);
}

#[test]
fn single_provider_has_zero_global_gap() {
    let text = r#"
resource_types = ["cpu"]
[[brokers]]
id = 0
visibility = [0]
[[providers]]
id = 0
capacity = { cpu = 8 }
prices = { cpu = 1.5 }
[[consumers]]
id = 0
broker = 0
[[consumers.requests]]
issue = 0
est = 1
dlt = 5
pl = 50.0
task_duration = 2
bundle = { cpu = 2 }
"#;
    let out = run(&Scenario::from_toml_str(text).unwrap(), 0).unwrap();
    let report = compute_metrics(&out.trace, &out.world);
    assert_eq!(report.global_gap, 0.0);
    assert_eq!(report.global_gap_samples, 1);
    assert_eq!(report.satisfaction_rate, 1.0);
    assert_eq!(report.mean_paid, Money::from_cents(1200));
    assert_eq!(report.messages["CFP"], 2);
    assert_eq!(report.messages["INFORM"], 2);
}

/// Three requests: one served at its source, one after one hop and one
/// after two hops (the middle broker's only provider is too expensive).
#[test]
fn migration_counts_match_manual_count() {
    let text = r#"
resource_types = ["cpu"]
[[brokers]]
id = 0
neighbors = [1]
visibility = [0]
[[brokers]]
id = 1
neighbors = [0, 2]
visibility = [1]
[[brokers]]
id = 2
neighbors = [1]
visibility = [2]
[[providers]]
id = 0
capacity = { cpu = 1 }
prices = { cpu = 1.0 }
[[providers]]
id = 1
capacity = { cpu = 8 }
prices = { cpu = 9.0 }
[[providers]]
id = 2
capacity = { cpu = 8 }
prices = { cpu = 1.0 }
[[consumers]]
id = 0
broker = 0
[[consumers.requests]]
issue = 0
est = 0
dlt = 10
pl = 20.0
task_duration = 5
bundle = { cpu = 1 }
[[consumers.requests]]
issue = 0
est = 0
dlt = 10
pl = 20.0
task_duration = 5
bundle = { cpu = 2 }
[[consumers]]
id = 1
broker = 1
[[consumers.requests]]
issue = 0
est = 0
dlt = 10
pl = 95.0
task_duration = 5
bundle = { cpu = 1 }
"#;
    let out = run(&Scenario::from_toml_str(text).unwrap(), 0).unwrap();
    let manual: Vec<_> = out
        .trace
        .iter()
        .filter(|r| r.kind == RecordKind::Deliver && r.action == "CFP" && r.digest.starts_with("req:") && common::digest_migrations(&r.digest).unwrap_or(0) > 0)
        .collect();
    let counts = migration_counts(&out.trace);
    assert_eq!(counts.values().sum::<u64>(), manual.len() as u64);
    // C0#1 needs two cpu units: P0 is too small and P1 too dear, so it walks B0 -> B1 -> B2
    let c01 = fedsim::model::ConversationId { consumer: AgentId::consumer(0), seq: 1 };
    assert_eq!(counts.get(&c01), Some(&2));
    let report = compute_metrics(&out.trace, &out.world);
    assert_eq!(report.max_migrations, 2);
    assert_eq!(report.done, 3);
}

#[test]
fn metrics_are_pure_and_reports_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let scenario = common::random_scenario(&mut rng, &common::Shape::fuzz());
    let out = run(&scenario, 3).unwrap();
    let report = compute_metrics(&out.trace, &out.world);
    assert_eq!(compute_metrics(&out.trace, &out.world), report);
    assert_eq!(parse_report(&emit_report(&report, ReportFormat::Toml)).unwrap(), report);
    assert!(report.satisfaction_rate >= 0.0 && report.satisfaction_rate <= 1.0);
    assert_eq!(report.done + report.failed, report.requests);
    assert_eq!(report.local_optimality_violations, 0);
    let text = emit_report(&report, ReportFormat::Text);
    assert!(text.contains(&format!("{:.4}", report.satisfaction_rate)));
}
