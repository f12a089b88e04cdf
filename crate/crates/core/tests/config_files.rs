mod checks;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;

use checks::{fixture, fuzzed_configs, reference_sessions};
use scenofuzz_core::config::{documented_defaults, load_config, parse_config, to_yaml};
use scenofuzz_core::runner::{run_scenario, OracleConfig, RunOptions};
use scenofuzz_core::scenario::to_json;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bundled_configs() -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(repo().join("configs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "yaml"))
        .collect();
    out.sort();
    out
}

#[test]
fn sample_config_is_reproduced() {
    checks::config_fidelity().unwrap();
}

#[test]
fn every_bundled_config_loads_and_builds() {
    let configs = bundled_configs();
    assert!(configs.len() >= 5);
    for path in configs {
        let cfg = load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let setup = cfg.campaign_setup(Some(&repo().join("configs"))).unwrap();
        assert!(setup.template.npc_vehicles.len() >= 1, "{}", path.display());
    }
}

#[test]
fn yaml_round_trip_preserves_config() {
    for path in bundled_configs() {
        let cfg = load_config(&path).unwrap();
        let again = parse_config(&to_yaml(&cfg)).unwrap();
        assert_eq!(again, cfg, "{}", path.display());
    }
}

#[test]
fn empty_oracle_section_gives_defaults() {
    let text = std::fs::read_to_string(repo().join("configs/avfuzzer.yaml")).unwrap();
    let stripped: String = text.split("  # Oracle Setting").next().unwrap().to_string();
    let cfg = parse_config(&format!("{stripped}  oracle: {{}}\n")).unwrap();
    assert_eq!(cfg.oracles(), OracleConfig::default());
    assert_eq!(cfg.oracles().collision_threshold, 0.01);
}

#[test]
fn documented_defaults_match_code() {
    let doc = std::fs::read_to_string(repo().join("docs/config.md")).unwrap();
    let section = doc.split("## Defaults").nth(1).unwrap().split("\n## ").next().unwrap();
    let table: BTreeMap<String, String> = section
        .lines()
        .filter(|l| l.starts_with("| `"))
        .map(|l| {
            let cells: Vec<&str> = l.split('|').map(str::trim).collect();
            (cells[1].trim_matches('`').to_string(), cells[2].to_string())
        })
        .collect();
    let code: BTreeMap<String, String> = documented_defaults().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    assert_eq!(table, code);
}

#[test]
fn bad_values_name_their_path() {
    let base = std::fs::read_to_string(repo().join("configs/avfuzzer.yaml")).unwrap();
    let cases = [
        ("pm: 0.6", "pm: 1.5", "testing_engine.algorithm.parameters.pm"),
        ("population_size: 4", "population_size: 1", "testing_engine.algorithm.parameters.population_size"),
        ("threshold: 0.01", "threshold: -1", "testing_engine.oracle"),
        ("name: ApolloSim", "name: Carla", "scenario_runner.name"),
        ("name: avfuzzer", "name: hillclimb", "testing_engine.algorithm.name"),
        ("debug: true", "debug: true\n  verbose: 1", "system.verbose"),
    ];
    for (from, to, path) in cases {
        let err = parse_config(&base.replacen(from, to, 1)).unwrap_err();
        assert_eq!(err.path(), path, "{to}: {err}");
    }
}

/// Compiles `schema`, resolving the relative scenario reference in place.
fn validator(name: &str) -> jsonschema::Validator {
    let read = |n: &str| -> Value { serde_json::from_str(&std::fs::read_to_string(repo().join("docs/schema").join(n)).unwrap()).unwrap() };
    let mut schema = read(name);
    if name == "recording.schema.json" {
        let mut scenario = read("scenario.schema.json");
        let defs = scenario.as_object_mut().unwrap().remove("$defs").unwrap();
        scenario.as_object_mut().unwrap().remove("$id");
        scenario.as_object_mut().unwrap().remove("$schema");
        // scenario-internal refs point at its own $defs; hoist them under a prefix
        let text = serde_json::to_string(&scenario).unwrap().replace("#/$defs/", "#/$defs/scenario_");
        let defs_text = serde_json::to_string(&defs).unwrap().replace("#/$defs/", "#/$defs/scenario_");
        let scenario: Value = serde_json::from_str(&text).unwrap();
        let defs: serde_json::Map<String, Value> = serde_json::from_str(&defs_text).unwrap();
        let own = schema["$defs"].as_object_mut().unwrap();
        for (k, v) in defs {
            own.insert(format!("scenario_{k}"), v);
        }
        own.insert("scenario".into(), scenario);
        schema["properties"]["config_snapshot"] = serde_json::json!({"$ref": "#/$defs/scenario"});
    }
    jsonschema::validator_for(&schema).unwrap()
}

#[test]
fn scenario_documents_match_schema() {
    let v = validator("scenario.schema.json");
    for template in ["junction", "left_turn"] {
        let (configs, _) = fuzzed_configs(template, 20, 1);
        for cfg in configs {
            let doc: Value = serde_json::from_str(&to_json(&cfg)).unwrap();
            let errors: Vec<String> = v.iter_errors(&doc).map(|e| e.to_string()).collect();
            assert!(errors.is_empty(), "{errors:?}");
        }
    }
    let (cfg, _) = fixture("junction");
    let mut doc: Value = serde_json::from_str(&to_json(&cfg)).unwrap();
    doc.as_object_mut().unwrap().remove("ego");
    assert!(!v.is_valid(&doc));
    doc = serde_json::from_str(&to_json(&cfg)).unwrap();
    doc["schema_version"] = 2.into();
    assert!(!v.is_valid(&doc));
}

#[test]
fn recordings_match_schema() {
    let v = validator("recording.schema.json");
    for (template, faulty) in [("junction", false), ("junction", true), ("left_turn", false)] {
        let (cfg, map) = fixture(template);
        let rec = run_scenario(&cfg, &map, &reference_sessions(&cfg, &map, faulty), &OracleConfig::default(), &RunOptions::default())
            .unwrap();
        let doc = serde_json::to_value(&rec).unwrap();
        let errors: Vec<String> = v.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{template}: {errors:?}");
        assert!(v.is_valid(&serde_json::to_value(rec.summary()).unwrap()));
    }
}
