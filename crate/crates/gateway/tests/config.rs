use std::path::PathBuf;
use std::process::Command;

use gateway_cli::config::{parse_config, ConfigError};

fn example() -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("config/gateway.example.yaml");
    std::fs::read_to_string(path).unwrap()
}

fn env(name: &str) -> Option<String> {
    matches!(name, "GATEWAY_MQTT_PASSWORD" | "GATEWAY_SINK_TOKEN").then(|| format!("value-of-{name}"))
}

#[test]
fn example_config_is_valid() {
    let loaded = parse_config(&example(), env).unwrap();
    let cfg = loaded.config;
    assert_eq!(cfg.devices.len(), 5);
    assert!(loaded.warnings.is_empty(), "{:?}", loaded.warnings);
    let counts: Vec<usize> = cfg.devices.iter().map(|d| d.parameter_names().len()).collect();
    assert_eq!(&counts[..3], &[23, 29, 29]);
    assert_eq!(cfg.devices[1].modbus.as_ref().unwrap().policy.port, 10000);
    assert_eq!(cfg.devices[2].historical().unwrap().data_bindings.len(), 29);
    assert_eq!(cfg.brokers[0].broker.password.as_deref(), Some("value-of-GATEWAY_MQTT_PASSWORD"));
}

#[test]
fn example_config_without_env_names_both_variables() {
    let ConfigError::Invalid(problems) = parse_config(&example(), |_| None).unwrap_err() else { panic!() };
    assert!(problems.iter().any(|p| p.contains("GATEWAY_MQTT_PASSWORD")));
    assert!(problems.iter().any(|p| p.contains("GATEWAY_SINK_TOKEN")));
}

#[test]
fn rule_matching_nothing_is_a_warning() {
    let text = example().replace("!wildcard \"radoneye-*\"", "!wildcard \"radon-eye-*\"");
    let loaded = parse_config(&text, env).unwrap();
    assert_eq!(loaded.warnings.len(), 1);
    assert!(loaded.warnings[0].contains("radon-limit"));
}

#[test]
fn protocol_sections_must_agree() {
    let text = example().replace("    protocol: bacnet\n", "    protocol: modbus\n");
    let ConfigError::Invalid(problems) = parse_config(&text, env).unwrap_err() else { panic!() };
    assert!(problems.iter().any(|p| p.contains("rector1")), "{problems:?}");
}

#[test]
fn yaml_syntax_error_has_a_line() {
    let text = example().replace("  - id: rector1", "  - id: [rector1");
    match parse_config(&text, env).unwrap_err() {
        ConfigError::Parse { line: Some(l), .. } => assert!(l > 40),
        e => panic!("{e:?}"),
    }
}

#[test]
fn validate_command_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.yaml");
    std::fs::write(&good, example()).unwrap();
    let bin = env!("CARGO_BIN_EXE_gateway");
    let out = Command::new(bin)
        .args(["validate", "-c"])
        .arg(&good)
        .env("GATEWAY_MQTT_PASSWORD", "p")
        .env("GATEWAY_SINK_TOKEN", "t")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("5 devices"));

    let out = Command::new(bin)
        .args(["validate", "-c"])
        .arg(&good)
        .env_remove("GATEWAY_MQTT_PASSWORD")
        .env_remove("GATEWAY_SINK_TOKEN")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("GATEWAY_SINK_TOKEN"));
}

#[test]
fn demo_config_is_valid() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("config/demo.yaml");
    let loaded = parse_config(&std::fs::read_to_string(path).unwrap(), |_| None).unwrap();
    assert!(loaded.warnings.is_empty(), "{:?}", loaded.warnings);
    let sims = loaded.config.simulators.unwrap();
    assert_eq!((sims.modbus.len(), sims.bacnet.len()), (2, 1));
    assert_eq!(sims.fleet.unwrap().fleet.device_count(), 2);
}
