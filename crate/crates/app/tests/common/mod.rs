#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use duacm_app::bundle::ModelBundle;
use duacm_app::commands;
use duacm_app::config::RunConfig;
use duacm_core::cohort::read_cohort;
use duacm_core::Cohort;

/// Small cohort and light training so a full pipeline run takes seconds.
pub const QUICK_CONFIG: &str = r#"
seed = 5

[cohort]
preset = "confusable"
n_patients = 4000

[gam]
inner_bags = 2
outer_bags = 2
max_rounds = 300

[mlp]
epochs = 10
learning_rates = [0.03]
weight_decays = [0.0001]

[experiment]
min_patients = 500

[experiment.harness.gam]
inner_bags = 2
outer_bags = 1
max_rounds = 300
"#;

pub fn quick_config() -> RunConfig {
    RunConfig::from_toml(QUICK_CONFIG).unwrap()
}

/// Cohort and bundle trained in-process with [`QUICK_CONFIG`].
pub fn fixture() -> &'static (Cohort, ModelBundle) {
    static FIXTURE: OnceLock<(Cohort, ModelBundle)> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let config = quick_config();
        let bytes = commands::generate(&config).unwrap();
        let cohort = read_cohort(bytes.as_slice()).unwrap();
        let bundle = commands::train(&config, &cohort).unwrap();
        (cohort, bundle)
    })
}

pub fn duacm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duacm"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

/// Runs the binary and panics with its stderr if it fails.
pub fn duacm_ok(dir: &Path, args: &[&str]) -> Output {
    let out = duacm(dir, args);
    assert!(
        out.status.success(),
        "duacm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Header and rows of a tab-separated table.
pub fn read_tsv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split('\t').map(String::from).collect();
    let rows = lines.map(|l| l.split('\t').map(String::from).collect()).collect();
    (header, rows)
}

pub fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}
