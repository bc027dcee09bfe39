//! Config-driven runs: parse, validate, execute, persist.

pub mod config;
mod runners;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::ExperimentConfig;

use crate::error::{Error, Result};
use crate::report::{Check, ExperimentResult};

/// Environment variable naming the default output directory.
pub const OUT_DIR_VAR: &str = "RLAIF_LAB_OUT";
pub const DEFAULT_OUT_DIR: &str = "results";
pub const RESULT_EXTENSION: &str = "result";

/// The bundled suite, one config per experiment kind.
pub const BUNDLED: [(&str, &str); 10] = [
    ("toy", include_str!("../../configs/toy.toml")),
    ("improve", include_str!("../../configs/improve.toml")),
    ("gap", include_str!("../../configs/gap.toml")),
    ("ceiling", include_str!("../../configs/ceiling.toml")),
    ("stein", include_str!("../../configs/stein.toml")),
    ("nonmonotone", include_str!("../../configs/nonmonotone.toml")),
    ("pareto", include_str!("../../configs/pareto.toml")),
    ("adversarial", include_str!("../../configs/adversarial.toml")),
    ("spectrum", include_str!("../../configs/spectrum.toml")),
    ("promptable", include_str!("../../configs/promptable.toml")),
];

/// What lands in a `.result` file: the config echoed back and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub config: ExperimentConfig,
    pub result: ExperimentResult,
}

/// `$RLAIF_LAB_OUT`, or `results`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_VAR).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from)
}

/// Parses and validates.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config = ExperimentConfig::from_toml(text)?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn execute(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let start = Instant::now();
    let mut result = runners::run(config)?;
    result.seed = config.seed;
    result.duration_secs = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Writes `<out>/<stem>.result` and one `<out>/<stem>.<table>.csv` per table.
pub fn write_outputs(out: &Path, stem: &str, config: &ExperimentConfig, result: &ExperimentResult) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let file = ResultFile {
        config: config.clone(),
        result: result.clone(),
    };
    let text = toml::to_string(&file).map_err(|e| Error::Parse(e.to_string()))?;
    let path = out.join(format!("{stem}.{RESULT_EXTENSION}"));
    fs::write(&path, text)?;
    let mut written = vec![path];
    for table in &result.tables {
        let path = out.join(format!("{stem}.{}.csv", table.name));
        fs::write(&path, table.to_csv())?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_result(path: &Path) -> Result<ResultFile> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn bundled_configs() -> Result<Vec<(&'static str, ExperimentConfig)>> {
    BUNDLED
        .iter()
        .map(|(name, text)| {
            let config = parse_config(text).map_err(|e| Error::Config {
                field: format!("bundled config `{name}`"),
                message: e.to_string(),
            })?;
            Ok((*name, config))
        })
        .collect()
}

/// Runs the bundled suite, optionally restricted to one kind and with the
/// seed replaced, writing outputs under `out` when given.
pub fn reproduce_all(only: Option<&str>, seed: Option<u64>, out: Option<&Path>) -> Result<Vec<(&'static str, ExperimentResult)>> {
    if let Some(kind) = only {
        if !config::ExperimentSpec::KINDS.contains(&kind) {
            return Err(Error::Config {
                field: "--only".into(),
                message: format!("unknown experiment kind `{kind}`; expected one of {}", config::ExperimentSpec::KINDS.join(", ")),
            });
        }
    }
    let mut results = Vec::new();
    for (name, mut config) in bundled_configs()? {
        if only.is_some_and(|kind| kind != config.experiment.kind()) {
            continue;
        }
        if let Some(seed) = seed {
            config.seed = seed;
        }
        let result = execute(&config)?;
        if let Some(out) = out {
            write_outputs(out, name, &config, &result)?;
        }
        results.push((name, result));
    }
    Ok(results)
}

/// `PASS|FAIL <experiment> <check> observed=... [expected=...] rule`.
pub fn format_check(experiment: &str, check: &Check) -> String {
    let status = if check.passed { "PASS" } else { "FAIL" };
    let expected = check.expected.map(|e| format!(" expected={e}")).unwrap_or_default();
    format!("{status} {experiment} {} observed={}{expected} ({})", check.name, check.observed, check.rule)
}

pub fn summary_lines(result: &ExperimentResult) -> Vec<String> {
    result.checks.iter().map(|c| format_check(&result.experiment, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse_and_cover_every_kind() {
        let configs = bundled_configs().unwrap();
        let kinds: Vec<&str> = configs.iter().map(|(_, c)| c.experiment.kind()).collect();
        assert_eq!(kinds, config::ExperimentSpec::KINDS);
        for (name, c) in &configs {
            assert_eq!(*name, c.experiment.kind());
        }
    }

    #[test]
    fn unknown_only_kind_is_rejected() {
        let err = reproduce_all(Some("nope"), None, None).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "--only"), "{err}");
    }

    #[test]
    fn result_file_round_trips() {
        let config = parse_config(BUNDLED[0].1).unwrap();
        let mut result = ExperimentResult::new("toy", config.seed);
        result.metric("x", 0.1 + 0.2);
        result.check(Check::absolute("x", 0.3, 0.3, 1e-12));
        let dir = tempfile::tempdir().unwrap();
        let written = write_outputs(dir.path(), "toy", &config, &result).unwrap();
        let back = read_result(&written[0]).unwrap();
        assert_eq!(back.config, config);
        assert_eq!(back.result, result);
    }

    #[test]
    fn summary_line_format() {
        let c = Check::at_most("n", 0.0, 0.0);
        assert_eq!(format_check("pareto", &c), "PASS pareto n observed=0 expected=0 (observed <= expected)");
    }
}
