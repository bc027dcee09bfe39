//! Named outcomes of an experiment and the checks declared against them.

use serde::{Deserialize, Serialize};

use crate::mc::Estimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

/// A pass/fail comparison with its tolerance carried inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    /// Absolute tolerance actually applied (for std-error rules, `k * se`).
    pub tolerance: f64,
    pub rule: String,
}

impl Check {
    /// `|observed - expected| <= tol`.
    pub fn absolute(name: impl Into<String>, observed: f64, expected: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            passed: (observed - expected).abs() <= tol,
            observed,
            expected: Some(expected),
            tolerance: tol,
            rule: format!("|observed - expected| <= {tol:e}"),
        }
    }

    /// `|estimate - expected| <= k * se`.
    pub fn std_errors(name: impl Into<String>, estimate: Estimate, expected: f64, k: f64) -> Self {
        Self {
            name: name.into(),
            passed: estimate.within(expected, k),
            observed: estimate.value,
            expected: Some(expected),
            tolerance: k * estimate.std_error,
            rule: format!("|observed - expected| <= {k} std errors"),
        }
    }

    pub fn at_most(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            passed: observed <= bound,
            observed,
            expected: Some(bound),
            tolerance: 0.0,
            rule: "observed <= expected".into(),
        }
    }

    pub fn at_least(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            passed: observed >= bound,
            observed,
            expected: Some(bound),
            tolerance: 0.0,
            rule: "observed >= expected".into(),
        }
    }

    /// A boolean property; `observed` records a supporting number (a count, a residual).
    pub fn holds(name: impl Into<String>, passed: bool, observed: f64, rule: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            observed,
            expected: None,
            tolerance: 0.0,
            rule: rule.into(),
        }
    }
}

/// A CSV table emitted next to the result file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: String,
    pub version: String,
    pub seed: u64,
    /// Wall clock; the only field that differs between identical runs.
    pub duration_secs: f64,
    pub metrics: Vec<Metric>,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl ExperimentResult {
    pub fn new(experiment: impl Into<String>, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            duration_secs: 0.0,
            metrics: Vec::new(),
            checks: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push(Metric {
            name: name.into(),
            value,
            std_error: None,
        });
    }

    pub fn estimate(&mut self, name: impl Into<String>, est: Estimate) {
        self.metrics.push(Metric {
            name: name.into(),
            value: est.value,
            std_error: Some(est.std_error),
        });
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Appends everything from `other`, prefixing names with `prefix/`.
    pub fn absorb(&mut self, prefix: &str, other: ExperimentResult) {
        for mut m in other.metrics {
            m.name = format!("{prefix}/{}", m.name);
            self.metrics.push(m);
        }
        for mut c in other.checks {
            c.name = format!("{prefix}/{}", c.name);
            self.checks.push(c);
        }
        self.tables.extend(other.tables);
    }
}
