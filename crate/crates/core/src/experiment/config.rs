//! TOML experiment configuration.
//!
//! ```toml
//! seed = 2024
//!
//! [world]
//! v_star = [1.0, 0.0]
//! sigma_eps = 0.5
//! sigma = { kind = "identity" }
//!
//! [experiment]
//! kind = "improve"
//! v_c = [0.95, 0.31]
//! lambdas = [0.001, 0.01, 0.1, 1.0]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_world::RepresentationWorld;
use crate::linear_model::{Covariance, Direction, ValueEncoding};
use crate::nonlinear::{FamilyMember, PromptableFamily, SafetyFunction};

fn invalid(field: impl Into<String>, message: impl std::fmt::Display) -> Error {
    Error::Config {
        field: field.into(),
        message: message.to_string(),
    }
}

/// Tags a lower-level error with the config field it came from.
fn at<T>(field: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| invalid(field, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<WorldSpec>,
    pub experiment: ExperimentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    /// Optional; must agree with every vector when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: SigmaSpec,
    pub v_star: Vec<f64>,
    #[serde(default)]
    pub sigma_eps: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    #[default]
    Identity,
    Diagonal {
        values: Vec<f64>,
    },
    Dense {
        row_major: Vec<f64>,
    },
    /// Given eigenvalues on a random orthonormal basis.
    Spectrum {
        eigenvalues: Vec<f64>,
        seed: u64,
    },
}

impl SigmaSpec {
    pub fn build(&self, d: usize) -> Result<Covariance> {
        match self {
            Self::Identity => Covariance::identity(d),
            Self::Diagonal { values } => {
                check_len("world.sigma.values", values.len(), d)?;
                Covariance::diagonal(values)
            }
            Self::Dense { row_major } => {
                check_len("world.sigma.row_major", row_major.len(), d * d)?;
                Covariance::from_row_major(d, row_major)
            }
            Self::Spectrum { eigenvalues, seed } => {
                check_len("world.sigma.eigenvalues", eigenvalues.len(), d)?;
                Covariance::from_spectrum(eigenvalues, *seed)
            }
        }
    }
}

fn check_len(field: &str, found: usize, expected: usize) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(invalid(field, format!("expected {expected} entries, found {found}")))
    }
}

impl WorldSpec {
    pub fn dim(&self) -> usize {
        self.v_star.len()
    }

    pub fn build(&self) -> Result<RepresentationWorld> {
        let d = self.dim();
        if d == 0 {
            return Err(invalid("world.v_star", "must be nonempty"));
        }
        if let Some(declared) = self.d {
            check_len("world.v_star", d, declared)?;
        }
        let v_star = at("world.v_star", Direction::new(self.v_star.clone()))?;
        let mu = match &self.mu {
            Some(m) => {
                check_len("world.mu", m.len(), d)?;
                at("world.mu", Direction::new(m.clone()))?
            }
            None => Direction::zeros(d)?,
        };
        let sigma = at("world.sigma", self.sigma.build(d))?;
        let encoding = at("world.sigma_eps", ValueEncoding::new(v_star, self.sigma_eps))?;
        RepresentationWorld::new(mu, sigma, encoding)
    }
}

fn default_n_samples() -> usize {
    100_000
}
fn default_lambda_grid() -> Vec<f64> {
    vec![0.001, 0.01, 0.1, 1.0]
}
fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentSpec {
    Toy(ToySpec),
    Improve(ImproveSpec),
    Gap(GapSpec),
    Ceiling(CeilingSpec),
    Stein(SteinSpec),
    Nonmonotone(NonmonotoneSpec),
    Pareto(ParetoSpec),
    Adversarial(AdversarialSpec),
    Spectrum(SpectrumSpec),
    Promptable(PromptableSpec),
}

impl ExperimentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Toy(_) => "toy",
            Self::Improve(_) => "improve",
            Self::Gap(_) => "gap",
            Self::Ceiling(_) => "ceiling",
            Self::Stein(_) => "stein",
            Self::Nonmonotone(_) => "nonmonotone",
            Self::Pareto(_) => "pareto",
            Self::Adversarial(_) => "adversarial",
            Self::Spectrum(_) => "spectrum",
            Self::Promptable(_) => "promptable",
        }
    }

    pub const KINDS: [&'static str; 10] = [
        "toy",
        "improve",
        "gap",
        "ceiling",
        "stein",
        "nonmonotone",
        "pareto",
        "adversarial",
        "spectrum",
        "promptable",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImproveSpec {
    /// Constitution direction for the configured world.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_c: Option<Vec<f64>>,
    #[serde(default = "default_lambda_grid")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_worlds: Option<RandomWorldSweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<PreferenceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomWorldSweep {
    pub count: usize,
    pub dim: usize,
    pub lambdas: Vec<f64>,
    /// Required agreement of the closed form with `lambda * v*^T Sigma v_c`.
    #[serde(default = "default_exactness")]
    pub exactness_tolerance: f64,
}

fn default_exactness() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceSpec {
    pub n_pairs: usize,
    #[serde(default = "default_one")]
    pub lambda: f64,
    pub max_angle_deg: f64,
    pub min_gain_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSpec {
    pub etas: Vec<f64>,
    pub alpha_c: f64,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CeilingSpec {
    pub rho_grid: Vec<f64>,
    #[serde(default = "default_one")]
    pub sigma_s: f64,
    pub n_trials: usize,
    /// Absolute tolerance on Monte Carlo regret against the closed form.
    pub tolerance: f64,
    /// Draws for the expected-maximum oracle.
    pub max_draws: usize,
    pub max_tolerance: f64,
    /// Candidate counts beyond two, compared against the two-candidate regret.
    #[serde(default)]
    pub extra_candidates: Vec<usize>,
    /// Encoding quality at which full representation sampling cross-checks the direct path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_check_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteinSpec {
    pub n_worlds: usize,
    pub dim: usize,
    pub n_samples: usize,
    pub remainder_lambdas: Vec<f64>,
    pub linear_lambdas: Vec<f64>,
    #[serde(default = "default_one")]
    pub saturating_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonmonotoneSpec {
    pub v: Vec<f64>,
    pub tau: f64,
    /// Values of `<mu, v>` to probe; the world mean is shifted along `v`.
    pub projections: Vec<f64>,
    pub lambda: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoSpec {
    #[serde(default)]
    pub objective_sets: Vec<ObjectiveSet>,
    pub random_instances: usize,
    pub max_objectives: usize,
    pub max_dim: usize,
    /// Angles between two objectives, in degrees.
    pub thetas_deg: Vec<f64>,
    pub fraction_draws: usize,
    pub fraction_tolerance: f64,
    pub optimal_trials: usize,
    pub competitors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSet {
    pub label: String,
    pub v_stars: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_empty: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_weights: Option<Vec<f64>>,
    #[serde(default = "default_weights_tolerance")]
    pub weights_tolerance: f64,
}

fn default_weights_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialSpec {
    /// Spanning vectors; the whole space when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subspace: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_one")]
    pub lambda: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_projection: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_delta: Option<f64>,
    #[serde(default)]
    pub random_worlds: usize,
    #[serde(default = "default_random_dim")]
    pub random_dim: usize,
}

fn default_random_dim() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSpec {
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_concentration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptableSpec {
    pub f: SafetyFunction,
    pub family: Vec<FamilyMember>,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_best: Option<String>,
}

fn at_least(field: &str, value: usize, min: usize) -> Result<()> {
    if value >= min {
        Ok(())
    } else {
        Err(invalid(field, format!("must be at least {min}, got {value}")))
    }
}

fn nonempty<T>(field: &str, xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        Err(invalid(field, "must be nonempty"))
    } else {
        Ok(())
    }
}

fn finite(field: &str, xs: &[f64]) -> Result<()> {
    match xs.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(invalid(field, format!("non-finite value {x}"))),
        None => Ok(()),
    }
}

fn in_range(field: &str, xs: &[f64], lo: f64, hi: f64) -> Result<()> {
    match xs.iter().find(|x| !(lo..=hi).contains(*x)) {
        Some(x) => Err(invalid(field, format!("{x} is outside [{lo}, {hi}]"))),
        None => Ok(()),
    }
}

fn positive(field: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {x}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// The configured world, or a validation error naming the missing section.
    pub fn world(&self) -> Result<RepresentationWorld> {
        self.world.as_ref().ok_or_else(|| invalid("world", format!("required by experiment kind `{}`", self.experiment.kind())))?.build()
    }

    fn vector_in_world(&self, field: &str, v: &[f64]) -> Result<Direction> {
        let d = self.world()?.dim();
        check_len(field, v.len(), d)?;
        at(field, Direction::new(v.to_vec()))
    }

    /// Checks every field a run would touch, without running anything.
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = &self.world {
            w.build()?;
        }
        match &self.experiment {
            ExperimentSpec::Toy(s) => at_least("experiment.n_samples", s.n_samples, 2),
            ExperimentSpec::Improve(s) => {
                at_least("experiment.n_samples", s.n_samples, 2)?;
                finite("experiment.lambdas", &s.lambdas)?;
                if let Some(v_c) = &s.v_c {
                    self.vector_in_world("experiment.v_c", v_c)?;
                    nonempty("experiment.lambdas", &s.lambdas)?;
                }
                if let Some(p) = &s.preference {
                    if s.v_c.is_none() {
                        return Err(invalid("experiment.v_c", "required by experiment.preference"));
                    }
                    at_least("experiment.preference.n_pairs", p.n_pairs, 2)?;
                    positive("experiment.preference.max_angle_deg", p.max_angle_deg)?;
                    in_range("experiment.preference.min_gain_fraction", &[p.min_gain_fraction], 0.0, 1.0)?;
                    finite("experiment.preference.lambda", &[p.lambda])?;
                }
                if let Some(r) = &s.random_worlds {
                    at_least("experiment.random_worlds.count", r.count, 1)?;
                    at_least("experiment.random_worlds.dim", r.dim, 1)?;
                    nonempty("experiment.random_worlds.lambdas", &r.lambdas)?;
                    finite("experiment.random_worlds.lambdas", &r.lambdas)?;
                    positive("experiment.random_worlds.exactness_tolerance", r.exactness_tolerance)?;
                }
                if s.v_c.is_none() && s.random_worlds.is_none() {
                    return Err(invalid("experiment", "nothing to run: give v_c or random_worlds"));
                }
                Ok(())
            }
            ExperimentSpec::Gap(s) => {
                nonempty("experiment.etas", &s.etas)?;
                in_range("experiment.etas", &s.etas, 0.0, 1.0)?;
                in_range("experiment.alpha_c", &[s.alpha_c], 0.0, 1.0)?;
                at_least("experiment.d", s.d, 1)?;
                if s.d < 2 && (s.alpha_c < 1.0 || s.etas.iter().any(|&e| e < 1.0)) {
                    return Err(invalid("experiment.d", "need d >= 2 for an orthogonal component"));
                }
                Ok(())
            }
            ExperimentSpec::Ceiling(s) => {
                nonempty("experiment.rho_grid", &s.rho_grid)?;
                in_range("experiment.rho_grid", &s.rho_grid, 0.0, 1.0)?;
                if !(s.sigma_s >= 0.0 && s.sigma_s.is_finite()) {
                    return Err(invalid("experiment.sigma_s", "must be nonnegative"));
                }
                at_least("experiment.n_trials", s.n_trials, 2)?;
                at_least("experiment.max_draws", s.max_draws, 2)?;
                positive("experiment.tolerance", s.tolerance)?;
                positive("experiment.max_tolerance", s.max_tolerance)?;
                for &n in &s.extra_candidates {
                    at_least("experiment.extra_candidates", n, 3)?;
                }
                if let Some(rho) = s.cross_check_rho {
                    in_range("experiment.cross_check_rho", &[rho], 0.0, 1.0)?;
                }
                Ok(())
            }
            ExperimentSpec::Stein(s) => {
                at_least("experiment.n_worlds", s.n_worlds, 1)?;
                at_least("experiment.dim", s.dim, 1)?;
                at_least("experiment.n_samples", s.n_samples, 2)?;
                nonempty("experiment.remainder_lambdas", &s.remainder_lambdas)?;
                finite("experiment.remainder_lambdas", &s.remainder_lambdas)?;
                if s.remainder_lambdas.contains(&0.0) {
                    return Err(invalid("experiment.remainder_lambdas", "must be nonzero"));
                }
                finite("experiment.linear_lambdas", &s.linear_lambdas)?;
                positive("experiment.saturating_scale", s.saturating_scale)
            }
            ExperimentSpec::Nonmonotone(s) => {
                let v = self.vector_in_world("experiment.v", &s.v)?;
                if v.norm() == 0.0 {
                    return Err(invalid("experiment.v", "must be nonzero"));
                }
                finite("experiment.tau", &[s.tau])?;
                nonempty("experiment.projections", &s.projections)?;
                finite("experiment.projections", &s.projections)?;
                finite("experiment.lambda", &[s.lambda])?;
                at_least("experiment.n_samples", s.n_samples, 2)
            }
            ExperimentSpec::Pareto(s) => {
                for (i, set) in s.objective_sets.iter().enumerate() {
                    let field = format!("experiment.objective_sets[{i}]");
                    nonempty(&format!("{field}.v_stars"), &set.v_stars)?;
                    let d = set.v_stars[0].len();
                    for v in &set.v_stars {
                        check_len(&format!("{field}.v_stars"), v.len(), d)?;
                        at(&format!("{field}.v_stars"), Direction::new(v.clone()))?;
                    }
                    if let Some(w) = &set.expect_weights {
                        check_len(&format!("{field}.expect_weights"), w.len(), set.v_stars.len())?;
                    }
                }
                at_least("experiment.max_objectives", s.max_objectives, 1)?;
                at_least("experiment.max_dim", s.max_dim, 1)?;
                in_range("experiment.thetas_deg", &s.thetas_deg, 0.0, 180.0)?;
                at_least("experiment.fraction_draws", s.fraction_draws, 2)?;
                positive("experiment.fraction_tolerance", s.fraction_tolerance)
            }
            ExperimentSpec::Adversarial(s) => {
                self.world()?;
                if let Some(span) = &s.subspace {
                    nonempty("experiment.subspace", span)?;
                    for v in span {
                        self.vector_in_world("experiment.subspace", v)?;
                    }
                }
                finite("experiment.lambda", &[s.lambda])?;
                at_least("experiment.n_samples", s.n_samples, 2)?;
                at_least("experiment.random_dim", s.random_dim, 1)
            }
            ExperimentSpec::Spectrum(s) => {
                let d = self.world()?.dim();
                if !(1..=d).contains(&s.k) {
                    return Err(invalid("experiment.k", format!("must be in [1, {d}]")));
                }
                if let Some(c) = s.min_concentration {
                    in_range("experiment.min_concentration", &[c], 0.0, 1.0)?;
                }
                Ok(())
            }
            ExperimentSpec::Promptable(s) => {
                let d = self.world()?.dim();
                at("experiment.f", s.f.validate())?;
                check_len("experiment.f.v", s.f.dim(), d)?;
                let family = at("experiment.family", PromptableFamily::new(s.family.clone()))?;
                check_len("experiment.family", family.dim(), d)?;
                at_least("experiment.n_samples", s.n_samples, 2)?;
                if let Some(label) = &s.expect_best {
                    if !s.family.iter().any(|m| &m.label == label) {
                        return Err(invalid("experiment.expect_best", format!("no family member labelled `{label}`")));
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const IMPROVE: &str = r#"
seed = 7

[world]
v_star = [1.0, 0.0]
sigma_eps = 0.5
sigma = { kind = "diagonal", values = [2.0, 1.0] }

[experiment]
kind = "improve"
v_c = [0.95, 0.31]
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(IMPROVE).unwrap();
        assert_eq!(c.seed, 7);
        let ExperimentSpec::Improve(s) = &c.experiment else { panic!() };
        assert_eq!(s.lambdas, default_lambda_grid());
        assert_eq!(s.n_samples, 100_000);
        c.validate().unwrap();
        assert_eq!(c.world().unwrap().sigma().matrix()[(0, 0)], 2.0);
    }

    #[test]
    fn round_trips_field_for_field() {
        let c = ExperimentConfig::from_toml(IMPROVE).unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = IMPROVE.replace("seed = 7", "");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = IMPROVE.replace("kind = \"improve\"", "kind = \"improve\"\nlamdas = [1.0]");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("lamdas"), "{err}");
        let text = IMPROVE.replace("sigma_eps = 0.5", "sigma_eps = 0.5\nnoise = 1.0");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = IMPROVE.replace("kind = \"improve\"", "kind = \"improv\"");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let text = IMPROVE.replace("v_c = [0.95, 0.31]", "v_c = [0.95, 0.31, 0.0]");
        let err = ExperimentConfig::from_toml(&text).unwrap().validate().unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "experiment.v_c"), "{err}");

        let text = IMPROVE.replace("values = [2.0, 1.0]", "values = [2.0, -1.0]");
        let err = ExperimentConfig::from_toml(&text).unwrap().validate().unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "world.sigma"), "{err}");

        let text = IMPROVE.replace("v_star = [1.0, 0.0]", "d = 3\nv_star = [1.0, 0.0]");
        let err = ExperimentConfig::from_toml(&text).unwrap().validate().unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "world.v_star"), "{err}");
    }

    #[test]
    fn missing_world_is_a_validation_error() {
        let c = ExperimentConfig::from_toml("seed = 1\n[experiment]\nkind = \"spectrum\"\nk = 1\n").unwrap();
        let err = c.validate().unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "world"), "{err}");
    }

    #[test]
    fn sigma_variants_build() {
        assert!(SigmaSpec::Dense {
            row_major: vec![2.0, 0.5, 0.5, 1.0]
        }
        .build(2)
        .is_ok());
        assert!(SigmaSpec::Dense {
            row_major: vec![2.0, 0.5, 0.4, 1.0]
        }
        .build(2)
        .is_err());
        let s = SigmaSpec::Spectrum {
            eigenvalues: vec![3.0, 1.0],
            seed: 4,
        }
        .build(2)
        .unwrap();
        assert!((s.eigenvalues()[0] - 3.0).abs() < 1e-12);
        assert!(SigmaSpec::Diagonal { values: vec![1.0] }.build(2).is_err());
    }
}
