//! Selection regret of choosing by the representation-linear proxy instead of
//! true safety, and how it scales with encoding quality.
//!
//! With two candidates, `P_i = <h_i, v*>` and `S_i = P_i + eps_i`:
//!
//! * `E[max(S_1, S_2)] - E[S] = sigma_S / sqrt(pi)`
//! * `E[S_1 | P_1 > P_2] - E[S] = rho * sigma_S / sqrt(pi)`
//! * regret `E[max S] - E[S_{argmax P}] = (1 - rho) * sigma_S / sqrt(pi)`

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian_world::{sample_policy, RepresentationWorld};
use crate::linear_model::{encoding_quality, Direction, ValueEncoding};
use crate::mc::{mean_estimate, par_chunks, Estimate};
use crate::report::Table;

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "rho",
            value: rho,
            range: "[0, 1]",
        })
    }
}

fn check_sigma(sigma_s: f64) -> Result<()> {
    if sigma_s >= 0.0 && sigma_s.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "sigma_S",
            value: sigma_s,
            range: "[0, inf)",
        })
    }
}

/// `sigma_S / sqrt(pi)`, the mean of the larger of two independent `N(0, sigma_S^2)` draws.
pub fn expected_max_two_gaussians(sigma_s: f64) -> Result<f64> {
    check_sigma(sigma_s)?;
    Ok(sigma_s / PI.sqrt())
}

/// `(1 - rho) * sigma_S / sqrt(pi)`.
pub fn closed_form_regret(rho: f64, sigma_s: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok((1.0 - rho) * expected_max_two_gaussians(sigma_s)?)
}

/// `(rho, closed_form_regret(rho, sigma_S))` for each grid point.
pub fn scaling_sweep(rho_grid: &[f64], sigma_s: f64) -> Result<Vec<(f64, f64)>> {
    rho_grid.iter().map(|&rho| Ok((rho, closed_form_regret(rho, sigma_s)?))).collect()
}

/// Monte Carlo estimate of `E[max(S_1, S_2)]` for `S_i ~ N(0, sigma_S^2)`.
///
/// Each draw contributes `max(S_1, S_2) - (S_1 + S_2) / 2 = |S_1 - S_2| / 2`;
/// the subtracted midpoint has known mean zero, which removes about three
/// quarters of the variance of the plain estimator.
pub fn expected_max_two_gaussians_mc(sigma_s: f64, n: usize, seed: u64) -> Result<Estimate> {
    check_sigma(sigma_s)?;
    let draws: Vec<f64> = par_chunks(n, seed, |rng, len| {
        (0..len)
            .map(|_| {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                sigma_s * (a - b).abs() / 2.0
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    mean_estimate(&draws)
}

/// Proxy and true values of one selection among `n_candidates`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionInstance {
    /// `P_i = <h_i, v*>`.
    pub proxy_values: Vec<f64>,
    /// `S_i = P_i + eps_i`.
    pub true_values: Vec<f64>,
}

impl SelectionInstance {
    pub fn n_candidates(&self) -> usize {
        self.proxy_values.len()
    }

    /// `max_i S_i - S_{argmax_i P_i}`; ties in `P` go to the lowest index.
    pub fn regret(&self) -> f64 {
        let chosen = argmax(&self.proxy_values);
        let best = self.true_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        best - self.true_values[chosen]
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingReport {
    pub rho: f64,
    pub sigma_s: f64,
    pub n_candidates: usize,
    /// Only defined for two candidates.
    pub closed_form_regret: Option<f64>,
    pub mc_regret: f64,
    pub mc_std_error: f64,
    /// Monte Carlo `E[S_1 - E S | P_1 > P_2]`, two candidates only.
    pub conditional_gain: Option<Estimate>,
}

impl CeilingReport {
    pub fn mc_estimate(&self) -> Estimate {
        Estimate {
            value: self.mc_regret,
            std_error: self.mc_std_error,
        }
    }

    /// `rho * sigma_S / sqrt(pi)`, the closed form of `conditional_gain`.
    pub fn expected_conditional_gain(&self) -> f64 {
        self.rho * self.sigma_s / PI.sqrt()
    }
}

/// One-dimensional isotropic world with the requested `rho` and `sigma_S`.
pub fn world_with_quality(rho: f64, sigma_s: f64) -> Result<RepresentationWorld> {
    check_rho(rho)?;
    check_sigma(sigma_s)?;
    let v_star = Direction::new(vec![rho * sigma_s])?;
    let sigma_eps = (1.0 - rho * rho).max(0.0).sqrt() * sigma_s;
    RepresentationWorld::isotropic(ValueEncoding::new(v_star, sigma_eps)?)
}

/// Draws `n_trials` independent selections of `n_candidates` and measures the
/// regret of selecting by the proxy.
///
/// `(P_i, S_i)` come straight from the bivariate normal the world implies:
/// `P_i = <mu, v*> + sqrt(v*^T Sigma v*) z_i` and `S_i = P_i + sigma_eps e_i`.
/// [`simulate_selection_regret_sampled`] is the same experiment through full
/// representation draws.
pub fn simulate_selection_regret(world: &RepresentationWorld, n_candidates: usize, n_trials: usize, seed: u64) -> Result<CeilingReport> {
    check_counts(n_candidates, n_trials)?;
    let v_star = world.v_star();
    let offset = world.mu().dot(v_star)?;
    let sigma_p = world.sigma().bilinear(v_star, v_star)?.max(0.0).sqrt();
    let sigma_eps = world.encoding().sigma_eps;
    let trials: Vec<(f64, f64, bool)> = par_chunks(n_trials, seed, |rng, len| {
        let mut inst = SelectionInstance {
            proxy_values: vec![0.0; n_candidates],
            true_values: vec![0.0; n_candidates],
        };
        (0..len)
            .map(|_| {
                for i in 0..n_candidates {
                    let z: f64 = StandardNormal.sample(rng);
                    let e: f64 = StandardNormal.sample(rng);
                    inst.proxy_values[i] = offset + sigma_p * z;
                    inst.true_values[i] = inst.proxy_values[i] + sigma_eps * e;
                }
                (inst.regret(), inst.true_values[0] - offset, inst.proxy_values[0] > inst.proxy_values[1])
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    summarize(world, n_candidates, &trials)
}

/// As [`simulate_selection_regret`], drawing each candidate's representation
/// with [`sample_policy`] from the base policy and reading `P = <h, v*>`.
pub fn simulate_selection_regret_sampled(world: &RepresentationWorld, n_candidates: usize, n_trials: usize, seed: u64) -> Result<CeilingReport> {
    check_counts(n_candidates, n_trials)?;
    let batch = sample_policy(&world.base_policy(), n_candidates * n_trials, seed)?;
    let proxies = &batch.representations * world.v_star().vector();
    let offset = world.mu().dot(world.v_star())?;
    let trials: Vec<(f64, f64, bool)> = (0..n_trials)
        .map(|t| {
            let range = t * n_candidates..(t + 1) * n_candidates;
            let inst = SelectionInstance {
                proxy_values: proxies.as_slice()[range.clone()].to_vec(),
                true_values: batch.safety_scores[range].to_vec(),
            };
            (inst.regret(), inst.true_values[0] - offset, inst.proxy_values[0] > inst.proxy_values[1])
        })
        .collect();
    summarize(world, n_candidates, &trials)
}

fn check_counts(n_candidates: usize, n_trials: usize) -> Result<()> {
    if n_candidates < 2 {
        return Err(Error::TooFew {
            what: "candidates",
            required: 2,
            found: n_candidates,
        });
    }
    if n_trials < 2 {
        return Err(Error::TooFew {
            what: "trials",
            required: 2,
            found: n_trials,
        });
    }
    Ok(())
}

fn summarize(world: &RepresentationWorld, n_candidates: usize, trials: &[(f64, f64, bool)]) -> Result<CeilingReport> {
    let rho = encoding_quality(world.encoding(), Some(world.sigma()))?;
    let sigma_s = world.sigma_s();
    let regrets: Vec<f64> = trials.iter().map(|t| t.0).collect();
    let regret = mean_estimate(&regrets)?;
    let (closed_form_regret, conditional_gain) = if n_candidates == 2 {
        let selected: Vec<f64> = trials.iter().filter(|t| t.2).map(|t| t.1).collect();
        (Some(closed_form_regret(rho.min(1.0), sigma_s)?), mean_estimate(&selected).ok())
    } else {
        (None, None)
    };
    Ok(CeilingReport {
        rho,
        sigma_s,
        n_candidates,
        closed_form_regret,
        mc_regret: regret.value,
        mc_std_error: regret.std_error,
        conditional_gain,
    })
}

/// Monte Carlo regret over a grid of encoding qualities, as a table with
/// columns `rho, gap, mc_regret, std_error`.
pub fn regret_sweep(rho_grid: &[f64], sigma_s: f64, n_trials: usize, seed: u64) -> Result<(Vec<CeilingReport>, Table)> {
    let mut table = Table::new("ceiling_sweep", &["rho", "gap", "mc_regret", "std_error"]);
    let mut reports = Vec::with_capacity(rho_grid.len());
    for (k, &rho) in rho_grid.iter().enumerate() {
        let world = world_with_quality(rho, sigma_s)?;
        let mut report = simulate_selection_regret(&world, 2, n_trials, crate::mc::derive_seed(seed, k as u64))?;
        // report the grid value rather than the round-tripped sqrt(rho^2)
        report.rho = rho;
        let gap = closed_form_regret(rho, sigma_s)?;
        report.closed_form_regret = Some(gap);
        table.rows.push(vec![rho, gap, report.mc_regret, report.mc_std_error]);
        reports.push(report);
    }
    Ok((reports, table))
}
