//! One runner per experiment kind. Each turns a validated config into metrics,
//! checks and tables; none of them touch the filesystem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::*;
use crate::ceiling::{
    closed_form_regret, expected_max_two_gaussians, expected_max_two_gaussians_mc, regret_sweep, simulate_selection_regret,
    simulate_selection_regret_sampled, world_with_quality,
};
use crate::error::Result;
use crate::gaussian_world::{random_world, RepresentationWorld};
use crate::improvement::{generation_judgment_gap, run_toy_example_with, sign_sweep, verify_improvement, CorpusMixtureModel, SIGNIFICANCE};
use crate::linear_model::{Constitution, Covariance, Direction};
use crate::mc::derive_seed;
use crate::multiobjective::{
    cone_emptiness, grid_search_nonempty, optimal_weighted_constitution, pareto_fraction_mc, random_unit_directions,
    two_objective_cone_width, weighted_improvement, ConeEmptiness, EMPTY_TOL, WITNESS_SLACK,
};
use crate::nonlinear::{
    covariance_improvement, means_along, non_monotone_probe, promptable_ceiling, quadratic_exact_delta, remainder_study, verify_stein_identity,
    PromptableFamily, SafetyFunction, FD_TOL,
};
use crate::preference::{rlaif_round, rlaif_round_exact};
use crate::report::{Check, ExperimentResult, Table};
use crate::spectrum::{demonstrate_degradation, effective_dimension, find_adversarial_direction, spectrum_report, AdversarialSearch, PromptableSubspace};

/// Competitor count for the adversary optimality check.
const ADVERSARY_COMPETITORS: usize = 10_000;

pub(crate) fn run(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let seed = config.seed;
    match &config.experiment {
        ExperimentSpec::Toy(s) => run_toy_example_with(s.n_samples, seed),
        ExperimentSpec::Improve(s) => improve(config, s),
        ExperimentSpec::Gap(s) => gap(seed, s),
        ExperimentSpec::Ceiling(s) => ceiling(seed, s),
        ExperimentSpec::Stein(s) => stein(seed, s),
        ExperimentSpec::Nonmonotone(s) => nonmonotone(config, s),
        ExperimentSpec::Pareto(s) => pareto(seed, s),
        ExperimentSpec::Adversarial(s) => adversarial(config, s),
        ExperimentSpec::Spectrum(s) => spectrum(config, s),
        ExperimentSpec::Promptable(s) => promptable(config, s),
    }
}

fn dir(v: &[f64]) -> Result<Direction> {
    Direction::new(v.to_vec())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn improve(config: &ExperimentConfig, s: &ImproveSpec) -> Result<ExperimentResult> {
    let seed = config.seed;
    let mut r = ExperimentResult::new("improve", seed);
    if let Some(v_c) = &s.v_c {
        let world = config.world()?;
        let v_c = dir(v_c)?;
        let mut table = Table::new("improvement", &["lambda", "prediction", "exact_delta", "mc_delta", "std_error"]);
        for (k, &lambda) in s.lambdas.iter().enumerate() {
            let rep = verify_improvement(&world, &v_c, lambda, s.n_samples, derive_seed(seed, k as u64))?;
            let tag = format!("lambda={lambda}");
            r.metric(format!("{tag}/prediction"), rep.first_order_prediction);
            r.metric(format!("{tag}/exact_delta"), rep.exact_delta);
            r.estimate(format!("{tag}/mc_delta"), rep.mc_estimate());
            let tol = 1e-12 * (1.0 + rep.first_order_prediction.abs());
            r.check(Check::absolute(format!("{tag}/exact_delta"), rep.exact_delta, rep.first_order_prediction, tol));
            r.check(Check::std_errors(format!("{tag}/mc_delta"), rep.mc_estimate(), rep.exact_delta, SIGNIFICANCE));
            r.check(Check::holds(format!("{tag}/sign"), rep.sign_agrees, rep.mc_delta, "a significant mc_delta has the predicted sign"));
            table.rows.push(vec![lambda, rep.first_order_prediction, rep.exact_delta, rep.mc_delta, rep.mc_std_error]);
        }
        r.tables.push(table);
        if let Some(p) = &s.preference {
            preference_recovery(&mut r, &world, &v_c, p, derive_seed(seed, 1000))?;
        }
    }
    if let Some(sweep) = &s.random_worlds {
        for (k, &lambda) in sweep.lambdas.iter().enumerate() {
            let res = sign_sweep(sweep.count, sweep.dim, lambda, s.n_samples, derive_seed(seed, 2000 + k as u64))?;
            let tag = format!("random_worlds/lambda={lambda}");
            r.metric(format!("{tag}/significant"), res.significant as f64);
            r.check(Check::at_most(format!("{tag}/exactness_residual"), res.max_exactness_residual, sweep.exactness_tolerance));
            r.check(Check::at_most(format!("{tag}/mc_outside_4se"), res.mc_outside_4se as f64, 0.0));
            r.check(Check::at_most(format!("{tag}/sign_disagreements"), res.disagreements as f64, 0.0));
        }
    }
    Ok(r)
}

fn preference_recovery(r: &mut ExperimentResult, world: &RepresentationWorld, v_c: &Direction, p: &PreferenceSpec, seed: u64) -> Result<()> {
    let base = world.base_policy();
    let judge = Constitution::new("configured", v_c.clone());
    let (fitted, fit) = rlaif_round(world, &base, &judge, p.n_pairs, p.lambda, seed)?;
    let exact = rlaif_round_exact(&base, &judge, p.lambda)?;
    let angle = fit.recovered_direction.angle_to(v_c)?.to_degrees();
    let start = base.exact_alignment();
    let exact_gain = exact.exact_alignment() - start;
    let fitted_gain = fitted.exact_alignment() - start;
    r.metric("preference/angle_deg", angle);
    r.metric("preference/fitted_scale", fit.scale);
    r.metric("preference/exact_gain", exact_gain);
    r.metric("preference/fitted_gain", fitted_gain);
    r.check(Check::holds("preference/converged", fit.converged && !fit.separated, fit.gradient_norm, "fit converged without separation"));
    r.check(Check::at_most("preference/angle_deg", angle, p.max_angle_deg));
    r.check(Check::holds("preference/exact_gain_positive", exact_gain > 0.0, exact_gain, "exact-direction gain > 0"));
    r.check(Check::at_least("preference/gain_fraction", fitted_gain / exact_gain, p.min_gain_fraction));
    Ok(())
}

fn gap(seed: u64, s: &GapSpec) -> Result<ExperimentResult> {
    let mut r = ExperimentResult::new("gap", seed);
    let mut table = Table::new("gap", &["eta", "alpha_c", "gap"]);
    for (k, &eta) in s.etas.iter().enumerate() {
        let model = CorpusMixtureModel {
            eta,
            d: s.d,
            seed: derive_seed(seed, k as u64),
        };
        let g = generation_judgment_gap(&model, s.alpha_c)?;
        let tag = format!("eta={eta}");
        r.metric(format!("{tag}/gap"), g.gap);
        r.check(Check::absolute(format!("{tag}/w_dot_vstar"), g.w.dot(&g.v_star)?, eta, 1e-12));
        r.check(Check::absolute(format!("{tag}/vc_dot_vstar"), g.v_c.dot(&g.v_star)?, s.alpha_c, 1e-12));
        r.check(Check::absolute(format!("{tag}/w_norm"), g.w.norm(), 1.0, 1e-12));
        r.check(Check::absolute(format!("{tag}/vc_norm"), g.v_c.norm(), 1.0, 1e-12));
        r.check(Check::absolute(format!("{tag}/gap"), g.gap, s.alpha_c - eta, 1e-12));
        table.rows.push(vec![eta, s.alpha_c, g.gap]);
    }
    r.tables.push(table);
    Ok(r)
}

fn ceiling(seed: u64, s: &CeilingSpec) -> Result<ExperimentResult> {
    let mut r = ExperimentResult::new("ceiling", seed);
    let sweep_seed = derive_seed(seed, 0);
    let (reports, table) = regret_sweep(&s.rho_grid, s.sigma_s, s.n_trials, sweep_seed)?;
    for rep in &reports {
        let tag = format!("rho={}", rep.rho);
        let gap = rep.closed_form_regret.unwrap_or(f64::NAN);
        r.estimate(format!("{tag}/mc_regret"), rep.mc_estimate());
        r.check(Check::absolute(format!("{tag}/mc_regret"), rep.mc_regret, gap, s.tolerance));
        r.check(Check::at_least(format!("{tag}/regret_nonnegative"), rep.mc_regret + SIGNIFICANCE * rep.mc_std_error, 0.0));
        if let Some(c) = rep.conditional_gain {
            r.estimate(format!("{tag}/conditional_gain"), c);
            r.check(Check::std_errors(format!("{tag}/conditional_gain"), c, rep.expected_conditional_gain(), SIGNIFICANCE));
        }
    }
    r.tables.push(table);

    let (doubled, _) = regret_sweep(&s.rho_grid, 2.0 * s.sigma_s, s.n_trials, sweep_seed)?;
    for (one, two) in reports.iter().zip(&doubled) {
        if one.closed_form_regret.unwrap_or(0.0) > 0.0 && s.sigma_s > 0.0 {
            let ratio = two.mc_regret / one.mc_regret;
            r.check(Check::absolute(format!("rho={}/linear_in_sigma", one.rho), ratio, 2.0, 0.02));
        }
    }

    let emax = expected_max_two_gaussians_mc(s.sigma_s, s.max_draws, derive_seed(seed, 1))?;
    r.estimate("expected_max", emax);
    r.check(Check::absolute("expected_max", emax.value, expected_max_two_gaussians(s.sigma_s)?, s.max_tolerance));

    for &n in &s.extra_candidates {
        for (k, rep) in reports.iter().enumerate().filter(|(_, rep)| rep.rho < 1.0) {
            let world = world_with_quality(rep.rho, s.sigma_s)?;
            let many = simulate_selection_regret(&world, n, s.n_trials, derive_seed(seed, 100 + 31 * n as u64 + k as u64))?;
            let diff = many.mc_estimate().minus_independent(&rep.mc_estimate());
            let tag = format!("rho={}/candidates={n}", rep.rho);
            r.estimate(format!("{tag}/mc_regret"), many.mc_estimate());
            r.check(Check::holds(
                format!("{tag}/exceeds_two_candidate_regret"),
                diff.value > SIGNIFICANCE * diff.std_error,
                diff.value,
                "regret exceeds the two-candidate value by more than 4 std errors",
            ));
        }
    }

    if let Some(rho) = s.cross_check_rho {
        let world = world_with_quality(rho, s.sigma_s)?;
        let sampled = simulate_selection_regret_sampled(&world, 2, s.n_trials, derive_seed(seed, 2))?;
        r.estimate("sampled_path/mc_regret", sampled.mc_estimate());
        r.check(Check::std_errors("sampled_path/mc_regret", sampled.mc_estimate(), closed_form_regret(rho, s.sigma_s)?, SIGNIFICANCE));
    }
    Ok(r)
}

fn stein(seed: u64, s: &SteinSpec) -> Result<ExperimentResult> {
    let mut r = ExperimentResult::new("stein", seed);
    let mut table = Table::new("remainder", &["world", "lambda", "scaled_remainder", "std_error", "exact_scaled_remainder"]);
    for k in 0..s.n_worlds as u64 {
        let base = derive_seed(seed, k);
        let world = random_world(s.dim, derive_seed(base, 0))?;
        let v_c = random_unit_directions(s.dim, 1, derive_seed(base, 1))?.remove(0);
        let v = random_unit_directions(s.dim, 1, derive_seed(base, 2))?.remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, 3));
        let tau = world.mu().dot(&v)? + rng.random_range(-1.0..1.0);
        let quadratic = SafetyFunction::quadratic(v.clone(), tau)?;
        let saturating = SafetyFunction::saturating(v.clone(), s.saturating_scale)?;
        let tag = format!("world={k}");

        for (name, f, tag_seed) in [("quadratic", &quadratic, 4), ("saturating", &saturating, 5)] {
            let st = verify_stein_identity(&world, f, &v_c, s.n_samples, derive_seed(base, tag_seed))?;
            r.estimate(format!("{tag}/{name}/stein_residual"), st.residual());
            r.check(Check::std_errors(format!("{tag}/{name}/stein_identity"), st.residual(), 0.0, SIGNIFICANCE));
            r.check(Check::at_most(format!("{tag}/{name}/gradient_check"), st.gradient_check, FD_TOL));
        }

        let study = remainder_study(&world, &quadratic, &v_c, &s.remainder_lambdas, s.n_samples, derive_seed(base, 6))?;
        let a = world.sigma().bilinear(&v, &v_c)?;
        r.check(Check::holds(format!("{tag}/quadratic/remainder_bounded"), study.is_bounded(), study.scaled[0].value, "scaled remainder does not grow as lambda shrinks"));
        for (p, scaled) in study.points.iter().zip(&study.scaled) {
            let name = format!("{tag}/quadratic/lambda={}/scaled_remainder", p.lambda);
            r.estimate(&name, *scaled);
            r.check(Check::std_errors(name, *scaled, -a * a, SIGNIFICANCE));
            table.rows.push(vec![k as f64, p.lambda, scaled.value, scaled.std_error, -a * a]);
        }

        let linear = SafetyFunction::linear(world.v_star().clone());
        let slope = world.sigma().bilinear(world.v_star(), &v_c)?;
        for &lambda in &s.linear_lambdas {
            let ci = covariance_improvement(&world, &linear, &v_c, lambda, s.n_samples, derive_seed(base, 7))?;
            let name = format!("{tag}/linear/lambda={lambda}");
            r.estimate(format!("{name}/remainder"), ci.remainder);
            r.check(Check::std_errors(format!("{name}/remainder"), ci.remainder, 0.0, SIGNIFICANCE));
            r.check(Check::std_errors(format!("{name}/mc_delta"), ci.mc_delta, lambda * slope, SIGNIFICANCE));
        }
    }
    r.tables.push(table);
    Ok(r)
}

fn nonmonotone(config: &ExperimentConfig, s: &NonmonotoneSpec) -> Result<ExperimentResult> {
    let seed = config.seed;
    let mut r = ExperimentResult::new("nonmonotone", seed);
    let world = config.world()?;
    let v = dir(&s.v)?;
    let f = SafetyFunction::quadratic(v.clone(), s.tau)?;
    let means = means_along(world.mu(), &v, &s.projections)?;
    let probe = non_monotone_probe(&world, &v, s.tau, &means)?;
    let mut table = Table::new("nonmonotone", &["projection", "coefficient", "exact_delta", "mc_delta", "std_error"]);
    for (k, point) in probe.iter().enumerate() {
        let tag = format!("projection={}", s.projections[k]);
        let expected_sign = sign(s.tau - point.projection);
        r.metric(format!("{tag}/coefficient"), point.coefficient);
        r.check(Check::holds(format!("{tag}/coefficient_sign"), f64::from(point.sign) == expected_sign, f64::from(point.sign), "sign equals sign(tau - <mu, v>)"));

        let shifted = world.with_mean(point.mu.clone())?;
        let exact = quadratic_exact_delta(&shifted, &v, s.tau, &v, s.lambda)?;
        let ci = covariance_improvement(&shifted, &f, &v, s.lambda, s.n_samples, derive_seed(seed, k as u64))?;
        r.estimate(format!("{tag}/mc_delta"), ci.mc_delta);
        r.check(Check::std_errors(format!("{tag}/mc_delta"), ci.mc_delta, exact, SIGNIFICANCE));
        if point.projection > s.tau && s.lambda > 0.0 {
            r.check(Check::holds(
                format!("{tag}/tilt_degrades"),
                ci.mc_delta.value < -SIGNIFICANCE * ci.mc_delta.std_error,
                ci.mc_delta.value,
                "mc_delta < 0 beyond 4 std errors",
            ));
        }
        table.rows.push(vec![point.projection, point.coefficient, exact, ci.mc_delta.value, ci.mc_delta.std_error]);
    }
    r.tables.push(table);
    Ok(r)
}

/// Confirms the certificate carried by a cone outcome.
fn certificate_holds(v_stars: &[Direction], outcome: &ConeEmptiness) -> Result<bool> {
    Ok(match outcome {
        ConeEmptiness::Nonempty { witness, .. } => {
            let mut ok = true;
            for v in v_stars {
                ok &= witness.dot(v)? >= 1.0 - WITNESS_SLACK;
            }
            ok
        }
        ConeEmptiness::Empty { weights, .. } => {
            let mut combo = Direction::zeros(v_stars[0].dim())?;
            for (w, v) in weights.iter().zip(v_stars) {
                combo = combo.add_scaled(v, *w)?;
            }
            let total: f64 = weights.iter().sum();
            weights.iter().all(|w| *w >= 0.0) && (total - 1.0).abs() <= 1e-9 && combo.norm() <= EMPTY_TOL
        }
        ConeEmptiness::Degenerate { .. } => false,
    })
}

fn pareto(seed: u64, s: &ParetoSpec) -> Result<ExperimentResult> {
    let mut r = ExperimentResult::new("pareto", seed);

    for set in &s.objective_sets {
        let vs = set.v_stars.iter().map(|v| dir(v)).collect::<Result<Vec<_>>>()?;
        let outcome = cone_emptiness(&vs)?;
        let tag = format!("set={}", set.label);
        r.check(Check::holds(format!("{tag}/certificate"), certificate_holds(&vs, &outcome)?, 0.0, "certificate verifies"));
        if let Some(expected) = set.expect_empty {
            let found = outcome.is_empty();
            r.check(Check::holds(format!("{tag}/empty"), found == Some(expected), found.map_or(f64::NAN, |b| f64::from(u8::from(b))), format!("cone empty = {expected}")));
        }
        if let Some(expected) = &set.expect_weights {
            let gap = match &outcome {
                ConeEmptiness::Empty { weights, .. } => weights.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
                _ => f64::INFINITY,
            };
            r.check(Check::at_most(format!("{tag}/weights"), gap, set.weights_tolerance));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let (mut empty, mut nonempty, mut degenerate, mut bad_certificates, mut grid_disagreements) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for k in 0..s.random_instances as u64 {
        let m = rng.random_range(1..=s.max_objectives);
        let d = rng.random_range(1..=s.max_dim);
        let vs = random_unit_directions(d, m, derive_seed(seed, 10 + k))?;
        let outcome = cone_emptiness(&vs)?;
        if !certificate_holds(&vs, &outcome)? {
            bad_certificates += 1;
        }
        let grid = grid_search_nonempty(&vs);
        match outcome {
            ConeEmptiness::Empty { .. } => {
                empty += 1;
                grid_disagreements += usize::from(grid == Some(true));
            }
            ConeEmptiness::Nonempty { min_norm, .. } => {
                nonempty += 1;
                // cones narrower than the grid spacing are invisible to it
                grid_disagreements += usize::from(min_norm > 0.05 && grid == Some(false));
            }
            ConeEmptiness::Degenerate { .. } => degenerate += 1,
        }
    }
    r.metric("random/empty", empty as f64);
    r.metric("random/nonempty", nonempty as f64);
    r.check(Check::at_most("random/degenerate", degenerate as f64, 0.0));
    r.check(Check::at_most("random/bad_certificates", bad_certificates as f64, 0.0));
    r.check(Check::at_most("random/grid_disagreements", grid_disagreements as f64, 0.0));

    let mut table = Table::new("pareto_fraction", &["theta_deg", "cone_width", "predicted_fraction", "mc_fraction", "std_error"]);
    let help = Direction::new(vec![1.0, 0.0])?;
    for (k, &deg) in s.thetas_deg.iter().enumerate() {
        let theta = deg.to_radians();
        let other = Direction::new(vec![theta.cos(), theta.sin()])?;
        let width = two_objective_cone_width(&help, &other)?;
        let predicted = (std::f64::consts::PI - theta) / (2.0 * std::f64::consts::PI);
        let mc = pareto_fraction_mc(&[help.clone(), other], s.fraction_draws, derive_seed(seed, 1_000_000 + k as u64))?;
        let tag = format!("theta_deg={deg}");
        r.estimate(format!("{tag}/fraction"), mc);
        r.check(Check::absolute(format!("{tag}/cone_width"), width, std::f64::consts::PI - theta, 1e-9));
        r.check(Check::absolute(format!("{tag}/fraction"), mc.value, width / (2.0 * std::f64::consts::PI), s.fraction_tolerance));
        table.rows.push(vec![deg, width, predicted, mc.value, mc.std_error]);
    }
    r.tables.push(table);

    let mut beaten = 0usize;
    let mut worst_margin = f64::INFINITY;
    for t in 0..s.optimal_trials as u64 {
        let trial_seed = derive_seed(seed, 2_000_000 + t);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let m = rng.random_range(2..=s.max_objectives.max(2));
        let d = rng.random_range(1..=s.max_dim);
        let vs = random_unit_directions(d, m, derive_seed(trial_seed, 1))?;
        let alpha: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
        let spectrum: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..3.0)).collect();
        let sigma = Covariance::from_spectrum(&spectrum, rng.random())?;
        let best = optimal_weighted_constitution(&vs, &alpha, Some(&sigma))?;
        let best_value = weighted_improvement(&vs, &alpha, Some(&sigma), &best)?;
        let mut top = f64::NEG_INFINITY;
        for c in random_unit_directions(d, s.competitors, derive_seed(trial_seed, 2))? {
            top = top.max(weighted_improvement(&vs, &alpha, Some(&sigma), &c)?);
        }
        worst_margin = worst_margin.min(best_value - top);
        if top > best_value + 1e-9 {
            beaten += 1;
        }
    }
    if s.optimal_trials > 0 {
        r.metric("optimal/worst_margin", worst_margin);
    }
    r.check(Check::at_most("optimal/beaten_by_random", beaten as f64, 0.0));
    Ok(r)
}

fn adversarial(config: &ExperimentConfig, s: &AdversarialSpec) -> Result<ExperimentResult> {
    let seed = config.seed;
    let mut r = ExperimentResult::new("adversarial", seed);
    let world = config.world()?;
    let subspace = match &s.subspace {
        Some(span) => PromptableSubspace::new(&span.iter().map(|v| dir(v)).collect::<Result<Vec<_>>>()?)?,
        None => PromptableSubspace::full(world.dim())?,
    };
    match find_adversarial_direction(&subspace, &world)? {
        AdversarialSearch::Found { v_adv, predicted_delta } => {
            let projection = v_adv.dot(world.v_star())?;
            r.metric("projection", projection);
            r.metric("predicted_delta", s.lambda * predicted_delta);
            r.check(Check::holds("adversary_found", true, predicted_delta, "an adversarial direction exists"));
            if let Some(expected) = s.expect_projection {
                r.check(Check::absolute("projection", projection, expected, 1e-12));
            }

            let rep = demonstrate_degradation(&world, &v_adv, s.lambda, s.n_samples, derive_seed(seed, 0))?;
            r.estimate("mc_delta", rep.mc_estimate());
            r.check(Check::std_errors("mc_delta", rep.mc_estimate(), rep.exact_delta, SIGNIFICANCE));
            if let Some(expected) = s.expect_delta {
                r.check(Check::std_errors("mc_delta_expected", rep.mc_estimate(), expected, SIGNIFICANCE));
            }
            if s.lambda > 0.0 {
                r.check(Check::holds("degrades", rep.significant && rep.mc_delta < 0.0, rep.mc_delta, "mc_delta < 0 beyond 4 std errors"));
            }

            let basis = subspace.basis();
            let mut best = f64::INFINITY;
            for c in random_unit_directions(subspace.rank(), ADVERSARY_COMPETITORS, derive_seed(seed, 1))? {
                let member = Direction::from_vector(basis.transpose() * c.vector())?;
                best = best.min(world.sigma().bilinear(world.v_star(), &member)?);
            }
            r.check(Check::at_most("optimal_in_subspace", predicted_delta, best + 1e-9));
        }
        AdversarialSearch::NoAdversary { projection_norm } => {
            r.metric("projection_norm", projection_norm);
            r.check(Check::holds("adversary_found", false, projection_norm, "an adversarial direction exists"));
        }
    }

    let (mut significant, mut wrong) = (0usize, 0usize);
    for k in 0..s.random_worlds as u64 {
        let world = random_world(s.random_dim, derive_seed(seed, 100 + 2 * k))?;
        let full = PromptableSubspace::full(s.random_dim)?;
        match find_adversarial_direction(&full, &world)? {
            AdversarialSearch::Found { v_adv, .. } => {
                let rep = demonstrate_degradation(&world, &v_adv, s.lambda, s.n_samples, derive_seed(seed, 101 + 2 * k))?;
                if rep.significant {
                    significant += 1;
                    wrong += usize::from(sign(rep.mc_delta) != sign(rep.exact_delta));
                }
            }
            AdversarialSearch::NoAdversary { .. } => wrong += 1,
        }
    }
    if s.random_worlds > 0 {
        r.metric("random_worlds/significant", significant as f64);
        r.check(Check::at_most("random_worlds/wrong_sign", wrong as f64, 0.0));
    }
    Ok(r)
}

fn spectrum(config: &ExperimentConfig, s: &SpectrumSpec) -> Result<ExperimentResult> {
    let mut r = ExperimentResult::new("spectrum", config.seed);
    let world = config.world()?;
    let d = world.dim() as f64;
    let rep = spectrum_report(world.sigma(), world.v_star())?;
    r.metric("d_eff", rep.d_eff);
    r.check(Check::at_least("d_eff_lower", rep.d_eff, 1.0 - 1e-12));
    r.check(Check::at_most("d_eff_upper", rep.d_eff, d + 1e-12));

    let full = rep.concentration_curve.last().map_or(f64::NAN, |p| p.1);
    r.check(Check::absolute("parseval", full, 1.0, 1e-8));
    let monotone = rep.concentration_curve.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12);
    r.check(Check::holds("curve_nondecreasing", monotone, full, "concentration is nondecreasing in k"));

    let at_k = rep.concentration_curve[s.k - 1].1;
    r.metric(format!("concentration_at_k={}", s.k), at_k);
    if let Some(min) = s.min_concentration {
        r.check(Check::at_least(format!("concentration_at_k={}", s.k), at_k, min));
    }

    let n = world.dim();
    let mut rank_one = vec![0.0; n];
    rank_one[0] = 1.0;
    r.check(Check::absolute("d_eff_isotropic", effective_dimension(&vec![1.0; n])?, d, 1e-12));
    r.check(Check::absolute("d_eff_rank_one", effective_dimension(&rank_one)?, 1.0, 1e-12));
    r.tables.push(rep.table());
    Ok(r)
}

fn promptable(config: &ExperimentConfig, s: &PromptableSpec) -> Result<ExperimentResult> {
    let mut r = ExperimentResult::new("promptable", config.seed);
    let world = config.world()?;
    let family = PromptableFamily::new(s.family.clone())?;
    let pc = promptable_ceiling(&world, &s.f, &family, s.n_samples, config.seed)?;
    for (label, est) in &pc.covariances {
        r.estimate(format!("cov/{label}"), *est);
    }
    r.metric("cauchy_schwarz_bound", pc.cauchy_schwarz_bound);
    r.check(Check::holds("within_bound", pc.within_bound, pc.best_cov.value, "best covariance <= Cauchy-Schwarz bound + 4 std errors"));
    if let Some(expected) = &s.expect_best {
        r.check(Check::holds("best_member", &pc.best_label == expected, pc.best_cov.value, format!("best member is `{expected}`")));
    }
    Ok(r)
}


#[cfg(test)]
mod tests {
    use super::*;

    fn dirs(vs: &[[f64; 2]]) -> Vec<Direction> {
        vs.iter().map(|v| dir(v).unwrap()).collect()
    }

    #[test]
    fn certificates_are_checked_not_trusted() {
        let vs = dirs(&[[1.0, 0.0], [0.0, 1.0]]);
        let good = ConeEmptiness::Nonempty {
            witness: dir(&[1.0, 1.0]).unwrap(),
            min_norm: 0.7,
        };
        let bad = ConeEmptiness::Nonempty {
            witness: dir(&[1.0, -1.0]).unwrap(),
            min_norm: 0.7,
        };
        assert!(certificate_holds(&vs, &good).unwrap());
        assert!(!certificate_holds(&vs, &bad).unwrap());

        let opposed = dirs(&[[1.0, 0.0], [-1.0, 0.0]]);
        let empty = |weights: Vec<f64>| ConeEmptiness::Empty { weights, residual: 0.0 };
        assert!(certificate_holds(&opposed, &empty(vec![0.5, 0.5])).unwrap());
        assert!(!certificate_holds(&opposed, &empty(vec![0.6, 0.4])).unwrap());
        assert!(!certificate_holds(&opposed, &ConeEmptiness::Degenerate { min_norm: 0.0 }).unwrap());
    }

    #[test]
    fn runs_are_deterministic() {
        let config = ExperimentConfig::from_toml("seed = 5\n[world]\nv_star = [1.0, 0.0]\n[experiment]\nkind = \"improve\"\nv_c = [0.3, 0.4]\nlambdas = [0.5]\nn_samples = 5000\n").unwrap();
        assert_eq!(run(&config).unwrap(), run(&config).unwrap());
    }
}
