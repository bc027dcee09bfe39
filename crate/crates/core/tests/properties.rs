use proptest::prelude::*;

use rlaif_lab::experiment::{parse_config, ExperimentConfig, BUNDLED};
use rlaif_lab::gaussian_world::{estimate_alignment, random_world, tilt_policy};
use rlaif_lab::linear_model::{Constitution, Direction};
use rlaif_lab::multiobjective::{cone_emptiness, grid_search_nonempty, random_unit_directions, ConeEmptiness, EMPTY_TOL, WITNESS_SLACK};
use rlaif_lab::nonlinear::{verify_stein_identity, SafetyFunction};
use rlaif_lab::preference::{fit_preference_direction, generate_preferences};

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn objectives() -> impl Strategy<Value = Vec<Direction>> {
    (1usize..=3, 1usize..=5).prop_flat_map(|(d, m)| {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), m)
            .prop_filter_map("zero objective", |vs| vs.into_iter().map(|v| Direction::new(v).ok().filter(|v| v.norm() > 1e-3)).collect::<Option<Vec<_>>>())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gordan_outcomes_carry_valid_certificates(vs in objectives()) {
        match cone_emptiness(&vs).unwrap() {
            ConeEmptiness::Nonempty { witness, .. } => {
                for v in &vs {
                    prop_assert!(witness.dot(v).unwrap() >= 1.0 - WITNESS_SLACK);
                }
            }
            ConeEmptiness::Empty { weights, residual } => {
                prop_assert!(weights.iter().all(|w| *w >= 0.0));
                prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(residual <= EMPTY_TOL);
                prop_assert_eq!(grid_search_nonempty(&vs), Some(false));
            }
            ConeEmptiness::Degenerate { .. } => prop_assume!(false),
        }
    }
}

#[test]
fn stein_residual_error_shrinks_at_root_n() {
    let ratios = (0..10u64)
        .map(|seed| {
            let world = random_world(3, seed).unwrap();
            let v_c = random_unit_directions(3, 1, 100 + seed).unwrap().remove(0);
            let f = SafetyFunction::saturating(random_unit_directions(3, 1, 200 + seed).unwrap().remove(0), 1.0).unwrap();
            let small = verify_stein_identity(&world, &f, &v_c, 20_000, 300 + seed).unwrap();
            let large = verify_stein_identity(&world, &f, &v_c, 80_000, 300 + seed).unwrap();
            large.residual().std_error / small.residual().std_error
        })
        .collect();
    let m = median(ratios);
    assert!((0.45..=0.55).contains(&m), "median std error ratio {m} from n to 4n");
}

#[test]
fn preference_angle_shrinks_with_more_pairs() {
    let world = random_world(4, 9).unwrap();
    let judge = Constitution::new("judge", random_unit_directions(4, 1, 10).unwrap().remove(0));
    let median_angle = |n: usize| {
        median(
            (0..5u64)
                .map(|seed| {
                    let pairs = generate_preferences(&world, &judge, n, seed).unwrap();
                    let fit = fit_preference_direction(&pairs, 1000, 1e-8).unwrap();
                    fit.recovered_direction.angle_to(&judge.v_c).unwrap()
                })
                .collect(),
        )
    };
    let coarse = median_angle(2_000);
    let fine = median_angle(32_000);
    // four times the pairs should roughly quarter the angle
    assert!(fine < coarse / 2.0, "angle {coarse} at 2000 pairs, {fine} at 32000");
}

#[test]
fn estimates_ignore_thread_count() {
    let world = random_world(5, 4).unwrap();
    let v_c = random_unit_directions(5, 1, 5).unwrap().remove(0);
    let tilted = tilt_policy(&world.base_policy(), &v_c, 0.7).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| estimate_alignment(&tilted, 100_000, 77).unwrap())
    };
    let one = run(1);
    for threads in [2, 3, 8] {
        let other = run(threads);
        assert_eq!(one.value.to_bits(), other.value.to_bits());
        assert_eq!(one.std_error.to_bits(), other.std_error.to_bits());
    }
}

#[test]
fn bundled_configs_round_trip_through_text() {
    for (name, text) in BUNDLED {
        let config = parse_config(text).unwrap();
        let again = ExperimentConfig::from_toml(&config.to_toml().unwrap()).unwrap();
        assert_eq!(config, again, "{name}");
    }
}
