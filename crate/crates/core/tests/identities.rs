use num_complex::Complex64;
use proptest::prelude::*;

use farfield_core::forward::{BoundaryCondition, SolveOptions};
use farfield_core::geometry::{Direction, StarShape, Vec3};
use farfield_core::identities::{
    check_lemma1, check_lemma2, fit_loglog, random_direction_pairs, shape_distance, GapPreset, IdentityError,
    ObstaclePair, RaySpec, Relation,
};

fn sphere(r: f64, c: [f64; 3]) -> StarShape {
    StarShape::sphere(r, Vec3::from(c)).unwrap()
}

#[test]
fn swapping_the_pair_negates_both_sides() {
    let a = sphere(1.0, [0.0, 0.0, -2.0]);
    let b = sphere(0.8, [0.3, 0.0, 2.0]);
    let bc2 = BoundaryCondition::Impedance(Complex64::new(0.5, 0.3));
    let pair = ObstaclePair::new(a, b, BoundaryCondition::Dirichlet, bc2).unwrap();
    assert_eq!(pair.relation, Relation::Disjoint);
    let (alpha, beta) = (Direction::z(), Direction::from_angles(1.2, 0.4));
    let opts = SolveOptions::default();
    let r = check_lemma2(&pair, 1.0, &alpha, &beta, 24, &opts).unwrap();
    let s = check_lemma2(&pair.swapped(), 1.0, &alpha, &beta, 24, &opts).unwrap();
    assert!(r.rel_error < 1e-6 && s.rel_error < 1e-6);
    assert!((r.lhs + s.lhs).norm() < 1e-12 * r.lhs.norm());
    assert!((r.rhs + s.rhs).norm() < 1e-6 * r.rhs.norm());
}

#[test]
fn intersecting_pairs_are_out_of_scope() {
    let err = ObstaclePair::new(
        sphere(1.0, [0.0; 3]),
        sphere(1.0, [0.0, 0.0, 1.5]),
        BoundaryCondition::Dirichlet,
        BoundaryCondition::Dirichlet,
    )
    .unwrap_err();
    assert!(matches!(err, IdentityError::OutOfScope(_)));
}

#[test]
fn nested_pair_names_the_outer_obstacle() {
    let pair = ObstaclePair::new(
        sphere(1.0, [0.0; 3]),
        sphere(2.0, [0.0; 3]),
        BoundaryCondition::Dirichlet,
        BoundaryCondition::Dirichlet,
    )
    .unwrap();
    assert!(matches!(pair.relation, Relation::Nested { coincident: false, .. }));
    assert!((pair.min_distance - 1.0).abs() < 1e-12);
}

#[test]
fn free_space_ray_decays_like_one_over_tau() {
    let ray = RaySpec::new(Direction::z(), Vec3::new(0.0, 2.0, 0.0), vec![20.0, 40.0, 80.0, 160.0]).unwrap();
    let r = check_lemma1(None, BoundaryCondition::Dirichlet, 2.0, &Vec3::new(0.3, 0.1, 0.2), &ray, &SolveOptions::default())
        .unwrap();
    assert!(r.pass(), "{:?}", r.decay);
    assert!(RaySpec::new(Direction::z(), Vec3::new(0.0, 0.0, 1.0), vec![20.0]).is_err());
}

#[test]
fn gap_families_start_with_the_truth() {
    let truth = sphere(1.0, [0.0; 3]);
    for preset in [GapPreset::theorem1_default(), GapPreset::theorem2_default(), GapPreset::theorem3_default()] {
        let family = preset.family(&truth).unwrap();
        assert_eq!(family[0].0, "truth");
        assert_eq!(shape_distance(&family[0].1, &truth), 0.0);
        assert!(family[1..].iter().all(|(_, s)| shape_distance(s, &truth) > 0.0), "{}", preset.name());
    }
    let overlapping = GapPreset::Theorem2 { shifts: vec![[0.0, 0.0, 1.0]] };
    assert!(overlapping.family(&truth).is_err());
}

fn shape() -> impl Strategy<Value = StarShape> {
    (prop::collection::vec(-0.1..0.1f64, 8), -1.0..1.0f64, -1.0..1.0f64).prop_map(|(mut c, x, z)| {
        c.insert(0, 3.5);
        StarShape::new(2, c, Vec3::new(x, 0.0, z)).unwrap()
    })
}

proptest! {
    #[test]
    fn shape_distance_is_a_metric(a in shape(), b in shape(), c in shape()) {
        prop_assert_eq!(shape_distance(&a, &a), 0.0);
        prop_assert_eq!(shape_distance(&a, &b), shape_distance(&b, &a));
        prop_assert!(shape_distance(&a, &c) <= shape_distance(&a, &b) + shape_distance(&b, &c) + 1e-12);
    }

    #[test]
    fn shapes_round_trip_through_json(s in shape()) {
        let text = serde_json::to_string(&s).unwrap();
        prop_assert_eq!(serde_json::from_str::<StarShape>(&text).unwrap(), s);
    }

    #[test]
    fn direction_pairs_depend_only_on_the_seed(seed in any::<u64>()) {
        let a = random_direction_pairs(5, seed);
        prop_assert_eq!(&a, &random_direction_pairs(5, seed));
        for (x, y) in &a {
            prop_assert!((x.vec().norm() - 1.0).abs() < 1e-14 && (y.vec().norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn loglog_fit_recovers_power_laws(p in -3.0..1.0f64, c in 0.1..10.0f64) {
        let x = [20.0, 40.0, 80.0, 160.0];
        let y: Vec<f64> = x.iter().map(|t: &f64| c * t.powf(p)).collect();
        let (slope, _) = fit_loglog(&x, &y);
        prop_assert!((slope - p).abs() < 1e-10);
    }
}
