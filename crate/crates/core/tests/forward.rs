use std::f64::consts::PI;

use nalgebra::Rotation3;
use num_complex::Complex64;
use proptest::prelude::*;

use farfield_core::forward::{
    green, green_with_gradient, greens_function, BoundaryCondition, Excitation, MfsSystem, SolveOptions, WaveContext,
};
use farfield_core::geometry::{Direction, DirectionGrid, StarShape, Vec3};
use farfield_core::mie::mie_coefficients;

fn unit() -> StarShape {
    StarShape::sphere(1.0, Vec3::zeros()).unwrap()
}

fn impedance() -> BoundaryCondition {
    BoundaryCondition::Impedance(Complex64::new(0.5, 0.3))
}

#[test]
fn near_field_matches_mie_series() {
    let alpha = Direction::z();
    let x = Vec3::new(3.0, 0.0, 0.0);
    for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann, impedance()] {
        let sys = MfsSystem::new(&unit(), bc, WaveContext::new(2.0).unwrap(), &SolveOptions::default()).unwrap();
        let u = sys.solve(&Excitation::PlaneWave(alpha)).unwrap().eval_field(&x).unwrap();
        let exact = mie_coefficients(1.0, 2.0, bc, None).unwrap().total_field(&x, &alpha).unwrap();
        assert!((u - exact).norm() < 1e-8, "{}: {u} vs {exact}", bc.name());
    }
}

#[test]
fn far_field_matches_mie_on_full_grid() {
    let grid = DirectionGrid::gauss(32, 64);
    let alpha = Direction::from_angles(0.7, 1.9);
    let sphere = StarShape::sphere(2.0, Vec3::zeros()).unwrap();
    let sys = MfsSystem::new(&sphere, impedance(), WaveContext::new(1.0).unwrap(), &SolveOptions::default()).unwrap();
    let ff = sys.solve(&Excitation::PlaneWave(alpha)).unwrap().far_field(&grid);
    let exact = mie_coefficients(2.0, 1.0, impedance(), None).unwrap().far_field_grid(&grid, &alpha);
    let scale = exact.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let err = ff.values.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err <= 1e-6 * scale, "{err}");
}

#[test]
fn far_field_follows_a_translated_sphere() {
    // A(beta) picks up exp(ik (alpha - beta) . c) under translation by c.
    let c = Vec3::new(0.2, -0.1, 0.3);
    let k = 2.0;
    let alpha = Direction::from_angles(0.4, 0.2);
    let opts = SolveOptions::default();
    let a0 = MfsSystem::new(&unit(), BoundaryCondition::Neumann, WaveContext::new(k).unwrap(), &opts)
        .unwrap()
        .solve(&Excitation::PlaneWave(alpha))
        .unwrap();
    let moved = StarShape::sphere(1.0, c).unwrap();
    let a1 = MfsSystem::new(&moved, BoundaryCondition::Neumann, WaveContext::new(k).unwrap(), &opts)
        .unwrap()
        .solve(&Excitation::PlaneWave(alpha))
        .unwrap();
    for beta in DirectionGrid::gauss(6, 12).directions {
        let phase = Complex64::from_polar(1.0, k * (alpha.vec() - beta.vec()).dot(&c));
        assert!((a1.far_field_at(&beta) - phase * a0.far_field_at(&beta)).norm() < 1e-8);
    }
}

#[test]
fn obstacle_greens_function_is_symmetric() {
    let shape = StarShape::sphere(0.8, Vec3::new(0.1, 0.0, 0.2)).unwrap();
    let wave = WaveContext::new(1.5).unwrap();
    let x = Vec3::new(2.2, 0.3, -0.6);
    let y = Vec3::new(-1.0, 1.8, 1.3);
    for bc in [BoundaryCondition::Dirichlet, impedance()] {
        let opts = SolveOptions::default();
        let gxy = greens_function(&shape, bc, wave, &x, &y, &opts).unwrap();
        let gyx = greens_function(&shape, bc, wave, &y, &x, &opts).unwrap();
        assert!((gxy - gyx).norm() < 1e-8 * gxy.norm(), "{gxy} vs {gyx}");
    }
}

#[test]
fn distant_source_looks_like_a_plane_wave() {
    // G(x, y) / g(|y|) tends to u(x, -y/|y|) as |y| grows.
    let k = 2.0;
    let wave = WaveContext::new(k).unwrap();
    let x = Vec3::new(1.5, 0.0, 0.3);
    let y = Vec3::new(0.0, 0.0, -1e4);
    let opts = SolveOptions::default();
    let g = greens_function(&unit(), BoundaryCondition::Dirichlet, wave, &x, &y, &opts).unwrap();
    let g_far = Complex64::from_polar(1.0, k * y.norm()) / (4.0 * PI * y.norm());
    let u = mie_coefficients(1.0, k, BoundaryCondition::Dirichlet, None).unwrap().total_field(&x, &Direction::z()).unwrap();
    assert!((g / g_far - u).norm() < 1e-2, "{} vs {u}", g / g_far);
}

#[test]
fn rotating_obstacle_and_directions_together_leaves_amplitude_unchanged() {
    let shape = unit().perturb(2, 1, 0.1).unwrap();
    let rot = Rotation3::from_euler_angles(0.3, -0.8, 1.1);
    let opts = SolveOptions { sources: Some(900), tol: 1e-3, ..SolveOptions::default() };
    let wave = WaveContext::new(1.5).unwrap();
    let alpha = Direction::from_angles(1.0, 0.5);
    let beta = Direction::from_angles(2.0, -1.0);
    let a = MfsSystem::new(&shape, impedance(), wave, &opts)
        .unwrap()
        .solve(&Excitation::PlaneWave(alpha))
        .unwrap()
        .far_field_at(&beta);
    let b = MfsSystem::new(&shape.rotated(&rot), impedance(), wave, &opts)
        .unwrap()
        .solve(&Excitation::PlaneWave(alpha.rotated(&rot)))
        .unwrap()
        .far_field_at(&beta.rotated(&rot));
    assert!((a - b).norm() < 1e-5 * a.norm(), "{a} vs {b}");
}

#[test]
fn far_field_converges_under_refinement() {
    let shape = unit().perturb(2, 0, 0.1).unwrap();
    let wave = WaveContext::new(1.0).unwrap();
    let grid = DirectionGrid::gauss(8, 16);
    let pattern = |m: usize| {
        let opts = SolveOptions { sources: Some(m), tol: 1.0, ..SolveOptions::default() };
        MfsSystem::new(&shape, BoundaryCondition::Dirichlet, wave, &opts)
            .unwrap()
            .solve(&Excitation::PlaneWave(Direction::x()))
            .unwrap()
            .far_field(&grid)
    };
    let (coarse, mid, fine) = (pattern(150), pattern(400), pattern(1000));
    let (e1, e2) = (coarse.l2_distance(&fine), mid.l2_distance(&fine));
    assert!(e2 < 0.1 * e1, "{e1} then {e2}");
    assert!(e2 < 1e-5 * fine.l2_norm());
}

#[test]
fn reciprocity_on_an_off_center_sphere() {
    let shape = StarShape::sphere(0.7, Vec3::new(0.3, -0.2, 0.1)).unwrap();
    let sys = MfsSystem::new(&shape, impedance(), WaveContext::new(2.5).unwrap(), &SolveOptions::default()).unwrap();
    let alpha = Direction::from_angles(0.3, 2.0);
    let beta = Direction::from_angles(2.2, -0.4);
    let a = sys.solve(&Excitation::PlaneWave(alpha)).unwrap().far_field_at(&beta);
    let b = sys.solve(&Excitation::PlaneWave(-beta)).unwrap().far_field_at(&-alpha);
    assert!((a - b).norm() < 1e-9 * a.norm());
}

#[test]
fn points_inside_the_obstacle_are_rejected() {
    let sys =
        MfsSystem::new(&unit(), BoundaryCondition::Dirichlet, WaveContext::new(1.0).unwrap(), &SolveOptions::default())
            .unwrap();
    let sol = sys.solve(&Excitation::PlaneWave(Direction::z())).unwrap();
    assert!(sol.eval_field(&Vec3::new(0.2, 0.1, 0.0)).is_err());
    assert!(sys.solve(&Excitation::PointSource(Vec3::new(0.0, 0.5, 0.0))).is_err());
}

fn point() -> impl Strategy<Value = Vec3> {
    (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #[test]
    fn free_space_kernel_is_symmetric(x in point(), y in point(), k in 0.1..10.0f64) {
        prop_assume!((x - y).norm() > 1e-3);
        prop_assert_eq!(green(k, &x, &y), green(k, &y, &x));
    }

    #[test]
    fn kernel_gradient_matches_differences(x in point(), y in point(), k in 0.1..5.0f64) {
        prop_assume!((x - y).norm() > 0.3);
        let (_, g) = green_with_gradient(k, &x, &y);
        let h = 1e-6;
        for (i, gi) in g.iter().enumerate() {
            let mut e = Vec3::zeros();
            e[i] = h;
            let fd = (green(k, &(x + e), &y) - green(k, &(x - e), &y)) / (2.0 * h);
            prop_assert!((fd - gi).norm() < 1e-6 * (1.0 + gi.norm()));
        }
    }
}
