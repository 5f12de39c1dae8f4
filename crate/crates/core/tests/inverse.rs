use std::f64::consts::PI;

use num_complex::Complex64;

use farfield_core::forward::{BoundaryCondition, Excitation, FarFieldPattern, MfsSystem, SolveOptions, WaveContext};
use farfield_core::geometry::{Direction, DirectionGrid, StarShape, Vec3};
use farfield_core::inverse::{
    classify_boundary_condition, jacobian, misfit, optimizer_solve_options, reconstruct_shape, InverseError,
    InverseProblem,
};

const K: f64 = 2.0;

fn unit() -> StarShape {
    StarShape::sphere(1.0, Vec3::zeros()).unwrap()
}

/// Data from a different and finer forward model than the optimizer uses:
/// 900 sources at the sphere default depth against 400 at 0.6.
fn data(truth: &StarShape, bc: BoundaryCondition, grid: DirectionGrid) -> FarFieldPattern {
    let opts = SolveOptions::default().refined(1.5);
    MfsSystem::new(truth, bc, WaveContext::new(K).unwrap(), &opts)
        .unwrap()
        .solve_unchecked(&Excitation::PlaneWave(Direction::z()))
        .unwrap()
        .far_field(&grid)
}

fn small_grid() -> DirectionGrid {
    DirectionGrid::gauss(12, 24)
}

#[test]
fn misfit_vanishes_only_near_the_truth() {
    let p = InverseProblem::new(data(&unit(), BoundaryCondition::Dirichlet, small_grid()), unit(), 0).unwrap();
    let (_, at_truth) = misfit(&unit(), BoundaryCondition::Dirichlet, &p).unwrap();
    let bigger = StarShape::sphere(1.1, Vec3::zeros()).unwrap();
    let (_, off) = misfit(&bigger, BoundaryCondition::Dirichlet, &p).unwrap();
    let (_, wrong_bc) = misfit(&unit(), BoundaryCondition::Neumann, &p).unwrap();
    // Different discretizations, so the truth leaves a small nonzero misfit.
    assert!(at_truth > 0.0 && at_truth < p.residual_tolerance(), "{at_truth}");
    assert!(off > 1e3 * at_truth);
    assert!(wrong_bc > 1e3 * at_truth);
}

#[test]
fn jacobian_matches_a_directional_difference() {
    let shape = unit().with_lmax(2).unwrap();
    let p = InverseProblem::new(data(&unit(), BoundaryCondition::Dirichlet, small_grid()), shape.clone(), 2).unwrap();
    let j = jacobian(&shape, BoundaryCondition::Dirichlet, &p).unwrap();
    assert_eq!(j.n_coeffs(), 9);
    assert!(j.one_sided.is_empty());
    let dir: Vec<f64> = (0..9).map(|i| ((i as f64) * 0.7).sin()).collect();
    let h = 1e-4;
    let step = |t: f64| {
        let c: Vec<f64> = shape.coeffs().iter().zip(&dir).map(|(c, d)| c + t * d).collect();
        misfit(&StarShape::new(2, c, Vec3::zeros()).unwrap(), BoundaryCondition::Dirichlet, &p).unwrap().0
    };
    let (plus, minus) = (step(h), step(-h));
    let predicted = j.apply(&dir);
    let scale = predicted.iter().map(|v| v.norm()).fold(0.0, f64::max);
    for ((a, b), jd) in plus.iter().zip(&minus).zip(&predicted) {
        assert!(((a - b) / (2.0 * h) - jd).norm() < 1e-4 * scale);
    }
}

#[test]
fn degree_one_column_is_a_translation() {
    // r = 1 + c Y_{1,0} is, to first order, the unit sphere shifted by
    // c sqrt(3 / 4 pi) along z, which multiplies A by exp(ik (alpha - beta) . t).
    let shape = unit().with_lmax(1).unwrap();
    let grid = small_grid();
    let p = InverseProblem::new(data(&unit(), BoundaryCondition::Dirichlet, grid.clone()), shape.clone(), 1).unwrap();
    let j = jacobian(&shape, BoundaryCondition::Dirichlet, &p).unwrap();
    let column = &j.columns[2];
    let a0 = MfsSystem::new(&unit(), BoundaryCondition::Dirichlet, WaveContext::new(K).unwrap(), &optimizer_solve_options())
        .unwrap()
        .solve_unchecked(&Excitation::PlaneWave(Direction::z()))
        .unwrap()
        .far_field(&grid);
    let dz = (3.0 / (4.0 * PI)).sqrt();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for (i, beta) in grid.directions.iter().enumerate() {
        let expected = Complex64::new(0.0, K * (1.0 - beta.vec().z) * dz) * a0.values[i] * grid.weights[i].sqrt();
        worst = worst.max((column[i] - expected).norm());
        scale = scale.max(expected.norm());
    }
    assert!(worst < 1e-4 * scale, "{worst} vs {scale}");
}

#[test]
fn starting_at_the_truth_stops_at_once() {
    let p = InverseProblem::new(data(&unit(), BoundaryCondition::Dirichlet, small_grid()), unit(), 0).unwrap();
    let r = reconstruct_shape(&p).unwrap();
    assert!(r.converged);
    assert_eq!(r.stop_reason, "residual_tol");
    assert_eq!(r.residual_history.len(), 1);
    assert_eq!(r.final_shape, unit());
}

#[test]
fn problem_setup_is_validated() {
    let mut d = data(&unit(), BoundaryCondition::Dirichlet, small_grid());
    assert!(matches!(InverseProblem::new(d.clone(), unit(), 9), Err(InverseError::BadProblem(_))));
    d.alpha = None;
    assert!(matches!(InverseProblem::new(d, unit(), 0), Err(InverseError::BadProblem(_))));
}

#[test]
fn classification_is_stable_under_regenerated_data() {
    let h = Complex64::new(0.5, 0.3);
    let grid = small_grid();
    let p = InverseProblem::new(data(&unit(), BoundaryCondition::Impedance(h), grid.clone()), unit(), 0).unwrap();
    let first = classify_boundary_condition(&unit(), &p).unwrap();
    assert!(!first.ambiguous);
    let BoundaryCondition::Impedance(h1) = first.bc else { panic!("expected impedance, got {:?}", first.bc) };
    assert!((h1 - h).norm() < 1e-3);
    // Data made from the classified condition classifies the same way.
    let again = InverseProblem::new(data(&unit(), first.bc, grid), unit(), 0).unwrap();
    let second = classify_boundary_condition(&unit(), &again).unwrap();
    assert_eq!(second.family, first.family);
    let BoundaryCondition::Impedance(h2) = second.bc else { panic!("expected impedance") };
    assert!((h2 - h1).norm() < 1e-6);
}
