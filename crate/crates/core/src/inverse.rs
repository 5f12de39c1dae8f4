//! Shape and boundary-condition recovery from far-field data at a single
//! incident direction and a single wavenumber.
//!
//! The shape is fitted by damped Gauss-Newton over the radial coefficients
//! with a finite-difference Jacobian. The boundary condition is chosen by
//! fitting each family (Dirichlet, Neumann, impedance with fitted `h`) on a
//! known surface and comparing misfits.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forward::{
    boundary_trace, BoundaryCondition, Excitation, FarFieldPattern, ForwardError, MfsSystem, SolveOptions,
    WaveContext,
};
use crate::geometry::{build_quadrature, Direction, GeometryError, StarShape};
use crate::identities::FAR_FIELD_TOL;

/// Largest reconstruction degree accepted unless raised explicitly.
pub const DEFAULT_LMAX_CAP: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum InverseError {
    #[error(transparent)]
    Forward(#[from] ForwardError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid problem: {0}")]
    BadProblem(String),
    #[error("misfit could not be decreased after {iterations} iterations (misfit {misfit:.3e})")]
    Diverged { iterations: usize, misfit: f64, report: Box<ReconstructionReport> },
    #[error("no star-shaped iterate found along the step after {0} shrinks")]
    NotStarShaped(usize),
}

/// Tikhonov weights: starts at `initial` (or `1e-2 |J|^2` when unset),
/// multiplied by `factor` after every accepted step, never below `floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Regularization {
    pub initial: Option<f64>,
    pub factor: f64,
    pub floor: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization { initial: None, factor: 0.5, floor: 1e-10 }
    }
}

/// Far-field data at one `(alpha0, k0)` plus the optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseProblem {
    data: FarFieldPattern,
    alpha0: Direction,
    pub bc_hypothesis: Option<BoundaryCondition>,
    pub init: StarShape,
    pub lmax_recon: usize,
    pub regularization: Regularization,
    pub max_iters: usize,
    pub step_tol: f64,
    /// Absolute misfit at which iteration stops; `None` uses twice the
    /// far-field tolerance relative to the data norm.
    pub residual_tol: Option<f64>,
    /// Forward discretization used inside the optimizer.
    pub solve: SolveOptions,
    pub lmax_cap: usize,
}

/// Forward settings used by the optimizer: a fixed source count and
/// dilation keep the model a smooth function of the coefficients.
pub fn optimizer_solve_options() -> SolveOptions {
    SolveOptions { sources: Some(400), dilation: Some(0.6), ..SolveOptions::default() }
}

impl InverseProblem {
    pub fn new(data: FarFieldPattern, init: StarShape, lmax_recon: usize) -> Result<Self, InverseError> {
        let alpha0 =
            data.alpha.ok_or_else(|| InverseError::BadProblem("data carries no incident direction".into()))?;
        if !(data.k > 0.0) {
            return Err(InverseError::BadProblem(format!("wavenumber {} must be positive", data.k)));
        }
        if data.values.len() != data.grid.len() || data.grid.len() < 16 {
            return Err(InverseError::BadProblem("data must fill a direction grid".into()));
        }
        let p = InverseProblem {
            data,
            alpha0,
            bc_hypothesis: None,
            init,
            lmax_recon,
            regularization: Regularization::default(),
            max_iters: 50,
            step_tol: 1e-8,
            residual_tol: None,
            solve: optimizer_solve_options(),
            lmax_cap: DEFAULT_LMAX_CAP,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), InverseError> {
        if self.lmax_recon > self.lmax_cap {
            return Err(InverseError::BadProblem(format!(
                "lmax_recon {} exceeds the cap {}",
                self.lmax_recon, self.lmax_cap
            )));
        }
        Ok(())
    }

    /// The only data the optimizer sees: one pattern at one incidence.
    pub fn data(&self) -> &FarFieldPattern {
        &self.data
    }

    pub fn alpha0(&self) -> Direction {
        self.alpha0
    }

    pub fn k0(&self) -> f64 {
        self.data.k
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc_hypothesis.unwrap_or(BoundaryCondition::Dirichlet)
    }

    /// Stopping misfit in absolute units.
    pub fn residual_tolerance(&self) -> f64 {
        self.residual_tol.unwrap_or_else(|| 2.0 * FAR_FIELD_TOL * self.data.l2_norm())
    }

    fn wave(&self) -> Result<WaveContext, InverseError> {
        Ok(WaveContext::new(self.data.k)?)
    }
}

/// Model pattern of `shape` under `bc` on the problem's grid.
fn model_pattern(shape: &StarShape, bc: BoundaryCondition, p: &InverseProblem) -> Result<FarFieldPattern, InverseError> {
    let sys = MfsSystem::new(shape, bc, p.wave()?, &p.solve)?;
    let sol = sys.solve_unchecked(&Excitation::PlaneWave(p.alpha0))?;
    Ok(sol.far_field(&p.data.grid))
}

/// Weighted residual `sqrt(w_i) (A_model - A_data)` and its norm.
pub fn misfit(shape: &StarShape, bc: BoundaryCondition, p: &InverseProblem) -> Result<(Vec<Complex64>, f64), InverseError> {
    let model = model_pattern(shape, bc, p)?;
    Ok(weighted_residual(&model, &p.data))
}

fn weighted_residual(model: &FarFieldPattern, data: &FarFieldPattern) -> (Vec<Complex64>, f64) {
    let r: Vec<Complex64> = model
        .values
        .iter()
        .zip(&data.values)
        .zip(&data.grid.weights)
        .map(|((m, d), w)| (m - d) * w.sqrt())
        .collect();
    let n = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    (r, n)
}

/// Copy of `shape` with coefficient `j` shifted by `t`.
fn shifted(shape: &StarShape, j: usize, t: f64) -> Result<StarShape, GeometryError> {
    let mut c = shape.coeffs().to_vec();
    c[j] += t;
    StarShape::new(shape.lmax(), c, shape.center())
}

/// Finite-difference Jacobian of the weighted residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    /// `n_data x n_coeffs`, column-major in coefficient order.
    pub columns: Vec<Vec<Complex64>>,
    /// Columns that fell back to a one-sided difference because one of
    /// the perturbed shapes was not star-shaped.
    pub one_sided: Vec<usize>,
}

impl Jacobian {
    pub fn n_coeffs(&self) -> usize {
        self.columns.len()
    }

    /// `J x` for a real coefficient vector.
    pub fn apply(&self, x: &[f64]) -> Vec<Complex64> {
        let n = self.columns.first().map_or(0, |c| c.len());
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (col, xj) in self.columns.iter().zip(x) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += c * xj;
            }
        }
        out
    }

    /// Real matrix with real parts stacked over imaginary parts.
    fn stacked(&self) -> DMatrix<f64> {
        let n = self.columns.first().map_or(0, |c| c.len());
        DMatrix::from_fn(2 * n, self.columns.len(), |i, j| {
            let v = self.columns[j][i % n];
            if i < n {
                v.re
            } else {
                v.im
            }
        })
    }
}

/// Central differences with step `1e-4 (1 + |c_j|)`, parallel over columns.
pub fn jacobian(shape: &StarShape, bc: BoundaryCondition, p: &InverseProblem) -> Result<Jacobian, InverseError> {
    let base = misfit(shape, bc, p)?.0;
    let cols: Vec<Result<(Vec<Complex64>, bool), InverseError>> = (0..shape.coeffs().len())
        .into_par_iter()
        .map(|j| {
            let h = 1e-4 * (1.0 + shape.coeffs()[j].abs());
            let plus = shifted(shape, j, h).ok();
            let minus = shifted(shape, j, -h).ok();
            let eval = |s: &StarShape| misfit(s, bc, p).map(|r| r.0);
            match (plus, minus) {
                (Some(a), Some(b)) => {
                    let (ra, rb) = (eval(&a)?, eval(&b)?);
                    Ok((ra.iter().zip(&rb).map(|(x, y)| (x - y) / (2.0 * h)).collect(), false))
                }
                (Some(a), None) => Ok((eval(&a)?.iter().zip(&base).map(|(x, y)| (x - y) / h).collect(), true)),
                (None, Some(b)) => Ok((base.iter().zip(&eval(&b)?).map(|(x, y)| (x - y) / h).collect(), true)),
                (None, None) => Err(InverseError::NotStarShaped(0)),
            }
        })
        .collect();
    let mut columns = Vec::with_capacity(cols.len());
    let mut one_sided = Vec::new();
    for (j, c) in cols.into_iter().enumerate() {
        let (col, flag) = c?;
        if flag {
            one_sided.push(j);
        }
        columns.push(col);
    }
    Ok(Jacobian { columns, one_sided })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionReport {
    pub final_shape: StarShape,
    /// Misfit at the start and after every accepted step.
    pub residual_history: Vec<f64>,
    pub step_norms: Vec<f64>,
    /// Condition number of the Jacobian at every iteration.
    pub jacobian_conditioning: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub converged: bool,
    /// Which stopping rule fired.
    pub stop_reason: String,
    pub bc_result: Option<BcClassification>,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_SHRINKS: usize = 30;

/// Damped Gauss-Newton on the stacked real and imaginary residual.
pub fn reconstruct_shape(p: &InverseProblem) -> Result<ReconstructionReport, InverseError> {
    p.validate()?;
    let bc = p.bc();
    let tol = p.residual_tolerance();
    let mut shape = p.init.with_lmax(p.lmax_recon)?;
    let (mut r, mut f) = misfit(&shape, bc, p)?;
    let mut report = ReconstructionReport {
        final_shape: shape.clone(),
        residual_history: vec![f],
        step_norms: Vec::new(),
        jacobian_conditioning: Vec::new(),
        lambdas: Vec::new(),
        converged: false,
        stop_reason: String::new(),
        bc_result: None,
    };
    let mut lambda = p.regularization.initial;
    for iter in 0..p.max_iters {
        if f <= tol {
            report.converged = true;
            report.stop_reason = "residual_tol".into();
            break;
        }
        let jac = jacobian(&shape, bc, p)?;
        let j = jac.stacked();
        let rs = DVector::from_iterator(2 * r.len(), r.iter().map(|v| v.re).chain(r.iter().map(|v| v.im)));
        let jtj = j.transpose() * &j;
        let eig = jtj.clone().symmetric_eigen().eigenvalues;
        let (emax, emin) = eig.iter().fold((0.0f64, f64::INFINITY), |(a, b), &e| (a.max(e), b.min(e)));
        report.jacobian_conditioning.push(if emin > 0.0 { (emax / emin).sqrt() } else { f64::INFINITY });
        let lam = *lambda.get_or_insert(1e-2 * emax);
        report.lambdas.push(lam);
        let grad = j.transpose() * &rs;
        let mut lhs = jtj;
        for d in 0..lhs.nrows() {
            lhs[(d, d)] += lam;
        }
        let step = lhs
            .cholesky()
            .ok_or_else(|| InverseError::BadProblem("regularized normal matrix is not positive definite".into()))?
            .solve(&(-&grad));
        // Armijo on 0.5 |r|^2 with shrinking also restoring star-shapedness
        let phi0 = 0.5 * f * f;
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_SHRINKS {
            let c: Vec<f64> = shape.coeffs().iter().zip(step.iter()).map(|(c, s)| c + t * s).collect();
            if let Ok(trial) = StarShape::new(shape.lmax(), c, shape.center()) {
                if let Ok((rt, ft)) = misfit(&trial, bc, p) {
                    if 0.5 * ft * ft <= phi0 + ARMIJO_C * t * slope {
                        accepted = Some((trial, rt, ft));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((trial, rt, ft)) = accepted else {
            report.final_shape = shape.clone();
            if step.norm() <= p.step_tol {
                report.converged = true;
                report.stop_reason = "step_tol".into();
                return Ok(report);
            }
            report.stop_reason = "line_search_exhausted".into();
            return Err(InverseError::Diverged { iterations: iter, misfit: f, report: Box::new(report) });
        };
        let step_norm = t * step.norm();
        shape = trial;
        r = rt;
        f = ft;
        report.step_norms.push(step_norm);
        report.residual_history.push(f);
        report.final_shape = shape.clone();
        lambda = Some((lam * p.regularization.factor).max(p.regularization.floor));
        if step_norm <= p.step_tol {
            report.converged = true;
            report.stop_reason = "step_tol".into();
            return Ok(report);
        }
    }
    if report.stop_reason.is_empty() {
        if f <= tol {
            report.converged = true;
            report.stop_reason = "residual_tol".into();
        } else {
            report.stop_reason = "max_iters".into();
        }
    }
    Ok(report)
}

/// Shape reconstruction under the hypothesis, then boundary-condition
/// classification on the recovered surface.
pub fn reconstruct_and_classify(p: &InverseProblem) -> Result<ReconstructionReport, InverseError> {
    let mut report = reconstruct_shape(p)?;
    report.bc_result = Some(classify_boundary_condition(&report.final_shape, p)?);
    Ok(report)
}

// ----------------------------------------------------------------------------
// Boundary condition classification

/// Surface statistics of the selected model solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceDiagnostics {
    /// Area-weighted mean of `|u|` on the surface.
    pub mean_abs_u: f64,
    pub max_abs_u: f64,
    /// Area-weighted mean of `|u_N|` over `max |u|`.
    pub mean_abs_un_over_max_u: f64,
    /// Area-weighted mean of `|u_N| / |u|`.
    pub mean_ratio_abs: f64,
    /// Area-weighted mean of `-u_N / u`, the empirical impedance.
    pub surface_ratio_mean: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BcFamily {
    Dirichlet,
    Neumann,
    Impedance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyMisfits {
    pub dirichlet: f64,
    pub neumann: f64,
    pub impedance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcClassification {
    pub bc: BoundaryCondition,
    pub family: BcFamily,
    /// Best impedance found by the projected Newton fit.
    pub fitted_h: Complex64,
    pub h_iterations: usize,
    pub misfits: FamilyMisfits,
    /// The tag is not to be trusted: either the two best families are
    /// within 10% and describe different physics, or no family explains
    /// even half of the data on this surface.
    pub ambiguous: bool,
    pub diagnostics: SurfaceDiagnostics,
}

/// `|h|` beyond which the fitted impedance behaves as a Dirichlet wall and
/// below which it behaves as a Neumann wall, in units of `k`.
const H_DIRICHLET: f64 = 1e3;
const H_NEUMANN: f64 = 1e-3;
const H_MAX_ITERS: usize = 60;
/// Best-fit misfit, relative to the data norm, above which the surface
/// cannot account for the data under any boundary condition.
const UNEXPLAINED_FRACTION: f64 = 0.5;

fn h_misfit(shape: &StarShape, h: Complex64, p: &InverseProblem) -> Result<(Vec<Complex64>, f64), InverseError> {
    misfit(shape, BoundaryCondition::impedance(h)?, p)
}

/// Projected Gauss-Newton on the complex impedance, from `h = i`.
fn fit_impedance(shape: &StarShape, p: &InverseProblem) -> Result<(Complex64, f64, usize), InverseError> {
    let k = p.k0();
    let mut h = Complex64::new(0.0, 1.0);
    let (mut r, mut f) = h_misfit(shape, h, p)?;
    let mut iters = 0;
    while iters < H_MAX_ITERS {
        iters += 1;
        let eps = 1e-6 * (1.0 + h.norm());
        let (rp, _) = h_misfit(shape, h + eps, p)?;
        let d: Vec<Complex64> = rp.iter().zip(&r).map(|(a, b)| (a - b) / eps).collect();
        let dd: f64 = d.iter().map(|v| v.norm_sqr()).sum();
        if dd == 0.0 {
            break;
        }
        let dr: Complex64 = d.iter().zip(&r).map(|(a, b)| a.conj() * b).sum();
        let step = -dr / dd;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..20 {
            let mut trial = h + step * t;
            trial.im = trial.im.max(0.0);
            let (rt, ft) = h_misfit(shape, trial, p)?;
            if ft < f {
                let change = (trial - h).norm();
                h = trial;
                r = rt;
                f = ft;
                moved = change > 1e-10 * (1.0 + h.norm());
                break;
            }
            t *= 0.5;
        }
        if !moved || h.norm() > 10.0 * H_DIRICHLET * k || h.norm() < 0.1 * H_NEUMANN * k {
            break;
        }
    }
    Ok((h, f, iters))
}

fn surface_diagnostics(
    shape: &StarShape,
    bc: BoundaryCondition,
    p: &InverseProblem,
) -> Result<SurfaceDiagnostics, InverseError> {
    let sys = MfsSystem::new(shape, bc, p.wave()?, &p.solve)?;
    let sol = sys.solve_unchecked(&Excitation::PlaneWave(p.alpha0))?;
    let q = build_quadrature(shape, 32, 64)?;
    let (u, un) = boundary_trace(&sol, &q)?;
    let area = q.area();
    let max_abs_u = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut mean_u = 0.0;
    let mut mean_un = 0.0;
    let mut mean_ratio_abs = 0.0;
    let mut ratio = Complex64::new(0.0, 0.0);
    for i in 0..q.len() {
        let w = q.weights[i] / area;
        mean_u += w * u[i].norm();
        mean_un += w * un[i].norm();
        mean_ratio_abs += w * un[i].norm() / u[i].norm();
        ratio += -un[i] / u[i] * w;
    }
    Ok(SurfaceDiagnostics {
        mean_abs_u: mean_u,
        max_abs_u,
        mean_abs_un_over_max_u: mean_un / max_abs_u,
        mean_ratio_abs,
        surface_ratio_mean: ratio,
    })
}

/// Fits Dirichlet, Neumann and impedance models on the known surface and
/// picks the family that explains the data.
pub fn classify_boundary_condition(shape: &StarShape, p: &InverseProblem) -> Result<BcClassification, InverseError> {
    let k = p.k0();
    let (md, mn) = rayon::join(
        || misfit(shape, BoundaryCondition::Dirichlet, p).map(|r| r.1),
        || misfit(shape, BoundaryCondition::Neumann, p).map(|r| r.1),
    );
    let (md, mn) = (md?, mn?);
    let (h, mi, h_iterations) = fit_impedance(shape, p)?;
    let dirichlet_like = h.norm() >= H_DIRICHLET * k;
    let neumann_like = h.norm() <= H_NEUMANN * k;

    let (family, bc) = if md <= mn && md <= 2.0 * mi && dirichlet_like {
        (BcFamily::Dirichlet, BoundaryCondition::Dirichlet)
    } else if mn < md && mn <= 2.0 * mi && neumann_like {
        (BcFamily::Neumann, BoundaryCondition::Neumann)
    } else {
        (BcFamily::Impedance, BoundaryCondition::impedance(h)?)
    };

    // Families that agree with the fitted h describe the same wall.
    let same = |a: BcFamily, b: BcFamily| {
        a == b
            || matches!((a, b), (BcFamily::Dirichlet, BcFamily::Impedance) | (BcFamily::Impedance, BcFamily::Dirichlet) if dirichlet_like)
            || matches!((a, b), (BcFamily::Neumann, BcFamily::Impedance) | (BcFamily::Impedance, BcFamily::Neumann) if neumann_like)
    };
    let mut ranked = [(md, BcFamily::Dirichlet), (mn, BcFamily::Neumann), (mi, BcFamily::Impedance)];
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best = ranked[0];
    let close_rival = ranked[1..].iter().find(|r| !same(best.1, r.1)).is_some_and(|r| r.0 <= 1.1 * best.0);
    let ambiguous = close_rival || best.0 > UNEXPLAINED_FRACTION * p.data().l2_norm();

    let diagnostics = surface_diagnostics(shape, bc, p)?;
    Ok(BcClassification {
        bc,
        family,
        fitted_h: h,
        h_iterations,
        misfits: FamilyMisfits { dirichlet: md, neumann: mn, impedance: mi },
        ambiguous,
        diagnostics,
    })
}
