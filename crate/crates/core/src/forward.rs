//! Forward scattering by the method of fundamental solutions.
//!
//! The scattered field is `v(x) = sum_j c_j g(x, y_j)` with
//! `g(x, y) = e^{ik|x-y|} / (4 pi |x-y|)` and sources `y_j` on a dilated copy
//! of the surface inside the obstacle. Each term radiates, so `v` satisfies
//! the radiation condition exactly; the coefficients are fitted to the
//! boundary condition at collocation nodes by truncated-SVD least squares.
//!
//! Far-field convention: `v = A(beta) e^{ikr}/r + O(1/r^2)`, hence
//! `A(beta) = (1/4pi) sum_j c_j e^{-ik beta . y_j}`.

use faer::{c64, Mat};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::geometry::{
    build_quadrature, build_quadrature_offset, fibonacci_directions, Direction, DirectionGrid, GeometryError,
    StarShape, SurfaceQuadrature, Vec3,
};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest `k * diameter` the solver accepts.
pub const MAX_K_DIAMETER: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForwardError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("wavenumber must be positive and finite, got {0}")]
    BadWavenumber(f64),
    #[error("impedance must satisfy Im h >= 0, got {0}")]
    BadImpedance(Complex64),
    #[error("k * diameter = {0:.3} exceeds the supported maximum {MAX_K_DIAMETER}")]
    TooLarge(f64),
    #[error("point source at {0:?} is not exterior to the obstacle")]
    SourceNotExterior([f64; 3]),
    #[error("evaluation point {0:?} lies inside the obstacle")]
    InsideObstacle([f64; 3]),
    #[error("evaluation point coincides with a singular source")]
    AtSingularity,
    #[error("MFS source escaped the obstacle (clearance {0:e})")]
    SourceLeak(f64),
    #[error("solver option out of range: {0}")]
    BadOption(String),
    #[error("boundary residual {residual:e} exceeds tolerance {tol:e} (condition estimate {condition:e})")]
    ResidualAboveTolerance { residual: f64, tol: f64, condition: f64 },
    #[error("SVD failed to converge")]
    Svd,
}

/// Wavenumber `k > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveContext {
    k: f64,
}

impl WaveContext {
    pub fn new(k: f64) -> Result<Self, ForwardError> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(ForwardError::BadWavenumber(k));
        }
        Ok(WaveContext { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }
}

/// `Gamma_1 u = u`, `Gamma_2 u = u_N`, `Gamma_3 u = u_N + h u`, with `N`
/// pointing out of the obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BcSpec", into = "BcSpec")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
    Impedance(Complex64),
}

/// Serialized form: `{"type": "dirichlet"}` or `{"type": "impedance", "h": [re, im]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum BcSpec {
    Dirichlet,
    Neumann,
    Impedance { h: [f64; 2] },
}

impl TryFrom<BcSpec> for BoundaryCondition {
    type Error = ForwardError;
    fn try_from(s: BcSpec) -> Result<Self, ForwardError> {
        match s {
            BcSpec::Dirichlet => Ok(BoundaryCondition::Dirichlet),
            BcSpec::Neumann => Ok(BoundaryCondition::Neumann),
            BcSpec::Impedance { h } => BoundaryCondition::impedance(Complex64::new(h[0], h[1])),
        }
    }
}

impl From<BoundaryCondition> for BcSpec {
    fn from(b: BoundaryCondition) -> Self {
        match b {
            BoundaryCondition::Dirichlet => BcSpec::Dirichlet,
            BoundaryCondition::Neumann => BcSpec::Neumann,
            BoundaryCondition::Impedance(h) => BcSpec::Impedance { h: [h.re, h.im] },
        }
    }
}

impl BoundaryCondition {
    pub fn impedance(h: Complex64) -> Result<Self, ForwardError> {
        if !(h.im >= 0.0) || !h.re.is_finite() || !h.im.is_finite() {
            return Err(ForwardError::BadImpedance(h));
        }
        Ok(BoundaryCondition::Impedance(h))
    }

    pub fn name(&self) -> &'static str {
        match self {
            BoundaryCondition::Dirichlet => "dirichlet",
            BoundaryCondition::Neumann => "neumann",
            BoundaryCondition::Impedance(_) => "impedance",
        }
    }

    /// `Gamma u` from a value and a normal derivative.
    #[inline]
    pub fn apply(&self, u: Complex64, u_n: Complex64) -> Complex64 {
        match self {
            BoundaryCondition::Dirichlet => u,
            BoundaryCondition::Neumann => u_n,
            BoundaryCondition::Impedance(h) => u_n + h * u,
        }
    }

    fn needs_gradient(&self) -> bool {
        !matches!(self, BoundaryCondition::Dirichlet)
    }
}

/// Incident field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Excitation {
    /// `e^{ik alpha . x}`
    PlaneWave(Direction),
    /// `g(x, y)`
    PointSource(Vec3),
}

impl Excitation {
    #[inline]
    pub fn field(&self, k: f64, x: &Vec3) -> Complex64 {
        match self {
            Excitation::PlaneWave(a) => Complex64::from_polar(1.0, k * a.vec().dot(x)),
            Excitation::PointSource(y) => green(k, x, y),
        }
    }

    #[inline]
    pub fn gradient(&self, k: f64, x: &Vec3) -> [Complex64; 3] {
        match self {
            Excitation::PlaneWave(a) => {
                let a = a.vec();
                let e = I * k * Complex64::from_polar(1.0, k * a.dot(x));
                [e * a.x, e * a.y, e * a.z]
            }
            Excitation::PointSource(y) => green_with_gradient(k, x, y).1,
        }
    }
}

/// Free-space outgoing kernel `e^{ik|x-y|} / (4 pi |x-y|)`.
#[inline]
pub fn green(k: f64, x: &Vec3, y: &Vec3) -> Complex64 {
    let r = (x - y).norm();
    Complex64::from_polar(1.0 / (4.0 * PI * r), k * r)
}

/// Kernel and its gradient in `x`.
#[inline]
pub fn green_with_gradient(k: f64, x: &Vec3, y: &Vec3) -> (Complex64, [Complex64; 3]) {
    let d = x - y;
    let r = d.norm();
    let g = Complex64::from_polar(1.0 / (4.0 * PI * r), k * r);
    let f = g * Complex64::new(-1.0 / r, k) / r;
    (g, [f * d.x, f * d.y, f * d.z])
}

#[inline]
fn dot3(g: &[Complex64; 3], n: &Vec3) -> Complex64 {
    g[0] * n.x + g[1] * n.y + g[2] * n.z
}

/// Discretization and tolerance knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Number of MFS sources; `None` picks from `k * max_radius`.
    pub sources: Option<usize>,
    /// Source surface = radial map scaled by this factor; `None` picks 0.4
    /// for spheres and 0.65 otherwise.
    pub dilation: Option<f64>,
    /// Collocation nodes per source (at least 2); `None` picks 2 for
    /// spheres and 3 otherwise.
    pub oversampling: Option<f64>,
    /// Maximum accepted boundary residual.
    pub tol: f64,
    /// Relative singular value cutoff.
    pub svd_cutoff: f64,
    /// Linear multiplier on all grid dimensions (source and node counts
    /// scale with its square).
    pub resolution: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { sources: None, dilation: None, oversampling: None, tol: 1e-6, svd_cutoff: 1e-12, resolution: 1.0 }
    }
}

impl SolveOptions {
    /// Source count for `shape` at electrical size `k * max_radius`.
    pub fn source_count_for(&self, shape: &StarShape, ka: f64) -> usize {
        let base = self.sources.unwrap_or_else(|| {
            let m = default_source_count(ka);
            if shape.is_sphere() {
                m
            } else {
                NON_SPHERE_SOURCE_FACTOR * m
            }
        });
        ((base as f64) * self.resolution * self.resolution).round().max(16.0) as usize
    }

    /// Dilation factor of the source surface for `shape`.
    pub fn dilation_for(&self, shape: &StarShape) -> f64 {
        self.dilation.unwrap_or(if shape.is_sphere() { SPHERE_DILATION } else { SHAPE_DILATION })
    }

    /// Collocation nodes per source for `shape`.
    pub fn oversampling_for(&self, shape: &StarShape) -> f64 {
        self.oversampling.unwrap_or(if shape.is_sphere() { SPHERE_OVERSAMPLING } else { SHAPE_OVERSAMPLING })
    }

    /// Copy with every discretization dimension scaled by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        SolveOptions { resolution: self.resolution * factor, ..self.clone() }
    }

    fn validate(&self) -> Result<(), ForwardError> {
        if let Some(d) = self.dilation {
            if !(0.3..=0.9).contains(&d) {
                return Err(ForwardError::BadOption(format!("dilation {d} outside [0.3, 0.9]")));
            }
        }
        if let Some(os) = self.oversampling {
            if !(os >= 2.0) {
                return Err(ForwardError::BadOption(format!("oversampling {os} below 2")));
            }
        }
        if !(self.tol > 0.0) || !(self.svd_cutoff > 0.0 && self.svd_cutoff < 1.0) || !(self.resolution > 0.0) {
            return Err(ForwardError::BadOption("tolerances and resolution must be positive".into()));
        }
        Ok(())
    }
}

/// Sphere fields continue analytically down to the center, so deep sources
/// converge fastest; other shapes have interior singularities that call for
/// a shallower source surface, more sources and denser collocation.
const SPHERE_DILATION: f64 = 0.4;
const SHAPE_DILATION: f64 = 0.65;
const SPHERE_OVERSAMPLING: f64 = 2.0;
const SHAPE_OVERSAMPLING: f64 = 3.0;
const NON_SPHERE_SOURCE_FACTOR: usize = 4;

/// 400 sources up to `ka = 4`, then `(2 ka + 12)^2`, which joins
/// continuously and gives 1024 at `ka = 10`.
pub fn default_source_count(ka: f64) -> usize {
    if ka <= 4.0 {
        400
    } else {
        let l = 2.0 * ka + 12.0;
        (l * l).ceil() as usize
    }
}

/// A factored MFS system for one (shape, boundary condition, wavenumber).
/// Solving for another incident field reuses the factorization.
pub struct MfsSystem {
    shape: StarShape,
    bc: BoundaryCondition,
    wave: WaveContext,
    opts: SolveOptions,
    sources: Vec<Vec3>,
    colloc: SurfaceQuadrature,
    check: SurfaceQuadrature,
    row_scale: Vec<f64>,
    u: Mat<c64>,
    v: Mat<c64>,
    sigma: Vec<f64>,
    rank: usize,
    condition_estimate: f64,
}

impl MfsSystem {
    pub fn new(
        shape: &StarShape,
        bc: BoundaryCondition,
        wave: WaveContext,
        opts: &SolveOptions,
    ) -> Result<Self, ForwardError> {
        opts.validate()?;
        if let BoundaryCondition::Impedance(h) = bc {
            BoundaryCondition::impedance(h)?;
        }
        let k = wave.k();
        let kd = k * shape.diameter();
        if kd > MAX_K_DIAMETER {
            return Err(ForwardError::TooLarge(kd));
        }
        let ka = k * shape.max_radius();
        let m = opts.source_count_for(shape, ka);
        let dilation = opts.dilation_for(shape);

        let center = shape.center();
        let sources: Vec<Vec3> = fibonacci_directions(m)
            .iter()
            .map(|d| center + d.vec() * (dilation * shape.radius_along(d)))
            .collect();
        for s in &sources {
            let c = shape.radial_clearance(s);
            if !(c < 0.0) {
                return Err(ForwardError::SourceLeak(c));
            }
        }

        let nt = ((opts.oversampling_for(shape) * m as f64 / 2.0).sqrt().ceil() as usize).max(8);
        let colloc = build_quadrature(shape, nt, 2 * nt)?;
        let check = build_quadrature_offset(shape, nt + 3, 2 * nt + 5, PI / (2 * nt + 5) as f64)?;
        let row_scale: Vec<f64> = colloc.weights.iter().map(|w| w.sqrt()).collect();

        let rows = colloc.len();
        let mut a = Mat::<c64>::zeros(rows, m);
        // column-major fill, one source per column
        let cols: Vec<Vec<Complex64>> = sources
            .par_iter()
            .map(|y| {
                (0..rows)
                    .map(|i| row_scale[i] * kernel_trace(&bc, k, &colloc.points[i], &colloc.normals[i], y))
                    .collect()
            })
            .collect();
        for (j, col) in cols.into_iter().enumerate() {
            for (i, v) in col.into_iter().enumerate() {
                a[(i, j)] = v;
            }
        }

        let svd = a.thin_svd().map_err(|_| ForwardError::Svd)?;
        let s_diag = svd.S().column_vector();
        let sigma: Vec<f64> = (0..s_diag.nrows()).map(|i| s_diag[i].re).collect();
        let smax = sigma.first().copied().unwrap_or(0.0);
        let rank = sigma.iter().take_while(|&&s| s > opts.svd_cutoff * smax).count();
        let smin = sigma.last().copied().unwrap_or(0.0);
        let condition_estimate = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        let u = svd.U().subcols(0, rank).to_owned();
        let v = svd.V().subcols(0, rank).to_owned();

        Ok(MfsSystem {
            shape: shape.clone(),
            bc,
            wave,
            opts: opts.clone(),
            sources,
            colloc,
            check,
            row_scale,
            u,
            v,
            sigma,
            rank,
            condition_estimate,
        })
    }

    pub fn shape(&self) -> &StarShape {
        &self.shape
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn wave(&self) -> WaveContext {
        self.wave
    }

    pub fn options(&self) -> &SolveOptions {
        &self.opts
    }

    pub fn sources(&self) -> &[Vec3] {
        &self.sources
    }

    pub fn collocation(&self) -> &SurfaceQuadrature {
        &self.colloc
    }

    /// Independent check grid used for the boundary residual.
    pub fn check_grid(&self) -> &SurfaceQuadrature {
        &self.check
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    /// Least-squares coefficients for right-hand side `b` (unscaled rows).
    fn coefficients(&self, b: &[Complex64]) -> Vec<Complex64> {
        let rows = b.len();
        let mut t = vec![Complex64::new(0.0, 0.0); self.rank];
        for (r, tr) in t.iter_mut().enumerate() {
            let col = self.u.col(r);
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..rows {
                acc += col[i].conj() * b[i] * self.row_scale[i];
            }
            *tr = acc / self.sigma[r];
        }
        let m = self.sources.len();
        let mut x = vec![Complex64::new(0.0, 0.0); m];
        for (r, tr) in t.iter().enumerate() {
            let col = self.v.col(r);
            for (j, xj) in x.iter_mut().enumerate() {
                *xj += col[j] * tr;
            }
        }
        x
    }

    /// Solves for an incident field; fails when the residual exceeds the
    /// configured tolerance.
    pub fn solve(&self, exc: &Excitation) -> Result<ScatterSolution, ForwardError> {
        let sol = self.solve_unchecked(exc)?;
        sol.within_tolerance(self.opts.tol)
    }

    /// Solve without enforcing the tolerance; the residual is still
    /// recorded on the solution.
    pub fn solve_unchecked(&self, exc: &Excitation) -> Result<ScatterSolution, ForwardError> {
        let k = self.wave.k();
        if let Excitation::PointSource(y) = exc {
            if self.shape.radial_clearance(y) < 1e-6 * self.shape.diameter() {
                return Err(ForwardError::SourceNotExterior([y.x, y.y, y.z]));
            }
        }
        let b: Vec<Complex64> = (0..self.colloc.len())
            .map(|i| {
                let p = &self.colloc.points[i];
                let u = exc.field(k, p);
                let un = if self.bc.needs_gradient() {
                    dot3(&exc.gradient(k, p), &self.colloc.normals[i])
                } else {
                    Complex64::new(0.0, 0.0)
                };
                -self.bc.apply(u, un)
            })
            .collect();
        let coeffs = self.coefficients(&b);
        Ok(self.finish(coeffs, Some(*exc)))
    }

    /// Radiating field with prescribed boundary data `Gamma v = f` and no
    /// incident field. `f` receives the node and its parametric angles.
    pub fn solve_boundary_data(
        &self,
        f: impl Fn(&Vec3, (f64, f64)) -> Complex64,
    ) -> Result<ScatterSolution, ForwardError> {
        let b: Vec<Complex64> =
            (0..self.colloc.len()).map(|i| f(&self.colloc.points[i], self.colloc.angles[i])).collect();
        let coeffs = self.coefficients(&b);
        let mut sol = self.finish(coeffs, None);
        // residual of Gamma v - f on the check grid
        let mut worst = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..self.check.len() {
            let p = &self.check.points[i];
            let target = f(p, self.check.angles[i]);
            scale = scale.max(target.norm());
            let (u, g) = sol.field_and_gradient_unchecked(p);
            let r = self.bc.apply(u, dot3(&g, &self.check.normals[i])) - target;
            worst = worst.max(r.norm());
        }
        sol.boundary_residual = worst / scale;
        sol.within_tolerance(self.opts.tol)
    }

    fn finish(&self, coeffs: Vec<Complex64>, excitation: Option<Excitation>) -> ScatterSolution {
        let mut sol = ScatterSolution {
            shape: self.shape.clone(),
            sources: self.sources.clone(),
            coeffs,
            excitation,
            bc: self.bc,
            wave: self.wave,
            boundary_residual: 0.0,
            condition_estimate: self.condition_estimate,
        };
        if excitation.is_some() {
            sol.boundary_residual = self.residual_on(&sol, &self.check);
        }
        sol
    }

    /// `max |Gamma u| / max(1, max |u_inc|)` over the nodes of `q`.
    fn residual_on(&self, sol: &ScatterSolution, q: &SurfaceQuadrature) -> f64 {
        let k = self.wave.k();
        let mut worst = 0.0f64;
        let mut inc_max = 1.0f64;
        for i in 0..q.len() {
            let p = &q.points[i];
            if let Some(e) = &sol.excitation {
                inc_max = inc_max.max(e.field(k, p).norm());
            }
            let (u, g) = sol.field_and_gradient_unchecked(p);
            let r = self.bc.apply(u, dot3(&g, &q.normals[i]));
            worst = worst.max(r.norm());
        }
        worst / inc_max
    }
}

/// `Gamma_x g(x, y)` at a boundary node with normal `n`.
#[inline]
fn kernel_trace(bc: &BoundaryCondition, k: f64, x: &Vec3, n: &Vec3, y: &Vec3) -> Complex64 {
    match bc {
        BoundaryCondition::Dirichlet => green(k, x, y),
        _ => {
            let (g, grad) = green_with_gradient(k, x, y);
            bc.apply(g, dot3(&grad, n))
        }
    }
}

/// Radiating field (plus incident field, when present) fitted to a
/// boundary condition.
#[derive(Debug, Clone)]
pub struct ScatterSolution {
    shape: StarShape,
    pub sources: Vec<Vec3>,
    pub coeffs: Vec<Complex64>,
    /// `None` for pure boundary-data solves (no incident field).
    pub excitation: Option<Excitation>,
    pub bc: BoundaryCondition,
    pub wave: WaveContext,
    pub boundary_residual: f64,
    pub condition_estimate: f64,
}

impl ScatterSolution {
    /// A solution with no scattered field (no obstacle in the way).
    pub fn vacuum(shape: &StarShape, excitation: Excitation, bc: BoundaryCondition, wave: WaveContext) -> Self {
        ScatterSolution {
            shape: shape.clone(),
            sources: Vec::new(),
            coeffs: Vec::new(),
            excitation: Some(excitation),
            bc,
            wave,
            boundary_residual: 0.0,
            condition_estimate: 1.0,
        }
    }

    pub fn shape(&self) -> &StarShape {
        &self.shape
    }

    fn within_tolerance(self, tol: f64) -> Result<Self, ForwardError> {
        if !(self.boundary_residual <= tol) {
            return Err(ForwardError::ResidualAboveTolerance {
                residual: self.boundary_residual,
                tol,
                condition: self.condition_estimate,
            });
        }
        Ok(self)
    }

    fn check_point(&self, x: &Vec3) -> Result<(), ForwardError> {
        let d = self.shape.diameter();
        if self.shape.radial_clearance(x) < -1e-9 * d {
            return Err(ForwardError::InsideObstacle([x.x, x.y, x.z]));
        }
        if let Some(Excitation::PointSource(y)) = &self.excitation {
            if (x - y).norm() <= 1e-12 * d {
                return Err(ForwardError::AtSingularity);
            }
        }
        Ok(())
    }

    /// Scattered part only.
    pub fn scattered(&self, x: &Vec3) -> Complex64 {
        let k = self.wave.k();
        self.sources.iter().zip(&self.coeffs).map(|(y, c)| c * green(k, x, y)).sum()
    }

    fn field_and_gradient_unchecked(&self, x: &Vec3) -> (Complex64, [Complex64; 3]) {
        let k = self.wave.k();
        let (mut u, mut g) = match &self.excitation {
            Some(e) => (e.field(k, x), e.gradient(k, x)),
            None => (Complex64::new(0.0, 0.0), [Complex64::new(0.0, 0.0); 3]),
        };
        for (y, c) in self.sources.iter().zip(&self.coeffs) {
            let (gv, gg) = green_with_gradient(k, x, y);
            u += c * gv;
            g[0] += c * gg[0];
            g[1] += c * gg[1];
            g[2] += c * gg[2];
        }
        (u, g)
    }

    /// Total field `u = u_inc + v` at an exterior point (surface allowed).
    pub fn eval_field(&self, x: &Vec3) -> Result<Complex64, ForwardError> {
        self.check_point(x)?;
        let k = self.wave.k();
        let inc = self.excitation.map(|e| e.field(k, x)).unwrap_or_default();
        Ok(inc + self.scattered(x))
    }

    /// Closed-form gradient of the total field.
    pub fn eval_gradient(&self, x: &Vec3) -> Result<[Complex64; 3], ForwardError> {
        self.check_point(x)?;
        Ok(self.field_and_gradient_unchecked(x).1)
    }

    /// Field and gradient together.
    pub fn eval_field_and_gradient(&self, x: &Vec3) -> Result<(Complex64, [Complex64; 3]), ForwardError> {
        self.check_point(x)?;
        Ok(self.field_and_gradient_unchecked(x))
    }

    /// `A(beta)` of the scattered field.
    pub fn far_field_at(&self, beta: &Direction) -> Complex64 {
        let k = self.wave.k();
        let b = beta.vec();
        let s: Complex64 = self
            .sources
            .iter()
            .zip(&self.coeffs)
            .map(|(y, c)| c * Complex64::from_polar(1.0, -k * b.dot(y)))
            .sum();
        s / (4.0 * PI)
    }

    /// Far field over a direction grid.
    pub fn far_field(&self, grid: &DirectionGrid) -> FarFieldPattern {
        let values: Vec<Complex64> = grid.directions.par_iter().map(|b| self.far_field_at(b)).collect();
        let alpha = match self.excitation {
            Some(Excitation::PlaneWave(a)) => Some(a),
            _ => None,
        };
        FarFieldPattern { grid: grid.clone(), values, alpha, k: self.wave.k(), bc: Some(self.bc) }
    }
}

/// `(u, u_N)` of `sol` at every node of `quad`. The nodes may sit on any
/// surface exterior to `sol`'s obstacle, including its own boundary.
pub fn boundary_trace(
    sol: &ScatterSolution,
    quad: &SurfaceQuadrature,
) -> Result<(Vec<Complex64>, Vec<Complex64>), ForwardError> {
    let mut u = Vec::with_capacity(quad.len());
    let mut un = Vec::with_capacity(quad.len());
    for (p, n) in quad.points.iter().zip(&quad.normals) {
        let (v, g) = sol.eval_field_and_gradient(p)?;
        u.push(v);
        un.push(dot3(&g, n));
    }
    Ok((u, un))
}

/// One-shot solve: factor and apply.
pub fn solve(
    shape: &StarShape,
    bc: BoundaryCondition,
    exc: &Excitation,
    wave: WaveContext,
    opts: &SolveOptions,
) -> Result<ScatterSolution, ForwardError> {
    MfsSystem::new(shape, bc, wave, opts)?.solve(exc)
}

/// Obstacle Green's function `G(x, y)`: total field at `x` of a point
/// source at `y`, satisfying the boundary condition and radiating.
pub fn greens_function(
    shape: &StarShape,
    bc: BoundaryCondition,
    wave: WaveContext,
    x: &Vec3,
    y: &Vec3,
    opts: &SolveOptions,
) -> Result<Complex64, ForwardError> {
    if (x - y).norm() == 0.0 {
        return Err(ForwardError::AtSingularity);
    }
    let sol = solve(shape, bc, &Excitation::PointSource(*y), wave, opts)?;
    sol.eval_field(x)
}

/// Samples of `A(beta)` on a direction grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldPattern {
    pub grid: DirectionGrid,
    pub values: Vec<Complex64>,
    pub alpha: Option<Direction>,
    pub k: f64,
    pub bc: Option<BoundaryCondition>,
}

impl FarFieldPattern {
    /// `(int |A|^2 dbeta)^{1/2}` by the grid weights.
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().zip(&self.grid.weights).map(|(a, w)| a.norm_sqr() * w).sum::<f64>().sqrt()
    }

    /// `(int |A - B|^2 dbeta)^{1/2}`; both patterns must share the grid.
    pub fn l2_distance(&self, other: &FarFieldPattern) -> f64 {
        assert_eq!(self.grid.len(), other.grid.len(), "patterns on different grids");
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.grid.weights)
            .map(|((a, b), w)| (a - b).norm_sqr() * w)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_sphere() -> StarShape {
        StarShape::sphere(1.0, Vec3::zeros()).unwrap()
    }

    #[test]
    fn vacuum_field_is_the_plane_wave() {
        let k = 2.0;
        let a = Direction::new(Vec3::new(1.0, 2.0, -0.5)).unwrap();
        let sol = ScatterSolution::vacuum(
            &unit_sphere(),
            Excitation::PlaneWave(a),
            BoundaryCondition::Dirichlet,
            WaveContext::new(k).unwrap(),
        );
        let x = Vec3::new(3.0, -1.0, 0.5);
        let u = sol.eval_field(&x).unwrap();
        assert_eq!(u, Complex64::from_polar(1.0, k * a.vec().dot(&x)));
        let g = sol.eval_gradient(&x).unwrap();
        for (c, gc) in g.iter().enumerate() {
            assert!((gc - I * k * a.vec()[c] * u).norm() < 1e-15);
        }
        assert_eq!(sol.far_field_at(&Direction::z()), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn sphere_dirichlet_residual_small() {
        let sol = solve(
            &unit_sphere(),
            BoundaryCondition::Dirichlet,
            &Excitation::PlaneWave(Direction::z()),
            WaveContext::new(2.0).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(sol.boundary_residual <= 1e-8, "{}", sol.boundary_residual);
        assert_eq!(sol.sources.len(), 400);
        // on a boundary node the total field vanishes
        let q = build_quadrature(&unit_sphere(), 11, 23).unwrap();
        let (u, _) = boundary_trace(&sol, &q).unwrap();
        assert!(u.iter().all(|v| v.norm() <= sol.boundary_residual.max(1e-14)));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let shape = unit_sphere().perturb(2, 1, 0.1).unwrap();
        let sol = solve(
            &shape,
            BoundaryCondition::impedance(Complex64::new(0.5, 0.3)).unwrap(),
            &Excitation::PlaneWave(Direction::new(Vec3::new(0.3, -0.2, 1.0)).unwrap()),
            WaveContext::new(2.0).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        let x = Vec3::new(1.3, -0.4, 0.9);
        let h = 1e-5 * shape.diameter();
        let g = sol.eval_gradient(&x).unwrap();
        for c in 0..3 {
            let mut e = Vec3::zeros();
            e[c] = h;
            let fd = (sol.eval_field(&(x + e)).unwrap() - sol.eval_field(&(x - e)).unwrap()) / (2.0 * h);
            assert!((fd - g[c]).norm() <= 1e-6 * g[c].norm().max(1e-3), "component {c}");
        }
    }

    #[test]
    fn neumann_normal_derivative_vanishes() {
        let sol = solve(
            &unit_sphere(),
            BoundaryCondition::Neumann,
            &Excitation::PlaneWave(Direction::x()),
            WaveContext::new(1.5).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        let q = build_quadrature_offset(&unit_sphere(), 13, 27, 0.1).unwrap();
        let (_, un) = boundary_trace(&sol, &q).unwrap();
        assert!(un.iter().all(|v| v.norm() <= 1e-6));
    }

    #[test]
    fn incident_trace_on_sphere() {
        let k = 1.7;
        let a = Direction::new(Vec3::new(0.2, 0.5, 0.8)).unwrap();
        let sol = ScatterSolution::vacuum(
            &unit_sphere(),
            Excitation::PlaneWave(a),
            BoundaryCondition::Neumann,
            WaveContext::new(k).unwrap(),
        );
        let q = build_quadrature(&unit_sphere(), 8, 16).unwrap();
        let (u, un) = boundary_trace(&sol, &q).unwrap();
        for i in 0..q.len() {
            let s = q.points[i];
            let expect = I * k * a.vec().dot(&q.normals[i]) * Complex64::from_polar(1.0, k * a.vec().dot(&s));
            assert!((un[i] - expect).norm() < 1e-14);
            assert!((u[i] - Complex64::from_polar(1.0, k * a.vec().dot(&s))).norm() < 1e-15);
        }
    }

    #[test]
    fn evaluation_inside_rejected() {
        let sol = ScatterSolution::vacuum(
            &unit_sphere(),
            Excitation::PlaneWave(Direction::z()),
            BoundaryCondition::Dirichlet,
            WaveContext::new(1.0).unwrap(),
        );
        assert!(matches!(sol.eval_field(&Vec3::new(0.5, 0.0, 0.0)), Err(ForwardError::InsideObstacle(_))));
        assert!(sol.eval_field(&Vec3::new(1.0, 0.0, 0.0)).is_ok());
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(WaveContext::new(0.0).is_err());
        assert!(BoundaryCondition::impedance(Complex64::new(1.0, -0.1)).is_err());
        let sys = MfsSystem::new(
            &unit_sphere(),
            BoundaryCondition::Dirichlet,
            WaveContext::new(1.0).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        let err = sys.solve(&Excitation::PointSource(Vec3::new(0.5, 0.0, 0.0))).unwrap_err();
        assert!(matches!(err, ForwardError::SourceNotExterior(_)));
        let err = sys.solve(&Excitation::PointSource(Vec3::new(1.0, 0.0, 0.0))).unwrap_err();
        assert!(matches!(err, ForwardError::SourceNotExterior(_)));
        let big = StarShape::sphere(10.0, Vec3::zeros()).unwrap();
        assert!(matches!(
            MfsSystem::new(&big, BoundaryCondition::Dirichlet, WaveContext::new(3.0).unwrap(), &SolveOptions::default()),
            Err(ForwardError::TooLarge(_))
        ));
        let opts = SolveOptions { dilation: Some(0.95), ..SolveOptions::default() };
        assert!(matches!(
            MfsSystem::new(&unit_sphere(), BoundaryCondition::Dirichlet, WaveContext::new(1.0).unwrap(), &opts),
            Err(ForwardError::BadOption(_))
        ));
    }

    #[test]
    fn bc_serialization() {
        let b = BoundaryCondition::impedance(Complex64::new(0.5, 0.3)).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, r#"{"type":"impedance","h":[0.5,0.3]}"#);
        assert_eq!(serde_json::from_str::<BoundaryCondition>(&s).unwrap(), b);
        assert_eq!(serde_json::to_string(&BoundaryCondition::Dirichlet).unwrap(), r#"{"type":"dirichlet"}"#);
        assert!(serde_json::from_str::<BoundaryCondition>(r#"{"type":"impedance","h":[0.5,-0.3]}"#).is_err());
    }
}
