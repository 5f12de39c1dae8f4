//! Command implementations behind the `farfield` binary.
//!
//! Every command reads one JSON config (unknown keys rejected), writes its
//! artifacts into the output directory and maps the outcome onto the exit
//! code contract: 0 pass, 1 numerical-check failure, 2 config or IO error,
//! 3 out-of-scope request, 4 ambiguous result.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use farfield_core::forward::{
    BoundaryCondition, Excitation, ForwardError, MfsSystem, SolveOptions, WaveContext,
};
use farfield_core::geometry::{Direction, DirectionGrid, ShapeFile, StarShape, Vec3};
use farfield_core::identities::{
    check_energy_flux, check_farfield_expansion, check_lemma1, check_lemma2, check_lemma5, check_reciprocity,
    expansion_report, lemma5_default_tolerance, random_direction_pairs, uniqueness_gap_scan, BoundaryData,
    CheckReport, GapPreset, IdentityError, NormalApproach, ObstaclePair, RaySpec, Relation,
};
use farfield_core::inverse::{
    self, classify_boundary_condition, reconstruct_and_classify, reconstruct_shape, InverseError,
    InverseProblem, Regularization,
};
use farfield_core::io::{self as fio, IoError};
use farfield_core::mie::{mie_coefficients, MieError};

#[derive(Debug, Parser)]
#[command(name = "farfield", version, about = "Exterior Helmholtz scattering: forward solves, identity checks, inversion")]
pub struct Cli {
    /// JSON configuration for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Scales source and collocation counts together.
    #[arg(long, global = true, value_enum, default_value_t = Resolution::Default)]
    pub resolution: Resolution,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Resolution {
    Low,
    Default,
    High,
}

impl Resolution {
    /// Linear multiplier on grid dimensions; source counts scale with its
    /// square, so `low` halves and `high` doubles them.
    pub fn factor(self) -> f64 {
        match self {
            Resolution::Low => std::f64::consts::FRAC_1_SQRT_2,
            Resolution::Default => 1.0,
            Resolution::High => std::f64::consts::SQRT_2,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one scattering problem and write its far field.
    Forward,
    /// Write the sphere series far field.
    Mie,
    /// Run one identity check and write its report.
    Verify {
        #[arg(value_enum)]
        which: Check,
    },
    /// Far-field distances over a shape family.
    Gapscan,
    /// Reconstruct a shape from far-field data.
    Invert,
    /// Identify the boundary condition on a known surface.
    ClassifyBc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Lemma1,
    Lemma2,
    Lemma5,
    Reciprocity,
    Expansion14,
    EnergyFlux,
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass = 0,
    Fail = 1,
    ConfigError = 2,
    OutOfScope = 3,
    Ambiguous = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("out of scope: {0}")]
    OutOfScope(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn outcome(&self) -> Outcome {
        match self {
            CliError::Config(_) | CliError::Io(_) => Outcome::ConfigError,
            CliError::OutOfScope(_) => Outcome::OutOfScope,
            CliError::Numerical(_) => Outcome::Fail,
        }
    }
}

impl From<ForwardError> for CliError {
    fn from(e: ForwardError) -> Self {
        match e {
            ForwardError::Geometry(_)
            | ForwardError::BadWavenumber(_)
            | ForwardError::BadImpedance(_)
            | ForwardError::TooLarge(_)
            | ForwardError::SourceNotExterior(_)
            | ForwardError::InsideObstacle(_)
            | ForwardError::AtSingularity
            | ForwardError::BadOption(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<IdentityError> for CliError {
    fn from(e: IdentityError) -> Self {
        match e {
            IdentityError::Forward(f) => f.into(),
            IdentityError::Geometry(g) => CliError::Config(g.to_string()),
            IdentityError::OutOfScope(m) => CliError::OutOfScope(m),
            IdentityError::BadInput(m) => CliError::Config(m),
        }
    }
}

impl From<InverseError> for CliError {
    fn from(e: InverseError) -> Self {
        match e {
            InverseError::Forward(f) => f.into(),
            InverseError::Geometry(g) => CliError::Config(g.to_string()),
            InverseError::BadProblem(m) => CliError::Config(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<MieError> for CliError {
    fn from(e: MieError) -> Self {
        match e {
            MieError::NonConvergentTail { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

// ----------------------------------------------------------------------------
// Config building blocks

/// A shape given by file path, by sphere parameters, or inline.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ShapeSpec {
    Path(PathBuf),
    Sphere { sphere: SphereSpec },
    Perturbed { perturbed: PerturbedSpec },
    Inline(ShapeFile),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub radius: f64,
    #[serde(default)]
    pub center: [f64; 3],
}

/// `radius + amplitude * Y_{l,m}` about `center`.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbedSpec {
    pub radius: f64,
    #[serde(default)]
    pub center: [f64; 3],
    pub l: usize,
    pub m: i64,
    pub amplitude: f64,
}

impl ShapeSpec {
    pub fn sphere(radius: f64) -> Self {
        ShapeSpec::Sphere { sphere: SphereSpec { radius, center: [0.0; 3] } }
    }

    pub fn resolve(&self, base: &Path) -> Result<StarShape, CliError> {
        let geo = |e: farfield_core::geometry::GeometryError| CliError::Config(e.to_string());
        match self {
            ShapeSpec::Path(p) => Ok(fio::read_shape(&base.join(p))?),
            ShapeSpec::Sphere { sphere } => StarShape::sphere(sphere.radius, Vec3::from(sphere.center)).map_err(geo),
            ShapeSpec::Perturbed { perturbed: p } => StarShape::sphere(p.radius, Vec3::from(p.center))
                .and_then(|s| s.perturb(p.l, p.m, p.amplitude))
                .map_err(geo),
            ShapeSpec::Inline(f) => StarShape::try_from(f.clone()).map_err(geo),
        }
    }
}

/// A direction as polar angles `[theta, phi]` or a vector `[x, y, z]`.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(transparent)]
pub struct DirectionSpec(pub Vec<f64>);

impl DirectionSpec {
    pub fn of(d: [f64; 3]) -> Self {
        DirectionSpec(d.to_vec())
    }

    pub fn resolve(&self) -> Result<Direction, CliError> {
        match self.0.as_slice() {
            [t, p] => Ok(Direction::from_angles(*t, *p)),
            [x, y, z] => Direction::new(Vec3::new(*x, *y, *z)).map_err(|e| CliError::Config(e.to_string())),
            other => Err(CliError::Config(format!("a direction needs 2 angles or 3 components, got {}", other.len()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_theta: 32, n_phi: 64 }
    }
}

impl GridConfig {
    fn build(&self) -> Result<DirectionGrid, CliError> {
        if self.n_theta < 2 || self.n_phi < 2 {
            return Err(CliError::Config("direction grid needs at least 2x2 nodes".into()));
        }
        Ok(DirectionGrid::gauss(self.n_theta, self.n_phi))
    }
}

fn default_k() -> f64 {
    2.0
}

fn default_alpha() -> DirectionSpec {
    DirectionSpec::of([0.0, 0.0, 1.0])
}

fn default_bc() -> BoundaryCondition {
    BoundaryCondition::Dirichlet
}

fn default_unit_sphere() -> ShapeSpec {
    ShapeSpec::sphere(1.0)
}

/// Execution context shared by all commands.
pub struct Context {
    pub config_dir: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub resolution: f64,
}

impl Context {
    fn load<T: serde::de::DeserializeOwned>(&self) -> Result<T, CliError> {
        let path = self.config.as_ref().ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    fn solver(&self, opts: &SolveOptions) -> SolveOptions {
        opts.refined(self.resolution)
    }

    fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        Ok(fio::write_json(&self.out_file(name), value)?)
    }
}

// ----------------------------------------------------------------------------
// forward

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    #[serde(default = "default_unit_sphere")]
    pub shape: ShapeSpec,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_alpha")]
    pub alpha: DirectionSpec,
    #[serde(default = "default_bc")]
    pub bc: BoundaryCondition,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolveOptions,
    /// File stem of the CSV and sidecar.
    #[serde(default = "default_forward_stem")]
    pub output: String,
}

fn default_forward_stem() -> String {
    "farfield".into()
}

fn cmd_forward(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg: ForwardConfig = ctx.load()?;
    let shape = cfg.shape.resolve(&ctx.config_dir)?;
    let alpha = cfg.alpha.resolve()?;
    let grid = cfg.grid.build()?;
    let sys = MfsSystem::new(&shape, cfg.bc, WaveContext::new(cfg.k)?, &ctx.solver(&cfg.solver))?;
    let sol = sys.solve(&Excitation::PlaneWave(alpha))?;
    let pattern = sol.far_field(&grid);
    fio::write_far_field(&ctx.out_file(&format!("{}.csv", cfg.output)), &pattern)?;
    ctx.write_json(
        "forward_report.json",
        &json!({
            "sources": sys.sources().len(),
            "collocation_nodes": sys.collocation().len(),
            "rank": sys.rank(),
            "boundary_residual": sol.boundary_residual,
            "condition_estimate": sol.condition_estimate,
            "tolerance": sys.options().tol,
        }),
    )?;
    Ok(Outcome::Pass)
}

// ----------------------------------------------------------------------------
// mie

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MieConfig {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_alpha")]
    pub alpha: DirectionSpec,
    #[serde(default = "default_bc")]
    pub bc: BoundaryCondition,
    #[serde(default)]
    pub grid: GridConfig,
    /// Series truncation; `None` picks the default for `k * radius`.
    #[serde(default)]
    pub lmax: Option<usize>,
    #[serde(default = "default_mie_stem")]
    pub output: String,
}

fn default_radius() -> f64 {
    1.0
}

fn default_mie_stem() -> String {
    "mie".into()
}

fn cmd_mie(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg: MieConfig = ctx.load()?;
    let alpha = cfg.alpha.resolve()?;
    let grid = cfg.grid.build()?;
    let series = match mie_coefficients(cfg.radius, cfg.k, cfg.bc, cfg.lmax) {
        Ok(s) => s,
        Err(e @ MieError::NonConvergentTail { .. }) => {
            ctx.write_json("mie_report.json", &json!({ "pass": false, "error": e.to_string() }))?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let values = series.far_field_grid(&grid, &alpha);
    let pattern = farfield_core::forward::FarFieldPattern { grid, values, alpha: Some(alpha), k: cfg.k, bc: Some(cfg.bc) };
    fio::write_far_field(&ctx.out_file(&format!("{}.csv", cfg.output)), &pattern)?;
    ctx.write_json("mie_report.json", &json!({ "pass": true, "lmax_used": series.lmax_used }))?;
    Ok(Outcome::Pass)
}

// ----------------------------------------------------------------------------
// verify

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReciprocityConfig {
    #[serde(default = "default_reciprocity_shape")]
    pub shape: ShapeSpec,
    #[serde(default = "default_reciprocity_bcs")]
    pub bcs: Vec<BoundaryCondition>,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fine_tol")]
    pub tolerance: f64,
    #[serde(default)]
    pub solver: SolveOptions,
}

fn default_reciprocity_shape() -> ShapeSpec {
    ShapeSpec::Perturbed { perturbed: PerturbedSpec { radius: 1.0, center: [0.0; 3], l: 3, m: 1, amplitude: 0.15 } }
}

fn default_reciprocity_bcs() -> Vec<BoundaryCondition> {
    vec![BoundaryCondition::Dirichlet, BoundaryCondition::Impedance(Complex64::new(0.5, 0.3))]
}

fn default_pairs() -> usize {
    5
}

fn default_fine_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma1Config {
    #[serde(default = "default_unit_sphere")]
    pub shape: ShapeSpec,
    /// Free space instead of the obstacle.
    #[serde(default)]
    pub vacuum: bool,
    #[serde(default = "default_bc")]
    pub bc: BoundaryCondition,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_lemma1_x")]
    pub x: [f64; 3],
    #[serde(default = "default_alpha")]
    pub alpha0: DirectionSpec,
    #[serde(default)]
    pub eta: [f64; 3],
    #[serde(default = "default_taus")]
    pub tau: Vec<f64>,
    #[serde(default)]
    pub solver: SolveOptions,
}

fn default_lemma1_x() -> [f64; 3] {
    [1.5, 0.0, 0.3]
}

fn default_taus() -> Vec<f64> {
    vec![20.0, 40.0, 80.0, 160.0]
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma2Config {
    #[serde(default = "default_lemma2_shape1")]
    pub shape1: ShapeSpec,
    #[serde(default = "default_lemma2_shape2")]
    pub shape2: ShapeSpec,
    #[serde(default = "default_bc")]
    pub bc1: BoundaryCondition,
    #[serde(default = "default_bc")]
    pub bc2: BoundaryCondition,
    #[serde(default = "default_lemma2_k")]
    pub k: f64,
    #[serde(default = "default_alpha")]
    pub alpha: DirectionSpec,
    #[serde(default = "default_beta")]
    pub beta: DirectionSpec,
    #[serde(default = "default_lemma2_nt")]
    pub n_theta: usize,
    #[serde(default = "default_lemma2_tol")]
    pub tolerance: f64,
    #[serde(default)]
    pub solver: SolveOptions,
}

fn default_lemma2_shape1() -> ShapeSpec {
    ShapeSpec::Sphere { sphere: SphereSpec { radius: 1.0, center: [0.0, 0.0, -2.0] } }
}

fn default_lemma2_shape2() -> ShapeSpec {
    ShapeSpec::Sphere { sphere: SphereSpec { radius: 1.0, center: [0.0, 0.0, 2.0] } }
}

fn default_lemma2_k() -> f64 {
    1.0
}

fn default_beta() -> DirectionSpec {
    DirectionSpec::of([1.0, 0.0, 0.0])
}

fn default_lemma2_nt() -> usize {
    32
}

fn default_lemma2_tol() -> f64 {
    1e-4
}

/// Bound on both sides, relative to `4 pi max |A1|`, for coincident obstacles.
const COINCIDENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Lemma5Config {
    #[serde(default = "default_unit_sphere")]
    pub shape: ShapeSpec,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_lemma5_data")]
    pub data: BoundaryData,
    #[serde(default)]
    pub approach: NormalApproach,
    #[serde(default)]
    pub solver: SolveOptions,
}

fn default_lemma5_data() -> BoundaryData {
    BoundaryData::Harmonic { l: 1, m: 0 }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionConfig {
    #[serde(default = "default_unit_sphere")]
    pub shape: ShapeSpec,
    #[serde(default)]
    pub vacuum: bool,
    #[serde(default = "default_bc")]
    pub bc: BoundaryCondition,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_alpha")]
    pub alpha: DirectionSpec,
    #[serde(default = "default_expansion_beta")]
    pub beta: DirectionSpec,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default)]
    pub solver: SolveOptions,
}

fn default_expansion_beta() -> DirectionSpec {
    DirectionSpec(vec![1.0, 0.3])
}

fn default_radii() -> Vec<f64> {
    vec![25.0, 50.0, 100.0, 200.0]
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyFluxConfig {
    #[serde(default = "default_unit_sphere")]
    pub shape: ShapeSpec,
    #[serde(default = "default_bc")]
    pub bc: BoundaryCondition,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_flux_alpha")]
    pub alpha: DirectionSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_flux_tol")]
    pub tolerance: f64,
    #[serde(default)]
    pub solver: SolveOptions,
}

fn default_flux_alpha() -> DirectionSpec {
    DirectionSpec(vec![0.4, 0.2])
}

fn default_flux_tol() -> f64 {
    1e-5
}

fn c2(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

fn verify(ctx: &Context, which: Check) -> Result<CheckReport, CliError> {
    let base = &ctx.config_dir;
    let report = match which {
        Check::Reciprocity => {
            let cfg: ReciprocityConfig = ctx.load()?;
            let shape = cfg.shape.resolve(base)?;
            let pairs = random_direction_pairs(cfg.pairs, cfg.seed);
            let mut runs = Vec::new();
            let mut residuals = Vec::new();
            let mut worst = 0.0f64;
            for bc in &cfg.bcs {
                let r = check_reciprocity(&shape, *bc, cfg.k, &pairs, &ctx.solver(&cfg.solver))?;
                worst = worst.max(r.max_rel_error);
                residuals.extend(r.errors.iter().copied());
                runs.push(json!({ "bc": bc, "max_rel_error": r.max_rel_error, "scale": r.scale }));
            }
            CheckReport {
                check: "reciprocity".into(),
                inputs: json!({ "shape": shape.to_file(), "k": cfg.k, "pairs": cfg.pairs, "seed": cfg.seed }),
                outputs: json!({ "runs": runs, "max_rel_error": worst }),
                residuals,
                slope: None,
                pass: worst <= cfg.tolerance,
                tolerance: cfg.tolerance,
            }
        }
        Check::Lemma1 => {
            let cfg: Lemma1Config = ctx.load()?;
            let shape = if cfg.vacuum { None } else { Some(cfg.shape.resolve(base)?) };
            let ray = RaySpec::new(cfg.alpha0.resolve()?, Vec3::from(cfg.eta), cfg.tau.clone())?;
            let r = check_lemma1(shape.as_ref(), cfg.bc, cfg.k, &Vec3::from(cfg.x), &ray, &ctx.solver(&cfg.solver))?;
            r.report(json!({
                "shape": shape.map(|s| s.to_file()),
                "bc": cfg.bc,
                "k": cfg.k,
                "x": cfg.x,
                "ray": ray,
            }))
        }
        Check::Lemma2 => {
            let cfg: Lemma2Config = ctx.load()?;
            let pair = ObstaclePair::new(cfg.shape1.resolve(base)?, cfg.shape2.resolve(base)?, cfg.bc1, cfg.bc2)?;
            let (alpha, beta) = (cfg.alpha.resolve()?, cfg.beta.resolve()?);
            let r = check_lemma2(&pair, cfg.k, &alpha, &beta, cfg.n_theta, &ctx.solver(&cfg.solver))?;
            let coincident = matches!(r.relation, Relation::Nested { coincident: true, .. });
            CheckReport {
                check: "lemma2".into(),
                inputs: json!({
                    "shape1": pair.shape1.to_file(),
                    "shape2": pair.shape2.to_file(),
                    "bc1": cfg.bc1,
                    "bc2": cfg.bc2,
                    "k": cfg.k,
                    "alpha": alpha,
                    "beta": beta,
                    "n_theta": cfg.n_theta,
                }),
                outputs: json!({
                    "relation": r.relation,
                    "min_distance": pair.min_distance,
                    "lhs": c2(r.lhs),
                    "rhs": c2(r.rhs),
                    "term_u1_u2n": c2(r.term_u1_u2n),
                    "term_u1n_u2": c2(r.term_u1n_u2),
                    "scale": r.scale,
                    "nodes": r.nodes,
                }),
                residuals: vec![r.rel_error],
                slope: None,
                pass: r.pass(cfg.tolerance, COINCIDENT_TOL),
                tolerance: if coincident { COINCIDENT_TOL } else { cfg.tolerance },
            }
        }
        Check::Lemma5 => {
            let cfg: Lemma5Config = ctx.load()?;
            let shape = cfg.shape.resolve(base)?;
            let r = check_lemma5(&shape, cfg.k, cfg.data, &cfg.approach, &ctx.solver(&cfg.solver))?;
            CheckReport {
                check: "lemma5".into(),
                inputs: json!({ "shape": shape.to_file(), "k": cfg.k, "data": cfg.data, "approach": cfg.approach }),
                outputs: json!({
                    "points": r.points,
                    "direct_residual": r.direct_residual,
                    "cap_monotone": r.cap_monotone,
                    "tolerances": r.points.iter().map(|p| lemma5_default_tolerance(p.distance)).collect::<Vec<_>>(),
                }),
                residuals: r.points.iter().map(|p| p.rel_error).collect(),
                slope: None,
                pass: r.pass(lemma5_default_tolerance),
                tolerance: 1e-2,
            }
        }
        Check::Expansion14 => {
            let cfg: ExpansionConfig = ctx.load()?;
            let shape = if cfg.vacuum { None } else { Some(cfg.shape.resolve(base)?) };
            let (alpha, beta) = (cfg.alpha.resolve()?, cfg.beta.resolve()?);
            let d = check_farfield_expansion(
                shape.as_ref(),
                cfg.bc,
                cfg.k,
                &alpha,
                &beta,
                &cfg.radii,
                &ctx.solver(&cfg.solver),
            )?;
            expansion_report(
                &d,
                cfg.vacuum,
                json!({
                    "shape": shape.map(|s| s.to_file()),
                    "bc": cfg.bc,
                    "k": cfg.k,
                    "alpha": alpha,
                    "beta": beta,
                }),
            )
        }
        Check::EnergyFlux => {
            let cfg: EnergyFluxConfig = ctx.load()?;
            let shape = cfg.shape.resolve(base)?;
            let alpha = cfg.alpha.resolve()?;
            let r = check_energy_flux(&shape, cfg.bc, cfg.k, &alpha, &cfg.grid.build()?, &ctx.solver(&cfg.solver))?;
            CheckReport {
                check: "energy_flux".into(),
                inputs: json!({ "shape": shape.to_file(), "bc": cfg.bc, "k": cfg.k, "alpha": alpha, "grid": cfg.grid }),
                outputs: json!(r),
                residuals: vec![r.rel_error],
                slope: None,
                pass: r.pass(cfg.tolerance),
                tolerance: cfg.tolerance,
            }
        }
    };
    Ok(report)
}

fn check_name(which: Check) -> &'static str {
    match which {
        Check::Lemma1 => "lemma1",
        Check::Lemma2 => "lemma2",
        Check::Lemma5 => "lemma5",
        Check::Reciprocity => "reciprocity",
        Check::Expansion14 => "expansion14",
        Check::EnergyFlux => "energy_flux",
    }
}

fn cmd_verify(ctx: &Context, which: Check) -> Result<Outcome, CliError> {
    let name = check_name(which);
    match verify(ctx, which) {
        Ok(report) => {
            ctx.write_json(&format!("{name}_report.json"), &report)?;
            Ok(if report.pass { Outcome::Pass } else { Outcome::Fail })
        }
        Err(CliError::OutOfScope(msg)) => {
            ctx.write_json(
                &format!("{name}_report.json"),
                &json!({ "check": name, "pass": false, "out_of_scope": msg }),
            )?;
            Err(CliError::OutOfScope(msg))
        }
        Err(e) => Err(e),
    }
}

// ----------------------------------------------------------------------------
// gapscan

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GapscanConfig {
    #[serde(default = "default_unit_sphere")]
    pub truth: ShapeSpec,
    #[serde(default = "default_bc")]
    pub bc: BoundaryCondition,
    #[serde(default = "default_k")]
    pub k0: f64,
    #[serde(default = "default_alpha")]
    pub alpha0: DirectionSpec,
    #[serde(default = "GapPreset::theorem3_default")]
    pub family: GapPreset,
    /// Lead the family with an unchanged copy of the truth.
    #[serde(default = "default_true")]
    pub include_truth: bool,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolveOptions,
}

fn default_true() -> bool {
    true
}

fn cmd_gapscan(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg: GapscanConfig = ctx.load()?;
    let empty = match &cfg.family {
        GapPreset::Theorem1 { modes, amplitudes } => modes.is_empty() || amplitudes.is_empty(),
        GapPreset::Theorem2 { shifts } => shifts.is_empty(),
        GapPreset::Theorem3 { t_values } => t_values.is_empty(),
    };
    if empty {
        return Err(CliError::Config("empty shape family".into()));
    }
    let truth = cfg.truth.resolve(&ctx.config_dir)?;
    let mut family = cfg.family.family(&truth)?;
    if !cfg.include_truth {
        family.remove(0);
    }
    let alpha0 = cfg.alpha0.resolve()?;
    let scan = uniqueness_gap_scan(&truth, cfg.bc, cfg.k0, &alpha0, &family, &cfg.grid.build()?, &ctx.solver(&cfg.solver))?;
    std::fs::write(ctx.out_file("gapscan.csv"), scan.to_csv())
        .map_err(|e| CliError::Config(format!("{}: {e}", ctx.out_file("gapscan.csv").display())))?;
    let pass = scan.separates();
    let report = CheckReport {
        check: format!("gapscan_{}", cfg.family.name()),
        inputs: json!({ "truth": truth.to_file(), "bc": cfg.bc, "k0": cfg.k0, "alpha0": alpha0, "family": cfg.family }),
        outputs: json!({ "rows": scan.rows, "truth_norm": scan.truth_norm }),
        residuals: scan.rows.iter().map(|r| r.d_ff.unwrap_or(f64::NAN)).collect(),
        slope: None,
        pass,
        tolerance: scan.tolerance,
    };
    ctx.write_json("gapscan.json", &report)?;
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

// ----------------------------------------------------------------------------
// invert and classify-bc

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InvertConfig {
    /// Far-field CSV; its sidecar sits next to it.
    pub data: PathBuf,
    #[serde(default = "default_unit_sphere")]
    pub init: ShapeSpec,
    #[serde(default)]
    pub lmax_recon: usize,
    #[serde(default)]
    pub bc_hypothesis: Option<BoundaryCondition>,
    #[serde(default)]
    pub regularization: Regularization,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
    #[serde(default)]
    pub residual_tol: Option<f64>,
    #[serde(default = "inverse::optimizer_solve_options")]
    pub solver: SolveOptions,
    #[serde(default = "default_lmax_cap")]
    pub lmax_cap: usize,
    /// Classify the boundary condition on the recovered surface.
    #[serde(default)]
    pub classify: bool,
}

fn default_max_iters() -> usize {
    50
}

fn default_step_tol() -> f64 {
    1e-8
}

fn default_lmax_cap() -> usize {
    inverse::DEFAULT_LMAX_CAP
}

fn load_problem(ctx: &Context, data: &Path, init: StarShape, lmax: usize) -> Result<InverseProblem, CliError> {
    let pattern = fio::read_far_field(&ctx.config_dir.join(data))?;
    Ok(InverseProblem::new(pattern, init, lmax)?)
}

fn classification_json(c: &inverse::BcClassification) -> serde_json::Value {
    let h = match c.bc {
        BoundaryCondition::Impedance(h) => h,
        _ => c.fitted_h,
    };
    json!({
        "bc": c.bc.name(),
        "h": c2(h),
        "misfits": c.misfits,
        "surface_ratio_mean": c2(c.diagnostics.surface_ratio_mean),
        "ambiguous": c.ambiguous,
        "fitted_h": c2(c.fitted_h),
        "h_iterations": c.h_iterations,
        "diagnostics": c.diagnostics,
    })
}

fn cmd_invert(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg: InvertConfig = ctx.load()?;
    let init = cfg.init.resolve(&ctx.config_dir)?;
    let mut p = load_problem(ctx, &cfg.data, init, cfg.lmax_recon)?;
    p.bc_hypothesis = cfg.bc_hypothesis;
    p.regularization = cfg.regularization.clone();
    p.max_iters = cfg.max_iters;
    p.step_tol = cfg.step_tol;
    p.residual_tol = cfg.residual_tol;
    p.solve = ctx.solver(&cfg.solver);
    p.lmax_cap = cfg.lmax_cap;
    let result = if cfg.classify { reconstruct_and_classify(&p) } else { reconstruct_shape(&p) };
    let report = match result {
        Ok(r) => r,
        Err(InverseError::Diverged { report, .. }) => {
            ctx.write_json("reconstruction_report.json", &report)?;
            fio::write_shape(&ctx.out_file("recovered_shape.json"), &report.final_shape)?;
            return Ok(Outcome::Fail);
        }
        Err(e) => return Err(e.into()),
    };
    fio::write_shape(&ctx.out_file("recovered_shape.json"), &report.final_shape)?;
    let mut value = serde_json::to_value(&report).expect("report serializes");
    if let Some(c) = &report.bc_result {
        value["bc_result"] = classification_json(c);
    }
    ctx.write_json("reconstruction_report.json", &value)?;
    if report.bc_result.as_ref().is_some_and(|c| c.ambiguous) {
        return Ok(Outcome::Ambiguous);
    }
    Ok(if report.converged { Outcome::Pass } else { Outcome::Fail })
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    pub data: PathBuf,
    /// The known surface.
    pub shape: ShapeSpec,
    #[serde(default = "inverse::optimizer_solve_options")]
    pub solver: SolveOptions,
}

fn cmd_classify_bc(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg: ClassifyConfig = ctx.load()?;
    let shape = cfg.shape.resolve(&ctx.config_dir)?;
    let mut p = load_problem(ctx, &cfg.data, shape.clone(), 0)?;
    p.solve = ctx.solver(&cfg.solver);
    let c = classify_boundary_condition(&shape, &p)?;
    ctx.write_json("classify_bc.json", &classification_json(&c))?;
    Ok(if c.ambiguous { Outcome::Ambiguous } else { Outcome::Pass })
}

// ----------------------------------------------------------------------------

/// Runs a parsed command line and returns the exit outcome; errors are
/// reported on stderr.
pub fn run(cli: Cli) -> Outcome {
    let config_dir = cli
        .config
        .as_ref()
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Context { config_dir, config: cli.config.clone(), out: cli.out.clone(), resolution: cli.resolution.factor() };
    if let Err(e) = std::fs::create_dir_all(&ctx.out) {
        eprintln!("config error: {}: {e}", ctx.out.display());
        return Outcome::ConfigError;
    }
    let result = match cli.command {
        Command::Forward => cmd_forward(&ctx),
        Command::Mie => cmd_mie(&ctx),
        Command::Verify { which } => cmd_verify(&ctx, which),
        Command::Gapscan => cmd_gapscan(&ctx),
        Command::Invert => cmd_invert(&ctx),
        Command::ClassifyBc => cmd_classify_bc(&ctx),
    };
    match result {
        Ok(outcome) => outcome,
        Err(e) => {
            eprintln!("{e}");
            e.outcome()
        }
    }
}
