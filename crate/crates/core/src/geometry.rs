//! Star-shaped obstacle surfaces `x = center + r(theta, phi) * e_r` with the
//! radial map expanded in real orthonormal spherical harmonics, and the
//! tensor Gauss-Legendre x trapezoid quadratures built on them.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::specialfn::{fill_real_harmonics, gauss_legendre, sh_count, sh_index, AssocLegendre};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("coefficient array has length {got}, expected (lmax+1)^2 = {expected}")]
    CoefficientLength { got: usize, expected: usize },
    #[error("surface is not star-shaped: r = {r:e} at theta = {theta}, phi = {phi}")]
    NotStarShaped { theta: f64, phi: f64, r: f64 },
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("quadrature needs n_theta >= 8 and n_phi >= 16, got {0} x {1}")]
    Resolution(usize, usize),
    #[error("harmonic (l = {l}, m = {m}) is not a valid degree/order pair")]
    BadHarmonic { l: usize, m: i64 },
    #[error("direction vector must be nonzero and finite")]
    ZeroDirection,
}

/// A unit vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Direction(Vec3);

impl TryFrom<[f64; 3]> for Direction {
    type Error = GeometryError;
    fn try_from(v: [f64; 3]) -> Result<Self, GeometryError> {
        Direction::new(Vec3::from(v))
    }
}

impl From<Direction> for [f64; 3] {
    fn from(d: Direction) -> Self {
        [d.0.x, d.0.y, d.0.z]
    }
}

impl Direction {
    /// Normalizes `v`. Vectors already of unit length to rounding are kept
    /// bit for bit, so serialized directions read back unchanged.
    pub fn new(v: Vec3) -> Result<Self, GeometryError> {
        let n = v.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(GeometryError::ZeroDirection);
        }
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Direction(v));
        }
        Ok(Direction(v / n))
    }

    pub fn from_angles(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Direction(Vec3::new(st * cp, st * sp, ct))
    }

    pub fn z() -> Self {
        Direction(Vec3::z())
    }

    pub fn x() -> Self {
        Direction(Vec3::x())
    }

    pub fn vec(&self) -> Vec3 {
        self.0
    }

    /// Polar and azimuthal angles, `phi` in `[0, 2pi)`.
    pub fn angles(&self) -> (f64, f64) {
        let v = self.0;
        let theta = v.z.clamp(-1.0, 1.0).acos();
        let mut phi = v.y.atan2(v.x);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        (theta, phi)
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn rotated(&self, rot: &Rotation3<f64>) -> Self {
        Direction(rot * self.0)
    }
}

impl std::ops::Neg for Direction {
    type Output = Direction;
    fn neg(self) -> Direction {
        Direction(-self.0)
    }
}

/// On-disk form of a shape: `{"lmax": .., "coeffs": [..], "center": [x, y, z]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeFile {
    pub lmax: usize,
    pub coeffs: Vec<f64>,
    pub center: [f64; 3],
}

/// Smooth star-shaped surface. Immutable once constructed; construction
/// rejects radial maps that are not strictly positive on a dense grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeFile", into = "ShapeFile")]
pub struct StarShape {
    lmax: usize,
    coeffs: Vec<f64>,
    center: Vec3,
    r_min: f64,
    r_max: f64,
}

impl TryFrom<ShapeFile> for StarShape {
    type Error = GeometryError;
    fn try_from(f: ShapeFile) -> Result<Self, GeometryError> {
        StarShape::new(f.lmax, f.coeffs, Vec3::from(f.center))
    }
}

impl From<StarShape> for ShapeFile {
    fn from(s: StarShape) -> Self {
        ShapeFile { lmax: s.lmax, coeffs: s.coeffs, center: [s.center.x, s.center.y, s.center.z] }
    }
}

/// Evaluates a radial map on one theta ring at many phi values.
struct RingEvaluator<'a> {
    coeffs: &'a [f64],
    legendre: AssocLegendre,
    with_derivs: bool,
}

impl<'a> RingEvaluator<'a> {
    fn new(lmax: usize, coeffs: &'a [f64], theta: f64, with_derivs: bool) -> Self {
        let legendre = if with_derivs {
            AssocLegendre::with_derivatives(lmax, theta)
        } else {
            AssocLegendre::values_at(lmax, theta)
        };
        RingEvaluator { coeffs, legendre, with_derivs }
    }

    /// `(r, dr/dtheta, dr/dphi)`.
    fn eval(&self, phi: f64) -> (f64, f64, f64) {
        let (mut r, mut rphi) = (0.0, 0.0);
        let c = self.coeffs;
        fill_real_harmonics(
            &self.legendre,
            phi,
            |l, m, y, dy| {
                let cj = c[sh_index(l, m)];
                r += cj * y;
                rphi += cj * dy;
            },
            self.with_derivs,
        );
        let mut rtheta = 0.0;
        if self.with_derivs {
            let s2 = std::f64::consts::SQRT_2;
            let lmax = self.legendre.lmax();
            for l in 0..=lmax {
                rtheta += c[sh_index(l, 0)] * self.legendre.dtheta(l, 0);
                for am in 1..=l {
                    let (sm, cm) = (am as f64 * phi).sin_cos();
                    let d = s2 * self.legendre.dtheta(l, am);
                    rtheta += c[sh_index(l, am as i64)] * d * cm + c[sh_index(l, -(am as i64))] * d * sm;
                }
            }
        }
        (r, rtheta, rphi)
    }
}

/// Resolution of the construction-time positivity check.
fn validation_grid(lmax: usize) -> (usize, usize) {
    let nt = (4 * (lmax + 1)).max(48);
    (nt, 2 * nt)
}

impl StarShape {
    pub fn new(lmax: usize, coeffs: Vec<f64>, center: Vec3) -> Result<Self, GeometryError> {
        let expected = sh_count(lmax);
        if coeffs.len() != expected {
            return Err(GeometryError::CoefficientLength { got: coeffs.len(), expected });
        }
        let mut shape = StarShape { lmax, coeffs, center, r_min: 0.0, r_max: 0.0 };
        let (nt, np) = validation_grid(lmax);
        let (r_min, r_max) = shape.radial_extent(nt, np)?;
        shape.r_min = r_min;
        shape.r_max = r_max;
        Ok(shape)
    }

    /// Sphere of the given radius: only `c_{0,0} = radius * sqrt(4 pi)`.
    pub fn sphere(radius: f64, center: Vec3) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::NonPositiveRadius(radius));
        }
        StarShape::new(0, vec![radius * (4.0 * PI).sqrt()], center)
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    /// Largest radial distance from the center (on the validation grid).
    pub fn max_radius(&self) -> f64 {
        self.r_max
    }

    pub fn min_radius(&self) -> f64 {
        self.r_min
    }

    /// True when the radial map is constant (only the l = 0 coefficient is
    /// nonzero, up to rounding).
    pub fn is_sphere(&self) -> bool {
        let scale = self.coeffs[0].abs();
        self.coeffs[1..].iter().all(|c| c.abs() <= 1e-14 * scale)
    }

    /// Twice the largest radial distance; an upper bound on the true diameter.
    pub fn diameter(&self) -> f64 {
        2.0 * self.r_max
    }

    /// Coefficient `c_{l,m}`, zero beyond `lmax`.
    pub fn coeff(&self, l: usize, m: i64) -> f64 {
        if l > self.lmax || m.unsigned_abs() as usize > l {
            0.0
        } else {
            self.coeffs[sh_index(l, m)]
        }
    }

    pub fn to_file(&self) -> ShapeFile {
        self.clone().into()
    }

    /// Min and max of r over an `nt x np` grid; errors at the first
    /// non-positive node.
    fn radial_extent(&self, nt: usize, np: usize) -> Result<(f64, f64), GeometryError> {
        let (t, _) = gauss_legendre(nt);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        // Include the poles explicitly; Gauss nodes never reach them.
        let mut thetas: Vec<f64> = t.iter().map(|c| c.acos()).collect();
        thetas.push(0.0);
        thetas.push(PI);
        for &theta in &thetas {
            let ring = RingEvaluator::new(self.lmax, &self.coeffs, theta, false);
            for j in 0..np {
                let phi = 2.0 * PI * j as f64 / np as f64;
                let (r, _, _) = ring.eval(phi);
                if !(r > 0.0) || !r.is_finite() {
                    return Err(GeometryError::NotStarShaped { theta, phi, r });
                }
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        Ok((lo, hi))
    }

    /// Radial map `r(theta, phi)`.
    pub fn radius_at(&self, theta: f64, phi: f64) -> f64 {
        RingEvaluator::new(self.lmax, &self.coeffs, theta, false).eval(phi).0
    }

    /// `(r, dr/dtheta, dr/dphi)`; `theta` must avoid the poles.
    pub fn radius_and_derivatives(&self, theta: f64, phi: f64) -> (f64, f64, f64) {
        RingEvaluator::new(self.lmax, &self.coeffs, theta, true).eval(phi)
    }

    pub fn radius_along(&self, dir: &Direction) -> f64 {
        let (t, p) = dir.angles();
        self.radius_at(t, p)
    }

    /// Surface point in direction `(theta, phi)` from the center.
    pub fn surface_point(&self, theta: f64, phi: f64) -> Vec3 {
        self.center + Direction::from_angles(theta, phi).vec() * self.radius_at(theta, phi)
    }

    /// Outward unit normal at parametric angles; `theta` must avoid the poles.
    pub fn surface_normal(&self, theta: f64, phi: f64) -> Vec3 {
        let (r, r_t, r_p) = self.radius_and_derivatives(theta, phi);
        scaled_normal(theta, phi, r, r_t, r_p).normalize()
    }

    /// Signed radial clearance `|x - c| - r(dir(x - c))`: positive outside.
    pub fn radial_clearance(&self, x: &Vec3) -> f64 {
        let d = x - self.center;
        let n = d.norm();
        if n == 0.0 {
            return -self.r_min;
        }
        let dir = Direction(d / n);
        n - self.radius_along(&dir)
    }

    /// Strictly inside the obstacle.
    pub fn contains(&self, x: &Vec3) -> bool {
        self.radial_clearance(x) < 0.0
    }

    /// Returns a copy with `c_{l,m}` incremented by `delta`; extends `lmax`
    /// when `l` exceeds it.
    pub fn perturb(&self, l: usize, m: i64, delta: f64) -> Result<StarShape, GeometryError> {
        if m.unsigned_abs() as usize > l {
            return Err(GeometryError::BadHarmonic { l, m });
        }
        let lmax = self.lmax.max(l);
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(sh_count(lmax), 0.0);
        coeffs[sh_index(l, m)] += delta;
        StarShape::new(lmax, coeffs, self.center)
    }

    /// Same radial map about a shifted center.
    pub fn translated(&self, offset: Vec3) -> StarShape {
        StarShape { center: self.center + offset, ..self.clone() }
    }

    /// Radial map multiplied by `factor` about the center.
    pub fn dilated(&self, factor: f64) -> Result<StarShape, GeometryError> {
        if !(factor > 0.0) {
            return Err(GeometryError::NonPositiveRadius(factor));
        }
        StarShape::new(self.lmax, self.coeffs.iter().map(|c| c * factor).collect(), self.center)
    }

    /// Coefficients padded or truncated to `lmax`.
    pub fn with_lmax(&self, lmax: usize) -> Result<StarShape, GeometryError> {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(sh_count(lmax), 0.0);
        StarShape::new(lmax, coeffs, self.center)
    }

    /// Rigid rotation about the origin: the new surface is `{R x : x in S}`.
    ///
    /// The rotated radial map is projected back onto the harmonics with a
    /// product rule exact for degree `2 lmax`, which is the real-harmonic
    /// rotation rule since rotations preserve each degree.
    pub fn rotated(&self, rot: &Rotation3<f64>) -> StarShape {
        let lmax = self.lmax;
        let nt = lmax + 2;
        let np = 2 * lmax + 4;
        let (t, w) = gauss_legendre(nt);
        let inv = rot.inverse();
        let mut coeffs = vec![0.0; sh_count(lmax)];
        for (ti, wi) in t.iter().zip(&w) {
            let theta = ti.acos();
            let legendre = AssocLegendre::values_at(lmax, theta);
            for j in 0..np {
                let phi = 2.0 * PI * j as f64 / np as f64;
                let dir = Direction::from_angles(theta, phi);
                let r = self.radius_along(&dir.rotated(&inv));
                let ww = wi * 2.0 * PI / np as f64 * r;
                fill_real_harmonics(&legendre, phi, |l, m, y, _| coeffs[sh_index(l, m)] += ww * y, false);
            }
        }
        StarShape::new(lmax, coeffs, rot * self.center).expect("rotation preserves positivity")
    }
}

/// Sampled surface: points, outward unit normals, area weights.
#[derive(Debug, Clone)]
pub struct SurfaceQuadrature {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub weights: Vec<f64>,
    /// Parametric angles of each node about the shape center.
    pub angles: Vec<(f64, f64)>,
    pub resolution: (usize, usize),
}

impl SurfaceQuadrature {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `sum_i w_i f(i)`.
    pub fn integrate<T>(&self, f: impl Fn(usize) -> T) -> T
    where
        T: std::iter::Sum<T> + std::ops::Mul<f64, Output = T>,
    {
        (0..self.len()).map(|i| f(i) * self.weights[i]).sum()
    }
}

/// Gauss-Legendre in `cos theta` x uniform in `phi` on the shape. Normals
/// and area elements come from the analytic derivatives of the radial map.
pub fn build_quadrature(shape: &StarShape, n_theta: usize, n_phi: usize) -> Result<SurfaceQuadrature, GeometryError> {
    build_quadrature_offset(shape, n_theta, n_phi, 0.0)
}

/// As [`build_quadrature`] with the phi nodes shifted by `phi_offset`.
pub fn build_quadrature_offset(
    shape: &StarShape,
    n_theta: usize,
    n_phi: usize,
    phi_offset: f64,
) -> Result<SurfaceQuadrature, GeometryError> {
    if n_theta < 8 || n_phi < 16 {
        return Err(GeometryError::Resolution(n_theta, n_phi));
    }
    // Guard grid, twice as dense as the quadrature.
    shape.radial_extent(2 * n_theta, 2 * n_phi)?;

    let (t, w) = gauss_legendre(n_theta);
    let dphi = 2.0 * PI / n_phi as f64;
    let n = n_theta * n_phi;
    let mut q = SurfaceQuadrature {
        points: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        angles: Vec::with_capacity(n),
        resolution: (n_theta, n_phi),
    };
    for (ti, wi) in t.iter().zip(&w) {
        let theta = ti.acos();
        let (st, ct) = theta.sin_cos();
        let ring = RingEvaluator::new(shape.lmax, &shape.coeffs, theta, true);
        for j in 0..n_phi {
            let phi = phi_offset + dphi * j as f64;
            let (sp, cp) = phi.sin_cos();
            let (r, r_t, r_p) = ring.eval(phi);
            if !(r > 0.0) {
                return Err(GeometryError::NotStarShaped { theta, phi, r });
            }
            let e_r = Vec3::new(st * cp, st * sp, ct);
            let n_scaled = scaled_normal(theta, phi, r, r_t, r_p);
            let jac = n_scaled.norm();
            q.points.push(shape.center + e_r * r);
            q.normals.push(n_scaled / jac);
            q.weights.push(jac * wi * dphi);
            q.angles.push((theta, phi));
        }
    }
    Ok(q)
}

/// `x_theta x x_phi / sin(theta)` for the radial map `x = r(theta, phi) e_r`.
fn scaled_normal(theta: f64, phi: f64, r: f64, r_t: f64, r_p: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let e_r = Vec3::new(st * cp, st * sp, ct);
    let e_t = Vec3::new(ct * cp, ct * sp, -st);
    let e_p = Vec3::new(-sp, cp, 0.0);
    e_r * (r * r) - e_t * (r * r_t) - e_p * (r * r_p / st)
}

/// Product grid of directions on the unit sphere with solid-angle weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    pub directions: Vec<Direction>,
    pub weights: Vec<f64>,
    pub angles: Vec<(f64, f64)>,
}

impl DirectionGrid {
    /// Gauss-Legendre in `cos theta` (ascending theta) x uniform phi from 0.
    pub fn gauss(n_theta: usize, n_phi: usize) -> Self {
        let (t, w) = gauss_legendre(n_theta);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut g = DirectionGrid {
            n_theta,
            n_phi,
            directions: Vec::with_capacity(n_theta * n_phi),
            weights: Vec::with_capacity(n_theta * n_phi),
            angles: Vec::with_capacity(n_theta * n_phi),
        };
        // descending cos => ascending theta
        for i in (0..n_theta).rev() {
            let theta = t[i].acos();
            for j in 0..n_phi {
                let phi = dphi * j as f64;
                g.directions.push(Direction::from_angles(theta, phi));
                g.weights.push(w[i] * dphi);
                g.angles.push((theta, phi));
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// `n` nearly uniform directions on a golden-angle spiral.
pub fn fibonacci_directions(n: usize) -> Vec<Direction> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Direction(Vec3::new(rho * phi.cos(), rho * phi.sin(), z))
        })
        .collect()
}
