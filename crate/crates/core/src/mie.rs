//! Partial-wave solution for a sphere of radius `a` centred at the origin.
//!
//! With `e^{ik alpha . x} = sum_l i^l (2l+1) j_l(kr) P_l(cos g)` the scattered
//! field is `v = sum_l i^l (2l+1) c_l h_l(kr) P_l(cos g)`, `cos g = alpha . x/|x|`.
//! Since `h_l(kr) ~ (-i)^{l+1} e^{ikr}/(kr)`, the amplitude in the
//! `e^{ikr}/r` convention is `A = (1/(ik)) sum_l (2l+1) c_l P_l(beta . alpha)`.

use num_complex::Complex64;
use serde::Serialize;

use crate::forward::BoundaryCondition;
use crate::geometry::{Direction, DirectionGrid, Vec3};
use crate::specialfn::{derivative_seq, legendre_seq, sph_bessel_j_seq, sph_bessel_y_seq};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest `ka` the series is used for.
pub const MAX_KA: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MieError {
    #[error("ka = {0} outside (0, {MAX_KA}]")]
    OutOfRange(f64),
    #[error("series tail not converged at lmax = {lmax}: last terms {tail:?} vs max {max:e}")]
    NonConvergentTail { lmax: usize, tail: [f64; 3], max: f64 },
    #[error("evaluation point inside the sphere (r = {0})")]
    Inside(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct MieSeries {
    pub a: f64,
    pub k: f64,
    #[serde(skip)]
    pub bc: BoundaryCondition,
    pub lmax_used: usize,
    #[serde(skip)]
    pub partial_coeffs: Vec<Complex64>,
}

/// `ceil(ka + 8 (ka)^{1/3} + 20)`.
pub fn default_lmax(ka: f64) -> usize {
    (ka + 8.0 * ka.cbrt() + 20.0).ceil() as usize
}

fn hankel_seq(lmax: usize, x: f64) -> Vec<Complex64> {
    let j = sph_bessel_j_seq(lmax, x);
    let y = sph_bessel_y_seq(lmax, x);
    j.iter().zip(&y).map(|(a, b)| Complex64::new(*a, *b)).collect()
}

/// Coefficients `c_l`, `l = 0 ..= lmax` (default from [`default_lmax`]).
pub fn mie_coefficients(a: f64, k: f64, bc: BoundaryCondition, lmax: Option<usize>) -> Result<MieSeries, MieError> {
    let ka = k * a;
    if !(ka > 0.0 && ka <= MAX_KA) {
        return Err(MieError::OutOfRange(ka));
    }
    let lmax = lmax.unwrap_or_else(|| default_lmax(ka));
    let j = sph_bessel_j_seq(lmax + 1, ka);
    let h = hankel_seq(lmax + 1, ka);
    let jd = derivative_seq(&j, ka);
    let hd = derivative_seq(&h, ka);
    let coeffs: Vec<Complex64> = (0..=lmax)
        .map(|l| {
            let c = match bc {
                BoundaryCondition::Dirichlet => -Complex64::from(j[l]) / h[l],
                BoundaryCondition::Neumann => -Complex64::from(jd[l]) / hd[l],
                BoundaryCondition::Impedance(z) => -(k * jd[l] + z * j[l]) / (k * hd[l] + z * h[l]),
            };
            // y_l overflow at very high order: the true coefficient underflows
            if c.re.is_finite() && c.im.is_finite() {
                c
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();

    let weighted: Vec<f64> = coeffs.iter().enumerate().map(|(l, c)| c.norm() * (2 * l + 1) as f64).collect();
    let max = weighted.iter().cloned().fold(0.0, f64::max);
    if lmax >= 2 {
        let tail = [weighted[lmax - 2], weighted[lmax - 1], weighted[lmax]];
        if tail.iter().any(|t| *t > 1e-16 * max) {
            return Err(MieError::NonConvergentTail { lmax, tail, max });
        }
    } else {
        return Err(MieError::NonConvergentTail { lmax, tail: [f64::NAN; 3], max });
    }
    Ok(MieSeries { a, k, bc, lmax_used: lmax, partial_coeffs: coeffs })
}

impl MieSeries {
    /// `A` as a function of `cos(angle between beta and alpha)`.
    pub fn far_field(&self, cos_angle: f64) -> Complex64 {
        let p = legendre_seq(self.lmax_used, cos_angle.clamp(-1.0, 1.0));
        let s: Complex64 =
            self.partial_coeffs.iter().enumerate().map(|(l, c)| c * ((2 * l + 1) as f64 * p[l])).sum();
        s / (I * self.k)
    }

    /// Far field at `beta` for incidence `alpha`.
    pub fn far_field_dir(&self, beta: &Direction, alpha: &Direction) -> Complex64 {
        self.far_field(beta.dot(alpha))
    }

    /// Far field on every grid direction.
    pub fn far_field_grid(&self, grid: &DirectionGrid, alpha: &Direction) -> Vec<Complex64> {
        grid.directions.iter().map(|b| self.far_field_dir(b, alpha)).collect()
    }

    fn radial_and_cos(&self, x: &Vec3, alpha: &Direction) -> Result<(f64, f64), MieError> {
        let r = x.norm();
        if r < self.a * (1.0 - 1e-12) {
            return Err(MieError::Inside(r));
        }
        Ok((r, (alpha.vec().dot(x) / r).clamp(-1.0, 1.0)))
    }

    /// Scattered field `v(x)`.
    pub fn scattered_field(&self, x: &Vec3, alpha: &Direction) -> Result<Complex64, MieError> {
        let (r, c) = self.radial_and_cos(x, alpha)?;
        let h = hankel_seq(self.lmax_used, self.k * r);
        let p = legendre_seq(self.lmax_used, c);
        let mut il = Complex64::new(1.0, 0.0);
        let mut s = Complex64::new(0.0, 0.0);
        for l in 0..=self.lmax_used {
            let t = self.partial_coeffs[l] * h[l] * ((2 * l + 1) as f64 * p[l]) * il;
            if t.re.is_finite() && t.im.is_finite() {
                s += t;
            }
            il *= I;
        }
        Ok(s)
    }

    /// Total field and its radial derivative, both summed as partial waves.
    pub fn total_field_series(&self, x: &Vec3, alpha: &Direction) -> Result<(Complex64, Complex64), MieError> {
        let (r, c) = self.radial_and_cos(x, alpha)?;
        let kr = self.k * r;
        let n = self.lmax_used + 1;
        let j = sph_bessel_j_seq(n, kr);
        let h = hankel_seq(n, kr);
        let jd = derivative_seq(&j, kr);
        let hd = derivative_seq(&h, kr);
        let p = legendre_seq(self.lmax_used, c);
        let mut il = Complex64::new(1.0, 0.0);
        let (mut u, mut ur) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for l in 0..=self.lmax_used {
            let w = il * ((2 * l + 1) as f64 * p[l]);
            let cl = self.partial_coeffs[l];
            let tu = w * (j[l] + cl * h[l]);
            let tr = w * (jd[l] + cl * hd[l]) * self.k;
            if tu.re.is_finite() && tu.im.is_finite() && tr.re.is_finite() && tr.im.is_finite() {
                u += tu;
                ur += tr;
            }
            il *= I;
        }
        Ok((u, ur))
    }

    /// Total field with the exact incident plane wave.
    pub fn total_field(&self, x: &Vec3, alpha: &Direction) -> Result<Complex64, MieError> {
        Ok(Complex64::from_polar(1.0, self.k * alpha.vec().dot(x)) + self.scattered_field(x, alpha)?)
    }
}
