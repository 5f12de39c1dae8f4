//! Spherical Bessel and Hankel functions, Legendre polynomials and the real
//! orthonormal spherical harmonics used for surface parametrization.
//!
//! Recurrence contract:
//! - `j_l` by upward recurrence from the closed forms while `l <= x`, and by
//!   Miller's downward recurrence, matched to the upward values, above that;
//! - `y_l` by upward recurrence (always stable for the irregular solution);
//! - `h_l^{(1)} = j_l + i y_l`.

use num_complex::Complex64;
use std::f64::consts::PI;

/// Highest degree accepted by the scalar entry points.
pub const MAX_DEGREE: usize = 200;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecialFnError {
    #[error("argument x = {0} must be positive and finite")]
    BadArgument(f64),
    #[error("degree {0} exceeds the supported maximum {MAX_DEGREE}")]
    DegreeTooLarge(usize),
    #[error("{func}({l}, {x}) underflows double precision")]
    Underflow { func: &'static str, l: usize, x: f64 },
    #[error("{func}({l}, {x}) overflows double precision")]
    Overflow { func: &'static str, l: usize, x: f64 },
}

fn check_args(l: usize, x: f64) -> Result<(), SpecialFnError> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(SpecialFnError::BadArgument(x));
    }
    if l > MAX_DEGREE {
        return Err(SpecialFnError::DegreeTooLarge(l));
    }
    Ok(())
}

/// `j_0 ..= j_lmax` at `x > 0`. Entries that underflow come back as zero;
/// callers that need to know use [`sph_bessel_j`].
pub fn sph_bessel_j_seq(lmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; lmax + 1];
    let (s, c) = x.sin_cos();
    let j0 = if x < 1e-4 { 1.0 - x * x / 6.0 } else { s / x };
    out[0] = j0;
    if lmax == 0 {
        return out;
    }
    let j1 = if x < 1e-4 {
        x / 3.0 * (1.0 - x * x / 10.0)
    } else {
        (s / x - c) / x
    };

    // Upward recurrence is accurate for l <= x.
    let l_up = (x.floor() as usize).min(lmax);
    out[1] = j1;
    for l in 1..l_up {
        out[l + 1] = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
    }
    if l_up == lmax && lmax >= 1 {
        return out;
    }

    // Miller: seed far above both lmax and x, recur all the way down, then
    // normalize against whichever of j_0, j_1 is better conditioned.
    let top = lmax.max(x.ceil() as usize);
    let start = top + 16 + (10.0 * (top as f64).sqrt()) as usize;
    let mut down = vec![0.0f64; start + 2];
    down[start] = 1.0;
    for l in (1..=start).rev() {
        let next = (2 * l + 1) as f64 / x * down[l] - down[l + 1];
        down[l - 1] = next;
        if next.abs() > 1e250 {
            // entries far above may flush to zero, which is their true scale
            let f = 2f64.powi(-800);
            for v in down[l - 1..=start].iter_mut() {
                *v *= f;
            }
        }
    }
    let scale = if j0.abs() >= j1.abs() { j0 / down[0] } else { j1 / down[1] };
    let anchor = l_up;
    for l in (anchor + 1)..=lmax {
        out[l] = down[l] * scale;
    }
    out
}

/// `y_0 ..= y_lmax` at `x > 0` by upward recurrence. Overflowing entries
/// come back as `-inf`.
pub fn sph_bessel_y_seq(lmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; lmax + 1];
    let (s, c) = x.sin_cos();
    out[0] = -c / x;
    if lmax >= 1 {
        out[1] = -c / (x * x) - s / x;
    }
    for l in 1..lmax {
        out[l + 1] = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
        if !out[l + 1].is_finite() {
            for v in out[l + 1..].iter_mut() {
                *v = f64::NEG_INFINITY;
            }
            break;
        }
    }
    out
}

/// Spherical Bessel function of the first kind.
pub fn sph_bessel_j(l: usize, x: f64) -> Result<f64, SpecialFnError> {
    check_args(l, x)?;
    let v = sph_bessel_j_seq(l, x)[l];
    if v == 0.0 || v.is_subnormal() {
        return Err(SpecialFnError::Underflow { func: "j", l, x });
    }
    Ok(v)
}

/// Spherical Bessel function of the second kind.
pub fn sph_bessel_y(l: usize, x: f64) -> Result<f64, SpecialFnError> {
    check_args(l, x)?;
    let v = sph_bessel_y_seq(l, x)[l];
    if !v.is_finite() {
        return Err(SpecialFnError::Overflow { func: "y", l, x });
    }
    Ok(v)
}

/// Spherical Hankel function of the first kind, `j_l + i y_l`.
pub fn sph_hankel1(l: usize, x: f64) -> Result<Complex64, SpecialFnError> {
    check_args(l, x)?;
    let j = sph_bessel_j_seq(l, x)[l];
    let y = sph_bessel_y(l, x).map_err(|_| SpecialFnError::Overflow { func: "h1", l, x })?;
    Ok(Complex64::new(j, y))
}

/// Derivatives `f_l'(x) = f_{l-1}(x) - (l+1)/x f_l(x)` (and `f_0' = -f_1`)
/// from a sequence `f_0 ..= f_{L}`; returns derivatives for `0 ..= L-1`.
pub fn derivative_seq<T>(f: &[T], x: f64) -> Vec<T>
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T> + std::ops::Neg<Output = T>,
{
    let n = f.len().saturating_sub(1);
    (0..n)
        .map(|l| {
            if l == 0 {
                -f[1]
            } else {
                f[l - 1] - f[l] * ((l + 1) as f64 / x)
            }
        })
        .collect()
}

/// Legendre polynomial `P_l(t)` by the three-term recurrence.
pub fn legendre_p(l: usize, t: f64) -> f64 {
    legendre_seq(l, t)[l]
}

/// `P_0(t) ..= P_lmax(t)`.
pub fn legendre_seq(lmax: usize, t: f64) -> Vec<f64> {
    let mut p = vec![0.0; lmax + 1];
    p[0] = 1.0;
    if lmax >= 1 {
        p[1] = t;
    }
    for l in 1..lmax {
        p[l + 1] = ((2 * l + 1) as f64 * t * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64;
    }
    p
}

/// Flattened index `l^2 + l + m` of the real harmonic `Y_{l,m}`.
#[inline]
pub fn sh_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Number of real harmonics up to degree `lmax`.
#[inline]
pub fn sh_count(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 1)
}

/// Inverse of [`sh_index`].
pub fn sh_degree_order(index: usize) -> (usize, i64) {
    let l = (index as f64).sqrt().floor() as usize;
    let l = if (l + 1) * (l + 1) <= index { l + 1 } else { l };
    (l, index as i64 - (l * l + l) as i64)
}

/// Fully normalized associated Legendre functions (no Condon-Shortley
/// phase) `Pbar_l^m(cos theta)` for `0 <= m <= l <= lmax`, and their theta
/// derivatives, in the layout `[l*(l+1)/2 + m]`.
///
/// Normalization: `Pbar_l^m(cos theta) e^{i m phi}` has unit L2 norm on the
/// sphere.
pub struct AssocLegendre {
    lmax: usize,
    values: Vec<f64>,
    dtheta: Vec<f64>,
}

impl AssocLegendre {
    #[inline]
    fn idx(l: usize, m: usize) -> usize {
        l * (l + 1) / 2 + m
    }

    /// Values only; valid at the poles.
    pub fn values_at(lmax: usize, theta: f64) -> Self {
        Self::compute(lmax, theta, false)
    }

    /// Values and theta derivatives. The derivative formula divides by
    /// `sin theta`, so `theta` must stay away from the poles.
    pub fn with_derivatives(lmax: usize, theta: f64) -> Self {
        Self::compute(lmax, theta, true)
    }

    fn compute(lmax: usize, theta: f64, derivs: bool) -> Self {
        let (st, ct) = theta.sin_cos();
        let n = (lmax + 1) * (lmax + 2) / 2;
        let mut p = vec![0.0; n];
        p[0] = 1.0 / (4.0 * PI).sqrt();
        for m in 1..=lmax {
            p[Self::idx(m, m)] =
                ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * st * p[Self::idx(m - 1, m - 1)];
        }
        for m in 0..lmax {
            p[Self::idx(m + 1, m)] = ((2 * m + 3) as f64).sqrt() * ct * p[Self::idx(m, m)];
        }
        for m in 0..=lmax {
            for l in (m + 2)..=lmax {
                let (lf, mf) = (l as f64, m as f64);
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
                p[Self::idx(l, m)] = a * (ct * p[Self::idx(l - 1, m)] - b * p[Self::idx(l - 2, m)]);
            }
        }
        let mut d = Vec::new();
        if derivs {
            d = vec![0.0; n];
            for l in 0..=lmax {
                for m in 0..=l {
                    let (lf, mf) = (l as f64, m as f64);
                    let prev = if l > m {
                        ((2.0 * lf + 1.0) / (2.0 * lf - 1.0) * (lf * lf - mf * mf)).sqrt()
                            * p[Self::idx(l - 1, m)]
                    } else {
                        0.0
                    };
                    d[Self::idx(l, m)] = (lf * ct * p[Self::idx(l, m)] - prev) / st;
                }
            }
        }
        AssocLegendre { lmax, values: p, dtheta: d }
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn value(&self, l: usize, m: usize) -> f64 {
        self.values[Self::idx(l, m)]
    }

    pub fn dtheta(&self, l: usize, m: usize) -> f64 {
        self.dtheta[Self::idx(l, m)]
    }
}

/// Real orthonormal spherical harmonic `Y_{l,m}(theta, phi)`:
/// `sqrt2 Pbar_l^m cos(m phi)` for `m > 0`, `Pbar_l^0` for `m = 0`,
/// `sqrt2 Pbar_l^|m| sin(|m| phi)` for `m < 0`.
pub fn real_sph_harm(l: usize, m: i64, theta: f64, phi: f64) -> f64 {
    assert!(m.unsigned_abs() as usize <= l, "|m| must not exceed l");
    let p = AssocLegendre::values_at(l, theta);
    let am = m.unsigned_abs() as usize;
    let v = p.value(l, am);
    match m.signum() {
        0 => v,
        1 => std::f64::consts::SQRT_2 * v * (am as f64 * phi).cos(),
        _ => std::f64::consts::SQRT_2 * v * (am as f64 * phi).sin(),
    }
}

/// All real harmonics up to `lmax` at one direction, in flattened order.
pub fn real_sph_harm_all(lmax: usize, theta: f64, phi: f64) -> Vec<f64> {
    let p = AssocLegendre::values_at(lmax, theta);
    let mut out = vec![0.0; sh_count(lmax)];
    fill_real_harmonics(&p, phi, |l, m, v, _| out[sh_index(l, m)] = v, false);
    out
}

/// Walks every `(l, m)` calling `sink(l, m, value, dphi)` where `dphi` is
/// the phi-derivative (only meaningful when `with_dphi`).
pub(crate) fn fill_real_harmonics(
    p: &AssocLegendre,
    phi: f64,
    mut sink: impl FnMut(usize, i64, f64, f64),
    with_dphi: bool,
) {
    let s2 = std::f64::consts::SQRT_2;
    for l in 0..=p.lmax() {
        sink(l, 0, p.value(l, 0), 0.0);
        for am in 1..=l {
            let (sm, cm) = (am as f64 * phi).sin_cos();
            let v = p.value(l, am);
            let mf = am as f64;
            let (dc, ds) = if with_dphi { (-s2 * v * mf * sm, s2 * v * mf * cm) } else { (0.0, 0.0) };
            sink(l, am as i64, s2 * v * cm, dc);
            sink(l, -(am as i64), s2 * v * sm, ds);
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            } else {
                for k in 1..n {
                    let p2 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p0) / (k + 1) as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            dp = 1.0;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Power series `x^l sum_k (-x^2/2)^k / (k! (2l+2k+1)!!)`.
    fn bessel_series(l: usize, x: f64) -> f64 {
        let mut dfact = 1.0;
        for i in (1..=(2 * l + 1)).step_by(2) {
            dfact *= i as f64;
        }
        let mut term = x.powi(l as i32) / dfact;
        let mut sum = term;
        for k in 1..200 {
            term *= -x * x / 2.0 / (k as f64 * (2 * l + 2 * k + 1) as f64);
            sum += term;
            if term.abs() < 1e-20 * sum.abs() {
                break;
            }
        }
        sum
    }

    /// `j_l(x) = (-i)^l / 2 * int_{-1}^{1} e^{ixt} P_l(t) dt`, by Gauss rule.
    fn bessel_integral(l: usize, x: f64) -> f64 {
        let (t, w) = gauss_legendre(200);
        let mut acc = Complex64::new(0.0, 0.0);
        for (ti, wi) in t.iter().zip(&w) {
            acc += Complex64::from_polar(1.0, x * ti) * legendre_p(l, *ti) * *wi;
        }
        (Complex64::new(0.0, -1.0).powu(l as u32) * acc * 0.5).re
    }

    #[test]
    fn closed_forms() {
        assert!(sph_bessel_j(0, PI).unwrap().abs() < 1e-12);
        assert!((sph_bessel_j(0, 1.0).unwrap() - 1f64.sin()).abs() < 1e-15);
        let x = 1.0;
        let h0 = sph_hankel1(0, x).unwrap();
        let expect = Complex64::new(0.0, -1.0) * Complex64::from_polar(1.0, x) / x;
        assert!((h0 - expect).norm() < 1e-12);
        let x = 2.0;
        let h1 = sph_hankel1(1, x).unwrap();
        let expect = -(Complex64::from_polar(1.0, x) / x) * (1.0 + Complex64::new(0.0, 1.0 / x));
        assert!((h1 - expect).norm() < 1e-12);
    }

    #[test]
    fn j5_at_10_matches_series() {
        let v = sph_bessel_j(5, 10.0).unwrap();
        let s = bessel_series(5, 10.0);
        assert!(((v - s) / s).abs() < 1e-12, "{v} vs {s}");
    }

    #[test]
    fn downward_regime_matches_oracles() {
        for &(l, x) in &[(10usize, 1.0), (30, 5.0), (60, 20.0), (60, 1e-3), (12, 3.3), (45, 44.5)] {
            let v = sph_bessel_j(l, x).unwrap();
            // the series cancels like exp(x^2 / (2(2l+3))); the integral
            // loses everything once j_l is tiny
            let series_ok = x * x / (2.0 * (2 * l + 3) as f64) < 3.0;
            let oracle = if series_ok { bessel_series(l, x) } else { bessel_integral(l, x) };
            assert!(((v - oracle) / oracle).abs() < 1e-12, "l={l} x={x}: {v} vs {oracle}");
        }
    }

    #[test]
    fn upward_regime_matches_integral() {
        for &(l, x) in &[(3usize, 50.0), (20, 99.0), (7, 30.0), (1, 100.0)] {
            let v = sph_bessel_j(l, x).unwrap();
            let oracle = bessel_integral(l, x);
            assert!((v - oracle).abs() < 1e-12 * oracle.abs().max(1.0 / x), "l={l} x={x}: {v} vs {oracle}");
        }
    }

    #[test]
    fn wronskian() {
        let (l, x) = (7usize, 3.0);
        let j = sph_bessel_j_seq(l + 1, x);
        let y = sph_bessel_y_seq(l + 1, x);
        let jd = derivative_seq(&j, x);
        let yd = derivative_seq(&y, x);
        let w = j[l] * yd[l] - jd[l] * y[l];
        assert!((w - 1.0 / (x * x)).abs() < 1e-11 * (1.0 / (x * x)));
    }

    #[test]
    fn recurrence_consistency() {
        for &x in &[0.5, 2.0, 7.5, 31.0, 80.0] {
            let j = sph_bessel_j_seq(50, x);
            for l in 1..49 {
                let lhs = (2 * l + 1) as f64 * j[l] / x;
                let rhs = j[l - 1] + j[l + 1];
                if lhs.abs() < 1e-250 {
                    continue;
                }
                assert!(((lhs - rhs) / lhs).abs() < 1e-11 || (lhs - rhs).abs() < 1e-14, "x={x} l={l}");
            }
        }
    }

    #[test]
    fn hankel_large_argument_residual_decays() {
        let l = 3usize;
        let pts: Vec<(f64, f64)> = [50.0, 100.0, 200.0]
            .iter()
            .map(|&x| {
                let h = sph_hankel1(l, x).unwrap();
                let asym = Complex64::new(0.0, -1.0).powu(l as u32 + 1) * Complex64::from_polar(1.0, x) / x;
                (x, (h - asym).norm() * x * x)
            })
            .collect();
        // residual*x^2 tends to a constant: log-log slope of residual*x is -1.
        let slope = ((pts[2].1 / pts[2].0).ln() - (pts[0].1 / pts[0].0).ln()) / (pts[2].0.ln() - pts[0].0.ln());
        assert!((slope + 1.0).abs() < 0.05, "slope {slope}");
        assert!(pts[2].1 < 2.0 * pts[0].1);
    }

    #[test]
    fn underflow_and_bad_args_reported() {
        assert!(matches!(sph_bessel_j(150, 1e-3), Err(SpecialFnError::Underflow { .. })));
        assert!(matches!(sph_bessel_y(150, 1e-3), Err(SpecialFnError::Overflow { .. })));
        assert!(matches!(sph_bessel_j(3, 0.0), Err(SpecialFnError::BadArgument(_))));
        assert!(matches!(sph_bessel_j(201, 1.0), Err(SpecialFnError::DegreeTooLarge(201))));
    }

    #[test]
    fn legendre_identities() {
        assert_eq!(legendre_p(0, 0.3), 1.0);
        for l in 0..=60 {
            assert!((legendre_p(l, 1.0) - 1.0).abs() < 1e-13);
        }
        let (t, w) = gauss_legendre(20);
        let s: f64 = t.iter().zip(&w).map(|(t, w)| w * legendre_p(3, *t) * legendre_p(5, *t)).sum();
        assert!(s.abs() < 1e-12);
        let norm: f64 = t.iter().zip(&w).map(|(t, w)| w * legendre_p(4, *t).powi(2)).sum();
        assert!((norm - 2.0 / 9.0).abs() < 1e-13);
    }

    #[test]
    fn harmonic_basics() {
        let y00 = 1.0 / (4.0 * PI).sqrt();
        for &(th, ph) in &[(0.0, 0.0), (1.1, 2.3), (PI, 5.0)] {
            assert!((real_sph_harm(0, 0, th, ph) - y00).abs() < 1e-15);
        }
        // Y_{1,0} = sqrt(3/4pi) cos theta, Y_{1,1} = sqrt(3/4pi) sin theta cos phi
        let (th, ph) = (0.7, 1.9);
        let c = (3.0 / (4.0 * PI)).sqrt();
        assert!((real_sph_harm(1, 0, th, ph) - c * th.cos()).abs() < 1e-15);
        assert!((real_sph_harm(1, 1, th, ph) - c * th.sin() * ph.cos()).abs() < 1e-15);
        assert!((real_sph_harm(1, -1, th, ph) - c * th.sin() * ph.sin()).abs() < 1e-15);
    }

    #[test]
    fn addition_theorem() {
        let l = 4;
        let (t1, p1, t2, p2) = (0.4f64, 1.3f64, 2.2f64, -0.7f64);
        let dir = |t: f64, p: f64| [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()];
        let (a, b) = (dir(t1, p1), dir(t2, p2));
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let sum: f64 = (-(l as i64)..=l as i64)
            .map(|m| real_sph_harm(l, m, t1, p1) * real_sph_harm(l, m, t2, p2))
            .sum();
        let expect = (2 * l + 1) as f64 / (4.0 * PI) * legendre_p(l, dot);
        assert!((sum - expect).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_under_product_quadrature() {
        let lmax = 6;
        let nt = 12;
        let np = 24;
        let (t, w) = gauss_legendre(nt);
        let n = sh_count(lmax);
        let mut gram = vec![0.0; n * n];
        for (ti, wi) in t.iter().zip(&w) {
            let th = ti.acos();
            for j in 0..np {
                let ph = 2.0 * PI * j as f64 / np as f64;
                let y = real_sph_harm_all(lmax, th, ph);
                let ww = wi * 2.0 * PI / np as f64;
                for a in 0..n {
                    for b in 0..n {
                        gram[a * n + b] += ww * y[a] * y[b];
                    }
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a * n + b] - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn theta_derivative_matches_finite_difference() {
        let lmax = 8;
        let th = 0.9;
        let h = 1e-6;
        let p = AssocLegendre::with_derivatives(lmax, th);
        let pp = AssocLegendre::values_at(lmax, th + h);
        let pm = AssocLegendre::values_at(lmax, th - h);
        for l in 0..=lmax {
            for m in 0..=l {
                let fd = (pp.value(l, m) - pm.value(l, m)) / (2.0 * h);
                assert!((p.dtheta(l, m) - fd).abs() < 1e-7, "l={l} m={m}");
            }
        }
    }

    #[test]
    fn flat_index_round_trip() {
        for i in 0..100 {
            let (l, m) = sh_degree_order(i);
            assert_eq!(sh_index(l, m), i);
            assert!(m.unsigned_abs() as usize <= l);
        }
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((s - 2.0 / 13.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }
}
