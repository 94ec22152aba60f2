//! Legendre polynomials and spherical Bessel functions of integer order.
//!
//! Every cylinder function that appears in the hitting-time series has
//! half-integer order m + 1/2, so everything here goes through the spherical
//! counterparts:
//!
//! ```text
//! J_{m+1/2}(x) = sqrt(2x/pi) j_m(x)
//! Y_{m+1/2}(x) = sqrt(2x/pi) y_m(x)
//! I_{m+1/2}(x) = sqrt(2x/pi) i_m(x)
//! ```
//!
//! All recurrences start from the elementary trig/hyperbolic closed forms of
//! order 0 and 1.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerated overshoot of a cosine argument beyond [-1, 1].
pub const LEGENDRE_CLAMP: f64 = 1e-12;

/// Below this argument the two-term ascending series is used for j_m and i_m.
const SMALL_ARG: f64 = 1e-5;

/// Rescaling threshold for recurrences that grow geometrically.
const RESCALE_EXP: i32 = 500;

fn clamp_cos(x: f64) -> Result<f64> {
    if x.is_nan() || x.abs() > 1.0 + LEGENDRE_CLAMP {
        return Err(Error::Domain(format!(
            "Legendre argument {x} outside [-1, 1]"
        )));
    }
    Ok(x.clamp(-1.0, 1.0))
}

/// P_m(x) by the Bonnet recurrence.
pub fn legendre_p(m: usize, x: f64) -> Result<f64> {
    let x = clamp_cos(x)?;
    let mut prev = 1.0;
    if m == 0 {
        return Ok(prev);
    }
    let mut cur = x;
    for n in 1..m {
        let n = n as f64;
        let next = ((2.0 * n + 1.0) * x * cur - n * prev) / (n + 1.0);
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// P_0(x), ..., P_max_order(x) in one pass.
pub fn legendre_series(max_order: usize, x: f64) -> Result<Vec<f64>> {
    let x = clamp_cos(x)?;
    let mut out = Vec::with_capacity(max_order + 1);
    out.push(1.0);
    if max_order >= 1 {
        out.push(x);
    }
    for n in 1..max_order {
        let nf = n as f64;
        let next = ((2.0 * nf + 1.0) * x * out[n] - nf * out[n - 1]) / (nf + 1.0);
        out.push(next);
    }
    Ok(out)
}

/// (2m+1)!! as a float; overflows to infinity past m ~ 150.
fn double_factorial_odd(m: usize) -> f64 {
    (1..=m).fold(1.0, |acc, k| acc * (2 * k + 1) as f64)
}

fn ldexp(x: f64, e: i32) -> f64 {
    if x == 0.0 || e == 0 {
        return x;
    }
    // split to stay inside the representable range of 2^e
    let mut x = x;
    let mut e = e;
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
        if x == 0.0 {
            return 0.0;
        }
    }
    x * 2f64.powi(e)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < SMALL_ARG {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Spherical Bessel function of the first kind j_m(x).
///
/// Upward recurrence when m <= x, Miller's downward recurrence otherwise,
/// normalized against whichever of j_0, j_1 is larger in magnitude.
pub fn sph_bessel_j(m: usize, x: f64) -> f64 {
    if x < 0.0 {
        let v = sph_bessel_j(m, -x);
        return if m.is_multiple_of(2) { v } else { -v };
    }
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    if m == 0 {
        return sinc(x);
    }
    if x < SMALL_ARG {
        let mf = m as f64;
        return x.powi(m as i32) / double_factorial_odd(m) * (1.0 - x * x / (2.0 * (2.0 * mf + 3.0)));
    }

    let (s, c) = x.sin_cos();
    let j0 = s / x;
    let j1 = (s / x - c) / x;
    if (m as f64) <= x {
        let (mut prev, mut cur) = (j0, j1);
        for n in 1..m {
            let next = (2 * n + 1) as f64 / x * cur - prev;
            prev = cur;
            cur = next;
        }
        return cur;
    }

    let start = (m + 20).max((1.5 * x).ceil() as usize);
    let mut above = 0.0;
    let mut cur = 1.0;
    let mut stored = 0.0;
    let limit = 2f64.powi(RESCALE_EXP);
    for n in (1..=start).rev() {
        if n == m {
            stored = cur;
        }
        let below = (2 * n + 1) as f64 / x * cur - above;
        above = cur;
        cur = below;
        if cur.abs() > limit {
            let s = 2f64.powi(-RESCALE_EXP);
            cur *= s;
            above *= s;
            stored *= s;
        }
    }
    // cur = f_0, above = f_1
    if j0.abs() >= j1.abs() {
        stored * (j0 / cur)
    } else {
        stored * (j1 / above)
    }
}

/// y_m(x) as (mantissa, binary exponent), value = mantissa * 2^exponent.
///
/// The upward recurrence is stable for y but grows like (2m-1)!!/x^(m+1) for
/// small x; the exponent keeps that representable.
pub fn sph_bessel_y_scaled(m: usize, x: f64) -> Result<(f64, i32)> {
    if x.is_nan() || x <= 0.0 {
        return Err(Error::Domain(format!("y_m requires x > 0, got {x}")));
    }
    let (s, c) = x.sin_cos();
    let y0 = -c / x;
    if m == 0 {
        return Ok((y0, 0));
    }
    let y1 = -c / (x * x) - s / x;
    let (mut prev, mut cur) = (y0, y1);
    let mut exp = 0;
    let limit = 2f64.powi(RESCALE_EXP);
    let shrink = 2f64.powi(-RESCALE_EXP);
    for n in 1..m {
        let next = (2 * n + 1) as f64 / x * cur - prev;
        prev = cur;
        cur = next;
        if cur.abs() > limit {
            cur *= shrink;
            prev *= shrink;
            exp += RESCALE_EXP;
        }
    }
    Ok((cur, exp))
}

/// Spherical Bessel function of the second kind y_m(x), x > 0.
pub fn sph_bessel_y(m: usize, x: f64) -> Result<f64> {
    let (mant, exp) = sph_bessel_y_scaled(m, x)?;
    Ok(ldexp(mant, exp))
}

/// i_m(x) / i_0(x) via the downward recurrence.
fn mod_ratio_to_zero(m: usize, x: f64) -> f64 {
    let start = (m + 20).max((1.5 * x).ceil() as usize);
    let mut above = 0.0;
    let mut cur = 1.0;
    let mut stored = if m == 0 { 1.0 } else { 0.0 };
    let limit = 2f64.powi(RESCALE_EXP);
    for n in (1..=start).rev() {
        if n == m {
            stored = cur;
        }
        let below = above + (2 * n + 1) as f64 / x * cur;
        above = cur;
        cur = below;
        if cur > limit {
            let s = 2f64.powi(-RESCALE_EXP);
            cur *= s;
            above *= s;
            stored *= s;
        }
    }
    if m == 0 {
        1.0
    } else {
        stored / cur
    }
}

fn mod_small_arg(m: usize, x: f64) -> f64 {
    let mf = m as f64;
    x.powi(m as i32) / double_factorial_odd(m) * (1.0 + x * x / (2.0 * (2.0 * mf + 3.0)))
}

/// Modified spherical Bessel function of the first kind i_m(x), x >= 0.
pub fn mod_sph_bessel_i(m: usize, x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    if x < SMALL_ARG {
        return mod_small_arg(m, x);
    }
    let i0 = x.sinh() / x;
    if m == 0 {
        i0
    } else {
        i0 * mod_ratio_to_zero(m, x)
    }
}

/// Exponentially scaled i_m(x) e^{-x}; finite for every x >= 0.
pub fn mod_sph_bessel_i_scaled(m: usize, x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    if x < SMALL_ARG {
        return mod_small_arg(m, x) * (-x).exp();
    }
    // e^{-x} sinh(x) / x
    let i0 = -(-2.0 * x).exp_m1() / (2.0 * x);
    if m == 0 {
        i0
    } else {
        i0 * mod_ratio_to_zero(m, x)
    }
}

/// Normalized Bessel cross product
/// Z_{m+1/2}(a, b) / (J_{m+1/2}(b)^2 + Y_{m+1/2}(b)^2).
///
/// In spherical form the sqrt(2b/pi) factors cancel, leaving
/// sqrt(a) [j_m(ab) y_m(b) - j_m(b) y_m(ab)] / (j_m(b)^2 + y_m(b)^2).
/// When y_m(b) is huge (b well below the turning point) numerator and
/// denominator are divided by y_m(b)^2 before being formed.
pub fn cross_product_ratio(m: usize, a: f64, b: f64) -> Result<f64> {
    if a.is_nan() || a < 1.0 {
        return Err(Error::Domain(format!("cross product needs a >= 1, got {a}")));
    }
    if b.is_nan() || b <= 0.0 {
        return Err(Error::Domain(format!("cross product needs b > 0, got {b}")));
    }
    let ab = a * b;
    let jb = sph_bessel_j(m, b);
    let jab = sph_bessel_j(m, ab);
    let (yb, eb) = sph_bessel_y_scaled(m, b)?;
    let (yab, eab) = sph_bessel_y_scaled(m, ab)?;

    if eb == 0 && eab == 0 {
        let num = jab * yb - jb * yab;
        let den = jb * jb + yb * yb;
        return Ok(a.sqrt() * num / den);
    }

    let inv = 1.0 / yb;
    let jab_over_yb = ldexp(jab * inv, -eb);
    let jb_over_yb = ldexp(jb * inv, -eb);
    let yab_over_yb = ldexp(yab * inv, eab - eb);
    Ok(a.sqrt() * (jab_over_yb - jb_over_yb * yab_over_yb) / (1.0 + jb_over_yb * jb_over_yb))
}

/// The finite polynomial part of the outgoing spherical Hankel function,
///
/// ```text
/// h1_m(z) = (-i)^{m+1} e^{iz} / z * Q_m(z),
/// Q_m(z)  = sum_{k=0}^{m} (m+k)! / (k! (m-k)!) (i / 2z)^k,
/// ```
///
/// valid for complex z. Coefficients are stored divided by the k = m one.
#[derive(Debug, Clone)]
pub struct HankelPolynomial {
    m: usize,
    coef: Vec<f64>,
}

impl HankelPolynomial {
    pub fn new(m: usize) -> Self {
        let mut coef = Vec::with_capacity(m + 1);
        let mut c = 1.0f64;
        coef.push(c);
        for k in 0..m {
            c *= ((m + k + 1) * (m - k)) as f64 / (k + 1) as f64;
            coef.push(c);
        }
        let top = c;
        coef.iter_mut().for_each(|x| *x /= top);
        Self { m, coef }
    }

    pub fn order(&self) -> usize {
        self.m
    }

    /// Q_m(z) up to the common factor c_m; forward in i/(2z).
    fn forward(&self, z: Complex64) -> Complex64 {
        let u = Complex64::i() / (2.0 * z);
        self.coef.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * u + c)
    }

    /// Q_m(z) / (c_m (i/2z)^m); a polynomial in -2iz.
    fn reversed(&self, z: Complex64) -> Complex64 {
        let w = Complex64::new(0.0, -2.0) * z;
        self.coef.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * w + c)
    }

    /// Q_m(a z) / Q_m(z) for a >= 1 and z != 0.
    pub fn ratio(&self, a: f64, z: Complex64) -> Complex64 {
        if z.norm() >= 0.5 {
            self.forward(a * z) / self.forward(z)
        } else {
            // both arguments below the turning scale: the top term dominates
            a.powi(-(self.m as i32)) * self.reversed(a * z) / self.reversed(z)
        }
    }

    /// h1_m(z) = j_m(z) + i y_m(z); overflows for |z| far below m.
    pub fn hankel(&self, z: Complex64) -> Complex64 {
        let mut c_m = 1.0f64;
        for k in 0..self.m {
            c_m *= ((self.m + k + 1) * (self.m - k)) as f64 / (k + 1) as f64;
        }
        let phase = Complex64::new(0.0, -1.0).powu(self.m as u32 + 1);
        phase * (Complex64::i() * z).exp() / z * (c_m * self.forward(z))
    }
}
