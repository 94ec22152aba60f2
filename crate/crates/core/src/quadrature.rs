//! Adaptive Gauss–Kronrod integration on the Gaussian-damped half line, plus a
//! product rule over the sphere surface.
//!
//! Panel sums are always accumulated in ascending panel order with
//! compensated summation, so a given configuration is bit-reproducible.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// 15-point Kronrod nodes on [0, 1] (symmetric), with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights for XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Tolerances and truncation policy for the lambda integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaIntegralConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Multiplier (>= 1) on the Gaussian-damping cutoff.
    pub cutoff_factor: f64,
    pub max_subdivisions: usize,
}

impl Default for LambdaIntegralConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            cutoff_factor: 1.5,
            max_subdivisions: 2000,
        }
    }
}

impl LambdaIntegralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(Error::Config("quadrature tolerances must be positive".into()));
        }
        if !(self.cutoff_factor >= 1.0) {
            return Err(Error::Config("cutoff_factor must be >= 1".into()));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::Config("max_subdivisions must be positive".into()));
        }
        Ok(())
    }
}

/// Product Gauss–Legendre (in cos theta) x trapezoid (in phi) surface rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SphereQuadratureConfig {
    pub polar_order: usize,
    pub azimuthal_order: usize,
}

impl Default for SphereQuadratureConfig {
    fn default() -> Self {
        Self {
            polar_order: 64,
            azimuthal_order: 128,
        }
    }
}

impl SphereQuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.polar_order < 4 || self.azimuthal_order < 4 {
            return Err(Error::Config("sphere quadrature orders must be >= 4".into()));
        }
        Ok(())
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error_estimate: f64,
    /// Sum of |f| over the panels; the roundoff scale of `value`.
    pub abs_value: f64,
    pub panels: usize,
    /// Upper integration limit actually used (lambda integrals only).
    pub upper: f64,
    /// The error estimate sits at the floating-point roundoff floor.
    pub roundoff_limited: bool,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    abs_value: f64,
    roundoff: f64,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = CompensatedSum::default();
    let mut gauss = CompensatedSum::default();
    kronrod.add(WGK[7] * fc);
    gauss.add(WG[3] * fc);
    let mut abs_value = WGK[7] * fc.abs();
    let mut fvals = [0.0f64; 15];
    fvals[7] = fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fvals[j] = f1;
        fvals[14 - j] = f2;
        kronrod.add(WGK[j] * f1);
        kronrod.add(WGK[j] * f2);
        abs_value += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss.add(WG[j / 2] * f1);
            gauss.add(WG[j / 2] * f2);
        }
    }
    let k = kronrod.value();
    let mean = 0.5 * k;
    let mut asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((fvals[j] - mean).abs() + (fvals[14 - j] - mean).abs());
    }
    let hl = half.abs();
    let resabs = abs_value * hl;
    let resasc = asc * hl;
    let mut err = ((k - gauss.value()) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    let roundoff = 50.0 * f64::EPSILON * resabs;
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(roundoff);
    }
    Panel {
        a,
        b,
        value: k * half,
        error: err,
        abs_value: resabs,
        roundoff,
    }
}

/// Globally adaptive GK15 over the union of `breaks` intervals.
///
/// The panel with the largest error estimate is bisected until the summed
/// estimate satisfies max(abs_tol, rel_tol |I|), or until it is within twice
/// the accumulated roundoff floor (further bisection cannot help).
/// `max_subdivisions` bounds the number of bisections.
pub fn adaptive_gk15<F: Fn(f64) -> f64>(
    f: &F,
    breaks: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    max_subdivisions: usize,
) -> std::result::Result<Integral, Integral> {
    let mut panels: Vec<Panel> = breaks.windows(2).map(|w| gk15(f, w[0], w[1])).collect();
    let upper = breaks.last().copied().unwrap_or(0.0);
    let summarize = |panels: &mut Vec<Panel>, roundoff_limited: bool| {
        panels.sort_by(|p, q| p.a.total_cmp(&q.a));
        let value: CompensatedSum = panels.iter().map(|p| p.value).collect();
        let err: CompensatedSum = panels.iter().map(|p| p.error).collect();
        let abs: CompensatedSum = panels.iter().map(|p| p.abs_value).collect();
        Integral {
            value: value.value(),
            error_estimate: err.value(),
            abs_value: abs.value(),
            panels: panels.len(),
            upper,
            roundoff_limited,
        }
    };
    let mut subdivisions = 0;
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.error).sum();
        let floor: f64 = panels.iter().map(|p| p.roundoff).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(summarize(&mut panels, false));
        }
        if err <= 2.0 * floor {
            return Ok(summarize(&mut panels, true));
        }
        if subdivisions >= max_subdivisions {
            return Err(summarize(&mut panels, false));
        }
        // first index wins ties, keeping the refinement order deterministic
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, be), (i, p)| {
                if p.error > be {
                    (i, p.error)
                } else {
                    (bi, be)
                }
            });
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if !(mid > p.a && mid < p.b) {
            // panel cannot be split further in floating point
            return Err(summarize(
                &mut {
                    panels.push(p);
                    panels
                },
                false,
            ));
        }
        panels.push(gk15(f, p.a, mid));
        panels.push(gk15(f, mid, p.b));
        subdivisions += 1;
    }
}

/// Upper limit for a Gaussian-damped integrand g(lambda) e^{-lambda^2 t/2}.
///
/// The scale S of the integral is estimated from |g| on a probe grid, and the
/// limit is where the damping has fallen to abs_tol/S, stretched by
/// `cutoff_factor`.
pub fn lambda_cutoff<F: Fn(f64) -> f64>(g: &F, t: f64, cfg: &LambdaIntegralConfig) -> f64 {
    let base = (2.0 * (1.0 / cfg.abs_tol).ln() / t).sqrt();
    let probes = 64;
    let peak = (1..=probes)
        .map(|k| {
            let lam = base * k as f64 / probes as f64;
            g(lam).abs()
        })
        .fold(0.0f64, |m, v| if v.is_finite() { m.max(v) } else { m });
    let scale = peak / t.sqrt();
    let ratio = (scale / cfg.abs_tol).max(std::f64::consts::E);
    cfg.cutoff_factor * (2.0 * ratio.ln() / t).sqrt()
}

/// Integral of g(lambda) e^{-lambda^2 t / 2} over [0, infinity).
pub fn integrate_lambda<F: Fn(f64) -> f64>(g: F, t: f64, cfg: &LambdaIntegralConfig) -> Result<f64> {
    integrate_lambda_detailed(&g, t, cfg, None).map(|r| r.value)
}

/// Like [`integrate_lambda`] with an optional oscillation half-period of g,
/// used to cap the initial panel width.
pub fn integrate_lambda_detailed<F: Fn(f64) -> f64>(
    g: &F,
    t: f64,
    cfg: &LambdaIntegralConfig,
    half_period: Option<f64>,
) -> Result<Integral> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("lambda integral needs t > 0, got {t}")));
    }
    cfg.validate()?;
    let upper = lambda_cutoff(g, t, cfg);
    let mut n = 16usize;
    if let Some(hp) = half_period.filter(|h| *h > 0.0 && h.is_finite()) {
        n = n.max((upper / hp).ceil() as usize);
    }
    let breaks: Vec<f64> = (0..=n).map(|k| upper * k as f64 / n as f64).collect();
    let h = |lam: f64| g(lam) * (-0.5 * lam * lam * t).exp();
    adaptive_gk15(&h, &breaks, cfg.rel_tol, cfg.abs_tol, cfg.max_subdivisions).map_err(|r| {
        Error::NonConvergence {
            t,
            error_estimate: r.error_estimate,
        }
    })
}

/// Integral of f over a finite interval [a, b].
pub fn integrate_interval<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Integral> {
    let n = 8;
    let breaks: Vec<f64> = (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect();
    adaptive_gk15(&f, &breaks, rel_tol, abs_tol, 4000).map_err(|r| Error::NonConvergence {
        t: f64::NAN,
        error_estimate: r.error_estimate,
    })
}

/// Gauss–Legendre nodes and weights on [-1, 1], by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 1..n {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n, p0 = P_{n-1}
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Precomputed surface rule for a sphere of radius r centred at the origin.
///
/// The polar axis is `axis` (unit vector); any axis gives the same exactness,
/// aligning it with the integrand's symmetry axis just makes the rule
/// converge faster.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    pub fn new(r: f64, cfg: &SphereQuadratureConfig) -> Result<Self> {
        Self::with_axis(r, cfg, [0.0, 0.0, 1.0])
    }

    pub fn with_axis(r: f64, cfg: &SphereQuadratureConfig, axis: [f64; 3]) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("sphere radius must be positive, got {r}")));
        }
        cfg.validate()?;
        let (e1, e2, e3) = orthonormal_frame(axis)?;
        let (nodes, gw) = gauss_legendre(cfg.polar_order);
        let nphi = cfg.azimuthal_order;
        let dphi = 2.0 * PI / nphi as f64;
        let mut points = Vec::with_capacity(nodes.len() * nphi);
        let mut weights = Vec::with_capacity(nodes.len() * nphi);
        for (u, w) in nodes.iter().zip(&gw) {
            let s = (1.0 - u * u).max(0.0).sqrt();
            for k in 0..nphi {
                let (sp, cp) = (k as f64 * dphi).sin_cos();
                let p = [
                    r * (s * cp * e1[0] + s * sp * e2[0] + u * e3[0]),
                    r * (s * cp * e1[1] + s * sp * e2[1] + u * e3[1]),
                    r * (s * cp * e1[2] + s * sp * e2[2] + u * e3[2]),
                ];
                points.push(p);
                weights.push(w * dphi * r * r);
            }
        }
        Ok(Self { points, weights })
    }

    pub fn integrate<F: Fn([f64; 3]) -> f64>(&self, f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(*p))
            .collect::<CompensatedSum>()
            .value()
    }
}

fn orthonormal_frame(axis: [f64; 3]) -> Result<([f64; 3], [f64; 3], [f64; 3])> {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if !(n > 0.0) {
        return Err(Error::Domain("sphere rule axis must be non-zero".into()));
    }
    let e3 = [axis[0] / n, axis[1] / n, axis[2] / n];
    let helper = if e3[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = helper[0] * e3[0] + helper[1] * e3[1] + helper[2] * e3[2];
    let mut e1 = [helper[0] - d * e3[0], helper[1] - d * e3[1], helper[2] - d * e3[2]];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1 = [e1[0] / n1, e1[1] / n1, e1[2] / n1];
    let e2 = [
        e3[1] * e1[2] - e3[2] * e1[1],
        e3[2] * e1[0] - e3[0] * e1[2],
        e3[0] * e1[1] - e3[1] * e1[0],
    ];
    Ok((e1, e2, e3))
}

/// Surface integral of f over the sphere |y| = r.
pub fn integrate_sphere<F: Fn([f64; 3]) -> f64>(f: F, r: f64, cfg: &SphereQuadratureConfig) -> Result<f64> {
    Ok(SphereRule::new(r, cfg)?.integrate(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_moments() {
        let cfg = LambdaIntegralConfig::default();
        let v = integrate_lambda(|l| l, 2.0, &cfg).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let v = integrate_lambda(|l| l.powi(3), 1.0, &cfg).unwrap();
        assert!((v - 2.0).abs() < 1e-11);
    }

    #[test]
    fn lambda_oscillatory_against_dense_simpson() {
        let cfg = LambdaIntegralConfig::default();
        let t = 0.5;
        let g = |l: f64| l * (10.0 * l).cos();
        let got = integrate_lambda(g, t, &cfg).unwrap();
        // composite Simpson, 10^6 intervals on [0, 20]; the tail beyond 20 is e^{-100}
        let n = 1_000_000;
        let b = 20.0;
        let h = b / n as f64;
        let f = |l: f64| g(l) * (-0.5 * l * l * t).exp();
        let mut s = CompensatedSum::default();
        s.add(f(0.0) + f(b));
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s.add(w * f(k as f64 * h));
        }
        let oracle = s.value() * h / 3.0;
        assert!(((got - oracle) / oracle).abs() < 1e-8, "got {got} oracle {oracle}");
    }

    #[test]
    fn lambda_linearity() {
        let cfg = LambdaIntegralConfig::default();
        let f = |l: f64| l * (-0.3 * l).exp();
        let g = |l: f64| (l * 1.7).sin() * l;
        let t = 0.7;
        let (a, b) = (2.5, -0.75);
        let lhs = integrate_lambda(|l| a * f(l) + b * g(l), t, &cfg).unwrap();
        let rhs = a * integrate_lambda(f, t, &cfg).unwrap() + b * integrate_lambda(g, t, &cfg).unwrap();
        assert!(((lhs - rhs) / rhs).abs() < 1e-10);
    }

    #[test]
    fn lambda_rejects_nonpositive_time() {
        let cfg = LambdaIntegralConfig::default();
        assert!(matches!(integrate_lambda(|l| l, 0.0, &cfg), Err(Error::Domain(_))));
        assert!(integrate_lambda(|l| l, -1.0, &cfg).is_err());
    }

    #[test]
    fn lambda_reports_nonconvergence() {
        let cfg = LambdaIntegralConfig {
            max_subdivisions: 1,
            rel_tol: 1e-15,
            abs_tol: 1e-300,
            ..Default::default()
        };
        let r = integrate_lambda(|l| (50.0 * l * l).sin() * l, 1e-3, &cfg);
        assert!(matches!(r, Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m18: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((m18 - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_area_and_odd_moment() {
        let cfg = SphereQuadratureConfig::default();
        let area = integrate_sphere(|_| 1.0, 10.0, &cfg).unwrap();
        assert!((area - 400.0 * PI).abs() < 1e-9);
        let z = integrate_sphere(|p| p[2], 10.0, &cfg).unwrap();
        assert!(z.abs() < 1e-9);
        assert!(integrate_sphere(|_| 1.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn sphere_harmonics_vanish() {
        let cfg = SphereQuadratureConfig::default();
        let r = 3.0;
        let area = 4.0 * PI * r * r;
        let fs: Vec<Box<dyn Fn([f64; 3]) -> f64>> = vec![
            Box::new(|p| p[0] * p[1]),
            Box::new(|p| 3.0 * p[2] * p[2] - r * r),
            Box::new(|p| p[0] * (5.0 * p[2] * p[2] - r * r)),
            Box::new(|p| p[0].powi(4) - 6.0 * p[0] * p[0] * p[1] * p[1] + p[1].powi(4)),
        ];
        for f in &fs {
            let max = SphereRule::new(r, &cfg).unwrap().points.iter().map(|p| f(*p).abs()).fold(0.0, f64::max);
            let v = integrate_sphere(f, r, &cfg).unwrap();
            assert!(v.abs() < 1e-9 * area * max);
        }
    }

    #[test]
    fn tilted_axis_rule_has_same_area() {
        let cfg = SphereQuadratureConfig::default();
        let rule = SphereRule::with_axis(2.0, &cfg, [1.0, -2.0, 0.5]).unwrap();
        assert!((rule.integrate(|_| 1.0) - 16.0 * PI).abs() < 1e-10);
        for p in &rule.points {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((n - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s: CompensatedSum = [1.0, 1e-16, -1.0].into_iter().collect();
        assert_eq!(s.value(), 1e-16);
    }
}
