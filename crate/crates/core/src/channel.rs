//! Analytical first-hitting statistics of the drifted point-to-sphere channel.
//!
//! Every evaluator here is built from the same per-mode time kernel
//!
//! ```text
//! G_m(t) = int_0^inf lambda R_m(|x0|/r, lambda r / sigma) e^{-lambda^2 t / 2} dlambda
//! ```
//!
//! with R_m the normalized Bessel cross product from [`crate::specfun`]:
//!
//! * the drift-free joint density of hitting time and location is a Legendre
//!   series in cos(x0, y) with coefficients proportional to (m + 1/2) G_m(t);
//! * the drifted joint density multiplies it by the Girsanov drift factor;
//! * the drifted CIR integrates the latter over the sphere, which the
//!   surface identity turns into a series weighted by I_{m+1/2}(|v| r / sigma^2).
//!
//! G_m(t) is negative on the physical range, so the leading minus of the
//! series makes the CIR positive.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cos_angle, dot, norm, ChannelGeometry, DriftSpec, SurfacePoint};
use num_complex::Complex64;

use crate::quadrature::{
    integrate_interval, integrate_lambda_detailed, CompensatedSum, Integral, LambdaIntegralConfig,
    SphereQuadratureConfig, SphereRule,
};
use crate::specfun::{
    cross_product_ratio, legendre_series, mod_sph_bessel_i, mod_sph_bessel_i_scaled, HankelPolynomial,
};

/// Drift speeds below this (um/s) are routed to the zero-drift closed form.
pub const ZERO_DRIFT_SPEED: f64 = 1e-9;

/// Negative values down to this fraction of the running peak are clamped to zero.
pub const NEGATIVE_CLAMP_REL: f64 = 1e-12;

/// The saddle-path integrand is cut where e^{-s^2 t / 2} reaches e^{-50}
/// (before the cutoff factor).
const SADDLE_TAIL_EXPONENT: f64 = 50.0;

/// When the exponentially scaled i_m is used in the drift series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BesselScaling {
    /// Scale when Pe |x0| / r > 500.
    Auto,
    On,
    Off,
}

/// Truncation and tolerance policy for the mode series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    /// Hard cap M on the Legendre order.
    pub max_order: usize,
    pub tail_rel_tol: f64,
    pub lambda: LambdaIntegralConfig,
    pub scaled_bessel: BesselScaling,
    /// Smallest time (s) the series evaluators accept.
    pub t_min: f64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            max_order: 30,
            tail_rel_tol: 1e-8,
            lambda: LambdaIntegralConfig::default(),
            scaled_bessel: BesselScaling::Auto,
            t_min: 1e-4,
        }
    }
}

impl SeriesConfig {
    pub fn with_max_order(mut self, m: usize) -> Self {
        self.max_order = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_order < 1 {
            return Err(Error::Config("max_order must be >= 1".into()));
        }
        if !(self.tail_rel_tol > 0.0) {
            return Err(Error::Config("tail_rel_tol must be positive".into()));
        }
        if !(self.t_min > 0.0) {
            return Err(Error::Config("t_min must be positive".into()));
        }
        self.lambda.validate()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        if t < self.t_min {
            // the lambda integrand no longer decays fast enough to resolve
            return Err(Error::NonConvergence {
                t,
                error_estimate: f64::NAN,
            });
        }
        Ok(())
    }

    fn use_scaling(&self, geom: &ChannelGeometry, drift: &DriftSpec) -> bool {
        match self.scaled_bessel {
            BesselScaling::On => true,
            BesselScaling::Off => false,
            BesselScaling::Auto => drift.peclet(geom) * geom.distance_ratio() > 500.0,
        }
    }
}

/// exp(v.(y - x0)/sigma^2 - |v|^2 t / (2 sigma^2)).
pub fn drift_factor(geom: &ChannelGeometry, drift: &DriftSpec, y: &SurfacePoint, t: f64) -> f64 {
    log_drift_factor(geom, drift, y.y, t).exp()
}

pub(crate) fn log_drift_factor(geom: &ChannelGeometry, drift: &DriftSpec, y: [f64; 3], t: f64) -> f64 {
    let s2 = geom.sigma2();
    let disp = [y[0] - geom.x0[0], y[1] - geom.x0[1], y[2] - geom.x0[2]];
    dot(drift.v, disp) / s2 - dot(drift.v, drift.v) * t / (2.0 * s2)
}

/// Zero-drift CIR (r/|x0|) (|x0| - r) / sqrt(4 pi D t^3) exp(-(|x0| - r)^2 / (4 D t)).
pub fn cir_nodrift_closed(geom: &ChannelGeometry, t: f64) -> f64 {
    if !(t > 0.0) {
        return 0.0;
    }
    let d0 = geom.distance();
    let gap = d0 - geom.r;
    (geom.r / d0) * gap / (4.0 * PI * geom.d * t.powi(3)).sqrt() * (-gap * gap / (4.0 * geom.d * t)).exp()
}

/// Stationary point (|x0| - r)^2 / (6 D) of the zero-drift CIR.
pub fn closed_form_peak_time(geom: &ChannelGeometry) -> f64 {
    let gap = geom.distance() - geom.r;
    gap * gap / (6.0 * geom.d)
}

/// Gaussian exponent (|x0| - r)^2 / (2 sigma^2 t) that [`mode_kernel_scaled`] factors out.
pub fn kernel_log_scale(geom: &ChannelGeometry, t: f64) -> f64 {
    let c = (geom.distance() - geom.r) / geom.sigma();
    -c * c / (2.0 * t)
}

/// G_m(t) exp((|x0| - r)^2 / (2 sigma^2 t)).
///
/// With b = lambda r / sigma, R_m = -sqrt(a) Im[h1_m(ab) / h1_m(b)], and
/// h1_m(ab) / h1_m(b) = e^{i(a-1)b} Q_m(ab) / (a Q_m(b)) extends to the upper
/// half lambda-plane where h1_m has no zeros. Folding the integral onto the
/// whole real line and moving it to Im lambda = (a - 1) r / (sigma t), the
/// saddle of the exponent, turns the oscillating integrand into
///
/// ```text
/// G_m = -e^{-c^2/2t} / sqrt(a) int_0^inf Im[(s + i k) Q_m(ab) / Q_m(b)] e^{-s^2 t/2} ds
/// ```
///
/// with c = (a - 1) r / sigma, k = c / t and lambda = s + i k. Nothing
/// cancels on this path, so the kernel keeps full relative accuracy at the
/// early times where the real-axis form is swamped by roundoff.
pub fn mode_kernel_scaled(geom: &ChannelGeometry, m: usize, t: f64, cfg: &SeriesConfig) -> Result<Integral> {
    cfg.check_time(t)?;
    let a = geom.distance_ratio();
    let rho = geom.r / geom.sigma();
    let kappa = (a - 1.0) * rho / t;
    let q = HankelPolynomial::new(m);
    let f = |s: f64| {
        let lam = Complex64::new(s, kappa);
        (lam * q.ratio(a, rho * lam)).im * (-0.5 * s * s * t).exp()
    };
    let upper = cfg.lambda.cutoff_factor * (2.0 * SADDLE_TAIL_EXPONENT / t).sqrt();
    let mut res = integrate_interval(f, 0.0, upper, cfg.lambda.rel_tol, f64::MIN_POSITIVE).map_err(|e| match e {
        Error::NonConvergence { error_estimate, .. } => Error::NonConvergence { t, error_estimate },
        e => e,
    })?;
    let scale = -1.0 / a.sqrt();
    res.value *= scale;
    res.error_estimate *= scale.abs();
    res.abs_value *= scale.abs();
    res.upper = upper;
    if !res.value.is_finite() {
        return Err(Error::NonConvergence {
            t,
            error_estimate: res.error_estimate,
        });
    }
    Ok(res)
}

/// The time kernel G_m(t) of mode m.
pub fn mode_integral(geom: &ChannelGeometry, m: usize, t: f64, cfg: &SeriesConfig) -> Result<Integral> {
    let mut res = mode_kernel_scaled(geom, m, t, cfg)?;
    let e = kernel_log_scale(geom, t).exp();
    res.value *= e;
    res.error_estimate *= e;
    res.abs_value *= e;
    Ok(res)
}

/// G_m(t) integrated directly along the real lambda axis.
///
/// Independent of the contour form; it loses relative accuracy once
/// e^{-c^2/2t} drops far below the integrand scale (t below ~0.02 s at the
/// reference geometry).
pub fn mode_integral_real_axis(geom: &ChannelGeometry, m: usize, t: f64, cfg: &SeriesConfig) -> Result<Integral> {
    cfg.check_time(t)?;
    let a = geom.distance_ratio();
    let to_b = geom.r / geom.sigma();
    let g = |lam: f64| {
        if lam <= 0.0 {
            return 0.0;
        }
        // a >= 1 and b > 0 are guaranteed by the geometry
        lam * cross_product_ratio(m, a, lam * to_b).unwrap_or(f64::NAN)
    };
    // large-lambda phase of the cross product is (a - 1) lambda r / sigma
    let half_period = PI * geom.sigma() / (geom.distance() - geom.r);
    let res = integrate_lambda_detailed(&g, t, &cfg.lambda, Some(half_period))?;
    if !res.value.is_finite() {
        return Err(Error::NonConvergence {
            t,
            error_estimate: res.error_estimate,
        });
    }
    Ok(res)
}

/// Constant in front of the joint-density series,
/// -1 / (2 pi^2 r^{3/2} |x0|^{1/2}).
///
/// This is the normalization under which the series integrates over the
/// sphere to the zero-drift closed form; it carries units um^-2 so the
/// joint density is in s^-1 um^-2.
pub fn joint_density_prefactor(geom: &ChannelGeometry) -> f64 {
    -1.0 / (2.0 * PI * PI * geom.r.powf(1.5) * geom.distance().sqrt())
}

/// Drift-free joint density of (T, X_T) at a fixed time, as Legendre
/// coefficients in cos angle(x0, y).
#[derive(Debug, Clone)]
pub struct JointDensitySeries {
    pub t: f64,
    /// Coefficient of P_m, including the (m + 1/2) weight and the prefactor.
    pub coefficients: Vec<f64>,
    /// Absolute quadrature error of each coefficient.
    pub coefficient_errors: Vec<f64>,
    tail_rel_tol: f64,
}

/// A pointwise joint-density value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityValue {
    pub value: f64,
    pub clamped: bool,
}

impl JointDensitySeries {
    pub fn new(geom: &ChannelGeometry, t: f64, cfg: &SeriesConfig) -> Result<Self> {
        geom.validate()?;
        cfg.validate()?;
        cfg.check_time(t)?;
        let pre = joint_density_prefactor(geom);
        let mut coefficients = Vec::with_capacity(cfg.max_order + 1);
        let mut coefficient_errors = Vec::with_capacity(cfg.max_order + 1);
        for m in 0..=cfg.max_order {
            let g = mode_integral(geom, m, t, cfg)?;
            let w = pre * (m as f64 + 0.5);
            coefficients.push(w * g.value);
            coefficient_errors.push(w.abs() * g.error_estimate);
        }
        Ok(Self {
            t,
            coefficients,
            coefficient_errors,
            tail_rel_tol: cfg.tail_rel_tol,
        })
    }

    /// sum |c_m|, an upper bound on |density| anywhere on the sphere.
    pub fn scale(&self) -> f64 {
        self.coefficients.iter().map(|c| c.abs()).sum()
    }

    fn partial_sums(&self, cos: f64) -> Result<(f64, f64, f64)> {
        let m_max = self.coefficients.len() - 1;
        let p = legendre_series(m_max, cos)?;
        let mut sum = CompensatedSum::default();
        let mut err = 0.0;
        let mut last = 0.0;
        for (m, (c, e)) in self.coefficients.iter().zip(&self.coefficient_errors).enumerate() {
            last = c * p[m];
            sum.add(last);
            err += e * p[m].abs();
        }
        Ok((sum.value(), err, last))
    }

    /// Truncated series at cos angle(x0, y), without the tail check.
    pub fn truncated(&self, cos: f64) -> Result<f64> {
        Ok(self.partial_sums(cos)?.0)
    }

    /// Series value with the tail check on the last retained term.
    ///
    /// The last term must be below tail_rel_tol times the partial sum; where
    /// the density is negligible against the series scale (the far side at
    /// early times) the tolerance is taken relative to that scale instead.
    pub fn at_cos(&self, cos: f64) -> Result<DensityValue> {
        let (s, err, last) = self.partial_sums(cos)?;
        let last_err = *self.coefficient_errors.last().unwrap_or(&0.0);
        let reference = s.abs().max(NEGATIVE_CLAMP_REL.sqrt() * self.scale());
        if last.abs() > self.tail_rel_tol * reference && last.abs() > last_err {
            return Err(Error::TailNotConverged {
                order: self.coefficients.len() - 1,
                last_term: last,
                partial_sum: s,
            });
        }
        if s < 0.0 {
            let floor = err.max(NEGATIVE_CLAMP_REL * self.coefficients[0].abs());
            if -s <= floor {
                log::debug!("clamped joint density {s:e} at t = {}", self.t);
                return Ok(DensityValue {
                    value: 0.0,
                    clamped: true,
                });
            }
            return Err(Error::NonConvergence {
                t: self.t,
                error_estimate: err,
            });
        }
        Ok(DensityValue {
            value: s,
            clamped: false,
        })
    }

    pub fn at(&self, geom: &ChannelGeometry, y: &SurfacePoint) -> Result<DensityValue> {
        self.at_cos(y.cos_to_source(geom))
    }
}

/// Drift-free joint density f(t, y) in s^-1 um^-2.
pub fn joint_density_nodrift(geom: &ChannelGeometry, t: f64, y: &SurfacePoint, cfg: &SeriesConfig) -> Result<f64> {
    Ok(JointDensitySeries::new(geom, t, cfg)?.at(geom, y)?.value)
}

/// Drifted joint density: drift factor times the drift-free density.
pub fn joint_density_drift(
    geom: &ChannelGeometry,
    drift: &DriftSpec,
    t: f64,
    y: &SurfacePoint,
    cfg: &SeriesConfig,
) -> Result<f64> {
    Ok(drift_factor(geom, drift, y, t) * joint_density_nodrift(geom, t, y, cfg)?)
}

/// CIR by integrating the drifted joint density over the sphere numerically.
///
/// This path never uses the surface identity; it is the reference the
/// closed series is checked against.
pub fn cir_by_marginalization(
    geom: &ChannelGeometry,
    drift: &DriftSpec,
    t: f64,
    cfg: &SeriesConfig,
    sphere: &SphereQuadratureConfig,
) -> Result<f64> {
    let series = JointDensitySeries::new(geom, t, cfg)?;
    marginalize(geom, drift, &series, sphere)
}

/// Sphere integral of drift factor x `series` (the series is used truncated:
/// modes above the rule's exactness do not contribute to the integral).
pub fn marginalize(
    geom: &ChannelGeometry,
    drift: &DriftSpec,
    series: &JointDensitySeries,
    sphere: &SphereQuadratureConfig,
) -> Result<f64> {
    let rule = SphereRule::with_axis(geom.r, sphere, geom.x0)?;
    let d0 = geom.distance();
    let err = std::cell::RefCell::new(None);
    let v = rule.integrate(|y| {
        let cos = (dot(y, geom.x0) / (geom.r * d0)).clamp(-1.0, 1.0);
        match series.truncated(cos) {
            Ok(f) => log_drift_factor(geom, drift, y, series.t).exp() * f,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    });
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Diagnostics of one series evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirEvaluation {
    pub value: f64,
    /// Number of modes summed (m = 0..modes-1).
    pub modes: usize,
    pub clamped: bool,
    /// Absolute uncertainty implied by the lambda-quadrature error estimates.
    pub resolution: f64,
    pub scaled_bessel: bool,
}

/// Drifted CIR from the closed mode series (drift speed must be non-zero).
pub fn cir_drift(geom: &ChannelGeometry, drift: &DriftSpec, t: f64, cfg: &SeriesConfig) -> Result<f64> {
    cir_drift_detailed(geom, drift, t, cfg, 0.0).map(|e| e.value)
}

/// [`cir_drift`] with diagnostics; `peak_scale` is the running peak used for
/// the negative-value clamp.
pub fn cir_drift_detailed(
    geom: &ChannelGeometry,
    drift: &DriftSpec,
    t: f64,
    cfg: &SeriesConfig,
    peak_scale: f64,
) -> Result<CirEvaluation> {
    geom.validate()?;
    cfg.validate()?;
    cfg.check_time(t)?;
    let speed = drift.speed();
    if speed < ZERO_DRIFT_SPEED {
        return Err(Error::Domain(format!(
            "drift speed {speed} is below {ZERO_DRIFT_SPEED}; use the zero-drift closed form"
        )));
    }
    let s2 = geom.sigma2();
    let sigma = geom.sigma();
    let d0 = geom.distance();
    let z = speed * geom.r / s2;
    let scaled = cfg.use_scaling(geom, drift);

    // all exponentials collected in log space
    let mut log_scale =
        -dot(drift.v, geom.x0) / s2 - speed * speed * t / (2.0 * s2) + kernel_log_scale(geom, t);
    if scaled {
        log_scale += z;
    }
    let prefactor = SQRT_2 * sigma / (PI.sqrt() * speed.sqrt() * d0.sqrt());
    let half_order_factor = (2.0 * z / PI).sqrt();
    let p = legendre_series(cfg.max_order, drift.cos_psi(geom))?;

    let mut sum = CompensatedSum::default();
    let mut err = 0.0;
    let mut streak = 0;
    let mut modes = 0;
    let mut converged = false;
    let mut last_bound = f64::INFINITY;
    for (m, &p_m) in p.iter().enumerate().take(cfg.max_order + 1) {
        let i_m = if scaled {
            mod_sph_bessel_i_scaled(m, z)
        } else {
            mod_sph_bessel_i(m, z)
        };
        let weight = (m as f64 + 0.5) * half_order_factor * i_m;
        modes = m + 1;
        let g = mode_kernel_scaled(geom, m, t, cfg)?;
        sum.add(weight * p_m * g.value);
        err += weight * p_m.abs() * g.error_estimate;
        let mut bound = weight * g.value.abs();
        if bound <= weight * g.error_estimate {
            // indistinguishable from zero at the quadrature resolution
            bound = 0.0;
        }
        last_bound = bound;
        if bound <= cfg.tail_rel_tol * sum.value().abs() {
            streak += 1;
        } else {
            streak = 0;
        }
        if streak >= 3 {
            converged = true;
            break;
        }
    }
    let total = sum.value();
    if !converged && last_bound > cfg.tail_rel_tol * total.abs() {
        return Err(Error::TailNotConverged {
            order: cfg.max_order,
            last_term: last_bound,
            partial_sum: total,
        });
    }

    let ln_pref = prefactor.ln() + log_scale;
    let (value, resolution) = if total == 0.0 {
        (0.0, (ln_pref).exp() * err)
    } else {
        let ln_mag = ln_pref + total.abs().ln();
        if ln_mag > f64::MAX.ln() {
            return Err(Error::Overflow { exponent: ln_mag });
        }
        (-total.signum() * ln_mag.exp(), (ln_pref).exp() * err)
    };

    let mut clamped = false;
    let value = if value < 0.0 {
        if -value <= resolution.max(NEGATIVE_CLAMP_REL * peak_scale) {
            log::debug!("clamped CIR {value:e} at t = {t}");
            clamped = true;
            0.0
        } else {
            return Err(Error::NonConvergence {
                t,
                error_estimate: resolution,
            });
        }
    } else {
        value
    };
    Ok(CirEvaluation {
        value,
        modes,
        clamped,
        resolution,
        scaled_bessel: scaled,
    })
}

/// Closed side of the surface identity
///
/// ```text
/// int_{|y|=r} e^{c.y} P_m(cos(x0, y)) dS = 4 pi r^2 i_m(|c| r) P_m(cos(c, x0)),
/// ```
///
/// which is what collapses the sphere integral of the drifted joint density
/// into the closed series (c = v / sigma^2).
pub fn surface_identity_closed(r: f64, c: [f64; 3], x0: [f64; 3], m: usize) -> Result<f64> {
    let cn = norm(c);
    if cn == 0.0 {
        return Ok(if m == 0 { 4.0 * PI * r * r } else { 0.0 });
    }
    let p = legendre_series(m, cos_angle(c, x0))?;
    Ok(4.0 * PI * r * r * mod_sph_bessel_i(m, cn * r) * p[m])
}

/// The same surface integral by product quadrature.
pub fn surface_identity_quadrature(
    r: f64,
    c: [f64; 3],
    x0: [f64; 3],
    m: usize,
    sphere: &SphereQuadratureConfig,
) -> Result<f64> {
    let rule = SphereRule::new(r, sphere)?;
    let d0 = norm(x0);
    let err = std::cell::RefCell::new(None);
    let v = rule.integrate(|y| {
        let cos = (dot(y, x0) / (r * d0)).clamp(-1.0, 1.0);
        match legendre_series(m, cos) {
            Ok(p) => dot(c, y).exp() * p[m],
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    });
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Where a curve's values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    ClosedForm,
    MonteCarlo,
    ReweightedMonteCarlo,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Analytic => "analytic",
            Provenance::ClosedForm => "closed-form",
            Provenance::MonteCarlo => "mc",
            Provenance::ReweightedMonteCarlo => "reweighted-mc",
        }
    }
}

/// CIR at any drift: zero drift goes to the closed form, otherwise the series.
pub fn cir(geom: &ChannelGeometry, drift: &DriftSpec, t: f64, cfg: &SeriesConfig) -> Result<f64> {
    if drift.speed() < ZERO_DRIFT_SPEED {
        geom.validate()?;
        if !(t > 0.0) {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        Ok(cir_nodrift_closed(geom, t))
    } else {
        cir_drift(geom, drift, t, cfg)
    }
}

/// Sampled CIR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirCurve {
    pub times: Vec<f64>,
    /// Density in s^-1.
    pub values: Vec<f64>,
    pub provenance: Provenance,
    /// Points whose small negative ringing was clamped to zero.
    pub clamped: usize,
    /// Points below t_min set to zero because a rigorous bound is negligible.
    pub below_t_min: usize,
}

impl CirCurve {
    /// Expected absorptions per bin, N_tx f(t) dt.
    pub fn scaled_counts(&self, n_tx: f64, dt_bin: f64) -> Vec<f64> {
        self.values.iter().map(|f| n_tx * f * dt_bin).collect()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// CIR on an ascending time grid. Points are evaluated independently; the
/// first failing point is reported with its index.
pub fn cir_curve(geom: &ChannelGeometry, drift: &DriftSpec, t_grid: &[f64], cfg: &SeriesConfig) -> Result<CirCurve> {
    use rayon::prelude::*;

    geom.validate()?;
    cfg.validate()?;
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("time grid must be strictly ascending".into()));
    }
    if drift.speed() < ZERO_DRIFT_SPEED {
        let values = t_grid.iter().map(|&t| cir_nodrift_closed(geom, t)).collect();
        return Ok(CirCurve {
            times: t_grid.to_vec(),
            values,
            provenance: Provenance::ClosedForm,
            clamped: 0,
            below_t_min: 0,
        });
    }
    // the closed-form peak sets the clamp scale for every point, so the
    // result does not depend on evaluation order
    let peak_scale = cir_nodrift_closed(geom, closed_form_peak_time(geom));
    let evals: Vec<Result<Option<CirEvaluation>>> = t_grid
        .par_iter()
        .map(|&t| {
            if t > 0.0 && t < cfg.t_min && early_time_bound(geom, drift, t) <= NEGATIVE_CLAMP_REL * peak_scale {
                return Ok(None);
            }
            cir_drift_detailed(geom, drift, t, cfg, peak_scale).map(Some)
        })
        .collect();
    let mut values = Vec::with_capacity(t_grid.len());
    let mut clamped = 0;
    let mut below_t_min = 0;
    for (i, e) in evals.into_iter().enumerate() {
        match e.map_err(|e| Error::at(i, e))? {
            Some(e) => {
                clamped += e.clamped as usize;
                values.push(e.value);
            }
            None => {
                below_t_min += 1;
                values.push(0.0);
            }
        }
    }
    Ok(CirCurve {
        times: t_grid.to_vec(),
        values,
        provenance: Provenance::Analytic,
        clamped,
        below_t_min,
    })
}

/// Upper bound exp(|v| (|x0| + r) / sigma^2) x zero-drift CIR on the drifted
/// CIR: the drift factor is at most that large anywhere on the sphere.
pub fn early_time_bound(geom: &ChannelGeometry, drift: &DriftSpec, t: f64) -> f64 {
    let lead = drift.speed() * (geom.distance() + geom.r) / geom.sigma2();
    (lead + cir_nodrift_closed(geom, t).ln()).exp()
}

/// `n` log-spaced times on [t_lo, t_hi].
pub fn log_grid(t_lo: f64, t_hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![t_lo];
    }
    let (a, b) = (t_lo.ln(), t_hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// Time-marginal capture probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingProbability {
    pub value: f64,
    /// Integral over [t_min, horizon].
    pub integrated: f64,
    /// Extrapolated mass beyond the horizon.
    pub tail_estimate: f64,
    pub horizon: f64,
}

/// Default integration horizon (s) for [`hitting_probability`].
pub const HITTING_HORIZON: f64 = 200.0;

/// Integral of the CIR over time.
///
/// The CIR is integrated in log-time on [t_min, horizon]; beyond the horizon
/// the density is extrapolated as f(T) (T/t)^{3/2} e^{-beta (t - T)} with
/// beta = |v|^2 / (2 sigma^2), its exact large-t form.
pub fn hitting_probability(
    geom: &ChannelGeometry,
    drift: &DriftSpec,
    cfg: &SeriesConfig,
    horizon: f64,
) -> Result<HittingProbability> {
    geom.validate()?;
    cfg.validate()?;
    if !(horizon > cfg.t_min) {
        return Err(Error::Config("horizon must exceed t_min".into()));
    }
    let failure = std::cell::RefCell::new(None);
    let f = |u: f64| {
        let t = u.exp();
        match cir(geom, drift, t, cfg) {
            Ok(v) => v * t,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    };
    let integral = crate::quadrature::integrate_interval(f, cfg.t_min.ln(), horizon.ln(), 1e-7, 1e-9)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let f_end = cir(geom, drift, horizon, cfg)?;
    let beta = drift.speed().powi(2) / (2.0 * geom.sigma2());
    let tail = f_end * horizon * power_exp_tail(beta * horizon);
    if tail > 1e-3 {
        log::info!("hitting-probability tail beyond {horizon} s is {tail:.3e}");
    }
    Ok(HittingProbability {
        value: (integral.value + tail).clamp(0.0, 1.0),
        integrated: integral.value,
        tail_estimate: tail,
        horizon,
    })
}

/// int_1^inf s^{-3/2} e^{-c (s - 1)} ds = 2 - 2 sqrt(pi c) e^c erfc(sqrt c).
fn power_exp_tail(c: f64) -> f64 {
    if c <= 0.0 {
        return 2.0;
    }
    if c > 100.0 {
        // asymptotic series of sqrt(pi c) e^c erfc(sqrt c): sum (-1)^k (2k-1)!! x^k
        let x = 1.0 / (2.0 * c);
        let (mut term, mut scaled) = (1.0, 1.0);
        for k in 1..=8 {
            term *= -((2 * k - 1) as f64) * x;
            scaled += term;
        }
        return 2.0 - 2.0 * scaled;
    }
    2.0 - 2.0 * (PI * c).sqrt() * c.exp() * statrs::function::erf::erfc(c.sqrt())
}
