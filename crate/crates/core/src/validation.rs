//! Self-checks of the analytic machinery against independent references.
//! Each returns a [`CheckReport`] with the worst error it measured.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::channel::{
    cir_drift, cir_nodrift_closed, closed_form_peak_time, hitting_probability, log_grid, marginalize,
    surface_identity_closed, surface_identity_quadrature, JointDensitySeries, SeriesConfig, HITTING_HORIZON,
};
use crate::error::Result;
use crate::geometry::{ChannelGeometry, DriftSpec};
use crate::metrics::{find_peak, PeakOptions};
use crate::onedim::appendix_check;
use crate::quadrature::SphereQuadratureConfig;
use crate::specfun::mod_sph_bessel_i;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    /// Worst measured error, in the units of `tolerance`.
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub detail: String,
}

/// The six drift settings used throughout: |v| in {5, 10}, psi in {0, 90, 180} degrees.
pub const PANEL_DRIFTS: [(f64, f64); 6] = [(5.0, 0.0), (5.0, 90.0), (5.0, 180.0), (10.0, 0.0), (10.0, 90.0), (10.0, 180.0)];

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn drift(geom: &ChannelGeometry, speed: f64, psi_deg: f64) -> Result<DriftSpec> {
    DriftSpec::from_speed_angle(geom, speed, psi_deg.to_radians())
}

/// One-dimensional measure change: pointwise identity, Lévy and IG masses, IG mean.
pub fn appendix(draws: usize, seed: u64) -> Result<CheckReport> {
    let r = appendix_check(draws, seed)?;
    let mass_err = (r.levy_mass - 1.0).abs().max((r.ig_mass - 1.0).abs());
    Ok(CheckReport {
        name: "appendix".into(),
        passed: r.passed(),
        max_error: r.max_identity_rel_err,
        tolerance: 1e-13,
        cases: draws,
        detail: format!(
            "identity rel err {:.3e}; mass err {:.3e} (tol 1e-8); IG mean {} vs {}",
            r.max_identity_rel_err, mass_err, r.ig_first_moment, r.expected_first_moment
        ),
    })
}

/// Surface integral of e^{c.y} P_m against product quadrature, m <= 10,
/// |c| r in {0.1, 0.5, 1, 2, 5}, three directions off the source axis.
///
/// The error is relative to the size of the m-th coefficient 4 pi r^2 i_m(|c|r),
/// or to the roundoff level of the e^{|c|r}-sized integrand where that is larger.
pub fn lemma1(geom: &ChannelGeometry) -> Result<CheckReport> {
    let sph = SphereQuadratureConfig::default();
    let r = geom.r;
    let dirs = [[1.0, 0.0, 0.0], [0.6, 0.0, 0.8], [-0.36, 0.48, -0.8]];
    let tol = 1e-8;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for cr in [0.1, 0.5, 1.0, 2.0, 5.0] {
        for dir in dirs {
            let c = [dir[0] * cr / r, dir[1] * cr / r, dir[2] * cr / r];
            for m in 0..=10 {
                let closed = surface_identity_closed(r, c, geom.x0, m)?;
                let quad = surface_identity_quadrature(r, c, geom.x0, m, &sph)?;
                let area = 4.0 * PI * r * r;
                let scale = (area * mod_sph_bessel_i(m, cr)).max(1e-13 / tol * area * cr.exp());
                worst = worst.max((closed - quad).abs() / scale);
                cases += 1;
            }
        }
    }
    Ok(CheckReport {
        name: "lemma1".into(),
        passed: worst <= tol,
        max_error: worst,
        tolerance: tol,
        cases,
        detail: "m = 0..10, |c|r in {0.1, 0.5, 1, 2, 5}, 3 directions".into(),
    })
}

/// Closed series against the sphere marginalization of the drifted joint
/// density on t in {0.05, 0.2, 1} s and the six panel drifts.
pub fn marginalization(geom: &ChannelGeometry, cfg: &SeriesConfig) -> Result<CheckReport> {
    let sph = SphereQuadratureConfig::default();
    let tol = 1e-4;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for t in [0.05, 0.2, 1.0] {
        let series = JointDensitySeries::new(geom, t, cfg)?;
        for (speed, psi) in PANEL_DRIFTS {
            let d = drift(geom, speed, psi)?;
            worst = worst.max(rel(cir_drift(geom, &d, t, cfg)?, marginalize(geom, &d, &series, &sph)?));
            cases += 1;
        }
    }
    Ok(CheckReport {
        name: "marginalization".into(),
        passed: worst <= tol,
        max_error: worst,
        tolerance: tol,
        cases,
        detail: "t in {0.05, 0.2, 1} s x |v| in {5, 10} x psi in {0, 90, 180}".into(),
    })
}

/// |v| = 1e-3 against the zero-drift closed form on 50 log-spaced times in
/// [0.01, 2] s, plus the closed-form peak, the refined peak and the capture mass.
pub fn zero_drift_limit(geom: &ChannelGeometry, cfg: &SeriesConfig) -> Result<CheckReport> {
    let tol = 1e-4;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for psi in [0.0, 90.0, 180.0] {
        let d = drift(geom, 1e-3, psi)?;
        for t in log_grid(0.01, 2.0, 50) {
            worst = worst.max(rel(cir_drift(geom, &d, t, cfg)?, cir_nodrift_closed(geom, t)));
            cases += 1;
        }
    }
    let t_star = closed_form_peak_time(geom);
    let f_star = cir_nodrift_closed(geom, t_star);
    let found = find_peak(geom, &DriftSpec::zero(), cfg, &PeakOptions::default())?;
    let mass = hitting_probability(geom, &DriftSpec::zero(), cfg, HITTING_HORIZON)?.value;
    let expected_mass = geom.r / geom.distance();
    let mut passed = worst <= tol
        && rel(found.t_peak, t_star) <= 1e-5
        && (mass - expected_mass).abs() <= 2e-3;
    let mut detail = format!(
        "max rel err {worst:.3e}; t* = {t_star:.6} s, found {:.6} s; f(t*) = {f_star:.4} /s; mass {mass:.5}",
        found.t_peak
    );
    if *geom == ChannelGeometry::reference() {
        passed &= (t_star - 0.208333).abs() < 5e-7 && (f_star - 0.3700).abs() < 5e-5 && (mass - 0.5).abs() <= 2e-3;
        detail.push_str(" (reference: 0.208333 s, 0.3700 /s, 0.5)");
    }
    Ok(CheckReport {
        name: "limit".into(),
        passed,
        max_error: worst,
        tolerance: tol,
        cases,
        detail,
    })
}

/// Series truncated at M = 30 against M = 50 for t in [5e-3, 2] s, six panel drifts.
pub fn truncation(geom: &ChannelGeometry, cfg: &SeriesConfig) -> Result<CheckReport> {
    let tol = 1e-6;
    let c30 = cfg.with_max_order(30);
    let c50 = cfg.with_max_order(50);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (speed, psi) in PANEL_DRIFTS {
        let d = drift(geom, speed, psi)?;
        for t in log_grid(5e-3, 2.0, 25) {
            worst = worst.max(rel(cir_drift(geom, &d, t, &c30)?, cir_drift(geom, &d, t, &c50)?));
            cases += 1;
        }
    }
    Ok(CheckReport {
        name: "truncation".into(),
        passed: worst <= tol,
        max_error: worst,
        tolerance: tol,
        cases,
        detail: "25 log-spaced times in [5e-3, 2] s, six drifts".into(),
    })
}
