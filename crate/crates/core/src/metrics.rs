//! Peak time, peak value and the drift-speed / receiver-radius sweeps built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{cir, log_grid, SeriesConfig};
use crate::error::{Error, Result};
use crate::geometry::{ChannelGeometry, DriftSpec};

/// Search window, scan density and bin scaling for [`find_peak`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakOptions {
    pub t_lo: f64,
    pub t_hi: f64,
    pub coarse_points: usize,
    /// Golden-section stop: bracket width below this fraction of t.
    pub t_rel_tol: f64,
    pub n_tx: f64,
    pub dt_bin: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self {
            t_lo: 1e-3,
            t_hi: 2.0,
            coarse_points: 64,
            t_rel_tol: 1e-6,
            n_tx: 1e6,
            dt_bin: 5e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakMetrics {
    pub t_peak: f64,
    pub f_peak: f64,
    /// N_tx f_peak dt_bin.
    pub peak_count_per_bin: f64,
    /// Final golden-section bracket.
    pub bracket: (f64, f64),
    pub solver_iterations: usize,
}

/// Local maxima of a sampled curve above half its global maximum.
fn prominent_maxima(f: &[f64]) -> Vec<usize> {
    let top = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = f.len();
    (0..n)
        .filter(|&i| {
            let left = i == 0 || f[i] > f[i - 1];
            let right = i + 1 == n || f[i] >= f[i + 1];
            left && right && f[i] > 0.5 * top
        })
        .collect()
}

/// Maximizer of the CIR on a window: a log-spaced scan brackets the maximum,
/// then golden-section search in log t refines it.
pub fn find_peak(geom: &ChannelGeometry, drift: &DriftSpec, cfg: &SeriesConfig, opts: &PeakOptions) -> Result<PeakMetrics> {
    if !(opts.t_lo >= cfg.t_min) || !(opts.t_hi > opts.t_lo) {
        return Err(Error::Config(format!(
            "peak window [{}, {}] must be ascending and start at or after t_min = {}",
            opts.t_lo, opts.t_hi, cfg.t_min
        )));
    }
    if opts.coarse_points < 3 || !(opts.t_rel_tol > 0.0) {
        return Err(Error::Config("peak search needs >= 3 scan points and a positive tolerance".into()));
    }
    let grid = log_grid(opts.t_lo, opts.t_hi, opts.coarse_points);
    let f = grid.iter().map(|&t| cir(geom, drift, t, cfg)).collect::<Result<Vec<f64>>>()?;

    let peaks = prominent_maxima(&f);
    if peaks.len() >= 2 {
        return Err(Error::NotUnimodal {
            t_lo: opts.t_lo,
            t_hi: opts.t_hi,
            peaks: peaks.len(),
        });
    }
    let i = match peaks.first() {
        Some(&i) if i > 0 && i + 1 < grid.len() => i,
        _ => {
            return Err(Error::Window {
                t_lo: opts.t_lo,
                t_hi: opts.t_hi,
            })
        }
    };

    let g = |u: f64| cir(geom, drift, u.exp(), cfg);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (grid[i - 1].ln(), grid[i + 1].ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (g(c)?, g(d)?);
    let mut iterations = 0;
    // in log t the bracket width is the relative width in t
    while b - a > opts.t_rel_tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = g(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = g(d)?;
        }
        iterations += 1;
    }
    let (u, f_peak) = if fc >= fd { (c, fc) } else { (d, fd) };
    Ok(PeakMetrics {
        t_peak: u.exp(),
        f_peak,
        peak_count_per_bin: opts.n_tx * f_peak * opts.dt_bin,
        bracket: (a.exp(), b.exp()),
        solver_iterations: iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Drift speed (um/s).
    Speed,
    /// Receiver radius (um).
    Radius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub psi_deg: f64,
    pub metrics: PeakMetrics,
}

/// Flat CSV record: axis_value, psi_deg, t_peak_s, f_peak_per_s, peak_count_per_bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub axis_value: f64,
    pub psi_deg: f64,
    pub t_peak_s: f64,
    pub f_peak_per_s: f64,
    pub peak_count_per_bin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    /// Ordered by axis value, then by angle as given.
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn records(&self) -> Vec<SweepRecord> {
        self.rows
            .iter()
            .map(|r| SweepRecord {
                axis_value: r.axis_value,
                psi_deg: r.psi_deg,
                t_peak_s: r.metrics.t_peak,
                f_peak_per_s: r.metrics.f_peak,
                peak_count_per_bin: r.metrics.peak_count_per_bin,
            })
            .collect()
    }

    /// Rows at one angle, in axis order.
    pub fn at_angle(&self, psi_deg: f64) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.psi_deg == psi_deg).collect()
    }
}

/// Default angle set: transverse-free extremes and transverse.
pub const DEFAULT_PSIS_DEG: [f64; 3] = [0.0, 90.0, 180.0];

fn check_axis(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config(format!("{what} sweep needs at least one value")));
    }
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config(format!("{what} values must be strictly increasing")));
    }
    Ok(())
}

fn run_rows(
    cells: Vec<(f64, f64, ChannelGeometry, DriftSpec)>,
    cfg: &SeriesConfig,
    opts: &PeakOptions,
) -> Result<Vec<SweepRow>> {
    let results: Vec<Result<SweepRow>> = cells
        .par_iter()
        .map(|(axis_value, psi_deg, g, d)| {
            Ok(SweepRow {
                axis_value: *axis_value,
                psi_deg: *psi_deg,
                metrics: find_peak(g, d, cfg, opts)?,
            })
        })
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::at(i, e)))
        .collect()
}

/// Peak metrics over drift speeds and angles (degrees).
pub fn sweep_velocity(
    geom: &ChannelGeometry,
    speeds: &[f64],
    psis_deg: &[f64],
    cfg: &SeriesConfig,
    opts: &PeakOptions,
) -> Result<SweepTable> {
    geom.validate()?;
    check_axis(speeds, "speed")?;
    if speeds[0] <= 0.0 {
        return Err(Error::Config("sweep speeds must be positive".into()));
    }
    let mut cells = Vec::new();
    for &s in speeds {
        for &p in psis_deg {
            cells.push((s, p, *geom, DriftSpec::from_speed_angle(geom, s, p.to_radians())?));
        }
    }
    Ok(SweepTable {
        axis: SweepAxis::Speed,
        rows: run_rows(cells, cfg, opts)?,
    })
}

/// Peak metrics over receiver radii at a fixed drift speed.
pub fn sweep_radius(
    geom: &ChannelGeometry,
    radii: &[f64],
    speed: f64,
    psis_deg: &[f64],
    cfg: &SeriesConfig,
    opts: &PeakOptions,
) -> Result<SweepTable> {
    check_axis(radii, "radius")?;
    let mut cells = Vec::new();
    for &r in radii {
        let g = geom.with_radius(r)?;
        for &p in psis_deg {
            cells.push((r, p, g, DriftSpec::from_speed_angle(&g, speed, p.to_radians())?));
        }
    }
    Ok(SweepTable {
        axis: SweepAxis::Radius,
        rows: run_rows(cells, cfg, opts)?,
    })
}
