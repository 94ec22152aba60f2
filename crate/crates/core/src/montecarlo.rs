//! Particle simulation of the drifted channel and its statistical comparison
//! with the analytical CIR.
//!
//! Each particle's Brownian path is a virtual Brownian tree: the increment of
//! every dyadic time interval is fixed by the particle's random stream and the
//! interval's node id, and the walker only splits an interval when its
//! endpoints come close enough to the sphere for a hit to be possible. Leaves
//! have length `dt_sim` and are ordinary Euler–Maruyama steps with the
//! half-space bridge correction. Far from the receiver whole subtrees are
//! crossed in one exact Gaussian step, which is what makes 2 s horizons cheap.
//!
//! Because node noise depends only on (seed, particle, node), halving
//! `dt_sim` adds one tree level and leaves every coarser increment unchanged,
//! and results do not depend on how particles are distributed over threads.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::{log_drift_factor, CirCurve};
use crate::error::{Error, Result};
use crate::geometry::{dot, norm, ChannelGeometry, DriftSpec};

/// Particles per work unit; fixed so the merge order never depends on threads.
const CHUNK: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McMode {
    /// Simulate with the drift and count hits.
    Direct,
    /// Simulate without drift and weight each hit by the drift factor.
    GirsanovReweight,
}

impl McMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            McMode::Direct => "direct",
            McMode::GirsanovReweight => "girsanov-reweight",
        }
    }
}

impl std::str::FromStr for McMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(McMode::Direct),
            "girsanov" | "girsanov-reweight" => Ok(McMode::GirsanovReweight),
            _ => Err(Error::Config(format!("unknown Monte Carlo mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_particles: u64,
    /// Leaf step (s).
    pub dt_sim: f64,
    /// Horizon (s); particles alive at t_max are censored.
    pub t_max: f64,
    /// Histogram bin width (s).
    pub dt_bin: f64,
    pub seed: u64,
    pub mode: McMode,
    pub intrastep_correction: bool,
    /// An interval is split while its half-space hitting bound exceeds this.
    pub refine_tol: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_particles: 1_000_000,
            dt_sim: 1e-5,
            t_max: 2.0,
            dt_bin: 5e-5,
            seed: 0,
            mode: McMode::Direct,
            intrastep_correction: true,
            refine_tol: 1e-12,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::Config("n_particles must be >= 1".into()));
        }
        if !(self.dt_sim > 0.0) || !(self.dt_bin > 0.0) || !(self.t_max > 0.0) {
            return Err(Error::Config("dt_sim, dt_bin and t_max must be positive".into()));
        }
        if self.dt_sim > self.dt_bin {
            return Err(Error::Config(format!(
                "dt_sim = {} must not exceed dt_bin = {}",
                self.dt_sim, self.dt_bin
            )));
        }
        let ratio = self.t_max / self.dt_bin;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "t_max / dt_bin = {ratio} must be an integer"
            )));
        }
        if !(self.refine_tol > 0.0 && self.refine_tol <= 1e-6) {
            return Err(Error::Config("refine_tol must lie in (0, 1e-6]".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        (self.t_max / self.dt_bin).round() as usize
    }
}

/// One absorption event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    /// Hitting time (s).
    pub t: f64,
    /// Hitting location on the sphere (um).
    pub y: [f64; 3],
    /// 1 in direct mode, the drift factor in reweighting mode.
    pub weight: f64,
    /// Index of the particle that produced the hit.
    pub particle: u64,
}

/// Binned hitting times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitHistogram {
    pub bin_edges: Vec<f64>,
    /// Count (direct) or summed weight (reweighting) per bin.
    pub weights: Vec<f64>,
    /// Summed squared weight per bin; the variance estimate of `weights`.
    pub sq_weights: Vec<f64>,
    pub n_released: u64,
    /// Number of absorbed particles inside the window.
    pub n_absorbed: u64,
    /// Summed weight of absorbed particles.
    pub n_absorbed_effective: f64,
    pub mode: McMode,
}

impl HitHistogram {
    pub fn empty(cfg: &McConfig, n_released: u64) -> Self {
        let n = cfg.n_bins();
        Self {
            bin_edges: (0..=n).map(|k| k as f64 * cfg.dt_bin).collect(),
            weights: vec![0.0; n],
            sq_weights: vec![0.0; n],
            n_released,
            n_absorbed: 0,
            n_absorbed_effective: 0.0,
            mode: cfg.mode,
        }
    }

    /// Bins `hits` in the given order.
    pub fn from_hits(cfg: &McConfig, n_released: u64, hits: &[HitRecord]) -> Self {
        let mut h = Self::empty(cfg, n_released);
        for hit in hits {
            h.add(hit.t, hit.weight);
        }
        h
    }

    fn add(&mut self, t: f64, w: f64) {
        let dt = self.dt_bin();
        let k = (t / dt).floor();
        if k < 0.0 || k as usize >= self.weights.len() {
            return;
        }
        let k = k as usize;
        self.weights[k] += w;
        self.sq_weights[k] += w * w;
        self.n_absorbed += 1;
        self.n_absorbed_effective += w;
    }

    pub fn n_bins(&self) -> usize {
        self.weights.len()
    }

    pub fn dt_bin(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Effective absorbed weight over the number released.
    pub fn absorbed_fraction(&self) -> f64 {
        self.n_absorbed_effective / self.n_released as f64
    }

    /// Standard error of the absorbed fraction.
    pub fn absorbed_fraction_se(&self) -> f64 {
        let n = self.n_released as f64;
        match self.mode {
            McMode::Direct => {
                let p = self.absorbed_fraction();
                (p * (1.0 - p) / n).sqrt()
            }
            McMode::GirsanovReweight => {
                let mean = self.n_absorbed_effective / n;
                let second: f64 = self.sq_weights.iter().sum::<f64>() / n;
                ((second - mean * mean).max(0.0) / n).sqrt()
            }
        }
    }

    /// Merge `factor` adjacent bins; the bin count must be divisible.
    pub fn rebin(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_bins().is_multiple_of(factor) {
            return Err(Error::GridMismatch(format!(
                "cannot merge {} bins in groups of {factor}",
                self.n_bins()
            )));
        }
        let sum = |v: &[f64]| v.chunks(factor).map(|c| c.iter().sum()).collect::<Vec<f64>>();
        Ok(Self {
            bin_edges: self.bin_edges.iter().step_by(factor).copied().collect(),
            weights: sum(&self.weights),
            sq_weights: sum(&self.sq_weights),
            ..self.clone()
        })
    }
}

struct Walker {
    r: f64,
    sigma: f64,
    /// Displacement per unit time of the simulated paths.
    v: [f64; 3],
    x0: [f64; 3],
    levels: u32,
    root_len: f64,
    t_max: f64,
    ln_refine: f64,
    bridge: bool,
    base: ChaCha8Rng,
}

/// Three standard normals and one uniform on (0, 1), fixed by the node id.
fn node_noise(rng: &mut ChaCha8Rng, node: u64) -> ([f64; 3], f64) {
    rng.set_word_pos(node as u128 * 16);
    let unit = |x: u64| ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let (u1, u2, u3, u4, u5) = (
        unit(rng.next_u64()),
        unit(rng.next_u64()),
        unit(rng.next_u64()),
        unit(rng.next_u64()),
        unit(rng.next_u64()),
    );
    let r1 = (-2.0 * u1.ln()).sqrt();
    let r2 = (-2.0 * u3.ln()).sqrt();
    let (s1, c1) = (2.0 * PI * u2).sin_cos();
    let c2 = (2.0 * PI * u4).cos();
    ([r1 * c1, r1 * s1, r2 * c2], u5)
}

impl Walker {
    fn new(geom: &ChannelGeometry, drift: &DriftSpec, cfg: &McConfig) -> Self {
        let mut levels = 0;
        while cfg.dt_sim * 2f64.powi(levels as i32) < cfg.t_max * (1.0 - 1e-12) {
            levels += 1;
        }
        let v = match cfg.mode {
            McMode::Direct => drift.v,
            McMode::GirsanovReweight => [0.0; 3],
        };
        Self {
            r: geom.r,
            sigma: geom.sigma(),
            v,
            x0: geom.x0,
            levels,
            root_len: cfg.dt_sim * 2f64.powi(levels as i32),
            t_max: cfg.t_max,
            ln_refine: cfg.refine_tol.ln(),
            bridge: cfg.intrastep_correction,
            base: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }

    /// First hit (time, location) of particle `index` before t_max, if any.
    fn run(&self, index: u64) -> Option<(f64, [f64; 3])> {
        let mut rng = self.base.clone();
        rng.set_stream(index);
        let (z, _) = node_noise(&mut rng, 0);
        let s = self.root_len.sqrt();
        let mut stack: Vec<(u64, u32, f64, [f64; 3])> = Vec::with_capacity(2 * self.levels as usize + 2);
        stack.push((1, 0, 0.0, [s * z[0], s * z[1], s * z[2]]));
        let mut x = self.x0;
        let s2 = self.sigma * self.sigma;

        while let Some((node, level, t0, dw)) = stack.pop() {
            if t0 >= self.t_max {
                return None;
            }
            let h = self.root_len / 2f64.powi(level as i32);
            let end = [
                x[0] + self.v[0] * h + self.sigma * dw[0],
                x[1] + self.v[1] * h + self.sigma * dw[1],
                x[2] + self.v[2] * h + self.sigma * dw[2],
            ];
            let rx = norm(x);
            let d1 = rx - self.r;
            if level < self.levels {
                // the sphere lies inside {y . n <= r} for n = x / |x|
                let d2 = dot(end, x) / rx - self.r;
                let ln_bound = if d2 <= 0.0 { 0.0 } else { -2.0 * d1 * d2 / (s2 * h) };
                if ln_bound > self.ln_refine {
                    let (z, _) = node_noise(&mut rng, node);
                    let q = 0.5 * h.sqrt();
                    let left = [0.5 * dw[0] + q * z[0], 0.5 * dw[1] + q * z[1], 0.5 * dw[2] + q * z[2]];
                    let right = [dw[0] - left[0], dw[1] - left[1], dw[2] - left[2]];
                    stack.push((2 * node + 1, level + 1, t0 + 0.5 * h, right));
                    stack.push((2 * node, level + 1, t0, left));
                    continue;
                }
            }
            let mid = t0 + 0.5 * h;
            let re = norm(end);
            if re <= self.r {
                return (mid < self.t_max).then(|| (mid, self.crossing(x, end)));
            }
            if self.bridge && level == self.levels {
                let p = (-2.0 * d1 * (re - self.r) / (s2 * h)).exp();
                if p > 0.0 {
                    let (_, u) = node_noise(&mut rng, node);
                    if u < p {
                        let m = [0.5 * (x[0] + end[0]), 0.5 * (x[1] + end[1]), 0.5 * (x[2] + end[2])];
                        let k = self.r / norm(m);
                        return (mid < self.t_max).then(|| (mid, [m[0] * k, m[1] * k, m[2] * k]));
                    }
                }
            }
            x = end;
        }
        None
    }

    /// Where the segment a -> b enters the sphere (a outside, b inside).
    fn crossing(&self, a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let qa = dot(d, d);
        let qb = 2.0 * dot(a, d);
        let qc = dot(a, a) - self.r * self.r;
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        let s = ((-qb - disc.sqrt()) / (2.0 * qa)).clamp(0.0, 1.0);
        let p = [a[0] + s * d[0], a[1] + s * d[1], a[2] + s * d[2]];
        let k = self.r / norm(p);
        [p[0] * k, p[1] * k, p[2] * k]
    }
}

/// All hits in particle order.
pub fn simulate_hits(geom: &ChannelGeometry, drift: &DriftSpec, cfg: &McConfig) -> Result<Vec<HitRecord>> {
    geom.validate()?;
    cfg.validate()?;
    let walker = Walker::new(geom, drift, cfg);
    let n_chunks = cfg.n_particles.div_ceil(CHUNK);
    let chunks: Vec<Vec<HitRecord>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(cfg.n_particles);
            (lo..hi)
                .filter_map(|i| {
                    walker.run(i).map(|(t, y)| HitRecord {
                        t,
                        y,
                        weight: match cfg.mode {
                            McMode::Direct => 1.0,
                            McMode::GirsanovReweight => log_drift_factor(geom, drift, y, t).exp(),
                        },
                        particle: i,
                    })
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Simulate and bin.
pub fn simulate(geom: &ChannelGeometry, drift: &DriftSpec, cfg: &McConfig) -> Result<HitHistogram> {
    let hits = simulate_hits(geom, drift, cfg)?;
    Ok(HitHistogram::from_hits(cfg, cfg.n_particles, &hits))
}

/// Histogram drawn exactly from the multinomial law that `curve` implies:
/// n_released trials, bin probabilities f(t_k) dt_bin, remainder unabsorbed.
pub fn sample_from_curve(curve: &CirCurve, cfg: &McConfig, seed: u64) -> Result<HitHistogram> {
    cfg.validate()?;
    let mut hist = HitHistogram::empty(cfg, cfg.n_particles);
    check_grid(&hist, curve)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = hist.dt_bin();
    let mut remaining = cfg.n_particles;
    let mut mass_left = 1.0f64;
    for (k, &f) in curve.values.iter().enumerate() {
        let p = f * dt;
        if remaining == 0 || p <= 0.0 {
            mass_left -= p.max(0.0);
            continue;
        }
        let cond = (p / mass_left).clamp(0.0, 1.0);
        let c = Binomial::new(remaining, cond)
            .map_err(|e| Error::Config(format!("binomial draw: {e}")))?
            .sample(&mut rng);
        hist.weights[k] = c as f64;
        hist.sq_weights[k] = c as f64;
        hist.n_absorbed += c;
        remaining -= c;
        mass_left -= p;
    }
    hist.n_absorbed_effective = hist.n_absorbed as f64;
    Ok(hist)
}

fn check_grid(hist: &HitHistogram, curve: &CirCurve) -> Result<()> {
    if curve.len() != hist.n_bins() {
        return Err(Error::GridMismatch(format!(
            "curve has {} points, histogram {} bins",
            curve.len(),
            hist.n_bins()
        )));
    }
    let dt = hist.dt_bin();
    for (k, (t, c)) in curve.times.iter().zip(hist.bin_centers()).enumerate() {
        if (t - c).abs() > 1e-9 * dt {
            return Err(Error::GridMismatch(format!(
                "curve time {t} at index {k} is not the bin centre {c}"
            )));
        }
    }
    Ok(())
}

/// Histogram-vs-curve goodness of fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// (observed - expected) / sd per original bin (0 where nothing is expected).
    pub z_scores: Vec<f64>,
    /// Pooled groups entering the statistic.
    pub groups: usize,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Largest |z| over the pooled groups.
    pub max_abs_z: f64,
    pub observed_total: f64,
    pub expected_total: f64,
}

impl ComparisonReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Minimum expected count per pooled group.
pub const MIN_EXPECTED: f64 = 5.0;

/// Pearson chi-square of `hist` against N f(t) dt_bin.
///
/// Adjacent bins are pooled, in time order, until each group expects at least
/// [`MIN_EXPECTED`] counts; a short remainder joins the last group. In
/// reweighting mode the variance of a group is its summed squared weight
/// instead of its expectation.
pub fn chi_square_compare(hist: &HitHistogram, curve: &CirCurve) -> Result<ComparisonReport> {
    check_grid(hist, curve)?;
    let n = hist.n_released as f64;
    let dt = hist.dt_bin();
    let expected: Vec<f64> = curve.values.iter().map(|f| n * f * dt).collect();
    let variance = |obs_sq: f64, exp: f64| match hist.mode {
        McMode::Direct => exp,
        McMode::GirsanovReweight => obs_sq.max(f64::MIN_POSITIVE),
    };

    let z_scores = expected
        .iter()
        .zip(&hist.weights)
        .zip(&hist.sq_weights)
        .map(|((&e, &o), &q)| if e > 0.0 { (o - e) / variance(q, e).sqrt() } else { 0.0 })
        .collect();

    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    let (mut o, mut e, mut q) = (0.0, 0.0, 0.0);
    for ((&ek, &wk), &qk) in expected.iter().zip(&hist.weights).zip(&hist.sq_weights) {
        o += wk;
        e += ek;
        q += qk;
        if e >= MIN_EXPECTED {
            groups.push((o, e, q));
            (o, e, q) = (0.0, 0.0, 0.0);
        }
    }
    if e > 0.0 || o > 0.0 {
        match groups.last_mut() {
            Some(g) => {
                g.0 += o;
                g.1 += e;
                g.2 += q;
            }
            None => groups.push((o, e, q)),
        }
    }
    let mut chi2 = 0.0;
    let mut max_abs_z: f64 = 0.0;
    for &(o, e, q) in &groups {
        let var = variance(q, e);
        chi2 += (o - e).powi(2) / var;
        max_abs_z = max_abs_z.max((o - e).abs() / var.sqrt());
    }
    let dof = groups.len();
    let p_value = if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Config(format!("chi-square law: {e}")))?;
        dist.sf(chi2)
    };
    Ok(ComparisonReport {
        z_scores,
        groups: dof,
        chi2,
        dof,
        p_value,
        max_abs_z,
        observed_total: hist.weights.iter().sum(),
        expected_total: expected.iter().sum(),
    })
}

/// Bin-by-bin agreement of two histograms on the same grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramAgreement {
    /// Bins whose mean content reached the threshold.
    pub bins_compared: usize,
    /// Largest |a - b| / sqrt(var_a + var_b) over those bins.
    pub max_abs_z: f64,
    pub z_scores: Vec<f64>,
}

/// Compare bins whose mean content (a + b) / 2 is at least `min_count`.
pub fn compare_histograms(a: &HitHistogram, b: &HitHistogram, min_count: f64) -> Result<HistogramAgreement> {
    if a.bin_edges != b.bin_edges {
        return Err(Error::GridMismatch("histograms have different bin edges".into()));
    }
    let scale_a = 1.0 / a.n_released as f64;
    let scale_b = 1.0 / b.n_released as f64;
    let mut z_scores = Vec::new();
    for k in 0..a.n_bins() {
        let (wa, wb) = (a.weights[k], b.weights[k]);
        if 0.5 * (wa + wb) < min_count {
            continue;
        }
        // compare per released particle so unequal N is allowed
        let diff = wa * scale_a - wb * scale_b;
        let var = a.sq_weights[k] * scale_a * scale_a + b.sq_weights[k] * scale_b * scale_b;
        z_scores.push(diff / var.sqrt());
    }
    Ok(HistogramAgreement {
        bins_compared: z_scores.len(),
        max_abs_z: z_scores.iter().fold(0.0f64, |m, z| m.max(z.abs())),
        z_scores,
    })
}
