use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use driftcir::channel::{cir_curve, CirCurve, ZERO_DRIFT_SPEED};
use driftcir::metrics::{find_peak, sweep_radius, sweep_velocity, PeakOptions, SweepAxis};
use driftcir::montecarlo::{
    chi_square_compare, sample_from_curve, simulate, simulate_hits, HitHistogram, McConfig, McMode,
};
use driftcir::validation::{self, CheckReport};

use crate::config::{parse_list, CommonArgs, Resolved};
use crate::output::{fmt_f64, out_path, plot_script, sweep_plot_script, write_bundle, write_csv, write_file};
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    /// Centres of the histogram bins on [0, t-max-s]
    Bins,
    /// Log-spaced points on [t-lo-s, t-max-s]
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Direct,
    Girsanov,
}

impl From<Mode> for McMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Direct => McMode::Direct,
            Mode::Girsanov => McMode::GirsanovReweight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Speed,
    Radius,
}

#[derive(Debug, Clone, Args)]
pub struct CirArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "bins")]
    pub grid: Grid,
    /// Number of points of the log grid
    #[arg(long, default_value_t = 400)]
    pub points: usize,
    /// Start of the log grid (s)
    #[arg(long = "t-lo-s", default_value_t = 1e-3)]
    pub t_lo_s: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// direct: simulate with drift; girsanov: simulate without and reweight
    #[arg(long, value_enum, default_value = "direct")]
    pub mode: Mode,
    /// Simulation step (s)
    #[arg(long = "dt-sim-s", default_value_t = 1e-5)]
    pub dt_sim_s: f64,
    /// Disable the within-step crossing correction
    #[arg(long = "no-bridge")]
    pub no_bridge: bool,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Also write every absorption event to hits.csv
    #[arg(long)]
    pub hits: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Significance level of the chi-square test
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// Drift angle of the analytic curve, if different from the simulation
    #[arg(long = "curve-psi-deg")]
    pub curve_psi_deg: Option<f64>,
    /// Sample the histogram from the analytic curve instead of simulating
    #[arg(long)]
    pub null: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// One-dimensional measure-change identity and masses
    #[arg(long)]
    pub appendix: bool,
    /// Surface integral identity against sphere quadrature
    #[arg(long)]
    pub lemma1: bool,
    /// Closed series against surface marginalization
    #[arg(long)]
    pub marginalization: bool,
    /// Vanishing drift against the zero-drift closed form
    #[arg(long)]
    pub limit: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PeakWindow {
    /// Start of the peak search window (s)
    #[arg(long = "t-lo-s", default_value_t = 1e-3)]
    pub t_lo_s: f64,
    /// End of the peak search window (s)
    #[arg(long = "t-hi-s", default_value_t = 2.0)]
    pub t_hi_s: f64,
    /// Points of the coarse scan
    #[arg(long = "scan-points", default_value_t = 64)]
    pub scan_points: usize,
}

impl PeakWindow {
    fn options(&self, common: &CommonArgs) -> PeakOptions {
        PeakOptions {
            t_lo: self.t_lo_s,
            t_hi: self.t_hi_s,
            coarse_points: self.scan_points,
            n_tx: common.ntx as f64,
            dt_bin: common.dt_bin_s,
            ..PeakOptions::default()
        }
    }

    fn record(&self, cfg: &mut Resolved) {
        cfg.set("t_lo_s", json!(self.t_lo_s));
        cfg.set("t_hi_s", json!(self.t_hi_s));
        cfg.set("scan_points", json!(self.scan_points));
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "speed")]
    pub axis: Axis,
    /// Comma-separated axis values [speed: 1,...,10 um/s; radius: 4,6,...,16 um]
    #[arg(long)]
    pub values: Option<String>,
    /// Comma-separated drift angles (degrees)
    #[arg(long, default_value = "0,90,180")]
    pub psis: String,
    #[command(flatten)]
    pub window: PeakWindow,
}

#[derive(Debug, Clone, Args)]
pub struct PeaksArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub window: PeakWindow,
}

fn zero_drift_notes(cfg: &Resolved) -> Vec<String> {
    if cfg.drift.speed() < ZERO_DRIFT_SPEED {
        vec!["zero drift: values from the closed-form CIR".into()]
    } else {
        Vec::new()
    }
}

fn mc_config(common: &CommonArgs, sim: &SimArgs) -> Result<McConfig, Failure> {
    let c = McConfig {
        n_particles: common.ntx,
        dt_sim: sim.dt_sim_s,
        t_max: common.t_max_s,
        dt_bin: common.dt_bin_s,
        seed: common.seed,
        mode: sim.mode.into(),
        intrastep_correction: !sim.no_bridge,
        ..McConfig::default()
    };
    c.validate()?;
    Ok(c)
}

fn record_sim(cfg: &mut Resolved, mc: &McConfig) {
    cfg.set("mode", json!(mc.mode.as_str()));
    cfg.set("dt_sim_s", json!(mc.dt_sim));
    cfg.set("bridge_correction", json!(mc.intrastep_correction));
}

fn bin_centers(common: &CommonArgs) -> Result<Vec<f64>, Failure> {
    let c = McConfig {
        t_max: common.t_max_s,
        dt_bin: common.dt_bin_s,
        dt_sim: common.dt_bin_s,
        ..McConfig::default()
    };
    c.validate()?;
    Ok(HitHistogram::empty(&c, 0).bin_centers())
}

fn curve_rows<'a>(curve: &'a CirCurve, scaled: &'a [f64]) -> impl Iterator<Item = Vec<f64>> + 'a {
    curve
        .times
        .iter()
        .zip(&curve.values)
        .zip(scaled)
        .map(|((&t, &f), &n)| vec![t, f, n])
}

pub fn cir(a: &CirArgs) -> Result<(), Failure> {
    let mut cfg = a.common.resolve()?;
    let grid = match a.grid {
        Grid::Bins => bin_centers(&a.common)?,
        Grid::Log => {
            if !(a.t_lo_s > 0.0 && a.t_lo_s < a.common.t_max_s) || a.points < 2 {
                return Err(Failure::Config("log grid needs 0 < --t-lo-s < --t-max-s and --points >= 2".into()));
            }
            cfg.set("t_lo_s", json!(a.t_lo_s));
            cfg.set("points", json!(a.points));
            driftcir::channel::log_grid(a.t_lo_s, a.common.t_max_s, a.points)
        }
    };
    cfg.set("grid", json!(format!("{:?}", a.grid).to_lowercase()));
    let curve = cir_curve(&cfg.geom, &cfg.drift, &grid, &cfg.series)?;
    let scaled = curve.scaled_counts(a.common.ntx as f64, a.common.dt_bin_s);
    let dir = &a.common.out;
    write_csv(&out_path(dir, "cir.csv"), &["t_s", "f_per_s", "scaled_count"], curve_rows(&curve, &scaled))?;

    let (k_max, f_max) = curve
        .values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &f)| if f > acc.1 { (k, f) } else { acc });
    let payload = json!({
        "provenance": curve.provenance.as_str(),
        "points": curve.len(),
        "clamped": curve.clamped,
        "below_t_min": curve.below_t_min,
        "largest_sample": { "t_s": curve.times[k_max], "f_per_s": f_max },
        "files": ["cir.csv"],
    });
    write_bundle(&out_path(dir, "cir.json"), "cir", &cfg, a.common.timestamp, &zero_drift_notes(&cfg), &payload)?;
    if a.common.plot {
        let script = plot_script(
            "cir.csv",
            "t_s",
            &[("scaled_count", "analytic N f(t) dt")],
            "t (s)",
            "expected absorptions per bin",
            a.grid == Grid::Log,
        );
        write_file(&out_path(dir, "cir_plot.py"), &script)?;
    }
    println!(
        "cir: {} points ({}), max f = {} /s at t = {} s",
        curve.len(),
        curve.provenance.as_str(),
        fmt_f64(f_max),
        fmt_f64(curve.times[k_max])
    );
    Ok(())
}

#[derive(Serialize)]
struct HistogramSummary {
    mode: &'static str,
    n_released: u64,
    n_absorbed: u64,
    n_absorbed_effective: f64,
    absorbed_fraction: f64,
    absorbed_fraction_se: f64,
    bins: usize,
}

fn summary(h: &HitHistogram) -> HistogramSummary {
    HistogramSummary {
        mode: h.mode.as_str(),
        n_released: h.n_released,
        n_absorbed: h.n_absorbed,
        n_absorbed_effective: h.n_absorbed_effective,
        absorbed_fraction: h.absorbed_fraction(),
        absorbed_fraction_se: h.absorbed_fraction_se(),
        bins: h.n_bins(),
    }
}

pub fn mc(a: &McArgs) -> Result<(), Failure> {
    let mut cfg = a.common.resolve()?;
    let mc = mc_config(&a.common, &a.sim)?;
    record_sim(&mut cfg, &mc);
    let dir = &a.common.out;
    let hist = if a.hits {
        let hits = simulate_hits(&cfg.geom, &cfg.drift, &mc)?;
        write_csv(
            &out_path(dir, "hits.csv"),
            &["T_s", "y_x_um", "y_y_um", "y_z_um", "weight"],
            hits.iter().map(|h| vec![h.t, h.y[0], h.y[1], h.y[2], h.weight]),
        )?;
        HitHistogram::from_hits(&mc, mc.n_particles, &hits)
    } else {
        simulate(&cfg.geom, &cfg.drift, &mc)?
    };
    write_csv(
        &out_path(dir, "mc_histogram.csv"),
        &["t_lo_s", "t_hi_s", "weight", "sq_weight"],
        (0..hist.n_bins()).map(|k| vec![hist.bin_edges[k], hist.bin_edges[k + 1], hist.weights[k], hist.sq_weights[k]]),
    )?;
    let s = summary(&hist);
    write_bundle(&out_path(dir, "mc.json"), "mc", &cfg, a.common.timestamp, &[], &s)?;
    if a.common.plot {
        let script = plot_script("mc_histogram.csv", "t_lo_s", &[("weight", "Monte Carlo")], "t (s)", "absorptions per bin", false);
        write_file(&out_path(dir, "mc_plot.py"), &script)?;
    }
    println!(
        "mc ({}): {} released, absorbed fraction {} +- {}",
        s.mode,
        s.n_released,
        fmt_f64(s.absorbed_fraction),
        fmt_f64(s.absorbed_fraction_se)
    );
    Ok(())
}

#[derive(Serialize)]
struct ComparePayload {
    alpha: f64,
    passed: bool,
    chi2: f64,
    dof: usize,
    p_value: f64,
    max_abs_z: f64,
    observed_total: f64,
    expected_total: f64,
    histogram: HistogramSummary,
    curve_psi_deg: Option<f64>,
    null_sample: bool,
}

pub fn compare(a: &CompareArgs) -> Result<(), Failure> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Failure::Config("--alpha must lie in (0, 1)".into()));
    }
    let mut cfg = a.common.resolve()?;
    let mc = mc_config(&a.common, &a.sim)?;
    record_sim(&mut cfg, &mc);
    cfg.set("alpha", json!(a.alpha));
    cfg.set("null", json!(a.null));
    let curve_drift = match a.curve_psi_deg {
        Some(psi) => {
            cfg.set("curve_psi_deg", json!(psi));
            driftcir::geometry::DriftSpec::from_speed_angle(&cfg.geom, cfg.drift.speed(), psi.to_radians())?
        }
        None => cfg.drift,
    };
    let centers = HitHistogram::empty(&mc, 0).bin_centers();
    let curve = cir_curve(&cfg.geom, &curve_drift, &centers, &cfg.series)?;
    let hist = if a.null {
        sample_from_curve(&curve, &mc, a.common.seed)?
    } else {
        simulate(&cfg.geom, &cfg.drift, &mc)?
    };
    let report = chi_square_compare(&hist, &curve)?;
    let passed = report.passes(a.alpha);
    let dir = &a.common.out;
    let expected = curve.scaled_counts(hist.n_released as f64, hist.dt_bin());
    write_csv(
        &out_path(dir, "compare.csv"),
        &["t_s", "observed", "expected", "z"],
        (0..centers.len()).map(|k| vec![centers[k], hist.weights[k], expected[k], report.z_scores[k]]),
    )?;
    let payload = ComparePayload {
        alpha: a.alpha,
        passed,
        chi2: report.chi2,
        dof: report.dof,
        p_value: report.p_value,
        max_abs_z: report.max_abs_z,
        observed_total: report.observed_total,
        expected_total: report.expected_total,
        histogram: summary(&hist),
        curve_psi_deg: a.curve_psi_deg,
        null_sample: a.null,
    };
    write_bundle(&out_path(dir, "compare.json"), "compare", &cfg, a.common.timestamp, &zero_drift_notes(&cfg), &payload)?;
    if a.common.plot {
        let script = plot_script(
            "compare.csv",
            "t_s",
            &[("observed", "Monte Carlo"), ("expected", "analytic")],
            "t (s)",
            "absorptions per bin",
            false,
        );
        write_file(&out_path(dir, "compare_plot.py"), &script)?;
    }
    let line = format!(
        "chi2 = {} on {} dof, p = {} (alpha {})",
        fmt_f64(report.chi2),
        report.dof,
        fmt_f64(report.p_value),
        a.alpha
    );
    if passed {
        println!("compare: PASS {line}");
        Ok(())
    } else {
        println!("compare: FAIL {line}");
        Err(Failure::Validation(format!("histogram rejected: {line}")))
    }
}

pub fn validate(a: &ValidateArgs) -> Result<(), Failure> {
    let mut cfg = a.common.resolve()?;
    let all = !(a.appendix || a.lemma1 || a.marginalization || a.limit);
    let mut selected = Vec::new();
    let mut reports: Vec<CheckReport> = Vec::new();
    if all || a.appendix {
        selected.push("appendix");
        reports.push(validation::appendix(1000, a.common.seed)?);
    }
    if all || a.lemma1 {
        selected.push("lemma1");
        reports.push(validation::lemma1(&cfg.geom)?);
    }
    if all || a.marginalization {
        selected.push("marginalization");
        reports.push(validation::marginalization(&cfg.geom, &cfg.series)?);
    }
    if all || a.limit {
        selected.push("limit");
        reports.push(validation::zero_drift_limit(&cfg.geom, &cfg.series)?);
    }
    cfg.set("checks", json!(selected));
    let passed = reports.iter().all(|r| r.passed);
    let payload = json!({ "passed": passed, "checks": reports });
    write_bundle(&out_path(&a.common.out, "validate.json"), "validate", &cfg, a.common.timestamp, &[], &payload)?;
    for r in &reports {
        println!(
            "{} {}: max error {} (tolerance {}, {} cases) {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            fmt_f64(r.max_error),
            fmt_f64(r.tolerance),
            r.cases,
            r.detail
        );
    }
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        Err(Failure::Validation(format!("failed checks: {}", failed.join(", "))))
    }
}

pub fn sweep(a: &SweepArgs) -> Result<(), Failure> {
    let mut cfg = a.common.resolve()?;
    let psis = parse_list(&a.psis, "--psis")?;
    if a.common.v_ums.is_some() {
        return Err(Failure::Config("sweeps set the drift direction from --psis; --v-ums is not allowed".into()));
    }
    let opts = a.window.options(&a.common);
    a.window.record(&mut cfg);
    cfg.set("axis", json!(format!("{:?}", a.axis).to_lowercase()));
    cfg.set("psis_deg", json!(psis));
    let mut notes = Vec::new();
    let table = match a.axis {
        Axis::Speed => {
            if a.common.speed_ums.is_some() {
                return Err(Failure::Config("a speed sweep takes its speeds from --values".into()));
            }
            let speeds = match &a.values {
                Some(v) => parse_list(v, "--values")?,
                None => (1..=10).map(f64::from).collect(),
            };
            cfg.set("values", json!(speeds));
            sweep_velocity(&cfg.geom, &speeds, &psis, &cfg.series, &opts)?
        }
        Axis::Radius => {
            let radii = match &a.values {
                Some(v) => parse_list(v, "--values")?,
                None => (2..=8).map(|k| 2.0 * k as f64).collect(),
            };
            let speed = a.common.speed_ums.unwrap_or(10.0);
            cfg.set("values", json!(radii));
            cfg.set("speed_ums", json!(speed));
            notes.push("--r-um is replaced by each swept radius".into());
            sweep_radius(&cfg.geom, &radii, speed, &psis, &cfg.series, &opts)?
        }
    };
    let stem = match table.axis {
        SweepAxis::Speed => "sweep_speed",
        SweepAxis::Radius => "sweep_radius",
    };
    let dir = &a.common.out;
    let csv = format!("{stem}.csv");
    write_csv(
        &out_path(dir, &csv),
        &["axis_value", "psi_deg", "t_peak_s", "f_peak_per_s", "peak_count_per_bin"],
        table
            .records()
            .iter()
            .map(|r| vec![r.axis_value, r.psi_deg, r.t_peak_s, r.f_peak_per_s, r.peak_count_per_bin]),
    )?;
    write_bundle(&out_path(dir, &format!("{stem}.json")), "sweep", &cfg, a.common.timestamp, &notes, &table)?;
    if a.common.plot {
        let label = match table.axis {
            SweepAxis::Speed => "|v| (um/s)",
            SweepAxis::Radius => "r (um)",
        };
        write_file(&out_path(dir, &format!("{stem}_plot.py")), &sweep_plot_script(&csv, label))?;
    }
    println!("sweep: {} rows written to {csv}", table.rows.len());
    Ok(())
}

pub fn peaks(a: &PeaksArgs) -> Result<(), Failure> {
    let mut cfg = a.common.resolve()?;
    let opts = a.window.options(&a.common);
    a.window.record(&mut cfg);
    let p = find_peak(&cfg.geom, &cfg.drift, &cfg.series, &opts)?;
    let dir = &a.common.out;
    write_csv(
        &out_path(dir, "peaks.csv"),
        &["t_peak_s", "f_peak_per_s", "peak_count_per_bin", "bracket_lo_s", "bracket_hi_s"],
        [vec![p.t_peak, p.f_peak, p.peak_count_per_bin, p.bracket.0, p.bracket.1]],
    )?;
    write_bundle(&out_path(dir, "peaks.json"), "peaks", &cfg, a.common.timestamp, &zero_drift_notes(&cfg), &p)?;
    println!(
        "peak: t = {} s, f = {} /s, {} per bin ({} iterations)",
        fmt_f64(p.t_peak),
        fmt_f64(p.f_peak),
        fmt_f64(p.peak_count_per_bin),
        p.solver_iterations
    );
    Ok(())
}
