use driftcir::channel::{cir_curve, hitting_probability, SeriesConfig, HITTING_HORIZON};
use driftcir::geometry::{norm, ChannelGeometry, DriftSpec};
use driftcir::montecarlo::*;
use driftcir::Error;
use statrs::function::erf::erfc;

fn geom() -> ChannelGeometry {
    ChannelGeometry::reference()
}

fn drift(speed: f64, psi_deg: f64) -> DriftSpec {
    DriftSpec::from_speed_angle(&geom(), speed, psi_deg.to_radians()).unwrap()
}

fn cfg(n: u64, seed: u64) -> McConfig {
    McConfig {
        n_particles: n,
        seed,
        ..McConfig::default()
    }
}

/// Capture probability before t for zero drift.
fn capture_by(g: &ChannelGeometry, t: f64) -> f64 {
    let gap = g.distance() - g.r;
    g.r / g.distance() * erfc(gap / (4.0 * g.d * t).sqrt())
}

#[test]
fn nodrift_capture_fraction() {
    let g = geom();
    let long = McConfig {
        t_max: 1e6,
        dt_bin: 1e6,
        ..cfg(100_000, 11)
    };
    let h = simulate(&g, &DriftSpec::zero(), &long).unwrap();
    assert!((h.absorbed_fraction() - 0.5).abs() < 3.0 * (0.25f64 / 1e5).sqrt(), "{}", h.absorbed_fraction());

    let h = simulate(&g, &DriftSpec::zero(), &cfg(100_000, 12)).unwrap();
    let exact = capture_by(&g, 2.0);
    assert!((h.absorbed_fraction() - exact).abs() < 3.0 * h.absorbed_fraction_se());
}

#[test]
fn hits_lie_on_the_sphere_inside_the_window() {
    let g = geom();
    let hits = simulate_hits(&g, &drift(10.0, 180.0), &cfg(5_000, 3)).unwrap();
    assert!(!hits.is_empty());
    for h in &hits {
        assert!((norm(h.y) - g.r).abs() < 1e-9 * g.r);
        assert!(h.t > 0.0 && h.t <= 2.0);
        assert_eq!(h.weight, 1.0);
    }
    assert!(hits.windows(2).all(|w| w[0].particle < w[1].particle));
}

#[test]
fn halving_the_step_barely_moves_the_capture_fraction() {
    let g = geom();
    let run = |dt: f64, corr: bool| {
        let c = McConfig {
            dt_sim: dt,
            intrastep_correction: corr,
            ..cfg(100_000, 5)
        };
        simulate(&g, &DriftSpec::zero(), &c).unwrap()
    };
    let coarse = run(1e-5, true);
    let fine = run(5e-6, true);
    let shift = (coarse.absorbed_fraction() - fine.absorbed_fraction()).abs();
    assert!(shift < coarse.absorbed_fraction_se(), "shift {shift}");

    // uncorrected discrete monitoring undercounts; its step-halving shift is
    // bounded by the size of the correction at the default step
    let raw = run(1e-5, false);
    let raw_fine = run(5e-6, false);
    let correction = coarse.absorbed_fraction() - raw.absorbed_fraction();
    assert!(correction > 0.0);
    assert!((raw.absorbed_fraction() - raw_fine.absorbed_fraction()).abs() < correction);
}

#[test]
fn reweighting_matches_direct_simulation() {
    let g = geom();
    let d = drift(5.0, 90.0);
    let direct = simulate(&g, &d, &cfg(100_000, 21)).unwrap();
    let weighted = simulate(
        &g,
        &d,
        &McConfig {
            mode: McMode::GirsanovReweight,
            ..cfg(100_000, 22)
        },
    )
    .unwrap();
    assert!(weighted.weights.iter().all(|&w| w >= 0.0));
    let a = compare_histograms(&direct.rebin(100).unwrap(), &weighted.rebin(100).unwrap(), 20.0).unwrap();
    assert!(a.bins_compared > 50);
    assert!(a.max_abs_z < 4.0, "{}", a.max_abs_z);
}

#[test]
fn reweighted_capture_matches_hitting_probability() {
    let g = geom();
    let series = SeriesConfig::default();
    for psi in [0.0, 180.0] {
        let d = drift(10.0, psi);
        let c = McConfig {
            t_max: 1e6,
            dt_bin: 1e6,
            mode: McMode::GirsanovReweight,
            ..cfg(100_000, 31)
        };
        let h = simulate(&g, &d, &c).unwrap();
        let p = hitting_probability(&g, &d, &series, HITTING_HORIZON).unwrap().value;
        let z = (h.absorbed_fraction() - p) / h.absorbed_fraction_se();
        assert!(z.abs() < 3.0, "psi={psi}: mc {} analytic {p}", h.absorbed_fraction());
    }
}

#[test]
fn direct_capture_is_monotone_in_speed() {
    let g = geom();
    let mean_fraction = |speed: f64, psi: f64| {
        (0..10)
            .map(|s| simulate(&g, &drift(speed, psi), &cfg(4_000, 100 + s)).unwrap().absorbed_fraction())
            .sum::<f64>()
            / 10.0
    };
    let speeds = [0.0, 2.5, 5.0, 7.5, 10.0];
    let away: Vec<f64> = speeds.iter().map(|&v| mean_fraction(v, 0.0)).collect();
    let towards: Vec<f64> = speeds.iter().map(|&v| mean_fraction(v, 180.0)).collect();
    assert!(away.windows(2).all(|w| w[1] <= w[0]), "{away:?}");
    assert!(towards.windows(2).all(|w| w[1] >= w[0]), "{towards:?}");
}

#[test]
fn thread_count_does_not_change_results() {
    let g = geom();
    let c = McConfig {
        mode: McMode::GirsanovReweight,
        ..cfg(20_000, 9)
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate(&g, &drift(5.0, 45.0), &c).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a, b);
    assert_eq!(a, run(1));
}

#[test]
fn direct_histogram_fits_the_series() {
    let g = geom();
    let d = drift(10.0, 180.0);
    let h = simulate(&g, &d, &cfg(100_000, 41)).unwrap();
    let curve = cir_curve(&g, &d, &h.bin_centers(), &SeriesConfig::default()).unwrap();
    let rep = chi_square_compare(&h, &curve).unwrap();
    assert!(rep.passes(0.01), "{} {} {}", rep.chi2, rep.dof, rep.p_value);

    // wrong drift sign in the curve
    let wrong = cir_curve(&g, &drift(10.0, 0.0), &h.bin_centers(), &SeriesConfig::default()).unwrap();
    assert!(chi_square_compare(&h, &wrong).unwrap().p_value < 1e-6);
}

#[test]
fn chi_square_null_rejects_at_the_nominal_rate() {
    let g = geom();
    let c = cfg(100_000, 0);
    let centers = simulate(&g, &DriftSpec::zero(), &McConfig { n_particles: 1, ..c }).unwrap().bin_centers();
    let curve = cir_curve(&g, &drift(5.0, 90.0), &centers, &SeriesConfig::default()).unwrap();
    let trials = 200;
    let mut rejections = 0;
    let mut p_sum = 0.0;
    for seed in 0..trials {
        let h = sample_from_curve(&curve, &c, seed).unwrap();
        let rep = chi_square_compare(&h, &curve).unwrap();
        rejections += (!rep.passes(0.05)) as usize;
        p_sum += rep.p_value;
    }
    // binomial(200, 0.05): mean 10, sd 3.1
    assert!(rejections <= 10 + 3 * 3 + 1, "{rejections} rejections");
    let p_mean = p_sum / trials as f64;
    assert!((p_mean - 0.5).abs() < 3.0 * (1.0f64 / 12.0 / trials as f64).sqrt(), "mean p {p_mean}");
}

#[test]
fn mismatched_grids_are_rejected() {
    let g = geom();
    let c = cfg(1_000, 0);
    let h = simulate(&g, &DriftSpec::zero(), &c).unwrap();
    let curve = cir_curve(&g, &drift(5.0, 0.0), &[0.1, 0.2], &SeriesConfig::default()).unwrap();
    assert!(matches!(chi_square_compare(&h, &curve), Err(Error::GridMismatch(_))));
    let other = simulate(&g, &DriftSpec::zero(), &McConfig { dt_bin: 1e-4, ..c }).unwrap();
    assert!(matches!(compare_histograms(&h, &other, 1.0), Err(Error::GridMismatch(_))));
}
