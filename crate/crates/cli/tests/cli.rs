use std::path::Path;
use std::process::{Command, Output};

use driftcir::channel::{cir, SeriesConfig};
use driftcir::geometry::{ChannelGeometry, DriftSpec};
use tempfile::TempDir;

fn driftcir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftcir"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let mut all = args.to_vec();
    all.extend(["--out", dir.to_str().unwrap()]);
    driftcir(&all)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn csv(dir: &Path, name: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = read(dir, name);
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

#[test]
fn cir_writes_exact_values() {
    let dir = TempDir::new().unwrap();
    let o = run_in(
        dir.path(),
        &["cir", "--speed-ums", "5", "--psi-deg", "90", "--grid", "log", "--points", "40", "--plot"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv(dir.path(), "cir.csv");
    assert_eq!(header, ["t_s", "f_per_s", "scaled_count"]);
    assert_eq!(rows.len(), 40);
    let g = ChannelGeometry::reference();
    let d = DriftSpec::from_speed_angle(&g, 5.0, 90f64.to_radians()).unwrap();
    for row in rows.iter().step_by(7) {
        let f = cir(&g, &d, row[0], &SeriesConfig::default()).unwrap();
        assert_eq!(row[1], f, "t = {}", row[0]);
        assert_eq!(row[2], 1e6 * f * 5e-5);
    }
    let meta = json(dir.path(), "cir.json");
    assert_eq!(meta["metadata"]["tool"], "driftcir");
    assert_eq!(meta["payload"]["provenance"], "analytic");
    assert!(meta["metadata"]["timestamp_unix_s"].is_null());
    assert_eq!(meta["config"]["r_um"], 10.0);
    assert_eq!(meta["config"]["d_um2s"], 80.0);
    assert!(read(dir.path(), "cir_plot.py").contains("cir.csv"));
}

#[test]
fn zero_speed_uses_the_closed_form() {
    let dir = TempDir::new().unwrap();
    let o = run_in(dir.path(), &["cir", "--speed-ums", "0", "--t-max-s", "0.5", "--dt-bin-s", "0.001"]);
    assert_eq!(code(&o), 0);
    let meta = json(dir.path(), "cir.json");
    assert_eq!(meta["payload"]["provenance"], "closed-form");
    assert!(meta["metadata"]["notes"][0].as_str().unwrap().contains("closed-form"));
    let (_, rows) = csv(dir.path(), "cir.csv");
    assert_eq!(rows.len(), 500);
    assert_eq!(rows[0][0], 0.0005);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let cases: &[(&[&str], &[&str])] = &[
        (&["cir", "--speed-ums", "10", "--psi-deg", "180", "--t-max-s", "0.5", "--dt-bin-s", "0.0005"], &["cir.csv", "cir.json"]),
        (
            &["mc", "--speed-ums", "5", "--psi-deg", "45", "--ntx", "3000", "--seed", "4", "--hits", "--mode", "girsanov"],
            &["mc_histogram.csv", "hits.csv", "mc.json"],
        ),
        (&["sweep", "--values", "2,6", "--psis", "0,180"], &["sweep_speed.csv", "sweep_speed.json"]),
        (&["peaks", "--speed-ums", "3", "--psi-deg", "120"], &["peaks.csv", "peaks.json"]),
        (
            &["compare", "--speed-ums", "5", "--psi-deg", "0", "--ntx", "2000", "--null", "--dt-bin-s", "0.001"],
            &["compare.csv", "compare.json"],
        ),
    ];
    for (args, files) in cases {
        let a = TempDir::new().unwrap();
        let b = TempDir::new().unwrap();
        let mut one = args.to_vec();
        one.extend(["--threads", "1"]);
        let mut four = args.to_vec();
        four.extend(["--threads", "4"]);
        assert_eq!(code(&run_in(a.path(), &one)), 0, "{args:?}");
        assert_eq!(code(&run_in(b.path(), &four)), 0, "{args:?}");
        for f in *files {
            assert_eq!(read(a.path(), f), read(b.path(), f), "{args:?}: {f}");
        }
    }
}

#[test]
fn timestamp_is_opt_in() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run_in(dir.path(), &["peaks", "--timestamp"])), 0);
    assert!(json(dir.path(), "peaks.json")["metadata"]["timestamp_unix_s"].as_u64().unwrap() > 0);
}

#[test]
fn config_file_matches_flags_and_flags_override_it() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# Tx-Rx setup\nspeed_ums = 10\npsi-deg = 0\nr_um = 8\n").unwrap();
    let from_file = dir.path().join("file");
    let from_flags = dir.path().join("flags");
    let overridden = dir.path().join("over");
    assert_eq!(code(&run_in(&from_file, &["peaks", "--config", cfg.to_str().unwrap()])), 0);
    assert_eq!(
        code(&run_in(&from_flags, &["peaks", "--speed-ums", "10", "--psi-deg", "0", "--r-um", "8"])),
        0
    );
    assert_eq!(read(&from_file, "peaks.json"), read(&from_flags, "peaks.json"));
    assert_eq!(
        code(&run_in(&overridden, &["peaks", "--config", cfg.to_str().unwrap(), "--psi-deg", "180"])),
        0
    );
    let a = json(&from_file, "peaks.json");
    let b = json(&overridden, "peaks.json");
    assert_ne!(a["metadata"]["config_hash"], b["metadata"]["config_hash"]);
    assert!(b["payload"]["f_peak"].as_f64().unwrap() > a["payload"]["f_peak"].as_f64().unwrap());

    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(code(&run_in(&from_file, &["peaks", "--config", cfg.to_str().unwrap()])), 2);
    std::fs::write(&cfg, "just words\n").unwrap();
    assert_eq!(code(&run_in(&from_file, &["peaks", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    // configuration errors
    for args in [
        &["cir", "--r-um", "25"][..],
        &["cir", "--speed-ums", "1", "--v-ums", "0,0,1"],
        &["mc", "--dt-bin-s", "0.00003"],
        &["cir", "--no-such-flag"],
        &["sweep", "--axis", "radius", "--values", "4,20"],
        &["sweep", "--values", "3,2"],
    ] {
        assert_eq!(code(&run_in(dir.path(), args)), 2, "{args:?}");
    }
    // numerical: peak at the window edge
    let o = run_in(dir.path(), &["peaks", "--t-lo-s", "0.3"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("edge"));
    // numerical: a series cut far too short for the drift
    let o = run_in(dir.path(), &["cir", "--speed-ums", "40", "--m-order", "3", "--grid", "log", "--t-lo-s", "0.01", "--points", "5"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("index 0"));
}

#[test]
fn compare_accepts_the_right_curve_and_rejects_the_wrong_one() {
    let dir = TempDir::new().unwrap();
    let base = ["compare", "--speed-ums", "10", "--psi-deg", "180", "--ntx", "20000", "--seed", "8"];
    let o = run_in(&dir.path().join("ok"), &base);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(&dir.path().join("ok"), "compare.json");
    assert_eq!(report["payload"]["passed"], true);
    assert!(report["payload"]["p_value"].as_f64().unwrap() >= 0.01);

    let mut wrong = base.to_vec();
    wrong.extend(["--curve-psi-deg", "0"]);
    let o = run_in(&dir.path().join("bad"), &wrong);
    assert_eq!(code(&o), 1);
    assert_eq!(json(&dir.path().join("bad"), "compare.json")["payload"]["passed"], false);
    let (header, rows) = csv(&dir.path().join("bad"), "compare.csv");
    assert_eq!(header, ["t_s", "observed", "expected", "z"]);
    assert_eq!(rows.len(), 40_000);
}

#[test]
fn null_sample_passes() {
    let dir = TempDir::new().unwrap();
    let o = run_in(dir.path(), &["compare", "--speed-ums", "5", "--psi-deg", "90", "--ntx", "100000", "--null", "--seed", "2"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn mc_no_drift_capture_and_hits() {
    let dir = TempDir::new().unwrap();
    let o = run_in(dir.path(), &["mc", "--speed-ums", "0", "--ntx", "20000", "--seed", "5", "--hits"]);
    assert_eq!(code(&o), 0);
    let meta = json(dir.path(), "mc.json");
    let frac = meta["payload"]["absorbed_fraction"].as_f64().unwrap();
    let se = meta["payload"]["absorbed_fraction_se"].as_f64().unwrap();
    // r/|x0| erfc((|x0| - r) / sqrt(4 D T)) at T = 2 s
    let exact = 0.5 * statrs::function::erf::erfc(10.0 / (4.0 * 80.0 * 2.0f64).sqrt());
    assert!((frac - exact).abs() < 3.0 * se, "{frac} vs {exact}");

    let (header, hits) = csv(dir.path(), "hits.csv");
    assert_eq!(header, ["T_s", "y_x_um", "y_y_um", "y_z_um", "weight"]);
    assert_eq!(hits.len() as u64, meta["payload"]["n_absorbed"].as_u64().unwrap());
    for h in &hits {
        let r = (h[1] * h[1] + h[2] * h[2] + h[3] * h[3]).sqrt();
        assert!((r - 10.0).abs() < 1e-8);
        assert!(h[0] > 0.0 && h[0] <= 2.0);
        assert_eq!(h[4], 1.0);
    }
    let (_, bins) = csv(dir.path(), "mc_histogram.csv");
    assert_eq!(bins.len(), 40_000);
    assert_eq!(bins.iter().map(|b| b[2]).sum::<f64>(), hits.len() as f64);
}

#[test]
fn mc_girsanov_mode_weights_hits() {
    let dir = TempDir::new().unwrap();
    let o = run_in(dir.path(), &["mc", "--speed-ums", "10", "--psi-deg", "180", "--mode", "girsanov", "--ntx", "5000", "--hits"]);
    assert_eq!(code(&o), 0);
    let meta = json(dir.path(), "mc.json");
    assert_eq!(meta["payload"]["mode"], "girsanov-reweight");
    assert_eq!(meta["config"]["mode"], "girsanov-reweight");
    let (_, hits) = csv(dir.path(), "hits.csv");
    assert!(hits.iter().any(|h| h[4] != 1.0));
    assert!(hits.iter().all(|h| h[4] > 0.0));
}

#[test]
fn validate_reports_each_check() {
    let dir = TempDir::new().unwrap();
    let o = run_in(dir.path(), &["validate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let v = json(dir.path(), "validate.json");
    let checks = v["payload"]["checks"].as_array().unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["appendix", "lemma1", "marginalization", "limit"]);
    assert!(checks.iter().all(|c| c["passed"] == true));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("PASS")).count(), 4);

    let o = run_in(dir.path(), &["validate", "--lemma1"]);
    assert_eq!(code(&o), 0);
    let v = json(dir.path(), "validate.json");
    assert_eq!(v["payload"]["checks"].as_array().unwrap().len(), 1);
    assert_eq!(v["payload"]["checks"][0]["name"], "lemma1");
    assert_eq!(v["payload"]["checks"][0]["cases"], 165);
}

#[test]
fn sweep_tables() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run_in(dir.path(), &["sweep", "--plot"])), 0);
    let (header, rows) = csv(dir.path(), "sweep_speed.csv");
    assert_eq!(header, ["axis_value", "psi_deg", "t_peak_s", "f_peak_per_s", "peak_count_per_bin"]);
    assert_eq!(rows.len(), 30);
    assert_eq!((rows[0][0], rows[0][1]), (1.0, 0.0));
    assert_eq!((rows[29][0], rows[29][1]), (10.0, 180.0));
    assert!(read(dir.path(), "sweep_speed_plot.py").contains("sweep_speed.csv"));

    assert_eq!(code(&run_in(dir.path(), &["sweep", "--axis", "radius"])), 0);
    let (_, rows) = csv(dir.path(), "sweep_radius.csv");
    assert_eq!(rows.len(), 21);
    let meta = json(dir.path(), "sweep_radius.json");
    assert_eq!(meta["config"]["speed_ums"], 10.0);
    assert_eq!(meta["payload"]["axis"], "radius");

    // a one-value sweep is find_peak
    assert_eq!(code(&run_in(dir.path(), &["sweep", "--values", "4", "--psis", "90"])), 0);
    assert_eq!(code(&run_in(dir.path(), &["peaks", "--speed-ums", "4", "--psi-deg", "90"])), 0);
    let (_, sweep) = csv(dir.path(), "sweep_speed.csv");
    let (_, peak) = csv(dir.path(), "peaks.csv");
    assert_eq!(sweep[0][2..], peak[0][..3]);
}
