//! CSV and JSON writers and the emitted plot scripts.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so parsing
//! a file back gives the exact values that were computed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::Resolved;
use crate::Failure;

/// Shortest decimal that parses back to `x`; scientific outside [1e-4, 1e15).
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Writes a CSV with a header row; every row must match the header width.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), Failure> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    write_file(path, &s)
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

/// Reads back a CSV written by [`write_csv`].
#[cfg(test)]
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Failure::Config(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_owned)
        .collect();
    let rows = lines
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| Failure::Config(format!("{} line {}: bad number '{c}'", path.display(), i + 2)))
                })
                .collect::<Result<Vec<f64>, Failure>>()
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok((header, rows))
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_hash: String,
    /// Present only with --timestamp, so reruns stay byte-identical by default.
    timestamp_unix_s: Option<u64>,
    notes: &'a [String],
}

#[derive(Serialize)]
struct ResultBundle<'a, P: Serialize> {
    metadata: Metadata<'a>,
    config: &'a std::collections::BTreeMap<String, Value>,
    payload: &'a P,
}

pub fn write_bundle<P: Serialize>(
    path: &Path,
    command: &str,
    cfg: &Resolved,
    timestamp: bool,
    notes: &[String],
    payload: &P,
) -> Result<(), Failure> {
    let timestamp_unix_s = timestamp.then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let bundle = ResultBundle {
        metadata: Metadata {
            tool: "driftcir",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: cfg.hash(),
            timestamp_unix_s,
            notes,
        },
        config: &cfg.canonical,
        payload,
    };
    let mut s = serde_json::to_string_pretty(&bundle).map_err(|e| Failure::Io(format!("json: {e}")))?;
    s.push('\n');
    write_file(path, &s)
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// A line plot of columns `y` against column `x` of a CSV next to the script.
pub fn plot_script(csv_name: &str, x: &str, ys: &[(&str, &str)], xlabel: &str, ylabel: &str, logx: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "import csv");
    let _ = writeln!(s, "import os");
    let _ = writeln!(s, "import matplotlib.pyplot as plt");
    let _ = writeln!(s);
    let _ = writeln!(s, "here = os.path.dirname(os.path.abspath(__file__))");
    let _ = writeln!(s, "with open(os.path.join(here, {csv_name:?})) as fh:");
    let _ = writeln!(s, "    rows = list(csv.DictReader(fh))");
    let _ = writeln!(s, "x = [float(r[{x:?}]) for r in rows]");
    let _ = writeln!(s, "fig, ax = plt.subplots()");
    for (col, label) in ys {
        let _ = writeln!(s, "ax.plot(x, [float(r[{col:?}]) for r in rows], label={label:?})");
    }
    if logx {
        let _ = writeln!(s, "ax.set_xscale('log')");
    }
    let _ = writeln!(s, "ax.set_xlabel({xlabel:?})");
    let _ = writeln!(s, "ax.set_ylabel({ylabel:?})");
    let _ = writeln!(s, "ax.legend()");
    let stem = csv_name.trim_end_matches(".csv");
    let _ = writeln!(s, "fig.savefig(os.path.join(here, {:?}), dpi=150)", format!("{stem}.png"));
    s
}

/// Peak metric against the sweep axis, one line per angle.
pub fn sweep_plot_script(csv_name: &str, axis_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "import csv");
    let _ = writeln!(s, "import os");
    let _ = writeln!(s, "import matplotlib.pyplot as plt");
    let _ = writeln!(s);
    let _ = writeln!(s, "here = os.path.dirname(os.path.abspath(__file__))");
    let _ = writeln!(s, "with open(os.path.join(here, {csv_name:?})) as fh:");
    let _ = writeln!(s, "    rows = list(csv.DictReader(fh))");
    let _ = writeln!(s, "fig, (top, bottom) = plt.subplots(2, 1, sharex=True)");
    let _ = writeln!(s, "for psi in sorted({{r['psi_deg'] for r in rows}}, key=float):");
    let _ = writeln!(s, "    sel = [r for r in rows if r['psi_deg'] == psi]");
    let _ = writeln!(s, "    x = [float(r['axis_value']) for r in sel]");
    let _ = writeln!(
        s,
        "    top.plot(x, [float(r['peak_count_per_bin']) for r in sel], marker='o', label=f'psi = {{float(psi):g}} deg')"
    );
    let _ = writeln!(s, "    bottom.plot(x, [float(r['t_peak_s']) for r in sel], marker='o')");
    let _ = writeln!(s, "top.set_ylabel('peak count per bin')");
    let _ = writeln!(s, "bottom.set_ylabel('t_peak (s)')");
    let _ = writeln!(s, "bottom.set_xlabel({axis_label:?})");
    let _ = writeln!(s, "top.legend()");
    let stem = csv_name.trim_end_matches(".csv");
    let _ = writeln!(s, "fig.savefig(os.path.join(here, {:?}), dpi=150)", format!("{stem}.png"));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for x in [0.0, 1.0, 0.1, 2.5e-5, 1e-300, 0.208333333333, 123456.789, -3.5e20, 5e-324, f64::MAX] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            assert!(!s.contains(','));
        }
        assert_eq!(fmt_f64(0.5), "0.5");
        assert_eq!(fmt_f64(2.5e-5), "2.5e-5");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let rows = vec![vec![1.0 / 3.0, 1e-200], vec![2.0, -0.0]];
        write_csv(&p, &["a", "b"], rows.clone()).unwrap();
        let (h, back) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(back, rows);
    }
}
