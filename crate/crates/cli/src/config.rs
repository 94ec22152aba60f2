//! Flat `key = value` config files and the resolved run configuration.
//!
//! A config file is spliced into the argument list right after the
//! subcommand, so its keys are exactly the long flag names and anything given
//! on the command line afterwards overrides it.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::Args;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use driftcir::channel::SeriesConfig;
use driftcir::geometry::{ChannelGeometry, DriftSpec};

use crate::Failure;

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat key=value file; keys are long flag names, flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Receiver radius (um)
    #[arg(long = "r-um", default_value_t = 10.0)]
    pub r_um: f64,
    /// Source distance from the receiver centre (um), placed on the z axis
    #[arg(long = "x0-um", default_value_t = 20.0)]
    pub x0_um: f64,
    /// Diffusion coefficient (um^2/s)
    #[arg(long = "d-um2s", default_value_t = 80.0)]
    pub d_um2s: f64,
    /// Drift speed (um/s)
    #[arg(long = "speed-ums")]
    pub speed_ums: Option<f64>,
    /// Angle between the drift and the source position (degrees)
    #[arg(long = "psi-deg")]
    pub psi_deg: Option<f64>,
    /// Drift vector "vx,vy,vz" (um/s), instead of speed and angle
    #[arg(long = "v-ums", allow_hyphen_values = true)]
    pub v_ums: Option<String>,
    /// Highest Legendre order M of the series
    #[arg(long = "m-order", default_value_t = 30)]
    pub m_order: usize,
    /// Histogram bin width (s)
    #[arg(long = "dt-bin-s", default_value_t = 5e-5)]
    pub dt_bin_s: f64,
    /// End of the time window (s)
    #[arg(long = "t-max-s", default_value_t = 2.0)]
    pub t_max_s: f64,
    /// Released molecules (Monte Carlo particles and count scaling)
    #[arg(long, default_value_t = 1_000_000)]
    pub ntx: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads (results do not depend on it)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write a matplotlib script for the output
    #[arg(long)]
    pub plot: bool,
    /// Record the wall-clock time in the metadata (makes reruns differ)
    #[arg(long)]
    pub timestamp: bool,
}

/// Inserts the contents of a `--config` file after the subcommand.
pub fn splice_config_file(args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.to_string_lossy())))?;
    let mut injected = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("config line {}: expected key=value", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(Failure::Config(format!("config line {}: invalid key '{key}'", n + 1)));
        }
        match value {
            "true" => injected.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => injected.push(OsString::from(format!("--{key}={value}"))),
        }
    }
    let mut out = args;
    let at = 2.min(out.len());
    out.splice(at..at, injected);
    Ok(out)
}

/// Parses a comma-separated list of numbers.
pub fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Config(format!("{what}: '{x}' is not a number")))
        })
        .collect()
}

/// Geometry, drift and series settings after validation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub geom: ChannelGeometry,
    pub drift: DriftSpec,
    pub series: SeriesConfig,
    /// Canonical settings that determine the outputs.
    pub canonical: BTreeMap<String, Value>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<Resolved, Failure> {
        let geom = ChannelGeometry::new(self.r_um, [0.0, 0.0, self.x0_um], self.d_um2s)?;
        let drift = match (&self.v_ums, self.speed_ums, self.psi_deg) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(Failure::Config(
                    "give the drift either as --v-ums or as --speed-ums/--psi-deg, not both".into(),
                ))
            }
            (Some(v), None, None) => {
                let v = parse_list(v, "--v-ums")?;
                let v: [f64; 3] = v
                    .try_into()
                    .map_err(|_| Failure::Config("--v-ums needs three components".into()))?;
                DriftSpec::new(v)?
            }
            (None, speed, psi) => {
                DriftSpec::from_speed_angle(&geom, speed.unwrap_or(0.0), psi.unwrap_or(0.0).to_radians())?
            }
        };
        if self.m_order == 0 {
            return Err(Failure::Config("--m-order must be at least 1".into()));
        }
        if self.ntx == 0 {
            return Err(Failure::Config("--ntx must be at least 1".into()));
        }
        if !(self.dt_bin_s > 0.0) || !(self.t_max_s > self.dt_bin_s) {
            return Err(Failure::Config("need 0 < --dt-bin-s < --t-max-s".into()));
        }
        let series = SeriesConfig::default().with_max_order(self.m_order);
        series.validate()?;

        let mut canonical = BTreeMap::new();
        canonical.insert("r_um".into(), json!(geom.r));
        canonical.insert("x0_um".into(), json!(geom.x0));
        canonical.insert("d_um2s".into(), json!(geom.d));
        canonical.insert("v_ums".into(), json!(drift.v));
        canonical.insert("m_order".into(), json!(self.m_order));
        canonical.insert("dt_bin_s".into(), json!(self.dt_bin_s));
        canonical.insert("t_max_s".into(), json!(self.t_max_s));
        canonical.insert("ntx".into(), json!(self.ntx));
        canonical.insert("seed".into(), json!(self.seed));
        Ok(Resolved {
            geom,
            drift,
            series,
            canonical,
        })
    }
}

impl Resolved {
    pub fn set(&mut self, key: &str, value: Value) {
        self.canonical.insert(key.into(), value);
    }

    /// SHA-256 of the canonical settings serialized as sorted JSON.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.canonical).expect("canonical config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
