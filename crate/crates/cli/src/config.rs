//! Experiment configuration files.

use std::path::PathBuf;

use mrsle_core::config::{equally_spaced, TorusConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Trace,
    Energy,
    LoopSlope,
    Escape,
    Transience,
    TiltCrosscheck,
    Concentration,
    BoundsAudit,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Trace => "trace",
            Experiment::Energy => "energy",
            Experiment::LoopSlope => "loop-slope",
            Experiment::Escape => "escape",
            Experiment::Transience => "transience",
            Experiment::TiltCrosscheck => "tilt-crosscheck",
            Experiment::Concentration => "concentration",
            Experiment::BoundsAudit => "bounds-audit",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub trace: Option<TraceCfg>,
    pub energy: Option<EnergyCfg>,
    #[serde(rename = "loop-slope")]
    pub loop_slope: Option<LoopSlopeCfg>,
    pub escape: Option<EscapeCfg>,
    pub transience: Option<TransienceCfg>,
    #[serde(rename = "tilt-crosscheck")]
    pub tilt: Option<TiltCfg>,
    pub concentration: Option<ConcentrationCfg>,
    #[serde(rename = "bounds-audit")]
    pub bounds_audit: Option<BoundsAuditCfg>,
}

/// Start either as explicit angles or as `n` equally spaced points.
pub fn start(section: &str, n: Option<usize>, theta0: &Option<Vec<f64>>) -> Result<TorusConfig<f64>, CliError> {
    match (theta0, n) {
        (Some(a), n) => {
            if n.is_some_and(|n| n != a.len()) {
                return Err(CliError::Config(format!("{section}: n disagrees with theta0")));
            }
            TorusConfig::new(a.clone()).map_err(|e| CliError::Config(format!("{section}.theta0: {e}")))
        }
        (None, Some(n)) if n >= 1 => Ok(equally_spaced(n, 0.0)),
        _ => Err(CliError::Config(format!("{section}: need n >= 1 or theta0"))),
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DriverKind {
    #[default]
    Dyson,
    ZeroEnergy,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceCfg {
    pub n: Option<usize>,
    pub theta0: Option<Vec<f64>>,
    pub kappa: f64,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub driver: DriverKind,
}

fn default_loops() -> usize {
    100_000
}

fn default_rows() -> usize {
    400
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyCfg {
    pub n: Option<usize>,
    pub theta0: Option<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
    /// Global rotation rate added to the zero-energy driver.
    #[serde(default)]
    pub omega: f64,
    #[serde(default = "default_loops")]
    pub loop_samples: usize,
    #[serde(default = "default_rows")]
    pub max_rows: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSlopeCfg {
    pub n: usize,
    pub horizons: Vec<f64>,
    pub dt: f64,
    #[serde(default = "default_loops")]
    pub loop_samples: usize,
    /// Relative tolerance on the slope; the run fails outside it.
    pub tolerance: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeCfg {
    pub n: Option<usize>,
    pub theta0: Option<Vec<f64>>,
    pub kappa: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_samples: usize,
    pub v: f64,
    /// Values of `v - u`.
    pub gaps: Vec<f64>,
    #[serde(default = "one")]
    pub stride: usize,
    /// Relative tolerance on the fitted exponent; the run fails outside it.
    pub tolerance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransienceCfg {
    pub n: usize,
    pub kappa: f64,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "one")]
    pub stride: usize,
    pub n_samples: usize,
}

fn default_tilt_loops() -> usize {
    200
}

fn default_loop_stderr() -> f64 {
    0.2
}

fn default_loop_max() -> usize {
    204_800
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiltCfg {
    pub n: Option<usize>,
    pub theta0: Option<Vec<f64>>,
    pub kappa: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_samples: usize,
    pub n_direct: usize,
    pub dyson_dt: Option<f64>,
    #[serde(default = "default_tilt_loops")]
    pub loop_samples: usize,
    #[serde(default = "default_loop_stderr")]
    pub loop_stderr_target: f64,
    #[serde(default = "default_loop_max")]
    pub loop_samples_max: usize,
    pub delta_min: Option<f64>,
    /// Largest acceptable KS distance of the gap law.
    pub ks_max: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationCfg {
    pub n: Option<usize>,
    pub theta0: Option<Vec<f64>>,
    pub kappas: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub n_samples: usize,
}

fn default_tol_steps() -> f64 {
    5.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsAuditCfg {
    pub n_values: Vec<usize>,
    pub kappa: f64,
    pub trajectories: usize,
    pub dt: f64,
    pub t_max: f64,
    pub v_grid: Vec<f64>,
    /// Tolerance in units of `dt`.
    #[serde(default = "default_tol_steps")]
    pub tol_steps: f64,
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let c: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let present = match c.experiment {
        Experiment::Trace => c.trace.is_some(),
        Experiment::Energy => c.energy.is_some(),
        Experiment::LoopSlope => c.loop_slope.is_some(),
        Experiment::Escape => c.escape.is_some(),
        Experiment::Transience => c.transience.is_some(),
        Experiment::TiltCrosscheck => c.tilt.is_some(),
        Experiment::Concentration => c.concentration.is_some(),
        Experiment::BoundsAudit => c.bounds_audit.is_some(),
    };
    if !present {
        return Err(CliError::Config(format!("missing section [{}]", c.experiment.name())));
    }
    Ok(c)
}

pub fn positive(section: &str, field: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{section}.{field}: must be positive, got {x}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_escape_section() {
        let c = parse("experiment = \"escape\"\nseed = 3\n[escape]\nn = 2\nkappa = 4.0\nhorizon = 3.0\ndt = 0.01\nn_samples = 10\nv = 3.0\ngaps = [0.5, 1.0]\n").unwrap();
        let e = c.escape.unwrap();
        assert_eq!(e.stride, 1);
        assert_eq!(start("escape", e.n, &e.theta0).unwrap().n(), 2);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = parse("experiment = \"trace\"\nseed = 1\n[trace]\nn = 2\nkappa = 1.0\nhorizon = 1.0\ndt = 0.01\nbogus = 1\n").unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("bogus")), "{err:?}");
    }

    #[test]
    fn seed_is_required() {
        assert!(matches!(parse("experiment = \"trace\"\n[trace]\nn = 2\nkappa = 1.0\nhorizon = 1.0\ndt = 0.01\n"), Err(CliError::Config(_))));
    }

    #[test]
    fn missing_section() {
        assert!(matches!(parse("experiment = \"energy\"\nseed = 1\n"), Err(CliError::Config(m)) if m.contains("[energy]")));
    }
}
