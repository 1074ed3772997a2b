use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::galerkin::{CutoffSpec, GalerkinConfig};
use crate::hermite::C64;
use crate::random::MeasureParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sample,
    Evolve,
    DecayScan,
    Scatter,
    MeasureRatio,
    Diagnostics,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Sample => "sample",
            Self::Evolve => "evolve",
            Self::DecayScan => "decay-scan",
            Self::Scatter => "scatter",
            Self::MeasureRatio => "measure-ratio",
            Self::Diagnostics => "diagnostics",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    #[serde(default = "d_ensemble")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GalerkinSection {
    pub p: f64,
    pub truncation: usize,
    /// Defaults to `truncation + 1`.
    pub n_modes: Option<usize>,
    /// Quadrature nodes per mode.
    pub oversampling: usize,
    pub dt0: f64,
    pub c_dt: f64,
    pub stop_margin: f64,
    pub nonlinear_scale: f64,
}

impl Default for GalerkinSection {
    fn default() -> Self {
        let g = GalerkinConfig::new(3.0, 16);
        Self {
            p: g.p,
            truncation: g.truncation,
            n_modes: None,
            oversampling: 4,
            dt0: g.dt0,
            c_dt: g.c_dt,
            stop_margin: g.stop_margin,
            nonlinear_scale: g.nonlinear_scale,
        }
    }
}

impl GalerkinSection {
    pub fn to_config(&self) -> GalerkinConfig {
        GalerkinConfig {
            p: self.p,
            truncation: self.truncation,
            n_modes: self.n_modes.unwrap_or(self.truncation + 1),
            cutoff: CutoffSpec,
            dt0: self.dt0,
            c_dt: self.c_dt,
            stop_margin: self.stop_margin,
            nonlinear_scale: self.nonlinear_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureSection {
    pub s: f64,
    pub alpha_re: f64,
    pub alpha_im: f64,
    pub beta: f64,
    pub theta: f64,
}

impl Default for MeasureSection {
    fn default() -> Self {
        Self { s: 0.0, alpha_re: 1.0, alpha_im: 0.0, beta: 1.0, theta: 0.0 }
    }
}

impl MeasureSection {
    pub fn to_params(&self) -> Result<MeasureParams> {
        MeasureParams::new(self.s, C64::new(self.alpha_re, self.alpha_im), self.beta, self.theta)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    /// Modes drawn per sample; defaults to the Galerkin mode count.
    pub n_modes: Option<usize>,
    /// Also emit every coefficient as a record.
    pub coefficients: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSection {
    pub t0: f64,
    pub t1: f64,
    pub sample_index: u64,
    pub fluctuation_sigma: f64,
    pub mass_tolerance: f64,
    /// Applied when the energy is conserved (`p = 5` or linear flow).
    pub energy_tolerance: f64,
    pub energy_law_tolerance: f64,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self {
            t0: 0.0,
            t1: 0.7,
            sample_index: 0,
            fluctuation_sigma: 0.0,
            mass_tolerance: 1e-8,
            energy_tolerance: 1e-6,
            energy_law_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecaySection {
    pub s_min: f64,
    pub s_max: f64,
    pub n_checkpoints: usize,
    /// Run the free flow on the same samples.
    pub control: bool,
    pub tolerance: f64,
}

impl Default for DecaySection {
    fn default() -> Self {
        Self { s_min: 5.0, s_max: 50.0, n_checkpoints: 16, control: true, tolerance: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScatterSection {
    pub sigma: f64,
    /// Checkpoints are `π/4 − 2^{−k}·gap`.
    pub gap: f64,
    pub n_checkpoints: usize,
    pub min_fraction: f64,
}

impl Default for ScatterSection {
    fn default() -> Self {
        Self { sigma: 0.1, gap: 0.2, n_checkpoints: 8, min_fraction: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BallKind {
    /// `‖u0‖_{L²} ≤ r`.
    L2,
    /// `‖u0‖_{L^{p+1}} ≤ r`.
    Lp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureRatioSection {
    pub times: Vec<f64>,
    /// Ball radius; the ensemble median norm when absent.
    pub radius: Option<f64>,
    pub ball: BallKind,
    pub bootstrap: usize,
    pub band_sigmas: f64,
    pub min_ess: f64,
}

impl Default for MeasureRatioSection {
    fn default() -> Self {
        Self {
            times: vec![0.0, 0.15, 0.3, 0.45, 0.6],
            radius: None,
            ball: BallKind::L2,
            bootstrap: 200,
            band_sigmas: 2.0,
            min_ess: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub mehler: bool,
    pub bounds: bool,
    pub liouville: bool,
    pub tails: bool,
    pub mehler_terms: usize,
    pub mehler_tolerance: f64,
    pub bound_n_min: usize,
    pub bound_n_max: usize,
    pub bound_points: usize,
    pub bound_gamma: f64,
    pub slope_tolerance: f64,
    pub liouville_tolerance: f64,
    pub tail_samples: usize,
    pub tail_modes: usize,
    pub sobolev_eps: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            mehler: true,
            bounds: true,
            liouville: true,
            tails: true,
            mehler_terms: 2000,
            mehler_tolerance: 1e-9,
            bound_n_min: 100,
            bound_n_max: 2000,
            bound_points: 12,
            bound_gamma: 0.1,
            slope_tolerance: 0.05,
            liouville_tolerance: 1e-6,
            tail_samples: 10_000,
            tail_modes: 256,
            sobolev_eps: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

fn d_ensemble() -> usize {
    64
}

/// Complete description of one run. Parsed from `key = value` text with
/// sections; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub galerkin: GalerkinSection,
    #[serde(default)]
    pub measure: MeasureSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub evolve: EvolveSection,
    #[serde(default)]
    pub decay: DecaySection,
    #[serde(default)]
    pub scatter: ScatterSection,
    #[serde(default)]
    pub measure_ratio: MeasureRatioSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    /// Built-in defaults for an experiment kind.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            experiment: ExperimentSection { kind, ensemble: d_ensemble(), seed: 0, threads: 0 },
            galerkin: GalerkinSection::default(),
            measure: MeasureSection::default(),
            sample: SampleSection::default(),
            evolve: EvolveSection::default(),
            decay: DecaySection::default(),
            scatter: ScatterSection::default(),
            measure_ratio: MeasureRatioSection::default(),
            diagnostics: DiagnosticsSection::default(),
            output: OutputSection::default(),
        };
        match kind {
            ExperimentKind::DecayScan => {
                cfg.galerkin.p = 3.0;
                cfg.galerkin.truncation = 64;
            }
            ExperimentKind::Scatter => {
                cfg.galerkin.p = 5.0;
                cfg.galerkin.truncation = 16;
                cfg.experiment.ensemble = 32;
            }
            ExperimentKind::MeasureRatio => {
                cfg.galerkin.truncation = 8;
                cfg.experiment.ensemble = 10_000;
            }
            ExperimentKind::Evolve => {
                cfg.galerkin.truncation = 32;
                cfg.galerkin.n_modes = Some(128);
                cfg.experiment.ensemble = 1;
            }
            ExperimentKind::Sample => {
                cfg.experiment.ensemble = 16;
            }
            ExperimentKind::Diagnostics => {}
        }
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_table(&self) -> Result<toml::Table> {
        toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML and
    /// fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut table = self.to_table()?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        Self::from_table(table)
    }

    pub fn validate(&self) -> Result<()> {
        self.galerkin.to_config().validate()?;
        self.measure.to_params()?;
        if self.galerkin.oversampling == 0 {
            return Err(Error::Config("galerkin.oversampling must be positive".into()));
        }
        if self.experiment.ensemble == 0 {
            return Err(Error::Config("experiment.ensemble must be positive".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        let text = self.to_toml_string().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        let mut out = String::with_capacity(16);
        for b in digest.iter().take(8) {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

pub fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (path, raw) = ov
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
    let value = parse_value(raw.trim());
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().unwrap();
    let mut cur = table;
    for k in parents {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path `{path}`: `{k}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let text = "[experiment]\nkind = \"scatter\"\n[galerkin]\np = 5.0\nbogus = 1\n";
        assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))));
        let text = "[experiment]\nkind = \"scatter\"\nwhat = 2\n";
        assert!(ExperimentConfig::from_toml_str(text).is_err());
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[experiment]\nkind = \"diagnostics\"\n").unwrap();
        assert_eq!(cfg.diagnostics, DiagnosticsSection::default());
        assert_eq!(cfg.experiment.ensemble, 64);
    }

    #[test]
    fn lossless_round_trip() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::MeasureRatio);
        cfg.galerkin.dt0 = 0.1 + 0.2;
        cfg.measure_ratio.radius = Some(1.0 / 3.0);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.content_hash(), cfg.content_hash());
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::defaults(ExperimentKind::Scatter);
        let o = cfg
            .with_overrides(&["galerkin.p=4.5".into(), "measure_ratio.ball=lp".into()])
            .unwrap();
        assert_eq!(o.galerkin.p, 4.5);
        assert_eq!(o.measure_ratio.ball, BallKind::Lp);
        assert_ne!(o.content_hash(), cfg.content_hash());
        assert!(cfg.with_overrides(&["galerkin.nope=1".into()]).is_err());
        assert!(cfg.with_overrides(&["galerkin.p".into()]).is_err());
        assert!(cfg.with_overrides(&["galerkin.p=0.5".into()]).is_err());
    }
}
