//! Flat, versioned TOML configuration for experiment runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{ForwardConfig, DEFAULT_CONTACT_IMPEDANCE};
use crate::geometry::{CatheterSpec, MeshResolution};
use crate::noise::{NoiseModel, NoiseReference};
use crate::protocol::Protocol;

/// Schema version accepted by this build.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Ellipticity,
    Lesion,
    Dilation,
    SpacingSweep,
    DetectabilitySweep,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ellipticity => "ellipticity",
            Self::Lesion => "lesion",
            Self::Dilation => "dilation",
            Self::SpacingSweep => "spacing_sweep",
            Self::DetectabilitySweep => "detectability_sweep",
        }
    }

    fn default_diameter(self) -> f64 {
        match self {
            Self::Ellipticity => 25.0,
            Self::Lesion => 26.0,
            Self::Dilation => 24.0,
            Self::SpacingSweep => 26.0,
            Self::DetectabilitySweep => 30.0,
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}
fn default_resolution() -> String {
    "desk".into()
}
fn default_protocol() -> String {
    "radial".into()
}
fn default_snr() -> f64 {
    60.0
}
fn default_aspect_ratios() -> Vec<f64> {
    vec![0.75, 0.5]
}
fn default_rotations() -> Vec<f64> {
    vec![0.0, 90.0]
}
fn default_steps() -> usize {
    10
}
fn default_start_radius() -> f64 {
    5.0
}
fn default_lesion_azimuth() -> f64 {
    90.0
}
fn default_indent_depth() -> f64 {
    4.0
}
fn default_rate() -> f64 {
    1.0
}
fn default_frame_rate() -> f64 {
    1.5
}
fn default_absolute_lambda() -> f64 {
    0.01
}
fn default_max_iterations() -> usize {
    4
}
fn default_noser() -> f64 {
    0.5
}
fn default_csa_threshold() -> f64 {
    3.0
}
fn default_bins() -> usize {
    16
}
fn default_contact_impedance() -> f64 {
    DEFAULT_CONTACT_IMPEDANCE
}

/// One experiment run. Every key except `version` and `scenario` has a
/// default; keys that do not apply to the chosen scenario are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Phantom mesh preset (`coarse`, `desk`, `fine`, `recon`).
    #[serde(default = "default_resolution")]
    pub resolution: String,
    /// Protocol of the inflation series (`radial` or `full`).
    #[serde(default = "default_protocol")]
    pub protocol: String,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default)]
    pub noise_reference: NoiseReference,
    #[serde(default = "default_contact_impedance")]
    pub contact_impedance: f64,

    /// Lumen diameter (major diameter for ellipses), mm; defaults per
    /// scenario.
    pub diameter: Option<f64>,
    #[serde(default = "default_aspect_ratios")]
    pub aspect_ratios: Vec<f64>,
    /// Major-axis rotations, degrees; peak shifts are reported relative to
    /// the first.
    #[serde(default = "default_rotations")]
    pub rotations: Vec<f64>,
    #[serde(default = "default_steps")]
    pub inflation_steps: usize,
    /// Free balloon radius at the first step, mm; it grows linearly to half
    /// the lumen diameter at the last.
    #[serde(default = "default_start_radius")]
    pub balloon_start_radius: f64,
    #[serde(default = "default_lesion_azimuth")]
    pub lesion_azimuth: f64,
    #[serde(default = "default_indent_depth")]
    pub indent_depth: f64,
    /// Indenter retraction speed, mm/s.
    #[serde(default = "default_rate")]
    pub retraction_rate: f64,
    /// Full-protocol frames per second.
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,

    /// Difference-imaging weight; chosen by cross-validation when absent.
    pub lambda: Option<f64>,
    #[serde(default = "default_absolute_lambda")]
    pub absolute_lambda: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_noser")]
    pub noser_exponent: f64,
    #[serde(default = "default_csa_threshold")]
    pub csa_threshold: f64,
    /// Azimuthal bins of the image summaries.
    #[serde(default = "default_bins")]
    pub profile_bins: usize,

    /// Sweep grids; module defaults when absent.
    pub spacings: Option<Vec<f64>>,
    pub sweep_diameters: Option<Vec<f64>>,
    pub sweep_aspect_ratios: Option<Vec<f64>>,
    #[serde(default)]
    pub monte_carlo_trials: usize,
}

impl ExperimentConfig {
    /// Defaults for `scenario`.
    pub fn new(scenario: Scenario) -> Self {
        toml::from_str(&format!("version = {CONFIG_VERSION}\nscenario = \"{}\"\n", scenario.name()))
            .expect("default configuration parses")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    /// Parses and validates `text`; `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::parse(path, e.message().to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::parse(
                path,
                format!("unsupported config version {} (expected {CONFIG_VERSION})", cfg.version),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn diameter(&self) -> f64 {
        self.diameter.unwrap_or_else(|| self.scenario.default_diameter())
    }

    pub fn mesh_resolution(&self) -> Result<MeshResolution> {
        MeshResolution::named(&self.resolution)
    }

    pub fn series_protocol(&self) -> Result<Protocol> {
        Protocol::named(&self.protocol)
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            snr_db: self.snr_db,
            seed: self.seed,
            reference: self.noise_reference,
        }
    }

    pub fn forward_config(&self) -> ForwardConfig {
        ForwardConfig {
            contact_impedance: self.contact_impedance,
            ..ForwardConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = |m: String| Err(Error::Parameter(m));
        self.mesh_resolution()?;
        self.series_protocol()?;
        self.noise_model().validate()?;
        self.forward_config().validate()?;
        let shaft = CatheterSpec::default().shaft_radius();
        let d = self.diameter();
        if !(0.5 * d > shaft) {
            return p(format!("diameter {d} mm does not clear the catheter shaft"));
        }
        if self.aspect_ratios.is_empty() || self.aspect_ratios.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return p("aspect_ratios must be nonempty and lie in (0, 1]".into());
        }
        if self.rotations.is_empty() || self.rotations.iter().any(|r| !r.is_finite()) {
            return p("rotations must be nonempty and finite".into());
        }
        if self.inflation_steps < 2 {
            return p("inflation_steps must be at least 2".into());
        }
        if !(self.balloon_start_radius > shaft && self.balloon_start_radius < 0.5 * d) {
            return p(format!(
                "balloon_start_radius must lie between the shaft radius ({shaft} mm) and half the diameter"
            ));
        }
        if !(self.indent_depth >= 0.0) || !(self.retraction_rate > 0.0) || !(self.frame_rate > 0.0) {
            return p("indent_depth must be non-negative; retraction_rate and frame_rate positive".into());
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return p(format!("lambda must be finite and non-negative, got {l}"));
            }
        }
        if !(self.absolute_lambda > 0.0) || self.max_iterations == 0 || !(self.noser_exponent >= 0.0) {
            return p("absolute_lambda and max_iterations must be positive, noser_exponent non-negative".into());
        }
        if !(self.csa_threshold > 0.0) || self.profile_bins < 4 {
            return p("csa_threshold must be positive and profile_bins at least 4".into());
        }
        Ok(())
    }

    /// Canonical TOML text of the configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// SHA-256 of the canonical text with the output directory cleared, so
    /// identical runs written to different places share a hash.
    pub fn sha256(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        Sha256::digest(c.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("test.toml"))
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse("version = 1\nscenario = \"lesion\"\n").unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.diameter(), 26.0);
        assert_eq!(c.inflation_steps, 10);
        assert_eq!(c, ExperimentConfig::new(Scenario::Lesion));
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = ExperimentConfig::new(Scenario::Ellipticity);
        c.lambda = Some(0.1);
        c.spacings = Some(vec![10.0, 20.0]);
        assert_eq!(parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn hash_ignores_output_but_not_seed() {
        let a = ExperimentConfig::new(Scenario::Dilation);
        let mut b = a.clone();
        b.output = "elsewhere".into();
        assert_eq!(a.sha256(), b.sha256());
        b.seed = 1;
        assert_ne!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);
    }

    #[test]
    fn bad_version_unknown_keys_and_scenarios_are_rejected() {
        assert!(matches!(parse("version = 2\nscenario = \"lesion\""), Err(Error::Parse { .. })));
        assert!(matches!(parse("version = 1\nscenario = \"lesion\"\nfoo = 1"), Err(Error::Parse { .. })));
        assert!(matches!(parse("version = 1\nscenario = \"tumour\""), Err(Error::Parse { .. })));
        assert!(matches!(parse("scenario = \"lesion\""), Err(Error::Parse { .. })));
    }

    #[test]
    fn invalid_values_are_rejected() {
        for extra in [
            "diameter = 4.0",
            "aspect_ratios = [1.2]",
            "inflation_steps = 1",
            "balloon_start_radius = 20.0",
            "resolution = \"huge\"",
            "protocol = \"spiral\"",
            "snr_db = -3.0",
            "lambda = -1.0",
            "profile_bins = 2",
        ] {
            let r = parse(&format!("version = 1\nscenario = \"ellipticity\"\n{extra}"));
            assert!(matches!(r, Err(Error::Parameter(_))), "{extra}: {r:?}");
        }
    }
}
