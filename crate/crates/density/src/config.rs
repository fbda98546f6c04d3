//! TOML experiment configuration.
//!
//! Parsing fills every default, so [`Config::emit`] writes a complete
//! document and re-parsing it gives back the same value. The config hash
//! is the SHA-256 of that canonical text.

use std::fmt;

use besov_core::link::LinkKind;
use besov_core::posterior::{McmcConfig, SMove};
use besov_core::{Family, PriorSpec, Regime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::DiagnosticsConfig;
use crate::study::{Bypass, ErrorSummary, StudyConfig};
use crate::truth::{TruthKind, TruthSpec};

/// A config problem, with the 1-based line it was found on when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub basis: BasisSection,
    pub prior: PriorSection,
    #[serde(default)]
    pub link: LinkSection,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySection>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub sample: SampleSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    /// `haar` or `db2` ... `db8`.
    pub family: String,
    /// The grid has `2^grid_level` cells per axis.
    pub grid_level: u32,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self {
            family: "db4".into(),
            grid_level: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub regime: String,
    /// Required except for the hierarchical regimes, where it is only the
    /// starting point and defaults to `d + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default = "default_dimension")]
    pub dimension: u32,
    #[serde(default = "default_n")]
    pub n: u64,
    #[serde(default = "default_l_max")]
    pub l_max: u32,
}

fn default_dimension() -> u32 {
    1
}

fn default_n() -> u64 {
    1000
}

fn default_l_max() -> u32 {
    9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    /// `exponential` or `regular-floor`.
    pub kind: String,
    /// Lower bound `B` of the regular-floor link.
    pub floor: f64,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            kind: "exponential".into(),
            floor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSection {
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    pub thinning: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal_scales: Option<Vec<f64>>,
    pub adapt: bool,
    pub target_acceptance: f64,
    pub s_proposal_scale: f64,
    pub s_steps: usize,
    /// `non-centered` or `centered`.
    pub s_move: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_s: Option<f64>,
    pub record_coefficients: bool,
    pub coherence_check_every: usize,
}

impl Default for McmcSection {
    fn default() -> Self {
        let m = McmcConfig::default();
        Self {
            iterations: m.iterations,
            burn_in: m.burn_in,
            thinning: m.thinning,
            proposal_scales: m.proposal_scales,
            adapt: m.adapt,
            target_acceptance: m.target_acceptance,
            s_proposal_scale: m.s_proposal_scale,
            s_steps: m.s_steps,
            s_move: "non-centered".into(),
            initial_s: m.initial_s,
            record_coefficients: m.record_coefficients,
            coherence_check_every: m.coherence_check_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    /// `uniform`, `homogeneous-smooth`, `inhomogeneous-spiky` or `custom`.
    pub kind: String,
    pub s: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_level: Option<u32>,
    #[serde(default = "default_spike_start")]
    pub spike_start: u32,
    #[serde(default = "default_spike_location")]
    pub spike_location: [f64; 2],
    #[serde(default = "default_background")]
    pub background: f64,
    /// Coefficient file for the `custom` kind, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<String>,
}

fn default_amplitude() -> f64 {
    1.0
}

fn default_spike_start() -> u32 {
    3
}

fn default_spike_location() -> [f64; 2] {
    [0.3, 0.6]
}

fn default_background() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<u64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// `posterior-median-tv` or `posterior-mean-tv`.
    #[serde(default = "default_error")]
    pub error: String,
    #[serde(default = "default_max_exclusion")]
    pub max_exclusion: f64,
    /// Replaces the chains by an exact power law (pipeline check).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bypass: Option<BypassSection>,
}

fn default_n_grid() -> Vec<u64> {
    vec![500, 1000, 2000, 4000, 8000]
}

fn default_replicates() -> usize {
    5
}

fn default_error() -> String {
    "posterior-median-tv".into()
}

fn default_max_exclusion() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BypassSection {
    pub constant: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub draws: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_radii: Option<Vec<f64>>,
    pub small_ball_t: f64,
    pub small_ball_l_max: u32,
    pub small_ball_points: usize,
    pub decentering_shifts: usize,
    pub decentering_draws: usize,
    pub decentering_z_max: f64,
    pub decentering_level: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        let d = DiagnosticsConfig::default();
        Self {
            draws: d.draws,
            tail_radii: d.tail_radii,
            small_ball_t: d.small_ball_t,
            small_ball_l_max: d.small_ball_l_max,
            small_ball_points: d.small_ball_points,
            decentering_shifts: d.decentering_shifts,
            decentering_draws: d.decentering_draws,
            decentering_z_max: d.decentering_z_max,
            decentering_level: d.decentering_level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    /// Number of prior draws written by `sample-prior`.
    pub draws: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { draws: 10 }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key =` assignment inside `[section]`, for errors found
/// after deserialization.
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl Config {
    /// Parses and validates a config; defaults are filled in.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut config: Config = toml::from_str(text).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        let at = |section: &str, key: &str, message: String| ConfigError {
            line: key_line(text, section, key),
            message,
        };
        let regime = Regime::parse(&config.prior.regime)
            .ok_or_else(|| at("prior", "regime", format!("unknown prior regime `{}`", config.prior.regime)))?;
        if config.prior.s.is_none() {
            if regime.is_hierarchical() {
                config.prior.s = Some(config.prior.dimension as f64 + 1.0);
            } else {
                return Err(ConfigError::new(format!(
                    "missing required key `s` in [prior] for regime `{}`",
                    regime.name()
                )));
            }
        }
        config.prior_spec().map_err(|e| at("prior", "s", e.to_string()))?;
        config.family().map_err(|e| at("basis", "family", e.message))?;
        if config.prior.l_max >= config.basis.grid_level {
            return Err(at(
                "prior",
                "l_max",
                format!(
                    "l_max = {} must be below the grid level {}",
                    config.prior.l_max, config.basis.grid_level
                ),
            ));
        }
        config.link_kind().map_err(|e| at("link", "kind", e.message))?;
        config.mcmc_config().map_err(|e| at("mcmc", "s_move", e.message))?;
        if let Some(t) = &config.truth {
            truth_kind(&t.kind).map_err(|e| at("truth", "kind", e.message))?;
            if t.kind == "custom" && t.coefficients.is_none() {
                return Err(at("truth", "kind", "custom truth needs `coefficients`".into()));
            }
            if t.s <= config.prior.dimension as f64 {
                log::warn!(
                    "truth smoothness {} does not exceed d = {}: outside the range covered by the theory",
                    t.s,
                    config.prior.dimension
                );
            }
        }
        if let Some(st) = &config.study {
            error_summary(&st.error).map_err(|e| at("study", "error", e.message))?;
            if st.n_grid.len() < 3 || st.n_grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(at(
                    "study",
                    "n_grid",
                    "n_grid must be strictly increasing with at least three entries".into(),
                ));
            }
            if st.replicates == 0 {
                return Err(at("study", "replicates", "replicates must be positive".into()));
            }
        }
        config
            .diagnostics_config()
            .validate()
            .map_err(|e| ConfigError::new(e.to_string()))?;
        Ok(config)
    }

    /// Canonical TOML text of the fully defaulted config.
    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`Config::emit`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.emit().as_bytes()))
    }

    pub fn family(&self) -> Result<Family, ConfigError> {
        Family::parse(&self.basis.family)
            .ok_or_else(|| ConfigError::new(format!("unknown wavelet family `{}`", self.basis.family)))
    }

    pub fn prior_spec(&self) -> Result<PriorSpec, ConfigError> {
        let regime = Regime::parse(&self.prior.regime)
            .ok_or_else(|| ConfigError::new(format!("unknown prior regime `{}`", self.prior.regime)))?;
        let s = self
            .prior
            .s
            .ok_or_else(|| ConfigError::new("missing required key `s` in [prior]"))?;
        PriorSpec::new(regime, s, self.prior.dimension, self.prior.n, self.prior.l_max)
            .map_err(|e| ConfigError::new(e.to_string()))
    }

    pub fn link_kind(&self) -> Result<LinkKind, ConfigError> {
        match self.link.kind.as_str() {
            "exponential" => Ok(LinkKind::Exponential),
            "regular-floor" => {
                let floor = self.link.floor;
                if !(floor > 0.0 && floor < 1.0) {
                    return Err(ConfigError::new(format!("link floor {floor} must lie in (0, 1)")));
                }
                Ok(LinkKind::RegularFloor { floor })
            }
            other => Err(ConfigError::new(format!("unknown link `{other}`"))),
        }
    }

    /// Chain settings; the seed is filled in by the caller.
    pub fn mcmc_config(&self) -> Result<McmcConfig, ConfigError> {
        let m = &self.mcmc;
        let s_move = match m.s_move.as_str() {
            "non-centered" => SMove::NonCentered,
            "centered" => SMove::Centered,
            other => return Err(ConfigError::new(format!("unknown s_move `{other}`"))),
        };
        let config = McmcConfig {
            iterations: m.iterations,
            burn_in: m.burn_in,
            thinning: m.thinning,
            proposal_scales: m.proposal_scales.clone(),
            adapt: m.adapt,
            target_acceptance: m.target_acceptance,
            seed: self.seed,
            s_proposal_scale: m.s_proposal_scale,
            s_steps: m.s_steps,
            s_move,
            initial_s: m.initial_s,
            record_coefficients: m.record_coefficients,
            coherence_check_every: m.coherence_check_every,
        };
        config.validate().map_err(|e| ConfigError::new(e.to_string()))?;
        Ok(config)
    }

    pub fn diagnostics_config(&self) -> DiagnosticsConfig {
        let d = &self.diagnostics;
        DiagnosticsConfig {
            draws: d.draws,
            tail_radii: d.tail_radii.clone(),
            small_ball_t: d.small_ball_t,
            small_ball_l_max: d.small_ball_l_max,
            small_ball_points: d.small_ball_points,
            decentering_shifts: d.decentering_shifts,
            decentering_draws: d.decentering_draws,
            decentering_z_max: d.decentering_z_max,
            decentering_level: d.decentering_level,
        }
    }

    /// Truth description; a custom truth's coefficients must be supplied.
    pub fn truth_spec(&self, custom: Option<besov_core::CoefficientTree>) -> Result<TruthSpec, ConfigError> {
        let t = self
            .truth
            .as_ref()
            .ok_or_else(|| ConfigError::new("missing [truth] section"))?;
        let kind = match truth_kind(&t.kind)? {
            Some(kind) => kind,
            None => TruthKind::Custom(custom.ok_or_else(|| ConfigError::new("custom truth coefficients not loaded"))?),
        };
        Ok(TruthSpec {
            kind,
            s: t.s,
            dimension: self.prior.dimension,
            link: self.link_kind()?,
            amplitude: t.amplitude,
            max_level: t.max_level,
            spike_start: t.spike_start,
            spike_location: t.spike_location,
            background: t.background,
            seed: self.seed,
        })
    }

    pub fn study_config(&self, custom: Option<besov_core::CoefficientTree>) -> Result<StudyConfig, ConfigError> {
        let st = self
            .study
            .as_ref()
            .ok_or_else(|| ConfigError::new("missing [study] section"))?;
        Ok(StudyConfig {
            truth: self.truth_spec(custom)?,
            prior: self.prior_spec()?,
            family: self.family()?,
            grid_level: self.basis.grid_level,
            link: self.link_kind()?,
            n_grid: st.n_grid.clone(),
            replicates: st.replicates,
            mcmc: self.mcmc_config()?,
            error: error_summary(&st.error)?,
            seed: self.seed,
            bypass: st.bypass.map(|b| Bypass {
                constant: b.constant,
                exponent: b.exponent,
            }),
            max_exclusion: st.max_exclusion,
        })
    }
}

/// `None` for the custom kind.
fn truth_kind(name: &str) -> Result<Option<TruthKind>, ConfigError> {
    match name {
        "uniform" => Ok(Some(TruthKind::Uniform)),
        "homogeneous-smooth" => Ok(Some(TruthKind::HomogeneousSmooth)),
        "inhomogeneous-spiky" => Ok(Some(TruthKind::InhomogeneousSpiky)),
        "custom" => Ok(None),
        other => Err(ConfigError::new(format!("unknown truth kind `{other}`"))),
    }
}

fn error_summary(name: &str) -> Result<ErrorSummary, ConfigError> {
    match name {
        "posterior-median-tv" => Ok(ErrorSummary::PosteriorMedianTv),
        "posterior-mean-tv" => Ok(ErrorSummary::PosteriorMeanTv),
        other => Err(ConfigError::new(format!("unknown error summary `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[prior]\nregime = \"truncated\"\ns = 2.0\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.basis.grid_level, 10);
        assert_eq!(c.prior.n, 1000);
        assert_eq!(c.mcmc.iterations, 2000);
        assert_eq!(c.link_kind().unwrap(), LinkKind::Exponential);
    }

    #[test]
    fn roundtrip_is_identity() {
        let text = format!("{MINIMAL}[truth]\nkind = \"inhomogeneous-spiky\"\ns = 2.0\n[study]\nreplicates = 2\n");
        let c = Config::parse(&text).unwrap();
        let again = Config::parse(&c.emit()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.emit(), again.emit());
        assert_eq!(c.hash(), again.hash());
    }

    #[test]
    fn small_s_names_the_hypothesis() {
        let err = Config::parse("[prior]\nregime = \"truncated\"\ns = 0.5\n").unwrap_err();
        assert!(err.message.contains("s > d"), "{err}");
        assert_eq!(err.line, Some(3));
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = Config::parse("seed = 1\n[prior]\nregime = \"truncated\"\ns = 2.0\nbogus = 3\n").unwrap_err();
        assert_eq!(err.line, Some(5));
        assert!(err.message.contains("bogus"), "{err}");
    }

    #[test]
    fn distinct_messages() {
        let missing = Config::parse("[prior]\nregime = \"truncated\"\n").unwrap_err();
        let mismatch = Config::parse("[prior]\nregime = \"truncated\"\ns = \"two\"\n").unwrap_err();
        let constraint = Config::parse("[prior]\nregime = \"truncated\"\ns = 1.0\n").unwrap_err();
        assert!(missing.message.contains("missing"));
        assert!(mismatch.message.contains("invalid type"), "{mismatch}");
        assert_ne!(missing.message, constraint.message);
        assert_ne!(mismatch.message, constraint.message);
    }

    #[test]
    fn hierarchical_without_s() {
        let c = Config::parse("[prior]\nregime = \"hierarchical\"\n").unwrap();
        assert_eq!(c.prior.s, Some(2.0));
    }
}
