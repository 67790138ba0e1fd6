//! Experiment configuration. Every key has a default; the effective values
//! are echoed into each report.

use std::path::{Path, PathBuf};

use eklab::dynamics::{Direction, NonlinearMode, Scheme, SolverConfig};
use eklab::model::ModelSpec;
use eklab::resonance::Section;
use eklab::scattering::{self, ProfileGenerator, QuadratureConfig};
use eklab::{CapillarityModel, Grid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rng_seed: u64,
    pub grid: GridConfig,
    pub model: ModelSpec,
    pub profile: ProfileConfig,
    pub plan: PlanConfig,
    pub solver: SolverSection,
    pub output: OutputConfig,
    pub gauge: GaugeConfig,
    pub dispersive: DispersiveConfig,
    pub besov: BesovConfig,
    pub resonance: ResonanceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            rng_seed: 0,
            grid: GridConfig::default(),
            model: CapillarityModel::unit_normalized().into(),
            profile: ProfileConfig::default(),
            plan: PlanConfig::default(),
            solver: SolverSection::default(),
            output: OutputConfig::default(),
            gauge: GaugeConfig::default(),
            dispersive: DispersiveConfig::default(),
            besov: BesovConfig::default(),
            resonance: ResonanceConfig::default(),
        }
    }
}

/// Cubic lattice: `dim` axes of `n` points on period `box_length`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
    #[serde(alias = "L")]
    pub box_length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { dim: 3, n: scattering::DEFAULT_POINTS, box_length: scattering::DEFAULT_BOX_LENGTH }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    #[serde(flatten)]
    pub generator: ProfileGenerator,
    /// Restrict to the two-thirds band before use.
    pub band_limit: bool,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { generator: ProfileGenerator::default_packet(), band_limit: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub t_n: Vec<f64>,
    pub s_reg: f64,
    /// Spacing of the sample grid on `[1, T_n]`.
    pub sample_step: f64,
    /// Fit window; `None` selects `[2, min(T_n, t*)/2]`.
    pub fit_window: Option<[f64; 2]>,
    pub quadrature: QuadratureConfig,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            t_n: scattering::DEFAULT_T_N.to_vec(),
            s_reg: scattering::DEFAULT_S_REG,
            sample_step: 0.5,
            fit_window: None,
            quadrature: QuadratureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub scheme: Scheme,
    pub dt: f64,
    pub dealias: bool,
    pub defect_tolerance: Option<f64>,
    pub max_step_rejections: u32,
    pub nonlinearity: NonlinearMode,
    /// End time of `simulate`, started at 0.
    pub t_end: f64,
    /// Record spacing of `simulate`.
    pub record_step: f64,
    /// Weight order of the energy column written by `simulate`.
    pub gamma: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            scheme: Scheme::EtdRk4,
            dt: 0.05,
            dealias: true,
            defect_tolerance: None,
            max_step_rejections: 8,
            nonlinearity: NonlinearMode::Full,
            t_end: 1.0,
            record_step: 0.1,
            gamma: 1.0,
        }
    }
}

impl SolverSection {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            dt: self.dt,
            scheme: self.scheme,
            dealias: self.dealias,
            direction: Direction::Forward,
            max_step_rejections: self.max_step_rejections,
            defect_tolerance: self.defect_tolerance,
            snapshot_every: 0,
            nonlinearity: self.nonlinearity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Field,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Write every `n`-th recorded state as a `.field` snapshot when the
    /// `field` format is enabled.
    pub snapshot_cadence: usize,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: PathBuf::from("out"), snapshot_cadence: 1, formats: vec![Format::Csv] }
    }
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaugeConfig {
    pub gamma: Vec<f64>,
    pub rho_min: f64,
    pub rho_max: f64,
    pub points: usize,
}

impl Default for GaugeConfig {
    fn default() -> Self {
        GaugeConfig { gamma: vec![0.0, 1.0, 2.0, 3.75], rho_min: 0.5, rho_max: 2.0, points: 31 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispersiveConfig {
    /// Lebesgue exponents, `inf` allowed.
    pub p: Vec<f64>,
    pub samples: usize,
}

impl Default for DispersiveConfig {
    fn default() -> Self {
        DispersiveConfig { p: vec![2.0, 4.0, 6.0, f64::INFINITY], samples: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BesovConfig {
    /// Random band-limited pairs used for the Bony reconstruction.
    pub trials: usize,
    /// Lattice band of the random fields.
    pub max_index: i64,
}

impl Default for BesovConfig {
    fn default() -> Self {
        BesovConfig { trials: 5, max_index: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResonanceConfig {
    /// Sign pairs such as `"+-"`.
    pub symbols: Vec<String>,
    pub section: Section,
    pub tol: f64,
    pub cap: f64,
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        ResonanceConfig {
            symbols: ["++", "+-", "-+", "--"].map(String::from).to_vec(),
            section: Section::EtaPlane { xi: [1.0, 0.0, 0.0], axes: [0, 1], extent: 2.0, points: 101 },
            tol: 1e-3,
            cap: 1e3,
        }
    }
}

/// Configuration problems. The category is `config` unless a library check
/// (grid or model construction) rejected the values.
#[derive(Debug)]
pub struct ConfigError {
    pub category: &'static str,
    pub message: String,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        ConfigError { category: "config", message: message.into() }
    }

    fn library(section: &str, e: eklab::EkError) -> Self {
        ConfigError { category: e.category(), message: format!("[{section}]: {e}") }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl ExperimentConfig {
    /// Parses TOML text; `origin` names the source in messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::new(locate(origin, text, &e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(ExperimentConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::new(format!("{}: {e}", p.display())))?;
                ExperimentConfig::parse(&text, &p.display().to_string())
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.model().map_err(|e| ConfigError::library("model", e))?;
        self.grid().map_err(|e| ConfigError::library("grid", e))?;
        let p = &self.plan;
        if p.t_n.is_empty() || p.t_n.iter().any(|&t| !(t >= 1.0)) || p.t_n.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::new(format!("[plan]: t_n = {:?} must be increasing and >= 1", p.t_n)));
        }
        if !(p.sample_step > 0.0) {
            return Err(ConfigError::new("[plan]: sample_step must be positive"));
        }
        if !(self.solver.dt > 0.0 && self.solver.t_end >= 0.0 && self.solver.record_step > 0.0) {
            return Err(ConfigError::new("[solver]: dt and record_step must be positive, t_end non-negative"));
        }
        for s in &self.resonance.symbols {
            if eklab::resonance::ResonanceSymbol::parse(s).is_none() {
                return Err(ConfigError::new(format!("[resonance]: unknown symbol {s:?}")));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> eklab::Result<CapillarityModel> {
        CapillarityModel::try_from(self.model.clone())
    }

    pub fn grid(&self) -> eklab::Result<std::sync::Arc<Grid>> {
        Grid::cube(self.grid.dim, self.grid.n, self.grid.box_length)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

/// Formats a TOML error as `origin:line:column: message`.
fn locate(origin: &str, text: &str, e: &toml::de::Error) -> String {
    let msg = e.message();
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            format!("{origin}:{line}:{col}: {msg}")
        }
        None => format!("{origin}: {msg}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("", "x").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "rng_seed = 3\n[grid]\nn = \"many\"\n";
        let e = ExperimentConfig::parse(text, "cfg.toml").unwrap_err();
        assert!(e.message.starts_with("cfg.toml:3:"), "{}", e.message);
        let e = ExperimentConfig::parse("[grid]\nbogus = 1\n", "c").unwrap_err();
        assert!(e.message.starts_with("c:2:"), "{}", e.message);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = ExperimentConfig::parse("[grid]\nn = 16\n[solver]\ndt = 0.01\n", "c").unwrap();
        assert_eq!(cfg.grid.n, 16);
        assert_eq!(cfg.grid.dim, 3);
        assert_eq!(cfg.solver.dt, 0.01);
        assert_eq!(cfg.solver.scheme, Scheme::EtdRk4);
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = ExperimentConfig::parse("[profile]\ngenerator = \"gaussian_dipole\"\namplitude = 0.5\nwidth = 2.0\n", "c").unwrap();
        let back = ExperimentConfig::parse(&cfg.to_toml(), "echo").unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn invalid_model_rejected() {
        let e = ExperimentConfig::parse("[model]\npressure = [0.0, 1.0]\n[model.kappa]\nfamily = \"constant\"\nkappa0 = 1.0\n", "c").unwrap_err();
        assert!(e.message.contains("[model]"), "{}", e.message);
    }
}
