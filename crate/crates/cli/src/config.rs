//! Experiment configuration: TOML with dotted sections, strict keys.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(source: Option<&str>, section: &str, key: &str, message: impl Into<String>) -> Self {
        let line = source.and_then(|s| find_key_line(s, section, key));
        Self { line, column: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "config error at line {l}, column {c}: {}", self.message),
            (Some(l), None) => write!(f, "config error at line {l}: {}", self.message),
            _ => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line of `key` inside `[section]` (or at top level for `""`),
/// also matching dotted forms such as `window.T = ...`.
fn find_key_line(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs = lhs.trim().trim_matches('"');
        let full = if current.is_empty() { lhs.to_string() } else { format!("{current}.{lhs}") };
        let want = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
        if full == want {
            return Some(i + 1);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    pub x0: f64,
    pub p0: f64,
    pub var_x0: f64,
    #[serde(default)]
    pub cov0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiConfig {
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_grid_n")]
    pub n: usize,
    #[serde(default = "default_x_min")]
    pub x_min: f64,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: default_grid_n(), x_min: default_x_min(), x_max: default_x_max() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BinningMode {
    PositionBins,
    #[default]
    DetectorWindow,
    TwoLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningConfig {
    #[serde(default)]
    pub mode: BinningMode,
    /// Explicit bin edges (position_bins).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
    /// Number of equal bins spanning the grid when `edges` is absent.
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub detector_x: f64,
    #[serde(default = "default_halfwidth")]
    pub detector_halfwidth: f64,
    /// Outcome whose time distribution is the headline result.
    #[serde(default)]
    pub outcome: usize,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self {
            mode: BinningMode::default(),
            edges: None,
            bins: default_bins(),
            detector_x: 0.0,
            detector_halfwidth: default_halfwidth(),
            outcome: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default)]
    pub t0: f64,
    #[serde(rename = "T")]
    pub duration: f64,
    #[serde(rename = "M")]
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_probe_shots")]
    pub probe_shots: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { enabled: false, probe_shots: default_probe_shots(), floor: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointerConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousConfig {
    #[serde(default = "default_trajectories")]
    pub trajectories: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_detector: Option<f64>,
    #[serde(default = "default_ode_dt")]
    pub ode_dt: f64,
    #[serde(default)]
    pub lindblad: bool,
    #[serde(default = "default_lindblad_dt")]
    pub lindblad_dt: f64,
}

impl Default for ContinuousConfig {
    fn default() -> Self {
        Self {
            trajectories: default_trajectories(),
            x_detector: None,
            ode_dt: default_ode_dt(),
            lindblad: false,
            lindblad_dt: default_lindblad_dt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Defaults to `binning.detector_x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default = "default_flow_refine")]
    pub refine: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { threshold: None, refine: default_flow_refine() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZenoConfig {
    /// Region is `x < below` unless `intervals` is given.
    #[serde(default)]
    pub below: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_sweep")]
    pub sweep: Vec<usize>,
}

impl Default for ZenoConfig {
    fn default() -> Self {
        Self { below: 0.0, intervals: None, sweep: default_sweep() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    #[default]
    Wavefunction,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClicksConfig {
    #[serde(default = "default_click_kappa")]
    pub kappa: f64,
    #[serde(default = "default_runs")]
    pub runs: u32,
    /// Histogram bins; defaults to `window.M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default)]
    pub profile: ProfileKind,
    #[serde(default)]
    pub t_start: f64,
    #[serde(default = "default_rect_duration")]
    pub duration: f64,
    #[serde(default = "default_profile_nodes")]
    pub nodes: usize,
}

impl Default for ClicksConfig {
    fn default() -> Self {
        Self {
            kappa: default_click_kappa(),
            runs: default_runs(),
            bins: None,
            profile: ProfileKind::default(),
            t_start: 0.0,
            duration: default_rect_duration(),
            nodes: default_profile_nodes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    #[serde(default = "default_zero_threshold")]
    pub zero_threshold: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self { quad_nodes: default_quad_nodes(), zero_threshold: default_zero_threshold() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_shots_sweep")]
    pub shots_sweep: Vec<u64>,
    #[serde(default = "default_samples_sweep")]
    pub samples_sweep: Vec<usize>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { shots_sweep: default_shots_sweep(), samples_sweep: default_samples_sweep() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Shots per probe time (L).
    #[serde(default = "default_shots")]
    pub shots: u64,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet: Option<PacketConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi: Option<RabiConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub binning: BinningConfig,
    pub window: WindowConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointer: Option<PointerConfig>,
    #[serde(default)]
    pub continuous: ContinuousConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub zeno: ZenoConfig,
    #[serde(default)]
    pub clicks: ClicksConfig,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn one() -> f64 {
    1.0
}
fn default_grid_n() -> usize {
    1024
}
fn default_x_min() -> f64 {
    -40.0
}
fn default_x_max() -> f64 {
    40.0
}
fn default_bins() -> usize {
    64
}
fn default_halfwidth() -> f64 {
    0.5
}
fn default_probe_shots() -> u64 {
    32
}
fn default_trajectories() -> u32 {
    2000
}
fn default_ode_dt() -> f64 {
    0.01
}
fn default_lindblad_dt() -> f64 {
    0.002
}
fn default_flow_refine() -> usize {
    16
}
fn default_sweep() -> Vec<usize> {
    vec![1, 10, 100, 1000]
}
fn default_click_kappa() -> f64 {
    0.05
}
fn default_runs() -> u32 {
    2000
}
fn default_rect_duration() -> f64 {
    10.0
}
fn default_profile_nodes() -> usize {
    2049
}
fn default_quad_nodes() -> usize {
    1025
}
fn default_zero_threshold() -> f64 {
    1e-15
}
fn default_shots_sweep() -> Vec<u64> {
    vec![1_000, 10_000, 100_000]
}
fn default_samples_sweep() -> Vec<usize> {
    vec![16, 32, 64]
}
fn default_seed() -> u64 {
    0
}
fn default_output_dir() -> String {
    "out".into()
}
fn default_shots() -> u64 {
    10_000
}

/// Documented keys: (key, default, meaning). `docs/CONFIG.md` is generated
/// from this table.
pub const REFERENCE: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed for every random stream"),
    ("output_dir", "\"out\"", "directory for all artifacts (overridden by --out)"),
    ("shots", "10000", "shots L per probe time"),
    ("physics.hbar", "1.0", "reduced Planck constant"),
    ("physics.mass", "1.0", "particle mass"),
    ("packet.x0", "required", "initial mean position"),
    ("packet.p0", "required", "initial mean momentum"),
    ("packet.var_x0", "required", "initial position variance"),
    ("packet.cov0", "0.0", "initial symmetrized position-momentum covariance"),
    ("rabi.omega", "required", "Rabi angular frequency (rabi mode)"),
    ("grid.n", "1024", "grid points (power of two)"),
    ("grid.x_min", "-40.0", "left edge of the periodic grid"),
    ("grid.x_max", "40.0", "right edge of the periodic grid"),
    ("binning.mode", "\"detector_window\"", "position_bins, detector_window or two_level"),
    ("binning.edges", "none", "explicit strictly increasing bin edges"),
    ("binning.bins", "64", "equal bins over the grid when edges are absent"),
    ("binning.detector_x", "0.0", "detector window centre"),
    ("binning.detector_halfwidth", "0.5", "detector window half-width"),
    ("binning.outcome", "0", "outcome whose time distribution is reported"),
    ("window.t0", "0.0", "first probe time"),
    ("window.T", "required", "window duration"),
    ("window.M", "required", "number of probe times"),
    ("refine.enabled", "false", "shrink the window with a coarse pass first"),
    ("refine.probe_shots", "32", "shots per column in the coarse pass"),
    ("refine.floor", "1/probe_shots", "frequency a column must exceed to count as signal"),
    ("pointer.sigma", "none", "pointer variance; give sigma or kappa"),
    ("pointer.kappa", "none", "coupling sigma*tau; give sigma or kappa"),
    ("pointer.tau", "required", "spacing between fuzzy readouts"),
    ("continuous.trajectories", "2000", "fuzzy trajectories in the ensemble"),
    ("continuous.x_detector", "none", "position whose crossing times are extracted"),
    ("continuous.ode_dt", "0.01", "RK4 step for the moment equations"),
    ("continuous.lindblad", "false", "also run the dense master equation (grid.n <= 256)"),
    ("continuous.lindblad_dt", "0.002", "RK4 step for the dense master equation"),
    ("flow.threshold", "binning.detector_x", "position the flow is measured through"),
    ("flow.refine", "16", "exact-flow samples per probe interval"),
    ("zeno.below", "0.0", "region is x < below"),
    ("zeno.intervals", "none", "region as a list of [lo, hi) pairs instead"),
    ("zeno.sweep", "[1, 10, 100, 1000]", "numbers of projective checks"),
    ("clicks.kappa", "0.05", "detector coupling; click rate ceiling is 1/(2 kappa)"),
    ("clicks.runs", "2000", "independent click streams"),
    ("clicks.bins", "window.M", "histogram bins"),
    ("clicks.profile", "\"wavefunction\"", "wavefunction or rectangular occupancy"),
    ("clicks.t_start", "0.0", "rectangular profile start"),
    ("clicks.duration", "10.0", "rectangular profile length"),
    ("clicks.nodes", "2049", "tabulation nodes for a wavefunction profile"),
    ("clock.quad_nodes", "1025", "Simpson nodes for the clock normalization (odd)"),
    ("clock.zero_threshold", "1e-15", "normalization below which the clock is undefined"),
    ("compare.shots_sweep", "[1000, 10000, 100000]", "L values for the scaling table"),
    ("compare.samples_sweep", "[16, 32, 64]", "M values for the scaling table"),
];

pub fn reference_markdown() -> String {
    let mut out = String::from(
        "# Configuration reference\n\n\
         Generated from the CLI's key table. Keys use dotted TOML sections; unknown keys are rejected.\n\n\
         | key | default | meaning |\n|---|---|---|\n",
    );
    for (key, default, meaning) in REFERENCE {
        out.push_str(&format!("| `{key}` | `{default}` | {meaning} |\n"));
    }
    out
}

impl ExperimentConfig {
    pub fn from_toml_str(source: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(source).map_err(|e| {
            let (line, column) = match e.span() {
                Some(span) => {
                    let before = &source[..span.start.min(source.len())];
                    let line = before.matches('\n').count() + 1;
                    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
                    (Some(line), Some(column))
                }
                None => (None, None),
            };
            ConfigError { line, column, message: e.message().to_string() }
        })?;
        cfg.validate(Some(source))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            column: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_toml_str(&source)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Mode-independent checks; mode-specific requirements are checked when
    /// the mode runs.
    pub fn validate(&self, source: Option<&str>) -> Result<(), ConfigError> {
        let err = |section: &str, key: &str, msg: String| Err(ConfigError::at(source, section, key, msg));
        if !(self.physics.hbar > 0.0) {
            return err("physics", "hbar", format!("physics.hbar must be positive, got {}", self.physics.hbar));
        }
        if !(self.physics.mass > 0.0) {
            return err("physics", "mass", format!("physics.mass must be positive, got {}", self.physics.mass));
        }
        if !(self.window.duration > 0.0 && self.window.duration.is_finite()) {
            return err("window", "T", format!("window.T must be positive, got {}", self.window.duration));
        }
        if self.window.samples < 2 {
            return err("window", "M", format!("window.M must be at least 2, got {}", self.window.samples));
        }
        if !self.window.t0.is_finite() {
            return err("window", "t0", "window.t0 must be finite".into());
        }
        if self.shots == 0 {
            return err("", "shots", "shots must be at least 1".into());
        }
        if !self.grid.n.is_power_of_two() || self.grid.n < 2 {
            return err("grid", "n", format!("grid.n must be a power of two, got {}", self.grid.n));
        }
        if !(self.grid.x_max > self.grid.x_min) {
            return err("grid", "x_max", "grid.x_max must exceed grid.x_min".into());
        }
        if let Some(p) = &self.packet {
            if !(p.var_x0 > 0.0) {
                return err("packet", "var_x0", format!("packet.var_x0 must be positive, got {}", p.var_x0));
            }
        }
        if let Some(r) = &self.rabi {
            if !(r.omega.is_finite()) {
                return err("rabi", "omega", "rabi.omega must be finite".into());
            }
        }
        if let Some(edges) = &self.binning.edges {
            if edges.len() < 3 || edges.windows(2).any(|w| !(w[1] > w[0])) {
                return err("binning", "edges", "binning.edges needs at least 3 strictly increasing values".into());
            }
        }
        if self.binning.bins < 2 {
            return err("binning", "bins", "binning.bins must be at least 2".into());
        }
        if !(self.binning.detector_halfwidth > 0.0) {
            return err("binning", "detector_halfwidth", "binning.detector_halfwidth must be positive".into());
        }
        if let Some(p) = &self.pointer {
            if p.sigma.is_some() == p.kappa.is_some() {
                return err("pointer", "tau", "give exactly one of pointer.sigma and pointer.kappa".into());
            }
            if !(p.tau > 0.0) {
                return err("pointer", "tau", format!("pointer.tau must be positive, got {}", p.tau));
            }
            if let Some(s) = p.sigma {
                if !(s > 0.0) {
                    return err("pointer", "sigma", format!("pointer.sigma must be positive, got {s}"));
                }
            }
            if let Some(k) = p.kappa {
                if !(k > 0.0) {
                    return err("pointer", "kappa", format!("pointer.kappa must be positive, got {k}"));
                }
            }
        }
        if self.refine.probe_shots == 0 {
            return err("refine", "probe_shots", "refine.probe_shots must be at least 1".into());
        }
        if !(self.clicks.kappa > 0.0) {
            return err("clicks", "kappa", format!("clicks.kappa must be positive, got {}", self.clicks.kappa));
        }
        if self.clicks.bins == Some(0) {
            return err("clicks", "bins", "clicks.bins must be at least 1".into());
        }
        if self.clock.quad_nodes < 3 || self.clock.quad_nodes.is_multiple_of(2) {
            return err("clock", "quad_nodes", "clock.quad_nodes must be odd and at least 3".into());
        }
        if self.zeno.sweep.is_empty() || self.zeno.sweep.contains(&0) {
            return err("zeno", "sweep", "zeno.sweep needs positive measurement counts".into());
        }
        if self.continuous.trajectories == 0 {
            return err("continuous", "trajectories", "continuous.trajectories must be at least 1".into());
        }
        if self.compare.shots_sweep.contains(&0) || self.compare.samples_sweep.iter().any(|&m| m < 2) {
            return err("compare", "shots_sweep", "compare sweeps need L >= 1 and M >= 2".into());
        }
        Ok(())
    }
}
