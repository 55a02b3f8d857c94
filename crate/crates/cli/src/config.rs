//! Declarative experiment configuration: a single JSON file with nested
//! sections. Unknown keys are hard errors so a typo cannot silently fall
//! back to a default.

use emden_core::geometry::DomainSpec;
use emden_core::lane_emden::SolveParams;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Disk { radius: f64 },
    Rectangle { width: f64, height: f64 },
    Annulus { inner_radius: f64, outer_radius: f64 },
}

impl DomainConfig {
    pub fn to_spec(&self) -> DomainSpec {
        match *self {
            DomainConfig::Disk { radius } => DomainSpec::disk(radius),
            DomainConfig::Rectangle { width, height } => DomainSpec::rectangle(width, height),
            DomainConfig::Annulus { inner_radius, outer_radius } => {
                DomainSpec::annulus(inner_radius, outer_radius)
            }
        }
    }
}

fn default_p_start() -> f64 {
    3.0
}
fn default_p_targets() -> Vec<f64> {
    vec![5.0, 8.0, 10.0, 12.0]
}
fn default_ratio() -> f64 {
    1.15
}
fn default_newton_tol() -> f64 {
    1e-9
}
fn default_max_newton_steps() -> usize {
    60
}
fn default_damping_min() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[serde(default = "default_p_start")]
    pub p_start: f64,
    #[serde(default = "default_p_targets")]
    pub p_targets: Vec<f64>,
    #[serde(default = "default_ratio")]
    pub continuation_ratio: f64,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_newton_steps")]
    pub max_newton_steps: usize,
    #[serde(default = "default_damping_min")]
    pub damping_min: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            p_start: default_p_start(),
            p_targets: default_p_targets(),
            continuation_ratio: default_ratio(),
            newton_tol: default_newton_tol(),
            max_newton_steps: default_max_newton_steps(),
            damping_min: default_damping_min(),
        }
    }
}

impl SolveConfig {
    pub fn to_params(&self) -> SolveParams {
        SolveParams {
            p_start: self.p_start,
            p_targets: self.p_targets.clone(),
            continuation_ratio: self.continuation_ratio,
            newton_tol: self.newton_tol,
            max_newton_steps: self.max_newton_steps,
            damping_min: self.damping_min,
            ..SolveParams::default()
        }
    }
}

fn default_max_radius() -> f64 {
    10.0
}
fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BubbleConfig {
    /// Rescaled profile radius R.
    #[serde(default = "default_max_radius")]
    pub max_radius: f64,
    /// Peak detection ball; defaults to 0.1 * diam(domain).
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Radii for the average-inequality report; defaults to {delta0}.
    #[serde(default)]
    pub radii: Vec<f64>,
    /// Exponents to analyze; defaults to the solve targets.
    #[serde(default)]
    pub p_select: Vec<f64>,
}

impl Default for BubbleConfig {
    fn default() -> Self {
        BubbleConfig {
            max_radius: default_max_radius(),
            beta: None,
            threshold: default_threshold(),
            radii: Vec::new(),
            p_select: Vec::new(),
        }
    }
}

fn default_kr_tol() -> f64 {
    1e-3
}
fn default_kr_n() -> usize {
    1
}
fn default_kr_random_starts() -> usize {
    2
}
fn default_convloc_p() -> Vec<f64> {
    vec![50.0, 200.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenConfig {
    /// Robin probe lattice spacing; defaults to 8h.
    #[serde(default)]
    pub probe_spacing: Option<f64>,
    /// Finite-difference step for KR gradients; defaults to 4h.
    #[serde(default)]
    pub fd_step: Option<f64>,
    #[serde(default = "default_kr_tol")]
    pub kr_tol: f64,
    /// Number of configuration points.
    #[serde(default = "default_kr_n")]
    pub n: usize,
    /// Far-field test points; defaults to one mid-radius point.
    #[serde(default)]
    pub test_points: Vec<(f64, f64)>,
    #[serde(default = "default_kr_random_starts")]
    pub kr_random_starts: usize,
    /// Exponents for the far-field check (disk domains use the radial
    /// oracle at these p).
    #[serde(default = "default_convloc_p")]
    pub convloc_p: Vec<f64>,
}

impl Default for GreenConfig {
    fn default() -> Self {
        GreenConfig {
            probe_spacing: None,
            fd_step: None,
            kr_tol: default_kr_tol(),
            n: default_kr_n(),
            test_points: Vec::new(),
            kr_random_starts: default_kr_random_starts(),
            convloc_p: default_convloc_p(),
        }
    }
}

fn default_output_dir() -> String {
    "out".to_string()
}
fn default_ode_tol() -> f64 {
    1e-11
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub h: f64,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub bubble: BubbleConfig,
    #[serde(default)]
    pub green: GreenConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ode_tol")]
    pub ode_tol: f64,
}

pub fn load_config(path: &str) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {path}: {e}"))?;
    serde_json::from_str(&text).map_err(|e| format!("config parse error in {path}: {e}"))
}
