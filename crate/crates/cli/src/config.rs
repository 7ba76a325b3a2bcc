//! Experiment configuration read from a TOML file.
//!
//! Every table rejects unknown keys so a typo fails the run instead of silently
//! falling back to a default.

use serde::{Deserialize, Serialize};
use zpolicy::cftp::{ComfortCoupling, Kernel};
use zpolicy::costs::CostModel;
use zpolicy::heuristic::Shape;
use zpolicy::{build_environment, ChainRates, LoadParams, MarkovEnvironment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ChainSpec {
    /// `[leave0, leave1]`.
    TwoState([f64; 2]),
    BirthDeath { up: Vec<f64>, down: Vec<f64> },
    Single,
    Matrix { states: usize, transitions: Vec<(usize, usize, f64)> },
}

impl ChainSpec {
    pub fn rates(&self) -> Result<ChainRates, String> {
        Ok(match self {
            ChainSpec::TwoState([a, b]) => ChainRates::two_state(*a, *b),
            ChainSpec::BirthDeath { up, down } => {
                if up.len() != down.len() || up.is_empty() {
                    return Err("birth_death needs nonempty up and down of equal length".into());
                }
                ChainRates::birth_death(up, down)
            }
            ChainSpec::Single => ChainRates::single(),
            ChainSpec::Matrix { states, transitions } => ChainRates {
                n_states: *states,
                transitions: transitions.clone(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub heating: f64,
    pub cooling: f64,
    pub comfort_levels: Vec<f64>,
    pub wind: ChainSpec,
    pub comfort: ChainSpec,
    #[serde(default)]
    pub cost_model: CostModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Resolution of the density tables.
    pub grid_step: f64,
    /// Number of intervals of the set-point grid.
    pub curve_intervals: usize,
    pub gamma: f64,
    pub fixed_point_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_step: 0.5,
            curve_intervals: 200,
            gamma: 1e-3,
            fixed_point_tol: 1e-6,
            max_iter: 30,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistributionConfig {
    /// Set-point; the top comfort level when absent.
    pub z: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetPointSource {
    #[default]
    Optimal,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub loads: usize,
    pub jumps: usize,
    pub burn_in: f64,
    pub set_points: SetPointSource,
    /// Snapshot spacing for the trace; no trace when absent.
    pub trace_interval: Option<f64>,
    pub max_trace_rows: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            loads: 100,
            jumps: 100_000,
            burn_in: 0.1,
            set_points: SetPointSource::Optimal,
            trace_interval: None,
            max_trace_rows: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CftpSection {
    pub set_points: Vec<f64>,
    pub samples: usize,
    pub coupling: ComfortCoupling,
    pub time_step: Option<f64>,
    pub max_doublings: usize,
    pub kernel: Kernel,
    pub bandwidth: f64,
}

impl Default for CftpSection {
    fn default() -> Self {
        Self {
            set_points: vec![60.0, 90.0],
            samples: 1000,
            coupling: ComfortCoupling::Shared,
            time_step: None,
            max_doublings: 24,
            kernel: Kernel::Triangular,
            bandwidth: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicSection {
    pub loads: usize,
    pub jumps: usize,
    pub initial_level: u32,
    pub max_level: u32,
    pub epsilon: f64,
    pub delta_j: Option<f64>,
    pub patience: usize,
    pub max_steps_per_level: usize,
    pub max_update: f64,
    pub exploration: f64,
    pub shape: Shape,
}

impl Default for HeuristicSection {
    fn default() -> Self {
        let d = zpolicy::heuristic::RefinementConfig::default();
        Self {
            loads: 50,
            jumps: 100_000,
            initial_level: d.initial_level,
            max_level: d.max_level,
            epsilon: d.epsilon,
            delta_j: d.delta_j,
            patience: d.patience,
            max_steps_per_level: d.max_steps_per_level,
            max_update: d.max_update,
            exploration: d.exploration,
            shape: d.shape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbSection {
    pub horizon: f64,
    pub grid_step: f64,
    pub time_step: Option<f64>,
    /// Surge comparison with the coolest-first heuristic.
    pub loads: usize,
    pub activation: f64,
    pub sim_horizon: f64,
    pub sim_dt: f64,
    pub window: f64,
}

impl Default for HjbSection {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            grid_step: 1.0,
            time_step: None,
            loads: 10,
            activation: 50.0,
            sim_horizon: 2000.0,
            sim_dt: 0.05,
            window: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub loads: Vec<usize>,
    pub jumps: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            loads: vec![10, 100],
            jumps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub distribution: DistributionConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub cftp: CftpSection,
    #[serde(default)]
    pub heuristic: HeuristicSection,
    #[serde(default)]
    pub hjb: HjbSection,
    #[serde(default)]
    pub compare: CompareSection,
}

/// Parsed model ready for the solvers.
pub struct Model {
    pub wind: ChainRates,
    pub comfort: ChainRates,
    pub env: MarkovEnvironment,
    pub params: LoadParams,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let config: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> Result<(), String> {
        let s = &self.solver;
        if !(s.grid_step > 0.0) {
            return Err("solver.grid_step must be positive".into());
        }
        if s.curve_intervals < 2 {
            return Err("solver.curve_intervals must be at least 2".into());
        }
        if !(s.gamma >= 0.0) {
            return Err("solver.gamma must be nonnegative".into());
        }
        if self.simulate.loads == 0 || self.heuristic.loads == 0 || self.compare.loads.contains(&0) {
            return Err("load counts must be positive".into());
        }
        if self.cftp.samples == 0 {
            return Err("cftp.samples must be positive".into());
        }
        self.model().map(|_| ())
    }

    pub fn model(&self) -> Result<Model, String> {
        let m = &self.model;
        let wind = m.wind.rates()?;
        let comfort = m.comfort.rates()?;
        let env = build_environment(&wind, &comfort).map_err(|e| e.to_string())?;
        let params = LoadParams::new(m.heating, m.cooling, m.comfort_levels.clone(), wind.n_states).map_err(|e| e.to_string())?;
        params.check_compatible(&env).map_err(|e| e.to_string())?;
        Ok(Model {
            wind,
            comfort,
            env,
            params,
        })
    }
}
