//! Model-free tuning of the threshold distribution from aggregate cost only.
//!
//! The distribution is restricted to a monotone piecewise-constant or
//! piecewise-linear class on `2^T` equal segments of `[0, Θ_C]`. Each level is
//! adapted with a finite-difference descent driven by a cost oracle, then every
//! segment is split in two and the search continues from the previous optimum.
//! The oracle sees a distribution and returns one number, so nothing about
//! individual loads enters the search.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LoadParams, MarkovEnvironment};
use crate::simulate::{simulate, SimulationConfig};
use crate::variational::{isotonic_regression, ThresholdDistribution};

/// Denominators below this trigger an exploration step instead of a ratio update.
pub const STALL_TOL: f64 = 1e-6;

/// Width used to render a step as a ThresholdDistribution node pair, relative to the range.
const STEP_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    #[default]
    Constant,
    /// Straight lines joining `(midpoint_i, α_i)`, anchored at `0` and `1`
    /// half a segment outside the range.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseDistribution {
    pub lower: f64,
    pub upper: f64,
    pub alphas: Vec<f64>,
    pub shape: Shape,
}

impl PiecewiseDistribution {
    /// `2^level` levels spaced evenly in `(0, 1)`.
    pub fn evenly_spaced(lower: f64, upper: f64, level: u32, shape: Shape) -> Self {
        let n = 1usize << level;
        Self {
            lower,
            upper,
            alphas: (1..=n).map(|i| i as f64 / (n + 1) as f64).collect(),
            shape,
        }
    }

    pub fn level(&self) -> u32 {
        self.alphas.len().trailing_zeros()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alphas.len().is_power_of_two() {
            return Err(Error::NotADistribution(format!("{} levels is not a power of two", self.alphas.len())));
        }
        if !(self.lower < self.upper) {
            return Err(Error::NotADistribution("empty range".into()));
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) || self.alphas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::NotADistribution("levels must be nondecreasing in [0, 1]".into()));
        }
        Ok(())
    }

    /// Closest valid levels: isotonic fit, then clipped to `[0, 1]`.
    pub fn project(mut self) -> Self {
        let (fit, _) = isotonic_regression(&self.alphas, &vec![1.0; self.alphas.len()]);
        self.alphas = fit.into_iter().map(|a| a.clamp(0.0, 1.0)).collect();
        self
    }

    /// Split every segment in two, keeping the levels.
    pub fn refine(&self) -> Self {
        Self {
            alphas: self.alphas.iter().flat_map(|&a| [a, a]).collect(),
            ..self.clone()
        }
    }

    fn width(&self) -> f64 {
        (self.upper - self.lower) / self.alphas.len() as f64
    }

    pub fn to_threshold(&self) -> Result<ThresholdDistribution> {
        self.validate()?;
        let n = self.alphas.len();
        let d = self.width();
        let (mut z, mut u) = (Vec::new(), Vec::new());
        match self.shape {
            Shape::Constant => {
                let eps = STEP_WIDTH * (self.upper - self.lower);
                for (i, &a) in self.alphas.iter().enumerate() {
                    let start = self.lower + i as f64 * d;
                    z.push(start);
                    u.push(a);
                    let end = if i + 1 == n { self.upper } else { start + d - eps };
                    z.push(end);
                    u.push(a);
                }
            }
            Shape::Linear => {
                let knots: Vec<(f64, f64)> = std::iter::once((self.lower - 0.5 * d, 0.0))
                    .chain(self.alphas.iter().enumerate().map(|(i, &a)| (self.lower + (i as f64 + 0.5) * d, a)))
                    .chain(std::iter::once((self.upper + 0.5 * d, 1.0)))
                    .collect();
                let at = |x: f64| {
                    let k = knots.partition_point(|p| p.0 <= x).clamp(1, knots.len() - 1);
                    let (a, b) = (knots[k - 1], knots[k]);
                    a.1 + (x - a.0) / (b.0 - a.0) * (b.1 - a.1)
                };
                z.push(self.lower);
                u.push(at(self.lower));
                for &(x, a) in &knots[1..=n] {
                    z.push(x);
                    u.push(a);
                }
                z.push(self.upper);
                u.push(at(self.upper));
            }
        }
        ThresholdDistribution::from_grid(z, u)
    }

    /// Set-points of `n` loads at the mid-quantiles.
    pub fn set_points(&self, n: usize) -> Result<Vec<f64>> {
        Ok(self.to_threshold()?.quantile_set_points(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub value: f64,
    pub standard_error: f64,
}

/// Average cost of one simulated episode with loads at the mid-quantiles of
/// `dist`. Only the aggregate cost of the run is returned.
pub fn estimate_cost(
    dist: &PiecewiseDistribution,
    episode: &SimulationConfig,
    env: &MarkovEnvironment,
    params: &LoadParams,
    gamma: f64,
) -> Result<CostEstimate> {
    let mut config = episode.clone();
    config.set_points = dist.set_points(episode.set_points.len())?;
    config.record_occupation = false;
    config.trace_interval = None;
    let r = simulate(&config, env, params, gamma)?;
    Ok(CostEstimate {
        value: r.empirical_cost.total,
        standard_error: r.standard_error,
    })
}

/// One finite-difference update of every coordinate.
///
/// Coordinates whose last change is below [`STALL_TOL`] get a random step of
/// size `exploration` instead. The result is projected back onto the monotone
/// levels in `[0, 1]`.
pub fn adapt_step<R: Rng + ?Sized>(
    current: &[f64],
    previous: &[f64],
    j_current: f64,
    j_previous: f64,
    epsilon: f64,
    exploration: f64,
    rng: &mut R,
) -> Vec<f64> {
    let next: Vec<f64> = current
        .iter()
        .zip(previous)
        .map(|(&a, &b)| {
            let delta = a - b;
            if delta.abs() < STALL_TOL {
                a + if rng.random::<bool>() { exploration } else { -exploration }
            } else {
                a - epsilon * (j_current - j_previous) / delta
            }
        })
        .collect();
    project_levels(next)
}

fn project_levels(alphas: Vec<f64>) -> Vec<f64> {
    let (fit, _) = isotonic_regression(&alphas, &vec![1.0; alphas.len()]);
    fit.into_iter().map(|a| a.clamp(0.0, 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub initial_level: u32,
    pub max_level: u32,
    pub epsilon: f64,
    /// Plateau and gain threshold; `None` means 0.5% of the current cost.
    pub delta_j: Option<f64>,
    /// Consecutive small changes that end a level.
    pub patience: usize,
    pub max_steps_per_level: usize,
    /// Largest change of one level in one step.
    pub max_update: f64,
    /// Exploration step as a fraction of the level spacing `1 / (n + 1)`.
    pub exploration: f64,
    pub shape: Shape,
    pub seed: u64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            initial_level: 0,
            max_level: 4,
            epsilon: 3.0,
            delta_j: None,
            patience: 5,
            max_steps_per_level: 40,
            max_update: 0.1,
            exploration: 0.2,
            shape: Shape::Constant,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub level: u32,
    pub alphas: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptationTrace {
    pub steps: Vec<TraceStep>,
    /// `(step, new level)` at each refinement.
    pub refinements: Vec<(usize, u32)>,
    /// Best cost seen when each level finished.
    pub best_per_level: Vec<f64>,
}

impl AdaptationTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,level,cost,alphas")?;
        for s in &self.steps {
            let alphas: Vec<String> = s.alphas.iter().map(|a| a.to_string()).collect();
            writeln!(w, "{},{},{},{}", s.step, s.level, s.cost, alphas.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub best: PiecewiseDistribution,
    pub best_cost: f64,
    pub trace: AdaptationTrace,
}

/// Adapt each level until its cost plateaus, then split the segments, until
/// `max_level` or until a level gains less than the threshold. Coordinates are
/// updated one at a time so each cost difference belongs to one level.
pub fn successive_refinement<F>(range: (f64, f64), config: &RefinementConfig, mut oracle: F) -> Result<RefinementResult>
where
    F: FnMut(&PiecewiseDistribution) -> Result<f64>,
{
    if !(config.epsilon > 0.0) {
        return Err(Error::InvalidParams("epsilon must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = AdaptationTrace::default();
    let mut dist = PiecewiseDistribution::evenly_spaced(range.0, range.1, config.initial_level, config.shape);
    let mut cost = oracle(&dist)?;
    let mut best = (dist.clone(), cost);
    let mut step = 0;
    let threshold = |j: f64| config.delta_j.unwrap_or(0.005 * j.abs());
    trace.steps.push(TraceStep {
        step,
        level: dist.level(),
        alphas: dist.alphas.clone(),
        cost,
    });
    loop {
        let level = dist.level();
        let start_best = best.1;
        let n = dist.alphas.len();
        let explore = config.exploration / (n + 1) as f64;
        // last change of each coordinate: (value before, value after, cost before, cost after)
        let mut memory: Vec<Option<(f64, f64, f64, f64)>> = vec![None; n];
        let mut quiet = 0;
        for k in 0..config.max_steps_per_level {
            let i = k % n;
            let (prev, cur, j_prev, j_cur) = match memory[i] {
                Some(m) => m,
                None => (dist.alphas[i], dist.alphas[i], cost, cost),
            };
            let mut single = adapt_step(&[cur], &[prev], j_cur, j_prev, config.epsilon, explore, &mut rng)[0];
            single = cur + (single - cur).clamp(-config.max_update, config.max_update);
            // continue from where the coordinate currently is
            let from = dist.alphas[i];
            let mut alphas = dist.alphas.clone();
            alphas[i] = from + (single - cur);
            let candidate = PiecewiseDistribution {
                alphas: project_levels(alphas),
                ..dist.clone()
            };
            let new_cost = oracle(&candidate)?;
            step += 1;
            memory[i] = Some((from, candidate.alphas[i], cost, new_cost));
            quiet = if (new_cost - cost).abs() < threshold(cost) { quiet + 1 } else { 0 };
            dist = candidate;
            cost = new_cost;
            if cost < best.1 {
                best = (dist.clone(), cost);
            }
            trace.steps.push(TraceStep {
                step,
                level,
                alphas: dist.alphas.clone(),
                cost,
            });
            if quiet >= config.patience {
                break;
            }
        }
        trace.best_per_level.push(best.1);
        if level >= config.max_level || start_best - best.1 < threshold(start_best) {
            break;
        }
        // warm start from the best distribution so far
        dist = best.0.refine();
        while dist.level() <= level {
            dist = dist.refine();
        }
        cost = oracle(&dist)?;
        step += 1;
        trace.refinements.push((step, dist.level()));
        trace.steps.push(TraceStep {
            step,
            level: dist.level(),
            alphas: dist.alphas.clone(),
            cost,
        });
        if cost < best.1 {
            best = (dist.clone(), cost);
        }
    }
    Ok(RefinementResult {
        best: best.0,
        best_cost: best.1,
        trace,
    })
}

/// Cost oracle backed by simulated episodes with common random numbers.
pub fn simulation_oracle<'a>(
    episode: &'a SimulationConfig,
    env: &'a MarkovEnvironment,
    params: &'a LoadParams,
    gamma: f64,
) -> impl FnMut(&PiecewiseDistribution) -> Result<f64> + 'a {
    move |d| Ok(estimate_cost(d, episode, env, params, gamma)?.value)
}
