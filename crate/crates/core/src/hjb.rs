//! Two-load dynamic programming for the stochastic threshold variation model.
//!
//! Two loads with `ẋ = h - P^w - P^n` share a wind supply `W` (present or not)
//! and a comfort ceiling that switches between levels. A load above the ceiling
//! must draw grid power `M`; a load at the ceiling may not heat past it and a
//! load at `0` may not cool below it. The running cost is `(P^n_1 + P^n_2)²`.
//! The cost-to-go is computed by explicit backward induction with upwind
//! differences; at every cell the controls minimize the upwind Hamiltonian over
//! candidates built from the closed-form argmins (all wind to one load, grid
//! power `½ ∂V` on the load with the larger partial) plus an even wind split,
//! so bang-bang wind allocation is an outcome rather than an assumption.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnvState, LoadParams, MarkovEnvironment};

const EDGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HjbConfig {
    /// Wind power available when the wind blows.
    pub wind_power: f64,
    /// Grid power forced on a load above the ceiling.
    pub max_grid: f64,
    pub horizon: f64,
    pub grid_step: f64,
    pub time_step: f64,
}

impl HjbConfig {
    /// `W = M = h + c` and half the stability bound as time step.
    pub fn new(params: &LoadParams, horizon: f64, grid_step: f64) -> Self {
        let m = params.heating + params.cooling;
        Self {
            wind_power: m,
            max_grid: m,
            horizon,
            grid_step,
            time_step: 0.5 * stability_bound(params, m, grid_step),
        }
    }
}

/// Largest time step allowed for the explicit scheme: `Δx / (h + c + W)`.
pub fn stability_bound(params: &LoadParams, wind_power: f64, grid_step: f64) -> f64 {
    grid_step / (params.heating + params.cooling + wind_power)
}

/// Cost-to-go on `[0, Θ_C]²` for every environment state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub grid: Vec<f64>,
    pub n_states: usize,
    /// Time to go of the stored values.
    pub time_to_go: f64,
    /// `values[(s * n + i) * n + j]` is `V_s(grid[i], grid[j])`.
    pub values: Vec<f64>,
}

impl ValueGrid {
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn at(&self, s: usize, i: usize, j: usize) -> f64 {
        let n = self.n();
        self.values[(s * n + i) * n + j]
    }

    /// Largest `|V(x1, x2) - V(x2, x1)|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for s in 0..self.n_states {
            for i in 0..n {
                for j in 0..i {
                    worst = worst.max((self.at(s, i, j) - self.at(s, j, i)).abs());
                }
            }
        }
        worst
    }

    /// Largest decrease of `V` along either coordinate (zero when componentwise nondecreasing).
    pub fn monotonicity_defect(&self) -> f64 {
        let n = self.n();
        let mut worst: f64 = 0.0;
        for s in 0..self.n_states {
            for i in 0..n {
                for j in 0..n {
                    if i + 1 < n {
                        worst = worst.max(self.at(s, i, j) - self.at(s, i + 1, j));
                    }
                    if j + 1 < n {
                        worst = worst.max(self.at(s, i, j) - self.at(s, i, j + 1));
                    }
                }
            }
        }
        worst
    }

    /// Sup-norm distance to a grid whose step divides this one's.
    pub fn distance_to_finer(&self, finer: &ValueGrid) -> f64 {
        let ratio = (finer.n() - 1) / (self.n() - 1);
        let mut worst: f64 = 0.0;
        for s in 0..self.n_states {
            for i in 0..self.n() {
                for j in 0..self.n() {
                    worst = worst.max((self.at(s, i, j) - finer.at(s, i * ratio, j * ratio)).abs());
                }
            }
        }
        worst
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "state,x1,x2,value")?;
        for s in 0..self.n_states {
            for (i, x1) in self.grid.iter().enumerate() {
                for (j, x2) in self.grid.iter().enumerate() {
                    writeln!(w, "{s},{x1},{x2},{:e}", self.at(s, i, j))?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Allocation {
    pub wind: [f64; 2],
    pub grid: [f64; 2],
    /// Temperature rates under this allocation.
    pub drift: [f64; 2],
    /// Upwind partials `∂V/∂x_k` used for each load.
    pub partial: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPolicy {
    pub grid: Vec<f64>,
    pub n_states: usize,
    pub cells: Vec<Allocation>,
}

impl AllocationPolicy {
    pub fn at(&self, s: usize, i: usize, j: usize) -> &Allocation {
        let n = self.grid.len();
        &self.cells[(s * n + i) * n + j]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "state,x1,x2,wind1,wind2,grid1,grid2")?;
        let n = self.grid.len();
        for s in 0..self.n_states {
            for i in 0..n {
                for j in 0..n {
                    let a = self.at(s, i, j);
                    writeln!(
                        w,
                        "{s},{},{},{},{},{},{}",
                        self.grid[i], self.grid[j], a.wind[0], a.wind[1], a.grid[0], a.grid[1]
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Explicit backward induction, one time step per call to [`HjbSolver::step`].
pub struct HjbSolver {
    grid: Vec<f64>,
    states: Vec<EnvState>,
    generator: DMatrix<f64>,
    params: LoadParams,
    config: HjbConfig,
    values: Vec<f64>,
    steps: usize,
}

impl HjbSolver {
    pub fn new(env: &MarkovEnvironment, params: &LoadParams, config: &HjbConfig) -> Result<Self> {
        params.check_compatible(env)?;
        if env.wind_states() > 2 {
            return Err(Error::InvalidParams("the two-load solver supports wind on/off only".into()));
        }
        if !(config.grid_step > 0.0) || !(config.horizon >= 0.0) || !(config.max_grid >= params.heating) {
            return Err(Error::InvalidParams("grid step, horizon or maximum grid power out of range".into()));
        }
        let bound = stability_bound(params, config.wind_power, config.grid_step);
        if !(config.time_step > 0.0 && config.time_step <= bound) {
            return Err(Error::UnstableScheme {
                time_step: config.time_step,
                bound,
            });
        }
        let top = params.top();
        let cells = top / config.grid_step;
        if (cells - cells.round()).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!("grid step {} does not divide {top}", config.grid_step)));
        }
        let n = cells.round() as usize + 1;
        let grid = (0..n).map(|i| if i + 1 == n { top } else { i as f64 * config.grid_step }).collect();
        Ok(Self {
            grid,
            states: (0..env.n_states()).map(|s| env.state(s)).collect(),
            generator: env.generator.clone(),
            params: params.clone(),
            config: config.clone(),
            values: vec![0.0; env.n_states() * n * n],
            steps: 0,
        })
    }

    fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn time_to_go(&self) -> f64 {
        self.steps as f64 * self.config.time_step
    }

    pub fn values(&self) -> ValueGrid {
        ValueGrid {
            grid: self.grid.clone(),
            n_states: self.states.len(),
            time_to_go: self.time_to_go(),
            values: self.values.clone(),
        }
    }

    /// Best allocation and Hamiltonian value at one cell.
    fn allocate(&self, s: usize, i: usize, j: usize) -> (Allocation, f64) {
        let n = self.n();
        let dx = self.config.grid_step;
        let v = |a: usize, b: usize| self.values[(s * n + a) * n + b];
        let idx = [i, j];
        // one-sided partials, inward at the edges
        let partials = |k: usize| -> (f64, f64) {
            let at = |m: usize| if k == 0 { v(m, j) } else { v(i, m) };
            let m = idx[k];
            let back = if m > 0 { (at(m) - at(m - 1)) / dx } else { (at(1) - at(0)) / dx };
            let fwd = if m + 1 < n { (at(m + 1) - at(m)) / dx } else { back };
            (back, fwd)
        };
        let d = [partials(0), partials(1)];
        let env = self.states[s];
        let ceiling = self.params.comfort_levels[env.comfort];
        let h = self.params.heating;
        let m_grid = self.config.max_grid;
        let wind = if self.params.wind_cooling_rates[env.wind] > 0.0 { self.config.wind_power } else { 0.0 };
        let x = [self.grid[i], self.grid[j]];
        let violating = [x[0] > ceiling + EDGE_TOL, x[1] > ceiling + EDGE_TOL];
        let at_ceiling = [(x[0] - ceiling).abs() <= EDGE_TOL, (x[1] - ceiling).abs() <= EDGE_TOL];
        let at_floor = [i == 0, j == 0];

        // share of the wind offered to load 0; an even split is a candidate too
        let shares: &[f64] = if wind > 0.0 { &[1.0, 0.0, 0.5] } else { &[0.0] };
        let mut best: Option<(Allocation, f64)> = None;
        for &share in shares {
            let mut pw = [share * wind, (1.0 - share) * wind];
            for k in 0..2 {
                if at_floor[k] {
                    pw[k] = pw[k].min(h);
                }
            }
            let mut lb = [0.0; 2];
            let mut ub = [0.0; 2];
            for k in 0..2 {
                if violating[k] {
                    lb[k] = m_grid;
                    ub[k] = m_grid;
                } else {
                    lb[k] = if at_ceiling[k] { (h - pw[k]).max(0.0) } else { 0.0 };
                    ub[k] = if at_floor[k] { (h - pw[k]).max(lb[k]) } else { m_grid.max(lb[k]) };
                }
            }
            let options = |k: usize| -> [f64; 3] {
                let other = lb[1 - k];
                [lb[k], ub[k], (0.5 * d[k].0 - other).clamp(lb[k], ub[k])]
            };
            for g0 in options(0) {
                for g1 in options(1) {
                    let g = [g0, g1];
                    let mut a = Allocation {
                        wind: pw,
                        grid: g,
                        ..Default::default()
                    };
                    let mut ham = (g0 + g1).powi(2);
                    for k in 0..2 {
                        let drift = h - pw[k] - g[k];
                        let partial = if drift > 0.0 { d[k].1 } else { d[k].0 };
                        a.drift[k] = drift;
                        a.partial[k] = partial;
                        ham += drift * partial;
                    }
                    if best.as_ref().is_none_or(|b| ham < b.1) {
                        best = Some((a, ham));
                    }
                }
            }
        }
        best.expect("at least one candidate")
    }

    /// Advance the time to go by one step.
    pub fn step(&mut self) {
        let n = self.n();
        let dt = self.config.time_step;
        let ns = self.states.len();
        let next: Vec<f64> = (0..ns * n * n)
            .into_par_iter()
            .map(|cell| {
                let s = cell / (n * n);
                let (i, j) = ((cell / n) % n, cell % n);
                let (_, ham) = self.allocate(s, i, j);
                let here = self.values[cell];
                let coupling: f64 = (0..ns)
                    .filter(|&t| t != s)
                    .map(|t| self.generator[(t, s)] * (self.values[(t * n + i) * n + j] - here))
                    .sum();
                here + dt * (ham + coupling)
            })
            .collect();
        self.values = next;
        self.steps += 1;
    }

    pub fn policy(&self) -> AllocationPolicy {
        let n = self.n();
        let ns = self.states.len();
        let cells = (0..ns * n * n)
            .into_par_iter()
            .map(|cell| self.allocate(cell / (n * n), (cell / n) % n, cell % n).0)
            .collect();
        AllocationPolicy {
            grid: self.grid.clone(),
            n_states: ns,
            cells,
        }
    }
}

/// Backward induction over the whole horizon (rounded up to whole steps).
pub fn solve_hjb(env: &MarkovEnvironment, params: &LoadParams, config: &HjbConfig) -> Result<(ValueGrid, AllocationPolicy)> {
    let mut solver = HjbSolver::new(env, params, config)?;
    let steps = (config.horizon / config.time_step - 1e-9).ceil().max(0.0) as usize;
    for _ in 0..steps {
        solver.step();
    }
    Ok((solver.values(), solver.policy()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyLabel {
    Synchronizing,
    Desynchronizing,
    Neutral,
}

/// Label each cell by the sign of `d|x1 - x2|/dt` under the policy.
pub fn classify_policy(policy: &AllocationPolicy) -> Vec<PolicyLabel> {
    let n = policy.grid.len();
    policy
        .cells
        .iter()
        .enumerate()
        .map(|(cell, a)| {
            let (i, j) = ((cell / n) % n, cell % n);
            if i == j {
                return PolicyLabel::Neutral;
            }
            let sign = if i > j { 1.0 } else { -1.0 };
            let rate = sign * (a.drift[0] - a.drift[1]);
            if rate > EDGE_TOL {
                PolicyLabel::Desynchronizing
            } else if rate < -EDGE_TOL {
                PolicyLabel::Synchronizing
            } else {
                PolicyLabel::Neutral
            }
        })
        .collect()
}

/// Cells where the wind goes to the cooler load although the other one is hotter.
pub fn cooler_load_gets_wind(policy: &AllocationPolicy) -> Vec<(usize, usize, usize)> {
    let n = policy.grid.len();
    policy
        .cells
        .iter()
        .enumerate()
        .filter_map(|(cell, a)| {
            let (s, i, j) = (cell / (n * n), (cell / n) % n, cell % n);
            let cooler = match i.cmp(&j) {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => 0,
                std::cmp::Ordering::Equal => return None,
            };
            (a.wind[cooler] > 0.0 && a.wind[1 - cooler] == 0.0).then_some((s, i, j))
        })
        .collect()
}

/// Structure of the wind split away from gradient ties.
///
/// A cell is off the tie set when the intervals spanned by the one-sided
/// differences of the two loads are disjoint, so every upwind reading orders
/// the partials the same way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitStructure {
    pub off_tie_cells: usize,
    pub split_cells: usize,
    pub misdirected_cells: usize,
}

impl SplitStructure {
    pub fn is_bang_bang(&self) -> bool {
        self.split_cells == 0 && self.misdirected_cells == 0
    }
}

pub fn split_structure(values: &ValueGrid, policy: &AllocationPolicy) -> SplitStructure {
    let n = values.n();
    let mut out = SplitStructure::default();
    for s in 0..values.n_states {
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let a = policy.at(s, i, j);
                if a.wind[0] + a.wind[1] <= 0.0 {
                    continue;
                }
                let v = values.at(s, i, j);
                let d1 = (v - values.at(s, i - 1, j), values.at(s, i + 1, j) - v);
                let d2 = (v - values.at(s, i, j - 1), values.at(s, i, j + 1) - v);
                let (lo1, hi1) = (d1.0.min(d1.1), d1.0.max(d1.1));
                let (lo2, hi2) = (d2.0.min(d2.1), d2.0.max(d2.1));
                if lo1 <= hi2 && lo2 <= hi1 {
                    continue;
                }
                out.off_tie_cells += 1;
                if a.wind[0] > 0.0 && a.wind[1] > 0.0 {
                    out.split_cells += 1;
                } else {
                    let larger = if lo1 > hi2 { 0 } else { 1 };
                    if a.wind[larger] <= 0.0 {
                        out.misdirected_cells += 1;
                    }
                }
            }
        }
    }
    out
}

/// Per-load power under a state-feedback allocation rule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadPower {
    pub wind: f64,
    pub grid: f64,
}

/// Wind allocation for an ensemble under the hard-ceiling model.
///
/// Each load can use up to `h + c` of wind (`h` at the floor). If the wind covers
/// every load, every load gets its share. Otherwise, when the mean temperature
/// is above `activation`, the wind goes to the coolest loads first; below it,
/// to the hottest first. Loads above the ceiling draw `M` from the grid, loads at
/// the ceiling draw whatever the wind does not cover of `h`.
pub fn coolest_first_heuristic(
    temperatures: &[f64],
    wind_power: f64,
    ceiling: f64,
    params: &LoadParams,
    max_grid: f64,
    activation: f64,
) -> Vec<LoadPower> {
    let h = params.heating;
    let demand = |x: f64| if x <= 0.0 { h } else { h + params.cooling };
    let mut out = vec![LoadPower::default(); temperatures.len()];
    let total: f64 = temperatures.iter().map(|&x| demand(x)).sum();
    if wind_power >= total {
        for (o, &x) in out.iter_mut().zip(temperatures) {
            o.wind = demand(x);
        }
    } else if wind_power > 0.0 {
        let mut order: Vec<usize> = (0..temperatures.len()).collect();
        let mean = temperatures.iter().sum::<f64>() / temperatures.len() as f64;
        if mean > activation {
            order.sort_by(|&a, &b| temperatures[a].total_cmp(&temperatures[b]).then(a.cmp(&b)));
        } else {
            order.sort_by(|&a, &b| temperatures[b].total_cmp(&temperatures[a]).then(a.cmp(&b)));
        }
        let mut left = wind_power;
        for k in order {
            let take = left.min(demand(temperatures[k]));
            out[k].wind = take;
            left -= take;
        }
    }
    for (o, &x) in out.iter_mut().zip(temperatures) {
        if x > ceiling + EDGE_TOL {
            o.grid = max_grid;
        } else if x >= ceiling - EDGE_TOL {
            o.grid = (h - o.wind).max(0.0);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub peak_grid_power: f64,
    pub mean_square_grid_power: f64,
    /// Largest aggregate grid power within `window` after each switch to a lower ceiling.
    pub surge_peaks: Vec<f64>,
}

/// Time-stepped ensemble run under [`coolest_first_heuristic`]; `activation = ∞`
/// gives the synchronizing hottest-first baseline. The environment path depends
/// only on `seed`, so two rules can be compared on the same path.
#[allow(clippy::too_many_arguments)]
pub fn simulate_allocation(
    env: &MarkovEnvironment,
    params: &LoadParams,
    n_loads: usize,
    wind_power: f64,
    max_grid: f64,
    activation: f64,
    horizon: f64,
    dt: f64,
    window: f64,
    seed: u64,
) -> Result<PolicyRun> {
    params.check_compatible(env)?;
    if n_loads == 0 || !(dt > 0.0) || !(horizon > dt) {
        return Err(Error::InvalidParams("need loads, a positive step and a horizon longer than it".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = env.stationary();
    let mut s = {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        pi.iter().position(|&p| {
            acc += p;
            u < acc
        })
        .unwrap_or(pi.len() - 1)
    };
    let top = params.top();
    let mut x: Vec<f64> = (0..n_loads).map(|_| rng.random::<f64>() * top).collect();
    let mut next_jump = env.sample_holding(s, &mut rng);
    let steps = (horizon / dt).ceil() as usize;
    let (mut peak, mut sum_sq) = (0.0f64, 0.0);
    let mut surge_peaks: Vec<f64> = Vec::new();
    let mut surge_until = f64::NEG_INFINITY;
    for k in 0..steps {
        let t = k as f64 * dt;
        while next_jump <= t {
            let from = env.state(s);
            s = env.sample_jump(s, &mut rng);
            let to = env.state(s);
            if to.comfort < from.comfort {
                surge_peaks.push(0.0);
                surge_until = next_jump + window;
            }
            next_jump += env.sample_holding(s, &mut rng);
        }
        let e = env.state(s);
        let ceiling = params.comfort_levels[e.comfort];
        let w = if params.wind_cooling_rates[e.wind] > 0.0 { wind_power } else { 0.0 };
        let power = coolest_first_heuristic(&x, w, ceiling, params, max_grid, activation);
        let grid: f64 = power.iter().map(|p| p.grid).sum();
        peak = peak.max(grid);
        sum_sq += grid * grid;
        if t <= surge_until {
            if let Some(last) = surge_peaks.last_mut() {
                *last = last.max(grid);
            }
        }
        for (xi, p) in x.iter_mut().zip(&power) {
            let mut next = *xi + dt * (params.heating - p.wind - p.grid);
            if *xi <= ceiling + EDGE_TOL {
                // a load inside the comfort range never heats past the ceiling
                next = next.min(ceiling);
            } else {
                next = next.max(ceiling);
            }
            *xi = next.clamp(0.0, top);
        }
    }
    Ok(PolicyRun {
        peak_grid_power: peak,
        mean_square_grid_power: sum_sq / steps as f64,
        surge_peaks,
    })
}
