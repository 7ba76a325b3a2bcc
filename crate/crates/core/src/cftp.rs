//! Perfect sampling of the joint stationary state by coupling from the past.
//!
//! Loads may differ in their parameters and may follow their own comfort chains,
//! in which case the dominance ordering is lost and the cost has to be estimated
//! from joint samples. The environment path on `(-T, 0]` is drawn backwards from
//! its stationary law with the time-reversed chain, one reproducible random
//! stream per `(component, time slot)`, so extending `T` never changes the part of
//! the path already used. Given that path, the temperature update is monotone, so
//! it is enough to run a bottom chain from `0` and a top chain from each set-point
//! until they meet at time `0`.
//!
//! The state space grows geometrically with the number of loads; this is meant
//! for populations of about ten loads or fewer.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::CostReport;
use crate::error::{Error, Result};
use crate::model::{flow, power_draw, reversed_generator, sample_column, stationary_of, ChainRates, EnvState, LoadParams, LoadState};
use crate::variational::ThresholdDistribution;

/// Temperatures closer than this are considered coalesced.
pub const COALESCENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComfortCoupling {
    /// One comfort chain drives every load.
    #[default]
    Shared,
    /// Each load has an independent copy of the comfort chain.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub params: LoadParams,
    pub set_point: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CftpConfig {
    pub loads: Vec<LoadSpec>,
    pub wind: ChainRates,
    pub comfort: ChainRates,
    pub coupling: ComfortCoupling,
    /// Length of one slot of stored randomness.
    pub time_step: f64,
    pub max_doublings: usize,
    pub seed: u64,
}

impl CftpConfig {
    /// Homogeneous loads with the default slot length `0.1 Θ_1 / max(h, c)`.
    pub fn new(params: &LoadParams, set_points: &[f64], wind: ChainRates, comfort: ChainRates, coupling: ComfortCoupling, seed: u64) -> Self {
        let loads: Vec<LoadSpec> = set_points
            .iter()
            .map(|&z| LoadSpec {
                params: params.clone(),
                set_point: z,
            })
            .collect();
        Self {
            time_step: default_time_step(&loads),
            loads,
            wind,
            comfort,
            coupling,
            max_doublings: 24,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.loads.is_empty() {
            return Err(Error::EmptySamples);
        }
        if !(self.time_step > 0.0 && self.time_step.is_finite()) {
            return Err(Error::InvalidParams(format!("time step must be positive, got {}", self.time_step)));
        }
        for load in &self.loads {
            let p = &load.params;
            if p.wind_states() != self.wind.n_states || p.comfort_levels.len() != self.comfort.n_states {
                return Err(Error::InvalidParams("load parameters do not match the environment chains".into()));
            }
            if !(0.0..=p.top()).contains(&load.set_point) {
                return Err(Error::InvalidSetPoint {
                    z: load.set_point,
                    max: p.top(),
                });
            }
        }
        self.wind.generator()?;
        self.comfort.generator()?;
        Ok(())
    }

    fn comfort_components(&self) -> usize {
        match self.coupling {
            ComfortCoupling::Shared => 1,
            ComfortCoupling::Independent => self.loads.len(),
        }
    }
}

pub fn default_time_step(loads: &[LoadSpec]) -> f64 {
    loads
        .iter()
        .map(|l| 0.1 * l.params.comfort_levels[0] / l.params.heating.max(l.params.cooling))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    pub temperatures: Vec<f64>,
    pub wind: usize,
    /// Comfort state of each load.
    pub comfort: Vec<usize>,
    /// Horizon `T` at which the chains coalesced.
    pub horizon: f64,
    pub doublings: usize,
    /// Times the bottom chain was found above the top chain (always zero for a
    /// monotone update).
    pub sandwich_violations: usize,
}

impl JointSample {
    pub fn env(&self, load: usize) -> EnvState {
        EnvState {
            wind: self.wind,
            comfort: self.comfort[load],
        }
    }
}

/// One environment component run backwards by uniformization of its reversed chain.
struct Component {
    pi: Vec<f64>,
    reversed: DMatrix<f64>,
    rate: f64,
}

impl Component {
    fn new(rates: &ChainRates) -> Result<Self> {
        let q = rates.generator()?;
        let pi = stationary_of(&q);
        let reversed = reversed_generator(&q, &pi);
        let rate = (0..reversed.nrows()).map(|i| -reversed[(i, i)]).fold(0.0, f64::max);
        Ok(Self { pi, reversed, rate })
    }
}

/// Forward-time path of one component over one slot.
#[derive(Debug, Clone)]
struct SlotPath {
    entry: usize,
    /// `(offset from slot start, new state)` in increasing offset.
    changes: Vec<(f64, usize)>,
}

fn slot_rng(seed: u64, component: usize, slot: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(component as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(slot as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Stationary environment path on `(-slots * dt, 0]`, extended on demand.
struct EnvPath {
    components: Vec<Component>,
    /// `paths[c][k]` covers `[-(k + 1) dt, -k dt]`.
    paths: Vec<Vec<SlotPath>>,
    /// State of each component at the earliest generated time.
    earliest: Vec<usize>,
    seed: u64,
    dt: f64,
}

impl EnvPath {
    fn new(config: &CftpConfig) -> Result<Self> {
        let mut components = vec![Component::new(&config.wind)?];
        for _ in 0..config.comfort_components() {
            components.push(Component::new(&config.comfort)?);
        }
        // states at time 0, drawn from the stationary laws
        let earliest = components
            .iter()
            .enumerate()
            .map(|(c, comp)| {
                let u: f64 = slot_rng(config.seed, c, usize::MAX).random();
                let mut acc = 0.0;
                comp.pi
                    .iter()
                    .position(|&p| {
                        acc += p;
                        u < acc
                    })
                    .unwrap_or(comp.pi.len() - 1)
            })
            .collect();
        Ok(Self {
            paths: vec![Vec::new(); components.len()],
            components,
            earliest,
            seed: config.seed,
            dt: config.time_step,
        })
    }

    fn extend_to(&mut self, slots: usize) {
        for (c, comp) in self.components.iter().enumerate() {
            while self.paths[c].len() < slots {
                let k = self.paths[c].len();
                let mut rng = slot_rng(self.seed, c, k);
                let mut state = self.earliest[c];
                // backward events: offsets measured from the slot end
                let mut back = Vec::new();
                if comp.rate > 0.0 {
                    let mut t = 0.0;
                    loop {
                        let u: f64 = rng.random();
                        t += -(1.0 - u).ln() / comp.rate;
                        if t >= self.dt {
                            break;
                        }
                        let stay = 1.0 + comp.reversed[(state, state)] / comp.rate;
                        let v: f64 = rng.random();
                        if v < stay {
                            continue;
                        }
                        let earlier = sample_column(&comp.reversed, state, &mut rng);
                        // forward in time the state changes from `earlier` to `state` here
                        back.push((self.dt - t, state));
                        state = earlier;
                    }
                }
                back.reverse();
                self.paths[c].push(SlotPath { entry: state, changes: back });
                self.earliest[c] = state;
            }
        }
    }

    /// Constant-environment intervals of slot `k` as `(duration, states)`.
    fn intervals(&self, k: usize) -> Vec<(f64, Vec<usize>)> {
        let slots: Vec<&SlotPath> = self.paths.iter().map(|p| &p[k]).collect();
        let mut state: Vec<usize> = slots.iter().map(|s| s.entry).collect();
        let mut events: Vec<(f64, usize, usize)> = slots
            .iter()
            .enumerate()
            .flat_map(|(c, s)| s.changes.iter().map(move |&(t, to)| (t, c, to)))
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Vec::with_capacity(events.len() + 1);
        let mut now = 0.0;
        for (t, c, to) in events {
            if t > now {
                out.push((t - now, state.clone()));
                now = t;
            }
            state[c] = to;
        }
        if self.dt > now {
            out.push((self.dt - now, state));
        }
        out
    }
}

fn env_of(states: &[usize], load: usize, coupling: ComfortCoupling) -> EnvState {
    EnvState {
        wind: states[0],
        comfort: match coupling {
            ComfortCoupling::Shared => states[1],
            ComfortCoupling::Independent => states[1 + load],
        },
    }
}

/// Initial horizon in slots: one full traverse of the widest comfort band.
fn initial_slots(config: &CftpConfig) -> usize {
    let traverse = config
        .loads
        .iter()
        .map(|l| l.params.top() / l.params.heating.min(l.params.cooling))
        .fold(0.0, f64::max);
    (traverse / config.time_step).ceil() as usize + 1
}

/// One exact draw from the joint stationary law.
pub fn cftp_sample(config: &CftpConfig) -> Result<JointSample> {
    config.validate()?;
    let mut path = EnvPath::new(config)?;
    let n = config.loads.len();
    let mut slots = initial_slots(config);
    let mut violations = 0;
    for doubling in 0..=config.max_doublings {
        path.extend_to(slots);
        let mut top: Vec<f64> = config.loads.iter().map(|l| l.set_point).collect();
        let mut bottom = vec![0.0; n];
        let mut last_states = Vec::new();
        for k in (0..slots).rev() {
            for (duration, states) in path.intervals(k) {
                for (i, load) in config.loads.iter().enumerate() {
                    let env = env_of(&states, i, config.coupling);
                    let advance = |x: f64| {
                        flow(
                            LoadState {
                                temperature: x,
                                set_point: load.set_point,
                            },
                            env,
                            duration,
                            &load.params,
                        )
                        .end
                    };
                    top[i] = advance(top[i]);
                    bottom[i] = advance(bottom[i]);
                    if bottom[i] > top[i] {
                        violations += 1;
                    }
                }
                last_states = states;
            }
        }
        if top.iter().zip(&bottom).all(|(t, b)| (t - b).abs() <= COALESCENCE_TOL) {
            let comfort = (0..n).map(|i| env_of(&last_states, i, config.coupling).comfort).collect();
            return Ok(JointSample {
                temperatures: top,
                wind: last_states[0],
                comfort,
                horizon: slots as f64 * config.time_step,
                doublings: doubling,
                sandwich_violations: violations,
            });
        }
        slots *= 2;
    }
    Err(Error::NoCoalescence {
        horizon: slots as f64 / 2.0 * config.time_step,
    })
}

/// Independent draws with seeds `seed, seed + 1, ...`, in parallel.
pub fn cftp_samples(config: &CftpConfig, count: usize) -> Result<Vec<JointSample>> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(k);
            cftp_sample(&c)
        })
        .collect()
}

pub fn write_samples_csv<W: Write>(samples: &[JointSample], mut w: W) -> io::Result<()> {
    let n = samples.first().map_or(0, |s| s.temperatures.len());
    let mut header = vec!["sample".to_string(), "wind".to_string()];
    header.extend((0..n).map(|i| format!("comfort_{i}")));
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.push("horizon".into());
    writeln!(w, "{}", header.join(","))?;
    for (k, s) in samples.iter().enumerate() {
        let mut row = vec![k.to_string(), s.wind.to_string()];
        row.extend(s.comfort.iter().map(|c| c.to_string()));
        row.extend(s.temperatures.iter().map(|x| x.to_string()));
        row.push(s.horizon.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCostEstimate {
    pub report: CostReport,
    /// Standard error of `report.total`.
    pub standard_error: f64,
}

/// Monte Carlo estimate of the normalized cost from joint samples.
///
/// Each load draws the Z-policy power of its own state: `h` when parked at its
/// set-point or comfort level, the violation power when above comfort, nothing
/// while drifting freely.
pub fn estimate_joint_cost(samples: &[JointSample], loads: &[LoadSpec], gamma: f64) -> Result<JointCostEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let nf = loads.len() as f64;
    let per_sample: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| {
            let mut grid = 0.0;
            let mut excess = 0.0;
            for (i, load) in loads.iter().enumerate() {
                let state = LoadState {
                    temperature: s.temperatures[i],
                    set_point: load.set_point,
                };
                let env = s.env(i);
                grid += power_draw(state, env, &load.params).grid_power;
                let over = (s.temperatures[i] - load.params.comfort_levels[env.comfort]).max(0.0);
                excess += over * over;
            }
            ((grid / nf).powi(2), excess / nf)
        })
        .collect();
    let m = samples.len() as f64;
    let power = per_sample.iter().map(|p| p.0).sum::<f64>() / m;
    let discomfort = per_sample.iter().map(|p| p.1).sum::<f64>() / m;
    let report = CostReport::new(power, discomfort, gamma);
    let var = if samples.len() > 1 {
        per_sample.iter().map(|(p, d)| (p + gamma * d - report.total).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        f64::INFINITY
    };
    Ok(JointCostEstimate {
        report,
        standard_error: (var / m).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Uniform on `[-b, b]`.
    Box,
    /// Triangular on `[-b, b]`.
    #[default]
    Triangular,
}

impl Kernel {
    /// Distribution function of the kernel with half-width `b`.
    pub fn cdf(self, t: f64, b: f64) -> f64 {
        if t <= -b {
            return 0.0;
        }
        if t >= b {
            return 1.0;
        }
        match self {
            Kernel::Box => (t + b) / (2.0 * b),
            Kernel::Triangular if t < 0.0 => (t + b).powi(2) / (2.0 * b * b),
            Kernel::Triangular => 1.0 - (b - t).powi(2) / (2.0 * b * b),
        }
    }
}

/// Convolve the empirical distribution of `set_points` with a kernel of
/// half-width `bandwidth`, evaluated on `grid`. Mass pushed outside the grid
/// ends up in the boundary jumps.
pub fn smooth_distribution(set_points: &[f64], kernel: Kernel, bandwidth: f64, grid: &[f64]) -> Result<ThresholdDistribution> {
    if set_points.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidParams(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let n = set_points.len() as f64;
    let u = grid
        .iter()
        .map(|&x| set_points.iter().map(|&z| kernel.cdf(x - z, bandwidth)).sum::<f64>() / n)
        .map(|v: f64| v.clamp(0.0, 1.0))
        .collect();
    ThresholdDistribution::from_grid(grid.to_vec(), u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetPointSearch {
    pub set_points: Vec<f64>,
    pub estimate: JointCostEstimate,
    pub evaluations: usize,
}

/// Approximate cost-minimizing set-points by cyclic coordinate descent with a
/// golden-section line search per load. Every evaluation reuses the same
/// `samples` seeds so differences are not swamped by sampling noise.
pub fn optimize_set_points(config: &CftpConfig, gamma: f64, samples: usize, sweeps: usize, line_tol: f64) -> Result<SetPointSearch> {
    config.validate()?;
    let mut current = config.clone();
    let mut evaluations = 0;
    let eval = |c: &CftpConfig, evaluations: &mut usize| -> Result<JointCostEstimate> {
        *evaluations += 1;
        estimate_joint_cost(&cftp_samples(c, samples)?, &c.loads, gamma)
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..sweeps {
        for i in 0..current.loads.len() {
            let (mut a, mut b) = (0.0, current.loads[i].params.top());
            let probe = |z: f64, evaluations: &mut usize| -> Result<f64> {
                let mut c = current.clone();
                c.loads[i].set_point = z;
                Ok(eval(&c, evaluations)?.report.total)
            };
            let mut x1 = b - inv_phi * (b - a);
            let mut x2 = a + inv_phi * (b - a);
            let mut f1 = probe(x1, &mut evaluations)?;
            let mut f2 = probe(x2, &mut evaluations)?;
            while b - a > line_tol {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - inv_phi * (b - a);
                    f1 = probe(x1, &mut evaluations)?;
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + inv_phi * (b - a);
                    f2 = probe(x2, &mut evaluations)?;
                }
            }
            let best = if f1 <= f2 { x1 } else { x2 };
            let mut c = current.clone();
            c.loads[i].set_point = best;
            if eval(&c, &mut evaluations)?.report.total <= eval(&current, &mut evaluations)?.report.total {
                current = c;
            }
        }
    }
    let mut set_points: Vec<f64> = current.loads.iter().map(|l| l.set_point).collect();
    let estimate = eval(&current, &mut evaluations)?;
    set_points.sort_by(f64::total_cmp);
    Ok(SetPointSearch {
        set_points,
        estimate,
        evaluations,
    })
}
