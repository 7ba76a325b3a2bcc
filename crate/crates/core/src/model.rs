//! Domain types and single-load Z-policy dynamics.
//!
//! The environment is the joint (wind, comfort-level) Markov chain. States are
//! ordered lexicographically, `index = wind * C + comfort`, so for binary wind and
//! binary comfort the order is `00, 01, 10, 11`. The generator uses the column
//! convention: `Q[(to, from)]` is the rate of the jump `from -> to`, and every
//! column sums to zero.
//!
//! Temperatures are integrated exactly. Drift is piecewise constant in the
//! temperature, so a step of length `dt` splits into at most three constant-rate
//! segments whose end points are computed in closed form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transition rates of one finite Markov chain (wind or comfort).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRates {
    pub n_states: usize,
    /// `(from, to, rate)` triples; unlisted pairs have rate zero.
    pub transitions: Vec<(usize, usize, f64)>,
}

impl ChainRates {
    /// Two-state chain leaving state 0 at `leave0` and state 1 at `leave1`.
    ///
    /// For wind this is `M(q0, q1)`: mean holding time `1/q0` without wind and
    /// `1/q1` with wind. For comfort levels it is `(r1, r2)`.
    pub fn two_state(leave0: f64, leave1: f64) -> Self {
        Self {
            n_states: 2,
            transitions: vec![(0, 1, leave0), (1, 0, leave1)],
        }
    }

    /// Birth-death chain with `up[k]` the rate `k -> k+1` and `down[k]` the rate `k+1 -> k`.
    pub fn birth_death(up: &[f64], down: &[f64]) -> Self {
        assert_eq!(up.len(), down.len(), "birth-death rate vectors differ in length");
        let mut transitions = Vec::with_capacity(2 * up.len());
        for (k, (&u, &d)) in up.iter().zip(down).enumerate() {
            transitions.push((k, k + 1, u));
            transitions.push((k + 1, k, d));
        }
        Self {
            n_states: up.len() + 1,
            transitions,
        }
    }

    /// A chain with a single absorbing state (e.g. a fixed comfort level).
    pub fn single() -> Self {
        Self {
            n_states: 1,
            transitions: Vec::new(),
        }
    }

    pub(crate) fn generator(&self) -> Result<DMatrix<f64>> {
        let n = self.n_states;
        let mut q = DMatrix::zeros(n, n);
        for &(from, to, rate) in &self.transitions {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(Error::NonPositiveRate(rate));
            }
            if from >= n || to >= n || from == to {
                return Err(Error::InvalidParams(format!(
                    "transition {from}->{to} invalid for a {n}-state chain"
                )));
            }
            q[(to, from)] += rate;
            q[(from, from)] -= rate;
        }
        Ok(q)
    }
}

/// Joint wind/comfort environment.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovEnvironment {
    pub wind_rates: ChainRates,
    pub comfort_rates: ChainRates,
    pub generator: DMatrix<f64>,
}

/// Discrete environment state: wind index and comfort-level index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EnvState {
    pub wind: usize,
    pub comfort: usize,
}

/// Assemble the joint generator as the tensor sum of the wind and comfort generators.
pub fn build_environment(wind_rates: &ChainRates, comfort_rates: &ChainRates) -> Result<MarkovEnvironment> {
    if wind_rates.n_states < 2 {
        return Err(Error::InvalidParams("at least two wind states required".into()));
    }
    if comfort_rates.n_states < 1 {
        return Err(Error::InvalidParams("at least one comfort level required".into()));
    }
    assemble(wind_rates, comfort_rates)
}

fn assemble(wind_rates: &ChainRates, comfort_rates: &ChainRates) -> Result<MarkovEnvironment> {
    let qw = wind_rates.generator()?;
    let qc = comfort_rates.generator()?;
    let (w, c) = (qw.nrows(), qc.nrows());
    let iw = DMatrix::<f64>::identity(w, w);
    let ic = DMatrix::<f64>::identity(c, c);
    let generator = qw.kronecker(&ic) + iw.kronecker(&qc);
    Ok(MarkovEnvironment {
        wind_rates: wind_rates.clone(),
        comfort_rates: comfort_rates.clone(),
        generator,
    })
}

impl MarkovEnvironment {
    /// Degenerate environment in which wind never blows (a single wind state).
    pub fn windless(comfort_rates: &ChainRates) -> Result<Self> {
        assemble(&ChainRates::single(), comfort_rates)
    }

    pub fn wind_states(&self) -> usize {
        self.wind_rates.n_states
    }

    pub fn comfort_levels(&self) -> usize {
        self.comfort_rates.n_states
    }

    pub fn n_states(&self) -> usize {
        self.generator.nrows()
    }

    pub fn index(&self, s: EnvState) -> usize {
        s.wind * self.comfort_levels() + s.comfort
    }

    pub fn state(&self, index: usize) -> EnvState {
        let c = self.comfort_levels();
        EnvState {
            wind: index / c,
            comfort: index % c,
        }
    }

    pub fn exit_rate(&self, index: usize) -> f64 {
        -self.generator[(index, index)]
    }

    /// Largest absolute deviation of a column sum from zero.
    pub fn column_sum_residual(&self) -> f64 {
        (0..self.n_states())
            .map(|j| self.generator.column(j).sum().abs())
            .fold(0.0, f64::max)
    }

    /// Stationary law of the environment chain.
    pub fn stationary(&self) -> Vec<f64> {
        stationary_of(&self.generator)
    }

    /// Sample the successor of `index` at a jump.
    pub fn sample_jump<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> usize {
        sample_column(&self.generator, index, rng)
    }

    /// Sample an exponential holding time in `index`; infinite if absorbing.
    pub fn sample_holding<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> f64 {
        let rate = self.exit_rate(index);
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        let u: f64 = rng.random();
        -(1.0 - u).ln() / rate
    }
}

/// Stationary distribution of a generator in column convention.
pub fn stationary_of(q: &DMatrix<f64>) -> Vec<f64> {
    let n = q.nrows();
    let mut a = q.clone();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .unwrap_or_else(|| DVector::from_element(n, 1.0 / n as f64));
    pi.iter().map(|&p| p.max(0.0)).collect()
}

/// Time-reversed generator with respect to the stationary law `pi`.
pub fn reversed_generator(q: &DMatrix<f64>, pi: &[f64]) -> DMatrix<f64> {
    let n = q.nrows();
    let mut r = DMatrix::zeros(n, n);
    for from in 0..n {
        for to in 0..n {
            if from != to && pi[from] > 0.0 {
                // reversed rate from -> to equals pi[to] * Q(to -> from) / pi[from]
                r[(to, from)] = pi[to] * q[(from, to)] / pi[from];
            }
        }
        let out: f64 = (0..n).filter(|&t| t != from).map(|t| r[(t, from)]).sum();
        r[(from, from)] = -out;
    }
    r
}

pub(crate) fn sample_column<R: Rng + ?Sized>(q: &DMatrix<f64>, index: usize, rng: &mut R) -> usize {
    let rate = -q[(index, index)];
    let mut u: f64 = rng.random::<f64>() * rate;
    let mut last = index;
    for to in 0..q.nrows() {
        if to == index {
            continue;
        }
        let r = q[(to, index)];
        if r <= 0.0 {
            continue;
        }
        last = to;
        if u < r {
            return to;
        }
        u -= r;
    }
    last
}

/// Physical parameters of a (homogeneous) load population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    /// Heating rate `h` without power.
    pub heating: f64,
    /// Maximum net cooling rate `c`.
    pub cooling: f64,
    /// Upper comfort levels, strictly increasing.
    pub comfort_levels: Vec<f64>,
    /// Net cooling rate available from wind in each wind state, `i*c/(W-1)`.
    pub wind_cooling_rates: Vec<f64>,
}

impl LoadParams {
    pub fn new(heating: f64, cooling: f64, comfort_levels: Vec<f64>, wind_states: usize) -> Result<Self> {
        if !(heating > 0.0 && heating.is_finite()) {
            return Err(Error::InvalidParams(format!("heating rate must be positive, got {heating}")));
        }
        if !(cooling > 0.0 && cooling.is_finite()) {
            return Err(Error::InvalidParams(format!("cooling rate must be positive, got {cooling}")));
        }
        if comfort_levels.is_empty() {
            return Err(Error::InvalidParams("no comfort levels".into()));
        }
        if !(comfort_levels[0] > 0.0) {
            return Err(Error::InvalidParams("lowest comfort level must be above 0".into()));
        }
        if comfort_levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParams("comfort levels must be strictly increasing".into()));
        }
        if wind_states == 0 {
            return Err(Error::InvalidParams("no wind states".into()));
        }
        let wind_cooling_rates = if wind_states == 1 {
            vec![0.0]
        } else {
            (0..wind_states)
                .map(|i| {
                    if i + 1 == wind_states {
                        cooling
                    } else {
                        i as f64 * cooling / (wind_states - 1) as f64
                    }
                })
                .collect()
        };
        Ok(Self {
            heating,
            cooling,
            comfort_levels,
            wind_cooling_rates,
        })
    }

    /// Highest comfort level `Θ_C`.
    pub fn top(&self) -> f64 {
        *self.comfort_levels.last().expect("validated non-empty")
    }

    pub fn wind_states(&self) -> usize {
        self.wind_cooling_rates.len()
    }

    /// Grid power needed to hold maximum cooling above comfort in wind state `wind`.
    pub fn violation_grid_power(&self, wind: usize) -> f64 {
        if wind == 0 {
            self.heating + self.cooling
        } else {
            (self.cooling - self.wind_cooling_rates[wind]).max(0.0)
        }
    }

    pub fn check_compatible(&self, env: &MarkovEnvironment) -> Result<()> {
        if env.wind_states() != self.wind_states() || env.comfort_levels() != self.comfort_levels.len() {
            return Err(Error::InvalidParams(format!(
                "environment has {}x{} states but parameters describe {}x{}",
                env.wind_states(),
                env.comfort_levels(),
                self.wind_states(),
                self.comfort_levels.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadState {
    pub temperature: f64,
    pub set_point: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerDraw {
    pub wind_power: f64,
    pub grid_power: f64,
}

/// Instantaneous temperature rate under the Z-policy.
pub fn z_policy_drift(state: LoadState, env: EnvState, params: &LoadParams) -> f64 {
    let x = state.temperature;
    let ceiling = params.comfort_levels[env.comfort];
    if x > ceiling {
        return -params.cooling;
    }
    let rate = params.wind_cooling_rates[env.wind];
    if rate > 0.0 {
        if x > 0.0 {
            -rate
        } else {
            0.0
        }
    } else if x < state.set_point.min(ceiling) {
        params.heating
    } else {
        0.0
    }
}

/// Instantaneous wind and grid power drawn under the Z-policy.
pub fn power_draw(state: LoadState, env: EnvState, params: &LoadParams) -> PowerDraw {
    let x = state.temperature;
    let ceiling = params.comfort_levels[env.comfort];
    let rate = params.wind_cooling_rates[env.wind];
    let h = params.heating;
    if x > ceiling {
        return PowerDraw {
            wind_power: if rate > 0.0 { h + rate } else { 0.0 },
            grid_power: params.violation_grid_power(env.wind),
        };
    }
    if rate > 0.0 {
        PowerDraw {
            wind_power: if x > 0.0 { h + rate } else { h },
            grid_power: 0.0,
        }
    } else if x < state.set_point.min(ceiling) {
        PowerDraw::default()
    } else {
        // parked at (or held above) min(Z, Θ_M)
        PowerDraw {
            wind_power: 0.0,
            grid_power: h,
        }
    }
}

/// One constant-rate piece of a load trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Segment {
    pub start: f64,
    pub duration: f64,
    pub drift: f64,
    pub power: PowerDraw,
}

/// Exact trajectory of one load over a step with a fixed environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    pub end: f64,
    segments: [Segment; 3],
    len: usize,
}

impl Flow {
    pub fn segments(&self) -> &[Segment] {
        &self.segments[..self.len]
    }

    fn push(&mut self, start: f64, duration: f64, drift: f64, power: PowerDraw) {
        if duration > 0.0 {
            self.segments[self.len] = Segment {
                start,
                duration,
                drift,
                power,
            };
            self.len += 1;
        }
    }
}

/// Integrate one load exactly over `dt` with the environment held at `env`.
///
/// Event hits (comfort ceiling, set-point, floor) are detected on the candidate
/// position so the map `x -> end` is nondecreasing in `x` and in the set-point,
/// which is what keeps ensembles monotonically coupled in floating point.
pub fn flow(state: LoadState, env: EnvState, dt: f64, params: &LoadParams) -> Flow {
    let h = params.heating;
    let c = params.cooling;
    let ceiling = params.comfort_levels[env.comfort];
    let rate = params.wind_cooling_rates[env.wind];
    let mut out = Flow {
        end: state.temperature,
        segments: [Segment::default(); 3],
        len: 0,
    };
    let mut x = state.temperature;
    let mut rest = dt;

    if x > ceiling {
        let power = PowerDraw {
            wind_power: if rate > 0.0 { h + rate } else { 0.0 },
            grid_power: params.violation_grid_power(env.wind),
        };
        let candidate = x - c * rest;
        if candidate > ceiling {
            out.push(x, rest, -c, power);
            out.end = candidate;
            return out;
        }
        let tau = ((x - ceiling) / c).min(rest);
        out.push(x, tau, -c, power);
        x = ceiling;
        rest -= tau;
    }

    if rate > 0.0 {
        if x > 0.0 {
            let power = PowerDraw {
                wind_power: h + rate,
                grid_power: 0.0,
            };
            let candidate = x - rate * rest;
            if candidate > 0.0 {
                out.push(x, rest, -rate, power);
                out.end = candidate;
                return out;
            }
            let tau = (x / rate).min(rest);
            out.push(x, tau, -rate, power);
            x = 0.0;
            rest -= tau;
        }
        out.push(
            x,
            rest,
            0.0,
            PowerDraw {
                wind_power: h,
                grid_power: 0.0,
            },
        );
        out.end = x;
        return out;
    }

    let target = state.set_point.min(ceiling);
    if x < target {
        let candidate = x + h * rest;
        if candidate < target {
            out.push(x, rest, h, PowerDraw::default());
            out.end = candidate;
            return out;
        }
        let tau = ((target - x) / h).min(rest);
        out.push(x, tau, h, PowerDraw::default());
        x = target;
        rest -= tau;
    }
    out.push(
        x,
        rest,
        0.0,
        PowerDraw {
            wind_power: 0.0,
            grid_power: h,
        },
    );
    out.end = x;
    out
}

/// Advance every load by `dt` under a constant environment.
pub fn step_ensemble(states: &[LoadState], env: EnvState, dt: f64, params: &LoadParams) -> Vec<LoadState> {
    states
        .iter()
        .map(|&s| LoadState {
            temperature: flow(s, env, dt, params).end,
            set_point: s.set_point,
        })
        .collect()
}
