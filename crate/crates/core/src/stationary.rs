//! Stationary law of a single load under a Z-policy.
//!
//! On every open interval between consecutive breakpoints `{0, Θ_j < z, z}` the
//! densities obey `D p' = Q p` with `D` the (constant, invertible) diagonal drift
//! matrix, so `p(x) = exp(D⁻¹Q (x - a)) p(a+)`. Point masses sit at the floor (one
//! per wind-on state) and at each parking temperature `min(z, Θ_j)` (wind off,
//! comfort `j`). Probability balance at a breakpoint `b` reads
//!
//! ```text
//! Q δ_b = D(b+) p(b+) - D(b-) p(b-)
//! ```
//!
//! with the missing side taken as zero at `0` and at `z`. The interval-left
//! densities and all masses are the unknowns of one global linear system, closed
//! by normalization; the system carries exactly one redundant row (the flux
//! `1ᵀ D p` is conserved).

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{exp_and_integral, exp_integrals};
use crate::model::{LoadParams, MarkovEnvironment};

/// A probability atom at one temperature in one environment state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub location: f64,
    pub state: usize,
    pub mass: f64,
}

/// Densities on one interval between breakpoints.
#[derive(Debug, Clone)]
pub struct DensitySegment {
    pub left: f64,
    pub right: f64,
    /// Per-state temperature rate on this interval (diagonal of `D`).
    pub drift: Vec<f64>,
    /// Grid nodes, including both ends.
    pub x: Vec<f64>,
    /// `density[node][state]`.
    pub density: Vec<Vec<f64>>,
    generator_over_drift: DMatrix<f64>,
    left_density: DVector<f64>,
    /// `∫ p`, `∫ (right - x) p` and `∫ (right - x)²/2 p` over the interval.
    moments: [DVector<f64>; 3],
}

impl DensitySegment {
    /// Exact `∫_left^x p(y) dy` per state, for `x` in the segment.
    pub fn partial_integral(&self, x: f64) -> DVector<f64> {
        let t = (x.min(self.right) - self.left).max(0.0);
        if t == 0.0 {
            return DVector::zeros(self.drift.len());
        }
        let (_, int) = exp_and_integral(&self.generator_over_drift, t);
        int * &self.left_density
    }

    /// Per-state `∫ p` over the whole segment.
    pub fn mass(&self) -> &DVector<f64> {
        &self.moments[0]
    }

    /// Per-state `∫ (x - θ)² p dx` for `θ <= left`.
    pub fn squared_excess(&self, theta: f64) -> DVector<f64> {
        let beta = self.right - theta;
        &self.moments[0] * (beta * beta) - &self.moments[1] * (2.0 * beta) + &self.moments[2] * 2.0
    }
}

#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    pub set_point: f64,
    pub wind_states: usize,
    pub comfort_levels: Vec<f64>,
    pub segments: Vec<DensitySegment>,
    pub point_masses: Vec<PointMass>,
}

impl StationaryDistribution {
    pub fn n_states(&self) -> usize {
        self.wind_states * self.comfort_levels.len()
    }

    fn comfort_of(&self, state: usize) -> usize {
        state % self.comfort_levels.len()
    }

    fn wind_of(&self, state: usize) -> usize {
        state / self.comfort_levels.len()
    }

    /// Total continuous mass plus all atoms.
    pub fn total_mass(&self) -> f64 {
        let dens: f64 = self.segments.iter().map(|s| s.mass().sum()).sum();
        dens + self.point_masses.iter().map(|m| m.mass).sum::<f64>()
    }

    /// Mass parked at `min(z, Θ_j)` with wind off and comfort level `j`.
    pub fn parked_mass(&self, comfort: usize) -> f64 {
        let location = self.set_point.min(self.comfort_levels[comfort]);
        self.point_masses
            .iter()
            .filter(|m| self.wind_of(m.state) == 0 && self.comfort_of(m.state) == comfort && m.location == location)
            .map(|m| m.mass)
            .sum()
    }

    /// Mass held at the floor by wind (all wind-on states).
    pub fn floor_mass(&self) -> f64 {
        self.point_masses
            .iter()
            .filter(|m| m.location == 0.0 && self.wind_of(m.state) > 0)
            .map(|m| m.mass)
            .sum()
    }

    /// `P(state, X > Θ_{comfort(state)})`.
    pub fn above_comfort_mass(&self, state: usize) -> f64 {
        let theta = self.comfort_levels[self.comfort_of(state)];
        self.segments
            .iter()
            .filter(|s| s.left >= theta)
            .map(|s| s.mass()[state])
            .sum()
    }

    /// Expected `[(X - Θ_j)⁺]²` restricted to comfort level `j` (all wind states).
    pub fn squared_excess(&self, comfort: usize) -> f64 {
        let theta = self.comfort_levels[comfort];
        let c = self.comfort_levels.len();
        self.segments
            .iter()
            .filter(|s| s.left >= theta)
            .map(|s| {
                let v = s.squared_excess(theta);
                (0..self.wind_states).map(|w| v[w * c + comfort]).sum::<f64>()
            })
            .sum()
    }

    /// Discomfort integral: expected squared excess above the active comfort level.
    pub fn discomfort(&self) -> f64 {
        (0..self.comfort_levels.len()).map(|j| self.squared_excess(j)).sum()
    }

    /// Distinct atom locations with their aggregate mass, ascending.
    pub fn mass_locations(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut atoms = self.point_masses.clone();
        atoms.sort_by(|a, b| a.location.total_cmp(&b.location));
        for m in atoms {
            match out.last_mut() {
                Some(last) if last.0 == m.location => last.1 += m.mass,
                _ => out.push((m.location, m.mass)),
            }
        }
        out
    }

    /// `P(X <= x)` mixing densities and atoms, right-continuous.
    pub fn cdf(&self, x: f64) -> f64 {
        let atoms: f64 = self.point_masses.iter().filter(|m| m.location <= x).map(|m| m.mass).sum();
        let mut dens = 0.0;
        for s in &self.segments {
            if x >= s.right {
                dens += s.mass().sum();
            } else if x > s.left {
                dens += s.partial_integral(x).sum();
            }
        }
        (atoms + dens).min(1.0)
    }

    pub fn write_density_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,state,density")?;
        for seg in &self.segments {
            for (x, row) in seg.x.iter().zip(&seg.density) {
                for (s, p) in row.iter().enumerate() {
                    writeln!(w, "{x},{s},{p:e}")?;
                }
            }
        }
        Ok(())
    }

    pub fn write_mass_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "location,state,mass")?;
        for m in &self.point_masses {
            writeln!(w, "{},{},{:e}", m.location, m.state, m.mass)?;
        }
        Ok(())
    }
}

/// Drift of environment state `s` just right of `x` (for `x` strictly inside the support).
fn interval_drift(params: &LoadParams, comfort_count: usize, s: usize, mid: f64) -> f64 {
    let wind = s / comfort_count;
    let theta = params.comfort_levels[s % comfort_count];
    if mid > theta {
        -params.cooling
    } else if params.wind_cooling_rates[wind] > 0.0 {
        -params.wind_cooling_rates[wind]
    } else {
        params.heating
    }
}

#[derive(Debug, Clone, Copy)]
struct MassSlot {
    breakpoint: usize,
    state: usize,
}

/// Number of unknowns and of balance relations for `W` wind states and `C`
/// comfort levels when the set-point sits at the top comfort level.
pub fn system_dimensions(wind_states: usize, comfort_levels: usize) -> (usize, usize) {
    let (w, c) = (wind_states, comfort_levels);
    (c * c * w + w * c, (c + 1) * w * c)
}

/// Solve the stationary distribution for set-point `z`.
pub fn solve_stationary(z: f64, env: &MarkovEnvironment, params: &LoadParams, grid_step: f64) -> Result<StationaryDistribution> {
    params.check_compatible(env)?;
    let top = params.top();
    if !(0.0..=top).contains(&z) || z.is_nan() {
        return Err(Error::InvalidSetPoint { z, max: top });
    }
    if !(grid_step > 0.0) {
        return Err(Error::InvalidParams(format!("grid step must be positive, got {grid_step}")));
    }
    let n = env.n_states();
    let c_count = env.comfort_levels();
    let w_count = env.wind_states();
    let q = &env.generator;

    if z == 0.0 {
        let pi = env.stationary();
        return Ok(StationaryDistribution {
            set_point: z,
            wind_states: w_count,
            comfort_levels: params.comfort_levels.clone(),
            segments: Vec::new(),
            point_masses: pi
                .iter()
                .enumerate()
                .map(|(state, &mass)| PointMass { location: 0.0, state, mass })
                .collect(),
        });
    }

    let mut ends = vec![0.0];
    ends.extend(params.comfort_levels.iter().copied().filter(|&t| t < z));
    ends.push(z);
    // Long stiff intervals are cut into pieces joined by continuity rows so the
    // propagators stay well conditioned.
    let mut breakpoints = vec![0.0];
    for w in ends.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let norm = (0..n)
            .map(|s| {
                let d = interval_drift(params, c_count, s, mid).abs();
                (0..n).map(|t| q[(s, t)].abs()).sum::<f64>() / d
            })
            .fold(0.0, f64::max);
        let pieces = ((norm * (b - a)) / MAX_PROPAGATOR_NORM).ceil().max(1.0) as usize;
        for i in 1..pieces {
            breakpoints.push(a + (b - a) * i as f64 / pieces as f64);
        }
        breakpoints.push(b);
    }
    let k_count = breakpoints.len() - 1;

    let mut slots = Vec::new();
    for s in 0..n {
        if params.wind_cooling_rates[s / c_count] > 0.0 {
            slots.push(MassSlot { breakpoint: 0, state: s });
        }
    }
    for j in 0..c_count {
        let theta = params.comfort_levels[j];
        let breakpoint = if theta < z {
            breakpoints.iter().position(|&b| b == theta).expect("comfort level is a breakpoint")
        } else {
            k_count
        };
        slots.push(MassSlot { breakpoint, state: j });
    }

    struct Interval {
        drift: DVector<f64>,
        m: DMatrix<f64>,
        exp: DMatrix<f64>,
        moments: [DMatrix<f64>; 3],
    }
    let intervals: Vec<Interval> = (0..k_count)
        .map(|k| {
            let (a, b) = (breakpoints[k], breakpoints[k + 1]);
            let mid = 0.5 * (a + b);
            let drift = DVector::from_iterator(n, (0..n).map(|s| interval_drift(params, c_count, s, mid)));
            let mut m = q.clone();
            for s in 0..n {
                let d = drift[s];
                m.row_mut(s).scale_mut(1.0 / d);
            }
            let ints = exp_integrals(&m, b - a);
            Interval {
                drift,
                m,
                exp: ints.exp,
                moments: [ints.int0, ints.int1, ints.int2],
            }
        })
        .collect();

    let unknowns = k_count * n + slots.len();
    let rows = (k_count + 1) * n + 1;
    let mut a = DMatrix::<f64>::zeros(rows, unknowns);
    let mut rhs = DVector::<f64>::zeros(rows);

    for (si, slot) in slots.iter().enumerate() {
        let col = k_count * n + si;
        for s in 0..n {
            a[(slot.breakpoint * n + s, col)] += q[(s, slot.state)];
        }
    }
    for (k, iv) in intervals.iter().enumerate() {
        // - D(b+) p(b+) at the left breakpoint k
        for s in 0..n {
            a[(k * n + s, k * n + s)] -= iv.drift[s];
        }
        // + D(b-) p(b-) at the right breakpoint k+1
        for s in 0..n {
            for t in 0..n {
                a[((k + 1) * n + s, k * n + t)] += iv.drift[s] * iv.exp[(s, t)];
            }
        }
        for t in 0..n {
            let col_mass: f64 = iv.moments[0].column(t).sum();
            a[(rows - 1, k * n + t)] += col_mass;
        }
    }
    for si in 0..slots.len() {
        a[(rows - 1, k_count * n + si)] = 1.0;
    }
    rhs[rows - 1] = 1.0;

    // balance rows have unit-free scale comparable to normalization after row scaling
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tiny = svd.singular_values.iter().filter(|&&s| s <= 1e-12 * smax).count();
    if tiny > 0 {
        return Err(Error::SingularSystem(format!(
            "{tiny} singular values below tolerance for set-point {z}"
        )));
    }
    let sol = svd
        .solve(&rhs, 1e-14 * smax)
        .map_err(|e| Error::SingularSystem(e.to_string()))?;

    let mut point_masses: Vec<PointMass> = slots
        .iter()
        .enumerate()
        .map(|(si, slot)| PointMass {
            location: breakpoints[slot.breakpoint],
            state: slot.state,
            mass: sol[k_count * n + si],
        })
        .collect();

    let mut segments = Vec::with_capacity(k_count);
    for (k, iv) in intervals.into_iter().enumerate() {
        let (left, right) = (breakpoints[k], breakpoints[k + 1]);
        let p0 = sol.rows(k * n, n).into_owned();
        let nodes = ((right - left) / grid_step).ceil().max(1.0) as usize;
        let h = (right - left) / nodes as f64;
        let step = (iv.m.clone() * h).exp();
        let mut x = Vec::with_capacity(nodes + 1);
        let mut density = Vec::with_capacity(nodes + 1);
        let mut p = p0.clone();
        for node in 0..=nodes {
            x.push(if node == nodes { right } else { left + node as f64 * h });
            density.push(p.iter().copied().collect::<Vec<_>>());
            p = &step * &p;
        }
        let moments = [&iv.moments[0] * &p0, &iv.moments[1] * &p0, &iv.moments[2] * &p0];
        segments.push(DensitySegment {
            left,
            right,
            drift: iv.drift.iter().copied().collect(),
            x,
            density,
            generator_over_drift: iv.m,
            left_density: p0,
            moments,
        });
    }

    clamp_round_off(&mut segments, &mut point_masses)?;

    Ok(StationaryDistribution {
        set_point: z,
        wind_states: w_count,
        comfort_levels: params.comfort_levels.clone(),
        segments,
        point_masses,
    })
}

/// Largest `‖D⁻¹Q‖∞ · length` integrated by one matrix exponential.
const MAX_PROPAGATOR_NORM: f64 = 4.0;

/// Round-off allowed below zero: absolute for point masses, relative to the
/// largest density value for densities. Densities that vanish exactly at `z`
/// come out of the matrix exponential a few 1e-5 of the peak below zero.
const NEGATIVE_TOLERANCE: f64 = 1e-10;
const RELATIVE_NEGATIVE_TOLERANCE: f64 = 1e-4;

fn clamp_round_off(segments: &mut [DensitySegment], masses: &mut [PointMass]) -> Result<()> {
    let mut clamped = false;
    for m in masses.iter_mut() {
        if m.mass < 0.0 {
            if m.mass < -NEGATIVE_TOLERANCE {
                return Err(Error::SingularSystem(format!(
                    "negative point mass {:e} at {}",
                    m.mass, m.location
                )));
            }
            m.mass = 0.0;
            clamped = true;
        }
    }
    let peak = segments
        .iter()
        .flat_map(|s| s.density.iter().flatten())
        .fold(0.0, |m: f64, v| m.max(v.abs()));
    let tol = NEGATIVE_TOLERANCE.max(RELATIVE_NEGATIVE_TOLERANCE * peak);
    for seg in segments.iter_mut() {
        for (x, row) in seg.x.iter().zip(seg.density.iter_mut()) {
            for (state, v) in row.iter_mut().enumerate() {
                if *v < 0.0 {
                    if *v < -tol {
                        return Err(Error::SingularSystem(format!(
                            "negative density {v:e} in state {state} at {x} (peak {peak:e})"
                        )));
                    }
                    *v = 0.0;
                    clamped = true;
                }
            }
        }
    }
    if clamped {
        let total: f64 = segments.iter().map(|s| s.mass().sum()).sum::<f64>() + masses.iter().map(|m| m.mass).sum::<f64>();
        if total > 0.0 {
            for m in masses.iter_mut() {
                m.mass /= total;
            }
            for seg in segments.iter_mut() {
                for row in seg.density.iter_mut() {
                    row.iter_mut().for_each(|v| *v /= total);
                }
                seg.left_density /= total;
                for mom in seg.moments.iter_mut() {
                    *mom /= total;
                }
            }
        }
    }
    Ok(())
}

/// Largest `|1ᵀ D(x) p(x)|` over all grid nodes (both one-sided limits at breakpoints).
pub fn verify_conservation(dist: &StationaryDistribution) -> f64 {
    dist.segments
        .iter()
        .flat_map(|seg| {
            seg.density
                .iter()
                .map(move |row| row.iter().zip(&seg.drift).map(|(p, d)| p * d).sum::<f64>().abs())
        })
        .fold(0.0, f64::max)
}

/// Atom and tail-mass curves as functions of the set-point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointMassCurves {
    pub z_grid: Vec<f64>,
    /// `parked[j][k]`: mass parked at `min(z_k, Θ_j)` with wind off and comfort `j`.
    pub parked: Vec<Vec<f64>>,
    /// `above[s][k]`: `P(state s, X > Θ_{comfort(s)})` at set-point `z_k`.
    pub above: Vec<Vec<f64>>,
    /// Total floor mass at each set-point.
    pub floor: Vec<f64>,
}

impl PointMassCurves {
    /// `δ_z^z`: mass parked at the set-point under the top comfort level.
    pub fn set_point_mass(&self) -> &[f64] {
        self.parked.last().expect("at least one comfort level")
    }

    /// `P(X_z > Θ_1)` summed over states with the lowest comfort level.
    pub fn tail_above_lowest(&self, comfort_levels: usize) -> Vec<f64> {
        (0..self.z_grid.len())
            .map(|k| {
                self.above
                    .iter()
                    .enumerate()
                    .filter(|(s, _)| s % comfort_levels == 0)
                    .map(|(_, v)| v[k])
                    .sum()
            })
            .collect()
    }
}

pub fn point_mass_curves(env: &MarkovEnvironment, params: &LoadParams, z_grid: &[f64], grid_step: f64) -> Result<PointMassCurves> {
    if z_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::UnsortedInput);
    }
    let dists: Vec<StationaryDistribution> = z_grid
        .par_iter()
        .map(|&z| solve_stationary(z, env, params, grid_step))
        .collect::<Result<_>>()?;
    let c = params.comfort_levels.len();
    let n = env.n_states();
    Ok(PointMassCurves {
        z_grid: z_grid.to_vec(),
        parked: (0..c).map(|j| dists.iter().map(|d| d.parked_mass(j)).collect()).collect(),
        above: (0..n).map(|s| dists.iter().map(|d| d.above_comfort_mass(s)).collect()).collect(),
        floor: dists.iter().map(|d| d.floor_mass()).collect(),
    })
}
