//! Optimal set-point distributions in the continuum limit.
//!
//! The continuum cost is `∫ w (u - u_EL)² + const`, so the optimum over
//! nondecreasing `u` with values in `[0, 1]` is the weighted isotonic regression
//! of `u_EL`, clipped to the unit interval. Pool-adjacent-violators produces
//! exactly the equal-area plateaus `∫ (κ - u_EL) w = 0` of the minimum-principle
//! construction.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::costs::{trapezoid_weights, SensitivityCurves};
use crate::error::{Error, Result};

const MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub location: f64,
    pub left: f64,
    pub right: f64,
}

/// Fraction of loads with set-point at or below `z`.
///
/// Stored as node values on a grid (piecewise linear in between). The values at
/// the first and last node are interior limits; the distribution itself is `0`
/// just left of the first node and `1` at the last, so boundary jumps carry any
/// mass located exactly at `0` or at the top comfort level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDistribution {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub jumps: Vec<Jump>,
}

impl ThresholdDistribution {
    pub fn from_grid(z: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let mut d = Self { z, u, jumps: Vec::new() };
        d.validate()?;
        d.jumps = d.boundary_jumps();
        Ok(d)
    }

    /// Uniform distribution of set-points on `[0, top]`.
    pub fn uniform(top: f64, intervals: usize) -> Self {
        let z = crate::costs::uniform_grid(top, intervals);
        let u = z.iter().map(|x| x / top).collect();
        Self::from_grid(z, u).expect("uniform distribution is valid")
    }

    fn boundary_jumps(&self) -> Vec<Jump> {
        let mut out = Vec::new();
        let (first, last) = (self.u[0], *self.u.last().expect("non-empty"));
        if first > 0.0 {
            out.push(Jump { location: self.z[0], left: 0.0, right: first });
        }
        if last < 1.0 {
            out.push(Jump {
                location: *self.z.last().expect("non-empty"),
                left: last,
                right: 1.0,
            });
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.z.len() < 2 || self.z.len() != self.u.len() {
            return Err(Error::NotADistribution("need at least two nodes with one value each".into()));
        }
        if self.z.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::NotADistribution("grid not strictly increasing".into()));
        }
        if let Some(x) = self.u.iter().find(|&&x| !(-MONOTONE_TOL..=1.0 + MONOTONE_TOL).contains(&x)) {
            return Err(Error::NotADistribution(format!("value {x} outside [0, 1]")));
        }
        if self.u.windows(2).any(|w| w[1] < w[0] - MONOTONE_TOL) {
            return Err(Error::NotADistribution("values decrease".into()));
        }
        Ok(())
    }

    pub fn top(&self) -> f64 {
        *self.z.last().expect("non-empty")
    }

    /// Interpolated node values, constant beyond the grid.
    pub fn interior_value(&self, x: f64) -> f64 {
        let z = &self.z;
        if x <= z[0] {
            return self.u[0];
        }
        if x >= self.top() {
            return *self.u.last().expect("non-empty");
        }
        let k = z.partition_point(|&g| g <= x) - 1;
        let t = (x - z[k]) / (z[k + 1] - z[k]);
        self.u[k] + t * (self.u[k + 1] - self.u[k])
    }

    /// Fraction of set-points `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < self.z[0] {
            0.0
        } else if x >= self.top() {
            1.0
        } else {
            self.interior_value(x)
        }
    }

    /// Smallest `z` with `cdf(z) >= p`.
    pub fn quantile(&self, p: f64) -> f64 {
        if p <= self.u[0] {
            return self.z[0];
        }
        let last = self.u.len() - 1;
        if p > self.u[last] {
            return self.top();
        }
        let k = self.u.partition_point(|&v| v < p);
        // u[k-1] < p <= u[k]
        let (u0, u1) = (self.u[k - 1], self.u[k]);
        let t = (p - u0) / (u1 - u0);
        self.z[k - 1] + t * (self.z[k] - self.z[k - 1])
    }

    /// Set-points of `n` loads at the mid-quantiles `(i - 1/2)/n`.
    pub fn quantile_set_points(&self, n: usize) -> Vec<f64> {
        (1..=n).map(|i| self.quantile((i as f64 - 0.5) / n as f64)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "z,u,kind")?;
        let bottom = self.jumps.iter().find(|j| j.location == self.z[0]);
        if let Some(j) = bottom {
            writeln!(w, "{},{},jump_left", j.location, j.left)?;
        }
        for (z, u) in self.z.iter().zip(&self.u) {
            writeln!(w, "{z},{u},node")?;
        }
        for j in self.jumps.iter().filter(|j| j.location != self.z[0]) {
            writeln!(w, "{},{},jump_right", j.location, j.right)?;
        }
        Ok(())
    }
}

/// Euler–Lagrange candidate on the curve grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EulerLagrange {
    pub z: Vec<f64>,
    pub raw: Vec<f64>,
    /// `raw` clipped to `[0, 1]`.
    pub clamped: Vec<f64>,
    pub weight: Vec<f64>,
}

/// Pointwise candidate for general wind and comfort structure; `v` holds the
/// fractions at the intermediate comfort levels (empty for `C <= 2`).
pub fn multiwind_euler_lagrange(curves: &SensitivityCurves, gamma: f64, v: &[f64]) -> EulerLagrange {
    let raw = curves.raw_euler_lagrange(gamma, v);
    EulerLagrange {
        z: curves.z_grid.clone(),
        clamped: raw.iter().map(|x| x.clamp(0.0, 1.0)).collect(),
        raw,
        weight: curves.weight(),
    }
}

pub fn euler_lagrange(curves: &SensitivityCurves, gamma: f64) -> EulerLagrange {
    multiwind_euler_lagrange(curves, gamma, &[])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledBlock {
    pub start: usize,
    pub end: usize,
    /// Unclipped plateau level.
    pub level: f64,
    /// `Σ ω w (κ - u_EL)` over the block.
    pub residual: f64,
    /// `Σ ω w` over the block.
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Projection {
    pub distribution: ThresholdDistribution,
    pub blocks: Vec<PooledBlock>,
    /// `λ(z) = -2 ∫_0^z (u* - u_EL) w`, trapezoid-node sums.
    pub costate: Vec<f64>,
}

impl Projection {
    pub fn value_at(&self, x: f64) -> f64 {
        self.distribution.interior_value(x)
    }
}

/// Weighted isotonic regression by pool-adjacent-violators. Zero-weight points are
/// fitted to the value on their left (or right, at the start).
pub fn isotonic_regression(y: &[f64], weights: &[f64]) -> (Vec<f64>, Vec<PooledBlock>) {
    assert_eq!(y.len(), weights.len());
    struct Block {
        start: usize,
        end: usize,
        sum_wy: f64,
        sum_w: f64,
        // exact for a single weighted point so feasible input is a fixed point
        level: f64,
    }
    let mut stack: Vec<Block> = Vec::new();
    for (i, (&yi, &wi)) in y.iter().zip(weights).enumerate() {
        let wi = wi.max(0.0);
        if wi == 0.0 {
            if let Some(top) = stack.last_mut() {
                top.end = i;
                continue;
            }
        }
        let mut b = Block {
            start: i,
            end: i,
            sum_wy: wi * yi,
            sum_w: wi,
            level: yi,
        };
        while let Some(prev) = stack.last() {
            let violated = prev.sum_w == 0.0 || b.sum_w > 0.0 && prev.level > b.level;
            if !violated {
                break;
            }
            let prev = stack.pop().expect("checked");
            let (sum_wy, sum_w) = (prev.sum_wy + b.sum_wy, prev.sum_w + b.sum_w);
            b = Block {
                start: prev.start,
                end: b.end,
                sum_wy,
                sum_w,
                level: if prev.sum_w == 0.0 { b.level } else { sum_wy / sum_w },
            };
        }
        stack.push(b);
    }
    let mut fit = vec![0.0; y.len()];
    let mut blocks = Vec::with_capacity(stack.len());
    for b in &stack {
        let level = b.level;
        let residual: f64 = (b.start..=b.end).map(|i| weights[i].max(0.0) * (level - y[i])).sum();
        fit[b.start..=b.end].iter_mut().for_each(|f| *f = level);
        blocks.push(PooledBlock {
            start: b.start,
            end: b.end,
            level,
            residual,
            weight: b.sum_w,
        });
    }
    (fit, blocks)
}

/// Minimizer of `Σ ω w (u - u_EL)²` over nondecreasing `u` with values in `[0, 1]`.
pub fn project(z: &[f64], u_el: &[f64], w: &[f64]) -> Result<Projection> {
    if z.len() != u_el.len() || z.len() != w.len() || z.len() < 2 {
        return Err(Error::InvalidParams("projection inputs differ in length".into()));
    }
    let omega = trapezoid_weights(z);
    let weights: Vec<f64> = omega.iter().zip(w).map(|(o, w)| o * w.max(0.0)).collect();
    let (fit, blocks) = isotonic_regression(u_el, &weights);
    let u: Vec<f64> = fit.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let mut distribution = ThresholdDistribution::from_grid(z.to_vec(), u.clone())?;
    for pair in blocks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (left, right) = (u[a.end], u[b.start]);
        if a.end > a.start && right > left {
            distribution.jumps.push(Jump {
                location: 0.5 * (z[a.end] + z[b.start]),
                left,
                right,
            });
        }
    }
    distribution.jumps.sort_by(|a, b| a.location.total_cmp(&b.location));
    let mut costate = Vec::with_capacity(z.len());
    let mut acc = 0.0;
    for l in 0..z.len() {
        acc += weights[l] * (u[l] - u_el[l]);
        costate.push(-2.0 * acc);
    }
    Ok(Projection {
        distribution,
        blocks: blocks.into_iter().filter(|b| b.end > b.start).collect(),
        costate,
    })
}

/// Project the Euler–Lagrange candidate of `curves` (raw, so the result is the true optimum).
pub fn optimal_distribution(curves: &SensitivityCurves, gamma: f64, v: &[f64]) -> Result<Projection> {
    let el = multiwind_euler_lagrange(curves, gamma, v);
    project(&el.z, &el.raw, &el.weight)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointStep {
    /// Comfort-level coordinate updated (0 for the three-level case).
    pub coordinate: usize,
    pub v: f64,
    /// Projected value at the comfort level for this `v`.
    pub image: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub v: Vec<f64>,
    pub residuals: Vec<f64>,
    pub projection: Projection,
    pub trace: Vec<FixedPointStep>,
}

fn image(curves: &SensitivityCurves, gamma: f64, v: &[f64], coordinate: usize) -> Result<(f64, Projection)> {
    let p = optimal_distribution(curves, gamma, v)?;
    let theta = curves.params.comfort_levels[coordinate + 1];
    Ok((p.value_at(theta), p))
}

/// Bracketed bisection on one coordinate; the bracket halves every step.
fn bisect_coordinate(
    curves: &SensitivityCurves,
    gamma: f64,
    v: &mut [f64],
    coordinate: usize,
    tol: f64,
    max_iter: usize,
    trace: &mut Vec<FixedPointStep>,
) -> Result<f64> {
    let (p0, _) = image(curves, gamma, v, coordinate)?;
    let v0 = v[coordinate];
    let (mut lower, mut upper) = (v0.min(p0), v0.max(p0));
    trace.push(FixedPointStep { coordinate, v: v0, image: p0, lower, upper });
    if (p0 - v0).abs() <= tol {
        return Ok((p0 - v0).abs());
    }
    for _ in 0..max_iter {
        let vn = 0.5 * (lower + upper);
        v[coordinate] = vn;
        let (p, _) = image(curves, gamma, v, coordinate)?;
        upper = upper.min(vn.max(p));
        lower = lower.max(vn.min(p));
        trace.push(FixedPointStep { coordinate, v: vn, image: p, lower, upper });
        if (p - vn).abs() <= tol {
            return Ok((p - vn).abs());
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        bracket: upper - lower,
    })
}

/// Fixed point `v_j = 𝒫[u_EL(·, v)](Θ_{j+1})` for the intermediate comfort levels.
/// With three levels this is a single bracketed bisection; with more, coordinates
/// are swept round-robin until every residual is within `tol`.
pub fn fixed_point(curves: &SensitivityCurves, gamma: f64, v0: &[f64], tol: f64, max_iter: usize) -> Result<FixedPointResult> {
    let n_v = curves.params.comfort_levels.len().saturating_sub(2);
    if v0.len() != n_v {
        return Err(Error::InvalidParams(format!("expected {n_v} starting fractions, got {}", v0.len())));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParams("tolerance must be positive".into()));
    }
    let mut v: Vec<f64> = v0.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let mut trace = Vec::new();
    if n_v == 0 {
        let projection = optimal_distribution(curves, gamma, &v)?;
        return Ok(FixedPointResult { v, residuals: Vec::new(), projection, trace });
    }
    for _sweep in 0..max_iter {
        for j in 0..n_v {
            bisect_coordinate(curves, gamma, &mut v, j, tol, max_iter, &mut trace)?;
        }
        let mut residuals = Vec::with_capacity(n_v);
        let mut projection = None;
        for j in 0..n_v {
            let (p, proj) = image(curves, gamma, &v, j)?;
            residuals.push((p - v[j]).abs());
            projection = Some(proj);
        }
        if residuals.iter().all(|&r| r <= tol) {
            return Ok(FixedPointResult {
                v,
                residuals,
                projection: projection.expect("at least one coordinate"),
                trace,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        bracket: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pava_pools_a_decreasing_pair() {
        let (fit, blocks) = isotonic_regression(&[1.0, 3.0, 2.0, 4.0], &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(fit, vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(blocks.len(), 3);
    }

    #[test]
    fn pava_respects_weights() {
        let (fit, _) = isotonic_regression(&[2.0, 0.0], &[3.0, 1.0]);
        assert!((fit[0] - 1.5).abs() < 1e-15 && (fit[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_takes_left_value() {
        let (fit, _) = isotonic_regression(&[0.2, 0.9, 0.1, 0.5], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(fit[1], fit[0]);
        assert_eq!(fit[2], fit[0]);
        let (fit, _) = isotonic_regression(&[0.7, 0.1], &[0.0, 1.0]);
        assert_eq!(fit, vec![0.1, 0.1]);
    }

    #[test]
    fn constant_candidate_projects_to_itself_with_boundary_jumps() {
        let z: Vec<f64> = (0..=10).map(|k| k as f64 * 10.0).collect();
        let p = project(&z, &[0.5; 11], &[1.0; 11]).unwrap();
        assert!(p.distribution.u.iter().all(|&u| u == 0.5));
        let jumps = &p.distribution.jumps;
        assert_eq!(jumps.len(), 2);
        assert_eq!((jumps[0].location, jumps[0].left, jumps[0].right), (0.0, 0.0, 0.5));
        assert_eq!((jumps[1].location, jumps[1].left, jumps[1].right), (100.0, 0.5, 1.0));
    }

    #[test]
    fn quantiles_of_uniform() {
        let u = ThresholdDistribution::uniform(100.0, 50);
        let z = u.quantile_set_points(4);
        for (a, b) in z.iter().zip([12.5, 37.5, 62.5, 87.5]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn quantile_inside_jump() {
        let d = ThresholdDistribution::from_grid(vec![0.0, 50.0, 100.0], vec![0.3, 0.3, 0.6]).unwrap();
        assert_eq!(d.quantile(0.1), 0.0);
        assert_eq!(d.quantile(0.9), 100.0);
        assert!((d.quantile(0.45) - 75.0).abs() < 1e-12);
        assert_eq!(d.cdf(-1.0), 0.0);
        assert_eq!(d.cdf(100.0), 1.0);
    }

    #[test]
    fn decreasing_values_rejected() {
        let r = ThresholdDistribution::from_grid(vec![0.0, 1.0], vec![0.5, 0.4]);
        assert!(matches!(r, Err(Error::NotADistribution(_))));
    }
}
