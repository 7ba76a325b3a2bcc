//! Grid and discomfort costs of a population of Z-policy loads.
//!
//! Stochastic dominance orders the loads by set-point, so in every environment
//! state the aggregate grid power is a function of how many loads sit in one
//! "family" of configurations. Each family contributes a per-load power weight
//! that is linear in the population fraction `u`, `g(u) = a + b u`, a mass curve
//! read off the single-load stationary law, and a range of set-points it
//! applies to:
//!
//! * wind off, top comfort: loads parked at their set-point draw `h`
//!   (`g = h u`, mass `δ_z^z`);
//! * wind off, lower comfort `j`: loads parked at `Θ_j` draw `h`, loads above it
//!   draw `h + c` (see [`CostModel`] for how the two are split);
//! * partial wind `i`, any lower comfort: loads above comfort draw `c - r_i`
//!   (`g = s_i (1 - u)`, increasing mass `P(X_z > Θ_j)`).
//!
//! Decreasing mass curves enter with sensitivity `-m'`, increasing ones with
//! `+T'`. The continuum cost is `Σ ∫ g(u)² |m'| dz` plus boundary atoms plus
//! `γ ∫ Φ du`; expanding the square gives `∫ w (u - u_EL)² + const`.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LoadParams, MarkovEnvironment};
use crate::stationary::{solve_stationary, StationaryDistribution};
use crate::variational::ThresholdDistribution;

/// Floor applied to `w` when it is used as a divisor.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Discomfort weight, already divided by the population size.
    pub gamma: f64,
}

impl CostWeights {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParams(format!("gamma must be non-negative, got {gamma}")));
        }
        Ok(Self { gamma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub power_cost: f64,
    pub discomfort_cost: f64,
    pub total: f64,
}

impl CostReport {
    pub(crate) fn new(power_cost: f64, discomfort_cost: f64, gamma: f64) -> Self {
        Self {
            power_cost,
            discomfort_cost,
            total: power_cost + gamma * discomfort_cost,
        }
    }
}

/// How the dominance ordering is turned into a cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// Literal families: in a lower comfort state every load that is not parked is
    /// charged as above comfort, and intermediate levels carry the `(1 - u - v)`
    /// weight of the three-level formula.
    Paper,
    /// Loads with set-points at or below `Θ_j` that are not parked are heating and
    /// draw nothing; loads above `Θ_j` are parked or above it once any of them is
    /// parked, and otherwise above with the residual probability
    /// `P(X_z > Θ_j) - (δ_{Θ_j}^{Θ_j} - δ_{Θ_j}^z)`.
    #[default]
    Refined,
}

/// Which single-load mass curve a family is weighted by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyKind {
    /// Mass parked with wind off at `min(z, Θ_j)`; decreasing in `z`.
    Parked(usize),
    /// Mass above `Θ_{comfort(s)}` in joint state `s`; increasing in `z`.
    Above(usize),
    /// Wind-off mass above `Θ_j` not explained by parked loads; increasing in `z`.
    Residual(usize),
}

impl FamilyKind {
    fn decreasing(self) -> bool {
        matches!(self, FamilyKind::Parked(_))
    }
}

/// Set-points a family applies to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Support {
    All,
    AtOrBelow(f64),
    Above(f64),
}

impl Support {
    pub fn contains(self, z: f64) -> bool {
        match self {
            Support::All => true,
            Support::AtOrBelow(t) => z <= t,
            Support::Above(t) => z > t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub kind: FamilyKind,
    pub a: f64,
    pub b: f64,
    pub support: Support,
}

impl Family {
    pub fn power(&self, u: f64) -> f64 {
        self.a + self.b * u
    }
}

/// The power families for a load population. `v[j - 1]` is the fraction of
/// set-points at or below `Θ_j` for the intermediate comfort levels `1..C-1`
/// (only the paper model uses it).
pub fn families(params: &LoadParams, model: CostModel, v: &[f64]) -> Vec<Family> {
    let (h, c) = (params.heating, params.cooling);
    let n_c = params.comfort_levels.len();
    let mut out = vec![Family {
        kind: FamilyKind::Parked(n_c - 1),
        a: 0.0,
        b: h,
        support: Support::All,
    }];
    for j in 0..n_c.saturating_sub(1) {
        match model {
            CostModel::Paper => {
                let vj = if j == 0 { 0.0 } else { v.get(j - 1).copied().unwrap_or(0.0) };
                out.push(Family {
                    kind: FamilyKind::Parked(j),
                    a: (h + c) * (1.0 - vj),
                    b: -c,
                    support: Support::All,
                });
            }
            CostModel::Refined => {
                let theta = params.comfort_levels[j];
                out.push(Family {
                    kind: FamilyKind::Parked(j),
                    a: 0.0,
                    b: h,
                    support: Support::AtOrBelow(theta),
                });
                out.push(Family {
                    kind: FamilyKind::Parked(j),
                    a: h + c,
                    b: -c,
                    support: Support::Above(theta),
                });
                out.push(Family {
                    kind: FamilyKind::Residual(j),
                    a: h + c,
                    b: -(h + c),
                    support: Support::Above(theta),
                });
            }
        }
    }
    for (i, &r) in params.wind_cooling_rates.iter().enumerate().skip(1) {
        let s = c - r;
        if s <= 0.0 {
            continue;
        }
        for j in 0..n_c - 1 {
            out.push(Family {
                kind: FamilyKind::Above(i * n_c + j),
                a: s,
                b: -s,
                support: Support::All,
            });
        }
    }
    out
}

/// Single-load quantities at one set-point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMasses {
    pub parked: Vec<f64>,
    pub above: Vec<f64>,
    pub phi: f64,
}

impl PointMasses {
    pub fn of(dist: &StationaryDistribution) -> Self {
        Self {
            parked: (0..dist.comfort_levels.len()).map(|j| dist.parked_mass(j)).collect(),
            above: (0..dist.n_states()).map(|s| dist.above_comfort_mass(s)).collect(),
            phi: dist.discomfort(),
        }
    }
}

/// Expected squared excess above the active comfort level for set-point `z`.
pub fn phi(z: f64, env: &MarkovEnvironment, params: &LoadParams, grid_step: f64) -> Result<f64> {
    Ok(solve_stationary(z, env, params, grid_step)?.discomfort())
}

/// A sampled curve with one-sided derivatives (they differ only at comfort levels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub value: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Curve {
    fn new(z: &[f64], value: Vec<f64>, kinks: &[usize]) -> Self {
        let (left, right) = differentiate_sided(z, &value, kinks);
        Self { value, left, right }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityCurves {
    pub params: LoadParams,
    pub model: CostModel,
    pub z_grid: Vec<f64>,
    pub phi: Curve,
    /// Wind-off mass parked at `min(z, Θ_j)`, one curve per comfort level.
    pub parked: Vec<Curve>,
    /// `P(state s, X_z > Θ_{comfort(s)})`, one curve per joint state.
    pub above: Vec<Curve>,
    /// Residual above-comfort mass per comfort level (zero at or below `Θ_j`).
    pub residual: Vec<Curve>,
    /// Interior grid points where the weight `w` is not positive.
    pub nonpositive_weight: Vec<f64>,
}

/// Derivative at `x0` of the quadratic through three points.
fn lagrange_derivative(x: [f64; 3], f: [f64; 3], x0: f64) -> f64 {
    let mut d = 0.0;
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        d += f[i] * ((x0 - x[j]) + (x0 - x[k])) / ((x[i] - x[j]) * (x[i] - x[k]));
    }
    d
}

fn stencil_derivative(z: &[f64], f: &[f64], idx: [usize; 3], at: usize) -> f64 {
    lagrange_derivative(idx.map(|i| z[i]), idx.map(|i| f[i]), z[at])
}

/// Central differences in the interior, one-sided at both ends and from the left
/// at each node listed in `kinks`.
pub fn differentiate(z: &[f64], f: &[f64], kinks: &[usize]) -> Vec<f64> {
    differentiate_sided(z, f, kinks).0
}

/// Left and right three-point derivatives; they differ only at `kinks`.
pub fn differentiate_sided(z: &[f64], f: &[f64], kinks: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = z.len();
    assert!(n >= 3, "need at least three grid points");
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for l in 0..n {
        let (a, b) = if l == 0 {
            let d = stencil_derivative(z, f, [0, 1, 2], l);
            (d, d)
        } else if l == n - 1 {
            let d = stencil_derivative(z, f, [l - 2, l - 1, l], l);
            (d, d)
        } else if kinks.contains(&l) {
            let a = if l >= 2 {
                stencil_derivative(z, f, [l - 2, l - 1, l], l)
            } else {
                (f[l] - f[l - 1]) / (z[l] - z[l - 1])
            };
            let b = if l + 2 < n {
                stencil_derivative(z, f, [l, l + 1, l + 2], l)
            } else {
                (f[l + 1] - f[l]) / (z[l + 1] - z[l])
            };
            (a, b)
        } else {
            let d = stencil_derivative(z, f, [l - 1, l, l + 1], l);
            (d, d)
        };
        left.push(a);
        right.push(b);
    }
    (left, right)
}

/// Uniform grid of `intervals + 1` points over `[0, Θ_C]`.
pub fn uniform_grid(top: f64, intervals: usize) -> Vec<f64> {
    (0..=intervals)
        .map(|l| if l == intervals { top } else { top * l as f64 / intervals as f64 })
        .collect()
}

/// Single-load curves on `z_grid` for the default cost model.
pub fn sensitivity_curves(env: &MarkovEnvironment, params: &LoadParams, z_grid: &[f64], grid_step: f64) -> Result<SensitivityCurves> {
    if z_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::UnsortedInput);
    }
    if z_grid.len() < 3 {
        return Err(Error::InvalidParams("sensitivity grid needs at least three points".into()));
    }
    let samples: Vec<PointMasses> = z_grid
        .par_iter()
        .map(|&z| solve_stationary(z, env, params, grid_step).map(|d| PointMasses::of(&d)))
        .collect::<Result<_>>()?;
    let tol = 1e-9 * params.top();
    let kinks: Vec<usize> = z_grid
        .iter()
        .enumerate()
        .filter(|(_, &z)| params.comfort_levels.iter().any(|&t| (z - t).abs() <= tol))
        .map(|(l, _)| l)
        .collect();
    let n_c = params.comfort_levels.len();
    let n_s = env.n_states();
    let column = |f: &dyn Fn(&PointMasses) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
    let parked_values: Vec<Vec<f64>> = (0..n_c).map(|j| column(&|m| m.parked[j])).collect();
    let residual = (0..n_c)
        .map(|j| {
            let theta = params.comfort_levels[j];
            let at_theta = interpolate_linear(z_grid, &parked_values[j], theta);
            let values = z_grid
                .iter()
                .zip(&samples)
                .zip(&parked_values[j])
                .map(|((&z, m), &p)| if z > theta { m.above[j] - at_theta + p } else { 0.0 })
                .collect();
            Curve::new(z_grid, values, &kinks)
        })
        .collect();
    let mut curves = SensitivityCurves {
        params: params.clone(),
        model: CostModel::default(),
        z_grid: z_grid.to_vec(),
        phi: Curve::new(z_grid, column(&|m| m.phi), &kinks),
        parked: parked_values.into_iter().map(|v| Curve::new(z_grid, v, &kinks)).collect(),
        above: (0..n_s).map(|s| Curve::new(z_grid, column(&|m| m.above[s]), &kinks)).collect(),
        residual,
        nonpositive_weight: Vec::new(),
    };
    curves.refresh_diagnostics();
    Ok(curves)
}

fn interpolate_linear(z: &[f64], f: &[f64], x: f64) -> f64 {
    let k = match z.partition_point(|&g| g <= x) {
        0 => 0,
        p if p >= z.len() => z.len() - 2,
        p => p - 1,
    };
    let t = ((x - z[k]) / (z[k + 1] - z[k])).clamp(0.0, 1.0);
    f[k] + t * (f[k + 1] - f[k])
}

/// Per-node coefficients of the discretized continuum cost.
///
/// With `κ_{f,l}` the family's sensitivity integrated over the half-intervals
/// around node `l` inside its support, the power cost is
/// `Σ_f Σ_l κ_{f,l} g_f(u_l)² + atoms` and the discomfort part is
/// `Φ(Θ_C) - Σ_l φ_l u_l`.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub families: Vec<Family>,
    pub kappa: Vec<Vec<f64>>,
    pub phi_slope: Vec<f64>,
    /// `Σ_f κ b²`, the node weight of the quadratic form.
    pub node_weight: Vec<f64>,
    /// `Σ_f κ a b`.
    pub cross: Vec<f64>,
    /// Cost of loads parked at the top of the range (independent of `u`).
    pub atoms: f64,
}

impl Discretization {
    /// Unclamped Euler–Lagrange candidate per node.
    pub fn euler_lagrange(&self, gamma: f64) -> Vec<f64> {
        (0..self.node_weight.len())
            .map(|l| (gamma * self.phi_slope[l] - 2.0 * self.cross[l]) / (2.0 * self.node_weight[l].max(WEIGHT_FLOOR)))
            .collect()
    }
}

impl SensitivityCurves {
    pub fn with_model(mut self, model: CostModel) -> Self {
        self.model = model;
        self.refresh_diagnostics();
        self
    }

    fn refresh_diagnostics(&mut self) {
        let w = self.weight();
        let last = self.len() - 1;
        self.nonpositive_weight = (1..last).filter(|&l| w[l] <= 0.0).map(|l| self.z_grid[l]).collect();
    }

    pub fn len(&self) -> usize {
        self.z_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_grid.is_empty()
    }

    fn comfort_count(&self) -> usize {
        self.params.comfort_levels.len()
    }

    pub fn phi_prime(&self) -> &[f64] {
        &self.phi.left
    }

    /// `-dδ_z^z/dz`: loss of set-point mass at the top comfort level.
    pub fn d1(&self) -> Vec<f64> {
        self.parked[self.comfort_count() - 1].left.iter().map(|d| -d).collect()
    }

    /// `-dδ_{Θ_1}^z/dz`, zero when there is a single comfort level.
    pub fn d2(&self) -> Vec<f64> {
        if self.comfort_count() >= 2 {
            self.parked[0].left.iter().map(|d| -d).collect()
        } else {
            vec![0.0; self.len()]
        }
    }

    /// `d/dz P(X_z > Θ_1)` summed over partial-wind states.
    pub fn d_hat(&self) -> Vec<f64> {
        let n_c = self.comfort_count();
        let w_last = self.params.wind_states() - 1;
        (0..self.len())
            .map(|l| (1..w_last).map(|i| self.above[i * n_c].left[l]).sum::<f64>())
            .collect()
    }

    fn curve(&self, kind: FamilyKind) -> &Curve {
        match kind {
            FamilyKind::Parked(j) => &self.parked[j],
            FamilyKind::Above(s) => &self.above[s],
            FamilyKind::Residual(j) => &self.residual[j],
        }
    }

    /// Coefficients of the discretized cost for intermediate fractions `v`.
    pub fn discretize(&self, v: &[f64]) -> Discretization {
        let z = &self.z_grid;
        let n = z.len();
        let fams = families(&self.params, self.model, v);
        let sign = |f: &Family| if f.kind.decreasing() { -1.0 } else { 1.0 };
        let mut kappa = vec![vec![0.0; n]; fams.len()];
        let mut phi_slope = vec![0.0; n];
        for i in 0..n - 1 {
            let half = 0.5 * (z[i + 1] - z[i]);
            let mid = 0.5 * (z[i + 1] + z[i]);
            phi_slope[i] += half * self.phi.right[i];
            phi_slope[i + 1] += half * self.phi.left[i + 1];
            for (f, fam) in fams.iter().enumerate() {
                if !fam.support.contains(mid) {
                    continue;
                }
                let c = self.curve(fam.kind);
                kappa[f][i] += sign(fam) * half * c.right[i];
                kappa[f][i + 1] += sign(fam) * half * c.left[i + 1];
            }
        }
        let node_weight = (0..n).map(|l| fams.iter().zip(&kappa).map(|(f, k)| k[l] * f.b * f.b).sum()).collect();
        let cross = (0..n).map(|l| fams.iter().zip(&kappa).map(|(f, k)| k[l] * f.a * f.b).sum()).collect();
        let atoms = fams
            .iter()
            .filter(|f| f.kind.decreasing() && f.support.contains(self.params.top()))
            .map(|f| f.power(1.0).powi(2) * self.curve(f.kind).value[n - 1])
            .sum();
        Discretization {
            families: fams,
            kappa,
            phi_slope,
            node_weight,
            cross,
            atoms,
        }
    }

    /// Quadratic weight `w` per unit length (independent of `v`).
    pub fn weight(&self) -> Vec<f64> {
        let d = self.discretize(&vec![0.0; self.comfort_count().saturating_sub(2)]);
        let omega = self.node_weights();
        d.node_weight.iter().zip(&omega).map(|(w, o)| w / o).collect()
    }

    /// Unclamped Euler–Lagrange candidate.
    pub fn raw_euler_lagrange(&self, gamma: f64, v: &[f64]) -> Vec<f64> {
        self.discretize(v).euler_lagrange(gamma)
    }

    /// Trapezoid weights of the grid.
    pub fn node_weights(&self) -> Vec<f64> {
        trapezoid_weights(&self.z_grid)
    }

    /// Linear interpolation of the single-load quantities at `z`.
    pub fn interpolate(&self, z: f64) -> PointMasses {
        let g = &self.z_grid;
        PointMasses {
            parked: self.parked.iter().map(|c| interpolate_linear(g, &c.value, z)).collect(),
            above: self.above.iter().map(|c| interpolate_linear(g, &c.value, z)).collect(),
            phi: interpolate_linear(g, &self.phi.value, z),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let weight = self.weight();
        let (d1, d2, d_hat) = (self.d1(), self.d2(), self.d_hat());
        writeln!(w, "z,phi,phi_prime,d1,d2,d_hat,w")?;
        for l in 0..self.len() {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:e}",
                self.z_grid[l], self.phi.value[l], self.phi.left[l], d1[l], d2[l], d_hat[l], weight[l]
            )?;
        }
        Ok(())
    }
}

pub fn trapezoid_weights(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut w = vec![0.0; n];
    for l in 0..n.saturating_sub(1) {
        let half = 0.5 * (z[l + 1] - z[l]);
        w[l] += half;
        w[l + 1] += half;
    }
    w
}

/// Fraction of set-points at or below each intermediate comfort level.
pub fn intermediate_fractions(params: &LoadParams, fraction_below: impl Fn(f64) -> f64) -> Vec<f64> {
    let n_c = params.comfort_levels.len();
    (1..n_c.saturating_sub(1)).map(|j| fraction_below(params.comfort_levels[j])).collect()
}

/// Normalized cost of `N` loads with ascending set-points `z`, from single-load
/// quantities supplied by `lookup`.
pub fn finite_cost_with<F>(z: &[f64], params: &LoadParams, model: CostModel, gamma: f64, lookup: F) -> Result<CostReport>
where
    F: Fn(f64) -> Result<PointMasses>,
{
    if z.is_empty() {
        return Err(Error::EmptySamples);
    }
    if z.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::UnsortedInput);
    }
    let top = params.top();
    if let Some(&bad) = z.iter().find(|&&x| !(0.0..=top).contains(&x)) {
        return Err(Error::InvalidSetPoint { z: bad, max: top });
    }
    let n = z.len();
    let nf = n as f64;
    let mut masses: Vec<PointMasses> = Vec::with_capacity(n);
    for (k, &zk) in z.iter().enumerate() {
        if k > 0 && z[k - 1] == zk {
            let prev = masses[k - 1].clone();
            masses.push(prev);
        } else {
            masses.push(lookup(zk)?);
        }
    }
    let v = intermediate_fractions(params, |t| z.iter().filter(|&&x| x <= t).count() as f64 / nf);
    let n_c = params.comfort_levels.len();
    let masses = &masses;
    let mut power = 0.0;
    for fam in families(params, model, &v) {
        // mass curve of load k (1-based), and the index of the first load it applies to
        let (mass, first): (Box<dyn Fn(usize) -> f64>, usize) = match fam.kind {
            FamilyKind::Parked(j) => (Box::new(move |k| masses[k - 1].parked[j]), 1),
            FamilyKind::Above(s) => (Box::new(move |k| masses[k - 1].above[s]), 1),
            FamilyKind::Residual(j) => {
                let theta = params.comfort_levels[j];
                let low = z.iter().filter(|&&x| x <= theta).count();
                if low == n {
                    continue;
                }
                let base = masses[low].parked[j];
                (
                    Box::new(move |k| masses[k - 1].above[j] - base + masses[k - 1].parked[j]),
                    low + 1,
                )
            }
        };
        if fam.kind.decreasing() {
            // exactly the k lowest loads parked
            for k in 1..=n {
                if !fam.support.contains(z[k - 1]) {
                    continue;
                }
                let next = if k < n { mass(k + 1) } else { 0.0 };
                power += fam.power(k as f64 / nf).powi(2) * (mass(k) - next);
            }
            if let (CostModel::Paper, FamilyKind::Parked(j)) = (model, fam.kind) {
                if j + 1 < n_c {
                    // nobody parked: every load charged as above comfort
                    power += fam.power(0.0).powi(2) * masses[0].above[j];
                }
            }
        } else {
            // loads k+1..N above comfort
            for k in first - 1..n {
                let prev = if k >= first { mass(k) } else { 0.0 };
                power += fam.power(k as f64 / nf).powi(2) * (mass(k + 1) - prev);
            }
        }
    }
    let discomfort = masses.iter().map(|m| m.phi).sum::<f64>() / nf;
    Ok(CostReport::new(power, discomfort, gamma))
}

/// Normalized finite-population cost, one stationary solve per distinct set-point.
pub fn finite_cost(
    z: &[f64],
    env: &MarkovEnvironment,
    params: &LoadParams,
    model: CostModel,
    gamma: f64,
    grid_step: f64,
) -> Result<CostReport> {
    if z.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::UnsortedInput);
    }
    let mut distinct: Vec<f64> = z.to_vec();
    distinct.dedup();
    let solved: Vec<(f64, PointMasses)> = distinct
        .par_iter()
        .map(|&zk| solve_stationary(zk, env, params, grid_step).map(|d| (zk, PointMasses::of(&d))))
        .collect::<Result<_>>()?;
    finite_cost_with(z, params, model, gamma, |zk| {
        let i = solved.partition_point(|(x, _)| *x < zk);
        Ok(solved[i].1.clone())
    })
}

/// Finite-population cost using interpolated sensitivity curves.
pub fn finite_cost_interpolated(z: &[f64], curves: &SensitivityCurves, gamma: f64) -> Result<CostReport> {
    finite_cost_with(z, &curves.params, curves.model, gamma, |zk| Ok(curves.interpolate(zk)))
}

/// Evaluate a threshold distribution at the curve nodes (interior limits at the ends).
pub fn nodes_of(u: &ThresholdDistribution, curves: &SensitivityCurves) -> Vec<f64> {
    curves.z_grid.iter().map(|&z| u.interior_value(z)).collect()
}

/// Continuum cost of node values `u` (interior limits at both ends) with the
/// intermediate fractions held at `v`.
pub fn continuum_report(u: &[f64], curves: &SensitivityCurves, gamma: f64, v: &[f64]) -> CostReport {
    let d = curves.discretize(v);
    let mut power = d.atoms;
    for (fam, kappa) in d.families.iter().zip(&d.kappa) {
        power += u.iter().zip(kappa).map(|(&ul, &k)| k * fam.power(ul).powi(2)).sum::<f64>();
    }
    // ∫ Φ du by parts: jumps at both ends need no special treatment
    let last = curves.len() - 1;
    let discomfort = curves.phi.value[last] - u.iter().zip(&d.phi_slope).map(|(ul, p)| ul * p).sum::<f64>();
    CostReport::new(power, discomfort, gamma)
}

/// Continuum cost `J[u]` including the `u`-independent boundary atoms.
pub fn continuum_cost(u: &ThresholdDistribution, curves: &SensitivityCurves, gamma: f64) -> Result<CostReport> {
    u.validate()?;
    let nodes = nodes_of(u, curves);
    let v = intermediate_fractions(&curves.params, |t| u.interior_value(t));
    Ok(continuum_report(&nodes, curves, gamma, &v))
}

/// `Σ W_l (u_l - u_EL,l)²` on the grid with the unclamped candidate.
pub fn quadratic_form(u: &[f64], curves: &SensitivityCurves, gamma: f64, v: &[f64]) -> f64 {
    let d = curves.discretize(v);
    let uel = d.euler_lagrange(gamma);
    (0..curves.len()).map(|l| d.node_weight[l] * (u[l] - uel[l]).powi(2)).sum()
}
