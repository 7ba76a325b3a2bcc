use std::io;

use serde::Serialize;
use zpolicy::cftp::{cftp_samples, estimate_joint_cost, smooth_distribution, write_samples_csv, CftpConfig, JointCostEstimate};
use zpolicy::costs::{continuum_cost, finite_cost, sensitivity_curves, uniform_grid, CostReport, SensitivityCurves};
use zpolicy::heuristic::{simulation_oracle, successive_refinement, PiecewiseDistribution, RefinementConfig};
use zpolicy::hjb::{classify_policy, cooler_load_gets_wind, simulate_allocation, solve_hjb, split_structure, HjbConfig, PolicyLabel, PolicyRun, SplitStructure};
use zpolicy::simulate::{simulate, SimulationConfig};
use zpolicy::stationary::solve_stationary;
use zpolicy::variational::{fixed_point, multiwind_euler_lagrange, optimal_distribution, EulerLagrange, FixedPointResult, Projection, ThresholdDistribution};
use zpolicy::verify_conservation;

use crate::config::{ExperimentConfig, Model, SetPointSource};
use crate::output::Output;

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Compute(zpolicy::Error),
    Io(io::Error),
}

impl From<zpolicy::Error> for Failure {
    fn from(e: zpolicy::Error) -> Self {
        Failure::Compute(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

pub type Outcome = Result<(), Failure>;

pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub model: Model,
    pub seed: u64,
    pub out: Output,
}

impl Context<'_> {
    fn gamma(&self) -> f64 {
        self.config.solver.gamma
    }

    fn curves(&self) -> zpolicy::Result<SensitivityCurves> {
        let s = &self.config.solver;
        let z = uniform_grid(self.model.params.top(), s.curve_intervals);
        Ok(sensitivity_curves(&self.model.env, &self.model.params, &z, s.grid_step)?.with_model(self.config.model.cost_model))
    }

    fn finite_cost(&self, set_points: &[f64]) -> zpolicy::Result<CostReport> {
        let m = &self.model;
        finite_cost(set_points, &m.env, &m.params, self.config.model.cost_model, self.gamma(), self.config.solver.grid_step)
    }
}

struct Optimum {
    curves: SensitivityCurves,
    euler_lagrange: EulerLagrange,
    projection: Projection,
    fixed_point: Option<FixedPointResult>,
    cost: CostReport,
}

fn optimum(ctx: &Context) -> zpolicy::Result<Optimum> {
    let curves = ctx.curves()?;
    let gamma = ctx.gamma();
    let intermediate = ctx.model.params.comfort_levels.len().saturating_sub(2);
    let (projection, fixed_point, v) = if intermediate > 0 {
        let s = &ctx.config.solver;
        let fp = fixed_point(&curves, gamma, &vec![0.5; intermediate], s.fixed_point_tol, s.max_iter)?;
        (fp.projection.clone(), Some(fp.clone()), fp.v)
    } else {
        (optimal_distribution(&curves, gamma, &[])?, None, Vec::new())
    };
    let euler_lagrange = multiwind_euler_lagrange(&curves, gamma, &v);
    let cost = continuum_cost(&projection.distribution, &curves, gamma)?;
    Ok(Optimum {
        curves,
        euler_lagrange,
        projection,
        fixed_point,
        cost,
    })
}

fn set_points(ctx: &Context, source: SetPointSource, n: usize) -> zpolicy::Result<Vec<f64>> {
    Ok(match source {
        SetPointSource::Optimal => optimum(ctx)?.projection.distribution.quantile_set_points(n),
        SetPointSource::Uniform => uniform_distribution(ctx).quantile_set_points(n),
    })
}

fn uniform_distribution(ctx: &Context) -> ThresholdDistribution {
    ThresholdDistribution::uniform(ctx.model.params.top(), ctx.config.solver.curve_intervals)
}

#[derive(Serialize)]
struct ConservationReport {
    z: f64,
    max_flux_residual: f64,
    total_mass: f64,
    floor_mass: f64,
    discomfort: f64,
    mass_locations: Vec<(f64, f64)>,
}

pub fn distribution(ctx: &mut Context) -> Outcome {
    let z = ctx.config.distribution.z.unwrap_or(ctx.model.params.top());
    let dist = solve_stationary(z, &ctx.model.env, &ctx.model.params, ctx.config.solver.grid_step)?;
    ctx.out.csv("density.csv", |w| dist.write_density_csv(w))?;
    ctx.out.csv("masses.csv", |w| dist.write_mass_csv(w))?;
    let report = ConservationReport {
        z,
        max_flux_residual: verify_conservation(&dist),
        total_mass: dist.total_mass(),
        floor_mass: dist.floor_mass(),
        discomfort: dist.discomfort(),
        mass_locations: dist.mass_locations(),
    };
    ctx.out.json("conservation.json", &report)?;
    Ok(())
}

pub fn curves(ctx: &mut Context) -> Outcome {
    let curves = ctx.curves()?;
    ctx.out.csv("curves.csv", |w| curves.write_csv(w))?;
    Ok(())
}

#[derive(Serialize)]
struct OptimizeReport<'a> {
    gamma: f64,
    cost: CostReport,
    distribution: &'a ThresholdDistribution,
    blocks: &'a [zpolicy::variational::PooledBlock],
    intermediate_fractions: Vec<f64>,
    fixed_point_residuals: Vec<f64>,
}

pub fn optimize(ctx: &mut Context) -> Outcome {
    let opt = optimum(ctx)?;
    let u = &opt.projection.distribution;
    ctx.out.csv("u_star.csv", |w| u.write_csv(w))?;
    ctx.out.csv("euler_lagrange.csv", |w| {
        let el = &opt.euler_lagrange;
        writeln!(w, "z,raw,clamped,weight,u_star,costate")?;
        for l in 0..el.z.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                el.z[l],
                el.raw[l],
                el.clamped[l],
                el.weight[l],
                u.interior_value(el.z[l]),
                opt.projection.costate[l]
            )?;
        }
        Ok(())
    })?;
    if let Some(fp) = &opt.fixed_point {
        ctx.out.csv("fixed_point.csv", |w| {
            writeln!(w, "iteration,coordinate,v,image,lower,upper")?;
            for (k, s) in fp.trace.iter().enumerate() {
                writeln!(w, "{k},{},{},{},{},{}", s.coordinate, s.v, s.image, s.lower, s.upper)?;
            }
            Ok(())
        })?;
    }
    let report = OptimizeReport {
        gamma: ctx.gamma(),
        cost: opt.cost,
        distribution: u,
        blocks: &opt.projection.blocks,
        intermediate_fractions: opt.fixed_point.as_ref().map(|f| f.v.clone()).unwrap_or_default(),
        fixed_point_residuals: opt.fixed_point.as_ref().map(|f| f.residuals.clone()).unwrap_or_default(),
    };
    ctx.out.json("optimize.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateReport {
    loads: usize,
    jumps: usize,
    set_points: Vec<f64>,
    simulated: CostReport,
    standard_error: f64,
    measured_time: f64,
    analytic: CostReport,
    relative_gap: f64,
}

pub fn simulate_cmd(ctx: &mut Context) -> Outcome {
    let s = &ctx.config.simulate;
    let z = set_points(ctx, s.set_points, s.loads)?;
    let mut sim = SimulationConfig::new(z.clone(), s.jumps, ctx.seed);
    sim.burn_in = s.burn_in;
    sim.trace_interval = s.trace_interval;
    sim.max_trace_rows = s.max_trace_rows;
    let result = simulate(&sim, &ctx.model.env, &ctx.model.params, ctx.gamma())?;
    let analytic = ctx.finite_cost(&z)?;
    if s.trace_interval.is_some() {
        ctx.out.csv("trace.csv", |w| result.write_trace_csv(w))?;
    }
    let report = SimulateReport {
        loads: s.loads,
        jumps: s.jumps,
        set_points: z,
        simulated: result.empirical_cost,
        standard_error: result.standard_error,
        measured_time: result.measured_time,
        relative_gap: (result.empirical_cost.total - analytic.total) / analytic.total,
        analytic,
    };
    ctx.out.json("simulate.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct CftpReport {
    set_points: Vec<f64>,
    samples: usize,
    estimate: JointCostEstimate,
    max_doublings_used: usize,
    sandwich_violations: usize,
}

pub fn cftp(ctx: &mut Context) -> Outcome {
    let c = &ctx.config.cftp;
    let m = &ctx.model;
    let mut config = CftpConfig::new(&m.params, &c.set_points, m.wind.clone(), m.comfort.clone(), c.coupling, ctx.seed);
    config.max_doublings = c.max_doublings;
    if let Some(dt) = c.time_step {
        config.time_step = dt;
    }
    let samples = cftp_samples(&config, c.samples)?;
    let estimate = estimate_joint_cost(&samples, &config.loads, ctx.gamma())?;
    ctx.out.csv("samples.csv", |w| write_samples_csv(&samples, w))?;
    let grid = uniform_grid(m.params.top(), ctx.config.solver.curve_intervals);
    let smoothed = smooth_distribution(&c.set_points, c.kernel, c.bandwidth, &grid)?;
    ctx.out.csv("smoothed.csv", |w| smoothed.write_csv(w))?;
    let report = CftpReport {
        set_points: c.set_points.clone(),
        samples: samples.len(),
        estimate,
        max_doublings_used: samples.iter().map(|s| s.doublings).max().unwrap_or(0),
        sandwich_violations: samples.iter().map(|s| s.sandwich_violations).sum(),
    };
    ctx.out.json("cftp.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct HeuristicReport {
    best: PiecewiseDistribution,
    best_cost: f64,
    best_per_level: Vec<f64>,
    refinements: Vec<(usize, u32)>,
    uniform_cost: f64,
    uniform_standard_error: f64,
}

pub fn heuristic(ctx: &mut Context) -> Outcome {
    let h = &ctx.config.heuristic;
    let m = &ctx.model;
    let gamma = ctx.gamma();
    let episode = SimulationConfig::new(vec![0.0; h.loads], h.jumps, ctx.seed);
    let config = RefinementConfig {
        initial_level: h.initial_level,
        max_level: h.max_level,
        epsilon: h.epsilon,
        delta_j: h.delta_j,
        patience: h.patience,
        max_steps_per_level: h.max_steps_per_level,
        max_update: h.max_update,
        exploration: h.exploration,
        shape: h.shape,
        seed: ctx.seed,
    };
    let result = successive_refinement((0.0, m.params.top()), &config, simulation_oracle(&episode, &m.env, &m.params, gamma))?;
    let mut uniform = episode.clone();
    uniform.set_points = uniform_distribution(ctx).quantile_set_points(h.loads);
    let baseline = simulate(&uniform, &m.env, &m.params, gamma)?;
    ctx.out.csv("trace.csv", |w| result.trace.write_csv(w))?;
    let report = HeuristicReport {
        best_cost: result.best_cost,
        best_per_level: result.trace.best_per_level.clone(),
        refinements: result.trace.refinements.clone(),
        best: result.best,
        uniform_cost: baseline.empirical_cost.total,
        uniform_standard_error: baseline.standard_error,
    };
    ctx.out.json("heuristic.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct HjbReport {
    config: HjbConfig,
    asymmetry: f64,
    monotonicity_defect: f64,
    splits: SplitStructure,
    synchronizing_cells: usize,
    desynchronizing_cells: usize,
    cooler_load_gets_wind_and_desynchronizes: usize,
    coolest_first: PolicyRun,
    hottest_first: PolicyRun,
}

pub fn hjb(ctx: &mut Context) -> Outcome {
    let h = &ctx.config.hjb;
    let m = &ctx.model;
    let mut config = HjbConfig::new(&m.params, h.horizon, h.grid_step);
    if let Some(dt) = h.time_step {
        config.time_step = dt;
    }
    let (values, policy) = solve_hjb(&m.env, &m.params, &config)?;
    let labels = classify_policy(&policy);
    let n = policy.grid.len();
    let count = |l: PolicyLabel| labels.iter().filter(|&&x| x == l).count();
    let cooler_desync = cooler_load_gets_wind(&policy)
        .into_iter()
        .filter(|&(s, i, j)| labels[(s * n + i) * n + j] == PolicyLabel::Desynchronizing)
        .count();
    let run = |activation: f64| {
        simulate_allocation(
            &m.env,
            &m.params,
            h.loads,
            config.wind_power,
            config.max_grid,
            activation,
            h.sim_horizon,
            h.sim_dt,
            h.window,
            ctx.seed,
        )
    };
    let report = HjbReport {
        asymmetry: values.asymmetry(),
        monotonicity_defect: values.monotonicity_defect(),
        splits: split_structure(&values, &policy),
        synchronizing_cells: count(PolicyLabel::Synchronizing),
        desynchronizing_cells: count(PolicyLabel::Desynchronizing),
        cooler_load_gets_wind_and_desynchronizes: cooler_desync,
        coolest_first: run(h.activation)?,
        hottest_first: run(f64::INFINITY)?,
        config,
    };
    ctx.out.csv("values.csv", |w| values.write_csv(w))?;
    ctx.out.csv("policy.csv", |w| policy.write_csv(w))?;
    ctx.out.json("hjb.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    policy: &'static str,
    loads: usize,
    analytic: f64,
    simulated: f64,
    standard_error: f64,
}

#[derive(Serialize)]
struct CompareReport {
    continuum_optimal: CostReport,
    continuum_uniform: CostReport,
    rows: Vec<CompareRow>,
}

pub fn compare(ctx: &mut Context) -> Outcome {
    let opt = optimum(ctx)?;
    let uniform = uniform_distribution(ctx);
    let gamma = ctx.gamma();
    let mut rows = Vec::new();
    for &n in &ctx.config.compare.loads {
        for (policy, dist) in [("optimal", &opt.projection.distribution), ("uniform", &uniform)] {
            let z = dist.quantile_set_points(n);
            let analytic = ctx.finite_cost(&z)?;
            let sim = simulate(&SimulationConfig::new(z, ctx.config.compare.jumps, ctx.seed), &ctx.model.env, &ctx.model.params, gamma)?;
            rows.push(CompareRow {
                policy,
                loads: n,
                analytic: analytic.total,
                simulated: sim.empirical_cost.total,
                standard_error: sim.standard_error,
            });
        }
    }
    ctx.out.csv("compare.csv", |w| {
        writeln!(w, "policy,loads,analytic,simulated,standard_error")?;
        for r in &rows {
            writeln!(w, "{},{},{},{},{}", r.policy, r.loads, r.analytic, r.simulated, r.standard_error)?;
        }
        Ok(())
    })?;
    let report = CompareReport {
        continuum_optimal: opt.cost,
        continuum_uniform: continuum_cost(&uniform, &opt.curves, gamma)?,
        rows,
    };
    ctx.out.json("compare.json", &report)?;
    Ok(())
}
