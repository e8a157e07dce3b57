//! End-to-end planning: initialize the variational state, iterate the
//! sample/objective/update loop, then extract the posterior mean, Monte
//! Carlo paths, uncertainty intervals, and the lowest-collision trajectory.
//! Also hosts replanning from an intermediate state and JSON checkpoints.

use std::path::Path;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{
    assemble_samples, conditioned_priors, draw_noise, posterior_moments_from_priors,
    InducingSet, LowerTri, VariationalState,
};
use crate::kernels::{EvalKind, KernelSpec, MaternFamily};
use crate::linalg::{dot, Mat};
use crate::objective::{collision_cost, ObjectiveWeights, Targets};
use crate::optimizer::{gradient, AdamConfig, AdamState, EvalSpec, Params, TrainableSet};
use crate::robot::RobotSpec;
use crate::sdf::SdfGrid;

fn default_family() -> MaternFamily {
    MaternFamily::Matern52
}
fn default_length_scale() -> f64 {
    0.3
}
fn default_variance() -> f64 {
    0.5
}

/// Stationary prior configuration, broadcast across joint dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelConfig {
    #[serde(default = "default_family")]
    pub family: MaternFamily,
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
    #[serde(default = "default_variance")]
    pub variance: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            family: default_family(),
            length_scale: default_length_scale(),
            variance: default_variance(),
        }
    }
}

/// How the variational mean is initialized.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(tag = "mode", content = "profile")]
pub enum InitMode {
    /// Whitened mean zero: `q` starts at the conditioned prior.
    Zeros,
    /// Free inducing means on the straight line between the unconstrained
    /// start and goal.
    #[default]
    Interpolated,
    /// Free inducing means set to a fixed per-dimension profile
    /// (`[dim][free]` in unconstrained space).
    Fixed(Vec<Vec<f64>>),
}

fn default_m() -> usize {
    8
}
fn default_iterations() -> usize {
    150
}
fn default_k() -> usize {
    8
}
fn default_p() -> usize {
    16
}
fn default_t() -> usize {
    32
}
fn default_slope() -> f64 {
    1.0
}
fn default_features() -> usize {
    128
}
fn default_replan_iterations() -> usize {
    50
}
fn default_true() -> bool {
    true
}

/// Full planner configuration; every field has a sensible default so config
/// files only need to override what they care about.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerConfig {
    #[serde(default)]
    pub kernel: KernelConfig,
    /// Total inducing-point count (constrained anchors included).
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_k")]
    pub samples_per_iteration: usize,
    /// Posterior sample count at extraction time.
    #[serde(default = "default_p")]
    pub posterior_samples: usize,
    /// Optimization time-grid size.
    #[serde(default = "default_t")]
    pub t: usize,
    /// Optional finer grid for extraction; defaults to `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_t: Option<usize>,
    #[serde(default)]
    pub weights: ObjectiveWeights,
    #[serde(default)]
    pub trainable: TrainableSet,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_slope")]
    pub squash_slope: f64,
    #[serde(default = "default_features")]
    pub n_features: usize,
    #[serde(default)]
    pub init: InitMode,
    /// Pin zero velocity at the constrained anchors.
    #[serde(default = "default_true")]
    pub pin_velocities: bool,
    /// Anchor the goal configuration as an equality constraint. Grasp
    /// problems disable this so the end pose is shaped by the likelihood.
    #[serde(default = "default_true")]
    pub constrain_goal: bool,
    #[serde(default = "default_replan_iterations")]
    pub replan_iterations: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidSpec("iterations must be >= 1".into()));
        }
        if self.samples_per_iteration < 1 {
            return Err(Error::InvalidSpec("samples_per_iteration must be >= 1".into()));
        }
        if self.m < 3 {
            return Err(Error::InvalidSpec("need at least 3 inducing points".into()));
        }
        if self.t < 2 {
            return Err(Error::InvalidSpec("time grid needs at least 2 points".into()));
        }
        if !(self.squash_slope > 0.0) {
            return Err(Error::InvalidSpec("squash_slope must be positive".into()));
        }
        if (self.pin_velocities || self.weights.needs_derivatives())
            && !self.kernel.family.supports_derivatives()
        {
            return Err(Error::DerivativeUnsupported);
        }
        self.weights.validate()
    }
}

/// One motion-planning task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanProblem {
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    #[serde(default)]
    pub targets: Targets,
}

/// A constrained joint-space trajectory with optional derivatives and
/// marginal spread.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `T` rows of joint values, always inside the limit box.
    pub joints: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<Vec<f64>>>,
    /// Half-width of the one-sigma squashed interval per time and joint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Vec<Vec<f64>>>,
}

/// Optimized state carried out of a plan call; enough to draw more samples,
/// form intervals, or replan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerState {
    pub config: PlannerConfig,
    pub kernel: KernelSpec,
    pub state: VariationalState,
    pub targets: Targets,
    /// Unconstrained goal (kept for replanning even when the goal is not an
    /// equality constraint).
    pub goal_f: Vec<f64>,
    /// Start of the current segment in normalized time.
    pub t_lo: f64,
}

/// Everything a plan call produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanResult {
    pub mean: Trajectory,
    pub samples: Vec<Trajectory>,
    /// Lowest-collision trajectory among the samples and the mean.
    pub selected: Trajectory,
    /// Densified (4T) joint path of the selected trajectory, for collision
    /// checking.
    pub selected_dense: Vec<Vec<f64>>,
    pub selected_collision_cost: f64,
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
    pub state: PlannerState,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn unsquash_endpoint(robot: &RobotSpec, theta: &[f64], slope: f64) -> Result<Vec<f64>> {
    robot.unsquash(theta, slope).map_err(|e| match e {
        Error::OutOfLimits { .. } => Error::InfeasibleEndpoint,
        other => other,
    })
}

/// Evenly spaced free inducing times on `(lo, 1]` or `(lo, 1)` depending on
/// whether the goal is anchored.
fn free_times(lo: f64, mf: usize, constrain_goal: bool) -> Vec<f64> {
    if constrain_goal {
        (1..=mf)
            .map(|i| lo + (1.0 - lo) * i as f64 / (mf + 1) as f64)
            .collect()
    } else {
        (1..=mf)
            .map(|i| lo + (1.0 - lo) * i as f64 / mf as f64)
            .collect()
    }
}

/// Solve one optimization segment and extract trajectories. `init` supplies
/// the starting whitened parameters; `goal_f` is carried into the state for
/// replanning.
#[allow(clippy::too_many_arguments)]
fn solve(
    config: &PlannerConfig,
    robot: &RobotSpec,
    grid: &SdfGrid,
    targets: &Targets,
    z_c: Vec<f64>,
    flags: Vec<bool>,
    u_c: Vec<Vec<f64>>,
    z_free: Vec<f64>,
    init_mu_w: Vec<Vec<f64>>,
    init_l_w: Vec<LowerTri>,
    iterations: usize,
    t_lo: f64,
    goal_f: Vec<f64>,
) -> Result<PlanResult> {
    let started = Instant::now();
    let d = robot.dof();
    let kappa0 = vec![config.kernel.length_scale; d];
    let var0 = vec![config.kernel.variance; d];
    let spec = EvalSpec {
        robot,
        grid,
        weights: &config.weights,
        targets,
        slope: config.squash_slope,
        family: config.kernel.family,
        z_c,
        derivative_flags: flags,
        u_c: u_c.clone(),
        times: linspace(t_lo, 1.0, config.t),
        n_samples: config.samples_per_iteration,
        n_features: config.n_features,
    };
    let mut params = Params::pack(&init_mu_w, &init_l_w, &z_free, &kappa0, &var0);
    let trainable = config.trainable;
    let mut flat = params.flatten(&trainable);
    let mut adam = AdamState::new(config.adam, flat.len());
    let mut seed_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::with_capacity(iterations);
    for iter in 0..iterations {
        let iter_seed = seed_rng.next_u64();
        let (loss, grad) = gradient(&spec, &params, &trainable, iter_seed)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter });
        }
        trace.push(loss);
        adam.step(&mut flat, &grad);
        params.unflatten(&trainable, &flat);
    }

    // final state and extraction
    let kernel = KernelSpec::new(config.kernel.family, params.kappa(), params.var())?;
    let state = VariationalState {
        inducing: spec.inducing(&params.z_free),
        u_c,
        mu_w: params.mu_w.clone(),
        l_w: params.l_w(),
    };
    let priors = conditioned_priors(&state, &kernel)?;
    let qt = config.query_t.unwrap_or(config.t);
    let times = linspace(t_lo, 1.0, qt);
    let dense_times = linspace(t_lo, 1.0, 4 * qt);
    let moments = posterior_moments_from_priors(&state, &priors, &times);

    // posterior mean derivative per dimension (for velocities)
    let with_vel = config.kernel.family.supports_derivatives();
    let mut mean_f = vec![vec![0.0; d]; qt];
    let mut mean_fd = vec![vec![0.0; d]; qt];
    for (dim, prior) in priors.iter().enumerate() {
        let mu_free = prior.free_mean(&state.mu_w[dim]);
        let mut mu_u = prior.u_c.clone();
        mu_u.extend_from_slice(&mu_free);
        let alpha = prior.l_full.cholesky_solve(&mu_u);
        for (ti, &t) in times.iter().enumerate() {
            mean_f[ti][dim] = dot(&prior.cross_row(t, EvalKind::Value), &alpha);
            if with_vel {
                mean_fd[ti][dim] = dot(&prior.cross_row(t, EvalKind::Derivative), &alpha);
            }
        }
    }
    let slope = config.squash_slope;
    // The conditioned solve hits the constrained values only up to the
    // Cholesky jitter (~1e-6 after amplification); the endpoints are known
    // exactly, so snap the boundary rows to them.
    let constrain_goal = spec.z_c.len() > 1;
    let start_row: Vec<f64> = robot.squash(
        &(0..d).map(|dim| spec.u_c[dim][0]).collect::<Vec<f64>>(),
        slope,
    );
    let goal_row: Vec<f64> = robot.squash(&goal_f, slope);
    let snap = |joints: &mut Vec<Vec<f64>>| {
        *joints.first_mut().expect("nonempty path") = start_row.clone();
        if constrain_goal {
            *joints.last_mut().expect("nonempty path") = goal_row.clone();
        }
    };
    let mut mean_joints = Vec::with_capacity(qt);
    let mut mean_vel = Vec::with_capacity(qt);
    let mut mean_std = Vec::with_capacity(qt);
    for ti in 0..qt {
        mean_joints.push(robot.squash(&mean_f[ti], slope));
        if with_vel {
            mean_vel.push(robot.joint_velocity(&mean_f[ti], &mean_fd[ti], slope));
        }
        let sd: Vec<f64> = (0..d)
            .map(|dim| moments.marginal_var.get(ti, dim).sqrt())
            .collect();
        let hi_f: Vec<f64> = (0..d).map(|dim| mean_f[ti][dim] + sd[dim]).collect();
        let lo_f: Vec<f64> = (0..d).map(|dim| mean_f[ti][dim] - sd[dim]).collect();
        let hi = robot.squash(&hi_f, slope);
        let lo = robot.squash(&lo_f, slope);
        mean_std.push((0..d).map(|dim| 0.5 * (hi[dim] - lo[dim])).collect());
    }
    snap(&mut mean_joints);
    let mean_traj = Trajectory {
        times: times.clone(),
        joints: mean_joints.clone(),
        velocities: if with_vel { Some(mean_vel) } else { None },
        std: Some(mean_std),
    };
    let mut mean_dense = Vec::with_capacity(dense_times.len());
    {
        let mom = posterior_moments_from_priors(&state, &priors, &dense_times);
        for ti in 0..dense_times.len() {
            let row: Vec<f64> = (0..d).map(|dim| mom.mean.get(ti, dim)).collect();
            mean_dense.push(robot.squash(&row, slope));
        }
        snap(&mut mean_dense);
    }

    // pathwise posterior samples, drawn from a dedicated stream
    let mut draw_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = draw_noise(
        config.kernel.family,
        d,
        state.inducing.n_free(),
        config.posterior_samples,
        config.n_features,
        &mut draw_rng,
    );
    let sample_set = assemble_samples(priors, &state.mu_w, &state.l_w, &noise);
    let mut sample_trajs = Vec::with_capacity(config.posterior_samples);
    let mut sample_dense = Vec::with_capacity(config.posterior_samples);
    for s in 0..config.posterior_samples {
        let f = sample_set.evaluate(s, &times);
        let mut joints: Vec<Vec<f64>> = (0..qt)
            .map(|ti| {
                let row: Vec<f64> = (0..d).map(|dim| f.get(ti, dim)).collect();
                robot.squash(&row, slope)
            })
            .collect();
        let velocities = if with_vel {
            let fd = sample_set.evaluate_derivative(s, &times);
            Some(
                (0..qt)
                    .map(|ti| {
                        let row: Vec<f64> = (0..d).map(|dim| f.get(ti, dim)).collect();
                        let drow: Vec<f64> = (0..d).map(|dim| fd.get(ti, dim)).collect();
                        robot.joint_velocity(&row, &drow, slope)
                    })
                    .collect(),
            )
        } else {
            None
        };
        snap(&mut joints);
        sample_trajs.push(Trajectory {
            times: times.clone(),
            joints,
            velocities,
            std: None,
        });
        let fdense = sample_set.evaluate(s, &dense_times);
        let mut dense: Vec<Vec<f64>> = (0..dense_times.len())
            .map(|ti| {
                let row: Vec<f64> = (0..d).map(|dim| fdense.get(ti, dim)).collect();
                robot.squash(&row, slope)
            })
            .collect();
        snap(&mut dense);
        sample_dense.push(dense);
    }

    // selection: lowest collision cost over samples plus the mean
    let cost_of = |dense: &Vec<Vec<f64>>| {
        let m = Mat::from_fn(dense.len(), d, |i, j| dense[i][j]);
        collision_cost(robot, grid, &config.weights, &m)
    };
    let mut best_idx = usize::MAX; // MAX marks the mean
    let mut best_cost = cost_of(&mean_dense);
    for (s, dense) in sample_dense.iter().enumerate() {
        let c = cost_of(dense);
        if c < best_cost {
            best_cost = c;
            best_idx = s;
        }
    }
    let (selected, selected_dense) = if best_idx == usize::MAX {
        (mean_traj.clone(), mean_dense)
    } else {
        (sample_trajs[best_idx].clone(), sample_dense[best_idx].clone())
    };

    let final_loss = *trace.last().expect("at least one iteration");
    Ok(PlanResult {
        mean: mean_traj,
        samples: sample_trajs,
        selected,
        selected_dense,
        selected_collision_cost: best_cost,
        final_loss,
        loss_trace: trace,
        state: PlannerState {
            config: config.clone(),
            kernel,
            state,
            targets: targets.clone(),
            goal_f,
            t_lo,
        },
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// Initial whitened mean for a target free-inducing profile in unconstrained
/// space: `mu_w = L_cond^{-1} (target - m_prior)` per dimension.
fn whiten_profile(
    spec: &EvalSpec,
    z_free: &[f64],
    kappa: &[f64],
    var: &[f64],
    target: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let priors = spec.priors_generic::<f64>(z_free, kappa, var)?;
    Ok(priors
        .iter()
        .enumerate()
        .map(|(dim, prior)| {
            let resid: Vec<f64> = target[dim]
                .iter()
                .zip(prior.m_prior.iter())
                .map(|(&t, &m)| t - m)
                .collect();
            prior.l_cond.solve_lower(&resid)
        })
        .collect())
}

/// Plan a motion from scratch.
pub fn plan(
    config: &PlannerConfig,
    robot: &RobotSpec,
    grid: &SdfGrid,
    problem: &PlanProblem,
) -> Result<PlanResult> {
    config.validate()?;
    robot.validate()?;
    if let Some(g) = &problem.targets.grasp {
        g.validate()?;
    }
    let d = robot.dof();
    if problem.start.len() != d || problem.goal.len() != d {
        return Err(Error::InvalidSpec("start/goal dimension mismatch".into()));
    }
    let slope = config.squash_slope;
    let f_start = unsquash_endpoint(robot, &problem.start, slope)?;
    let f_goal = unsquash_endpoint(robot, &problem.goal, slope)?;

    let z_c: Vec<f64> = if config.constrain_goal {
        vec![0.0, 1.0]
    } else {
        vec![0.0]
    };
    let flags = vec![config.pin_velocities; z_c.len()];
    let mf = config.m.saturating_sub(z_c.len());
    let z_free = free_times(0.0, mf, config.constrain_goal);
    let inducing = InducingSet {
        z_c: z_c.clone(),
        z_free: z_free.clone(),
        derivative_flags: flags.clone(),
    };
    let u_c: Vec<Vec<f64>> = (0..d)
        .map(|dim| {
            let vals: Vec<f64> = if config.constrain_goal {
                vec![f_start[dim], f_goal[dim]]
            } else {
                vec![f_start[dim]]
            };
            inducing.constrained_values(&vals)
        })
        .collect();

    let kappa0 = vec![config.kernel.length_scale; d];
    let var0 = vec![config.kernel.variance; d];
    let nf = z_free.len();
    let spec = EvalSpec {
        robot,
        grid,
        weights: &config.weights,
        targets: &problem.targets,
        slope,
        family: config.kernel.family,
        z_c: z_c.clone(),
        derivative_flags: flags.clone(),
        u_c: u_c.clone(),
        times: linspace(0.0, 1.0, config.t),
        n_samples: config.samples_per_iteration,
        n_features: config.n_features,
    };
    let init_mu_w = match &config.init {
        InitMode::Zeros => vec![vec![0.0; nf]; d],
        InitMode::Interpolated => {
            let target: Vec<Vec<f64>> = (0..d)
                .map(|dim| {
                    z_free
                        .iter()
                        .map(|&z| f_start[dim] + z * (f_goal[dim] - f_start[dim]))
                        .collect()
                })
                .collect();
            whiten_profile(&spec, &z_free, &kappa0, &var0, &target)?
        }
        InitMode::Fixed(profile) => {
            if profile.len() != d || profile.iter().any(|p| p.len() != nf) {
                return Err(Error::InvalidSpec(
                    "fixed init profile must be [dof][free] shaped".into(),
                ));
            }
            whiten_profile(&spec, &z_free, &kappa0, &var0, profile)?
        }
    };
    let init_l_w = vec![LowerTri::identity(nf); d];
    solve(
        config,
        robot,
        grid,
        &problem.targets,
        z_c,
        flags,
        u_c,
        z_free,
        init_mu_w,
        init_l_w,
        config.iterations,
        0.0,
        f_goal,
    )
}

/// Joint-space posterior intervals `squash(mean ± alpha·std)` at the given
/// times.
pub fn intervals(
    ps: &PlannerState,
    robot: &RobotSpec,
    times: &[f64],
    alpha: f64,
) -> Result<Vec<Vec<(f64, f64)>>> {
    assert!(alpha >= 0.0);
    let priors = conditioned_priors(&ps.state, &ps.kernel)?;
    let moments = posterior_moments_from_priors(&ps.state, &priors, times);
    let d = ps.state.dims();
    let slope = ps.config.squash_slope;
    let mut out = Vec::with_capacity(times.len());
    for ti in 0..times.len() {
        let lo_f: Vec<f64> = (0..d)
            .map(|dim| moments.mean.get(ti, dim) - alpha * moments.marginal_var.get(ti, dim).sqrt())
            .collect();
        let hi_f: Vec<f64> = (0..d)
            .map(|dim| moments.mean.get(ti, dim) + alpha * moments.marginal_var.get(ti, dim).sqrt())
            .collect();
        let lo = robot.squash(&lo_f, slope);
        let hi = robot.squash(&hi_f, slope);
        out.push(lo.into_iter().zip(hi).collect());
    }
    Ok(out)
}

/// Re-anchor the plan at `current_time` / `current_joints` and optimize a
/// (shorter) segment to the goal, warm-starting from the previous posterior.
/// The free inducing times are remapped affinely into the remaining
/// interval; this construction is ours — the replanning description leaves
/// the exact movement of inducing points open.
pub fn replan(
    ps: &PlannerState,
    robot: &RobotSpec,
    grid: &SdfGrid,
    current_time: f64,
    current_joints: &[f64],
) -> Result<PlanResult> {
    if !(current_time > 0.0 && current_time < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "replan time {current_time} must lie in (0,1)"
        )));
    }
    let config = &ps.config;
    let d = robot.dof();
    let slope = config.squash_slope;
    let f_cur = unsquash_endpoint(robot, current_joints, slope)?;

    let constrain_goal = ps.state.inducing.z_c.len() > 1;
    let z_c: Vec<f64> = if constrain_goal {
        vec![current_time, 1.0]
    } else {
        vec![current_time]
    };
    let flags = vec![config.pin_velocities; z_c.len()];
    // affine remap of the free times into (current_time, 1), preserving
    // relative spacing within the previous segment
    let prev_lo = ps.t_lo;
    let z_free: Vec<f64> = ps
        .state
        .inducing
        .z_free
        .iter()
        .map(|&z| {
            let rel = (z - prev_lo) / (1.0 - prev_lo);
            current_time + rel * (1.0 - current_time)
        })
        .collect();
    let inducing = InducingSet {
        z_c: z_c.clone(),
        z_free: z_free.clone(),
        derivative_flags: flags.clone(),
    };
    let u_c: Vec<Vec<f64>> = (0..d)
        .map(|dim| {
            let vals: Vec<f64> = if constrain_goal {
                vec![f_cur[dim], ps.goal_f[dim]]
            } else {
                vec![f_cur[dim]]
            };
            inducing.constrained_values(&vals)
        })
        .collect();

    // warm start: previous posterior mean evaluated at the remapped times
    let prev_priors = conditioned_priors(&ps.state, &ps.kernel)?;
    let mut target = vec![vec![0.0; z_free.len()]; d];
    for (dim, prior) in prev_priors.iter().enumerate() {
        let mu_free = prior.free_mean(&ps.state.mu_w[dim]);
        let mut mu_u = prior.u_c.clone();
        mu_u.extend_from_slice(&mu_free);
        let alpha = prior.l_full.cholesky_solve(&mu_u);
        for (j, &z) in z_free.iter().enumerate() {
            target[dim][j] = dot(&prior.cross_row(z, EvalKind::Value), &alpha);
        }
    }
    let kappa = ps.kernel.length_scale.clone();
    let var = ps.kernel.variance.clone();
    let spec = EvalSpec {
        robot,
        grid,
        weights: &config.weights,
        targets: &ps.targets,
        slope,
        family: config.kernel.family,
        z_c: z_c.clone(),
        derivative_flags: flags.clone(),
        u_c: u_c.clone(),
        times: linspace(current_time, 1.0, config.t),
        n_samples: config.samples_per_iteration,
        n_features: config.n_features,
    };
    let init_mu_w = whiten_profile(&spec, &z_free, &kappa, &var, &target)?;
    let init_l_w = ps.state.l_w.clone();
    solve(
        config,
        robot,
        grid,
        &ps.targets,
        z_c,
        flags,
        u_c,
        z_free,
        init_mu_w,
        init_l_w,
        config.replan_iterations,
        current_time,
        ps.goal_f.clone(),
    )
}

/// Densified success check: every dense configuration keeps every sphere
/// strictly outside the obstacles, and the trajectory endpoints hit the
/// requested start/goal within `1e-6`.
pub fn check_success(
    robot: &RobotSpec,
    grid: &SdfGrid,
    dense_joints: &[Vec<f64>],
    traj: &Trajectory,
    start: &[f64],
    goal: Option<&[f64]>,
) -> bool {
    for row in dense_joints {
        for (center, radius) in robot.sphere_positions(row) {
            if grid.query(center) - radius <= 0.0 {
                return false;
            }
        }
    }
    let first = traj.joints.first().expect("nonempty trajectory");
    for (a, b) in first.iter().zip(start.iter()) {
        if (a - b).abs() > 1e-6 {
            return false;
        }
    }
    if let Some(goal) = goal {
        let last = traj.joints.last().expect("nonempty trajectory");
        for (a, b) in last.iter().zip(goal.iter()) {
            if (a - b).abs() > 1e-6 {
                return false;
            }
        }
    }
    true
}

/// JSON checkpoint: the full planner state plus a hash of the configuration
/// so a replan cannot silently resume under different settings.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    config_hash: u64,
    state: PlannerState,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn config_hash(config: &PlannerConfig) -> u64 {
    fnv1a(serde_json::to_string(config).expect("serializable config").as_bytes())
}

pub fn save_checkpoint(ps: &PlannerState, path: &Path) -> Result<()> {
    let cp = Checkpoint {
        config_hash: config_hash(&ps.config),
        state: ps.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&cp)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PlannerState> {
    let cp: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if cp.config_hash != config_hash(&cp.state.config) {
        return Err(Error::InvalidSpec(
            "checkpoint config hash mismatch".into(),
        ));
    }
    Ok(cp.state)
}
