//! Negative-ELBO assembly: per-sample collision, soft-constraint, grasp, and
//! velocity-tracking costs combined with the whitened KL.
//!
//! Everything is generic over the scalar type so the same code path serves
//! plain evaluation and dual-number forward sweeps; a hand-derived reverse
//! pass produces the per-timestep cost gradients with respect to the
//! unconstrained path values and their time derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::SampleSet;
use crate::linalg::Mat;
use crate::robot::{frame_pose, RobotSpec};
use crate::scalar::Real;
use crate::sdf::{hinge_scalar, SdfGrid};

/// Fraction of each joint's half-range beyond which the optional
/// position-threshold soft penalty engages.
const POSITION_SOFT_FRAC: f64 = 0.9;

fn default_sigma_obs() -> f64 {
    0.005
}
fn default_sigma_c() -> f64 {
    0.1
}
fn default_sigma_grasp() -> f64 {
    0.05
}
fn default_sigma_velocity() -> f64 {
    0.1
}
fn default_eps() -> f64 {
    0.05
}
fn default_scale() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_vel_threshold() -> f64 {
    1.5
}

/// Per-term noise scales, safety margin, and enable flags of the likelihood.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    /// Collision observation scale (the likelihood covariance is
    /// `sigma_obs^2 I`).
    #[serde(default = "default_sigma_obs")]
    pub sigma_obs: f64,
    /// Soft-constraint scale.
    #[serde(default = "default_sigma_c")]
    pub sigma_c: f64,
    /// Grasp-residual scale.
    #[serde(default = "default_sigma_grasp")]
    pub sigma_grasp: f64,
    /// Velocity-tracking scale.
    #[serde(default = "default_sigma_velocity")]
    pub sigma_velocity: f64,
    /// Safety margin added to every sphere radius, meters.
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Multiplier on the averaged likelihood term.
    #[serde(default = "default_scale")]
    pub likelihood_scale: f64,
    #[serde(default = "default_true")]
    pub enable_collision: bool,
    #[serde(default)]
    pub enable_soft_limits: bool,
    #[serde(default)]
    pub enable_grasp: bool,
    #[serde(default)]
    pub enable_velocity: bool,
    /// Apply the soft penalty to joint positions (threshold at 90% of the
    /// half-range) instead of joint velocities.
    #[serde(default)]
    pub soft_on_positions: bool,
    /// Velocity threshold for joints without an explicit `vel_max`, rad/s.
    #[serde(default = "default_vel_threshold")]
    pub velocity_threshold: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            sigma_obs: default_sigma_obs(),
            sigma_c: default_sigma_c(),
            sigma_grasp: default_sigma_grasp(),
            sigma_velocity: default_sigma_velocity(),
            eps: default_eps(),
            likelihood_scale: default_scale(),
            enable_collision: true,
            enable_soft_limits: false,
            enable_grasp: false,
            enable_velocity: false,
            soft_on_positions: false,
            velocity_threshold: default_vel_threshold(),
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_obs", self.sigma_obs),
            ("sigma_c", self.sigma_c),
            ("sigma_grasp", self.sigma_grasp),
            ("sigma_velocity", self.sigma_velocity),
            ("likelihood_scale", self.likelihood_scale),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.eps >= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "eps must be nonnegative, got {}",
                self.eps
            )));
        }
        Ok(())
    }

    /// Needs path time-derivatives to evaluate?
    pub fn needs_derivatives(&self) -> bool {
        self.enable_velocity || (self.enable_soft_limits && !self.soft_on_positions)
    }
}

/// Desired end-effector pose for grasp problems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraspTarget {
    pub position: [f64; 3],
    /// Orthonormal target rotation, rows are world-frame basis images.
    pub rotation: [[f64; 3]; 3],
    #[serde(default = "default_scale")]
    pub position_weight: f64,
    #[serde(default = "default_scale")]
    pub rotation_weight: f64,
}

impl GraspTarget {
    pub fn validate(&self) -> Result<()> {
        // rows orthonormal within a loose tolerance
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += self.rotation[i][k] * self.rotation[j][k];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                if (acc - want).abs() > 1e-6 {
                    return Err(Error::InvalidSpec(
                        "grasp rotation must be orthonormal".into(),
                    ));
                }
            }
        }
        if self.position_weight < 0.0 || self.rotation_weight < 0.0 {
            return Err(Error::InvalidSpec("grasp weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-joint target velocity profile (constant over the horizon).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VelocityTarget {
    pub mu_v: Vec<f64>,
}

/// Sum of squared hinge penalties over every timestep and sphere, scaled by
/// `sigma_obs^-2`. Zero exactly when every sphere clears `eps` everywhere.
pub fn collision_cost<S: Real>(
    robot: &RobotSpec,
    grid: &SdfGrid,
    weights: &ObjectiveWeights,
    theta_path: &Mat<S>,
) -> S {
    let inv = 1.0 / (weights.sigma_obs * weights.sigma_obs);
    let mut cost = S::zero();
    let d = robot.dof();
    debug_assert_eq!(theta_path.cols, d);
    for t in 0..theta_path.rows {
        let theta: Vec<S> = (0..d).map(|j| theta_path.get(t, j)).collect();
        for (center, radius) in robot.sphere_positions(&theta) {
            let surface = grid.query(center) - S::from_f64(radius);
            let h = hinge_scalar(surface, weights.eps);
            cost += h * h * S::from_f64(inv);
        }
    }
    cost
}

/// Squared linear penalty on per-element excess over a threshold:
/// `sum max(|q| - threshold, 0)^2 / sigma_c^2`.
pub fn soft_limit_cost<S: Real>(
    weights: &ObjectiveWeights,
    quantity: &Mat<S>,
    thresholds: &[f64],
) -> S {
    debug_assert_eq!(quantity.cols, thresholds.len());
    let inv = 1.0 / (weights.sigma_c * weights.sigma_c);
    let mut cost = S::zero();
    for t in 0..quantity.rows {
        for j in 0..quantity.cols {
            let e = (quantity.get(t, j).abs() - S::from_f64(thresholds[j])).max_zero();
            cost += e * e * S::from_f64(inv);
        }
    }
    cost
}

/// Squared end-pose residual against the grasp target:
/// `(pw ||dp||^2 + rw ||dR||_F^2) / sigma_grasp^2` at one configuration.
pub fn grasp_cost<S: Real>(
    robot: &RobotSpec,
    target: &GraspTarget,
    weights: &ObjectiveWeights,
    theta_end: &[S],
) -> S {
    let poses = robot.forward_kinematics(theta_end);
    let end = poses[poses.len() - 1];
    let inv = 1.0 / (weights.sigma_grasp * weights.sigma_grasp);
    let mut pos = S::zero();
    for i in 0..3 {
        let dp = end.position[i] - S::from_f64(target.position[i]);
        pos += dp * dp;
    }
    let mut rot = S::zero();
    for i in 0..3 {
        for j in 0..3 {
            let dr = end.rotation[i][j] - S::from_f64(target.rotation[i][j]);
            rot += dr * dr;
        }
    }
    (S::from_f64(target.position_weight) * pos + S::from_f64(target.rotation_weight) * rot)
        * S::from_f64(inv)
}

/// Squared deviation of joint velocities from the target profile.
pub fn velocity_cost<S: Real>(
    weights: &ObjectiveWeights,
    target: &VelocityTarget,
    velocities: &Mat<S>,
) -> S {
    debug_assert_eq!(velocities.cols, target.mu_v.len());
    let inv = 1.0 / (weights.sigma_velocity * weights.sigma_velocity);
    let mut cost = S::zero();
    for t in 0..velocities.rows {
        for j in 0..velocities.cols {
            let dv = velocities.get(t, j) - S::from_f64(target.mu_v[j]);
            cost += dv * dv * S::from_f64(inv);
        }
    }
    cost
}

/// Enabled-term costs of one path sample.
#[derive(Debug, Clone, Copy)]
pub struct CostBreakdown<S = f64> {
    pub collision: S,
    pub soft: S,
    pub grasp: S,
    pub velocity: S,
}

impl<S: Real> CostBreakdown<S> {
    pub fn total(&self) -> S {
        self.collision + self.soft + self.grasp + self.velocity
    }
}

/// Targets wired through from problem definitions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Targets {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp: Option<GraspTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<VelocityTarget>,
}

fn soft_thresholds(robot: &RobotSpec, weights: &ObjectiveWeights) -> Vec<f64> {
    if weights.soft_on_positions {
        robot
            .joints
            .iter()
            .map(|j| POSITION_SOFT_FRAC * 0.5 * (j.max - j.min))
            .collect()
    } else {
        robot
            .joints
            .iter()
            .map(|j| j.vel_max.unwrap_or(weights.velocity_threshold))
            .collect()
    }
}

/// Evaluate all enabled likelihood terms for one unconstrained path `f`
/// (rows are timesteps) with time-derivatives `fdot`.
pub fn sample_cost<S: Real>(
    robot: &RobotSpec,
    grid: &SdfGrid,
    weights: &ObjectiveWeights,
    targets: &Targets,
    slope: f64,
    f: &Mat<S>,
    fdot: &Mat<S>,
) -> CostBreakdown<S> {
    let d = robot.dof();
    let t_n = f.rows;
    let mut theta = Mat::zeros(t_n, d);
    for t in 0..t_n {
        let row: Vec<S> = (0..d).map(|j| f.get(t, j)).collect();
        for (j, v) in robot.squash(&row, slope).into_iter().enumerate() {
            theta.set(t, j, v);
        }
    }
    let collision = if weights.enable_collision {
        collision_cost(robot, grid, weights, &theta)
    } else {
        S::zero()
    };

    let need_vel = weights.needs_derivatives();
    let mut velocities = Mat::zeros(if need_vel { t_n } else { 0 }, d);
    if need_vel {
        for t in 0..t_n {
            let row: Vec<S> = (0..d).map(|j| f.get(t, j)).collect();
            let drow: Vec<S> = (0..d).map(|j| fdot.get(t, j)).collect();
            for (j, v) in robot.joint_velocity(&row, &drow, slope).into_iter().enumerate() {
                velocities.set(t, j, v);
            }
        }
    }

    let soft = if weights.enable_soft_limits {
        let thr = soft_thresholds(robot, weights);
        if weights.soft_on_positions {
            // penalize |theta - midpoint| beyond the threshold
            let mut centered = Mat::zeros(t_n, d);
            for t in 0..t_n {
                for j in 0..d {
                    let mid = 0.5 * (robot.joints[j].min + robot.joints[j].max);
                    centered.set(t, j, theta.get(t, j) - S::from_f64(mid));
                }
            }
            soft_limit_cost(weights, &centered, &thr)
        } else {
            soft_limit_cost(weights, &velocities, &thr)
        }
    } else {
        S::zero()
    };

    let grasp = match (&targets.grasp, weights.enable_grasp) {
        (Some(g), true) => {
            let end: Vec<S> = (0..d).map(|j| theta.get(t_n - 1, j)).collect();
            grasp_cost(robot, g, weights, &end)
        }
        _ => S::zero(),
    };

    let velocity = match (&targets.velocity, weights.enable_velocity) {
        (Some(v), true) => velocity_cost(weights, v, &velocities),
        _ => S::zero(),
    };

    CostBreakdown {
        collision,
        soft,
        grasp,
        velocity,
    }
}

/// Gradients of a sample's total cost with respect to the unconstrained path
/// values and their time derivatives (both `T x d`).
#[derive(Debug, Clone)]
pub struct PathGrad {
    pub g_f: Mat<f64>,
    pub g_fdot: Mat<f64>,
}

/// Evaluate one sample's cost and its reverse-mode gradient. Chains hinge,
/// trilinear SDF gradient, sphere/point Jacobians, and the squash derivatives
/// by hand; hinge and excess kinks use the zero subgradient at the kink.
pub fn sample_cost_reverse(
    robot: &RobotSpec,
    grid: &SdfGrid,
    weights: &ObjectiveWeights,
    targets: &Targets,
    slope: f64,
    f: &Mat<f64>,
    fdot: &Mat<f64>,
) -> (CostBreakdown<f64>, PathGrad) {
    let d = robot.dof();
    let t_n = f.rows;
    let mut g_f = Mat::zeros(t_n, d);
    let mut g_fdot = Mat::zeros(t_n, d);
    let mut out = CostBreakdown {
        collision: 0.0,
        soft: 0.0,
        grasp: 0.0,
        velocity: 0.0,
    };
    let inv_obs = 1.0 / (weights.sigma_obs * weights.sigma_obs);
    let inv_c = 1.0 / (weights.sigma_c * weights.sigma_c);
    let inv_g = 1.0 / (weights.sigma_grasp * weights.sigma_grasp);
    let inv_v = 1.0 / (weights.sigma_velocity * weights.sigma_velocity);
    let thr = soft_thresholds(robot, weights);

    for t in 0..t_n {
        let f_row: Vec<f64> = (0..d).map(|j| f.get(t, j)).collect();
        let fd_row: Vec<f64> = (0..d).map(|j| fdot.get(t, j)).collect();
        let theta = robot.squash(&f_row, slope);
        let sq = robot.squash_derivatives(&f_row, slope);
        let fk = robot.fk_with_axes(&theta);
        // accumulated dCost/dtheta_j for this timestep
        let mut g_theta = vec![0.0; d];

        if weights.enable_collision {
            for s in &robot.spheres {
                let center = frame_pose(&fk.poses, s.link).transform(s.offset);
                let (dist, grad) = grid.query_with_gradient(center);
                let pre = weights.eps - (dist - s.radius);
                if pre > 0.0 {
                    out.collision += pre * pre * inv_obs;
                    let coef = 2.0 * pre * inv_obs;
                    let g_center = [-coef * grad[0], -coef * grad[1], -coef * grad[2]];
                    for j in 0..s.link.min(d) {
                        let col = fk.point_jacobian_col(s.link, center, j);
                        g_theta[j] +=
                            g_center[0] * col[0] + g_center[1] * col[1] + g_center[2] * col[2];
                    }
                }
            }
        }

        if weights.enable_soft_limits {
            if weights.soft_on_positions {
                for j in 0..d {
                    let mid = 0.5 * (robot.joints[j].min + robot.joints[j].max);
                    let q = theta[j] - mid;
                    let e = (q.abs() - thr[j]).max(0.0);
                    if e > 0.0 {
                        out.soft += e * e * inv_c;
                        g_theta[j] += 2.0 * e * inv_c * q.signum();
                    }
                }
            } else {
                for j in 0..d {
                    let v = sq[j].0 * fd_row[j];
                    let e = (v.abs() - thr[j]).max(0.0);
                    if e > 0.0 {
                        out.soft += e * e * inv_c;
                        let dv = 2.0 * e * inv_c * v.signum();
                        g_fdot.set(t, j, g_fdot.get(t, j) + dv * sq[j].0);
                        g_f.set(t, j, g_f.get(t, j) + dv * sq[j].1 * fd_row[j]);
                    }
                }
            }
        }

        if weights.enable_velocity {
            if let Some(vt) = &targets.velocity {
                for j in 0..d {
                    let v = sq[j].0 * fd_row[j];
                    let dvj = v - vt.mu_v[j];
                    out.velocity += dvj * dvj * inv_v;
                    let dv = 2.0 * dvj * inv_v;
                    g_fdot.set(t, j, g_fdot.get(t, j) + dv * sq[j].0);
                    g_f.set(t, j, g_f.get(t, j) + dv * sq[j].1 * fd_row[j]);
                }
            }
        }

        if t == t_n - 1 && weights.enable_grasp {
            if let Some(g) = &targets.grasp {
                let end = fk.poses[d - 1];
                let dp = [
                    end.position[0] - g.position[0],
                    end.position[1] - g.position[1],
                    end.position[2] - g.position[2],
                ];
                out.grasp += g.position_weight
                    * (dp[0] * dp[0] + dp[1] * dp[1] + dp[2] * dp[2])
                    * inv_g;
                let mut dr = [[0.0; 3]; 3];
                let mut rot_sq = 0.0;
                for i in 0..3 {
                    for k in 0..3 {
                        dr[i][k] = end.rotation[i][k] - g.rotation[i][k];
                        rot_sq += dr[i][k] * dr[i][k];
                    }
                }
                out.grasp += g.rotation_weight * rot_sq * inv_g;
                for j in 0..d {
                    let col = fk.point_jacobian_col(d, end.position, j);
                    let mut acc = 2.0
                        * g.position_weight
                        * inv_g
                        * (dp[0] * col[0] + dp[1] * col[1] + dp[2] * col[2]);
                    let drj = fk.end_rotation_derivative(j);
                    let mut inner = 0.0;
                    for i in 0..3 {
                        for k in 0..3 {
                            inner += dr[i][k] * drj[i][k];
                        }
                    }
                    acc += 2.0 * g.rotation_weight * inv_g * inner;
                    g_theta[j] += acc;
                }
            }
        }

        for j in 0..d {
            g_f.set(t, j, g_f.get(t, j) + g_theta[j] * sq[j].0);
        }
    }
    (out, PathGrad { g_f, g_fdot })
}

/// Negative evidence lower bound over a sample batch:
/// `likelihood_scale * mean_k 1/2 (collision + soft + grasp + velocity) + kl`.
pub fn negative_elbo<S: Real>(
    samples: &SampleSet<S>,
    times: &[S],
    kl: S,
    weights: &ObjectiveWeights,
    robot: &RobotSpec,
    grid: &SdfGrid,
    targets: &Targets,
    slope: f64,
) -> S {
    let k = samples.samples.len();
    if k == 0 {
        return kl;
    }
    let need_vel = weights.needs_derivatives();
    let mut acc = S::zero();
    for s in 0..k {
        let f = samples.evaluate(s, times);
        let fdot = if need_vel {
            samples.evaluate_derivative(s, times)
        } else {
            Mat::zeros(times.len(), samples.dims())
        };
        let cb = sample_cost(robot, grid, weights, targets, slope, &f, &fdot);
        acc += cb.total();
    }
    S::from_f64(weights.likelihood_scale) * S::from_f64(0.5 / k as f64) * acc + kl
}
