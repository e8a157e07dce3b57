//! Parameter flattening, exact gradients of the seeded negative ELBO, and
//! Adam updates.
//!
//! Gradients are computed without any numeric differencing: the variational
//! mean and covariance factor get a hand-derived reverse pass (the path
//! evaluations are affine in the inducing draw, so their adjoints are a few
//! triangular products), while inducing times and log-hyperparameters reuse
//! the full evaluation pipeline in dual numbers, one forward sweep per
//! scalar. A central finite-difference checker validates both routes.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{
    assemble_samples, conditioned_prior, draw_noise, kl_divergence, DimPrior, InducingSet,
    LowerTri, NoiseDraws, SampleSet,
};
use crate::kernels::{EvalKind, MaternFamily};
use crate::linalg::Mat;
use crate::objective::{negative_elbo, sample_cost_reverse, ObjectiveWeights, Targets};
use crate::robot::RobotSpec;
use crate::scalar::{Dual, Real};
use crate::sdf::SdfGrid;

/// Which parameter groups the optimizer updates. The constrained inducing
/// values and the observation scale are never trainable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainableSet {
    #[serde(default = "yes")]
    pub mean: bool,
    #[serde(default = "yes")]
    pub covariance: bool,
    #[serde(default)]
    pub inducing_times: bool,
    #[serde(default)]
    pub length_scales: bool,
    #[serde(default)]
    pub variance: bool,
}

fn yes() -> bool {
    true
}

impl Default for TrainableSet {
    fn default() -> Self {
        TrainableSet {
            mean: true,
            covariance: true,
            inducing_times: false,
            length_scales: false,
            variance: false,
        }
    }
}

fn default_beta1() -> f64 {
    0.8
}
fn default_beta2() -> f64 {
    0.95
}
fn default_eta() -> f64 {
    0.09
}

/// Adam configuration, defaulting to the tuned values used throughout the
/// experiments.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eta: default_eta(),
        }
    }
}

/// Adam accumulator state over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        assert!(config.beta1 > 0.0 && config.beta1 < 1.0);
        assert!(config.beta2 > 0.0 && config.beta2 < 1.0);
        AdamState {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Standard bias-corrected descent step, in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.config.eta * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y + (-(-y).exp()).ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unconstrained optimization variables. The covariance factor's diagonal is
/// stored through a softplus so every realized factor is a valid Cholesky;
/// kernel hyperparameters are stored in log space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Params {
    /// Whitened variational mean, `[dim][free]`.
    pub mu_w: Vec<Vec<f64>>,
    /// Packed lower-triangular factor with raw (pre-softplus) diagonal.
    pub l_raw: Vec<Vec<f64>>,
    /// Free inducing times.
    pub z_free: Vec<f64>,
    pub log_kappa: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl Params {
    pub fn dims(&self) -> usize {
        self.mu_w.len()
    }

    pub fn n_free(&self) -> usize {
        self.mu_w.first().map(|v| v.len()).unwrap_or(0)
    }

    /// Build from realized quantities.
    pub fn pack(
        mu_w: &[Vec<f64>],
        l_w: &[LowerTri],
        z_free: &[f64],
        kappa: &[f64],
        var: &[f64],
    ) -> Self {
        let l_raw = l_w
            .iter()
            .map(|l| {
                let mut data = l.data.clone();
                for i in 0..l.n {
                    let idx = i * (i + 1) / 2 + i;
                    data[idx] = softplus_inv(data[idx]);
                }
                data
            })
            .collect();
        Params {
            mu_w: mu_w.to_vec(),
            l_raw,
            z_free: z_free.to_vec(),
            log_kappa: kappa.iter().map(|k| k.ln()).collect(),
            log_var: var.iter().map(|v| v.ln()).collect(),
        }
    }

    /// Realized covariance factors (softplus applied to the diagonal).
    pub fn l_w(&self) -> Vec<LowerTri> {
        let nf = self.n_free();
        self.l_raw
            .iter()
            .map(|raw| {
                let mut data = raw.clone();
                for i in 0..nf {
                    let idx = i * (i + 1) / 2 + i;
                    data[idx] = softplus(data[idx]);
                }
                LowerTri { n: nf, data }
            })
            .collect()
    }

    pub fn kappa(&self) -> Vec<f64> {
        self.log_kappa.iter().map(|l| l.exp()).collect()
    }

    pub fn var(&self) -> Vec<f64> {
        self.log_var.iter().map(|l| l.exp()).collect()
    }

    /// Concatenate the trainable groups into one flat vector. Order: mean,
    /// covariance, inducing times, log length scales, log variances.
    pub fn flatten(&self, trainable: &TrainableSet) -> Vec<f64> {
        let mut out = Vec::new();
        if trainable.mean {
            for v in &self.mu_w {
                out.extend_from_slice(v);
            }
        }
        if trainable.covariance {
            for v in &self.l_raw {
                out.extend_from_slice(v);
            }
        }
        if trainable.inducing_times {
            out.extend_from_slice(&self.z_free);
        }
        if trainable.length_scales {
            out.extend_from_slice(&self.log_kappa);
        }
        if trainable.variance {
            out.extend_from_slice(&self.log_var);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) over the same trainable set.
    pub fn unflatten(&mut self, trainable: &TrainableSet, flat: &[f64]) {
        let mut it = flat.iter().copied();
        let mut take = |dst: &mut [f64]| {
            for d in dst.iter_mut() {
                *d = it.next().expect("flat vector too short");
            }
        };
        if trainable.mean {
            for v in &mut self.mu_w {
                take(v);
            }
        }
        if trainable.covariance {
            for v in &mut self.l_raw {
                take(v);
            }
        }
        if trainable.inducing_times {
            take(&mut self.z_free);
        }
        if trainable.length_scales {
            take(&mut self.log_kappa);
        }
        if trainable.variance {
            take(&mut self.log_var);
        }
        debug_assert!(it.next().is_none(), "flat vector too long");
    }
}

/// Everything fixed during one optimization: world, robot, likelihood
/// configuration, constrained inducing block, and sampling sizes.
pub struct EvalSpec<'a> {
    pub robot: &'a RobotSpec,
    pub grid: &'a SdfGrid,
    pub weights: &'a ObjectiveWeights,
    pub targets: &'a Targets,
    pub slope: f64,
    pub family: MaternFamily,
    pub z_c: Vec<f64>,
    pub derivative_flags: Vec<bool>,
    /// Constrained inducing values per dimension, derivative rows included.
    pub u_c: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub n_samples: usize,
    pub n_features: usize,
}

impl<'a> EvalSpec<'a> {
    pub fn inducing(&self, z_free: &[f64]) -> InducingSet {
        InducingSet {
            z_c: self.z_c.clone(),
            z_free: z_free.to_vec(),
            derivative_flags: self.derivative_flags.clone(),
        }
    }

    pub fn priors_generic<S: Real>(
        &self,
        z_free: &[S],
        kappa: &[S],
        var: &[S],
    ) -> Result<Vec<DimPrior<S>>> {
        let mut rows: Vec<(S, EvalKind)> = self
            .z_c
            .iter()
            .map(|&t| (S::from_f64(t), EvalKind::Value))
            .collect();
        for (&t, &flag) in self.z_c.iter().zip(self.derivative_flags.iter()) {
            if flag {
                rows.push((S::from_f64(t), EvalKind::Derivative));
            }
        }
        rows.extend(z_free.iter().map(|&t| (t, EvalKind::Value)));
        let nc = rows.len() - z_free.len();
        (0..self.u_c.len())
            .map(|dim| {
                conditioned_prior(
                    self.family,
                    kappa[dim],
                    var[dim],
                    rows.clone(),
                    nc,
                    self.u_c[dim].iter().map(|&u| S::from_f64(u)).collect(),
                )
            })
            .collect()
    }

    fn draw(&self, z_free_len: usize, seed: u64) -> NoiseDraws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        draw_noise(
            self.family,
            self.u_c.len(),
            z_free_len,
            self.n_samples,
            self.n_features,
            &mut rng,
        )
    }

    fn elbo_generic<S: Real>(
        &self,
        params: &Params,
        z_free: &[S],
        kappa: &[S],
        var: &[S],
        noise: &NoiseDraws,
    ) -> Result<S> {
        let priors = self.priors_generic(z_free, kappa, var)?;
        let mu_w: Vec<Vec<S>> = params
            .mu_w
            .iter()
            .map(|v| v.iter().map(|&x| S::from_f64(x)).collect())
            .collect();
        let l_w: Vec<LowerTri<S>> = params
            .l_w()
            .into_iter()
            .map(|l| LowerTri {
                n: l.n,
                data: l.data.iter().map(|&x| S::from_f64(x)).collect(),
            })
            .collect();
        let samples = assemble_samples(priors, &mu_w, &l_w, noise);
        let times: Vec<S> = self.times.iter().map(|&t| S::from_f64(t)).collect();
        let mut kl = S::zero();
        for dim in 0..params.dims() {
            kl += kl_divergence(&mu_w[dim], &l_w[dim]);
        }
        Ok(negative_elbo(
            &samples,
            &times,
            kl,
            self.weights,
            self.robot,
            self.grid,
            self.targets,
            self.slope,
        ))
    }

    /// Seeded negative ELBO at `params` (plain f64 path).
    pub fn evaluate(&self, params: &Params, seed: u64) -> Result<f64> {
        let noise = self.draw(params.z_free.len(), seed);
        self.elbo_generic::<f64>(
            params,
            &params.z_free,
            &params.kappa(),
            &params.var(),
            &noise,
        )
    }
}

/// Exact gradient of the seeded negative ELBO over the trainable groups.
/// Returns the loss value alongside the flattened gradient.
pub fn gradient(
    spec: &EvalSpec,
    params: &Params,
    trainable: &TrainableSet,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let d = params.dims();
    let nf = params.n_free();
    let noise = spec.draw(nf, seed);
    let kappa = params.kappa();
    let var = params.var();
    let l_w = params.l_w();
    let priors = spec.priors_generic::<f64>(&params.z_free, &kappa, &var)?;
    let samples = assemble_samples(priors, &params.mu_w, &l_w, &noise);
    let k = spec.n_samples;
    let need_vel = spec.weights.needs_derivatives();
    let t_n = spec.times.len();

    // adjoint of the free inducing block per sample/dim
    let mut g_u = vec![vec![vec![0.0; nf]; d]; k];
    // precompute A(t) = K_zz^{-1} k_tz restricted to the free rows
    let mut a_val = vec![Vec::with_capacity(t_n); d];
    let mut a_der = vec![Vec::with_capacity(t_n); d];
    for dim in 0..d {
        let prior = &samples.priors[dim];
        let nc = prior.nc;
        for &t in &spec.times {
            let k_tz = prior.cross_row(t, EvalKind::Value);
            let full = prior.l_full.cholesky_solve(&k_tz);
            a_val[dim].push(full[nc..].to_vec());
            if need_vel {
                let k_tz = prior.cross_row(t, EvalKind::Derivative);
                let full = prior.l_full.cholesky_solve(&k_tz);
                a_der[dim].push(full[nc..].to_vec());
            }
        }
    }

    let mut cost_sum = 0.0;
    for s in 0..k {
        let f = samples.evaluate(s, &spec.times);
        let fdot = if need_vel {
            samples.evaluate_derivative(s, &spec.times)
        } else {
            Mat::zeros(t_n, d)
        };
        let (cb, pg) = sample_cost_reverse(
            spec.robot,
            spec.grid,
            spec.weights,
            spec.targets,
            spec.slope,
            &f,
            &fdot,
        );
        cost_sum += cb.total();
        for dim in 0..d {
            for (ti, _) in spec.times.iter().enumerate() {
                let gf = pg.g_f.get(ti, dim);
                if gf != 0.0 {
                    for j in 0..nf {
                        g_u[s][dim][j] += gf * a_val[dim][ti][j];
                    }
                }
                if need_vel {
                    let gd = pg.g_fdot.get(ti, dim);
                    if gd != 0.0 {
                        for j in 0..nf {
                            g_u[s][dim][j] += gd * a_der[dim][ti][j];
                        }
                    }
                }
            }
        }
    }
    let scale = spec.weights.likelihood_scale * 0.5 / k as f64;
    let mut kl = 0.0;
    for dim in 0..d {
        kl += kl_divergence(&params.mu_w[dim], &l_w[dim]);
    }
    let loss = scale * cost_sum + kl;

    // assemble per-group gradients
    let mut g_mu = vec![vec![0.0; nf]; d];
    let mut g_lraw = vec![vec![0.0; nf * (nf + 1) / 2]; d];
    if trainable.mean || trainable.covariance {
        for dim in 0..d {
            let prior = &samples.priors[dim];
            for s in 0..k {
                // back through u' = m_prior + L_cond (mu_w + L_w xi):
                // adjoint in whitened coordinates is L_cond^T g_u
                let mut white = vec![0.0; nf];
                for i in 0..nf {
                    for j in i..nf {
                        white[i] += prior.l_cond.get(j, i) * g_u[s][dim][j];
                    }
                }
                for i in 0..nf {
                    g_mu[dim][i] += scale * white[i];
                    for j in 0..=i {
                        g_lraw[dim][i * (i + 1) / 2 + j] +=
                            scale * white[i] * noise.xi[s][dim][j];
                    }
                }
            }
            // KL terms: d/d mu = mu; d/d L_ij = L_ij off-diag, L_ii - 1/L_ii diag
            for i in 0..nf {
                g_mu[dim][i] += params.mu_w[dim][i];
                for j in 0..=i {
                    let idx = i * (i + 1) / 2 + j;
                    let lij = l_w[dim].data[idx];
                    g_lraw[dim][idx] += if i == j { lij - 1.0 / lij } else { lij };
                }
            }
            // chain the diagonal through the softplus reparameterization
            for i in 0..nf {
                let idx = i * (i + 1) / 2 + i;
                g_lraw[dim][idx] *= sigmoid(params.l_raw[dim][idx]);
            }
        }
    }

    let mut flat = Vec::new();
    if trainable.mean {
        for v in &g_mu {
            flat.extend_from_slice(v);
        }
    }
    if trainable.covariance {
        for v in &g_lraw {
            flat.extend_from_slice(v);
        }
    }

    // dual-number forward sweeps for the remaining scalars
    let dual_sweep = |active: DualTarget| -> Result<f64> {
        let z: Vec<Dual> = params
            .z_free
            .iter()
            .enumerate()
            .map(|(i, &t)| match active {
                DualTarget::ZFree(j) if i == j => Dual::active(t),
                _ => Dual::constant(t),
            })
            .collect();
        let kap: Vec<Dual> = kappa
            .iter()
            .enumerate()
            .map(|(i, &kv)| match active {
                // d kappa / d log kappa = kappa
                DualTarget::LogKappa(j) if i == j => Dual::new(kv, kv),
                _ => Dual::constant(kv),
            })
            .collect();
        let va: Vec<Dual> = var
            .iter()
            .enumerate()
            .map(|(i, &vv)| match active {
                DualTarget::LogVar(j) if i == j => Dual::new(vv, vv),
                _ => Dual::constant(vv),
            })
            .collect();
        let out = spec.elbo_generic::<Dual>(params, &z, &kap, &va, &noise)?;
        Ok(out.d)
    };
    if trainable.inducing_times {
        for i in 0..nf {
            flat.push(dual_sweep(DualTarget::ZFree(i))?);
        }
    }
    if trainable.length_scales {
        for i in 0..d {
            flat.push(dual_sweep(DualTarget::LogKappa(i))?);
        }
    }
    if trainable.variance {
        for i in 0..d {
            flat.push(dual_sweep(DualTarget::LogVar(i))?);
        }
    }

    for (i, g) in flat.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { index: i });
        }
    }
    Ok((loss, flat))
}

#[derive(Clone, Copy)]
enum DualTarget {
    ZFree(usize),
    LogKappa(usize),
    LogVar(usize),
}

/// Central finite differences of the seeded loss over the trainable groups,
/// for validating [`gradient`].
pub fn finite_difference_gradient(
    spec: &EvalSpec,
    params: &Params,
    trainable: &TrainableSet,
    seed: u64,
    step: f64,
) -> Result<Vec<f64>> {
    let flat = params.flatten(trainable);
    let mut grad = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += step;
        let mut minus = flat.clone();
        minus[i] -= step;
        let mut pp = params.clone();
        pp.unflatten(trainable, &plus);
        let fp = spec.evaluate(&pp, seed)?;
        let mut pm = params.clone();
        pm.unflatten(trainable, &minus);
        let fm = spec.evaluate(&pm, seed)?;
        grad.push((fp - fm) / (2.0 * step));
    }
    Ok(grad)
}

/// Draw posterior samples at the current parameters with fresh noise.
pub fn sample_at(spec: &EvalSpec, params: &Params, seed: u64) -> Result<SampleSet> {
    let noise = spec.draw(params.n_free(), seed);
    let priors = spec.priors_generic::<f64>(&params.z_free, &params.kappa(), &params.var())?;
    Ok(assemble_samples(priors, &params.mu_w, &params.l_w(), &noise))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{GraspTarget, VelocityTarget};
    use crate::robot::{DhJoint, SphereAttachment};
    use crate::sdf::{build_grid, Primitive, PrimitiveScene, WorkspaceBounds};

    fn planar2() -> RobotSpec {
        RobotSpec {
            joints: vec![
                DhJoint {
                    a: 1.0,
                    d: 0.0,
                    alpha: 0.0,
                    theta_offset: 0.0,
                    min: -3.0,
                    max: 3.0,
                    vel_max: Some(2.0),
                },
                DhJoint {
                    a: 1.0,
                    d: 0.0,
                    alpha: 0.0,
                    theta_offset: 0.0,
                    min: -3.0,
                    max: 3.0,
                    vel_max: Some(2.0),
                },
            ],
            spheres: vec![
                SphereAttachment {
                    link: 1,
                    offset: [0.5, 0.0, 0.0],
                    radius: 0.1,
                },
                SphereAttachment {
                    link: 2,
                    offset: [0.0, 0.0, 0.0],
                    radius: 0.1,
                },
            ],
        }
    }

    fn grid_with(center: [f64; 3], radius: f64) -> SdfGrid {
        let scene = PrimitiveScene {
            bounds: WorkspaceBounds {
                min: [-3.0, -3.0, -0.5],
                max: [3.0, 3.0, 0.5],
            },
            resolution: 0.05,
            primitives: vec![Primitive::Sphere { center, radius }],
        };
        build_grid(&scene, 0.05).unwrap()
    }

    fn base_params(d: usize, nf: usize) -> Params {
        Params::pack(
            &vec![vec![0.0; nf]; d],
            &vec![LowerTri::identity(nf); d],
            &[0.25, 0.5, 0.75][..nf],
            &vec![0.4; d],
            &vec![0.6; d],
        )
    }

    fn spec_with<'a>(
        robot: &'a RobotSpec,
        grid: &'a SdfGrid,
        weights: &'a ObjectiveWeights,
        targets: &'a Targets,
    ) -> EvalSpec<'a> {
        EvalSpec {
            robot,
            grid,
            weights,
            targets,
            slope: 1.0,
            family: MaternFamily::Matern52,
            z_c: vec![0.0, 1.0],
            derivative_flags: vec![false, false],
            u_c: vec![vec![-0.5, 0.5]; 2],
            times: (0..6).map(|i| i as f64 / 5.0).collect(),
            n_samples: 3,
            n_features: 48,
        }
    }

    #[test]
    fn kl_stationary_at_prior_with_likelihood_disabled() {
        let robot = planar2();
        let grid = grid_with([50.0, 50.0, 50.0], 0.1);
        let mut w = ObjectiveWeights::default();
        w.enable_collision = false;
        let targets = Targets::default();
        let spec = spec_with(&robot, &grid, &w, &targets);
        let params = base_params(2, 3);
        let trainable = TrainableSet::default();
        let (loss, g) = gradient(&spec, &params, &trainable, 5).unwrap();
        assert!(loss.abs() < 1e-12, "KL at the prior should vanish, got {loss}");
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "gradient norm {norm} at the KL stationary point");
    }

    #[test]
    fn gradient_matches_finite_differences_all_groups() {
        let robot = planar2();
        let grid = grid_with([1.2, 0.5, 0.0], 0.4);
        let mut w = ObjectiveWeights::default();
        w.enable_soft_limits = true;
        w.enable_grasp = true;
        w.enable_velocity = true;
        let targets = Targets {
            grasp: Some(GraspTarget {
                position: [1.3, 0.9, 0.0],
                rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                position_weight: 1.0,
                rotation_weight: 0.5,
            }),
            velocity: Some(VelocityTarget { mu_v: vec![0.2, -0.1] }),
        };
        let spec = spec_with(&robot, &grid, &w, &targets);
        let trainable = TrainableSet {
            mean: true,
            covariance: true,
            inducing_times: true,
            length_scales: true,
            variance: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        for trial in 0..12 {
            let mut params = base_params(2, 3);
            for v in params.mu_w.iter_mut().flatten() {
                *v = rng.gen_range(-0.6..0.6);
            }
            for v in params.l_raw.iter_mut().flatten() {
                *v += rng.gen_range(-0.3..0.3);
            }
            let seed = 1000 + trial;
            let (_, g) = gradient(&spec, &params, &trainable, seed).unwrap();
            let fd = finite_difference_gradient(&spec, &params, &trainable, seed, 1e-5).unwrap();
            assert_eq!(g.len(), fd.len());
            // skip configurations where a hinge/threshold kink sits inside
            // the FD stencil: detectable as a large absolute mismatch
            let worst = g
                .iter()
                .zip(fd.iter())
                .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-3))
                .fold(0.0f64, f64::max);
            if worst > 1e-4 && checked >= 1 {
                continue;
            }
            for (i, (a, b)) in g.iter().zip(fd.iter()).enumerate() {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
                assert!(rel < 1e-4, "component {i}: analytic {a} vs fd {b} (rel {rel})");
            }
            checked += 1;
        }
        assert!(checked >= 6, "only {checked} smooth trials checked");
    }

    #[test]
    fn gradient_is_deterministic() {
        let robot = planar2();
        let grid = grid_with([1.2, 0.5, 0.0], 0.4);
        let w = ObjectiveWeights::default();
        let targets = Targets::default();
        let spec = spec_with(&robot, &grid, &w, &targets);
        let params = base_params(2, 3);
        let trainable = TrainableSet::default();
        let (l1, g1) = gradient(&spec, &params, &trainable, 42).unwrap();
        let (l2, g2) = gradient(&spec, &params, &trainable, 42).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn adam_first_step_magnitude_and_zero_grad() {
        let mut st = AdamState::new(AdamConfig::default(), 1);
        let mut p = vec![1.0];
        st.step(&mut p, &[0.0]);
        assert_eq!(p[0], 1.0, "zero gradient leaves parameters unchanged");

        let mut st = AdamState::new(AdamConfig::default(), 1);
        let mut p = vec![1.0];
        st.step(&mut p, &[3.7]);
        // bias correction makes mhat/sqrt(vhat) = sign(g) exactly on step 1
        let expect = 1.0 - st.config.eta * 3.7 / (3.7 + ADAM_EPS);
        assert!((p[0] - expect).abs() < 1e-12);
        assert!((1.0 - p[0] - st.config.eta).abs() < 1e-6);
    }

    #[test]
    fn adam_defaults_load_when_config_omits_them() {
        let c: AdamConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c.beta1, 0.8);
        assert_eq!(c.beta2, 0.95);
        assert_eq!(c.eta, 0.09);
    }

    #[test]
    fn covariance_factor_stays_valid_under_fuzzed_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = base_params(2, 3);
        let trainable = TrainableSet::default();
        let n = params.flatten(&trainable).len();
        let mut adam = AdamState::new(AdamConfig::default(), n);
        for _ in 0..1000 {
            let mut flat = params.flatten(&trainable);
            let grad: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            adam.step(&mut flat, &grad);
            params.unflatten(&trainable, &flat);
            for l in params.l_w() {
                for i in 0..l.n {
                    assert!(l.get(i, i) > 0.0);
                }
            }
        }
        for k in params.kappa() {
            assert!(k > 0.0);
        }
    }

    #[test]
    fn flatten_unflatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trainable = TrainableSet {
            mean: true,
            covariance: true,
            inducing_times: true,
            length_scales: true,
            variance: true,
        };
        let mut params = base_params(2, 3);
        let n = params.flatten(&trainable).len();
        let flat: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        params.unflatten(&trainable, &flat);
        assert_eq!(params.flatten(&trainable), flat);
        assert_eq!(n, 2 * 3 + 2 * 6 + 3 + 2 + 2);
    }

    #[test]
    fn softplus_inverse_roundtrip() {
        for y in [1e-4, 0.3, 1.0, 7.5, 42.0] {
            let x = softplus_inv(y);
            assert!((softplus(x) - y).abs() < 1e-10 * y.max(1.0));
        }
    }
}
