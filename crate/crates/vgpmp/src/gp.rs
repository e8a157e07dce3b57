//! Sparse variational posterior over trajectories: partitioned inducing
//! variables, conditioned prior, whitened KL divergence, analytic posterior
//! moments, and pathwise Monte Carlo sampling via random Fourier features.
//!
//! Each joint dimension is an independent GP. The variational family is a
//! free-form Gaussian over the unconstrained inducing block `u'`, stored in
//! whitened coordinates relative to the Cholesky factor of the conditioned
//! prior `p(u' | u_c)`. The constrained block `u_c` (start/goal values and
//! optional zero endpoint velocities) is degenerate and never factorized.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{add_jitter, cov, gram_generic, EvalKind, KernelSpec, MaternFamily};
use crate::linalg::{dot, Mat};
use crate::scalar::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InducingSet {
    /// Times of the constrained inducing points (start/goal anchors).
    pub z_c: Vec<f64>,
    /// Times of the learned inducing points.
    pub z_free: Vec<f64>,
    /// Per-constrained-point marker: also pin the time derivative there
    /// (zero-velocity inducing variables).
    pub derivative_flags: Vec<bool>,
}

impl InducingSet {
    pub fn validate(&self) -> Result<()> {
        if self.derivative_flags.len() != self.z_c.len() {
            return Err(Error::InvalidSpec(
                "derivative_flags must align with z_c".into(),
            ));
        }
        if self.z_free.is_empty() {
            return Err(Error::InvalidSpec("need at least one free inducing point".into()));
        }
        for &t in self.z_c.iter().chain(self.z_free.iter()) {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidSpec(format!("inducing time {t} outside [0,1]")));
            }
        }
        for &zc in &self.z_c {
            if self.z_free.iter().any(|&zf| zf == zc) {
                return Err(Error::InvalidSpec(
                    "free and constrained inducing times must be disjoint".into(),
                ));
            }
        }
        Ok(())
    }

    /// Number of constrained rows (values plus flagged derivatives).
    pub fn n_constrained(&self) -> usize {
        self.z_c.len() + self.derivative_flags.iter().filter(|&&f| f).count()
    }

    pub fn n_free(&self) -> usize {
        self.z_free.len()
    }

    /// Full row layout: constrained values, constrained derivatives, then
    /// free values. All Gram matrices share this ordering.
    pub fn rows(&self) -> Vec<(f64, EvalKind)> {
        let mut rows: Vec<(f64, EvalKind)> =
            self.z_c.iter().map(|&t| (t, EvalKind::Value)).collect();
        for (&t, &flag) in self.z_c.iter().zip(self.derivative_flags.iter()) {
            if flag {
                rows.push((t, EvalKind::Derivative));
            }
        }
        rows.extend(self.z_free.iter().map(|&t| (t, EvalKind::Value)));
        rows
    }

    /// Constrained inducing values for one dimension: given values at `z_c`
    /// plus zeros for each flagged derivative row.
    pub fn constrained_values(&self, values_at_zc: &[f64]) -> Vec<f64> {
        let mut u_c = values_at_zc.to_vec();
        for &flag in &self.derivative_flags {
            if flag {
                u_c.push(0.0);
            }
        }
        u_c
    }
}

/// Packed lower-triangular matrix with strictly positive diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerTri<S = f64> {
    pub n: usize,
    /// Row-major packed storage, `n(n+1)/2` entries.
    pub data: Vec<S>,
}

impl<S: Real> LowerTri<S> {
    pub fn identity(n: usize) -> Self {
        let mut lt = LowerTri {
            n,
            data: vec![S::zero(); n * (n + 1) / 2],
        };
        for i in 0..n {
            let idx = i * (i + 1) / 2 + i;
            lt.data[idx] = S::one();
        }
        lt
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        debug_assert!(j <= i);
        self.data[i * (i + 1) / 2 + j]
    }

    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        let mut y = vec![S::zero(); self.n];
        for i in 0..self.n {
            let mut acc = S::zero();
            for j in 0..=i {
                acc += self.get(i, j) * x[j];
            }
            y[i] = acc;
        }
        y
    }

    pub fn to_mat(&self) -> Mat<S> {
        Mat::from_fn(self.n, self.n, |i, j| {
            if j <= i {
                self.get(i, j)
            } else {
                S::zero()
            }
        })
    }
}

/// Whitened variational state for all joint dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariationalState {
    pub inducing: InducingSet,
    /// Constrained inducing values per dimension (`[d][nc]`, derivative
    /// rows included as zeros).
    pub u_c: Vec<Vec<f64>>,
    /// Whitened mean of `q(u')` per dimension (`[d][nf]`).
    pub mu_w: Vec<Vec<f64>>,
    /// Whitened covariance Cholesky factor per dimension.
    pub l_w: Vec<LowerTri>,
}

impl VariationalState {
    pub fn dims(&self) -> usize {
        self.u_c.len()
    }

    /// State with `q` equal to the conditioned prior (whitened mean zero,
    /// whitened covariance identity).
    pub fn at_prior(inducing: InducingSet, u_c: Vec<Vec<f64>>) -> Self {
        let nf = inducing.n_free();
        let d = u_c.len();
        VariationalState {
            inducing,
            u_c,
            mu_w: vec![vec![0.0; nf]; d],
            l_w: vec![LowerTri::identity(nf); d],
        }
    }
}

/// Per-dimension conditioned-prior factorization, cached for KL, whitening,
/// sampling, and posterior moments.
#[derive(Debug, Clone)]
pub struct DimPrior<S = f64> {
    pub family: MaternFamily,
    pub kappa: S,
    pub var: S,
    pub rows: Vec<(S, EvalKind)>,
    pub nc: usize,
    /// Cholesky of the full (jittered) `K_zz`.
    pub l_full: Mat<S>,
    /// Cholesky of the conditional covariance of the free block.
    pub l_cond: Mat<S>,
    /// Prior mean of `u'` given `u_c`.
    pub m_prior: Vec<S>,
    pub u_c: Vec<S>,
}

impl<S: Real> DimPrior<S> {
    pub fn n_free(&self) -> usize {
        self.rows.len() - self.nc
    }

    /// Covariance row between an evaluation at `t` and all inducing rows.
    pub fn cross_row(&self, t: S, kind: EvalKind) -> Vec<S> {
        self.rows
            .iter()
            .map(|&(zt, zk)| cov(self.family, self.kappa, self.var, t - zt, kind, zk))
            .collect()
    }

    /// Mean of `q(u')` in unwhitened coordinates.
    pub fn free_mean(&self, mu_w: &[S]) -> Vec<S> {
        let shift = self.l_cond.matvec(mu_w);
        self.m_prior
            .iter()
            .zip(shift.iter())
            .map(|(&m, &s)| m + s)
            .collect()
    }

    /// One draw of the free block: `m_prior + L_cond (mu_w + L_w xi)`.
    pub fn draw_free(&self, mu_w: &[S], l_w: &LowerTri<S>, xi: &[S]) -> Vec<S> {
        let mut w = l_w.matvec(xi);
        for (wi, m) in w.iter_mut().zip(mu_w.iter()) {
            *wi += *m;
        }
        let shift = self.l_cond.matvec(&w);
        self.m_prior
            .iter()
            .zip(shift.iter())
            .map(|(&m, &s)| m + s)
            .collect()
    }
}

/// Factorize the conditioned prior `p(u' | u_c)` for one dimension.
pub fn conditioned_prior<S: Real>(
    family: MaternFamily,
    kappa: S,
    var: S,
    rows: Vec<(S, EvalKind)>,
    nc: usize,
    u_c: Vec<S>,
) -> Result<DimPrior<S>> {
    debug_assert_eq!(u_c.len(), nc);
    let m = rows.len();
    let nf = m - nc;
    let mut k_full = gram_generic(family, kappa, var, &rows, &rows);
    add_jitter(&mut k_full);
    let l_full = k_full.cholesky()?;

    // constrained block
    let (m_prior, l_cond) = if nc == 0 {
        let k_ff = Mat::from_fn(nf, nf, |i, j| k_full.get(i, j));
        (vec![S::zero(); nf], k_ff.cholesky()?)
    } else {
        let k_cc = Mat::from_fn(nc, nc, |i, j| k_full.get(i, j));
        let l_cc = k_cc.cholesky()?;
        // B = L_cc^{-1} K_cf, column by column
        let mut b_cols: Vec<Vec<S>> = Vec::with_capacity(nf);
        for j in 0..nf {
            let col: Vec<S> = (0..nc).map(|i| k_full.get(i, nc + j)).collect();
            b_cols.push(l_cc.solve_lower(&col));
        }
        let alpha = l_cc.cholesky_solve(&u_c);
        // K_fc K_cc^{-1} u_c
        let m_prior: Vec<S> = (0..nf)
            .map(|j| {
                let mut acc = S::zero();
                for i in 0..nc {
                    acc += k_full.get(i, nc + j) * alpha[i];
                }
                acc
            })
            .collect();
        let s_cond = Mat::from_fn(nf, nf, |i, j| {
            k_full.get(nc + i, nc + j) - dot(&b_cols[i], &b_cols[j])
        });
        (m_prior, s_cond.cholesky()?)
    };

    Ok(DimPrior {
        family,
        kappa,
        var,
        rows,
        nc,
        l_full,
        l_cond,
        m_prior,
        u_c,
    })
}

/// Build per-dimension conditioned priors from a state and kernel.
pub fn conditioned_priors(
    state: &VariationalState,
    kernel: &KernelSpec,
) -> Result<Vec<DimPrior>> {
    state.inducing.validate()?;
    let rows = state.inducing.rows();
    let needs_deriv = rows.iter().any(|&(_, k)| k == EvalKind::Derivative);
    if needs_deriv && !kernel.family.supports_derivatives() {
        return Err(Error::DerivativeUnsupported);
    }
    let nc = state.inducing.n_constrained();
    (0..state.dims())
        .map(|d| {
            conditioned_prior(
                kernel.family,
                kernel.length_scale[d],
                kernel.variance[d],
                rows.clone(),
                nc,
                state.u_c[d].clone(),
            )
        })
        .collect()
}

/// Closed-form Gaussian KL in whitened coordinates:
/// `1/2 (||mu_w||^2 + tr(Sigma_w) - log|Sigma_w| - nf)`.
pub fn kl_divergence<S: Real>(mu_w: &[S], l_w: &LowerTri<S>) -> S {
    let half = S::from_f64(0.5);
    let mut mean_sq = S::zero();
    for &m in mu_w {
        mean_sq += m * m;
    }
    let mut trace = S::zero();
    for &v in &l_w.data {
        trace += v * v;
    }
    let mut logdet = S::zero();
    for i in 0..l_w.n {
        logdet += l_w.get(i, i).ln();
    }
    half * (mean_sq + trace - S::from_f64(2.0) * logdet - S::from_f64(l_w.n as f64))
}

/// Total KL across dimensions.
pub fn kl_divergence_total(state: &VariationalState) -> f64 {
    (0..state.dims())
        .map(|d| kl_divergence(&state.mu_w[d], &state.l_w[d]))
        .sum()
}

#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    pub times: Vec<f64>,
    /// `T x d` posterior mean in unconstrained space.
    pub mean: Mat<f64>,
    /// `T x d` marginal variance.
    pub marginal_var: Mat<f64>,
}

/// Analytic mean/variance of the posterior marginalized over `q(u)`.
pub fn posterior_moments(
    state: &VariationalState,
    kernel: &KernelSpec,
    times: &[f64],
) -> Result<PosteriorMoments> {
    let priors = conditioned_priors(state, kernel)?;
    Ok(posterior_moments_from_priors(state, &priors, times))
}

pub fn posterior_moments_from_priors(
    state: &VariationalState,
    priors: &[DimPrior],
    times: &[f64],
) -> PosteriorMoments {
    let d = state.dims();
    let t_n = times.len();
    let mut mean = Mat::zeros(t_n, d);
    let mut var = Mat::zeros(t_n, d);
    for (dim, prior) in priors.iter().enumerate() {
        let nf = prior.n_free();
        let nc = prior.nc;
        let mu_free = prior.free_mean(&state.mu_w[dim]);
        let mut mu_u = prior.u_c.clone();
        mu_u.extend_from_slice(&mu_free);
        let alpha = prior.l_full.cholesky_solve(&mu_u);
        // S_free = L_cond L_w (free-block covariance factor)
        let lw = state.l_w[dim].to_mat();
        let nfree = nf;
        let mut s_factor = Mat::zeros(nfree, nfree);
        for i in 0..nfree {
            for j in 0..nfree {
                let mut acc = 0.0;
                for k in j..nfree {
                    acc += prior.l_cond.get(i, k) * lw.get(k, j);
                }
                s_factor.set(i, j, acc);
            }
        }
        for (ti, &t) in times.iter().enumerate() {
            let k_tz = prior.cross_row(t, EvalKind::Value);
            mean.set(ti, dim, dot(&k_tz, &alpha));
            let b = prior.l_full.solve_lower(&k_tz);
            let a_t = prior.l_full.solve_lower_t(&b);
            let mut v = prior.var - dot(&b, &b);
            // + A_free^T Sigma_free A_free
            let a_free = &a_t[nc..];
            for j in 0..nfree {
                let mut col = 0.0;
                for i in 0..nfree {
                    col += s_factor.get(i, j) * a_free[i];
                }
                v += col * col;
            }
            var.set(ti, dim, v.max(0.0));
        }
    }
    PosteriorMoments {
        times: times.to_vec(),
        mean,
        marginal_var: var,
    }
}

/// Random-feature basis for one dimension: `f(t) = scale * sum_i w_i
/// cos(omega_i t + phase_i)` approximates a draw from the stationary prior.
#[derive(Debug, Clone)]
pub struct FeatureBasis<S = f64> {
    pub omega: Vec<S>,
    pub phase: Vec<f64>,
    pub scale: S,
}

impl<S: Real> FeatureBasis<S> {
    pub fn eval(&self, w: &[f64], t: S) -> S {
        let mut acc = S::zero();
        for ((&o, &p), &wi) in self.omega.iter().zip(self.phase.iter()).zip(w.iter()) {
            acc += S::from_f64(wi) * (o * t + S::from_f64(p)).cos();
        }
        self.scale * acc
    }

    pub fn eval_derivative(&self, w: &[f64], t: S) -> S {
        let mut acc = S::zero();
        for ((&o, &p), &wi) in self.omega.iter().zip(self.phase.iter()).zip(w.iter()) {
            acc -= S::from_f64(wi) * o * (o * t + S::from_f64(p)).sin();
        }
        self.scale * acc
    }

    fn eval_row(&self, w: &[f64], row: (S, EvalKind)) -> S {
        match row.1 {
            EvalKind::Value => self.eval(w, row.0),
            EvalKind::Derivative => self.eval_derivative(w, row.0),
        }
    }
}

/// Draw the raw frequency samples for a family: Student-t with `2 nu`
/// degrees of freedom scaled by `1/kappa` (Cauchy for Matern-1/2). The
/// Matern correlation is the characteristic function of that distribution,
/// so `E[cos(omega r)]` reproduces `k(r)/var` exactly.
pub fn sample_frequencies(
    family: MaternFamily,
    kappa: f64,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let dof = family.spectral_dof();
    let dist = StudentT::new(dof).expect("valid dof");
    (0..n).map(|_| dist.sample(rng) / kappa).collect()
}

/// One pathwise posterior function sample for all dimensions.
#[derive(Debug, Clone)]
pub struct PathSample<S = f64> {
    /// Per-dimension feature weights of the prior draw.
    pub feature_weights: Vec<Vec<f64>>,
    /// Per-dimension standard-normal draw behind `u'` (reparameterization).
    pub xi: Vec<Vec<f64>>,
    /// Per-dimension pathwise correction `K_zz^{-1} (u - f_prior(z))`.
    pub correction: Vec<Vec<S>>,
    /// Per-dimension sampled inducing values (constrained block included).
    pub u_draw: Vec<Vec<S>>,
}

/// A batch of pathwise samples sharing one feature basis per dimension.
pub struct SampleSet<S = f64> {
    pub priors: Vec<DimPrior<S>>,
    pub bases: Vec<FeatureBasis<S>>,
    pub samples: Vec<PathSample<S>>,
}

impl<S: Real> SampleSet<S> {
    pub fn dims(&self) -> usize {
        self.priors.len()
    }

    /// Evaluate sample `s` at the given times: `T x d` unconstrained values.
    pub fn evaluate(&self, s: usize, times: &[S]) -> Mat<S> {
        self.evaluate_kind(s, times, EvalKind::Value)
    }

    /// Evaluate the time derivative of sample `s`.
    pub fn evaluate_derivative(&self, s: usize, times: &[S]) -> Mat<S> {
        self.evaluate_kind(s, times, EvalKind::Derivative)
    }

    fn evaluate_kind(&self, s: usize, times: &[S], kind: EvalKind) -> Mat<S> {
        let sample = &self.samples[s];
        let d = self.dims();
        let mut out = Mat::zeros(times.len(), d);
        for dim in 0..d {
            let prior = &self.priors[dim];
            let basis = &self.bases[dim];
            let w = &sample.feature_weights[dim];
            let v = &sample.correction[dim];
            for (ti, &t) in times.iter().enumerate() {
                let prior_part = match kind {
                    EvalKind::Value => basis.eval(w, t),
                    EvalKind::Derivative => basis.eval_derivative(w, t),
                };
                let k_tz = prior.cross_row(t, kind);
                out.set(ti, dim, prior_part + dot(&k_tz, v));
            }
        }
        out
    }
}

/// The raw random draws behind a sample batch, separated from the
/// deterministic assembly so the same noise can be replayed through a
/// dual-number pass when differentiating inducing times or hyperparameters.
#[derive(Debug, Clone)]
pub struct NoiseDraws {
    /// Unscaled spectral draws per dimension (`omega = raw / kappa`).
    pub raw_omega: Vec<Vec<f64>>,
    pub phase: Vec<Vec<f64>>,
    /// Feature weights, `[sample][dim][feature]`.
    pub w: Vec<Vec<Vec<f64>>>,
    /// Whitened inducing noise, `[sample][dim][free]`.
    pub xi: Vec<Vec<Vec<f64>>>,
}

/// Draw the randomness for `count` samples over `d` dimensions.
pub fn draw_noise(
    family: MaternFamily,
    d: usize,
    nf: usize,
    count: usize,
    n_features: usize,
    rng: &mut impl Rng,
) -> NoiseDraws {
    let dist = StudentT::new(family.spectral_dof()).expect("valid dof");
    let mut raw_omega = Vec::with_capacity(d);
    let mut phase = Vec::with_capacity(d);
    for _ in 0..d {
        raw_omega.push((0..n_features).map(|_| dist.sample(rng)).collect());
        phase.push(
            (0..n_features)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect(),
        );
    }
    let mut w = Vec::with_capacity(count);
    let mut xi = Vec::with_capacity(count);
    for _ in 0..count {
        let mut ws = Vec::with_capacity(d);
        let mut xs = Vec::with_capacity(d);
        for _ in 0..d {
            ws.push((0..n_features).map(|_| StandardNormal.sample(rng)).collect());
            xs.push((0..nf).map(|_| StandardNormal.sample(rng)).collect());
        }
        w.push(ws);
        xi.push(xs);
    }
    NoiseDraws {
        raw_omega,
        phase,
        w,
        xi,
    }
}

/// Deterministically assemble pathwise samples from fixed noise. Generic so
/// the whole pipeline can run in dual numbers for exact forward-mode
/// sensitivities.
pub fn assemble_samples<S: Real>(
    priors: Vec<DimPrior<S>>,
    mu_w: &[Vec<S>],
    l_w: &[LowerTri<S>],
    noise: &NoiseDraws,
) -> SampleSet<S> {
    let d = priors.len();
    let mut bases = Vec::with_capacity(d);
    for (dim, prior) in priors.iter().enumerate() {
        let omega: Vec<S> = noise.raw_omega[dim]
            .iter()
            .map(|&r| S::from_f64(r) / prior.kappa)
            .collect();
        let n = noise.raw_omega[dim].len() as f64;
        let scale = (S::from_f64(2.0 / n) * prior.var).sqrt();
        bases.push(FeatureBasis {
            omega,
            phase: noise.phase[dim].clone(),
            scale,
        });
    }
    let count = noise.w.len();
    let mut samples = Vec::with_capacity(count);
    for s in 0..count {
        let mut feature_weights = Vec::with_capacity(d);
        let mut xis = Vec::with_capacity(d);
        let mut correction = Vec::with_capacity(d);
        let mut u_draws = Vec::with_capacity(d);
        for (dim, prior) in priors.iter().enumerate() {
            let w = &noise.w[s][dim];
            let xi_f = &noise.xi[s][dim];
            let xi: Vec<S> = xi_f.iter().map(|&x| S::from_f64(x)).collect();
            let u_free = prior.draw_free(&mu_w[dim], &l_w[dim], &xi);
            let mut u: Vec<S> = prior.u_c.clone();
            u.extend_from_slice(&u_free);
            let resid: Vec<S> = prior
                .rows
                .iter()
                .zip(u.iter())
                .map(|(&row, &ui)| ui - bases[dim].eval_row(w, row))
                .collect();
            let v = prior.l_full.cholesky_solve(&resid);
            feature_weights.push(w.clone());
            xis.push(xi_f.clone());
            correction.push(v);
            u_draws.push(u);
        }
        samples.push(PathSample {
            feature_weights,
            xi: xis,
            correction,
            u_draw: u_draws,
        });
    }
    SampleSet {
        priors,
        bases,
        samples,
    }
}

/// Draw `count` pathwise posterior samples. Pure function of the seed.
pub fn draw_samples(
    state: &VariationalState,
    kernel: &KernelSpec,
    count: usize,
    rng_seed: u64,
    n_features: usize,
) -> Result<SampleSet> {
    assert!(n_features >= 1);
    let priors = conditioned_priors(state, kernel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    draw_samples_with_rng(state, priors, count, n_features, &mut rng)
}

pub fn draw_samples_with_rng(
    state: &VariationalState,
    priors: Vec<DimPrior>,
    count: usize,
    n_features: usize,
    rng: &mut impl Rng,
) -> Result<SampleSet> {
    let d = state.dims();
    let nf = state.inducing.n_free();
    let family = priors.first().map(|p| p.family).unwrap_or(MaternFamily::Matern52);
    let noise = draw_noise(family, d, nf, count, n_features, rng);
    Ok(assemble_samples(priors, &state.mu_w, &state.l_w, &noise))
}
