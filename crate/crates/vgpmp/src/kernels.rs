//! Stationary Matérn kernels with per-output-dimension hyperparameters and
//! analytic time-derivative cross-covariances.
//!
//! Each joint dimension carries its own `(length_scale, variance)` pair and
//! is modeled as an independent GP, so all Gram blocks here are scalar-output.
//! Derivative blocks are closed-form, not autodiffed, so that Gram assembly
//! is deterministic and cheap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternFamily {
    Matern12,
    Matern32,
    Matern52,
}

impl MaternFamily {
    /// Whether first-derivative (velocity) blocks exist for this family.
    pub fn supports_derivatives(self) -> bool {
        !matches!(self, MaternFamily::Matern12)
    }

    /// Degrees of freedom of the spectral (Student-t) frequency distribution.
    pub fn spectral_dof(self) -> f64 {
        match self {
            MaternFamily::Matern12 => 1.0,
            MaternFamily::Matern32 => 3.0,
            MaternFamily::Matern52 => 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    Value,
    Derivative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: MaternFamily,
    /// One characteristic time scale per joint dimension.
    pub length_scale: Vec<f64>,
    /// One output variance (squared joint units) per joint dimension.
    pub variance: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: MaternFamily, length_scale: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if length_scale.len() != variance.len() || length_scale.is_empty() {
            return Err(Error::InvalidSpec(
                "length_scale and variance must be nonempty and of equal length".into(),
            ));
        }
        if length_scale.iter().any(|&l| !(l > 0.0)) || variance.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidSpec(
                "length scales and variances must be positive".into(),
            ));
        }
        Ok(KernelSpec {
            family,
            length_scale,
            variance,
        })
    }

    pub fn dims(&self) -> usize {
        self.length_scale.len()
    }

    /// Covariance between `f(t)` and `f(t2)` for one output dimension.
    pub fn eval(&self, dim: usize, t: f64, t2: f64) -> f64 {
        cov(
            self.family,
            self.length_scale[dim],
            self.variance[dim],
            t - t2,
            EvalKind::Value,
            EvalKind::Value,
        )
    }

    /// Dense Gram block over mixed value/derivative evaluations.
    pub fn gram(
        &self,
        dim: usize,
        rows: &[(f64, EvalKind)],
        cols: &[(f64, EvalKind)],
    ) -> Result<Mat<f64>> {
        let wants_deriv = rows
            .iter()
            .chain(cols.iter())
            .any(|&(_, k)| k == EvalKind::Derivative);
        if wants_deriv && !self.family.supports_derivatives() {
            return Err(Error::DerivativeUnsupported);
        }
        Ok(gram_generic(
            self.family,
            self.length_scale[dim],
            self.variance[dim],
            rows,
            cols,
        ))
    }
}

/// Uniform-kind Gram block as exposed to callers that want the f/df marking.
#[derive(Debug, Clone)]
pub struct GramBlock {
    pub values: Mat<f64>,
    pub row_kind: EvalKind,
    pub col_kind: EvalKind,
}

impl KernelSpec {
    pub fn gram_block(
        &self,
        dim: usize,
        row_times: &[f64],
        row_kind: EvalKind,
        col_times: &[f64],
        col_kind: EvalKind,
    ) -> Result<GramBlock> {
        let rows: Vec<_> = row_times.iter().map(|&t| (t, row_kind)).collect();
        let cols: Vec<_> = col_times.iter().map(|&t| (t, col_kind)).collect();
        Ok(GramBlock {
            values: self.gram(dim, &rows, &cols)?,
            row_kind,
            col_kind,
        })
    }
}

pub fn gram_generic<S: Real>(
    family: MaternFamily,
    kappa: S,
    var: S,
    rows: &[(S, EvalKind)],
    cols: &[(S, EvalKind)],
) -> Mat<S> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| {
        let (ti, ki) = rows[i];
        let (tj, kj) = cols[j];
        cov(family, kappa, var, ti - tj, ki, kj)
    })
}

/// Cross-covariance between (possibly differentiated) evaluations separated
/// by `tau = t_row - t_col`. Row derivatives differentiate in `t_row`.
pub fn cov<S: Real>(
    family: MaternFamily,
    kappa: S,
    var: S,
    tau: S,
    row_kind: EvalKind,
    col_kind: EvalKind,
) -> S {
    use EvalKind::*;
    match (row_kind, col_kind) {
        (Value, Value) => k_value(family, kappa, var, tau),
        (Derivative, Value) => k_prime(family, kappa, var, tau),
        (Value, Derivative) => -k_prime(family, kappa, var, tau),
        (Derivative, Derivative) => -k_second(family, kappa, var, tau),
    }
}

fn k_value<S: Real>(family: MaternFamily, kappa: S, var: S, tau: S) -> S {
    let s = tau.abs();
    match family {
        MaternFamily::Matern12 => var * (-s / kappa).exp(),
        MaternFamily::Matern32 => {
            let a = S::from_f64(3f64.sqrt()) / kappa;
            var * (S::one() + a * s) * (-a * s).exp()
        }
        MaternFamily::Matern52 => {
            let a = S::from_f64(5f64.sqrt()) / kappa;
            let third = S::from_f64(1.0 / 3.0);
            var * (S::one() + a * s + third * a * a * s * s) * (-a * s).exp()
        }
    }
}

/// d/dtau of the kernel; odd in tau, zero at tau = 0 for differentiable
/// families.
fn k_prime<S: Real>(family: MaternFamily, kappa: S, var: S, tau: S) -> S {
    let s = tau.abs();
    match family {
        MaternFamily::Matern12 => {
            // Not mean-square differentiable; callers gate on the family.
            unreachable!("Matern12 derivative requested")
        }
        MaternFamily::Matern32 => {
            let a = S::from_f64(3f64.sqrt()) / kappa;
            -var * a * a * tau * (-a * s).exp()
        }
        MaternFamily::Matern52 => {
            let a = S::from_f64(5f64.sqrt()) / kappa;
            let third = S::from_f64(1.0 / 3.0);
            -var * third * a * a * tau * (S::one() + a * s) * (-a * s).exp()
        }
    }
}

/// d^2/dtau^2 of the kernel.
fn k_second<S: Real>(family: MaternFamily, kappa: S, var: S, tau: S) -> S {
    let s = tau.abs();
    match family {
        MaternFamily::Matern12 => unreachable!("Matern12 derivative requested"),
        MaternFamily::Matern32 => {
            let a = S::from_f64(3f64.sqrt()) / kappa;
            var * a * a * (a * s - S::one()) * (-a * s).exp()
        }
        MaternFamily::Matern52 => {
            let a = S::from_f64(5f64.sqrt()) / kappa;
            let third = S::from_f64(1.0 / 3.0);
            -var * third * a * a * (S::one() + a * s - a * a * s * s) * (-a * s).exp()
        }
    }
}

/// Relative jitter applied to Gram diagonals before factorization.
pub const JITTER_REL: f64 = 1e-8;

/// Add `JITTER_REL * diag` to the diagonal of a square Gram matrix.
pub fn add_jitter<S: Real>(m: &mut Mat<S>) {
    let rel = S::from_f64(JITTER_REL);
    for i in 0..m.rows {
        let d = m.get(i, i);
        m.set(i, i, d + rel * d.abs());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn spec(family: MaternFamily, kappa: f64, var: f64) -> KernelSpec {
        KernelSpec::new(family, vec![kappa], vec![var]).unwrap()
    }

    #[test]
    fn zero_distance_returns_variance() {
        let k = spec(MaternFamily::Matern52, 3.0, 0.2);
        assert!((k.eval(0, 0.37, 0.37) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn matern12_closed_form() {
        // exp(-r/kappa) at r = 1, kappa = 1
        let k = spec(MaternFamily::Matern12, 1.0, 1.0);
        assert!((k.eval(0, 1.0, 0.0) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn stationarity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for family in [
            MaternFamily::Matern12,
            MaternFamily::Matern32,
            MaternFamily::Matern52,
        ] {
            let k = spec(family, rng.gen_range(0.1..3.0), rng.gen_range(0.1..2.0));
            for _ in 0..100 {
                let t = rng.gen_range(-5.0..5.0);
                let t2 = rng.gen_range(-5.0..5.0);
                assert!((k.eval(0, t, t2) - k.eval(0, t2, t)).abs() < 1e-14);
                // scale invariance in r/kappa
                let c = rng.gen_range(0.5..2.0);
                let ks = spec(family, c * k.length_scale[0], k.variance[0]);
                assert!((k.eval(0, t, t2) - ks.eval(0, c * t, c * t2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_matches_elementwise_eval() {
        let k = spec(MaternFamily::Matern32, 0.7, 1.3);
        let times = [0.0, 0.5, 1.0];
        let rows: Vec<_> = times.iter().map(|&t| (t, EvalKind::Value)).collect();
        let g = k.gram(0, &rows, &rows).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.get(i, j) - k.eval(0, times[i], times[j])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn matern12_derivative_block_rejected() {
        let k = spec(MaternFamily::Matern12, 1.0, 1.0);
        let rows = [(0.0, EvalKind::Derivative)];
        let cols = [(0.5, EvalKind::Value)];
        assert!(matches!(
            k.gram(0, &rows, &cols),
            Err(Error::DerivativeUnsupported)
        ));
    }

    #[test]
    fn derivative_value_vanishes_at_zero_lag() {
        for family in [MaternFamily::Matern32, MaternFamily::Matern52] {
            let k = spec(family, 0.8, 0.6);
            let g = k
                .gram(0, &[(0.4, EvalKind::Derivative)], &[(0.4, EvalKind::Value)])
                .unwrap();
            assert_eq!(g.get(0, 0), 0.0);
        }
    }

    fn fd_cross_cov(k: &KernelSpec, rk: EvalKind, ck: EvalKind, t: f64, t2: f64) -> f64 {
        // central finite differences of eval in the differentiated arguments
        let h = 1e-5 * k.length_scale[0];
        match (rk, ck) {
            (EvalKind::Value, EvalKind::Value) => k.eval(0, t, t2),
            (EvalKind::Derivative, EvalKind::Value) => {
                (k.eval(0, t + h, t2) - k.eval(0, t - h, t2)) / (2.0 * h)
            }
            (EvalKind::Value, EvalKind::Derivative) => {
                (k.eval(0, t, t2 + h) - k.eval(0, t, t2 - h)) / (2.0 * h)
            }
            (EvalKind::Derivative, EvalKind::Derivative) => {
                (k.eval(0, t + h, t2 + h) - k.eval(0, t + h, t2 - h) - k.eval(0, t - h, t2 + h)
                    + k.eval(0, t - h, t2 - h))
                    / (4.0 * h * h)
            }
        }
    }

    #[test]
    fn derivative_blocks_agree_with_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for family in [MaternFamily::Matern32, MaternFamily::Matern52] {
            let k = spec(family, rng.gen_range(0.3..2.0), rng.gen_range(0.2..2.0));
            for rk in [EvalKind::Value, EvalKind::Derivative] {
                for ck in [EvalKind::Value, EvalKind::Derivative] {
                    for _ in 0..40 {
                        let t = rng.gen_range(-2.0..2.0);
                        let t2 = rng.gen_range(-2.0..2.0);
                        if (t - t2).abs() < 1e-3 {
                            continue;
                        }
                        let analytic =
                            cov(family, k.length_scale[0], k.variance[0], t - t2, rk, ck);
                        let numeric = fd_cross_cov(&k, rk, ck, t, t2);
                        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                        assert!(
                            ((analytic - numeric) / denom).abs() < 1e-4,
                            "{family:?} {rk:?}/{ck:?}: {analytic} vs {numeric}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn matern52_second_derivative_at_zero_matches_finite_difference() {
        let k = spec(MaternFamily::Matern52, 1.3, 0.9);
        let analytic = cov(
            MaternFamily::Matern52,
            1.3,
            0.9,
            0.0,
            EvalKind::Derivative,
            EvalKind::Derivative,
        );
        let numeric = fd_cross_cov(&k, EvalKind::Derivative, EvalKind::Derivative, 0.7, 0.7);
        assert!(((analytic - numeric) / analytic).abs() < 1e-5);
    }

    #[test]
    fn random_value_grams_factor_after_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for family in [
            MaternFamily::Matern12,
            MaternFamily::Matern32,
            MaternFamily::Matern52,
        ] {
            for _ in 0..20 {
                let k = spec(family, rng.gen_range(0.05..5.0), rng.gen_range(0.01..5.0));
                let n = rng.gen_range(2..=32);
                let rows: Vec<_> = (0..n)
                    .map(|_| (rng.gen_range(0.0..1.0), EvalKind::Value))
                    .collect();
                let mut g = k.gram(0, &rows, &rows).unwrap();
                add_jitter(&mut g);
                assert!(g.cholesky().is_ok(), "{family:?} gram not PD after jitter");
            }
        }
    }
}
